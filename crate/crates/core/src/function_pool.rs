//! The pool of function signatures that seeds every later stage.
//!
//! The on-disk shape follows the function template used in the system prompt
//! (`category`, `tool_name`, `tool_description`, `api_name`, `api_description`,
//! `parameters`), extended with the free-form `tool_class` label and the
//! `response_info` description of outputs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm_client::{parse_first_line, prompts, LlmClient, PromptId};

/// Stable identifier of a function. API names are unique within a pool, so the
/// name doubles as the id everywhere (graph keys, FSP tokens, call names).
pub type FunctionId = String;

/// Domain labels from the classification prompt, in prompt order. `Finance`
/// appears twice in the prompt; it is kept twice here so the list matches it.
pub const CATEGORY_LABELS: [&str; 49] = [
    "Cybersecurity",
    "Artificial_Intelligence",
    "Commerce",
    "Advertising",
    "Payments",
    "News_Media",
    "Cryptography",
    "Devices",
    "Business",
    "eCommerce",
    "Logistics",
    "Finance",
    "Events",
    "Email",
    "Business_Software",
    "Music",
    "Database",
    "Translation",
    "Jobs",
    "Gaming",
    "Monitoring",
    "func_source_code",
    "Education",
    "Entertainment",
    "Visual_Recognition",
    "Sports",
    "SMS",
    "Media",
    "Search",
    "Finance",
    "Location",
    "Movies",
    "Transportation",
    "Text_Analysis",
    "Mapping",
    "Energy",
    "Customized",
    "Medical",
    "Storage",
    "Food",
    "Health",
    "Video_Images",
    "Science",
    "Communication",
    "Travel",
    "Social",
    "Data",
    "Reward",
    "Weather",
];

pub const MISC_CATEGORY: &str = "misc";
pub const DEFAULT_TOOL_CLASS: &str = "uncategorized";

pub fn is_known_category(label: &str) -> bool {
    label == MISC_CATEGORY || CATEGORY_LABELS.contains(&label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    #[serde(alias = "str")]
    String,
    #[serde(alias = "float", alias = "double")]
    Number,
    #[serde(alias = "int")]
    Integer,
    #[serde(alias = "bool")]
    Boolean,
    #[serde(alias = "list", alias = "tuple")]
    Array,
    #[serde(alias = "dict")]
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default)]
    pub description: String,
}

fn dict_type() -> String {
    "dict".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSchema {
    #[serde(rename = "type", default = "dict_type")]
    pub schema_type: String,
    #[serde(default)]
    pub properties: BTreeMap<String, ParamSpec>,
    #[serde(default)]
    pub required: Vec<String>,
    #[serde(default)]
    pub optional: Vec<String>,
}

impl ParameterSchema {
    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.properties.get(name)
    }

    pub fn is_declared(&self, name: &str) -> bool {
        self.required.iter().chain(&self.optional).any(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSignature {
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub tool_class: String,
    #[serde(default)]
    pub tool_name: String,
    #[serde(default)]
    pub tool_description: String,
    pub api_name: String,
    #[serde(default)]
    pub api_description: String,
    pub parameters: ParameterSchema,
    #[serde(default)]
    pub response_info: String,
}

/// The subset of a signature shown to models in system prompts.
#[derive(Serialize)]
struct PromptView<'a> {
    category: &'a str,
    tool_name: &'a str,
    tool_description: &'a str,
    api_name: &'a str,
    api_description: &'a str,
    parameters: &'a ParameterSchema,
}

impl FunctionSignature {
    pub fn id(&self) -> &str {
        &self.api_name
    }

    pub fn group(&self) -> (&str, &str) {
        (&self.category, &self.tool_class)
    }

    pub fn validate(&self) -> Result<()> {
        if self.api_name.trim().is_empty() {
            return Err(Error::validation("", "api_name", "api_name is empty"));
        }
        let params = &self.parameters;
        let mut seen = BTreeSet::new();
        for (field, names) in [("required", &params.required), ("optional", &params.optional)] {
            for name in names {
                if !params.properties.contains_key(name) {
                    return Err(Error::validation(
                        &self.api_name,
                        format!("parameters.{field}"),
                        format!("parameter `{name}` is not declared in properties"),
                    ));
                }
                if !seen.insert(name.as_str()) {
                    return Err(Error::validation(
                        &self.api_name,
                        format!("parameters.{field}"),
                        format!("parameter `{name}` is listed more than once across required/optional"),
                    ));
                }
            }
        }
        if let Some(extra) = params.properties.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(Error::validation(
                &self.api_name,
                "parameters.properties",
                format!("parameter `{extra}` is neither required nor optional"),
            ));
        }
        Ok(())
    }

    /// JSON object in the system-prompt template shape.
    pub fn prompt_json(&self) -> serde_json::Value {
        serde_json::to_value(PromptView {
            category: &self.category,
            tool_name: &self.tool_name,
            tool_description: &self.tool_description,
            api_name: &self.api_name,
            api_description: &self.api_description,
            parameters: &self.parameters,
        })
        .expect("signature serializes")
    }

    /// Output fields declared by `response_info`. A JSON object maps field
    /// names to type names; any other text yields a single `result` field.
    pub fn output_fields(&self) -> Vec<(String, Option<ParamType>)> {
        if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(&self.response_info) {
            if !map.is_empty() {
                return map
                    .into_iter()
                    .map(|(k, v)| {
                        let ty = v
                            .as_str()
                            .and_then(|s| serde_json::from_value(serde_json::Value::String(s.to_string())).ok());
                        (k, ty)
                    })
                    .collect();
            }
        }
        vec![("result".to_string(), None)]
    }
}

/// Serialize signatures as the JSON list embedded in system prompts.
pub fn functions_prompt_json(functions: &[&FunctionSignature]) -> String {
    let list: Vec<serde_json::Value> = functions.iter().map(|f| f.prompt_json()).collect();
    serde_json::to_string(&list).expect("function list serializes")
}

#[derive(Debug, Clone)]
pub struct FunctionPool {
    functions: Vec<FunctionSignature>,
    by_id: HashMap<String, usize>,
    by_group: BTreeMap<(String, String), Vec<usize>>,
}

impl FunctionPool {
    pub fn new(functions: Vec<FunctionSignature>) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::Precondition("function pool is empty".into()));
        }
        let mut by_id = HashMap::with_capacity(functions.len());
        let mut by_group: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, f) in functions.iter().enumerate() {
            f.validate()?;
            if by_id.insert(f.api_name.clone(), i).is_some() {
                return Err(Error::validation(&f.api_name, "api_name", "duplicate api_name"));
            }
            by_group
                .entry((f.category.clone(), f.tool_class.clone()))
                .or_default()
                .push(i);
        }
        Ok(Self {
            functions,
            by_id,
            by_group,
        })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[FunctionSignature] {
        &self.functions
    }

    pub fn get(&self, id: &str) -> Option<&FunctionSignature> {
        self.by_id.get(id).map(|&i| &self.functions[i])
    }

    pub fn require(&self, id: &str) -> Result<&FunctionSignature> {
        self.get(id)
            .ok_or_else(|| Error::Precondition(format!("function `{id}` is not in the pool")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn group(&self, category: &str, tool_class: &str) -> Vec<&FunctionSignature> {
        self.by_group
            .get(&(category.to_string(), tool_class.to_string()))
            .map(|ix| ix.iter().map(|&i| &self.functions[i]).collect())
            .unwrap_or_default()
    }

    pub fn groups(&self) -> impl Iterator<Item = (&(String, String), Vec<&FunctionSignature>)> {
        self.by_group
            .iter()
            .map(|(k, ix)| (k, ix.iter().map(|&i| &self.functions[i]).collect()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.functions).expect("pool serializes")
    }
}

/// Parse pool text: a JSON array of function objects, or one object per line.
pub fn parse_pool(text: &str, context: &str) -> Result<FunctionPool> {
    let trimmed = text.trim_start();
    let functions: Vec<FunctionSignature> = if trimmed.starts_with('[') {
        serde_json::from_str(text).map_err(|e| Error::json(context, e))?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{context}:{}", i + 1), e)))
            .collect::<Result<_>>()?
    };
    FunctionPool::new(functions)
}

pub fn load_pool(path: impl AsRef<Path>) -> Result<FunctionPool> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pool(&text, &path.display().to_string())
}

pub fn serialize_pool(pool: &FunctionPool) -> String {
    pool.to_json()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyLabel {
    pub category: String,
    pub tool_class: Option<String>,
}

/// Labels a function with a domain category and a tool class.
pub trait TaxonomyJudge: Send + Sync {
    fn label(&self, sig: &FunctionSignature) -> Result<TaxonomyLabel>;
}

/// Classify a function, collapsing anything outside the closed label set to
/// `misc`.
pub fn classify_function(sig: &FunctionSignature, classifier: &dyn TaxonomyJudge) -> Result<(String, String)> {
    let label = classifier.label(sig)?;
    let raw = label
        .category
        .trim()
        .trim_matches(|c| c == '\'' || c == '"' || c == '`');
    if raw == MISC_CATEGORY || !is_known_category(raw) {
        if raw != MISC_CATEGORY {
            log::warn!("{}: classifier label `{raw}` is outside the category set", sig.api_name);
        }
        return Ok((MISC_CATEGORY.into(), DEFAULT_TOOL_CLASS.into()));
    }
    let class = label
        .tool_class
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .unwrap_or_else(|| DEFAULT_TOOL_CLASS.to_string());
    Ok((raw.to_string(), class))
}

/// Fixed lookup table; unknown functions get `misc`.
#[derive(Debug, Default, Clone)]
pub struct TableTaxonomyJudge {
    pub table: HashMap<String, (String, String)>,
}

impl TableTaxonomyJudge {
    pub fn with(mut self, api_name: &str, category: &str, tool_class: &str) -> Self {
        self.table.insert(api_name.into(), (category.into(), tool_class.into()));
        self
    }
}

impl TaxonomyJudge for TableTaxonomyJudge {
    fn label(&self, sig: &FunctionSignature) -> Result<TaxonomyLabel> {
        Ok(match self.table.get(&sig.api_name) {
            Some((c, k)) => TaxonomyLabel {
                category: c.clone(),
                tool_class: Some(k.clone()),
            },
            None => TaxonomyLabel {
                category: MISC_CATEGORY.into(),
                tool_class: None,
            },
        })
    }
}

/// Category from the domain classification prompt. The prompt returns a
/// domain only, so the class is taken from a second response line when the
/// model volunteers one, otherwise from the signature's existing class.
pub struct LlmTaxonomyJudge {
    pub client: LlmClient,
}

impl TaxonomyJudge for LlmTaxonomyJudge {
    fn label(&self, sig: &FunctionSignature) -> Result<TaxonomyLabel> {
        let mut bindings = BTreeMap::new();
        bindings.insert("api_name", sig.api_name.clone());
        bindings.insert("description", sig.api_description.clone());
        bindings.insert("required", sig.parameters.required.join(", "));
        let messages = prompts::render(PromptId::DomainClassify, &bindings)?;
        let text = self.client.complete(&messages)?;
        let (first, rest) =
            parse_first_line(&text).ok_or_else(|| Error::Protocol("empty classification response".into()))?;
        let second = rest.lines().map(str::trim).find(|l| !l.is_empty());
        Ok(TaxonomyLabel {
            category: first.to_string(),
            tool_class: second
                .map(str::to_string)
                .or_else(|| (!sig.tool_class.is_empty()).then(|| sig.tool_class.clone())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weather() -> &'static str {
        r#"[
          {"category": "Weather", "tool_class": "Weather condition tool", "tool_name": "weather",
           "tool_description": "Weather data", "api_name": "get_current_weather",
           "api_description": "Get the current weather for a city.",
           "parameters": {"type": "dict",
             "properties": {"city": {"type": "string", "description": "City name"},
                            "unit": {"type": "string", "description": "celsius or fahrenheit"}},
             "required": ["city"], "optional": ["unit"]},
           "response_info": "{\"temperature\": \"number\"}"},
          {"category": "Weather", "tool_class": "Weather condition tool", "tool_name": "weather",
           "tool_description": "Weather data", "api_name": "get_forecast",
           "api_description": "Forecast.",
           "parameters": {"type": "dict", "properties": {"city": {"type": "str", "description": ""}},
             "required": ["city"], "optional": []}}
        ]"#
    }

    #[test]
    fn loads_two_valid_functions() {
        let pool = parse_pool(weather(), "inline").unwrap();
        assert_eq!(pool.len(), 2);
        let f = pool.get("get_current_weather").unwrap();
        assert_eq!(f.parameters.required, vec!["city"]);
        assert_eq!(
            pool.get("get_forecast").unwrap().parameters.properties["city"].ty,
            ParamType::String
        );
        assert_eq!(pool.group("Weather", "Weather condition tool").len(), 2);
    }

    #[test]
    fn jsonl_form_is_accepted() {
        let pool = parse_pool(weather(), "inline").unwrap();
        let jsonl: String = pool
            .functions()
            .iter()
            .map(|f| serde_json::to_string(f).unwrap() + "\n")
            .collect();
        let again = parse_pool(&jsonl, "inline.jsonl").unwrap();
        assert_eq!(again.functions(), pool.functions());
    }

    #[test]
    fn required_name_missing_from_properties_is_rejected() {
        let text = weather().replace(
            r#""required": ["city"], "optional": ["unit"]"#,
            r#""required": ["city", "country"], "optional": ["unit"]"#,
        );
        let err = parse_pool(&text, "inline").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("get_current_weather"), "{msg}");
        assert!(msg.contains("country"), "{msg}");
    }

    #[test]
    fn duplicate_api_name_is_rejected() {
        let text = weather().replace("get_forecast", "get_current_weather");
        let err = parse_pool(&text, "inline").unwrap_err();
        assert!(err.to_string().contains("duplicate api_name"), "{err}");
    }

    #[test]
    fn undeclared_property_is_rejected() {
        let text = weather().replace(r#""optional": ["unit"]"#, r#""optional": []"#);
        assert!(parse_pool(&text, "inline").is_err());
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(parse_pool("[{", "x"), Err(Error::Json { .. })));
    }

    #[test]
    fn pool_serialization_round_trips() {
        let pool = parse_pool(weather(), "inline").unwrap();
        let text = serialize_pool(&pool);
        let again = parse_pool(&text, "again").unwrap();
        assert_eq!(serialize_pool(&again), text);
    }

    #[test]
    fn classification_follows_the_closed_set() {
        let pool = parse_pool(weather(), "inline").unwrap();
        let sig = pool.get("get_current_weather").unwrap();
        let judge = TableTaxonomyJudge::default().with("get_current_weather", "Weather", "Weather condition tool");
        assert_eq!(
            classify_function(sig, &judge).unwrap(),
            ("Weather".to_string(), "Weather condition tool".to_string())
        );
        let misc = TableTaxonomyJudge::default().with("get_current_weather", "misc", "whatever");
        assert_eq!(
            classify_function(sig, &misc).unwrap(),
            ("misc".to_string(), "uncategorized".to_string())
        );
        let odd = TableTaxonomyJudge::default().with("get_current_weather", "Astrology", "Stars");
        assert_eq!(classify_function(sig, &odd).unwrap().0, "misc");
    }

    #[test]
    fn output_fields_come_from_response_info() {
        let pool = parse_pool(weather(), "inline").unwrap();
        let f = pool.get("get_current_weather").unwrap();
        assert_eq!(
            f.output_fields(),
            vec![("temperature".to_string(), Some(ParamType::Number))]
        );
        let g = pool.get("get_forecast").unwrap();
        assert_eq!(g.output_fields(), vec![("result".to_string(), None)]);
    }

    #[test]
    fn category_list_has_forty_nine_entries() {
        assert_eq!(CATEGORY_LABELS.len(), 49);
        let distinct: BTreeSet<_> = CATEGORY_LABELS.iter().collect();
        assert_eq!(distinct.len(), 48);
    }
}
