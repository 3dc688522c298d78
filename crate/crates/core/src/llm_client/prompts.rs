//! Prompt-template registry.
//!
//! Instruction texts are kept verbatim; only the input layout beneath them
//! (the `{{slot}}` lines) is ours. Templates without a user part render to a
//! single system message.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{ChatMessage, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptId {
    NestedJudge,
    DependencyJudge,
    DomainClassify,
    BackTranslate,
    ForthTranslate,
    PositiveDistill,
    NegativeJudge,
    SystemPrompt,
}

impl PromptId {
    pub const ALL: [PromptId; 8] = [
        PromptId::NestedJudge,
        PromptId::DependencyJudge,
        PromptId::DomainClassify,
        PromptId::BackTranslate,
        PromptId::ForthTranslate,
        PromptId::PositiveDistill,
        PromptId::NegativeJudge,
        PromptId::SystemPrompt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptId::NestedJudge => "nested_judge",
            PromptId::DependencyJudge => "dependency_judge",
            PromptId::DomainClassify => "domain_classify",
            PromptId::BackTranslate => "back_translate",
            PromptId::ForthTranslate => "forth_translate",
            PromptId::PositiveDistill => "positive_distill",
            PromptId::NegativeJudge => "negative_judge",
            PromptId::SystemPrompt => "system_prompt",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub id: PromptId,
    pub system: &'static str,
    pub user: Option<&'static str>,
}

impl PromptTemplate {
    pub fn full_text(&self) -> String {
        match self.user {
            Some(u) => format!("{}\n\n{}", self.system, u),
            None => self.system.to_string(),
        }
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.full_text().as_bytes()))
    }

    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = placeholders_in(self.system);
        if let Some(u) = self.user {
            out.extend(placeholders_in(u));
        }
        out
    }
}

fn placeholders_in(text: &'static str) -> Vec<&'static str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                out.push(&after[..end]);
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    out
}

fn fill(text: &str, bindings: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").expect("placeholders are validated before filling");
        out.push_str(&bindings[&after[..end]]);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out
}

pub fn template(id: PromptId) -> PromptTemplate {
    let (system, user) = match id {
        PromptId::NestedJudge => (NESTED_JUDGE_SYSTEM, Some(NESTED_JUDGE_USER)),
        PromptId::DependencyJudge => (DEPENDENCY_JUDGE_SYSTEM, Some(DEPENDENCY_JUDGE_USER)),
        PromptId::DomainClassify => (DOMAIN_CLASSIFY_SYSTEM, Some(DOMAIN_CLASSIFY_USER)),
        PromptId::BackTranslate => (BACK_TRANSLATE_SYSTEM, Some(BACK_TRANSLATE_USER)),
        PromptId::ForthTranslate => (FORTH_TRANSLATE_SYSTEM, Some(FORTH_TRANSLATE_USER)),
        PromptId::PositiveDistill => (POSITIVE_DISTILL_SYSTEM, None),
        PromptId::NegativeJudge => (NEGATIVE_JUDGE_SYSTEM, Some(NEGATIVE_JUDGE_USER)),
        PromptId::SystemPrompt => (SYSTEM_PROMPT_SYSTEM, None),
    };
    PromptTemplate { id, system, user }
}

/// Fill a template. Every slot must be bound and every binding must name a slot.
pub fn render(id: PromptId, bindings: &BTreeMap<&str, String>) -> Result<Vec<ChatMessage>> {
    let t = template(id);
    let slots = t.placeholders();
    if let Some(missing) = slots.iter().find(|s| !bindings.contains_key(*s)) {
        return Err(Error::Template(format!(
            "{}: placeholder `{missing}` is not bound",
            id.name()
        )));
    }
    if let Some(extra) = bindings.keys().find(|k| !slots.contains(k)) {
        return Err(Error::Template(format!("{}: unknown placeholder `{extra}`", id.name())));
    }
    let mut messages = vec![ChatMessage::new(Role::System, fill(t.system, bindings))];
    if let Some(u) = t.user {
        messages.push(ChatMessage::new(Role::User, fill(u, bindings)));
    }
    Ok(messages)
}

/// The header of the training/evaluation system prompt, before the function list.
pub fn system_prompt_header() -> &'static str {
    SYSTEM_PROMPT_SYSTEM
        .strip_suffix("\n{{functions}}")
        .expect("system prompt ends with the functions slot")
}

pub fn system_prompt(functions_json: &str) -> String {
    format!("{}\n{}", system_prompt_header(), functions_json)
}

const NESTED_JUDGE_SYSTEM: &str = r#"You will be given two function information including their descriptions, parameters, response info etc. Your task is to determine whether the two functions can be nested.
We call two functions to be nested when some parameter values for the later function call can be obtained by the first function call. For example when the first function is convert_usd_from_rmb(rmb_number=), and the second function is set_budget_limit(budget_limit_in_usd=). The two functions are nested because set_budget_limit needs a parameter value in dollars and convert_usd_from_rmb could output a dollar value. As another example, when the first function is get_airport_symbol_by_city(city=,range=), the second function get_flight_by_airport(airport_symbol=). The two functions are nested because the second function needs a symbol of airport while the first function provides that in the output. Please judge whether the input functions satisfy this nesting relationship. Return two lines: In the first line, If those two functions are nested, output yes, otherwise output no, Use lower case. In the second line, give a brief explanation on why you think they are nested."#;

const NESTED_JUDGE_USER: &str = r#"First function:
{{first_function}}

Second function:
{{second_function}}"#;

const DEPENDENCY_JUDGE_SYSTEM: &str = r#"You will be given a few API functions. You will also be given a target API. Your task is to create the adjacent list of the target API from those APIs.
Each element in the adjacent list should be related to the target API.
We say another function is related to the target API if:
1) the output of the target API is the premise of executing the function. For example, the output of fileexists('file.txt') API determines whether we can call downloadfile('file.txt').
2) the output of the target API is exactly the input parameters of the function. For example, when calculating the area of a circle, the function getradius(obj) is the source node and calculate(radius) is the target node.
3) the output of the target API is partial input parameters of the function. For example, when posting something to social media, one might first get the content. In this case, the content = getcontent('file.txt') is the source node and posting(content, id, tags) is the target node.
Notice that the relation might cross the boundary of domains.
For example, when the given APIs are in the domain of weather and travel, it is possible that a weather API could be related to a travel API since the weather determines the travel schedule.
Also, the target API itself should not be in the adjacent list.
For example, if the target API is get_id, there should not be a get_id function in the adjacent list.
Return only the adjacency dictionary in a json format. Use exactly the original name of the tool as the key and values. In the adjacency dictionary, the only key is the target API, and each value is a list that contains the relevant APIs for that target API."#;

const DEPENDENCY_JUDGE_USER: &str = r#"Target API:
{{target}}

Candidate APIs:
{{candidates}}"#;

const DOMAIN_CLASSIFY_SYSTEM: &str = r#"You will be given a few domains and a function from one of those domains. You will be given the function name, description, and the required parameters of it. Your task is to classify the function into one of the domains.
The domains are:
'Cybersecurity', 'Artificial_Intelligence', 'Commerce', 'Advertising', 'Payments', 'News_Media', 'Cryptography', 'Devices', 'Business', 'eCommerce', 'Logistics', 'Finance', 'Events', 'Email', 'Business_Software', 'Music', 'Database', 'Translation', 'Jobs', 'Gaming', 'Monitoring', 'func_source_code', 'Education', 'Entertainment', 'Visual_Recognition', 'Sports', 'SMS', 'Media', 'Search', 'Finance', 'Location', 'Movies', 'Transportation', 'Text_Analysis', 'Mapping', 'Energy', 'Customized', 'Medical', 'Storage', 'Food', 'Health', 'Video_Images', 'Science', 'Communication', 'Travel', 'Social', 'Data', 'Reward', 'Weather'. Return one line with the name of the domain. Or, if you cannot decide on which domain the function belongs to or think the function does not belong to any of the domains, output 'misc'."#;

const DOMAIN_CLASSIFY_USER: &str = r#"Function name: {{api_name}}
Description: {{description}}
Required parameters: {{required}}"#;

const BACK_TRANSLATE_SYSTEM: &str = r#"Now you are role-playing as a user that involves in a multi-turn conversation with a function-calling agent. You will be given the functions called by the history of this multi-turn conversation, indicated by round numbers. The functions called last round start with [Last Round]. You will also be provided with a list of candidate functions in a dictionary format where the keys are the functions called last round and values are related and candidate functions that can be called in this round. I would like you to generate the query of this round which calls one or multiple functions from the candidate function list. When calling multiple functions, make sure you call no more than three functions at a single round.
Rules:
- The preferred next round query should be motivated by the outputs from the last round function output. Preferably, those outputs are used as the input parameters for as least one of the functions being called at this round.
- You should NOT mention which functions to use in your query explicitly.
- After you decide on which function to use, make sure your new query contains information for all the required parameters of the functions you want to call, although some information may be referred to implicitly as the outputs from the last round. If the value for some required parameters are not clear given the context, you may want to create a value for that required parameter but just remember, have information for all required parameters.
- Use no parameters besides the parameters indicated in the required and optional fields of the function documentation.
- For outputs from the last round, try not to mention the exact parameters that you will use. Instead, use references such as 'the location you just found', 'With the listed items'... to refer to the output of last round that will be leveraged next.
- Do not repeat any queries in the conversation history. This means your new query should not call the same function with the same set of parameters as any of the queries in the conversation, even the function exists in the adjacent list.
- Avoid using the APIs in [Do not use these APIs].
- Try to make the conversation as natural as possible. Mind the logic between two consecutive queries. Do not just create an independent new query.
- Below are some examples of good output given conversation history. Please follow the style of conversation and make your new query chained with previous queries."#;

const BACK_TRANSLATE_USER: &str = r#"[History]
{{history}}

[Candidate functions]
{{candidates}}

[Do not use these APIs]
{{do_not_use}}

[Requirements]
{{requirements}}"#;

const FORTH_TRANSLATE_SYSTEM: &str = r#"Now you are role-playing as a function-calling agent that involves in a multi-turn conversation with a user. You will be given the functions called by the history of this multi-turn conversation, indicated by round numbers. The functions called last round start with [Last Round].You will also be provided with a candidate function in a dictionary format with its descriptions and parameters.
I would like you to generate the function call for the next round using this function signature. Make sure the parameters for this candidate function should be derived from the user query and reference outputs from the last round function call.
Rules:
- You should use the function with the original name without any changes.
- For all the functions, make sure your generated function calls contain ALL the required parameters fields from the function documentation. You may also include some optional parameters. However, do not hallucinate any parameters outside of those. Use only the parameters indicated in the required and optional fields of the function documentation.
- Then, the parameter values for the new function should be related to the output from last round, please refer to the [Reference Output] for the corresponding values.
- You can have parallel function call with the candidate function, i.e., call the function with different set of parameters, for your new query. However, **do not call more than three parallel functions**.
Format:
Thought:
<the thought on which parameter values to use>
Answer:
<You need to provide a groundtruth for the function calls that will be invoked in the next round as well as the parameters. Separate your reference function calls by comma. No any other separator is acceptable, only using comma. Also, if any of your parameters are with string value, use double quotation marks to include the parameters. If no answer can be generated, output FINISH in this line>"#;

const FORTH_TRANSLATE_USER: &str = r#"[History]
{{history}}

[Reference Output]
{{reference_output}}

[Candidate function]
{{candidate}}

[Query]
{{query}}"#;

const POSITIVE_DISTILL_SYSTEM: &str = r#"You are an expert in composing functions. You are given a question and a set of possible functions. Based on the question, you will need to make one or more function/tool calls to achieve the purpose. If none of the function can be used, point it out. If the given question lacks the parameters required by the function, also point it out. You should only return the function call in tools call sections. If you decide to invoke any of the function(s), you MUST put it in the format of [func_name1(params_name1=params_value1, params_name2=params_value2...), func_name2(params)]. You SHOULD NOT include any other text in the response.
Here is a list of functions in JSON format that you can invoke. Notice that for each question, I already added hint function calls, following the [Hint] key words. Please compose your answer based on those hints while not mentioning those hints explicitly in your responses, i.e., when you decide to invoke function calls, just return the functions, and when you provide textual response, do not mention that there is a hint. Your textual response should summarize the function call outputs. Most of the time the hints are correct answers, just follow it... However, sometimes, those hints might not be perfectly correct, for example, you might see placeholders in the hints parameters like param1=unknow. So, when the hints are not correct, you need to identify them and compose the proper functions by looking for those parameter values from all previous turns. When you see [Hint]: miss function, this means the function needed in this step is missed. You should not simply output miss function in this case but try to use natural language to describe the situation and what functionality is missed. Similarly, when you see [Hint]: missed params, this means that some required parameters for the function is not mentioned in the query, just output some pure texts to ask for the information. However, in your response, do not mention the hint, just answer to the query. When you encounter errors in function outputs, please try composing the functions again based on the error information in the errors. Do not just output textual response at once. **This is important**: when you see the [Hint] contains multiple function calls, i.e., more than one functions should be called for the query, this means those functions are relevant and nested. In this case, at each turn of your response, call only one function. Then, wait for the feedback from the user and then, call the next function. This is because sometimes the parameters of the later functions are missed without the user feedback. For example, when you see [Hint]: func_name1(params_name1=params_value1), func_name2(params_name2=params_value2), you should first output [func_name1(...)] with the correct parameter values  and wait for the user response. Then, after you get the user response, based on the response, you call the next function [func_name2(...)] with the correct parameter values.
{{functions}}"#;

const NEGATIVE_JUDGE_SYSTEM: &str = r#"You will be given a multi-turn conversation between a user and an agent, the agent response for a single turn, which is possibly a function call, and a reference response. Your task is to judge whether the model response is a correct one based on the reference response. Below are possible error types. When both the reference and the model response are function calls, your judgement is for whether the model response accurately invoke the correct function call.
A response might be wrong in the following way:
1. Nested function calls: There are missing function calls. Model fails to call some necessary functions because they are not explicitly mentioned in the query.
2. Short dependency: There are outputs from a previous function call in this turn that is not used correctly in later function calls.
3. Long dependency: There are some parameter values exist in the conversation history but not properly used in this turn.
When both the reference and the model response are not function call but general textual response, your judgement is for whether the model response covers all the necessary information but also not hallucination based on the reference response.
4. Wrong summarization: whether the model response is a wrong summarization of the reference response.
When either one of the reference or the model response is not a function call while the other one is:
5. Missed function or parameters: there are some parameter values or functions present or not present in the context while the model thinks the opposite.
Additional guidelines:
If one of the reference and model responses is function call while the other is not, directly output no.
Notice that when you see redundant parameters from the model response when it is function call, it might because it gives all the parameters even the default ones. So, as long as other parameters take the same values, regard this as correct.
In the first line, return yes or no. If your answer is no, in the second line, return a number to represent the error type."#;

const NEGATIVE_JUDGE_USER: &str = r#"[Conversation]
{{conversation}}

[Model response]
{{model_response}}

[Reference response]
{{reference_response}}"#;

const SYSTEM_PROMPT_SYSTEM: &str = r#"You are an expert in composing functions. You are given a question and a set of possible functions. Based on the question, you will need to make one or more function/tool calls to achieve the purpose. If none of the function can be used, point it out. If the given question lacks the parameters required by the function, also point it out. You should only return the function call in tools call sections. If you decide to invoke any of the function(s), you MUST put it in the format of [func_name1(params_name1=params_value1, params_name2=params_value2...), func_name2(params)]. You SHOULD NOT include any other text in the response.
Here is a list of functions in JSON format that you can invoke.
{{functions}}"#;

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn nested_judge_renders_both_functions() {
        let msgs = render(
            PromptId::NestedJudge,
            &bind(&[
                ("first_function", "{\"api_name\": \"a\"}"),
                ("second_function", "{\"api_name\": \"b\"}"),
            ]),
        )
        .unwrap();
        assert_eq!(msgs.len(), 2);
        assert!(msgs[0]
            .content
            .contains("determine whether the two functions can be nested"));
        assert!(msgs[1].content.contains("\"api_name\": \"b\""));
    }

    #[test]
    fn system_prompt_has_the_bracket_format() {
        let msgs = render(PromptId::SystemPrompt, &bind(&[("functions", "[{}, {}, {}]")])).unwrap();
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].content.contains("[func_name1(params_name1=params_value1"));
        assert!(msgs[0].content.ends_with("\n[{}, {}, {}]"));
        assert_eq!(msgs[0].content, system_prompt("[{}, {}, {}]"));
    }

    #[test]
    fn unbound_and_unknown_placeholders_fail() {
        let err = render(PromptId::NestedJudge, &bind(&[("first_function", "x")])).unwrap_err();
        assert!(err.to_string().contains("second_function"), "{err}");
        let err = render(PromptId::SystemPrompt, &bind(&[("functions", "x"), ("extra", "y")])).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn every_template_has_slots() {
        for id in PromptId::ALL {
            assert!(!template(id).placeholders().is_empty(), "{}", id.name());
        }
    }
}
