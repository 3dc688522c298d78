//! The textual function-call language: `[name(arg="v", n=1), other()]`.
//!
//! Parsing is lenient (single quotes, Python literals and unquoted barewords
//! are accepted); serialization is canonical (double quotes, one space after
//! commas, lowercase literals).

use std::fmt::{self, Write as _};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_pool::{FunctionSignature, ParamType};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    List(Vec<Value>),
    Null,
}

impl Value {
    pub fn matches(&self, ty: ParamType) -> bool {
        match (self, ty) {
            (Value::Null, _) => true,
            (Value::Str(_), ParamType::String) => true,
            (Value::Int(_), ParamType::Integer | ParamType::Number) => true,
            (Value::Float(_), ParamType::Number) => true,
            (Value::Bool(_), ParamType::Boolean) => true,
            (Value::List(_), ParamType::Array) => true,
            _ => false,
        }
    }

    pub fn from_json(v: &serde_json::Value) -> Value {
        match v {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) => Value::Int(i),
                None => Value::Float(n.as_f64().unwrap_or(0.0)),
            },
            serde_json::Value::String(s) => Value::Str(s.clone()),
            serde_json::Value::Array(items) => Value::List(items.iter().map(Value::from_json).collect()),
            // Objects are not part of the value grammar; carry them as text.
            obj @ serde_json::Value::Object(_) => Value::Str(obj.to_string()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Str(s) => serde_json::Value::String(s.clone()),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Float(f) => serde_json::Number::from_f64(*f)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::List(items) => serde_json::Value::Array(items.iter().map(Value::to_json).collect()),
            Value::Null => serde_json::Value::Null,
        }
    }
}

fn write_str_literal(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => {
                let mut out = String::with_capacity(s.len() + 2);
                write_str_literal(&mut out, s);
                f.write_str(&out)
            }
            Value::Int(i) => write!(f, "{i}"),
            // Debug keeps a decimal point or exponent, so floats re-parse as floats.
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Null => f.write_str("null"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionCall {
    pub name: String,
    pub args: IndexMap<String, Value>,
}

impl FunctionCall {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            args: IndexMap::new(),
        }
    }

    pub fn arg(mut self, name: impl Into<String>, value: Value) -> Self {
        self.args.insert(name.into(), value);
        self
    }
}

impl fmt::Display for FunctionCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, (k, v)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FcList {
    pub calls: Vec<FunctionCall>,
}

impl FcList {
    pub fn new(calls: Vec<FunctionCall>) -> Self {
        Self { calls }
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    /// Calls joined by `, ` without the surrounding brackets, as used in hints.
    pub fn hint_text(&self) -> String {
        self.calls
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for FcList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.hint_text())
    }
}

impl Serialize for FcList {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FcList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_fc_list(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("function-call syntax error at byte {pos}: {message}")]
pub struct FcParseError {
    pub pos: usize,
    pub message: String,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    lenient: bool,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, lenient: bool) -> Self {
        Self { src, pos: 0, lenient }
    }

    fn err<T>(&self, message: impl Into<String>) -> std::result::Result<T, FcParseError> {
        Err(FcParseError {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn expect(&mut self, want: char, what: &str) -> std::result::Result<(), FcParseError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => self.err(format!("expected {what}, found `{c}`")),
            None => self.err(format!("expected {what}, found end of input")),
        }
    }

    fn ident(&mut self, what: &str) -> std::result::Result<String, FcParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if is_ident_start(c) => {
                self.bump();
            }
            Some(c) => return self.err(format!("expected {what}, found `{c}`")),
            None => return self.err(format!("expected {what}, found end of input")),
        }
        while matches!(self.peek(), Some(c) if is_ident_char(c)) {
            self.bump();
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn list_of_calls(&mut self) -> std::result::Result<FcList, FcParseError> {
        self.expect('[', "`[`")?;
        let mut calls = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.bump();
            return Ok(FcList { calls });
        }
        loop {
            calls.push(self.call()?);
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(']') => return Ok(FcList { calls }),
                Some(c) => {
                    self.pos -= c.len_utf8();
                    return self.err(format!("expected `,` or `]`, found `{c}`"));
                }
                None => return self.err("unbalanced brackets: missing `]`"),
            }
        }
    }

    fn call(&mut self) -> std::result::Result<FunctionCall, FcParseError> {
        let name = self.ident("function name")?;
        self.expect('(', "`(` after function name")?;
        let mut args = IndexMap::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            self.bump();
            return Ok(FunctionCall { name, args });
        }
        loop {
            let param_pos = {
                self.skip_ws();
                self.pos
            };
            let param = self.ident("parameter name")?;
            self.skip_ws();
            if self.peek() != Some('=') {
                return self.err(format!("missing `=` after parameter `{param}`"));
            }
            self.bump();
            let value = self.value()?;
            if args.insert(param.clone(), value).is_some() {
                return Err(FcParseError {
                    pos: param_pos,
                    message: format!("duplicate parameter `{param}`"),
                });
            }
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(')') => return Ok(FunctionCall { name, args }),
                Some(c) => {
                    self.pos -= c.len_utf8();
                    return self.err(format!("expected `,` or `)`, found `{c}`"));
                }
                None => return self.err("unbalanced parentheses: missing `)`"),
            }
        }
    }

    fn value(&mut self) -> std::result::Result<Value, FcParseError> {
        self.skip_ws();
        match self.peek() {
            Some(q @ ('"' | '\'')) => {
                if q == '\'' && !self.lenient {
                    return self.err("single-quoted strings are not allowed here");
                }
                self.string(q).map(Value::Str)
            }
            Some('[') => self.list_value(),
            Some(c) if c == '-' || c.is_ascii_digit() => {
                let save = self.pos;
                match self.number() {
                    Some(v) if self.at_value_end() => Ok(v),
                    _ => {
                        self.pos = save;
                        self.bareword()
                    }
                }
            }
            Some(_) => self.bareword(),
            None => self.err("expected value, found end of input"),
        }
    }

    fn at_value_end(&self) -> bool {
        let rest = self.rest().trim_start();
        rest.is_empty() || matches!(rest.chars().next(), Some(',' | ')' | ']'))
    }

    fn list_value(&mut self) -> std::result::Result<Value, FcParseError> {
        self.expect('[', "`[`")?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.bump();
            return Ok(Value::List(items));
        }
        loop {
            items.push(self.value()?);
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(']') => return Ok(Value::List(items)),
                Some(c) => {
                    self.pos -= c.len_utf8();
                    return self.err(format!("expected `,` or `]` in list, found `{c}`"));
                }
                None => return self.err("unbalanced brackets: missing `]` in list"),
            }
        }
    }

    fn number(&mut self) -> Option<Value> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        if bytes.get(i) == Some(&b'-') {
            i += 1;
        }
        let digits_start = i;
        while bytes.get(i).is_some_and(u8::is_ascii_digit) {
            i += 1;
        }
        if i == digits_start {
            return None;
        }
        let mut is_float = false;
        if bytes.get(i) == Some(&b'.') && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
            is_float = true;
            i += 1;
            while bytes.get(i).is_some_and(u8::is_ascii_digit) {
                i += 1;
            }
        }
        if matches!(bytes.get(i), Some(b'e' | b'E')) {
            let mut j = i + 1;
            if matches!(bytes.get(j), Some(b'+' | b'-')) {
                j += 1;
            }
            if bytes.get(j).is_some_and(u8::is_ascii_digit) {
                is_float = true;
                while bytes.get(j).is_some_and(u8::is_ascii_digit) {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.src[start..i];
        self.pos = i;
        if !is_float {
            if let Ok(n) = text.parse::<i64>() {
                return Some(Value::Int(n));
            }
        }
        text.parse::<f64>().ok().filter(|x| x.is_finite()).map(Value::Float)
    }

    fn bareword(&mut self) -> std::result::Result<Value, FcParseError> {
        if !self.lenient {
            return self.err("expected a quoted string, number, boolean, null or list");
        }
        let start = self.pos;
        while matches!(self.peek(), Some(c) if !matches!(c, ',' | ')' | ']' | '(' | '[' | '"' | '=')) {
            self.bump();
        }
        let word = self.src[start..self.pos].trim();
        if word.is_empty() {
            self.pos = start;
            return self.err("expected value");
        }
        Ok(match word {
            "true" | "True" => Value::Bool(true),
            "false" | "False" => Value::Bool(false),
            "null" | "None" => Value::Null,
            w => Value::Str(w.to_string()),
        })
    }

    fn string(&mut self, quote: char) -> std::result::Result<String, FcParseError> {
        self.bump();
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                return self.err("unterminated string");
            };
            match c {
                c if c == quote => return Ok(out),
                '\\' => {
                    let esc_pos = self.pos - 1;
                    let Some(e) = self.bump() else {
                        return self.err("unterminated string");
                    };
                    match e {
                        '"' => out.push('"'),
                        '\'' => out.push('\''),
                        '\\' => out.push('\\'),
                        '/' => out.push('/'),
                        'n' => out.push('\n'),
                        'r' => out.push('\r'),
                        't' => out.push('\t'),
                        'b' => out.push('\u{8}'),
                        'f' => out.push('\u{c}'),
                        'u' => {
                            let hex = self.rest().get(..4).unwrap_or("");
                            let code = u32::from_str_radix(hex, 16).ok().filter(|_| hex.len() == 4);
                            match code.and_then(char::from_u32) {
                                Some(ch) => {
                                    out.push(ch);
                                    self.pos += 4;
                                }
                                None => {
                                    return Err(FcParseError {
                                        pos: esc_pos,
                                        message: "bad string escape: invalid \\u sequence".into(),
                                    })
                                }
                            }
                        }
                        other => {
                            return Err(FcParseError {
                                pos: esc_pos,
                                message: format!("bad string escape `\\{other}`"),
                            })
                        }
                    }
                }
                c => out.push(c),
            }
        }
    }

    fn finish(&mut self) -> std::result::Result<(), FcParseError> {
        self.skip_ws();
        match self.peek() {
            None => Ok(()),
            Some(c) => self.err(format!("unexpected trailing `{c}`")),
        }
    }
}

/// Parse a bracketed call list: `[f(a=1), g()]` or `[]`.
pub fn parse_fc_list(text: &str) -> std::result::Result<FcList, FcParseError> {
    let mut p = Parser::new(text, true);
    let list = p.list_of_calls()?;
    p.finish()?;
    Ok(list)
}

/// Parse calls with or without the surrounding brackets (hint text form).
pub fn parse_calls(text: &str) -> std::result::Result<FcList, FcParseError> {
    if text.trim_start().starts_with('[') {
        return parse_fc_list(text);
    }
    let mut p = Parser::new(text, true);
    let mut calls = vec![p.call()?];
    loop {
        p.skip_ws();
        match p.peek() {
            Some(',') => {
                p.bump();
                calls.push(p.call()?);
            }
            _ => break,
        }
    }
    p.finish()?;
    Ok(FcList { calls })
}

pub fn serialize_fc_list(fcs: &FcList) -> String {
    fcs.to_string()
}

/// Strict literal at the start of `text`; returns the value and bytes consumed.
pub fn parse_value_prefix(text: &str) -> Option<(Value, usize)> {
    let mut p = Parser::new(text, false);
    let v = p.value().ok()?;
    Some((v, p.pos))
}

/// First non-empty call list embedded in a model action. The whole text is
/// tried first, then every `[` position in order.
pub fn extract_fc_list(text: &str) -> Option<FcList> {
    let trimmed = text.trim();
    if let Ok(list) = parse_fc_list(trimmed) {
        return (!list.is_empty()).then_some(list);
    }
    for (i, _) in text.match_indices('[') {
        let mut p = Parser::new(&text[i..], true);
        if let Ok(list) = p.list_of_calls() {
            if !list.is_empty() {
                return Some(list);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub missing_required: Vec<String>,
    pub unknown: Vec<String>,
    pub type_mismatched: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.missing_required.is_empty() && self.unknown.is_empty() && self.type_mismatched.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "missing required {:?}, unknown {:?}, type mismatch {:?}",
            self.missing_required, self.unknown, self.type_mismatched
        )
    }
}

/// Check a call's arguments against its signature.
pub fn validate_args(fc: &FunctionCall, sig: &FunctionSignature) -> Result<ValidationReport> {
    if fc.name != sig.api_name {
        return Err(Error::Precondition(format!(
            "call `{}` validated against signature `{}`",
            fc.name, sig.api_name
        )));
    }
    let params = &sig.parameters;
    let mut report = ValidationReport::default();
    for name in &params.required {
        if !fc.args.contains_key(name) {
            report.missing_required.push(name.clone());
        }
    }
    for (name, value) in &fc.args {
        if !params.is_declared(name) {
            report.unknown.push(name.clone());
        } else if let Some(spec) = params.spec(name) {
            if !value.matches(spec.ty) {
                report.type_mismatched.push(name.clone());
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_pool::{ParamSpec, ParameterSchema};
    use std::collections::BTreeMap;

    fn distance_sig() -> FunctionSignature {
        let mut props = BTreeMap::new();
        for p in ["from_loc", "to_loc"] {
            props.insert(
                p.to_string(),
                ParamSpec {
                    ty: ParamType::String,
                    description: String::new(),
                },
            );
        }
        props.insert(
            "mode".into(),
            ParamSpec {
                ty: ParamType::String,
                description: String::new(),
            },
        );
        FunctionSignature {
            category: "Mapping".into(),
            tool_class: "Route tool".into(),
            tool_name: "maps".into(),
            tool_description: String::new(),
            api_name: "get_distance".into(),
            api_description: "Distance between two places.".into(),
            parameters: ParameterSchema {
                schema_type: "dict".into(),
                properties: props,
                required: vec!["from_loc".into(), "to_loc".into()],
                optional: vec!["mode".into()],
            },
            response_info: String::new(),
        }
    }

    #[test]
    fn parses_the_distance_example() {
        let list = parse_fc_list(r#"[get_distance(from_loc="San Francisco", to_loc="San Mateo")]"#).unwrap();
        assert_eq!(list.len(), 1);
        let call = &list.calls[0];
        assert_eq!(call.name, "get_distance");
        assert_eq!(call.args["from_loc"], Value::Str("San Francisco".into()));
        assert_eq!(call.args["to_loc"], Value::Str("San Mateo".into()));
    }

    #[test]
    fn parses_empty_and_parallel_lists() {
        assert!(parse_fc_list("[]").unwrap().is_empty());
        assert!(parse_fc_list("  [ ]  ").unwrap().is_empty());
        let list = parse_fc_list("[f(x=1), f(x=2)]").unwrap();
        assert_eq!(list.len(), 2);
        assert!(list.calls.iter().all(|c| c.name == "f"));
        assert_eq!(list.calls[1].args["x"], Value::Int(2));
    }

    #[test]
    fn value_grammar() {
        let list = parse_fc_list(r#"[g(a=-1.5e3, b=true, c=None, d=[1, "x", [false]], e=0.25, f=False)]"#).unwrap();
        let a = &list.calls[0].args;
        assert_eq!(a["a"], Value::Float(-1500.0));
        assert_eq!(a["b"], Value::Bool(true));
        assert_eq!(a["c"], Value::Null);
        assert_eq!(
            a["d"],
            Value::List(vec![
                Value::Int(1),
                Value::Str("x".into()),
                Value::List(vec![Value::Bool(false)])
            ])
        );
        assert_eq!(a["f"], Value::Bool(false));
    }

    #[test]
    fn barewords_and_single_quotes_are_accepted_but_serialized_quoted() {
        let list = parse_fc_list("[get_distance(from_loc=San Francisco, to_loc='San Mateo')]").unwrap();
        assert_eq!(
            list.to_string(),
            r#"[get_distance(from_loc="San Francisco", to_loc="San Mateo")]"#
        );
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let e = parse_fc_list("[f(x=1]").unwrap_err();
        assert_eq!(e.pos, 6);
        let e = parse_fc_list("[f(x 1)]").unwrap_err();
        assert!(e.message.contains("missing `=`"), "{e}");
        let e = parse_fc_list(r#"[f(x="a\q")]"#).unwrap_err();
        assert!(e.message.contains("bad string escape"), "{e}");
        assert_eq!(e.pos, 7);
        let e = parse_fc_list("[f(x=1)").unwrap_err();
        assert!(e.message.contains("unbalanced"), "{e}");
        assert!(parse_fc_list("[f(x=1, x=2)]").is_err());
        assert!(parse_fc_list("[f(x=1)] extra").is_err());
    }

    #[test]
    fn quotes_are_escaped_on_output() {
        let list = FcList::new(vec![
            FunctionCall::new("say").arg("text", Value::Str("he said \"hi\"\\".into()))
        ]);
        let text = serialize_fc_list(&list);
        assert_eq!(text, r#"[say(text="he said \"hi\"\\")]"#);
        assert_eq!(parse_fc_list(&text).unwrap(), list);
        assert_eq!(serialize_fc_list(&FcList::default()), "[]");
    }

    #[test]
    fn hint_form_parses_without_brackets() {
        let list = parse_calls(r#"get_distance(from_loc="a", to_loc="b"), convert_unit(value=3)"#).unwrap();
        assert_eq!(list.len(), 2);
        assert_eq!(parse_calls(&list.hint_text()).unwrap(), list);
        assert_eq!(parse_calls(&list.to_string()).unwrap(), list);
    }

    #[test]
    fn extraction_from_mixed_text() {
        let text = "Thought: use the tool\n[get_weather(city=\"Paris\")]";
        assert_eq!(extract_fc_list(text).unwrap().calls[0].name, "get_weather");
        assert!(extract_fc_list("I need more details. What is the destination?").is_none());
        assert!(extract_fc_list("[]").is_none());
    }

    #[test]
    fn value_prefix_is_strict() {
        assert_eq!(
            parse_value_prefix(r#""San Mateo" and"#),
            Some((Value::Str("San Mateo".into()), 11))
        );
        assert_eq!(parse_value_prefix("42."), None);
        assert_eq!(parse_value_prefix("42, x"), Some((Value::Int(42), 2)));
        assert_eq!(parse_value_prefix("somewhere"), None);
    }

    #[test]
    fn validation_reports() {
        let sig = distance_sig();
        let ok = parse_fc_list(r#"[get_distance(from_loc="a", to_loc="b")]"#).unwrap();
        assert!(validate_args(&ok.calls[0], &sig).unwrap().ok());

        let missing = parse_fc_list(r#"[get_distance(from_loc="a")]"#).unwrap();
        let r = validate_args(&missing.calls[0], &sig).unwrap();
        assert_eq!(r.missing_required, vec!["to_loc"]);
        assert!(!r.ok());

        let unknown = parse_fc_list(r#"[get_distance(from_loc="a", to_loc="b", speed=3)]"#).unwrap();
        assert_eq!(validate_args(&unknown.calls[0], &sig).unwrap().unknown, vec!["speed"]);

        let typed = parse_fc_list(r#"[get_distance(from_loc=1, to_loc="b")]"#).unwrap();
        assert_eq!(
            validate_args(&typed.calls[0], &sig).unwrap().type_mismatched,
            vec!["from_loc"]
        );

        let other = parse_fc_list("[other()]").unwrap();
        assert!(validate_args(&other.calls[0], &sig).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_value() -> impl Strategy<Value = Value> {
            let leaf = prop_oneof![
                any::<String>().prop_map(Value::Str),
                any::<i64>().prop_map(Value::Int),
                any::<f64>()
                    .prop_filter("finite", |x| x.is_finite())
                    .prop_map(Value::Float),
                any::<bool>().prop_map(Value::Bool),
                Just(Value::Null),
            ];
            leaf.prop_recursive(3, 16, 4, |inner| {
                prop::collection::vec(inner, 0..4).prop_map(Value::List)
            })
        }

        fn arb_call() -> impl Strategy<Value = FunctionCall> {
            (
                "[a-zA-Z_][a-zA-Z0-9_.]{0,12}",
                prop::collection::vec(("[a-z_][a-z0-9_]{0,8}", arb_value()), 0..5),
            )
                .prop_map(|(name, args)| FunctionCall {
                    name,
                    args: args.into_iter().collect(),
                })
        }

        pub(crate) fn arb_fc_list() -> impl Strategy<Value = FcList> {
            prop::collection::vec(arb_call(), 0..5).prop_map(FcList::new)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn parse_inverts_serialize(list in arb_fc_list()) {
                let text = serialize_fc_list(&list);
                let back = parse_fc_list(&text).unwrap();
                prop_assert_eq!(&back, &list);
                prop_assert_eq!(serialize_fc_list(&back), text);
            }
        }
    }
}
