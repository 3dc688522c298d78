mod common;

use common::{fixture, toy_pool};
use magnet_core::function_pool::{
    classify_function, is_known_category, load_pool, parse_pool, serialize_pool, ParamType, TableTaxonomyJudge,
};
use magnet_core::Error;

#[test]
fn toy_pool_loads_and_round_trips() {
    let pool = toy_pool();
    assert_eq!(pool.len(), 12);
    assert_eq!(pool.group("Travel", "Flights").len(), 6);
    assert_eq!(pool.group("Finance", "Markets").len(), 6);
    let again = parse_pool(&serialize_pool(&pool), "again").unwrap();
    assert_eq!(again.functions(), pool.functions());
    let book = pool.get("book_flight").unwrap();
    assert_eq!(book.parameters.spec("seat_upgrade").unwrap().ty, ParamType::Boolean);
    assert!(book.output_fields().iter().any(|(k, _)| k == "booking_id"));
}

#[test]
fn line_delimited_pools_parse() {
    let line = |n: &str| {
        format!(
            "{{\"api_name\": \"{n}\", \"parameters\": {{\"type\": \"dict\", \"properties\": {{}}, \"required\": [], \"optional\": []}}}}"
        )
    };
    let pool = parse_pool(&format!("{}\n\n{}\n", line("a"), line("b")), "mem").unwrap();
    assert_eq!(pool.len(), 2);
    assert_eq!(pool.get("a").unwrap().output_fields()[0].0, "result");
}

#[test]
fn schema_errors_name_the_function_and_field() {
    let text = r#"[{"api_name": "f", "parameters": {"type": "dict",
        "properties": {"a": {"type": "string"}}, "required": ["a", "b"], "optional": []}}]"#;
    match parse_pool(text, "mem").unwrap_err() {
        Error::Validation { api_name, field, .. } => {
            assert_eq!(api_name, "f");
            assert_eq!(field, "parameters.required");
        }
        other => panic!("{other:?}"),
    }
    let dup = r#"[{"api_name": "f", "parameters": {"type": "dict", "properties": {}, "required": [], "optional": []}},
                  {"api_name": "f", "parameters": {"type": "dict", "properties": {}, "required": [], "optional": []}}]"#;
    assert!(parse_pool(dup, "mem").is_err());
    assert!(parse_pool("[]", "mem").is_err());
    let err = load_pool(fixture("missing.json")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn classification_collapses_unknown_labels() {
    let pool = toy_pool();
    let sig = pool.get("get_quote").unwrap();
    assert!(is_known_category("Finance"));
    let known = TableTaxonomyJudge::default().with("get_quote", "Finance", "Markets");
    assert_eq!(
        classify_function(sig, &known).unwrap(),
        ("Finance".into(), "Markets".into())
    );
    let odd = TableTaxonomyJudge::default().with("get_quote", "Astrology", "Stars");
    assert_eq!(
        classify_function(sig, &odd).unwrap(),
        ("misc".into(), "uncategorized".into())
    );
}
