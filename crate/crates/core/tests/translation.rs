mod common;

use std::sync::Mutex;

use common::{chain_fsp, chain_pool, graph, graph_set, names};
use magnet_core::fc_language::FunctionCall;
use magnet_core::fsp_sampler::{MissLabel, TurnGroup};
use magnet_core::function_pool::FunctionSignature;
use magnet_core::translation::{
    make_irrelevance, translate_all, translate_fsp, BackRequest, Executor, ForthRequest, InstanceKind,
    SimulatedExecutor, TemplateTranslator, ToolOutput, TranslateConfig, TranslateOutcome, TranslationBackend,
};
use magnet_core::Result;

/// Wraps the template translator and logs every call, optionally replacing
/// forth replies.
struct Recording<'a> {
    inner: TemplateTranslator,
    log: &'a Mutex<Vec<String>>,
    forth_override: Box<dyn Fn(&ForthRequest) -> Option<String> + Send + Sync>,
}

impl<'a> Recording<'a> {
    fn new(log: &'a Mutex<Vec<String>>) -> Self {
        Recording {
            inner: TemplateTranslator { seed: 1 },
            log,
            forth_override: Box::new(|_| None),
        }
    }
}

impl TranslationBackend for Recording<'_> {
    fn back_translate(&self, req: &BackRequest) -> Result<String> {
        self.log.lock().unwrap().push(format!("back {}", req.turn_index));
        self.inner.back_translate(req)
    }

    fn forth_translate(&self, req: &ForthRequest) -> Result<String> {
        self.log.lock().unwrap().push(format!(
            "forth {} {} seen={}",
            req.turn_index,
            req.function.api_name,
            req.reference_outputs.len()
        ));
        match (self.forth_override)(req) {
            Some(text) => Ok(text),
            None => self.inner.forth_translate(req),
        }
    }
}

struct LoggingExecutor<'a> {
    inner: SimulatedExecutor,
    log: &'a Mutex<Vec<String>>,
}

impl Executor for LoggingExecutor<'_> {
    fn execute(&self, call: &FunctionCall, sig: Option<&FunctionSignature>) -> Result<ToolOutput> {
        self.log.lock().unwrap().push(format!("exec {}", call.name));
        self.inner.execute(call, sig)
    }
}

fn cfg() -> TranslateConfig {
    TranslateConfig {
        distractors: 0,
        ..TranslateConfig::default()
    }
}

fn kept(o: TranslateOutcome) -> magnet_core::translation::TranslatedInstance {
    match o {
        TranslateOutcome::Kept(i) => i,
        TranslateOutcome::Dropped(d) => panic!("dropped: {}", d.reason),
    }
}

#[test]
fn each_turn_executes_before_the_next_is_translated() {
    let pool = chain_pool(3);
    let graphs = graph_set(vec![]);
    let log = Mutex::new(Vec::new());
    let backend = Recording::new(&log);
    let exec = LoggingExecutor {
        inner: SimulatedExecutor::new(4),
        log: &log,
    };
    let fsp = chain_fsp("t", &names(3));
    let inst = kept(translate_fsp(
        &fsp,
        &pool,
        &graphs,
        &backend,
        &exec,
        &cfg(),
        InstanceKind::MultiTurn,
        0,
    ));
    let events = log.into_inner().unwrap();
    assert_eq!(
        events,
        [
            "back 0",
            "forth 0 f0 seen=0",
            "exec f0",
            "back 1",
            "forth 1 f1 seen=1",
            "exec f1",
            "back 2",
            "forth 2 f2 seen=2",
            "exec f2",
        ]
    );
    assert_eq!(inst.turns.len(), 3);
    assert_eq!(inst.call_count(), 3);
    // the second call's argument is the first call's output
    let produced = inst.turns[0].outputs[0]
        .field("x1")
        .unwrap()
        .as_str()
        .unwrap()
        .to_string();
    let consumed = inst.turns[1].reference_calls.calls[0].args["x1"].to_string();
    assert_eq!(consumed.trim_matches('"'), produced);
}

#[test]
fn miss_params_turn_is_empty_and_the_next_turn_resumes() {
    let pool = chain_pool(3);
    let graphs = graph_set(vec![]);
    let mut fsp = chain_fsp("m", &names(2));
    fsp.turns.insert(1, TurnGroup::missing(MissLabel::MissParams));
    let log = Mutex::new(Vec::new());
    let backend = Recording::new(&log);
    let exec = LoggingExecutor {
        inner: SimulatedExecutor::new(4),
        log: &log,
    };
    let inst = kept(translate_fsp(
        &fsp,
        &pool,
        &graphs,
        &backend,
        &exec,
        &cfg(),
        InstanceKind::MultiTurn,
        0,
    ));
    assert_eq!(inst.turns.len(), 3);
    let miss = &inst.turns[1];
    assert_eq!(miss.miss_label, Some(MissLabel::MissParams));
    assert!(miss.reference_calls.is_empty() && miss.outputs.is_empty());
    assert!(inst.turns[2].resumes);
    assert_eq!(inst.turns[2].reference_calls.len(), 1);
    assert_eq!(inst.turns[2].outputs.len(), 1);
    let events = log.into_inner().unwrap();
    assert!(!events.iter().any(|e| e.starts_with("forth 1")));
}

#[test]
fn miss_func_withholds_the_resumed_function() {
    let pool = chain_pool(4);
    let graphs = graph_set(vec![graph("f0", &["f1", "f3"], &["f1"])]);
    let mut fsp = chain_fsp("w", &names(2));
    fsp.turns.insert(1, TurnGroup::missing(MissLabel::MissFunc));
    let backend = TemplateTranslator { seed: 2 };
    let inst = kept(translate_fsp(
        &fsp,
        &pool,
        &graphs,
        &backend,
        &SimulatedExecutor::new(0),
        &cfg(),
        InstanceKind::MultiTurn,
        0,
    ));
    assert_eq!(inst.withheld, ["f1"]);
    assert!(!inst.system_functions.contains(&"f1".to_string()));
    assert!(inst.turns[2].resumes);
}

#[test]
fn early_finish_below_min_turns_drops() {
    let pool = chain_pool(3);
    let log = Mutex::new(Vec::new());
    let mut backend = Recording::new(&log);
    backend.forth_override = Box::new(|r| (r.turn_index == 1).then(|| "Thought:\nnothing\nAnswer:\nFINISH".into()));
    let out = translate_fsp(
        &chain_fsp("f", &names(3)),
        &pool,
        &graph_set(vec![]),
        &backend,
        &SimulatedExecutor::new(0),
        &cfg(),
        InstanceKind::MultiTurn,
        0,
    );
    match out {
        TranslateOutcome::Dropped(d) => assert!(d.reason.contains("FINISH"), "{}", d.reason),
        TranslateOutcome::Kept(_) => panic!("kept"),
    }
}

#[test]
fn invalid_answers_get_one_more_sample() {
    let pool = chain_pool(2);
    let graphs = graph_set(vec![]);
    let bad_first = |r: &ForthRequest| (r.attempt == 0).then(|| "Answer:\n[f0(wrong=1)]".to_string());

    let log = Mutex::new(Vec::new());
    let mut backend = Recording::new(&log);
    backend.forth_override = Box::new(bad_first);
    let exec = SimulatedExecutor::new(0);
    let inst = kept(translate_fsp(
        &chain_fsp("v", &names(2)),
        &pool,
        &graphs,
        &backend,
        &exec,
        &cfg(),
        InstanceKind::MultiTurn,
        0,
    ));
    assert_eq!(inst.call_count(), 2);
    assert_eq!(log.lock().unwrap().iter().filter(|e| e.starts_with("forth")).count(), 4);

    let no_retry = TranslateConfig {
        validation_retries: 0,
        ..cfg()
    };
    let out = translate_fsp(
        &chain_fsp("v", &names(2)),
        &pool,
        &graphs,
        &backend,
        &exec,
        &no_retry,
        InstanceKind::MultiTurn,
        0,
    );
    assert!(matches!(out, TranslateOutcome::Dropped(_)));
}

#[test]
fn executor_is_a_pure_function_of_its_inputs() {
    let pool = chain_pool(1);
    let sig = pool.get("f0").unwrap();
    let call = FunctionCall::new("f0").arg("x0", magnet_core::fc_language::Value::Str("a".into()));
    let a = SimulatedExecutor::new(3).execute(&call, Some(sig)).unwrap();
    let b = SimulatedExecutor::new(3).execute(&call, Some(sig)).unwrap();
    let c = SimulatedExecutor::new(4).execute(&call, Some(sig)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.payload, c.payload);
    assert!(a.field("x1").is_some());
    let unknown = SimulatedExecutor::new(3)
        .execute(&FunctionCall::new("nope"), None)
        .unwrap();
    assert!(unknown.is_error && unknown.payload_text().contains("Bad request"));
    let always = SimulatedExecutor {
        seed: 3,
        error_rate: 1.0,
    };
    assert!(always.execute(&call, Some(sig)).unwrap().is_error);
}

#[test]
fn batch_translation_is_order_stable() {
    let pool = chain_pool(4);
    let graphs = graph_set(vec![]);
    let fsps: Vec<_> = (0..8).map(|i| chain_fsp(&format!("b{i}"), &names(2 + i % 3))).collect();
    let backend = TemplateTranslator { seed: 5 };
    let exec = SimulatedExecutor::new(5);
    let (a, da) = translate_all(
        &fsps,
        &pool,
        &graphs,
        &backend,
        &exec,
        &TranslateConfig::default(),
        InstanceKind::MultiTurn,
        5,
    );
    let (b, db) = translate_all(
        &fsps,
        &pool,
        &graphs,
        &backend,
        &exec,
        &TranslateConfig::default(),
        InstanceKind::MultiTurn,
        5,
    );
    assert_eq!(a, b);
    assert!(da.is_empty() && db.is_empty());
    assert_eq!(
        a.iter().map(|i| i.id.clone()).collect::<Vec<_>>(),
        fsps.iter().map(|f| f.id.clone()).collect::<Vec<_>>()
    );
}

#[test]
fn irrelevance_uses_a_tool_list_without_the_target() {
    let pool = chain_pool(3);
    let backend = TemplateTranslator { seed: 0 };
    let inst = make_irrelevance("irr", pool.get("f0").unwrap(), vec!["f1".into(), "f2".into()], &backend).unwrap();
    assert_eq!(inst.kind, InstanceKind::Irrelevance);
    assert_eq!(inst.turns.len(), 1);
    assert_eq!(inst.turns[0].miss_label, Some(MissLabel::MissFunc));
    assert!(make_irrelevance("irr", pool.get("f0").unwrap(), vec!["f0".into()], &backend).is_err());
}
