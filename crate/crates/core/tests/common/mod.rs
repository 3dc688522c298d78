#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde_json::json;

use magnet_core::dependency_graph::{GraphSet, LocalDependencyGraph};
use magnet_core::fc_language::{FunctionCall, Value};
use magnet_core::fsp_sampler::{Fsp, Provenance, TurnGroup};
use magnet_core::function_pool::{load_pool, parse_pool, FunctionPool};
use magnet_core::pipeline::PipelineConfig;
use magnet_core::trajectory_distiller::{Polarity, Step, Trajectory, Turn};
use magnet_core::translation::{InstanceKind, Lineage, ToolOutput};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

pub fn toy_pool() -> FunctionPool {
    load_pool(fixture("toy_pool.json")).unwrap()
}

pub fn toy_config(out_dir: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(fixture("toy_run.toml")).unwrap();
    cfg.out_dir = out_dir.to_path_buf();
    cfg
}

/// Pool of `n` string-in, string-out functions named `f0..`, all in one group.
pub fn chain_pool(n: usize) -> FunctionPool {
    let fns: Vec<_> = (0..n)
        .map(|i| {
            json!({
                "category": "Data", "tool_class": "Chain", "tool_name": "Chain",
                "api_name": format!("f{i}"), "api_description": format!("step {i}"),
                "parameters": {"type": "dict", "properties": {format!("x{i}"): {"type": "string"}},
                               "required": [format!("x{i}")], "optional": []},
                "response_info": json!({format!("x{}", i + 1): "string"}).to_string(),
            })
        })
        .collect();
    parse_pool(&serde_json::to_string(&fns).unwrap(), "chain").unwrap()
}

pub fn graph(target: &str, neighbors: &[&str], out: &[&str]) -> LocalDependencyGraph {
    LocalDependencyGraph {
        target: target.into(),
        neighbors: neighbors.iter().map(|s| s.to_string()).collect(),
        edges: out
            .iter()
            .map(|d| (target.to_string(), d.to_string()))
            .collect::<BTreeSet<_>>(),
        judge_failed: false,
    }
}

pub fn graph_set(graphs: Vec<LocalDependencyGraph>) -> GraphSet {
    let mut set = GraphSet::default();
    for g in graphs {
        set.insert(g);
    }
    set
}

/// Single-function turns over `names`.
pub fn chain_fsp(id: &str, names: &[String]) -> Fsp {
    Fsp {
        id: id.into(),
        turns: names.iter().cloned().map(TurnGroup::single).collect(),
        seed: 0,
        provenance: Provenance {
            start: names.first().cloned().unwrap_or_default(),
            ops: Vec::new(),
        },
    }
}

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

pub fn output(name: &str, payload: serde_json::Value) -> ToolOutput {
    ToolOutput {
        call: FunctionCall::new(name).arg("q", Value::Str("v".into())),
        payload,
        is_error: false,
    }
}

/// `turns` turns with `calls` tool calls spread over them.
pub fn trajectory(id: &str, kind: InstanceKind, turns: usize, calls: usize) -> Trajectory {
    let per_turn: Vec<usize> = (0..turns)
        .map(|t| calls / turns + usize::from(t < calls % turns))
        .collect();
    Trajectory {
        id: id.into(),
        kind,
        polarity: Polarity::Positive,
        system_functions: vec!["f0".into(), "f1".into()],
        turns: per_turn
            .into_iter()
            .enumerate()
            .map(|(t, n)| Turn {
                query: format!("query {t}"),
                hint: None,
                steps: (0..n)
                    .map(|c| Step {
                        action: format!("[f0(q=\"{t}-{c}\")]"),
                        tool_outputs: vec![output("f0", json!({"r": format!("{t}-{c}")}))],
                    })
                    .collect(),
            })
            .collect(),
        lineage: Lineage {
            fsp_id: id.into(),
            ops: Vec::new(),
        },
    }
}
