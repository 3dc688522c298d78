//! FSP enhancement: Merge, Insert and Split.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependency_graph::GraphSet;
use crate::error::{Error, Result};
use crate::fsp_sampler::{Fsp, MissLabel, TurnGroup};
use crate::function_pool::{FunctionPool, FunctionSignature};
use crate::llm_client::{parse_yes_no_line, prompts, LlmClient, PromptId};
use crate::rng::{derive_rng, fnv1a, StageRng};

fn require_no_miss(fsp: &Fsp, op: &str) -> Result<()> {
    match fsp.miss_index() {
        Some(i) => Err(Error::Precondition(format!(
            "{op} on fsp `{}` which already has a miss-labeled turn at {i}",
            fsp.id
        ))),
        None => Ok(()),
    }
}

/// Left-to-right scan over consecutive turn pairs; each pair is merged with
/// probability `p`. A merged turn is not merged again in the same pass, and a
/// coin is drawn only while a pair remains.
pub fn op_merge(fsp: &Fsp, p: f64, rng: &mut StageRng) -> Result<Fsp> {
    require_no_miss(fsp, "merge")?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("merge probability {p} is outside [0, 1]")));
    }
    let turns = &fsp.turns;
    let mut out = Vec::with_capacity(turns.len());
    let mut i = 0;
    while i < turns.len() {
        if i + 1 < turns.len() && rng.random_bool(p) {
            let mut functions = turns[i].functions.clone();
            functions.extend(turns[i + 1].functions.iter().cloned());
            out.push(TurnGroup {
                functions,
                miss_label: None,
            });
            i += 2;
        } else {
            out.push(turns[i].clone());
            i += 1;
        }
    }
    Ok(Fsp {
        turns: out,
        ..fsp.clone()
    })
}

/// Decides whether `second` can consume the outputs of `first`.
pub trait NestedJudge: Send + Sync {
    fn is_nested(&self, first: &FunctionSignature, second: &FunctionSignature) -> Result<bool>;
}

/// Yes for an explicit set of ordered pairs, no otherwise.
#[derive(Debug, Clone, Default)]
pub struct FixedNestedJudge {
    pub pairs: BTreeSet<(String, String)>,
}

impl FixedNestedJudge {
    pub fn with(mut self, first: &str, second: &str) -> Self {
        self.pairs.insert((first.to_string(), second.to_string()));
        self
    }
}

impl NestedJudge for FixedNestedJudge {
    fn is_nested(&self, first: &FunctionSignature, second: &FunctionSignature) -> Result<bool> {
        Ok(self.pairs.contains(&(first.api_name.clone(), second.api_name.clone())))
    }
}

/// Nested when an output field of `first` is a required parameter of `second`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IoNestedJudge;

impl NestedJudge for IoNestedJudge {
    fn is_nested(&self, first: &FunctionSignature, second: &FunctionSignature) -> Result<bool> {
        let outputs: BTreeSet<String> = first.output_fields().into_iter().map(|(k, _)| k).collect();
        Ok(second.parameters.required.iter().any(|p| outputs.contains(p)))
    }
}

pub struct LlmNestedJudge {
    pub client: LlmClient,
}

impl NestedJudge for LlmNestedJudge {
    fn is_nested(&self, first: &FunctionSignature, second: &FunctionSignature) -> Result<bool> {
        let mut bindings = BTreeMap::new();
        bindings.insert("first_function", first.prompt_json().to_string());
        bindings.insert("second_function", second.prompt_json().to_string());
        let messages = prompts::render(PromptId::NestedJudge, &bindings)?;
        let text = self.client.complete(&messages)?;
        Ok(parse_yes_no_line(&text)?.0)
    }
}

/// For each original turn, look through the neighbours of its last function
/// and take the first one judged nested. With probability `1 - q_long` it is
/// appended to that turn; otherwise it becomes a new single-function turn
/// placed after original turn `j`, with `j` uniform over this turn and the
/// turns after it.
pub fn op_insert(
    fsp: &Fsp,
    graphs: &GraphSet,
    pool: &FunctionPool,
    judge: &dyn NestedJudge,
    q_long: f64,
    rng: &mut StageRng,
) -> Result<Fsp> {
    require_no_miss(fsp, "insert")?;
    if !(0.0..=1.0).contains(&q_long) {
        return Err(Error::Config(format!("insert probability {q_long} is outside [0, 1]")));
    }
    let h_total = fsp.turns.len();
    let mut appended: Vec<Option<String>> = vec![None; h_total];
    let mut after: Vec<Vec<String>> = vec![Vec::new(); h_total];

    for (h, turn) in fsp.turns.iter().enumerate() {
        let Some(last) = turn.functions.last() else { continue };
        let Some(graph) = graphs.get(last) else { continue };
        let first = pool.require(last)?;
        let mut found = None;
        for n in &graph.neighbors {
            let second = pool.require(n)?;
            match judge.is_nested(first, second) {
                Ok(true) => {
                    found = Some(n.clone());
                    break;
                }
                Ok(false) => {}
                Err(e) => {
                    log::warn!("nested judgment for ({last}, {n}) failed, skipping turn {h}: {e}");
                    break;
                }
            }
        }
        let Some(c) = found else { continue };
        if rng.random_bool(q_long) {
            let j = rng.random_range(h..h_total);
            after[j].push(c);
        } else {
            appended[h] = Some(c);
        }
    }

    let mut out = Vec::with_capacity(h_total * 2);
    for (h, turn) in fsp.turns.iter().enumerate() {
        let mut t = turn.clone();
        if let Some(c) = appended[h].take() {
            t.functions.push(c);
        }
        out.push(t);
        out.extend(after[h].drain(..).map(TurnGroup::single));
    }
    Ok(Fsp {
        turns: out,
        ..fsp.clone()
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    #[default]
    Uniform,
    MissParams,
    MissFunc,
}

/// Insert one empty, miss-labeled turn right after a uniformly chosen turn.
pub fn op_split(fsp: &Fsp, label: SplitLabel, rng: &mut StageRng) -> Result<Fsp> {
    require_no_miss(fsp, "split")?;
    if fsp.turns.is_empty() {
        return Err(Error::Precondition(format!("split on empty fsp `{}`", fsp.id)));
    }
    let h = rng.random_range(0..fsp.turns.len());
    let label = match label {
        SplitLabel::MissParams => MissLabel::MissParams,
        SplitLabel::MissFunc => MissLabel::MissFunc,
        SplitLabel::Uniform => {
            if rng.random_bool(0.5) {
                MissLabel::MissParams
            } else {
                MissLabel::MissFunc
            }
        }
    };
    let mut turns = fsp.turns.clone();
    turns.insert(h + 1, TurnGroup::missing(label));
    Ok(Fsp { turns, ..fsp.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeOpsConfig {
    pub merge_p: f64,
    pub q_long: f64,
    pub split_label: SplitLabel,
}

impl Default for NodeOpsConfig {
    fn default() -> Self {
        NodeOpsConfig {
            merge_p: 0.3,
            q_long: 0.5,
            split_label: SplitLabel::Uniform,
        }
    }
}

/// Merge then Insert gives the enhanced path; Split of that gives its
/// missing-information variant. Returns both.
pub fn enhance(
    fsp: &Fsp,
    graphs: &GraphSet,
    pool: &FunctionPool,
    judge: &dyn NestedJudge,
    cfg: &NodeOpsConfig,
    rng: &mut StageRng,
) -> Result<(Fsp, Fsp)> {
    let merged = op_merge(fsp, cfg.merge_p, rng)?;
    let mut phi = op_insert(&merged, graphs, pool, judge, cfg.q_long, rng)?;
    phi.provenance.ops.extend(["merge".to_string(), "insert".to_string()]);
    let mut hat = op_split(&phi, cfg.split_label, rng)?;
    hat.provenance.ops.push("split".to_string());
    hat.id = format!("{}-split", phi.id);
    Ok((phi, hat))
}

/// Enhance every FSP with its own derived generator. Output order follows input.
pub fn enhance_all(
    fsps: &[Fsp],
    graphs: &GraphSet,
    pool: &FunctionPool,
    judge: &dyn NestedJudge,
    cfg: &NodeOpsConfig,
    seed: u64,
) -> Result<Vec<(Fsp, Fsp)>> {
    fsps.par_iter()
        .map(|fsp| {
            let mut rng = derive_rng(seed, "enhance", fnv1a(fsp.id.as_bytes()));
            enhance(fsp, graphs, pool, judge, cfg, &mut rng)
        })
        .collect()
}
