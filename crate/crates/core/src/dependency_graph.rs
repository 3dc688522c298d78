//! Local dependency graphs: for every function, a sample of candidate
//! neighbours and the judged out-edges from the function to them.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::function_pool::{functions_prompt_json, FunctionId, FunctionPool, FunctionSignature};
use crate::llm_client::{prompts, strip_code_fence, ChatParams, LlmClient, PromptId};
use crate::rng::{derive_rng, fnv1a, StageRng};

pub const DEFAULT_K_CAND: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalDependencyGraph {
    pub target: FunctionId,
    pub neighbors: Vec<FunctionId>,
    pub edges: BTreeSet<(FunctionId, FunctionId)>,
    /// Set when the judge could not produce an adjacency list; the graph is then edgeless.
    pub judge_failed: bool,
}

impl LocalDependencyGraph {
    pub fn edgeless(target: impl Into<FunctionId>, neighbors: Vec<FunctionId>) -> Self {
        LocalDependencyGraph {
            target: target.into(),
            neighbors,
            edges: BTreeSet::new(),
            judge_failed: false,
        }
    }

    /// Out-neighbours in sorted order.
    pub fn out_neighbors(&self) -> Vec<&str> {
        self.edges.iter().map(|(_, dst)| dst.as_str()).collect()
    }

    pub fn has_edge(&self, dst: &str) -> bool {
        self.edges.iter().any(|(_, d)| d == dst)
    }

    pub fn check(&self, k_cand: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(format!("graph for `{}`: {m}", self.target)));
        if self.neighbors.contains(&self.target) {
            return bad("target is among its own neighbors".into());
        }
        if self.neighbors.len() > k_cand {
            return bad(format!("{} neighbors exceed the bound {k_cand}", self.neighbors.len()));
        }
        let distinct: BTreeSet<&String> = self.neighbors.iter().collect();
        if distinct.len() != self.neighbors.len() {
            return bad("duplicate neighbor".into());
        }
        for (src, dst) in &self.edges {
            if *src != self.target || !distinct.contains(dst) {
                return bad(format!("malformed edge ({src}, {dst})"));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct GraphWire {
    neighbors: Vec<FunctionId>,
    edges: Vec<(FunctionId, FunctionId)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    judge_failed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphSet {
    pub graphs: BTreeMap<FunctionId, LocalDependencyGraph>,
}

impl GraphSet {
    pub fn get(&self, id: &str) -> Option<&LocalDependencyGraph> {
        self.graphs.get(id)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn insert(&mut self, graph: LocalDependencyGraph) {
        self.graphs.insert(graph.target.clone(), graph);
    }

    pub fn edge_count(&self) -> usize {
        self.graphs.values().map(|g| g.edges.len()).sum()
    }

    /// Check every graph against the pool and the neighbour bound.
    pub fn validate(&self, pool: &FunctionPool, k_cand: usize) -> Result<()> {
        for (key, g) in &self.graphs {
            if *key != g.target {
                return Err(Error::Precondition(format!(
                    "graph keyed `{key}` targets `{}`",
                    g.target
                )));
            }
            g.check(k_cand)?;
            for id in std::iter::once(&g.target).chain(&g.neighbors) {
                if !pool.contains(id) {
                    return Err(Error::Precondition(format!(
                        "graph for `{key}` names unknown function `{id}`"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let wire: BTreeMap<&str, GraphWire> = self
            .graphs
            .iter()
            .map(|(k, g)| {
                (
                    k.as_str(),
                    GraphWire {
                        neighbors: g.neighbors.clone(),
                        edges: g.edges.iter().cloned().collect(),
                        judge_failed: g.judge_failed,
                    },
                )
            })
            .collect();
        serde_json::to_string_pretty(&wire).expect("graph set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: BTreeMap<FunctionId, GraphWire> =
            serde_json::from_str(text).map_err(|e| Error::json("graph set", e))?;
        let mut set = GraphSet::default();
        for (target, w) in wire {
            let g = LocalDependencyGraph {
                target,
                neighbors: w.neighbors,
                edges: w.edges.into_iter().collect(),
                judge_failed: w.judge_failed,
            };
            g.check(usize::MAX)?;
            set.insert(g);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateScope {
    /// Candidates share the target's category and tool class.
    #[default]
    SameGroup,
    /// Candidates come from the whole pool.
    AnyGroup,
}

/// Draw up to `k` distinct candidate neighbours for `target`.
pub fn sample_candidates(
    pool: &FunctionPool,
    target: &str,
    k: usize,
    scope: CandidateScope,
    rng: &mut StageRng,
) -> Result<Vec<FunctionId>> {
    if k == 0 {
        return Err(Error::Precondition("candidate count must be at least 1".into()));
    }
    let sig = pool.require(target)?;
    let eligible: Vec<&FunctionSignature> = match scope {
        CandidateScope::SameGroup => pool.group(&sig.category, &sig.tool_class),
        CandidateScope::AnyGroup => pool.functions().iter().collect(),
    }
    .into_iter()
    .filter(|f| f.api_name != target)
    .collect();
    let amount = k.min(eligible.len());
    Ok(index::sample(rng, eligible.len(), amount)
        .into_iter()
        .map(|i| eligible[i].api_name.clone())
        .collect())
}

/// Judges which candidates depend on the target's outputs, over the whole batch.
pub trait DependencyJudge: Send + Sync {
    fn related(&self, target: &FunctionSignature, candidates: &[&FunctionSignature]) -> Result<Vec<String>>;
}

/// Keep the judged names that are real candidates; drop the rest with a warning.
pub fn judge_edges(
    target: &FunctionSignature,
    candidates: &[&FunctionSignature],
    judge: &dyn DependencyJudge,
) -> Result<BTreeSet<(FunctionId, FunctionId)>> {
    let named = judge.related(target, candidates)?;
    let mut edges = BTreeSet::new();
    for name in named {
        if name == target.api_name {
            log::warn!("judge listed `{name}` as its own neighbor; discarded");
        } else if candidates.iter().any(|c| c.api_name == name) {
            edges.insert((target.api_name.clone(), name));
        } else {
            log::warn!(
                "judge named `{name}`, which is not a candidate of `{}`; discarded",
                target.api_name
            );
        }
    }
    Ok(edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub k_cand: usize,
    pub scope: CandidateScope,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k_cand: DEFAULT_K_CAND,
            scope: CandidateScope::SameGroup,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub graphs: GraphSet,
    /// Targets whose judgment failed, with the error text.
    pub failures: Vec<(FunctionId, String)>,
}

pub fn build_graph_set(
    pool: &FunctionPool,
    judge: &dyn DependencyJudge,
    cfg: &GraphConfig,
    seed: u64,
) -> Result<GraphBuild> {
    let built: Vec<Result<(LocalDependencyGraph, Option<String>)>> = pool
        .functions()
        .par_iter()
        .map(|sig| {
            let mut rng = derive_rng(seed, "candidates", fnv1a(sig.api_name.as_bytes()));
            let neighbors = sample_candidates(pool, &sig.api_name, cfg.k_cand, cfg.scope, &mut rng)?;
            let mut graph = LocalDependencyGraph::edgeless(sig.api_name.clone(), neighbors);
            if graph.neighbors.is_empty() {
                return Ok((graph, None));
            }
            let cands: Vec<&FunctionSignature> =
                graph.neighbors.iter().map(|n| pool.require(n)).collect::<Result<_>>()?;
            match judge_edges(sig, &cands, judge) {
                Ok(edges) => {
                    graph.edges = edges;
                    Ok((graph, None))
                }
                Err(e) => {
                    log::warn!("dependency judgment failed for `{}`: {e}", sig.api_name);
                    graph.judge_failed = true;
                    Ok((graph, Some(e.to_string())))
                }
            }
        })
        .collect();

    let mut graphs = GraphSet::default();
    let mut failures = Vec::new();
    let mut judged = 0usize;
    for item in built {
        let (graph, failure) = item?;
        if !graph.neighbors.is_empty() {
            judged += 1;
        }
        if let Some(msg) = failure {
            failures.push((graph.target.clone(), msg));
        }
        graphs.insert(graph);
    }
    if judged > 0 && failures.len() == judged {
        return Err(Error::Judgment(format!(
            "dependency judgment failed for every target; first: {}: {}",
            failures[0].0, failures[0].1
        )));
    }
    Ok(GraphBuild { graphs, failures })
}

/// Fixed adjacency lists keyed by target; unknown targets get none.
#[derive(Debug, Clone, Default)]
pub struct FixedDependencyJudge {
    pub adjacency: BTreeMap<String, Vec<String>>,
}

impl FixedDependencyJudge {
    pub fn with(mut self, target: &str, related: &[&str]) -> Self {
        self.adjacency
            .insert(target.to_string(), related.iter().map(|s| s.to_string()).collect());
        self
    }
}

impl DependencyJudge for FixedDependencyJudge {
    fn related(&self, target: &FunctionSignature, _candidates: &[&FunctionSignature]) -> Result<Vec<String>> {
        Ok(self.adjacency.get(&target.api_name).cloned().unwrap_or_default())
    }
}

/// A candidate is related when one of the target's output fields names one
/// of the candidate's parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct IoOverlapJudge;

impl DependencyJudge for IoOverlapJudge {
    fn related(&self, target: &FunctionSignature, candidates: &[&FunctionSignature]) -> Result<Vec<String>> {
        let outputs: BTreeSet<String> = target.output_fields().into_iter().map(|(k, _)| k).collect();
        Ok(candidates
            .iter()
            .filter(|c| c.parameters.properties.keys().any(|p| outputs.contains(p)))
            .map(|c| c.api_name.clone())
            .collect())
    }
}

/// Judge backed by the adjacency-dictionary prompt.
pub struct LlmDependencyJudge {
    pub client: LlmClient,
    /// Extra samples requested when a reply cannot be parsed.
    pub parse_retries: u32,
}

impl LlmDependencyJudge {
    pub fn new(client: LlmClient) -> Self {
        LlmDependencyJudge {
            client,
            parse_retries: 1,
        }
    }
}

/// Parse an adjacency reply: a JSON object, possibly fenced or surrounded by
/// prose, whose only key is the target.
pub fn parse_adjacency(text: &str, target: &str) -> Result<Vec<String>> {
    let body = strip_code_fence(text);
    let (start, end) = match (body.find('{'), body.rfind('}')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(Error::Protocol("no JSON object in adjacency reply".into())),
    };
    let value: Json = serde_json::from_str(&body[start..=end]).map_err(|e| Error::json("adjacency reply", e))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Protocol("adjacency reply is not an object".into()))?;
    let list = match obj.get(target) {
        Some(v) => v,
        None if obj.len() == 1 => {
            let (k, v) = obj.iter().next().expect("one entry");
            log::warn!("adjacency keyed `{k}` instead of `{target}`; using it");
            v
        }
        None => return Err(Error::Protocol(format!("adjacency reply has no key `{target}`"))),
    };
    let arr = list
        .as_array()
        .ok_or_else(|| Error::Protocol("adjacency value is not a list".into()))?;
    arr.iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Protocol("adjacency entry is not a string".into()))
        })
        .collect()
}

impl DependencyJudge for LlmDependencyJudge {
    fn related(&self, target: &FunctionSignature, candidates: &[&FunctionSignature]) -> Result<Vec<String>> {
        let mut bindings = BTreeMap::new();
        bindings.insert("target", target.prompt_json().to_string());
        bindings.insert("candidates", functions_prompt_json(candidates));
        let messages = prompts::render(PromptId::DependencyJudge, &bindings)?;
        let mut last = None;
        for attempt in 0..=self.parse_retries {
            let params = ChatParams {
                sample_index: attempt,
                ..self.client.params.clone()
            };
            let text = self.client.complete_with(&messages, &params)?;
            match parse_adjacency(&text, &target.api_name) {
                Ok(list) => return Ok(list),
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Judgment(format!(
            "unparseable adjacency for `{}`: {}",
            target.api_name,
            last.expect("at least one attempt")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_parsing() {
        assert_eq!(
            parse_adjacency("```json\n{\"a\": [\"b\", \"c\"]}\n```", "a").unwrap(),
            vec!["b", "c"]
        );
        assert_eq!(parse_adjacency("Here: {\"a\": []}", "a").unwrap(), Vec::<String>::new());
        assert!(parse_adjacency("no idea", "a").is_err());
        assert!(parse_adjacency("{\"x\": [], \"y\": []}", "a").is_err());
    }
}
