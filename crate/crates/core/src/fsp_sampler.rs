//! Function signature paths (FSPs) and the random walk that seeds them.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dependency_graph::GraphSet;
use crate::error::{Error, Result};
use crate::function_pool::{FunctionId, FunctionPool};
use crate::rng::{derive_rng, StageRng};

pub const DEFAULT_STEPS: usize = 7;
pub const DEFAULT_MIN_TURNS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MissLabel {
    #[serde(rename = "miss params")]
    MissParams,
    #[serde(rename = "miss func")]
    MissFunc,
}

impl fmt::Display for MissLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissLabel::MissParams => "miss params",
            MissLabel::MissFunc => "miss func",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnGroup {
    pub functions: Vec<FunctionId>,
    pub miss_label: Option<MissLabel>,
}

impl TurnGroup {
    pub fn single(id: impl Into<FunctionId>) -> Self {
        TurnGroup {
            functions: vec![id.into()],
            miss_label: None,
        }
    }

    pub fn of(ids: &[&str]) -> Self {
        TurnGroup {
            functions: ids.iter().map(|s| s.to_string()).collect(),
            miss_label: None,
        }
    }

    pub fn missing(label: MissLabel) -> Self {
        TurnGroup {
            functions: Vec::new(),
            miss_label: Some(label),
        }
    }

    pub fn is_miss(&self) -> bool {
        self.miss_label.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub start: FunctionId,
    #[serde(default)]
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fsp {
    pub id: String,
    pub turns: Vec<TurnGroup>,
    pub seed: u64,
    pub provenance: Provenance,
}

impl Fsp {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Function ids read left to right across turns.
    pub fn flat_functions(&self) -> Vec<&str> {
        self.turns
            .iter()
            .flat_map(|t| t.functions.iter().map(String::as_str))
            .collect()
    }

    pub fn miss_index(&self) -> Option<usize> {
        self.turns.iter().position(TurnGroup::is_miss)
    }

    pub fn check(&self, pool: Option<&FunctionPool>) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(format!("fsp `{}`: {m}", self.id)));
        if self.turns.is_empty() {
            return bad("no turns".into());
        }
        let mut misses = 0;
        for (i, t) in self.turns.iter().enumerate() {
            if t.is_miss() != t.functions.is_empty() {
                return bad(format!("turn {i} must be empty exactly when it carries a miss label"));
            }
            misses += usize::from(t.is_miss());
            if let Some(pool) = pool {
                if let Some(f) = t.functions.iter().find(|f| !pool.contains(f)) {
                    return bad(format!("unknown function `{f}`"));
                }
            }
        }
        if misses > 1 {
            return bad("more than one miss-labeled turn".into());
        }
        Ok(())
    }

    pub fn to_jsonl_line(&self) -> String {
        serde_json::to_string(self).expect("fsp serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct FspWire {
    id: String,
    turns: Vec<Vec<FunctionId>>,
    miss_label_at: Option<usize>,
    label: Option<MissLabel>,
    seed: u64,
    provenance: Provenance,
}

impl Serialize for Fsp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let at = self.miss_index();
        FspWire {
            id: self.id.clone(),
            turns: self.turns.iter().map(|t| t.functions.clone()).collect(),
            miss_label_at: at,
            label: at.and_then(|i| self.turns[i].miss_label),
            seed: self.seed,
            provenance: self.provenance.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Fsp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = FspWire::deserialize(d)?;
        let mut turns: Vec<TurnGroup> = w
            .turns
            .into_iter()
            .map(|functions| TurnGroup {
                functions,
                miss_label: None,
            })
            .collect();
        match (w.miss_label_at, w.label) {
            (Some(i), Some(label)) => {
                let turn = turns
                    .get_mut(i)
                    .ok_or_else(|| D::Error::custom(format!("miss_label_at {i} is out of range")))?;
                turn.miss_label = Some(label);
            }
            (None, None) => {}
            _ => {
                return Err(D::Error::custom(
                    "miss_label_at and label must both be set or both null",
                ))
            }
        }
        let fsp = Fsp {
            id: w.id,
            turns,
            seed: w.seed,
            provenance: w.provenance,
        };
        fsp.check(None).map_err(D::Error::custom)?;
        Ok(fsp)
    }
}

pub fn parse_fsps(text: &str, context: &str) -> Result<Vec<Fsp>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{context} line {}", i + 1), e)))
        .collect()
}

pub fn fsps_to_jsonl(fsps: &[Fsp]) -> String {
    let mut out = String::new();
    for f in fsps {
        out.push_str(&f.to_jsonl_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkOptions {
    /// Never step straight back to the function visited two turns earlier.
    #[serde(default)]
    pub forbid_backtrack: bool,
}

/// Walk up to `steps` hops from `start`, choosing uniformly among the current
/// node's out-edges and stopping at sinks or nodes without a graph.
pub fn random_walk(
    graphs: &GraphSet,
    start: &str,
    steps: usize,
    opts: WalkOptions,
    rng: &mut StageRng,
) -> Result<Vec<FunctionId>> {
    if graphs.get(start).is_none() {
        return Err(Error::Precondition(format!(
            "walk start `{start}` has no dependency graph"
        )));
    }
    if steps == 0 {
        return Err(Error::Precondition("walk needs at least one step".into()));
    }
    let mut path = vec![start.to_string()];
    for _ in 0..steps {
        let current = path.last().expect("path is non-empty");
        let Some(graph) = graphs.get(current) else { break };
        let mut options = graph.out_neighbors();
        if opts.forbid_backtrack && path.len() >= 2 {
            let prev = path[path.len() - 2].as_str();
            options.retain(|n| *n != prev);
        }
        if options.is_empty() {
            break;
        }
        let next = options[rng.random_range(0..options.len())].to_string();
        path.push(next);
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub min_turns: usize,
    /// Number of FSPs wanted.
    pub count: usize,
    /// Upper bound on walks tried, as a multiple of `count`.
    pub attempts_factor: usize,
    pub walk: WalkOptions,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: DEFAULT_STEPS,
            min_turns: DEFAULT_MIN_TURNS,
            count: 100,
            attempts_factor: 10,
            walk: WalkOptions::default(),
        }
    }
}

/// Sample FSPs by cycling through the graph targets as start nodes. Walks
/// shorter than `min_turns` are discarded. Attempt `a` uses its own derived
/// seed, recorded on the FSP.
pub fn sample_fsps(graphs: &GraphSet, cfg: &SamplerConfig, seed: u64) -> Result<Vec<Fsp>> {
    let starts: Vec<&String> = graphs.graphs.keys().collect();
    if starts.is_empty() {
        return Err(Error::Precondition("no dependency graphs to walk".into()));
    }
    let mut out = Vec::with_capacity(cfg.count);
    let max_attempts = cfg.count.saturating_mul(cfg.attempts_factor.max(1));
    for attempt in 0..max_attempts {
        if out.len() >= cfg.count {
            break;
        }
        let start = starts[attempt % starts.len()];
        let walk_seed = crate::rng::derive_seed(seed, "walk", attempt as u64);
        let mut rng = derive_rng(walk_seed, "walk", 0);
        let path = random_walk(graphs, start, cfg.steps, cfg.walk, &mut rng)?;
        if path.len() < cfg.min_turns {
            continue;
        }
        out.push(Fsp {
            id: format!("fsp-{attempt:06}"),
            turns: path.into_iter().map(TurnGroup::single).collect(),
            seed: walk_seed,
            provenance: Provenance {
                start: start.clone(),
                ops: Vec::new(),
            },
        });
    }
    if out.len() < cfg.count {
        log::warn!(
            "sampled {} of {} requested FSPs within {max_attempts} walks",
            out.len(),
            cfg.count
        );
    }
    Ok(out)
}

/// Edge-consistency: each consecutive pair of single-function turns is an
/// edge of the earlier function's local graph.
pub fn is_edge_consistent(graphs: &GraphSet, path: &[FunctionId]) -> bool {
    path.windows(2)
        .all(|w| graphs.get(&w[0]).is_some_and(|g| g.has_edge(&w[1])))
}
