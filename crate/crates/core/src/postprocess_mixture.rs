//! Function-order shuffling, keyword filtering, data mixing and dataset
//! statistics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, StageRng};
use crate::trajectory_distiller::{Trajectory, TrajectoryPair};
use crate::translation::InstanceKind;

pub const DEFAULT_FILTER_KEYWORDS: [&str; 2] = ["Bad request", "does not match"];

/// Permute the system function list in place of the original order.
pub fn shuffle_functions(traj: &Trajectory, rng: &mut StageRng) -> Trajectory {
    let mut out = traj.clone();
    out.system_functions.shuffle(rng);
    out
}

/// Shuffle both sides of a pair with one permutation.
pub fn shuffle_pair(pair: &TrajectoryPair, rng: &mut StageRng) -> TrajectoryPair {
    let mut out = pair.clone();
    out.positive.system_functions.shuffle(rng);
    out.negative.system_functions = out.positive.system_functions.clone();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum FilterVerdict {
    Keep,
    /// `turn` counts from 1.
    Drop {
        keyword: String,
        turn: usize,
    },
}

impl FilterVerdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, FilterVerdict::Keep)
    }
}

/// Case-sensitive substring search over tool-output payloads only.
pub fn keyword_filter(traj: &Trajectory, keywords: &[String]) -> FilterVerdict {
    for (turn, output) in traj.tool_outputs() {
        let text = output.payload_text();
        if let Some(k) = keywords.iter().find(|k| !k.is_empty() && text.contains(k.as_str())) {
            return FilterVerdict::Drop {
                keyword: k.clone(),
                turn: turn + 1,
            };
        }
    }
    FilterVerdict::Keep
}

pub fn default_keywords() -> Vec<String> {
    DEFAULT_FILTER_KEYWORDS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDrop {
    pub id: String,
    pub keyword: String,
    pub turn: usize,
}

/// Split into kept trajectories and drop records, preserving input order.
pub fn filter_all(trajs: Vec<Trajectory>, keywords: &[String]) -> (Vec<Trajectory>, Vec<FilterDrop>) {
    let verdicts: Vec<FilterVerdict> = trajs.par_iter().map(|t| keyword_filter(t, keywords)).collect();
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for (t, v) in trajs.into_iter().zip(verdicts) {
        match v {
            FilterVerdict::Keep => kept.push(t),
            FilterVerdict::Drop { keyword, turn } => drops.push(FilterDrop {
                id: t.id,
                keyword,
                turn,
            }),
        }
    }
    (kept, drops)
}

/// Pairs are judged by their positive side.
pub fn filter_pairs(pairs: Vec<TrajectoryPair>, keywords: &[String]) -> (Vec<TrajectoryPair>, Vec<FilterDrop>) {
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for p in pairs {
        match keyword_filter(&p.positive, keywords) {
            FilterVerdict::Keep => kept.push(p),
            FilterVerdict::Drop { keyword, turn } => drops.push(FilterDrop {
                id: p.id,
                keyword,
                turn,
            }),
        }
    }
    (kept, drops)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub n_single_turn: usize,
    pub n_multi_turn: usize,
    pub n_irrelevance: usize,
    pub seed: u64,
}

impl MixtureConfig {
    pub fn total(&self) -> usize {
        self.n_single_turn + self.n_multi_turn + self.n_irrelevance
    }

    pub fn count(&self, kind: InstanceKind) -> usize {
        match kind {
            InstanceKind::SingleTurn => self.n_single_turn,
            InstanceKind::MultiTurn => self.n_multi_turn,
            InstanceKind::Irrelevance => self.n_irrelevance,
        }
    }
}

/// `irrelevance / total`, as a fraction.
pub fn irrelevance_ratio(cfg: &MixtureConfig) -> Result<f64> {
    if cfg.total() == 0 {
        return Err(Error::Precondition("empty mixture".into()));
    }
    Ok(cfg.n_irrelevance as f64 / cfg.total() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub config: MixtureConfig,
    pub selected: BTreeMap<String, Vec<String>>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub dataset: Vec<Trajectory>,
    pub manifest: MixManifest,
}

const KINDS: [InstanceKind; 3] = [
    InstanceKind::SingleTurn,
    InstanceKind::MultiTurn,
    InstanceKind::Irrelevance,
];

/// Draw exact per-type counts without replacement, then shuffle globally.
pub fn mix(datasets: &BTreeMap<InstanceKind, Vec<Trajectory>>, cfg: &MixtureConfig) -> Result<Mixture> {
    if cfg.total() == 0 {
        return Err(Error::Precondition("empty mixture".into()));
    }
    let mut rng = derive_rng(cfg.seed, "mix", 0);
    let mut dataset = Vec::with_capacity(cfg.total());
    let mut selected = BTreeMap::new();
    for kind in KINDS {
        let want = cfg.count(kind);
        let pool = datasets.get(&kind).map(Vec::as_slice).unwrap_or(&[]);
        if want > pool.len() {
            return Err(Error::Precondition(format!(
                "insufficient pool for {}: requested {want}, available {}",
                kind.name(),
                pool.len()
            )));
        }
        let picks = rand::seq::index::sample(&mut rng, pool.len(), want);
        let mut ids = Vec::with_capacity(want);
        for i in picks.iter() {
            ids.push(pool[i].id.clone());
            dataset.push(pool[i].clone());
        }
        selected.insert(kind.name().to_string(), ids);
    }
    dataset.shuffle(&mut rng);
    Ok(Mixture {
        dataset,
        manifest: MixManifest {
            config: *cfg,
            selected,
            seed: cfg.seed,
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub counts: BTreeMap<String, usize>,
    pub turn_histogram: BTreeMap<usize, usize>,
    pub fc_histogram: BTreeMap<usize, usize>,
    pub sft_total: usize,
    pub preference_total: usize,
    pub total: usize,
}

/// Counts per type plus histograms over SFT trajectories and pair positives.
pub fn compute_stats(sft: &[Trajectory], pairs: &[TrajectoryPair]) -> Result<DatasetStats> {
    if sft.is_empty() && pairs.is_empty() {
        return Err(Error::Precondition("dataset is empty".into()));
    }
    let mut stats = DatasetStats::default();
    for kind in KINDS {
        stats.counts.insert(kind.name().to_string(), 0);
    }
    stats.counts.insert("preference_pair".into(), pairs.len());
    let shapes: Vec<(usize, usize)> = sft
        .par_iter()
        .chain(pairs.par_iter().map(|p| &p.positive))
        .map(|t| (t.turns.len(), t.call_count()))
        .collect();
    for t in sft {
        *stats.counts.entry(t.kind.name().to_string()).or_default() += 1;
    }
    for (turns, fcs) in shapes {
        *stats.turn_histogram.entry(turns).or_default() += 1;
        *stats.fc_histogram.entry(fcs).or_default() += 1;
    }
    stats.sft_total = sft.len();
    stats.preference_total = pairs.len();
    stats.total = stats.counts.values().sum();
    if stats.total != stats.sft_total + stats.preference_total {
        return Err(Error::Precondition("per-type counts do not sum to the total".into()));
    }
    Ok(stats)
}

pub fn trajectories_to_jsonl(items: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in items {
        out.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}

pub fn pairs_to_jsonl(items: &[TrajectoryPair]) -> String {
    let mut out = String::new();
    for p in items {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    out
}

fn parse_lines<T: serde::de::DeserializeOwned>(text: &str, context: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{context} line {}", i + 1), e)))
        .collect()
}

pub fn parse_trajectories(text: &str, context: &str) -> Result<Vec<Trajectory>> {
    parse_lines(text, context)
}

pub fn parse_pairs(text: &str, context: &str) -> Result<Vec<TrajectoryPair>> {
    parse_lines(text, context)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_rows() {
        let cfg = |n| MixtureConfig {
            n_single_turn: 20_000,
            n_multi_turn: 8_000,
            n_irrelevance: n,
            seed: 0,
        };
        assert_eq!(
            format!("{:.1}", 100.0 * irrelevance_ratio(&cfg(5_000)).unwrap()),
            "15.2"
        );
        assert_eq!(format!("{:.1}", 100.0 * irrelevance_ratio(&cfg(2_000)).unwrap()), "6.7");
        assert!(irrelevance_ratio(&MixtureConfig {
            n_single_turn: 0,
            n_multi_turn: 0,
            n_irrelevance: 0,
            seed: 0
        })
        .is_err());
    }
}
