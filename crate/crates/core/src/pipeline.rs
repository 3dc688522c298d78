//! Stage orchestration: graph, FSP sampling, node operations, translation,
//! distillation, post-processing and statistics, each persisted to the
//! output directory and checkpointed by content hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dependency_graph::{
    build_graph_set, DependencyJudge, GraphConfig, GraphSet, IoOverlapJudge, LlmDependencyJudge,
};
use crate::error::{Error, Result};
use crate::fsp_sampler::{fsps_to_jsonl, parse_fsps, sample_fsps, Fsp, Provenance, SamplerConfig, TurnGroup};
use crate::function_pool::{load_pool, FunctionPool};
use crate::llm_client::http::{HttpChatBackend, HttpConfig};
use crate::llm_client::{ChatParams, InflightLimiter, LlmClient, RetryPolicy};
use crate::node_ops::{enhance_all, IoNestedJudge, LlmNestedJudge, NestedJudge, NodeOpsConfig};
use crate::postprocess_mixture::{
    compute_stats, default_keywords, filter_all, filter_pairs, mix, pairs_to_jsonl, parse_pairs, parse_trajectories,
    shuffle_functions, shuffle_pair, trajectories_to_jsonl, MixtureConfig,
};
use crate::rng::{derive_rng, derive_seed, fnv1a};
use crate::trajectory_distiller::{distill_all, Agents, DistillConfig, ReferenceJudge, ReplayAgent};
use crate::translation::{
    instances_to_jsonl, make_irrelevance, parse_instances, translate_all, translate_fsp, Dropped, InstanceKind,
    LlmTranslator, SimulatedExecutor, TemplateTranslator, TranslateConfig, TranslateOutcome, TranslatedInstance,
    TranslationBackend,
};

pub const STAGES: [&str; 7] = [
    "graph",
    "fsp",
    "enhance",
    "translate",
    "distill",
    "postprocess",
    "stats",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub http: HttpConfig,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub max_retries: u32,
    pub max_inflight: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            http: HttpConfig::default(),
            model: "gpt-4o".into(),
            temperature: 1.0,
            max_tokens: Some(2048),
            max_retries: 2,
            max_inflight: 8,
        }
    }
}

impl LlmConfig {
    pub fn client(&self) -> Result<LlmClient> {
        let backend = HttpChatBackend::new(self.http.clone())?;
        Ok(LlmClient::new(Arc::new(backend))
            .with_params(ChatParams {
                model: self.model.clone(),
                temperature: self.temperature,
                max_tokens: self.max_tokens,
                sample_index: 0,
            })
            .with_retry(RetryPolicy {
                max_retries: self.max_retries,
                ..RetryPolicy::default()
            })
            .with_limiter(Arc::new(InflightLimiter::new(self.max_inflight.max(1)))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Share of student rollouts that deviate from the reference.
    pub student_error_rate: f64,
    pub teacher_one_at_a_time: bool,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            student_error_rate: 0.5,
            teacher_one_at_a_time: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtraDataConfig {
    pub single_turn: usize,
    /// Parallel call sets in the parallel single-turn variant.
    pub parallel: usize,
    pub irrelevance: usize,
    /// Tool-list size for irrelevance instances.
    pub irrelevance_tools: usize,
}

impl Default for ExtraDataConfig {
    fn default() -> Self {
        ExtraDataConfig {
            single_turn: 12,
            parallel: 2,
            irrelevance: 4,
            irrelevance_tools: 3,
        }
    }
}

/// Requested mixture counts; unset means everything available.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixCounts {
    pub n_single_turn: Option<usize>,
    pub n_multi_turn: Option<usize>,
    pub n_irrelevance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pool: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses one per logical core.
    pub jobs: usize,
    pub backend: BackendKind,
    pub executor_error_rate: f64,
    pub negatives: bool,
    pub extra_keywords: Vec<String>,
    pub graph: GraphConfig,
    pub sampler: SamplerConfig,
    pub node_ops: NodeOpsConfig,
    pub translate: TranslateConfig,
    pub extra: ExtraDataConfig,
    pub distill: DistillConfig,
    pub mix: MixCounts,
    pub mock: MockConfig,
    pub llm: LlmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pool: PathBuf::from("pool.json"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            jobs: 0,
            backend: BackendKind::Mock,
            executor_error_rate: 0.0,
            negatives: true,
            extra_keywords: Vec::new(),
            graph: GraphConfig::default(),
            sampler: SamplerConfig::default(),
            node_ops: NodeOpsConfig::default(),
            translate: TranslateConfig::default(),
            extra: ExtraDataConfig::default(),
            distill: DistillConfig::default(),
            mix: MixCounts::default(),
            mock: MockConfig::default(),
            llm: LlmConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.pool.is_relative() {
            cfg.pool = base.join(&cfg.pool);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.pool.is_file() {
            return Err(Error::Config(format!("pool file not found: {}", self.pool.display())));
        }
        let rate = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        rate("executor_error_rate", self.executor_error_rate)?;
        rate("node_ops.merge_p", self.node_ops.merge_p)?;
        rate("node_ops.q_long", self.node_ops.q_long)?;
        rate("mock.student_error_rate", self.mock.student_error_rate)?;
        if self.sampler.count == 0 {
            return Err(Error::Config("sampler.count must be positive".into()));
        }
        if self.extra.parallel == 0 {
            return Err(Error::Config("extra.parallel must be positive".into()));
        }
        Ok(())
    }

    pub fn keywords(&self) -> Vec<String> {
        let mut k = default_keywords();
        k.extend(self.extra_keywords.iter().cloned());
        k
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage, 0)
    }
}

// ---------------------------------------------------------------------------
// Backends

pub struct Backends {
    pub dependency: Box<dyn DependencyJudge>,
    pub nested: Box<dyn NestedJudge>,
    pub translator: Box<dyn TranslationBackend>,
    pub executor: SimulatedExecutor,
    llm: Option<LlmClient>,
}

impl Backends {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        let executor = SimulatedExecutor {
            seed: cfg.stage_seed("executor"),
            error_rate: cfg.executor_error_rate,
        };
        Ok(match cfg.backend {
            BackendKind::Mock => Backends {
                dependency: Box::new(IoOverlapJudge),
                nested: Box::new(IoNestedJudge),
                translator: Box::new(TemplateTranslator {
                    seed: cfg.stage_seed("template"),
                }),
                executor,
                llm: None,
            },
            BackendKind::Llm => {
                let client = cfg.llm.client()?;
                Backends {
                    dependency: Box::new(LlmDependencyJudge::new(client.clone())),
                    nested: Box::new(LlmNestedJudge { client: client.clone() }),
                    translator: Box::new(LlmTranslator { client: client.clone() }),
                    executor,
                    llm: Some(client),
                }
            }
        })
    }

    /// Teacher, student and judge clients for the distillation stage.
    pub fn agents(&self, cfg: &PipelineConfig, instances: &[TranslatedInstance]) -> (LlmClient, LlmClient, LlmClient) {
        match &self.llm {
            Some(c) => (c.clone(), c.clone(), c.clone()),
            None => {
                let teacher = ReplayAgent::new(
                    instances,
                    cfg.stage_seed("teacher"),
                    0.0,
                    cfg.mock.teacher_one_at_a_time,
                );
                let student =
                    ReplayAgent::new(instances, cfg.stage_seed("student"), cfg.mock.student_error_rate, false);
                (
                    LlmClient::new(Arc::new(teacher)),
                    LlmClient::new(Arc::new(student)),
                    LlmClient::new(Arc::new(ReferenceJudge)),
                )
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Extra data

/// Single-turn FSPs cycling through single, multiple and parallel variants.
/// Returns each FSP with its parallel factor.
pub fn single_turn_fsps(pool: &FunctionPool, count: usize, parallel: usize) -> Vec<(Fsp, usize)> {
    let fns = pool.functions();
    if fns.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|i| {
            let f = &fns[i % fns.len()];
            let (cat, class) = f.group();
            let mut functions = vec![f.api_name.clone()];
            let mut par = 1;
            let variant = match i % 3 {
                0 => "single",
                1 => {
                    let group = pool.group(cat, class);
                    let pos = group.iter().position(|g| g.api_name == f.api_name).unwrap_or(0);
                    match group
                        .iter()
                        .cycle()
                        .skip(pos + 1)
                        .take(group.len())
                        .find(|g| g.api_name != f.api_name)
                    {
                        Some(g) => {
                            functions.push(g.api_name.clone());
                            "multiple"
                        }
                        None => "single",
                    }
                }
                _ => {
                    par = parallel;
                    "parallel"
                }
            };
            let fsp = Fsp {
                id: format!("st-{i:05}"),
                turns: vec![TurnGroup {
                    functions,
                    miss_label: None,
                }],
                seed: i as u64,
                provenance: Provenance {
                    start: f.api_name.clone(),
                    ops: vec![variant.to_string()],
                },
            };
            (fsp, par)
        })
        .collect()
}

/// Tool lists drawn from groups other than the target's.
pub fn irrelevance_instances(
    pool: &FunctionPool,
    backend: &dyn TranslationBackend,
    count: usize,
    tools: usize,
    seed: u64,
) -> (Vec<TranslatedInstance>, Vec<Dropped>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let fns = pool.functions();
    for i in 0..count {
        let id = format!("irr-{i:05}");
        let target = &fns[i % fns.len()];
        let others: Vec<&str> = fns
            .iter()
            .filter(|f| f.group() != target.group())
            .map(|f| f.api_name.as_str())
            .collect();
        if others.is_empty() {
            dropped.push(Dropped {
                id,
                reason: "pool has a single group".into(),
            });
            continue;
        }
        let mut rng = derive_rng(seed, "irrelevance", i as u64);
        let k = tools.clamp(1, others.len());
        let chosen: Vec<String> = sample(&mut rng, others.len(), k)
            .iter()
            .map(|j| others[j].to_string())
            .collect();
        match make_irrelevance(&id, target, chosen, backend) {
            Ok(inst) => kept.push(inst),
            Err(e) => dropped.push(Dropped {
                id,
                reason: e.to_string(),
            }),
        }
    }
    (kept, dropped)
}

// ---------------------------------------------------------------------------
// Checkpoints and reports

pub const CHECKPOINT_FILE: &str = "checkpoints.json";
pub const REPORT_FILE: &str = "run_report.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    /// File name to sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
    pub drops: Vec<Dropped>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoints {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Resumed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub status: StageStatus,
    pub counts: BTreeMap<String, usize>,
    pub drops: Vec<Dropped>,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub stages: Vec<StageReport>,
    pub wall_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write via a temporary file so readers never see partial output.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let p = dir.join(name);
    fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
}

struct StageOutput {
    files: Vec<(&'static str, String)>,
    counts: BTreeMap<String, usize>,
    drops: Vec<Dropped>,
}

impl StageOutput {
    fn new(files: Vec<(&'static str, String)>) -> Self {
        StageOutput {
            files,
            counts: BTreeMap::new(),
            drops: Vec::new(),
        }
    }

    fn count(mut self, name: &str, n: usize) -> Self {
        self.counts.insert(name.to_string(), n);
        self
    }

    fn drops(mut self, drops: Vec<Dropped>) -> Self {
        self.drops.extend(drops);
        self
    }
}

struct Runner {
    dir: PathBuf,
    checkpoints: Checkpoints,
    /// Set once any stage reruns; later stages then rerun too.
    dirty: bool,
    reports: Vec<StageReport>,
}

impl Runner {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CHECKPOINT_FILE);
        let checkpoints = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
                log::warn!("ignoring unreadable checkpoint file: {e}");
                Checkpoints::default()
            }),
            Err(_) => Checkpoints::default(),
        };
        Ok(Runner {
            dir: dir.to_path_buf(),
            checkpoints,
            dirty: false,
            reports: Vec::new(),
        })
    }

    fn input_hash(&self, inputs: &[&str]) -> Result<Vec<String>> {
        inputs
            .iter()
            .map(|f| {
                let p = self.dir.join(f);
                fs::read(&p).map(|b| sha256_hex(&b)).map_err(|e| Error::io(&p, e))
            })
            .collect()
    }

    fn resumable(&self, name: &str, key: &str) -> Option<StageRecord> {
        if self.dirty {
            return None;
        }
        let rec = self.checkpoints.stages.get(name)?;
        if rec.key != key {
            return None;
        }
        for (file, hash) in &rec.outputs {
            let bytes = fs::read(self.dir.join(file)).ok()?;
            if &sha256_hex(&bytes) != hash {
                return None;
            }
        }
        Some(rec.clone())
    }

    fn stage(
        &mut self,
        name: &str,
        settings: serde_json::Value,
        inputs: &[&str],
        run: impl FnOnce(&Path) -> Result<StageOutput>,
    ) -> Result<()> {
        let start = Instant::now();
        let key_doc = json!({"stage": name, "settings": settings, "inputs": self.input_hash(inputs)?});
        let key = sha256_hex(key_doc.to_string().as_bytes());
        if let Some(rec) = self.resumable(name, &key) {
            log::info!("stage {name}: resumed from checkpoint");
            self.reports.push(StageReport {
                name: name.to_string(),
                status: StageStatus::Resumed,
                counts: rec.counts,
                drops: rec.drops,
                wall_ms: start.elapsed().as_millis(),
            });
            return Ok(());
        }
        self.dirty = true;
        self.checkpoints.stages.remove(name);
        self.save()?;
        log::info!("stage {name}: running");
        let out = run(&self.dir)?;
        let mut outputs = BTreeMap::new();
        for (file, contents) in &out.files {
            write_atomic(&self.dir.join(file), contents)?;
            outputs.insert(file.to_string(), sha256_hex(contents.as_bytes()));
        }
        self.checkpoints.stages.insert(
            name.to_string(),
            StageRecord {
                key,
                outputs,
                counts: out.counts.clone(),
                drops: out.drops.clone(),
            },
        );
        self.save()?;
        self.reports.push(StageReport {
            name: name.to_string(),
            status: StageStatus::Ran,
            counts: out.counts,
            drops: out.drops,
            wall_ms: start.elapsed().as_millis(),
        });
        Ok(())
    }

    fn save(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.checkpoints).expect("checkpoints serialize");
        write_atomic(&self.dir.join(CHECKPOINT_FILE), &text)
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

// ---------------------------------------------------------------------------
// Run

/// Run every stage, resuming those whose checkpoint still matches.
pub fn run(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let pool = load_pool(&cfg.pool)?;
    let backends = Backends::new(cfg)?;
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    threads.install(|| run_stages(cfg, &pool, &backends))
}

fn run_stages(cfg: &PipelineConfig, pool: &FunctionPool, bk: &Backends) -> Result<RunReport> {
    let start = Instant::now();
    let mut r = Runner::open(&cfg.out_dir)?;
    let pool_text = fs::read_to_string(&cfg.pool).map_err(|e| Error::io(&cfg.pool, e))?;
    let pool_hash = sha256_hex(pool_text.as_bytes());
    let backend = to_value(&cfg.backend);

    r.stage(
        "graph",
        json!({"graph": to_value(&cfg.graph), "seed": cfg.seed, "pool": pool_hash, "backend": backend}),
        &[],
        |_| {
            let built = build_graph_set(pool, bk.dependency.as_ref(), &cfg.graph, cfg.stage_seed("graph"))?;
            let drops = built
                .failures
                .iter()
                .map(|(id, reason)| Dropped {
                    id: id.clone(),
                    reason: reason.clone(),
                })
                .collect();
            Ok(StageOutput::new(vec![("graphs.json", built.graphs.to_json())])
                .count("nodes", built.graphs.len())
                .count("edges", built.graphs.edge_count())
                .drops(drops))
        },
    )?;

    r.stage(
        "fsp",
        json!({"sampler": to_value(&cfg.sampler), "seed": cfg.seed}),
        &["graphs.json"],
        |dir| {
            let graphs = GraphSet::from_json(&read(dir, "graphs.json")?)?;
            let fsps = sample_fsps(&graphs, &cfg.sampler, cfg.stage_seed("fsp"))?;
            Ok(StageOutput::new(vec![("fsps.jsonl", fsps_to_jsonl(&fsps))]).count("fsps", fsps.len()))
        },
    )?;

    r.stage(
        "enhance",
        json!({"node_ops": to_value(&cfg.node_ops), "seed": cfg.seed, "pool": pool_hash, "backend": backend}),
        &["graphs.json", "fsps.jsonl"],
        |dir| {
            let graphs = GraphSet::from_json(&read(dir, "graphs.json")?)?;
            let fsps = parse_fsps(&read(dir, "fsps.jsonl")?, "fsps.jsonl")?;
            let pairs = enhance_all(
                &fsps,
                &graphs,
                pool,
                bk.nested.as_ref(),
                &cfg.node_ops,
                cfg.stage_seed("enhance"),
            )?;
            let flat: Vec<Fsp> = pairs.into_iter().flat_map(|(phi, hat)| [phi, hat]).collect();
            Ok(StageOutput::new(vec![("enhanced.jsonl", fsps_to_jsonl(&flat))]).count("fsps", flat.len()))
        },
    )?;

    r.stage(
        "translate",
        json!({
            "translate": to_value(&cfg.translate), "extra": to_value(&cfg.extra), "seed": cfg.seed,
            "pool": pool_hash, "backend": backend, "executor_error_rate": cfg.executor_error_rate,
        }),
        &["graphs.json", "enhanced.jsonl"],
        |dir| {
            let graphs = GraphSet::from_json(&read(dir, "graphs.json")?)?;
            let fsps = parse_fsps(&read(dir, "enhanced.jsonl")?, "enhanced.jsonl")?;
            let tseed = cfg.stage_seed("translate");
            let (mut all, mut drops) = translate_all(
                &fsps,
                pool,
                &graphs,
                bk.translator.as_ref(),
                &bk.executor,
                &cfg.translate,
                InstanceKind::MultiTurn,
                tseed,
            );
            let multi = all.len();
            let mut single = 0;
            for (fsp, par) in single_turn_fsps(pool, cfg.extra.single_turn, cfg.extra.parallel) {
                let tcfg = TranslateConfig {
                    min_turns: 1,
                    parallel: par,
                    ..cfg.translate.clone()
                };
                match translate_fsp(
                    &fsp,
                    pool,
                    &graphs,
                    bk.translator.as_ref(),
                    &bk.executor,
                    &tcfg,
                    InstanceKind::SingleTurn,
                    tseed,
                ) {
                    TranslateOutcome::Kept(i) => {
                        single += 1;
                        all.push(i);
                    }
                    TranslateOutcome::Dropped(d) => drops.push(d),
                }
            }
            let (irr, irr_drops) = irrelevance_instances(
                pool,
                bk.translator.as_ref(),
                cfg.extra.irrelevance,
                cfg.extra.irrelevance_tools,
                tseed,
            );
            let irrelevance = irr.len();
            all.extend(irr);
            drops.extend(irr_drops);
            Ok(StageOutput::new(vec![("translated.jsonl", instances_to_jsonl(&all))])
                .count("multi_turn", multi)
                .count("single_turn", single)
                .count("irrelevance", irrelevance)
                .drops(drops))
        },
    )?;

    r.stage(
        "distill",
        json!({
            "distill": to_value(&cfg.distill), "mock": to_value(&cfg.mock), "negatives": cfg.negatives,
            "seed": cfg.seed, "pool": pool_hash, "backend": backend, "executor_error_rate": cfg.executor_error_rate,
        }),
        &["translated.jsonl"],
        |dir| {
            let instances = parse_instances(&read(dir, "translated.jsonl")?, "translated.jsonl")?;
            let (teacher, student, judge) = bk.agents(cfg, &instances);
            let agents = Agents {
                teacher: &teacher,
                student: &student,
                judge: &judge,
            };
            let out = distill_all(&instances, pool, &agents, &bk.executor, &cfg.distill, cfg.negatives);
            let drops = out
                .dropped
                .into_iter()
                .map(|(id, reason)| Dropped { id, reason })
                .collect();
            Ok(StageOutput::new(vec![
                ("positives.jsonl", trajectories_to_jsonl(&out.positives)),
                ("pairs.jsonl", pairs_to_jsonl(&out.pairs)),
            ])
            .count("positives", out.positives.len())
            .count("pairs", out.pairs.len())
            .drops(drops))
        },
    )?;

    r.stage(
        "postprocess",
        json!({"mix": to_value(&cfg.mix), "keywords": cfg.keywords(), "seed": cfg.seed}),
        &["positives.jsonl", "pairs.jsonl"],
        |dir| {
            let keywords = cfg.keywords();
            let positives = parse_trajectories(&read(dir, "positives.jsonl")?, "positives.jsonl")?;
            let pairs = parse_pairs(&read(dir, "pairs.jsonl")?, "pairs.jsonl")?;
            let (kept, traj_drops) = filter_all(positives, &keywords);
            let (kept_pairs, pair_drops) = filter_pairs(pairs, &keywords);
            let sseed = cfg.stage_seed("shuffle");
            let mut by_kind: BTreeMap<InstanceKind, Vec<_>> = BTreeMap::new();
            for t in &kept {
                let mut rng = derive_rng(sseed, "trajectory", fnv1a(t.id.as_bytes()));
                by_kind.entry(t.kind).or_default().push(shuffle_functions(t, &mut rng));
            }
            let shuffled_pairs: Vec<_> = kept_pairs
                .iter()
                .map(|p| shuffle_pair(p, &mut derive_rng(sseed, "pair", fnv1a(p.id.as_bytes()))))
                .collect();
            let available = |k: InstanceKind| by_kind.get(&k).map(Vec::len).unwrap_or(0);
            let mcfg = MixtureConfig {
                n_single_turn: cfg.mix.n_single_turn.unwrap_or(available(InstanceKind::SingleTurn)),
                n_multi_turn: cfg.mix.n_multi_turn.unwrap_or(available(InstanceKind::MultiTurn)),
                n_irrelevance: cfg.mix.n_irrelevance.unwrap_or(available(InstanceKind::Irrelevance)),
                seed: cfg.stage_seed("mix"),
            };
            let mixture = mix(&by_kind, &mcfg)?;
            let drops = traj_drops
                .into_iter()
                .chain(pair_drops)
                .map(|d| Dropped {
                    id: d.id,
                    reason: format!("keyword `{}` in tool output at turn {}", d.keyword, d.turn),
                })
                .collect();
            let manifest = serde_json::to_string_pretty(&mixture.manifest).expect("manifest serializes");
            Ok(StageOutput::new(vec![
                ("dataset.jsonl", trajectories_to_jsonl(&mixture.dataset)),
                ("preference.jsonl", pairs_to_jsonl(&shuffled_pairs)),
                ("manifest.json", manifest),
            ])
            .count("dataset", mixture.dataset.len())
            .count("preference", shuffled_pairs.len())
            .drops(drops))
        },
    )?;

    r.stage("stats", json!({}), &["dataset.jsonl", "preference.jsonl"], |dir| {
        let sft = parse_trajectories(&read(dir, "dataset.jsonl")?, "dataset.jsonl")?;
        let pairs = parse_pairs(&read(dir, "preference.jsonl")?, "preference.jsonl")?;
        let stats = compute_stats(&sft, &pairs)?;
        let text = serde_json::to_string_pretty(&stats).expect("stats serialize");
        Ok(StageOutput::new(vec![("stats.json", text)]).count("total", stats.total))
    })?;

    let report = RunReport {
        seed: cfg.seed,
        out_dir: cfg.out_dir.clone(),
        stages: r.reports,
        wall_ms: start.elapsed().as_millis(),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&cfg.out_dir.join(REPORT_FILE), &text)?;
    Ok(report)
}
