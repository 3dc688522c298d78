use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use magnet_core::contamination::{fsp_tokens, report as contamination_report};
use magnet_core::dependency_graph::{
    build_graph_set, CandidateScope, DependencyJudge, GraphConfig, GraphSet, IoOverlapJudge, LlmDependencyJudge,
};
use magnet_core::fsp_sampler::{fsps_to_jsonl, parse_fsps, sample_fsps, SamplerConfig, WalkOptions};
use magnet_core::function_pool::load_pool;
use magnet_core::llm_client::http::HttpConfig;
use magnet_core::llm_client::LlmClient;
use magnet_core::node_ops::{enhance_all, IoNestedJudge, LlmNestedJudge, NestedJudge, NodeOpsConfig, SplitLabel};
use magnet_core::pipeline::{self, write_atomic, LlmConfig, PipelineConfig};
use magnet_core::postprocess_mixture::{
    compute_stats, irrelevance_ratio, mix, pairs_to_jsonl, parse_pairs, parse_trajectories, trajectories_to_jsonl,
    MixtureConfig,
};
use magnet_core::rng::derive_seed;
use magnet_core::training_losses::{check_toy, mdpo_loss, LossConfig, MdpoForm, ToyInstance};
use magnet_core::trajectory_distiller::{distill_all, Agents, DistillConfig, ReferenceJudge, ReplayAgent};
use magnet_core::translation::{
    instances_to_jsonl, parse_instances, translate_all, InstanceKind, LlmTranslator, SimulatedExecutor,
    TemplateTranslator, TranslateConfig, TranslationBackend,
};
use magnet_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "magnet",
    version,
    about = "Synthesize multi-turn function-calling trajectories"
)]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per logical core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    SameGroup,
    AnyGroup,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Uniform,
    MissParams,
    MissFunc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    MultiTurn,
    SingleTurn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    LogRatio,
    AsPrinted,
}

#[derive(Args, Clone)]
struct LlmArgs {
    /// Chat-completion endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API token.
    #[arg(long, default_value = "MAGNET_API_KEY")]
    token_env: String,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    max_tokens: Option<u32>,
}

impl LlmArgs {
    fn client(&self) -> Result<LlmClient> {
        let mut cfg = LlmConfig {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            ..LlmConfig::default()
        };
        cfg.http = HttpConfig {
            token_env: self.token_env.clone(),
            ..cfg.http
        };
        if let Some(e) = &self.endpoint {
            cfg.http.endpoint = e.clone();
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        cfg.client()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build local dependency graphs for every function in a pool.
    BuildGraph {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        judge: Backend,
        #[arg(long, default_value_t = 30)]
        k_cand: usize,
        #[arg(long, value_enum, default_value = "same-group")]
        scope: Scope,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Sample function signature paths by random walks.
    SampleFsp {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, default_value_t = 7)]
        steps: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        min_turns: usize,
        #[arg(long)]
        forbid_backtrack: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply Merge and Insert, then Split; writes both streams.
    Enhance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        merge_p: f64,
        #[arg(long, default_value_t = 0.5)]
        q_long: f64,
        #[arg(long, value_enum, default_value = "uniform")]
        split_label: Split,
        #[arg(long, value_enum, default_value = "mock")]
        judge: Backend,
        /// Enhanced paths.
        #[arg(long)]
        out: PathBuf,
        /// Split paths; defaults to `<out>.split.jsonl`.
        #[arg(long)]
        split_out: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Back-and-forth translate FSPs into query and call instances.
    Translate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        backend: Backend,
        #[arg(long, value_enum, default_value = "multi-turn")]
        kind: Kind,
        #[arg(long, default_value_t = 0.0)]
        executor_error_rate: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Distill positive trajectories and, optionally, preference pairs.
    Distill {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        teacher: Backend,
        #[arg(long, value_enum, default_value = "mock")]
        student: Backend,
        #[arg(long, value_enum, default_value = "mock")]
        judge: Backend,
        #[arg(long)]
        negatives: bool,
        #[arg(long, default_value_t = 10)]
        rollouts: u32,
        /// Deviation rate of the mock student.
        #[arg(long, default_value_t = 0.5)]
        student_error_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        executor_error_rate: f64,
        /// Positive trajectories.
        #[arg(long)]
        out: PathBuf,
        /// Preference pairs; defaults to `<out>.pairs.jsonl`.
        #[arg(long)]
        pairs_out: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Assemble a data mixture, or report the ratio when no input is given.
    Mix {
        #[arg(long)]
        single: usize,
        #[arg(long)]
        multi: usize,
        #[arg(long)]
        irrelevance: usize,
        /// Trajectory JSONL files to draw from.
        #[arg(long = "in")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset statistics.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Exact-match and n-gram overlap between FSP corpora.
    Contaminate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 2)]
        n: usize,
    },
    /// Evaluate losses and check gradients on toy instances.
    LossCheck {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, value_enum, default_value = "log-ratio")]
        form: Form,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Run the full pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn execute(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::BuildGraph {
            pool,
            out,
            judge,
            k_cand,
            scope,
            llm,
        } => {
            let pool = load_pool(&pool)?;
            let judge: Box<dyn DependencyJudge> = match judge {
                Backend::Mock => Box::new(IoOverlapJudge),
                Backend::Llm => Box::new(LlmDependencyJudge::new(llm.client()?)),
            };
            let cfg = GraphConfig {
                k_cand,
                scope: match scope {
                    Scope::SameGroup => CandidateScope::SameGroup,
                    Scope::AnyGroup => CandidateScope::AnyGroup,
                },
            };
            let built = build_graph_set(&pool, judge.as_ref(), &cfg, seed)?;
            write_atomic(&out, &built.graphs.to_json())?;
            print_json(&json!({
                "nodes": built.graphs.len(),
                "edges": built.graphs.edge_count(),
                "judge_failures": built.failures.len(),
            }));
        }
        Command::SampleFsp {
            graphs,
            steps,
            count,
            min_turns,
            forbid_backtrack,
            out,
        } => {
            let graphs = GraphSet::from_json(&read(&graphs)?)?;
            let cfg = SamplerConfig {
                steps,
                count,
                min_turns,
                walk: WalkOptions { forbid_backtrack },
                ..SamplerConfig::default()
            };
            let fsps = sample_fsps(&graphs, &cfg, seed)?;
            write_atomic(&out, &fsps_to_jsonl(&fsps))?;
            print_json(&json!({"fsps": fsps.len(), "requested": count}));
        }
        Command::Enhance {
            input,
            pool,
            graphs,
            merge_p,
            q_long,
            split_label,
            judge,
            out,
            split_out,
            llm,
        } => {
            let pool = load_pool(&pool)?;
            let graphs = GraphSet::from_json(&read(&graphs)?)?;
            let fsps = parse_fsps(&read(&input)?, &input.display().to_string())?;
            let judge: Box<dyn NestedJudge> = match judge {
                Backend::Mock => Box::new(IoNestedJudge),
                Backend::Llm => Box::new(LlmNestedJudge { client: llm.client()? }),
            };
            let cfg = NodeOpsConfig {
                merge_p,
                q_long,
                split_label: match split_label {
                    Split::Uniform => SplitLabel::Uniform,
                    Split::MissParams => SplitLabel::MissParams,
                    Split::MissFunc => SplitLabel::MissFunc,
                },
            };
            let pairs = enhance_all(&fsps, &graphs, &pool, judge.as_ref(), &cfg, seed)?;
            let (phi, hat): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let split_out = split_out.unwrap_or_else(|| with_suffix(&out, ".split.jsonl"));
            write_atomic(&out, &fsps_to_jsonl(&phi))?;
            write_atomic(&split_out, &fsps_to_jsonl(&hat))?;
            print_json(&json!({"enhanced": phi.len(), "split": hat.len(), "split_out": split_out}));
        }
        Command::Translate {
            input,
            pool,
            graphs,
            backend,
            kind,
            executor_error_rate,
            out,
            llm,
        } => {
            let pool = load_pool(&pool)?;
            let graphs = GraphSet::from_json(&read(&graphs)?)?;
            let fsps = parse_fsps(&read(&input)?, &input.display().to_string())?;
            let translator: Box<dyn TranslationBackend> = match backend {
                Backend::Mock => Box::new(TemplateTranslator {
                    seed: derive_seed(seed, "template", 0),
                }),
                Backend::Llm => Box::new(LlmTranslator { client: llm.client()? }),
            };
            let executor = SimulatedExecutor {
                seed: derive_seed(seed, "executor", 0),
                error_rate: executor_error_rate,
            };
            let (kind, cfg) = match kind {
                Kind::MultiTurn => (InstanceKind::MultiTurn, TranslateConfig::default()),
                Kind::SingleTurn => (
                    InstanceKind::SingleTurn,
                    TranslateConfig {
                        min_turns: 1,
                        ..TranslateConfig::default()
                    },
                ),
            };
            let (kept, dropped) =
                translate_all(&fsps, &pool, &graphs, translator.as_ref(), &executor, &cfg, kind, seed);
            write_atomic(&out, &instances_to_jsonl(&kept))?;
            print_json(&json!({"kept": kept.len(), "dropped": dropped}));
        }
        Command::Distill {
            input,
            pool,
            teacher,
            student,
            judge,
            negatives,
            rollouts,
            student_error_rate,
            executor_error_rate,
            out,
            pairs_out,
            llm,
        } => {
            let pool = load_pool(&pool)?;
            let instances = parse_instances(&read(&input)?, &input.display().to_string())?;
            let client = |b: Backend, mock: Arc<dyn magnet_core::llm_client::ChatBackend>| -> Result<LlmClient> {
                match b {
                    Backend::Mock => Ok(LlmClient::new(mock)),
                    Backend::Llm => llm.client(),
                }
            };
            let teacher = client(
                teacher,
                Arc::new(ReplayAgent::new(&instances, derive_seed(seed, "teacher", 0), 0.0, true)),
            )?;
            let student = client(
                student,
                Arc::new(ReplayAgent::new(
                    &instances,
                    derive_seed(seed, "student", 0),
                    student_error_rate,
                    false,
                )),
            )?;
            let judge = client(judge, Arc::new(ReferenceJudge))?;
            let executor = SimulatedExecutor {
                seed: derive_seed(seed, "executor", 0),
                error_rate: executor_error_rate,
            };
            let cfg = DistillConfig {
                rollouts,
                ..DistillConfig::default()
            };
            let agents = Agents {
                teacher: &teacher,
                student: &student,
                judge: &judge,
            };
            let result = distill_all(&instances, &pool, &agents, &executor, &cfg, negatives);
            let pairs_out = pairs_out.unwrap_or_else(|| with_suffix(&out, ".pairs.jsonl"));
            write_atomic(&out, &trajectories_to_jsonl(&result.positives))?;
            write_atomic(&pairs_out, &pairs_to_jsonl(&result.pairs))?;
            print_json(&json!({
                "positives": result.positives.len(),
                "pairs": result.pairs.len(),
                "pairs_out": pairs_out,
                "dropped": result.dropped,
            }));
        }
        Command::Mix {
            single,
            multi,
            irrelevance,
            inputs,
            out,
        } => {
            let cfg = MixtureConfig {
                n_single_turn: single,
                n_multi_turn: multi,
                n_irrelevance: irrelevance,
                seed,
            };
            let ratio = irrelevance_ratio(&cfg)?;
            let mut report = json!({
                "config": cfg,
                "total": cfg.total(),
                "irrelevance_ratio_pct": format!("{:.1}", 100.0 * ratio),
            });
            if !inputs.is_empty() {
                let out = out.ok_or_else(|| Error::Config("--out is required with --in".into()))?;
                let mut by_kind: BTreeMap<InstanceKind, Vec<_>> = BTreeMap::new();
                for p in &inputs {
                    for t in parse_trajectories(&read(p)?, &p.display().to_string())? {
                        by_kind.entry(t.kind).or_default().push(t);
                    }
                }
                let mixture = mix(&by_kind, &cfg)?;
                let manifest_path = with_suffix(&out, ".manifest.json");
                write_atomic(&out, &trajectories_to_jsonl(&mixture.dataset))?;
                write_atomic(
                    &manifest_path,
                    &serde_json::to_string_pretty(&mixture.manifest).expect("manifest serializes"),
                )?;
                report["written"] = json!(mixture.dataset.len());
                report["manifest"] = json!(manifest_path);
            }
            print_json(&report);
        }
        Command::Stats { input, pairs } => {
            let sft = parse_trajectories(&read(&input)?, &input.display().to_string())?;
            let pairs = match pairs {
                Some(p) => parse_pairs(&read(&p)?, &p.display().to_string())?,
                None => Vec::new(),
            };
            let stats = compute_stats(&sft, &pairs)?;
            print_json(&serde_json::to_value(stats).expect("stats serialize"));
        }
        Command::Contaminate { train, test, n } => {
            let load = |p: &Path| -> Result<Vec<Vec<String>>> {
                Ok(parse_fsps(&read(p)?, &p.display().to_string())?
                    .iter()
                    .map(fsp_tokens)
                    .collect())
            };
            let r = contamination_report(&load(&train)?, &load(&test)?, n)?;
            print_json(&json!({
                "exact_match_pct": format!("{:.2}", r.exact_match_pct),
                "ngram_pct": format!("{:.2}", r.ngram_pct),
                "n": r.n,
            }));
        }
        Command::LossCheck {
            instances,
            form,
            lambda,
            eta,
            step,
        } => {
            let toy: ToyInstance = serde_json::from_str(&read(&instances)?)
                .map_err(|e| Error::json(instances.display().to_string(), e))?;
            let cfg = LossConfig {
                lambda,
                eta,
                form: match form {
                    Form::LogRatio => MdpoForm::LogRatio,
                    Form::AsPrinted => MdpoForm::AsPrinted,
                },
            };
            let reports = check_toy(&toy, &cfg, step)?;
            let (_, reference) = toy.policies()?;
            let anchor = toy
                .pairs
                .iter()
                .find(|p| p.chosen.masked_count() == p.rejected.masked_count())
                .map(|p| mdpo_loss(&reference, &reference, &p.chosen, &p.rejected, &cfg))
                .transpose()?;
            let max_err = reports.iter().map(|r| r.fd_relative_error).fold(0.0, f64::max);
            print_json(&json!({
                "ln2": std::f64::consts::LN_2,
                "mdpo_at_reference": anchor,
                "fd_max_relative_error": max_err,
                "fd_ok": max_err < 1e-4,
                "pairs": reports,
            }));
        }
        Command::Run { config, out_dir } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            if cli.seed != 0 {
                cfg.seed = cli.seed;
            }
            if cli.jobs != 0 {
                cfg.jobs = cli.jobs;
            }
            let report = pipeline::run(&cfg)?;
            print_json(&serde_json::to_value(report).expect("report serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
