//! Back-and-forth translation of FSPs into executed query/call turns.
//!
//! Every turn is back-translated into a user query, then each of its
//! functions is forth-translated into calls that are executed at once, so
//! later functions and turns can use the outputs.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value as Json};

use crate::dependency_graph::GraphSet;
use crate::error::{Error, Result};
use crate::fc_language::{
    extract_fc_list, parse_calls, parse_value_prefix, validate_args, FcList, FunctionCall, Value,
};
use crate::fsp_sampler::{Fsp, MissLabel};
use crate::function_pool::{FunctionId, FunctionPool, FunctionSignature, ParamType};
use crate::llm_client::{prompts, ChatParams, LlmClient, PromptId};
use crate::rng::{derive_rng, derive_seed, fnv1a, mix64, unit_interval};

pub const MAX_CALLS_PER_TURN: usize = 3;
pub const DEFAULT_ERROR_KEYWORDS: [&str; 2] = ["Bad request", "does not match"];

#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutput {
    pub call: FunctionCall,
    pub payload: Json,
    pub is_error: bool,
}

impl ToolOutput {
    pub fn error(call: FunctionCall, message: impl Into<String>) -> Self {
        ToolOutput {
            call,
            payload: json!({ "error": message.into() }),
            is_error: true,
        }
    }

    /// Payload as it appears in a tool message.
    pub fn payload_text(&self) -> String {
        match &self.payload {
            Json::String(s) => s.clone(),
            other => other.to_string(),
        }
    }

    pub fn field(&self, name: &str) -> Option<&Json> {
        if self.is_error {
            return None;
        }
        self.payload.get(name)
    }
}

#[derive(Serialize, Deserialize)]
struct ToolOutputWire {
    call: String,
    payload: Json,
    is_error: bool,
}

impl Serialize for ToolOutput {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ToolOutputWire {
            call: self.call.to_string(),
            payload: self.payload.clone(),
            is_error: self.is_error,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ToolOutput {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = ToolOutputWire::deserialize(d)?;
        let mut list = parse_calls(&w.call).map_err(D::Error::custom)?;
        if list.calls.len() != 1 {
            return Err(D::Error::custom("tool output must record exactly one call"));
        }
        Ok(ToolOutput {
            call: list.calls.remove(0),
            payload: w.payload,
            is_error: w.is_error,
        })
    }
}

pub trait Executor: Send + Sync {
    /// Execute one call. `sig` is `None` when the called name is not in the pool.
    fn execute(&self, call: &FunctionCall, sig: Option<&FunctionSignature>) -> Result<ToolOutput>;
}

/// Deterministic stand-in for real APIs: payload fields are pseudo-values
/// hashed from the seed, the function name and the sorted arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedExecutor {
    pub seed: u64,
    pub error_rate: f64,
}

impl SimulatedExecutor {
    pub fn new(seed: u64) -> Self {
        SimulatedExecutor { seed, error_rate: 0.0 }
    }

    pub fn call_hash(&self, call: &FunctionCall) -> u64 {
        let mut args: Vec<(&String, &Value)> = call.args.iter().collect();
        args.sort_by(|a, b| a.0.cmp(b.0));
        let mut canon = call.name.clone();
        for (k, v) in args {
            canon.push('|');
            canon.push_str(k);
            canon.push('=');
            canon.push_str(&v.to_string());
        }
        derive_seed(self.seed, &canon, 0)
    }
}

fn pseudo_value(field: &str, ty: Option<ParamType>, h: u64) -> Json {
    let x = mix64(h ^ fnv1a(field.as_bytes()));
    match ty {
        Some(ParamType::Integer) => json!((x % 1000) as i64 + 1),
        Some(ParamType::Number) => json!(((x % 100_000) as f64) / 100.0 + 0.5),
        Some(ParamType::Boolean) => json!(x & 1 == 1),
        Some(ParamType::Array) => json!([
            format!("{field}-{:03}", x % 1000),
            format!("{field}-{:03}", (x >> 10) % 1000)
        ]),
        Some(ParamType::Object) => json!({ "id": format!("{:08x}", x as u32) }),
        Some(ParamType::String) | None => json!(format!("{field}-{:03}", x % 1000)),
    }
}

impl Executor for SimulatedExecutor {
    fn execute(&self, call: &FunctionCall, sig: Option<&FunctionSignature>) -> Result<ToolOutput> {
        let Some(sig) = sig else {
            return Ok(ToolOutput::error(
                call.clone(),
                format!("Bad request: unknown function `{}`", call.name),
            ));
        };
        let h = self.call_hash(call);
        if self.error_rate > 0.0 && unit_interval(h ^ 0x0e44_0e44) < self.error_rate {
            let param = call.args.keys().next().map(String::as_str).unwrap_or("input");
            let msg = if h & 1 == 0 {
                format!("Bad request: invalid value for parameter `{param}`")
            } else {
                format!("Value of `{param}` does not match the expected format")
            };
            return Ok(ToolOutput::error(call.clone(), msg));
        }
        let mut obj = serde_json::Map::new();
        for (field, ty) in sig.output_fields() {
            obj.insert(field.clone(), pseudo_value(&field, ty, h));
        }
        obj.insert("request_id".into(), json!(format!("{h:016x}")));
        Ok(ToolOutput {
            call: call.clone(),
            payload: Json::Object(obj),
            is_error: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    SingleTurn,
    MultiTurn,
    Irrelevance,
}

impl InstanceKind {
    pub fn name(self) -> &'static str {
        match self {
            InstanceKind::SingleTurn => "single_turn",
            InstanceKind::MultiTurn => "multi_turn",
            InstanceKind::Irrelevance => "irrelevance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFcTurn {
    pub query: String,
    /// Functions of the FSP turn; empty for miss-labeled turns.
    pub functions: Vec<FunctionId>,
    pub miss_label: Option<MissLabel>,
    /// Set when this turn resumes a preceding miss turn.
    #[serde(default)]
    pub resumes: bool,
    pub hint_reference: String,
    pub reference_calls: FcList,
    pub outputs: Vec<ToolOutput>,
}

pub const MISS_FUNCTION_MARKER: &str = "miss function";
pub const MISS_PARAMS_MARKER: &str = "missed params";

impl QueryFcTurn {
    fn miss(query: String, label: MissLabel) -> Self {
        QueryFcTurn {
            query,
            functions: Vec::new(),
            miss_label: Some(label),
            resumes: false,
            hint_reference: match label {
                MissLabel::MissFunc => MISS_FUNCTION_MARKER.into(),
                MissLabel::MissParams => MISS_PARAMS_MARKER.into(),
            },
            reference_calls: FcList::default(),
            outputs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub fsp_id: String,
    #[serde(default)]
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatedInstance {
    pub id: String,
    pub kind: InstanceKind,
    pub system_functions: Vec<FunctionId>,
    /// Functions the user asks for but the tool list lacks.
    #[serde(default)]
    pub withheld: Vec<FunctionId>,
    pub turns: Vec<QueryFcTurn>,
    pub source_fsp_seed: u64,
    pub lineage: Lineage,
}

impl TranslatedInstance {
    pub fn call_count(&self) -> usize {
        self.turns.iter().map(|t| t.reference_calls.len()).sum()
    }
}

pub fn parse_instances(text: &str, context: &str) -> Result<Vec<TranslatedInstance>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{context} line {}", i + 1), e)))
        .collect()
}

pub fn instances_to_jsonl(items: &[TranslatedInstance]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("instance serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackMode {
    Plain,
    /// Miss-params turn: leave out this parameter of the first function.
    OmitParam {
        param: String,
    },
    /// Miss-func turn: the first function is not in the tool list.
    OmitFunction,
    /// Resume a miss-params turn by supplying the withheld value.
    SupplyParam {
        param: String,
        miss_query: String,
    },
    /// Resume a miss-func turn by handing over the function.
    ProvideFunction {
        miss_query: String,
    },
}

pub struct BackRequest<'a> {
    pub turn_index: usize,
    /// Values in the query are drawn for this turn index; resumptions reuse
    /// the miss turn's index so the supplied value matches.
    pub value_turn: usize,
    pub history: &'a [QueryFcTurn],
    pub functions: Vec<&'a FunctionSignature>,
    pub mode: BackMode,
    pub parallel: usize,
    pub do_not_use: Vec<String>,
}

pub struct ForthRequest<'a> {
    pub turn_index: usize,
    pub query: &'a str,
    /// Query of the miss turn this turn resumes.
    pub resume_base: Option<&'a str>,
    pub function: &'a FunctionSignature,
    pub index_in_turn: usize,
    /// Outputs seen so far, newest first.
    pub reference_outputs: Vec<&'a ToolOutput>,
    pub history: &'a [QueryFcTurn],
    pub attempt: u32,
}

pub trait TranslationBackend: Send + Sync {
    fn back_translate(&self, req: &BackRequest) -> Result<String>;
    /// Raw reply in the `Thought:` / `Answer:` format.
    fn forth_translate(&self, req: &ForthRequest) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForthReply {
    Calls(FcList),
    Finish,
}

/// Parse the `Answer:` section of a forth-translation reply.
pub fn parse_forth_reply(text: &str) -> Result<ForthReply> {
    let answer = match text.rfind("Answer:") {
        Some(i) => &text[i + "Answer:".len()..],
        None => text,
    };
    let answer = crate::llm_client::strip_code_fence(answer.trim());
    if answer.starts_with("FINISH") {
        return Ok(ForthReply::Finish);
    }
    if let Ok(list) = parse_calls(answer) {
        if !list.is_empty() {
            return Ok(ForthReply::Calls(list));
        }
    }
    extract_fc_list(answer)
        .map(ForthReply::Calls)
        .ok_or_else(|| Error::Protocol(format!("no call list in forth-translation answer `{answer}`")))
}

fn check_calls(list: &FcList, sig: &FunctionSignature, room: usize) -> Result<()> {
    if list.len() > room {
        return Err(Error::Protocol(format!(
            "{} calls for `{}` exceed the per-turn limit of {MAX_CALLS_PER_TURN}",
            list.len(),
            sig.api_name
        )));
    }
    for call in &list.calls {
        if call.name != sig.api_name {
            return Err(Error::Protocol(format!(
                "call to `{}` where `{}` was expected",
                call.name, sig.api_name
            )));
        }
        let report = validate_args(call, sig)?;
        if !report.ok() {
            return Err(Error::Protocol(format!(
                "invalid arguments for `{}`: {report}",
                sig.api_name
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslateConfig {
    pub min_turns: usize,
    /// Extra forth-translation samples after an invalid answer.
    pub validation_retries: u32,
    /// Unrelated functions from the same group added to the tool list.
    pub distractors: usize,
    /// Parallel call sets requested per function (single-turn parallel data).
    pub parallel: usize,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        TranslateConfig {
            min_turns: 2,
            validation_retries: 1,
            distractors: 2,
            parallel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TranslateOutcome {
    Kept(TranslatedInstance),
    Dropped(Dropped),
}

struct MissPlan {
    index: usize,
    label: MissLabel,
    /// Functions the miss query describes.
    target: Vec<FunctionId>,
    withheld: Option<FunctionId>,
    /// Whether the next FSP turn resumes the miss turn.
    resume: bool,
    omit_param: Option<String>,
}

fn plan_miss(fsp: &Fsp, pool: &FunctionPool, graphs: &GraphSet) -> Result<Option<MissPlan>> {
    let Some(m) = fsp.miss_index() else { return Ok(None) };
    let label = fsp.turns[m].miss_label.expect("miss index has a label");
    let next = fsp.turns.get(m + 1).filter(|t| !t.functions.is_empty());
    let prev = m
        .checked_sub(1)
        .map(|i| &fsp.turns[i])
        .filter(|t| !t.functions.is_empty());
    match label {
        MissLabel::MissParams => {
            let (target, resume) = match (next, prev) {
                (Some(t), _) => (t.functions.clone(), true),
                (None, Some(t)) => (t.functions.clone(), false),
                (None, None) => return Err(Error::Precondition("miss turn has no neighbouring turn".into())),
            };
            let sig = pool.require(&target[0])?;
            let param = sig.parameters.required.last().cloned().ok_or_else(|| {
                Error::Precondition(format!(
                    "miss-params target `{}` has no required parameters",
                    sig.api_name
                ))
            })?;
            Ok(Some(MissPlan {
                index: m,
                label,
                target,
                withheld: None,
                resume,
                omit_param: Some(param),
            }))
        }
        MissLabel::MissFunc => {
            let used_before: BTreeSet<&str> = fsp.turns[..m]
                .iter()
                .flat_map(|t| t.functions.iter().map(String::as_str))
                .collect();
            if let Some(t) = next {
                if !used_before.contains(t.functions[0].as_str()) {
                    return Ok(Some(MissPlan {
                        index: m,
                        label,
                        target: t.functions.clone(),
                        withheld: Some(t.functions[0].clone()),
                        resume: true,
                        omit_param: None,
                    }));
                }
            }
            let present: BTreeSet<&str> = fsp.flat_functions().into_iter().collect();
            let from_graph = prev
                .and_then(|t| t.functions.last())
                .and_then(|last| graphs.get(last))
                .and_then(|g| {
                    let mut ns: Vec<&String> = g.neighbors.iter().filter(|n| !present.contains(n.as_str())).collect();
                    ns.sort();
                    ns.first().map(|s| s.to_string())
                });
            let ghost = from_graph
                .or_else(|| {
                    pool.functions()
                        .iter()
                        .map(|f| &f.api_name)
                        .find(|n| !present.contains(n.as_str()))
                        .cloned()
                })
                .ok_or_else(|| Error::Precondition("no function left to withhold".into()))?;
            Ok(Some(MissPlan {
                index: m,
                label,
                target: vec![ghost.clone()],
                withheld: Some(ghost),
                resume: false,
                omit_param: None,
            }))
        }
    }
}

fn sigs<'a>(pool: &'a FunctionPool, ids: &[FunctionId]) -> Result<Vec<&'a FunctionSignature>> {
    ids.iter().map(|id| pool.require(id)).collect()
}

/// Translate one FSP turn by turn, executing each turn's calls before the
/// next turn is translated.
#[allow(clippy::too_many_arguments)]
pub fn translate_fsp(
    fsp: &Fsp,
    pool: &FunctionPool,
    graphs: &GraphSet,
    backend: &dyn TranslationBackend,
    executor: &dyn Executor,
    cfg: &TranslateConfig,
    kind: InstanceKind,
    seed: u64,
) -> TranslateOutcome {
    match translate_inner(fsp, pool, graphs, backend, executor, cfg, kind, seed) {
        Ok(outcome) => outcome,
        Err(e) => TranslateOutcome::Dropped(Dropped {
            id: fsp.id.clone(),
            reason: e.to_string(),
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn translate_inner(
    fsp: &Fsp,
    pool: &FunctionPool,
    graphs: &GraphSet,
    backend: &dyn TranslationBackend,
    executor: &dyn Executor,
    cfg: &TranslateConfig,
    kind: InstanceKind,
    seed: u64,
) -> Result<TranslateOutcome> {
    fsp.check(Some(pool))?;
    let plan = plan_miss(fsp, pool, graphs)?;
    let withheld: Vec<FunctionId> = plan.iter().filter_map(|p| p.withheld.clone()).collect();
    let mut turns: Vec<QueryFcTurn> = Vec::with_capacity(fsp.turns.len());
    let mut finished_at = None;

    for (h, group) in fsp.turns.iter().enumerate() {
        if let Some(p) = plan.as_ref().filter(|p| p.index == h) {
            let mode = match p.label {
                MissLabel::MissParams => BackMode::OmitParam {
                    param: p.omit_param.clone().expect("planned"),
                },
                MissLabel::MissFunc => BackMode::OmitFunction,
            };
            let req = BackRequest {
                turn_index: h,
                value_turn: h,
                history: &turns,
                functions: sigs(pool, &p.target)?,
                mode,
                parallel: 1,
                do_not_use: withheld.clone(),
            };
            let query = backend.back_translate(&req)?;
            non_empty(&query, h)?;
            turns.push(QueryFcTurn::miss(query, p.label));
            continue;
        }

        let resuming = plan.as_ref().filter(|p| p.resume && p.index + 1 == h);
        let (mode, value_turn) = match resuming {
            Some(p) => {
                let miss_query = turns[p.index].query.clone();
                let mode = match p.label {
                    MissLabel::MissParams => BackMode::SupplyParam {
                        param: p.omit_param.clone().expect("planned"),
                        miss_query,
                    },
                    MissLabel::MissFunc => BackMode::ProvideFunction { miss_query },
                };
                (mode, p.index)
            }
            None => (BackMode::Plain, h),
        };
        let group_sigs = sigs(pool, &group.functions)?;
        let query = backend.back_translate(&BackRequest {
            turn_index: h,
            value_turn,
            history: &turns,
            functions: group_sigs.clone(),
            mode,
            parallel: cfg.parallel.max(1),
            do_not_use: withheld.clone(),
        })?;
        non_empty(&query, h)?;
        let resume_base = resuming.map(|p| turns[p.index].query.clone());

        let mut calls = Vec::new();
        let mut outputs: Vec<ToolOutput> = Vec::new();
        let mut finished = false;
        for (i, sig) in group_sigs.iter().enumerate() {
            let room = MAX_CALLS_PER_TURN.saturating_sub(calls.len());
            let mut reference: Vec<&ToolOutput> = outputs.iter().rev().collect();
            reference.extend(turns.iter().rev().flat_map(|t| t.outputs.iter().rev()));
            let mut last_err = None;
            let mut reply = None;
            for attempt in 0..=cfg.validation_retries {
                let req = ForthRequest {
                    turn_index: h,
                    query: &query,
                    resume_base: resume_base.as_deref(),
                    function: sig,
                    index_in_turn: i,
                    reference_outputs: reference.clone(),
                    history: &turns,
                    attempt,
                };
                let text = backend.forth_translate(&req)?;
                match parse_forth_reply(&text).and_then(|r| {
                    if let ForthReply::Calls(list) = &r {
                        check_calls(list, sig, room)?;
                    }
                    Ok(r)
                }) {
                    Ok(r) => {
                        reply = Some(r);
                        break;
                    }
                    Err(e) => {
                        log::warn!("forth translation of `{}` at turn {h} rejected: {e}", sig.api_name);
                        last_err = Some(e);
                    }
                }
            }
            match reply {
                Some(ForthReply::Finish) => {
                    finished = true;
                    break;
                }
                Some(ForthReply::Calls(list)) => {
                    for call in list.calls {
                        outputs.push(executor.execute(&call, Some(sig))?);
                        calls.push(call);
                    }
                }
                None => {
                    return Err(last_err.expect("an attempt was made"));
                }
            }
        }
        if finished {
            finished_at = Some(h);
            break;
        }
        let reference_calls = FcList::new(calls);
        turns.push(QueryFcTurn {
            query,
            functions: group.functions.clone(),
            miss_label: None,
            resumes: resuming.is_some(),
            hint_reference: reference_calls.hint_text(),
            reference_calls,
            outputs,
        });
    }

    if let Some(h) = finished_at {
        if turns.len() < cfg.min_turns {
            return Ok(TranslateOutcome::Dropped(Dropped {
                id: fsp.id.clone(),
                reason: format!("FINISH at turn {h} leaves {} turn(s)", turns.len()),
            }));
        }
    }
    if turns.len() < cfg.min_turns.max(1) {
        return Ok(TranslateOutcome::Dropped(Dropped {
            id: fsp.id.clone(),
            reason: format!("only {} turn(s)", turns.len()),
        }));
    }

    let system_functions = tool_list(&turns, &withheld, pool, cfg.distractors, seed, &fsp.id)?;
    Ok(TranslateOutcome::Kept(TranslatedInstance {
        id: fsp.id.clone(),
        kind,
        system_functions,
        withheld,
        turns,
        source_fsp_seed: fsp.seed,
        lineage: Lineage {
            fsp_id: fsp.id.clone(),
            ops: fsp.provenance.ops.clone(),
        },
    }))
}

fn non_empty(query: &str, h: usize) -> Result<()> {
    if query.trim().is_empty() {
        return Err(Error::Protocol(format!("empty query for turn {h}")));
    }
    Ok(())
}

/// Functions used by the turns, in order of first use, then distractors
/// from the first function's group. Withheld functions never appear.
fn tool_list(
    turns: &[QueryFcTurn],
    withheld: &[FunctionId],
    pool: &FunctionPool,
    distractors: usize,
    seed: u64,
    id: &str,
) -> Result<Vec<FunctionId>> {
    let mut list: Vec<FunctionId> = Vec::new();
    for f in turns.iter().flat_map(|t| &t.functions) {
        if !withheld.contains(f) && !list.contains(f) {
            list.push(f.clone());
        }
    }
    let Some(first) = list.first() else {
        return Ok(list);
    };
    let sig = pool.require(first)?;
    let spare: Vec<&FunctionSignature> = pool
        .group(&sig.category, &sig.tool_class)
        .into_iter()
        .filter(|f| !list.contains(&f.api_name) && !withheld.contains(&f.api_name))
        .collect();
    let mut rng = derive_rng(seed, "distractors", fnv1a(id.as_bytes()));
    let take = distractors.min(spare.len());
    let mut picked: Vec<usize> = index::sample(&mut rng, spare.len(), take).into_vec();
    picked.sort_unstable();
    list.extend(picked.into_iter().map(|i| spare[i].api_name.clone()));
    Ok(list)
}

/// Translate many FSPs concurrently; results keep input order.
#[allow(clippy::too_many_arguments)]
pub fn translate_all(
    fsps: &[Fsp],
    pool: &FunctionPool,
    graphs: &GraphSet,
    backend: &dyn TranslationBackend,
    executor: &dyn Executor,
    cfg: &TranslateConfig,
    kind: InstanceKind,
    seed: u64,
) -> (Vec<TranslatedInstance>, Vec<Dropped>) {
    let outcomes: Vec<TranslateOutcome> = fsps
        .par_iter()
        .map(|f| translate_fsp(f, pool, graphs, backend, executor, cfg, kind, seed))
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for o in outcomes {
        match o {
            TranslateOutcome::Kept(i) => kept.push(i),
            TranslateOutcome::Dropped(d) => {
                log::warn!("dropped `{}`: {}", d.id, d.reason);
                dropped.push(d);
            }
        }
    }
    (kept, dropped)
}

/// An irrelevance instance: a query for `target` answered against a tool
/// list from other groups, so the reference action is a refusal.
pub fn make_irrelevance(
    id: &str,
    target: &FunctionSignature,
    tools: Vec<FunctionId>,
    backend: &dyn TranslationBackend,
) -> Result<TranslatedInstance> {
    if tools.contains(&target.api_name) {
        return Err(Error::Precondition(format!(
            "irrelevance tools include the target `{}`",
            target.api_name
        )));
    }
    let withheld = vec![target.api_name.clone()];
    let query = backend.back_translate(&BackRequest {
        turn_index: 0,
        value_turn: 0,
        history: &[],
        functions: vec![target],
        mode: BackMode::OmitFunction,
        parallel: 1,
        do_not_use: withheld.clone(),
    })?;
    non_empty(&query, 0)?;
    Ok(TranslatedInstance {
        id: id.to_string(),
        kind: InstanceKind::Irrelevance,
        system_functions: tools,
        withheld,
        turns: vec![QueryFcTurn::miss(query, MissLabel::MissFunc)],
        source_fsp_seed: 0,
        lineage: Lineage {
            fsp_id: id.to_string(),
            ops: vec!["irrelevance".into()],
        },
    })
}

// ---------------------------------------------------------------------------
// Template mock

/// Deterministic translator. Back-translation writes
/// `I need to <description> with <param> <literal> and ...`, one segment per
/// function joined by `, and then `; parameters that earlier outputs provide
/// are referred to instead of spelled out. Forth-translation reads the
/// literals and references back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateTranslator {
    pub seed: u64,
}

const SEGMENT_JOIN: &str = ", and then ";
const PARALLEL_JOIN: &str = ". Also do the same with ";
const SUPPLY_PREFIX: &str = "Sorry, I forgot to mention it: ";
const PROVIDE_PREFIX: &str = "I have added the function you need: ";

impl TemplateTranslator {
    pub fn value(&self, function: &str, param: &str, ty: ParamType, turn: usize) -> Value {
        let h = derive_seed(
            self.seed,
            "value",
            fnv1a(format!("{function}|{param}|{turn}").as_bytes()),
        );
        match ty {
            ParamType::String => Value::Str(format!("{param}-{:03}", h % 1000)),
            ParamType::Integer => Value::Int((h % 100) as i64 + 1),
            ParamType::Number => Value::Float(((h % 10_000) as f64) / 100.0 + 0.5),
            ParamType::Boolean => Value::Bool(h & 1 == 1),
            ParamType::Array => Value::List(vec![
                Value::Str(format!("{param}-{:03}", h % 1000)),
                Value::Str(format!("{param}-{:03}", (h >> 10) % 1000)),
            ]),
            ParamType::Object => Value::Null,
        }
    }

    fn phrase(sig: &FunctionSignature) -> String {
        let d = sig.api_description.trim().trim_end_matches('.');
        if d.is_empty() {
            return format!("use the {} service", sig.tool_name);
        }
        let mut chars = d.chars();
        let first = chars.next().expect("non-empty");
        first.to_lowercase().chain(chars).collect()
    }

    /// Reference phrase for `param` if an earlier function of this turn or
    /// an executed output provides it.
    fn reference(param: &str, earlier: &[&FunctionSignature], history: &[QueryFcTurn]) -> Option<String> {
        if earlier
            .iter()
            .any(|f| f.output_fields().iter().any(|(k, _)| k == param))
        {
            return Some(format!("the {param} it returns"));
        }
        let mut executed = history.iter().rev().filter(|t| !t.outputs.is_empty());
        if let Some(last) = executed.next() {
            if last.outputs.iter().any(|o| o.field(param).is_some()) {
                return Some(format!("the {param} you just found"));
            }
        }
        if executed.any(|t| t.outputs.iter().any(|o| o.field(param).is_some())) {
            return Some(format!("the {param} found earlier"));
        }
        None
    }

    fn args_phrase(&self, req: &BackRequest, i: usize, turn: usize, omit: Option<&str>, refs: bool) -> String {
        let sig = req.functions[i];
        let mut parts = Vec::new();
        for p in &sig.parameters.required {
            if omit == Some(p.as_str()) {
                continue;
            }
            let reference = if refs {
                Self::reference(p, &req.functions[..i], req.history)
            } else {
                None
            };
            match reference {
                Some(r) => parts.push(r),
                None => {
                    let ty = sig.parameters.spec(p).map(|s| s.ty).unwrap_or(ParamType::String);
                    parts.push(format!("{p} {}", self.value(&sig.api_name, p, ty, turn)));
                }
            }
        }
        parts.join(" and ")
    }

    fn group_query(&self, req: &BackRequest, omit: Option<&str>) -> String {
        let mut segs = Vec::new();
        for (i, sig) in req.functions.iter().enumerate() {
            let omit_here = if i == 0 { omit } else { None };
            let args = self.args_phrase(req, i, req.value_turn, omit_here, true);
            if args.is_empty() {
                segs.push(Self::phrase(sig));
            } else {
                segs.push(format!("{} with {args}", Self::phrase(sig)));
            }
        }
        let mut q = format!("I need to {}", segs.join(SEGMENT_JOIN));
        for k in 1..req.parallel {
            let args = self.args_phrase(req, 0, req.value_turn + 1000 * k, None, false);
            q.push_str(PARALLEL_JOIN);
            q.push_str(&args);
        }
        q.push('.');
        q
    }

    fn literal_after(text: &str, param: &str) -> Option<Value> {
        let needle = format!("{param} ");
        let mut from = 0;
        while let Some(off) = text[from..].find(&needle) {
            let at = from + off;
            let boundary = text[..at]
                .chars()
                .next_back()
                .is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
            if boundary {
                let rest = &text[at + needle.len()..];
                if let Some((v, _)) = parse_value_prefix(rest) {
                    return Some(v);
                }
                let word = rest
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .trim_end_matches(['.', ',']);
                if let Some((v @ (Value::Int(_) | Value::Float(_)), _)) = parse_value_prefix(word) {
                    return Some(v);
                }
            }
            from = at + needle.len();
        }
        None
    }

    fn referenced(text: &str, param: &str) -> bool {
        ["it returns", "you just found", "found earlier"]
            .iter()
            .any(|tail| text.contains(&format!("the {param} {tail}")))
    }

    fn split_query(base: &str) -> (Vec<&str>, Vec<&str>) {
        let body = base.strip_prefix("I need to ").unwrap_or(base);
        let body = body.strip_suffix('.').unwrap_or(body);
        let mut parts = body.split(PARALLEL_JOIN);
        let main = parts.next().unwrap_or("");
        (main.split(SEGMENT_JOIN).collect(), parts.collect())
    }
}

impl TranslationBackend for TemplateTranslator {
    fn back_translate(&self, req: &BackRequest) -> Result<String> {
        if req.functions.is_empty() {
            return Err(Error::Precondition("back translation without functions".into()));
        }
        Ok(match &req.mode {
            BackMode::Plain | BackMode::OmitFunction => self.group_query(req, None),
            BackMode::OmitParam { param } => self.group_query(req, Some(param)),
            BackMode::SupplyParam { param, .. } => {
                let sig = req.functions[0];
                match Self::reference(param, &[], req.history) {
                    Some(r) => format!("{SUPPLY_PREFIX}use {r}."),
                    None => {
                        let ty = sig.parameters.spec(param).map(|s| s.ty).unwrap_or(ParamType::String);
                        format!(
                            "{SUPPLY_PREFIX}{param} {}.",
                            self.value(&sig.api_name, param, ty, req.value_turn)
                        )
                    }
                }
            }
            BackMode::ProvideFunction { .. } => {
                format!("{PROVIDE_PREFIX}{} Please go ahead.", req.functions[0].prompt_json())
            }
        })
    }

    fn forth_translate(&self, req: &ForthRequest) -> Result<String> {
        let base = req.resume_base.unwrap_or(req.query);
        let (segments, extras) = Self::split_query(base);
        let segment = segments.get(req.index_in_turn).copied().unwrap_or(base);
        let sig = req.function;
        let resolve = |p: &str, texts: &[&str]| -> Option<Value> {
            for t in texts {
                if let Some(v) = Self::literal_after(t, p) {
                    return Some(v);
                }
            }
            if texts.iter().any(|t| Self::referenced(t, p)) {
                return req
                    .reference_outputs
                    .iter()
                    .find_map(|o| o.field(p))
                    .map(Value::from_json);
            }
            None
        };
        let mut calls = Vec::new();
        let sets: Vec<Vec<&str>> = std::iter::once(vec![segment, req.query])
            .chain(
                if req.index_in_turn == 0 {
                    extras.clone()
                } else {
                    Vec::new()
                }
                .into_iter()
                .map(|e| vec![e, segment, req.query]),
            )
            .collect();
        for texts in sets {
            let mut call = FunctionCall::new(sig.api_name.clone());
            for p in &sig.parameters.required {
                match resolve(p, &texts) {
                    Some(v) => call.args.insert(p.clone(), v),
                    None => {
                        return Ok(format!("Thought:\nno value for `{p}` can be derived\nAnswer:\nFINISH"));
                    }
                };
            }
            calls.push(call);
        }
        let params: Vec<&str> = sig.parameters.required.iter().map(String::as_str).collect();
        Ok(format!(
            "Thought:\ntake {} from the query and the earlier outputs\nAnswer:\n{}",
            if params.is_empty() {
                "nothing".to_string()
            } else {
                params.join(", ")
            },
            FcList::new(calls).hint_text()
        ))
    }
}

// ---------------------------------------------------------------------------
// LLM-backed translator

pub struct LlmTranslator {
    pub client: LlmClient,
}

fn history_text(history: &[QueryFcTurn]) -> String {
    if history.is_empty() {
        return "None".to_string();
    }
    let n = history.len();
    history
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let prefix = if i + 1 == n { "[Last Round] " } else { "" };
            let calls = if t.reference_calls.is_empty() {
                "(no function call)".to_string()
            } else {
                t.reference_calls.to_string()
            };
            format!("{prefix}Round {}: {}\n{calls}", i + 1, t.query)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl TranslationBackend for LlmTranslator {
    fn back_translate(&self, req: &BackRequest) -> Result<String> {
        let last: Vec<String> = req
            .history
            .iter()
            .rev()
            .find(|t| !t.reference_calls.is_empty())
            .map(|t| t.reference_calls.calls.iter().map(|c| c.name.clone()).collect())
            .unwrap_or_else(|| vec!["start".to_string()]);
        let candidates: Vec<Json> = req.functions.iter().map(|f| f.prompt_json()).collect();
        let dict: BTreeMap<String, Vec<Json>> = last.into_iter().map(|k| (k, candidates.clone())).collect();
        let mut requirements = vec![format!(
            "Call the candidate functions in this order in a single round: {}.",
            req.functions
                .iter()
                .map(|f| f.api_name.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )];
        match &req.mode {
            BackMode::Plain => {}
            BackMode::OmitParam { param } => requirements.push(format!(
                "Leave out any information about the required parameter `{param}` of `{}`.",
                req.functions[0].api_name
            )),
            BackMode::OmitFunction => requirements.push(format!(
                "The function `{}` is not available to the agent; still write the query so that it needs it.",
                req.functions[0].api_name
            )),
            BackMode::SupplyParam { param, miss_query } => requirements.push(format!(
                "The previous query `{miss_query}` did not give `{param}`. Write a short reply that only supplies a value for it."
            )),
            BackMode::ProvideFunction { miss_query } => requirements.push(format!(
                "The previous query `{miss_query}` needed a function the agent lacked. Write a short reply that hands over this function: {}",
                req.functions[0].prompt_json()
            )),
        }
        if req.parallel > 1 {
            requirements.push(format!("Ask for {} different sets of parameter values.", req.parallel));
        }
        requirements.push("Return only the query.".into());
        let mut b = BTreeMap::new();
        b.insert("history", history_text(req.history));
        b.insert("candidates", serde_json::to_string(&dict).expect("json"));
        b.insert(
            "do_not_use",
            if req.do_not_use.is_empty() {
                "None".into()
            } else {
                req.do_not_use.join(", ")
            },
        );
        b.insert("requirements", requirements.join("\n"));
        let messages = prompts::render(PromptId::BackTranslate, &b)?;
        Ok(self.client.complete(&messages)?.trim().to_string())
    }

    fn forth_translate(&self, req: &ForthRequest) -> Result<String> {
        let reference: Vec<&Json> = req.reference_outputs.iter().map(|o| &o.payload).collect();
        let query = match req.resume_base {
            Some(base) => format!("{base}\n{}", req.query),
            None => req.query.to_string(),
        };
        let mut b = BTreeMap::new();
        b.insert("history", history_text(req.history));
        b.insert("reference_output", serde_json::to_string(&reference).expect("json"));
        b.insert("candidate", req.function.prompt_json().to_string());
        b.insert("query", query);
        let messages = prompts::render(PromptId::ForthTranslate, &b)?;
        let params = ChatParams {
            sample_index: req.attempt,
            ..self.client.params.clone()
        };
        self.client.complete_with(&messages, &params)
    }
}
