//! Hint-based context distillation of translated instances into positive
//! and negative trajectories.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fc_language::{extract_fc_list, parse_calls, FcList, FunctionCall, Value};
use crate::function_pool::{functions_prompt_json, FunctionId, FunctionPool, FunctionSignature};
use crate::llm_client::{
    parse_yes_no_line, prompts, BackendError, ChatBackend, ChatMessage, ChatParams, LlmClient, PromptId, Role,
};
use crate::rng::{derive_seed, fnv1a, unit_interval};
use crate::translation::{
    Executor, InstanceKind, Lineage, ToolOutput, TranslatedInstance, MISS_FUNCTION_MARKER, MISS_PARAMS_MARKER,
};

pub const HINT_MARKER: &str = "[Hint]";
const HINT_PREFIX: &str = "\n[Hint]: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintKind {
    Correct,
    MissFunction,
    MissParams,
    Misleading,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hint {
    pub kind: HintKind,
    pub content: String,
}

impl Hint {
    pub fn correct(calls: &FcList) -> Self {
        Hint {
            kind: HintKind::Correct,
            content: calls.hint_text(),
        }
    }

    pub fn miss_function() -> Self {
        Hint {
            kind: HintKind::MissFunction,
            content: MISS_FUNCTION_MARKER.into(),
        }
    }

    pub fn miss_params() -> Self {
        Hint {
            kind: HintKind::MissParams,
            content: MISS_PARAMS_MARKER.into(),
        }
    }

    /// A wrong call list used as a hint; it must parse.
    pub fn misleading(text: &str) -> Result<Self> {
        let list = parse_calls(text)?;
        Ok(Hint {
            kind: HintKind::Misleading,
            content: list.hint_text(),
        })
    }
}

/// One hint per turn: the reference calls, or the marker for miss turns.
pub fn inject_hints(instance: &TranslatedInstance) -> Result<Vec<Hint>> {
    if instance.turns.is_empty() {
        return Err(Error::Precondition(format!("instance `{}` has no turns", instance.id)));
    }
    Ok(instance
        .turns
        .iter()
        .map(|t| match t.miss_label {
            Some(crate::fsp_sampler::MissLabel::MissFunc) => Hint::miss_function(),
            Some(crate::fsp_sampler::MissLabel::MissParams) => Hint::miss_params(),
            None => Hint::correct(&t.reference_calls),
        })
        .collect())
}

pub fn hinted_query(query: &str, hint: Option<&Hint>) -> String {
    match hint {
        Some(h) => format!("{query}{HINT_PREFIX}{}", h.content),
        None => query.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: String,
    pub tool_outputs: Vec<ToolOutput>,
}

impl Step {
    pub fn calls(&self) -> Option<FcList> {
        extract_fc_list(&self.action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub hint: Option<Hint>,
    pub steps: Vec<Step>,
}

impl Turn {
    /// Every call made in this turn, in order.
    pub fn calls(&self) -> FcList {
        FcList::new(
            self.steps
                .iter()
                .filter_map(Step::calls)
                .flat_map(|l| l.calls)
                .collect(),
        )
    }

    /// The turn's action as one string, for comparison and judging.
    pub fn action_text(&self) -> String {
        let calls = self.calls();
        if calls.is_empty() {
            self.steps.last().map(|s| s.action.clone()).unwrap_or_default()
        } else {
            calls.to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub kind: InstanceKind,
    pub polarity: Polarity,
    pub system_functions: Vec<FunctionId>,
    pub turns: Vec<Turn>,
    pub lineage: Lineage,
}

impl Trajectory {
    pub fn has_hint_marker(&self) -> bool {
        self.turns.iter().any(|t| {
            t.hint.is_some() || t.query.contains(HINT_MARKER) || t.steps.iter().any(|s| s.action.contains(HINT_MARKER))
        })
    }

    pub fn call_count(&self) -> usize {
        self.turns.iter().map(|t| t.calls().len()).sum()
    }

    pub fn tool_outputs(&self) -> impl Iterator<Item = (usize, &ToolOutput)> {
        self.turns.iter().enumerate().flat_map(|(i, t)| {
            t.steps
                .iter()
                .flat_map(move |s| s.tool_outputs.iter().map(move |o| (i, o)))
        })
    }
}

/// Drop hints and cut every query at the hint marker. Idempotent.
pub fn strip_hints(traj: &Trajectory) -> Trajectory {
    let mut out = traj.clone();
    for t in &mut out.turns {
        t.hint = None;
        if let Some(i) = t.query.find("[Hint]:") {
            t.query = t.query[..i].trim_end().to_string();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    /// Break multi-call actions into one step per call.
    pub split_multi_calls: bool,
    /// Assistant messages allowed per turn.
    pub max_steps: usize,
    /// Extra teacher samples after an unusable action.
    pub action_retries: u32,
    /// Student rollouts per instance when mining negative hints.
    pub rollouts: u32,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            split_multi_calls: false,
            max_steps: 6,
            action_retries: 1,
            rollouts: 10,
        }
    }
}

fn signatures<'a>(pool: &'a FunctionPool, ids: &[FunctionId]) -> Result<Vec<&'a FunctionSignature>> {
    ids.iter().map(|id| pool.require(id)).collect()
}

/// System message of every stored trajectory.
pub fn system_message(pool: &FunctionPool, functions: &[FunctionId]) -> Result<String> {
    Ok(prompts::system_prompt(&functions_prompt_json(&signatures(
        pool, functions,
    )?)))
}

fn teacher_system(pool: &FunctionPool, functions: &[FunctionId]) -> Result<String> {
    let mut b = BTreeMap::new();
    b.insert("functions", functions_prompt_json(&signatures(pool, functions)?));
    let msgs = prompts::render(PromptId::PositiveDistill, &b)?;
    Ok(msgs[0].content.clone())
}

fn push_step(messages: &mut Vec<ChatMessage>, step: &Step) {
    messages.push(ChatMessage::assistant(step.action.clone()));
    for o in &step.tool_outputs {
        messages.push(ChatMessage::tool(o.payload_text()));
    }
}

fn execute_all(calls: &FcList, pool: &FunctionPool, executor: &dyn Executor) -> Result<Vec<ToolOutput>> {
    calls
        .calls
        .iter()
        .map(|c| executor.execute(c, pool.get(&c.name)))
        .collect()
}

/// Run an agent through the instance's queries with the given hints, executing
/// every call list it emits and feeding the outputs back.
#[allow(clippy::too_many_arguments)]
pub fn sample_trajectory(
    agent: &LlmClient,
    system: String,
    instance: &TranslatedInstance,
    hints: &[Option<Hint>],
    pool: &FunctionPool,
    executor: &dyn Executor,
    cfg: &DistillConfig,
    polarity: Polarity,
) -> Result<Trajectory> {
    if instance.turns.is_empty() {
        return Err(Error::Precondition(format!("instance `{}` has no turns", instance.id)));
    }
    let mut messages = vec![ChatMessage::system(system)];
    let mut turns = Vec::with_capacity(instance.turns.len());
    for (h, qt) in instance.turns.iter().enumerate() {
        let hint = hints.get(h).cloned().flatten();
        messages.push(ChatMessage::user(hinted_query(&qt.query, hint.as_ref())));
        let mut steps: Vec<Step> = Vec::new();
        while steps.len() < cfg.max_steps.max(1) {
            let text = sample_action(agent, &messages, cfg, &instance.id, h)?;
            match extract_fc_list(&text) {
                Some(list) => {
                    let chunks: Vec<FcList> = if cfg.split_multi_calls {
                        list.calls.into_iter().map(|c| FcList::new(vec![c])).collect()
                    } else {
                        vec![list]
                    };
                    for chunk in chunks {
                        let step = Step {
                            action: chunk.to_string(),
                            tool_outputs: execute_all(&chunk, pool, executor)?,
                        };
                        push_step(&mut messages, &step);
                        steps.push(step);
                    }
                }
                None => {
                    let step = Step {
                        action: text.trim().to_string(),
                        tool_outputs: Vec::new(),
                    };
                    push_step(&mut messages, &step);
                    steps.push(step);
                    break;
                }
            }
        }
        turns.push(Turn {
            query: qt.query.clone(),
            hint,
            steps,
        });
    }
    Ok(Trajectory {
        id: instance.id.clone(),
        kind: instance.kind,
        polarity,
        system_functions: instance.system_functions.clone(),
        turns,
        lineage: instance.lineage.clone(),
    })
}

fn sample_action(
    agent: &LlmClient,
    messages: &[ChatMessage],
    cfg: &DistillConfig,
    id: &str,
    h: usize,
) -> Result<String> {
    for attempt in 0..=cfg.action_retries {
        let params = ChatParams {
            sample_index: attempt,
            ..agent.params.clone()
        };
        let text = agent.complete_with(messages, &params)?;
        if text.trim().is_empty() || text.contains(HINT_MARKER) {
            log::warn!("unusable action for `{id}` turn {h} on attempt {}", attempt + 1);
            continue;
        }
        return Ok(text);
    }
    Err(Error::Protocol(format!("no usable action for `{id}` turn {h}")))
}

/// Teacher pass with the correct hints.
pub fn sample_positive(
    teacher: &LlmClient,
    instance: &TranslatedInstance,
    pool: &FunctionPool,
    executor: &dyn Executor,
    cfg: &DistillConfig,
) -> Result<Trajectory> {
    let hints: Vec<Option<Hint>> = inject_hints(instance)?.into_iter().map(Some).collect();
    let system = teacher_system(pool, &instance.system_functions)?;
    sample_trajectory(
        teacher,
        system,
        instance,
        &hints,
        pool,
        executor,
        cfg,
        Polarity::Positive,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnJudgement {
    pub correct: bool,
    pub error_type: Option<u8>,
}

pub const ERROR_TYPES: [&str; 5] = [
    "Nested function calls",
    "Short dependency",
    "Long dependency",
    "Wrong summarization",
    "Missed function or parameters",
];

/// Parse the judge's two-line answer.
pub fn parse_judgement(text: &str) -> Result<TurnJudgement> {
    let (correct, rest) = parse_yes_no_line(text).map_err(|e| Error::Judgment(e.to_string()))?;
    if correct {
        return Ok(TurnJudgement {
            correct,
            error_type: None,
        });
    }
    let token: String = rest.trim_start().chars().take_while(|c| c.is_ascii_digit()).collect();
    match token.parse::<u8>() {
        Ok(n @ 1..=5) => Ok(TurnJudgement {
            correct: false,
            error_type: Some(n),
        }),
        _ => Err(Error::Judgment(format!(
            "expected an error type 1-5 after `no`, got `{}`",
            rest.trim()
        ))),
    }
}

pub fn render_conversation(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .filter(|m| m.role != Role::System)
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
                Role::Tool => "tool",
            };
            format!("{role}: {}", m.content)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn judge_turn(
    judge: &LlmClient,
    conversation: &str,
    model_action: &str,
    reference_action: &str,
) -> Result<TurnJudgement> {
    let mut b = BTreeMap::new();
    b.insert("conversation", conversation.to_string());
    b.insert("model_response", model_action.to_string());
    b.insert("reference_response", reference_action.to_string());
    let messages = prompts::render(PromptId::NegativeJudge, &b)?;
    parse_judgement(&judge.complete(&messages)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedHint {
    pub text: String,
    pub error_type: u8,
    pub rollout: u32,
}

pub type MinedHints = BTreeMap<usize, Vec<MinedHint>>;

/// Gold context for turn `h`: the positive trajectory up to its query, hints removed.
fn gold_context(system: &str, positive: &Trajectory, h: usize) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(system.to_string())];
    for t in &positive.turns[..h] {
        messages.push(ChatMessage::user(t.query.clone()));
        for s in &t.steps {
            push_step(&mut messages, s);
        }
    }
    messages.push(ChatMessage::user(positive.turns[h].query.clone()));
    messages
}

/// Roll the student out `k` times on every turn of the positive trajectory
/// without hints; wrong call lists become candidate misleading hints.
pub fn mine_negative_hints(
    student: &LlmClient,
    positive: &Trajectory,
    pool: &FunctionPool,
    judge: &LlmClient,
    k: u32,
) -> Result<MinedHints> {
    if k == 0 {
        return Err(Error::Precondition("at least one rollout is needed".into()));
    }
    let positive = strip_hints(positive);
    let system = system_message(pool, &positive.system_functions)?;
    let mut mined = MinedHints::new();
    for h in 0..positive.turns.len() {
        let context = gold_context(&system, &positive, h);
        let reference = positive.turns[h].action_text();
        let conversation = render_conversation(&context);
        for r in 0..k {
            let params = ChatParams {
                sample_index: r,
                ..student.params.clone()
            };
            let action = match student.complete_with(&context, &params) {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("student rollout {r} failed on `{}` turn {h}: {e}", positive.id);
                    continue;
                }
            };
            let Some(list) = extract_fc_list(&action) else { continue };
            match judge_turn(judge, &conversation, &list.to_string(), &reference) {
                Ok(TurnJudgement {
                    correct: false,
                    error_type: Some(e),
                }) => mined.entry(h).or_default().push(MinedHint {
                    text: list.hint_text(),
                    error_type: e,
                    rollout: r,
                }),
                Ok(_) => {}
                Err(e) => log::warn!("judgment skipped for `{}` turn {h}: {e}", positive.id),
            }
        }
    }
    Ok(mined)
}

/// Student pass with a misleading hint at the first mined turn and correct
/// hints elsewhere. Returns the trajectory and the turn it was misled at.
pub fn sample_negative(
    student: &LlmClient,
    instance: &TranslatedInstance,
    mined: &MinedHints,
    pool: &FunctionPool,
    executor: &dyn Executor,
    cfg: &DistillConfig,
) -> Result<(Trajectory, usize, u8)> {
    let Some((&turn, first)) = mined.iter().find(|(_, v)| !v.is_empty()) else {
        return Err(Error::Precondition(format!("no mined hints for `{}`", instance.id)));
    };
    let mut hints: Vec<Option<Hint>> = inject_hints(instance)?.into_iter().map(Some).collect();
    hints[turn] = Some(Hint::misleading(&first[0].text)?);
    let system = teacher_system(pool, &instance.system_functions)?;
    let traj = sample_trajectory(
        student,
        system,
        instance,
        &hints,
        pool,
        executor,
        cfg,
        Polarity::Negative,
    )?;
    Ok((traj, turn, first[0].error_type))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub id: String,
    pub positive: Trajectory,
    pub negative: Trajectory,
    pub misled_turn: usize,
    pub error_type: u8,
}

impl TrajectoryPair {
    /// Pairs need identical queries and tool lists and at least one differing action.
    pub fn new(positive: Trajectory, negative: Trajectory, misled_turn: usize, error_type: u8) -> Result<Self> {
        let positive = strip_hints(&positive);
        let negative = strip_hints(&negative);
        let queries = |t: &Trajectory| t.turns.iter().map(|x| x.query.clone()).collect::<Vec<_>>();
        if queries(&positive) != queries(&negative) || positive.system_functions != negative.system_functions {
            return Err(Error::Precondition(format!(
                "pair `{}` does not share queries and tools",
                positive.id
            )));
        }
        let differs = positive
            .turns
            .iter()
            .zip(&negative.turns)
            .any(|(a, b)| a.action_text() != b.action_text());
        if !differs {
            return Err(Error::Precondition(format!(
                "pair `{}` has identical actions",
                positive.id
            )));
        }
        Ok(TrajectoryPair {
            id: positive.id.clone(),
            positive,
            negative,
            misled_turn,
            error_type,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct DistillOutput {
    /// Hint-stripped positives.
    pub positives: Vec<Trajectory>,
    pub pairs: Vec<TrajectoryPair>,
    pub dropped: Vec<(String, String)>,
}

pub struct Agents<'a> {
    pub teacher: &'a LlmClient,
    pub student: &'a LlmClient,
    pub judge: &'a LlmClient,
}

/// Positive trajectories for every instance and, where the student makes
/// judged mistakes on a multi-turn instance, one preference pair.
pub fn distill_all(
    instances: &[TranslatedInstance],
    pool: &FunctionPool,
    agents: &Agents,
    executor: &dyn Executor,
    cfg: &DistillConfig,
    make_pairs: bool,
) -> DistillOutput {
    let results: Vec<(String, Result<(Trajectory, Option<TrajectoryPair>)>)> = instances
        .par_iter()
        .map(|inst| {
            let run = || -> Result<(Trajectory, Option<TrajectoryPair>)> {
                let positive = sample_positive(agents.teacher, inst, pool, executor, cfg)?;
                let stripped = strip_hints(&positive);
                if !make_pairs || inst.kind != InstanceKind::MultiTurn {
                    return Ok((stripped, None));
                }
                let mined = mine_negative_hints(agents.student, &positive, pool, agents.judge, cfg.rollouts)?;
                if mined.is_empty() {
                    return Ok((stripped, None));
                }
                let (negative, turn, err) = sample_negative(agents.student, inst, &mined, pool, executor, cfg)?;
                let pair = match TrajectoryPair::new(positive, negative, turn, err) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        log::warn!("{e}");
                        None
                    }
                };
                Ok((stripped, pair))
            };
            (inst.id.clone(), run())
        })
        .collect();
    let mut out = DistillOutput::default();
    for (id, r) in results {
        match r {
            Ok((pos, pair)) => {
                out.positives.push(pos);
                out.pairs.extend(pair);
            }
            Err(e) => {
                log::warn!("distillation dropped `{id}`: {e}");
                out.dropped.push((id, e.to_string()));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Training records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub kind: InstanceKind,
    pub polarity: Polarity,
    pub messages: Vec<ChatMessage>,
    /// Message indices of the assistant actions, one list per turn.
    pub action_spans: Vec<Vec<usize>>,
    pub system_functions: Vec<FunctionId>,
    pub lineage: Lineage,
}

/// Chat-format record of a hint-stripped trajectory.
pub fn to_record(traj: &Trajectory, pool: &FunctionPool) -> Result<TrajectoryRecord> {
    let traj = strip_hints(traj);
    let mut messages = vec![ChatMessage::system(system_message(pool, &traj.system_functions)?)];
    let mut spans = Vec::with_capacity(traj.turns.len());
    for t in &traj.turns {
        messages.push(ChatMessage::user(t.query.clone()));
        let mut span = Vec::new();
        for s in &t.steps {
            span.push(messages.len());
            push_step(&mut messages, s);
        }
        spans.push(span);
    }
    Ok(TrajectoryRecord {
        id: traj.id.clone(),
        kind: traj.kind,
        polarity: traj.polarity,
        messages,
        action_spans: spans,
        system_functions: traj.system_functions.clone(),
        lineage: traj.lineage.clone(),
    })
}

// ---------------------------------------------------------------------------
// Mock agents

fn last_user_index(messages: &[ChatMessage]) -> Option<usize> {
    messages.iter().rposition(|m| m.role == Role::User)
}

fn split_hint(content: &str) -> (&str, Option<&str>) {
    match content.find(HINT_PREFIX) {
        Some(i) => (&content[..i], Some(&content[i + HINT_PREFIX.len()..])),
        None => (content, None),
    }
}

/// Conversation key: all user queries so far, hints removed.
fn conversation_key(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .filter(|m| m.role == Role::User)
        .map(|m| split_hint(&m.content).0)
        .collect::<Vec<_>>()
        .join("\n")
}

pub const MISSING_PARAMS_REPLY: &str =
    "I can do that, but a required detail is missing. Could you tell me the missing value?";
pub const MISSING_FUNCTION_REPLY: &str =
    "None of the functions I have can do that. Could you provide a function that offers this capability?";

/// Replay agent for tests and offline runs. With a hint it follows the hint,
/// one call per step when `one_at_a_time` is set; without one it replays the
/// reference of the conversation in a single step, corrupting it for a
/// hash-chosen share of samples.
#[derive(Debug, Clone, Default)]
pub struct ReplayAgent {
    references: HashMap<String, String>,
    pub seed: u64,
    pub error_rate: f64,
    pub one_at_a_time: bool,
}

impl ReplayAgent {
    pub fn new(instances: &[TranslatedInstance], seed: u64, error_rate: f64, one_at_a_time: bool) -> Self {
        let mut references = HashMap::new();
        for inst in instances {
            let mut key = String::new();
            for (h, t) in inst.turns.iter().enumerate() {
                if h > 0 {
                    key.push('\n');
                }
                key.push_str(&t.query);
                references.insert(key.clone(), t.hint_reference.clone());
            }
        }
        ReplayAgent {
            references,
            seed,
            error_rate,
            one_at_a_time,
        }
    }

    fn marker_reply(hint: &str) -> Option<&'static str> {
        match hint {
            MISS_PARAMS_MARKER => Some(MISSING_PARAMS_REPLY),
            MISS_FUNCTION_MARKER => Some(MISSING_FUNCTION_REPLY),
            _ => None,
        }
    }

    fn summary(messages: &[ChatMessage], from: usize) -> String {
        let results: Vec<&str> = messages[from..]
            .iter()
            .filter(|m| m.role == Role::Tool)
            .map(|m| m.content.as_str())
            .collect();
        format!("Here is what I found: {}", results.join("; "))
    }

    fn corrupt(&self, list: &FcList, h: u64) -> FcList {
        let mut calls = list.calls.clone();
        if calls.len() > 1 && h & 1 == 0 {
            calls.pop();
            return FcList::new(calls);
        }
        let call: &mut FunctionCall = calls.last_mut().expect("non-empty");
        if let Some((_, v)) = call.args.iter_mut().last() {
            let changed = match &*v {
                Value::Str(s) => Value::Str(format!("{s}-x")),
                Value::Int(i) => Value::Int(*i + 1),
                Value::Float(f) => Value::Float(*f + 1.0),
                Value::Bool(b) => Value::Bool(!*b),
                other => Value::Str(format!("{other}-x")),
            };
            *v = changed;
        } else {
            call.args.insert("unknown".into(), Value::Str("unknow".into()));
        }
        FcList::new(calls)
    }
}

impl ChatBackend for ReplayAgent {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> std::result::Result<String, BackendError> {
        let u = last_user_index(messages).ok_or_else(|| BackendError::Fatal("no user message".into()))?;
        let since = messages[u + 1..].iter().filter(|m| m.role == Role::Assistant).count();
        let (_, hint) = split_hint(&messages[u].content);
        let (guide, noisy) = match hint {
            Some(h) => (h.to_string(), false),
            None => match self.references.get(&conversation_key(&messages[..=u])) {
                Some(r) => (r.clone(), true),
                None => return Ok("I am not sure how to help with that.".into()),
            },
        };
        if let Some(reply) = Self::marker_reply(&guide) {
            return Ok(reply.to_string());
        }
        let Ok(mut list) = parse_calls(&guide) else {
            return Ok("I am not sure how to help with that.".into());
        };
        if noisy && self.error_rate > 0.0 {
            let h = derive_seed(
                self.seed,
                "student",
                fnv1a(messages[u].content.as_bytes()) ^ u64::from(params.sample_index),
            );
            if unit_interval(h) < self.error_rate {
                list = self.corrupt(&list, h);
            }
        }
        if self.one_at_a_time && !noisy {
            match list.calls.get(since) {
                Some(c) => Ok(FcList::new(vec![c.clone()]).to_string()),
                None => Ok(Self::summary(messages, u)),
            }
        } else if since == 0 {
            Ok(list.to_string())
        } else {
            Ok(Self::summary(messages, u))
        }
    }
}

/// Judge mock comparing the model response against the reference.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceJudge;

fn section<'a>(text: &'a str, header: &str, next: Option<&str>) -> Option<&'a str> {
    let start = text.find(header)? + header.len();
    let rest = &text[start..];
    let end = next.and_then(|n| rest.find(n)).unwrap_or(rest.len());
    Some(rest[..end].trim())
}

impl ChatBackend for ReferenceJudge {
    fn complete(&self, messages: &[ChatMessage], _params: &ChatParams) -> std::result::Result<String, BackendError> {
        let user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| BackendError::Fatal("no user message".into()))?;
        let model = section(&user.content, "[Model response]\n", Some("\n\n[Reference response]"))
            .ok_or_else(|| BackendError::Fatal("no model response section".into()))?;
        let reference = section(&user.content, "[Reference response]\n", None)
            .ok_or_else(|| BackendError::Fatal("no reference section".into()))?;
        let verdict = match (extract_fc_list(model), extract_fc_list(reference)) {
            (Some(m), Some(r)) => {
                if m == r {
                    "yes".to_string()
                } else if m.len() < r.len() {
                    "no\n1".to_string()
                } else {
                    "no\n2".to_string()
                }
            }
            (None, None) => {
                if model == reference {
                    "yes".to_string()
                } else {
                    "no\n4".to_string()
                }
            }
            _ => "no\n5".to_string(),
        };
        Ok(verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn judgement_protocol() {
        assert_eq!(
            parse_judgement("no\n2").unwrap(),
            TurnJudgement {
                correct: false,
                error_type: Some(2)
            }
        );
        assert_eq!(parse_judgement("yes").unwrap().error_type, None);
        assert!(matches!(parse_judgement("maybe"), Err(Error::Judgment(_))));
        assert!(matches!(parse_judgement("no\n9"), Err(Error::Judgment(_))));
    }

    #[test]
    fn misleading_hint_must_parse() {
        assert!(Hint::misleading("f(a=1)").is_ok());
        assert!(Hint::misleading("not a call").is_err());
    }

    #[test]
    fn hint_suffix() {
        let h = Hint::miss_params();
        assert_eq!(hinted_query("q", Some(&h)), "q\n[Hint]: missed params");
    }
}
