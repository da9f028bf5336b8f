//! Single-turn, cross-verification and feedback-loop runs.
//!
//! Examples are processed by a bounded pool of worker threads. Each
//! finished example is appended to `records.partial.jsonl` as one line so an
//! interrupted run can resume; the final artifacts are written in sorted
//! order, so the number of workers never changes the output bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    parse_judge, parse_verdict, render, AgentError, AgentPool, AgentRole, CallContext, ImageInput,
    TemplateId, Verdict, VerdictLabel,
};
use crate::corpus::{majority_vote, parse_task_label, LabelVote, QueryExample, TaskLabel};
use crate::metrics::{aggregate, GroupBy, MetricSet, MetricsError, VerificationRecord};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const PARTIAL_FILE: &str = "records.partial.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const QUARANTINE_FILE: &str = "quarantine.jsonl";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Config(String),
    #[error("example `{0}` has no task label; run `label` first")]
    Unlabeled(String),
    #[error("{failed} of {total} examples failed, above the quarantine limit")]
    QuarantineExceeded { failed: usize, total: usize },
    #[error("io: {0}")]
    Io(String),
}

fn io(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[serde(rename = "self")]
    SelfCheck,
    Cross,
    Loop,
}

impl RunMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "self" => Some(RunMode::SelfCheck),
            "cross" => Some(RunMode::Cross),
            "loop" => Some(RunMode::Loop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub generators: Vec<String>,
    /// Empty means every generator verifies itself.
    pub verifiers: Vec<String>,
    pub judge: String,
    pub mode: RunMode,
    pub max_turns: u32,
    pub parallelism: usize,
    /// Largest tolerated fraction of failed examples.
    pub quarantine_fraction: f64,
    pub verifier_template: TemplateId,
    pub out_dir: PathBuf,
    pub config_digest: String,
    pub resume: bool,
}

impl RunConfig {
    pub fn new(generators: Vec<String>, judge: &str, mode: RunMode, out_dir: &Path) -> Self {
        Self {
            generators,
            verifiers: Vec::new(),
            judge: judge.to_string(),
            mode,
            max_turns: 4,
            parallelism: 1,
            quarantine_fraction: 0.05,
            verifier_template: TemplateId::Verifier,
            out_dir: out_dir.to_path_buf(),
            config_digest: String::new(),
            resume: false,
        }
    }

    /// (generator, verifier) pairs for this mode.
    pub fn pairs(&self) -> Result<Vec<(String, String)>, PipelineError> {
        if self.generators.is_empty() {
            return Err(PipelineError::Config("no generator backends".into()));
        }
        let self_pairs = || self.generators.iter().map(|g| (g.clone(), g.clone())).collect();
        let matrix = || {
            self.generators
                .iter()
                .flat_map(|g| self.verifiers.iter().map(move |v| (g.clone(), v.clone())))
                .collect()
        };
        Ok(match self.mode {
            RunMode::SelfCheck => self_pairs(),
            RunMode::Cross => {
                if self.verifiers.len() < 2 {
                    return Err(PipelineError::Config("cross mode needs at least 2 verifier backends".into()));
                }
                matrix()
            }
            RunMode::Loop => {
                if self.max_turns < 1 {
                    return Err(PipelineError::Config("max_turns must be at least 1".into()));
                }
                if self.verifiers.is_empty() {
                    self_pairs()
                } else {
                    matrix()
                }
            }
        })
    }
}

/// A JSONL line tagged with the digest of the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_digest: String,
    #[serde(flatten)]
    pub item: T,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T], config_digest: &str) -> Result<(), PipelineError> {
    let mut out = String::new();
    for item in items {
        let line = serde_json::to_string(&Stamped {
            config_digest: config_digest.to_string(),
            item,
        })
        .map_err(io)?;
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(io)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<Stamped<T>>, PipelineError> {
    let f = File::open(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| PipelineError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopOutcome {
    Corrected,
    StillWrong,
    Locked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopTurn {
    pub turn: u32,
    pub answer: String,
    pub verdict: Verdict,
    pub y_star: u8,
    pub y_hat: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopTrace {
    pub example_id: String,
    pub generator_id: String,
    pub verifier_id: String,
    pub task: TaskLabel,
    pub dataset_id: String,
    pub turns: Vec<LoopTurn>,
    /// Only traces whose turn-0 answer was wrong are classified.
    pub outcome: Option<LoopOutcome>,
    pub terminated_at: u32,
}

impl LoopTrace {
    pub fn classify(turns: &[LoopTurn]) -> Option<LoopOutcome> {
        let (first, last) = (turns.first()?, turns.last()?);
        if first.y_star == 1 {
            return None;
        }
        Some(if last.y_star == 1 {
            LoopOutcome::Corrected
        } else if last.verdict.label == VerdictLabel::Correct {
            LoopOutcome::Locked
        } else {
            LoopOutcome::StillWrong
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub example_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExampleUnit {
    example_id: String,
    records: Vec<VerificationRecord>,
    traces: Vec<LoopTrace>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub records: Vec<VerificationRecord>,
    pub traces: Vec<LoopTrace>,
    pub quarantine: Vec<QuarantineEntry>,
}

/// Runs `f` over `0..n` on up to `parallelism` threads; results keep input order.
pub fn run_parallel<T: Send, F>(n: usize, parallelism: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().expect("result lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|o| o.expect("every index processed"))
        .collect()
}

struct Runner<'a> {
    pool: &'a AgentPool,
    cfg: &'a RunConfig,
}

fn image_of(ex: &QueryExample) -> ImageInput {
    ImageInput {
        path: ex.image_ref.clone(),
        digest: ex.image_digest.clone(),
    }
}

fn base_ctx(ex: &QueryExample, turn: u32) -> CallContext {
    CallContext {
        example_id: ex.id.clone(),
        task: ex.task,
        reference_answer: ex.reference_answer.clone(),
        turn,
        answer_correct: None,
        candidate: None,
    }
}

impl Runner<'_> {
    /// Turn 0 uses the plain generator prompt; later turns the feedback
    /// prompt built from the previous answer and verdict.
    fn generate(
        &self,
        g: &str,
        ex: &QueryExample,
        turn: u32,
        feedback: Option<(&str, &Verdict)>,
    ) -> Result<String, AgentError> {
        let prompt = match feedback {
            None => render(TemplateId::Generator, &[("question", &ex.question)])?,
            Some((prev, v)) => render(
                TemplateId::Feedback,
                &[
                    ("verdict", v.label.as_str()),
                    ("question", &ex.question),
                    ("prev_answer", prev),
                    ("explanation", &v.explanation),
                ],
            )?,
        };
        let raw = self
            .pool
            .get(g)?
            .call(AgentRole::Generator, &prompt, Some(&image_of(ex)), &base_ctx(ex, turn))?;
        Ok(raw.trim().to_string())
    }

    fn judge(&self, ex: &QueryExample, answer: &str, turn: u32) -> Result<bool, AgentError> {
        let prompt = render(
            TemplateId::Judge,
            &[
                ("question", &ex.question),
                ("reference_answer", &ex.reference_answer),
                ("model_answer", answer),
            ],
        )?;
        let mut ctx = base_ctx(ex, turn);
        ctx.candidate = Some(answer.to_string());
        let raw = self.pool.get(&self.cfg.judge)?.call(AgentRole::Judge, &prompt, None, &ctx)?;
        Ok(parse_judge(&raw)? == 1)
    }

    fn verify(&self, v: &str, ex: &QueryExample, answer: &str, y_star: bool, turn: u32) -> Result<Verdict, AgentError> {
        let prompt = render(
            self.cfg.verifier_template,
            &[("question", &ex.question), ("answer", answer)],
        )?;
        let mut ctx = base_ctx(ex, turn);
        ctx.answer_correct = Some(y_star);
        let raw = self
            .pool
            .get(v)?
            .call(AgentRole::Verifier, &prompt, Some(&image_of(ex)), &ctx)?;
        Ok(parse_verdict(&raw))
    }

    fn record(&self, ex: &QueryExample, g: &str, v: &str, turn: u32, answer: &str, y: bool, verdict: Verdict) -> VerificationRecord {
        VerificationRecord::new(
            ex.id.clone(),
            g.to_string(),
            v.to_string(),
            ex.task.expect("checked labeled"),
            ex.dataset_id.clone(),
            turn,
            answer.to_string(),
            y,
            verdict,
        )
    }

    /// Each generator answers once; every paired verifier sees that answer.
    fn single_turn(&self, ex: &QueryExample, pairs: &[(String, String)]) -> Result<ExampleUnit, AgentError> {
        let mut records = Vec::new();
        let mut answers: BTreeMap<&str, (String, bool)> = BTreeMap::new();
        for (g, v) in pairs {
            if !answers.contains_key(g.as_str()) {
                let a = self.generate(g, ex, 0, None)?;
                let y = self.judge(ex, &a, 0)?;
                answers.insert(g, (a, y));
            }
            let (a, y) = &answers[g.as_str()];
            let verdict = self.verify(v, ex, a, *y, 0)?;
            records.push(self.record(ex, g, v, 0, a, *y, verdict));
        }
        Ok(ExampleUnit {
            example_id: ex.id.clone(),
            records,
            traces: Vec::new(),
        })
    }

    fn loop_trace(&self, ex: &QueryExample, g: &str, v: &str) -> Result<LoopTrace, AgentError> {
        let mut turns: Vec<LoopTurn> = Vec::new();
        let mut turn = 0;
        loop {
            let answer = match turns.last() {
                None => self.generate(g, ex, 0, None)?,
                Some(prev) => self.generate(g, ex, turn, Some((&prev.answer, &prev.verdict)))?,
            };
            let y = self.judge(ex, &answer, turn)?;
            let mut verdict = self.verify(v, ex, &answer, y, turn)?;
            if !verdict.parse_clean {
                verdict.label = VerdictLabel::Uncertain;
            }
            let accepted = verdict.label == VerdictLabel::Correct;
            turns.push(LoopTurn {
                turn,
                answer,
                verdict,
                y_star: u8::from(y),
                y_hat: u8::from(accepted),
            });
            if accepted || turn >= self.cfg.max_turns {
                break;
            }
            turn += 1;
        }
        Ok(LoopTrace {
            example_id: ex.id.clone(),
            generator_id: g.to_string(),
            verifier_id: v.to_string(),
            task: ex.task.expect("checked labeled"),
            dataset_id: ex.dataset_id.clone(),
            outcome: LoopTrace::classify(&turns),
            terminated_at: turn,
            turns,
        })
    }

    fn loop_unit(&self, ex: &QueryExample, pairs: &[(String, String)]) -> Result<ExampleUnit, AgentError> {
        let mut records = Vec::new();
        let mut traces = Vec::new();
        for (g, v) in pairs {
            let t = self.loop_trace(ex, g, v)?;
            for turn in &t.turns {
                records.push(self.record(ex, g, v, turn.turn, &turn.answer, turn.y_star == 1, turn.verdict.clone()));
            }
            traces.push(t);
        }
        Ok(ExampleUnit {
            example_id: ex.id.clone(),
            records,
            traces,
        })
    }
}

fn read_partial(path: &Path, digest: &str) -> BTreeMap<String, ExampleUnit> {
    let Ok(f) = File::open(path) else {
        return BTreeMap::new();
    };
    let mut done = BTreeMap::new();
    for line in BufReader::new(f).lines().map_while(Result::ok) {
        // a torn final line from an interrupted run simply fails to parse
        match serde_json::from_str::<Stamped<ExampleUnit>>(&line) {
            Ok(u) if u.config_digest == digest => {
                done.insert(u.item.example_id.clone(), u.item);
            }
            Ok(_) => warn!("ignoring partial result written under a different config"),
            Err(_) => {}
        }
    }
    done
}

/// Runs the configured mode over the corpus and writes `records.jsonl`,
/// `quarantine.jsonl` and, in loop mode, `traces.jsonl` into the output
/// directory.
pub fn run(corpus: &[QueryExample], pool: &AgentPool, cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    if let Some(ex) = corpus.iter().find(|e| e.task.is_none()) {
        return Err(PipelineError::Unlabeled(ex.id.clone()));
    }
    let pairs = cfg.pairs()?;
    for (g, v) in &pairs {
        pool.get(g)?;
        pool.get(v)?;
    }
    pool.get(&cfg.judge)?;
    fs::create_dir_all(&cfg.out_dir).map_err(io)?;

    let partial_path = cfg.out_dir.join(PARTIAL_FILE);
    let done = if cfg.resume {
        read_partial(&partial_path, &cfg.config_digest)
    } else {
        BTreeMap::new()
    };
    if !done.is_empty() {
        info!("resuming: {} examples already complete", done.len());
    }
    let partial = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .truncate(false)
            .open(&partial_path)
            .map_err(io)?,
    );
    if !cfg.resume {
        partial.lock().expect("partial lock").set_len(0).map_err(io)?;
    }

    let runner = Runner { pool, cfg };
    let results = run_parallel(corpus.len(), cfg.parallelism, |i| {
        let ex = &corpus[i];
        if let Some(u) = done.get(&ex.id) {
            return Ok(u.clone());
        }
        let unit = match cfg.mode {
            RunMode::Loop => runner.loop_unit(ex, &pairs),
            _ => runner.single_turn(ex, &pairs),
        }?;
        let line = serde_json::to_string(&Stamped {
            config_digest: cfg.config_digest.clone(),
            item: &unit,
        })
        .map_err(|e| AgentError::Io(e.to_string()))?;
        let mut f = partial.lock().expect("partial lock");
        f.write_all(format!("{line}\n").as_bytes())
            .map_err(|e| AgentError::Io(e.to_string()))?;
        Ok(unit)
    });

    let mut out = RunOutput::default();
    for (ex, r) in corpus.iter().zip(results) {
        match r {
            Ok(u) => {
                out.records.extend(u.records);
                out.traces.extend(u.traces);
            }
            Err(e) => {
                let e: AgentError = e;
                warn!("example {} quarantined: {e}", ex.id);
                out.quarantine.push(QuarantineEntry {
                    example_id: ex.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    out.records.sort_by(|a, b| {
        (&a.example_id, &a.generator_id, &a.verifier_id, a.turn).cmp(&(&b.example_id, &b.generator_id, &b.verifier_id, b.turn))
    });
    out.traces.sort_by(|a, b| {
        (&a.example_id, &a.generator_id, &a.verifier_id).cmp(&(&b.example_id, &b.generator_id, &b.verifier_id))
    });
    out.quarantine.sort_by(|a, b| a.example_id.cmp(&b.example_id));

    write_jsonl(&cfg.out_dir.join(RECORDS_FILE), &out.records, &cfg.config_digest)?;
    write_jsonl(&cfg.out_dir.join(QUARANTINE_FILE), &out.quarantine, &cfg.config_digest)?;
    let traces_path = cfg.out_dir.join(TRACES_FILE);
    if cfg.mode == RunMode::Loop {
        write_jsonl(&traces_path, &out.traces, &cfg.config_digest)?;
    } else if traces_path.exists() {
        fs::remove_file(&traces_path).map_err(io)?;
    }

    let failed = out.quarantine.len();
    if failed as f64 > cfg.quarantine_fraction * corpus.len() as f64 {
        return Err(PipelineError::QuarantineExceeded {
            failed,
            total: corpus.len(),
        });
    }
    fs::remove_file(&partial_path).map_err(io)?;
    Ok(out)
}

/// Single-turn run in self or cross mode.
pub fn run_single_turn(corpus: &[QueryExample], pool: &AgentPool, cfg: &RunConfig) -> Result<Vec<VerificationRecord>, PipelineError> {
    if cfg.mode == RunMode::Loop {
        return Err(PipelineError::Config("run_single_turn called with loop mode".into()));
    }
    Ok(run(corpus, pool, cfg)?.records)
}

pub fn run_loop(corpus: &[QueryExample], pool: &AgentPool, cfg: &RunConfig) -> Result<Vec<LoopTrace>, PipelineError> {
    if cfg.mode != RunMode::Loop {
        return Err(PipelineError::Config("run_loop needs loop mode".into()));
    }
    Ok(run(corpus, pool, cfg)?.traces)
}

pub fn run_cross_matrix(corpus: &[QueryExample], pool: &AgentPool, cfg: &RunConfig) -> Result<Vec<CrossRow>, PipelineError> {
    if cfg.mode != RunMode::Cross {
        return Err(PipelineError::Config("run_cross_matrix needs cross mode".into()));
    }
    Ok(cross_summary(&run(corpus, pool, cfg)?.records)?)
}

/// Unweighted mean of each metric; a rate is flagged undefined if any
/// input flagged it.
pub fn mean_metrics(sets: &[MetricSet]) -> Option<MetricSet> {
    if sets.is_empty() {
        return None;
    }
    let n = sets.len() as f64;
    let avg = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / n;
    Some(MetricSet {
        acc: avg(|m| m.acc),
        verifier_error: avg(|m| m.verifier_error),
        fpr: avg(|m| m.fpr),
        fnr: avg(|m| m.fnr),
        bias: avg(|m| m.bias),
        dskew: avg(|m| m.dskew),
        fpr_undefined: sets.iter().any(|m| m.fpr_undefined),
        fnr_undefined: sets.iter().any(|m| m.fnr_undefined),
        dskew_undefined: sets.iter().any(|m| m.dskew_undefined),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub task: TaskLabel,
    pub generator: String,
    pub self_metrics: Option<MetricSet>,
    /// Mean over every verifier other than the generator.
    pub cross_avg: Option<MetricSet>,
    pub cross_verifiers: Vec<String>,
}

/// Self versus cross-average metrics per (task, generator), pooled over
/// datasets. Only turn-0 records are used.
pub fn cross_summary(records: &[VerificationRecord]) -> Result<Vec<CrossRow>, MetricsError> {
    let turn0: Vec<VerificationRecord> = records.iter().filter(|r| r.turn == 0).cloned().collect();
    let cells = aggregate(&turn0, GroupBy::TASK_MODEL)?;
    let mut rows: BTreeMap<(TaskLabel, String), CrossRow> = BTreeMap::new();
    let mut cross: BTreeMap<(TaskLabel, String), Vec<MetricSet>> = BTreeMap::new();
    for c in &cells {
        let (Some(task), Some(g), Some(v)) = (c.key.task, c.key.generator.clone(), c.key.verifier.clone()) else {
            continue;
        };
        let row = rows.entry((task, g.clone())).or_insert_with(|| CrossRow {
            task,
            generator: g.clone(),
            self_metrics: None,
            cross_avg: None,
            cross_verifiers: Vec::new(),
        });
        if g == v {
            row.self_metrics = Some(c.metrics);
        } else {
            row.cross_verifiers.push(v);
            cross.entry((task, g)).or_default().push(c.metrics);
        }
    }
    for (k, sets) in cross {
        if let Some(row) = rows.get_mut(&k) {
            row.cross_avg = mean_metrics(&sets);
        }
    }
    Ok(rows.into_values().collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub wrong_at_start: u64,
    pub corrected: u64,
    pub still_wrong: u64,
    pub locked: u64,
}

impl OutcomeCounts {
    pub fn fraction(&self, n: u64) -> f64 {
        if self.wrong_at_start == 0 {
            0.0
        } else {
            n as f64 / self.wrong_at_start as f64
        }
    }
}

pub fn loop_outcomes(traces: &[LoopTrace]) -> BTreeMap<TaskLabel, OutcomeCounts> {
    let mut out: BTreeMap<TaskLabel, OutcomeCounts> = BTreeMap::new();
    for t in traces {
        let Some(o) = t.outcome else { continue };
        let c = out.entry(t.task).or_default();
        c.wrong_at_start += 1;
        match o {
            LoopOutcome::Corrected => c.corrected += 1,
            LoopOutcome::StillWrong => c.still_wrong += 1,
            LoopOutcome::Locked => c.locked += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulativeBias {
    pub value: f64,
    pub false_accepts: u64,
    pub negatives: u64,
    /// No oracle-incorrect verification event up to this turn.
    pub undefined: bool,
}

/// Per task: accepted-while-wrong events over all wrong-answer events in
/// turns `0..=through_turn`.
pub fn cumulative_agreement_bias(traces: &[LoopTrace], through_turn: u32) -> BTreeMap<TaskLabel, CumulativeBias> {
    let mut counts: BTreeMap<TaskLabel, (u64, u64)> = BTreeMap::new();
    for t in traces {
        let c = counts.entry(t.task).or_default();
        for turn in t.turns.iter().filter(|x| x.turn <= through_turn && x.y_star == 0) {
            c.1 += 1;
            c.0 += u64::from(turn.y_hat);
        }
    }
    counts
        .into_iter()
        .map(|(task, (fp, neg))| {
            let b = CumulativeBias {
                value: if neg == 0 { 0.0 } else { fp as f64 / neg as f64 },
                false_accepts: fp,
                negatives: neg,
                undefined: neg == 0,
            };
            (task, b)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub example_id: String,
    pub raw_labels: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelOutcome {
    pub examples: Vec<QueryExample>,
    pub votes: Vec<LabelVote>,
    pub adjudication: Vec<Adjudication>,
    /// Examples labeled in this pass.
    pub labeled: usize,
    /// Share of examples labeled in this pass whose three votes agree.
    pub agreement_rate: Option<f64>,
}

/// Fills in missing task labels by majority vote over three labelers.
/// Examples with an unparseable vote are left unlabeled and listed for
/// adjudication.
pub fn label_corpus(
    corpus: &[QueryExample],
    pool: &AgentPool,
    labelers: &[String],
    parallelism: usize,
) -> Result<LabelOutcome, PipelineError> {
    if labelers.len() != 3 {
        return Err(PipelineError::Config(format!(
            "labeling needs exactly 3 labeler backends, got {}",
            labelers.len()
        )));
    }
    let agents = labelers.iter().map(|l| pool.get(l)).collect::<Result<Vec<_>, _>>()?;
    let todo: Vec<usize> = (0..corpus.len()).filter(|i| corpus[*i].task.is_none()).collect();
    let results = run_parallel(todo.len(), parallelism, |j| {
        let ex = &corpus[todo[j]];
        let prompt = render(TemplateId::Labeler, &[("question", &ex.question)])?;
        let ctx = base_ctx(ex, 0);
        agents
            .iter()
            .map(|a| a.call(AgentRole::Labeler, &prompt, None, &ctx).map(|r| r.trim().to_string()))
            .collect::<Result<Vec<String>, AgentError>>()
    });

    let mut out = LabelOutcome {
        examples: corpus.to_vec(),
        ..LabelOutcome::default()
    };
    let mut unanimous = 0;
    for (j, raw) in results.into_iter().enumerate() {
        let ex = &mut out.examples[todo[j]];
        let raw = match raw {
            Ok(r) => r,
            Err(e) => {
                out.adjudication.push(Adjudication {
                    example_id: ex.id.clone(),
                    raw_labels: Vec::new(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let parsed: Vec<Option<TaskLabel>> = raw.iter().map(|r| parse_task_label(r).ok()).collect();
        for ((annotator, r), p) in labelers.iter().zip(&raw).zip(&parsed) {
            out.votes.push(LabelVote {
                example_id: ex.id.clone(),
                annotator_id: annotator.clone(),
                raw_label: r.clone(),
                parsed: *p,
            });
        }
        let valid: Vec<TaskLabel> = parsed.iter().flatten().copied().collect();
        if valid.len() != 3 {
            let bad: Vec<&str> = raw.iter().zip(&parsed).filter(|(_, p)| p.is_none()).map(|(r, _)| r.as_str()).collect();
            out.adjudication.push(Adjudication {
                example_id: ex.id.clone(),
                raw_labels: raw.clone(),
                reason: format!("unknown label: {}", bad.join(", ")),
            });
            continue;
        }
        ex.task = Some(majority_vote(&valid).map_err(|e| PipelineError::Config(e.to_string()))?);
        out.labeled += 1;
        if valid[0] == valid[1] && valid[1] == valid[2] {
            unanimous += 1;
        }
    }
    if out.labeled > 0 {
        out.agreement_rate = Some(unanimous as f64 / out.labeled as f64);
    }
    Ok(out)
}

/// Set of answers each generator produced per example, for checking that
/// all verifiers of a generator saw the same text.
pub fn shared_answers(records: &[VerificationRecord]) -> BTreeMap<(String, String), HashSet<String>> {
    let mut m: BTreeMap<(String, String), HashSet<String>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.turn == 0) {
        m.entry((r.example_id.clone(), r.generator_id.clone()))
            .or_default()
            .insert(crate::corpus::sha256_hex(r.answer.as_bytes()));
    }
    m
}
