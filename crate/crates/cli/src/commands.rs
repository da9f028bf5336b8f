use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Map, Value};
use vaudit_core::agents::{AgentPool, DiskCache, TemplateId, VerdictLabel};
use vaudit_core::corpus::{load_corpus, sha256_hex, write_corpus, QueryExample};
use vaudit_core::metrics::{aggregate, Cell, GroupBy, VerificationRecord};
use vaudit_core::pipeline::{
    label_corpus, run, write_jsonl, PipelineError, RunConfig, RunMode, Stamped, PARTIAL_FILE,
};
use vaudit_core::report::{emit_report, load_records, FitFile, ReportOptions, FITS_DIR};
use vaudit_stats::{
    conditional_odds_ratio, fit_lmm, fit_nested, lrt, mcfadden_r2, DataTable, Estimation, Family, FitOptions,
    MixedModelFit, ModelSpec, OptimOptions, StatsError,
};

use crate::config::{Config, Snapshot, UncertainPolicy};
use crate::CliError;

pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LABELED_CORPUS: &str = "corpus.labeled.jsonl";
pub const LABEL_VOTES: &str = "labels.jsonl";
pub const ADJUDICATION: &str = "adjudication.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const CACHE_DIR: &str = "cache";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<RunMode>,
    pub max_turns: Option<u32>,
    pub parallelism: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resume: bool,
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

struct Prepared {
    cfg: Config,
    snapshot: Snapshot,
    digest: String,
    out: PathBuf,
}

fn prepare(config_path: &Path, ov: &Overrides) -> Result<Prepared, CliError> {
    let mut cfg = Config::load(config_path)?;
    if let Some(m) = ov.mode {
        cfg.run.mode = m;
    }
    if let Some(t) = ov.max_turns {
        cfg.run.max_turns = t;
    }
    if let Some(p) = ov.parallelism {
        cfg.run.parallelism = p;
    }
    if let Some(o) = &ov.out {
        cfg.out_dir = Some(o.clone());
    }
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = cfg.out_dir()?.to_path_buf();
    let snapshot = Snapshot::of(&cfg)?;
    let digest = snapshot.digest();
    Ok(Prepared {
        cfg,
        snapshot,
        digest,
        out,
    })
}

fn write_snapshot(p: &Prepared) -> Result<(), CliError> {
    fs::create_dir_all(&p.out).map_err(io)?;
    fs::write(p.out.join(CONFIG_SNAPSHOT), p.snapshot.to_bytes()).map_err(io)
}

fn open_pool(p: &Prepared) -> Result<AgentPool, CliError> {
    let dir = p.cfg.cache_dir.clone().unwrap_or_else(|| p.out.join(CACHE_DIR));
    let cache = Arc::new(DiskCache::open(&dir)?);
    Ok(AgentPool::new(&p.cfg.backends, &p.cfg.bindings(), p.cfg.seed, cache)?)
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    for e in fs::read_dir(dir).map_err(io)? {
        let path = e.map_err(io)?.path();
        let rel = path.strip_prefix(root).map_err(io)?.to_string_lossy().replace('\\', "/");
        if path.is_dir() {
            if rel != CACHE_DIR {
                collect_files(root, &path, out)?;
            }
        } else if rel != SUMMARY_FILE && rel != PARTIAL_FILE {
            out.insert(rel, sha256_hex(&fs::read(&path).map_err(io)?));
        }
    }
    Ok(())
}

/// SHA-256 of every artifact in the run directory, keyed by relative path.
pub fn artifact_digests(out: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut m = BTreeMap::new();
    collect_files(out, out, &mut m)?;
    Ok(m)
}

/// Records what `command` did and refreshes the artifact manifest. Entries
/// from earlier commands survive as long as the config digest is unchanged.
fn write_summary(out: &Path, digest: &str, command: &str, details: Value) -> Result<(), CliError> {
    let path = out.join(SUMMARY_FILE);
    let mut commands = Map::new();
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(v) = serde_json::from_str::<Value>(&text) {
            if v["config_digest"] == digest {
                if let Some(c) = v["commands"].as_object() {
                    commands = c.clone();
                }
            }
        }
    }
    commands.insert(command.to_string(), details);
    let summary = json!({
        "config_digest": digest,
        "commands": commands,
        "artifacts": artifact_digests(out)?,
    });
    let mut s = serde_json::to_string_pretty(&summary).map_err(io)?;
    s.push('\n');
    fs::write(path, s).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSummary {
    pub examples: usize,
    pub labeled: usize,
    pub adjudicated: usize,
    pub agreement_rate: Option<f64>,
    pub notice: Option<String>,
}

/// Labels every example without a task by majority vote of the three
/// configured labelers and writes `corpus.labeled.jsonl`, the individual
/// votes and the examples needing adjudication.
pub fn cmd_label(config_path: &Path, ov: &Overrides) -> Result<LabelSummary, CliError> {
    let p = prepare(config_path, ov)?;
    let corpus = load_corpus(&p.cfg.corpus)?;
    write_snapshot(&p)?;
    if corpus.is_labeled() {
        let s = LabelSummary {
            examples: corpus.examples.len(),
            labeled: 0,
            adjudicated: 0,
            agreement_rate: None,
            notice: Some("every example already has a task label; nothing to do".into()),
        };
        write_summary(&p.out, &p.digest, "label", serde_json::to_value(&s).map_err(io)?)?;
        return Ok(s);
    }
    if p.cfg.roles.labelers.is_empty() {
        return Err(CliError::Config("corpus has unlabeled examples but roles.labelers is empty".into()));
    }
    let pool = open_pool(&p)?;
    let out = label_corpus(&corpus.examples, &pool, &p.cfg.roles.labelers, p.cfg.run.parallelism)?;
    write_corpus(&p.out.join(LABELED_CORPUS), &out.examples)?;
    write_jsonl(&p.out.join(LABEL_VOTES), &out.votes, &p.digest)?;
    write_jsonl(&p.out.join(ADJUDICATION), &out.adjudication, &p.digest)?;
    let (hits, misses) = pool.cache_hits();
    info!("label: cache hits {hits}, misses {misses}");
    let s = LabelSummary {
        examples: out.examples.len(),
        labeled: out.labeled,
        adjudicated: out.adjudication.len(),
        agreement_rate: out.agreement_rate,
        notice: None,
    };
    write_summary(&p.out, &p.digest, "label", serde_json::to_value(&s).map_err(io)?)?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: RunMode,
    pub examples: usize,
    pub records: usize,
    pub traces: usize,
    pub quarantined: usize,
}

fn run_corpus(p: &Prepared) -> Result<Vec<QueryExample>, CliError> {
    let labeled = p.out.join(LABELED_CORPUS);
    let path = if labeled.exists() { labeled } else { p.cfg.corpus.clone() };
    Ok(load_corpus(&path)?.examples)
}

/// Runs the configured (or given) mode and writes records, quarantine and,
/// for loop runs, traces.
pub fn cmd_run(config_path: &Path, ov: &Overrides) -> Result<RunSummary, CliError> {
    let p = prepare(config_path, ov)?;
    let corpus = run_corpus(&p)?;
    write_snapshot(&p)?;
    let pool = open_pool(&p)?;
    let c = &p.cfg;
    let mut rc = RunConfig::new(c.roles.generators.clone(), &c.roles.judge, c.run.mode, &p.out);
    if c.run.mode != RunMode::SelfCheck {
        rc.verifiers = c.roles.verifiers.clone();
    }
    rc.max_turns = c.run.max_turns;
    rc.parallelism = c.run.parallelism;
    rc.quarantine_fraction = c.run.quarantine_fraction;
    rc.verifier_template = TemplateId::parse(&c.run.verifier_template).expect("validated");
    rc.config_digest = p.digest.clone();
    rc.resume = ov.resume;
    let result = run(&corpus, &pool, &rc);
    let (hits, misses) = pool.cache_hits();
    info!("run: cache hits {hits}, misses {misses}");
    let summary = match &result {
        Ok(o) => RunSummary {
            mode: c.run.mode,
            examples: corpus.len(),
            records: o.records.len(),
            traces: o.traces.len(),
            quarantined: o.quarantine.len(),
        },
        Err(PipelineError::QuarantineExceeded { failed, .. }) => RunSummary {
            mode: c.run.mode,
            examples: corpus.len(),
            records: 0,
            traces: 0,
            quarantined: *failed,
        },
        Err(_) => return result.map(|_| unreachable!()).map_err(CliError::from),
    };
    write_summary(&p.out, &p.digest, "run", serde_json::to_value(&summary).map_err(io)?)?;
    result?;
    Ok(summary)
}

fn factor_levels(values: &[String]) -> usize {
    values.iter().collect::<BTreeSet<_>>().len()
}

/// Random-effect factors with at least two levels, in task/model/dataset order.
fn usable_factors(columns: &[(&'static str, Vec<String>)], notices: &mut Vec<String>) -> Vec<&'static str> {
    let mut out = Vec::new();
    for (name, values) in columns {
        if factor_levels(values) >= 2 {
            out.push(*name);
        } else {
            notices.push(format!("factor `{name}` has a single level and is left out of the models"));
        }
    }
    out
}

fn factor_table(columns: Vec<(&'static str, Vec<String>)>, numeric: Vec<(&str, Vec<f64>)>) -> Result<DataTable, CliError> {
    let mut t = DataTable::new();
    for (name, v) in numeric {
        t.insert_numeric(name, v)?;
    }
    for (name, v) in columns {
        t.insert_factor(name, v)?;
    }
    Ok(t)
}

fn glmm_specs(factors: &[&str]) -> Result<Vec<(String, ModelSpec)>, CliError> {
    let ri: Vec<String> = factors.iter().map(|f| format!("(1 | {f})")).collect();
    let rs: Vec<String> = factors.iter().map(|f| format!("(1 + gen_err | {f})")).collect();
    let join = |fixed: &str, re: &[String]| {
        let mut s = format!("ver_err ~ {fixed}");
        for r in re {
            s.push_str(" + ");
            s.push_str(r);
        }
        s
    };
    let forms = [
        ("glmm_m0", join("1", &ri)),
        ("glmm_m1", join("gen_err", &ri)),
        ("glmm_m2", join("gen_err", &rs)),
    ];
    forms
        .into_iter()
        .map(|(n, f)| Ok((n.to_string(), ModelSpec::parse(&f, Family::BernoulliLogit, Estimation::Ml)?)))
        .collect()
}

fn stamp_fit(dir: &Path, name: &str, fit: &MixedModelFit, digest: &str) -> Result<(), CliError> {
    let s = Stamped {
        config_digest: digest.to_string(),
        item: FitFile {
            name: name.to_string(),
            fit: fit.clone(),
        },
    };
    let mut text = serde_json::to_string_pretty(&s).map_err(io)?;
    text.push('\n');
    fs::write(dir.join(format!("{name}.json")), text).map_err(io)
}

fn fit_summary(f: &MixedModelFit) -> Value {
    json!({
        "formula": f.formula,
        "loglik": f.loglik,
        "n_params": f.n_params,
        "aic": f.aic,
        "bic": f.bic,
        "converged": f.converged,
        "singular": f.singular,
        "r2_marginal": f.r2_marginal,
        "r2_conditional": f.r2_conditional,
    })
}

fn self_turn0(records: &[VerificationRecord], policy: UncertainPolicy) -> Vec<VerificationRecord> {
    records
        .iter()
        .filter(|r| r.turn == 0 && r.is_self())
        .filter(|r| policy == UncertainPolicy::Reject || r.verdict.label != VerdictLabel::Uncertain)
        .cloned()
        .collect()
}

const LMM_METRICS: [&str; 4] = ["fnr", "fpr", "bias", "dskew"];

fn lmm_value(c: &Cell, metric: &str) -> Option<f64> {
    let m = &c.metrics;
    match metric {
        "fnr" => (!m.fnr_undefined).then_some(m.fnr),
        "fpr" => (!m.fpr_undefined).then_some(m.fpr),
        "bias" => Some(m.bias),
        _ => (!m.dskew_undefined).then_some(m.dskew),
    }
}

/// Fits the record-level logistic models M0, M1, M2 on self-verification
/// records and one cell-level linear model per bias metric, writing each
/// fit to `fits/` and the model comparisons to `stats.json`.
pub fn cmd_stats(config_path: &Path, ov: &Overrides) -> Result<Value, CliError> {
    let p = prepare(config_path, ov)?;
    let (records, digest) = load_records(&p.out)?;
    if digest != p.digest {
        warn!("records were written under config {digest}, current config is {}", p.digest);
    }
    let policy = p.cfg.stats.uncertain;
    let own = self_turn0(&records, policy);
    if own.is_empty() {
        return Err(CliError::Config("stats needs self-verification records (run in self or loop mode)".into()));
    }
    let opts = FitOptions {
        optim: OptimOptions {
            max_evals: p.cfg.stats.max_evals,
            rel_tol: p.cfg.stats.rel_tol,
            ..OptimOptions::default()
        },
        ..FitOptions::default()
    };
    let fits_dir = p.out.join(FITS_DIR);
    if fits_dir.exists() {
        fs::remove_dir_all(&fits_dir).map_err(io)?;
    }
    fs::create_dir_all(&fits_dir).map_err(io)?;
    let mut notices = Vec::new();

    let factors_of = |rs: &[VerificationRecord]| -> Vec<(&'static str, Vec<String>)> {
        vec![
            ("task", rs.iter().map(|r| r.task.slug().to_string()).collect()),
            ("model", rs.iter().map(|r| r.generator_id.clone()).collect()),
            ("dataset", rs.iter().map(|r| r.dataset_id.clone()).collect()),
        ]
    };
    let columns = factors_of(&own);
    let factors = usable_factors(&columns, &mut notices);
    let columns: Vec<_> = columns.into_iter().filter(|(n, _)| factors.contains(n)).collect();
    let ver_err: Vec<f64> = own.iter().map(|r| f64::from(u8::from(r.y_hat != r.y_star))).collect();
    let gen_err: Vec<f64> = own.iter().map(|r| f64::from(1 - r.y_star)).collect();
    let table = factor_table(columns, vec![("ver_err", ver_err), ("gen_err", gen_err)])?;
    let specs = glmm_specs(&factors)?;
    let fits = fit_nested(&table, &specs.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>(), &opts)?;
    let mut unconverged = Vec::new();
    let mut glmm = Map::new();
    for ((name, _), f) in specs.iter().zip(&fits) {
        stamp_fit(&fits_dir, name, f, &digest)?;
        if !f.converged {
            unconverged.push(f.n_evals);
        }
        glmm.insert(name.clone(), fit_summary(f));
    }
    let (m0, m1, m2) = (&fits[0], &fits[1], &fits[2]);
    glmm.insert("lrt_m1_vs_m0".into(), json!(lrt(m0.loglik, m1.loglik, (m1.n_params - m0.n_params) as u32)?));
    glmm.insert("lrt_m2_vs_m1".into(), json!(lrt(m1.loglik, m2.loglik, (m2.n_params - m1.n_params) as u32)?));
    glmm.insert("mcfadden_r2".into(), json!(mcfadden_r2(m2.loglik, m0.loglik)));
    glmm.insert(
        "gen_err_odds_ratio".into(),
        json!(m2.fixed("gen_err").and_then(|b| b.odds_ratio)),
    );
    // per (task, model, dataset) odds ratios from the slope modes
    let mut cells = BTreeSet::new();
    for r in &own {
        cells.insert((r.task.slug().to_string(), r.generator_id.clone(), r.dataset_id.clone()));
    }
    let mut cond = Vec::new();
    for (t, m, d) in &cells {
        let key: Vec<(&str, &str)> = [("task", t.as_str()), ("model", m.as_str()), ("dataset", d.as_str())]
            .into_iter()
            .filter(|(f, _)| factors.contains(f))
            .collect();
        if let Ok(or) = conditional_odds_ratio(m2, "gen_err", &key) {
            cond.push(json!({"task": t, "model": m, "dataset": d, "odds_ratio": or}));
        }
    }
    glmm.insert("conditional_odds_ratios".into(), Value::Array(cond));

    let cell_list = aggregate(&own, GroupBy::FULL)?;
    let mut lmm = Map::new();
    for metric in LMM_METRICS {
        let kept: Vec<&Cell> = cell_list.iter().filter(|c| lmm_value(c, metric).is_some()).collect();
        if kept.len() < cell_list.len() {
            notices.push(format!(
                "lmm_{metric}: {} cells with an undefined value left out",
                cell_list.len() - kept.len()
            ));
        }
        let cols: Vec<(&'static str, Vec<String>)> = vec![
            ("task", kept.iter().map(|c| c.key.task.map(|t| t.slug()).unwrap_or("").to_string()).collect()),
            ("model", kept.iter().map(|c| c.key.generator.clone().unwrap_or_default()).collect()),
            ("dataset", kept.iter().map(|c| c.key.dataset.clone().unwrap_or_default()).collect()),
        ];
        let mut quiet = Vec::new();
        let fs_ = usable_factors(&cols, &mut quiet);
        if kept.len() < 3 || fs_.is_empty() {
            notices.push(format!("lmm_{metric}: too few cells or levels to fit"));
            continue;
        }
        let cols: Vec<_> = cols.into_iter().filter(|(n, _)| fs_.contains(n)).collect();
        let y: Vec<f64> = kept.iter().map(|c| lmm_value(c, metric).expect("kept")).collect();
        let pg: Vec<f64> = kept.iter().map(|c| c.p_g).collect();
        let t = factor_table(cols, vec![("y", y), ("p_g", pg)])?;
        let formula = format!(
            "y ~ p_g{}",
            fs_.iter().map(|f| format!(" + (1 | {f})")).collect::<String>()
        );
        let spec = ModelSpec::parse(&formula, Family::Gaussian, Estimation::Reml)?;
        let name = format!("lmm_{metric}");
        match fit_lmm(&t, &spec, &opts) {
            Ok(f) => {
                stamp_fit(&fits_dir, &name, &f, &digest)?;
                if !f.converged {
                    unconverged.push(f.n_evals);
                }
                let mut s = fit_summary(&f);
                if let Some(b) = f.fixed("p_g") {
                    s["slope"] = json!(b);
                }
                s["n_cells"] = json!(kept.len());
                lmm.insert(name, s);
            }
            Err(StatsError::NonConvergence(n)) => unconverged.push(n),
            Err(e) => notices.push(format!("{name}: {e}")),
        }
    }

    let out = json!({
        "config_digest": digest,
        "records": own.len(),
        "uncertain": policy,
        "factors": factors,
        "glmm": glmm,
        "lmm": lmm,
        "notices": notices,
    });
    let mut text = serde_json::to_string_pretty(&out).map_err(io)?;
    text.push('\n');
    fs::write(p.out.join(STATS_FILE), text).map_err(io)?;
    write_summary(
        &p.out,
        &digest,
        "stats",
        json!({"fits": fits.len() + lmm.len(), "unconverged": unconverged.len()}),
    )?;
    if let Some(n) = unconverged.first() {
        return Err(StatsError::NonConvergence(*n).into());
    }
    Ok(out)
}

/// Regenerates tables and plot data from the run directory.
pub fn cmd_report(config_path: &Path, ov: &Overrides) -> Result<Vec<String>, CliError> {
    let p = prepare(config_path, ov)?;
    let opts = ReportOptions {
        axis: p.cfg.metrics.axis,
        thresholds: p.cfg.metrics.thresholds,
        grounding_scores: p.cfg.report.grounding_scores.clone(),
    };
    let s = emit_report(&p.out, &opts)?;
    write_summary(
        &p.out,
        &s.config_digest,
        "report",
        json!({"files": s.files.len(), "notices": s.notices}),
    )?;
    Ok(s.notices)
}
