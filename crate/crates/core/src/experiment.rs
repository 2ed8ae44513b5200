//! Monte Carlo experiments: configuration, parallel trials, result files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, ClaimRow, PooledCounts, TheoryReport, Verdict};
use crate::attacks::{catalog, eve_identification_outcome, AttackError, AttackSpec};
use crate::protocol::{run_protocol_with, ProtocolConfig, ProtocolError, RunOptions, RunResult, TraceEvent, Variant};
use crate::rng::trial_seed;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("trial {trial}: {source}")]
    Trial { trial: u64, source: ProtocolError },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("serialization: {0}")]
    Serialize(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

impl From<AttackError> for ExperimentError {
    fn from(e: AttackError) -> Self {
        ExperimentError::Config(format!("attack: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VERDICT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSelection {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl Default for AttackSelection {
    fn default() -> Self {
        AttackSelection { name: "none".into(), params: Map::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Results file; stdout when absent.
    pub results_path: Option<PathBuf>,
    /// NDJSON event trace, one object per line.
    pub trace_path: Option<PathBuf>,
    pub format: OutputFormat,
}

/// `protocol.seed` is ignored: trial `i` runs with `trial_seed(master_seed, i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: ProtocolConfig,
    pub attack: AttackSelection,
    pub trials: u64,
    pub output: OutputConfig,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: ProtocolConfig::default(),
            attack: AttackSelection::default(),
            trials: 1,
            output: OutputConfig::default(),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn attack_spec(&self) -> Result<AttackSpec> {
        Ok(AttackSpec::from_config(&self.attack.name, &self.attack.params)?)
    }

    pub fn validate(&self) -> Result<AttackSpec> {
        if self.trials == 0 {
            return Err(ExperimentError::Config("trials must be at least 1".into()));
        }
        self.protocol.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.attack_spec()
    }

    pub fn trial_config(&self, trial: u64) -> ProtocolConfig {
        ProtocolConfig { seed: trial_seed(self.master_seed, trial), ..self.protocol.clone() }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub variant: Option<Variant>,
    pub attack: Option<String>,
    /// `KEY=VALUE`; dotted keys address nested objects, values parse as
    /// JSON and fall back to plain strings.
    pub params: Vec<String>,
    pub pairs: Option<usize>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub check_fraction: Option<f64>,
    pub ctrl_threshold: Option<f64>,
    pub sift_threshold: Option<f64>,
}

impl Overrides {
    /// Changing the attack name drops the file's parameters.
    pub fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = self.variant {
            config.protocol.variant = v;
        }
        if let Some(name) = &self.attack {
            if *name != config.attack.name {
                config.attack = AttackSelection { name: name.clone(), params: Map::new() };
            }
        }
        for kv in &self.params {
            set_param(&mut config.attack.params, kv)?;
        }
        if let Some(n) = self.pairs {
            config.protocol.n_pairs = n;
        }
        if let Some(t) = self.trials {
            config.trials = t;
        }
        if let Some(s) = self.seed {
            config.master_seed = s;
        }
        if let Some(p) = &self.out {
            config.output.results_path = Some(p.clone());
        }
        if let Some(p) = &self.trace {
            config.output.trace_path = Some(p.clone());
        }
        if let Some(f) = self.format {
            config.output.format = f;
        }
        if let Some(f) = self.check_fraction {
            config.protocol.sift_check_fraction = f;
        }
        if let Some(x) = self.ctrl_threshold {
            config.protocol.ctrl_error_threshold = x;
        }
        if let Some(y) = self.sift_threshold {
            config.protocol.sift_error_threshold = y;
        }
        Ok(())
    }
}

fn set_param(params: &mut Map<String, Value>, kv: &str) -> Result<()> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| ExperimentError::Config(format!("--param `{kv}`: expected KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ExperimentError::Config(format!("--param `{kv}`: empty key segment")));
    }
    let mut node = params;
    for part in &parts[..parts.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        node = entry
            .as_object_mut()
            .ok_or_else(|| ExperimentError::Config(format!("--param `{kv}`: `{part}` is not an object")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Flat per-trial figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub seed: u64,
    pub ctrl_errors: usize,
    pub ctrl_samples: usize,
    pub ctrl_rate: f64,
    pub sift_errors: usize,
    pub sift_samples: usize,
    pub sift_rate: f64,
    pub first_check_passed: bool,
    pub second_check_passed: bool,
    pub raw_key_len: usize,
    pub final_key_len: Option<usize>,
    pub keys_equal: Option<bool>,
    pub final_key_hex: Option<String>,
    pub eve_correct_sift_ids: Option<usize>,
    pub eve_false_positives: Option<usize>,
    pub eve_key_matches: Option<usize>,
    pub eve_key_compared: Option<usize>,
}

impl TrialSummary {
    pub fn from_run(trial: u64, run: &RunResult) -> Self {
        let id = eve_identification_outcome(&run.eve_transcript, &run.bob_actions())
            .ok()
            .filter(|_| run.eve_transcript.labels.iter().any(|l| *l != crate::attacks::InferredLabel::Indeterminate));
        let key = analysis::eve_key_agreement(run);
        TrialSummary {
            trial,
            seed: run.seed,
            ctrl_errors: run.ctrl.errors,
            ctrl_samples: run.ctrl.samples,
            ctrl_rate: run.ctrl.rate,
            sift_errors: run.sift_check.errors,
            sift_samples: run.sift_check.samples,
            sift_rate: run.sift_check.rate,
            first_check_passed: run.first_check_passed,
            second_check_passed: run.second_check_passed,
            raw_key_len: run.alice_raw_key.len(),
            final_key_len: run.final_keys.as_ref().map(|k| k.alice.bits.len()),
            keys_equal: run.final_keys.as_ref().map(|k| k.alice.bits == k.bob.bits),
            final_key_hex: run.final_keys.as_ref().map(|k| crate::postproc::bits_to_hex(&k.alice.bits)),
            eve_correct_sift_ids: id.map(|i| i.correct_sift_ids),
            eve_false_positives: id.map(|i| i.false_positives),
            eve_key_matches: key.map(|k| k.0),
            eve_key_compared: key.map(|k| k.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub counts: PooledCounts,
    pub notes: Vec<String>,
}

/// The results file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub config: ExperimentConfig,
    pub per_trial: Vec<TrialSummary>,
    pub aggregate: Aggregate,
    pub verdicts: Vec<ClaimRow>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
    pub traces: Vec<TraceEvent>,
    pub report: TheoryReport,
}

impl ExperimentOutput {
    pub fn exit_code(&self) -> i32 {
        if self.report.all_pass() {
            EXIT_PASS
        } else {
            EXIT_VERDICT_FAIL
        }
    }

    pub fn document(&self) -> ResultsDocument {
        ResultsDocument {
            config: self.config.clone(),
            per_trial: self.runs.iter().enumerate().map(|(i, r)| TrialSummary::from_run(i as u64, r)).collect(),
            aggregate: Aggregate { counts: self.report.counts, notes: self.report.notes.clone() },
            verdicts: self.report.rows.clone(),
        }
    }

    pub fn render(&self) -> Result<String> {
        let doc = self.document();
        match self.config.output.format {
            OutputFormat::Json => {
                let mut s = serde_json::to_string_pretty(&doc).map_err(|e| ExperimentError::Serialize(e.to_string()))?;
                s.push('\n');
                Ok(s)
            }
            OutputFormat::Csv => render_csv(&doc),
        }
    }

    pub fn render_trace(&self) -> Result<String> {
        let mut out = String::new();
        for ev in &self.traces {
            out.push_str(&serde_json::to_string(ev).map_err(|e| ExperimentError::Serialize(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    row: &'a str,
    trial: Option<u64>,
    seed: Option<u64>,
    ctrl_errors: Option<usize>,
    ctrl_samples: Option<usize>,
    ctrl_rate: Option<f64>,
    sift_errors: Option<usize>,
    sift_samples: Option<usize>,
    sift_rate: Option<f64>,
    first_check_passed: Option<bool>,
    second_check_passed: Option<bool>,
    raw_key_len: Option<usize>,
    final_key_len: Option<usize>,
    keys_equal: Option<bool>,
    claim: Option<&'a str>,
    predicted: Option<f64>,
    estimate: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    n_samples: Option<usize>,
    verdict: Option<Verdict>,
}

impl<'a> CsvRow<'a> {
    fn empty(row: &'a str) -> Self {
        CsvRow {
            row,
            trial: None,
            seed: None,
            ctrl_errors: None,
            ctrl_samples: None,
            ctrl_rate: None,
            sift_errors: None,
            sift_samples: None,
            sift_rate: None,
            first_check_passed: None,
            second_check_passed: None,
            raw_key_len: None,
            final_key_len: None,
            keys_equal: None,
            claim: None,
            predicted: None,
            estimate: None,
            ci_low: None,
            ci_high: None,
            n_samples: None,
            verdict: None,
        }
    }
}

/// One row per trial, then one `aggregate` row per claim.
fn render_csv(doc: &ResultsDocument) -> Result<String> {
    let ser = |e: csv::Error| ExperimentError::Serialize(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in &doc.per_trial {
        w.serialize(CsvRow {
            trial: Some(t.trial),
            seed: Some(t.seed),
            ctrl_errors: Some(t.ctrl_errors),
            ctrl_samples: Some(t.ctrl_samples),
            ctrl_rate: Some(t.ctrl_rate),
            sift_errors: Some(t.sift_errors),
            sift_samples: Some(t.sift_samples),
            sift_rate: Some(t.sift_rate),
            first_check_passed: Some(t.first_check_passed),
            second_check_passed: Some(t.second_check_passed),
            raw_key_len: Some(t.raw_key_len),
            final_key_len: t.final_key_len,
            keys_equal: t.keys_equal,
            ..CsvRow::empty("trial")
        })
        .map_err(ser)?;
    }
    for r in &doc.verdicts {
        w.serialize(CsvRow {
            claim: Some(&r.claim),
            predicted: r.predicted,
            estimate: r.estimate.map(|e| e.point),
            ci_low: r.estimate.map(|e| e.ci_low),
            ci_high: r.estimate.map(|e| e.ci_high),
            n_samples: r.estimate.map(|e| e.n_samples),
            verdict: Some(r.verdict),
            ..CsvRow::empty("aggregate")
        })
        .map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ExperimentError::Serialize(e.to_string()))
}

/// Runs every trial on the rayon pool, in trial order as far as results are
/// concerned, and compares the pooled counts against theory.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let spec = config.validate()?;
    let trace = config.output.trace_path.is_some();
    let results: Vec<Result<(RunResult, Vec<TraceEvent>)>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let mut attack = spec.build()?;
            let options = RunOptions { trace: trace.then_some(trial), ..RunOptions::default() };
            run_protocol_with(&config.trial_config(trial), attack.as_mut(), options)
                .map_err(|source| ExperimentError::Trial { trial, source })
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for r in results {
        let (run, events) = r?;
        runs.push(run);
        traces.extend(events);
    }
    let report = analysis::compare_theory(&runs, &spec)?;
    Ok(ExperimentOutput { config: config.clone(), runs, traces, report })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
    f.write_all(contents.as_bytes()).map_err(|source| ExperimentError::Io { path: path.into(), source })
}

/// [`execute`] plus writing the results and trace files. Without a results
/// path the rendered results are returned for the caller to print.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentOutput, Option<String>)> {
    let out = execute(config)?;
    let rendered = out.render()?;
    if let Some(path) = &config.output.trace_path {
        write_file(path, &out.render_trace()?)?;
    }
    match &config.output.results_path {
        Some(path) => {
            write_file(path, &rendered)?;
            Ok((out, None))
        }
        None => Ok((out, Some(rendered))),
    }
}

pub fn list_attacks() -> String {
    let mut s = String::new();
    for e in catalog() {
        s.push_str(e.name);
        s.push('\n');
        s.push_str(&format!("  params:      {}\n", e.params));
        s.push_str(&format!("  predictions: {}\n", e.predictions));
    }
    s
}
