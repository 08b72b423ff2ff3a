//! Level and power studies: repeated draws of an observation, every configured
//! procedure applied to each draw, rejection frequencies with asymptotic
//! confidence intervals.
//!
//! Within one replicate all kernel procedures share the Gram matrices and the
//! null replicates of the distinct kernels they use. Each kernel row of the
//! shared null matrix is exactly what a standalone test with the same null
//! seed would draw, so sharing does not change any decision.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::baselines::{el1_stat, el2_stat};
use crate::calibrate::{SearchMode, DEFAULT_GRID_STEP};
use crate::datagen::{sample_observation, DesignDensity, RegressionSample, SignalSpec};
use crate::error::{invalid, Error, Result};
use crate::kernels::{default_collection, gram, parse_collection, CollectionMember, GramMatrix, KernelCollection, KernelSpec};
use crate::procedures::{aggregated_decision, single_kernel_decision, AggregationOptions, MIN_REPLICATES};
use crate::rng::{derive_seed, domain};
use crate::stats::{null_replicates, sigma_hat_sq, v_stat, StatValue};

pub const DEFAULT_EL1_M: usize = 5;
pub const DEFAULT_EL2_LAMBDA: f64 = 1e-4;
pub const DEFAULT_CONFIDENCE: f64 = 0.99;

/// One procedure of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Procedure {
    /// One of the built-in collections `P`, `G`, `PG`.
    Default { name: String },
    /// A user-defined aggregated test.
    Custom {
        label: String,
        members: Vec<CollectionMember>,
        /// Accept weights with `sum exp(-w) > 1`.
        #[serde(default)]
        allow_nonconforming: bool,
    },
    Single { spec: KernelSpec },
    El1 {
        #[serde(default = "default_m")]
        m: usize,
    },
    El2 {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
}

fn default_m() -> usize {
    DEFAULT_EL1_M
}

fn default_lambda() -> f64 {
    DEFAULT_EL2_LAMBDA
}

impl Procedure {
    /// Name used in report rows.
    pub fn label(&self) -> String {
        match self {
            Procedure::Default { name } => name.trim().to_ascii_uppercase(),
            Procedure::Custom { label, .. } => label.clone(),
            Procedure::Single { spec } => spec.label(),
            Procedure::El1 { m } => format!("EL1(m={m})"),
            Procedure::El2 { lambda } => format!("EL2(lambda={lambda})"),
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `P`, `G`, `PG`, `single:haar:3`, `el1`, `el1:5`, `el2:1e-4`, or
/// `custom:haar:2=1.5,gauss:1/24=2`.
impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h.trim().to_ascii_lowercase(), Some(r.trim())),
            None => (s.to_ascii_lowercase(), None),
        };
        match (head.as_str(), rest) {
            ("p" | "g" | "pg", None) => Ok(Procedure::Default { name: head.to_ascii_uppercase() }),
            ("single", Some(k)) => Ok(Procedure::Single { spec: k.parse()? }),
            ("el1", None) => Ok(Procedure::El1 { m: DEFAULT_EL1_M }),
            ("el1", Some(m)) => Ok(Procedure::El1 {
                m: m.parse().map_err(|_| invalid(format!("bad EL1 order `{m}`")))?,
            }),
            ("el2", None) => Ok(Procedure::El2 { lambda: DEFAULT_EL2_LAMBDA }),
            ("el2", Some(l)) => Ok(Procedure::El2 {
                lambda: l.parse().map_err(|_| invalid(format!("bad EL2 penalty `{l}`")))?,
            }),
            ("custom", Some(list)) => {
                let c = parse_collection(list)?;
                Ok(Procedure::Custom {
                    label: list.to_owned(),
                    members: c.members().to_vec(),
                    allow_nonconforming: true,
                })
            }
            _ => Err(invalid(format!("unknown procedure `{s}`"))),
        }
    }
}

/// Noise variance fed to the Fourier baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElVariance {
    /// Paired-difference estimate from the fixed-design sample.
    #[default]
    Plugin,
    /// The true noise level of the study.
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(invalid(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: TableFormat,
}

/// Parameters of a level or power study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub n: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Null replicates per quantile estimate.
    #[serde(rename = "B", alias = "b", default = "default_b")]
    pub b: usize,
    pub replicates: usize,
    #[serde(default)]
    pub signal: SignalSpec,
    pub procedures: Vec<Procedure>,
    pub seed: u64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub search: SearchMode,
    #[serde(default)]
    pub el_variance: ElVariance,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Keep the per-replicate decisions in the report.
    #[serde(default)]
    pub record_decisions: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.05
}

fn default_b() -> usize {
    1000
}

fn default_grid_step() -> f64 {
    DEFAULT_GRID_STEP
}

fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE
}

impl StudyConfig {
    /// A config with the usual defaults (`sigma = 1`, `alpha = 0.05`,
    /// `B = 1000`, 99% intervals) and no procedures.
    pub fn new(n: usize, replicates: usize, seed: u64) -> Self {
        StudyConfig {
            n,
            sigma: default_sigma(),
            alpha: default_alpha(),
            b: default_b(),
            replicates,
            signal: SignalSpec::Zero,
            procedures: Vec::new(),
            seed,
            grid_step: DEFAULT_GRID_STEP,
            search: SearchMode::Binary,
            el_variance: ElVariance::Plugin,
            confidence: DEFAULT_CONFIDENCE,
            record_decisions: false,
            output: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: StudyConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        crate::datagen::check_even(self.n)?;
        if self.n < 4 {
            return Err(Error::SampleTooSmall { got: self.n, min: 4 });
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma = {} must be positive", self.sigma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(format!("alpha = {} outside (0, 1]", self.alpha)));
        }
        if self.replicates < 1 {
            return Err(invalid("replicates must be at least 1"));
        }
        if self.b < MIN_REPLICATES {
            return Err(invalid(format!("B = {} below the minimum {MIN_REPLICATES}", self.b)));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 1.0) {
            return Err(invalid(format!("grid_step = {} outside (0, 1]", self.grid_step)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid(format!("confidence = {} outside (0, 1)", self.confidence)));
        }
        if self.procedures.is_empty() {
            return Err(Error::Empty("procedures"));
        }
        self.signal.validate()?;
        Ok(())
    }
}

/// Normal-approximation interval `p ± z sqrt(p (1 - p) / n)`, clamped to [0, 1].
pub fn proportion_ci(p_hat: f64, n_reps: usize, confidence: f64) -> Result<(f64, f64)> {
    if n_reps < 1 {
        return Err(invalid("n_reps must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(invalid(format!("p_hat = {p_hat} outside [0, 1]")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid(format!("confidence = {confidence} outside (0, 1)")));
    }
    let z = Normal::standard().inverse_cdf((1.0 + confidence) / 2.0);
    let half = z * (p_hat * (1.0 - p_hat) / n_reps as f64).sqrt();
    Ok(((p_hat - half).max(0.0), (p_hat + half).min(1.0)))
}

/// One table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub procedure: String,
    pub rejection_count: usize,
    pub replicates: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Wall-clock seconds spent in this procedure's decisions, summed over
    /// replicates. Shared Gram and null-replicate work is reported separately.
    pub runtime_secs: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
}

/// Decisions of every procedure on one replicate, in procedure order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDecisions {
    pub replicate: usize,
    pub seed: u64,
    pub rejects: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
    /// Seconds spent building shared Gram matrices and null replicates.
    pub shared_runtime_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decisions: Option<Vec<ReplicateDecisions>>,
}

/// Study under the null; the configured signal must be `zero`.
pub fn estimate_level(config: &StudyConfig) -> Result<StudyReport> {
    if !config.signal.is_zero() {
        return Err(invalid("estimate_level needs signal = zero; use estimate_power for alternatives"));
    }
    run_study(config)
}

/// Study under the configured signal.
pub fn estimate_power(config: &StudyConfig) -> Result<StudyReport> {
    run_study(config)
}

/// A procedure resolved against the shared kernel list.
enum Plan {
    Aggregated { collection: KernelCollection, rows: Vec<usize> },
    Single { label: String, row: usize },
    El1(usize),
    El2(f64),
}

fn kernel_index(kernels: &mut Vec<KernelSpec>, spec: KernelSpec) -> usize {
    match kernels.iter().position(|k| *k == spec) {
        Some(i) => i,
        None => {
            kernels.push(spec);
            kernels.len() - 1
        }
    }
}

fn build_plans(procedures: &[Procedure]) -> Result<(Vec<Plan>, Vec<KernelSpec>)> {
    let mut kernels = Vec::new();
    let mut plans = Vec::with_capacity(procedures.len());
    for p in procedures {
        let plan = match p {
            Procedure::Default { .. } | Procedure::Custom { .. } => {
                let collection = match p {
                    Procedure::Default { name } => default_collection(name)?,
                    Procedure::Custom { label, members, allow_nonconforming: true } => {
                        KernelCollection::new_unchecked_weights(label.clone(), members.clone())?
                    }
                    Procedure::Custom { label, members, .. } => KernelCollection::new(label.clone(), members.clone())?,
                    _ => unreachable!(),
                };
                let rows = collection
                    .members()
                    .iter()
                    .map(|m| kernel_index(&mut kernels, m.spec))
                    .collect();
                Plan::Aggregated { collection, rows }
            }
            Procedure::Single { spec } => {
                spec.validate()?;
                Plan::Single {
                    label: spec.label(),
                    row: kernel_index(&mut kernels, *spec),
                }
            }
            Procedure::El1 { m } => Plan::El1(*m),
            Procedure::El2 { lambda } => Plan::El2(*lambda),
        };
        plans.push(plan);
    }
    Ok((plans, kernels))
}

struct ReplicateOutcome {
    rejects: Vec<bool>,
    times: Vec<f64>,
    shared: f64,
}

/// `y` reordered by increasing design point, for the Fourier baselines.
fn y_in_design_order(sample: &RegressionSample) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..sample.n()).collect();
    idx.sort_by(|&a, &b| sample.x[a].total_cmp(&sample.x[b]));
    idx.into_iter().map(|i| sample.y[i]).collect()
}

fn run_replicate(config: &StudyConfig, plans: &[Plan], kernels: &[KernelSpec], r: usize) -> Result<ReplicateOutcome> {
    let rep_seed = derive_seed(config.seed, domain::REPLICATE, r as u64);
    let sample = sample_observation(config.n, &config.signal, config.sigma, DesignDensity::UniformOn01, rep_seed)?;
    let null_seed = derive_seed(rep_seed, domain::NULL_MASTER, 0);
    let options = AggregationOptions {
        grid_step: config.grid_step,
        search: config.search,
    };

    let start = Instant::now();
    let grams = kernels
        .iter()
        .map(|k| gram(k, &sample.x))
        .collect::<Result<Vec<GramMatrix>>>()?;
    let stats = grams
        .iter()
        .map(|g| v_stat(g, &sample.y, &sample.y_prime))
        .collect::<Result<Vec<StatValue>>>()?;
    let any_aggregated = plans.iter().any(|p| matches!(p, Plan::Aggregated { .. }));
    let columns = if any_aggregated { 2 * config.b } else { config.b };
    let null = if grams.is_empty() {
        None
    } else {
        let refs: Vec<&GramMatrix> = grams.iter().collect();
        Some(null_replicates(&refs, columns, null_seed)?)
    };
    let shared = start.elapsed().as_secs_f64();

    let mut rejects = Vec::with_capacity(plans.len());
    let mut times = Vec::with_capacity(plans.len());
    for plan in plans {
        let t = Instant::now();
        let reject = match plan {
            Plan::Aggregated { collection, rows } => {
                let null = null.as_ref().expect("kernel procedures have a null matrix");
                let sub = null.select_rows(rows);
                let s: Vec<StatValue> = rows.iter().map(|&i| stats[i]).collect();
                aggregated_decision(collection, &s, &sub, config.alpha, &options)?.reject
            }
            Plan::Single { label, row } => {
                let null = null.as_ref().expect("kernel procedures have a null matrix");
                let row_values = &null.row(*row)[..config.b];
                single_kernel_decision(label, stats[*row], row_values, config.alpha, null_seed)?.reject
            }
            Plan::El1(_) | Plan::El2(_) => {
                let sigma_sq = match config.el_variance {
                    ElVariance::Plugin => sigma_hat_sq(&sample.y_prime)?,
                    ElVariance::Known => config.sigma * config.sigma,
                };
                let y = y_in_design_order(&sample);
                let stat = match plan {
                    Plan::El1(m) => el1_stat(&y, *m, sigma_sq)?,
                    Plan::El2(lambda) => el2_stat(&y, *lambda, sigma_sq)?,
                    _ => unreachable!(),
                };
                stat.rejects(config.alpha)?
            }
        };
        times.push(t.elapsed().as_secs_f64());
        rejects.push(reject);
    }
    Ok(ReplicateOutcome { rejects, times, shared })
}

fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let (plans, kernels) = build_plans(&config.procedures)?;
    let outcomes = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &plans, &kernels, r))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(plans.len());
    for (p, procedure) in config.procedures.iter().enumerate() {
        let count = outcomes.iter().filter(|o| o.rejects[p]).count();
        let p_hat = count as f64 / config.replicates as f64;
        let (ci_low, ci_high) = proportion_ci(p_hat, config.replicates, config.confidence)?;
        rows.push(StudyRow {
            procedure: procedure.label(),
            rejection_count: count,
            replicates: config.replicates,
            p_hat,
            ci_low,
            ci_high,
            runtime_secs: outcomes.iter().map(|o| o.times[p]).sum(),
            b: config.b,
            seed: config.seed,
        });
    }
    let decisions = config.record_decisions.then(|| {
        outcomes
            .iter()
            .enumerate()
            .map(|(r, o)| ReplicateDecisions {
                replicate: r,
                seed: derive_seed(config.seed, domain::REPLICATE, r as u64),
                rejects: o.rejects.clone(),
            })
            .collect()
    });
    Ok(StudyReport {
        config: config.clone(),
        rows,
        shared_runtime_secs: outcomes.iter().map(|o| o.shared).sum(),
        decisions,
    })
}

/// Columns of the CSV table, in order.
pub const CSV_COLUMNS: [&str; 7] = ["procedure", "p_hat", "ci_low", "ci_high", "replicates", "B", "seed"];

/// CSV form of a table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub procedure: String,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicates: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
}

impl From<&StudyRow> for CsvRow {
    fn from(r: &StudyRow) -> Self {
        CsvRow {
            procedure: r.procedure.clone(),
            p_hat: r.p_hat,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            replicates: r.replicates,
            b: r.b,
            seed: r.seed,
        }
    }
}

/// Serialises the table. CSV holds only the deterministic columns; JSON is the
/// whole report including runtimes and the config echo.
pub fn emit_table(report: &StudyReport, format: TableFormat) -> Result<Vec<u8>> {
    match format {
        TableFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(CSV_COLUMNS)?;
            for row in &report.rows {
                w.serialize(CsvRow::from(row))?;
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))
        }
        TableFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report)?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

/// Writes [`emit_table`] output to `path`.
pub fn write_table(report: &StudyReport, format: TableFormat, path: &Path) -> Result<()> {
    let bytes = emit_table(report, format)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Reads rows back from CSV table output.
pub fn read_csv_table(bytes: &[u8]) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(invalid(format!("unexpected CSV header {headers:?}")));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<CsvRow>, _>>()?)
}

/// Reads a report back from JSON table output.
pub fn read_json_report(bytes: &[u8]) -> Result<StudyReport> {
    Ok(serde_json::from_slice(bytes)?)
}
