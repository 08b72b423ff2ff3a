//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::calibrate::{SearchMode, DEFAULT_GRID_STEP};
use crate::datagen::{RegressionSample, SignalSpec};
use crate::error::{invalid, Error, Result};
use crate::harness::{
    emit_table, estimate_level, estimate_power, ElVariance, OutputSpec, Procedure, StudyConfig, TableFormat,
};
use crate::kernels::{default_collections, gram, parse_collection, GramMatrix, KernelCollection, KernelSpec};
use crate::procedures::{aggregated_decision, single_kernel_decision, AggregationOptions, TestReport};
use crate::stats::{cached_null_replicates, null_replicates, v_stat, CacheKey, NullReplicateMatrix};

#[derive(Debug, Parser)]
#[command(name = "kernagg", version, about = "Kernel-based tests of f = 0 in Gaussian regression")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rejection frequencies under f = 0.
    SimulateLevel(StudyArgs),
    /// Rejection frequencies under an alternative.
    SimulatePower(StudyArgs),
    /// Applies one test to data read from CSV files.
    RunTest(RunTestArgs),
    /// Prints the P, G and PG collections as JSON.
    EmitDefaults,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// TOML study config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Null replicates per quantile estimate.
    #[arg(long = "B", visible_alias = "b")]
    pub b: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// e.g. `jump1:a=0.25,eps=1`, `cosine:rho=1,j=6`, `cos10pi:c=2`, `steps:tau=1`.
    #[arg(long)]
    pub signal: Option<SignalSpec>,
    /// Repeatable: `P`, `G`, `PG`, `single:haar:3`, `el1:5`, `el2:1e-4`,
    /// `custom:haar:2=1,gauss:1/8=2`. Defaults to P, G and PG.
    #[arg(long = "procedure", short = 'p')]
    pub procedures: Vec<Procedure>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Scan every grid point instead of bisecting.
    #[arg(long)]
    pub exhaustive_search: bool,
    /// `plugin` or `known`.
    #[arg(long, value_parser = parse_el_variance)]
    pub el_variance: Option<ElVariance>,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Keep per-replicate decisions in JSON output.
    #[arg(long)]
    pub record_decisions: bool,
    #[arg(long)]
    pub format: Option<TableFormat>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_el_variance(s: &str) -> std::result::Result<ElVariance, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "plugin" => Ok(ElVariance::Plugin),
        "known" => Ok(ElVariance::Known),
        other => Err(format!("unknown variance mode `{other}` (expected plugin or known)")),
    }
}

#[derive(Debug, Args)]
pub struct RunTestArgs {
    /// CSV with columns x, y (a header row is optional).
    #[arg(long)]
    pub xy: PathBuf,
    /// CSV with one column y' (a header row is optional).
    #[arg(long)]
    pub yprime: PathBuf,
    /// Single kernel, e.g. `haar:3` or `gauss:1/8`.
    #[arg(long, conflicts_with = "collection", required_unless_present = "collection")]
    pub kernel: Option<KernelSpec>,
    /// `P`, `G`, `PG` or `haar:2=1.5,gauss:1/24=2`.
    #[arg(long)]
    pub collection: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long = "B", visible_alias = "b", default_value_t = 1000)]
    pub b: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    pub grid_step: f64,
    /// Reuse null replicates stored in this directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Merges the optional config file with the flags.
pub fn study_config(args: &StudyArgs) -> Result<StudyConfig> {
    let mut c = match &args.config {
        Some(path) => StudyConfig::from_path(path)?,
        None => {
            let mut c = StudyConfig::new(100, 500, args.seed);
            c.procedures = ["P", "G", "PG"]
                .iter()
                .map(|p| p.parse())
                .collect::<Result<Vec<_>>>()?;
            c
        }
    };
    c.seed = args.seed;
    if let Some(v) = args.n {
        c.n = v;
    }
    if let Some(v) = args.sigma {
        c.sigma = v;
    }
    if let Some(v) = args.alpha {
        c.alpha = v;
    }
    if let Some(v) = args.b {
        c.b = v;
    }
    if let Some(v) = args.replicates {
        c.replicates = v;
    }
    if let Some(v) = &args.signal {
        c.signal = v.clone();
    }
    if !args.procedures.is_empty() {
        c.procedures = args.procedures.clone();
    }
    if let Some(v) = args.grid_step {
        c.grid_step = v;
    }
    if args.exhaustive_search {
        c.search = SearchMode::Exhaustive;
    }
    if let Some(v) = args.el_variance {
        c.el_variance = v;
    }
    if let Some(v) = args.confidence {
        c.confidence = v;
    }
    if args.record_decisions {
        c.record_decisions = true;
    }
    if args.format.is_some() || args.output.is_some() {
        let prev = c.output.take();
        c.output = Some(OutputSpec {
            path: args.output.clone().or_else(|| prev.as_ref().and_then(|o| o.path.clone())),
            format: args.format.or(prev.map(|o| o.format)).unwrap_or_default(),
        });
    }
    Ok(c)
}

fn write_out(bytes: &[u8], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn run_study(args: &StudyArgs, level: bool) -> Result<()> {
    let config = study_config(args)?;
    let report = if level { estimate_level(&config)? } else { estimate_power(&config)? };
    let (format, path) = match &config.output {
        Some(o) => (o.format, o.path.clone()),
        None => (TableFormat::Csv, None),
    };
    write_out(&emit_table(&report, format)?, path.as_deref())
}

/// Reads numeric CSV columns, skipping a leading header row if it is not
/// numeric.
pub fn read_columns(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut cols = vec![Vec::new(); width];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != width {
            return Err(invalid(format!(
                "{}: line {} has {} fields, expected {width}",
                path.display(),
                line + 1,
                record.len()
            )));
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => {
                for (c, v) in cols.iter_mut().zip(values) {
                    c.push(v);
                }
            }
            Err(_) if line == 0 => continue,
            Err(_) => {
                return Err(invalid(format!("{}: line {} is not numeric", path.display(), line + 1)));
            }
        }
    }
    Ok(cols)
}

fn null_for(
    args: &RunTestArgs,
    sample: &RegressionSample,
    label: &str,
    grams: &[&GramMatrix],
    columns: usize,
) -> Result<NullReplicateMatrix> {
    match &args.cache_dir {
        Some(dir) => {
            let key = CacheKey::new(&sample.x, label, columns, args.seed);
            cached_null_replicates(dir, &key, grams)
        }
        None => null_replicates(grams, columns, args.seed),
    }
}

/// Runs `run-test` and returns its report.
pub fn run_test(args: &RunTestArgs) -> Result<TestReport> {
    let xy = read_columns(&args.xy, 2)?;
    let yp = read_columns(&args.yprime, 1)?;
    let mut it = xy.into_iter();
    let (x, y) = (it.next().unwrap_or_default(), it.next().unwrap_or_default());
    let y_prime = yp.into_iter().next().unwrap_or_default();
    let sample = RegressionSample::new(x, y, y_prime)?;
    if sample.n() < 4 {
        return Err(Error::SampleTooSmall { got: sample.n(), min: 4 });
    }
    if args.b < crate::procedures::MIN_REPLICATES {
        return Err(invalid(format!(
            "need at least {} null replicates, got {}",
            crate::procedures::MIN_REPLICATES,
            args.b
        )));
    }
    match (&args.kernel, &args.collection) {
        (Some(spec), _) => {
            let g = gram(spec, &sample.x)?;
            let stat = v_stat(&g, &sample.y, &sample.y_prime)?;
            let null = null_for(args, &sample, &spec.label(), &[&g], args.b)?;
            single_kernel_decision(&spec.label(), stat, null.row(0), args.alpha, args.seed)
        }
        (None, Some(c)) => {
            let collection: KernelCollection = parse_collection(c)?;
            let grams = collection
                .members()
                .iter()
                .map(|m| gram(&m.spec, &sample.x))
                .collect::<Result<Vec<_>>>()?;
            let stats = grams
                .iter()
                .map(|g| v_stat(g, &sample.y, &sample.y_prime))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&GramMatrix> = grams.iter().collect();
            let null = null_for(args, &sample, c, &refs, 2 * args.b)?;
            let options = AggregationOptions {
                grid_step: args.grid_step,
                search: SearchMode::Binary,
            };
            aggregated_decision(&collection, &stats, &null, args.alpha, &options)
        }
        (None, None) => Err(invalid("one of --kernel or --collection is required")),
    }
}

#[derive(Serialize)]
struct Defaults {
    #[serde(rename = "P")]
    p: KernelCollection,
    #[serde(rename = "G")]
    g: KernelCollection,
    #[serde(rename = "PG")]
    pg: KernelCollection,
}

fn json_line<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SimulateLevel(args) => run_study(args, true),
        Command::SimulatePower(args) => run_study(args, false),
        Command::RunTest(args) => {
            let report = run_test(args)?;
            write_out(&json_line(&report)?, args.output.as_deref())
        }
        Command::EmitDefaults => {
            let d = default_collections();
            write_out(&json_line(&Defaults { p: d.p, g: d.g, pg: d.pg })?, None)
        }
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| invalid(format!("cannot start {t} threads: {e}")))
            .and_then(|pool| pool.install(|| execute(&cli))),
        None => execute(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kernagg: error: {e}");
            1
        }
    }
}
