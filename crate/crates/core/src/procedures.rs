//! Decision procedures: the single-kernel test, the aggregated test over a
//! weighted kernel collection, and the theoretical level selectors.
//!
//! Both kernel tests draw their null replicates from the same column streams,
//! so for a given seed the single-kernel test with `B` replicates sees exactly
//! the quantile half of the aggregated test's `2B` columns.

use serde::{Deserialize, Serialize};

use crate::calibrate::{AggregationCalibrator, EmpiricalDistribution, SearchMode, UAlphaEstimate, DEFAULT_GRID_STEP};
use crate::datagen::RegressionSample;
use crate::error::{invalid, Error, Result};
use crate::kernels::{gram, GramMatrix, KernelCollection, KernelSpec};
use crate::stats::{null_replicates, v_stat, NullReplicateMatrix, StatValue};

/// Smallest accepted number of null replicates.
pub const MIN_REPLICATES: usize = 100;

/// Per-kernel diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelOutcome {
    pub label: String,
    pub v_k: f64,
    pub t_k: f64,
    /// Critical value; infinite when the aggregated calibration is infeasible.
    /// JSON has no infinity, so it is written as `null`.
    #[serde(deserialize_with = "null_as_infinity")]
    pub threshold: f64,
    /// Quantile level the threshold was read at.
    pub level: f64,
    pub triggered: bool,
}

fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Outcome of a kernel test on one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub procedure: String,
    pub reject: bool,
    pub per_kernel: Vec<KernelOutcome>,
    /// Level correction, aggregated test only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_alpha: Option<UAlphaEstimate>,
    pub alpha: f64,
    pub sigma_hat_sq: f64,
    /// Replicates per half (aggregated) or in total (single).
    pub b_count: usize,
    pub seed: u64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha = {alpha} outside (0, 1]")))
    }
}

fn check_sample(sample: &RegressionSample, b: usize) -> Result<()> {
    sample.validate()?;
    if sample.n() < 4 {
        return Err(Error::SampleTooSmall { got: sample.n(), min: 4 });
    }
    if b < MIN_REPLICATES {
        return Err(invalid(format!(
            "need at least {MIN_REPLICATES} null replicates, got {b}"
        )));
    }
    Ok(())
}

/// Single-kernel test: rejects when `V_K` exceeds the Monte Carlo estimate of
/// its conditional `(1 - alpha)` quantile from `b` null replicates.
pub fn single_kernel_test(
    sample: &RegressionSample,
    spec: &KernelSpec,
    alpha: f64,
    b: usize,
    seed: u64,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    check_sample(sample, b)?;
    let g = gram(spec, &sample.x)?;
    let stat = v_stat(&g, &sample.y, &sample.y_prime)?;
    let null = null_replicates(&[&g], b, seed)?;
    single_kernel_decision(&spec.label(), stat, null.row(0), alpha, seed)
}

/// Single-kernel decision from a precomputed statistic and null row.
pub fn single_kernel_decision(
    label: &str,
    stat: StatValue,
    null_row: &[f64],
    alpha: f64,
    seed: u64,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    let dist = EmpiricalDistribution::new(null_row.to_vec())?;
    let level = 1.0 - alpha;
    let threshold = dist.empirical_quantile(level)?;
    let triggered = stat.v_k > threshold;
    Ok(TestReport {
        procedure: label.to_owned(),
        reject: triggered,
        per_kernel: vec![KernelOutcome {
            label: label.to_owned(),
            v_k: stat.v_k,
            t_k: stat.t_k,
            threshold,
            level,
            triggered,
        }],
        u_alpha: None,
        alpha,
        sigma_hat_sq: stat.sigma_hat_sq,
        b_count: null_row.len(),
        seed,
    })
}

/// Tuning of the `u_alpha` search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationOptions {
    pub grid_step: f64,
    pub search: SearchMode,
}

impl Default for AggregationOptions {
    fn default() -> Self {
        AggregationOptions {
            grid_step: DEFAULT_GRID_STEP,
            search: SearchMode::Binary,
        }
    }
}

/// Aggregated test with the default `u_alpha` grid.
pub fn aggregated_test(
    sample: &RegressionSample,
    collection: &KernelCollection,
    alpha: f64,
    b: usize,
    seed: u64,
) -> Result<TestReport> {
    aggregated_test_with(sample, collection, alpha, b, seed, &AggregationOptions::default())
}

/// Aggregated test: draws `2b` null columns, calibrates `u_alpha` (quantiles
/// from columns `0..b`, exceedance from `b..2b`), and rejects when some kernel
/// `m` has `V_m` above its `(1 - u_alpha exp(-w_m))` quantile.
pub fn aggregated_test_with(
    sample: &RegressionSample,
    collection: &KernelCollection,
    alpha: f64,
    b: usize,
    seed: u64,
    options: &AggregationOptions,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    check_sample(sample, b)?;
    let grams = collection
        .members()
        .iter()
        .map(|m| gram(&m.spec, &sample.x))
        .collect::<Result<Vec<GramMatrix>>>()?;
    let refs: Vec<&GramMatrix> = grams.iter().collect();
    let stats = grams
        .iter()
        .map(|g| v_stat(g, &sample.y, &sample.y_prime))
        .collect::<Result<Vec<_>>>()?;
    let null = null_replicates(&refs, 2 * b, seed)?;
    aggregated_decision(collection, &stats, &null, alpha, options)
}

/// Aggregated decision from precomputed statistics and `2B` null columns whose
/// rows follow the collection's member order.
pub fn aggregated_decision(
    collection: &KernelCollection,
    stats: &[StatValue],
    null: &NullReplicateMatrix,
    alpha: f64,
    options: &AggregationOptions,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    if stats.len() != collection.len() {
        return Err(Error::DimensionMismatch {
            expected: collection.len(),
            got: stats.len(),
        });
    }
    let calibrator = AggregationCalibrator::new(null, &collection.weights())?;
    let u = calibrator.search(alpha, options.grid_step, options.search)?;
    let thresholds = if u.feasible {
        calibrator.thresholds(u.u)
    } else {
        vec![f64::INFINITY; collection.len()]
    };
    let per_kernel: Vec<KernelOutcome> = collection
        .members()
        .iter()
        .zip(stats)
        .enumerate()
        .map(|(m, (member, stat))| KernelOutcome {
            label: member.spec.label(),
            v_k: stat.v_k,
            t_k: stat.t_k,
            threshold: thresholds[m],
            level: calibrator.level(m, u.u),
            triggered: u.feasible && stat.v_k > thresholds[m],
        })
        .collect();
    let reject = per_kernel.iter().any(|k| k.triggered);
    Ok(TestReport {
        procedure: collection.label().to_owned(),
        reject,
        per_kernel,
        u_alpha: Some(u),
        alpha,
        sigma_hat_sq: stats[0].sigma_hat_sq,
        b_count: calibrator.half_size(),
        seed: null.seed(),
    })
}

/// Theoretical resolution-level selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelSelector {
    /// Haar level for a known smoothness.
    ProjStar,
    /// Gaussian bandwidth index (`h = 2^-l`) for a known smoothness.
    GaussStar,
    /// Haar level of the adaptive procedure.
    ProjAdaptive,
    /// Gaussian bandwidth index of the adaptive procedure.
    GaussAdaptive,
}

/// Integer part of `log2(n^{2/(1+4 delta)})`, or of
/// `log2((n / ln ln n)^{2/(1+4 delta)})` for the adaptive selectors.
pub fn select_level(selector: LevelSelector, n: usize, delta: f64) -> Result<u32> {
    if n < 3 {
        return Err(Error::SampleTooSmall { got: n, min: 3 });
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid(format!("smoothness delta = {delta} must be positive")));
    }
    let nf = n as f64;
    let base = match selector {
        LevelSelector::ProjStar | LevelSelector::GaussStar => nf,
        LevelSelector::ProjAdaptive | LevelSelector::GaussAdaptive => {
            let lnln = nf.ln().ln();
            if lnln < 1.0 {
                return Err(invalid(format!(
                    "adaptive selectors need ln ln n >= 1 (n >= 16), got n = {n}"
                )));
            }
            nf / lnln
        }
    };
    let value = 2.0 * base.log2() / (1.0 + 4.0 * delta);
    Ok(value.floor().max(0.0) as u32)
}
