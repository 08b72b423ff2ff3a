//! Empirical quantiles of null replicates and the level correction `u_alpha`
//! of the aggregated test.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::NullReplicateMatrix;

/// Default spacing of the `u` grid, `2^-16`.
pub const DEFAULT_GRID_STEP: f64 = 1.0 / 65536.0;

/// Sorted sample defining `F_B(t) = #{values <= t} / B`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("empirical sample"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(invalid("empirical sample contains NaN"));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(EmpiricalDistribution { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    /// Index of `inf { t : F_B(t) >= level }` in the sorted sample, for
    /// `level` in [0, 1]: the smallest `k` with `(k + 1) / B >= level`.
    fn quantile_index(&self, level: f64) -> usize {
        let b = self.sorted.len();
        let bf = b as f64;
        let meets = |k: usize| (k + 1) as f64 / bf >= level;
        let mut k = ((level * bf).ceil() as usize).saturating_sub(1).min(b - 1);
        // the float estimate can be one off either way
        while k > 0 && meets(k - 1) {
            k -= 1;
        }
        while k + 1 < b && !meets(k) {
            k += 1;
        }
        k
    }

    /// Smallest sample value `t` with `F_B(t) >= level`.
    pub fn empirical_quantile(&self, level: f64) -> Result<f64> {
        check_level(level)?;
        Ok(self.sorted[self.quantile_index(level)])
    }

    /// Estimated `(1 - alpha)` quantile.
    pub fn upper_quantile(&self, alpha: f64) -> Result<f64> {
        self.empirical_quantile(1.0 - alpha)
    }
}

fn check_level(level: f64) -> Result<()> {
    if (0.0..=1.0).contains(&level) {
        Ok(())
    } else {
        Err(invalid(format!("quantile level {level} outside [0, 1]")))
    }
}

/// Smallest value `t` of `sample` with `#{v <= t} / B >= level`.
pub fn empirical_quantile(sample: &[f64], level: f64) -> Result<f64> {
    check_level(level)?;
    EmpiricalDistribution::new(sample.to_vec())?.empirical_quantile(level)
}

/// Monte Carlo estimate of the conditional `(1 - alpha)` quantile from one row
/// of null replicates.
pub fn mc_quantile(row: &[f64], alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha = {alpha} outside [0, 1]")));
    }
    empirical_quantile(row, 1.0 - alpha)
}

/// Estimated level correction of the aggregated test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UAlphaEstimate {
    /// `grid_index * grid_step`; meaningful only when `feasible`.
    pub u: f64,
    pub grid_index: u64,
    pub grid_step: f64,
    /// False when even the smallest grid value exceeds `alpha`.
    pub feasible: bool,
    /// Estimated exceedance probability at `u`.
    pub exceedance: f64,
}

/// How the `u` grid is searched.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Bisection, valid because the exceedance is nondecreasing in `u`.
    #[default]
    Binary,
    /// Every grid point, from the top down. For cross-checking only.
    Exhaustive,
}

/// Splits `2B` null columns into a quantile half (columns `0..B`) and a
/// probability half (`B..2B`), and evaluates the aggregated exceedance
/// probability for candidate corrections `u`.
#[derive(Debug, Clone)]
pub struct AggregationCalibrator<'a> {
    quantile_half: Vec<EmpiricalDistribution>,
    probability_half: Vec<&'a [f64]>,
    discount: Vec<f64>,
}

impl<'a> AggregationCalibrator<'a> {
    pub fn new(null: &'a NullReplicateMatrix, weights: &[f64]) -> Result<Self> {
        if weights.len() != null.n_kernels() {
            return Err(Error::DimensionMismatch {
                expected: null.n_kernels(),
                got: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(invalid(format!("weight {w} must be finite and >= 0")));
        }
        let total = null.b_count();
        if total < 2 || !total.is_multiple_of(2) {
            return Err(invalid(format!(
                "aggregated calibration needs an even number of null columns, got {total}"
            )));
        }
        let half = total / 2;
        let quantile_half = (0..null.n_kernels())
            .map(|m| EmpiricalDistribution::new(null.row(m)[..half].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let probability_half = (0..null.n_kernels()).map(|m| &null.row(m)[half..]).collect();
        Ok(AggregationCalibrator {
            quantile_half,
            probability_half,
            discount: weights.iter().map(|w| (-w).exp()).collect(),
        })
    }

    /// Replicates per half.
    pub fn half_size(&self) -> usize {
        self.quantile_half[0].len()
    }

    /// Quantile level `1 - u exp(-w_m)` of kernel `m`, clamped to [0, 1].
    pub fn level(&self, m: usize, u: f64) -> f64 {
        (1.0 - u * self.discount[m]).clamp(0.0, 1.0)
    }

    /// Per-kernel thresholds `q_m(u)` from the quantile half.
    pub fn thresholds(&self, u: f64) -> Vec<f64> {
        self.quantile_half
            .iter()
            .enumerate()
            .map(|(m, d)| d.sorted[d.quantile_index(self.level(m, u))])
            .collect()
    }

    /// Fraction of probability-half columns in which some kernel exceeds its
    /// threshold `q_m(u)`.
    pub fn exceedance(&self, u: f64) -> f64 {
        let thresholds = self.thresholds(u);
        let half = self.probability_half[0].len();
        let mut hit = vec![false; half];
        for (row, q) in self.probability_half.iter().zip(&thresholds) {
            for (h, v) in hit.iter_mut().zip(row.iter()) {
                *h |= *v > *q;
            }
        }
        hit.iter().filter(|h| **h).count() as f64 / half as f64
    }

    /// Largest grid value `u` with `exceedance(u) <= alpha`.
    pub fn search(&self, alpha: f64, grid_step: f64, mode: SearchMode) -> Result<UAlphaEstimate> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(format!("alpha = {alpha} outside (0, 1]")));
        }
        if !(grid_step > 0.0 && grid_step <= 1.0) {
            return Err(invalid(format!("grid step {grid_step} outside (0, 1]")));
        }
        let top = (1.0 / grid_step + 1e-9).floor() as u64;
        let at = |k: u64| self.exceedance(k as f64 * grid_step);
        let found = match mode {
            SearchMode::Binary => self.bisect(alpha, top, &at),
            SearchMode::Exhaustive => (1..=top).rev().map(|k| (k, at(k))).find(|(_, p)| *p <= alpha),
        };
        Ok(match found {
            Some((k, p)) => UAlphaEstimate {
                u: k as f64 * grid_step,
                grid_index: k,
                grid_step,
                feasible: true,
                exceedance: p,
            },
            None => UAlphaEstimate {
                u: grid_step,
                grid_index: 1,
                grid_step,
                feasible: false,
                exceedance: at(1),
            },
        })
    }

    fn bisect(&self, alpha: f64, top: u64, at: &dyn Fn(u64) -> f64) -> Option<(u64, f64)> {
        let mut probes: Vec<(u64, f64)> = Vec::with_capacity(24);
        let mut probe = |k: u64| {
            let p = at(k);
            probes.push((k, p));
            p
        };
        let p_top = probe(top);
        let result = if p_top <= alpha {
            Some((top, p_top))
        } else {
            let p_low = probe(1);
            if p_low > alpha {
                None
            } else {
                // invariant: exceedance(lo) <= alpha < exceedance(hi)
                let (mut lo, mut p_lo, mut hi) = (1u64, p_low, top);
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    let p = probe(mid);
                    if p <= alpha {
                        lo = mid;
                        p_lo = p;
                    } else {
                        hi = mid;
                    }
                }
                Some((lo, p_lo))
            }
        };
        probes.sort_by_key(|(k, _)| *k);
        assert!(
            probes.windows(2).all(|w| w[0].1 <= w[1].1),
            "exceedance probability is not monotone in u: {probes:?}"
        );
        result
    }
}

/// Estimates `u_alpha` from `2B` null columns (quantile half first).
pub fn estimate_u_alpha(
    null: &NullReplicateMatrix,
    weights: &[f64],
    alpha: f64,
    grid_step: f64,
) -> Result<UAlphaEstimate> {
    AggregationCalibrator::new(null, weights)?.search(alpha, grid_step, SearchMode::Binary)
}
