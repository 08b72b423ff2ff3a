//! Data generation for the random-design regression model and its
//! fixed-design companion, plus the alternative signals used in the studies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, domain, StreamRng};

/// User-supplied regression function.
#[derive(Clone)]
pub struct CustomSignal(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomSignal(..)")
    }
}

/// Two custom signals are equal only if they share the same closure.
impl PartialEq for CustomSignal {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Regression function under test.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// The null hypothesis, f = 0.
    #[default]
    Zero,
    /// `eps * 1[0, a) - eps * 1[a, 2a)`.
    Jump1 { a: f64, eps: f64 },
    /// `tau * sum_j h_j / 2 * (1 + sgn(x - p_j))`.
    StepSum {
        heights: Vec<f64>,
        positions: Vec<f64>,
        tau: f64,
    },
    /// `c * cos(10 pi x)`.
    Cosine10Pi { c: f64 },
    /// `rho * cos(2 pi j x)`.
    CosineFreq { rho: f64, j: u32 },
    #[serde(skip)]
    Custom(CustomSignal),
}

/// Heights used for the step-sum alternative when none are configured.
pub const DEFAULT_STEP_HEIGHTS: [f64; 3] = [2.0, -3.0, 1.0];
/// Jump positions used for the step-sum alternative when none are configured.
pub const DEFAULT_STEP_POSITIONS: [f64; 3] = [0.2, 0.5, 0.8];

impl SignalSpec {
    pub fn jump1(a: f64, eps: f64) -> Result<Self> {
        let s = SignalSpec::Jump1 { a, eps };
        s.validate()?;
        Ok(s)
    }

    pub fn step_sum(heights: Vec<f64>, positions: Vec<f64>, tau: f64) -> Result<Self> {
        let s = SignalSpec::StepSum {
            heights,
            positions,
            tau,
        };
        s.validate()?;
        Ok(s)
    }

    /// Step-sum alternative with the default heights and positions.
    pub fn step_sum_default(tau: f64) -> Result<Self> {
        Self::step_sum(
            DEFAULT_STEP_HEIGHTS.to_vec(),
            DEFAULT_STEP_POSITIONS.to_vec(),
            tau,
        )
    }

    pub fn cosine_10pi(c: f64) -> Result<Self> {
        let s = SignalSpec::Cosine10Pi { c };
        s.validate()?;
        Ok(s)
    }

    pub fn cosine_freq(rho: f64, j: u32) -> Result<Self> {
        let s = SignalSpec::CosineFreq { rho, j };
        s.validate()?;
        Ok(s)
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        SignalSpec::Custom(CustomSignal(Arc::new(f)))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SignalSpec::Zero)
    }

    /// Checks the parameter constraints of each family.
    pub fn validate(&self) -> Result<()> {
        match self {
            SignalSpec::Zero | SignalSpec::Custom(_) => Ok(()),
            SignalSpec::Jump1 { a, eps } => {
                if !(*a > 0.0 && *a < 1.0) {
                    return Err(invalid(format!("jump width a = {a} must lie in (0, 1)")));
                }
                if 2.0 * a > 1.0 {
                    return Err(invalid(format!("jump width a = {a} needs 2a <= 1")));
                }
                if !(*eps > 0.0 && *eps <= 1.0) {
                    return Err(invalid(format!("jump height eps = {eps} must lie in (0, 1]")));
                }
                Ok(())
            }
            SignalSpec::StepSum {
                heights,
                positions,
                tau,
            } => {
                if heights.len() != positions.len() {
                    return Err(Error::DimensionMismatch {
                        expected: heights.len(),
                        got: positions.len(),
                    });
                }
                if heights.is_empty() {
                    return Err(Error::Empty("step heights"));
                }
                if let Some(p) = positions.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                    return Err(invalid(format!("step position {p} must lie in (0, 1)")));
                }
                if !(tau.is_finite() && *tau > 0.0) {
                    return Err(invalid(format!("tau = {tau} must be positive")));
                }
                if heights.iter().any(|h| !h.is_finite()) {
                    return Err(invalid("step heights must be finite"));
                }
                Ok(())
            }
            SignalSpec::Cosine10Pi { c } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(invalid(format!("amplitude c = {c} must be positive")));
                }
                Ok(())
            }
            SignalSpec::CosineFreq { rho, j } => {
                if !(rho.is_finite() && *rho >= 0.0) {
                    return Err(invalid(format!("amplitude rho = {rho} must be >= 0")));
                }
                if *j == 0 {
                    return Err(invalid("frequency j must be a positive integer"));
                }
                Ok(())
            }
        }
    }

    /// Evaluates f(x) without the domain check.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            SignalSpec::Zero => 0.0,
            SignalSpec::Jump1 { a, eps } => {
                if x >= 0.0 && x < *a {
                    *eps
                } else if x >= *a && x < 2.0 * a {
                    -eps
                } else {
                    0.0
                }
            }
            SignalSpec::StepSum {
                heights,
                positions,
                tau,
            } => {
                let s: f64 = heights
                    .iter()
                    .zip(positions)
                    .map(|(h, p)| h / 2.0 * (1.0 + signum0(x - p)))
                    .sum();
                tau * s
            }
            SignalSpec::Cosine10Pi { c } => c * (10.0 * PI * x).cos(),
            SignalSpec::CosineFreq { rho, j } => rho * (2.0 * PI * f64::from(*j) * x).cos(),
            SignalSpec::Custom(f) => (f.0)(x),
        }
    }

    fn restricted_to_unit_interval(&self) -> bool {
        !matches!(self, SignalSpec::Zero | SignalSpec::Custom(_))
    }
}

/// Sign with sgn(0) = 0.
#[inline]
fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Parses `zero`, `jump1:a=0.25,eps=1`, `steps:tau=1` (optionally with
/// `heights=2/-3/1` and `positions=0.2/0.5/0.8`), `cos10pi:c=2` or
/// `cosine:rho=1,j=6`.
impl FromStr for SignalSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = BTreeMap::new();
        for item in rest.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| invalid(format!("signal parameter `{item}` must look like name=value")))?;
            params.insert(k.trim().to_ascii_lowercase(), v.trim().to_owned());
        }
        let mut take = |name: &str| params.remove(name);
        let real = |v: Option<String>, name: &str| -> Result<f64> {
            let v = v.ok_or_else(|| invalid(format!("signal `{kind}` needs `{name}`")))?;
            crate::kernels::parse_real(&v)
        };
        let list = |v: String| -> Result<Vec<f64>> { v.split('/').map(crate::kernels::parse_real).collect() };
        let spec = match kind.trim().to_ascii_lowercase().as_str() {
            "zero" | "null" => SignalSpec::Zero,
            "jump1" => SignalSpec::jump1(real(take("a"), "a")?, real(take("eps"), "eps")?)?,
            "steps" | "step_sum" => {
                let tau = real(take("tau"), "tau")?;
                let heights = take("heights").map(list).transpose()?;
                let positions = take("positions").map(list).transpose()?;
                SignalSpec::step_sum(
                    heights.unwrap_or_else(|| DEFAULT_STEP_HEIGHTS.to_vec()),
                    positions.unwrap_or_else(|| DEFAULT_STEP_POSITIONS.to_vec()),
                    tau,
                )?
            }
            "cos10pi" | "cosine_10pi" => SignalSpec::cosine_10pi(real(take("c"), "c")?)?,
            "cosine" | "cosine_freq" => {
                let rho = real(take("rho"), "rho")?;
                let j = take("j").ok_or_else(|| invalid("signal `cosine` needs `j`"))?;
                let j = j.parse().map_err(|_| invalid(format!("bad frequency `{j}`")))?;
                SignalSpec::cosine_freq(rho, j)?
            }
            other => return Err(invalid(format!("unknown signal `{other}`"))),
        };
        if let Some(extra) = params.keys().next() {
            return Err(invalid(format!("unexpected signal parameter `{extra}`")));
        }
        Ok(spec)
    }
}

/// Evaluates the regression function at `x`.
///
/// The step and cosine families are defined on [0, 1] only.
pub fn eval_signal(spec: &SignalSpec, x: f64) -> Result<f64> {
    if x.is_nan() || (spec.restricted_to_unit_interval() && !(0.0..=1.0).contains(&x)) {
        return Err(Error::OutOfDomain { x });
    }
    Ok(spec.eval_unchecked(x))
}

/// Density of the design points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignDensity {
    #[default]
    UniformOn01,
}

impl DesignDensity {
    fn draw(self, rng: &mut StreamRng) -> f64 {
        match self {
            DesignDensity::UniformOn01 => rng.random::<f64>(),
        }
    }
}

/// One observation of both samples: the random-design pairs `(x_i, y_i)` and
/// the fixed-design responses `y'_i` observed at `i / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_prime: Vec<f64>,
    /// Noise level used by the generator, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_true: Option<f64>,
}

impl RegressionSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>, y_prime: Vec<f64>) -> Result<Self> {
        let s = RegressionSample {
            x,
            y,
            y_prime,
            sigma_true: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.len();
        check_even(n)?;
        for len in [self.y.len(), self.y_prime.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if self
            .x
            .iter()
            .chain(&self.y)
            .chain(&self.y_prime)
            .any(|v| !v.is_finite())
        {
            return Err(invalid("sample contains non-finite values"));
        }
        Ok(())
    }
}

pub(crate) fn check_even(n: usize) -> Result<()> {
    if !n.is_multiple_of(2) {
        return Err(Error::OddSampleSize(n));
    }
    if n == 0 {
        return Err(Error::Empty("sample"));
    }
    Ok(())
}

fn check_generator_args(n: usize, sigma: f64, signal: &SignalSpec) -> Result<()> {
    check_even(n)?;
    if n < 4 {
        return Err(Error::SampleTooSmall { got: n, min: 4 });
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(invalid(format!("sigma = {sigma} must be finite and >= 0")));
    }
    signal.validate()
}

/// Draws `(x, y)` from the random-design model `y_i = f(x_i) + sigma * eps_i`.
pub fn sample_regression(
    n: usize,
    signal: &SignalSpec,
    sigma: f64,
    design: DesignDensity,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_generator_args(n, sigma, signal)?;
    let mut design_rng = rng::stream(seed, domain::DESIGN, 0);
    let mut noise_rng = rng::stream(seed, domain::NOISE, 0);
    let x: Vec<f64> = (0..n).map(|_| design.draw(&mut design_rng)).collect();
    let y = x
        .iter()
        .map(|&xi| {
            let z: f64 = noise_rng.sample(StandardNormal);
            signal.eval_unchecked(xi) + sigma * z
        })
        .collect();
    Ok((x, y))
}

/// Draws the fixed-design responses `y'_i = f(i / n) + sigma * eps'_i`.
///
/// Uses a stream disjoint from [`sample_regression`] for the same seed.
pub fn sample_fixed_design(n: usize, signal: &SignalSpec, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    check_generator_args(n, sigma, signal)?;
    let mut noise_rng = rng::stream(seed, domain::FIXED_NOISE, 0);
    let nf = n as f64;
    Ok((1..=n)
        .map(|i| {
            let z: f64 = noise_rng.sample(StandardNormal);
            signal.eval_unchecked(i as f64 / nf) + sigma * z
        })
        .collect())
}

/// Draws both samples of one observation.
pub fn sample_observation(
    n: usize,
    signal: &SignalSpec,
    sigma: f64,
    design: DesignDensity,
    seed: u64,
) -> Result<RegressionSample> {
    let (x, y) = sample_regression(n, signal, sigma, design, seed)?;
    let y_prime = sample_fixed_design(n, signal, sigma, seed)?;
    Ok(RegressionSample {
        x,
        y,
        y_prime,
        sigma_true: Some(sigma),
    })
}

/// Bias `a^2 = (1/n) sum_i [f((2i-1)/n) - f(2i/n)]^2` of the paired-difference
/// variance estimator.
pub fn signal_bias_a2(signal: &SignalSpec, n: usize) -> Result<f64> {
    check_even(n)?;
    signal.validate()?;
    let nf = n as f64;
    let sum: f64 = (1..=n / 2)
        .map(|i| {
            let d = signal.eval_unchecked((2 * i - 1) as f64 / nf)
                - signal.eval_unchecked((2 * i) as f64 / nf);
            d * d
        })
        .sum();
    Ok(sum / nf)
}
