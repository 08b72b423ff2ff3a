//! Haar projection and Gaussian kernels, Gram matrices, and weighted kernel
//! collections.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `1 / sqrt(2 pi)`.
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Deepest supported Haar level. Bins are addressed with `u32`.
pub const MAX_HAAR_LEVEL: u32 = 30;

/// Index of a Haar basis function on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaarIndex {
    /// The constant function `1[0, 1]`.
    Phi0,
    /// `2^{j/2} psi(2^j x - k)` with `0 <= k < 2^j`.
    Wavelet { j: u32, k: u64 },
}

/// Mother wavelet on half-open supports: 1 on [0, 1/2), -1 on [1/2, 1).
/// `closed` extends the negative part to t = 1, used for the last wavelet of a
/// level so that x = 1 is covered.
#[inline]
fn psi(t: f64, closed: bool) -> f64 {
    if (0.0..0.5).contains(&t) {
        1.0
    } else if (0.5..1.0).contains(&t) || (closed && t == 1.0) {
        -1.0
    } else {
        0.0
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::OutOfDomain { x })
    }
}

/// Evaluates a Haar basis function at `x` in [0, 1].
pub fn haar_eval(index: HaarIndex, x: f64) -> Result<f64> {
    check_unit(x)?;
    match index {
        HaarIndex::Phi0 => Ok(1.0),
        HaarIndex::Wavelet { j, k } => {
            if j > MAX_HAAR_LEVEL || k >= 1u64 << j {
                return Err(invalid(format!("invalid Haar index (j = {j}, k = {k})")));
            }
            let scale = f64::from(1u32 << j);
            let last = k + 1 == 1u64 << j;
            Ok(scale.sqrt() * psi(scale * x - k as f64, last))
        }
    }
}

/// Dyadic cell of `x` at level `level`: `floor(2^level x)`, with x = 1 placed in
/// the last cell.
#[inline]
pub fn haar_cell(x: f64, level: u32) -> u32 {
    let cells = 1u64 << level;
    let c = (x * cells as f64).floor() as u64;
    c.min(cells - 1) as u32
}

/// A single symmetric kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Projection onto the span of `phi_0` and the wavelets of levels `< level`;
    /// this space has dimension `2^level`.
    #[serde(alias = "haar")]
    HaarProjection { level: u32 },
    /// `(1/h) k((x - y) / h)` with `k` the standard normal density.
    #[serde(alias = "gauss")]
    Gaussian { bandwidth: f64 },
}

impl KernelSpec {
    pub fn haar(level: u32) -> Result<Self> {
        let s = KernelSpec::HaarProjection { level };
        s.validate()?;
        Ok(s)
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let s = KernelSpec::Gaussian { bandwidth };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::HaarProjection { level } if level > MAX_HAAR_LEVEL => Err(invalid(format!(
                "Haar level {level} exceeds the supported maximum {MAX_HAAR_LEVEL}"
            ))),
            KernelSpec::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(invalid(format!("bandwidth h = {bandwidth} must be positive")))
            }
            _ => Ok(()),
        }
    }

    /// Dimension of the projection space, `None` for Gaussian kernels.
    pub fn dimension(&self) -> Option<u64> {
        match *self {
            KernelSpec::HaarProjection { level } => Some(1u64 << level),
            KernelSpec::Gaussian { .. } => None,
        }
    }

    /// Short human-readable label, e.g. `haar(J=3)` or `gauss(h=1/24)`.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::HaarProjection { level } => write!(f, "haar(J={level})"),
            KernelSpec::Gaussian { bandwidth } => {
                let inv = 1.0 / bandwidth;
                if bandwidth < 1.0 && (inv - inv.round()).abs() < 1e-9 {
                    write!(f, "gauss(h=1/{})", inv.round() as u64)
                } else {
                    write!(f, "gauss(h={bandwidth})")
                }
            }
        }
    }
}

/// Parses `haar:J` or `gauss:h` (`h` may be written `1/24`).
impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, param) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("kernel `{s}` must look like haar:J or gauss:h")))?;
        match family.trim().to_ascii_lowercase().as_str() {
            "haar" | "proj" | "projection" => {
                let level = param
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("bad Haar level `{param}`")))?;
                KernelSpec::haar(level)
            }
            "gauss" | "gaussian" => KernelSpec::gaussian(parse_real(param)?),
            other => Err(invalid(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Parses a real number, accepting simple fractions such as `1/24`.
pub(crate) fn parse_real(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || invalid(format!("cannot parse number `{s}`"));
    match s.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| bad())?;
            let den: f64 = den.trim().parse().map_err(|_| bad())?;
            Ok(num / den)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

/// Evaluates `K(x, y)`.
///
/// The Haar projection kernel is computed by summing `phi(x) phi(y)` over the
/// basis; at each level only the wavelet whose support contains `x` can be
/// non-zero, so the other terms are skipped.
pub fn kernel_eval(spec: &KernelSpec, x: f64, y: f64) -> Result<f64> {
    spec.validate()?;
    match *spec {
        KernelSpec::HaarProjection { level } => {
            check_unit(x)?;
            check_unit(y)?;
            // phi_{j,k}(x) phi_{j,k}(y) = 2^j psi(.) psi(.); keeping the factor
            // out of the square roots makes every term exact
            let mut sum = 1.0;
            for j in 0..level {
                let k = u64::from(haar_cell(x, j));
                let last = k + 1 == 1u64 << j;
                let scale = f64::from(1u32 << j);
                sum += scale * psi(scale * x - k as f64, last) * psi(scale * y - k as f64, last);
            }
            Ok(sum)
        }
        KernelSpec::Gaussian { bandwidth } => {
            if !x.is_finite() || !y.is_finite() {
                return Err(invalid("kernel arguments must be finite"));
            }
            Ok(gaussian_kernel(bandwidth, x, y))
        }
    }
}

#[inline]
fn gaussian_kernel(h: f64, x: f64, y: f64) -> f64 {
    let u = (x - y) / h;
    INV_SQRT_2PI * (-0.5 * u * u).exp() / h
}

/// Block structure of a Gram matrix whose entries are `scale * 1{cell_i == cell_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructure {
    pub cells: Vec<u32>,
    pub n_cells: usize,
    pub scale: f64,
}

/// Dense `n x n` evaluation `K(X_i, X_j)` of one kernel on one design.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
    blocks: Option<BlockStructure>,
}

impl GramMatrix {
    /// Wraps a tabulated symmetric matrix (row-major).
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("Gram matrix"));
        }
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: values.len(),
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if values[i * n + j] != values[j * n + i] {
                    return Err(invalid(format!("tabulated kernel is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(GramMatrix {
            n,
            values,
            blocks: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Row-major entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn blocks(&self) -> Option<&BlockStructure> {
        self.blocks.as_ref()
    }

    /// `v^T K v` including the diagonal.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        (0..self.n).map(|i| v[i] * dot(self.row(i), v)).sum()
    }

    /// `sum_{i != j} K_ij e_i e_j`.
    ///
    /// Block-structured matrices use cell sums; dense ones sum the strict upper
    /// triangle. This is the hot path of null replicate generation.
    pub fn offdiag_form(&self, e: &[f64]) -> f64 {
        debug_assert_eq!(e.len(), self.n);
        match &self.blocks {
            Some(b) => offdiag_form_blocked(b, e),
            None => {
                let n = self.n;
                let mut acc = 0.0;
                for i in 0..n.saturating_sub(1) {
                    let row = &self.values[i * n + i + 1..(i + 1) * n];
                    acc += e[i] * dot(row, &e[i + 1..]);
                }
                2.0 * acc
            }
        }
    }
}

/// Sums `e_i e_j` over pairs `i < j` sharing a cell as `e_j` times the running
/// cell sum, which avoids the cancellation of `(sum e)^2 - sum e^2`.
fn offdiag_form_blocked(b: &BlockStructure, e: &[f64]) -> f64 {
    let mut sums = vec![0.0; b.n_cells];
    let mut pairs = 0.0;
    for (&c, &v) in b.cells.iter().zip(e) {
        let s = &mut sums[c as usize];
        pairs += v * *s;
        *s += v;
    }
    2.0 * b.scale * pairs
}

/// Dot product with independent accumulators so the loop vectorises.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().min(b.len());
    let (a, b) = (&a[..len], &b[..len]);
    let mut acc = [0.0f64; 8];
    let chunks = len / 8;
    for c in 0..chunks {
        let base = c * 8;
        for l in 0..8 {
            acc[l] += a[base + l] * b[base + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..len {
        tail += a[i] * b[i];
    }
    let s0 = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let s1 = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    s0 + s1 + tail
}

/// Builds the Gram matrix of `spec` on the design `x`.
pub fn gram(spec: &KernelSpec, x: &[f64]) -> Result<GramMatrix> {
    spec.validate()?;
    if x.is_empty() {
        return Err(Error::Empty("design"));
    }
    let n = x.len();
    match *spec {
        KernelSpec::HaarProjection { level } => {
            if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfDomain { x: bad });
            }
            let cells: Vec<u32> = x.iter().map(|&v| haar_cell(v, level)).collect();
            let scale = (1u64 << level) as f64;
            let mut values = vec![0.0; n * n];
            values
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| {
                    for (j, slot) in row.iter_mut().enumerate() {
                        if cells[i] == cells[j] {
                            *slot = scale;
                        }
                    }
                });
            Ok(GramMatrix {
                n,
                values,
                blocks: Some(BlockStructure {
                    cells,
                    n_cells: 1usize << level,
                    scale,
                }),
            })
        }
        KernelSpec::Gaussian { bandwidth } => {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(invalid("design points must be finite"));
            }
            let mut values = vec![0.0; n * n];
            values
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| {
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = gaussian_kernel(bandwidth, x[i], x[j]);
                    }
                });
            Ok(GramMatrix {
                n,
                values,
                blocks: None,
            })
        }
    }
}

/// One kernel of a collection with its weight `w_m`; the kernel is tested at
/// level `u * exp(-w_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionMember {
    #[serde(flatten)]
    pub spec: KernelSpec,
    pub weight: f64,
}

/// Finite weighted family of kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCollection {
    label: String,
    members: Vec<CollectionMember>,
    /// True when `sum exp(-w_m) <= 1` holds.
    conforming: bool,
}

/// Slack for the `sum exp(-w_m) <= 1` check.
const WEIGHT_SUM_TOL: f64 = 1e-12;

impl KernelCollection {
    /// Builds a collection, requiring `sum exp(-w_m) <= 1`.
    pub fn new(label: impl Into<String>, members: Vec<CollectionMember>) -> Result<Self> {
        let c = Self::build(label.into(), members)?;
        if !c.conforming {
            return Err(invalid(format!(
                "collection `{}` has sum exp(-w) = {:.6} > 1",
                c.label,
                c.exp_weight_sum()
            )));
        }
        Ok(c)
    }

    /// Builds a collection whose weights may violate `sum exp(-w_m) <= 1`. The
    /// result is flagged through [`KernelCollection::is_conforming`].
    pub fn new_unchecked_weights(label: impl Into<String>, members: Vec<CollectionMember>) -> Result<Self> {
        Self::build(label.into(), members)
    }

    fn build(label: String, members: Vec<CollectionMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("kernel collection"));
        }
        let mut seen = HashSet::new();
        for m in &members {
            m.spec.validate()?;
            if !(m.weight >= 0.0 && m.weight.is_finite()) {
                return Err(invalid(format!("weight {} of {} must be finite and >= 0", m.weight, m.spec)));
            }
            if !seen.insert(m.spec.label()) {
                return Err(invalid(format!("duplicate kernel {} in collection `{label}`", m.spec)));
            }
        }
        let sum: f64 = members.iter().map(|m| (-m.weight).exp()).sum();
        Ok(KernelCollection {
            label,
            members,
            conforming: sum <= 1.0 + WEIGHT_SUM_TOL,
        })
    }

    /// A one-kernel collection.
    pub fn singleton(spec: KernelSpec, weight: f64) -> Result<Self> {
        Self::new(spec.label(), vec![CollectionMember { spec, weight }])
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn members(&self) -> &[CollectionMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_conforming(&self) -> bool {
        self.conforming
    }

    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.weight).collect()
    }

    pub fn exp_weight_sum(&self) -> f64 {
        self.members.iter().map(|m| (-m.weight).exp()).sum()
    }
}

/// Haar levels of the projection collection.
pub const DEFAULT_HAAR_LEVELS: std::ops::RangeInclusive<u32> = 0..=7;
/// Bandwidths of the Gaussian collection.
pub const DEFAULT_BANDWIDTHS: [f64; 6] = [1.0 / 24.0, 1.0 / 16.0, 1.0 / 12.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0];

/// `ln(J + 1) + ln(pi / sqrt(6))`.
fn haar_log_weight(level: u32) -> f64 {
    (f64::from(level) + 1.0).ln() + (PI / 6f64.sqrt()).ln()
}

/// The three collections of the simulation study.
#[derive(Debug, Clone)]
pub struct DefaultCollections {
    /// Haar levels 0..=7, `w_J = 2 (ln(J+1) + ln(pi/sqrt 6))`.
    pub p: KernelCollection,
    /// Six Gaussian bandwidths with `w = 1/6`. Non-conforming.
    pub g: KernelCollection,
    /// Union of both, `w_J = ln(J+1) + ln(pi/sqrt 6)` and `w = 1/12`. Non-conforming.
    pub pg: KernelCollection,
}

fn haar_members(factor: f64) -> Vec<CollectionMember> {
    DEFAULT_HAAR_LEVELS
        .map(|level| CollectionMember {
            spec: KernelSpec::HaarProjection { level },
            weight: factor * haar_log_weight(level),
        })
        .collect()
}

fn gaussian_members(weight: f64) -> Vec<CollectionMember> {
    DEFAULT_BANDWIDTHS
        .iter()
        .map(|&bandwidth| CollectionMember {
            spec: KernelSpec::Gaussian { bandwidth },
            weight,
        })
        .collect()
}

pub fn default_collections() -> DefaultCollections {
    let p = KernelCollection::new("P", haar_members(2.0)).expect("P weights are summable");
    let g = KernelCollection::new_unchecked_weights("G", gaussian_members(1.0 / 6.0)).expect("valid G");
    let mut pg_members = haar_members(1.0);
    pg_members.extend(gaussian_members(1.0 / 12.0));
    let pg = KernelCollection::new_unchecked_weights("PG", pg_members).expect("valid PG");
    DefaultCollections { p, g, pg }
}

/// Looks up `P`, `G` or `PG`.
pub fn default_collection(name: &str) -> Result<KernelCollection> {
    let d = default_collections();
    match name.trim().to_ascii_uppercase().as_str() {
        "P" => Ok(d.p),
        "G" => Ok(d.g),
        "PG" => Ok(d.pg),
        other => Err(invalid(format!("unknown default collection `{other}` (expected P, G or PG)"))),
    }
}

/// Parses `P`, `G`, `PG`, or a list `haar:3=1.2,gauss:1/8=0.5` of
/// `kernel=weight` entries.
pub fn parse_collection(s: &str) -> Result<KernelCollection> {
    if !s.contains(':') {
        return default_collection(s);
    }
    let members = s
        .split(',')
        .map(|item| {
            let (kernel, weight) = item
                .split_once('=')
                .ok_or_else(|| invalid(format!("collection entry `{item}` must look like kernel=weight")))?;
            Ok(CollectionMember {
                spec: kernel.parse()?,
                weight: parse_real(weight)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    KernelCollection::new_unchecked_weights("custom", members)
}
