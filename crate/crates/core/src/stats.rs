//! Test statistics and Monte Carlo null replicates.
//!
//! For a kernel `K` the statistic is `V_K = T_K / sigma_hat^2` with
//!
//! ```text
//! T_K         = 1/(n(n-1)) * sum_{i != j} K(X_i, X_j) Y_i Y_j
//! sigma_hat^2 = 1/n * sum_{i=1}^{n/2} (Y'_{2i-1} - Y'_{2i})^2
//! ```
//!
//! A null replicate replaces `Y` and `Y'` by fresh standard normal vectors while
//! keeping the design. Under `f = 0` it has the conditional law of `V_K` given
//! the design.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::kernels::GramMatrix;
use crate::rng::{self, domain};

/// Statistic for one kernel on one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatValue {
    pub t_k: f64,
    pub sigma_hat_sq: f64,
    pub v_k: f64,
}

fn check_dims(gram: &GramMatrix, len: usize) -> Result<()> {
    if gram.n() != len {
        return Err(Error::DimensionMismatch {
            expected: gram.n(),
            got: len,
        });
    }
    if len < 2 {
        return Err(Error::SampleTooSmall { got: len, min: 2 });
    }
    Ok(())
}

/// `T_K = sum_{i != j} K_ij y_i y_j / (n(n-1))`.
pub fn t_stat(gram: &GramMatrix, y: &[f64]) -> Result<f64> {
    check_dims(gram, y.len())?;
    let n = y.len() as f64;
    Ok(gram.offdiag_form(y) / (n * (n - 1.0)))
}

/// Paired-difference variance estimator on the fixed-design responses.
pub fn sigma_hat_sq(y_prime: &[f64]) -> Result<f64> {
    if !y_prime.len().is_multiple_of(2) {
        return Err(Error::OddSampleSize(y_prime.len()));
    }
    if y_prime.is_empty() {
        return Err(Error::SampleTooSmall { got: 0, min: 2 });
    }
    Ok(paired_sq_sum(y_prime) / y_prime.len() as f64)
}

#[inline]
fn paired_sq_sum(v: &[f64]) -> f64 {
    v.chunks_exact(2)
        .map(|p| {
            let d = p[0] - p[1];
            d * d
        })
        .sum()
}

/// `V_K = T_K / sigma_hat^2`.
pub fn v_stat(gram: &GramMatrix, y: &[f64], y_prime: &[f64]) -> Result<StatValue> {
    check_dims(gram, y.len())?;
    if y_prime.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: y_prime.len(),
        });
    }
    let t_k = t_stat(gram, y)?;
    let s2 = sigma_hat_sq(y_prime)?;
    if s2 <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(StatValue {
        t_k,
        sigma_hat_sq: s2,
        v_k: t_k / s2,
    })
}

/// `|M| x B` array of null statistics; entry `(m, b)` is kernel `m` evaluated on
/// the `b`-th pair of noise vectors, shared by all kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct NullReplicateMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    seed: u64,
}

impl NullReplicateMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let cols = rows.first().map(Vec::len).ok_or(Error::Empty("null replicate rows"))?;
        if cols == 0 {
            return Err(Error::Empty("null replicate columns"));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: r.len(),
            });
        }
        Ok(NullReplicateMatrix {
            rows: rows.len(),
            cols,
            values: rows.concat(),
            seed,
        })
    }

    /// Number of kernels.
    pub fn n_kernels(&self) -> usize {
        self.rows
    }

    /// Number of replicates `B`.
    pub fn b_count(&self) -> usize {
        self.cols
    }

    /// Seed the noise columns were derived from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.cols..(m + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, m: usize, b: usize) -> f64 {
        self.values[m * self.cols + b]
    }

    /// Keeps only the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> NullReplicateMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &m in rows {
            values.extend_from_slice(self.row(m));
        }
        NullReplicateMatrix {
            rows: rows.len(),
            cols: self.cols,
            values,
            seed: self.seed,
        }
    }

    /// Keeps the first `cols` columns.
    pub fn truncate_columns(&self, cols: usize) -> NullReplicateMatrix {
        let cols = cols.min(self.cols);
        let mut values = Vec::with_capacity(self.rows * cols);
        for m in 0..self.rows {
            values.extend_from_slice(&self.row(m)[..cols]);
        }
        NullReplicateMatrix {
            rows: self.rows,
            cols,
            values,
            seed: self.seed,
        }
    }
}

/// Columns per parallel task.
const COLUMN_CHUNK: usize = 512;

/// Draws `count` null replicates for every Gram matrix.
///
/// Column `b` uses the noise stream `(seed, NULL_COLUMN, b)`: first `n` draws for
/// `eps`, then `n` for `eps'`. Columns are therefore independent of each other,
/// of the set of kernels, and of the thread count, and the first `k` columns
/// of a longer run equal a run with `count = k`.
pub fn null_replicates(grams: &[&GramMatrix], count: usize, seed: u64) -> Result<NullReplicateMatrix> {
    let first = grams.first().ok_or(Error::Empty("kernel list"))?;
    let n = first.n();
    if let Some(g) = grams.iter().find(|g| g.n() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g.n(),
        });
    }
    if n < 2 || n % 2 != 0 {
        return Err(Error::OddSampleSize(n));
    }
    if count == 0 {
        return Err(invalid("number of null replicates must be >= 1"));
    }
    let m = grams.len();
    let nf = n as f64;
    let num_scale = 1.0 / (nf * (nf - 1.0));

    let n_chunks = count.div_ceil(COLUMN_CHUNK);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * COLUMN_CHUNK;
            let end = (start + COLUMN_CHUNK).min(count);
            let mut eps = vec![0.0; n];
            let mut eps_p = vec![0.0; n];
            // column-major within the chunk
            let mut out = Vec::with_capacity((end - start) * m);
            for b in start..end {
                let mut r = rng::stream(seed, domain::NULL_COLUMN, b as u64);
                for v in eps.iter_mut() {
                    *v = r.sample(StandardNormal);
                }
                for v in eps_p.iter_mut() {
                    *v = r.sample(StandardNormal);
                }
                let denom = paired_sq_sum(&eps_p) / nf;
                for g in grams {
                    out.push(g.offdiag_form(&eps) * num_scale / denom);
                }
            }
            out
        })
        .collect();

    let mut values = vec![0.0; m * count];
    for (c, chunk) in chunks.iter().enumerate() {
        let start = c * COLUMN_CHUNK;
        for (offset, col) in chunk.chunks_exact(m).enumerate() {
            for (k, v) in col.iter().enumerate() {
                values[k * count + start + offset] = *v;
            }
        }
    }
    Ok(NullReplicateMatrix {
        rows: m,
        cols: count,
        values,
        seed,
    })
}

/// Identifies a cached null replicate matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub design_hash: String,
    pub collection_label: String,
    pub b_count: usize,
    pub seed: u64,
}

impl CacheKey {
    pub fn new(design: &[f64], collection_label: &str, b_count: usize, seed: u64) -> Self {
        CacheKey {
            design_hash: design_hash(design),
            collection_label: collection_label.to_owned(),
            b_count,
            seed,
        }
    }

    /// File name inside a cache directory.
    pub fn file_name(&self) -> String {
        let label: String = self
            .collection_label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        format!("{}-{}-{}-{}.knull", self.design_hash, label, self.b_count, self.seed)
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(self.file_name())
    }
}

/// First 16 hex digits of the SHA-256 of the design's little-endian bits.
pub fn design_hash(x: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in x {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

const MAGIC: &[u8; 8] = b"KNULL\0v1";

/// Binary layout: magic, `u64` key length, key JSON, `u64` rows, `u64` columns,
/// `u64` seed, then `rows * columns` little-endian `f64` in row-major order.
pub fn write_null_matrix(path: &Path, key: &CacheKey, matrix: &NullReplicateMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let key_json = serde_json::to_vec(key)?;
    w.write_all(&(key_json.len() as u64).to_le_bytes())?;
    w.write_all(&key_json)?;
    for v in [matrix.rows as u64, matrix.cols as u64, matrix.seed] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &matrix.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_null_matrix`], returning `None` when the
/// stored key differs from `key`.
pub fn read_null_matrix(path: &Path, key: &CacheKey) -> Result<Option<NullReplicateMatrix>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid(format!("{} is not a null replicate cache file", path.display())));
    }
    let key_len = read_u64(&mut r)? as usize;
    let mut key_json = vec![0u8; key_len];
    r.read_exact(&mut key_json)?;
    let stored: CacheKey = serde_json::from_slice(&key_json)?;
    if &stored != key {
        return Ok(None);
    }
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(Some(NullReplicateMatrix {
        rows,
        cols,
        values,
        seed,
    }))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Loads the matrix for `key` from `dir`, computing and storing it on a miss.
pub fn cached_null_replicates(
    dir: &Path,
    key: &CacheKey,
    grams: &[&GramMatrix],
) -> Result<NullReplicateMatrix> {
    let path = key.path_in(dir);
    if path.exists() {
        if let Some(m) = read_null_matrix(&path, key)? {
            if m.n_kernels() == grams.len() {
                return Ok(m);
            }
        }
    }
    let m = null_replicates(grams, key.b_count, key.seed)?;
    std::fs::create_dir_all(dir)?;
    write_null_matrix(&path, key, &m)?;
    Ok(m)
}
