//! Deterministic dense linear algebra, seeded random streams, and a
//! finite-difference gradient oracle.
//!
//! All reductions use a fixed left-to-right summation order so that results
//! do not depend on thread count or iteration scheduling. Random streams are
//! counter-based (ChaCha with an explicit stream id), so a `(seed, stream)`
//! pair yields the same draw sequence on every platform and streams can be
//! handed to devices independently of execution order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from the numeric kernels.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite value at coordinate {coord} ({context})")]
    NonFinite { coord: usize, context: String },
    #[error("matrix is not positive definite (pivot {pivot:.3e} at column {col})")]
    NotPositiveDefinite { col: usize, pivot: f64 },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("eigensolver did not converge after {sweeps} sweeps")]
    EigenNoConvergence { sweeps: usize },
}

/// Dense vector of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// Euclidean norm with fixed summation order.
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v * v;
        }
        acc.sqrt()
    }

    /// `self += scale * other`. Dimensions must match.
    pub fn add_scaled(&mut self, other: &Vector, scale: f64) -> Result<(), NumericsError> {
        if self.dim() != other.dim() {
            return Err(NumericsError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Norm of `self - other`.
    pub fn distance(&self, other: &Vector) -> Result<f64, NumericsError> {
        if self.dim() != other.dim() {
            return Err(NumericsError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = a - b;
            acc += d * d;
        }
        Ok(acc.sqrt())
    }

    /// Errors if any entry is NaN or infinite, naming the first offender.
    pub fn check_finite(&self, context: &str) -> Result<(), NumericsError> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(NumericsError::NonFinite {
                    coord: i,
                    context: context.to_string(),
                });
            }
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dot product with exact sequential left-to-right accumulation.
pub fn dot(a: &Vector, b: &Vector) -> Result<f64, NumericsError> {
    if a.dim() != b.dim() {
        return Err(NumericsError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mut acc = 0.0;
    for (x, y) in a.data.iter().zip(b.data.iter()) {
        acc += x * y;
    }
    Ok(acc)
}

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from a row-major entry list; the length must be `rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch {
                left: rows * cols,
                right: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `A x` with per-row left-to-right accumulation.
    pub fn matvec(&self, x: &Vector) -> Result<Vector, NumericsError> {
        if x.dim() != self.cols {
            return Err(NumericsError::DimensionMismatch {
                left: self.cols,
                right: x.dim(),
            });
        }
        let mut out = Vector::zeros(self.rows);
        for r in 0..self.rows {
            let mut acc = 0.0;
            for (a, b) in self.row(r).iter().zip(x.iter()) {
                acc += a * b;
            }
            out[r] = acc;
        }
        Ok(out)
    }
}

/// Solves `A x = b` for symmetric positive definite `A` via Cholesky.
pub fn solve_spd(a: &Matrix, b: &Vector) -> Result<Vector, NumericsError> {
    if a.rows() != a.cols() {
        return Err(NumericsError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    if b.dim() != n {
        return Err(NumericsError::DimensionMismatch {
            left: n,
            right: b.dim(),
        });
    }
    // Lower-triangular factor, row-major.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(NumericsError::NotPositiveDefinite {
                col: j,
                pivot: diag,
            });
        }
        let dj = diag.sqrt();
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut acc = a.get(i, j);
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = acc / dj;
        }
    }
    // Forward solve L y = b.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[i * n + k] * y[k];
        }
        y[i] = acc / l[i * n + i];
    }
    // Back solve L^T x = y.
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in (i + 1)..n {
            acc -= l[k * n + i] * x[k];
        }
        x[i] = acc / l[i * n + i];
    }
    Ok(Vector::from_vec(x))
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi sweeps, ascending.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>, NumericsError> {
    if a.rows() != a.cols() {
        return Err(NumericsError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    // Work on the symmetrized copy to wash out representation asymmetry.
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = 0.5 * (a.get(i, j) + a.get(j, i));
        }
    }
    let scale: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let max_sweeps = 100;
    for _sweep in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += w[i * n + j] * w[i * n + j];
                }
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            let mut eigs: Vec<f64> = (0..n).map(|i| w[i * n + i]).collect();
            eigs.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
            return Ok(eigs);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = w[p * n + p];
                let aqq = w[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let wkp = w[k * n + p];
                    let wkq = w[k * n + q];
                    w[k * n + p] = c * wkp - s * wkq;
                    w[k * n + q] = s * wkp + c * wkq;
                }
                for k in 0..n {
                    let wpk = w[p * n + k];
                    let wqk = w[q * n + k];
                    w[p * n + k] = c * wpk - s * wqk;
                    w[q * n + k] = s * wpk + c * wqk;
                }
            }
        }
    }
    Err(NumericsError::EigenNoConvergence { sweeps: max_sweeps })
}

/// Seeded, splittable random stream.
///
/// A stream is fully determined by `(seed, stream_id)`: the same pair yields
/// the same draw sequence on every platform, and distinct stream ids yield
/// independent sequences. Single-owner: callers hold one stream per consumer
/// (device, partitioner, probe loop) so results do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// One standard-normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// `n` standard-normal draws, advancing the stream.
    pub fn gaussian(&mut self, n: usize) -> Vector {
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.standard_normal());
        }
        Vector::from_vec(data)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// One Gamma(shape, 1) draw; shape must be positive.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        let g = Gamma::new(shape, 1.0).expect("positive gamma shape");
        g.sample(&mut self.rng)
    }

    /// A point from the Dirichlet distribution with symmetric concentration.
    pub fn dirichlet(&mut self, concentration: f64, k: usize) -> Vec<f64> {
        let mut draws: Vec<f64> = (0..k)
            .map(|_| self.gamma(concentration).max(1e-300))
            .collect();
        let total: f64 = draws.iter().sum();
        for d in &mut draws {
            *d /= total;
        }
        draws
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        if items.len() < 2 {
            return;
        }
        for i in (1..items.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            items.swap(i, j);
        }
    }

    /// `k` indices drawn uniformly with replacement from `[0, n)`.
    pub fn sample_with_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        (0..k).map(|_| self.rng.gen_range(0..n)).collect()
    }
}

/// Central-difference gradient, `(f(x + h e_k) - f(x - h e_k)) / 2h`.
///
/// Used as the ground-truth oracle for every analytic gradient in the crate.
pub fn finite_diff_gradient<F>(f: F, x: &Vector, h: f64) -> Result<Vector, NumericsError>
where
    F: Fn(&Vector) -> f64,
{
    assert!(h > 0.0, "step size must be positive");
    let mut grad = Vector::zeros(x.dim());
    let mut probe = x.clone();
    for k in 0..x.dim() {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = f(&probe);
        probe[k] = orig - h;
        let down = f(&probe);
        probe[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NumericsError::NonFinite {
                coord: k,
                context: "finite-difference evaluation".to_string(),
            });
        }
        grad[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Default central-difference step paired with the 1e-5 gradient gates.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
