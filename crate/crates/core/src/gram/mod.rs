//! Time grids and the covariance matrix of the noise increments over grid
//! cells, plus factorizations for sampling those increments.

pub mod cache;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::analytic::quad::{integrate_power_law, Tolerance};
use crate::analytic::{r_stationary, with_context, ModelParams, QuadratureSpec};
use crate::error::{Error, Result};

const UNIFORM_RTOL: f64 = 1e-14;

/// Partition `0 = t_0 < t_1 < ... < t_n = T` of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    edges: Vec<f64>,
    midpoints: Vec<f64>,
    widths: Vec<f64>,
    uniform: bool,
}

/// Uniform grid with `n >= 2` cells of width `T/n`.
pub fn build_grid(horizon: f64, n: usize) -> Result<TimeGrid> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    if n < 2 {
        return Err(Error::invalid("n", format!("need at least 2 cells, got {n}")));
    }
    let edges = (0..=n)
        .map(|k| if k == n { horizon } else { k as f64 * horizon / n as f64 })
        .collect();
    TimeGrid::from_edges(edges)
}

impl TimeGrid {
    /// Grid from explicit edges starting at 0. A single cell is allowed.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::invalid("edges", "need at least two edges"));
        }
        if edges[0] != 0.0 {
            return Err(Error::invalid("edges", format!("first edge must be 0, got {}", edges[0])));
        }
        for (k, w) in edges.windows(2).enumerate() {
            if !(w[1] > w[0] && w[1].is_finite()) {
                return Err(Error::invalid(
                    "edges",
                    format!("edges must be finite and strictly increasing (at index {})", k + 1),
                ));
            }
        }
        let midpoints: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        // Edges at k·T/n up to rounding of T itself.
        let (n, horizon) = (widths.len(), edges[edges.len() - 1]);
        let uniform = edges
            .iter()
            .enumerate()
            .all(|(k, &t)| (t - k as f64 * horizon / n as f64).abs() <= UNIFORM_RTOL * horizon);
        Ok(Self {
            edges,
            midpoints,
            widths,
            uniform,
        })
    }

    pub fn horizon(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.widths.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Common cell width on uniform grids.
    pub fn step(&self) -> Option<f64> {
        self.uniform.then(|| self.horizon() / self.n() as f64)
    }
}

/// Dense symmetric covariance matrix of the increments, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    data: Vec<f64>,
    lags: Option<Vec<f64>>,
}

impl GramMatrix {
    /// Wrap a row-major `n x n` array. Symmetry is checked.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                op: "GramMatrix::from_row_major",
                expected: n * n,
                got: data.len(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if (a - b).abs() > 1e-14 * a.abs().max(b.abs()) {
                    return Err(Error::invalid("gram", format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, data, lags: None })
    }

    /// Symmetric Toeplitz matrix with first row `lags`.
    pub fn from_lags(lags: Vec<f64>) -> Self {
        let n = lags.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = lags[i.abs_diff(j)];
            }
        }
        Self {
            n,
            data,
            lags: Some(lags),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `c(k)` for `k = 0..n` on uniform grids.
    pub fn lags(&self) -> Option<&[f64]> {
        self.lags.as_deref()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    /// `qᵀ C q`.
    pub fn quad_form(&self, q: &[f64]) -> f64 {
        dot(q, &self.mul_vec(q))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `∫_a^b ∫_c^d r(w - z) dz dw` for two cells.
///
/// With `x = w - z` the double integral is `∫ r(|x|) λ(x) dx`, where the
/// overlap length `λ(x) = (min(b, d+x) - max(a, c+x))₊` is piecewise linear
/// with kinks at `a-c` and `b-d`. Each linear piece is integrated in the
/// distance `|x|` to the diagonal with a power-law adapted rule, so pieces
/// touching `x = 0` keep full accuracy.
pub fn cell_pair_covariance(
    (a, b): (f64, f64),
    (c, d): (f64, f64),
    p: &ModelParams,
    tol: Tolerance,
) -> Result<f64> {
    let overlap = |x: f64| ((b).min(d + x) - (a).max(c + x)).max(0.0);
    let mut cuts = vec![a - d, b - c, a - c, b - d, 0.0];
    cuts.retain(|&x| x >= a - d && x <= b - c);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let e = p.singular_exponent();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 <= x0 {
            continue;
        }
        let piece = if x0 >= 0.0 {
            integrate_power_law(|t| r_stationary(t, p) * overlap(t), x0, x1, e, tol)?
        } else {
            integrate_power_law(|t| r_stationary(t, p) * overlap(-t), -x1, -x0, e, tol)?
        };
        total += piece.value;
    }
    Ok(total)
}

fn cell_tolerance(q: &QuadratureSpec) -> Tolerance {
    // Integrands are positive, so a relative target is meaningful even for
    // far-apart cells whose covariance is many orders below abs_tol.
    Tolerance {
        rel: q.rel_tol,
        abs: f64::MIN_POSITIVE,
        max_subdivisions: q.max_subdivisions,
    }
}

/// `c(k)` for `k = 0..n` on a uniform grid of width `step`.
pub fn lag_covariances(step: f64, n: usize, p: &ModelParams, q: &QuadratureSpec) -> Result<Vec<f64>> {
    q.validate()?;
    let tol = cell_tolerance(q);
    (0..n)
        .into_par_iter()
        .map(|k| {
            let lo = k as f64 * step;
            cell_pair_covariance((lo, lo + step), (0.0, step), p, tol)
                .map_err(|err| with_context(err, &format!("cell pair ({k}, 0)")))
        })
        .collect()
}

/// Covariance of the increments over the cells of `grid`. Uniform grids use
/// one integral per lag; other grids one per cell pair.
pub fn gram_matrix(grid: &TimeGrid, p: &ModelParams, q: &QuadratureSpec) -> Result<GramMatrix> {
    match grid.step() {
        Some(step) => Ok(GramMatrix::from_lags(lag_covariances(step, grid.n(), p, q)?)),
        None => gram_matrix_pairwise(grid, p, q),
    }
}

/// One quadrature per cell pair, whatever the grid.
pub fn gram_matrix_pairwise(grid: &TimeGrid, p: &ModelParams, q: &QuadratureSpec) -> Result<GramMatrix> {
    q.validate()?;
    let n = grid.n();
    let tol = cell_tolerance(q);
    let e = grid.edges();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            cell_pair_covariance((e[i], e[i + 1]), (e[j], e[j + 1]), p, tol)
                .map_err(|err| with_context(err, &format!("cell pair ({i}, {j})")))
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        data[i * n + j] = v;
        data[j * n + i] = v;
    }
    Ok(GramMatrix { n, data, lags: None })
}

/// How a [`GramFactor`] turns white noise into correlated increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorMethod {
    Cholesky,
    Circulant,
}

/// A square root of the Gram matrix for sampling `Δ = L ξ`.
#[derive(Clone)]
pub struct GramFactor {
    n: usize,
    method: FactorMethod,
    jitter: f64,
    fallback: bool,
    lower: Vec<f64>,
    spectrum: Vec<f64>,
    fft: Option<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for GramFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GramFactor")
            .field("n", &self.n)
            .field("method", &self.method)
            .field("jitter", &self.jitter)
            .field("fallback", &self.fallback)
            .finish()
    }
}

const JITTER_LADDER: [f64; 4] = [0.0, 1e-14, 1e-12, 1e-10];

/// Cholesky factorization with escalating diagonal jitter
/// `λ · trace/n`, `λ ∈ {0, 1e-14, 1e-12, 1e-10}`.
pub fn factorize(c: &GramMatrix) -> Result<GramFactor> {
    let n = c.n();
    let scale = c.trace() / n as f64;
    let mut worst = (0, 0.0, 0.0);
    for &lambda in &JITTER_LADDER {
        let jitter = lambda * scale;
        match cholesky(c, jitter) {
            Ok(lower) => {
                return Ok(GramFactor {
                    n,
                    method: FactorMethod::Cholesky,
                    jitter,
                    fallback: false,
                    lower,
                    spectrum: Vec::new(),
                    fft: None,
                })
            }
            Err((row, pivot)) => worst = (row, pivot, jitter),
        }
    }
    Err(Error::Factorization {
        row: worst.0,
        pivot: worst.1,
        jitter: worst.2,
    })
}

// Row-major lower factor; on failure returns the row and the most negative
// pivot seen before stopping.
fn cholesky(c: &GramMatrix, jitter: f64) -> std::result::Result<Vec<f64>, (usize, f64)> {
    let n = c.n();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let (ri, rj) = (i * n, j * n);
            let s = c.get(i, j) - dot(&l[ri..ri + j], &l[rj..rj + j]);
            if i == j {
                let pivot = s + jitter;
                if !(pivot > 0.0) {
                    return Err((i, pivot));
                }
                l[ri + i] = pivot.sqrt();
            } else {
                l[ri + j] = s / l[rj + j];
            }
        }
    }
    Ok(l)
}

/// Circulant-embedding factor on uniform grids. The lags are embedded in
/// a circulant of size `2(n-1)`; if its spectrum has a negative eigenvalue
/// (beyond roundoff) the Cholesky factor is returned instead, with
/// [`GramFactor::fell_back`] set.
pub fn factorize_circulant(c: &GramMatrix) -> Result<GramFactor> {
    let Some(lags) = c.lags().filter(|l| l.len() >= 2) else {
        return Ok(GramFactor {
            fallback: true,
            ..factorize(c)?
        });
    };
    let n = lags.len();
    let m = 2 * (n - 1);
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|k| Complex::new(lags[if k < n { k } else { m - k }], 0.0))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(m);
    fft.process(&mut row);
    let top = row.iter().fold(0.0f64, |a, z| a.max(z.re.abs()));
    if row.iter().any(|z| z.re < -1e-12 * top) {
        return Ok(GramFactor {
            fallback: true,
            ..factorize(c)?
        });
    }
    let spectrum = row.iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect();
    Ok(GramFactor {
        n,
        method: FactorMethod::Circulant,
        jitter: 0.0,
        fallback: false,
        lower: Vec::new(),
        spectrum,
        fft: Some(fft),
    })
}

impl GramFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn method(&self) -> FactorMethod {
        self.method
    }

    /// Diagonal jitter actually added (absolute, not relative).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// True if a circulant factor was requested but Cholesky was used.
    pub fn fell_back(&self) -> bool {
        self.fallback
    }

    /// Row-major lower-triangular factor (Cholesky route only).
    pub fn lower(&self) -> Option<&[f64]> {
        (self.method == FactorMethod::Cholesky).then_some(&self.lower[..])
    }

    /// Number of standard normals consumed per draw.
    pub fn noise_dim(&self) -> usize {
        match self.method {
            FactorMethod::Cholesky => self.n,
            FactorMethod::Circulant => 2 * self.spectrum.len(),
        }
    }

    /// Map white noise of length [`noise_dim`](Self::noise_dim) to increments.
    pub fn correlate(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.noise_dim() {
            return Err(Error::DimensionMismatch {
                op: "GramFactor::correlate",
                expected: self.noise_dim(),
                got: xi.len(),
            });
        }
        let n = self.n;
        match self.method {
            FactorMethod::Cholesky => Ok((0..n)
                .map(|i| dot(&self.lower[i * n..i * n + i + 1], &xi[..i + 1]))
                .collect()),
            FactorMethod::Circulant => {
                let m = self.spectrum.len();
                let mut buf: Vec<Complex<f64>> = (0..m)
                    .map(|k| Complex::new(xi[k], xi[m + k]) * self.spectrum[k])
                    .collect();
                self.fft.as_ref().expect("circulant factor has a plan").process(&mut buf);
                Ok(buf[..n].iter().map(|z| z.re).collect())
            }
        }
    }

    /// `max|LLᵀ - C| / max|C|` for the Cholesky route.
    pub fn reconstruction_error(&self, c: &GramMatrix) -> Option<f64> {
        let l = self.lower()?;
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&l[i * n..i * n + j + 1], &l[j * n..j * n + j + 1]);
                worst = worst.max((v - c.get(i, j)).abs());
            }
        }
        Some(worst / c.max_abs())
    }
}
