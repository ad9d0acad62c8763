//! Second-chaos algebra for step kernels on a time grid.
//!
//! A symmetric coefficient matrix `A` represents the kernel
//! `Σ A_ij 1_{cell i} ⊗ 1_{cell j}`. With `C` the Gram matrix of the cells,
//!
//! ```text
//! I_2(A)        = Δᵀ A Δ - tr(A C)
//! ⟨A, B⟩        = tr(A C B C)
//! A ⊗_1 B       = A C B
//! ```
//!
//! The estimation error is `√T/σ (α - α̃_T) = I_2(f_T) / (I_2(g_T) + b_T)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analytic::{rho_const, ConstantsReport, ModelParams, QuadratureSpec};
use crate::error::{Error, Result};
use crate::gram::{build_grid, gram_matrix, GramMatrix, TimeGrid};
use crate::mc::{rate_regression, RateFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelLabel {
    H,
    G,
    L,
    F,
    Custom,
}

/// Symmetric coefficient matrix of a step kernel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    data: Vec<f64>,
    label: KernelLabel,
}

impl KernelMatrix {
    pub fn new(n: usize, data: Vec<f64>, label: KernelLabel) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                op: "KernelMatrix::new",
                expected: n * n,
                got: data.len(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if (a - b).abs() > 1e-14 * a.abs().max(b.abs()) {
                    return Err(Error::invalid("kernel", format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, data, label })
    }

    fn from_fn(n: usize, label: KernelLabel, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data, label }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> KernelLabel {
        self.label
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, s: f64, label: KernelLabel) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
            label,
        }
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    /// `ΔᵀAΔ`, touching only the lower triangle.
    pub fn quad_form(&self, delta: &[f64]) -> f64 {
        let n = self.n;
        let mut off = 0.0;
        let mut diag = 0.0;
        for i in 0..n {
            let row = &self.data[i * n..i * n + i];
            off += delta[i] * crate::gram::dot(row, &delta[..i]);
            diag += self.data[i * n + i] * delta[i] * delta[i];
        }
        diag + 2.0 * off
    }

    /// `tr(A C)`.
    pub fn trace_with(&self, c: &GramMatrix) -> Result<f64> {
        check_dims("trace_with", self.n, c.n())?;
        Ok(self.data.iter().zip(c.as_slice()).map(|(a, b)| a * b).sum())
    }
}

fn check_dims(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { op, expected, got })
    }
}

fn gram_dmatrix(c: &GramMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(c.n(), c.n(), c.as_slice())
}

// tr(X Y) = Σ X_ij Y_ji
fn trace_product(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.component_mul(&y.transpose()).sum()
}

/// `h_T(s, t) = e^{-α|t-s|} / (2√T)` at cell midpoints.
pub fn kernel_h(grid: &TimeGrid, p: &ModelParams) -> KernelMatrix {
    let m = grid.midpoints();
    let scale = 0.5 / grid.horizon().sqrt();
    KernelMatrix::from_fn(grid.n(), KernelLabel::H, |i, j| scale * (-p.alpha() * (m[i] - m[j]).abs()).exp())
}

/// `l_T(u, v) = e^{α(u + v - 2T)} / (2αρT)` at cell midpoints.
pub fn kernel_l(grid: &TimeGrid, p: &ModelParams) -> Result<KernelMatrix> {
    let rho = rho_const(p)?;
    let (a, t) = (p.alpha(), grid.horizon());
    let m = grid.midpoints();
    let scale = 1.0 / (2.0 * a * rho * t);
    Ok(KernelMatrix::from_fn(grid.n(), KernelLabel::L, |i, j| {
        scale * (a * (m[i] + m[j] - 2.0 * t)).exp()
    }))
}

/// `g_T = h_T / (αρ√T) - l_T`.
pub fn kernel_g(grid: &TimeGrid, p: &ModelParams) -> Result<KernelMatrix> {
    let rho = rho_const(p)?;
    let h = kernel_h(grid, p);
    let l = kernel_l(grid, p)?;
    let s = 1.0 / (p.alpha() * rho * grid.horizon().sqrt());
    Ok(KernelMatrix {
        n: h.n,
        data: h.data.iter().zip(&l.data).map(|(h, l)| h * s - l).collect(),
        label: KernelLabel::G,
    })
}

/// `f_T = h_T / (ρσ)`.
pub fn kernel_f(grid: &TimeGrid, p: &ModelParams, sigma: f64, rho: f64) -> Result<KernelMatrix> {
    if !(sigma > 0.0 && rho > 0.0) {
        return Err(Error::invalid("sigma", format!("σ and ρ must be positive, got {sigma}, {rho}")));
    }
    Ok(kernel_h(grid, p).scaled(1.0 / (rho * sigma), KernelLabel::F))
}

/// Second-chaos value `ΔᵀAΔ - tr(AC)` of a step kernel.
pub fn i2_eval(a: &KernelMatrix, delta: &[f64], c: &GramMatrix) -> Result<f64> {
    check_dims("i2_eval", a.n, delta.len())?;
    Ok(a.quad_form(delta) - a.trace_with(c)?)
}

/// `⟨A, B⟩ = tr(A C B C)`.
pub fn hs_inner(a: &KernelMatrix, b: &KernelMatrix, c: &GramMatrix) -> Result<f64> {
    check_dims("hs_inner", a.n, b.n)?;
    check_dims("hs_inner", a.n, c.n())?;
    let cm = gram_dmatrix(c);
    let ac = a.to_dmatrix() * &cm;
    let bc = b.to_dmatrix() * &cm;
    Ok(trace_product(&ac, &bc))
}

/// `‖A‖² = tr(A C A C)`.
pub fn hs_norm2(a: &KernelMatrix, c: &GramMatrix) -> Result<f64> {
    check_dims("hs_norm2", a.n, c.n())?;
    let ac = a.to_dmatrix() * gram_dmatrix(c);
    Ok(trace_product(&ac, &ac))
}

/// Coefficient matrix `A C B` of the contraction `A ⊗_1 B`.
pub fn contract1(a: &KernelMatrix, b: &KernelMatrix, c: &GramMatrix) -> Result<DMatrix<f64>> {
    check_dims("contract1", a.n, b.n)?;
    check_dims("contract1", a.n, c.n())?;
    Ok(a.to_dmatrix() * gram_dmatrix(c) * b.to_dmatrix())
}

/// `tr(M C Mᵀ C)`, the squared norm of a (not necessarily symmetric)
/// coefficient matrix.
pub fn contraction_norm2(m: &DMatrix<f64>, c: &GramMatrix) -> Result<f64> {
    check_dims("contraction_norm2", m.nrows(), c.n())?;
    let cm = gram_dmatrix(c);
    let mc = m * &cm;
    let mtc = m.transpose() * &cm;
    Ok(trace_product(&mc, &mtc))
}

/// `b_T = (1/(Tρ)) ∫_0^T e^{-2αt} ‖e^{α·} 1_{[0,t]}‖² dt` on the grid.
///
/// The norm at edge `t_m` is `q_mᵀ C q_m` with `q_m,i = e^{α mid_i}` for
/// the cells below `t_m`. It is carried incrementally, pre-multiplied by
/// `e^{-2α t_m}` so that nothing overflows; the outer integral is the
/// trapezoid rule on the edges.
pub fn b_t_discrete(grid: &TimeGrid, p: &ModelParams, c: &GramMatrix) -> Result<f64> {
    check_dims("b_t_discrete", grid.n(), c.n())?;
    let a = p.alpha();
    let (t, mid) = (grid.edges(), grid.midpoints());
    let n = grid.n();
    let mut scaled = 0.0;
    let mut integral = 0.0;
    for m in 1..=n {
        let k = m - 1;
        let tm = t[m];
        let cross: f64 = (0..k).map(|j| c.get(k, j) * (-a * (tm - mid[j])).exp()).sum();
        let wk = (-a * (tm - mid[k])).exp();
        let next = (-2.0 * a * (tm - t[k])).exp() * scaled + 2.0 * wk * cross + c.get(k, k) * wk * wk;
        integral += 0.5 * (tm - t[k]) * (scaled + next);
        scaled = next;
    }
    Ok(integral / (grid.horizon() * rho_const(p)?))
}

/// Which form of the second ψ functional to report first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Psi2Variant {
    /// `(2/b²) √(2‖f⊗₁g‖ + ⟨f,g⟩²)`
    #[default]
    Printed,
    /// `(2/b²) √(2‖f⊗₁g‖² + ⟨f,g⟩²)`
    Squared,
}

impl std::str::FromStr for Psi2Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(Self::Printed),
            "squared" => Ok(Self::Squared),
            other => Err(Error::invalid(
                "psi2_variant",
                format!("expected `printed` or `squared`, got `{other}`"),
            )),
        }
    }
}

/// Norms, contractions and ψ values at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosDiagnostics {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n: usize,
    pub b_t: f64,
    pub norm2_f: f64,
    pub norm_f1f: f64,
    pub norm_g: f64,
    pub norm_g1g: f64,
    pub norm_f1g: f64,
    pub inner_fg: f64,
    pub psi1: f64,
    /// ψ₂ in the selected variant.
    pub psi2: f64,
    /// ψ₂ in the other variant.
    pub psi2_variant: f64,
    pub psi3: f64,
}

/// `(ψ₁, ψ₂, ψ₃)` from the norms in `d` (the ψ fields of `d` are ignored).
pub fn psi_bounds(d: &ChaosDiagnostics, variant: Psi2Variant) -> Result<(f64, f64, f64)> {
    let b2 = d.b_t * d.b_t;
    if !(d.b_t > 0.0) {
        return Err(Error::Domain {
            op: "psi_bounds",
            reason: format!("b_T must be positive, got {}", d.b_t),
        });
    }
    let psi1 = ((b2 - 2.0 * d.norm2_f).powi(2) + 8.0 * d.norm_f1f.powi(2)).sqrt() / b2;
    let contraction = match variant {
        Psi2Variant::Printed => d.norm_f1g,
        Psi2Variant::Squared => d.norm_f1g * d.norm_f1g,
    };
    let psi2 = 2.0 / b2 * (2.0 * contraction + d.inner_fg.powi(2)).sqrt();
    let psi3 = 2.0 / b2 * (d.norm_g.powi(4) + 2.0 * d.norm_g1g.powi(2)).sqrt();
    Ok((psi1, psi2, psi3))
}

/// Everything needed to evaluate the statistic at one horizon.
#[derive(Debug, Clone)]
pub struct ChaosSetup {
    pub params: ModelParams,
    pub grid: TimeGrid,
    pub gram: GramMatrix,
    pub f: KernelMatrix,
    pub g: KernelMatrix,
    pub b_t: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl ChaosSetup {
    pub fn new(grid: TimeGrid, p: &ModelParams, constants: &ConstantsReport, q: &QuadratureSpec) -> Result<Self> {
        let gram = gram_matrix(&grid, p, q)?;
        Self::with_gram(grid, gram, p, constants)
    }

    pub fn with_gram(grid: TimeGrid, gram: GramMatrix, p: &ModelParams, constants: &ConstantsReport) -> Result<Self> {
        check_dims("ChaosSetup", grid.n(), gram.n())?;
        let f = kernel_f(&grid, p, constants.sigma, constants.rho)?;
        let g = kernel_g(&grid, p)?;
        let b_t = b_t_discrete(&grid, p, &gram)?;
        Ok(Self {
            params: *p,
            grid,
            gram,
            f,
            g,
            b_t,
            sigma: constants.sigma,
            rho: constants.rho,
        })
    }

    /// All table quantities, using `P = (FC)²`, `Q = (GC)²` so that
    /// `‖f⊗₁f‖² = tr P²`, `‖g⊗₁g‖² = tr Q²`, `‖f⊗₁g‖² = tr PQ`.
    pub fn diagnostics(&self, variant: Psi2Variant) -> Result<ChaosDiagnostics> {
        let cm = gram_dmatrix(&self.gram);
        let fc = self.f.to_dmatrix() * &cm;
        let gc = self.g.to_dmatrix() * &cm;
        let pf = &fc * &fc;
        let qg = &gc * &gc;
        let mut d = ChaosDiagnostics {
            horizon: self.grid.horizon(),
            n: self.grid.n(),
            b_t: self.b_t,
            norm2_f: trace_product(&fc, &fc),
            norm_f1f: trace_product(&pf, &pf).max(0.0).sqrt(),
            norm_g: trace_product(&gc, &gc).max(0.0).sqrt(),
            norm_g1g: trace_product(&qg, &qg).max(0.0).sqrt(),
            norm_f1g: trace_product(&pf, &qg).max(0.0).sqrt(),
            inner_fg: trace_product(&fc, &gc),
            psi1: 0.0,
            psi2: 0.0,
            psi2_variant: 0.0,
            psi3: 0.0,
        };
        let other = match variant {
            Psi2Variant::Printed => Psi2Variant::Squared,
            Psi2Variant::Squared => Psi2Variant::Printed,
        };
        let (psi1, psi2, psi3) = psi_bounds(&d, variant)?;
        d.psi1 = psi1;
        d.psi2 = psi2;
        d.psi2_variant = psi_bounds(&d, other)?.1;
        d.psi3 = psi3;
        Ok(d)
    }
}

/// Maps a horizon to a cell count: `ceil(cells_per_unit · T)`, at least 2,
/// at most `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPolicy {
    pub cells_per_unit: f64,
    pub cap: usize,
}

impl Default for ResolutionPolicy {
    fn default() -> Self {
        Self {
            cells_per_unit: 64.0 / 5.0,
            cap: 4096,
        }
    }
}

impl ResolutionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.cells_per_unit > 0.0 && self.cells_per_unit.is_finite()) {
            return Err(Error::invalid(
                "cells_per_unit",
                format!("must be positive, got {}", self.cells_per_unit),
            ));
        }
        if self.cap < 2 {
            return Err(Error::invalid("cap", format!("must be at least 2, got {}", self.cap)));
        }
        Ok(())
    }

    pub fn cells(&self, horizon: f64) -> usize {
        // the epsilon keeps 12.8 · 5 from rounding up to 65
        let raw = (self.cells_per_unit * horizon - 1e-9).ceil();
        (raw.max(2.0) as usize).min(self.cap)
    }

    pub fn grid(&self, horizon: f64) -> Result<TimeGrid> {
        build_grid(horizon, self.cells(horizon))
    }
}

/// Fitted log-log slopes of the diagnostic quantities against `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSlopes {
    /// `|b_T - 1|`
    pub b_gap: RateFit,
    /// `|2‖f_T‖² - 1|`
    pub f_norm_gap: RateFit,
    pub f1f: RateFit,
    pub g_norm: RateFit,
    pub g1g: RateFit,
    pub f1g: RateFit,
    /// `|⟨f_T, g_T⟩|`
    pub fg_inner: RateFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaTable {
    pub constants: ConstantsReport,
    pub rows: Vec<ChaosDiagnostics>,
    /// Present when at least three horizons were evaluated.
    pub slopes: Option<LemmaSlopes>,
}

/// One diagnostics row per horizon plus log-log slopes.
pub fn lemma_tables(
    horizons: &[f64],
    p: &ModelParams,
    policy: &ResolutionPolicy,
    q: &QuadratureSpec,
    variant: Psi2Variant,
) -> Result<LemmaTable> {
    validate_horizons(horizons)?;
    policy.validate()?;
    let constants = crate::analytic::sigma_const(p, q)?;
    let rows = horizons
        .iter()
        .map(|&t| ChaosSetup::new(policy.grid(t)?, p, &constants, q)?.diagnostics(variant))
        .collect::<Result<Vec<_>>>()?;
    let slopes = if rows.len() >= 3 { Some(lemma_slopes(&rows)?) } else { None };
    Ok(LemmaTable {
        constants,
        rows,
        slopes,
    })
}

pub(crate) fn validate_horizons(horizons: &[f64]) -> Result<()> {
    if horizons.is_empty() {
        return Err(Error::invalid("T_list", "must not be empty"));
    }
    if horizons.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("T_list", "horizons must be positive and finite"));
    }
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("T_list", "horizons must be strictly increasing"));
    }
    Ok(())
}

pub fn lemma_slopes(rows: &[ChaosDiagnostics]) -> Result<LemmaSlopes> {
    let fit = |f: &dyn Fn(&ChaosDiagnostics) -> f64| {
        rate_regression(&rows.iter().map(|r| (r.horizon, f(r))).collect::<Vec<_>>())
    };
    Ok(LemmaSlopes {
        b_gap: fit(&|r| (r.b_t - 1.0).abs())?,
        f_norm_gap: fit(&|r| (2.0 * r.norm2_f - 1.0).abs())?,
        f1f: fit(&|r| r.norm_f1f)?,
        g_norm: fit(&|r| r.norm_g)?,
        g1g: fit(&|r| r.norm_g1g)?,
        f1g: fit(&|r| r.norm_f1g)?,
        fg_inner: fit(&|r| r.inner_fg.abs())?,
    })
}

pub const DIAGNOSTICS_HEADER: &str =
    "T,n,b_T,norm2_f,norm_f1f,norm_g,norm_g1g,norm_f1g,inner_fg,psi1,psi2,psi2_variant,psi3";

pub fn diagnostics_csv(rows: &[ChaosDiagnostics]) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.horizon,
            r.n,
            r.b_t,
            r.norm2_f,
            r.norm_f1f,
            r.norm_g,
            r.norm_g1g,
            r.norm_f1g,
            r.inner_fg,
            r.psi1,
            r.psi2,
            r.psi2_variant,
            r.psi3
        ));
    }
    out
}
