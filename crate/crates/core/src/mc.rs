//! Monte Carlo for the normalized estimation error `√T/σ (α - α̃_T)`.
//!
//! Sample `i` of seed `s` draws its Gaussian vector from ChaCha8 seeded
//! with `s` on stream `i`, so every sample is addressable and the output
//! does not depend on how the batch is scheduled across threads.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analytic::ModelParams;
use crate::chaos::{ChaosSetup, KernelMatrix};
use crate::error::{Error, Result};
use crate::gram::{GramFactor, GramMatrix, TimeGrid};

pub const DEFAULT_DKW_DELTA: f64 = 0.05;
pub const MIN_KS_SAMPLES: usize = 100;

/// `k` standard normals for sample `index` of `seed`, by inverse CDF.
pub fn standard_normals(seed: u64, index: u64, k: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let z = Normal::standard();
    (0..k)
        .map(|_| {
            let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
            z.inverse_cdf(u)
        })
        .collect()
}

/// Increments `Δ = L ξ` for sample `index` of `seed`.
pub fn draw_increments(seed: u64, index: u64, factor: &GramFactor) -> Vec<f64> {
    let xi = standard_normals(seed, index, factor.noise_dim());
    factor.correlate(&xi).expect("noise length matches the factor")
}

/// `I_2(F) / (I_2(G) + b_T)` with the traces precomputed.
#[derive(Debug, Clone)]
pub struct ChaosStatistic<'a> {
    f: &'a KernelMatrix,
    g: &'a KernelMatrix,
    trace_f: f64,
    trace_g: f64,
    b_t: f64,
}

impl<'a> ChaosStatistic<'a> {
    pub fn new(f: &'a KernelMatrix, g: &'a KernelMatrix, c: &GramMatrix, b_t: f64) -> Result<Self> {
        Ok(Self {
            f,
            g,
            trace_f: f.trace_with(c)?,
            trace_g: g.trace_with(c)?,
            b_t,
        })
    }

    pub fn from_setup(s: &'a ChaosSetup) -> Result<Self> {
        Self::new(&s.f, &s.g, &s.gram, s.b_t)
    }

    pub fn eval(&self, delta: &[f64], index: u64) -> Result<f64> {
        if delta.len() != self.f.n() {
            return Err(Error::DimensionMismatch {
                op: "ChaosStatistic::eval",
                expected: self.f.n(),
                got: delta.len(),
            });
        }
        let num = self.f.quad_form(delta) - self.trace_f;
        let den = self.g.quad_form(delta) - self.trace_g + self.b_t;
        if !(den > 0.0) {
            return Err(Error::DegenerateSample { index, denominator: den });
        }
        Ok(num / den)
    }
}

/// One draw of the chaos-ratio statistic.
#[allow(clippy::too_many_arguments)]
pub fn sample_statistic_chaos(
    seed: u64,
    index: u64,
    grid: &TimeGrid,
    c: &GramMatrix,
    factor: &GramFactor,
    f: &KernelMatrix,
    g: &KernelMatrix,
    b_t: f64,
) -> Result<f64> {
    if grid.n() != c.n() || factor.n() != c.n() {
        return Err(Error::DimensionMismatch {
            op: "sample_statistic_chaos",
            expected: c.n(),
            got: grid.n().max(factor.n()),
        });
    }
    let delta = draw_increments(seed, index, factor);
    ChaosStatistic::new(f, g, c, b_t)?.eval(&delta, index)
}

/// The statistic built from the path: `X` at the grid edges from the
/// explicit solution, a Skorohod-corrected Riemann sum in the numerator and
/// the trapezoid rule for `∫X²`.
#[derive(Debug, Clone)]
pub struct PathStatistic {
    decay: Vec<f64>,
    inflow: Vec<f64>,
    widths: Vec<f64>,
    correction: f64,
    scale: f64,
}

impl PathStatistic {
    pub fn new(grid: &TimeGrid, p: &ModelParams, c: &GramMatrix, sigma: f64) -> Result<Self> {
        if grid.n() != c.n() {
            return Err(Error::DimensionMismatch {
                op: "PathStatistic::new",
                expected: grid.n(),
                got: c.n(),
            });
        }
        let a = p.alpha();
        let (t, mid) = (grid.edges(), grid.midpoints());
        let n = grid.n();
        let decay = (0..n).map(|k| (-a * (t[k + 1] - t[k])).exp()).collect();
        let inflow = (0..n).map(|k| (-a * (t[k + 1] - mid[k])).exp()).collect();
        // Σ_k ⟨X-kernel at t_k, 1_cell k⟩ = Σ_k Σ_{j<k} e^{-α(t_k - mid_j)} C_jk
        let mut correction = 0.0;
        for k in 1..n {
            correction += (0..k).map(|j| (-a * (t[k] - mid[j])).exp() * c.get(j, k)).sum::<f64>();
        }
        Ok(Self {
            decay,
            inflow,
            widths: grid.widths().to_vec(),
            correction,
            scale: grid.horizon().sqrt() / sigma,
        })
    }

    pub fn eval(&self, delta: &[f64], index: u64) -> Result<f64> {
        if delta.len() != self.widths.len() {
            return Err(Error::DimensionMismatch {
                op: "PathStatistic::eval",
                expected: self.widths.len(),
                got: delta.len(),
            });
        }
        let mut x = 0.0;
        let mut forward = 0.0;
        let mut area = 0.0;
        for k in 0..delta.len() {
            forward += x * delta[k];
            let next = self.decay[k] * x + self.inflow[k] * delta[k];
            area += 0.5 * self.widths[k] * (x * x + next * next);
            x = next;
        }
        if !(area > 0.0) {
            return Err(Error::DegenerateSample { index, denominator: area });
        }
        Ok(self.scale * (forward - self.correction) / area)
    }
}

/// One draw of the path-route statistic.
pub fn sample_statistic_path(
    seed: u64,
    index: u64,
    grid: &TimeGrid,
    p: &ModelParams,
    c: &GramMatrix,
    factor: &GramFactor,
    sigma: f64,
) -> Result<f64> {
    let delta = draw_increments(seed, index, factor);
    PathStatistic::new(grid, p, c, sigma)?.eval(&delta, index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Chaos,
    Path,
}

/// A seeded batch of statistic samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRun {
    pub seed: u64,
    pub n_samples: usize,
    pub samples: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n: usize,
    pub params: ModelParams,
    pub route: Route,
}

/// Run `n_samples` draws of the given route. `parallel` only changes the
/// schedule, never the values.
pub fn run(
    setup: &ChaosSetup,
    factor: &GramFactor,
    route: Route,
    seed: u64,
    n_samples: usize,
    parallel: bool,
) -> Result<McRun> {
    let chaos = ChaosStatistic::from_setup(setup)?;
    let path = PathStatistic::new(&setup.grid, &setup.params, &setup.gram, setup.sigma)?;
    let one = |i: usize| -> Result<f64> {
        let delta = draw_increments(seed, i as u64, factor);
        match route {
            Route::Chaos => chaos.eval(&delta, i as u64),
            Route::Path => path.eval(&delta, i as u64),
        }
    };
    let samples: Vec<f64> = if parallel {
        (0..n_samples).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..n_samples).map(one).collect::<Result<_>>()?
    };
    Ok(McRun {
        seed,
        n_samples,
        samples,
        horizon: setup.grid.horizon(),
        n: setup.grid.n(),
        params: setup.params,
        route,
    })
}

/// Both routes on shared noise, as `(chaos, path)` pairs.
pub fn paired_routes(setup: &ChaosSetup, factor: &GramFactor, seed: u64, n_samples: usize) -> Result<Vec<(f64, f64)>> {
    let chaos = ChaosStatistic::from_setup(setup)?;
    let path = PathStatistic::new(&setup.grid, &setup.params, &setup.gram, setup.sigma)?;
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let delta = draw_increments(seed, i as u64, factor);
            Ok((chaos.eval(&delta, i as u64)?, path.eval(&delta, i as u64)?))
        })
        .collect()
}

pub fn samples_csv(run: &McRun) -> String {
    let mut out = String::from("index,value\n");
    for (i, v) in run.samples.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

/// Kolmogorov distance of a sample to the standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub ks_distance: f64,
    pub dkw_radius: f64,
    pub n_samples: usize,
    pub target: String,
}

/// `√(ln(2/δ) / (2N))`.
pub fn dkw_radius(n: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

pub fn kolmogorov_distance(samples: &[f64]) -> Result<KsReport> {
    kolmogorov_distance_with(samples, DEFAULT_DKW_DELTA)
}

/// Exact `sup_z |F̂(z) - Φ(z)|`, attained at a jump of the empirical CDF.
pub fn kolmogorov_distance_with(samples: &[f64], delta: f64) -> Result<KsReport> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(Error::TooFewSamples {
            required: MIN_KS_SAMPLES,
            got: samples.len(),
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples", "all samples must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let z = Normal::standard();
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let phi = z.cdf(x);
        sup = sup.max((i + 1) as f64 / n - phi).max(phi - i as f64 / n);
    }
    Ok(KsReport {
        ks_distance: sup.min(1.0),
        dkw_radius: dkw_radius(sorted.len(), delta),
        n_samples: sorted.len(),
        target: "standard_normal".into(),
    })
}

/// Least-squares fit of `ln value` on `ln T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn rate_regression(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::TooFewSamples {
            required: 3,
            got: pairs.len(),
        });
    }
    if let Some(&(t, v)) = pairs.iter().find(|(t, v)| !(*t > 0.0 && *v > 0.0 && t.is_finite() && v.is_finite())) {
        return Err(Error::Domain {
            op: "rate_regression",
            reason: format!("pairs must be positive and finite, got ({t}, {v})"),
        });
    }
    let k = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain {
            op: "rate_regression",
            reason: "all horizons are equal".into(),
        });
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit {
        pairs: pairs.to_vec(),
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{sigma_const, QuadratureSpec};
    use crate::gram::{build_grid, factorize, gram_matrix};
    use proptest::prelude::*;

    fn setup(t: f64, n: usize) -> (ChaosSetup, GramFactor) {
        let p = ModelParams::new(1.0, 0.7).unwrap();
        let q = QuadratureSpec::for_params(&p);
        let k = sigma_const(&p, &q).unwrap();
        let s = ChaosSetup::new(build_grid(t, n).unwrap(), &p, &k, &q).unwrap();
        let f = factorize(&s.gram).unwrap();
        (s, f)
    }

    #[test]
    fn normals_are_addressable() {
        let a = standard_normals(42, 7, 5);
        assert_eq!(a, standard_normals(42, 7, 5));
        assert_ne!(a, standard_normals(42, 8, 5));
        assert_ne!(a, standard_normals(43, 7, 5));
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn chaos_sample_is_deterministic() {
        let (s, f) = setup(5.0, 32);
        let x = sample_statistic_chaos(42, 3, &s.grid, &s.gram, &f, &s.f, &s.g, s.b_t).unwrap();
        let y = sample_statistic_chaos(42, 3, &s.grid, &s.gram, &f, &s.f, &s.g, s.b_t).unwrap();
        assert_eq!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn serial_and_parallel_agree() {
        let (s, f) = setup(5.0, 32);
        let a = run(&s, &f, Route::Chaos, 1, 500, false).unwrap();
        let b = run(&s, &f, Route::Chaos, 1, 500, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 500);
        let csv = samples_csv(&a);
        assert!(csv.starts_with("index,value\n0,"));
    }

    #[test]
    fn path_route_close_to_chaos_route() {
        let (s, f) = setup(10.0, 1024);
        let pairs = paired_routes(&s, &f, 42, 200).unwrap();
        let mut rel: Vec<f64> = pairs.iter().map(|(c, p)| ((c - p) / c).abs()).collect();
        rel.sort_by(f64::total_cmp);
        let median = rel[rel.len() / 2];
        assert!(median < 0.02, "median relative difference {median}");
    }

    #[test]
    fn path_route_degenerate_inputs() {
        let (s, _) = setup(5.0, 16);
        let path = PathStatistic::new(&s.grid, &s.params, &s.gram, s.sigma).unwrap();
        assert!(path.correction != 0.0);
        match path.eval(&[0.0; 16], 9) {
            Err(Error::DegenerateSample { index, denominator }) => {
                assert_eq!(index, 9);
                assert_eq!(denominator, 0.0);
            }
            other => panic!("{other:?}"),
        }
        // one cell: X_0 = 0 so the numerator vanishes
        let p = s.params;
        let grid = TimeGrid::from_edges(vec![0.0, 1.0]).unwrap();
        let c = GramMatrix::from_row_major(1, vec![0.8]).unwrap();
        let one = PathStatistic::new(&grid, &p, &c, 2.0).unwrap();
        assert_eq!(one.eval(&[0.7], 0).unwrap(), 0.0);
    }

    #[test]
    fn chaos_degenerate_denominator_is_an_error() {
        let (s, _) = setup(5.0, 16);
        let stat = ChaosStatistic::new(&s.f, &s.g, &s.gram, -1e6).unwrap();
        assert!(matches!(stat.eval(&[0.0; 16], 4), Err(Error::DegenerateSample { index: 4, .. })));
    }

    #[test]
    fn ks_exact_normal_within_dkw() {
        let draw = |seed| {
            let s = kolmogorov_distance(&standard_normals(seed, 0, 100_000)).unwrap();
            s.ks_distance < s.dkw_radius
        };
        assert!(draw(2024) || draw(2025));
        let r = kolmogorov_distance(&standard_normals(1, 0, 100_000)).unwrap();
        assert!((r.dkw_radius - 0.004_294).abs() < 1e-6);
    }

    #[test]
    fn ks_point_mass_and_errors() {
        let r = kolmogorov_distance(&[0.0; 200]).unwrap();
        assert!((r.ks_distance - 0.5).abs() < 1e-15);
        assert_eq!(r.target, "standard_normal");
        assert!(matches!(kolmogorov_distance(&[0.0; 50]), Err(Error::TooFewSamples { .. })));
        let json = serde_json::to_value(&r).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 4);
    }

    #[test]
    fn rate_regression_exact_power_laws() {
        let ts = [5.0, 10.0, 20.0, 40.0];
        let fit = rate_regression(&ts.map(|t: f64| (t, 3.0 / t.sqrt()))).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(rate_regression(&ts.map(|t| (t, 2.5))).unwrap().slope.abs() < 1e-15);
        assert!((rate_regression(&ts.map(|t| (t, 2.0 / t))).unwrap().slope + 1.0).abs() < 1e-12);
        assert!(rate_regression(&[(1.0, 1.0), (2.0, 0.5)]).is_err());
        assert!(rate_regression(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn ks_permutation_invariant(seed in 0u64..500, shift in -1.0f64..1.0) {
            let mut xs: Vec<f64> = standard_normals(seed, 1, 300).iter().map(|v| v + shift).collect();
            let a = kolmogorov_distance(&xs).unwrap();
            xs.reverse();
            xs.rotate_left(17);
            let b = kolmogorov_distance(&xs).unwrap();
            prop_assert_eq!(a.ks_distance, b.ks_distance);
            prop_assert!(a.ks_distance >= 0.0 && a.ks_distance <= 1.0);
        }

        #[test]
        fn rate_regression_recovers_slope(c in 0.1f64..10.0, g in -2.0f64..2.0) {
            let pairs: Vec<(f64, f64)> = [3.0, 7.0, 11.0, 50.0].iter().map(|&t: &f64| (t, c * t.powf(g))).collect();
            let fit = rate_regression(&pairs).unwrap();
            prop_assert!((fit.slope - g).abs() < 1e-10);
            prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn chaos_route_matches_gram_of_factor() {
        // statistic built from draw_increments uses Δ with covariance C
        let (s, f) = setup(2.0, 8);
        let c = gram_matrix(&s.grid, &s.params, &QuadratureSpec::for_params(&s.params)).unwrap();
        assert_eq!(c, s.gram);
        assert_eq!(draw_increments(3, 4, &f).len(), 8);
    }
}
