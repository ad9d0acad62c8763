//! Globally adaptive Gauss-Kronrod quadrature (21-point Kronrod rule with
//! its embedded 10-point Gauss rule), plus a substitution wrapper for
//! integrands with a power-law singularity at the left end of the range.
//!
//! The error heuristics follow QUADPACK's `qk21`/`qag`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_643_582_870,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Stopping rule for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_subdivisions: usize,
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_g = 0.0;
    let mut res_k = WGK[10] * fc;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Segment { a, b, value, error }
}

/// Integrate `f` over the finite interval `[a, b]` by global bisection of
/// the segment with the largest error estimate.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain {
            op: "integrate",
            reason: format!("interval [{a}, {b}] must be finite"),
        });
    }
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            subdivisions: 0,
        });
    }
    let first = kronrod21(&f, a, b);
    let mut total = first.value;
    let mut total_err = first.error;
    let mut previous = f64::NAN;
    let mut heap = BinaryHeap::new();
    let mut frozen_value = 0.0;
    let mut frozen_err = 0.0;
    heap.push(first);
    let mut subdivisions = 1;

    loop {
        if !total.is_finite() {
            return Err(Error::Convergence {
                context: "non-finite integrand".into(),
                subdivisions,
                last: total,
                previous,
                error: total_err,
            });
        }
        let target = tol.abs.max(tol.rel * total.abs());
        if total_err <= target {
            break;
        }
        if subdivisions >= tol.max_subdivisions {
            return Err(Error::Convergence {
                context: String::new(),
                subdivisions,
                last: total,
                previous,
                error: total_err,
            });
        }
        let Some(worst) = heap.pop() else {
            // Every segment hit the roundoff floor.
            return Err(Error::Convergence {
                context: "roundoff limit".into(),
                subdivisions,
                last: total,
                previous,
                error: total_err,
            });
        };
        let mid = 0.5 * (worst.a + worst.b);
        let width = worst.b - worst.a;
        let scale = worst.a.abs().max(worst.b.abs()).max(f64::MIN_POSITIVE);
        if width.abs() <= 1.0e3 * f64::EPSILON * scale || mid == worst.a || mid == worst.b {
            frozen_value += worst.value;
            frozen_err += worst.error;
            continue;
        }
        let left = kronrod21(&f, worst.a, mid);
        let right = kronrod21(&f, mid, worst.b);
        subdivisions += 1;
        previous = total;
        heap.push(left);
        heap.push(right);
        // Re-sum rather than update incrementally so the result does not
        // depend on accumulated cancellation.
        total = frozen_value;
        total_err = frozen_err;
        for s in heap.iter() {
            total += s.value;
            total_err += s.error;
        }
    }
    Ok(Estimate {
        value: total,
        error: total_err,
        subdivisions,
    })
}

/// Integrate `g(t)` over `[lo, hi]` with `0 <= lo < hi`, where `g` behaves
/// like `t^exponent` (exponent > -1) near `t = 0`.
///
/// The substitution `t = s^p` with `p = 1/(1 + exponent)` turns the
/// power-law factor into a bounded, smooth one before handing off to
/// [`integrate`]. Callers pass `g` in terms of the distance `t` to the
/// singular point so that no precision is lost forming `x - x0`.
pub fn integrate_power_law<F: Fn(f64) -> f64>(
    g: F,
    lo: f64,
    hi: f64,
    exponent: f64,
    tol: Tolerance,
) -> Result<Estimate> {
    if !(exponent > -1.0) {
        return Err(Error::Domain {
            op: "integrate_power_law",
            reason: format!("exponent {exponent} must exceed -1"),
        });
    }
    if !(lo >= 0.0 && hi >= lo) {
        return Err(Error::Domain {
            op: "integrate_power_law",
            reason: format!("need 0 <= lo <= hi, got [{lo}, {hi}]"),
        });
    }
    let p = 1.0 / (1.0 + exponent);
    let s_lo = lo.powf(1.0 / p);
    let s_hi = hi.powf(1.0 / p);
    integrate(
        |s: f64| {
            let t = s.powf(p);
            g(t) * p * s.powf(p - 1.0)
        },
        s_lo,
        s_hi,
        tol,
    )
}
