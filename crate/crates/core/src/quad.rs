//! Adaptive one-dimensional quadrature.
//!
//! Globally adaptive Gauss-Kronrod (G7, K15) integration: the interval with
//! the largest error estimate is bisected until the summed error estimate
//! meets the requested tolerance. The Kronrod nodes are interior, so
//! integrable endpoint singularities (|t|^g with g > -1) are handled by
//! letting the subdivision concentrate at the endpoint.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Abscissae of the 15-point Kronrod rule on [-1, 1] (non-negative half).
/// Odd-indexed entries are the embedded 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_2,
    0.949_107_912_342_758_524_5,
    0.864_864_423_359_769_072_8,
    0.741_531_185_599_394_439_9,
    0.586_087_235_467_691_130_3,
    0.405_845_151_377_397_166_9,
    0.207_784_955_007_898_467_6,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_964,
    0.063_092_092_629_978_553_29,
    0.104_790_010_322_250_183_84,
    0.140_653_259_715_525_918_75,
    0.169_004_726_639_267_902_83,
    0.190_350_578_064_785_409_91,
    0.204_432_940_075_298_892_07,
    0.209_482_141_084_727_828_01,
];

/// Weights of the embedded 7-point Gauss rule (for XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_27,
    0.279_705_391_489_276_667_9,
    0.381_830_050_505_118_944_95,
    0.417_959_183_673_469_387_76,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    /// Roundoff floor of the error estimate; a segment whose error is at its
    /// floor cannot be improved by splitting.
    floor: f64,
}

impl Segment {
    /// Error mass that further bisection could still remove.
    fn excess(&self) -> f64 {
        (self.error - self.floor).max(0.0)
    }
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.excess() == other.excess()
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.excess()
            .partial_cmp(&other.excess())
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Result of an adaptive integration: value, error estimate, evaluation count.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut fv = [0.0f64; 15];
    fv[7] = fc;
    let mut result_gauss = WG[3] * fc;
    let mut result_kronrod = WGK[7] * fc;
    let mut resabs = WGK[7] * fc.abs();
    for j in 0..7 {
        let x = half * XGK[j];
        let f1 = f(mid - x);
        let f2 = f(mid + x);
        fv[j] = f1;
        fv[14 - j] = f2;
        let fsum = f1 + f2;
        result_kronrod += WGK[j] * fsum;
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            result_gauss += WG[j / 2] * fsum;
        }
    }
    // QUADPACK error model: resasc is the panel's oscillation mass; the
    // sharpening keeps the estimate tight on smooth panels while staying
    // conservative (≈ resasc) next to integrable singularities.
    let mean = result_kronrod * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv[j] - mean).abs() + (fv[14 - j] - mean).abs());
    }
    let value = result_kronrod * half;
    let mut error = ((result_kronrod - result_gauss) * half).abs();
    let resasc = resasc * half.abs();
    let resabs = resabs * half.abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    let floor = 50.0 * f64::EPSILON * resabs;
    error = error.max(floor);
    Segment { a, b, value, error, floor }
}

/// Integrate `f` over `[a, b]` to the requested tolerances.
///
/// Stops when the summed error estimate is below
/// `max(abs_tol, rel_tol * |integral|)` or the evaluation budget is spent;
/// the latter case returns a [`Error::QuadratureNoConverge`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<QuadResult> {
    integrate_with_breaks(f, &[a, b], rel_tol, abs_tol)
}

/// Integrate over consecutive segments `[pts[0], pts[1]], [pts[1], pts[2]], ...`.
///
/// Interior break points should be placed at kinks or integrable
/// singularities of the integrand so no Kronrod panel straddles them.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    pts: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    const MAX_SEGMENTS: usize = 4000;
    let mut heap = BinaryHeap::new();
    let mut evals = 0usize;
    for w in pts.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod(&f, w[0], w[1]));
            evals += 15;
        }
    }
    if heap.is_empty() {
        return Ok(QuadResult { value: 0.0, error: 0.0, evals: 0 });
    }
    loop {
        let total: f64 = heap.iter().map(|s| s.value).sum();
        let err: f64 = heap.iter().map(|s| s.error).sum();
        let tol = abs_tol.max(rel_tol * total.abs());
        if err <= tol {
            return Ok(QuadResult { value: total, error: err, evals });
        }
        let floor_sum: f64 = heap.iter().map(|s| s.floor).sum();
        if err <= 1.05 * floor_sum {
            // The error budget is roundoff floor; further splitting cannot
            // help. This is the best achievable answer (it also covers the
            // case where every single segment sits at its own floor).
            return Ok(QuadResult { value: total, error: err, evals });
        }
        if heap.len() >= MAX_SEGMENTS {
            return Err(Error::QuadratureNoConverge { error: err, evals });
        }
        let worst = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval at machine resolution; nothing to gain from splitting.
            let mut frozen = worst;
            frozen.floor = frozen.error;
            heap.push(frozen);
            continue;
        }
        heap.push(kronrod(&f, worst.a, mid));
        heap.push(kronrod(&f, mid, worst.b));
        evals += 30;
    }
}

/// Integrate `f` over the whole real line via the substitution t = tan(theta).
///
/// The integrand must decay fast enough that f(tan(theta)) / cos^2(theta)
/// remains integrable at theta = +/- pi/2. `breaks` lists finite t-values
/// (kinks) that should become panel boundaries.
///
/// The two chart endpoints are integrated in the variable u = sqrt(pi/2 -
/// |theta|): integrands with an integrable endpoint singularity cos^g
/// (slow polynomial decay of `f`) become ~u^{2g+1} there, which keeps plain
/// bisection from stalling at its ~sqrt(machine eps) accuracy floor.
pub fn integrate_real_line<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;
    let fr = &f;
    let g = move |theta: f64| {
        let c = theta.cos();
        if c <= 0.0 {
            return 0.0;
        }
        let t = theta.tan();
        fr(t) / (c * c)
    };
    // Central panel in theta, covering all kinks; tails in the regularizing
    // variable. The tail integrands evaluate t = cot(u^2) and 1/cos^2(theta)
    // = 1/sin^2(u^2) from u^2 directly: forming theta = pi/2 - u^2 first
    // would cancel away all precision near the pole and leave noise the
    // adaptive refinement then chases without converging.
    let mut pts = vec![-1.0, 1.0];
    for &t in breaks {
        if t.is_finite() {
            pts.push(t.atan());
        }
    }
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let lo = pts[0];
    let hi = *pts.last().expect("nonempty");
    let center = integrate_with_breaks(&g, &pts, rel_tol, abs_tol)?;
    let right = integrate(
        |u: f64| {
            if u == 0.0 {
                return 0.0;
            }
            let s = (u * u).sin();
            2.0 * u * fr((u * u).cos() / s) / (s * s)
        },
        0.0,
        (HALF_PI - hi).max(0.0).sqrt(),
        rel_tol,
        abs_tol,
    )?;
    let left = integrate(
        |u: f64| {
            if u == 0.0 {
                return 0.0;
            }
            let s = (u * u).sin();
            2.0 * u * fr(-(u * u).cos() / s) / (s * s)
        },
        0.0,
        (HALF_PI + lo).max(0.0).sqrt(),
        rel_tol,
        abs_tol,
    )?;
    Ok(QuadResult {
        value: center.value + right.value + left.value,
        error: center.error + right.error + left.error,
        evals: center.evals + right.evals + left.evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        // K15 integrates degree <= 22 exactly; a cubic on one panel is exact
        // to rounding.
        let r = integrate(|x| 3.0 * x * x * x - x + 2.0, -1.0, 2.0, 1e-14, 1e-14).unwrap();
        assert_relative_eq!(r.value, 11.25 - 1.5 + 6.0, max_relative = 1e-14);
    }

    #[test]
    fn smooth_transcendental() {
        let r = integrate(|x| x.sin(), 0.0, PI, 1e-12, 1e-14).unwrap();
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn endpoint_singularity() {
        // int_0^1 x^(-1/2) dx = 2; integrable singularity at 0. Bisection
        // bottoms out at machine-width panels, which caps the achievable
        // accuracy near sqrt(machine eps); callers needing better must
        // substitute the singularity away first.
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-9, 0.0).unwrap();
        assert_relative_eq!(r.value, 2.0, max_relative = 5e-8);
    }

    #[test]
    fn interior_kink_with_break() {
        // int_{-1}^{1} |x|^{1/2} dx = 4/3.
        let r = integrate_with_breaks(|x| x.abs().sqrt(), &[-1.0, 0.0, 1.0], 1e-10, 0.0).unwrap();
        assert_relative_eq!(r.value, 4.0 / 3.0, max_relative = 1e-9);
    }

    #[test]
    fn real_line_lorentzian() {
        // int_R (1+t^2)^{-1} dt = pi.
        let r = integrate_real_line(|t| 1.0 / (1.0 + t * t), &[], 1e-12, 0.0).unwrap();
        assert_relative_eq!(r.value, PI, max_relative = 1e-11);
    }

    #[test]
    fn real_line_with_shifted_kink() {
        // int_R |t - 3|^{1/2} (1+t^2)^{-2} dt, cross-checked against a
        // high-resolution split integration.
        let f = |t: f64| (t - 3.0).abs().sqrt() / (1.0 + t * t).powi(2);
        let r = integrate_real_line(f, &[3.0], 1e-11, 0.0).unwrap();
        let direct = integrate_with_breaks(f, &[-2000.0, 0.0, 3.0, 2000.0], 1e-12, 0.0).unwrap();
        // Tail beyond |t| = 2000 is below 1e-9 relative.
        assert_relative_eq!(r.value, direct.value, max_relative = 1e-7);
    }
}
#[test]
fn probe_power() {
    for tol in [1e-6, 1e-8, 1e-10] {
        let r = integrate_with_breaks(|u: f64| u.powf(-0.4), &[0.0, 1.0], tol, 0.0);
        match r {
            Ok(q) => println!("power tol={:e}: value={:.12} (exact {:.12}) err={:.3e} evals={}", tol, q.value, 1.0/0.6, q.error, q.evals),
            Err(e) => println!("power tol={:e}: {:?}", tol, e),
        }
    }
}

#[test]
fn probe_tail() {
    // u-substituted upper tail of the (n=2, beta=1.7) sign moment factor:
    // g(t) = |t|^{1.7} (1+t^2)^{-1.5}, t = tan(pi/2 - u^2).
    let half_pi = std::f64::consts::FRAC_PI_2;
    let g = |t: f64| t.abs().powf(1.7) * (1.0 + t * t).powf(-1.5);
    let f = move |u: f64| {
        let theta = half_pi - u * u;
        let t = theta.tan();
        let sec2 = 1.0 + t * t;
        g(t) * sec2 * 2.0 * u
    };
    let top = (half_pi - 1.0).sqrt();
    for tol in [1e-6, 1e-7, 1e-8, 1e-9] {
        let r = integrate_with_breaks(&f, &[0.0, top], tol, 0.0);
        match r {
            Ok(q) => println!("tail tol={:e}: value={:.12} err={:.3e} evals={}", tol, q.value, q.error, q.evals),
            Err(e) => println!("tail tol={:e}: {:?}", tol, e),
        }
    }
    // center panel for comparison
    let fc = |theta: f64| { let t = theta.tan(); g(t) * (1.0 + t*t) };
    for tol in [1e-8] {
        let r = integrate_with_breaks(&fc, &[-1.0, 0.0, 1.0], tol, 0.0);
        println!("center tol={:e}: {:?}", tol, r.map(|q| (q.value, q.error, q.evals)));
    }
}

#[test]
fn probe_shift_cases() {
    for &(n, beta) in &[(2usize, 1.7), (3, 1.5), (3, 2.5)] {
        for &tol in &[1e-6, 1e-7, 1e-8] {
            let r = crate::flow::moment_shift_sign(n, beta, 0.0, tol);
            println!("sign n={} beta={} tol={:e} -> {:?}", n, beta, tol, r);
        }
    }
    for &s in &[0.0, 0.1, 2.0] {
        let r = crate::flow::moment_shift_abs(3, 1.5, s, 1e-7);
        println!("abs s={} -> {:?}", s, r);
    }
}
