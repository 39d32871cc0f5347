//! Critical points of the curvature candidate K and their flatness data.
//!
//! A critical point y carries a chart frame, the value K(y), a flatness
//! exponent beta and per-axis coefficients b_k describing
//! K(exp_y(v)) - K(y) ~ sum_k b_k |v_k|^beta near v = 0. Points can be
//! located numerically from an expression for K, or supplied directly and
//! only validated.

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::geometry::{
    self, exp_map, geodesic_distance, normal_frame, quasi_uniform_points, sphere_gradient,
    SpherePoint, TangentFrame,
};
use crate::linalg;

/// A scalar function on the sphere.
pub trait ScalarField {
    fn value_at(&self, p: &SpherePoint) -> Result<f64>;
}

impl ScalarField for Expression {
    fn value_at(&self, p: &SpherePoint) -> Result<f64> {
        self.eval_on_sphere(p)
    }
}

/// Adapter so closures can act as scalar fields (used for synthetically
/// constructed K in tests and chart-local models elsewhere).
pub struct FnField<F>(pub F);

impl<F> ScalarField for FnField<F>
where
    F: Fn(&SpherePoint) -> Result<f64>,
{
    fn value_at(&self, p: &SpherePoint) -> Result<f64> {
        (self.0)(p)
    }
}

/// Minimum |sum b_k| for a valid critical point; the certificate formulas
/// divide by this sum.
const BSUM_TOL: f64 = 1e-9;

/// A validated critical point with flatness data.
#[derive(Debug, Clone)]
pub struct CriticalPoint {
    frame: TangentFrame,
    value: f64,
    beta: f64,
    b: Vec<f64>,
}

impl CriticalPoint {
    pub fn new(frame: TangentFrame, value: f64, beta: f64, b: Vec<f64>) -> Result<Self> {
        let n = frame.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidCriticalPoint {
                reason: format!("K(y) = {} must be positive and finite", value),
            });
        }
        if !(beta > 1.0 && beta < n as f64) {
            return Err(Error::InvalidCriticalPoint {
                reason: format!("beta = {} outside (1, n) with n = {}", beta, n),
            });
        }
        for (k, &bk) in b.iter().enumerate() {
            if bk == 0.0 || !bk.is_finite() {
                return Err(Error::InvalidCriticalPoint {
                    reason: format!("b[{}] = {} must be nonzero and finite", k, bk),
                });
            }
        }
        let b_sum: f64 = b.iter().sum();
        if b_sum.abs() <= BSUM_TOL {
            return Err(Error::InvalidCriticalPoint {
                reason: format!("|sum b_k| = {:.3e} below {:.1e}", b_sum.abs(), BSUM_TOL),
            });
        }
        Ok(CriticalPoint { frame, value, beta, b })
    }

    pub fn point(&self) -> &SpherePoint {
        self.frame.base()
    }

    pub fn frame(&self) -> &TangentFrame {
        &self.frame
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn b_sum(&self) -> f64 {
        self.b.iter().sum()
    }
}

/// Which side of the classification a critical point falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Classification {
    /// -sum b_k > 0, i.e. the point contributes to the certificate.
    pub in_k_plus: bool,
    /// beta matches n - 2*sigma within tolerance.
    pub in_beta_critical: bool,
    /// Number of negative b_k.
    pub itilde: usize,
}

/// Classify a critical point. `beta_tol` is relative: the point counts as
/// beta-critical when |beta - (n - 2 sigma)| <= beta_tol * (n - 2 sigma).
/// Pass 0.0 for exact comparison (user-supplied data).
pub fn classify(cp: &CriticalPoint, sigma: f64, beta_tol: f64) -> Classification {
    let n = cp.b.len() as f64;
    let bc = n - 2.0 * sigma;
    Classification {
        in_k_plus: cp.b_sum() < 0.0,
        in_beta_critical: (cp.beta - bc).abs() <= beta_tol * bc,
        itilde: cp.b.iter().filter(|&&bk| bk < 0.0).count(),
    }
}

/// Search configuration for [`find_critical_points`].
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Number of quasi-uniform multistart seeds.
    pub starts: usize,
    /// Convergence threshold on the gradient norm.
    pub grad_tol: f64,
    /// Geodesic distance below which two results are the same point.
    pub dedup_tol: f64,
    /// Seed for the deterministic chart frames along the search.
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { starts: 500, grad_tol: 1e-7, dedup_tol: 1e-6, seed: 42 }
    }
}

const GRAD_STEP: f64 = 1e-5;
const JAC_STEP: f64 = 1e-4;
const MAX_ITERS: usize = 60;

fn gradient_at<F: ScalarField>(field: &F, frame: &TangentFrame) -> Result<Vec<f64>> {
    sphere_gradient(|p| field.value_at(p), frame, GRAD_STEP)
}

/// Frame at `p` whose axes track `frame`'s as closely as projection allows.
fn transported_frame(frame: &TangentFrame, p: &SpherePoint) -> Result<TangentFrame> {
    TangentFrame::orthonormalized(p.clone(), frame.axes().to_vec())
}

/// Finite-difference Jacobian of the chart-gradient map at the frame base,
/// row-major with entry [row * n + col] = d g_row / d v_col.
fn gradient_jacobian<F: ScalarField>(field: &F, frame: &TangentFrame) -> Result<Vec<f64>> {
    let n = frame.dim();
    let mut jac = vec![0.0; n * n];
    let mut v = vec![0.0; n];
    for col in 0..n {
        v[col] = JAC_STEP;
        let pp = exp_map(frame, &v)?;
        v[col] = -JAC_STEP;
        let pm = exp_map(frame, &v)?;
        v[col] = 0.0;
        let gp = gradient_at(field, &transported_frame(frame, &pp)?)?;
        let gm = gradient_at(field, &transported_frame(frame, &pm)?)?;
        for row in 0..n {
            jac[row * n + col] = (gp[row] - gm[row]) / (2.0 * JAC_STEP);
        }
    }
    Ok(jac)
}

fn try_start<F: ScalarField>(
    field: &F,
    start: &SpherePoint,
    cfg: &SearchConfig,
) -> Option<SpherePoint> {
    let mut y = start.clone();
    for _ in 0..MAX_ITERS {
        let frame = normal_frame(&y, cfg.seed);
        let g = gradient_at(field, &frame).ok()?;
        let gn = geometry::norm(&g);
        if gn < cfg.grad_tol {
            return Some(y);
        }
        let jac = gradient_jacobian(field, &frame).ok()?;
        // Newton step on the gradient map, falling back to descent on |g|^2
        // when the step is unusable (singular Jacobian, or no decrease).
        let mut moved = false;
        let mut lhs = jac.clone();
        let mut rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        if let Some(mut dv) = linalg::solve_dense(&mut lhs, &mut rhs) {
            let dn = geometry::norm(&dv);
            if dn > 0.5 {
                for x in dv.iter_mut() {
                    *x *= 0.5 / dn;
                }
            }
            if let Ok(trial) = exp_map(&frame, &dv) {
                let tf = transported_frame(&frame, &trial).ok()?;
                if let Ok(gt) = gradient_at(field, &tf) {
                    if geometry::norm(&gt) < gn {
                        y = trial;
                        moved = true;
                    }
                }
            }
        }
        if !moved {
            // d = -J^T g is the descent direction of |g|^2 / 2.
            let n = frame.dim();
            let mut d = vec![0.0; n];
            for c in 0..n {
                for r in 0..n {
                    d[c] -= jac[r * n + c] * g[r];
                }
            }
            let dn = geometry::norm(&d);
            if dn == 0.0 {
                return None;
            }
            for x in d.iter_mut() {
                *x /= dn;
            }
            let mut t = gn.min(0.2);
            let mut accepted = false;
            for _ in 0..15 {
                let v: Vec<f64> = d.iter().map(|x| x * t).collect();
                if let Ok(trial) = exp_map(&frame, &v) {
                    let tf = transported_frame(&frame, &trial).ok()?;
                    if let Ok(gt) = gradient_at(field, &tf) {
                        if geometry::norm(&gt) < gn {
                            y = trial;
                            accepted = true;
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                return None;
            }
        }
    }
    None
}

/// Locate critical points of `field` on S^n by multistart root-finding on the
/// chart gradient.
///
/// Fails fast if the field is not strictly positive on a quasi-uniform
/// validation sample, or if its gradient is below tolerance at every sample
/// point (constant K has no isolated critical points). Starts that do not
/// converge are dropped; results are deduplicated at `cfg.dedup_tol` keeping
/// the earliest start, and every survivor is re-verified with a half-step
/// gradient.
pub fn find_critical_points<F: ScalarField>(
    field: &F,
    n: usize,
    cfg: &SearchConfig,
) -> Result<Vec<SpherePoint>> {
    let samples = 10usize * 4usize.pow(n as u32);
    let mut max_grad: f64 = 0.0;
    for p in quasi_uniform_points(n, samples) {
        let v = field.value_at(&p)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NotPositive { value: v, point: p.coords().to_vec() });
        }
        let g = gradient_at(field, &normal_frame(&p, cfg.seed))?;
        max_grad = max_grad.max(geometry::norm(&g));
    }
    if max_grad < cfg.grad_tol {
        return Err(Error::GradientDegenerate);
    }

    let mut found: Vec<SpherePoint> = Vec::new();
    for start in quasi_uniform_points(n, cfg.starts) {
        let Some(y) = try_start(field, &start, cfg) else { continue };
        let fresh = found
            .iter()
            .all(|q| geodesic_distance(q, &y).map(|d| d > cfg.dedup_tol).unwrap_or(true));
        if !fresh {
            continue;
        }
        let frame = normal_frame(&y, cfg.seed);
        let full = gradient_at(field, &frame)?;
        let half = sphere_gradient(|p| field.value_at(p), &frame, GRAD_STEP / 2.0)?;
        if geometry::norm(&full) < cfg.grad_tol && geometry::norm(&half) < cfg.grad_tol {
            found.push(y);
        }
    }
    Ok(found)
}

/// Result of a flatness fit at a critical point.
#[derive(Debug, Clone)]
pub struct FlatnessFit {
    pub beta: f64,
    pub b: Vec<f64>,
    /// Largest per-axis deviation from the mean exponent.
    pub residual: f64,
}

/// Threshold below which an axis is considered to carry no flatness signal.
const AXIS_FLOOR: f64 = 1e-13;

fn linfit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let intercept = (sy - slope * sx) / m;
    (slope, intercept)
}

/// Fit the flatness model K(exp(t e_k)) - K(y) ~ b_k |t|^beta along each
/// chart axis by log-log least squares over the given radii.
///
/// The differences are symmetrized over +-t, which cancels odd remainder
/// terms; the fitted exponent is the mean of the per-axis slopes and the fit
/// is rejected as not flat when the per-axis spread exceeds
/// `consistency_tol`.
pub fn fit_flatness<F: ScalarField>(
    field: &F,
    frame: &TangentFrame,
    radii: &[f64],
    consistency_tol: f64,
) -> Result<FlatnessFit> {
    if radii.len() < 6 {
        return Err(Error::InvalidProblem {
            reason: format!("flatness fit needs at least 6 radii, got {}", radii.len()),
        });
    }
    for &t in radii {
        if !(1e-4..=0.05).contains(&t) {
            return Err(Error::InvalidProblem {
                reason: format!("flatness radius {} outside [1e-4, 0.05]", t),
            });
        }
    }
    let n = frame.dim();
    let k0 = field.value_at(frame.base())?;
    let mut slopes = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut v = vec![0.0; n];
    for k in 0..n {
        let mut xs = Vec::with_capacity(radii.len());
        let mut ys = Vec::with_capacity(radii.len());
        let mut sign_ref = 0.0;
        let mut t_ref = 0.0;
        for &t in radii {
            v[k] = t;
            let plus = field.value_at(&exp_map(frame, &v)?)?;
            v[k] = -t;
            let minus = field.value_at(&exp_map(frame, &v)?)?;
            v[k] = 0.0;
            let diff = 0.5 * (plus + minus) - k0;
            if diff.abs() < AXIS_FLOOR {
                continue;
            }
            if t > t_ref {
                t_ref = t;
                sign_ref = diff.signum();
            }
            xs.push(t.ln());
            ys.push(diff.abs().ln());
        }
        if xs.is_empty() {
            return Err(Error::AxisDegenerate { axis: k, threshold: AXIS_FLOOR });
        }
        let (slope, intercept) = linfit(&xs, &ys);
        slopes[k] = slope;
        b[k] = sign_ref * intercept.exp();
    }
    let beta = slopes.iter().sum::<f64>() / n as f64;
    let residual = slopes.iter().map(|s| (s - beta).abs()).fold(0.0, f64::max);
    if residual > consistency_tol {
        return Err(Error::NotFlat { residual, tol: consistency_tol });
    }
    Ok(FlatnessFit { beta, b, residual })
}
