//! The Beta/Gamma integral constants of the problem.
//!
//! Everything here reduces to two families of integrals over R^n:
//!
//! * `radial_integral(n, p)` = int_{R^n} (1 + |x|^2)^{-p} dx
//! * `moment_integral(n, alpha, p)` = int_{R^n} |x_1|^alpha (1 + |x|^2)^{-p} dx
//!
//! with closed forms through the Beta function:
//!
//! ```text
//! radial(n, p)            = omega_{n-1} * (1/2) B(n/2, p - n/2)
//! moment(n, alpha, p)     = S(n, alpha) * (1/2) B((n+alpha)/2, p - (n+alpha)/2)
//! S(n, alpha)             = 2 pi^{(n-1)/2} Gamma((alpha+1)/2) / Gamma((n+alpha)/2)
//! ```
//!
//! where omega_{n-1} is the area of the unit sphere S^{n-1} and S(n, alpha)
//! the corresponding |omega_1|^alpha surface moment. Each closed form is
//! cross-checked against adaptive quadrature in the tests and in the
//! acceptance suite.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::quad;

/// Surface area of the unit sphere S^{m-1} in R^m: 2 pi^{m/2} / Gamma(m/2).
pub fn sphere_area(m: usize) -> f64 {
    assert!(m >= 1);
    2.0 * std::f64::consts::PI.powf(m as f64 / 2.0) / gamma(m as f64 / 2.0)
}

/// (1/2) B(a, b), evaluated in log space for stability.
fn half_beta(a: f64, b: f64) -> f64 {
    0.5 * (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

/// Surface moment int_{S^{n-1}} |omega_1|^alpha d omega, for n >= 1.
///
/// For n = 1 the "sphere" is the two-point set {-1, +1} with counting
/// measure, so the moment is 2 for every alpha; the closed form reproduces
/// this.
pub fn surface_moment(n: usize, alpha: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::IntegralDiverges { reason: "surface moment needs n >= 1".into() });
    }
    if alpha <= -1.0 {
        return Err(Error::IntegralDiverges {
            reason: format!("surface moment needs alpha > -1, got {}", alpha),
        });
    }
    let nf = n as f64;
    Ok(2.0 * std::f64::consts::PI.powf((nf - 1.0) / 2.0)
        * (ln_gamma((alpha + 1.0) / 2.0) - ln_gamma((nf + alpha) / 2.0)).exp())
}

/// int_{R^n} (1 + |x|^2)^{-p} dx, closed form. Defined for n >= 0 with the
/// convention that the R^0 integral is 1; requires p > n/2 for convergence.
pub fn radial_integral(n: usize, p: f64) -> Result<f64> {
    if p <= n as f64 / 2.0 {
        return Err(Error::IntegralDiverges {
            reason: format!("radial integral needs p > n/2 (n = {}, p = {})", n, p),
        });
    }
    if n == 0 {
        return Ok(1.0);
    }
    Ok(sphere_area(n) * half_beta(n as f64 / 2.0, p - n as f64 / 2.0))
}

/// `radial_integral` by adaptive quadrature, via the substitution r = tan(theta):
/// omega_{n-1} int_0^{pi/2} sin^{n-1}(theta) cos^{2p-n-1}(theta) d theta.
///
/// Independent of the Beta closed form; used as its oracle. The integrand may
/// have an integrable singularity at theta = pi/2 (when 2p < n + 1), which the
/// adaptive bisection resolves.
pub fn radial_integral_quad(n: usize, p: f64, rel_tol: f64) -> Result<f64> {
    if p <= n as f64 / 2.0 {
        return Err(Error::IntegralDiverges {
            reason: format!("radial integral needs p > n/2 (n = {}, p = {})", n, p),
        });
    }
    if n == 0 {
        return Ok(1.0);
    }
    let nf = n as f64;
    let g = move |theta: f64| {
        let s = theta.sin();
        let c = theta.cos();
        if c <= 0.0 || s < 0.0 {
            return 0.0;
        }
        s.powf(nf - 1.0) * c.powf(2.0 * p - nf - 1.0)
    };
    // cos^{2p-n-1} is singular at pi/2 when 2p < n + 1 (always integrable
    // since p > n/2). Pure bisection toward that endpoint bottoms out at
    // machine-width panels with ~sqrt(eps) unresolved mass, so the upper half
    // is integrated in the variable u = sqrt(pi/2 - theta), which turns
    // cos^{g} into ~u^{2g+1} and removes the singularity for g >= -1/2.
    let lower = quad::integrate(g, 0.0, 1.0, rel_tol, 0.0)?;
    let umax = (std::f64::consts::FRAC_PI_2 - 1.0).sqrt();
    let upper = quad::integrate(
        move |u: f64| 2.0 * u * g(std::f64::consts::FRAC_PI_2 - u * u),
        0.0,
        umax,
        rel_tol,
        0.0,
    )?;
    Ok(sphere_area(n) * (lower.value + upper.value))
}

/// int_{R^n} |x_1|^alpha (1 + |x|^2)^{-p} dx, closed form.
///
/// Requires alpha > -1 and p > (n + alpha)/2.
pub fn moment_integral(n: usize, alpha: f64, p: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::IntegralDiverges { reason: "moment integral needs n >= 1".into() });
    }
    if alpha <= -1.0 {
        return Err(Error::IntegralDiverges {
            reason: format!("moment integral needs alpha > -1, got {}", alpha),
        });
    }
    if p <= (n as f64 + alpha) / 2.0 {
        return Err(Error::IntegralDiverges {
            reason: format!(
                "moment integral needs p > (n + alpha)/2 (n = {}, alpha = {}, p = {})",
                n, alpha, p
            ),
        });
    }
    let nf = n as f64;
    Ok(surface_moment(n, alpha)? * half_beta((nf + alpha) / 2.0, p - (nf + alpha) / 2.0))
}

/// int_{R^n} f(x_1) (1 + |x|^2)^{-q} dx by exact reduction to one dimension:
/// the other n-1 coordinates integrate to radial(n-1, .) weights, leaving
///
/// ```text
/// radial(n-1, q) ... as a function of the shifted exponent:
/// int_{R^n} f(x_1) (1+|x|^2)^{-q} dx
///     = C(n, q) int_R f(t) (1 + t^2)^{(n-1)/2 - q} dt,
/// C(n, q) = omega_{n-2}-type constant = radial(n-1, q) evaluated at unit scale
/// ```
///
/// Concretely: with z the remaining n-1 coordinates and a = 1 + t^2,
/// int (a + |z|^2)^{-q} dz = a^{(n-1)/2 - q} radial(n-1, q), which gives the
/// formula above with C(n, q) = radial(n-1, q).
///
/// `breaks` lists t-values where f has kinks. Requires q > n/2 + (growth of f)/2;
/// the caller is responsible for decay of f (polynomial growth of degree < 2q - n + 1).
pub fn coordinate_integral<F: Fn(f64) -> f64>(
    n: usize,
    q: f64,
    f: F,
    breaks: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    if n < 1 {
        return Err(Error::IntegralDiverges { reason: "coordinate integral needs n >= 1".into() });
    }
    let c = radial_integral(n - 1, q)?;
    let w = (n as f64 - 1.0) / 2.0 - q;
    let r = quad::integrate_real_line(
        move |t: f64| f(t) * (1.0 + t * t).powf(w),
        breaks,
        rel_tol,
        abs_tol,
    )?;
    Ok(c * r.value)
}

/// `moment_integral` with the 1-D factor evaluated by adaptive quadrature
/// through [`coordinate_integral`]. Checks the alpha-dependent Beta factor
/// against quadrature for every n.
pub fn moment_integral_quad_1d(n: usize, alpha: f64, p: f64, rel_tol: f64) -> Result<f64> {
    if alpha <= -1.0 || p <= (n as f64 + alpha) / 2.0 {
        return Err(Error::IntegralDiverges {
            reason: format!(
                "moment integral needs alpha > -1 and p > (n + alpha)/2 (n = {}, alpha = {}, p = {})",
                n, alpha, p
            ),
        });
    }
    coordinate_integral(n, p, move |t: f64| t.abs().powf(alpha), &[0.0], rel_tol, 0.0)
}

/// Symmetric, geometrically graded panel boundaries -L .. -1, 0, 1 .. L, so
/// that mass concentrated near the origin is sampled before any refinement.
fn graded_box(limit: f64) -> Vec<f64> {
    let mut pts = vec![0.0, 1.0];
    let mut t = 1.0;
    while t < limit {
        t = (t * 10.0).min(limit);
        pts.push(t);
    }
    let mut all: Vec<f64> = pts.iter().map(|x| -x).chain(pts.iter().copied()).collect();
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    all.dedup();
    all
}

/// `moment_integral` by fully nested tensor quadrature, for n <= 3.
///
/// Slow but maximally independent: no Beta function and no dimensional
/// reduction anywhere on this path. The unbounded domain is truncated to a
/// box [-L, L]^n with L chosen from the decay exponent 2p - n - alpha so the
/// discarded tail stays below ~0.2 * rel_tol of the total.
pub fn moment_integral_quad_tensor(n: usize, alpha: f64, p: f64, rel_tol: f64) -> Result<f64> {
    if !(1..=3).contains(&n) {
        return Err(Error::IntegralDiverges {
            reason: format!("tensor quadrature cross-check supports n <= 3, got {}", n),
        });
    }
    if alpha <= -1.0 || p <= (n as f64 + alpha) / 2.0 {
        return Err(Error::IntegralDiverges {
            reason: "tensor quadrature parameters outside convergence region".into(),
        });
    }
    let decay = 2.0 * p - n as f64 - alpha;
    let limit = (0.2 * rel_tol).powf(-1.0 / decay).clamp(1e2, 1e10);
    let pts = graded_box(limit);
    let tol_mid = (rel_tol / 30.0).max(1e-9);
    let tol_inner = (rel_tol / 300.0).max(3e-10);
    let value = match n {
        1 => {
            quad::integrate_with_breaks(
                move |t: f64| t.abs().powf(alpha) * (1.0 + t * t).powf(-p),
                &pts,
                rel_tol,
                0.0,
            )?
            .value
        }
        2 => {
            let inner_pts = pts.clone();
            quad::integrate_with_breaks(
                move |x1: f64| {
                    let a = 1.0 + x1 * x1;
                    let inner = quad::integrate_with_breaks(
                        move |x2: f64| (a + x2 * x2).powf(-p),
                        &inner_pts,
                        tol_mid,
                        0.0,
                    )
                    .map(|r| r.value)
                    .unwrap_or(f64::NAN);
                    x1.abs().powf(alpha) * inner
                },
                &pts,
                rel_tol,
                0.0,
            )?
            .value
        }
        _ => {
            let mid_pts = pts.clone();
            let inner_pts = pts.clone();
            quad::integrate_with_breaks(
                move |x1: f64| {
                    let a1 = 1.0 + x1 * x1;
                    let inner_pts = inner_pts.clone();
                    let middle = quad::integrate_with_breaks(
                        move |x2: f64| {
                            let a2 = a1 + x2 * x2;
                            quad::integrate_with_breaks(
                                move |x3: f64| (a2 + x3 * x3).powf(-p),
                                &inner_pts,
                                tol_inner,
                                0.0,
                            )
                            .map(|r| r.value)
                            .unwrap_or(f64::NAN)
                        },
                        &mid_pts,
                        tol_mid,
                        0.0,
                    )
                    .map(|r| r.value)
                    .unwrap_or(f64::NAN);
                    x1.abs().powf(alpha) * middle
                },
                &pts,
                rel_tol,
                0.0,
            )?
            .value
        }
    };
    if !value.is_finite() {
        return Err(Error::QuadratureNoConverge { error: f64::INFINITY, evals: 0 });
    }
    Ok(value)
}

/// The constant c(n, sigma) = Gamma(n/2 + sigma) / Gamma(n/2 - sigma) in
/// front of the curvature term of the fractional equation.
pub fn c_n_sigma(n: usize, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let nf = n as f64;
    Ok(gamma(nf / 2.0 + sigma) / gamma(nf / 2.0 - sigma))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::BadSigma { sigma });
    }
    Ok(())
}

/// Which printed normalization of the moment constant c1~ to use. The two
/// derivations in circulation disagree on the moment exponent:
/// the header form uses |x_1|^{n-2}, the proof-step form |x_1|^{n-2\sigma}.
/// They coincide at sigma = 1/2. Proof-step is the default; it is the one
/// consistent with the interaction-matrix exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum C1TildeMode {
    PaperHeader,
    #[default]
    ProofStep,
}

/// All constants of the problem at a fixed (n, sigma, c0).
///
/// Scaling in the bubble normalization c0: c2 and c3 carry a factor
/// c0^{2n/(n-2sigma)}; c1, c1~ and c5 are independent of c0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constants {
    pub n: usize,
    pub sigma: f64,
    pub c0: f64,
    pub c1tilde_mode: C1TildeMode,
    /// Gamma(n/2 + sigma) / Gamma(n/2 - sigma).
    pub c_n_sigma: f64,
    /// radial(n, (n + 2 sigma)/2); off-diagonal interaction coefficient.
    pub c1: f64,
    /// Moment constant in the active mode; diagonal interaction coefficient.
    pub c1_tilde: f64,
    /// c1~ in header mode (alpha = n - 2), for reference.
    pub c1_tilde_paper_header: f64,
    /// c1~ in proof-step mode (alpha = n - 2 sigma), for reference.
    pub c1_tilde_proof_step: f64,
    /// c0^{2n/(n-2sigma)} * c1; interaction coefficient of the flow.
    pub c2: f64,
    /// c3 evaluated at the critical flatness beta = n - 2 sigma.
    pub c3_critical: f64,
    /// radial(n, n); gradient-drift coefficient of the flow.
    pub c5: f64,
}

impl Constants {
    /// c3 at flatness exponent beta: c0^{2n/(n-2sigma)} moment(n, beta, n).
    pub fn c3(&self, beta: f64) -> Result<f64> {
        Ok(self.c0_power() * moment_integral(self.n, beta, self.n as f64)?)
    }

    /// c0^{2n/(n-2sigma)}, the bubble-normalization power shared by c2, c3.
    pub fn c0_power(&self) -> f64 {
        let nf = self.n as f64;
        self.c0.powf(2.0 * nf / (nf - 2.0 * self.sigma))
    }
}

/// Builds every constant at (n, sigma) with bubble normalization c0.
pub fn build_constants(n: usize, sigma: f64, c0: f64, mode: C1TildeMode) -> Result<Constants> {
    check_sigma(sigma)?;
    if n < 2 {
        return Err(Error::InvalidProblem { reason: format!("n = {} must be at least 2", n) });
    }
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::InvalidProblem { reason: format!("c0 = {} must be positive", c0) });
    }
    let nf = n as f64;
    let c1 = radial_integral(n, (nf + 2.0 * sigma) / 2.0)?;
    let c1_tilde_paper_header = moment_integral(n, nf - 2.0, nf)?;
    let c1_tilde_proof_step = moment_integral(n, nf - 2.0 * sigma, nf)?;
    let c1_tilde = match mode {
        C1TildeMode::PaperHeader => c1_tilde_paper_header,
        C1TildeMode::ProofStep => c1_tilde_proof_step,
    };
    let c0_power = c0.powf(2.0 * nf / (nf - 2.0 * sigma));
    Ok(Constants {
        n,
        sigma,
        c0,
        c1tilde_mode: mode,
        c_n_sigma: c_n_sigma(n, sigma)?,
        c1,
        c1_tilde,
        c1_tilde_paper_header,
        c1_tilde_proof_step,
        c2: c0_power * c1,
        c3_critical: c0_power * moment_integral(n, nf - 2.0 * sigma, nf)?,
        c5: radial_integral(n, nf)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn sphere_areas_match_hand_values() {
        assert_relative_eq!(sphere_area(1), 2.0, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(2), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(3), 4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(4), 2.0 * PI * PI, max_relative = 1e-14);
    }

    #[test]
    fn radial_closed_forms_match_hand_values() {
        // int_R (1+t^2)^{-1} dt = pi.
        assert_relative_eq!(radial_integral(1, 1.0).unwrap(), PI, max_relative = 1e-14);
        // int_{R^2} (1+|x|^2)^{-3/2} dx = 2 pi.
        assert_relative_eq!(radial_integral(2, 1.5).unwrap(), 2.0 * PI, max_relative = 1e-14);
        // int_{R^3} (1+|x|^2)^{-2} dx = pi^2.
        assert_relative_eq!(radial_integral(3, 2.0).unwrap(), PI * PI, max_relative = 1e-14);
        assert_eq!(radial_integral(0, 1.0).unwrap(), 1.0);
        assert!(radial_integral(2, 1.0).is_err());
    }

    #[test]
    fn moment_closed_forms_match_hand_values() {
        // int_{R^2} |x_1| (1+|x|^2)^{-2} dx = pi.
        assert_relative_eq!(moment_integral(2, 1.0, 2.0).unwrap(), PI, max_relative = 1e-14);
        // int_R t^2 (1+t^2)^{-2} dt = pi/2.
        assert_relative_eq!(moment_integral(1, 2.0, 2.0).unwrap(), PI / 2.0, max_relative = 1e-14);
        // int_{R^3} x_1^2 (1+|x|^2)^{-3} dx = pi^2/4.
        assert_relative_eq!(moment_integral(3, 2.0, 3.0).unwrap(), PI * PI / 4.0, max_relative = 1e-14);
        // alpha = 0 degenerates to the radial integral.
        assert_relative_eq!(
            moment_integral(3, 0.0, 2.5).unwrap(),
            radial_integral(3, 2.5).unwrap(),
            max_relative = 1e-13
        );
        assert!(moment_integral(2, -1.0, 3.0).is_err());
        assert!(moment_integral(2, 2.0, 2.0).is_err());
    }

    #[test]
    fn quadrature_agrees_with_closed_forms() {
        for (n, p) in [(1usize, 1.0), (2, 1.25), (2, 1.5), (3, 2.0), (4, 2.3), (5, 3.1)] {
            let closed = radial_integral(n, p).unwrap();
            let q = radial_integral_quad(n, p, 1e-10).unwrap();
            assert_relative_eq!(closed, q, max_relative = 1e-9);
        }
        for (n, alpha, p) in [(1usize, 0.7, 1.2), (2, 1.5, 2.0), (3, 1.0, 3.0), (5, 2.5, 5.0)] {
            let closed = moment_integral(n, alpha, p).unwrap();
            let q = moment_integral_quad_1d(n, alpha, p, 1e-10).unwrap();
            assert_relative_eq!(closed, q, max_relative = 1e-9);
        }
    }

    #[test]
    fn tensor_quadrature_agrees_for_low_dimension() {
        for (n, alpha, p) in [(1usize, 1.5, 2.0), (2, 1.0, 2.0), (2, 0.5, 2.25)] {
            let closed = moment_integral(n, alpha, p).unwrap();
            let q = moment_integral_quad_tensor(n, alpha, p, 3e-9).unwrap();
            assert_relative_eq!(closed, q, max_relative = 1e-7);
        }
        let closed = moment_integral(3, 1.0, 3.0).unwrap();
        let q = moment_integral_quad_tensor(3, 1.0, 3.0, 1e-6).unwrap();
        assert_relative_eq!(closed, q, max_relative = 1e-5);
        assert!(moment_integral_quad_tensor(4, 1.0, 4.0, 1e-7).is_err());
    }

    #[test]
    fn coordinate_integral_reduces_known_cases() {
        // f == 1 must reproduce the plain radial integral.
        let direct = radial_integral(3, 3.0).unwrap();
        let reduced = coordinate_integral(3, 3.0, |_| 1.0, &[], 1e-10, 0.0).unwrap();
        assert_relative_eq!(direct, reduced, max_relative = 1e-9);
        // f(t) = t is odd: zero.
        let odd = coordinate_integral(2, 2.5, |t| t, &[], 1e-10, 0.0).unwrap();
        assert!(odd.abs() < 1e-10);
    }

    #[test]
    fn c_n_sigma_hand_value() {
        // Gamma(3/2)/Gamma(1/2) = 1/2 at n = 2, sigma = 1/2.
        assert_relative_eq!(c_n_sigma(2, 0.5).unwrap(), 0.5, max_relative = 1e-14);
        assert!(c_n_sigma(2, 0.0).is_err());
        assert!(c_n_sigma(2, 1.0).is_err());
    }

    #[test]
    fn build_constants_reference_point() {
        // n = 2, sigma = 1/2, c0 = 1: c1 = radial(2, 3/2) = 2 pi and both
        // c1~ modes coincide at moment(2, 1, 2) = pi.
        let c = build_constants(2, 0.5, 1.0, C1TildeMode::ProofStep).unwrap();
        assert_relative_eq!(c.c1, 2.0 * PI, max_relative = 1e-13);
        assert_relative_eq!(c.c1_tilde, PI, max_relative = 1e-13);
        assert_relative_eq!(c.c1_tilde_paper_header, c.c1_tilde_proof_step, max_relative = 1e-13);
        assert_relative_eq!(c.c2, c.c1, max_relative = 1e-14);
        assert_relative_eq!(c.c5, radial_integral(2, 2.0).unwrap(), max_relative = 1e-14);
        // c3 at the critical exponent beta = n - 2 sigma = 1.
        assert_relative_eq!(c.c3_critical, c.c3(1.0).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn c1tilde_modes_differ_away_from_half() {
        let c = build_constants(3, 0.25, 1.0, C1TildeMode::PaperHeader).unwrap();
        assert_relative_eq!(c.c1_tilde, c.c1_tilde_paper_header, max_relative = 1e-15);
        assert!((c.c1_tilde_paper_header - c.c1_tilde_proof_step).abs() > 1e-3);
    }

    #[test]
    fn c0_scaling_law() {
        let base = build_constants(3, 0.5, 1.0, C1TildeMode::ProofStep).unwrap();
        let scaled = build_constants(3, 0.5, 2.0, C1TildeMode::ProofStep).unwrap();
        let factor = 2.0f64.powf(2.0 * 3.0 / (3.0 - 1.0));
        assert_relative_eq!(scaled.c2, factor * base.c2, max_relative = 1e-13);
        assert_relative_eq!(scaled.c3_critical, factor * base.c3_critical, max_relative = 1e-13);
        assert_relative_eq!(scaled.c1, base.c1, max_relative = 1e-15);
        assert_relative_eq!(scaled.c1_tilde, base.c1_tilde, max_relative = 1e-15);
        assert_relative_eq!(scaled.c5, base.c5, max_relative = 1e-15);
    }
}
