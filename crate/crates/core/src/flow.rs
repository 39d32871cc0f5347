//! Reduced pseudo-gradient dynamics for sums of interacting bubbles.
//!
//! The state is the finite-dimensional parameter set of u = sum_i alpha_i
//! delta_{a_i, lambda_i}: concentration points a_i on the sphere, scales
//! lambda_i > 1/epsilon, and coefficients alpha_i slaved to the normalization
//! alpha_i = K(a_i)^{-(n-2 sigma)/(4 sigma)}. Velocities are the leading
//! terms of the energy pairings against the scale deformation
//! alpha_i lambda_i d(delta_i)/d(lambda_i) and the translation deformation
//! alpha_i (1/lambda_i) d(delta_i)/d(a_i) of each bubble. All remainder terms
//! are dropped and the energy prefactor J is set to 1, so this is a
//! leading-order qualitative model: signs, blow-up sets and exit events are
//! meaningful, absolute time scales are not.
//!
//! Each bubble is in one of three zones relative to the critical points of K,
//! switched discretely with 10% hysteresis:
//!
//! * far from every critical point: the scale pairing keeps only the mutual
//!   interaction terms, the translation pairing follows -grad K / lambda;
//! * inside a ball of radius `rho_ball` around a critical point: both
//!   pairings use the flatness data (beta, b_k) of that point through
//!   one-dimensional shifted moment integrals in the scaled offset
//!   s_k = lambda_i (a_i - y)_k;
//! * concentrated (lambda-scaled offset below `delta`): the scale pairing
//!   collapses to its closed form proportional to sum_k b_k.
//!
//! lambda updates multiplicatively and a through the exponential map, so
//! lambda > 0 and |a| = 1 hold exactly along the flow. The second-order
//! correction bar-v is not simulated; its a-priori bound is evaluated per
//! step and reported as a diagnostic so the user can judge when the
//! leading-order model is trustworthy.

use std::io::Write;

use crate::constants::{self, Constants};
use crate::critpoints::{CriticalPoint, ScalarField};
use crate::error::{Error, Result};
use crate::geometry::{
    exp_map, geodesic_distance, normal_frame, log_map, SpherePoint, TangentFrame,
};

/// Slaved coefficient range accepted by the state invariant.
const ALPHA_MIN: f64 = 0.1;
const ALPHA_MAX: f64 = 10.0;

/// Scaled offset beyond which the shifted moment integrals switch to their
/// power-law asymptote (abs form) or saturate (sign form).
const SHIFT_CLAMP: f64 = 1e4;

/// Absolute tolerance for the shifted moment integrals, so that the nearly
/// odd cases (value ~ 0 at shift ~ 0) terminate instead of chasing a
/// relative target no quadrature can reach.
const SHIFT_ABS_TOL: f64 = 1e-12;

/// Step acceptance: largest |d log lambda| per step.
const MAX_DLOG_LAMBDA: f64 = 0.1;

/// Step acceptance: largest lambda-scaled point move per step.
const MAX_SCALED_MOVE: f64 = 0.5;

/// Growth factor for the suggested step size after an accepted step.
const DT_GROWTH: f64 = 1.5;

/// Hard ceiling on accepted steps per run; reached only by pathological
/// configurations, reported as a timeout.
const MAX_STEPS: usize = 200_000;

/// Finite-difference step for curvature gradients sampled from a field.
const FIELD_GRAD_STEP: f64 = 1e-5;

/// Parameters of a sum of bubbles: u = sum alpha_i delta_{a_i, lambda_i}.
#[derive(Debug, Clone)]
pub struct ReducedState {
    pub alphas: Vec<f64>,
    pub points: Vec<SpherePoint>,
    pub lambdas: Vec<f64>,
    pub time: f64,
}

impl ReducedState {
    /// Builds a state at time zero. Checks only shape and positivity; the
    /// neighborhood invariants (lambda floor, interaction bound, alpha range)
    /// are checked by [`ReducedState::validate`] against a configuration.
    pub fn new(alphas: Vec<f64>, points: Vec<SpherePoint>, lambdas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidFlowState { reason: "state needs at least one bubble".into() });
        }
        if points.len() != alphas.len() || lambdas.len() != alphas.len() {
            return Err(Error::DimensionMismatch { expected: alphas.len(), got: points.len().max(lambdas.len()) });
        }
        let dim = points[0].dim();
        for p in &points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.dim() });
            }
        }
        for &l in &lambdas {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidFlowState { reason: format!("scale {} must be positive and finite", l) });
            }
        }
        for &a in &alphas {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::InvalidFlowState { reason: format!("coefficient {} must be positive and finite", a) });
            }
        }
        Ok(ReducedState { alphas, points, lambdas, time: 0.0 })
    }

    /// Number of bubbles.
    pub fn p(&self) -> usize {
        self.alphas.len()
    }

    /// Sphere dimension n.
    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Checks the neighborhood invariants: every lambda_i > 1/epsilon, every
    /// pairwise interaction eps_ij < epsilon, every alpha_i in the accepted
    /// range. The first violated invariant is reported.
    pub fn validate(&self, sigma: f64, epsilon: f64) -> Result<()> {
        let floor = 1.0 / epsilon;
        for (i, &l) in self.lambdas.iter().enumerate() {
            if l <= floor {
                return Err(Error::InvalidFlowState {
                    reason: format!("scale lambda_{} = {:.6e} is at or below the floor 1/epsilon = {:.6e}", i, l, floor),
                });
            }
        }
        for (i, &a) in self.alphas.iter().enumerate() {
            if !(ALPHA_MIN..=ALPHA_MAX).contains(&a) {
                return Err(Error::InvalidFlowState {
                    reason: format!("coefficient alpha_{} = {:.6e} left the range [{}, {}]", i, a, ALPHA_MIN, ALPHA_MAX),
                });
            }
        }
        for i in 0..self.p() {
            for j in (i + 1)..self.p() {
                let frame = normal_frame(&self.points[i], 0);
                let e = pairwise_interaction(self, i, j, sigma, &frame)?.eps;
                if e >= epsilon {
                    return Err(Error::InvalidFlowState {
                        reason: format!("interaction eps_{}{} = {:.6e} reached epsilon = {:.6e}", i, j, e, epsilon),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Neighborhood size, zone thresholds and integration controls of a run.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Neighborhood size: lambda floor 1/epsilon and interaction bound.
    pub epsilon: f64,
    /// Scaled-offset threshold separating the two in-ball pairing forms from
    /// the far zone bookkeeping tag.
    pub m1: f64,
    /// Scaled-offset threshold below which a bubble counts as concentrated.
    pub delta: f64,
    /// Geodesic radius of the ball around each critical point.
    pub rho_ball: f64,
    /// Scale at which a bubble counts as blown up.
    pub lambda_cap: f64,
    /// Initial suggested step size.
    pub dt_init: f64,
    /// Smallest accepted step size before the run aborts as stiff.
    pub dt_min: f64,
    /// Time horizon.
    pub t_max: f64,
    /// Relative tolerance for the shifted moment integrals.
    pub quad_rel_tol: f64,
}

impl FlowConfig {
    /// Defaults at dimension n and order sigma.
    ///
    /// epsilon is capped so that every valid state has pairwise T > 20, which
    /// guarantees lambda_i d(eps_ij)/d(lambda_i) <= -0.9 (n-2 sigma)/2 eps_ij
    /// whenever lambda_i >= lambda_j; the scale interactions then contract at
    /// a known definite rate.
    pub fn defaults(n: usize, sigma: f64) -> Self {
        let decay = (n as f64 - 2.0 * sigma) / 2.0;
        FlowConfig {
            epsilon: (0.8 * 20f64.powf(-decay)).min(0.04),
            m1: 10.0,
            delta: 0.5,
            rho_ball: 0.2,
            lambda_cap: 1e8,
            dt_init: 1e-2,
            dt_min: 1e-12,
            t_max: 1e30,
            quad_rel_tol: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("epsilon", self.epsilon),
            ("m1", self.m1),
            ("delta", self.delta),
            ("rho_ball", self.rho_ball),
            ("lambda_cap", self.lambda_cap),
            ("dt_init", self.dt_init),
            ("dt_min", self.dt_min),
            ("t_max", self.t_max),
            ("quad_rel_tol", self.quad_rel_tol),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidProblem { reason: format!("flow parameter {} = {} must be positive and finite", name, v) });
            }
        }
        if self.epsilon >= 1.0 {
            return Err(Error::InvalidProblem { reason: format!("epsilon = {} must be below 1", self.epsilon) });
        }
        if self.dt_min >= self.dt_init {
            return Err(Error::InvalidProblem {
                reason: format!("dt_min = {} must be below dt_init = {}", self.dt_min, self.dt_init),
            });
        }
        Ok(())
    }
}

/// Curvature data driving the flow: the critical points with their flatness
/// expansions, plus either the actual field K or the flat local model
/// K = K(y) + sum_k b_k |v_k|^beta read off the nearest critical point.
pub struct CpData<'a> {
    field: Option<&'a dyn ScalarField>,
    cps: &'a [CriticalPoint],
}

impl<'a> CpData<'a> {
    /// Curvature evaluated from the field itself; `cps` supplies the zone
    /// structure and flatness data.
    pub fn from_field(field: &'a dyn ScalarField, cps: &'a [CriticalPoint]) -> Self {
        CpData { field: Some(field), cps }
    }

    /// Curvature synthesized from the critical point list alone, through the
    /// flatness model of the nearest point.
    pub fn flat_model(cps: &'a [CriticalPoint]) -> Result<Self> {
        if cps.is_empty() {
            return Err(Error::InvalidProblem {
                reason: "the flat curvature model needs at least one critical point".into(),
            });
        }
        Ok(CpData { field: None, cps })
    }

    pub fn cps(&self) -> &[CriticalPoint] {
        self.cps
    }

    /// Nearest critical point by geodesic distance, lowest index on ties.
    pub fn nearest(&self, a: &SpherePoint) -> Result<Option<(usize, f64)>> {
        let mut best: Option<(usize, f64)> = None;
        for (i, cp) in self.cps.iter().enumerate() {
            let d = geodesic_distance(cp.point(), a)?;
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        Ok(best)
    }

    /// K at a point.
    pub fn curvature(&self, a: &SpherePoint) -> Result<f64> {
        match self.field {
            Some(f) => f.value_at(a),
            None => {
                let (idx, _) = self.nearest(a)?.expect("flat model has critical points");
                let cp = &self.cps[idx];
                let v = log_map(cp.frame(), a)?;
                let mut k = cp.value();
                for (bk, vk) in cp.b().iter().zip(&v) {
                    k += bk * vk.abs().powf(cp.beta());
                }
                Ok(k)
            }
        }
    }

    /// Gradient of K in the given tangent frame. Field mode differentiates
    /// the field; flat mode differentiates the nearest-point model along the
    /// critical point's axes carried over to the frame's base point.
    pub fn gradient(&self, frame: &TangentFrame) -> Result<Vec<f64>> {
        match self.field {
            Some(f) => crate::geometry::sphere_gradient(|p| f.value_at(p), frame, FIELD_GRAD_STEP),
            None => {
                let a = frame.base();
                let (idx, _) = self.nearest(a)?.expect("flat model has critical points");
                let cp = &self.cps[idx];
                let v = log_map(cp.frame(), a)?;
                let carried = TangentFrame::orthonormalized(a.clone(), cp.frame().axes().to_vec())?;
                let mut grad = vec![0.0; a.coords().len()];
                for (k, (bk, vk)) in cp.b().iter().zip(&v).enumerate() {
                    let g = cp.beta() * bk * vk.signum() * vk.abs().powf(cp.beta() - 1.0);
                    for (gc, ec) in grad.iter_mut().zip(&carried.axes()[k]) {
                        *gc += g * ec;
                    }
                }
                frame.components(&grad)
            }
        }
    }
}

/// Zone of one bubble relative to the critical points.
#[derive(Debug, Clone, PartialEq)]
pub struct BubbleTag {
    /// Critical point whose ball contains the bubble, if any.
    pub nearest: Option<usize>,
    /// Scaled offset s_k = lambda v_k in the critical point's frame; empty
    /// when no ball contains the bubble.
    pub scaled: Vec<f64>,
    /// lambda times the geodesic distance to the critical point.
    pub scaled_norm: f64,
    /// Scaled offset at most `m1` (bounded-offset bookkeeping zone).
    pub in_l1: bool,
    /// Scaled offset below `delta`: closed-form scale pairing.
    pub concentrated: bool,
}

/// Zones of all bubbles plus a deterministic label such as `c0-n1-f`:
/// per bubble `c<k>` concentrated at critical point k, `n<k>` in its ball,
/// `f` far from all; `+shared` appended when two bubbles sit in the same
/// ball.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTag {
    pub bubbles: Vec<BubbleTag>,
    pub label: String,
}

/// Classifies every bubble. `prev` carries the previous classification;
/// zone boundaries stretch by 10% for a bubble that is already inside, so
/// the discrete switching cannot chatter.
pub fn classify_region(
    state: &ReducedState,
    cp_data: &CpData,
    config: &FlowConfig,
    prev: Option<&RegionTag>,
) -> Result<RegionTag> {
    let mut bubbles = Vec::with_capacity(state.p());
    for i in 0..state.p() {
        let a = &state.points[i];
        let lam = state.lambdas[i];
        let prev_tag = prev.and_then(|t| t.bubbles.get(i));
        let tag = match cp_data.nearest(a)? {
            None => BubbleTag { nearest: None, scaled: vec![], scaled_norm: 0.0, in_l1: false, concentrated: false },
            Some((idx, d)) => {
                let was_inside = prev_tag.map_or(false, |t| t.nearest == Some(idx));
                let ball = if was_inside { 1.1 * config.rho_ball } else { config.rho_ball };
                if d >= ball {
                    BubbleTag { nearest: None, scaled: vec![], scaled_norm: 0.0, in_l1: false, concentrated: false }
                } else {
                    let cp = &cp_data.cps()[idx];
                    let v = log_map(cp.frame(), a)?;
                    let scaled: Vec<f64> = v.iter().map(|vk| lam * vk).collect();
                    let sn = lam * d;
                    let was_conc = was_inside && prev_tag.map_or(false, |t| t.concentrated);
                    let was_l1 = was_inside && prev_tag.map_or(false, |t| t.in_l1);
                    BubbleTag {
                        nearest: Some(idx),
                        scaled,
                        scaled_norm: sn,
                        in_l1: sn <= if was_l1 { 1.1 * config.m1 } else { config.m1 },
                        concentrated: sn < if was_conc { 1.1 * config.delta } else { config.delta },
                    }
                }
            }
        };
        bubbles.push(tag);
    }
    let mut parts = Vec::with_capacity(bubbles.len());
    for t in &bubbles {
        parts.push(match t.nearest {
            Some(k) if t.concentrated => format!("c{}", k),
            Some(k) => format!("n{}", k),
            None => "f".to_string(),
        });
    }
    let mut label = parts.join("-");
    let mut seen = std::collections::BTreeSet::new();
    if bubbles.iter().filter_map(|t| t.nearest).any(|k| !seen.insert(k)) {
        label.push_str("+shared");
    }
    Ok(RegionTag { bubbles, label })
}

/// Interaction eps_ij of two bubbles with its analytic partial derivatives.
#[derive(Debug, Clone)]
pub struct Interaction {
    pub eps: f64,
    /// d eps_ij / d lambda_i.
    pub d_lambda: f64,
    /// d eps_ij / d a_i, components in the frame supplied at a_i.
    pub d_point: Vec<f64>,
}

/// eps_ij = T^{(2 sigma - n)/2} with
/// T = lambda_i/lambda_j + lambda_j/lambda_i + lambda_i lambda_j |a_i - a_j|^2
/// (chordal distance), differentiated by the chain rule:
/// dT/d lambda_i = 1/lambda_j - lambda_j/lambda_i^2 + lambda_j |a_i - a_j|^2,
/// dT/d a_i = 2 lambda_i lambda_j (a_i - a_j) projected on the tangent space.
pub fn pairwise_interaction(
    state: &ReducedState,
    i: usize,
    j: usize,
    sigma: f64,
    frame_i: &TangentFrame,
) -> Result<Interaction> {
    assert_ne!(i, j, "interaction needs two distinct bubbles");
    let (li, lj) = (state.lambdas[i], state.lambdas[j]);
    let (ai, aj) = (&state.points[i], &state.points[j]);
    let csq = ai.chordal_sq(aj);
    let t = li / lj + lj / li + li * lj * csq;
    let expo = (2.0 * sigma - state.dim() as f64) / 2.0;
    let eps = t.powf(expo);
    let pref = expo * t.powf(expo - 1.0);
    let dt_dlam = 1.0 / lj - lj / (li * li) + lj * csq;
    let diff: Vec<f64> = ai.coords().iter().zip(aj.coords()).map(|(x, y)| x - y).collect();
    let comps = frame_i.components(&diff)?;
    let d_point = comps.iter().map(|c| pref * 2.0 * li * lj * c).collect();
    Ok(Interaction { eps, d_lambda: pref * dt_dlam, d_point })
}

/// int_{R^n} sign(x_1 + s) |x_1 + s|^{beta-1} x_1 (1+|x|^2)^{-n} dx by
/// one-dimensional reduction and adaptive quadrature. At s = 0 this equals
/// the plain moment integral with exponent beta. The shift saturates at
/// 1e4 in magnitude; beyond it the value is already deep in its power tail
/// and the saturated value keeps the sign and order of magnitude.
pub fn moment_shift_sign(n: usize, beta: f64, s: f64, rel_tol: f64) -> Result<f64> {
    let s = s.clamp(-SHIFT_CLAMP, SHIFT_CLAMP);
    constants::coordinate_integral(
        n,
        n as f64,
        move |t: f64| {
            let u = t + s;
            u.signum() * u.abs().powf(beta - 1.0) * t
        },
        &[-s],
        rel_tol,
        SHIFT_ABS_TOL,
    )
}

/// int_{R^n} |x_1 + s|^{beta} x_1 (1+|x|^2)^{-(n+1)} dx, as above. Odd in s;
/// vanishes at s = 0. For |s| > 1e4 the expansion
/// |x_1 + s|^beta = |s|^beta (1 + beta x_1/s + ...) gives the asymptote
/// beta sign(s) |s|^{beta-1} int x_1^2 (1+|x|^2)^{-(n+1)} dx, which is used
/// directly: the quadrature would otherwise lose the value to cancellation.
pub fn moment_shift_abs(n: usize, beta: f64, s: f64, rel_tol: f64) -> Result<f64> {
    if s.abs() > SHIFT_CLAMP {
        let second = constants::moment_integral(n, 2.0, n as f64 + 1.0)?;
        return Ok(beta * s.signum() * s.abs().powf(beta - 1.0) * second);
    }
    constants::coordinate_integral(
        n,
        n as f64 + 1.0,
        move |t: f64| (t + s).abs().powf(beta) * t,
        &[-s],
        rel_tol,
        SHIFT_ABS_TOL,
    )
}

/// Leading terms of the pairing of the energy gradient with the scale
/// deformation lambda_i d(delta_i)/d(lambda_i), with J set to 1:
///
/// * every zone: -2 c2 sum_{j != i} alpha_j lambda_i d(eps_ij)/d(lambda_i);
/// * in a ball: plus 2 ((n-2 sigma)/(2n)) beta c0^{2n/(n-2 sigma)}
///   (alpha_i / K(a_i)) lambda_i^{-beta} sum_k b_k M_sign(s_k) with the
///   shifted sign moment M_sign;
/// * concentrated: the same term with M_sign collapsed to its s = 0 value,
///   giving 2 ((n-2 sigma)/(2n)) beta c3 (alpha_i/K(a_i)) (sum_k b_k)
///   lambda_i^{-beta}.
pub fn lambda_velocity(
    state: &ReducedState,
    i: usize,
    tag: &BubbleTag,
    cp_data: &CpData,
    consts: &Constants,
    quad_rel_tol: f64,
) -> Result<f64> {
    let nf = state.dim() as f64;
    let lam = state.lambdas[i];
    let frame = normal_frame(&state.points[i], 0);
    let mut total = 0.0;
    for j in 0..state.p() {
        if j == i {
            continue;
        }
        let inter = pairwise_interaction(state, i, j, consts.sigma, &frame)?;
        total -= consts.c2 * state.alphas[j] * lam * inter.d_lambda;
    }
    if let Some(idx) = tag.nearest {
        let cp = &cp_data.cps()[idx];
        let beta = cp.beta();
        let kv = cp_data.curvature(&state.points[i])?;
        let front = (nf - 2.0 * consts.sigma) / (2.0 * nf) * beta * state.alphas[i]
            / kv
            / lam.powf(beta);
        if tag.concentrated {
            total += front * consts.c3(beta)? * cp.b_sum();
        } else {
            let mut sum = 0.0;
            for (bk, sk) in cp.b().iter().zip(&tag.scaled) {
                sum += bk * moment_shift_sign(state.dim(), beta, *sk, quad_rel_tol)?;
            }
            total += front * consts.c0_power() * sum;
        }
    }
    Ok(2.0 * total)
}

/// Leading term of the pairing of the energy gradient with the translation
/// deformation (1/lambda_i) d(delta_i)/d(a_i), with J set to 1, as
/// components in `frame` (a tangent frame at a_i):
///
/// * far zone: -c5 alpha_i^{(n+2 sigma)/(n-2 sigma)} grad K(a_i) / lambda_i;
/// * in a ball: per axis k of the critical point,
///   -2 (n-2 sigma) c0^{2n/(n-2 sigma)} alpha_i^{(n+2 sigma)/(n-2 sigma)}
///   lambda_i^{-beta} b_k M_abs(s_k) with the shifted absolute moment M_abs.
pub fn point_velocity(
    state: &ReducedState,
    i: usize,
    tag: &BubbleTag,
    cp_data: &CpData,
    consts: &Constants,
    frame: &TangentFrame,
    quad_rel_tol: f64,
) -> Result<Vec<f64>> {
    let nf = state.dim() as f64;
    let lam = state.lambdas[i];
    let apow = state.alphas[i].powf((nf + 2.0 * consts.sigma) / (nf - 2.0 * consts.sigma));
    match tag.nearest {
        Some(idx) => {
            let cp = &cp_data.cps()[idx];
            let beta = cp.beta();
            let scale = -2.0 * (nf - 2.0 * consts.sigma) * consts.c0_power() * apow / lam.powf(beta);
            let mut q = Vec::with_capacity(state.dim());
            for (bk, sk) in cp.b().iter().zip(&tag.scaled) {
                q.push(scale * bk * moment_shift_abs(state.dim(), beta, *sk, quad_rel_tol)?);
            }
            let carried =
                TangentFrame::orthonormalized(state.points[i].clone(), cp.frame().axes().to_vec())?;
            frame.components(&carried.ambient(&q)?)
        }
        None => {
            let grad = cp_data.gradient(frame)?;
            Ok(grad.iter().map(|g| -consts.c5 * apow * g / lam).collect())
        }
    }
}

/// Descent components of one state: v_i = alpha_i times the scale pairing,
/// w_i = alpha_i times the translation pairing in `frames[i]`. The flow is
/// d(log lambda_i)/dt = -v_i, da_i/dt = -w_i/lambda_i, which makes the
/// pairing with the full movement direction -sum_i (v_i^2 + |w_i|^2) <= 0.
struct Velocities {
    v: Vec<f64>,
    w: Vec<Vec<f64>>,
    frames: Vec<TangentFrame>,
    pairing: f64,
}

fn velocities(
    state: &ReducedState,
    tag: &RegionTag,
    cp_data: &CpData,
    consts: &Constants,
    quad_rel_tol: f64,
) -> Result<Velocities> {
    let p = state.p();
    let mut v = Vec::with_capacity(p);
    let mut w = Vec::with_capacity(p);
    let mut frames = Vec::with_capacity(p);
    let mut pairing = 0.0;
    for i in 0..p {
        let frame = normal_frame(&state.points[i], 0);
        let vi = state.alphas[i]
            * lambda_velocity(state, i, &tag.bubbles[i], cp_data, consts, quad_rel_tol)?;
        let qi = point_velocity(state, i, &tag.bubbles[i], cp_data, consts, &frame, quad_rel_tol)?;
        let wi: Vec<f64> = qi.iter().map(|q| state.alphas[i] * q).collect();
        pairing -= vi * vi + wi.iter().map(|x| x * x).sum::<f64>();
        v.push(vi);
        w.push(wi);
        frames.push(frame);
    }
    Ok(Velocities { v, w, frames, pairing })
}

/// One explicit update: log lambda_i -= v_i h, a_i moved by -h w_i/lambda_i
/// through the exponential map, alpha_i re-slaved to the curvature at the
/// new point.
fn advance(
    state: &ReducedState,
    frames: &[TangentFrame],
    v: &[f64],
    w: &[Vec<f64>],
    h: f64,
    cp_data: &CpData,
    consts: &Constants,
) -> Result<ReducedState> {
    let nf = state.dim() as f64;
    let mut alphas = Vec::with_capacity(state.p());
    let mut points = Vec::with_capacity(state.p());
    let mut lambdas = Vec::with_capacity(state.p());
    for i in 0..state.p() {
        let lam = state.lambdas[i] * (-v[i] * h).exp();
        let chart: Vec<f64> = w[i].iter().map(|wk| -h / state.lambdas[i] * wk).collect();
        let a = exp_map(&frames[i], &chart)?;
        let kv = cp_data.curvature(&a)?;
        if !(kv > 0.0) || !kv.is_finite() {
            return Err(Error::InvalidFlowState {
                reason: format!("curvature {} is not positive at an evolved point", kv),
            });
        }
        alphas.push(kv.powf(-(nf - 2.0 * consts.sigma) / (4.0 * consts.sigma)));
        points.push(a);
        lambdas.push(lam);
    }
    Ok(ReducedState { alphas, points, lambdas, time: state.time + h })
}

/// Re-expresses per-bubble tangent vectors in other frames at nearby base
/// points by going through ambient space and projecting.
fn carry_components(
    w: &[Vec<f64>],
    from: &[TangentFrame],
    to: &[TangentFrame],
) -> Result<Vec<Vec<f64>>> {
    w.iter()
        .zip(from)
        .zip(to)
        .map(|((wi, f), t)| t.components(&f.ambient(wi)?))
        .collect()
}

/// Diagnostics of one accepted step, all evaluated at the step's start state.
#[derive(Debug, Clone)]
pub struct StepInfo {
    /// Accepted step size.
    pub dt: f64,
    /// Pairing of the energy gradient with the movement direction; this is
    /// -sum_i (v_i^2 + |w_i|^2) and must be <= 0.
    pub pairing: f64,
    /// -pairing divided by sum_i lambda_i^{-beta_i} + sum_{i != j} eps_ij;
    /// the descent claim is that this rate stays above a positive constant
    /// along a run.
    pub descent_rate: f64,
    /// Minimum over ordered pairs with lambda_i >= lambda_j of
    /// (-lambda_i d(eps_ij)/d(lambda_i)) / eps_ij; the contraction claim is
    /// that this stays above 0.9 (n-2 sigma)/2. None when p = 1.
    pub pp_ratio: Option<f64>,
    /// A-priori bound (with unit constant) on the size of the neglected
    /// second-order correction; large values mean the leading-order model is
    /// not trustworthy at this state.
    pub vbar_bound: f64,
    /// Zone label the velocities were computed in.
    pub label: String,
}

fn interaction_diagnostics(
    state: &ReducedState,
    tag: &RegionTag,
    consts: &Constants,
    pairing: f64,
) -> Result<(f64, Option<f64>, f64)> {
    let nf = state.dim() as f64;
    let mut eps_sum = 0.0;
    let mut pp: Option<f64> = None;
    let mut pair_bound = 0.0;
    for i in 0..state.p() {
        let frame = normal_frame(&state.points[i], 0);
        for j in 0..state.p() {
            if j == i {
                continue;
            }
            let inter = pairwise_interaction(state, i, j, consts.sigma, &frame)?;
            eps_sum += inter.eps;
            if state.lambdas[i] >= state.lambdas[j] {
                let ratio = -state.lambdas[i] * inter.d_lambda / inter.eps;
                pp = Some(pp.map_or(ratio, |r: f64| r.min(ratio)));
            }
            if nf >= 3.0 {
                pair_bound += inter.eps.powf((nf + 2.0 * consts.sigma) / (2.0 * (nf - 2.0 * consts.sigma)))
                    * inter.eps.recip().ln().max(1.0).powf((nf + 2.0 * consts.sigma) / (2.0 * nf));
            } else {
                pair_bound += inter.eps * inter.eps.recip().ln().max(1.0).powf((nf - 2.0 * consts.sigma) / nf);
            }
        }
    }
    let mut lam_sum = 0.0;
    for i in 0..state.p() {
        let beta = tag.bubbles[i]
            .nearest
            .map_or(nf - 2.0 * consts.sigma, |_| nf - 2.0 * consts.sigma);
        lam_sum += state.lambdas[i].powf(-beta);
    }
    let denom = lam_sum + eps_sum;
    let rate = if denom > 0.0 { -pairing / denom } else { 0.0 };
    Ok((rate, pp, pair_bound))
}

/// Bound on the neglected second-order correction, with unit constant:
/// sum_i [lambda_i^{-n/2} + lambda_i^{-beta_i} + |grad K(a_i)|/lambda_i
/// + (log lambda_i)^{(n+2 sigma)/(2n)} lambda_i^{-(n+2 sigma)/2}] plus the
/// logarithm-weighted interaction sum handed in by the caller.
fn vbar_bound(
    state: &ReducedState,
    tag: &RegionTag,
    cp_data: &CpData,
    consts: &Constants,
    pair_bound: f64,
) -> Result<f64> {
    let nf = state.dim() as f64;
    let mut total = pair_bound;
    for i in 0..state.p() {
        let lam = state.lambdas[i];
        let beta = tag.bubbles[i]
            .nearest
            .map(|idx| cp_data.cps()[idx].beta())
            .unwrap_or(nf - 2.0 * consts.sigma);
        let frame = normal_frame(&state.points[i], 0);
        let grad = cp_data.gradient(&frame)?;
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        total += lam.powf(-nf / 2.0)
            + lam.powf(-beta)
            + gnorm / lam
            + lam.ln().max(1.0).powf((nf + 2.0 * consts.sigma) / (2.0 * nf))
                * lam.powf(-(nf + 2.0 * consts.sigma) / 2.0);
    }
    Ok(total)
}

/// One adaptive explicit midpoint step.
///
/// The suggested step is halved until the update stays within the acceptance
/// bounds (|d log lambda_i| <= 0.1, lambda-scaled point moves <= 0.5 and no
/// chart overflow); below `dt_min` the step reports stiffness. Returns the
/// new state, its zone classification (to be passed back in as `prev`), and
/// the step diagnostics.
pub fn step(
    state: &ReducedState,
    cp_data: &CpData,
    consts: &Constants,
    config: &FlowConfig,
    prev: Option<&RegionTag>,
    dt_suggest: f64,
) -> Result<(ReducedState, RegionTag, StepInfo)> {
    config.validate()?;
    state.validate(consts.sigma, config.epsilon)?;
    let tag0 = classify_region(state, cp_data, config, prev)?;
    let vel0 = velocities(state, &tag0, cp_data, consts, config.quad_rel_tol)?;
    let mut dt = dt_suggest;
    let next = loop {
        if dt < config.dt_min {
            return Err(Error::StiffStep { dt_min: config.dt_min, t: state.time });
        }
        let half = match advance(state, &vel0.frames, &vel0.v, &vel0.w, dt / 2.0, cp_data, consts) {
            Ok(s) => s,
            Err(Error::ChartOverflow { .. }) => {
                dt /= 2.0;
                continue;
            }
            Err(e) => return Err(e),
        };
        let tag_half = classify_region(&half, cp_data, config, Some(&tag0))?;
        let vel_half = velocities(&half, &tag_half, cp_data, consts, config.quad_rel_tol)?;
        let w_mid = carry_components(&vel_half.w, &vel_half.frames, &vel0.frames)?;
        let within = vel_half
            .v
            .iter()
            .zip(&w_mid)
            .all(|(vi, wi)| {
                let move_sq: f64 = wi.iter().map(|x| x * x).sum();
                (vi * dt).abs() <= MAX_DLOG_LAMBDA && move_sq.sqrt() * dt <= MAX_SCALED_MOVE
            });
        if !within {
            dt /= 2.0;
            continue;
        }
        match advance(state, &vel0.frames, &vel_half.v, &w_mid, dt, cp_data, consts) {
            Ok(s) => break s,
            Err(Error::ChartOverflow { .. }) => {
                dt /= 2.0;
                continue;
            }
            Err(e) => return Err(e),
        }
    };
    let (descent_rate, pp_ratio, pair_bound) =
        interaction_diagnostics(state, &tag0, consts, vel0.pairing)?;
    let vbar = vbar_bound(state, &tag0, cp_data, consts, pair_bound)?;
    let info = StepInfo {
        dt,
        pairing: vel0.pairing,
        descent_rate,
        pp_ratio,
        vbar_bound: vbar,
        label: tag0.label.clone(),
    };
    let tag_next = classify_region(&next, cp_data, config, Some(&tag0))?;
    Ok((next, tag_next, info))
}

/// Terminal state of a run.
#[derive(Debug, Clone)]
pub enum FlowOutcome {
    /// Some scale reached `lambda_cap`. `tuple` holds, per bubble, the
    /// critical point whose ball contains it (None for a bubble that blew up
    /// away from every critical point); `weights` the limit coefficients
    /// K^{-(n-2 sigma)/2} evaluated at that critical point (or at the
    /// bubble's position when there is none).
    BlowUp { tuple: Vec<Option<usize>>, weights: Vec<f64>, state: ReducedState },
    /// A neighborhood invariant failed: the flow left V(p, epsilon).
    Exit { reason: String, state: ReducedState },
    /// The horizon `t_max` (or the internal step ceiling) was reached first.
    Timeout { state: ReducedState },
}

/// Aggregate diagnostics of a run.
#[derive(Debug, Clone)]
pub struct RunStats {
    pub steps: usize,
    /// Largest (least negative) pairing over accepted steps.
    pub max_pairing: f64,
    /// Smallest descent rate over accepted steps.
    pub min_descent_rate: f64,
    /// Smallest interaction contraction ratio over accepted steps.
    pub min_pp_ratio: Option<f64>,
    /// Largest second-order correction bound over accepted steps.
    pub max_vbar_bound: f64,
}

impl RunStats {
    fn new() -> Self {
        RunStats {
            steps: 0,
            max_pairing: f64::NEG_INFINITY,
            min_descent_rate: f64::INFINITY,
            min_pp_ratio: None,
            max_vbar_bound: 0.0,
        }
    }

    fn absorb(&mut self, info: &StepInfo) {
        self.steps += 1;
        self.max_pairing = self.max_pairing.max(info.pairing);
        self.min_descent_rate = self.min_descent_rate.min(info.descent_rate);
        if let Some(r) = info.pp_ratio {
            self.min_pp_ratio = Some(self.min_pp_ratio.map_or(r, |m| m.min(r)));
        }
        self.max_vbar_bound = self.max_vbar_bound.max(info.vbar_bound);
    }
}

fn exit_reason(state: &ReducedState, sigma: f64, epsilon: f64) -> Option<String> {
    match state.validate(sigma, epsilon) {
        Ok(()) => None,
        Err(Error::InvalidFlowState { reason }) => Some(reason),
        Err(e) => Some(e.to_string()),
    }
}

fn blow_up(state: ReducedState, cp_data: &CpData, consts: &Constants, config: &FlowConfig) -> Result<FlowOutcome> {
    let nf = state.dim() as f64;
    let expo = -(nf - 2.0 * consts.sigma) / 2.0;
    let mut tuple = Vec::with_capacity(state.p());
    let mut weights = Vec::with_capacity(state.p());
    for a in &state.points {
        let near = cp_data.nearest(a)?.filter(|(_, d)| *d < config.rho_ball);
        let kv = match near {
            Some((idx, _)) => cp_data.cps()[idx].value(),
            None => cp_data.curvature(a)?,
        };
        tuple.push(near.map(|(idx, _)| idx));
        weights.push(kv.powf(expo));
    }
    Ok(FlowOutcome::BlowUp { tuple, weights, state })
}

fn write_csv_header(out: &mut dyn Write, p: usize, ambient: usize) -> Result<()> {
    let mut cols = vec![
        "time".to_string(),
        "dt".to_string(),
        "label".to_string(),
        "pairing".to_string(),
        "vbar_bound".to_string(),
    ];
    for i in 0..p {
        cols.push(format!("lambda_{}", i));
        for c in 0..ambient {
            cols.push(format!("a_{}_{}", i, c));
        }
    }
    writeln!(out, "{}", cols.join(",")).map_err(Error::from)
}

fn write_csv_row(out: &mut dyn Write, state: &ReducedState, dt: f64, label: &str, pairing: f64, vbar: f64) -> Result<()> {
    let mut cols = vec![
        format!("{:.10e}", state.time),
        format!("{:.10e}", dt),
        label.to_string(),
        format!("{:.10e}", pairing),
        format!("{:.10e}", vbar),
    ];
    for i in 0..state.p() {
        cols.push(format!("{:.10e}", state.lambdas[i]));
        for c in state.points[i].coords() {
            cols.push(format!("{:.10e}", c));
        }
    }
    writeln!(out, "{}", cols.join(",")).map_err(Error::from)
}

/// Integrates from `initial` until blow-up, neighborhood exit or the time
/// horizon, collecting run diagnostics. `log` receives the trajectory as CSV
/// when supplied.
pub fn run_with_stats(
    initial: ReducedState,
    cp_data: &CpData,
    consts: &Constants,
    config: &FlowConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<(FlowOutcome, RunStats)> {
    config.validate()?;
    initial.validate(consts.sigma, config.epsilon)?;
    if let Some(out) = log.as_deref_mut() {
        write_csv_header(out, initial.p(), initial.points[0].coords().len())?;
        write_csv_row(out, &initial, 0.0, "start", 0.0, 0.0)?;
    }
    let mut stats = RunStats::new();
    let mut state = initial;
    let mut prev: Option<RegionTag> = None;
    let mut dt = config.dt_init;
    loop {
        if state.lambdas.iter().any(|l| *l >= config.lambda_cap) {
            return Ok((blow_up(state, cp_data, consts, config)?, stats));
        }
        if let Some(reason) = exit_reason(&state, consts.sigma, config.epsilon) {
            return Ok((FlowOutcome::Exit { reason, state }, stats));
        }
        if state.time >= config.t_max || stats.steps >= MAX_STEPS {
            return Ok((FlowOutcome::Timeout { state }, stats));
        }
        let (next, tag, info) = step(&state, cp_data, consts, config, prev.as_ref(), dt)?;
        stats.absorb(&info);
        if let Some(out) = log.as_deref_mut() {
            write_csv_row(out, &next, info.dt, &info.label, info.pairing, info.vbar_bound)?;
        }
        dt = (info.dt * DT_GROWTH).min(1e30);
        prev = Some(tag);
        state = next;
    }
}

/// [`run_with_stats`] without the diagnostics.
pub fn run_to_infinity(
    initial: ReducedState,
    cp_data: &CpData,
    consts: &Constants,
    config: &FlowConfig,
    log: Option<&mut dyn Write>,
) -> Result<FlowOutcome> {
    run_with_stats(initial, cp_data, consts, config, log).map(|(outcome, _)| outcome)
}
