//! Points, tangent frames, and geodesic charts on the unit sphere S^n.
//!
//! The sphere is embedded in R^{n+1}; a point carries its n+1 ambient
//! coordinates, and a tangent frame at a point carries n orthonormal ambient
//! vectors orthogonal to it. Geodesic normal coordinates at a base point y are
//! realized by [`exp_map`] / [`log_map`]: the chart covers the sphere minus
//! the antipode of y.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the unit-norm invariant of [`SpherePoint`].
const UNIT_TOL: f64 = 1e-12;
/// Tolerance for the orthonormality invariant of [`TangentFrame`].
const FRAME_TOL: f64 = 1e-10;

/// A point on S^n, stored as a unit vector in R^{n+1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    /// Wraps ambient coordinates as a sphere point.
    ///
    /// Requires at least 3 coordinates (so the sphere is S^n with n >= 2),
    /// all finite, with |x| within 1e-12 of 1.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 3 {
            return Err(Error::DimensionTooSmall { dim: coords.len() });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NotUnit { norm: f64::NAN });
        }
        let norm = norm(&coords);
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnit { norm });
        }
        Ok(SpherePoint { coords })
    }

    /// Normalizes arbitrary nonzero coordinates onto the sphere.
    pub fn normalized(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 3 {
            return Err(Error::DimensionTooSmall { dim: coords.len() });
        }
        let n = norm(&coords);
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::NotUnit { norm: n });
        }
        let coords = coords.into_iter().map(|c| c / n).collect();
        Ok(SpherePoint { coords })
    }

    /// The sphere dimension n (one less than the ambient dimension).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    /// Ambient coordinates.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Ambient inner product with another point.
    pub fn dot(&self, other: &SpherePoint) -> f64 {
        dot(&self.coords, &other.coords)
    }

    /// Squared chordal (ambient Euclidean) distance |a - b|^2.
    pub fn chordal_sq(&self, other: &SpherePoint) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Geodesic distance d(a, b) = arccos(<a, b>) in [0, pi].
///
/// The inner product is clamped into [-1, 1] before the arccos so that
/// rounding at nearly identical or nearly antipodal points cannot produce NaN.
pub fn geodesic_distance(a: &SpherePoint, b: &SpherePoint) -> Result<f64> {
    if a.coords.len() != b.coords.len() {
        return Err(Error::DimensionMismatch {
            expected: a.coords.len(),
            got: b.coords.len(),
        });
    }
    Ok(a.dot(b).clamp(-1.0, 1.0).acos())
}

/// An orthonormal tangent frame at a base point: n ambient vectors, each unit,
/// pairwise orthogonal, and orthogonal to the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentFrame {
    base: SpherePoint,
    axes: Vec<Vec<f64>>,
}

impl TangentFrame {
    /// Builds a frame from explicit axes, checking orthonormality to 1e-10.
    pub fn new(base: SpherePoint, axes: Vec<Vec<f64>>) -> Result<Self> {
        let n = base.dim();
        if axes.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: axes.len() });
        }
        let mut defect: f64 = 0.0;
        for (i, ei) in axes.iter().enumerate() {
            if ei.len() != n + 1 {
                return Err(Error::DimensionMismatch { expected: n + 1, got: ei.len() });
            }
            defect = defect.max((norm(ei) - 1.0).abs());
            defect = defect.max(dot(ei, base.coords()).abs());
            for ej in axes.iter().take(i) {
                defect = defect.max(dot(ei, ej).abs());
            }
        }
        if defect > FRAME_TOL {
            return Err(Error::FrameNotOrthonormal { defect });
        }
        Ok(TangentFrame { base, axes })
    }

    /// Builds a frame from possibly imperfect axes by Gram-Schmidt against the
    /// base point and the previously accepted axes.
    ///
    /// Intended for user-supplied frames that are orthonormal only to a few
    /// digits; fails if some axis is (numerically) in the span of the others.
    pub fn orthonormalized(base: SpherePoint, axes: Vec<Vec<f64>>) -> Result<Self> {
        let n = base.dim();
        if axes.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: axes.len() });
        }
        let mut clean: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (k, raw) in axes.into_iter().enumerate() {
            if raw.len() != n + 1 {
                return Err(Error::DimensionMismatch { expected: n + 1, got: raw.len() });
            }
            let mut v = raw;
            let c = dot(&v, base.coords());
            axpy(&mut v, -c, base.coords());
            for e in &clean {
                let c = dot(&v, e);
                axpy(&mut v, -c, e);
            }
            let nv = norm(&v);
            if nv < 1e-6 {
                return Err(Error::InvalidCriticalPoint {
                    reason: format!("frame axis {} is degenerate after projection", k + 1),
                });
            }
            v.iter_mut().for_each(|x| *x /= nv);
            clean.push(v);
        }
        TangentFrame::new(base, clean)
    }

    pub fn base(&self) -> &SpherePoint {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Ambient vector sum_k v_k e_k for chart coordinates v.
    pub fn ambient(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        let mut w = vec![0.0; self.base.coords().len()];
        for (vk, e) in v.iter().zip(&self.axes) {
            axpy(&mut w, *vk, e);
        }
        Ok(w)
    }

    /// Chart components <w, e_k> of an ambient vector.
    pub fn components(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.base.coords().len() {
            return Err(Error::DimensionMismatch {
                expected: self.base.coords().len(),
                got: w.len(),
            });
        }
        Ok(self.axes.iter().map(|e| dot(e, w)).collect())
    }
}

/// Deterministic orthonormal frame at `y`, seeded basis completion.
///
/// Candidate vectors are drawn from a ChaCha8 stream keyed by `seed` and
/// orthonormalized by Gram-Schmidt; candidates whose projection is nearly
/// degenerate are discarded and redrawn, so the construction always succeeds.
/// The same `(y, seed)` yields bitwise-identical frames.
pub fn normal_frame(y: &SpherePoint, seed: u64) -> TangentFrame {
    let n = y.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(n);
    while axes.len() < n {
        let mut v: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = dot(&v, y.coords());
        axpy(&mut v, -c, y.coords());
        for e in &axes {
            let c = dot(&v, e);
            axpy(&mut v, -c, e);
        }
        let nv = norm(&v);
        if nv > 1e-3 {
            v.iter_mut().for_each(|x| *x /= nv);
            axes.push(v);
        }
    }
    TangentFrame::new(y.clone(), axes).expect("Gram-Schmidt output is orthonormal")
}

/// Geodesic exponential map: chart coordinates v at the frame's base point to
/// the sphere point cos(|v|) y + sin(|v|) w/|w| with w = sum v_k e_k.
///
/// Errors with [`Error::ChartOverflow`] when |v| >= pi (the chart boundary).
pub fn exp_map(frame: &TangentFrame, v: &[f64]) -> Result<SpherePoint> {
    let theta = norm_checked(frame, v)?;
    if theta >= std::f64::consts::PI {
        return Err(Error::ChartOverflow { norm: theta });
    }
    let y = frame.base().coords();
    if theta < 1e-300 {
        return Ok(frame.base().clone());
    }
    let w = frame.ambient(v)?;
    let (s, c) = theta.sin_cos();
    let coords: Vec<f64> = y
        .iter()
        .zip(&w)
        .map(|(yi, wi)| c * yi + s * wi / theta)
        .collect();
    // Renormalize to keep the unit invariant against rounding drift.
    SpherePoint::normalized(coords)
}

fn norm_checked(frame: &TangentFrame, v: &[f64]) -> Result<f64> {
    if v.len() != frame.dim() {
        return Err(Error::DimensionMismatch { expected: frame.dim(), got: v.len() });
    }
    Ok(norm(v))
}

/// Inverse of [`exp_map`]: geodesic normal coordinates of `p` in `frame`.
///
/// Undefined at the antipode of the base point ([`Error::AntipodalPoint`]).
pub fn log_map(frame: &TangentFrame, p: &SpherePoint) -> Result<Vec<f64>> {
    let theta = geodesic_distance(frame.base(), p)?;
    if theta < 1e-14 {
        return Ok(vec![0.0; frame.dim()]);
    }
    if theta > std::f64::consts::PI - 1e-9 {
        return Err(Error::AntipodalPoint);
    }
    let scale = theta / theta.sin();
    Ok(frame
        .axes()
        .iter()
        .map(|e| scale * dot(e, p.coords()))
        .collect())
}

/// Central-difference gradient of a scalar field in geodesic normal
/// coordinates: component k is (f(exp(h e_k)) - f(exp(-h e_k))) / (2h).
///
/// The step must lie in [1e-8, 1e-2].
pub fn sphere_gradient<F>(f: F, frame: &TangentFrame, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&SpherePoint) -> Result<f64>,
{
    if !(1e-8..=1e-2).contains(&h) {
        return Err(Error::BadStepSize { h, lo: 1e-8, hi: 1e-2 });
    }
    let n = frame.dim();
    let mut g = vec![0.0; n];
    let mut v = vec![0.0; n];
    for k in 0..n {
        v[k] = h;
        let fp = f(&exp_map(frame, &v)?)?;
        v[k] = -h;
        let fm = f(&exp_map(frame, &v)?)?;
        v[k] = 0.0;
        g[k] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// `count` quasi-uniform points on S^n.
///
/// For n = 2 this is the spherical Fibonacci lattice. For n >= 3 the points
/// come from the Kronecker low-discrepancy sequence in [0,1)^{n+1} pushed
/// through the inverse normal CDF and normalized, which distributes uniformly
/// on the sphere while keeping low discrepancy. Deterministic.
pub fn quasi_uniform_points(n: usize, count: usize) -> Vec<SpherePoint> {
    assert!(n >= 2, "sphere dimension must be at least 2");
    if n == 2 {
        let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
        return (0..count)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
                SpherePoint::new(vec![r * phi.cos(), r * phi.sin(), z])
                    .expect("lattice point is unit")
            })
            .collect();
    }
    use statrs::distribution::ContinuousCDF;
    let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    let d = n + 1;
    // gamma_d: the unique real root > 1 of x^{d+1} = x + 1.
    let mut gamma = 1.5_f64;
    for _ in 0..64 {
        gamma = (1.0 + gamma).powf(1.0 / (d as f64 + 1.0));
    }
    let alphas: Vec<f64> = (1..=d).map(|j| gamma.powi(-(j as i32)).fract()).collect();
    (0..count)
        .map(|i| {
            let coords: Vec<f64> = alphas
                .iter()
                .map(|a| {
                    let u = (0.5 + a * (i as f64 + 1.0)).fract().clamp(1e-12, 1.0 - 1e-12);
                    normal.inverse_cdf(u)
                })
                .collect();
            SpherePoint::normalized(coords).expect("gaussian vector is nonzero")
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += c * x
pub(crate) fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn e(i: usize, d: usize) -> SpherePoint {
        let mut c = vec![0.0; d];
        c[i] = 1.0;
        SpherePoint::new(c).unwrap()
    }

    #[test]
    fn rejects_non_unit_and_tiny_dimension() {
        assert!(SpherePoint::new(vec![1.0, 0.0]).is_err());
        assert!(SpherePoint::new(vec![1.0, 1.0, 0.0]).is_err());
        assert!(SpherePoint::new(vec![1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn orthogonal_axes_are_quarter_turn_apart() {
        let a = e(0, 3);
        let b = e(1, 3);
        assert_relative_eq!(geodesic_distance(&a, &b).unwrap(), FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn distance_clamps_rounding_at_coincident_points() {
        let a = SpherePoint::normalized(vec![1.0, 1.0, 1.0]).unwrap();
        let b = a.clone();
        assert_eq!(geodesic_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn antipodal_distance_is_pi() {
        let a = e(2, 3);
        let b = SpherePoint::new(vec![0.0, 0.0, -1.0]).unwrap();
        assert_relative_eq!(geodesic_distance(&a, &b).unwrap(), PI, epsilon = 1e-15);
    }

    #[test]
    fn exp_map_moves_along_great_circle() {
        // Base e3, axis e1: exp(t e1) = (sin t, 0, cos t).
        let frame = TangentFrame::new(
            e(2, 3),
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        )
        .unwrap();
        let p = exp_map(&frame, &[0.7, 0.0]).unwrap();
        assert_relative_eq!(p.coords()[0], 0.7_f64.sin(), epsilon = 1e-14);
        assert_relative_eq!(p.coords()[2], 0.7_f64.cos(), epsilon = 1e-14);
        assert!(exp_map(&frame, &[PI, 0.0]).is_err());
    }

    #[test]
    fn log_map_inverts_exp_map() {
        let y = SpherePoint::normalized(vec![0.3, -0.4, 0.5, 0.2]).unwrap();
        let frame = normal_frame(&y, 7);
        let v = [0.4, -1.1, 0.25];
        let p = exp_map(&frame, &v).unwrap();
        let w = log_map(&frame, &p).unwrap();
        for (a, b) in v.iter().zip(&w) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_frame_is_deterministic_and_orthonormal() {
        let y = SpherePoint::normalized(vec![1.0, 2.0, -2.0]).unwrap();
        let f1 = normal_frame(&y, 42);
        let f2 = normal_frame(&y, 42);
        assert_eq!(f1, f2);
        let f3 = normal_frame(&y, 43);
        assert_ne!(f1, f3);
        for e in f1.axes() {
            assert_relative_eq!(norm(e), 1.0, epsilon = 1e-14);
            assert!(dot(e, y.coords()).abs() < 1e-14);
        }
    }

    #[test]
    fn sphere_gradient_of_linear_height() {
        // f(x) = x3 at base e1: gradient in the chart of (e2, e3) is (0, 1).
        let frame = TangentFrame::new(
            e(0, 3),
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        let g = sphere_gradient(|p| Ok(p.coords()[2]), &frame, 1e-5).unwrap();
        assert_relative_eq!(g[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(g[1], 1.0, epsilon = 1e-9);
        assert!(sphere_gradient(|p| Ok(p.coords()[2]), &frame, 0.5).is_err());
    }

    #[test]
    fn sphere_gradient_halving_step_quarters_error() {
        // Central differences: error O(h^2), so halving h should shrink the
        // error by nearly 4; require at least 3.5 on a smooth field.
        let y = SpherePoint::normalized(vec![0.2, 0.3, 0.9]).unwrap();
        let frame = normal_frame(&y, 1);
        let f = |p: &SpherePoint| {
            let c = p.coords();
            Ok(c[0].exp() * c[1].sin() + c[2])
        };
        let exact = {
            // Reference from a very small step (roundoff still negligible).
            sphere_gradient(f, &frame, 1e-6).unwrap()
        };
        let err = |h: f64| -> f64 {
            sphere_gradient(f, &frame, h)
                .unwrap()
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(1e-3);
        let e2 = err(5e-4);
        assert!(e1 / e2 >= 3.5, "convergence ratio {} below 3.5", e1 / e2);
    }

    #[test]
    fn quasi_uniform_points_cover_the_sphere() {
        for n in [2usize, 3, 4] {
            let pts = quasi_uniform_points(n, 400);
            assert_eq!(pts.len(), 400);
            // Every ambient orthant should be visited.
            let mut seen_pos = vec![false; n + 1];
            let mut seen_neg = vec![false; n + 1];
            for p in &pts {
                for (k, c) in p.coords().iter().enumerate() {
                    if *c > 0.3 {
                        seen_pos[k] = true;
                    }
                    if *c < -0.3 {
                        seen_neg[k] = true;
                    }
                }
            }
            assert!(seen_pos.iter().all(|&b| b), "n = {}", n);
            assert!(seen_neg.iter().all(|&b| b), "n = {}", n);
        }
    }
}
