//! Interaction matrix of a tuple of beta-critical points.
//!
//! For points y_1..y_p whose flatness exponent sits on the critical value
//! n - 2*sigma, the symmetric matrix
//!
//!   m_ii = (n-2s)/n * c1~ * (-sum_k b_k(y_i)) / K(y_i)^{n/(2s)}
//!   m_ij = 2^{(n-2s)/2} * c1 * (-G(y_i, y_j)) / [K(y_i) K(y_j)]^{(n-2s)/(4s)}
//!
//! couples their blow-up rates. Its least eigenvalue rho decides whether the
//! tuple supports a blowing-up solution; the certificate assumes rho != 0 for
//! every tuple, and [`check_a1`] reports the margin of that assumption.

use serde::Serialize;

use crate::constants::Constants;
use crate::critpoints::CriticalPoint;
use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, SpherePoint};
use crate::linalg;

/// Pairwise kernel (1 - cos d(x, y))^{-(n-2*sigma)/2}, singular at x = y.
pub fn green_kernel(n: usize, sigma: f64, x: &SpherePoint, y: &SpherePoint) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::BadSigma { sigma });
    }
    // 1 - cos d equals half the squared chordal distance.
    let half_chord = x.chordal_sq(y) / 2.0;
    if half_chord < 1e-18 {
        return Err(Error::CoincidentPoints { i: 0, j: 1, dist: geodesic_distance(x, y)? });
    }
    Ok(half_chord.powf(-(n as f64 - 2.0 * sigma) / 2.0))
}

/// The p x p interaction matrix with its least eigenvalue.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    p: usize,
    entries: Vec<f64>,
    rho: f64,
    rho_margin: f64,
}

impl InteractionMatrix {
    pub fn p(&self) -> usize {
        self.p
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.p + j]
    }

    /// Least eigenvalue.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// |rho| relative to the Frobenius norm of the matrix.
    pub fn rho_margin(&self) -> f64 {
        self.rho_margin
    }
}

/// Minimum pairwise geodesic distance for a valid tuple.
const MIN_SEPARATION: f64 = 1e-6;

/// Build the interaction matrix for a tuple of beta-critical points.
///
/// `beta_tol` is the relative tolerance against n - 2*sigma used to accept a
/// point as beta-critical (0.0 demands exact equality).
pub fn build_matrix(
    points: &[&CriticalPoint],
    consts: &Constants,
    beta_tol: f64,
) -> Result<InteractionMatrix> {
    let p = points.len();
    if p == 0 {
        return Err(Error::InvalidProblem { reason: "interaction matrix of an empty tuple".into() });
    }
    let nf = consts.n as f64;
    let ns = nf - 2.0 * consts.sigma;
    for (i, cp) in points.iter().enumerate() {
        if cp.b().len() != consts.n {
            return Err(Error::DimensionMismatch { expected: consts.n, got: cp.b().len() });
        }
        if (cp.beta() - ns).abs() > beta_tol * ns {
            return Err(Error::WrongStratum { index: i, beta: cp.beta() });
        }
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let d = geodesic_distance(points[i].point(), points[j].point())?;
            if d <= MIN_SEPARATION {
                return Err(Error::CoincidentPoints { i, j, dist: d });
            }
        }
    }

    let mut entries = vec![0.0; p * p];
    for i in 0..p {
        entries[i * p + i] = (ns / nf) * consts.c1_tilde * (-points[i].b_sum())
            / points[i].value().powf(nf / (2.0 * consts.sigma));
    }
    let off_scale = 2f64.powf(ns / 2.0) * consts.c1;
    for i in 0..p {
        for j in (i + 1)..p {
            let g = green_kernel(consts.n, consts.sigma, points[i].point(), points[j].point())?;
            let m = off_scale * (-g)
                / (points[i].value() * points[j].value()).powf(ns / (4.0 * consts.sigma));
            entries[i * p + j] = m;
            entries[j * p + i] = m;
        }
    }

    let eigenvalues = linalg::sym_eigenvalues(&entries, p)?;
    let rho = eigenvalues[0];
    let rho_margin = rho.abs() / linalg::frobenius_norm(&entries);
    Ok(InteractionMatrix { p, entries, rho, rho_margin })
}

/// Sign classification of a least eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenClass {
    Positive,
    Negative,
    /// |rho| within tolerance of zero relative to the matrix norm; the
    /// certificate is unreliable for this tuple.
    Degenerate,
}

/// One tuple's eigenvalue data in an [`A1Report`].
#[derive(Debug, Clone, Serialize)]
pub struct TupleEigen {
    /// Indices into the beta-critical point list, ascending.
    pub members: Vec<usize>,
    /// Row-major matrix entries.
    pub entries: Vec<f64>,
    pub rho: f64,
    pub rho_margin: f64,
    pub class: EigenClass,
}

/// Eigenvalue survey over every tuple of beta-critical points.
#[derive(Debug, Clone, Serialize)]
pub struct A1Report {
    pub tuples: Vec<TupleEigen>,
    pub positive: usize,
    pub negative: usize,
    pub degenerate: usize,
    /// True when no tuple is degenerate (vacuously true with no tuples).
    pub holds: bool,
}

pub(crate) fn binomial(m: usize, s: usize) -> u128 {
    let mut r: u128 = 1;
    for k in 0..s {
        r = r.saturating_mul((m - k) as u128) / (k + 1) as u128;
    }
    r
}

/// Calls `f` on every s-combination of 0..m in lexicographic order.
pub(crate) fn for_each_combination(
    m: usize,
    s: usize,
    mut f: impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if s > m {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        f(&idx)?;
        let mut k = s;
        loop {
            if k == 0 {
                return Ok(());
            }
            k -= 1;
            if idx[k] != k + m - s {
                break;
            }
        }
        if idx[k] == k + m - s {
            return Ok(());
        }
        idx[k] += 1;
        for j in (k + 1)..s {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

const SUBSET_BUDGET: u128 = 1 << 20;

/// Compute rho for every tuple of size 1..=max_p and classify each against
/// the degeneracy tolerance. The assumption under test holds iff no tuple is
/// degenerate.
///
/// Refuses to enumerate more than 2^20 tuples unless `force` is set.
pub fn check_a1(
    points: &[CriticalPoint],
    consts: &Constants,
    beta_tol: f64,
    max_p: usize,
    degeneracy_rel_tol: f64,
    force: bool,
) -> Result<A1Report> {
    let m = points.len();
    let cap = max_p.min(m);
    let total: u128 = (1..=cap).map(|s| binomial(m, s)).sum();
    if !force && total > SUBSET_BUDGET {
        return Err(Error::CensusTooLarge { subsets: total.min(u64::MAX as u128) as u64 });
    }

    let mut tuples = Vec::new();
    for s in 1..=cap {
        for_each_combination(m, s, |combo| {
            let refs: Vec<&CriticalPoint> = combo.iter().map(|&i| &points[i]).collect();
            let matrix = build_matrix(&refs, consts, beta_tol)?;
            let class = if matrix.rho_margin() <= degeneracy_rel_tol {
                EigenClass::Degenerate
            } else if matrix.rho() > 0.0 {
                EigenClass::Positive
            } else {
                EigenClass::Negative
            };
            tuples.push(TupleEigen {
                members: combo.to_vec(),
                entries: matrix.entries().to_vec(),
                rho: matrix.rho(),
                rho_margin: matrix.rho_margin(),
                class,
            });
            Ok(())
        })?;
    }
    let positive = tuples.iter().filter(|t| t.class == EigenClass::Positive).count();
    let negative = tuples.iter().filter(|t| t.class == EigenClass::Negative).count();
    let degenerate = tuples.iter().filter(|t| t.class == EigenClass::Degenerate).count();
    let holds = degenerate == 0;
    Ok(A1Report { tuples, positive, negative, degenerate, holds })
}
