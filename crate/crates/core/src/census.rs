//! Census of blow-up configurations and the existence certificate.
//!
//! Critical points split into two ground sets: the beta-critical stratum
//! (flatness exponent equal to n - 2*sigma) and the off-critical part of the
//! positive set (-sum b_k > 0). Tuples drawn from these sets are the
//! candidate blow-up configurations; each carries an index at infinity
//!
//!   index(tuple) = p - 1 + sum_j (n - itilde(y_j))
//!
//! and contributes (-1)^index to an alternating sum S. The certificate
//! reports S and the verdict S != 1, which forces an honest solution to
//! exist.
//!
//! Sums run over unordered subsets: the index and the least eigenvalue are
//! permutation invariant, so ordered counting would only multiply each
//! contribution by p!. A diagnostic ordered mode does exactly that.

use serde::Serialize;

use crate::constants::Constants;
use crate::critpoints::{Classification, CriticalPoint};
use crate::error::{Error, Result};
use crate::interaction::{binomial, build_matrix, for_each_combination};

/// Which ground set a tuple was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Subset of the beta-critical stratum with positive least eigenvalue.
    BetaCritical,
    /// Subset of the positive set away from the beta-critical stratum.
    SubCritical,
    /// Synthesized concatenation of one tuple from each family; its sign is
    /// the negated product, matching the subtracted cross term.
    Cross,
}

/// Which existence criterion applies, decided by where the flatness
/// exponents sit relative to n - 2*sigma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Every beta in (1, n - 2*sigma]: full two-family criterion with the
    /// cross term.
    BetaAtMostCritical,
    /// Every beta in [n - 2*sigma, n): single points of the off-critical
    /// positive set plus beta-critical tuples.
    BetaAtLeastCritical,
    /// Mixed exponents on both sides; no printed criterion covers this.
    NotApplicable,
}

/// One admissible tuple with its index data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TupleRecord {
    /// Indices into the classified point list, ascending.
    pub members: Vec<usize>,
    pub p: usize,
    pub family: Family,
    pub index_inf: i64,
    /// (-1)^index_inf.
    pub sign: i64,
    /// Least interaction eigenvalue; beta-critical tuples only.
    pub rho: Option<f64>,
}

/// Output of [`enumerate_families`].
#[derive(Debug, Clone, Serialize)]
pub struct FamilyEnumeration {
    pub records: Vec<TupleRecord>,
    /// Beta-critical tuples whose eigenvalue sits within tolerance of zero.
    /// They are excluded from the census and invalidate the certificate.
    pub degenerate_tuples: Vec<Vec<usize>>,
}

/// The evaluated existence criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub regime: Regime,
    /// Sum over beta-critical tuples.
    #[serde(rename = "A")]
    pub a: i64,
    /// Sum over the second family (sub-critical tuples, or single points in
    /// the at-least-critical regime).
    #[serde(rename = "B")]
    pub b: i64,
    /// Subtracted cross-pair sum (at-most-critical regime only).
    pub cross: i64,
    /// Criterion total.
    #[serde(rename = "S")]
    pub s: i64,
    /// S != 1 certifies existence; None when no criterion applies.
    pub exists: Option<bool>,
    pub caveats: Vec<String>,
}

/// Decide the applicable criterion from the flatness exponents of every
/// classified point. Exponents within `beta_tol` (relative) of n - 2*sigma
/// count as critical and are compatible with both regimes; when both apply
/// the two criteria coincide and the at-most-critical form is reported.
pub fn determine_regime(
    classified: &[(CriticalPoint, Classification)],
    n: usize,
    sigma: f64,
    beta_tol: f64,
) -> Regime {
    let bc = n as f64 - 2.0 * sigma;
    let critical = |beta: f64| (beta - bc).abs() <= beta_tol * bc;
    let at_most = classified.iter().all(|(cp, _)| critical(cp.beta()) || cp.beta() < bc);
    let at_least = classified.iter().all(|(cp, _)| critical(cp.beta()) || cp.beta() > bc);
    if at_most {
        Regime::BetaAtMostCritical
    } else if at_least {
        Regime::BetaAtLeastCritical
    } else {
        Regime::NotApplicable
    }
}

const SUBSET_BUDGET: u128 = 1 << 20;

fn index_at_infinity(n: usize, p: usize, itildes: &[usize]) -> i64 {
    p as i64 - 1 + itildes.iter().map(|&it| (n - it) as i64).sum::<i64>()
}

fn sign_of_index(index: i64) -> i64 {
    if index % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Enumerate every admissible tuple of size 1..=max_p from both ground sets.
///
/// Beta-critical subsets are kept only when their least interaction
/// eigenvalue is strictly positive; eigenvalues within `degeneracy_rel_tol`
/// of zero (relative to the matrix norm) are reported separately as
/// degenerate. Refuses to enumerate more than 2^20 subsets unless `force`.
pub fn enumerate_families(
    classified: &[(CriticalPoint, Classification)],
    consts: &Constants,
    beta_tol: f64,
    degeneracy_rel_tol: f64,
    max_p: usize,
    force: bool,
) -> Result<FamilyEnumeration> {
    let bc_idx: Vec<usize> = classified
        .iter()
        .enumerate()
        .filter(|(_, (_, cl))| cl.in_beta_critical)
        .map(|(i, _)| i)
        .collect();
    let sub_idx: Vec<usize> = classified
        .iter()
        .enumerate()
        .filter(|(_, (_, cl))| cl.in_k_plus && !cl.in_beta_critical)
        .map(|(i, _)| i)
        .collect();

    let count = |k: usize| -> u128 {
        (1..=max_p.min(k)).map(|s| binomial(k, s)).sum()
    };
    let total = count(bc_idx.len()) + count(sub_idx.len());
    if !force && total > SUBSET_BUDGET {
        return Err(Error::CensusTooLarge { subsets: total.min(u64::MAX as u128) as u64 });
    }

    let n = consts.n;
    let mut records = Vec::new();
    let mut degenerate_tuples = Vec::new();

    for s in 1..=max_p.min(bc_idx.len()) {
        for_each_combination(bc_idx.len(), s, |combo| {
            let members: Vec<usize> = combo.iter().map(|&i| bc_idx[i]).collect();
            let refs: Vec<&CriticalPoint> =
                members.iter().map(|&i| &classified[i].0).collect();
            let matrix = build_matrix(&refs, consts, beta_tol)?;
            if matrix.rho_margin() <= degeneracy_rel_tol {
                degenerate_tuples.push(members);
            } else if matrix.rho() > 0.0 {
                let itildes: Vec<usize> =
                    members.iter().map(|&i| classified[i].1.itilde).collect();
                let index_inf = index_at_infinity(n, s, &itildes);
                records.push(TupleRecord {
                    members,
                    p: s,
                    family: Family::BetaCritical,
                    index_inf,
                    sign: sign_of_index(index_inf),
                    rho: Some(matrix.rho()),
                });
            }
            Ok(())
        })?;
    }
    for s in 1..=max_p.min(sub_idx.len()) {
        for_each_combination(sub_idx.len(), s, |combo| {
            let members: Vec<usize> = combo.iter().map(|&i| sub_idx[i]).collect();
            let itildes: Vec<usize> =
                members.iter().map(|&i| classified[i].1.itilde).collect();
            let index_inf = index_at_infinity(n, s, &itildes);
            records.push(TupleRecord {
                members,
                p: s,
                family: Family::SubCritical,
                index_inf,
                sign: sign_of_index(index_inf),
                rho: None,
            });
            Ok(())
        })?;
    }
    Ok(FamilyEnumeration { records, degenerate_tuples })
}

fn factorial(p: usize) -> Result<i128> {
    if p > 33 {
        return Err(Error::CensusOverflow);
    }
    Ok((1..=p as i128).product())
}

fn weight(rec: &TupleRecord, ordered: bool) -> Result<i128> {
    if ordered {
        factorial(rec.p)
    } else {
        Ok(1)
    }
}

fn to_i64(x: i128) -> Result<i64> {
    i64::try_from(x).map_err(|_| Error::CensusOverflow)
}

/// Evaluate the existence criterion over the enumerated records.
///
/// In the at-most-critical regime the cross term is computed as an explicit
/// double sum over family pairs; it factorizes as A*B exactly, and the total
/// obeys S = 1 - (1 - A)(1 - B). Both identities are asserted. In the
/// at-least-critical regime only single sub-critical points enter next to
/// the beta-critical tuples. `ordered` multiplies each p-subset by p!.
pub fn evaluate_certificate(
    records: &[TupleRecord],
    regime: Regime,
    ordered: bool,
) -> Result<Certificate> {
    if regime == Regime::NotApplicable {
        return Ok(Certificate {
            regime,
            a: 0,
            b: 0,
            cross: 0,
            s: 0,
            exists: None,
            caveats: vec![
                "flatness exponents fall on both sides of n - 2*sigma; no printed criterion applies"
                    .to_string(),
            ],
        });
    }
    let beta_critical: Vec<&TupleRecord> =
        records.iter().filter(|r| r.family == Family::BetaCritical).collect();
    let mut a: i128 = 0;
    for rec in &beta_critical {
        a += weight(rec, ordered)? * rec.sign as i128;
    }

    let (b, cross): (i128, i128) = match regime {
        Regime::BetaAtMostCritical => {
            let sub: Vec<&TupleRecord> =
                records.iter().filter(|r| r.family == Family::SubCritical).collect();
            let mut b: i128 = 0;
            for rec in &sub {
                b += weight(rec, ordered)? * rec.sign as i128;
            }
            let mut cross: i128 = 0;
            for ra in &beta_critical {
                for rb in &sub {
                    cross += weight(ra, ordered)?
                        * weight(rb, ordered)?
                        * (ra.sign * rb.sign) as i128;
                }
            }
            assert_eq!(cross, a * b, "cross sum must factorize");
            (b, cross)
        }
        Regime::BetaAtLeastCritical => {
            let mut b: i128 = 0;
            for rec in records.iter().filter(|r| r.family == Family::SubCritical && r.p == 1) {
                b += rec.sign as i128;
            }
            (b, 0)
        }
        Regime::NotApplicable => unreachable!(),
    };

    let s = a + b - cross;
    if regime == Regime::BetaAtMostCritical {
        assert_eq!(s, 1 - (1 - a) * (1 - b), "total must match the factorized form");
    }
    Ok(Certificate {
        regime,
        a: to_i64(a)?,
        b: to_i64(b)?,
        cross: to_i64(cross)?,
        s: to_i64(s)?,
        exists: Some(s != 1),
        caveats: Vec::new(),
    })
}

/// Closed form for the complete sub-critical sum: 1 - prod_y (1 - s_y) with
/// s_y = (-1)^{n - itilde(y)}. Valid when every subset of the ground set is
/// enumerated (unordered, no max_p truncation).
pub fn subcritical_closed_form(single_signs: &[i64]) -> i64 {
    let mut prod: i64 = 1;
    for &s in single_signs {
        prod *= 1 - s;
    }
    1 - prod
}

/// Synthesized cross records for every (beta-critical, sub-critical) pair.
///
/// The concatenated tuple has p = p1 + p2 and index index1 + index2 + 1, so
/// its sign is minus the product of the pair's signs, which is exactly the
/// subtracted cross contribution.
pub fn cross_records(records: &[TupleRecord]) -> Vec<TupleRecord> {
    let mut out = Vec::new();
    for ra in records.iter().filter(|r| r.family == Family::BetaCritical) {
        for rb in records.iter().filter(|r| r.family == Family::SubCritical) {
            let mut members = ra.members.clone();
            members.extend_from_slice(&rb.members);
            members.sort_unstable();
            let index_inf = ra.index_inf + rb.index_inf + 1;
            out.push(TupleRecord {
                members,
                p: ra.p + rb.p,
                family: Family::Cross,
                index_inf,
                sign: sign_of_index(index_inf),
                rho: None,
            });
        }
    }
    out
}

/// Running Euler-characteristic trace over the records that enter the
/// active criterion, in a deterministic order realizing the "distinct
/// critical values" picture: each configuration crosses one at a time and
/// changes the characteristic by its sign. The final value equals S.
///
/// Unordered counting only.
pub fn euler_trace(records: &[TupleRecord], regime: Regime) -> Vec<i64> {
    let mut active: Vec<TupleRecord> = match regime {
        Regime::NotApplicable => return Vec::new(),
        Regime::BetaAtMostCritical => {
            let mut v: Vec<TupleRecord> = records
                .iter()
                .filter(|r| r.family != Family::Cross)
                .cloned()
                .collect();
            v.extend(cross_records(records));
            v
        }
        Regime::BetaAtLeastCritical => records
            .iter()
            .filter(|r| {
                r.family == Family::BetaCritical || (r.family == Family::SubCritical && r.p == 1)
            })
            .cloned()
            .collect(),
    };
    active.sort_by(|x, y| {
        (x.p, x.index_inf, &x.members).cmp(&(y.p, y.index_inf, &y.members))
    });
    let mut chi = 0i64;
    active
        .iter()
        .map(|r| {
            chi += r.sign;
            chi
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{build_constants, C1TildeMode};
    use crate::critpoints::classify;
    use crate::geometry::{normal_frame, SpherePoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn consts_n3() -> Constants {
        build_constants(3, 0.5, 1.0, C1TildeMode::ProofStep).unwrap()
    }

    /// Well-separated points on S^3 for synthetic configurations.
    fn sep_points(count: usize) -> Vec<SpherePoint> {
        crate::geometry::quasi_uniform_points(3, count.max(4))
            .into_iter()
            .take(count)
            .collect()
    }

    fn classified_point(
        coords: &SpherePoint,
        beta: f64,
        b: Vec<f64>,
        sigma: f64,
    ) -> (CriticalPoint, Classification) {
        let cp = CriticalPoint::new(normal_frame(coords, 1), 1.0, beta, b).unwrap();
        let cl = classify(&cp, sigma, 0.0);
        (cp, cl)
    }

    #[test]
    fn single_subcritical_record_hand_index() {
        // n = 3, itilde = 3: index = 0 + (3 - 3) = 0, sign +1.
        let consts = consts_n3();
        let pts = sep_points(1);
        let classified =
            vec![classified_point(&pts[0], 1.5, vec![-1.0, -1.0, -1.0], consts.sigma)];
        let fam = enumerate_families(&classified, &consts, 0.0, 1e-9, 1, false).unwrap();
        assert_eq!(fam.records.len(), 1);
        let rec = &fam.records[0];
        assert_eq!(rec.family, Family::SubCritical);
        assert_eq!(rec.index_inf, 0);
        assert_eq!(rec.sign, 1);
    }

    #[test]
    fn two_subcritical_points_three_records() {
        // Two points with n - itilde = 1 each: singleton indices 1, pair
        // index 3, all signs -1.
        let consts = consts_n3();
        let pts = sep_points(2);
        let b = vec![-1.0, -2.0, 0.5]; // itilde = 2, sum < 0
        let classified: Vec<_> = pts
            .iter()
            .map(|p| classified_point(p, 1.5, b.clone(), consts.sigma))
            .collect();
        let fam = enumerate_families(&classified, &consts, 0.0, 1e-9, 2, false).unwrap();
        assert_eq!(fam.records.len(), 3);
        let singles: Vec<_> = fam.records.iter().filter(|r| r.p == 1).collect();
        assert_eq!(singles.len(), 2);
        for rec in &singles {
            assert_eq!(rec.index_inf, 1);
            assert_eq!(rec.sign, -1);
        }
        let pair = fam.records.iter().find(|r| r.p == 2).unwrap();
        assert_eq!(pair.index_inf, 3);
        assert_eq!(pair.sign, -1);

        // B matches the closed form 1 - (1 - (-1))^2 = -3.
        let cert =
            evaluate_certificate(&fam.records, Regime::BetaAtMostCritical, false).unwrap();
        assert_eq!(cert.b, -3);
        assert_eq!(cert.b, subcritical_closed_form(&[-1, -1]));
        assert_eq!(cert.a, 0);
        assert_eq!(cert.s, -3);
        assert_eq!(cert.exists, Some(true));
    }

    #[test]
    fn negative_pair_eigenvalue_keeps_singletons_only() {
        // b = (-1,-1,-1) at K = 1 on orthogonal points: singleton rho > 0
        // but the pair has a < g, hence rho < 0 and only two records.
        let consts = consts_n3();
        let e1 = SpherePoint::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let e2 = SpherePoint::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let b = vec![-1.0, -1.0, -1.0];
        let classified = vec![
            classified_point(&e1, 2.0, b.clone(), consts.sigma),
            classified_point(&e2, 2.0, b, consts.sigma),
        ];
        let fam = enumerate_families(&classified, &consts, 0.0, 1e-9, 2, false).unwrap();
        assert_eq!(fam.records.len(), 2);
        assert!(fam.records.iter().all(|r| r.family == Family::BetaCritical && r.p == 1));
        assert!(fam.degenerate_tuples.is_empty());
        // index = 0 + (3 - 3) = 0 for each singleton; A = 2.
        let cert =
            evaluate_certificate(&fam.records, Regime::BetaAtMostCritical, false).unwrap();
        assert_eq!(cert.a, 2);
        assert_eq!(cert.s, 2);
    }

    #[test]
    fn degenerate_pair_is_reported_and_excluded() {
        let consts = consts_n3();
        let e1 = SpherePoint::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let e2 = SpherePoint::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let b = vec![-4.0, -4.0, -4.0];
        let classified = vec![
            classified_point(&e1, 2.0, b.clone(), consts.sigma),
            classified_point(&e2, 2.0, b, consts.sigma),
        ];
        let fam = enumerate_families(&classified, &consts, 0.0, 1e-9, 2, false).unwrap();
        assert_eq!(fam.degenerate_tuples, vec![vec![0, 1]]);
        assert_eq!(fam.records.len(), 2);
    }

    #[test]
    fn certificate_hand_arithmetic() {
        let rec = |family, p: usize, index: i64| TupleRecord {
            members: (0..p).collect(),
            p,
            family,
            index_inf: index,
            sign: sign_of_index(index),
            rho: None,
        };
        // A = -1, B = 0.
        let records = vec![rec(Family::BetaCritical, 1, 1)];
        let cert = evaluate_certificate(&records, Regime::BetaAtMostCritical, false).unwrap();
        assert_eq!((cert.a, cert.b, cert.s), (-1, 0, -1));
        assert_eq!(cert.exists, Some(true));

        // A = 1 forces S = 1 whatever B is.
        let records = vec![
            rec(Family::BetaCritical, 1, 0),
            rec(Family::SubCritical, 1, 1),
            rec(Family::SubCritical, 1, 3),
        ];
        let cert = evaluate_certificate(&records, Regime::BetaAtMostCritical, false).unwrap();
        assert_eq!(cert.a, 1);
        assert_eq!(cert.s, 1);
        assert_eq!(cert.exists, Some(false));
    }

    #[test]
    fn ordered_mode_multiplies_by_factorials() {
        let rec = |p: usize, index: i64| TupleRecord {
            members: (0..p).collect(),
            p,
            family: Family::SubCritical,
            index_inf: index,
            sign: sign_of_index(index),
            rho: None,
        };
        // Two singles of sign -1 and the pair of sign -1: unordered B = -3,
        // ordered B = -1 - 1 - 2! = -4.
        let records = vec![rec(1, 1), rec(1, 1), rec(2, 3)];
        let unordered =
            evaluate_certificate(&records, Regime::BetaAtMostCritical, false).unwrap();
        assert_eq!(unordered.b, -3);
        let ordered = evaluate_certificate(&records, Regime::BetaAtMostCritical, true).unwrap();
        assert_eq!(ordered.b, -4);
        assert_eq!(ordered.s, -4);
    }

    #[test]
    fn ordered_mode_overflow_guard() {
        let rec = TupleRecord {
            members: (0..25).collect(),
            p: 25,
            family: Family::BetaCritical,
            index_inf: 2,
            sign: 1,
            rho: Some(1.0),
        };
        let err = evaluate_certificate(&[rec], Regime::BetaAtMostCritical, true).unwrap_err();
        assert!(matches!(err, Error::CensusOverflow));
    }

    #[test]
    fn not_applicable_regime() {
        let cert = evaluate_certificate(&[], Regime::NotApplicable, false).unwrap();
        assert_eq!(cert.exists, None);
        assert!(!cert.caveats.is_empty());
    }

    #[test]
    fn regime_determination() {
        let consts = consts_n3();
        let pts = sep_points(2);
        let below = classified_point(&pts[0], 1.5, vec![-1.0, -1.0, -1.0], consts.sigma);
        let at = classified_point(&pts[1], 2.0, vec![-1.0, -1.0, -1.0], consts.sigma);
        let above = classified_point(&pts[1], 2.5, vec![-1.0, -1.0, -1.0], consts.sigma);

        let all = vec![below.clone(), at.clone()];
        assert_eq!(determine_regime(&all, 3, 0.5, 1e-3), Regime::BetaAtMostCritical);
        let all = vec![at.clone(), above.clone()];
        assert_eq!(determine_regime(&all, 3, 0.5, 1e-3), Regime::BetaAtLeastCritical);
        let all = vec![below, above];
        assert_eq!(determine_regime(&all, 3, 0.5, 1e-3), Regime::NotApplicable);
        let all = vec![at];
        assert_eq!(determine_regime(&all, 3, 0.5, 1e-3), Regime::BetaAtMostCritical);
        assert_eq!(determine_regime(&[], 3, 0.5, 1e-3), Regime::BetaAtMostCritical);
    }

    #[test]
    fn census_budget_guard() {
        let consts = consts_n3();
        let pts = sep_points(21);
        let classified: Vec<_> = pts
            .iter()
            .map(|p| classified_point(p, 1.5, vec![-1.0, -2.0, 0.5], consts.sigma))
            .collect();
        let err = enumerate_families(&classified, &consts, 0.0, 1e-9, 21, false).unwrap_err();
        assert!(matches!(err, Error::CensusTooLarge { .. }));
    }

    #[test]
    fn input_order_invariance() {
        let consts = consts_n3();
        let pts = sep_points(4);
        let bs = [
            vec![-1.0, -1.0, -1.0],
            vec![-1.0, -2.0, 0.5],
            vec![1.0, -2.0, -0.5],
            vec![-0.3, -0.4, -0.5],
        ];
        let betas = [2.0, 1.5, 1.5, 2.0];
        let classified: Vec<_> = (0..4)
            .map(|i| classified_point(&pts[i], betas[i], bs[i].clone(), consts.sigma))
            .collect();
        let fam = enumerate_families(&classified, &consts, 0.0, 1e-9, 4, false).unwrap();
        let cert =
            evaluate_certificate(&fam.records, Regime::BetaAtMostCritical, false).unwrap();

        let perm = [3usize, 1, 0, 2];
        let permuted: Vec<_> = perm.iter().map(|&i| classified[i].clone()).collect();
        let fam_p = enumerate_families(&permuted, &consts, 0.0, 1e-9, 4, false).unwrap();
        let cert_p =
            evaluate_certificate(&fam_p.records, Regime::BetaAtMostCritical, false).unwrap();
        assert_eq!((cert.a, cert.b, cert.s), (cert_p.a, cert_p.b, cert_p.s));
    }

    fn random_records(rng: &mut ChaCha8Rng) -> Vec<TupleRecord> {
        let n = 3usize;
        let k_bc = rng.gen_range(0..4usize);
        let k_sub = rng.gen_range(0..4usize);
        let mut records = Vec::new();
        // Synthetic complete families over disjoint index ranges, with
        // random itilde values; every beta-critical subset admitted.
        let itilde_bc: Vec<usize> = (0..k_bc).map(|_| rng.gen_range(0..=n)).collect();
        let itilde_sub: Vec<usize> = (0..k_sub).map(|_| rng.gen_range(0..=n)).collect();
        for s in 1..=k_bc {
            for_each_combination(k_bc, s, |combo| {
                let itildes: Vec<usize> = combo.iter().map(|&i| itilde_bc[i]).collect();
                let index_inf = index_at_infinity(n, s, &itildes);
                records.push(TupleRecord {
                    members: combo.to_vec(),
                    p: s,
                    family: Family::BetaCritical,
                    index_inf,
                    sign: sign_of_index(index_inf),
                    rho: Some(1.0),
                });
                Ok(())
            })
            .unwrap();
        }
        for s in 1..=k_sub {
            for_each_combination(k_sub, s, |combo| {
                let members: Vec<usize> = combo.iter().map(|&i| k_bc + i).collect();
                let itildes: Vec<usize> = combo.iter().map(|&i| itilde_sub[i]).collect();
                let index_inf = index_at_infinity(n, s, &itildes);
                records.push(TupleRecord {
                    members,
                    p: s,
                    family: Family::SubCritical,
                    index_inf,
                    sign: sign_of_index(index_inf),
                    rho: None,
                });
                Ok(())
            })
            .unwrap();
        }
        records
    }

    #[test]
    fn euler_trace_matches_certificate_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let records = random_records(&mut rng);
            for regime in [Regime::BetaAtMostCritical, Regime::BetaAtLeastCritical] {
                let cert = evaluate_certificate(&records, regime, false).unwrap();
                let trace = euler_trace(&records, regime);
                let last = trace.last().copied().unwrap_or(0);
                assert_eq!(last, cert.s, "regime {:?}", regime);
            }
        }
    }

    #[test]
    fn euler_trace_hand_cases() {
        assert!(euler_trace(&[], Regime::BetaAtMostCritical).is_empty());
        let rec = TupleRecord {
            members: vec![0],
            p: 1,
            family: Family::SubCritical,
            index_inf: 0,
            sign: 1,
            rho: None,
        };
        assert_eq!(euler_trace(&[rec], Regime::BetaAtMostCritical), vec![1]);
    }
}
