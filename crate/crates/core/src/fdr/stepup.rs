//! Benjamini-Hochberg and Benjamini-Yekutieli step-up procedures.

use super::{Method, RejectionReport};
use crate::error::{invalid, Error, Result};
use crate::stats::PVector;

/// `c(m) = 1 + 1/2 + ... + 1/m`.
pub fn harmonic_number(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

/// Indices ordered by ascending p-value, ties by index.
fn ascending(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    order
}

/// `p * n / k`, the level at which the k-th smallest of `n` p-values (1-based)
/// meets its step-up threshold. Written as `p * (n / k)` so that it never
/// rounds below `p`, and shared with the q-values so that `q_i <= alpha`
/// agrees with the step-up rule bit for bit.
#[inline]
fn adjusted(p: f64, k: usize, n: usize) -> f64 {
    p * (n as f64 / k as f64)
}

/// Number of rejections of the step-up rule at `level`:
/// the largest `k` with `p_(k) <= level * k / n`, or 0.
pub fn bh_rejection_count(p: &[f64], level: f64) -> usize {
    let n = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..=n)
        .rev()
        .find(|&k| adjusted(sorted[k - 1], k, n) <= level)
        .unwrap_or(0)
}

fn step_up(p: &[f64], level: f64) -> Vec<usize> {
    let n = p.len();
    let order = ascending(p);
    let count = (1..=n)
        .rev()
        .find(|&k| adjusted(p[order[k - 1]], k, n) <= level)
        .unwrap_or(0);
    // maximality of `count` already pulls in every tie at the cutoff
    let mut rejected = order[..count].to_vec();
    rejected.sort_unstable();
    rejected
}

fn check(p: &PVector, alpha: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1)")));
    }
    Ok(())
}

/// Benjamini-Hochberg at level `alpha`.
pub fn bh(p: &PVector, alpha: f64) -> Result<RejectionReport> {
    check(p, alpha)?;
    Ok(RejectionReport {
        method: Method::Bh,
        alpha,
        gamma: None,
        rejected: step_up(p, alpha),
        p: p.clone(),
        q: bh_q_values(p),
        g: None,
    })
}

/// Benjamini-Yekutieli: BH with every threshold divided by `c(m)`.
pub fn by(p: &PVector, alpha: f64) -> Result<RejectionReport> {
    check(p, alpha)?;
    let level = alpha / harmonic_number(p.len());
    Ok(RejectionReport {
        method: Method::By,
        alpha,
        gamma: None,
        rejected: step_up(p, level),
        p: p.clone(),
        q: bh_q_values(p),
        g: None,
    })
}

/// The smallest level at which BH rejects each hypothesis.
pub fn bh_q_values(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let order = ascending(p);
    let mut q = vec![0.0; n];
    let mut running = f64::INFINITY;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(adjusted(p[i], rank + 1, n));
        q[i] = running;
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> PVector {
        PVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn bh_hand_example() {
        let r = bh(&pv(&[0.01, 0.02, 0.2, 0.9]), 0.05).unwrap();
        assert_eq!(r.rejected, vec![0, 1]);
        let shuffled = bh(&pv(&[0.9, 0.02, 0.2, 0.01]), 0.05).unwrap();
        assert_eq!(shuffled.rejected, vec![1, 3]);
    }

    #[test]
    fn bh_extremes() {
        assert!(bh(&pv(&[1.0; 6]), 0.3).unwrap().rejected.is_empty());
        assert_eq!(
            bh(&pv(&[0.0; 6]), 0.3).unwrap().rejected,
            (0..6).collect::<Vec<_>>()
        );
        assert_eq!(bh(&pv(&[]), 0.1).unwrap_err(), Error::EmptyInput);
        assert!(bh(&pv(&[0.1]), 1.0).is_err());
        assert!(by(&pv(&[0.1]), 0.0).is_err());
    }

    #[test]
    fn by_hand_example() {
        assert!((harmonic_number(4) - 25.0 / 12.0).abs() < 1e-15);
        let r = by(&pv(&[0.01, 0.02, 0.2, 0.9]), 0.05).unwrap();
        assert!(r.rejected.is_empty());
    }

    #[test]
    fn by_equals_bh_for_one_hypothesis() {
        for p in [0.001, 0.04, 0.05, 0.2] {
            let v = pv(&[p]);
            assert_eq!(
                bh(&v, 0.05).unwrap().rejected,
                by(&v, 0.05).unwrap().rejected
            );
        }
    }

    #[test]
    fn q_value_hand_example() {
        let q = bh_q_values(&[0.01, 0.02, 0.2, 0.9]);
        let expected = [0.04, 0.04, 0.8 / 3.0, 0.9];
        for (a, b) in q.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{q:?}");
        }
        assert_eq!(bh_q_values(&[0.37]), vec![0.37]);
    }

    #[test]
    fn ties_rejected_together() {
        let r = bh(&pv(&[0.02, 0.02, 0.02, 0.9]), 0.05).unwrap();
        assert_eq!(r.rejected, vec![0, 1, 2]);
        let q = bh_q_values(&[0.02, 0.02, 0.02, 0.9]);
        assert_eq!(q[0], q[1]);
        assert_eq!(q[1], q[2]);
    }

    #[test]
    fn rejection_count_matches_step_up() {
        let p = [0.001, 0.3, 0.012, 0.04, 0.5, 0.011];
        for level in [0.01, 0.05, 0.1, 0.5] {
            assert_eq!(bh_rejection_count(&p, level), step_up(&p, level).len());
        }
    }

    fn p_vector() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![0.0f64..0.02, Just(0.05), 0.0f64..=1.0], 1..40)
    }

    proptest! {
        #[test]
        fn bh_grows_with_alpha_and_contains_by(p in p_vector(), a in 0.001f64..0.5, extra in 0.0f64..0.5) {
            let pv = PVector::new(p).unwrap();
            let small = bh(&pv, a).unwrap().rejected;
            let large = bh(&pv, a + extra).unwrap().rejected;
            prop_assert!(small.iter().all(|i| large.contains(i)));
            let by_set = by(&pv, a).unwrap().rejected;
            prop_assert!(by_set.iter().all(|i| small.contains(i)));
        }

        #[test]
        fn q_values_are_the_smallest_rejecting_level(p in p_vector(), alpha in 0.001f64..0.999) {
            let q = bh_q_values(&p);
            let report = bh(&PVector::new(p.clone()).unwrap(), alpha).unwrap();
            for i in 0..p.len() {
                prop_assert!(q[i] >= p[i] && q[i] <= 1.0);
                prop_assert_eq!(q[i] <= alpha, report.is_rejected(i));
            }
        }
    }
}
