//! Entity–query distance: L1, minimized over disjunct vectors.
//!
//! A query in disjunctive normal form has one vector per disjunct; an
//! entity's distance to the query is the smallest L1 distance to any of
//! them. Both the absolute value and the min are kinked, so both report
//! their margins to the kink meter — finite-difference probes near either
//! kink are redrawn rather than trusted.

use pathformer_nn::{KinkMeter, Scalar};

/// `min_m Σ_k |e_k − q_mk|` plus the minimizing disjunct index.
pub fn min_l1<T: Scalar>(
    entity: &[T],
    queries: &[&[T]],
    kink: Option<&KinkMeter>,
) -> (f64, usize) {
    debug_assert!(!queries.is_empty());
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    let mut argmin = 0;
    for (m, q) in queries.iter().enumerate() {
        debug_assert_eq!(entity.len(), q.len());
        let mut sum = 0.0;
        for (&e, &qk) in entity.iter().zip(q.iter()) {
            let diff = e.to_f64() - qk.to_f64();
            if let Some(k) = kink {
                k.note(diff.abs());
            }
            sum += diff.abs();
        }
        if sum < best {
            second = best;
            best = sum;
            argmin = m;
        } else if sum < second {
            second = sum;
        }
    }
    if let Some(k) = kink {
        if queries.len() > 1 {
            k.note(second - best);
        }
    }
    (best, argmin)
}

/// Accumulate `scale * dD` into the entity and the minimizing query vector.
/// `sign(0)` is taken as 0 (a subgradient; the kink meter keeps
/// finite-difference probes away from that point anyway).
pub fn min_l1_backward<T: Scalar>(
    entity: &[T],
    query: &[T],
    scale: f64,
    d_entity: &mut [T],
    d_query: &mut [T],
) {
    for k in 0..entity.len() {
        let diff = entity[k].to_f64() - query[k].to_f64();
        let s = if diff > 0.0 {
            scale
        } else if diff < 0.0 {
            -scale
        } else {
            0.0
        };
        d_entity[k] += T::from_f64(s);
        d_query[k] += T::from_f64(-s);
    }
}
