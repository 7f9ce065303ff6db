//! Negative-sampling margin loss.
//!
//! For a query with positive answer distance `D⁺` and negative distances
//! `D⁻_1..D⁻_u`, the per-query loss is
//!
//! ```text
//!   −log σ(γ − D⁺) − (1/u) Σ_j log σ(D⁻_j − γ)
//! = softplus(D⁺ − γ) + (1/u) Σ_j softplus(γ − D⁻_j)
//! ```
//!
//! and a batch reports the mean. Two fixed points pin the calibration: at
//! `D⁺ = D⁻ = γ` the loss is exactly `2·ln 2`, and with `D⁺ = 0`,
//! `D⁻ = 2γ`, `γ = 24` it vanishes to below 1e-9.

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct MarginLossGrads {
    /// ∂loss/∂D⁺ per query.
    pub d_pos: Vec<f64>,
    /// ∂loss/∂D⁻ per query per negative.
    pub d_neg: Vec<Vec<f64>>,
}

/// Batch-mean margin loss and its gradients with respect to the distances.
pub fn margin_loss(gamma: f64, pos: &[f64], neg: &[Vec<f64>]) -> (f64, MarginLossGrads) {
    assert_eq!(pos.len(), neg.len(), "one negative set per positive");
    assert!(!pos.is_empty(), "empty batch");
    let b = pos.len() as f64;
    let mut loss = 0.0;
    let mut d_pos = Vec::with_capacity(pos.len());
    let mut d_neg = Vec::with_capacity(pos.len());
    for (dp, dns) in pos.iter().zip(neg.iter()) {
        assert!(!dns.is_empty(), "query without negatives");
        let u = dns.len() as f64;
        loss += softplus(dp - gamma);
        d_pos.push(sigmoid(dp - gamma) / b);
        let mut row = Vec::with_capacity(dns.len());
        for dn in dns {
            loss += softplus(gamma - dn) / u;
            row.push(-sigmoid(gamma - dn) / (b * u));
        }
        d_neg.push(row);
    }
    (loss / b, MarginLossGrads { d_pos, d_neg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_at_the_margin_is_two_ln_two() {
        let gamma = 12.0;
        for u in [1, 4, 16] {
            let (loss, _) = margin_loss(gamma, &[gamma], &[vec![gamma; u]]);
            assert!(
                (loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12,
                "u={u}: loss {loss}"
            );
        }
    }

    #[test]
    fn well_separated_distances_drive_the_loss_to_zero() {
        let gamma = 24.0;
        let (loss, _) = margin_loss(gamma, &[0.0], &[vec![2.0 * gamma; 8]]);
        assert!(loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn loss_is_the_batch_mean() {
        let gamma = 5.0;
        let (l1, _) = margin_loss(gamma, &[3.0], &[vec![6.0, 7.0]]);
        let (l2, _) = margin_loss(gamma, &[9.0], &[vec![1.0]]);
        let (both, _) = margin_loss(gamma, &[3.0, 9.0], &[vec![6.0, 7.0], vec![1.0]]);
        assert!((both - (l1 + l2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let gamma = 4.0;
        let pos = [3.5, 6.0];
        let neg = [vec![2.0, 8.0], vec![4.0, 4.5, 0.5]];
        let (_, grads) = margin_loss(gamma, &pos, &neg.to_vec());
        let h = 1e-6;
        for b in 0..2 {
            let mut p = pos.to_vec();
            p[b] += h;
            let (up, _) = margin_loss(gamma, &p, &neg.to_vec());
            p[b] -= 2.0 * h;
            let (down, _) = margin_loss(gamma, &p, &neg.to_vec());
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads.d_pos[b]).abs() < 1e-8, "pos {b}: {fd} vs {}", grads.d_pos[b]);
            for j in 0..neg[b].len() {
                let mut n = neg.to_vec();
                n[b][j] += h;
                let (up, _) = margin_loss(gamma, &pos, &n);
                n[b][j] -= 2.0 * h;
                let (down, _) = margin_loss(gamma, &pos, &n);
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (fd - grads.d_neg[b][j]).abs() < 1e-8,
                    "neg {b},{j}: {fd} vs {}",
                    grads.d_neg[b][j]
                );
            }
        }
    }

    #[test]
    fn margin_pulls_positives_in_and_pushes_negatives_out() {
        let (_, grads) = margin_loss(6.0, &[6.0], &[vec![6.0]]);
        assert!(grads.d_pos[0] > 0.0, "loss increases with positive distance");
        assert!(grads.d_neg[0][0] < 0.0, "loss decreases with negative distance");
    }

    #[test]
    fn stable_for_extreme_arguments() {
        assert!(softplus(1000.0).is_finite());
        assert_eq!(softplus(-1000.0), 0.0);
        assert!((sigmoid(1000.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-1000.0).abs() < 1e-15);
        let (loss, grads) = margin_loss(24.0, &[500.0], &[vec![-500.0]]);
        assert!(loss.is_finite());
        assert!(grads.d_pos[0].is_finite() && grads.d_neg[0][0].is_finite());
    }
}
