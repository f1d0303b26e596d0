//! Property tests for the softmax-tilt algebra. Complements the seeded
//! numeric checks in `verify` with randomized inputs.

use iwrl_core::math::{snis_kl_estimate, soft_value_estimate, tilt_log_weights, tilt_weights};
use proptest::prelude::*;

fn q_and_alpha() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (
        prop::collection::vec(-50.0..50.0f64, 1..32),
        0.05..100.0f64,
    )
}

proptest! {
    #[test]
    fn tilt_weights_are_a_distribution((q, alpha) in q_and_alpha()) {
        let w = tilt_weights(&q, alpha).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum = {}", sum);
    }

    #[test]
    fn tilt_weights_ignore_a_common_shift(
        (q, alpha) in q_and_alpha(),
        c in -100.0..100.0f64,
    ) {
        let w = tilt_weights(&q, alpha).unwrap();
        let shifted: Vec<f64> = q.iter().map(|&x| x + c).collect();
        let ws = tilt_weights(&shifted, alpha).unwrap();
        for (a, b) in w.iter().zip(&ws) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn snis_kl_stays_inside_its_range((q, alpha) in q_and_alpha()) {
        let w = tilt_weights(&q, alpha).unwrap();
        let kl = snis_kl_estimate(&w).unwrap();
        let ln_k = (q.len() as f64).ln();
        prop_assert!(kl >= -1e-12 && kl <= ln_k + 1e-9, "kl = {}", kl);
    }

    // Jensen on both sides: mean(Q) ≤ α·log-mean-exp(Q/α) ≤ max(Q).
    #[test]
    fn soft_value_sits_between_mean_and_max((q, alpha) in q_and_alpha()) {
        let v = soft_value_estimate(&q, alpha).unwrap().value;
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= mean - 1e-9 && v <= max + 1e-9, "v = {}", v);
    }

    // The log-mean-exp form and the self-normalized weighted bracket
    // Σ ŵ(Q − α·log(K·ŵ)) are the same number.
    #[test]
    fn soft_value_equals_the_weighted_bracket((q, alpha) in q_and_alpha()) {
        let v = soft_value_estimate(&q, alpha).unwrap().value;
        let log_w = tilt_log_weights(&q, alpha).unwrap();
        let ln_k = (q.len() as f64).ln();
        let bracket: f64 = q
            .iter()
            .zip(&log_w)
            .map(|(&qk, &lw)| lw.exp() * (qk - alpha * (lw + ln_k)))
            .sum();
        prop_assert!(
            (v - bracket).abs() < 1e-7 * (1.0 + v.abs()),
            "v = {}, bracket = {}", v, bracket
        );
    }
}
