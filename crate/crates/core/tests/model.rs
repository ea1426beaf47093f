use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use salmut::model::{polynomial_queue, queue_model};
use salmut::{benchmark_queue, ActionKind, ModelError, PolynomialCost, QueueParams};

#[test]
fn benchmark_rates_and_probabilities() {
    let q = benchmark_queue(4.0);
    assert_eq!(q.total_rate(3).unwrap(), 14.0);
    assert_eq!(q.total_rate(0).unwrap(), 2.0);
    assert_eq!(q.total_rate(10).unwrap(), 22.0);
    assert_eq!(q.event_distribution(0).unwrap(), vec![0.0, 0.5, 0.5]);
    let d = q.event_distribution(3).unwrap();
    assert_abs_diff_eq!(d[0], 12.0 / 14.0, epsilon = 1e-15);
    assert!(matches!(q.total_rate(11), Err(ModelError::InvalidState { .. })));
}

#[test]
fn actions_and_rewards() {
    let q = benchmark_queue(4.0);
    assert_eq!(q.apply_action(3, 1, ActionKind::Admit).unwrap(), 4);
    assert_eq!(q.apply_action(3, 2, ActionKind::Block).unwrap(), 3);
    assert_eq!(q.apply_action(0, 0, ActionKind::Continue).unwrap(), 0);
    assert!(q.apply_action(10, 1, ActionKind::Admit).is_err());
    assert!(q.apply_action(4, 0, ActionKind::Admit).is_err());
    assert_abs_diff_eq!(q.lump_reward(3, 1, ActionKind::Admit).unwrap(), 19.1, epsilon = 1e-12);
    assert_eq!(q.lump_reward(0, 2, ActionKind::Block).unwrap(), 0.0);
    assert_abs_diff_eq!(q.lump_reward(5, 1, ActionKind::Block).unwrap(), -2.5, epsilon = 1e-12);
}

#[test]
fn feasible_triples_by_enumeration() {
    let q = benchmark_queue(2.0);
    let w = 10;
    // departures fire for s ≥ 1; each arrival has two actions below W and one at W
    let expected = w + 2 * 2 * w + 2;
    assert_eq!(q.feasible_triples(), expected);
}

#[test]
fn construction_errors() {
    let p = QueueParams { servers: 2, buffer: 2, service_rate: 1.0, arrival_rates: vec![1.0, 1.0] };
    assert!(polynomial_queue(&p, &[10.0], PolynomialCost::default()).is_err());
    assert!(matches!(queue_model(&p, &[10.0, 20.0], |s| s as f64), Err(ModelError::RewardOrder { .. })));
    assert!(queue_model(&p, &[10.0, 5.0], |_| -1.0).is_err());
    let equal = queue_model(&p, &[0.0, 0.0], |s| (s * s) as f64).unwrap();
    assert!(!equal.has_strict_reward_order());
    assert!(equal.has_strictly_convex_cost());
}

fn params() -> impl Strategy<Value = (QueueParams, Vec<f64>, f64)> {
    (1usize..4, 1usize..4, 0.5f64..5.0, prop::collection::vec(0.2f64..3.0, 1..4), 0.01f64..1.0).prop_flat_map(
        |(m, b, mu, lambdas, c)| {
            let n = lambdas.len();
            (Just(QueueParams { servers: m, buffer: b, service_rate: mu, arrival_rates: lambdas }),
                prop::collection::vec(0.0f64..30.0, n),
                Just(c))
        },
    )
}

proptest! {
    #[test]
    fn distributions_are_stochastic((p, mut r, c) in params(), u in 0.0f64..1.0) {
        r.sort_by(|a, b| b.total_cmp(a));
        let q = polynomial_queue(&p, &r, PolynomialCost { c, p: 2.0 }).unwrap();
        for s in 0..q.num_states() {
            let d = q.event_distribution(s).unwrap();
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let e = q.sample_event(s, u);
            prop_assert!(d[e] > 0.0);
            // inverse CDF: u falls in the bucket of the sampled event
            let below: f64 = d[..e].iter().sum();
            prop_assert!(below <= u + 1e-12 && u < below + d[e] + 1e-12);
            for i in 0..q.num_events() {
                for a in [ActionKind::Continue, ActionKind::Block, ActionKind::Admit] {
                    if let Ok(next) = q.apply_action(s, i, a) {
                        prop_assert!(next <= q.max_state());
                        prop_assert!(q.lump_reward(s, i, a).unwrap() <= q.reward(i));
                    }
                }
            }
        }
    }
}
