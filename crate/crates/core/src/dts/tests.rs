use proptest::prelude::{prop_assert, proptest};

use super::*;
use crate::agent::AgentConfig;

#[test]
fn td_error_by_hand() {
    assert_eq!(td_error(1.0, 1.0, 123.0, true, 0.95), 0.0);
    assert_eq!(td_error(0.7, 0.0, 0.0, false, 0.95), 0.7);
    assert!((td_error(0.5, 1.0, 2.0, false, 0.95) - 1.40).abs() < 1e-12);
}

#[test]
fn forecast_error_endpoints_and_order() {
    assert_eq!(forecast_error_metric(&[1.0, 2.0], &[1.0, 2.0], 1.0), 0.0);
    assert_eq!(forecast_error_metric(&[0.0, 0.0], &[0.5, -1.0], 1.5), 0.5);
    let mut last = -1.0;
    for l1 in [0.0, 0.1, 0.5, 1.0, 10.0, 1e6] {
        let e = forecast_error_metric(&[l1], &[0.0], 1.0);
        assert!(e > last);
        last = e;
    }
}

#[test]
fn priority_by_hand() {
    assert!((priority(0.5, 1.0, 0.2, 0.5) - 0.35).abs() < 1e-15);
    assert!((priority(-0.5, 1.0, 0.2, 0.5) - 0.35).abs() < 1e-15);
    assert_eq!(priority(0.3, 0.6, 0.9, 1.0), 0.5);
    assert_eq!(priority(0.3, 0.6, 0.9, 0.0), 0.9);
    assert_eq!(priority(0.0, 0.0, 0.4, 0.5), 0.2);
    assert!((priority(2.0, 2.0, 1.0 - 1e-12, 0.5) - 1.0).abs() < 1e-11);
}

#[test]
fn temperature_by_hand() {
    let cfg = DtsConfig::default();
    let t = effective_temperature(1.0, 25, 50, &cfg);
    let expected = 2.0 * 0.05_f64.sqrt() * (1.0 + 0.2 * (2.0 * PI).sin());
    assert!((t - expected).abs() < 1e-15);
    assert!((t - 0.447_21).abs() < 1e-5);
    for g in 1..=50 {
        let t = effective_temperature(0.0, g, 50, &cfg);
        let e = 0.1 * (1.0 + 0.2 * (2.0 * PI * 2.0 * g as f64 / 50.0).sin());
        assert!((t - e).abs() < 1e-15);
    }
}

#[test]
fn temperature_anneals_to_minimum() {
    let mut rng = Rng::seeded(3);
    for _ in 0..100 {
        let cfg = DtsConfig {
            lambda_min: rng.uniform_in(0.01, 1.0),
            lambda_max: rng.uniform_in(1.0, 5.0),
            mu: rng.uniform_in(0.0, 0.9),
            omega: 1 + rng.below(5) as u32,
            ..DtsConfig::default()
        };
        let total = 1 + rng.below(100);
        let t = effective_temperature(rng.uniform(), total, total, &cfg);
        assert!((t - cfg.lambda_min).abs() < 1e-12, "{t} vs {}", cfg.lambda_min);
    }
}

#[test]
fn sampling_distribution_by_hand() {
    let p = sampling_distribution(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    let e2 = 2.0_f64.exp();
    assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
    assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
    let u = sampling_distribution(&[0.3; 5], &[0.7; 5]).unwrap();
    assert!(u.iter().all(|x| (x - 0.2).abs() < 1e-15));
    assert!(sampling_distribution(&[0.1], &[0.0]).is_err());
    assert!(sampling_distribution(&[], &[]).is_err());
}

#[test]
fn one_hot_sampling_and_empty_buffer() {
    let mut rng = Rng::seeded(1);
    let idx = sample_minibatch(&[0.0, 1.0, 0.0], 50, &mut rng).unwrap();
    assert!(idx.iter().all(|i| *i == 1));
    assert!(matches!(sample_minibatch(&[], 3, &mut rng), Err(Error::Buffer(_))));
}

#[test]
fn uniform_sampling_frequencies_within_three_sigma() {
    let mut rng = Rng::seeded(77);
    let n = 40_000;
    let idx = sample_minibatch(&[0.25; 4], n, &mut rng).unwrap();
    let sigma = (0.25 * 0.75 / n as f64).sqrt();
    for k in 0..4 {
        let f = idx.iter().filter(|i| **i == k).count() as f64 / n as f64;
        assert!((f - 0.25).abs() < 3.0 * sigma, "index {k}: {f}");
    }
    let again = sample_minibatch(&[0.25; 4], n, &mut Rng::seeded(77)).unwrap();
    assert_eq!(idx, again);
}

fn small_agent() -> AgentParams {
    let cfg = AgentConfig {
        embed_dim: 8,
        layers: 1,
        heads: 2,
        ff_dim: 8,
        dropout: 0.0,
        conventional_prior: None,
        skip_window: 2,
        hidden_dim: 2,
        input_dim: 1,
    };
    AgentParams::init(cfg, &mut Rng::seeded(4)).unwrap()
}

fn toy_buffer(rng: &mut Rng) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new();
    for _ in 0..2 {
        let mut s = MdpState(vec![rng.normal(), rng.normal(), rng.normal()]);
        for t in 1..=4 {
            let s_next = MdpState(vec![rng.normal(), rng.normal(), rng.normal()]);
            buf.push(Transition {
                s: s.clone(),
                a: Action::CONVENTIONAL,
                old_log_prob: -1.0,
                r: rng.uniform_in(-0.5, 0.5),
                s_next: s_next.clone(),
                y_hat: vec![rng.normal()],
                y: vec![rng.normal()],
                terminal: t == 4,
            });
            s = s_next;
        }
    }
    buf
}

#[test]
fn buffer_values_match_direct_evaluation() {
    let agent = small_agent();
    let mut rng = Rng::seeded(5);
    let mut buf = toy_buffer(&mut rng);
    // Break one successor link so the fallback path runs too.
    buf.transitions[1].s_next = MdpState(vec![9.0, 9.0, 9.0]);
    let (v, vn) = buffer_values(&agent, &buf).unwrap();
    for (i, t) in buf.transitions.iter().enumerate() {
        assert!((v[i] - agent.value_forward(&t.s).unwrap()).abs() < 1e-12);
        let expected = if t.terminal { 0.0 } else { agent.value_forward(&t.s_next).unwrap() };
        assert!((vn[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn epoch_sampling_is_consistent_and_dumps_csv() {
    let agent = small_agent();
    let buf = toy_buffer(&mut Rng::seeded(6));
    let cfg = DtsConfig::default();
    let es = EpochSampling::compute(&agent, &buf, &cfg, 3, 10).unwrap();
    assert_eq!(es.probs.len(), 8);
    assert!((es.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let dmax = es.deltas.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    assert!(es.deltas.iter().any(|d| d.abs() == dmax));
    assert!(es.priorities.iter().all(|p| (0.0..=1.0).contains(p)));
    let mut out = Vec::new();
    es.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.starts_with("index,abs_td,forecast_error,priority,temperature,prob"));
}

#[test]
fn config_validation() {
    assert!(DtsConfig::default().validate().is_ok());
    for bad in [
        DtsConfig { beta: 1.5, ..Default::default() },
        DtsConfig { lambda_min: 3.0, ..Default::default() },
        DtsConfig { mu: 1.0, ..Default::default() },
        DtsConfig { omega: 0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

proptest! {
    #[test]
    fn error_and_priority_ranges(l1 in 0.0f64..1e6, alpha in 1e-3f64..10.0, d in -5.0f64..5.0, extra in 0.0f64..5.0, beta in 0.0f64..=1.0) {
        let e = forecast_error_metric(&[l1], &[0.0], alpha);
        prop_assert!((0.0..1.0).contains(&e));
        let p = priority(d, d.abs() + extra, e, beta);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn softmax_is_shift_invariant(p in proptest::collection::vec(0.0f64..1.0, 1..20), shift in -5.0f64..5.0) {
        let t = vec![0.5; p.len()];
        let a = sampling_distribution(&p, &t).unwrap();
        let shifted: Vec<f64> = p.iter().map(|x| x + shift * 0.5).collect();
        let b = sampling_distribution(&shifted, &t).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
