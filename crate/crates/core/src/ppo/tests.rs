use proptest::prelude::{prop_assert, proptest};

use super::*;
use crate::agent::AgentConfig;
use crate::dts::Transition;
use crate::env::MdpState;
use crate::numerics::gradcheck::{check_gradients, DEFAULT_STEP};
use crate::numerics::Tensor;

fn small_agent(seed: u64) -> AgentParams {
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
    AgentParams::init(cfg, &mut Rng::seeded(seed)).unwrap()
}

fn states(n: usize, seed: u64) -> Tensor {
    let mut rng = Rng::seeded(seed);
    Tensor::matrix(n, 3, (0..n * 3).map(|_| rng.normal()).collect()).unwrap()
}

fn actions(n: usize) -> Vec<Action> {
    (0..n).map(|i| Action::new(i % 2 == 0, i % 3, i % 4 < 2)).collect()
}

fn current_log_probs(agent: &AgentParams, s: &Tensor, acts: &[Action]) -> Vec<f64> {
    agent.distributions(s).unwrap().iter().zip(acts).map(|(d, a)| d.log_prob(a)).collect()
}

#[test]
fn advantage_and_return_by_hand() {
    assert_eq!(advantage(0.4, 0.0, 0.0, false, 0.95), 0.4);
    assert_eq!(advantage(0.0, 0.3, 5.0, true, 0.95), -0.3);
    assert_eq!(bootstrapped_return(0.7, 9.0, true, 0.95), 0.7);
    assert_eq!(bootstrapped_return(0.0, 1.0, false, 0.95), 0.95);
}

#[test]
fn surrogate_branches() {
    assert_eq!(surrogate_term(1.0, 0.8, 0.2), 0.8);
    assert!((surrogate_term(1.4, 2.0, 0.2) - 2.4).abs() < 1e-15);
    assert!((surrogate_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
}

#[test]
fn unchanged_policy_gives_mean_advantage() {
    let agent = small_agent(1);
    let s = states(5, 2);
    let acts = actions(5);
    let old = current_log_probs(&agent, &s, &acts);
    let adv = [0.5, -0.2, 1.0, 0.0, 0.3];
    let mut g = Graph::new(&agent.policy);
    let out = policy_graph(&mut g, &agent.config, &s, None).unwrap();
    let l = policy_loss(&mut g, &out, &acts, &old, &adv, 0.2);
    assert!((g.scalar(l) - 0.32).abs() < 1e-12);
}

#[test]
fn clipped_terms_carry_no_gradient() {
    let agent = small_agent(3);
    let s = states(4, 4);
    let acts = actions(4);
    let ratio = (1.4_f64).ln();
    let old: Vec<f64> = current_log_probs(&agent, &s, &acts).iter().map(|l| l - ratio).collect();
    let adv = [1.0, 2.0, 0.5, 3.0];
    let mut g = Graph::new(&agent.policy);
    let out = policy_graph(&mut g, &agent.config, &s, None).unwrap();
    let l = policy_loss(&mut g, &out, &acts, &old, &adv, 0.2);
    let expected = 1.2 * adv.iter().sum::<f64>() / 4.0;
    assert!((g.scalar(l) - expected).abs() < 1e-12);
    assert_eq!(g.backward(l).unwrap().max_abs(), 0.0);
}

#[test]
fn zero_advantages_give_zero_loss_and_gradient() {
    let agent = small_agent(5);
    let s = states(3, 6);
    let acts = actions(3);
    let old = vec![-1.0, -2.0, -0.5];
    let mut g = Graph::new(&agent.policy);
    let out = policy_graph(&mut g, &agent.config, &s, None).unwrap();
    let l = policy_loss(&mut g, &out, &acts, &old, &[0.0; 3], 0.2);
    assert_eq!(g.scalar(l), 0.0);
    assert_eq!(g.backward(l).unwrap().max_abs(), 0.0);
}

#[test]
fn wide_clip_reduces_to_vanilla_policy_gradient() {
    let agent = small_agent(7);
    let s = states(4, 8);
    let acts = actions(4);
    let old = current_log_probs(&agent, &s, &acts);
    let adv = [0.3, -0.7, 1.1, 0.2];
    let (_, ppo) = crate::numerics::evaluate_with_gradients(&agent.policy, |g| {
        let out = policy_graph(g, &agent.config, &s, None)?;
        Ok(policy_loss(g, &out, &acts, &old, &adv, 1e6))
    })
    .unwrap();
    let (_, vanilla) = crate::numerics::evaluate_with_gradients(&agent.policy, |g| {
        let out = policy_graph(g, &agent.config, &s, None)?;
        let lp = out.log_prob(g, &acts);
        let a = g.constant_matrix(4, 1, adv.to_vec());
        let w = g.mul(lp, a);
        Ok(g.mean_all(w))
    })
    .unwrap();
    for (name, t) in ppo.iter() {
        let v = vanilla.get(name).unwrap();
        for (x, y) in t.data().iter().zip(v.data()) {
            assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()), "{name}");
        }
    }
}

#[test]
fn value_loss_by_hand() {
    let store = crate::numerics::ParamStore::new();
    let mut g = Graph::new(&store);
    let v = g.constant_matrix(1, 1, vec![1.0]);
    let l = value_loss(&mut g, v, &[3.0]);
    assert_eq!(g.scalar(l), 4.0);
    let v = g.constant_matrix(2, 1, vec![0.5, -1.0]);
    let l = value_loss(&mut g, v, &[0.5, -1.0]);
    assert_eq!(g.scalar(l), 0.0);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let agent = small_agent(9);
    let s = states(4, 10);
    let acts = actions(4);
    let old: Vec<f64> = current_log_probs(&agent, &s, &acts).iter().map(|l| l + 0.05).collect();
    let adv = [0.4, -0.6, 0.9, -0.1];
    let r = check_gradients(&agent.policy, DEFAULT_STEP, 10, |g| {
        let out = policy_graph(g, &agent.config, &s, None)?;
        Ok(policy_loss(g, &out, &acts, &old, &adv, 0.2))
    })
    .unwrap();
    assert!(r.passes(1e-4), "{r:?}");
    let returns = [0.2, 1.0, -0.5, 0.3];
    let r = check_gradients(&agent.value, DEFAULT_STEP, 10, |g| {
        let v = value_graph(g, &agent.config, &s, None)?;
        Ok(value_loss(g, v, &returns))
    })
    .unwrap();
    assert!(r.passes(1e-4), "{r:?}");
}

fn buffer(agent: &AgentParams, seed: u64) -> ReplayBuffer {
    let mut rng = Rng::seeded(seed);
    let mut buf = ReplayBuffer::new();
    for i in 0..6 {
        let s = MdpState(vec![rng.normal(), rng.normal(), rng.normal()]);
        let a = Action::new(i % 2 == 0, i % 3, true);
        let lp = agent.policy_forward(&s).unwrap().log_prob(&a);
        buf.push(Transition {
            s,
            a,
            old_log_prob: lp,
            r: rng.uniform_in(-0.5, 0.5),
            s_next: MdpState(vec![0.0; 3]),
            y_hat: vec![0.0],
            y: vec![rng.normal()],
            terminal: i % 3 == 2,
        });
    }
    buf
}

#[test]
fn epoch_updates_both_networks_without_cross_talk() {
    let mut agent = small_agent(11);
    let buf = buffer(&agent, 12);
    let (p0, v0) = (agent.policy.fingerprint(), agent.value.fingerprint());
    let dts = DtsConfig { minibatch: 8, ..Default::default() };
    let stats = agent_epoch(&mut agent, &buf, &dts, &PpoConfig::default(), 1, 5, &mut Rng::seeded(1)).unwrap();
    assert!(stats.value_loss >= 0.0);
    assert_ne!(agent.policy.fingerprint(), p0);
    assert_ne!(agent.value.fingerprint(), v0);
    assert_eq!(agent.policy.step(), 1);
    assert_eq!(agent.value.step(), 1);
}

#[test]
fn epochs_are_deterministic_given_the_seed() {
    let base = small_agent(13);
    let buf = buffer(&base, 14);
    let dts = DtsConfig { minibatch: 5, ..Default::default() };
    let run = || {
        let mut a = base.clone();
        let mut rng = Rng::seeded(99);
        for g in 1..=3 {
            agent_epoch(&mut a, &buf, &dts, &PpoConfig::default(), g, 3, &mut rng).unwrap();
        }
        a
    };
    assert_eq!(run(), run());
    let es = EpochSampling::compute(&base, &buf, &dts, 1, 3).unwrap();
    let i1 = sample_minibatch(&es.probs, 5, &mut Rng::seeded(4)).unwrap();
    let i2 = sample_minibatch(&es.probs, 5, &mut Rng::seeded(4)).unwrap();
    assert_eq!(i1, i2);
}

proptest! {
    #[test]
    fn return_minus_value_is_the_td_error(r in -2.0f64..2.0, vs in -3.0f64..3.0, vn in -3.0f64..3.0, terminal: bool) {
        let a = advantage(r, vs, vn, terminal, 0.95);
        let ret = bootstrapped_return(r, vn, terminal, 0.95);
        prop_assert!((ret - vs - a).abs() < 1e-12);
    }

    #[test]
    fn surrogate_is_bounded(rho in 0.0f64..5.0, a in -3.0f64..3.0) {
        let t = surrogate_term(rho, a, 0.2);
        prop_assert!(t <= (rho * a).max(1.2 * a) + 1e-15);
        prop_assert!(t <= 1.2 * a.abs() + 1e-15);
    }
}
