use crate::agent::{sample_action, AgentParams};
use crate::data::WindowedExample;
use crate::dts::{ReplayBuffer, Transition};
use crate::env::{make_state, reward, rollout, BatchInputs, EnvParams, MdpState};
use crate::error::{Error, Result};
use crate::numerics::rng::derive_seed;
use crate::numerics::{Graph, Rng};
use crate::ppo::agent_epoch;
use crate::trainer::fit::{fit_env, last_step_mse, Controller, EarlyStopping};
use crate::trainer::log::{LogRow, Phase};
use crate::trainer::model::{PolicyMode, TrainedModel};
use crate::trainer::{Dataset, ExperimentConfig, Mode, STREAM_AGENT_INIT, STREAM_ENV_INIT, STREAM_PRETRAIN, STREAM_ROUND};

/// Rolls the frozen forecaster over `examples` with actions sampled from
/// the frozen policy (dropout off) and records one transition per step,
/// sequence by sequence.
pub fn collect_experience(
    env: &EnvParams,
    agent: &AgentParams,
    examples: &[&WindowedExample],
    rng: &mut Rng,
) -> Result<ReplayBuffer> {
    let inputs = BatchInputs::new(examples)?;
    let mut log_probs: Vec<Vec<f64>> = Vec::with_capacity(inputs.steps());
    let mut g = Graph::new(&env.store);
    g.set_scope("env/collect");
    let steps = rollout(&mut g, &env.config, &inputs, |_, states| {
        let mut actions = Vec::with_capacity(states.rows());
        let mut lps = Vec::with_capacity(states.rows());
        for d in agent.distributions(states)? {
            let (a, lp) = sample_action(&d, rng)?;
            actions.push(a);
            lps.push(lp);
        }
        log_probs.push(lps);
        Ok(actions)
    })?;
    g.check()?;

    let cfg = &env.config;
    let (h, dh) = (cfg.horizon, cfg.hidden_dim);
    let last = steps.len() - 1;
    let mut buffer = ReplayBuffer::new();
    for b in 0..examples.len() {
        for (t, step) in steps.iter().enumerate() {
            let a = step.actions[b];
            let y_hat = g.value(step.y_hat)[b * h..(b + 1) * h].to_vec();
            let y = inputs.ys[t].row(b).to_vec();
            let s_next = if t < last {
                MdpState(steps[t + 1].states.row(b).to_vec())
            } else {
                make_state(&g.value(step.h)[b * dh..(b + 1) * dh], &vec![0.0; cfg.input_dim])
            };
            buffer.push(Transition {
                s: MdpState(step.states.row(b).to_vec()),
                a,
                old_log_prob: log_probs[t][b],
                r: reward(&y_hat, &y, a.q, cfg.alpha, cfg.threshold),
                s_next,
                y_hat,
                y,
                terminal: t == last,
            });
        }
    }
    Ok(buffer)
}

/// `epochs` agent epochs, each visiting every buffer once.
pub fn train_agent_round(
    agent: &mut AgentParams,
    buffers: &[ReplayBuffer],
    cfg: &ExperimentConfig,
    round: usize,
    rng: &mut Rng,
) -> Result<Vec<LogRow>> {
    let epochs = cfg.train.agent_epochs;
    let mean_reward = buffers.iter().map(|b| b.mean_reward()).sum::<f64>() / buffers.len().max(1) as f64;
    let mut rows = Vec::with_capacity(epochs);
    for g in 1..=epochs {
        let mut value_loss = 0.0;
        for buf in buffers {
            value_loss += agent_epoch(agent, buf, &cfg.dts, &cfg.ppo, g, epochs, rng)?.value_loss;
        }
        rows.push(LogRow {
            round,
            epoch: g,
            phase: Phase::Agent,
            train_loss: value_loss / buffers.len().max(1) as f64,
            val_loss: None,
            mean_reward: Some(mean_reward),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub mean_reward: f64,
}

pub struct CoEvolveOutcome {
    pub model: TrainedModel,
    pub pretrain_val: f64,
    pub best_val: f64,
    pub best_round: usize,
    pub rounds: Vec<RoundRecord>,
    pub log: Vec<LogRow>,
    /// Set when a round failed; the returned model is the best one before it.
    pub aborted: Option<String>,
}

struct State {
    env: EnvParams,
    agent: AgentParams,
}

fn agent_fingerprint(a: &AgentParams) -> (u64, u64) {
    (a.policy.fingerprint(), a.value.fingerprint())
}

fn run_round(st: &mut State, data: &Dataset, cfg: &ExperimentConfig, seed: u64, round: usize, log: &mut Vec<LogRow>) -> Result<RoundRecord> {
    let tc = &cfg.train;
    let mut rng = Rng::seeded(derive_seed(seed, STREAM_ROUND + round as u64));

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    rng.shuffle(&mut order);
    let mut buffers = Vec::new();
    for idx in order.chunks(tc.batch_size) {
        let refs: Vec<&WindowedExample> = idx.iter().map(|&i| &data.train[i]).collect();
        let buf = collect_experience(&st.env, &st.agent, &refs, &mut rng)?;
        debug_assert_eq!(buf.len(), refs.len() * cfg.data.window);
        buffers.push(buf);
    }
    let mean_reward = buffers.iter().map(|b| b.mean_reward()).sum::<f64>() / buffers.len().max(1) as f64;

    let env_before = st.env.store.fingerprint();
    log.extend(train_agent_round(&mut st.agent, &buffers, cfg, round, &mut rng)?);
    if st.env.store.fingerprint() != env_before {
        return Err(Error::Training("forecaster changed while the agent was training".into()));
    }

    let agent_before = agent_fingerprint(&st.agent);
    let start = last_step_mse(&st.env, &data.val, &mut Controller::Greedy(&st.agent))?;
    let fit = fit_env(
        &mut st.env,
        &data.train,
        &data.val,
        tc.env_epochs,
        EarlyStopping::starting_from(tc.finetune_patience, tc.min_improvement, start),
        tc.batch_size,
        tc.env_lr,
        Controller::Greedy(&st.agent),
        &mut rng,
        Phase::Finetune,
        round,
    )?;
    if agent_fingerprint(&st.agent) != agent_before {
        return Err(Error::Training("agent changed while the forecaster was training".into()));
    }
    let train_loss = fit.rows.last().map_or(f64::NAN, |r| r.train_loss);
    log.extend(fit.rows);
    Ok(RoundRecord {
        round,
        train_loss,
        val_loss: fit.best_val,
        mean_reward,
    })
}

/// Pretrains the forecaster conventionally, then alternates agent training
/// and forecaster fine-tuning for up to `rounds` rounds, keeping the pair
/// with the lowest last-step validation MSE.
pub fn co_evolve(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<CoEvolveOutcome> {
    cfg.validate()?;
    let tc = &cfg.train;
    let input_dim = data.input_dim();
    let mut env = EnvParams::init(cfg.env_config(input_dim), &mut Rng::seeded(derive_seed(seed, STREAM_ENV_INIT)))?;
    let mut pre_rng = Rng::seeded(derive_seed(seed, STREAM_PRETRAIN));
    let pre = fit_env(
        &mut env,
        &data.train,
        &data.val,
        tc.pretrain_epochs,
        EarlyStopping::new(tc.pretrain_patience, 0.0),
        tc.batch_size,
        tc.env_lr,
        Controller::Conventional,
        &mut pre_rng,
        Phase::Pretrain,
        0,
    )?;
    log::info!("pretrain: {} epochs, validation MSE {:.6}", pre.epochs_run, pre.best_val);
    let mut log = pre.rows;
    let agent = AgentParams::init(cfg.agent_config(input_dim), &mut Rng::seeded(derive_seed(seed, STREAM_AGENT_INIT)))?;

    let mut best = TrainedModel::new(env.clone(), None, PolicyMode::Conventional, data, cfg.data.window, Mode::Rre);
    let mut best_val = pre.best_val;
    let mut best_round = 0;
    let mut stopper = EarlyStopping::starting_from(tc.round_patience, tc.min_improvement, pre.best_val);
    let mut rounds = Vec::new();
    let mut aborted = None;
    let mut st = State { env, agent };
    for round in 1..=tc.rounds {
        let rec = match run_round(&mut st, data, cfg, seed, round, &mut log) {
            Ok(r) => r,
            Err(e) => {
                log::error!("round {round} failed, keeping the best model so far: {e}");
                aborted = Some(e.to_string());
                break;
            }
        };
        log::info!(
            "round {round}: train {:.6} val {:.6} mean reward {:.4}",
            rec.train_loss,
            rec.val_loss,
            rec.mean_reward
        );
        log.push(LogRow {
            round,
            epoch: 0,
            phase: Phase::Round,
            train_loss: rec.train_loss,
            val_loss: Some(rec.val_loss),
            mean_reward: Some(rec.mean_reward),
        });
        let (new_best, stop) = stopper.update(rec.val_loss);
        if new_best {
            best = TrainedModel::new(st.env.clone(), Some(st.agent.clone()), PolicyMode::Agent, data, cfg.data.window, Mode::Rre);
            best_val = rec.val_loss;
            best_round = round;
        }
        rounds.push(rec);
        if stop {
            log::info!("round-level early stop after round {round}");
            break;
        }
    }
    Ok(CoEvolveOutcome {
        model: best,
        pretrain_val: pre.best_val,
        best_val,
        best_round,
        rounds,
        log,
        aborted,
    })
}
