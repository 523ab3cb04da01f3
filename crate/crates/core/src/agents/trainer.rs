use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    normalise, pretrain_backbone, split_seed, AgentConfig, AgentError, Algorithm, Experience, IterationRecord,
    ReplayBuffer, TrainLog,
};
use crate::environment::{Action, BanditEnv, EpisodeRecord};
use crate::neural::{apply_gradients, soft_update, Activation, Gradients, LayerSpec, MlpNetwork, NnError, OptimizerState};
use crate::rewards::{self, BandBracket, RewardKind};

/// `[state -> hidden -> hidden -> action]`, bounded output.
pub fn actor_specs(state_dim: usize, action_dim: usize, hidden: usize, bounds: (f64, f64)) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(state_dim, hidden, Activation::Tanh),
        LayerSpec::new(hidden, hidden, Activation::Tanh),
        LayerSpec::new(hidden, action_dim, Activation::BoundedAffine { low: bounds.0, high: bounds.1 }),
    ]
}

/// `[action -> hidden -> state -> 1]`. The first two layers have the shape of
/// the state predictor so pretrained weights drop straight in.
pub fn critic_specs(action_dim: usize, state_dim: usize, hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(action_dim, hidden, Activation::Tanh),
        LayerSpec::new(hidden, state_dim, Activation::Identity),
        LayerSpec::new(state_dim, 1, Activation::Identity),
    ]
}

/// Networks produced by a run, alongside its log.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub log: TrainLog,
    pub actor: MlpNetwork,
    pub critics: Vec<MlpNetwork>,
    pub backbone: Option<MlpNetwork>,
}

#[derive(Debug, Clone)]
pub struct CriticUnit {
    pub net: MlpNetwork,
    pub target: MlpNetwork,
    opt: OptimizerState,
}

/// Actor, one or two critics, their targets and optimizers.
///
/// The critic sees only the (normalised) action: the state it would
/// otherwise condition on is the same fixed post-fault state every episode.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: MlpNetwork,
    pub actor_target: MlpNetwork,
    actor_opt: OptimizerState,
    pub critics: Vec<CriticUnit>,
    bounds: (f64, f64),
    state: Vec<f64>,
    policy_delay: usize,
}

impl ActorCritic {
    pub fn new(
        actor: MlpNetwork,
        critics: Vec<MlpNetwork>,
        cfg: &AgentConfig,
        bounds: (f64, f64),
        state: Vec<f64>,
        policy_delay: usize,
    ) -> Self {
        assert!(!critics.is_empty(), "at least one critic");
        let critics = critics
            .into_iter()
            .map(|net| CriticUnit {
                target: net.clone(),
                opt: OptimizerState::adam(&net, cfg.critic_lr),
                net,
            })
            .collect();
        ActorCritic {
            actor_target: actor.clone(),
            actor_opt: OptimizerState::adam(&actor, cfg.actor_lr),
            actor,
            critics,
            bounds,
            state,
            policy_delay: policy_delay.max(1),
        }
    }

    /// The deterministic policy's action for the fixed state.
    pub fn policy_action(&self) -> Result<Vec<f64>, NnError> {
        self.actor.forward(&self.state)
    }

    pub fn q_value(&self, critic: usize, action: &[f64]) -> Result<f64, NnError> {
        Ok(self.critics[critic].net.forward(&normalise(action, self.bounds))?[0])
    }

    /// One regression step of every critic towards the stored rewards, all
    /// critics sharing `batch`. Returns the pre-update mean squared errors.
    pub fn critic_step(&mut self, batch: &[Experience]) -> Result<Vec<f64>, NnError> {
        let scale = 1.0 / batch.len() as f64;
        let mut losses = Vec::with_capacity(self.critics.len());
        for unit in &mut self.critics {
            let mut grads = Gradients::zeros_like(&unit.net);
            let mut loss = 0.0;
            for e in batch {
                let x = normalise(&e.action.values, self.bounds);
                let trace = unit.net.forward_trace(&x)?;
                let err = trace.output()[0] - e.reward;
                loss += err * err * scale;
                let (g, _) = unit.net.backward_trace(&trace, &[2.0 * err * scale])?;
                grads.add_scaled(&g, 1.0);
            }
            if !loss.is_finite() {
                return Err(NnError::NonFiniteGradient);
            }
            apply_gradients(&mut unit.net, &mut unit.opt, &grads)?;
            losses.push(loss);
        }
        Ok(losses)
    }

    /// Ascends the first critic's value through the actor. Returns `-Q` at
    /// the pre-update action.
    pub fn actor_step(&mut self) -> Result<f64, NnError> {
        let half = 0.5 * (self.bounds.1 - self.bounds.0);
        let trace = self.actor.forward_trace(&self.state)?;
        let x = normalise(trace.output(), self.bounds);
        let critic = &self.critics[0].net;
        let q = critic.forward(&x)?[0];
        let (_, dq_dx) = critic.backward(&x, &[1.0])?;
        let upstream: Vec<f64> = dq_dx.iter().map(|g| -g / half).collect();
        let (grads, _) = self.actor.backward_trace(&trace, &upstream)?;
        apply_gradients(&mut self.actor, &mut self.actor_opt, &grads)?;
        Ok(-q)
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<(), NnError> {
        soft_update(&mut self.actor_target, &self.actor, tau)?;
        for unit in &mut self.critics {
            soft_update(&mut unit.target, &unit.net, tau)?;
        }
        Ok(())
    }

    /// Runs the configured number of critic updates, then one actor step
    /// and target update on every `policy_delay`-th iteration. Returns the
    /// mean critic loss and the actor loss, if any.
    fn learn(
        &mut self,
        iteration: usize,
        buffer: &mut ReplayBuffer,
        cfg: &AgentConfig,
    ) -> Result<(Option<f64>, Option<f64>), NnError> {
        if buffer.is_empty() {
            return Ok((None, None));
        }
        let mut critic_loss = 0.0;
        for _ in 0..cfg.updates_per_iteration {
            let batch: Vec<Experience> = buffer.sample(cfg.batch_size).into_iter().cloned().collect();
            critic_loss += self.critic_step(&batch)?[0];
        }
        let mut actor_loss = None;
        if iteration.is_multiple_of(self.policy_delay) {
            actor_loss = Some(self.actor_step()?);
            self.soft_update_targets(cfg.tau)?;
        }
        Ok((Some(critic_loss / cfg.updates_per_iteration as f64), actor_loss))
    }

    fn into_run(self, log: TrainLog, backbone: Option<MlpNetwork>) -> TrainRun {
        TrainRun {
            log,
            actor: self.actor,
            critics: self.critics.into_iter().map(|c| c.net).collect(),
            backbone,
        }
    }
}

/// Empties `buffer` when the mid-voltage bracket moves. Returns whether a
/// reset happened.
pub fn maybe_reset_buffer(buffer: &mut ReplayBuffer, prev: Option<BandBracket>, new: BandBracket) -> bool {
    match prev {
        Some(p) if p != new => {
            buffer.clear();
            true
        }
        _ => false,
    }
}

fn run_loop<E: BanditEnv + ?Sized>(
    env: &E,
    cfg: &AgentConfig,
    mut ac: ActorCritic,
    mut buffer: ReplayBuffer,
    mut log: TrainLog,
    backbone: Option<MlpNetwork>,
) -> Result<TrainRun, AgentError> {
    let bounds = env.bounds();
    let reward_cfg = env.reward_config().clone();
    let piecewise = reward_cfg.kind == RewardKind::Piecewise;
    let noise = cfg.noise();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, "noise"));
    let mut prev_bracket = None;

    for t in 0..cfg.iterations {
        let start = Instant::now();
        let iteration = t + 1;
        let mu = ac.policy_action()?;
        let eps = noise.sample(t, mu.len(), &mut rng);
        let values: Vec<f64> = mu
            .iter()
            .zip(&eps)
            .map(|(m, e)| (m + e).clamp(bounds.0, bounds.1))
            .collect();
        let ep = env.step(&Action::new(values))?;

        let bracket = (!ep.observation.degenerate)
            .then(|| rewards::bracket(&ep.observation, &reward_cfg).ok())
            .flatten();
        let mut reset = false;
        if let (true, Some(b)) = (piecewise, bracket) {
            reset = maybe_reset_buffer(&mut buffer, prev_bracket, b);
            prev_bracket = Some(b);
        }
        buffer.push(Experience {
            action: ep.action.clone(),
            state: ep.observation.clone(),
            reward: ep.reward,
        });

        let learned = ac.learn(iteration, &mut buffer, cfg);
        let (critic_loss, actor_loss) = learned.as_ref().map(|l| *l).unwrap_or((None, None));
        log.push(
            record(iteration, &ep, bracket, critic_loss, actor_loss, reset, buffer.len(), start),
            &ep,
        );
        if learned.is_err() {
            return Err(AgentError::TrainingDiverged { iteration, run: Box::new(ac.into_run(log, backbone)) });
        }
    }
    Ok(ac.into_run(log, backbone))
}

#[allow(clippy::too_many_arguments)]
pub(super) fn record(
    iteration: usize,
    ep: &EpisodeRecord,
    bracket: Option<BandBracket>,
    critic_loss: Option<f64>,
    actor_loss: Option<f64>,
    buffer_reset: bool,
    buffer_len: usize,
    start: Instant,
) -> IterationRecord {
    IterationRecord {
        iteration,
        action: ep.action.values.clone(),
        state: ep.observation.v.clone(),
        reward: ep.reward,
        bracket,
        degenerate: ep.observation.degenerate,
        critic_loss,
        actor_loss,
        buffer_reset,
        buffer_len,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

struct Setup {
    actor: MlpNetwork,
    state: Vec<f64>,
    buffer: ReplayBuffer,
}

fn setup<E: BanditEnv + ?Sized>(env: &E, cfg: &AgentConfig) -> Result<Setup, AgentError> {
    cfg.validate()?;
    let state = env.initial_state()?.v;
    let specs = actor_specs(env.state_dim(), env.action_dim(), cfg.hidden, env.bounds());
    Ok(Setup {
        actor: MlpNetwork::new(&specs, split_seed(cfg.seed, "actor"))?,
        state,
        buffer: ReplayBuffer::new(cfg.buffer_capacity, split_seed(cfg.seed, "replay")),
    })
}

fn fresh_critic<E: BanditEnv + ?Sized>(env: &E, cfg: &AgentConfig, stream: &str) -> Result<MlpNetwork, NnError> {
    MlpNetwork::new(
        &critic_specs(env.action_dim(), env.state_dim(), cfg.hidden),
        split_seed(cfg.seed, stream),
    )
}

/// Overwrites all but the last layer of `critic` with `backbone`.
pub fn transfer_backbone(critic: &mut MlpNetwork, backbone: &MlpNetwork) -> Result<(), NnError> {
    let n = critic.layers.len();
    let fits = backbone.layers.len() + 1 == n
        && critic.layers.iter().zip(&backbone.layers).all(|(c, b)| c.spec == b.spec);
    if !fits {
        return Err(NnError::ArchitectureMismatch);
    }
    critic.layers[..n - 1].clone_from_slice(&backbone.layers);
    Ok(())
}

/// Cold-start DDPG on the bandit.
pub fn ddpg_train<E: BanditEnv + ?Sized>(env: &E, cfg: &AgentConfig) -> Result<TrainRun, AgentError> {
    let s = setup(env, cfg)?;
    let critic = fresh_critic(env, cfg, "critic")?;
    let ac = ActorCritic::new(s.actor, vec![critic], cfg, env.bounds(), s.state, 1);
    run_loop(env, cfg, ac, s.buffer, TrainLog::new(Algorithm::Ddpg.as_str()), None)
}

/// TD3: twin critics on a shared minibatch, the first one steering a
/// delayed actor.
pub fn td3_train<E: BanditEnv + ?Sized>(env: &E, cfg: &AgentConfig) -> Result<TrainRun, AgentError> {
    let s = setup(env, cfg)?;
    let critics = vec![fresh_critic(env, cfg, "critic")?, fresh_critic(env, cfg, "critic-twin")?];
    let ac = ActorCritic::new(s.actor, critics, cfg, env.bounds(), s.state, cfg.td3_policy_delay);
    run_loop(env, cfg, ac, s.buffer, TrainLog::new(Algorithm::Td3.as_str()), None)
}

/// DDPG whose critic starts from a state predictor fitted on uniformly
/// sampled, parallel evaluations. Only the critic's output layer is fresh.
pub fn ddpg_parallel_train<E: BanditEnv + ?Sized>(env: &E, cfg: &AgentConfig) -> Result<TrainRun, AgentError> {
    let mut s = setup(env, cfg)?;
    let pre = pretrain_backbone(env, cfg)?;
    let mut critic = fresh_critic(env, cfg, "critic")?;
    transfer_backbone(&mut critic, &pre.network)?;

    if cfg.seed_buffer {
        for ep in &pre.records {
            s.buffer.push(Experience {
                action: ep.action.clone(),
                state: ep.observation.clone(),
                reward: ep.reward,
            });
        }
    }
    let mut log = TrainLog::new(Algorithm::DdpgParallel.as_str());
    log.pretrain_evaluations = pre.records.len();
    log.pretrain_degenerate = pre.degenerate;

    let ac = ActorCritic::new(s.actor, vec![critic], cfg, env.bounds(), s.state, 1);
    run_loop(env, cfg, ac, s.buffer, log, Some(pre.network))
}

/// Dispatches on `cfg.algorithm`.
pub fn train<E: BanditEnv + ?Sized>(env: &E, cfg: &AgentConfig) -> Result<TrainRun, AgentError> {
    match cfg.algorithm {
        Algorithm::Ddpg => ddpg_train(env, cfg),
        Algorithm::Td3 => td3_train(env, cfg),
        Algorithm::DdpgParallel => ddpg_parallel_train(env, cfg),
    }
}
