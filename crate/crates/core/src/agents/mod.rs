//! Actor-critic agents specialised to the single-step voltage bandit.
//!
//! Every episode is one action from the same fixed state, so the critic's
//! regression target is the observed reward itself; there is no bootstrap
//! term and no discount.

mod log;
mod noise;
mod pretrain;
mod replay;
mod search;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::EnvError;
use crate::neural::NnError;

pub use log::{IterationRecord, TrainLog, CSV_FIXED_COLUMNS};
pub use noise::GaussianNoise;
pub use pretrain::{backbone_specs, pretrain_backbone, state_rmse, Pretrained};
pub use replay::{Experience, ReplayBuffer};
pub use search::random_search;
pub use trainer::{
    actor_specs, critic_specs, ddpg_parallel_train, ddpg_train, maybe_reset_buffer, td3_train, train,
    transfer_backbone,
    ActorCritic, TrainRun,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("every pretraining evaluation was degenerate")]
    AllDegenerate,
    #[error("training diverged at iteration {iteration}")]
    TrainingDiverged { iteration: usize, run: Box<TrainRun> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ddpg,
    Td3,
    DdpgParallel,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Td3 => "td3",
            Algorithm::DdpgParallel => "ddpg-parallel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ddpg" => Some(Algorithm::Ddpg),
            "td3" => Some(Algorithm::Td3),
            "ddpg-parallel" => Some(Algorithm::DdpgParallel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    /// Exploration noise standard deviation in p.u. at iteration 0.
    pub noise_sigma: f64,
    pub noise_decay: f64,
    pub noise_floor: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub iterations: usize,
    /// Critic gradient steps per environment evaluation. The actor takes
    /// at most one step per evaluation.
    pub updates_per_iteration: usize,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: usize,
    /// TD3 updates the actor and targets on every n-th iteration only.
    pub td3_policy_delay: usize,
    /// Target-action smoothing noise, in normalised action units. Every
    /// episode is terminal, so the critic target never queries the target
    /// actor and this has no effect; it is kept so logged configs are complete.
    pub td3_target_noise: f64,
    /// Uniform evaluations drawn before training the state predictor.
    pub pretrain_count: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Keep the pretraining evaluations in the replay buffer.
    pub seed_buffer: bool,
    pub workers: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            algorithm: Algorithm::Ddpg,
            noise_sigma: 0.05,
            noise_decay: 0.995,
            noise_floor: 0.005,
            batch_size: 64,
            buffer_capacity: 2000,
            iterations: 500,
            updates_per_iteration: 16,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            hidden: 64,
            td3_policy_delay: 2,
            td3_target_noise: 0.2,
            pretrain_count: 150,
            pretrain_epochs: 300,
            pretrain_lr: 1e-3,
            seed_buffer: true,
            workers: 1,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.hidden == 0 {
            return bad("batch_size, buffer_capacity and hidden must be positive");
        }
        if self.updates_per_iteration == 0 {
            return bad("updates_per_iteration must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_floor >= 0.0 && self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return bad("noise parameters out of range");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.pretrain_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.td3_policy_delay == 0 {
            return bad("td3_policy_delay must be at least 1");
        }
        if self.algorithm == Algorithm::DdpgParallel && (self.pretrain_count == 0 || self.pretrain_epochs == 0) {
            return bad("pretrain_count and pretrain_epochs must be at least 1");
        }
        Ok(())
    }

    pub fn noise(&self) -> GaussianNoise {
        GaussianNoise { sigma: self.noise_sigma, decay: self.noise_decay, floor: self.noise_floor }
    }
}

/// Derives an independent seed for one consumer of randomness from the run's
/// master seed.
pub fn split_seed(master: u64, stream: &str) -> u64 {
    // FNV-1a over the stream name, then a SplitMix64 finaliser
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps an action into `[-1, 1]` per component.
pub(crate) fn normalise(values: &[f64], bounds: (f64, f64)) -> Vec<f64> {
    let mid = 0.5 * (bounds.0 + bounds.1);
    let half = 0.5 * (bounds.1 - bounds.0);
    values.iter().map(|v| (v - mid) / half).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seeds_differ_per_stream() {
        assert_ne!(split_seed(1, "noise"), split_seed(1, "actor"));
        assert_ne!(split_seed(1, "noise"), split_seed(2, "noise"));
        assert_eq!(split_seed(5, "noise"), split_seed(5, "noise"));
    }

    #[test]
    fn parallel_needs_pretraining() {
        let cfg = AgentConfig { algorithm: Algorithm::DdpgParallel, pretrain_count: 0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(AgentError::Config(_))));
        assert!(AgentConfig::default().validate().is_ok());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: AgentConfig = serde_json::from_str(r#"{"algorithm": "td3", "seed": 9}"#).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Td3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.batch_size, 64);
    }
}
