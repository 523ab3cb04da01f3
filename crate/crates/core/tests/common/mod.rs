#![allow(dead_code)]

pub mod gauss_seidel;
pub mod gradcheck;

use std::sync::atomic::{AtomicUsize, Ordering};

use gridflow_core::environment::{Action, BanditEnv, EnvError, EpisodeRecord, Observation};
use gridflow_core::rewards::{self, RewardConfig};

fn episode(action: &Action, v: Vec<f64>, reward: f64) -> EpisodeRecord {
    EpisodeRecord { action: action.clone(), observation: Observation { v, degenerate: false }, reward, wall_time: 0.0 }
}

/// `r = -|a - target|^2`, state fixed.
pub struct QuadraticEnv {
    pub target: Vec<f64>,
    pub bounds: (f64, f64),
    pub reward: RewardConfig,
}

impl QuadraticEnv {
    pub fn new(target: Vec<f64>) -> Self {
        QuadraticEnv { target, bounds: (-1.0, 1.0), reward: RewardConfig::default() }
    }
}

impl BanditEnv for QuadraticEnv {
    fn action_dim(&self) -> usize {
        self.target.len()
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
    fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }
    fn initial_state(&self) -> Result<Observation, EnvError> {
        Ok(Observation { v: vec![1.0, 0.98, 1.02], degenerate: false })
    }
    fn step(&self, action: &Action) -> Result<EpisodeRecord, EnvError> {
        let d: f64 = action.values.iter().zip(&self.target).map(|(a, t)| (a - t) * (a - t)).sum();
        Ok(episode(action, vec![1.0, 0.98, 1.02], -d))
    }
}

/// Reward 0 everywhere.
pub struct ConstantEnv {
    pub reward: RewardConfig,
}

impl BanditEnv for ConstantEnv {
    fn action_dim(&self) -> usize {
        2
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn bounds(&self) -> (f64, f64) {
        (0.9, 1.1)
    }
    fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }
    fn initial_state(&self) -> Result<Observation, EnvError> {
        Ok(Observation { v: vec![1.0; 3], degenerate: false })
    }
    fn step(&self, action: &Action) -> Result<EpisodeRecord, EnvError> {
        Ok(episode(action, vec![1.0; 3], 0.0))
    }
}

/// State is an exact linear map of the action.
pub struct LinearEnv {
    /// Row-major, `state_dim x action_dim`.
    pub a: Vec<Vec<f64>>,
    pub reward: RewardConfig,
}

impl LinearEnv {
    pub fn new() -> Self {
        LinearEnv {
            a: vec![vec![0.5, 0.1], vec![-0.2, 0.4], vec![0.3, 0.3]],
            reward: RewardConfig::default(),
        }
    }
    pub fn state(&self, action: &[f64]) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().zip(action).map(|(w, x)| w * x).sum()).collect()
    }
}

impl BanditEnv for LinearEnv {
    fn action_dim(&self) -> usize {
        2
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn bounds(&self) -> (f64, f64) {
        (0.9, 1.1)
    }
    fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }
    fn initial_state(&self) -> Result<Observation, EnvError> {
        Ok(Observation { v: self.state(&[1.0, 1.0]), degenerate: false })
    }
    fn step(&self, action: &Action) -> Result<EpisodeRecord, EnvError> {
        let v = self.state(&action.values);
        Ok(episode(action, v, 0.0))
    }
}

/// Replays a fixed sequence of voltage profiles, one per step, regardless
/// of the action; the reward is computed from the profile.
pub struct ScriptedEnv {
    pub script: Vec<Vec<f64>>,
    pub reward: RewardConfig,
    calls: AtomicUsize,
}

impl ScriptedEnv {
    pub fn new(script: Vec<Vec<f64>>, reward: RewardConfig) -> Self {
        ScriptedEnv { script, reward, calls: AtomicUsize::new(0) }
    }
}

impl BanditEnv for ScriptedEnv {
    fn action_dim(&self) -> usize {
        2
    }
    fn state_dim(&self) -> usize {
        self.script[0].len()
    }
    fn bounds(&self) -> (f64, f64) {
        (0.9, 1.1)
    }
    fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }
    fn initial_state(&self) -> Result<Observation, EnvError> {
        Ok(Observation { v: vec![1.0; self.state_dim()], degenerate: false })
    }
    fn step(&self, action: &Action) -> Result<EpisodeRecord, EnvError> {
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        let v = self.script[k.min(self.script.len() - 1)].clone();
        let obs = Observation { v: v.clone(), degenerate: false };
        let r = rewards::reward(&obs, &self.reward);
        Ok(episode(action, v, r))
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
