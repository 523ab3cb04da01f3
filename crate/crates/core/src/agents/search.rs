use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pretrain::uniform_actions;
use super::trainer::record;
use super::{split_seed, AgentError, TrainLog};
use crate::environment::{evaluate_batch, BanditEnv};
use crate::rewards;

/// Undirected baseline: `budget` uniform actions from the box.
pub fn random_search<E: BanditEnv + ?Sized>(
    env: &E,
    budget: usize,
    seed: u64,
    workers: usize,
) -> Result<TrainLog, AgentError> {
    if budget == 0 {
        return Err(AgentError::Config("budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, "search"));
    let actions = uniform_actions(&mut rng, budget, env.action_dim(), env.bounds());
    let start = Instant::now();
    let results = evaluate_batch(env, &actions, workers)?;
    let reward_cfg = env.reward_config();

    let mut log = TrainLog::new("random");
    for (k, res) in results.into_iter().enumerate() {
        let ep = res?;
        let bracket = (!ep.observation.degenerate)
            .then(|| rewards::bracket(&ep.observation, reward_cfg).ok())
            .flatten();
        let mut rec = record(k + 1, &ep, bracket, None, None, false, 0, start);
        rec.wall_ms = ep.wall_time * 1e3;
        log.push(rec, &ep);
    }
    Ok(log)
}
