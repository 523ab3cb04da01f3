use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{critic_specs, normalise, split_seed, AgentConfig, AgentError};
use crate::environment::{evaluate_batch, Action, BanditEnv, EpisodeRecord};
use crate::neural::{apply_gradients, Gradients, LayerSpec, MlpNetwork, OptimizerState};

const MINIBATCH: usize = 32;

/// All but the critic's output layer: action in, predicted bus voltages out.
pub fn backbone_specs(action_dim: usize, state_dim: usize, hidden: usize) -> Vec<LayerSpec> {
    let mut specs = critic_specs(action_dim, state_dim, hidden);
    specs.pop();
    specs
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub network: MlpNetwork,
    /// Every evaluation drawn, degenerate ones included, in draw order.
    pub records: Vec<EpisodeRecord>,
    pub degenerate: usize,
}

/// Uniform actions in `bounds`, drawn component-wise.
pub(super) fn uniform_actions<R: Rng>(rng: &mut R, count: usize, dim: usize, bounds: (f64, f64)) -> Vec<Action> {
    (0..count)
        .map(|_| Action::new((0..dim).map(|_| rng.random_range(bounds.0..=bounds.1)).collect()))
        .collect()
}

/// Fits a state predictor on `pretrain_count` uniformly drawn actions,
/// evaluated on `workers` threads.
pub fn pretrain_backbone<E: BanditEnv + ?Sized>(env: &E, cfg: &AgentConfig) -> Result<Pretrained, AgentError> {
    if cfg.pretrain_count == 0 {
        return Err(AgentError::Config("pretrain_count must be at least 1".into()));
    }
    let bounds = env.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, "pretrain-actions"));
    let actions = uniform_actions(&mut rng, cfg.pretrain_count, env.action_dim(), bounds);
    let records = evaluate_batch(env, &actions, cfg.workers)?
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let samples: Vec<(Vec<f64>, Vec<f64>)> = records
        .iter()
        .filter(|r| !r.observation.degenerate)
        .map(|r| (r.action.values.clone(), r.observation.v.clone()))
        .collect();
    if samples.is_empty() {
        return Err(AgentError::AllDegenerate);
    }

    let specs = backbone_specs(env.action_dim(), env.state_dim(), cfg.hidden);
    let mut network = MlpNetwork::new(&specs, split_seed(cfg.seed, "backbone"))?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, "pretrain-batches"));
    fit_states(&mut network, &samples, bounds, cfg.pretrain_epochs, cfg.pretrain_lr, &mut batch_rng)?;

    let degenerate = records.len() - samples.len();
    Ok(Pretrained { network, records, degenerate })
}

/// Minibatch Adam on the mean squared state-prediction error.
fn fit_states(
    net: &mut MlpNetwork,
    samples: &[(Vec<f64>, Vec<f64>)],
    bounds: (f64, f64),
    epochs: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(), AgentError> {
    let mut opt = OptimizerState::adam(net, lr);
    let inputs: Vec<Vec<f64>> = samples.iter().map(|(a, _)| normalise(a, bounds)).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(MINIBATCH) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = Gradients::zeros_like(net);
            for &i in chunk {
                let trace = net.forward_trace(&inputs[i])?;
                let upstream: Vec<f64> = trace
                    .output()
                    .iter()
                    .zip(&samples[i].1)
                    .map(|(p, s)| 2.0 * (p - s) * scale)
                    .collect();
                let (g, _) = net.backward_trace(&trace, &upstream)?;
                grads.add_scaled(&g, 1.0);
            }
            apply_gradients(net, &mut opt, &grads)?;
        }
    }
    Ok(())
}

/// Root-mean-square prediction error over `(action, state)` pairs.
pub fn state_rmse(net: &MlpNetwork, samples: &[(Vec<f64>, Vec<f64>)], bounds: (f64, f64)) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, s) in samples {
        let pred = net.forward(&normalise(a, bounds)).expect("backbone shape");
        sum += pred.iter().zip(s).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        count += s.len();
    }
    (sum / count.max(1) as f64).sqrt()
}
