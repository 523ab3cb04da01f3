//! Analytic backpropagation against central finite differences.

use gridflow_core::neural::{Activation, LayerSpec, MlpNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-5;

/// Bounded outputs are only legal on the last layer.
fn activation(k: usize, last: bool, rng: &mut ChaCha8Rng) -> Activation {
    match k % if last { 4 } else { 3 } {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        2 => Activation::Identity,
        _ => {
            let low = rng.random_range(-2.0..1.0);
            Activation::BoundedAffine {
                low,
                high: low + rng.random_range(0.1..3.0),
            }
        }
    }
}

pub fn random_case(seed: u64) -> (MlpNetwork, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        dims.push(rng.random_range(1..=6));
    }
    let specs: Vec<LayerSpec> = (0..depth)
        .map(|l| {
            LayerSpec::new(
                dims[l],
                dims[l + 1],
                activation(seed as usize + l, l + 1 == depth, &mut rng),
            )
        })
        .collect();
    let net = MlpNetwork::new(&specs, seed).unwrap();
    let x = (0..dims[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
    let u = (0..dims[depth])
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    (net, x, u)
}

/// Scalar objective `u . f(x)`.
fn objective(net: &MlpNetwork, x: &[f64], u: &[f64]) -> f64 {
    net.forward(x)
        .unwrap()
        .iter()
        .zip(u)
        .map(|(a, b)| a * b)
        .sum()
}

/// Whether `x` puts any ReLU unit within reach of its kink.
fn near_kink(net: &MlpNetwork, x: &[f64]) -> bool {
    let trace = net.forward_trace(x).unwrap();
    net.layers
        .iter()
        .zip(&trace.pre_activations)
        .any(|(l, z)| l.spec.activation == Activation::Relu && z.iter().any(|v| v.abs() < 1e-3))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Checks `count` random (net, input) pairs; returns how many were compared.
pub fn check_random_nets(count: usize) -> Result<usize, String> {
    let mut covered = [false; 4];
    let mut checked = 0;
    let mut seed = 0;
    while checked < count {
        seed += 1;
        let (net, x, u) = random_case(seed);
        if near_kink(&net, &x) {
            continue;
        }
        checked += 1;
        for l in &net.layers {
            covered[match l.spec.activation {
                Activation::Relu => 0,
                Activation::Tanh => 1,
                Activation::Identity => 2,
                Activation::BoundedAffine { .. } => 3,
            }] = true;
        }

        let (grads, input_grad) = net.backward(&x, &u).map_err(|e| e.to_string())?;
        for (li, layer) in net.layers.iter().enumerate() {
            for wi in 0..layer.weights.len() {
                let mut plus = net.clone();
                plus.layers[li].weights[wi] += H;
                let mut minus = net.clone();
                minus.layers[li].weights[wi] -= H;
                let fd = (objective(&plus, &x, &u) - objective(&minus, &x, &u)) / (2.0 * H);
                let an = grads.layers[li].weights[wi];
                if rel_err(an, fd).is_nan() || rel_err(an, fd) >= REL_TOL {
                    return Err(format!("seed {seed} layer {li} weight {wi}: {an} vs {fd}"));
                }
            }
            for bi in 0..layer.bias.len() {
                let mut plus = net.clone();
                plus.layers[li].bias[bi] += H;
                let mut minus = net.clone();
                minus.layers[li].bias[bi] -= H;
                let fd = (objective(&plus, &x, &u) - objective(&minus, &x, &u)) / (2.0 * H);
                let an = grads.layers[li].bias[bi];
                if rel_err(an, fd).is_nan() || rel_err(an, fd) >= REL_TOL {
                    return Err(format!("seed {seed} layer {li} bias {bi}: {an} vs {fd}"));
                }
            }
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += H;
            let mut xm = x.clone();
            xm[k] -= H;
            let fd = (objective(&net, &xp, &u) - objective(&net, &xm, &u)) / (2.0 * H);
            if rel_err(input_grad[k], fd).is_nan() || rel_err(input_grad[k], fd) >= REL_TOL {
                return Err(format!("seed {seed} input {k}: {} vs {fd}", input_grad[k]));
            }
        }
    }
    if covered != [true; 4] {
        return Err(format!("activations exercised: {covered:?}"));
    }
    Ok(checked)
}
