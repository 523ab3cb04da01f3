mod common;

use common::gradcheck::{check_random_nets, random_case};

#[test]
fn parameter_and_input_gradients_match_finite_differences() {
    let checked = check_random_nets(60).unwrap();
    assert_eq!(checked, 60);
}

#[test]
fn gradients_accumulate_linearly() {
    let (net, x, u) = random_case(3);
    let (g1, _) = net.backward(&x, &u).unwrap();
    let doubled: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
    let (g2, _) = net.backward(&x, &doubled).unwrap();
    let mut sum = g1.clone();
    sum.add_scaled(&g1, 1.0);
    for (a, b) in sum.layers.iter().zip(&g2.layers) {
        for (p, q) in a.weights.iter().zip(&b.weights) {
            assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }
}
