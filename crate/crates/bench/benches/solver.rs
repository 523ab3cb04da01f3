use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gridflow_core::environment::{evaluate_batch, Action, BanditEnv, GridEnv, Scenario, SolverConfig};
use gridflow_core::grid_model::GridCase;
use gridflow_core::powerflow::{build_ybus, solve, DEFAULT_MAX_ITER, DEFAULT_TOL};
use gridflow_core::rewards::RewardConfig;

fn power_flow(c: &mut Criterion) {
    let case = GridCase::ieee14();
    c.bench_function("ybus_ieee14", |b| b.iter(|| build_ybus(black_box(&case)).unwrap()));
    c.bench_function("solve_ieee14", |b| b.iter(|| solve(black_box(&case), DEFAULT_TOL, DEFAULT_MAX_ITER)));

    let env = GridEnv::new(case, Scenario::scenario_1(), RewardConfig::default(), SolverConfig::default()).unwrap();
    let action = Action::new(vec![1.07, 1.0, 1.02, 1.0]);
    c.bench_function("env_step_scenario_1", |b| b.iter(|| env.step(black_box(&action)).unwrap()));

    let actions: Vec<Action> = (0..64)
        .map(|k| Action::new(vec![1.0 + 0.001 * k as f64, 1.0, 1.02, 1.0]))
        .collect();
    let mut g = c.benchmark_group("evaluate_batch_64");
    for workers in [1, 4] {
        g.bench_function(format!("workers_{workers}"), |b| {
            b.iter(|| evaluate_batch(&env, black_box(&actions), workers).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, power_flow);
criterion_main!(benches);
