//! Single-step bandit environment: write generator voltage references into
//! a faulted grid, solve the steady state and score the bus voltages.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_model::{BusKind, GridCase};
use crate::powerflow::{self, PowerFlowSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rewards::{self, RewardConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action has {got} components, layout expects {expected}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("action component {index} = {value} outside [{low}, {high}]")]
    OutOfBounds { index: usize, value: f64, low: f64, high: f64 },
    #[error("scenario {0} has no feasible post-fault operating point")]
    InfeasibleScenario(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub offline_generators: BTreeSet<usize>,
    /// Generator buses whose voltage reference each action component sets.
    pub action_layout: Vec<usize>,
    pub v_ref_bounds: (f64, f64),
}

pub const DEFAULT_V_REF_BOUNDS: (f64, f64) = (0.90, 1.15);

impl Scenario {
    /// Generator 2 tripped.
    pub fn scenario_1() -> Self {
        Scenario {
            name: "scenario-1".into(),
            offline_generators: BTreeSet::from([2]),
            action_layout: vec![1, 3, 6, 8],
            v_ref_bounds: DEFAULT_V_REF_BOUNDS,
        }
    }

    /// Generators 2 and 8 tripped.
    pub fn scenario_2() -> Self {
        Scenario {
            name: "scenario-2".into(),
            offline_generators: BTreeSet::from([2, 8]),
            action_layout: vec![1, 3, 6],
            v_ref_bounds: DEFAULT_V_REF_BOUNDS,
        }
    }

    /// The fault-free case with every generator controllable.
    pub fn intact(case: &GridCase) -> Self {
        Scenario {
            name: "intact".into(),
            offline_generators: BTreeSet::new(),
            action_layout: case.generators.iter().filter(|g| g.online).map(|g| g.bus).collect(),
            v_ref_bounds: DEFAULT_V_REF_BOUNDS,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "scenario-1" => Some(Self::scenario_1()),
            "scenario-2" => Some(Self::scenario_2()),
            _ => None,
        }
    }

    pub fn validate(&self, case: &GridCase) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidScenario(format!("{}: {m}", self.name)));
        if self.action_layout.is_empty() {
            return bad("empty action layout".into());
        }
        let (lo, hi) = self.v_ref_bounds;
        if !(lo < hi && lo > 0.0 && hi.is_finite()) {
            return bad(format!("bad v_ref_bounds ({lo}, {hi})"));
        }
        let mut seen = BTreeSet::new();
        for &b in &self.action_layout {
            if self.offline_generators.contains(&b) {
                return bad(format!("generator {b} is both offline and controlled"));
            }
            if !seen.insert(b) {
                return bad(format!("generator {b} listed twice in layout"));
            }
            match case.generator_at(b) {
                Some(g) if g.online => {}
                _ => return bad(format!("no online generator on bus {b}")),
            }
        }
        for &b in &self.offline_generators {
            let Some(i) = case.bus_index(b) else {
                return bad(format!("unknown bus {b}"));
            };
            if case.generator_at(b).is_none() {
                return bad(format!("no generator on bus {b}"));
            }
            if case.buses[i].kind == BusKind::Slack {
                return bad(format!("slack generator {b} cannot be taken offline"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub values: Vec<f64>,
}

impl Action {
    pub fn new(values: Vec<f64>) -> Self {
        Action { values }
    }

    /// Clamps into `bounds`; the flag reports whether anything moved.
    pub fn clipped(&self, bounds: (f64, f64)) -> (Action, bool) {
        let values: Vec<f64> = self.values.iter().map(|v| v.clamp(bounds.0, bounds.1)).collect();
        let moved = values != self.values;
        (Action { values }, moved)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Bus voltage magnitudes in bus order; all zeros when degenerate.
    pub v: Vec<f64>,
    pub degenerate: bool,
}

impl Observation {
    pub fn degenerate(n: usize) -> Self {
        Observation { v: vec![0.0; n], degenerate: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub action: Action,
    pub observation: Observation,
    pub reward: f64,
    /// Seconds spent in the solve; excluded from reproducibility checks.
    pub wall_time: f64,
}

/// Solver settings shared by every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// A converged solution with any bus below this magnitude sits on the
    /// collapsed branch of the voltage curve and is treated as degenerate.
    pub collapse_voltage: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, collapse_voltage: 0.85 }
    }
}

/// A deterministic single-step environment.
pub trait BanditEnv: Sync {
    fn action_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn bounds(&self) -> (f64, f64);
    fn reward_config(&self) -> &RewardConfig;
    /// The fixed state the policy conditions on.
    fn initial_state(&self) -> Result<Observation, EnvError>;
    fn step(&self, action: &Action) -> Result<EpisodeRecord, EnvError>;
}

/// Immutable bundle of faulted case, scenario and reward settings.
#[derive(Debug, Clone)]
pub struct GridEnv {
    case: GridCase,
    faulted: GridCase,
    scenario: Scenario,
    reward: RewardConfig,
    solver: SolverConfig,
}

impl GridEnv {
    pub fn new(
        case: GridCase,
        scenario: Scenario,
        reward: RewardConfig,
        solver: SolverConfig,
    ) -> Result<Self, EnvError> {
        scenario.validate(&case)?;
        reward.validate().map_err(|e| EnvError::InvalidScenario(e.to_string()))?;
        let faulted = apply_outages(&case, &scenario.offline_generators);
        Ok(GridEnv { case, faulted, scenario, reward, solver })
    }

    pub fn case(&self) -> &GridCase {
        &self.case
    }

    /// The case with the scenario's generators removed and default set points.
    pub fn faulted_case(&self) -> &GridCase {
        &self.faulted
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    /// Scheduled voltage references of the controlled generators.
    pub fn default_action(&self) -> Action {
        Action::new(
            self.scenario
                .action_layout
                .iter()
                .map(|&b| self.case.generator_at(b).expect("validated layout").v_set)
                .collect(),
        )
    }

    fn check(&self, action: &Action) -> Result<(), EnvError> {
        let expected = self.scenario.action_layout.len();
        if action.values.len() != expected {
            return Err(EnvError::LayoutMismatch { expected, got: action.values.len() });
        }
        let (low, high) = self.scenario.v_ref_bounds;
        for (index, &value) in action.values.iter().enumerate() {
            if !(value >= low && value <= high) {
                return Err(EnvError::OutOfBounds { index, value, low, high });
            }
        }
        Ok(())
    }

    /// The faulted case with `action` written into the voltage references.
    pub fn case_for(&self, action: &Action) -> Result<GridCase, EnvError> {
        let expected = self.scenario.action_layout.len();
        if action.values.len() != expected {
            return Err(EnvError::LayoutMismatch { expected, got: action.values.len() });
        }
        let mut case = self.faulted.clone();
        for (&bus, &v) in self.scenario.action_layout.iter().zip(&action.values) {
            case.generator_at_mut(bus).expect("validated layout").v_set = v;
        }
        Ok(case)
    }

    pub fn solve_case(&self, case: &GridCase) -> PowerFlowSolution {
        powerflow::solve(case, self.solver.tol, self.solver.max_iter)
    }

    fn observe(&self, sol: &PowerFlowSolution) -> Observation {
        let collapsed = sol.v_mag.iter().any(|&v| !(v >= self.solver.collapse_voltage));
        if !sol.converged || collapsed {
            Observation::degenerate(sol.v_mag.len())
        } else {
            Observation { v: sol.v_mag.clone(), degenerate: false }
        }
    }
}

/// Takes generators offline: the bus keeps its load and becomes PQ.
pub fn apply_outages(case: &GridCase, offline: &BTreeSet<usize>) -> GridCase {
    let mut out = case.clone();
    for &bus in offline {
        if let Some(g) = out.generator_at_mut(bus) {
            g.online = false;
        }
        if let Some(i) = out.bus_index(bus) {
            if out.buses[i].kind == BusKind::PV {
                out.buses[i].kind = BusKind::PQ;
            }
        }
    }
    out
}

impl BanditEnv for GridEnv {
    fn action_dim(&self) -> usize {
        self.scenario.action_layout.len()
    }

    fn state_dim(&self) -> usize {
        self.case.n_buses()
    }

    fn bounds(&self) -> (f64, f64) {
        self.scenario.v_ref_bounds
    }

    fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    fn initial_state(&self) -> Result<Observation, EnvError> {
        let sol = self.solve_case(&self.faulted);
        let obs = self.observe(&sol);
        if obs.degenerate {
            Err(EnvError::InfeasibleScenario(self.scenario.name.clone()))
        } else {
            Ok(obs)
        }
    }

    fn step(&self, action: &Action) -> Result<EpisodeRecord, EnvError> {
        self.check(action)?;
        let start = Instant::now();
        let case = self.case_for(action)?;
        let sol = self.solve_case(&case);
        let observation = self.observe(&sol);
        let reward = rewards::reward(&observation, &self.reward);
        Ok(EpisodeRecord {
            action: action.clone(),
            observation,
            reward,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }
}

/// Evaluates `actions` on `workers` threads. Output order matches input
/// order and every slot carries its own result.
pub fn evaluate_batch<E: BanditEnv + ?Sized>(
    env: &E,
    actions: &[Action],
    workers: usize,
) -> Result<Vec<Result<EpisodeRecord, EnvError>>, EnvError> {
    if workers == 0 {
        return Err(EnvError::Pool("workers must be at least 1".into()));
    }
    if actions.is_empty() {
        return Ok(Vec::new());
    }
    if workers == 1 {
        return Ok(actions.iter().map(|a| env.step(a)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EnvError::Pool(e.to_string()))?;
    Ok(pool.install(|| actions.par_iter().map(|a| env.step(a)).collect()))
}
