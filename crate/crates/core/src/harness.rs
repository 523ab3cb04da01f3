//! Run configuration, experiment orchestration and on-disk artifacts.
//!
//! A run directory holds `train_log.csv`, `summary.json` and, for trained
//! agents, one JSON weight file per network.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{random_search, train, AgentConfig, AgentError, Algorithm, IterationRecord, TrainLog, TrainRun};
use crate::environment::{apply_outages, Action, BanditEnv, EnvError, EpisodeRecord, GridEnv, Scenario, SolverConfig};
use crate::grid_model::{load_case, CaseError, GridCase};
use crate::neural::NnError;
use crate::powerflow::{self, ConstraintReport, PowerFlowSolution};
use crate::rewards::{RewardConfig, RewardKind};

pub const LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TREND_FILE: &str = "trend.csv";
pub const ACTIONS_FILE: &str = "actions.csv";
pub const WORKERS_ENV: &str = "GRIDFLOW_WORKERS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(AgentError),
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("training diverged at iteration {iteration}; artifacts written to {}", .summary.output_dir.display())]
    Diverged { iteration: usize, summary: Box<RunSummary> },
    #[error("malformed log: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl HarnessError {
    /// 0 ok, 1 configuration, 2 non-convergence, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::NotConverged { .. } => 2,
            HarnessError::Diverged { .. } => 3,
            _ => 1,
        }
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(m) => HarnessError::Config(m),
            AgentError::Env(e) => HarnessError::Env(e),
            other => HarnessError::Agent(other),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// A preset name or a full inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Preset(String),
    Inline(Scenario),
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::Preset("scenario-1".into())
    }
}

impl ScenarioSpec {
    /// Presets are `scenario-1`, `scenario-2` and `intact`.
    pub fn resolve(&self, case: &GridCase) -> Result<Scenario, HarnessError> {
        match self {
            ScenarioSpec::Inline(s) => Ok(s.clone()),
            ScenarioSpec::Preset(name) if name == "intact" => Ok(Scenario::intact(case)),
            ScenarioSpec::Preset(name) => {
                Scenario::preset(name).ok_or_else(|| HarnessError::Config(format!("unknown scenario {name:?}")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Case file; the bundled IEEE 14-bus case when absent.
    pub case_path: Option<PathBuf>,
    pub scenario: ScenarioSpec,
    pub reward: RewardConfig,
    pub agent: AgentConfig,
    pub output_dir: PathBuf,
    pub solver: SolverConfig,
    /// Random-search evaluations; defaults to `agent.iterations`.
    pub budget: Option<usize>,
    #[serde(skip)]
    workers_explicit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case_path: None,
            scenario: ScenarioSpec::default(),
            reward: RewardConfig::default(),
            agent: AgentConfig::default(),
            output_dir: PathBuf::from("runs/latest"),
            solver: SolverConfig::default(),
            budget: None,
            workers_explicit: false,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub case_path: Option<PathBuf>,
    pub scenario: Option<String>,
    pub algorithm: Option<String>,
    pub reward: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub iterations: Option<usize>,
    pub budget: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

pub fn parse_reward_kind(s: &str) -> Option<RewardKind> {
    match s {
        "squared" | "squared-sum" | "squared_sum" => Some(RewardKind::SquaredSum),
        "piecewise" => Some(RewardKind::Piecewise),
        _ => None,
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut cfg: RunConfig = serde_json::from_value(raw.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.workers_explicit = raw.pointer("/agent/workers").is_some();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Precedence, highest first: flags, config file, `GRIDFLOW_WORKERS`
    /// (workers only), built-in defaults.
    pub fn apply(&mut self, o: &Overrides, env_workers: Option<&str>) -> Result<(), HarnessError> {
        if let Some(p) = &o.case_path {
            self.case_path = Some(p.clone());
        }
        if let Some(s) = &o.scenario {
            self.scenario = ScenarioSpec::Preset(s.clone());
        }
        if let Some(a) = &o.algorithm {
            self.agent.algorithm =
                Algorithm::parse(a).ok_or_else(|| HarnessError::Config(format!("unknown algorithm {a:?}")))?;
        }
        if let Some(r) = &o.reward {
            self.reward.kind =
                parse_reward_kind(r).ok_or_else(|| HarnessError::Config(format!("unknown reward {r:?}")))?;
        }
        if let Some(seed) = o.seed {
            self.agent.seed = seed;
        }
        if let Some(it) = o.iterations {
            self.agent.iterations = it;
        }
        if let Some(b) = o.budget {
            self.budget = Some(b);
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        match (o.workers, env_workers) {
            (Some(w), _) => self.agent.workers = w,
            (None, Some(v)) if !self.workers_explicit => {
                self.agent.workers = v
                    .trim()
                    .parse()
                    .map_err(|_| HarnessError::Config(format!("{WORKERS_ENV}={v:?} is not a worker count")))?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn load_case(&self) -> Result<GridCase, HarnessError> {
        match &self.case_path {
            Some(p) => Ok(load_case(p)?),
            None => Ok(GridCase::ieee14()),
        }
    }

    pub fn build_env(&self) -> Result<GridEnv, HarnessError> {
        let case = self.load_case()?;
        let scenario = self.scenario.resolve(&case)?;
        self.reward.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(GridEnv::new(case, scenario, self.reward.clone(), self.solver.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub scenario: String,
    pub seed: u64,
    pub best_action: Vec<f64>,
    pub best_reward: f64,
    pub best_voltages: Vec<f64>,
    /// Bus ids outside the reward band at the best solution.
    pub violated_buses: Vec<usize>,
    pub iterations_to_best: usize,
    /// Logged iterations plus any pretraining evaluations.
    pub total_evaluations: usize,
    pub pretrain_evaluations: usize,
    pub degenerate_count: usize,
    pub wall_time_s: f64,
    pub output_dir: PathBuf,
    pub config: RunConfig,
}

impl RunSummary {
    pub fn from_log(log: &TrainLog, env: &GridEnv, config: &RunConfig, wall_time_s: f64) -> Self {
        let best = log.best_solution.as_ref();
        let (lo, hi) = (config.reward.band_low, config.reward.band_high);
        let violated_buses = best
            .filter(|b| !b.observation.degenerate)
            .map(|b| {
                env.case()
                    .buses
                    .iter()
                    .zip(&b.observation.v)
                    .filter(|(_, &v)| v < lo || v > hi)
                    .map(|(bus, _)| bus.id)
                    .collect()
            })
            .unwrap_or_default();
        RunSummary {
            algorithm: log.algorithm.clone(),
            scenario: env.scenario().name.clone(),
            seed: config.agent.seed,
            best_action: best.map(|b| b.action.values.clone()).unwrap_or_default(),
            best_reward: best.map_or(f64::NAN, |b| b.reward),
            best_voltages: best.map(|b| b.observation.v.clone()).unwrap_or_default(),
            violated_buses,
            iterations_to_best: log.best_iteration.unwrap_or(0),
            total_evaluations: log.records.len() + log.pretrain_evaluations,
            pretrain_evaluations: log.pretrain_evaluations,
            degenerate_count: log.degenerate_count() + log.pretrain_degenerate,
            wall_time_s,
            output_dir: config.output_dir.clone(),
            config: config.clone(),
        }
    }

    /// Cross-checks the summary against the log rows it was built from.
    pub fn matches_records(&self, records: &[IterationRecord]) -> bool {
        let Some(best) = records.iter().map(|r| r.reward).max_by(f64::total_cmp) else {
            return false;
        };
        let first_best = records.iter().find(|r| r.reward == best).map(|r| r.iteration);
        let degenerate = records.iter().filter(|r| r.degenerate).count();
        records.len() + self.pretrain_evaluations == self.total_evaluations
            && best == self.best_reward
            && first_best == Some(self.iterations_to_best)
            && degenerate <= self.degenerate_count
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Format(e.to_string()))
    }
}

fn write_artifacts(dir: &Path, log: &TrainLog, summary: &RunSummary) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let log_path = dir.join(LOG_FILE);
    let file = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    log.write_csv(io::BufWriter::new(file)).map_err(|e| HarnessError::Io {
        path: log_path.clone(),
        source: io::Error::other(e),
    })?;
    let summary_path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&summary_path, json + "\n").map_err(io_err(&summary_path))
}

fn write_weights(dir: &Path, run: &TrainRun) -> Result<(), HarnessError> {
    let save = |name: &str, net: &crate::neural::MlpNetwork| -> Result<(), HarnessError> {
        let path = dir.join(name);
        net.save_weights(&path).map_err(|e| match e {
            NnError::Io(m) => HarnessError::Io { path, source: io::Error::other(m) },
            other => HarnessError::Agent(AgentError::Network(other)),
        })
    };
    save("actor.json", &run.actor)?;
    for (k, critic) in run.critics.iter().enumerate() {
        let name = if k == 0 { "critic.json".to_string() } else { format!("critic_{}.json", k + 1) };
        save(&name, critic)?;
    }
    if let Some(b) = &run.backbone {
        save("backbone.json", b)?;
    }
    Ok(())
}

/// Trains the configured agent and writes all artifacts. A diverged run
/// still flushes what it logged.
pub fn run_train(cfg: &RunConfig) -> Result<RunSummary, HarnessError> {
    let env = cfg.build_env()?;
    let start = Instant::now();
    let (run, diverged_at) = match train(&env, &cfg.agent) {
        Ok(run) => (run, None),
        Err(AgentError::TrainingDiverged { iteration, run }) => (*run, Some(iteration)),
        Err(e) => return Err(e.into()),
    };
    let summary = RunSummary::from_log(&run.log, &env, cfg, start.elapsed().as_secs_f64());
    write_artifacts(&cfg.output_dir, &run.log, &summary)?;
    write_weights(&cfg.output_dir, &run)?;
    match diverged_at {
        Some(iteration) => Err(HarnessError::Diverged { iteration, summary: Box::new(summary) }),
        None => Ok(summary),
    }
}

/// Uniform random search with the same artifacts as a training run.
pub fn run_baseline(cfg: &RunConfig) -> Result<RunSummary, HarnessError> {
    let env = cfg.build_env()?;
    let budget = cfg.budget.unwrap_or(cfg.agent.iterations);
    let start = Instant::now();
    let log = random_search(&env, budget, cfg.agent.seed, cfg.agent.workers)?;
    let summary = RunSummary::from_log(&log, &env, cfg, start.elapsed().as_secs_f64());
    write_artifacts(&cfg.output_dir, &log, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub record: EpisodeRecord,
    /// The requested values had to be clipped into the action box.
    pub clipped: bool,
    pub violated_buses: Vec<usize>,
}

/// One environment step. Out-of-box values are clipped, not rejected.
pub fn run_eval(cfg: &RunConfig, values: &[f64]) -> Result<EvalReport, HarnessError> {
    let env = cfg.build_env()?;
    let (action, clipped) = Action::new(values.to_vec()).clipped(env.bounds());
    let record = env.step(&action)?;
    let (lo, hi) = (cfg.reward.band_low, cfg.reward.band_high);
    let violated_buses = if record.observation.degenerate {
        Vec::new()
    } else {
        env.case()
            .buses
            .iter()
            .zip(&record.observation.v)
            .filter(|(_, &v)| v < lo || v > hi)
            .map(|(b, _)| b.id)
            .collect()
    };
    Ok(EvalReport { record, clipped, violated_buses })
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub bus_ids: Vec<usize>,
    pub solution: PowerFlowSolution,
    pub report: Option<ConstraintReport>,
}

/// A single power flow with generators taken offline and set points
/// replaced. Non-convergence is returned as an error carrying exit code 2.
pub fn run_solve(
    case: &GridCase,
    offline: &[usize],
    v_set: &[(usize, f64)],
    solver: &SolverConfig,
) -> Result<SolveReport, HarnessError> {
    let mut case = apply_outages(case, &offline.iter().copied().collect::<BTreeSet<_>>());
    for &bus in offline {
        if case.generator_at(bus).is_none() {
            return Err(HarnessError::Config(format!("bus {bus} has no generator to take offline")));
        }
    }
    for &(bus, v) in v_set {
        case.generator_at_mut(bus)
            .ok_or_else(|| HarnessError::Config(format!("bus {bus} has no generator")))?
            .v_set = v;
    }
    let solution = powerflow::solve(&case, solver.tol, solver.max_iter);
    if !solution.converged {
        return Err(HarnessError::NotConverged { iterations: solution.iterations, mismatch: solution.max_mismatch });
    }
    let report = powerflow::audit(&case, &solution).ok();
    Ok(SolveReport { bus_ids: case.buses.iter().map(|b| b.id).collect(), solution, report })
}

/// Writes `trend.csv` (`iter,v_mid,v_min,v_max`) and `actions.csv`
/// (`iter,a_1..a_k`) from a training log, skipping degenerate rows.
/// Returns the number of rows kept.
pub fn export_plotdata(log_path: &Path, out_dir: &Path) -> Result<usize, HarnessError> {
    let text = fs::read_to_string(log_path).map_err(io_err(log_path))?;
    let records = if text.trim().is_empty() {
        Vec::new()
    } else {
        TrainLog::read_csv(text.as_bytes()).map_err(HarnessError::Format)?
    };
    let k = records.first().map_or(0, |r| r.action.len());

    let mut trend = csv::Writer::from_writer(Vec::new());
    let mut actions = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::Format(e.to_string());
    trend.write_record(["iter", "v_mid", "v_min", "v_max"]).map_err(csv_err)?;
    let mut header = vec!["iter".to_string()];
    header.extend((1..=k).map(|i| format!("a_{i}")));
    actions.write_record(&header).map_err(csv_err)?;

    let mut kept = 0;
    for r in records.iter().filter(|r| !r.degenerate && !r.state.is_empty()) {
        let lo = r.state.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.state.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mid = (lo + hi) / 2.0;
        trend
            .write_record([r.iteration.to_string(), mid.to_string(), lo.to_string(), hi.to_string()])
            .map_err(csv_err)?;
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.action.iter().map(f64::to_string));
        actions.write_record(&row).map_err(csv_err)?;
        kept += 1;
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for (name, w) in [(TREND_FILE, trend), (ACTIONS_FILE, actions)] {
        let path = out_dir.join(name);
        let bytes = w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))?;
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_presets() {
        let cfg = RunConfig::from_json(r#"{"scenario": "scenario-2", "agent": {"iterations": 7}}"#).unwrap();
        assert_eq!(cfg.agent.iterations, 7);
        assert_eq!(cfg.scenario, ScenarioSpec::Preset("scenario-2".into()));
        let env = cfg.build_env().unwrap();
        assert_eq!(env.action_dim(), 3);
    }

    #[test]
    fn inline_scenario() {
        let cfg = RunConfig::from_json(
            r#"{"scenario": {"name": "mine", "offline_generators": [3], "action_layout": [1, 2], "v_ref_bounds": [0.95, 1.1]}}"#,
        )
        .unwrap();
        let env = cfg.build_env().unwrap();
        assert_eq!(env.action_dim(), 2);
        assert_eq!(env.bounds(), (0.95, 1.1));
    }

    #[test]
    fn unknown_fields_and_scenarios_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"agnet": {}}"#), Err(HarnessError::Config(_))));
        let cfg = RunConfig::from_json(r#"{"scenario": "scenario-9"}"#).unwrap();
        assert!(matches!(cfg.build_env(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn worker_precedence() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides::default(), Some("6")).unwrap();
        assert_eq!(cfg.agent.workers, 6);

        let mut cfg = RunConfig::from_json(r#"{"agent": {"workers": 2}}"#).unwrap();
        cfg.apply(&Overrides::default(), Some("6")).unwrap();
        assert_eq!(cfg.agent.workers, 2);
        cfg.apply(&Overrides { workers: Some(3), ..Default::default() }, Some("6")).unwrap();
        assert_eq!(cfg.agent.workers, 3);

        let mut cfg = RunConfig::default();
        assert!(cfg.apply(&Overrides::default(), Some("many")).is_err());
    }

    #[test]
    fn overrides_parse_names() {
        let mut cfg = RunConfig::default();
        let o = Overrides {
            algorithm: Some("ddpg-parallel".into()),
            reward: Some("piecewise".into()),
            seed: Some(4),
            ..Default::default()
        };
        cfg.apply(&o, None).unwrap();
        assert_eq!(cfg.agent.algorithm, Algorithm::DdpgParallel);
        assert_eq!(cfg.reward.kind, RewardKind::Piecewise);
        assert_eq!(cfg.agent.seed, 4);
        let bad = Overrides { reward: Some("cubic".into()), ..Default::default() };
        assert!(cfg.apply(&bad, None).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 1);
        assert_eq!(HarnessError::NotConverged { iterations: 30, mismatch: 1.0 }.exit_code(), 2);
    }

    #[test]
    fn solve_rejects_unknown_generator() {
        let case = GridCase::ieee14();
        let err = run_solve(&case, &[4], &[], &SolverConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = run_solve(&case, &[], &[(1, 0.5), (2, 0.5), (3, 0.5), (6, 0.5), (8, 0.5)], &SolverConfig::default())
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
