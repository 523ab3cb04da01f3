use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridflow_core::environment::SolverConfig;
use gridflow_core::grid_model::{load_case, GridCase};
use gridflow_core::harness::{
    export_plotdata, run_baseline, run_eval, run_solve, run_train, HarnessError, Overrides, RunConfig, RunSummary,
    SolveReport, WORKERS_ENV,
};

#[derive(Parser)]
#[command(name = "gridflow", version, about = "Voltage regulation on a power grid with actor-critic agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one power flow and report voltages and limit violations.
    Solve(SolveArgs),
    /// Train an agent and write its log, summary and weights.
    Train(RunArgs),
    /// Uniform random search under the same budget and seed discipline.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        /// Number of evaluations (defaults to the iteration count).
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Evaluate one action on the configured scenario.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Voltage references, one per controlled generator.
        #[arg(required = true, value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Turn a training log into trend and action series.
    ExportPlotdata {
        log: PathBuf,
        /// Output directory (defaults to the log's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    case: Option<PathBuf>,
    /// Generator buses to take offline, comma separated.
    #[arg(long, value_delimiter = ',')]
    offline: Vec<usize>,
    /// Set-point override as BUS=VOLTAGE; repeatable.
    #[arg(long = "set", value_parser = parse_setpoint)]
    setpoints: Vec<(usize, f64)>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<PathBuf>,
    /// scenario-1, scenario-2 or intact.
    #[arg(long)]
    scenario: Option<String>,
    /// ddpg, td3 or ddpg-parallel.
    #[arg(long)]
    algorithm: Option<String>,
    /// squared or piecewise.
    #[arg(long)]
    reward: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation threads (default from GRIDFLOW_WORKERS, else 1).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_setpoint(s: &str) -> Result<(usize, f64), String> {
    let (bus, v) = s.split_once('=').ok_or("expected BUS=VOLTAGE")?;
    let bus = bus.trim().parse().map_err(|_| format!("bad bus {bus:?}"))?;
    let v = v.trim().parse().map_err(|_| format!("bad voltage {v:?}"))?;
    Ok((bus, v))
}

impl RunArgs {
    fn resolve(&self, budget: Option<usize>) -> Result<RunConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let overrides = Overrides {
            case_path: self.case.clone(),
            scenario: self.scenario.clone(),
            algorithm: self.algorithm.clone(),
            reward: self.reward.clone(),
            seed: self.seed,
            workers: self.workers,
            iterations: self.iterations,
            budget,
            output_dir: self.out.clone(),
        };
        cfg.apply(&overrides, std::env::var(WORKERS_ENV).ok().as_deref())?;
        Ok(cfg)
    }
}

/// `println!` into a buffer that `main` flushes once at the end.
macro_rules! outln {
    ($buf:expr) => {
        $buf.push('\n')
    };
    ($buf:expr, $($arg:tt)*) => {{
        $buf.push_str(&format!($($arg)*));
        $buf.push('\n');
    }};
}

fn print_summary(out: &mut String, s: &RunSummary) {
    outln!(out, "algorithm          {}", s.algorithm);
    outln!(out, "scenario           {}", s.scenario);
    outln!(out, "seed               {}", s.seed);
    outln!(out, "best reward        {:.6}", s.best_reward);
    outln!(out, "best action        {}", fmt_values(&s.best_action));
    outln!(out, "violated buses     {:?}", s.violated_buses);
    outln!(out, "iterations to best {}", s.iterations_to_best);
    outln!(out, "evaluations        {} ({} pretraining)", s.total_evaluations, s.pretrain_evaluations);
    outln!(out, "degenerate         {}", s.degenerate_count);
    outln!(out, "wall time          {:.2} s", s.wall_time_s);
    outln!(out, "artifacts          {}", s.output_dir.display());
}

fn fmt_values(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn print_solve(out: &mut String, r: &SolveReport, case: &GridCase) {
    let sol = &r.solution;
    outln!(out, "converged in {} iterations, mismatch {:.2e}", sol.iterations, sol.max_mismatch);
    outln!(out, "{:>4} {:>8} {:>9} {:>9} {:>9}", "bus", "|V| pu", "angle deg", "P pu", "Q pu");
    for (k, id) in r.bus_ids.iter().enumerate() {
        let flag = match case.buses.get(k) {
            Some(b) if sol.v_mag[k] > b.v_max => " high",
            Some(b) if sol.v_mag[k] < b.v_min => " low",
            _ => "",
        };
        outln!(
            out,
            "{:>4} {:>8.4} {:>9.3} {:>9.4} {:>9.4}{flag}",
            id,
            sol.v_mag[k],
            sol.v_ang[k].to_degrees(),
            sol.p_inj[k],
            sol.q_inj[k]
        );
    }
    if let Some(rep) = &r.report {
        outln!(out, "voltage violations: {}", rep.voltage_violations.len());
        for v in &rep.generator_q_violations {
            outln!(out, "generator at bus {} reactive output {:.4} beyond {:.4}", v.id, v.value, v.bound);
        }
        outln!(out, "balance residual {:.2e}", rep.balance_residual);
    }
    outln!(out);
    outln!(out, "{}", serde_json::to_string(r).expect("report serializes"));
}

fn solve(out: &mut String, args: &SolveArgs) -> Result<(), HarnessError> {
    let case = match &args.case {
        Some(p) => load_case(p)?,
        None => GridCase::ieee14(),
    };
    let mut solver = SolverConfig::default();
    if let Some(t) = args.tol {
        solver.tol = t;
    }
    if let Some(m) = args.max_iter {
        solver.max_iter = m;
    }
    let report = run_solve(&case, &args.offline, &args.setpoints, &solver)?;
    print_solve(out, &report, &case);
    Ok(())
}

fn run(out: &mut String, cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Solve(args) => solve(out, &args),
        Command::Train(args) => {
            let cfg = args.resolve(None)?;
            match run_train(&cfg) {
                Ok(s) => {
                    print_summary(out, &s);
                    Ok(())
                }
                Err(HarnessError::Diverged { iteration, summary }) => {
                    print_summary(out, &summary);
                    Err(HarnessError::Diverged { iteration, summary })
                }
                Err(e) => Err(e),
            }
        }
        Command::Baseline { run, budget } => {
            let cfg = run.resolve(budget)?;
            print_summary(out, &run_baseline(&cfg)?);
            Ok(())
        }
        Command::Eval { run, values } => {
            let cfg = run.resolve(None)?;
            let r = run_eval(&cfg, &values)?;
            if r.clipped {
                eprintln!("warning: action clipped to {}", fmt_values(&r.record.action.values));
            }
            outln!(out, "action      {}", fmt_values(&r.record.action.values));
            outln!(out, "degenerate  {}", r.record.observation.degenerate);
            outln!(out, "reward      {:.6}", r.record.reward);
            outln!(out, "voltages    {}", fmt_values(&r.record.observation.v));
            outln!(out, "violations  {:?}", r.violated_buses);
            outln!(out);
            outln!(out, "{}", serde_json::to_string(&r).expect("record serializes"));
            Ok(())
        }
        Command::ExportPlotdata { log, out: dest } => {
            let dir = dest.unwrap_or_else(|| log.parent().map(Path::to_path_buf).unwrap_or_default());
            let kept = export_plotdata(&log, &dir)?;
            outln!(out, "{kept} rows written to {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut out = String::new();
    let result = run(&mut out, cli);
    // A closed pipe (`gridflow solve | head`) is not an error worth reporting.
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
