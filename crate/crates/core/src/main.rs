use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jumpdr::ambiguity::DivergenceKind;
use jumpdr::conic::{ClarabelBackend, SolveStatus};
use jumpdr::drocp::{assemble, baseline_tree, solve, Controller};
use jumpdr::error::Error;
use jumpdr::experiments::output::*;
use jumpdr::experiments::{concentration, consistency, simulate, timing, ExperimentConfig, VariantKind};
use jumpdr::learner::{replay, ConfidenceSchedule, LearnerState};
use jumpdr::markov::sample_path;
use jumpdr::rng::derive_seed;
use jumpdr::tree::{ScenarioTree, DEFAULT_NODE_BUDGET};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "jumpdr", version, about = "Learning-based distributionally robust MPC for Markov jump linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict to one divergence: tv, kl, js, hellinger or wasserstein.
    #[arg(long, global = true)]
    divergence: Option<DivergenceKind>,
    /// Controller for `solve`: dr, robust or omniscient.
    #[arg(long, global = true)]
    variant: Option<VariantKind>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Monte Carlo runs (`simulate`, `concentration`).
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Closed-loop steps (`simulate`).
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Empirical divergence quantiles versus the radius bounds.
    Concentration,
    /// Closed-loop Monte Carlo of omniscient, robust and DR controllers.
    Simulate,
    /// DR value versus sample size relative to the omniscient value.
    Consistency,
    /// DR solver times per divergence.
    Timing,
    /// Builds one scenario-tree problem, writes it and its solution.
    Solve,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Concentration => "concentration",
            Command::Simulate => "simulate",
            Command::Consistency => "consistency",
            Command::Timing => "timing",
            Command::Solve => "solve",
        }
    }
}

enum Failure {
    Infeasible(String),
    Solver(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::StepInfeasible { .. } => Failure::Infeasible(e.to_string()),
            Error::SolverFailure(_) => Failure::Solver(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn resolve(cli: &Cli) -> Result<(ExperimentConfig, u64, PathBuf), Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.display().to_string();
    }
    if let Some(h) = cli.horizon {
        cfg.horizon = h;
    }
    if let Some(r) = cli.runs {
        cfg.simulate.runs = r;
        cfg.concentration.runs = r;
    }
    if let Some(s) = cli.steps {
        cfg.simulate.steps = s;
    }
    if let Some(d) = cli.divergence {
        cfg.divergences = vec![d];
        cfg.simulate.divergence = d;
        cfg.solve.divergence = d;
    }
    if let Some(v) = cli.variant {
        cfg.solve.variant = v;
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out)?;
    Ok((cfg.clone(), cfg.seed, out))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let (cfg, seed, out) = resolve(cli)?;
    write_manifest(&out, cli.command.name(), seed, &cfg)?;
    match cli.command {
        Command::Concentration => cmd_concentration(&cfg, seed, &out),
        Command::Simulate => cmd_simulate(&cfg, seed, &out),
        Command::Consistency => cmd_consistency(&cfg, seed, &out),
        Command::Timing => cmd_timing(&cfg, seed, &out),
        Command::Solve => cmd_solve(&cfg, seed, &out),
    }
}

fn cmd_concentration(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let rows = concentration::run(&cfg.concentration, &cfg.divergences, cfg.sharp_kl, seed)?;
    write_csv(&out.join("concentration.csv"), CONCENTRATION_HEADER, &rows)?;
    for (div, frac) in concentration::coverage(&rows) {
        println!("{div:>12}: upper quantile below radius at {:.1}% of sample sizes", 100.0 * frac);
    }
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let res = simulate::run(cfg, seed)?;
    write_csv(&out.join("simulate_steps.csv"), SIM_STEPS_HEADER, &res.step_rows())?;
    write_csv(&out.join("simulate_costs.csv"), SIM_COSTS_HEADER, &res.cost_rows())?;
    write_csv(&out.join("simulate_summary.csv"), SIM_SUMMARY_HEADER, &res.summary_rows())?;
    write_csv(&out.join("simulate_violations.csv"), SIM_VIOLATIONS_HEADER, &res.violation_rows())?;
    if cfg.simulate.write_traces {
        write_jsonl(&out.join("traces.jsonl"), res.trace_lines())?;
    }
    for s in res.summary_rows() {
        println!(
            "{:>12}: mean cost {:10.3}  completed {}/{}  first |u| {:.3}",
            s.variant, s.cost_mean, s.completed, s.runs, s.first_input_norm_mean
        );
    }
    if res.infeasible_runs() > 0 {
        return Err(Failure::Infeasible(format!("{} runs hit an infeasible step", res.infeasible_runs())));
    }
    if res.solver_failures() > 0 {
        return Err(Failure::Solver(format!("{} runs ended in a solver failure", res.solver_failures())));
    }
    Ok(())
}

fn cmd_consistency(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let rows = consistency::run(cfg, &cfg.divergences, seed)?;
    write_csv(&out.join("consistency.csv"), CONSISTENCY_HEADER, &rows)?;
    for r in &rows {
        println!("{:>12} t={:>7}: relative suboptimality {:.5}", r.divergence, r.t, r.rel_subopt);
    }
    if let Some(r) = rows.iter().find(|r| r.status != "Optimal") {
        return Err(Failure::Solver(format!("{} at t={}: {}", r.divergence, r.t, r.status)));
    }
    Ok(())
}

fn cmd_timing(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let (rows, summary) = timing::run(cfg, &cfg.divergences, seed)?;
    write_csv(&out.join("timing.csv"), TIMING_HEADER, &rows)?;
    write_csv(&out.join("timing_summary.csv"), TIMING_SUMMARY_HEADER, &summary)?;
    for s in &summary {
        println!("{:>12}: avg {:8.2} ms  max {:8.2} ms  optimal {}/{}", s.divergence, s.avg_ms, s.max_ms, s.optimal, s.samples);
    }
    if let Some(s) = summary.iter().find(|s| s.optimal < s.samples) {
        return Err(Failure::Solver(format!("{}: {} of {} solves not optimal", s.divergence, s.samples - s.optimal, s.samples)));
    }
    Ok(())
}

fn cmd_solve(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let sc = &cfg.solve;
    let spec = cfg.radius_spec(sc.divergence, model.d);
    let (controller, tree) = match sc.variant {
        VariantKind::Dr => {
            let offline = sample_path(&kernel, sc.w0, sc.warm_start, derive_seed(seed, 0))?.modes;
            let conf0 = ConfidenceSchedule::new(cfg.beta_b, cfg.beta_q, 2, 0)?;
            let (s, conf) = replay(&LearnerState::init(model.d, 2)?, &conf0, &offline, &spec)?;
            let tree = ScenarioTree::build(model.d, cfg.horizon, sc.w0, &s, &conf, &spec, DEFAULT_NODE_BUDGET)?;
            (Controller::Dr(spec), tree)
        }
        VariantKind::Robust => (Controller::Robust, baseline_tree(model.d, cfg.horizon, sc.w0)?),
        VariantKind::Omniscient => (Controller::Omniscient(kernel), baseline_tree(model.d, cfg.horizon, sc.w0)?),
    };
    let asm = assemble(&model, &tree, &sc.x0, &controller)?;
    std::fs::write(out.join("program.txt"), asm.program.to_sparse_text()).map_err(Error::from)?;
    let sol = solve(&asm, &mut ClarabelBackend::default())?;
    let doc = serde_json::json!({
        "controller": controller.tag(),
        "nodes": tree.len(),
        "variables": asm.program.n_vars(),
        "rows": asm.program.n_rows(),
        "cost_scale": asm.cost_scale,
        "solution": sol,
    });
    std::fs::write(out.join("solution.json"), serde_json::to_string_pretty(&doc).map_err(Error::from)?).map_err(Error::from)?;
    println!("{}: status {:?}, value {:.6}, u0 {:?}", controller.tag(), sol.status, sol.value, sol.u0);
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(Failure::Infeasible("problem is infeasible at the given state".into())),
        SolveStatus::SolverError => Err(Failure::Solver("solver did not converge".into())),
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Infeasible(m)) => {
            eprintln!("error: infeasibility: {m}");
            ExitCode::from(EXIT_INFEASIBLE)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("error: solver failure: {m}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
