//! `interbank` — command-line front end for the interbank market
//! simulator: gain-ODE solving, Monte Carlo simulation, risk sweeps,
//! convergence studies, trajectory exports, and equilibrium validation.

use interbank_cli::{config, output, runner};

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use interbank_core::experiments::{
    self, MajorOutcome, SimRunner, SweepSettings,
};
use interbank_core::riccati::{self, ExtendedSystem, StrategyMode};
use interbank_core::risk;
use interbank_core::sim::{Direction, PerturbTarget, RngPolicy, SimGrid, SimOptions};
use interbank_core::validate::{
    best_response_gap, mode_comparison, seeded_directions, GapSettings, PerturbationSpec,
};

use config::Config;
use output::{RunManifest, write_file, write_manifest};
use runner::ParallelRunner;

/// Exit statuses by failure category, so scripts can react without
/// parsing messages.
mod status {
    pub const CONFIG: u8 = 10;
    pub const VALIDATION: u8 = 11;
    pub const NUMERICAL: u8 = 12;
    pub const DATA: u8 = 13;
    pub const IO: u8 = 14;
}

#[derive(Parser)]
#[command(name = "interbank", version, about = "Interbank market simulator and risk estimator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    /// Major feedback exactly as stated in the source theorem.
    Theorem,
    /// Major feedback consistent with the extended-state derivation.
    Derivation,
    /// Gains taken from the matrix Riccati solution.
    Oracle,
}

impl From<ModeArg> for StrategyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Theorem => StrategyMode::TheoremAsPublished,
            ModeArg::Derivation => StrategyMode::DerivationConsistent,
            ModeArg::Oracle => StrategyMode::MatrixOracle,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat key=value); omitted keys use baseline
    /// defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Strategy mode for the major bank's gain and feedback.
    #[arg(long, value_enum, default_value_t = ModeArg::Derivation)]
    mode: ModeArg,
    /// Worker threads for path-parallel simulation (0 = all cores).
    /// Results are identical for every worker count.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Steps of the backward gain-ODE grid.
    #[arg(long, default_value_t = 1000)]
    riccati_steps: usize,
}

#[derive(Args)]
struct McArgs {
    /// Master seed; all randomness derives from it deterministically.
    #[arg(long)]
    seed: u64,
    /// Monte Carlo paths.
    #[arg(long, default_value_t = 50_000)]
    paths: usize,
    /// Euler time steps per path.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Number of minor banks (finite) or representative minors (limiting).
    #[arg(long, default_value_t = 10)]
    minors: usize,
    /// Give each scenario row independent noise instead of common random
    /// numbers.
    #[arg(long)]
    no_crn: bool,
    /// Retain full state trajectories for the first K paths.
    #[arg(long, default_value_t = 0)]
    retain_trajectories: usize,
    /// Retain per-path per-bank realized cost functionals.
    #[arg(long)]
    retain_costs: bool,
}

impl McArgs {
    fn policy(&self) -> RngPolicy {
        RngPolicy {
            master_seed: self.seed,
            scenario_crn: !self.no_crn,
        }
    }

    fn options(&self) -> SimOptions {
        SimOptions {
            retain_trajectories: self.retain_trajectories,
            retain_costs: self.retain_costs,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the backward gain ODEs and write the coefficient paths.
    Riccati {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate one scenario and write its risk report.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
        /// Simulate the limiting (infinite-population) system.
        #[arg(long)]
        limiting: bool,
        /// Also write the loss histogram (finite system only).
        #[arg(long)]
        loss: bool,
    },
    /// Sweep the major-bank size G and write per-row risk reports.
    SweepG {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
        /// Also write per-row loss histograms.
        #[arg(long)]
        loss: bool,
    },
    /// Sweep the mean-reversion rate a (F = G = 1/2) with a no-major
    /// baseline per row.
    SweepA {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
        #[arg(long)]
        loss: bool,
    },
    /// Finite-vs-limiting convergence study over population sizes.
    Converge {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Export one simulated trajectory panel (major, minors, market).
    Export {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
        /// Condition the exported path on the major bank's outcome.
        #[arg(long, value_enum, default_value_t = OutcomeArg::Any)]
        outcome: OutcomeArg,
    },
    /// Equilibrium validation: mode adjudication and best-response gaps.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
        /// Number of seeded perturbation directions.
        #[arg(long, default_value_t = 20)]
        directions: usize,
    },
    /// Simulate one scenario and write the minor-default loss histogram.
    LossDist {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutcomeArg {
    Any,
    Defaulted,
    Survived,
}

impl From<OutcomeArg> for MajorOutcome {
    fn from(o: OutcomeArg) -> Self {
        match o {
            OutcomeArg::Any => MajorOutcome::Any,
            OutcomeArg::Defaulted => MajorOutcome::Defaulted,
            OutcomeArg::Survived => MajorOutcome::Survived,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (category, code) = classify(&err);
            eprintln!("error[{category}]: {err:#}");
            ExitCode::from(code)
        }
    }
}

/// Maps an error chain to its category and exit status.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    use interbank_core::Error as E;
    if let Some(core) = err.root_cause().downcast_ref::<E>() {
        return match core {
            E::Clearing(_) | E::Convexity(_) | E::Range(_) => ("validation", status::VALIDATION),
            E::GridMismatch { .. } | E::BlowUp { .. } | E::LostSymmetry { .. }
            | E::NonFinite { .. } => ("numerical", status::NUMERICAL),
            E::UnsupportedInput(_) | E::NoMatchingPath(_) => ("data", status::DATA),
        };
    }
    if err.root_cause().is::<std::io::Error>() {
        return ("io", status::IO);
    }
    ("config", status::CONFIG)
}

struct Ctx {
    cfg: Config,
    mode: StrategyMode,
    out: PathBuf,
    riccati_steps: usize,
    workers: usize,
    runner: ParallelRunner,
    started: Instant,
}

fn prepare(common: &Common) -> Result<Ctx> {
    let cfg = match &common.config {
        Some(path) => config::load(path)?,
        None => Config::default(),
    };
    cfg.params.validate()?;
    for warning in cfg.params.warnings() {
        eprintln!("warning: {warning}");
    }
    if common.workers > 0 {
        // Ignore failure when a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(common.workers)
            .build_global();
    }
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))?;
    Ok(Ctx {
        cfg,
        mode: common.mode.into(),
        out: common.out.clone(),
        riccati_steps: common.riccati_steps,
        workers: common.workers,
        runner: ParallelRunner,
        started: Instant::now(),
    })
}

impl Ctx {
    fn manifest(&self, subcommand: &str, mc: Option<&McArgs>, outputs: Vec<&Path>) -> RunManifest {
        RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            params: (&self.cfg.params).into(),
            seed: mc.map(|m| m.seed),
            mode: self.mode.name().to_string(),
            n_paths: mc.map_or(0, |m| m.paths),
            n_steps: mc.map_or(0, |m| m.steps),
            n_minors: mc.map_or(0, |m| m.minors),
            riccati_steps: self.riccati_steps,
            workers: self.workers,
            scenario_crn: mc.is_none_or(|m| !m.no_crn),
            outputs: outputs
                .iter()
                .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
                .collect(),
            duration_ms: self.started.elapsed().as_millis(),
        }
    }

    fn sweep_settings(&self, mc: &McArgs, with_loss: bool) -> SweepSettings {
        SweepSettings {
            n_paths: mc.paths,
            n_steps: mc.steps,
            n_minors: mc.minors,
            riccati_steps: self.riccati_steps,
            mode: self.mode,
            with_loss,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Riccati { common } => cmd_riccati(&common),
        Cmd::Simulate { common, mc, limiting, loss } => cmd_simulate(&common, &mc, limiting, loss),
        Cmd::SweepG { common, mc, loss } => cmd_sweep(&common, &mc, loss, SweepKind::G),
        Cmd::SweepA { common, mc, loss } => cmd_sweep(&common, &mc, loss, SweepKind::A),
        Cmd::Converge { common, mc } => cmd_converge(&common, &mc),
        Cmd::Export { common, mc, outcome } => cmd_export(&common, &mc, outcome.into()),
        Cmd::Validate { common, mc, directions } => cmd_validate(&common, &mc, directions),
        Cmd::LossDist { common, mc } => cmd_loss_dist(&common, &mc),
    }
}

fn cmd_riccati(common: &Common) -> Result<()> {
    let ctx = prepare(common)?;
    let p = &ctx.cfg.params;
    let steps = ctx.riccati_steps;
    let rs = riccati::solve(p, ctx.mode, steps)?;
    let phi_fine = riccati::solve_minor_phi(p, 2 * steps)?;
    let sys = ExtendedSystem::from_params(p)?;
    let oracle = riccati::solve_major_lqr_oracle(&sys, &phi_fine, steps)?;
    let csv = output::riccati_csv(&rs.grid, &rs.phi, &rs.phi0, Some(&oracle.implied_phi0));
    let csv_path = ctx.out.join("riccati.csv");
    write_file(&csv_path, &csv)?;
    let manifest = ctx.manifest("riccati", None, vec![&csv_path]);
    write_manifest(&ctx.out, &manifest)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn simulate_ensemble(
    ctx: &Ctx,
    mc: &McArgs,
    limiting: bool,
) -> Result<interbank_core::PathEnsemble> {
    let p = &ctx.cfg.params;
    let rs = riccati::solve(p, ctx.mode, ctx.riccati_steps)?;
    let grid = SimGrid::new(p.horizon, mc.steps);
    let opts = mc.options();
    let e = if limiting {
        ctx.runner
            .limiting(p, &rs, mc.minors, &grid, mc.paths, &mc.policy(), ctx.mode, &opts)?
    } else {
        ctx.runner
            .finite(p, &rs, mc.minors, &grid, mc.paths, &mc.policy(), ctx.mode, &opts)?
    };
    Ok(e)
}

fn cmd_simulate(common: &Common, mc: &McArgs, limiting: bool, loss: bool) -> Result<()> {
    let ctx = prepare(common)?;
    let p = ctx.cfg.params;
    let e = simulate_ensemble(&ctx, mc, limiting)?;
    let report = risk::estimate_risk_report(&e, p.threshold)?;

    let mut outputs = Vec::new();
    let risk_path = ctx.out.join("risk.csv");
    let mut csv = String::from(output::RISK_HEADER);
    csv.push('\n');
    csv.push_str(&output::risk_row("G", p.g, &report, None, p.g > 0.0));
    csv.push('\n');
    write_file(&risk_path, &csv)?;
    outputs.push(risk_path.clone());

    if loss {
        let h = risk::loss_distribution(&e, p.threshold)?;
        let loss_path = ctx.out.join("loss.csv");
        write_file(&loss_path, &output::loss_csv(&h))?;
        outputs.push(loss_path);
    }
    if mc.retain_trajectories > 0 {
        let refs: Vec<_> = e.trajectories.iter().collect();
        let traj_path = ctx.out.join("trajectories.csv");
        write_file(&traj_path, &output::trajectories_csv(&refs, e.dt))?;
        outputs.push(traj_path);
    }
    let manifest = ctx.manifest(
        if limiting { "simulate --limiting" } else { "simulate" },
        Some(mc),
        outputs.iter().map(|p| p.as_path()).collect(),
    );
    write_manifest(&ctx.out, &manifest)?;
    println!(
        "p0 = {:.4} +- {:.4}, pi = {:.4} +- {:.4}, pSE = {:.4} +- {:.4}",
        report.p0.value, report.p0.se, report.pi.value, report.pi.se,
        report.p_se.value, report.p_se.se
    );
    Ok(())
}

enum SweepKind {
    G,
    A,
}

fn cmd_sweep(common: &Common, mc: &McArgs, loss: bool, kind: SweepKind) -> Result<()> {
    let ctx = prepare(common)?;
    let settings = ctx.sweep_settings(mc, loss);
    let policy = mc.policy();
    let (sweep, name) = match kind {
        SweepKind::G => (
            experiments::sweep_size_g(&ctx.runner, &ctx.cfg.params, &ctx.cfg.g_values, &settings, &policy)?,
            "sweep-g",
        ),
        SweepKind::A => (
            experiments::sweep_friction_a(&ctx.runner, &ctx.cfg.params, &ctx.cfg.a_values, &settings, &policy)?,
            "sweep-a",
        ),
    };
    let mut outputs = Vec::new();
    let risk_path = ctx.out.join("risk.csv");
    write_file(&risk_path, &output::sweep_csv(&sweep))?;
    outputs.push(risk_path);
    if loss {
        let mut csv = String::from("row_value,variant,k,mass\n");
        for row in &sweep.rows {
            if let Some(h) = &row.loss {
                for line in output::loss_csv(h).lines().skip(1) {
                    csv.push_str(&format!("{},{line}\n", row.value));
                }
            }
        }
        let loss_path = ctx.out.join("loss.csv");
        write_file(&loss_path, &csv)?;
        outputs.push(loss_path);
    }
    let manifest = ctx.manifest(name, Some(mc), outputs.iter().map(|p| p.as_path()).collect());
    write_manifest(&ctx.out, &manifest)?;
    println!("wrote {} rows to {}", sweep.rows.len(), ctx.out.join("risk.csv").display());
    Ok(())
}

fn cmd_converge(common: &Common, mc: &McArgs) -> Result<()> {
    let ctx = prepare(common)?;
    let rows = experiments::convergence_study(
        &ctx.runner,
        &ctx.cfg.params,
        &ctx.cfg.n_list,
        mc.paths,
        mc.steps,
        ctx.riccati_steps,
        ctx.mode,
        &mc.policy(),
    )?;
    let conv_path = ctx.out.join("convergence.csv");
    write_file(&conv_path, &output::convergence_csv(&rows))?;
    let dt = ctx.cfg.params.horizon / mc.steps as f64;
    let paired_path = ctx.out.join("paired_trajectories.csv");
    write_file(&paired_path, &output::paired_csv(&rows, dt))?;
    let manifest = ctx.manifest("converge", Some(mc), vec![&conv_path, &paired_path]);
    write_manifest(&ctx.out, &manifest)?;
    for r in &rows {
        println!(
            "N = {:>6}: median sup|avg - meanfield| = {:.6}",
            r.n_minors, r.median_sup_avg
        );
    }
    Ok(())
}

fn cmd_export(common: &Common, mc: &McArgs, outcome: MajorOutcome) -> Result<()> {
    let ctx = prepare(common)?;
    let p = ctx.cfg.params;
    let mut mc_export = McArgs {
        seed: mc.seed,
        paths: mc.paths,
        steps: mc.steps,
        minors: mc.minors,
        no_crn: mc.no_crn,
        retain_trajectories: mc.retain_trajectories,
        retain_costs: false,
    };
    if mc_export.retain_trajectories == 0 {
        // A panel needs retained paths to filter on; keep enough to find
        // both major-bank outcomes at typical default rates.
        mc_export.retain_trajectories = 256.min(mc.paths);
    }
    let e = simulate_ensemble(&ctx, &mc_export, false)?;
    let chosen = experiments::select_trajectory(&e, p.threshold, outcome)?;
    let traj_path = ctx.out.join("trajectory.csv");
    write_file(&traj_path, &output::trajectories_csv(&[chosen], e.dt))?;
    let manifest = ctx.manifest("export", Some(&mc_export), vec![&traj_path]);
    write_manifest(&ctx.out, &manifest)?;
    println!("wrote path {} to {}", chosen.path, traj_path.display());
    Ok(())
}

#[derive(Serialize)]
struct GapJson {
    direction: usize,
    delta: f64,
    gap: f64,
    se: f64,
}

#[derive(Serialize)]
struct ModeComparisonJson {
    variants: [&'static str; 4],
    pairwise_max_diff: [[f64; 4]; 4],
    mode_worst_gaps: Vec<(String, f64)>,
    best_mode: String,
}

#[derive(Serialize)]
struct ValidateReport {
    mode_comparison: ModeComparisonJson,
    minor_gaps: Vec<GapJson>,
    /// Worst negative minor-bank gap over all directions and deltas.
    measured_epsilon: f64,
    directions_seed: u64,
}

fn cmd_validate(common: &Common, mc: &McArgs, directions: usize) -> Result<()> {
    let ctx = prepare(common)?;
    let p = ctx.cfg.params;
    let gap_settings = GapSettings {
        n_paths: mc.paths,
        n_steps: mc.steps,
        n_minors: mc.minors,
        riccati_steps: ctx.riccati_steps,
        policy: mc.policy(),
    };
    let cmp = mode_comparison(&ctx.runner, &p, &gap_settings)?;

    let rs = riccati::solve(&p, ctx.mode, ctx.riccati_steps)?;
    let dir_seed = mc.seed ^ 0x005e_edd1_5eed;
    let dirs = seeded_directions(mc.steps, directions, dir_seed);
    let mut minor_gaps = Vec::new();
    let mut measured_epsilon = 0.0f64;
    for (i, omega) in dirs.into_iter().enumerate() {
        let spec = PerturbationSpec {
            target: PerturbTarget::Minor(0),
            direction: Direction::Deterministic(omega),
            deltas: vec![0.0, 0.05, 0.1, 0.2],
        };
        let r = best_response_gap(&ctx.runner, &p, &rs, ctx.mode, &spec, &gap_settings)?;
        for pt in &r.points {
            minor_gaps.push(GapJson {
                direction: i,
                delta: pt.delta,
                gap: pt.gap,
                se: pt.gap_se,
            });
        }
        measured_epsilon = measured_epsilon.min(r.worst_gap);
    }

    let report = ValidateReport {
        mode_comparison: ModeComparisonJson {
            variants: cmp.variant_names,
            pairwise_max_diff: cmp.pairwise,
            mode_worst_gaps: cmp
                .mode_gaps
                .iter()
                .map(|(m, g)| (m.name().to_string(), *g))
                .collect(),
            best_mode: cmp.best_mode.name().to_string(),
        },
        minor_gaps,
        measured_epsilon: (-measured_epsilon).max(0.0),
        directions_seed: dir_seed,
    };
    let report_path = ctx.out.join("validate.json");
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_file(&report_path, &text)?;
    let manifest = ctx.manifest("validate", Some(mc), vec![&report_path]);
    write_manifest(&ctx.out, &manifest)?;
    println!(
        "best mode: {}; measured epsilon: {}",
        report.mode_comparison.best_mode, report.measured_epsilon
    );
    Ok(())
}

fn cmd_loss_dist(common: &Common, mc: &McArgs) -> Result<()> {
    let ctx = prepare(common)?;
    let p = ctx.cfg.params;
    let e = simulate_ensemble(&ctx, mc, false)?;
    let h = risk::loss_distribution(&e, p.threshold)?;
    if h.recombination_residual() > 1e-12 {
        return Err(anyhow!("loss histogram failed its recombination identity"));
    }
    let loss_path = ctx.out.join("loss.csv");
    write_file(&loss_path, &output::loss_csv(&h))?;
    let manifest = ctx.manifest("loss-dist", Some(mc), vec![&loss_path]);
    write_manifest(&ctx.out, &manifest)?;
    println!("wrote {}", loss_path.display());
    Ok(())
}
