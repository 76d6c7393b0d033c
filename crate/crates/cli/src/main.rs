//! `seqattack`: solve, analyze and learn sequential attacks from the command line.
//!
//! Every run writes into `<out-dir>/<experiment>-<config hash>/`.
//! Exit codes: 0 success, 1 hard failure, 2 usage or input error.

mod parse;

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use seqattack::convergence::{analyze, Threshold, TABLE3_RELATIVE_TOLERANCE};
use seqattack::dp::{solve_gains, solve_optimal_plan_with, OffsetRecursion};
use seqattack::env::{ActionMode, MdpConfig};
use seqattack::experiments::{self, config_hash, scenario_hash, ExperimentReport, Table4Options};
use seqattack::export::{write_gains, write_table, write_trajectory};
use seqattack::learn::ppo::{train_one_stage, train_two_stage, TrainConfig};
use seqattack::scenario::{resolve, ScenarioFile};
use seqattack::system::rollout;
use seqattack::Error;

#[derive(Parser, Debug, Serialize)]
#[command(name = "seqattack", version, about = "Optimal sequential attack design on consensus networks")]
struct Cli {
    /// Base seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory receiving one sub-directory per run.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Absolute tolerance for deterministic table checks.
    #[arg(long, global = true, default_value_t = experiments::TABLE_TOLERANCE)]
    tolerance: f64,
    /// TOML file with training settings (any subset of the training fields).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Optimal signals for a fixed selection sequence.
    Solve(SolveArgs),
    /// Settling windows of the backward gains.
    Converge(ConvergeArgs),
    /// Learn a selection policy.
    Train(TrainArgs),
    /// Emit plot-ready CSV series.
    Figures(FigureArgs),
    /// Rerun the published tables and compare.
    ReproduceTables(TableArgs),
}

#[derive(Args, Debug, Serialize)]
struct ScenarioArgs {
    /// Built-in name (linear3, circle3, star10) or path to a TOML file.
    #[arg(long, default_value = "linear3")]
    scenario: String,
    /// Override the horizon N.
    #[arg(long)]
    horizon: Option<usize>,
    /// Override x0 (comma-separated).
    #[arg(long)]
    x0: Option<String>,
    /// Override the target (comma-separated, or `x0`).
    #[arg(long)]
    x_star: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum Recursion {
    Exact,
    AsPrinted,
}

#[derive(Args, Debug, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// `e<i>`, `none`, `all`, `mask:<int>`, or one such entry per step separated by commas.
    #[arg(long, default_value = "e1")]
    gamma: String,
    /// Offset recursion variant.
    #[arg(long, value_enum, default_value_t = Recursion::Exact)]
    recursion: Recursion,
}

#[derive(Args, Debug, Serialize)]
struct ConvergeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "e1")]
    gamma: String,
    /// Comma-separated horizons.
    #[arg(long, default_value = "50,100,200,1000")]
    horizons: String,
    /// Window threshold, relative to the steady-state norm unless `--absolute`.
    #[arg(long, default_value_t = TABLE3_RELATIVE_TOLERANCE)]
    threshold: f64,
    #[arg(long)]
    absolute: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum Algo {
    OneStage,
    TwoStage,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum Mode {
    SingleAgent,
    MultiAgent,
}

#[derive(Args, Debug, Serialize)]
struct MdpArgs {
    /// Penalty weight on deviation from the optimal signal.
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    discount: Option<f64>,
    #[arg(long, value_enum)]
    action_mode: Option<Mode>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    mdp: MdpArgs,
    #[arg(long, value_enum, default_value_t = Algo::TwoStage)]
    algo: Algo,
    /// Stopping threshold; defaults to 2 for two-stage and 0.1 for one-stage.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    t_r: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    batch_episodes: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum Figure {
    All,
    Fig4,
    Fig5a,
    Fig5b,
    Fig5c,
    Fig7,
    Fig9,
}

#[derive(Args, Debug, Serialize)]
struct FigureArgs {
    #[arg(value_enum, default_values_t = vec![Figure::All])]
    which: Vec<Figure>,
    /// Scenario for the learning and convergence figures.
    #[arg(long, default_value = "linear3")]
    scenario: String,
}

#[derive(Args, Debug, Serialize)]
struct TableArgs {
    /// Table numbers (1-4); all when omitted.
    #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
    which: Vec<u8>,
    /// Scaled-down budgets for the algorithm comparison.
    #[arg(long)]
    quick: bool,
}

enum Failure {
    Usage(String),
    Hard(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Config(_) | Error::Io(_) | Error::Dimension { .. } | Error::Laplacian(_) | Error::Weight { .. } => {
                Self::Usage(e.to_string())
            }
            other => Self::Hard(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load_scenario(args: &ScenarioArgs) -> CliResult<ScenarioFile> {
    let mut file = resolve(&args.scenario)?;
    if let Some(h) = args.horizon {
        file.horizon = h;
    }
    if let Some(x0) = &args.x0 {
        file.x0 = parse::vector(x0, file.n).map_err(usage)?;
    }
    if let Some(xs) = &args.x_star {
        file.x_star = if xs == "x0" { file.x0.clone() } else { parse::vector(xs, file.n).map_err(usage)? };
    }
    Ok(file)
}

fn run_dir(cli: &Cli, id: &str) -> CliResult<PathBuf> {
    let dir = cli.out_dir.join(format!("{id}-{}", config_hash(cli)));
    fs::create_dir_all(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(path: &Path) -> CliResult<File> {
    File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Hard(e.to_string()))?;
    fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn train_config(cli: &Cli) -> CliResult<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            toml::from_str::<TrainConfig>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = cli.seed;
    Ok(cfg)
}

fn cmd_solve(cli: &Cli, args: &SolveArgs) -> CliResult<()> {
    let file = load_scenario(&args.scenario)?;
    let sc = file.build::<f64>()?;
    let gamma = parse::gamma_sequence(&args.gamma, sc.n(), sc.horizon()).map_err(usage)?;
    let recursion = match args.recursion {
        Recursion::Exact => OffsetRecursion::Exact,
        Recursion::AsPrinted => OffsetRecursion::AsPrinted,
    };
    let opt = solve_optimal_plan_with(&sc, &gamma, recursion)?;
    let dir = run_dir(cli, &format!("solve-{}", file.name))?;
    write_trajectory(create(&dir.join("trajectory.csv"))?, &opt.trajectory)?;
    write_gains(create(&dir.join("gains.csv"))?, &opt.gains)?;
    write_json(
        &dir.join("objective.json"),
        &json!({
            "scenario": file.name,
            "scenario_hash": scenario_hash(&file),
            "gamma": args.gamma,
            "recursion": args.recursion,
            "j1": opt.objective.j1,
            "j2": opt.objective.j2,
            "j": opt.objective.j,
        }),
    )?;
    println!("J1 = {:.6}  J2 = {:.6}  J = {:.6}", opt.objective.j1, opt.objective.j2, opt.objective.j);
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_converge(cli: &Cli, args: &ConvergeArgs) -> CliResult<()> {
    let file = load_scenario(&args.scenario)?;
    let base = file.build::<f64>()?;
    let threshold =
        if args.absolute { Threshold::Absolute(args.threshold) } else { Threshold::Relative(args.threshold) };
    let dir = run_dir(cli, &format!("converge-{}", file.name))?;
    let horizons: Vec<usize> = args
        .horizons
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| usage(format!("bad horizon {s:?}"))))
        .collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for horizon in horizons {
        let sc = base.with_horizon(horizon)?;
        let gamma = parse::gamma_sequence(&args.gamma, sc.n(), horizon).map_err(usage)?;
        let report = analyze(&solve_gains(&sc, &gamma)?, threshold)?;
        let series: Vec<Vec<f64>> = (0..=horizon).map(|k| vec![k as f64, report.k_error[k], report.f_error[k]]).collect();
        write_table(create(&dir.join(format!("errors_N{horizon}.csv")))?, &["k", "K_error", "F_error"], &series)?;
        println!(
            "N={horizon}: K window [{},{}]  F window [{},{}]",
            report.k_window.start, report.k_window.end, report.f_window.start, report.f_window.end
        );
        rows.push(json!({
            "horizon": horizon,
            "k_window": report.k_window,
            "f_window": report.f_window,
            "k_bound": report.k_bound,
            "f_bound": report.f_bound,
        }));
    }
    write_json(
        &dir.join("windows.json"),
        &json!({ "scenario": file.name, "scenario_hash": scenario_hash(&file), "threshold": threshold, "rows": rows }),
    )?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let file = load_scenario(&args.scenario)?;
    let mut mdp = MdpConfig::new(file.build::<f64>()?);
    if let Some(phi) = args.mdp.phi {
        mdp.phi = phi;
    }
    if let Some(d) = args.mdp.discount {
        mdp.discount = d;
    }
    if let Some(mode) = args.mdp.action_mode {
        mdp.action_mode = match mode {
            Mode::SingleAgent => ActionMode::SingleAgent,
            Mode::MultiAgent => ActionMode::MultiAgent,
        };
    }
    mdp.validate()?;
    let mut cfg = train_config(cli)?;
    if cli.config.is_none() && matches!(args.algo, Algo::OneStage) {
        cfg.delta = 0.1;
    }
    if let Some(v) = args.delta {
        cfg.delta = v;
    }
    if let Some(v) = args.t_r {
        cfg.t_r = v;
    }
    if let Some(v) = args.max_iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = args.batch_episodes {
        cfg.batch_episodes = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    cfg.validate()?;
    let algo = match args.algo {
        Algo::OneStage => "one-stage",
        Algo::TwoStage => "two-stage",
    };
    let dir = run_dir(cli, &format!("train-{algo}-{}", file.name))?;
    let (solution, curve) = match args.algo {
        Algo::OneStage => {
            let out = train_one_stage(&cfg, &mdp)?;
            (out.best, out.curve)
        }
        Algo::TwoStage => {
            let out = train_two_stage(&cfg, &mdp)?;
            let cand: Vec<Vec<f64>> =
                out.candidates.iter().enumerate().map(|(i, c)| vec![i as f64, c.j_policy, c.j_refined]).collect();
            write_table(create(&dir.join("candidates.csv"))?, &["index", "j_policy", "j_refined"], &cand)?;
            (out.solution, out.stage1.curve)
        }
    };
    let rows: Vec<Vec<f64>> =
        curve.iter().map(|p| vec![p.iteration as f64, p.samples as f64, p.j, p.best_j, p.mean_return]).collect();
    write_table(create(&dir.join("curve.csv"))?, &["iteration", "samples", "j", "best_j", "mean_return"], &rows)?;
    let trajectory = rollout(&mdp.scenario, &solution.plan())?;
    write_trajectory(create(&dir.join("trajectory.csv"))?, &trajectory)?;
    write_json(
        &dir.join("solution.json"),
        &json!({
            "scenario": file.name,
            "scenario_hash": scenario_hash(&file),
            "mdp": { "phi": mdp.phi, "discount": mdp.discount, "action_mode": mdp.action_mode },
            "train": cfg,
            "solution": solution,
        }),
    )?;
    println!("{algo}: J = {:.4} after {} episodes", solution.j, solution.samples_used);
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_figures(cli: &Cli, args: &FigureArgs) -> CliResult<()> {
    let wants = |f: Figure| args.which.contains(&Figure::All) || args.which.contains(&f);
    let dir = run_dir(cli, "figures")?;
    let mut series = Vec::new();
    if wants(Figure::Fig5a) {
        series.push(experiments::fig5a()?);
    }
    if wants(Figure::Fig5b) {
        series.push(experiments::fig5b()?);
    }
    if wants(Figure::Fig5c) {
        series.push(experiments::fig5c()?);
    }
    if wants(Figure::Fig7) {
        series.push(experiments::fig7(&args.scenario)?);
    }
    let base = train_config(cli)?;
    if wants(Figure::Fig9) {
        let one = TrainConfig { delta: 0.1, ..base.clone() };
        series.extend(experiments::fig9(&args.scenario, &one, &base)?);
    }
    if wants(Figure::Fig4) {
        series.push(experiments::fig4(&args.scenario, &base)?);
    }
    for s in &series {
        s.write(&dir)?;
        println!("{}", dir.join(&s.file).display());
    }
    Ok(())
}

fn cmd_tables(cli: &Cli, args: &TableArgs) -> CliResult<i32> {
    let which: Vec<u8> = if args.which.is_empty() { vec![1, 2, 3, 4] } else { args.which.clone() };
    let dir = run_dir(cli, "tables")?;
    let mut code = 0;
    for t in which {
        let report: ExperimentReport = match t {
            1 => experiments::table1(cli.tolerance)?,
            2 => experiments::table2(cli.tolerance)?,
            3 => experiments::table3(TABLE3_RELATIVE_TOLERANCE)?,
            _ => {
                let base = train_config(cli)?;
                let mut opts = Table4Options {
                    seed: cli.seed,
                    one_stage: TrainConfig { delta: 0.1, ..base.clone() },
                    two_stage: base,
                    ..Table4Options::default()
                };
                if args.quick {
                    opts.random_budget = 10_000;
                    opts.sampling_budget = 1_000;
                    opts.one_stage.max_iterations = 50;
                    opts.two_stage.max_iterations = 50;
                }
                experiments::table4(&opts)?
            }
        };
        print!("{}", report.render_text());
        report.write_json(&dir.join(format!("table{t}.json")))?;
        code = code.max(report.exit_code());
    }
    println!("wrote {}", dir.display());
    Ok(code)
}

fn run(cli: &Cli) -> CliResult<i32> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(cli, a).map(|_| 0),
        Command::Converge(a) => cmd_converge(cli, a).map(|_| 0),
        Command::Train(a) => cmd_train(cli, a).map(|_| 0),
        Command::Figures(a) => cmd_figures(cli, a).map(|_| 0),
        Command::ReproduceTables(a) => cmd_tables(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Hard(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
