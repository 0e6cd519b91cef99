//! Benchmark CLI: synthetic simulations, CSV fits, bound tables, and the
//! numeric self-test suite.
//!
//! Exit codes: 0 success, 2 configuration error, 3 report flagged for
//! divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use logtrunc::bounds::{excess_bound_thm2, BoundInputs};
use logtrunc::config::ConfigMap;
use logtrunc::csvrun::{run_csv_experiment, CsvExperimentConfig};
use logtrunc::experiment::{run_experiment, AlphaMode, MetricsReport, RhoMode, SgdSettings, Task};
use logtrunc::losses::max_knight_residual;
use logtrunc::report::{emit_report, render_csv, report_rows, ReportFormat};
use logtrunc::truncation::{psi_deriv, psi_eval, verify_sandwich, HighOrderFn};
use logtrunc::Error;

#[derive(Parser)]
#[command(name = "logtrunc", about = "Log-truncated robust regression benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthetic truncated-vs-untruncated benchmark.
    Simulate(SimulateArgs),
    /// Fit a CSV dataset and compare test metrics of both arms.
    FitCsv(FitCsvArgs),
    /// Print a CSV table of excess-risk bound values over a parameter grid.
    Bounds(BoundsArgs),
    /// Run the numeric property suite (truncation, derivatives, identities).
    Selftest,
}

#[derive(Args)]
struct SimulateArgs {
    /// Plain-text config file ([section] + key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override entries as section.key=value; repeatable.
    #[arg(long = "set")]
    sets: Vec<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel replications (default sequential).
    #[arg(long)]
    jobs: Option<usize>,
    /// Report path; prints to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct FitCsvArgs {
    /// CSV file with a header row and numeric cells.
    path: PathBuf,
    /// Response column name.
    #[arg(long, default_value = "y")]
    target: String,
    /// Task: dnn_lad, nbr, dnn_nbr, logistic...
    #[arg(long, default_value = "dnn_lad")]
    task: String,
    /// Model: linear or mlp:<L>.
    #[arg(long, default_value = "linear")]
    model: String,
    /// Train share of the shuffle split.
    #[arg(long, default_value_t = 0.67)]
    split: f64,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated ε grid (values in (0,1]).
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    eps_grid: String,
    /// alpha selection: theory or search.
    #[arg(long, default_value = "search")]
    alpha_mode: String,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// NBR dispersion; estimated from training counts when omitted.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct BoundsArgs {
    /// Comma-separated sample sizes.
    #[arg(long, default_value = "1000,10000,100000")]
    n: String,
    /// Comma-separated dimensions.
    #[arg(long, default_value = "10,100")]
    p: String,
    /// Comma-separated ε values in (0,1].
    #[arg(long, default_value = "0.5,1.0")]
    eps: String,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 10.0)]
    r: f64,
    #[arg(long, default_value_t = 1.0)]
    sup_risk: f64,
    #[arg(long, default_value_t = 1.0)]
    eh: f64,
    #[arg(long, default_value_t = 1.0)]
    eh_pow: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err.downcast_ref::<Error>() {
                Some(Error::Config(_)) | Some(Error::Domain(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::FitCsv(args) => fit_csv(args),
        Command::Bounds(args) => bounds_table(args),
        Command::Selftest => selftest(),
    }
}

fn write_or_print(
    report: &MetricsReport,
    output: Option<&PathBuf>,
    format: &str,
) -> anyhow::Result<ExitCode> {
    let format = ReportFormat::from_name(format)?;
    let reports = std::slice::from_ref(report);
    match output {
        Some(path) => {
            emit_report(reports, format, path)?;
            eprintln!("report written to {}", path.display());
        }
        None => match format {
            ReportFormat::Csv => print!("{}", render_csv(&report_rows(reports))),
            ReportFormat::Json => {
                println!("{}", serde_json::to_string_pretty(&report_rows(reports))?)
            }
        },
    }
    if report.flagged_invalid {
        eprintln!(
            "warning: report flagged invalid ({})",
            report.flag_reason.as_deref().unwrap_or("unspecified")
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let mut map = match &args.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::parse("")?,
    };
    for assignment in &args.sets {
        map.set(assignment)?;
    }
    if let Some(reps) = args.reps {
        map.set(&format!("experiment.reps={reps}"))?;
    }
    if let Some(seed) = args.seed {
        map.set(&format!("experiment.seed={seed}"))?;
    }
    if let Some(jobs) = args.jobs {
        map.set(&format!("experiment.jobs={jobs}"))?;
    }
    let cfg = map.to_experiment()?;
    let report = run_experiment(&cfg)?;
    let wins = report
        .truncated
        .values
        .iter()
        .zip(&report.untruncated.values)
        .filter(|(t, u)| match (t, u) {
            (Some(t), Some(u)) => t < u,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    eprintln!(
        "{} / {}: truncated {:.4} ({:.4}) vs untruncated {:.4} ({:.4})  wins {}/{}  [alpha={:.4}, rho_t={:.2e}, rho_u={:.2e}, 1+eps={}] in {:.1}s",
        report.task,
        report.noise,
        report.truncated.mean,
        report.truncated.se,
        report.untruncated.mean,
        report.untruncated.se,
        wins,
        report.reps,
        report.truncated.alpha.unwrap_or(f64::NAN),
        report.truncated.rho,
        report.untruncated.rho,
        report.one_plus_eps,
        report.wall_secs
    );
    write_or_print(&report, args.output.as_ref(), &args.format)
}

fn fit_csv(args: FitCsvArgs) -> anyhow::Result<ExitCode> {
    let eps_grid: Vec<f64> = args
        .eps_grid
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad eps grid: {}", args.eps_grid)))?;
    let alpha_mode = match args.alpha_mode.as_str() {
        "theory" => AlphaMode::Theory,
        "search" => AlphaMode::Search,
        other => return Err(Error::Config(format!("unknown alpha mode: {other}")).into()),
    };
    let cfg = CsvExperimentConfig {
        path: args.path,
        target_column: args.target,
        split_fraction: args.split,
        standardize: true,
        task: Task::from_name(&args.task)?,
        model_kind: args.model,
        reps: args.reps,
        seed: args.seed,
        eps_grid,
        lambda_name: "chen".into(),
        alpha_mode,
        rho_mode: RhoMode::Search,
        sgd: SgdSettings {
            learning_rate: args.learning_rate,
            epochs: args.epochs,
            batch: None,
            t_decay: None,
            projection_radius: None,
        },
        holdout_fraction: 0.25,
        delta: 0.05,
        r: 10.0,
        eta: args.eta,
    };
    let report = run_csv_experiment(&cfg)?;
    eprintln!(
        "{} on {}: truncated {} {:.4} vs untruncated {:.4}  [1+eps={}] in {:.1}s",
        report.task,
        report.noise,
        report.metric,
        report.truncated.mean,
        report.untruncated.mean,
        report.one_plus_eps,
        report.wall_secs
    );
    write_or_print(&report, args.output.as_ref(), &args.format)
}

fn parse_grid<T: std::str::FromStr>(text: &str, what: &str) -> anyhow::Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} grid entry: '{s}'")).into())
        })
        .collect()
}

fn bounds_table(args: BoundsArgs) -> anyhow::Result<ExitCode> {
    let ns: Vec<usize> = parse_grid(&args.n, "n")?;
    let ps: Vec<usize> = parse_grid(&args.p, "p")?;
    let eps: Vec<f64> = parse_grid(&args.eps, "eps")?;
    println!("n,p,epsilon,delta,r,sup_risk,eh,eh_pow,excess_bound");
    for &n in &ns {
        for &p in &ps {
            for &e in &eps {
                let inp = BoundInputs {
                    n,
                    p,
                    epsilon: e,
                    delta: args.delta,
                    r: args.r,
                    sup_risk: args.sup_risk,
                    eh: args.eh,
                    eh_pow: args.eh_pow,
                    c_l: None,
                    dnn: None,
                };
                let value = excess_bound_thm2(&inp)?;
                println!(
                    "{n},{p},{e},{},{},{},{},{},{value:.6e}",
                    args.delta, args.r, args.sup_risk, args.eh, args.eh_pow
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest() -> anyhow::Result<ExitCode> {
    let mut failures = 0usize;
    let mut check = |name: &str, pass: bool, detail: String| {
        println!("{}: {name} {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failures += 1;
        }
    };

    let variants: Vec<(String, HighOrderFn)> = {
        let mut v = vec![
            ("catoni".to_string(), HighOrderFn::CatoniQuadratic),
            ("xu:3".to_string(), HighOrderFn::XuPolySum { m: 3 }),
        ];
        for &e in &[0.3, 0.5, 1.0] {
            for name in ["minsker", "chen", "lee", "lam"] {
                v.push((format!("{name} eps={e}"), HighOrderFn::from_name(name, e)?));
            }
        }
        v
    };

    for (name, fn_) in &variants {
        let report = verify_sandwich(*fn_, 100_000, 2024)?;
        check(
            &format!("sandwich[{name}]"),
            report.pass,
            format!("worst slack {:+.2e} at x={:.3e}", report.worst_slack, report.worst_x),
        );

        let mut worst = 0.0f64;
        for &x in &[-50.0f64, -2.0, -0.3, 0.4, 1.0, 7.0, 120.0] {
            let h = 1e-6 * x.abs().max(1.0);
            let fd = (psi_eval(*fn_, x + h)? - psi_eval(*fn_, x - h)?) / (2.0 * h);
            let an = psi_deriv(*fn_, x)?;
            worst = worst.max((an - fd).abs() / fd.abs().max(1e-12));
        }
        check(
            &format!("score-derivative[{name}]"),
            worst <= 1e-5,
            format!("max rel err {worst:.2e}"),
        );
    }

    let worst = max_knight_residual(10_000, 31);
    check("knight-identity[1e4 triples]", worst <= 1e-12, format!("max residual {worst:.2e}"));

    if failures == 0 {
        println!("selftest: all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("selftest: {failures} check(s) failed");
        Ok(ExitCode::FAILURE)
    }
}
