//! Command-line wiring: simulations, exact solves, drift checks, threshold
//! and refined-parameter solving, critical scans and bound verification,
//! with reproducible CSV/JSON output.

use crate::{bounds, drift, exact, mc, model};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bs", version, about = "Bak-Sneppen simulation and verification toolkit")]
struct Cli {
    /// Optional `key = value` config file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true, env = "BS_SEED")]
    seed: Option<u64>,
    /// Worker-thread cap; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo run of a single (n, p) point.
    Simulate(SimulateArgs),
    /// Exact stationary distribution on a small ring.
    Exact(ExactArgs),
    /// Closed-form end-case drifts against the enumeration oracle.
    Drift(DriftArgs),
    /// Solve the critical polynomial for p and beta.
    Threshold(ThresholdArgs),
    /// Search refined potential weights minimizing the feasible threshold.
    Optimize(OptimizeArgs),
    /// Grid scan of nu(n, p) and the empirical critical region.
    Scan(ScanArgs),
    /// Exhaustive small-ring checks of the flip/interior lemmas.
    VerifyLemmas(VerifyLemmasArgs),
    /// Renewal, moment and Cesaro bound checks.
    VerifyBounds(VerifyBoundsArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    batches: Option<usize>,
}

#[derive(Debug, Args)]
struct ExactArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// power | dense | both
    #[arg(long)]
    method: Option<String>,
}

#[derive(Debug, Args)]
struct DriftArgs {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Debug, Args)]
struct ScanArgs {
    /// Comma-separated ring sizes.
    #[arg(long)]
    n_list: Option<String>,
    /// Comma-separated p values.
    #[arg(long)]
    p_grid: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Debug, Args)]
struct VerifyLemmasArgs {
    /// Comma-separated ring sizes (6..=14 each).
    #[arg(long)]
    n_list: Option<String>,
    /// Comma-separated beta values.
    #[arg(long)]
    betas: Option<String>,
}

#[derive(Debug, Args)]
struct VerifyBoundsArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated ring sizes for the Cesaro check.
    #[arg(long)]
    n_list: Option<String>,
    #[arg(long)]
    walk_budget: Option<u64>,
}

/// Reproducibility header embedded in every output.
#[derive(Debug, Serialize)]
struct Header {
    version: &'static str,
    command: String,
    seed: u64,
    config: serde_json::Value,
}

#[derive(Debug, Serialize)]
struct Report<T: Serialize> {
    header: Header,
    #[serde(flatten)]
    body: T,
}

enum CliFailure {
    Usage(String),
    Run(String),
    CheckFailed,
}

impl<E: std::error::Error> From<E> for CliFailure {
    fn from(e: E) -> Self {
        CliFailure::Run(e.to_string())
    }
}

/// Plain `key = value` lines; `#` starts a comment.
fn load_config_file(path: &PathBuf) -> Result<HashMap<String, String>, CliFailure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliFailure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliFailure::Usage(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

struct Settings {
    file: HashMap<String, String>,
}

impl Settings {
    fn get<T: std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CliFailure> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| CliFailure::Usage(format!("config key {key}: bad value `{raw}`"))),
            None => Ok(default),
        }
    }

    fn get_opt<T: std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>, CliFailure> {
        Ok(match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(raw.parse().map_err(|_| {
                    CliFailure::Usage(format!("config key {key}: bad value `{raw}`"))
                })?),
                None => None,
            },
        })
    }
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliFailure> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliFailure::Usage(format!("bad {what} entry `{s}`")))
        })
        .collect()
}

/// Parses argv, runs the requested operation and returns the process exit
/// code. All output is deterministic for a fixed (config, seed).
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; keep its exit code semantics
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(CliFailure::Usage(msg)) => {
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": msg }));
            EXIT_USAGE
        }
        Err(CliFailure::Run(msg)) => {
            eprintln!("{}", serde_json::json!({ "error": "run", "message": msg }));
            EXIT_CHECK_FAILED
        }
        Err(CliFailure::CheckFailed) => EXIT_CHECK_FAILED,
    }
}

fn emit(
    output: &Option<PathBuf>,
    format: Format,
    header: Header,
    json_body: impl Serialize,
    csv: Option<(String, Vec<String>)>,
) -> Result<(), CliFailure> {
    let text = match (format, csv) {
        (Format::Csv, Some((columns, rows))) => {
            let mut s = String::new();
            s.push_str(&format!(
                "# version={} command={} seed={}\n",
                header.version, header.command, header.seed
            ));
            s.push_str(&format!("# config={}\n", header.config));
            s.push_str(&columns);
            s.push('\n');
            for row in rows {
                s.push_str(&row);
                s.push('\n');
            }
            s
        }
        (Format::Csv, None) => {
            return Err(CliFailure::Usage(
                "this command has no CSV form; use --format json".into(),
            ))
        }
        (Format::Json, _) => {
            let mut s = serde_json::to_string_pretty(&Report {
                header,
                body: json_body,
            })
            .map_err(|e| CliFailure::Run(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| CliFailure::Run(e.to_string()))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| CliFailure::Run(e.to_string()))?;
        }
    }
    Ok(())
}

fn header(command: &str, seed: u64, config: impl Serialize) -> Header {
    Header {
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        seed,
        config: serde_json::to_value(config).expect("serializable config"),
    }
}

fn scan_csv_rows(rows: &[mc::ScanRow]) -> (String, Vec<String>) {
    (
        "n,p,seed,steps,nu_hat,stderr,mean_potential,flip_count".to_string(),
        rows.iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{}",
                    r.n, r.p, r.seed, r.steps, r.nu_hat, r.std_err, r.mean_potential, r.flip_count
                )
            })
            .collect(),
    )
}

fn dispatch(cli: Cli) -> Result<(), CliFailure> {
    let file = match &cli.config {
        Some(path) => load_config_file(path)?,
        None => HashMap::new(),
    };
    let settings = Settings { file };
    if let Some(threads) = cli.threads {
        // Ignore the error if a global pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let seed = settings.get(cli.seed, "seed", 0)?;
    let format = settings
        .get_opt(cli.format, "format")?
        .unwrap_or(Format::Json);

    match cli.command {
        Command::Threshold(args) => {
            let tol = settings.get(args.tol, "tol", 1e-12)?;
            let solution = drift::solve_threshold(tol);
            let config = serde_json::json!({ "tol": tol });
            emit(
                &cli.output,
                format,
                header("threshold", seed, config),
                solution,
                None,
            )
        }
        Command::Drift(args) => {
            let p = settings.get_opt(args.p, "p")?.ok_or_else(missing("p"))?;
            let beta = settings.get(args.beta, "beta", 0.3)?;
            let report = drift::worst_drift(p, beta).map_err(usage_err)?;
            #[derive(Serialize)]
            struct Row {
                case: String,
                closed_form: f64,
                oracle: f64,
            }
            let mut rows = Vec::new();
            for case in drift::EndCase::ALL {
                rows.push(Row {
                    case: format!("{case:?}"),
                    closed_form: drift::drift_closed_form(case, p, beta).map_err(usage_err)?,
                    oracle: drift::drift_enumerate(case, p, beta).map_err(usage_err)?,
                });
            }
            let body = serde_json::json!({
                "cases": rows,
                "worst": report.worst,
                "margin": report.margin,
            });
            let csv = (
                "case,closed_form,oracle".to_string(),
                rows.iter()
                    .map(|r| format!("{},{},{}", r.case, r.closed_form, r.oracle))
                    .collect(),
            );
            let config = serde_json::json!({ "p": p, "beta": beta });
            emit(
                &cli.output,
                format,
                header("drift", seed, config),
                body,
                Some(csv),
            )
        }
        Command::Exact(args) => {
            let n = settings.get(args.n, "n", 8)?;
            let p = settings.get_opt(args.p, "p")?.ok_or_else(missing("p"))?;
            let beta = settings.get(args.beta, "beta", 0.3)?;
            let method = settings.get(args.method, "method", "power".to_string())?;
            let params = model::PotentialParams::new(beta).map_err(usage_err)?;
            let kernel = exact::build_kernel(n, p).map_err(usage_err)?;
            let power = match method.as_str() {
                "power" | "both" => Some(exact::stationary(&kernel)?),
                "dense" => None,
                other => {
                    return Err(CliFailure::Usage(format!(
                        "method must be power|dense|both, got `{other}`"
                    )))
                }
            };
            let dense = match method.as_str() {
                "dense" | "both" => Some(exact::stationary_dense(&kernel)?),
                _ => None,
            };
            let mu = exact::mu_exact(&kernel, &params)?;
            let solution = power.as_ref().or(dense.as_ref()).expect("one route ran");
            let body = serde_json::json!({
                "n": n,
                "p": p,
                "nu": solution.nu,
                "mu": mu,
                "residual_l1": solution.residual_l1,
                "iterations": solution.iterations,
                "nu_dense": dense.as_ref().map(|d| d.nu),
                "route_gap": match (&power, &dense) {
                    (Some(a), Some(b)) => Some((a.nu - b.nu).abs()),
                    _ => None,
                },
            });
            let config = serde_json::json!({ "n": n, "p": p, "beta": beta, "method": method });
            emit(
                &cli.output,
                format,
                header("exact", seed, config),
                body,
                None,
            )
        }
        Command::Optimize(args) => {
            let budget = settings.get(args.budget, "budget", 200_000)?;
            let window = settings.get(args.window, "window", drift::REFINED_WINDOW)?;
            let solution =
                drift::optimize_refined_with_window(budget, window).map_err(usage_err)?;
            let config = serde_json::json!({ "budget": budget, "window": window });
            emit(
                &cli.output,
                format,
                header("optimize", seed, config),
                solution,
                None,
            )
        }
        Command::Simulate(args) => {
            let n = settings.get_opt(args.n, "n")?.ok_or_else(missing("n"))?;
            let p = settings.get_opt(args.p, "p")?.ok_or_else(missing("p"))?;
            let steps = settings.get(args.steps, "steps", 1_000_000)?;
            let beta = settings.get(args.beta, "beta", 0.3)?;
            let params = model::PotentialParams::new(beta).map_err(usage_err)?;
            let mut plan = mc::SimulationPlan::new(n, p, steps, seed).map_err(usage_err)?;
            if let Some(burn_in) = settings.get_opt(args.burn_in, "burn_in")? {
                plan.burn_in_steps = burn_in;
            }
            if let Some(batches) = settings.get_opt(args.batches, "batches")? {
                plan.batch_count = batches;
            }
            plan.validate().map_err(usage_err)?;
            let stats = mc::simulate(&plan, &params)?;
            let row = mc::ScanRow {
                n,
                p,
                seed,
                steps,
                nu_hat: stats.nu_hat.mean,
                std_err: stats.nu_hat.std_err,
                mean_potential: stats.mean_potential,
                flip_count: stats.flip_count,
            };
            let csv = scan_csv_rows(std::slice::from_ref(&row));
            let config = serde_json::to_value(plan).expect("plan serializes");
            emit(
                &cli.output,
                format,
                header("simulate", seed, config),
                stats,
                Some(csv),
            )
        }
        Command::Scan(args) => {
            let n_list = settings.get(args.n_list, "n_list", "32,64,128".to_string())?;
            let p_grid = settings.get(
                args.p_grid,
                "p_grid",
                "0.2,0.3,0.35,0.4,0.45,0.5,0.6".to_string(),
            )?;
            let steps = settings.get(args.steps, "steps", 1_000_000)?;
            let n_list: Vec<usize> = parse_list(&n_list, "n_list")?;
            let p_grid: Vec<f64> = parse_list(&p_grid, "p_grid")?;
            let report = mc::scan_critical(&n_list, &p_grid, steps, seed)?;
            let csv = scan_csv_rows(&report.rows);
            let config = serde_json::json!({
                "n_list": n_list, "p_grid": p_grid, "steps": steps,
            });
            emit(
                &cli.output,
                format,
                header("scan", seed, config),
                report,
                Some(csv),
            )
        }
        Command::VerifyLemmas(args) => {
            let n_list = settings.get(args.n_list, "n_list", "7,8,9,10,11,12".to_string())?;
            let n_list: Vec<usize> = parse_list(&n_list, "n_list")?;
            let betas = settings.get_opt(args.betas, "betas")?;
            let betas: Vec<f64> = match betas {
                Some(raw) => parse_list(&raw, "betas")?,
                None => vec![0.1, 0.3, drift::solve_threshold(1e-13).beta_diamond],
            };
            let mut reports = Vec::new();
            let mut all_passed = true;
            for &n in &n_list {
                for &beta in &betas {
                    let params = model::PotentialParams::new(beta).map_err(usage_err)?;
                    let report = exact::exhaustive_lemma_check(n, &params).map_err(usage_err)?;
                    all_passed &= report.passed();
                    reports.push(report);
                }
            }
            let body = serde_json::json!({ "passed": all_passed, "reports": reports });
            let config = serde_json::json!({ "n_list": n_list, "betas": betas });
            emit(
                &cli.output,
                format,
                header("verify-lemmas", seed, config),
                body,
                None,
            )?;
            if all_passed {
                Ok(())
            } else {
                Err(CliFailure::CheckFailed)
            }
        }
        Command::VerifyBounds(args) => {
            let n = settings.get(args.n, "n", 128)?;
            let p = settings.get(args.p, "p", 0.6)?;
            let steps = settings.get(args.steps, "steps", 1_000_000)?;
            let beta = settings.get(args.beta, "beta", 0.3)?;
            let walk_budget = settings.get(args.walk_budget, "walk_budget", 1_000_000)?;
            let n_list = settings.get(args.n_list, "n_list", String::new())?;
            let params = model::PotentialParams::new(beta).map_err(usage_err)?;

            let constants = bounds::moment_bound_constants(8.0, 1.0, 0.4, 1)?;
            let walk = bounds::verify_fmm_on_walk(
                bounds::WalkSpec::Reflected {
                    up_prob: 0.3,
                    y0: 0.0,
                },
                &constants,
                walk_budget,
                seed,
            )?;
            let trace = bounds::trace_chain(n, p, &params, steps, seed)?;
            let chain = bounds::check_geometric_domination(&trace);
            let cesaro = if n_list.is_empty() {
                None
            } else {
                let n_list: Vec<usize> = parse_list(&n_list, "n_list")?;
                Some(bounds::cesaro_bound_check(&n_list, p, &params, steps, seed)?)
            };
            let passed = walk.passed()
                && chain.passed()
                && cesaro.as_ref().map_or(true, bounds::CesaroReport::passed);
            let body = serde_json::json!({
                "passed": passed,
                "walk": walk,
                "chain": chain,
                "cesaro": cesaro,
            });
            let config = serde_json::json!({
                "n": n, "p": p, "steps": steps, "beta": beta,
                "walk_budget": walk_budget,
            });
            emit(
                &cli.output,
                format,
                header("verify-bounds", seed, config),
                body,
                None,
            )?;
            if passed {
                Ok(())
            } else {
                Err(CliFailure::CheckFailed)
            }
        }
    }
}

fn missing(key: &'static str) -> impl Fn() -> CliFailure {
    move || CliFailure::Usage(format!("missing required parameter `{key}`"))
}

fn usage_err<E: std::error::Error>(e: E) -> CliFailure {
    CliFailure::Usage(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str], out: &PathBuf) -> i32 {
        let mut argv = vec!["bs"];
        argv.extend_from_slice(args);
        argv.extend_from_slice(&["--output", out.to_str().unwrap()]);
        run(argv)
    }

    #[test]
    fn threshold_command_reports_constants() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("threshold.json");
        assert_eq!(run_capture(&["threshold", "--tol", "1e-12"], &out), EXIT_OK);
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        let p = v["p_diamond"].as_f64().unwrap();
        assert!(p > 0.45 && p < 0.46);
        assert!((v["beta_diamond"].as_f64().unwrap() - 0.34656).abs() < 1e-5);
        assert_eq!(v["header"]["command"], "threshold");
    }

    #[test]
    fn exact_n3_is_product_bernoulli() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("exact.json");
        assert_eq!(
            run_capture(&["exact", "--n", "3", "--p", "0.7"], &out),
            EXIT_OK
        );
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert!((v["nu"].as_f64().unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn drift_csv_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let args = ["drift", "--p", "0.5", "--beta", "0.3", "--format", "csv"];
        assert_eq!(run_capture(&args, &a), EXIT_OK);
        assert_eq!(run_capture(&args, &b), EXIT_OK);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let text = std::fs::read_to_string(&a).unwrap();
        assert!(text.starts_with("# version="));
        assert!(text.contains("case,closed_form,oracle"));
    }

    #[test]
    fn config_file_fills_in_flags_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "p = 0.5\nbeta = 0.1 # comment\n").unwrap();
        let out = dir.path().join("drift.json");
        let code = run_capture(
            &["drift", "--config", cfg.to_str().unwrap(), "--beta", "0.3"],
            &out,
        );
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["header"]["config"]["p"], 0.5); // from file
        assert_eq!(v["header"]["config"]["beta"], 0.3); // flag wins
    }

    #[test]
    fn missing_required_is_usage_error() {
        assert_eq!(run(["bs", "drift"]), EXIT_USAGE);
        assert_eq!(run(["bs", "no-such-command"]), EXIT_USAGE);
    }

    #[test]
    fn verify_lemmas_small() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("lemmas.json");
        let code = run_capture(
            &["verify-lemmas", "--n-list", "7,8", "--betas", "0.3"],
            &out,
        );
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["passed"], true);
    }

    #[test]
    fn simulate_csv_row_schema() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sim.csv");
        let code = run_capture(
            &[
                "simulate", "--n", "16", "--p", "0.5", "--steps", "20000", "--format", "csv",
                "--seed", "7",
            ],
            &out,
        );
        assert_eq!(code, EXIT_OK);
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.contains("n,p,seed,steps,nu_hat,stderr,mean_potential,flip_count"));
        let row = text.lines().last().unwrap();
        assert!(row.starts_with("16,0.5,7,20000,"));
    }
}
