//! Command-line plumbing: argument parsing, file I/O, and dispatch.
//!
//! Every command is deterministic given its flags; all randomness flows
//! from an explicit `--seed`. Exit codes: 0 on success, 2 on usage or
//! schema errors, 3 on numerical or estimation failures.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dist::{to_grid_cdf, DistributionProfile};
use crate::error::{Error, Result};
use crate::estimate::{
    bootstrap_se, fit_mle, Dataset, EstimateOptions, EstimationResult,
};
use crate::fixpoint::{solve_fixed_point, FixedPointConfig, FixedPointReport};
use crate::heckman::fit_two_step;
use crate::mc::{simulate_dataset, DgpSpec};
use crate::qre::{matching_pennies, solve_qre};
use crate::report::{reproduce_table, table_spec};
use crate::select::{
    check_log_supermodularity, compute_rho_general, compute_rho_star, Covariates, ModelConfig,
    SelectionKind, SelectionModel,
};

/// Exit code for an error: 2 for usage and schema problems, 3 for
/// numerical and estimation failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::EmptyCell { .. }
        | Error::DegenerateLikelihood
        | Error::MillsCollinear
        | Error::RhoTooLarge { .. }
        | Error::NotDifferentiable
        | Error::NotSupermodular => 3,
        _ => 2,
    }
}

fn parse_threads(s: &str) -> std::result::Result<usize, String> {
    if s == "auto" {
        Ok(0)
    } else {
        s.parse()
            .map_err(|_| String::from("expected a thread count or \"auto\""))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "offersel",
    version,
    about = "Recovers offered price distributions from choice-selected samples"
)]
pub struct Cli {
    /// Worker threads for replications and bootstraps ("auto" uses all cores).
    #[arg(long, global = true, default_value = "auto", value_parser = parse_threads)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a synthetic dataset from one of the five standard designs.
    Simulate(SimulateArgs),
    /// Fit the selection parameters and recover offered distributions.
    Estimate(EstimateArgs),
    /// Iterate the reweighting operator to its fixed point.
    SolveContraction(SolveArgs),
    /// Contraction-modulus diagnostics for a model configuration.
    Modulus(ModulusArgs),
    /// Rerun the replication studies behind one of the result tables.
    Reproduce(ReproduceArgs),
    /// Logit quantal-response fixed point of the asymmetric matching game.
    Qre(QreArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Design id, 1..=5.
    #[arg(long)]
    pub dgp: usize,
    /// Observations to draw.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Omit the excluded utility covariate from the output.
    #[arg(long)]
    pub drop_x1: bool,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorArg {
    /// Fixed-point maximum likelihood.
    Fc,
    /// Two-step selection-correction baseline.
    Heckman,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelArg {
    /// Normal taste shock.
    Probit,
    /// Logistic taste shock.
    Logistic,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Input dataset CSV with columns id,choice[,x1],x2,price.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Fc)]
    pub estimator: EstimatorArg,
    /// Taste-shock family the selection probability assumes.
    #[arg(long, value_enum, default_value_t = ModelArg::Probit)]
    pub model: ModelArg,
    /// Alternatives in the data.
    #[arg(long, default_value_t = 2)]
    pub j: usize,
    /// Bootstrap replicates for standard errors (0 disables).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Fixed-point step tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Fixed-point iteration cap.
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Objective evaluation budget of the simplex search.
    #[arg(long, default_value_t = 500)]
    pub max_evals: usize,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for 300-point CDF CSVs of each recovered component.
    #[arg(long)]
    pub emit_cdf: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Input JSON: model and theta, covariate cell, selected profile.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for 300-point CDF CSVs of the offered components.
    #[arg(long)]
    pub emit_cdf: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModulusArgs {
    /// Input JSON: model and theta, covariate cell, per-alternative
    /// log-price bounds, optional grid resolution.
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    /// Table id, 1..=8.
    #[arg(long)]
    pub table: usize,
    /// Replications per study.
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    /// Sample-size override for tables 1..=4.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct QreArgs {
    /// Precision of the logit response (0 = uniform play).
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_output(out, &bytes)
}

fn selection_kind(model: ModelArg) -> SelectionKind {
    match model {
        ModelArg::Probit => SelectionKind::BinaryProbitLogprice,
        ModelArg::Logistic => SelectionKind::BinaryLogisticLogprice,
    }
}

fn estimate_options(tol: f64, max_iter: usize, max_evals: usize) -> EstimateOptions {
    let mut options = EstimateOptions::default();
    options.tol = tol;
    options.max_iter = max_iter;
    options.simplex.max_evals = max_evals;
    options
}

/// Writes one `grid,value` CSV per offered component into `dir`, named
/// `F<j>_<cell>.csv`.
fn emit_cdf_csvs(
    dir: &Path,
    offered: &std::collections::BTreeMap<crate::estimate::CellKey, DistributionProfile>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (cell, profile) in offered {
        let cell_tag = cell.to_string().replace(',', "_");
        for (j, component) in profile.components().iter().enumerate() {
            let curve = to_grid_cdf(component, 300)?;
            let path = dir.join(format!("F{}_{}.csv", j + 1, cell_tag));
            let file = fs::File::create(path)?;
            curve.write_csv(io::BufWriter::new(file))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SchemaWrapped<T: Serialize> {
    schema: u32,
    #[serde(flatten)]
    payload: T,
}

fn with_schema<T: Serialize>(payload: T) -> SchemaWrapped<T> {
    SchemaWrapped { schema: 1, payload }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut spec = DgpSpec::standard(args.dgp)?;
    spec.include_excluded = !args.drop_x1;
    let data = simulate_dataset(&spec, args.n, args.seed)?;
    let mut bytes = Vec::new();
    data.write_csv(&mut bytes)?;
    write_output(args.out.as_deref(), &bytes)
}

#[derive(Serialize)]
struct BootstrapInfo {
    replicates: usize,
    failures: usize,
}

#[derive(Serialize)]
struct EstimateOutput {
    schema: u32,
    estimator: &'static str,
    #[serde(flatten)]
    result: EstimationResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapInfo>,
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let file = fs::File::open(&args.data)?;
    let data = Dataset::read_csv(io::BufReader::new(file), args.j)?;
    let model = SelectionModel::with_default_space(selection_kind(args.model), args.j)?;
    let options = estimate_options(args.tol, args.max_iter, args.max_evals);

    match args.estimator {
        EstimatorArg::Fc => {
            let mut result = fit_mle(&data, &model, &options)?;
            let bootstrap = if args.bootstrap > 0 {
                let summary = bootstrap_se(&data, &model, &options, args.bootstrap, args.seed)?;
                let info = BootstrapInfo {
                    replicates: summary.replicates,
                    failures: summary.failures,
                };
                result.se = Some(summary.se);
                Some(info)
            } else {
                None
            };
            if let Some(dir) = &args.emit_cdf {
                emit_cdf_csvs(dir, &result.offered)?;
            }
            write_json(
                args.out.as_deref(),
                &EstimateOutput {
                    schema: 1,
                    estimator: "fc",
                    result,
                    bootstrap,
                },
            )
        }
        EstimatorArg::Heckman => {
            if args.bootstrap > 0 {
                return Err(Error::invalid(
                    "bootstrap standard errors apply to the fixed-point estimator only",
                ));
            }
            let result = fit_two_step(&data, &model, &options)?;
            if let Some(dir) = &args.emit_cdf {
                emit_cdf_csvs(dir, &result.offered)?;
            }
            #[derive(Serialize)]
            struct TwoStepOutput<T: Serialize> {
                schema: u32,
                estimator: &'static str,
                #[serde(flatten)]
                result: T,
            }
            write_json(
                args.out.as_deref(),
                &TwoStepOutput {
                    schema: 1,
                    estimator: "heckman",
                    result,
                },
            )
        }
    }
}

#[derive(Deserialize)]
struct SolveInput {
    #[serde(flatten)]
    config: ModelConfig,
    #[serde(default)]
    x: Covariates,
    selected: DistributionProfile,
}

#[derive(Serialize)]
struct SolveOutput {
    schema: u32,
    offered: DistributionProfile,
    report: FixedPointReport,
}

fn cmd_solve_contraction(args: &SolveArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)?;
    let input: SolveInput = serde_json::from_str(&text)?;
    let mut config = FixedPointConfig::default();
    config.tol = args.tol;
    config.max_iter = args.max_iter;
    let (offered, report) = solve_fixed_point(
        &input.selected,
        &input.config.model,
        input.x,
        &input.config.theta,
        &config,
    )?;
    if let Some(dir) = &args.emit_cdf {
        fs::create_dir_all(dir)?;
        for (j, component) in offered.components().iter().enumerate() {
            let curve = to_grid_cdf(component, 300)?;
            let file = fs::File::create(dir.join(format!("F{}.csv", j + 1)))?;
            curve.write_csv(io::BufWriter::new(file))?;
        }
    }
    write_json(
        args.out.as_deref(),
        &SolveOutput {
            schema: 1,
            offered,
            report,
        },
    )
}

fn default_resolution() -> usize {
    201
}

#[derive(Deserialize)]
struct ModulusInput {
    #[serde(flatten)]
    config: ModelConfig,
    #[serde(default)]
    x: Covariates,
    /// One [lo, hi] log-price interval per alternative.
    bounds: Vec<(f64, f64)>,
    #[serde(default = "default_resolution")]
    resolution: usize,
}

fn cmd_modulus(args: &ModulusArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)?;
    let input: ModulusInput = serde_json::from_str(&text)?;
    let model = &input.config.model;
    let theta = &input.config.theta;
    let supermodular =
        check_log_supermodularity(model, input.x, theta, &input.bounds, input.resolution)?;
    let report = if supermodular {
        compute_rho_star(model, input.x, theta, &input.bounds)?
    } else {
        eprintln!("warning: log-supermodularity fails; reporting the general bound only");
        compute_rho_general(model, input.x, theta, &input.bounds, input.resolution)?
    };
    let best = report.rho_star.unwrap_or(report.rho);
    if best >= 1.0 {
        eprintln!("warning: modulus >= 1; contraction is not guaranteed");
    }
    write_json(args.out.as_deref(), &with_schema(report))
}

fn cmd_reproduce(args: &ReproduceArgs) -> Result<()> {
    let spec = table_spec(args.table, args.n)?;
    if args.reps == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    let options = EstimateOptions::default();
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path)?;
            reproduce_table(&spec, args.reps, args.seed, &options, io::BufWriter::new(file))?;
        }
        None => {
            let stdout = io::stdout();
            reproduce_table(&spec, args.reps, args.seed, &options, stdout.lock())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct QreOutput {
    schema: u32,
    lambda: f64,
    strategies: Vec<Vec<f64>>,
    iterations: usize,
    converged: bool,
}

fn cmd_qre(args: &QreArgs) -> Result<()> {
    let game = matching_pennies(args.lambda);
    let (strategies, report) = solve_qre(&game, args.tol, args.max_iter)?;
    write_json(
        args.out.as_deref(),
        &QreOutput {
            schema: 1,
            lambda: args.lambda,
            strategies,
            iterations: report.iterations,
            converged: report.converged,
        },
    )
}

/// Dispatches a parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // Ignore the error when a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::SolveContraction(args) => cmd_solve_contraction(args),
        Command::Modulus(args) => cmd_modulus(args),
        Command::Reproduce(args) => cmd_reproduce(args),
        Command::Qre(args) => cmd_qre(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_exit_codes_split_usage_from_numerics() {
        assert_eq!(exit_code(&Error::invalid("x")), 2);
        assert_eq!(exit_code(&Error::ThetaOutOfBounds), 2);
        assert_eq!(exit_code(&Error::GridMismatch), 2);
        assert_eq!(exit_code(&Error::MillsCollinear), 3);
        assert_eq!(exit_code(&Error::DegenerateLikelihood), 3);
        assert_eq!(
            exit_code(&Error::EmptyCell {
                alternative: 1,
                cell: "x2=0".into()
            }),
            3
        );
    }

    #[test]
    fn threads_parser_accepts_auto_and_numbers() {
        assert_eq!(parse_threads("auto").unwrap(), 0);
        assert_eq!(parse_threads("4").unwrap(), 4);
        assert!(parse_threads("many").is_err());
    }

    #[test]
    fn cli_parses_representative_invocations() {
        use clap::Parser;
        let cli = Cli::try_parse_from([
            "offersel", "simulate", "--dgp", "1", "--n", "100", "--seed", "7",
        ])
        .unwrap();
        match cli.command {
            Command::Simulate(args) => {
                assert_eq!(args.dgp, 1);
                assert_eq!(args.n, 100);
                assert_eq!(args.seed, 7);
                assert!(!args.drop_x1);
            }
            _ => panic!("wrong command"),
        }

        let cli = Cli::try_parse_from([
            "offersel",
            "--threads",
            "2",
            "reproduce",
            "--table",
            "1",
            "--reps",
            "20",
            "--seed",
            "7",
        ])
        .unwrap();
        assert_eq!(cli.threads, 2);
        match cli.command {
            Command::Reproduce(args) => {
                assert_eq!(args.table, 1);
                assert_eq!(args.reps, 20);
                assert_eq!(args.n, None);
            }
            _ => panic!("wrong command"),
        }

        assert!(Cli::try_parse_from(["offersel", "simulate", "--nope"]).is_err());
        assert!(Cli::try_parse_from(["offersel", "estimate"]).is_err()); // --data required
    }

    #[test]
    fn solve_input_json_shape() {
        let text = r#"{
            "schema": 1,
            "kind": "binary_probit_logprice",
            "J": 2,
            "theta": {"gamma": 1.0, "xi": [0.0, 1.0], "beta": 0.5},
            "x": {"x1": 0, "x2": 1},
            "selected": [
                {"atoms": [1.0, 2.0], "weights": [0.5, 0.5], "bounds": [0.5, 3.0]},
                {"atoms": [1.5, 2.5], "weights": [0.25, 0.75], "bounds": [0.5, 3.0]}
            ]
        }"#;
        let input: SolveInput = serde_json::from_str(text).unwrap();
        assert_eq!(input.config.theta.gamma, 1.0);
        assert_eq!(input.x.x2, 1);
        assert_eq!(input.selected.components().len(), 2);
    }
}
