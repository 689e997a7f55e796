//! Command-line front end: config-driven experiment runs plus small
//! inspection subcommands for the lattice, the Gibbs samplers, the
//! identity residuals, and the bound certifications.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rfim_core::disorder::{
    check_perturbation_condition, sample_field, DisorderFamily, FieldSchedule,
    DEFAULT_THIRD_MOMENT_THRESHOLD,
};
use rfim_core::experiments::{self, ExperimentConfig};
use rfim_core::gibbs::{ChainSettings, ExactEnsemble, McmcEnsemble, DEFAULT_VOLUME_CAP};
use rfim_core::hamiltonian::{
    exponent_polynomial, ModelParams, PSpinDisorder, DEFAULT_PSPIN_BUDGET,
};
use rfim_core::ibp;
use rfim_core::identities::{gg_residual, EstimatorConfig, FSpec, Mode, ModelInputs, PsiSpec};
use rfim_core::lattice::Lattice;
use rfim_core::numeric::mean;
use rfim_core::overlaps::overlap;
use rfim_core::rng::realization_context;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rfim-ultra",
    about = "Random-field Ising laboratory: identity residuals, concentration \
             estimators, and bound certification over volume grids",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config file, then print its content hash.
    Validate(ConfigArg),
    /// Run every target of a config and write results.csv / summary.json.
    Run(RunArgs),
    /// Print the built-in exact-mode example config.
    Fixture,
    /// Certify the integration-by-parts bounds on the default grid.
    Ibp(IbpArgs),
    /// Check the field-decay schedule conditions on a volume grid.
    Condition(ConditionArgs),
    /// Print lattice geometry facts.
    Lattice(LatticeArgs),
    /// Enumerate one disorder realization exactly.
    Enumerate(GibbsArgs),
    /// Sample one disorder realization with the heat-bath chain.
    Mcmc(McmcArgs),
    /// Estimate the identity residual for one (f, psi) pair.
    Residual(ResidualArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Path to a JSON experiment config.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; 0 uses the library default.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory for the CSV and summary files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct IbpArgs {
    /// Write the full per-cell report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConditionArgs {
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value = "rademacher")]
    family: String,
    /// Comma-separated strictly increasing sides.
    #[arg(long, value_delimiter = ',', default_value = "6,10,14,18")]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_THIRD_MOMENT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct LatticeArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    #[arg(long, default_value = "rademacher")]
    family: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Which disorder draw to inspect.
    #[arg(long, default_value_t = 0)]
    realization: u64,
}

#[derive(Args)]
struct GibbsArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct McmcArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 2)]
    replicas: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: u64,
    #[arg(long, default_value_t = 10)]
    thin: u64,
    #[arg(long, default_value_t = 2000)]
    sets: usize,
}

#[derive(Args)]
struct ResidualArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "r12")]
    f: String,
    #[arg(long, default_value = "id")]
    psi: String,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value = "exact")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    n_disorder: usize,
    /// Use independent disorder draws per identity term.
    #[arg(long)]
    independent: bool,
}

fn parse_mode(text: &str) -> Result<Mode> {
    match text {
        "exact" => Ok(Mode::Exact),
        "mcmc" => Ok(Mode::Mcmc),
        other => bail!("unknown mode `{other}`; use exact or mcmc"),
    }
}

/// Lattice, volume, and base-measure parameters for one model argument set.
fn model_setup(args: &ModelArgs) -> Result<(Lattice, u64, ModelParams, DisorderFamily)> {
    let lat = Lattice::build(args.d, args.n)?;
    let volume = lat.volume();
    let sched = FieldSchedule::new(args.mu, args.gamma)?;
    let params = ModelParams::base(args.beta, args.mu, sched.h(volume))?;
    let family = DisorderFamily::from_name(&args.family)?;
    Ok((lat, volume, params, family))
}

fn cmd_validate(args: &ConfigArg) -> Result<ExitCode> {
    let (config, hash) = ExperimentConfig::from_path(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    println!(
        "ok: {} targets, grid {:?}, hash {hash}",
        config.targets.len(),
        config.n_grid
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let (config, hash) = ExperimentConfig::from_path(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    let out = experiments::run(&config, &hash, args.workers)?;
    let (csv_path, summary_path) = experiments::write_outputs(&config, &out, Some(&args.out))?;
    for v in &out.verdicts {
        println!(
            "{} {} / {} [{}]",
            if v.pass { "PASS" } else { "FAIL" },
            v.target,
            v.quantity,
            v.rule
        );
    }
    println!(
        "wrote {} and {}; overall: {}",
        csv_path.display(),
        summary_path.display(),
        if out.all_pass { "PASS" } else { "FAIL" }
    );
    Ok(if out.all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_ibp(args: &IbpArgs) -> Result<ExitCode> {
    let summary = ibp::sweep_certify(&ibp::default_grid());
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&summary)?)?;
        println!("wrote {}", path.display());
    }
    println!(
        "cells: {}, holds: {}, violations: {}, precondition errors: {}",
        summary.cells.len(),
        summary.holds,
        summary.violations,
        summary.precondition_errors
    );
    Ok(if summary.violations == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_condition(args: &ConditionArgs) -> Result<ExitCode> {
    let sched = FieldSchedule::new(args.mu, args.gamma)?;
    let family = DisorderFamily::from_name(&args.family)?;
    let report = check_perturbation_condition(
        &sched,
        family,
        args.d,
        &args.n_grid,
        args.eps,
        args.threshold,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_lattice(args: &LatticeArgs) -> Result<ExitCode> {
    let lat = Lattice::build(args.d, args.n)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "d": args.d,
            "n": args.n,
            "volume": lat.volume(),
            "edges": lat.edges().len(),
        }))?
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_enumerate(args: &GibbsArgs) -> Result<ExitCode> {
    let (lat, volume, params, family) = model_setup(&args.model)?;
    let ctx = realization_context(volume, args.model.realization);
    let g = sample_field(family, &lat, args.model.seed, ctx);
    let xi = PSpinDisorder::new(family, args.model.seed, ctx);
    let ens = ExactEnsemble::enumerate(
        &lat,
        &g,
        &xi,
        &params,
        DEFAULT_PSPIN_BUDGET,
        DEFAULT_VOLUME_CAP,
    )?;
    let moments = ens.single_replica_moments();
    let nf = volume as f64;
    let site_mean = moments.m.iter().sum::<f64>() / nf;
    let overlap_mean = moments.m.iter().map(|v| v * v).sum::<f64>() / nf;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "volume": volume,
            "h": params.h(),
            "log_partition": ens.log_partition(),
            "mean_site_magnetization": site_mean,
            "mean_overlap": overlap_mean,
        }))?
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_mcmc(args: &McmcArgs) -> Result<ExitCode> {
    if args.replicas < 2 {
        bail!("need at least 2 replicas for an overlap");
    }
    let (lat, volume, params, family) = model_setup(&args.model)?;
    let ctx = realization_context(volume, args.model.realization);
    let g = sample_field(family, &lat, args.model.seed, ctx);
    let xi = PSpinDisorder::new(family, args.model.seed, ctx);
    let poly = exponent_polynomial(&lat, &g, &xi, &params, DEFAULT_PSPIN_BUDGET)?;
    let settings = ChainSettings {
        burn_in: args.burn_in,
        thin: args.thin,
    };
    let mut ens = McmcEnsemble::new(&poly, args.replicas, settings, args.model.seed, ctx);
    let overlaps: Vec<f64> = ens
        .sets(args.sets)
        .iter()
        .map(|set| overlap(&set.configs()[0], &set.configs()[1]))
        .collect::<rfim_core::Result<_>>()?;
    let sampled = mean(&overlaps);
    let mut report = json!({
        "volume": volume,
        "sets": args.sets,
        "sampled_overlap": sampled,
    });
    // exact reference when enumeration is feasible
    if volume <= DEFAULT_VOLUME_CAP {
        let exact = ExactEnsemble::enumerate(
            &lat,
            &g,
            &xi,
            &params,
            DEFAULT_PSPIN_BUDGET,
            DEFAULT_VOLUME_CAP,
        )?;
        let moments = exact.single_replica_moments();
        let reference = moments.m.iter().map(|v| v * v).sum::<f64>() / volume as f64;
        report["exact_overlap"] = json!(reference);
        report["gap"] = json!(sampled - reference);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_residual(args: &ResidualArgs) -> Result<ExitCode> {
    let (lat, _, params, family) = model_setup(&args.model)?;
    let f = FSpec::from_name(&args.f)?;
    let psi = PsiSpec::from_name(&args.psi)?;
    let mode = parse_mode(&args.mode)?;
    let mut cfg = match mode {
        Mode::Exact => EstimatorConfig::exact(args.n_disorder, args.model.seed),
        Mode::Mcmc => EstimatorConfig::mcmc(args.n_disorder, args.model.seed, 200),
    };
    cfg.n_disorder = args.n_disorder;
    let inputs = ModelInputs {
        lat: &lat,
        family,
        params,
    };
    let report = gg_residual(&inputs, &cfg, args.m, &f, &psi, !args.independent)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Validate(args) => cmd_validate(args),
        Command::Run(args) => cmd_run(args),
        Command::Fixture => {
            print!("{}", experiments::standard_fixture_json());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ibp(args) => cmd_ibp(args),
        Command::Condition(args) => cmd_condition(args),
        Command::Lattice(args) => cmd_lattice(args),
        Command::Enumerate(args) => cmd_enumerate(args),
        Command::Mcmc(args) => cmd_mcmc(args),
        Command::Residual(args) => cmd_residual(args),
    }
}
