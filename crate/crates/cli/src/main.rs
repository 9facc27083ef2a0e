use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ofrl::model::ModelDef;
use ofrl::sim::{self, SimConfig, SynthesizeDef};
use ofrl::synthesis::{self, input_vertices, VerifyOptions};
use ofrl::{Error, Gains, Model};

/// Observer synthesis, verification and closed-loop learning runs.
#[derive(Debug, Parser)]
#[command(name = "ofrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the observer LMI and write gains as JSON.
    Synthesize(SynthesizeArgs),
    /// Sample-check sector conditions and error decay for given gains.
    Verify(VerifyArgs),
    /// Run a simulation described by a JSON config.
    Simulate(SimulateArgs),
    /// Run the built-in two-state benchmark.
    ReproduceExample(ReproduceArgs),
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    /// Model file or built-in name (`example2state`).
    #[arg(long)]
    model: String,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    eps_p: f64,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Input vertices are `±input_bound` per channel.
    #[arg(long, default_value_t = 3.0)]
    input_bound: f64,
    /// Stop at the first point with this much slack instead of maximizing it.
    #[arg(long)]
    stop_margin: Option<f64>,
    #[arg(long, default_value_t = 1e4)]
    variable_bound: f64,
    /// Certify a smaller input box when the requested one is infeasible.
    #[arg(long)]
    fallback: bool,
    /// Write the assembled constraint matrices as CSV into this directory.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    gains: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 3.0)]
    u_bound: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Exit with status 2 when any check fails.
    #[arg(long)]
    require_pass: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 50.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Fail instead of certifying a smaller input box.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = "reproduce-out")]
    out_dir: PathBuf,
}

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_CONFIG: u8 = 4;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Infeasible { .. } | Error::Conditioning { .. } | Error::Recovery { .. } => EXIT_INFEASIBLE,
        Error::Divergence { .. } | Error::NonFinite { .. } | Error::StateCorruption(_) => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

fn load_model(spec: &str) -> ofrl::Result<Model> {
    ModelDef::load(spec)?.build()
}

fn synthesize(args: &SynthesizeArgs) -> ofrl::Result<u8> {
    let model = load_model(&args.model)?;
    let def = SynthesizeDef {
        alpha: args.alpha,
        input_bound: Some(args.input_bound),
        eps_p: args.eps_p,
        tol: args.tol,
        fallback: args.fallback,
        stop_margin: args.stop_margin,
        variable_bound: args.variable_bound,
        ..SynthesizeDef::new(args.alpha)
    };
    if let Some(dir) = &args.dump_dir {
        let lmi = synthesis::assemble_lmi(&model, args.alpha, &input_vertices(model.m(), args.input_bound), args.eps_p)?;
        let files = ofrl::sdp::write_constraints_csv(dir, &lmi.constraints, None)?;
        log::info!("wrote {} constraint files to {}", files.len(), dir.display());
    }
    let mut notes = Vec::new();
    let (gains, bound) = sim::synthesize_with_fallback(&model, &def, args.input_bound, &mut notes)?;
    gains.save(&args.out)?;
    let report = json!({
        "out": args.out,
        "certifiedInputBound": bound,
        "verifiedMaxEig": gains.verified_max_eig,
        "pEigenvalues": ofrl::linalg::sym_eigenvalues(&gains.p),
        "notes": notes,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn verify(args: &VerifyArgs) -> ofrl::Result<u8> {
    let model = load_model(&args.model)?;
    let gains = Gains::load(&args.gains)?;
    let options = VerifyOptions {
        samples: args.samples,
        u_bound: args.u_bound,
        tol: args.tol,
        seed: args.seed,
    };
    let samples = synthesis::draw_samples(&model, &options);
    let sector = synthesis::verify_sector_on(&model, &gains, &samples, options.tol)?;
    let decay = synthesis::verify_decay_on(&model, &gains, &samples, 1e-8)?;
    let vertices = input_vertices(model.m(), args.u_bound);
    let diagnostic = synthesis::diagnose_gains(&model, &gains, &vertices)?;
    let passed = sector.passed() && decay.violations == 0;
    let report = json!({
        "passed": passed,
        "sector": sector,
        "decay": decay,
        "constraints": diagnostic,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if passed || !args.require_pass { 0 } else { EXIT_INFEASIBLE })
}

fn run_config(cfg: &SimConfig, out_dir: &Path) -> ofrl::Result<u8> {
    let simulation = cfg.resolve::<f64>()?;
    let trace = simulation.run()?;
    let summary = sim::export(&trace, out_dir)?;
    if cfg.output.write_gains {
        sim::write_gains(&simulation.gains, out_dir)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if summary.termination.is_completed() {
        Ok(0)
    } else {
        log::error!("run ended early: {:?}", summary.termination);
        Ok(EXIT_DIVERGED)
    }
}

fn simulate(args: &SimulateArgs) -> ofrl::Result<u8> {
    let cfg = SimConfig::load(&args.config)?;
    let dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    run_config(&cfg, &dir)
}

fn reproduce(args: &ReproduceArgs) -> ofrl::Result<u8> {
    let mut cfg = SimConfig::reproduce_example(args.alpha, args.horizon, args.step);
    if let sim::GainsRef::Synthesize { synthesize } = &mut cfg.gains {
        synthesize.fallback = !args.strict;
    }
    cfg.output.write_gains = true;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;
    let config_path = args.out_dir.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::Io {
        path: config_path.display().to_string(),
        source: e,
    })?;
    run_config(&cfg, &args.out_dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Synthesize(a) => synthesize(a),
        Command::Verify(a) => verify(a),
        Command::Simulate(a) => simulate(a),
        Command::ReproduceExample(a) => reproduce(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
