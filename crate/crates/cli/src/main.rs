mod config;
mod data;
mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use marketscale::synth::{generate, Generated, GeneratorKind, GeneratorSpec};

use crate::config::{Analysis, AssetSelection, RunConfig};

#[derive(Parser)]
#[command(name = "marketscale", version, about = "Scaling, multifractal and network analysis of minute-bar market data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis listed in a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Overrides,
    },
    /// Per-asset summary table and cumulative returns.
    Stats(Single),
    /// Survival functions, tail exponents and group averages.
    Cdf(Single),
    /// Autocorrelation of returns with power-law range detection.
    Acf(Single),
    /// Multifractal detrended fluctuation analysis and f(α).
    Mf(Single),
    /// q-dependent detrended cross-correlation of |returns| and volume.
    Rho(Single),
    /// Volume-conditioned price impact and κ selection.
    Impact(Single),
    /// ρ_q matrices and minimal spanning trees across assets.
    Mst(Single),
    /// ρ_q blocks between two groups of assets.
    Intermarket(Single),
    /// Write a synthetic series with known properties.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Overrides {
    /// Directory of per-asset bar files (overrides the config and MARKETSCALE_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Single {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated asset names; all files in the data directory by default.
    #[arg(long, value_delimiter = ',')]
    assets: Option<Vec<String>>,
    /// Plain series file instead of bar files.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Sampling interval in minutes.
    #[arg(long)]
    dt: Option<u32>,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    White,
    Fgn,
    Cascade,
    Pareto,
    Ar1,
    Coupled,
}

#[derive(Args)]
struct SynthArgs {
    kind: SynthKind,
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    hurst: f64,
    /// Cascade weight.
    #[arg(long, default_value_t = 0.7)]
    p: f64,
    /// Cascade levels; the smallest that covers the length by default.
    #[arg(long)]
    levels: Option<u32>,
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    phi: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth(&args).map_err(Failure::Run).map(|_| true),
        Command::Run { config, common } => {
            RunConfig::from_file(&config)
                .map_err(Failure::Usage)
                .and_then(|mut cfg| {
                    apply(&mut cfg, &common);
                    execute(&cfg, Some(&config))
                })
        }
        Command::Stats(s) => single(Analysis::Stats, &s),
        Command::Cdf(s) => single(Analysis::Cdf, &s),
        Command::Acf(s) => single(Analysis::Acf, &s),
        Command::Mf(s) => single(Analysis::Mf, &s),
        Command::Rho(s) => single(Analysis::Rho, &s),
        Command::Impact(s) => single(Analysis::Impact, &s),
        Command::Mst(s) => single(Analysis::Mst, &s),
        Command::Intermarket(s) => single(Analysis::Intermarket, &s),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn apply(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(d) = &o.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(d) = &o.output_dir {
        cfg.output_dir = d.clone();
    }
    if o.workers.is_some() {
        cfg.workers = o.workers;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
}

fn single(analysis: Analysis, s: &Single) -> Result<bool, Failure> {
    let mut cfg = match &s.config {
        Some(path) => RunConfig::from_file(path).map_err(Failure::Usage)?,
        None => RunConfig::empty(),
    };
    apply(&mut cfg, &s.common);
    cfg.analyses = vec![analysis];
    if let Some(list) = &s.assets {
        cfg.assets = AssetSelection::List(list.clone());
    }
    if let Some(p) = &s.series {
        cfg.series = Some(p.clone());
    }
    if let Some(dt) = s.dt {
        match analysis {
            Analysis::Stats => cfg.stats.dt = dt,
            Analysis::Cdf => cfg.cdf.dt_list = vec![dt],
            Analysis::Acf => cfg.acf.dt = dt,
            Analysis::Mf => cfg.mf.dt = dt,
            Analysis::Rho => cfg.rho.dt = dt,
            Analysis::Impact => cfg.impact.dt_list = vec![dt],
            Analysis::Mst => cfg.mst.dt = dt,
            Analysis::Intermarket => cfg.intermarket.dt = dt,
        }
    }
    execute(&cfg, s.config.as_deref())
}

fn execute(cfg: &RunConfig, config_file: Option<&std::path::Path>) -> Result<bool, Failure> {
    cfg.validate().map_err(Failure::Usage)?;
    let manifest = run::run(cfg, config_file).map_err(Failure::Run)?;
    for a in &manifest.analyses {
        match &a.error {
            Some(e) => eprintln!("{}: error: {e}", a.name),
            None => eprintln!("{}: ok ({} files)", a.name, a.outputs.len()),
        }
    }
    for e in &manifest.input_errors {
        eprintln!("input {}: {}", e.path, e.error);
    }
    eprintln!("manifest: {}", cfg.output_dir.join("manifest.json").display());
    Ok(manifest.succeeded())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let kind = match a.kind {
        SynthKind::White => GeneratorKind::GaussianWhite,
        SynthKind::Fgn => GeneratorKind::Fgn { hurst: a.hurst },
        SynthKind::Cascade => GeneratorKind::BinomialCascade {
            p: a.p,
            levels: a.levels.unwrap_or_else(|| a.length.max(2).next_power_of_two().trailing_zeros()),
        },
        SynthKind::Pareto => GeneratorKind::ParetoTail { gamma: a.gamma },
        SynthKind::Ar1 => GeneratorKind::Ar1 { phi: a.phi },
        SynthKind::Coupled => GeneratorKind::PowerCoupled {
            alpha: a.alpha,
            noise: a.noise,
        },
    };
    let generated = generate(&GeneratorSpec::new(kind, a.length, a.seed))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let out = std::io::BufWriter::new(file);
    match &generated {
        Generated::Series(v) => data::write_columns(out, &["value"], &[v])?,
        Generated::Pairs { volume, abs_return } => data::write_columns(out, &["volume", "abs_return"], &[volume, abs_return])?,
    }
    Ok(())
}
