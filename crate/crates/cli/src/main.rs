mod commands;
mod config;
mod error;
mod logging;
mod output;

use benchmetry::cfa::StructureKind;
use clap::{Args, Parser, Subcommand};
use config::{RunConfig, SimKind};
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "benchmetry", version, about = "Psychometric analysis of benchmark response data")]
struct Cli {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "BENCHMETRY_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate response and metadata files and write normalized copies.
    Ingest(DataArgs),
    /// Generate synthetic responses or scores with known truth.
    Simulate(SimulateArgs),
    /// Item-set bootstrap of the CFA structures.
    Cfa(CfaArgs),
    /// Crossed four-facet variance decomposition of benchmark scores.
    Gstudy(GStudyArgs),
    /// Bootstrap of the bifactor latent regression on model size.
    Latreg(LatRegArgs),
    /// Rank-stability statistics between two score columns.
    Rank(RankArgs),
    /// Merge the JSON artifacts in the output directory into summary.json.
    Report,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    responses: Option<PathBuf>,
    /// `wide` or `long`.
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    metadata: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CampaignArgs {
    #[arg(long)]
    replications: Option<usize>,
    /// Items per benchmark; one value applies to all.
    #[arg(long, value_delimiter = ',')]
    items: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    kind: Option<SimKind>,
    #[arg(long)]
    structure: Option<StructureKind>,
    /// Items per benchmark (CFA, IRT) or the benchmark count as one value (G-study).
    #[arg(long, value_delimiter = ',')]
    benches: Option<Vec<usize>>,
    #[arg(long)]
    n: Option<usize>,
    /// IRT: add metadata and a size regression.
    #[arg(long)]
    latreg: bool,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    beta: Option<Vec<f64>>,
    #[arg(long)]
    contributors: Option<usize>,
}

#[derive(Debug, Args)]
struct CfaArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    campaign: CampaignArgs,
    #[arg(long, value_delimiter = ',')]
    structures: Option<Vec<StructureKind>>,
    /// Skip the permuted item-to-benchmark control.
    #[arg(long)]
    no_permutation: bool,
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Debug, Args)]
struct GStudyArgs {
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Facets of the crossed design; only `A,B,C,D` is supported.
    #[arg(long, value_delimiter = ',')]
    facets: Option<Vec<String>>,
    /// Add random size slopes to every term.
    #[arg(long)]
    slopes: bool,
    /// Metadata columns joined with `:` forming the architecture facet.
    #[arg(long)]
    architecture: Option<String>,
    #[arg(long)]
    contributor: Option<String>,
    #[arg(long)]
    deployment: Option<String>,
}

#[derive(Debug, Args)]
struct LatRegArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    campaign: CampaignArgs,
    #[arg(long)]
    cycles: Option<usize>,
    /// Skip the full-data measurement fit behind the latent plot data.
    #[arg(long)]
    no_plot: bool,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// CSV with a `model_id` column.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    adjusted: Option<String>,
    #[arg(long)]
    adjusted_input: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if self.responses.is_some() {
            cfg.data.responses = self.responses;
        }
        if self.metadata.is_some() {
            cfg.data.metadata = self.metadata;
        }
        set(&mut cfg.data.layout, self.layout);
    }
}

impl CampaignArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.campaign.replications, self.replications);
        set(&mut cfg.campaign.r_k, self.items);
    }
}

/// Defaults, then the config file, then flags.
fn resolve(cli: &mut Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.jobs, cli.jobs);
    set(&mut cfg.out, cli.out.take());
    cfg.campaign.seed = cfg.seed;
    match std::mem::replace(&mut cli.command, Command::Report) {
        Command::Ingest(a) => a.apply(&mut cfg),
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            set(&mut s.kind, a.kind);
            set(&mut s.structure, a.structure);
            set(&mut s.benches, a.benches);
            set(&mut s.n, a.n);
            set(&mut s.beta, a.beta);
            set(&mut s.contributors, a.contributors);
            s.latreg |= a.latreg;
        }
        Command::Cfa(a) => {
            a.data.apply(&mut cfg);
            a.campaign.apply(&mut cfg);
            set(&mut cfg.campaign.structures, a.structures);
            set(&mut cfg.campaign.holdout_fraction, a.holdout);
            if a.no_permutation {
                cfg.campaign.permutation_control = false;
            }
        }
        Command::Gstudy(a) => {
            if a.metadata.is_some() {
                cfg.data.metadata = a.metadata;
            }
            set(&mut cfg.gstudy.facets, a.facets);
            cfg.gstudy.slopes |= a.slopes;
            set(&mut cfg.facets.architecture, a.architecture);
            set(&mut cfg.facets.contributor, a.contributor);
            set(&mut cfg.facets.deployment, a.deployment);
        }
        Command::Latreg(a) => {
            a.data.apply(&mut cfg);
            a.campaign.apply(&mut cfg);
            set(&mut cfg.campaign.mhrm.cycles, a.cycles);
            if a.no_plot {
                cfg.latreg.plot = false;
            }
        }
        Command::Rank(a) => {
            if a.input.is_some() {
                cfg.rank.input = a.input;
            }
            if a.adjusted_input.is_some() {
                cfg.rank.adjusted_input = a.adjusted_input;
            }
            set(&mut cfg.rank.baseline, a.baseline);
            set(&mut cfg.rank.adjusted, a.adjusted);
        }
        Command::Report => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(mut cli: Cli) -> Result<(), CliError> {
    let name = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Simulate(_) => "simulate",
        Command::Cfa(_) => "cfa",
        Command::Gstudy(_) => "gstudy",
        Command::Latreg(_) => "latreg",
        Command::Rank(_) => "rank",
        Command::Report => "report",
    };
    let mut cfg = resolve(&mut cli)?;
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    log::info!("{name}: writing to {}", cfg.out.display());
    let result = commands::dispatch(name, &mut cfg);
    let written = cfg.write_resolved();
    result?;
    written.map(|_| ())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            logging::error_line("E_VALIDATION", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    logging::init(cli.log_level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            logging::error_line(e.code(), &e.to_string());
            ExitCode::from(e.exit_code())
        }
    }
}
