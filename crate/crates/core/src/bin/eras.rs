use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use eras_core::exec::ExecMode;
use eras_core::pipeline::{self, PipelineConfig};
use eras_core::render::Manifest;
use eras_core::Result;

#[derive(Parser)]
#[command(name = "eras", version, about = "Topological eras of monthly price panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: panel -> trees -> indices -> eras -> report and renders.
    Run(Flags),
    /// Stop after the index panel.
    Indices(Flags),
    /// Segment a saved indices.csv (given as --input).
    Segment(Flags),
    /// Per-window MDS, tree and DOT views only.
    Render(Flags),
    /// Write the seeded three-regime synthetic panel.
    Synth(Flags),
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    GroupL2,
    LiteralL1,
}

#[derive(Clone, Copy, ValueEnum)]
enum EccentricityArg {
    Diameter,
    MeanNode,
}

#[derive(Args)]
struct Flags {
    /// Flat `key = value` file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    outdir: Option<PathBuf>,
    /// Window length [default: 72]
    #[arg(long)]
    window_months: Option<usize>,
    /// Window step [default: 12]
    #[arg(long)]
    step_months: Option<usize>,
    /// Per-country coverage fraction [default: 0.5]
    #[arg(long)]
    min_coverage: Option<f64>,
    /// Pairwise overlap fraction [default: 0.5]
    #[arg(long)]
    min_pair_overlap: Option<f64>,
    /// Penalty weight; repeatable.
    #[arg(long)]
    lambda: Vec<f64>,
    /// Era count to search lambda for; repeatable.
    #[arg(long)]
    target_eras: Vec<usize>,
    #[arg(long, value_enum)]
    penalty: Option<PenaltyArg>,
    /// Solver tolerance [default: 1e-9]
    #[arg(long)]
    tol: Option<f64>,
    /// Solver iteration cap [default: 100000]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Jump threshold in standardized units [default: 0.001]
    #[arg(long)]
    changepoint_eps: Option<f64>,
    /// Cluster count for node colors [default: 5]
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    no_render: bool,
    #[arg(long, value_enum)]
    eccentricity: Option<EccentricityArg>,
    /// Synthetic panel seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Run every stage on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Flags {
    fn layer(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, val: String| v.push((k.to_string(), val));
        if let Some(p) = &self.input {
            put("input", p.display().to_string());
        }
        if let Some(p) = &self.outdir {
            put("outdir", p.display().to_string());
        }
        if let Some(x) = self.window_months {
            put("window-months", x.to_string());
        }
        if let Some(x) = self.step_months {
            put("step-months", x.to_string());
        }
        if let Some(x) = self.min_coverage {
            put("min-coverage", x.to_string());
        }
        if let Some(x) = self.min_pair_overlap {
            put("min-pair-overlap", x.to_string());
        }
        for x in &self.lambda {
            put("lambda", x.to_string());
        }
        for x in &self.target_eras {
            put("target-eras", x.to_string());
        }
        if let Some(p) = self.penalty {
            put(
                "penalty",
                match p {
                    PenaltyArg::GroupL2 => "group-l2",
                    PenaltyArg::LiteralL1 => "literal-l1",
                }
                .into(),
            );
        }
        if let Some(x) = self.tol {
            put("tol", x.to_string());
        }
        if let Some(x) = self.max_iter {
            put("max-iter", x.to_string());
        }
        if let Some(x) = self.changepoint_eps {
            put("changepoint-eps", x.to_string());
        }
        if let Some(x) = self.clusters {
            put("clusters", x.to_string());
        }
        if self.no_render {
            put("no-render", "true".into());
        }
        if let Some(e) = self.eccentricity {
            put(
                "eccentricity",
                match e {
                    EccentricityArg::Diameter => "diameter",
                    EccentricityArg::MeanNode => "mean-node",
                }
                .into(),
            );
        }
        if let Some(x) = self.seed {
            put("seed", x.to_string());
        }
        v
    }

    fn resolve(&self) -> Result<(PipelineConfig, ExecMode)> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        cfg.apply_layer(&self.layer())?;
        let mode = if self.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
        Ok((cfg, mode))
    }
}

fn summarize(m: &Manifest) {
    for f in &m.files {
        println!("{}  {}", f.sha256, f.path);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(f) => {
            let (cfg, mode) = f.resolve()?;
            let out = pipeline::run_pipeline(&cfg, mode)?;
            for s in &out.segmentations {
                println!("lambda {}: {} eras, change years {:?}", s.lambda, s.era_count(), s.change_years());
            }
            summarize(&out.manifest);
        }
        Command::Indices(f) => {
            let (cfg, mode) = f.resolve()?;
            summarize(&pipeline::run_indices(&cfg, mode)?);
        }
        Command::Segment(f) => {
            let (cfg, mode) = f.resolve()?;
            let out = pipeline::run_segment(&cfg, mode)?;
            for s in &out.segmentations {
                println!("lambda {}: {} eras, change years {:?}", s.lambda, s.era_count(), s.change_years());
            }
            summarize(&out.manifest);
        }
        Command::Render(f) => {
            let (cfg, mode) = f.resolve()?;
            summarize(&pipeline::run_render(&cfg, mode)?);
        }
        Command::Synth(f) => {
            let (cfg, _) = f.resolve()?;
            summarize(&pipeline::run_synth(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
