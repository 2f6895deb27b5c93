use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use vessel_core::coarse::Connectivity3;
use vessel_core::losses::LossWeights;
use vessel_core::metrics::HdAggregation;
use vesselprep::report::DEFAULT_CR_THRESHOLD;
use vesselprep::{
    run_losses, run_metrics, run_preprocess, run_report, ConfigOverrides, LossInputs, MetricsOptions, PipelineConfig,
};

/// Preprocessing and evaluation for TOF-MRA volumes.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop, enhance and coarsely segment every volume of a directory or manifest.
    Preprocess(PreprocessArgs),
    /// Dice, clDice and HD95 for prediction/ground-truth pairs matched by file stem.
    Metrics(MetricsArgs),
    /// Evaluate the pretraining losses on five volumes and print a JSON report.
    Losses(LossesArgs),
    /// Cropping-rate histogram and summary from preprocessing sidecars.
    Report(ReportArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// `subject_id,relative_path` lines; default scans the input directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    crop_percent: Option<f64>,
    #[arg(long)]
    min_region: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    frangi_scales: Option<Vec<f64>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    coarse_percent: Option<f64>,
    #[arg(long)]
    components: Option<usize>,
    /// 6, 18 or 26.
    #[arg(long, value_parser = parse_connectivity)]
    connectivity: Option<Connectivity3>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    overwrite: bool,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    no_mip: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    voxel_units: bool,
    /// HD95 over the union of both directed distance sets.
    #[arg(long)]
    pooled: bool,
}

#[derive(Args)]
struct LossesArgs {
    #[arg(long)]
    pred_vei: PathBuf,
    #[arg(long)]
    target_vei: PathBuf,
    #[arg(long)]
    pred_seg: PathBuf,
    #[arg(long)]
    target_seg: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    g1: f64,
    #[arg(long, default_value_t = 0.4)]
    g2: f64,
    #[arg(long, default_value_t = 0.2)]
    g3: f64,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Preprocessing output directory or a directory of sidecar JSON files.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CR_THRESHOLD)]
    threshold: f64,
    /// Where to write the CSV and summary; defaults to `--dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_connectivity(s: &str) -> Result<Connectivity3, String> {
    let n: u8 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    Connectivity3::try_from(n)
}

fn preprocess(a: PreprocessArgs) -> anyhow::Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&ConfigOverrides {
        input_dir: a.input,
        output_dir: a.output,
        manifest: a.manifest,
        crop_percent: a.crop_percent,
        min_region: a.min_region,
        frangi_scales: a.frangi_scales,
        alpha: a.alpha,
        beta: a.beta,
        coarse_percent: a.coarse_percent,
        components: a.components,
        connectivity: a.connectivity,
        threads: a.threads,
        overwrite: a.overwrite,
        no_normalize: a.no_normalize,
        no_mip: a.no_mip,
    });
    let report = run_preprocess(&cfg)?;
    let agg = &report.aggregate;
    log::info!(
        "{} subjects, {} failed, mean CR {}",
        agg.subjects,
        agg.failures,
        agg.mean_cr.map_or("n/a".into(), |m| format!("{m:.4}"))
    );
    Ok(report.exit_code())
}

fn metrics(a: MetricsArgs) -> anyhow::Result<i32> {
    let opts = MetricsOptions {
        voxel_units: a.voxel_units,
        aggregation: if a.pooled { HdAggregation::Pooled } else { HdAggregation::MaxDirected },
    };
    let run = run_metrics(&a.pred, &a.gt, &a.out, opts)?;
    log::info!("{} pairs evaluated, {} skipped; wrote {}", run.rows.len(), run.skipped.len(), a.out.display());
    Ok(run.exit_code())
}

fn losses(a: LossesArgs) -> anyhow::Result<i32> {
    let inputs = LossInputs {
        pred_vei: a.pred_vei,
        target_vei: a.target_vei,
        pred_seg: a.pred_seg,
        target_seg: a.target_seg,
        input: a.input,
    };
    let w = LossWeights { gamma1: a.g1, gamma2: a.g2, gamma3: a.g3 };
    let report = run_losses(&inputs, &w)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match a.out {
        Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{json}"),
    }
    Ok(0)
}

fn report(a: ReportArgs) -> anyhow::Result<i32> {
    let s = run_report(&a.dir, a.threshold, a.out.as_deref())?;
    log::info!(
        "mean CR {:.4}, median {:.4}, {:.1}% at or above {}",
        s.mean,
        s.median,
        100.0 * s.fraction_at_or_above,
        s.threshold
    );
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Metrics(a) => metrics(a),
        Command::Losses(a) => losses(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
