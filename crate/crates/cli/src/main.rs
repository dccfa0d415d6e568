//! `saliency3d`: attribution, evaluation, overlays, the training demo and
//! gradient checking from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use saliency3d::net::{
    finite_diff_check, gen_synthetic_videos, load_model, GradCheckConfig, ModelSpec, Network, SynthConfig,
};
use saliency3d::pipeline::{attribute_to_dir, evaluate_dir, overlay_dir, train_demo, DemoConfig};
use saliency3d::weakloc::{Connectivity, EvalConfig, EvalMode, PointingMode, IMAGE_THETAS};
use saliency3d::UpsampleSpec;

const GRADCHECK_LIMIT: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "saliency3d", version, about = "Spatio-temporal CAM attribution and weak localization scoring")]
struct Cli {
    /// Worker threads for per-clip and per-frame work.
    #[arg(long, global = true, env = "SALIENCY3D_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Aggregate layer maps of an exported manifest into a saliency volume.
    Attribute(AttributeArgs),
    /// Score a saliency directory against ground-truth boxes.
    Evaluate(EvaluateArgs),
    /// Render heatmap overlays for every clip of a saliency directory.
    Overlay(OverlayArgs),
    /// Train the reference network on synthetic clips and dump records.
    TrainDemo(TrainDemoArgs),
    /// Compare analytic gradients of the reference network with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct AttributeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated layer ids.
    #[arg(long, value_delimiter = ',', required = true)]
    layers: Vec<String>,
    /// Gaussian refinement sigma in output voxels; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    gaussian: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    BestIou,
    AllContours,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PointingArg {
    Peak,
    AnyOverlap,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    saliency: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "best-iou")]
    mode: ModeArg,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-θ table next to the report, with a `.csv` extension.
    #[arg(long)]
    csv: bool,
    /// Comma-separated IoU thresholds; defaults to the video set.
    #[arg(long, value_delimiter = ',', conflicts_with = "image")]
    thetas: Option<Vec<f64>>,
    /// Use the image IoU thresholds.
    #[arg(long)]
    image: bool,
    #[arg(long, value_parser = ["4", "8"], default_value = "8")]
    connectivity: String,
    #[arg(long, value_enum, default_value = "peak")]
    pointing: PointingArg,
    /// Score both pointing modes.
    #[arg(long)]
    both_pointing: bool,
}

#[derive(Args, Debug)]
struct OverlayArgs {
    #[arg(long)]
    saliency: PathBuf,
    /// Directory of gray `<clip_id>.atc` frame volumes in [0, 1].
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug)]
struct TrainDemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    epochs: usize,
    #[arg(long, value_enum, default_value = "off")]
    gated: Toggle,
    /// Clips per class before the train/test split.
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Test clips to dump alpha/grad records for.
    #[arg(long, default_value_t = 8)]
    dumps: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Seed for the weights, the clip and the coordinate sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    param_coords: usize,
    #[arg(long, default_value_t = 100)]
    tap_coords: usize,
    /// Check a saved model directory instead of a fresh reference network.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn attribute(a: &AttributeArgs) -> Result<()> {
    let spec = UpsampleSpec { gaussian_sigma: a.gaussian };
    let path = attribute_to_dir(&a.manifest, &a.layers, &spec, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn eval_config(a: &EvaluateArgs) -> EvalConfig {
    let mut cfg = EvalConfig::video();
    cfg.mode = match a.mode {
        ModeArg::BestIou => EvalMode::BestIou,
        ModeArg::AllContours => EvalMode::AllContours,
    };
    if a.image {
        cfg.thetas = IMAGE_THETAS.to_vec();
    }
    if let Some(t) = &a.thetas {
        cfg.thetas = t.clone();
    }
    cfg.connectivity = if a.connectivity == "4" { Connectivity::Four } else { Connectivity::Eight };
    cfg.pointing = match a.pointing {
        PointingArg::Peak => PointingMode::Peak,
        PointingArg::AnyOverlap => PointingMode::AnyOverlap,
    };
    cfg.report_both_pointing = a.both_pointing;
    cfg
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let report = evaluate_dir(&a.saliency, &a.gt, &eval_config(a))?;
    write_file(&a.out, &(report.to_json() + "\n"))?;
    if a.csv {
        write_file(&a.out.with_extension("csv"), &report.to_csv())?;
    }
    println!(
        "frames {} hit-point {:.4} mean-box-acc {:.4}",
        report.frames, report.hit_point_acc, report.mean_box_acc
    );
    Ok(())
}

fn overlay(a: &OverlayArgs) -> Result<()> {
    let written = overlay_dir(&a.saliency, &a.frames, a.alpha, &a.out)?;
    println!("{} overlays written to {}", written.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainDemoArgs) -> Result<()> {
    let cfg = DemoConfig {
        seed: a.seed,
        epochs: a.epochs,
        gated: matches!(a.gated, Toggle::On),
        per_class: a.per_class,
        dumps: a.dumps,
        lr: a.lr,
        ..Default::default()
    };
    let summary = train_demo(&cfg, &a.out)?;
    for e in &summary.epochs {
        println!("epoch {} lr {} loss {:.4} test-acc {:.4}", e.epoch, e.lr, e.train_loss, e.test_accuracy);
    }
    println!("test accuracy {:.4} ({} clips)", summary.test_accuracy, summary.test_clips);
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let set = gen_synthetic_videos(&SynthConfig::new(a.seed, 1))?;
    let net: Network<f64> = match &a.model {
        Some(dir) => load_model(dir)?.net.cast(),
        None => Network::init(ModelSpec::reference(set.classes, [1, 16, 32, 32]), a.seed)?,
    };
    let clip = set.clip(0)?;
    let mut dims = vec![1];
    dims.extend_from_slice(clip.dims());
    let cfg = GradCheckConfig { eps: a.eps, param_coords: a.param_coords, tap_coords: a.tap_coords, seed: a.seed };
    let report = finite_diff_check(&net, &clip.reshape(&dims)?, &cfg)?;
    println!("{}", serde_json::to_string(&report)?);
    println!("max relative error {:.3e}", report.max_rel_error);
    Ok(report.max_rel_error <= GRADCHECK_LIMIT)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Attribute(a) => attribute(a).map(|_| true),
        Command::Evaluate(a) => evaluate(a).map(|_| true),
        Command::Overlay(a) => overlay(a).map(|_| true),
        Command::TrainDemo(a) => train(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.jobs {
        Some(0) => Err(anyhow::anyhow!("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")
            .and_then(|pool| pool.install(|| run(&cli))),
        None => run(&cli),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check exceeded {GRADCHECK_LIMIT:e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
