//! Command-line front end: synthesize datasets, fuse them into maps,
//! export meshes, and score against ground truth.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors.
//! Log verbosity follows `RUST_LOG` (default `info`).

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ovmap::dataset::Dataset;
use ovmap::eval::evaluate;
use ovmap::map::io::load_map;
use ovmap::pipeline::{export_map, gt_eval_instances, map_predictions, run_and_save, RunOptions};
use ovmap::synth::{load_ground_truth, load_scene, write_dataset};
use ovmap::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "ovmap",
    version,
    about = "Object-centric TSDF mapping from posed depth and instance masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene description into a dataset directory.
    Synth(SynthArgs),
    /// Fuse a dataset into a labeled voxel map.
    Run(RunArgs),
    /// Export meshes and label tables from a map file.
    Export(ExportArgs),
    /// Score a map's instances against a ground-truth volume.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (TOML).
    scene: PathBuf,
    /// Dataset directory to create.
    #[arg(short, long)]
    output: PathBuf,
    /// Voxel size of the bundled ground-truth volume, in meters.
    #[arg(long, default_value_t = 0.01)]
    voxel_size: f64,
    /// Ground-truth truncation as a multiple of the voxel size.
    #[arg(long, default_value_t = 4.0)]
    truncation_factor: f64,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory.
    dataset: PathBuf,
    /// Output directory for the map and logs.
    #[arg(short, long)]
    output: PathBuf,
    /// Pipeline config file (TOML); flags below override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Voxel size in meters.
    #[arg(long)]
    voxel_size: Option<f64>,
    /// Process every n-th frame.
    #[arg(long)]
    frame_stride: Option<u32>,
    /// Sample segment points on an n-pixel grid.
    #[arg(long)]
    point_stride: Option<u32>,
    /// Worker threads for preprocessing (0 = inline).
    #[arg(long)]
    preprocess_threads: Option<usize>,
    /// Ignore mask files even when the dataset has them.
    #[arg(long)]
    no_masks: bool,
    /// Emulate a live sensor at this frame rate and drop late frames.
    #[arg(long, value_name = "FPS")]
    realtime: Option<f64>,
}

#[derive(Args)]
struct ExportArgs {
    /// Map file written by `run`.
    map: PathBuf,
    /// Output directory for meshes and tables.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Map file written by `run`.
    map: PathBuf,
    /// Ground-truth volume file.
    ground_truth: PathBuf,
    /// IoU threshold for a true positive.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Run(args) => run(args),
        Command::Export(args) => export(args),
        Command::Eval(args) => eval(args),
    }
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let scene = load_scene(&args.scene)
        .with_context(|| format!("loading scene {}", args.scene.display()))?;
    let truncation = args.truncation_factor * args.voxel_size;
    write_dataset(&scene, &args.output, args.voxel_size, truncation)
        .with_context(|| format!("writing dataset {}", args.output.display()))?;
    println!(
        "wrote {} frames, {} objects -> {}",
        scene.trajectory.len(),
        scene.primitives.len(),
        args.output.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::from_toml_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.voxel_size {
        config.voxel_size = v;
    }
    if let Some(v) = args.frame_stride {
        config.frame_stride = v;
    }
    if let Some(v) = args.point_stride {
        config.point_stride = v;
    }
    if let Some(v) = args.preprocess_threads {
        config.preprocess_threads = v;
    }
    let options = RunOptions {
        use_masks: !args.no_masks,
        realtime_fps: args.realtime,
    };
    let dataset = Dataset::open(&args.dataset)
        .with_context(|| format!("opening dataset {}", args.dataset.display()))?;
    let (pipeline, summary) =
        run_and_save(&dataset, &config, &options, &args.output).context("running the pipeline")?;
    // + 0.0 turns the -0.0 an empty sum yields into a plain zero.
    let total_s: f64 = pipeline
        .records()
        .iter()
        .map(|r| r.timings.total())
        .sum::<f64>()
        + 0.0;
    println!(
        "processed {} frames ({} skipped, {} dropped) in {:.2}s of stage time",
        summary.processed.len(),
        summary.skipped.len(),
        summary.dropped.len(),
        total_s
    );
    println!(
        "map: {} blocks, {} segment labels, {} instance labels -> {}",
        pipeline.grid().block_count(),
        pipeline.labels().next_segment() - 1,
        pipeline.labels().next_instance() - 1,
        args.output.display()
    );
    Ok(())
}

fn export(args: ExportArgs) -> anyhow::Result<()> {
    let (grid, _) =
        load_map(&args.map).with_context(|| format!("loading map {}", args.map.display()))?;
    let summary = export_map(&grid, &args.output)
        .with_context(|| format!("exporting to {}", args.output.display()))?;
    println!(
        "global mesh: {} vertices; {} instance meshes -> {}",
        summary.global_vertices,
        summary.instance_meshes.len(),
        args.output.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let (grid, _) =
        load_map(&args.map).with_context(|| format!("loading map {}", args.map.display()))?;
    let gt = load_ground_truth(&args.ground_truth)
        .with_context(|| format!("loading ground truth {}", args.ground_truth.display()))?;
    if (grid.voxel_size() - gt.voxel_size).abs() > 1e-12 {
        bail!(
            "voxel size mismatch: map {} vs ground truth {}",
            grid.voxel_size(),
            gt.voxel_size
        );
    }
    let predictions = map_predictions(&grid);
    let gt_instances = gt_eval_instances(&gt);
    let result = evaluate(&predictions, &gt_instances, args.iou);
    println!("class  gt  predictions  tp  ap");
    for report in &result.per_class {
        println!(
            "{:<6} {:<3} {:<12} {:<3} {:.4}",
            report.class.0,
            report.gt_count,
            report.prediction_count,
            report.true_positives,
            report.ap
        );
    }
    match result.mean_ap {
        Some(map) => println!("mean AP @ IoU {}: {:.4}", args.iou, map),
        None => println!(
            "mean AP @ IoU {}: n/a (no annotated ground truth)",
            args.iou
        ),
    }
    Ok(())
}
