//! Subcommand implementations for the `mrsr` binary.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand};

use mrsr::config::RunConfig;
use mrsr::data_pipeline::{
    build_dataset, check_manifest, discover_volumes, manifest_digest, Dataset, DatasetManifest, Split,
};
use mrsr::evaluator::{compare, evaluate_split, write_reports, Summary, SUMMARY_FILE};
use mrsr::image_io::{read_png, write_png16};
use mrsr::losses::FeatureExtractor;
use mrsr::sr_models::Generator;
use mrsr::trainer::{
    infer, latest_checkpoint, load_generator, read_loss_log, train, SplitSource, TrainSetup, LOSS_LOG,
};

/// Super-resolution of 2D brain MR slices.
#[derive(Debug, Parser)]
#[command(name = "mrsr", version)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for the split, initialisation and sampling (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Debug logging.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Slice, normalise, pad and degrade NIfTI volumes into a dataset.
    PrepareData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Fraction of volumes assigned to training.
        #[arg(long)]
        split_fraction: Option<f64>,
    },
    /// Train generator and discriminator on the train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        /// Resume from a checkpoint; without a value, the latest in the run directory.
        #[arg(long, num_args = 0..=1, default_missing_value = "latest", value_name = "CHECKPOINT")]
        resume: Option<String>,
    },
    /// Super-resolve one grayscale PNG by 4x.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score baselines (and a checkpoint) on the test split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Only the first N test slices.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Side-by-side montage: ground truth, LR, model, bilinear, bicubic.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test image ids such as `Brats18_X_1_070`.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Command::PrepareData { split_fraction: Some(f), .. } = &cli.command {
        overrides.push(format!("data.split_fraction={f}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides, cli.seed)?;
    // Checkpoints carry their own model config; only an explicit one is checked against them.
    let explicit = cli.config.is_some() || !cli.overrides.is_empty();
    match cli.command {
        Command::PrepareData { input, output, .. } => prepare_data(&cfg, &input, &output),
        Command::Train { data, run_dir, resume } => train_cmd(&cfg, &data, &run_dir, resume.as_deref()),
        Command::Infer { checkpoint, input, output } => infer_cmd(&cfg, explicit, &checkpoint, &input, &output),
        Command::Evaluate { data, out, checkpoint, limit } => {
            evaluate_cmd(&cfg, explicit, &data, &out, checkpoint.as_deref(), limit)
        }
        Command::Compare { data, checkpoint, ids, output } => {
            compare_cmd(&cfg, explicit, &data, &checkpoint, &ids, &output)
        }
    }
}

fn prepare_data(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let volumes = discover_volumes(input)?;
    ensure!(!volumes.is_empty(), "no volumes found under {}", input.display());
    let manifest = build_dataset(&volumes, &cfg.build_options(), output)?;
    cfg.write_snapshot(output)?;
    let reloaded = DatasetManifest::load(output)?;
    ensure!(reloaded == manifest, "manifest on disk differs from the one built");
    check_manifest(&reloaded).map_err(anyhow::Error::msg).context("manifest validation")?;
    let c = &manifest.counts;
    println!(
        "volumes {} (train {}, test {})\nincluded slices {} (train {}, test {})\nexcluded slices {}\nmanifest sha256 {}",
        c.volumes,
        c.train_volumes,
        c.test_volumes,
        c.train_slices + c.test_slices,
        c.train_slices,
        c.test_slices,
        c.excluded_slices,
        manifest_digest(output)?
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, data: &Path, run_dir: &Path, resume: Option<&str>) -> Result<()> {
    let dataset = Dataset::open(data)?;
    let source = SplitSource::new(&dataset, Split::Train);
    let extractor = if cfg.train.loss_weights.perceptual > 0.0 {
        let path = cfg.perceptual.resolve().context(
            "the perceptual loss needs VGG19 weights: set perceptual.weights or MRSR_VGG19_WEIGHTS, \
             or set train.loss_weights.perceptual=0",
        )?;
        Some(FeatureExtractor::<f32>::vgg19_from_file(&path)?)
    } else {
        None
    };
    let resume_path = match resume {
        None => None,
        Some("latest") => Some(
            latest_checkpoint(run_dir).with_context(|| format!("no checkpoint to resume in {}", run_dir.display()))?,
        ),
        Some(p) => Some(PathBuf::from(p)),
    };
    cfg.write_snapshot(run_dir)?;
    let setup = TrainSetup {
        train: cfg.train.clone(),
        generator: cfg.generator.clone(),
        discriminator: cfg.discriminator.clone(),
        extractor: extractor.as_ref(),
    };
    let outcome = train(&setup, &source, run_dir, resume_path.as_deref())?;
    let rows = read_loss_log(&run_dir.join(LOSS_LOG))?;
    ensure!(
        rows.len() as u64 == outcome.state.iteration,
        "loss log has {} rows for {} iterations",
        rows.len(),
        outcome.state.iteration
    );
    ensure!(
        rows.iter().all(|r| [r.pixel, r.perceptual, r.adv_g, r.adv_d, r.total_g].iter().all(|v| v.is_finite())),
        "loss log contains non-finite values"
    );
    load_generator(&outcome.final_checkpoint, Some(&cfg.generator)).context("re-reading the final checkpoint")?;
    println!("trained to iteration {}; checkpoint {}", outcome.state.iteration, outcome.final_checkpoint.display());
    if let Some(last) = rows.last() {
        println!(
            "last losses: pixel {:.5} perceptual {:.5} adv_g {:.5} adv_d {:.5} total_g {:.5}",
            last.pixel, last.perceptual, last.adv_g, last.adv_d, last.total_g
        );
    }
    Ok(())
}

fn generator(cfg: &RunConfig, explicit: bool, checkpoint: &Path) -> Result<Generator<f32>> {
    let g = load_generator(checkpoint, explicit.then_some(&cfg.generator))?;
    Ok(g)
}

fn infer_cmd(cfg: &RunConfig, explicit: bool, checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let g = generator(cfg, explicit, checkpoint)?;
    let lr = read_png(input)?;
    let sr = infer(&g, lr.view())?;
    write_png16(output, sr.view())?;
    let back = read_png(output)?;
    ensure!(back.dim() == sr.dim(), "written image has the wrong size");
    println!("{}x{} -> {}x{}: {}", lr.dim().0, lr.dim().1, sr.dim().0, sr.dim().1, output.display());
    Ok(())
}

fn evaluate_cmd(
    cfg: &RunConfig,
    explicit: bool,
    data: &Path,
    out: &Path,
    checkpoint: Option<&Path>,
    limit: Option<usize>,
) -> Result<()> {
    let dataset = Dataset::open(data)?;
    let g = checkpoint.map(|c| generator(cfg, explicit, c)).transpose()?;
    let reports = evaluate_split(&dataset, g.as_ref(), limit)?;
    let summary = write_reports(out, &reports)?;
    cfg.write_snapshot(out)?;
    let reloaded = Summary::load(&out.join(SUMMARY_FILE))?;
    ensure!(reloaded == summary, "summary.json does not round-trip");
    if summary.rows.iter().any(|r| [r.ssim.mean, r.nrmse.mean, r.mae.mean, r.vif.mean].iter().any(|v| !v.is_finite())) {
        bail!("non-finite aggregate metric");
    }
    print!("{}", summary.table());
    Ok(())
}

fn compare_cmd(
    cfg: &RunConfig,
    explicit: bool,
    data: &Path,
    checkpoint: &Path,
    ids: &[String],
    output: &Path,
) -> Result<()> {
    let dataset = Dataset::open(data)?;
    let g = generator(cfg, explicit, checkpoint)?;
    let montage = compare(&dataset, &g, ids)?;
    write_png16(output, montage.view())?;
    ensure!(read_png(output)?.dim() == montage.dim(), "written montage has the wrong size");
    println!("{} row(s) of 5 panels: {}", ids.len(), output.display());
    Ok(())
}
