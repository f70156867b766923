//! Subcommands of the `voxelseg` binary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use voxelseg_core::crf::{refine, rescale_intensities};
use voxelseg_core::data::{make_folds, FoldPlan, PhantomSpec};
use voxelseg_core::gradcheck::{run_suite, SuiteOptions, TOLERANCE};
use voxelseg_core::metrics::dice;
use voxelseg_core::{Mask, Real, Tensor};

use crate::config::{AugmentMode, ConfigError, Precision, RunConfig};
use crate::dataset::{self, list_originals, load_scan, mask_path, training_scans};
use crate::evalkit::{format_table, segment, write_overlays, SegmentOptions, SegmentationReport};
use crate::format::checkpoint::{layout_diff, load_checkpoint, read_checkpoint_info};
use crate::format::volume::{load_volume, save_volume, Volume};
use crate::format::FormatError;
use crate::source::{InMemory, OnDisk, ScanSource};
use crate::trainer::{train, EpochRecord, TrainLog, TrainSetup};

/// Exit status for domain failures (a check failed, a scan could not be
/// processed, training diverged).
pub const EXIT_FAILURE: u8 = 1;
/// Exit status for usage, configuration and I/O failures.
pub const EXIT_USAGE: u8 = 2;

/// An outcome that should end the process with status 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct DomainFailure(pub String);

#[derive(Debug, Parser)]
#[command(name = "voxelseg", version, about = "Volumetric CT organ segmentation: 3-D encoder, 2-D decoder, boundary CRF")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.max_epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Cap on worker threads (0 = one per core).
    #[arg(long, default_value_t = 0, global = true)]
    pub threads: usize,
    /// More log output (repeatable).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the effective configuration as TOML.
    PrintConfig,
    /// Write synthetic ellipsoid phantoms to the data root.
    Synth(SynthArgs),
    /// Write the seven rotated copies of every scan to the cache.
    Augment,
    /// Train one network per selected fold.
    Train(TrainArgs),
    /// Segment one scan with a trained checkpoint.
    Segment(SegmentArgs),
    /// Refine a stored probability volume with the boundary CRF.
    Refine(RefineArgs),
    /// Segment and score a set of scans.
    Eval(EvalArgs),
    /// Compare every backward pass with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Destination (defaults to the data root).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 9)]
    pub depth: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Continue each fold from its last completed epoch.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scan id under the data root.
    #[arg(long)]
    pub scan: String,
    /// Refine the network output with the boundary CRF.
    #[arg(long)]
    pub crf: bool,
    /// Output directory (defaults to `<output_dir>/segment`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-slice PPM overlays.
    #[arg(long)]
    pub overlays: bool,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Organ-probability volume written by `segment`.
    #[arg(long)]
    pub probability: PathBuf,
    /// Scan id under the data root supplying the intensities.
    #[arg(long)]
    pub scan: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub crf: bool,
    /// Score the test scans of this fold (0-based) instead of every scan.
    #[arg(long, conflicts_with = "scans")]
    pub fold: Option<usize>,
    /// Explicit scan ids.
    #[arg(long, num_args = 1..)]
    pub scans: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random cases per operation.
    #[arg(long, default_value_t = 3)]
    pub cases: usize,
}

/// Status for an error: 2 for configuration, format and I/O problems,
/// 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<DomainFailure>() {
            return EXIT_FAILURE;
        }
        if cause.is::<ConfigError>() || cause.is::<FormatError>() || cause.is::<std::io::Error>() || cause.is::<clap::Error>() {
            return EXIT_USAGE;
        }
        if let Some(voxelseg_core::Error::Config(_)) = cause.downcast_ref::<voxelseg_core::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_FAILURE
}

/// Parses `args`, runs the command and returns the process status.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

macro_rules! dispatch {
    ($precision:expr, $f:ident($($arg:expr),*)) => {
        match $precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn run(cli: &Cli) -> Result<u8> {
    if cli.global.threads > 0 {
        // Fails only if a pool already exists, which keeps its own size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global();
    }
    let config = RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides)?;
    match &cli.command {
        Command::PrintConfig => {
            print!("{}", config.to_toml());
            Ok(0)
        }
        Command::Synth(a) => cmd_synth(&config, a),
        Command::Augment => cmd_augment(&config),
        Command::Train(a) => {
            cmd_train(&config, a.resume, &mut |fold, r| println!("{}", epoch_line(fold, r)))?;
            Ok(0)
        }
        Command::Segment(a) => dispatch!(config.precision, cmd_segment(&config, a)),
        Command::Refine(a) => cmd_refine(&config, a),
        Command::Eval(a) => dispatch!(config.precision, cmd_eval(&config, a)),
        Command::Gradcheck(a) => cmd_gradcheck(config.seed, a.cases),
    }
}

pub fn epoch_line(fold: usize, r: &EpochRecord) -> String {
    format!(
        "fold {fold} epoch {:>3}: train {:.5} (sum {:.3}) val {:.5} dice {:.4} [{:.1} s]",
        r.epoch, r.train_loss_mean, r.train_loss_sum, r.val_loss, r.val_dice, r.seconds
    )
}

pub fn cmd_synth(config: &RunConfig, a: &SynthArgs) -> Result<u8> {
    let root = a.out.clone().unwrap_or_else(|| config.data_root.clone());
    let spec = PhantomSpec {
        height: a.height,
        width: a.width,
        depth: a.depth,
        ..PhantomSpec::default()
    };
    if spec.height < 8 || spec.width < 8 || spec.depth == 0 {
        bail!(ConfigError::Invalid("phantoms need at least 8×8×1 voxels".into()));
    }
    let ids = dataset::write_phantoms(&root, a.count, &spec, config.seed)?;
    println!("wrote {} phantoms to {}", ids.len(), root.display());
    Ok(0)
}

pub fn cmd_augment(config: &RunConfig) -> Result<u8> {
    let cache = config.effective_cache_dir();
    let ids = list_originals(&config.data_root)?;
    if ids.is_empty() {
        bail!(ConfigError::Invalid(format!("no scans under {}", config.data_root.display())));
    }
    let summary = dataset::augment_dataset(&config.data_root, &cache, &ids)?;
    println!(
        "augment: {} written, {} already present, {} failed ({})",
        summary.written,
        summary.skipped,
        summary.failures.len(),
        cache.display()
    );
    for (id, msg) in &summary.failures {
        eprintln!("  {id}: {msg}");
    }
    Ok(if summary.failures.is_empty() { 0 } else { EXIT_FAILURE })
}

/// The fold plan over the original scans of the data root.
pub fn fold_plan(config: &RunConfig) -> Result<(Vec<String>, FoldPlan)> {
    let ids = list_originals(&config.data_root)?;
    if ids.is_empty() {
        bail!(ConfigError::Invalid(format!("no scans under {}", config.data_root.display())));
    }
    let plan = make_folds(&ids, config.folds.k, config.folds.validation_count, config.seed)?;
    Ok((ids, plan))
}

fn write_plan(plan: &FoldPlan, path: &Path) -> Result<()> {
    let mut text = String::from("fold\tsplit\tscan_id\n");
    for (f, fold) in plan.folds.iter().enumerate() {
        for (split, ids) in [("train", &fold.train), ("validation", &fold.validation), ("test", &fold.test)] {
            for id in ids {
                text.push_str(&format!("{f}\t{split}\t{id}\n"));
            }
        }
    }
    crate::format::write_file(path, text.as_bytes())?;
    Ok(())
}

/// Trains every selected fold into `<output_dir>/fold<N>` and returns the
/// logs in fold order.
pub fn cmd_train(config: &RunConfig, resume: bool, on_epoch: &mut dyn FnMut(usize, &EpochRecord)) -> Result<Vec<TrainLog>> {
    let (_, plan) = fold_plan(config)?;
    std::fs::create_dir_all(&config.output_dir).with_context(|| format!("cannot create {}", config.output_dir.display()))?;
    write_plan(&plan, &config.output_dir.join("folds.tsv"))?;
    let selected: Vec<usize> = if config.folds.selected.is_empty() {
        (0..plan.k).collect()
    } else {
        config.folds.selected.clone()
    };
    let cache = config.effective_cache_dir();
    let mut logs = Vec::new();
    for f in selected {
        let fold = &plan.folds[f];
        let out = config.output_dir.join(format!("fold{f}"));
        let train_set: Box<dyn ScanSource> = if config.train.streaming {
            let (root, ids) = match config.train.augment {
                AugmentMode::None => (config.data_root.clone(), fold.train.clone()),
                mode => {
                    let variants = fold
                        .train
                        .iter()
                        .flat_map(|id| voxelseg_core::data::AUGMENT_ANGLES.iter().map(move |&d| voxelseg_core::data::variant_id(id, d)))
                        .collect();
                    let root = if mode == AugmentMode::Cached { cache.clone() } else { config.data_root.clone() };
                    (root, variants)
                }
            };
            Box::new(OnDisk::new(&root, ids, 4)?)
        } else {
            Box::new(InMemory::new(training_scans(&config.data_root, &cache, &fold.train, config.train.augment)?))
        };
        let validation = InMemory::new(dataset::load_scans(&config.data_root, &fold.validation)?);
        let setup = TrainSetup {
            network: &config.network,
            train: &config.train,
            loss: &config.loss,
            seed: config.seed,
            output_dir: &out,
            resume,
        };
        let mut cb = |r: &EpochRecord| on_epoch(f, r);
        let log = match config.precision {
            Precision::F32 => train::<f32>(&setup, train_set.as_ref(), &validation, &mut cb)?.log,
            Precision::F64 => train::<f64>(&setup, train_set.as_ref(), &validation, &mut cb)?.log,
        };
        if let Some(best) = log.best() {
            log::info!("fold {f}: best epoch {} (val loss {:.5}, dice {:.4})", best.epoch, best.val_loss, best.val_dice);
        }
        logs.push(log);
    }
    Ok(logs)
}

/// Loads a checkpoint after checking that its layout matches `config`.
fn checked_checkpoint<T: Real>(config: &RunConfig, path: &Path) -> Result<voxelseg_core::net::NetworkParams<T>> {
    let info = read_checkpoint_info(path).with_context(|| format!("checkpoint {}", path.display()))?;
    let diff = layout_diff(&config.network, &info.config)?;
    if !diff.is_empty() {
        bail!(ConfigError::Invalid(format!(
            "checkpoint {} does not match the configured network:\n{}",
            path.display(),
            diff.join("\n")
        )));
    }
    let c = &config.network;
    let s = &info.config;
    if (c.input_height, c.input_width, c.input_depth) != (s.input_height, s.input_width, s.input_depth) {
        bail!(ConfigError::Invalid(format!(
            "checkpoint {} expects {}×{}×{} windows, config has {}×{}×{}",
            path.display(),
            s.input_height,
            s.input_width,
            s.input_depth,
            c.input_height,
            c.input_width,
            c.input_depth
        )));
    }
    Ok(load_checkpoint(path).with_context(|| format!("checkpoint {}", path.display()))?)
}

pub fn cmd_segment<T: Real>(config: &RunConfig, a: &SegmentArgs) -> Result<u8> {
    let params = checked_checkpoint::<T>(config, &a.checkpoint)?;
    let scan = load_scan(&config.data_root, &a.scan)?;
    let options = SegmentOptions {
        crf: a.crf.then_some(config.crf),
        loss: None,
    };
    let seg = segment(&params, &scan, &options)?;
    let out = a.out.clone().unwrap_or_else(|| config.output_dir.join("segment"));
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    save_volume(&Volume::from_mask(&seg.mask, scan.spacing)?, &out.join(format!("{}.seg.volf", scan.scan_id)))?;
    dataset::save_probability(&seg.probability, scan.spacing, &out.join(format!("{}.prob.volf", scan.scan_id)))?;
    if a.overlays {
        write_overlays(&out.join("overlays"), &scan, &seg.mask)?;
    }
    let report = &seg.report;
    crate::format::write_file(
        &out.join(format!("{}.report.tsv", scan.scan_id)),
        format!("{}\n{}\n", SegmentationReport::MACHINE_HEADER, report.machine_line()).as_bytes(),
    )?;
    print!("{}", format_table(std::slice::from_ref(report)));
    println!("{}", report.machine_line());
    Ok(0)
}

pub fn cmd_refine(config: &RunConfig, a: &RefineArgs) -> Result<u8> {
    let scan = load_scan(&config.data_root, &a.scan)?;
    let prob = load_volume(&a.probability)?.to_tensor()?;
    let (h, w, d) = (scan.height(), scan.width(), scan.depth());
    if prob.shape() != [h, w, d] {
        bail!(ConfigError::Invalid(format!(
            "probability volume {:?} does not match scan {} ({h}×{w}×{d})",
            prob.shape(),
            scan.scan_id
        )));
    }
    let start = std::time::Instant::now();
    let mut initial = Mask::zeros(&[h, w, d]);
    let mut refined = Mask::zeros(&[h, w, d]);
    for z in 0..d {
        let mut map = vec![0.0f64; 2 * h * w];
        for i in 0..h * w {
            let p = prob.data()[i * d + z] as f64;
            map[i] = 1.0 - p;
            map[h * w + i] = p;
        }
        let r = refine(&Tensor::new(&[2, h, w], map)?, &rescale_intensities(&scan.image_slice(z)), &config.crf)?;
        initial.set_slice(z, &r.initial);
        refined.set_slice(z, &r.mask);
    }
    let seconds = start.elapsed().as_secs_f64();
    let out = a.out.clone().unwrap_or_else(|| config.output_dir.join("segment"));
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    save_volume(&Volume::from_mask(&refined, scan.spacing)?, &out.join(format!("{}.crf.volf", scan.scan_id)))?;
    let changed = initial.data().iter().zip(refined.data()).filter(|(a, b)| a != b).count();
    println!("{}: {changed} voxels relabeled in {seconds:.3} s", scan.scan_id);
    if mask_path(&config.data_root, &scan.scan_id).exists() {
        println!(
            "dice {:.4} -> {:.4}",
            dice(&initial, &scan.mask)?,
            dice(&refined, &scan.mask)?
        );
    }
    Ok(0)
}

pub fn cmd_eval<T: Real>(config: &RunConfig, a: &EvalArgs) -> Result<u8> {
    let params = checked_checkpoint::<T>(config, &a.checkpoint)?;
    let ids = if !a.scans.is_empty() {
        a.scans.clone()
    } else if let Some(f) = a.fold {
        let (_, plan) = fold_plan(config)?;
        plan.folds
            .get(f)
            .ok_or_else(|| ConfigError::Invalid(format!("fold {f} of {}", plan.k)))?
            .test
            .clone()
    } else {
        list_originals(&config.data_root)?
    };
    let options = SegmentOptions {
        crf: a.crf.then_some(config.crf),
        loss: None,
    };
    let mut reports = Vec::new();
    for id in &ids {
        let scan = load_scan(&config.data_root, id)?;
        reports.push(segment(&params, &scan, &options)?.report);
    }
    print!("{}", format_table(&reports));
    println!("{}", SegmentationReport::MACHINE_HEADER);
    let mut text = format!("{}\n", SegmentationReport::MACHINE_HEADER);
    for r in &reports {
        println!("{}", r.machine_line());
        text.push_str(&r.machine_line());
        text.push('\n');
    }
    std::fs::create_dir_all(&config.output_dir).with_context(|| format!("cannot create {}", config.output_dir.display()))?;
    crate::format::write_file(&config.output_dir.join("eval.tsv"), text.as_bytes())?;
    Ok(0)
}

pub fn cmd_gradcheck(seed: u64, cases: usize) -> Result<u8> {
    let options = SuiteOptions {
        seed,
        cases: cases.max(1),
        ..SuiteOptions::default()
    };
    let reports = run_suite(&options)?;
    println!("{:<16} {:>14} {:>8}  result", "op", "max rel error", "entries");
    for r in &reports {
        let verdict = if r.passed(TOLERANCE) { "pass" } else { "FAIL" };
        println!("{:<16} {:>14.3e} {:>8}  {verdict}", r.op, r.max_rel_error, r.entries);
    }
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("suite is non-empty");
    if reports.iter().all(|r| r.passed(TOLERANCE)) {
        println!("all {} ops within {TOLERANCE:e}", reports.len());
        Ok(0)
    } else {
        Err(DomainFailure(format!(
            "gradient check failed; worst op {} has relative error {:.3e}",
            worst.op, worst.max_rel_error
        ))
        .into())
    }
}
