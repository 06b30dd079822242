//! Command-line interface: `gen`, `train`, `train-meta`, `predict`, `eval`
//! and `preprocess`.

pub mod config;
pub mod dataset_dir;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::datagen::build_dataset;
use crate::error::{invalid, io_err, Error, Result};
use crate::grid::Video;
use crate::ingest::{fire_preprocess, ice_preprocess, read_rgb_frames, read_video, save_gray, write_video};
use crate::mbonet::{self, MboModel};
use crate::metanet::{self, MetaModel};
use crate::metrics::{evaluate, format_table, EvalReport, FrameRange};
use crate::store;
use config::RunConfig;
use dataset_dir::{read_dataset, viewable, write_dataset, Split, StoredDataset};

#[derive(Debug, Parser)]
#[command(name = "thresholdyn", version, about = "Simulate threshold dynamics and recover their kernel and threshold")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the dataset and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives the reference sequential path.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from the `dataset` section.
    Gen,
    /// Train the single-dynamics model.
    Train(TrainArgs),
    /// Train the meta-learning model.
    TrainMeta(TrainArgs),
    /// Predict frames from a checkpoint and an input video.
    Predict(PredictArgs),
    /// Score predicted videos against ground truth.
    Eval(EvalArgs),
    /// Turn raw color frames into a binary front video.
    Preprocess(PreprocessArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset written by `gen`; without it the `dataset` section is
    /// generated in memory and saved under the output directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input video directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Frames to predict after the first.
    #[arg(long, default_value_t = 6)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A video directory, or a directory of video directories.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Inclusive 1-based range such as `2-7`.
    #[arg(long)]
    pub frames: Option<FrameRange>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PreprocessKind {
    Fire,
    Ice,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(value_enum)]
    pub kind: PreprocessKind,
    /// Directory of `.ppm` frames, read in file-name order.
    #[arg(long)]
    pub input: PathBuf,
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        // Fails only if a pool already exists (e.g. when called twice in tests).
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            warn!("thread pool already initialized; --threads {n} ignored");
        }
    }
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .with_seed(cli.seed);
    config.validate()?;
    store::create_dir(&cli.out)?;
    match &cli.command {
        Command::Gen => cmd_gen(&config, &cli.out),
        Command::Train(args) => cmd_train(&config, args, &cli.out),
        Command::TrainMeta(args) => cmd_train_meta(&config, args, &cli.out),
        Command::Predict(args) => cmd_predict(args, &cli.out),
        Command::Eval(args) => cmd_eval(&config, args, &cli.out),
        Command::Preprocess(args) => cmd_preprocess(&config, args, &cli.out),
    }
}

fn write_resolved(config: &RunConfig, out: &Path) -> Result<()> {
    store::write_json(&out.join("config.json"), config)
}

fn cmd_gen(config: &RunConfig, out: &Path) -> Result<()> {
    let spec = config.dataset.as_ref().ok_or_else(|| invalid("gen needs a `dataset` section"))?;
    let dataset = build_dataset(spec)?;
    write_dataset(&out.join("dataset"), &dataset)?;
    write_resolved(config, out)?;
    info!(
        "wrote {} videos ({} train, {} test) to {}",
        dataset.samples.len(),
        dataset.train.len(),
        dataset.test.len(),
        out.join("dataset").display()
    );
    Ok(())
}

fn load_or_generate(config: &RunConfig, dataset: Option<&Path>, out: &Path) -> Result<StoredDataset> {
    let dir = match dataset {
        Some(d) => d.to_path_buf(),
        None => {
            let spec = config
                .dataset
                .as_ref()
                .ok_or_else(|| invalid("pass --dataset or give the config a `dataset` section"))?;
            let dir = out.join("dataset");
            write_dataset(&dir, &build_dataset(spec)?)?;
            dir
        }
    };
    read_dataset(&dir)
}

fn training_videos<'a>(config: &RunConfig, data: &'a StoredDataset) -> Result<Vec<&'a Video>> {
    let mut videos: Vec<&Video> = data.split(Split::Train).into_iter().map(|v| &v.noisy).collect();
    if let Some(n) = config.train.max_videos {
        videos.truncate(n);
    }
    if videos.is_empty() {
        return Err(invalid("dataset has no training videos"));
    }
    Ok(videos)
}

fn eval_range(config: &RunConfig, n_frames: usize) -> Result<FrameRange> {
    match config.eval.frames {
        Some(r) => Ok(r),
        None => FrameRange::new(2.min(n_frames), n_frames),
    }
}

fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(text, "{},{l}", i + 1).expect("write to string");
    }
    fs::write(path, text).map_err(io_err(path))
}

fn write_report(out: &Path, label: &str, report: &EvalReport) -> Result<()> {
    store::write_json(&out.join("eval.json"), report)?;
    let table = format_table(&[(label, report)]);
    fs::write(out.join("eval.txt"), &table).map_err(io_err(out.join("eval.txt")))?;
    println!("{table}");
    Ok(())
}

/// Scores predictions from the noisy test inputs against the clean videos.
fn evaluate_test_split(
    config: &RunConfig,
    data: &StoredDataset,
    predict: impl Fn(&Video, usize) -> Result<Video>,
) -> Result<Option<EvalReport>> {
    let test = data.split(Split::Test);
    if test.is_empty() {
        return Ok(None);
    }
    let n_frames = test[0].clean.len();
    let steps = config.eval.n_steps.unwrap_or(n_frames - 1);
    let preds = test.iter().map(|v| predict(&v.noisy, steps)).collect::<Result<Vec<_>>>()?;
    let truths: Vec<Video> = test.iter().map(|v| v.clean.clone()).collect();
    let range = eval_range(config, n_frames.min(steps + 1))?;
    Ok(Some(evaluate(&preds, &truths, range, config.eval.epsilon)?))
}

#[derive(Serialize, Deserialize)]
struct DynamicsDump {
    kind: String,
    a: f64,
    kernel_size: usize,
}

fn dump_dynamics(out: &Path, kind: &str, kernel: &crate::grid::Grid, a: f64) -> Result<()> {
    store::write_f64s(&out.join("kernel.bin"), kernel.data())?;
    save_gray(&viewable(kernel), &out.join("kernel.pgm"))?;
    store::write_json(&out.join("dynamics.json"), &DynamicsDump { kind: kind.into(), a, kernel_size: kernel.height() })
}

fn cmd_train(config: &RunConfig, args: &TrainArgs, out: &Path) -> Result<()> {
    let data = load_or_generate(config, args.dataset.as_deref(), out)?;
    let kernel_size = config.model.kernel_size.unwrap_or(data.manifest.spec.kernel.size());
    let videos = training_videos(config, &data)?;
    let tc = config.mbo_config(kernel_size);
    info!("training on {} videos for {} epochs", videos.len(), tc.epochs);
    let outcome = mbonet::train(&videos, &tc)?;
    let model = &outcome.model;
    model.save(&out.join("checkpoint"))?;
    write_loss_csv(&out.join("loss.csv"), &outcome.loss_history)?;
    dump_dynamics(out, "mbo", model.kernel().grid(), model.threshold())?;
    let mut resolved = config.clone();
    resolved.model.kernel_size = Some(kernel_size);
    write_resolved(&resolved, out)?;
    info!("learned threshold {:.4}", model.threshold());
    if let Some(report) = evaluate_test_split(config, &data, |v, n| model.predict(v.frame(0), n))? {
        write_report(out, data.manifest.spec.noise.label(), &report)?;
    }
    Ok(())
}

fn cmd_train_meta(config: &RunConfig, args: &TrainArgs, out: &Path) -> Result<()> {
    let data = load_or_generate(config, args.dataset.as_deref(), out)?;
    let kernel_size = config.model.kernel_size.unwrap_or(data.manifest.spec.kernel.size());
    let videos = training_videos(config, &data)?;
    let tc = config.meta_train_config();
    info!("training on {} videos for {} epochs", videos.len(), tc.epochs);
    let outcome = metanet::train(&videos, config.meta_config(kernel_size), &tc)?;
    let model = &outcome.model;
    model.save(&out.join("checkpoint"))?;
    write_loss_csv(&out.join("loss.csv"), &outcome.loss_history)?;
    let mut resolved = config.clone();
    resolved.model.kernel_size = Some(kernel_size);
    write_resolved(&resolved, out)?;
    let n_in = model.config().input_frames();
    let report = evaluate_test_split(config, &data, |v, n| Ok(model.predict(&v.truncated(n_in)?, n)?.2))?;
    if let Some(report) = report {
        write_report(out, data.manifest.spec.noise.label(), &report)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct KindProbe {
    kind: String,
}

fn cmd_predict(args: &PredictArgs, out: &Path) -> Result<()> {
    let manifest = args.checkpoint.join("manifest.json");
    if !manifest.is_file() {
        return Err(Error::Checkpoint(format!("{}: no checkpoint manifest", args.checkpoint.display())));
    }
    let probe: KindProbe = store::read_json(&manifest)?;
    let input = read_video(&args.input)?;
    let frames_dir = out.join("frames");
    match probe.kind.as_str() {
        "mbo" => {
            let model = MboModel::load(&args.checkpoint)?;
            let video = model.predict(input.frame(0), args.steps)?;
            write_video(&frames_dir, &video, &format!("mbo prediction from {}", args.input.display()))?;
            dump_dynamics(out, "mbo", model.kernel().grid(), model.threshold())
        }
        "meta" => {
            let model = MetaModel::load(&args.checkpoint)?;
            let n_in = model.config().input_frames();
            if input.len() < n_in {
                return Err(invalid(format!("meta model needs {n_in} input frames, video has {}", input.len())));
            }
            let (kernel, a, video) = model.predict(&input.truncated(n_in)?, args.steps)?;
            write_video(&frames_dir, &video, &format!("meta prediction from {}", args.input.display()))?;
            dump_dynamics(out, "meta", kernel.grid(), a)
        }
        other => Err(Error::Checkpoint(format!("unknown checkpoint kind '{other}'"))),
    }
}

/// Named videos under `dir`: the directory itself when it holds a video
/// manifest, otherwise each subdirectory that does, in name order.
fn video_set(dir: &Path) -> Result<Vec<(String, Video)>> {
    if dir.join("manifest.json").is_file() && dir.join("frame_0001.pgm").is_file() {
        return Ok(vec![(dir.display().to_string(), read_video(dir)?)]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>>>()?;
    subdirs.retain(|p| p.join("manifest.json").is_file());
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(invalid(format!("{}: no videos found", dir.display())));
    }
    subdirs
        .iter()
        .map(|p| Ok((p.file_name().expect("entry name").to_string_lossy().into_owned(), read_video(p)?)))
        .collect()
}

fn cmd_eval(config: &RunConfig, args: &EvalArgs, out: &Path) -> Result<()> {
    let preds = video_set(&args.pred)?;
    let truths = video_set(&args.truth)?;
    if preds.len() != truths.len() {
        return Err(invalid(format!("{} predicted videos vs {} true videos", preds.len(), truths.len())));
    }
    for ((pn, p), (tn, t)) in preds.iter().zip(&truths) {
        if p.frame_shape() != t.frame_shape() || p.len() != t.len() {
            return Err(invalid(format!(
                "video '{pn}' ({} frames of {:?}) does not match '{tn}' ({} frames of {:?})",
                p.len(),
                p.frame_shape(),
                t.len(),
                t.frame_shape()
            )));
        }
    }
    let range = match args.frames {
        Some(r) => r,
        None => eval_range(config, truths[0].1.len())?,
    };
    let p: Vec<Video> = preds.into_iter().map(|(_, v)| v).collect();
    let t: Vec<Video> = truths.into_iter().map(|(_, v)| v).collect();
    let report = evaluate(&p, &t, range, config.eval.epsilon)?;
    write_report(out, "Evaluation", &report)
}

fn cmd_preprocess(config: &RunConfig, args: &PreprocessArgs, out: &Path) -> Result<()> {
    let frames = read_rgb_frames(&args.input)?;
    let (result, kind) = match args.kind {
        PreprocessKind::Fire => (fire_preprocess(&frames, &config.io.fire_mask, config.io.fire_blur)?, "fire"),
        PreprocessKind::Ice => (ice_preprocess(&frames, &config.io.ice_mask)?, "ice"),
    };
    for w in &result.warnings {
        warn!("{w}");
    }
    write_video(&out.join("video"), &result.video, &format!("{kind} preprocessing of {}", args.input.display()))?;
    store::write_json(&out.join("warnings.json"), &result.warnings)?;
    write_resolved(config, out)
}
