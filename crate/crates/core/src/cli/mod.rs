//! Command-line driver: `synth`, `train`, `segment`, `eval` and `sweep`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! format error, 3 numeric failure.

pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_dataset, read_labels, read_manifest, save_labels, synth_generate, write_dataset, Manifest};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, evaluate_videos, DatasetReport, EvalItem};
use crate::model::{init_model, load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use crate::nn::RngState;
use crate::sequence::{runs, ActionSequence, FeatureSequence};
use crate::trainer::{EpochReport, Trainer};

pub use config::RunConfig;

/// Stream tag for model initialization.
const TAG_INIT: u64 = 0x1417;

#[derive(Debug, Parser)]
#[command(name = "actseg", version, about = "Unsupervised action segmentation by ranked self-labeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed override (the generator seed for `synth`, the training seed otherwise)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the E-step
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// key=value override, repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset
    Synth,
    /// Train a model on a manifest
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Continue from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Segment the videos of a manifest with a trained model
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score predicted label files against the manifest's ground truth
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `<video_id>.txt` predictions
        #[arg(long)]
        predictions: PathBuf,
        /// Predicted alphabet size; defaults to the largest symbol + 1
        #[arg(long)]
        num_symbols: Option<usize>,
    },
    /// Train, segment and evaluate once per value of one config key
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        key: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_) => 1,
        Error::Numeric(_) | Error::Verification(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_config(common: &Common, seed_key: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.merge_file(path)?;
    }
    for pair in &common.overrides {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        cfg.set(seed_key, &seed.to_string())?;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path> {
    let out = common
        .out
        .as_deref()
        .ok_or_else(|| Error::Parameter("--out is required for this command".into()))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(out)
}

pub fn execute(cli: Cli) -> Result<()> {
    let common = &cli.common;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Parameter(format!("cannot configure {n} threads: {e}")))?;
    }
    match &cli.command {
        Command::Synth => {
            let cfg = resolve_config(common, "synth_seed")?;
            let out = out_dir(common)?;
            let data = synth_generate(&cfg.synth_spec()?)?;
            let manifest = write_dataset(&data.videos, cfg.synth_spec()?.num_actions, out)?;
            cfg.write(&out.join("config.resolved"))?;
            println!("wrote {} videos to {}", manifest.entries.len(), out.display());
            Ok(())
        }
        Command::Train { manifest, resume } => {
            let cfg = resolve_config(common, "seed")?;
            let out = out_dir(common)?;
            let (manifest, videos) = open_dataset(manifest)?;
            let summary = train_run(&cfg, &manifest, &videos, out, resume.as_deref())?;
            println!("{}", summary.describe());
            Ok(())
        }
        Command::Segment { manifest, checkpoint } => {
            let cfg = resolve_config(common, "seed")?;
            let out = out_dir(common)?;
            let (_, videos) = open_dataset(manifest)?;
            let model = load_checkpoint(checkpoint)?.model;
            let report = segment_run(&cfg, &model, &videos, out)?;
            match report {
                Some(r) => println!("{}", format_report(&r)),
                None => println!("segmented {} videos into {}", videos.len(), out.display()),
            }
            Ok(())
        }
        Command::Eval {
            manifest,
            predictions,
            num_symbols,
        } => {
            let manifest = read_manifest(manifest)?;
            let report = eval_run(&manifest, predictions, *num_symbols)?;
            if let Some(out) = &common.out {
                fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                write_metrics(&report, &out.join("metrics.csv"))?;
            }
            println!("{}", format_report(&report));
            Ok(())
        }
        Command::Sweep { manifest, key, values } => {
            let cfg = resolve_config(common, "seed")?;
            let out = out_dir(common)?;
            let (manifest, videos) = open_dataset(manifest)?;
            sweep_run(&cfg, &manifest, &videos, key, values, out)
        }
    }
}

fn open_dataset(path: &Path) -> Result<(Manifest, Vec<FeatureSequence>)> {
    let manifest = read_manifest(path)?;
    let videos = load_dataset(&manifest)?;
    if videos.is_empty() {
        return Err(Error::Input(format!("manifest {} lists no videos", path.display())));
    }
    Ok((manifest, videos))
}

fn dataset_actions(manifest: &Manifest) -> usize {
    manifest
        .entries
        .iter()
        .map(|e| manifest.actions_for(&e.task_id))
        .max()
        .unwrap_or(manifest.num_actions)
}

/// Run-length text `symbol:length ...`.
pub fn rle(labels: &[usize]) -> String {
    runs(labels)
        .iter()
        .map(|(s, a, b)| format!("{s}:{}", b - a))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Greedy segmentation of every video.
pub fn segment_all(model: &ModelParams, videos: &[FeatureSequence]) -> Result<Vec<ActionSequence>> {
    videos.iter().map(|v| model.segment(v)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: u64,
    pub converged: bool,
    pub final_total: f64,
    pub report: Option<DatasetReport>,
}

impl TrainSummary {
    fn describe(&self) -> String {
        let mut s = format!(
            "trained {} epochs{} final mean cost {:.6}",
            self.epochs,
            if self.converged { " (converged)" } else { "" },
            self.final_total
        );
        if let Some(r) = &self.report {
            s.push_str(&format!(
                "\nMoF {:.4} F1 {:.4} Jaccard {:.4}",
                r.mean_mof, r.mean_f1, r.mean_jaccard
            ));
        }
        s
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Per-epoch candidate and top-k dumps.
struct Dumps {
    candidates: Option<(PathBuf, BufWriter<File>)>,
    topk: Option<(PathBuf, BufWriter<File>)>,
    top: usize,
}

impl Dumps {
    fn open(cfg: &RunConfig, out: &Path) -> Result<Self> {
        let top = cfg.dump_top()?;
        let mut candidates = None;
        if cfg.dump_candidates()? {
            let path = out.join("candidates.csv");
            let mut w = create(&path)?;
            writeln!(w, "video_id,epoch,candidate_index,c1,c2,c3,c_cross,total,selected").map_err(|e| Error::io(&path, e))?;
            candidates = Some((path, w));
        }
        let mut topk = None;
        if top > 0 {
            let path = out.join("topk.tsv");
            let mut w = create(&path)?;
            writeln!(w, "epoch\tvideo_id\trank\ttotal\truns").map_err(|e| Error::io(&path, e))?;
            topk = Some((path, w));
        }
        Ok(Self { candidates, topk, top })
    }

    fn record(&mut self, report: &EpochReport, videos: &[FeatureSequence]) -> Result<()> {
        let epoch = report.record.epoch;
        for sel in &report.selections {
            let id = videos[sel.video_index].video_id();
            if let Some((path, w)) = &mut self.candidates {
                let mut by_index: Vec<_> = sel.ranked.iter().collect();
                by_index.sort_by_key(|c| c.index);
                for c in by_index {
                    writeln!(
                        w,
                        "{id},{epoch},{},{},{},{},{},{},{}",
                        c.index,
                        c.c1,
                        c.c2,
                        c.c3,
                        c.c_cross,
                        c.total,
                        u8::from(c.index == sel.selected.index)
                    )
                    .map_err(|e| Error::io(&*path, e))?;
                }
            }
            if let Some((path, w)) = &mut self.topk {
                for (rank, c) in sel.ranked.iter().take(self.top).enumerate() {
                    writeln!(w, "{epoch}\t{id}\t{}\t{}\t{}", rank + 1, c.total, rle(&c.labels.labels))
                        .map_err(|e| Error::io(&*path, e))?;
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        for (path, mut w) in self.candidates.into_iter().chain(self.topk) {
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// The untrained model a training run starts from.
pub fn initial_model(cfg: &RunConfig, model_cfg: &ModelConfig) -> Result<ModelParams> {
    let mut rng = RngState::derived(cfg.seed()?, &[TAG_INIT]);
    let mut model = init_model(model_cfg, &mut rng)?;
    let (scorer, head) = cfg.zero_init()?;
    if scorer {
        model.zero_scorer_output();
    }
    if head {
        model.zero_head_output();
    }
    Ok(model)
}

/// Model configuration for a dataset described by `manifest`.
pub fn model_config_for(cfg: &RunConfig, manifest: &Manifest, feature_dim: usize) -> Result<ModelConfig> {
    cfg.model_config(dataset_actions(manifest), feature_dim)
}

/// Trains on `videos` and writes the resolved config, history, dumps and
/// checkpoints (`model.ssam`, `checkpoints/epoch_NNNN.ssam`) into `out`.
pub fn train_run(
    cfg: &RunConfig,
    manifest: &Manifest,
    videos: &[FeatureSequence],
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    let feature_dim = videos[0].dim();
    let model_cfg = model_config_for(cfg, manifest, feature_dim)?;
    let train_cfg = cfg.train_config()?;
    cfg.write(&out.join("config.resolved"))?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if *ckpt.model.config() != model_cfg {
                return Err(Error::Parameter(format!(
                    "checkpoint {} was trained with a different model configuration",
                    path.display()
                )));
            }
            Trainer::resume(ckpt, train_cfg)?
        }
        None => {
            Trainer::new(initial_model(cfg, &model_cfg)?, train_cfg)?
        }
    };

    let evaluate = cfg.evaluate()?;
    let every = cfg.checkpoint_every()?;
    let ckpt_dir = out.join("checkpoints");
    if every > 0 {
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }
    let mut dumps = Dumps::open(cfg, out)?;
    let num_actions = model_cfg.num_actions;
    trainer.run(videos, |t, report| {
        dumps.record(report, videos)?;
        let epoch = report.record.epoch;
        if every > 0 && epoch % every as u64 == 0 {
            save_checkpoint(&t.checkpoint(), &ckpt_dir.join(format!("epoch_{epoch:04}.ssam")))?;
        }
        if !evaluate {
            return Ok(None);
        }
        let preds = segment_all(t.model(), videos)?;
        Ok(evaluate_videos(videos, &preds, num_actions)?.map(|r| r.mean_mof))
    })?;
    dumps.finish()?;
    save_checkpoint(&trainer.checkpoint(), &out.join("model.ssam"))?;
    let history_path = out.join("history.csv");
    let mut w = create(&history_path)?;
    trainer
        .history()
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&history_path, e))?;

    let preds = segment_all(trainer.model(), videos)?;
    Ok(TrainSummary {
        epochs: trainer.epoch(),
        converged: trainer.converged(),
        final_total: trainer.history().records.last().map_or(f64::NAN, |r| r.mean_total),
        report: evaluate_videos(videos, &preds, num_actions)?,
    })
}

/// Writes `predictions/<video_id>.txt` and, if enabled,
/// `timelines/<video_id>.svg`; returns metrics when ground truth exists.
pub fn segment_run(
    cfg: &RunConfig,
    model: &ModelParams,
    videos: &[FeatureSequence],
    out: &Path,
) -> Result<Option<DatasetReport>> {
    let pred_dir = out.join("predictions");
    fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    let svg_dir = out.join("timelines");
    let svg = cfg.svg()?;
    if svg {
        fs::create_dir_all(&svg_dir).map_err(|e| Error::io(&svg_dir, e))?;
    }
    let preds = segment_all(model, videos)?;
    for (v, p) in videos.iter().zip(&preds) {
        save_labels(&p.labels, &pred_dir.join(format!("{}.txt", v.video_id())))?;
        if svg {
            let path = svg_dir.join(format!("{}.svg", v.video_id()));
            fs::write(&path, svg::timeline_svg(v.video_id(), &p.labels, v.gt_labels()))
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    let report = evaluate_videos(videos, &preds, model.num_actions())?;
    if let Some(r) = &report {
        write_metrics(r, &out.join("metrics.csv"))?;
    }
    Ok(report)
}

/// Scores `<predictions>/<video_id>.txt` against the manifest labels.
pub fn eval_run(manifest: &Manifest, predictions: &Path, num_symbols: Option<usize>) -> Result<DatasetReport> {
    let mut loaded = Vec::new();
    for e in &manifest.entries {
        let gt_path = e
            .labels
            .as_ref()
            .ok_or_else(|| Error::Input(format!("video {} has no ground-truth labels", e.video_id)))?;
        let gt = read_labels(&manifest.resolve(gt_path))?;
        let pred_path = predictions.join(format!("{}.txt", e.video_id));
        if !pred_path.exists() {
            return Err(Error::Input(format!(
                "no prediction for video {} ({})",
                e.video_id,
                pred_path.display()
            )));
        }
        let pred = read_labels(&pred_path)?;
        if pred.len() != gt.len() {
            return Err(Error::Input(format!(
                "video {}: {} predicted frames, {} labeled",
                e.video_id,
                pred.len(),
                gt.len()
            )));
        }
        loaded.push((e, pred, gt));
    }
    let symbols = num_symbols.unwrap_or_else(|| {
        loaded.iter().flat_map(|(_, p, _)| p.iter()).max().map_or(1, |m| m + 1)
    });
    let items: Vec<EvalItem<'_>> = loaded
        .iter()
        .map(|(e, pred, gt)| EvalItem {
            video_id: &e.video_id,
            task_id: &e.task_id,
            pred,
            gt,
        })
        .collect();
    evaluate_dataset(&items, symbols)
}

pub fn format_report(r: &DatasetReport) -> String {
    let mut s = format!("{:<16} {:>8} {:>8} {:>8}\n", "task", "MoF", "F1", "Jaccard");
    for (task, m) in &r.tasks {
        s.push_str(&format!("{task:<16} {:>8.4} {:>8.4} {:>8.4}\n", m.mof, m.f1, m.jaccard));
    }
    s.push_str(&format!(
        "{:<16} {:>8.4} {:>8.4} {:>8.4}",
        "mean", r.mean_mof, r.mean_f1, r.mean_jaccard
    ));
    s
}

fn write_metrics(r: &DatasetReport, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from("task,mof,f1,jaccard\n");
    for (task, m) in &r.tasks {
        body.push_str(&format!("{task},{},{},{}\n", m.mof, m.f1, m.jaccard));
    }
    body.push_str(&format!("mean,{},{},{}\n", r.mean_mof, r.mean_f1, r.mean_jaccard));
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn sweep_run(
    base: &RunConfig,
    manifest: &Manifest,
    videos: &[FeatureSequence],
    key: &str,
    values: &[String],
    out: &Path,
) -> Result<()> {
    let summary_path = out.join("summary.csv");
    let mut rows = format!("{key},epochs,final_total,mof,f1,jaccard\n");
    for value in values {
        let mut cfg = base.clone();
        cfg.set(key, value)?;
        let dir = out.join(format!("{key}={value}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let s = train_run(&cfg, manifest, videos, &dir, None)?;
        let model = load_checkpoint(&dir.join("model.ssam"))?.model;
        segment_run(&cfg, &model, videos, &dir)?;
        let (mof, f1, jac) = s
            .report
            .as_ref()
            .map_or((f64::NAN, f64::NAN, f64::NAN), |r| (r.mean_mof, r.mean_f1, r.mean_jaccard));
        println!("{key}={value}: epochs {} MoF {mof:.4} F1 {f1:.4} Jaccard {jac:.4}", s.epochs);
        rows.push_str(&format!("{value},{},{},{mof},{f1},{jac}\n", s.epochs, s.final_total));
    }
    fs::write(&summary_path, rows).map_err(|e| Error::io(&summary_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_text() {
        assert_eq!(rle(&[0, 0, 2, 1, 1, 1]), "0:2 2:1 1:3");
        assert_eq!(rle(&[]), "");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Parameter("x".into())), 1);
        assert_eq!(exit_code(&Error::Input("x".into())), 2);
        assert_eq!(exit_code(&Error::format("f", "m")), 2);
        assert_eq!(exit_code(&Error::Numeric("nan".into())), 3);
    }

    #[test]
    fn parse_errors_are_usage_errors() {
        assert_eq!(run(["actseg", "frobnicate"]), 1);
        assert_eq!(run(["actseg", "train"]), 1);
        assert_eq!(run(["actseg", "--help"]), 0);
    }
}
