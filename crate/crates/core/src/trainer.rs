//! EM-style self-labeling loop.
//!
//! Each epoch first samples K candidate labelings per video from the
//! current model and keeps the lowest-cost one (E-step, parallel across
//! videos), then fits the model to the kept labels with cross-entropy
//! (M-step, single writer). Ground-truth labels are never consulted here;
//! evaluation happens through the caller-supplied epoch hook.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::cross_video::{CrossVideoConfig, SegmentPool};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelParams};
use crate::nn::{sample_noise, Adam, ParamArray, Parameters, RngState};
use crate::ranking::{select_best, total_cost, ActionLength, Candidate, RankingConfig, Selection};
use crate::sequence::{ActionSequence, FeatureSequence};

const TAG_CANDIDATE: u64 = 1;
const TAG_PICK: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_CROSS_COST: u64 = 4;
const TAG_CROSS_LOSS: u64 = 5;

/// How candidates are drawn in the E-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Gumbel,
    /// Greedy decoding for every candidate (the no-Gumbel ablation).
    Greedy,
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::Gumbel => "gumbel",
            Sampling::Greedy => "greedy",
        })
    }
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gumbel" => Ok(Sampling::Gumbel),
            "greedy" => Ok(Sampling::Greedy),
            other => Err(Error::Parameter(format!("unknown sampling mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Total epoch budget (a resumed run continues up to this count).
    pub epochs: usize,
    /// Cost weights, K, length model and selection rule.
    pub ranking: RankingConfig,
    pub learning_rate: f64,
    /// Learning rate of the classifier head; `None` uses `learning_rate`.
    pub head_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Passes over the videos per E-step.
    pub m_steps_per_e_step: usize,
    pub seed: u64,
    pub sampling: Sampling,
    /// Per-epoch multiplicative decay of the Gumbel temperature.
    pub temperature_decay: f64,
    pub min_temperature: f64,
    /// Skip classifier-head updates (used by ablation checks).
    pub freeze_head: bool,
    pub cross_video: CrossVideoConfig,
    pub cross_video_in_loss: bool,
    pub cross_video_weight: f64,
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            ranking: RankingConfig::default(),
            learning_rate: 3e-3,
            head_learning_rate: Some(1e-4),
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            m_steps_per_e_step: 1,
            seed: 0,
            sampling: Sampling::Gumbel,
            temperature_decay: 0.999,
            min_temperature: 0.3,
            freeze_head: false,
            cross_video: CrossVideoConfig::default(),
            cross_video_in_loss: false,
            cross_video_weight: 1.0,
            patience: 20,
            min_improvement: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Parameter(m.into()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.m_steps_per_e_step == 0 {
            return fail("m_steps_per_e_step must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be finite and nonnegative");
        }
        if self.head_learning_rate.is_some_and(|h| !(h >= 0.0 && h.is_finite())) {
            return fail("head learning rate must be finite and nonnegative");
        }
        if !(self.temperature_decay > 0.0 && self.temperature_decay <= 1.0) {
            return fail("temperature_decay must lie in (0, 1]");
        }
        if !(self.min_temperature > 0.0 && self.min_temperature.is_finite()) {
            return fail("min_temperature must be positive");
        }
        if !(self.cross_video.margin > 0.0) {
            return fail("cross-video margin must be positive");
        }
        if !(self.cross_video_weight >= 0.0 && self.cross_video_weight.is_finite()) {
            return fail("cross_video_weight must be finite and nonnegative");
        }
        if !(self.min_improvement >= 0.0) {
            return fail("min_improvement must be nonnegative");
        }
        self.ranking.validate()
    }

    /// Gumbel temperature used during `epoch` (0-based).
    pub fn temperature(&self, initial: f64, epoch: u64) -> f64 {
        let decayed = initial * self.temperature_decay.powf(epoch as f64);
        decayed.max(self.min_temperature.min(initial))
    }
}

/// E-step result for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSelection {
    pub video_index: usize,
    /// The self-label for this epoch.
    pub selected: Candidate,
    /// All K candidates, ascending by total cost.
    pub ranked: Vec<Candidate>,
}

fn candidate_rng(seed: u64, epoch: u64, video: usize, k: usize) -> RngState {
    RngState::derived(seed, &[TAG_CANDIDATE, epoch, video as u64, k as u64])
}

fn check_videos(model: &ModelParams, videos: &[FeatureSequence]) -> Result<()> {
    if videos.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let d = model.config().feature_dim;
    for v in videos {
        if v.is_empty() {
            return Err(Error::Input(format!("video {} has no frames", v.video_id())));
        }
        if v.dim() != d {
            return Err(Error::dim(format!("features of video {}", v.video_id()), d, v.dim()));
        }
    }
    Ok(())
}

fn cross_cost(
    videos: &[FeatureSequence],
    reference: &[ActionSequence],
    v: usize,
    labels: &ActionSequence,
    model: &ModelParams,
    config: &TrainConfig,
    rng: &mut RngState,
) -> Result<f64> {
    let entries: Vec<(&FeatureSequence, &ActionSequence)> = videos
        .iter()
        .zip(reference)
        .enumerate()
        .map(|(i, (f, r))| (f, if i == v { labels } else { r }))
        .collect();
    let pool = SegmentPool::new(&entries)?;
    let id = videos[v].video_id();
    let triples = pool.triples(&config.cross_video, rng, |s| s.video_id == id);
    let mut projection = model.embed_projection.clone();
    pool.evaluate(&triples, &config.cross_video, projection.as_mut(), 0.0)
}

/// Samples and ranks K candidates for every video.
///
/// Deterministic in `(model, videos, config, epoch, reference)`: each
/// candidate draws from its own stream derived from the run seed. The
/// `reference` labelings of the other videos are needed only when the
/// cross-video term is part of the cost.
pub fn e_step(
    model: &ModelParams,
    videos: &[FeatureSequence],
    config: &TrainConfig,
    epoch: u64,
    reference: Option<&[ActionSequence]>,
) -> Result<Vec<VideoSelection>> {
    check_videos(model, videos)?;
    let ranking = &config.ranking;
    let k_count = ranking.candidates;
    let num_actions = model.num_actions();
    let temperature = config.temperature(model.config().temperature, epoch);
    if ranking.cross_video_in_cost && reference.is_none_or(|r| r.len() != videos.len()) {
        return Err(Error::Input("cross-video cost needs a reference labeling per video".into()));
    }

    videos
        .par_iter()
        .enumerate()
        .map(|(v, video)| {
            let probs = model.classify_frames(video)?;
            let (greedy, cache) = match config.sampling {
                Sampling::Greedy => (Some(model.segment(video)?), None),
                Sampling::Gumbel => (None, Some(model.rollout_cache(video)?)),
            };
            let mut candidates = Vec::with_capacity(k_count);
            for k in 0..k_count {
                let labels = match (&greedy, &cache) {
                    (Some(g), _) => g.clone(),
                    (None, Some(cache)) => {
                        let mut rng = candidate_rng(config.seed, epoch, v, k);
                        model.sample_cached(cache, video.video_id(), temperature, &mut rng)?.actions
                    }
                    (None, None) => unreachable!("gumbel sampling always builds a cache"),
                };
                let c_cross = match reference {
                    Some(r) if ranking.cross_video_in_cost => {
                        let mut rng = RngState::derived(
                            config.seed,
                            &[TAG_CROSS_COST, epoch, v as u64, k as u64],
                        );
                        Some(cross_cost(videos, r, v, &labels, model, config, &mut rng)?)
                    }
                    _ => None,
                };
                candidates.push(total_cost(k, labels, &probs, ranking, num_actions, c_cross)?);
            }
            let ranked = select_best(candidates)?;
            let selected = match ranking.selection {
                Selection::MinCost => ranked.best,
                Selection::Random => {
                    let mut rng = RngState::derived(config.seed, &[TAG_PICK, epoch, v as u64]);
                    let pick = rng.below(k_count);
                    ranked
                        .ranked
                        .iter()
                        .find(|c| c.index == pick)
                        .cloned()
                        .expect("every candidate index is present")
                }
            };
            Ok(VideoSelection {
                video_index: v,
                selected,
                ranked: ranked.ranked,
            })
        })
        .collect()
}

/// Adam state for the autoregressive path (with the optional projection)
/// and, separately, for the classifier head.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub path: Adam,
    pub head: Adam,
}

const HEAD_PREFIX: &str = "classifier_head.";

impl Optimizer {
    pub fn new(config: &TrainConfig) -> Self {
        let adam = |lr| Adam::with_hyper(lr, config.beta1, config.beta2, config.adam_epsilon);
        Self {
            path: adam(config.learning_rate),
            head: adam(config.head_learning_rate.unwrap_or(config.learning_rate)),
        }
    }

    /// Applies one update to every parameter and clears the gradients.
    pub fn step(&mut self, model: &mut ModelParams) -> Result<()> {
        let (mut head, mut path): (Vec<&mut ParamArray>, Vec<&mut ParamArray>) = model
            .params_mut()
            .into_iter()
            .partition(|p| p.name().starts_with(HEAD_PREFIX));
        self.path.step(&mut path)?;
        self.head.step(&mut head)
    }

    fn extras(&self) -> Vec<ParamArray> {
        let mut out = Vec::new();
        for (tag, adam) in [("path", &self.path), ("head", &self.head)] {
            if adam.steps() == 0 {
                continue;
            }
            out.push(
                ParamArray::from_values(format!("adam.{tag}.step"), &[1], vec![adam.steps() as f64])
                    .expect("shape matches"),
            );
            for (i, (m, v)) in adam.moments().iter().enumerate() {
                for (kind, buf) in [("m", m), ("v", v)] {
                    out.push(
                        ParamArray::from_values(format!("adam.{tag}.{kind}.{i}"), &[buf.len()], buf.clone())
                            .expect("shape matches"),
                    );
                }
            }
        }
        out
    }

    fn restore(&mut self, extras: &[ParamArray]) -> Result<()> {
        let find = |name: &str| extras.iter().find(|a| a.name() == name);
        for (tag, adam) in [("path", &mut self.path), ("head", &mut self.head)] {
            let Some(step) = find(&format!("adam.{tag}.step")) else {
                continue;
            };
            let mut moments = Vec::new();
            while let (Some(m), Some(v)) = (
                find(&format!("adam.{tag}.m.{}", moments.len())),
                find(&format!("adam.{tag}.v.{}", moments.len())),
            ) {
                moments.push((m.values().to_vec(), v.values().to_vec()));
            }
            adam.restore(step.values()[0] as u64, moments)?;
        }
        Ok(())
    }
}

/// Gumbel noise the selected candidate was generated with, or `None` when
/// sampling is greedy.
fn replay_noise(
    model: &ModelParams,
    config: &TrainConfig,
    epoch: u64,
    selection: &VideoSelection,
    frames: usize,
) -> Option<Vec<Vec<f64>>> {
    match config.sampling {
        Sampling::Greedy => None,
        Sampling::Gumbel => {
            let mut rng = candidate_rng(config.seed, epoch, selection.video_index, selection.selected.index);
            let r = model.config().num_rules;
            Some((0..frames).map(|_| sample_noise(&mut rng, r)).collect())
        }
    }
}

fn name_video(video: &FeatureSequence) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Numeric(m) => Error::Numeric(format!("video {}: {m}", video.video_id())),
        other => other,
    }
}

/// Fits the model to the selected self-labels; returns the mean loss per
/// video (autoregressive plus classifier-head cross-entropy), plus the
/// cross-video loss when enabled.
pub fn m_step(
    model: &mut ModelParams,
    optimizer: &mut Optimizer,
    videos: &[FeatureSequence],
    selections: &[VideoSelection],
    config: &TrainConfig,
    epoch: u64,
) -> Result<f64> {
    check_videos(model, videos)?;
    if selections.len() != videos.len() {
        return Err(Error::Length {
            expected: videos.len(),
            actual: selections.len(),
        });
    }
    let temperature = config.temperature(model.config().temperature, epoch);
    let mut total = 0.0;
    let mut count = 0usize;
    for pass in 0..config.m_steps_per_e_step {
        let mut order: Vec<usize> = (0..videos.len()).collect();
        RngState::derived(config.seed, &[TAG_SHUFFLE, epoch, pass as u64]).shuffle(&mut order);
        for &i in &order {
            let sel = selections
                .iter()
                .find(|s| s.video_index == i)
                .ok_or_else(|| Error::Input(format!("no self-label for video index {i}")))?;
            let video = &videos[i];
            let targets = &sel.selected.labels.labels;
            let noise = replay_noise(model, config, epoch, sel, video.len());
            let mut loss = model
                .sequence_loss(video.features(), targets, noise.as_deref(), temperature)
                .map_err(name_video(video))?;
            if !config.freeze_head {
                loss += model.head_loss(video.features(), targets).map_err(name_video(video))?;
            }
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("video {}: non-finite loss", video.video_id())));
            }
            optimizer.step(model).map_err(name_video(video))?;
            total += loss;
            count += 1;
        }
        if config.cross_video_in_loss {
            total += cross_video_loss_step(model, optimizer, videos, selections, config, epoch, pass)?;
        }
    }
    Ok(total / count as f64)
}

fn cross_video_loss_step(
    model: &mut ModelParams,
    optimizer: &mut Optimizer,
    videos: &[FeatureSequence],
    selections: &[VideoSelection],
    config: &TrainConfig,
    epoch: u64,
    pass: usize,
) -> Result<f64> {
    let mut labels: Vec<&ActionSequence> = vec![&selections[0].selected.labels; videos.len()];
    for s in selections {
        labels[s.video_index] = &s.selected.labels;
    }
    let entries: Vec<(&FeatureSequence, &ActionSequence)> =
        videos.iter().zip(labels.iter().copied()).collect();
    let pool = SegmentPool::new(&entries)?;
    let mut rng = RngState::derived(config.seed, &[TAG_CROSS_LOSS, epoch, pass as u64]);
    let triples = pool.triples(&config.cross_video, &mut rng, |_| true);
    let value = pool.evaluate(
        &triples,
        &config.cross_video,
        model.embed_projection.as_mut(),
        config.cross_video_weight,
    )?;
    if model.embed_projection.is_some() && !triples.is_empty() {
        optimizer.step(model)?;
    }
    Ok(config.cross_video_weight * value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based index of the completed epoch.
    pub epoch: u64,
    pub temperature: f64,
    pub mean_total: f64,
    pub mean_c1: f64,
    pub mean_c2: f64,
    pub mean_c3: f64,
    pub mean_cross: f64,
    pub loss: f64,
    /// Evaluation metric reported by the epoch hook (e.g. MoF).
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One row per epoch; the `mof` column appears when any epoch has a metric.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let with_metric = self.records.iter().any(|r| r.metric.is_some());
        write!(w, "epoch,temperature,mean_total,mean_c1,mean_c2,mean_c3,mean_cross,loss")?;
        if with_metric {
            write!(w, ",mof")?;
        }
        writeln!(w)?;
        for r in &self.records {
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.temperature, r.mean_total, r.mean_c1, r.mean_c2, r.mean_c3, r.mean_cross, r.loss
            )?;
            if with_metric {
                match r.metric {
                    Some(m) => write!(w, ",{m}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Everything produced by one epoch.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub record: EpochRecord,
    pub selections: Vec<VideoSelection>,
}

/// Stateful driver: model, optimizer, epoch counter, history and the
/// convergence tracker.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: ModelParams,
    optimizer: Optimizer,
    epoch: u64,
    history: TrainHistory,
    reference: Option<Vec<ActionSequence>>,
    best_total: f64,
    stall: usize,
}

fn length_extras(config: &TrainConfig) -> Vec<ParamArray> {
    match config.ranking.length_model.per_action() {
        Some(p) if config.ranking.length_model.learnable => {
            let n = p.len();
            vec![
                ParamArray::from_values("length.mean", &[n], p.iter().map(|a| a.mean).collect())
                    .expect("shape matches"),
                ParamArray::from_values("length.std", &[n], p.iter().map(|a| a.std).collect())
                    .expect("shape matches"),
            ]
        }
        _ => Vec::new(),
    }
}

impl Trainer {
    pub fn new(model: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(&config);
        Ok(Self {
            config,
            model,
            optimizer,
            epoch: 0,
            history: TrainHistory::default(),
            reference: None,
            best_total: f64::INFINITY,
            stall: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]:
    /// restores the epoch counter, optimizer moments and learned lengths.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        let mut t = Self::new(checkpoint.model, config)?;
        t.epoch = checkpoint.epoch;
        let find = |name: &str| checkpoint.extras.iter().find(|a| a.name() == name);
        if let (Some(m), Some(s)) = (find("length.mean"), find("length.std")) {
            let per_action = m
                .values()
                .iter()
                .zip(s.values())
                .map(|(&mean, &std)| ActionLength { mean, std })
                .collect();
            let kind = t.config.ranking.length_model.kind;
            let mut lm = crate::ranking::LengthModel::fixed(kind, per_action)?;
            lm.learnable = true;
            t.config.ranking.length_model = lm;
        }
        t.optimizer.restore(&checkpoint.extras)?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut extras = length_extras(&self.config);
        extras.extend(self.optimizer.extras());
        Checkpoint {
            model: self.model.clone(),
            epoch: self.epoch,
            extras,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn into_model(self) -> ModelParams {
        self.model
    }

    /// Completed epochs, including any before a resume.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    /// True once the mean selected cost has failed to improve by
    /// `min_improvement` for `patience` consecutive epochs.
    pub fn converged(&self) -> bool {
        self.stall >= self.config.patience
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs as u64 || self.converged()
    }

    /// One E-step plus M-step.
    pub fn step_epoch(&mut self, videos: &[FeatureSequence]) -> Result<EpochReport> {
        check_videos(&self.model, videos)?;
        let epoch = self.epoch;
        if self.config.ranking.cross_video_in_cost && self.reference.is_none() {
            self.reference = Some(videos.iter().map(|v| self.model.segment(v)).collect::<Result<_>>()?);
        }
        let selections = e_step(&self.model, videos, &self.config, epoch, self.reference.as_deref())?;
        let loss = m_step(&mut self.model, &mut self.optimizer, videos, &selections, &self.config, epoch)?;

        let labels: Vec<&[usize]> = selections.iter().map(|s| &s.selected.labels.labels[..]).collect();
        if self.config.ranking.length_model.learnable {
            self.config
                .ranking
                .length_model
                .refit(&labels, self.model.num_actions())?;
        }
        if self.config.ranking.cross_video_in_cost {
            self.reference = Some(selections.iter().map(|s| s.selected.labels.clone()).collect());
        }

        let n = selections.len() as f64;
        let mean = |f: fn(&Candidate) -> f64| selections.iter().map(|s| f(&s.selected)).sum::<f64>() / n;
        let record = EpochRecord {
            epoch: epoch + 1,
            temperature: self.config.temperature(self.model.config().temperature, epoch),
            mean_total: mean(|c| c.total),
            mean_c1: mean(|c| c.c1),
            mean_c2: mean(|c| c.c2),
            mean_c3: mean(|c| c.c3),
            mean_cross: mean(|c| c.c_cross),
            loss,
            metric: None,
        };
        if record.mean_total < self.best_total - self.config.min_improvement {
            self.best_total = record.mean_total;
            self.stall = 0;
        } else {
            self.stall += 1;
        }
        self.epoch += 1;
        Ok(EpochReport { record, selections })
    }

    /// Runs epochs until the budget is spent or training converges. The
    /// hook sees the trainer after each epoch and may return an
    /// evaluation metric to store in the history.
    pub fn run(
        &mut self,
        videos: &[FeatureSequence],
        mut hook: impl FnMut(&Trainer, &EpochReport) -> Result<Option<f64>>,
    ) -> Result<&TrainHistory> {
        while !self.is_done() {
            let mut report = self.step_epoch(videos)?;
            report.record.metric = hook(self, &report)?;
            self.history.records.push(report.record);
        }
        Ok(&self.history)
    }
}

/// Trains `model` on `videos` without evaluation.
pub fn train(
    videos: &[FeatureSequence],
    model: ModelParams,
    config: TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.run(videos, |_, _| Ok(None))?;
    let history = trainer.history.clone();
    Ok((trainer.into_model(), history))
}
