//! Synthetic instructional-task videos.
//!
//! Every task owns `k` action clusters whose means are mutually orthogonal
//! and `separation * noise_std` apart. A video follows the task's
//! canonical action order (with random adjacent swaps), draws a length per
//! action and emits `mean + video_offset + noise` per frame.

use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::nn::RngState;
use crate::sequence::FeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthDist {
    Poisson { lambda: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl LengthDist {
    /// One segment length, at least 1 frame.
    pub fn sample(&self, rng: &mut RngState) -> usize {
        let v = match *self {
            LengthDist::Poisson { lambda } => Poisson::new(lambda).expect("validated").sample(rng),
            LengthDist::Gaussian { mean, std } => {
                Normal::new(mean, std).expect("validated").sample(rng).round()
            }
        };
        v.max(1.0) as usize
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LengthDist::Poisson { lambda } => lambda > 0.0 && lambda.is_finite(),
            LengthDist::Gaussian { mean, std } => mean > 0.0 && mean.is_finite() && std >= 0.0 && std.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid segment length distribution {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_tasks: usize,
    pub videos_per_task: usize,
    pub num_actions: usize,
    pub feature_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// `None` uses Poisson with `lambda = (min_frames + max_frames) / (2k)`.
    pub lengths: Option<LengthDist>,
    /// Distance between action means, in units of `noise_std`.
    pub separation: f64,
    pub noise_std: f64,
    /// Per-dimension std of the per-video appearance shift.
    pub video_offset_std: f64,
    /// Probability of swapping each adjacent pair of the canonical order.
    pub order_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_tasks: 1,
            videos_per_task: 20,
            num_actions: 4,
            feature_dim: 16,
            min_frames: 60,
            max_frames: 100,
            lengths: None,
            separation: 6.0,
            noise_std: 1.0,
            video_offset_std: 0.5,
            order_jitter: 0.1,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Parameter(m));
        if self.num_actions < 2 {
            return fail(format!("need k >= 2 actions, got k={}", self.num_actions));
        }
        if self.num_tasks == 0 || self.videos_per_task == 0 || self.feature_dim == 0 {
            return fail("num_tasks, videos_per_task and feature_dim must be positive".into());
        }
        if self.min_frames < self.num_actions {
            return fail(format!(
                "min_frames ({}) must be at least k ({}) so every action can appear",
                self.min_frames, self.num_actions
            ));
        }
        if self.max_frames < self.min_frames {
            return fail(format!(
                "max_frames ({}) is below min_frames ({})",
                self.max_frames, self.min_frames
            ));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return fail(format!("separation must be positive, got {}", self.separation));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std must be positive, got {}", self.noise_std));
        }
        if !(self.video_offset_std >= 0.0 && self.video_offset_std.is_finite()) {
            return fail(format!("video_offset_std must be nonnegative, got {}", self.video_offset_std));
        }
        if !(0.0..=1.0).contains(&self.order_jitter) {
            return fail(format!("order_jitter must lie in [0, 1], got {}", self.order_jitter));
        }
        self.length_dist().validate()
    }

    pub fn length_dist(&self) -> LengthDist {
        self.lengths.unwrap_or(LengthDist::Poisson {
            lambda: (self.min_frames + self.max_frames) as f64 / (2 * self.num_actions) as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    /// Videos with ground truth attached, grouped by task.
    pub videos: Vec<FeatureSequence>,
    /// Per task, the `k x D` action means.
    pub task_means: Vec<Vec<Vec<f64>>>,
    /// Per task, the canonical action order.
    pub task_orders: Vec<Vec<usize>>,
    /// Per video, its appearance offset.
    pub video_offsets: Vec<Vec<f64>>,
}

impl SynthDataset {
    /// Cluster means of one video (task means plus its offset).
    pub fn video_means(&self, video: usize) -> Vec<Vec<f64>> {
        let task = video / (self.videos.len() / self.task_means.len());
        self.task_means[task]
            .iter()
            .map(|m| m.iter().zip(&self.video_offsets[video]).map(|(a, b)| a + b).collect())
            .collect()
    }
}

/// `k` mutually orthogonal vectors of norm `radius` (random directions
/// when `k <= D`, otherwise random unit-norm directions).
fn cluster_means(k: usize, d: usize, radius: f64, rng: &mut RngState) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        if basis.len() < d {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * radius).collect())
        .collect()
}

fn draw_lengths(spec: &SynthSpec, rng: &mut RngState) -> Vec<usize> {
    let dist = spec.length_dist();
    let k = spec.num_actions;
    for _ in 0..1000 {
        let lengths: Vec<usize> = (0..k).map(|_| dist.sample(rng)).collect();
        let total: usize = lengths.iter().sum();
        if (spec.min_frames..=spec.max_frames).contains(&total) {
            return lengths;
        }
    }
    // The distribution rarely lands in range: rescale one draw to a random
    // in-range total, keeping every action at least one frame.
    let raw: Vec<f64> = (0..k).map(|_| dist.sample(rng) as f64).collect();
    let target = spec.min_frames + rng.below(spec.max_frames - spec.min_frames + 1);
    let sum: f64 = raw.iter().sum();
    let mut lengths: Vec<usize> = raw
        .iter()
        .map(|r| ((r / sum) * (target - k) as f64).floor() as usize + 1)
        .collect();
    let short = target - lengths.iter().sum::<usize>();
    for i in 0..short {
        lengths[i % k] += 1;
    }
    lengths
}

/// Generates the dataset described by `spec`; a pure function of `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let k = spec.num_actions;
    let d = spec.feature_dim;
    let radius = spec.separation * spec.noise_std / 2f64.sqrt();
    let mut task_means = Vec::with_capacity(spec.num_tasks);
    let mut task_orders = Vec::with_capacity(spec.num_tasks);
    let mut videos = Vec::new();
    let mut video_offsets = Vec::new();
    for task in 0..spec.num_tasks {
        let mut rng = RngState::derived(spec.seed, &[0, task as u64]);
        let means = cluster_means(k, d, radius, &mut rng);
        let mut canonical: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut canonical);
        let task_id = format!("task{task}");
        for v in 0..spec.videos_per_task {
            let mut rng = RngState::derived(spec.seed, &[1, task as u64, v as u64]);
            let mut order = canonical.clone();
            for i in 0..k - 1 {
                if rng.uniform() < spec.order_jitter {
                    order.swap(i, i + 1);
                }
            }
            let lengths = draw_lengths(spec, &mut rng);
            let offset: Vec<f64> = (0..d).map(|_| rng.normal() * spec.video_offset_std).collect();
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for (&action, &len) in order.iter().zip(&lengths) {
                for _ in 0..len {
                    rows.push(
                        (0..d)
                            .map(|j| means[action][j] + offset[j] + rng.normal() * spec.noise_std)
                            .collect(),
                    );
                    labels.push(action);
                }
            }
            let video = FeatureSequence::new(format!("t{task}_v{v:03}"), task_id.clone(), rows)?
                .with_labels(labels, k)?;
            videos.push(video);
            video_offsets.push(offset);
        }
        task_means.push(means);
        task_orders.push(canonical);
    }
    Ok(SynthDataset {
        videos,
        task_means,
        task_orders,
        video_offsets,
    })
}
