//! Self-labeling cost of a candidate labeling.
//!
//! `C(S) = g1 * C1 + g2 * C2 + g3 * C3 (+ g_cv * C_cross)` where
//!
//! * `C1 = |O| - #{a : a appears in S}` (occurrence),
//! * `C2 = sum_a (1 - p(L(a, S)))` (length; `L` is the total frame count of
//!   `a`, absent actions have `L = 0`),
//! * `C3 = sum_t (1 - p(a_t | f_t))` (frame probability from the classifier).
//!
//! Defaults are `g1 = 1/|O|` and `g2 = g3 = g_cv = 1/T`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sequence::ActionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthKind {
    /// `sum_a |L(a) - T/|O|| / T`
    MeanDeviation,
    /// Raw Poisson pmf `p(L) = λ^L e^{-λ} / L!`.
    Poisson,
    /// Max-normalized Gaussian `p(L) = exp(-(L - μ)^2 / (2 σ^2))`.
    Gaussian,
}

impl fmt::Display for LengthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LengthKind::MeanDeviation => "mean-deviation",
            LengthKind::Poisson => "poisson",
            LengthKind::Gaussian => "gaussian",
        })
    }
}

impl FromStr for LengthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-deviation" | "mean" => Ok(LengthKind::MeanDeviation),
            "poisson" => Ok(LengthKind::Poisson),
            "gaussian" => Ok(LengthKind::Gaussian),
            other => Err(Error::Parameter(format!("unknown length model '{other}'"))),
        }
    }
}

/// Expected length of one action. Poisson uses `mean` as λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionLength {
    pub mean: f64,
    pub std: f64,
}

/// Smallest standard deviation a refit may produce.
pub const MIN_LENGTH_STD: f64 = 1.0;
/// Smallest mean a refit may produce.
pub const MIN_LENGTH_MEAN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LengthModel {
    pub kind: LengthKind,
    pub learnable: bool,
    /// `None` derives `mean = T/|O|`, `std = T/(2|O|)` from each sequence.
    per_action: Option<Vec<ActionLength>>,
}

impl LengthModel {
    pub fn relative(kind: LengthKind, learnable: bool) -> Self {
        Self {
            kind,
            learnable,
            per_action: None,
        }
    }

    pub fn fixed(kind: LengthKind, per_action: Vec<ActionLength>) -> Result<Self> {
        for (a, p) in per_action.iter().enumerate() {
            if !(p.mean > 0.0 && p.std > 0.0 && p.mean.is_finite() && p.std.is_finite()) {
                return Err(Error::Parameter(format!(
                    "length parameters for action {a} must be positive (mean {}, std {})",
                    p.mean, p.std
                )));
            }
        }
        Ok(Self {
            kind,
            learnable: false,
            per_action: Some(per_action),
        })
    }

    pub fn per_action(&self) -> Option<&[ActionLength]> {
        self.per_action.as_deref()
    }

    pub fn params_for(&self, t: usize, num_actions: usize) -> Result<Vec<ActionLength>> {
        match &self.per_action {
            Some(p) if p.len() == num_actions => Ok(p.clone()),
            Some(p) => Err(Error::dim("length model actions", num_actions, p.len())),
            None => {
                let mean = t as f64 / num_actions as f64;
                Ok(vec![
                    ActionLength {
                        mean,
                        std: mean / 2.0,
                    };
                    num_actions
                ])
            }
        }
    }

    /// Replaces the parameters with the empirical mean and deviation of
    /// per-action frame counts over `labelings` (floored at
    /// [`MIN_LENGTH_MEAN`] and [`MIN_LENGTH_STD`]).
    pub fn refit(&mut self, labelings: &[&[usize]], num_actions: usize) -> Result<()> {
        if labelings.is_empty() {
            return Err(Error::Input("cannot refit lengths from zero sequences".into()));
        }
        let n = labelings.len() as f64;
        let counts: Vec<Vec<usize>> = labelings
            .iter()
            .map(|l| action_counts(l, num_actions))
            .collect::<Result<_>>()?;
        let per_action = (0..num_actions)
            .map(|a| {
                let mean = counts.iter().map(|c| c[a] as f64).sum::<f64>() / n;
                let var = counts
                    .iter()
                    .map(|c| (c[a] as f64 - mean).powi(2))
                    .sum::<f64>()
                    / n;
                ActionLength {
                    mean: mean.max(MIN_LENGTH_MEAN),
                    std: var.sqrt().max(MIN_LENGTH_STD),
                }
            })
            .collect();
        self.per_action = Some(per_action);
        Ok(())
    }
}

fn action_counts(labels: &[usize], num_actions: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; num_actions];
    for (row, &a) in labels.iter().enumerate() {
        if a >= num_actions {
            return Err(Error::Label {
                row,
                label: a,
                classes: num_actions,
            });
        }
        counts[a] += 1;
    }
    Ok(counts)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn poisson_pmf(k: usize, lambda: f64) -> f64 {
    (k as f64 * lambda.ln() - lambda - ln_factorial(k)).exp()
}

/// C1: number of actions in `[0, num_actions)` that never appear.
pub fn cost_occurrence(labels: &[usize], num_actions: usize) -> Result<f64> {
    let counts = action_counts(labels, num_actions)?;
    Ok(counts.iter().filter(|&&c| c == 0).count() as f64)
}

/// C2 under `model`.
pub fn cost_length(labels: &[usize], num_actions: usize, model: &LengthModel) -> Result<f64> {
    if num_actions == 0 {
        return Err(Error::Parameter("num_actions must be positive".into()));
    }
    let t = labels.len();
    if t == 0 {
        return Err(Error::Input("empty labeling".into()));
    }
    let counts = action_counts(labels, num_actions)?;
    let params = model.params_for(t, num_actions)?;
    let mut cost = 0.0;
    for (a, (&l, p)) in counts.iter().zip(&params).enumerate() {
        let l = l as f64;
        cost += match model.kind {
            LengthKind::MeanDeviation => (l - t as f64 / num_actions as f64).abs() / t as f64,
            LengthKind::Poisson => {
                if !(p.mean > 0.0) {
                    return Err(Error::Parameter(format!("poisson λ for action {a} is {}", p.mean)));
                }
                1.0 - poisson_pmf(l as usize, p.mean)
            }
            LengthKind::Gaussian => {
                if !(p.mean > 0.0 && p.std > 0.0) {
                    return Err(Error::Parameter(format!(
                        "gaussian parameters for action {a} are ({}, {})",
                        p.mean, p.std
                    )));
                }
                1.0 - (-(l - p.mean).powi(2) / (2.0 * p.std * p.std)).exp()
            }
        };
    }
    Ok(cost)
}

/// C3: `sum_t (1 - p(a_t | f_t))`.
pub fn cost_probability(labels: &[usize], frame_probs: &[Vec<f64>]) -> Result<f64> {
    if labels.len() != frame_probs.len() {
        return Err(Error::Input(format!(
            "labeling has {} frames but probability matrix has {} rows",
            labels.len(),
            frame_probs.len()
        )));
    }
    let mut cost = 0.0;
    for (row, (&a, p)) in labels.iter().zip(frame_probs).enumerate() {
        let pa = *p.get(a).ok_or(Error::Label {
            row,
            label: a,
            classes: p.len(),
        })?;
        cost += 1.0 - pa;
    }
    Ok(cost)
}

/// Term weights; `None` selects the default for that term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gammas {
    pub occurrence: Option<f64>,
    pub length: Option<f64>,
    pub probability: Option<f64>,
    pub cross: Option<f64>,
}

impl Gammas {
    /// Resolved `[g1, g2, g3, g_cv]` for a sequence of `t` frames.
    pub fn resolve(&self, t: usize, num_actions: usize) -> [f64; 4] {
        let per_frame = 1.0 / t as f64;
        [
            self.occurrence.unwrap_or(1.0 / num_actions as f64),
            self.length.unwrap_or(per_frame),
            self.probability.unwrap_or(per_frame),
            self.cross.unwrap_or(per_frame),
        ]
    }
}

/// How the self-label is chosen among the K candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    MinCost,
    /// Uniform choice, ignoring cost (ablation).
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingConfig {
    pub gammas: Gammas,
    pub candidates: usize,
    pub length_model: LengthModel,
    pub cross_video_in_cost: bool,
    pub selection: Selection,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            gammas: Gammas::default(),
            candidates: 64,
            length_model: LengthModel::relative(LengthKind::Gaussian, false),
            cross_video_in_cost: false,
            selection: Selection::MinCost,
        }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::Parameter("candidate count K must be at least 1".into()));
        }
        let g = [
            self.gammas.occurrence,
            self.gammas.length,
            self.gammas.probability,
            self.gammas.cross,
        ];
        if g.iter().flatten().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Parameter("cost weights must be finite and nonnegative".into()));
        }
        let w = self.gammas.resolve(1, 1);
        let active = w[..3].iter().any(|v| *v > 0.0) || (self.cross_video_in_cost && w[3] > 0.0);
        if !active {
            return Err(Error::Parameter("at least one cost weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Position among the K samples for its video.
    pub index: usize,
    pub labels: ActionSequence,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c_cross: f64,
    /// `[g1, g2, g3, g_cv]` used for `total` (`g_cv = 0` when cross-video is off).
    pub weights: [f64; 4],
    pub total: f64,
}

impl Candidate {
    pub fn recompute_total(&self) -> f64 {
        weighted_total([self.c1, self.c2, self.c3, self.c_cross], self.weights)
    }
}

pub fn weighted_total(parts: [f64; 4], weights: [f64; 4]) -> f64 {
    parts.iter().zip(&weights).map(|(p, w)| p * w).sum()
}

/// Scores one labeling. `c_cross` is the cross-video matching value for this
/// candidate, counted only when `config.cross_video_in_cost` is set.
pub fn total_cost(
    index: usize,
    labels: ActionSequence,
    frame_probs: &[Vec<f64>],
    config: &RankingConfig,
    num_actions: usize,
    c_cross: Option<f64>,
) -> Result<Candidate> {
    let t = labels.len();
    if t == 0 {
        return Err(Error::Input(format!("empty labeling for {}", labels.video_id)));
    }
    let c1 = cost_occurrence(&labels.labels, num_actions)?;
    let c2 = cost_length(&labels.labels, num_actions, &config.length_model)?;
    let c3 = cost_probability(&labels.labels, frame_probs)?;
    let mut weights = config.gammas.resolve(t, num_actions);
    let c_cross = match (config.cross_video_in_cost, c_cross) {
        (true, Some(v)) => v,
        _ => {
            weights[3] = 0.0;
            0.0
        }
    };
    let total = weighted_total([c1, c2, c3, c_cross], weights);
    Ok(Candidate {
        index,
        labels,
        c1,
        c2,
        c3,
        c_cross,
        weights,
        total,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub best: Candidate,
    /// Ascending by total, ties by candidate index.
    pub ranked: Vec<Candidate>,
}

pub fn select_best(mut candidates: Vec<Candidate>) -> Result<Ranked> {
    if candidates.is_empty() {
        return Err(Error::Input("no candidates to rank".into()));
    }
    candidates.sort_by(|a, b| a.total.total_cmp(&b.total).then(a.index.cmp(&b.index)));
    Ok(Ranked {
        best: candidates[0].clone(),
        ranked: candidates,
    })
}
