//! Cross-video matching term.
//!
//! Segments are maximal runs of one label. A segment's embedding is the mean
//! of its frame features, optionally passed through the model's learned
//! `D x D` projection. A valid triple is an anchor segment, a positive with
//! the same action from a different video of the same task, and a negative
//! with a different action from any video of that task.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{ParamArray, RngState};
use crate::sequence::{runs, ActionSequence, FeatureSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEmbedding {
    pub video_id: String,
    pub action: usize,
    pub vector: Vec<f64>,
    /// `[start, end)` frame span.
    pub span: (usize, usize),
}

pub fn pool_segments(video: &FeatureSequence, labels: &ActionSequence) -> Result<Vec<SegmentEmbedding>> {
    if labels.len() != video.len() {
        return Err(Error::Input(format!(
            "video {} has {} frames but {} labels",
            video.video_id(),
            video.len(),
            labels.len()
        )));
    }
    let d = video.dim();
    Ok(runs(&labels.labels)
        .into_iter()
        .map(|(action, start, end)| {
            let mut vector = vec![0.0; d];
            for f in &video.features()[start..end] {
                for (v, x) in vector.iter_mut().zip(f) {
                    *v += x;
                }
            }
            let n = (end - start) as f64;
            vector.iter_mut().for_each(|v| *v /= n);
            SegmentEmbedding {
                video_id: video.video_id().to_string(),
                action,
                vector,
                span: (start, end),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchingKind {
    /// `max(0, d(a,p) - d(a,n) + m)`
    Triplet,
    /// `d(a,p) + max(0, m - d(a,n))`
    Contrastive,
}

impl fmt::Display for MatchingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchingKind::Triplet => "triplet",
            MatchingKind::Contrastive => "contrastive",
        })
    }
}

impl FromStr for MatchingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(MatchingKind::Triplet),
            "contrastive" => Ok(MatchingKind::Contrastive),
            other => Err(Error::Parameter(format!("unknown matching kind '{other}'"))),
        }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Matching value and its gradient w.r.t. the three embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingGrad {
    pub value: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

pub fn matching_cost_grad(a: &[f64], p: &[f64], n: &[f64], kind: MatchingKind, margin: f64) -> MatchingGrad {
    let d_ap = squared_distance(a, p);
    let d_an = squared_distance(a, n);
    let dim = a.len();
    let mut out = MatchingGrad {
        value: 0.0,
        anchor: vec![0.0; dim],
        positive: vec![0.0; dim],
        negative: vec![0.0; dim],
    };
    // d(a,p) contributes with coefficient cp, d(a,n) with cn.
    let (value, cp, cn) = match kind {
        MatchingKind::Triplet => {
            let h = d_ap - d_an + margin;
            if h > 0.0 {
                (h, 1.0, -1.0)
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        MatchingKind::Contrastive => {
            let h = margin - d_an;
            if h > 0.0 {
                (d_ap + h, 1.0, -1.0)
            } else {
                (d_ap, 1.0, 0.0)
            }
        }
    };
    out.value = value;
    for i in 0..dim {
        let gp = 2.0 * cp * (a[i] - p[i]);
        let gn = 2.0 * cn * (a[i] - n[i]);
        out.anchor[i] = gp + gn;
        out.positive[i] = -gp;
        out.negative[i] = -gn;
    }
    out
}

pub fn matching_cost(
    anchor: &SegmentEmbedding,
    positive: &SegmentEmbedding,
    negative: &SegmentEmbedding,
    kind: MatchingKind,
    margin: f64,
) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::Parameter(format!("margin must be positive, got {margin}")));
    }
    if positive.action != anchor.action {
        return Err(Error::Pairing(format!(
            "positive has action {} but anchor has {}",
            positive.action, anchor.action
        )));
    }
    if positive.video_id == anchor.video_id {
        return Err(Error::Pairing(format!(
            "positive must come from a different video than {}",
            anchor.video_id
        )));
    }
    if negative.action == anchor.action {
        return Err(Error::Pairing(format!(
            "negative shares the anchor's action {}",
            anchor.action
        )));
    }
    let dims = [anchor.vector.len(), positive.vector.len(), negative.vector.len()];
    if dims[1] != dims[0] || dims[2] != dims[0] {
        return Err(Error::dim("segment embedding", dims[0], dims[1].max(dims[2])));
    }
    Ok(matching_cost_grad(&anchor.vector, &positive.vector, &negative.vector, kind, margin).value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossVideoConfig {
    pub kind: MatchingKind,
    pub margin: f64,
    /// Triples sampled per evaluation; `None` enumerates all valid triples.
    pub samples: Option<usize>,
}

impl Default for CrossVideoConfig {
    fn default() -> Self {
        Self {
            kind: MatchingKind::Triplet,
            margin: 1.0,
            samples: Some(32),
        }
    }
}

/// Indices into a [`SegmentPool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone)]
struct PooledSegment {
    seg: SegmentEmbedding,
    task: String,
    video: usize,
}

/// Segments of several labeled videos, in canonical `(task, video_id)` order
/// so results do not depend on the order the videos were supplied in.
#[derive(Debug, Clone)]
pub struct SegmentPool {
    segments: Vec<PooledSegment>,
}

impl SegmentPool {
    pub fn new(entries: &[(&FeatureSequence, &ActionSequence)]) -> Result<Self> {
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by(|&a, &b| {
            let (va, vb) = (entries[a].0, entries[b].0);
            (va.task_id(), va.video_id()).cmp(&(vb.task_id(), vb.video_id()))
        });
        let mut segments = Vec::new();
        for (rank, &i) in order.iter().enumerate() {
            let (video, labels) = entries[i];
            for seg in pool_segments(video, labels)? {
                segments.push(PooledSegment {
                    seg,
                    task: video.task_id().to_string(),
                    video: rank,
                });
            }
        }
        Ok(Self { segments })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment(&self, i: usize) -> &SegmentEmbedding {
        &self.segments[i].seg
    }

    fn positives(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        let anchor = &self.segments[a];
        self.segments.iter().enumerate().filter_map(move |(i, s)| {
            (s.task == anchor.task && s.video != anchor.video && s.seg.action == anchor.seg.action)
                .then_some(i)
        })
    }

    fn negatives(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        let anchor = &self.segments[a];
        self.segments.iter().enumerate().filter_map(move |(i, s)| {
            (s.task == anchor.task && s.seg.action != anchor.seg.action).then_some(i)
        })
    }

    /// Every valid triple whose anchor passes `anchor_filter`.
    pub fn all_triples(&self, anchor_filter: impl Fn(&SegmentEmbedding) -> bool) -> Vec<Triple> {
        let mut out = Vec::new();
        for a in 0..self.len() {
            if !anchor_filter(&self.segments[a].seg) {
                continue;
            }
            let negatives: Vec<usize> = self.negatives(a).collect();
            for p in self.positives(a) {
                for &n in &negatives {
                    out.push(Triple {
                        anchor: a,
                        positive: p,
                        negative: n,
                    });
                }
            }
        }
        out
    }

    /// Draws `count` triples with replacement: an anchor uniformly among
    /// anchors that have at least one positive and one negative, then a
    /// positive and a negative uniformly for that anchor.
    pub fn sample_triples(
        &self,
        count: usize,
        rng: &mut RngState,
        anchor_filter: impl Fn(&SegmentEmbedding) -> bool,
    ) -> Vec<Triple> {
        let candidates: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..self.len())
            .filter(|&a| anchor_filter(&self.segments[a].seg))
            .filter_map(|a| {
                let p: Vec<usize> = self.positives(a).collect();
                let n: Vec<usize> = self.negatives(a).collect();
                (!p.is_empty() && !n.is_empty()).then_some((a, p, n))
            })
            .collect();
        if candidates.is_empty() {
            return Vec::new();
        }
        (0..count)
            .map(|_| {
                let (a, p, n) = &candidates[rng.below(candidates.len())];
                Triple {
                    anchor: *a,
                    positive: p[rng.below(p.len())],
                    negative: n[rng.below(n.len())],
                }
            })
            .collect()
    }

    pub fn triples(
        &self,
        config: &CrossVideoConfig,
        rng: &mut RngState,
        anchor_filter: impl Fn(&SegmentEmbedding) -> bool,
    ) -> Vec<Triple> {
        match config.samples {
            Some(n) => self.sample_triples(n, rng, anchor_filter),
            None => self.all_triples(anchor_filter),
        }
    }

    fn embed(&self, i: usize, projection: Option<&ParamArray>) -> Vec<f64> {
        let m = &self.segments[i].seg.vector;
        match projection {
            None => m.clone(),
            Some(p) => {
                let cols = p.shape()[1];
                let w = p.values();
                let mut e = vec![0.0; cols];
                for (r, &mr) in m.iter().enumerate() {
                    for (ej, &wj) in e.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                        *ej += mr * wj;
                    }
                }
                e
            }
        }
    }

    /// Mean matching cost over `triples`. When `projection` is given, its
    /// gradient is accumulated into the projection's grad buffer (scaled by
    /// `grad_scale`).
    pub fn evaluate(
        &self,
        triples: &[Triple],
        config: &CrossVideoConfig,
        mut projection: Option<&mut ParamArray>,
        grad_scale: f64,
    ) -> Result<f64> {
        if !(config.margin > 0.0) {
            return Err(Error::Parameter(format!("margin must be positive, got {}", config.margin)));
        }
        if triples.is_empty() {
            return Ok(0.0);
        }
        let n = triples.len() as f64;
        let mut total = 0.0;
        for tr in triples {
            let proj = projection.as_deref();
            let a = self.embed(tr.anchor, proj);
            let p = self.embed(tr.positive, proj);
            let ng = self.embed(tr.negative, proj);
            let g = matching_cost_grad(&a, &p, &ng, config.kind, config.margin);
            total += g.value;
            if let Some(proj) = projection.as_deref_mut() {
                let cols = proj.shape()[1];
                let grad = proj.grad_mut();
                for (idx, ge) in [(tr.anchor, &g.anchor), (tr.positive, &g.positive), (tr.negative, &g.negative)] {
                    let m = &self.segments[idx].seg.vector;
                    for (r, &mr) in m.iter().enumerate() {
                        for (gw, &gj) in grad[r * cols..(r + 1) * cols].iter_mut().zip(ge.iter()) {
                            *gw += grad_scale * mr * gj / n;
                        }
                    }
                }
            }
        }
        Ok(total / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossVideoTerm {
    pub value: f64,
    pub triples: usize,
    /// Set when no valid triple exists (e.g. a single video); `value` is 0.
    pub degenerate: bool,
}

/// Mean matching cost over valid triples drawn from the labeled videos.
pub fn cross_video_term(
    entries: &[(&FeatureSequence, &ActionSequence)],
    config: &CrossVideoConfig,
    projection: Option<&ParamArray>,
    rng: &mut RngState,
) -> Result<CrossVideoTerm> {
    let pool = SegmentPool::new(entries)?;
    let triples = pool.triples(config, rng, |_| true);
    if triples.is_empty() {
        return Ok(CrossVideoTerm {
            value: 0.0,
            triples: 0,
            degenerate: true,
        });
    }
    let mut proj = projection.cloned();
    let value = pool.evaluate(&triples, config, proj.as_mut(), 0.0)?;
    Ok(CrossVideoTerm {
        value,
        triples: triples.len(),
        degenerate: false,
    })
}
