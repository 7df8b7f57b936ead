//! Hungarian-matched segmentation metrics.
//!
//! Predicted symbols are mapped one-to-one onto ground-truth classes by
//! maximizing frame co-occurrence (Hungarian algorithm on the negated
//! confusion matrix), pooled over all videos of a task. Symbols left
//! without a class map to the sentinel `None` and are never credited.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sequence::{runs, ActionSequence, FeatureSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row.
    pub row_to_col: Vec<usize>,
    pub cost: f64,
}

/// Shortest-augmenting-path Hungarian method with row/column potentials,
/// O(n^3). Returns one optimal permutation (not necessarily the
/// lexicographically smallest).
fn solve(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

fn assignment_cost(cost: &[Vec<f64>], row_to_col: &[usize]) -> f64 {
    row_to_col.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

fn optimal_cost(cost: &[Vec<f64>]) -> f64 {
    assignment_cost(cost, &solve(cost))
}

/// Minimum-cost perfect assignment on a square matrix.
///
/// Among optimal assignments the lexicographically smallest `row_to_col`
/// is returned: rows are fixed in order to the smallest column that still
/// admits an optimal completion.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(Error::dim(format!("cost matrix row {i}"), n, row.len()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("cost matrix row {i} has a non-finite entry")));
        }
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            cost: 0.0,
        });
    }
    let best = optimal_cost(cost);
    let scale: f64 = cost.iter().flatten().map(|v| v.abs()).fold(1.0, f64::max);
    let tol = 1e-9 * scale * n as f64;

    let mut row_to_col = Vec::with_capacity(n);
    let mut free: Vec<usize> = (0..n).collect();
    let mut fixed = 0.0;
    for i in 0..n {
        let mut chosen = None;
        for (k, &j) in free.iter().enumerate() {
            let rest: Vec<usize> = free.iter().copied().filter(|&c| c != j).collect();
            let sub: Vec<Vec<f64>> = cost[i + 1..]
                .iter()
                .map(|row| rest.iter().map(|&c| row[c]).collect())
                .collect();
            let remainder = if sub.is_empty() { 0.0 } else { optimal_cost(&sub) };
            if fixed + cost[i][j] + remainder <= best + tol {
                chosen = Some(k);
                break;
            }
        }
        let k = chosen.ok_or_else(|| Error::Numeric("no optimal completion found".into()))?;
        let j = free.remove(k);
        fixed += cost[i][j];
        row_to_col.push(j);
    }
    let cost_value = assignment_cost(cost, &row_to_col);
    Ok(Assignment {
        row_to_col,
        cost: cost_value,
    })
}

/// Rectangular assignment. The matrix is padded to square with a constant
/// one greater than its largest entry; rows matched to padding get `None`.
pub fn hungarian_rect(cost: &[Vec<f64>], cols: usize) -> Result<Vec<Option<usize>>> {
    let rows = cost.len();
    for (i, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::dim(format!("cost matrix row {i}"), cols, row.len()));
        }
    }
    let n = rows.max(cols);
    let pad = cost
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
        + 1.0;
    let square: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i < rows && j < cols { cost[i][j] } else { pad })
                .collect()
        })
        .collect();
    let a = hungarian(&square)?;
    Ok(a.row_to_col[..rows]
        .iter()
        .map(|&j| (j < cols).then_some(j))
        .collect())
}

/// Predicted symbol -> ground-truth class (`None` is the sentinel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    pub map: Vec<Option<usize>>,
    pub num_classes: usize,
}

impl LabelMapping {
    pub fn apply(&self, pred: &[usize]) -> Vec<Option<usize>> {
        pred.iter()
            .map(|&p| self.map.get(p).copied().flatten())
            .collect()
    }
}

/// Hungarian mapping from the confusion counts of several
/// `(prediction, ground truth)` pairs pooled together.
pub fn map_labels_pooled(
    pairs: &[(&[usize], &[usize])],
    num_symbols: usize,
    num_classes: usize,
) -> Result<LabelMapping> {
    let mut confusion = vec![vec![0.0; num_classes]; num_symbols];
    for (pred, gt) in pairs {
        if pred.len() != gt.len() {
            return Err(Error::Input(format!(
                "prediction has {} frames but ground truth has {}",
                pred.len(),
                gt.len()
            )));
        }
        for (row, (&p, &g)) in pred.iter().zip(gt.iter()).enumerate() {
            if p >= num_symbols {
                return Err(Error::Label { row, label: p, classes: num_symbols });
            }
            if g >= num_classes {
                return Err(Error::Label { row, label: g, classes: num_classes });
            }
            confusion[p][g] -= 1.0;
        }
    }
    Ok(LabelMapping {
        map: hungarian_rect(&confusion, num_classes)?,
        num_classes,
    })
}

pub fn map_labels(pred: &[usize], gt: &[usize], num_symbols: usize, num_classes: usize) -> Result<LabelMapping> {
    map_labels_pooled(&[(pred, gt)], num_symbols, num_classes)
}

/// Additive counts from which every metric is derived, so per-video counts
/// can be summed into per-task figures.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetricCounts {
    pub frames: usize,
    pub correct: usize,
    pub intersection: Vec<usize>,
    pub union: Vec<usize>,
    pub true_positives: usize,
    pub pred_segments: usize,
    pub gt_segments: usize,
}

impl MetricCounts {
    pub fn merge(&mut self, other: &MetricCounts) {
        self.frames += other.frames;
        self.correct += other.correct;
        let n = self.intersection.len().max(other.intersection.len());
        self.intersection.resize(n, 0);
        self.union.resize(n, 0);
        for c in 0..other.intersection.len() {
            self.intersection[c] += other.intersection[c];
            self.union[c] += other.union[c];
        }
        self.true_positives += other.true_positives;
        self.pred_segments += other.pred_segments;
        self.gt_segments += other.gt_segments;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub intersection: usize,
    pub union: usize,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mof: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub per_class: Vec<ClassMetrics>,
    pub mapping: LabelMapping,
    pub counts: MetricCounts,
}

impl MetricsReport {
    pub fn from_counts(counts: MetricCounts, mapping: LabelMapping) -> Self {
        let mof = if counts.frames == 0 {
            0.0
        } else {
            counts.correct as f64 / counts.frames as f64
        };
        let per_class: Vec<ClassMetrics> = (0..counts.union.len())
            .filter(|&c| counts.union[c] > 0)
            .map(|c| ClassMetrics {
                class: c,
                intersection: counts.intersection[c],
                union: counts.union[c],
                jaccard: counts.intersection[c] as f64 / counts.union[c] as f64,
            })
            .collect();
        let jaccard = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(|c| c.jaccard).sum::<f64>() / per_class.len() as f64
        };
        let denom = counts.pred_segments + counts.gt_segments;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * counts.true_positives as f64 / denom as f64
        };
        Self {
            mof,
            f1,
            jaccard,
            per_class,
            mapping,
            counts,
        }
    }
}

/// Segment IoU threshold for an F1 true positive.
pub const F1_IOU_THRESHOLD: f64 = 0.5;

pub fn count_metrics(pred: &[usize], gt: &[usize], mapping: &LabelMapping) -> Result<MetricCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Input(format!(
            "prediction has {} frames but ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    let k = mapping.num_classes;
    if let Some((row, &g)) = gt.iter().enumerate().find(|(_, &g)| g >= k) {
        return Err(Error::Label { row, label: g, classes: k });
    }
    let mapped = mapping.apply(pred);
    let mut counts = MetricCounts {
        frames: gt.len(),
        intersection: vec![0; k],
        union: vec![0; k],
        ..MetricCounts::default()
    };
    for (&m, &g) in mapped.iter().zip(gt) {
        if m == Some(g) {
            counts.correct += 1;
            counts.intersection[g] += 1;
            counts.union[g] += 1;
        } else {
            counts.union[g] += 1;
            if let Some(c) = m {
                counts.union[c] += 1;
            }
        }
    }

    // Sentinel frames use `k` as their segment symbol and never match.
    let symbols: Vec<usize> = mapped.iter().map(|m| m.unwrap_or(k)).collect();
    let pred_runs = runs(&symbols);
    let gt_runs = runs(gt);
    let mut matched = vec![false; gt_runs.len()];
    for &(sym, ps, pe) in &pred_runs {
        if sym == k {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (gi, &(g, gs, ge)) in gt_runs.iter().enumerate() {
            if g != sym || matched[gi] {
                continue;
            }
            let inter = pe.min(ge).saturating_sub(ps.max(gs));
            if inter == 0 {
                continue;
            }
            let union = pe.max(ge) - ps.min(gs);
            let iou = inter as f64 / union as f64;
            if iou > F1_IOU_THRESHOLD && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            matched[gi] = true;
            counts.true_positives += 1;
        }
    }
    counts.pred_segments = pred_runs.len();
    counts.gt_segments = gt_runs.len();
    Ok(counts)
}

pub fn compute_metrics(pred: &[usize], gt: &[usize], mapping: &LabelMapping) -> Result<MetricsReport> {
    Ok(MetricsReport::from_counts(count_metrics(pred, gt, mapping)?, mapping.clone()))
}

/// One labeled prediction for dataset-level evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub video_id: &'a str,
    pub task_id: &'a str,
    pub pred: &'a [usize],
    pub gt: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    /// Per task, in task-id order; mapping pooled over the task's videos.
    pub tasks: Vec<(String, MetricsReport)>,
    pub mean_mof: f64,
    pub mean_f1: f64,
    pub mean_jaccard: f64,
}

/// Evaluates predictions with one Hungarian mapping per task.
///
/// `num_symbols` is the predicted alphabet size; the class count of each
/// task is one more than its largest ground-truth label.
pub fn evaluate_dataset(items: &[EvalItem<'_>], num_symbols: usize) -> Result<DatasetReport> {
    if items.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let mut by_task: BTreeMap<&str, Vec<&EvalItem<'_>>> = BTreeMap::new();
    for item in items {
        by_task.entry(item.task_id).or_default().push(item);
    }
    let mut tasks = Vec::new();
    for (task, group) in by_task {
        let num_classes = group
            .iter()
            .flat_map(|i| i.gt.iter())
            .max()
            .map_or(1, |m| m + 1);
        let pairs: Vec<(&[usize], &[usize])> = group.iter().map(|i| (i.pred, i.gt)).collect();
        let mapping = map_labels_pooled(&pairs, num_symbols, num_classes)?;
        let mut counts = MetricCounts::default();
        for item in &group {
            let c = count_metrics(item.pred, item.gt, &mapping).map_err(|e| {
                Error::Input(format!("video {}: {e}", item.video_id))
            })?;
            counts.merge(&c);
        }
        tasks.push((task.to_string(), MetricsReport::from_counts(counts, mapping)));
    }
    let n = tasks.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| tasks.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    Ok(DatasetReport {
        mean_mof: mean(|r| r.mof),
        mean_f1: mean(|r| r.f1),
        mean_jaccard: mean(|r| r.jaccard),
        tasks,
    })
}

/// Evaluates `preds` against the ground truth carried by `videos`;
/// `None` when any video lacks labels.
pub fn evaluate_videos(
    videos: &[FeatureSequence],
    preds: &[ActionSequence],
    num_symbols: usize,
) -> Result<Option<DatasetReport>> {
    if videos.len() != preds.len() {
        return Err(Error::Length {
            expected: videos.len(),
            actual: preds.len(),
        });
    }
    let mut items = Vec::with_capacity(videos.len());
    for (v, p) in videos.iter().zip(preds) {
        let Some(gt) = v.gt_labels() else {
            return Ok(None);
        };
        items.push(EvalItem {
            video_id: v.video_id(),
            task_id: v.task_id(),
            pred: &p.labels,
            gt,
        });
    }
    evaluate_dataset(&items, num_symbols).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngState;
    use proptest::prelude::*;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[row][j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
        best
    }

    #[test]
    fn identity_favoring() {
        let a = hungarian(&[vec![0.0, 9.0], vec![9.0, 0.0]]).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn three_by_three() {
        let m = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&m).unwrap();
        assert_eq!(a.cost, 5.0);
        assert_eq!(a.row_to_col, vec![1, 0, 2]);
        assert_eq!(brute_force(&m), 5.0);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let a = hungarian(&[vec![1.0; 3], vec![1.0; 3], vec![1.0; 3]]).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1, 2]);
        let a = hungarian(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(hungarian(&[vec![f64::NAN]]).is_err());
        assert!(hungarian(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn random_matrices_match_brute_force() {
        let mut rng = RngState::new(17);
        for _ in 0..200 {
            let n = 1 + rng.below(7);
            let m: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.below(6) as f64).collect())
                .collect();
            assert_eq!(hungarian(&m).unwrap().cost, brute_force(&m));
        }
    }

    #[test]
    fn identity_mapping_for_equal_labels() {
        let gt = vec![0, 0, 1, 2, 2, 1];
        let m = map_labels(&gt, &gt, 3, 3).unwrap();
        assert_eq!(m.map, vec![Some(0), Some(1), Some(2)]);
        let r = compute_metrics(&gt, &gt, &m).unwrap();
        assert_eq!((r.mof, r.f1, r.jaccard), (1.0, 1.0, 1.0));
    }

    #[test]
    fn renamed_symbols_are_absorbed() {
        let gt = vec![0, 0, 1, 1, 2, 2, 3];
        let perm = [2, 0, 3, 1];
        let pred: Vec<usize> = gt.iter().map(|&g| perm[g]).collect();
        let m = map_labels(&pred, &gt, 4, 4).unwrap();
        for (g, &p) in perm.iter().enumerate() {
            assert_eq!(m.map[p], Some(g));
        }
        assert_eq!(compute_metrics(&pred, &gt, &m).unwrap().mof, 1.0);
    }

    #[test]
    fn extra_symbols_map_to_sentinel() {
        let gt = vec![0, 0, 1, 1];
        let pred = vec![0, 2, 1, 3];
        let m = map_labels(&pred, &gt, 4, 2).unwrap();
        assert_eq!(m.map.iter().filter(|x| x.is_none()).count(), 2);
        let r = compute_metrics(&pred, &gt, &m).unwrap();
        assert_eq!(r.mof, 0.5);
    }

    #[test]
    fn constant_prediction_gets_majority_share() {
        let gt: Vec<usize> = (0..100).map(|t| t / 25).collect();
        let pred = vec![0; 100];
        let m = map_labels(&pred, &gt, 1, 4).unwrap();
        assert_eq!(compute_metrics(&pred, &gt, &m).unwrap().mof, 0.25);
    }

    #[test]
    fn hand_enumerated_frame_sets() {
        let gt = vec![0, 0, 1, 1];
        let pred = vec![0, 1, 1, 1];
        let m = LabelMapping {
            map: vec![Some(0), Some(1)],
            num_classes: 2,
        };
        let r = compute_metrics(&pred, &gt, &m).unwrap();
        assert_eq!(r.mof, 0.75);
        assert!((r.jaccard - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        // pred segments [0,1) IoU 1/2 (not > 0.5), [1,4) IoU 2/3 -> 1 TP of 2 and 2
        assert!((r.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pooled_evaluation_per_task() {
        let a_gt = vec![0, 0, 1, 1];
        let a_pred = vec![1, 1, 0, 0];
        let b_gt = vec![0, 1, 1];
        let b_pred = vec![0, 0, 0];
        let items = [
            EvalItem { video_id: "a", task_id: "t1", pred: &a_pred, gt: &a_gt },
            EvalItem { video_id: "b", task_id: "t2", pred: &b_pred, gt: &b_gt },
        ];
        let r = evaluate_dataset(&items, 2).unwrap();
        assert_eq!(r.tasks.len(), 2);
        assert_eq!(r.tasks[0].1.mof, 1.0);
        assert!((r.tasks[1].1.mof - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.mean_mof - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn hungarian_matches_exhaustive(n in 1usize..7, seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.uniform() * 10.0 - 3.0).collect()).collect();
            let a = hungarian(&m).unwrap();
            prop_assert_eq!(a.cost, brute_force(&m));
            let mut cols = a.row_to_col.clone();
            cols.sort_unstable();
            prop_assert_eq!(cols, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn metrics_invariant_to_renaming(
            gt in proptest::collection::vec(0usize..4, 1..60),
            pred in proptest::collection::vec(0usize..4, 60),
            seed in any::<u64>(),
        ) {
            let pred = &pred[..gt.len()];
            let mut perm: Vec<usize> = (0..4).collect();
            RngState::new(seed).shuffle(&mut perm);
            let renamed: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
            let r1 = compute_metrics(pred, &gt, &map_labels(pred, &gt, 4, 4).unwrap()).unwrap();
            let r2 = compute_metrics(&renamed, &gt, &map_labels(&renamed, &gt, 4, 4).unwrap()).unwrap();
            prop_assert_eq!(r1.mof, r2.mof);
            // Tied confusion counts can pick different optimal mappings; the
            // remaining metrics only have to agree when the mappings correspond.
            if (0..4).all(|p| r2.mapping.map[perm[p]] == r1.mapping.map[p]) {
                prop_assert_eq!(r1.f1, r2.f1);
                prop_assert_eq!(r1.jaccard, r2.jaccard);
            }
            for v in [r1.mof, r1.f1, r1.jaccard] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(r1.mof == 1.0, r1.mapping.apply(pred).iter().zip(&gt).all(|(m, g)| *m == Some(*g)));
        }
    }
}
