use crate::error::{Error, Result};

/// One video as a `T x D` matrix of frame features.
///
/// Ground-truth labels are optional and only consumed by evaluation; the
/// training loop never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    video_id: String,
    task_id: String,
    features: Vec<Vec<f64>>,
    gt_labels: Option<Vec<usize>>,
}

impl FeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        task_id: impl Into<String>,
        features: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if features.is_empty() {
            return Err(Error::Input(format!("video {video_id} has no frames")));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::Input(format!("video {video_id} has zero-width features")));
        }
        for (t, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::dim(format!("video {video_id} frame {t}"), dim, row.len()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "video {video_id} frame {t} has a non-finite feature"
                )));
            }
        }
        Ok(Self {
            video_id,
            task_id: task_id.into(),
            features,
            gt_labels: None,
        })
    }

    /// Attaches ground truth; `num_classes` bounds the label values.
    pub fn with_labels(mut self, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Length {
                expected: self.len(),
                actual: labels.len(),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Label {
                row,
                label,
                classes: num_classes,
            });
        }
        self.gt_labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.gt_labels = None;
        self
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.features[t]
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Feature width `D`.
    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn gt_labels(&self) -> Option<&[usize]> {
        self.gt_labels.as_deref()
    }
}

/// Per-frame action symbols for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSequence {
    pub video_id: String,
    pub labels: Vec<usize>,
}

impl ActionSequence {
    pub fn new(video_id: impl Into<String>, labels: Vec<usize>) -> Self {
        Self {
            video_id: video_id.into(),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self, num_actions: usize) -> Result<()> {
        match self.labels.iter().enumerate().find(|(_, &l)| l >= num_actions) {
            Some((row, &label)) => Err(Error::Label {
                row,
                label,
                classes: num_actions,
            }),
            None => Ok(()),
        }
    }
}

/// Run-length encoding as `(symbol, start, end)` with `end` exclusive.
pub fn runs(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..=labels.len() {
        if t == labels.len() || labels[t] != labels[start] {
            out.push((labels[start], start, t));
            start = t;
        }
    }
    out
}
