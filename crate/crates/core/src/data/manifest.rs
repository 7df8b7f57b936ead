//! Dataset manifests.
//!
//! ```text
//! # feature_dim=16 k=4 [k:<task>=<n> ...]
//! <video_id>\t<task_id>\t<features path>\t<labels path or ->
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::io::{load_features, load_labels, save_features, save_labels};
use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub task_id: String,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub feature_dim: usize,
    /// Expected action count for tasks without an override.
    pub num_actions: usize,
    pub task_actions: BTreeMap<String, usize>,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn actions_for(&self, task: &str) -> usize {
        self.task_actions.get(task).copied().unwrap_or(self.num_actions)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn has_labels(&self) -> bool {
        self.entries.iter().all(|e| e.labels.is_some())
    }
}

fn check_field(value: &str, what: &str) -> Result<()> {
    if value.is_empty() || value.contains(['\t', '\n', '\r']) {
        return Err(Error::Input(format!("{what} {value:?} is empty or contains tabs/newlines")));
    }
    Ok(())
}

fn path_text(p: &Path) -> Result<String> {
    let s = p
        .to_str()
        .ok_or_else(|| Error::Input(format!("path {} is not utf-8", p.display())))?;
    check_field(s, "path")?;
    Ok(s.to_string())
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut out = format!("# feature_dim={} k={}", manifest.feature_dim, manifest.num_actions);
    for (task, k) in &manifest.task_actions {
        check_field(task, "task id")?;
        if task.contains([' ', '=']) {
            return Err(Error::Input(format!("task id {task:?} cannot carry an action-count override")));
        }
        out.push_str(&format!(" k:{task}={k}"));
    }
    out.push('\n');
    for e in &manifest.entries {
        check_field(&e.video_id, "video id")?;
        check_field(&e.task_id, "task id")?;
        let labels = match &e.labels {
            Some(p) => path_text(p)?,
            None => "-".into(),
        };
        out.push_str(&format!("{}\t{}\t{}\t{}\n", e.video_id, e.task_id, path_text(&e.features)?, labels));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let location = |line: usize| format!("{} line {line}", path.display());
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(location(1), "empty manifest"))?;
    let header = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::format(location(1), "header must start with '#'"))?;
    let mut feature_dim = None;
    let mut num_actions = None;
    let mut task_actions = BTreeMap::new();
    for token in header.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::format(location(1), format!("bad header token {token:?}")))?;
        let n: usize = value
            .parse()
            .map_err(|_| Error::format(location(1), format!("bad value in {token:?}")))?;
        match key {
            "feature_dim" => feature_dim = Some(n),
            "k" => num_actions = Some(n),
            _ => match key.strip_prefix("k:") {
                Some(task) if !task.is_empty() => {
                    task_actions.insert(task.to_string(), n);
                }
                _ => return Err(Error::format(location(1), format!("unknown header key {key:?}"))),
            },
        }
    }
    let feature_dim = feature_dim.ok_or_else(|| Error::format(location(1), "header lacks feature_dim"))?;
    let num_actions = num_actions.ok_or_else(|| Error::format(location(1), "header lacks k"))?;
    if feature_dim == 0 || num_actions == 0 {
        return Err(Error::format(location(1), "feature_dim and k must be positive"));
    }

    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::format(
                location(i + 1),
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::format(location(i + 1), format!("duplicate video id {}", fields[0])));
        }
        entries.push(ManifestEntry {
            video_id: fields[0].into(),
            task_id: fields[1].into(),
            features: fields[2].into(),
            labels: (fields[3] != "-").then(|| fields[3].into()),
        });
    }
    if entries.is_empty() {
        return Err(Error::format(path.display().to_string(), "manifest lists no videos"));
    }
    Ok(Manifest {
        feature_dim,
        num_actions,
        task_actions,
        entries,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

/// Loads every video (with ground truth when listed) in manifest order.
pub fn load_dataset(manifest: &Manifest) -> Result<Vec<FeatureSequence>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let video = load_features(&manifest.resolve(&e.features), &e.video_id, &e.task_id)?;
            if video.dim() != manifest.feature_dim {
                return Err(Error::dim(
                    format!("features of video {}", e.video_id),
                    manifest.feature_dim,
                    video.dim(),
                ));
            }
            match &e.labels {
                Some(p) => {
                    let labels = load_labels(&manifest.resolve(p), video.len())?;
                    video.with_labels(labels, manifest.actions_for(&e.task_id))
                }
                None => Ok(video),
            }
        })
        .collect()
}

/// Writes binary features, label files (when present) and `manifest.tsv`
/// into `dir`; returns the manifest.
pub fn write_dataset(videos: &[FeatureSequence], num_actions: usize, dir: &Path) -> Result<Manifest> {
    let first = videos
        .first()
        .ok_or_else(|| Error::Input("cannot write an empty dataset".into()))?;
    for sub in ["features", "labels"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        check_field(v.video_id(), "video id")?;
        if v.video_id().contains(['/', '\\']) {
            return Err(Error::Input(format!("video id {:?} contains a path separator", v.video_id())));
        }
        let features = PathBuf::from("features").join(format!("{}.segf", v.video_id()));
        save_features(v, &dir.join(&features))?;
        let labels = match v.gt_labels() {
            Some(gt) => {
                let p = PathBuf::from("labels").join(format!("{}.txt", v.video_id()));
                save_labels(gt, &dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            video_id: v.video_id().into(),
            task_id: v.task_id().into(),
            features,
            labels,
        });
    }
    let manifest = Manifest {
        feature_dim: first.dim(),
        num_actions,
        task_actions: BTreeMap::new(),
        entries,
        base_dir: dir.to_path_buf(),
    };
    write_manifest(&manifest, &dir.join("manifest.tsv"))?;
    Ok(manifest)
}
