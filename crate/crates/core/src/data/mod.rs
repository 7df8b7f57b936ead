//! Synthetic data generation and on-disk formats for features, labels and
//! dataset manifests.

mod io;
mod manifest;
mod synth;

pub use io::{
    load_features, load_labels, read_feature_rows, read_labels, save_features, save_labels,
    write_feature_rows, FeatureFormat,
};
pub use manifest::{load_dataset, read_manifest, write_dataset, write_manifest, Manifest, ManifestEntry};
pub use synth::{synth_generate, LengthDist, SynthDataset, SynthSpec};
