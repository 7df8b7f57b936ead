//! Flat `key=value` run configuration.
//!
//! Every key has a default (see [`KEYS`]); a config file and `--set`
//! overrides replace defaults, unknown keys are rejected, and the fully
//! resolved table is echoed into each output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::cross_video::{CrossVideoConfig, MatchingKind};
use crate::data::{LengthDist, SynthSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::Activation;
use crate::ranking::{ActionLength, Gammas, LengthKind, LengthModel, RankingConfig, Selection};
use crate::trainer::{Sampling, TrainConfig};

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "training seed (model init, sampling, shuffling)"),
    // synthetic data
    ("synth_seed", "7", "seed of the synthetic generator"),
    ("synth_tasks", "1", "number of tasks"),
    ("synth_videos_per_task", "20", "videos per task"),
    ("synth_actions", "4", "actions per task (k >= 2)"),
    ("synth_feature_dim", "16", "feature dimension D"),
    ("synth_min_frames", "60", "minimum frames per video"),
    ("synth_max_frames", "100", "maximum frames per video"),
    ("synth_length", "poisson", "segment length distribution: poisson | gaussian"),
    ("synth_length_mean", "auto", "lambda or mean segment length; auto = (min+max)/(2k)"),
    ("synth_length_std", "auto", "gaussian segment length std; auto = mean/4"),
    ("synth_separation", "6", "distance between action means in noise units"),
    ("synth_noise_std", "1", "frame noise std"),
    ("synth_video_offset_std", "0.5", "per-video appearance shift std"),
    ("synth_order_jitter", "0.1", "probability of swapping adjacent actions"),
    // model
    ("num_actions", "auto", "model action count |O|; auto = manifest k"),
    ("num_rules", "auto", "rule count |R|; auto = 2|O|"),
    ("state_dim", "32", "state vector size"),
    ("hidden_dims", "64", "comma-separated hidden layer sizes (empty for none)"),
    ("temperature", "1", "initial Gumbel-Softmax temperature"),
    ("activation", "relu", "hidden activation: relu | tanh | identity"),
    ("hard_transition", "false", "feed the one-hot rule into the next state"),
    ("embed_projection", "false", "learn a projection for cross-video embeddings"),
    ("zero_init", "scorer+head", "output layers started at zero: none | scorer | head | scorer+head"),
    // ranking
    ("candidates", "64", "candidates K per video and epoch"),
    ("gamma1", "auto", "occurrence weight; auto = 1/|O|"),
    ("gamma2", "auto", "length weight; auto = 1/T"),
    ("gamma3", "auto", "frame-probability weight; auto = 1/T"),
    ("gamma_cross", "auto", "cross-video weight; auto = 1/T"),
    ("length_model", "gaussian", "length term: mean-deviation | poisson | gaussian"),
    ("length_learnable", "false", "refit length parameters from self-labels each epoch"),
    ("length_mean", "auto", "static per-action mean (or lambda); auto = T/|O|"),
    ("length_std", "auto", "static per-action std; auto = mean/2"),
    ("selection", "min-cost", "self-label choice: min-cost | random"),
    ("cross_video_in_cost", "false", "add the cross-video term to the ranking cost"),
    // training
    ("epochs", "400", "epoch budget"),
    ("learning_rate", "0.003", "Adam learning rate of the autoregressive path"),
    ("head_learning_rate", "0.0001", "Adam learning rate of the classifier head; auto = learning_rate"),
    ("beta1", "0.9", "Adam beta1"),
    ("beta2", "0.999", "Adam beta2"),
    ("adam_epsilon", "1e-8", "Adam epsilon"),
    ("m_steps_per_e_step", "1", "passes over the videos per E-step"),
    ("sampling", "gumbel", "candidate sampling: gumbel | greedy"),
    ("temperature_decay", "0.999", "per-epoch temperature decay factor"),
    ("min_temperature", "0.3", "temperature floor"),
    ("cross_video_in_loss", "false", "add the cross-video loss to the M-step"),
    ("cross_video_weight", "1", "weight of the cross-video loss"),
    ("cross_video_kind", "triplet", "matching function: triplet | contrastive"),
    ("cross_video_margin", "1", "matching margin"),
    ("cross_video_samples", "32", "triples per evaluation; 0 = all"),
    ("patience", "20", "epochs without improvement before stopping"),
    ("min_improvement", "0.0001", "improvement of the mean selected cost that resets patience"),
    ("ablation", "none", "none | any '+'-joined subset of c1,c2,c3 | random-pick | no-gumbel"),
    // outputs
    ("checkpoint_every", "50", "write an intermediate checkpoint every N epochs; 0 = final only"),
    ("dump_top", "5", "top-ranked candidates per video dumped each epoch; 0 = off"),
    ("dump_candidates", "true", "write every candidate's cost breakdown"),
    ("evaluate", "true", "record per-epoch MoF when ground truth is available"),
    ("svg", "true", "write SVG timelines when segmenting"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::Parameter(format!("config key {key}: cannot parse {value:?} as {expected}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text, &path.display().to_string())
    }

    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parameter(format!("{origin} line {}: expected key=value, found {raw:?}", i + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Parameter(format!("{origin} line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Parameter(format!("unknown config key {key:?}"))),
        }
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("config key {key} missing from the key table"))
    }

    /// The resolved table as config-file text, in key-table order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, _, doc) in KEYS {
            out.push_str(&format!("# {doc}\n{k}={}\n", self.get(k)));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    fn parse<T: FromStr>(&self, key: &str, expected: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| bad(key, v, expected))
    }

    fn auto<T: FromStr>(&self, key: &str, expected: &str) -> Result<Option<T>> {
        match self.get(key) {
            "auto" => Ok(None),
            v => v.parse().map(Some).map_err(|_| bad(key, v, expected)),
        }
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key, "a nonnegative integer")
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key, "a number")
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(bad(key, v, "a boolean")),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed", "a 64-bit unsigned integer")
    }

    pub fn epochs(&self) -> Result<usize> {
        self.usize("epochs")
    }

    pub fn checkpoint_every(&self) -> Result<usize> {
        self.usize("checkpoint_every")
    }

    pub fn dump_top(&self) -> Result<usize> {
        self.usize("dump_top")
    }

    pub fn dump_candidates(&self) -> Result<bool> {
        self.bool("dump_candidates")
    }

    pub fn evaluate(&self) -> Result<bool> {
        self.bool("evaluate")
    }

    /// `(scorer, head)` output layers to zero at initialization.
    pub fn zero_init(&self) -> Result<(bool, bool)> {
        match self.get("zero_init") {
            "none" => Ok((false, false)),
            "scorer" => Ok((true, false)),
            "head" => Ok((false, true)),
            "scorer+head" => Ok((true, true)),
            v => Err(bad("zero_init", v, "none, scorer, head or scorer+head")),
        }
    }

    pub fn svg(&self) -> Result<bool> {
        self.bool("svg")
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        let k = self.usize("synth_actions")?;
        let min_frames = self.usize("synth_min_frames")?;
        let max_frames = self.usize("synth_max_frames")?;
        let mean = self
            .auto::<f64>("synth_length_mean", "a number")?
            .unwrap_or((min_frames + max_frames) as f64 / (2 * k.max(1)) as f64);
        let lengths = match self.get("synth_length") {
            "poisson" => LengthDist::Poisson { lambda: mean },
            "gaussian" => LengthDist::Gaussian {
                mean,
                std: self.auto("synth_length_std", "a number")?.unwrap_or(mean / 4.0),
            },
            v => return Err(bad("synth_length", v, "poisson or gaussian")),
        };
        let spec = SynthSpec {
            num_tasks: self.usize("synth_tasks")?,
            videos_per_task: self.usize("synth_videos_per_task")?,
            num_actions: k,
            feature_dim: self.usize("synth_feature_dim")?,
            min_frames,
            max_frames,
            lengths: Some(lengths),
            separation: self.f64("synth_separation")?,
            noise_std: self.f64("synth_noise_std")?,
            video_offset_std: self.f64("synth_video_offset_std")?,
            order_jitter: self.f64("synth_order_jitter")?,
            seed: self.parse("synth_seed", "a 64-bit unsigned integer")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Model configuration; `num_actions = auto` resolves to `dataset_actions`.
    pub fn model_config(&self, dataset_actions: usize, feature_dim: usize) -> Result<ModelConfig> {
        let num_actions = self.auto("num_actions", "a positive integer")?.unwrap_or(dataset_actions);
        let hidden = self.get("hidden_dims");
        let hidden_dims = hidden
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad("hidden_dims", hidden, "comma-separated integers")))
            .collect::<Result<Vec<usize>>>()?;
        let cfg = ModelConfig {
            num_actions,
            num_rules: self.auto("num_rules", "a positive integer")?.unwrap_or(2 * num_actions),
            state_dim: self.usize("state_dim")?,
            feature_dim,
            hidden_dims,
            temperature: self.f64("temperature")?,
            activation: self.parse::<Activation>("activation", "relu, tanh or identity")?,
            hard_transition: self.bool("hard_transition")?,
            embed_projection: self.bool("embed_projection")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn length_model(&self) -> Result<LengthModel> {
        let kind: LengthKind = self.parse("length_model", "mean-deviation, poisson or gaussian")?;
        let learnable = self.bool("length_learnable")?;
        let mean: Option<f64> = self.auto("length_mean", "a number")?;
        let std: Option<f64> = self.auto("length_std", "a number")?;
        match mean {
            None if std.is_some() => Err(Error::Parameter("length_std needs an explicit length_mean".into())),
            None => Ok(LengthModel::relative(kind, learnable)),
            Some(mean) => {
                let std = std.unwrap_or(mean / 2.0);
                let k = self.auto::<usize>("num_actions", "a positive integer")?.ok_or_else(|| {
                    Error::Parameter("static length_mean needs an explicit num_actions".into())
                })?;
                let mut m = LengthModel::fixed(kind, vec![ActionLength { mean, std }; k])?;
                m.learnable = learnable;
                Ok(m)
            }
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut ranking = RankingConfig {
            gammas: Gammas {
                occurrence: self.auto("gamma1", "a number")?,
                length: self.auto("gamma2", "a number")?,
                probability: self.auto("gamma3", "a number")?,
                cross: self.auto("gamma_cross", "a number")?,
            },
            candidates: self.usize("candidates")?,
            length_model: self.length_model()?,
            cross_video_in_cost: self.bool("cross_video_in_cost")?,
            selection: match self.get("selection") {
                "min-cost" => Selection::MinCost,
                "random" => Selection::Random,
                v => return Err(bad("selection", v, "min-cost or random")),
            },
        };
        let mut sampling: Sampling = self.parse("sampling", "gumbel or greedy")?;
        apply_ablation(self.get("ablation"), &mut ranking, &mut sampling)?;
        let samples = self.usize("cross_video_samples")?;
        let cfg = TrainConfig {
            epochs: self.epochs()?,
            ranking,
            learning_rate: self.f64("learning_rate")?,
            head_learning_rate: self.auto("head_learning_rate", "a number")?,
            beta1: self.f64("beta1")?,
            beta2: self.f64("beta2")?,
            adam_epsilon: self.f64("adam_epsilon")?,
            m_steps_per_e_step: self.usize("m_steps_per_e_step")?,
            seed: self.seed()?,
            sampling,
            temperature_decay: self.f64("temperature_decay")?,
            min_temperature: self.f64("min_temperature")?,
            freeze_head: false,
            cross_video: CrossVideoConfig {
                kind: self.parse::<MatchingKind>("cross_video_kind", "triplet or contrastive")?,
                margin: self.f64("cross_video_margin")?,
                samples: (samples > 0).then_some(samples),
            },
            cross_video_in_loss: self.bool("cross_video_in_loss")?,
            cross_video_weight: self.f64("cross_video_weight")?,
            patience: self.usize("patience")?,
            min_improvement: self.f64("min_improvement")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies an ablation preset: a `+`-joined subset of `c1,c2,c3` zeroes
/// the weights of the terms left out; `random-pick` and `no-gumbel`
/// replace selection and sampling.
pub fn apply_ablation(name: &str, ranking: &mut RankingConfig, sampling: &mut Sampling) -> Result<()> {
    match name {
        "none" => {}
        "random-pick" => ranking.selection = Selection::Random,
        "no-gumbel" => *sampling = Sampling::Greedy,
        terms => {
            let mut keep = [false; 3];
            for t in terms.split('+') {
                match t.trim() {
                    "c1" => keep[0] = true,
                    "c2" => keep[1] = true,
                    "c3" => keep[2] = true,
                    _ => return Err(Error::Parameter(format!("unknown ablation {name:?}"))),
                }
            }
            let g = &mut ranking.gammas;
            for (slot, kept) in [&mut g.occurrence, &mut g.length, &mut g.probability].into_iter().zip(keep) {
                if !kept {
                    *slot = Some(0.0);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::default();
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.epochs, 400);
        assert_eq!(tc.ranking.candidates, 64);
        let mc = cfg.model_config(4, 16).unwrap();
        assert_eq!((mc.num_actions, mc.num_rules), (4, 8));
        assert_eq!(cfg.synth_spec().unwrap().num_actions, 4);
    }

    #[test]
    fn file_text_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.merge_text("# comment\nepochs = 3  # trailing\n\ncandidates=4\n", "test").unwrap();
        cfg.set_pair("seed=9").unwrap();
        let tc = cfg.train_config().unwrap();
        assert_eq!((tc.epochs, tc.ranking.candidates, tc.seed), (3, 4, 9));
        let err = cfg.merge_text("bogus=1\n", "f.cfg").unwrap_err().to_string();
        assert!(err.contains("unknown config key") && err.contains("line 1"), "{err}");
        assert!(cfg.merge_text("epochs\n", "f.cfg").is_err());
    }

    #[test]
    fn rendered_config_reloads_identically() {
        let mut cfg = RunConfig::default();
        cfg.set("ablation", "c1+c3").unwrap();
        let mut again = RunConfig::default();
        again.merge_text(&cfg.render(), "echo").unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn ablation_presets() {
        let mut cfg = RunConfig::default();
        cfg.set("ablation", "c3").unwrap();
        let g = cfg.train_config().unwrap().ranking.gammas;
        assert_eq!((g.occurrence, g.length, g.probability), (Some(0.0), Some(0.0), None));
        cfg.set("ablation", "random-pick").unwrap();
        assert_eq!(cfg.train_config().unwrap().ranking.selection, Selection::Random);
        cfg.set("ablation", "no-gumbel").unwrap();
        assert_eq!(cfg.train_config().unwrap().sampling, Sampling::Greedy);
        cfg.set("ablation", "c4").unwrap();
        assert!(cfg.train_config().is_err());
    }

    #[test]
    fn invalid_values_name_the_key() {
        let mut cfg = RunConfig::default();
        cfg.set("synth_actions", "1").unwrap();
        assert!(cfg.synth_spec().unwrap_err().to_string().contains("k >= 2"));
        cfg.set("epochs", "many").unwrap();
        assert!(cfg.train_config().unwrap_err().to_string().contains("epochs"));
    }
}
