//! Stochastic autoregressive segmenter.
//!
//! At every frame the current state vector is concatenated with the frame
//! feature and scored against `|R|` transition rules. A rule is chosen by
//! Gumbel-Softmax sampling (training) or argmax (inference); it emits the
//! action `rule mod |O|` and the next state is the weighted combination of
//! the learned per-rule state embeddings. A separate per-frame classifier
//! head provides `p(a | f)` for the ranking cost.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};

use crate::error::{Error, Result};
use crate::nn::{
    argmax, cross_entropy_logits, gumbel_softmax_backward, gumbel_softmax_with_noise, logsumexp,
    sample_noise, softmax, Activation, GumbelSample, Mlp, MlpTrace, ParamArray, Parameters,
    RngState,
};
use crate::sequence::{ActionSequence, FeatureSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_actions: usize,
    pub num_rules: usize,
    pub state_dim: usize,
    pub feature_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Initial Gumbel-Softmax temperature.
    pub temperature: f64,
    pub activation: Activation,
    /// Feed the one-hot rule (instead of the relaxed sample) into the next state.
    pub hard_transition: bool,
    /// Learn a `D x D` projection for cross-video segment embeddings.
    pub embed_projection: bool,
}

impl ModelConfig {
    /// Defaults: two rules per action, 32-dim state, one hidden layer of 64.
    pub fn new(num_actions: usize, feature_dim: usize) -> Self {
        Self {
            num_actions,
            num_rules: 2 * num_actions,
            state_dim: 32,
            feature_dim,
            hidden_dims: vec![64],
            temperature: 1.0,
            activation: Activation::Relu,
            hard_transition: false,
            embed_projection: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Parameter(m));
        if self.num_actions == 0 || self.state_dim == 0 || self.feature_dim == 0 {
            return fail(format!(
                "num_actions, state_dim and feature_dim must be positive ({}, {}, {})",
                self.num_actions, self.state_dim, self.feature_dim
            ));
        }
        if self.num_rules < self.num_actions || self.num_rules % self.num_actions != 0 {
            return fail(format!(
                "num_rules ({}) must be a positive multiple of num_actions ({})",
                self.num_rules, self.num_actions
            ));
        }
        if self.hidden_dims.contains(&0) {
            return fail("hidden dims must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }

    fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.hidden_dims);
        dims.push(output);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    pub initial_state: ParamArray,
    /// `(state_dim + D) -> |R|` rule logits.
    pub rule_scorer: Mlp,
    /// `|R| x state_dim` successor-state embeddings.
    pub rule_next_state: ParamArray,
    rule_action: Vec<usize>,
    /// `D -> |O|` logits, independent of the autoregressive path.
    pub classifier_head: Mlp,
    pub embed_projection: Option<ParamArray>,
}

/// How a rule is chosen at each step.
pub enum Mode<'a> {
    Stochastic { temperature: f64, rng: &'a mut RngState },
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub rule_logits: Vec<f64>,
    /// One-hot of the selected rule.
    pub rule_distribution: Vec<f64>,
    /// Weights applied to the rule embeddings to form `next_state`.
    pub transition_weights: Vec<f64>,
    pub rule: usize,
    pub action: usize,
    pub next_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub actions: ActionSequence,
    pub rules: Vec<usize>,
}

/// First-layer responses of the rule scorer, precomputed once per video so
/// that K stochastic rollouts share them.
///
/// The first layer splits as `W_s s + W_f f + b`. Because every next state
/// is a weighted sum of rule embeddings, `W_s s_{t+1} = sum_r w_r (W_s E_r)`,
/// so a step costs `|R| x hidden` instead of `(state_dim + D) x hidden`.
#[derive(Debug, Clone)]
pub struct RolloutCache {
    /// `W_f f_t + b` for every frame.
    frame: Vec<Vec<f64>>,
    /// `W_s E_r` for every rule.
    rule: Vec<Vec<f64>>,
    /// `W_s s_0`.
    initial: Vec<f64>,
}

/// Builds a uniform `±1/sqrt(fan_in)` array.
fn uniform_array(name: &str, shape: &[usize], fan_in: usize, rng: &mut RngState) -> ParamArray {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
    ParamArray::from_values(name, shape, values).expect("shape computed from config")
}

pub fn init_model(config: &ModelConfig, rng: &mut RngState) -> Result<ModelParams> {
    config.validate()?;
    let s = config.state_dim;
    let d = config.feature_dim;
    let rule_scorer = Mlp::init(
        "rule_scorer",
        &config.dims(s + d, config.num_rules),
        config.activation,
        rng,
    )?;
    let rule_next_state = uniform_array(
        "rule_next_state",
        &[config.num_rules, s],
        config.num_rules,
        rng,
    );
    let classifier_head = Mlp::init(
        "classifier_head",
        &config.dims(d, config.num_actions),
        config.activation,
        rng,
    )?;
    let embed_projection = config
        .embed_projection
        .then(|| uniform_array("embed_projection", &[d, d], d, rng));
    Ok(ModelParams {
        initial_state: ParamArray::zeros("initial_state", &[s]),
        rule_scorer,
        rule_next_state,
        rule_action: (0..config.num_rules).map(|r| r % config.num_actions).collect(),
        classifier_head,
        embed_projection,
        config: config.clone(),
    })
}

fn zero_last_layer(mlp: &mut Mlp) {
    for p in mlp.params_mut().into_iter().rev().take(2) {
        p.values_mut().fill(0.0);
    }
}

struct StepRecord {
    trace: MlpTrace,
    logits: Vec<f64>,
    sample: GumbelSample,
}

impl ModelParams {
    /// Zeroes the rule scorer's output layer, so rule choice starts uniform.
    pub fn zero_scorer_output(&mut self) {
        zero_last_layer(&mut self.rule_scorer);
    }

    /// Zeroes the classifier head's output layer, so `p(a | f)` starts uniform.
    pub fn zero_head_output(&mut self) {
        zero_last_layer(&mut self.classifier_head);
    }

    /// Reassembles a model from arrays, checking every shape against `config`.
    pub fn from_parts(
        config: ModelConfig,
        initial_state: ParamArray,
        rule_scorer: Mlp,
        rule_next_state: ParamArray,
        classifier_head: Mlp,
        embed_projection: Option<ParamArray>,
    ) -> Result<Self> {
        config.validate()?;
        let (s, d, r, o) = (
            config.state_dim,
            config.feature_dim,
            config.num_rules,
            config.num_actions,
        );
        let check = |what: &str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::dim(what, expected, actual))
            }
        };
        check("initial_state", s, initial_state.len())?;
        check("rule_scorer input", s + d, rule_scorer.input_dim())?;
        check("rule_scorer output", r, rule_scorer.output_dim())?;
        check("rule_next_state rows", r, rule_next_state.shape()[0])?;
        check("rule_next_state", r * s, rule_next_state.len())?;
        check("classifier_head input", d, classifier_head.input_dim())?;
        check("classifier_head output", o, classifier_head.output_dim())?;
        match (&embed_projection, config.embed_projection) {
            (Some(p), true) => check("embed_projection", d * d, p.len())?,
            (None, false) => {}
            _ => {
                return Err(Error::Parameter(
                    "embed_projection presence does not match config".into(),
                ))
            }
        }
        Ok(Self {
            rule_action: (0..r).map(|i| i % o).collect(),
            initial_state,
            rule_scorer,
            rule_next_state,
            classifier_head,
            embed_projection,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_actions(&self) -> usize {
        self.config.num_actions
    }

    pub fn rule_action(&self) -> &[usize] {
        &self.rule_action
    }

    fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.config.feature_dim {
            return Err(Error::dim("frame feature", self.config.feature_dim, feature.len()));
        }
        Ok(())
    }

    fn check_video(&self, video: &FeatureSequence) -> Result<()> {
        if video.is_empty() {
            return Err(Error::Input(format!("video {} is empty", video.video_id())));
        }
        if video.dim() != self.config.feature_dim {
            return Err(Error::dim(
                format!("video {} features", video.video_id()),
                self.config.feature_dim,
                video.dim(),
            ));
        }
        Ok(())
    }

    fn combine_states(&self, weights: &[f64]) -> Vec<f64> {
        let s = self.config.state_dim;
        let e = self.rule_next_state.values();
        let mut out = vec![0.0; s];
        for (r, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(&e[r * s..(r + 1) * s]) {
                *o += w * v;
            }
        }
        out
    }

    fn input(&self, state: &[f64], feature: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(state.len() + feature.len());
        x.extend_from_slice(state);
        x.extend_from_slice(feature);
        x
    }

    pub fn rule_logits(&self, state: &[f64], feature: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.config.state_dim {
            return Err(Error::dim("state", self.config.state_dim, state.len()));
        }
        self.check_feature(feature)?;
        self.rule_scorer.forward(&self.input(state, feature))
    }

    pub fn step(&self, state: &[f64], feature: &[f64], mode: Mode<'_>) -> Result<StepOutput> {
        let logits = self.rule_logits(state, feature)?;
        let n = logits.len();
        let (rule, transition_weights) = match mode {
            Mode::Greedy => {
                let rule = argmax(&logits);
                let mut w = vec![0.0; n];
                w[rule] = 1.0;
                (rule, w)
            }
            Mode::Stochastic { temperature, rng } => {
                let noise = sample_noise(rng, n);
                let s = gumbel_softmax_with_noise(&logits, &noise, temperature, true)?;
                let w = if self.config.hard_transition {
                    s.output
                } else {
                    s.soft
                };
                (s.index, w)
            }
        };
        let mut rule_distribution = vec![0.0; n];
        rule_distribution[rule] = 1.0;
        Ok(StepOutput {
            next_state: self.combine_states(&transition_weights),
            rule_logits: logits,
            rule_distribution,
            transition_weights,
            rule,
            action: self.rule_action[rule],
        })
    }

    /// Runs [`ModelParams::step`] from `initial_state` over every frame.
    pub fn generate_sequence(&self, video: &FeatureSequence, mut mode: Mode<'_>) -> Result<Rollout> {
        self.check_video(video)?;
        let mut state = self.initial_state.values().to_vec();
        let mut labels = Vec::with_capacity(video.len());
        let mut rules = Vec::with_capacity(video.len());
        for f in video.features() {
            let m = match &mut mode {
                Mode::Greedy => Mode::Greedy,
                Mode::Stochastic { temperature, rng } => Mode::Stochastic {
                    temperature: *temperature,
                    rng,
                },
            };
            let out = self.step(&state, f, m)?;
            labels.push(out.action);
            rules.push(out.rule);
            state = out.next_state;
        }
        Ok(Rollout {
            actions: ActionSequence::new(video.video_id(), labels),
            rules,
        })
    }

    pub fn rollout_cache(&self, video: &FeatureSequence) -> Result<RolloutCache> {
        self.check_video(video)?;
        let first = &self.rule_scorer.layers()[0];
        let cols = first.output_dim();
        let s_dim = self.config.state_dim;
        let w = first.weight.values();
        let project = |x: &[f64], offset: usize, bias: Option<&[f64]>| {
            let mut out = bias.map_or_else(|| vec![0.0; cols], <[f64]>::to_vec);
            for (i, &xi) in x.iter().enumerate() {
                let row = &w[(offset + i) * cols..(offset + i + 1) * cols];
                for (o, &wij) in out.iter_mut().zip(row) {
                    *o += xi * wij;
                }
            }
            out
        };
        let bias = first.bias.values();
        Ok(RolloutCache {
            frame: video.features().iter().map(|f| project(f, s_dim, Some(bias))).collect(),
            rule: (0..self.config.num_rules)
                .map(|r| project(self.rule_next_state.row(r), 0, None))
                .collect(),
            initial: project(self.initial_state.values(), 0, None),
        })
    }

    /// Stochastic rollout using a [`RolloutCache`]. Draws noise in the same
    /// order as [`ModelParams::generate_sequence`], so replaying a stream
    /// reproduces the same sample up to floating-point summation order.
    pub fn sample_cached(
        &self,
        cache: &RolloutCache,
        video_id: &str,
        temperature: f64,
        rng: &mut RngState,
    ) -> Result<Rollout> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Parameter(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        let layers = self.rule_scorer.layers();
        let activation = self.rule_scorer.activation();
        let num_rules = self.config.num_rules;
        let mut state_pre = cache.initial.clone();
        let mut h = Vec::new();
        let mut z = Vec::new();
        let mut scaled = vec![0.0; num_rules];
        let mut labels = Vec::with_capacity(cache.frame.len());
        let mut rules = Vec::with_capacity(cache.frame.len());
        for frame in &cache.frame {
            h.clear();
            h.extend(frame.iter().zip(&state_pre).map(|(a, b)| a + b));
            for layer in &layers[1..] {
                for v in h.iter_mut() {
                    *v = activation.apply(*v);
                }
                layer.forward_into(&h, &mut z);
                std::mem::swap(&mut h, &mut z);
            }
            for (o, &l) in scaled.iter_mut().zip(&h) {
                if !l.is_finite() {
                    return Err(Error::Numeric(format!("non-finite rule logit in {video_id}")));
                }
                *o = (l + rng.gumbel()) / temperature;
            }
            let weights = softmax(&scaled);
            let rule = argmax(&weights);
            state_pre.iter_mut().for_each(|v| *v = 0.0);
            if self.config.hard_transition {
                state_pre.copy_from_slice(&cache.rule[rule]);
            } else {
                for (w, row) in weights.iter().zip(&cache.rule) {
                    for (o, &v) in state_pre.iter_mut().zip(row) {
                        *o += w * v;
                    }
                }
            }
            labels.push(self.rule_action[rule]);
            rules.push(rule);
        }
        Ok(Rollout {
            actions: ActionSequence::new(video_id, labels),
            rules,
        })
    }

    pub fn segment(&self, video: &FeatureSequence) -> Result<ActionSequence> {
        Ok(self.generate_sequence(video, Mode::Greedy)?.actions)
    }

    /// `T x |O|` matrix of `p(a | f_t)` from the classifier head.
    pub fn classify_frames(&self, video: &FeatureSequence) -> Result<Vec<Vec<f64>>> {
        self.check_video(video)?;
        video
            .features()
            .iter()
            .map(|f| Ok(softmax(&self.classifier_head.forward(f)?)))
            .collect()
    }

    /// Cross-entropy of the autoregressive action distribution against
    /// `targets`, unrolled with fixed per-frame Gumbel `noise` (or no
    /// noise). Accumulates exact gradients through every transition.
    ///
    /// The per-step action distribution sums rule probabilities
    /// `softmax(logits)` over the rules mapped to each action.
    pub fn sequence_loss(
        &mut self,
        features: &[Vec<f64>],
        targets: &[usize],
        noise: Option<&[Vec<f64>]>,
        temperature: f64,
    ) -> Result<f64> {
        let t_len = features.len();
        if t_len == 0 {
            return Err(Error::Input("sequence loss over zero frames".into()));
        }
        if targets.len() != t_len {
            return Err(Error::Length {
                expected: t_len,
                actual: targets.len(),
            });
        }
        if let Some(n) = noise {
            if n.len() != t_len {
                return Err(Error::Length {
                    expected: t_len,
                    actual: n.len(),
                });
            }
        }
        let num_rules = self.config.num_rules;
        let zeros = vec![0.0; num_rules];
        let mut state = self.initial_state.values().to_vec();
        let mut records = Vec::with_capacity(t_len);
        let mut loss = 0.0;
        for (t, f) in features.iter().enumerate() {
            let target = targets[t];
            if target >= self.config.num_actions {
                return Err(Error::Label {
                    row: t,
                    label: target,
                    classes: self.config.num_actions,
                });
            }
            self.check_feature(f)?;
            let (logits, trace) = self.rule_scorer.forward_traced(&self.input(&state, f))?;
            let g = noise.map_or(&zeros[..], |n| &n[t][..]);
            let sample =
                gumbel_softmax_with_noise(&logits, g, temperature, self.config.hard_transition)?;
            let in_target: Vec<f64> = logits
                .iter()
                .enumerate()
                .filter(|(r, _)| self.rule_action[*r] == target)
                .map(|(_, &l)| l)
                .collect();
            loss += logsumexp(&logits) - logsumexp(&in_target);
            let next = self.combine_states(&sample.output);
            state = next;
            records.push(StepRecord {
                trace,
                logits,
                sample,
            });
        }
        let scale = 1.0 / t_len as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite sequence loss".into()));
        }

        let s_dim = self.config.state_dim;
        let mut d_state = vec![0.0; s_dim];
        for t in (0..t_len).rev() {
            let rec = &records[t];
            let target = targets[t];
            let lse_all = logsumexp(&rec.logits);
            let in_target: Vec<f64> = rec
                .logits
                .iter()
                .enumerate()
                .filter(|(r, _)| self.rule_action[*r] == target)
                .map(|(_, &l)| l)
                .collect();
            let lse_target = logsumexp(&in_target);
            let mut d_logits: Vec<f64> = rec
                .logits
                .iter()
                .enumerate()
                .map(|(r, &l)| {
                    let mut g = (l - lse_all).exp();
                    if self.rule_action[r] == target {
                        g -= (l - lse_target).exp();
                    }
                    g * scale
                })
                .collect();

            // next_state = sum_r w_r E_r
            let mut d_weights = vec![0.0; num_rules];
            {
                let (e, de) = self.rule_next_state.values_and_grad_mut();
                for r in 0..num_rules {
                    let w = rec.sample.output[r];
                    let row = &e[r * s_dim..(r + 1) * s_dim];
                    let grow = &mut de[r * s_dim..(r + 1) * s_dim];
                    let mut acc = 0.0;
                    for k in 0..s_dim {
                        acc += row[k] * d_state[k];
                        grow[k] += w * d_state[k];
                    }
                    d_weights[r] = acc;
                }
            }
            for (dl, g) in d_logits
                .iter_mut()
                .zip(gumbel_softmax_backward(&rec.sample, &d_weights))
            {
                *dl += g;
            }
            let d_input = self.rule_scorer.backward(&rec.trace, &d_logits);
            d_state.copy_from_slice(&d_input[..s_dim]);
        }
        for (g, d) in self.initial_state.grad_mut().iter_mut().zip(&d_state) {
            *g += d;
        }
        Ok(loss)
    }

    /// Cross-entropy of the classifier head against `targets`; accumulates grads.
    pub fn head_loss(&mut self, features: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
        let mut logits = Vec::with_capacity(features.len());
        let mut traces = Vec::with_capacity(features.len());
        for f in features {
            self.check_feature(f)?;
            let (l, t) = self.classifier_head.forward_traced(f)?;
            logits.push(l);
            traces.push(t);
        }
        let lg = cross_entropy_logits(&logits, targets)?;
        for (t, g) in traces.iter().zip(&lg.grad) {
            self.classifier_head.backward(t, g);
        }
        Ok(lg.loss)
    }
}

impl Parameters for ModelParams {
    fn params(&self) -> Vec<&ParamArray> {
        let mut out = vec![&self.initial_state];
        out.extend(self.rule_scorer.params());
        out.push(&self.rule_next_state);
        out.extend(self.classifier_head.params());
        if let Some(p) = &self.embed_projection {
            out.push(p);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamArray> {
        let mut out = vec![&mut self.initial_state];
        out.extend(self.rule_scorer.params_mut());
        out.push(&mut self.rule_next_state);
        out.extend(self.classifier_head.params_mut());
        if let Some(p) = &mut self.embed_projection {
            out.push(p);
        }
        out
    }
}
