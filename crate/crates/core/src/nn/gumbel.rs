//! Gumbel-Softmax relaxation of categorical sampling.
//!
//! `y = softmax((logits + g) / tau)` with `g_i ~ Gumbel(0, 1)`. In hard mode
//! the forward output is the one-hot of `argmax y`, and gradients are taken
//! through the soft `y` (straight-through).

use crate::error::{Error, Result};
use crate::nn::loss::{argmax, softmax, softmax_backward};
use crate::nn::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    /// Relaxed sample.
    pub soft: Vec<f64>,
    /// What the caller consumes: `soft`, or its one-hot when hard.
    pub output: Vec<f64>,
    /// Argmax of the relaxed sample.
    pub index: usize,
    pub temperature: f64,
}

fn check(logits: &[f64], temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::Input("empty logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(())
}

pub fn sample_noise(rng: &mut RngState, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gumbel()).collect()
}

/// Deterministic relaxation given pre-drawn Gumbel noise.
pub fn gumbel_softmax_with_noise(
    logits: &[f64],
    noise: &[f64],
    temperature: f64,
    hard: bool,
) -> Result<GumbelSample> {
    check(logits, temperature)?;
    if noise.len() != logits.len() {
        return Err(Error::dim("gumbel noise", logits.len(), noise.len()));
    }
    let scaled: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / temperature)
        .collect();
    let soft = softmax(&scaled);
    let index = argmax(&soft);
    let output = if hard {
        let mut one_hot = vec![0.0; soft.len()];
        one_hot[index] = 1.0;
        one_hot
    } else {
        soft.clone()
    };
    Ok(GumbelSample {
        soft,
        output,
        index,
        temperature,
    })
}

pub fn gumbel_softmax_sample(
    logits: &[f64],
    temperature: f64,
    rng: &mut RngState,
    hard: bool,
) -> Result<GumbelSample> {
    check(logits, temperature)?;
    let noise = sample_noise(rng, logits.len());
    gumbel_softmax_with_noise(logits, &noise, temperature, hard)
}

/// Gradient w.r.t. the logits given the gradient w.r.t. `sample.output`.
pub fn gumbel_softmax_backward(sample: &GumbelSample, grad_output: &[f64]) -> Vec<f64> {
    let mut g = softmax_backward(&sample.soft, grad_output);
    g.iter_mut().for_each(|v| *v /= sample.temperature);
    g
}
