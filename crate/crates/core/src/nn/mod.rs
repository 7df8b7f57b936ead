//! Small differentiable kernel: dense layers, softmax and Gumbel-Softmax,
//! cross-entropy, Adam and a finite-difference gradient checker.
//!
//! Every differentiable op comes with a hand-written backward function;
//! there is no general autograd. All arithmetic is `f64`.

mod adam;
mod gradcheck;
mod gumbel;
mod loss;
mod mlp;
mod param;
mod rng;

pub use adam::Adam;
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use gumbel::{
    gumbel_softmax_backward, gumbel_softmax_sample, gumbel_softmax_with_noise, sample_noise,
    GumbelSample,
};
pub use loss::{
    argmax, cross_entropy_logits, cross_entropy_probs, logsumexp, softmax, softmax_backward,
    LossGrad,
};
pub use mlp::{mlp_apply, mlp_backward, Activation, Dense, Mlp, MlpTrace};
pub use param::{ParamArray, Parameters};
pub use rng::RngState;
