use crate::error::{Error, Result};
use crate::nn::param::ParamArray;

/// Adam optimizer state. Moments are allocated on the first step and are
/// bound to the order and shapes of the parameter list passed then.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_hyper(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.moments
    }

    /// Restores a saved step counter and moment buffers (e.g. on resume).
    pub fn restore(&mut self, step: u64, moments: Vec<(Vec<f64>, Vec<f64>)>) -> Result<()> {
        if moments.iter().any(|(m, v)| m.len() != v.len()) {
            return Err(Error::Parameter("adam moment pairs differ in length".into()));
        }
        self.step = step;
        self.moments = moments;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "adam hyperparameters out of range: lr={} beta1={} beta2={} eps={}",
                self.learning_rate, self.beta1, self.beta2, self.epsilon
            )))
        }
    }

    /// Applies one update, then zeroes every gradient.
    pub fn step(&mut self, params: &mut [&mut ParamArray]) -> Result<()> {
        self.validate()?;
        for p in params.iter() {
            if let Some(i) = p.grad().iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {} at index {i}",
                    p.name()
                )));
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::dim("adam parameter list", self.moments.len(), params.len()));
        }
        for (p, (m, _)) in params.iter().zip(&self.moments) {
            if m.len() != p.len() {
                return Err(Error::dim(format!("adam moments for {}", p.name()), m.len(), p.len()));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            let (values, grad) = p.values_and_grad_mut();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                grad[i] = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut p = ParamArray::from_values("p", &[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.values(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_is_bias_corrected() {
        let mut p = ParamArray::zeros("p", &[1]);
        p.grad_mut()[0] = 1.0;
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut p]).unwrap();
        // m_hat = v_hat = 1 so the step is lr / (1 + eps).
        assert!((p.values()[0] + 0.1).abs() < 1e-8);
        assert_eq!(p.grad()[0], 0.0);
    }

    #[test]
    fn counter_and_moments_advance() {
        let mut p = ParamArray::zeros("p", &[2]);
        let mut opt = Adam::new(0.01);
        for _ in 0..2 {
            p.grad_mut().copy_from_slice(&[0.5, -0.5]);
            opt.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(opt.steps(), 2);
        for (m, v) in opt.moments() {
            assert!(m.iter().all(|x| *x != 0.0));
            assert!(v.iter().all(|x| *x != 0.0));
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = ParamArray::zeros("rule_scorer.0.weight", &[2]);
        p.grad_mut()[1] = f64::NAN;
        let err = Adam::new(0.1).step(&mut [&mut p]).unwrap_err();
        assert!(err.to_string().contains("rule_scorer.0.weight"));
    }
}
