use crate::error::{Error, Result};

pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Vector-Jacobian product of softmax: given `y = softmax(z)` and `dL/dy`,
/// returns `dL/dz`.
pub fn softmax_backward(y: &[f64], grad_y: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(grad_y).map(|(a, b)| a * b).sum();
    y.iter().zip(grad_y).map(|(yi, gi)| yi * (gi - dot)).collect()
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Mean loss over rows plus the gradient w.r.t. each input row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
}

fn check_targets(rows: &[Vec<f64>], targets: &[usize]) -> Result<()> {
    if rows.len() != targets.len() {
        return Err(Error::Length {
            expected: rows.len(),
            actual: targets.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::Input("cross-entropy over zero frames".into()));
    }
    for (row, (r, &t)) in rows.iter().zip(targets).enumerate() {
        if t >= r.len() {
            return Err(Error::Label {
                row,
                label: t,
                classes: r.len(),
            });
        }
    }
    Ok(())
}

/// Cross-entropy of unnormalized logits against integer targets.
pub fn cross_entropy_logits(rows: &[Vec<f64>], targets: &[usize]) -> Result<LossGrad> {
    check_targets(rows, targets)?;
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let grad = rows
        .iter()
        .zip(targets)
        .map(|(z, &t)| {
            loss -= z[t] - logsumexp(z);
            let mut g = softmax(z);
            g[t] -= 1.0;
            g.iter_mut().for_each(|v| *v /= n);
            g
        })
        .collect();
    Ok(LossGrad { loss: loss / n, grad })
}

/// Cross-entropy of probability rows against integer targets.
pub fn cross_entropy_probs(rows: &[Vec<f64>], targets: &[usize]) -> Result<LossGrad> {
    check_targets(rows, targets)?;
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(rows.len());
    for (p, &t) in rows.iter().zip(targets) {
        if p[t] <= 0.0 {
            return Err(Error::Numeric(format!(
                "zero probability on target class {t}"
            )));
        }
        loss -= p[t].ln();
        let mut g = vec![0.0; p.len()];
        g[t] = -1.0 / (p[t] * n);
        grad.push(g);
    }
    Ok(LossGrad { loss: loss / n, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certain_prediction_has_zero_loss() {
        let l = cross_entropy_probs(&[vec![0.0, 1.0, 0.0]], &[1]).unwrap();
        assert_eq!(l.loss, 0.0);
    }

    #[test]
    fn uniform_over_four() {
        let l = cross_entropy_probs(&[vec![0.25; 4]], &[2]).unwrap();
        assert!((l.loss - 4f64.ln()).abs() < 1e-12);
        let l = cross_entropy_logits(&[vec![0.3; 4], vec![-1.0; 4]], &[0, 3]).unwrap();
        assert!((l.loss - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn direct_value() {
        let l = cross_entropy_probs(&[vec![0.7, 0.2, 0.1]], &[0]).unwrap();
        assert!((l.loss - 0.35667494393873245).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_target() {
        let err = cross_entropy_logits(&[vec![0.0, 0.0]], &[2]).unwrap_err();
        assert!(matches!(err, Error::Label { label: 2, classes: 2, .. }));
    }

    #[test]
    fn logits_gradient_matches_finite_differences() {
        let rows = vec![vec![0.3, -1.2, 2.0], vec![1.0, 0.5, -0.5]];
        let targets = [2, 0];
        let analytic = cross_entropy_logits(&rows, &targets).unwrap();
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut up = rows.clone();
                up[r][c] += h;
                let mut dn = rows.clone();
                dn[r][c] -= h;
                let fd = (cross_entropy_logits(&up, &targets).unwrap().loss
                    - cross_entropy_logits(&dn, &targets).unwrap().loss)
                    / (2.0 * h);
                assert!((fd - analytic.grad[r][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
