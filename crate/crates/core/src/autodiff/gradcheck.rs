use super::tensor::{no_grad, Tensor};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    pub max_rel_error: f64,
    /// (leaf index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` must rebuild its graph from `leaves` on every call and be
/// deterministic. Leaves that `f` never touches count as zero gradients.
pub fn grad_check<F>(f: F, leaves: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    if let Some(i) = leaves.iter().position(|l| !l.is_leaf() || !l.requires_grad()) {
        return Err(Error::Gradient(format!("grad_check input {i} is not a trainable leaf")));
    }
    leaves.iter().for_each(Tensor::zero_grad);
    let out = f(leaves)?;
    out.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();
    drop(out);

    let eval = || -> Result<f64> { no_grad(|| f(leaves)).map(|t| t.item()) };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (li, leaf) in leaves.iter().enumerate() {
        for i in 0..leaf.numel() {
            let orig = leaf.data()[i];
            leaf.data_mut()[i] = orig + eps;
            let plus = eval();
            leaf.data_mut()[i] = orig - eps;
            let minus = eval();
            leaf.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic[li][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((li, i));
            }
        }
    }
    Ok(report)
}
