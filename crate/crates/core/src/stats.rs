use crate::error::{Error, Result};

/// Linear-interpolation quantile between order statistics:
/// rank `h = q (n - 1)`, result `v[floor h] + (h - floor h)(v[ceil h] - v[floor h])`.
///
/// `values` is reordered in place.
pub fn quantile(values: &mut [f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile fraction {q} outside [0, 1]")));
    }
    let h = q * (values.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let (_, &mut v_lo, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let v_hi = if hi == lo {
        v_lo
    } else {
        upper.iter().copied().min_by(f64::total_cmp).expect("hi index exists")
    };
    Ok(v_lo + (h - lo as f64) * (v_hi - v_lo))
}

/// Convenience wrapper over an iterator of 32-bit samples.
pub fn quantile_of(values: impl IntoIterator<Item = f32>, q: f64) -> Result<f64> {
    let mut v: Vec<f64> = values.into_iter().map(f64::from).collect();
    quantile(&mut v, q)
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
