use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of a batch-norm layer, updated in place during
/// training-mode forwards.
#[derive(Clone, Debug)]
pub struct BatchNormState<T: Real> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

/// Per-channel batch normalization over (N, H, W).
///
/// Training mode normalizes with the biased batch variance and blends the
/// batch moments into the running statistics as
/// `(1 - momentum) old + momentum batch`. Inference mode is the frozen
/// affine map given by the running statistics.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &BatchNormState<T>,
    training: bool,
    eps: f64,
    momentum: f64,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = *x.shape() else {
        return Err(Error::shape("batch_norm", format!("expected (N,C,H,W), got {:?}", x.shape())));
    };
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", &state.running_mean),
        ("running_var", &state.running_var),
    ] {
        if t.shape() != [c] {
            return Err(Error::shape("batch_norm", format!("{name} {:?} for {c} channels", t.shape())));
        }
    }
    let hw = h * w;
    let m = n * hw;
    if m == 0 {
        return Err(Error::shape("batch_norm", "zero-size channel"));
    }

    let xd = x.data();
    let at = move |ni: usize, ci: usize| (ni * c + ci) * hw;

    let (mean, inv_std): (Vec<f64>, Vec<f64>) = if training {
        let mut mean = vec![0f64; c];
        let mut var = vec![0f64; c];
        for ci in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                s += xd[at(ni, ci)..at(ni, ci) + hw].iter().map(|v| v.f64()).sum::<f64>();
            }
            let mu = s / m as f64;
            let mut ss = 0.0;
            for ni in 0..n {
                ss += xd[at(ni, ci)..at(ni, ci) + hw]
                    .iter()
                    .map(|v| (v.f64() - mu).powi(2))
                    .sum::<f64>();
            }
            mean[ci] = mu;
            var[ci] = ss / m as f64;
        }
        {
            let mut rm = state.running_mean.data_mut();
            let mut rv = state.running_var.data_mut();
            for ci in 0..c {
                rm[ci] = T::of((1.0 - momentum) * rm[ci].f64() + momentum * mean[ci]);
                rv[ci] = T::of((1.0 - momentum) * rv[ci].f64() + momentum * var[ci]);
            }
        }
        let inv = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        (mean, inv)
    } else {
        let rm = state.running_mean.data();
        let rv = state.running_var.data();
        (
            rm.iter().map(|v| v.f64()).collect(),
            rv.iter().map(|v| 1.0 / (v.f64() + eps).sqrt()).collect(),
        )
    };

    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = vec![T::zero(); xd.len()];
    let mut xhat = vec![T::zero(); xd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let (g, b) = (gd[ci].f64(), bd[ci].f64());
            let base = at(ni, ci);
            for i in base..base + hw {
                let xh = (xd[i].f64() - mean[ci]) * inv_std[ci];
                xhat[i] = T::of(xh);
                out[i] = T::of(g * xh + b);
            }
        }
    }
    drop((xd, gd, bd));

    let parents = vec![x.clone(), gamma.clone(), beta.clone()];
    Ok(Tensor::from_op(x.shape().to_vec(), out, "batch_norm", parents, || {
        let (gamma, rx, rg, rb) = (gamma.clone(), x.requires_grad(), gamma.requires_grad(), beta.requires_grad());
        Box::new(move |gout| {
            let gd = gamma.data();
            let mut sum_g = vec![0f64; c];
            let mut sum_gx = vec![0f64; c];
            for ni in 0..n {
                for ci in 0..c {
                    let base = at(ni, ci);
                    for i in base..base + hw {
                        sum_g[ci] += gout[i].f64();
                        sum_gx[ci] += gout[i].f64() * xhat[i].f64();
                    }
                }
            }
            let dx = rx.then(|| {
                let mut dx = vec![T::zero(); gout.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let g = gd[ci].f64();
                        let base = at(ni, ci);
                        for i in base..base + hw {
                            dx[i] = T::of(if training {
                                // d/dx of gamma * (x - mean) / std with batch moments.
                                g * inv_std[ci] / m as f64
                                    * (m as f64 * gout[i].f64() - sum_g[ci] - xhat[i].f64() * sum_gx[ci])
                            } else {
                                g * inv_std[ci] * gout[i].f64()
                            });
                        }
                    }
                }
                dx
            });
            vec![
                dx,
                rg.then(|| sum_gx.iter().map(|&v| T::of(v)).collect()),
                rb.then(|| sum_g.iter().map(|&v| T::of(v)).collect()),
            ]
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(c: usize) -> BatchNormState<f64> {
        BatchNormState {
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::full(&[c], 1.0),
        }
    }

    #[test]
    fn standardized_batch_is_fixed_point() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let y = batch_norm(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &state(1), true, BN_EPS, BN_MOMENTUM).unwrap();
        for (a, b) in y.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::<f64>::new(&[2, 1, 1, 3], vec![1.0, 5.0, -2.0, 0.0, 3.0, 9.0]).unwrap();
        let y = batch_norm(&x, &Tensor::zeros(&[1]), &Tensor::full(&[1], 5.0), &state(1), true, BN_EPS, BN_MOMENTUM).unwrap();
        assert_eq!(y.to_vec(), vec![5.0; 6]);
    }

    #[test]
    fn training_output_moments() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| ((i * 7919) % 101) as f64 * 0.3 - 4.0).collect();
        let x = Tensor::<f64>::new(&[2, 3, 4, 4], data.clone()).unwrap();
        let st = state(3);
        let y = batch_norm(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &st, true, BN_EPS, BN_MOMENTUM).unwrap().to_vec();
        for ci in 0..3 {
            let pick = |v: &[f64]| -> Vec<f64> {
                (0..2).flat_map(|n| v[(n * 3 + ci) * 16..(n * 3 + ci) * 16 + 16].to_vec()).collect()
            };
            let (xs, ys) = (pick(&data), pick(&y));
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let var = |v: &[f64]| {
                let m = mean(v);
                v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
            };
            assert!(mean(&ys).abs() < 1e-12);
            let sigma2 = var(&xs);
            assert!((var(&ys) - sigma2 / (sigma2 + BN_EPS)).abs() < 1e-12);
            // running stats moved a tenth of the way from (0, 1)
            assert!((st.running_mean.data()[ci] - 0.1 * mean(&xs)).abs() < 1e-12);
            assert!((st.running_var.data()[ci] - (0.9 + 0.1 * sigma2)).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_is_frozen_affine() {
        let st = state(1);
        st.running_mean.data_mut()[0] = 2.0;
        st.running_var.data_mut()[0] = 4.0;
        let x = Tensor::<f64>::new(&[1, 1, 1, 3], vec![0.0, 2.0, 6.0]).unwrap();
        let y = batch_norm(&x, &Tensor::full(&[1], 3.0), &Tensor::full(&[1], 1.0), &st, false, 0.0, BN_MOMENTUM).unwrap();
        assert_eq!(y.to_vec(), vec![-2.0, 1.0, 7.0]);
        assert_eq!(st.running_mean.data()[0], 2.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        assert!(batch_norm(&x, &Tensor::zeros(&[3]), &Tensor::zeros(&[2]), &state(2), true, BN_EPS, BN_MOMENTUM).is_err());
        let empty = Tensor::<f64>::zeros(&[0, 2, 2, 2]);
        assert!(batch_norm(&empty, &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &state(2), true, BN_EPS, BN_MOMENTUM).is_err());
    }
}
