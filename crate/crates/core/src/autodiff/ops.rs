//! Elementwise, reduction and layout operations.

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn same_shape<T: Real>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn nchw<T: Real>(op: &str, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::shape(op, format!("expected (N,C,H,W), got {s:?}"))),
    }
}

fn need<T: Real>(t: &Tensor<T>, g: impl FnOnce() -> Vec<T>) -> Option<Vec<T>> {
    t.requires_grad().then(g)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    let (ra, rb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(a.shape().to_vec(), data, "add", vec![a.clone(), b.clone()], || {
        Box::new(move |g| vec![ra.then(|| g.to_vec()), rb.then(|| g.to_vec())])
    }))
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x - y).collect();
    let (ra, rb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(a.shape().to_vec(), data, "sub", vec![a.clone(), b.clone()], || {
        Box::new(move |g| vec![ra.then(|| g.to_vec()), rb.then(|| g.iter().map(|&v| -v).collect())])
    }))
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, "mul", vec![a.clone(), b.clone()], || {
        let (a, b) = (a.clone(), b.clone());
        Box::new(move |g| {
            vec![
                need(&a, || g.iter().zip(b.data().iter()).map(|(&g, &y)| g * y).collect()),
                need(&b, || g.iter().zip(a.data().iter()).map(|(&g, &x)| g * x).collect()),
            ]
        })
    }))
}

pub fn scale<T: Real>(a: &Tensor<T>, s: T) -> Tensor<T> {
    let data = a.data().iter().map(|&x| x * s).collect();
    Tensor::from_op(a.shape().to_vec(), data, "scale", vec![a.clone()], || {
        Box::new(move |g| vec![Some(g.iter().map(|&v| v * s).collect())])
    })
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_op(x.shape().to_vec(), data, "relu", vec![x.clone()], || {
        let x = x.clone();
        Box::new(move |g| {
            vec![Some(
                g.iter()
                    .zip(x.data().iter())
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect(),
            )]
        })
    })
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x
        .data()
        .iter()
        .map(|&v| T::one() / (T::one() + (-v).exp()))
        .collect();
    let saved = data.clone();
    Tensor::from_op(x.shape().to_vec(), data, "sigmoid", vec![x.clone()], move || {
        Box::new(move |g| {
            vec![Some(
                g.iter()
                    .zip(&saved)
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect(),
            )]
        })
    })
}

/// Sum of all elements as a scalar.
pub fn sum<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = T::of(x.data().iter().map(|v| v.f64()).sum::<f64>());
    let n = x.numel();
    Tensor::from_op(vec![], vec![s], "sum", vec![x.clone()], || {
        Box::new(move |g| vec![Some(vec![g[0]; n])])
    })
}

/// Stacks along the channel axis: axis 1 for (N,C,H,W), axis 0 for (C,H,W).
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let rank = a.shape().len();
    if rank < 3 || b.shape().len() != rank {
        return Err(Error::shape(
            "concat_channels",
            format!("{:?} with {:?}", a.shape(), b.shape()),
        ));
    }
    let axis = rank - 3;
    let compatible = a
        .shape()
        .iter()
        .zip(b.shape())
        .enumerate()
        .all(|(i, (x, y))| i == axis || x == y);
    if !compatible {
        return Err(Error::shape(
            "concat_channels",
            format!("{:?} with {:?}", a.shape(), b.shape()),
        ));
    }
    let outer: usize = a.shape()[..axis].iter().product();
    let inner: usize = a.shape()[axis + 1..].iter().product();
    let (ca, cb) = (a.shape()[axis], b.shape()[axis]);
    let (sa, sb) = (ca * inner, cb * inner);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    {
        let (da, db) = (a.data(), b.data());
        for o in 0..outer {
            data.extend_from_slice(&da[o * sa..(o + 1) * sa]);
            data.extend_from_slice(&db[o * sb..(o + 1) * sb]);
        }
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = ca + cb;
    let (ra, rb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(shape, data, "concat_channels", vec![a.clone(), b.clone()], || {
        Box::new(move |g| {
            let split = |off: usize, len: usize| {
                (0..outer)
                    .flat_map(|o| &g[o * (sa + sb) + off..o * (sa + sb) + off + len])
                    .copied()
                    .collect::<Vec<_>>()
            };
            vec![ra.then(|| split(0, sa)), rb.then(|| split(sa, sb))]
        })
    }))
}

/// Per-channel spatial mean: (N,C,H,W) -> (N,C,1,1).
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw("global_avg_pool", x)?;
    let hw = h * w;
    if hw == 0 {
        return Err(Error::shape("global_avg_pool", "empty spatial extent"));
    }
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|plane| T::of(plane.iter().map(|v| v.f64()).sum::<f64>() / hw as f64))
        .collect();
    Ok(Tensor::from_op(vec![n, c, 1, 1], data, "global_avg_pool", vec![x.clone()], || {
        let inv = T::of(1.0 / hw as f64);
        Box::new(move |g| {
            vec![Some(
                g.iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, hw))
                    .collect(),
            )]
        })
    }))
}

/// Broadcast multiply of (N,C,H,W) by per-channel weights (N,C,1,1).
pub fn mul_channels<T: Real>(x: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw("mul_channels", x)?;
    if weights.shape() != [n, c, 1, 1] {
        return Err(Error::shape(
            "mul_channels",
            format!("weights {:?} for input {:?}", weights.shape(), x.shape()),
        ));
    }
    let hw = h * w;
    let data = x
        .data()
        .chunks_exact(hw.max(1))
        .zip(weights.data().iter())
        .flat_map(|(plane, &s)| plane.iter().map(move |&v| v * s))
        .collect();
    Ok(Tensor::from_op(x.shape().to_vec(), data, "mul_channels", vec![x.clone(), weights.clone()], || {
        let (x, weights) = (x.clone(), weights.clone());
        Box::new(move |g| {
            let gx = need(&x, || {
                g.chunks_exact(hw.max(1))
                    .zip(weights.data().iter())
                    .flat_map(|(plane, &s)| plane.iter().map(move |&v| v * s))
                    .collect()
            });
            let gw = need(&weights, || {
                g.chunks_exact(hw.max(1))
                    .zip(x.data().chunks_exact(hw.max(1)))
                    .map(|(gp, xp)| T::of(gp.iter().zip(xp).map(|(&a, &b)| (a * b).f64()).sum::<f64>()))
                    .collect()
            });
            vec![gx, gw]
        })
    }))
}

fn shuffle_index(c: usize, h: usize, w: usize, r: usize) -> impl Fn(usize, usize, usize, usize) -> (usize, usize) {
    // (n, c_out, y, x) in output -> (input offset, output offset)
    let (oh, ow) = (h * r, w * r);
    let cin = c * r * r;
    move |n, co, y, x| {
        let (i, di) = (y / r, y % r);
        let (j, dj) = (x / r, x % r);
        let ci = co * r * r + di * r + dj;
        let src = ((n * cin + ci) * h + i) * w + j;
        let dst = ((n * c + co) * oh + y) * ow + x;
        (src, dst)
    }
}

/// Sub-pixel rearrangement (N, C r^2, H, W) -> (N, C, rH, rW) with
/// `out[n, c, r i + di, r j + dj] = in[n, c r^2 + di r + dj, i, j]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, cin, h, w) = nchw("pixel_shuffle", x)?;
    if r == 0 || cin % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{cin} channels not divisible by r^2 = {}", r * r),
        ));
    }
    let c = cin / (r * r);
    let idx = shuffle_index(c, h, w, r);
    let mut data = vec![T::zero(); x.numel()];
    {
        let src = x.data();
        for ni in 0..n {
            for co in 0..c {
                for y in 0..h * r {
                    for xx in 0..w * r {
                        let (s, d) = idx(ni, co, y, xx);
                        data[d] = src[s];
                    }
                }
            }
        }
    }
    let total = x.numel();
    Ok(Tensor::from_op(vec![n, c, h * r, w * r], data, "pixel_shuffle", vec![x.clone()], move || {
        Box::new(move |g| {
            let idx = shuffle_index(c, h, w, r);
            let mut gx = vec![T::zero(); total];
            for ni in 0..n {
                for co in 0..c {
                    for y in 0..h * r {
                        for xx in 0..w * r {
                            let (s, d) = idx(ni, co, y, xx);
                            gx[s] = g[d];
                        }
                    }
                }
            }
            vec![Some(gx)]
        })
    }))
}

/// Batch-mean of per-example L1 norms: `(1/N) sum_n ||pred_n - gt_n||_1`.
/// The subgradient at a tie is 0.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("l1_loss", pred, gt)?;
    let n = *pred
        .shape()
        .first()
        .filter(|&&n| n >= 1)
        .ok_or_else(|| Error::shape("l1_loss", format!("need a batch axis, got {:?}", pred.shape())))?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(gt.data().iter())
        .map(|(&p, &g)| (p - g).abs().f64())
        .sum();
    let value = T::of(total / n as f64);
    Ok(Tensor::from_op(vec![], vec![value], "l1_loss", vec![pred.clone(), gt.clone()], || {
        let (pred, gt) = (pred.clone(), gt.clone());
        let inv_n = T::of(1.0 / n as f64);
        Box::new(move |g| {
            let up = g[0] * inv_n;
            let signs: Vec<T> = pred
                .data()
                .iter()
                .zip(gt.data().iter())
                .map(|(&p, &t)| {
                    if p > t {
                        up
                    } else if p < t {
                        -up
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let g_gt = need(&gt, || signs.iter().map(|&v| -v).collect());
            vec![pred.requires_grad().then_some(signs), g_gt]
        })
    }))
}
