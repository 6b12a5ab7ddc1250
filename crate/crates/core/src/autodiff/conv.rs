//! 2-D cross-correlation via im2col + GEMM.
//!
//! The output is produced in row bands so the unfolded patch matrix stays
//! a few megabytes even for 256x256 feature maps with 64 channels.

use rayon::prelude::*;

use super::real::{gemm, MatLayout, Real};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Target element count of one unfolded band.
const BAND_ELEMS: usize = 1 << 20;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn band_rows(&self) -> usize {
        (BAND_ELEMS / (self.patch() * self.ow).max(1)).clamp(1, self.oh)
    }

    fn bands(&self) -> Vec<(usize, usize)> {
        let step = self.band_rows();
        (0..self.oh)
            .step_by(step)
            .map(|r0| (r0, (r0 + step).min(self.oh)))
            .collect()
    }

    /// Unfolds output rows `[r0, r1)` of sample `x` (one image, CHW) into a
    /// `patch x ((r1-r0) ow)` row-major matrix.
    fn im2col<T: Real>(&self, x: &[T], r0: usize, r1: usize, col: &mut Vec<T>) {
        let cols = (r1 - r0) * self.ow;
        col.clear();
        col.resize(self.patch() * cols, T::zero());
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for (oi, orow) in (r0..r1).enumerate() {
                        let iy = (orow * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for oc in 0..self.ow {
                            let ix = (oc * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[oi * self.ow + oc] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a band's patch-gradient matrix back onto the image.
    fn col2im<T: Real>(&self, col: &[T], r0: usize, r1: usize, dx: &mut [T]) {
        let cols = (r1 - r0) * self.ow;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    for (oi, orow) in (r0..r1).enumerate() {
                        let iy = (orow * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for oc in 0..self.ow {
                            let ix = (oc * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] = dst[ix as usize] + src[oi * self.ow + oc];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Geometry> {
    let err = |m: String| Error::shape("conv2d", m);
    let [n, cin, h, w] = *x.shape() else {
        return Err(err(format!("input must be (N,C,H,W), got {:?}", x.shape())));
    };
    let [cout, wcin, k, k2] = *weight.shape() else {
        return Err(err(format!("weight must be (Cout,Cin,k,k), got {:?}", weight.shape())));
    };
    if wcin != cin || k != k2 || k % 2 == 0 {
        return Err(err(format!(
            "weight {:?} incompatible with input {:?} (odd square kernel required)",
            weight.shape(),
            x.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(err(format!("bias {:?} for {cout} output channels", b.shape())));
        }
    }
    if stride == 0 {
        return Err(err("stride must be positive".into()));
    }
    let span_h = (h + 2 * pad).checked_sub(k).ok_or_else(|| err(format!("kernel {k} larger than padded height")))?;
    let span_w = (w + 2 * pad).checked_sub(k).ok_or_else(|| err(format!("kernel {k} larger than padded width")))?;
    if span_h % stride != 0 || span_w % stride != 0 {
        return Err(err(format!(
            "non-integral output size for {h}x{w}, k={k}, stride={stride}, pad={pad}"
        )));
    }
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        k,
        stride,
        pad,
        oh: span_h / stride + 1,
        ow: span_w / stride + 1,
    })
}

fn forward<T: Real>(g: &Geometry, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (ihw, ohw) = (g.cin * g.h * g.w, g.oh * g.ow);
    let la = MatLayout::row_major(g.cout, g.patch());
    let mut out = vec![T::zero(); g.n * g.cout * ohw];
    if g.pointwise() {
        out.par_chunks_mut(g.cout * ohw).enumerate().for_each(|(ni, o)| {
            let xs = &x[ni * ihw..(ni + 1) * ihw];
            gemm(wt, la, xs, MatLayout::row_major(g.cin, ohw), T::zero(), o, MatLayout::row_major(g.cout, ohw));
        });
    } else {
        let tasks: Vec<(usize, usize, usize)> = (0..g.n)
            .flat_map(|ni| g.bands().into_iter().map(move |(r0, r1)| (ni, r0, r1)))
            .collect();
        let blocks: Vec<Vec<T>> = tasks
            .par_iter()
            .map_init(Vec::new, |col, &(ni, r0, r1)| {
                g.im2col(&x[ni * ihw..(ni + 1) * ihw], r0, r1, col);
                let cols = (r1 - r0) * g.ow;
                let mut block = vec![T::zero(); g.cout * cols];
                gemm(wt, la, col, MatLayout::row_major(g.patch(), cols), T::zero(), &mut block, MatLayout::row_major(g.cout, cols));
                block
            })
            .collect();
        for (&(ni, r0, r1), block) in tasks.iter().zip(&blocks) {
            let cols = (r1 - r0) * g.ow;
            for co in 0..g.cout {
                let dst = (ni * g.cout + co) * ohw + r0 * g.ow;
                out[dst..dst + cols].copy_from_slice(&block[co * cols..(co + 1) * cols]);
            }
        }
    }
    if let Some(b) = bias {
        out.par_chunks_mut(ohw).enumerate().for_each(|(i, plane)| {
            let bv = b[i % g.cout];
            plane.iter_mut().for_each(|v| *v = *v + bv);
        });
    }
    out
}

fn backward_weight<T: Real>(g: &Geometry, x: &[T], gout: &[T]) -> Vec<T> {
    let (ihw, ohw) = (g.cin * g.h * g.w, g.oh * g.ow);
    let lc = MatLayout::row_major(g.cout, g.patch());
    let partials: Vec<Vec<T>> = if g.pointwise() {
        (0..g.n)
            .into_par_iter()
            .map(|ni| {
                let mut dw = vec![T::zero(); g.cout * g.patch()];
                gemm(
                    &gout[ni * g.cout * ohw..],
                    MatLayout::row_major(g.cout, ohw),
                    &x[ni * ihw..(ni + 1) * ihw],
                    MatLayout::row_major(g.cin, ohw).t(),
                    T::zero(),
                    &mut dw,
                    lc,
                );
                dw
            })
            .collect()
    } else {
        let tasks: Vec<(usize, usize, usize)> = (0..g.n)
            .flat_map(|ni| g.bands().into_iter().map(move |(r0, r1)| (ni, r0, r1)))
            .collect();
        tasks
            .par_iter()
            .map_init(Vec::new, |col, &(ni, r0, r1)| {
                g.im2col(&x[ni * ihw..(ni + 1) * ihw], r0, r1, col);
                let cols = (r1 - r0) * g.ow;
                let mut dw = vec![T::zero(); g.cout * g.patch()];
                let ga = MatLayout {
                    rows: g.cout,
                    cols,
                    rs: ohw,
                    cs: 1,
                };
                gemm(
                    &gout[ni * g.cout * ohw + r0 * g.ow..],
                    ga,
                    col,
                    MatLayout::row_major(g.patch(), cols).t(),
                    T::zero(),
                    &mut dw,
                    lc,
                );
                dw
            })
            .collect()
    };
    // Fixed-order reduction keeps the result independent of scheduling.
    let mut iter = partials.into_iter();
    let mut acc = iter.next().unwrap_or_else(|| vec![T::zero(); g.cout * g.patch()]);
    for p in iter {
        acc.iter_mut().zip(p).for_each(|(a, b)| *a = *a + b);
    }
    acc
}

fn backward_input<T: Real>(g: &Geometry, wt: &[T], gout: &[T]) -> Vec<T> {
    let (ihw, ohw) = (g.cin * g.h * g.w, g.oh * g.ow);
    let wt_t = MatLayout::row_major(g.cout, g.patch()).t();
    let mut dx = vec![T::zero(); g.n * ihw];
    dx.par_chunks_mut(ihw).enumerate().for_each(|(ni, dxn)| {
        if g.pointwise() {
            gemm(
                wt,
                wt_t,
                &gout[ni * g.cout * ohw..(ni + 1) * g.cout * ohw],
                MatLayout::row_major(g.cout, ohw),
                T::zero(),
                dxn,
                MatLayout::row_major(g.cin, ohw),
            );
            return;
        }
        let mut col = Vec::new();
        for (r0, r1) in g.bands() {
            let cols = (r1 - r0) * g.ow;
            col.clear();
            col.resize(g.patch() * cols, T::zero());
            let gb = MatLayout {
                rows: g.cout,
                cols,
                rs: ohw,
                cs: 1,
            };
            gemm(
                wt,
                wt_t,
                &gout[ni * g.cout * ohw + r0 * g.ow..],
                gb,
                T::zero(),
                &mut col,
                MatLayout::row_major(g.patch(), cols),
            );
            g.col2im(&col, r0, r1, dxn);
        }
    });
    dx
}

/// Cross-correlation of `x` (N,Cin,H,W) with `weight` (Cout,Cin,k,k),
/// zero padding `pad` and step `stride`.
pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let g = geometry(x, weight, bias, stride, pad)?;
    let out = {
        let b = bias.map(|b| b.data());
        forward(&g, &x.data(), &weight.data(), b.as_deref().map(Vec::as_slice))
    };
    let mut parents = vec![x.clone(), weight.clone()];
    parents.extend(bias.cloned());
    Ok(Tensor::from_op(vec![g.n, g.cout, g.oh, g.ow], out, "conv2d", parents, || {
        let (x, weight) = (x.clone(), weight.clone());
        let has_bias = bias.is_some();
        let bias_grad = bias.is_some_and(Tensor::requires_grad);
        Box::new(move |gout| {
            let dx = x.requires_grad().then(|| backward_input(&g, &weight.data(), gout));
            let dw = weight.requires_grad().then(|| backward_weight(&g, &x.data(), gout));
            let mut grads = vec![dx, dw];
            if has_bias {
                grads.push(bias_grad.then(|| {
                    let ohw = g.oh * g.ow;
                    let mut db = vec![0f64; g.cout];
                    for (i, plane) in gout.chunks_exact(ohw).enumerate() {
                        db[i % g.cout] += plane.iter().map(|v| v.f64()).sum::<f64>();
                    }
                    db.into_iter().map(T::of).collect()
                }));
            }
            grads
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::super::ops::sum;
    use super::*;

    /// Direct nested-loop reference.
    fn naive(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let [n, cin, h, wd] = xs;
        let [cout, _, k, _] = ws;
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * cout * oh * ow];
        for ni in 0..n {
            for co in 0..cout {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut s = b[co];
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let y = (i * stride + ki) as isize - pad as isize;
                                    let xx = (j * stride + kj) as isize - pad as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                        s += x[((ni * cin + ci) * h + y as usize) * wd + xx as usize]
                                            * w[((co * cin + ci) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        out[((ni * cout + co) * oh + i) * ow + j] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        assert_eq!(conv2d(&x, &w, Some(&b), 1, 0).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.to_vec(), vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn pointwise_weight_grad_is_input_sum() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.5]).unwrap();
        let w = Tensor::param(&[1, 1, 1, 1], vec![0.7]).unwrap();
        sum(&conv2d(&x, &w, None, 1, 0).unwrap()).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![10.5]);
    }

    #[test]
    fn matches_naive_with_stride_and_bands() {
        let xs = [2, 3, 9, 7];
        let ws = [4, 3, 3, 3];
        let x: Vec<f64> = (0..xs.iter().product::<usize>()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let w: Vec<f64> = (0..ws.iter().product::<usize>()).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.7).collect();
        let b = vec![0.5, -1.0, 0.0, 2.0];
        for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
            if (xs[2] + 2 * pad - 3) % stride != 0 || (xs[3] + 2 * pad - 3) % stride != 0 {
                continue;
            }
            let xt = Tensor::new(&xs, x.clone()).unwrap();
            let wt = Tensor::new(&ws, w.clone()).unwrap();
            let bt = Tensor::new(&[4], b.clone()).unwrap();
            let got = conv2d(&xt, &wt, Some(&bt), stride, pad).unwrap().to_vec();
            let want = naive(&x, xs, &w, ws, &b, stride, pad);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), None, 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 2, 2]), None, 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), None, 2, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), Some(&Tensor::zeros(&[2])), 1, 1).is_err());
    }
}
