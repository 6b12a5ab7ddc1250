//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use deepntl::autodiff::{
    add, batch_norm, concat_channels, conv2d, global_avg_pool, grad_check, l1_loss, mul, mul_channels, pixel_shuffle, relu,
    scale, sigmoid, sub, sum, BatchNormState, Tensor,
};
use deepntl::calib::CalibrationStack;
use deepntl::raster::{Mask, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_raster(rng: &mut ChaCha8Rng, rows: usize, cols: usize, hi: f32) -> Raster {
    Raster::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.0..hi)).collect()).unwrap()
}

// ---------------------------------------------------------------- metrics

fn grid_means(a: &Raster, b: &Raster) -> (f64, f64, f64) {
    let (rows, cols) = a.dims();
    let (mut sa, mut sb) = (0.0, 0.0);
    for i in 0..rows {
        for j in 0..cols {
            sa += a.get(i, j) as f64;
            sb += b.get(i, j) as f64;
        }
    }
    let n = (rows * cols) as f64;
    (sa / n, sb / n, n)
}

/// Second moments about the means: (var_a, var_b, cov), population form.
fn grid_moments(a: &Raster, b: &Raster) -> (f64, f64, f64, f64, f64) {
    let (ma, mb, n) = grid_means(a, b);
    let (rows, cols) = a.dims();
    let (mut va, mut vb, mut cv) = (0.0, 0.0, 0.0);
    for i in 0..rows {
        for j in 0..cols {
            let (x, y) = (a.get(i, j) as f64 - ma, b.get(i, j) as f64 - mb);
            va += x * x;
            vb += y * y;
            cv += x * y;
        }
    }
    (ma, mb, va / n, vb / n, cv / n)
}

pub fn naive_pearson(gt: &Raster, sr: &Raster) -> f64 {
    let (_, _, va, vb, cv) = grid_moments(gt, sr);
    cv / (va.sqrt() * vb.sqrt())
}

pub fn naive_psnr(gt: &Raster, sr: &Raster, max: f64) -> f64 {
    let (rows, cols) = gt.dims();
    let mut se = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let d = gt.get(i, j) as f64 - sr.get(i, j) as f64;
            se += d * d;
        }
    }
    let mse = se / (rows * cols) as f64;
    10.0 * (max * max / mse).log10()
}

pub fn naive_ssim(gt: &Raster, sr: &Raster, max: f64) -> f64 {
    let (mg, ms, vg, vs, cv) = grid_moments(gt, sr);
    let (c1, c2) = ((0.01 * max).powi(2), (0.03 * max).powi(2));
    let (sg, ss) = (vg.sqrt(), vs.sqrt());
    let c3 = c2 / 2.0;
    // luminance, contrast and structure terms with C3 = C2 / 2
    let l = (2.0 * mg * ms + c1) / (mg * mg + ms * ms + c1);
    let c = (2.0 * sg * ss + c2) / (vg + vs + c2);
    let s = (cv + c3) / (sg * ss + c3);
    l * c * s
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ------------------------------------------------------------ calibration

fn oracle_quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let h = q * (v.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn cv(values: &[f64]) -> Option<f32> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((var.sqrt() / mean) as f32)
}

/// Calibration-field mask by direct enumeration of every pixel, window and
/// product. Rasters must be free of nodata.
pub fn brute_force_cf(stack: &[Raster], spatial_q: f64, temporal_q: f64) -> Mask {
    let (rows, cols) = stack[0].dims();
    let mut svc: Vec<Vec<Option<f32>>> = Vec::new();
    for r in stack {
        let mut out = vec![None; rows * cols];
        for i in 1..rows - 1 {
            for j in 1..cols - 1 {
                let mut w = Vec::with_capacity(9);
                for di in 0..3 {
                    for dj in 0..3 {
                        w.push(r.get(i + di - 1, j + dj - 1) as f64);
                    }
                }
                out[i * cols + j] = cv(&w);
            }
        }
        svc.push(out);
    }
    let pooled: Vec<f64> = svc.iter().flatten().flatten().map(|&v| v as f64).collect();
    let s_thr = (!pooled.is_empty()).then(|| oracle_quantile(pooled, spatial_q));

    let tvc: Vec<Option<f32>> = (0..rows * cols)
        .map(|k| cv(&stack.iter().map(|r| r.data()[k] as f64).collect::<Vec<_>>()))
        .collect();
    let tv: Vec<f64> = tvc.iter().flatten().map(|&v| v as f64).collect();
    let t_thr = (!tv.is_empty()).then(|| oracle_quantile(tv, temporal_q));

    let mut bits = vec![0u8; rows * cols];
    for k in 0..rows * cols {
        let spatial_ok = svc.iter().all(|p| matches!((p[k], s_thr), (Some(v), Some(t)) if v as f64 <= t));
        let temporal_ok = matches!((tvc[k], t_thr), (Some(v), Some(t)) if v as f64 <= t);
        let unsaturated = stack.iter().all(|r| r.data()[k] != 63.0);
        bits[k] = (spatial_ok && temporal_ok && unsaturated) as u8;
    }
    Mask::new(rows, cols, bits).unwrap()
}

/// A stack of integer DMSP-like rasters with flat lit blocks, noise and a
/// few saturated pixels, so every mask stage has something to select.
pub fn synthetic_stack(seed: u64, rows: usize, cols: usize, products: usize) -> CalibrationStack {
    use deepntl::calib::ProductId;
    let mut g = rng(seed);
    let base: Vec<f32> = (0..rows * cols)
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            if (i / 8 + j / 8) % 2 == 0 {
                ((i / 8) * 7 + (j / 8) * 3 + 5) as f32 % 60.0 + 1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut ids = Vec::new();
    let mut rasters = Vec::new();
    for p in 0..products {
        ids.push(ProductId::dmsp(1992 + p as u16, "F10").unwrap());
        let data = base
            .iter()
            .map(|&v| {
                let noisy = if g.random_bool(0.2) { v + g.random_range(-3i32..=3) as f32 } else { v };
                if g.random_bool(0.01) {
                    63.0
                } else {
                    noisy.clamp(0.0, 63.0)
                }
            })
            .collect();
        rasters.push(Raster::new(rows, cols, data).unwrap());
    }
    CalibrationStack::new(ids, rasters).unwrap()
}

// --------------------------------------------------------------- autodiff

fn rand64(g: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Vec<f64> {
    (0..shape.iter().product()).map(|_| g.random_range(lo..hi)).collect()
}

fn leaf(g: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::param(shape, rand64(g, shape, -1.0, 1.0)).unwrap()
}

/// Values bounded away from zero, so ReLU and |x| kinks stay out of reach
/// of the finite-difference step.
fn leaf_off_kink(g: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let v = rand64(g, shape, 0.1, 1.0)
        .into_iter()
        .map(|x| if g.random_bool(0.5) { x } else { -x })
        .collect();
    Tensor::param(shape, v).unwrap()
}

/// Random fixed linear functional `sum(w * y)` turning any output into a
/// scalar with a non-degenerate gradient.
fn probe(y: &Tensor<f64>, seed: u64) -> deepntl::Result<Tensor<f64>> {
    let mut g = rng(seed);
    let w = Tensor::new(y.shape(), rand64(&mut g, y.shape(), -1.0, 1.0))?;
    Ok(sum(&mul(y, &w)?))
}

/// `(op, max relative error, tolerance)` for every differentiable op.
pub fn op_gradchecks() -> Vec<(&'static str, f64, f64)> {
    let mut g = rng(11);
    let elementwise = 1e-6;
    let structured = 1e-3;
    let mut out = Vec::new();
    let mut run = |name: &'static str, tol: f64, leaves: Vec<Tensor<f64>>, f: &dyn Fn(&[Tensor<f64>]) -> deepntl::Result<Tensor<f64>>| {
        let r = grad_check(f, &leaves, 1e-6).unwrap();
        out.push((name, r.max_rel_error, tol));
    };
    let s = [2, 3, 4, 5];
    run("add", elementwise, vec![leaf(&mut g, &s), leaf(&mut g, &s)], &|l| probe(&add(&l[0], &l[1])?, 1));
    run("sub", elementwise, vec![leaf(&mut g, &s), leaf(&mut g, &s)], &|l| probe(&sub(&l[0], &l[1])?, 2));
    run("mul", elementwise, vec![leaf(&mut g, &s), leaf(&mut g, &s)], &|l| probe(&mul(&l[0], &l[1])?, 3));
    run("scale", elementwise, vec![leaf(&mut g, &s)], &|l| probe(&scale(&l[0], -1.7), 4));
    run("relu", elementwise, vec![leaf_off_kink(&mut g, &s)], &|l| probe(&relu(&l[0]), 5));
    run("sigmoid", elementwise, vec![leaf(&mut g, &s)], &|l| probe(&sigmoid(&l[0]), 6));
    run("sum", elementwise, vec![leaf(&mut g, &s)], &|l| Ok(sum(&l[0])));
    run(
        "concat_channels",
        elementwise,
        vec![leaf(&mut g, &[2, 2, 3, 3]), leaf(&mut g, &[2, 3, 3, 3])],
        &|l| probe(&concat_channels(&l[0], &l[1])?, 7),
    );
    run("global_avg_pool", elementwise, vec![leaf(&mut g, &s)], &|l| probe(&global_avg_pool(&l[0])?, 8));
    run(
        "mul_channels",
        elementwise,
        vec![leaf(&mut g, &s), leaf(&mut g, &[2, 3, 1, 1])],
        &|l| probe(&mul_channels(&l[0], &l[1])?, 9),
    );
    run("pixel_shuffle", elementwise, vec![leaf(&mut g, &[2, 8, 3, 2])], &|l| probe(&pixel_shuffle(&l[0], 2)?, 10));
    let gt = Tensor::new(&s, vec![0.0; 120]).unwrap();
    run("l1_loss", elementwise, vec![leaf_off_kink(&mut g, &s)], &move |l| l1_loss(&l[0], &gt));
    for (name, k, stride, pad) in [("conv2d 3x3", 3, 1, 1), ("conv2d 1x1", 1, 1, 0), ("conv2d stride 2", 3, 2, 1)] {
        run(
            name,
            structured,
            vec![leaf(&mut g, &[2, 3, 7, 5]), leaf(&mut g, &[4, 3, k, k]), leaf(&mut g, &[4])],
            &move |l| probe(&conv2d(&l[0], &l[1], Some(&l[2]), stride, pad)?, 12),
        );
    }
    for training in [true, false] {
        let name = if training { "batch_norm train" } else { "batch_norm eval" };
        run(
            name,
            structured,
            vec![leaf(&mut g, &[3, 2, 4, 4]), leaf(&mut g, &[2]), leaf(&mut g, &[2])],
            &move |l| {
                let state = BatchNormState {
                    running_mean: Tensor::new(&[2], vec![0.1, -0.2])?,
                    running_var: Tensor::new(&[2], vec![0.9, 1.3])?,
                };
                probe(&batch_norm(&l[0], &l[1], &l[2], &state, training, 1e-5, 0.1)?, 13)
            },
        );
    }
    out
}

// -------------------------------------------------------------------- cli

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cli(dir: &std::path::Path, args: &[&str]) -> Run {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_deepntl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn cli_ok(dir: &std::path::Path, args: &[&str]) -> Run {
    let r = cli(dir, args);
    assert_eq!(r.code, 0, "deepntl {args:?} failed: {}", r.stderr);
    r
}

/// Every file under `root` keyed by relative path.
pub fn snapshot(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = Default::default();
    walk(root, root, &mut out);
    out
}

/// Configuration for a quick end-to-end CLI pipeline on small tiles.
pub const SMALL_RUN_CONFIG: &str = "\
model.h = 8
model.w = 8
model.c = 2
model.f3 = 1,2,2,1
model.hstar = 2,2,2,1
model.gstar = 4,4,1,1
model.f1 = 4,1,1,2
train.epochs = 2
dataset.test_years = 2012
";

/// synth -> sample -> dataset build -> dataset split -> train inside `dir`
/// with `seed`, leaving everything under `dir/<tag>`.
pub fn cli_pipeline(dir: &std::path::Path, tag: &str, seed: u64) {
    let s = seed.to_string();
    std::fs::write(dir.join("small.conf"), SMALL_RUN_CONFIG).unwrap();
    let p = |x: &str| format!("{tag}/{x}");
    let base = ["--config", "small.conf", "--seed", &s];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().copied().chain(extra.iter().copied()).collect();
        cli_ok(dir, &args)
    };
    run(&["synth", "--rows", "32", "--cols", "32", "--out", &p("data")]);
    run(&["sample", "--data", &p("data"), "--points", "6", "--out", &p("points.csv")]);
    run(&["dataset", "build", "--data", &p("data"), "--points", &p("points.csv"), "--out", &p("ds")]);
    run(&["dataset", "split", "--manifest", &p("ds/manifest.csv"), "--out", &p("ds/split.csv")]);
    run(&["train", "--manifest", &p("ds/split.csv"), "--out", &p("run")]);
}

// ------------------------------------------------------------------ model

/// Maximum relative error between backpropagated and central-difference
/// gradients of an L1 loss through the whole network, in 64-bit mode, over
/// every trainable parameter not listed in `skip`.
pub fn model_gradcheck(cfg: &deepntl::model::ModelConfig, skip: &[&str]) -> (f64, String) {
    use deepntl::model::{forward, init_params, Params};
    let p: Params<f64> = init_params(cfg, 17).unwrap().cast();
    let mut g = rng(3);
    let (h, w) = (cfg.h, cfg.w);
    let mut input = |shape: &[usize]| Tensor::new(shape, rand64(&mut g, shape, 0.0, 1.0)).unwrap();
    let a = input(&[2, 1, h, w]);
    let b = input(&[2, 1, h, w]);
    let v = input(&[2, 1, 2 * h, 2 * w]);
    let gt = input(&[2, 1, 2 * h, 2 * w]);
    let keys: Vec<String> = p.trainable().map(|(k, _)| k.to_owned()).filter(|k| !skip.contains(&k.as_str())).collect();
    let leaves: Vec<Tensor<f64>> = keys.iter().map(|k| p.get(k).unwrap().clone()).collect();
    let report = grad_check(
        |_| {
            // running statistics drift with every training forward; reset them
            for (k, t) in p.iter() {
                if k.ends_with("running_mean") {
                    t.data_mut().fill(0.0);
                } else if k.ends_with("running_var") {
                    t.data_mut().fill(1.0);
                }
            }
            l1_loss(&forward(&a, &b, &v, &p, cfg, true)?, &gt)
        },
        &leaves,
        1e-5,
    )
    .unwrap();
    let (li, idx) = report.worst.unwrap();
    (report.max_rel_error, format!("{}[{idx}]", keys[li]))
}
