//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{brute_force_cf, naive_pearson, naive_psnr, naive_ssim, random_raster, rel_err, rng, synthetic_stack};
use deepntl::autodiff::{no_grad, Tensor};
use deepntl::calib::{calibration_fields, fit_quadratic, published_fits, CalibrationFit, ProductId};
use deepntl::dataset::{clean_viirs, synth_series, Example, DEFAULT_CEIL, DEFAULT_FLOOR};
use deepntl::error::Error;
use deepntl::model::{forward, init_params, load_checkpoint, save_checkpoint, ModelConfig};
use deepntl::pipeline::{bilinear_upsample2x, reassemble, reconstruct_year, tile_grid, ReconstructOptions};
use deepntl::raster::{parse_ascii_grid, read_raster, write_raster, Mask, Raster, TileRef};
use deepntl::train::{fit_viirs_scale, pearson_r, psnr, ssim_global, train_loop, TrainConfig};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(t0: Instant, limit: Duration) -> Result<(), String> {
    let e = t0.elapsed();
    if e > limit {
        return Err(format!("took {:.1}s, limit {}s", e.as_secs_f64(), limit.as_secs()));
    }
    Ok(())
}

// 1
fn metric_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut g = rng(1);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let gt = random_raster(&mut g, 32, 32, 496.0);
        let sr = random_raster(&mut g, 32, 32, 496.0);
        let pairs = [
            ("pearson_r", pearson_r(&gt, &sr).map_err(|e| e.to_string())?, naive_pearson(&gt, &sr)),
            ("psnr", psnr(&gt, &sr, 496.0).map_err(|e| e.to_string())?, naive_psnr(&gt, &sr, 496.0)),
            ("ssim_global", ssim_global(&gt, &sr, 496.0).map_err(|e| e.to_string())?, naive_ssim(&gt, &sr, 496.0)),
        ];
        for (name, got, want) in pairs {
            let e = rel_err(got, want);
            ensure!(e <= 1e-9, "pair {k}: {name} {got} vs oracle {want} (rel {e:.2e})");
            worst = worst.max(e);
        }
    }
    within(t0, Duration::from_secs(10))?;
    Ok(format!("100 pairs, max rel err {worst:.1e}"))
}

// 2
fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut worst_op: f64 = 0.0;
    for (name, err, tol) in common::op_gradchecks() {
        ensure!(err < tol, "{name}: rel err {err:.2e} >= {tol:.0e}");
        worst_op = worst_op.max(err);
    }
    let (err, at) = common::model_gradcheck(&ModelConfig::toy(), &[]);
    ensure!(err < 1e-3, "toy model: rel err {err:.2e} at {at}");
    within(t0, Duration::from_secs(300))?;
    Ok(format!("ops max {worst_op:.1e}, toy model {err:.1e}"))
}

// 3
fn shapes() -> Outcome {
    let toy = ModelConfig::toy();
    let p = init_params(&toy, 0).map_err(|e| e.to_string())?;
    for n in [1, 3] {
        let x = |h: usize, w: usize| Tensor::<f32>::full(&[n, 1, h, w], 0.5);
        let y = no_grad(|| forward(&x(toy.h, toy.w), &x(toy.h, toy.w), &x(2 * toy.h, 2 * toy.w), &p, &toy, false))
            .map_err(|e| e.to_string())?;
        ensure!(y.shape() == [n, 1, 2 * toy.h, 2 * toy.w], "toy N={n}: shape {:?}", y.shape());
    }

    let paper = ModelConfig::paper();
    let p = init_params(&paper, 0).map_err(|e| e.to_string())?;
    let mut g = rng(3);
    let mut x = |h: usize, w: usize| {
        Tensor::<f32>::new(&[1, 1, h, w], (0..h * w).map(|_| g.random_range(0.0..1.0)).collect()).unwrap()
    };
    let (a, b, v) = (x(paper.h, paper.w), x(paper.h, paper.w), x(2 * paper.h, 2 * paper.w));
    let t0 = Instant::now();
    let y = no_grad(|| forward(&a, &b, &v, &p, &paper, false)).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    ensure!(y.shape() == [1, 1, 256, 256], "paper config: shape {:?}", y.shape());
    ensure!(y.data().iter().all(|v| v.is_finite()), "paper config: non-finite output");
    within(t0, Duration::from_secs(600))?;
    Ok(format!("toy (N,1,8,8), paper (1,1,256,256) in {secs:.1}s"))
}

// 4
fn calibration_recovery() -> Outcome {
    let t0 = Instant::now();
    let (rows, cols) = (32, 32);
    // latent brightness u in 0..=12; every value below is exact in f32
    let u = |i: usize| (i % 13) as f64;
    let base_of = |u: f64| 0.25 * u * u + 0.5 * u + 1.0;
    let base = Raster::new(rows, cols, (0..rows * cols).map(|i| base_of(u(i)) as f32).collect()).unwrap();
    let cf = Mask::ones(rows, cols);
    let mut report = Vec::new();
    for (k, (s, r)) in [(2.0, 1.0), (0.5, 3.0), (4.0, 0.0), (1.0, 5.0)].into_iter().enumerate() {
        // product t = s*u + r, so base = a*t^2 + b*t + c with
        let want = (0.25 / (s * s), 0.5 / s - 0.5 * r / (s * s), 0.25 * r * r / (s * s) - 0.5 * r / s + 1.0);
        let target = Raster::new(rows, cols, (0..rows * cols).map(|i| (s * u(i) + r) as f32).collect()).unwrap();
        let p = ProductId::dmsp(2000 + k as u16, "F14").unwrap();
        let fit = fit_quadratic(p, &target, &base, &cf).map_err(|e| e.to_string())?;
        let err = [(fit.a - want.0).abs(), (fit.b - want.1).abs(), (fit.c - want.2).abs()];
        ensure!(err.iter().all(|&e| e <= 1e-6), "s={s} r={r}: got ({}, {}, {}) want {want:?}", fit.a, fit.b, fit.c);
        ensure!(fit.r2 >= 1.0 - 1e-9, "s={s} r={r}: R^2 {}", fit.r2);
        report.push(err.into_iter().fold(0.0, f64::max));
    }

    let base_id = ProductId::dmsp(1999, "F12").unwrap();
    let identity = fit_quadratic(base_id.clone(), &base, &base, &cf).map_err(|e| e.to_string())?;
    let row = published_fits().into_iter().find(|f| f.product == base_id).ok_or("no 1999/F12 row")?;
    let close = |f: &CalibrationFit, g: &CalibrationFit| {
        (f.a - g.a).abs() <= 1e-6 && (f.b - g.b).abs() <= 1e-6 && (f.c - g.c).abs() <= 1e-6
    };
    ensure!(close(&identity, &CalibrationFit::identity(base_id)), "identity fit {identity:?}");
    ensure!(close(&identity, &row) && identity.r2 >= 1.0 - 1e-9, "identity fit {identity:?} vs table {row:?}");
    within(t0, Duration::from_secs(30))?;
    Ok(format!("4 distortions + identity, max coef err {:.1e}", report.into_iter().fold(0.0, f64::max)))
}

// 5
fn calibration_fields_exact() -> Outcome {
    let t0 = Instant::now();
    let mut counts = Vec::new();
    for seed in 0..4 {
        let stack = synthetic_stack(seed, 32, 32, 8);
        let got = calibration_fields(&stack, 0.25, 0.25).map_err(|e| e.to_string())?;
        let want = brute_force_cf(stack.rasters(), 0.25, 0.25);
        ensure!(got == want, "seed {seed}: {} pixels vs brute force {}", got.count(), want.count());
        counts.push(got.count());
    }
    within(t0, Duration::from_secs(10))?;
    Ok(format!("4 stacks of 32x32x8, field sizes {counts:?}"))
}

// 6
fn toy_training() -> Outcome {
    let t0 = Instant::now();
    let years = [2012u16, 2013, 2015, 2016, 2017, 2018, 2019];
    let reference = ProductId::dmsp(2014, "F15").unwrap();
    let examples: Vec<Example> = (0..200u64)
        .map(|i| {
            let tgt = ProductId::dmsp(years[i as usize % years.len()], "F18").unwrap();
            let s = synth_series(1000 + i, 32, 32, 2014, &[reference.clone(), tgt.clone()]).unwrap();
            Example {
                dmsp_ref: s[0].dmsp.clone(),
                dmsp_tgt: s[1].dmsp.clone(),
                viirs_ref: s[0].viirs.clone(),
                viirs_tgt: s[1].viirs.clone(),
                product_tgt: tgt,
                tile: TileRef::new(0, 0, 32, 32),
            }
        })
        .collect();
    ensure!(examples[0].viirs_tgt.dims() == (64, 64), "VIIRS tiles are {:?}", examples[0].viirs_tgt.dims());
    let (train, rest) = examples.split_at(160);
    let (val, test) = rest.split_at(20);

    let mut cfg = ModelConfig::small(32, 32, 2, 1, 4, 1, 1, 2);
    cfg.viirs_scale = fit_viirs_scale(train).map_err(|e| e.to_string())?;
    let t = TrainConfig::default();
    ensure!(t.epochs == 30 && t.lr0 == 1e-4 && t.decay == 0.95 && t.patience == 3, "unexpected regime {t:?}");
    let out = train_loop(train, val, &cfg, &t, |_| {}).map_err(|e| e.to_string())?;
    let (first, last) = (out.log[0].val_loss, out.log.last().unwrap().val_loss);
    let ratio = last / first;
    ensure!(ratio <= 0.5, "val L1 {first:.2} -> {last:.2} (ratio {ratio:.3})");

    let (mut model, mut bilinear) = (0.0, 0.0);
    for e in test {
        let y = reconstruct_year(&out.last, &cfg, &e.dmsp_ref, &e.dmsp_tgt, &e.viirs_ref, &ReconstructOptions::default())
            .map_err(|e| e.to_string())?;
        model += psnr(&e.viirs_tgt, &y, 496.0).map_err(|e| e.to_string())?;
        bilinear += psnr(&e.viirs_tgt, &bilinear_upsample2x(&e.dmsp_tgt), 496.0).map_err(|e| e.to_string())?;
    }
    let (model, bilinear) = (model / test.len() as f64, bilinear / test.len() as f64);
    ensure!(model - bilinear >= 1.0, "held-out PSNR {model:.2} dB vs bilinear {bilinear:.2} dB");
    within(t0, Duration::from_secs(1200))?;
    Ok(format!(
        "val L1 {first:.1} -> {last:.1} ({:.0}%), held-out PSNR {model:.2} vs bilinear {bilinear:.2} dB",
        100.0 * ratio
    ))
}

// 7
fn cleaning() -> Outcome {
    let r = Raster::new(1, 4, vec![0.49, 0.5, 496.0, 497.0]).unwrap();
    let c = clean_viirs(&r, DEFAULT_FLOOR, DEFAULT_CEIL).map_err(|e| e.to_string())?;
    ensure!(c.data() == [0.0, 0.5, 496.0, 496.0], "cleaned to {:?}", c.data());
    let mut g = rng(7);
    for k in 0..50 {
        let mut r = random_raster(&mut g, 24, 24, 700.0);
        let mut data = r.clone().into_data();
        data[k] = Raster::DEFAULT_NODATA;
        r = r.like(data).unwrap();
        let once = clean_viirs(&r, DEFAULT_FLOOR, DEFAULT_CEIL).map_err(|e| e.to_string())?;
        let twice = clean_viirs(&once, DEFAULT_FLOOR, DEFAULT_CEIL).map_err(|e| e.to_string())?;
        ensure!(bits(&once) == bits(&twice), "raster {k}: cleaning is not idempotent");
    }
    Ok("threshold cases exact, idempotent on 50 rasters".into())
}

fn bits(r: &Raster) -> Vec<u32> {
    r.data().iter().map(|v| v.to_bits()).collect()
}

// 8
fn tiling() -> Outcome {
    let t0 = Instant::now();
    let mut g = rng(8);
    let mut ragged = 0;
    for k in 0..200 {
        let (rows, cols) = (g.random_range(1..=300), g.random_range(1..=300));
        let (th, tw) = (g.random_range(1..=64), g.random_range(1..=64));
        let r = random_raster(&mut g, rows, cols, 63.0);
        let (tiles, layout) = tile_grid(&r, th, tw).map_err(|e| e.to_string())?;
        let back = reassemble(&tiles, &layout).map_err(|e| e.to_string())?;
        ensure!(back.dims() == r.dims() && bits(&back) == bits(&r), "case {k}: {rows}x{cols} tiles {th}x{tw}");
        ragged += usize::from(rows % th != 0 || cols % tw != 0);
    }
    within(t0, Duration::from_secs(10))?;
    Ok(format!("200 combinations, {ragged} with partial edge tiles"))
}

// 9
fn io_round_trips() -> Outcome {
    let mut g = rng(9);
    for k in 0..20 {
        let (rows, cols) = (g.random_range(1..=50), g.random_range(1..=50));
        let mut data = random_raster(&mut g, rows, cols, 63.0).into_data();
        data[0] = Raster::DEFAULT_NODATA;
        let r = Raster::with_geo(rows, cols, -180.0 + k as f64, 75.0, 1.0 / 120.0, -1.0 / 120.0, Raster::DEFAULT_NODATA, data)
            .map_err(|e| e.to_string())?;
        let bytes = write_raster(&r);
        let back = read_raster(&bytes).map_err(|e| e.to_string())?;
        let geo = |r: &Raster| [r.x0, r.y0, r.dx, r.dy].map(f64::to_bits);
        ensure!(back.dims() == r.dims() && bits(&back) == bits(&r) && geo(&back) == geo(&r), "raster {k} changed");
        ensure!(write_raster(&back) == bytes, "raster {k}: re-encoding differs");
    }

    for (name, cfg) in [("toy", ModelConfig::toy()), ("toy linear", ModelConfig::toy().linear_prototype())] {
        let p = init_params(&cfg, 5).map_err(|e| e.to_string())?;
        let bytes = save_checkpoint(&p, &cfg);
        let (q, cfg2) = load_checkpoint(&bytes).map_err(|e| e.to_string())?;
        ensure!(p.bit_eq(&q) && cfg2 == cfg, "{name} checkpoint changed");
        ensure!(save_checkpoint(&q, &cfg2) == bytes, "{name} checkpoint re-encoding differs");
    }

    let header = "ncols 2\nnrows 2\nxllcorner 10\nyllcorner 20\ncellsize 0.5\nNODATA_value -9999\n";
    let ok = parse_ascii_grid(&format!("{header}1 -9999\n3\n4")).map_err(|e| e.to_string())?;
    ensure!(ok.data() == [1.0, Raster::DEFAULT_NODATA, 3.0, 4.0], "valid grid parsed as {:?}", ok.data());
    let centered = parse_ascii_grid("NCOLS 1\nNROWS 1\nXLLCENTER 0.5\nYLLCENTER 0.5\nCELLSIZE 1\n3\n").map_err(|e| e.to_string())?;
    ensure!((centered.x0, centered.y0) == (0.0, 1.0), "center variant not normalized");

    let positioned = [
        ("ncols 3\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n4 5 6\n7 8\n".to_string(), (8, 3)),
        (format!("{header}1 2\n3 4 5\n"), (8, 5)),
        (format!("{header}1 2\n3 x4\n"), (8, 3)),
    ];
    for (text, want) in &positioned {
        match parse_ascii_grid(text) {
            Err(Error::AsciiGrid { line, column, .. }) if (line, column) == *want => {}
            other => return Err(format!("{text:?}: expected error at {want:?}, got {other:?}")),
        }
    }
    let rejected = [
        "ncols 2\nnrows 2\nxllcorner 0\ncellsize 1\n1 2 3 4".to_string(),
        "ncols two\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3 4".into(),
        "ncols 0\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n".into(),
        "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize -1\n1 2 3 4".into(),
        "ncols 2\nnrows 2\nbogus 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3 4".into(),
        "ncols".into(),
        String::new(),
        format!("{header}1 -1\n3 4"),
    ];
    for text in &rejected {
        ensure!(parse_ascii_grid(text).is_err(), "accepted {text:?}");
    }
    Ok(format!(
        "20 rasters, 2 checkpoints, {} malformed grids rejected",
        positioned.len() + rejected.len()
    ))
}

// 10
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    common::cli_pipeline(dir.path(), "a", 11);
    common::cli_pipeline(dir.path(), "b", 11);
    let (a, b) = (common::snapshot(&dir.path().join("a")), common::snapshot(&dir.path().join("b")));
    ensure!(!a.is_empty(), "no outputs");
    for (path, bytes) in &a {
        ensure!(b.get(path) == Some(bytes), "{} differs between runs", path.display());
    }
    ensure!(a.len() == b.len(), "file sets differ: {} vs {}", a.len(), b.len());
    Ok(format!("synth/sample/build/split/train, {} files identical", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracle equivalence", metric_oracles),
        ("gradient correctness", gradients),
        ("shape contracts", shapes),
        ("calibration recovery", calibration_recovery),
        ("calibration-field pipeline", calibration_fields_exact),
        ("end-to-end toy training", toy_training),
        ("cleaning exactness", cleaning),
        ("tiling round trip", tiling),
        ("I/O round trips", io_round_trips),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
