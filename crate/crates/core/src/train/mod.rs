//! Adam, the plateau learning-rate schedule, the epoch loop and the
//! evaluation metrics.

mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{l1_loss, no_grad, Tensor};
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::model::{forward, init_params, ModelConfig, Params};
use crate::raster::Raster;

pub use metrics::{evaluate_pair, metrics_csv, pearson_r, psnr, ssim_global, MetricsReport, DEFAULT_MAX, METRICS_CSV_HEADER};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            decay: 0.95,
            patience: 3,
            batch_size: 4,
            epochs: 30,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay must lie in (0, 1)");
        }
        if self.patience == 0 || self.batch_size == 0 {
            return bad("patience and batch_size must be at least 1");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return bad("Adam constants out of range");
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter key.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step(p: &Params<f32>, state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    for (key, t) in p.trainable() {
        if t.grad_ref().is_none() {
            return Err(Error::Gradient(format!("no gradient for {key}")));
        }
    }
    state.step += 1;
    let step = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(step);
    let c2 = 1.0 - b2.powi(step);
    for (key, t) in p.trainable() {
        let n = t.numel();
        let m = state.m.entry(key.to_owned()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(key.to_owned()).or_insert_with(|| vec![0.0; n]);
        let g = t.grad_ref();
        let g = g.as_ref().expect("checked above");
        let mut data = t.data_mut();
        for i in 0..n {
            let gi = g[i] as f64;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let upd = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
            data[i] = (data[i] as f64 - upd) as f32;
        }
    }
    Ok(())
}

/// Running-best plateau detector.
#[derive(Clone, Debug)]
pub struct Plateau {
    best: f64,
    stale: usize,
}

impl Default for Plateau {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
        }
    }
}

impl Plateau {
    /// Records one epoch's validation loss and returns the learning rate
    /// for the next epoch.
    pub fn observe(&mut self, loss: f64, lr: f64, cfg: &TrainConfig) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return lr;
        }
        self.stale += 1;
        if self.stale >= cfg.patience {
            self.stale = 0;
            lr * cfg.decay
        } else {
            lr
        }
    }
}

/// Replays `history` through [`Plateau`]; returns `lr * decay` when the
/// last epoch completes a run of `patience` epochs without a new best.
pub fn plateau_schedule(history: &[f64], lr: f64, cfg: &TrainConfig) -> Result<f64> {
    let Some((last, earlier)) = history.split_last() else {
        return Err(Error::Empty("plateau schedule needs at least one loss".into()));
    };
    let mut p = Plateau::default();
    for &l in earlier {
        p.observe(l, lr, cfg);
    }
    Ok(p.observe(*last, lr, cfg))
}

/// Network-unit tensors for a batch of examples.
pub struct Batch {
    pub dmsp_ref: Tensor<f32>,
    pub dmsp_tgt: Tensor<f32>,
    pub viirs_ref: Tensor<f32>,
    pub viirs_tgt: Tensor<f32>,
}

fn stack(rasters: &[&Raster], scale: f32) -> Result<Tensor<f32>> {
    let (h, w) = rasters[0].dims();
    if let Some(r) = rasters.iter().find(|r| r.dims() != (h, w)) {
        return Err(Error::Dimension(format!("batch mixes {:?} and {:?} tiles", (h, w), r.dims())));
    }
    let mut data = Vec::with_capacity(rasters.len() * h * w);
    for r in rasters {
        data.extend(r.data().iter().map(|&v| if r.is_nodata(v) { 0.0 } else { v / scale }));
    }
    Tensor::new(&[rasters.len(), 1, h, w], data)
}

pub fn make_batch(examples: &[&Example], cfg: &ModelConfig) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let pick = |f: fn(&Example) -> &Raster| examples.iter().map(|e| f(e)).collect::<Vec<_>>();
    Ok(Batch {
        dmsp_ref: stack(&pick(|e| &e.dmsp_ref), cfg.dmsp_scale)?,
        dmsp_tgt: stack(&pick(|e| &e.dmsp_tgt), cfg.dmsp_scale)?,
        viirs_ref: stack(&pick(|e| &e.viirs_ref), cfg.viirs_scale)?,
        viirs_tgt: stack(&pick(|e| &e.viirs_tgt), cfg.viirs_scale)?,
    })
}

/// Population standard deviation of all valid target VIIRS pixels, a
/// data-derived `viirs_scale` that puts targets at unit spread.
pub fn fit_viirs_scale(examples: &[Example]) -> Result<f32> {
    let (mut n, mut s, mut ss) = (0f64, 0f64, 0f64);
    for e in examples {
        for v in e.viirs_tgt.valid_values() {
            let v = v as f64;
            n += 1.0;
            s += v;
            ss += v * v;
        }
    }
    if n == 0.0 {
        return Err(Error::Empty("no target pixels".into()));
    }
    let var = (ss / n - (s / n).powi(2)).max(0.0);
    if var == 0.0 {
        return Err(Error::InvalidArgument("target pixels are constant".into()));
    }
    Ok(var.sqrt() as f32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,train_loss,val_loss,lr";

pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for e in log {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    out
}

pub struct TrainOutcome {
    /// Parameters after the epoch with the lowest validation loss.
    pub best: Params<f32>,
    pub best_epoch: Option<usize>,
    /// Parameters after the last epoch.
    pub last: Params<f32>,
    pub log: Vec<EpochLog>,
}

/// Mean L1 in network units over `examples`, inference mode.
pub fn evaluate_loss(p: &Params<f32>, cfg: &ModelConfig, examples: &[Example], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("no examples to evaluate".into()));
    }
    no_grad(|| {
        let mut total = 0.0;
        for chunk in examples.chunks(batch_size.max(1)) {
            let refs: Vec<&Example> = chunk.iter().collect();
            let b = make_batch(&refs, cfg)?;
            let y = forward(&b.dmsp_ref, &b.dmsp_tgt, &b.viirs_ref, p, cfg, false)?;
            total += l1_loss(&y, &b.viirs_tgt)?.item() as f64 * chunk.len() as f64;
        }
        Ok(total / examples.len() as f64)
    })
}

/// Seeded epoch loop: shuffled mini-batches, L1 loss, Adam, plateau decay
/// on validation loss, best-validation parameters retained. `on_epoch`
/// sees every log row as it is produced.
pub fn train_loop(
    train: &[Example],
    val: &[Example],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    let params = init_params(model_cfg, cfg.seed)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            best: params.deep_clone(),
            best_epoch: None,
            last: params,
            log: Vec::new(),
        });
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty(format!(
            "training needs both splits (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    let mut adam = AdamState::default();
    let mut plateau = Plateau::default();
    let mut lr = cfg.lr0;
    let mut best = (f64::INFINITY, None, params.deep_clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let b = make_batch(&refs, model_cfg)?;
            let y = forward(&b.dmsp_ref, &b.dmsp_tgt, &b.viirs_ref, &params, model_cfg, true)?;
            let loss = l1_loss(&y, &b.viirs_tgt)?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, value });
            }
            params.zero_grad();
            loss.backward()?;
            adam_step(&params, &mut adam, lr, cfg)?;
            sum += value * idx.len() as f64;
        }
        params.zero_grad();
        let train_loss = sum / train.len() as f64;
        let val_loss = evaluate_loss(&params, model_cfg, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: usize::MAX,
                value: val_loss,
            });
        }
        let row = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        };
        on_epoch(&row);
        log.push(row);
        if val_loss < best.0 {
            best = (val_loss, Some(epoch), params.deep_clone());
        }
        lr = plateau.observe(val_loss, lr, cfg);
    }
    Ok(TrainOutcome {
        best: best.2,
        best_epoch: best.1,
        last: params,
        log,
    })
}
