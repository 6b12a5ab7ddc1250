use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, RcanConfig, ResNetConfig, Variant};
use crate::autodiff::{BatchNormState, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Conv kernel with the given fan-in (cin * k * k).
    ConvWeight { fan_in: usize },
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub key: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

#[derive(Default)]
pub(crate) struct SpecBuilder {
    pub specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    fn push(&mut self, key: String, shape: Vec<usize>, kind: ParamKind) {
        self.specs.push(ParamSpec { key, shape, kind });
    }

    pub fn conv(&mut self, key: &str, cin: usize, cout: usize, k: usize, bias: bool) {
        self.push(format!("{key}.weight"), vec![cout, cin, k, k], ParamKind::ConvWeight { fan_in: cin * k * k });
        if bias {
            self.push(format!("{key}.bias"), vec![cout], ParamKind::Bias);
        }
    }

    pub fn norm(&mut self, key: &str, c: usize) {
        self.push(format!("{key}.gamma"), vec![c], ParamKind::Gamma);
        self.push(format!("{key}.beta"), vec![c], ParamKind::Beta);
        self.push(format!("{key}.running_mean"), vec![c], ParamKind::RunningMean);
        self.push(format!("{key}.running_var"), vec![c], ParamKind::RunningVar);
    }
}

pub(crate) fn resnet_specs(b: &mut SpecBuilder, prefix: &str, cfg: &ResNetConfig) {
    for s in 0..cfg.blocks {
        let cin = if s == 0 { cfg.inp_c } else { cfg.mid_c };
        let key = format!("{prefix}.block{s}");
        b.conv(&format!("{key}.conv1"), cin, cfg.mid_c, 3, false);
        b.norm(&format!("{key}.norm1"), cfg.mid_c);
        b.conv(&format!("{key}.conv2"), cfg.mid_c, cfg.mid_c, 3, false);
        b.norm(&format!("{key}.norm2"), cfg.mid_c);
        if s == 0 && cfg.needs_projection() {
            b.conv(&format!("{key}.skip"), cfg.inp_c, cfg.mid_c, 3, true);
        }
    }
    if cfg.needs_projection() {
        b.conv(&format!("{prefix}.long_skip"), cfg.inp_c, cfg.mid_c, 3, true);
    }
    b.conv(&format!("{prefix}.tail.conv"), cfg.mid_c, cfg.out_c, 3, false);
    b.norm(&format!("{prefix}.tail.norm"), cfg.out_c);
}

pub(crate) fn rcan_specs(b: &mut SpecBuilder, prefix: &str, cfg: &RcanConfig) {
    let dim = cfg.dim;
    b.conv(&format!("{prefix}.shallow"), 1, dim, 3, true);
    for g in 0..cfg.groups {
        for r in 0..cfg.blocks {
            let key = format!("{prefix}.group{g}.rcab{r}");
            b.conv(&format!("{key}.conv"), dim, dim, 3, true);
            b.conv(&format!("{key}.attention.down"), dim, dim / cfg.reduction, 1, true);
            b.conv(&format!("{key}.attention.up"), dim / cfg.reduction, dim, 1, true);
        }
        b.conv(&format!("{prefix}.group{g}.conv"), dim, dim, 3, true);
    }
    b.conv(&format!("{prefix}.body_conv"), dim, dim, 3, true);
    b.conv(&format!("{prefix}.upscale"), dim, 4 * dim, 3, true);
    b.conv(&format!("{prefix}.reconstruct"), dim, 1, 3, true);
}

/// Every parameter of the network described by `cfg`, sorted by key.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut b = SpecBuilder::default();
    rcan_specs(&mut b, "f1", &cfg.f1);
    resnet_specs(&mut b, "f3", &cfg.f3);
    match cfg.variant {
        Variant::DeepNtl => resnet_specs(&mut b, "hstar", &cfg.hstar),
        Variant::LinearPrototype => b.conv("h", 1, cfg.c, 1, true),
    }
    resnet_specs(&mut b, "gstar", &cfg.gstar);
    b.specs.sort_by(|a, b| a.key.cmp(&b.key));
    b.specs
}

/// Named parameter tensors keyed by hierarchical path
/// (`f1.group0.rcab1.attention.down.weight`, `gstar.tail.norm.gamma`, ...).
#[derive(Clone, Debug, Default)]
pub struct Params<T: Real> {
    tensors: BTreeMap<String, Tensor<T>>,
    used: RefCell<Option<BTreeSet<String>>>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
            used: RefCell::new(None),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(key.into(), t);
    }

    pub fn get(&self, key: &str) -> Result<&Tensor<T>> {
        if let Some(used) = self.used.borrow_mut().as_mut() {
            used.insert(key.to_owned());
        }
        self.tensors
            .get(key)
            .ok_or_else(|| Error::shape("params", format!("missing parameter {key:?}")))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.tensors.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Leaves that receive gradients (everything but running statistics).
    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.iter().filter(|(_, t)| t.requires_grad())
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.tensors.values().for_each(Tensor::zero_grad);
    }

    pub fn norm_state(&self, key: &str) -> Result<BatchNormState<T>> {
        Ok(BatchNormState {
            running_mean: self.get(&format!("{key}.running_mean"))?.clone(),
            running_var: self.get(&format!("{key}.running_var"))?.clone(),
        })
    }

    /// Deep copy in another precision; running statistics stay non-trainable.
    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
            used: RefCell::new(None),
        }
    }

    /// Deep copy sharing nothing with `self`.
    pub fn deep_clone(&self) -> Params<T> {
        self.cast()
    }

    /// Bitwise equality of keys, shapes and values.
    pub fn bit_eq(&self, other: &Params<T>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.shape() == b.shape()
                    && a.requires_grad() == b.requires_grad()
                    && a.data().iter().zip(b.data().iter()).all(|(x, y)| x.f64().to_bits() == y.f64().to_bits())
            })
    }

    /// Starts recording which keys forwards read.
    pub fn track_usage(&self) {
        *self.used.borrow_mut() = Some(BTreeSet::new());
    }

    pub fn take_usage(&self) -> BTreeSet<String> {
        self.used.borrow_mut().take().unwrap_or_default()
    }

    /// Checks keys and shapes against what `cfg` requires.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        if specs.len() != self.tensors.len() {
            return Err(Error::Corrupt(format!(
                "config expects {} parameters, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for spec in &specs {
            let t = self
                .tensors
                .get(&spec.key)
                .ok_or_else(|| Error::Corrupt(format!("missing parameter {:?}", spec.key)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Corrupt(format!(
                    "parameter {:?} has shape {:?}, config expects {:?}",
                    spec.key,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}

/// Conv weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, norm
/// gamma 1 / beta 0, running mean 0 / variance 1. Parameters are drawn in
/// key order from one seeded stream.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<Params<f32>> {
    cfg.validate()?;
    init_from_specs(param_specs(cfg), seed)
}

pub(crate) fn init_from_specs(specs: Vec<ParamSpec>, seed: u64) -> Result<Params<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f32> = match spec.kind {
            ParamKind::ConvWeight { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
            }
            ParamKind::Bias | ParamKind::Beta | ParamKind::RunningMean => vec![0.0; n],
            ParamKind::Gamma | ParamKind::RunningVar => vec![1.0; n],
        };
        let t = if spec.kind.trainable() {
            Tensor::param(&spec.shape, data)?
        } else {
            Tensor::new(&spec.shape, data)?
        };
        p.insert(spec.key, t);
    }
    Ok(p)
}
