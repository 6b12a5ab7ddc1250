//! Plain-text `key = value` run configuration.
//!
//! Every tunable of the pipeline has a key with a default; unknown keys are
//! rejected, and [`RunConfig::to_text`] writes the fully resolved set so a
//! run can be repeated from its output directory alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::calib::ProductId;
use crate::dataset::{SampleOptions, SplitOptions};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RcanConfig, ResNetConfig, Variant};
use crate::pipeline::ReconstructOptions;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Float,
    Count,
    Seed,
    Flag,
    Product,
    Years,
    Products,
    Quad,
    Variant,
    /// A float or `auto`.
    FloatOrAuto,
    /// A count or `auto`.
    CountOrAuto,
}

/// `(key, default, kind, description)` for every accepted key.
const KEYS: &[(&str, &str, Kind, &str)] = &[
    ("seed", "0", Kind::Seed, "seed for sampling, splitting, initialization and shuffling"),
    ("threads", "1", Kind::Count, "worker threads; 0 uses every core"),
    ("calib.spatial_q", "0.25", Kind::Float, "quantile of spatial variation coefficients kept as stable"),
    ("calib.temporal_q", "0.25", Kind::Float, "quantile of temporal variation coefficients kept as stable"),
    ("calib.base", "1999F12", Kind::Product, "product every other product is calibrated against"),
    ("dataset.floor", "0.5", Kind::Float, "VIIRS values below this become 0"),
    ("dataset.ceil", "496", Kind::FloatOrAuto, "VIIRS ceiling; auto derives it from dataset.ceiling_q"),
    ("dataset.ceiling_q", "0.9999", Kind::Float, "lit-pixel quantile used when dataset.ceil = auto"),
    ("dataset.points", "30000", Kind::Count, "random tile anchors to draw"),
    ("dataset.min_lit", "0.01", Kind::Float, "minimum lit share of both reference tiles"),
    ("dataset.max_attempts", "auto", Kind::CountOrAuto, "rejection-sampling budget; auto is 1000 per point"),
    ("dataset.ref_dmsp", "2014F15", Kind::Product, "reference DMSP product"),
    ("dataset.ref_viirs", "VIIRS2014", Kind::Product, "reference VIIRS product"),
    ("dataset.train_frac", "0.95", Kind::Float, "share of examples used for training"),
    ("dataset.by_anchor", "false", Kind::Flag, "split by anchor point instead of by example"),
    ("dataset.test_years", "2012", Kind::Years, "target years held out for testing (comma list, may be empty)"),
    ("model.variant", "deepntl", Kind::Variant, "deepntl or linear"),
    ("model.h", "128", Kind::Count, "DMSP tile height (VIIRS tiles are twice as tall)"),
    ("model.w", "128", Kind::Count, "DMSP tile width"),
    ("model.c", "32", Kind::Count, "channels at the fusion point"),
    ("model.f3", "1,32,32,16", Kind::Quad, "F3 ResNet: inpC,midC,outC,blocks"),
    ("model.hstar", "2,32,32,32", Kind::Quad, "H* ResNet: inpC,midC,outC,blocks"),
    ("model.gstar", "64,64,1,32", Kind::Quad, "G* ResNet: inpC,midC,outC,blocks"),
    ("model.f1", "64,6,6,16", Kind::Quad, "F1 RCAN: dim,groups,blocks,reduction"),
    ("model.dmsp_scale", "63", Kind::Float, "DMSP DN divisor into network units"),
    ("model.viirs_scale", "auto", Kind::FloatOrAuto, "VIIRS radiance divisor; auto uses the training targets' standard deviation"),
    ("train.lr0", "0.0001", Kind::Float, "initial learning rate"),
    ("train.decay", "0.95", Kind::Float, "learning-rate factor on a plateau"),
    ("train.patience", "3", Kind::Count, "epochs without a new best validation loss before decaying"),
    ("train.batch_size", "4", Kind::Count, "examples per step"),
    ("train.epochs", "30", Kind::Count, "training epochs"),
    ("train.beta1", "0.9", Kind::Float, "Adam first-moment decay"),
    ("train.beta2", "0.999", Kind::Float, "Adam second-moment decay"),
    ("train.adam_eps", "0.00000001", Kind::Float, "Adam denominator epsilon"),
    ("eval.max", "496", Kind::Float, "MAX constant for PSNR and SSIM"),
    ("infer.ceil", "496", Kind::Float, "upper clamp of reconstructed radiance"),
    ("infer.overlap", "false", Kind::Flag, "average half-tile-shifted windows instead of a plain grid"),
    ("infer.batch", "4", Kind::Count, "tiles per forward pass"),
    ("synth.rows", "256", Kind::Count, "synthetic DMSP rows (even)"),
    ("synth.cols", "256", Kind::Count, "synthetic DMSP columns (even)"),
    ("synth.years", "2012F18,2013F18,2014F15,2014F18,2015F18,2016F18,2017F18,2018F18,2019F18", Kind::Products, "synthetic target products"),
];

/// `(key, default, description)` for every accepted key, in documentation
/// order.
pub fn config_keys() -> impl Iterator<Item = (&'static str, &'static str, &'static str)> {
    KEYS.iter().map(|k| (k.0, k.1, k.3))
}

fn check(kind: Kind, key: &str, v: &str) -> Result<()> {
    let bad = |what: &str| Err(Error::Config(format!("{key}: {v:?} is not {what}")));
    let float = |s: &str| s.parse::<f64>().is_ok_and(f64::is_finite);
    let ok = match kind {
        Kind::Float => float(v),
        Kind::Count => v.parse::<usize>().is_ok(),
        Kind::Seed => v.parse::<u64>().is_ok(),
        Kind::Flag => matches!(v, "true" | "false"),
        Kind::Product => v.parse::<ProductId>().is_ok(),
        Kind::Years => v.is_empty() || v.split(',').all(|s| s.trim().parse::<u16>().is_ok()),
        Kind::Products => v.is_empty() || v.split(',').all(|s| s.trim().parse::<ProductId>().is_ok()),
        Kind::Quad => v.split(',').filter(|s| s.trim().parse::<usize>().is_ok()).count() == 4 && v.split(',').count() == 4,
        Kind::Variant => matches!(v, "deepntl" | "linear"),
        Kind::FloatOrAuto => v == "auto" || float(v),
        Kind::CountOrAuto => v == "auto" || v.parse::<usize>().is_ok(),
    };
    if ok {
        Ok(())
    } else {
        bad(match kind {
            Kind::Float | Kind::FloatOrAuto => "a finite number",
            Kind::Count | Kind::CountOrAuto | Kind::Seed => "a non-negative integer",
            Kind::Flag => "true or false",
            Kind::Product => "a product id such as 2014F15 or VIIRS2014",
            Kind::Years => "a comma-separated list of years",
            Kind::Products => "a comma-separated list of product ids",
            Kind::Quad => "four comma-separated integers",
            Kind::Variant => "deepntl or linear",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.0, k.1.to_owned())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some(&(k, _, kind, _)) = KEYS.iter().find(|k| k.0 == key) else {
            return Err(Error::Config(format!("unknown key {key:?}")));
        };
        let value = value.trim();
        check(kind, k, value)?;
        self.values.insert(k, value.to_owned());
        Ok(())
    }

    /// Applies `key = value` lines over the current values. `#` starts a
    /// comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every key with its current value, documented.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &(k, _, _, doc) in KEYS {
            let _ = writeln!(out, "# {doc}\n{k} = {}", self.values[k]);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered config key {key}"))
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on set")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated on set")
    }

    pub fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().expect("validated on set")
    }

    /// `None` when the value is `auto`.
    pub fn f64_or_auto(&self, key: &str) -> Option<f64> {
        self.get(key).parse().ok()
    }

    pub fn product(&self, key: &str) -> ProductId {
        self.get(key).parse().expect("validated on set")
    }

    pub fn products(&self, key: &str) -> Result<Vec<ProductId>> {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',').map(|s| s.trim().parse()).collect()
    }

    pub fn years(&self, key: &str) -> Result<Vec<u16>> {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("{key}: {s:?} is not a year"))))
            .collect()
    }

    fn quad(&self, key: &str) -> [usize; 4] {
        let v: Vec<usize> = self.get(key).split(',').map(|s| s.trim().parse().expect("validated on set")).collect();
        [v[0], v[1], v[2], v[3]]
    }

    /// The network described by the `model.*` keys. An `auto` VIIRS scale
    /// resolves to `auto_viirs_scale`.
    pub fn model_config(&self, auto_viirs_scale: Option<f32>) -> Result<ModelConfig> {
        let r = |k| {
            let [a, b, c, d] = self.quad(k);
            ResNetConfig::new(a, b, c, d)
        };
        let [dim, g, b, e] = self.quad("model.f1");
        let viirs_scale = match self.f64_or_auto("model.viirs_scale") {
            Some(v) => v as f32,
            None => auto_viirs_scale.ok_or_else(|| Error::Config("model.viirs_scale = auto needs training data to resolve".into()))?,
        };
        let cfg = ModelConfig {
            variant: if self.get("model.variant") == "linear" {
                Variant::LinearPrototype
            } else {
                Variant::DeepNtl
            },
            h: self.usize("model.h"),
            w: self.usize("model.w"),
            c: self.usize("model.c"),
            f3: r("model.f3"),
            hstar: r("model.hstar"),
            gstar: r("model.gstar"),
            f1: RcanConfig::new(dim, g, b, e),
            dmsp_scale: self.f64("model.dmsp_scale") as f32,
            viirs_scale,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Writes `cfg` back into the `model.*` keys.
    pub fn set_model(&mut self, cfg: &ModelConfig) {
        let q = |r: ResNetConfig| format!("{},{},{},{}", r.inp_c, r.mid_c, r.out_c, r.blocks);
        let v = &mut self.values;
        v.insert(
            "model.variant",
            match cfg.variant {
                Variant::DeepNtl => "deepntl",
                Variant::LinearPrototype => "linear",
            }
            .into(),
        );
        v.insert("model.h", cfg.h.to_string());
        v.insert("model.w", cfg.w.to_string());
        v.insert("model.c", cfg.c.to_string());
        v.insert("model.f3", q(cfg.f3));
        v.insert("model.hstar", q(cfg.hstar));
        v.insert("model.gstar", q(cfg.gstar));
        v.insert(
            "model.f1",
            format!("{},{},{},{}", cfg.f1.dim, cfg.f1.groups, cfg.f1.blocks, cfg.f1.reduction),
        );
        v.insert("model.dmsp_scale", cfg.dmsp_scale.to_string());
        v.insert("model.viirs_scale", cfg.viirs_scale.to_string());
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            lr0: self.f64("train.lr0"),
            decay: self.f64("train.decay"),
            patience: self.usize("train.patience"),
            batch_size: self.usize("train.batch_size"),
            epochs: self.usize("train.epochs"),
            seed: self.seed(),
            beta1: self.f64("train.beta1"),
            beta2: self.f64("train.beta2"),
            adam_eps: self.f64("train.adam_eps"),
        };
        t.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(t)
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            tile_h: self.usize("model.h"),
            tile_w: self.usize("model.w"),
            min_lit: self.f64("dataset.min_lit"),
            seed: self.seed(),
            max_attempts: self.get("dataset.max_attempts").parse().ok(),
        }
    }

    pub fn split_options(&self) -> Result<SplitOptions> {
        Ok(SplitOptions {
            train_frac: self.f64("dataset.train_frac"),
            seed: self.seed(),
            by_anchor: self.flag("dataset.by_anchor"),
            test_years: self.years("dataset.test_years")?,
        })
    }

    pub fn reconstruct_options(&self) -> ReconstructOptions {
        ReconstructOptions {
            ceil: self.f64("infer.ceil") as f32,
            overlap: self.flag("infer.overlap"),
            batch: self.usize("infer.batch"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_match_presets() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert!(c.model_config(None).is_err());
        let paper = ModelConfig::paper();
        assert_eq!(c.model_config(Some(paper.viirs_scale)).unwrap(), paper);
        assert_eq!(c.train_config().unwrap(), TrainConfig::default());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(RunConfig::parse("nope = 1"), Err(Error::Config(_))));
        assert!(RunConfig::parse("train.lr0 = fast").is_err());
        assert!(RunConfig::parse("model.f3 = 1,2,3").is_err());
        assert!(RunConfig::parse("just words").is_err());
        let c = RunConfig::parse("# comment\ntrain.epochs = 3 # trailing\n\ndataset.test_years =\n").unwrap();
        assert_eq!(c.usize("train.epochs"), 3);
        assert!(c.years("dataset.test_years").unwrap().is_empty());
    }

    #[test]
    fn auto_scale_needs_a_value() {
        let c = RunConfig::default();
        assert!(c.model_config(None).is_err());
        assert_eq!(c.model_config(Some(20.0)).unwrap().viirs_scale, 20.0);
    }

    #[test]
    fn set_model_is_inverse() {
        let mut c = RunConfig::default();
        let m = ModelConfig::small(8, 8, 4, 1, 4, 1, 1, 2).linear_prototype();
        c.set_model(&m);
        assert_eq!(c.model_config(None).unwrap(), m);
    }
}
