use crate::error::{Error, Result};

/// Modified ResNet hyperparameters: input, middle and output channels and
/// the number of stacked residual blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResNetConfig {
    pub inp_c: usize,
    pub mid_c: usize,
    pub out_c: usize,
    pub blocks: usize,
}

impl ResNetConfig {
    pub const fn new(inp_c: usize, mid_c: usize, out_c: usize, blocks: usize) -> Self {
        Self {
            inp_c,
            mid_c,
            out_c,
            blocks,
        }
    }

    /// Whether the first block and the long skip need a channel-matching conv.
    pub fn needs_projection(&self) -> bool {
        self.inp_c != self.mid_c
    }
}

/// RCAN hyperparameters: feature width, residual groups, blocks per group
/// and channel-attention reduction ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RcanConfig {
    pub dim: usize,
    pub groups: usize,
    pub blocks: usize,
    pub reduction: usize,
}

impl RcanConfig {
    pub const fn new(dim: usize, groups: usize, blocks: usize, reduction: usize) -> Self {
        Self {
            dim,
            groups,
            blocks,
            reduction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Nonlinear composition `G*(F3(viirs_ref), H*(F1(ref), F1(tgt)))`.
    DeepNtl,
    /// Ablation: `G(F3(viirs_ref) - H(F1(ref) - F1(tgt)))` with a 1x1 `H`.
    LinearPrototype,
}

impl Variant {
    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::DeepNtl => 0,
            Variant::LinearPrototype => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Variant::DeepNtl),
            1 => Ok(Variant::LinearPrototype),
            _ => Err(Error::Corrupt(format!("unknown model variant {c}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// DMSP tile height and width; VIIRS tiles are twice as large.
    pub h: usize,
    pub w: usize,
    /// Channels at the fusion point.
    pub c: usize,
    pub f3: ResNetConfig,
    pub hstar: ResNetConfig,
    pub gstar: ResNetConfig,
    pub f1: RcanConfig,
    /// Divisors mapping DMSP DN and VIIRS radiance into network units.
    pub dmsp_scale: f32,
    pub viirs_scale: f32,
}

impl ModelConfig {
    /// The published architecture: 128x128 DMSP tiles, c = 32,
    /// F3 (1, 32, 32, 16), H* (2, 32, 32, 32), G* (64, 64, 1, 32),
    /// F1 dim 64 with 6 groups of 6 blocks and reduction 16.
    pub fn paper() -> Self {
        Self {
            variant: Variant::DeepNtl,
            h: 128,
            w: 128,
            c: 32,
            f3: ResNetConfig::new(1, 32, 32, 16),
            hstar: ResNetConfig::new(2, 32, 32, 32),
            gstar: ResNetConfig::new(64, 64, 1, 32),
            f1: RcanConfig::new(64, 6, 6, 16),
            dmsp_scale: 63.0,
            viirs_scale: 496.0,
        }
    }

    /// Smallest structurally complete network, used for gradient checks.
    pub fn toy() -> Self {
        Self::small(4, 4, 2, 1, 4, 1, 1, 2)
    }

    /// Builds a consistent config from a handful of sizes: every ResNet
    /// uses `blocks` blocks with middle width `c` (G* uses `2c`).
    #[allow(clippy::too_many_arguments)]
    pub fn small(h: usize, w: usize, c: usize, blocks: usize, dim: usize, groups: usize, rcabs: usize, reduction: usize) -> Self {
        Self {
            variant: Variant::DeepNtl,
            h,
            w,
            c,
            f3: ResNetConfig::new(1, c, c, blocks),
            hstar: ResNetConfig::new(2, c, c, blocks),
            gstar: ResNetConfig::new(2 * c, 2 * c, 1, blocks),
            f1: RcanConfig::new(dim, groups, rcabs, reduction),
            dmsp_scale: 63.0,
            viirs_scale: 496.0,
        }
    }

    /// Same sizes, linear-prototype composition. G then takes `c` channels.
    pub fn linear_prototype(mut self) -> Self {
        self.variant = Variant::LinearPrototype;
        self.gstar.inp_c = self.c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("model config: {m}")));
        if self.h == 0 || self.w == 0 || self.c == 0 {
            return bad("h, w and c must be positive".into());
        }
        for (name, r) in [("f3", self.f3), ("hstar", self.hstar), ("gstar", self.gstar)] {
            if r.inp_c == 0 || r.mid_c == 0 || r.out_c == 0 || r.blocks == 0 {
                return bad(format!("{name} sizes must be positive: {r:?}"));
            }
        }
        let gstar_in = match self.variant {
            Variant::DeepNtl => 2 * self.c,
            Variant::LinearPrototype => self.c,
        };
        if self.f3.inp_c != 1 {
            return bad(format!("f3.inpC must be 1, got {}", self.f3.inp_c));
        }
        if self.hstar.inp_c != 2 {
            return bad(format!("hstar.inpC must be 2, got {}", self.hstar.inp_c));
        }
        if self.gstar.inp_c != gstar_in {
            return bad(format!("gstar.inpC must be {gstar_in}, got {}", self.gstar.inp_c));
        }
        if self.gstar.out_c != 1 {
            return bad(format!("gstar.outC must be 1, got {}", self.gstar.out_c));
        }
        if self.f3.out_c != self.c || self.hstar.out_c != self.c {
            return bad(format!(
                "f3.outC ({}) and hstar.outC ({}) must equal c ({})",
                self.f3.out_c, self.hstar.out_c, self.c
            ));
        }
        let f1 = self.f1;
        if f1.dim == 0 || f1.groups == 0 || f1.blocks == 0 || f1.reduction == 0 {
            return bad(format!("f1 sizes must be positive: {f1:?}"));
        }
        if !f1.dim.is_multiple_of(f1.reduction) {
            return bad(format!("f1.dim {} not divisible by e = {}", f1.dim, f1.reduction));
        }
        if !(self.dmsp_scale > 0.0 && self.viirs_scale > 0.0) {
            return bad("normalization scales must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::toy().validate().unwrap();
        ModelConfig::toy().linear_prototype().validate().unwrap();
        let paper = ModelConfig::paper();
        assert_eq!(paper.f3, ResNetConfig::new(1, 32, 32, 16));
        assert_eq!(paper.gstar.inp_c, 2 * paper.c);
    }

    #[test]
    fn rejects_channel_violations() {
        let mut c = ModelConfig::toy();
        c.gstar.inp_c = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.f1.reduction = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.hstar.out_c = 5;
        assert!(c.validate().is_err());
    }
}
