use super::config::{ModelConfig, RcanConfig, ResNetConfig, Variant};
use super::params::Params;
use crate::autodiff::{
    add, batch_norm, concat_channels, conv2d, global_avg_pool, mul_channels, pixel_shuffle, relu, sigmoid, sub, Real, Tensor,
    BN_EPS, BN_MOMENTUM,
};
use crate::error::{Error, Result};

fn tag<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Shape { stage: inner, message } => Error::Shape {
            stage: format!("{stage}/{inner}"),
            message,
        },
        e => e,
    })
}

/// Same-size conv with the kernel size taken from the weight; the bias is
/// used when the parameter set has one.
fn conv<T: Real>(p: &Params<T>, key: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
    let w = p.get(&format!("{key}.weight"))?;
    let bias_key = format!("{key}.bias");
    let b = if p.contains(&bias_key) { Some(p.get(&bias_key)?) } else { None };
    let k = w.shape().get(2).copied().unwrap_or(1);
    tag(key, conv2d(x, w, b, 1, k / 2))
}

fn norm<T: Real>(p: &Params<T>, key: &str, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
    let state = p.norm_state(key)?;
    let gamma = p.get(&format!("{key}.gamma"))?;
    let beta = p.get(&format!("{key}.beta"))?;
    tag(key, batch_norm(x, gamma, beta, &state, training, BN_EPS, BN_MOMENTUM))
}

fn expect_channels<T: Real>(stage: &str, x: &Tensor<T>, c: usize) -> Result<()> {
    match x.shape() {
        [_, ch, _, _] if *ch == c => Ok(()),
        s => Err(Error::shape(stage, format!("expected (N,{c},H,W), got {s:?}"))),
    }
}

/// Modified ResNet: `blocks` residual blocks, a long skip from the input and
/// a Conv-Norm-ReLU tail to `out_c` channels. Spatial size is preserved.
pub fn resnet_forward<T: Real>(
    x: &Tensor<T>,
    p: &Params<T>,
    prefix: &str,
    cfg: &ResNetConfig,
    training: bool,
) -> Result<Tensor<T>> {
    expect_channels(prefix, x, cfg.inp_c)?;
    let mut h = x.clone();
    for s in 0..cfg.blocks {
        let key = format!("{prefix}.block{s}");
        let y = relu(&norm(p, &format!("{key}.norm1"), &conv(p, &format!("{key}.conv1"), &h)?, training)?);
        let y = norm(p, &format!("{key}.norm2"), &conv(p, &format!("{key}.conv2"), &y)?, training)?;
        let skip = if s == 0 && cfg.needs_projection() {
            conv(p, &format!("{key}.skip"), &h)?
        } else {
            h
        };
        h = relu(&tag(&key, add(&y, &skip))?);
    }
    let long = if cfg.needs_projection() {
        conv(p, &format!("{prefix}.long_skip"), x)?
    } else {
        x.clone()
    };
    let h = tag(prefix, add(&h, &long))?;
    let h = conv(p, &format!("{prefix}.tail.conv"), &h)?;
    Ok(relu(&norm(p, &format!("{prefix}.tail.norm"), &h, training)?))
}

/// Per-channel gating: pool, 1x1 squeeze to `dim / e`, ReLU, 1x1 expand,
/// sigmoid, multiply.
pub fn channel_attention<T: Real>(x: &Tensor<T>, p: &Params<T>, prefix: &str, e: usize) -> Result<Tensor<T>> {
    let dim = x.shape().get(1).copied().unwrap_or(0);
    if e == 0 || dim % e != 0 {
        return Err(Error::shape(prefix, format!("channel count {dim} not divisible by reduction {e}")));
    }
    let s = tag(prefix, global_avg_pool(x))?;
    let s = relu(&conv(p, &format!("{prefix}.down"), &s)?);
    let s = sigmoid(&conv(p, &format!("{prefix}.up"), &s)?);
    tag(prefix, mul_channels(x, &s))
}

/// Residual channel attention network; maps (N,1,h,w) to (N,1,2h,2w).
pub fn rcan_forward<T: Real>(x: &Tensor<T>, p: &Params<T>, prefix: &str, cfg: &RcanConfig) -> Result<Tensor<T>> {
    expect_channels(prefix, x, 1)?;
    let x0 = conv(p, &format!("{prefix}.shallow"), x)?;
    let mut h = x0.clone();
    for g in 0..cfg.groups {
        let group_in = h.clone();
        for r in 0..cfg.blocks {
            let key = format!("{prefix}.group{g}.rcab{r}");
            let y = conv(p, &format!("{key}.conv"), &h)?;
            let y = channel_attention(&y, p, &format!("{key}.attention"), cfg.reduction)?;
            h = tag(&key, add(&y, &h))?;
        }
        let y = conv(p, &format!("{prefix}.group{g}.conv"), &h)?;
        h = tag(prefix, add(&y, &group_in))?;
    }
    let h = tag(prefix, add(&conv(p, &format!("{prefix}.body_conv"), &h)?, &x0))?;
    let h = conv(p, &format!("{prefix}.upscale"), &h)?;
    let h = tag(prefix, pixel_shuffle(&h, 2))?;
    conv(p, &format!("{prefix}.reconstruct"), &h)
}

fn check_inputs<T: Real>(dmsp_ref: &Tensor<T>, dmsp_tgt: &Tensor<T>, viirs_ref: &Tensor<T>) -> Result<()> {
    let [n, 1, h, w] = *dmsp_ref.shape() else {
        return Err(Error::shape("input", format!("dmsp_ref must be (N,1,h,w), got {:?}", dmsp_ref.shape())));
    };
    if dmsp_tgt.shape() != dmsp_ref.shape() {
        return Err(Error::shape(
            "input",
            format!("dmsp_tgt {:?} differs from dmsp_ref {:?}", dmsp_tgt.shape(), dmsp_ref.shape()),
        ));
    }
    if viirs_ref.shape() != [n, 1, 2 * h, 2 * w] {
        return Err(Error::shape(
            "input",
            format!("viirs_ref must be {:?}, got {:?}", [n, 1, 2 * h, 2 * w], viirs_ref.shape()),
        ));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::shape("input", "empty batch"));
    }
    Ok(())
}

/// `G*(cat(F3(viirs_ref), H*(cat(F1(dmsp_ref), F1(dmsp_tgt)))))` with one
/// shared F1.
pub fn deepntl_forward<T: Real>(
    dmsp_ref: &Tensor<T>,
    dmsp_tgt: &Tensor<T>,
    viirs_ref: &Tensor<T>,
    p: &Params<T>,
    cfg: &ModelConfig,
    training: bool,
) -> Result<Tensor<T>> {
    check_inputs(dmsp_ref, dmsp_tgt, viirs_ref)?;
    let a = rcan_forward(dmsp_ref, p, "f1", &cfg.f1)?;
    let b = rcan_forward(dmsp_tgt, p, "f1", &cfg.f1)?;
    let diff = resnet_forward(&tag("hstar", concat_channels(&a, &b))?, p, "hstar", &cfg.hstar, training)?;
    let feat = resnet_forward(viirs_ref, p, "f3", &cfg.f3, training)?;
    let fused = tag("gstar", concat_channels(&feat, &diff))?;
    // the G* tail already ends in a ReLU, so the output is nonnegative
    resnet_forward(&fused, p, "gstar", &cfg.gstar, training)
}

/// `G(F3(viirs_ref) - H(F1(dmsp_ref) - F1(dmsp_tgt)))` with a 1x1 conv `H`.
pub fn linear_prototype_forward<T: Real>(
    dmsp_ref: &Tensor<T>,
    dmsp_tgt: &Tensor<T>,
    viirs_ref: &Tensor<T>,
    p: &Params<T>,
    cfg: &ModelConfig,
    training: bool,
) -> Result<Tensor<T>> {
    check_inputs(dmsp_ref, dmsp_tgt, viirs_ref)?;
    let a = rcan_forward(dmsp_ref, p, "f1", &cfg.f1)?;
    let b = rcan_forward(dmsp_tgt, p, "f1", &cfg.f1)?;
    let d = conv(p, "h", &tag("h", sub(&a, &b))?)?;
    let feat = resnet_forward(viirs_ref, p, "f3", &cfg.f3, training)?;
    let x = tag("gstar", sub(&feat, &d))?;
    resnet_forward(&x, p, "gstar", &cfg.gstar, training)
}

/// Dispatches on `cfg.variant`. Inputs are in network units.
pub fn forward<T: Real>(
    dmsp_ref: &Tensor<T>,
    dmsp_tgt: &Tensor<T>,
    viirs_ref: &Tensor<T>,
    p: &Params<T>,
    cfg: &ModelConfig,
    training: bool,
) -> Result<Tensor<T>> {
    match cfg.variant {
        Variant::DeepNtl => deepntl_forward(dmsp_ref, dmsp_tgt, viirs_ref, p, cfg, training),
        Variant::LinearPrototype => linear_prototype_forward(dmsp_ref, dmsp_tgt, viirs_ref, p, cfg, training),
    }
}
