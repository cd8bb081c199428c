//! Progressive feature fusion.
//!
//! For stage `i` with middle features `f_i`:
//!
//! ```text
//! f'_{i+1} = UP(Conv1x1(f_{i+1}))          (zero when i = 4)
//! f'_{i-1} = Conv1x1(Down(f_{i-1}))        (zero when i = 1)
//! f''_{i+1} = f'_{i+1} ⊗ f_i
//! f''_{i-1} = f'_{i-1} ⊗ f_i
//! out = Concat(f''_{i-1}, f''_{i+1})       (2·C_i channels)
//! ```

use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, ParamSpec, ParamVars};
use crate::tensor::Shape;

use super::{Downsample, FeaturePyramid, Fusion, PmcnetConfig};

/// Every tensor produced inside one fusion block, all `(N, C_i, H_i, W_i)`
/// except `out`, which has `2·C_i` channels.
#[derive(Clone, Copy, Debug)]
pub struct PffIntermediates {
    /// Transformed high-level features.
    pub f_up: Var,
    /// Transformed low-level features.
    pub f_down: Var,
    /// Enhanced high-level features.
    pub g_high: Var,
    /// Enhanced low-level features.
    pub g_low: Var,
    pub out: Var,
}

pub(crate) fn conv1x1_specs(prefix: &str, cin: usize, cout: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::conv(format!("{prefix}.weight"), cout, cin, 1),
        ParamSpec::vector(format!("{prefix}.bias"), cout, Init::Zeros),
    ]
}

/// Parameters of the stride-2 downsampler for a `c`-channel input.
pub(crate) fn downsample_specs(prefix: &str, c: usize, mode: Downsample) -> Vec<ParamSpec> {
    match mode {
        Downsample::MaxPool => Vec::new(),
        Downsample::DwConv => vec![
            ParamSpec::depthwise(format!("{prefix}.weight"), c),
            ParamSpec::vector(format!("{prefix}.bias"), c, Init::Zeros),
        ],
        Downsample::Conv => vec![
            ParamSpec::conv(format!("{prefix}.weight"), c, c, 3),
            ParamSpec::vector(format!("{prefix}.bias"), c, Init::Zeros),
        ],
    }
}

pub(crate) fn conv1x1(g: &mut Graph, pv: &ParamVars, x: Var, prefix: &str) -> Result<Var> {
    let k = pv.get(&format!("{prefix}.weight"))?;
    let b = pv.get(&format!("{prefix}.bias"))?;
    g.conv2d_same(x, k, b, 1)
}

pub(crate) fn downsample(
    g: &mut Graph,
    pv: &ParamVars,
    x: Var,
    prefix: &str,
    mode: Downsample,
) -> Result<Var> {
    match mode {
        Downsample::MaxPool => g.max_pool2(x),
        Downsample::DwConv => {
            let k = pv.get(&format!("{prefix}.weight"))?;
            let b = pv.get(&format!("{prefix}.bias"))?;
            g.depthwise_conv2d_s2(x, k, b)
        }
        Downsample::Conv => {
            let k = pv.get(&format!("{prefix}.weight"))?;
            let b = pv.get(&format!("{prefix}.bias"))?;
            g.conv2d_same(x, k, b, 2)
        }
    }
}

pub fn pff_specs(cfg: &PmcnetConfig, i: usize) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let c = cfg.channels(i);
    if i < 4 && cfg.fusion.uses_high() {
        specs.extend(conv1x1_specs(&format!("pff{i}.high"), cfg.channels(i + 1), c));
    }
    if i > 1 && cfg.fusion.uses_low() {
        let cl = cfg.channels(i - 1);
        specs.extend(downsample_specs(&format!("pff{i}.low.down"), cl, cfg.downsample));
        specs.extend(conv1x1_specs(&format!("pff{i}.low.proj"), cl, c));
    }
    specs
}

/// Fusion block `PFF_i` (`i` in 1..=4) under one of the progressive modes.
pub fn pff_forward(
    g: &mut Graph,
    pyr: &FeaturePyramid,
    i: usize,
    pv: &ParamVars,
    cfg: &PmcnetConfig,
) -> Result<PffIntermediates> {
    if !(1..=4).contains(&i) {
        return Err(invalid(format!("fusion stage must be in 1..=4, got {i}")));
    }
    if !cfg.fusion.is_progressive() {
        return Err(invalid(format!(
            "fusion mode `{}` is not a progressive fusion mode",
            cfg.fusion
        )));
    }
    let mid = pyr.level(i);
    let shape: Shape = g.shape(mid);

    let f_up = if i < 4 && cfg.fusion.uses_high() {
        let t = conv1x1(g, pv, pyr.level(i + 1), &format!("pff{i}.high"))?;
        g.upsample2x(t)?
    } else {
        g.zeros(shape)
    };
    let f_down = if i > 1 && cfg.fusion.uses_low() {
        let d = downsample(g, pv, pyr.level(i - 1), &format!("pff{i}.low.down"), cfg.downsample)?;
        conv1x1(g, pv, d, &format!("pff{i}.low.proj"))?
    } else {
        g.zeros(shape)
    };

    let (g_high, g_low) = if cfg.fusion == Fusion::PffSum {
        (g.add(f_up, mid)?, g.add(f_down, mid)?)
    } else {
        (g.mul(f_up, mid)?, g.mul(f_down, mid)?)
    };

    let out = match cfg.fusion {
        Fusion::PffLow => g.concat_channels(g_low, mid)?,
        Fusion::PffHigh => g.concat_channels(mid, g_high)?,
        _ => g.concat_channels(g_low, g_high)?,
    };
    Ok(PffIntermediates {
        f_up,
        f_down,
        g_high,
        g_low,
        out,
    })
}
