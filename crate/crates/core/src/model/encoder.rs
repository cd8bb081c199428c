//! Four-stage scratch encoder emitting side outputs at strides 2, 4, 8, 16.

use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, ParamSpec, ParamVars};
use crate::tensor::Shape;

use super::PmcnetConfig;

/// Epsilon of every spatial normalisation layer.
pub const NORM_EPS: f64 = 1e-5;

/// Encoder side outputs `f_1..f_4`; `f[i-1]` has `C_i` channels at stride `2^i`.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub f: [Var; 4],
}

impl FeaturePyramid {
    /// Side output of stage `i` (1-based).
    pub fn level(&self, i: usize) -> Var {
        self.f[i - 1]
    }
}

fn conv_block_specs(prefix: &str, cin: usize, cout: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::conv(format!("{prefix}.weight"), cout, cin, 3),
        ParamSpec::vector(format!("{prefix}.gamma"), cout, Init::Ones),
        ParamSpec::vector(format!("{prefix}.beta"), cout, Init::Zeros),
    ]
}

pub fn encoder_specs(cfg: &PmcnetConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut cin = 3;
    for i in 1..=4 {
        let c = cfg.channels(i);
        specs.extend(conv_block_specs(&format!("enc.s{i}.down"), cin, c));
        specs.extend(conv_block_specs(&format!("enc.s{i}.conv"), c, c));
        cin = c;
    }
    specs
}

/// 3x3 conv (no bias: the following normalisation removes any constant
/// offset) → spatial norm → ReLU.
pub(crate) fn conv_norm_relu(
    g: &mut Graph,
    pv: &ParamVars,
    x: Var,
    prefix: &str,
    stride: usize,
) -> Result<Var> {
    let k = pv.get(&format!("{prefix}.weight"))?;
    let bias = g.zeros(Shape::new(g.shape(k).n, 1, 1, 1));
    let y = g.conv2d_same(x, k, bias, stride)?;
    let gamma = pv.get(&format!("{prefix}.gamma"))?;
    let beta = pv.get(&format!("{prefix}.beta"))?;
    let y = g.spatial_norm(y, gamma, beta, NORM_EPS)?;
    Ok(g.relu(y))
}

pub fn encoder_forward(
    g: &mut Graph,
    pv: &ParamVars,
    image: Var,
    cfg: &PmcnetConfig,
) -> Result<FeaturePyramid> {
    let s = g.shape(image);
    if s.c != 3 {
        return Err(invalid(format!("encoder expects 3 input channels, got {}", s.c)));
    }
    if s.h % 16 != 0 || s.w % 16 != 0 {
        return Err(invalid(format!(
            "encoder input height and width must be divisible by 16, got {}x{}",
            s.h, s.w
        )));
    }
    let mut x = image;
    let mut f = [image; 4];
    for (i, slot) in f.iter_mut().enumerate() {
        let stage = i + 1;
        x = conv_norm_relu(g, pv, x, &format!("enc.s{stage}.down"), 2)?;
        x = conv_norm_relu(g, pv, x, &format!("enc.s{stage}.conv"), 1)?;
        let c = g.shape(x).c;
        if c != cfg.channels(stage) {
            return Err(invalid(format!(
                "stage {stage} produced {c} channels, config expects {}",
                cfg.channels(stage)
            )));
        }
        *slot = x;
    }
    Ok(FeaturePyramid { f })
}
