//! Decoder: `D_0 = A^4`, then for `i = 1..3`
//! `D_i = Conv3x3(Conv3x3(Proj(UP(D_{i-1})) ⊕ A^{4-i}))`, each 3x3 conv
//! followed by ReLU. The head upsamples `D_3` to input resolution and maps it
//! to class logits with a 1x1 conv.

use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, ParamSpec, ParamVars};

use super::pff::{conv1x1, conv1x1_specs};
use super::PmcnetConfig;

fn conv3x3_specs(prefix: &str, cin: usize, cout: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::conv(format!("{prefix}.weight"), cout, cin, 3),
        ParamSpec::vector(format!("{prefix}.bias"), cout, Init::Zeros),
    ]
}

pub fn decoder_specs(cfg: &PmcnetConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    for i in 1..=3 {
        let cin = cfg.channels(5 - i);
        let c = cfg.channels(4 - i);
        specs.extend(conv1x1_specs(&format!("dec.d{i}.proj"), cin, c));
        specs.extend(conv3x3_specs(&format!("dec.d{i}.conv_a"), c, c));
        specs.extend(conv3x3_specs(&format!("dec.d{i}.conv_b"), c, c));
    }
    specs.extend(conv1x1_specs("head", cfg.channels(1), cfg.num_classes));
    specs
}

/// Decoder activations `[D0, D1, D2, D3]` and the head logits.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub d: [Var; 4],
    pub logits: Var,
}

fn conv3x3_relu(g: &mut Graph, pv: &ParamVars, x: Var, prefix: &str) -> Result<Var> {
    let k = pv.get(&format!("{prefix}.weight"))?;
    let b = pv.get(&format!("{prefix}.bias"))?;
    let y = g.conv2d_same(x, k, b, 1)?;
    Ok(g.relu(y))
}

/// `attended[i-1]` is `A^i`.
pub fn decoder_forward(
    g: &mut Graph,
    attended: &[Var; 4],
    pv: &ParamVars,
    cfg: &PmcnetConfig,
) -> Result<DecoderState> {
    for (idx, &a) in attended.iter().enumerate() {
        let i = idx + 1;
        let s = g.shape(a);
        let (h, w) = cfg.stage_hw(i);
        if s.c != cfg.channels(i) || s.h != h || s.w != w {
            return Err(invalid(format!(
                "decoder input A^{i} has shape {s}, expected {} channels at {h}x{w}",
                cfg.channels(i)
            )));
        }
    }
    let mut d = [attended[3]; 4];
    for i in 1..=3 {
        let up = g.upsample2x(d[i - 1])?;
        let proj = conv1x1(g, pv, up, &format!("dec.d{i}.proj"))?;
        let merged = g.add(proj, attended[3 - i])?;
        let x = conv3x3_relu(g, pv, merged, &format!("dec.d{i}.conv_a"))?;
        d[i] = conv3x3_relu(g, pv, x, &format!("dec.d{i}.conv_b"))?;
    }
    let up = g.upsample2x(d[3])?;
    let logits = conv1x1(g, pv, up, "head")?;
    Ok(DecoderState { d, logits })
}
