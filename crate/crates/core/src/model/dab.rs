//! Dynamic attention block: channel-wise, spatial-wise and point-wise
//! attention over the same input, summed and projected.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamSpec, ParamVars};

use super::pff::{conv1x1, conv1x1_specs};

/// Attention maps of one block. `a_c`, `a_s`, `a_p` and `w` share the input
/// shape; `out` has the projected channel count.
#[derive(Clone, Copy, Debug)]
pub struct DabOutputs {
    pub a_c: Var,
    pub a_s: Var,
    pub a_p: Var,
    /// Point-wise weights, in `[0, 1]`.
    pub w: Var,
    pub out: Var,
}

/// `prefix.fc` (cin→cin), `prefix.point` (1x1, cin→cin), `prefix.out` (1x1, cin→cout).
pub fn dab_specs(prefix: &str, cin: usize, cout: usize) -> Vec<ParamSpec> {
    let mut specs = conv1x1_specs(&format!("{prefix}.fc"), cin, cin);
    specs.extend(conv1x1_specs(&format!("{prefix}.point"), cin, cin));
    specs.extend(conv1x1_specs(&format!("{prefix}.out"), cin, cout));
    specs
}

pub fn dab_forward(g: &mut Graph, x: Var, pv: &ParamVars, prefix: &str) -> Result<DabOutputs> {
    let pooled = g.global_avg_pool(x);
    let fc_w = pv.get(&format!("{prefix}.fc.weight"))?;
    let fc_b = pv.get(&format!("{prefix}.fc.bias"))?;
    let channel_logits = g.fully_connected(pooled, fc_w, fc_b)?;
    let channel_weights = g.sigmoid(channel_logits);
    let a_c = g.scale_by(x, channel_weights)?;

    let squeezed = g.channel_avg(x);
    let spatial_weights = g.sigmoid(squeezed);
    let a_s = g.scale_by(x, spatial_weights)?;

    let point_logits = conv1x1(g, pv, x, &format!("{prefix}.point"))?;
    let w = g.sigmoid(point_logits);
    let a_p = g.mul(w, x)?;

    let sum = g.add(a_c, a_s)?;
    let sum = g.add(sum, a_p)?;
    let proj = conv1x1(g, pv, sum, &format!("{prefix}.out"))?;
    let out = g.relu(proj);
    Ok(DabOutputs {
        a_c,
        a_s,
        a_p,
        w,
        out,
    })
}
