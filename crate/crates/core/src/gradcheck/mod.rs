//! Central finite-difference gradient checking.

pub mod suite;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng;
use crate::tensor::{Shape, Tensor};

/// Default finite-difference step at 64-bit.
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// When set, only this many coordinates per input are perturbed, chosen
    /// by a seeded draw. `None` checks every coordinate.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: DEFAULT_EPS,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

/// Relative error `|a - n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("function value {v}")));
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar function `f` with central
/// differences at every (or a sampled subset of) input coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out).item()?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    for (i, a) in analytic.iter().enumerate() {
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient of input {i}")));
        }
    }
    drop(g);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < input.len() => {
                let mut r = rng::stream(opts.seed, "gradcheck-coords", &[idx as u64]);
                let mut c = sample(&mut r, input.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..input.len()).collect(),
        };
        for j in coords {
            let orig = input.data()[j];
            let mut at = |d: f64| -> Result<f64> {
                work[idx].data_mut()[j] = orig + d;
                evaluate(&f, &work)
            };
            let h = opts.eps;
            // fourth-order central stencil
            let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
            work[idx].data_mut()[j] = orig;
            let err = relative_error(analytic[idx].data()[j], numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((idx, j));
            }
        }
    }
    Ok(report)
}

/// Uniform draws in `[lo, hi)` nudged at least `margin` away from zero, so
/// ReLU and max-pool kinks are not straddled by the finite-difference step.
pub fn random_tensor(shape: Shape, seed: u64, lo: f64, hi: f64, margin: f64) -> Tensor {
    let mut r = rng::stream(seed, "gradcheck-input", &[]);
    Tensor::from_fn(shape, |_, _, _, _| {
        let mut v: f64 = r.gen_range(lo..hi);
        if v.abs() < margin {
            v = if v < 0.0 { v - margin } else { v + margin };
        }
        v
    })
}

/// Fixed random projection used to turn a tensor-valued function into a
/// scalar one.
pub fn projection(shape: Shape, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "gradcheck-projection", &[]);
    Tensor::from_fn(shape, |_, _, _, _| r.gen_range(-1.0..1.0))
}
