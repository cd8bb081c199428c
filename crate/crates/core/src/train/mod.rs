//! Loss, Adam, the poly schedule, augmentation and the training loop.

pub mod augment;

pub use augment::{apply, augment, flip_h, flip_v, rescale, AugmentConfig, AugmentDraw};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{format_err, invalid, Error, Result};
use crate::graph::Graph;
use crate::metrics::{evaluate, MetricsReport, Pooling};
use crate::model::{pmcnet_forward, Pmcnet, PmcnetConfig};
use crate::params::{ParamVars, Parameters};
use crate::rng;
use crate::synth::{onehot, SegSample};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub max_iters: usize,
    pub poly_power: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Always 1.
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Validation every this many iterations; 0 disables it.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            max_iters: 200,
            poly_power: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 1,
            seed: 0,
            augment: AugmentConfig::default(),
            eval_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.poly_power >= 0.0) {
            return Err(invalid(format!("poly_power must be >= 0, got {}", self.poly_power)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(invalid(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        if self.batch_size != 1 {
            return Err(invalid(format!("batch_size must be 1, got {}", self.batch_size)));
        }
        self.augment.validate()
    }
}

/// `base * (1 - iter / max_iters)^power`.
pub fn poly_lr(base: f64, iter: usize, max_iters: usize, power: f64) -> Result<f64> {
    if iter > max_iters {
        return Err(invalid(format!("poly_lr: iter {iter} > max_iters {max_iters}")));
    }
    if max_iters == 0 {
        return Ok(base);
    }
    Ok(base * (1.0 - iter as f64 / max_iters as f64).powf(power))
}

/// First and second moments per parameter path.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut Parameters,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (path, p) in params.iter() {
        let g = grads
            .get(path)
            .ok_or_else(|| invalid(format!("adam_step: missing gradient for `{path}`")))?;
        if g.shape() != p.shape() {
            return Err(invalid(format!("adam_step: gradient shape mismatch for `{path}`")));
        }
        if !state.m.contains_key(path) || !state.v.contains_key(path) {
            return Err(invalid(format!("adam_step: no optimizer state for `{path}`")));
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (path, p) in params.iter_mut() {
        let g = grads[path].data();
        let m = state.m.get_mut(path).expect("checked").data_mut();
        let v = state.v.get_mut(path).expect("checked").data_mut();
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Cross-entropy of the network on one sample and the gradient of every
/// parameter.
pub fn loss_and_grads(
    model: &Pmcnet,
    sample: &SegSample,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let pv = ParamVars::bind(&mut g, &model.params);
    let x = g.constant(sample.image.clone());
    let probs = pmcnet_forward(&mut g, &pv, x, &model.cfg)?;
    let target = onehot(&sample.mask, model.cfg.num_classes)?;
    let loss = g.cross_entropy(probs, &target)?;
    let value = g.value(loss).item()?;
    let grads = g.backward(loss)?;
    let map = pv.iter().map(|(k, &v)| (k.clone(), grads.wrt(v))).collect();
    Ok((value, map))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

/// `iter<TAB>lr<TAB>loss` lines, reals at 9 significant digits.
pub fn format_loss_log(records: &[LossRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{}\t{:.8e}\t{:.8e}", r.iter, r.lr, r.loss);
    }
    s
}

pub fn parse_loss_log(text: &str) -> Result<Vec<LossRecord>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let bad = || format_err("loss log", format!("line {}: {line:?}", n + 1));
            let mut f = line.split('\t');
            let (Some(i), Some(lr), Some(loss), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(bad());
            };
            Ok(LossRecord {
                iter: i.parse().map_err(|_| bad())?,
                lr: lr.parse().map_err(|_| bad())?,
                loss: loss.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Pmcnet,
    pub losses: Vec<LossRecord>,
    /// `(iteration, validation report)` at each evaluation point.
    pub evals: Vec<(usize, MetricsReport)>,
}

/// Trains from the seed-derived initialisation, one sample per step.
///
/// Sample order is a fresh seeded permutation per epoch; augmentation draws
/// are keyed by iteration.
pub fn train(
    model_cfg: &PmcnetConfig,
    cfg: &TrainConfig,
    train_set: &[SegSample],
    val_set: &[SegSample],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut model = Pmcnet::init(model_cfg.clone(), cfg.seed)?;
    let mut state = AdamState::new(&model.params);
    let mut losses = Vec::with_capacity(cfg.max_iters);
    let mut evals = Vec::new();
    let mut order: Vec<usize> = Vec::new();

    for iter in 0..cfg.max_iters {
        let pos = iter % train_set.len();
        if pos == 0 {
            let epoch = (iter / train_set.len()) as u64;
            order = (0..train_set.len()).collect();
            order.shuffle(&mut rng::stream(cfg.seed, "train-order", &[epoch]));
        }
        let mut r = rng::stream(cfg.seed, "train-augment", &[iter as u64]);
        let sample = augment(&train_set[order[pos]], &mut r, &cfg.augment);
        let lr = poly_lr(cfg.base_lr, iter, cfg.max_iters, cfg.poly_power)?;
        let (loss, grads) = loss_and_grads(&model, &sample)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iter, lr, loss });
        }
        adam_step(&mut model.params, &grads, &mut state, lr, cfg)?;
        losses.push(LossRecord { iter, lr, loss });
        if cfg.eval_interval > 0 && (iter + 1) % cfg.eval_interval == 0 && !val_set.is_empty() {
            match evaluate(&model, val_set, Pooling::Micro) {
                Ok(report) => evals.push((iter + 1, report)),
                // a validation split without lesions has nothing to score
                Err(Error::UndefinedMetric(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(TrainOutcome { model, losses, evals })
}

/// Mean loss of the first and last `k` records.
pub fn head_tail_means(losses: &[LossRecord], k: usize) -> Option<(f64, f64)> {
    if k == 0 || losses.len() < k {
        return None;
    }
    let mean = |r: &[LossRecord]| r.iter().map(|r| r.loss).sum::<f64>() / k as f64;
    Some((mean(&losses[..k]), mean(&losses[losses.len() - k..])))
}
