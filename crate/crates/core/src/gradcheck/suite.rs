//! Registry of gradient checks covering every graph operator and the composed
//! network blocks.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::model::{self, Attention, Downsample, FeaturePyramid, Fusion, PmcnetConfig};
use crate::params::{ParamSpec, ParamVars, Parameters};
use crate::rng;
use crate::synth::{onehot, Mask};
use crate::tensor::{Shape, Tensor};

use super::{grad_check, projection, random_tensor, GradCheckOptions};

/// Failure threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

type CaseFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One named scalar function with its inputs.
pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub f: CaseFn,
    pub max_coords_per_input: Option<usize>,
}

impl Case {
    pub fn new(name: &str, inputs: Vec<Tensor>, f: CaseFn) -> Self {
        Case {
            name: name.to_string(),
            inputs,
            f,
            max_coords_per_input: None,
        }
    }

    fn sampled(mut self, k: usize) -> Self {
        self.max_coords_per_input = Some(k);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Set when the check could not run (e.g. non-finite values).
    pub error: Option<String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_error < TOLERANCE
    }
}

pub fn run_case(case: &Case) -> CaseResult {
    let opts = GradCheckOptions {
        max_coords_per_input: case.max_coords_per_input,
        ..Default::default()
    };
    match grad_check(&case.f, &case.inputs, &opts) {
        Ok(r) => CaseResult {
            name: case.name.clone(),
            max_rel_error: r.max_rel_error,
            coords_checked: r.coords_checked,
            error: None,
        },
        Err(e) => CaseResult {
            name: case.name.clone(),
            max_rel_error: f64::INFINITY,
            coords_checked: 0,
            error: Some(e.to_string()),
        },
    }
}

pub fn run_all(cases: &[Case]) -> Vec<CaseResult> {
    cases.iter().map(run_case).collect()
}

fn rt(shape: Shape, seed: u64) -> Tensor {
    random_tensor(shape, seed, -1.0, 1.0, 0.1)
}

/// Scalarises `y` by a fixed random projection.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = projection(g.shape(y), seed);
    g.dot(y, w)
}

fn unary(name: &str, shape: Shape, seed: u64, op: fn(&mut Graph, Var) -> Result<Var>) -> Case {
    Case::new(
        name,
        vec![rt(shape, seed)],
        Box::new(move |g, v| {
            let y = op(g, v[0])?;
            project(g, y, seed)
        }),
    )
}

/// One case per graph operator.
pub fn op_cases() -> Vec<Case> {
    let s = Shape::new(2, 3, 4, 6);
    let mut cases = vec![
        Case::new(
            "conv2d",
            vec![rt(Shape::new(1, 2, 5, 5), 1), rt(Shape::new(3, 2, 3, 3), 2), rt(Shape::new(3, 1, 1, 1), 3)],
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
                project(g, y, 4)
            }),
        ),
        Case::new(
            "conv2d_stride2",
            vec![rt(Shape::new(1, 2, 6, 5), 5), rt(Shape::new(3, 2, 3, 3), 6), rt(Shape::new(3, 1, 1, 1), 7)],
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
                project(g, y, 8)
            }),
        ),
        Case::new(
            "conv2d_1x1",
            vec![rt(Shape::new(2, 3, 3, 3), 9), rt(Shape::new(2, 3, 1, 1), 10), rt(Shape::new(2, 1, 1, 1), 11)],
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 1, 0)?;
                project(g, y, 12)
            }),
        ),
        Case::new(
            "depthwise_conv2d_s2",
            vec![rt(Shape::new(1, 3, 6, 7), 13), rt(Shape::new(3, 1, 3, 3), 14), rt(Shape::new(3, 1, 1, 1), 15)],
            Box::new(|g, v| {
                let y = g.depthwise_conv2d_s2(v[0], v[1], v[2])?;
                project(g, y, 16)
            }),
        ),
        unary("max_pool2", s, 17, |g, x| g.max_pool2(x)),
        unary("bilinear_upsample_2x", Shape::new(1, 2, 3, 4), 18, |g, x| g.upsample2x(x)),
        unary("global_avg_pool", s, 19, |g, x| Ok(g.global_avg_pool(x))),
        unary("channel_avg", s, 20, |g, x| Ok(g.channel_avg(x))),
        Case::new(
            "fully_connected",
            vec![rt(Shape::new(2, 4, 1, 1), 21), rt(Shape::new(3, 4, 1, 1), 22), rt(Shape::new(3, 1, 1, 1), 23)],
            Box::new(|g, v| {
                let y = g.fully_connected(v[0], v[1], v[2])?;
                project(g, y, 24)
            }),
        ),
        unary("relu", s, 25, |g, x| Ok(g.relu(x))),
        unary("sigmoid", s, 26, |g, x| Ok(g.sigmoid(x))),
        unary("softmax_channels", s, 27, |g, x| Ok(g.softmax_channels(x))),
        Case::new(
            "add",
            vec![rt(s, 28), rt(s, 29)],
            Box::new(|g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y, 30)
            }),
        ),
        Case::new(
            "mul",
            vec![rt(s, 31), rt(s, 32)],
            Box::new(|g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y, 33)
            }),
        ),
        Case::new(
            "scale_by_channel",
            vec![rt(s, 34), rt(Shape::new(2, 3, 1, 1), 35)],
            Box::new(|g, v| {
                let y = g.scale_by(v[0], v[1])?;
                project(g, y, 36)
            }),
        ),
        Case::new(
            "scale_by_spatial",
            vec![rt(s, 37), rt(Shape::new(2, 1, 4, 6), 38)],
            Box::new(|g, v| {
                let y = g.scale_by(v[0], v[1])?;
                project(g, y, 39)
            }),
        ),
        Case::new(
            "concat_channels",
            vec![rt(s, 40), rt(Shape::new(2, 2, 4, 6), 41)],
            Box::new(|g, v| {
                let y = g.concat_channels(v[0], v[1])?;
                project(g, y, 42)
            }),
        ),
        unary("slice_channels", s, 43, |g, x| g.slice_channels(x, 1, 3)),
        Case::new(
            "spatial_norm",
            vec![rt(s, 44), rt(Shape::new(3, 1, 1, 1), 45), rt(Shape::new(3, 1, 1, 1), 46)],
            Box::new(|g, v| {
                let y = g.spatial_norm(v[0], v[1], v[2], 1e-5)?;
                project(g, y, 47)
            }),
        ),
        unary("sum", s, 48, |g, x| {
            let y = g.sum(x);
            Ok(g.mul(y, y)?)
        }),
    ];
    let target = onehot(&random_mask(4, 6, 5, 49), 5).expect("valid mask");
    cases.push(Case::new(
        "cross_entropy",
        vec![rt(Shape::new(1, 5, 4, 6), 50)],
        Box::new(move |g, v| {
            let p = g.softmax_channels(v[0]);
            g.cross_entropy(p, &target)
        }),
    ));
    cases
}

fn random_mask(h: usize, w: usize, k: u8, seed: u64) -> Mask {
    let mut r = rng::stream(seed, "gradcheck-mask", &[]);
    Mask::from_fn(h, w, |_, _| r.gen_range(0..k))
}

/// Pyramid of random leaves for a block-level check; returns the tensors
/// (in pyramid order `f1..f4`) that the case binds first.
fn pyramid_inputs(cfg: &PmcnetConfig, seed: u64) -> Vec<Tensor> {
    (1..=4)
        .map(|i| {
            let (h, w) = cfg.stage_hw(i);
            // positive features, like post-ReLU encoder outputs
            random_tensor(Shape::new(1, cfg.channels(i), h, w), seed + i as u64, 0.1, 1.0, 0.0)
        })
        .collect()
}

fn param_inputs(specs: &[ParamSpec], seed: u64) -> (Vec<String>, Vec<Tensor>) {
    // non-zero biases so every bias gradient is exercised
    let mut r = rng::stream(seed, "gradcheck-params", &[]);
    let p = Parameters::init(specs, seed).expect("valid specs");
    let paths: Vec<String> = p.paths().cloned().collect();
    let tensors = p
        .iter()
        .map(|(_, t)| t.map(|v| v + r.gen_range(-0.2..0.2)))
        .collect();
    (paths, tensors)
}

fn block_cfg() -> PmcnetConfig {
    PmcnetConfig {
        stage_channels: [2, 3, 4, 5],
        input_hw: (32, 32),
        ..Default::default()
    }
}

/// Composed fusion, attention, decoder and whole-network checks.
pub fn model_cases() -> Vec<Case> {
    let mut cases = Vec::new();

    for (fusion, downsample, i, name) in [
        (Fusion::Pff, Downsample::DwConv, 2, "pff_stage2"),
        (Fusion::Pff, Downsample::DwConv, 1, "pff_stage1"),
        (Fusion::Pff, Downsample::DwConv, 4, "pff_stage4"),
        (Fusion::PffSum, Downsample::Conv, 3, "pff_sum_conv_stage3"),
        (Fusion::PffLow, Downsample::MaxPool, 2, "pff_low_maxpool_stage2"),
        (Fusion::PffHigh, Downsample::DwConv, 3, "pff_high_stage3"),
    ] {
        let cfg = PmcnetConfig {
            fusion,
            downsample,
            attention: Attention::None,
            ..block_cfg()
        };
        let specs = model::pff::pff_specs(&cfg, i);
        let (paths, mut inputs) = param_inputs(&specs, 60 + i as u64);
        let np = paths.len();
        inputs.extend(pyramid_inputs(&cfg, 70));
        cases.push(Case::new(
            name,
            inputs,
            Box::new(move |g, v| {
                let pv = ParamVars::from_vars(&paths, &v[..np]);
                let pyr = FeaturePyramid {
                    f: [v[np], v[np + 1], v[np + 2], v[np + 3]],
                };
                let p = model::pff_forward(g, &pyr, i, &pv, &cfg)?;
                project(g, p.out, 80)
            }),
        ));
    }

    {
        let specs = model::dab::dab_specs("dab", 6, 3);
        let (paths, mut inputs) = param_inputs(&specs, 90);
        let np = paths.len();
        inputs.push(rt(Shape::new(1, 6, 4, 4), 91));
        cases.push(Case::new(
            "dab",
            inputs,
            Box::new(move |g, v| {
                let pv = ParamVars::from_vars(&paths, &v[..np]);
                let d = model::dab_forward(g, v[np], &pv, "dab")?;
                project(g, d.out, 92)
            }),
        ));
    }

    {
        let cfg = PmcnetConfig {
            input_hw: (32, 32),
            ..block_cfg()
        };
        let specs = model::decoder::decoder_specs(&cfg);
        let (paths, mut inputs) = param_inputs(&specs, 100);
        let np = paths.len();
        inputs.extend(pyramid_inputs(&cfg, 101));
        cases.push(
            Case::new(
                "decoder",
                inputs,
                Box::new(move |g, v| {
                    let pv = ParamVars::from_vars(&paths, &v[..np]);
                    let a = [v[np], v[np + 1], v[np + 2], v[np + 3]];
                    let d = model::decoder_forward(g, &a, &pv, &cfg)?;
                    project(g, d.logits, 102)
                }),
            )
            .sampled(24),
        );
    }

    {
        let cfg = PmcnetConfig {
            input_hw: (32, 32),
            ..block_cfg()
        };
        let specs = model::encoder::encoder_specs(&cfg);
        let (paths, mut inputs) = param_inputs(&specs, 110);
        let np = paths.len();
        inputs.push(random_tensor(Shape::new(1, 3, 32, 32), 111, 0.0, 1.0, 0.0));
        cases.push(
            Case::new(
                "encoder",
                inputs,
                Box::new(move |g, v| {
                    let pv = ParamVars::from_vars(&paths, &v[..np]);
                    let pyr = model::encoder_forward(g, &pv, v[np], &cfg)?;
                    let mut acc = project(g, pyr.f[0], 112)?;
                    for (k, &f) in pyr.f.iter().enumerate().skip(1) {
                        let t = project(g, f, 112 + k as u64)?;
                        acc = g.add(acc, t)?;
                    }
                    Ok(acc)
                }),
            )
            .sampled(24),
        );
    }

    cases.push(pmcnet_case(
        "pmcnet_forward",
        PmcnetConfig {
            stage_channels: [4, 8, 12, 16],
            fusion: Fusion::Pff,
            downsample: Downsample::DwConv,
            attention: Attention::Dab,
            num_classes: 5,
            input_hw: (32, 32),
        },
        120,
    ));
    cases
}

/// Cross-entropy of the full network on a random image and mask, checked on
/// a seeded sample of coordinates per parameter tensor and of the image.
pub fn pmcnet_case(name: &str, cfg: PmcnetConfig, seed: u64) -> Case {
    let specs = model::param_specs(&cfg);
    let (paths, mut inputs) = param_inputs(&specs, seed);
    let np = paths.len();
    let (h, w) = cfg.input_hw;
    inputs.push(random_tensor(Shape::new(1, 3, h, w), seed + 1, 0.0, 1.0, 0.0));
    let target = onehot(&random_mask(h, w, cfg.num_classes as u8, seed + 2), cfg.num_classes)
        .expect("valid mask");
    Case::new(
        name,
        inputs,
        Box::new(move |g, v| {
            let pv = ParamVars::from_vars(&paths, &v[..np]);
            let probs = model::pmcnet_forward(g, &pv, v[np], &cfg)?;
            g.cross_entropy(probs, &target)
        }),
    )
    .sampled(6)
}

/// Every registered case: operators first, then composed blocks.
pub fn default_cases() -> Vec<Case> {
    let mut cases = op_cases();
    cases.extend(model_cases());
    cases
}
