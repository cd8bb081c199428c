//! Straight-line recompositions of the fusion and attention blocks from graph
//! primitives, shared by the model and acceptance tests.
#![allow(dead_code)]

use pmcnet::gradcheck::random_tensor;
use pmcnet::model::{self, Downsample, FeaturePyramid, Fusion, PmcnetConfig};
use pmcnet::params::{ParamVars, Parameters};
use pmcnet::{Graph, Shape, Var};

pub fn random_pyramid(g: &mut Graph, cfg: &PmcnetConfig, seed: u64) -> FeaturePyramid {
    let f = [1, 2, 3, 4].map(|i| {
        let (h, w) = cfg.stage_hw(i);
        g.constant(random_tensor(Shape::new(1, cfg.channels(i), h, w), seed * 10 + i as u64, -1.0, 1.0, 0.0))
    });
    FeaturePyramid { f }
}

pub fn bind_params(g: &mut Graph, cfg: &PmcnetConfig, seed: u64) -> ParamVars {
    let params = Parameters::init(&model::param_specs(cfg), seed).unwrap();
    ParamVars::bind(g, &params)
}

fn p(pv: &ParamVars, path: &str) -> Var {
    pv.get(path).unwrap()
}

pub fn pff_oracle(g: &mut Graph, pyr: &FeaturePyramid, i: usize, pv: &ParamVars, cfg: &PmcnetConfig) -> Var {
    let f_i = pyr.f[i - 1];
    let shape = g.shape(f_i);
    let high = cfg.fusion != Fusion::PffLow && i < 4;
    let low = cfg.fusion != Fusion::PffHigh && i > 1;

    let f_up = if high {
        let w = p(pv, &format!("pff{i}.high.weight"));
        let b = p(pv, &format!("pff{i}.high.bias"));
        let t = g.conv2d(pyr.f[i], w, b, 1, 0).unwrap();
        g.upsample2x(t).unwrap()
    } else {
        g.zeros(shape)
    };
    let f_down = if low {
        let prev = pyr.f[i - 2];
        let down = match cfg.downsample {
            Downsample::MaxPool => g.max_pool2(prev).unwrap(),
            Downsample::DwConv => {
                let w = p(pv, &format!("pff{i}.low.down.weight"));
                let b = p(pv, &format!("pff{i}.low.down.bias"));
                g.depthwise_conv2d_s2(prev, w, b).unwrap()
            }
            Downsample::Conv => {
                let w = p(pv, &format!("pff{i}.low.down.weight"));
                let b = p(pv, &format!("pff{i}.low.down.bias"));
                g.conv2d(prev, w, b, 2, 1).unwrap()
            }
        };
        let w = p(pv, &format!("pff{i}.low.proj.weight"));
        let b = p(pv, &format!("pff{i}.low.proj.bias"));
        g.conv2d(down, w, b, 1, 0).unwrap()
    } else {
        g.zeros(shape)
    };
    match cfg.fusion {
        Fusion::Pff => {
            let gh = g.mul(f_up, f_i).unwrap();
            let gl = g.mul(f_down, f_i).unwrap();
            g.concat_channels(gl, gh).unwrap()
        }
        Fusion::PffSum => {
            let gh = g.add(f_up, f_i).unwrap();
            let gl = g.add(f_down, f_i).unwrap();
            g.concat_channels(gl, gh).unwrap()
        }
        Fusion::PffLow => {
            let gl = g.mul(f_down, f_i).unwrap();
            g.concat_channels(gl, f_i).unwrap()
        }
        Fusion::PffHigh => {
            let gh = g.mul(f_up, f_i).unwrap();
            g.concat_channels(f_i, gh).unwrap()
        }
        other => panic!("{other} is not progressive"),
    }
}

pub fn dab_oracle(g: &mut Graph, x: Var, pv: &ParamVars, prefix: &str) -> Var {
    let gap = g.global_avg_pool(x);
    let fc = g
        .fully_connected(gap, p(pv, &format!("{prefix}.fc.weight")), p(pv, &format!("{prefix}.fc.bias")))
        .unwrap();
    let sc = g.sigmoid(fc);
    let a_c = g.scale_by(x, sc).unwrap();

    let avg = g.channel_avg(x);
    let ss = g.sigmoid(avg);
    let a_s = g.scale_by(x, ss).unwrap();

    let pl = g
        .conv2d(x, p(pv, &format!("{prefix}.point.weight")), p(pv, &format!("{prefix}.point.bias")), 1, 0)
        .unwrap();
    let w = g.sigmoid(pl);
    let a_p = g.mul(w, x).unwrap();

    let s = g.add(a_c, a_s).unwrap();
    let s = g.add(s, a_p).unwrap();
    let o = g
        .conv2d(s, p(pv, &format!("{prefix}.out.weight")), p(pv, &format!("{prefix}.out.bias")), 1, 0)
        .unwrap();
    g.relu(o)
}

/// Largest absolute difference between the block outputs and their
/// recompositions over every stage, for one seed.
pub fn composition_gap(seed: u64) -> f64 {
    let base = PmcnetConfig {
        stage_channels: [2, 3, 4, 5],
        input_hw: (32, 32),
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for fusion in [Fusion::Pff, Fusion::PffLow, Fusion::PffHigh, Fusion::PffSum] {
        for downsample in [Downsample::DwConv, Downsample::Conv, Downsample::MaxPool] {
            let cfg = PmcnetConfig { fusion, downsample, ..base.clone() };
            let mut g = Graph::new();
            let pyr = random_pyramid(&mut g, &cfg, seed);
            let pv = bind_params(&mut g, &cfg, seed);
            for i in 1..=4 {
                let got = model::pff_forward(&mut g, &pyr, i, &pv, &cfg).unwrap();
                let want = pff_oracle(&mut g, &pyr, i, &pv, &cfg);
                worst = worst.max(g.value(got.out).max_abs_diff(g.value(want)));
                let d = model::dab_forward(&mut g, got.out, &pv, &format!("dab{i}")).unwrap();
                let dw = dab_oracle(&mut g, want, &pv, &format!("dab{i}"));
                worst = worst.max(g.value(d.out).max_abs_diff(g.value(dw)));
            }
        }
    }
    worst
}

/// Average precision by enumerating every distinct score as a threshold and
/// counting from scratch at each one.
pub fn brute_force_pr_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut auc = 0.0;
    for t in thresholds {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / p;
        auc += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    auc
}
