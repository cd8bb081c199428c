//! The segmentation network: encoder, fusion blocks, attention blocks and
//! decoder, wired according to a [`PmcnetConfig`].

mod config;
pub mod dab;
pub mod decoder;
pub mod encoder;
pub mod pff;

pub use config::{Attention, Downsample, Fusion, PmcnetConfig, Variant, MOBILENET_CHANNELS};
pub use dab::{dab_forward, DabOutputs};
pub use decoder::{decoder_forward, DecoderState};
pub use encoder::{encoder_forward, FeaturePyramid};
pub use pff::{pff_forward, PffIntermediates};

use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamSpec, ParamVars, Parameters};
use crate::tensor::{Shape, Tensor};

/// Every declared parameter of the network under `cfg`, sorted by path.
pub fn param_specs(cfg: &PmcnetConfig) -> Vec<ParamSpec> {
    let mut specs = encoder::encoder_specs(cfg);
    for i in 1..=4 {
        let c = cfg.channels(i);
        match cfg.fusion {
            f if f.is_progressive() => {
                specs.extend(pff::pff_specs(cfg, i));
                match cfg.attention {
                    Attention::Dab => specs.extend(dab::dab_specs(&format!("dab{i}"), 2 * c, c)),
                    Attention::None => {
                        specs.extend(pff::conv1x1_specs(&format!("fuse{i}"), 2 * c, c))
                    }
                }
            }
            Fusion::Baseline => {
                if cfg.attention == Attention::Dab {
                    specs.extend(dab::dab_specs(&format!("dab{i}"), c, c));
                }
            }
            Fusion::Vanilla => {
                if i == 4 {
                    let c3 = cfg.channels(3);
                    specs.extend(pff::downsample_specs("van.down", c3, cfg.downsample));
                    specs.extend(pff::conv1x1_specs("van.proj", c3, c));
                    match cfg.attention {
                        Attention::Dab => specs.extend(dab::dab_specs("dab4", 2 * c, c)),
                        Attention::None => specs.extend(pff::conv1x1_specs("van.fuse", 2 * c, c)),
                    }
                }
            }
            _ => unreachable!("progressive modes handled above"),
        }
    }
    specs.extend(decoder::decoder_specs(cfg));
    specs.sort_by(|a, b| a.path.cmp(&b.path));
    specs
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub pyramid: FeaturePyramid,
    /// Fusion intermediates per stage (progressive modes only).
    pub fused: [Option<PffIntermediates>; 4],
    /// Tensor entering the attention/fuse step per stage, if any.
    pub attention_input: [Option<Var>; 4],
    pub dab: [Option<DabOutputs>; 4],
    /// `A^1..A^4`.
    pub attended: [Var; 4],
    pub decoder: DecoderState,
    pub logits: Var,
    pub probs: Var,
}

fn attend(
    g: &mut Graph,
    pv: &ParamVars,
    x: Var,
    i: usize,
    cfg: &PmcnetConfig,
    fuse_prefix: &str,
) -> Result<(Var, Option<DabOutputs>)> {
    match cfg.attention {
        Attention::Dab => {
            let d = dab_forward(g, x, pv, &format!("dab{i}"))?;
            Ok((d.out, Some(d)))
        }
        Attention::None => {
            let y = pff::conv1x1(g, pv, x, fuse_prefix)?;
            Ok((g.relu(y), None))
        }
    }
}

/// Full forward pass recording every stage.
pub fn forward(
    g: &mut Graph,
    pv: &ParamVars,
    image: Var,
    cfg: &PmcnetConfig,
) -> Result<ForwardPass> {
    cfg.validate()?;
    let s = g.shape(image);
    if (s.h, s.w) != cfg.input_hw {
        return Err(invalid(format!(
            "image is {}x{}, model configured for {}x{}",
            s.h, s.w, cfg.input_hw.0, cfg.input_hw.1
        )));
    }
    let pyramid = encoder_forward(g, pv, image, cfg)?;
    let mut fused = [None; 4];
    let mut attention_input = [None; 4];
    let mut dab_out = [None; 4];
    let mut attended = pyramid.f;
    for i in 1..=4 {
        let idx = i - 1;
        match cfg.fusion {
            f if f.is_progressive() => {
                let p = pff_forward(g, &pyramid, i, pv, cfg)?;
                fused[idx] = Some(p);
                attention_input[idx] = Some(p.out);
                let (a, d) = attend(g, pv, p.out, i, cfg, &format!("fuse{i}"))?;
                attended[idx] = a;
                dab_out[idx] = d;
            }
            Fusion::Baseline => {
                if cfg.attention == Attention::Dab {
                    let f_i = pyramid.level(i);
                    attention_input[idx] = Some(f_i);
                    let d = dab_forward(g, f_i, pv, &format!("dab{i}"))?;
                    attended[idx] = d.out;
                    dab_out[idx] = Some(d);
                }
            }
            Fusion::Vanilla => {
                if i == 4 {
                    let down = pff::downsample(g, pv, pyramid.level(3), "van.down", cfg.downsample)?;
                    let proj = pff::conv1x1(g, pv, down, "van.proj")?;
                    let cat = g.concat_channels(pyramid.level(4), proj)?;
                    attention_input[idx] = Some(cat);
                    let (a, d) = match cfg.attention {
                        Attention::None => (pff::conv1x1(g, pv, cat, "van.fuse")?, None),
                        Attention::Dab => {
                            let d = dab_forward(g, cat, pv, "dab4")?;
                            (d.out, Some(d))
                        }
                    };
                    attended[idx] = a;
                    dab_out[idx] = d;
                }
            }
            _ => unreachable!("progressive modes handled above"),
        }
    }
    let decoder = decoder_forward(g, &attended, pv, cfg)?;
    let probs = g.softmax_channels(decoder.logits);
    Ok(ForwardPass {
        pyramid,
        fused,
        attention_input,
        dab: dab_out,
        attended,
        decoder,
        logits: decoder.logits,
        probs,
    })
}

/// Class probabilities `(N, num_classes, H, W)`.
pub fn pmcnet_forward(g: &mut Graph, pv: &ParamVars, image: Var, cfg: &PmcnetConfig) -> Result<Var> {
    Ok(forward(g, pv, image, cfg)?.probs)
}

/// A configured network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmcnet {
    pub cfg: PmcnetConfig,
    pub params: Parameters,
}

impl Pmcnet {
    pub fn init(cfg: PmcnetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = Parameters::init(&param_specs(&cfg), seed)?;
        Ok(Pmcnet { cfg, params })
    }

    pub fn with_params(cfg: PmcnetConfig, params: Parameters) -> Result<Self> {
        cfg.validate()?;
        params.check_matches(&param_specs(&cfg))?;
        Ok(Pmcnet { cfg, params })
    }

    /// Probabilities for a `(N, 3, H, W)` image batch, without gradients.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let pv = self.bind_constants(&mut g);
        let x = g.constant(image.clone());
        let probs = pmcnet_forward(&mut g, &pv, x, &self.cfg)?;
        Ok(g.value(probs).clone())
    }

    /// Binds parameters as constants (inference only).
    pub fn bind_constants(&self, g: &mut Graph) -> ParamVars {
        let vars: Vec<Var> = self.params.iter().map(|(_, t)| g.constant(t.clone())).collect();
        ParamVars::from_vars(self.params.paths(), &vars)
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(1, 3, self.cfg.input_hw.0, self.cfg.input_hw.1)
    }
}
