//! WebAssembly bindings for the in-browser demo in `www/`.

use std::collections::BTreeMap;

use pmcnet::metrics::{pr_auc, pr_curve};
use pmcnet::model::{Pmcnet, PmcnetConfig};
use pmcnet::synth::{generate_sample, Mask, SegSample, SynthSpec};
use pmcnet::train::{adam_step, augment, loss_and_grads, poly_lr, AdamState, TrainConfig};
use pmcnet::{rng, Tensor};
use wasm_bindgen::prelude::*;

/// Display colour per class: background, EX, HE, MA, SE.
const PALETTE: [[u8; 3]; 5] = [[0, 0, 0], [250, 220, 40], [200, 30, 30], [255, 120, 200], [120, 230, 255]];

const TRAIN_IMAGES: usize = 32;
const HELD_OUT: usize = 8;
const SCHEDULE_ITERS: usize = 2000;

fn err(e: pmcnet::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn image_rgba(image: &Tensor) -> Vec<u8> {
    let s = image.shape();
    let mut out = Vec::with_capacity(s.h * s.w * 4);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push((image.at(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

fn mask_rgba(mask: &Mask) -> Vec<u8> {
    mask.data()
        .iter()
        .flat_map(|&c| {
            let [r, g, b] = PALETTE[c as usize];
            [r, g, b, 255]
        })
        .collect()
}

/// Dataset, network and optimiser state for one page.
#[wasm_bindgen]
pub struct Demo {
    seed: u64,
    train_set: Vec<SegSample>,
    held_out: Vec<SegSample>,
    model: Pmcnet,
    adam: AdamState,
    cfg: TrainConfig,
    iter: usize,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Demo, JsValue> {
        let spec = SynthSpec { n_images: TRAIN_IMAGES + HELD_OUT, ..SynthSpec::default() };
        let samples: Vec<SegSample> = (0..spec.n_images).map(|i| generate_sample(&spec, seed, i)).collect();
        let model = Pmcnet::init(PmcnetConfig::default(), seed).map_err(err)?;
        let adam = AdamState::new(&model.params);
        let cfg = TrainConfig { base_lr: 1e-3, max_iters: SCHEDULE_ITERS, seed, ..TrainConfig::default() };
        let (train_set, held_out) = samples.split_at(TRAIN_IMAGES);
        Ok(Demo {
            seed,
            train_set: train_set.to_vec(),
            held_out: held_out.to_vec(),
            model,
            adam,
            cfg,
            iter: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.model.cfg.input_hw.1
    }

    pub fn height(&self) -> usize {
        self.model.cfg.input_hw.0
    }

    pub fn held_out_count(&self) -> usize {
        self.held_out.len()
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// RGBA pixels of held-out image `index`.
    pub fn image(&self, index: usize) -> Vec<u8> {
        image_rgba(&self.held_out[index % HELD_OUT].image)
    }

    /// RGBA rendering of the ground-truth mask of held-out image `index`.
    pub fn truth(&self, index: usize) -> Vec<u8> {
        mask_rgba(&self.held_out[index % HELD_OUT].mask)
    }

    /// RGBA rendering of the current network's argmax prediction.
    pub fn prediction(&self, index: usize) -> Result<Vec<u8>, JsValue> {
        let probs = self.model.predict(&self.held_out[index % HELD_OUT].image).map_err(err)?;
        let s = probs.shape();
        let data = probs.argmax_channels().into_iter().map(|c| c as u8).collect();
        Ok(mask_rgba(&Mask::new(s.h, s.w, data).map_err(err)?))
    }

    /// Runs `steps` Adam steps; returns their mean loss.
    pub fn train(&mut self, steps: usize) -> Result<f64, JsValue> {
        let mut total = 0.0;
        for _ in 0..steps {
            if self.iter >= SCHEDULE_ITERS {
                break;
            }
            let pick = self.iter % TRAIN_IMAGES;
            let mut r = rng::stream(self.seed, "web-augment", &[self.iter as u64]);
            let sample = augment(&self.train_set[pick], &mut r, &self.cfg.augment);
            let lr = poly_lr(self.cfg.base_lr, self.iter, SCHEDULE_ITERS, self.cfg.poly_power).map_err(err)?;
            let (loss, grads): (f64, BTreeMap<String, Tensor>) = loss_and_grads(&self.model, &sample).map_err(err)?;
            adam_step(&mut self.model.params, &grads, &mut self.adam, lr, &self.cfg).map_err(err)?;
            total += loss;
            self.iter += 1;
        }
        Ok(if steps == 0 { f64::NAN } else { total / steps as f64 })
    }

    /// Pixel PR curve of `class` over the held-out images, flattened as
    /// `[recall0, precision0, recall1, ...]`, followed by the AUC as the last
    /// element.
    pub fn pr_curve(&self, class: u8) -> Result<Vec<f64>, JsValue> {
        let c = class as usize;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for s in &self.held_out {
            let probs = self.model.predict(&s.image).map_err(err)?;
            scores.extend(probs.slice_channels(c, c + 1).map_err(err)?.into_data());
            labels.extend(s.mask.data().iter().map(|&m| m == class));
        }
        let mut flat: Vec<f64> = pr_curve(&scores, &labels)
            .map_err(err)?
            .into_iter()
            .flat_map(|(r, p)| [r, p])
            .collect();
        flat.push(pr_auc(&scores, &labels).map_err(err)?);
        Ok(flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_trains() {
        let mut d = Demo::new(3).unwrap();
        assert_eq!(d.image(0).len(), 32 * 32 * 4);
        assert_eq!(d.truth(1).len(), 32 * 32 * 4);
        assert_eq!(d.prediction(2).unwrap().len(), 32 * 32 * 4);
        let loss = d.train(3).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(d.iterations(), 3);
    }

    #[test]
    fn pr_curve_ends_with_auc() {
        let d = Demo::new(3).unwrap();
        let class = (1..5u8)
            .find(|&c| d.held_out.iter().any(|s| s.mask.data().contains(&c)))
            .unwrap();
        let v = d.pr_curve(class).unwrap();
        assert_eq!(v.len() % 2, 1);
        let auc = *v.last().unwrap();
        assert!((0.0..=1.0).contains(&auc));
        assert_eq!(v[v.len() - 3], 1.0);
    }
}
