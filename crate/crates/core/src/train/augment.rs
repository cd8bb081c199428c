use rand::Rng;

use crate::error::{invalid, Result};
use crate::rng::Stream;
use crate::synth::{Mask, SegSample, BACKGROUND};
use crate::tensor::{Shape, Tensor};

/// Geometric augmentation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_h_prob: f64,
    pub flip_v_prob: f64,
    pub rescale_min: f64,
    pub rescale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_h_prob: 0.5,
            flip_v_prob: 0.5,
            rescale_min: 0.8,
            rescale_max: 1.2,
        }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn none() -> Self {
        AugmentConfig {
            flip_h_prob: 0.0,
            flip_v_prob: 0.0,
            rescale_min: 1.0,
            rescale_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("flip_h_prob", self.flip_h_prob), ("flip_v_prob", self.flip_v_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.rescale_min > 0.0 && self.rescale_min <= 1.0 && 1.0 <= self.rescale_max) {
            return Err(invalid(format!(
                "rescale range [{}, {}] must satisfy 0 < min <= 1 <= max",
                self.rescale_min, self.rescale_max
            )));
        }
        Ok(())
    }
}

/// The random choices behind one augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flip_h: bool,
    pub flip_v: bool,
    pub scale: f64,
}

impl AugmentDraw {
    pub fn sample(r: &mut Stream, cfg: &AugmentConfig) -> Self {
        let flip_h = r.gen::<f64>() < cfg.flip_h_prob;
        let flip_v = r.gen::<f64>() < cfg.flip_v_prob;
        let u: f64 = r.gen();
        let scale = cfg.rescale_min + u * (cfg.rescale_max - cfg.rescale_min);
        AugmentDraw { flip_h, flip_v, scale }
    }
}

/// Draws flips and a rescale factor and applies them to image and mask alike.
pub fn augment(sample: &SegSample, r: &mut Stream, cfg: &AugmentConfig) -> SegSample {
    apply(sample, AugmentDraw::sample(r, cfg))
}

pub fn apply(sample: &SegSample, d: AugmentDraw) -> SegSample {
    let mut out = sample.clone();
    if d.flip_h {
        out = flip_h(&out);
    }
    if d.flip_v {
        out = flip_v(&out);
    }
    if d.scale != 1.0 {
        out = rescale(&out, d.scale);
    }
    out
}

fn remap(s: &SegSample, f: impl Fn(usize, usize) -> (usize, usize)) -> SegSample {
    let sh = s.image.shape();
    let image = Tensor::from_fn(sh, |n, c, y, x| {
        let (sy, sx) = f(y, x);
        s.image.at(n, c, sy, sx)
    });
    let mask = Mask::from_fn(sh.h, sh.w, |y, x| {
        let (sy, sx) = f(y, x);
        s.mask.get(sy, sx)
    });
    SegSample { image, mask }
}

pub fn flip_h(s: &SegSample) -> SegSample {
    let w = s.mask.width();
    remap(s, |y, x| (y, w - 1 - x))
}

pub fn flip_v(s: &SegSample) -> SegSample {
    let h = s.mask.height();
    remap(s, |y, x| (h - 1 - y, x))
}

/// Half-pixel source coordinate of output index `d` when resizing `from -> to`.
fn source(d: usize, from: usize, to: usize) -> f64 {
    (d as f64 + 0.5) * from as f64 / to as f64 - 0.5
}

/// Resizes by `scale` (bilinear image, nearest mask), then center-crops or
/// zero-pads back to the original size.
pub fn rescale(s: &SegSample, scale: f64) -> SegSample {
    let sh = s.image.shape();
    let (h, w) = (sh.h, sh.w);
    let nh = ((h as f64 * scale).round() as usize).max(1);
    let nw = ((w as f64 * scale).round() as usize).max(1);
    let oy = (nh as isize - h as isize).div_euclid(2);
    let ox = (nw as isize - w as isize).div_euclid(2);

    let taps = |len: usize, to: usize| -> Vec<(usize, usize, f64)> {
        (0..to)
            .map(|d| {
                let src = source(d, len, to).clamp(0.0, (len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let nearest = |d: usize, len: usize, to: usize| -> usize {
        (((d as f64 + 0.5) * len as f64 / to as f64).floor() as usize).min(len - 1)
    };
    let ty = taps(h, nh);
    let tx = taps(w, nw);
    let inside = |y: usize, x: usize| -> Option<(usize, usize)> {
        let ry = y as isize + oy;
        let rx = x as isize + ox;
        (ry >= 0 && rx >= 0 && (ry as usize) < nh && (rx as usize) < nw).then(|| (ry as usize, rx as usize))
    };

    let image = Tensor::from_fn(Shape::new(sh.n, sh.c, h, w), |n, c, y, x| match inside(y, x) {
        None => 0.0,
        Some((ry, rx)) => {
            let (y0, y1, wy) = ty[ry];
            let (x0, x1, wx) = tx[rx];
            let top = s.image.at(n, c, y0, x0) * (1.0 - wx) + s.image.at(n, c, y0, x1) * wx;
            let bot = s.image.at(n, c, y1, x0) * (1.0 - wx) + s.image.at(n, c, y1, x1) * wx;
            top * (1.0 - wy) + bot * wy
        }
    });
    let mask = Mask::from_fn(h, w, |y, x| match inside(y, x) {
        None => BACKGROUND,
        Some((ry, rx)) => s.mask.get(nearest(ry, h, nh), nearest(rx, w, nw)),
    });
    SegSample { image, mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sample, SynthSpec};

    fn sample() -> SegSample {
        generate_sample(&SynthSpec::default(), 5, 0)
    }

    #[test]
    fn flips_are_involutions() {
        let s = sample();
        assert_eq!(flip_h(&flip_h(&s)), s);
        assert_eq!(flip_v(&flip_v(&s)), s);
        assert_ne!(flip_h(&s), s);
    }

    #[test]
    fn unit_scale_is_identity() {
        let s = sample();
        assert_eq!(rescale(&s, 1.0), s);
        let d = AugmentDraw { flip_h: false, flip_v: false, scale: 1.0 };
        assert_eq!(apply(&s, d), s);
    }

    #[test]
    fn flip_moves_labels_with_pixels() {
        let s = sample();
        let f = flip_h(&s);
        let w = s.mask.width();
        for y in 0..s.mask.height() {
            for x in 0..w {
                assert_eq!(f.mask.get(y, x), s.mask.get(y, w - 1 - x));
                assert_eq!(f.image.at(0, 1, y, x), s.image.at(0, 1, y, w - 1 - x));
            }
        }
    }

    #[test]
    fn downscale_pads_with_background() {
        let s = SegSample::new(
            Tensor::ones(Shape::new(1, 3, 16, 16)),
            Mask::from_fn(16, 16, |_, _| 2),
        )
        .unwrap();
        let r = rescale(&s, 0.5);
        assert_eq!(r.mask.get(0, 0), BACKGROUND);
        assert_eq!(r.image.at(0, 0, 0, 0), 0.0);
        assert_eq!(r.mask.get(8, 8), 2);
        assert_eq!(r.image.at(0, 0, 8, 8), 1.0);
    }

    #[test]
    fn config_validation() {
        AugmentConfig::default().validate().unwrap();
        AugmentConfig::none().validate().unwrap();
        let bad = AugmentConfig { rescale_min: 1.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig { flip_h_prob: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
