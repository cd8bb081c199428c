use std::f64::consts::PI;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::rng::{self, Stream};
use crate::tensor::{Shape, Tensor};

use super::{pnm::quantize, Mask, SegSample, EX, HE, MA, SE};

/// Size, count and presence distribution of one lesion class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LesionSpec {
    /// Radius range in pixels, inclusive.
    pub radius: (f64, f64),
    /// Blob count range per image, inclusive.
    pub count: (usize, usize),
    /// Probability that an image contains this class at all.
    pub presence: f64,
}

/// Dataset generator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_images: usize,
    pub hw: (usize, usize),
    pub ex: LesionSpec,
    pub he: LesionSpec,
    pub ma: LesionSpec,
    pub se: LesionSpec,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_images: 64,
            hw: (32, 32),
            ma: LesionSpec {
                radius: (1.0, 2.0),
                count: (5, 20),
                presence: 0.3,
            },
            ex: LesionSpec {
                radius: (2.0, 5.0),
                count: (3, 10),
                presence: 0.25,
            },
            he: LesionSpec {
                radius: (3.0, 8.0),
                count: (2, 8),
                presence: 0.25,
            },
            se: LesionSpec {
                radius: (6.0, 14.0),
                count: (0, 3),
                presence: 0.15,
            },
        }
    }
}

/// Blending palette: MA and HE share reds, EX and SE share yellows.
const MA_RGB: [f64; 3] = [0.52, 0.08, 0.06];
const HE_RGB: [f64; 3] = [0.42, 0.06, 0.05];
const EX_RGB: [f64; 3] = [0.98, 0.88, 0.28];
const SE_RGB: [f64; 3] = [0.92, 0.84, 0.62];
const FUNDUS_RGB: [f64; 3] = [0.80, 0.38, 0.20];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.hw;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(invalid(format!(
                "image height and width must be positive multiples of 16, got {h}x{w}"
            )));
        }
        for (name, l) in self.classes() {
            if !(l.radius.0 > 0.0 && l.radius.0 <= l.radius.1) {
                return Err(invalid(format!("{name} radius range {:?} invalid", l.radius)));
            }
            if l.count.0 > l.count.1 {
                return Err(invalid(format!("{name} count range {:?} invalid", l.count)));
            }
            if !(0.0..=1.0).contains(&l.presence) {
                return Err(invalid(format!("{name} presence {} outside [0, 1]", l.presence)));
            }
        }
        let ordered = |a: (f64, f64), b: (f64, f64), strict: bool| {
            if strict {
                a.0 < b.0 && a.1 < b.1
            } else {
                a.0 <= b.0 && a.1 <= b.1
            }
        };
        if !(ordered(self.ma.radius, self.ex.radius, true)
            && ordered(self.ex.radius, self.he.radius, false)
            && ordered(self.he.radius, self.se.radius, true))
        {
            return Err(invalid("lesion radii must be ordered MA < EX <= HE < SE"));
        }
        Ok(())
    }

    fn classes(&self) -> [(&'static str, &LesionSpec); 4] {
        [("ex", &self.ex), ("he", &self.he), ("ma", &self.ma), ("se", &self.se)]
    }

    /// Stable text form hashed into the manifest.
    pub fn canonical_string(&self) -> String {
        let mut s = format!("n_images={}\nhw={}x{}\n", self.n_images, self.hw.0, self.hw.1);
        for (name, l) in self.classes() {
            s.push_str(&format!(
                "{name}.radius={}-{}\n{name}.count={}-{}\n{name}.presence={}\n",
                l.radius.0, l.radius.1, l.count.0, l.count.1, l.presence
            ));
        }
        s
    }

    pub fn hash_hex(&self) -> String {
        Sha256::digest(self.canonical_string().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

struct Canvas {
    h: usize,
    w: usize,
    rgb: [Vec<f64>; 3],
    mask: Mask,
}

impl Canvas {
    /// Blends `color` into pixels with weight `alpha(y, x)`; pixels where
    /// `alpha >= label_at` take `class`.
    fn paint(
        &mut self,
        bbox: (f64, f64, f64),
        color: [f64; 3],
        class: u8,
        label_at: f64,
        r: &mut Stream,
        alpha: impl Fn(f64, f64) -> f64,
    ) {
        let (cy, cx, reach) = bbox;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(self.h);
        let x1 = ((cx + reach).ceil() as usize).min(self.w);
        let tint: f64 = r.gen_range(-0.04..0.04);
        for y in y0..y1 {
            for x in x0..x1 {
                let a = alpha(y as f64 + 0.5, x as f64 + 0.5);
                if a <= 0.0 {
                    continue;
                }
                let i = y * self.w + x;
                for c in 0..3 {
                    let target = (color[c] + tint).clamp(0.0, 1.0);
                    self.rgb[c][i] += a * (target - self.rgb[c][i]);
                }
                if a >= label_at {
                    self.mask.set(y, x, class);
                }
            }
        }
    }
}

fn range_f(r: &mut Stream, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        r.gen_range(lo..=hi)
    }
}

fn range_u(r: &mut Stream, (lo, hi): (usize, usize)) -> usize {
    r.gen_range(lo..=hi)
}

fn class_blobs(spec: &LesionSpec, seed: u64, image: u64, class: u8) -> (usize, Stream) {
    let mut r = rng::stream(seed, "synth-class", &[image, class as u64]);
    let present = r.gen::<f64>() < spec.presence;
    let n = if present { range_u(&mut r, spec.count) } else { 0 };
    (n, r)
}

fn blob_stream(seed: u64, image: u64, class: u8, blob: usize) -> Stream {
    rng::stream(seed, "synth-blob", &[image, class as u64, blob as u64])
}

/// Renders image `index` of the dataset defined by `(spec, seed)`.
pub fn generate_sample(spec: &SynthSpec, seed: u64, index: usize) -> SegSample {
    let (h, w) = spec.hw;
    let idx = index as u64;
    let mut r = rng::stream(seed, "synth-background", &[idx]);

    let mut canvas = Canvas {
        h,
        w,
        rgb: [vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]],
        mask: Mask::background(h, w),
    };

    // radial vignette plus a smooth low-frequency field
    let cy = h as f64 * (0.5 + r.gen_range(-0.1..0.1));
    let cx = w as f64 * (0.5 + r.gen_range(-0.1..0.1));
    let rmax = ((h * h + w * w) as f64).sqrt() / 2.0;
    let brightness = r.gen_range(0.9..1.05);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                r.gen_range(0.5..2.0) * 2.0 * PI / h as f64,
                r.gen_range(0.5..2.0) * 2.0 * PI / w as f64,
                r.gen_range(0.0..2.0 * PI),
                r.gen_range(0.01..0.04),
            )
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let d = ((py - cy).powi(2) + (px - cx).powi(2)).sqrt() / rmax;
            let vignette = 1.0 - 0.55 * d * d;
            let field: f64 = waves
                .iter()
                .map(|&(fy, fx, ph, amp)| amp * (fy * py + fx * px + ph).sin())
                .sum();
            let i = y * w + x;
            for c in 0..3 {
                canvas.rgb[c][i] = FUNDUS_RGB[c] * vignette * brightness + field;
            }
        }
    }

    // large to small, so the smallest lesions are drawn last and stay visible
    let (n, _) = class_blobs(&spec.se, seed, idx, SE);
    for b in 0..n {
        let mut br = blob_stream(seed, idx, SE, b);
        let rad = range_f(&mut br, spec.se.radius);
        let (by, bx) = (br.gen_range(0.0..h as f64), br.gen_range(0.0..w as f64));
        canvas.paint((by, bx, rad + 1.0), SE_RGB, SE, 0.5, &mut br, |y, x| {
            let d = ((y - by).powi(2) + (x - bx).powi(2)).sqrt();
            (0.85 * (rad - d) / (0.35 * rad) + 0.425).clamp(0.0, 0.85)
        });
    }

    let (n, _) = class_blobs(&spec.he, seed, idx, HE);
    for b in 0..n {
        let mut br = blob_stream(seed, idx, HE, b);
        let ra = range_f(&mut br, spec.he.radius);
        let rb = ra * br.gen_range(0.55..1.0);
        let theta = br.gen_range(0.0..PI);
        let (k1, p1, a1) = (br.gen_range(2..5) as f64, br.gen_range(0.0..2.0 * PI), br.gen_range(0.05..0.2));
        let (by, bx) = (br.gen_range(0.0..h as f64), br.gen_range(0.0..w as f64));
        let (st, ct) = theta.sin_cos();
        canvas.paint((by, bx, ra * 1.25 + 1.0), HE_RGB, HE, 0.5, &mut br, |y, x| {
            let (dy, dx) = (y - by, x - bx);
            let u = dx * ct + dy * st;
            let v = -dx * st + dy * ct;
            let rho = ((u / ra).powi(2) + (v / rb).powi(2)).sqrt();
            let phi = v.atan2(u);
            let edge = 1.0 + a1 * (k1 * phi + p1).sin();
            if rho <= edge {
                0.9
            } else {
                0.0
            }
        });
    }

    let (n, mut cr) = class_blobs(&spec.ex, seed, idx, EX);
    if n > 0 {
        let (cy, cx) = (cr.gen_range(0.0..h as f64), cr.gen_range(0.0..w as f64));
        let spread = spec.ex.radius.1 * 3.0;
        for b in 0..n {
            let mut br = blob_stream(seed, idx, EX, b);
            let rad = range_f(&mut br, spec.ex.radius);
            let by = (cy + br.gen_range(-spread..spread)).clamp(0.0, h as f64);
            let bx = (cx + br.gen_range(-spread..spread)).clamp(0.0, w as f64);
            canvas.paint((by, bx, rad + 1.0), EX_RGB, EX, 0.5, &mut br, |y, x| {
                let d = ((y - by).powi(2) + (x - bx).powi(2)).sqrt();
                if d <= rad {
                    0.92
                } else {
                    0.0
                }
            });
        }
    }

    let (n, _) = class_blobs(&spec.ma, seed, idx, MA);
    for b in 0..n {
        let mut br = blob_stream(seed, idx, MA, b);
        let rad = range_f(&mut br, spec.ma.radius);
        let (by, bx) = (br.gen_range(0.0..h as f64), br.gen_range(0.0..w as f64));
        canvas.paint((by, bx, rad + 1.0), MA_RGB, MA, 0.5, &mut br, |y, x| {
            let d = ((y - by).powi(2) + (x - bx).powi(2)).sqrt();
            if d <= rad {
                0.9
            } else {
                0.0
            }
        });
    }

    let mut noise = rng::stream(seed, "synth-noise", &[idx]);
    let image = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let v = canvas.rgb[c][y * w + x] + noise.gen_range(-0.02..0.02);
        quantize(v) as f64 / 255.0
    });
    SegSample {
        image,
        mask: canvas.mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        SynthSpec::default().validate().unwrap();
    }

    #[test]
    fn radius_order_enforced() {
        let mut s = SynthSpec::default();
        s.ma.radius = (2.0, 5.0);
        assert!(s.validate().is_err());
        let mut s = SynthSpec::default();
        s.hw = (30, 30);
        assert!(s.validate().is_err());
    }

    #[test]
    fn samples_are_deterministic_and_on_grid() {
        let spec = SynthSpec::default();
        let a = generate_sample(&spec, 9, 3);
        let b = generate_sample(&spec, 9, 3);
        assert_eq!(a, b);
        assert_ne!(a, generate_sample(&spec, 9, 4));
        for &v in a.image.data() {
            assert!((0.0..=1.0).contains(&v));
            assert_eq!((v * 255.0).round() / 255.0, v);
        }
        assert!(a.mask.data().iter().all(|&c| c < 5));
    }

    #[test]
    fn zero_counts_give_background_masks() {
        let mut spec = SynthSpec::default();
        for l in [&mut spec.ex, &mut spec.he, &mut spec.ma, &mut spec.se] {
            l.count = (0, 0);
        }
        for i in 0..5 {
            let s = generate_sample(&spec, 1, i);
            assert!(s.mask.data().iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn hash_tracks_spec() {
        let a = SynthSpec::default();
        let mut b = a.clone();
        b.se.presence = 0.25;
        assert_ne!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex().len(), 64);
    }
}
