//! Seeded synthetic fundus-like images with four lesion classes of
//! deliberately different scale, plus their on-disk format.

mod generate;
mod manifest;
pub mod pnm;

pub use generate::{generate_sample, LesionSpec, SynthSpec};
pub use manifest::{generate_dataset, load_split, DatasetManifest, ManifestEntry, Split, MANIFEST_FILE};

use crate::error::{invalid, Result};
use crate::tensor::{Shape, Tensor};

/// Class indices: 0 background, then the four lesion types.
pub const BACKGROUND: u8 = 0;
pub const EX: u8 = 1;
pub const HE: u8 = 2;
pub const MA: u8 = 3;
pub const SE: u8 = 4;
pub const NUM_CLASSES: usize = 5;

/// Short names indexed by class.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["BG", "EX", "HE", "MA", "SE"];

/// Per-pixel class indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(invalid(format!(
                "mask data length {} does not match {h}x{w}",
                data.len()
            )));
        }
        Ok(Mask { h, w, data })
    }

    pub fn background(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![BACKGROUND; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Mask { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }

    /// Pixel count per class value `0..k`.
    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for &v in &self.data {
            if (v as usize) < k {
                c[v as usize] += 1;
            }
        }
        c
    }
}

/// One image with its label mask. The image is `(1, 3, H, W)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub image: Tensor,
    pub mask: Mask,
}

impl SegSample {
    pub fn new(image: Tensor, mask: Mask) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || s.c != 3 || s.h != mask.height() || s.w != mask.width() {
            return Err(invalid(format!(
                "image shape {s} does not match mask {}x{}",
                mask.height(),
                mask.width()
            )));
        }
        Ok(SegSample { image, mask })
    }
}

/// One-hot `(1, k, H, W)` tensor of a mask.
pub fn onehot(mask: &Mask, k: usize) -> Result<Tensor> {
    let shape = Shape::new(1, k, mask.height(), mask.width());
    let mut t = Tensor::zeros(shape);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let c = mask.get(y, x) as usize;
            if c >= k {
                return Err(invalid(format!(
                    "mask class {c} at ({y}, {x}) out of range for {k} classes"
                )));
            }
            t.set(0, c, y, x, 1.0);
        }
    }
    Ok(t)
}

/// Total pixels per class over a set of samples.
pub fn class_pixel_counts(samples: &[SegSample]) -> [usize; NUM_CLASSES] {
    let mut total = [0; NUM_CLASSES];
    for s in samples {
        for (t, c) in total.iter_mut().zip(s.mask.counts(NUM_CLASSES)) {
            *t += c;
        }
    }
    total
}
