use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::reflect_coord;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Row-major HWC raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if height * width * channels != pixels.len() || !(channels == 1 || channels == 3) {
            return Err(Error::Dimension {
                op: "image",
                lhs: vec![height, width, channels],
                rhs: vec![pixels.len()],
            });
        }
        let mut img = Self {
            height,
            width,
            channels,
            pixels,
        };
        img.clamp();
        Ok(img)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    pixels.push(f(r, c, ch).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> f32 {
        self.pixels[(r * self.width + c) * self.channels + ch]
    }

    pub(crate) fn clamp(&mut self) {
        for p in &mut self.pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
    }

    /// Bilinear sample at a continuous `(y, x)` with reflect padding.
    pub(crate) fn sample_into(&self, y: f32, x: f32, out: &mut [f32]) {
        let y = reflect_coord(y, self.height);
        let x = reflect_coord(x, self.width);
        let y0 = Float::floor(y) as usize;
        let x0 = Float::floor(x) as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        let c = self.channels;
        for (ch, o) in out.iter_mut().enumerate().take(c) {
            let a = self.get(y0, x0, ch);
            let b = self.get(y0, x1, ch);
            let d = self.get(y1, x0, ch);
            let e = self.get(y1, x1, ch);
            let top = a + (b - a) * fx;
            let bot = d + (e - d) * fx;
            *o = top + (bot - top) * fy;
        }
    }
}

/// Stacks equally sized images into an NHWC tensor.
pub fn images_to_tensor<T: Scalar>(images: &[Image]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("empty image batch".into()))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if (img.height, img.width, img.channels) != (h, w, c) {
            return Err(Error::Dimension {
                op: "images_to_tensor",
                lhs: vec![h, w, c],
                rhs: vec![img.height, img.width, img.channels],
            });
        }
        data.extend(img.pixels.iter().map(|&p| T::lit(p as f64)));
    }
    Tensor::new(vec![images.len(), h, w, c], data)
}
