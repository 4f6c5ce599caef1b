use num_traits::Float;

use rand::Rng;

use super::{resize_bilinear, AuxConfig, Image};

const MAX_ATTEMPTS: usize = 10;

/// Pixel rectangle of a crop, in source coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropParams {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropParams {
    /// One draw of `(area fraction, aspect ratio)`: the fraction uniform on
    /// `crop_area`, the ratio log-uniform on `crop_aspect`.
    pub fn draw_shape(cfg: &AuxConfig, rng: &mut impl Rng) -> (f64, f64) {
        let (alo, ahi) = cfg.crop_area;
        let area = if alo < ahi { rng.random_range(alo..=ahi) } else { alo };
        let (rlo, rhi) = (Float::ln(cfg.crop_aspect.0), Float::ln(cfg.crop_aspect.1));
        let aspect = if rlo < rhi { Float::exp(rng.random_range(rlo..=rhi)) } else { Float::exp(rlo) };
        assert!((alo..=ahi).contains(&area), "crop area {area} outside configured interval");
        assert!(
            aspect >= cfg.crop_aspect.0 * (1.0 - 1e-12) && aspect <= cfg.crop_aspect.1 * (1.0 + 1e-12),
            "crop aspect {aspect} outside configured interval"
        );
        (area, aspect)
    }

    /// Samples a crop inside the region left after trimming `boundary_px`
    /// on each side. Up to ten draws are tried; if none fits, a center crop
    /// with the aspect clamped into range is used.
    pub fn sample(height: usize, width: usize, cfg: &AuxConfig, rng: &mut impl Rng) -> Self {
        let b = if height > 2 * cfg.boundary_px && width > 2 * cfg.boundary_px {
            cfg.boundary_px
        } else {
            0
        };
        let (rh, rw) = (height - 2 * b, width - 2 * b);
        let region = (rh * rw) as f64;
        for _ in 0..MAX_ATTEMPTS {
            let (area, aspect) = Self::draw_shape(cfg, rng);
            let target = region * area;
            let w = Float::round(Float::sqrt(target * aspect)) as usize;
            let h = Float::round(Float::sqrt(target / aspect)) as usize;
            if w > 0 && h > 0 && w <= rw && h <= rh {
                let top = rng.random_range(0..=rh - h);
                let left = rng.random_range(0..=rw - w);
                return Self {
                    top: top + b,
                    left: left + b,
                    height: h,
                    width: w,
                };
            }
        }
        let ratio = rw as f64 / rh as f64;
        let (h, w) = if ratio < cfg.crop_aspect.0 {
            (Float::round(rw as f64 / cfg.crop_aspect.0) as usize, rw)
        } else if ratio > cfg.crop_aspect.1 {
            (rh, Float::round(rh as f64 * cfg.crop_aspect.1) as usize)
        } else {
            (rh, rw)
        };
        let (h, w) = (h.clamp(1, rh), w.clamp(1, rw));
        Self {
            top: b + (rh - h) / 2,
            left: b + (rw - w) / 2,
            height: h,
            width: w,
        }
    }

    /// Cuts the rectangle out and resizes it to `out_size × out_size`.
    pub fn apply(&self, img: &Image, out_size: usize) -> Image {
        let ch = img.channels();
        let patch = Image::from_fn(self.height, self.width, ch, |r, c, k| {
            img.get(self.top + r, self.left + c, k)
        });
        resize_bilinear(&patch, out_size, out_size)
    }
}

/// Random resized crop to `cfg.out_size` square.
pub fn random_crop(img: &Image, cfg: &AuxConfig, rng: &mut impl Rng) -> Image {
    CropParams::sample(img.height(), img.width(), cfg, rng).apply(img, cfg.out_size)
}
