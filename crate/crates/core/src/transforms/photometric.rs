use alloc::vec;
use alloc::vec::Vec;

use num_traits::{Euclid, Float};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{reflect_index, AuxConfig, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

/// Factors of the four color adjustments and the order they run in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterParams {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub order: [JitterOp; 4],
}

impl Default for JitterParams {
    fn default() -> Self {
        Self::identity()
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, s, max);
    }
    let h = if max == r {
        Euclid::rem_euclid(&((g - b) / delta), &6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = Euclid::rem_euclid(&h, &1.0) * 6.0;
    let sector = Float::floor(h6);
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

impl JitterParams {
    pub fn identity() -> Self {
        Self {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 1.0,
            order: [
                JitterOp::Brightness,
                JitterOp::Contrast,
                JitterOp::Saturation,
                JitterOp::Hue,
            ],
        }
    }

    /// Factors uniform on `jitter_range`, order a uniform permutation.
    pub fn sample(cfg: &AuxConfig, rng: &mut impl Rng) -> Self {
        let (lo, hi) = cfg.jitter_range;
        let mut draw = || {
            let f = if lo < hi { rng.random_range(lo..=hi) } else { lo };
            assert!((lo..=hi).contains(&f), "jitter factor {f} outside configured interval");
            f as f32
        };
        let (brightness, contrast, saturation, hue) = (draw(), draw(), draw(), draw());
        let mut order = Self::identity().order;
        order.shuffle(rng);
        Self {
            brightness,
            contrast,
            saturation,
            hue,
            order,
        }
    }

    /// Applies the adjustments in `order`, clamping to `[0, 1]` after each.
    /// Single-channel images only receive brightness and contrast. The hue
    /// factor `f` rotates hue by `(f − 1) · 180°`.
    pub fn apply(&self, img: &Image) -> Image {
        let mut out = img.clone();
        let ch = img.channels();
        for op in self.order {
            let px = out.pixels_mut();
            match op {
                JitterOp::Brightness => px.iter_mut().for_each(|p| *p *= self.brightness),
                JitterOp::Contrast => {
                    let mean = if ch == 3 {
                        px.chunks(3).map(|c| luma(c[0], c[1], c[2])).sum::<f32>() / (px.len() / 3) as f32
                    } else {
                        px.iter().sum::<f32>() / px.len() as f32
                    };
                    px.iter_mut().for_each(|p| *p = (*p - mean) * self.contrast + mean);
                }
                JitterOp::Saturation if ch == 3 => {
                    for c in px.chunks_mut(3) {
                        let gray = luma(c[0], c[1], c[2]);
                        c.iter_mut().for_each(|p| *p = gray + (*p - gray) * self.saturation);
                    }
                }
                JitterOp::Hue if ch == 3 => {
                    let shift = (self.hue - 1.0) * 0.5;
                    if shift != 0.0 {
                        for c in px.chunks_mut(3) {
                            let (h, s, v) = rgb_to_hsv(c[0], c[1], c[2]);
                            let (r, g, b) = hsv_to_rgb(h + shift, s, v);
                            c.copy_from_slice(&[r, g, b]);
                        }
                    }
                }
                JitterOp::Saturation | JitterOp::Hue => {}
            }
            out.clamp();
        }
        out
    }
}

/// Color jitter with freshly drawn factors and order.
pub fn color_jitter(img: &Image, cfg: &AuxConfig, rng: &mut impl Rng) -> Image {
    JitterParams::sample(cfg, rng).apply(img)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurParams {
    pub sigma: f32,
}

impl BlurParams {
    pub fn sample(cfg: &AuxConfig, rng: &mut impl Rng) -> Self {
        let (lo, hi) = cfg.blur_sigma;
        let s = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        assert!((lo..=hi).contains(&s), "blur sigma {s} outside configured interval");
        Self { sigma: s as f32 }
    }

    /// `round(frac · min(H, W))`, forced odd, at least 3.
    pub fn kernel_size(height: usize, width: usize, frac: f64) -> usize {
        let k = (frac * height.min(width) as f64).round() as usize;
        let k = if k % 2 == 0 { k + 1 } else { k };
        k.max(3)
    }

    /// Normalized 1-D Gaussian taps of the given odd length.
    pub fn kernel(&self, size: usize) -> Vec<f32> {
        let half = (size / 2) as isize;
        let denom = 2.0 * self.sigma * self.sigma;
        let mut k: Vec<f32> = (-half..=half).map(|i| (-((i * i) as f32) / denom).exp()).collect();
        let s: f32 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    }

    /// Separable blur with reflect padding: rows first, then columns.
    pub fn apply(&self, img: &Image, kernel_frac: f64) -> Image {
        let (h, w, ch) = (img.height(), img.width(), img.channels());
        let taps = self.kernel(Self::kernel_size(h, w, kernel_frac));
        let half = (taps.len() / 2) as isize;
        let src = img.pixels();
        let mut tmp = vec![0.0f32; src.len()];
        for r in 0..h {
            for c in 0..w {
                for (t, &k) in taps.iter().enumerate() {
                    let cc = reflect_index(c as isize + t as isize - half, w);
                    for k2 in 0..ch {
                        tmp[(r * w + c) * ch + k2] += k * src[(r * w + cc) * ch + k2];
                    }
                }
            }
        }
        let mut out = vec![0.0f32; src.len()];
        for r in 0..h {
            for (t, &k) in taps.iter().enumerate() {
                let rr = reflect_index(r as isize + t as isize - half, h);
                for c in 0..w {
                    for k2 in 0..ch {
                        out[(r * w + c) * ch + k2] += k * tmp[(rr * w + c) * ch + k2];
                    }
                }
            }
        }
        Image::new(h, w, ch, out).expect("sized above")
    }
}

/// Gaussian blur with a freshly drawn sigma.
pub fn gaussian_blur(img: &Image, cfg: &AuxConfig, rng: &mut impl Rng) -> Image {
    BlurParams::sample(cfg, rng).apply(img, cfg.blur_kernel_frac)
}
