//! Procedural dataset of four filled shapes on a tinted, striped
//! background that brightens towards the bottom. Each shape is lit from
//! above and casts a shadow below it, so quarter turns show on the object
//! as well as the background, and warps bend the stripes.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use codial_core::transforms::Image;
use codial_core::{Purpose, RngStream};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_dataset, Dataset};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disk,
    Square,
    Triangle,
    Cross,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Disk, Shape::Square, Shape::Triangle, Shape::Cross];

    /// Whether the point `(u, v)`, in units of the shape radius and with
    /// `v` pointing down, lies inside.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Disk => u * u + v * v <= 1.0,
            Shape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            Shape::Triangle => {
                // apex at v = −1, base at v = ½
                (-1.0..=0.5).contains(&v) && u.abs() <= (v + 1.0) / 1.5 * (3f64.sqrt() / 2.0)
            }
            Shape::Cross => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticShapesSpec {
    pub image_size: usize,
    pub classes: Vec<Shape>,
    pub per_class: usize,
    pub seed: u64,
    /// Shape radius range as fractions of the image side.
    pub radius: (f64, f64),
    /// Largest centre offset from the middle, as a fraction of the side.
    pub position_jitter: f64,
    /// Largest in-plane tilt of the shape, in degrees.
    pub tilt_deg: f64,
    /// Spread of the random per-image tints.
    pub color_jitter: f64,
    /// Amplitude of horizontal background stripes.
    pub stripe_contrast: f64,
    /// Top-to-bottom brightness ramp of the background.
    pub background_gradient: f64,
    /// Downward shadow displacement, as a fraction of the shape radius.
    pub shadow_offset: f64,
    /// Brightness drop from the top to the bottom of the shape.
    pub shading: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticShapesSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            classes: Shape::ALL.to_vec(),
            per_class: 250,
            seed: 0,
            radius: (0.25, 0.3),
            position_jitter: 0.1,
            tilt_deg: 15.0,
            color_jitter: 0.3,
            stripe_contrast: 0.12,
            background_gradient: 0.3,
            shadow_offset: 0.3,
            shading: 0.4,
            noise: 0.02,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticShapesSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Invalid(m.into()));
        if self.image_size < 16 {
            return bad("image_size must be at least 16");
        }
        if self.classes.is_empty() || self.per_class == 0 {
            return bad("need at least one class and one image per class");
        }
        let (lo, hi) = self.radius;
        if !(lo > 0.0 && lo <= hi && hi + self.position_jitter <= 0.5) {
            return bad("radius range and position jitter must keep shapes inside the image");
        }
        if lo * 64.0 < 6.0 {
            return bad("shapes must be at least 6 px in radius at 64x64");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    fn test_count(&self) -> usize {
        ((self.per_class as f64 * self.test_fraction).round() as usize).clamp(1, self.per_class.max(2) - 1)
    }
}

fn hue_to_rgb(h: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        1.0 - (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [f(5.0), f(3.0), f(1.0)]
}

const SUPERSAMPLE: usize = 3;

/// Renders image `index` of class `shape`.
pub fn render(spec: &SyntheticShapesSpec, shape: Shape, index: u64) -> Image {
    let mut rng = RngStream::new(spec.seed, 0, index, Purpose::Data);
    let n = spec.image_size as f64;
    let r = rng.random_range(spec.radius.0..=spec.radius.1) * n;
    let j = spec.position_jitter * n;
    let cx = n / 2.0 + rng.random_range(-j..=j);
    let cy = n / 2.0 + rng.random_range(-j..=j);
    let tilt = rng.random_range(-spec.tilt_deg..=spec.tilt_deg) * PI / 180.0;
    let (sin, cos) = tilt.sin_cos();
    let fg = hue_to_rgb(rng.random::<f64>());
    let fg_level = rng.random_range(0.55..0.95);
    let tint = [0, 1, 2].map(|_| 1.0 + spec.color_jitter * rng.random_range(-0.5..0.5));
    let top = rng.random_range(0.05..0.25);
    let bottom = rng.random_range(0.55..0.75);
    let period = n / rng.random_range(5.0..8.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let stripe = spec.stripe_contrast;
    let noise = spec.noise;
    let size = spec.image_size;
    let shadow_dy = spec.shadow_offset * r;
    let mut coverage = vec![0.0f64; size * size];
    let mut shadow = vec![0.0f64; size * size];
    let step = 1.0 / SUPERSAMPLE as f64;
    let inside = |px: f64, py: f64| {
        let u = (cos * px + sin * py) / r;
        let v = (-sin * px + cos * py) / r;
        shape.contains(u, v)
    };
    let area = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for y in 0..size {
        for x in 0..size {
            let (mut hits, mut shade) = (0, 0);
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) * step - cx;
                    let py = y as f64 + (sy as f64 + 0.5) * step - cy;
                    hits += inside(px, py) as usize;
                    shade += inside(px, py - shadow_dy) as usize;
                }
            }
            coverage[y * size + x] = hits as f64 / area;
            shadow[y * size + x] = shade as f64 / area;
        }
    }
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        let t = y as f64 / (n - 1.0);
        let base = top + (bottom - top) * 0.5
            + spec.background_gradient * (t - 0.5)
            + stripe * (2.0 * PI * y as f64 / period + phase).sin();
        // top-lit: brightest at the top edge of the shape
        let lit = 1.0 - spec.shading * ((y as f64 - (cy - r)) / (2.0 * r)).clamp(0.0, 1.0);
        for x in 0..size {
            let a = coverage[y * size + x];
            let sh = shadow[y * size + x] * (1.0 - a);
            for ch in 0..3 {
                let bg = base * tint[ch] * (1.0 - 0.6 * sh);
                let e = (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt();
                let v = a * fg[ch] * fg_level * lit + (1.0 - a) * bg + noise * e;
                pixels.push(v as f32);
            }
        }
    }
    Image::new(size, size, 3, pixels).expect("sized")
}

/// Class-balanced split: the last `test_fraction` of each class is held
/// out, and each split is shuffled.
pub fn generate(spec: &SyntheticShapesSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let test_count = spec.test_count();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, &shape) in spec.classes.iter().enumerate() {
        for i in 0..spec.per_class {
            let index = (c * spec.per_class + i) as u64;
            let item = (render(spec, shape, index), c);
            if i < spec.per_class - test_count {
                train.push(item);
            } else {
                test.push(item);
            }
        }
    }
    let pack = |mut items: Vec<(Image, usize)>, salt: u64| {
        items.shuffle(&mut RngStream::new(spec.seed, 0, salt, Purpose::Shuffle));
        let (images, labels) = items.into_iter().unzip();
        Dataset {
            images,
            labels,
            class_count: spec.classes.len(),
        }
    };
    Ok((pack(train, 0), pack(test, 1)))
}

pub const TRAIN_FILE: &str = "shapes_train.cdld";
pub const TEST_FILE: &str = "shapes_test.cdld";

/// Writes both splits into `dir`, returning the train and test paths.
pub fn gen_synthetic(spec: &SyntheticShapesSpec, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = generate(spec)?;
    std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
    let tp = dir.join(TRAIN_FILE);
    let vp = dir.join(TEST_FILE);
    write_dataset(&tp, &train)?;
    write_dataset(&vp, &test)?;
    Ok((tp, vp))
}
