use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::Image;

/// Counter-clockwise rotation by `quarter_turns · 90°` as an exact pixel
/// permutation. One turn maps `(r, c)` to `(W−1−c, r)`.
pub fn rotate90(img: &Image, quarter_turns: i32) -> Image {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let t = quarter_turns.rem_euclid(4);
    if t == 0 {
        return img.clone();
    }
    let (oh, ow) = if t % 2 == 1 { (w, h) } else { (h, w) };
    let mut out = vec![0.0f32; h * w * ch];
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = match t {
                1 => (w - 1 - c, r),
                2 => (h - 1 - r, w - 1 - c),
                _ => (c, h - 1 - r),
            };
            let src = (r * w + c) * ch;
            let dst = (nr * ow + nc) * ch;
            out[dst..dst + ch].copy_from_slice(&img.pixels()[src..src + ch]);
        }
    }
    Image::new(oh, ow, ch, out).expect("permutation keeps size")
}

/// Reverses the column order.
pub fn hflip(img: &Image) -> Image {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut out = Vec::with_capacity(img.pixels().len());
    for r in 0..h {
        for c in (0..w).rev() {
            let src = (r * w + c) * ch;
            out.extend_from_slice(&img.pixels()[src..src + ch]);
        }
    }
    Image::new(h, w, ch, out).expect("permutation keeps size")
}

/// Bilinear resize with pixel-center alignment and reflect padding.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    let sy = img.height() as f32 / out_h as f32;
    let sx = img.width() as f32 / out_w as f32;
    let ch = img.channels();
    let mut out = vec![0.0f32; out_h * out_w * ch];
    for r in 0..out_h {
        let y = (r as f32 + 0.5) * sy - 0.5;
        for c in 0..out_w {
            let x = (c as f32 + 0.5) * sx - 0.5;
            let dst = (r * out_w + c) * ch;
            img.sample_into(y, x, &mut out[dst..dst + ch]);
        }
    }
    Image::new(out_h, out_w, ch, out).expect("sized above")
}

/// Regular grid of control points with per-point displacements. Anchor
/// `k` sits at `(a_k, b_k)` (row, column) and moves to
/// `(a_k + Δa_k, b_k + Δb_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub height: usize,
    pub width: usize,
    pub anchors: Vec<(f32, f32)>,
    pub offsets: Vec<(f32, f32)>,
    /// Maximum absolute offset `d` along either axis.
    pub bound: f32,
}

impl WarpField {
    /// Offset bound for an image: a tenth of the smaller side.
    pub fn bound_for(height: usize, width: usize) -> f32 {
        0.1 * height.min(width) as f32
    }

    fn with_offsets(height: usize, width: usize, grid: usize, offsets: Vec<(f32, f32)>) -> Self {
        let grid = grid.max(2);
        let mut anchors = Vec::with_capacity(grid * grid);
        for i in 0..grid {
            for j in 0..grid {
                anchors.push((
                    i as f32 * (height - 1) as f32 / (grid - 1) as f32,
                    j as f32 * (width - 1) as f32 / (grid - 1) as f32,
                ));
            }
        }
        Self {
            grid_rows: grid,
            grid_cols: grid,
            height,
            width,
            anchors,
            offsets,
            bound: Self::bound_for(height, width),
        }
    }

    /// Offsets drawn uniformly from `[−d, d]` on both axes.
    pub fn sample(height: usize, width: usize, grid: usize, rng: &mut impl Rng) -> Self {
        let d = Self::bound_for(height, width);
        let n = grid.max(2) * grid.max(2);
        let offsets = (0..n)
            .map(|_| {
                let da = if d > 0.0 { rng.random_range(-d..=d) } else { 0.0 };
                let db = if d > 0.0 { rng.random_range(-d..=d) } else { 0.0 };
                assert!(da.abs() <= d && db.abs() <= d, "warp offset outside [-d, d]");
                (da, db)
            })
            .collect();
        Self::with_offsets(height, width, grid, offsets)
    }

    pub fn constant(height: usize, width: usize, grid: usize, da: f32, db: f32) -> Self {
        let n = grid.max(2) * grid.max(2);
        Self::with_offsets(height, width, grid, vec![(da, db); n])
    }

    pub fn zero(height: usize, width: usize, grid: usize) -> Self {
        Self::constant(height, width, grid, 0.0, 0.0)
    }

    /// Displacement at pixel `(r, c)`, bilinear in the control grid.
    pub fn displacement(&self, r: usize, c: usize) -> (f32, f32) {
        let gy = if self.height > 1 {
            r as f32 * (self.grid_rows - 1) as f32 / (self.height - 1) as f32
        } else {
            0.0
        };
        let gx = if self.width > 1 {
            c as f32 * (self.grid_cols - 1) as f32 / (self.width - 1) as f32
        } else {
            0.0
        };
        let i0 = (gy as usize).min(self.grid_rows - 2);
        let j0 = (gx as usize).min(self.grid_cols - 2);
        let (fy, fx) = (gy - i0 as f32, gx - j0 as f32);
        let at = |i: usize, j: usize| self.offsets[i * self.grid_cols + j];
        let (a, b, d, e) = (at(i0, j0), at(i0, j0 + 1), at(i0 + 1, j0), at(i0 + 1, j0 + 1));
        let lerp = |p: f32, q: f32, t: f32| p + (q - p) * t;
        let top = (lerp(a.0, b.0, fx), lerp(a.1, b.1, fx));
        let bot = (lerp(d.0, e.0, fx), lerp(d.1, e.1, fx));
        (lerp(top.0, bot.0, fy), lerp(top.1, bot.1, fy))
    }
}

/// Resamples `img` so content near each anchor moves by its offset: the
/// output at `p` reads the input at `p − Δ(p)` (bilinear, reflect padding).
pub fn warp(img: &Image, field: &WarpField) -> Image {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    assert_eq!((field.height, field.width), (h, w), "warp field built for another size");
    let mut out = vec![0.0f32; h * w * ch];
    for r in 0..h {
        for c in 0..w {
            let (da, db) = field.displacement(r, c);
            let dst = (r * w + c) * ch;
            img.sample_into(r as f32 - da, c as f32 - db, &mut out[dst..dst + ch]);
        }
    }
    Image::new(h, w, ch, out).expect("sized above")
}
