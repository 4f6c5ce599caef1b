//! Primary transformations (quarter-turn rotations, control-point warps)
//! and the auxiliary augmentations applied before them.
//!
//! Every random augmentation is split into a parameter draw (`*Params::sample`)
//! and a deterministic application, so tests can force exact parameters.

use num_traits::Euclid;

mod config;
mod crop;
mod geometric;
mod image;
mod photometric;
mod views;

pub use config::AuxConfig;
pub use crop::{random_crop, CropParams};
pub use geometric::{hflip, resize_bilinear, rotate90, warp, WarpField};
pub use image::{images_to_tensor, Image};
pub use photometric::{color_jitter, gaussian_blur, BlurParams, JitterOp, JitterParams};
pub use views::{make_views, LabeledView, PrimaryClass, NUM_CLASSES};

/// Reflects a continuous coordinate into `[0, n-1]` about the first and
/// last pixel centers.
pub(crate) fn reflect_coord(x: f32, n: usize) -> f32 {
    if n <= 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f32;
    let m = Euclid::rem_euclid(&x, &period);
    if m > (n - 1) as f32 {
        period - m
    } else {
        m
    }
}

/// Integer version of [`reflect_coord`].
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m > n as isize - 1 {
        (period - m) as usize
    } else {
        m as usize
    }
}
