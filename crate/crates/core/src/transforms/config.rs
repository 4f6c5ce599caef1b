use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Auxiliary augmentation settings. Intervals are closed `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxConfig {
    /// Crop area as a fraction of the (boundary-trimmed) source area.
    pub crop_area: (f64, f64),
    /// Crop aspect ratio, sampled log-uniformly.
    pub crop_aspect: (f64, f64),
    /// Color jitter factor range shared by all four adjustments.
    pub jitter_range: (f64, f64),
    pub blur_sigma: (f64, f64),
    /// Blur kernel size as a fraction of the smaller image side.
    pub blur_kernel_frac: f64,
    /// Side length of every produced view.
    pub out_size: usize,
    /// Margin excluded from crop sampling on each side.
    pub boundary_px: usize,
    /// Control points per side of the warp grid.
    pub warp_grid: usize,
    pub flip: bool,
    pub crop: bool,
    pub jitter: bool,
    pub blur: bool,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self {
            crop_area: (0.08, 1.0),
            crop_aspect: (3.0 / 4.0, 4.0 / 3.0),
            jitter_range: (0.5, 1.5),
            blur_sigma: (0.1, 2.0),
            blur_kernel_frac: 0.1,
            out_size: 64,
            boundary_px: 2,
            warp_grid: 4,
            flip: true,
            crop: true,
            jitter: true,
            blur: false,
        }
    }
}

fn interval(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo >= min && lo <= hi) {
        return Err(config_err(alloc::format!("{name} must satisfy {min} <= lo <= hi, got [{lo}, {hi}]")));
    }
    Ok(())
}

impl AuxConfig {
    pub fn validate(&self) -> Result<()> {
        interval("crop_area", self.crop_area, f64::MIN_POSITIVE)?;
        if self.crop_area.1 > 1.0 {
            return Err(config_err("crop_area upper bound exceeds 1"));
        }
        interval("crop_aspect", self.crop_aspect, f64::MIN_POSITIVE)?;
        interval("jitter_range", self.jitter_range, 0.0)?;
        interval("blur_sigma", self.blur_sigma, f64::MIN_POSITIVE)?;
        if !(self.blur_kernel_frac > 0.0 && self.blur_kernel_frac <= 1.0) {
            return Err(config_err("blur_kernel_frac must lie in (0, 1]"));
        }
        if self.out_size < 8 {
            return Err(config_err("out_size must be at least 8"));
        }
        if self.warp_grid < 2 {
            return Err(config_err("warp_grid needs at least 2 control points per side"));
        }
        Ok(())
    }
}
