use alloc::vec::Vec;

use rand::Rng;

use super::{
    hflip, resize_bilinear, rotate90, warp, AuxConfig, BlurParams, CropParams, Image, JitterParams, WarpField,
};

/// Number of primary transformation classes.
pub const NUM_CLASSES: usize = 5;

/// Primary transformation a view was produced with; the classifier target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrimaryClass {
    Rot0 = 0,
    Rot90 = 1,
    Rot180 = 2,
    Rot270 = 3,
    Warp = 4,
}

impl PrimaryClass {
    pub const ALL: [PrimaryClass; NUM_CLASSES] = [
        PrimaryClass::Rot0,
        PrimaryClass::Rot90,
        PrimaryClass::Rot180,
        PrimaryClass::Rot270,
        PrimaryClass::Warp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledView {
    pub image: Image,
    pub label: PrimaryClass,
}

/// Builds the five labeled views of one source image.
///
/// The source is flipped horizontally with probability 0.5 (when enabled).
/// Each class then draws its own auxiliary chain (crop or plain resize,
/// optional jitter, optional blur) and its primary transformation is
/// applied last, so views do not share exact content.
pub fn make_views(img: &Image, cfg: &AuxConfig, rng: &mut impl Rng) -> Vec<LabeledView> {
    let flipped = rng.random_bool(0.5);
    let source = if cfg.flip && flipped { hflip(img) } else { img.clone() };
    let s = cfg.out_size;
    PrimaryClass::ALL
        .iter()
        .map(|&label| {
            let mut view = if cfg.crop {
                CropParams::sample(source.height(), source.width(), cfg, rng).apply(&source, s)
            } else {
                resize_bilinear(&source, s, s)
            };
            if cfg.jitter {
                view = JitterParams::sample(cfg, rng).apply(&view);
            }
            if cfg.blur {
                view = BlurParams::sample(cfg, rng).apply(&view, cfg.blur_kernel_frac);
            }
            let image = match label {
                PrimaryClass::Warp => warp(&view, &WarpField::sample(s, s, cfg.warp_grid, rng)),
                rot => rotate90(&view, rot.index() as i32),
            };
            LabeledView { image, label }
        })
        .collect()
}
