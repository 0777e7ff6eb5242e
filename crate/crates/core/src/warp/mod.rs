//! Thin-plate-spline warps and the crop/flip/TPS augmentation pipeline.

mod augment;
mod tps;

pub use augment::{
    apply_warp, augment_sample, bilinear, random_tps, sample_backward, AugmentationSpec,
    AugmentedSample, CropBox, WarpRecord,
};
pub use tps::{
    bending_energy, control_grid, evaluate_warp, fit_tps, tps_kernel, Point, TpsWarp,
    DEFAULT_LAMBDA,
};
