//! Dataset plumbing: manifests, PNG image/depth IO, fisheye undistortion,
//! resampling and augmentation, sequence-level splits, and a synthetic toy
//! dataset for fast end-to-end runs.

mod manifest;
mod pngio;
mod resample;
mod split;
pub mod toygen;
mod undistort;

pub use manifest::{
    load_paired, load_unpaired, write_paired_dataset, write_unpaired_dataset, Manifest,
    SequenceEntry,
};
pub use pngio::{read_depth_png, read_image_png, write_depth_png, write_image_png};
pub use resample::{
    paired_augment, resize_depth_nearest, resize_image_bilinear, AugmentOptions,
};
pub use split::{split_sequences, SplitResult};
pub use undistort::{undistort_depth, undistort_image, Intrinsics};
