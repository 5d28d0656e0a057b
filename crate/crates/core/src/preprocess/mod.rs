//! Deterministic image transforms: auto-crop, color-normalizing
//! enhancement, anti-aliased bilinear resize, 256×256 patch extraction,
//! and seeded augmentation.

pub mod augment;
pub mod crop;
pub mod graham;
pub mod patches;
pub mod resize;

pub use augment::{apply_augment, augment, AugmentParams, AugmentationPolicy, Augmenter};
pub use crop::{auto_crop, DEFAULT_CROP_THRESHOLD};
pub use graham::{graham_enhance, graham_enhance_with, GrahamOptions, DEFAULT_SIGMA_FRACTION};
pub use patches::{extract_patches, reflect_pad_plane, reflect_pad_rgb, PatchSet, PATCH_SIZE};
pub use resize::{resize_image, resize_rgb};
