//! Splitting an image into foreground and background views.

mod gradcam;
pub mod io;
mod mask;

pub use gradcam::{cam_map, gradcam_maps, gradcam_mask, patch_cam, upsample, CamMap, Upsample};
pub use mask::{
    blur_plane, blur_triplet, blur_triplet_with_sigma, erase_mask, gaussian_kernel, make_triplet,
    GaussianBlur, MaskMode, MaskSource, SemanticMask, VisualTriplet,
};

use crate::error::Result;
use crate::scenedata::SceneSample;

/// The annotated foreground of a scene (union over all of its objects).
pub fn oracle_mask(sample: &SceneSample) -> Result<SemanticMask> {
    SemanticMask::binary(sample.size, sample.size, &sample.gt_mask, MaskSource::Oracle)
}
