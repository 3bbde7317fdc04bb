use super::boxes::BBox;
use crate::error::{Error, Result};

/// Annotated object; `class_id` in 1..=K.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtObject {
    pub class_id: usize,
    pub bbox: BBox,
}

/// Per-image annotation: object boxes and a row-major per-pixel class map
/// (0 = background).
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub objects: Vec<GtObject>,
    pub mask: Vec<u8>,
}

impl GroundTruth {
    pub fn validate(&self, image_size: usize, num_classes: usize) -> Result<()> {
        if self.mask.len() != image_size * image_size {
            return Err(Error::dim(format!(
                "mask has {} pixels for a {image_size}x{image_size} image",
                self.mask.len()
            )));
        }
        if let Some(&bad) = self.mask.iter().find(|&&c| c as usize > num_classes) {
            return Err(Error::config(format!("mask class {bad} exceeds K = {num_classes}")));
        }
        for o in &self.objects {
            if o.class_id == 0 || o.class_id > num_classes || !(o.bbox.w > 0.0 && o.bbox.h > 0.0) {
                return Err(Error::config(format!("malformed object {o:?}")));
            }
        }
        Ok(())
    }
}

/// Per-pixel class map at input resolution, values in 0..=K.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<u8>,
}
