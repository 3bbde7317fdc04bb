use crate::error::{Error, Result};

/// Geometry and head configuration of the multi-task network.
#[derive(Clone, Debug, PartialEq)]
pub struct MtlConfig {
    /// Square input extent (pixels); must be divisible by 32.
    pub image_size: usize,
    /// Channels C_f of the fused feature F₀ and of every pyramid level.
    pub fused_channels: usize,
    pub pyramid_depth: usize,
    /// Object classes K (background excluded).
    pub num_classes: usize,
    /// Anchor side lengths in units of the level's cell size.
    pub anchor_scales: Vec<f32>,
    /// Output widths of the stem and the four backbone stages.
    pub backbone_widths: [usize; 5],
    /// Per-level width of the segmentation branch before concatenation.
    pub seg_channels: usize,
    pub match_iou: f32,
    pub negative_ratio: usize,
    pub conf_threshold: f32,
    pub nms_iou: f32,
    pub max_detections: usize,
}

impl Default for MtlConfig {
    fn default() -> Self {
        MtlConfig {
            image_size: 64,
            fused_channels: 64,
            pyramid_depth: 5,
            num_classes: 4,
            anchor_scales: vec![0.5, 1.0, 1.5],
            backbone_widths: [16, 32, 48, 64, 64],
            seg_channels: 16,
            match_iou: 0.5,
            negative_ratio: 3,
            conf_threshold: 0.05,
            nms_iou: 0.45,
            max_detections: 50,
        }
    }
}

impl MtlConfig {
    /// Extent S of the split-point feature D₁ (input / 4).
    pub fn split_size(&self) -> usize {
        self.image_size / 4
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len()
    }

    /// Extent of pyramid level `level` (1-based).
    pub fn level_size(&self, level: usize) -> usize {
        self.split_size() >> (level - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return Err(Error::config(format!(
                "image size {} is not a positive multiple of 32",
                self.image_size
            )));
        }
        if self.pyramid_depth == 0 || self.split_size() >> (self.pyramid_depth - 1) == 0 {
            return Err(Error::config(format!(
                "pyramid depth {} would shrink a {}x{} split feature to zero",
                self.pyramid_depth,
                self.split_size(),
                self.split_size()
            )));
        }
        if self.num_classes == 0 || self.num_classes > 254 {
            return Err(Error::config("num_classes must be in 1..=254"));
        }
        if self.anchor_scales.is_empty() || self.anchor_scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("anchor scales must be positive"));
        }
        if self.fused_channels < 4 || self.backbone_widths.contains(&0) || self.seg_channels == 0 {
            return Err(Error::config("channel widths must be positive (fused >= 4)"));
        }
        Ok(())
    }
}
