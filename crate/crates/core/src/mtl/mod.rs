//! Toy multi-task network: fused backbone up to the split point D₁, pyramid
//! parser, SSD-style detector and segmentation head.

mod anchors;
mod boxes;
mod config;
mod loss;
mod net;
mod predict;
mod target;
#[cfg(test)]
mod tests;

pub use anchors::AnchorSet;
pub use boxes::{nms, BBox, Detection, CENTER_VARIANCE, SIZE_VARIANCE};
pub use config::MtlConfig;
pub use loss::{
    detection_loss, match_anchors, mine_negatives, mtl_loss, segmentation_loss, AnchorTargets, LossParts, LossValues,
};
pub use net::{HeadOutputs, LevelOutput, MtlNet, TaskSet, BACKBONE_PREFIX, DETECT_PREFIX, PARSE_PREFIX, SEGMENT_PREFIX};
pub use predict::{decode_detections, seg_argmax, Prediction};
pub use target::{GroundTruth, GtObject, SegMask};
