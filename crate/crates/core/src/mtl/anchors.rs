use super::boxes::BBox;
use super::MtlConfig;
use crate::error::{Error, Result};

/// Anchors of every pyramid level, level-major, then (anchor, y, x) within a
/// level to match the row order of the detection head's channel groups.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    /// Start offset of each level in `boxes`.
    pub level_offsets: Vec<usize>,
}

impl AnchorSet {
    pub fn for_config(cfg: &MtlConfig) -> Result<Self> {
        cfg.validate()?;
        let mut boxes = Vec::new();
        let mut level_offsets = Vec::new();
        for level in 1..=cfg.pyramid_depth {
            level_offsets.push(boxes.len());
            let size = cfg.level_size(level);
            let cell = 1.0 / size as f32;
            for &scale in &cfg.anchor_scales {
                let side = scale * cell;
                if !(side > 0.0) || !side.is_finite() {
                    return Err(Error::config(format!("malformed anchor side {side}")));
                }
                for y in 0..size {
                    for x in 0..size {
                        boxes.push(BBox::new(
                            (x as f32 + 0.5) * cell,
                            (y as f32 + 0.5) * cell,
                            side,
                            side,
                        ));
                    }
                }
            }
        }
        Ok(AnchorSet {
            boxes,
            level_offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        let start = self.level_offsets[level];
        let end = self
            .level_offsets
            .get(level + 1)
            .copied()
            .unwrap_or(self.boxes.len());
        start..end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_order() {
        let cfg = MtlConfig::default();
        let a = AnchorSet::for_config(&cfg).unwrap();
        // 3 anchors over 16², 8², 4², 2², 1² cells.
        assert_eq!(a.len(), 3 * (256 + 64 + 16 + 4 + 1));
        assert_eq!(a.level_range(1), 768..960);
        let first = a.boxes[0];
        assert_eq!((first.cx, first.cy, first.w), (0.5 / 16.0, 0.5 / 16.0, 0.5 / 16.0));
        // second anchor group of level 1 starts after 256 cells
        assert_eq!(a.boxes[256].w, 1.0 / 16.0);
    }
}
