//! Normalized center-size boxes, SSD offset coding and NMS.

/// Box in normalized image coordinates: center (cx, cy) and extents (w, h).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

/// SSD offset variances for (center, size).
pub const CENTER_VARIANCE: f32 = 0.1;
pub const SIZE_VARIANCE: f32 = 0.2;

impl BBox {
    pub fn new(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn from_corners(x0: f32, y0: f32, x1: f32, y1: f32) -> Self {
        BBox {
            cx: 0.5 * (x0 + x1),
            cy: 0.5 * (y0 + y1),
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn corners(&self) -> (f32, f32, f32, f32) {
        (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )
    }

    pub fn area(&self) -> f32 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f32 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Clips to the unit square.
    pub fn clipped(&self) -> BBox {
        let (x0, y0, x1, y1) = self.corners();
        BBox::from_corners(x0.clamp(0.0, 1.0), y0.clamp(0.0, 1.0), x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0))
    }

    /// Offsets of `self` relative to `anchor`.
    pub fn encode(&self, anchor: &BBox) -> [f32; 4] {
        [
            (self.cx - anchor.cx) / (anchor.w * CENTER_VARIANCE),
            (self.cy - anchor.cy) / (anchor.h * CENTER_VARIANCE),
            (self.w / anchor.w).ln() / SIZE_VARIANCE,
            (self.h / anchor.h).ln() / SIZE_VARIANCE,
        ]
    }

    /// Box described by `offsets` relative to `anchor`.
    pub fn decode(offsets: [f32; 4], anchor: &BBox) -> BBox {
        BBox {
            cx: anchor.cx + offsets[0] * CENTER_VARIANCE * anchor.w,
            cy: anchor.cy + offsets[1] * CENTER_VARIANCE * anchor.h,
            w: anchor.w * (offsets[2] * SIZE_VARIANCE).exp(),
            h: anchor.h * (offsets[3] * SIZE_VARIANCE).exp(),
        }
    }
}

/// Scored class box. `class_id` is in 1..=K (0 is background).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f32,
    pub bbox: BBox,
}

/// Greedy per-class NMS; output sorted by descending score.
pub fn nms(mut dets: Vec<Detection>, iou_threshold: f32) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut keep: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        let suppressed = keep
            .iter()
            .any(|k| k.class_id == d.class_id && k.bbox.iou(&d.bbox) > iou_threshold);
        if !suppressed {
            keep.push(d);
        }
    }
    keep
}
