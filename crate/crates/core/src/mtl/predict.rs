use super::anchors::AnchorSet;
use super::boxes::{nms, BBox, Detection};
use super::net::{HeadOutputs, MtlNet};
use super::target::SegMask;
use crate::error::Result;
use crate::tensor::{softmax_values, ParamStore, Tape, Tensor};

/// Candidates kept per class before NMS.
const PRE_NMS_TOP_K: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub detections: Vec<Detection>,
    pub mask: SegMask,
}

impl MtlNet {
    pub fn predict(&self, store: &ParamStore<f32>, anchors: &AnchorSet, images: &Tensor<f32>) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, store, x)?;
        self.collect(&tape, anchors, &out)
    }

    /// Predictions from a (possibly reconstructed) split-point feature batch.
    pub fn predict_from_features(
        &self,
        store: &ParamStore<f32>,
        anchors: &AnchorSet,
        d1: &Tensor<f32>,
    ) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let x = tape.constant(d1.clone());
        let out = self.heads(&mut tape, store, x)?;
        self.collect(&tape, anchors, &out)
    }

    fn collect(&self, tape: &Tape<f32>, anchors: &AnchorSet, out: &HeadOutputs) -> Result<Vec<Prediction>> {
        let dets = decode_detections(self, tape, anchors, out)?;
        let masks = seg_argmax(tape.value(out.seg))?;
        Ok(dets
            .into_iter()
            .zip(masks)
            .map(|(detections, mask)| Prediction { detections, mask })
            .collect())
    }
}

/// Softmax scores → threshold → per-class NMS → top `max_detections`.
pub fn decode_detections(
    net: &MtlNet,
    tape: &Tape<f32>,
    anchors: &AnchorSet,
    out: &HeadOutputs,
) -> Result<Vec<Vec<Detection>>> {
    let cfg = &net.cfg;
    let k1 = cfg.num_classes + 1;
    let a = cfg.anchors_per_cell();
    let n = tape.value(out.seg).dims4()?.0;
    let mut per_image: Vec<Vec<Vec<Detection>>> = vec![vec![Vec::new(); k1]; n];
    for (level, lo) in out.det.iter().enumerate() {
        let probs = softmax_values(tape.value(lo.cls), k1)?;
        let loc = tape.value(lo.loc);
        let (_, _, h, w) = loc.dims4()?;
        let hw = h * w;
        let base = anchors.level_offsets[level];
        let (p, l) = (probs.data(), loc.data());
        for (img, cands) in per_image.iter_mut().enumerate() {
            for ai in 0..a {
                for s in 0..hw {
                    let anchor = &anchors.boxes[base + ai * hw + s];
                    let mut decoded: Option<BBox> = None;
                    for (k, bucket) in cands.iter_mut().enumerate().skip(1) {
                        let score = p[((img * a + ai) * k1 + k) * hw + s];
                        if score <= cfg.conf_threshold {
                            continue;
                        }
                        let bbox = *decoded.get_or_insert_with(|| {
                            let off = std::array::from_fn(|q| l[((img * a + ai) * 4 + q) * hw + s]);
                            BBox::decode(off, anchor).clipped()
                        });
                        if bbox.w > 0.0 && bbox.h > 0.0 {
                            bucket.push(Detection {
                                class_id: k,
                                score: score.clamp(0.0, 1.0),
                                bbox,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(per_image
        .into_iter()
        .map(|cands| {
            let mut kept = Vec::new();
            for mut c in cands {
                c.sort_by(|x, y| y.score.total_cmp(&x.score));
                c.truncate(PRE_NMS_TOP_K);
                kept.extend(nms(c, cfg.nms_iou));
            }
            kept.sort_by(|x, y| y.score.total_cmp(&x.score));
            kept.truncate(cfg.max_detections);
            kept
        })
        .collect())
}

/// Per-pixel argmax of (N, K+1, H, W) logits; ties go to the lower class.
pub fn seg_argmax(logits: &Tensor<f32>) -> Result<Vec<SegMask>> {
    let (n, k1, h, w) = logits.dims4()?;
    let hw = h * w;
    let d = logits.data();
    Ok((0..n)
        .map(|img| {
            let classes = (0..hw)
                .map(|s| {
                    let mut best = 0;
                    for k in 1..k1 {
                        if d[(img * k1 + k) * hw + s] > d[(img * k1 + best) * hw + s] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect();
            SegMask {
                height: h,
                width: w,
                classes,
            }
        })
        .collect())
}
