//! Detection mAP (all-point interpolation, IoU 0.5) and segmentation mIoU
//! from an accumulated confusion matrix.

use crate::error::{Error, Result};
use crate::mtl::{Detection, GroundTruth, SegMask};

/// Mean over classes present in the ground truth of the all-point
/// interpolated average precision. Detections may come in any order.
pub fn mean_ap(detections: &[Vec<Detection>], truths: &[GroundTruth], num_classes: usize, iou_thresh: f32) -> Result<f64> {
    if detections.len() != truths.len() {
        return Err(Error::dim(format!(
            "{} detection lists for {} images",
            detections.len(),
            truths.len()
        )));
    }
    let mut aps = Vec::new();
    for class in 1..=num_classes {
        let n_gt: usize = truths
            .iter()
            .map(|t| t.objects.iter().filter(|o| o.class_id == class).count())
            .sum();
        if n_gt == 0 {
            continue;
        }
        let mut dets: Vec<(usize, &Detection)> = detections
            .iter()
            .enumerate()
            .flat_map(|(i, d)| d.iter().filter(|d| d.class_id == class).map(move |d| (i, d)))
            .collect();
        dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
        let mut used: Vec<Vec<bool>> = truths.iter().map(|t| vec![false; t.objects.len()]).collect();
        let mut tp_cum = 0usize;
        let mut points = Vec::with_capacity(dets.len());
        for (k, (img, d)) in dets.iter().enumerate() {
            let mut best = (-1.0f32, None);
            for (j, o) in truths[*img].objects.iter().enumerate() {
                if o.class_id == class {
                    let iou = d.bbox.iou(&o.bbox);
                    if iou > best.0 {
                        best = (iou, Some(j));
                    }
                }
            }
            if let (iou, Some(j)) = best {
                if iou >= iou_thresh && !used[*img][j] {
                    used[*img][j] = true;
                    tp_cum += 1;
                }
            }
            points.push((tp_cum as f64 / n_gt as f64, tp_cum as f64 / (k + 1) as f64));
        }
        // All-point interpolation: Σ (r_i − r_{i−1}) · max_{j ≥ i} p_j.
        let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
        for i in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (&(r, _), &p) in points.iter().zip(&envelope) {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
        aps.push(ap);
    }
    if aps.is_empty() {
        return Err(Error::Metric("mAP undefined without ground-truth objects".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// (K+1)×(K+1) pixel counts, rows = ground truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::dim(format!(
                "prediction of {} pixels vs truth of {}",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            let (p, t) = (p as usize, t as usize);
            if p >= self.classes || t >= self.classes {
                return Err(Error::dim(format!("class index {} >= {}", p.max(t), self.classes)));
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Per-class IoU, `None` where the class never occurs in either map.
    pub fn ious(&self) -> Vec<Option<f64>> {
        let k = self.classes;
        (0..k)
            .map(|c| {
                let tp = self.counts[c * k + c];
                let row: u64 = self.counts[c * k..(c + 1) * k].iter().sum();
                let col: u64 = (0..k).map(|r| self.counts[r * k + c]).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn mean_iou(&self) -> f64 {
        let v: Vec<f64> = self.ious().into_iter().flatten().collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

/// mIoU over a set of images (confusion accumulated across all of them).
pub fn mean_iou(preds: &[SegMask], truths: &[GroundTruth], classes: usize) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::dim("mask count mismatch"));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (p, t) in preds.iter().zip(truths) {
        cm.add(&p.classes, &t.mask)?;
    }
    Ok(cm.mean_iou())
}
