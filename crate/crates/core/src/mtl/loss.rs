//! SSD-style anchor matching with hard-negative mining, and the joint loss.

use super::anchors::AnchorSet;
use super::net::{HeadOutputs, TaskSet};
use super::target::GroundTruth;
use super::MtlConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// Matching result for one image: label per anchor (0 = background) and the
/// encoded offsets of the assigned object for positives.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTargets {
    pub labels: Vec<usize>,
    pub offsets: Vec<[f32; 4]>,
    pub positives: usize,
}

/// IoU ≥ `threshold` matches, plus the best anchor of every object.
pub fn match_anchors(anchors: &AnchorSet, gt: &GroundTruth, threshold: f32) -> AnchorTargets {
    let n = anchors.len();
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut best_iou = vec![0.0f32; n];
    for (j, a) in anchors.boxes.iter().enumerate() {
        for (i, o) in gt.objects.iter().enumerate() {
            let iou = a.iou(&o.bbox);
            if iou > best_iou[j] {
                best_iou[j] = iou;
                if iou >= threshold {
                    assigned[j] = Some(i);
                }
            }
        }
    }
    for (i, o) in gt.objects.iter().enumerate() {
        let mut best = None;
        let mut bi = 0.0f32;
        for (j, a) in anchors.boxes.iter().enumerate() {
            let iou = a.iou(&o.bbox);
            if iou > bi {
                bi = iou;
                best = Some(j);
            }
        }
        if let Some(j) = best {
            assigned[j] = Some(i);
        }
    }
    let mut labels = vec![0; n];
    let mut offsets = vec![[0.0; 4]; n];
    let mut positives = 0;
    for (j, m) in assigned.iter().enumerate() {
        if let Some(i) = *m {
            let o = &gt.objects[i];
            labels[j] = o.class_id;
            offsets[j] = o.bbox.encode(&anchors.boxes[j]);
            positives += 1;
        }
    }
    AnchorTargets {
        labels,
        offsets,
        positives,
    }
}

/// Picks the `ratio·max(positives, 1)` negatives with the highest background
/// loss. Ties resolve to the lower anchor index.
pub fn mine_negatives(labels: &[usize], background_loss: &[f64], positives: usize, ratio: usize) -> Vec<bool> {
    let mut negs: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == 0).collect();
    negs.sort_by(|&a, &b| background_loss[b].total_cmp(&background_loss[a]).then(a.cmp(&b)));
    let take = (ratio * positives.max(1)).min(negs.len());
    let mut mined = vec![false; labels.len()];
    for &j in &negs[..take] {
        mined[j] = true;
    }
    mined
}

/// Loss nodes; absent terms belong to heads outside the task set.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub cls: Option<Var>,
    pub bbox: Option<Var>,
    pub seg: Option<Var>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub cls: f64,
    pub bbox: f64,
    pub seg: f64,
}

impl LossParts {
    pub fn values<S: Scalar>(&self, tape: &Tape<S>) -> LossValues {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0].as_f64());
        LossValues {
            total: get(Some(self.total)),
            cls: get(self.cls),
            bbox: get(self.bbox),
            seg: get(self.seg),
        }
    }
}

/// L = L_cls + L_bbox + L_seg (restricted to `tasks`).
pub fn mtl_loss<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &MtlConfig,
    anchors: &AnchorSet,
    outputs: &HeadOutputs,
    gts: &[GroundTruth],
    tasks: TaskSet,
) -> Result<LossParts> {
    if !tasks.detection && !tasks.segmentation {
        return Err(Error::config("empty task set"));
    }
    let mut terms = Vec::new();
    let (mut cls, mut bbox, mut seg) = (None, None, None);
    if tasks.detection {
        let (c, b) = detection_loss(tape, cfg, anchors, outputs, gts)?;
        cls = Some(c);
        bbox = Some(b);
        terms.extend([c, b]);
    }
    if tasks.segmentation {
        let s = segmentation_loss(tape, cfg, outputs.seg, gts)?;
        seg = Some(s);
        terms.push(s);
    }
    let total = tape.sum_scalars(&terms)?;
    Ok(LossParts { total, cls, bbox, seg })
}

/// Mean per-pixel cross-entropy of (N, K+1, H, W) logits.
pub fn segmentation_loss<S: Scalar>(tape: &mut Tape<S>, cfg: &MtlConfig, logits: Var, gts: &[GroundTruth]) -> Result<Var> {
    let (n, _, h, w) = tape.value(logits).dims4()?;
    if n != gts.len() {
        return Err(Error::dim(format!("{} annotations for a batch of {n}", gts.len())));
    }
    let mut targets = Vec::with_capacity(n * h * w);
    for gt in gts {
        if gt.mask.len() != h * w {
            return Err(Error::dim(format!("mask of {} pixels for {h}x{w} logits", gt.mask.len())));
        }
        targets.extend(gt.mask.iter().map(|&c| c as usize));
    }
    tape.cross_entropy(logits, cfg.num_classes + 1, &targets, None, S::lit((n * h * w) as f64))
}

/// (L_cls, L_bbox), both normalized by the batch's positive-anchor count.
pub fn detection_loss<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &MtlConfig,
    anchors: &AnchorSet,
    outputs: &HeadOutputs,
    gts: &[GroundTruth],
) -> Result<(Var, Var)> {
    let k1 = cfg.num_classes + 1;
    let a = cfg.anchors_per_cell();
    if outputs.det.len() != anchors.level_offsets.len() {
        return Err(Error::config("detection outputs do not match the anchor levels"));
    }
    let n = gts.len();
    // Per-image background loss −log p₀ for every anchor, read off the logits.
    let mut bg_loss = vec![vec![0.0f64; anchors.len()]; n];
    for (level, out) in outputs.det.iter().enumerate() {
        let t = tape.value(out.cls);
        let (bn, c, h, w) = t.dims4()?;
        if bn != n || c != a * k1 {
            return Err(Error::dim(format!("class logits {:?} for batch {n}", t.shape())));
        }
        let hw = h * w;
        let base = anchors.level_offsets[level];
        let d = t.data();
        for (img, losses) in bg_loss.iter_mut().enumerate() {
            for ai in 0..a {
                for s in 0..hw {
                    let at = |k: usize| d[((img * a + ai) * k1 + k) * hw + s].as_f64();
                    let m = (0..k1).map(at).fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + (0..k1).map(|k| (at(k) - m).exp()).sum::<f64>().ln();
                    losses[base + ai * hw + s] = lse - at(0);
                }
            }
        }
    }
    let mut matched = Vec::with_capacity(n);
    let mut total_pos = 0;
    let mut selected = Vec::with_capacity(n);
    for (gt, losses) in gts.iter().zip(&bg_loss) {
        let m = match_anchors(anchors, gt, cfg.match_iou);
        total_pos += m.positives;
        let mined = mine_negatives(&m.labels, losses, m.positives, cfg.negative_ratio);
        selected.push(mined);
        matched.push(m);
    }
    let norm = S::lit(total_pos.max(1) as f64);
    let mut cls_terms = Vec::new();
    let mut box_terms = Vec::new();
    for (level, out) in outputs.det.iter().enumerate() {
        let (_, _, h, w) = tape.value(out.cls).dims4()?;
        let hw = h * w;
        let base = anchors.level_offsets[level];
        let rows = n * a * hw;
        let mut targets = vec![0usize; rows];
        let mut weights = vec![S::zero(); rows];
        let mut loc_target = vec![S::zero(); rows * 4];
        let mut loc_weight = vec![S::zero(); rows * 4];
        for img in 0..n {
            let m = &matched[img];
            for ai in 0..a {
                for s in 0..hw {
                    let j = base + ai * hw + s;
                    let r = (img * a + ai) * hw + s;
                    targets[r] = m.labels[j];
                    if m.labels[j] > 0 || selected[img][j] {
                        weights[r] = S::one();
                    }
                    if m.labels[j] > 0 {
                        for q in 0..4 {
                            let idx = ((img * a + ai) * 4 + q) * hw + s;
                            loc_target[idx] = S::lit(m.offsets[j][q] as f64);
                            loc_weight[idx] = S::one();
                        }
                    }
                }
            }
        }
        cls_terms.push(tape.cross_entropy(out.cls, k1, &targets, Some(&weights), norm)?);
        box_terms.push(tape.smooth_l1(out.loc, &loc_target, &loc_weight, norm)?);
    }
    Ok((tape.sum_scalars(&cls_terms)?, tape.sum_scalars(&box_terms)?))
}
