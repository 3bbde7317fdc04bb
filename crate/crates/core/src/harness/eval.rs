use super::dataset::Dataset;
use super::metrics::{mean_ap, ConfusionMatrix};
use super::train::Model;
use crate::baseline::{separate_pipeline, SeparateConfig};
use crate::channel::SnrSpec;
use crate::codec::feature_l1;
use crate::error::Result;
use crate::mtl::Prediction;
use crate::tensor::{ParamStore, Tape, Tensor};

const EVAL_BATCH: usize = 32;

/// How the split-point feature reaches the edge-side heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arm {
    /// No channel: heads see D₁ itself.
    Direct,
    Jscc,
    Separate(SeparateConfig),
}

impl Arm {
    pub fn label(&self) -> String {
        match self {
            Arm::Direct => "direct".into(),
            Arm::Jscc => "jscc".into(),
            Arm::Separate(c) => c.label(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalMetrics {
    pub map: f64,
    pub miou: f64,
    /// Mean |D₁ − D₁′| over the evaluated images (0 for the direct arm).
    pub feature_l1: f64,
    /// Fraction of separate-arm frames that decoded.
    pub decode_success: Option<f64>,
    /// Feature elements per real channel use (0 for the direct arm).
    pub equivalent_ratio: f64,
}

/// Evaluates `indices` of `data`; example `i` of the set draws channel
/// noise from `derive_seed(seed, i)`, independent of batching.
pub fn evaluate(
    model: &Model,
    store: &ParamStore<f32>,
    data: &Dataset,
    indices: &[usize],
    arm: Arm,
    snr: &SnrSpec,
    seed: u64,
) -> Result<EvalMetrics> {
    let k1 = model.net.cfg.num_classes + 1;
    let mut dets = Vec::with_capacity(indices.len());
    let mut cm = ConfusionMatrix::new(k1);
    let mut l1_sum = 0.0;
    let mut frames = 0usize;
    let mut decoded = 0usize;
    let mut ratio = 0.0;
    for (b, chunk) in indices.chunks(EVAL_BATCH).enumerate() {
        let first = (b * EVAL_BATCH) as u64;
        let images = data.batch(chunk)?;
        let d1 = model.net.features(store, &images)?;
        let rec: Tensor<f32> = match arm {
            Arm::Direct => d1.clone(),
            Arm::Jscc => {
                let mut tape = Tape::new();
                let x = tape.constant(d1.clone());
                let (_, r) = model.codec.transmit(&mut tape, store, x, snr, seed, first)?;
                ratio = model.codec.cfg.compression_ratio() as f64;
                tape.value(r).clone()
            }
            Arm::Separate(c) => {
                let (r, stats) = separate_pipeline(&d1, &c, snr, seed, first)?;
                frames += stats.len();
                decoded += stats.iter().filter(|s| s.success).count();
                let uses: usize = stats.iter().map(|s| s.channel_uses).sum();
                let elems: usize = stats.iter().map(|s| s.feature_elements).sum();
                ratio += elems as f64 / uses as f64 * stats.len() as f64;
                r
            }
        };
        if arm != Arm::Direct {
            let mut tape = Tape::new();
            let (a, r) = (tape.constant(d1.clone()), tape.constant(rec.clone()));
            let l = feature_l1(&mut tape, a, r)?;
            l1_sum += tape.value(l).data()[0] as f64 * chunk.len() as f64;
        }
        let preds: Vec<Prediction> = model.net.predict_from_features(store, &model.anchors, &rec)?;
        for (p, &i) in preds.into_iter().zip(chunk) {
            cm.add(&p.mask.classes, &data.truths[i].mask)?;
            dets.push(p.detections);
        }
    }
    let truths = data.truths_for(indices);
    let decode_success = matches!(arm, Arm::Separate(_)).then(|| decoded as f64 / frames.max(1) as f64);
    if matches!(arm, Arm::Separate(_)) {
        ratio /= indices.len().max(1) as f64;
    }
    Ok(EvalMetrics {
        map: mean_ap(&dets, &truths, model.net.cfg.num_classes, 0.5)?,
        miou: cm.mean_iou(),
        feature_l1: l1_sum / indices.len().max(1) as f64,
        decode_success,
        equivalent_ratio: ratio,
    })
}
