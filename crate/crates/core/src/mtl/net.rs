//! Backbone with multi-stage fusion, pyramid parser and the two task heads.

use rand::Rng;

use super::MtlConfig;
use crate::error::{Error, Result};
use crate::layers::{Bottleneck, BottleneckConfig, Conv2d};
use crate::tensor::{ParamStore, Scalar, Tape, Tensor, Var};

pub const BACKBONE_PREFIX: &str = "backbone.";
pub const PARSE_PREFIX: &str = "parse.";
pub const DETECT_PREFIX: &str = "det.";
pub const SEGMENT_PREFIX: &str = "seg.";

/// Raw per-level detection outputs: class logits (N, A·(K+1), h, w) and
/// box offsets (N, A·4, h, w); anchor `a` owns channels a·(K+1).. and a·4...
#[derive(Clone, Copy, Debug)]
pub struct LevelOutput {
    pub cls: Var,
    pub loc: Var,
}

#[derive(Clone, Debug)]
pub struct HeadOutputs {
    pub det: Vec<LevelOutput>,
    /// (N, K+1, H_img, W_img).
    pub seg: Var,
}

/// Which heads run (and are trained). Single-task ablations drop one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskSet {
    pub detection: bool,
    pub segmentation: bool,
}

impl TaskSet {
    pub const BOTH: TaskSet = TaskSet {
        detection: true,
        segmentation: true,
    };
    pub const DETECTION: TaskSet = TaskSet {
        detection: true,
        segmentation: false,
    };
    pub const SEGMENTATION: TaskSet = TaskSet {
        detection: false,
        segmentation: true,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct MtlNet {
    pub cfg: MtlConfig,
    stem: Conv2d,
    stages: Vec<Conv2d>,
    laterals: Vec<Conv2d>,
    fuse: Conv2d,
    parsers: Vec<Bottleneck>,
    cls: Vec<Conv2d>,
    loc: Vec<Conv2d>,
    seg_laterals: Vec<Conv2d>,
    seg_out: Conv2d,
}

impl MtlNet {
    pub fn new(cfg: MtlConfig) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg)
    }

    /// Skips the multiple-of-32 input check; stages that reach 1×1 stay 1×1.
    pub(crate) fn build(cfg: MtlConfig) -> Result<Self> {
        let w = cfg.backbone_widths;
        let cf = cfg.fused_channels;
        let a = cfg.anchors_per_cell();
        let k1 = cfg.num_classes + 1;
        let stem = Conv2d::same("backbone.stem", 3, w[0], 3, 2, 1);
        let stages = (0..4)
            .map(|i| Conv2d::same(format!("backbone.stage{}", i + 1), w[i], w[i + 1], 3, 2, 1))
            .collect();
        let laterals = (0..4)
            .map(|i| Conv2d::same(format!("backbone.lateral{}", i + 1), w[i + 1], cf, 1, 1, 1))
            .collect();
        let fuse = Conv2d::same("backbone.fuse", cf, cf, 3, 1, 1);
        let parsers = (2..=cfg.pyramid_depth)
            .map(|level| {
                let dilation = if level <= 3 { 2 } else { 1 };
                Bottleneck::new(&format!("parse.level{level}"), BottleneckConfig::new(cf, cf, 2, dilation))
            })
            .collect::<Result<_>>()?;
        let levels = 1..=cfg.pyramid_depth;
        let cls = levels.clone().map(|l| Conv2d::same(format!("det.cls{l}"), cf, a * k1, 3, 1, 1)).collect();
        let loc = levels.clone().map(|l| Conv2d::same(format!("det.loc{l}"), cf, a * 4, 3, 1, 1)).collect();
        let seg_laterals = levels
            .map(|l| Conv2d::same(format!("seg.lateral{l}"), cf, cfg.seg_channels, 1, 1, 1))
            .collect();
        let seg_out = Conv2d::same("seg.out", cfg.seg_channels * cfg.pyramid_depth, k1, 3, 1, 1);
        Ok(MtlNet {
            cfg,
            stem,
            stages,
            laterals,
            fuse,
            parsers,
            cls,
            loc,
            seg_laterals,
            seg_out,
        })
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        std::iter::once(&self.stem)
            .chain(&self.stages)
            .chain(&self.laterals)
            .chain(std::iter::once(&self.fuse))
            .chain(self.parsers.iter().flat_map(|p| p.convs()))
            .chain(&self.cls)
            .chain(&self.loc)
            .chain(&self.seg_laterals)
            .chain(std::iter::once(&self.seg_out))
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore<f32>, rng: &mut R) {
        for c in self.convs() {
            c.init(store, rng);
        }
        // Start the detector biased towards background so early losses stay bounded.
        let k1 = self.cfg.num_classes + 1;
        for c in &self.cls {
            if let Some(b) = store.get_mut(&c.bias_name()) {
                for (i, v) in b.data_mut().iter_mut().enumerate() {
                    *v = if i % k1 == 0 { 2.0 } else { 0.0 };
                }
            }
        }
    }

    fn check_image<S: Scalar>(&self, t: &Tensor<S>) -> Result<()> {
        let (_, c, h, w) = t.dims4()?;
        if c != 3 || h != self.cfg.image_size || w != self.cfg.image_size {
            return Err(Error::config(format!(
                "network expects (N, 3, {s}, {s}) images, got {:?}",
                t.shape(),
                s = self.cfg.image_size
            )));
        }
        Ok(())
    }

    /// Image batch (N, 3, H, W) → split-point feature D₁ (N, C_f, S, S).
    pub fn extract_features<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, image: Var) -> Result<Var> {
        self.check_image(tape.value(image))?;
        let s = self.cfg.split_size();
        let h = self.stem.forward(tape, store, image)?;
        let mut h = tape.relu(h);
        let mut fused: Option<Var> = None;
        for (stage, lateral) in self.stages.iter().zip(&self.laterals) {
            let y = stage.forward(tape, store, h)?;
            h = tape.relu(y);
            let mut l = lateral.forward(tape, store, h)?;
            let (_, _, lh, lw) = tape.value(l).dims4()?;
            if (lh, lw) != (s, s) {
                l = tape.upsample(l, s, s)?;
            }
            fused = Some(match fused {
                Some(f) => tape.add(f, l)?,
                None => l,
            });
        }
        let f0 = fused.expect("four stages");
        let d1 = self.fuse.forward(tape, store, f0)?;
        Ok(tape.relu(d1))
    }

    /// D₁ → [D₁, D₂, …, D_depth], each level half the extent of the previous.
    pub fn parse_features<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, d1: Var) -> Result<Vec<Var>> {
        let (_, c, h, w) = tape.value(d1).dims4()?;
        let s = self.cfg.split_size();
        if c != self.cfg.fused_channels || h != s || w != s {
            return Err(Error::config(format!(
                "parser expects ({}, {s}, {s}) features, got {:?}",
                self.cfg.fused_channels,
                tape.value(d1).shape()
            )));
        }
        let mut levels = vec![d1];
        for p in &self.parsers {
            let prev = *levels.last().expect("non-empty");
            levels.push(p.forward(tape, store, prev)?);
        }
        Ok(levels)
    }

    pub fn detect_outputs<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        pyramid: &[Var],
    ) -> Result<Vec<LevelOutput>> {
        self.check_pyramid(pyramid)?;
        pyramid
            .iter()
            .zip(self.cls.iter().zip(&self.loc))
            .map(|(&x, (c, l))| {
                Ok(LevelOutput {
                    cls: c.forward(tape, store, x)?,
                    loc: l.forward(tape, store, x)?,
                })
            })
            .collect()
    }

    /// Segmentation logits (N, K+1, H_img, W_img).
    pub fn segment_logits<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, pyramid: &[Var]) -> Result<Var> {
        self.check_pyramid(pyramid)?;
        let s = self.cfg.split_size();
        let mut parts = Vec::with_capacity(pyramid.len());
        for (&x, lat) in pyramid.iter().zip(&self.seg_laterals) {
            let mut y = lat.forward(tape, store, x)?;
            let (_, _, h, w) = tape.value(y).dims4()?;
            if (h, w) != (s, s) {
                y = tape.upsample(y, s, s)?;
            }
            parts.push(y);
        }
        let cat = tape.concat_channels(&parts)?;
        let logits = self.seg_out.forward(tape, store, cat)?;
        let img = self.cfg.image_size;
        tape.upsample(logits, img, img)
    }

    /// Both heads on top of a (possibly reconstructed) D₁.
    pub fn heads<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, d1: Var) -> Result<HeadOutputs> {
        let pyramid = self.parse_features(tape, store, d1)?;
        let det = self.detect_outputs(tape, store, &pyramid)?;
        let seg = self.segment_logits(tape, store, &pyramid)?;
        Ok(HeadOutputs { det, seg })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, image: Var) -> Result<HeadOutputs> {
        let d1 = self.extract_features(tape, store, image)?;
        self.heads(tape, store, d1)
    }

    fn check_pyramid(&self, pyramid: &[Var]) -> Result<()> {
        if pyramid.len() != self.cfg.pyramid_depth {
            return Err(Error::config(format!(
                "pyramid has {} levels, expected {}",
                pyramid.len(),
                self.cfg.pyramid_depth
            )));
        }
        Ok(())
    }

    /// Inference-only D₁ for a batch of images.
    pub fn features(&self, store: &ParamStore<f32>, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let d1 = self.extract_features(&mut tape, store, x)?;
        Ok(tape.value(d1).clone())
    }
}
