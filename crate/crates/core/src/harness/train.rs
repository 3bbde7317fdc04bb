//! Three-step training: (1) the multi-task network alone, (2) the codec with
//! the network frozen on L1 + L_MTL, (3) everything end to end on L_MTL.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Schedule};
use super::dataset::Dataset;
use crate::channel::{derive_seed, SnrSpec};
use crate::codec::{feature_l1, JsccCodec};
use crate::error::{Error, Result};
use crate::layers::clamp_all_gdn;
use crate::mtl::{mtl_loss, AnchorSet, MtlNet, BACKBONE_PREFIX, DETECT_PREFIX, PARSE_PREFIX, SEGMENT_PREFIX};
use crate::tensor::{load_checkpoint, load_into, save_checkpoint, Adam, AdamConfig, ParamStore, Tape, Var};

pub const MTL_PREFIXES: [&str; 4] = [BACKBONE_PREFIX, PARSE_PREFIX, DETECT_PREFIX, SEGMENT_PREFIX];

/// Network, codec and anchors built from one experiment configuration.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: MtlNet,
    pub codec: JsccCodec,
    pub anchors: AnchorSet,
}

impl Model {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Model {
            net: MtlNet::new(cfg.model.clone())?,
            codec: JsccCodec::new(cfg.codec()?)?,
            anchors: AnchorSet::for_config(&cfg.model)?,
        })
    }

    pub fn init_net(&self, store: &mut ParamStore<f32>, seed: u64) {
        self.net.init(store, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)));
    }

    pub fn init_codec(&self, store: &mut ParamStore<f32>, seed: u64) {
        self.codec.init(store, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 2)));
    }

    /// Loads a checkpoint, checking every tensor the model needs (network,
    /// plus the codec when `with_codec`) against the model's own layout.
    pub fn load(&self, path: &Path, with_codec: bool) -> Result<ParamStore<f32>> {
        let loaded = load_checkpoint(path)?;
        let mut template = ParamStore::new();
        self.init_net(&mut template, 0);
        if with_codec {
            self.init_codec(&mut template, 0);
        }
        load_into(&mut template, &loaded)?;
        Ok(template)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Step {
    pub const ALL: [Step; 3] = [Step::One, Step::Two, Step::Three];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn checkpoint_name(self) -> String {
        format!("step{}.ckpt", self.number())
    }
}

/// Per-iteration total loss of one step (and the L1 term in step 2).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLog {
    pub losses: Vec<f64>,
    pub feature_l1: Vec<f64>,
}

impl StepLog {
    /// Mean loss over the first / last `window` iterations.
    pub fn head_tail(&self, window: usize) -> (f64, f64) {
        let w = window.clamp(1, self.losses.len().max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..w.min(self.losses.len())]), mean(&self.losses[self.losses.len().saturating_sub(w)..]))
    }
}

/// Shuffled mini-batches over `indices`, reshuffled each epoch.
struct Batcher {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
    batch: usize,
}

impl Batcher {
    fn new(indices: &[usize], batch: usize, seed: u64) -> Self {
        Batcher {
            pool: indices.to_vec(),
            order: Vec::new(),
            pos: 0,
            epoch: 0,
            seed,
            batch: batch.min(indices.len()).max(1),
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order = self.pool.clone();
            self.order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, self.epoch)));
            self.epoch += 1;
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

fn diverged(step: Step, iteration: usize, reason: impl Into<String>) -> Error {
    Error::Diverged {
        step: step.number(),
        iteration,
        reason: reason.into(),
    }
}

/// Runs one training step in place on `store` over the given image indices.
pub fn train_step(
    model: &Model,
    cfg: &ExperimentConfig,
    data: &Dataset,
    indices: &[usize],
    store: &mut ParamStore<f32>,
    step: Step,
    schedule: &Schedule,
) -> Result<StepLog> {
    if indices.is_empty() {
        return Err(Error::config("no training images"));
    }
    let step_seed = derive_seed(cfg.seed, 100 + step.number() as u64);
    let mut batcher = Batcher::new(indices, cfg.batch_size, step_seed);
    let mut adam = Adam::new(AdamConfig::default());
    let snr = SnrSpec::from_option(cfg.snr_train);
    let mut log = StepLog::default();
    for it in 0..schedule.iterations {
        let idx = batcher.next();
        let images = data.batch(&idx)?;
        let truths = data.truths_for(&idx);
        let noise_seed = derive_seed(step_seed, it as u64);
        let mut tape = match step {
            Step::Two => Tape::new().with_frozen(MTL_PREFIXES),
            _ => Tape::new(),
        };
        let (loss, l1): (Var, Option<Var>) = match step {
            Step::One => {
                let x = tape.constant(images);
                let out = model.net.forward(&mut tape, store, x)?;
                (mtl_loss(&mut tape, &cfg.model, &model.anchors, &out, &truths, cfg.tasks)?.total, None)
            }
            Step::Two => {
                let d1 = tape.constant(model.net.features(store, &images)?);
                let (_, rec) = model.codec.transmit(&mut tape, store, d1, &snr, noise_seed, 0)?;
                let l1 = feature_l1(&mut tape, d1, rec)?;
                let out = model.net.heads(&mut tape, store, rec)?;
                let task = mtl_loss(&mut tape, &cfg.model, &model.anchors, &out, &truths, cfg.tasks)?.total;
                (tape.add(l1, task)?, Some(l1))
            }
            Step::Three => {
                let x = tape.constant(images);
                let d1 = model.net.extract_features(&mut tape, store, x)?;
                let (_, rec) = model.codec.transmit(&mut tape, store, d1, &snr, noise_seed, 0)?;
                let out = model.net.heads(&mut tape, store, rec)?;
                (mtl_loss(&mut tape, &cfg.model, &model.anchors, &out, &truths, cfg.tasks)?.total, None)
            }
        };
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(diverged(step, it, format!("loss is {value}")));
        }
        log.losses.push(value);
        if let Some(l1) = l1 {
            log.feature_l1.push(tape.value(l1).data()[0] as f64);
        }
        let grads = tape.backward(loss)?;
        adam.step(store, grads.params(), schedule.lr_at(it)).map_err(|e| diverged(step, it, e.to_string()))?;
        clamp_all_gdn(store);
    }
    Ok(log)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub store: ParamStore<f32>,
    pub logs: Vec<(Step, StepLog)>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs the selected steps in order. A run starting after step 1 resumes
/// from `initial` (typically the previous step's checkpoint); the codec is
/// initialized at step 2 unless already present. Checkpoints go to
/// `out_dir/step{n}.ckpt` when a directory is given.
pub fn train_three_step(
    cfg: &ExperimentConfig,
    data: &Dataset,
    steps: &[Step],
    initial: Option<ParamStore<f32>>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.image_size != cfg.model.image_size || data.num_classes != cfg.model.num_classes {
        return Err(Error::config("dataset does not match the model configuration"));
    }
    let model = Model::new(cfg)?;
    let mut store = initial.unwrap_or_default();
    let train: Vec<usize> = data.train_indices().collect();
    let mut logs = Vec::new();
    let mut checkpoints = Vec::new();
    for &step in steps {
        match step {
            Step::One if store.is_empty() => model.init_net(&mut store, cfg.seed),
            Step::Two | Step::Three if store.numel_with_prefix(BACKBONE_PREFIX) == 0 => {
                return Err(Error::config(format!(
                    "step {} needs trained network parameters",
                    step.number()
                )));
            }
            Step::Two if store.numel_with_prefix(crate::codec::ENCODER_PREFIX) == 0 => {
                model.init_codec(&mut store, cfg.seed)
            }
            _ => {}
        }
        let schedule = &cfg.steps[step.number() as usize - 1];
        let log = train_step(&model, cfg, data, &train, &mut store, step, schedule)?;
        logs.push((step, log));
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(step.checkpoint_name());
            save_checkpoint(&store, &path)?;
            checkpoints.push(path);
        }
    }
    Ok(TrainOutcome {
        store,
        logs,
        checkpoints,
    })
}
