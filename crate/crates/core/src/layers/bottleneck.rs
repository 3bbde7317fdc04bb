//! Residual 1×1 → 3×3 → 1×1 blocks, plain and dilated.
//!
//! A plain block downsamples in its 3×3 convolution. A dilated block keeps
//! the dilated 3×3 at stride 1 and downsamples in the 1×1 reduction, so a
//! dilated convolution is never strided.

use rand::Rng;

use super::Conv2d;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BottleneckConfig {
    pub in_ch: usize,
    pub mid_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub dilation: usize,
    pub has_projection_shortcut: bool,
}

impl BottleneckConfig {
    /// Width convention mid = out / 4; projection whenever shapes change.
    pub fn new(in_ch: usize, out_ch: usize, stride: usize, dilation: usize) -> Self {
        BottleneckConfig {
            in_ch,
            mid_ch: (out_ch / 4).max(1),
            out_ch,
            stride,
            dilation,
            has_projection_shortcut: stride != 1 || in_ch != out_ch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 || self.mid_ch == 0 {
            return Err(Error::config(format!("invalid bottleneck {self:?}")));
        }
        if !self.has_projection_shortcut && (self.stride != 1 || self.in_ch != self.out_ch) {
            return Err(Error::config(format!(
                "identity shortcut needs matching shapes: {self:?}"
            )));
        }
        Ok(())
    }

    /// (stride of the 1×1 reduction, stride of the 3×3).
    fn strides(&self) -> (usize, usize) {
        if self.dilation > 1 {
            (self.stride, 1)
        } else {
            (1, self.stride)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck {
    pub cfg: BottleneckConfig,
    reduce: Conv2d,
    spatial: Conv2d,
    expand: Conv2d,
    shortcut: Option<Conv2d>,
}

impl Bottleneck {
    pub fn new(name: &str, cfg: BottleneckConfig) -> Result<Self> {
        cfg.validate()?;
        let (s_reduce, s_spatial) = cfg.strides();
        Ok(Bottleneck {
            cfg,
            reduce: Conv2d::same(format!("{name}.reduce"), cfg.in_ch, cfg.mid_ch, 1, s_reduce, 1),
            spatial: Conv2d::same(
                format!("{name}.conv3"),
                cfg.mid_ch,
                cfg.mid_ch,
                3,
                s_spatial,
                cfg.dilation,
            ),
            expand: Conv2d::same(format!("{name}.expand"), cfg.mid_ch, cfg.out_ch, 1, 1, 1),
            shortcut: cfg.has_projection_shortcut.then(|| {
                Conv2d::same(format!("{name}.shortcut"), cfg.in_ch, cfg.out_ch, 1, cfg.stride, 1)
            }),
        })
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        [&self.reduce, &self.spatial, &self.expand]
            .into_iter()
            .chain(self.shortcut.as_ref())
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore<f32>, rng: &mut R) {
        for c in self.convs() {
            c.init(store, rng);
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let h = self.reduce.forward(tape, store, x)?;
        let h = tape.relu(h);
        let h = self.spatial.forward(tape, store, h)?;
        let h = tape.relu(h);
        let h = self.expand.forward(tape, store, h)?;
        let skip = match &self.shortcut {
            Some(p) => p.forward(tape, store, x)?,
            None => x,
        };
        if tape.value(h).shape() != tape.value(skip).shape() {
            return Err(Error::config(format!(
                "bottleneck residual shapes differ: {:?} vs {:?}",
                tape.value(h).shape(),
                tape.value(skip).shape()
            )));
        }
        let sum = tape.add(h, skip)?;
        Ok(tape.relu(sum))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    fn zeroed(b: &Bottleneck) -> ParamStore<f32> {
        let mut store = ParamStore::new();
        b.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        for (_, t) in store.iter_mut() {
            t.data_mut().fill(0.0);
        }
        store
    }

    #[test]
    fn zero_weights_identity_shortcut_is_relu() {
        let b = Bottleneck::new("b", BottleneckConfig::new(8, 8, 1, 1)).unwrap();
        assert!(!b.cfg.has_projection_shortcut);
        let store = zeroed(&b);
        let x = Tensor::randn(&[2, 8, 5, 5], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = b.forward(&mut tape, &store, xv).unwrap();
        assert_eq!(tape.value(y), &x.map(|v| v.max(0.0)));
    }

    #[test]
    fn shape_arithmetic() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for (stride, dilation, expect) in [(2, 1, 4), (1, 2, 8), (2, 2, 4)] {
            let b = Bottleneck::new("b", BottleneckConfig::new(8, 8, stride, dilation)).unwrap();
            let mut store = ParamStore::new();
            b.init(&mut store, &mut r);
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::randn(&[1, 8, 8, 8], 1.0, &mut r));
            let y = b.forward(&mut tape, &store, x).unwrap();
            assert_eq!(tape.value(y).shape(), &[1, 8, expect, expect]);
        }
    }

    #[test]
    fn identity_shortcut_with_stride_is_rejected() {
        let mut cfg = BottleneckConfig::new(8, 8, 2, 1);
        cfg.has_projection_shortcut = false;
        assert!(Bottleneck::new("b", cfg).is_err());
    }

    /// Width of the input region with nonzero gradient from one output pixel.
    fn footprint(dilation: usize) -> usize {
        let b = Bottleneck::new("b", BottleneckConfig::new(4, 4, 1, dilation)).unwrap();
        let mut store = ParamStore::<f64>::new();
        let mut s32 = ParamStore::new();
        b.init(&mut s32, &mut ChaCha8Rng::seed_from_u64(3));
        for (n, t) in s32.iter() {
            // Strictly positive weights so no cancellation hides support.
            store.insert(n, t.cast::<f64>().map(|v| v.abs() + 0.1));
        }
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 4, 15, 15], 1.0), true);
        let y = b.forward(&mut tape, &store, x).unwrap();
        let mut w = vec![0.0; tape.value(y).len()];
        w[7 * 15 + 7] = 1.0;
        let l = tape.weighted_sum(y, &w).unwrap();
        let g = tape.backward(l).unwrap();
        let cols: Vec<usize> = g.wrt(x).unwrap()[..225]
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i % 15)
            .collect();
        cols.iter().max().unwrap() - cols.iter().min().unwrap() + 1
    }

    #[test]
    fn dilation_widens_gradient_support() {
        assert!(footprint(2) > footprint(1));
        assert_eq!(footprint(1), 3);
        assert_eq!(footprint(2), 5);
    }
}
