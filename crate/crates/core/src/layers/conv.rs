use rand::Rng;

use crate::error::Result;
use crate::tensor::{ConvGeom, ParamStore, Scalar, Tape, Tensor, Var};

/// 2-D convolution with parameters `{name}.weight` (out, in, k, k) and `{name}.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, geom: ConvGeom) -> Self {
        Conv2d {
            name: name.into(),
            in_ch,
            out_ch,
            kernel,
            geom,
        }
    }

    /// Padded "same"-style 3×3 (or k×k) convolution at the given stride and dilation.
    pub fn same(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        let pad = dilation * (kernel - 1) / 2;
        Self::new(name, in_ch, out_ch, kernel, ConvGeom::new(stride, pad, dilation))
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// He-normal weights, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore<f32>, rng: &mut R) {
        let fan_in = self.in_ch * self.kernel * self.kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        store.insert(
            self.weight_name(),
            Tensor::randn(&[self.out_ch, self.in_ch, self.kernel, self.kernel], std, rng),
        );
        store.insert(self.bias_name(), Tensor::zeros(&[self.out_ch]));
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        tape.conv2d(x, w, Some(b), self.geom)
    }
}
