//! Generalized divisive normalization and its one-step inverse.
//!
//! GDN:  y_i = x_i / sqrt(β_i + Σ_j γ_ij x_j²)
//! IGDN: x_i = y_i · sqrt(β_i + Σ_j γ_ij y_j²)
//!
//! IGDN carries its own parameters and is only an approximate inverse.

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tape, Tensor, Var};

/// Lower bound enforced on every β_i after an optimizer step.
pub const BETA_MIN: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GdnParams {
    pub beta: Vec<f32>,
    /// Row-major channel × channel matrix.
    pub gamma: Vec<f32>,
}

impl GdnParams {
    pub fn channels(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.beta.len();
        if self.gamma.len() != c * c {
            return Err(Error::dim(format!(
                "gamma has {} entries for {c} channels",
                self.gamma.len()
            )));
        }
        if let Some(b) = self.beta.iter().find(|&&b| b < BETA_MIN || !b.is_finite()) {
            return Err(Error::config(format!("beta {b} below minimum {BETA_MIN}")));
        }
        if let Some(g) = self.gamma.iter().find(|&&g| g < 0.0 || !g.is_finite()) {
            return Err(Error::config(format!("negative gamma {g}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gdn {
    pub name: String,
    pub channels: usize,
    pub inverse: bool,
}

impl Gdn {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Gdn {
            name: name.into(),
            channels,
            inverse: false,
        }
    }

    pub fn inverse(name: impl Into<String>, channels: usize) -> Self {
        Gdn {
            inverse: true,
            ..Self::new(name, channels)
        }
    }

    pub fn beta_name(&self) -> String {
        format!("{}.beta", self.name)
    }

    pub fn gamma_name(&self) -> String {
        format!("{}.gamma", self.name)
    }

    /// β = 1, γ = 0.1·I.
    pub fn init(&self, store: &mut ParamStore<f32>) {
        let c = self.channels;
        store.insert(self.beta_name(), Tensor::full(&[c], 1.0));
        store.insert(
            self.gamma_name(),
            Tensor::from_fn(&[c, c], |i| if i / c == i % c { 0.1 } else { 0.0 }),
        );
    }

    pub fn set_params(&self, store: &mut ParamStore<f32>, p: &GdnParams) -> Result<()> {
        p.validate()?;
        if p.channels() != self.channels {
            return Err(Error::dim(format!(
                "{}: {} channels, params for {}",
                self.name,
                self.channels,
                p.channels()
            )));
        }
        let c = self.channels;
        store.insert(self.beta_name(), Tensor::new(&[c], p.beta.clone())?);
        store.insert(self.gamma_name(), Tensor::new(&[c, c], p.gamma.clone())?);
        Ok(())
    }

    pub fn params(&self, store: &ParamStore<f32>) -> Result<GdnParams> {
        Ok(GdnParams {
            beta: store.require(&self.beta_name())?.data().to_vec(),
            gamma: store.require(&self.gamma_name())?.data().to_vec(),
        })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let beta = tape.param(store, &self.beta_name())?;
        let gamma = tape.param(store, &self.gamma_name())?;
        if let Some(b) = tape.value(beta).data().iter().find(|&&b| b < S::lit(BETA_MIN as f64)) {
            return Err(Error::config(format!(
                "{}: beta {b} violates the lower bound {BETA_MIN}",
                self.name
            )));
        }
        tape.gdn(x, beta, gamma, self.inverse)
    }

    /// Restores β ≥ β_min and γ ≥ 0 after a parameter update.
    pub fn clamp(&self, store: &mut ParamStore<f32>) {
        if let Some(b) = store.get_mut(&self.beta_name()) {
            b.data_mut().iter_mut().for_each(|v| *v = v.max(BETA_MIN));
        }
        if let Some(g) = store.get_mut(&self.gamma_name()) {
            g.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
}

/// Clamps every GDN/IGDN parameter in `store` (names ending in `.beta` / `.gamma`).
pub fn clamp_all_gdn(store: &mut ParamStore<f32>) {
    for (name, t) in store.iter_mut() {
        if name.ends_with(".beta") {
            t.data_mut().iter_mut().for_each(|v| *v = v.max(BETA_MIN));
        } else if name.ends_with(".gamma") {
            t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
}
