use std::collections::BTreeMap;

use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers of one parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
}

/// One bias-corrected Adam update of `param` in place. `t` is the 1-based step.
pub fn adam_step<S: Scalar>(
    name: &str,
    param: &mut [S],
    grad: &[S],
    state: &mut Moments<S>,
    lr: f64,
    cfg: AdamConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Training {
            param: name.to_string(),
            reason: "adam step counter must start at 1".into(),
        });
    }
    if param.len() != grad.len() {
        return Err(Error::Training {
            param: name.to_string(),
            reason: format!("{} values but {} gradients", param.len(), grad.len()),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training {
            param: name.to_string(),
            reason: format!("non-finite gradient at index {i}"),
        });
    }
    if state.m.len() != param.len() {
        state.m = vec![S::zero(); param.len()];
        state.v = vec![S::zero(); param.len()];
    }
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let c1 = S::lit(1.0 - cfg.beta1.powi(t as i32));
    let c2 = S::lit(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps) = (S::lit(lr), S::lit(cfg.eps));
    for ((p, &g), (m, v)) in param
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (S::one() - b1) * g;
        *v = b2 * *v + (S::one() - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a [`ParamStore`], keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Adam<S = f32> {
    pub cfg: AdamConfig,
    t: u64,
    state: BTreeMap<String, Moments<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step<'a, I>(&mut self, store: &mut ParamStore<S>, grads: I, lr: f64) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a [S])>,
    {
        self.t += 1;
        for (name, g) in grads {
            let param = store.get_mut(name).ok_or_else(|| Error::Training {
                param: name.to_string(),
                reason: "gradient for unknown parameter".into(),
            })?;
            let st = self.state.entry(name.to_string()).or_default();
            adam_step(name, param.data_mut(), g, st, lr, self.cfg, self.t)?;
        }
        Ok(())
    }
}
