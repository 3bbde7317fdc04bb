//! Central finite-difference oracle for the tape's analytic gradients.
//!
//! Outputs are projected to a scalar with fixed pseudo-random weights, so a
//! single backward sweep yields the full gradient being checked. Error is
//! `max |analytic − numeric| / max(1, |analytic|)` over probed coordinates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::Result;

fn projection<S: Scalar>(len: usize) -> Vec<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    (0..len).map(|_| S::lit(rng.random_range(-1.0..1.0))).collect()
}

fn project<S: Scalar>(tape: &mut Tape<S>, out: Var) -> Result<Var> {
    if tape.value(out).len() == 1 {
        return Ok(out);
    }
    let w = projection(tape.value(out).len());
    tape.weighted_sum(out, &w)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn coords(len: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Checks `f` with respect to every coordinate of every input.
///
/// Never fails: a forward error yields `f64::INFINITY`.
pub fn grad_check<S, F>(inputs: &[Tensor<S>], eps: f64, f: F) -> f64
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    grad_check_sampled(inputs, eps, None, f)
}

/// As [`grad_check`], probing at most `per_input` random coordinates of each input.
pub fn grad_check_sampled<S, F>(inputs: &[Tensor<S>], eps: f64, per_input: Option<usize>, f: F) -> f64
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    let run = |xs: &[Tensor<S>], with_grad: bool| -> Result<(f64, Vec<Vec<S>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        let loss = project(&mut tape, out)?;
        let value = tape.value(loss).data()[0].as_f64();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(loss)?;
        let g = vars
            .iter()
            .zip(xs)
            .map(|(&v, x)| {
                grads
                    .wrt(v)
                    .map(<[S]>::to_vec)
                    .unwrap_or_else(|| vec![S::zero(); x.len()])
            })
            .collect();
        Ok((value, g))
    };

    let Ok((_, analytic)) = run(inputs, true) else {
        return f64::INFINITY;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        for j in coords(x.len(), per_input, &mut rng) {
            let orig = x.data()[j];
            probe[i].data_mut()[j] = orig + S::lit(eps);
            let plus = run(&probe, false);
            probe[i].data_mut()[j] = orig - S::lit(eps);
            let minus = run(&probe, false);
            probe[i].data_mut()[j] = orig;
            let (Ok((p, _)), Ok((m, _))) = (plus, minus) else {
                return f64::INFINITY;
            };
            let numeric = (p - m) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i][j].as_f64(), numeric));
        }
    }
    worst
}

/// Checks `f` with respect to named entries of a parameter store.
pub fn grad_check_params<S, F>(
    store: &ParamStore<S>,
    names: &[&str],
    eps: f64,
    per_param: Option<usize>,
    f: F,
) -> f64
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ParamStore<S>) -> Result<Var>,
{
    let run = |st: &ParamStore<S>, with_grad: bool| -> Result<(f64, Vec<Option<Vec<S>>>)> {
        let mut tape = Tape::new();
        let out = f(&mut tape, st)?;
        let loss = project(&mut tape, out)?;
        let value = tape.value(loss).data()[0].as_f64();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(loss)?;
        let found: Vec<(String, Vec<S>)> =
            grads.params().map(|(n, g)| (n.to_string(), g.to_vec())).collect();
        Ok((
            value,
            names
                .iter()
                .map(|n| found.iter().find(|(k, _)| k == n).map(|(_, g)| g.clone()))
                .collect(),
        ))
    };
    let Ok((_, analytic)) = run(store, true) else {
        return f64::INFINITY;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for (name, a) in names.iter().zip(&analytic) {
        let Some(len) = store.get(name).map(Tensor::len) else {
            return f64::INFINITY;
        };
        for j in coords(len, per_param, &mut rng) {
            let orig = store.get(name).map(|t| t.data()[j]).unwrap_or_default();
            let set = |p: &mut ParamStore<S>, v: S| {
                if let Some(t) = p.get_mut(name) {
                    t.data_mut()[j] = v;
                }
            };
            set(&mut probe, orig + S::lit(eps));
            let plus = run(&probe, false);
            set(&mut probe, orig - S::lit(eps));
            let minus = run(&probe, false);
            set(&mut probe, orig);
            let (Ok((p, _)), Ok((m, _))) = (plus, minus) else {
                return f64::INFINITY;
            };
            let numeric = (p - m) / (2.0 * eps);
            let an = a.as_ref().map_or(0.0, |g| g[j].as_f64());
            worst = worst.max(rel_err(an, numeric));
        }
    }
    worst
}
