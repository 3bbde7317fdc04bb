//! Reverse-mode differentiation over a linear record of operations.
//!
//! Each op appends one node whose inputs are already on the tape, so the
//! node order is a topological order and [`Tape::backward`] is a single
//! reverse sweep. A tape is single-threaded; individual kernels fan out
//! internally.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Upsample {
        input: Var,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: S,
    },
    /// Adds a constant (e.g. channel noise); gradient passes straight through.
    AddConst {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Reshape {
        input: Var,
    },
    Softmax {
        input: Var,
        classes: usize,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<S>,
        rows: RowLayout,
        targets: Vec<usize>,
        weights: Option<Vec<S>>,
        normalizer: S,
    },
    SmoothL1 {
        pred: Var,
        diff: Vec<S>,
        weights: Vec<S>,
        normalizer: S,
    },
    L1Mean {
        a: Var,
        b: Var,
    },
    Gdn {
        input: Var,
        beta: Var,
        gamma: Var,
        inverse: bool,
        norm: Vec<S>,
    },
    PowerNorm {
        input: Var,
        scales: Vec<S>,
        energies: Vec<S>,
    },
    WeightedSum {
        input: Var,
        weights: Vec<S>,
    },
}

/// Row decomposition of a (N, G·C, spatial…) logit tensor: every
/// (sample, group, position) triple is one C-way classification row.
#[derive(Clone, Copy, Debug)]
struct RowLayout {
    n: usize,
    groups: usize,
    classes: usize,
    spatial: usize,
}

impl RowLayout {
    fn of(shape: &[usize], classes: usize) -> Result<Self> {
        if shape.len() < 2 || classes == 0 || shape[1] % classes != 0 {
            return Err(Error::dim(format!(
                "logits of shape {shape:?} cannot be split into {classes}-way rows"
            )));
        }
        Ok(RowLayout {
            n: shape[0],
            groups: shape[1] / classes,
            classes,
            spatial: shape[2..].iter().product(),
        })
    }

    fn rows(&self) -> usize {
        self.n * self.groups * self.spatial
    }

    /// Flat offset of class `k` in row `r`.
    fn at(&self, r: usize, k: usize) -> usize {
        let s = r % self.spatial;
        let ng = r / self.spatial;
        (ng * self.classes + k) * self.spatial + s
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
    frozen: Vec<String>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    params: Vec<(String, Var)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn wrt(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every trainable parameter bound on the tape, in binding order.
    pub fn params(&self) -> impl Iterator<Item = (&str, &[S])> {
        self.params
            .iter()
            .filter_map(|(name, v)| self.wrt(*v).map(|g| (name.as_str(), g)))
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
            frozen: Vec::new(),
        }
    }

    /// Parameters whose names start with any of `prefixes` are bound as constants.
    pub fn with_frozen<I, P>(mut self, prefixes: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: Into<String>,
    {
        self.frozen.extend(prefixes.into_iter().map(Into::into));
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a named parameter from `store`; repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Load {
                name: name.to_string(),
                reason: "missing from parameter store".into(),
            })?
            .clone();
        let trainable = !self.frozen.iter().any(|p| name.starts_with(p.as_str()));
        let v = self.leaf(value, trainable);
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        Ok(v)
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            geom,
        )?;
        let rg = self.any_grad(&[input, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Bilinear resize (align-corners false) to a target no smaller than the input.
    pub fn upsample(&mut self, input: Var, th: usize, tw: usize) -> Result<Var> {
        let out = kernels::upsample_forward(self.value(input), th, tw)?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::Upsample { input }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.max(S::zero()));
        let rg = self.requires_grad(input);
        self.push(out, Op::Relu { input }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "add: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: S) -> Var {
        let out = self.value(input).map(|v| v * factor);
        let rg = self.requires_grad(input);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    pub fn add_const(&mut self, input: Var, c: &Tensor<S>) -> Result<Var> {
        let v = self.value(input);
        if v.shape() != c.shape() {
            return Err(Error::dim(format!(
                "add_const: {:?} vs {:?}",
                v.shape(),
                c.shape()
            )));
        }
        let data = v.data().iter().zip(c.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(v.shape(), data)?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::AddConst { input }, rg))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total_c = 0;
        for &v in inputs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::dim(format!(
                    "concat_channels: {:?} vs {:?}",
                    self.value(v).shape(),
                    self.value(first).shape()
                )));
            }
            total_c += vc;
        }
        let mut data = Vec::with_capacity(n * total_c * h * w);
        for i in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let per = t.len() / n;
                data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
            }
        }
        let out = Tensor::new(&[n, total_c, h, w], data)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::Reshape { input }, rg))
    }

    /// Softmax over `classes`-way rows laid out along the channel axis.
    pub fn softmax(&mut self, input: Var, classes: usize) -> Result<Var> {
        let t = self.value(input);
        let layout = RowLayout::of(t.shape(), classes)?;
        let probs = softmax_rows(t.data(), layout);
        let out = Tensor::new(t.shape(), probs)?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::Softmax { input, classes }, rg))
    }

    /// Σ_rows weight·(−log p_target) / normalizer over `classes`-way rows.
    ///
    /// Rows with zero weight contribute nothing; `weights = None` means all ones.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        classes: usize,
        targets: &[usize],
        weights: Option<&[S]>,
        normalizer: S,
    ) -> Result<Var> {
        let t = self.value(logits);
        let rows = RowLayout::of(t.shape(), classes)?;
        if targets.len() != rows.rows() {
            return Err(Error::dim(format!(
                "cross_entropy: {} targets for {} rows",
                targets.len(),
                rows.rows()
            )));
        }
        if let Some(w) = weights {
            if w.len() != rows.rows() {
                return Err(Error::dim("cross_entropy: weight count != row count"));
            }
        }
        if let Some(&bad) = targets.iter().find(|&&k| k >= classes) {
            return Err(Error::dim(format!("cross_entropy: target {bad} >= {classes}")));
        }
        let probs = softmax_rows(t.data(), rows);
        let mut loss = 0.0f64;
        for (r, &k) in targets.iter().enumerate() {
            let w = weights.map_or(S::one(), |w| w[r]);
            if w == S::zero() {
                continue;
            }
            let logp = log_softmax_at(t.data(), rows, r, k);
            loss -= (w * logp).as_f64();
        }
        let out = Tensor::scalar(S::lit(loss) / normalizer);
        let rg = self.requires_grad(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                probs,
                rows,
                targets: targets.to_vec(),
                weights: weights.map(|w| w.to_vec()),
                normalizer,
            },
            rg,
        ))
    }

    /// Σ weight·smoothL1(pred − target) / normalizer, transition point 1.
    pub fn smooth_l1(&mut self, pred: Var, target: &[S], weights: &[S], normalizer: S) -> Result<Var> {
        let p = self.value(pred);
        if target.len() != p.len() || weights.len() != p.len() {
            return Err(Error::dim(format!(
                "smooth_l1: pred {} / target {} / weights {}",
                p.len(),
                target.len(),
                weights.len()
            )));
        }
        let diff: Vec<S> = p.data().iter().zip(target).map(|(&a, &b)| a - b).collect();
        let half = S::lit(0.5);
        let loss: f64 = diff
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w != S::zero())
            .map(|(&d, &w)| {
                let a = d.abs();
                let v = if a < S::one() { half * d * d } else { a - half };
                (w * v).as_f64()
            })
            .sum();
        let out = Tensor::scalar(S::lit(loss) / normalizer);
        let rg = self.requires_grad(pred);
        Ok(self.push(
            out,
            Op::SmoothL1 {
                pred,
                diff,
                weights: weights.to_vec(),
                normalizer,
            },
            rg,
        ))
    }

    /// Mean absolute difference.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "l1: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let sum: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y).abs().as_f64())
            .sum();
        let out = Tensor::scalar(S::lit(sum / va.len() as f64));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::L1Mean { a, b }, rg))
    }

    /// Divisive normalization across channels (axis 1) at every other position:
    /// forward `x_i / sqrt(β_i + Σ_j γ_ij x_j²)`, inverse `x_i · sqrt(...)`.
    pub fn gdn(&mut self, input: Var, beta: Var, gamma: Var, inverse: bool) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("gdn needs a channel axis"));
        }
        let (n, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        let b = self.value(beta).data();
        let g = self.value(gamma).data();
        if b.len() != c || g.len() != c * c {
            return Err(Error::dim(format!(
                "gdn: {c} channels but beta has {} and gamma {} entries",
                b.len(),
                g.len()
            )));
        }
        let xd = x.data();
        let mut norm = vec![S::zero(); xd.len()];
        let mut out = vec![S::zero(); xd.len()];
        for i in 0..n {
            let base = i * c * spatial;
            for s in 0..spatial {
                for ci in 0..c {
                    let mut u = b[ci];
                    for cj in 0..c {
                        let xj = xd[base + cj * spatial + s];
                        u += g[ci * c + cj] * xj * xj;
                    }
                    let idx = base + ci * spatial + s;
                    norm[idx] = u;
                    out[idx] = if inverse {
                        xd[idx] * u.sqrt()
                    } else {
                        xd[idx] / u.sqrt()
                    };
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        let rg = self.any_grad(&[input, beta, gamma]);
        Ok(self.push(
            out,
            Op::Gdn {
                input,
                beta,
                gamma,
                inverse,
                norm,
            },
            rg,
        ))
    }

    /// Scales every sample (leading axis) to unit average power over its elements.
    pub fn power_normalize(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let n = *x.shape().first().ok_or_else(|| Error::dim("power_normalize on rank 0"))?;
        if x.is_empty() {
            return Err(Error::dim("power_normalize of an empty tensor"));
        }
        let per = x.len() / n;
        let mut scales = Vec::with_capacity(n);
        let mut energies = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(x.len());
        for chunk in x.data().chunks(per) {
            let e: f64 = chunk.iter().map(|v| v.as_f64() * v.as_f64()).sum();
            if e < 1e-12 {
                return Err(Error::Degenerate(
                    "power normalization of an all-zero feature".into(),
                ));
            }
            let s = S::lit((per as f64 / e).sqrt());
            scales.push(s);
            energies.push(S::lit(e));
            out.extend(chunk.iter().map(|&v| v * s));
        }
        let out = Tensor::new(x.shape(), out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(
            out,
            Op::PowerNorm {
                input,
                scales,
                energies,
            },
            rg,
        ))
    }

    /// Σ w_i x_i: projects any output to a scalar for gradient checks.
    pub fn weighted_sum(&mut self, input: Var, weights: &[S]) -> Result<Var> {
        let x = self.value(input);
        if weights.len() != x.len() {
            return Err(Error::dim("weighted_sum: weight count != element count"));
        }
        let s: f64 = x
            .data()
            .iter()
            .zip(weights)
            .map(|(&a, &b)| (a * b).as_f64())
            .sum();
        let out = Tensor::scalar(S::lit(s));
        let rg = self.requires_grad(input);
        Ok(self.push(
            out,
            Op::WeightedSum {
                input,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Result<Var> {
        let mut it = terms.iter();
        let mut acc = *it.next().ok_or_else(|| Error::dim("sum of zero terms"))?;
        for &t in it {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward from non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.param_order.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], v: Var, g: Vec<S>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need = [
                    self.requires_grad(*input),
                    self.requires_grad(*weight),
                    bias.is_some_and(|b| self.requires_grad(b)),
                ];
                let cg = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    g,
                    *geom,
                    need,
                )?;
                if let Some(dx) = cg.input {
                    self.accumulate(grads, *input, dx);
                }
                if let Some(dw) = cg.weight {
                    self.accumulate(grads, *weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, cg.bias) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Upsample { input } => {
                let (th, tw) = (node.value.shape()[2], node.value.shape()[3]);
                let dx = kernels::upsample_backward(self.value(*input).dims4()?, g, th, tw);
                self.accumulate(grads, *input, dx);
            }
            Op::Relu { input } => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| if y > S::zero() { gv } else { S::zero() })
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Scale { input, factor } => {
                self.accumulate(grads, *input, g.iter().map(|&v| v * *factor).collect());
            }
            Op::AddConst { input } | Op::Reshape { input } => {
                self.accumulate(grads, *input, g.to_vec());
            }
            Op::Concat { inputs } => {
                let n = node.value.shape()[0];
                let per_out = node.value.len() / n;
                let mut offset = 0;
                for &v in inputs {
                    let per = self.value(v).len() / n;
                    let mut dv = Vec::with_capacity(per * n);
                    for i in 0..n {
                        let start = i * per_out + offset;
                        dv.extend_from_slice(&g[start..start + per]);
                    }
                    offset += per;
                    self.accumulate(grads, v, dv);
                }
            }
            Op::Softmax { input, classes } => {
                let rows = RowLayout::of(node.value.shape(), *classes)?;
                let p = node.value.data();
                let mut dx = vec![S::zero(); p.len()];
                for r in 0..rows.rows() {
                    let dot: S = (0..rows.classes)
                        .map(|k| {
                            let i = rows.at(r, k);
                            p[i] * g[i]
                        })
                        .sum();
                    for k in 0..rows.classes {
                        let i = rows.at(r, k);
                        dx[i] = p[i] * (g[i] - dot);
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::CrossEntropy {
                logits,
                probs,
                rows,
                targets,
                weights,
                normalizer,
            } => {
                let up = g[0] / *normalizer;
                let mut dx = vec![S::zero(); probs.len()];
                for (r, &t) in targets.iter().enumerate() {
                    let w = weights.as_ref().map_or(S::one(), |w| w[r]);
                    if w == S::zero() {
                        continue;
                    }
                    for k in 0..rows.classes {
                        let i = rows.at(r, k);
                        let onehot = if k == t { S::one() } else { S::zero() };
                        dx[i] = up * w * (probs[i] - onehot);
                    }
                }
                self.accumulate(grads, *logits, dx);
            }
            Op::SmoothL1 {
                pred,
                diff,
                weights,
                normalizer,
            } => {
                let up = g[0] / *normalizer;
                let dx = diff
                    .iter()
                    .zip(weights)
                    .map(|(&d, &w)| {
                        let slope = if d.abs() < S::one() { d } else { d.signum() };
                        up * w * slope
                    })
                    .collect();
                self.accumulate(grads, *pred, dx);
            }
            Op::L1Mean { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let up = g[0] / S::lit(va.len() as f64);
                let da: Vec<S> = va
                    .iter()
                    .zip(vb)
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d == S::zero() {
                            S::zero()
                        } else {
                            up * d.signum()
                        }
                    })
                    .collect();
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, da.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *a, da);
            }
            Op::Gdn {
                input,
                beta,
                gamma,
                inverse,
                norm,
            } => self.backprop_gdn(g, grads, (*input, *beta, *gamma), *inverse, norm),
            Op::PowerNorm {
                input,
                scales,
                energies,
            } => {
                let x = self.value(*input).data();
                let per = x.len() / scales.len();
                let mut dx = Vec::with_capacity(x.len());
                for (i, (&s, &e)) in scales.iter().zip(energies).enumerate() {
                    let xs = &x[i * per..(i + 1) * per];
                    let gs = &g[i * per..(i + 1) * per];
                    let dot: S = xs.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                    dx.extend(xs.iter().zip(gs).map(|(&xv, &gv)| s * gv - s * xv * dot / e));
                }
                self.accumulate(grads, *input, dx);
            }
            Op::WeightedSum { input, weights } => {
                self.accumulate(grads, *input, weights.iter().map(|&w| w * g[0]).collect());
            }
        }
        Ok(())
    }

    fn backprop_gdn(
        &self,
        g: &[S],
        grads: &mut [Option<Vec<S>>],
        (input, beta, gamma): (Var, Var, Var),
        inverse: bool,
        norm: &[S],
    ) {
        let x = self.value(input);
        let shape = x.shape();
        let (n, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        let xd = x.data();
        let gm = self.value(gamma).data();
        let half = S::lit(0.5);
        let mut dx = vec![S::zero(); xd.len()];
        let mut dbeta = vec![S::zero(); c];
        let mut dgamma = vec![S::zero(); c * c];
        let mut coef = vec![S::zero(); c];
        for i in 0..n {
            let base = i * c * spatial;
            for s in 0..spatial {
                // coef_i = g_i · x_i · d(u_i^{±1/2})/du_i
                for ci in 0..c {
                    let idx = base + ci * spatial + s;
                    let u = norm[idx];
                    let r = u.sqrt();
                    let (direct, du) = if inverse {
                        (r, half / r)
                    } else {
                        (S::one() / r, -half / (u * r))
                    };
                    coef[ci] = g[idx] * xd[idx] * du;
                    dx[idx] += g[idx] * direct;
                    dbeta[ci] += coef[ci];
                }
                for ci in 0..c {
                    for cj in 0..c {
                        let xj = xd[base + cj * spatial + s];
                        dgamma[ci * c + cj] += coef[ci] * xj * xj;
                    }
                }
                for ck in 0..c {
                    let idx = base + ck * spatial + s;
                    let acc: S = (0..c).map(|ci| coef[ci] * gm[ci * c + ck]).sum();
                    dx[idx] += S::lit(2.0) * xd[idx] * acc;
                }
            }
        }
        self.accumulate(grads, input, dx);
        self.accumulate(grads, beta, dbeta);
        self.accumulate(grads, gamma, dgamma);
    }
}

fn softmax_rows<S: Scalar>(x: &[S], rows: RowLayout) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for r in 0..rows.rows() {
        let m = (0..rows.classes)
            .map(|k| x[rows.at(r, k)])
            .fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for k in 0..rows.classes {
            let i = rows.at(r, k);
            out[i] = (x[i] - m).exp();
            z += out[i];
        }
        for k in 0..rows.classes {
            out[rows.at(r, k)] /= z;
        }
    }
    out
}

fn log_softmax_at<S: Scalar>(x: &[S], rows: RowLayout, r: usize, k: usize) -> S {
    let m = (0..rows.classes)
        .map(|j| x[rows.at(r, j)])
        .fold(S::neg_infinity(), S::max);
    let lse: S = (0..rows.classes)
        .map(|j| (x[rows.at(r, j)] - m).exp())
        .sum::<S>()
        .ln()
        + m;
    x[rows.at(r, k)] - lse
}

/// Row-wise softmax of a (N, G·C, spatial…) logit buffer, outside any tape.
pub fn softmax_values<S: Scalar>(t: &Tensor<S>, classes: usize) -> Result<Tensor<S>> {
    let rows = RowLayout::of(t.shape(), classes)?;
    Tensor::new(t.shape(), softmax_rows(t.data(), rows))
}
