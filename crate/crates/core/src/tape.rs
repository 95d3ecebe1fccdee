//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Nodes only reference earlier nodes, so the
//! tape is topologically ordered by construction and [`Tape::backward`] is a
//! single reverse sweep.

use crate::error::{Error, Result};
use crate::ops::conv::{self, ConvGeom, Padding};
use crate::ops::{activation, linear, norm, pool};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics used to normalize in [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    /// Normalize with the statistics of the current batch (training).
    Batch,
    /// Normalize with externally tracked statistics (inference).
    Running { mean: &'a [T], var: &'a [T] },
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    MaxPool2d { input: Var, argmax: Vec<u32> },
    Upsample2x { input: Var },
    Elu { input: Var, alpha: T },
    Sigmoid { input: Var },
    Affine { input: Var, weight: Var, bias: Var },
    Reshape { input: Var },
    GlobalAvgPool { input: Var },
    BatchNorm { input: Var, gamma: Var, beta: Var, saved: norm::BatchNormSaved<T>, batch_stats: bool },
    Add { lhs: Var, rhs: Var },
    Mul { lhs: Var, rhs: Var },
    Scale { input: Var, factor: T },
    Sum { input: Var },
    Mean { input: Var },
    WeightedMse { lhs: Var, rhs: Var, weights: Option<Vec<T>> },
    NegLogMean { input: Var, complement: bool, floor: T },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Upsample2x { .. } => "upsample2x",
            Op::Elu { .. } => "elu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Affine { .. } => "affine",
            Op::Reshape { .. } => "reshape",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::WeightedMse { .. } => "weighted_mse",
            Op::NegLogMean { complement: false, .. } => "neg_log",
            Op::NegLogMean { complement: true, .. } => "neg_log_complement",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// True when a parameter leaf is reachable from this node's inputs.
    needs_grad: bool,
}

/// Append-only record of a forward computation.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Record a leaf whose gradient is collected by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of a parameter leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} (node {}, element {i} = {})",
                op.name(),
                self.nodes.len(),
                data[i]
            )));
        }
        let value = Tensor::new(shape, data)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_padded(input, weight, bias, stride, Padding::uniform(padding))
    }

    pub fn conv2d_padded(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: Padding,
    ) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let geom = ConvGeom::new(x.shape(), w.shape(), b.shape(), stride, pad)?;
        let out = conv::forward(&geom, x.data(), w.data(), b.data());
        self.push(geom.out_shape().to_vec(), out, Op::Conv2d { input, weight, bias, geom }, &[input, weight, bias])
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (shape, out, argmax) = pool::maxpool2x2_forward(x.shape(), x.data())?;
        self.push(shape, out, Op::MaxPool2d { input, argmax }, &[input])
    }

    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (shape, out) = pool::upsample2x_forward(x.shape(), x.data())?;
        self.push(shape, out, Op::Upsample2x { input }, &[input])
    }

    pub fn elu(&mut self, input: Var, alpha: f64) -> Result<Var> {
        let alpha = T::of(alpha);
        let x = self.value(input);
        let out = x.data().iter().map(|&v| activation::elu(v, alpha)).collect();
        self.push(x.shape().to_vec(), out, Op::Elu { input, alpha }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| activation::sigmoid(v)).collect();
        self.push(x.shape().to_vec(), out, Op::Sigmoid { input }, &[input])
    }

    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let dims = linear::affine_dims(x.shape(), w.shape(), b.shape())?;
        let out = linear::affine_forward(dims, x.data(), w.data(), b.data());
        self.push(vec![dims.0, dims.2], out, Op::Affine { input, weight, bias }, &[input, weight, bias])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(input);
        if shape.iter().product::<usize>() != x.numel() {
            return Err(Error::dim(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", x.shape()),
            ));
        }
        let data = x.data().to_vec();
        self.push(shape.to_vec(), data, Op::Reshape { input }, &[input])
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (shape, out) = pool::global_avg_pool_forward(x.shape(), x.data())?;
        self.push(shape, out, Op::GlobalAvgPool { input }, &[input])
    }

    /// Per-channel batch normalization of an `[N, C, H, W]` input.
    ///
    /// With [`NormStats::Batch`] also returns the batch mean and the unbiased
    /// batch variance, for the caller's running-statistics update.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let (n, c, h, w) = self.value(input).dims4()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::dim(
                    "batch_norm",
                    format!("{name} has shape {:?}, expected [{c}]", self.value(v).shape()),
                ));
            }
        }
        let running = match stats {
            NormStats::Batch => {
                if n * h * w < 2 {
                    return Err(Error::Contract(format!(
                        "batch_norm in training mode needs at least 2 values per channel, got {}",
                        n * h * w
                    )));
                }
                None
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim("batch_norm", "running statistics do not match channel count"));
                }
                Some((mean, var))
            }
        };
        let dims = (n, c, h * w);
        let (out, saved) = norm::forward(
            dims,
            self.value(input).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
            T::of(eps),
        );
        let batch_stats = running.is_none();
        let report = batch_stats.then(|| {
            let count = T::of((n * h * w) as f64);
            let unbiased = count / (count - T::one());
            let var = saved.batch_var.iter().map(|&v| v * unbiased).collect();
            (saved.batch_mean.clone(), var)
        });
        let var = self.push(
            vec![n, c, h, w],
            out,
            Op::BatchNorm { input, gamma, beta, saved, batch_stats },
            &[input, gamma, beta],
        )?;
        Ok((var, report))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("add", lhs, rhs)?;
        let (a, b) = (self.value(lhs), self.value(rhs));
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        self.push(a.shape().to_vec(), out, Op::Add { lhs, rhs }, &[lhs, rhs])
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("mul", lhs, rhs)?;
        let (a, b) = (self.value(lhs), self.value(rhs));
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        self.push(a.shape().to_vec(), out, Op::Mul { lhs, rhs }, &[lhs, rhs])
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let factor = T::of(factor);
        let x = self.value(input);
        let out = x.data().iter().map(|&v| v * factor).collect();
        self.push(x.shape().to_vec(), out, Op::Scale { input, factor }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().copied().sum::<T>();
        self.push(vec![1], vec![s], Op::Sum { input }, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.data().iter().copied().sum::<T>() / T::of(x.numel() as f64);
        self.push(vec![1], vec![s], Op::Mean { input }, &[input])
    }

    /// `sum(w ⊙ (lhs − rhs)²) / numel`, with `w = 1` when no weights are given.
    pub fn weighted_mse(&mut self, lhs: Var, rhs: Var, weights: Option<Vec<T>>) -> Result<Var> {
        self.same_shape("weighted_mse", lhs, rhs)?;
        let (a, b) = (self.value(lhs), self.value(rhs));
        if let Some(w) = &weights {
            if w.len() != a.numel() {
                return Err(Error::dim(
                    "weighted_mse",
                    format!("{} weights for {} elements", w.len(), a.numel()),
                ));
            }
        }
        let mut acc = T::zero();
        for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
            let d = x - y;
            let w = weights.as_ref().map_or(T::one(), |w| w[i]);
            acc = acc + w * d * d;
        }
        let value = acc / T::of(a.numel() as f64);
        self.push(vec![1], vec![value], Op::WeightedMse { lhs, rhs, weights }, &[lhs, rhs])
    }

    /// `mean(−ln(max(p, floor)))`, or of `1 − p` when `complement` is set.
    pub fn neg_log_mean(&mut self, input: Var, complement: bool, floor: f64) -> Result<Var> {
        let floor = T::of(floor);
        let x = self.value(input);
        let s = x
            .data()
            .iter()
            .map(|&p| {
                let q = if complement { T::one() - p } else { p };
                -q.max(floor).ln()
            })
            .sum::<T>()
            / T::of(x.numel() as f64);
        self.push(vec![1], vec![s], Op::NegLogMean { input, complement, floor }, &[input])
    }

    /// Accumulate `d loss / d leaf` into every parameter leaf reachable from
    /// `loss`. Repeated calls add to the stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut flow = Flow { nodes: &self.nodes, grads: &mut grads };
            match &node.op {
                Op::Leaf => {
                    let slot = &mut self.leaf_grads[i];
                    match slot {
                        Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &v)| *a = *a + v),
                        None => *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                    }
                }
                Op::Conv2d { input, weight, bias, geom } => {
                    let need = [flow.needs(*input), flow.needs(*weight), flow.needs(*bias)];
                    let grads = conv::backward(
                        geom,
                        flow.value(*input).data(),
                        flow.value(*weight).data(),
                        &g,
                        need,
                    );
                    flow.send_opt(*input, grads.input);
                    flow.send_opt(*weight, grads.weight);
                    flow.send_opt(*bias, grads.bias);
                }
                Op::MaxPool2d { input, argmax } => {
                    let len = flow.value(*input).numel();
                    flow.send(*input, pool::maxpool2x2_backward(len, argmax, &g));
                }
                Op::Upsample2x { input } => {
                    let dx = pool::upsample2x_backward(flow.value(*input).shape(), &g);
                    flow.send(*input, dx);
                }
                Op::Elu { input, alpha } => {
                    let x = flow.value(*input).data();
                    let dx = x.iter().zip(&g).map(|(&v, &gg)| gg * activation::elu_grad(v, *alpha)).collect();
                    flow.send(*input, dx);
                }
                Op::Sigmoid { input } => {
                    let s = node.value.data();
                    let dx = s.iter().zip(&g).map(|(&v, &gg)| gg * v * (T::one() - v)).collect();
                    flow.send(*input, dx);
                }
                Op::Affine { input, weight, bias } => {
                    let (x, w, b) = (flow.value(*input), flow.value(*weight), flow.value(*bias));
                    let dims = linear::affine_dims(x.shape(), w.shape(), b.shape())?;
                    let (dx, dw, db) = linear::affine_backward(dims, x.data(), w.data(), &g);
                    flow.send(*input, dx);
                    flow.send(*weight, dw);
                    flow.send(*bias, db);
                }
                Op::Reshape { input } => flow.send(*input, g),
                Op::GlobalAvgPool { input } => {
                    let dx = pool::global_avg_pool_backward(flow.value(*input).shape(), &g);
                    flow.send(*input, dx);
                }
                Op::BatchNorm { input, gamma, beta, saved, batch_stats } => {
                    let (n, c, h, w) = flow.value(*input).dims4()?;
                    let (dx, dg, db) =
                        norm::backward((n, c, h * w), saved, flow.value(*gamma).data(), &g, *batch_stats);
                    flow.send(*input, dx);
                    flow.send(*gamma, dg);
                    flow.send(*beta, db);
                }
                Op::Add { lhs, rhs } => {
                    flow.send(*lhs, g.clone());
                    flow.send(*rhs, g);
                }
                Op::Mul { lhs, rhs } => {
                    let (a, b) = (flow.value(*lhs).data(), flow.value(*rhs).data());
                    let da = g.iter().zip(b).map(|(&gg, &v)| gg * v).collect();
                    let db = g.iter().zip(a).map(|(&gg, &v)| gg * v).collect();
                    flow.send(*lhs, da);
                    flow.send(*rhs, db);
                }
                Op::Scale { input, factor } => {
                    flow.send(*input, g.iter().map(|&v| v * *factor).collect());
                }
                Op::Sum { input } => {
                    let n = flow.value(*input).numel();
                    flow.send(*input, vec![g[0]; n]);
                }
                Op::Mean { input } => {
                    let n = flow.value(*input).numel();
                    flow.send(*input, vec![g[0] / T::of(n as f64); n]);
                }
                Op::WeightedMse { lhs, rhs, weights } => {
                    let (a, b) = (flow.value(*lhs).data(), flow.value(*rhs).data());
                    let k = T::of(2.0) * g[0] / T::of(a.len() as f64);
                    let da: Vec<T> = a
                        .iter()
                        .zip(b)
                        .enumerate()
                        .map(|(i, (&x, &y))| k * weights.as_ref().map_or(T::one(), |w| w[i]) * (x - y))
                        .collect();
                    if flow.needs(*rhs) {
                        flow.send(*rhs, da.iter().map(|&v| -v).collect());
                    }
                    flow.send(*lhs, da);
                }
                Op::NegLogMean { input, complement, floor } => {
                    let p = flow.value(*input).data();
                    let n = T::of(p.len() as f64);
                    let dx = p
                        .iter()
                        .map(|&v| {
                            let q = if *complement { T::one() - v } else { v };
                            if q <= *floor {
                                T::zero()
                            } else if *complement {
                                g[0] / (q * n)
                            } else {
                                -g[0] / (q * n)
                            }
                        })
                        .collect();
                    flow.send(*input, dx);
                }
            }
        }
        Ok(())
    }
}

/// Routes gradients from a node to its inputs during the reverse sweep.
struct Flow<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> Flow<'_, T> {
    fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn send(&mut self, v: Var, g: Vec<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &x)| *a = *a + x),
            slot => *slot = Some(g),
        }
    }

    fn send_opt(&mut self, v: Var, g: Option<Vec<T>>) {
        if let Some(g) = g {
            self.send(v, g);
        }
    }
}
