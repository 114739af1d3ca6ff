//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the node list is
//! already topologically sorted and `backward` is a single reverse sweep.
//! Parameters enter a graph through [`Graph::param`]; after `backward`, their
//! gradients are added into the owning [`ParamStore`] and keep accumulating
//! until [`ParamStore::zero_grad`].

use std::collections::HashMap;

use crate::deform::{deform_conv2d, deform_conv2d_backward};
use crate::error::{Error, Result};
use crate::kernels::pointwise::{mse_loss_backward, scale_channels_backward, zip_with};
use crate::kernels::pool::global_avgpool_backward;
use crate::kernels::{self, ConvGeom, UpsampleMode};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    DeformConv2d {
        x: Var,
        offsets: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    AvgPool {
        x: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool(Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    ScaleChannels(Var, Var),
    Concat(Vec<Var>),
    Upsample(Var, UpsampleMode),
    Mse(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::DeformConv2d { .. } => "deform_conv2d",
            Op::AvgPool { .. } => "avgpool2d",
            Op::GlobalAvgPool(_) => "global_avgpool",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleChannels(..) => "scale_channels",
            Op::Concat(_) => "concat_channels",
            Op::Upsample(..) => "upsample2x",
            Op::Mse(..) => "mse_loss",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => [Some(*x), Some(*w), *b].into_iter().flatten().collect(),
            Op::DeformConv2d { x, offsets, w, b, .. } => {
                [Some(*x), Some(*offsets), Some(*w), *b].into_iter().flatten().collect()
            }
            Op::AvgPool { x, .. }
            | Op::GlobalAvgPool(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Scale(x, _)
            | Op::Upsample(x, _) => vec![*x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ScaleChannels(a, b) | Op::Mse(a, b) => {
                vec![*a, *b]
            }
            Op::Concat(xs) => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    tags: Vec<(String, Var)>,
    no_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph in which parameters enter as constants; nothing is differentiable
    /// unless introduced through [`Graph::leaf`].
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Names an intermediate activation so it can be looked up after a forward pass.
    pub fn tag(&mut self, name: impl Into<String>, v: Var) {
        self.tags.push((name.into(), v));
    }

    /// Most recent activation recorded under `name`.
    pub fn tagged(&self, name: &str) -> Option<Var> {
        self.tags.iter().rev().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn tag_names(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(|(n, _)| n.as_str())
    }

    /// Op names in execution order.
    pub fn op_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.nodes.iter().map(|n| n.op.name())
    }

    /// Hash of which ReLU outputs are positive. Two evaluations with equal
    /// patterns lie on the same linear piece of every ReLU.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in self.nodes.iter().filter(|n| matches!(n.op, Op::Relu(_))) {
            for &v in node.value.data() {
                h = (h ^ u64::from(v > 0.0)).wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let name = op.name();
        let value = value.check_finite(name)?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        let value = value.check_finite("leaf")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push_leaf(t, false)
    }

    /// A free input whose gradient is reported by [`Gradients::get`].
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push_leaf(t, true)
    }

    /// Brings a stored parameter into the graph once; repeated calls return
    /// the same node so gradients from every use are summed.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let p = store.get(id);
        let v = self.push_leaf(p.value.clone(), !p.frozen && !self.no_grad)?;
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        self.push(y, Op::Conv2d { x, w, b, geom })
    }

    pub fn deform_conv2d(&mut self, x: Var, offsets: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = deform_conv2d(
            self.value(x),
            self.value(offsets),
            self.value(w),
            b.map(|b| self.value(b)),
            geom,
        )?;
        self.push(y, Op::DeformConv2d { x, offsets, w, b, geom })
    }

    pub fn avgpool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let y = kernels::avgpool2d(self.value(x), kernel, stride, padding)?;
        self.push(y, Op::AvgPool { x, kernel, stride, padding })
    }

    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        let y = kernels::global_avgpool(self.value(x));
        self.push(y, Op::GlobalAvgPool(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = kernels::relu(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = kernels::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = zip_with("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = zip_with("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push(y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = zip_with("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push(y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, alpha: f32) -> Result<Var> {
        let y = self.value(x).scale(alpha);
        self.push(y, Op::Scale(x, alpha))
    }

    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let y = kernels::scale_channels(self.value(x), self.value(s))?;
        self.push(y, Op::ScaleChannels(x, s))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let y = kernels::concat_channels(&vals)?;
        self.push(y, Op::Concat(xs.to_vec()))
    }

    pub fn upsample2x(&mut self, x: Var, mode: UpsampleMode) -> Result<Var> {
        let y = kernels::upsample2x(self.value(x), mode);
        self.push(y, Op::Upsample(x, mode))
    }

    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::mse_loss(self.value(a), self.value(b))?;
        self.push(y, Op::Mse(a, b))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != Shape::scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_with(loss, Tensor::scalar(1.0))
    }

    /// Vector-Jacobian product: reverse sweep from `out` seeded with `seed`,
    /// which must have the shape of `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        seed.expect_shape("backward_with", self.shape(out))?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[out.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (input, gi) in self.input_grads(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        self.accumulate(&grads, store)?;
        Ok(grads)
    }

    /// Adds the gradients of every parameter used by this graph into `store`.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    fn input_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, geom } => {
                let gr = kernels::conv2d_backward(val(*x), val(*w), b.is_some(), *geom, g)?;
                let mut out = vec![(*x, gr.x), (*w, gr.weight)];
                if let (Some(b), Some(gb)) = (b, gr.bias) {
                    out.push((*b, gb));
                }
                out
            }
            Op::DeformConv2d { x, offsets, w, b, geom } => {
                let gr = deform_conv2d_backward(val(*x), val(*offsets), val(*w), b.is_some(), *geom, g)?;
                let mut out = vec![(*x, gr.x), (*offsets, gr.offsets), (*w, gr.weight)];
                if let (Some(b), Some(gb)) = (b, gr.bias) {
                    out.push((*b, gb));
                }
                out
            }
            Op::AvgPool { x, kernel, stride, padding } => {
                vec![(*x, kernels::avgpool2d_backward(self.shape(*x), *kernel, *stride, *padding, g)?)]
            }
            Op::GlobalAvgPool(x) => vec![(*x, global_avgpool_backward(self.shape(*x), g))],
            Op::Relu(x) => {
                let y = &node.value;
                let d = zip_with("relu_backward", g, y, |g, y| if y > 0.0 { g } else { 0.0 })?;
                vec![(*x, d)]
            }
            Op::Sigmoid(x) => {
                let d = zip_with("sigmoid_backward", g, &node.value, |g, y| g * y * (1.0 - y))?;
                vec![(*x, d)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if wants(*a) {
                    out.push((*a, zip_with("mul_backward", g, val(*b), |g, y| g * y)?));
                }
                if wants(*b) {
                    out.push((*b, zip_with("mul_backward", g, val(*a), |g, x| g * x)?));
                }
                out
            }
            Op::Scale(x, alpha) => vec![(*x, g.scale(*alpha))],
            Op::ScaleChannels(x, s) => {
                let (dx, ds) = scale_channels_backward(val(*x), val(*s), g);
                vec![(*x, dx), (*s, ds)]
            }
            Op::Concat(xs) => {
                let widths: Vec<usize> = xs.iter().map(|&v| self.shape(v).c).collect();
                xs.iter()
                    .copied()
                    .zip(kernels::split_channels(g, &widths)?)
                    .collect()
            }
            Op::Upsample(x, mode) => vec![(*x, kernels::upsample2x_backward(self.shape(*x), *mode, g)?)],
            Op::Mse(a, b) => {
                let s = g.item_value()?;
                let mut out = Vec::with_capacity(2);
                if wants(*a) {
                    out.push((*a, mse_loss_backward(val(*a), val(*b), s)));
                }
                if wants(*b) {
                    out.push((*b, mse_loss_backward(val(*b), val(*a), s)));
                }
                out
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_to_zero_of_scalar_three() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0)).unwrap();
        let z = g.constant(Tensor::scalar(0.0)).unwrap();
        let loss = g.mse_loss(x, z).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
        assert!(grads.get(z).is_none());
    }

    #[test]
    fn unused_parameter_gets_zero_grad() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Tensor::scalar(1.0)).unwrap();
        let q = store.insert("q", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new();
        let _ = g.param(&store, p).unwrap();
        let qv = g.param(&store, q).unwrap();
        let t = g.constant(Tensor::scalar(0.0)).unwrap();
        let loss = g.mse_loss(qv, t).unwrap();
        g.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(p).grad.data(), &[0.0]);
        assert_eq!(store.get(q).grad.data(), &[4.0]);
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Tensor::scalar(1.0)).unwrap();
        for _ in 0..3 {
            let mut g = Graph::new();
            let pv = g.param(&store, p).unwrap();
            let t = g.constant(Tensor::scalar(0.0)).unwrap();
            let loss = g.mse_loss(pv, t).unwrap();
            g.backward_into(loss, &mut store).unwrap();
        }
        assert_eq!(store.get(p).grad.data(), &[6.0]);
        store.zero_grad();
        assert_eq!(store.get(p).grad.data(), &[0.0]);
    }

    #[test]
    fn shared_use_sums_both_paths() {
        // loss = mse(x + x, 0) = 4x^2 -> 8x
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.5)).unwrap();
        let y = g.add(x, x).unwrap();
        let z = g.constant(Tensor::scalar(0.0)).unwrap();
        let loss = g.mse_loss(y, z).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(Shape::new(1, 1, 1, 2))).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn nan_input_is_an_error() {
        let mut g = Graph::new();
        assert!(matches!(g.leaf(Tensor::scalar(f32::NAN)), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn frozen_param_is_constant() {
        let mut store = ParamStore::new();
        let p = store.insert("enc.p", Tensor::scalar(1.0)).unwrap();
        store.set_frozen("enc.", true);
        let mut g = Graph::new();
        let pv = g.param(&store, p).unwrap();
        assert!(!g.requires_grad(pv));
    }
}
