//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` walks it in reverse. Gradients are
//! kept for leaves and for nodes marked with [`Graph::retain_grad`];
//! every other intermediate gradient is dropped once it has been
//! propagated.

use super::conv::{ConvCache, PoolCache};
use super::loss::CeCache;
use super::lstm::LstmCache;
use super::norm::BnCache;
use super::tensor::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Select(Var, usize),
    Reshape(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    LastStep(Var),
    MeanTime(Var),
    Conv2d(ConvCache),
    MaxPool(PoolCache),
    BatchNorm(BnCache<T>),
    Lstm(LstmCache<T>),
    SoftmaxCe(CeCache<T>),
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    pub retain: bool,
}

/// A single-threaded computation graph.
pub struct Graph<T: Scalar = f32> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient contributions from one node to its inputs.
pub(crate) type Contribs<T> = Vec<(Var, Tensor<T>)>;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let retain = matches!(op, Op::Leaf);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            retain,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; its gradient is recorded by `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that takes no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Keep the gradient of an intermediate node after `backward`.
    pub fn retain_grad(&mut self, v: Var) {
        self.nodes[v.0].retain = true;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse-mode sweep from a scalar. Gradients are added to whatever a
    /// previous call left behind; call [`Graph::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "scalar loss",
                format!("{:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let mut local: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        local.resize_with(loss.0 + 1, || None);
        let shape = self.nodes[loss.0].value.shape().to_vec();
        local[loss.0] = Some(Tensor::full(&shape, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(gout) = local[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            for (v, g) in self.node_backward(i, &gout) {
                // ops only emit contributions for inputs created before them
                assert!(v.0 < i, "graph cycle at node {i}");
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut local[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            if self.nodes[i].retain {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&gout),
                    slot => *slot = Some(gout),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, gout: &Tensor<T>) -> Contribs<T> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, gout.clone()), (*b, gout.clone())],
            Op::Mul(a, b) => {
                let ga = zip_map(gout, val(*b), |g, y| g * y);
                let gb = zip_map(gout, val(*a), |g, x| g * x);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, gout.map(|g| g * *s))],
            Op::Relu(a) => {
                let g = zip_map(
                    gout,
                    val(*a),
                    |g, x| if x > T::zero() { g } else { T::zero() },
                );
                vec![(*a, g)]
            }
            Op::Sigmoid(a) => {
                let g = zip_map(gout, &node.value, |g, y| g * y * (T::one() - y));
                vec![(*a, g)]
            }
            Op::Tanh(a) => {
                let g = zip_map(gout, &node.value, |g, y| g * (T::one() - y * y));
                vec![(*a, g)]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), gout.data()[0]))],
            Op::Mean(a) => {
                let n = T::from_f64(val(*a).len() as f64);
                vec![(*a, Tensor::full(val(*a).shape(), gout.data()[0] / n))]
            }
            Op::Select(a, idx) => {
                let mut g = Tensor::zeros(val(*a).shape());
                g.data_mut()[*idx] = gout.data()[0];
                vec![(*a, g)]
            }
            Op::Reshape(a) => {
                let g = Tensor::new(val(*a).shape(), gout.data().to_vec()).expect("same size");
                vec![(*a, g)]
            }
            Op::MatMul(a, b) => {
                let (x, w) = (val(*a), val(*b));
                let (m, k, n) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                let mut out = Vec::new();
                if self.nodes[a.0].requires_grad {
                    let mut gx = Tensor::zeros(&[m, k]);
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::rows(gout.data(), n),
                        MatRef::transposed(w.data(), n),
                        T::zero(),
                        gx.data_mut(),
                        k,
                    );
                    out.push((*a, gx));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gw = Tensor::zeros(&[k, n]);
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::transposed(x.data(), k),
                        MatRef::rows(gout.data(), n),
                        T::zero(),
                        gw.data_mut(),
                        n,
                    );
                    out.push((*b, gw));
                }
                out
            }
            Op::AddBias(a, b) => {
                let n = val(*b).len();
                let mut gb = Tensor::zeros(&[n]);
                for row in gout.data().chunks_exact(n) {
                    for (acc, &g) in gb.data_mut().iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                vec![(*a, gout.clone()), (*b, gb)]
            }
            Op::LastStep(a) => {
                let s = val(*a).shape();
                let (b, t, h) = (s[0], s[1], s[2]);
                let mut g = Tensor::zeros(s);
                for bi in 0..b {
                    let dst = (bi * t + t - 1) * h;
                    g.data_mut()[dst..dst + h].copy_from_slice(&gout.data()[bi * h..(bi + 1) * h]);
                }
                vec![(*a, g)]
            }
            Op::MeanTime(a) => {
                let s = val(*a).shape();
                let (b, t, h) = (s[0], s[1], s[2]);
                let inv = T::one() / T::from_f64(t as f64);
                let mut g = Tensor::zeros(s);
                for bi in 0..b {
                    let src = &gout.data()[bi * h..(bi + 1) * h];
                    for ti in 0..t {
                        let dst = &mut g.data_mut()[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                vec![(*a, g)]
            }
            Op::Conv2d(c) => c.backward(self, gout),
            Op::MaxPool(p) => p.backward(self, gout),
            Op::BatchNorm(c) => c.backward(self, gout),
            Op::Lstm(c) => c.backward(self, gout),
            Op::SoftmaxCe(c) => c.backward(self, gout),
        }
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        let rg = self.rg(&[a]);
        self.push(v, Op::Tanh(a), rg)
    }

    /// Sum of all elements, accumulated in double precision.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|x| x.as_f64()).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f64 = t.data().iter().map(|x| x.as_f64()).sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(a), rg)
    }

    /// Element at flat index `idx`, as a scalar.
    pub fn select(&mut self, a: Var, idx: usize) -> Result<Var> {
        let t = self.value(a);
        if idx >= t.len() {
            return Err(Error::InvalidInput(format!(
                "select index {idx} out of {} elements",
                t.len()
            )));
        }
        let v = Tensor::scalar(t.data()[idx]);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Select(a, idx), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("[m, k] x [k, n]", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            MatRef::rows(self.value(a).data(), k),
            MatRef::rows(self.value(b).data(), n),
            T::zero(),
            out.data_mut(),
            n,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Add a `[n]` bias along the trailing dimension.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.value(b).len();
        if self.value(b).shape().len() != 1 || self.value(a).last_dim() != n {
            return Err(Error::shape(
                format!("trailing dim {n}"),
                format!("{:?}", self.value(a).shape()),
            ));
        }
        let mut v = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for row in v.data_mut().chunks_exact_mut(n) {
            for (x, &bv) in row.iter_mut().zip(&bias) {
                *x += bv;
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::AddBias(a, b), rg))
    }

    /// `x·W + b` for `x: [m, k]`, `W: [k, n]`, `b: [n]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn seq_dims(&self, a: Var) -> Result<(usize, usize, usize)> {
        match self.value(a).shape() {
            &[b, t, h] if t > 0 => Ok((b, t, h)),
            s => Err(Error::shape("[batch, time, features]", format!("{s:?}"))),
        }
    }

    /// `[B, T, H] → [B, H]`, the final time step.
    pub fn last_step(&mut self, a: Var) -> Result<Var> {
        let (b, t, h) = self.seq_dims(a)?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(b * h);
        for bi in 0..b {
            let s = (bi * t + t - 1) * h;
            out.extend_from_slice(&src[s..s + h]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[b, h], out)?, Op::LastStep(a), rg))
    }

    /// `[B, T, H] → [B, H]`, averaged over time.
    pub fn mean_time(&mut self, a: Var) -> Result<Var> {
        let (b, t, h) = self.seq_dims(a)?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); b * h];
        for bi in 0..b {
            for ti in 0..t {
                let row = &src[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                for (o, &x) in out[bi * h..(bi + 1) * h].iter_mut().zip(row) {
                    *o += x;
                }
            }
        }
        let inv = T::one() / T::from_f64(t as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[b, h], out)?, Op::MeanTime(a), rg))
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data).expect("same shape")
}
