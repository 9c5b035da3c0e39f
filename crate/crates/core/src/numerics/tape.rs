//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! Every operation appends a node holding its forward value and enough
//! information to run its vector-Jacobian product. Nodes are created in
//! topological order, so `backward` is a single reverse sweep.

use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::tensor::{
    broadcast_shapes, broadcast_strides, for_each_offset, split_axis, strides, Tensor,
};
use crate::error::{Result, SeedError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    CausalSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    BroadcastTo(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    /// Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let mut value = p.tensor.clone();
        value.grad = None;
        let v = self.push(value, Op::Leaf, !p.frozen);
        self.bound.insert(id, v);
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().map(|(&id, &v)| (id, v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.data(v)[0]
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- forward operations ------------------------------------------------

    /// Batched matrix product `a[..., p, q] @ b[..., q, r]`, or with
    /// `b[..., r, q]` transposed when `trans_b` is set. Batch axes broadcast.
    pub fn matmul_ex(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let plan = MatmulPlan::new(&sa, &sb, trans_b)?;
        let mut out = vec![0.0; plan.out_numel()];
        let (ad, bd) = (self.data(a), self.data(b));
        for (k, &(oa, ob)) in plan.offsets.iter().enumerate() {
            let c = &mut out[k * plan.p * plan.r..(k + 1) * plan.p * plan.r];
            let am = &ad[oa..oa + plan.p * plan.q];
            let bm = &bd[ob..ob + plan.q * plan.r];
            if trans_b {
                mm_nt(am, bm, c, plan.p, plan.q, plan.r);
            } else {
                mm_nn(am, bm, c, plan.p, plan.q, plan.r);
            }
        }
        let value = Tensor::new(&plan.out_shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false)
    }

    /// `x[..., in] @ w[out, in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 || *sx.last().unwrap() != sw[1] {
            return Err(SeedError::shape("linear", &sx, &sw));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(SeedError::shape("linear bias", self.shape(b), &sw));
            }
        }
        let (n_in, n_out) = (sw[1], sw[0]);
        let rows = self.value(x).numel() / n_in;
        let mut out = vec![0.0; rows * n_out];
        mm_nt(self.data(x), self.data(w), &mut out, rows, n_in, n_out);
        if let Some(b) = b {
            let bd = self.data(b);
            for row in out.chunks_mut(n_out) {
                row.iter_mut().zip(bd).for_each(|(o, bi)| *o += bi);
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = n_out;
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape =
            broadcast_shapes(sa, sb).ok_or_else(|| SeedError::shape(op_name, sa, sb))?;
        let (ad, bd) = (self.data(a), self.data(b));
        let data = if sa == sb {
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let oa = offsets(sa, &out_shape);
            let ob = offsets(sb, &out_shape);
            oa.iter().zip(&ob).map(|(&i, &j)| f(ad[i], bd[j])).collect()
        };
        Tensor::new(&out_shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let v = Tensor::new(t.shape(), t.data().iter().map(|x| x * c).collect()).unwrap();
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::new(t.shape(), t.data().iter().map(|&x| x.max(0.0)).collect()).unwrap();
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    /// Sign pattern (`input > 0`) of every ReLU recorded so far, in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.data(a).iter().map(|&x| x > 0.0))
            .collect()
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::new(t.shape(), t.data().iter().map(|x| x * x).collect()).unwrap();
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(SeedError::shape("softmax axis", t.shape(), &[axis]));
        }
        let v = Tensor::new(t.shape(), softmax_along(t.data(), t.shape(), axis)?)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Softmax { x, axis }, rg))
    }

    /// Softmax over the last axis of `x[..., q, k]` where query row `i` sees
    /// keys `j <= i + (k - q)`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() < 2 || s[s.len() - 1] < s[s.len() - 2] {
            return Err(SeedError::shape("causal_softmax", s, &[]));
        }
        if !t.is_finite() {
            return Err(SeedError::NumericInput("causal_softmax"));
        }
        let (nq, nk) = (s[s.len() - 2], s[s.len() - 1]);
        let mut out = vec![0.0; t.numel()];
        for (r, (row, orow)) in t.data().chunks(nk).zip(out.chunks_mut(nk)).enumerate() {
            let visible = r % nq + (nk - nq) + 1;
            softmax_slice(&row[..visible], &mut orow[..visible]);
        }
        let v = Tensor::new(s, out)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::CausalSoftmax(x), rg))
    }

    /// Normalizes each slice along `axis` to zero mean and unit population
    /// variance, then applies `gamma * xhat + beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        eps: f64,
    ) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(SeedError::shape("layer_norm axis", t.shape(), &[axis]));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(SeedError::shape(
                "layer_norm affine",
                self.shape(gamma),
                &[n],
            ));
        }
        let (xd, gd, bd) = (t.data(), self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; outer * inner];
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mean = (0..n).map(|k| xd[base + k * inner]).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|k| (xd[base + k * inner] - mean).powi(2))
                    .sum::<f64>()
                    / n as f64;
                let r = 1.0 / (var + eps).sqrt();
                rstd[o * inner + i] = r;
                for k in 0..n {
                    let idx = base + k * inner;
                    let xh = (xd[idx] - mean) * r;
                    xhat[idx] = xh;
                    out[idx] = gd[k] * xh + bd[k];
                }
            }
        }
        let v = Tensor::new(t.shape(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(x).permute(axes)?;
        let rg = self.rg(x);
        Ok(self.push(
            v,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| SeedError::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(SeedError::shape("concat axis", &base, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(SeedError::shape("concat", s, &base));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * block..(o + 1) * block]);
            }
        }
        let v = Tensor::new(&shape, out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(SeedError::shape("narrow", &s, &[axis, start, len]));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * n * inner + start * inner;
            out.extend_from_slice(&xd[from..from + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let v = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Narrow { x, axis, start }, rg))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if broadcast_shapes(s, shape).as_deref() != Some(shape) {
            return Err(SeedError::shape("broadcast_to", s, shape));
        }
        let xd = self.data(x);
        let data = offsets(s, shape).into_iter().map(|i| xd[i]).collect();
        let v = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::BroadcastTo(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Mean squared difference between `a` and `b`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Populates gradients of the scalar `loss` for every reachable node that
    /// requires one. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(SeedError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g)?;
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) -> Result<()> {
        // Temporarily detach the op so node values can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let out_shape = self.nodes[i].value.shape().to_vec();
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let plan = MatmulPlan::new(self.shape(*a), self.shape(*b), *trans_b)?;
                let (p, q, r) = (plan.p, plan.q, plan.r);
                if self.rg(*a) {
                    let bd = self.data(*b).to_vec();
                    let ga = self.acc(*a).unwrap();
                    for (k, &(oa, ob)) in plan.offsets.iter().enumerate() {
                        let gc = &g[k * p * r..(k + 1) * p * r];
                        let da = &mut ga[oa..oa + p * q];
                        if *trans_b {
                            mm_nn(gc, &bd[ob..ob + r * q], da, p, r, q);
                        } else {
                            mm_nt(gc, &bd[ob..ob + q * r], da, p, r, q);
                        }
                    }
                }
                if self.rg(*b) {
                    let ad = self.data(*a).to_vec();
                    let gb = self.acc(*b).unwrap();
                    for (k, &(oa, ob)) in plan.offsets.iter().enumerate() {
                        let gc = &g[k * p * r..(k + 1) * p * r];
                        let db = &mut gb[ob..ob + q * r];
                        if *trans_b {
                            mm_tn(gc, &ad[oa..oa + p * q], db, p, r, q);
                        } else {
                            mm_tn(&ad[oa..oa + p * q], gc, db, p, q, r);
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let sw = self.shape(*w).to_vec();
                let (n_out, n_in) = (sw[0], sw[1]);
                let rows = g.len() / n_out;
                if self.rg(*x) {
                    let wd = self.data(*w).to_vec();
                    mm_nn(g, &wd, self.acc(*x).unwrap(), rows, n_out, n_in);
                }
                if self.rg(*w) {
                    let xd = self.data(*x).to_vec();
                    mm_tn(g, &xd, self.acc(*w).unwrap(), rows, n_out, n_in);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(*b) {
                        for row in g.chunks(n_out) {
                            gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.reduce_into(*a, &out_shape, g.iter().copied());
                self.reduce_into(*b, &out_shape, g.iter().map(|v| sign * v));
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let ad = self.data(*a).to_vec();
                let bd = self.data(*b).to_vec();
                let oa = offsets(&sa, &out_shape);
                let ob = offsets(&sb, &out_shape);
                let ga: Vec<f64> = g.iter().zip(&ob).map(|(gv, &j)| gv * bd[j]).collect();
                let gb: Vec<f64> = g.iter().zip(&oa).map(|(gv, &j)| gv * ad[j]).collect();
                self.reduce_into(*a, &out_shape, ga.into_iter());
                self.reduce_into(*b, &out_shape, gb.into_iter());
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, v)| *x += c * v);
                }
            }
            Op::Relu(a) => {
                let xd = self.data(*a).to_vec();
                if let Some(ga) = self.acc(*a) {
                    for ((x, v), xi) in ga.iter_mut().zip(g).zip(&xd) {
                        if *xi > 0.0 {
                            *x += v;
                        }
                    }
                }
            }
            Op::Square(a) => {
                let xd = self.data(*a).to_vec();
                if let Some(ga) = self.acc(*a) {
                    for ((x, v), xi) in ga.iter_mut().zip(g).zip(&xd) {
                        *x += 2.0 * xi * v;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[i].value.data().to_vec();
                let (outer, n, inner) = split_axis(&out_shape, *axis);
                if let Some(gx) = self.acc(*x) {
                    for o in 0..outer {
                        for k in 0..inner {
                            let base = o * n * inner + k;
                            let dot: f64 = (0..n)
                                .map(|j| g[base + j * inner] * y[base + j * inner])
                                .sum();
                            for j in 0..n {
                                let idx = base + j * inner;
                                gx[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
            }
            Op::CausalSoftmax(x) => {
                let y = self.nodes[i].value.data().to_vec();
                let nk = out_shape[out_shape.len() - 1];
                if let Some(gx) = self.acc(*x) {
                    for ((yr, gr), gxr) in y.chunks(nk).zip(g.chunks(nk)).zip(gx.chunks_mut(nk)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..nk {
                            gxr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                rstd,
            } => {
                let (outer, n, inner) = split_axis(&out_shape, *axis);
                let gd = self.data(*gamma).to_vec();
                if let Some(gg) = self.acc(*gamma) {
                    for (idx, gv) in g.iter().enumerate() {
                        gg[(idx / inner) % n] += gv * xhat[idx];
                    }
                }
                if let Some(gb) = self.acc(*beta) {
                    for (idx, gv) in g.iter().enumerate() {
                        gb[(idx / inner) % n] += gv;
                    }
                }
                if let Some(gx) = self.acc(*x) {
                    for o in 0..outer {
                        for k in 0..inner {
                            let base = o * n * inner + k;
                            let r = rstd[o * inner + k];
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for (j, &gj) in gd.iter().enumerate() {
                                let idx = base + j * inner;
                                let d = g[idx] * gj;
                                mean_d += d;
                                mean_dx += d * xhat[idx];
                            }
                            mean_d /= n as f64;
                            mean_dx /= n as f64;
                            for (j, &gj) in gd.iter().enumerate() {
                                let idx = base + j * inner;
                                let d = g[idx] * gj;
                                gx[idx] += r * (d - mean_d - xhat[idx] * mean_dx);
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(*x) {
                    gx.iter_mut().zip(g).for_each(|(a, v)| *a += v);
                }
            }
            Op::Permute { x, axes } => {
                let src_shape = self.shape(*x).to_vec();
                if let Some(gx) = self.acc(*x) {
                    let src_strides = strides(&src_shape);
                    let perm: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
                    let mut k = 0;
                    for_each_offset(&out_shape, &perm, |src| {
                        gx[src] += g[k];
                        k += 1;
                    });
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(&out_shape, *axis);
                let blocks: Vec<usize> = parts
                    .iter()
                    .map(|&p| self.shape(p)[*axis] * inner)
                    .collect();
                let row: usize = blocks.iter().sum();
                let mut start = 0;
                for (&p, &block) in parts.iter().zip(&blocks) {
                    if let Some(gp) = self.acc(p) {
                        for o in 0..outer {
                            let src = &g[o * row + start..o * row + start + block];
                            gp[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, v)| *a += v);
                        }
                    }
                    start += block;
                }
            }
            Op::Narrow { x, axis, start } => {
                let src_shape = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&src_shape, *axis);
                let len = out_shape[*axis];
                if let Some(gx) = self.acc(*x) {
                    for o in 0..outer {
                        let to = o * n * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        gx[to..to + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, v)| *a += v);
                    }
                }
            }
            Op::BroadcastTo(x) => {
                self.reduce_into(*x, &out_shape, g.iter().copied());
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(*x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(*x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|a| *a += s);
                }
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }

    /// Adds an output-shaped gradient into `x`, summing over broadcast axes.
    fn reduce_into(&mut self, x: Var, out_shape: &[usize], g: impl Iterator<Item = f64>) {
        let xs = self.shape(x).to_vec();
        let Some(gx) = self.acc(x) else { return };
        if xs == out_shape {
            gx.iter_mut().zip(g).for_each(|(a, v)| *a += v);
        } else {
            for (j, v) in offsets(&xs, out_shape).into_iter().zip(g) {
                gx[j] += v;
            }
        }
    }
}

/// Source offsets when `src` is read broadcast to `out`.
fn offsets(src: &[usize], out: &[usize]) -> Vec<usize> {
    let st = broadcast_strides(src, out);
    let mut v = Vec::with_capacity(out.iter().product());
    for_each_offset(out, &st, |o| v.push(o));
    v
}

struct MatmulPlan {
    p: usize,
    q: usize,
    r: usize,
    out_shape: Vec<usize>,
    offsets: Vec<(usize, usize)>,
}

impl MatmulPlan {
    fn new(sa: &[usize], sb: &[usize], trans_b: bool) -> Result<Self> {
        if sa.len() < 2 || sb.len() < 2 {
            return Err(SeedError::shape("matmul", sa, sb));
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (qb, r) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if q != qb {
            return Err(SeedError::shape("matmul", sa, sb));
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch =
            broadcast_shapes(ba, bb).ok_or_else(|| SeedError::shape("matmul batch", sa, sb))?;
        let ob = offsets(ba, &batch);
        let obb = offsets(bb, &batch);
        let offsets = ob
            .into_iter()
            .zip(obb)
            .map(|(i, j)| (i * p * q, j * q * r))
            .collect();
        let mut out_shape = batch;
        out_shape.extend([p, r]);
        Ok(MatmulPlan {
            p,
            q,
            r,
            out_shape,
            offsets,
        })
    }

    fn out_numel(&self) -> usize {
        self.offsets.len() * self.p * self.r
    }
}

/// `c[p,r] += a[p,q] @ b[q,r]`
fn mm_nn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let crow = &mut c[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            crow.iter_mut()
                .zip(brow)
                .for_each(|(cv, bv)| *cv += aik * bv);
        }
    }
}

/// `c[p,r] += a[p,q] @ b[r,q]^T`
fn mm_nt(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            let brow = &b[j * q..(j + 1) * q];
            c[i * r + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[q,r] += a[p,q]^T @ b[p,r]`
fn mm_tn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let brow = &b[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let crow = &mut c[k * r..(k + 1) * r];
            crow.iter_mut()
                .zip(brow)
                .for_each(|(cv, bv)| *cv += aik * bv);
        }
    }
}

fn softmax_slice(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Softmax of raw data along `axis` of `shape`.
pub fn softmax_along(data: &[f64], shape: &[usize], axis: usize) -> Result<Vec<f64>> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(SeedError::NumericInput("softmax"));
    }
    let (outer, n, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; data.len()];
    let mut buf_in = vec![0.0; n];
    let mut buf_out = vec![0.0; n];
    for o in 0..outer {
        for k in 0..inner {
            let base = o * n * inner + k;
            for j in 0..n {
                buf_in[j] = data[base + j * inner];
            }
            softmax_slice(&buf_in, &mut buf_out);
            for j in 0..n {
                out[base + j * inner] = buf_out[j];
            }
        }
    }
    Ok(out)
}
