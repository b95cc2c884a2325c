use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Deliberately wrong backward rules, used only as negative controls for
/// gradient checking.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scales the softplus derivative by 1.1.
    SoftplusBackward,
    /// Drops the transposed-operand term of matmul for the right operand.
    MatmulRhs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    DivScalar(Var, Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Relu(Var),
    Hinge(Var),
    Softplus(Var),
    Square(Var),
    Sqrt(Var),
    ReduceMax {
        x: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    ReduceSum {
        x: Var,
        axis: usize,
    },
    L2Normalize {
        x: Var,
        axis: usize,
        norms: Vec<f64>,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    decisions: u64,
    fault: Option<Fault>,
}

/// Splits a shape around `axis` into (outer, len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Option<Fault>) -> Self {
        Graph {
            fault,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every discrete branch taken so far (relu/hinge masks, argmax
    /// picks). Two evaluations with equal signatures lie on the same smooth
    /// piece of the function.
    pub fn branch_signature(&self) -> u64 {
        self.decisions
    }

    fn record_decision(&mut self, bit: u64) {
        self.decisions = (self.decisions ^ bit)
            .wrapping_mul(0x0000_0100_0000_01B3)
            .rotate_left(5);
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Gradient of the last `backward` loss with respect to `v`; zeros if
    /// `v` did not influence the loss.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape matches value"),
            None => Tensor::zeros(&shape),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let values = t.values().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), values).expect("same shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let c = matmul_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], c)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), values)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-C bias vector to every row of an R x C matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::shape("add_row", format!("{sx:?} + {sb:?}")));
        }
        let c = sx[1];
        let b = self.value(bias).values().to_vec();
        let values = self
            .value(x)
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % c])
            .collect();
        let value = Tensor::new(sx.to_vec(), values)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::MulScalar(x, c))
    }

    /// Divides every element by a one-element tensor.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape(
                "div_scalar",
                format!("divisor shape {:?}", self.shape(s)),
            ));
        }
        let d = self.value(s).item();
        let rg = self.rg(x) || self.rg(s);
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.values().iter().map(|v| v / d).collect(),
        )?;
        Ok(self.push(value, Op::DivScalar(x, s), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} vs {base:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut values = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                values.extend_from_slice(&t.values()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(shape, values)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.record_mask(x);
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// `max(x, 0)`, the hinge of a margin loss.
    pub fn hinge(&mut self, x: Var) -> Var {
        self.record_mask(x);
        self.unary(x, |v| v.max(0.0), Op::Hinge(x))
    }

    fn record_mask(&mut self, x: Var) {
        let mut h: u64 = 0;
        for (i, &v) in self.value(x).values().iter().enumerate() {
            if v > 0.0 {
                h = h.wrapping_mul(31).wrapping_add(i as u64 + 1);
            }
        }
        self.record_decision(h);
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    /// Maximum along `axis`; the axis is removed from the shape. Gradient is
    /// routed to the first maximal element.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape(
                "reduce_max",
                format!("axis {axis} of {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let vals = self.value(x).values();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut bv = vals[o * len * inner + i];
                for l in 1..len {
                    let v = vals[(o * len + l) * inner + i];
                    if v > bv {
                        bv = v;
                        best = l;
                    }
                }
                out.push(bv);
                argmax.push(best);
            }
        }
        let h = argmax
            .iter()
            .fold(0u64, |h, &a| h.wrapping_mul(31).wrapping_add(a as u64));
        self.record_decision(h);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::ReduceMax { x, axis, argmax },
            rg,
        ))
    }

    /// Sum along `axis`; the axis is removed from the shape.
    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "reduce_sum",
                format!("axis {axis} of {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let vals = self.value(x).values();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += vals[(o * len + l) * inner + i];
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::ReduceSum { x, axis }, rg))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, vec![n])?;
        self.reduce_sum(flat, 0)
    }

    /// Divides each slice along `axis` by its L2 norm.
    pub fn l2_normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "l2_normalize",
                format!("axis {axis} of {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let vals = self.value(x).values();
        let mut out = vals.to_vec();
        let mut norms = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let n = (0..len)
                    .map(|l| vals[(o * len + l) * inner + i].powi(2))
                    .sum::<f64>()
                    .sqrt()
                    .max(1e-300);
                for l in 0..len {
                    out[(o * len + l) * inner + i] /= n;
                }
                norms.push(n);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::L2Normalize { x, axis, norms },
            rg,
        ))
    }

    /// Selects slices along the first axis.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(Error::shape("gather", "scalar input"));
        }
        let rows = shape[0];
        let width: usize = shape[1..].iter().product();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let vals = self.value(x).values();
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            out.extend_from_slice(&vals[i * width..(i + 1) * width]);
        }
        let mut out_shape = shape.clone();
        out_shape[0] = indices.len();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reverse sweep from a one-element `loss`. Gradients from any previous
    /// call are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g);
            }
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, delta: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        delta(slot);
    }

    fn acc_map(&mut self, x: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        self.acc(x, |buf| {
            for (i, (b, &gv)) in buf.iter_mut().zip(g).enumerate() {
                *b += f(i, gv);
            }
        });
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.rg(a) {
                    let bv = self.value(b).values().to_vec();
                    self.acc(a, |buf| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                buf[i * k + p] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if self.rg(b) && self.fault != Some(Fault::MatmulRhs) {
                    let av = self.value(a).values().to_vec();
                    self.acc(b, |buf| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let a_ip = av[i * k + p];
                                if a_ip == 0.0 {
                                    continue;
                                }
                                for (bb, gv) in buf[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *bb += a_ip * gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.acc_map(a, g, |_, gv| gv);
                self.acc_map(b, g, |_, gv| gv);
            }
            Op::Sub(a, b) => {
                self.acc_map(a, g, |_, gv| gv);
                self.acc_map(b, g, |_, gv| -gv);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (
                    self.value(a).values().to_vec(),
                    self.value(b).values().to_vec(),
                );
                self.acc_map(a, g, |i, gv| gv * bv[i]);
                self.acc_map(b, g, |i, gv| gv * av[i]);
            }
            Op::AddRow(x, bias) => {
                self.acc_map(x, g, |_, gv| gv);
                let c = self.shape(bias)[0];
                self.acc(bias, |buf| {
                    for (i, gv) in g.iter().enumerate() {
                        buf[i % c] += gv;
                    }
                });
            }
            Op::AddScalar(x) => self.acc_map(x, g, |_, gv| gv),
            Op::MulScalar(x, c) => self.acc_map(x, g, |_, gv| gv * c),
            Op::DivScalar(x, s) => {
                let d = self.value(s).item();
                self.acc_map(x, g, |_, gv| gv / d);
                let xv = self.value(x).values().to_vec();
                let dot: f64 = xv.iter().zip(g).map(|(a, b)| a * b).sum();
                self.acc(s, |buf| buf[0] -= dot / (d * d));
            }
            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[id].value.shape().to_vec();
                let (outer, total, inner) = split_axis(&out_shape, axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(v)[axis];
                    let off = offset;
                    self.acc(v, |buf| {
                        for o in 0..outer {
                            let src =
                                &g[(o * total + off) * inner..(o * total + off + len) * inner];
                            for (b, s) in buf[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(src)
                            {
                                *b += s;
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Relu(x) | Op::Hinge(x) => {
                let xv = self.value(x).values().to_vec();
                self.acc_map(x, g, |i, gv| if xv[i] > 0.0 { gv } else { 0.0 });
            }
            Op::Softplus(x) => {
                let scale = if self.fault == Some(Fault::SoftplusBackward) {
                    1.1
                } else {
                    1.0
                };
                let xv = self.value(x).values().to_vec();
                self.acc_map(x, g, |i, gv| gv * sigmoid(xv[i]) * scale);
            }
            Op::Square(x) => {
                let xv = self.value(x).values().to_vec();
                self.acc_map(x, g, |i, gv| 2.0 * xv[i] * gv);
            }
            Op::Sqrt(x) => {
                let yv = self.nodes[id].value.values().to_vec();
                // Subgradient 0 at the origin.
                self.acc_map(
                    x,
                    g,
                    |i, gv| if yv[i] > 0.0 { 0.5 * gv / yv[i] } else { 0.0 },
                );
            }
            Op::ReduceMax { x, axis, argmax } => {
                let shape = self.shape(x).to_vec();
                let (outer, len, inner) = split_axis(&shape, axis);
                self.acc(x, |buf| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let k = o * inner + i;
                            buf[(o * len + argmax[k]) * inner + i] += g[k];
                        }
                    }
                });
            }
            Op::ReduceSum { x, axis } => {
                let shape = self.shape(x).to_vec();
                let (outer, len, inner) = split_axis(&shape, axis);
                self.acc(x, |buf| {
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                buf[(o * len + l) * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::L2Normalize { x, axis, norms } => {
                let shape = self.shape(x).to_vec();
                let (outer, len, inner) = split_axis(&shape, axis);
                let y = self.nodes[id].value.values().to_vec();
                self.acc(x, |buf| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..len).map(|l| y[at(l)] * g[at(l)]).sum();
                            let n = norms[o * inner + i];
                            for l in 0..len {
                                buf[at(l)] += (g[at(l)] - y[at(l)] * dot) / n;
                            }
                        }
                    }
                });
            }
            Op::Gather { x, indices } => {
                let width: usize = self.shape(x)[1..].iter().product();
                self.acc(x, |buf| {
                    for (r, &i) in indices.iter().enumerate() {
                        for (b, gv) in buf[i * width..(i + 1) * width]
                            .iter_mut()
                            .zip(&g[r * width..(r + 1) * width])
                        {
                            *b += gv;
                        }
                    }
                });
            }
            Op::Reshape(x) => self.acc_map(x, g, |_, gv| gv),
        }
    }
}
