//! Reverse-mode differentiation over a Wengert tape.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so walking them backwards is a valid
//! topological order for the chain rule. Parameters are borrowed from a
//! [`ParamStore`] rather than copied onto the tape.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{
    broadcast_offsets, broadcast_shape, gemm_nn, gemm_nt, gemm_tn, numel, permute_data, Tensor,
};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul { a: Var, b: Var, trans_b: bool },
    Reshape(Var),
    Permute { a: Var, axes: Vec<usize> },
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gather { table: Var, ids: Vec<usize> },
    Concat(Var, Var),
    Dropout { a: Var, mask: Vec<T> },
    Sum(Var),
    /// Scalar output whose local gradients were computed during the forward pass.
    Fused { inputs: Vec<Var>, grads: Vec<Tensor<T>> },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    attention_cells: u64,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            attention_cells: 0,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attention score cells materialised so far on this tape.
    pub fn attention_cells(&self) -> u64 {
        self.attention_cells
    }

    pub(crate) fn count_attention_cells(&mut self, cells: usize) {
        self.attention_cells += cells as u64;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives gradients but is not a stored parameter.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, bool)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::shape(op_name, sa, sb))?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = if va.shape() == vb.shape() {
            va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let oa = broadcast_offsets(va.shape(), &out_shape);
            let ob = broadcast_offsets(vb.shape(), &out_shape);
            oa.iter()
                .zip(&ob)
                .map(|(&i, &j)| f(va.data()[i], vb.data()[j]))
                .collect()
        };
        Ok((Tensor::new(out_shape, data)?, self.rg(&[a, b])))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.elementwise("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let va = self.value(a);
        let t = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| x * c).collect())
            .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// Batched matrix product over the last two axes; leading axes broadcast.
    /// With `trans_b` the right operand is stored as `[.., r, q]`.
    pub fn matmul_ext(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (q2, r) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if q != q2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = broadcast_shape(ba, bb).ok_or_else(|| Error::shape("matmul", &sa, &sb))?;
        let nb = numel(&batch);
        let oa = broadcast_offsets(ba, &batch);
        let ob = broadcast_offsets(bb, &batch);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); nb * p * r];
        for i in 0..nb {
            let asl = &va[oa[i] * p * q..(oa[i] + 1) * p * q];
            let bsl = &vb[ob[i] * q * r..(ob[i] + 1) * q * r];
            let csl = &mut out[i * p * r..(i + 1) * p * r];
            if trans_b {
                gemm_nt(asl, bsl, csl, p, q, r);
            } else {
                gemm_nn(asl, bsl, csl, p, q, r);
            }
        }
        let mut shape = batch;
        shape.extend([p, r]);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, trans_b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false)
    }

    /// `a · bᵀ` over the last two axes.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, true)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let mut seen = vec![false; va.shape().len()];
        if axes.len() != seen.len() || axes.iter().any(|&x| x >= seen.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::shape("permute", va.shape(), axes));
        }
        let (shape, data) = permute_data(va.data(), va.shape(), axes);
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Permute {
                a,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.max(T::zero())).collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    /// Softmax over the last axis, stabilised by subtracting the slice maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let cols = *va.shape().last().ok_or_else(|| Error::shape("softmax", va.shape(), &[1]))?;
        if cols == 0 {
            return Err(Error::shape("softmax", va.shape(), &[1]));
        }
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        debug_assert!(
            data.iter().all(|v| !v.is_nan()),
            "NaN propagated through softmax"
        );
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Softmax(a), rg))
    }

    /// Normalises each last-axis slice to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let d = *vx.shape().last().unwrap_or(&0);
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape("layer_norm", vx.shape(), self.shape(gain)));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = vx.numel() / d.max(1);
        let mut xhat = Vec::with_capacity(vx.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(vx.numel());
        let dn = T::of(d as f64);
        let eps = T::of(eps);
        for row in vx.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let istd = T::one() / (var + eps).sqrt();
            inv_std.push(istd);
            for (k, &v) in row.iter().enumerate() {
                let h = (v - mean) * istd;
                xhat.push(h);
                out.push(h * g[k] + b[k]);
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Rows of a `[rows, cols]` table, producing `[ids.len(), cols]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        if vt.shape().len() != 2 {
            return Err(Error::shape("gather_rows", vt.shape(), &[0, 0]));
        }
        let (rows, cols) = (vt.shape()[0], vt.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Lookup { id, rows });
            }
            data.extend_from_slice(vt.row(id));
        }
        let t = Tensor::new(vec![ids.len(), cols], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat", sa, sb));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        let rows = (va.numel() + vb.numel()).checked_div(ca + cb).unwrap_or(0);
        for r in 0..rows {
            data.extend_from_slice(&va.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&vb.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(a, b), rg))
    }

    /// Inverted dropout with a caller-supplied keep mask; kept units are
    /// scaled by `1 / (1 - rate)`.
    pub fn dropout_with_mask(&mut self, a: Var, keep: &[bool], rate: f64) -> Result<Var> {
        let va = self.value(a);
        if keep.len() != va.numel() {
            return Err(Error::shape("dropout", va.shape(), &[keep.len()]));
        }
        let s = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = keep.iter().map(|&k| if k { s } else { T::zero() }).collect();
        let data = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Dropout { a, mask }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Records a scalar computed outside the tape together with its
    /// gradient with respect to each input.
    pub fn fused_scalar(&mut self, value: T, inputs: &[Var], grads: Vec<Tensor<T>>) -> Result<Var> {
        if inputs.len() != grads.len() {
            return Err(Error::InvalidTensor("fused op: one gradient per input".into()));
        }
        for (v, g) in inputs.iter().zip(&grads) {
            if self.shape(*v) != g.shape() {
                return Err(Error::shape("fused", self.shape(*v), g.shape()));
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Fused {
                inputs: inputs.to_vec(),
                grads,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidTensor(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let params = self
            .param_vars
            .iter()
            .map(|v| v.and_then(|v| grads[v.0].clone()))
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Sums a gradient of broadcast shape back down to `target` shape.
    fn reduce_to(&self, g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
        if g.shape() == target {
            return g.clone();
        }
        let offs = broadcast_offsets(target, g.shape());
        let mut out = Tensor::zeros(target.to_vec());
        let od = out.data_mut();
        for (&o, &v) in offs.iter().zip(g.data()) {
            od[o] += v;
        }
        out
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = match &self.nodes[idx].value {
            Value::Owned(t) => t,
            Value::Param(_) => return,
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = self.reduce_to(g, self.shape(*a));
                let gb = self.reduce_to(g, self.shape(*b));
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let oa = broadcast_offsets(va.shape(), g.shape());
                let ob = broadcast_offsets(vb.shape(), g.shape());
                if self.nodes[a.0].requires_grad {
                    let mut ga = Tensor::zeros(va.shape().to_vec());
                    for k in 0..g.numel() {
                        ga.data_mut()[oa[k]] += g.data()[k] * vb.data()[ob[k]];
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = Tensor::zeros(vb.shape().to_vec());
                    for k in 0..g.numel() {
                        gb.data_mut()[ob[k]] += g.data()[k] * va.data()[oa[k]];
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => {
                let data = g.data().iter().map(|&x| x * *c).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::MatMul { a, b, trans_b } => self.matmul_backward(*a, *b, *trans_b, g, grads),
            Op::Reshape(a) => {
                let ga = g.clone().reshaped(self.shape(*a).to_vec()).unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Permute { a, axes } => {
                let mut inv = vec![0; axes.len()];
                for (k, &ax) in axes.iter().enumerate() {
                    inv[ax] = k;
                }
                let (shape, data) = permute_data(g.data(), g.shape(), &inv);
                self.accumulate(grads, *a, Tensor::new(shape, data).unwrap());
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Softmax(a) => {
                let cols = *out.shape().last().unwrap();
                let mut data = Vec::with_capacity(g.numel());
                for (y, dy) in out.data().chunks(cols).zip(g.data().chunks(cols)) {
                    let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
                    data.extend(y.iter().zip(dy).map(|(&yv, &dv)| yv * (dv - dot)));
                }
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = *g.shape().last().unwrap();
                let gv = self.value(*gain).data();
                let mut dgain = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                let mut dx = Vec::with_capacity(g.numel());
                let dn = T::of(d as f64);
                for (r, (dy, xh)) in g.data().chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut mean_dxh = T::zero();
                    let mut mean_dxh_xh = T::zero();
                    for k in 0..d {
                        dgain[k] += dy[k] * xh[k];
                        dbias[k] += dy[k];
                        let dxh = dy[k] * gv[k];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[k];
                    }
                    mean_dxh /= dn;
                    mean_dxh_xh /= dn;
                    for k in 0..d {
                        let dxh = dy[k] * gv[k];
                        dx.push(inv_std[r] * (dxh - mean_dxh - xh[k] * mean_dxh_xh));
                    }
                }
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx).unwrap());
                self.accumulate(grads, *gain, Tensor::new(vec![d], dgain).unwrap());
                self.accumulate(grads, *bias, Tensor::new(vec![d], dbias).unwrap());
            }
            Op::Gather { table, ids } => {
                let mut gt = Tensor::zeros(self.shape(*table).to_vec());
                for (k, &id) in ids.iter().enumerate() {
                    let src = g.row(k);
                    for (dst, &s) in gt.row_mut(id).iter_mut().zip(src) {
                        *dst += s;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
                let mut ga = Vec::with_capacity(numel(&sa));
                let mut gb = Vec::with_capacity(numel(&sb));
                if ca + cb > 0 {
                    for row in g.data().chunks(ca + cb) {
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(sa, ga).unwrap());
                self.accumulate(grads, *b, Tensor::new(sb, gb).unwrap());
            }
            Op::Dropout { a, mask } => {
                let data = g.data().iter().zip(mask).map(|(&x, &m)| x * m).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Sum(a) => {
                let ga = Tensor::full(self.shape(*a).to_vec(), g.item());
                self.accumulate(grads, *a, ga);
            }
            Op::Fused { inputs, grads: local } => {
                let up = g.item();
                for (v, lg) in inputs.iter().zip(local) {
                    let data = lg.data().iter().map(|&x| x * up).collect();
                    self.accumulate(grads, *v, Tensor::new(lg.shape().to_vec(), data).unwrap());
                }
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, trans_b: bool, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let r = if trans_b { sb[sb.len() - 2] } else { sb[sb.len() - 1] };
        let batch = &g.shape()[..g.shape().len() - 2];
        let nb = numel(batch);
        let oa = broadcast_offsets(&sa[..sa.len() - 2], batch);
        let ob = broadcast_offsets(&sb[..sb.len() - 2], batch);
        let gd = g.data();
        if self.nodes[a.0].requires_grad {
            let mut ga = Tensor::zeros(sa.to_vec());
            for i in 0..nb {
                let gsl = &gd[i * p * r..(i + 1) * p * r];
                let bsl = &vb.data()[ob[i] * q * r..(ob[i] + 1) * q * r];
                let asl = &mut ga.data_mut()[oa[i] * p * q..(oa[i] + 1) * p * q];
                if trans_b {
                    // b stored [r, q]: dA = dC · B
                    gemm_nn(gsl, bsl, asl, p, r, q);
                } else {
                    // dA = dC · Bᵀ
                    gemm_nt(gsl, bsl, asl, p, r, q);
                }
            }
            self.accumulate(grads, a, ga);
        }
        if self.nodes[b.0].requires_grad {
            let mut gb = Tensor::zeros(sb.to_vec());
            for i in 0..nb {
                let gsl = &gd[i * p * r..(i + 1) * p * r];
                let asl = &va.data()[oa[i] * p * q..(oa[i] + 1) * p * q];
                let bsl = &mut gb.data_mut()[ob[i] * q * r..(ob[i] + 1) * q * r];
                if trans_b {
                    // dB[r×q] = dCᵀ · A
                    gemm_tn(gsl, asl, bsl, p, r, q);
                } else {
                    // dB[q×r] = Aᵀ · dC
                    gemm_tn(asl, gsl, bsl, p, q, r);
                }
            }
            self.accumulate(grads, b, gb);
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.index()].as_ref()
    }

    /// Gradient per stored parameter, `None` for parameters the loss did not reach.
    pub fn into_param_grads(self) -> Vec<Option<Tensor<T>>> {
        self.params
    }
}
