//! Reverse-mode autodiff over a flat tape of coarse operations.
//!
//! Operations execute eagerly; each node stores its output value plus
//! whatever the backward pass needs (softmax weights, normalization stats).
//! The op set is exactly what the denoising UNet and the CAA block require,
//! not a general framework.

mod caa_kernel;
mod conv;
mod linalg;
mod norm;
#[cfg(test)]
mod tests;

pub use caa_kernel::{caa_backward, caa_forward};

use crate::caa::CaaPlan;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::sync::Arc;

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<S: Scalar> {
    Leaf,
    Add,
    Sub,
    Square,
    Gelu,
    Scale(f64),
    SumAll,
    Reshape { from: Vec<usize> },
    ConcatChan,
    AddChanVec,
    Linear,
    Conv2d { stride: usize, pad: usize },
    UpsampleNearest2,
    GroupNorm { groups: usize, mean: Vec<S>, rstd: Vec<S> },
    LayerNormLast { mean: Vec<S>, rstd: Vec<S> },
    EmbedRows { ids: Vec<usize> },
    SelfAttn { attn: Tensor<S> },
    PromptInject,
    CaaMessage { plan: Arc<CaaPlan<S>>, attn: Vec<S> },
}

pub(crate) struct Node<S: Scalar> {
    op: Op<S>,
    inputs: Vec<Var>,
    value: Tensor<S>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

pub const NORM_EPS: f64 = 1e-5;

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<S>, inputs: Vec<Var>, value: Tensor<S>) -> Var {
        self.nodes.push(Node { op, inputs, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(Op::Add, vec![a, b], value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.push(Op::Sub, vec![a, b], value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(Op::Square, vec![a], value)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(linalg::gelu_scalar);
        self.push(Op::Gelu, vec![a], value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        let value = self.value(a).map(|v| v * cs);
        self.push(Op::Scale(c), vec![a], value)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll, vec![a], value)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let from = self.value(a).shape().to_vec();
        let value = self.value(a).clone().reshaped(shape);
        self.push(Op::Reshape { from }, vec![a], value)
    }

    /// Concatenate two `[N,H,W,C]` tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        assert_eq!(sa.len(), 4, "concat_channels wants [n,h,w,c], got {sa:?}");
        assert_eq!(&sa[..3], &sb[..3], "concat_channels leading dims differ: {sa:?} vs {sb:?}");
        let (ca, cb) = (sa[3], sb[3]);
        let rows = sa[0] * sa[1] * sa[2];
        let mut data = Vec::with_capacity(rows * (ca + cb));
        let (da, db) = (ta.data(), tb.data());
        for r in 0..rows {
            data.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let value = Tensor::from_vec(&[sa[0], sa[1], sa[2], ca + cb], data);
        self.push(Op::ConcatChan, vec![a, b], value)
    }

    /// `x[n,h,w,c] + v[n,c]` broadcast over spatial positions.
    pub fn add_chan_vec(&mut self, x: Var, v: Var) -> Var {
        let (tx, tv) = (self.value(x), self.value(v));
        let s = tx.shape().to_vec();
        assert_eq!(s.len(), 4);
        assert_eq!(tv.shape(), &[s[0], s[3]], "add_chan_vec wants v[n,c]");
        let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
        let mut data = tx.data().to_vec();
        let dv = tv.data();
        for ni in 0..n {
            for p in 0..hw {
                let base = (ni * hw + p) * c;
                for ci in 0..c {
                    data[base + ci] += dv[ni * c + ci];
                }
            }
        }
        let value = Tensor::from_vec(&s, data);
        self.push(Op::AddChanVec, vec![x, v], value)
    }

    /// `x[r,din] * w[din,dout] + b[dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let value = linalg::linear_forward(self.value(x), self.value(w), self.value(b));
        self.push(Op::Linear, vec![x, w, b], value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let value = conv::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad);
        self.push(Op::Conv2d { stride, pad }, vec![x, w, b], value)
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let value = conv::upsample2_forward(self.value(x));
        self.push(Op::UpsampleNearest2, vec![x], value)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let (value, mean, rstd) = norm::group_norm_forward(self.value(x), self.value(gamma), self.value(beta), groups);
        self.push(Op::GroupNorm { groups, mean, rstd }, vec![x, gamma, beta], value)
    }

    pub fn layer_norm_last(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (value, mean, rstd) = norm::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta));
        self.push(Op::LayerNormLast { mean, rstd }, vec![x, gamma, beta], value)
    }

    /// Gather rows of `table[v,d]` at fixed indices.
    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding id {id} out of vocab {v}");
            data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::from_vec(&[ids.len(), d], data);
        self.push(Op::EmbedRows { ids: ids.to_vec() }, vec![table], value)
    }

    /// Single-head self-attention over tokens, per view: returns the
    /// attention delta (caller adds the residual).
    pub fn self_attention(&mut self, x: Var, wq: Var, wk: Var, wv: Var, wo: Var) -> Var {
        let (value, attn) = linalg::self_attn_forward(
            self.value(x),
            self.value(wq),
            self.value(wk),
            self.value(wv),
            self.value(wo),
        );
        self.push(Op::SelfAttn { attn }, vec![x, wq, wk, wv, wo], value)
    }

    /// Cross-attention against a single per-view condition token. With one
    /// key the softmax weight is exactly 1, so the injected message is the
    /// value path broadcast over all positions.
    pub fn prompt_inject(&mut self, x: Var, emb: Var, wv: Var, bv: Var, wo: Var, bo: Var) -> Var {
        let value = linalg::prompt_inject_forward(
            self.value(x),
            self.value(emb),
            self.value(wv),
            self.value(bv),
            self.value(wo),
            self.value(bo),
        );
        self.push(Op::PromptInject, vec![x, emb, wv, bv, wo, bo], value)
    }

    /// Correspondence-aware attention message for every view at once.
    pub fn caa_message(
        &mut self,
        x: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        pos_w: Var,
        pos_b: Var,
        plan: Arc<CaaPlan<S>>,
    ) -> Var {
        let (value, attn) = caa_kernel::caa_forward(
            self.value(x),
            self.value(wq),
            self.value(wk),
            self.value(wv),
            self.value(pos_w),
            self.value(pos_b),
            &plan,
        );
        self.push(Op::CaaMessage { plan, attn }, vec![x, wq, wk, wv, pos_w, pos_b], value)
    }

    pub fn backward(&self, loss: Var) -> Grads<S> {
        assert_eq!(self.value(loss).numel(), 1, "backward wants a scalar loss");
        let mut slots: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::scalar(S::ONE));
        for idx in (0..self.nodes.len()).rev() {
            let grad = match slots[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                slots[idx] = Some(grad);
                continue;
            }
            let input_grads = self.op_backward(node, &grad);
            slots[idx] = Some(grad);
            for (var, g) in node.inputs.iter().zip(input_grads) {
                if let Some(g) = g {
                    match &mut slots[var.0] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        Grads { slots }
    }

    fn op_backward(&self, node: &Node<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let val = |v: Var| self.value(v);
        match &node.op {
            Op::Leaf => vec![],
            Op::Add => vec![Some(grad.clone()), Some(grad.clone())],
            Op::Sub => vec![Some(grad.clone()), Some(grad.map(|v| -v))],
            Op::Square => {
                let x = val(node.inputs[0]);
                let two = S::from_f64(2.0);
                vec![Some(x.zip(grad, |xv, g| two * xv * g))]
            }
            Op::Gelu => {
                let x = val(node.inputs[0]);
                vec![Some(x.zip(grad, |xv, g| linalg::gelu_grad_scalar(xv) * g))]
            }
            Op::Scale(c) => {
                let cs = S::from_f64(*c);
                vec![Some(grad.map(|g| g * cs))]
            }
            Op::SumAll => {
                let g = grad.item();
                vec![Some(Tensor::full(val(node.inputs[0]).shape(), g))]
            }
            Op::Reshape { from } => vec![Some(grad.clone().reshaped(from))],
            Op::ConcatChan => {
                let (sa, sb) = (val(node.inputs[0]).shape(), val(node.inputs[1]).shape());
                let (ca, cb) = (sa[3], sb[3]);
                let rows = sa[0] * sa[1] * sa[2];
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                let g = grad.data();
                for r in 0..rows {
                    let base = r * (ca + cb);
                    da.extend_from_slice(&g[base..base + ca]);
                    db.extend_from_slice(&g[base + ca..base + ca + cb]);
                }
                vec![
                    Some(Tensor::from_vec(sa, da)),
                    Some(Tensor::from_vec(sb, db)),
                ]
            }
            Op::AddChanVec => {
                let s = val(node.inputs[0]).shape();
                let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
                let mut dv = Tensor::zeros(&[n, c]);
                let g = grad.data();
                let dvd = dv.data_mut();
                for ni in 0..n {
                    for p in 0..hw {
                        let base = (ni * hw + p) * c;
                        for ci in 0..c {
                            dvd[ni * c + ci] += g[base + ci];
                        }
                    }
                }
                vec![Some(grad.clone()), Some(dv)]
            }
            Op::Linear => {
                let (dx, dw, db) = linalg::linear_backward(val(node.inputs[0]), val(node.inputs[1]), grad);
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::Conv2d { stride, pad } => {
                let (dx, dw, db) =
                    conv::conv2d_backward(val(node.inputs[0]), val(node.inputs[1]), grad, *stride, *pad);
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::UpsampleNearest2 => vec![Some(conv::upsample2_backward(val(node.inputs[0]).shape(), grad))],
            Op::GroupNorm { groups, mean, rstd } => {
                let (dx, dg, db) = norm::group_norm_backward(
                    val(node.inputs[0]),
                    val(node.inputs[1]),
                    grad,
                    *groups,
                    mean,
                    rstd,
                );
                vec![Some(dx), Some(dg), Some(db)]
            }
            Op::LayerNormLast { mean, rstd } => {
                let (dx, dg, db) =
                    norm::layer_norm_backward(val(node.inputs[0]), val(node.inputs[1]), grad, mean, rstd);
                vec![Some(dx), Some(dg), Some(db)]
            }
            Op::EmbedRows { ids } => {
                let t = val(node.inputs[0]);
                let d = t.shape()[1];
                let mut dt = Tensor::zeros(t.shape());
                let g = grad.data();
                let dtd = dt.data_mut();
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dtd[id * d + j] += g[row * d + j];
                    }
                }
                vec![Some(dt)]
            }
            Op::SelfAttn { attn } => {
                let grads = linalg::self_attn_backward(
                    val(node.inputs[0]),
                    val(node.inputs[1]),
                    val(node.inputs[2]),
                    val(node.inputs[3]),
                    val(node.inputs[4]),
                    attn,
                    grad,
                );
                grads.into_iter().map(Some).collect()
            }
            Op::PromptInject => {
                let grads = linalg::prompt_inject_backward(
                    val(node.inputs[0]),
                    val(node.inputs[1]),
                    val(node.inputs[2]),
                    val(node.inputs[3]),
                    val(node.inputs[4]),
                    grad,
                );
                grads.into_iter().map(Some).collect()
            }
            Op::CaaMessage { plan, attn } => {
                let grads = caa_kernel::caa_backward(
                    val(node.inputs[0]),
                    val(node.inputs[1]),
                    val(node.inputs[2]),
                    val(node.inputs[3]),
                    val(node.inputs[4]),
                    val(node.inputs[5]),
                    plan,
                    attn,
                    grad,
                );
                grads.into_iter().map(Some).collect()
            }
        }
    }
}

pub struct Grads<S: Scalar> {
    slots: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.slots[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.slots[v.0].take()
    }
}
