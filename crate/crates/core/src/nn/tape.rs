//! Reverse-mode differentiation over whole tensors.
//!
//! Every layer call appends one node holding its output value and the
//! context its backward pass needs. [`Tape::backward`] walks the nodes once,
//! newest first, and accumulates gradients into their inputs.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::filters::{FilterBank, Role};
use crate::nn::conv::{conv_backward, conv_forward, deconv_backward, deconv_forward, out_extent};
use crate::nn::kernels::{
    batchnorm_apply, batchnorm_backward, channel_moments, dwt_forward, gather_argmax, interp_backward,
    interp_forward, maxpool_forward, maxunpool_forward, packed_synthesis, weighted_ce, BN_EPS,
};
use crate::nn::{NnError, ParamId, ParamStore, Tensor};
use crate::scalar::Real;
use crate::transform::{shrink_value, LinePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which statistics a batch-norm layer normalizes with.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Batch statistics; the caller folds [`BatchStats`] into its running
    /// estimates.
    Train,
    /// Running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as folded into running estimates.
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Deconv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(NodeId),
    MaxPool {
        x: NodeId,
        argmax: Vec<u32>,
    },
    MaxUnpool {
        x: NodeId,
        pool: NodeId,
    },
    Interp(NodeId),
    Concat(NodeId, NodeId),
    Slice {
        x: NodeId,
        start: usize,
    },
    Dwt {
        x: NodeId,
        pair: LinePair<T>,
    },
    Idwt {
        low: NodeId,
        high: NodeId,
        pair: LinePair<T>,
    },
    Shrink {
        x: NodeId,
        lambda: T,
    },
    Sum(NodeId),
    Dot {
        x: NodeId,
        coeffs: Vec<T>,
    },
    CrossEntropy {
        logits: NodeId,
        dlogits: Tensor<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// The recorded forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to a leaf node (input or
    /// parameter), if any flowed. Intermediate gradients are dropped.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(id.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// One gradient per store entry, zero where nothing flowed.
    pub fn into_param_grads(mut self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .ids()
            .map(|id| {
                self.params
                    .remove(&id)
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
            })
            .collect()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn grad_flag(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a parameter leaf; its gradient is reported under `id`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    /// Records a parameter as a constant (no gradient).
    pub fn constant_param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        self.push(store.get(id).clone(), Op::Leaf, false)
    }

    /// General convolution; the kernel extent comes from `w`
    /// (`out x in x kz x ky x kx`), `pad` zeros on every side.
    pub fn conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId, NnError> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if xs[1] != ws[1] {
            return Err(NnError::ChannelMismatch {
                layer: "conv",
                expected: ws[1],
                actual: xs[1],
            });
        }
        for a in 0..3 {
            if xs[2 + a] + 2 * pad < ws[2 + a] {
                return Err(NnError::ExtentTooSmall {
                    layer: "conv",
                    spatial: [xs[2], xs[3], xs[4]],
                });
            }
            let o = out_extent(xs[2 + a], ws[2 + a], stride, pad);
            if stride > 1 && o * stride != xs[2 + a] {
                return Err(NnError::OddExtent {
                    layer: "strided conv",
                    spatial: [xs[2], xs[3], xs[4]],
                });
            }
        }
        if let Some(b) = b {
            self.check_vector(b, ws[0], "conv bias")?;
        }
        let out = conv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.grad_flag(&deps);
        Ok(self.push(out, Op::Conv { x, w, b, stride, pad }, ng))
    }

    /// 3x3x3 convolution with unit zero padding, stride 1 or 2.
    pub fn conv3(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize) -> Result<NodeId, NnError> {
        let ws = self.value(w).shape();
        if ws[2..] != [3, 3, 3] {
            return Err(NnError::KernelShape {
                layer: "conv3",
                shape: ws,
            });
        }
        self.conv(x, w, b, stride, 1)
    }

    /// 2x2x2 stride-2 transposed convolution, `w` is `in x out x 2 x 2 x 2`.
    pub fn deconv2(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId, NnError> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if ws[2..] != [2, 2, 2] {
            return Err(NnError::KernelShape {
                layer: "deconv",
                shape: ws,
            });
        }
        if xs[1] != ws[0] {
            return Err(NnError::ChannelMismatch {
                layer: "deconv",
                expected: ws[0],
                actual: xs[1],
            });
        }
        if let Some(b) = b {
            self.check_vector(b, ws[1], "deconv bias")?;
        }
        let out = deconv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)));
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.grad_flag(&deps);
        Ok(self.push(out, Op::Deconv { x, w, b }, ng))
    }

    fn check_vector(&self, id: NodeId, len: usize, layer: &'static str) -> Result<(), NnError> {
        let s = self.value(id).shape();
        if s != [len, 1, 1, 1, 1] {
            return Err(NnError::ShapeMismatch {
                layer,
                left: [len, 1, 1, 1, 1],
                right: s,
            });
        }
        Ok(())
    }

    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(NodeId, Option<BatchStats<T>>), NnError> {
        let c = self.value(x).channels();
        self.check_vector(gamma, c, "batchnorm scale")?;
        self.check_vector(beta, c, "batchnorm shift")?;
        let eps = T::lit(BN_EPS);
        let (mean, var, stats, train) = match mode {
            BatchNormMode::Train => {
                let (mean, var) = channel_moments(self.value(x));
                let n = (self.value(x).batch() * self.value(x).plane_len()) as f64;
                let corr = if n > 1.0 { T::lit(n / (n - 1.0)) } else { T::one() };
                let unbiased = var.iter().map(|&v| v * corr).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats), true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(NnError::ChannelMismatch {
                        layer: "batchnorm running statistics",
                        expected: c,
                        actual: mean.len().min(var.len()),
                    });
                }
                (mean.to_vec(), var.to_vec(), None, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let out = batchnorm_apply(
            self.value(x),
            self.value(gamma).as_slice(),
            self.value(beta).as_slice(),
            &mean,
            &inv_std,
        );
        let ng = self.grad_flag(&[x, gamma, beta]);
        let id = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            },
            ng,
        );
        Ok((id, stats))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let ng = self.grad_flag(&[x]);
        self.push(out, Op::Relu(x), ng)
    }

    fn require_even(&self, x: NodeId, layer: &'static str) -> Result<(), NnError> {
        let s = self.value(x).spatial();
        if s.iter().any(|v| v % 2 != 0) {
            return Err(NnError::OddExtent { layer, spatial: s });
        }
        Ok(())
    }

    /// 2x2x2 stride-2 max pooling; the returned node also carries the
    /// argmax indices used by [`Tape::maxunpool2`].
    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        self.require_even(x, "maxpool")?;
        let (out, argmax) = maxpool_forward(self.value(x));
        let ng = self.grad_flag(&[x]);
        Ok(self.push(out, Op::MaxPool { x, argmax }, ng))
    }

    /// Pooling indices recorded by a [`Tape::maxpool2`] node.
    pub fn pool_indices(&self, pool: NodeId) -> Option<&[u32]> {
        match &self.nodes[pool.0].op {
            Op::MaxPool { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    pub fn maxunpool2(&mut self, x: NodeId, pool: NodeId) -> Result<NodeId, NnError> {
        let Op::MaxPool { x: pool_in, argmax } = &self.nodes[pool.0].op else {
            return Err(NnError::NotAPoolNode);
        };
        let target = self.value(*pool_in).shape();
        let pooled = self.value(pool).shape();
        if self.value(x).shape() != pooled {
            return Err(NnError::ShapeMismatch {
                layer: "maxunpool",
                left: pooled,
                right: self.value(x).shape(),
            });
        }
        let out = maxunpool_forward(self.value(x), argmax, target);
        let ng = self.grad_flag(&[x]);
        Ok(self.push(out, Op::MaxUnpool { x, pool }, ng))
    }

    /// Corner-aligned trilinear 2x upsampling.
    pub fn interpolate2(&mut self, x: NodeId) -> NodeId {
        let out = interp_forward(self.value(x));
        let ng = self.grad_flag(&[x]);
        self.push(out, Op::Interp(x), ng)
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(NnError::ShapeMismatch {
                layer: "concat",
                left: sa,
                right: sb,
            });
        }
        let mut out = Tensor::zeros([sa[0], sa[1] + sb[1], sa[2], sa[3], sa[4]]);
        for bi in 0..sa[0] {
            for c in 0..sa[1] {
                out.plane_mut(bi, c).copy_from_slice(self.value(a).plane(bi, c));
            }
            for c in 0..sb[1] {
                out.plane_mut(bi, sa[1] + c).copy_from_slice(self.value(b).plane(bi, c));
            }
        }
        let ng = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), ng))
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NnError> {
        let s = self.value(x).shape();
        if start + len > s[1] || len == 0 {
            return Err(NnError::ChannelMismatch {
                layer: "slice",
                expected: start + len,
                actual: s[1],
            });
        }
        let mut out = Tensor::zeros([s[0], len, s[2], s[3], s[4]]);
        for bi in 0..s[0] {
            for c in 0..len {
                out.plane_mut(bi, c).copy_from_slice(self.value(x).plane(bi, start + c));
            }
        }
        let ng = self.grad_flag(&[x]);
        Ok(self.push(out, Op::Slice { x, start }, ng))
    }

    /// Per-channel 3D DWT. The output has `8c` channels in subband-major
    /// order: channels `[0, c)` are `lll`, `[c, 2c)` are `llh`, and so on.
    pub fn dwt(&mut self, x: NodeId, bank: &FilterBank) -> Result<NodeId, NnError> {
        self.require_even(x, "dwt")?;
        let pair = LinePair::new(bank, Role::Decomposition);
        let out = dwt_forward(self.value(x), &pair);
        let ng = self.grad_flag(&[x]);
        Ok(self.push(out, Op::Dwt { x, pair }, ng))
    }

    /// [`Tape::dwt`] split into the low-frequency part (`c` channels) and the
    /// seven high-frequency subbands (`7c` channels, tag order).
    pub fn dwt_split(&mut self, x: NodeId, bank: &FilterBank) -> Result<(NodeId, NodeId), NnError> {
        let c = self.value(x).channels();
        let all = self.dwt(x, bank)?;
        let low = self.slice_channels(all, 0, c)?;
        let high = self.slice_channels(all, c, 7 * c)?;
        Ok((low, high))
    }

    /// Per-channel 3D IDWT of `low` (`c` channels) and `high` (`7c`).
    pub fn idwt(&mut self, low: NodeId, high: NodeId, bank: &FilterBank) -> Result<NodeId, NnError> {
        let (sl, sh) = (self.value(low).shape(), self.value(high).shape());
        if sh != [sl[0], 7 * sl[1], sl[2], sl[3], sl[4]] {
            return Err(NnError::ShapeMismatch {
                layer: "idwt",
                left: sl,
                right: sh,
            });
        }
        let pair = LinePair::new(bank, Role::Reconstruction);
        let out = packed_synthesis(self.value(high), sl[1], Some(self.value(low)), &pair);
        let ng = self.grad_flag(&[low, high]);
        Ok(self.push(out, Op::Idwt { low, high, pair }, ng))
    }

    /// Elementwise hard shrinkage with threshold `lambda`.
    pub fn hard_shrink(&mut self, x: NodeId, lambda: T) -> NodeId {
        let out = self.value(x).map(|v| shrink_value(v, lambda));
        let ng = self.grad_flag(&[x]);
        self.push(out, Op::Shrink { x, lambda }, ng)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: T = self.value(x).as_slice().iter().copied().sum();
        let ng = self.grad_flag(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// `sum_i x_i * coeffs_i`, the scalar probe used by gradient checks.
    pub fn dot(&mut self, x: NodeId, coeffs: Vec<T>) -> Result<NodeId, NnError> {
        if coeffs.len() != self.value(x).len() {
            return Err(NnError::LengthMismatch {
                expected: self.value(x).len(),
                actual: coeffs.len(),
            });
        }
        let s: T = self.value(x).as_slice().iter().zip(&coeffs).map(|(&a, &b)| a * b).sum();
        let ng = self.grad_flag(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, coeffs }, ng))
    }

    /// Class-weighted softmax cross-entropy averaged with the applied
    /// weights as normalizer. `labels` has one entry per voxel
    /// (batch-major, z-y-x).
    pub fn weighted_cross_entropy(&mut self, logits: NodeId, labels: &[u8], weights: &[T]) -> Result<NodeId, NnError> {
        let s = self.value(logits).shape();
        let voxels = s[0] * s[2] * s[3] * s[4];
        if labels.len() != voxels {
            return Err(NnError::LengthMismatch {
                expected: voxels,
                actual: labels.len(),
            });
        }
        if weights.len() != s[1] {
            return Err(NnError::ChannelMismatch {
                layer: "cross entropy weights",
                expected: s[1],
                actual: weights.len(),
            });
        }
        if let Some(index) = labels.iter().position(|&l| l as usize >= s[1]) {
            return Err(NnError::LabelOutOfRange {
                index,
                value: labels[index],
            });
        }
        let (loss, dlogits) = weighted_ce(self.value(logits), labels, weights);
        let ng = self.grad_flag(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, dlogits }, ng))
    }

    /// Propagates `d loss / d node` for every recorded node. A tape can be
    /// differentiated once.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>, NnError> {
        if self.consumed {
            return Err(NnError::TapeConsumed);
        }
        let shape = self.value(loss).shape();
        if shape != [1; 5] {
            return Err(NnError::NotScalar(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let mut params = BTreeMap::new();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let needs = |id: NodeId| self.nodes[id.0].needs_grad;
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Param(pid) => {
                    match params.get_mut(pid) {
                        Some(acc) => Tensor::add_assign(acc, &g),
                        None => {
                            params.insert(*pid, g.clone());
                        }
                    }
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b, stride, pad } => {
                    let cg = conv_backward(self.value(*x), self.value(*w), &g, *stride, *pad, needs(*x));
                    if let Some(dx) = cg.dx {
                        accumulate(&mut grads[x.0], dx);
                    }
                    accumulate(&mut grads[w.0], cg.dw);
                    if let Some(b) = b {
                        accumulate(&mut grads[b.0], cg.db);
                    }
                }
                Op::Deconv { x, w, b } => {
                    let cg = deconv_backward(self.value(*x), self.value(*w), &g, needs(*x));
                    if let Some(dx) = cg.dx {
                        accumulate(&mut grads[x.0], dx);
                    }
                    accumulate(&mut grads[w.0], cg.dw);
                    if let Some(b) = b {
                        accumulate(&mut grads[b.0], cg.db);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    train,
                } => {
                    let bg = batchnorm_backward(
                        self.value(*x),
                        &g,
                        self.value(*gamma).as_slice(),
                        mean,
                        inv_std,
                        *train,
                        needs(*x),
                    );
                    if let Some(dx) = bg.dx {
                        accumulate(&mut grads[x.0], dx);
                    }
                    accumulate(&mut grads[gamma.0], bg.dgamma);
                    accumulate(&mut grads[beta.0], bg.dbeta);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(self.value(*x).as_slice()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = maxunpool_forward(&g, argmax, self.value(*x).shape());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::MaxUnpool { x, pool } => {
                    let Op::MaxPool { argmax, .. } = &self.nodes[pool.0].op else {
                        unreachable!("unpool always references a pool node");
                    };
                    let dx = gather_argmax(&g, argmax, self.value(*x).shape());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Interp(x) => {
                    let dx = interp_backward(&g, self.value(*x).shape());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).channels();
                    let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                    if needs(*a) {
                        let mut da = Tensor::zeros(sa);
                        for bi in 0..sa[0] {
                            for c in 0..sa[1] {
                                da.plane_mut(bi, c).copy_from_slice(g.plane(bi, c));
                            }
                        }
                        accumulate(&mut grads[a.0], da);
                    }
                    if needs(*b) {
                        let mut db = Tensor::zeros(sb);
                        for bi in 0..sb[0] {
                            for c in 0..sb[1] {
                                db.plane_mut(bi, c).copy_from_slice(g.plane(bi, ca + c));
                            }
                        }
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Slice { x, start } => {
                    let s = self.value(*x).shape();
                    let mut dx = Tensor::zeros(s);
                    for bi in 0..s[0] {
                        for c in 0..g.channels() {
                            dx.plane_mut(bi, start + c).copy_from_slice(g.plane(bi, c));
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Dwt { x, pair } => {
                    let c = self.value(*x).channels();
                    let dx = packed_synthesis(&g, c, None, pair);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Idwt { low, high, pair } => {
                    let c = self.value(*low).channels();
                    let all = dwt_forward(&g, pair);
                    let s = all.shape();
                    if needs(*low) {
                        let mut dl = Tensor::zeros([s[0], c, s[2], s[3], s[4]]);
                        for bi in 0..s[0] {
                            for ch in 0..c {
                                dl.plane_mut(bi, ch).copy_from_slice(all.plane(bi, ch));
                            }
                        }
                        accumulate(&mut grads[low.0], dl);
                    }
                    if needs(*high) {
                        let mut dh = Tensor::zeros([s[0], 7 * c, s[2], s[3], s[4]]);
                        for bi in 0..s[0] {
                            for ch in 0..7 * c {
                                dh.plane_mut(bi, ch).copy_from_slice(all.plane(bi, c + ch));
                            }
                        }
                        accumulate(&mut grads[high.0], dh);
                    }
                }
                Op::Shrink { x, lambda } => {
                    let mut dx = g;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(self.value(*x).as_slice()) {
                        if !(v > *lambda || v < -*lambda) {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sum(x) => {
                    let gv = g.as_slice()[0];
                    accumulate(&mut grads[x.0], Tensor::filled(self.value(*x).shape(), gv));
                }
                Op::Dot { x, coeffs } => {
                    let gv = g.as_slice()[0];
                    let dx = Tensor::from_vec(self.value(*x).shape(), coeffs.iter().map(|&c| c * gv).collect())
                        .expect("coefficient count checked at record time");
                    accumulate(&mut grads[x.0], dx);
                }
                Op::CrossEntropy { logits, dlogits } => {
                    let gv = g.as_slice()[0];
                    accumulate(&mut grads[logits.0], dlogits.map(|v| v * gv));
                }
            }
        }

        Ok(Gradients { nodes: grads, params })
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}
