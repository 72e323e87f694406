//! Reverse-mode tape over dense tensors.
//!
//! Every operation computes its value eagerly and appends a node. A finished
//! tape is immutable; `backward` can be replayed any number of times with
//! different seeds (one per logit for Jacobians) and is bit-reproducible.

use crate::error::{Error, Result};
use crate::loss::{loss_logit_grad, loss_value, LossKind};
use crate::tensor::{Real, Tensor};

pub type NodeId = usize;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    /// `x [n, in] * w[out, in]^T + b[out]`
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    Scale(NodeId, T),
    Relu(NodeId),
    /// Elementwise product with a constant 0/1 mask.
    Mask(NodeId, Vec<bool>),
    /// 3x3 convolution, stride 1, zero padding 1. `x [n, ci, h, w]`, `w [co, ci, 3, 3]`.
    Conv3x3 { x: NodeId, w: NodeId, b: Option<NodeId> },
    /// Gathers `x[idx[j]]` into output element `j` (max pooling and its tangent).
    Gather { x: NodeId, idx: Vec<usize> },
    /// `[n, c, h, w] -> [n, c]`
    GlobalAvgPool(NodeId),
    /// Mean loss over a batch of logits.
    Loss { logits: NodeId, labels: Vec<u32>, kind: LossKind },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward replay, indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    fn grad_flag(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// A leaf whose gradient is tracked.
    pub fn var(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape(format!("linear: x {xs:?} vs w {ws:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.value(b).len() != dout {
                return Err(Error::shape("linear: bias length"));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * dout];
        for i in 0..n {
            let xr = &xv[i * din..(i + 1) * din];
            let or = &mut out[i * dout..(i + 1) * dout];
            for o in 0..dout {
                let wr = &wv[o * din..(o + 1) * din];
                let mut acc = T::zero();
                for k in 0..din {
                    acc = acc + xr[k] * wr[k];
                }
                or[o] = match bv {
                    Some(bv) => acc + bv[o],
                    None => acc,
                };
            }
        }
        let mut ids = vec![x, w];
        ids.extend(b);
        let flag = self.grad_flag(&ids);
        Ok(self.push(Tensor::new(vec![n, dout], out)?, Op::Linear { x, w, b }, flag))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let flag = self.grad_flag(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), flag))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let flag = self.nodes[a].needs_grad;
        self.push(t, Op::Scale(a, c), flag)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let flag = self.nodes[a].needs_grad;
        self.push(t, Op::Relu(a), flag)
    }

    pub fn mask(&mut self, a: NodeId, mask: Vec<bool>) -> Result<NodeId> {
        let v = self.value(a);
        if v.len() != mask.len() {
            return Err(Error::shape("mask length"));
        }
        let data = v
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| if m { x } else { T::zero() })
            .collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let flag = self.nodes[a].needs_grad;
        Ok(self.push(t, Op::Mask(a, mask), flag))
    }

    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::shape(format!("conv: x {xs:?} vs w {ws:?}")));
        }
        let (n, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let co = ws[0];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * co * h * wd];
        for s in 0..n {
            for o in 0..co {
                let base = bv.map_or(T::zero(), |bv| bv[o]);
                let plane = &mut out[((s * co + o) * h) * wd..((s * co + o + 1) * h) * wd];
                plane.iter_mut().for_each(|v| *v = base);
                for c in 0..ci {
                    let xin = &xv[((s * ci + c) * h) * wd..((s * ci + c + 1) * h) * wd];
                    let k = &wv[(o * ci + c) * 9..(o * ci + c + 1) * 9];
                    for oy in 0..h {
                        for ky in 0..3 {
                            let iy = oy as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * wd..(iy as usize + 1) * wd];
                            for ox in 0..wd {
                                let mut acc = T::zero();
                                for kx in 0..3 {
                                    let ix = ox as isize + kx as isize - 1;
                                    if ix >= 0 && ix < wd as isize {
                                        acc = acc + row[ix as usize] * k[ky * 3 + kx];
                                    }
                                }
                                plane[oy * wd + ox] = plane[oy * wd + ox] + acc;
                            }
                        }
                    }
                }
            }
        }
        let mut ids = vec![x, w];
        ids.extend(b);
        let flag = self.grad_flag(&ids);
        Ok(self.push(Tensor::new(vec![n, co, h, wd], out)?, Op::Conv3x3 { x, w, b }, flag))
    }

    /// 2x2 max pooling with stride 2. Returns the node and the flat argmax
    /// indices into the input (first maximum wins).
    pub fn max_pool2(&mut self, x: NodeId) -> Result<(NodeId, Vec<usize>)> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(Error::shape(format!("max_pool2: {xs:?}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[j] > xv[best] {
                            best = j;
                        }
                    }
                    idx.push(best);
                }
            }
        }
        let node = self.gather(x, idx.clone(), vec![n, c, oh, ow])?;
        Ok((node, idx))
    }

    pub fn gather(&mut self, x: NodeId, idx: Vec<usize>, shape: Vec<usize>) -> Result<NodeId> {
        let xv = self.value(x).data();
        if idx.iter().any(|&j| j >= xv.len()) {
            return Err(Error::shape("gather index out of range"));
        }
        let data = idx.iter().map(|&j| xv[j]).collect();
        let t = Tensor::new(shape, data)?;
        let flag = self.nodes[x].needs_grad;
        Ok(self.push(t, Op::Gather { x, idx }, flag))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::shape(format!("global_avg_pool: {xs:?}")));
        }
        let area = xs[2] * xs[3];
        let inv = T::one() / T::of(area as f64);
        let data = self
            .value(x)
            .data()
            .chunks(area)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let t = Tensor::new(vec![xs[0], xs[1]], data)?;
        let flag = self.nodes[x].needs_grad;
        Ok(self.push(t, Op::GlobalAvgPool(x), flag))
    }

    pub fn loss(&mut self, logits: NodeId, labels: &[u32], kind: LossKind) -> Result<NodeId> {
        let v = self.value(logits);
        if v.shape().len() != 2 || v.rows() != labels.len() || labels.is_empty() {
            return Err(Error::shape("loss: logits rows vs labels"));
        }
        let k = v.shape()[1];
        if labels.iter().any(|&y| y as usize >= k) {
            return Err(Error::shape("loss: label out of range"));
        }
        let value = loss_value(kind, v.data(), k, labels);
        let flag = self.nodes[logits].needs_grad;
        Ok(self.push(
            Tensor::scalar(value),
            Op::Loss { logits, labels: labels.to_vec(), kind },
            flag,
        ))
    }

    /// Replays the tape backward from `output` with upstream gradient `seed`.
    pub fn backward(&self, output: NodeId, seed: &[T]) -> Result<Gradients<T>> {
        if seed.len() != self.value(output).len() {
            return Err(Error::shape("backward seed length"));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; output + 1];
        grads[output] = Some(seed.to_vec());
        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].needs_grad {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], id: NodeId, f: impl FnOnce(&mut [T])) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| vec![T::zero(); self.nodes[id].value.len()]);
        f(slot);
    }

    fn propagate(&self, id: NodeId, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (x, w) = (*x, *w);
                let xs = self.value(x).shape();
                let (n, din) = (xs[0], xs[1]);
                let dout = self.value(w).shape()[0];
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                self.accumulate(grads, x, |dx| {
                    for i in 0..n {
                        let gr = &g[i * dout..(i + 1) * dout];
                        let dxr = &mut dx[i * din..(i + 1) * din];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == T::zero() {
                                continue;
                            }
                            let wr = &wv[o * din..(o + 1) * din];
                            for k in 0..din {
                                dxr[k] = dxr[k] + go * wr[k];
                            }
                        }
                    }
                });
                self.accumulate(grads, w, |dw| {
                    for i in 0..n {
                        let gr = &g[i * dout..(i + 1) * dout];
                        let xr = &xv[i * din..(i + 1) * din];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == T::zero() {
                                continue;
                            }
                            let dwr = &mut dw[o * din..(o + 1) * din];
                            for k in 0..din {
                                dwr[k] = dwr[k] + go * xr[k];
                            }
                        }
                    }
                });
                if let Some(b) = *b {
                    self.accumulate(grads, b, |db| {
                        for i in 0..n {
                            for o in 0..dout {
                                db[o] = db[o] + g[i * dout + o];
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for &t in [*a, *b].iter() {
                    self.accumulate(grads, t, |d| {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
                    });
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, |d| {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g * c);
                });
            }
            Op::Relu(a) => {
                let a = *a;
                let pre = self.value(a).data();
                self.accumulate(grads, a, |d| {
                    for ((d, &g), &p) in d.iter_mut().zip(g).zip(pre) {
                        if p > T::zero() {
                            *d = *d + g;
                        }
                    }
                });
            }
            Op::Mask(a, mask) => {
                self.accumulate(grads, *a, |d| {
                    for ((d, &g), &m) in d.iter_mut().zip(g).zip(mask) {
                        if m {
                            *d = *d + g;
                        }
                    }
                });
            }
            Op::Conv3x3 { x, w, b } => self.conv_backward(*x, *w, *b, g, grads),
            Op::Gather { x, idx } => {
                self.accumulate(grads, *x, |d| {
                    for (&j, &g) in idx.iter().zip(g) {
                        d[j] = d[j] + g;
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.value(*x).shape();
                let area = xs[2] * xs[3];
                let inv = T::one() / T::of(area as f64);
                self.accumulate(grads, *x, |d| {
                    for (p, &g) in d.chunks_mut(area).zip(g) {
                        p.iter_mut().for_each(|v| *v = *v + g * inv);
                    }
                });
            }
            Op::Loss { logits, labels, kind } => {
                let lv = self.value(*logits);
                let k = lv.shape()[1];
                let dl = loss_logit_grad(*kind, lv.data(), k, labels);
                let s = g[0];
                self.accumulate(grads, *logits, |d| {
                    d.iter_mut().zip(&dl).for_each(|(d, &v)| *d = *d + v * s);
                });
            }
        }
    }

    fn conv_backward(
        &self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let xs = self.value(x).shape();
        let (n, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let co = self.value(w).shape()[0];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let hw = h * wd;
        let taps = |oy: usize, ox: usize, ky: usize, kx: usize| -> Option<usize> {
            let iy = oy as isize + ky as isize - 1;
            let ix = ox as isize + kx as isize - 1;
            (iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize)
                .then(|| iy as usize * wd + ix as usize)
        };
        self.accumulate(grads, x, |dx| {
            for s in 0..n {
                for o in 0..co {
                    let gp = &g[(s * co + o) * hw..(s * co + o + 1) * hw];
                    for c in 0..ci {
                        let k = &wv[(o * ci + c) * 9..(o * ci + c + 1) * 9];
                        let dxp = &mut dx[(s * ci + c) * hw..(s * ci + c + 1) * hw];
                        for oy in 0..h {
                            for ox in 0..wd {
                                let go = gp[oy * wd + ox];
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        if let Some(j) = taps(oy, ox, ky, kx) {
                                            dxp[j] = dxp[j] + go * k[ky * 3 + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        self.accumulate(grads, w, |dw| {
            for s in 0..n {
                for o in 0..co {
                    let gp = &g[(s * co + o) * hw..(s * co + o + 1) * hw];
                    for c in 0..ci {
                        let xp = &xv[(s * ci + c) * hw..(s * ci + c + 1) * hw];
                        let dk = &mut dw[(o * ci + c) * 9..(o * ci + c + 1) * 9];
                        for oy in 0..h {
                            for ox in 0..wd {
                                let go = gp[oy * wd + ox];
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        if let Some(j) = taps(oy, ox, ky, kx) {
                                            dk[ky * 3 + kx] = dk[ky * 3 + kx] + go * xp[j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        if let Some(b) = b {
            self.accumulate(grads, b, |db| {
                for s in 0..n {
                    for o in 0..co {
                        let gp = &g[(s * co + o) * hw..(s * co + o + 1) * hw];
                        db[o] = db[o] + gp.iter().copied().sum::<T>();
                    }
                }
            });
        }
    }
}
