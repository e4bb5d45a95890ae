//! Define-by-run tape. Every op evaluates eagerly, records what its backward
//! rule needs, and returns a `Var` handle; `backward` replays the tape in
//! reverse to produce gradients for parameters and marked inputs.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{conv2d_backward, conv2d_forward, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u64,
}

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    Linear { x: usize, w: usize, b: usize },
    LeakyRelu { x: usize, slope: T },
    Sigmoid { x: usize },
    Scale { x: usize, factor: T },
    MaxPool2 { x: usize, argmax: Vec<usize> },
    Upsample2 { x: usize },
    Concat { xs: Vec<(usize, usize)> },
    Reshape { x: usize },
    GlobalAvgPool { x: usize },
    Tile { x: usize },
    Normalize { x: usize, norms: Vec<T> },
    Sum { x: usize },
    Mean { x: usize },
    SoftmaxCe { x: usize, labels: Vec<usize>, probs: Vec<T> },
    L1 { x: usize, signs: Vec<T> },
    Cosine { x: usize, coeffs: Vec<T> },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<'p, T: Float> {
    id: u64,
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Smallest norm used when normalizing per-pixel vectors.
const NORM_EPS: f64 = 1e-12;

impl<'p, T: Float> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node_value(&self, idx: usize) -> &Tensor<T> {
        let node = &self.nodes[idx];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    /// Value of a recorded variable. Panics for a variable from another tape.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.get(v).expect("variable from another tape")
    }

    pub fn get(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(self.node_value(self.resolve(v)?))
    }

    fn resolve(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Graph(
                "variable was not recorded on this tape; run the forward pass first".into(),
            ));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, op: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let xi = self.resolve(x)?;
        let needs = self.nodes[xi].needs_grad;
        Ok(self.push(value, op(xi), needs))
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input whose gradient is reported by `Gradients::wrt`.
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        const L: &str = "conv2d";
        let (xi, wi, bi) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let [n, c, h, wd] = self.node_value(xi).dims4(L)?;
        let [o, wc, kh, kw] = self.node_value(wi).dims4(L)?;
        if wc != c || kh != kw {
            return Err(Error::shape(
                L,
                format!("weight {:?} does not fit input with {c} channels", self.node_value(wi).shape()),
            ));
        }
        if self.node_value(bi).shape() != [o] {
            return Err(Error::shape(L, format!("bias {:?} for {o} outputs", self.node_value(bi).shape())));
        }
        let geom = ConvGeom::new(c, h, wd, kh, stride, pad)
            .ok_or_else(|| Error::shape(L, format!("kernel {kh} stride {stride} pad {pad} on {h}x{wd}")))?;
        let out = conv2d_forward(
            self.node_value(xi).data(),
            n,
            &geom,
            self.node_value(wi).data(),
            self.node_value(bi).data(),
            o,
        );
        let value = Tensor::new(&[n, o, geom.ho, geom.wo], out)?;
        let needs = [xi, wi, bi].iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(value, Op::Conv2d { x: xi, w: wi, b: bi, geom }, needs))
    }

    /// `y = x W^T + b` with `x: N x in`, `W: out x in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const L: &str = "linear";
        let (xi, wi, bi) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let [n, fin] = self.node_value(xi).dims2(L)?;
        let [fout, win] = self.node_value(wi).dims2(L)?;
        if win != fin || self.node_value(bi).shape() != [fout] {
            return Err(Error::shape(
                L,
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    self.node_value(xi).shape(),
                    self.node_value(wi).shape(),
                    self.node_value(bi).shape()
                ),
            ));
        }
        let bias = self.node_value(bi).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| bias.iter().copied()).collect();
        T::gemm(
            n,
            fin,
            fout,
            self.node_value(xi).data(),
            fin,
            1,
            self.node_value(wi).data(),
            1,
            fin,
            T::one(),
            &mut out,
            fout,
        );
        let value = Tensor::new(&[n, fout], out)?;
        let needs = [xi, wi, bi].iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(value, Op::Linear { x: xi, w: wi, b: bi }, needs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let slope = T::of(slope);
        let t = self.get(x)?;
        let data = t.data().iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect();
        let value = Tensor::new(t.shape(), data)?;
        self.unary(x, value, |x| Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.get(x)?;
        let data = t.data().iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
        let value = Tensor::new(t.shape(), data)?;
        self.unary(x, value, |x| Op::Sigmoid { x })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let factor = T::of(factor);
        let t = self.get(x)?;
        let value = Tensor::new(t.shape(), t.data().iter().map(|&v| v * factor).collect())?;
        self.unary(x, value, |x| Op::Scale { x, factor })
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let t = self.get(x)?;
        let [n, c, h, w] = t.dims4("max_pool2")?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::shape("max_pool2", format!("input {h}x{w} too small")));
        }
        let src = t.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        self.unary(x, value, |x| Op::MaxPool2 { x, argmax })
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let t = self.get(x)?;
        let [n, c, h, w] = t.dims4("upsample2")?;
        let src = t.data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for plane in 0..n * c {
            for y in 0..h2 {
                let row = &src[plane * h * w + (y / 2) * w..][..w];
                let dst = &mut out[plane * h2 * w2 + y * w2..][..w2];
                for (xo, v) in dst.iter_mut().enumerate() {
                    *v = row[xo / 2];
                }
            }
        }
        let value = Tensor::new(&[n, c, h2, w2], out)?;
        self.unary(x, value, |x| Op::Upsample2 { x })
    }

    /// Concatenate along axis 1; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        const L: &str = "concat";
        let idx: Vec<usize> = xs.iter().map(|&v| self.resolve(v)).collect::<Result<_>>()?;
        let first = self.node_value(*idx.first().ok_or_else(|| Error::shape(L, "no inputs"))?);
        let rank = first.shape().len();
        if rank < 2 {
            return Err(Error::shape(L, "inputs need a channel axis"));
        }
        let n = first.shape()[0];
        let rest = first.shape()[2..].to_vec();
        let inner: usize = rest.iter().product();
        let mut parts = Vec::with_capacity(idx.len());
        for &i in &idx {
            let s = self.node_value(i).shape();
            if s.len() != rank || s[0] != n || s[2..] != rest[..] {
                return Err(Error::shape(L, format!("{:?} vs {:?}", s, first.shape())));
            }
            parts.push((i, s[1]));
        }
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(n * total * inner);
        for b in 0..n {
            for &(i, c) in &parts {
                out.extend_from_slice(&self.node_value(i).data()[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = vec![n, total];
        shape.extend(rest);
        let value = Tensor::new(&shape, out)?;
        let needs = idx.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(value, Op::Concat { xs: parts }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.get(x)?.clone().reshape(shape)?;
        self.unary(x, value, |x| Op::Reshape { x })
    }

    /// Collapse everything after the batch axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.get(x)?.shape();
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    /// N x C x H x W -> N x C mean over space.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.get(x)?;
        let [n, c, h, w] = t.dims4("global_avg_pool")?;
        let inv = T::one() / T::of((h * w) as f64);
        let out = t.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::new(&[n, c], out)?;
        self.unary(x, value, |x| Op::GlobalAvgPool { x })
    }

    /// N x C -> N x C x H x W by repeating each feature over space.
    pub fn tile(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let t = self.get(x)?;
        let [n, c] = t.dims2("tile")?;
        let out = t.data().iter().flat_map(|&v| std::iter::repeat_n(v, h * w)).collect();
        let value = Tensor::new(&[n, c, h, w], out)?;
        self.unary(x, value, |x| Op::Tile { x })
    }

    /// Unit-normalize the channel vector at every pixel.
    pub fn normalize_channels(&mut self, x: Var) -> Result<Var> {
        let t = self.get(x)?;
        let [n, c, h, w] = t.dims4("normalize_channels")?;
        let hw = h * w;
        let src = t.data();
        let mut out = vec![T::zero(); src.len()];
        let mut norms = Vec::with_capacity(n * hw);
        let eps = T::of(NORM_EPS);
        for b in 0..n {
            for p in 0..hw {
                let at = |ch: usize| (b * c + ch) * hw + p;
                let norm = (0..c).map(|ch| src[at(ch)] * src[at(ch)]).sum::<T>().sqrt().max(eps);
                for ch in 0..c {
                    out[at(ch)] = src[at(ch)] / norm;
                }
                norms.push(norm);
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        self.unary(x, value, |x| Op::Normalize { x, norms })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.get(x)?.data().iter().copied().sum::<T>();
        self.unary(x, Tensor::scalar(s), |x| Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.get(x)?;
        let s = t.data().iter().copied().sum::<T>() / T::of(t.numel() as f64);
        self.unary(x, Tensor::scalar(s), |x| Op::Mean { x })
    }

    /// Mean softmax cross-entropy of `N x K` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        const L: &str = "softmax_cross_entropy";
        let t = self.get(logits)?;
        let [n, k] = t.dims2(L)?;
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(Error::shape(L, format!("{} labels for {n} x {k} logits", labels.len())));
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = T::zero();
        for (row, &label) in t.data().chunks(k).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            loss += z.ln() + m - row[label];
            probs.extend(row.iter().map(|&v| (v - m).exp() / z));
        }
        let value = Tensor::scalar(loss / T::of(n as f64));
        self.unary(logits, value, |x| Op::SoftmaxCe {
            x,
            labels: labels.to_vec(),
            probs,
        })
    }

    /// Mean absolute error over entries where `mask` is true (all when `None`).
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>, mask: Option<&[bool]>) -> Result<Var> {
        const L: &str = "l1_loss";
        let t = self.get(pred)?;
        if t.shape() != target.shape() || mask.is_some_and(|m| m.len() != t.numel()) {
            return Err(Error::shape(L, format!("prediction {:?} vs target {:?}", t.shape(), target.shape())));
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let count = (0..t.numel()).filter(|&i| keep(i)).count();
        if count == 0 {
            return Err(Error::shape(L, "mask selects no entries"));
        }
        let inv = T::one() / T::of(count as f64);
        let mut loss = T::zero();
        let mut signs = vec![T::zero(); t.numel()];
        for (i, (&p, &g)) in t.data().iter().zip(target.data()).enumerate() {
            if keep(i) {
                let d = p - g;
                loss += d.abs();
                signs[i] = if d > T::zero() {
                    inv
                } else if d < T::zero() {
                    -inv
                } else {
                    T::zero()
                };
            }
        }
        self.unary(pred, Tensor::scalar(loss * inv), |x| Op::L1 { x, signs })
    }

    /// Mean of `1 - p.g` over valid pixels; `pred`, `target` are N x C x H x W,
    /// `mask` is N x H x W.
    pub fn cosine_loss(&mut self, pred: Var, target: &Tensor<T>, mask: &[bool]) -> Result<Var> {
        const L: &str = "cosine_loss";
        let t = self.get(pred)?;
        let [n, c, h, w] = t.dims4(L)?;
        if t.shape() != target.shape() || mask.len() != n * h * w {
            return Err(Error::shape(L, format!("prediction {:?} vs target {:?}", t.shape(), target.shape())));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::shape(L, "mask selects no pixels"));
        }
        let inv = T::one() / T::of(count as f64);
        let hw = h * w;
        let (p, g) = (t.data(), target.data());
        let mut loss = T::zero();
        let mut coeffs = vec![T::zero(); p.len()];
        for b in 0..n {
            for px in 0..hw {
                if !mask[b * hw + px] {
                    continue;
                }
                let mut dot = T::zero();
                for ch in 0..c {
                    let i = (b * c + ch) * hw + px;
                    dot += p[i] * g[i];
                    coeffs[i] = -g[i] * inv;
                }
                loss += T::one() - dot;
            }
        }
        self.unary(pred, Tensor::scalar(loss * inv), |x| Op::Cosine { x, coeffs })
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let li = self.resolve(loss)?;
        if self.node_value(li).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node_value(li).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(li + 1);
        grads.resize_with(li + 1, || None);
        grads[li] = Some(vec![T::one()]);
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            if matches!(node.op, Op::Input | Op::Param(_)) {
                grads[i] = Some(g);
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((i, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            params,
            param_count: self.params.len(),
        })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].needs_grad;
        macro_rules! acc {
            ($j:expr) => {
                slot(grads, $j, self.node_value($j).numel())
            };
        }
        match &nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { x, w, b, geom } => {
                let wv = self.node_value(*w);
                let o = wv.shape()[0];
                let n = self.node_value(*x).shape()[0];
                let mut dw = vec![T::zero(); wv.numel()];
                let mut db = vec![T::zero(); o];
                let dx = conv2d_backward(
                    self.node_value(*x).data(),
                    n,
                    geom,
                    wv.data(),
                    o,
                    g,
                    wants(*x),
                    &mut dw,
                    &mut db,
                );
                if let Some(dx) = dx {
                    add_into(acc!(*x), &dx);
                }
                if wants(*w) {
                    add_into(acc!(*w), &dw);
                }
                if wants(*b) {
                    add_into(acc!(*b), &db);
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.node_value(*x);
                let wv = self.node_value(*w);
                let [n, fin] = [xv.shape()[0], xv.shape()[1]];
                let fout = wv.shape()[0];
                if wants(*x) {
                    T::gemm(n, fout, fin, g, fout, 1, wv.data(), fin, 1, T::one(), acc!(*x), fin);
                }
                if wants(*w) {
                    T::gemm(fout, n, fin, g, 1, fout, xv.data(), fin, 1, T::one(), acc!(*w), fin);
                }
                if wants(*b) {
                    let db = acc!(*b);
                    for row in g.chunks(fout) {
                        add_into(db, row);
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.node_value(*x).data();
                let dst = acc!(*x);
                for ((d, &gi), &v) in dst.iter_mut().zip(g).zip(xv) {
                    *d += if v > T::zero() { gi } else { gi * *slope };
                }
            }
            Op::Sigmoid { x } => {
                let y = self.node_value(i).data();
                let dst = acc!(*x);
                for ((d, &gi), &yi) in dst.iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (T::one() - yi);
                }
            }
            Op::Scale { x, factor } => {
                let dst = acc!(*x);
                for (d, &gi) in dst.iter_mut().zip(g) {
                    *d += gi * *factor;
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let dst = acc!(*x);
                for (&src, &gi) in argmax.iter().zip(g) {
                    dst[src] += gi;
                }
            }
            Op::Upsample2 { x } => {
                let [n, c, h, w] = self.node_value(*x).dims4("upsample2")?;
                let dst = acc!(*x);
                let w2 = 2 * w;
                for plane in 0..n * c {
                    for y in 0..2 * h {
                        let row = &g[plane * 4 * h * w + y * w2..][..w2];
                        let out = &mut dst[plane * h * w + (y / 2) * w..][..w];
                        for (xo, &gi) in row.iter().enumerate() {
                            out[xo / 2] += gi;
                        }
                    }
                }
            }
            Op::Concat { xs } => {
                let shape = self.node_value(i).shape();
                let n = shape[0];
                let inner: usize = shape[2..].iter().product();
                let total: usize = shape[1];
                let mut offset = 0;
                for &(j, c) in xs {
                    if wants(j) {
                        let dst = acc!(j);
                        for b in 0..n {
                            let src = &g[(b * total + offset) * inner..][..c * inner];
                            add_into(&mut dst[b * c * inner..(b + 1) * c * inner], src);
                        }
                    }
                    offset += c;
                }
            }
            Op::Reshape { x } => add_into(acc!(*x), g),
            Op::GlobalAvgPool { x } => {
                let [_, _, h, w] = self.node_value(*x).dims4("global_avg_pool")?;
                let inv = T::one() / T::of((h * w) as f64);
                let dst = acc!(*x);
                for (plane, &gi) in dst.chunks_mut(h * w).zip(g) {
                    plane.iter_mut().for_each(|d| *d += gi * inv);
                }
            }
            Op::Tile { x } => {
                let shape = self.node_value(i).shape();
                let hw = shape[2] * shape[3];
                let dst = acc!(*x);
                for (d, plane) in dst.iter_mut().zip(g.chunks(hw)) {
                    *d += plane.iter().copied().sum::<T>();
                }
            }
            Op::Normalize { x, norms } => {
                let [n, c, h, w] = self.node_value(i).dims4("normalize_channels")?;
                let y = self.node_value(i).data();
                let hw = h * w;
                let dst = acc!(*x);
                for b in 0..n {
                    for p in 0..hw {
                        let at = |ch: usize| (b * c + ch) * hw + p;
                        let dot: T = (0..c).map(|ch| y[at(ch)] * g[at(ch)]).sum();
                        let norm = norms[b * hw + p];
                        for ch in 0..c {
                            dst[at(ch)] += (g[at(ch)] - y[at(ch)] * dot) / norm;
                        }
                    }
                }
            }
            Op::Sum { x } => {
                let dst = acc!(*x);
                dst.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean { x } => {
                let dst = acc!(*x);
                let s = g[0] / T::of(dst.len() as f64);
                dst.iter_mut().for_each(|d| *d += s);
            }
            Op::SoftmaxCe { x, labels, probs } => {
                let k = probs.len() / labels.len();
                let s = g[0] / T::of(labels.len() as f64);
                let dst = acc!(*x);
                for (r, &label) in labels.iter().enumerate() {
                    for c in 0..k {
                        let onehot = if c == label { T::one() } else { T::zero() };
                        dst[r * k + c] += s * (probs[r * k + c] - onehot);
                    }
                }
            }
            Op::L1 { x, signs: coeffs } | Op::Cosine { x, coeffs } => {
                let dst = acc!(*x);
                for (d, &c) in dst.iter_mut().zip(coeffs) {
                    *d += g[0] * c;
                }
            }
        }
        Ok(())
    }
}

/// Gradient buffer of node `j`, created zeroed on first use.
fn slot<T: Float>(grads: &mut [Option<Vec<T>>], j: usize, len: usize) -> &mut Vec<T> {
    grads[j].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Float>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, ParamId)>,
    param_count: usize,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the loss with respect to an input or parameter node.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients, summed over every use on the tape.
    pub fn param_grads(&self) -> ParamGrads<T> {
        let mut out: Vec<Option<Vec<T>>> = Vec::with_capacity(self.param_count);
        out.resize_with(self.param_count, || None);
        for &(node, id) in &self.params {
            if let Some(g) = self.grads.get(node).and_then(|g| g.as_ref()) {
                match &mut out[id.index()] {
                    Some(acc) => add_into(acc, g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        ParamGrads { grads: out }
    }
}

/// Gradient buffers indexed by `ParamId`; `None` for parameters the loss
/// does not depend on.
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.index()).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Elementwise running sum, used to accumulate micro-batches.
    pub fn accumulate(&mut self, other: &ParamGrads<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => add_into(a, b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| {
                let x = v.to_f64().unwrap_or(0.0);
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }
}
