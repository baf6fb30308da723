use std::borrow::Cow;

use rand::Rng;

use super::{Mask, Scalar, Tensor, TensorError, MASKED_LOGIT};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    GatherRows(Var, Vec<Option<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    Dropout(Var, Vec<T>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
    },
    Sum(Vec<Var>),
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Values are evaluated eagerly as operations are recorded; [`Tape::backward`]
/// then walks the recording in reverse. Parameter leaves borrow their tensors,
/// so building a graph never copies the model.
pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Scalar> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Layer-norm variance offset.
pub const LAYER_NORM_EPS: f64 = 1e-6;

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs)
    }

    /// A trainable leaf borrowing `t`.
    pub fn param(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// A leaf borrowing `t` that receives no gradient.
    pub fn frozen(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// An owned leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// `a [n x k] · b [k x m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(
            bv.rows(),
            k,
            "matmul: inner dimensions {k} vs {}",
            bv.rows()
        );
        let mut out = vec![T::zero(); n * m];
        matmul_into(av.data(), bv.data(), &mut out, n, k, m);
        self.derived(
            Tensor::from_parts(vec![n, m], out),
            Op::MatMul(a, b),
            &[a, b],
        )
    }

    /// `a [n x k] · b[m x k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.rows());
        assert_eq!(
            bv.cols(),
            k,
            "matmul_t: inner dimensions {k} vs {}",
            bv.cols()
        );
        let mut out = vec![T::zero(); n * m];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..n {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..m {
                out[i * m + j] = dot(ar, &bd[j * k..(j + 1) * k]);
            }
        }
        self.derived(
            Tensor::from_parts(vec![n, m], out),
            Op::MatMulT(a, b),
            &[a, b],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(b));
        assert_eq!(av.len(), bv.len(), "add: operand sizes differ");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = av.shape().to_vec();
        self.derived(Tensor::from_parts(shape, data), Op::Add(a, b), &[a, b])
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(b));
        let c = av.cols();
        assert_eq!(bv.len(), c, "add_bias: bias width {} vs {c}", bv.len());
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += *b;
            }
        }
        let shape = av.shape().to_vec();
        self.derived(Tensor::from_parts(shape, data), Op::AddBias(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let av = self.val(a);
        let data = av.data().iter().map(|x| *x * s).collect();
        let shape = av.shape().to_vec();
        self.derived(Tensor::from_parts(shape, data), Op::Scale(a, s), &[a])
    }

    /// Row `idx[i]` of `src` for each `i`; `None` yields a zero row.
    pub fn gather_rows(&mut self, src: Var, idx: Vec<Option<usize>>) -> Var {
        let sv = self.val(src);
        let c = sv.cols();
        let mut data = vec![T::zero(); idx.len() * c];
        for (i, r) in idx.iter().enumerate() {
            if let Some(r) = *r {
                assert!(
                    r < sv.rows(),
                    "gather_rows: row {r} out of range {}",
                    sv.rows()
                );
                data[i * c..(i + 1) * c].copy_from_slice(sv.row(r));
            }
        }
        let n = idx.len();
        self.derived(
            Tensor::from_parts(vec![n, c], data),
            Op::GatherRows(src, idx),
            &[src],
        )
    }

    /// Rows `start..end` of `src`.
    pub fn slice_rows(&mut self, src: Var, start: usize, end: usize) -> Var {
        self.gather_rows(src, (start..end).map(Some).collect())
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.val(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.val(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); n * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let pv = self.val(*p);
            assert_eq!(pv.rows(), n, "concat_cols: row counts differ");
            for i in 0..n {
                data[i * total + offset..i * total + offset + w].copy_from_slice(pv.row(i));
            }
            offset += w;
        }
        self.derived(
            Tensor::from_parts(vec![n, total], data),
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.val(parts[0]).cols();
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let pv = self.val(*p);
            assert_eq!(pv.cols(), c, "concat_rows: widths differ");
            data.extend_from_slice(pv.data());
            n += pv.rows();
        }
        self.derived(
            Tensor::from_parts(vec![n, c], data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.val(a);
        let data = av.data().iter().map(|&x| gelu(x).0).collect();
        let shape = av.shape().to_vec();
        self.derived(Tensor::from_parts(shape, data), Op::Gelu(a), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.val(a);
        let c = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            super::softmax_in_place(row);
        }
        let shape = av.shape().to_vec();
        self.derived(Tensor::from_parts(shape, data), Op::Softmax(a), &[a])
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.val(x);
        let (n, d) = (xv.rows(), xv.cols());
        let (g, b) = (self.val(gamma).data(), self.val(beta).data());
        assert_eq!(g.len(), d, "layer_norm: gamma width");
        assert_eq!(b.len(), d, "layer_norm: beta width");
        let eps = T::of(LAYER_NORM_EPS);
        let dn = T::of(d as f64);
        let mut xhat = vec![T::zero(); n * d];
        let mut inv_std = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        self.derived(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Scaled dot-product multi-head attention of queries `q [n x H]` over
    /// keys/values `k, v [m x H]`; masked pairs get an additive -1e9 logit.
    /// With no keys the output is all zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &Mask) -> Var {
        let (qv, kv, vv) = (self.val(q), self.val(k), self.val(v));
        let (n, h, m) = (qv.rows(), qv.cols(), kv.rows());
        assert!(
            heads > 0 && h % heads == 0,
            "attention: {heads} heads do not divide width {h}"
        );
        assert_eq!(kv.cols(), h, "attention: key width");
        assert_eq!(vv.rows(), m, "attention: value rows");
        assert_eq!(vv.cols(), h, "attention: value width");
        assert_eq!((mask.rows(), mask.cols()), (n, m), "attention: mask shape");
        let dh = h / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let masked = T::of(MASKED_LOGIT);
        let mut out = vec![T::zero(); n * h];
        let mut probs = vec![T::zero(); heads * n * m];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        if m > 0 {
            for hd in 0..heads {
                let off = hd * dh;
                for i in 0..n {
                    let p = &mut probs[(hd * n + i) * m..(hd * n + i + 1) * m];
                    let qi = &qd[i * h + off..i * h + off + dh];
                    let allowed = mask.row(i);
                    for j in 0..m {
                        let s = dot(qi, &kd[j * h + off..j * h + off + dh]) * scale;
                        p[j] = if allowed[j] { s } else { s + masked };
                    }
                    super::softmax_in_place(p);
                    let o = &mut out[i * h + off..i * h + off + dh];
                    for j in 0..m {
                        axpy(p[j], &vd[j * h + off..j * h + off + dh], o);
                    }
                }
            }
        }
        self.derived(
            Tensor::from_parts(vec![n, h], out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Attention probabilities recorded by an [`Tape::attention`] node, laid
    /// out `[head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Inverted dropout: zeroes each entry with probability `p` and rescales the rest.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let av = self.val(a);
        let mult: Vec<T> = (0..av.len())
            .map(|_| if rng.gen_bool(p) { T::zero() } else { keep })
            .collect();
        let data = av.data().iter().zip(&mult).map(|(x, m)| *x * *m).collect();
        let shape = av.shape().to_vec();
        self.derived(Tensor::from_parts(shape, data), Op::Dropout(a, mult), &[a])
    }

    /// Summed softmax cross-entropy over the rows that have a target.
    ///
    /// With `allowed`, each row's softmax is taken over its permitted classes
    /// only; the target class is always treated as permitted.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: Vec<Option<usize>>,
        allowed: Option<&Mask>,
    ) -> Var {
        let lv = self.val(logits);
        let (n, c) = (lv.rows(), lv.cols());
        assert_eq!(targets.len(), n, "cross_entropy: one target slot per row");
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            assert!(t < c, "cross_entropy: target {t} out of range {c}");
            let row = lv.row(i);
            let ok = |j: usize| j == t || allowed.is_none_or(|m| m.get(i, j));
            let max = (0..c)
                .filter(|&j| ok(j))
                .map(|j| row[j])
                .fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            let p = &mut probs[i * c..(i + 1) * c];
            for j in 0..c {
                if ok(j) {
                    p[j] = (row[j] - max).exp();
                    sum += p[j];
                }
            }
            for v in p.iter_mut() {
                *v = *v / sum;
            }
            total += sum.ln() + max - row[t];
        }
        self.derived(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
            &[logits],
        )
    }

    /// Sum of all entries of every input.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let total = parts
            .iter()
            .map(|p| self.val(*p).data().iter().copied().sum::<T>())
            .sum::<T>();
        self.derived(Tensor::scalar(total), Op::Sum(parts.to_vec()), parts)
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every
    /// trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "backward",
                expected: vec![1],
                found: lv.shape().to_vec(),
            });
        }
        if !lv.is_finite() {
            return Err(TensorError::NonFinite { op: "loss" });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            self.backprop(i, g, &mut grads, &mut leaves);
        }
        Ok(Gradients { leaves })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop(
        &self,
        index: usize,
        g: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        leaves: &mut [Option<Vec<T>>],
    ) {
        let node = &self.nodes[index];
        match &node.op {
            Op::Leaf => leaves[index] = Some(g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    // ga += g · bᵀ
                    let bd = bv.data();
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            ga[i * k + p] += dot(gi, &bd[p * m..(p + 1) * m]);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    // gb += aᵀ · g
                    let ad = av.data();
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            axpy(ad[i * k + p], gi, &mut gb[p * m..(p + 1) * m]);
                        }
                    }
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.rows());
                let (ad, bd) = (av.data(), bv.data());
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_into(&g, bd, ga, n, m, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..n {
                        let ai = &ad[i * k..(i + 1) * k];
                        for j in 0..m {
                            axpy(g[i * m + j], ai, &mut gb[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.acc(grads, *v) {
                        axpy(T::one(), &g, gv);
                    }
                }
            }
            Op::AddBias(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(T::one(), &g, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let c = gb.len();
                    for row in g.chunks(c.max(1)) {
                        axpy(T::one(), row, gb);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(*s, &g, ga);
                }
            }
            Op::GatherRows(src, idx) => {
                let c = self.val(*src).cols();
                if let Some(gs) = self.acc(grads, *src) {
                    for (i, r) in idx.iter().enumerate() {
                        if let Some(r) = *r {
                            axpy(
                                T::one(),
                                &g[i * c..(i + 1) * c],
                                &mut gs[r * c..(r + 1) * c],
                            );
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let n = node.value.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.val(*p).cols();
                    if let Some(gp) = self.acc(grads, *p) {
                        for i in 0..n {
                            axpy(
                                T::one(),
                                &g[i * total + offset..i * total + offset + w],
                                &mut gp[i * w..(i + 1) * w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.val(*p).len();
                    if let Some(gp) = self.acc(grads, *p) {
                        axpy(T::one(), &g[offset..offset + len], gp);
                    }
                    offset += len;
                }
            }
            Op::Gelu(a) => {
                let av = self.val(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gi, x), out) in g.iter().zip(av.data()).zip(ga.iter_mut()) {
                        *out += *gi * gelu(*x).1;
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((yr, gr), out) in y.chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                        let s = dot(yr, gr);
                        for j in 0..c {
                            out[j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let n = node.value.rows();
                let gam = self.val(*gamma).data();
                if let Some(gg) = self.acc(grads, *gamma) {
                    for i in 0..n {
                        for j in 0..d {
                            gg[j] += g[i * d + j] * xhat[i * d + j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for row in g.chunks(d) {
                        axpy(T::one(), row, gb);
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let dn = T::of(d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for i in 0..n {
                        let xh = &xhat[i * d..(i + 1) * d];
                        for j in 0..d {
                            dxhat[j] = g[i * d + j] * gam[j];
                        }
                        let s1 = dxhat.iter().copied().sum::<T>();
                        let s2 = dot(&dxhat, xh);
                        let scale = inv_std[i] / dn;
                        for j in 0..d {
                            gx[i * d + j] += scale * (dn * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                self.attention_backward(&g, *q, *k, *v, *heads, probs, grads);
            }
            Op::Dropout(a, mult) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((o, gi), m) in ga.iter_mut().zip(&g).zip(mult) {
                        *o += *gi * *m;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.val(*logits).cols();
                let gs = g[0];
                if let Some(gl) = self.acc(grads, *logits) {
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..c {
                            gl[i * c + j] += gs * probs[i * c + j];
                        }
                        gl[i * c + t] -= gs;
                    }
                }
            }
            Op::Sum(parts) => {
                let gs = g[0];
                for p in parts {
                    if let Some(gp) = self.acc(grads, *p) {
                        for o in gp.iter_mut() {
                            *o += gs;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[T],
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (qv, kv, vv) = (self.val(q), self.val(k), self.val(v));
        let (n, h, m) = (qv.rows(), qv.cols(), kv.rows());
        if m == 0 {
            return;
        }
        let dh = h / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut gq = vec![T::zero(); n * h];
        let mut gk = vec![T::zero(); m * h];
        let mut gv = vec![T::zero(); m * h];
        let mut ds = vec![T::zero(); m];
        for hd in 0..heads {
            let off = hd * dh;
            for i in 0..n {
                let p = &probs[(hd * n + i) * m..(hd * n + i + 1) * m];
                let gi = &g[i * h + off..i * h + off + dh];
                let mut s = T::zero();
                for j in 0..m {
                    let dp = dot(gi, &vd[j * h + off..j * h + off + dh]);
                    ds[j] = dp;
                    s += p[j] * dp;
                    axpy(p[j], gi, &mut gv[j * h + off..j * h + off + dh]);
                }
                let qi = &qd[i * h + off..i * h + off + dh];
                for j in 0..m {
                    let d = p[j] * (ds[j] - s) * scale;
                    if d == T::zero() {
                        continue;
                    }
                    axpy(
                        d,
                        &kd[j * h + off..j * h + off + dh],
                        &mut gq[i * h + off..i * h + off + dh],
                    );
                    axpy(d, qi, &mut gk[j * h + off..j * h + off + dh]);
                }
            }
        }
        for (var, local) in [(q, gq), (k, gk), (v, gv)] {
            if let Some(acc) = self.acc(grads, var) {
                axpy(T::one(), &local, acc);
            }
        }
    }
}

/// Gradients of the trainable leaves of one backward pass.
pub struct Gradients<T> {
    leaves: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of leaf `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(v.0).and_then(|g| g.as_deref())
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

/// `y += a * x`.
#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

/// `out [n x m] += a [n x k] · b [k x m]`.
pub(crate) fn matmul_into<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    n: usize,
    k: usize,
    m: usize,
) {
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * m..(p + 1) * m], o);
        }
    }
}

/// GELU value and derivative (tanh approximation).
fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let x3 = x * x * x;
    let t = (c * (x + a * x3)).tanh();
    let value = half * x * (T::one() + t);
    let deriv = half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x);
    (value, deriv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        let mut tape = Tape::new();
        let (va, vb) = (tape.param(&a), tape.param(&b));
        let c = tape.matmul(va, vb);
        assert_eq!(tape.value(c).data(), &[17.0, 39.0]);
        let ct = tape.matmul_t(va, va);
        assert_eq!(tape.value(ct).data(), &[5.0, 11.0, 11.0, 25.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::new(vec![1, 2], vec![1.0f64, 2.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&x);
        let xx = tape.matmul_t(v, v);
        let loss = tape.sum(&[xx]);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(v).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[5, 64], |_| rng.gen_range(-3.0..3.0f64));
        let (g, b) = (Tensor::from_fn(&[64], |_| 1.0), Tensor::zeros(&[64]));
        let mut tape = Tape::new();
        let (vx, vg, vb) = (tape.param(&x), tape.param(&g), tape.param(&b));
        let y = tape.layer_norm(vx, vg, vb);
        for r in 0..5 {
            let row = tape.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 64.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn causal_attention_ignores_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[6, 8], &mut rng);
        let mut y = x.clone();
        for v in &mut y.data_mut()[4 * 8..] {
            *v += 0.5;
        }
        let run = |t: &Tensor<f64>| {
            let mut tape = Tape::new();
            let v = tape.frozen(t);
            let o = tape.attention(v, v, v, 2, &Mask::causal(6));
            tape.value(o).clone()
        };
        let (a, b) = (run(&x), run(&y));
        assert_eq!(&a.data()[..4 * 8], &b.data()[..4 * 8]);
        assert_ne!(&a.data()[4 * 8..], &b.data()[4 * 8..]);
    }

    #[test]
    fn attention_over_nothing_is_zero() {
        let q = Tensor::from_fn(&[2, 4], |i| i as f64);
        let empty = Tensor::<f64>::zeros(&[0, 4]);
        let mut tape = Tape::new();
        let (vq, ve) = (tape.param(&q), tape.frozen(&empty));
        let o = tape.attention(vq, ve, ve, 2, &Mask::full(2, 0));
        assert!(tape.value(o).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn masked_cross_entropy_normalizes_over_allowed() {
        let l = Tensor::new(vec![1, 3], vec![0.0f64, 0.0, 5.0]).unwrap();
        let mask = Mask::from_fn(1, 3, |_, c| c < 2);
        let mut tape = Tape::new();
        let v = tape.param(&l);
        let loss = tape.cross_entropy(v, vec![Some(0)], Some(&mask));
        assert!((tape.value(loss).data()[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_of_sum_is_sum_of_backwards() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random(&[4, 3], &mut rng);
        let x = random(&[2, 4], &mut rng);
        let grad = |which: u8| {
            let mut tape = Tape::new();
            let (vw, vx) = (tape.param(&w), tape.frozen(&x));
            let h = tape.matmul(vx, vw);
            let a = tape.cross_entropy(h, vec![Some(0), Some(2)], None);
            let g = tape.gelu(h);
            let b = tape.sum(&[g]);
            let loss = match which {
                0 => a,
                1 => b,
                _ => tape.sum(&[a, b]),
            };
            tape.backward(loss).unwrap().get(vw).unwrap().to_vec()
        };
        let (ga, gb, gs) = (grad(0), grad(1), grad(2));
        for i in 0..ga.len() {
            assert!((ga[i] + gb[i] - gs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_loss_is_reported() {
        let x = Tensor::from_parts(vec![1], vec![f64::NAN]);
        let mut tape = Tape::new();
        let v = tape.param(&x);
        let s = tape.sum(&[v]);
        assert_eq!(
            tape.backward(s).err(),
            Some(TensorError::NonFinite { op: "loss" })
        );
    }

    #[test]
    fn linear_function_checks_exactly() {
        let a = Tensor::new(vec![3], vec![0.5f64, -2.0, 3.0]).unwrap();
        let x = Tensor::new(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let report = grad_check(
            |tape, p| {
                let c = tape.constant(a.clone());
                let a2 = tape.matmul_t(c, p[0]);
                tape.sum(&[a2])
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
    }
}
