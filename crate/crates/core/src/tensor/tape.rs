use super::kernels::{self, gemm};
use super::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxMasked(Var),
    ConcatLast(Vec<Var>, Vec<usize>),
    SliceLast(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows {
        src: Var,
        idx: Vec<usize>,
        frozen: Option<usize>,
    },
    Reshape(Var),
    SelectRows {
        take_first: Vec<bool>,
        a: Var,
        b: Var,
    },
    SumAll(Var),
    BceMean {
        p: Var,
        labels: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of executed operations. Inputs always precede the nodes
/// that consume them, so a single reverse sweep is a valid backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Accumulated gradients of a scalar with respect to tape leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not require grad or did not
    /// contribute to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn rows_of(t: &Tensor) -> usize {
    t.shape().first().copied().unwrap_or(1)
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(format!("output of {op:?}")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Per-group product of `[g, m, k]` and `[g, k, n]` (or `[g, n, k]` when
    /// `trans_b`, multiplying by its transpose).
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (g, m, k) = av.dims3("batch_matmul")?;
        let (g2, b1, b2) = bv.dims3("batch_matmul")?;
        let (kb, n) = if trans_b { (b2, b1) } else { (b1, b2) };
        if g != g2 || k != kb {
            return Err(TensorError::ShapeMismatch {
                op: "batch_matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; g * m * n];
        for gi in 0..g {
            gemm(
                m,
                k,
                n,
                &av.data()[gi * m * k..(gi + 1) * m * k],
                false,
                &bv.data()[gi * k * n..(gi + 1) * k * n],
                trans_b,
                &mut out[gi * m * n..(gi + 1) * m * n],
                false,
            );
        }
        let out = Tensor::new(vec![g, m, n], out)?;
        self.push(out, Op::BatchMatMul { a, b, trans_b }, &[a, b])
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a vector along the last axis of every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let av = self.value(a);
        let rv = self.value(row);
        if rv.numel() != av.last_dim()
            || rv.rank() > 1 && rv.shape()[..rv.rank() - 1].iter().any(|&d| d != 1)
        {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: av.shape().to_vec(),
                right: rv.shape().to_vec(),
            });
        }
        let w = av.last_dim();
        let mut data = av.data().to_vec();
        if w > 0 {
            for chunk in data.chunks_exact_mut(w) {
                for (x, r) in chunk.iter_mut().zip(rv.data()) {
                    *x += r;
                }
            }
        }
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    /// `alpha * a + beta`, element-wise.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| alpha * x + beta).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::Affine(a, alpha), &[a])
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.affine(a, alpha, 0.0)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Softmax over the last axis; masked positions are exactly zero and
    /// receive no gradient.
    pub fn softmax_masked(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let out = self.value(a).softmax_masked(mask)?;
        self.push(out, Op::SoftmaxMasked(a), &[a])
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let shapes: Vec<&[usize]> = parts.iter().map(|v| self.shape(*v)).collect();
        let (shape, widths) = kernels::concat_last_shape(&shapes)?;
        let datas: Vec<&[f64]> = parts.iter().map(|v| self.value(*v).data()).collect();
        let out = Tensor::new(shape, kernels::concat_last(&datas, &widths))?;
        self.push(out, Op::ConcatLast(parts.to_vec(), widths), parts)
    }

    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let w = av.last_dim();
        if start + len > w || av.rank() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_last",
                left: av.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(shape, kernels::slice_last(av.data(), w, start, len))?;
        self.push(out, Op::SliceLast(a, start), &[a])
    }

    /// Concatenation along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if first.is_empty() {
            return Err(TensorError::Rank {
                op: "concat_rows",
                expected: 1,
                shape: first,
            });
        }
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: first,
                    right: s.to_vec(),
                });
            }
            rows += s[0];
            data.extend_from_slice(self.value(*p).data());
        }
        let mut shape = first;
        shape[0] = rows;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Gathers first-axis slices of `src`. Rows equal to `frozen` are read
    /// normally but never receive gradient.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize], frozen: Option<usize>) -> Result<Var> {
        let sv = self.value(src);
        let rows = rows_of(sv);
        let width = if rows == 0 { 0 } else { sv.numel() / rows };
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { id: i, rows });
            }
            data.extend_from_slice(&sv.data()[i * width..(i + 1) * width]);
        }
        let mut shape = sv.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = idx.len();
        let out = Tensor::new(shape, data)?;
        self.push(
            out,
            Op::GatherRows {
                src,
                idx: idx.to_vec(),
                frozen,
            },
            &[src],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Row-wise choice: row `r` comes from `a` when `take_first[r]`, else from `b`.
    pub fn select_rows(&mut self, take_first: &[bool], a: Var, b: Var) -> Result<Var> {
        self.same_shape("select_rows", a, b)?;
        let av = self.value(a);
        let rows = rows_of(av);
        if take_first.len() != rows {
            return Err(TensorError::MaskLength {
                expected: rows,
                actual: take_first.len(),
            });
        }
        let width = if rows == 0 { 0 } else { av.numel() / rows };
        let bv = self.value(b);
        let mut data = Vec::with_capacity(av.numel());
        for (r, &first) in take_first.iter().enumerate() {
            let src = if first { av } else { bv };
            data.extend_from_slice(&src.data()[r * width..(r + 1) * width]);
        }
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(
            out,
            Op::SelectRows {
                take_first: take_first.to_vec(),
                a,
                b,
            },
            &[a, b],
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    /// Mean binary cross-entropy with predictions clamped to `[CLAMP, 1-CLAMP]`.
    pub fn bce_mean(&mut self, p: Var, labels: &[f64]) -> Result<Var> {
        let pv = self.value(p);
        if pv.numel() != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_mean",
                left: pv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let loss = bce_mean(pv.data(), labels)?;
        self.push(
            Tensor::scalar(loss),
            Op::BceMean {
                p,
                labels: labels.to_vec(),
            },
            &[p],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (g, &n.op) {
                (Some(g), Op::Leaf) => {
                    Some(Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(m, n, k, g, false, bv.data(), true, ga, true);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(k, m, n, av.data(), true, g, false, gb, true);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (gn, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = out.shape()[2];
                if let Some(ga) = self.slot(grads, *a) {
                    for gi in 0..gn {
                        gemm(
                            m,
                            n,
                            k,
                            &g[gi * m * n..(gi + 1) * m * n],
                            false,
                            &bv.data()[gi * k * n..(gi + 1) * k * n],
                            !trans_b,
                            &mut ga[gi * m * k..(gi + 1) * m * k],
                            true,
                        );
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for gi in 0..gn {
                        let a_g = &av.data()[gi * m * k..(gi + 1) * m * k];
                        let g_g = &g[gi * m * n..(gi + 1) * m * n];
                        let gb_g = &mut gb[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            gemm(n, m, k, g_g, true, a_g, false, gb_g, true);
                        } else {
                            gemm(k, m, n, a_g, true, g_g, false, gb_g, true);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().map(|x| -x));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, g.iter().zip(bv).map(|(x, y)| x * y));
                self.acc(grads, *b, g.iter().zip(av).map(|(x, y)| x * y));
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.iter().copied());
                if let Some(gr) = self.slot(grads, *row) {
                    let w = gr.len();
                    if w > 0 {
                        for chunk in g.chunks_exact(w) {
                            for (acc, x) in gr.iter_mut().zip(chunk) {
                                *acc += x;
                            }
                        }
                    }
                }
            }
            Op::Affine(a, alpha) => self.acc(grads, *a, g.iter().map(|x| alpha * x)),
            Op::Sigmoid(a) => self.acc(
                grads,
                *a,
                g.iter().zip(out.data()).map(|(x, y)| x * y * (1.0 - y)),
            ),
            Op::Tanh(a) => self.acc(
                grads,
                *a,
                g.iter().zip(out.data()).map(|(x, y)| x * (1.0 - y * y)),
            ),
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.acc(
                    grads,
                    *a,
                    g.iter()
                        .zip(av)
                        .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 }),
                );
            }
            Op::SoftmaxMasked(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let w = out.last_dim();
                    if w > 0 {
                        for ((y, gy), gx) in out
                            .data()
                            .chunks_exact(w)
                            .zip(g.chunks_exact(w))
                            .zip(ga.chunks_exact_mut(w))
                        {
                            let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                            for ((p, q), acc) in y.iter().zip(gy).zip(gx.iter_mut()) {
                                *acc += p * (q - dot);
                            }
                        }
                    }
                }
            }
            Op::ConcatLast(parts, widths) => {
                let total: usize = widths.iter().sum();
                let mut start = 0;
                for (p, &w) in parts.iter().zip(widths) {
                    if let Some(gp) = self.slot(grads, *p) {
                        if w > 0 {
                            for (row, dst) in g.chunks_exact(total).zip(gp.chunks_exact_mut(w)) {
                                for (d, s) in dst.iter_mut().zip(&row[start..start + w]) {
                                    *d += s;
                                }
                            }
                        }
                    }
                    start += w;
                }
            }
            Op::SliceLast(a, start) => {
                let len = out.last_dim();
                let w = self.value(*a).last_dim();
                if let Some(ga) = self.slot(grads, *a) {
                    if len > 0 {
                        for (src, dst) in g.chunks_exact(len).zip(ga.chunks_exact_mut(w)) {
                            for (d, s) in dst[*start..start + len].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    self.acc(grads, *p, g[offset..offset + n].iter().copied());
                    offset += n;
                }
            }
            Op::GatherRows { src, idx, frozen } => {
                if let Some(gs) = self.slot(grads, *src) {
                    let width = if idx.is_empty() {
                        0
                    } else {
                        g.len() / idx.len()
                    };
                    for (r, &i) in idx.iter().enumerate() {
                        if Some(i) == *frozen {
                            continue;
                        }
                        for (d, s) in gs[i * width..(i + 1) * width]
                            .iter_mut()
                            .zip(&g[r * width..(r + 1) * width])
                        {
                            *d += s;
                        }
                    }
                }
            }
            Op::Reshape(a) => self.acc(grads, *a, g.iter().copied()),
            Op::SelectRows { take_first, a, b } => {
                let rows = take_first.len();
                let width = if rows == 0 { 0 } else { g.len() / rows };
                for (target, want) in [(*a, true), (*b, false)] {
                    if let Some(gt) = self.slot(grads, target) {
                        for (r, &first) in take_first.iter().enumerate() {
                            if first == want {
                                for (d, s) in gt[r * width..(r + 1) * width]
                                    .iter_mut()
                                    .zip(&g[r * width..(r + 1) * width])
                                {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let n = self.value(*a).numel();
                self.acc(grads, *a, std::iter::repeat_n(g[0], n));
            }
            Op::BceMean { p, labels } => {
                let pv = self.value(*p).data();
                let n = labels.len() as f64;
                self.acc(
                    grads,
                    *p,
                    pv.iter().zip(labels).map(|(&q, &y)| {
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&q) {
                            0.0
                        } else {
                            -g[0] * (y / q - (1.0 - y) / (1.0 - q)) / n
                        }
                    }),
                );
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: impl Iterator<Item = f64>) {
        if let Some(slot) = self.slot(grads, v) {
            for (d, s) in slot.iter_mut().zip(contrib) {
                *d += s;
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-7;

pub(crate) fn bce_mean(p: &[f64], labels: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (&q, &y) in p.iter().zip(labels) {
        if y != 0.0 && y != 1.0 {
            return Err(TensorError::InvalidLabel(y));
        }
        let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        sum -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
    }
    Ok(sum / labels.len().max(1) as f64)
}
