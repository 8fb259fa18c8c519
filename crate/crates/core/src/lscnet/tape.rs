//! Reverse-mode differentiation over 2D `f64` tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar node with respect
//! to every node. Only the operations the network needs are provided.

use matrixmultiply::dgemm;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_rows<const C: usize>(rows: &[[f64; C]]) -> Self {
        Tensor::new(rows.len(), C, rows.iter().flatten().copied().collect())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `c = α·op(a)·op(b) + β·c` where op transposes when the flag is set.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    // op(a) is m×k; stored a is m×k (rsa=k, csa=1) or k×m transposed (rsa=1, csa=m)
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the strided extents checked by the callers' shapes
    unsafe {
        dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    ScaleRows(Var, Var),
    Recip(Var),
    Relu(Var),
    Tanh(Var),
    ChannelNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    FixedNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GroupMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Gather(Var, Vec<usize>),
    ConcatCols(Var, Var),
    GroupSoftmax(Var, usize),
    GroupWeightedSum(Var, Var, usize),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub const NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).shape();
        let (k2, n) = self.value(b).shape();
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &self.value(a).data, false, &self.value(b).data, false, 0.0, &mut out);
        self.push(Tensor::new(m, n, out), Op::MatMul(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shapes differ");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.rows, x.cols, data);
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds the single-row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!((1, xv.cols), bv.shape(), "bias must be one row of matching width");
        let mut data = xv.data.clone();
        for row in data.chunks_exact_mut(xv.cols.max(1)) {
            for (d, b) in row.iter_mut().zip(&bv.data) {
                *d += b;
            }
        }
        let t = Tensor::new(xv.rows, xv.cols, data);
        self.push(t, Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(xv.rows, xv.cols, xv.data.iter().map(|v| v * s).collect());
        self.push(t, Op::Scale(x, s))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(xv.rows, xv.cols, xv.data.iter().map(|v| v + c).collect());
        self.push(t, Op::AddConst(x))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), mask.len());
        let t = Tensor::new(xv.rows, xv.cols, xv.data.iter().zip(&mask).map(|(a, b)| a * b).collect());
        self.push(t, Op::MulConst(x, mask))
    }

    /// Row `i` of `x` times the scalar `s[i]`; `s` is a column.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!((xv.rows, 1), sv.shape(), "row scales must be a column");
        let mut data = xv.data.clone();
        for (row, &f) in data.chunks_exact_mut(xv.cols.max(1)).zip(&sv.data) {
            row.iter_mut().for_each(|d| *d *= f);
        }
        let t = Tensor::new(xv.rows, xv.cols, data);
        self.push(t, Op::ScaleRows(x, s))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(xv.rows, xv.cols, xv.data.iter().map(|v| 1.0 / v).collect());
        self.push(t, Op::Recip(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(xv.rows, xv.cols, xv.data.iter().map(|v| v.max(0.0)).collect());
        self.push(t, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(xv.rows, xv.cols, xv.data.iter().map(|v| v.tanh()).collect());
        self.push(t, Op::Tanh(x))
    }

    /// Per-column standardization over all rows, then `γ·x̂ + β`.
    /// The batch statistics are kept; see [`Tape::norm_stats`].
    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.shape();
        assert_eq!(self.value(gamma).shape(), (1, c));
        assert_eq!(self.value(beta).shape(), (1, c));
        let mut mean = vec![0.0; c];
        for row in xv.data.chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= r as f64);
        let mut var = vec![0.0; c];
        for row in xv.data.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= r as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = xv.data.clone();
        for row in xhat.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = g[j] * row[j] + b[j];
            }
        }
        self.push(
            Tensor::new(r, c, out),
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mean,
                var,
            },
        )
    }

    /// Column means and (biased) variances used by a [`Tape::channel_norm`] node.
    pub fn norm_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::ChannelNorm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// `γ·(x − mean)/√(var + ε) + β` with constant statistics.
    pub fn fixed_norm(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.shape();
        assert_eq!(self.value(gamma).shape(), (1, c));
        assert_eq!(self.value(beta).shape(), (1, c));
        assert!(mean.len() == c && var.len() == c);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = xv.data.clone();
        for row in xhat.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = g[j] * row[j] + b[j];
            }
        }
        self.push(
            Tensor::new(r, c, out),
            Op::FixedNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Channel-wise maximum over consecutive groups of `k` rows; first maximum wins.
    pub fn group_max(&mut self, x: Var, k: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.shape();
        assert!(k > 0 && r % k == 0, "rows must split into groups of k");
        let groups = r / k;
        let mut out = vec![f64::NEG_INFINITY; groups * c];
        let mut argmax = vec![0usize; groups * c];
        for g in 0..groups {
            for i in g * k..(g + 1) * k {
                for j in 0..c {
                    let v = xv.data[i * c + j];
                    if v > out[g * c + j] {
                        out[g * c + j] = v;
                        argmax[g * c + j] = i;
                    }
                }
            }
        }
        self.push(Tensor::new(groups, c, out), Op::GroupMax { x, argmax })
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let c = xv.cols;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(xv.row(i));
        }
        let t = Tensor::new(idx.len(), c, data);
        self.push(t, Op::Gather(x, idx.to_vec()))
    }

    /// Each row repeated `k` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, k: usize) -> Var {
        let idx: Vec<usize> = (0..self.value(x).rows).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        self.gather_rows(x, &idx)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows, bv.rows, "concat needs equal row counts");
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for i in 0..av.rows {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let t = Tensor::new(av.rows, av.cols + bv.cols, data);
        self.push(t, Op::ConcatCols(a, b))
    }

    /// Softmax of a column within consecutive groups of `k` rows.
    pub fn group_softmax(&mut self, s: Var, k: usize) -> Var {
        let sv = self.value(s);
        assert_eq!(sv.cols, 1, "scores must be a column");
        assert!(k > 0 && sv.rows % k == 0);
        let mut out = vec![0.0; sv.rows];
        for (g, chunk) in sv.data.chunks_exact(k).enumerate() {
            let m = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (i, v) in chunk.iter().enumerate() {
                let e = (v - m).exp();
                out[g * k + i] = e;
                z += e;
            }
            out[g * k..(g + 1) * k].iter_mut().for_each(|e| *e /= z);
        }
        let t = Tensor::new(sv.rows, 1, out);
        self.push(t, Op::GroupSoftmax(s, k))
    }

    /// `Σ_i w_i x_i` within consecutive groups of `k` rows; `w` is a column.
    pub fn group_weighted_sum(&mut self, w: Var, x: Var, k: usize) -> Var {
        let (wv, xv) = (self.value(w), self.value(x));
        assert_eq!((xv.rows, 1), wv.shape());
        assert!(k > 0 && xv.rows % k == 0);
        let c = xv.cols;
        let groups = xv.rows / k;
        let mut out = vec![0.0; groups * c];
        for i in 0..xv.rows {
            let g = i / k;
            for j in 0..c {
                out[g * c + j] += wv.data[i] * xv.data[i * c + j];
            }
        }
        let t = Tensor::new(groups, c, out);
        self.push(t, Op::GroupWeightedSum(w, x, k))
    }

    /// Mean over rows of the weighted cross-entropy of each row of logits
    /// against its target class.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        assert!(targets.len() == lv.rows && weights.len() == lv.rows, "one target and weight per row");
        let mut probs = Vec::with_capacity(lv.len());
        let mut loss = 0.0;
        for (i, row) in lv.data.chunks_exact(lv.cols).enumerate() {
            assert!(targets[i] < lv.cols);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            probs.extend(row.iter().map(|v| (v - m).exp() / z));
            loss += weights[i] * (m + z.ln() - row[targets[i]]);
        }
        let loss = loss / lv.rows as f64;
        self.push(
            Tensor::new(1, 1, vec![loss]),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    /// Gradients of the scalar `output` with respect to every node (`None` when unreached).
    pub fn backward(&self, output: Var) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::filled(1, 1, 1.0));
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        fn acc(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize), f: impl FnOnce(&mut [f64])) {
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
            f(&mut slot.data);
        }
        let node = &self.nodes[id];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows, av.cols, bv.cols);
                acc(grads, *a, av.shape(), |d| gemm(m, n, k, 1.0, &g.data, false, &bv.data, true, 1.0, d));
                acc(grads, *b, bv.shape(), |d| gemm(k, m, n, 1.0, &av.data, true, &g.data, false, 1.0, d));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(grads, *v, y.shape(), |d| d.iter_mut().zip(&g.data).for_each(|(d, g)| *d += g));
                }
            }
            Op::Sub(a, b) => {
                acc(grads, *a, y.shape(), |d| d.iter_mut().zip(&g.data).for_each(|(d, g)| *d += g));
                acc(grads, *b, y.shape(), |d| d.iter_mut().zip(&g.data).for_each(|(d, g)| *d -= g));
            }
            Op::AddRow(x, bias) => {
                acc(grads, *x, y.shape(), |d| d.iter_mut().zip(&g.data).for_each(|(d, g)| *d += g));
                let c = y.cols;
                acc(grads, *bias, (1, c), |d| {
                    for row in g.data.chunks_exact(c.max(1)) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Scale(x, s) => {
                acc(grads, *x, y.shape(), |d| d.iter_mut().zip(&g.data).for_each(|(d, g)| *d += s * g));
            }
            Op::AddConst(x) => {
                acc(grads, *x, y.shape(), |d| d.iter_mut().zip(&g.data).for_each(|(d, g)| *d += g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(grads, *a, y.shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data[i] * bv.data[i];
                    }
                });
                acc(grads, *b, y.shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data[i] * av.data[i];
                    }
                });
            }
            Op::MulConst(x, mask) => {
                acc(grads, *x, y.shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data[i] * mask[i];
                    }
                });
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let c = xv.cols;
                acc(grads, *x, xv.shape(), |d| {
                    for i in 0..xv.rows {
                        for j in 0..c {
                            d[i * c + j] += g.data[i * c + j] * sv.data[i];
                        }
                    }
                });
                acc(grads, *s, sv.shape(), |d| {
                    for i in 0..xv.rows {
                        d[i] += (0..c).map(|j| g.data[i * c + j] * xv.data[i * c + j]).sum::<f64>();
                    }
                });
            }
            Op::Recip(x) => {
                acc(grads, *x, y.shape(), |d| {
                    for i in 0..d.len() {
                        d[i] -= g.data[i] * y.data[i] * y.data[i];
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(grads, *x, y.shape(), |d| {
                    for i in 0..d.len() {
                        if xv.data[i] > 0.0 {
                            d[i] += g.data[i];
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                acc(grads, *x, y.shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
                    }
                });
            }
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                ..
            } => {
                let (r, c) = y.shape();
                let gv = &self.value(*gamma).data;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        let gij = g.data[i * c + j];
                        dgamma[j] += gij * xhat[i * c + j];
                        dbeta[j] += gij;
                        let dxh = gij * gv[j];
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * xhat[i * c + j];
                    }
                }
                let rf = r as f64;
                acc(grads, *x, (r, c), |d| {
                    for i in 0..r {
                        for j in 0..c {
                            let dxh = g.data[i * c + j] * gv[j];
                            d[i * c + j] += inv_std[j] / rf
                                * (rf * dxh - sum_dxhat[j] - xhat[i * c + j] * sum_dxhat_xhat[j]);
                        }
                    }
                });
                acc(grads, *gamma, (1, c), |d| d.iter_mut().zip(&dgamma).for_each(|(d, g)| *d += g));
                acc(grads, *beta, (1, c), |d| d.iter_mut().zip(&dbeta).for_each(|(d, g)| *d += g));
            }
            Op::FixedNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = y.shape();
                let gv = &self.value(*gamma).data;
                acc(grads, *x, (r, c), |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g.data[i * c + j] * gv[j] * inv_std[j];
                        }
                    }
                });
                acc(grads, *gamma, (1, c), |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[j] += g.data[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
                acc(grads, *beta, (1, c), |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[j] += g.data[i * c + j];
                        }
                    }
                });
            }
            Op::GroupMax { x, argmax } => {
                let c = y.cols;
                let shape = self.value(*x).shape();
                acc(grads, *x, shape, |d| {
                    for (o, &src) in argmax.iter().enumerate() {
                        d[src * c + o % c] += g.data[o];
                    }
                });
            }
            Op::Gather(x, idx) => {
                let shape = self.value(*x).shape();
                let c = shape.1;
                acc(grads, *x, shape, |d| {
                    for (o, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            d[src * c + j] += g.data[o * c + j];
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).cols, self.value(*b).cols);
                let r = y.rows;
                acc(grads, *a, (r, ca), |d| {
                    for i in 0..r {
                        for j in 0..ca {
                            d[i * ca + j] += g.data[i * (ca + cb) + j];
                        }
                    }
                });
                acc(grads, *b, (r, cb), |d| {
                    for i in 0..r {
                        for j in 0..cb {
                            d[i * cb + j] += g.data[i * (ca + cb) + ca + j];
                        }
                    }
                });
            }
            Op::GroupSoftmax(s, k) => {
                acc(grads, *s, y.shape(), |d| {
                    for (gi, (ys, gs)) in y.data.chunks_exact(*k).zip(g.data.chunks_exact(*k)).enumerate() {
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for i in 0..*k {
                            d[gi * k + i] += ys[i] * (gs[i] - dot);
                        }
                    }
                });
            }
            Op::GroupWeightedSum(w, x, k) => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                let c = xv.cols;
                acc(grads, *w, wv.shape(), |d| {
                    for i in 0..xv.rows {
                        let gr = i / k;
                        d[i] += (0..c).map(|j| g.data[gr * c + j] * xv.data[i * c + j]).sum::<f64>();
                    }
                });
                acc(grads, *x, xv.shape(), |d| {
                    for i in 0..xv.rows {
                        let gr = i / k;
                        for j in 0..c {
                            d[i * c + j] += wv.data[i] * g.data[gr * c + j];
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
                weights,
            } => {
                let shape = self.value(*logits).shape();
                let rows = shape.0 as f64;
                acc(grads, *logits, shape, |d| {
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let scale = g.data[0] * w / rows;
                        for j in 0..shape.1 {
                            let p = probs[i * shape.1 + j];
                            d[i * shape.1 + j] += scale * (p - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
        }
    }
}
