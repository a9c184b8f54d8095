//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are either
//! trainable (`param`) or constant; gradients only flow through nodes that
//! depend on at least one trainable leaf, so frozen sub-graphs cost nothing in
//! the backward sweep.

use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x + b` with `b` a `1 × C` row broadcast over rows.
    AddRow(Var, Var),
    /// `x ∘ s` with `s` a `1 × C` row broadcast over rows.
    MulRow(Var, Var),
    /// `x ∘ a` with `a` a `T × 1` column broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Recip(Var),
    Square(Var),
    ClampMin(Var, f64),
    SumRows(Var),
    MeanRows(Var),
    SumCols(Var),
    SumAll(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    TruncRows(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        kernel: usize,
        dilation: usize,
    },
    Smooth(Var, usize),
    Mix(Vec<Var>, Var),
    NormRows(Var, f64),
    AamLogits {
        cos: Var,
        labels: Vec<usize>,
        scale: f64,
        margin: f64,
    },
    CrossEntropy(Var, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulRow(a, b) | MulCol(a, b) => {
                vec![*a, *b]
            }
            Transpose(a) | Scale(a, _) | AddScalar(a) | Relu(a) | Sigmoid(a) | Tanh(a) | Exp(a) | Ln(a)
            | Sqrt(a) | Recip(a) | Square(a) | ClampMin(a, _) | SumRows(a) | MeanRows(a) | SumCols(a)
            | SumAll(a) | SoftmaxRows(a) | SoftmaxCols(a) | SliceCols(a, _) | Reshape(a) | TruncRows(a)
            | Smooth(a, _) | NormRows(a, _) | CrossEntropy(a, _) => vec![*a],
            AamLogits { cos, .. } => vec![*cos],
            ConcatCols(parts) => parts.clone(),
            Conv1d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Mix(layers, w) => {
                let mut v = layers.clone();
                v.push(*w);
                v
            }
        }
    }
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Clamp applied to cosine similarities before the angular margin.
pub const COS_CLAMP: f64 = 1e-7;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `like`'s shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Mat) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(like.rows(), like.cols()))
    }
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

    /// Which side of the kink every recorded relu input sits on, in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(x) = n.op {
                out.extend(self.value(x).data().iter().map(|&a| a > 0.0));
            }
        }
        out
    }

    pub fn param(&mut self, value: Mat) -> Var {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push_leaf(value, false)
    }

    pub fn leaf(&mut self, value: Mat, trainable: bool) -> Var {
        self.push_leaf(value, trainable)
    }

    fn push_leaf(&mut self, value: Mat, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m.get(0, 0)
    }

    // ------------------------------------------------------------------
    // Linear algebra
    // ------------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (xm, bm) = (self.value(x), self.value(b));
        assert_eq!(bm.shape(), (1, xm.cols()), "add_row: bias shape");
        let mut v = xm.clone();
        for r in 0..v.rows() {
            for (o, bv) in v.row_mut(r).iter_mut().zip(bm.data()) {
                *o += bv;
            }
        }
        self.push(v, Op::AddRow(x, b))
    }

    pub fn mul_row(&mut self, x: Var, s: Var) -> Var {
        let (xm, sm) = (self.value(x), self.value(s));
        assert_eq!(sm.shape(), (1, xm.cols()), "mul_row: scale shape");
        let mut v = xm.clone();
        for r in 0..v.rows() {
            for (o, sv) in v.row_mut(r).iter_mut().zip(sm.data()) {
                *o *= sv;
            }
        }
        self.push(v, Op::MulRow(x, s))
    }

    pub fn mul_col(&mut self, x: Var, a: Var) -> Var {
        let (xm, am) = (self.value(x), self.value(a));
        assert_eq!(am.shape(), (xm.rows(), 1), "mul_col: column shape");
        let mut v = xm.clone();
        for r in 0..v.rows() {
            let k = am.get(r, 0);
            for o in v.row_mut(r) {
                *o *= k;
            }
        }
        self.push(v, Op::MulCol(x, a))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).scale(k);
        self.push(v, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).map(|a| a + k);
        self.push(v, Op::AddScalar(x))
    }

    // ------------------------------------------------------------------
    // Elementwise non-linearities
    // ------------------------------------------------------------------

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        self.push(v, Op::Ln(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::sqrt);
        self.push(v, Op::Sqrt(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| 1.0 / a);
        self.push(v, Op::Recip(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        self.push(v, Op::Square(x))
    }

    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Var {
        let v = self.value(x).map(|a| a.max(lo));
        self.push(v, Op::ClampMin(x, lo))
    }

    // ------------------------------------------------------------------
    // Reductions and normalisations
    // ------------------------------------------------------------------

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_rows();
        self.push(v, Op::SumRows(x))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).mean_rows();
        self.push(v, Op::MeanRows(x))
    }

    /// Row sums as a `T × 1` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let v = Mat::from_vec(xm.rows(), 1, (0..xm.rows()).map(|r| xm.row(r).iter().sum()).collect());
        self.push(v, Op::SumCols(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Mat::filled(1, 1, self.value(x).sum());
        self.push(v, Op::SumAll(x))
    }

    /// Softmax across the columns of each row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut v = xm.clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::SoftmaxRows(x))
    }

    /// Softmax down the rows of each column.
    pub fn softmax_cols(&mut self, x: Var) -> Var {
        let v = {
            let mut t = self.value(x).transpose();
            for r in 0..t.rows() {
                softmax_in_place(t.row_mut(r));
            }
            t.transpose()
        };
        self.push(v, Op::SoftmaxCols(x))
    }

    /// Per-row standardisation `(x − mean) / sqrt(var + eps)` across columns.
    pub fn norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let xm = self.value(x);
        let mut v = xm.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for a in row.iter_mut() {
                *a = (*a - mean) * inv;
            }
        }
        self.push(v, Op::NormRows(x, eps))
    }

    // ------------------------------------------------------------------
    // Shape manipulation
    // ------------------------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Mat::zeros(rows, total);
        let mut off = 0;
        for p in parts {
            let pm = self.value(*p);
            assert_eq!(pm.rows(), rows, "concat_cols: row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + pm.cols()].copy_from_slice(pm.row(r));
            }
            off += pm.cols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xm = self.value(x);
        assert!(start + len <= xm.cols(), "slice_cols out of range");
        let mut v = Mat::zeros(xm.rows(), len);
        for r in 0..xm.rows() {
            v.row_mut(r).copy_from_slice(&xm.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(x, start))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(x).reshape(rows, cols);
        self.push(v, Op::Reshape(x))
    }

    /// Keeps the first `n` rows.
    pub fn trunc_rows(&mut self, x: Var, n: usize) -> Var {
        let xm = self.value(x);
        assert!(n <= xm.rows(), "trunc_rows beyond length");
        let v = Mat::from_vec(n, xm.cols(), xm.data()[..n * xm.cols()].to_vec());
        self.push(v, Op::TruncRows(x))
    }

    // ------------------------------------------------------------------
    // Sequence operators
    // ------------------------------------------------------------------

    /// 1-D convolution over rows (time), "same" length with edge-replicate
    /// padding so time-constant inputs stay constant.
    ///
    /// `w` is `(kernel·C_in) × C_out`, tap-major; `kernel` must be odd.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, kernel: usize, dilation: usize) -> Var {
        assert!(kernel % 2 == 1, "conv1d kernel must be odd");
        let xm = self.value(x);
        let wm = self.value(w);
        let cin = xm.cols();
        assert_eq!(wm.rows(), kernel * cin, "conv1d weight rows");
        let mut v = conv1d_forward(xm, wm, kernel, dilation);
        if let Some(b) = b {
            let bm = self.value(b);
            assert_eq!(bm.shape(), (1, v.cols()), "conv1d bias shape");
            for r in 0..v.rows() {
                for (o, bv) in v.row_mut(r).iter_mut().zip(bm.data()) {
                    *o += bv;
                }
            }
        }
        self.push(
            v,
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                dilation,
            },
        )
    }

    /// Centered moving average over `width` frames, renormalised at the edges.
    pub fn smooth(&mut self, x: Var, width: usize) -> Var {
        let v = smooth_forward(self.value(x), width);
        self.push(v, Op::Smooth(x, width))
    }

    /// Weighted sum `Σ_l w_l · X_l` of equally shaped layers, with `w` a
    /// `1 × L` row.
    pub fn mix(&mut self, layers: &[Var], w: Var) -> Var {
        let wm = self.value(w);
        assert_eq!(wm.shape(), (1, layers.len()), "mix: weight shape");
        let first = self.value(layers[0]);
        let mut v = Mat::zeros(first.rows(), first.cols());
        for (l, layer) in layers.iter().enumerate() {
            let k = wm.get(0, l);
            let lm = self.value(*layer);
            assert_eq!(lm.shape(), v.shape(), "mix: layer shape mismatch");
            for (o, a) in v.data_mut().iter_mut().zip(lm.data()) {
                *o += k * a;
            }
        }
        self.push(v, Op::Mix(layers.to_vec(), w))
    }

    // ------------------------------------------------------------------
    // Losses
    // ------------------------------------------------------------------

    /// Additive-angular-margin logits from a `B × n` cosine matrix.
    pub fn aam_logits(&mut self, cos: Var, labels: &[usize], scale: f64, margin: f64) -> Var {
        let cm = self.value(cos);
        assert_eq!(cm.rows(), labels.len(), "aam_logits: label count");
        let mut v = Mat::zeros(cm.rows(), cm.cols());
        for r in 0..cm.rows() {
            for c in 0..cm.cols() {
                let x = clamp_cos(cm.get(r, c));
                let z = if c == labels[r] { margin_cos(x, margin) } else { x };
                v.set(r, c, scale * z);
            }
        }
        self.push(
            v,
            Op::AamLogits {
                cos,
                labels: labels.to_vec(),
                scale,
                margin,
            },
        )
    }

    /// Mean softmax cross-entropy of `B × n` logits against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lm = self.value(logits);
        assert_eq!(lm.rows(), labels.len(), "cross_entropy: label count");
        let total: f64 = (0..lm.rows()).map(|r| row_cross_entropy(lm.row(r), labels[r])).sum();
        let v = Mat::filled(1, 1, total / lm.rows() as f64);
        self.push(v, Op::CrossEntropy(logits, labels.to_vec()))
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Gradients of the scalar node `loss` with respect to every node that
    /// depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward: loss must be scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].needs_grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let y = &node.value;
        let mut acc = |v: Var, d: Mat| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.matmul_nt(self.value(*b)));
                }
                if self.wants(*b) {
                    acc(*b, self.value(*a).matmul_tn(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                if self.wants(*b) {
                    acc(*b, g.sum_rows());
                }
            }
            Op::MulRow(x, s) => {
                let xm = self.value(*x);
                let sm = self.value(*s);
                if self.wants(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        for (o, sv) in dx.row_mut(r).iter_mut().zip(sm.data()) {
                            *o *= sv;
                        }
                    }
                    acc(*x, dx);
                }
                if self.wants(*s) {
                    acc(*s, g.zip_map(xm, |a, b| a * b).sum_rows());
                }
            }
            Op::MulCol(x, a) => {
                let xm = self.value(*x);
                let am = self.value(*a);
                if self.wants(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let k = am.get(r, 0);
                        for o in dx.row_mut(r) {
                            *o *= k;
                        }
                    }
                    acc(*x, dx);
                }
                if self.wants(*a) {
                    let da = (0..g.rows()).map(|r| crate::tensor::dot(g.row(r), xm.row(r))).collect();
                    acc(*a, Mat::from_vec(g.rows(), 1, da));
                }
            }
            Op::Scale(x, k) => acc(*x, g.scale(*k)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Relu(x) => acc(*x, g.zip_map(self.value(*x), |d, a| if a > 0.0 { d } else { 0.0 })),
            Op::Sigmoid(x) => acc(*x, g.zip_map(y, |d, s| d * s * (1.0 - s))),
            Op::Tanh(x) => acc(*x, g.zip_map(y, |d, t| d * (1.0 - t * t))),
            Op::Exp(x) => acc(*x, g.zip_map(y, |d, e| d * e)),
            Op::Ln(x) => acc(*x, g.zip_map(self.value(*x), |d, a| d / a)),
            Op::Sqrt(x) => acc(*x, g.zip_map(y, |d, s| d / (2.0 * s))),
            Op::Recip(x) => acc(*x, g.zip_map(y, |d, r| -d * r * r)),
            Op::Square(x) => acc(*x, g.zip_map(self.value(*x), |d, a| 2.0 * a * d)),
            Op::ClampMin(x, lo) => {
                let lo = *lo;
                acc(*x, g.zip_map(self.value(*x), |d, a| if a > lo { d } else { 0.0 }))
            }
            Op::SumRows(x) | Op::MeanRows(x) => {
                let rows = self.value(*x).rows();
                let k = if matches!(node.op, Op::MeanRows(_)) { 1.0 / rows as f64 } else { 1.0 };
                let mut dx = Mat::zeros(rows, g.cols());
                for r in 0..rows {
                    for (o, d) in dx.row_mut(r).iter_mut().zip(g.data()) {
                        *o = d * k;
                    }
                }
                acc(*x, dx);
            }
            Op::SumCols(x) => {
                let xm = self.value(*x);
                let mut dx = Mat::zeros(xm.rows(), xm.cols());
                for r in 0..xm.rows() {
                    let d = g.get(r, 0);
                    dx.row_mut(r).fill(d);
                }
                acc(*x, dx);
            }
            Op::SumAll(x) => {
                let xm = self.value(*x);
                acc(*x, Mat::filled(xm.rows(), xm.cols(), g.get(0, 0)));
            }
            Op::SoftmaxRows(x) => {
                let mut dx = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = crate::tensor::dot(g.row(r), y.row(r));
                    for ((o, &d), &s) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = s * (d - inner);
                    }
                }
                acc(*x, dx);
            }
            Op::SoftmaxCols(x) => {
                let mut dx = Mat::zeros(y.rows(), y.cols());
                for c in 0..y.cols() {
                    let inner: f64 = (0..y.rows()).map(|r| g.get(r, c) * y.get(r, c)).sum();
                    for r in 0..y.rows() {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - inner));
                    }
                }
                acc(*x, dx);
            }
            Op::NormRows(x, eps) => {
                let xm = self.value(*x);
                let mut dx = Mat::zeros(xm.rows(), xm.cols());
                let n = xm.cols() as f64;
                for r in 0..xm.rows() {
                    let row = xm.row(r);
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let g_mean = gr.iter().sum::<f64>() / n;
                    let gy_mean = crate::tensor::dot(gr, yr) / n;
                    for ((o, &d), &yh) in dx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = inv * (d - g_mean - yh * gy_mean);
                    }
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if self.wants(*p) {
                        let mut d = Mat::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        acc(*p, d);
                    }
                    off += cols;
                }
            }
            Op::SliceCols(x, start) => {
                let xm = self.value(*x);
                let mut dx = Mat::zeros(xm.rows(), xm.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, g.reshape(r, c));
            }
            Op::TruncRows(x) => {
                let xm = self.value(*x);
                let mut dx = Mat::zeros(xm.rows(), xm.cols());
                dx.data_mut()[..g.len()].copy_from_slice(g.data());
                acc(*x, dx);
            }
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                dilation,
            } => {
                let xm = self.value(*x);
                let wm = self.value(*w);
                if self.wants(*x) {
                    acc(*x, conv1d_backward_input(g, wm, xm.cols(), *kernel, *dilation));
                }
                if self.wants(*w) {
                    acc(*w, conv1d_backward_weight(g, xm, *kernel, *dilation));
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        acc(*b, g.sum_rows());
                    }
                }
            }
            Op::Smooth(x, width) => acc(*x, smooth_backward(g, *width)),
            Op::Mix(layers, w) => {
                let wm = self.value(*w);
                for (l, layer) in layers.iter().enumerate() {
                    if self.wants(*layer) {
                        acc(*layer, g.scale(wm.get(0, l)));
                    }
                }
                if self.wants(*w) {
                    let dw = layers
                        .iter()
                        .map(|layer| crate::tensor::dot(g.data(), self.value(*layer).data()))
                        .collect();
                    acc(*w, Mat::row_vector(dw));
                }
            }
            Op::AamLogits {
                cos,
                labels,
                scale,
                margin,
            } => {
                let cm = self.value(*cos);
                let mut dx = Mat::zeros(cm.rows(), cm.cols());
                for r in 0..cm.rows() {
                    for c in 0..cm.cols() {
                        let raw = cm.get(r, c);
                        let x = clamp_cos(raw);
                        let local = if x != raw {
                            0.0
                        } else if c == labels[r] {
                            margin_cos_derivative(x, *margin)
                        } else {
                            1.0
                        };
                        dx.set(r, c, g.get(r, c) * scale * local);
                    }
                }
                acc(*cos, dx);
            }
            Op::CrossEntropy(logits, labels) => {
                let lm = self.value(*logits);
                let k = g.get(0, 0) / lm.rows() as f64;
                let mut dx = Mat::zeros(lm.rows(), lm.cols());
                for r in 0..lm.rows() {
                    let row = dx.row_mut(r);
                    row.copy_from_slice(lm.row(r));
                    softmax_in_place(row);
                    row[labels[r]] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= k;
                    }
                }
                acc(*logits, dx);
            }
        }
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// `−log softmax(z)[y]`, accurate even when the target dominates.
pub fn row_cross_entropy(z: &[f64], y: usize) -> f64 {
    let zy = z[y];
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if zy >= m {
        let rest: f64 = z
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, &v)| (v - zy).exp())
            .sum();
        rest.ln_1p()
    } else {
        let s: f64 = z.iter().map(|&v| (v - m).exp()).sum();
        s.ln() - (zy - m)
    }
}

#[inline]
pub fn clamp_cos(c: f64) -> f64 {
    c.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
}

/// `cos(θ + m)` for `cos θ = c`, with the monotonic fallback
/// `c − m·sin m` once `θ + m` would pass π.
pub fn margin_cos(c: f64, m: f64) -> f64 {
    if m == 0.0 {
        return c;
    }
    if c > (std::f64::consts::PI - m).cos() {
        c * m.cos() - (1.0 - c * c).sqrt() * m.sin()
    } else {
        c - m * m.sin()
    }
}

fn margin_cos_derivative(c: f64, m: f64) -> f64 {
    if m == 0.0 {
        return 1.0;
    }
    if c > (std::f64::consts::PI - m).cos() {
        m.cos() + m.sin() * c / (1.0 - c * c).sqrt()
    } else {
        1.0
    }
}

fn tap_offset(j: usize, kernel: usize, dilation: usize) -> isize {
    (j as isize - (kernel as isize - 1) / 2) * dilation as isize
}

pub(crate) fn conv1d_forward(x: &Mat, w: &Mat, kernel: usize, dilation: usize) -> Mat {
    let (t_len, cin) = x.shape();
    let cout = w.cols();
    let mut y = Mat::zeros(t_len, cout);
    for j in 0..kernel {
        let off = tap_offset(j, kernel, dilation);
        for t in 0..t_len {
            let s = (t as isize + off).clamp(0, t_len as isize - 1);
            let xs = x.row(s as usize);
            let yr = y.row_mut(t);
            for (c, &xv) in xs.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wr = w.row(j * cin + c);
                for (o, &wv) in yr.iter_mut().zip(wr) {
                    *o += xv * wv;
                }
            }
        }
    }
    y
}

fn conv1d_backward_input(g: &Mat, w: &Mat, cin: usize, kernel: usize, dilation: usize) -> Mat {
    let t_len = g.rows();
    let mut dx = Mat::zeros(t_len, cin);
    for j in 0..kernel {
        let off = tap_offset(j, kernel, dilation);
        for t in 0..t_len {
            let s = (t as isize + off).clamp(0, t_len as isize - 1);
            let gr = g.row(t);
            let dxr = dx.row_mut(s as usize);
            for (c, o) in dxr.iter_mut().enumerate() {
                *o += crate::tensor::dot(gr, w.row(j * cin + c));
            }
        }
    }
    dx
}

fn conv1d_backward_weight(g: &Mat, x: &Mat, kernel: usize, dilation: usize) -> Mat {
    let (t_len, cin) = x.shape();
    let cout = g.cols();
    let mut dw = Mat::zeros(kernel * cin, cout);
    for j in 0..kernel {
        let off = tap_offset(j, kernel, dilation);
        for t in 0..t_len {
            let s = (t as isize + off).clamp(0, t_len as isize - 1);
            let gr = g.row(t);
            for (c, &xv) in x.row(s as usize).iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let dwr = dw.row_mut(j * cin + c);
                for (o, &gv) in dwr.iter_mut().zip(gr) {
                    *o += xv * gv;
                }
            }
        }
    }
    dw
}

fn smooth_window(t: usize, len: usize, width: usize) -> (usize, usize) {
    let half = width / 2;
    let lo = t.saturating_sub(half);
    let hi = (t + width - half).min(len);
    (lo, hi)
}

pub(crate) fn smooth_forward(x: &Mat, width: usize) -> Mat {
    if width <= 1 {
        return x.clone();
    }
    let (t_len, c) = x.shape();
    let mut y = Mat::zeros(t_len, c);
    for t in 0..t_len {
        let (lo, hi) = smooth_window(t, t_len, width);
        let k = 1.0 / (hi - lo) as f64;
        let yr = y.row_mut(t);
        for s in lo..hi {
            for (o, v) in yr.iter_mut().zip(x.row(s)) {
                *o += v * k;
            }
        }
    }
    y
}

fn smooth_backward(g: &Mat, width: usize) -> Mat {
    if width <= 1 {
        return g.clone();
    }
    let (t_len, c) = g.shape();
    let mut dx = Mat::zeros(t_len, c);
    for t in 0..t_len {
        let (lo, hi) = smooth_window(t, t_len, width);
        let k = 1.0 / (hi - lo) as f64;
        for s in lo..hi {
            let gr = g.row(t).to_vec();
            for (o, v) in dx.row_mut(s).iter_mut().zip(&gr) {
                *o += v * k;
            }
        }
    }
    dx
}
