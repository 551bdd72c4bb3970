use super::kernels::{self, ConvDims};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRowBias { x: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols { parts: Vec<Var> },
    SliceCols { x: Var, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    InterleaveRows { parts: Vec<Var> },
    Gather { x: Var, idx: Vec<usize> },
    Reshape(Var),
    Conv2d { input: Var, kernel: Var, bias: Option<Var> },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    LogSumExpRows { x: Var, mask: Option<Vec<bool>> },
    SoftmaxRows { x: Var },
    AttendSteps { weights: Var, steps: Var },
    PairwiseSum { a: Var, b: Var },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in execution order; inputs always precede their
/// consumers, so a reverse scan is a valid backward schedule.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        rows_cols(self.shape(v)).ok_or_else(|| {
            Error::dim(format!("{what} expects a matrix, got shape {:?}", self.shape(v)))
        })
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `a · b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, false)
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, true)
    }

    fn matmul_ex(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.matrix(a, "matmul")?;
        let (br, bc) = self.matrix(b, "matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions disagree: {:?}{} vs {:?}{}",
                self.shape(a),
                if ta { "ᵀ" } else { "" },
                self.shape(b),
                if tb { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            &mut out,
            false,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, ta, tb },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_op(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, what: &str) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.requires_grad(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// `x[r, j] + bias[j]` for `x: [rows, n]`, `bias: [n]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.matrix(x, "add_row_bias")?;
        if self.shape(bias) != [n] {
            return Err(Error::dim(format!(
                "row bias {:?} does not match {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data();
        for row in value.data_mut().chunks_mut(n) {
            for (v, &bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddRowBias { x, bias }, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let rg = self.requires_grad(a);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat of zero tensors"));
        }
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix(p, "concat")?;
            if *rows.get_or_insert(r) != r {
                return Err(Error::dim(format!(
                    "concat batch mismatch: {:?} vs {:?}",
                    self.shape(parts[0]),
                    self.shape(p)
                )));
            }
            widths.push(c);
        }
        let rows = rows.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix(x, "slice_cols")?;
        if len == 0 || start + len > cols {
            return Err(Error::dim(format!(
                "column slice {start}..{} out of range for {:?}",
                start + len,
                self.shape(x)
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![rows, len], out)?, Op::SliceCols { x, start }, rg))
    }

    /// Splits a matrix into column blocks of the given widths.
    pub fn split_cols(&mut self, x: Var, widths: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice_cols(x, start, w)?);
            start += w;
        }
        Ok(out)
    }

    /// Gathers rows of a matrix (rows may repeat).
    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let (n_rows, cols) = self.matrix(x, "select_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::dim(format!("row {bad} out of range for {:?}", self.shape(x))));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            out.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![rows.len(), cols], out)?, Op::SelectRows { x, rows }, rg))
    }

    /// Given `T` matrices of shape `[B, n]`, builds `[B * T, n]` whose row
    /// `b * T + t` is row `b` of part `t`.
    pub fn interleave_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("interleave of zero tensors"))?;
        let (b, n) = self.matrix(first, "interleave_rows")?;
        for &p in parts {
            if self.shape(p) != [b, n] {
                return Err(Error::dim(format!(
                    "interleave shape mismatch: {:?} vs {:?}",
                    self.shape(first),
                    self.shape(p)
                )));
            }
        }
        let steps = parts.len();
        let mut out = vec![T::zero(); b * steps * n];
        for (t, &p) in parts.iter().enumerate() {
            let src = self.value(p).data();
            for r in 0..b {
                out[(r * steps + t) * n..(r * steps + t + 1) * n]
                    .copy_from_slice(&src[r * n..(r + 1) * n]);
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(vec![b * steps, n], out)?,
            Op::InterleaveRows {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Flat gather into a vector of length `idx.len()`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let n = self.value(x).len();
        if idx.is_empty() {
            return Err(Error::dim("gather with no indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::dim(format!("gather index {bad} out of range for {:?}", self.shape(x))));
        }
        let src = self.value(x).data();
        let out = idx.iter().map(|&i| src[i]).collect();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![idx.len()], out)?, Op::Gather { x, idx }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// 3x3 cross-correlation with zero padding 1 and optional per-channel
    /// bias. `input: [B, Cin, H, W]`, `kernel: [Cout, Cin, 3, 3]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (batch, c_in, h, w) = match *self.shape(input) {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::dim(format!("conv2d input must be 4-d, got {:?}", self.shape(input)))),
        };
        let c_out = match *self.shape(kernel) {
            [o, c, 3, 3] if c == c_in => o,
            _ => {
                return Err(Error::dim(format!(
                    "conv2d kernel {:?} incompatible with input {:?} (need [Cout, {c_in}, 3, 3])",
                    self.shape(kernel),
                    self.shape(input)
                )))
            }
        };
        if let Some(bv) = bias {
            if self.shape(bv) != [c_out] {
                return Err(Error::dim(format!("conv2d bias {:?} needs [{c_out}]", self.shape(bv))));
            }
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            h,
            w,
        };
        let mut out = vec![T::zero(); batch * c_out * h * w];
        kernels::conv3x3_forward(
            dims,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            Tensor::new(vec![batch, c_out, h, w], out)?,
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            rg,
        ))
    }

    /// 2x2 max pooling, stride 2, over the last two axes of a 4-d tensor.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = match *self.shape(input) {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::dim(format!("maxpool2d input must be 4-d, got {:?}", self.shape(input)))),
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!("maxpool2d needs even spatial dims, got {h}x{w}")));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(b * c, h, w, self.value(input).data());
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::new(vec![b, c, h / 2, w / 2], out)?,
            Op::MaxPool2d { input, argmax },
            rg,
        ))
    }

    /// Row-wise `ln Σ exp`, optionally restricted to entries where `mask`
    /// is true. Returns `[rows]`. Every row must keep at least one entry.
    pub fn logsumexp_rows(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let (rows, cols) = self.matrix(x, "logsumexp_rows")?;
        if let Some(m) = &mask {
            if m.len() != rows * cols {
                return Err(Error::dim("logsumexp mask size mismatch"));
            }
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m[r * cols + j]);
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or_else(|| Error::dim(format!("logsumexp row {r} has no unmasked entries")))?;
            let s: T = (0..cols).filter(|&j| keep(j)).map(|j| (row[j] - max).exp()).sum();
            out.push(max + s.ln());
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![rows], out)?, Op::LogSumExpRows { x, mask }, rg))
    }

    /// `ln Σ exp` of all entries of a vector, as a scalar.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let row = self.reshape(x, vec![1, n])?;
        let out = self.logsumexp_rows(row, None)?;
        self.reshape(out, Vec::<usize>::new())
    }

    /// Row-wise softmax; masked-out entries get weight exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (rows, cols) = self.matrix(x, "softmax_rows")?;
        if mask.is_some_and(|m| m.len() != rows * cols) {
            return Err(Error::dim("softmax mask size mismatch"));
        }
        let src = self.value(x).data();
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let keep = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| src[r * cols + j])
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or_else(|| Error::dim(format!("softmax row {r} has no unmasked entries")))?;
            let mut total = T::zero();
            for j in (0..cols).filter(|&j| keep(j)) {
                let e = (src[r * cols + j] - max).exp();
                out[r * cols + j] = e;
                total += e;
            }
            for v in &mut out[r * cols..(r + 1) * cols] {
                *v = *v / total;
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, Op::SoftmaxRows { x }, rg))
    }

    /// `out[b] = Σ_t weights[b, t] · steps[b * T + t]` for `weights: [B, T]`
    /// and `steps: [B * T, n]`.
    pub fn attend_steps(&mut self, weights: Var, steps: Var) -> Result<Var> {
        let (b, t) = self.matrix(weights, "attend_steps")?;
        let (rows, n) = self.matrix(steps, "attend_steps")?;
        if rows != b * t {
            return Err(Error::dim(format!(
                "attend_steps: weights {:?} incompatible with steps {:?}",
                self.shape(weights),
                self.shape(steps)
            )));
        }
        let wv = self.value(weights).data();
        let sv = self.value(steps).data();
        let mut out = vec![T::zero(); b * n];
        for r in 0..b {
            let dst = &mut out[r * n..(r + 1) * n];
            for s in 0..t {
                let a = wv[r * t + s];
                let src = &sv[(r * t + s) * n..(r * t + s + 1) * n];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += a * v;
                }
            }
        }
        let rg = self.any_grad(&[weights, steps]);
        Ok(self.push(Tensor::new(vec![b, n], out)?, Op::AttendSteps { weights, steps }, rg))
    }

    /// `out[i * M + j] = a[i] + b[j]` for `a: [N, h]`, `b: [M, h]`.
    pub fn pairwise_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ha) = self.matrix(a, "pairwise_sum")?;
        let (nb, hb) = self.matrix(b, "pairwise_sum")?;
        if ha != hb {
            return Err(Error::dim(format!(
                "pairwise_sum widths differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(na * nb * ha);
        for i in 0..na {
            let ai = &av[i * ha..(i + 1) * ha];
            for j in 0..nb {
                out.extend(ai.iter().zip(&bv[j * ha..(j + 1) * ha]).map(|(&x, &y)| x + y));
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![na * nb, ha], out)?, Op::PairwiseSum { a, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::from_usize(v.len()).unwrap_or_else(T::one);
        let s: T = v.data().iter().copied().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s / n), Op::Mean(x), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (m, n) = rows_cols(node.value.shape()).expect("matrix");
                let ash = self.shape(*a);
                let k = if *ta { ash[0] } else { ash[1] };
                if self.requires_grad(*a) {
                    // d op(a) = g · op(b)ᵀ, stored in a's own layout.
                    let buf = slot(grads, *a, self.value(*a).len());
                    if *ta {
                        // a is [k, m]: grad = op(b) · gᵀ
                        T::gemm(k, n, m, self.value(*b).data(), *tb, g, true, buf, true);
                    } else {
                        T::gemm(m, n, k, g, false, self.value(*b).data(), !*tb, buf, true);
                    }
                }
                if self.requires_grad(*b) {
                    let buf = slot(grads, *b, self.value(*b).len());
                    if *tb {
                        // b is [n, k]: grad = gᵀ · op(a)
                        T::gemm(n, m, k, g, true, self.value(*a).data(), *ta, buf, true);
                    } else {
                        T::gemm(k, m, n, self.value(*a).data(), !*ta, g, false, buf, true);
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_with(grads, *a, |d| axpy(d, g, T::one()));
                self.acc_with(grads, *b, |d| axpy(d, g, T::one()));
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, |d| axpy(d, g, T::one()));
                self.acc_with(grads, *b, |d| axpy(d, g, -T::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_with(grads, *a, |d| {
                    for ((d, &gi), &y) in d.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                });
                self.acc_with(grads, *b, |d| {
                    for ((d, &gi), &x) in d.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                });
            }
            Op::Scale(a, c) => self.acc_with(grads, *a, |d| axpy(d, g, *c)),
            Op::AddRowBias { x, bias } => {
                self.acc_with(grads, *x, |d| axpy(d, g, T::one()));
                let n = self.value(*bias).len();
                self.acc_with(grads, *bias, |d| {
                    for row in g.chunks(n) {
                        axpy(d, row, T::one());
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.acc_with(grads, *a, |d| {
                    for ((d, &gi), &x) in d.iter_mut().zip(g).zip(av) {
                        if x > T::zero() {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => self.acc_with(grads, *a, |d| {
                for ((d, &gi), &y) in d.iter_mut().zip(g).zip(out) {
                    *d += gi * y * (T::one() - y);
                }
            }),
            Op::Tanh(a) => self.acc_with(grads, *a, |d| {
                for ((d, &gi), &y) in d.iter_mut().zip(g).zip(out) {
                    *d += gi * (T::one() - y * y);
                }
            }),
            Op::ConcatCols { parts } => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    self.acc_with(grads, p, |d| {
                        for (r, drow) in d.chunks_mut(w).enumerate() {
                            axpy(drow, &g[r * total + offset..r * total + offset + w], T::one());
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.shape(*x)[1];
                let len = node.value.shape()[1];
                self.acc_with(grads, *x, |d| {
                    for (r, grow) in g.chunks(len).enumerate() {
                        axpy(&mut d[r * cols + start..r * cols + start + len], grow, T::one());
                    }
                });
            }
            Op::SelectRows { x, rows } => {
                let cols = self.shape(*x)[1];
                self.acc_with(grads, *x, |d| {
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(&mut d[r * cols..(r + 1) * cols], &g[k * cols..(k + 1) * cols], T::one());
                    }
                });
            }
            Op::InterleaveRows { parts } => {
                let steps = parts.len();
                let [b, n] = *self.shape(parts[0]) else { unreachable!() };
                for (t, &p) in parts.iter().enumerate() {
                    self.acc_with(grads, p, |d| {
                        for r in 0..b {
                            axpy(
                                &mut d[r * n..(r + 1) * n],
                                &g[(r * steps + t) * n..(r * steps + t + 1) * n],
                                T::one(),
                            );
                        }
                    });
                }
            }
            Op::Gather { x, idx } => self.acc_with(grads, *x, |d| {
                for (&k, &gi) in idx.iter().zip(g) {
                    d[k] += gi;
                }
            }),
            Op::Reshape(x) => self.acc_with(grads, *x, |d| axpy(d, g, T::one())),
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let [batch, c_in, h, w] = *self.shape(*input) else { unreachable!() };
                let c_out = self.shape(*kernel)[0];
                let dims = ConvDims {
                    batch,
                    c_in,
                    c_out,
                    h,
                    w,
                };
                if self.requires_grad(*input) {
                    let kv = self.value(*kernel).data();
                    let buf = slot(grads, *input, self.value(*input).len());
                    kernels::conv3x3_backward_input(dims, g, kv, buf);
                }
                let want_k = self.requires_grad(*kernel);
                let want_b = bias.is_some_and(|b| self.requires_grad(b));
                if want_k || want_b {
                    let mut gk = vec![T::zero(); self.value(*kernel).len()];
                    let mut gb = vec![T::zero(); c_out];
                    kernels::conv3x3_backward_params(
                        dims,
                        g,
                        self.value(*input).data(),
                        &mut gk,
                        want_b.then_some(&mut gb[..]),
                    );
                    if want_k {
                        self.acc_with(grads, *kernel, |d| axpy(d, &gk, T::one()));
                    }
                    if let (true, Some(b)) = (want_b, bias) {
                        self.acc_with(grads, *b, |d| axpy(d, &gb, T::one()));
                    }
                }
            }
            Op::MaxPool2d { input, argmax } => self.acc_with(grads, *input, |d| {
                for (&k, &gi) in argmax.iter().zip(g) {
                    d[k] += gi;
                }
            }),
            Op::LogSumExpRows { x, mask } => {
                let cols = self.shape(*x)[1];
                let xv = self.value(*x).data();
                self.acc_with(grads, *x, |d| {
                    for (r, (&lse, &gi)) in out.iter().zip(g).enumerate() {
                        for j in 0..cols {
                            let k = r * cols + j;
                            if mask.as_ref().is_none_or(|m| m[k]) {
                                d[k] += gi * (xv[k] - lse).exp();
                            }
                        }
                    }
                });
            }
            Op::SoftmaxRows { x } => {
                let cols = node.value.shape()[1];
                self.acc_with(grads, *x, |d| {
                    for ((drow, yrow), grow) in d.chunks_mut(cols).zip(out.chunks(cols)).zip(g.chunks(cols)) {
                        let dotp: T = yrow.iter().zip(grow).map(|(&y, &gi)| y * gi).sum();
                        for ((dv, &y), &gi) in drow.iter_mut().zip(yrow).zip(grow) {
                            *dv += y * (gi - dotp);
                        }
                    }
                });
            }
            Op::AttendSteps { weights, steps } => {
                let [b, t] = *self.shape(*weights) else { unreachable!() };
                let n = self.shape(*steps)[1];
                let wv = self.value(*weights).data();
                let sv = self.value(*steps).data();
                self.acc_with(grads, *weights, |d| {
                    for r in 0..b {
                        let gr = &g[r * n..(r + 1) * n];
                        for s in 0..t {
                            let row = &sv[(r * t + s) * n..(r * t + s + 1) * n];
                            d[r * t + s] += gr.iter().zip(row).map(|(&x, &y)| x * y).sum::<T>();
                        }
                    }
                });
                self.acc_with(grads, *steps, |d| {
                    for r in 0..b {
                        let gr = &g[r * n..(r + 1) * n];
                        for s in 0..t {
                            axpy(&mut d[(r * t + s) * n..(r * t + s + 1) * n], gr, wv[r * t + s]);
                        }
                    }
                });
            }
            Op::PairwiseSum { a, b } => {
                let (na, h) = rows_cols(self.shape(*a)).expect("matrix");
                let nb = self.shape(*b)[0];
                self.acc_with(grads, *a, |d| {
                    for i in 0..na {
                        for j in 0..nb {
                            axpy(&mut d[i * h..(i + 1) * h], &g[(i * nb + j) * h..(i * nb + j + 1) * h], T::one());
                        }
                    }
                });
                self.acc_with(grads, *b, |d| {
                    for i in 0..na {
                        for j in 0..nb {
                            axpy(&mut d[j * h..(j + 1) * h], &g[(i * nb + j) * h..(i * nb + j + 1) * h], T::one());
                        }
                    }
                });
            }
            Op::Sum(x) => self.acc_with(grads, *x, |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).len()).unwrap_or_else(T::one);
                let gi = g[0] / n;
                self.acc_with(grads, *x, |d| d.iter_mut().for_each(|v| *v += gi));
            }
        }
    }

    fn acc_with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if self.requires_grad(v) {
            f(slot(grads, v, self.value(v).len()));
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn axpy<T: Real>(dst: &mut [T], src: &[T], alpha: T) {
    if alpha == T::one() {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    } else {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += alpha * s;
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`, or `None` if `v` did not influence the
    /// loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v` shaped like its value; zeros when `v`
    /// did not influence the loss.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        let shape = tape.shape(v).to_vec();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}
