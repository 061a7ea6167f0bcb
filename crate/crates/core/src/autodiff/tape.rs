use super::{Real, Tensor};
use crate::{Error, Result};

/// Negative slope of [`Tape::leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.01;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operation kinds accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    LeakyRelu,
    Add,
    Sub,
    Hadamard,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, F),
    ScaleShift(Var, F),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    GatherSum(Var, Vec<Vec<usize>>),
    RowDot(Var, Var),
    ScaleRows(Var, Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    Sqrt(Var),
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Record of executed operations, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in execution order, so every operation's inputs
/// precede it. A tape has a single writer; run one tape per worker.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of `var`, or `None` if the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<Tensor<F>> {
        self.grads[var.0]
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[var.0], g.clone()).expect("gradient shape"))
    }

    /// Gradient of `var`, zero-filled when unreachable.
    pub fn wrt(&self, var: Var) -> Tensor<F> {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn same_shape<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn sigmoid<F: Real>(x: F) -> F {
    // Split by sign so exp never overflows.
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        debug_assert!(value.is_finite() || inputs.iter().any(|v| !self.value(*v).is_finite()));
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<F>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// `a · b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.rows_cols()?;
        let (n, k2) = tb.rows_cols()?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", ta.shape(), tb.shape()));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m,
            k,
            n,
            F::one(),
            ta.data(),
            k as isize,
            1,
            tb.data(),
            1,
            k as isize,
            F::zero(),
            &mut out,
            n as isize,
            1,
        );
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMulNt(a, b), &[a, b]))
    }

    /// Adds the row vector `bias: [n]` to every row of `a: [m, n]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (m, n) = ta.rows_cols()?;
        if tb.numel() != n {
            return Err(Error::dim("add_row", ta.shape(), tb.shape()));
        }
        let mut out = ta.data().to_vec();
        for r in 0..m {
            for (o, &b) in out[r * n..(r + 1) * n].iter_mut().zip(tb.data()) {
                *o = *o + b;
            }
        }
        let out = Tensor::new(ta.shape(), out)?;
        Ok(self.push(out, Op::AddRow(a, bias), &[a, bias]))
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op_name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(F::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    /// `max(x, 0.01·x)`.
    pub fn leaky_relu(&mut self, a: Var) -> Var {
        let slope = F::from_f64_lossy(LEAKY_SLOPE);
        let out = self
            .value(a)
            .map(|x| if x > F::zero() { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    /// `scale · a + shift`, elementwise.
    pub fn scale_shift(&mut self, a: Var, scale: F, shift: F) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::ScaleShift(a, scale), &[a])
    }

    /// Dispatches one of the pointwise kinds by name.
    pub fn elementwise(&mut self, kind: Elementwise, operands: &[Var]) -> Result<Var> {
        let arity = match kind {
            Elementwise::Sigmoid | Elementwise::Tanh | Elementwise::LeakyRelu => 1,
            _ => 2,
        };
        if operands.len() != arity {
            return Err(Error::Contract(format!(
                "{kind:?} takes {arity} operand(s), got {}",
                operands.len()
            )));
        }
        Ok(match kind {
            Elementwise::Sigmoid => self.sigmoid(operands[0]),
            Elementwise::Tanh => self.tanh(operands[0]),
            Elementwise::LeakyRelu => self.leaky_relu(operands[0]),
            Elementwise::Add => self.add(operands[0], operands[1])?,
            Elementwise::Sub => self.sub(operands[0], operands[1])?,
            Elementwise::Hadamard => self.mul(operands[0], operands[1])?,
        })
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Domain("concat of zero tensors".into()))?;
        let (rows, _) = self.value(*first).rows_cols()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).rows_cols()?;
            if r != rows {
                return Err(Error::dim("concat", self.value(*first).shape(), self.value(p).shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(&[rows, total], out)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (rows, cols) = ta.rows_cols()?;
        if len == 0 || start + len > cols {
            return Err(Error::dim("slice_cols", ta.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let out = Tensor::new(&[rows, len], out)?;
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    fn check_rows(&self, table: Var, indices: impl Iterator<Item = usize>) -> Result<(usize, usize)> {
        let (vocab, dim) = self.value(table).rows_cols()?;
        for index in indices {
            if index >= vocab {
                return Err(Error::Vocabulary {
                    table: format!("tensor #{}", table.0),
                    index,
                    size: vocab,
                });
            }
        }
        Ok((vocab, dim))
    }

    /// Rows of `table` selected by `indices`, stacked as `[indices.len(), dim]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        if indices.is_empty() {
            return Err(Error::Domain("gather with no indices".into()));
        }
        let (_, dim) = self.check_rows(table, indices.iter().copied())?;
        let t = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(&[indices.len(), dim], out)?;
        Ok(self.push(out, Op::Gather(table, indices.to_vec()), &[table]))
    }

    /// For each bag, the sum of the selected rows of `table` (in bag order).
    /// An empty bag yields a zero row.
    pub fn gather_sum(&mut self, table: Var, bags: &[Vec<usize>]) -> Result<Var> {
        if bags.is_empty() {
            return Err(Error::Domain("gather_sum with no bags".into()));
        }
        let (_, dim) = self.check_rows(table, bags.iter().flatten().copied())?;
        let t = self.value(table);
        let mut out = vec![F::zero(); bags.len() * dim];
        for (b, bag) in bags.iter().enumerate() {
            let row = &mut out[b * dim..(b + 1) * dim];
            for &i in bag {
                for (o, &x) in row.iter_mut().zip(t.row(i)) {
                    *o = *o + x;
                }
            }
        }
        let out = Tensor::new(&[bags.len(), dim], out)?;
        Ok(self.push(out, Op::GatherSum(table, bags.to_vec()), &[table]))
    }

    /// Row-wise inner products of two `[m, n]` matrices, as `[m, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, _) = ta.rows_cols()?;
        if ta.rows_cols()? != tb.rows_cols()? {
            return Err(Error::dim("row_dot", ta.shape(), tb.shape()));
        }
        let out = (0..m)
            .map(|r| {
                ta.row(r)
                    .iter()
                    .zip(tb.row(r))
                    .fold(F::zero(), |acc, (&x, &y)| acc + x * y)
            })
            .collect();
        let out = Tensor::new(&[m, 1], out)?;
        Ok(self.push(out, Op::RowDot(a, b), &[a, b]))
    }

    /// Multiplies row `r` of `a: [m, n]` by `scales[r]`, `scales: [m, 1]`.
    pub fn scale_rows(&mut self, a: Var, scales: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(scales));
        let (m, n) = ta.rows_cols()?;
        if ts.numel() != m {
            return Err(Error::dim("scale_rows", ta.shape(), ts.shape()));
        }
        let mut out = ta.data().to_vec();
        for r in 0..m {
            let s = ts.data()[r];
            for o in &mut out[r * n..(r + 1) * n] {
                *o = *o * s;
            }
        }
        let out = Tensor::new(ta.shape(), out)?;
        Ok(self.push(out, Op::ScaleRows(a, scales), &[a, scales]))
    }

    /// Softmax of each row, computed with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.rows_cols()?;
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = ta.row(r);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let start = out.len();
            let mut total = F::zero();
            for &x in row {
                let e = (x - max).exp();
                total = total + e;
                out.push(e);
            }
            for o in &mut out[start..] {
                *o = *o / total;
            }
        }
        let out = Tensor::new(ta.shape(), out)?;
        Ok(self.push(out, Op::SoftmaxRows(a), &[a]))
    }

    /// Sum of all elements, as shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().fold(F::zero(), |acc, &x| acc + x);
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    /// Mean of all elements, as shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let total = t.data().iter().fold(F::zero(), |acc, &x| acc + x);
        let n = F::from_usize(t.numel()).expect("count");
        self.push(Tensor::scalar(total / n), Op::Mean(a), &[a])
    }

    /// Elementwise square root. The gradient at exactly 0 is defined as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.data().iter().any(|&x| x < F::zero()) {
            return Err(Error::Domain("sqrt of a negative value".into()));
        }
        let out = t.map(F::sqrt);
        Ok(self.push(out, Op::Sqrt(a), &[a]))
    }

    /// Reverse sweep from a scalar root.
    ///
    /// The tape is not consumed: calling this again on the same root
    /// recomputes and returns identical gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![F::one()]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        for (idx, g) in grads.iter_mut().enumerate() {
            if !self.nodes[idx].needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![F::zero(); self.nodes[v.0].value.numel()]);
            f(buf);
        };
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).rows_cols().expect("matrix");
                let (_, n) = val(*b).rows_cols().expect("matrix");
                if wants(*a) {
                    let bd = val(*b).data();
                    acc(*a, &mut |ga| {
                        F::gemm(m, n, k, F::one(), g, n as isize, 1, bd, 1, n as isize, F::one(), ga, k as isize, 1)
                    });
                }
                if wants(*b) {
                    let ad = val(*a).data();
                    acc(*b, &mut |gb| {
                        F::gemm(k, m, n, F::one(), ad, 1, k as isize, g, n as isize, 1, F::one(), gb, n as isize, 1)
                    });
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = val(*a).rows_cols().expect("matrix");
                let (n, _) = val(*b).rows_cols().expect("matrix");
                if wants(*a) {
                    let bd = val(*b).data();
                    acc(*a, &mut |ga| {
                        F::gemm(m, n, k, F::one(), g, n as isize, 1, bd, k as isize, 1, F::one(), ga, k as isize, 1)
                    });
                }
                if wants(*b) {
                    let ad = val(*a).data();
                    acc(*b, &mut |gb| {
                        F::gemm(n, m, k, F::one(), g, 1, n as isize, ad, k as isize, 1, F::one(), gb, k as isize, 1)
                    });
                }
            }
            Op::AddRow(a, bias) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let n = val(*bias).numel();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (o, &x) in gb.iter_mut().zip(g) {
                        *o = *o - x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for ((o, &x), &w) in ga.iter_mut().zip(g).zip(bd) {
                        *o = *o + x * w;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &x), &w) in gb.iter_mut().zip(g).zip(ad) {
                        *o = *o + x * w;
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((o, &x), &s) in ga.iter_mut().zip(g).zip(y) {
                    *o = *o + x * s * (F::one() - s);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((o, &x), &t) in ga.iter_mut().zip(g).zip(y) {
                    *o = *o + x * (F::one() - t * t);
                }
            }),
            Op::LeakyRelu(a, slope) => {
                let input = val(*a).data();
                acc(*a, &mut |ga| {
                    for ((o, &x), &z) in ga.iter_mut().zip(g).zip(input) {
                        *o = *o + if z > F::zero() { x } else { *slope * x };
                    }
                })
            }
            Op::ScaleShift(a, scale) => acc(*a, &mut |ga| {
                for (o, &x) in ga.iter_mut().zip(g) {
                    *o = *o + *scale * x;
                }
            }),
            Op::Concat(parts) => {
                let (rows, total) = node.value.rows_cols().expect("matrix");
                let mut offset = 0;
                for &p in parts {
                    let (_, c) = val(p).rows_cols().expect("matrix");
                    acc(p, &mut |gp| {
                        for r in 0..rows {
                            add_into(&mut gp[r * c..(r + 1) * c], &g[r * total + offset..r * total + offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, len) = node.value.rows_cols().expect("matrix");
                let (_, cols) = val(*a).rows_cols().expect("matrix");
                acc(*a, &mut |ga| {
                    for r in 0..rows {
                        add_into(&mut ga[r * cols + start..r * cols + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::Gather(table, indices) => {
                let (_, dim) = val(*table).rows_cols().expect("matrix");
                acc(*table, &mut |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut gt[i * dim..(i + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                });
            }
            Op::GatherSum(table, bags) => {
                let (_, dim) = val(*table).rows_cols().expect("matrix");
                acc(*table, &mut |gt| {
                    for (r, bag) in bags.iter().enumerate() {
                        for &i in bag {
                            add_into(&mut gt[i * dim..(i + 1) * dim], &g[r * dim..(r + 1) * dim]);
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (_, n) = val(*a).rows_cols().expect("matrix");
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for (r, &gr) in g.iter().enumerate() {
                        for (o, &w) in ga[r * n..(r + 1) * n].iter_mut().zip(&bd[r * n..(r + 1) * n]) {
                            *o = *o + gr * w;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for (r, &gr) in g.iter().enumerate() {
                        for (o, &w) in gb[r * n..(r + 1) * n].iter_mut().zip(&ad[r * n..(r + 1) * n]) {
                            *o = *o + gr * w;
                        }
                    }
                });
            }
            Op::ScaleRows(a, scales) => {
                let (_, n) = val(*a).rows_cols().expect("matrix");
                let (ad, sd) = (val(*a).data(), val(*scales).data());
                acc(*a, &mut |ga| {
                    for (r, &s) in sd.iter().enumerate() {
                        for (o, &x) in ga[r * n..(r + 1) * n].iter_mut().zip(&g[r * n..(r + 1) * n]) {
                            *o = *o + x * s;
                        }
                    }
                });
                acc(*scales, &mut |gs| {
                    for (r, o) in gs.iter_mut().enumerate() {
                        let dot = g[r * n..(r + 1) * n]
                            .iter()
                            .zip(&ad[r * n..(r + 1) * n])
                            .fold(F::zero(), |s, (&x, &w)| s + x * w);
                        *o = *o + dot;
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (_, n) = node.value.rows_cols().expect("matrix");
                acc(*a, &mut |ga| {
                    for ((go, gr), yr) in ga.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let inner = gr.iter().zip(yr).fold(F::zero(), |s, (&x, &p)| s + x * p);
                        for ((o, &x), &p) in go.iter_mut().zip(gr).zip(yr) {
                            *o = *o + p * (x - inner);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| {
                for o in ga.iter_mut() {
                    *o = *o + g[0];
                }
            }),
            Op::Mean(a) => {
                let n = F::from_usize(val(*a).numel()).expect("count");
                acc(*a, &mut |ga| {
                    let share = g[0] / n;
                    for o in ga.iter_mut() {
                        *o = *o + share;
                    }
                })
            }
            Op::Sqrt(a) => acc(*a, &mut |ga| {
                let two = F::one() + F::one();
                for ((o, &x), &r) in ga.iter_mut().zip(g).zip(y) {
                    if r > F::zero() {
                        *o = *o + x / (two * r);
                    }
                }
            }),
        }
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o = *o + x;
    }
}
