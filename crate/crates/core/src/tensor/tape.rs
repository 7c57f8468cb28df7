use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::{gemm, Result, SparseMatrix, Tensor, TensorError};

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulCol(usize, usize),
    MulScalar(usize, usize),
    Select(usize, usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Gather(usize, Rc<[usize]>),
    ScatterAdd(usize, Rc<[usize]>),
    SpMM(Rc<SparseMatrix>, usize),
    SegmentMax(usize, Vec<usize>),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    MeanRows(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    LayerNorm {
        x: usize,
        gamma: Option<usize>,
        beta: Option<usize>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mse(usize, Rc<Tensor>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records operations as they execute so that [`Tape::backward`] can replay
/// them in reverse. Nodes are appended in execution order, which is a
/// topological order by construction.
///
/// A tape is single-threaded; build one per forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Option<Vec<Option<Tensor>>>>,
    track_decisions: bool,
    decisions: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0000_0100_0000_01b3)
}

fn matrix_dims(t: &Tensor) -> Option<(usize, usize)> {
    (t.shape().len() == 2).then(|| (t.shape()[0], t.shape()[1]))
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(None),
            track_decisions: false,
            decisions: Cell::new(0xcbf2_9ce4_8422_2325),
        }
    }

    /// A tape that also fingerprints every non-differentiable branch taken
    /// (relu signs, max selections, explicitly noted selections). Gradient
    /// checks use it to detect finite-difference steps that cross a kink.
    pub fn with_decision_tracking() -> Self {
        Tape {
            track_decisions: true,
            ..Tape::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub fn note_decision(&self, choices: &[usize]) {
        if self.track_decisions {
            let mut h = self.decisions.get();
            for &c in choices {
                h = mix(h, c as u64);
            }
            self.decisions.set(mix(h, u64::MAX));
        }
    }

    pub fn decision_fingerprint(&self) -> u64 {
        self.decisions.get()
    }

    /// Accumulates d(loss)/d(node) for every node that depends on a
    /// gradient-requiring leaf. Read results with [`Tape::grad`].
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if self.grads.borrow().is_some() {
            return Err(TensorError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if !loss_shape.is_empty() {
            return Err(TensorError::NotScalar(loss_shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.needs_grad {
                backprop(&nodes, id, &node.op, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        *self.grads.borrow_mut() = Some(grads);
        Ok(())
    }

    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads
            .borrow()
            .as_ref()
            .and_then(|g| g[var.id].clone())
    }

    pub fn zero_grad(&self) {
        *self.grads.borrow_mut() = None;
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop(nodes: &[Node], id: usize, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let out = &nodes[id].value;
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = matrix_dims(av).expect("matmul operand");
            let n = bv.shape()[1];
            if nodes[*a].needs_grad {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, 0.0);
                accumulate(nodes, grads, *a, Tensor::matrix(m, k, da).expect("shape"));
            }
            if nodes[*b].needs_grad {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g.data(), false, &mut db, 0.0);
                accumulate(nodes, grads, *b, Tensor::matrix(k, n, db).expect("shape"));
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if nodes[*a].needs_grad {
                let d = g.data().iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                accumulate(nodes, grads, *a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
            }
            if nodes[*b].needs_grad {
                let d = g.data().iter().zip(av.data()).map(|(g, a)| g * a).collect();
                accumulate(nodes, grads, *b, Tensor::new(bv.shape().to_vec(), d).expect("shape"));
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|x| x * c)),
        Op::AddRow(a, bias) => {
            accumulate(nodes, grads, *a, g.clone());
            if nodes[*bias].needs_grad {
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (d, x) in db.iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                let shape = val(*bias).shape().to_vec();
                accumulate(nodes, grads, *bias, Tensor::new(shape, db).expect("shape"));
            }
        }
        Op::MulCol(a, c) => {
            let (av, cv) = (val(*a), val(*c));
            let cols = av.cols();
            if nodes[*a].needs_grad {
                let mut da = g.clone();
                for (r, &s) in cv.data().iter().enumerate() {
                    for x in &mut da.data_mut()[r * cols..(r + 1) * cols] {
                        *x *= s;
                    }
                }
                accumulate(nodes, grads, *a, da);
            }
            if nodes[*c].needs_grad {
                let dc = (0..av.rows())
                    .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                    .collect();
                accumulate(nodes, grads, *c, Tensor::new(cv.shape().to_vec(), dc).expect("shape"));
            }
        }
        Op::MulScalar(a, s) => {
            let (av, sv) = (val(*a), val(*s));
            let scalar = sv.item();
            accumulate(nodes, grads, *a, g.map(|x| x * scalar));
            if nodes[*s].needs_grad {
                let ds = g.dot(av);
                accumulate(nodes, grads, *s, Tensor::new(sv.shape().to_vec(), vec![ds]).expect("shape"));
            }
        }
        Op::Select(v, k) => {
            let mut dv = Tensor::zeros(val(*v).shape());
            dv.data_mut()[*k] = g.item();
            accumulate(nodes, grads, *v, dv);
        }
        Op::Concat(parts) => {
            let total = g.cols();
            let mut start = 0;
            for &p in parts {
                let pv = val(p);
                let w = pv.cols();
                if nodes[p].needs_grad {
                    let mut d = Vec::with_capacity(pv.len());
                    for r in 0..g.rows() {
                        d.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
                    }
                    accumulate(nodes, grads, p, Tensor::new(pv.shape().to_vec(), d).expect("shape"));
                }
                start += w;
            }
        }
        Op::Slice(a, start) => {
            let av = val(*a);
            let (rows, total) = (av.rows(), av.cols());
            let w = g.cols();
            let mut d = Tensor::zeros(av.shape());
            for r in 0..rows {
                d.data_mut()[r * total + start..r * total + start + w].copy_from_slice(g.row(r));
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::Gather(a, idx) => {
            let av = val(*a);
            let cols = av.cols();
            let mut d = Tensor::zeros(av.shape());
            for (i, &src) in idx.iter().enumerate() {
                for (x, y) in d.data_mut()[src * cols..(src + 1) * cols].iter_mut().zip(g.row(i)) {
                    *x += y;
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::ScatterAdd(a, idx) => {
            let av = val(*a);
            let cols = av.cols();
            let mut d = Vec::with_capacity(av.len());
            for &dst in idx.iter() {
                d.extend_from_slice(&g.data()[dst * cols..(dst + 1) * cols]);
            }
            accumulate(nodes, grads, *a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
        }
        Op::SpMM(s, a) => accumulate(nodes, grads, *a, s.transpose_matmul(g)),
        Op::SegmentMax(a, argmax) => {
            let av = val(*a);
            let cols = av.cols();
            let mut d = Tensor::zeros(av.shape());
            for (flat, &src) in argmax.iter().enumerate() {
                let j = flat % cols;
                d.data_mut()[src * cols + j] += g.data()[flat];
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::Sum(a) => {
            let gv = g.item();
            accumulate(nodes, grads, *a, Tensor::filled(val(*a).shape(), gv));
        }
        Op::Mean(a) => {
            let av = val(*a);
            let gv = g.item() / av.len().max(1) as f64;
            accumulate(nodes, grads, *a, Tensor::filled(av.shape(), gv));
        }
        Op::SumRows(a) | Op::MeanRows(a) => {
            let av = val(*a);
            let cols = av.cols();
            let scale = if matches!(op, Op::MeanRows(_)) {
                1.0 / cols.max(1) as f64
            } else {
                1.0
            };
            let d = (0..av.rows())
                .flat_map(|r| std::iter::repeat(g.data()[r] * scale).take(cols))
                .collect();
            accumulate(nodes, grads, *a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
        }
        Op::Relu(a) => {
            let av = val(*a);
            let d = g
                .data()
                .iter()
                .zip(av.data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
        }
        Op::Tanh(a) => {
            let d = g.data().iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
            accumulate(nodes, grads, *a, Tensor::new(out.shape().to_vec(), d).expect("shape"));
        }
        Op::Sigmoid(a) => {
            let d = g.data().iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
            accumulate(nodes, grads, *a, Tensor::new(out.shape().to_vec(), d).expect("shape"));
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (rows, cols) = (out.rows(), out.cols());
            let gamma_v = gamma.map(val);
            if nodes[*x].needs_grad {
                let mut dx = vec![0.0; rows * cols];
                let mut dxhat = vec![0.0; cols];
                for r in 0..rows {
                    let gr = g.row(r);
                    for j in 0..cols {
                        let gm = gamma_v.map_or(1.0, |t| t.data()[j]);
                        dxhat[j] = gr[j] * gm;
                    }
                    let xr = &xhat[r * cols..(r + 1) * cols];
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                    let n = cols as f64;
                    for j in 0..cols {
                        dx[r * cols + j] = inv_std[r] / n * (n * dxhat[j] - sum_d - xr[j] * sum_dx);
                    }
                }
                accumulate(nodes, grads, *x, Tensor::new(out.shape().to_vec(), dx).expect("shape"));
            }
            if let Some(gm) = gamma {
                if nodes[*gm].needs_grad {
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        for (j, dj) in d.iter_mut().enumerate() {
                            *dj += g.data()[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                    let shape = val(*gm).shape().to_vec();
                    accumulate(nodes, grads, *gm, Tensor::new(shape, d).expect("shape"));
                }
            }
            if let Some(bt) = beta {
                if nodes[*bt].needs_grad {
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        for (dj, x) in d.iter_mut().zip(g.row(r)) {
                            *dj += x;
                        }
                    }
                    let shape = val(*bt).shape().to_vec();
                    accumulate(nodes, grads, *bt, Tensor::new(shape, d).expect("shape"));
                }
            }
        }
        Op::Mse(a, target) => {
            let av = val(*a);
            let scale = 2.0 * g.item() / av.len().max(1) as f64;
            let d = av
                .data()
                .iter()
                .zip(target.data())
                .map(|(p, t)| scale * (p - t))
                .collect();
            accumulate(nodes, grads, *a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.rows()
    }

    pub fn cols(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.cols()
    }

    fn needs(&self) -> bool {
        self.tape.needs_grad(self.id)
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.needs())
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let needs = self.needs() || other.needs();
        self.tape.push(value, op, needs)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let out = a.matmul(&b)?;
        Ok(self.binary(other, out, Op::MatMul(self.id, other.id)))
    }

    fn zip_same(&self, other: &Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch(op, &a, &b));
        }
        let d = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(a.shape().to_vec(), d)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = self.zip_same(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, out, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = self.zip_same(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, out, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = self.zip_same(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, out, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let out = self.value().map(|x| x * c);
        self.unary(out, Op::Scale(self.id, c))
    }

    /// Adds a bias vector (`[cols]` or `[1, cols]`) to every row.
    pub fn add_row(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), bias.value());
        let cols = a.cols();
        if a.shape().len() != 2 || b.len() != cols || b.rows() != 1 {
            return Err(mismatch("add_row", &a, &b));
        }
        let mut out = (*a).clone();
        for r in 0..a.rows() {
            for (x, y) in out.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(self.binary(bias, out, Op::AddRow(self.id, bias.id)))
    }

    /// Scales row `i` by `col[i]`; `col` is `[rows, 1]` or `[rows]`.
    pub fn mul_col(&self, col: &Var<'t>) -> Result<Var<'t>> {
        let (a, c) = (self.value(), col.value());
        if a.shape().len() != 2 || c.len() != a.rows() || (c.shape().len() == 2 && c.cols() != 1) {
            return Err(mismatch("mul_col", &a, &c));
        }
        let cols = a.cols();
        let mut out = (*a).clone();
        for (r, &s) in c.data().iter().enumerate() {
            for x in &mut out.data_mut()[r * cols..(r + 1) * cols] {
                *x *= s;
            }
        }
        Ok(self.binary(col, out, Op::MulCol(self.id, col.id)))
    }

    /// Multiplies by a differentiable single-element tensor.
    pub fn mul_scalar(&self, s: &Var<'t>) -> Result<Var<'t>> {
        let (a, sv) = (self.value(), s.value());
        if sv.len() != 1 {
            return Err(mismatch("mul_scalar", &a, &sv));
        }
        let c = sv.item();
        let out = a.map(|x| x * c);
        Ok(self.binary(s, out, Op::MulScalar(self.id, s.id)))
    }

    /// Element `k` of a vector as a scalar.
    pub fn select(&self, k: usize) -> Result<Var<'t>> {
        let a = self.value();
        if k >= a.len() {
            return Err(TensorError::IndexOutOfRange {
                op: "select",
                index: k,
                bound: a.len(),
            });
        }
        Ok(self.unary(Tensor::scalar(a.data()[k]), Op::Select(self.id, k)))
    }

    /// Concatenates matrices with equal row counts along the last dim.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(TensorError::SplitSizes {
            sizes: Vec::new(),
            dim: 0,
        })?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        let rows = values[0].rows();
        for v in &values {
            if v.shape().len() != 2 || v.rows() != rows {
                return Err(mismatch("concat", &values[0], v));
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let needs = parts.iter().any(Var::needs);
        let out = Tensor::matrix(rows, total, data)?;
        Ok(tape.push(out, Op::Concat(parts.iter().map(|p| p.id).collect()), needs))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 || start + len > a.cols() {
            return Err(TensorError::SplitSizes {
                sizes: vec![start, len],
                dim: a.cols(),
            });
        }
        let cols = a.cols();
        let mut data = Vec::with_capacity(a.rows() * len);
        for r in 0..a.rows() {
            data.extend_from_slice(&a.data()[r * cols + start..r * cols + start + len]);
        }
        let out = Tensor::matrix(a.rows(), len, data)?;
        Ok(self.unary(out, Op::Slice(self.id, start)))
    }

    /// Splits along the last dim into consecutive blocks of the given widths.
    pub fn split_cols(&self, sizes: &[usize]) -> Result<Vec<Var<'t>>> {
        let cols = self.cols();
        if self.shape().len() != 2 || sizes.iter().sum::<usize>() != cols {
            return Err(TensorError::SplitSizes {
                sizes: sizes.to_vec(),
                dim: cols,
            });
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&w| {
                let part = self.slice_cols(start, w);
                start += w;
                part
            })
            .collect()
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&self, idx: Rc<[usize]>) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(mismatch("gather_rows", &a, &a));
        }
        let rows = a.rows();
        let cols = a.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            data.extend_from_slice(a.row(i));
        }
        let out = Tensor::matrix(idx.len(), cols, data)?;
        Ok(self.unary(out, Op::Gather(self.id, idx)))
    }

    /// Index-add: output row `idx[i]` accumulates input row `i`.
    pub fn scatter_add_rows(&self, idx: Rc<[usize]>, out_rows: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 || idx.len() != a.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: a.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let cols = a.cols();
        let mut out = Tensor::zeros(&[out_rows, cols]);
        for (i, &dst) in idx.iter().enumerate() {
            if dst >= out_rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: dst,
                    bound: out_rows,
                });
            }
            for (x, y) in out.data_mut()[dst * cols..(dst + 1) * cols].iter_mut().zip(a.row(i)) {
                *x += y;
            }
        }
        Ok(self.unary(out, Op::ScatterAdd(self.id, idx)))
    }

    /// Constant sparse matrix times this value.
    pub fn spmm(&self, s: &Rc<SparseMatrix>) -> Result<Var<'t>> {
        let out = s.matmul(&self.value())?;
        Ok(self.unary(out, Op::SpMM(Rc::clone(s), self.id)))
    }

    /// Column-wise max over row segments: output row `s` holds the max of the
    /// rows `i` with `segment[i] == s`. Ties go to the lowest row index.
    pub fn segment_max(&self, segment: &[usize], n_segments: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 || segment.len() != a.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_max",
                lhs: a.shape().to_vec(),
                rhs: vec![segment.len()],
            });
        }
        let cols = a.cols();
        let mut best = vec![usize::MAX; n_segments * cols];
        for (i, &s) in segment.iter().enumerate() {
            if s >= n_segments {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_max",
                    index: s,
                    bound: n_segments,
                });
            }
            for j in 0..cols {
                let slot = &mut best[s * cols + j];
                if *slot == usize::MAX || a.data()[i * cols + j] > a.data()[*slot * cols + j] {
                    *slot = i;
                }
            }
        }
        if let Some(pos) = best.iter().position(|&b| b == usize::MAX) {
            return Err(TensorError::EmptySegment(pos / cols.max(1)));
        }
        let data = best
            .iter()
            .enumerate()
            .map(|(flat, &src)| a.data()[src * cols + flat % cols])
            .collect();
        self.tape.note_decision(&best);
        let out = Tensor::matrix(n_segments, cols, data)?;
        Ok(self.unary(out, Op::SegmentMax(self.id, best)))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let a = self.value();
        let s = a.data().iter().sum::<f64>() / a.len().max(1) as f64;
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Per-row sums as a `[rows, 1]` column.
    pub fn sum_rows(&self) -> Var<'t> {
        let a = self.value();
        let d = (0..a.rows()).map(|r| a.row(r).iter().sum()).collect();
        let out = Tensor::matrix(a.rows(), 1, d).expect("shape");
        self.unary(out, Op::SumRows(self.id))
    }

    /// Per-row means as a `[rows, 1]` column.
    pub fn mean_rows(&self) -> Var<'t> {
        let a = self.value();
        let c = a.cols().max(1) as f64;
        let d = (0..a.rows()).map(|r| a.row(r).iter().sum::<f64>() / c).collect();
        let out = Tensor::matrix(a.rows(), 1, d).expect("shape");
        self.unary(out, Op::MeanRows(self.id))
    }

    /// Rectifier; the subgradient at 0 is 0.
    pub fn relu(&self) -> Var<'t> {
        let a = self.value();
        if self.tape.track_decisions {
            let mut h = self.tape.decisions.get();
            for (i, &x) in a.data().iter().enumerate() {
                if x > 0.0 {
                    h = mix(h, i as u64);
                }
            }
            self.tape.decisions.set(mix(h, u64::MAX - 1));
        }
        self.unary(a.map(|x| x.max(0.0)), Op::Relu(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        let out = self.value().map(f64::tanh);
        self.unary(out, Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let out = self.value().map(sigmoid);
        self.unary(out, Op::Sigmoid(self.id))
    }

    /// Normalizes each row to zero mean and unit variance,
    /// `(x - mean) / sqrt(var + eps)` with the biased variance, then applies
    /// the optional per-column affine map `gamma * xhat + beta`.
    pub fn layer_norm(&self, gamma: Option<&Var<'t>>, beta: Option<&Var<'t>>, eps: f64) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(mismatch("layer_norm", &a, &a));
        }
        let (rows, cols) = (a.rows(), a.cols());
        let gv = gamma.map(Var::value);
        let bv = beta.map(Var::value);
        for v in gv.iter().chain(bv.iter()) {
            if v.len() != cols {
                return Err(mismatch("layer_norm", &a, v));
            }
        }
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = a.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..cols {
                let xh = (row[j] - mean) * is;
                xhat[r * cols + j] = xh;
                let gm = gv.as_ref().map_or(1.0, |t| t.data()[j]);
                let bt = bv.as_ref().map_or(0.0, |t| t.data()[j]);
                out[r * cols + j] = xh * gm + bt;
            }
        }
        let needs = self.needs() || gamma.is_some_and(Var::needs) || beta.is_some_and(Var::needs);
        let out = Tensor::matrix(rows, cols, out)?;
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.map(|v| v.id),
                beta: beta.map(|v| v.id),
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&self, target: &Tensor) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape() != target.shape() {
            return Err(mismatch("mse", &a, target));
        }
        let n = a.len().max(1) as f64;
        let loss = a
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.unary(Tensor::scalar(loss), Op::Mse(self.id, Rc::new(target.clone()))))
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

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().value().item(), 0.5);
    }

    #[test]
    fn identity_matmul() {
        let t = Tape::new();
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let i = t.constant(Tensor::identity(3));
        let out = i.matmul(&t.constant(x.clone())).unwrap();
        assert_eq!(*out.value(), x);
    }

    #[test]
    fn scatter_accumulates() {
        let t = Tape::new();
        let x = t.constant(m(&[&[1.0, 2.0], &[10.0, 20.0]]));
        let out = x.scatter_add_rows(Rc::from(vec![0, 0]), 2).unwrap();
        assert_eq!(out.value().row(0), &[11.0, 22.0]);
        assert_eq!(out.value().row(1), &[0.0, 0.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let t = Tape::new();
        let x = t.param(m(&[&[1.0, -2.0], &[0.5, 3.0]]));
        t.backward(x.sum()).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let t = Tape::new();
        let xv = m(&[&[1.0, -2.0, 0.25]]);
        let x = t.param(xv.clone());
        let loss = x.mul(&x).unwrap().sum();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), xv.map(|v| 2.0 * v));
    }

    #[test]
    fn backward_contract() {
        let t = Tape::new();
        let x = t.param(m(&[&[1.0, 2.0]]));
        assert!(matches!(t.backward(x), Err(TensorError::NotScalar(_))));
        let s = x.sum();
        t.backward(s).unwrap();
        assert_eq!(t.backward(s), Err(TensorError::TapeConsumed));
        t.zero_grad();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let t = Tape::new();
        let w = t.param(m(&[&[2.0]]));
        let c = t.constant(m(&[&[3.0]]));
        t.backward(w.matmul(&c).unwrap().sum()).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(w).unwrap().item(), 3.0);
    }

    #[test]
    fn shape_errors() {
        let t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 2]));
        assert!(a.matmul(&b).is_err());
        assert!(a.add(&b).is_err());
        assert!(a.split_cols(&[1, 1]).is_err());
        assert!(a.gather_rows(Rc::from(vec![2])).is_err());
        assert!(a.add_row(&t.constant(Tensor::zeros(&[2]))).is_err());
        assert!(a.mse(&Tensor::zeros(&[3, 2])).is_err());
        assert!(matches!(a.segment_max(&[0, 0], 2), Err(TensorError::EmptySegment(1))));
    }

    #[test]
    fn split_and_concat_roundtrip() {
        let t = Tape::new();
        let x = t.constant(m(&[&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]]));
        let parts = x.split_cols(&[1, 2, 1]).unwrap();
        assert_eq!(parts[1].value().row(1), &[6.0, 7.0]);
        let back = Var::concat(&parts).unwrap();
        assert_eq!(back.value(), x.value());
    }

    #[test]
    fn layer_norm_without_eps_standardizes() {
        let t = Tape::new();
        let x = t.constant(m(&[&[1.0, 2.0, 4.0, 9.0], &[-3.0, 0.5, 0.5, 7.0]]));
        let y = x.layer_norm(None, None, 0.0).unwrap().value();
        for r in 0..2 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_max_picks_lowest_on_ties() {
        let t = Tape::new();
        let x = t.param(m(&[&[1.0, 5.0], &[1.0, 2.0], &[0.0, 9.0]]));
        let y = x.segment_max(&[0, 0, 1], 2).unwrap();
        assert_eq!(y.value().data(), &[1.0, 5.0, 0.0, 9.0]);
        t.backward(y.sum()).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }
}
