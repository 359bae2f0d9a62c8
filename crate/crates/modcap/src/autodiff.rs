//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation eagerly during the forward pass; nothing
//! on a live tape is mutated in place. [`Tape::backward`] replays the record in
//! reverse and returns one gradient buffer per node, so running it twice on the
//! same graph yields identical results.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Storage precision for forward values. `F32` rounds every forward result
/// through single precision while gradients accumulate in f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    #[inline]
    fn round(self, x: f64) -> f64 {
        match self {
            Precision::F64 => x,
            Precision::F32 => x as f32 as f64,
        }
    }
}

/// Per-object probabilities above this are treated as exactly certain inside
/// the noisy-or reduction.
const NOISY_OR_MAX_P: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Pick(Var, usize),
    Row(Var, usize),
    Slice(Var, usize, usize),
    Concat(Vec<Var>),
    Reshape(Var),
    NoisyOr(Var),
}

struct Node {
    values: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` required one.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[inline]
fn stable_sigmoid(x: f64) -> f64 {
    // Sign-split form: never exponentiates a large positive argument.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            precision: Precision::F64,
        }
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].values.len(), 1);
        self.nodes[v.0].values[0]
    }

    fn push(&mut self, mut values: Vec<f64>, shape: Vec<usize>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), values.len());
        if self.precision == Precision::F32 && !matches!(op, Op::Leaf) {
            for v in values.iter_mut() {
                *v = self.precision.round(*v);
            }
        }
        self.nodes.push(Node {
            values,
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Node construction ───────────────────────────────────────────────

    /// Constant node: never receives a gradient.
    pub fn constant(&mut self, values: Vec<f64>, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != values.len() {
            return Err(Error::Contract(format!(
                "constant: shape {:?} holds {} elements but {} values were given",
                shape,
                numel(&shape),
                values.len()
            )));
        }
        Ok(self.push(values, shape, Op::Leaf, false))
    }

    /// Scalar constant (shape `[1]`).
    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(vec![value], vec![1], Op::Leaf, false)
    }

    /// Zero-filled constant vector.
    pub fn zeros(&mut self, len: usize) -> Var {
        self.push(vec![0.0; len], vec![len], Op::Leaf, false)
    }

    /// Copies a parameter tensor onto the tape as a differentiable leaf.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.values().to_vec(),
            t.shape().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    // ── Operations ──────────────────────────────────────────────────────

    /// Matrix product. `a` must be rank 2; `b` may be rank 2 (`[k, n]`) or a
    /// rank-1 column (`[k]`), giving a rank-1 result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ashape.len() != 2 {
            return Err(Error::dimension("matmul lhs must be rank 2", &ashape, &bshape));
        }
        let (m, k) = (ashape[0], ashape[1]);
        let (av, bv) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
        let (values, shape) = match bshape.len() {
            1 => {
                if bshape[0] != k {
                    return Err(Error::dimension("matmul inner dimensions", &ashape, &bshape));
                }
                let mut out = vec![0.0; m];
                for i in 0..m {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += av[i * k + p] * bv[p];
                    }
                    out[i] = s;
                }
                (out, vec![m])
            }
            2 => {
                if bshape[0] != k {
                    return Err(Error::dimension("matmul inner dimensions", &ashape, &bshape));
                }
                let n = bshape[1];
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let aik = av[i * k + p];
                        if aik == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            out[i * n + j] += aik * bv[p * n + j];
                        }
                    }
                }
                (out, vec![m, n])
            }
            _ => return Err(Error::dimension("matmul rhs rank", &ashape, &bshape)),
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(values, shape, Op::MatMul(a, b), needs))
    }

    /// Row-vector times matrix: `v[m] · M[m, n] -> [n]`.
    pub fn vec_mat(&mut self, v: Var, m: Var) -> Result<Var> {
        let (vshape, mshape) = (self.shape(v).to_vec(), self.shape(m).to_vec());
        if vshape.len() != 1 || mshape.len() != 2 || mshape[0] != vshape[0] {
            return Err(Error::dimension("vec_mat", &vshape, &mshape));
        }
        let (rows, cols) = (mshape[0], mshape[1]);
        let (vv, mv) = (&self.nodes[v.0].values, &self.nodes[m.0].values);
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            let vi = vv[i];
            if vi == 0.0 {
                continue;
            }
            for j in 0..cols {
                out[j] += vi * mv[i * cols + j];
            }
        }
        let needs = self.needs(v) || self.needs(m);
        Ok(self.push(out, vec![cols], Op::VecMat(v, m), needs))
    }

    fn broadcast_binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (an, bn) = (numel(&ashape), numel(&bshape));
        let (av, bv) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
        let (values, shape) = if ashape == bshape {
            let out: Vec<f64> = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
            (out, ashape)
        } else if bn == 1 {
            let y = bv[0];
            (av.iter().map(|&x| f(x, y)).collect(), ashape)
        } else if an == 1 {
            let x = av[0];
            (bv.iter().map(|&y| f(x, y)).collect(), bshape)
        } else {
            return Err(Error::dimension(name, &ashape, &bshape));
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(values, shape, op, needs))
    }

    /// Elementwise addition; equal shapes or scalar broadcast on either side.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise subtraction; equal shapes or scalar broadcast.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product; equal shapes or scalar broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a column vector to every column of a matrix.
    pub fn add_col(&mut self, mat: Var, col: Var) -> Result<Var> {
        let (mshape, cshape) = (self.shape(mat).to_vec(), self.shape(col).to_vec());
        if mshape.len() != 2 || cshape.len() != 1 || cshape[0] != mshape[0] {
            return Err(Error::dimension("add_col", &mshape, &cshape));
        }
        let (rows, cols) = (mshape[0], mshape[1]);
        let (mv, cv) = (&self.nodes[mat.0].values, &self.nodes[col.0].values);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] = mv[i * cols + j] + cv[i];
            }
        }
        let needs = self.needs(mat) || self.needs(col);
        Ok(self.push(out, mshape, Op::AddCol(mat, col), needs))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(values, shape, Op::Scale(a, c), needs)
    }

    /// Add a compile-time constant.
    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x + c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(values, shape, Op::AddConst(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| stable_sigmoid(x))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(values, shape, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(values, shape, Op::Tanh(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(values, shape, Op::Relu(a), needs)
    }

    /// Numerically stable softmax over a non-empty rank-1 vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 1 || shape[0] == 0 {
            return Err(Error::dimension("softmax expects non-empty vector", &shape, &[]));
        }
        let xs = &self.nodes[a.0].values;
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let values: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        let needs = self.needs(a);
        Ok(self.push(values, shape, Op::Softmax(a), needs))
    }

    /// Natural log; the caller is responsible for keeping inputs positive
    /// (see [`Tape::clamp`]).
    pub fn ln(&mut self, a: Var) -> Var {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.ln()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(values, shape, Op::Ln(a), needs)
    }

    /// Clamp into `[lo, hi]`; gradient passes through wherever the input is
    /// already inside the range (inclusive) and is zero where it was clipped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| x.clamp(lo, hi))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(values, shape, Op::Clamp(a, lo, hi), needs)
    }

    /// Sum of all entries, yielding a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.nodes[a.0].values.iter().sum();
        let needs = self.needs(a);
        self.push(vec![total], vec![1], Op::Sum(a), needs)
    }

    /// Select one entry as a scalar.
    pub fn pick(&mut self, a: Var, idx: usize) -> Result<Var> {
        let n = self.nodes[a.0].values.len();
        if idx >= n {
            return Err(Error::Contract(format!(
                "pick index {idx} out of bounds for {n} elements"
            )));
        }
        let v = self.nodes[a.0].values[idx];
        let needs = self.needs(a);
        Ok(self.push(vec![v], vec![1], Op::Pick(a, idx), needs))
    }

    /// Select one row of a rank-2 matrix as a vector.
    pub fn row(&mut self, m: Var, r: usize) -> Result<Var> {
        let shape = self.shape(m).to_vec();
        if shape.len() != 2 {
            return Err(Error::dimension("row expects rank-2 input", &shape, &[]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if r >= rows {
            return Err(Error::Contract(format!(
                "row index {r} out of bounds for {rows} rows"
            )));
        }
        let values = self.nodes[m.0].values[r * cols..(r + 1) * cols].to_vec();
        let needs = self.needs(m);
        Ok(self.push(values, vec![cols], Op::Row(m, r), needs))
    }

    /// Contiguous slice of a rank-1 vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 1 || start + len > shape[0] {
            return Err(Error::Contract(format!(
                "slice [{start}, {}) out of bounds for shape {shape:?}",
                start + len
            )));
        }
        let values = self.nodes[a.0].values[start..start + len].to_vec();
        let needs = self.needs(a);
        Ok(self.push(values, vec![len], Op::Slice(a, start, len), needs))
    }

    /// Concatenate rank-1 vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let mut values = Vec::new();
        let mut needs = false;
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::dimension(
                    "concat expects rank-1 parts",
                    self.shape(p),
                    &[],
                ));
            }
            values.extend_from_slice(&self.nodes[p.0].values);
            needs |= self.needs(p);
        }
        let len = values.len();
        Ok(self.push(values, vec![len], Op::Concat(parts.to_vec()), needs))
    }

    /// Reinterpret the value buffer under a new shape of equal element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let old = self.shape(a).to_vec();
        if numel(&old) != numel(&shape) {
            return Err(Error::dimension("reshape element count", &old, &shape));
        }
        let values = self.nodes[a.0].values.clone();
        let needs = self.needs(a);
        Ok(self.push(values, shape, Op::Reshape(a), needs))
    }

    /// Noisy-or reduction over the rows of `[rows, cols]`, one output per
    /// column: `1 - prod_i (1 - p[i, j])`, computed in log space.
    pub fn noisy_or(&mut self, m: Var) -> Result<Var> {
        let shape = self.shape(m).to_vec();
        if shape.len() != 2 {
            return Err(Error::dimension("noisy_or expects rank-2 input", &shape, &[]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let mv = &self.nodes[m.0].values;
        let mut out = vec![0.0; cols];
        for j in 0..cols {
            let mut log_miss = 0.0;
            for i in 0..rows {
                let p = mv[i * cols + j].min(NOISY_OR_MAX_P);
                log_miss += (-p).ln_1p();
            }
            out[j] = -log_miss.exp_m1();
        }
        let needs = self.needs(m);
        Ok(self.push(out, vec![cols], Op::NoisyOr(m), needs))
    }

    // ── Backward pass ───────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradients for every node
    /// that transitively requires them; the tape itself is unchanged.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let g = grads[idx].take().unwrap();
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let buf = grads[target.0]
            .get_or_insert_with(|| vec![0.0; self.nodes[target.0].values.len()]);
        f(buf);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                if self.nodes[b.0].shape.len() == 1 {
                    self.accumulate(grads, *a, |da| {
                        for i in 0..m {
                            for p in 0..k {
                                da[i * k + p] += g[i] * bv[p];
                            }
                        }
                    });
                    self.accumulate(grads, *b, |db| {
                        for i in 0..m {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                db[p] += av[i * k + p] * gi;
                            }
                        }
                    });
                } else {
                    let n = self.nodes[b.0].shape[1];
                    self.accumulate(grads, *a, |da| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bv[p * n + j];
                                }
                                da[i * k + p] += s;
                            }
                        }
                    });
                    self.accumulate(grads, *b, |db| {
                        for p in 0..k {
                            for i in 0..m {
                                let aip = av[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += aip * g[i * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::VecMat(v, m) => {
                let (vv, mv) = (&self.nodes[v.0].values, &self.nodes[m.0].values);
                let (rows, cols) = (self.nodes[m.0].shape[0], self.nodes[m.0].shape[1]);
                self.accumulate(grads, *v, |dv| {
                    for i in 0..rows {
                        let mut s = 0.0;
                        for j in 0..cols {
                            s += mv[i * cols + j] * g[j];
                        }
                        dv[i] += s;
                    }
                });
                self.accumulate(grads, *m, |dm| {
                    for i in 0..rows {
                        let vi = vv[i];
                        if vi == 0.0 {
                            continue;
                        }
                        for j in 0..cols {
                            dm[i * cols + j] += vi * g[j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.grad_broadcast(grads, *a, g, |_, gi| gi);
                self.grad_broadcast(grads, *b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                // When `a` is the scalar side the output follows `b`'s shape.
                self.grad_broadcast(grads, *a, g, |_, gi| gi);
                self.grad_broadcast(grads, *b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let bv: Vec<f64> = self.nodes[b.0].values.clone();
                let av: Vec<f64> = self.nodes[a.0].values.clone();
                self.grad_broadcast(grads, *a, g, |i, gi| {
                    gi * if bv.len() == 1 { bv[0] } else { bv[i] }
                });
                self.grad_broadcast(grads, *b, g, |i, gi| {
                    gi * if av.len() == 1 { av[0] } else { av[i] }
                });
            }
            Op::AddCol(m, c) => {
                let (rows, cols) = (node.shape[0], node.shape[1]);
                self.accumulate(grads, *m, |dm| {
                    for (d, &gi) in dm.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
                self.accumulate(grads, *c, |dc| {
                    for i in 0..rows {
                        let mut s = 0.0;
                        for j in 0..cols {
                            s += g[i * cols + j];
                        }
                        dc[i] += s;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, |da| {
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += c * gi;
                    }
                });
            }
            Op::AddConst(a) => {
                self.accumulate(grads, *a, |da| {
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = &node.values;
                self.accumulate(grads, *a, |da| {
                    for i in 0..out.len() {
                        da[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            Op::Tanh(a) => {
                let out = &node.values;
                self.accumulate(grads, *a, |da| {
                    for i in 0..out.len() {
                        da[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let xs = &self.nodes[a.0].values;
                self.accumulate(grads, *a, |da| {
                    for i in 0..xs.len() {
                        if xs[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let s = &node.values;
                let dot: f64 = s.iter().zip(g).map(|(&si, &gi)| si * gi).sum();
                self.accumulate(grads, *a, |da| {
                    for i in 0..s.len() {
                        da[i] += s[i] * (g[i] - dot);
                    }
                });
            }
            Op::Ln(a) => {
                let xs = &self.nodes[a.0].values;
                self.accumulate(grads, *a, |da| {
                    for i in 0..xs.len() {
                        da[i] += g[i] / xs[i];
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let xs = &self.nodes[a.0].values;
                self.accumulate(grads, *a, |da| {
                    for i in 0..xs.len() {
                        if xs[i] >= lo && xs[i] <= hi {
                            da[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(grads, *a, |da| {
                    for d in da.iter_mut() {
                        *d += g0;
                    }
                });
            }
            Op::Pick(a, i) => {
                let (i, g0) = (*i, g[0]);
                self.accumulate(grads, *a, |da| da[i] += g0);
            }
            Op::Row(m, r) => {
                let cols = node.values.len();
                let r = *r;
                self.accumulate(grads, *m, |dm| {
                    for j in 0..cols {
                        dm[r * cols + j] += g[j];
                    }
                });
            }
            Op::Slice(a, start, len) => {
                let (start, len) = (*start, *len);
                self.accumulate(grads, *a, |da| {
                    for j in 0..len {
                        da[start + j] += g[j];
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].values.len();
                    self.accumulate(grads, p, |dp| {
                        for j in 0..len {
                            dp[j] += g[offset + j];
                        }
                    });
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, |da| {
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
            }
            Op::NoisyOr(m) => {
                let mv = &self.nodes[m.0].values;
                let (rows, cols) = (self.nodes[m.0].shape[0], self.nodes[m.0].shape[1]);
                let out = &node.values;
                self.accumulate(grads, *m, |dm| {
                    for j in 0..cols {
                        // prod_i (1 - p_ij) = 1 - out_j
                        let miss = 1.0 - out[j];
                        for i in 0..rows {
                            let p = mv[i * cols + j];
                            if p < NOISY_OR_MAX_P {
                                dm[i * cols + j] += g[j] * miss / (1.0 - p);
                            }
                        }
                    }
                });
            }
        }
    }

    fn grad_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: Var,
        g: &[f64],
        f: impl Fn(usize, f64) -> f64,
    ) {
        let tn = self.nodes[target.0].values.len();
        self.accumulate(grads, target, |dt| {
            if tn == g.len() {
                for (i, &gi) in g.iter().enumerate() {
                    dt[i] += f(i, gi);
                }
            } else {
                // scalar side of a broadcast: fold the incoming gradient
                debug_assert_eq!(tn, 1);
                for (i, &gi) in g.iter().enumerate() {
                    dt[0] += f(i, gi);
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn vec_rng(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn tensor(values: Vec<f64>, shape: Vec<usize>) -> Tensor {
        Tensor::with_grad(values, shape).unwrap()
    }

    /// Gradient-checks `build` over a set of leaf tensors: the analytic
    /// gradient of a fixed random projection of the output is compared to
    /// central finite differences in every leaf coordinate.
    fn check_op(build: impl Fn(&mut Tape, &[Var]) -> Var, leaf_shapes: &[Vec<usize>], seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let leaves: Vec<Tensor> = leaf_shapes
            .iter()
            .map(|s| tensor(vec_rng(&mut rng, s.iter().product()), s.clone()))
            .collect();
        let out_shape = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t)).collect();
            let out = build(&mut tape, &vars);
            tape.shape(out).to_vec()
        };
        let out_len = out_shape.iter().product();
        let weights = vec_rng(&mut rng, out_len);

        let eval = |flat: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let mut offset = 0;
            let mut vars = Vec::new();
            for t in &leaves {
                let n = t.values().len();
                let replaced = tensor(flat[offset..offset + n].to_vec(), t.shape().to_vec());
                vars.push(tape.leaf(&replaced));
                offset += n;
            }
            let out = build(&mut tape, &vars);
            tape.values(out)
                .iter()
                .zip(&weights)
                .map(|(&o, &w)| o * w)
                .sum()
        };

        let flat: Vec<f64> = leaves.iter().flat_map(|t| t.values().to_vec()).collect();
        let numeric = central_difference(&eval, &flat, 1e-5);

        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars);
        let wvar = tape.constant(weights.clone(), out_shape).unwrap();
        let prod = tape.mul(out, wvar).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<f64> = vars
            .iter()
            .flat_map(|&v| grads.wrt(v).unwrap().to_vec())
            .collect();

        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-5, "gradient check failed: max rel err {err}");
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape
            .constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2])
            .unwrap();
        let m = tape
            .constant(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2])
            .unwrap();
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.values(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_zero() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![1.0, 2.0], vec![1, 2]).unwrap();
        let b = tape.constant(vec![0.0, 0.0], vec![2, 1]).unwrap();
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.values(out), &[0.0]);
    }

    #[test]
    fn matmul_hand_product() {
        let mut tape = Tape::new();
        let a = tape
            .constant(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2])
            .unwrap();
        let b = tape.constant(vec![5.0, 6.0], vec![2, 1]).unwrap();
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.values(out), &[17.0, 39.0]);
        assert_eq!(tape.shape(out), &[2, 1]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![0.0; 6], vec![2, 3]).unwrap();
        let b = tape.constant(vec![0.0; 4], vec![2, 2]).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn pointwise_fixed_values() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0, -3.2, 0.0], vec![3]).unwrap();
        let s = tape.sigmoid(x);
        let r = tape.relu(x);
        let t = tape.tanh(x);
        assert_eq!(tape.values(s)[0], 0.5);
        assert_eq!(tape.values(r)[1], 0.0);
        assert_eq!(tape.values(t)[2], 0.0);
    }

    #[test]
    fn sigmoid_extreme_inputs_do_not_overflow() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![700.0, -700.0], vec![2]).unwrap();
        let s = tape.sigmoid(x);
        assert!(tape.values(s)[0] > 0.999999 && tape.values(s)[0] <= 1.0);
        assert!(tape.values(s)[1] >= 0.0 && tape.values(s)[1] < 1e-300);
    }

    #[test]
    fn softmax_fixed_values() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0, 0.0], vec![2]).unwrap();
        let s = tape.softmax(x).unwrap();
        assert_eq!(tape.values(s), &[0.5, 0.5]);

        let y = tape.constant(vec![2.0_f64.ln(), 0.0], vec![2]).unwrap();
        let sy = tape.softmax(y).unwrap();
        assert!((tape.values(sy)[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((tape.values(sy)[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance_and_sum() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..100 {
            let xs = vec_rng(&mut rng, 5);
            let c = rng.gen_range(-30.0..30.0);
            let mut tape = Tape::new();
            let a = tape.constant(xs.clone(), vec![5]).unwrap();
            let sa = tape.softmax(a).unwrap();
            let b = tape
                .constant(xs.iter().map(|&x| x + c).collect(), vec![5])
                .unwrap();
            let sb = tape.softmax(b).unwrap();
            let sum: f64 = tape.values(sa).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for (x, y) in tape.values(sa).iter().zip(tape.values(sb)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn softmax_constant_input_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![17.5; 4], vec![4]).unwrap();
        let s = tape.softmax(x).unwrap();
        for &v in tape.values(s) {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_empty_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![], vec![0]).unwrap();
        assert!(tape.softmax(x).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(vec![1.0, -2.0, 0.5], vec![3]));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(&tensor(vec![0.0], vec![1]));
        let s = tape.sigmoid(w);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert!((grads.wrt(w).unwrap()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(vec![1.0, 2.0], vec![2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(vec_rng(&mut rng, 6), vec![2, 3]));
        let y = tape.leaf(&tensor(vec_rng(&mut rng, 3), vec![3]));
        let p = tape.matmul(x, y).unwrap();
        let s = tape.tanh(p);
        let loss = tape.sum(s);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1.wrt(x).unwrap(), g2.wrt(x).unwrap());
        assert_eq!(g1.wrt(y).unwrap(), g2.wrt(y).unwrap());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(vec![1.0, 2.0], vec![2]));
        let c = tape.constant(vec![3.0, 4.0], vec![2]).unwrap();
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(x).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn noisy_or_fixed_values() {
        let mut tape = Tape::new();
        let m = tape
            .constant(vec![0.5, 1.0, 0.0, 0.5, 0.3, 0.0], vec![2, 3])
            .unwrap();
        let out = tape.noisy_or(m).unwrap();
        let v = tape.values(out);
        assert!((v[0] - 0.75).abs() < 1e-12, "0.5,0.5 -> 0.75, got {}", v[0]);
        assert!((v[1] - 1.0).abs() < 1e-12, "any 1 absorbs, got {}", v[1]);
        assert!(v[2].abs() < 1e-15, "all zero stays zero, got {}", v[2]);
    }

    #[test]
    fn noisy_or_dominates_max_input() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let vals: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut tape = Tape::new();
            let m = tape.constant(vals.clone(), vec![4, 3]).unwrap();
            let out = tape.noisy_or(m).unwrap();
            for j in 0..3 {
                let col_max = (0..4).map(|i| vals[i * 3 + j]).fold(0.0, f64::max);
                assert!(tape.values(out)[j] + 1e-12 >= col_max);
            }
        }
    }

    #[test]
    fn finite_outputs_on_random_chains() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for trial in 0..50 {
            let mut tape = Tape::new();
            let a = tape.leaf(&tensor(vec_rng(&mut rng, 8), vec![2, 4]));
            let x = tape.leaf(&tensor(vec_rng(&mut rng, 4), vec![4]));
            let h = tape.matmul(a, x).unwrap();
            let t = tape.tanh(h);
            let s = tape.sigmoid(t);
            let sm = tape.softmax(s).unwrap();
            let l = tape.sum(sm);
            assert!(
                tape.values(l)[0].is_finite(),
                "trial {trial} produced non-finite value"
            );
        }
    }

    // Per-operation gradient checks against central differences.

    #[test]
    fn grad_matmul_matrix_matrix() {
        check_op(
            |t, v| t.matmul(v[0], v[1]).unwrap(),
            &[vec![3, 4], vec![4, 2]],
            101,
        );
    }

    #[test]
    fn grad_matmul_matrix_vector() {
        check_op(
            |t, v| t.matmul(v[0], v[1]).unwrap(),
            &[vec![3, 4], vec![4]],
            102,
        );
    }

    #[test]
    fn grad_vec_mat() {
        check_op(
            |t, v| t.vec_mat(v[0], v[1]).unwrap(),
            &[vec![4], vec![4, 3]],
            103,
        );
    }

    #[test]
    fn grad_add_sub_mul_equal_shapes() {
        check_op(
            |t, v| {
                let a = t.add(v[0], v[1]).unwrap();
                let b = t.sub(a, v[2]).unwrap();
                t.mul(b, v[0]).unwrap()
            },
            &[vec![5], vec![5], vec![5]],
            104,
        );
    }

    #[test]
    fn grad_scalar_broadcast() {
        check_op(
            |t, v| {
                let a = t.mul(v[0], v[1]).unwrap();
                let b = t.add(a, v[2]).unwrap();
                t.sub(v[3], b).unwrap()
            },
            &[vec![4], vec![1], vec![1], vec![1]],
            105,
        );
    }

    #[test]
    fn grad_add_col() {
        check_op(
            |t, v| t.add_col(v[0], v[1]).unwrap(),
            &[vec![3, 4], vec![3]],
            106,
        );
    }

    #[test]
    fn grad_pointwise_activations() {
        check_op(
            |t, v| {
                let s = t.sigmoid(v[0]);
                let u = t.tanh(s);
                t.scale(u, 1.7)
            },
            &[vec![6]],
            107,
        );
    }

    #[test]
    fn grad_relu_away_from_kink() {
        // Inputs are in [-1,1]; shift them away from zero so the check does
        // not straddle the kink.
        check_op(
            |t, v| {
                let shifted = t.add_const(v[0], 0.5);
                t.relu(shifted)
            },
            &[vec![6]],
            108,
        );
    }

    #[test]
    fn grad_softmax() {
        check_op(|t, v| t.softmax(v[0]).unwrap(), &[vec![5]], 109);
    }

    #[test]
    fn grad_ln_clamp() {
        check_op(
            |t, v| {
                let pos = t.add_const(v[0], 2.0);
                let c = t.clamp(pos, 1e-12, f64::INFINITY);
                t.ln(c)
            },
            &[vec![5]],
            110,
        );
    }

    #[test]
    fn grad_sum_pick_row_slice_concat_reshape() {
        check_op(
            |t, v| {
                let r = t.row(v[0], 1).unwrap();
                let s = t.slice(r, 1, 2).unwrap();
                let c = t.concat(&[s, v[1]]).unwrap();
                let m = t.reshape(c, vec![1, 5]).unwrap();
                let back = t.reshape(m, vec![5]).unwrap();
                let p = t.pick(back, 3).unwrap();
                let total = t.sum(back);
                t.add(p, total).unwrap()
            },
            &[vec![3, 4], vec![3]],
            111,
        );
    }

    #[test]
    fn grad_noisy_or() {
        check_op(
            |t, v| {
                // squash into (0,1) before the reduction
                let p = t.sigmoid(v[0]);
                t.noisy_or(p).unwrap()
            },
            &[vec![3, 4]],
            112,
        );
    }

    #[test]
    fn f32_precision_rounds_forward_values() {
        let mut tape = Tape::with_precision(Precision::F32);
        let x = tape.constant(vec![1.0 / 3.0], vec![1]).unwrap();
        let y = tape.scale(x, 1.0 / 7.0);
        let got = tape.values(y)[0];
        assert_eq!(got, ((1.0 / 3.0) * (1.0 / 7.0)) as f32 as f64);
    }
}
