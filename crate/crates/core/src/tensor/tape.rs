//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Each recorded operation
//! stores its output value and the ids of its inputs; since an operation can
//! only refer to nodes that already exist, the tape is topologically ordered
//! by construction and a single reverse sweep visits every node once.

use super::{Tensor, NORM_EPS};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Elementwise unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
}

/// Kind tag of every recorded operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    DivScalar,
    AddBias,
    Unary(Unary),
    Transpose,
    NormalizeRows,
    RowSum,
    Sum,
    Mean,
    Diag,
    RowLogSumExp,
    GatherRows,
    RowCosine,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    DivScalar(Var, f64),
    AddBias(Var, Var),
    Unary(Unary, Var),
    Transpose(Var),
    /// Keeps the per-row norms of the input.
    NormalizeRows(Var, Vec<f64>),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Diag(Var),
    RowLogSumExp {
        input: Var,
        exclude_diagonal: bool,
    },
    GatherRows(Var, Vec<usize>),
    RowCosine(Var, Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::DivScalar(..) => OpKind::DivScalar,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Unary(u, _) => OpKind::Unary(*u),
            Op::Transpose(_) => OpKind::Transpose,
            Op::NormalizeRows(..) => OpKind::NormalizeRows,
            Op::RowSum(_) => OpKind::RowSum,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Diag(_) => OpKind::Diag,
            Op::RowLogSumExp { .. } => OpKind::RowLogSumExp,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::RowCosine(..) => OpKind::RowCosine,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    corrupted: Option<OpKind>,
}

/// Gradients of a scalar with respect to every grad-enabled leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it is not a grad-enabled leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for a grad-enabled leaf; panics otherwise.
    pub fn wrt(&self, var: Var) -> &Tensor {
        self.get(var)
            .unwrap_or_else(|| panic!("node {} is not a grad-enabled leaf", var.0))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook for gradient-check harnesses: the backward rule of `kind`
    /// is scaled by 1.5, producing wrong gradients on purpose.
    #[doc(hidden)]
    pub fn with_corrupted_rule(kind: OpKind) -> Self {
        Self {
            nodes: Vec::new(),
            corrupted: Some(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> Result<f64> {
        self.value(var).item()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.value(var).shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(
                op,
                format!("expected a matrix, got shape {s:?}"),
            )),
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("{m}x{k} times {k2}x{n}")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, n], out),
            Op::MatMul(a, b),
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("shapes {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn div_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x / c);
        let rg = self.needs(&[a]);
        self.push(value, Op::DivScalar(a, c), rg)
    }

    /// Adds a bias row (shape `[n]` or `[1, n]`) to every row of an `m x n`
    /// matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_bias")?;
        let bn = self.value(bias).numel();
        if bn != n {
            return Err(Error::dim("add_bias", format!("{m}x{n} plus bias of {bn}")));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, b)| x + b))
            .collect();
        let rg = self.needs(&[x, bias]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, n], data),
            Op::AddBias(x, bias),
            rg,
        ))
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let v = self.value(a);
        if kind == Unary::Log {
            if let Some(bad) = v.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("argument {bad} is not positive"),
                });
            }
        }
        let value = match kind {
            Unary::Tanh => v.map(f64::tanh),
            Unary::Relu => v.map(|x| if x > 0.0 { x } else { 0.0 }),
            Unary::Softplus => v.map(softplus),
            Unary::Exp => v.map(f64::exp),
            Unary::Log => v.map(f64::ln),
        };
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Unary(kind, a), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a).expect("tanh is total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a).expect("relu is total")
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Unary::Softplus, a).expect("softplus is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let data = transpose_raw(self.value(a).data(), m, n);
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![n, m], data),
            Op::Transpose(a),
            rg,
        ))
    }

    /// Scales every row to unit Euclidean norm. A rank-1 input is one row.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (_, cols) = v.as_rows()?;
        let mut norms = Vec::new();
        let mut data = Vec::with_capacity(v.numel());
        for row in v.data().chunks(cols) {
            let n = super::norm(row);
            if n <= NORM_EPS {
                return Err(Error::Degenerate {
                    op: "normalize_rows",
                });
            }
            norms.push(n);
            data.extend(row.iter().map(|x| x / n));
        }
        let value = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::NormalizeRows(a, norms), rg))
    }

    /// Sums each row, producing an `m x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (m, cols) = v.as_rows()?;
        let data = v.data().chunks(cols).map(|r| r.iter().sum()).collect();
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, 1], data),
            Op::RowSum(a),
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: f64 = v.data().iter().sum();
        let value = Tensor::scalar(s / v.numel() as f64);
        let rg = self.needs(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "diag")?;
        if m != n {
            return Err(Error::dim("diag", format!("{m}x{n} is not square")));
        }
        let v = self.value(a).data();
        let data = (0..n).map(|i| v[i * n + i]).collect();
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![n, 1], data),
            Op::Diag(a),
            rg,
        ))
    }

    /// `log(sum_j exp(x_ij))` for each row, as an `m x 1` column, computed by
    /// shifting with the row maximum. With `exclude_diagonal` the input must
    /// be square and entry `(i, i)` is left out of row `i`.
    pub fn row_logsumexp(&mut self, a: Var, exclude_diagonal: bool) -> Result<Var> {
        let (m, n) = self.dims2(a, "row_logsumexp")?;
        if exclude_diagonal {
            if m != n {
                return Err(Error::dim(
                    "row_logsumexp",
                    format!("{m}x{n} must be square to exclude the diagonal"),
                ));
            }
            if n < 2 {
                return Err(Error::contract(
                    "row_logsumexp over an empty set: need at least two columns",
                ));
            }
        }
        let v = self.value(a).data();
        let data = v
            .chunks(n)
            .enumerate()
            .map(|(i, row)| {
                let keep = |j: &usize| !(exclude_diagonal && *j == i);
                let max = (0..n)
                    .filter(keep)
                    .map(|j| row[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..n).filter(keep).map(|j| (row[j] - max).exp()).sum();
                max + s.ln()
            })
            .collect();
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, 1], data),
            Op::RowLogSumExp {
                input: a,
                exclude_diagonal,
            },
            rg,
        ))
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let (m, n) = v.as_rows()?;
        if let Some(bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Index(format!("gather_rows: row {bad} of {m}")));
        }
        if indices.is_empty() {
            return Err(Error::contract("gather_rows needs at least one index"));
        }
        let data = indices
            .iter()
            .flat_map(|&i| v.data()[i * n..(i + 1) * n].iter().copied())
            .collect();
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![indices.len(), n], data),
            Op::GatherRows(a, indices.to_vec()),
            rg,
        ))
    }

    /// Cosine similarity of aligned rows as an `m x 1` column, computed as
    /// `a.b / sqrt(|a|^2 |b|^2)` so that identical rows give exactly 1.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_cosine")?;
        let (m, cols) = self.value(a).as_rows()?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(m);
        for (ra, rb) in va.chunks(cols).zip(vb.chunks(cols)) {
            let (aa, bb) = (super::dot(ra, ra), super::dot(rb, rb));
            if aa.sqrt() <= NORM_EPS || bb.sqrt() <= NORM_EPS {
                return Err(Error::Degenerate { op: "row_cosine" });
            }
            data.push(super::dot(ra, rb) / (aa * bb).sqrt());
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, 1], data),
            Op::RowCosine(a, b),
            rg,
        ))
    }

    pub fn l2_normalize(&mut self, v: Var) -> Result<Var> {
        self.normalize_rows(v)
    }

    /// Differentiable cosine similarity of two vectors.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let c = self.row_cosine(u, v)?;
        Ok(self.sum(c))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut contribs = self.local_grads(node, &g);
            if self.corrupted == Some(node.op.kind()) {
                for (_, c) in contribs.iter_mut() {
                    c.iter_mut().for_each(|x| *x *= 1.5);
                }
            }
            for (input, c) in contribs {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
            // Interior gradients are consumed above; leaves keep theirs.
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                    return None;
                }
                let shape = node.value.shape().to_vec();
                let data = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                Some(Tensor::from_parts_unchecked(shape, data))
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of one node for its upstream gradient `g`.
    fn local_grads(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, k) = as_dims(&self.nodes[a.0].value);
                let n = self.nodes[b.0].value.shape()[1];
                // dA = G B^T, dB = A^T G
                let bt = transpose_raw(val(*b), k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                let at = transpose_raw(val(*a), m, k);
                let db = matmul_raw(&at, g, k, m, n);
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let da = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                let db = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|x| x * c).collect())],
            Op::DivScalar(a, c) => vec![(*a, g.iter().map(|x| x / c).collect())],
            Op::AddBias(x, bias) => {
                let n = self.nodes[bias.0].value.numel();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
                vec![(*x, g.to_vec()), (*bias, db)]
            }
            Op::Unary(kind, a) => {
                let x = val(*a);
                let y = node.value.data();
                let d: Vec<f64> = match kind {
                    Unary::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Unary::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Unary::Softplus => g.iter().zip(x).map(|(g, x)| g * sigmoid(*x)).collect(),
                    Unary::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                    Unary::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                };
                vec![(*a, d)]
            }
            Op::Transpose(a) => {
                let (m, n) = as_dims(&self.nodes[a.0].value);
                vec![(*a, transpose_raw(g, n, m))]
            }
            Op::NormalizeRows(a, norms) => {
                let y = node.value.data();
                let cols = y.len() / norms.len();
                let mut d = Vec::with_capacity(y.len());
                for ((yr, gr), n) in y.chunks(cols).zip(g.chunks(cols)).zip(norms) {
                    let proj = super::dot(yr, gr);
                    d.extend(yr.iter().zip(gr).map(|(y, g)| (g - y * proj) / n));
                }
                vec![(*a, d)]
            }
            Op::RowSum(a) => {
                let input = &self.nodes[a.0].value;
                let cols = input.numel() / g.len();
                let d = g
                    .iter()
                    .flat_map(|&gi| std::iter::repeat_n(gi, cols))
                    .collect();
                vec![(*a, d)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.nodes[a.0].value.numel()])],
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::Diag(a) => {
                let n = g.len();
                let mut d = vec![0.0; n * n];
                for i in 0..n {
                    d[i * n + i] = g[i];
                }
                vec![(*a, d)]
            }
            Op::RowLogSumExp {
                input,
                exclude_diagonal,
            } => {
                let x = val(*input);
                let out = node.value.data();
                let n = x.len() / out.len();
                let mut d = vec![0.0; x.len()];
                for (i, (row, drow)) in x.chunks(n).zip(d.chunks_mut(n)).enumerate() {
                    for j in 0..n {
                        if *exclude_diagonal && j == i {
                            continue;
                        }
                        drow[j] = g[i] * (row[j] - out[i]).exp();
                    }
                }
                vec![(*input, d)]
            }
            Op::RowCosine(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let cos = node.value.data();
                let cols = va.len() / cos.len();
                let mut da = Vec::with_capacity(va.len());
                let mut db = Vec::with_capacity(vb.len());
                // dc/da = b / (|a||b|) - c a / |a|^2, symmetrically for b.
                for (i, (ra, rb)) in va.chunks(cols).zip(vb.chunks(cols)).enumerate() {
                    let (aa, bb) = (super::dot(ra, ra), super::dot(rb, rb));
                    let inv = 1.0 / (aa * bb).sqrt();
                    let (c, gi) = (cos[i], g[i]);
                    da.extend(ra.iter().zip(rb).map(|(x, y)| gi * (y * inv - c * x / aa)));
                    db.extend(ra.iter().zip(rb).map(|(x, y)| gi * (x * inv - c * y / bb)));
                }
                vec![(*a, da), (*b, db)]
            }
            Op::GatherRows(a, indices) => {
                let input = &self.nodes[a.0].value;
                let n = g.len() / indices.len();
                let mut d = vec![0.0; input.numel()];
                for (r, &src) in indices.iter().enumerate() {
                    d[src * n..(src + 1) * n]
                        .iter_mut()
                        .zip(&g[r * n..(r + 1) * n])
                        .for_each(|(acc, x)| *acc += x);
                }
                vec![(*a, d)]
            }
        }
    }
}

fn as_dims(t: &Tensor) -> (usize, usize) {
    (t.shape()[0], t.shape()[1])
}

/// `m x k` times `k x n`, accumulating over `k` in increasing order.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, b)| *o += aip * b);
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `ln(1 + e^x)` without overflow for large `x`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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
