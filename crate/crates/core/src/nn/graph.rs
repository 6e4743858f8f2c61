//! Tape-based reverse-mode differentiation over rank-2 arrays.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! tape is already topologically sorted and [`Graph::backward`] is a single
//! reverse sweep. Graphs are cheap and meant to be rebuilt for every
//! mini-batch.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `x · wᵀ` with `w` stored `out × in`.
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Shift(Var, T),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Log(Var, T),
    Pow(Var, T),
    Sum(Var),
    Mean(Var),
    GatherCols(Var, Vec<usize>),
    SelectRows(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Array2<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Array2<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn same_shape<T>(op: &'static str, a: &Array2<T>, b: &Array2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            op,
            format!("operands {:?} and {:?} differ", a.dim(), b.dim()),
        ));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.dim(), vb.dim()),
            ));
        }
        let out = va.dot(vb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `x · wᵀ` for a weight matrix stored as `out × in`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        if vx.ncols() != vw.ncols() {
            return Err(Error::shape(
                "dense",
                format!(
                    "input width {} does not match layer in-width {}",
                    vx.ncols(),
                    vw.ncols()
                ),
            ));
        }
        let out = vx.dot(&vw.t());
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::MatMulT(x, w), ng))
    }

    /// Adds a `1 × n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != vx.ncols() {
            return Err(Error::shape(
                "add_row",
                format!("row {:?} cannot broadcast onto {:?}", vr.dim(), vx.dim()),
            ));
        }
        let out = vx + vr;
        let ng = self.needs(x) || self.needs(row);
        Ok(self.push(out, Op::AddRow(x, row), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a) * k;
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    pub fn shift(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a) + k;
        let ng = self.needs(a);
        self.push(out, Op::Shift(a, k), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| if x > T::zero() { x } else { T::zero() });
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Natural log of `max(x, floor)`; the gradient vanishes where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: T) -> Var {
        let out = self.value(a).mapv(|x| x.max(floor).ln());
        let ng = self.needs(a);
        self.push(out, Op::Log(a, floor), ng)
    }

    pub fn powf(&mut self, a: Var, p: T) -> Var {
        let out = self.value(a).mapv(|x| x.powf(p));
        let ng = self.needs(a);
        self.push(out, Op::Pow(a, p), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::shape("mean", "empty operand"));
        }
        let m = v.sum() / T::from_usize_lossy(v.len());
        let ng = self.needs(a);
        Ok(self.push(Array2::from_elem((1, 1), m), Op::Mean(a), ng))
    }

    /// Picks `a[i, cols[i]]` for every row, producing an `n × 1` column.
    pub fn gather_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if cols.len() != v.nrows() {
            return Err(Error::shape(
                "gather_cols",
                format!("{} indices for {} rows", cols.len(), v.nrows()),
            ));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= v.ncols()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: v.ncols(),
            });
        }
        let out = Array2::from_shape_fn((cols.len(), 1), |(i, _)| v[[i, cols[i]]]);
        let ng = self.needs(a);
        Ok(self.push(out, Op::GatherCols(a, cols.to_vec()), ng))
    }

    /// Row selection with repetition allowed.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= v.nrows()) {
            return Err(Error::shape(
                "select_rows",
                format!("row {bad} out of range for {} rows", v.nrows()),
            ));
        }
        let out = v.select(Axis(0), rows);
        let ng = self.needs(a);
        Ok(self.push(out, Op::SelectRows(a, rows.to_vec()), ng))
    }

    /// Row-major reshape preserving element count.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a);
        if v.len() != rows * cols {
            return Err(Error::shape(
                "reshape",
                format!(
                    "{:?} has {} elements, not {}",
                    v.dim(),
                    v.len(),
                    rows * cols
                ),
            ));
        }
        let flat: Vec<T> = v.iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("element count checked");
        let ng = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Reverse sweep from a `1 × 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.dim() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", root.value.dim()),
            ));
        }
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let send = |v: Var, g: Array2<T>, grads: &mut Vec<Option<Array2<T>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        send(*a, dy.dot(&self.value(*b).t()), &mut grads);
                    }
                    if self.needs(*b) {
                        send(*b, self.value(*a).t().dot(&dy), &mut grads);
                    }
                }
                Op::MatMulT(x, w) => {
                    if self.needs(*x) {
                        send(*x, dy.dot(self.value(*w)), &mut grads);
                    }
                    if self.needs(*w) {
                        send(*w, dy.t().dot(self.value(*x)), &mut grads);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.needs(*row) {
                        send(*row, dy.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    }
                    send(*x, dy, &mut grads);
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        send(*b, dy.clone(), &mut grads);
                    }
                    send(*a, dy, &mut grads);
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        send(*b, dy.mapv(|x| -x), &mut grads);
                    }
                    send(*a, dy, &mut grads);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        send(*a, &dy * self.value(*b), &mut grads);
                    }
                    if self.needs(*b) {
                        send(*b, &dy * self.value(*a), &mut grads);
                    }
                }
                Op::Scale(a, k) => send(*a, dy * *k, &mut grads),
                Op::Shift(a, _) => send(*a, dy, &mut grads),
                Op::Relu(a) => {
                    let mut g = dy;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        if x <= T::zero() {
                            *g = T::zero();
                        }
                    });
                    send(*a, g, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let mut g = dy;
                    Zip::from(&mut g)
                        .and(&node.value)
                        .for_each(|g, &y| *g = *g * y * (T::one() - y));
                    send(*a, g, &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let g = y * &(&dy - &dot);
                    send(*a, g, &mut grads);
                }
                Op::Log(a, floor) => {
                    let mut g = dy;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        *g = if x > *floor { *g / x } else { T::zero() };
                    });
                    send(*a, g, &mut grads);
                }
                Op::Pow(a, p) => {
                    let p = *p;
                    let mut g = dy;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        *g = if p == T::zero() {
                            T::zero()
                        } else {
                            *g * p * x.powf(p - T::one())
                        };
                    });
                    send(*a, g, &mut grads);
                }
                Op::Sum(a) => {
                    let d = dy[[0, 0]];
                    send(*a, Array2::from_elem(self.value(*a).dim(), d), &mut grads);
                }
                Op::Mean(a) => {
                    let v = self.value(*a);
                    let d = dy[[0, 0]] / T::from_usize_lossy(v.len());
                    send(*a, Array2::from_elem(v.dim(), d), &mut grads);
                }
                Op::GatherCols(a, cols) => {
                    let mut g = Array2::zeros(self.value(*a).dim());
                    for (i, &c) in cols.iter().enumerate() {
                        g[[i, c]] = dy[[i, 0]];
                    }
                    send(*a, g, &mut grads);
                }
                Op::SelectRows(a, rows) => {
                    let mut g = Array2::zeros(self.value(*a).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = g.row_mut(r);
                        dst += &dy.row(i);
                    }
                    send(*a, g, &mut grads);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    let flat: Vec<T> = dy.iter().copied().collect();
                    let g = Array2::from_shape_vec(dim, flat).expect("reshape preserves size");
                    send(*a, g, &mut grads);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}
