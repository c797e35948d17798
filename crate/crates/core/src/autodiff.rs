//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation as a node. [`Tape::backward`] walks the
//! nodes in reverse creation order and only visits nodes that received an
//! adjoint, so branches that do not feed the output contribute nothing, not
//! even a zero, to parameter gradients.
//!
//! Shape mismatches inside a tape are programming errors and panic.

use crate::tensor::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `m + row` with the `1 x c` row broadcast over all rows of `m`.
    AddRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Gelu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LogFloor(Var, f64),
    Gather(Var, Vec<usize>),
    ColSlice(Var, usize),
    ConcatCols(Vec<Var>),
    BroadcastRows(Var),
    Sum(Var),
    WeightedSum(Var, Matrix),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`; zeros if `v` did not
    /// influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inputs, parameters and constants all enter as leaves.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
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

    pub fn add_row(&mut self, m: Var, row: Var) -> Var {
        let (mv, rv) = (self.value(m), self.value(row));
        assert_eq!((1, mv.cols), rv.shape(), "add_row expects a 1 x {} row", mv.cols);
        let mut v = mv.clone();
        for r in 0..v.rows {
            for (o, b) in v.row_mut(r).iter_mut().zip(&rv.data) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(m, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Elementwise `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).map(|x| x.max(floor).ln());
        self.push(v, Op::LogFloor(a, floor))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Matrix::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(v, Op::Gather(table, idx.to_vec()))
    }

    pub fn col_slice(&mut self, a: Var, start: usize, width: usize) -> Var {
        let av = self.value(a);
        assert!(start + width <= av.cols, "column slice out of range");
        let mut v = Matrix::zeros(av.rows, width);
        for r in 0..av.rows {
            v.row_mut(r).copy_from_slice(&av.row(r)[start..start + width]);
        }
        self.push(v, Op::ColSlice(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[offset..offset + pv.cols].copy_from_slice(pv.row(r));
            }
            offset += pv.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Repeats a `1 x c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, 1, "broadcast_rows expects a single row");
        let mut v = Matrix::zeros(rows, av.cols);
        for r in 0..rows {
            v.row_mut(r).copy_from_slice(&av.data);
        }
        self.push(v, Op::BroadcastRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// `sum(a * w)` for a constant weight matrix `w`.
    pub fn weighted_sum(&mut self, a: Var, w: Matrix) -> Var {
        let s = self.value(a).zip_map(&w, |x, y| x * y).sum();
        self.push(Matrix::scalar(s), Op::WeightedSum(a, w))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Matrix::scalar(1.0));

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose());
                    let gb = self.value(*a).transpose().matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(m, row) => {
                    let mut gr = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in gr.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *m, g.clone());
                    accumulate(&mut grads, *row, gr);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| c * x)),
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), |d, x| d * gelu_grad(x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |d, y| d * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(d, p)| d * p).sum();
                        for ((o, d), p) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = p * (d - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogFloor(a, floor) => {
                    let ga = g.zip_map(self.value(*a), |d, x| if x > *floor { d / x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather(table, idx) => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows, t.cols);
                    for (r, &k) in idx.iter().enumerate() {
                        for (o, x) in gt.row_mut(k).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::ColSlice(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::BroadcastRows(a) => {
                    let mut ga = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in ga.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads, *a, Matrix::filled(av.rows, av.cols, g.data[0]));
                }
                Op::WeightedSum(a, w) => {
                    let d = g.data[0];
                    accumulate(&mut grads, *a, w.map(|x| d * x));
                }
            }
            grads[i] = Some(g);
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
