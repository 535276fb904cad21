//! Wengert tape over dense row-major matrices.
//!
//! Every node holds a `rows x cols` matrix. Batched computations keep one
//! sample per row, so a vector is a `1 x n` node and a scalar is `1 x 1`.
//! Nodes are appended in evaluation order, which makes the sequence
//! topologically sorted by construction.

use ndarray::{s, Array2, Axis, Zip};

use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a (B x n) + row (1 x n)` broadcast over rows.
    AddRow(Var, Var),
    /// `1 x n` repeated to `B x n`.
    BroadcastRows(Var),
    /// `x (B x in) . w^T` with `w` stored as `out x in`.
    MatMulT(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// Per-column `x * scale + shift` with constant coefficients.
    ColAffine(Var, Vec<f64>),
    Tanh(Var),
    Sigmoid(Var),
    Swish(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sin(Var),
    Cos(Var),
    Relu(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    StopGradient,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Array2<f64>>,
    tracked: Vec<bool>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `v`, with zeros for nodes the root does not depend on.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        match self.get(v) {
            Some(a) => a.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Array2<f64> {
        match self.adjoints[v.0].take() {
            Some(a) => a,
            None => Array2::zeros(self.shapes[v.0]),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].dim()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, tracked: bool) -> Var {
        self.ops.push(op);
        self.values.push(value);
        self.tracked.push(tracked);
        Var(self.ops.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.tracked[v.0])
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives an adjoint.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.leaf(a)
    }

    pub fn constant_row(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(a)
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let mut out = self.values[a.0].clone();
        Zip::from(&mut out)
            .and(&self.values[b.0])
            .for_each(|x, &y| *x = f(*x, y));
        let t = self.tracked(&[a, b]);
        Ok(self.push(op, out, t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(Error::shape(format!(
                "add_row: row {:?} does not broadcast over {:?}",
                self.shape(row),
                self.shape(a)
            )));
        }
        let mut out = self.values[a.0].clone();
        out += &self.values[row.0];
        let t = self.tracked(&[a, row]);
        Ok(self.push(Op::AddRow(a, row), out, t))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, n) = self.shape(a);
        if r != 1 {
            return Err(Error::shape(format!("broadcast_rows: source has {r} rows, expected 1")));
        }
        let out = self.values[a.0].broadcast((rows, n)).expect("broadcast").to_owned();
        let t = self.tracked(&[a]);
        Ok(self.push(Op::BroadcastRows(a), out, t))
    }

    /// `x . w^T`, i.e. applies the `out x in` matrix `w` to every row of `x`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (_, xin) = self.shape(x);
        let (out_dim, win) = self.shape(w);
        if xin != win {
            return Err(Error::shape(format!(
                "matmul: input has {xin} columns but weight is {out_dim}x{win}"
            )));
        }
        let out = self.values[x.0].dot(&self.values[w.0].t());
        let t = self.tracked(&[x, w]);
        Ok(self.push(Op::MatMulT(x, w), out, t))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = &self.values[a.0] * c;
        let t = self.tracked(&[a]);
        self.push(Op::Scale(a, c), out, t)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = &self.values[a.0] + c;
        let t = self.tracked(&[a]);
        self.push(Op::AddScalar(a), out, t)
    }

    /// Per-column `x * scale[j] + shift[j]`.
    pub fn col_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let (_, n) = self.shape(a);
        if scale.len() != n || shift.len() != n {
            return Err(Error::shape(format!(
                "col_affine: {n} columns, {} scales, {} shifts",
                scale.len(),
                shift.len()
            )));
        }
        let mut out = self.values[a.0].clone();
        for mut row in out.rows_mut() {
            for ((x, &m), &b) in row.iter_mut().zip(scale).zip(shift) {
                *x = *x * m + b;
            }
        }
        let t = self.tracked(&[a]);
        Ok(self.push(Op::ColAffine(a, scale.to_vec()), out, t))
    }

    fn unary(&mut self, a: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let out = self.values[a.0].mapv(f);
        let t = self.tracked(&[a]);
        self.push(op, out, t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Swish(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.values[a.0].sum());
        let t = self.tracked(&[a]);
        self.push(Op::Sum(a), out, t)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.values[a.0];
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let t = self.tracked(&[a]);
        self.push(Op::Mean(a), out, t)
    }

    /// Row-wise sum, `B x n -> B x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.values[a.0].sum_axis(Axis(1)).insert_axis(Axis(1));
        let t = self.tracked(&[a]);
        self.push(Op::SumCols(a), out, t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat of zero parts"));
        };
        let rows = self.shape(*first).0;
        if let Some(bad) = parts.iter().find(|p| self.shape(**p).0 != rows) {
            return Err(Error::shape(format!(
                "concat: {rows} rows vs {} rows",
                self.shape(*bad).0
            )));
        }
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat rows checked");
        let t = self.tracked(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out, t))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (_, n) = self.shape(a);
        if start + len > n {
            return Err(Error::shape(format!(
                "slice [{start}, {}) out of {n} columns",
                start + len
            )));
        }
        let out = self.values[a.0].slice(s![.., start..start + len]).to_owned();
        let t = self.tracked(&[a]);
        Ok(self.push(Op::SliceCols(a, start), out, t))
    }

    /// Identity in value, blocks adjoint flow.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.values[a.0].clone();
        self.push(Op::StopGradient, out, false)
    }

    /// Reverse sweep from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.shape(root) != (1, 1) {
            return Err(Error::shape(format!(
                "backward root must be 1x1, got {:?}",
                self.shape(root)
            )));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        adj[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            if self.tracked[i] {
                self.propagate(i, &g, &mut adj);
            }
            adj[i] = Some(g);
        }

        let shapes = self.values.iter().map(|v| v.dim()).collect();
        Ok(Gradients { adjoints: adj, shapes })
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, adj: &mut [Option<Array2<f64>>]) {
        let val = |v: Var| &self.values[v.0];
        let out = &self.values[i];
        let mut acc = |v: Var, d: Array2<f64>| {
            if !self.tracked[v.0] {
                return;
            }
            match &mut adj[v.0] {
                Some(a) => *a += &d,
                slot @ None => *slot = Some(d),
            }
        };
        let elementwise = |a: Var, f: &dyn Fn(f64, f64, f64) -> f64| {
            let mut d = g.clone();
            Zip::from(&mut d)
                .and(&self.values[a.0])
                .and(out)
                .for_each(|d, &x, &y| *d = f(*d, x, y));
            d
        };

        match &self.ops[i] {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                acc(*a, g * val(*b));
                acc(*b, g * val(*a));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(*a, g / bv);
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(out)
                    .and(bv)
                    .for_each(|d, &y, &b| *d = -*d * y / b);
                acc(*b, d);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::BroadcastRows(a) => acc(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
            Op::MatMulT(x, w) => {
                if self.tracked[x.0] {
                    acc(*x, g.dot(val(*w)));
                }
                if self.tracked[w.0] {
                    acc(*w, g.t().dot(val(*x)));
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ColAffine(a, scale) => {
                let mut d = g.clone();
                for mut row in d.rows_mut() {
                    for (x, &m) in row.iter_mut().zip(scale) {
                        *x *= m;
                    }
                }
                acc(*a, d);
            }
            Op::Tanh(a) => acc(*a, elementwise(*a, &|d, _, y| d * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, elementwise(*a, &|d, _, y| d * y * (1.0 - y))),
            Op::Swish(a) => acc(
                *a,
                elementwise(*a, &|d, x, y| {
                    let s = sigmoid(x);
                    d * (s + y * (1.0 - s))
                }),
            ),
            Op::Exp(a) => acc(*a, elementwise(*a, &|d, _, y| d * y)),
            Op::Log(a) => acc(*a, elementwise(*a, &|d, x, _| d / x)),
            Op::Square(a) => acc(*a, elementwise(*a, &|d, x, _| 2.0 * d * x)),
            Op::Sin(a) => acc(*a, elementwise(*a, &|d, x, _| d * x.cos())),
            Op::Cos(a) => acc(*a, elementwise(*a, &|d, x, _| -d * x.sin())),
            Op::Relu(a) => acc(*a, elementwise(*a, &|d, x, _| if x > 0.0 { d } else { 0.0 })),
            Op::Softplus(a) => acc(*a, elementwise(*a, &|d, x, _| d * sigmoid(x))),
            Op::Sum(a) => acc(*a, Array2::from_elem(self.shape(*a), g[[0, 0]])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, Array2::from_elem(self.shape(*a), g[[0, 0]] / n));
            }
            Op::SumCols(a) => {
                let d = g.broadcast(self.shape(*a)).expect("column broadcast").to_owned();
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    acc(*p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.shape(*a));
                let w = g.ncols();
                d.slice_mut(s![.., *start..*start + w]).assign(g);
                acc(*a, d);
            }
        }
    }
}
