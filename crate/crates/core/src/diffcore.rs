//! Tensor-valued reverse-mode tape with second-order forward jets.
//!
//! Every node holds a dense `rows x cols` matrix. Network activations are laid
//! out as `features x points`, so one node carries a whole collocation batch.
//! Input-space derivatives are propagated forward as truncated Taylor jets
//! ([`Jet2`]) whose coefficients are themselves tape nodes; a single reverse
//! sweep then yields parameter gradients of any expression built from them.

use std::collections::HashMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Shift(Var, f64),
    Sin { arg: Var, cos: Option<Var> },
    Cos { arg: Var, sin: Option<Var> },
    Tanh(Var),
    Exp(Var),
    Powi(Var, i32),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Broadcast(Var, usize),
    SliceCols(Var, usize, usize),
    Row(Var, usize),
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match *self {
            Leaf | Constant => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) | AddBias(a, b) => {
                vec![a, b]
            }
            Neg(a) | Scale(a, _) | Shift(a, _) | Tanh(a) | Exp(a) | Powi(a, _) => vec![a],
            Sin { arg, .. } | Cos { arg, .. } => vec![arg],
            Broadcast(a, _) | SliceCols(a, _, _) | Row(a, _) | Sum(a) | Mean(a) => vec![a],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Constant => "constant",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Neg(..) => "neg",
            Scale(..) => "scale",
            Shift(..) => "shift",
            Sin { .. } => "sin",
            Cos { .. } => "cos",
            Tanh(..) => "tanh",
            Exp(..) => "exp",
            Powi(..) => "powi",
            MatMul(..) => "matmul",
            AddBias(..) => "add_bias",
            Broadcast(..) => "broadcast",
            SliceCols(..) => "slice_cols",
            Row(..) => "row",
            Sum(..) => "sum",
            Mean(..) => "mean",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    // true when the node depends on at least one leaf
    tracked: bool,
}

/// Append-only record of tensor operations.
#[derive(Default)]
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.dim(), (1, 1), "scalar() on a non-scalar node");
        t[[0, 0]]
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    pub fn kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let tracked = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => op.parents().iter().any(|p| self.nodes[p.0].tracked),
        };
        self.nodes.push(Node { op, value, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn leaf_scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::from_elem((1, 1), x))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::from_elem((1, 1), x))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) {
        let (sa, sb) = (self.value(a).dim(), self.value(b).dim());
        assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    /// Elementwise quotient; fails if any denominator entry is zero.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div");
        if self.value(b).iter().any(|&x| x == 0.0) {
            return Err(Error::Domain {
                node: self.nodes.len(),
                what: "division by zero",
            });
        }
        let v = self.value(a) / self.value(b);
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(Op::Shift(a, c), v)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sin);
        self.push(Op::Sin { arg: a, cos: None }, v)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::cos);
        self.push(Op::Cos { arg: a, sin: None }, v)
    }

    /// `(sin a, cos a)` as two linked nodes that reuse each other as local partials.
    pub fn sin_cos(&mut self, a: Var) -> (Var, Var) {
        let x = self.value(a);
        let mut sv = Tensor::zeros(x.dim());
        let mut cv = Tensor::zeros(x.dim());
        Zip::from(&mut sv).and(&mut cv).and(x).for_each(|s, c, &x| {
            let (si, co) = x.sin_cos();
            *s = si;
            *c = co;
        });
        let sin_id = Var(self.nodes.len());
        let cos_id = Var(sin_id.0 + 1);
        self.push(
            Op::Sin {
                arg: a,
                cos: Some(cos_id),
            },
            sv,
        );
        self.push(
            Op::Cos {
                arg: a,
                sin: Some(sin_id),
            },
            cv,
        );
        (sin_id, cos_id)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(Op::Exp(a), v)
    }

    /// Integer power; negative exponents fail on zero entries.
    pub fn powi(&mut self, a: Var, n: i32) -> Result<Var> {
        if n < 0 && self.value(a).iter().any(|&x| x == 0.0) {
            return Err(Error::Domain {
                node: self.nodes.len(),
                what: "negative power of zero",
            });
        }
        let v = self.value(a).mapv(|x| x.powi(n));
        Ok(self.push(Op::Powi(a, n), v))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `x + bias` with a column vector broadcast across columns.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (rows, _) = self.value(x).dim();
        assert_eq!(self.value(bias).dim(), (rows, 1), "add_bias: bias shape");
        let v = self.value(x) + self.value(bias);
        self.push(Op::AddBias(x, bias), v)
    }

    /// Repeat a column vector `cols` times.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let col = self.value(a);
        assert_eq!(col.ncols(), 1, "broadcast_cols: expected a column vector");
        let v = col
            .broadcast((col.nrows(), cols))
            .expect("column broadcast")
            .to_owned();
        self.push(Op::Broadcast(a, cols), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start, end), v)
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let v = self.value(a).slice(s![r..r + 1, ..]).to_owned();
        self.push(Op::Row(a, r), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::from_elem((1, 1), t.sum() / t.len() as f64);
        self.push(Op::Mean(a), v)
    }

    /// Mean of squared entries.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        self.mean(sq)
    }

    /// Reverse sweep from a scalar `output`; returns one gradient per `wrt`
    /// node, shaped like that node. The tape is left untouched.
    pub fn gradient(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::UnknownNode(output.0));
        }
        if let Some(bad) = wrt.iter().find(|w| w.0 >= self.nodes.len()) {
            return Err(Error::UnknownNode(bad.0));
        }
        let (rows, cols) = self.value(output).dim();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarOutput { rows, cols });
        }

        let n = output.0 + 1;
        let mut wanted: HashMap<usize, Option<Tensor>> = HashMap::new();
        for w in wrt {
            wanted.insert(w.0, None);
        }
        // Nodes whose adjoint can reach a requested gradient.
        let mut relevant = vec![false; n];
        for i in 0..n {
            let node = &self.nodes[i];
            relevant[i] = wanted.contains_key(&i)
                || matches!(node.op, Op::Leaf)
                || node.op.parents().iter().any(|p| relevant[p.0]);
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; n];
        adj[output.0] = Some(Tensor::ones((1, 1)));

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            if let Some(slot) = wanted.get_mut(&i) {
                *slot = Some(g.clone());
            }
            self.backprop(i, &g, &relevant, &mut adj);
        }

        Ok(wrt
            .iter()
            .map(|w| {
                wanted
                    .get(&w.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(self.value(*w).dim()))
            })
            .collect())
    }

    fn backprop(&self, i: usize, g: &Tensor, relevant: &[bool], adj: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let live = |v: Var| v.0 < relevant.len() && relevant[v.0];
        fn slot<'a>(adj: &'a mut [Option<Tensor>], v: Var, shape: (usize, usize)) -> &'a mut Tensor {
            adj[v.0].get_or_insert_with(|| Tensor::zeros(shape))
        }
        fn add_into(adj: &mut [Option<Tensor>], v: Var, g: &Tensor) {
            match &mut adj[v.0] {
                Some(t) => *t += g,
                None => adj[v.0] = Some(g.clone()),
            }
        }

        match self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                if live(a) {
                    add_into(adj, a, g);
                }
                if live(b) {
                    add_into(adj, b, g);
                }
            }
            Op::Sub(a, b) => {
                if live(a) {
                    add_into(adj, a, g);
                }
                if live(b) {
                    *slot(adj, b, g.dim()) -= g;
                }
            }
            Op::Mul(a, b) => {
                if live(a) {
                    Zip::from(slot(adj, a, g.dim()))
                        .and(g)
                        .and(val(b))
                        .for_each(|s, &g, &b| *s += g * b);
                }
                if live(b) {
                    Zip::from(slot(adj, b, g.dim()))
                        .and(g)
                        .and(val(a))
                        .for_each(|s, &g, &a| *s += g * a);
                }
            }
            Op::Div(a, b) => {
                let q = &self.nodes[i].value;
                if live(a) {
                    Zip::from(slot(adj, a, g.dim()))
                        .and(g)
                        .and(val(b))
                        .for_each(|s, &g, &b| *s += g / b);
                }
                if live(b) {
                    Zip::from(slot(adj, b, g.dim()))
                        .and(g)
                        .and(val(b))
                        .and(q)
                        .for_each(|s, &g, &b, &q| *s -= g * q / b);
                }
            }
            Op::Neg(a) => {
                if live(a) {
                    *slot(adj, a, g.dim()) -= g;
                }
            }
            Op::Scale(a, c) => {
                if live(a) {
                    Zip::from(slot(adj, a, g.dim()))
                        .and(g)
                        .for_each(|s, &g| *s += c * g);
                }
            }
            Op::Shift(a, _) => {
                if live(a) {
                    add_into(adj, a, g);
                }
            }
            Op::Sin { arg, cos } => {
                if live(arg) {
                    let s = slot(adj, arg, g.dim());
                    match cos {
                        Some(c) => Zip::from(s)
                            .and(g)
                            .and(val(c))
                            .for_each(|s, &g, &c| *s += g * c),
                        None => Zip::from(s)
                            .and(g)
                            .and(val(arg))
                            .for_each(|s, &g, &x| *s += g * x.cos()),
                    }
                }
            }
            Op::Cos { arg, sin } => {
                if live(arg) {
                    let s = slot(adj, arg, g.dim());
                    match sin {
                        Some(sn) => Zip::from(s)
                            .and(g)
                            .and(val(sn))
                            .for_each(|s, &g, &sn| *s -= g * sn),
                        None => Zip::from(s)
                            .and(g)
                            .and(val(arg))
                            .for_each(|s, &g, &x| *s -= g * x.sin()),
                    }
                }
            }
            Op::Tanh(a) => {
                if live(a) {
                    Zip::from(slot(adj, a, g.dim()))
                        .and(g)
                        .and(&self.nodes[i].value)
                        .for_each(|s, &g, &t| *s += g * (1.0 - t * t));
                }
            }
            Op::Exp(a) => {
                if live(a) {
                    Zip::from(slot(adj, a, g.dim()))
                        .and(g)
                        .and(&self.nodes[i].value)
                        .for_each(|s, &g, &e| *s += g * e);
                }
            }
            Op::Powi(a, k) => {
                if live(a) && k != 0 {
                    let kf = k as f64;
                    Zip::from(slot(adj, a, g.dim()))
                        .and(g)
                        .and(val(a))
                        .for_each(|s, &g, &x| *s += g * kf * x.powi(k - 1));
                }
            }
            Op::MatMul(a, b) => {
                if live(a) {
                    let shape = val(a).dim();
                    general_mat_mul(1.0, g, &val(b).t(), 1.0, slot(adj, a, shape));
                }
                if live(b) {
                    let shape = val(b).dim();
                    general_mat_mul(1.0, &val(a).t(), g, 1.0, slot(adj, b, shape));
                }
            }
            Op::AddBias(x, bias) => {
                if live(x) {
                    add_into(adj, x, g);
                }
                if live(bias) {
                    let rows = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    add_into(adj, bias, &rows);
                }
            }
            Op::Broadcast(a, _) => {
                if live(a) {
                    let rows = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    add_into(adj, a, &rows);
                }
            }
            Op::SliceCols(a, start, end) => {
                if live(a) {
                    let shape = val(a).dim();
                    let view = slot(adj, a, shape);
                    let mut part = view.slice_mut(s![.., start..end]);
                    part += g;
                }
            }
            Op::Row(a, r) => {
                if live(a) {
                    let shape = val(a).dim();
                    let mut row = slot(adj, a, shape).row_mut(r);
                    row += &g.row(0);
                }
            }
            Op::Sum(a) => {
                if live(a) {
                    let shape = val(a).dim();
                    *slot(adj, a, shape) += g[[0, 0]];
                }
            }
            Op::Mean(a) => {
                if live(a) {
                    let shape = val(a).dim();
                    let n = (shape.0 * shape.1) as f64;
                    *slot(adj, a, shape) += g[[0, 0]] / n;
                }
            }
        }
    }
}

/// Order-2 truncated Taylor jet along one input direction.
///
/// `d2` is `None` when the pass was truncated at first order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Jet2 {
    pub value: Var,
    pub d1: Var,
    pub d2: Option<Var>,
}

/// Primitive operations with jet propagation rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetOp {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Tanh,
    Exp,
    Powi(i32),
}

impl JetOp {
    fn arity(self) -> usize {
        match self {
            JetOp::Add | JetOp::Sub | JetOp::Mul | JetOp::Div => 2,
            _ => 1,
        }
    }
}

impl Tape {
    /// Jet of a quantity that does not vary along the direction.
    pub fn jet_constant(&mut self, value: Tensor, second_order: bool) -> Jet2 {
        let zeros = Tensor::zeros(value.dim());
        let value = self.constant(value);
        let d1 = self.constant(zeros.clone());
        let d2 = second_order.then(|| self.constant(zeros));
        Jet2 { value, d1, d2 }
    }

    /// Seed jet `(x, dx, 0)` for a raw input coordinate.
    pub fn jet_seed(&mut self, value: Tensor, d1: Tensor, second_order: bool) -> Jet2 {
        let zeros = Tensor::zeros(value.dim());
        let value = self.constant(value);
        let d1 = self.constant(d1);
        let d2 = second_order.then(|| self.constant(zeros));
        Jet2 { value, d1, d2 }
    }

    /// Apply a primitive to jets, recording every coefficient on the tape.
    pub fn jet2_apply(&mut self, op: JetOp, args: &[Jet2]) -> Result<Jet2> {
        if args.len() != op.arity() {
            return Err(Error::Dimension {
                what: "jet operands",
                expected: op.arity(),
                got: args.len(),
            });
        }
        let a = args[0];
        match op {
            JetOp::Add | JetOp::Sub => {
                let b = args[1];
                let f = if op == JetOp::Add { Tape::add } else { Tape::sub };
                let value = f(self, a.value, b.value);
                let d1 = f(self, a.d1, b.d1);
                let d2 = match (a.d2, b.d2) {
                    (Some(x), Some(y)) => Some(f(self, x, y)),
                    _ => None,
                };
                Ok(Jet2 { value, d1, d2 })
            }
            JetOp::Mul => Ok(self.jet_mul(a, args[1])),
            JetOp::Div => {
                let b = args[1];
                // q = a/b, q' = (a' - q b')/b, q'' = (a'' - 2 q' b' - q b'')/b
                let value = self.div(a.value, b.value)?;
                let qb1 = self.mul(value, b.d1);
                let num1 = self.sub(a.d1, qb1);
                let d1 = self.div(num1, b.value)?;
                let d2 = match (a.d2, b.d2) {
                    (Some(a2), Some(b2)) => {
                        let q1b1 = self.mul(d1, b.d1);
                        let two_q1b1 = self.scale(q1b1, 2.0);
                        let qb2 = self.mul(value, b2);
                        let t = self.sub(a2, two_q1b1);
                        let num2 = self.sub(t, qb2);
                        Some(self.div(num2, b.value)?)
                    }
                    _ => None,
                };
                Ok(Jet2 { value, d1, d2 })
            }
            JetOp::Sin => {
                let (s, c) = self.sin_cos(a.value);
                Ok(self.chain_neg_curv(a, s, c, s))
            }
            JetOp::Cos => {
                let (s, c) = self.sin_cos(a.value);
                // f = cos, f' = -sin, f'' = -cos
                let ms = self.neg(s);
                Ok(self.chain_neg_curv(a, c, ms, c))
            }
            JetOp::Tanh => {
                let t = self.tanh(a.value);
                let t2 = self.square(t);
                let one = self.constant(Tensor::ones(self.value(t).dim()));
                let fp = self.sub(one, t2);
                // f'' = -2 t (1 - t^2)
                let tfp = self.mul(t, fp);
                let neg_fpp = self.scale(tfp, 2.0);
                Ok(self.chain_neg_curv(a, t, fp, neg_fpp))
            }
            JetOp::Exp => {
                let e = self.exp(a.value);
                Ok(self.chain(a, e, e, Some(e)))
            }
            JetOp::Powi(n) => {
                let value = self.powi(a.value, n)?;
                if n == 0 {
                    let dim = self.value(value).dim();
                    let d1 = self.constant(Tensor::zeros(dim));
                    let d2 = a.d2.map(|_| self.constant(Tensor::zeros(dim)));
                    return Ok(Jet2 { value, d1, d2 });
                }
                let pm1 = self.powi(a.value, n - 1)?;
                let fp = self.scale(pm1, n as f64);
                let fpp = if n == 1 {
                    None
                } else {
                    let pm2 = self.powi(a.value, n - 2)?;
                    Some(self.scale(pm2, (n * (n - 1)) as f64))
                };
                Ok(self.chain(a, value, fp, fpp))
            }
        }
    }

    fn jet_mul(&mut self, a: Jet2, b: Jet2) -> Jet2 {
        let value = self.mul(a.value, b.value);
        let ab1 = self.mul(a.value, b.d1);
        let a1b = self.mul(a.d1, b.value);
        let d1 = self.add(ab1, a1b);
        let d2 = match (a.d2, b.d2) {
            (Some(a2), Some(b2)) => {
                let ab2 = self.mul(a.value, b2);
                let a1b1 = self.mul(a.d1, b.d1);
                let cross = self.scale(a1b1, 2.0);
                let a2b = self.mul(a2, b.value);
                let t = self.add(ab2, cross);
                Some(self.add(t, a2b))
            }
            _ => None,
        };
        Jet2 { value, d1, d2 }
    }

    /// `(f, f' a1, f' a2 + f'' a1^2)`.
    fn chain(&mut self, a: Jet2, f: Var, fp: Var, fpp: Option<Var>) -> Jet2 {
        let d1 = self.mul(fp, a.d1);
        let d2 = a.d2.map(|a2| {
            let lin = self.mul(fp, a2);
            match fpp {
                Some(fpp) => {
                    let sq = self.square(a.d1);
                    let curv = self.mul(fpp, sq);
                    self.add(lin, curv)
                }
                None => lin,
            }
        });
        Jet2 { value: f, d1, d2 }
    }

    /// Like [`Tape::chain`] but takes `-f''`, which saves a negation for sin/tanh.
    fn chain_neg_curv(&mut self, a: Jet2, f: Var, fp: Var, neg_fpp: Var) -> Jet2 {
        let d1 = self.mul(fp, a.d1);
        let d2 = a.d2.map(|a2| {
            let lin = self.mul(fp, a2);
            let sq = self.square(a.d1);
            let curv = self.mul(neg_fpp, sq);
            self.sub(lin, curv)
        });
        Jet2 { value: f, d1, d2 }
    }

    /// Apply a unary primitive to several jets that share one value channel
    /// (one jet per input direction). `f`, `f'` and `f''` are recorded once.
    pub fn jet_unary_shared(&mut self, op: JetOp, jets: &[Jet2]) -> Result<Vec<Jet2>> {
        let Some(first) = jets.first() else {
            return Ok(Vec::new());
        };
        if jets.iter().any(|j| j.value != first.value) {
            return Err(Error::Config(
                "jet_unary_shared: jets must share a value node".into(),
            ));
        }
        let a = first.value;
        let out = match op {
            JetOp::Sin => {
                let (s, c) = self.sin_cos(a);
                jets.iter()
                    .map(|&j| self.chain_neg_curv(j, s, c, s))
                    .collect()
            }
            JetOp::Cos => {
                let (s, c) = self.sin_cos(a);
                let ms = self.neg(s);
                jets.iter()
                    .map(|&j| self.chain_neg_curv(j, c, ms, c))
                    .collect()
            }
            JetOp::Tanh => {
                let t = self.tanh(a);
                let t2 = self.square(t);
                let one = self.constant(Tensor::ones(self.value(t).dim()));
                let fp = self.sub(one, t2);
                let tfp = self.mul(t, fp);
                let neg_fpp = self.scale(tfp, 2.0);
                jets.iter()
                    .map(|&j| self.chain_neg_curv(j, t, fp, neg_fpp))
                    .collect()
            }
            JetOp::Exp => {
                let e = self.exp(a);
                jets.iter().map(|&j| self.chain(j, e, e, Some(e))).collect()
            }
            _ => {
                let mut out = Vec::with_capacity(jets.len());
                for &j in jets {
                    out.push(self.jet2_apply(op, &[j])?);
                }
                out
            }
        };
        Ok(out)
    }

    /// Affine map applied to several jets sharing one value channel.
    pub fn jet_affine_shared(&mut self, weight: Var, bias: Option<Var>, jets: &[Jet2]) -> Vec<Jet2> {
        let Some(first) = jets.first() else {
            return Vec::new();
        };
        let wx = self.matmul(weight, first.value);
        let value = match bias {
            Some(b) => self.add_bias(wx, b),
            None => wx,
        };
        jets.iter()
            .map(|j| {
                let d1 = self.matmul(weight, j.d1);
                let d2 = j.d2.map(|d2| self.matmul(weight, d2));
                Jet2 { value, d1, d2 }
            })
            .collect()
    }

    /// Affine map `W x + b` applied to every jet channel (bias only on the value).
    pub fn jet_affine(&mut self, weight: Var, bias: Option<Var>, x: Jet2) -> Jet2 {
        let wx = self.matmul(weight, x.value);
        let value = match bias {
            Some(b) => self.add_bias(wx, b),
            None => wx,
        };
        let d1 = self.matmul(weight, x.d1);
        let d2 = x.d2.map(|d2| self.matmul(weight, d2));
        Jet2 { value, d1, d2 }
    }
}
