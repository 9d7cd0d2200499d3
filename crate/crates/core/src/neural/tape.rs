//! A small reverse-mode differentiation tape over dense matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients. Parameters enter
//! the tape once per graph through [`Tape::param`], so their gradients can
//! be read back by parameter id after the backward pass.

use nalgebra::DMatrix;

use super::params::{ParamId, ParamStore};

pub type Mat = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `(n x m) + (1 x m)` with the row broadcast over `n`.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    /// Sum over all cells of binary cross-entropy with logits.
    BceWithLogits(Var, Mat),
    /// Sum over all cells of squared error.
    SquaredError(Var, Mat),
    /// Sum over all cells of `0.5 * (mu^2 + exp(logvar) - 1 - logvar)`.
    GaussianKl(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

/// Gradients from one backward pass, indexed like the tape's nodes.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: Vec<Option<Var>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for a parameter, or `None` when it did not take part.
    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(id.0).copied().flatten().and_then(|v| self.of(v))
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Mat::zeros(rows, cols))
    }

    /// Brings a parameter onto the tape (once per tape).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        if let Some(v) = self.params[id.0] {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        debug_assert_eq!(r.nrows(), 1);
        let mut value = self.value(a).clone();
        for (j, mut col) in value.column_iter_mut().enumerate() {
            let b = r[(0, j)];
            col.iter_mut().for_each(|x| *x += b);
        }
        self.push(value, Op::AddRow(a, row))
    }

    /// `x * w + b` for a weight matrix and a bias row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).component_mul(self.value(b));
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            debug_assert_eq!(v.nrows(), rows);
            value.columns_mut(at, v.ncols()).copy_from(v);
            at += v.ncols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).columns(start, len).into_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_element(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Summed binary cross-entropy between `sigmoid(logits)` and 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Mat) -> Var {
        let l = self.value(logits);
        let total: f64 = l
            .iter()
            .zip(targets.iter())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        self.push(Mat::from_element(1, 1, total), Op::BceWithLogits(logits, targets))
    }

    pub fn squared_error(&mut self, pred: Var, targets: Mat) -> Var {
        let total: f64 = self.value(pred).iter().zip(targets.iter()).map(|(&p, &y)| (p - y) * (p - y)).sum();
        self.push(Mat::from_element(1, 1, total), Op::SquaredError(pred, targets))
    }

    /// KL divergence of `N(mu, exp(logvar))` from the standard normal, summed.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Var {
        let total: f64 = self
            .value(mu)
            .iter()
            .zip(self.value(logvar).iter())
            .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum();
        self.push(Mat::from_element(1, 1, total), Op::GaussianKl(mu, logvar))
    }

    /// Which inputs of every ReLU node are positive. Finite differences are
    /// only valid while this pattern is unchanged.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).iter().map(|&x| x > 0.0).collect::<Vec<_>>())
            .collect()
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Mat::from_element(1, 1, 1.0));
        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += g,
                slot @ None => *slot = Some(g),
            }
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::MatMul(a, b) => {
                    let ga = &g * self.value(*b).transpose();
                    let gb = self.value(*a).tr_mul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let grow = Mat::from_fn(1, g.ncols(), |_, j| g.column(j).sum());
                    acc(&mut grads, *row, grow);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.component_mul(self.value(*b));
                    let gb = g.component_mul(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, &g * *k),
                Op::Sigmoid(a) => {
                    let d = node.value.map(|s| s * (1.0 - s));
                    acc(&mut grads, *a, g.component_mul(&d));
                }
                Op::Tanh(a) => {
                    let d = node.value.map(|t| 1.0 - t * t);
                    acc(&mut grads, *a, g.component_mul(&d));
                }
                Op::Relu(a) => {
                    let d = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, g.component_mul(&d));
                }
                Op::Exp(a) => acc(&mut grads, *a, g.component_mul(&node.value)),
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let n = self.value(p).ncols();
                        acc(&mut grads, p, g.columns(at, n).into_owned());
                        at += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.nrows(), src.ncols());
                    ga.columns_mut(*start, g.ncols()).copy_from(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let src = self.value(*a);
                    acc(&mut grads, *a, Mat::from_element(src.nrows(), src.ncols(), g[(0, 0)]));
                }
                Op::BceWithLogits(logits, targets) => {
                    let s = g[(0, 0)];
                    let l = self.value(*logits);
                    let ga = Mat::from_fn(l.nrows(), l.ncols(), |r, c| s * (sigmoid(l[(r, c)]) - targets[(r, c)]));
                    acc(&mut grads, *logits, ga);
                }
                Op::SquaredError(pred, targets) => {
                    let s = g[(0, 0)];
                    let ga = (self.value(*pred) - targets) * (2.0 * s);
                    acc(&mut grads, *pred, ga);
                }
                Op::GaussianKl(mu, logvar) => {
                    let s = g[(0, 0)];
                    acc(&mut grads, *mu, self.value(*mu) * s);
                    let glv = self.value(*logvar).map(|lv| 0.5 * s * (lv.exp() - 1.0));
                    acc(&mut grads, *logvar, glv);
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads, params: self.params.clone() }
    }
}
