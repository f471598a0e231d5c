//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every node holds a 2-D `f64` array. Elementwise binary operations broadcast
//! a `1 x n` row or a `1 x 1` scalar against the other operand. Forward-mode
//! input tangents are expressed with the same primitives, so objectives that
//! contain `d(output)/d(input)` terms differentiate like any other.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    /// `a * w^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    Column(Var, usize),
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// A tape of matrix-valued operations, built eagerly.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar node with respect to every node of the graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the objective does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, with zeros when the objective does not depend on it.
    pub fn get_or_zeros(&self, var: Var) -> Array2<f64> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(self.shapes[var.0]))
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

/// Sum `g` down to `shape` along broadcast axes.
fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[[0, 0]]
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param => true,
            Op::MatMulT(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Tanh(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Column(a, _) => self.nodes[a.0].requires_grad,
            Op::ConcatCols(parts) => parts.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Param)
    }

    pub fn param_scalar(&mut self, value: f64) -> Var {
        self.param(Array2::from_elem((1, 1), value))
    }

    /// `a * w^T`, for `a: n x k` and `w: m x k`.
    pub fn matmul_t(&mut self, a: Var, w: Var) -> Result<Var> {
        let (sa, sw) = (self.shape(a), self.shape(w));
        if sa.1 != sw.1 {
            return Err(Error::Graph(format!(
                "matmul_t: {}x{} times ({}x{})^T",
                sa.0, sa.1, sw.0, sw.1
            )));
        }
        let value = self.value(a).dot(&self.value(w).t());
        Ok(self.push(value, Op::MatMulT(a, w)))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Array2<f64>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = broadcast_shape(sa, sb).ok_or_else(|| {
            Error::Graph(format!(
                "{name}: cannot broadcast {}x{} with {}x{}",
                sa.0, sa.1, sb.0, sb.1
            ))
        })?;
        let va = self.value(a).broadcast(shape).expect("checked shape");
        let vb = self.value(b).broadcast(shape).expect("checked shape");
        Ok(Zip::from(&va).and(&vb).map_collect(|&x, &y| f(x, y)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean of all entries, as a `1 x 1` node.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let len = self.value(a).len();
        if len == 0 {
            return Err(Error::Graph("mean of an empty node".into()));
        }
        let v = Array2::from_elem((1, 1), self.value(a).sum() / len as f64);
        Ok(self.push(v, Op::Mean(a)))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let (_, cols) = self.shape(a);
        if j >= cols {
            return Err(Error::Graph(format!("column {j} of a node with {cols} columns")));
        }
        let v = self.value(a).column(j).to_owned().insert_axis(Axis(1));
        Ok(self.push(v, Op::Column(a, j)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Graph("concat of zero nodes".into()));
        };
        let rows = self.shape(first).0;
        if let Some(p) = parts.iter().find(|p| self.shape(**p).0 != rows) {
            return Err(Error::Graph(format!(
                "concat: {} rows vs {rows}",
                self.shape(*p).0
            )));
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Graph(e.to_string()))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Gradients of the `1 x 1` node `objective` with respect to every node.
    pub fn backward(&self, objective: Var) -> Result<Gradients> {
        if self.shape(objective) != (1, 1) {
            let (r, c) = self.shape(objective);
            return Err(Error::Graph(format!("objective must be 1x1, got {r}x{c}")));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[objective.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=objective.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let mut send = |var: Var, contribution: Array2<f64>| {
                if !self.nodes[var.0].requires_grad {
                    return;
                }
                let contribution = reduce_to(contribution, self.shape(var));
                match &mut grads[var.0] {
                    Some(acc) => *acc += &contribution,
                    slot @ None => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::MatMulT(a, w) => {
                    send(*a, g.dot(self.value(*w)));
                    send(*w, g.t().dot(self.value(*a)));
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.mapv(|x| -x));
                }
                Op::Mul(a, b) => {
                    send(*a, &g * self.value(*b));
                    send(*b, &g * self.value(*a));
                }
                Op::Div(a, b) => {
                    let vb = self.value(*b);
                    send(*a, &g / vb);
                    // d(a/b)/db = -(a/b)/b
                    send(*b, -(&g * &node.value) / vb);
                }
                Op::Neg(a) => send(*a, g.mapv(|x| -x)),
                Op::Scale(a, c) => send(*a, g.mapv(|x| c * x)),
                Op::AddConst(a) => send(*a, g.clone()),
                Op::Tanh(a) => {
                    let d = Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&gi, &y| gi * (1.0 - y * y));
                    send(*a, d);
                }
                Op::Square(a) => {
                    let d = Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&gi, &x| 2.0 * gi * x);
                    send(*a, d);
                }
                Op::Sqrt(a) => {
                    let d = Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&gi, &y| if y > 0.0 { gi * 0.5 / y } else { 0.0 });
                    send(*a, d);
                }
                Op::Sum(a) => send(*a, Array2::from_elem(self.shape(*a), g[[0, 0]])),
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let n = (shape.0 * shape.1) as f64;
                    send(*a, Array2::from_elem(shape, g[[0, 0]] / n));
                }
                Op::Column(a, j) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    d.column_mut(*j).assign(&g.column(0));
                    send(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.shape(*p).1;
                        let slice = g.slice(ndarray::s![.., offset..offset + cols]).to_owned();
                        offset += cols;
                        send(*p, slice);
                    }
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }
}
