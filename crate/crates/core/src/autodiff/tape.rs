//! Define-by-run reverse-mode tape.
//!
//! Every forward call appends a node; node ids are assigned in execution order,
//! so the node vector is already a topological order and backward is a single
//! reverse sweep. A node records its operation only when one of its inputs
//! requires a gradient; otherwise it is stored as a constant.

use std::cell::RefCell;
use std::fmt;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{count, Scalar};

/// Fused operation with a hand-written vector-Jacobian product.
///
/// Used for losses whose naive expansion would need general broadcasting
/// (pairwise kernel sums).
pub trait Primitive<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient of the output.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Exp(usize),
    Relu(usize),
    Sum(usize),
    Mean(usize),
    Square(usize),
    Scale(usize, T),
    AddRow(usize, usize),
    Column(usize, usize),
    Custom(Vec<usize>, Box<dyn Primitive<T>>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a tensor living on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable input: gradients are accumulated for it.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, true, Op::Leaf)
    }

    /// An input held fixed during differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, false, Op::Leaf)
    }

    fn push(&self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, name: &str, value: Tensor<T>, inputs: &[usize], op: Op<T>) -> Result<Var<'_, T>> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward {name}")));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push(value, requires_grad, op))
    }

    /// Appends a fused operation computed by the caller.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t, T>],
        value: Tensor<T>,
        primitive: Box<dyn Primitive<T>>,
    ) -> Result<Var<'t, T>> {
        for v in inputs {
            self.check_owner(v)?;
        }
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let name = primitive.name();
        self.record(name, value, &ids, Op::Custom(ids.clone(), primitive))
    }

    fn check_owner(&self, v: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(Error::shape("tape", "variable belongs to a different tape"))
        }
    }

    /// Accumulated gradient of a variable, if backward reached it.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Reverse sweep from a single-element loss. Gradients add onto any
    /// left by previous calls.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        self.check_owner(&loss)?;
        let mut nodes = self.nodes.borrow_mut();
        let root = loss.id;
        if nodes[root].value.len() != 1 {
            return Err(Error::NotScalar(nodes[root].value.shape().to_vec()));
        }
        let mut adjoints: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
        adjoints[root] = Some(vec![T::one()]);

        for id in (0..=root).rev() {
            let Some(g) = adjoints[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("backward at node {id}")));
            }
            propagate(&nodes, id, &g, &mut adjoints);
            let node = &mut nodes[id];
            match node.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(
    nodes: &[Node<T>],
    adjoints: &mut [Option<Vec<T>>],
    target: usize,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[target].requires_grad {
        return;
    }
    let slot = adjoints[target].get_or_insert_with(|| vec![T::zero(); nodes[target].value.len()]);
    f(slot);
}

fn propagate<T: Scalar>(nodes: &[Node<T>], id: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = nodes[a].value.dims2().expect("matmul lhs");
            let (_, n) = nodes[b].value.dims2().expect("matmul rhs");
            let bv = nodes[b].value.data();
            let av = nodes[a].value.data();
            accumulate(nodes, adj, a, |s| matmul_bt_acc(g, bv, s, m, k, n));
            accumulate(nodes, adj, b, |s| matmul_at_acc(av, g, s, m, k, n));
        }
        &Op::Add(a, b) => {
            accumulate(nodes, adj, a, |s| add_into(s, g));
            accumulate(nodes, adj, b, |s| add_into(s, g));
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, adj, a, |s| add_into(s, g));
            accumulate(nodes, adj, b, |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x = *x - y));
        }
        &Op::Mul(a, b) => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            accumulate(nodes, adj, a, |s| {
                for ((x, &gi), &bi) in s.iter_mut().zip(g).zip(bv) {
                    *x = *x + gi * bi;
                }
            });
            accumulate(nodes, adj, b, |s| {
                for ((x, &gi), &ai) in s.iter_mut().zip(g).zip(av) {
                    *x = *x + gi * ai;
                }
            });
        }
        &Op::Exp(a) => {
            let ov = out.data();
            accumulate(nodes, adj, a, |s| {
                for ((x, &gi), &oi) in s.iter_mut().zip(g).zip(ov) {
                    *x = *x + gi * oi;
                }
            });
        }
        &Op::Relu(a) => {
            let av = nodes[a].value.data();
            accumulate(nodes, adj, a, |s| {
                for ((x, &gi), &ai) in s.iter_mut().zip(g).zip(av) {
                    if ai > T::zero() {
                        *x = *x + gi;
                    }
                }
            });
        }
        &Op::Sum(a) => accumulate(nodes, adj, a, |s| s.iter_mut().for_each(|x| *x = *x + g[0])),
        &Op::Mean(a) => {
            let share = g[0] / count::<T>(nodes[a].value.len());
            accumulate(nodes, adj, a, |s| s.iter_mut().for_each(|x| *x = *x + share));
        }
        &Op::Square(a) => {
            let av = nodes[a].value.data();
            let two = T::lit(2.0);
            accumulate(nodes, adj, a, |s| {
                for ((x, &gi), &ai) in s.iter_mut().zip(g).zip(av) {
                    *x = *x + two * ai * gi;
                }
            });
        }
        &Op::Scale(a, c) => accumulate(nodes, adj, a, |s| {
            s.iter_mut().zip(g).for_each(|(x, &gi)| *x = *x + c * gi)
        }),
        &Op::AddRow(a, row) => {
            let cols = nodes[row].value.len();
            accumulate(nodes, adj, a, |s| add_into(s, g));
            accumulate(nodes, adj, row, |s| {
                for chunk in g.chunks(cols) {
                    add_into(s, chunk);
                }
            });
        }
        &Op::Column(a, j) => {
            let (_, cols) = nodes[a].value.dims2().expect("column source");
            accumulate(nodes, adj, a, |s| {
                for (i, &gi) in g.iter().enumerate() {
                    s[i * cols + j] = s[i * cols + j] + gi;
                }
            });
        }
        Op::Custom(inputs, prim) => {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| &nodes[i].value).collect();
            let grads = prim.backward(&ins, out, g);
            for (&i, gi) in inputs.iter().zip(grads) {
                accumulate(nodes, adj, i, |s| add_into(s, &gi));
            }
        }
    }
}

fn add_into<T: Scalar>(acc: &mut [T], g: &[T]) {
    acc.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> Option<T> {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }

    fn unary(self, name: &'static str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())?
        };
        self.tape.record(name, value, &[self.id], op)
    }

    fn binary(self, other: Self, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Self> {
        self.tape.check_owner(&other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            same_shape(name, a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        self.tape.record(name, value, &[self.id, other.id], op)
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn exp(self) -> Result<Self> {
        self.unary("exp", |v| v.exp(), Op::Exp(self.id))
    }

    pub fn relu(self) -> Result<Self> {
        self.unary("relu", |v| v.max(T::zero()), Op::Relu(self.id))
    }

    pub fn square(self) -> Result<Self> {
        self.unary("square", |v| v * v, Op::Square(self.id))
    }

    pub fn scale(self, c: T) -> Result<Self> {
        self.unary("scalar_mul", move |v| v * c, Op::Scale(self.id, c))
    }

    /// Sum of all elements, as a shape-`[]` scalar.
    pub fn sum(self) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::scalar(nodes[self.id].value.data().iter().copied().sum())
        };
        self.tape.record("sum", value, &[self.id], Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.is_empty() {
                return Err(Error::shape("mean", "empty tensor"));
            }
            Tensor::scalar(x.data().iter().copied().sum::<T>() / count(x.len()))
        };
        self.tape.record("mean", value, &[self.id], Op::Mean(self.id))
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        self.tape.check_owner(&other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let ((m, k), (k2, n)) = match (a.dims2(), b.dims2()) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape()))),
            };
            if k != k2 {
                return Err(Error::shape("matmul", format!("{m}x{k} by {k2}x{n}")));
            }
            let mut out = vec![T::zero(); m * n];
            matmul_acc(a.data(), b.data(), &mut out, m, k, n);
            Tensor::matrix(m, n, out)?
        };
        self.tape
            .record("matmul", value, &[self.id, other.id], Op::MatMul(self.id, other.id))
    }

    /// Adds a length-`c` row vector to every row of an `r×c` matrix.
    pub fn add_row(self, row: Self) -> Result<Self> {
        self.tape.check_owner(&row)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, r) = (&nodes[self.id].value, &nodes[row.id].value);
            let (rows, cols) = a
                .dims2()
                .ok_or_else(|| Error::shape("broadcast_row", format!("lhs {:?}", a.shape())))?;
            if r.shape() != [cols] {
                return Err(Error::shape(
                    "broadcast_row",
                    format!("row {:?} against {rows}x{cols}", r.shape()),
                ));
            }
            let mut data = a.data().to_vec();
            for chunk in data.chunks_mut(cols) {
                add_into(chunk, r.data());
            }
            Tensor::matrix(rows, cols, data)?
        };
        self.tape
            .record("broadcast_row", value, &[self.id, row.id], Op::AddRow(self.id, row.id))
    }

    /// Column `j` of a matrix as a vector.
    pub fn column(self, j: usize) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let (_, cols) = a
                .dims2()
                .ok_or_else(|| Error::shape("column", format!("{:?}", a.shape())))?;
            if j >= cols {
                return Err(Error::shape("column", format!("column {j} of {cols}")));
            }
            Tensor::vector(a.data().iter().skip(j).step_by(cols).copied().collect())
        };
        self.tape.record("column", value, &[self.id], Op::Column(self.id, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::vector(data.to_vec())
    }

    #[test]
    fn add_is_elementwise() {
        let tape = Tape::new();
        let a = tape.constant(v(&[1.0, 2.0]));
        let b = tape.constant(v(&[3.0, 4.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let tape = Tape::new();
        let a = tape.constant(v(&[-1.0, 0.0, 2.0]));
        assert_eq!(a.relu().unwrap().value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn matmul_row_by_column_is_dot() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap());
        assert_eq!(a.matmul(b).unwrap().value().data(), &[5.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let tape = Tape::new();
        let a = tape.constant(v(&[1.0, 2.0]));
        let b = tape.constant(v(&[1.0, 2.0, 3.0]));
        assert!(matches!(a.add(b), Err(Error::ShapeMismatch { .. })));
        let m = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let n = tape.constant(Tensor::matrix(3, 1, vec![0.0; 3]).unwrap());
        assert!(matches!(m.matmul(n), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(m.add_row(b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn overflow_is_non_finite_error() {
        let tape = Tape::new();
        let a = tape.param(v(&[1000.0]));
        assert!(matches!(a.exp(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let w = tape.param(v(&[3.0]));
        let loss = w.square().unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(w.grad().unwrap().data(), &[6.0]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let tape = Tape::new();
        let w = tape.param(v(&[1.0, 2.0, 3.0, 4.0]));
        tape.backward(w.mean().unwrap()).unwrap();
        assert_eq!(w.grad().unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn exp_gradient_at_zero() {
        let tape = Tape::new();
        let w = tape.param(v(&[0.0]));
        let loss = w.exp().unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(w.grad().unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let w = tape.param(v(&[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::NotScalar(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::new();
        let w = tape.param(v(&[3.0]));
        let loss = w.square().unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(w.grad().unwrap().data(), &[12.0]);
        tape.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn fan_out_sums_contributions() {
        // loss = sum(w * w + w) -> 2w + 1
        let tape = Tape::new();
        let w = tape.param(v(&[1.5, -2.0]));
        let loss = w.mul(w).unwrap().add(w).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(w.grad().unwrap().data(), &[4.0, -3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let w = tape.param(v(&[2.0]));
        let c = tape.constant(v(&[5.0]));
        let loss = w.mul(c).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(w.grad().unwrap().data(), &[5.0]);
        assert!(c.grad().is_none());
    }

    #[test]
    fn affine_layer_gradients() {
        // loss = sum(X W + b), X 2x2, W 2x1
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.param(Tensor::matrix(2, 1, vec![0.5, -1.0]).unwrap());
        let b = tape.param(v(&[0.1]));
        let loss = x.matmul(w).unwrap().add_row(b).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(w.grad().unwrap().data(), &[4.0, 6.0]);
        assert_eq!(b.grad().unwrap().data(), &[2.0]);
    }

    #[test]
    fn column_routes_gradient_to_one_column() {
        let tape = Tape::new();
        let m = tape.param(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = m.column(1).unwrap();
        assert_eq!(c.value().data(), &[2.0, 4.0]);
        tape.backward(c.sum().unwrap()).unwrap();
        assert_eq!(m.grad().unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn inputs_without_grad_record_constants() {
        let tape = Tape::new();
        let a = tape.constant(v(&[1.0]));
        let b = a.exp().unwrap();
        assert!(!b.requires_grad());
    }
}
