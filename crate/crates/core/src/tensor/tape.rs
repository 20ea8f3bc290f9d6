//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable call appends a node holding the result value and, if
//! any input requires a gradient, the closure-free [`Backward`] record that
//! knows how to propagate gradients to its inputs. [`Tape::backward`] walks
//! the nodes in exact reverse order, summing contributions into each input.

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rule of one recorded operation.
///
/// `inputs` are the values of the operation's inputs in recording order,
/// `output` its result, `grad_out` dLoss/dOutput. Return one entry per input;
/// entries whose `needs_grad` flag is false may be `None`.
pub trait Backward<T: Scalar>: Send {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
        needs_grad: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that inherits the tensor's `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, false)
    }

    /// Leaf that always receives a gradient.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// dLoss/dv after [`Tape::backward`]. Intermediate gradients are freed
    /// during the backward sweep, so only leaves are guaranteed to hold one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Record an operation. The backward rule is kept only when some input
    /// requires a gradient.
    pub fn record(&mut self, inputs: &[Var], value: Tensor<T>, op: impl Backward<T> + 'static) -> Var {
        let rg = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: if rg { Some(Box::new(op)) } else { None },
            requires_grad: rg,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Populate gradients of every `requires_grad` leaf with dLoss/dLeaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(op) = self.nodes[i].op.take() else {
                continue;
            };
            let Some(grad_out) = self.nodes[i].grad.take() else {
                continue;
            };
            let inputs = self.nodes[i].inputs.clone();
            let needs: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let contributions = {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                op.backward(&values, &self.nodes[i].value, &grad_out, &needs)?
            };
            for ((v, g), need) in inputs.iter().zip(contributions).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                let node = &mut self.nodes[v.0];
                debug_assert_eq!(g.len(), node.value.numel(), "gradient size from {}", op.name());
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

/// `b` is either the same shape as `a` or a bias over its trailing axis;
/// indexing `b` modulo its length covers both.
struct Binary {
    kind: BinKind,
}

impl<T: Scalar> Backward<T> for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let nb = b.len();
        let ga = needs[0].then(|| match self.kind {
            BinKind::Add | BinKind::Sub => g.to_vec(),
            BinKind::Mul => g.iter().enumerate().map(|(i, &gi)| gi * b[i % nb]).collect(),
        });
        let gb = needs[1].then(|| {
            let mut out = vec![T::zero(); nb];
            for (i, &gi) in g.iter().enumerate() {
                let j = i % nb;
                out[j] = out[j]
                    + match self.kind {
                        BinKind::Add => gi,
                        BinKind::Sub => -gi,
                        BinKind::Mul => gi * a[i],
                    };
            }
            out
        });
        Ok(vec![ga, gb])
    }
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Scalar> Backward<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let (a, b) = (inputs[0].data(), inputs[1].data());
        // dA = dC · Bᵀ, dB = Aᵀ · dC
        let ga = needs[0].then(|| {
            let mut out = vec![T::zero(); m * k];
            gemm_nt(m, n, k, g, b, &mut out);
            out
        });
        let gb = needs[1].then(|| {
            let mut out = vec![T::zero(); k * n];
            gemm_tn(k, m, n, a, g, &mut out);
            out
        });
        Ok(vec![ga, gb])
    }
}

#[derive(Clone, Copy)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    Scale(f64),
}

struct Unary(UnaryKind);

impl<T: Scalar> Backward<T> for Unary {
    fn name(&self) -> &'static str {
        match self.0 {
            UnaryKind::Relu => "relu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Scale(_) => "scale",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        let x = inputs[0].data();
        let y = out.data();
        let one = T::one();
        let gx: Vec<T> = match self.0 {
            UnaryKind::Relu => g
                .iter()
                .zip(x)
                .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                .collect(),
            UnaryKind::Sigmoid => g.iter().zip(y).map(|(&gi, &s)| gi * s * (one - s)).collect(),
            UnaryKind::Tanh => g.iter().zip(y).map(|(&gi, &t)| gi * (one - t * t)).collect(),
            UnaryKind::Scale(c) => {
                let c = T::from_f64(c);
                g.iter().map(|&gi| gi * c).collect()
            }
        };
        Ok(vec![Some(gx)])
    }
}

struct SumAll {
    scale: f64,
}

impl<T: Scalar> Backward<T> for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        let v = g[0] * T::from_f64(self.scale);
        Ok(vec![Some(vec![v; inputs[0].numel()])])
    }
}

struct Reshape;

impl<T: Scalar> Backward<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.to_vec())])
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bias = sb.len() == 1 && sa.last() == Some(&sb[0]);
        if sa != sb && !bias {
            return Err(mismatch(&format!("{kind:?}").to_lowercase(), &sa, &sb));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let nb = bv.len();
        let data: Vec<T> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv[i % nb];
                match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                }
            })
            .collect();
        let out = Tensor::from_parts(sa, data);
        Ok(self.record(&[a, b], out, Binary { kind }))
    }

    /// Elementwise sum; `b` may also be a bias over the trailing axis of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    /// `(m×k) · (k×n) → (m×n)`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let out = Tensor::from_parts(vec![m, n], out);
        Ok(self.record(&[a, b], out, MatMul { m, k, n }))
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<T> = match kind {
            UnaryKind::Relu => xv.data().iter().map(|&v| v.max(T::zero())).collect(),
            UnaryKind::Sigmoid => xv.data().iter().map(|&v| sigmoid(v)).collect(),
            UnaryKind::Tanh => xv.data().iter().map(|&v| v.tanh()).collect(),
            UnaryKind::Scale(c) => {
                let c = T::from_f64(c);
                xv.data().iter().map(|&v| v * c).collect()
            }
        };
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.record(&[x], out, Unary(kind))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), x)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.record(&[x], Tensor::scalar(s), SumAll { scale: 1.0 })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.value(x).data().iter().copied().sum::<T>() / T::from_f64(n as f64);
        self.record(&[x], Tensor::scalar(s), SumAll { scale: 1.0 / n as f64 })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.record(&[x], out, Reshape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_values() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
        assert!(!tape.requires_grad(c));
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[1.5, -2.0, 7.0]));
        let ones = tape.constant(t(&[3], &[1.0; 3]));
        let y = tape.mul(x, ones).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn bias_broadcast_over_last_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2, 3], &[0.0; 6]));
        let b = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 2.0, 2.0]);
        let bad = tape.constant(t(&[2], &[0.0; 2]));
        assert!(matches!(tape.add(x, bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_values_and_errors() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p).data(), &[5.0, 6.0, 7.0, 8.0]);
        assert!(matches!(tape.matmul(a, a), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[4], &[1.0, -2.0, 3.0, 0.5]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn grad_of_half_square_is_x() {
        let mut tape = Tape::<f64>::new();
        let data = [1.0, -2.0, 3.0, 0.5];
        let x = tape.param(t(&[4], &data));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let l = tape.scale(s, 0.5);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &data);
    }

    #[test]
    fn grad_of_product_is_other_factor() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let b = tape.param(t(&[3], &[-4.0, 5.0, 0.25]));
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[-4.0, 5.0, 0.25]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_consumers_accumulate() {
        // f(x) = sum(x) + sum(3x) → grad = 4
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let g = tape.sum(x);
        let x3 = tape.scale(x, 3.0);
        let h = tape.sum(x3);
        let f = tape.add(g, h).unwrap();
        tape.backward(f).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
        let mut empty = Tape::<f64>::new();
        let mut other = Tape::<f64>::new();
        let v = other.constant(Tensor::scalar(1.0));
        assert!(matches!(empty.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn sigmoid_values_and_slope() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1], &[0.0]));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data(), &[0.5]);
        let l = tape.sum(s);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25]);
        assert!(sigmoid(-1000.0f64) >= 0.0 && sigmoid(1000.0f64) <= 1.0);
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[-1.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    struct Probe {
        id: usize,
        log: Arc<Mutex<Vec<usize>>>,
    }

    impl Backward<f64> for Probe {
        fn name(&self) -> &'static str {
            "probe"
        }
        fn backward(&self, _: &[&Tensor<f64>], _: &Tensor<f64>, g: &[f64], _: &[bool]) -> Result<Vec<Option<Vec<f64>>>> {
            self.log.lock().unwrap().push(self.id);
            Ok(vec![Some(g.to_vec())])
        }
    }

    #[test]
    fn backward_visits_in_reverse_order() {
        let log = Arc::new(Mutex::new(Vec::new()));
        let mut tape = Tape::<f64>::new();
        let mut v = tape.param(Tensor::scalar(1.0));
        for id in 0..5 {
            let value = tape.value(v).clone();
            v = tape.record(&[v], value, Probe { id, log: log.clone() });
        }
        tape.backward(v).unwrap();
        assert_eq!(*log.lock().unwrap(), vec![4, 3, 2, 1, 0]);
    }
}
