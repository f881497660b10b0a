//! Reverse-mode differentiation over dense tensors.
//!
//! A [`ComputationTape`] records every primitive applied to its variables
//! together with the forward values. [`ComputationTape::backward`] walks the
//! record in reverse and accumulates the gradient of a scalar output with
//! respect to every node, including the input features. The same engine is
//! used to train network weights and to optimize counterfactual inputs.
//!
//! Tape operations panic on shape mismatches: they are programming errors.
//! Public entry points that accept user data validate shapes up front.
//!
//! ```
//! use psce::tape::ComputationTape;
//! use psce::Tensor;
//!
//! let mut tape = ComputationTape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.square(x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`ComputationTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Gather(Var, Vec<usize>),
    RepeatRows(Var),
    Broadcast(Var),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct ComputationTape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`; zeros when the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

impl ComputationTape {
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that gradients are not propagated into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = crate::tensor::matmul(self.value(a), self.value(b)).unwrap_or_else(|e| panic!("tape matmul: {e}"));
        let rg = self.grad_of(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// Adds a `[m]` bias to every row of an `n x m` value.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (_, m) = self.value(a).matrix_dims();
        let b = self.value(bias);
        assert_eq!(b.len(), m, "add_bias: bias length {} vs {m} columns", b.len());
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(self.nodes[bias.0].value.data()) {
                *o += bv;
            }
        }
        let rg = self.grad_of(&[a, bias]);
        self.push(value, Op::AddBias(a, bias), rg)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        self.value(a)
            .zip_map(self.value(b), f)
            .unwrap_or_else(|e| panic!("tape {name}: {e}"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, "add", |x, y| x + y);
        let rg = self.grad_of(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, "sub", |x, y| x - y);
        let rg = self.grad_of(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, "mul", |x, y| x * y);
        let rg = self.grad_of(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v * c);
        let rg = self.grad_of(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        let rg = self.grad_of(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// `max(a, 0)`; the subgradient at zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.grad_of(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.grad_of(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.grad_of(&[a]);
        self.push(value, Op::Ln(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        let rg = self.grad_of(&[a]);
        self.push(value, Op::Sqrt(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let rg = self.grad_of(&[a]);
        self.push(value, Op::Square(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = crate::tensor::log_softmax(self.value(a));
        let rg = self.grad_of(&[a]);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.grad_of(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let rg = self.grad_of(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Picks `a[r, columns[r]]` from every row, giving a vector of length `n`.
    pub fn gather(&mut self, a: Var, columns: Vec<usize>) -> Var {
        let t = self.value(a);
        let (n, m) = t.matrix_dims();
        assert_eq!(columns.len(), n, "gather: one column per row");
        let data = columns
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < m, "gather: column {c} out of range {m}");
                t.data()[r * m + c]
            })
            .collect();
        let rg = self.grad_of(&[a]);
        self.push(Tensor::vector(data), Op::Gather(a, columns), rg)
    }

    /// Picks column `c` of every row.
    pub fn column(&mut self, a: Var, c: usize) -> Var {
        let (n, _) = self.value(a).matrix_dims();
        self.gather(a, vec![c; n])
    }

    /// Stacks `n` copies of a single row into an `n x m` matrix.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let t = self.value(a);
        let (rows, m) = t.matrix_dims();
        assert_eq!(rows, 1, "repeat_rows expects a single row");
        let mut data = Vec::with_capacity(n * m);
        for _ in 0..n {
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(n, m, data).expect("repeat_rows shape");
        let rg = self.grad_of(&[a]);
        self.push(value, Op::RepeatRows(a), rg)
    }

    /// Broadcasts a one-element value to `shape`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).item();
        let rg = self.grad_of(&[a]);
        self.push(Tensor::filled(shape, v), Op::Broadcast(a), rg)
    }

    /// Concatenates row blocks that share a column count.
    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let (_, m) = self.value(parts[0]).matrix_dims();
        let mut data = Vec::new();
        for &p in &parts {
            let t = self.value(p);
            assert_eq!(t.matrix_dims().1, m, "concat_rows column mismatch");
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / m;
        let value = Tensor::matrix(rows, m, data).expect("concat shape");
        let rg = self.grad_of(&parts);
        self.push(value, Op::ConcatRows(parts), rg)
    }

    /// Reverse sweep from a one-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Tensor::filled(out.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contribution: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k) = av.matrix_dims();
                let (_, m) = bv.matrix_dims();
                if needs(*a) {
                    // dA = G * B^T
                    let mut da = vec![0.0; n * k];
                    let (gd, bd) = (g.data(), bv.data());
                    for i in 0..n {
                        let g_row = &gd[i * m..(i + 1) * m];
                        for p in 0..k {
                            let b_row = &bd[p * m..(p + 1) * m];
                            da[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                        }
                    }
                    acc(*a, Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                if needs(*b) {
                    // dB = A^T * G
                    let mut db = vec![0.0; k * m];
                    let (ad, gd) = (av.data(), g.data());
                    for i in 0..n {
                        let g_row = &gd[i * m..(i + 1) * m];
                        for p in 0..k {
                            let a_ip = ad[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * m..(p + 1) * m].iter_mut().zip(g_row) {
                                *d += a_ip * gv;
                            }
                        }
                    }
                    acc(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
            }
            Op::AddBias(a, bias) => {
                if needs(*bias) {
                    let m = val(*bias).len();
                    let mut db = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (d, gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    acc(*bias, Tensor::new(val(*bias).shape().to_vec(), db).unwrap());
                }
                acc(*a, g.clone());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                if needs(*b) {
                    acc(*b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y).unwrap());
                }
                if needs(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y).unwrap());
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }).unwrap();
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y).unwrap()),
            Op::Ln(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv / x).unwrap()),
            Op::Sqrt(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv / (2.0 * y)).unwrap()),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gv, x| 2.0 * x * gv).unwrap()),
            Op::LogSoftmax(a) => {
                let (_, c) = node.value.matrix_dims();
                let mut d = g.clone();
                for (d_row, y_row) in d.data_mut().chunks_mut(c).zip(node.value.data().chunks(c)) {
                    let total: f64 = d_row.iter().sum();
                    for (dv, y) in d_row.iter_mut().zip(y_row) {
                        *dv -= y.exp() * total;
                    }
                }
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Tensor::filled(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, Tensor::filled(val(*a).shape(), g.item() / n));
            }
            Op::Gather(a, columns) => {
                let av = val(*a);
                let (_, m) = av.matrix_dims();
                let mut d = Tensor::zeros(av.shape());
                for (r, (&c, gv)) in columns.iter().zip(g.data()).enumerate() {
                    d.data_mut()[r * m + c] += gv;
                }
                acc(*a, d);
            }
            Op::RepeatRows(a) => {
                let av = val(*a);
                let m = av.len();
                let mut d = vec![0.0; m];
                for row in g.data().chunks(m) {
                    for (dv, gv) in d.iter_mut().zip(row) {
                        *dv += gv;
                    }
                }
                acc(*a, Tensor::new(av.shape().to_vec(), d).unwrap());
            }
            Op::Broadcast(a) => {
                acc(*a, Tensor::filled(val(*a).shape(), g.data().iter().sum()));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let n = pv.len();
                    if needs(p) {
                        let slice = g.data()[offset..offset + n].to_vec();
                        acc(p, Tensor::new(pv.shape().to_vec(), slice).unwrap());
                    }
                    offset += n;
                }
            }
        }
    }
}

/// `x * W + b` on the tape.
pub fn affine(tape: &mut ComputationTape, x: Var, weights: Var, bias: Var) -> Var {
    let xw = tape.matmul(x, weights);
    tape.add_bias(xw, bias)
}
