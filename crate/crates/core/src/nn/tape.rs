use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written vector-Jacobian product, for fused
/// kernels such as the ODE integrator.
pub trait CustomOp {
    /// Returns one gradient per input, shaped like that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MulConst(Var, Tensor),
    AffineCols(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Relu(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    SumCols(Var),
    Broadcast(Var),
    SoftmaxXent(Var, Vec<usize>),
    GaussLogDensity {
        mean: Var,
        sd: Var,
        x: Tensor,
        mask: Tensor,
    },
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    crate::transforms::logistic(x)
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
        Tape { nodes: Vec::new() }
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

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `x (B x n) + bias (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.rows(), 1);
        assert_eq!(xv.cols(), bv.cols());
        let mut out = xv.clone();
        let n = bv.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % n];
        }
        let rg = self.rg(&[x, bias]);
        self.push(out, Op::AddRow(x, bias), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a * c);
        let rg = self.rg(&[x]);
        self.push(v, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a + c);
        let rg = self.rg(&[x]);
        self.push(v, Op::Shift(x), rg)
    }

    /// Elementwise sum with a constant tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Var {
        let v = self.value(x).zip_map(c, |a, b| a + b);
        let rg = self.rg(&[x]);
        self.push(v, Op::Shift(x), rg)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        let v = self.value(x).zip_map(&c, |a, b| a * b);
        let rg = self.rg(&[x]);
        self.push(v, Op::MulConst(x, c), rg)
    }

    /// Per-column affine map `y[:, j] = x[:, j] * scale[j] + shift[j]`.
    pub fn affine_cols(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.cols(), scale.len());
        assert_eq!(xv.cols(), shift.len());
        let n = xv.cols();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = *o * scale[i % n] + shift[i % n];
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::AffineCols(x, scale.to_vec()), rg)
    }

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(v, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |a| a * a, Op::Square(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat row mismatch");
                let w = pv.cols();
                out.data_mut()[r * cols + off..r * cols + off + w].copy_from_slice(pv.row(r));
                off += w;
            }
        }
        let rg = self.rg(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols());
        let rows = xv.rows();
        let mut out = Tensor::zeros(rows, len);
        for r in 0..rows {
            out.data_mut()[r * len..(r + 1) * len].copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::SliceCols(x, start), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(v, Op::Sum(x), rg)
    }

    /// Row sums: `B x n -> B x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::from_vec(xv.rows(), 1, (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect());
        let rg = self.rg(&[x]);
        self.push(v, Op::SumCols(x), rg)
    }

    /// Repeats a `1 x 1` value into a `rows x cols` tensor.
    pub fn broadcast(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let v = Tensor::filled(rows, cols, self.value(x).item());
        let rg = self.rg(&[x]);
        self.push(v, Op::Broadcast(x), rg)
    }

    /// Mean softmax cross-entropy of `logits (B x K)` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), labels.len());
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let v = Tensor::scalar(total / labels.len() as f64);
        let rg = self.rg(&[logits]);
        self.push(v, Op::SoftmaxXent(logits, labels.to_vec()), rg)
    }

    /// Per-row sum of `mask * log N(x | mean, sd^2)`; all operands `B x n`.
    pub fn gaussian_log_density(&mut self, x: &Tensor, mean: Var, sd: Var, mask: &Tensor) -> Var {
        let (mv, sv) = (self.value(mean), self.value(sd));
        assert_eq!(mv.shape(), x.shape());
        assert_eq!(sv.shape(), x.shape());
        assert_eq!(mask.shape(), x.shape());
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let (rows, cols) = x.shape();
        let mut out = Tensor::zeros(rows, 1);
        for r in 0..rows {
            let mut acc = 0.0;
            for c in 0..cols {
                let w = mask.get(r, c);
                if w != 0.0 {
                    let s = sv.get(r, c);
                    let d = x.get(r, c) - mv.get(r, c);
                    acc += w * (-half_ln_2pi - s.ln() - d * d / (2.0 * s * s));
                }
            }
            out.set(r, 0, acc);
        }
        let rg = self.rg(&[mean, sd]);
        self.push(
            out,
            Op::GaussLogDensity {
                mean,
                sd,
                x: x.clone(),
                mask: mask.clone(),
            },
            rg,
        )
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(inputs);
        self.push(output, Op::Custom(inputs.to_vec(), op), rg)
    }

    /// Reverse sweep from a scalar. Does not mutate the tape, so repeated
    /// calls return identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("tape node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    acc(*a, gemm(g, false, bv, true));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, gemm(av, true, g, false));
                }
            }
            Op::AddRow(x, bias) => {
                acc(*x, g.clone());
                let n = g.cols();
                let mut gb = Tensor::zeros(1, n);
                for (k, v) in g.data().iter().enumerate() {
                    gb.data_mut()[k % n] += v;
                }
                acc(*bias, gb);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |x, y| x * y));
                acc(*b, g.zip_map(av, |x, y| x * y));
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::Shift(x) => acc(*x, g.clone()),
            Op::MulConst(x, c) => acc(*x, g.zip_map(c, |a, b| a * b)),
            Op::AffineCols(x, scale) => {
                let n = scale.len();
                let mut d = g.clone();
                for (k, v) in d.data_mut().iter_mut().enumerate() {
                    *v *= scale[k % n];
                }
                acc(*x, d);
            }
            Op::Sigmoid(x) => acc(*x, g.zip_map(out, |a, s| a * s * (1.0 - s))),
            Op::Tanh(x) => acc(*x, g.zip_map(out, |a, t| a * (1.0 - t * t))),
            Op::Exp(x) => acc(*x, g.zip_map(out, |a, e| a * e)),
            Op::Log(x) => acc(*x, g.zip_map(self.value(*x), |a, v| a / v)),
            Op::Softplus(x) => acc(*x, g.zip_map(self.value(*x), |a, v| a * sigmoid(v))),
            Op::Relu(x) => acc(*x, g.zip_map(self.value(*x), |a, v| if v > 0.0 { a } else { 0.0 })),
            Op::Square(x) => acc(*x, g.zip_map(self.value(*x), |a, v| 2.0 * a * v)),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.nodes[p.0].requires_grad {
                        let mut d = Tensor::zeros(rows, w);
                        for r in 0..rows {
                            d.data_mut()[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        acc(p, d);
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let (rows, cols) = xv.shape();
                let w = g.cols();
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    d.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                acc(*x, d);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Tensor::filled(r, c, g.item()));
            }
            Op::SumCols(x) => {
                let (rows, cols) = self.value(*x).shape();
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.get(r, 0);
                    d.data_mut()[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v = gr);
                }
                acc(*x, d);
            }
            Op::Broadcast(x) => acc(*x, Tensor::scalar(g.sum())),
            Op::SoftmaxXent(logits, labels) => {
                let lv = self.value(*logits);
                let scale = g.item() / labels.len() as f64;
                let mut d = Tensor::zeros(lv.rows(), lv.cols());
                for (r, &y) in labels.iter().enumerate() {
                    let row = lv.row(r);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                    for (c, &v) in row.iter().enumerate() {
                        let p = (v - m).exp() / z;
                        d.set(r, c, scale * (p - if c == y { 1.0 } else { 0.0 }));
                    }
                }
                acc(*logits, d);
            }
            Op::GaussLogDensity { mean, sd, x, mask } => {
                let (mv, sv) = (self.value(*mean), self.value(*sd));
                let (rows, cols) = x.shape();
                let mut dm = Tensor::zeros(rows, cols);
                let mut ds = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.get(r, 0);
                    for c in 0..cols {
                        let w = mask.get(r, c);
                        if w != 0.0 {
                            let s = sv.get(r, c);
                            let d = x.get(r, c) - mv.get(r, c);
                            dm.set(r, c, gr * w * d / (s * s));
                            ds.set(r, c, gr * w * (-1.0 / s + d * d / (s * s * s)));
                        }
                    }
                }
                acc(*mean, dm);
                acc(*sd, ds);
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let ds = op.backward(&vals, out, g);
                assert_eq!(ds.len(), inputs.len());
                for (&v, d) in inputs.iter().zip(ds) {
                    acc(v, d);
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` if the loss does not depend on it.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}
