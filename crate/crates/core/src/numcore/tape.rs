use super::kernels::{self, ConvGeom};
use super::{NumError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-element functions of one argument.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    /// Subgradient at 0 is 0.
    Relu,
    Square,
    AddConst(f64),
    MulConst(f64),
    Abs,
    Recip,
    /// Natural log of `max(x, floor)`; zero gradient below the floor.
    LnClamped(f64),
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Square => x * x,
            Unary::AddConst(c) => x + c,
            Unary::MulConst(c) => x * c,
            Unary::Abs => x.abs(),
            Unary::Recip => 1.0 / x,
            Unary::LnClamped(floor) => x.max(floor).ln(),
        }
    }

    /// d out / d in, given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::AddConst(_) => 1.0,
            Unary::MulConst(c) => c,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Recip => -y * y,
            Unary::LnClamped(floor) => {
                if x > floor {
                    1.0 / x
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d { x: Var, k: Var, stride: usize },
    /// Adds a per-channel bias along axis 1.
    BiasAdd(Var, Var),
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    Sum(Var),
    Mean(Var),
    /// Mean over the leading (batch) axis.
    MeanRows(Var),
    /// Mean over all trailing axes after the first two: [b, c, ...] -> [b, c].
    SpatialMean(Var),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::BiasAdd(a, b) | Op::Binary(a, b, _) => vec![a, b],
            Op::Conv2d { x, k, .. } => vec![x, k],
            Op::Unary(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::SpatialMean(a)
            | Op::Reshape(a) => vec![a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of executed primitives. Nodes are appended in execution
/// order, so every node's inputs precede it.
#[derive(Clone, Debug, Default)]
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

    /// Registers a tensor that receives gradients.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a tensor that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        let rg = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data).expect("op output shape is consistent");
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push_op(vec![m, n], out, Op::MatMul(a, b)))
    }

    /// 3x3 cross-correlation, zero padding 1. `x` is `[c_in, h, w]` or
    /// `[batch, c_in, h, w]`; kernels are `[c_out, c_in, 3, 3]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var, NumError> {
        if stride != 1 && stride != 2 {
            return Err(NumError::Config(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        let (batch, c_in, h, w, batched) = match *sx.as_slice() {
            [c, h, w] => (1, c, h, w, false),
            [b, c, h, w] => (b, c, h, w, true),
            _ => return Err(NumError::shape("conv2d", &sx, &sk)),
        };
        if sk.len() != 4 || sk[1] != c_in || sk[2] != 3 || sk[3] != 3 || h < 3 || w < 3 {
            return Err(NumError::shape("conv2d", &sx, &sk));
        }
        let geom = ConvGeom { c_in, c_out: sk[0], h, w, stride };
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(k).data(), batch, &geom);
        let mut shape = vec![geom.c_out, geom.out_h(), geom.out_w()];
        if batched {
            shape.insert(0, batch);
        }
        Ok(self.push_op(shape, out, Op::Conv2d { x, k, stride }))
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 1) of `x`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(NumError::shape("bias_add", sx, sb));
        }
        let c = sx[1];
        let inner: usize = sx[2..].iter().product();
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += b[(i / inner) % c];
        }
        let shape = sx.to_vec();
        Ok(self.push_op(shape, out, Op::BiasAdd(x, bias)))
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| f.apply(v)).collect();
        let shape = t.shape().to_vec();
        self.push_op(shape, out, Op::Unary(x, f))
    }

    pub fn binary(&mut self, a: Var, b: Var, f: Binary) -> Result<Var, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumError::shape(binary_name(f), ta.shape(), tb.shape()));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| match f {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push_op(shape, out, Op::Binary(a, b, f)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::AddConst(c))
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::MulConst(c))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Recip)
    }

    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, Unary::LnClamped(floor))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_op(vec![1], vec![m], Op::Mean(x))
    }

    /// Mean over the leading axis: `[b, ...] -> [...]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NumError> {
        let t = self.value(x);
        if t.rank() < 2 || t.shape()[0] == 0 {
            return Err(NumError::shape("mean_rows", t.shape(), &[]));
        }
        let b = t.shape()[0];
        let inner = t.len() / b;
        let mut out = vec![0.0; inner];
        for row in t.data().chunks(inner) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= b as f64);
        let shape = t.shape()[1..].to_vec();
        Ok(self.push_op(shape, out, Op::MeanRows(x)))
    }

    /// Global average pool: `[b, c, ...] -> [b, c]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var, NumError> {
        let t = self.value(x);
        if t.rank() < 3 {
            return Err(NumError::shape("spatial_mean", t.shape(), &[]));
        }
        let inner: usize = t.shape()[2..].iter().product();
        let out = t.data().chunks(inner).map(|c| c.iter().sum::<f64>() / inner as f64).collect();
        let shape = t.shape()[..2].to_vec();
        Ok(self.push_op(shape, out, Op::SpatialMean(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumError> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(NumError::shape("reshape", t.shape(), shape));
        }
        let data = t.data().to_vec();
        Ok(self.push_op(shape.to_vec(), data, Op::Reshape(x)))
    }

    /// Sign pattern of every relu input on the tape, in tape order.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Unary(x, Unary::Relu) = node.op {
                sig.extend(self.nodes[x.0].value.data().iter().map(|&v| v > 0.0));
            }
        }
        sig
    }

    /// Reverse accumulation from a scalar `loss`. Gradients are added to
    /// any gradient already held by a node.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, contrib: Vec<f64>| match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if wants(a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul_a_bt_acc(g, tb.data(), m, k, n, &mut ga);
                    send(a, ga);
                }
                if wants(b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::matmul_at_b_acc(ta.data(), g, m, k, n, &mut gb);
                    send(b, gb);
                }
            }
            Op::Conv2d { x, k, stride } => {
                let (tx, tk) = (self.value(x), self.value(k));
                let s = tx.shape();
                let (batch, c_in, h, w) = if s.len() == 4 {
                    (s[0], s[1], s[2], s[3])
                } else {
                    (1, s[0], s[1], s[2])
                };
                let geom = ConvGeom { c_in, c_out: tk.shape()[0], h, w, stride };
                let (dx, dk) = kernels::conv2d_backward(
                    tx.data(),
                    tk.data(),
                    g,
                    batch,
                    &geom,
                    wants(x),
                    wants(k),
                );
                if let Some(dx) = dx {
                    send(x, dx);
                }
                if let Some(dk) = dk {
                    send(k, dk);
                }
            }
            Op::BiasAdd(x, b) => {
                if wants(x) {
                    send(x, g.to_vec());
                }
                if wants(b) {
                    let s = self.shape(x);
                    let c = s[1];
                    let inner: usize = s[2..].iter().product();
                    let mut gb = vec![0.0; c];
                    for (j, v) in g.iter().enumerate() {
                        gb[(j / inner) % c] += v;
                    }
                    send(b, gb);
                }
            }
            Op::Unary(x, f) => {
                if wants(x) {
                    let xin = self.value(x).data();
                    let y = node.value.data();
                    let gx = g
                        .iter()
                        .zip(xin.iter().zip(y))
                        .map(|(gv, (&xv, &yv))| gv * f.derivative(xv, yv))
                        .collect();
                    send(x, gx);
                }
            }
            Op::Binary(a, b, f) => {
                let (da, db) = (self.value(a).data(), self.value(b).data());
                if wants(a) {
                    let ga = match f {
                        Binary::Add | Binary::Sub => g.to_vec(),
                        Binary::Mul => g.iter().zip(db).map(|(x, y)| x * y).collect(),
                    };
                    send(a, ga);
                }
                if wants(b) {
                    let gb = match f {
                        Binary::Add => g.to_vec(),
                        Binary::Sub => g.iter().map(|x| -x).collect(),
                        Binary::Mul => g.iter().zip(da).map(|(x, y)| x * y).collect(),
                    };
                    send(b, gb);
                }
            }
            Op::Sum(x) => {
                if wants(x) {
                    send(x, vec![g[0]; self.value(x).len()]);
                }
            }
            Op::Mean(x) => {
                if wants(x) {
                    let n = self.value(x).len();
                    send(x, vec![g[0] / n as f64; n]);
                }
            }
            Op::MeanRows(x) => {
                if wants(x) {
                    let t = self.value(x);
                    let b = t.shape()[0] as f64;
                    let gx = g.iter().map(|v| v / b).collect::<Vec<_>>().repeat(t.shape()[0]);
                    send(x, gx);
                }
            }
            Op::SpatialMean(x) => {
                if wants(x) {
                    let t = self.value(x);
                    let inner: usize = t.shape()[2..].iter().product();
                    let gx = g
                        .iter()
                        .flat_map(|v| std::iter::repeat_n(v / inner as f64, inner))
                        .collect();
                    send(x, gx);
                }
            }
            Op::Reshape(x) => {
                if wants(x) {
                    send(x, g.to_vec());
                }
            }
        }
    }
}

fn binary_name(f: Binary) -> &'static str {
    match f {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
    }
}
