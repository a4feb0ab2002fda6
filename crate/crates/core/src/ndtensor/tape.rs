use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Tanh,
    Relu,
}

/// Backward rule for a fused op whose forward value was computed by the caller.
pub trait BackwardRule {
    /// Gradients with respect to each input (in input order), given the
    /// gradient of the loss with respect to `output`. `None` means zero.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Reduce {
        kind: ReduceOp,
        axis: Option<usize>,
        input: Var,
        argmax: Vec<usize>,
    },
    Unary(UnaryOp, Var),
    Reshape(Var),
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn BackwardRule>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Dimension(format!(
                "matmul of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    pub fn binary(&mut self, a: Var, b: Var, kind: BinaryOp) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = if av.shape() == bv.shape() || bv.is_scalar() {
            av.shape().to_vec()
        } else if av.is_scalar() {
            bv.shape().to_vec()
        } else {
            return Err(Error::Dimension(format!(
                "{:?} between {:?} and {:?}",
                kind,
                av.shape(),
                bv.shape()
            )));
        };
        if kind == BinaryOp::Div && bv.data().iter().any(|&d| d == 0.0) {
            return Err(Error::NumericDomain("division by zero".into()));
        }
        let len: usize = out_shape.iter().product();
        let at = |i: usize| if av.is_scalar() { av.data()[0] } else { av.data()[i] };
        let bt = |i: usize| if bv.is_scalar() { bv.data()[0] } else { bv.data()[i] };
        let data = (0..len)
            .map(|i| {
                let (x, y) = (at(i), bt(i));
                match kind {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::new(out_shape, data)?;
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(value, rg, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Div)
    }

    /// Reduces over `axis`, or over every element when `axis` is `None`.
    pub fn reduce(&mut self, a: Var, kind: ReduceOp, axis: Option<usize>) -> Result<Var> {
        let av = self.value(a);
        let (outer, len, inner, out_shape) = match axis {
            None => (1, av.len(), 1, Vec::new()),
            Some(ax) => {
                if ax >= av.rank() {
                    return Err(Error::Dimension(format!(
                        "axis {ax} out of range for shape {:?}",
                        av.shape()
                    )));
                }
                let shape = av.shape();
                let outer: usize = shape[..ax].iter().product();
                let inner: usize = shape[ax + 1..].iter().product();
                let mut out_shape = shape.to_vec();
                out_shape.remove(ax);
                (outer, shape[ax], inner, out_shape)
            }
        };
        if len == 0 {
            return Err(Error::Dimension(format!(
                "{kind:?} over an empty axis of {:?}",
                av.shape()
            )));
        }
        let data = av.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if kind == ReduceOp::Max {
            argmax = vec![0; outer * inner];
        }
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| data[(o * len + i) * inner + j];
                let slot = o * inner + j;
                match kind {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let s: f64 = (0..len).map(at).sum();
                        out[slot] = if kind == ReduceOp::Mean {
                            s / len as f64
                        } else {
                            s
                        };
                    }
                    ReduceOp::Max => {
                        let mut best = 0;
                        for i in 1..len {
                            // strict comparison keeps the lowest index on ties
                            if at(i) > at(best) {
                                best = i;
                            }
                        }
                        out[slot] = at(best);
                        argmax[slot] = (o * len + best) * inner + j;
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.any_requires(&[a]);
        Ok(self.push(
            value,
            rg,
            Op::Reduce {
                kind,
                axis,
                input: a,
                argmax,
            },
        ))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, ReduceOp::Sum, axis)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, ReduceOp::Mean, axis)
    }

    pub fn max(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, ReduceOp::Max, axis)
    }

    pub fn unary(&mut self, a: Var, kind: UnaryOp) -> Var {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .map(|&x| match kind {
                UnaryOp::Tanh => x.tanh(),
                UnaryOp::Relu => x.max(0.0),
            })
            .collect();
        let value = Tensor {
            shape: av.shape().to_vec(),
            data,
        };
        let rg = self.any_requires(&[a]);
        self.push(value, rg, Op::Unary(kind, a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, UnaryOp::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, UnaryOp::Relu)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.any_requires(&[a]);
        Ok(self.push(value, rg, Op::Reshape(a)))
    }

    /// Records a fused op. `value` is the forward result computed by the
    /// caller; `rule` supplies the matching backward pass.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, rule: Box<dyn BackwardRule>) -> Var {
        let rg = self.any_requires(inputs);
        self.push(
            value,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
        )
    }

    /// Accumulates `d root / d node` into the gradient buffer of every node
    /// that requires gradients. Buffers are not reset between calls.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut adjoints: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        adjoints[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let contributions = self.node_backward(idx, &g);
            for (var, contribution) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut adjoints[var.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn node_backward(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut out = Vec::with_capacity(2);
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut ga, false);
                    out.push((*a, Tensor::new(vec![m, k], ga).expect("shape")));
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut gb, false);
                    out.push((*b, Tensor::new(vec![k, n], gb).expect("shape")));
                }
                out
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let at = |i: usize| if av.is_scalar() { av.data()[0] } else { av.data()[i] };
                let bt = |i: usize| if bv.is_scalar() { bv.data()[0] } else { bv.data()[i] };
                let gd = g.data();
                let mut out = Vec::with_capacity(2);
                for (which, var, operand) in [(0, *a, av), (1, *b, bv)] {
                    if !self.requires_grad(var) {
                        continue;
                    }
                    let local = |i: usize| -> f64 {
                        match (kind, which) {
                            (BinaryOp::Add, _) => gd[i],
                            (BinaryOp::Sub, 0) => gd[i],
                            (BinaryOp::Sub, _) => -gd[i],
                            (BinaryOp::Mul, 0) => gd[i] * bt(i),
                            (BinaryOp::Mul, _) => gd[i] * at(i),
                            (BinaryOp::Div, 0) => gd[i] / bt(i),
                            (BinaryOp::Div, _) => -gd[i] * at(i) / (bt(i) * bt(i)),
                        }
                    };
                    let grad = if operand.is_scalar() && !g.is_scalar() {
                        Tensor::scalar((0..gd.len()).map(local).sum())
                    } else {
                        Tensor {
                            shape: operand.shape().to_vec(),
                            data: (0..gd.len()).map(local).collect(),
                        }
                    };
                    out.push((var, grad));
                }
                out
            }
            Op::Reduce {
                kind,
                axis,
                input,
                argmax,
            } => {
                let iv = self.value(*input);
                let mut grad = Tensor::zeros(iv.shape());
                match kind {
                    ReduceOp::Max => {
                        for (slot, &src) in argmax.iter().enumerate() {
                            grad.data[src] += g.data()[slot];
                        }
                    }
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let (outer, len, inner) = match axis {
                            None => (1, iv.len(), 1),
                            Some(ax) => {
                                let s = iv.shape();
                                (
                                    s[..*ax].iter().product::<usize>(),
                                    s[*ax],
                                    s[ax + 1..].iter().product::<usize>(),
                                )
                            }
                        };
                        let scale = if *kind == ReduceOp::Mean {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        for o in 0..outer {
                            for i in 0..len {
                                for j in 0..inner {
                                    grad.data[(o * len + i) * inner + j] =
                                        g.data()[o * inner + j] * scale;
                                }
                            }
                        }
                    }
                }
                vec![(*input, grad)]
            }
            Op::Unary(kind, a) => {
                let y = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gi, &yi)| match kind {
                        UnaryOp::Tanh => gi * (1.0 - yi * yi),
                        // subgradient 0 at the kink
                        UnaryOp::Relu => {
                            if yi > 0.0 {
                                gi
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                vec![(
                    *a,
                    Tensor {
                        shape: y.shape().to_vec(),
                        data,
                    },
                )]
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                vec![(
                    *a,
                    Tensor {
                        shape,
                        data: g.data().to_vec(),
                    },
                )]
            }
            Op::Custom { inputs, rule } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let grads = rule.backward(&values, &node.value, g);
                inputs
                    .iter()
                    .zip(grads)
                    .filter_map(|(v, gr)| gr.map(|t| (*v, t)))
                    .collect()
            }
        }
    }
}
