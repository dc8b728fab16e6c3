//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] evaluates eagerly: every op computes its value the moment it
//! is recorded, and the node list is therefore already in topological order.
//! [`Graph::backward`] walks that list once in reverse.
//!
//! Second-order support is deliberately narrow. [`Graph::grad`] records the
//! vector-Jacobian products of a first backward pass *as new graph nodes*, so
//! a later [`Graph::backward`] differentiates through them. This is exactly
//! what an input-gradient-norm penalty needs; only the ops that appear in an
//! MLP discriminator (matmul, bias add, ReLU, sigmoid, clamp and the
//! reductions) have symbolic rules. Anything else reports
//! [`Error::Unsupported`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    MatMul(Var, Var),
    Transpose(Var),
    /// `[n, m] + [1, m]`, the bias broadcast.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    #[allow(dead_code)]
    AddScalar(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    SumAll(Var),
    Mean(Var),
    /// `[n, m] -> [n, 1]`
    SumCols(Var),
    /// `[n, m] -> [1, m]`
    SumRows(Var),
    #[allow(dead_code)]
    BroadcastRows(Var, usize),
    #[allow(dead_code)]
    BroadcastCols(Var, usize),
    #[allow(dead_code)]
    BroadcastScalar(Var, usize, usize),
    /// Euclidean norm of every row, `[n, m] -> [n, 1]`.
    RowNorm(Var),
    LogSoftmax(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`]: one optional gradient per node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn parents(op: &Op) -> Vec<Var> {
    use Op::*;
    match *op {
        Leaf { .. } => vec![],
        MatMul(a, b) | AddRow(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Minimum(a, b) => {
            vec![a, b]
        }
        Transpose(a)
        | Scale(a, _)
        | AddScalar(a, _)
        | Relu(a)
        | Sigmoid(a)
        | Log(a)
        | Exp(a)
        | Square(a)
        | Clamp(a, _, _)
        | SumAll(a)
        | Mean(a)
        | SumCols(a)
        | SumRows(a)
        | BroadcastRows(a, _)
        | BroadcastCols(a, _)
        | BroadcastScalar(a, _, _)
        | RowNorm(a)
        | LogSoftmax(a) => vec![a],
    }
}

fn sum_rows_of(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, x) in out.iter_mut().zip(t.row_slice(i)) {
            *o += x;
        }
    }
    Tensor::row(out)
}

fn sum_cols_of(t: &Tensor) -> Tensor {
    let r = t.rows();
    let data = (0..r).map(|i| t.row_slice(i).iter().sum()).collect();
    Tensor::new(vec![r, 1], data).expect("row sums")
}

fn broadcast_rows_of(t: &Tensor, n: usize) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![n, c], data).expect("broadcast rows")
}

fn broadcast_cols_of(t: &Tensor, m: usize) -> Tensor {
    let r = t.rows();
    let mut data = Vec::with_capacity(r * m);
    for &x in t.data() {
        data.extend(std::iter::repeat_n(x, m));
    }
    Tensor::new(vec![r, m], data).expect("broadcast cols")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax_rows(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = t.row_slice(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| x - lse));
    }
    Tensor::new(vec![r, c], out).expect("log softmax")
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    fn check(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::usage(format!("variable {} is not on this graph", v.0)))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match op {
            Op::Leaf { requires_grad } => requires_grad,
            ref other => parents(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (network parameter or an input we want the
    /// gradient of).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(
            value,
            Op::Leaf {
                requires_grad: true,
            },
        )
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(
            value,
            Op::Leaf {
                requires_grad: false,
            },
        )
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.check(a)?.value.shape(), self.check(b)?.value.shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.check(a)?.value.matmul(&self.check(b)?.value)?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.check(a)?.value.transpose();
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, b) = (&self.check(a)?.value, &self.check(row)?.value);
        if b.shape() != [1, x.cols()] {
            return Err(Error::shape(format!(
                "bias {:?} does not broadcast over {:?}",
                b.shape(),
                x.shape()
            )));
        }
        let c = x.cols();
        let mut data = x.data().to_vec();
        for (k, d) in data.iter_mut().enumerate() {
            *d += b.data()[k % c];
        }
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.check(a)?.value.map(|x| x * c);
        Ok(self.push(v, Op::Scale(a, c)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.check(a)?.value.map(|x| x + c);
        Ok(self.push(v, Op::AddScalar(a, c)))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.check(a)?.value.map(|x| x.max(0.0));
        Ok(self.push(v, Op::Relu(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.check(a)?.value.map(sigmoid);
        Ok(self.push(v, Op::Sigmoid(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.check(a)?.value.map(f64::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.check(a)?.value.map(f64::exp);
        Ok(self.push(v, Op::Exp(a)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.check(a)?.value.map(|x| x * x);
        Ok(self.push(v, Op::Square(a)))
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is passed through
    /// inside the interval and blocked outside it.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::usage(format!("clamp bounds {lo} > {hi}")));
        }
        let v = self.check(a)?.value.map(|x| x.clamp(lo, hi));
        Ok(self.push(v, Op::Clamp(a, lo, hi)))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "minimum")?;
        let v = self.value(a).zip_map(self.value(b), f64::min);
        Ok(self.push(v, Op::Minimum(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.check(a)?.value.sum());
        Ok(self.push(v, Op::SumAll(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.check(a)?.value;
        if t.is_empty() {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push(v, Op::Mean(a)))
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let v = sum_cols_of(&self.check(a)?.value);
        Ok(self.push(v, Op::SumCols(a)))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let v = sum_rows_of(&self.check(a)?.value);
        Ok(self.push(v, Op::SumRows(a)))
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = &self.check(a)?.value;
        if t.rows() != 1 {
            return Err(Error::shape(format!("broadcast_rows of {:?}", t.shape())));
        }
        let v = broadcast_rows_of(t, n);
        Ok(self.push(v, Op::BroadcastRows(a, n)))
    }

    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        let t = &self.check(a)?.value;
        if t.cols() != 1 {
            return Err(Error::shape(format!("broadcast_cols of {:?}", t.shape())));
        }
        let v = broadcast_cols_of(t, m);
        Ok(self.push(v, Op::BroadcastCols(a, m)))
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = &self.check(a)?.value;
        if t.len() != 1 {
            return Err(Error::shape(format!("broadcast_scalar of {:?}", t.shape())));
        }
        let v = Tensor::full(&[rows, cols], t.item());
        Ok(self.push(v, Op::BroadcastScalar(a, rows, cols)))
    }

    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let t = &self.check(a)?.value;
        let data = (0..t.rows())
            .map(|i| t.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let v = Tensor::new(vec![t.rows(), 1], data)?;
        Ok(self.push(v, Op::RowNorm(a)))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = log_softmax_rows(&self.check(a)?.value);
        Ok(self.push(v, Op::LogSoftmax(a)))
    }

    /// Reverse sweep from `output` seeded with `seed`.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::usage("backward called before any forward pass"));
        }
        let out_shape = self.check(output)?.value.shape();
        if out_shape != seed.shape() {
            return Err(Error::shape(format!(
                "seed {:?} does not match output {:?}",
                seed.shape(),
                out_shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (p, pg) in self.vjp(i, &g) {
                if !self.nodes[p.0].needs_grad {
                    continue;
                }
                match &mut grads[p.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
            if matches!(node.op, Op::Leaf { .. }) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward from a scalar output, seed 1.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients> {
        self.backward(output, &Tensor::scalar(1.0))
    }

    fn vjp(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match node.op {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(b).transpose()).expect("matmul vjp");
                let gb = val(a).transpose().matmul(g).expect("matmul vjp");
                vec![(a, ga), (b, gb)]
            }
            Op::Transpose(a) => vec![(a, g.transpose())],
            Op::AddRow(a, b) => vec![(a, g.clone()), (b, sum_rows_of(g))],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (a, g.zip_map(val(b), |x, y| x * y)),
                (b, g.zip_map(val(a), |x, y| x * y)),
            ],
            Op::Scale(a, c) => vec![(a, g.map(|x| x * c))],
            Op::AddScalar(a, _) => vec![(a, g.clone())],
            Op::Relu(a) => vec![(a, g.zip_map(val(a), |x, z| if z > 0.0 { x } else { 0.0 }))],
            Op::Sigmoid(a) => vec![(a, g.zip_map(y, |x, s| x * s * (1.0 - s)))],
            Op::Log(a) => vec![(a, g.zip_map(val(a), |x, z| x / z))],
            Op::Exp(a) => vec![(a, g.zip_map(y, |x, e| x * e))],
            Op::Square(a) => vec![(a, g.zip_map(val(a), |x, z| 2.0 * x * z))],
            Op::Clamp(a, lo, hi) => vec![(
                a,
                g.zip_map(val(a), |x, z| if (lo..=hi).contains(&z) { x } else { 0.0 }),
            )],
            Op::Minimum(a, b) => {
                let (va, vb) = (val(a), val(b));
                let take_a = va.zip_map(vb, |x, y| if x <= y { 1.0 } else { 0.0 });
                vec![
                    (a, g.zip_map(&take_a, |x, m| x * m)),
                    (b, g.zip_map(&take_a, |x, m| x * (1.0 - m))),
                ]
            }
            Op::SumAll(a) => vec![(a, Tensor::full(val(a).shape(), g.item()))],
            Op::Mean(a) => {
                let n = val(a).len() as f64;
                vec![(a, Tensor::full(val(a).shape(), g.item() / n))]
            }
            Op::SumCols(a) => vec![(a, broadcast_cols_of(g, val(a).cols()))],
            Op::SumRows(a) => vec![(a, broadcast_rows_of(g, val(a).rows()))],
            Op::BroadcastRows(a, _) => vec![(a, sum_rows_of(g))],
            Op::BroadcastCols(a, _) => vec![(a, sum_cols_of(g))],
            Op::BroadcastScalar(a, _, _) => vec![(a, Tensor::scalar(g.sum()))],
            Op::RowNorm(a) => {
                let x = val(a);
                let c = x.cols();
                let mut out = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    let n = y.data()[r];
                    if n > 0.0 {
                        let s = g.data()[r] / n;
                        for (o, xv) in out[r * c..(r + 1) * c].iter_mut().zip(x.row_slice(r)) {
                            *o = s * xv;
                        }
                    }
                }
                vec![(a, Tensor::new(x.shape().to_vec(), out).expect("row norm vjp"))]
            }
            Op::LogSoftmax(a) => {
                let c = y.cols();
                let mut out = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let gr = g.row_slice(r);
                    let gs: f64 = gr.iter().sum();
                    out.extend(
                        gr.iter()
                            .zip(y.row_slice(r))
                            .map(|(gx, ly)| gx - ly.exp() * gs),
                    );
                }
                vec![(a, Tensor::new(vec![y.rows(), c], out).expect("log softmax vjp"))]
            }
        }
    }

    /// Symbolic gradient of the scalar `output` with respect to the leaf
    /// `wrt`, recorded on the graph so that it can itself be differentiated.
    pub fn grad(&mut self, output: Var, wrt: Var) -> Result<Var> {
        let out_node = self.check(output)?;
        if out_node.value.len() != 1 {
            return Err(Error::shape(format!(
                "symbolic grad needs a scalar output, got {:?}",
                out_node.value.shape()
            )));
        }
        let wrt_node = self.check(wrt)?;
        if !matches!(wrt_node.op, Op::Leaf { .. }) {
            return Err(Error::usage(format!("variable {} is not a leaf", wrt.0)));
        }
        let wrt_shape = wrt_node.value.shape().to_vec();
        if wrt.0 > output.0 {
            return Ok(self.constant(Tensor::zeros(&wrt_shape)));
        }

        // Which nodes between `wrt` and `output` actually depend on `wrt`.
        let mut depends = vec![false; output.0 + 1];
        depends[wrt.0] = true;
        for i in wrt.0 + 1..=output.0 {
            depends[i] = parents(&self.nodes[i].op).iter().any(|p| depends[p.0]);
        }
        if !depends[output.0] {
            return Ok(self.constant(Tensor::zeros(&wrt_shape)));
        }

        let mut gvars: Vec<Option<Var>> = vec![None; output.0 + 1];
        gvars[output.0] = Some(self.constant(Tensor::scalar(1.0)));
        for i in (wrt.0 + 1..=output.0).rev() {
            if !depends[i] {
                continue;
            }
            let Some(g) = gvars[i] else { continue };
            for (p, pg) in self.symbolic_vjp(i, g, &depends)? {
                if !depends[p.0] {
                    continue;
                }
                gvars[p.0] = Some(match gvars[p.0] {
                    Some(acc) => self.add(acc, pg)?,
                    None => pg,
                });
            }
        }
        match gvars[wrt.0] {
            Some(g) => Ok(g),
            None => Ok(self.constant(Tensor::zeros(&wrt_shape))),
        }
    }

    fn symbolic_vjp(&mut self, i: usize, g: Var, depends: &[bool]) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[i].op.clone();
        let y = Var(i);
        let out = match op {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if depends[a.0] {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if depends[b.0] {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, g)?));
                }
                out
            }
            Op::Transpose(a) => vec![(a, self.transpose(g)?)],
            Op::AddRow(a, b) => vec![(a, g), (b, self.sum_rows(g)?)],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, self.neg(g)?)],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if depends[a.0] {
                    out.push((a, self.mul(g, b)?));
                }
                if depends[b.0] {
                    out.push((b, self.mul(g, a)?));
                }
                out
            }
            Op::Scale(a, c) => vec![(a, self.scale(g, c)?)],
            Op::AddScalar(a, _) => vec![(a, g)],
            Op::Relu(a) => {
                let mask = self.value(a).map(|z| if z > 0.0 { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                vec![(a, self.mul(g, m)?)]
            }
            Op::Sigmoid(a) => {
                let neg = self.scale(y, -1.0)?;
                let one_minus = self.add_scalar(neg, 1.0)?;
                let slope = self.mul(y, one_minus)?;
                vec![(a, self.mul(g, slope)?)]
            }
            Op::Exp(a) => vec![(a, self.mul(g, y)?)],
            Op::Square(a) => {
                let two_a = self.scale(a, 2.0)?;
                vec![(a, self.mul(g, two_a)?)]
            }
            Op::Clamp(a, lo, hi) => {
                let mask = self
                    .value(a)
                    .map(|z| if (lo..=hi).contains(&z) { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                vec![(a, self.mul(g, m)?)]
            }
            Op::SumAll(a) => {
                let (r, c) = (self.value(a).rows(), self.value(a).cols());
                vec![(a, self.broadcast_scalar(g, r, c)?)]
            }
            Op::Mean(a) => {
                let t = self.value(a);
                let (r, c, n) = (t.rows(), t.cols(), t.len() as f64);
                let b = self.broadcast_scalar(g, r, c)?;
                vec![(a, self.scale(b, 1.0 / n)?)]
            }
            Op::SumCols(a) => {
                let c = self.value(a).cols();
                vec![(a, self.broadcast_cols(g, c)?)]
            }
            Op::SumRows(a) => {
                let r = self.value(a).rows();
                vec![(a, self.broadcast_rows(g, r)?)]
            }
            Op::BroadcastRows(a, _) => vec![(a, self.sum_rows(g)?)],
            Op::BroadcastCols(a, _) => vec![(a, self.sum_cols(g)?)],
            Op::BroadcastScalar(a, _, _) => vec![(a, self.sum(g)?)],
            Op::Log(_) | Op::Minimum(..) | Op::RowNorm(_) | Op::LogSoftmax(_) => {
                return Err(Error::Unsupported(format!(
                    "second-order gradient through {:?}",
                    op
                )))
            }
        };
        Ok(out)
    }

    /// Per-row ‖∂(Σ output)/∂wrt‖₂ as a differentiable `[n, 1]` node.
    ///
    /// Rows of a batched network are independent, so the gradient of the
    /// summed output splits into per-sample input gradients.
    pub fn grad_norm(&mut self, output: Var, wrt: Var) -> Result<Var> {
        let total = if self.check(output)?.value.len() == 1 {
            output
        } else {
            self.sum(output)?
        };
        let g = self.grad(total, wrt)?;
        self.row_norm(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(3.0));
        let y = g.square(w).unwrap();
        let grads = g.backward_scalar(y).unwrap();
        assert_eq!(grads.get(w).unwrap().item(), 6.0);
    }

    #[test]
    fn log_sigmoid_at_zero() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(0.0));
        let s = g.sigmoid(w).unwrap();
        let y = g.log(s).unwrap();
        let grads = g.backward_scalar(y).unwrap();
        assert!((grads.get(w).unwrap().item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn backward_on_empty_graph_is_usage_error() {
        let g = Graph::new();
        let err = g.backward(Var(0), &Tensor::scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn seed_shape_checked() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(
            g.backward(w, &Tensor::scalar(1.0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let w = g.leaf(Tensor::scalar(5.0));
        let y = g.mul(c, w).unwrap();
        let grads = g.backward_scalar(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(w).unwrap().item(), 2.0);
    }

    #[test]
    fn grad_wrt_foreign_variable_is_usage_error() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(1.0));
        let y = g.square(w).unwrap();
        assert!(matches!(g.grad(y, Var(99)), Err(Error::Usage(_))));
        assert!(matches!(g.grad(y, y), Err(Error::Usage(_))));
    }

    #[test]
    fn unsupported_second_order_op() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(2.0));
        let y = g.log(w).unwrap();
        assert!(matches!(g.grad(y, w), Err(Error::Unsupported(_))));
    }

    #[test]
    fn sigmoid_gradient_norm_closed_form() {
        // D(x) = sigmoid(w·x), w = [1, 0]: |grad_x D| = s(1 - s).
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![0.7, -2.0]));
        let w = g.constant(Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap());
        let z = g.matmul(x, w).unwrap();
        let d = g.sigmoid(z).unwrap();
        let n = g.grad_norm(d, x).unwrap();
        let s = sigmoid(0.7);
        assert!((g.value(n).item() - s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn unit_linear_penalty_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 2, vec![0.3, 1.0, -4.0, 2.0]).unwrap());
        let w = g.constant(Tensor::matrix(2, 1, vec![0.6, 0.8]).unwrap());
        let d = g.matmul(x, w).unwrap();
        let n = g.grad_norm(d, x).unwrap();
        let dev = g.add_scalar(n, -1.0).unwrap();
        let sq = g.square(dev).unwrap();
        let p = g.mean(sq).unwrap();
        assert!(g.value(p).item().abs() < 1e-15);
    }
}
