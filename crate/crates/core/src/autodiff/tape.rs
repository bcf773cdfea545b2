use crate::error::{Error, Result};

use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Abs(NodeId),
    Pow(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Sum(NodeId, Option<usize>),
    Mean(NodeId, Option<usize>),
    L2Norm(NodeId),
    Reshape(NodeId),
    SymFromUpper(NodeId, usize),
    SoftmaxCrossEntropy(NodeId, Vec<usize>),
}

struct TapeNode {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Eager computation tape. Operations evaluate immediately and record
/// enough structure for [`Tape::backward`] to run the chain rule in
/// reverse. Values are immutable once recorded; gradients are the only
/// mutable state.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf value. Gradients accumulate on it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient for a node; zeros if backward never reached it.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let node = &self.nodes[id.0];
        match &node.grad {
            Some(g) => Tensor::from_raw(node.value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(node.value.shape().to_vec()),
        }
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(TapeNode {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ----- matrix ops -----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 {
            return Err(Error::dimension(format!(
                "matmul needs matrices, got {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(Error::dimension(format!(
                "matmul inner dimensions differ: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = matmul_nn(va.data(), vb.data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_raw(vec![m, n], data), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.ndim() != 2 {
            return Err(Error::dimension(format!(
                "transpose needs a matrix, got {:?}",
                va.shape()
            )));
        }
        let out = va.transposed();
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let va = self.value(a);
        if shape.iter().product::<usize>() != va.len() {
            return Err(Error::dimension(format!(
                "cannot reshape {:?} into {:?}",
                va.shape(),
                shape
            )));
        }
        let out = Tensor::from_raw(shape, va.data().to_vec());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Materializes a symmetric `n×n` matrix with zero diagonal from its
    /// strict upper triangle, stored row-major as a vector of length
    /// `n·(n−1)/2`. Keeping the parameters triangular makes symmetry a
    /// structural invariant rather than something updates must preserve.
    pub fn sym_from_upper(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let va = self.value(a);
        let expected = n * (n - 1) / 2;
        if va.len() != expected {
            return Err(Error::dimension(format!(
                "upper triangle of a {n}×{n} matrix has {expected} entries, got {}",
                va.len()
            )));
        }
        let mut out = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                out[i * n + j] = va.data()[k];
                out[j * n + i] = va.data()[k];
                k += 1;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_raw(vec![n, n], out),
            Op::SymFromUpper(a, n),
            rg,
        ))
    }

    // ----- elementwise ops -----

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::from_raw(va.shape().to_vec(), data)
        } else if vb.is_scalar() {
            let s = vb.item();
            let data = va.data().iter().map(|&x| f(x, s)).collect();
            Tensor::from_raw(va.shape().to_vec(), data)
        } else if va.is_scalar() {
            let s = va.item();
            let data = vb.data().iter().map(|&y| f(s, y)).collect();
            Tensor::from_raw(vb.shape().to_vec(), data)
        } else {
            return Err(Error::dimension(format!(
                "shapes {:?} and {:?} are not broadcast-compatible \
                 (equal shapes or scalar-with-tensor only)",
                va.shape(),
                vb.shape()
            )));
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplication by a compile-time constant; cheaper than a `mul`
    /// against a constant leaf and common in loss assembly.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let out = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Elementwise `x^p`. Callers are responsible for keeping the base in
    /// the domain where the derivative `p·x^(p−1)` is defined (the crate
    /// always applies it to absolute values or positive degrees).
    pub fn powf(&mut self, a: NodeId, p: f64) -> NodeId {
        self.unary(a, |x| x.powf(p), Op::Pow(a, p))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    // ----- reductions -----

    fn check_axis(&self, a: NodeId, axis: Option<usize>) -> Result<()> {
        if let Some(ax) = axis {
            if ax >= self.value(a).ndim() {
                return Err(Error::dimension(format!(
                    "axis {ax} invalid for shape {:?}",
                    self.value(a).shape()
                )));
            }
        }
        Ok(())
    }

    fn reduce_shape(&self, a: NodeId, axis: Option<usize>) -> Vec<usize> {
        let shape = self.value(a).shape();
        match axis {
            None => vec![1],
            Some(_) if shape.len() == 1 => vec![1],
            Some(0) => vec![shape[1]],
            Some(_) => vec![shape[0]],
        }
    }

    fn reduce_sum_data(&self, a: NodeId, axis: Option<usize>) -> Vec<f64> {
        let v = self.value(a);
        match axis {
            None => vec![v.data().iter().sum()],
            Some(_) if v.ndim() == 1 => vec![v.data().iter().sum()],
            Some(0) => {
                let (m, n) = (v.rows(), v.cols());
                let mut out = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        out[j] += v.data()[i * n + j];
                    }
                }
                out
            }
            Some(_) => {
                let (m, n) = (v.rows(), v.cols());
                let mut out = vec![0.0; m];
                for i in 0..m {
                    out[i] = v.data()[i * n..(i + 1) * n].iter().sum();
                }
                out
            }
        }
    }

    /// Number of input elements feeding each output element of a reduction.
    fn reduce_count(&self, a: NodeId, axis: Option<usize>) -> usize {
        let v = self.value(a);
        match axis {
            None => v.len(),
            Some(_) if v.ndim() == 1 => v.len(),
            Some(0) => v.rows(),
            Some(_) => v.cols(),
        }
    }

    pub fn sum(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.check_axis(a, axis)?;
        let out = Tensor::from_raw(self.reduce_shape(a, axis), self.reduce_sum_data(a, axis));
        let rg = self.rg(a);
        Ok(self.push(out, Op::Sum(a, axis), rg))
    }

    pub fn mean(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.check_axis(a, axis)?;
        let count = self.reduce_count(a, axis) as f64;
        let data = self
            .reduce_sum_data(a, axis)
            .iter()
            .map(|&s| s / count)
            .collect();
        let out = Tensor::from_raw(self.reduce_shape(a, axis), data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mean(a, axis), rg))
    }

    /// Full-tensor L2 norm. An all-zero input yields 0 and propagates a
    /// zero gradient (the subgradient choice that keeps attention
    /// normalization well-defined at dead layers).
    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        let norm = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x * x)
            .sum::<f64>()
            .sqrt();
        let rg = self.rg(a);
        self.push(Tensor::scalar(norm), Op::L2Norm(a), rg)
    }

    // ----- losses -----

    /// Mean softmax cross-entropy over a batch of logit rows.
    ///
    /// `logits` is `[batch, classes]`, `labels[i]` the target class of row
    /// `i`. Fused for numerical stability (log-sum-exp with the row max
    /// subtracted) and for the compact backward `softmax − onehot`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let v = self.value(logits);
        if v.ndim() != 2 {
            return Err(Error::dimension(format!(
                "cross entropy needs [batch, classes] logits, got {:?}",
                v.shape()
            )));
        }
        let (batch, classes) = (v.rows(), v.cols());
        if labels.len() != batch {
            return Err(Error::dimension(format!(
                "{batch} logit rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &v.data()[i * classes..(i + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsumexp = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            loss += logsumexp - row[y];
        }
        loss /= batch as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy(logits, labels.to_vec()),
            rg,
        ))
    }

    // ----- backward -----

    /// Runs reverse-mode accumulation from a scalar `loss` node.
    ///
    /// Gradients add into whatever is already stored, so calling this twice
    /// without [`Tape::zero_grads`] doubles every gradient. Nodes that do
    /// not lead to a `requires_grad` leaf are skipped entirely.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut flow: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        flow[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                flow[i] = None;
                continue;
            }
            let Some(g) = flow[i].take() else { continue };
            self.propagate(i, &g, &mut flow);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, &gi) in acc.iter_mut().zip(&g) {
                        *a += gi;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    /// Adds `contrib` into the flow buffer of `target` if that node wants
    /// gradients.
    fn accumulate(&self, flow: &mut [Option<Vec<f64>>], target: NodeId, contrib: Vec<f64>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut flow[target.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(&contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], flow: &mut [Option<Vec<f64>>]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (m, k) = (va.rows(), va.cols());
                let n = vb.cols();
                if self.rg(a) {
                    // dL/dA = G · Bᵀ
                    self.accumulate(flow, a, matmul_nt(g, vb.data(), m, n, k));
                }
                if self.rg(b) {
                    // dL/dB = Aᵀ · G
                    self.accumulate(flow, b, matmul_tn(va.data(), g, k, m, n));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.value(a).rows(), self.value(a).cols());
                let mut da = vec![0.0; m * n];
                for i2 in 0..n {
                    for j2 in 0..m {
                        da[j2 * n + i2] = g[i2 * m + j2];
                    }
                }
                self.accumulate(flow, a, da);
            }
            Op::Reshape(a) => {
                self.accumulate(flow, a, g.to_vec());
            }
            Op::SymFromUpper(a, n) => {
                let len = self.value(a).len();
                let mut da = vec![0.0; len];
                let mut k = 0;
                for r in 0..n {
                    for c in (r + 1)..n {
                        da[k] = g[r * n + c] + g[c * n + r];
                        k += 1;
                    }
                }
                self.accumulate(flow, a, da);
            }
            Op::Add(a, b) => {
                self.binary_backward(flow, a, b, g, |_, _| 1.0, |_, _| 1.0, i);
            }
            Op::Sub(a, b) => {
                self.binary_backward(flow, a, b, g, |_, _| 1.0, |_, _| -1.0, i);
            }
            Op::Mul(a, b) => {
                self.binary_backward(flow, a, b, g, |_, y| y, |x, _| x, i);
            }
            Op::Scale(a, c) => {
                self.accumulate(flow, a, g.iter().map(|&gi| gi * c).collect());
            }
            Op::Abs(a) => {
                let da = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| {
                        // subgradient 0 at x == 0
                        if x > 0.0 {
                            gi
                        } else if x < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(flow, a, da);
            }
            Op::Pow(a, p) => {
                let da = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| gi * p * x.powf(p - 1.0))
                    .collect();
                self.accumulate(flow, a, da);
            }
            Op::Relu(a) => {
                let da = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(flow, a, da);
            }
            Op::Sigmoid(a) => {
                let da = self.nodes[i]
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gi)| gi * s * (1.0 - s))
                    .collect();
                self.accumulate(flow, a, da);
            }
            Op::Tanh(a) => {
                let da = self.nodes[i]
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&t, &gi)| gi * (1.0 - t * t))
                    .collect();
                self.accumulate(flow, a, da);
            }
            Op::Sum(a, axis) => {
                self.accumulate(flow, a, self.spread(a, axis, g, 1.0));
            }
            Op::Mean(a, axis) => {
                let count = self.reduce_count(a, axis) as f64;
                self.accumulate(flow, a, self.spread(a, axis, g, 1.0 / count));
            }
            Op::L2Norm(a) => {
                let norm = self.nodes[i].value.item();
                if norm > 0.0 {
                    let scale = g[0] / norm;
                    let da = self
                        .value(a)
                        .data()
                        .iter()
                        .map(|&x| x * scale)
                        .collect();
                    self.accumulate(flow, a, da);
                }
            }
            Op::SoftmaxCrossEntropy(logits, ref labels) => {
                let v = self.value(logits);
                let (batch, classes) = (v.rows(), v.cols());
                let mut da = vec![0.0; batch * classes];
                let scale = g[0] / batch as f64;
                for (r, &y) in labels.iter().enumerate() {
                    let row = &v.data()[r * classes..(r + 1) * classes];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                    for c in 0..classes {
                        let p = (row[c] - max).exp() / denom;
                        da[r * classes + c] = scale * (p - if c == y { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(flow, logits, da);
            }
        }
    }

    /// Backward for elementwise binaries with the scalar-broadcast rule:
    /// the broadcast side receives the sum of its elementwise
    /// contributions.
    #[allow(clippy::too_many_arguments)]
    fn binary_backward(
        &self,
        flow: &mut [Option<Vec<f64>>],
        a: NodeId,
        b: NodeId,
        g: &[f64],
        dfa: impl Fn(f64, f64) -> f64,
        dfb: impl Fn(f64, f64) -> f64,
        _out: usize,
    ) {
        let (va, vb) = (self.value(a), self.value(b));
        let equal = va.shape() == vb.shape();
        let fetch_a = |idx: usize| {
            if va.is_scalar() && !equal {
                va.item()
            } else {
                va.data()[idx]
            }
        };
        let fetch_b = |idx: usize| {
            if vb.is_scalar() && !equal {
                vb.item()
            } else {
                vb.data()[idx]
            }
        };
        if self.rg(a) {
            if va.is_scalar() && !equal {
                let mut acc = 0.0;
                for (idx, &gi) in g.iter().enumerate() {
                    acc += gi * dfa(va.item(), fetch_b(idx));
                }
                self.accumulate(flow, a, vec![acc]);
            } else {
                let da = g
                    .iter()
                    .enumerate()
                    .map(|(idx, &gi)| gi * dfa(fetch_a(idx), fetch_b(idx)))
                    .collect();
                self.accumulate(flow, a, da);
            }
        }
        if self.rg(b) {
            if vb.is_scalar() && !equal {
                let mut acc = 0.0;
                for (idx, &gi) in g.iter().enumerate() {
                    acc += gi * dfb(fetch_a(idx), vb.item());
                }
                self.accumulate(flow, b, vec![acc]);
            } else {
                let db = g
                    .iter()
                    .enumerate()
                    .map(|(idx, &gi)| gi * dfb(fetch_a(idx), fetch_b(idx)))
                    .collect();
                self.accumulate(flow, b, db);
            }
        }
    }

    /// Broadcasts a reduction's output gradient back over the input shape.
    fn spread(&self, a: NodeId, axis: Option<usize>, g: &[f64], factor: f64) -> Vec<f64> {
        let v = self.value(a);
        match axis {
            None => vec![g[0] * factor; v.len()],
            Some(_) if v.ndim() == 1 => vec![g[0] * factor; v.len()],
            Some(0) => {
                let (m, n) = (v.rows(), v.cols());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = g[j] * factor;
                    }
                }
                out
            }
            Some(_) => {
                let (m, n) = (v.rows(), v.cols());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = g[i] * factor;
                    }
                }
                out
            }
        }
    }
}
