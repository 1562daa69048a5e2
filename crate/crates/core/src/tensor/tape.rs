//! The recording tape: forward values plus the reverse-mode replay.
//!
//! The tape is an append-only list of slots (forward values) and nodes
//! (operation records). Node inputs always precede the node, so a single
//! reverse sweep applies the chain rule in topological order. Nodes are only
//! recorded when an operand requires gradients; pure inference pays for the
//! arithmetic and nothing else.

use super::{Tensor, TensorError};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    Forward,
    Transposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Sigmoid,
    Tanh,
    Relu,
    Hadamard,
    Add,
    Sub,
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Hadamard | Self::Add | Self::Sub)
    }
}

impl FromStr for ElementwiseKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, TensorError> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            "hadamard" => Ok(Self::Hadamard),
            "add" => Ok(Self::Add),
            "sub" => Ok(Self::Sub),
            other => Err(TensorError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Bce,
}

impl FromStr for LossKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, TensorError> {
        match s {
            "mse" => Ok(Self::Mse),
            "bce" => Ok(Self::Bce),
            other => Err(TensorError::UnknownKind(other.to_string())),
        }
    }
}

struct Slot {
    shape: Vec<usize>,
    data: Vec<f64>,
    needs_grad: bool,
}

#[derive(Debug)]
enum Node {
    Matmul { a: Var, b: Var, out: Var },
    MatVec { m: Var, x: Var, out: Var },
    Conv1d { input: Var, kernels: Var, out: Var, mode: ConvMode, stride: usize, padding: Padding },
    Unary { kind: ElementwiseKind, a: Var, out: Var },
    Binary { kind: ElementwiseKind, a: Var, b: Var, out: Var },
    BiasAdd { a: Var, bias: Var, out: Var },
    Concat { parts: Vec<Var>, out: Var },
    SliceRows { a: Var, start: usize, out: Var },
    Reshape { a: Var, out: Var },
    Transpose2 { a: Var, out: Var },
    Sum { a: Var, out: Var },
    Mean { a: Var, out: Var },
    Scale { a: Var, factor: f64, out: Var },
    Mse { pred: Var, target: Var, out: Var },
    Bce { pred: Var, target: Var, out: Var },
}

/// Append-only operation tape confined to one training context.
#[derive(Default)]
pub struct Tape {
    slots: Vec<Slot>,
    nodes: Vec<Node>,
    /// Gradients accumulated across backward calls, per slot.
    acc_grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_slot(&mut self, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.slots.push(Slot { shape, data, needs_grad });
        self.acc_grads.push(None);
        Var(self.slots.len() - 1)
    }

    /// Register a tensor as a leaf; gradient flows back to it when the
    /// tensor requires gradients.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_slot(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Register a tensor as a constant regardless of its gradient flag.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push_slot(t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn constant_from(&mut self, shape: &[usize], values: &[f64]) -> Var {
        self.push_slot(shape.to_vec(), values.to_vec(), false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.slots[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.slots[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v), false).expect("slot data is consistent")
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.slots[v.0].needs_grad
    }

    /// Accumulated gradient of `v` from previous backward calls.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.acc_grads[v.0].as_deref()
    }

    /// Drop all accumulated gradients. The per-step reset contract: training
    /// code builds a fresh tape per step, but long-lived tapes can reuse
    /// storage through this.
    pub fn clear_grads(&mut self) {
        for g in &mut self.acc_grads {
            *g = None;
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    // ---- operations -----------------------------------------------------

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul expects rank-2 operands, got {:?} x {:?}",
                sa, sb
            )));
        }
        let (m, k) = (sa[0], sa[1]);
        let (k2, n) = (sb[0], sb[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                sa, sb
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let da = self.value(a);
            let db = self.value(b);
            for i in 0..m {
                let arow = &da[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (kk, &aik) in arow.iter().enumerate() {
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &db[kk * n..(kk + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aik * bv;
                    }
                }
            }
        }
        let needs = self.needs_grad(a) || self.needs_grad(b);
        let out = self.push_slot(vec![m, n], out, needs);
        if needs {
            self.nodes.push(Node::Matmul { a, b, out });
        }
        Ok(out)
    }

    /// Matrix times rank-1 vector.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var, TensorError> {
        let (sm, sx) = (self.shape(m), self.shape(x));
        if sm.len() != 2 || sx.len() != 1 || sm[1] != sx[0] {
            return Err(TensorError::ShapeMismatch(format!(
                "matvec expects [r,c] x [c], got {:?} x {:?}",
                sm, sx
            )));
        }
        let (rows, cols) = (sm[0], sm[1]);
        let mut out = vec![0.0; rows];
        {
            let dm = self.value(m);
            let dx = self.value(x);
            for (r, o) in out.iter_mut().enumerate() {
                let row = &dm[r * cols..(r + 1) * cols];
                *o = row.iter().zip(dx).map(|(a, b)| a * b).sum();
            }
        }
        let needs = self.needs_grad(m) || self.needs_grad(x);
        let out = self.push_slot(vec![rows], out, needs);
        if needs {
            self.nodes.push(Node::MatVec { m, x, out });
        }
        Ok(out)
    }

    /// 1D convolution (cross-correlation) over `[channels, length]` input
    /// with a `[out_ch, in_ch, k]` kernel stack. Transposed mode computes
    /// the exact adjoint of the corresponding forward convolution, so output
    /// length grows: `(L-1)*stride + k` for valid padding, `L*stride` for
    /// same padding.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernels: Var,
        mode: ConvMode,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        if stride < 1 {
            return Err(TensorError::InvalidStride(stride));
        }
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernels).to_vec();
        if si.len() != 2 || sk.len() != 3 {
            return Err(TensorError::ShapeMismatch(format!(
                "conv1d expects input [c,l] and kernels [o,i,k], got {:?} and {:?}",
                si, sk
            )));
        }
        let (out_ch, in_ch, k) = (sk[0], sk[1], sk[2]);
        let out = match mode {
            ConvMode::Forward => {
                let (c, l) = (si[0], si[1]);
                if c != in_ch {
                    return Err(TensorError::ShapeMismatch(format!(
                        "conv1d input has {} channels, kernels expect {}",
                        c, in_ch
                    )));
                }
                if padding == Padding::Valid && k > l {
                    return Err(TensorError::ShapeMismatch(format!(
                        "conv1d kernel {} exceeds input length {} under valid padding",
                        k, l
                    )));
                }
                let geo = ConvGeometry::forward(l, k, stride, padding);
                let data = conv_forward(self.value(input), in_ch, l, self.value(kernels), out_ch, k, &geo);
                (vec![out_ch, geo.out_len], data)
            }
            ConvMode::Transposed => {
                // Input carries the forward op's output channels.
                let (c, m_len) = (si[0], si[1]);
                if c != out_ch {
                    return Err(TensorError::ShapeMismatch(format!(
                        "transposed conv1d input has {} channels, kernels expect {}",
                        c, out_ch
                    )));
                }
                let geo = ConvGeometry::transposed(m_len, k, stride, padding);
                let data = conv_adjoint(self.value(input), out_ch, m_len, self.value(kernels), in_ch, k, &geo);
                (vec![in_ch, geo.in_len], data)
            }
        };
        let needs = self.needs_grad(input) || self.needs_grad(kernels);
        let outv = self.push_slot(out.0, out.1, needs);
        if needs {
            self.nodes.push(Node::Conv1d { input, kernels, out: outv, mode, stride, padding });
        }
        Ok(outv)
    }

    /// Pointwise operation; binary kinds require equal shapes.
    pub fn elementwise(
        &mut self,
        kind: ElementwiseKind,
        a: Var,
        b: Option<Var>,
    ) -> Result<Var, TensorError> {
        if kind.is_binary() {
            let b = b.ok_or_else(|| {
                TensorError::ShapeMismatch(format!("{:?} needs a second operand", kind))
            })?;
            if self.shape(a) != self.shape(b) {
                return Err(TensorError::ShapeMismatch(format!(
                    "{:?} operands differ: {:?} vs {:?}",
                    kind,
                    self.shape(a),
                    self.shape(b)
                )));
            }
            let data: Vec<f64> = self
                .value(a)
                .iter()
                .zip(self.value(b))
                .map(|(&x, &y)| match kind {
                    ElementwiseKind::Hadamard => x * y,
                    ElementwiseKind::Add => x + y,
                    ElementwiseKind::Sub => x - y,
                    _ => unreachable!(),
                })
                .collect();
            let needs = self.needs_grad(a) || self.needs_grad(b);
            let shape = self.shape(a).to_vec();
            let out = self.push_slot(shape, data, needs);
            if needs {
                self.nodes.push(Node::Binary { kind, a, b, out });
            }
            Ok(out)
        } else {
            let data: Vec<f64> = self
                .value(a)
                .iter()
                .map(|&x| match kind {
                    ElementwiseKind::Sigmoid => sigmoid(x),
                    ElementwiseKind::Tanh => x.tanh(),
                    ElementwiseKind::Relu => x.max(0.0),
                    _ => unreachable!(),
                })
                .collect();
            let needs = self.needs_grad(a);
            let shape = self.shape(a).to_vec();
            let out = self.push_slot(shape, data, needs);
            if needs {
                self.nodes.push(Node::Unary { kind, a, out });
            }
            Ok(out)
        }
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.elementwise(ElementwiseKind::Sigmoid, a, None)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.elementwise(ElementwiseKind::Tanh, a, None)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.elementwise(ElementwiseKind::Relu, a, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(ElementwiseKind::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(ElementwiseKind::Sub, a, Some(b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(ElementwiseKind::Hadamard, a, Some(b))
    }

    /// Broadcast-add a `[c]` bias over a `[c, l]` feature map.
    pub fn bias_add(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(bias).to_vec();
        if sa.len() != 2 || sb.len() != 1 || sa[0] != sb[0] {
            return Err(TensorError::ShapeMismatch(format!(
                "bias_add expects [c,l] + [c], got {:?} + {:?}",
                sa, sb
            )));
        }
        let (c, l) = (sa[0], sa[1]);
        let mut data = self.value(a).to_vec();
        {
            let db = self.value(bias);
            for ch in 0..c {
                let row = &mut data[ch * l..(ch + 1) * l];
                for v in row {
                    *v += db[ch];
                }
            }
        }
        let needs = self.needs_grad(a) || self.needs_grad(bias);
        let out = self.push_slot(sa, data, needs);
        if needs {
            self.nodes.push(Node::BiasAdd { a, bias, out });
        }
        Ok(out)
    }

    /// Concatenate along axis 0. All parts must share trailing dimensions.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch("concat of zero parts".into()));
        }
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat trailing dimensions differ: {:?} vs {:?}",
                    &s[1..],
                    tail
                )));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * tail.iter().product::<usize>().max(1));
        for &p in parts {
            data.extend_from_slice(self.value(p));
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let needs = parts.iter().any(|&p| self.needs_grad(p));
        let out = self.push_slot(shape, data, needs);
        if needs {
            self.nodes.push(Node::Concat { parts: parts.to_vec(), out });
        }
        Ok(out)
    }

    /// Contiguous rows `[start, start+rows)` along axis 0.
    pub fn slice_rows(&mut self, a: Var, start: usize, rows: usize) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        if sa.is_empty() || start + rows > sa[0] {
            return Err(TensorError::ShapeMismatch(format!(
                "slice rows {}..{} out of bounds for shape {:?}",
                start,
                start + rows,
                sa
            )));
        }
        let row_size: usize = sa[1..].iter().product::<usize>().max(1);
        let data = self.value(a)[start * row_size..(start + rows) * row_size].to_vec();
        let mut shape = vec![rows];
        shape.extend_from_slice(&sa[1..]);
        let needs = self.needs_grad(a);
        let out = self.push_slot(shape, data, needs);
        if needs {
            self.nodes.push(Node::SliceRows { a, start, out });
        }
        Ok(out)
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).len() {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot reshape {} elements into {:?}",
                self.value(a).len(),
                shape
            )));
        }
        let data = self.value(a).to_vec();
        let needs = self.needs_grad(a);
        let out = self.push_slot(shape.to_vec(), data, needs);
        if needs {
            self.nodes.push(Node::Reshape { a, out });
        }
        Ok(out)
    }

    /// Transpose a rank-2 tensor.
    pub fn transpose2(&mut self, a: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "transpose expects rank-2, got {:?}",
                sa
            )));
        }
        let (r, c) = (sa[0], sa[1]);
        let src = self.value(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let needs = self.needs_grad(a);
        let out = self.push_slot(vec![c, r], data, needs);
        if needs {
            self.nodes.push(Node::Transpose2 { a, out });
        }
        Ok(out)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(a).iter().sum();
        let needs = self.needs_grad(a);
        let out = self.push_slot(vec![1], vec![s], needs);
        if needs {
            self.nodes.push(Node::Sum { a, out });
        }
        Ok(out)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).len().max(1);
        let s: f64 = self.value(a).iter().sum::<f64>() / n as f64;
        let needs = self.needs_grad(a);
        let out = self.push_slot(vec![1], vec![s], needs);
        if needs {
            self.nodes.push(Node::Mean { a, out });
        }
        Ok(out)
    }

    /// Multiply by a compile-time constant factor.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let data: Vec<f64> = self.value(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs_grad(a);
        let out = self.push_slot(shape, data, needs);
        if needs {
            self.nodes.push(Node::Scale { a, factor, out });
        }
        Ok(out)
    }

    /// Scalar loss over equal-shape prediction and target.
    pub fn loss(&mut self, kind: LossKind, pred: Var, target: Var) -> Result<Var, TensorError> {
        if self.shape(pred) != self.shape(target) {
            return Err(TensorError::ShapeMismatch(format!(
                "loss operands differ: {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let n = self.value(pred).len().max(1) as f64;
        let value = match kind {
            LossKind::Mse => self
                .value(pred)
                .iter()
                .zip(self.value(target))
                .map(|(&p, &t)| (p - t) * (p - t))
                .sum::<f64>()
                / n,
            LossKind::Bce => {
                for (&p, &t) in self.value(pred).iter().zip(self.value(target)) {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(TensorError::DomainError(format!(
                            "bce prediction {} outside (0,1)",
                            p
                        )));
                    }
                    if t != 0.0 && t != 1.0 {
                        return Err(TensorError::DomainError(format!(
                            "bce target {} not in {{0,1}}",
                            t
                        )));
                    }
                }
                -self
                    .value(pred)
                    .iter()
                    .zip(self.value(target))
                    .map(|(&p, &t)| t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                    .sum::<f64>()
                    / n
            }
        };
        let needs = self.needs_grad(pred) || self.needs_grad(target);
        let out = self.push_slot(vec![1], vec![value], needs);
        if needs {
            self.nodes.push(match kind {
                LossKind::Mse => Node::Mse { pred, target, out },
                LossKind::Bce => Node::Bce { pred, target, out },
            });
        }
        Ok(out)
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.loss(LossKind::Mse, pred, target)
    }

    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.loss(LossKind::Bce, pred, target)
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradients reachable on the tape are
    /// added into the per-slot accumulators; repeated calls accumulate.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if self.value(root).len() != 1 {
            return Err(TensorError::NotScalar);
        }
        if !self.needs_grad(root) {
            return Err(TensorError::DetachedTape);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.slots.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            let out = node_out(&self.nodes[idx]);
            let Some(g) = grads[out.0].clone() else { continue };
            self.propagate(idx, &g, &mut grads);
        }

        for (acc, local) in self.acc_grads.iter_mut().zip(grads) {
            if let Some(local) = local {
                match acc {
                    Some(buf) => {
                        for (b, v) in buf.iter_mut().zip(&local) {
                            *b += v;
                        }
                    }
                    None => *acc = Some(local),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let slots = &self.slots;
        let add_to = |grads: &mut [Option<Vec<f64>>], v: Var, contrib: &[f64]| {
            if !slots[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => {
                    for (b, c) in buf.iter_mut().zip(contrib) {
                        *b += c;
                    }
                }
                None => grads[v.0] = Some(contrib.to_vec()),
            }
        };

        match &self.nodes[idx] {
            Node::Matmul { a, b, out: _ } => {
                let (m, k) = (slots[a.0].shape[0], slots[a.0].shape[1]);
                let n = slots[b.0].shape[1];
                if slots[a.0].needs_grad {
                    let db = &slots[b.0].data;
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &db[kk * n..(kk + 1) * n];
                            ga[i * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    add_to(grads, *a, &ga);
                }
                if slots[b.0].needs_grad {
                    let da = &slots[a.0].data;
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let aik = da[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            let brow = &mut gb[kk * n..(kk + 1) * n];
                            for (bv, gv) in brow.iter_mut().zip(grow) {
                                *bv += aik * gv;
                            }
                        }
                    }
                    add_to(grads, *b, &gb);
                }
            }
            Node::MatVec { m, x, out: _ } => {
                let (rows, cols) = (slots[m.0].shape[0], slots[m.0].shape[1]);
                if slots[m.0].needs_grad {
                    let dx = &slots[x.0].data;
                    let mut gm = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &mut gm[r * cols..(r + 1) * cols];
                        for (o, &xv) in row.iter_mut().zip(dx) {
                            *o = gr * xv;
                        }
                    }
                    add_to(grads, *m, &gm);
                }
                if slots[x.0].needs_grad {
                    let dm = &slots[m.0].data;
                    let mut gx = vec![0.0; cols];
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &dm[r * cols..(r + 1) * cols];
                        for (o, &mv) in gx.iter_mut().zip(row) {
                            *o += gr * mv;
                        }
                    }
                    add_to(grads, *x, &gx);
                }
            }
            Node::Conv1d { input, kernels, out: _, mode, stride, padding } => {
                let sk = &slots[kernels.0].shape;
                let (out_ch, in_ch, k) = (sk[0], sk[1], sk[2]);
                let si = &slots[input.0].shape;
                match mode {
                    ConvMode::Forward => {
                        let l = si[1];
                        let geo = ConvGeometry::forward(l, k, *stride, *padding);
                        if slots[input.0].needs_grad {
                            let gi = conv_adjoint(g, out_ch, geo.out_len, &slots[kernels.0].data, in_ch, k, &geo);
                            add_to(grads, *input, &gi);
                        }
                        if slots[kernels.0].needs_grad {
                            let gk = conv_kernel_grad(&slots[input.0].data, in_ch, l, g, out_ch, geo.out_len, k, &geo);
                            add_to(grads, *kernels, &gk);
                        }
                    }
                    ConvMode::Transposed => {
                        let m_len = si[1];
                        let geo = ConvGeometry::transposed(m_len, k, *stride, *padding);
                        if slots[input.0].needs_grad {
                            // Adjoint of the adjoint is the forward map.
                            let gi = conv_forward(g, in_ch, geo.in_len, &slots[kernels.0].data, out_ch, k, &geo);
                            add_to(grads, *input, &gi);
                        }
                        if slots[kernels.0].needs_grad {
                            let gk = conv_kernel_grad(g, in_ch, geo.in_len, &slots[input.0].data, out_ch, m_len, k, &geo);
                            add_to(grads, *kernels, &gk);
                        }
                    }
                }
            }
            Node::Unary { kind, a, out } => {
                let y = &slots[out.0].data;
                let x = &slots[a.0].data;
                let contrib: Vec<f64> = match kind {
                    ElementwiseKind::Sigmoid => {
                        g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect()
                    }
                    ElementwiseKind::Tanh => {
                        g.iter().zip(y).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect()
                    }
                    // Subgradient 0 at exactly x == 0.
                    ElementwiseKind::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect(),
                    _ => unreachable!(),
                };
                add_to(grads, *a, &contrib);
            }
            Node::Binary { kind, a, b, out: _ } => match kind {
                ElementwiseKind::Add => {
                    add_to(grads, *a, g);
                    add_to(grads, *b, g);
                }
                ElementwiseKind::Sub => {
                    add_to(grads, *a, g);
                    if slots[b.0].needs_grad {
                        let neg: Vec<f64> = g.iter().map(|&v| -v).collect();
                        add_to(grads, *b, &neg);
                    }
                }
                ElementwiseKind::Hadamard => {
                    if slots[a.0].needs_grad {
                        let db = &slots[b.0].data;
                        let contrib: Vec<f64> = g.iter().zip(db).map(|(&gv, &bv)| gv * bv).collect();
                        add_to(grads, *a, &contrib);
                    }
                    if slots[b.0].needs_grad {
                        let da = &slots[a.0].data;
                        let contrib: Vec<f64> = g.iter().zip(da).map(|(&gv, &av)| gv * av).collect();
                        add_to(grads, *b, &contrib);
                    }
                }
                _ => unreachable!(),
            },
            Node::BiasAdd { a, bias, out: _ } => {
                add_to(grads, *a, g);
                if slots[bias.0].needs_grad {
                    let (c, l) = (slots[a.0].shape[0], slots[a.0].shape[1]);
                    let mut gb = vec![0.0; c];
                    for (ch, gbv) in gb.iter_mut().enumerate() {
                        *gbv = g[ch * l..(ch + 1) * l].iter().sum();
                    }
                    add_to(grads, *bias, &gb);
                }
            }
            Node::Concat { parts, out: _ } => {
                let mut offset = 0usize;
                for &p in parts {
                    let len = slots[p.0].data.len();
                    add_to(grads, p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Node::SliceRows { a, start, out } => {
                if slots[a.0].needs_grad {
                    let row_size: usize = slots[a.0].shape[1..].iter().product::<usize>().max(1);
                    let mut ga = vec![0.0; slots[a.0].data.len()];
                    let begin = start * row_size;
                    ga[begin..begin + slots[out.0].data.len()].copy_from_slice(g);
                    add_to(grads, *a, &ga);
                }
            }
            Node::Reshape { a, out: _ } => add_to(grads, *a, g),
            Node::Transpose2 { a, out: _ } => {
                if slots[a.0].needs_grad {
                    let (r, c) = (slots[a.0].shape[0], slots[a.0].shape[1]);
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = g[j * r + i];
                        }
                    }
                    add_to(grads, *a, &ga);
                }
            }
            Node::Sum { a, out: _ } => {
                if slots[a.0].needs_grad {
                    let contrib = vec![g[0]; slots[a.0].data.len()];
                    add_to(grads, *a, &contrib);
                }
            }
            Node::Mean { a, out: _ } => {
                if slots[a.0].needs_grad {
                    let n = slots[a.0].data.len().max(1) as f64;
                    let contrib = vec![g[0] / n; slots[a.0].data.len()];
                    add_to(grads, *a, &contrib);
                }
            }
            Node::Scale { a, factor, out: _ } => {
                if slots[a.0].needs_grad {
                    let contrib: Vec<f64> = g.iter().map(|&v| v * factor).collect();
                    add_to(grads, *a, &contrib);
                }
            }
            Node::Mse { pred, target, out: _ } => {
                let n = slots[pred.0].data.len().max(1) as f64;
                let gp = g[0];
                if slots[pred.0].needs_grad {
                    let contrib: Vec<f64> = slots[pred.0]
                        .data
                        .iter()
                        .zip(&slots[target.0].data)
                        .map(|(&p, &t)| gp * 2.0 * (p - t) / n)
                        .collect();
                    add_to(grads, *pred, &contrib);
                }
                if slots[target.0].needs_grad {
                    let contrib: Vec<f64> = slots[pred.0]
                        .data
                        .iter()
                        .zip(&slots[target.0].data)
                        .map(|(&p, &t)| -gp * 2.0 * (p - t) / n)
                        .collect();
                    add_to(grads, *target, &contrib);
                }
            }
            Node::Bce { pred, target, out: _ } => {
                let n = slots[pred.0].data.len().max(1) as f64;
                let gp = g[0];
                if slots[pred.0].needs_grad {
                    let contrib: Vec<f64> = slots[pred.0]
                        .data
                        .iter()
                        .zip(&slots[target.0].data)
                        .map(|(&p, &t)| gp * (p - t) / (p * (1.0 - p)) / n)
                        .collect();
                    add_to(grads, *pred, &contrib);
                }
                if slots[target.0].needs_grad {
                    let contrib: Vec<f64> = slots[pred.0]
                        .data
                        .iter()
                        .map(|&p| gp * ((1.0 - p).ln() - p.ln()) / n)
                        .collect();
                    add_to(grads, *target, &contrib);
                }
            }
        }
    }
}

fn node_out(node: &Node) -> Var {
    match node {
        Node::Matmul { out, .. }
        | Node::MatVec { out, .. }
        | Node::Conv1d { out, .. }
        | Node::Unary { out, .. }
        | Node::Binary { out, .. }
        | Node::BiasAdd { out, .. }
        | Node::Concat { out, .. }
        | Node::SliceRows { out, .. }
        | Node::Reshape { out, .. }
        | Node::Transpose2 { out, .. }
        | Node::Sum { out, .. }
        | Node::Mean { out, .. }
        | Node::Scale { out, .. }
        | Node::Mse { out, .. }
        | Node::Bce { out, .. } => *out,
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shared geometry of a convolution and its adjoint: `out[t]` reads
/// `in[t*stride + kappa - pad_left]`.
struct ConvGeometry {
    in_len: usize,
    out_len: usize,
    stride: usize,
    pad_left: usize,
}

impl ConvGeometry {
    fn forward(in_len: usize, k: usize, stride: usize, padding: Padding) -> Self {
        match padding {
            Padding::Valid => ConvGeometry {
                in_len,
                out_len: (in_len - k) / stride + 1,
                stride,
                pad_left: 0,
            },
            Padding::Same => {
                let out_len = in_len.div_ceil(stride);
                let total = ((out_len - 1) * stride + k).saturating_sub(in_len);
                // Symmetric zero padding, extra column on the left.
                ConvGeometry { in_len, out_len, stride, pad_left: total.div_ceil(2) }
            }
        }
    }

    /// Geometry for a transposed convolution whose input has length `m`;
    /// reconstructs the forward geometry it is the adjoint of.
    fn transposed(m: usize, k: usize, stride: usize, padding: Padding) -> Self {
        let in_len = match padding {
            Padding::Valid => (m - 1) * stride + k,
            Padding::Same => m * stride,
        };
        let geo = ConvGeometry::forward(in_len, k, stride, padding);
        debug_assert_eq!(geo.out_len, m);
        geo
    }
}

fn conv_forward(
    input: &[f64],
    in_ch: usize,
    in_len: usize,
    ker: &[f64],
    out_ch: usize,
    k: usize,
    geo: &ConvGeometry,
) -> Vec<f64> {
    debug_assert_eq!(in_len, geo.in_len);
    let mut out = vec![0.0; out_ch * geo.out_len];
    for o in 0..out_ch {
        for i in 0..in_ch {
            let krow = &ker[(o * in_ch + i) * k..(o * in_ch + i + 1) * k];
            let irow = &input[i * in_len..(i + 1) * in_len];
            let orow = &mut out[o * geo.out_len..(o + 1) * geo.out_len];
            for (t, ov) in orow.iter_mut().enumerate() {
                let base = t * geo.stride;
                let mut acc = 0.0;
                for (kappa, &kv) in krow.iter().enumerate() {
                    let pos = base + kappa;
                    if pos < geo.pad_left {
                        continue;
                    }
                    let x = pos - geo.pad_left;
                    if x < in_len {
                        acc += kv * irow[x];
                    }
                }
                *ov += acc;
            }
        }
    }
    out
}

/// Adjoint of `conv_forward` with respect to the input.
fn conv_adjoint(
    gout: &[f64],
    out_ch: usize,
    out_len: usize,
    ker: &[f64],
    in_ch: usize,
    k: usize,
    geo: &ConvGeometry,
) -> Vec<f64> {
    debug_assert_eq!(out_len, geo.out_len);
    let mut gin = vec![0.0; in_ch * geo.in_len];
    for o in 0..out_ch {
        for i in 0..in_ch {
            let krow = &ker[(o * in_ch + i) * k..(o * in_ch + i + 1) * k];
            let grow = &gout[o * out_len..(o + 1) * out_len];
            let irow = &mut gin[i * geo.in_len..(i + 1) * geo.in_len];
            for (t, &gv) in grow.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let base = t * geo.stride;
                for (kappa, &kv) in krow.iter().enumerate() {
                    let pos = base + kappa;
                    if pos < geo.pad_left {
                        continue;
                    }
                    let x = pos - geo.pad_left;
                    if x < geo.in_len {
                        irow[x] += gv * kv;
                    }
                }
            }
        }
    }
    gin
}

/// Gradient of `conv_forward` with respect to the kernels.
#[allow(clippy::too_many_arguments)]
fn conv_kernel_grad(
    input: &[f64],
    in_ch: usize,
    in_len: usize,
    gout: &[f64],
    out_ch: usize,
    out_len: usize,
    k: usize,
    geo: &ConvGeometry,
) -> Vec<f64> {
    let mut gk = vec![0.0; out_ch * in_ch * k];
    for o in 0..out_ch {
        for i in 0..in_ch {
            let grow = &gout[o * out_len..(o + 1) * out_len];
            let irow = &input[i * in_len..(i + 1) * in_len];
            let krow = &mut gk[(o * in_ch + i) * k..(o * in_ch + i + 1) * k];
            for (t, &gv) in grow.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let base = t * geo.stride;
                for (kappa, kv) in krow.iter_mut().enumerate() {
                    let pos = base + kappa;
                    if pos < geo.pad_left {
                        continue;
                    }
                    let x = pos - geo.pad_left;
                    if x < in_len {
                        *kv += gv * irow[x];
                    }
                }
            }
        }
    }
    gk
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], values: &[f64]) -> Tensor {
        Tensor::new(shape, values, false).unwrap()
    }

    fn p(shape: &[usize], values: &[f64]) -> Tensor {
        Tensor::new(shape, values, true).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let v = tape.constant(&t(&[2, 1], &[3.0, 4.0]));
        let out = tape.matmul(i2, v).unwrap();
        assert_eq!(tape.value(out), &[3.0, 4.0]);
        assert_eq!(tape.shape(out), &[2, 1]);
    }

    #[test]
    fn matmul_hand_value() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(&t(&[2, 1], &[5.0, 6.0]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_inner_dim_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 3], &[0.0; 6]));
        let b = tape.constant(&t(&[2, 2], &[0.0; 4]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_backward_matches_ones_bt() {
        // d sum(a @ b) / d a == ones @ b^T
        let mut tape = Tape::new();
        let a = tape.leaf(&p(&[2, 2], &[0.3, -0.7, 1.1, 0.4]));
        let b = tape.constant(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let prod = tape.matmul(a, b).unwrap();
        let root = tape.sum(prod).unwrap();
        tape.backward(root).unwrap();
        // Row sums of b: 1+2+3 = 6, 4+5+6 = 15.
        assert_eq!(tape.grad(a).unwrap(), &[6.0, 15.0, 6.0, 15.0]);
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.constant(&t(&[1, 1, 1], &[1.0]));
        let out = tape.conv1d(x, k, ConvMode::Forward, 1, Padding::Valid).unwrap();
        assert_eq!(tape.value(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv1d_sliding_sums() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.constant(&t(&[1, 1, 2], &[1.0, 1.0]));
        let out = tape.conv1d(x, k, ConvMode::Forward, 1, Padding::Valid).unwrap();
        assert_eq!(tape.value(out), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn conv1d_transposed_shape() {
        // Adjoint shape rule: length 3 in, kernel 2, stride 1, valid -> length 4.
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 3], &[1.0, 1.0, 1.0]));
        let k = tape.constant(&t(&[1, 1, 2], &[1.0, 1.0]));
        let out = tape.conv1d(x, k, ConvMode::Transposed, 1, Padding::Valid).unwrap();
        assert_eq!(tape.shape(out), &[1, 4]);
    }

    #[test]
    fn conv1d_one_hot_kernel_shifts() {
        // A one-hot kernel at offset j shifts the signal by j exactly.
        let signal = [5.0, 1.0, -2.0, 7.0, 0.5, 3.0];
        for j in 0..3usize {
            let mut kernel = vec![0.0; 3];
            kernel[j] = 1.0;
            let mut tape = Tape::new();
            let x = tape.constant(&t(&[1, 6], &signal));
            let k = tape.constant(&t(&[1, 1, 3], &kernel));
            let out = tape.conv1d(x, k, ConvMode::Forward, 1, Padding::Valid).unwrap();
            assert_eq!(tape.value(out), &signal[j..j + 4]);
        }
    }

    #[test]
    fn conv1d_same_padding_keeps_length() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let k = tape.constant(&t(&[1, 1, 3], &[1.0, 1.0, 1.0]));
        let out = tape.conv1d(x, k, ConvMode::Forward, 1, Padding::Same).unwrap();
        assert_eq!(tape.shape(out), &[1, 5]);
        // Middle sample sees all three neighbours; edges see two.
        assert_eq!(tape.value(out), &[3.0, 6.0, 9.0, 12.0, 9.0]);
    }

    #[test]
    fn conv1d_transposed_same_doubles_length() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 4], &[1.0, 1.0, 1.0, 1.0]));
        let k = tape.constant(&t(&[1, 1, 4], &[1.0; 4]));
        let out = tape.conv1d(x, k, ConvMode::Transposed, 2, Padding::Same).unwrap();
        assert_eq!(tape.shape(out), &[1, 8]);
    }

    #[test]
    fn conv1d_rejects_zero_stride() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 4], &[0.0; 4]));
        let k = tape.constant(&t(&[1, 1, 2], &[0.0; 2]));
        assert!(matches!(
            tape.conv1d(x, k, ConvMode::Forward, 0, Padding::Valid),
            Err(TensorError::InvalidStride(0))
        ));
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let zero = tape.constant(&t(&[1], &[0.0]));
        let s = tape.sigmoid(zero).unwrap();
        assert_eq!(tape.value(s), &[0.5]);
        let th = tape.tanh(zero).unwrap();
        assert_eq!(tape.value(th), &[0.0]);
        let a = tape.constant(&t(&[3], &[1.0, 2.0, 3.0]));
        let b = tape.constant(&t(&[3], &[4.0, 5.0, 6.0]));
        let h = tape.hadamard(a, b).unwrap();
        assert_eq!(tape.value(h), &[4.0, 10.0, 18.0]);
    }

    #[test]
    fn elementwise_kind_parsing() {
        assert_eq!("tanh".parse::<ElementwiseKind>().unwrap(), ElementwiseKind::Tanh);
        assert!(matches!(
            "softmax".parse::<ElementwiseKind>(),
            Err(TensorError::UnknownKind(_))
        ));
    }

    #[test]
    fn sigmoid_symmetry() {
        let mut tape = Tape::new();
        for i in -300..=300 {
            let x = i as f64 / 10.0;
            let a = tape.constant(&t(&[1], &[x]));
            let b = tape.constant(&t(&[1], &[-x]));
            let sa = tape.sigmoid(a).unwrap();
            let sb = tape.sigmoid(b).unwrap();
            let total = tape.value(sa)[0] + tape.value(sb)[0];
            assert!((total - 1.0).abs() <= 1e-12, "x={} total={}", x, total);
        }
    }

    #[test]
    fn loss_values() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[3], &[1.0, 2.0, 3.0]));
        let same = tape.mse(x, x).unwrap();
        assert_eq!(tape.value(same), &[0.0]);

        let zero = tape.constant(&t(&[2], &[0.0, 0.0]));
        let y = tape.constant(&t(&[2], &[3.0, 1.0]));
        let m = tape.mse(zero, y).unwrap();
        assert_eq!(tape.value(m), &[5.0]);

        let half = tape.constant(&t(&[1], &[0.5]));
        let one = tape.constant(&t(&[1], &[1.0]));
        let b = tape.bce(half, one).unwrap();
        assert!((tape.value(b)[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_domain_errors() {
        let mut tape = Tape::new();
        let bad = tape.constant(&t(&[1], &[1.0]));
        let one = tape.constant(&t(&[1], &[1.0]));
        assert!(matches!(tape.bce(bad, one), Err(TensorError::DomainError(_))));
        let ok = tape.constant(&t(&[1], &[0.5]));
        let badt = tape.constant(&t(&[1], &[0.5]));
        assert!(matches!(tape.bce(ok, badt), Err(TensorError::DomainError(_))));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(&p(&[3], &[1.0, -2.0, 0.5]));
        let root = tape.sum(w).unwrap();
        tape.backward(root).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_scalar_chain_rule() {
        // loss = mse(w*x, y) with w=2, x=3, y=0 -> d/dw = 2*(wx-y)*x = 36.
        let mut tape = Tape::new();
        let w = tape.leaf(&p(&[1], &[2.0]));
        let x = tape.constant(&t(&[1], &[3.0]));
        let y = tape.constant(&t(&[1], &[0.0]));
        let wx = tape.hadamard(w, x).unwrap();
        let loss = tape.mse(wx, y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[36.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let w = tape.leaf(&p(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(TensorError::NotScalar)));
    }

    #[test]
    fn backward_detached_root() {
        let mut tape = Tape::new();
        let c = tape.constant(&t(&[1], &[1.0]));
        let s = tape.sum(c).unwrap();
        assert!(matches!(tape.backward(s), Err(TensorError::DetachedTape)));
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut tape = Tape::new();
        let w = tape.leaf(&p(&[2], &[1.0, 2.0]));
        let root = tape.sum(w).unwrap();
        tape.backward(root).unwrap();
        tape.backward(root).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0, 2.0]);
        tape.clear_grads();
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn concat_slice_roundtrip_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(&p(&[2], &[1.0, 2.0]));
        let b = tape.leaf(&p(&[3], &[3.0, 4.0, 5.0]));
        let cat = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(cat), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let tail = tape.slice_rows(cat, 2, 3).unwrap();
        let root = tape.sum(tail).unwrap();
        tape.backward(root).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.0, 0.0]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let at = tape.transpose2(a).unwrap();
        assert_eq!(tape.shape(at), &[3, 2]);
        assert_eq!(tape.value(at), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = tape.transpose2(at).unwrap();
        assert_eq!(tape.value(back), tape.value(a));
    }

    #[test]
    fn matmul_associativity_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (m, k, n, q) = (3usize, 4usize, 2usize, 5usize);
            let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..n * q).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut tape = Tape::new();
            let av = tape.constant(&t(&[m, k], &a));
            let bv = tape.constant(&t(&[k, n], &b));
            let cv = tape.constant(&t(&[n, q], &c));
            let ab = tape.matmul(av, bv).unwrap();
            let ab_c = tape.matmul(ab, cv).unwrap();
            let bc = tape.matmul(bv, cv).unwrap();
            let a_bc = tape.matmul(av, bc).unwrap();
            for (x, y) in tape.value(ab_c).iter().zip(tape.value(a_bc)) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
