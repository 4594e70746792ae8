//! Dense f64 tensors and a Wengert-tape reverse-mode differentiator.
//!
//! The tape owns every intermediate value. Operations append a node and
//! return a [`ValueId`]; [`Tape::backward`] replays the recorded nodes in
//! reverse. Gradient buffers are allocated lazily, so a backward pass only
//! touches the ancestors of its root; nodes outside that subgraph cost
//! nothing. Replay order is the creation order, which makes every
//! forward/backward pair bitwise deterministic.

pub mod gradcheck;

use crate::error::{LabError, Result};

// ── Tensor ──

/// Contiguous row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(LabError::Shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(LabError::Shape(format!(
                "item() on tensor of {} elements",
                self.data.len()
            )));
        }
        Ok(self.data[0])
    }

    /// Rows and columns of a rank-2 tensor.
    fn dims2(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(LabError::Shape(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

// ── Gradient vectors ──

/// Flat gradient with respect to one parameter store, in store layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub values: Vec<f64>,
}

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        GradVector {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Global Euclidean norm over the whole vector.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// self += c * other. Lengths must match.
    pub fn add_scaled(&mut self, other: &GradVector, c: f64) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(LabError::Shape(format!(
                "gradient length mismatch: {} vs {}",
                self.values.len(),
                other.values.len()
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn assert_finite(&self, op: &'static str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(LabError::NonFinite { op })
        }
    }
}

// ── Tape ──

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Scale { a: ValueId, c: f64 },
    AddRowBias { a: ValueId, bias: ValueId },
    AddColBias { a: ValueId, bias: ValueId },
    Tanh { a: ValueId },
    Transpose { a: ValueId },
    MeanAxis0 { a: ValueId },
    MeanAxis1 { a: ValueId },
    LayerNorm { x: ValueId, gamma: ValueId, beta: ValueId, eps: f64 },
    BilinearUpsample { a: ValueId, taps: Vec<[(usize, f64); 4]> },
    MseMasked { pred: ValueId, target: Vec<f64>, mask: Option<Vec<bool>>, count: usize },
    SoftmaxCeMasked { logits: ValueId, labels: Vec<usize>, mask: Option<Vec<bool>>, count: usize },
    BceWithLogits { logits: ValueId, targets: Vec<f64> },
    MeanMany { parts: Vec<ValueId> },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Wengert tape: one growing arena of nodes, replayed backward on demand.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn ensure_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::NonFinite { op })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        ValueId(self.nodes.len() - 1)
    }

    fn tensor(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Forward value of a node.
    pub fn value(&self, id: ValueId) -> &Tensor {
        self.tensor(id)
    }

    /// Record a leaf holding `t`. Leaves are inputs or parameters; the tape
    /// does not distinguish them, callers keep the ids they care about.
    pub fn leaf(&mut self, t: Tensor) -> Result<ValueId> {
        ensure_finite("leaf", t.data())?;
        Ok(self.push(Op::Leaf, t))
    }

    // ── forward ops ──

    /// C = A (m×k) · B (k×n).
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, k) = self.tensor(a).dims2()?;
        let (k2, n) = self.tensor(b).dims2()?;
        if k != k2 {
            return Err(LabError::Shape(format!(
                "matmul inner dims differ: {} vs {}",
                k, k2
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let ad = self.tensor(a).data();
            let bd = self.tensor(b).data();
            for i in 0..m {
                for kk in 0..k {
                    let av = ad[i * k + kk];
                    let brow = &bd[kk * n..(kk + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += av * brow[j];
                    }
                }
            }
        }
        ensure_finite("matmul", &out)?;
        Ok(self.push(Op::Matmul { a, b }, Tensor::new(vec![m, n], out)?))
    }

    /// Elementwise sum of same-shaped tensors.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.tensor(a).shape() != self.tensor(b).shape() {
            return Err(LabError::Shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.tensor(a).shape(),
                self.tensor(b).shape()
            )));
        }
        let out: Vec<f64> = self
            .tensor(a)
            .data()
            .iter()
            .zip(self.tensor(b).data())
            .map(|(x, y)| x + y)
            .collect();
        ensure_finite("add", &out)?;
        let shape = self.tensor(a).shape().to_vec();
        Ok(self.push(Op::Add { a, b }, Tensor::new(shape, out)?))
    }

    /// c * A for a compile-time constant c.
    pub fn scale(&mut self, a: ValueId, c: f64) -> Result<ValueId> {
        let out: Vec<f64> = self.tensor(a).data().iter().map(|x| c * x).collect();
        ensure_finite("scale", &out)?;
        let shape = self.tensor(a).shape().to_vec();
        Ok(self.push(Op::Scale { a, c }, Tensor::new(shape, out)?))
    }

    /// A (m×n) + bias (n), bias added to every row.
    pub fn add_row_bias(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        let (m, n) = self.tensor(a).dims2()?;
        if self.tensor(bias).len() != n {
            return Err(LabError::Shape(format!(
                "row bias length {} vs {} columns",
                self.tensor(bias).len(),
                n
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let ad = self.tensor(a).data();
            let bd = self.tensor(bias).data();
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] = ad[i * n + j] + bd[j];
                }
            }
        }
        ensure_finite("add_row_bias", &out)?;
        Ok(self.push(Op::AddRowBias { a, bias }, Tensor::new(vec![m, n], out)?))
    }

    /// A (m×n) + bias (m), bias added to every column.
    pub fn add_col_bias(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        let (m, n) = self.tensor(a).dims2()?;
        if self.tensor(bias).len() != m {
            return Err(LabError::Shape(format!(
                "column bias length {} vs {} rows",
                self.tensor(bias).len(),
                m
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let ad = self.tensor(a).data();
            let bd = self.tensor(bias).data();
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] = ad[i * n + j] + bd[i];
                }
            }
        }
        ensure_finite("add_col_bias", &out)?;
        Ok(self.push(Op::AddColBias { a, bias }, Tensor::new(vec![m, n], out)?))
    }

    pub fn tanh(&mut self, a: ValueId) -> Result<ValueId> {
        let out: Vec<f64> = self.tensor(a).data().iter().map(|x| x.tanh()).collect();
        ensure_finite("tanh", &out)?;
        let shape = self.tensor(a).shape().to_vec();
        Ok(self.push(Op::Tanh { a }, Tensor::new(shape, out)?))
    }

    pub fn transpose(&mut self, a: ValueId) -> Result<ValueId> {
        let (m, n) = self.tensor(a).dims2()?;
        let mut out = vec![0.0; m * n];
        {
            let ad = self.tensor(a).data();
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = ad[i * n + j];
                }
            }
        }
        Ok(self.push(Op::Transpose { a }, Tensor::new(vec![n, m], out)?))
    }

    /// Column means: (m×n) → (1×n).
    pub fn mean_axis0(&mut self, a: ValueId) -> Result<ValueId> {
        let (m, n) = self.tensor(a).dims2()?;
        if m == 0 {
            return Err(LabError::Shape("mean over zero rows".into()));
        }
        let mut out = vec![0.0; n];
        {
            let ad = self.tensor(a).data();
            for i in 0..m {
                for j in 0..n {
                    out[j] += ad[i * n + j];
                }
            }
            for v in &mut out {
                *v /= m as f64;
            }
        }
        ensure_finite("mean_axis0", &out)?;
        Ok(self.push(Op::MeanAxis0 { a }, Tensor::new(vec![1, n], out)?))
    }

    /// Row means: (m×n) → (m×1).
    pub fn mean_axis1(&mut self, a: ValueId) -> Result<ValueId> {
        let (m, n) = self.tensor(a).dims2()?;
        if n == 0 {
            return Err(LabError::Shape("mean over zero columns".into()));
        }
        let mut out = vec![0.0; m];
        {
            let ad = self.tensor(a).data();
            for i in 0..m {
                let mut s = 0.0;
                for j in 0..n {
                    s += ad[i * n + j];
                }
                out[i] = s / n as f64;
            }
        }
        ensure_finite("mean_axis1", &out)?;
        Ok(self.push(Op::MeanAxis1 { a }, Tensor::new(vec![m, 1], out)?))
    }

    /// Layer normalization over the whole buffer of `x`, with elementwise
    /// affine (gamma, beta). Variance is the population variance.
    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    ) -> Result<ValueId> {
        let n = self.tensor(x).len();
        if n == 0 {
            return Err(LabError::Shape("layer_norm on empty tensor".into()));
        }
        if self.tensor(gamma).len() != n || self.tensor(beta).len() != n {
            return Err(LabError::Shape(format!(
                "layer_norm affine lengths {}/{} vs {}",
                self.tensor(gamma).len(),
                self.tensor(beta).len(),
                n
            )));
        }
        let mut out = vec![0.0; n];
        {
            let xd = self.tensor(x).data();
            let gd = self.tensor(gamma).data();
            let bd = self.tensor(beta).data();
            let mean = xd.iter().sum::<f64>() / n as f64;
            let var = xd.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = (var + eps).sqrt();
            for i in 0..n {
                out[i] = gd[i] * (xd[i] - mean) / s + bd[i];
            }
        }
        ensure_finite("layer_norm", &out)?;
        let shape = self.tensor(x).shape().to_vec();
        Ok(self.push(
            Op::LayerNorm { x, gamma, beta, eps },
            Tensor::new(shape, out)?,
        ))
    }

    /// Bilinear upsampling of a (c × h·w) tensor to (c × oh·ow) with
    /// align-corners index mapping, the same interpolation plan applied to
    /// every channel. Corner pixels reproduce input corners exactly.
    pub fn bilinear_upsample(
        &mut self,
        a: ValueId,
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
    ) -> Result<ValueId> {
        let (c, hw) = self.tensor(a).dims2()?;
        if hw != h * w {
            return Err(LabError::Shape(format!(
                "upsample input has {} columns, expected {}x{}",
                hw, h, w
            )));
        }
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(LabError::Shape("upsample with zero-sized plane".into()));
        }
        let taps = bilinear_plan(h, w, oh, ow);
        let mut out = vec![0.0; c * oh * ow];
        {
            let ad = self.tensor(a).data();
            for ch in 0..c {
                let src = &ad[ch * hw..(ch + 1) * hw];
                let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
                for (o, tap) in taps.iter().enumerate() {
                    let mut v = 0.0;
                    for &(idx, wt) in tap {
                        v += wt * src[idx];
                    }
                    dst[o] = v;
                }
            }
        }
        ensure_finite("bilinear_upsample", &out)?;
        Ok(self.push(
            Op::BilinearUpsample { a, taps },
            Tensor::new(vec![c, oh * ow], out)?,
        ))
    }

    /// Mean squared error between `pred` and a constant target, restricted
    /// to `mask` when given. Errors if no element is selected.
    pub fn mse_masked(
        &mut self,
        pred: ValueId,
        target: &[f64],
        mask: Option<&[bool]>,
    ) -> Result<ValueId> {
        let n = self.tensor(pred).len();
        if target.len() != n {
            return Err(LabError::Shape(format!(
                "mse target length {} vs prediction {}",
                target.len(),
                n
            )));
        }
        if let Some(m) = mask {
            if m.len() != n {
                return Err(LabError::Shape(format!(
                    "mse mask length {} vs prediction {}",
                    m.len(),
                    n
                )));
            }
        }
        let count = match mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => n,
        };
        if count == 0 {
            return Err(LabError::Shape("mse over empty selection".into()));
        }
        let pd = self.tensor(pred).data();
        let mut s = 0.0;
        for i in 0..n {
            if mask.map_or(true, |m| m[i]) {
                let d = pd[i] - target[i];
                s += d * d;
            }
        }
        let loss = s / count as f64;
        ensure_finite("mse_masked", &[loss])?;
        Ok(self.push(
            Op::MseMasked {
                pred,
                target: target.to_vec(),
                mask: mask.map(|m| m.to_vec()),
                count,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Softmax cross-entropy over the columns of a (K × n) logit tensor with
    /// integer labels, averaged over the selected columns. Every selected
    /// label must be < K.
    pub fn softmax_ce_masked(
        &mut self,
        logits: ValueId,
        labels: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<ValueId> {
        let (k, n) = self.tensor(logits).dims2()?;
        if labels.len() != n {
            return Err(LabError::Shape(format!(
                "{} labels for {} columns",
                labels.len(),
                n
            )));
        }
        if let Some(m) = mask {
            if m.len() != n {
                return Err(LabError::Shape(format!(
                    "ce mask length {} vs {} columns",
                    m.len(),
                    n
                )));
            }
        }
        let count = match mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => n,
        };
        if count == 0 {
            return Err(LabError::Shape("cross-entropy over empty selection".into()));
        }
        let ld = self.tensor(logits).data();
        let mut s = 0.0;
        for j in 0..n {
            if mask.map_or(true, |m| m[j]) {
                if labels[j] >= k {
                    return Err(LabError::Shape(format!(
                        "label {} out of range for {} classes",
                        labels[j], k
                    )));
                }
                s += column_log_sum_exp(ld, k, n, j) - ld[labels[j] * n + j];
            }
        }
        let loss = s / count as f64;
        ensure_finite("softmax_ce_masked", &[loss])?;
        Ok(self.push(
            Op::SoftmaxCeMasked {
                logits,
                labels: labels.to_vec(),
                mask: mask.map(|m| m.to_vec()),
                count,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Mean binary cross-entropy with logits against constant 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: ValueId, targets: &[f64]) -> Result<ValueId> {
        let n = self.tensor(logits).len();
        if targets.len() != n || n == 0 {
            return Err(LabError::Shape(format!(
                "bce targets length {} vs logits {}",
                targets.len(),
                n
            )));
        }
        let ld = self.tensor(logits).data();
        let mut s = 0.0;
        for i in 0..n {
            let z = ld[i];
            // max(z,0) - z*t + ln(1+exp(-|z|)) is the overflow-safe form.
            s += z.max(0.0) - z * targets[i] + (-z.abs()).exp().ln_1p();
        }
        let loss = s / n as f64;
        ensure_finite("bce_with_logits", &[loss])?;
        Ok(self.push(
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            Tensor::scalar(loss),
        ))
    }

    /// Mean of scalar nodes. Used to average per-modality losses.
    pub fn mean_many(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(LabError::Shape("mean of zero terms".into()));
        }
        let mut s = 0.0;
        for &p in parts {
            s += self.tensor(p).item()?;
        }
        let loss = s / parts.len() as f64;
        ensure_finite("mean_many", &[loss])?;
        Ok(self.push(
            Op::MeanMany {
                parts: parts.to_vec(),
            },
            Tensor::scalar(loss),
        ))
    }

    // ── backward ──

    /// Clear all gradient buffers so another backward pass can run on the
    /// same recorded graph.
    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Reverse pass from a scalar root, seeding d root = 1.
    ///
    /// Gradients land in buffers that persist after the pass, so a second
    /// `backward` on the same tape would re-propagate them and double
    /// count; call [`Tape::reset_grads`] between roots.
    pub fn backward(&mut self, root: ValueId) -> Result<()> {
        if self.tensor(root).len() != 1 {
            return Err(LabError::Shape(format!(
                "backward root must be scalar, got {} elements",
                self.tensor(root).len()
            )));
        }
        self.backward_with_seed(root, &[1.0])
    }

    /// Reverse pass seeding d root with an arbitrary cotangent. Useful for
    /// chaining vector-Jacobian products across tapes.
    pub fn backward_with_seed(&mut self, root: ValueId, seed: &[f64]) -> Result<()> {
        if seed.len() != self.tensor(root).len() {
            return Err(LabError::Shape(format!(
                "seed length {} vs root {}",
                seed.len(),
                self.tensor(root).len()
            )));
        }
        accumulate(&mut self.grads[root.0], seed.len(), |g| {
            for (gi, si) in g.iter_mut().zip(seed) {
                *gi += si;
            }
        });
        for idx in (0..=root.0).rev() {
            let Some(out_grad) = self.grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &out_grad)?;
            self.grads[idx] = Some(out_grad);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, og: &[f64]) -> Result<()> {
        // Split borrows: values are read-only here, grads are written.
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = nodes[a.0].value.dims2()?;
                let n = nodes[b.0].value.shape()[1];
                let ad = nodes[a.0].value.data();
                let bd = nodes[b.0].value.data();
                accumulate(&mut grads[a.0], m * k, |ga| {
                    for i in 0..m {
                        for kk in 0..k {
                            let mut s = 0.0;
                            let ogrow = &og[i * n..(i + 1) * n];
                            let brow = &bd[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                s += ogrow[j] * brow[j];
                            }
                            ga[i * k + kk] += s;
                        }
                    }
                });
                accumulate(&mut grads[b.0], k * n, |gb| {
                    for i in 0..m {
                        for kk in 0..k {
                            let av = ad[i * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            let ogrow = &og[i * n..(i + 1) * n];
                            let gbrow = &mut gb[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                gbrow[j] += av * ogrow[j];
                            }
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                for &src in &[a, b] {
                    accumulate(&mut grads[src.0], og.len(), |g| {
                        for (gi, oi) in g.iter_mut().zip(og) {
                            *gi += oi;
                        }
                    });
                }
            }
            Op::Scale { a, c } => {
                let c = *c;
                accumulate(&mut grads[a.0], og.len(), |g| {
                    for (gi, oi) in g.iter_mut().zip(og) {
                        *gi += c * oi;
                    }
                });
            }
            Op::AddRowBias { a, bias } => {
                let (m, n) = nodes[a.0].value.dims2()?;
                accumulate(&mut grads[a.0], m * n, |g| {
                    for (gi, oi) in g.iter_mut().zip(og) {
                        *gi += oi;
                    }
                });
                accumulate(&mut grads[bias.0], n, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[j] += og[i * n + j];
                        }
                    }
                });
            }
            Op::AddColBias { a, bias } => {
                let (m, n) = nodes[a.0].value.dims2()?;
                accumulate(&mut grads[a.0], m * n, |g| {
                    for (gi, oi) in g.iter_mut().zip(og) {
                        *gi += oi;
                    }
                });
                accumulate(&mut grads[bias.0], m, |g| {
                    for i in 0..m {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += og[i * n + j];
                        }
                        g[i] += s;
                    }
                });
            }
            Op::Tanh { a } => {
                let yd = nodes[idx].value.data();
                accumulate(&mut grads[a.0], og.len(), |g| {
                    for i in 0..og.len() {
                        g[i] += og[i] * (1.0 - yd[i] * yd[i]);
                    }
                });
            }
            Op::Transpose { a } => {
                let (m, n) = nodes[a.0].value.dims2()?;
                accumulate(&mut grads[a.0], m * n, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += og[j * m + i];
                        }
                    }
                });
            }
            Op::MeanAxis0 { a } => {
                let (m, n) = nodes[a.0].value.dims2()?;
                let inv = 1.0 / m as f64;
                accumulate(&mut grads[a.0], m * n, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += og[j] * inv;
                        }
                    }
                });
            }
            Op::MeanAxis1 { a } => {
                let (m, n) = nodes[a.0].value.dims2()?;
                let inv = 1.0 / n as f64;
                accumulate(&mut grads[a.0], m * n, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += og[i] * inv;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xd = nodes[x.0].value.data();
                let gd = nodes[gamma.0].value.data();
                let n = xd.len();
                let nf = n as f64;
                let mean = xd.iter().sum::<f64>() / nf;
                let var = xd.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                let s = (var + eps).sqrt();
                let xhat: Vec<f64> = xd.iter().map(|v| (v - mean) / s).collect();
                // g_i = d loss / d xhat_i
                let gvec: Vec<f64> = og.iter().zip(gd).map(|(o, ga)| o * ga).collect();
                let g_mean = gvec.iter().sum::<f64>() / nf;
                let gx_mean = gvec.iter().zip(&xhat).map(|(g, xh)| g * xh).sum::<f64>() / nf;
                accumulate(&mut grads[x.0], n, |g| {
                    for i in 0..n {
                        g[i] += (gvec[i] - g_mean - xhat[i] * gx_mean) / s;
                    }
                });
                accumulate(&mut grads[gamma.0], n, |g| {
                    for i in 0..n {
                        g[i] += og[i] * xhat[i];
                    }
                });
                accumulate(&mut grads[beta.0], n, |g| {
                    for (gi, oi) in g.iter_mut().zip(og) {
                        *gi += oi;
                    }
                });
            }
            Op::BilinearUpsample { a, taps } => {
                let (c, hw) = nodes[a.0].value.dims2()?;
                let ohow = taps.len();
                accumulate(&mut grads[a.0], c * hw, |g| {
                    for ch in 0..c {
                        let gsrc = &mut g[ch * hw..(ch + 1) * hw];
                        let godst = &og[ch * ohow..(ch + 1) * ohow];
                        for (o, tap) in taps.iter().enumerate() {
                            let gv = godst[o];
                            if gv == 0.0 {
                                continue;
                            }
                            for &(si, wt) in tap {
                                gsrc[si] += wt * gv;
                            }
                        }
                    }
                });
            }
            Op::MseMasked { pred, target, mask, count } => {
                let pd = nodes[pred.0].value.data();
                let c = 2.0 * og[0] / *count as f64;
                accumulate(&mut grads[pred.0], pd.len(), |g| {
                    for i in 0..pd.len() {
                        if mask.as_ref().map_or(true, |m| m[i]) {
                            g[i] += c * (pd[i] - target[i]);
                        }
                    }
                });
            }
            Op::SoftmaxCeMasked { logits, labels, mask, count } => {
                let (k, n) = nodes[logits.0].value.dims2()?;
                let ld = nodes[logits.0].value.data();
                let c = og[0] / *count as f64;
                accumulate(&mut grads[logits.0], k * n, |g| {
                    for j in 0..n {
                        if mask.as_ref().map_or(true, |m| m[j]) {
                            let lse = column_log_sum_exp(ld, k, n, j);
                            for cls in 0..k {
                                let p = (ld[cls * n + j] - lse).exp();
                                let ind = if cls == labels[j] { 1.0 } else { 0.0 };
                                g[cls * n + j] += c * (p - ind);
                            }
                        }
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let ld = nodes[logits.0].value.data();
                let n = ld.len();
                let c = og[0] / n as f64;
                accumulate(&mut grads[logits.0], n, |g| {
                    for i in 0..n {
                        let sig = 1.0 / (1.0 + (-ld[i]).exp());
                        g[i] += c * (sig - targets[i]);
                    }
                });
            }
            Op::MeanMany { parts } => {
                let c = og[0] / parts.len() as f64;
                for p in parts.clone() {
                    accumulate(&mut grads[p.0], 1, |g| {
                        g[0] += c;
                    });
                }
            }
        }
        Ok(())
    }

    /// Gradient accumulated at `id` by the backward passes since the last
    /// reset. None when the node was not touched.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient at `id`, materializing zeros when untouched.
    pub fn grad_or_zeros(&self, id: ValueId) -> Vec<f64> {
        match self.grads[id.0].as_ref() {
            Some(g) => g.clone(),
            None => vec![0.0; self.tensor(id).len()],
        }
    }
}

/// Run `f` on the gradient buffer for a slot, allocating zeros on first use.
/// Lazy allocation is what keeps per-root backward passes proportional to
/// the root's own subgraph.
fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

fn column_log_sum_exp(data: &[f64], k: usize, n: usize, j: usize) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for cls in 0..k {
        mx = mx.max(data[cls * n + j]);
    }
    let mut s = 0.0;
    for cls in 0..k {
        s += (data[cls * n + j] - mx).exp();
    }
    mx + s.ln()
}

/// Interpolation plan shared by all channels: for each output pixel, four
/// (source index, weight) taps with weights summing to 1. Align-corners
/// mapping; a 1-wide axis collapses to a single tap.
fn bilinear_plan(h: usize, w: usize, oh: usize, ow: usize) -> Vec<[(usize, f64); 4]> {
    let axis = |src: usize, dst: usize, o: usize| -> (usize, usize, f64) {
        if src == 1 || dst == 1 {
            return (0, 0, 0.0);
        }
        let f = (o as f64 * (src - 1) as f64) / (dst - 1) as f64;
        let lo = (f.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, f - lo as f64)
    };
    let mut plan = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, ty) = axis(h, oh, oy);
        for ox in 0..ow {
            let (x0, x1, tx) = axis(w, ow, ox);
            plan.push([
                (y0 * w + x0, (1.0 - ty) * (1.0 - tx)),
                (y0 * w + x1, (1.0 - ty) * tx),
                (y1 * w + x0, ty * (1.0 - tx)),
                (y1 * w + x1, ty * tx),
            ]);
        }
    }
    plan
}
