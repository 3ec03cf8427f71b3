//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the tape order is already a
//! topological order and `backward` is a single reverse sweep. A graph is
//! single-writer; separate graphs over the same parameters are independent.

use std::rc::Rc;

use super::kernels;
use super::tensor::{shape_str, Scalar, Tensor};
use crate::error::{HttError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probability floor applied before the log in cross entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// Epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Abs(Var),
    LeakyRelu(Var, F),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    MaskedSoftmax(Var),
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SumRows(Var),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy {
        probs: Var,
        targets: Vec<usize>,
    },
    Im2Col {
        x: Var,
        geom: kernels::ConvGeom,
    },
}

struct Node<F> {
    value: Vec<F>,
    shape: Vec<usize>,
    op: Op<F>,
    needs_grad: bool,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

/// Computation tape with reverse-mode differentiation.
pub struct Graph<F: Scalar = f64> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.last() {
        None => (1, 1),
        Some(&c) => (shape[..shape.len() - 1].iter().product(), c),
    }
}

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> HttError {
    HttError::shape(format!("{op}: incompatible shapes {} and {}", shape_str(a), shape_str(b)))
}

fn slot<'a, F: Scalar>(head: &'a mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var) -> Option<&'a mut Vec<F>> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    Some(head[v.0].get_or_insert_with(|| vec![F::zero(); n.value.len()]))
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<F>, shape: Vec<usize>, op: Op<F>, inputs: &[Var]) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Vec<F>, shape: Vec<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            shape,
            op: Op::Leaf,
            needs_grad: requires_grad,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor as a leaf; gradients are tracked iff `t.requires_grad`.
    pub fn tensor(&mut self, t: &Tensor<F>) -> Var {
        self.leaf(t.data().to_vec(), t.shape().to_vec(), t.requires_grad)
    }

    /// Records a constant leaf (no gradient).
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(HttError::shape(format!(
                "constant of shape {} given {} values",
                shape_str(&shape),
                data.len()
            )));
        }
        Ok(self.leaf(data, shape, false))
    }

    /// Records a leaf that tracks gradients.
    pub fn variable(&mut self, shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Var> {
        let v = self.constant(shape, data)?;
        self.nodes[v.0].requires_grad = true;
        self.nodes[v.0].needs_grad = true;
        Ok(v)
    }

    pub fn zeros(&mut self, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        let n = shape.iter().product();
        self.leaf(vec![F::zero(); n], shape, false)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn item(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    /// Gradient accumulated on a leaf by `backward`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<F> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    fn dims2(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(HttError::shape(format!("{op}: expected a matrix, got {}", shape_str(s))));
        }
        Ok((s[0], s[1]))
    }

    // ── linear algebra ────────────────────────────────────────────────

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![F::zero(); m * n];
        kernels::mm(self.value(a), self.value(b), m, k, n, &mut out);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b), &[a, b]))
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(mismatch("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![F::zero(); m * n];
        kernels::mm_nt(self.value(a), self.value(b), m, k, n, &mut out);
        Ok(self.push(out, vec![m, n], Op::MatMulNT(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = self.value(a);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(out, vec![n, m], Op::Transpose(a), &[a]))
    }

    /// Affine map `x·W + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, inp) = rows_cols(self.shape(x));
        let (wi, out_dim) = self.dims2(w, "linear")?;
        if wi != inp {
            return Err(mismatch("linear", self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(mismatch("linear bias", self.shape(w), self.shape(b)));
            }
        }
        let mut out = vec![F::zero(); rows * out_dim];
        if let Some(b) = b {
            let bv = self.value(b);
            for r in out.chunks_exact_mut(out_dim) {
                r.copy_from_slice(bv);
            }
        }
        kernels::mm(self.value(x), self.value(w), rows, inp, out_dim, &mut out);
        let mut shape = self.shape(x).to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        *shape.last_mut().unwrap() = out_dim;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, shape, Op::Linear { x, w, b }, &inputs))
    }

    // ── elementwise ───────────────────────────────────────────────────

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(out, self.shape(a).to_vec(), Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        Ok(self.push(out, self.shape(a).to_vec(), Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(out, self.shape(a).to_vec(), Op::Mul(a, b), &[a, b]))
    }

    /// Adds the vector `b[n]` to every row of `a[...×n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = rows_cols(self.shape(a));
        if self.shape(b) != [n] {
            return Err(mismatch("add_row", self.shape(a), self.shape(b)));
        }
        let bv = self.value(b);
        let out = self
            .value(a)
            .chunks_exact(n)
            .flat_map(|r| r.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        Ok(self.push(out, self.shape(a).to_vec(), Op::AddRow(a, b), &[a, b]))
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(mismatch("reshape", self.shape(a), &shape));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(out, shape, Op::Reshape(a), &[a]))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push(out, self.shape(a).to_vec(), Op::Scale(a, c), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.abs()).collect();
        self.push(out, self.shape(a).to_vec(), Op::Abs(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|&x| if x >= F::zero() { x } else { slope * x })
            .collect();
        self.push(out, self.shape(a).to_vec(), Op::LeakyRelu(a, slope), &[a])
    }

    // ── normalization ─────────────────────────────────────────────────

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, d) = rows_cols(self.shape(x));
        if d < 2 {
            return Err(HttError::shape(format!(
                "layer_norm needs a last axis longer than 1, got {}",
                shape_str(self.shape(x))
            )));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = F::of(LAYER_NORM_EPS);
        let dn = F::from_usize(d).unwrap();
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![F::zero(); rows * d];
        let mut inv_std = vec![F::zero(); rows];
        let mut out = vec![F::zero(); rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
            let inv = F::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            out,
            self.shape(x).to_vec(),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Softmax over the last axis restricted to positions where `mask` is true.
    ///
    /// `mask` is either one entry per column (broadcast over rows) or one
    /// entry per element. Masked positions get probability exactly 0.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<Rc<[bool]>>) -> Result<Var> {
        let (rows, n) = rows_cols(self.shape(x));
        let mask: Rc<[bool]> = match mask {
            Some(m) => m,
            None => vec![true; n].into(),
        };
        if mask.len() != n && mask.len() != rows * n {
            return Err(HttError::shape(format!(
                "mask of length {} does not broadcast to {}",
                mask.len(),
                shape_str(self.shape(x))
            )));
        }
        let per_col = mask.len() == n;
        let xv = self.value(x);
        let mut out = vec![F::zero(); rows * n];
        for r in 0..rows {
            let m = if per_col { &mask[..] } else { &mask[r * n..(r + 1) * n] };
            let row = &xv[r * n..(r + 1) * n];
            let mut max = F::neg_infinity();
            for j in 0..n {
                if m[j] && row[j] > max {
                    max = row[j];
                }
            }
            if !m.iter().any(|&b| b) {
                return Err(HttError::invalid(format!(
                    "masked_softmax: every position of row {r} is masked"
                )));
            }
            let o = &mut out[r * n..(r + 1) * n];
            let mut sum = F::zero();
            for j in 0..n {
                if m[j] {
                    let e = (row[j] - max).exp();
                    o[j] = e;
                    sum += e;
                }
            }
            let inv = F::one() / sum;
            for v in o.iter_mut() {
                *v *= inv;
            }
        }
        Ok(self.push(out, self.shape(x).to_vec(), Op::MaskedSoftmax(x), &[x]))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax(x, None)
    }

    // ── reshaping ─────────────────────────────────────────────────────

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "slice_cols")?;
        if start + len > n {
            return Err(HttError::shape(format!(
                "slice_cols {start}..{} out of range for {}",
                start + len,
                shape_str(self.shape(a))
            )));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        Ok(self.push(out, vec![m, len], Op::SliceCols { a, start }, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| HttError::shape("concat_cols of nothing"))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            total += pn;
        }
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let n = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[r * n..(r + 1) * n]);
            }
        }
        Ok(self.push(out, vec![m, total], Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "slice_rows")?;
        if start + len > m {
            return Err(HttError::shape(format!(
                "slice_rows {start}..{} out of range for {}",
                start + len,
                shape_str(self.shape(a))
            )));
        }
        let out = self.value(a)[start * n..(start + len) * n].to_vec();
        Ok(self.push(out, vec![len, n], Op::SliceRows { a, start }, &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| HttError::shape("concat_rows of nothing"))?;
        let (_, n) = self.dims2(first, "concat_rows")?;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_rows")?;
            if pn != n {
                return Err(mismatch("concat_rows", self.shape(first), self.shape(p)));
            }
            m += pm;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(out, vec![m, n], Op::ConcatRows(parts.to_vec()), parts))
    }

    // ── reductions ───────────────────────────────────────────────────

    /// Sums over the last axis: `[...×n] → [...]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (_, n) = rows_cols(self.shape(a));
        let out = self.value(a).chunks_exact(n).map(|r| r.iter().copied().sum()).collect();
        let mut shape = self.shape(a).to_vec();
        shape.pop();
        self.push(out, shape, Op::SumRows(a), &[a])
    }

    /// Mean over the first axis of a matrix: `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mean_rows")?;
        let mut out = vec![F::zero(); n];
        for r in self.value(a).chunks_exact(n) {
            out.iter_mut().zip(r).for_each(|(o, &v)| *o += v);
        }
        let inv = F::one() / F::from_usize(m).unwrap();
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(out, vec![1, n], Op::MeanRows(a), &[a]))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![s], vec![], Op::Sum(a), &[a])
    }

    /// Per-row `−ln p[target]` with `p` clamped at [`LOG_CLAMP`].
    ///
    /// `probs` is `[c]` (one target) or `[r×c]` (one target per row); the
    /// result has one entry per row.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let (rows, c) = rows_cols(self.shape(probs));
        if targets.len() != rows {
            return Err(HttError::shape(format!(
                "cross_entropy: {} targets for probabilities {}",
                targets.len(),
                shape_str(self.shape(probs))
            )));
        }
        let tol = 1e-6f64.max(F::epsilon().as_f64() * 16.0 * c as f64);
        let pv = self.value(probs);
        let mut out = Vec::with_capacity(rows);
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(HttError::invalid(format!(
                    "cross_entropy: target index {t} out of range for {c} classes"
                )));
            }
            let row = &pv[r * c..(r + 1) * c];
            let total: F = row.iter().copied().sum();
            if (total.as_f64() - 1.0).abs() > tol {
                return Err(HttError::invalid(format!(
                    "cross_entropy: row {r} sums to {total}, not a distribution"
                )));
            }
            out.push(-row[t].max(F::of(LOG_CLAMP)).ln());
        }
        Ok(self.push(
            out,
            vec![rows],
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
            &[probs],
        ))
    }

    /// Patch extraction for a valid (unpadded) convolution over an `[H×W×C]`
    /// image: output `[positions × k·k·C]`.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(HttError::shape(format!("im2col expects [H, W, C], got {}", shape_str(s))));
        }
        let geom = kernels::ConvGeom::new(s[0], s[1], s[2], kernel, stride)?;
        let out = geom.im2col(self.value(x));
        let shape = vec![geom.positions(), geom.patch_len()];
        Ok(self.push(out, shape, Op::Im2Col { x, geom }, &[x]))
    }

    // ── differentiation ──────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(HttError::shape(format!(
                "backward needs a scalar loss, got {}",
                shape_str(&self.nodes[loss.0].shape)
            )));
        }
        let nodes = &self.nodes;
        let mut adj: Vec<Option<Vec<F>>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![F::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let (head, _) = adj.split_at_mut(i);
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        leaf_grads.push((i, g));
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(da) = slot(head, nodes, *a) {
                        kernels::mm_nt(&g, bv, m, n, k, da);
                    }
                    if let Some(db) = slot(head, nodes, *b) {
                        kernels::mm_tn(av, &g, m, k, n, db);
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[0];
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(da) = slot(head, nodes, *a) {
                        kernels::mm(&g, bv, m, n, k, da);
                    }
                    if let Some(db) = slot(head, nodes, *b) {
                        kernels::mm_tn(&g, av, m, n, k, db);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (rows, inp) = rows_cols(&nodes[x.0].shape);
                    let out_dim = nodes[w.0].shape[1];
                    if let Some(dx) = slot(head, nodes, *x) {
                        kernels::mm_nt(&g, &nodes[w.0].value, rows, out_dim, inp, dx);
                    }
                    if let Some(dw) = slot(head, nodes, *w) {
                        kernels::mm_tn(&nodes[x.0].value, &g, rows, inp, out_dim, dw);
                    }
                    if let Some(b) = b {
                        if let Some(db) = slot(head, nodes, *b) {
                            for r in g.chunks_exact(out_dim) {
                                db.iter_mut().zip(r).for_each(|(d, &v)| *d += v);
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    if let Some(da) = slot(head, nodes, *a) {
                        for i in 0..m {
                            for j in 0..n {
                                da[i * n + j] += g[j * m + i];
                            }
                        }
                    }
                }
                Op::Reshape(a) => {
                    if let Some(da) = slot(head, nodes, *a) {
                        kernels::axpy(F::one(), &g, da);
                    }
                }
                Op::Add(a, b) => {
                    if let Some(da) = slot(head, nodes, *a) {
                        kernels::axpy(F::one(), &g, da);
                    }
                    if let Some(db) = slot(head, nodes, *b) {
                        kernels::axpy(F::one(), &g, db);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(da) = slot(head, nodes, *a) {
                        kernels::axpy(F::one(), &g, da);
                    }
                    if let Some(db) = slot(head, nodes, *b) {
                        kernels::axpy(-F::one(), &g, db);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(da) = slot(head, nodes, *a) {
                        for ((d, &gi), &y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * y;
                        }
                    }
                    if let Some(db) = slot(head, nodes, *b) {
                        for ((d, &gi), &x) in db.iter_mut().zip(&g).zip(av) {
                            *d += gi * x;
                        }
                    }
                }
                Op::AddRow(a, b) => {
                    let n = nodes[b.0].value.len();
                    if let Some(da) = slot(head, nodes, *a) {
                        kernels::axpy(F::one(), &g, da);
                    }
                    if let Some(db) = slot(head, nodes, *b) {
                        for r in g.chunks_exact(n) {
                            db.iter_mut().zip(r).for_each(|(d, &v)| *d += v);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(da) = slot(head, nodes, *a) {
                        kernels::axpy(*c, &g, da);
                    }
                }
                Op::Abs(a) => {
                    let av = &nodes[a.0].value;
                    if let Some(da) = slot(head, nodes, *a) {
                        for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(av) {
                            if x > F::zero() {
                                *d += gi;
                            } else if x < F::zero() {
                                *d -= gi;
                            }
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let av = &nodes[a.0].value;
                    if let Some(da) = slot(head, nodes, *a) {
                        for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(av) {
                            *d += if x >= F::zero() { gi } else { *slope * gi };
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let d = nodes[gain.0].value.len();
                    let gv = &nodes[gain.0].value;
                    if let Some(dg) = slot(head, nodes, *gain) {
                        for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                            for j in 0..d {
                                dg[j] += gr[j] * hr[j];
                            }
                        }
                    }
                    if let Some(db) = slot(head, nodes, *bias) {
                        for gr in g.chunks_exact(d) {
                            db.iter_mut().zip(gr).for_each(|(o, &v)| *o += v);
                        }
                    }
                    if let Some(dx) = slot(head, nodes, *x) {
                        let dn = F::from_usize(d).unwrap();
                        let mut dh = vec![F::zero(); d];
                        for (r, &inv) in inv_std.iter().enumerate() {
                            let gr = &g[r * d..(r + 1) * d];
                            let hr = &xhat[r * d..(r + 1) * d];
                            let mut mean_dh = F::zero();
                            let mut mean_dhh = F::zero();
                            for j in 0..d {
                                dh[j] = gr[j] * gv[j];
                                mean_dh += dh[j];
                                mean_dhh += dh[j] * hr[j];
                            }
                            mean_dh /= dn;
                            mean_dhh /= dn;
                            let out = &mut dx[r * d..(r + 1) * d];
                            for j in 0..d {
                                out[j] += inv * (dh[j] - mean_dh - hr[j] * mean_dhh);
                            }
                        }
                    }
                }
                Op::MaskedSoftmax(a) => {
                    let y = &node.value;
                    let (_, n) = rows_cols(&node.shape);
                    if let Some(da) = slot(head, nodes, *a) {
                        for ((dr, gr), yr) in da.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                            let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                            for j in 0..n {
                                dr[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
                Op::SliceCols { a, start } => {
                    let n = nodes[a.0].shape[1];
                    let len = node.shape[1];
                    if let Some(da) = slot(head, nodes, *a) {
                        for (r, gr) in g.chunks_exact(len).enumerate() {
                            kernels::axpy(F::one(), gr, &mut da[r * n + start..r * n + start + len]);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.shape[1];
                    let mut off = 0;
                    for p in parts {
                        let n = nodes[p.0].shape[1];
                        if let Some(dp) = slot(head, nodes, *p) {
                            for (r, gr) in g.chunks_exact(total).enumerate() {
                                kernels::axpy(F::one(), &gr[off..off + n], &mut dp[r * n..(r + 1) * n]);
                            }
                        }
                        off += n;
                    }
                }
                Op::SliceRows { a, start } => {
                    let n = node.shape[1];
                    if let Some(da) = slot(head, nodes, *a) {
                        kernels::axpy(F::one(), &g, &mut da[start * n..start * n + g.len()]);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(dp) = slot(head, nodes, *p) {
                            kernels::axpy(F::one(), &g[off..off + len], dp);
                        }
                        off += len;
                    }
                }
                Op::SumRows(a) => {
                    let (_, n) = rows_cols(&nodes[a.0].shape);
                    if let Some(da) = slot(head, nodes, *a) {
                        for (dr, &gi) in da.chunks_exact_mut(n).zip(&g) {
                            dr.iter_mut().for_each(|v| *v += gi);
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let inv = F::one() / F::from_usize(m).unwrap();
                    if let Some(da) = slot(head, nodes, *a) {
                        for dr in da.chunks_exact_mut(n) {
                            kernels::axpy(inv, &g, dr);
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(da) = slot(head, nodes, *a) {
                        da.iter_mut().for_each(|v| *v += g[0]);
                    }
                }
                Op::CrossEntropy { probs, targets } => {
                    let (_, c) = rows_cols(&nodes[probs.0].shape);
                    let pv = &nodes[probs.0].value;
                    let floor = F::of(LOG_CLAMP);
                    if let Some(dp) = slot(head, nodes, *probs) {
                        for (r, &t) in targets.iter().enumerate() {
                            let p = pv[r * c + t];
                            if p > floor {
                                dp[r * c + t] -= g[r] / p;
                            }
                        }
                    }
                }
                Op::Im2Col { x, geom } => {
                    if let Some(dx) = slot(head, nodes, *x) {
                        geom.col2im_add(&g, dx);
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(buf) => kernels::axpy(F::one(), &g, buf),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}
