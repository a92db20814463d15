use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::{Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Training mode carries the dropout generator; evaluation mode is deterministic.
pub enum Mode {
    Train(ChaCha8Rng),
    Eval,
}

impl Mode {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// A user-defined differentiable operation.
pub trait CustomOp {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Returns one gradient buffer per input, each shaped like that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Transpose(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MaskScale {
        x: Var,
        mask: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    NegLogPick {
        probs: Var,
        gold: Vec<usize>,
        clipped: Vec<bool>,
    },
    Sum(Var),
    Reshape(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_param: HashMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param
            .values()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Computation tape. Confined to a single thread; build one per batch.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    mode: Mode,
}

pub(crate) const PROB_CLIP: f64 = 1e-15;

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            bound: HashMap::new(),
            mode,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn is_training(&self) -> bool {
        self.mode.is_training()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant leaf; never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Bind a stored parameter. Binding the same id twice returns the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = self.store.get(id);
        let mut value = p.tensor().clone();
        value.clear_grad();
        let v = self.push(value, Op::Param(id), p.trainable());
        self.bound.insert(id, v);
        v
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        match s.len() {
            2 => Ok((s[0], s[1])),
            1 => Ok((1, s[0])),
            _ => Err(TensorError::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        mm(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` for `a: M×K`, `b: N×K`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_t")?;
        let (n, k2) = self.dims2(b, "matmul_t")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul_t",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        mm_bt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMulT(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let t = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    /// Adds a length-N vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(b).numel() != n {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bd = self.value(b).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % n])
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(t, Op::AddRow(x, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let t = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let t = Tensor::new(self.shape(x), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Scale(x, c), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(self.shape(x), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Tanh(x), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| gelu(v)).collect();
        let t = Tensor::new(self.shape(x), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Gelu(x), ng)
    }

    /// Numerically stabilized softmax along `axis`.
    ///
    /// `mask` is either one flag per element or one flag per position along
    /// `axis` (broadcast). Masked entries come out exactly zero.
    pub fn softmax(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArgument(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let numel = outer * len * inner;
        let full_mask: Option<Vec<bool>> = match mask {
            None => None,
            Some(m) if m.len() == numel => Some(m.to_vec()),
            Some(m) if m.len() == len => {
                let mut fm = vec![false; numel];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            fm[(o * len + l) * inner + i] = m[l];
                        }
                    }
                }
                Some(fm)
            }
            Some(m) => {
                return Err(TensorError::Shape {
                    op: "softmax mask",
                    lhs: shape,
                    rhs: vec![m.len()],
                })
            }
        };
        let src = self.value(x).data();
        let mut out = vec![0.0; numel];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let keep = |l: usize| full_mask.as_ref().map_or(true, |m| m[idx(l)]);
                let mut max = f64::NEG_INFINITY;
                let mut any = false;
                for l in 0..len {
                    if keep(l) {
                        any = true;
                        // f64::max would drop NaN
                        let v = src[idx(l)];
                        max = if max.is_nan() || v.is_nan() { f64::NAN } else { max.max(v) };
                    }
                }
                if !any {
                    return Err(TensorError::DegenerateMask { op: "softmax" });
                }
                let mut z = 0.0;
                for l in 0..len {
                    if keep(l) {
                        let e = (src[idx(l)] - max).exp();
                        out[idx(l)] = e;
                        z += e;
                    }
                }
                for l in 0..len {
                    out[idx(l)] /= z;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            ng,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Transpose(x), ng))
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, h) = self.dims2(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(TensorError::InvalidArgument("gather_rows with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::InvalidArgument(format!(
                "row index {bad} out of range for table with {v} rows"
            )));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            out.extend_from_slice(&src[i * h..(i + 1) * h]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::new(&[ids.len(), h], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_rows")?;
        if len == 0 || start + len > m {
            return Err(TensorError::InvalidArgument(format!(
                "row slice {start}..{} out of range for {m} rows",
                start + len
            )));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&[len, n], data)?,
            Op::SliceRows { x, start },
            ng,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(TensorError::InvalidArgument(format!(
                "column slice {start}..{} out of range for {n} columns",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&[m, len], out)?,
            Op::SliceCols { x, start },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument("concat_rows of nothing".into()));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let n = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, c) = self.dims2(p, "concat_rows")?;
            if c != n {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += m;
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::new(&[rows, n], out)?,
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument("concat_cols of nothing".into()));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let (m, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != m {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::new(&[m, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    /// Inverted dropout in training mode; the identity (same node) otherwise.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let rng = match &mut self.mode {
            Mode::Train(rng) if rate > 0.0 => rng,
            _ => return Ok(x),
        };
        let keep = 1.0 / (1.0 - rate);
        let n = self.nodes[x.0].value.numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        Ok(self.mask_scale(x, mask))
    }

    /// Elementwise product with a constant buffer.
    pub fn mask_scale(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let data = zip_map(self.value(x).data(), &mask, |a, m| a * m);
        let t = Tensor::new(self.shape(x), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::MaskScale { x, mask }, ng)
    }

    /// Normalizes each row of `x`, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let rows = self.value(x).rows();
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; rows * n];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let xh = (row[j] - mean) * is;
                xhat[r * n + j] = xh;
                out[r * n + j] = g[j] * xh + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            Tensor::new(self.shape(x), out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Mean over rows of `-ln clip(probs[r, gold[r]])`.
    pub fn neg_log_pick(&mut self, probs: Var, gold: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(probs, "cross_entropy")?;
        if gold.len() != rows {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: self.shape(probs).to_vec(),
                rhs: vec![gold.len()],
            });
        }
        if let Some(&g) = gold.iter().find(|&&g| g >= cols) {
            return Err(TensorError::InvalidArgument(format!(
                "gold class {g} outside 0..{cols}"
            )));
        }
        let p = self.value(probs).data();
        let mut total = 0.0;
        let mut clipped = Vec::with_capacity(rows);
        for (r, &g) in gold.iter().enumerate() {
            let v = p[r * cols + g];
            let c = v.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            clipped.push(c != v);
            total -= c.ln();
        }
        let ng = self.ng(probs);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            Op::NegLogPick {
                probs,
                gold: gold.to_vec(),
                clipped,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let value = {
            let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
            op.forward(&ins)?
        };
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar node. Gradients of parameters bound in this
    /// graph are returned; parameters that did not influence `loss` get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NonScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads, &mut out);
        }
        for (&id, &v) in &self.bound {
            if self.nodes[v.0].needs_grad {
                let n = self.nodes[v.0].value.numel();
                out.by_param.entry(id).or_insert_with(|| vec![0.0; n]);
            }
        }
        Ok(out)
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let val = |v: Var| &self.nodes[v.0].value;
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Input => {}
            Op::Param(id) => accumulate(out.by_param.entry(*id).or_default(), g),
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                if ng(*a) {
                    let mut da = vec![0.0; m * k];
                    mm_bt(g, val(*b).data(), m, n, k, &mut da);
                    acc(grads, *a, &da);
                }
                if ng(*b) {
                    let mut db = vec![0.0; k * n];
                    mm_at(val(*a).data(), g, m, k, n, &mut db);
                    acc(grads, *b, &db);
                }
            }
            Op::MatMulT(a, b) => {
                // C = A Bᵀ, A: m×k, B: n×k
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).rows();
                if ng(*a) {
                    let mut da = vec![0.0; m * k];
                    mm(g, val(*b).data(), m, n, k, &mut da);
                    acc(grads, *a, &da);
                }
                if ng(*b) {
                    let mut db = vec![0.0; n * k];
                    mm_at(g, val(*a).data(), m, n, k, &mut db);
                    acc(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                if ng(*a) {
                    acc(grads, *a, g);
                }
                if ng(*b) {
                    acc(grads, *b, g);
                }
            }
            Op::AddRow(x, b) => {
                if ng(*x) {
                    acc(grads, *x, g);
                }
                if ng(*b) {
                    let n = val(*b).numel();
                    let mut db = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        db[i % n] += v;
                    }
                    acc(grads, *b, &db);
                }
            }
            Op::Mul(a, b) => {
                if ng(*a) {
                    let d = zip_map(g, val(*b).data(), |x, y| x * y);
                    acc(grads, *a, &d);
                }
                if ng(*b) {
                    let d = zip_map(g, val(*a).data(), |x, y| x * y);
                    acc(grads, *b, &d);
                }
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                acc(grads, *x, &d);
            }
            Op::Tanh(x) => {
                let d = zip_map(g, node.value.data(), |gv, y| gv * (1.0 - y * y));
                acc(grads, *x, &d);
            }
            Op::Gelu(x) => {
                let d = zip_map(g, val(*x).data(), |gv, xv| gv * gelu_grad(xv));
                acc(grads, *x, &d);
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                let mut d = vec![0.0; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..*len).map(|l| y[idx(l)] * g[idx(l)]).sum();
                        for l in 0..*len {
                            d[idx(l)] = y[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
                acc(grads, *x, &d);
            }
            Op::Transpose(x) => {
                let (m, n) = (val(*x).rows(), val(*x).cols());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] = g[j * m + i];
                    }
                }
                acc(grads, *x, &d);
            }
            Op::Gather { table, ids } => {
                let h = val(*table).cols();
                let buf = grads[table.0].get_or_insert_with(|| vec![0.0; val(*table).numel()]);
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..h {
                        buf[i * h + j] += g[r * h + j];
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let n = val(*x).cols();
                let buf = grads[x.0].get_or_insert_with(|| vec![0.0; val(*x).numel()]);
                for (k, v) in g.iter().enumerate() {
                    buf[start * n + k] += v;
                }
            }
            Op::SliceCols { x, start } => {
                let n = val(*x).cols();
                let w = node.value.cols();
                let buf = grads[x.0].get_or_insert_with(|| vec![0.0; val(*x).numel()]);
                for i in 0..node.value.rows() {
                    for j in 0..w {
                        buf[i * n + start + j] += g[i * w + j];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).numel();
                    if ng(p) {
                        acc(grads, p, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let m = node.value.rows();
                let mut col = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if ng(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g[i * total + col..i * total + col + w]);
                        }
                        acc(grads, p, &d);
                    }
                    col += w;
                }
            }
            Op::MaskScale { x, mask } => {
                let d = zip_map(g, mask, |a, b| a * b);
                acc(grads, *x, &d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = val(*x).cols();
                let rows = val(*x).rows();
                let gm = val(*gamma).data();
                if ng(*gamma) || ng(*beta) {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for r in 0..rows {
                        for j in 0..n {
                            dg[j] += g[r * n + j] * xhat[r * n + j];
                            db[j] += g[r * n + j];
                        }
                    }
                    if ng(*gamma) {
                        acc(grads, *gamma, &dg);
                    }
                    if ng(*beta) {
                        acc(grads, *beta, &db);
                    }
                }
                if ng(*x) {
                    let mut dx = vec![0.0; rows * n];
                    let nf = n as f64;
                    for r in 0..rows {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dxh = g[r * n + j] * gm[j];
                            s1 += dxh;
                            s2 += dxh * xhat[r * n + j];
                        }
                        for j in 0..n {
                            let dxh = g[r * n + j] * gm[j];
                            dx[r * n + j] =
                                inv_std[r] * (dxh - s1 / nf - xhat[r * n + j] * s2 / nf);
                        }
                    }
                    acc(grads, *x, &dx);
                }
            }
            Op::NegLogPick {
                probs,
                gold,
                clipped,
            } => {
                let p = val(*probs);
                let cols = p.cols();
                let rows = gold.len() as f64;
                let mut d = vec![0.0; p.numel()];
                for (r, (&gc, &c)) in gold.iter().zip(clipped).enumerate() {
                    if !c {
                        d[r * cols + gc] = -g[0] / (rows * p.data()[r * cols + gc]);
                    }
                }
                acc(grads, *probs, &d);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; val(*x).numel()];
                acc(grads, *x, &d);
            }
            Op::Reshape(x) => acc(grads, *x, g),
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let ds = op.backward(&ins, &node.value, g);
                for (&v, d) in inputs.iter().zip(ds) {
                    if ng(v) {
                        acc(grads, v, &d);
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(buf) => accumulate(buf, d),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

fn accumulate(buf: &mut Vec<f64>, d: &[f64]) {
    if buf.is_empty() {
        buf.extend_from_slice(d);
    } else {
        for (b, v) in buf.iter_mut().zip(d) {
            *b += v;
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// `out += a · b` for `a: m×k`, `b: k×n`.
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: m×k`, `b: n×k`.
pub(crate) fn mm_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += aᵀ · b` for `a: m×k`, `b: m×n`, giving `k×n`.
pub(crate) fn mm_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
