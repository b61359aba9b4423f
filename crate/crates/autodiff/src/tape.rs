//! Operation recording and the reverse sweep.
//!
//! Every primitive appends one node holding its output value and enough saved
//! state to form its adjoint. Nodes are appended in evaluation order, so the
//! node list is already a topological order and the backward pass is a plain
//! reverse iteration.

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

/// Variance floor added inside the batch-normalization square root.
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How batch normalization obtains its statistics.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current rows.
    Train,
    /// Normalize with externally tracked running statistics.
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
    },
}

/// Per-column statistics observed by a training-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance, as used for normalization.
    pub var: Vec<f64>,
    pub count: usize,
}

impl BatchStats {
    /// Exponential moving average update of running statistics. The running
    /// variance tracks the unbiased estimate.
    pub fn update_running(&self, running_mean: &mut [f64], running_var: &mut [f64], momentum: f64) {
        let correction = if self.count > 1 {
            self.count as f64 / (self.count - 1) as f64
        } else {
            1.0
        };
        for (rm, m) in running_mean.iter_mut().zip(&self.mean) {
            *rm = (1.0 - momentum) * *rm + momentum * m;
        }
        for (rv, v) in running_var.iter_mut().zip(&self.var) {
            *rv = (1.0 - momentum) * *rv + momentum * v * correction;
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    PRelu(Var, Var),
    Clamp(Var, f64, f64),
    Softmax {
        input: Var,
        axis: usize,
    },
    SegmentSoftmax {
        input: Var,
        segments: Vec<usize>,
        count: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    ScatterSum {
        input: Var,
        index: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    SumAxis {
        input: Var,
        axis: usize,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward computation. Single use: build, call
/// [`Tape::backward`], drop.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`, or `None` when no path
    /// from a gradient-requiring leaf reaches it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but yields zeros of the right length.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a copy of `t` as a leaf. It takes part in differentiation
    /// only if `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        let value = Tensor::from_parts(t.shape().to_vec(), t.values().to_vec());
        self.push(value, Op::Leaf, rg)
    }

    /// Records an owned tensor as a leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let value = Tensor::from_parts(t.shape().to_vec(), t.into_values());
        self.push(value, Op::Leaf, rg)
    }

    /// Records a non-differentiable constant.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(t, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// `(n×k)·(k×m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = ta.dims2("matmul")?;
        let (k2, m) = tb.dims2("matmul")?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = matmul_raw(ta.values(), tb.values(), n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (n, m) = ta.dims2("transpose")?;
        let out = transpose_raw(ta.values(), n, m);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Transpose(a), rg))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let out = ta.values().iter().zip(tb.values()).map(|(x, y)| f(*x, *y)).collect();
        Ok((Tensor::from_parts(ta.shape().to_vec(), out), self.rg(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`m` row vector to every row of an `n×m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (n, m) = ta.dims2("add_row")?;
        if tr.numel() != m || tr.rank() > 2 || (tr.rank() == 2 && tr.shape()[0] != 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let mut out = ta.values().to_vec();
        for i in 0..n {
            for (o, r) in out[i * m..(i + 1) * m].iter_mut().zip(tr.values()) {
                *o += r;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::AddRow(a, row), rg))
    }

    /// Scales row `i` of an `n×m` matrix by `w[i]`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ta, tw) = (self.value(a), self.value(w));
        let (n, m) = ta.dims2("mul_col")?;
        if tw.numel() != n || tw.rank() > 2 || (tw.rank() == 2 && tw.shape()[1] != 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_col",
                lhs: ta.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let mut out = ta.values().to_vec();
        for (i, s) in tw.values().iter().enumerate() {
            out[i * m..(i + 1) * m].iter_mut().for_each(|o| *o *= s);
        }
        let rg = self.rg(&[a, w]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::MulCol(a, w), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let out = ta.values().iter().map(|x| f(*x)).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Natural logarithm. Non-positive inputs produce NaN or -inf like `f64::ln`.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `ln(1 + e^x)` in the overflow-free form `max(x,0) + ln(1 + e^{-|x|})`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Parametric rectifier with a single shared slope (a one-element tensor).
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        let ts = self.value(slope);
        if ts.numel() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "prelu",
                lhs: self.shape(a).to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        let s = ts.item();
        let ta = self.value(a);
        let out = ta
            .values()
            .iter()
            .map(|&x| if x > 0.0 { x } else { s * x })
            .collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(&[a, slope]);
        Ok(self.push(t, Op::PRelu(a, slope), rg))
    }

    /// Clamps into `[lo, hi]`; the adjoint is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Softmax along `axis` of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let (rows, cols) = match ta.shape() {
            [n] if axis == 0 => (1, *n),
            [n, m] if axis < 2 => (*n, *m),
            _ => {
                return Err(AutodiffError::BadAxis {
                    op: "softmax",
                    axis,
                    shape: ta.shape().to_vec(),
                })
            }
        };
        let extent = if ta.rank() == 2 && axis == 0 { rows } else { cols };
        if extent == 0 {
            return Err(AutodiffError::EmptyAxis {
                op: "softmax",
                shape: ta.shape().to_vec(),
            });
        }
        let vals = ta.values();
        let mut out = vec![0.0; vals.len()];
        // Each lane is a strided run of `extent` elements.
        let (lanes, stride, lane_step) = if ta.rank() == 2 && axis == 0 {
            (cols, cols, 1)
        } else {
            (rows, 1, cols)
        };
        for lane in 0..lanes {
            let base = lane * lane_step;
            let idx = |t: usize| base + t * stride;
            let max = (0..extent).map(|t| vals[idx(t)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for t in 0..extent {
                let e = (vals[idx(t)] - max).exp();
                out[idx(t)] = e;
                total += e;
            }
            for t in 0..extent {
                out[idx(t)] /= total;
            }
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Softmax { input: a, axis }, rg))
    }

    /// Softmax computed independently within each segment of a vector;
    /// `segments[i]` names the segment of element `i`.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize], count: usize) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.numel();
        let vector_like = ta.rank() == 1 || (ta.rank() == 2 && ta.shape()[1] == 1);
        if !vector_like || segments.len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "segment_softmax",
                lhs: ta.shape().to_vec(),
                rhs: vec![segments.len()],
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= count) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "segment_softmax",
                index: bad,
                len: count,
            });
        }
        let vals = ta.values();
        let mut max = vec![f64::NEG_INFINITY; count];
        for (v, &s) in vals.iter().zip(segments) {
            max[s] = max[s].max(*v);
        }
        let mut total = vec![0.0; count];
        let mut out: Vec<f64> = vals
            .iter()
            .zip(segments)
            .map(|(v, &s)| {
                let e = (v - max[s]).exp();
                total[s] += e;
                e
            })
            .collect();
        for (o, &s) in out.iter_mut().zip(segments) {
            *o /= total[s];
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        Ok(self.push(
            t,
            Op::SegmentSoftmax {
                input: a,
                segments: segments.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Column-wise batch normalization of an `n×m` matrix with affine
    /// parameters `gamma`, `beta` of length `m`. Training mode also returns
    /// the observed statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let tx = self.value(x);
        let (n, m) = tx.dims2("batch_norm")?;
        for p in [gamma, beta] {
            if self.value(p).numel() != m {
                return Err(AutodiffError::ShapeMismatch {
                    op: "batch_norm",
                    lhs: tx.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let vals = tx.values();
        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                if n == 0 {
                    return Err(AutodiffError::EmptyAxis {
                        op: "batch_norm",
                        shape: tx.shape().to_vec(),
                    });
                }
                let mut mean = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        mean[j] += vals[i * m + j];
                    }
                }
                mean.iter_mut().for_each(|v| *v /= n as f64);
                let mut var = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        let d = vals[i * m + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var, true)
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != m || running_var.len() != m {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "batch_norm",
                        lhs: tx.shape().to_vec(),
                        rhs: vec![running_mean.len(), running_var.len()],
                    });
                }
                (running_mean.to_vec(), running_var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let g = self.value(gamma).values();
        let b = self.value(beta).values();
        let mut normalized = vec![0.0; n * m];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let xh = (vals[i * m + j] - mean[j]) * inv_std[j];
                normalized[i * m + j] = xh;
                out[i * m + j] = g[j] * xh + b[j];
            }
        }
        let stats = train.then(|| BatchStats {
            mean,
            var,
            count: n,
        });
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            Tensor::from_parts(vec![n, m], out),
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                normalized,
                inv_std,
                train,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// Concatenates along `axis` (0 = rows, 1 = columns). Rank-1 inputs
    /// concatenate along axis 0 only.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(AutodiffError::EmptyAxis {
            op: "concat",
            shape: Vec::new(),
        })?;
        let shape0 = self.shape(first).to_vec();
        let rank = shape0.len();
        if !(rank == 1 && axis == 0 || rank == 2 && axis < 2) {
            return Err(AutodiffError::BadAxis {
                op: "concat",
                axis,
                shape: shape0,
            });
        }
        for &v in &inputs[1..] {
            let s = self.shape(v);
            let ok = s.len() == rank && (0..rank).all(|d| d == axis || s[d] == shape0[d]);
            if !ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: shape0,
                    rhs: s.to_vec(),
                });
            }
        }
        let (shape, out) = if axis == 0 {
            let mut out = Vec::new();
            for &v in inputs {
                out.extend_from_slice(self.value(v).values());
            }
            let mut shape = shape0.clone();
            shape[0] = inputs.iter().map(|&v| self.shape(v)[0]).sum();
            (shape, out)
        } else {
            let n = shape0[0];
            let widths: Vec<usize> = inputs.iter().map(|&v| self.shape(v)[1]).collect();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(n * total);
            for i in 0..n {
                for (&v, &w) in inputs.iter().zip(&widths) {
                    out.extend_from_slice(&self.value(v).values()[i * w..(i + 1) * w]);
                }
            }
            (vec![n, total], out)
        };
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Columns `start..start+len` of an `n×m` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, m) = ta.dims2("slice_cols")?;
        if start + len > m {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                len: m,
            });
        }
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&ta.values()[i * m + start..i * m + start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![n, len], out), Op::SliceCols { input: a, start }, rg))
    }

    /// Selects rows (or elements of a vector) by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (rows, width) = row_layout(ta, "gather_rows")?;
        let mut out = Vec::with_capacity(index.len() * width);
        for &i in index {
            if i >= rows {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(&ta.values()[i * width..(i + 1) * width]);
        }
        let mut shape = ta.shape().to_vec();
        shape[0] = index.len();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::GatherRows {
                input: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Sums row `i` of `a` into row `index[i]` of a zero tensor with `size` rows.
    pub fn scatter_sum(&mut self, a: Var, index: &[usize], size: usize) -> Result<Var> {
        let ta = self.value(a);
        let (rows, width) = row_layout(ta, "scatter_sum")?;
        if index.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_sum",
                lhs: ta.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut out = vec![0.0; size * width];
        for (r, &i) in index.iter().enumerate() {
            if i >= size {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "scatter_sum",
                    index: i,
                    len: size,
                });
            }
            for (o, v) in out[i * width..(i + 1) * width]
                .iter_mut()
                .zip(&ta.values()[r * width..(r + 1) * width])
            {
                *o += v;
            }
        }
        let mut shape = ta.shape().to_vec();
        shape[0] = size;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::ScatterSum {
                input: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).values().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(Vec::new(), vec![total]), Op::Sum(a), rg)
    }

    /// Mean of all elements (rank-0 result).
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.numel() == 0 {
            return Err(AutodiffError::EmptyAxis {
                op: "mean",
                shape: ta.shape().to_vec(),
            });
        }
        let m = ta.values().iter().sum::<f64>() / ta.numel() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(Vec::new(), vec![m]), Op::Mean(a), rg))
    }

    /// Sums an `n×m` matrix over `axis`, giving a vector of length `m`
    /// (axis 0) or `n` (axis 1).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, m) = ta.dims2("sum_axis")?;
        let vals = ta.values();
        let out = match axis {
            0 => (0..m).map(|j| (0..n).map(|i| vals[i * m + j]).sum()).collect::<Vec<f64>>(),
            1 => (0..n).map(|i| vals[i * m..(i + 1) * m].iter().sum()).collect(),
            _ => {
                return Err(AutodiffError::BadAxis {
                    op: "sum_axis",
                    axis,
                    shape: ta.shape().to_vec(),
                })
            }
        };
        let len = out.len();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![len], out), Op::SumAxis { input: a, axis }, rg))
    }

    /// Mean of an `n×m` matrix over `axis`.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (n, m) = self.value(a).dims2("mean_axis")?;
        let extent = if axis == 0 { n } else { m };
        if extent == 0 {
            return Err(AutodiffError::EmptyAxis {
                op: "mean_axis",
                shape: vec![n, m],
            });
        }
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / extent as f64))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let t = Tensor::from_parts(shape.to_vec(), ta.values().to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// `x·W + b` for an `n×d_in` input, `d_in×d_out` weight and optional bias.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Reverse sweep from a scalar root. Leaves that do not require
    /// gradients get no entry; a root with no differentiable ancestry yields
    /// an all-empty result.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownVar(root.0));
        }
        let rv = &self.nodes[root.0].value;
        if rv.numel() != 1 {
            return Err(AutodiffError::NonScalarRoot {
                shape: rv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.values();
        let val = |v: Var| self.nodes[v.0].value.values();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, delta: Vec<f64>| accumulate(grads, v, delta);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                if wants(*a) {
                    let bt = transpose_raw(val(*b), k, m);
                    acc(*a, matmul_raw(g, &bt, n, m, k));
                }
                if wants(*b) {
                    let at = transpose_raw(val(*a), n, k);
                    acc(*b, matmul_raw(&at, g, k, n, m));
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (self.shape(*a)[0], self.shape(*a)[1]);
                acc(*a, transpose_raw(g, m, n));
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(*a, g.to_vec());
                }
                if wants(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(*a, g.to_vec());
                }
                if wants(*b) {
                    acc(*b, g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(*a, g.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    acc(*a, g.to_vec());
                }
                if wants(*row) {
                    let m = self.value(*row).numel();
                    let mut d = vec![0.0; m];
                    for chunk in g.chunks(m) {
                        d.iter_mut().zip(chunk).for_each(|(d, c)| *d += c);
                    }
                    acc(*row, d);
                }
            }
            Op::MulCol(a, w) => {
                let m = self.shape(*a)[1];
                let wv = val(*w);
                if wants(*a) {
                    let mut d = g.to_vec();
                    for (i, s) in wv.iter().enumerate() {
                        d[i * m..(i + 1) * m].iter_mut().for_each(|x| *x *= s);
                    }
                    acc(*a, d);
                }
                if wants(*w) {
                    let av = val(*a);
                    let d = (0..wv.len())
                        .map(|i| (0..m).map(|j| g[i * m + j] * av[i * m + j]).sum())
                        .collect();
                    acc(*w, d);
                }
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|x| c * x).collect()),
            Op::AddScalar(a) => acc(*a, g.to_vec()),
            Op::Sigmoid(a) => acc(*a, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect()),
            Op::Tanh(a) => acc(*a, g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::Exp(a) => acc(*a, g.iter().zip(out).map(|(g, y)| g * y).collect()),
            Op::Log(a) => acc(*a, g.iter().zip(val(*a)).map(|(g, x)| g / x).collect()),
            Op::Square(a) => acc(*a, g.iter().zip(val(*a)).map(|(g, x)| 2.0 * g * x).collect()),
            Op::Softplus(a) => acc(*a, g.iter().zip(val(*a)).map(|(g, x)| g * sigmoid(*x)).collect()),
            Op::PRelu(a, slope) => {
                let s = val(*slope)[0];
                let av = val(*a);
                if wants(*a) {
                    acc(*a, g.iter().zip(av).map(|(g, &x)| if x > 0.0 { *g } else { s * g }).collect());
                }
                if wants(*slope) {
                    let d: f64 = g.iter().zip(av).filter(|(_, &x)| x <= 0.0).map(|(g, x)| g * x).sum();
                    acc(*slope, vec![d]);
                }
            }
            Op::Clamp(a, lo, hi) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x < *lo || x > *hi { 0.0 } else { *g })
                    .collect();
                acc(*a, d);
            }
            Op::Softmax { input, axis } => {
                let shape = self.shape(*input);
                let (rows, cols) = if shape.len() == 1 { (1, shape[0]) } else { (shape[0], shape[1]) };
                let (lanes, stride, lane_step, extent) = if shape.len() == 2 && *axis == 0 {
                    (cols, cols, 1, rows)
                } else {
                    (rows, 1, cols, cols)
                };
                let mut d = vec![0.0; out.len()];
                for lane in 0..lanes {
                    let base = lane * lane_step;
                    let dot: f64 = (0..extent).map(|t| g[base + t * stride] * out[base + t * stride]).sum();
                    for t in 0..extent {
                        let i = base + t * stride;
                        d[i] = out[i] * (g[i] - dot);
                    }
                }
                acc(*input, d);
            }
            Op::SegmentSoftmax {
                input,
                segments,
                count,
            } => {
                let mut dot = vec![0.0; *count];
                for ((g, y), &s) in g.iter().zip(out).zip(segments) {
                    dot[s] += g * y;
                }
                let d = g
                    .iter()
                    .zip(out)
                    .zip(segments)
                    .map(|((g, y), &s)| y * (g - dot[s]))
                    .collect();
                acc(*input, d);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                train,
            } => {
                let m = inv_std.len();
                let n = if m == 0 { 0 } else { normalized.len() / m };
                let gv = val(*gamma);
                let mut sum_g = vec![0.0; m];
                let mut sum_gx = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        sum_g[j] += g[i * m + j];
                        sum_gx[j] += g[i * m + j] * normalized[i * m + j];
                    }
                }
                if wants(*input) {
                    let mut d = vec![0.0; n * m];
                    for i in 0..n {
                        for j in 0..m {
                            let k = i * m + j;
                            d[k] = if *train {
                                gv[j] * inv_std[j] / n as f64
                                    * (n as f64 * g[k] - sum_g[j] - normalized[k] * sum_gx[j])
                            } else {
                                gv[j] * inv_std[j] * g[k]
                            };
                        }
                    }
                    acc(*input, d);
                }
                if wants(*gamma) {
                    acc(*gamma, sum_gx);
                }
                if wants(*beta) {
                    acc(*beta, sum_g);
                }
            }
            Op::Concat { inputs, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &v in inputs {
                        let len = self.value(v).numel();
                        if wants(v) {
                            acc(v, g[offset..offset + len].to_vec());
                        }
                        offset += len;
                    }
                } else {
                    let n = self.shape(inputs[0])[0];
                    let total: usize = inputs.iter().map(|&v| self.shape(v)[1]).sum();
                    let mut start = 0;
                    for &v in inputs {
                        let w = self.shape(v)[1];
                        if wants(v) {
                            let mut d = Vec::with_capacity(n * w);
                            for i in 0..n {
                                d.extend_from_slice(&g[i * total + start..i * total + start + w]);
                            }
                            acc(v, d);
                        }
                        start += w;
                    }
                }
            }
            Op::SliceCols { input, start } => {
                let (n, m) = (self.shape(*input)[0], self.shape(*input)[1]);
                let len = node.value.shape()[1];
                let mut d = vec![0.0; n * m];
                for i in 0..n {
                    d[i * m + start..i * m + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                acc(*input, d);
            }
            Op::GatherRows { input, index } => {
                let ti = self.value(*input);
                let width = if ti.rank() <= 1 { 1 } else { ti.numel() / ti.shape()[0] };
                let mut d = vec![0.0; ti.numel()];
                for (r, &i) in index.iter().enumerate() {
                    for (dv, gv) in d[i * width..(i + 1) * width].iter_mut().zip(&g[r * width..(r + 1) * width]) {
                        *dv += gv;
                    }
                }
                acc(*input, d);
            }
            Op::ScatterSum { input, index } => {
                let ti = self.value(*input);
                let width = if ti.rank() <= 1 { 1 } else { ti.numel() / ti.shape()[0].max(1) };
                let mut d = Vec::with_capacity(ti.numel());
                for &i in index {
                    d.extend_from_slice(&g[i * width..(i + 1) * width]);
                }
                acc(*input, d);
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.value(*a).numel()]),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                acc(*a, vec![g[0] / n as f64; n]);
            }
            Op::SumAxis { input, axis } => {
                let (n, m) = (self.shape(*input)[0], self.shape(*input)[1]);
                let mut d = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        d[i * m + j] = if *axis == 0 { g[j] } else { g[i] };
                    }
                }
                acc(*input, d);
            }
            Op::Reshape(a) => acc(*a, g.to_vec()),
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
        slot @ None => *slot = Some(delta),
    }
}

fn row_layout(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [] => Err(AutodiffError::Rank {
            op,
            expected: 1,
            shape: Vec::new(),
        }),
        [n] => Ok((*n, 1)),
        [n, rest @ ..] => Ok((*n, rest.iter().product())),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::matrix(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.leaf(&mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.leaf(&mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let y = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(y).values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tape.shape(y), &[2, 2]);
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::zeros(&[2, 3]));
        let b = tape.leaf(&Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn analytic_activation_values() {
        let mut tape = Tape::new();
        let z = tape.leaf(&Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        let t = tape.tanh(z);
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(t).item(), 0.0);
    }

    #[test]
    fn scatter_sum_definition() {
        let mut tape = Tape::new();
        let v = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = tape.scatter_sum(v, &[0, 0, 1], 2).unwrap();
        assert_eq!(tape.value(s).values(), &[3.0, 3.0]);
        assert!(tape.scatter_sum(v, &[0, 0, 2], 2).is_err());
        assert!(tape.scatter_sum(v, &[0, 0], 2).is_err());
    }

    #[test]
    fn softmax_rows_and_columns() {
        let mut tape = Tape::new();
        let a = tape.leaf(&mat(&[&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]]));
        let r = tape.softmax(a, 1).unwrap();
        let rv = tape.value(r).values().to_vec();
        assert!((rv[0] + rv[1] + rv[2] - 1.0).abs() < 1e-12);
        assert!((rv[3] - 1.0 / 3.0).abs() < 1e-12);
        let c = tape.softmax(a, 0).unwrap();
        let cv = tape.value(c).values().to_vec();
        for j in 0..3 {
            assert!((cv[j] + cv[3 + j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_over_empty_axis_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::zeros(&[2, 0]));
        assert!(matches!(tape.softmax(a, 1), Err(AutodiffError::EmptyAxis { .. })));
        let v = tape.leaf(&Tensor::zeros(&[0]));
        assert!(matches!(tape.softmax(v, 0), Err(AutodiffError::EmptyAxis { .. })));
        assert!(matches!(tape.softmax(v, 1), Err(AutodiffError::BadAxis { .. })));
    }

    #[test]
    fn segment_softmax_normalizes_per_segment() {
        let mut tape = Tape::new();
        let v = tape.leaf(&Tensor::vector(vec![1.0, 1.0, 5.0, 0.0, 2.0]));
        let s = tape.segment_softmax(v, &[0, 0, 1, 1, 1], 2).unwrap();
        let out = tape.value(s).values();
        assert!((out[0] - 0.5).abs() < 1e-12 && (out[1] - 0.5).abs() < 1e-12);
        assert!((out[2] + out[3] + out[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prelu_negative_side() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![-1.0, 2.0]));
        let a = tape.leaf(&Tensor::vector(vec![0.25]));
        let y = tape.prelu(x, a).unwrap();
        assert_eq!(tape.value(y).values(), &[-0.25, 2.0]);
    }

    #[test]
    fn softplus_is_overflow_free() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![800.0, -800.0, 0.0]));
        let y = tape.softplus(x);
        let v = tape.value(y).values();
        assert_eq!(v[0], 800.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = sum(x * x) built from two uses of x.
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, -2.0, 3.0]).with_requires_grad(true));
        let p = tape.mul(x, x).unwrap();
        let y = tape.sum(p);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_without_trainable_leaves_is_noop() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let y = tape.sum(x);
        let g = tape.backward(y).unwrap();
        assert!(g.get(x).is_none());
        assert!(g.get(y).is_none());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarRoot { .. })));
    }

    #[test]
    fn batch_norm_eval_identity_stats() {
        let mut tape = Tape::new();
        let x = tape.leaf(&mat(&[&[-1.0, 2.0]]));
        let g = tape.leaf(&Tensor::vector(vec![1.0, 1.0]));
        let b = tape.leaf(&Tensor::vector(vec![0.0, 0.0]));
        let (y, stats) = tape
            .batch_norm(
                x,
                g,
                b,
                BatchNormMode::Eval {
                    running_mean: &[0.0, 0.0],
                    running_var: &[1.0, 1.0],
                },
            )
            .unwrap();
        assert!(stats.is_none());
        let v = tape.value(y).values();
        let scale = 1.0 / (1.0 + BATCH_NORM_EPS).sqrt();
        assert!((v[0] + scale).abs() < 1e-15 && (v[1] - 2.0 * scale).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_train_reports_stats() {
        let mut tape = Tape::new();
        let x = tape.leaf(&mat(&[&[1.0], &[3.0]]));
        let g = tape.leaf(&Tensor::vector(vec![1.0]));
        let b = tape.leaf(&Tensor::vector(vec![0.0]));
        let (y, stats) = tape.batch_norm(x, g, b, BatchNormMode::Train).unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);
        let v = tape.value(y).values();
        assert!((v[0] + v[1]).abs() < 1e-12);
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        stats.update_running(&mut rm, &mut rv, 0.1);
        assert!((rm[0] - 0.2).abs() < 1e-12);
        // unbiased variance of {1,3} is 2
        assert!((rv[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.leaf(&mat(&[&[1.0], &[2.0]]));
        let b = tape.leaf(&mat(&[&[3.0, 4.0], &[5.0, 6.0]]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).values(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = tape.slice_cols(c, 1, 2).unwrap();
        assert_eq!(tape.value(s).values(), tape.value(b).values());
        let r = tape.concat(&[b, b], 0).unwrap();
        assert_eq!(tape.shape(r), &[4, 2]);
        assert!(tape.concat(&[a, b], 0).is_err());
    }
}
