//! Define-by-run reverse-mode differentiation over dense `f64` arrays.
//!
//! Every operation is evaluated eagerly when it is recorded on a [`Tape`];
//! [`Tape::backward`] then replays the recorded nodes in reverse insertion
//! order, accumulating vector-Jacobian products. Node inputs always refer to
//! earlier nodes, so the graph is acyclic by construction.
//!
//! Sorting never appears as a primitive. Callers compute a permutation
//! outside the tape and apply it with [`Tape::gather`], which treats the
//! permutation as locally constant.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of bounds for {len} elements")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// A dense row-major array of finite `f64` values.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(GraphError::DataLength {
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::NonFinite { op: "tensor" });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Mutable access for optimizers. The caller is responsible for keeping
    /// entries finite.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn from_raw(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::NonFinite { op });
        }
        Ok(Self { shape, data })
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Pow(Var, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Gather(Var, Vec<usize>),
    /// Sparse linear map: `out[o] += w * in[i]` for every `(o, i, w)`.
    WeightedGather(Var, Vec<(usize, usize, f64)>),
    Concat(Vec<Var>),
    Broadcast(Var),
    Reshape(Var),
    StopGradient,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of eagerly evaluated operations.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when `var` does not influence the root.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(&shape),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(GraphError::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [r, c] => Ok((*r, *c)),
        _ => Err(GraphError::Invalid {
            op,
            msg: format!("expected a 2-d tensor, got shape {:?}", t.shape),
        }),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Maps every flat index of `target` to the flat index of `source` it reads
/// from under right-aligned broadcasting.
fn broadcast_index_map(source: &[usize], target: &[usize]) -> Vec<usize> {
    let n: usize = target.iter().product();
    let offset = target.len() - source.len();
    let mut src_strides = vec![0usize; target.len()];
    let mut stride = 1;
    for (ax, &extent) in source.iter().enumerate().rev() {
        src_strides[ax + offset] = if extent == 1 { 0 } else { stride };
        stride *= extent;
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; target.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for ax in (0..target.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < target[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].value.shape
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(op, x, y)?;
        let data = x.data.iter().zip(&y.data).map(|(&u, &v)| f(u, v)).collect();
        Tensor::from_raw(op, x.shape.clone(), data)
    }

    fn unary(&mut self, op: &'static str, a: Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let x = self.value(a);
        let data = x.data.iter().map(|&u| f(u)).collect();
        Tensor::from_raw(op, x.shape.clone(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let v = self.unary("neg", a, |x| -x)?;
        Ok(self.push(Op::Neg(a), v))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.unary("scale", a, |x| c * x)?;
        Ok(self.push(Op::Scale(a, c), v))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.unary("relu", a, |x| x.max(0.0))?;
        Ok(self.push(Op::Relu(a), v))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.unary("exp", a, f64::exp)?;
        Ok(self.push(Op::Exp(a), v))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.unary("log", a, f64::ln)?;
        Ok(self.push(Op::Log(a), v))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.unary("abs", a, f64::abs)?;
        Ok(self.push(Op::Abs(a), v))
    }

    /// Elementwise `x^e`. Negative bases with a fractional exponent fail
    /// with [`GraphError::NonFinite`].
    pub fn pow(&mut self, a: Var, e: f64) -> Result<Var> {
        let v = self.unary("pow", a, |x| x.powf(e))?;
        Ok(self.push(Op::Pow(a, e), v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul", x)?;
        let (k2, n) = matrix_dims("matmul", y)?;
        if k != k2 {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                lhs: x.shape.clone(),
                rhs: y.shape.clone(),
            });
        }
        let data = matmul_raw(&x.data, &y.data, m, k, n);
        let v = Tensor::from_raw("matmul", vec![m, n], data)?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = matrix_dims("transpose", x)?;
        let v = Tensor {
            shape: vec![c, r],
            data: transpose_raw(&x.data, r, c),
        };
        Ok(self.push(Op::Transpose(a), v))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().sum();
        let v = Tensor::from_raw("sum", vec![], vec![s])?;
        Ok(self.push(Op::Sum(a), v))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.data.is_empty() {
            return Err(GraphError::Invalid {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let s = x.data.iter().sum::<f64>() / x.data.len() as f64;
        let v = Tensor::from_raw("mean", vec![], vec![s])?;
        Ok(self.push(Op::Mean(a), v))
    }

    /// Row sums of an `m × n` matrix, giving a length-`m` vector.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = matrix_dims("sum_rows", x)?;
        let data = (0..m)
            .map(|i| x.data[i * n..(i + 1) * n].iter().sum())
            .collect();
        let v = Tensor::from_raw("sum_rows", vec![m], data)?;
        Ok(self.push(Op::SumRows(a), v))
    }

    /// Picks flat entries of `a` by index; the result has shape `shape`.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != indices.len() {
            return Err(GraphError::DataLength {
                shape,
                len: indices.len(),
            });
        }
        let mut data = Vec::with_capacity(indices.len());
        for &i in &indices {
            let v = *x.data.get(i).ok_or(GraphError::IndexOutOfBounds {
                op: "gather",
                index: i,
                len: x.data.len(),
            })?;
            data.push(v);
        }
        let v = Tensor { shape, data };
        Ok(self.push(Op::Gather(a, indices), v))
    }

    /// Sparse linear map of the flat entries of `a`: for every
    /// `(out, src, w)`, adds `w * a[src]` to `out`. Entries are accumulated
    /// in the order given.
    pub fn weighted_gather(
        &mut self,
        a: Var,
        entries: Vec<(usize, usize, f64)>,
        shape: Vec<usize>,
    ) -> Result<Var> {
        let x = self.value(a);
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        for &(o, i, w) in &entries {
            if i >= x.data.len() {
                return Err(GraphError::IndexOutOfBounds {
                    op: "weighted_gather",
                    index: i,
                    len: x.data.len(),
                });
            }
            if o >= n {
                return Err(GraphError::IndexOutOfBounds {
                    op: "weighted_gather",
                    index: o,
                    len: n,
                });
            }
            data[o] += w * x.data[i];
        }
        let v = Tensor::from_raw("weighted_gather", shape, data)?;
        Ok(self.push(Op::WeightedGather(a, entries), v))
    }

    /// Concatenation along the leading axis; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(GraphError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let head = self.value(*first);
        if head.ndim() == 0 {
            return Err(GraphError::Invalid {
                op: "concat",
                msg: "cannot concatenate scalars".into(),
            });
        }
        let trailing = head.shape[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.ndim() == 0 || t.shape[1..] != trailing[..] {
                return Err(GraphError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(*first).shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            lead += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![lead];
        shape.extend(trailing);
        let v = Tensor { shape, data };
        Ok(self.push(Op::Concat(parts.to_vec()), v))
    }

    /// Right-aligned broadcasting of `a` to `shape`; source extents must be
    /// equal to the target's or 1.
    pub fn broadcast(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        let compatible = x.ndim() <= shape.len()
            && x.shape
                .iter()
                .rev()
                .zip(shape.iter().rev())
                .all(|(&s, &t)| s == t || s == 1);
        if !compatible {
            return Err(GraphError::ShapeMismatch {
                op: "broadcast",
                lhs: x.shape.clone(),
                rhs: shape,
            });
        }
        let map = broadcast_index_map(&x.shape, &shape);
        let data = map.iter().map(|&i| x.data[i]).collect();
        let v = Tensor { shape, data };
        Ok(self.push(Op::Broadcast(a), v))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.len() {
            return Err(GraphError::ShapeMismatch {
                op: "reshape",
                lhs: x.shape.clone(),
                rhs: shape,
            });
        }
        let v = Tensor {
            shape,
            data: x.data.clone(),
        };
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Identity in the forward pass; blocks all gradient flow to `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(Op::StopGradient, v)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 || root_value.ndim() > 1 {
            return Err(GraphError::NonScalarRoot(root_value.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
        })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value.data;
        match op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.iter().copied());
                accumulate(grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.iter().copied());
                accumulate(grads, *b, g.iter().map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                accumulate(grads, *a, g.iter().zip(y).map(|(g, y)| g * y));
                accumulate(grads, *b, g.iter().zip(x).map(|(g, x)| g * x));
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                accumulate(grads, *a, g.iter().zip(y).map(|(g, y)| g / y));
                accumulate(
                    grads,
                    *b,
                    g.iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (x, y))| -g * x / (y * y)),
                );
            }
            Op::Neg(a) => accumulate(grads, *a, g.iter().map(|x| -x)),
            Op::Scale(a, c) => accumulate(grads, *a, g.iter().map(|x| c * x)),
            Op::MatMul(a, b) => {
                let xs = &self.nodes[a.0].value;
                let ys = &self.nodes[b.0].value;
                let (m, k) = (xs.shape[0], xs.shape[1]);
                let n = ys.shape[1];
                // dA = G Bᵀ, dB = Aᵀ G
                let bt = transpose_raw(&ys.data, k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                let at = transpose_raw(&xs.data, m, k);
                let db = matmul_raw(&at, g, k, m, n);
                accumulate(grads, *a, da.into_iter());
                accumulate(grads, *b, db.into_iter());
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape[0], out.shape[1]);
                accumulate(grads, *a, transpose_raw(g, r, c).into_iter());
            }
            Op::Relu(a) => {
                let x = val(*a);
                accumulate(
                    grads,
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }),
                );
            }
            Op::Exp(a) => accumulate(grads, *a, g.iter().zip(&out.data).map(|(g, y)| g * y)),
            Op::Log(a) => accumulate(grads, *a, g.iter().zip(val(*a)).map(|(g, x)| g / x)),
            Op::Abs(a) => {
                let x = val(*a);
                accumulate(
                    grads,
                    *a,
                    g.iter().zip(x).map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Pow(a, e) => {
                let x = val(*a);
                accumulate(
                    grads,
                    *a,
                    g.iter().zip(x).map(|(g, &x)| {
                        if *e == 0.0 {
                            0.0
                        } else if x == 0.0 && *e < 1.0 {
                            // derivative unbounded at the origin
                            0.0
                        } else {
                            g * e * x.powf(e - 1.0)
                        }
                    }),
                );
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                accumulate(grads, *a, std::iter::repeat_n(g[0], n));
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let s = g[0] / n as f64;
                accumulate(grads, *a, std::iter::repeat_n(s, n));
            }
            Op::SumRows(a) => {
                let n = self.nodes[a.0].value.shape[1];
                accumulate(grads, *a, g.iter().flat_map(|&x| std::iter::repeat_n(x, n)));
            }
            Op::Gather(a, indices) => {
                let mut buf = vec![0.0; val(*a).len()];
                for (gi, &src) in g.iter().zip(indices) {
                    buf[src] += gi;
                }
                accumulate(grads, *a, buf.into_iter());
            }
            Op::WeightedGather(a, entries) => {
                let mut buf = vec![0.0; val(*a).len()];
                for &(o, i, w) in entries {
                    buf[i] += w * g[o];
                }
                accumulate(grads, *a, buf.into_iter());
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    accumulate(grads, *p, g[offset..offset + n].iter().copied());
                    offset += n;
                }
            }
            Op::Broadcast(a) => {
                let src = &self.nodes[a.0].value;
                let map = broadcast_index_map(&src.shape, &out.shape);
                let mut buf = vec![0.0; src.len()];
                for (gi, &i) in g.iter().zip(&map) {
                    buf[i] += gi;
                }
                accumulate(grads, *a, buf.into_iter());
            }
            Op::Reshape(a) => accumulate(grads, *a, g.iter().copied()),
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: Var, contrib: impl Iterator<Item = f64>) {
    match &mut grads[target.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib.collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape, v: &[f64]) -> Var {
        tape.leaf(Tensor::vector(v.to_vec()).unwrap())
    }

    #[test]
    fn add_is_elementwise() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let y = vec_leaf(&mut tape, &[3.0, 4.0]);
        let z = tape.add(x, y).unwrap();
        assert_eq!(tape.value(z).data(), &[4.0, 6.0]);
    }

    #[test]
    fn gather_applies_permutation() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[5.0, 1.0, 3.0]);
        let y = tape.gather(x, vec![1, 2, 0], vec![3]).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let eye = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 2, vec![0.3, -1.5, 2.0, 7.25]).unwrap());
        let c = tape.matmul(eye, b).unwrap();
        assert_eq!(tape.value(c), tape.value(b));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let y = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        match tape.add(x, y) {
            Err(GraphError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Tensor::vector(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::vector(vec![f64::INFINITY]).is_err());
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.0]);
        assert!(matches!(tape.log(x), Err(GraphError::NonFinite { .. })));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0).unwrap());
        let y = tape.leaf(Tensor::scalar(3.0).unwrap());
        let z = tape.mul(x, y).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).item(), Some(3.0));
        assert_eq!(g.get(y).item(), Some(2.0));
    }

    #[test]
    fn mean_relu_gradient_matches_finite_difference() {
        let f = |x: &[f64]| x.iter().map(|v| v.max(0.0)).sum::<f64>() / x.len() as f64;
        let x0 = [-1.0, 2.0];
        let h = 1e-6;
        let mut fd = [0.0; 2];
        for i in 0..2 {
            let (mut up, mut dn) = (x0, x0);
            up[i] += h;
            dn[i] -= h;
            fd[i] = (f(&up) - f(&dn)) / (2.0 * h);
        }
        assert!((fd[0] - 0.0).abs() < 1e-9 && (fd[1] - 0.5).abs() < 1e-9);

        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &x0);
        let r = tape.relu(x).unwrap();
        let m = tape.mean(r).unwrap();
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.5]);
    }

    #[test]
    fn non_scalar_root_is_error() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        assert!(matches!(
            tape.backward(x),
            Err(GraphError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let unused = vec_leaf(&mut tape, &[7.0, 8.0, 9.0]);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn stop_gradient_forward_is_identity() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let y = tape.stop_gradient(x);
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn stop_gradient_detaches_one_factor() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0).unwrap());
        let d = tape.stop_gradient(x);
        let y = tape.mul(x, d).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).item(), Some(3.0));
    }

    #[test]
    fn stop_gradient_full_detachment() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0).unwrap());
        let y = tape.stop_gradient(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).item(), Some(0.0));
    }

    #[test]
    fn gather_gradient_scatters_by_inverse_permutation() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[5.0, 1.0, 3.0, 4.0]);
        let perm = vec![2, 0, 3, 1];
        let y = tape.gather(x, perm.clone(), vec![4]).unwrap();
        let c = vec_leaf(&mut tape, &[10.0, 20.0, 30.0, 40.0]);
        let prod = tape.mul(y, c).unwrap();
        let s = tape.sum(prod).unwrap();
        let g = tape.backward(s).unwrap();
        let mut expected = [0.0; 4];
        for (pos, &src) in perm.iter().enumerate() {
            expected[src] = [10.0, 20.0, 30.0, 40.0][pos];
        }
        assert_eq!(g.get(x).data(), &expected);
    }

    #[test]
    fn broadcast_row_vector_sums_back() {
        let mut tape = Tape::new();
        let b = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        let m = tape.broadcast(b, vec![2, 3]).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn broadcast_column() {
        let mut tape = Tape::new();
        let b = tape.leaf(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let m = tape.broadcast(b, vec![2, 3]).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(tape.broadcast(b, vec![3, 3]).is_err());
    }

    #[test]
    fn concat_stacks_rows() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[3, 2]);
        let bad = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        assert!(tape.concat(&[a, bad]).is_err());
    }
}
