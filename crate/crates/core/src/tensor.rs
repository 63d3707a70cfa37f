//! Dense f64 tensors and a tape for reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each op appends a node that
//! refers only to earlier nodes, so the node index order is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! ```
//! use dsrelu::tensor::{Graph, Mode, Tensor};
//!
//! let mut g = Graph::new(Mode::Training);
//! let w = g.param(Tensor::from_vec(vec![1.0, -2.0]));
//! let sq = g.mul(w, w).unwrap();
//! let loss = g.sum(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(w).unwrap(), &[2.0, -4.0]);
//! ```

use crate::activations::Activation;
use crate::{Error, Result};

/// Row-major n-dimensional array of finite f64 values.
///
/// A rank-0 tensor (empty shape) holds a single scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor construction (index {i})")));
        }
        Ok(Tensor { shape, data })
    }

    /// One-dimensional tensor.
    ///
    /// # Panics
    ///
    /// Panics if `data` is empty or holds a non-finite value; use
    /// [`Tensor::new`] for fallible construction.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor::new(vec![data.len()], data).expect("from_vec requires finite, non-empty data")
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    fn full(shape: &[usize], v: f64) -> Self {
        assert!(!shape.contains(&0), "zero extent in {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Rows `rows` of the leading axis, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let lead = *self
            .shape
            .first()
            .ok_or_else(|| Error::shape("select_rows", "rank-0 tensor"))?;
        if rows.is_empty() {
            return Err(Error::shape("select_rows", "no rows selected"));
        }
        let stride = self.data.len() / lead;
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            if r >= lead {
                return Err(Error::shape(
                    "select_rows",
                    format!("row {r} out of range for {lead}"),
                ));
            }
            data.extend_from_slice(&self.data[r * stride..(r + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Tensor { shape, data })
    }
}

/// Whether the tape is being built for training (backward allowed) or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Training,
    Inference,
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Conv2d {
        input: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        floor: bool,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Maximum(usize, usize),
    Sum(usize),
    Mean(usize),
    SumAxis {
        input: usize,
        axis: usize,
    },
    MeanAxis {
        input: usize,
        axis: usize,
    },
    MaxAxis {
        input: usize,
        argmax: Vec<usize>,
    },
    AddRowBias(usize, usize),
    AddChannelBias(usize, usize),
    Activate {
        input: usize,
        act: Activation,
    },
    Reshape(usize),
    GlobalAvgPool(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Conv2d { .. } => "conv2d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Tanh(_) => "tanh",
            Op::Maximum(..) => "maximum",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::MeanAxis { .. } => "mean_axis",
            Op::MaxAxis { .. } => "max_axis",
            Op::AddRowBias(..) => "add_row_bias",
            Op::AddChannelBias(..) => "add_channel_bias",
            Op::Activate { .. } => "activate",
            Op::Reshape(_) => "reshape",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of the operations of one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    mode: Mode,
}

/// Splits `shape` around `axis` into (outer, axis extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .filter_map(|(i, &d)| (i != axis).then_some(d))
        .collect()
}

/// Output extent of a strided, padded window; `None` when not integral.
pub fn conv_out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < kernel || (padded - kernel) % stride != 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent when trailing positions that do not fill a window are dropped.
pub fn conv_out_extent_floor(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    /// Input row / column for an output position and kernel tap, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant: no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    /// A trainable leaf whose gradient is populated by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = self.inputs_of(&op).iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts_unchecked(shape, data),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op) -> Vec<usize> {
        match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Maximum(a, b)
            | Op::AddRowBias(a, b)
            | Op::AddChannelBias(a, b) => vec![a, b],
            Op::Conv2d { input, kernel, .. } => vec![input, kernel],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::GlobalAvgPool(a) => vec![a],
            Op::SumAxis { input, .. }
            | Op::MeanAxis { input, .. }
            | Op::MaxAxis { input, .. }
            | Op::Activate { input, .. } => vec![input],
            Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grad(v)
            .map(|g| Tensor::from_parts_unchecked(self.value(v).shape.clone(), g.to_vec()))
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (&self.val(a).shape, &self.val(b).shape);
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.val(a);
        let data = t.data.iter().map(|&x| f(x)).collect();
        let shape = t.shape.clone();
        self.push(shape, data, op)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.val(a), self.val(b));
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape.clone();
        self.push(shape, data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, f64::max, Op::Maximum(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some((index, &value)) = self.val(a).data.iter().enumerate().find(|(_, &x)| x <= 0.0) {
            return Err(Error::LogDomain { index, value });
        }
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Result<Var> {
        self.unary(a, |x| act.forward(x), Op::Activate { input: a.0, act })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.val(a).data.iter().sum();
        self.push(vec![], vec![s], Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        let m = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(vec![], vec![m], Op::Mean(a.0))
    }

    fn check_axis(&self, a: Var, axis: usize) -> Result<()> {
        let rank = self.val(a).rank();
        if axis >= rank {
            return Err(Error::Axis { axis, rank });
        }
        Ok(())
    }

    fn reduce_axis(&self, a: Var, axis: usize, mut f: impl FnMut(&mut Vec<f64>, usize, usize, usize, &[f64])) -> (Vec<usize>, Vec<f64>) {
        let t = self.val(a);
        let (outer, len, inner) = axis_split(&t.shape, axis);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                f(&mut out, o, len, i, &t.data[o * len * inner..(o + 1) * len * inner]);
            }
        }
        (without_axis(&t.shape, axis), out)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let inner = axis_split(&self.val(a).shape, axis).2;
        let (shape, data) = self.reduce_axis(a, axis, |out, _, len, i, block| {
            out.push((0..len).map(|j| block[j * inner + i]).sum())
        });
        self.push(shape, data, Op::SumAxis { input: a.0, axis })
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let inner = axis_split(&self.val(a).shape, axis).2;
        let (shape, data) = self.reduce_axis(a, axis, |out, _, len, i, block| {
            out.push((0..len).map(|j| block[j * inner + i]).sum::<f64>() / len as f64)
        });
        self.push(shape, data, Op::MeanAxis { input: a.0, axis })
    }

    /// Maximum along `axis`; backward routes the gradient to the first argmax.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let inner = axis_split(&self.val(a).shape, axis).2;
        let mut argmax = Vec::new();
        let (shape, data) = self.reduce_axis(a, axis, |out, o, len, i, block| {
            let mut best = 0;
            for j in 1..len {
                if block[j * inner + i] > block[best * inner + i] {
                    best = j;
                }
            }
            out.push(block[best * inner + i]);
            argmax.push((o * len + best) * inner + i);
        });
        self.push(shape, data, Op::MaxAxis { input: a.0, argmax })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", ta.shape, tb.shape)));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ta.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        self.push(vec![m, n], out, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        if t.rank() != 2 {
            return Err(Error::shape("transpose", format!("rank {} input", t.rank())));
        }
        let (r, c) = (t.shape[0], t.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose(a.0))
    }

    /// `x[N×F] + b[F]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.val(x), self.val(b));
        if tx.rank() != 2 || tb.rank() != 1 || tx.shape[1] != tb.shape[0] {
            return Err(Error::shape("add_row_bias", format!("{:?} + {:?}", tx.shape, tb.shape)));
        }
        let f = tb.shape[0];
        let data = tx.data.iter().enumerate().map(|(i, &v)| v + tb.data[i % f]).collect();
        let shape = tx.shape.clone();
        self.push(shape, data, Op::AddRowBias(x.0, b.0))
    }

    /// `x[N×F×H×W] + b[F]` broadcast over batch and spatial positions.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.val(x), self.val(b));
        if tx.rank() != 4 || tb.rank() != 1 || tx.shape[1] != tb.shape[0] {
            return Err(Error::shape("add_channel_bias", format!("{:?} + {:?}", tx.shape, tb.shape)));
        }
        let (f, hw) = (tx.shape[1], tx.shape[2] * tx.shape[3]);
        let data = tx.data.iter().enumerate().map(|(i, &v)| v + tb.data[(i / hw) % f]).collect();
        let shape = tx.shape.clone();
        self.push(shape, data, Op::AddChannelBias(x.0, b.0))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.val(a).reshape(shape)?;
        self.push(t.shape, t.data, Op::Reshape(a.0))
    }

    /// Mean over the spatial axes: `N×C×H×W -> N×C`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        if t.rank() != 4 {
            return Err(Error::shape("global_avg_pool", format!("rank {} input", t.rank())));
        }
        let (n, c, hw) = (t.shape[0], t.shape[1], t.shape[2] * t.shape[3]);
        let data = t.data.chunks(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect();
        self.push(vec![n, c], data, Op::GlobalAvgPool(a.0))
    }

    fn conv_dims(&self, input: Var, kernel: Var, stride: usize, pad: usize, floor: bool) -> Result<ConvDims> {
        let (ti, tk) = (self.val(input), self.val(kernel));
        if ti.rank() != 4 || tk.rank() != 4 {
            return Err(Error::shape("conv2d", format!("{:?} * {:?}", ti.shape, tk.shape)));
        }
        if ti.shape[1] != tk.shape[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", ti.shape[1], tk.shape[1]),
            ));
        }
        let (h, w, kh, kw) = (ti.shape[2], ti.shape[3], tk.shape[2], tk.shape[3]);
        let extent = |size, k| {
            let e = if floor {
                conv_out_extent_floor(size, k, stride, pad)
            } else {
                conv_out_extent(size, k, stride, pad)
            };
            e.ok_or_else(|| {
                Error::shape(
                    "conv2d",
                    format!("extent {size} with kernel {k}, stride {stride}, pad {pad} is not integral"),
                )
            })
        };
        Ok(ConvDims {
            n: ti.shape[0],
            c: ti.shape[1],
            h,
            w,
            f: tk.shape[0],
            kh,
            kw,
            oh: extent(h, kh)?,
            ow: extent(w, kw)?,
            stride,
            pad,
        })
    }

    /// Cross-correlation of `N×C×H×W` input with `F×C×kh×kw` kernels.
    /// `(H + 2 pad - kh) / stride` must be integral, likewise for the width.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv2d_impl(input, kernel, stride, pad, false)
    }

    /// Like [`Graph::conv2d`], but a trailing row or column that does not
    /// fill a whole window is skipped instead of rejected.
    pub fn conv2d_floor(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv2d_impl(input, kernel, stride, pad, true)
    }

    fn conv2d_impl(&mut self, input: Var, kernel: Var, stride: usize, pad: usize, floor: bool) -> Result<Var> {
        let d = self.conv_dims(input, kernel, stride, pad, floor)?;
        let (x, k) = (&self.val(input).data, &self.val(kernel).data);
        let mut out = vec![0.0; d.n * d.f * d.oh * d.ow];
        for n in 0..d.n {
            for f in 0..d.f {
                let obase = (n * d.f + f) * d.oh * d.ow;
                for c in 0..d.c {
                    let xbase = (n * d.c + c) * d.h * d.w;
                    let kbase = (f * d.c + c) * d.kh * d.kw;
                    for i in 0..d.kh {
                        for j in 0..d.kw {
                            let kv = k[kbase + i * d.kw + j];
                            for oy in 0..d.oh {
                                let Some(iy) = d.src(oy, i, d.h) else { continue };
                                for ox in 0..d.ow {
                                    if let Some(ix) = d.src(ox, j, d.w) {
                                        out[obase + oy * d.ow + ox] += kv * x[xbase + iy * d.w + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(
            vec![d.n, d.f, d.oh, d.ow],
            out,
            Op::Conv2d { input: input.0, kernel: kernel.0, stride, pad, floor },
        )
    }

    /// Mean softmax cross-entropy of `N×C` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.val(logits);
        if t.rank() != 2 || t.shape[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} with {} labels", t.shape, labels.len()),
            ));
        }
        let (n, c) = (t.shape[0], t.shape[1]);
        let mut probs = Vec::with_capacity(n * c);
        let mut total = 0.0;
        for (row, (z, &y)) in t.data.chunks(c).zip(labels).enumerate() {
            if y >= c {
                return Err(Error::Label { row, label: y, classes: c });
            }
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - z[y];
            probs.extend(z.iter().map(|&v| (v - lse).exp()));
        }
        let labels = labels.to_vec();
        self.push(
            vec![],
            vec![total / n as f64],
            Op::CrossEntropy { logits: logits.0, labels, probs },
        )
    }

    /// Reverse sweep from a scalar `loss`; gradients from any earlier call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.mode == Mode::Inference {
            return Err(Error::InferenceBackward);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let nodes = &self.nodes;
        let v = |i: usize| &nodes[i].value.data;
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for i in [a, b] {
                    if let Some(ga) = acc(nodes, grads, i) {
                        ga.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc(nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = acc(nodes, grads, a) {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(v(b)) {
                        *o += gi * y;
                    }
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    for ((o, gi), x) in gb.iter_mut().zip(g).zip(v(a)) {
                        *o += gi * x;
                    }
                }
            }
            Op::Maximum(a, b) => {
                let (xa, xb) = (v(a), v(b));
                if let Some(ga) = acc(nodes, grads, a) {
                    for i in 0..g.len() {
                        if xa[i] >= xb[i] {
                            ga[i] += g[i];
                        }
                    }
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    for i in 0..g.len() {
                        if xa[i] < xb[i] {
                            gb[i] += g[i];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = acc(nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi);
                }
            }
            Op::Exp(a) => {
                let y = &node.value.data;
                if let Some(ga) = acc(nodes, grads, a) {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * yi;
                    }
                }
            }
            Op::Log(a) => {
                let x = v(a);
                if let Some(ga) = acc(nodes, grads, a) {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        *o += gi / xi;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                if let Some(ga) = acc(nodes, grads, a) {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Activate { input, act } => {
                let x = v(input);
                if let Some(ga) = acc(nodes, grads, input) {
                    for ((o, gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                        *o += gi * act.derivative(xi);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc(nodes, grads, a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = nodes[a].value.len() as f64;
                if let Some(ga) = acc(nodes, grads, a) {
                    ga.iter_mut().for_each(|o| *o += g[0] / n);
                }
            }
            Op::SumAxis { input, axis } | Op::MeanAxis { input, axis } => {
                let (outer, len, inner) = axis_split(&nodes[input].value.shape, axis);
                let w = if matches!(node.op, Op::MeanAxis { .. }) { 1.0 / len as f64 } else { 1.0 };
                if let Some(ga) = acc(nodes, grads, input) {
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                ga[(o * len + j) * inner + i] += w * g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::MaxAxis { input, ref argmax } => {
                if let Some(ga) = acc(nodes, grads, input) {
                    for (gi, &src) in g.iter().zip(argmax) {
                        ga[src] += gi;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&nodes[a].value.shape, &nodes[b].value.shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (xa, xb) = (v(a), v(b));
                if let Some(ga) = acc(nodes, grads, a) {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * xb[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    for i in 0..m {
                        for p in 0..k {
                            let av = xa[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let s = &node.value.shape;
                let (c, r) = (s[0], s[1]);
                if let Some(ga) = acc(nodes, grads, a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::AddRowBias(x, b) => {
                if let Some(gx) = acc(nodes, grads, x) {
                    gx.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    let f = gb.len();
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % f] += gi;
                    }
                }
            }
            Op::AddChannelBias(x, b) => {
                let s = &node.value.shape;
                let (f, hw) = (s[1], s[2] * s[3]);
                if let Some(gx) = acc(nodes, grads, x) {
                    gx.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    for (i, gi) in g.iter().enumerate() {
                        gb[(i / hw) % f] += gi;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = acc(nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
                }
            }
            Op::GlobalAvgPool(a) => {
                let s = &nodes[a].value.shape;
                let hw = s[2] * s[3];
                if let Some(ga) = acc(nodes, grads, a) {
                    for (i, o) in ga.iter_mut().enumerate() {
                        *o += g[i / hw] / hw as f64;
                    }
                }
            }
            Op::Conv2d { input, kernel, stride, pad, floor } => {
                let d = self
                    .conv_dims(Var(input), Var(kernel), stride, pad, floor)
                    .expect("validated on forward");
                let (x, k) = (v(input), v(kernel));
                if let Some(gx) = acc(nodes, grads, input) {
                    conv_backward_input(&d, g, k, gx);
                }
                if let Some(gk) = acc(nodes, grads, kernel) {
                    conv_backward_kernel(&d, g, x, gk);
                }
            }
            Op::CrossEntropy { logits, ref labels, ref probs } => {
                let n = labels.len();
                let c = probs.len() / n;
                if let Some(gl) = acc(nodes, grads, logits) {
                    let scale = g[0] / n as f64;
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

/// Accumulator for input `i`, or None when it does not need a gradient.
fn acc<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], i: usize) -> Option<&'g mut Vec<f64>> {
    if !nodes[i].requires_grad {
        return None;
    }
    Some(grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]))
}

fn conv_backward_input(d: &ConvDims, g: &[f64], k: &[f64], gx: &mut [f64]) {
    for n in 0..d.n {
        for f in 0..d.f {
            let gbase = (n * d.f + f) * d.oh * d.ow;
            for c in 0..d.c {
                let xbase = (n * d.c + c) * d.h * d.w;
                let kbase = (f * d.c + c) * d.kh * d.kw;
                for i in 0..d.kh {
                    for j in 0..d.kw {
                        let kv = k[kbase + i * d.kw + j];
                        for oy in 0..d.oh {
                            let Some(iy) = d.src(oy, i, d.h) else { continue };
                            for ox in 0..d.ow {
                                if let Some(ix) = d.src(ox, j, d.w) {
                                    gx[xbase + iy * d.w + ix] += kv * g[gbase + oy * d.ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_kernel(d: &ConvDims, g: &[f64], x: &[f64], gk: &mut [f64]) {
    for n in 0..d.n {
        for f in 0..d.f {
            let gbase = (n * d.f + f) * d.oh * d.ow;
            for c in 0..d.c {
                let xbase = (n * d.c + c) * d.h * d.w;
                let kbase = (f * d.c + c) * d.kh * d.kw;
                for i in 0..d.kh {
                    for j in 0..d.kw {
                        let mut s = 0.0;
                        for oy in 0..d.oh {
                            let Some(iy) = d.src(oy, i, d.h) else { continue };
                            for ox in 0..d.ow {
                                if let Some(ix) = d.src(ox, j, d.w) {
                                    s += g[gbase + oy * d.ow + ox] * x[xbase + iy * d.w + ix];
                                }
                            }
                        }
                        gk[kbase + i * d.kw + j] += s;
                    }
                }
            }
        }
    }
}
