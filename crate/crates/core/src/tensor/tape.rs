use std::collections::BTreeMap;

use super::params::{Gradients, ParamStore};
use super::{invalid, mismatch, split_axis, strides, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    BroadcastTo(Var),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    LayerNorm(Var, Vec<f64>),
    L2Normalize(Var, usize, Vec<f64>),
    Sum(Var, usize),
    Mean(Var, usize),
    Max(Var, usize, Vec<usize>),
    SumAll(Var),
    MeanAll(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: (usize, usize),
    },
    MaxPool2d(Var, Vec<usize>),
    UpSample2d(Var, usize),
    Pad2d(Var, [usize; 4]),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; kept across `backward` calls for leaves.
    grad: Option<Vec<f64>>,
}

/// Recording of one forward pass.
///
/// A tape built with [`Tape::inference`] computes values only; calling
/// [`Tape::backward`] on it fails with [`TensorError::NoTape`].
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    recording: bool,
    nodes: Vec<Node>,
    param_vars: BTreeMap<String, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            params: None,
            recording: true,
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Tape {
            params: Some(params),
            ..Tape::new()
        }
    }

    /// A non-recording tape: ops compute values but nothing is differentiable.
    pub fn inference(params: &'p ParamStore) -> Self {
        Tape {
            params: Some(params),
            recording: false,
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs_require_grad: bool) -> Var {
        let requires_grad = self.recording && inputs_require_grad;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a leaf; differentiable when `t.requires_grad` is set.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        let rg = t.requires_grad;
        t.grad = None;
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    /// Bring a named parameter onto the tape (once per tape).
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let store = self.params.ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let t = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let mut value = Tensor::new(t.shape(), t.data().to_vec())?;
        value.requires_grad = t.requires_grad;
        let v = self.leaf(value);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradients of every differentiable parameter used on this tape.
    pub fn param_grads(&self) -> Gradients {
        let mut out = Gradients::default();
        for (name, &v) in &self.param_vars {
            let node = &self.nodes[v.0];
            if node.requires_grad {
                let g = node.grad.clone().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                out.insert(name.clone(), g);
            }
        }
        out
    }

    // ----------------------------------------------------------------- ops

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| mismatch(name, &sa, &sb))?;
        let (da, db) = (self.data(a), self.data(b));
        let data: Vec<f64> = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let (ia, ib) = broadcast_maps(&out_shape, &sa, &sb);
            ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&out_shape, data)?, op, rg))
    }

    /// Elementwise sum with broadcasting over leading/unit axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, op, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(a, |x| x.powf(p), Op::Powf(a, p))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.powf(a, 2.0)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.powf(a, 0.5)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Rank-2 transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(invalid(
                "transpose",
                format!("expected rank 2, got {:?}", self.shape(a)),
            ));
        }
        self.permute(a, &[1, 0])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(mismatch("reshape", t.shape(), shape));
        }
        let value = Tensor::new(shape, t.data().to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..shape.len()).collect::<Vec<_>>() {
            return Err(invalid(
                "permute",
                format!("{perm:?} is not a permutation of {} axes", shape.len()),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let map = permute_map(&shape, perm);
        let src = self.data(a);
        let data = map.iter().map(|&i| src[i]).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&out_shape, data)?, Op::Permute(a, perm.to_vec()), rg))
    }

    /// Materialize a broadcast to `shape` (same rank or fewer leading axes).
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        match broadcast_shape(&sa, shape) {
            Some(s) if s == shape => {}
            _ => return Err(mismatch("broadcast_to", &sa, shape)),
        }
        let (ia, _) = broadcast_maps(shape, &sa, shape);
        let src = self.data(a);
        let data = ia.iter().map(|&i| src[i]).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::BroadcastTo(a), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| invalid("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().enumerate().any(|(d, &x)| d != axis && x != first[d]) {
                return Err(mismatch("concat", &first, s));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.data(p)[o * len..(o + 1) * len]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&out_shape, data)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&src[base + start * inner..base + (start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&out_shape, data)?, Op::Narrow(a, axis, start), rg))
    }

    /// Select rows of a rank-2 tensor (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(invalid("gather_rows", format!("expected rank 2, got {shape:?}")));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= shape[0]) {
            return Err(invalid("gather_rows", format!("row {r} out of range for {shape:?}")));
        }
        let c = shape[1];
        let src = self.data(a);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(&src[r * c..(r + 1) * c]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(&[rows.len(), c], data)?,
            Op::GatherRows(a, rows.to_vec()),
            rg,
        ))
    }

    fn check_axis(&self, a: Var, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(invalid(op, format!("axis {axis} out of range for {:?}", self.shape(a))));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "softmax")?;
        let t = self.value(a);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..n {
                    let e = (data[idx(k)] - m).exp();
                    data[idx(k)] = e;
                    sum += e;
                }
                for k in 0..n {
                    data[idx(k)] /= sum;
                }
            }
        }
        let value = Tensor::new(t.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a, axis), rg))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "log_softmax")?;
        let t = self.value(a);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..n).map(|k| (data[idx(k)] - m).exp()).sum::<f64>().ln();
                for k in 0..n {
                    data[idx(k)] -= lse;
                }
            }
        }
        let value = Tensor::new(t.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSoftmax(a, axis), rg))
    }

    /// Normalize over the last axis to zero mean / unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let d = *t.shape().last().ok_or_else(|| invalid("layer_norm", "rank-0 input"))?;
        let rows = t.numel() / d.max(1);
        let mut data = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &mut data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv_std.push(is);
        }
        let value = Tensor::new(t.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::LayerNorm(a, inv_std), rg))
    }

    /// `x / max(‖x‖₂, eps)` along `axis`.
    pub fn l2_normalize(&mut self, a: Var, axis: usize, eps: f64) -> Result<Var> {
        self.check_axis(a, axis, "l2_normalize")?;
        let t = self.value(a);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = t.data().to_vec();
        let mut norms = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let norm = (0..n).map(|k| data[idx(k)].powi(2)).sum::<f64>().sqrt().max(eps);
                for k in 0..n {
                    data[idx(k)] /= norm;
                }
                norms.push(norm);
            }
        }
        let value = Tensor::new(t.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::L2Normalize(a, axis, norms), rg))
    }

    fn reduce(&mut self, a: Var, axis: usize, op: &'static str) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
        self.check_axis(a, axis, op)?;
        let t = self.value(a);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        if n == 0 {
            return Err(invalid(op, "reduction over an empty axis"));
        }
        let mut out_shape = t.shape().to_vec();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let slot = o * inner + i;
                match op {
                    "max" => {
                        let mut best = f64::NEG_INFINITY;
                        let mut bk = 0;
                        for k in 0..n {
                            let v = src[(o * n + k) * inner + i];
                            if v > best {
                                best = v;
                                bk = k;
                            }
                        }
                        out[slot] = best;
                        arg[slot] = bk;
                    }
                    _ => {
                        let s: f64 = (0..n).map(|k| src[(o * n + k) * inner + i]).sum();
                        out[slot] = if op == "mean" { s / n as f64 } else { s };
                    }
                }
            }
        }
        Ok((out_shape, out, arg))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, data, _) = self.reduce(a, axis, "sum")?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Sum(a, axis), rg))
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, data, _) = self.reduce(a, axis, "mean")?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Mean(a, axis), rg))
    }

    /// Max over `axis`; the gradient goes to the first maximal entry.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, data, arg) = self.reduce(a, axis, "max")?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Max(a, axis, arg), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::SumAll(a), rg))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(invalid("mean_all", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::MeanAll(a), rg))
    }

    /// `x[r,:] · W + b` for `x: [m,k]`, `W: [k,n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// 2-D convolution over `[C,H,W]` with weight `[O,C,kh,kw]` and optional
    /// bias `[O]`. Zero padding `(ph, pw)` on each side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: (usize, usize)) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sx[0] != sw[1] {
            return Err(mismatch("conv2d", &sx, &sw));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be positive"));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(mismatch("conv2d bias", self.shape(b), &[sw[0]]));
            }
        }
        let geo = ConvGeometry::new(&sx, &sw, stride, pad).ok_or_else(|| mismatch("conv2d", &sx, &sw))?;
        let mut out = vec![0.0; geo.o * geo.ho * geo.wo];
        geo.forward(self.data(x), self.data(w), &mut out);
        if let Some(b) = b {
            let bd = self.data(b);
            for (o, chunk) in out.chunks_mut(geo.ho * geo.wo).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bd[o]);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[geo.o, geo.ho, geo.wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Non-overlapping `k×k` max pooling over `[C,H,W]`; H and W must divide by k.
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || k == 0 || s[1] % k != 0 || s[2] % k != 0 {
            return Err(invalid("max_pool2d", format!("kernel {k} does not tile {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h / k, w / k);
        let src = self.data(x);
        let mut out = vec![0.0; c * ho * wo];
        let mut arg = vec![0usize; c * ho * wo];
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut bi = 0;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = (ch * h + oy * k + dy) * w + ox * k + dx;
                            if src[i] > best {
                                best = src[i];
                                bi = i;
                            }
                        }
                    }
                    let o = (ch * ho + oy) * wo + ox;
                    out[o] = best;
                    arg[o] = bi;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[c, ho, wo], out)?, Op::MaxPool2d(x, arg), rg))
    }

    /// Nearest-neighbor upsampling of `[C,H,W]` by an integer factor.
    pub fn up_sample2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || factor == 0 {
            return Err(invalid("up_sample2d", format!("bad input {s:?} / factor {factor}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h * factor, w * factor);
        let src = self.data(x);
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    out[(ch * ho + y) * wo + xx] = src[(ch * h + y / factor) * w + xx / factor];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[c, ho, wo], out)?, Op::UpSample2d(x, factor), rg))
    }

    /// Zero-pad the spatial axes of `[C,H,W]` by `[top, bottom, left, right]`.
    pub fn pad2d(&mut self, x: Var, pads: [usize; 4]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(invalid("pad2d", format!("expected [C,H,W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h + pads[0] + pads[1], w + pads[2] + pads[3]);
        let src = self.data(x);
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..h {
                let dst = (ch * ho + y + pads[0]) * wo + pads[2];
                out[dst..dst + w].copy_from_slice(&src[(ch * h + y) * w..(ch * h + y + 1) * w]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[c, ho, wo], out)?, Op::Pad2d(x, pads), rg))
    }

    // ------------------------------------------------------------ backward

    /// Reverse pass from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(TensorError::NoTape);
        }
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (ia, ib) = broadcast_maps(out.shape(), sa, sb);
                acc(*a, &mut |ga| ia.iter().zip(g).for_each(|(&j, &gv)| ga[j] += gv));
                acc(*b, &mut |gb| ib.iter().zip(g).for_each(|(&j, &gv)| gb[j] += sign * gv));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let (ia, ib) = broadcast_maps(out.shape(), self.shape(*a), self.shape(*b));
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[ia[k]] += g[k] * db[ib[k]];
                    }
                });
                acc(*b, &mut |gb| {
                    for k in 0..g.len() {
                        gb[ib[k]] += g[k] * da[ia[k]];
                    }
                });
            }
            Op::Div(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let (ia, ib) = broadcast_maps(out.shape(), self.shape(*a), self.shape(*b));
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[ia[k]] += g[k] / db[ib[k]];
                    }
                });
                acc(*b, &mut |gb| {
                    for k in 0..g.len() {
                        let y = db[ib[k]];
                        gb[ib[k]] -= g[k] * da[ia[k]] / (y * y);
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &gv)| *x += s * gv)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &gv)| *x += gv)),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |ga| {
                    // dA = G · Bᵀ
                    for r in 0..m {
                        for c in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * db[c * n + j];
                            }
                            ga[r * k + c] += s;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    // dB = Aᵀ · G
                    for r in 0..m {
                        for c in 0..k {
                            let av = da[r * k + c];
                            if av == 0.0 {
                                continue;
                            }
                            let row = &mut gb[c * n..(c + 1) * n];
                            for (x, &gv) in row.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                *x += av * gv;
                            }
                        }
                    }
                });
            }
            Op::Permute(a, perm) => {
                let map = permute_map(self.shape(*a), perm);
                acc(*a, &mut |ga| map.iter().zip(g).for_each(|(&j, &gv)| ga[j] += gv));
            }
            Op::BroadcastTo(a) => {
                let (ia, _) = broadcast_maps(out.shape(), self.shape(*a), out.shape());
                acc(*a, &mut |ga| ia.iter().zip(g).for_each(|(&j, &gv)| ga[j] += gv));
            }
            Op::Concat(parts, axis) => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis] * inner;
                    acc(p, &mut |gp| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + len];
                            gp[o * len..(o + 1) * len]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, &gv)| *x += gv);
                        }
                    });
                    offset += len;
                }
            }
            Op::Narrow(a, axis, start) => {
                let (outer, n, inner) = split_axis(self.shape(*a), *axis);
                let len = out.shape()[*axis];
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        let dst = o * n * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        ga[dst..dst + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, &gv)| *x += gv);
                    }
                });
            }
            Op::GatherRows(a, rows) => {
                let c = self.shape(*a)[1];
                acc(*a, &mut |ga| {
                    for (k, &r) in rows.iter().enumerate() {
                        ga[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(&g[k * c..(k + 1) * c])
                            .for_each(|(x, &gv)| *x += gv);
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + i;
                            let dot: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                            for k in 0..n {
                                ga[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(a, axis) => {
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + i;
                            let gsum: f64 = (0..n).map(|k| g[idx(k)]).sum();
                            for k in 0..n {
                                ga[idx(k)] += g[idx(k)] - y[idx(k)].exp() * gsum;
                            }
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.data(*a);
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        if x[k] > 0.0 {
                            ga[k] += g[k];
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let y = out.data();
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k];
                    }
                });
            }
            Op::Log(a) => {
                let x = self.data(*a);
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] += g[k] / x[k];
                    }
                });
            }
            Op::Powf(a, p) => {
                let x = self.data(*a);
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] += g[k] * p * x[k].powf(p - 1.0);
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.data(*a);
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        if x[k] >= *lo && x[k] <= *hi {
                            ga[k] += g[k];
                        }
                    }
                });
            }
            Op::LayerNorm(a, inv_std) => {
                let d = *out.shape().last().expect("rank >= 1");
                let y = out.data();
                acc(*a, &mut |ga| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let yr = &y[r * d..(r + 1) * d];
                        let mg = gr.iter().sum::<f64>() / d as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for k in 0..d {
                            ga[r * d + k] += is * (gr[k] - mg - yr[k] * mgy);
                        }
                    }
                });
            }
            Op::L2Normalize(a, axis, norms) => {
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                let x = self.data(*a);
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + i;
                            let norm = norms[o * inner + i];
                            let raw: f64 = (0..n).map(|k| x[idx(k)].powi(2)).sum::<f64>().sqrt();
                            if raw < norm {
                                // Clamped branch: y = x / eps is linear in x.
                                for k in 0..n {
                                    ga[idx(k)] += g[idx(k)] / norm;
                                }
                                continue;
                            }
                            let dot: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                            for k in 0..n {
                                ga[idx(k)] += (g[idx(k)] - y[idx(k)] * dot) / norm;
                            }
                        }
                    }
                });
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let (outer, n, inner) = split_axis(self.shape(*a), *axis);
                let scale = if matches!(node.op, Op::Mean(..)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for k in 0..n {
                            for i in 0..inner {
                                ga[(o * n + k) * inner + i] += scale * g[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::Max(a, axis, arg) => {
                let (_, n, inner) = split_axis(self.shape(*a), *axis);
                acc(*a, &mut |ga| {
                    for (slot, &k) in arg.iter().enumerate() {
                        let (o, i) = (slot / inner, slot % inner);
                        ga[(o * n + k) * inner + i] += g[slot];
                    }
                });
            }
            Op::SumAll(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::MeanAll(a) => {
                let n = self.value(*a).numel() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let geo =
                    ConvGeometry::new(self.shape(*x), self.shape(*w), *stride, *pad).expect("validated in forward");
                let (dx, dw) = (self.data(*x), self.data(*w));
                acc(*x, &mut |gx| geo.backward_input(g, dw, gx));
                acc(*w, &mut |gw| geo.backward_weight(g, dx, gw));
                if let Some(b) = b {
                    let plane = geo.ho * geo.wo;
                    acc(*b, &mut |gb| {
                        for (o, chunk) in g.chunks(plane).enumerate() {
                            gb[o] += chunk.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::MaxPool2d(a, arg) => {
                acc(*a, &mut |ga| arg.iter().zip(g).for_each(|(&j, &gv)| ga[j] += gv));
            }
            Op::UpSample2d(a, f) => {
                let s = self.shape(*a);
                let (c, h, w) = (s[0], s[1], s[2]);
                let (ho, wo) = (h * f, w * f);
                acc(*a, &mut |ga| {
                    for ch in 0..c {
                        for y in 0..ho {
                            for xx in 0..wo {
                                ga[(ch * h + y / f) * w + xx / f] += g[(ch * ho + y) * wo + xx];
                            }
                        }
                    }
                });
            }
            Op::Pad2d(a, pads) => {
                let s = self.shape(*a);
                let (c, h, w) = (s[0], s[1], s[2]);
                let wo = w + pads[2] + pads[3];
                let ho = h + pads[0] + pads[1];
                acc(*a, &mut |ga| {
                    for ch in 0..c {
                        for y in 0..h {
                            let src = (ch * ho + y + pads[0]) * wo + pads[2];
                            ga[(ch * h + y) * w..(ch * h + y + 1) * w]
                                .iter_mut()
                                .zip(&g[src..src + w])
                                .for_each(|(x, &gv)| *x += gv);
                        }
                    }
                });
            }
        }
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

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a[r * k + c];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[c * n..(c + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Numpy-style broadcast of two shapes (right-aligned).
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let x = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let y = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = match (x, y) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the source flat index in `a` and `b`.
fn broadcast_maps(out: &[usize], a: &[usize], b: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n: usize = out.iter().product();
    if a == out && b == out {
        let id: Vec<usize> = (0..n).collect();
        return (id.clone(), id);
    }
    let rank = out.len();
    let bstrides = |s: &[usize]| -> Vec<usize> {
        let st = strides(s);
        (0..rank)
            .map(|d| {
                if d + s.len() < rank {
                    0
                } else {
                    let k = d + s.len() - rank;
                    if s[k] == 1 {
                        0
                    } else {
                        st[k]
                    }
                }
            })
            .collect()
    };
    let (sa, sb) = (bstrides(a), bstrides(b));
    let mut ia = Vec::with_capacity(n);
    let mut ib = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (mut fa, mut fb) = (0usize, 0usize);
    for _ in 0..n {
        ia.push(fa);
        ib.push(fb);
        for d in (0..rank).rev() {
            idx[d] += 1;
            fa += sa[d];
            fb += sb[d];
            if idx[d] < out[d] {
                break;
            }
            fa -= sa[d] * idx[d];
            fb -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
    (ia, ib)
}

/// Source flat index for every flat index of the permuted output.
fn permute_map(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
    let n: usize = shape.iter().product();
    let rank = shape.len();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut f = 0usize;
    for _ in 0..n {
        map.push(f);
        for d in (0..rank).rev() {
            idx[d] += 1;
            f += out_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            f -= out_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    ph: usize,
    pw: usize,
}

impl ConvGeometry {
    fn new(sx: &[usize], sw: &[usize], stride: usize, pad: (usize, usize)) -> Option<Self> {
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad.0 < kh || w + 2 * pad.1 < kw {
            return None;
        }
        Some(ConvGeometry {
            c,
            h,
            w,
            o,
            kh,
            kw,
            ho: (h + 2 * pad.0 - kh) / stride + 1,
            wo: (w + 2 * pad.1 - kw) / stride + 1,
            stride,
            ph: pad.0,
            pw: pad.1,
        })
    }

    /// Valid output range `[lo, hi)` along one axis for kernel offset `k`.
    fn range(&self, k: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
        // need 0 <= o*stride + k - pad < len
        let lo = if pad > k { (pad - k).div_ceil(self.stride) } else { 0 };
        let hi = if len + pad > k {
            ((len + pad - k - 1) / self.stride + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn forward(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        for o in 0..self.o {
            for c in 0..self.c {
                for ky in 0..self.kh {
                    let (ylo, yhi) = self.range(ky, self.ph, self.h, self.ho);
                    for kx in 0..self.kw {
                        let wv = w[((o * self.c + c) * self.kh + ky) * self.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (xlo, xhi) = self.range(kx, self.pw, self.w, self.wo);
                        for oy in ylo..yhi {
                            let iy = oy * self.stride + ky - self.ph;
                            let xrow = &x[(c * self.h + iy) * self.w..];
                            let orow = &mut out[(o * self.ho + oy) * self.wo..];
                            for ox in xlo..xhi {
                                orow[ox] += wv * xrow[ox * self.stride + kx - self.pw];
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_input(&self, g: &[f64], w: &[f64], gx: &mut [f64]) {
        for o in 0..self.o {
            for c in 0..self.c {
                for ky in 0..self.kh {
                    let (ylo, yhi) = self.range(ky, self.ph, self.h, self.ho);
                    for kx in 0..self.kw {
                        let wv = w[((o * self.c + c) * self.kh + ky) * self.kw + kx];
                        let (xlo, xhi) = self.range(kx, self.pw, self.w, self.wo);
                        for oy in ylo..yhi {
                            let iy = oy * self.stride + ky - self.ph;
                            for ox in xlo..xhi {
                                gx[(c * self.h + iy) * self.w + ox * self.stride + kx - self.pw] +=
                                    wv * g[(o * self.ho + oy) * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_weight(&self, g: &[f64], x: &[f64], gw: &mut [f64]) {
        for o in 0..self.o {
            for c in 0..self.c {
                for ky in 0..self.kh {
                    let (ylo, yhi) = self.range(ky, self.ph, self.h, self.ho);
                    for kx in 0..self.kw {
                        let (xlo, xhi) = self.range(kx, self.pw, self.w, self.wo);
                        let mut s = 0.0;
                        for oy in ylo..yhi {
                            let iy = oy * self.stride + ky - self.ph;
                            for ox in xlo..xhi {
                                s += g[(o * self.ho + oy) * self.wo + ox]
                                    * x[(c * self.h + iy) * self.w + ox * self.stride + kx - self.pw];
                            }
                        }
                        gw[((o * self.c + c) * self.kh + ky) * self.kw + kx] += s;
                    }
                }
            }
        }
    }
}
