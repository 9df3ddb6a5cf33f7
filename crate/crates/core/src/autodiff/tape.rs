use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::bail;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
    Huber(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    MaxAxis(Var, Vec<usize>),
    SumAll(Var),
    MeanAll(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Transpose(Var),
    Reshape(Var),
    MulCol(Var, Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentMean(Var, Arc<[usize]>),
    LayerNorm { x: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SegmentAttention { q: Var, k: Var, v: Var, offsets: Arc<[usize]>, heads: usize, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of one forward computation, in creation order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients from one backward pass, aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { grads: store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum())
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads.iter_mut().flat_map(|g| g.data_mut().iter_mut()).for_each(|x| *x *= factor);
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(alloc::format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// Output shape of a suffix-broadcast binary op: the lower-rank operand
/// repeats along the leading dimensions of the other.
fn broadcast_shape(op: &str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b || (a.len() >= b.len() && a.ends_with(b)) {
        Ok(a.to_vec())
    } else if b.len() > a.len() && b.ends_with(a) {
        Ok(b.to_vec())
    } else {
        Err(shape_err(op, a, b))
    }
}

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        bail!(Shape, "axis {axis} out of range for shape {shape:?}");
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn sum_reduce_into(grad: &[f64], target: &mut [f64]) {
    for chunk in grad.chunks_exact(target.len()) {
        target.iter_mut().zip(chunk).for_each(|(t, g)| *t += g);
    }
}

/// Visits `g` block by block alongside `t` and `x`, each of which is either
/// full length or one repeating suffix block.
fn bcast_visit(g: &[f64], t: &mut [f64], x: &[f64], f: impl Fn(&mut f64, f64, f64)) {
    let block = t.len().min(x.len());
    for (c, gc) in g.chunks_exact(block).enumerate() {
        let range = c * block..(c + 1) * block;
        let tc = if t.len() == g.len() { &mut t[range.clone()] } else { &mut t[..] };
        let xc = if x.len() == g.len() { &x[range] } else { x };
        for ((ti, &gi), &xi) in tc.iter_mut().zip(gc).zip(xc) {
            f(ti, gi, xi);
        }
    }
}

fn softmax_in_place(row: &mut [f64], mask: Option<&[bool]>) {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &x) in row.iter().enumerate() {
        if keep(j) && x > max {
            max = x;
        }
    }
    let mut total = 0.0;
    for (j, x) in row.iter_mut().enumerate() {
        *x = if keep(j) { libm::exp(*x - max) } else { 0.0 };
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

fn validate_offsets(offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&rows) || offsets.windows(2).any(|w| w[0] > w[1]) {
        bail!(Shape, "segment offsets {offsets:?} do not partition {rows} rows");
    }
    Ok(())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a derived value, rejecting non-finite results.
    fn record(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[Var]) -> Result<Var> {
        const EXP: u64 = 0x7ff0_0000_0000_0000;
        // an all-ones exponent marks inf/NaN; the bitwise fold vectorizes
        if data.iter().fold(false, |acc, x| acc | (x.to_bits() & EXP == EXP)) {
            let bad = data.iter().find(|x| !x.is_finite()).copied().unwrap_or(f64::NAN);
            bail!(Numeric, "{name} produced non-finite value {bad}");
        }
        let needs_grad = parents.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor { shape, data }, op, needs_grad))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        Ok(self.constant(Tensor::new(shape, data)?))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, 0.0, &mut out);
        self.record("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let (da, db) = (self.data(a), self.data(b));
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        if da.len() == db.len() {
            out.extend(da.iter().zip(db).map(|(&x, &y)| f(x, y)));
        } else if db.len() < da.len() {
            for ca in da.chunks_exact(db.len()) {
                out.extend(ca.iter().zip(db).map(|(&x, &y)| f(x, y)));
            }
        } else {
            for cb in db.chunks_exact(da.len()) {
                out.extend(da.iter().zip(cb).map(|(&x, &y)| f(x, y)));
            }
        }
        self.record(name, shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    fn unary(&mut self, name: &str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        self.record(name, shape, out, op, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::Shift(x))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, libm::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.data(x).iter().find(|&&v| v <= 0.0) {
            bail!(Numeric, "log of non-positive value {bad}");
        }
        self.unary("log", x, libm::log, Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, libm::tanh, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary("leaky_relu", x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.unary("elu", x, |v| if v > 0.0 { v } else { libm::expm1(v) }, Op::Elu(x))
    }

    /// Clip to `[lo, hi]`; the gradient is zero wherever the clip is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Elementwise Huber function with threshold `delta`.
    pub fn huber(&mut self, x: Var, delta: f64) -> Result<Var> {
        let f = move |v: f64| {
            let a = v.abs();
            if a <= delta {
                0.5 * v * v
            } else {
                delta * (a - 0.5 * delta)
            }
        };
        self.unary("huber", x, f, Op::Huber(x, delta))
    }

    /// Row-wise softmax of a matrix. Masked-out entries (`false`) get weight
    /// exactly 0; every row needs at least one unmasked entry.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if let Some(m) = mask {
            if m.len() != r * c {
                bail!(Shape, "softmax mask has {} entries for a {r}x{c} input", m.len());
            }
            if let Some(row) = (0..r).find(|&i| !m[i * c..(i + 1) * c].iter().any(|&k| k)) {
                bail!(Contract, "softmax row {row} is fully masked");
            }
        }
        let src = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            for (j, o) in row.iter_mut().enumerate() {
                // masked entries may hold -inf; never read them
                *o = if mask.is_none_or(|m| m[i * c + j]) { src[i * c + j] } else { 0.0 };
            }
            softmax_in_place(row, mask.map(|m| &m[i * c..(i + 1) * c]));
        }
        self.record("softmax_rows", vec![r, c], out, Op::SoftmaxRows(x), &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        self.record("log_softmax_rows", vec![r, c], out, Op::LogSoftmaxRows(x), &[x])
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let src = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * len + a) * inner + i];
                }
            }
        }
        if mean {
            let n = len.max(1) as f64;
            out.iter_mut().for_each(|v| *v /= n);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let op = if mean { Op::MeanAxis(x, axis) } else { Op::SumAxis(x, axis) };
        self.record(if mean { "mean" } else { "sum" }, out_shape, out, op, &[x])
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    /// Maximum along an axis; the gradient goes to the first argmax.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        if len == 0 {
            bail!(Shape, "max over empty axis");
        }
        let src = self.data(x);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    let v = src[(o * len + a) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = (o * len + a) * inner + i;
                    }
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.record("max", out_shape, out, Op::MaxAxis(x, arg), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.record("sum", Vec::new(), vec![s], Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        if d.is_empty() {
            bail!(Shape, "mean of empty tensor");
        }
        let m = d.iter().sum::<f64>() / d.len() as f64;
        self.record("mean", Vec::new(), vec![m], Op::MeanAll(x), &[x])
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, indices: Arc<[usize]>) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Index { index: bad, len: r });
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let n = indices.len();
        self.record("gather_rows", vec![n, c], out, Op::GatherRows(x, indices), &[x])
    }

    /// `out[indices[i]] += x[i]` into a zero matrix with `rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, indices: Arc<[usize]>, rows: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if indices.len() != r {
            bail!(Shape, "scatter_add_rows: {} indices for {r} rows", indices.len());
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Index { index: bad, len: rows });
        }
        let src = self.data(x);
        let mut out = vec![0.0; rows * c];
        for (k, &i) in indices.iter().enumerate() {
            for j in 0..c {
                out[i * c + j] += src[k * c + j];
            }
        }
        self.record("scatter_add_rows", vec![rows, c], out, Op::ScatterAddRows(x, indices), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            bail!(Shape, "concat of nothing");
        };
        let base = self.shape(first).to_vec();
        let (outer, _, inner) = axis_split(&base, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.record("concat", shape, out, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, full, inner) = axis_split(&shape, axis)?;
        if start + len > full {
            return Err(Error::Index { index: start + len, len: full });
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.record("slice", out_shape, out, Op::Slice(x, axis, start), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.record("transpose", vec![c, r], out, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        self.record("reshape", shape.to_vec(), data, Op::Reshape(x), &[x])
    }

    /// Scales row `i` of `x` (`n x d`) by `w[i]` (`w` is `n x 1`).
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if self.value(w).dims2()? != (n, 1) {
            return Err(shape_err("mul_col", self.shape(x), self.shape(w)));
        }
        let (xs, ws) = (self.data(x), self.data(w));
        let mut out = Vec::with_capacity(n * d);
        for (row, &wi) in xs.chunks_exact(d.max(1)).zip(ws) {
            out.extend(row.iter().map(|v| v * wi));
        }
        self.record("mul_col", vec![n, d], out, Op::MulCol(x, w), &[x, w])
    }

    /// Column-wise softmax over each contiguous row segment
    /// `offsets[s]..offsets[s + 1]`. Empty segments are allowed.
    pub fn segment_softmax(&mut self, x: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        validate_offsets(&offsets, r)?;
        let src = self.data(x);
        let mut out = vec![0.0; r * c];
        for w in offsets.windows(2) {
            let (a, b) = (w[0], w[1]);
            for j in 0..c {
                let max = (a..b).map(|i| src[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in a..b {
                    let e = libm::exp(src[i * c + j] - max);
                    out[i * c + j] = e;
                    total += e;
                }
                for i in a..b {
                    out[i * c + j] /= total;
                }
            }
        }
        self.record("segment_softmax", vec![r, c], out, Op::SegmentSoftmax(x, offsets), &[x])
    }

    fn segment_reduce(&mut self, x: Var, offsets: Arc<[usize]>, mean: bool) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        validate_offsets(&offsets, r)?;
        let segs = offsets.len() - 1;
        let src = self.data(x);
        let mut out = vec![0.0; segs * c];
        for (s, w) in offsets.windows(2).enumerate() {
            if mean && w[0] == w[1] {
                bail!(Shape, "mean over empty segment {s}");
            }
            let dst = &mut out[s * c..(s + 1) * c];
            for row in src[w[0] * c..w[1] * c].chunks_exact(c.max(1)) {
                dst.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            if mean {
                let n = (w[1] - w[0]) as f64;
                out[s * c..(s + 1) * c].iter_mut().for_each(|v| *v /= n);
            }
        }
        let op = if mean { Op::SegmentMean(x, offsets) } else { Op::SegmentSum(x, offsets) };
        self.record("segment_reduce", vec![segs, c], out, op, &[x])
    }

    /// Sums each row segment into one output row.
    pub fn segment_sum(&mut self, x: Var, offsets: Arc<[usize]>) -> Result<Var> {
        self.segment_reduce(x, offsets, false)
    }

    pub fn segment_mean(&mut self, x: Var, offsets: Arc<[usize]>) -> Result<Var> {
        self.segment_reduce(x, offsets, true)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` (population variance).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.data(x);
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            inv_std[i] = inv;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean) * inv;
            }
        }
        let out = xhat.clone();
        self.record("layer_norm", vec![r, c], out, Op::LayerNorm { x, xhat, inv_std }, &[x])
    }

    /// Multi-head scaled dot-product attention restricted to row segments.
    ///
    /// `q`, `k`, `v` are `n x (heads * d_k)`; rows in segment `s` attend only to
    /// rows in the same segment. Head `h` uses columns `h*d_k..(h+1)*d_k`.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, offsets: Arc<[usize]>, heads: usize) -> Result<Var> {
        let (n, d) = self.value(q).dims2()?;
        if self.value(k).dims2()? != (n, d) || self.value(v).dims2()? != (n, d) {
            return Err(shape_err("segment_attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            bail!(Shape, "model width {d} not divisible into {heads} heads");
        }
        validate_offsets(&offsets, n)?;
        let dk = d / heads;
        let scale = 1.0 / libm::sqrt(dk as f64);
        let (qs, ks, vs) = (self.data(q), self.data(k), self.data(v));
        let mut out = vec![0.0; n * d];
        let mut probs = Vec::new();
        let mut row = Vec::new();
        for w in offsets.windows(2) {
            let (a, b) = (w[0], w[1]);
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                for i in a..b {
                    row.clear();
                    let qi = &qs[i * d..][cols.clone()];
                    for j in a..b {
                        let kj = &ks[j * d..][cols.clone()];
                        row.push(scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>());
                    }
                    softmax_in_place(&mut row, None);
                    for (jj, &p) in row.iter().enumerate() {
                        let vj = &vs[(a + jj) * d..][cols.clone()];
                        for (o, &val) in out[i * d..][cols.clone()].iter_mut().zip(vj) {
                            *o += p * val;
                        }
                    }
                    probs.extend_from_slice(&row);
                }
            }
        }
        let op = Op::SegmentAttention { q, k, v, offsets, heads, probs };
        self.record("segment_attention", vec![n, d], out, op, &[q, k, v])
    }

    /// Reverse-mode gradients of a scalar `loss` for every parameter of
    /// `store`. Parameters not reachable from `loss` get zero gradients.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            bail!(Shape, "backward needs a scalar loss, got shape {:?}", self.shape(loss));
        }
        let mut result = Gradients::zeros_like(store);
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                let Some(target) = result.grads.get_mut(id.0) else {
                    bail!(Contract, "parameter {} is not in the store", id.0);
                };
                for (t, v) in target.data_mut().iter_mut().zip(&g) {
                    *t += v;
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(result)
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let nodes = &self.nodes;
        // Accumulates into a parent's gradient buffer if that parent needs one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                acc(a, &mut |da| gemm(m, n, k, g, false, self.data(b), true, 1.0, da));
                acc(b, &mut |db| gemm(k, m, n, self.data(a), true, g, false, 1.0, db));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |da| sum_reduce_into(g, da));
                acc(b, &mut |db| sum_reduce_into(g, db));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |da| sum_reduce_into(g, da));
                acc(b, &mut |db| {
                    for chunk in g.chunks_exact(db.len()) {
                        db.iter_mut().zip(chunk).for_each(|(t, gi)| *t -= gi);
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (xa, xb) = (self.data(a), self.data(b));
                acc(a, &mut |da| bcast_visit(g, da, xb, |t, gi, x| *t += gi * x));
                acc(b, &mut |db| bcast_visit(g, db, xa, |t, gi, x| *t += gi * x));
            }
            &Op::Minimum(a, b) => {
                let (xa, xb) = (self.data(a), self.data(b));
                let pick_a = |i: usize| xa[i % xa.len()] <= xb[i % xb.len()];
                acc(a, &mut |da| {
                    let n = da.len();
                    for (i, gi) in g.iter().enumerate() {
                        if pick_a(i) {
                            da[i % n] += gi;
                        }
                    }
                });
                acc(b, &mut |db| {
                    let n = db.len();
                    for (i, gi) in g.iter().enumerate() {
                        if !pick_a(i) {
                            db[i % n] += gi;
                        }
                    }
                });
            }
            &Op::Scale(x, f) => acc(x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, gi)| *d += f * gi)),
            &Op::Shift(x) | &Op::Reshape(x) => acc(x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi)),
            &Op::Exp(x) => acc(x, &mut |dx| {
                for i in 0..dx.len() {
                    dx[i] += g[i] * y[i];
                }
            }),
            &Op::Log(x) => {
                let xs = self.data(x);
                acc(x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] / xs[i];
                    }
                });
            }
            &Op::Tanh(x) => acc(x, &mut |dx| {
                for i in 0..dx.len() {
                    dx[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }),
            &Op::LeakyRelu(x, slope) => {
                let xs = self.data(x);
                acc(x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * if xs[i] > 0.0 { 1.0 } else { slope };
                    }
                });
            }
            &Op::Elu(x) => {
                let xs = self.data(x);
                acc(x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * if xs[i] > 0.0 { 1.0 } else { y[i] + 1.0 };
                    }
                });
            }
            &Op::Clamp(x, lo, hi) => {
                let xs = self.data(x);
                acc(x, &mut |dx| {
                    for i in 0..dx.len() {
                        if xs[i] > lo && xs[i] < hi {
                            dx[i] += g[i];
                        }
                    }
                });
            }
            &Op::Huber(x, delta) => {
                let xs = self.data(x);
                acc(x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * xs[i].clamp(-delta, delta);
                    }
                });
            }
            &Op::SoftmaxRows(x) => {
                let c = self.shape(x)[1];
                acc(x, &mut |dx| {
                    for (row, (yr, gr)) in dx.chunks_mut(c).zip(y.chunks(c).zip(g.chunks(c))) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            row[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            &Op::LogSoftmaxRows(x) => {
                let c = self.shape(x)[1];
                acc(x, &mut |dx| {
                    for (row, (yr, gr)) in dx.chunks_mut(c).zip(y.chunks(c).zip(g.chunks(c))) {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            row[j] += gr[j] - libm::exp(yr[j]) * total;
                        }
                    }
                });
            }
            &Op::SumAxis(x, axis) | &Op::MeanAxis(x, axis) => {
                let (outer, len, inner) = axis_split(self.shape(x), axis).expect("validated in forward");
                let scale = if matches!(node.op, Op::MeanAxis(..)) { 1.0 / len.max(1) as f64 } else { 1.0 };
                acc(x, &mut |dx| {
                    for o in 0..outer {
                        for a in 0..len {
                            for i in 0..inner {
                                dx[(o * len + a) * inner + i] += scale * g[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::MaxAxis(x, arg) => acc(*x, &mut |dx| {
                for (k, &src) in arg.iter().enumerate() {
                    dx[src] += g[k];
                }
            }),
            &Op::SumAll(x) => acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            &Op::MeanAll(x) => acc(x, &mut |dx| {
                let s = g[0] / dx.len() as f64;
                dx.iter_mut().for_each(|d| *d += s);
            }),
            Op::GatherRows(x, indices) => {
                let c = self.shape(*x)[1];
                acc(*x, &mut |dx| {
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            dx[i * c + j] += g[k * c + j];
                        }
                    }
                });
            }
            Op::ScatterAddRows(x, indices) => {
                let c = self.shape(*x)[1];
                acc(*x, &mut |dx| {
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            dx[k * c + j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let total = node.value.shape()[*axis];
                let (outer, _, inner) = axis_split(node.value.shape(), *axis).expect("validated in forward");
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    acc(p, &mut |dp| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (d, s) in dp[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    offset += len;
                }
            }
            &Op::Slice(x, axis, start) => {
                let (outer, full, inner) = axis_split(self.shape(x), axis).expect("validated in forward");
                let len = node.value.shape()[axis];
                acc(x, &mut |dx| {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        for (d, s) in dx[base..base + len * inner].iter_mut().zip(&g[o * len * inner..]) {
                            *d += s;
                        }
                    }
                });
            }
            &Op::Transpose(x) => {
                let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
                acc(x, &mut |dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            &Op::MulCol(x, w) => {
                let d = self.shape(x)[1];
                let (xs, ws) = (self.data(x), self.data(w));
                if d > 0 {
                    acc(x, &mut |dx| {
                        for ((dr, gr), &wi) in dx.chunks_exact_mut(d).zip(g.chunks_exact(d)).zip(ws) {
                            dr.iter_mut().zip(gr).for_each(|(t, gi)| *t += gi * wi);
                        }
                    });
                    acc(w, &mut |dw| {
                        for ((t, gr), xr) in dw.iter_mut().zip(g.chunks_exact(d)).zip(xs.chunks_exact(d)) {
                            *t += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    });
                }
            }
            Op::SegmentSoftmax(x, offsets) => {
                let c = self.shape(*x)[1];
                acc(*x, &mut |dx| {
                    for w in offsets.windows(2) {
                        for j in 0..c {
                            let dot: f64 = (w[0]..w[1]).map(|i| y[i * c + j] * g[i * c + j]).sum();
                            for i in w[0]..w[1] {
                                dx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                            }
                        }
                    }
                });
            }
            Op::SegmentSum(x, offsets) | Op::SegmentMean(x, offsets) => {
                let c = self.shape(*x)[1];
                let mean = matches!(node.op, Op::SegmentMean(..));
                acc(*x, &mut |dx| {
                    for (s, w) in offsets.windows(2).enumerate() {
                        let f = if mean { 1.0 / (w[1] - w[0]) as f64 } else { 1.0 };
                        for i in w[0]..w[1] {
                            for j in 0..c {
                                dx[i * c + j] += f * g[s * c + j];
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let c = self.shape(*x)[1];
                acc(*x, &mut |dx| {
                    for (i, inv) in inv_std.iter().enumerate() {
                        let gr = &g[i * c..(i + 1) * c];
                        let xr = &xhat[i * c..(i + 1) * c];
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            dx[i * c + j] += inv * (gr[j] - mg - xr[j] * mgx);
                        }
                    }
                });
            }
            Op::SegmentAttention { q, k, v, offsets, heads, probs } => {
                self.attention_backward(g, *q, *k, *v, offsets, *heads, probs, grads);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        offsets: &[usize],
        heads: usize,
        probs: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (n, d) = (self.shape(q)[0], self.shape(q)[1]);
        let dk = d / heads;
        let scale = 1.0 / libm::sqrt(dk as f64);
        let (qs, ks, vs) = (self.data(q), self.data(k), self.data(v));
        let mut dq = vec![0.0; n * d];
        let mut dkk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut p_off = 0;
        let mut dp = Vec::new();
        for w in offsets.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = b - a;
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                for i in a..b {
                    let p = &probs[p_off..p_off + len];
                    p_off += len;
                    let gi = &g[i * d..][cols.clone()];
                    dp.clear();
                    for j in a..b {
                        let vj = &vs[j * d..][cols.clone()];
                        dp.push(gi.iter().zip(vj).map(|(x, y)| x * y).sum::<f64>());
                        let pij = p[j - a];
                        for (t, &gx) in dv[j * d..][cols.clone()].iter_mut().zip(gi) {
                            *t += pij * gx;
                        }
                    }
                    let dot: f64 = p.iter().zip(&dp).map(|(x, y)| x * y).sum();
                    for j in a..b {
                        let ds = p[j - a] * (dp[j - a] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in cols.clone() {
                            dq[i * d + c] += ds * ks[j * d + c];
                            dkk[j * d + c] += ds * qs[i * d + c];
                        }
                    }
                }
            }
        }
        for (var, delta) in [(q, dq), (k, dkk), (v, dv)] {
            if !self.needs(var) {
                continue;
            }
            match &mut grads[var.0] {
                Some(buf) => buf.iter_mut().zip(&delta).for_each(|(b, x)| *b += x),
                slot @ None => *slot = Some(delta),
            }
        }
    }
}
