//! Differentiable primitives recorded on a [`Tape`].

use super::{axis_split, gemm, BackwardCtx, Float, Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// matrix products

struct MatMul {
    batch: usize,
    m: usize,
    p: usize,
    n: usize,
}

impl<T: Float> Op<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (a, b, g) = (ctx.input(0), ctx.input(1), ctx.grad());
        let (m, p, n) = (self.m, self.p, self.n);
        let da = ctx.needs(0).then(|| {
            let mut da = Tensor::zeros(a.shape().to_vec());
            for s in 0..self.batch {
                gemm(
                    false,
                    true,
                    m,
                    p,
                    n,
                    T::one(),
                    &g.data()[s * m * n..],
                    &b.data()[s * p * n..],
                    T::zero(),
                    &mut da.data_mut()[s * m * p..],
                );
            }
            da
        });
        let db = ctx.needs(1).then(|| {
            let mut db = Tensor::zeros(b.shape().to_vec());
            for s in 0..self.batch {
                gemm(
                    true,
                    false,
                    p,
                    n,
                    m,
                    T::one(),
                    &a.data()[s * m * p..],
                    &g.data()[s * m * n..],
                    T::zero(),
                    &mut db.data_mut()[s * p * n..],
                );
            }
            db
        });
        vec![da, db]
    }
}

struct Permute {
    inverse: Vec<usize>,
}

fn permute_tensor<T: Float>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    // Stride in the input for a unit step along each output axis.
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; nd];
    let src = x.data();
    let mut offset = 0usize;
    for _ in 0..x.numel() {
        out.push(src[offset]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permute preserves element count")
}

impl<T: Float> Op<T> for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        vec![ctx
            .needs(0)
            .then(|| permute_tensor(ctx.grad(), &self.inverse))]
    }
}

// ---------------------------------------------------------------------------
// elementwise

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct Elementwise(Binary);

impl<T: Float> Op<T> for Elementwise {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx.grad();
        match self.0 {
            Binary::Add => vec![
                ctx.needs(0).then(|| g.clone()),
                ctx.needs(1).then(|| g.clone()),
            ],
            Binary::Sub => vec![ctx.needs(0).then(|| g.clone()), ctx.needs(1).then(|| g.map(|x| -x))],
            Binary::Mul => {
                let (a, b) = (ctx.input(0), ctx.input(1));
                let prod = |other: &Tensor<T>| {
                    Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(other.data()).map(|(&u, &v)| u * v).collect(),
                    )
                    .expect("same shape")
                };
                vec![ctx.needs(0).then(|| prod(b)), ctx.needs(1).then(|| prod(a))]
            }
        }
    }
}

struct ScaleBy;

impl<T: Float> Op<T> for ScaleBy {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (x, s, g) = (ctx.input(0), ctx.input(1), ctx.grad());
        let sv = s.data()[0];
        let dx = ctx.needs(0).then(|| g.map(|v| v * sv));
        let ds = ctx.needs(1).then(|| {
            let acc: T = g.data().iter().zip(x.data()).map(|(&u, &v)| u * v).sum();
            Tensor::new(s.shape().to_vec(), vec![acc]).expect("scalar")
        });
        vec![dx, ds]
    }
}

struct MulConst<T>(T);

impl<T: Float> Op<T> for MulConst<T> {
    fn name(&self) -> &'static str {
        "mul_const"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let c = self.0;
        vec![ctx.needs(0).then(|| ctx.grad().map(|v| v * c))]
    }
}

/// Leaky rectifier `max(x, slope·x)`; also usable as a standalone op.
pub struct LeakyRelu<T> {
    pub slope: T,
}

impl<T: Float> Op<T> for LeakyRelu<T> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.input(0);
        let s = self.slope;
        vec![ctx.needs(0).then(|| {
            let data = ctx
                .grad()
                .data()
                .iter()
                .zip(x.data())
                .map(|(&g, &v)| if v > T::zero() { g } else { g * s })
                .collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        })]
    }
}

// ---------------------------------------------------------------------------
// reductions

/// Argmax slot along the reduced axis for every output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxIndices(pub Vec<usize>);

struct ReduceMax {
    len: usize,
    inner: usize,
    argmax: Vec<usize>,
}

impl<T: Float> Op<T> for ReduceMax {
    fn name(&self) -> &'static str {
        "reduce_max"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.input(0);
        vec![ctx.needs(0).then(|| {
            let mut dx = Tensor::zeros(x.shape().to_vec());
            let d = dx.data_mut();
            for (j, (&g, &a)) in ctx.grad().data().iter().zip(&self.argmax).enumerate() {
                let (o, i) = (j / self.inner, j % self.inner);
                d[(o * self.len + a) * self.inner + i] += g;
            }
            dx
        })]
    }
}

struct ReduceMean {
    len: usize,
    inner: usize,
}

impl<T: Float> Op<T> for ReduceMean {
    fn name(&self) -> &'static str {
        "reduce_mean"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.input(0);
        let scale = T::one() / T::lit(self.len as f64);
        vec![ctx.needs(0).then(|| {
            let g = ctx.grad().data();
            let (len, inner) = (self.len, self.inner);
            Tensor::from_fn(x.shape().to_vec(), |idx| {
                let o = idx / (len * inner);
                let i = idx % inner;
                g[o * inner + i] * scale
            })
        })]
    }
}

struct SumAll;

impl<T: Float> Op<T> for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx.grad().data()[0];
        vec![ctx
            .needs(0)
            .then(|| Tensor::full(ctx.input(0).shape().to_vec(), g))]
    }
}

struct Softmax {
    len: usize,
    inner: usize,
}

impl<T: Float> Op<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        if !ctx.needs(0) {
            return vec![None];
        }
        let (y, g) = (ctx.output().data(), ctx.grad().data());
        let (len, inner) = (self.len, self.inner);
        let outer = y.len() / (len * inner).max(1);
        let mut dx = vec![T::zero(); y.len()];
        // walk the strided slices row by row so memory is read contiguously
        let mut dot = vec![T::zero(); inner];
        for o in 0..outer {
            let block = o * len * inner..(o + 1) * len * inner;
            let (yb, gb) = (&y[block.clone()], &g[block.clone()]);
            dot.fill(T::zero());
            for (yr, gr) in yb.chunks_exact(inner).zip(gb.chunks_exact(inner)) {
                for ((d, &yv), &gv) in dot.iter_mut().zip(yr).zip(gr) {
                    *d += gv * yv;
                }
            }
            let rows = dx[block].chunks_exact_mut(inner);
            for ((dr, yr), gr) in rows.zip(yb.chunks_exact(inner)).zip(gb.chunks_exact(inner)) {
                for (((dv, &yv), &gv), &d) in dr.iter_mut().zip(yr).zip(gr).zip(&dot) {
                    *dv = yv * (gv - d);
                }
            }
        }
        vec![Some(
            Tensor::new(ctx.output().shape().to_vec(), dx).expect("same shape"),
        )]
    }
}

/// `out[.., i, j] = max_r x[.., r, j] - x[.., i, j]` over the last two axes.
struct ColumnMaxMinus {
    rows: usize,
    cols: usize,
    argmax: Vec<usize>,
}

impl<T: Float> Op<T> for ColumnMaxMinus {
    fn name(&self) -> &'static str {
        "column_max_minus"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        if !ctx.needs(0) {
            return vec![None];
        }
        let g = ctx.grad().data();
        let (rows, cols) = (self.rows, self.cols);
        let mut dx: Vec<T> = g.iter().map(|&v| -v).collect();
        for b in 0..g.len() / (rows * cols) {
            let base = b * rows * cols;
            let mut col = vec![T::zero(); cols];
            for row in g[base..base + rows * cols].chunks_exact(cols) {
                for (c, &v) in col.iter_mut().zip(row) {
                    *c += v;
                }
            }
            for (j, c) in col.into_iter().enumerate() {
                dx[base + self.argmax[b * cols + j] * cols + j] += c;
            }
        }
        vec![Some(
            Tensor::new(ctx.input(0).shape().to_vec(), dx).expect("same shape"),
        )]
    }
}

// ---------------------------------------------------------------------------
// structural

struct Concat {
    lens: Vec<usize>,
    inner: usize,
}

impl<T: Float> Op<T> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx.grad().data();
        let total: usize = self.lens.iter().sum();
        let outer = g.len() / (total * self.inner);
        let mut start = 0;
        let mut out = Vec::with_capacity(self.lens.len());
        for (k, &len) in self.lens.iter().enumerate() {
            if ctx.needs(k) {
                let block = len * self.inner;
                let mut d = Vec::with_capacity(outer * block);
                for o in 0..outer {
                    let from = (o * total + start) * self.inner;
                    d.extend_from_slice(&g[from..from + block]);
                }
                out.push(Some(
                    Tensor::new(ctx.input(k).shape().to_vec(), d).expect("same shape"),
                ));
            } else {
                out.push(None);
            }
            start += len;
        }
        out
    }
}

struct Slice {
    start: usize,
    len: usize,
    full: usize,
    inner: usize,
}

impl<T: Float> Op<T> for Slice {
    fn name(&self) -> &'static str {
        "slice"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.input(0);
        vec![ctx.needs(0).then(|| {
            let mut dx = Tensor::zeros(x.shape().to_vec());
            let g = ctx.grad().data();
            let block = self.len * self.inner;
            let outer = x.numel() / (self.full * self.inner);
            let d = dx.data_mut();
            for o in 0..outer {
                let to = (o * self.full + self.start) * self.inner;
                d[to..to + block].copy_from_slice(&g[o * block..(o + 1) * block]);
            }
            dx
        })]
    }
}

struct Reshape;

impl<T: Float> Op<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        vec![ctx.needs(0).then(|| {
            ctx.grad()
                .clone()
                .reshaped(ctx.input(0).shape().to_vec())
                .expect("same element count")
        })]
    }
}

// ---------------------------------------------------------------------------

impl<T: Float> Tape<T> {
    /// Matrix product `[m×p]·[p×n]`, or batched `[B×m×p]·[B×p×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let dims = match (sa.as_slice(), sb.as_slice()) {
            ([m, p], [q, n]) if p == q => (1, *m, *p, *n),
            ([b1, m, p], [b2, q, n]) if p == q && b1 == b2 => (*b1, *m, *p, *n),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        let (batch, m, p, n) = dims;
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for s in 0..batch {
                gemm(
                    false,
                    false,
                    m,
                    n,
                    p,
                    T::one(),
                    &av[s * m * p..],
                    &bv[s * p * n..],
                    T::zero(),
                    &mut out[s * m * n..],
                );
            }
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(MatMul { batch, m, p, n }, &[a, b], value))
    }

    /// Reorders axes: output axis `d` is input axis `axes[d]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let nd = self.shape(x).len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid(
                "permute",
                format!("{axes:?} is not a permutation of {nd} axes"),
            ));
        }
        let mut inverse = vec![0; nd];
        for (d, &a) in axes.iter().enumerate() {
            inverse[a] = d;
        }
        let value = permute_tensor(self.value(x), axes);
        Ok(self.push(Permute { inverse }, &[x], value))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd < 2 {
            return Err(Error::invalid("transpose", "needs at least two axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(x, &axes)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary, name: &'static str) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(name, va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Elementwise(kind), &[a, b], value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul, "mul")
    }

    /// `s · x` for a one-element tensor `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.numel() != 1 {
            return Err(Error::shape("scale", self.shape(x), sv.shape()));
        }
        let k = sv.data()[0];
        let value = self.value(x).map(|v| v * k);
        Ok(self.push(ScaleBy, &[x, s], value))
    }

    pub fn mul_const(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(MulConst(c), &[x], value)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        if self.tracks_branches() {
            let signs: Vec<bool> = self.value(x).data().iter().map(|&v| v > T::zero()).collect();
            self.note_branch(&signs);
        }
        self.push(LeakyRelu { slope }, &[x], value)
    }

    /// Maximum along `axis` (removed from the shape). Ties go to the lowest
    /// index; the gradient flows only to the selected slot.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<(Var, MaxIndices)> {
        let shape = self.shape(x).to_vec();
        check_axis("reduce_max", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        if len == 0 {
            return Err(Error::invalid("reduce_max", "cannot reduce an empty axis"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let (mut best, mut at) = (src[base], 0);
                for a in 1..len {
                    let v = src[base + a * inner];
                    if v > best {
                        best = v;
                        at = a;
                    }
                }
                out.push(best);
                argmax.push(at);
            }
        }
        self.note_branch(&argmax);
        let mut oshape = shape.clone();
        oshape.remove(axis);
        let value = Tensor::new(oshape, out)?;
        let idx = MaxIndices(argmax.clone());
        let v = self.push(ReduceMax { len, inner, argmax }, &[x], value);
        Ok((v, idx))
    }

    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("reduce_mean", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        if len == 0 {
            return Err(Error::invalid("reduce_mean", "cannot reduce an empty axis"));
        }
        let src = self.value(x).data();
        let scale = T::one() / T::lit(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let row = &src[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        for v in &mut out {
            *v *= scale;
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(ReduceMean { len, inner }, &[x], value))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(SumAll, &[x], Tensor::scalar(s))
    }

    /// Softmax along `axis`, stabilised by subtracting the slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("softmax", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let mut mx = vec![T::zero(); inner];
        let mut total = vec![T::zero(); inner];
        let outer = if src.is_empty() { 0 } else { outer };
        for o in 0..outer {
            let block = o * len * inner..(o + 1) * len * inner;
            let (sb, ob) = (&src[block.clone()], &mut out[block]);
            mx.fill(T::neg_infinity());
            total.fill(T::zero());
            for row in sb.chunks_exact(inner) {
                for (m, &v) in mx.iter_mut().zip(row) {
                    *m = m.max(v);
                }
            }
            for (orow, row) in ob.chunks_exact_mut(inner).zip(sb.chunks_exact(inner)) {
                for (((e, &v), &m), t) in orow.iter_mut().zip(row).zip(&mx).zip(total.iter_mut()) {
                    *e = (v - m).exp();
                    *t += *e;
                }
            }
            for orow in ob.chunks_exact_mut(inner) {
                for (e, &t) in orow.iter_mut().zip(&total) {
                    *e /= t;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Softmax { len, inner }, &[x], value))
    }

    /// Column maximum broadcast down the rows, minus the input, over the
    /// last two axes of `x`.
    pub fn column_max_minus(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::invalid("column_max_minus", "needs a matrix"));
        }
        let (rows, cols) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if rows == 0 {
            return Err(Error::invalid("column_max_minus", "no rows"));
        }
        let src = self.value(x).data();
        let mats = src.len() / (rows * cols).max(1);
        let mut argmax = Vec::with_capacity(mats * cols);
        let mut out = vec![T::zero(); src.len()];
        for b in 0..mats {
            let block = b * rows * cols..(b + 1) * rows * cols;
            let m = &src[block.clone()];
            let mut best = m[..cols].to_vec();
            let mut at = vec![0usize; cols];
            for (i, row) in m.chunks_exact(cols).enumerate().skip(1) {
                for ((bv, a), &v) in best.iter_mut().zip(at.iter_mut()).zip(row) {
                    if v > *bv {
                        *bv = v;
                        *a = i;
                    }
                }
            }
            for (orow, row) in out[block].chunks_exact_mut(cols).zip(m.chunks_exact(cols)) {
                for ((e, &v), &bv) in orow.iter_mut().zip(row).zip(&best) {
                    *e = bv - v;
                }
            }
            argmax.extend(at);
        }
        self.note_branch(&argmax);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(ColumnMaxMinus { rows, cols, argmax }, &[x], value))
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::invalid("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut lens = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            let same = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(Error::shape("concat", &base, s));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &len) in xs.iter().zip(&lens) {
                let block = len * inner;
                out.extend_from_slice(&self.value(x).data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Concat { lens, inner }, xs, value))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("slice", &shape, axis)?;
        if start + len > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} exceeds axis length {}", start + len, shape[axis]),
            ));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(Slice { start, len, full, inner }, &[x], value))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(Reshape, &[x], value))
    }
}
