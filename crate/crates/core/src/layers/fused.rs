//! Fused kernels used by the layers. Each one is algebraically identical to
//! a chain of tape primitives but keeps fewer large intermediates alive.

use crate::error::{Error, Result};
use crate::geometry::BatchNeighbors;
use crate::tensor::{gemm, BackwardCtx, Float, Op, Tape, Tensor, Var};

// ---------------------------------------------------------------------------
// affine map over the trailing (flattened) axes

struct Linear {
    rows: usize,
    k: usize,
    c_out: usize,
}

impl<T: Float> Op<T> for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (x, w, g) = (ctx.input(0), ctx.input(1), ctx.grad().data());
        let (r, k, c) = (self.rows, self.k, self.c_out);
        let gx = ctx.needs(0).then(|| {
            let mut gx = Tensor::zeros(x.shape().to_vec());
            gemm(false, false, r, k, c, T::one(), g, w.data(), T::zero(), gx.data_mut());
            gx
        });
        let gw = ctx.needs(1).then(|| {
            let mut gw = Tensor::zeros(w.shape().to_vec());
            gemm(true, false, c, k, r, T::one(), g, x.data(), T::zero(), gw.data_mut());
            gw
        });
        let gb = ctx.needs(2).then(|| column_sums(g, c, ctx.input(2).shape()));
        vec![gx, gw, gb]
    }
}

fn column_sums<T: Float>(g: &[T], c: usize, shape: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(shape.to_vec());
    let o = out.data_mut();
    for row in g.chunks_exact(c) {
        for (a, &v) in o.iter_mut().zip(row) {
            *a += v;
        }
    }
    out
}

/// `y = x·Wᵀ + b`, where the last `fold` axes of `x` are flattened into one
/// input vector of length `K` and `w` holds `c_out × K` values in any shape.
pub fn linear<T: Float>(tape: &mut Tape<T>, x: Var, w: Var, b: Var, fold: usize) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let c_out = tape.value(b).numel();
    if fold == 0 || fold > xs.len() {
        return Err(Error::invalid("linear", format!("cannot fold {fold} axes of {xs:?}")));
    }
    let split = xs.len() - fold;
    let k: usize = xs[split..].iter().product();
    let rows: usize = xs[..split].iter().product();
    if tape.value(w).numel() != c_out * k {
        return Err(Error::shape("linear", &xs, tape.shape(w)));
    }
    let mut out = vec![T::zero(); rows * c_out];
    gemm(
        false,
        true,
        rows,
        c_out,
        k,
        T::one(),
        tape.value(x).data(),
        tape.value(w).data(),
        T::zero(),
        &mut out,
    );
    let bias = tape.value(b).data();
    for row in out.chunks_exact_mut(c_out) {
        for (v, &bb) in row.iter_mut().zip(bias) {
            *v += bb;
        }
    }
    let mut shape = xs[..split].to_vec();
    shape.push(c_out);
    let value = Tensor::new(shape, out)?;
    Ok(tape.push(Linear { rows, k, c_out }, &[x, w, b], value))
}

// ---------------------------------------------------------------------------
// batch normalization followed by an optional leaky rectifier

/// Per-channel statistics used by one normalization call.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Biased variance (the one used for normalization).
    pub var: Vec<f64>,
    /// Number of positions reduced per channel.
    pub count: usize,
}

/// Mean and biased variance of every channel of a `[.., C]` buffer,
/// accumulated in double precision.
pub fn channel_stats<T: Float>(z: &[T], c: usize) -> ChannelStats {
    let count = z.len() / c.max(1);
    let mut mean = vec![0.0f64; c];
    for row in z.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v.as_f64();
        }
    }
    let inv = 1.0 / count.max(1) as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut var = vec![0.0f64; c];
    for row in z.chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.as_f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s *= inv);
    ChannelStats { mean, var, count }
}

struct BnAct<T> {
    c: usize,
    mean: Vec<T>,
    istd: Vec<T>,
    /// Normalization statistics depend on the batch (train mode).
    batch_stats: bool,
    slope: Option<T>,
}

impl<T: Float> Op<T> for BnAct<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (z, gamma, beta) = (ctx.input(0).data(), ctx.input(1).data(), ctx.input(2).data());
        let g = ctx.grad().data();
        let c = self.c;
        let count = z.len() / c;
        // gradient w.r.t. the pre-activation, and the affine parameter sums
        let mut gpre = vec![T::zero(); z.len()];
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for ((zr, gr), pr) in z.chunks_exact(c).zip(g.chunks_exact(c)).zip(gpre.chunks_exact_mut(c)) {
            for ch in 0..c {
                let xh = (zr[ch] - self.mean[ch]) * self.istd[ch];
                let mut gp = gr[ch];
                if let Some(s) = self.slope {
                    if gamma[ch] * xh + beta[ch] <= T::zero() {
                        gp *= s;
                    }
                }
                pr[ch] = gp;
                ggamma[ch] += gp * xh;
                gbeta[ch] += gp;
            }
        }
        let gz = ctx.needs(0).then(|| {
            let mut out = gpre.clone();
            if self.batch_stats {
                let inv = T::one() / T::lit(count as f64);
                for (zr, orow) in z.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
                    for ch in 0..c {
                        let xh = (zr[ch] - self.mean[ch]) * self.istd[ch];
                        orow[ch] = gamma[ch]
                            * self.istd[ch]
                            * (orow[ch] - gbeta[ch] * inv - xh * ggamma[ch] * inv);
                    }
                }
            } else {
                for orow in out.chunks_exact_mut(c) {
                    for ch in 0..c {
                        orow[ch] *= gamma[ch] * self.istd[ch];
                    }
                }
            }
            Tensor::new(ctx.input(0).shape().to_vec(), out).expect("same shape")
        });
        let shape = ctx.input(1).shape().to_vec();
        vec![
            gz,
            ctx.needs(1).then(|| Tensor::new(shape.clone(), ggamma).expect("channel shape")),
            ctx.needs(2).then(|| Tensor::new(shape, gbeta).expect("channel shape")),
        ]
    }
}

/// `act(γ·(z − mean)/sqrt(var + eps) + β)` over the trailing channel axis.
/// `batch_stats` marks `mean`/`var` as computed from `z` itself, which adds
/// their dependence on `z` to the gradient.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_act<T: Float>(
    tape: &mut Tape<T>,
    z: Var,
    gamma: Var,
    beta: Var,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    batch_stats: bool,
    slope: Option<f64>,
) -> Result<Var> {
    let c = tape.value(gamma).numel();
    let zs = tape.shape(z);
    if zs.last() != Some(&c) || tape.value(beta).numel() != c || mean.len() != c || var.len() != c {
        return Err(Error::shape("batch_norm", zs, tape.shape(gamma)));
    }
    let mean_t: Vec<T> = mean.iter().map(|&m| T::lit(m)).collect();
    let istd: Vec<T> = var.iter().map(|&v| T::lit(1.0 / (v + eps).sqrt())).collect();
    let slope_t = slope.map(T::lit);
    let (g, b) = (tape.value(gamma).data(), tape.value(beta).data());
    let src = tape.value(z).data();
    let mut out = vec![T::zero(); src.len()];
    let mut signs = Vec::new();
    let track = tape.tracks_branches() && slope.is_some();
    for (zr, orow) in src.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        for ch in 0..c {
            let pre = g[ch] * ((zr[ch] - mean_t[ch]) * istd[ch]) + b[ch];
            orow[ch] = match slope_t {
                Some(s) if pre <= T::zero() => pre * s,
                _ => pre,
            };
            if track {
                signs.push(pre > T::zero());
            }
        }
    }
    if track {
        tape.note_branch(&signs);
    }
    let value = Tensor::new(tape.shape(z).to_vec(), out)?;
    Ok(tape.push(
        BnAct {
            c,
            mean: mean_t,
            istd,
            batch_stats,
            slope: slope_t,
        },
        &[z, gamma, beta],
        value,
    ))
}

// ---------------------------------------------------------------------------
// affine map of edge features without materializing them

fn split_edge_weight<T: Float>(w: &[T], c_out: usize, d: usize) -> (Vec<T>, Vec<T>) {
    let mut wd = vec![T::zero(); c_out * d];
    let mut w2 = vec![T::zero(); c_out * d];
    for o in 0..c_out {
        for c in 0..d {
            let (a, b) = (w[o * 2 * d + c], w[o * 2 * d + d + c]);
            wd[o * d + c] = a - b;
            w2[o * d + c] = b;
        }
    }
    (wd, w2)
}

struct EdgeLinear {
    nbr: BatchNeighbors,
    d: usize,
    c_out: usize,
}

impl<T: Float> Op<T> for EdgeLinear {
    fn name(&self) -> &'static str {
        "edge_linear"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (x, w, g) = (ctx.input(0).data(), ctx.input(1).data(), ctx.grad().data());
        let (d, c, k) = (self.d, self.c_out, self.nbr.k);
        let rows = x.len() / d;
        // gu: gradient reaching the centre term, gv: the neighbor term
        let mut gu = vec![T::zero(); rows * c];
        let mut gv = vec![T::zero(); rows * c];
        for r in 0..rows {
            for s in 0..k {
                let j = self.nbr.rows[r * k + s];
                let gs = &g[(r * k + s) * c..(r * k + s + 1) * c];
                for o in 0..c {
                    gu[r * c + o] += gs[o];
                    gv[j * c + o] += gs[o];
                }
            }
        }
        let (wd, w2) = split_edge_weight(w, c, d);
        let gx = ctx.needs(0).then(|| {
            let mut gx = vec![T::zero(); rows * d];
            gemm(false, false, rows, d, c, T::one(), &gu, &wd, T::zero(), &mut gx);
            gemm(false, false, rows, d, c, T::one(), &gv, &w2, T::one(), &mut gx);
            Tensor::new(ctx.input(0).shape().to_vec(), gx).expect("same shape")
        });
        let gw = ctx.needs(1).then(|| {
            let mut gwd = vec![T::zero(); c * d];
            let mut gw2 = vec![T::zero(); c * d];
            gemm(true, false, c, d, rows, T::one(), &gu, x, T::zero(), &mut gwd);
            gemm(true, false, c, d, rows, T::one(), &gv, x, T::zero(), &mut gw2);
            let mut gw = vec![T::zero(); c * 2 * d];
            for o in 0..c {
                for ch in 0..d {
                    gw[o * 2 * d + ch] = gwd[o * d + ch];
                    gw[o * 2 * d + d + ch] = gw2[o * d + ch] - gwd[o * d + ch];
                }
            }
            Tensor::new(ctx.input(1).shape().to_vec(), gw).expect("same shape")
        });
        let gb = ctx.needs(2).then(|| column_sums(&gu, c, ctx.input(2).shape()));
        vec![gx, gw, gb]
    }
}

/// Affine map `W·[x_i, x_j − x_i] + b` for every point and neighbor slot.
/// `x` is `[B,N,d]`, `w` is `[C, 2d]`; the output is `[B,N,k,C]`.
///
/// Computed as `x_i·(W₁ − W₂)ᵀ + x_j·W₂ᵀ + b`, so the `2d`-wide edge
/// tensor is never built.
pub fn edge_linear<T: Float>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Var,
    nbr: &BatchNeighbors,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let (c_out, d) = edge_dims("edge_linear", tape, &xs, w, b, nbr, 1)?;
    let rows = nbr.batch * nbr.n;
    let k = nbr.k;
    let (wd, w2) = split_edge_weight(tape.value(w).data(), c_out, d);
    let xv = tape.value(x).data();
    let mut u = vec![T::zero(); rows * c_out];
    let mut v = vec![T::zero(); rows * c_out];
    gemm(false, true, rows, c_out, d, T::one(), xv, &wd, T::zero(), &mut u);
    gemm(false, true, rows, c_out, d, T::one(), xv, &w2, T::zero(), &mut v);
    let bias = tape.value(b).data();
    let mut out = vec![T::zero(); rows * k * c_out];
    for r in 0..rows {
        for s in 0..k {
            let j = nbr.rows[r * k + s];
            let o = &mut out[(r * k + s) * c_out..(r * k + s + 1) * c_out];
            for ch in 0..c_out {
                o[ch] = u[r * c_out + ch] + v[j * c_out + ch] + bias[ch];
            }
        }
    }
    tape.note_branch(&nbr.rows);
    let value = Tensor::new([nbr.batch, nbr.n, k, c_out], out)?;
    Ok(tape.push(
        EdgeLinear {
            nbr: nbr.clone(),
            d,
            c_out,
        },
        &[x, w, b],
        value,
    ))
}

fn edge_dims<T: Float>(
    op: &'static str,
    tape: &Tape<T>,
    xs: &[usize],
    w: Var,
    b: Var,
    nbr: &BatchNeighbors,
    slots: usize,
) -> Result<(usize, usize)> {
    let d = match *xs {
        [bb, n, d] if bb == nbr.batch && n == nbr.n => d,
        _ => {
            return Err(Error::invalid(
                op,
                format!(
                    "features {xs:?} do not match a graph over {}×{} points",
                    nbr.batch, nbr.n
                ),
            ))
        }
    };
    let c_out = tape.value(b).numel();
    if tape.value(w).numel() != c_out * 2 * d * slots {
        return Err(Error::shape(op, xs, tape.shape(w)));
    }
    Ok((c_out, d))
}

/// Rows `G[r, s·d + c] = x[nbr(r, s), c]`.
fn gather_neighbors<T: Float>(x: &[T], d: usize, nbr: &BatchNeighbors) -> Vec<T> {
    let rows = nbr.batch * nbr.n;
    let k = nbr.k;
    let mut g = vec![T::zero(); rows * k * d];
    for r in 0..rows {
        for s in 0..k {
            let j = nbr.rows[r * k + s];
            g[(r * k + s) * d..(r * k + s + 1) * d].copy_from_slice(&x[j * d..(j + 1) * d]);
        }
    }
    g
}

/// Centre and neighbor blocks of an edge-LFC weight `[C, 2d, k]`:
/// `A[o,c] = Σ_s W[o,c,s] − W[o,d+c,s]` and `Bm[o, s·d+c] = W[o,d+c,s]`.
fn split_lfc_weight<T: Float>(w: &[T], c_out: usize, d: usize, k: usize) -> (Vec<T>, Vec<T>) {
    let mut a = vec![T::zero(); c_out * d];
    let mut bm = vec![T::zero(); c_out * k * d];
    for o in 0..c_out {
        for c in 0..d {
            for s in 0..k {
                let wc = w[(o * 2 * d + c) * k + s];
                let wn = w[(o * 2 * d + d + c) * k + s];
                a[o * d + c] += wc - wn;
                bm[o * k * d + s * d + c] = wn;
            }
        }
    }
    (a, bm)
}

struct EdgeLfcLinear {
    nbr: BatchNeighbors,
    d: usize,
    c_out: usize,
}

impl<T: Float> Op<T> for EdgeLfcLinear {
    fn name(&self) -> &'static str {
        "edge_lfc_linear"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (x, w, g) = (ctx.input(0).data(), ctx.input(1).data(), ctx.grad().data());
        let (d, c, k) = (self.d, self.c_out, self.nbr.k);
        let rows = x.len() / d;
        let (a, bm) = split_lfc_weight(w, c, d, k);
        let gx = ctx.needs(0).then(|| {
            let mut gx = vec![T::zero(); rows * d];
            gemm(false, false, rows, d, c, T::one(), g, &a, T::zero(), &mut gx);
            let mut h = vec![T::zero(); rows * k * d];
            gemm(false, false, rows, k * d, c, T::one(), g, &bm, T::zero(), &mut h);
            for r in 0..rows {
                for s in 0..k {
                    let j = self.nbr.rows[r * k + s];
                    let hs = &h[(r * k + s) * d..(r * k + s + 1) * d];
                    for (acc, &v) in gx[j * d..(j + 1) * d].iter_mut().zip(hs) {
                        *acc += v;
                    }
                }
            }
            Tensor::new(ctx.input(0).shape().to_vec(), gx).expect("same shape")
        });
        let gw = ctx.needs(1).then(|| {
            let gath = gather_neighbors(x, d, &self.nbr);
            let mut ga = vec![T::zero(); c * d];
            let mut gb = vec![T::zero(); c * k * d];
            gemm(true, false, c, d, rows, T::one(), g, x, T::zero(), &mut ga);
            gemm(true, false, c, k * d, rows, T::one(), g, &gath, T::zero(), &mut gb);
            let mut gw = vec![T::zero(); c * 2 * d * k];
            for o in 0..c {
                for ch in 0..d {
                    for s in 0..k {
                        gw[(o * 2 * d + ch) * k + s] = ga[o * d + ch];
                        gw[(o * 2 * d + d + ch) * k + s] = gb[o * k * d + s * d + ch] - ga[o * d + ch];
                    }
                }
            }
            Tensor::new(ctx.input(1).shape().to_vec(), gw).expect("same shape")
        });
        let gbias = ctx.needs(2).then(|| column_sums(g, c, ctx.input(2).shape()));
        vec![gx, gw, gbias]
    }
}

/// Local fully-connected map over the edge features of `x` (`[B,N,d]`):
/// `out[r,o] = b[o] + Σ_{c,s} W[o,c,s]·e[r,s,c]` with `W` shaped `[C,2d,k]`.
/// The output is `[B,N,C]`.
pub fn edge_lfc_linear<T: Float>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Var,
    nbr: &BatchNeighbors,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let (c_out, d) = edge_dims("edge_lfc_linear", tape, &xs, w, b, nbr, nbr.k)?;
    let rows = nbr.batch * nbr.n;
    let k = nbr.k;
    let (a, bm) = split_lfc_weight(tape.value(w).data(), c_out, d, k);
    let xv = tape.value(x).data();
    let gath = gather_neighbors(xv, d, nbr);
    let mut out = vec![T::zero(); rows * c_out];
    gemm(false, true, rows, c_out, d, T::one(), xv, &a, T::zero(), &mut out);
    gemm(false, true, rows, c_out, k * d, T::one(), &gath, &bm, T::one(), &mut out);
    drop(gath);
    let bias = tape.value(b).data();
    for row in out.chunks_exact_mut(c_out) {
        for (v, &bb) in row.iter_mut().zip(bias) {
            *v += bb;
        }
    }
    tape.note_branch(&nbr.rows);
    let value = Tensor::new([nbr.batch, nbr.n, c_out], out)?;
    Ok(tape.push(
        EdgeLfcLinear {
            nbr: nbr.clone(),
            d,
            c_out,
        },
        &[x, w, b],
        value,
    ))
}

// ---------------------------------------------------------------------------
// max over the neighbor axis of a sum

struct AddMax {
    k: usize,
    c: usize,
    argmax: Vec<u32>,
}

impl<T: Float> Op<T> for AddMax {
    fn name(&self) -> &'static str {
        "add_max"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx.grad().data();
        let (k, c) = (self.k, self.c);
        let scatter = || {
            let mut out = Tensor::zeros(ctx.input(0).shape().to_vec());
            let o = out.data_mut();
            for (p, (&gv, &a)) in g.iter().zip(&self.argmax).enumerate() {
                let (r, ch) = (p / c, p % c);
                o[(r * k + a as usize) * c + ch] = gv;
            }
            out
        };
        vec![ctx.needs(0).then(scatter), ctx.needs(1).then(scatter)]
    }
}

/// `max_k (a + b)` for `a`, `b` shaped `[.., k, C]`; ties go to the lowest
/// slot.
pub fn add_max<T: Float>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let shape = tape.shape(a).to_vec();
    if shape.len() < 2 || tape.shape(b) != shape.as_slice() {
        return Err(Error::shape("add_max", &shape, tape.shape(b)));
    }
    let (k, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let (av, bv) = (tape.value(a).data(), tape.value(b).data());
    let rows = av.len() / (k * c).max(1);
    let mut out = vec![T::zero(); rows * c];
    let mut argmax = vec![0u32; rows * c];
    for r in 0..rows {
        let o = &mut out[r * c..(r + 1) * c];
        let am = &mut argmax[r * c..(r + 1) * c];
        let base = r * k * c;
        for ch in 0..c {
            o[ch] = av[base + ch] + bv[base + ch];
        }
        for s in 1..k {
            let off = base + s * c;
            for ch in 0..c {
                let v = av[off + ch] + bv[off + ch];
                if v > o[ch] {
                    o[ch] = v;
                    am[ch] = s as u32;
                }
            }
        }
    }
    tape.note_branch(&argmax);
    let value = Tensor::new(shape[..shape.len() - 2].iter().copied().chain([c]).collect::<Vec<_>>(), out)?;
    Ok(tape.push(AddMax { k, c, argmax }, &[a, b], value))
}

// ---------------------------------------------------------------------------
// weighted residual

struct Residual;

impl<T: Float> Op<T> for Residual {
    fn name(&self) -> &'static str {
        "residual"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx.grad();
        let alpha = ctx.input(2).data()[0];
        let galpha = ctx.needs(2).then(|| {
            let s: T = g.data().iter().zip(ctx.input(1).data()).map(|(&a, &b)| a * b).sum();
            Tensor::full(ctx.input(2).shape().to_vec(), s)
        });
        vec![
            ctx.needs(0).then(|| g.clone()),
            ctx.needs(1).then(|| g.map(|v| v * alpha)),
            galpha,
        ]
    }
}

/// `f + α·x` for a one-element `alpha`. With `α = 0` the output is a copy
/// of `f`, bit for bit.
pub fn residual<T: Float>(tape: &mut Tape<T>, f: Var, x: Var, alpha: Var) -> Result<Var> {
    if tape.shape(f) != tape.shape(x) {
        return Err(Error::shape("residual", tape.shape(f), tape.shape(x)));
    }
    if tape.value(alpha).numel() != 1 {
        return Err(Error::invalid("residual", "alpha must have one element"));
    }
    let a = tape.value(alpha).data()[0];
    let value = if a == T::zero() {
        tape.value(f).clone()
    } else {
        let data = tape
            .value(f)
            .data()
            .iter()
            .zip(tape.value(x).data())
            .map(|(&fv, &xv)| fv + a * xv)
            .collect();
        Tensor::new(tape.shape(f).to_vec(), data)?
    };
    Ok(tape.push(Residual, &[f, x, alpha], value))
}
