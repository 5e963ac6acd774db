use super::knn::{BatchNeighbors, NeighborIndex};
use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Float, Op, Tape, Tensor, Var};

/// Edge rows `[x_i, x_j - x_i]` for every point `i` and neighbor slot `j`,
/// laid out `rows × k × 2d` where `rows = nbr.rows.len() / k`.
fn edge_rows<T: Float>(x: &[T], d: usize, nbr: &BatchNeighbors) -> Vec<T> {
    let k = nbr.k;
    let rows = nbr.batch * nbr.n;
    let mut out = vec![T::zero(); rows * k * 2 * d];
    for i in 0..rows {
        let xi = &x[i * d..(i + 1) * d];
        for s in 0..k {
            let j = nbr.rows[i * k + s];
            let xj = &x[j * d..(j + 1) * d];
            let o = &mut out[(i * k + s) * 2 * d..(i * k + s + 1) * 2 * d];
            o[..d].copy_from_slice(xi);
            for c in 0..d {
                o[d + c] = xj[c] - xi[c];
            }
        }
    }
    out
}

struct EdgeFeaturesOp {
    nbr: BatchNeighbors,
    d: usize,
}

impl<T: Float> Op<T> for EdgeFeaturesOp {
    fn name(&self) -> &'static str {
        "edge_features"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (d, k) = (self.d, self.nbr.k);
        let g = ctx.grad().data();
        let mut gx = Tensor::zeros(ctx.input(0).shape().to_vec());
        let gxd = gx.data_mut();
        for i in 0..self.nbr.batch * self.nbr.n {
            for s in 0..k {
                let j = self.nbr.rows[i * k + s];
                let go = &g[(i * k + s) * 2 * d..(i * k + s + 1) * 2 * d];
                for c in 0..d {
                    gxd[i * d + c] += go[c] - go[d + c];
                    gxd[j * d + c] += go[d + c];
                }
            }
        }
        vec![Some(gx)]
    }
}

fn check_batch(op: &'static str, shape: &[usize], nbrs: &[NeighborIndex]) -> Result<(usize, usize)> {
    let (b, n, d) = match *shape {
        [n, d] => (1, n, d),
        [b, n, d] => (b, n, d),
        _ => return Err(Error::invalid(op, format!("expected [N,d] or [B,N,d], got {shape:?}"))),
    };
    if nbrs.len() != b {
        return Err(Error::invalid(
            op,
            format!("{} neighbor lists for a batch of {b}", nbrs.len()),
        ));
    }
    if let Some(bad) = nbrs.iter().find(|nb| nb.n() != n) {
        return Err(Error::invalid(
            op,
            format!("neighbor index built over {} points, features have {n}", bad.n()),
        ));
    }
    Ok((n, d))
}

/// Edge features of `x` (`[N,d]` or `[B,N,d]`), one neighbor list per cloud.
/// Output is `[N,k,2d]` or `[B,N,k,2d]`.
pub fn build_edge_features<T: Float>(
    tape: &mut Tape<T>,
    x: Var,
    nbrs: &[NeighborIndex],
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (_, d) = check_batch("build_edge_features", &shape, nbrs)?;
    let nbr = BatchNeighbors::new(nbrs)?;
    if tape.tracks_branches() {
        tape.note_branch(&nbr.rows);
    }
    let data = edge_rows(tape.value(x).data(), d, &nbr);
    let mut out_shape = shape[..shape.len() - 1].to_vec();
    out_shape.push(nbr.k);
    out_shape.push(2 * d);
    let value = Tensor::new(out_shape, data)?;
    Ok(tape.push(EdgeFeaturesOp { nbr, d }, &[x], value))
}

/// Plain (untaped) edge features of a single `N×d` matrix.
pub fn edge_features<T: Float>(x: &Tensor<T>, nbr: &NeighborIndex) -> Result<Tensor<T>> {
    let (n, d) = check_batch("build_edge_features", x.shape(), std::slice::from_ref(nbr))?;
    let nbr = BatchNeighbors::new(std::slice::from_ref(nbr))?;
    Tensor::new([n, nbr.k, 2 * d], edge_rows(x.data(), d, &nbr))
}
