//! Channel-wise affinity attention.
//!
//! Every channel of an `N×d` feature map is a length-`N` vector. Two shared
//! MLPs compact those vectors to length `N' = N / ratio` (queries and keys),
//! their Gram matrix gives a `d×d` channel similarity, and the affinity is a
//! column-wise softmax of "column maximum minus similarity", so channels that
//! resemble each other receive little weight. The refined map is
//! `F + α·V·A`.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{residual, Mlp, ParamStore, Pass, Pid};
use crate::tensor::{Float, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Caa {
    pub mlp_q: Mlp,
    pub mlp_k: Mlp,
    pub mlp_v: Mlp,
    pub alpha: Pid,
    pub points: usize,
    pub compact: usize,
    pub channels: usize,
}

/// Tape variables of one attention evaluation, batched. `q` and `k` hold
/// one compacted row per channel (`[B,d,N']`), so `s = q·kᵀ`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub s: Var,
    pub a: Var,
    pub out: Var,
}

/// `S = Q·Kᵀ` over the last two axes for row-per-channel `q`, `k`.
pub fn similarity<T: Float>(tape: &mut Tape<T>, q: Var, k: Var) -> Result<Var> {
    let kt = tape.transpose(k)?;
    tape.matmul(q, kt)
}

/// Affinity `A = softmax_rows(colmax(S) − S)`: every column of `A` sums to
/// one, and the row holding a column's largest similarity gets the smallest
/// weight in that column.
pub fn cae_affinity<T: Float>(tape: &mut Tape<T>, s: Var) -> Result<Var> {
    let nd = tape.shape(s).len();
    let m = tape.column_max_minus(s)?;
    tape.softmax(m, nd - 2)
}

impl Caa {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        points: usize,
        channels: usize,
        ratio: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if ratio < 2 {
            return Err(Error::invalid("caa", format!("ratio must exceed 1, got {ratio}")));
        }
        if points < ratio {
            return Err(Error::invalid(
                "caa",
                format!("{points} points cannot be compacted by ratio {ratio}"),
            ));
        }
        let compact = points / ratio;
        Ok(Caa {
            mlp_q: Mlp::new(store, &format!("{name}.mlp_q"), points, compact, rng)?,
            mlp_k: Mlp::new(store, &format!("{name}.mlp_k"), points, compact, rng)?,
            mlp_v: Mlp::new(store, &format!("{name}.mlp_v"), points, points, rng)?,
            alpha: store.add_param(format!("{name}.alpha"), Tensor::zeros([1]))?,
            points,
            compact,
            channels,
        })
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        let ok = matches!(*shape, [_, n, d] if n == self.points && d == self.channels);
        if !ok {
            return Err(Error::invalid(
                "caa",
                format!(
                    "expected [B, {}, {}] features, got {shape:?}",
                    self.points, self.channels
                ),
            ));
        }
        Ok(())
    }

    /// Compact channel comparison: `(Q, K, S)` for `f` shaped `[B,N,d]`.
    pub fn ccc<T: Float>(&self, pass: &mut Pass<'_, T>, f: Var) -> Result<(Var, Var, Var)> {
        self.check(pass.tape.shape(f))?;
        let ft = pass.tape.transpose(f)?;
        self.ccc_rows(pass, ft)
    }

    fn ccc_rows<T: Float>(&self, pass: &mut Pass<'_, T>, ft: Var) -> Result<(Var, Var, Var)> {
        let q = self.mlp_q.forward(pass, ft)?;
        let k = self.mlp_k.forward(pass, ft)?;
        let s = similarity(pass.tape, q, k)?;
        Ok((q, k, s))
    }

    pub fn forward<T: Float>(&self, pass: &mut Pass<'_, T>, f: Var) -> Result<Var> {
        Ok(self.forward_vars(pass, f)?.out)
    }

    /// Like [`Caa::forward`], returning every intermediate.
    pub fn forward_vars<T: Float>(&self, pass: &mut Pass<'_, T>, f: Var) -> Result<AttentionVars> {
        self.check(pass.tape.shape(f))?;
        let ft = pass.tape.transpose(f)?;
        let (q, k, s) = self.ccc_rows(pass, ft)?;
        let a = cae_affinity(pass.tape, s)?;
        let vt = self.mlp_v.forward(pass, ft)?;
        let v = pass.tape.transpose(vt)?;
        let va = pass.tape.matmul(v, a)?;
        let alpha = pass.param(self.alpha);
        let out = residual(pass.tape, f, va, alpha)?;
        Ok(AttentionVars { q, k, v, s, a, out })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::layers::Mode;
    use crate::tensor::GradCheckConfig;
    use crate::verify::check_with_store;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn gram_matrix_of_identity_projection() {
        let mut tape = Tape::<f64>::new();
        // F = [[1,0],[0,1],[1,1]] (N=3, d=2); rows of Fᵀ are the channels
        let f = tape.constant(Tensor::new([3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap());
        let ft = tape.transpose(f).unwrap();
        let s = similarity(&mut tape, ft, ft).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn affinity_two_by_two() {
        let mut tape = Tape::<f64>::new();
        let s = tape.constant(Tensor::new([2, 2], vec![2.0, 1.0, 1.0, 2.0]).unwrap());
        let a = cae_affinity(&mut tape, s).unwrap();
        let e = std::f64::consts::E;
        let (lo, hi) = (1.0 / (1.0 + e), e / (1.0 + e));
        let got = tape.value(a).data();
        for (g, w) in got.iter().zip([lo, hi, hi, lo]) {
            assert!((g - w).abs() <= 1e-4, "{got:?}");
        }
        assert!((lo - 0.2689).abs() < 1e-4 && (hi - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn affinity_of_constant_similarity_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let s = tape.constant(Tensor::full([4, 4], 3.5));
        let a = cae_affinity(&mut tape, s).unwrap();
        assert!(tape.value(a).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn affinity_columns_and_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let sv = rand_tensor(&[2, 6, 6], &mut rng).map(|v| v * 4.0);
        let s = tape.constant(sv.clone());
        let a = cae_affinity(&mut tape, s).unwrap();
        let av = tape.value(a).data().to_vec();
        // adding a per-column constant changes nothing
        let shifted = Tensor::from_fn([2, 6, 6], |i| sv.data()[i] + (i % 6) as f64 * 1.25);
        let s2 = tape.constant(shifted);
        let a2 = cae_affinity(&mut tape, s2).unwrap();
        for (x, y) in av.iter().zip(tape.value(a2).data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for b in 0..2 {
            for j in 0..6 {
                let col: Vec<f64> = (0..6).map(|i| av[b * 36 + i * 6 + j]).collect();
                let scol: Vec<f64> = (0..6).map(|i| sv.data()[b * 36 + i * 6 + j]).collect();
                assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                assert!(col.iter().all(|&v| v > 0.0 && v < 1.0));
                let argmax_s = (0..6).max_by(|&x, &y| scol[x].total_cmp(&scol[y])).unwrap();
                let argmin_a = (0..6).min_by(|&x, &y| col[x].total_cmp(&col[y])).unwrap();
                assert_eq!(argmax_s, argmin_a);
            }
        }
    }

    fn layer(points: usize, channels: usize, seed: u64) -> (ParamStore<f64>, Caa) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let caa = Caa::new(&mut store, "caa", points, channels, 4, &mut rng).unwrap();
        (store, caa)
    }

    #[test]
    fn shapes() {
        let (store, caa) = layer(128, 64, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let mut pass = Pass::new(&mut tape, &store, Mode::Train, false);
        let f = pass.tape.constant(rand_tensor(&[1, 128, 64], &mut rng));
        let vars = caa.forward_vars(&mut pass, f).unwrap();
        assert_eq!(pass.tape.shape(vars.q), &[1, 64, 32]);
        assert_eq!(pass.tape.shape(vars.k), &[1, 64, 32]);
        assert_eq!(pass.tape.shape(vars.s), &[1, 64, 64]);
        assert_eq!(pass.tape.shape(vars.out), &[1, 128, 64]);
    }

    #[test]
    fn too_few_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        assert!(Caa::new(&mut store, "c", 3, 8, 4, &mut rng).is_err());
        assert!(Caa::new(&mut store, "c", 8, 8, 1, &mut rng).is_err());
    }

    #[test]
    fn similarity_is_q_transpose_k() {
        let (store, caa) = layer(8, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::new();
        let mut pass = Pass::new(&mut tape, &store, Mode::Train, false);
        let f = pass.tape.constant(rand_tensor(&[1, 8, 4], &mut rng));
        let (q, k, s) = caa.ccc(&mut pass, f).unwrap();
        let (qv, kv, sv) = (pass.tape.value(q), pass.tape.value(k), pass.tape.value(s));
        let np = caa.compact;
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..np).map(|r| qv.data()[i * np + r] * kv.data()[j * np + r]).sum();
                // equal up to summation order inside the matrix kernel
                assert!((sv.data()[i * 4 + j] - dot).abs() <= 1e-12 * dot.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_alpha_is_identity() {
        let (store, caa) = layer(16, 8, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&[2, 16, 8], &mut rng);
        let mut tape = Tape::new();
        let mut pass = Pass::new(&mut tape, &store, Mode::Train, true);
        let f = pass.tape.constant(x.clone());
        let out = caa.forward(&mut pass, f).unwrap();
        assert_eq!(pass.tape.value(out), &x);
    }

    #[test]
    fn no_point_by_point_intermediate() {
        let (points, channels) = (32, 8);
        let (mut store, caa) = layer(points, channels, 9);
        store.get_mut(caa.alpha).data_mut()[0] = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut tape = Tape::new();
        let mut pass = Pass::new(&mut tape, &store, Mode::Train, true);
        let f = pass.tape.constant(rand_tensor(&[1, points, channels], &mut rng));
        let start = pass.tape.len();
        caa.forward(&mut pass, f).unwrap();
        for v in tape.vars().skip(start) {
            if !tape.is_leaf(v) {
                assert!(tape.value(v).numel() < points * points, "{:?}", tape.shape(v));
            }
        }
    }

    #[test]
    fn grad_ccc() {
        let (store, caa) = layer(8, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_tensor(&[1, 8, 4], &mut rng);
        let cfg = GradCheckConfig::default();
        for mode in [Mode::Train, Mode::Eval] {
            let r = check_with_store(&store, mode, std::slice::from_ref(&x), &cfg, |p, v| Ok(caa.ccc(p, v[0])?.2)).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn grad_caa_including_alpha() {
        let (mut store, caa) = layer(8, 4, 13);
        store.get_mut(caa.alpha).data_mut()[0] = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = rand_tensor(&[2, 8, 4], &mut rng);
        let cfg = GradCheckConfig::default();
        for mode in [Mode::Train, Mode::Eval] {
            let r = check_with_store(&store, mode, std::slice::from_ref(&x), &cfg, |p, v| caa.forward(p, v[0])).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }
}
