use rand_chacha::ChaCha8Rng;

use super::fused::{batch_norm_act, channel_stats, edge_lfc_linear, edge_linear, linear};
use super::store::{kaiming_bound, uniform_tensor, BnUpdate, Mode, ParamStore, Pass, Pid};
use crate::error::{Error, Result};
use crate::geometry::BatchNeighbors;
use crate::tensor::{Float, Tensor, Var};

/// Negative slope of the leaky rectifier used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Pid,
    pub beta: Pid,
    pub running_mean: Pid,
    pub running_var: Pid,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full([c], T::one()))?,
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros([c]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros([c]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full([c], T::one()))?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Normalizes `z` over every position of its trailing channel axis,
    /// then applies the optional leaky rectifier.
    pub fn forward<T: Float>(&self, pass: &mut Pass<'_, T>, z: Var, slope: Option<f64>) -> Result<Var> {
        let gamma = pass.param(self.gamma);
        let beta = pass.param(self.beta);
        let c = pass.tape.value(gamma).numel();
        if pass.tape.shape(z).last() != Some(&c) {
            return Err(Error::shape("batch_norm", pass.tape.shape(z), &[c]));
        }
        match pass.mode() {
            Mode::Train => {
                let stats = channel_stats(pass.tape.value(z).data(), c);
                let m = stats.count as f64;
                let unbiased = stats
                    .var
                    .iter()
                    .map(|&v| if m > 1.0 { v * m / (m - 1.0) } else { v })
                    .collect();
                let out = batch_norm_act(
                    pass.tape, z, gamma, beta, &stats.mean, &stats.var, self.eps, true, slope,
                )?;
                pass.push_bn_update(
                    BnUpdate {
                        running_mean: self.running_mean,
                        running_var: self.running_var,
                        momentum: self.momentum,
                        mean: stats.mean,
                        var: unbiased,
                    },
                    stats.count,
                );
                Ok(out)
            }
            Mode::Eval => {
                let store = pass.store();
                let mean: Vec<f64> = store.get(self.running_mean).data().iter().map(|v| v.as_f64()).collect();
                let var: Vec<f64> = store.get(self.running_var).data().iter().map(|v| v.as_f64()).collect();
                batch_norm_act(pass.tape, z, gamma, beta, &mean, &var, self.eps, false, slope)
            }
        }
    }
}

/// Shared per-position layer: affine map, batch normalization, leaky
/// rectifier (each stage optional except the affine map).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub weight: Pid,
    pub bias: Pid,
    pub bn: Option<BatchNorm>,
    pub slope: Option<f64>,
    pub c_in: usize,
    pub c_out: usize,
}

fn finish<T: Float>(
    pass: &mut Pass<'_, T>,
    bn: &Option<BatchNorm>,
    slope: Option<f64>,
    z: Var,
) -> Result<Var> {
    match (bn, slope) {
        (Some(bn), _) => bn.forward(pass, z, slope),
        (None, Some(s)) => Ok(pass.tape.leaky_relu(z, T::lit(s))),
        (None, None) => Ok(z),
    }
}

impl Mlp {
    /// Standard block: affine + normalization + leaky rectifier.
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::with_parts(store, name, c_in, c_out, true, Some(LEAKY_SLOPE), rng)
    }

    pub fn with_parts<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        bn: bool,
        slope: Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = match slope {
            Some(s) => kaiming_bound(c_in, s),
            None => 1.0 / (c_in.max(1) as f64).sqrt(),
        };
        let weight = store.add_param(format!("{name}.weight"), uniform_tensor(&[c_out, c_in], bound, rng))?;
        let bias = store.add_param(format!("{name}.bias"), Tensor::zeros([c_out]))?;
        let bn = if bn {
            Some(BatchNorm::new(store, &format!("{name}.bn"), c_out)?)
        } else {
            None
        };
        Ok(Mlp {
            weight,
            bias,
            bn,
            slope,
            c_in,
            c_out,
        })
    }

    /// Applies the layer at every position of `x` (`[.., c_in]`).
    pub fn forward<T: Float>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        if pass.tape.shape(x).last() != Some(&self.c_in) {
            return Err(Error::invalid(
                "mlp",
                format!("expected {} input channels, got shape {:?}", self.c_in, pass.tape.shape(x)),
            ));
        }
        let (w, b) = (pass.param(self.weight), pass.param(self.bias));
        let z = linear(pass.tape, x, w, b, 1)?;
        finish(pass, &self.bn, self.slope, z)
    }

    /// The layer applied to the edge features of `x` (`[B,N,d]`,
    /// `c_in = 2d`); keeps the neighbor axis: `[B,N,k,c_out]`.
    pub fn edgeconv<T: Float>(&self, pass: &mut Pass<'_, T>, x: Var, nbr: &BatchNeighbors) -> Result<Var> {
        let d = pass.tape.shape(x).last().copied().unwrap_or(0);
        if 2 * d != self.c_in {
            return Err(Error::invalid(
                "edgeconv",
                format!("layer takes {} channels, edge features of width-{d} input have {}", self.c_in, 2 * d),
            ));
        }
        let (w, b) = (pass.param(self.weight), pass.param(self.bias));
        let z = edge_linear(pass.tape, x, w, b, nbr)?;
        finish(pass, &self.bn, self.slope, z)
    }
}

/// Local fully-connected layer: one `1×k` kernel that mixes channels and
/// aggregates `k` ordered neighbor slots into one output per point.
#[derive(Debug, Clone)]
pub struct Lfc {
    /// Shaped `[c_out, c_in, k]`.
    pub weight: Pid,
    pub bias: Pid,
    pub bn: Option<BatchNorm>,
    pub slope: Option<f64>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl Lfc {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::with_parts(store, name, c_in, c_out, k, true, Some(LEAKY_SLOPE), rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_parts<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        bn: bool,
        slope: Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = kaiming_bound(c_in * k, slope.unwrap_or(LEAKY_SLOPE));
        let weight = store.add_param(format!("{name}.weight"), uniform_tensor(&[c_out, c_in, k], bound, rng))?;
        let bias = store.add_param(format!("{name}.bias"), Tensor::zeros([c_out]))?;
        let bn = if bn {
            Some(BatchNorm::new(store, &format!("{name}.bn"), c_out)?)
        } else {
            None
        };
        Ok(Lfc {
            weight,
            bias,
            bn,
            slope,
            c_in,
            c_out,
            k,
        })
    }

    /// `x` is `[.., k, c_in]`; the neighbor axis is consumed.
    pub fn forward<T: Float>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let shape = pass.tape.shape(x).to_vec();
        if shape.len() < 2 || shape[shape.len() - 1] != self.c_in || shape[shape.len() - 2] != self.k {
            return Err(Error::invalid(
                "lfc",
                format!("expected [.., {}, {}], got {shape:?}", self.k, self.c_in),
            ));
        }
        let w = pass.param(self.weight);
        // [c_out, c_in, k] -> [c_out, k, c_in] to match the input layout
        let wt = pass.tape.permute(w, &[0, 2, 1])?;
        let b = pass.param(self.bias);
        let z = linear(pass.tape, x, wt, b, 2)?;
        finish(pass, &self.bn, self.slope, z)
    }

    /// The layer applied to the edge features of `x` (`[B,N,d]`,
    /// `c_in = 2d`): `[B,N,c_out]`.
    pub fn edgelfc<T: Float>(&self, pass: &mut Pass<'_, T>, x: Var, nbr: &BatchNeighbors) -> Result<Var> {
        let d = pass.tape.shape(x).last().copied().unwrap_or(0);
        if 2 * d != self.c_in || nbr.k != self.k {
            return Err(Error::invalid(
                "edgelfc",
                format!(
                    "layer takes {} channels over {} slots, got width-{d} input over {} slots",
                    self.c_in, self.k, nbr.k
                ),
            ));
        }
        let (w, b) = (pass.param(self.weight), pass.param(self.bias));
        let z = edge_lfc_linear(pass.tape, x, w, b, nbr)?;
        finish(pass, &self.bn, self.slope, z)
    }
}
