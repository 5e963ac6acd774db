use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::abem::{batch_graph, Abem, AbemSpec, AbemVars};
use crate::attention::Caa;
use crate::data::stream_rng;
use crate::error::{Error, Result};
use crate::geometry::{descriptor_rows, BatchNeighbors, NeighborSpace, PointCloud};
use crate::layers::{Mlp, Mode, ParamStore, Pass};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Tolerance of the strict normalization check.
pub const NORMALIZATION_TOL: f64 = 1e-4;

/// The classifier: descriptor, cascaded modules, fused global feature,
/// fully-connected head.
#[derive(Debug, Clone)]
pub struct GbnetModel<T: Float> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub abems: Vec<Abem>,
    pub fuse_mlp: Mlp,
    pub fuse_caa: Option<Caa>,
    /// Hidden head layers (affine + normalization + rectifier).
    pub head: Vec<Mlp>,
    pub fc_out: Mlp,
    /// Reject clouds not normalized to the unit sphere.
    pub strict: bool,
}

/// Tape variables of one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    pub abems: Vec<AbemVars>,
    /// Fused point features before and after the global attention.
    pub fused_pre: Var,
    pub fused_post: Var,
    /// Per cloud, the source index of each processed row.
    pub orders: Vec<Vec<usize>>,
}

/// Lexicographic `(x, y, z)` order, ties kept in input order. Every
/// point-indexed layer sees rows in this order, which makes the network
/// independent of how the input happens to be listed.
pub fn canonical_order(cloud: &PointCloud) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (cloud.points[a], cloud.points[b]);
        p[0].total_cmp(&q[0])
            .then(p[1].total_cmp(&q[1]))
            .then(p[2].total_cmp(&q[2]))
    });
    order
}

impl<T: Float> GbnetModel<T> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0, 0);
        Self::with_rng(config, &mut rng)
    }

    fn with_rng(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let c = config;
        if c.points <= c.k {
            return Err(Error::invalid("gbnet", format!("{} points need more than k = {}", c.points, c.k)));
        }
        if c.classes < 2 || c.scales.is_empty() {
            return Err(Error::invalid("gbnet", "need at least 2 classes and one module"));
        }
        let mut store = ParamStore::new();
        let mut abems = Vec::with_capacity(c.scales.len());
        let mut d_in = c.descriptor_form.len();
        for (i, &d_out) in c.scales.iter().enumerate() {
            let spec = AbemSpec {
                points: c.points,
                k: c.k,
                d_in,
                d_out,
                ratio: c.ratio,
                branches: c.branches,
                attention: c.attention,
            };
            abems.push(Abem::new(&mut store, &format!("abem{}", i + 1), spec, rng)?);
            d_in = d_out;
        }
        let skip: usize = abems.iter().map(|a| a.out_width()).sum();
        let fuse_mlp = Mlp::new(&mut store, "fuse_mlp", skip, c.fuse_width, rng)?;
        let fuse_caa = if c.attention {
            Some(Caa::new(&mut store, "fuse_caa", c.points, c.fuse_width, c.ratio, rng)?)
        } else {
            None
        };
        let mut head = Vec::with_capacity(c.head.len());
        let mut width = 2 * c.fuse_width;
        for (i, &h) in c.head.iter().enumerate() {
            head.push(Mlp::new(&mut store, &format!("fc{}", i + 1), width, h, rng)?);
            width = h;
        }
        let fc_out = Mlp::with_parts(&mut store, "fc_out", width, c.classes, false, None, rng)?;
        Ok(GbnetModel {
            config: c.clone(),
            store,
            abems,
            fuse_mlp,
            fuse_caa,
            head,
            fc_out,
            strict: false,
        })
    }

    /// Sum of the module skip widths (input width of the fusion layer).
    pub fn skip_width(&self) -> usize {
        self.abems.iter().map(|a| a.out_width()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<U: Float>(&self) -> GbnetModel<U> {
        GbnetModel {
            config: self.config.clone(),
            store: self.store.cast(),
            abems: self.abems.clone(),
            fuse_mlp: self.fuse_mlp.clone(),
            fuse_caa: self.fuse_caa.clone(),
            head: self.head.clone(),
            fc_out: self.fc_out.clone(),
            strict: self.strict,
        }
    }

    fn check_inputs(&self, clouds: &[PointCloud]) -> Result<()> {
        if clouds.is_empty() {
            return Err(Error::invalid("gbnet", "empty batch"));
        }
        for (i, c) in clouds.iter().enumerate() {
            if c.len() != self.config.points {
                return Err(Error::invalid(
                    "gbnet",
                    format!("cloud {i} has {} points, model expects {}", c.len(), self.config.points),
                ));
            }
            if c.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid("gbnet", format!("cloud {i} has non-finite coordinates")));
            }
            if self.strict && !c.is_normalized(NORMALIZATION_TOL) {
                return Err(Error::invalid(
                    "gbnet",
                    format!("cloud {i} is not normalized to the unit sphere (strict mode)"),
                ));
            }
        }
        Ok(())
    }

    /// Records the network on `pass`. Clouds must have `config.points`
    /// points each.
    pub fn forward(&self, pass: &mut Pass<'_, T>, clouds: &[PointCloud]) -> Result<ForwardOutput> {
        self.check_inputs(clouds)?;
        let (b, n, k) = (clouds.len(), self.config.points, self.config.k);
        let form = self.config.descriptor_form;
        let m = form.len();

        let mut orders = Vec::with_capacity(b);
        let mut coords = Vec::with_capacity(b * n * 3);
        let mut desc = Vec::with_capacity(b * n * m);
        for c in clouds {
            let order = canonical_order(c);
            let pts: Vec<[T; 3]> = order
                .iter()
                .map(|&i| c.points[i].map(|v| T::lit(v as f64)))
                .collect();
            coords.extend(pts.iter().flatten().copied());
            desc.extend_from_slice(descriptor_rows(&pts, form)?.into_tensor().data());
            orders.push(order);
        }
        let coords = Tensor::new(vec![b, n, 3], coords)?;
        let mut x = pass.tape.constant(Tensor::new(vec![b, n, m], desc)?);

        let mut abems = Vec::with_capacity(self.abems.len());
        let mut skips = Vec::with_capacity(self.abems.len());
        for (i, abem) in self.abems.iter().enumerate() {
            let graph = if i == 0 {
                batch_graph(&coords, k, NeighborSpace::Coordinate)?
            } else {
                batch_graph(pass.tape.value(x), k, NeighborSpace::Feature)?
            };
            let nbr = BatchNeighbors::new(&graph)?;
            pass.tape.note_branch(nbr.rows.as_slice());
            let vars = abem.forward(pass, x, &nbr)?;
            skips.push(vars.f_out);
            x = vars.next;
            abems.push(vars);
        }

        let cat = pass.tape.concat(&skips, 2)?;
        let fused_pre = self.fuse_mlp.forward(pass, cat)?;
        let fused_post = match &self.fuse_caa {
            Some(caa) => caa.forward(pass, fused_pre)?,
            None => fused_pre,
        };
        let (gmax, _) = pass.tape.reduce_max(fused_post, 1)?;
        let gmean = pass.tape.reduce_mean(fused_post, 1)?;
        let mut h = pass.tape.concat(&[gmax, gmean], 1)?;
        for layer in &self.head {
            h = layer.forward(pass, h)?;
            h = dropout(pass, h, self.config.dropout);
        }
        let logits = self.fc_out.forward(pass, h)?;
        Ok(ForwardOutput {
            logits,
            abems,
            fused_pre,
            fused_post,
            orders,
        })
    }

    /// Eval-mode logits `[B,c]` without recording gradients.
    pub fn predict_logits(&self, clouds: &[PointCloud]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = {
            let mut pass = Pass::new(&mut tape, &self.store, Mode::Eval, false);
            self.forward(&mut pass, clouds)?
        };
        Ok(tape.value(out.logits).clone())
    }

    /// Names of entries the optimizer leaves alone when residual weights
    /// are frozen.
    pub fn is_alpha(name: &str) -> bool {
        name.ends_with(".alpha")
    }
}

/// Inverted dropout: train mode only; surviving activations are scaled by
/// `1/(1 − rate)`.
fn dropout<T: Float>(pass: &mut Pass<'_, T>, h: Var, rate: f64) -> Var {
    if pass.mode() != Mode::Train || rate <= 0.0 {
        return h;
    }
    let keep = 1.0 - rate;
    let shape = pass.tape.shape(h).to_vec();
    let numel: usize = shape.iter().product();
    let rng = pass.rng();
    let mask: Vec<T> = (0..numel)
        .map(|_| if rng.gen::<f64>() < keep { T::lit(1.0 / keep) } else { T::zero() })
        .collect();
    let mask = pass.tape.constant(Tensor::new(shape, mask).expect("mask shape"));
    pass.tape.mul(h, mask).expect("same shape")
}

/// Argmax of every row of `[B,c]` logits.
pub fn argmax_rows<T: Float>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape().last().copied().unwrap_or(1);
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
