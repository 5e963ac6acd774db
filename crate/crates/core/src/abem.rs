//! Attentional back-projection edge-features module.
//!
//! Prominent branch: `f_Φ = E_Φ(x)` is projected back to the input space by
//! an LFC (`x' = L_Γ(f_Φ)`), the restoration error `Δx = x' − x` is encoded
//! by a second EdgeConv on the same graph, and `max_k(f_Φ + f_Υ)` goes
//! through channel attention. Fine-grained branch: an EdgeLFC followed by
//! channel attention. The module emits both branches concatenated, and the
//! prominent branch alone as the next module's input.

use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::attention::Caa;
use crate::error::{Error, Result};
use crate::geometry::{knn_search, BatchNeighbors, NeighborIndex, NeighborSpace};
use crate::layers::{add_max, Lfc, Mlp, ParamStore, Pass};
use crate::tensor::{Float, Tensor, Var};

/// Which encoding branches a module runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branches {
    Full,
    ProminentOnly,
    FineGrainedOnly,
    /// A single EdgeConv with max pooling over neighbors and no attention
    /// or back-projection.
    Plain,
}

impl FromStr for Branches {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Branches::Full),
            "prominent" => Ok(Branches::ProminentOnly),
            "finegrained" => Ok(Branches::FineGrainedOnly),
            "none" | "plain" => Ok(Branches::Plain),
            _ => Err(format!("unknown branch set `{s}` (full, prominent, finegrained, none)")),
        }
    }
}

impl Branches {
    pub fn as_str(self) -> &'static str {
        match self {
            Branches::Full => "full",
            Branches::ProminentOnly => "prominent",
            Branches::FineGrainedOnly => "finegrained",
            Branches::Plain => "none",
        }
    }

    fn prominent(self) -> bool {
        matches!(self, Branches::Full | Branches::ProminentOnly)
    }

    fn fine_grained(self) -> bool {
        matches!(self, Branches::Full | Branches::FineGrainedOnly)
    }
}

/// Construction parameters of one module.
#[derive(Debug, Clone, Copy)]
pub struct AbemSpec {
    pub points: usize,
    pub k: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub ratio: usize,
    pub branches: Branches,
    pub attention: bool,
}

#[derive(Debug, Clone)]
pub struct Abem {
    pub spec: AbemSpec,
    pub edgeconv_phi: Option<Mlp>,
    pub lfc_gamma: Option<Lfc>,
    pub edgeconv_upsilon: Option<Mlp>,
    pub edgelfc_theta: Option<Lfc>,
    pub caa_m: Option<Caa>,
    pub caa_a: Option<Caa>,
}

/// Tape variables of one module evaluation (absent branches are `None`).
#[derive(Debug, Clone, Copy)]
pub struct AbemVars {
    pub f_phi: Option<Var>,
    pub x_restored: Option<Var>,
    pub delta_x: Option<Var>,
    pub f_upsilon: Option<Var>,
    /// Prominent features after attention.
    pub f_m: Option<Var>,
    /// Fine-grained features after attention.
    pub f_a: Option<Var>,
    /// Concatenated output, collected as a skip connection.
    pub f_out: Var,
    /// Input of the next module.
    pub next: Var,
}

/// k-nearest-neighbor graph of every cloud of a `[B,N,D]` tensor.
pub fn batch_graph<T: Float>(x: &Tensor<T>, k: usize, space: NeighborSpace) -> Result<Vec<NeighborIndex>> {
    let (b, n, d) = match *x.shape() {
        [b, n, d] => (b, n, d),
        _ => return Err(Error::invalid("batch_graph", format!("expected [B,N,D], got {:?}", x.shape()))),
    };
    (0..b)
        .map(|i| knn_search(&x.data()[i * n * d..(i + 1) * n * d], n, d, k, space))
        .collect()
}

impl Abem {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, spec: AbemSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let AbemSpec {
            points,
            k,
            d_in: d,
            d_out,
            ratio,
            branches,
            attention,
        } = spec;
        if points <= k {
            return Err(Error::invalid("abem", format!("{points} points need more than k = {k}")));
        }
        let mut m = Abem {
            spec,
            edgeconv_phi: None,
            lfc_gamma: None,
            edgeconv_upsilon: None,
            edgelfc_theta: None,
            caa_m: None,
            caa_a: None,
        };
        if branches.prominent() || branches == Branches::Plain {
            m.edgeconv_phi = Some(Mlp::new(store, &format!("{name}.edgeconv_phi"), 2 * d, d_out, rng)?);
        }
        if branches.prominent() {
            m.lfc_gamma = Some(Lfc::new(store, &format!("{name}.lfc_gamma"), d_out, d, k, rng)?);
            m.edgeconv_upsilon = Some(Mlp::new(store, &format!("{name}.edgeconv_upsilon"), 2 * d, d_out, rng)?);
            if attention {
                m.caa_m = Some(Caa::new(store, &format!("{name}.caa_m"), points, d_out, ratio, rng)?);
            }
        }
        if branches.fine_grained() {
            m.edgelfc_theta = Some(Lfc::new(store, &format!("{name}.edgelfc_theta"), 2 * d, d_out, k, rng)?);
            if attention {
                m.caa_a = Some(Caa::new(store, &format!("{name}.caa_a"), points, d_out, ratio, rng)?);
            }
        }
        Ok(m)
    }

    /// Width of the skip output.
    pub fn out_width(&self) -> usize {
        match self.spec.branches {
            Branches::Full => 2 * self.spec.d_out,
            _ => self.spec.d_out,
        }
    }

    fn attend<T: Float>(caa: &Option<Caa>, pass: &mut Pass<'_, T>, f: Var) -> Result<Var> {
        match caa {
            Some(c) => c.forward(pass, f),
            None => Ok(f),
        }
    }

    /// Prominent branch: `(f_M, f_Φ, x', Δx, f_Υ)`.
    pub fn prominent_encode<T: Float>(
        &self,
        pass: &mut Pass<'_, T>,
        x: Var,
        nbr: &BatchNeighbors,
    ) -> Result<(Var, Var, Var, Var, Var)> {
        let (Some(phi), Some(gamma), Some(upsilon)) = (&self.edgeconv_phi, &self.lfc_gamma, &self.edgeconv_upsilon)
        else {
            return Err(Error::invalid("abem", "prominent branch is disabled"));
        };
        let f_phi = phi.edgeconv(pass, x, nbr)?;
        let x_restored = gamma.forward(pass, f_phi)?;
        let delta_x = pass.tape.sub(x_restored, x)?;
        let f_upsilon = upsilon.edgeconv(pass, delta_x, nbr)?;
        let pooled = add_max(pass.tape, f_phi, f_upsilon)?;
        let f_m = Self::attend(&self.caa_m, pass, pooled)?;
        Ok((f_m, f_phi, x_restored, delta_x, f_upsilon))
    }

    /// Fine-grained branch: `f_A`.
    pub fn finegrained_encode<T: Float>(&self, pass: &mut Pass<'_, T>, x: Var, nbr: &BatchNeighbors) -> Result<Var> {
        let Some(theta) = &self.edgelfc_theta else {
            return Err(Error::invalid("abem", "fine-grained branch is disabled"));
        };
        let f = theta.edgelfc(pass, x, nbr)?;
        Self::attend(&self.caa_a, pass, f)
    }

    /// Runs the module on `x` (`[B,N,d]`) over the graph `nbr`.
    pub fn forward<T: Float>(&self, pass: &mut Pass<'_, T>, x: Var, nbr: &BatchNeighbors) -> Result<AbemVars> {
        let shape = pass.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.spec.points || shape[2] != self.spec.d_in {
            return Err(Error::invalid(
                "abem",
                format!("expected [B, {}, {}], got {shape:?}", self.spec.points, self.spec.d_in),
            ));
        }
        if nbr.k != self.spec.k {
            return Err(Error::invalid("abem", format!("graph has k = {}, module expects {}", nbr.k, self.spec.k)));
        }
        let mut vars = AbemVars {
            f_phi: None,
            x_restored: None,
            delta_x: None,
            f_upsilon: None,
            f_m: None,
            f_a: None,
            f_out: x,
            next: x,
        };
        if self.spec.branches == Branches::Plain {
            let phi = self.edgeconv_phi.as_ref().expect("plain module has E_phi");
            let f = phi.edgeconv(pass, x, nbr)?;
            let (pooled, _) = pass.tape.reduce_max(f, 2)?;
            vars.f_phi = Some(f);
            vars.f_out = pooled;
            vars.next = pooled;
            return Ok(vars);
        }
        if self.spec.branches.prominent() {
            let (f_m, f_phi, xr, dx, fu) = self.prominent_encode(pass, x, nbr)?;
            vars.f_m = Some(f_m);
            vars.f_phi = Some(f_phi);
            vars.x_restored = Some(xr);
            vars.delta_x = Some(dx);
            vars.f_upsilon = Some(fu);
        }
        if self.spec.branches.fine_grained() {
            vars.f_a = Some(self.finegrained_encode(pass, x, nbr)?);
        }
        (vars.f_out, vars.next) = match (vars.f_m, vars.f_a) {
            (Some(m), Some(a)) => (pass.tape.concat(&[m, a], 2)?, m),
            (Some(m), None) => (m, m),
            (None, Some(a)) => (a, a),
            (None, None) => unreachable!("at least one branch runs"),
        };
        Ok(vars)
    }
}
