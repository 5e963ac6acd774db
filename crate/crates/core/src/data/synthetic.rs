use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{stream_rng, Dataset, Split};
use crate::error::{Error, Result};
use crate::geometry::{normalize_to_unit_sphere, PointCloud};

/// Classes of the synthetic benchmark. The discriminant is the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::Plane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Plane => "plane",
        }
    }

    pub fn label(self) -> usize {
        self as usize
    }

    /// Shapes that map onto themselves under `p → −p`.
    fn centrally_symmetric(self) -> bool {
        self != ShapeKind::Cone
    }

    fn surface_point<R: Rng + ?Sized>(self, rng: &mut R) -> [f64; 3] {
        match self {
            ShapeKind::Sphere => loop {
                let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-9 {
                    break [v[0] / n, v[1] / n, v[2] / n];
                }
            },
            ShapeKind::Cube => {
                let face = rng.gen_range(0..6usize);
                let mut p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
                p[face / 2] = if face % 2 == 0 { 1.0 } else { -1.0 };
                p
            }
            ShapeKind::Cylinder => {
                // radius 1, height 2: side area 4π, each cap π
                let theta = rng.gen_range(0.0..TAU);
                if rng.gen_bool(2.0 / 3.0) {
                    [theta.cos(), theta.sin(), rng.gen_range(-1.0..=1.0)]
                } else {
                    let r = rng.gen::<f64>().sqrt();
                    let z = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            ShapeKind::Cone => {
                // apex (0,0,1), base radius 1 at z = −1: side area π√5, base π
                let theta = rng.gen_range(0.0..TAU);
                let side = 5f64.sqrt() / (1.0 + 5f64.sqrt());
                let t = rng.gen::<f64>().sqrt();
                if rng.gen_bool(side) {
                    [t * theta.cos(), t * theta.sin(), 1.0 - 2.0 * t]
                } else {
                    [t * theta.cos(), t * theta.sin(), -1.0]
                }
            }
            ShapeKind::Torus => {
                // major radius 1, tube radius 0.35; the tube angle is
                // accepted in proportion to its ring circumference
                let (big, small) = (1.0, 0.35);
                let phi = loop {
                    let phi = rng.gen_range(0.0..TAU);
                    if rng.gen::<f64>() * (big + small) <= big + small * phi.cos() {
                        break phi;
                    }
                };
                let theta = rng.gen_range(0.0..TAU);
                let ring = big + small * phi.cos();
                [ring * theta.cos(), ring * theta.sin(), small * phi.sin()]
            }
            ShapeKind::Plane => [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), 0.0],
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("generate_synthetic", format!("unknown shape class `{s}`")))
    }
}

/// One labelled cloud: uniform surface samples, Gaussian jitter, a random
/// rotation about the vertical axis, then unit-sphere normalization.
///
/// Symmetric shapes are sampled in antipodal pairs, which keeps the
/// distribution uniform and puts the centroid exactly at the shape center.
pub fn generate_synthetic<R: Rng + ?Sized>(kind: ShapeKind, n_points: usize, jitter: f64, rng: &mut R) -> Result<PointCloud> {
    if n_points < 16 {
        return Err(Error::invalid("generate_synthetic", format!("need at least 16 points, got {n_points}")));
    }
    let noise = Normal::new(0.0, jitter.max(0.0))
        .map_err(|e| Error::invalid("generate_synthetic", format!("jitter {jitter}: {e}")))?;
    let mut raw = Vec::with_capacity(n_points + 1);
    while raw.len() < n_points {
        let p = kind.surface_point(rng);
        raw.push(p);
        if kind.centrally_symmetric() {
            raw.push([-p[0], -p[1], -p[2]]);
        }
    }
    raw.truncate(n_points);
    let yaw = rng.gen_range(0.0..TAU);
    let (s, c) = yaw.sin_cos();
    let points = raw
        .iter()
        .map(|p| {
            let q: [f64; 3] = if jitter > 0.0 {
                std::array::from_fn(|d| p[d] + noise.sample(rng))
            } else {
                *p
            };
            [(c * q[0] - s * q[1]) as f32, (s * q[0] + c * q[1]) as f32, q[2] as f32]
        })
        .collect();
    let mut cloud = normalize_to_unit_sphere(&PointCloud::new(points, None))?;
    cloud.label = Some(kind.label());
    Ok(cloud)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub points: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_size: 600,
            test_size: 150,
            points: 256,
            jitter: 0.01,
            seed: 0,
        }
    }
}

/// Balanced train and test splits; cloud `i` has class `i mod 6` and its
/// own random stream.
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<(Dataset, Dataset)> {
    let names: Vec<String> = ShapeKind::ALL.iter().map(|k| k.name().to_string()).collect();
    let make = |split: Split, size: usize| -> Result<Dataset> {
        let domain = match split {
            Split::Train => 1,
            Split::Test => 2,
        };
        let clouds = (0..size)
            .map(|i| {
                let kind = ShapeKind::ALL[i % ShapeKind::ALL.len()];
                generate_synthetic(kind, cfg.points, cfg.jitter, &mut stream_rng(cfg.seed, domain, i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(clouds, names.clone(), split)
    };
    Ok((make(Split::Train, cfg.train_size)?, make(Split::Test, cfg.test_size)?))
}
