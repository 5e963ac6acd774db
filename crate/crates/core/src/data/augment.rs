use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Closed sampling ranges of the per-axis scale and the translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub scale: (f64, f64),
    pub translate: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale: (2.0 / 3.0, 1.5),
            translate: (-0.2, 0.2),
        }
    }
}

impl AugmentConfig {
    pub fn new(scale: (f64, f64), translate: (f64, f64)) -> Result<Self> {
        for (name, (lo, hi)) in [("scale", scale), ("translate", translate)] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::invalid("augment", format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        Ok(AugmentConfig { scale, translate })
    }
}

/// Anisotropic scaling followed by a global translation: three scale
/// draws, then three offset draws.
pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, rng: &mut R, cfg: &AugmentConfig) -> PointCloud {
    let s: [f64; 3] = std::array::from_fn(|_| rng.gen_range(cfg.scale.0..=cfg.scale.1));
    let t: [f64; 3] = std::array::from_fn(|_| rng.gen_range(cfg.translate.0..=cfg.translate.1));
    let points = cloud
        .points
        .iter()
        .map(|p| std::array::from_fn(|d| (p[d] as f64 * s[d] + t[d]) as f32))
        .collect();
    PointCloud::new(points, cloud.label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_cloud() -> PointCloud {
        PointCloud::new(vec![[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.6, 0.8], [0.1, 0.2, 0.3]], Some(2))
    }

    #[test]
    fn identity_ranges() {
        let c = unit_cloud();
        let cfg = AugmentConfig::new((1.0, 1.0), (0.0, 0.0)).unwrap();
        assert_eq!(augment(&c, &mut ChaCha8Rng::seed_from_u64(1), &cfg), c);
    }

    #[test]
    fn doubling_scale() {
        let cfg = AugmentConfig::new((2.0, 2.0), (0.0, 0.0)).unwrap();
        let a = augment(&unit_cloud(), &mut ChaCha8Rng::seed_from_u64(1), &cfg);
        assert!((a.max_norm() - 2.0).abs() <= 1e-6);
    }

    #[test]
    fn deterministic_and_bounded() {
        let cfg = AugmentConfig::default();
        let a = augment(&unit_cloud(), &mut ChaCha8Rng::seed_from_u64(9), &cfg);
        let b = augment(&unit_cloud(), &mut ChaCha8Rng::seed_from_u64(9), &cfg);
        assert_eq!(a, b);
        assert_eq!(a.label, Some(2));
        // the first point is e_x: x' = s_x + t_x
        let x = a.points[0][0] as f64;
        assert!((2.0 / 3.0 - 0.2 - 1e-6..=1.5 + 0.2 + 1e-6).contains(&x));
    }

    #[test]
    fn rejects_inverted_range() {
        assert!(AugmentConfig::new((1.5, 0.5), (0.0, 0.0)).is_err());
    }
}
