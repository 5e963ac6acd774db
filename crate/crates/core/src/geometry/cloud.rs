use crate::error::{Error, Result};

/// Unordered set of 3D points with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, label: Option<usize>) -> Self {
        PointCloud { points, label }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d] as f64;
            }
        }
        let n = self.points.len().max(1) as f64;
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Centroid within `tol` of the origin and farthest point at unit norm.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.centroid().iter().all(|c| c.abs() <= tol) && (self.max_norm() - 1.0).abs() <= tol
    }

    /// Row-major `N×3` coordinates.
    pub fn flat(&self) -> Vec<f32> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Points reordered by `order` (`order[i]` is the source index of row i).
    pub fn reordered(&self, order: &[usize]) -> PointCloud {
        PointCloud {
            points: order.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
        }
    }
}

/// Moves the centroid to the origin and scales the farthest point to unit
/// norm.
pub fn normalize_to_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::invalid("normalize_to_unit_sphere", "empty cloud"));
    }
    let c = cloud.centroid();
    let shifted: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| [p[0] as f64 - c[0], p[1] as f64 - c[1], p[2] as f64 - c[2]])
        .collect();
    let scale = shifted
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::invalid(
            "normalize_to_unit_sphere",
            "all points are identical (zero scale)",
        ));
    }
    Ok(PointCloud {
        points: shifted
            .iter()
            .map(|p| p.map(|v| (v / scale) as f32))
            .collect(),
        label: cloud.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn already_normalized_is_unchanged() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], None);
        assert_eq!(normalize_to_unit_sphere(&c).unwrap(), c);
    }

    #[test]
    fn shifts_and_scales() {
        let c = PointCloud::new(vec![[10.0, 0.0, 0.0], [12.0, 0.0, 0.0]], Some(3));
        let n = normalize_to_unit_sphere(&c).unwrap();
        assert_eq!(n.points, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(n.label, Some(3));
    }

    #[test]
    fn idempotent() {
        let c = PointCloud::new(
            (0..50)
                .map(|i| {
                    let t = i as f32 * 0.37;
                    [t.sin() * 3.0 + 2.0, t.cos() * 0.5 - 7.0, (t * 1.3).sin()]
                })
                .collect(),
            None,
        );
        let once = normalize_to_unit_sphere(&c).unwrap();
        let twice = normalize_to_unit_sphere(&once).unwrap();
        assert!(once.is_normalized(1e-6));
        for (a, b) in once.points.iter().zip(&twice.points) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn identical_points_fail() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0]; 4], None);
        assert!(normalize_to_unit_sphere(&c).is_err());
    }
}
