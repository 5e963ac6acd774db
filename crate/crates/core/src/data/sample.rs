use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::Mesh;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub fn triangle_area(t: &[[f64; 3]; 3]) -> f64 {
    let u = [t[1][0] - t[0][0], t[1][1] - t[0][1], t[1][2] - t[0][2]];
    let v = [t[2][0] - t[0][0], t[2][1] - t[0][1], t[2][2] - t[0][2]];
    let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

/// Uniform surface sample: faces drawn with probability proportional to
/// area, positions by folded barycentric coordinates.
pub fn sample_mesh_surface<R: Rng + ?Sized>(mesh: &Mesh, n_points: usize, rng: &mut R) -> Result<PointCloud> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| triangle_area(&mesh.triangle(f))).collect();
    let total: f64 = areas.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::invalid("sample_mesh_surface", format!("total surface area is {total}")));
    }
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::invalid("sample_mesh_surface", e.to_string()))?;
    let points = (0..n_points)
        .map(|_| {
            let [a, b, c] = mesh.triangle(pick.sample(rng));
            let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            std::array::from_fn(|d| (a[d] + u * (b[d] - a[d]) + v * (c[d] - a[d])) as f32)
        })
        .collect();
    Ok(PointCloud::new(points, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_stay_in_triangle() {
        let m = Mesh::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = sample_mesh_surface(&m, 2000, &mut rng).unwrap();
        for p in &c.points {
            // barycentric weights of (x, y) against the right triangle
            let (u, v) = (p[0] as f64 / 2.0, p[1] as f64);
            let w = 1.0 - u - v;
            assert!(u >= -1e-6 && v >= -1e-6 && w >= -1e-6, "{p:?}");
            assert!((u + v + w - 1.0).abs() < 1e-12);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn faces_drawn_by_area() {
        // areas 1 and 3, separated in z
        let m = Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [3.0, 0.0, 1.0],
                [0.0, 2.0, 1.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = sample_mesh_surface(&m, n, &mut rng).unwrap();
        let hits = c.points.iter().filter(|p| p[2] == 1.0).count() as f64;
        let p = 0.75;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let frac = hits / n as f64;
        assert!((frac - p).abs() <= 3.0 * sigma, "fraction {frac}");
    }

    #[test]
    fn deterministic_and_zero_area() {
        let m = Mesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2], [0, 1, 3]])
            .unwrap();
        let a = sample_mesh_surface(&m, 64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_mesh_surface(&m, 64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        // the degenerate face never receives samples
        assert!(a.points.iter().all(|p| p[0] + p[1] <= 1.0 + 1e-6));
        let flat = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(sample_mesh_surface(&flat, 4, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }
}
