use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{load_off, pack_read, sample_mesh_surface};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Points of a text file: one `x y z` (or `x,y,z`) per line, `#` comments.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f32> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("malformed point `{line}`"),
            })?;
        if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected three finite coordinates, found `{line}`"),
            });
        }
        points.push([vals[0], vals[1], vals[2]]);
    }
    Ok(PointCloud::new(points, None))
}

/// Reads one cloud: cloud `index` of a `.gbpc` pack, an `.off` mesh
/// (its vertices, or `sample = (n, seed)` surface samples), or text.
pub fn load_cloud(path: &Path, index: usize, sample: Option<(usize, u64)>) -> Result<PointCloud> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "gbpc" => {
            let mut clouds = pack_read(path)?;
            let n = clouds.len();
            if index >= n {
                return Err(Error::invalid("input", format!("pack has {n} clouds, asked for index {index}")));
            }
            Ok(clouds.swap_remove(index))
        }
        "off" => {
            let mesh = load_off(path)?;
            match sample {
                Some((n, seed)) => sample_mesh_surface(&mesh, n, &mut ChaCha8Rng::seed_from_u64(seed)),
                None => Ok(PointCloud::new(
                    mesh.vertices.iter().map(|v| v.map(|x| x as f32)).collect(),
                    None,
                )),
            }
        }
        _ => parse_xyz(&std::fs::read_to_string(path)?, path),
    }
}
