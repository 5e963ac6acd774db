use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const PACK_MAGIC: &[u8; 4] = b"GBPC";
pub const PACK_VERSION: u32 = 1;
/// Label field of a cloud without a label.
const NO_LABEL: u32 = u32::MAX;

pub fn write_pack_bytes(clouds: &[PointCloud]) -> Result<Vec<u8>> {
    let floats: usize = clouds.iter().map(|c| c.len() * 3).sum();
    let mut out = Vec::with_capacity(12 + 8 * clouds.len() + 4 * floats);
    out.extend_from_slice(PACK_MAGIC);
    out.extend_from_slice(&PACK_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(clouds.len(), "cloud count")?.to_le_bytes());
    for c in clouds {
        out.extend_from_slice(&u32_of(c.len(), "point count")?.to_le_bytes());
        let label = match c.label {
            Some(l) if l < NO_LABEL as usize => l as u32,
            Some(l) => return Err(Error::Format(format!("label {l} does not fit the pack"))),
            None => NO_LABEL,
        };
        out.extend_from_slice(&label.to_le_bytes());
        for p in &c.points {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated pack while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_pack_bytes(bytes: &[u8]) -> Result<Vec<PointCloud>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != PACK_MAGIC {
        return Err(Error::Format(format!("bad pack magic {magic:?}, expected \"GBPC\"")));
    }
    let version = r.u32("version")?;
    if version != PACK_VERSION {
        return Err(Error::Version {
            expected: PACK_VERSION,
            found: version,
        });
    }
    let count = r.u32("cloud count")? as usize;
    let mut clouds = Vec::with_capacity(count.min(bytes.len() / 8));
    for i in 0..count {
        let n = r.u32("point count")? as usize;
        let label = r.u32("label")?;
        let raw = r.take(n * 12, &format!("points of cloud {i}"))?;
        let points = raw
            .chunks_exact(12)
            .map(|p| std::array::from_fn(|d| f32::from_le_bytes(p[4 * d..4 * d + 4].try_into().unwrap())))
            .collect();
        let label = (label != NO_LABEL).then_some(label as usize);
        clouds.push(PointCloud::new(points, label));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last cloud", bytes.len() - r.pos)));
    }
    Ok(clouds)
}

pub fn pack_write(path: impl AsRef<Path>, clouds: &[PointCloud]) -> Result<()> {
    std::fs::write(path, write_pack_bytes(clouds)?)?;
    Ok(())
}

pub fn pack_read(path: impl AsRef<Path>) -> Result<Vec<PointCloud>> {
    read_pack_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_pack_is_header_only() {
        let b = write_pack_bytes(&[]).unwrap();
        assert_eq!(b.len(), 12);
        assert!(read_pack_bytes(&b).unwrap().is_empty());
    }

    #[test]
    fn one_cloud_size_and_round_trip() {
        let c = PointCloud::new(vec![[0.5, -1.0, 2.0], [f32::MIN_POSITIVE, 0.0, -0.0], [1e-30, 3.0, 4.0], [7.0, 8.0, 9.0]], Some(3));
        let b = write_pack_bytes(std::slice::from_ref(&c)).unwrap();
        assert_eq!(b.len(), 4 + 4 + 4 + 4 + 4 + 48);
        let back = read_pack_bytes(&b).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].label, Some(3));
        for (p, q) in back[0].points.iter().zip(&c.points) {
            for d in 0..3 {
                assert_eq!(p[d].to_bits(), q[d].to_bits());
            }
        }
    }

    #[test]
    fn unlabeled_round_trip() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0]], None);
        let back = read_pack_bytes(&write_pack_bytes(std::slice::from_ref(&c)).unwrap()).unwrap();
        assert_eq!(back, vec![c]);
    }

    #[test]
    fn corrupt_magic_version_and_truncation() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0]; 4], Some(0));
        let good = write_pack_bytes(&[c]).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_pack_bytes(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(read_pack_bytes(&bad), Err(Error::Version { expected: 1, found: 9 })));
        for cut in [3, 11, 15, 30, good.len() - 1] {
            assert!(matches!(read_pack_bytes(&good[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut long = good;
        long.push(0);
        assert!(read_pack_bytes(&long).is_err());
    }
}
