use std::path::Path;

use crate::error::{Error, Result};

/// Triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let v = vertices.len();
        if let Some((i, f)) = faces.iter().enumerate().find(|(_, f)| f.iter().any(|&x| x >= v)) {
            return Err(Error::invalid("mesh", format!("face {i} {f:?} indexes past {v} vertices")));
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn triangle(&self, f: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
}

pub fn load_off(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_off(&text, path)
}

/// Parses OFF text. `path` only labels errors. The counts may share the
/// header line, with or without a space (`OFF 8 6 0`, `OFF8 6 0`).
pub fn parse_off(text: &str, path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref().to_path_buf();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.clone(),
        line,
        msg,
    };
    // (1-based line number, content without comment)
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let last_line = text.lines().count().max(1);

    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file, expected `OFF` header".into()))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| err(hline, format!("expected `OFF` header, found `{header}`")))?;
    let (cline, counts) = if rest.trim().is_empty() {
        lines
            .next()
            .ok_or_else(|| err(last_line, "missing counts line".into()))?
    } else {
        (hline, rest.trim())
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| err(cline, format!("malformed counts line `{counts}`")))?;
    if counts.len() < 2 || counts.len() > 3 {
        return Err(err(cline, format!("counts line needs `V F [E]`, found {} values", counts.len())));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(last_line, format!("file ends after {i} of {nv} vertices")))?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(ln, format!("malformed vertex `{l}`")))?;
        if vals.len() < 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(err(ln, format!("vertex needs three finite coordinates, found `{l}`")));
        }
        vertices.push([vals[0], vals[1], vals[2]]);
    }

    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(last_line, format!("file ends after {i} of {nf} faces")))?;
        let mut toks = l.split_whitespace();
        let n: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(ln, format!("malformed face `{l}`")))?;
        if n != 3 {
            return Err(err(ln, format!("non-triangle face with {n} vertices")));
        }
        let mut f = [0usize; 3];
        for slot in &mut f {
            let idx: usize = toks
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(ln, format!("malformed face `{l}`")))?;
            if idx >= nv {
                return Err(err(ln, format!("vertex index {idx} out of range for {nv} vertices")));
            }
            *slot = idx;
        }
        faces.push(f);
    }
    Ok(Mesh { vertices, faces })
}
