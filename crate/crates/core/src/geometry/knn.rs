use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::Float;

/// Space in which a neighborhood was searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeighborSpace {
    Coordinate,
    Feature,
}

/// `N×k` neighbor lists. Row `i` excludes `i` and is ordered by ascending
/// distance, ties broken by ascending index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    n: usize,
    k: usize,
    space: NeighborSpace,
}

impl NeighborIndex {
    pub fn from_rows(indices: Vec<usize>, n: usize, k: usize, space: NeighborSpace) -> Result<Self> {
        if indices.len() != n * k {
            return Err(Error::invalid(
                "neighbor_index",
                format!("{} entries for {n}×{k}", indices.len()),
            ));
        }
        if let Some(bad) = indices.iter().find(|&&j| j >= n) {
            return Err(Error::invalid(
                "neighbor_index",
                format!("index {bad} out of range for {n} points"),
            ));
        }
        Ok(NeighborIndex {
            indices,
            n,
            k,
            space,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn space(&self) -> NeighborSpace {
        self.space
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

fn by_distance_then_index<T: Float>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Squared Euclidean distance with a fixed summation order, so equal pairs
/// compare equal regardless of which point is the query.
#[inline]
pub(crate) fn squared_distance<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Exact k-nearest neighbors of every row of the row-major `n×dim` matrix
/// `features`, self excluded.
pub fn knn_search<T: Float>(
    features: &[T],
    n: usize,
    dim: usize,
    k: usize,
    space: NeighborSpace,
) -> Result<NeighborIndex> {
    if dim == 0 || features.len() != n * dim {
        return Err(Error::invalid(
            "knn_search",
            format!("{} values do not form {n} rows of width {dim}", features.len()),
        ));
    }
    if k >= n {
        return Err(Error::invalid(
            "knn_search",
            format!("k = {k} must be smaller than the number of points {n}"),
        ));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("knn_search", "non-finite feature value"));
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut cand: Vec<(T, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let xi = &features[i * dim..(i + 1) * dim];
        cand.clear();
        cand.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(xi, &features[j * dim..(j + 1) * dim]), j)),
        );
        if k > 0 {
            cand.select_nth_unstable_by(k - 1, by_distance_then_index);
            cand[..k].sort_unstable_by(by_distance_then_index);
        }
        indices.extend(cand[..k].iter().map(|&(_, j)| j));
    }
    Ok(NeighborIndex {
        indices,
        n,
        k,
        space,
    })
}

/// Neighbor lists of a batch flattened to global row indices `b·N + j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchNeighbors {
    pub batch: usize,
    pub n: usize,
    pub k: usize,
    pub rows: Vec<usize>,
}

impl BatchNeighbors {
    pub fn new(nbrs: &[NeighborIndex]) -> Result<Self> {
        let Some(first) = nbrs.first() else {
            return Err(Error::invalid("batch_neighbors", "empty batch"));
        };
        let (n, k) = (first.n, first.k);
        let mut rows = Vec::with_capacity(nbrs.len() * n * k);
        for (b, nb) in nbrs.iter().enumerate() {
            if nb.n != n || nb.k != k {
                return Err(Error::invalid(
                    "batch_neighbors",
                    format!("cloud {b} has {}×{}, expected {n}×{k}", nb.n, nb.k),
                ));
            }
            rows.extend(nb.indices.iter().map(|&j| b * n + j));
        }
        Ok(BatchNeighbors {
            batch: nbrs.len(),
            n,
            k,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points() {
        let x = [0.0f64, 1.0, 2.0, 4.0];
        let nb = knn_search(&x, 4, 1, 2, NeighborSpace::Coordinate).unwrap();
        assert_eq!(nb.row(0), &[1, 2]);
        assert_eq!(nb.row(3), &[2, 1]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        // equilateral triangle with exactly representable side lengths
        let tri = [1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let nb = knn_search(&tri, 3, 3, 1, NeighborSpace::Coordinate).unwrap();
        assert_eq!(nb.indices(), &[1, 0, 0]);

        let line = [-1.0f64, 0.0, 1.0];
        let nb = knn_search(&line, 3, 1, 1, NeighborSpace::Coordinate).unwrap();
        assert_eq!(nb.row(1), &[0]);
        let tri = [0.0f64, 0.0, 2.0, 0.0, 1.0, 2.0, 1.0, -2.0];
        let nb = knn_search(&tri, 4, 2, 1, NeighborSpace::Coordinate).unwrap();
        // points 0 and 1 are both at squared distance 5 from points 2 and 3
        assert_eq!(nb.row(2)[0], 0);
        assert_eq!(nb.row(3)[0], 0);
    }

    #[test]
    fn k_must_be_smaller_than_n() {
        let x = [0.0f32, 1.0, 2.0];
        assert!(knn_search(&x, 3, 1, 3, NeighborSpace::Feature).is_err());
        assert!(knn_search(&x, 3, 1, 2, NeighborSpace::Feature).is_ok());
    }

    #[test]
    fn batch_flattening_offsets_rows() {
        let a = NeighborIndex::from_rows(vec![1, 0], 2, 1, NeighborSpace::Feature).unwrap();
        let b = BatchNeighbors::new(&[a.clone(), a]).unwrap();
        assert_eq!(b.rows, vec![1, 0, 3, 2]);
    }
}
