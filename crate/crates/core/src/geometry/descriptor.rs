use std::fmt;

use super::cloud::PointCloud;
use super::knn::{knn_search, NeighborSpace};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// One block of a descriptor row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorItem {
    Point,
    Normal,
    NeighborNormal1,
    NeighborNormal2,
    Neighbor1,
    Neighbor2,
    Edge1,
    Edge2,
    Edge3,
    Length1,
    Length2,
    Length3,
}

impl DescriptorItem {
    pub fn width(self) -> usize {
        match self {
            DescriptorItem::Length1 | DescriptorItem::Length2 | DescriptorItem::Length3 => 1,
            _ => 3,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            DescriptorItem::Point => "",
            DescriptorItem::Normal => "n",
            DescriptorItem::NeighborNormal1 => "nj1",
            DescriptorItem::NeighborNormal2 => "nj2",
            DescriptorItem::Neighbor1 => "pj1",
            DescriptorItem::Neighbor2 => "pj2",
            DescriptorItem::Edge1 => "e1",
            DescriptorItem::Edge2 => "e2",
            DescriptorItem::Edge3 => "e3",
            DescriptorItem::Length1 => "l1",
            DescriptorItem::Length2 => "l2",
            DescriptorItem::Length3 => "l3",
        }
    }
}

/// Descriptor variant, numbered 1 to 8. Form 1 is the raw coordinates,
/// form 6 the default 14-value descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DescriptorForm(u8);

impl DescriptorForm {
    pub const COORDINATES: DescriptorForm = DescriptorForm(1);
    pub const DEFAULT: DescriptorForm = DescriptorForm(6);

    pub fn new(id: u8) -> Result<Self> {
        if (1..=8).contains(&id) {
            Ok(DescriptorForm(id))
        } else {
            Err(Error::invalid(
                "descriptor_form",
                format!("form {id} is not in 1..=8"),
            ))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn items(self) -> &'static [DescriptorItem] {
        use DescriptorItem::*;
        match self.0 {
            1 => &[Point],
            2 => &[Point, Normal, Length1, Length2],
            3 => &[Point, Edge1, Edge2, Length1, Length2],
            4 => &[Point, Neighbor1, Neighbor2, Length1, Length2],
            5 => &[Point, Normal, Edge1, Edge2],
            6 => &[Point, Normal, Edge1, Edge2, Length1, Length2],
            7 => &[Point, Normal, NeighborNormal1, NeighborNormal2, Edge1, Edge2],
            8 => &[
                Point,
                Normal,
                NeighborNormal1,
                NeighborNormal2,
                Edge1,
                Edge2,
                Edge3,
                Length1,
                Length2,
                Length3,
            ],
            _ => unreachable!("validated in DescriptorForm::new"),
        }
    }

    /// Row length.
    pub fn len(self) -> usize {
        self.items().iter().map(|i| i.width()).sum()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn column_names(self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        for item in self.items() {
            let p = item.prefix();
            if item.width() == 1 {
                names.push(p.to_string());
            } else {
                names.extend(["x", "y", "z"].iter().map(|a| format!("{p}{a}")));
            }
        }
        names
    }
}

impl Default for DescriptorForm {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for DescriptorForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-point descriptor rows, `n × form.len()` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricDescriptor<T> {
    pub values: Vec<T>,
    pub n: usize,
    pub form: DescriptorForm,
}

impl<T: Float> GeometricDescriptor<T> {
    pub fn m(&self) -> usize {
        self.form.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let m = self.m();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn into_tensor(self) -> Tensor<T> {
        let m = self.m();
        Tensor::new([self.n, m], self.values).expect("descriptor shape")
    }
}

fn sub<T: Float>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn neg<T: Float>(a: [T; 3]) -> [T; 3] {
    [-a[0], -a[1], -a[2]]
}

pub(crate) fn cross<T: Float>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm<T: Float>(a: [T; 3]) -> T {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Descriptor rows of `points`. Each point's two nearest neighbors `j1`,
/// `j2` (self excluded) give `edge1 = p_j1 - p`, `edge2 = p_j2 - p`,
/// `normal = edge1 × edge2`; extended forms add `edge3 = p_j1 - p_j2` and
/// the neighbor normals `(-edge1)×(-edge3)` and `(-edge2)×edge3`.
pub fn descriptor_rows<T: Float>(points: &[[T; 3]], form: DescriptorForm) -> Result<GeometricDescriptor<T>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid(
            "geometric_descriptor",
            format!("needs at least 3 points, got {n}"),
        ));
    }
    let m = form.len();
    let mut values = Vec::with_capacity(n * m);
    if form == DescriptorForm::COORDINATES {
        values.extend(points.iter().flatten().copied());
        return Ok(GeometricDescriptor { values, n, form });
    }
    let flat: Vec<T> = points.iter().flatten().copied().collect();
    let nbr = knn_search(&flat, n, 3, 2, NeighborSpace::Coordinate)?;
    for (i, &p) in points.iter().enumerate() {
        let (pj1, pj2) = (points[nbr.row(i)[0]], points[nbr.row(i)[1]]);
        let e1 = sub(pj1, p);
        let e2 = sub(pj2, p);
        let e3 = sub(pj1, pj2);
        for item in form.items() {
            use DescriptorItem::*;
            match item {
                Point => values.extend(p),
                Normal => values.extend(cross(e1, e2)),
                NeighborNormal1 => values.extend(cross(neg(e1), neg(e3))),
                NeighborNormal2 => values.extend(cross(neg(e2), e3)),
                Neighbor1 => values.extend(pj1),
                Neighbor2 => values.extend(pj2),
                Edge1 => values.extend(e1),
                Edge2 => values.extend(e2),
                Edge3 => values.extend(e3),
                Length1 => values.push(norm(e1)),
                Length2 => values.push(norm(e2)),
                Length3 => values.push(norm(e3)),
            }
        }
    }
    Ok(GeometricDescriptor { values, n, form })
}

pub fn geometric_descriptor(cloud: &PointCloud, form: DescriptorForm) -> Result<GeometricDescriptor<f32>> {
    descriptor_rows(&cloud.points, form)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_lengths() {
        let expected = [3, 8, 11, 11, 12, 14, 18, 24];
        for (id, &len) in (1..=8).zip(&expected) {
            let f = DescriptorForm::new(id).unwrap();
            assert_eq!(f.len(), len, "form {id}");
            assert_eq!(f.column_names().len(), len);
        }
        assert!(DescriptorForm::new(0).is_err());
        assert!(DescriptorForm::new(9).is_err());
    }

    #[test]
    fn right_triangle() {
        let pts = [[0.0f64, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]];
        let d = descriptor_rows(&pts, DescriptorForm::DEFAULT).unwrap();
        assert_eq!(
            d.row(0),
            &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn collinear_gives_zero_normal() {
        let pts = [[0.0f64, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let d = descriptor_rows(&pts, DescriptorForm::DEFAULT).unwrap();
        // point 0: j1 = 1, j2 = 2
        assert_eq!(&d.row(0)[3..6], &[0.0, 0.0, 0.0]);
        assert_eq!(&d.row(0)[12..], &[1.0, 2.0]);
    }

    #[test]
    fn too_few_points() {
        let pts = [[0.0f32; 3], [1.0, 0.0, 0.0]];
        assert!(descriptor_rows(&pts, DescriptorForm::DEFAULT).is_err());
    }

    #[test]
    fn extended_items() {
        let pts = [[0.0f64, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [9.0, 9.0, 9.0]];
        let d = descriptor_rows(&pts, DescriptorForm::new(8).unwrap()).unwrap();
        let r = d.row(0);
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 2.0, 0.0];
        let e3 = [1.0, -2.0, 0.0];
        assert_eq!(&r[3..6], &cross(e1, e2));
        assert_eq!(&r[6..9], &cross(neg(e1), neg(e3)));
        assert_eq!(&r[9..12], &cross(neg(e2), e3));
        assert_eq!(&r[12..15], &e1);
        assert_eq!(&r[15..18], &e2);
        assert_eq!(&r[18..21], &e3);
        assert_eq!(&r[21..], &[1.0, 2.0, 5f64.sqrt()]);

        let d4 = descriptor_rows(&pts, DescriptorForm::new(4).unwrap()).unwrap();
        assert_eq!(d4.row(0), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 1.0, 2.0]);
    }
}
