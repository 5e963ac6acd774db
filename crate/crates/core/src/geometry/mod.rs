//! Neighborhood graphs, edge features and per-point geometric descriptors.

mod cloud;
mod descriptor;
mod edge;
mod knn;

pub use cloud::{normalize_to_unit_sphere, PointCloud};
pub use descriptor::{
    descriptor_rows, geometric_descriptor, DescriptorForm, DescriptorItem, GeometricDescriptor,
};
pub use edge::{build_edge_features, edge_features};
pub use knn::{knn_search, BatchNeighbors, NeighborIndex, NeighborSpace};
