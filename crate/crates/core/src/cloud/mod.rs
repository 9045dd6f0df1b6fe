//! Labeled point clouds: file ingestion, exact k-nearest-neighbor
//! adjacency graphs, synthetic labeled scenes, and training-time
//! augmentation.

mod augment;
mod io;
mod knn;
mod synth;

pub use augment::{augment, AugmentParams};
pub use io::{load_cloud, save_cloud, CloudFormat};
pub use knn::{knn, knn_graph, AdjacencyConfig, NeighborhoodSet};
pub use synth::{synth_scene, SceneSpec};

use crate::{Error, Result};

/// A colored, object- and class-labeled point set.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// Positions in meters.
    pub positions: Vec<[f64; 3]>,
    /// Colors in [0, 1].
    pub colors: Vec<[f64; 3]>,
    /// Ground-truth object id per point.
    pub object_id: Vec<u32>,
    /// Semantic class per point.
    pub class_id: Vec<u32>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::validation("point cloud is empty"));
        }
        if self.colors.len() != n || self.object_id.len() != n || self.class_id.len() != n {
            return Err(Error::validation(format!(
                "array lengths differ: {} positions, {} colors, {} object ids, {} class ids",
                n,
                self.colors.len(),
                self.object_id.len(),
                self.class_id.len()
            )));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite coordinate at point {i}"
                )));
            }
        }
        for (i, c) in self.colors.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::validation(format!(
                    "color out of [0,1] at point {i}"
                )));
            }
        }
        Ok(())
    }
}
