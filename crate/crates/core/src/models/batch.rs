use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{knn_index, Point, PointCloud};
use crate::par;
use crate::spiderconv::NeighborTable;
use crate::tensor::Tensor;

/// Several clouds stacked row-wise, with their neighbor structure.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[M × input_channels]`: positions, then normals when requested.
    pub features: Tensor,
    /// Row range of each cloud.
    pub segments: Vec<Range<usize>>,
    /// Batch-global neighbor ids, absent when built with `k = 0`.
    pub neighbors: Option<Arc<NeighborTable>>,
    /// `q_j − p` per neighbor slot, `M·K` entries.
    pub offsets: Vec<Point>,
    /// Per-cloud class labels (empty if any cloud lacks one).
    pub labels: Vec<usize>,
    /// Per-point part labels (empty if any cloud lacks them).
    pub part_labels: Vec<usize>,
}

impl Batch {
    pub fn from_clouds(clouds: &[PointCloud], k: usize, input_channels: usize) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if input_channels == 6 && clouds.iter().any(|c| c.normals.is_none()) {
            return Err(Error::invalid("model expects normals but a cloud has none"));
        }
        let indices = if k > 0 {
            Some(
                par::map_slice(clouds, |c| knn_index(c, k, true))
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let total: usize = clouds.iter().map(PointCloud::len).sum();
        let mut features = Vec::with_capacity(total * input_channels);
        let mut segments = Vec::with_capacity(clouds.len());
        let mut table = Vec::with_capacity(total * k);
        let mut offsets = Vec::with_capacity(total * k);
        let mut start = 0;
        for (ci, cloud) in clouds.iter().enumerate() {
            for (i, p) in cloud.positions.iter().enumerate() {
                features.extend_from_slice(p);
                if input_channels == 6 {
                    features.extend_from_slice(&cloud.normals.as_ref().expect("checked")[i]);
                }
            }
            if let Some(idx) = &indices {
                table.extend(idx[ci].indices().iter().map(|&q| q + start));
                offsets.extend_from_slice(idx[ci].offsets());
            }
            segments.push(start..start + cloud.len());
            start += cloud.len();
        }
        let labels = clouds
            .iter()
            .map(|c| c.class_label)
            .collect::<Option<Vec<_>>>()
            .unwrap_or_default();
        let part_labels = clouds
            .iter()
            .map(|c| c.part_labels.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat())
            .unwrap_or_default();
        Ok(Batch {
            features: Tensor::new(vec![total, input_channels], features)?,
            segments,
            neighbors: indices.map(|_| Arc::new(NeighborTable::new(table, k))),
            offsets,
            labels,
            part_labels,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn clouds(&self) -> usize {
        self.segments.len()
    }

    /// Cloud index of every row.
    pub fn row_cloud(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.rows());
        for (ci, s) in self.segments.iter().enumerate() {
            out.extend(std::iter::repeat_n(ci, s.len()));
        }
        out
    }
}
