use super::{norm, Point};
use crate::error::{Error, Result};

/// Positions with optional unit normals, per-point part labels and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point>,
    pub normals: Option<Vec<Point>>,
    pub part_labels: Option<Vec<usize>>,
    pub class_label: Option<usize>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        let c = PointCloud {
            positions,
            normals: None,
            part_labels: None,
            class_label: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_normals(mut self, normals: Vec<Point>) -> Result<Self> {
        self.normals = Some(normals);
        self.validate()?;
        Ok(self)
    }

    pub fn with_part_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        self.part_labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn with_class(mut self, label: usize) -> Self {
        self.class_label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::invalid("point cloud must have at least one point"));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point positions".into()));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::invalid(format!(
                    "{} normals for {n} points",
                    normals.len()
                )));
            }
            if let Some(i) = normals.iter().position(|&nv| (norm(nv) - 1.0).abs() > 1e-6) {
                return Err(Error::invalid(format!("normal {i} is not unit length")));
            }
        }
        if let Some(labels) = &self.part_labels {
            if labels.len() != n {
                return Err(Error::invalid(format!(
                    "{} part labels for {n} points",
                    labels.len()
                )));
            }
        }
        Ok(())
    }

    /// Keeps the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            part_labels: self
                .part_labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_label: self.class_label,
        }
    }

    /// Centroid, summed in lexicographic point order so that it does not
    /// depend on the order points are stored in.
    pub fn centroid(&self) -> Point {
        let mut c = [0.0; 3];
        for i in lex_order(&self.positions) {
            for (acc, v) in c.iter_mut().zip(self.positions[i]) {
                *acc += v;
            }
        }
        let n = self.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }
}

/// Indices sorting `points` lexicographically by `(x, y, z)`, then by index.
pub fn lex_order(points: &[Point]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (points[a], points[b]);
        p[0].total_cmp(&q[0])
            .then(p[1].total_cmp(&q[1]))
            .then(p[2].total_cmp(&q[2]))
            .then(a.cmp(&b))
    });
    order
}
