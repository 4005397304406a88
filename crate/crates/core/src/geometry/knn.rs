//! Exact k-nearest neighbors with a k-d tree.
//!
//! Equal distances are ordered by the neighbors' lexicographic coordinate
//! rank, so the neighbor lists depend only on the point set, not on the
//! order the points are stored in.

use std::collections::BinaryHeap;

use super::cloud::{lex_order, PointCloud};
use super::{sub, Point};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// Squared Euclidean distance, accumulated in x, y, z order.
pub fn dist2(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Each point's `k` nearest neighbors in ascending distance, with offsets
/// `position(q_j) − position(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    offsets: Vec<Point>,
    k: usize,
}

impl NeighborIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of points indexed.
    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, p: usize) -> &[usize] {
        &self.indices[p * self.k..(p + 1) * self.k]
    }

    pub fn neighbor_offsets(&self, p: usize) -> &[Point] {
        &self.offsets[p * self.k..(p + 1) * self.k]
    }

    /// Row-major `N × K` neighbor ids.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Row-major `N × K` offsets.
    pub fn offsets(&self) -> &[Point] {
        &self.offsets
    }
}

#[derive(Debug)]
enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// A static k-d tree over a point slice.
#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Point],
    /// Tie-break rank of each point.
    rank: Vec<usize>,
    perm: Vec<usize>,
    nodes: Vec<KdNode>,
}

#[derive(Clone, Copy)]
struct Candidate {
    d2: f64,
    rank: usize,
    id: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.rank.cmp(&other.rank))
    }
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point]) -> Self {
        let mut rank = vec![0; points.len()];
        for (r, i) in lex_order(points).into_iter().enumerate() {
            rank[i] = r;
        }
        let mut tree = KdTree {
            points,
            rank,
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let pts = self.points;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.perm[start..end] {
            for d in 0..3 {
                lo[d] = lo[d].min(pts[i][d]);
                hi[d] = hi[d].max(pts[i][d]);
            }
        }
        let dim = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        self.perm[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts[a][dim].total_cmp(&pts[b][dim]));
        let value = pts[self.perm[mid]][dim];
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = KdNode::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query` (ascending), skipping `exclude`.
    pub fn nearest(&self, query: Point, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, exclude, &mut heap);
        }
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.id, c.d2))
            .collect()
    }

    fn search(
        &self,
        node: usize,
        query: Point,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &id in &self.perm[start..end] {
                    if Some(id) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        d2: dist2(self.points[id], query),
                        rank: self.rank[id],
                        id,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, exclude, heap);
                // Equal bounds must still be visited: a tie may win on rank.
                if heap.len() < k || diff * diff <= heap.peek().expect("non-empty heap").d2 {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

/// Exact `k` nearest neighbors of every point.
///
/// With `include_self`, each point is its own rank-0 neighbor followed by its
/// `k − 1` nearest others.
pub fn knn_index(cloud: &PointCloud, k: usize, include_self: bool) -> Result<NeighborIndex> {
    let n = cloud.len();
    let available = if include_self { n } else { n.saturating_sub(1) };
    if k == 0 || k > available {
        return Err(Error::invalid(format!(
            "k = {k} neighbors requested from {n} points (include_self = {include_self})"
        )));
    }
    let pts = &cloud.positions;
    let tree = KdTree::build(pts);
    let mut indices = Vec::with_capacity(n * k);
    let mut offsets = Vec::with_capacity(n * k);
    for (p, &pos) in pts.iter().enumerate() {
        if include_self {
            indices.push(p);
            offsets.push([0.0; 3]);
        }
        let others = if include_self { k - 1 } else { k };
        for (q, _) in tree.nearest(pos, others, Some(p)) {
            indices.push(q);
            offsets.push(sub(pts[q], pos));
        }
    }
    Ok(NeighborIndex {
        indices,
        offsets,
        k,
    })
}
