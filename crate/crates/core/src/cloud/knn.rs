//! Exact Euclidean k-nearest neighbors and the symmetrized k-NN adjacency
//! graph. Distance ties break toward the smaller vertex id, so results do
//! not depend on evaluation order.

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::{Error, Result};

use super::PointCloud;

/// Adjacency-graph construction options. The embedding neighborhood size
/// lives in the embedder config; this `k` only shapes the graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjacencyConfig {
    pub k_adj: usize,
    /// Reserved: Delaunay edge augmentation is not implemented and enabling
    /// it is an error.
    pub delaunay: bool,
}

impl Default for AdjacencyConfig {
    fn default() -> Self {
        AdjacencyConfig {
            k_adj: 5,
            delaunay: false,
        }
    }
}

impl AdjacencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_adj == 0 {
            return Err(Error::validation("adjacency.k_adj must be >= 1"));
        }
        if self.delaunay {
            return Err(Error::validation(
                "adjacency.delaunay is reserved and not implemented",
            ));
        }
        Ok(())
    }
}

/// Exact k nearest neighbors per point (self excluded), sorted by distance
/// ascending with vertex-id tiebreak.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodSet {
    k: usize,
    ids: Vec<u32>,
}

impl NeighborhoodSet {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_points(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.ids.len() / self.k
        }
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        let start = v as usize * self.k;
        &self.ids[start..start + self.k]
    }
}

/// Exact k-NN for every point of the cloud.
pub fn knn(pc: &PointCloud, k: usize) -> Result<NeighborhoodSet> {
    pc.validate()?;
    let n = pc.len();
    if k == 0 || k >= n {
        return Err(Error::validation(format!(
            "k = {k} must satisfy 1 <= k < {n} points"
        )));
    }
    let tree = KdTree::build(&pc.positions);
    let mut ids = Vec::with_capacity(n * k);
    let mut heap = BoundedHeap::new(k);
    for q in 0..n as u32 {
        heap.clear();
        tree.nearest(&pc.positions, q, &mut heap);
        ids.extend(heap.sorted_ids());
    }
    Ok(NeighborhoodSet { k, ids })
}

/// The symmetrized k-NN graph: edge (u, v) iff v is among u's k nearest or
/// u among v's.
pub fn knn_graph(pc: &PointCloud, k: usize) -> Result<(Graph, NeighborhoodSet)> {
    let nbhd = knn(pc, k)?;
    let mut pairs = Vec::with_capacity(pc.len() * k);
    for u in 0..pc.len() as u32 {
        for &v in nbhd.neighbors(u) {
            pairs.push((u.min(v), u.max(v)));
        }
    }
    let g = Graph::build(pc.len(), &pairs)?;
    Ok((g, nbhd))
}

/// Max-heap of at most k `(distance^2, id)` candidates under the
/// lexicographic order that also breaks distance ties by id.
struct BoundedHeap {
    k: usize,
    items: Vec<(f64, u32)>,
}

impl BoundedHeap {
    fn new(k: usize) -> BoundedHeap {
        BoundedHeap {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn clear(&mut self) {
        self.items.clear();
    }

    fn worst_dist2(&self) -> Option<f64> {
        if self.items.len() < self.k {
            None
        } else {
            Some(self.items[0].0)
        }
    }

    fn key_less(a: (f64, u32), b: (f64, u32)) -> bool {
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    fn offer(&mut self, d2: f64, id: u32) {
        if self.items.len() == self.k {
            if !Self::key_less((d2, id), self.items[0]) {
                return;
            }
            self.pop_root();
        }
        self.items.push((d2, id));
        let mut child = self.items.len() - 1;
        while child > 0 {
            let parent = (child - 1) / 2;
            if Self::key_less(self.items[parent], self.items[child]) {
                self.items.swap(parent, child);
                child = parent;
            } else {
                break;
            }
        }
    }

    fn pop_root(&mut self) {
        let last = self.items.len() - 1;
        self.items.swap(0, last);
        self.items.pop();
        let mut parent = 0usize;
        loop {
            let mut largest = parent;
            for child in [2 * parent + 1, 2 * parent + 2] {
                if child < self.items.len() && Self::key_less(self.items[largest], self.items[child])
                {
                    largest = child;
                }
            }
            if largest == parent {
                break;
            }
            self.items.swap(parent, largest);
            parent = largest;
        }
    }

    fn sorted_ids(&self) -> Vec<u32> {
        let mut items = self.items.clone();
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        items.into_iter().map(|(_, id)| id).collect()
    }
}

/// Implicit balanced kd-tree over a permutation of the point indices;
/// splits cycle through the axes by depth.
struct KdTree {
    order: Vec<u32>,
}

impl KdTree {
    fn build(points: &[[f64; 3]]) -> KdTree {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        Self::split(points, &mut order, 0);
        KdTree { order }
    }

    fn split(points: &[[f64; 3]], order: &mut [u32], depth: usize) {
        if order.len() <= 1 {
            return;
        }
        let dim = depth % 3;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][dim]
                .total_cmp(&points[b as usize][dim])
                .then(a.cmp(&b))
        });
        let (left, rest) = order.split_at_mut(mid);
        Self::split(points, left, depth + 1);
        Self::split(points, &mut rest[1..], depth + 1);
    }

    fn nearest(&self, points: &[[f64; 3]], query: u32, heap: &mut BoundedHeap) {
        self.descend(points, query, heap, 0, self.order.len(), 0);
    }

    fn descend(
        &self,
        points: &[[f64; 3]],
        query: u32,
        heap: &mut BoundedHeap,
        lo: usize,
        hi: usize,
        depth: usize,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let node = self.order[mid];
        let q = points[query as usize];
        if node != query {
            let p = points[node as usize];
            let d2 = (0..3).map(|d| (q[d] - p[d]) * (q[d] - p[d])).sum();
            heap.offer(d2, node);
        }
        let dim = depth % 3;
        let diff = q[dim] - points[node as usize][dim];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.descend(points, query, heap, near.0, near.1, depth + 1);
        let must_check_far = match heap.worst_dist2() {
            None => true,
            Some(worst) => diff * diff <= worst,
        };
        if must_check_far {
            self.descend(points, query, heap, far.0, far.1, depth + 1);
        }
    }
}
