//! Sparse undirected graphs, vertex partitions, transition-edge sets, and
//! the cross-partition structure built from a ground-truth / proposed
//! partition pair.
//!
//! Edges are stored exactly once with `u < v`; every other module refers to
//! an edge by its index into [`Graph::edges`]. Segment ids are dense and
//! renumbered by first visit of a vertex-order scan so identical inputs
//! always produce identical ids.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Immutable sparse undirected graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_vertices: usize,
    edges: Vec<(u32, u32)>,
    neighbor_start: Vec<usize>,
    neighbor_vertex: Vec<u32>,
    neighbor_edge: Vec<u32>,
}

impl Graph {
    /// Builds a canonical graph from a possibly unsorted, duplicated edge
    /// list. Self-loops and out-of-range endpoints are rejected.
    pub fn build(n_vertices: usize, pairs: &[(u32, u32)]) -> Result<Graph> {
        let mut edges = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            if a == b {
                return Err(Error::validation(format!("self-loop at vertex {a}")));
            }
            if a as usize >= n_vertices || b as usize >= n_vertices {
                return Err(Error::validation(format!(
                    "edge ({a},{b}) out of range for {n_vertices} vertices"
                )));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();

        // CSR over both directions, edge index attached to each entry.
        let mut degree = vec![0usize; n_vertices];
        for &(u, v) in &edges {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut neighbor_start = vec![0usize; n_vertices + 1];
        for v in 0..n_vertices {
            neighbor_start[v + 1] = neighbor_start[v] + degree[v];
        }
        let mut cursor = neighbor_start.clone();
        let mut neighbor_vertex = vec![0u32; 2 * edges.len()];
        let mut neighbor_edge = vec![0u32; 2 * edges.len()];
        for (idx, &(u, v)) in edges.iter().enumerate() {
            let cu = cursor[u as usize];
            neighbor_vertex[cu] = v;
            neighbor_edge[cu] = idx as u32;
            cursor[u as usize] += 1;
            let cv = cursor[v as usize];
            neighbor_vertex[cv] = u;
            neighbor_edge[cv] = idx as u32;
            cursor[v as usize] += 1;
        }

        Ok(Graph {
            n_vertices,
            edges,
            neighbor_start,
            neighbor_vertex,
            neighbor_edge,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> (u32, u32) {
        self.edges[idx]
    }

    /// Average connectivity `c = |E| / |V|`.
    pub fn avg_connectivity(&self) -> f64 {
        self.edges.len() as f64 / self.n_vertices as f64
    }

    pub fn degree(&self, v: u32) -> usize {
        self.neighbor_start[v as usize + 1] - self.neighbor_start[v as usize]
    }

    /// Neighbors of `v` as `(neighbor, edge_index)` pairs.
    pub fn neighbors(&self, v: u32) -> impl Iterator<Item = (u32, u32)> + '_ {
        let lo = self.neighbor_start[v as usize];
        let hi = self.neighbor_start[v as usize + 1];
        self.neighbor_vertex[lo..hi]
            .iter()
            .copied()
            .zip(self.neighbor_edge[lo..hi].iter().copied())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphFile {
            n_vertices: self.n_vertices,
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
        })
        .expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Graph> {
        let file: GraphFile = serde_json::from_str(text)?;
        let pairs: Vec<(u32, u32)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::build(file.n_vertices, &pairs)
    }

    /// Compact binary form: little-endian u32 vertex and edge counts
    /// followed by one little-endian u32 pair per edge.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.n_vertices as u32).to_le_bytes())?;
        out.write_all(&(self.edges.len() as u32).to_le_bytes())?;
        for &(u, v) in &self.edges {
            out.write_all(&u.to_le_bytes())?;
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Graph> {
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let n_vertices = u32::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let n_edges = u32::from_le_bytes(word) as usize;
        let mut pairs = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            input.read_exact(&mut word)?;
            let u = u32::from_le_bytes(word);
            input.read_exact(&mut word)?;
            let v = u32::from_le_bytes(word);
            pairs.push((u, v));
        }
        Graph::build(n_vertices, &pairs)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    n_vertices: usize,
    edges: Vec<[u32; 2]>,
}

/// Assignment of every vertex to a dense segment id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    segment_of: Vec<u32>,
    n_segments: usize,
    segment_sizes: Vec<u32>,
}

impl Partition {
    /// Builds a partition from arbitrary labels, renumbering segment ids by
    /// first visit of the vertex-order scan.
    pub fn from_labels(labels: &[u32]) -> Partition {
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut segment_of = Vec::with_capacity(labels.len());
        let mut segment_sizes: Vec<u32> = Vec::new();
        for &raw in labels {
            let next = remap.len() as u32;
            let id = *remap.entry(raw).or_insert(next);
            if id as usize == segment_sizes.len() {
                segment_sizes.push(0);
            }
            segment_sizes[id as usize] += 1;
            segment_of.push(id);
        }
        Partition {
            segment_of,
            n_segments: segment_sizes.len(),
            segment_sizes,
        }
    }

    pub fn singletons(n: usize) -> Partition {
        Partition {
            segment_of: (0..n as u32).collect(),
            n_segments: n,
            segment_sizes: vec![1; n],
        }
    }

    pub fn single_segment(n: usize) -> Partition {
        Partition {
            segment_of: vec![0; n],
            n_segments: if n == 0 { 0 } else { 1 },
            segment_sizes: if n == 0 { vec![] } else { vec![n as u32] },
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.segment_of.len()
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn segment_of(&self, v: u32) -> u32 {
        self.segment_of[v as usize]
    }

    pub fn labels(&self) -> &[u32] {
        &self.segment_of
    }

    pub fn segment_size(&self, s: u32) -> u32 {
        self.segment_sizes[s as usize]
    }

    pub fn segment_sizes(&self) -> &[u32] {
        &self.segment_sizes
    }

    /// Member lists per segment, vertex ids ascending.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n_segments];
        for (v, &s) in self.segment_of.iter().enumerate() {
            out[s as usize].push(v as u32);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PartitionFile {
            n_segments: self.n_segments,
            segment_of: self.segment_of.clone(),
        })
        .expect("partition serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Partition> {
        let file: PartitionFile = serde_json::from_str(text)?;
        let p = Partition::from_labels(&file.segment_of);
        if p.n_segments != file.n_segments {
            return Err(Error::validation(format!(
                "partition claims {} segments but labels use {}",
                file.n_segments, p.n_segments
            )));
        }
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct PartitionFile {
    n_segments: usize,
    segment_of: Vec<u32>,
}

/// Edges whose endpoints lie in different segments of some partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionEdgeSet {
    flags: Vec<bool>,
    indices: Vec<u32>,
}

impl TransitionEdgeSet {
    pub fn from_flags(flags: Vec<bool>) -> TransitionEdgeSet {
        let indices = flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i as u32))
            .collect();
        TransitionEdgeSet { flags, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_graph_edges(&self) -> usize {
        self.flags.len()
    }

    pub fn contains(&self, edge_idx: u32) -> bool {
        self.flags[edge_idx as usize]
    }

    /// Sorted edge indices of the transition edges.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }
}

/// Marks exactly the edges whose endpoints lie in different segments.
pub fn transition_edges(g: &Graph, p: &Partition) -> Result<TransitionEdgeSet> {
    if p.n_vertices() != g.n_vertices() {
        return Err(Error::validation(format!(
            "partition covers {} vertices, graph has {}",
            p.n_vertices(),
            g.n_vertices()
        )));
    }
    let flags = g
        .edges()
        .iter()
        .map(|&(u, v)| p.segment_of(u) != p.segment_of(v))
        .collect();
    Ok(TransitionEdgeSet::from_flags(flags))
}

/// Partition of the vertices into components connected by edges where the
/// predicate holds. The predicate receives `(edge_index, u, v)`.
pub fn connected_components<F>(g: &Graph, mut same: F) -> Partition
where
    F: FnMut(u32, u32, u32) -> bool,
{
    let mut uf = UnionFind::new(g.n_vertices());
    for (idx, &(u, v)) in g.edges().iter().enumerate() {
        if same(idx as u32, u, v) {
            uf.union(u as usize, v as usize);
        }
    }
    let labels: Vec<u32> = (0..g.n_vertices()).map(|v| uf.find(v) as u32).collect();
    Partition::from_labels(&labels)
}

/// One nonempty intersection of a ground-truth and a proposed segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossNode {
    pub gt_segment: u32,
    pub proposed_segment: u32,
    pub size: u32,
}

/// Bundle of ground-truth transition edges joining two cross-partition nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperEdge {
    pub node_a: u32,
    pub node_b: u32,
    /// Indices into the graph's edge list, ascending.
    pub member_edges: Vec<u32>,
}

/// Adjacency structure over the nonempty intersections of a ground-truth
/// and a proposed partition, connected by ground-truth transition edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossPartitionGraph {
    pub nodes: Vec<CrossNode>,
    pub superedges: Vec<SuperEdge>,
    node_of_vertex: Vec<u32>,
}

impl CrossPartitionGraph {
    pub fn node_of_vertex(&self, v: u32) -> u32 {
        self.node_of_vertex[v as usize]
    }

    pub fn n_vertices(&self) -> usize {
        self.node_of_vertex.len()
    }
}

/// Builds the cross-partition graph of `gt` and `proposed` over `g`,
/// considering only ground-truth transition edges.
pub fn cross_partition(
    g: &Graph,
    gt: &Partition,
    proposed: &Partition,
) -> Result<CrossPartitionGraph> {
    if gt.n_vertices() != g.n_vertices() || proposed.n_vertices() != g.n_vertices() {
        return Err(Error::validation(format!(
            "partition sizes {} / {} do not match graph with {} vertices",
            gt.n_vertices(),
            proposed.n_vertices(),
            g.n_vertices()
        )));
    }

    let mut node_ids: HashMap<(u32, u32), u32> = HashMap::new();
    let mut nodes: Vec<CrossNode> = Vec::new();
    let mut node_of_vertex = Vec::with_capacity(g.n_vertices());
    for v in 0..g.n_vertices() as u32 {
        let key = (gt.segment_of(v), proposed.segment_of(v));
        let next = nodes.len() as u32;
        let id = *node_ids.entry(key).or_insert_with(|| {
            nodes.push(CrossNode {
                gt_segment: key.0,
                proposed_segment: key.1,
                size: 0,
            });
            next
        });
        nodes[id as usize].size += 1;
        node_of_vertex.push(id);
    }

    let gt_tra = transition_edges(g, gt)?;
    let mut superedge_ids: HashMap<(u32, u32), usize> = HashMap::new();
    let mut superedges: Vec<SuperEdge> = Vec::new();
    for &eidx in gt_tra.indices() {
        let (u, v) = g.edge(eidx as usize);
        let a = node_of_vertex[u as usize];
        let b = node_of_vertex[v as usize];
        debug_assert_ne!(a, b, "gt transition edge must join distinct nodes");
        let key = (a.min(b), a.max(b));
        let next = superedges.len();
        let slot = *superedge_ids.entry(key).or_insert_with(|| {
            superedges.push(SuperEdge {
                node_a: key.0,
                node_b: key.1,
                member_edges: Vec::new(),
            });
            next
        });
        superedges[slot].member_edges.push(eidx);
    }

    Ok(CrossPartitionGraph {
        nodes,
        superedges,
        node_of_vertex,
    })
}

/// Union-find with union by size and path halving.
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> UnionFind {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}
