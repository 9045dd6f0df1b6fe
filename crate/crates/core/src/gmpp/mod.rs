//! Generalized minimal partition: fit a piecewise-constant vector field to
//! per-vertex embeddings over a sparse graph, paying a contrast-weighted
//! Potts penalty on every edge where the field changes.
//!
//! The solver is a modified l0 cut-pursuit: alternating two-center /
//! exact-binary-min-cut splits, refinement into constant connected
//! components, greedy energy-decreasing merges, and forced merges of
//! segments below the smallest-superpoint threshold, all under a
//! regularization strength ramped geometrically up to its final value.

mod maxflow;
mod oracle;

pub use oracle::brute_force_oracle;

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::graph::{connected_components, Graph, Partition, UnionFind};
use crate::{Error, Result};

use maxflow::Dinic;

/// Segments above this size use a two-sweep diameter approximation instead
/// of the exact quadratic farthest-pair scan when seeding a split.
const EXACT_FARTHEST_LIMIT: usize = 1024;

const ACCEPT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmppConfig {
    /// Normalized regularization strength; the effective strength is
    /// `lambda_tilde / (4c)` with `c = |E|/|V|`.
    pub lambda_tilde: f64,
    /// Exponential edge factor of the contrast weights.
    pub sigma: f64,
    /// Scale of the 3D coordinates concatenated to the embeddings.
    pub alpha_spat: f64,
    /// Smallest-superpoint base size at `lambda_tilde = 1`.
    pub n_min_base: usize,
    /// Geometric ramp factor of the regularization schedule.
    pub schedule_factor: f64,
    pub outer_iters: usize,
    pub split_iters: usize,
    /// Relative energy decrease below which the outer loop stops.
    pub tol: f64,
}

impl Default for GmppConfig {
    fn default() -> Self {
        GmppConfig {
            lambda_tilde: 1.0,
            sigma: 0.5,
            alpha_spat: 0.2,
            n_min_base: 10,
            schedule_factor: 0.7,
            outer_iters: 10,
            split_iters: 10,
            tol: 1e-4,
        }
    }
}

impl GmppConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tilde > 0.0) {
            return Err(Error::validation("gmpp.lambda_tilde must be > 0"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::validation("gmpp.sigma must be > 0"));
        }
        if !(self.alpha_spat >= 0.0) {
            return Err(Error::validation("gmpp.alpha_spat must be >= 0"));
        }
        if !(self.schedule_factor > 0.0 && self.schedule_factor < 1.0) {
            return Err(Error::validation(
                "gmpp.schedule_factor must lie in (0, 1)",
            ));
        }
        if self.n_min_base < 1 {
            return Err(Error::validation("gmpp.n_min_base must be >= 1"));
        }
        if self.outer_iters < 1 || self.split_iters < 1 {
            return Err(Error::validation(
                "gmpp iteration counts must be >= 1",
            ));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::validation("gmpp.tol must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GmppResult {
    pub partition: Partition,
    /// Per-segment representative: the mean of the augmented vectors.
    pub values: Array2<f64>,
    /// Energy of the returned partition at the final regularization.
    pub energy: f64,
    /// Energy after each outer iteration, at the final regularization.
    pub energy_trace: Vec<f64>,
}

/// Concatenates `alpha_spat`-scaled 3D coordinates to each embedding.
pub fn augment_embeddings(
    embeddings: ArrayView2<f64>,
    positions: &[[f64; 3]],
    alpha_spat: f64,
) -> Result<Array2<f64>> {
    if embeddings.nrows() != positions.len() {
        return Err(Error::validation(format!(
            "{} embeddings for {} positions",
            embeddings.nrows(),
            positions.len()
        )));
    }
    let m = embeddings.ncols();
    let mut out = Array2::<f64>::zeros((positions.len(), m + 3));
    for (i, p) in positions.iter().enumerate() {
        for d in 0..m {
            out[(i, d)] = embeddings[(i, d)];
        }
        for d in 0..3 {
            out[(i, m + d)] = alpha_spat * p[d];
        }
    }
    Ok(out)
}

/// Smallest allowed superpoint size for a given regularization strength:
/// `ceil(max(n1/2, n1 + n1/2 * log10(lambda_tilde)))`, at least 1. The
/// ceiling is the rounding that reproduces the published worked values.
pub fn n_min_of_lambda(n_min_base: usize, lambda_tilde: f64) -> usize {
    debug_assert!(n_min_base >= 1 && lambda_tilde > 0.0);
    let n1 = n_min_base as f64;
    let raw = (0.5 * n1).max(n1 + 0.5 * n1 * lambda_tilde.log10());
    (raw.ceil() as usize).max(1)
}

/// Energy of a partition: squared distance of every vector to its segment
/// mean plus the contrast-weighted Potts cost of every transition edge.
pub fn gmpp_energy(
    g: &Graph,
    vectors: ArrayView2<f64>,
    partition: &Partition,
    lambda_eff: f64,
    sigma: f64,
) -> f64 {
    assert_eq!(vectors.nrows(), g.n_vertices());
    assert_eq!(partition.n_vertices(), g.n_vertices());
    let flat = FlatVectors::from_view(vectors);
    let wbar = contrast_weights(g, &flat, sigma);
    let labels = partition.labels();
    fidelity_of_labels(&flat, labels, partition.n_segments())
        + lambda_eff * cut_weight(g, labels, &wbar)
}

/// Solves the relaxed problem on embeddings augmented with scaled
/// coordinates, with the effective strength `lambda_tilde / (4c)` and the
/// smallest-superpoint size derived from `lambda_tilde`.
pub fn solve(
    g: &Graph,
    embeddings: ArrayView2<f64>,
    positions: &[[f64; 3]],
    cfg: &GmppConfig,
) -> Result<GmppResult> {
    cfg.validate()?;
    let augmented = augment_embeddings(embeddings, positions, cfg.alpha_spat)?;
    let lambda_eff = if g.n_edges() == 0 {
        0.0
    } else {
        cfg.lambda_tilde / (4.0 * g.avg_connectivity())
    };
    let n_min = n_min_of_lambda(cfg.n_min_base, cfg.lambda_tilde);
    solve_raw(g, augmented.view(), lambda_eff, cfg.sigma, n_min, cfg)
}

/// One solve per ascending `lambda_tilde`, the smallest-superpoint size
/// adjusted per strength; no retraining or warm starting.
pub fn regularization_path(
    g: &Graph,
    embeddings: ArrayView2<f64>,
    positions: &[[f64; 3]],
    cfg: &GmppConfig,
    lambdas: &[f64],
) -> Result<Vec<GmppResult>> {
    if lambdas.is_empty() {
        return Err(Error::validation("regularization path needs >= 1 value"));
    }
    if lambdas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(
            "regularization path values must be strictly ascending",
        ));
    }
    lambdas
        .iter()
        .map(|&lt| {
            let mut step_cfg = cfg.clone();
            step_cfg.lambda_tilde = lt;
            solve(g, embeddings, positions, &step_cfg)
        })
        .collect()
}

/// Cut-pursuit on raw vectors with explicit effective strength and
/// smallest-superpoint size.
pub fn solve_raw(
    g: &Graph,
    vectors: ArrayView2<f64>,
    lambda_eff: f64,
    sigma: f64,
    n_min: usize,
    cfg: &GmppConfig,
) -> Result<GmppResult> {
    if g.n_vertices() == 0 {
        return Err(Error::validation("cannot partition the empty graph"));
    }
    if vectors.nrows() != g.n_vertices() {
        return Err(Error::validation(format!(
            "{} vectors for {} vertices",
            vectors.nrows(),
            g.n_vertices()
        )));
    }
    if !(lambda_eff >= 0.0) || !(sigma > 0.0) {
        return Err(Error::validation(
            "lambda_eff must be >= 0 and sigma > 0",
        ));
    }

    let data = FlatVectors::from_view(vectors);
    let wbar = contrast_weights(g, &data, sigma);
    let mut solver = Solver {
        g,
        data: &data,
        wbar: &wbar,
        lambda_eff,
        cfg,
        n_min,
    };
    Ok(solver.run())
}

/// Row-major copy of the vectors for cache-friendly segment arithmetic.
struct FlatVectors {
    values: Vec<f64>,
    dim: usize,
}

impl FlatVectors {
    fn from_view(view: ArrayView2<f64>) -> FlatVectors {
        let dim = view.ncols();
        let mut values = Vec::with_capacity(view.nrows() * dim);
        for row in view.rows() {
            values.extend(row.iter().copied());
        }
        FlatVectors { values, dim }
    }

    #[inline]
    fn row(&self, v: u32) -> &[f64] {
        let start = v as usize * self.dim;
        &self.values[start..start + self.dim]
    }

}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Unit-strength contrast weight per edge: `exp(-|a_u - a_v|^2 / sigma)`.
fn contrast_weights(g: &Graph, data: &FlatVectors, sigma: f64) -> Vec<f64> {
    g.edges()
        .iter()
        .map(|&(u, v)| (-dist2(data.row(u), data.row(v)) / sigma).exp())
        .collect()
}

#[derive(Clone)]
struct SegStat {
    sum: Vec<f64>,
    sumsq: f64,
    count: u32,
}

impl SegStat {
    fn empty(dim: usize) -> SegStat {
        SegStat {
            sum: vec![0.0; dim],
            sumsq: 0.0,
            count: 0,
        }
    }

    fn add(&mut self, row: &[f64]) {
        for (s, x) in self.sum.iter_mut().zip(row) {
            *s += x;
        }
        self.sumsq += row.iter().map(|x| x * x).sum::<f64>();
        self.count += 1;
    }

    /// Sum of squared distances of the members to their mean.
    fn fidelity(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.sumsq - self.sum.iter().map(|s| s * s).sum::<f64>() / self.count as f64
    }

    fn merged(&self, other: &SegStat) -> SegStat {
        SegStat {
            sum: self
                .sum
                .iter()
                .zip(&other.sum)
                .map(|(a, b)| a + b)
                .collect(),
            sumsq: self.sumsq + other.sumsq,
            count: self.count + other.count,
        }
    }
}

fn stats_of_labels(data: &FlatVectors, labels: &[u32], n_segments: usize) -> Vec<SegStat> {
    let mut stats = vec![SegStat::empty(data.dim); n_segments];
    for (v, &s) in labels.iter().enumerate() {
        stats[s as usize].add(data.row(v as u32));
    }
    stats
}

fn fidelity_of_labels(data: &FlatVectors, labels: &[u32], n_segments: usize) -> f64 {
    stats_of_labels(data, labels, n_segments)
        .iter()
        .map(SegStat::fidelity)
        .sum()
}

fn cut_weight(g: &Graph, labels: &[u32], wbar: &[f64]) -> f64 {
    g.edges()
        .iter()
        .enumerate()
        .filter(|&(_, &(u, v))| labels[u as usize] != labels[v as usize])
        .map(|(e, _)| wbar[e])
        .sum()
}

struct Solver<'a> {
    g: &'a Graph,
    data: &'a FlatVectors,
    wbar: &'a [f64],
    lambda_eff: f64,
    cfg: &'a GmppConfig,
    n_min: usize,
}

impl Solver<'_> {
    fn run(&mut self) -> GmppResult {
        let components = connected_components(self.g, |_, _, _| true);
        let mut labels: Vec<u32> = components.labels().to_vec();
        let mut n_segments = components.n_segments();

        let mut best_labels = labels.clone();
        let mut best_energy = self.energy_at(&labels, n_segments, self.lambda_eff);
        let mut previous = best_energy;
        let mut trace = Vec::with_capacity(self.cfg.outer_iters);

        let total = self.cfg.outer_iters;
        for t in 1..=total {
            let lambda_t =
                self.lambda_eff * self.cfg.schedule_factor.powi((total - t) as i32);

            self.split_pass(&mut labels, n_segments, lambda_t);
            let refined = connected_components(self.g, |_, u, v| {
                labels[u as usize] == labels[v as usize]
            });
            labels = refined.labels().to_vec();
            n_segments = refined.n_segments();

            n_segments = self.merge_pass(&mut labels, n_segments, lambda_t);

            let energy = self.energy_at(&labels, n_segments, self.lambda_eff);
            trace.push(energy);
            if energy < best_energy - ACCEPT_EPS {
                best_energy = energy;
                best_labels = labels.clone();
            }
            if (previous - energy).abs() <= self.cfg.tol * previous.abs().max(1e-12) {
                break;
            }
            previous = energy;
        }

        let partition = Partition::from_labels(&best_labels);
        let stats = stats_of_labels(self.data, partition.labels(), partition.n_segments());
        let mut values = Array2::<f64>::zeros((partition.n_segments(), self.data.dim));
        for (s, stat) in stats.iter().enumerate() {
            for d in 0..self.data.dim {
                values[(s, d)] = stat.sum[d] / stat.count as f64;
            }
        }
        GmppResult {
            energy: self.energy_at(partition.labels(), partition.n_segments(), self.lambda_eff),
            partition,
            values,
            energy_trace: trace,
        }
    }

    fn energy_at(&self, labels: &[u32], n_segments: usize, lambda: f64) -> f64 {
        fidelity_of_labels(self.data, labels, n_segments)
            + lambda * cut_weight(self.g, labels, self.wbar)
    }

    /// Tries to split every segment with an alternating two-center /
    /// exact-binary-min-cut refinement; accepts only strict decreases of
    /// the segment-local energy at the current strength.
    fn split_pass(&self, labels: &mut [u32], n_segments: usize, lambda_t: f64) {
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); n_segments];
        for (v, &s) in labels.iter().enumerate() {
            members[s as usize].push(v as u32);
        }

        let mut next_label = n_segments as u32;
        for verts in members.iter() {
            if verts.len() < 2 {
                continue;
            }
            if let Some(side1) = self.try_split(verts, labels, lambda_t) {
                for &v in &side1 {
                    labels[v as usize] = next_label;
                }
                next_label += 1;
            }
        }
    }

    /// Returns the vertices of the second side when splitting decreases the
    /// segment-local energy, or None.
    fn try_split(&self, verts: &[u32], labels: &[u32], lambda_t: f64) -> Option<Vec<u32>> {
        let dim = self.data.dim;
        let segment = labels[verts[0] as usize];

        // All-equal segments cannot profit from a split.
        let base = self.data.row(verts[0]);
        if verts.iter().all(|&v| dist2(self.data.row(v), base) == 0.0) {
            return None;
        }

        let (seed_a, seed_b) = self.farthest_pair(verts);
        let mut center0 = self.data.row(seed_a).to_vec();
        let mut center1 = self.data.row(seed_b).to_vec();

        let mut local_of = HashMap::with_capacity(verts.len());
        for (i, &v) in verts.iter().enumerate() {
            local_of.insert(v, i);
        }
        let mut internal_edges: Vec<(usize, usize, f64)> = Vec::new();
        for (i, &v) in verts.iter().enumerate() {
            for (w, e) in self.g.neighbors(v) {
                if w > v && labels[w as usize] == segment {
                    internal_edges.push((i, local_of[&w], self.wbar[e as usize]));
                }
            }
        }

        let mut assign = vec![false; verts.len()];
        for _ in 0..self.cfg.split_iters {
            let s = verts.len();
            let t = verts.len() + 1;
            let mut net = Dinic::new(verts.len() + 2);
            for (i, &v) in verts.iter().enumerate() {
                let row = self.data.row(v);
                net.add_edge(s, i, dist2(row, &center1), 0.0);
                net.add_edge(i, t, dist2(row, &center0), 0.0);
            }
            for &(i, j, w) in &internal_edges {
                net.add_edge(i, j, lambda_t * w, lambda_t * w);
            }
            net.max_flow(s, t);
            let side = net.source_side(s);
            let next: Vec<bool> = (0..verts.len()).map(|i| !side[i]).collect();

            let n1 = next.iter().filter(|&&b| b).count();
            if n1 == 0 || n1 == verts.len() {
                return None;
            }

            let mut stat0 = SegStat::empty(dim);
            let mut stat1 = SegStat::empty(dim);
            for (i, &v) in verts.iter().enumerate() {
                if next[i] {
                    stat1.add(self.data.row(v));
                } else {
                    stat0.add(self.data.row(v));
                }
            }
            for d in 0..dim {
                center0[d] = stat0.sum[d] / stat0.count as f64;
                center1[d] = stat1.sum[d] / stat1.count as f64;
            }
            let stable = next == assign;
            assign = next;
            if stable {
                break;
            }
        }

        let mut stat0 = SegStat::empty(dim);
        let mut stat1 = SegStat::empty(dim);
        let mut whole = SegStat::empty(dim);
        for (i, &v) in verts.iter().enumerate() {
            let row = self.data.row(v);
            whole.add(row);
            if assign[i] {
                stat1.add(row);
            } else {
                stat0.add(row);
            }
        }
        let cut: f64 = internal_edges
            .iter()
            .filter(|&&(i, j, _)| assign[i] != assign[j])
            .map(|&(_, _, w)| w)
            .sum();
        let split_energy = stat0.fidelity() + stat1.fidelity() + lambda_t * cut;
        let current = whole.fidelity();
        if split_energy < current - ACCEPT_EPS * current.abs().max(1.0) {
            debug_assert!(split_energy < current);
            Some(
                verts
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &v)| assign[i].then_some(v))
                    .collect(),
            )
        } else {
            None
        }
    }

    /// Exact farthest pair for small segments, two-sweep approximation for
    /// large ones. Both are deterministic.
    fn farthest_pair(&self, verts: &[u32]) -> (u32, u32) {
        if verts.len() <= EXACT_FARTHEST_LIMIT {
            let mut best = (verts[0], verts[1]);
            let mut best_d = -1.0;
            for (i, &a) in verts.iter().enumerate() {
                for &b in &verts[i + 1..] {
                    let d = dist2(self.data.row(a), self.data.row(b));
                    if d > best_d {
                        best_d = d;
                        best = (a, b);
                    }
                }
            }
            best
        } else {
            let sweep = |from: u32| {
                let mut best = from;
                let mut best_d = -1.0;
                for &v in verts {
                    let d = dist2(self.data.row(from), self.data.row(v));
                    if d > best_d {
                        best_d = d;
                        best = v;
                    }
                }
                best
            };
            let a = sweep(verts[0]);
            let b = sweep(a);
            (a, b)
        }
    }

    /// Greedy merges by largest energy decrease, then forced merges of
    /// undersized segments into the neighbor of least energy increase.
    /// Returns the new segment count after relabeling.
    fn merge_pass(&self, labels: &mut [u32], n_segments: usize, lambda_t: f64) -> usize {
        let mut stats = stats_of_labels(self.data, labels, n_segments);
        let mut adjacency: Vec<HashMap<u32, f64>> = vec![HashMap::new(); n_segments];
        for (e, &(u, v)) in self.g.edges().iter().enumerate() {
            let (a, b) = (labels[u as usize], labels[v as usize]);
            if a != b {
                *adjacency[a as usize].entry(b).or_insert(0.0) += self.wbar[e];
                *adjacency[b as usize].entry(a).or_insert(0.0) += self.wbar[e];
            }
        }

        let mut owner = UnionFind::new(n_segments);
        let mut alive = vec![true; n_segments];
        let mut version = vec![0u64; n_segments];

        let gain = |stats: &[SegStat], a: u32, b: u32, w: f64| -> f64 {
            let sa = &stats[a as usize];
            let sb = &stats[b as usize];
            let delta_fid = sa.fidelity() + sb.fidelity() - sa.merged(sb).fidelity();
            // delta_fid is -(fidelity increase); the merge gain is the cut
            // saving minus the fidelity increase.
            lambda_t * w + delta_fid
        };

        #[derive(PartialEq)]
        struct Cand {
            gain: f64,
            a: u32,
            b: u32,
            va: u64,
            vb: u64,
        }
        impl Eq for Cand {}
        impl Ord for Cand {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.gain
                    .total_cmp(&other.gain)
                    .then_with(|| other.a.cmp(&self.a))
                    .then_with(|| other.b.cmp(&self.b))
            }
        }
        impl PartialOrd for Cand {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut heap = std::collections::BinaryHeap::new();
        for a in 0..n_segments as u32 {
            for (&b, &w) in &adjacency[a as usize] {
                if a < b {
                    heap.push(Cand {
                        gain: gain(&stats, a, b, w),
                        a,
                        b,
                        va: 0,
                        vb: 0,
                    });
                }
            }
        }

        let merge = |stats: &mut Vec<SegStat>,
                         adjacency: &mut Vec<HashMap<u32, f64>>,
                         alive: &mut Vec<bool>,
                         version: &mut Vec<u64>,
                         owner: &mut UnionFind,
                         keep: u32,
                         gone: u32| {
            stats[keep as usize] = stats[keep as usize].merged(&stats[gone as usize]);
            alive[gone as usize] = false;
            version[keep as usize] += 1;
            version[gone as usize] += 1;
            owner.union(keep as usize, gone as usize);
            // Reroute the absorbed segment's adjacency into the keeper.
            let others: Vec<(u32, f64)> = adjacency[gone as usize]
                .iter()
                .map(|(&x, &w)| (x, w))
                .collect();
            adjacency[gone as usize].clear();
            for (x, w) in others {
                if x == keep {
                    continue;
                }
                adjacency[x as usize].remove(&gone);
                *adjacency[x as usize].entry(keep).or_insert(0.0) += w;
                *adjacency[keep as usize].entry(x).or_insert(0.0) += w;
            }
            adjacency[keep as usize].remove(&gone);
        };

        while let Some(cand) = heap.pop() {
            if cand.gain <= ACCEPT_EPS {
                break;
            }
            if !alive[cand.a as usize]
                || !alive[cand.b as usize]
                || version[cand.a as usize] != cand.va
                || version[cand.b as usize] != cand.vb
            {
                continue;
            }
            debug_assert!(cand.gain > 0.0, "accepted merge must decrease energy");
            merge(
                &mut stats,
                &mut adjacency,
                &mut alive,
                &mut version,
                &mut owner,
                cand.a,
                cand.b,
            );
            let neighbors: Vec<(u32, f64)> = adjacency[cand.a as usize]
                .iter()
                .map(|(&x, &w)| (x, w))
                .collect();
            for (x, w) in neighbors {
                let (lo, hi) = (cand.a.min(x), cand.a.max(x));
                heap.push(Cand {
                    gain: gain(&stats, lo, hi, w),
                    a: lo,
                    b: hi,
                    va: version[lo as usize],
                    vb: version[hi as usize],
                });
            }
        }

        // Forced merges: smallest undersized segment first, absorbed by the
        // neighbor whose merge costs the least energy.
        if self.n_min > 1 {
            loop {
                let mut target: Option<(u32, u32)> = None; // (size, seg)
                for s in 0..n_segments as u32 {
                    if alive[s as usize]
                        && (stats[s as usize].count as usize) < self.n_min
                        && !adjacency[s as usize].is_empty()
                    {
                        let key = (stats[s as usize].count, s);
                        if target.map_or(true, |t| key < t) {
                            target = Some(key);
                        }
                    }
                }
                let Some((_, small)) = target else { break };

                let mut best: Option<(f64, u32)> = None;
                for (&x, &w) in &adjacency[small as usize] {
                    let cost = -gain(&stats, small.min(x), small.max(x), w);
                    match best {
                        Some((bc, bx)) if (cost, x) >= (bc, bx) => {}
                        _ => best = Some((cost, x)),
                    }
                }
                let (_, into) = best.expect("undersized segment had a neighbor");
                merge(
                    &mut stats,
                    &mut adjacency,
                    &mut alive,
                    &mut version,
                    &mut owner,
                    into,
                    small,
                );
            }
        }

        for lab in labels.iter_mut() {
            *lab = owner.find(*lab as usize) as u32;
        }
        let renumbered = Partition::from_labels(labels);
        labels.copy_from_slice(renumbered.labels());
        renumbered.n_segments()
    }
}
