//! Exact reference for tiny instances: exhaustive enumeration over all
//! vertex partitions whose blocks are connected in the graph. Any optimal
//! labeling's constant connected components form such a partition, so the
//! restriction loses no optima.

use ndarray::{Array2, ArrayView2};

use crate::graph::{Graph, Partition};
use crate::{Error, Result};

use super::{cut_weight, fidelity_of_labels, stats_of_labels, FlatVectors, GmppResult};

/// Global minimizer of the partition energy by enumeration of restricted
/// growth strings. Ties keep the lexicographically smallest canonical
/// assignment. Refuses graphs larger than `n_max`.
pub fn brute_force_oracle(
    g: &Graph,
    vectors: ArrayView2<f64>,
    lambda_eff: f64,
    sigma: f64,
    n_max: usize,
) -> Result<GmppResult> {
    let n = g.n_vertices();
    if n == 0 {
        return Err(Error::validation("cannot partition the empty graph"));
    }
    if n > n_max {
        return Err(Error::Refused(format!(
            "oracle limited to {n_max} vertices, got {n}"
        )));
    }
    if vectors.nrows() != n {
        return Err(Error::validation(format!(
            "{} vectors for {} vertices",
            vectors.nrows(),
            n
        )));
    }
    if !(lambda_eff >= 0.0) || !(sigma > 0.0) {
        return Err(Error::validation(
            "lambda_eff must be >= 0 and sigma > 0",
        ));
    }

    let data = FlatVectors::from_view(vectors);
    let wbar = super::contrast_weights(g, &data, sigma);

    let mut labels = vec![0u32; n];
    let mut best_labels = vec![0u32; n];
    let mut best_energy = f64::INFINITY;
    enumerate(
        g,
        &data,
        &wbar,
        lambda_eff,
        &mut labels,
        1,
        &mut best_labels,
        &mut best_energy,
    );

    let partition = Partition::from_labels(&best_labels);
    let stats = stats_of_labels(&data, partition.labels(), partition.n_segments());
    let mut values = Array2::<f64>::zeros((partition.n_segments(), data.dim));
    for (s, stat) in stats.iter().enumerate() {
        for d in 0..data.dim {
            values[(s, d)] = stat.sum[d] / stat.count as f64;
        }
    }
    Ok(GmppResult {
        partition,
        values,
        energy: best_energy,
        energy_trace: vec![best_energy],
    })
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    g: &Graph,
    data: &FlatVectors,
    wbar: &[f64],
    lambda_eff: f64,
    labels: &mut Vec<u32>,
    fixed: usize,
    best_labels: &mut Vec<u32>,
    best_energy: &mut f64,
) {
    let n = labels.len();
    if fixed == n {
        if !blocks_connected(g, labels) {
            return;
        }
        let n_segments = labels.iter().copied().max().unwrap() as usize + 1;
        let energy = fidelity_of_labels(data, labels, n_segments)
            + lambda_eff * cut_weight(g, labels, wbar);
        if energy < *best_energy {
            *best_energy = energy;
            best_labels.copy_from_slice(labels);
        }
        return;
    }
    let used = labels[..fixed].iter().copied().max().unwrap();
    for next in 0..=used + 1 {
        labels[fixed] = next;
        enumerate(
            g,
            data,
            wbar,
            lambda_eff,
            labels,
            fixed + 1,
            best_labels,
            best_energy,
        );
    }
}

fn blocks_connected(g: &Graph, labels: &[u32]) -> bool {
    let n_segments = labels.iter().copied().max().unwrap() as usize + 1;
    let mut uf = crate::graph::UnionFind::new(labels.len());
    for &(u, v) in g.edges() {
        if labels[u as usize] == labels[v as usize] {
            uf.union(u as usize, v as usize);
        }
    }
    let mut root_of_segment = vec![usize::MAX; n_segments];
    for v in 0..labels.len() {
        let seg = labels[v] as usize;
        let root = uf.find(v);
        if root_of_segment[seg] == usize::MAX {
            root_of_segment[seg] = root;
        } else if root_of_segment[seg] != root {
            return false;
        }
    }
    true
}
