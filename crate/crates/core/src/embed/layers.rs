//! Dense layers over flat parameter storage, with hand-written exact
//! backward passes. A stage is linear -> ReLU -> normalization; final
//! stages drop the activation and normalization.
//!
//! All parameters live in one flat f64 vector described by a layout of
//! named tensors, which keeps the optimizer, gradient clipping, checkpoint
//! blobs, and finite-difference checks trivial.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

const NORM_EPS: f64 = 1e-5;
pub const GROUP_NORM_GROUPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Batch,
    Group,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        let offset = self.total;
        self.total += rows * cols;
        self.tensors.push(TensorSpec {
            name: name.into(),
            rows,
            cols,
            offset,
        });
        offset
    }
}

/// One dense block with parameter offsets into the shared vectors.
#[derive(Debug, Clone)]
pub struct Stage {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub relu: bool,
    pub norm: Option<NormKind>,
    pub w: usize,
    pub b: usize,
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

pub struct StageCache {
    x_in: Array2<f64>,
    relu_mask: Option<Vec<u8>>,
    norm: Option<NormCache>,
}

enum NormCache {
    Batch {
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Group {
        xhat: Array2<f64>,
        /// One inverse deviation per (sample, group).
        inv_std: Vec<f64>,
        rows_per_sample: usize,
    },
}

pub enum Mode {
    Train,
    Eval,
}

const RUNNING_MOMENTUM: f64 = 0.1;

impl Stage {
    pub fn new(
        layout: &mut Layout,
        stats: &mut Layout,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        relu: bool,
        norm: Option<NormKind>,
    ) -> Stage {
        let w = layout.push(format!("{name}.weight"), out_dim, in_dim);
        let b = layout.push(format!("{name}.bias"), out_dim, 1);
        let (mut gamma, mut beta) = (usize::MAX, usize::MAX);
        let (mut running_mean, mut running_var) = (usize::MAX, usize::MAX);
        if norm.is_some() {
            gamma = layout.push(format!("{name}.gamma"), out_dim, 1);
            beta = layout.push(format!("{name}.beta"), out_dim, 1);
        }
        if norm == Some(NormKind::Batch) {
            running_mean = stats.push(format!("{name}.running_mean"), out_dim, 1);
            running_var = stats.push(format!("{name}.running_var"), out_dim, 1);
        }
        Stage {
            name: name.to_string(),
            in_dim,
            out_dim,
            relu,
            norm,
            w,
            b,
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    fn weight<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.out_dim, self.in_dim),
            &params[self.w..self.w + self.out_dim * self.in_dim],
        )
        .expect("layout-consistent weight shape")
    }

    /// Forward pass. Training mode caches what backward needs and updates
    /// running statistics; eval mode normalizes with the stored statistics.
    pub fn forward(
        &self,
        x: Array2<f64>,
        params: &[f64],
        stats: &mut [f64],
        rows_per_sample: usize,
        mode: Mode,
    ) -> (Array2<f64>, Option<StageCache>) {
        debug_assert_eq!(x.ncols(), self.in_dim, "stage {}", self.name);
        let rows = x.nrows();
        let mut y = Array2::<f64>::zeros((rows, self.out_dim));
        general_mat_mul(1.0, &x, &self.weight(params).t(), 0.0, &mut y);
        let bias = &params[self.b..self.b + self.out_dim];
        for mut row in y.rows_mut() {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }

        let train = matches!(mode, Mode::Train);
        let relu_mask = if self.relu {
            if train {
                let mut mask = vec![0u8; rows * self.out_dim];
                for (i, v) in y.iter_mut().enumerate() {
                    if *v > 0.0 {
                        mask[i] = 1;
                    } else {
                        *v = 0.0;
                    }
                }
                Some(mask)
            } else {
                for v in y.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                None
            }
        } else {
            None
        };

        let norm_cache = match self.norm {
            None => None,
            Some(NormKind::Batch) => self.batch_norm(&mut y, params, stats, train),
            Some(NormKind::Group) => self.group_norm(&mut y, params, rows_per_sample, train),
        };

        let cache = train.then(|| StageCache {
            x_in: x,
            relu_mask,
            norm: norm_cache,
        });
        (y, cache)
    }

    fn batch_norm(
        &self,
        y: &mut Array2<f64>,
        params: &[f64],
        stats: &mut [f64],
        train: bool,
    ) -> Option<NormCache> {
        let rows = y.nrows();
        let c = self.out_dim;
        let gamma = &params[self.gamma..self.gamma + c];
        let beta = &params[self.beta..self.beta + c];

        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for row in y.rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= rows as f64;
            }
            for row in y.rows() {
                for (j, v) in row.iter().enumerate() {
                    let d = v - mean[j];
                    var[j] += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= rows as f64;
            }
            for j in 0..c {
                stats[self.running_mean + j] =
                    (1.0 - RUNNING_MOMENTUM) * stats[self.running_mean + j]
                        + RUNNING_MOMENTUM * mean[j];
                stats[self.running_var + j] = (1.0 - RUNNING_MOMENTUM)
                    * stats[self.running_var + j]
                    + RUNNING_MOMENTUM * var[j];
            }
            (mean, var)
        } else {
            (
                stats[self.running_mean..self.running_mean + c].to_vec(),
                stats[self.running_var..self.running_var + c].to_vec(),
            )
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        if train {
            let mut xhat = Array2::<f64>::zeros((rows, c));
            for (mut out_row, mut xh_row) in y.rows_mut().into_iter().zip(xhat.rows_mut()) {
                for j in 0..c {
                    let h = (out_row[j] - mean[j]) * inv_std[j];
                    xh_row[j] = h;
                    out_row[j] = gamma[j] * h + beta[j];
                }
            }
            Some(NormCache::Batch { xhat, inv_std })
        } else {
            for mut out_row in y.rows_mut() {
                for j in 0..c {
                    out_row[j] = gamma[j] * (out_row[j] - mean[j]) * inv_std[j] + beta[j];
                }
            }
            None
        }
    }

    fn group_norm(
        &self,
        y: &mut Array2<f64>,
        params: &[f64],
        rows_per_sample: usize,
        train: bool,
    ) -> Option<NormCache> {
        let rows = y.nrows();
        let c = self.out_dim;
        let groups = GROUP_NORM_GROUPS;
        debug_assert_eq!(c % groups, 0, "stage {}", self.name);
        debug_assert_eq!(rows % rows_per_sample, 0);
        let gsize = c / groups;
        let samples = rows / rows_per_sample;
        let gamma = &params[self.gamma..self.gamma + c];
        let beta = &params[self.beta..self.beta + c];

        let mut xhat = train.then(|| Array2::<f64>::zeros((rows, c)));
        let mut inv_std = Vec::with_capacity(samples * groups);
        let count = (rows_per_sample * gsize) as f64;
        for s in 0..samples {
            let r0 = s * rows_per_sample;
            for g in 0..groups {
                let c0 = g * gsize;
                let mut mean = 0.0;
                for r in r0..r0 + rows_per_sample {
                    for j in c0..c0 + gsize {
                        mean += y[(r, j)];
                    }
                }
                mean /= count;
                let mut var = 0.0;
                for r in r0..r0 + rows_per_sample {
                    for j in c0..c0 + gsize {
                        let d = y[(r, j)] - mean;
                        var += d * d;
                    }
                }
                var /= count;
                let istd = 1.0 / (var + NORM_EPS).sqrt();
                inv_std.push(istd);
                for r in r0..r0 + rows_per_sample {
                    for j in c0..c0 + gsize {
                        let h = (y[(r, j)] - mean) * istd;
                        if let Some(xh) = xhat.as_mut() {
                            xh[(r, j)] = h;
                        }
                        y[(r, j)] = gamma[j] * h + beta[j];
                    }
                }
            }
        }
        xhat.map(|xhat| NormCache::Group {
            xhat,
            inv_std,
            rows_per_sample,
        })
    }

    /// Backward pass for training-mode statistics. Accumulates parameter
    /// gradients into `grads` and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &StageCache,
        mut dy: Array2<f64>,
        params: &[f64],
        grads: &mut [f64],
    ) -> Array2<f64> {
        let rows = dy.nrows();
        let c = self.out_dim;

        match &cache.norm {
            None => {}
            Some(NormCache::Batch { xhat, inv_std }) => {
                let gamma = &params[self.gamma..self.gamma + c];
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (dy_row, xh_row) in dy.rows().into_iter().zip(xhat.rows()) {
                    for j in 0..c {
                        sum_dy[j] += dy_row[j];
                        sum_dy_xhat[j] += dy_row[j] * xh_row[j];
                    }
                }
                for j in 0..c {
                    grads[self.gamma + j] += sum_dy_xhat[j];
                    grads[self.beta + j] += sum_dy[j];
                }
                let n = rows as f64;
                for (mut dy_row, xh_row) in dy.rows_mut().into_iter().zip(xhat.rows()) {
                    for j in 0..c {
                        dy_row[j] = gamma[j] * inv_std[j]
                            * (dy_row[j] - sum_dy[j] / n - xh_row[j] * sum_dy_xhat[j] / n);
                    }
                }
            }
            Some(NormCache::Group {
                xhat,
                inv_std,
                rows_per_sample,
            }) => {
                let gamma = &params[self.gamma..self.gamma + c];
                let groups = GROUP_NORM_GROUPS;
                let gsize = c / groups;
                let samples = rows / rows_per_sample;
                let count = (rows_per_sample * gsize) as f64;
                for j in 0..c {
                    let mut dgamma = 0.0;
                    let mut dbeta = 0.0;
                    for r in 0..rows {
                        dgamma += dy[(r, j)] * xhat[(r, j)];
                        dbeta += dy[(r, j)];
                    }
                    grads[self.gamma + j] += dgamma;
                    grads[self.beta + j] += dbeta;
                }
                for s in 0..samples {
                    let r0 = s * rows_per_sample;
                    for g in 0..groups {
                        let c0 = g * gsize;
                        let istd = inv_std[s * groups + g];
                        let mut sum_t = 0.0;
                        let mut sum_t_xhat = 0.0;
                        for r in r0..r0 + rows_per_sample {
                            for j in c0..c0 + gsize {
                                let t = dy[(r, j)] * gamma[j];
                                sum_t += t;
                                sum_t_xhat += t * xhat[(r, j)];
                            }
                        }
                        for r in r0..r0 + rows_per_sample {
                            for j in c0..c0 + gsize {
                                let t = dy[(r, j)] * gamma[j];
                                dy[(r, j)] = istd
                                    * (t - sum_t / count - xhat[(r, j)] * sum_t_xhat / count);
                            }
                        }
                    }
                }
            }
        }

        if let Some(mask) = &cache.relu_mask {
            for (i, v) in dy.iter_mut().enumerate() {
                if mask[i] == 0 {
                    *v = 0.0;
                }
            }
        }

        // Linear: dW += dy^T x, db += colsum(dy), dx = dy W.
        {
            let mut dw = ArrayViewMut2::from_shape(
                (self.out_dim, self.in_dim),
                &mut grads[self.w..self.w + self.out_dim * self.in_dim],
            )
            .expect("layout-consistent weight shape");
            general_mat_mul(1.0, &dy.t(), &cache.x_in, 1.0, &mut dw);
        }
        for row in dy.rows() {
            for (j, v) in row.iter().enumerate() {
                grads[self.b + j] += v;
            }
        }
        let mut dx = Array2::<f64>::zeros((rows, self.in_dim));
        general_mat_mul(1.0, &dy, &self.weight(params), 0.0, &mut dx);
        dx
    }
}

/// Component-wise max over each sample's block of rows. Ties keep the
/// first row.
pub fn maxpool_forward(x: &Array2<f64>, rows_per_sample: usize) -> (Array2<f64>, Vec<u32>) {
    let rows = x.nrows();
    let c = x.ncols();
    debug_assert_eq!(rows % rows_per_sample, 0);
    let samples = rows / rows_per_sample;
    let mut out = Array2::<f64>::zeros((samples, c));
    let mut argmax = vec![0u32; samples * c];
    for s in 0..samples {
        let r0 = s * rows_per_sample;
        for j in 0..c {
            let mut best = x[(r0, j)];
            let mut best_row = r0;
            for r in r0 + 1..r0 + rows_per_sample {
                if x[(r, j)] > best {
                    best = x[(r, j)];
                    best_row = r;
                }
            }
            out[(s, j)] = best;
            argmax[s * c + j] = best_row as u32;
        }
    }
    (out, argmax)
}

pub fn maxpool_backward(dout: &Array2<f64>, argmax: &[u32], rows: usize) -> Array2<f64> {
    let c = dout.ncols();
    let mut dx = Array2::<f64>::zeros((rows, c));
    for s in 0..dout.nrows() {
        for j in 0..c {
            dx[(argmax[s * c + j] as usize, j)] += dout[(s, j)];
        }
    }
    dx
}

/// Row-wise projection onto the unit sphere.
pub fn l2_normalize_forward(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in y.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
        norms.push(norm);
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    (y, norms)
}

pub fn l2_normalize_backward(y: &Array2<f64>, norms: &[f64], dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    for ((mut dx_row, y_row), &norm) in dx.rows_mut().into_iter().zip(y.rows()).zip(norms) {
        let dot: f64 = y_row.iter().zip(dx_row.iter()).map(|(a, b)| a * b).sum();
        for (d, yv) in dx_row.iter_mut().zip(y_row) {
            *d = (*d - yv * dot) / norm;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn maxpool_duplication_invariant() {
        let x = array![[1.0, -2.0], [3.0, 0.5], [0.0, 4.0]];
        let doubled = ndarray::concatenate![ndarray::Axis(0), x.clone(), x.clone()];
        let (a, _) = maxpool_forward(&x, 3);
        let (b, _) = maxpool_forward(&doubled, 6);
        assert_eq!(a, b);
    }

    #[test]
    fn maxpool_ties_take_first_row() {
        let x = array![[5.0], [5.0], [1.0]];
        let (_, argmax) = maxpool_forward(&x, 3);
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn l2_rows_are_unit() {
        let x = array![[3.0, 4.0], [0.1, 0.0]];
        let (y, norms) = l2_normalize_forward(&x);
        assert!((y[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((y[(0, 1)] - 0.8).abs() < 1e-12);
        assert_eq!(norms[0], 5.0);
        for row in y.rows() {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_backward_matches_finite_differences() {
        let x = array![[0.4, -0.3, 0.9], [1.2, 0.1, -0.5]];
        let t = array![[0.2, 0.7, -0.1], [0.5, -0.4, 0.3]];
        let (y, norms) = l2_normalize_forward(&x);
        let dx = l2_normalize_backward(&y, &norms, &t);
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[(r, c)] += h;
                lo[(r, c)] -= h;
                let (yh, _) = l2_normalize_forward(&hi);
                let (yl, _) = l2_normalize_forward(&lo);
                let fh: f64 = (yh * &t).sum();
                let fl: f64 = (yl * &t).sum();
                let fd = (fh - fl) / (2.0 * h);
                assert!((fd - dx[(r, c)]).abs() < 1e-8);
            }
        }
    }
}
