//! The local point embedder: a light PointNet-style set encoder with a
//! 2x2 spatial transform, producing per-vertex unit-sphere embeddings.
//! Forward and reverse passes are hand-written over 64-bit floats so
//! gradients can be checked against finite differences exactly.

mod layers;
mod train;

pub use layers::{Layout, NormKind, TensorSpec};
pub use train::{
    load_checkpoint, save_checkpoint, validate_scene, Adam, Checkpoint, EpochLog, PipelineConfig,
    TrainConfig, Trainer, TrainerState,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{knn, NeighborhoodSet, PointCloud};
use crate::{Error, Result};

use layers::{
    l2_normalize_backward, l2_normalize_forward, maxpool_backward, maxpool_forward, Mode, Stage,
    StageCache, GROUP_NORM_GROUPS,
};

/// Floor on the neighborhood radius for degenerate (all-coincident)
/// neighborhoods.
const RAD_FLOOR: f64 = 1e-6;

/// Fixed point-feature width besides the pooled set feature:
/// elevation, radius, four transform entries, three color channels.
const POINT_FEATURE_DIM: usize = 9;
const SET_FEATURE_DIM: usize = 6;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpeConfig {
    /// Neighborhood size fed to the embedder.
    pub k: usize,
    /// Embedding dimension.
    pub m: usize,
    pub mlp1_widths: Vec<usize>,
    pub mlp2_widths: Vec<usize>,
    pub st_mlp1_widths: Vec<usize>,
    pub st_mlp2_widths: Vec<usize>,
    pub norm: NormKind,
}

impl Default for LpeConfig {
    fn default() -> Self {
        LpeConfig {
            k: 20,
            m: 4,
            mlp1_widths: vec![32, 128],
            mlp2_widths: vec![64, 32, 32, 4],
            st_mlp1_widths: vec![16, 64],
            st_mlp2_widths: vec![32, 16, 4],
            norm: NormKind::Batch,
        }
    }
}

impl LpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::validation("lpe.k must be >= 2"));
        }
        if self.m < 1 {
            return Err(Error::validation("lpe.m must be >= 1"));
        }
        for (name, widths) in [
            ("mlp1_widths", &self.mlp1_widths),
            ("mlp2_widths", &self.mlp2_widths),
            ("st_mlp1_widths", &self.st_mlp1_widths),
            ("st_mlp2_widths", &self.st_mlp2_widths),
        ] {
            if widths.is_empty() || widths.iter().any(|&w| w == 0) {
                return Err(Error::validation(format!("lpe.{name} must all be >= 1")));
            }
        }
        if *self.mlp2_widths.last().unwrap() != self.m {
            return Err(Error::validation(format!(
                "last mlp2 width {} must equal the embedding dimension {}",
                self.mlp2_widths.last().unwrap(),
                self.m
            )));
        }
        if *self.st_mlp2_widths.last().unwrap() != 4 {
            return Err(Error::validation(
                "last st_mlp2 width must be 4 (a 2x2 transform)",
            ));
        }
        if self.norm == NormKind::Group {
            // Every normalized width must split into the fixed group count.
            let normalized = self
                .mlp1_widths
                .iter()
                .chain(&self.mlp2_widths[..self.mlp2_widths.len() - 1])
                .chain(&self.st_mlp1_widths)
                .chain(&self.st_mlp2_widths[..self.st_mlp2_widths.len() - 1]);
            for &w in normalized {
                if w % GROUP_NORM_GROUPS != 0 {
                    return Err(Error::validation(format!(
                        "group norm needs widths divisible by {GROUP_NORM_GROUPS}, got {w}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-vertex unit-sphere embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Array2<f64>,
}

impl EmbeddingSet {
    pub fn new(vectors: Array2<f64>) -> Result<EmbeddingSet> {
        for (i, row) in vectors.rows().into_iter().enumerate() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "embedding {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(EmbeddingSet { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }
}

/// Gathered per-point network inputs for one batch of vertices.
pub struct LpeInput {
    pub n: usize,
    pub k: usize,
    /// Neighbor offsets normalized by the neighborhood radius, (n*k, 3).
    pub p_prime: Array2<f64>,
    /// Neighbor colors, (n*k, 3).
    pub neighbor_colors: Array2<f64>,
    /// Per-point elevation, (n,).
    pub elevation: Vec<f64>,
    /// Per-point neighborhood radius, (n,).
    pub radius: Vec<f64>,
    /// Per-point own color, (n, 3).
    pub own_color: Array2<f64>,
}

/// Builds network inputs for `subset` (or every point), with neighborhoods
/// looked up in the full cloud.
pub fn build_input(
    pc: &PointCloud,
    nbhd: &NeighborhoodSet,
    subset: Option<&[u32]>,
) -> Result<LpeInput> {
    pc.validate()?;
    if nbhd.n_points() != pc.len() {
        return Err(Error::validation(format!(
            "neighborhoods cover {} points, cloud has {}",
            nbhd.n_points(),
            pc.len()
        )));
    }
    let k = nbhd.k();
    if k < 2 {
        return Err(Error::validation("embedding neighborhoods need k >= 2"));
    }
    let all: Vec<u32>;
    let vertices: &[u32] = match subset {
        Some(list) => list,
        None => {
            all = (0..pc.len() as u32).collect();
            &all
        }
    };
    let n = vertices.len();
    let mut input = LpeInput {
        n,
        k,
        p_prime: Array2::zeros((n * k, 3)),
        neighbor_colors: Array2::zeros((n * k, 3)),
        elevation: Vec::with_capacity(n),
        radius: Vec::with_capacity(n),
        own_color: Array2::zeros((n, 3)),
    };
    for (i, &v) in vertices.iter().enumerate() {
        let p = pc.positions[v as usize];
        let neighbors = nbhd.neighbors(v);
        let mut sq = 0.0;
        for (j, &w) in neighbors.iter().enumerate() {
            let q = pc.positions[w as usize];
            for d in 0..3 {
                let diff = q[d] - p[d];
                input.p_prime[(i * k + j, d)] = diff;
                sq += diff * diff;
            }
            for d in 0..3 {
                input.neighbor_colors[(i * k + j, d)] = pc.colors[w as usize][d];
            }
        }
        // Scalar radius: root mean square over all 3k centered coordinates.
        let rad = (sq / (3 * k) as f64).sqrt().max(RAD_FLOOR);
        for j in 0..k {
            for d in 0..3 {
                input.p_prime[(i * k + j, d)] /= rad;
            }
        }
        input.elevation.push(p[2]);
        input.radius.push(rad);
        for d in 0..3 {
            input.own_color[(i, d)] = pc.colors[v as usize][d];
        }
    }
    Ok(input)
}

/// All learnable state of the embedder.
#[derive(Clone)]
pub struct LpeModel {
    cfg: LpeConfig,
    layout: Layout,
    stats_layout: Layout,
    params: Vec<f64>,
    stats: Vec<f64>,
    st1: Vec<Stage>,
    st2: Vec<Stage>,
    mlp1: Vec<Stage>,
    mlp2: Vec<Stage>,
}

/// Activations retained by a training-mode forward pass.
pub struct ForwardCache {
    st1: Vec<StageCache>,
    st_pool_arg: Vec<u32>,
    st1_rows: usize,
    st2: Vec<StageCache>,
    mlp1: Vec<StageCache>,
    pool_arg: Vec<u32>,
    mlp1_rows: usize,
    mlp2: Vec<StageCache>,
    embeddings: Array2<f64>,
    norms: Vec<f64>,
}

impl LpeModel {
    pub fn new(cfg: LpeConfig, seed: u64) -> Result<LpeModel> {
        cfg.validate()?;
        let mut layout = Layout::default();
        let mut stats_layout = Layout::default();
        let norm = Some(cfg.norm);

        let mut st1 = Vec::new();
        let mut in_dim = 3;
        for (i, &w) in cfg.st_mlp1_widths.iter().enumerate() {
            st1.push(Stage::new(
                &mut layout,
                &mut stats_layout,
                &format!("st1.{i}"),
                in_dim,
                w,
                true,
                norm,
            ));
            in_dim = w;
        }
        let mut st2 = Vec::new();
        for (i, &w) in cfg.st_mlp2_widths.iter().enumerate() {
            let last = i + 1 == cfg.st_mlp2_widths.len();
            st2.push(Stage::new(
                &mut layout,
                &mut stats_layout,
                &format!("st2.{i}"),
                in_dim,
                w,
                !last,
                if last { None } else { norm },
            ));
            in_dim = w;
        }

        let mut mlp1 = Vec::new();
        in_dim = SET_FEATURE_DIM;
        for (i, &w) in cfg.mlp1_widths.iter().enumerate() {
            mlp1.push(Stage::new(
                &mut layout,
                &mut stats_layout,
                &format!("mlp1.{i}"),
                in_dim,
                w,
                true,
                norm,
            ));
            in_dim = w;
        }
        let mut mlp2 = Vec::new();
        in_dim += POINT_FEATURE_DIM;
        for (i, &w) in cfg.mlp2_widths.iter().enumerate() {
            let last = i + 1 == cfg.mlp2_widths.len();
            mlp2.push(Stage::new(
                &mut layout,
                &mut stats_layout,
                &format!("mlp2.{i}"),
                in_dim,
                w,
                !last,
                if last { None } else { norm },
            ));
            in_dim = w;
        }

        let mut model = LpeModel {
            cfg,
            params: vec![0.0; layout.total],
            stats: vec![0.0; stats_layout.total],
            layout,
            stats_layout,
            st1,
            st2,
            mlp1,
            mlp2,
        };
        model.initialize(seed);
        Ok(model)
    }

    /// Fan-in-scaled uniform init for every linear layer, unit scale and
    /// zero shift for normalizations, and the identity transform for the
    /// final spatial-transform layer.
    fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages: Vec<Stage> = self
            .st1
            .iter()
            .chain(&self.st2)
            .chain(&self.mlp1)
            .chain(&self.mlp2)
            .cloned()
            .collect();
        for stage in &stages {
            let bound = 1.0 / (stage.in_dim as f64).sqrt();
            for i in 0..stage.out_dim * stage.in_dim {
                self.params[stage.w + i] = rng.random_range(-bound..bound);
            }
            for i in 0..stage.out_dim {
                self.params[stage.b + i] = rng.random_range(-bound..bound);
            }
            if stage.norm.is_some() {
                for i in 0..stage.out_dim {
                    self.params[stage.gamma + i] = 1.0;
                    self.params[stage.beta + i] = 0.0;
                }
            }
        }
        // Spatial transform starts at the identity so early training sees
        // unrotated neighborhoods.
        let st_out = self.st2.last().unwrap().clone();
        for i in 0..st_out.out_dim * st_out.in_dim {
            self.params[st_out.w + i] = 0.0;
        }
        let identity = [1.0, 0.0, 0.0, 1.0];
        for (i, v) in identity.iter().enumerate() {
            self.params[st_out.b + i] = *v;
        }
        for spec in &self.stats_layout.tensors {
            let value = if spec.name.ends_with("running_var") {
                1.0
            } else {
                0.0
            };
            for i in 0..spec.rows * spec.cols {
                self.stats[spec.offset + i] = value;
            }
        }
    }

    pub fn config(&self) -> &LpeConfig {
        &self.cfg
    }

    /// Exact number of learnable scalars (running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn stats_layout(&self) -> &Layout {
        &self.stats_layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn stats(&self) -> &[f64] {
        &self.stats
    }

    pub(crate) fn restore(
        cfg: LpeConfig,
        params: Vec<f64>,
        stats: Vec<f64>,
    ) -> Result<LpeModel> {
        let mut model = LpeModel::new(cfg, 0)?;
        if params.len() != model.params.len() || stats.len() != model.stats.len() {
            return Err(Error::validation(format!(
                "checkpoint holds {} parameters and {} statistics, model needs {} and {}",
                params.len(),
                stats.len(),
                model.params.len(),
                model.stats.len()
            )));
        }
        model.params = params;
        model.stats = stats;
        Ok(model)
    }

    /// Training-mode forward: returns embeddings and the activation cache
    /// for [`LpeModel::backward`]. Updates running statistics.
    pub fn forward_train(&mut self, input: &LpeInput) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(input)?;
        let (e, cache) = self.forward_impl(input, Mode::Train);
        Ok((e, cache.expect("training mode caches activations")))
    }

    /// Evaluation-mode forward (running statistics, no cache).
    pub fn embed(&self, input: &LpeInput) -> Result<Array2<f64>> {
        self.check_input(input)?;
        // Eval mode never writes the stats; the clone is cheap relative to
        // the matrix work and keeps this method &self.
        let mut stats = self.stats.clone();
        let (e, _) = self.forward_with(input, Mode::Eval, &mut stats);
        Ok(e)
    }

    fn check_input(&self, input: &LpeInput) -> Result<()> {
        if input.k != self.cfg.k {
            return Err(Error::validation(format!(
                "input neighborhoods have k = {}, model expects {}",
                input.k, self.cfg.k
            )));
        }
        if input.p_prime.nrows() != input.n * input.k
            || input.neighbor_colors.nrows() != input.n * input.k
            || input.elevation.len() != input.n
            || input.radius.len() != input.n
            || input.own_color.nrows() != input.n
        {
            return Err(Error::validation("inconsistent input array shapes"));
        }
        if input.n == 0 {
            return Err(Error::validation("cannot embed an empty batch"));
        }
        Ok(())
    }

    fn forward_impl(&mut self, input: &LpeInput, mode: Mode) -> (Array2<f64>, Option<ForwardCache>) {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.forward_with(input, mode, &mut stats);
        self.stats = stats;
        out
    }

    fn forward_with(
        &self,
        input: &LpeInput,
        mode: Mode,
        stats: &mut [f64],
    ) -> (Array2<f64>, Option<ForwardCache>) {
        let train = matches!(mode, Mode::Train);
        let (n, k) = (input.n, input.k);
        let mode_of = |_: usize| if train { Mode::Train } else { Mode::Eval };

        // Spatial transform tower over the normalized offsets.
        let mut h = input.p_prime.clone();
        let mut st1_caches = Vec::new();
        for stage in &self.st1 {
            let (next, cache) = stage.forward(h, &self.params, stats, k, mode_of(0));
            h = next;
            if let Some(c) = cache {
                st1_caches.push(c);
            }
        }
        let st1_rows = h.nrows();
        let (mut sh, st_pool_arg) = maxpool_forward(&h, k);
        drop(h);
        let mut st2_caches = Vec::new();
        for stage in &self.st2 {
            let (next, cache) = stage.forward(sh, &self.params, stats, 1, mode_of(0));
            sh = next;
            if let Some(c) = cache {
                st2_caches.push(c);
            }
        }
        let omega = sh; // (n, 4), row-major 2x2

        // Rotate the x/y offsets by each point's transform.
        let mut x_set = Array2::<f64>::zeros((n * k, SET_FEATURE_DIM));
        for i in 0..n {
            let (o00, o01, o10, o11) = (
                omega[(i, 0)],
                omega[(i, 1)],
                omega[(i, 2)],
                omega[(i, 3)],
            );
            for j in 0..k {
                let r = i * k + j;
                let (px, py, pz) = (
                    input.p_prime[(r, 0)],
                    input.p_prime[(r, 1)],
                    input.p_prime[(r, 2)],
                );
                x_set[(r, 0)] = px * o00 + py * o10;
                x_set[(r, 1)] = px * o01 + py * o11;
                x_set[(r, 2)] = pz;
                for d in 0..3 {
                    x_set[(r, 3 + d)] = input.neighbor_colors[(r, d)];
                }
            }
        }

        let mut g = x_set;
        let mut mlp1_caches = Vec::new();
        for stage in &self.mlp1 {
            let (next, cache) = stage.forward(g, &self.params, stats, k, mode_of(0));
            g = next;
            if let Some(c) = cache {
                mlp1_caches.push(c);
            }
        }
        let mlp1_rows = g.nrows();
        let (pooled, pool_arg) = maxpool_forward(&g, k);
        drop(g);

        let pooled_width = pooled.ncols();
        let mut xfeat = Array2::<f64>::zeros((n, pooled_width + POINT_FEATURE_DIM));
        for i in 0..n {
            for j in 0..pooled_width {
                xfeat[(i, j)] = pooled[(i, j)];
            }
            xfeat[(i, pooled_width)] = input.elevation[i];
            xfeat[(i, pooled_width + 1)] = input.radius[i];
            for d in 0..4 {
                xfeat[(i, pooled_width + 2 + d)] = omega[(i, d)];
            }
            for d in 0..3 {
                xfeat[(i, pooled_width + 6 + d)] = input.own_color[(i, d)];
            }
        }

        let mut ph = xfeat;
        let mut mlp2_caches = Vec::new();
        for stage in &self.mlp2 {
            let (next, cache) = stage.forward(ph, &self.params, stats, 1, mode_of(0));
            ph = next;
            if let Some(c) = cache {
                mlp2_caches.push(c);
            }
        }
        let (embeddings, norms) = l2_normalize_forward(&ph);

        let cache = train.then(|| ForwardCache {
            st1: st1_caches,
            st_pool_arg,
            st1_rows,
            st2: st2_caches,

            mlp1: mlp1_caches,
            pool_arg,
            mlp1_rows,
            mlp2: mlp2_caches,
            embeddings: embeddings.clone(),
            norms,
        });
        (embeddings, cache)
    }

    /// Exact gradients of a scalar loss with upstream gradient `de` with
    /// respect to every parameter, in layout order.
    pub fn backward(
        &self,
        input: &LpeInput,
        cache: &ForwardCache,
        de: ArrayView2<f64>,
    ) -> Result<Vec<f64>> {
        if de.dim() != cache.embeddings.dim() {
            return Err(Error::validation(format!(
                "upstream gradient shape {:?} does not match embeddings {:?}",
                de.dim(),
                cache.embeddings.dim()
            )));
        }
        let mut grads = vec![0.0; self.layout.total];
        let (n, k) = (input.n, input.k);
        let pooled_width = *self.cfg.mlp1_widths.last().unwrap();

        let mut d = l2_normalize_backward(&cache.embeddings, &cache.norms, &de.to_owned());
        for (stage, sc) in self.mlp2.iter().zip(&cache.mlp2).rev() {
            d = stage.backward(sc, d, &self.params, &mut grads);
        }

        // Split the point-feature gradient: pooled block, transform block;
        // elevation, radius, and colors are data.
        let d_pool = d.slice(ndarray::s![.., 0..pooled_width]).to_owned();
        let mut d_omega = d
            .slice(ndarray::s![.., pooled_width + 2..pooled_width + 6])
            .to_owned();

        let mut ds = maxpool_backward(&d_pool, &cache.pool_arg, cache.mlp1_rows);
        for (stage, sc) in self.mlp1.iter().zip(&cache.mlp1).rev() {
            ds = stage.backward(sc, ds, &self.params, &mut grads);
        }

        // The rotated offsets feed the transform gradient a second path.
        for i in 0..n {
            for j in 0..k {
                let r = i * k + j;
                let (px, py) = (input.p_prime[(r, 0)], input.p_prime[(r, 1)]);
                let (dx, dy) = (ds[(r, 0)], ds[(r, 1)]);
                d_omega[(i, 0)] += px * dx;
                d_omega[(i, 1)] += px * dy;
                d_omega[(i, 2)] += py * dx;
                d_omega[(i, 3)] += py * dy;
            }
        }

        let mut dt = d_omega;
        for (stage, sc) in self.st2.iter().zip(&cache.st2).rev() {
            dt = stage.backward(sc, dt, &self.params, &mut grads);
        }
        let mut du = maxpool_backward(&dt, &cache.st_pool_arg, cache.st1_rows);
        for (stage, sc) in self.st1.iter().zip(&cache.st1).rev() {
            du = stage.backward(sc, du, &self.params, &mut grads);
        }
        Ok(grads)
    }

    /// The spatial-transform unit for one point: normalized, transformed
    /// neighbor offsets plus the geometric point feature
    /// `[elevation, radius, transform entries]`.
    pub fn spatial_transform(
        &self,
        p: &[f64; 3],
        neighbors: &[[f64; 3]],
    ) -> Result<(Array2<f64>, [f64; 6])> {
        let k = neighbors.len();
        if k < 2 {
            return Err(Error::validation(format!(
                "spatial transform needs k >= 2 neighbors, got {k}"
            )));
        }
        let mut p_prime = Array2::<f64>::zeros((k, 3));
        let mut sq = 0.0;
        for (j, q) in neighbors.iter().enumerate() {
            for d in 0..3 {
                let diff = q[d] - p[d];
                p_prime[(j, d)] = diff;
                sq += diff * diff;
            }
        }
        let rad = (sq / (3 * k) as f64).sqrt().max(RAD_FLOOR);
        p_prime.mapv_inplace(|v| v / rad);

        let mut stats = self.stats.clone();
        let mut h = p_prime.clone();
        for stage in &self.st1 {
            let (next, _) = stage.forward(h, &self.params, &mut stats, k, Mode::Eval);
            h = next;
        }
        let (mut sh, _) = maxpool_forward(&h, k);
        for stage in &self.st2 {
            let (next, _) = stage.forward(sh, &self.params, &mut stats, 1, Mode::Eval);
            sh = next;
        }
        let omega = [sh[(0, 0)], sh[(0, 1)], sh[(0, 2)], sh[(0, 3)]];

        let mut transformed = p_prime.clone();
        for j in 0..k {
            let (px, py) = (p_prime[(j, 0)], p_prime[(j, 1)]);
            transformed[(j, 0)] = px * omega[0] + py * omega[2];
            transformed[(j, 1)] = px * omega[1] + py * omega[3];
        }
        Ok((
            transformed,
            [p[2], rad, omega[0], omega[1], omega[2], omega[3]],
        ))
    }

    /// The set encoder on explicit features: per-row MLP, max-pool,
    /// concatenation with the point feature, second MLP, and unit-sphere
    /// normalization. Accepts any number of set rows.
    pub fn lpe_forward(&self, x_set: ArrayView2<f64>, x_point: &[f64]) -> Result<Array1<f64>> {
        if x_set.ncols() != SET_FEATURE_DIM {
            return Err(Error::validation(format!(
                "set feature must have {SET_FEATURE_DIM} columns, got {}",
                x_set.ncols()
            )));
        }
        if x_set.nrows() == 0 {
            return Err(Error::validation("set feature needs at least one row"));
        }
        if x_point.len() != POINT_FEATURE_DIM {
            return Err(Error::validation(format!(
                "point feature must have {POINT_FEATURE_DIM} values, got {}",
                x_point.len()
            )));
        }
        let rows = x_set.nrows();
        let mut stats = self.stats.clone();
        let mut g = x_set.to_owned();
        for stage in &self.mlp1 {
            let (next, _) = stage.forward(g, &self.params, &mut stats, rows, Mode::Eval);
            g = next;
        }
        let (pooled, _) = maxpool_forward(&g, rows);
        let pooled_width = pooled.ncols();
        let mut xfeat = Array2::<f64>::zeros((1, pooled_width + POINT_FEATURE_DIM));
        for j in 0..pooled_width {
            xfeat[(0, j)] = pooled[(0, j)];
        }
        for (d, v) in x_point.iter().enumerate() {
            xfeat[(0, pooled_width + d)] = *v;
        }
        let mut ph = xfeat;
        for stage in &self.mlp2 {
            let (next, _) = stage.forward(ph, &self.params, &mut stats, 1, Mode::Eval);
            ph = next;
        }
        let (e, _) = l2_normalize_forward(&ph);
        Ok(e.index_axis(Axis(0), 0).to_owned())
    }
}

/// Embeds every point of a cloud in evaluation mode.
pub fn embed_cloud(model: &LpeModel, pc: &PointCloud) -> Result<EmbeddingSet> {
    let nbhd = knn(pc, model.config().k)?;
    let input = build_input(pc, &nbhd, None)?;
    EmbeddingSet::new(model.embed(&input)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config(norm: NormKind) -> LpeConfig {
        LpeConfig {
            k: 4,
            m: 2,
            mlp1_widths: vec![4, 8],
            mlp2_widths: vec![8, 2],
            st_mlp1_widths: vec![4, 8],
            st_mlp2_widths: vec![4, 4],
            norm,
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize, k: usize) -> LpeInput {
        let mut input = LpeInput {
            n,
            k,
            p_prime: Array2::zeros((n * k, 3)),
            neighbor_colors: Array2::zeros((n * k, 3)),
            elevation: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            radius: (0..n).map(|_| rng.random_range(0.05..0.4)).collect(),
            own_color: Array2::zeros((n, 3)),
        };
        for v in input.p_prime.iter_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
        for v in input.neighbor_colors.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        for v in input.own_color.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        input
    }

    #[test]
    fn embeddings_are_unit_norm() {
        for norm in [NormKind::Batch, NormKind::Group] {
            let mut model = LpeModel::new(tiny_config(norm), 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let input = random_input(&mut rng, 6, 4);
            let (e, _) = model.forward_train(&input).unwrap();
            for row in e.rows() {
                let n: f64 = row.iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
            let e_eval = model.embed(&input).unwrap();
            for row in e_eval.rows() {
                let n: f64 = row.iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_param_count_is_reported() {
        let model = LpeModel::new(LpeConfig::default(), 0).unwrap();
        // The published table lists 13,816 for this architecture family;
        // the exact layer shapes here give a different exact total, which
        // the model reports rather than forcing a match.
        let count = model.param_count();
        assert!((10_000..40_000).contains(&count), "got {count}");

        // Hand recount from the declared layout.
        let by_hand: usize = model
            .layout()
            .tensors
            .iter()
            .map(|t| t.rows * t.cols)
            .sum();
        assert_eq!(count, by_hand);
    }

    #[test]
    fn single_linear_layer_count() {
        let mut layout = Layout::default();
        layout.push("w", 7, 3);
        layout.push("b", 7, 1);
        assert_eq!(layout.total, 7 * 3 + 7);
    }

    #[test]
    fn doubling_widths_roughly_quadruples_linears() {
        let base = LpeModel::new(tiny_config(NormKind::Batch), 0).unwrap();
        let doubled_cfg = LpeConfig {
            k: 4,
            m: 4,
            mlp1_widths: vec![8, 16],
            mlp2_widths: vec![16, 4],
            st_mlp1_widths: vec![8, 16],
            st_mlp2_widths: vec![8, 4],
            norm: NormKind::Batch,
        };
        let doubled = LpeModel::new(doubled_cfg, 0).unwrap();
        let weight_total = |m: &LpeModel| -> usize {
            m.layout()
                .tensors
                .iter()
                .filter(|t| t.name.ends_with(".weight"))
                .map(|t| t.rows * t.cols)
                .sum()
        };
        let ratio = weight_total(&doubled) as f64 / weight_total(&base) as f64;
        assert!((2.5..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn identity_transform_at_init() {
        let model = LpeModel::new(tiny_config(NormKind::Batch), 3).unwrap();
        let p = [0.2, -0.1, 0.5];
        let neighbors = [
            [0.3, 0.0, 0.6],
            [0.1, -0.3, 0.4],
            [0.25, -0.05, 0.55],
            [0.0, 0.1, 0.3],
        ];
        let (transformed, geom) = model.spatial_transform(&p, &neighbors).unwrap();
        // Final ST layer starts at zero weights with identity bias.
        assert_eq!(&geom[2..6], &[1.0, 0.0, 0.0, 1.0]);
        // So the transformed offsets equal the normalized offsets.
        let rad = geom[1];
        for (j, q) in neighbors.iter().enumerate() {
            for d in 0..3 {
                let expect = (q[d] - p[d]) / rad;
                assert!((transformed[(j, d)] - expect).abs() < 1e-12);
            }
        }
        assert_eq!(geom[0], p[2]);
    }

    #[test]
    fn vertical_neighborhood_fixed_by_transform() {
        // Neighbors strictly above/below the point: x/y offsets are zero
        // and any 2x2 transform leaves them zero.
        let model = LpeModel::new(tiny_config(NormKind::Batch), 4).unwrap();
        let p = [1.0, 2.0, 0.0];
        let neighbors = [
            [1.0, 2.0, 0.5],
            [1.0, 2.0, -0.3],
            [1.0, 2.0, 1.0],
            [1.0, 2.0, 0.2],
        ];
        let (transformed, _) = model.spatial_transform(&p, &neighbors).unwrap();
        for j in 0..4 {
            assert_eq!(transformed[(j, 0)], 0.0);
            assert_eq!(transformed[(j, 1)], 0.0);
        }
    }

    #[test]
    fn spatial_transform_radius_definition() {
        let model = LpeModel::new(tiny_config(NormKind::Batch), 5).unwrap();
        let p = [0.0, 0.0, 0.0];
        let neighbors = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let (_, geom) = model.spatial_transform(&p, &neighbors).unwrap();
        // Root mean square over all 3k = 6 centered coordinates.
        assert!((geom[1] - (2.0f64 / 6.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spatial_transform_needs_two_neighbors() {
        let model = LpeModel::new(tiny_config(NormKind::Batch), 5).unwrap();
        assert!(model
            .spatial_transform(&[0.0; 3], &[[1.0, 0.0, 0.0]])
            .is_err());
    }

    #[test]
    fn degenerate_neighborhood_uses_radius_floor() {
        let model = LpeModel::new(tiny_config(NormKind::Batch), 5).unwrap();
        let p = [0.5, 0.5, 0.5];
        let neighbors = [p, p, p, p];
        let (_, geom) = model.spatial_transform(&p, &neighbors).unwrap();
        assert_eq!(geom[1], RAD_FLOOR);
    }

    #[test]
    fn lpe_forward_duplication_and_permutation_invariant() {
        let model = LpeModel::new(tiny_config(NormKind::Batch), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x_set = Array2::<f64>::zeros((4, SET_FEATURE_DIM));
        for v in x_set.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let x_point: Vec<f64> = (0..POINT_FEATURE_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let base = model.lpe_forward(x_set.view(), &x_point).unwrap();
        let norm: f64 = base.iter().map(|v| v * v).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-12);

        let doubled = ndarray::concatenate![ndarray::Axis(0), x_set.clone(), x_set.clone()];
        let dup = model.lpe_forward(doubled.view(), &x_point).unwrap();
        for (a, b) in base.iter().zip(dup.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut perm = Array2::<f64>::zeros((4, SET_FEATURE_DIM));
        for (j, src) in [2usize, 0, 3, 1].iter().enumerate() {
            for d in 0..SET_FEATURE_DIM {
                perm[(j, d)] = x_set[(*src, d)];
            }
        }
        let p = model.lpe_forward(perm.view(), &x_point).unwrap();
        for (a, b) in base.iter().zip(p.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut model = LpeModel::new(tiny_config(NormKind::Batch), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = random_input(&mut rng, 5, 4);
        let (e, cache) = model.forward_train(&input).unwrap();
        let zero = Array2::<f64>::zeros(e.dim());
        let grads = model.backward(&input, &cache, zero.view()).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    /// Central finite differences over every parameter of a tiny config.
    fn finite_difference_check(norm: NormKind, seed: u64) {
        let cfg = tiny_config(norm);
        let mut model = LpeModel::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let input = random_input(&mut rng, 6, 4);

        // Fixed random projection makes the scalar loss sum(e * t).
        let (e, cache) = model.forward_train(&input).unwrap();
        let mut target = Array2::<f64>::zeros(e.dim());
        for v in target.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let analytic = model.backward(&input, &cache, target.view()).unwrap();

        let h = 1e-6;
        let mut worst: (f64, String) = (0.0, String::new());
        let specs: Vec<TensorSpec> = model.layout().tensors.clone();
        for spec in &specs {
            for i in (0..spec.rows * spec.cols).step_by(3) {
                let idx = spec.offset + i;
                let saved = model.params()[idx];
                let stats_saved = model.stats().to_vec();

                model.params_mut()[idx] = saved + h;
                let (e_hi, _) = model.forward_train(&input).unwrap();
                let f_hi: f64 = (&e_hi * &target).sum();
                model.params_mut()[idx] = saved - h;
                let (e_lo, _) = model.forward_train(&input).unwrap();
                let f_lo: f64 = (&e_lo * &target).sum();
                model.params_mut()[idx] = saved;
                // Keep running statistics untouched by the probing passes.
                model.stats.copy_from_slice(&stats_saved);

                let fd = (f_hi - f_lo) / (2.0 * h);
                // The floor absorbs finite-difference roundoff on
                // parameters whose true gradient is (near) zero.
                let denom = analytic[idx].abs().max(fd.abs()).max(1e-4);
                let rel = (fd - analytic[idx]).abs() / denom;
                if rel > worst.0 {
                    worst = (rel, format!("{} [{}]", spec.name, i));
                }
                assert!(
                    rel < 1e-3,
                    "{} [{i}]: analytic {} vs fd {fd}",
                    spec.name,
                    analytic[idx]
                );
            }
        }
        eprintln!("worst relative error ({norm:?}): {:.3e} at {}", worst.0, worst.1);
    }

    #[test]
    fn gradients_match_finite_differences_batch_norm() {
        finite_difference_check(NormKind::Batch, 11);
    }

    #[test]
    fn gradients_match_finite_differences_group_norm() {
        finite_difference_check(NormKind::Group, 12);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config(NormKind::Batch);
        let mut a = LpeModel::new(cfg.clone(), 42).unwrap();
        let mut b = LpeModel::new(cfg, 42).unwrap();
        assert_eq!(a.params(), b.params());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_input(&mut rng, 5, 4);
        let (ea, _) = a.forward_train(&input).unwrap();
        let (eb, _) = b.forward_train(&input).unwrap();
        assert_eq!(ea, eb);
        assert_eq!(a.stats(), b.stats());
    }

    #[test]
    fn rejects_mismatched_k() {
        let model = LpeModel::new(tiny_config(NormKind::Batch), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_input(&mut rng, 3, 5);
        assert!(model.embed(&input).is_err());
    }
}
