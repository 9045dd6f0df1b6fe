//! Training loop: per step, sample subgraphs from a batch of augmented
//! clouds, embed them, partition the current embeddings to derive the
//! cross-partition loss weights (as constants), backpropagate the
//! graph-structured contrastive loss, clip the global gradient norm, and
//! take an Adam step. Everything is driven by one counter-based RNG so
//! runs and resumes are bit-reproducible.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{augment, knn, knn_graph, AdjacencyConfig, AugmentParams, PointCloud};
use crate::gmpp::{self, GmppConfig};
use crate::graph::{cross_partition, transition_edges, Graph, Partition};
use crate::loss::{self, LossConfig, Weighting};
use crate::metrics::{self, MetricsReport};
use crate::{Error, Result};

use super::{build_input, embed_cloud, LpeConfig, LpeModel, TensorSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clouds per optimizer step.
    pub batch_clouds: usize,
    /// Vertices sampled per cloud and step.
    pub subgraph_size: usize,
    pub learning_rate: f64,
    /// Epochs (1-indexed) at whose start the rate is multiplied by
    /// `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Outer iterations of the per-step partition that only feeds the loss
    /// weights; the final partitioning uses the full solver config.
    pub weight_solver_iters: usize,
    pub augment: AugmentParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_clouds: 16,
            subgraph_size: 10_000,
            learning_rate: 0.01,
            decay_epochs: vec![20, 35, 45],
            decay_factor: 0.7,
            clip_norm: 1.0,
            weight_solver_iters: 4,
            augment: AugmentParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_clouds == 0 || self.subgraph_size == 0 {
            return Err(Error::validation(
                "train.batch_clouds and train.subgraph_size must be >= 1",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("train.learning_rate must be > 0"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::validation("train.decay_factor must lie in (0, 1]"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::validation("train.clip_norm must be > 0"));
        }
        if self.weight_solver_iters == 0 {
            return Err(Error::validation("train.weight_solver_iters must be >= 1"));
        }
        self.augment.validate()
    }
}

/// Borrowed bundle of the per-module configurations a training run needs.
pub struct PipelineConfig<'a> {
    pub train: &'a TrainConfig,
    pub loss: &'a LossConfig,
    pub gmpp: &'a GmppConfig,
    pub adjacency: &'a AdjacencyConfig,
}

impl PipelineConfig<'_> {
    fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.loss.validate()?;
        self.gmpp.validate()?;
        self.adjacency.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub epoch: usize,
    pub step: u64,
    pub learning_rate: f64,
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// Scales the gradient so its global norm is at most `clip`.
pub(crate) fn clip_global_norm(grad: &mut [f64], clip: f64) {
    let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
}

pub struct Trainer {
    pub model: LpeModel,
    pub adam: Adam,
    pub state: TrainerState,
    pub rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: LpeModel, learning_rate: f64, seed: u64) -> Trainer {
        let n = model.param_count();
        Trainer {
            model,
            adam: Adam::new(n),
            state: TrainerState {
                epoch: 0,
                step: 0,
                learning_rate,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Trains every remaining epoch, reporting each to `on_epoch`.
    pub fn run(
        &mut self,
        scenes: &[PointCloud],
        val: Option<&PointCloud>,
        cfg: &PipelineConfig,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.state.epoch < cfg.train.epochs {
            let log = self.run_epoch(scenes, val, cfg)?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    /// Trains one epoch (the one after `state.epoch`), applying the decay
    /// schedule at its start, and returns its log line.
    pub fn run_epoch(
        &mut self,
        scenes: &[PointCloud],
        val: Option<&PointCloud>,
        cfg: &PipelineConfig,
    ) -> Result<EpochLog> {
        cfg.validate()?;
        if scenes.is_empty() {
            return Err(Error::validation("training dataset is empty"));
        }
        let epoch = self.state.epoch + 1;
        if cfg.train.decay_epochs.contains(&epoch) {
            self.state.learning_rate *= cfg.train.decay_factor;
        }

        let mut order: Vec<usize> = (0..scenes.len()).collect();
        for i in (1..order.len()).rev() {
            let j = self.rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.train.batch_clouds) {
            let mut grad_sum = vec![0.0; self.model.param_count()];
            let mut batch_loss = 0.0;
            for &scene_idx in chunk {
                let (loss_value, grads) = self.step_on_cloud(&scenes[scene_idx], cfg)?;
                batch_loss += loss_value;
                for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                    *acc += g;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for g in grad_sum.iter_mut() {
                *g *= inv;
            }
            clip_global_norm(&mut grad_sum, cfg.train.clip_norm);
            self.adam
                .step(self.model.params_mut(), &grad_sum, self.state.learning_rate);
            self.state.step += 1;
            loss_sum += batch_loss * inv;
            n_batches += 1;
        }
        self.state.epoch = epoch;

        let val_report = match val {
            Some(scene) => Some(validate_scene(&self.model, scene, cfg)?),
            None => None,
        };
        Ok(EpochLog {
            epoch,
            step: self.state.step,
            loss: loss_sum / n_batches as f64,
            learning_rate: self.state.learning_rate,
            val: val_report,
        })
    }

    /// Forward, weight, and backward pass over one augmented cloud;
    /// returns this cloud's loss and parameter gradients.
    fn step_on_cloud(&mut self, scene: &PointCloud, cfg: &PipelineConfig) -> Result<(f64, Vec<f64>)> {
        let cloud = augment(scene, &cfg.train.augment, &mut self.rng)?;
        let (g_full, _) = knn_graph(&cloud, cfg.adjacency.k_adj)?;
        let subset = sample_subgraph(&g_full, cfg.train.subgraph_size, &mut self.rng);
        let (g_sub, positions, gt) = induce(&g_full, &cloud, &subset)?;

        let nbhd = knn(&cloud, self.model.config().k)?;
        let input = build_input(&cloud, &nbhd, Some(&subset))?;
        let (e, cache) = self.model.forward_train(&input)?;

        let weights = loss_weights(&self.model, &g_sub, &gt, e.view(), &positions, cfg)?;
        let (loss_value, de) = loss::loss_and_grad(e.view(), &g_sub, &gt, &weights, cfg.loss)?;
        let grads = self.model.backward(&input, &cache, de.view())?;
        Ok((loss_value, grads))
    }
}

/// Loss weights for the current embeddings, depending on the configured
/// weighting scheme. The weights are treated as constants downstream.
fn loss_weights(
    _model: &LpeModel,
    g: &Graph,
    gt: &Partition,
    embeddings: ndarray::ArrayView2<f64>,
    positions: &[[f64; 3]],
    cfg: &PipelineConfig,
) -> Result<loss::EdgeWeights> {
    match cfg.loss.weighting {
        Weighting::CrossPartition => {
            let mut weight_cfg = cfg.gmpp.clone();
            weight_cfg.outer_iters = cfg.train.weight_solver_iters;
            let proposed = gmpp::solve(g, embeddings, positions, &weight_cfg)?.partition;
            let cpg = cross_partition(g, gt, &proposed)?;
            loss::cross_partition_weights(&cpg, g, cfg.loss.m0(g))
        }
        Weighting::Proportional => {
            let tra = transition_edges(g, gt)?;
            loss::proportional_weights(g, &tra, cfg.loss.mu_tilde)
        }
        Weighting::Seal => Err(Error::validation(
            "loss.weighting = seal is reserved and not implemented",
        )),
    }
}

/// Evaluation-mode metrics of the model on one labeled scene.
pub fn validate_scene(
    model: &LpeModel,
    scene: &PointCloud,
    cfg: &PipelineConfig,
) -> Result<MetricsReport> {
    let (g, _) = knn_graph(scene, cfg.adjacency.k_adj)?;
    let e = embed_cloud(model, scene)?;
    let res = gmpp::solve(&g, e.view(), &scene.positions, cfg.gmpp)?;
    let gt = Partition::from_labels(&scene.object_id);
    metrics::report(&g, &gt, &scene.class_id, &res.partition)
}

/// Ball of up to `size` vertices grown breadth-first from a random seed
/// vertex, continuing from the smallest unvisited id when a component is
/// exhausted. Returns ascending vertex ids.
fn sample_subgraph(g: &Graph, size: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = g.n_vertices();
    if n <= size {
        return (0..n as u32).collect();
    }
    let mut visited = vec![false; n];
    let mut picked = Vec::with_capacity(size);
    let mut queue = VecDeque::new();
    let start = rng.random_range(0..n as u32);
    queue.push_back(start);
    visited[start as usize] = true;
    let mut next_unvisited = 0usize;
    while picked.len() < size {
        let Some(v) = queue.pop_front() else {
            while next_unvisited < n && visited[next_unvisited] {
                next_unvisited += 1;
            }
            if next_unvisited == n {
                break;
            }
            visited[next_unvisited] = true;
            queue.push_back(next_unvisited as u32);
            continue;
        };
        picked.push(v);
        for (w, _) in g.neighbors(v) {
            if !visited[w as usize] {
                visited[w as usize] = true;
                queue.push_back(w);
            }
        }
    }
    picked.sort_unstable();
    picked
}

/// Induced subgraph, positions, and ground-truth partition for a sorted
/// vertex subset.
fn induce(
    g: &Graph,
    cloud: &PointCloud,
    subset: &[u32],
) -> Result<(Graph, Vec<[f64; 3]>, Partition)> {
    let mut new_id = vec![u32::MAX; g.n_vertices()];
    for (i, &v) in subset.iter().enumerate() {
        new_id[v as usize] = i as u32;
    }
    let mut pairs = Vec::new();
    for &(u, v) in g.edges() {
        let (nu, nv) = (new_id[u as usize], new_id[v as usize]);
        if nu != u32::MAX && nv != u32::MAX {
            pairs.push((nu, nv));
        }
    }
    let g_sub = Graph::build(subset.len(), &pairs)?;
    let positions = subset
        .iter()
        .map(|&v| cloud.positions[v as usize])
        .collect();
    let labels: Vec<u32> = subset.iter().map(|&v| cloud.object_id[v as usize]).collect();
    Ok((g_sub, positions, Partition::from_labels(&labels)))
}

const CHECKPOINT_FORMAT: &str = "ssp-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct SectionSpec {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    lpe: LpeConfig,
    state: TrainerState,
    param_count: usize,
    /// Parameter tensors, in blob order.
    tensors: Vec<TensorSpec>,
    /// Blob sections, in order: params, running_stats, adam_m, adam_v.
    sections: Vec<SectionSpec>,
    adam_steps: Option<u64>,
    rng: Option<RngState>,
    blob: String,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    word_pos: String,
}

/// Writes `<base>.json` + `<base>.bin`: a JSON manifest and a flat
/// little-endian f64 blob holding parameters (in declared tensor order),
/// running statistics, and optimizer moments.
pub fn save_checkpoint(
    base: &Path,
    model: &LpeModel,
    adam: Option<&Adam>,
    state: &TrainerState,
    rng: Option<&ChaCha8Rng>,
) -> Result<(PathBuf, PathBuf)> {
    let mut blob: Vec<f64> = Vec::new();
    let mut sections = Vec::new();
    let push = |name: &str, data: &[f64], blob: &mut Vec<f64>, sections: &mut Vec<SectionSpec>| {
        sections.push(SectionSpec {
            name: name.to_string(),
            offset: blob.len(),
            len: data.len(),
        });
        blob.extend_from_slice(data);
    };
    push("params", model.params(), &mut blob, &mut sections);
    push("running_stats", model.stats(), &mut blob, &mut sections);
    if let Some(adam) = adam {
        push("adam_m", &adam.m, &mut blob, &mut sections);
        push("adam_v", &adam.v, &mut blob, &mut sections);
    }

    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        lpe: model.config().clone(),
        state: state.clone(),
        param_count: model.param_count(),
        tensors: model.layout().tensors.clone(),
        sections,
        adam_steps: adam.map(|a| a.t),
        rng: rng.map(|r| RngState {
            seed: r.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            word_pos: r.get_word_pos().to_string(),
        }),
        blob: format!(
            "{}.bin",
            base.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint")
        ),
    };

    let json_path = base.with_extension("json");
    let bin_path = base.with_extension("bin");
    serde_json::to_writer_pretty(File::create(&json_path)?, &manifest)?;
    let mut bin = File::create(&bin_path)?;
    for v in &blob {
        bin.write_all(&v.to_le_bytes())?;
    }
    Ok((json_path, bin_path))
}

pub struct Checkpoint {
    pub model: LpeModel,
    pub adam: Option<Adam>,
    pub state: TrainerState,
    pub rng: Option<ChaCha8Rng>,
}

impl Checkpoint {
    /// Rebuilds a trainer; missing optimizer or RNG state falls back to a
    /// fresh optimizer and the given seed.
    pub fn into_trainer(self, fallback_seed: u64) -> Trainer {
        let n = self.model.param_count();
        Trainer {
            model: self.model,
            adam: self.adam.unwrap_or_else(|| Adam::new(n)),
            state: self.state,
            rng: self
                .rng
                .unwrap_or_else(|| ChaCha8Rng::seed_from_u64(fallback_seed)),
        }
    }
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<Checkpoint> {
    let manifest: CheckpointManifest = serde_json::from_reader(File::open(manifest_path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::validation(format!(
            "unsupported checkpoint format {:?}",
            manifest.format
        )));
    }
    let bin_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let mut raw = Vec::new();
    File::open(&bin_path)?.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(Error::validation("checkpoint blob is not a multiple of 8 bytes"));
    }
    let blob: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let section = |name: &str| -> Result<&SectionSpec> {
        manifest
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::validation(format!("checkpoint misses section {name}")))
    };
    let slice = |s: &SectionSpec| -> Result<Vec<f64>> {
        blob.get(s.offset..s.offset + s.len)
            .map(|x| x.to_vec())
            .ok_or_else(|| Error::validation(format!("checkpoint blob truncated at {}", s.name)))
    };

    let params = slice(section("params")?)?;
    let stats = slice(section("running_stats")?)?;
    let model = LpeModel::restore(manifest.lpe.clone(), params, stats)?;

    // Shape errors name the offending tensor.
    for (expect, got) in model.layout().tensors.iter().zip(&manifest.tensors) {
        if expect.name != got.name || expect.rows != got.rows || expect.cols != got.cols {
            return Err(Error::validation(format!(
                "checkpoint tensor {} has shape {}x{}, model expects {} as {}x{}",
                got.name, got.rows, got.cols, expect.name, expect.rows, expect.cols
            )));
        }
    }

    let adam = match (section("adam_m"), section("adam_v"), manifest.adam_steps) {
        (Ok(sm), Ok(sv), Some(t)) => {
            let mut adam = Adam::new(model.param_count());
            adam.m = slice(sm)?;
            adam.v = slice(sv)?;
            adam.t = t;
            if adam.m.len() != model.param_count() || adam.v.len() != model.param_count() {
                return Err(Error::validation("optimizer state length mismatch"));
            }
            Some(adam)
        }
        _ => None,
    };

    let rng = match &manifest.rng {
        None => None,
        Some(state) => {
            if state.seed.len() != 64 || !state.seed.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(Error::validation("bad rng seed in checkpoint"));
            }
            let mut seed = [0u8; 32];
            for (i, byte) in seed.iter_mut().enumerate() {
                *byte = u8::from_str_radix(&state.seed[2 * i..2 * i + 2], 16)
                    .map_err(|_| Error::validation("bad rng seed in checkpoint"))?;
            }
            let word_pos: u128 = state
                .word_pos
                .parse()
                .map_err(|_| Error::validation("bad rng position in checkpoint"))?;
            let mut rng = ChaCha8Rng::from_seed(seed);
            rng.set_word_pos(word_pos);
            Some(rng)
        }
    };

    Ok(Checkpoint {
        model,
        adam,
        state: manifest.state,
        rng,
    })
}
