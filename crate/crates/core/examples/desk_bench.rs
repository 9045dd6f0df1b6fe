//! Desk-scale benchmark probe: train on synthetic scenes and compare the
//! partition quality of trained vs untrained embeddings.

use std::time::Instant;

use ssp_core::cloud::{synth_scene, AdjacencyConfig, SceneSpec};
use ssp_core::embed::{validate_scene, LpeConfig, LpeModel, PipelineConfig, TrainConfig, Trainer};
use ssp_core::gmpp::GmppConfig;
use ssp_core::loss::LossConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let subgraph: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2048);
    let n_min: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let alpha: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.2);

    let scene_spec = SceneSpec {
        boxes: 6,
        planes: 0,
        spheres: 6,
        points_per_object: 420,
        min_points: 100,
        extent: 2.5,
        object_size: [0.5, 1.1],
        ..SceneSpec::default()
    };
    let train_scenes: Vec<_> = (100..110)
        .map(|s| synth_scene(&scene_spec, s).unwrap())
        .collect();
    let val_scenes: Vec<_> = (200..202)
        .map(|s| synth_scene(&scene_spec, s).unwrap())
        .collect();
    eprintln!(
        "scenes: {} train ({} pts each), {} val",
        train_scenes.len(),
        train_scenes[0].len(),
        val_scenes.len()
    );

    let train_cfg = TrainConfig {
        epochs,
        batch_clouds: 2,
        subgraph_size: subgraph,
        ..TrainConfig::default()
    };
    let loss_cfg = LossConfig::default();
    let gmpp_cfg = GmppConfig {
        n_min_base: n_min,
        alpha_spat: alpha,
        ..GmppConfig::default()
    };
    let adj_cfg = AdjacencyConfig::default();
    let cfg = PipelineConfig {
        train: &train_cfg,
        loss: &loss_cfg,
        gmpp: &gmpp_cfg,
        adjacency: &adj_cfg,
    };

    let model = LpeModel::new(LpeConfig::default(), 7).unwrap();
    eprintln!("parameters: {}", model.param_count());

    // Untrained baseline.
    for (i, scene) in val_scenes.iter().enumerate() {
        let m = validate_scene(&model, scene, &cfg).unwrap();
        eprintln!(
            "untrained val{i}: segs={} BR={:.3} BP={:.3} UE={:.3} OOA={:.3}",
            m.n_segments, m.br, m.bp, m.undersegmentation_error, m.ooa
        );
    }

    let start = Instant::now();
    let mut trainer = Trainer::new(model, train_cfg.learning_rate, 7);
    trainer
        .run(&train_scenes, Some(&val_scenes[0]), &cfg, |log| {
            let v = log.val.as_ref().unwrap();
            eprintln!(
                "epoch {:>3} loss {:.4} lr {:.4} | segs={} BR={:.3} BP={:.3} UE={:.3} OOA={:.3} ({:.1}s)",
                log.epoch,
                log.loss,
                log.learning_rate,
                v.n_segments,
                v.br,
                v.bp,
                v.undersegmentation_error,
                v.ooa,
                start.elapsed().as_secs_f64()
            );
        })
        .unwrap();

    for (i, scene) in val_scenes.iter().enumerate() {
        let m = validate_scene(&trainer.model, scene, &cfg).unwrap();
        eprintln!(
            "trained val{i}: segs={} BR={:.3} BP={:.3} UE={:.3} OOA={:.3}",
            m.n_segments, m.br, m.bp, m.undersegmentation_error, m.ooa
        );
    }
    eprintln!("total: {:.1}s", start.elapsed().as_secs_f64());
}
