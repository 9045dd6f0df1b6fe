//! Training-time augmentation: one random rotation about the z axis for
//! the whole cloud (orientation stays a learnable border cue) and clamped
//! Gaussian noise on positions and colors.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::PointCloud;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub noise_sigma: f64,
    pub noise_clamp: f64,
    pub rotation: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            noise_sigma: 0.03,
            noise_clamp: 0.1,
            rotation: true,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::validation("augment.noise_sigma must be >= 0"));
        }
        if !(self.noise_clamp >= 0.0) {
            return Err(Error::validation("augment.noise_clamp must be >= 0"));
        }
        Ok(())
    }
}

pub fn augment<R: Rng>(pc: &PointCloud, params: &AugmentParams, rng: &mut R) -> Result<PointCloud> {
    params.validate()?;
    pc.validate()?;
    let mut out = pc.clone();

    if params.rotation {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (sin, cos) = theta.sin_cos();
        let n = pc.len() as f64;
        let cx = pc.positions.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = pc.positions.iter().map(|p| p[1]).sum::<f64>() / n;
        for p in &mut out.positions {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            p[0] = cx + cos * dx - sin * dy;
            p[1] = cy + sin * dx + cos * dy;
        }
    }

    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma).expect("validated sigma");
        let clamp = params.noise_clamp;
        let draw = |rng: &mut R| normal.sample(rng).clamp(-clamp, clamp);
        for i in 0..out.len() {
            for d in 0..3 {
                out.positions[i][d] += draw(rng);
            }
            for d in 0..3 {
                out.colors[i][d] = (out.colors[i][d] + draw(rng)).clamp(0.0, 1.0);
            }
        }
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::synth::SceneSpec;
    use crate::cloud::{knn_graph, synth_scene};
    use crate::graph::{transition_edges, Partition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disabled_augmentation_is_identity() {
        let cloud = synth_scene(&SceneSpec::default(), 3).unwrap();
        let params = AugmentParams {
            noise_sigma: 0.0,
            rotation: false,
            ..AugmentParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&cloud, &params, &mut rng).unwrap(), cloud);
    }

    #[test]
    fn negative_sigma_rejected() {
        let cloud = synth_scene(&SceneSpec::default(), 3).unwrap();
        let params = AugmentParams {
            noise_sigma: -0.1,
            ..AugmentParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment(&cloud, &params, &mut rng).is_err());
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let cloud = synth_scene(&SceneSpec::default(), 5).unwrap();
        let params = AugmentParams {
            noise_sigma: 0.0,
            rotation: true,
            ..AugmentParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rotated = augment(&cloud, &params, &mut rng).unwrap();
        for step in [1usize, 37, 113] {
            for i in (0..cloud.len()).step_by(101) {
                let j = (i + step) % cloud.len();
                let before: f64 = (0..3)
                    .map(|d| (cloud.positions[i][d] - cloud.positions[j][d]).powi(2))
                    .sum();
                let after: f64 = (0..3)
                    .map(|d| (rotated.positions[i][d] - rotated.positions[j][d]).powi(2))
                    .sum();
                assert!((before.sqrt() - after.sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clamped_noise_never_exceeds_bound() {
        let params = AugmentParams::default();
        let normal = Normal::new(0.0, params.noise_sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1_000_000 {
            let draw: f64 = normal.sample(&mut rng);
            assert!(draw.clamp(-params.noise_clamp, params.noise_clamp).abs() <= 0.1);
        }
        // And through the full path: noisy colors stay in range, positions
        // move by at most the clamp per component.
        let cloud = synth_scene(&SceneSpec::default(), 2).unwrap();
        let noisy = augment(
            &cloud,
            &AugmentParams {
                rotation: false,
                ..params
            },
            &mut rng,
        )
        .unwrap();
        for i in 0..cloud.len() {
            for d in 0..3 {
                assert!((noisy.positions[i][d] - cloud.positions[i][d]).abs() <= 0.1 + 1e-12);
                assert!((0.0..=1.0).contains(&noisy.colors[i][d]));
            }
        }
    }

    #[test]
    fn rotation_preserves_transition_edges() {
        let cloud = synth_scene(&SceneSpec::default(), 13).unwrap();
        let params = AugmentParams {
            noise_sigma: 0.0,
            rotation: true,
            ..AugmentParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rotated = augment(&cloud, &params, &mut rng).unwrap();

        let gt = Partition::from_labels(&cloud.object_id);
        let (g0, _) = knn_graph(&cloud, 5).unwrap();
        let (g1, _) = knn_graph(&rotated, 5).unwrap();
        let t0 = transition_edges(&g0, &gt).unwrap();
        let t1 = transition_edges(&g1, &gt).unwrap();
        let pairs = |g: &crate::graph::Graph, t: &crate::graph::TransitionEdgeSet| {
            t.indices()
                .iter()
                .map(|&e| g.edge(e as usize))
                .collect::<Vec<_>>()
        };
        assert_eq!(pairs(&g0, &t0), pairs(&g1, &t1));
    }
}
