//! Synthetic labeled scenes: primitive objects (boxes, planes, spheres)
//! scattered over a ground plane, with per-object hues and optional scan
//! noise. Deterministic for a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::PointCloud;

pub const CLASS_BOX: u32 = 0;
pub const CLASS_PLANE: u32 = 1;
pub const CLASS_SPHERE: u32 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub boxes: usize,
    pub planes: usize,
    pub spheres: usize,
    /// Target points per object before jitter.
    pub points_per_object: usize,
    /// Relative jitter of the per-object point count.
    pub points_jitter: f64,
    /// Hard lower bound on points per object.
    pub min_points: usize,
    /// Gaussian scan-noise deviation on positions.
    pub position_noise: f64,
    /// Gaussian noise on the per-object base color.
    pub color_noise: f64,
    /// Half-extent of the scene in x and y.
    pub extent: f64,
    /// Primitive size range (edge length / diameter).
    pub object_size: [f64; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            boxes: 4,
            planes: 1,
            spheres: 3,
            points_per_object: 500,
            points_jitter: 0.1,
            min_points: 50,
            position_noise: 0.005,
            color_noise: 0.02,
            extent: 4.0,
            object_size: [0.6, 1.4],
        }
    }
}

impl SceneSpec {
    pub fn n_objects(&self) -> usize {
        self.boxes + self.planes + self.spheres
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_objects() == 0 {
            return Err(Error::validation("scene needs at least one object"));
        }
        if self.min_points == 0 || self.points_per_object == 0 {
            return Err(Error::validation("point counts must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.points_jitter) {
            return Err(Error::validation("scene.points_jitter must lie in [0, 1)"));
        }
        if !(self.position_noise >= 0.0) || !(self.color_noise >= 0.0) {
            return Err(Error::validation("scene noise deviations must be >= 0"));
        }
        if !(self.extent > 0.0) {
            return Err(Error::validation("scene.extent must be > 0"));
        }
        if !(self.object_size[0] > 0.0) || self.object_size[0] > self.object_size[1] {
            return Err(Error::validation("scene.object_size must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

struct ObjectKind {
    class: u32,
}

pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Ground plane first (when any plane is requested), then the free
    // objects on a jittered grid so clutter stays bounded.
    let mut kinds: Vec<ObjectKind> = Vec::new();
    for _ in 0..spec.planes {
        kinds.push(ObjectKind { class: CLASS_PLANE });
    }
    for _ in 0..spec.boxes {
        kinds.push(ObjectKind { class: CLASS_BOX });
    }
    for _ in 0..spec.spheres {
        kinds.push(ObjectKind {
            class: CLASS_SPHERE,
        });
    }

    let has_ground = spec.planes > 0;
    let n_placed = kinds.len() - usize::from(has_ground);
    let grid = (n_placed as f64).sqrt().ceil() as usize;
    let mut cells: Vec<(usize, usize)> = (0..grid.max(1))
        .flat_map(|i| (0..grid.max(1)).map(move |j| (i, j)))
        .collect();
    // Fisher-Yates with the scene rng keeps placement reproducible.
    for i in (1..cells.len()).rev() {
        let j = rng.random_range(0..=i);
        cells.swap(i, j);
    }
    let cell_size = 2.0 * spec.extent / grid.max(1) as f64;

    let mut cloud = PointCloud {
        positions: vec![],
        colors: vec![],
        object_id: vec![],
        class_id: vec![],
    };
    let noise = if spec.position_noise > 0.0 {
        Some(Normal::new(0.0, spec.position_noise).expect("validated sigma"))
    } else {
        None
    };
    let color_noise = if spec.color_noise > 0.0 {
        Some(Normal::new(0.0, spec.color_noise).expect("validated sigma"))
    } else {
        None
    };

    let mut placed = 0usize;
    for (object, kind) in kinds.iter().enumerate() {
        let jitter = 1.0 + rng.random_range(-spec.points_jitter..=spec.points_jitter);
        let count = ((spec.points_per_object as f64 * jitter).round() as usize)
            .max(spec.min_points);
        let base_color = golden_hue_color(object);

        let is_ground = has_ground && object == 0;
        let center = if is_ground {
            [0.0, 0.0]
        } else {
            let (ci, cj) = cells[placed % cells.len()];
            placed += 1;
            [
                -spec.extent + (ci as f64 + 0.5) * cell_size
                    + rng.random_range(-0.2..0.2) * cell_size,
                -spec.extent + (cj as f64 + 0.5) * cell_size
                    + rng.random_range(-0.2..0.2) * cell_size,
            ]
        };
        let size = rng.random_range(spec.object_size[0]..=spec.object_size[1]);

        for _ in 0..count {
            let p = match kind.class {
                CLASS_PLANE if is_ground => [
                    rng.random_range(-spec.extent..spec.extent),
                    rng.random_range(-spec.extent..spec.extent),
                    0.0,
                ],
                CLASS_PLANE => {
                    // Free-standing wall patch, axis-aligned, resting on the
                    // ground.
                    let along = rng.random_range(-0.5 * size..0.5 * size);
                    let up = rng.random_range(0.0..size);
                    if object % 2 == 0 {
                        [center[0] + along, center[1], up]
                    } else {
                        [center[0], center[1] + along, up]
                    }
                }
                CLASS_BOX => sample_box_surface(&mut rng, center, size),
                _ => sample_sphere_surface(&mut rng, center, size),
            };
            let mut p = p;
            if let Some(n) = &noise {
                for v in p.iter_mut() {
                    *v += n.sample(&mut rng);
                }
            }
            let mut c = base_color;
            if let Some(n) = &color_noise {
                for v in c.iter_mut() {
                    *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            cloud.positions.push(p);
            cloud.colors.push(c);
            cloud.object_id.push(object as u32);
            cloud.class_id.push(kind.class);
        }
    }

    cloud.validate()?;
    Ok(cloud)
}

/// Uniform sample over the five visible faces of an axis-aligned box of
/// edge `size` resting on the ground.
fn sample_box_surface(rng: &mut ChaCha8Rng, center: [f64; 2], size: f64) -> [f64; 3] {
    let h = size; // height
    let half = 0.5 * size;
    let top_area = size * size;
    let side_area = size * h;
    let total = top_area + 4.0 * side_area;
    let pick = rng.random_range(0.0..total);
    let u = rng.random_range(-half..half);
    let v = rng.random_range(0.0..h);
    if pick < top_area {
        let w = rng.random_range(-half..half);
        [center[0] + u, center[1] + w, h]
    } else if pick < top_area + side_area {
        [center[0] + u, center[1] - half, v]
    } else if pick < top_area + 2.0 * side_area {
        [center[0] + u, center[1] + half, v]
    } else if pick < top_area + 3.0 * side_area {
        [center[0] - half, center[1] + u, v]
    } else {
        [center[0] + half, center[1] + u, v]
    }
}

fn sample_sphere_surface(rng: &mut ChaCha8Rng, center: [f64; 2], size: f64) -> [f64; 3] {
    let r = 0.5 * size;
    let dir: [f64; 3] = rand_distr::UnitSphere.sample(rng);
    [
        center[0] + r * dir[0],
        center[1] + r * dir[1],
        r + r * dir[2],
    ]
}

/// Well-separated object hues from the golden-ratio sequence.
fn golden_hue_color(object: usize) -> [f64; 3] {
    let hue = ((object as f64 + 1.0) * 0.618_033_988_75).fract();
    hsv_to_rgb(hue, 0.65, 0.9)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::knn_graph;
    use crate::graph::{transition_edges, Partition};

    #[test]
    fn single_plane_is_coplanar() {
        let spec = SceneSpec {
            boxes: 0,
            planes: 1,
            spheres: 0,
            points_per_object: 100,
            points_jitter: 0.0,
            position_noise: 0.0,
            ..SceneSpec::default()
        };
        let cloud = synth_scene(&spec, 7).unwrap();
        assert!(cloud.positions.iter().all(|p| p[2] == 0.0));
        assert!(cloud.object_id.iter().all(|&o| o == 0));
        assert_eq!(cloud.len(), 100);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = SceneSpec::default();
        assert_eq!(synth_scene(&spec, 42).unwrap(), synth_scene(&spec, 42).unwrap());
        assert_ne!(synth_scene(&spec, 42).unwrap(), synth_scene(&spec, 43).unwrap());
    }

    #[test]
    fn zero_objects_rejected() {
        let spec = SceneSpec {
            boxes: 0,
            planes: 0,
            spheres: 0,
            ..SceneSpec::default()
        };
        assert!(synth_scene(&spec, 1).is_err());
    }

    #[test]
    fn min_points_respected() {
        let spec = SceneSpec {
            points_per_object: 60,
            min_points: 58,
            points_jitter: 0.3,
            ..SceneSpec::default()
        };
        let cloud = synth_scene(&spec, 9).unwrap();
        let gt = Partition::from_labels(&cloud.object_id);
        assert!(gt.segment_sizes().iter().all(|&s| s >= 58));
    }

    #[test]
    fn two_boxes_transitions_counted_by_brute_force() {
        let spec = SceneSpec {
            boxes: 2,
            planes: 0,
            spheres: 0,
            points_per_object: 150,
            position_noise: 0.0,
            extent: 1.5,
            ..SceneSpec::default()
        };
        let cloud = synth_scene(&spec, 11).unwrap();
        let (g, _) = knn_graph(&cloud, 5).unwrap();
        let gt = Partition::from_labels(&cloud.object_id);
        let tra = transition_edges(&g, &gt).unwrap();
        // Brute-force recount of cross-object edges.
        let count = g
            .edges()
            .iter()
            .filter(|&&(u, v)| cloud.object_id[u as usize] != cloud.object_id[v as usize])
            .count();
        assert_eq!(tra.len(), count);
        // With exactly two objects every transition edge joins them.
        for &e in tra.indices() {
            let (u, v) = g.edge(e as usize);
            assert_ne!(cloud.object_id[u as usize], cloud.object_id[v as usize]);
        }
    }
}
