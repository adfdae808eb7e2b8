//! Synthetic paired BEV scenes.
//!
//! The teacher (LiDAR-like) map has a sharp radial bump at the true depth of the
//! nearest object on each ray. The camera-like map places a wider bump at a
//! biased depth, except for the last channel, which mixes the biased bump with
//! an unbiased one (`true_cue`). Channel layout for `D` channels:
//!
//! * `0` depth activation,
//! * `1..D-1` object signature,
//! * `D-1` geometry channel.

pub mod corruption;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use corruption::{corrupt, corruptions, Corruption, CorruptionSpec, GainDirection};

use crate::error::{Error, Result};
use crate::geometry::{partition_rays, rasterize_objects, ray_depth_truth, ForegroundMask, ObjectBox, RayPartition};
use crate::rng::{derive_seed, seeded, substream, ChaCha8Rng};
use crate::tensor::{FeatureMap, Shape};

/// Activation of cells outside any bump.
pub const FLOOR: f64 = 1e-3;
/// Radial standard deviation of the teacher bump, in cells.
pub const TEACHER_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub origin: [f64; 2],
    pub n_ray: usize,
    pub objects: Vec<ObjectBox>,
    #[serde(default)]
    pub corruptions: Vec<CorruptionSpec>,
    /// Seed for object signatures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::argument("scene grid must be non-empty"));
        }
        if self.d < 2 {
            return Err(Error::argument("scene needs at least 2 channels"));
        }
        let mut ids = BTreeSet::new();
        for b in &self.objects {
            if !ids.insert(b.id) {
                return Err(Error::argument(format!("duplicate object id {}", b.id)));
            }
        }
        for c in &self.corruptions {
            c.validate()?;
        }
        self.partition()?;
        self.mask()?;
        Ok(())
    }

    pub fn partition(&self) -> Result<RayPartition> {
        partition_rays(self.h, self.w, (self.origin[0], self.origin[1]), self.n_ray)
    }

    pub fn mask(&self) -> Result<ForegroundMask> {
        rasterize_objects(&self.objects, self.h, self.w)
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.d, self.h, self.w)
    }
}

/// Depth error model of the camera branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    /// Radial displacement of the camera bump, in cells.
    pub depth_bias: f64,
    /// Extra radial smear, in cells.
    pub smear_sigma: f64,
    /// Share of the unbiased bump in the geometry channel.
    pub true_cue: f64,
    /// Std of additive Gaussian noise on every value.
    pub noise_std: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            depth_bias: 3.0,
            smear_sigma: 2.5,
            true_cue: 0.5,
            noise_std: 0.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.smear_sigma > 0.0 && self.smear_sigma.is_finite()) {
            return Err(Error::argument("smear_sigma must be positive"));
        }
        if !self.depth_bias.is_finite() {
            return Err(Error::argument("depth_bias must be finite"));
        }
        if !(0.0..=1.0).contains(&self.true_cue) {
            return Err(Error::argument("true_cue must lie in [0, 1]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::argument("noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// Everything rendered for one scene.
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub spec: SceneSpec,
    pub teacher: FeatureMap,
    pub camera_clean: FeatureMap,
    pub camera_corrupt: FeatureMap,
    /// True depth per ray.
    pub truth: Vec<Option<f64>>,
    pub fg: ForegroundMask,
    pub partition: RayPartition,
}

/// Per-object signature for channels `1..D-1`, drawn from the scene seed.
pub fn object_signatures(spec: &SceneSpec) -> BTreeMap<u32, Vec<f64>> {
    let base = spec.seed.unwrap_or(0);
    spec.objects
        .iter()
        .map(|b| {
            let mut rng = seeded(derive_seed(base, &[0x5167, u64::from(b.id)]));
            let mut sig = vec![1.0; spec.d];
            for v in sig.iter_mut().take(spec.d - 1).skip(1) {
                *v = rng.random_range(-1.0..1.0);
            }
            (b.id, sig)
        })
        .collect()
}

/// Object id and true depth of each object-bearing ray.
fn ray_hits(p: &RayPartition, fg: &ForegroundMask) -> Vec<Option<(u32, f64)>> {
    p.rays()
        .map(|(_, cells)| {
            cells
                .iter()
                .find(|c| fg.is_foreground(**c))
                .map(|c| (fg.owner(*c).expect("foreground cell has an owner"), p.radius(*c)))
        })
        .collect()
}

fn teacher_bump(radius: f64, depth: f64) -> f64 {
    let x = (radius - depth) / TEACHER_WIDTH;
    (-0.5 * x * x).exp()
}

/// Gaussian profile over `radii` centered at `center` with std `width`,
/// scaled to sum to `mass`.
fn profile(radii: &[f64], center: f64, width: f64, mass: f64) -> Vec<f64> {
    let logs: Vec<f64> = radii
        .iter()
        .map(|r| {
            let x = (r - center) / width;
            -0.5 * x * x
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    logs.iter().map(|l| mass * (l - max).exp() / z).collect()
}

pub fn render_teacher(spec: &SceneSpec) -> Result<FeatureMap> {
    spec.validate()?;
    let p = spec.partition()?;
    let fg = spec.mask()?;
    let sigs = object_signatures(spec);
    let mut f = FeatureMap::filled(spec.shape(), FLOOR);
    for (ray, hit) in ray_hits(&p, &fg).into_iter().enumerate() {
        let Some((id, depth)) = hit else { continue };
        let sig = &sigs[&id];
        for c in p.cells(ray) {
            let bump = teacher_bump(p.radius(*c), depth);
            for (d, s) in sig.iter().enumerate() {
                f.set(d, c.h, c.w, FLOOR + bump * s);
            }
        }
    }
    Ok(f)
}

/// Camera-like map: bump displaced by `depth_bias`, widened to
/// `sqrt(1 + smear_sigma²)` and renormalised to the teacher's per-ray bump mass.
pub fn render_camera(spec: &SceneSpec, camera: &CameraModel, rng: &mut ChaCha8Rng) -> Result<FeatureMap> {
    spec.validate()?;
    camera.validate()?;
    let p = spec.partition()?;
    let fg = spec.mask()?;
    let sigs = object_signatures(spec);
    let width = (TEACHER_WIDTH * TEACHER_WIDTH + camera.smear_sigma * camera.smear_sigma).sqrt();
    let geo = spec.d - 1;
    let mut f = FeatureMap::filled(spec.shape(), FLOOR);
    for (ray, hit) in ray_hits(&p, &fg).into_iter().enumerate() {
        let Some((id, depth)) = hit else { continue };
        let sig = &sigs[&id];
        let cells = p.cells(ray);
        let radii: Vec<f64> = cells.iter().map(|c| p.radius(*c)).collect();
        let mass: f64 = radii.iter().map(|r| teacher_bump(*r, depth)).sum();
        let biased = profile(&radii, depth + camera.depth_bias, width, mass);
        let unbiased = profile(&radii, depth, width, mass);
        for (k, c) in cells.iter().enumerate() {
            for (d, s) in sig.iter().enumerate().take(geo) {
                f.set(d, c.h, c.w, FLOOR + biased[k] * s);
            }
            let mixed = (1.0 - camera.true_cue) * biased[k] + camera.true_cue * unbiased[k];
            f.set(geo, c.h, c.w, FLOOR + mixed * sig[geo]);
        }
    }
    if camera.noise_std > 0.0 {
        for v in f.as_mut_slice() {
            *v += camera.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(f)
}

/// Renders teacher, clean and corrupted camera maps. Corruptions listed in the
/// spec are applied in order.
pub fn render_scene(spec: &SceneSpec, camera: &CameraModel) -> Result<SceneRender> {
    spec.validate()?;
    let teacher = render_teacher(spec)?;
    let mut rng = substream(spec.seed.unwrap_or(0), 0xca);
    let camera_clean = render_camera(spec, camera, &mut rng)?;
    let partition = spec.partition()?;
    let mut camera_corrupt = camera_clean.clone();
    for c in &spec.corruptions {
        camera_corrupt = corrupt(&camera_corrupt, c, &partition)?;
    }
    let fg = spec.mask()?;
    Ok(SceneRender {
        spec: spec.clone(),
        teacher,
        camera_clean,
        camera_corrupt,
        truth: ray_depth_truth(&partition, &fg),
        fg,
        partition,
    })
}

/// Random boxes that keep clear of the origin cell.
pub fn random_objects(h: usize, w: usize, origin: (f64, f64), n: usize, rng: &mut ChaCha8Rng) -> Vec<ObjectBox> {
    let origin_cell = crate::geometry::Cell::new(origin.0 as usize, origin.1 as usize);
    let mut boxes = Vec::with_capacity(n);
    let mut id = 1;
    while boxes.len() < n {
        let half = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
        let center = [rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)];
        let b = ObjectBox {
            center,
            half_extents: half,
            id,
        };
        if b.contains(origin_cell) || b.center_distance(origin_cell) < 2.0 {
            continue;
        }
        boxes.push(b);
        id += 1;
    }
    boxes
}

/// Seeded random scene with `n_objects` boxes and no corruptions.
pub fn generate_scene(h: usize, w: usize, d: usize, n_ray: usize, n_objects: usize, seed: u64) -> Result<SceneSpec> {
    let origin = crate::geometry::default_origin(h, w);
    let mut rng = seeded(derive_seed(seed, &[0x0b1e]));
    let spec = SceneSpec {
        h,
        w,
        d,
        origin: [origin.0, origin.1],
        n_ray,
        objects: random_objects(h, w, origin, n_objects, &mut rng),
        corruptions: Vec::new(),
        seed: Some(seed),
    };
    spec.validate()?;
    Ok(spec)
}

/// Size and content of a generated scene set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGen {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub n_ray: usize,
    pub objects: usize,
    /// Number of scenes.
    pub count: usize,
}

impl Default for SceneGen {
    fn default() -> Self {
        Self {
            h: 64,
            w: 64,
            d: 8,
            n_ray: 64,
            objects: 6,
            count: 16,
        }
    }
}

/// Seed of scene `k` in a set generated from `seed`.
pub fn scene_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, &[0x5ce, k as u64])
}

/// `gen.count` rendered scenes, scene `k` seeded with [`scene_seed`].
pub fn generate_scenes(gen: &SceneGen, camera: &CameraModel, seed: u64) -> Result<Vec<SceneRender>> {
    (0..gen.count)
        .map(|k| {
            let spec = generate_scene(gen.h, gen.w, gen.d, gen.n_ray, gen.objects, scene_seed(seed, k))?;
            render_scene(&spec, camera)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Cell;
    use crate::losses::{attention_map, ray_kl};
    use proptest::prelude::*;

    fn spec_with(objects: Vec<ObjectBox>) -> SceneSpec {
        SceneSpec {
            h: 24,
            w: 24,
            d: 5,
            origin: [23.5, 12.0],
            n_ray: 24,
            objects,
            corruptions: vec![],
            seed: Some(3),
        }
    }

    /// Per-ray argmax of channel 0 as a radius.
    fn argmax_radius(f: &FeatureMap, p: &RayPartition, ray: usize) -> f64 {
        let cells = p.cells(ray);
        let best = cells
            .iter()
            .max_by(|a, b| f.get(0, a.h, a.w).total_cmp(&f.get(0, b.h, b.w)))
            .unwrap();
        p.radius(*best)
    }

    #[test]
    fn empty_scene_is_floor() {
        let t = render_teacher(&spec_with(vec![])).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == FLOOR));
    }

    #[test]
    fn teacher_peak_sits_at_true_depth() {
        let spec = spec_with(vec![ObjectBox::new((13.5, 12.5), (0.5, 0.5), 1)]);
        let t = render_teacher(&spec).unwrap();
        let p = spec.partition().unwrap();
        let ray = p.ray_of(Cell::new(13, 12)).unwrap();
        let truth = p.radius(Cell::new(13, 12));
        assert!((truth - 10.0).abs() < 0.1);
        assert_eq!(argmax_radius(&t, &p, ray), truth);
    }

    #[test]
    fn occluded_object_gets_no_bump() {
        let near = ObjectBox::new((18.5, 12.5), (0.5, 0.5), 1);
        let far = ObjectBox::new((8.5, 12.5), (0.5, 0.5), 2);
        let spec = spec_with(vec![near, far]);
        let p = spec.partition().unwrap();
        assert_eq!(p.ray_of(Cell::new(18, 12)), p.ray_of(Cell::new(8, 12)));
        let t = render_teacher(&spec).unwrap();
        let ray = p.ray_of(Cell::new(18, 12)).unwrap();
        assert_eq!(argmax_radius(&t, &p, ray), p.radius(Cell::new(18, 12)));
        assert!(t.get(0, 8, 12) < FLOOR + 1e-10);
    }

    #[test]
    fn camera_converges_to_teacher() {
        let spec = spec_with(vec![
            ObjectBox::new((13.5, 12.5), (1.5, 0.5), 1),
            ObjectBox::new((6.0, 4.0), (1.0, 2.0), 2),
        ]);
        let cam = CameraModel {
            depth_bias: 0.0,
            smear_sigma: 1e-3,
            ..CameraModel::default()
        };
        let c = render_camera(&spec, &cam, &mut seeded(0)).unwrap();
        let t = render_teacher(&spec).unwrap();
        assert!(c.max_abs_diff(&t) <= 1e-6, "{}", c.max_abs_diff(&t));
    }

    #[test]
    fn bias_shifts_camera_peak() {
        let spec = spec_with(vec![ObjectBox::new((15.5, 12.5), (0.5, 0.5), 1)]);
        let cam = CameraModel {
            depth_bias: 3.0,
            smear_sigma: 1.0,
            ..CameraModel::default()
        };
        let c = render_camera(&spec, &cam, &mut seeded(0)).unwrap();
        let p = spec.partition().unwrap();
        let ray = p.ray_of(Cell::new(15, 12)).unwrap();
        let target = p.radius(Cell::new(15, 12)) + 3.0;
        let nearest = p
            .cells(ray)
            .iter()
            .map(|c| p.radius(*c))
            .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
            .unwrap();
        assert_eq!(argmax_radius(&c, &p, ray), nearest);
    }

    #[test]
    fn camera_preserves_bump_mass() {
        let spec = spec_with(vec![ObjectBox::new((10.5, 14.5), (1.0, 1.0), 1)]);
        let t = render_teacher(&spec).unwrap();
        let p = spec.partition().unwrap();
        let truth = ray_depth_truth(&p, &spec.mask().unwrap());
        for sigma in [0.5, 2.5, 6.0] {
            let cam = CameraModel {
                smear_sigma: sigma,
                ..CameraModel::default()
            };
            let c = render_camera(&spec, &cam, &mut seeded(0)).unwrap();
            for (ray, depth) in truth.iter().enumerate() {
                if depth.is_none() {
                    continue;
                }
                let mass = |f: &FeatureMap| p.cells(ray).iter().map(|c| f.get(0, c.h, c.w) - FLOOR).sum::<f64>();
                assert!((mass(&c) - mass(&t)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn spec_json_round_trip_and_unknown_keys() {
        let spec = spec_with(vec![ObjectBox::new((10.5, 14.5), (1.0, 1.0), 1)]);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&json).unwrap(), spec);
        let bad = json.replacen("\"h\"", "\"height\"", 1);
        assert!(serde_json::from_str::<SceneSpec>(&bad).is_err());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let b = ObjectBox::new((10.5, 14.5), (1.0, 1.0), 1);
        assert!(matches!(spec_with(vec![b, b]).validate(), Err(Error::Argument(_))));
    }

    #[test]
    fn generated_scenes_are_deterministic() {
        let a = generate_scene(64, 64, 8, 64, 6, 7).unwrap();
        assert_eq!(a, generate_scene(64, 64, 8, 64, 6, 7).unwrap());
        assert_eq!(a.objects.len(), 6);
        assert_ne!(a, generate_scene(64, 64, 8, 64, 6, 8).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn teacher_argmax_matches_truth(seed in any::<u64>()) {
            let spec = generate_scene(24, 24, 4, 16, 4, seed).unwrap();
            let t = render_teacher(&spec).unwrap();
            let p = spec.partition().unwrap();
            for (ray, depth) in ray_depth_truth(&p, &spec.mask().unwrap()).iter().enumerate() {
                if let Some(depth) = depth {
                    prop_assert_eq!(argmax_radius(&t, &p, ray), *depth);
                }
            }
        }

        #[test]
        fn kl_increases_with_smear(seed in any::<u64>()) {
            let spec = generate_scene(24, 24, 4, 16, 3, seed).unwrap();
            let p = spec.partition().unwrap();
            let truth = ray_depth_truth(&p, &spec.mask().unwrap());
            let sl = attention_map(&render_teacher(&spec).unwrap());
            let mut prev: Option<Vec<f64>> = None;
            for sigma in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
                let cam = CameraModel { smear_sigma: sigma, depth_bias: 0.0, ..CameraModel::default() };
                let sc = attention_map(&render_camera(&spec, &cam, &mut seeded(0)).unwrap());
                let a = ray_kl(&sc, &sl, &p, 1e-12).unwrap().a;
                if let Some(prev) = &prev {
                    for (ray, depth) in truth.iter().enumerate() {
                        if depth.is_some() {
                            prop_assert!(a[ray] > prev[ray], "ray {} sigma {}", ray, sigma);
                        }
                    }
                }
                prev = Some(a);
            }
        }
    }
}
