//! Depth localisation error and corruption resilience.

use serde::{Deserialize, Serialize};

use super::model::{forward, StudentModel};
use crate::error::Result;
use crate::geometry::RayPartition;
use crate::rng::derive_seed;
use crate::simulator::corruption::{corrupt, corruptions, CorruptionSpec};
use crate::simulator::SceneRender;
use crate::tensor::FeatureMap;

/// Running sum of per-ray depth errors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DepthError {
    pub sum: f64,
    pub rays: usize,
}

impl DepthError {
    pub fn add(&mut self, other: DepthError) {
        self.sum += other.sum;
        self.rays += other.rays;
    }

    /// Mean error, `0` when no ray carries an object.
    pub fn mean(&self) -> f64 {
        if self.rays == 0 {
            0.0
        } else {
            self.sum / self.rays as f64
        }
    }
}

/// Error of the channel-0 radial argmax on one ray. When several cells share
/// the maximum the error is averaged over them, which is the expectation under
/// a uniformly random tie-break.
pub fn ray_depth_error(f: &FeatureMap, p: &RayPartition, ray: usize, truth: f64) -> f64 {
    let cells = p.cells(ray);
    let best = cells.iter().map(|c| f.get(0, c.h, c.w)).fold(f64::NEG_INFINITY, f64::max);
    let (sum, n) = cells
        .iter()
        .filter(|c| f.get(0, c.h, c.w) == best)
        .fold((0.0, 0usize), |(s, n), c| (s + (p.radius(*c) - truth).abs(), n + 1));
    sum / n as f64
}

/// Depth error summed over the object-bearing rays of one map.
pub fn depth_error(f: &FeatureMap, p: &RayPartition, truth: &[Option<f64>]) -> DepthError {
    let mut out = DepthError::default();
    for (ray, t) in truth.iter().enumerate() {
        if let Some(t) = t {
            out.sum += ray_depth_error(f, p, ray, *t);
            out.rays += 1;
        }
    }
    out
}

/// Mean depth error of `model` over all object-bearing rays of `scenes`, using
/// `input` to pick each scene's camera map.
pub fn depth_mae_with(
    model: &StudentModel,
    scenes: &[SceneRender],
    input: impl Fn(usize, &SceneRender) -> Result<FeatureMap>,
) -> Result<f64> {
    let mut total = DepthError::default();
    for (k, scene) in scenes.iter().enumerate() {
        let (s, _) = forward(model, &input(k, scene)?)?;
        total.add(depth_error(&s, &scene.partition, &scene.truth));
    }
    Ok(total.mean())
}

/// Mean depth error on the clean camera maps.
pub fn depth_mae(model: &StudentModel, scenes: &[SceneRender]) -> Result<f64> {
    depth_mae_with(model, scenes, |_, s| Ok(s.camera_clean.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceRow {
    pub kind: String,
    pub severity: f64,
    pub depth_mae: f64,
    pub resilience: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceReport {
    pub clean_depth_mae: f64,
    pub rows: Vec<ResilienceRow>,
    /// Mean over corruption kinds of the per-kind mean resilience.
    pub aggregate: f64,
}

/// `clean / corrupt`, with `0 / 0 = 1`.
pub fn resilience_ratio(clean: f64, corrupt: f64) -> f64 {
    if corrupt == 0.0 {
        if clean == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        clean / corrupt
    }
}

/// Depth error on corrupted copies of every scene's clean camera map. Each
/// scene gets its own corruption seed derived from the spec's seed and the
/// scene index.
pub fn evaluate_resilience(
    model: &StudentModel,
    scenes: &[SceneRender],
    specs: &[CorruptionSpec],
) -> Result<ResilienceReport> {
    let clean = depth_mae(model, scenes)?;
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let mae = depth_mae_with(model, scenes, |k, scene| {
            let per_scene = CorruptionSpec {
                seed: derive_seed(spec.seed, &[k as u64]),
                ..spec.clone()
            };
            corrupt(&scene.camera_clean, &per_scene, &scene.partition)
        })?;
        rows.push(ResilienceRow {
            kind: spec.kind.clone(),
            severity: spec.severity,
            depth_mae: mae,
            resilience: resilience_ratio(clean, mae),
        });
    }
    let mut per_kind: Vec<(&str, f64, usize)> = Vec::new();
    for row in &rows {
        match per_kind.iter_mut().find(|(k, _, _)| *k == row.kind) {
            Some(entry) => {
                entry.1 += row.resilience;
                entry.2 += 1;
            }
            None => per_kind.push((&row.kind, row.resilience, 1)),
        }
    }
    let aggregate = if per_kind.is_empty() {
        1.0
    } else {
        per_kind.iter().map(|(_, s, n)| s / *n as f64).sum::<f64>() / per_kind.len() as f64
    };
    Ok(ResilienceReport {
        clean_depth_mae: clean,
        rows,
        aggregate,
    })
}

/// One spec per registered corruption kind at `severity`.
pub fn standard_corruptions(severity: f64, seed: u64) -> Vec<CorruptionSpec> {
    corruptions()
        .names()
        .map(|kind| CorruptionSpec::new(kind, severity, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{partition_rays, Cell};
    use crate::tensor::Shape;

    #[test]
    fn ties_average_over_cells() {
        let p = partition_rays(6, 6, (3.0, 3.0), 4).unwrap();
        let f = FeatureMap::zeros(Shape::new(1, 6, 6));
        let cells = p.cells(0);
        let expected = cells.iter().map(|c| (p.radius(*c) - 2.0).abs()).sum::<f64>() / cells.len() as f64;
        assert!((ray_depth_error(&f, &p, 0, 2.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn unique_argmax_gives_its_radius() {
        let p = partition_rays(6, 6, (3.0, 3.0), 4).unwrap();
        let mut f = FeatureMap::zeros(Shape::new(1, 6, 6));
        let c: Cell = p.cells(1)[2];
        f.set(0, c.h, c.w, 1.0);
        let r = p.radius(c);
        assert!((ray_depth_error(&f, &p, 1, r + 0.75) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ratio_conventions() {
        assert_eq!(resilience_ratio(0.0, 0.0), 1.0);
        assert_eq!(resilience_ratio(1.0, 2.0), 0.5);
        assert_eq!(resilience_ratio(2.0, 2.0), 1.0);
    }

    #[test]
    fn empty_truth_has_zero_mean() {
        let p = partition_rays(4, 4, (2.0, 2.0), 4).unwrap();
        let e = depth_error(&FeatureMap::zeros(Shape::new(1, 4, 4)), &p, &[None; 4]);
        assert_eq!(e.mean(), 0.0);
    }
}
