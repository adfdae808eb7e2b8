//! BEV-level corruption operators, registered by name.
//!
//! | kind             | effect                                                    |
//! |------------------|-----------------------------------------------------------|
//! | `gain`           | every value times `1 ± severity`                          |
//! | `additive_noise` | zero-mean Gaussian noise, std `severity · std(map)`       |
//! | `radial_blur`    | Gaussian blur along each ray, `σ = 3 · severity` cells    |
//! | `ray_dropout`    | zero `round(severity · n_ray)` seeded rays                |

use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RayPartition;
use crate::registry::Registry;
use crate::rng::seeded;
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainDirection {
    Up,
    #[default]
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: String,
    pub severity: f64,
    #[serde(default)]
    pub seed: u64,
    /// Only read by `gain`.
    #[serde(default)]
    pub direction: GainDirection,
}

impl CorruptionSpec {
    pub fn new(kind: impl Into<String>, severity: f64, seed: u64) -> Self {
        Self {
            kind: kind.into(),
            severity,
            seed,
            direction: GainDirection::Down,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::argument(format!(
                "corruption `{}`: severity {} outside [0, 1]",
                self.kind, self.severity
            )));
        }
        corruptions().create(&self.kind).map(|_| ())
    }
}

pub trait Corruption: Send + Sync {
    fn apply(&self, f: &FeatureMap, spec: &CorruptionSpec, p: &RayPartition) -> Result<FeatureMap>;
}

struct Gain;
struct AdditiveNoise;
struct RadialBlur;
struct RayDropout;

impl Corruption for Gain {
    fn apply(&self, f: &FeatureMap, spec: &CorruptionSpec, _p: &RayPartition) -> Result<FeatureMap> {
        let factor = match spec.direction {
            GainDirection::Up => 1.0 + spec.severity,
            GainDirection::Down => 1.0 - spec.severity,
        };
        Ok(f.scaled(factor))
    }
}

impl Corruption for AdditiveNoise {
    fn apply(&self, f: &FeatureMap, spec: &CorruptionSpec, _p: &RayPartition) -> Result<FeatureMap> {
        if spec.severity == 0.0 {
            return Ok(f.clone());
        }
        let n = f.as_slice().len() as f64;
        let mean = f.as_slice().iter().sum::<f64>() / n;
        let var = f.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = spec.severity * var.sqrt();
        let mut rng = seeded(spec.seed);
        let mut out = f.clone();
        for v in out.as_mut_slice() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(out)
    }
}

impl Corruption for RadialBlur {
    fn apply(&self, f: &FeatureMap, spec: &CorruptionSpec, p: &RayPartition) -> Result<FeatureMap> {
        let sigma = 3.0 * spec.severity;
        if sigma == 0.0 {
            return Ok(f.clone());
        }
        let mut out = f.clone();
        for (_, cells) in p.rays() {
            let radii: Vec<f64> = cells.iter().map(|c| p.radius(*c)).collect();
            let kernel: Vec<Vec<f64>> = radii
                .iter()
                .map(|ri| {
                    let w: Vec<f64> = radii.iter().map(|rk| (-0.5 * ((ri - rk) / sigma).powi(2)).exp()).collect();
                    let z: f64 = w.iter().sum();
                    w.into_iter().map(|v| v / z).collect()
                })
                .collect();
            for d in 0..f.channels() {
                let values: Vec<f64> = cells.iter().map(|c| f.get(d, c.h, c.w)).collect();
                for (c, row) in cells.iter().zip(&kernel) {
                    out.set(d, c.h, c.w, row.iter().zip(&values).map(|(k, v)| k * v).sum());
                }
            }
        }
        Ok(out)
    }
}

impl Corruption for RayDropout {
    fn apply(&self, f: &FeatureMap, spec: &CorruptionSpec, p: &RayPartition) -> Result<FeatureMap> {
        let count = (spec.severity * p.n_ray() as f64).round() as usize;
        let mut out = f.clone();
        let mut rng = seeded(spec.seed);
        for ray in sample(&mut rng, p.n_ray(), count.min(p.n_ray())).into_iter() {
            for c in p.cells(ray) {
                for d in 0..f.channels() {
                    out.set(d, c.h, c.w, 0.0);
                }
            }
        }
        Ok(out)
    }
}

/// The corruption registry: `gain`, `additive_noise`, `radial_blur`, `ray_dropout`.
pub fn corruptions() -> &'static Registry<dyn Corruption> {
    static REGISTRY: OnceLock<Registry<dyn Corruption>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn Corruption> = Registry::new("corruption");
        r.register("gain", || Box::new(Gain))
            .register("additive_noise", || Box::new(AdditiveNoise))
            .register("radial_blur", || Box::new(RadialBlur))
            .register("ray_dropout", || Box::new(RayDropout));
        r
    })
}

pub fn corrupt(f: &FeatureMap, spec: &CorruptionSpec, p: &RayPartition) -> Result<FeatureMap> {
    let op = corruptions().create(&spec.kind)?;
    spec.validate()?;
    if f.height() != p.height() || f.width() != p.width() {
        return Err(Error::argument("corrupt: map and partition shapes differ"));
    }
    op.apply(f, spec, p)
}
