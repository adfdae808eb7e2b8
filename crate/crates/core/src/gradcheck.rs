//! Central finite-difference verification of analytic loss gradients.
//!
//! Each loss is wrapped in a [`LossProbe`] exposing a flat parameter vector, the
//! loss value at arbitrary parameters and the analytic gradient at the probe's
//! own parameters. Probes are built by named [`ProbeFactory`] strategies.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{default_origin, partition_rays, rasterize_objects, ForegroundMask, RayPartition};
use crate::losses::{
    rcd_loss, response_loss, rwd_loss, rwd_loss_with_weights, src_loss, HeadOutputs, RcdConfig, RwdConfig,
};
use crate::registry::Registry;
use crate::rng::{derive_seed, seeded, ChaCha8Rng};
use crate::sampling::{build_sample_set, SampleSet, SamplerConfig};
use crate::simulator::random_objects;
use crate::tensor::{FeatureMap, ScalarGrid, Shape};

/// Step and acceptance thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerance {
    pub step: f64,
    /// Bound on `|a − n| / max(|a|, |n|)`.
    pub rel: f64,
    /// Bound on `|a − n|` where both magnitudes are below `small`.
    pub abs: f64,
    pub small: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel: 1e-5,
            abs: 1e-10,
            small: 1e-8,
        }
    }
}

/// Shape and loss settings of the random instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub n_ray: usize,
    pub n_objects: usize,
    pub sampler: SamplerConfig,
    pub rcd: RcdConfig,
    pub rwd: RwdConfig,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            d: 8,
            h: 16,
            w: 16,
            n_ray: 16,
            n_objects: 3,
            sampler: SamplerConfig::default(),
            rcd: RcdConfig::default(),
            rwd: RwdConfig::default(),
        }
    }
}

pub trait LossProbe {
    fn params(&self) -> &[f64];
    fn value(&self, params: &[f64]) -> Result<f64>;
    /// Analytic gradient at [`LossProbe::params`].
    fn gradient(&self) -> Result<Vec<f64>>;
    /// Entries whose finite difference with `step` would straddle a kink.
    fn skip(&self, _index: usize, _step: f64) -> bool {
        false
    }
}

pub trait ProbeFactory: Send + Sync {
    fn build(&self, seed: u64, cfg: &InstanceConfig) -> Result<Box<dyn LossProbe>>;
}

/// Agreement statistics for one or more probes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Comparison {
    pub checked: usize,
    pub skipped: usize,
    pub failures: usize,
    /// Largest relative error over entries at or above the small threshold.
    pub max_rel: f64,
    /// Largest absolute error over entries below it.
    pub max_abs_small: f64,
    /// Largest absolute error among failing entries.
    pub max_fail_abs: f64,
    /// Largest `ε·|L| / step`, the rounding resolution of the difference quotient.
    pub noise_floor: f64,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn merge(&mut self, other: &Comparison) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.failures += other.failures;
        self.max_rel = self.max_rel.max(other.max_rel);
        self.max_abs_small = self.max_abs_small.max(other.max_abs_small);
        self.max_fail_abs = self.max_fail_abs.max(other.max_fail_abs);
        self.noise_floor = self.noise_floor.max(other.noise_floor);
    }

    /// Scores one analytic/numeric pair.
    pub fn record(&mut self, analytic: f64, numeric: f64, tol: &Tolerance) {
        self.checked += 1;
        let err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let ok = if scale < tol.small {
            self.max_abs_small = self.max_abs_small.max(err);
            err <= tol.abs
        } else {
            let rel = err / scale;
            self.max_rel = self.max_rel.max(rel);
            rel <= tol.rel
        };
        // NaN compares false
        if !ok {
            self.failures += 1;
            self.max_fail_abs = self.max_fail_abs.max(err);
        }
    }
}

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every `i` not skipped.
pub fn central_difference(probe: &dyn LossProbe, step: f64) -> Result<Vec<Option<f64>>> {
    let mut x = probe.params().to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        if probe.skip(i, step) {
            out.push(None);
            continue;
        }
        let orig = x[i];
        x[i] = orig + step;
        let up = probe.value(&x)?;
        x[i] = orig - step;
        let down = probe.value(&x)?;
        x[i] = orig;
        out.push(Some((up - down) / (2.0 * step)));
    }
    Ok(out)
}

pub fn check_probe(probe: &dyn LossProbe, tol: &Tolerance) -> Result<Comparison> {
    let analytic = probe.gradient()?;
    let numeric = central_difference(probe, tol.step)?;
    let mut cmp = Comparison {
        noise_floor: f64::EPSILON * probe.value(probe.params())?.abs() / tol.step,
        ..Comparison::default()
    };
    for (a, n) in analytic.iter().zip(numeric) {
        match n {
            Some(n) => cmp.record(*a, n, tol),
            None => cmp.skipped += 1,
        }
    }
    Ok(cmp)
}

/// Report for one named loss over several seeded instances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub loss: String,
    pub trials: usize,
    #[serde(flatten)]
    pub comparison: Comparison,
}

/// Checks `trials` instances of probe `name`, instance `t` seeded from `(seed, t)`.
pub fn run_check(name: &str, trials: usize, seed: u64, cfg: &InstanceConfig, tol: &Tolerance) -> Result<CheckReport> {
    run_check_with(name, trials, seed, cfg, tol, |p| p)
}

/// Like [`run_check`], passing every probe through `wrap` first.
pub fn run_check_with(
    name: &str,
    trials: usize,
    seed: u64,
    cfg: &InstanceConfig,
    tol: &Tolerance,
    wrap: impl Fn(Box<dyn LossProbe>) -> Box<dyn LossProbe>,
) -> Result<CheckReport> {
    let factory = probes().create(name)?;
    let mut comparison = Comparison::default();
    for t in 0..trials {
        let probe = wrap(factory.build(derive_seed(seed, &[t as u64]), cfg)?);
        comparison.merge(&check_probe(probe.as_ref(), tol)?);
    }
    Ok(CheckReport {
        loss: name.to_string(),
        trials,
        comparison,
    })
}

/// Probe whose analytic gradient is scaled by `factor`; a negative control.
pub struct ScaledGradient {
    pub inner: Box<dyn LossProbe>,
    pub factor: f64,
}

impl LossProbe for ScaledGradient {
    fn params(&self) -> &[f64] {
        self.inner.params()
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        self.inner.value(params)
    }

    fn gradient(&self) -> Result<Vec<f64>> {
        Ok(self.inner.gradient()?.into_iter().map(|g| g * self.factor).collect())
    }

    fn skip(&self, index: usize, step: f64) -> bool {
        self.inner.skip(index, step)
    }
}

/// Minimum distance from a kink for an entry to be compared.
const KINK: f64 = 1e-6;

fn normal_map(shape: Shape, rng: &mut ChaCha8Rng) -> FeatureMap {
    let data = (0..shape.len()).map(|_| rng.sample(StandardNormal)).collect();
    FeatureMap::new(shape, data).expect("length matches shape")
}

struct Scene {
    student: FeatureMap,
    teacher: FeatureMap,
    partition: RayPartition,
    fg: ForegroundMask,
}

fn random_scene(seed: u64, cfg: &InstanceConfig) -> Result<Scene> {
    let mut rng = seeded(seed);
    let shape = Shape::new(cfg.d, cfg.h, cfg.w);
    let origin = default_origin(cfg.h, cfg.w);
    let boxes = random_objects(cfg.h, cfg.w, origin, cfg.n_objects, &mut rng);
    Ok(Scene {
        student: normal_map(shape, &mut rng),
        teacher: normal_map(shape, &mut rng),
        partition: partition_rays(cfg.h, cfg.w, origin, cfg.n_ray)?,
        fg: rasterize_objects(&boxes, cfg.h, cfg.w)?,
    })
}

fn map_from(params: &[f64], like: &FeatureMap) -> Result<FeatureMap> {
    FeatureMap::new(like.shape(), params.to_vec())
}

struct RcdProbe {
    scene: Scene,
    samples: SampleSet,
    cfg: RcdConfig,
}

impl LossProbe for RcdProbe {
    fn params(&self) -> &[f64] {
        self.scene.student.as_slice()
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        let s = map_from(params, &self.scene.student)?;
        Ok(rcd_loss(&s, &self.scene.teacher, &self.samples, &self.cfg)?.result.value)
    }

    fn gradient(&self) -> Result<Vec<f64>> {
        Ok(rcd_loss(&self.scene.student, &self.scene.teacher, &self.samples, &self.cfg)?
            .result
            .grad
            .into_vec())
    }
}

struct RcdFactory;

impl ProbeFactory for RcdFactory {
    fn build(&self, seed: u64, cfg: &InstanceConfig) -> Result<Box<dyn LossProbe>> {
        let scene = random_scene(seed, cfg)?;
        let sampler = SamplerConfig { seed, ..cfg.sampler };
        let samples = build_sample_set(&scene.student, &scene.teacher, &scene.partition, &scene.fg, &sampler)?;
        Ok(Box::new(RcdProbe {
            scene,
            samples,
            cfg: cfg.rcd,
        }))
    }
}

struct RwdProbe {
    scene: Scene,
    cfg: RwdConfig,
    /// Weights frozen at the probe point when detached.
    frozen: Option<ScalarGrid>,
}

impl LossProbe for RwdProbe {
    fn params(&self) -> &[f64] {
        self.scene.student.as_slice()
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        let s = map_from(params, &self.scene.student)?;
        let out = match &self.frozen {
            Some(w) => rwd_loss_with_weights(&s, &self.scene.teacher, w)?,
            None => rwd_loss(&s, &self.scene.teacher, &self.scene.partition, &self.scene.fg, &self.cfg)?,
        };
        Ok(out.value)
    }

    fn gradient(&self) -> Result<Vec<f64>> {
        let s = &self.scene;
        Ok(rwd_loss(&s.student, &s.teacher, &s.partition, &s.fg, &self.cfg)?.grad.into_vec())
    }

    fn skip(&self, index: usize, step: f64) -> bool {
        let c = self.scene.student.as_slice()[index];
        let l = self.scene.teacher.as_slice()[index];
        let r = KINK.max(step);
        (c - l).abs() < r || (self.frozen.is_none() && c.abs() < r)
    }
}

struct RwdFactory {
    detach: bool,
}

impl ProbeFactory for RwdFactory {
    fn build(&self, seed: u64, cfg: &InstanceConfig) -> Result<Box<dyn LossProbe>> {
        use crate::losses::{attention_map, ray_kl, weight_map};
        let scene = random_scene(seed, cfg)?;
        let rwd = RwdConfig {
            detach_weights: self.detach,
            ..cfg.rwd
        };
        let frozen = if self.detach {
            let a = ray_kl(
                &attention_map(&scene.student),
                &attention_map(&scene.teacher),
                &scene.partition,
                rwd.eps,
            )?;
            Some(weight_map(&a, &scene.partition, &scene.fg, &rwd)?.grid)
        } else {
            None
        };
        Ok(Box::new(RwdProbe { scene, cfg: rwd, frozen }))
    }
}

struct ResProbe {
    teacher: HeadOutputs,
    student: HeadOutputs,
    params: Vec<f64>,
    teacher_flat: Vec<f64>,
}

impl ResProbe {
    fn heads_from(&self, params: &[f64]) -> Result<HeadOutputs> {
        let mut offset = 0;
        let mut heads = Vec::with_capacity(self.student.heads.len());
        for h in &self.student.heads {
            let n = h.as_slice().len();
            heads.push(FeatureMap::new(h.shape(), params[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(HeadOutputs { heads })
    }
}

impl LossProbe for ResProbe {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        Ok(response_loss(&self.teacher, &self.heads_from(params)?)?.value)
    }

    fn gradient(&self) -> Result<Vec<f64>> {
        let out = response_loss(&self.teacher, &self.student)?;
        Ok(out.grads.iter().flat_map(|g| g.as_slice().iter().copied()).collect())
    }

    fn skip(&self, index: usize, step: f64) -> bool {
        (self.params[index] - self.teacher_flat[index]).abs() < KINK.max(step)
    }
}

struct ResFactory;

impl ProbeFactory for ResFactory {
    fn build(&self, seed: u64, cfg: &InstanceConfig) -> Result<Box<dyn LossProbe>> {
        let mut rng = seeded(seed);
        let shapes = [Shape::new(cfg.d, cfg.h, cfg.w), Shape::new(1, cfg.h, cfg.w)];
        let teacher = HeadOutputs {
            heads: shapes.iter().map(|s| normal_map(*s, &mut rng)).collect(),
        };
        let student = HeadOutputs {
            heads: shapes.iter().map(|s| normal_map(*s, &mut rng)).collect(),
        };
        let flat = |h: &HeadOutputs| h.heads.iter().flat_map(|g| g.as_slice().iter().copied()).collect();
        Ok(Box::new(ResProbe {
            params: flat(&student),
            teacher_flat: flat(&teacher),
            teacher,
            student,
        }))
    }
}

struct SrcProbe {
    logits: ScalarGrid,
    fg: ForegroundMask,
}

impl LossProbe for SrcProbe {
    fn params(&self) -> &[f64] {
        self.logits.as_slice()
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        let x = ScalarGrid::new(self.logits.height(), self.logits.width(), params.to_vec())?;
        Ok(src_loss(&x, &self.fg)?.value)
    }

    fn gradient(&self) -> Result<Vec<f64>> {
        Ok(src_loss(&self.logits, &self.fg)?.grad.into_vec())
    }
}

struct SrcFactory;

impl ProbeFactory for SrcFactory {
    fn build(&self, seed: u64, cfg: &InstanceConfig) -> Result<Box<dyn LossProbe>> {
        let scene = random_scene(seed, cfg)?;
        let mut rng = seeded(derive_seed(seed, &[0x5c]));
        let data = (0..cfg.h * cfg.w).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(Box::new(SrcProbe {
            logits: ScalarGrid::new(cfg.h, cfg.w, data)?,
            fg: scene.fg,
        }))
    }
}

/// Probe registry: `rcd`, `rwd` (detached weights), `rwd-full`, `res`, `src`.
pub fn probes() -> &'static Registry<dyn ProbeFactory> {
    static REGISTRY: OnceLock<Registry<dyn ProbeFactory>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn ProbeFactory> = Registry::new("loss probe");
        r.register("rcd", || Box::new(RcdFactory))
            .register("rwd", || Box::new(RwdFactory { detach: true }))
            .register("rwd-full", || Box::new(RwdFactory { detach: false }))
            .register("res", || Box::new(ResFactory))
            .register("src", || Box::new(SrcFactory));
        r
    })
}

/// Fails with a numeric error naming every loss whose check did not pass.
pub fn ensure_passed(reports: &[CheckReport]) -> Result<()> {
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.comparison.passed())
        .map(|r| r.loss.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}
