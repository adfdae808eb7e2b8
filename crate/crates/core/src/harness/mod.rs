//! Toy distillation training: an affine student learns from the simulator's
//! camera maps under the four losses, with depth and resilience metrics.

pub mod metrics;
pub mod model;
pub mod optim;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use metrics::{
    depth_error, depth_mae, evaluate_resilience, ray_depth_error, resilience_ratio, standard_corruptions,
    DepthError, ResilienceReport, ResilienceRow,
};
pub use model::{backward, forward, ModelGrad, StudentModel};
pub use optim::{optimizers, Adam, Optimizer, Sgd};

use crate::error::{Error, Result};
use crate::geometry::ForegroundMask;
use crate::losses::{
    rcd_loss, response_loss, rwd_loss, src_loss, HeadLoss, HeadOutputs, LossWeights, RcdConfig, RwdConfig,
};
use crate::rng::derive_seed;
use crate::sampling::{build_sample_set, SamplerConfig};
use crate::simulator::corruption::CorruptionSpec;
use crate::simulator::SceneRender;
use crate::tensor::{FeatureMap, ScalarGrid};

/// Teacher occupancy logit on foreground cells; background gets the negative.
pub const TEACHER_LOGIT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: String,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-2,
            optimizer: "adam".into(),
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::argument("epochs must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::argument("lr must be finite and non-negative"));
        }
        optimizers().create(&self.optimizer)?;
        self.loss_weights.validate()
    }
}

/// Settings of the individual loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub sampler: SamplerConfig,
    pub rcd: RcdConfig,
    pub rwd: RwdConfig,
}

impl LossSettings {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.rcd.validate()?;
        self.rwd.validate()
    }
}

/// Per-epoch means over scenes of the loss terms seen during the epoch, and the
/// clean depth error after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub total: f64,
    pub rcd: f64,
    pub rwd: f64,
    pub src: f64,
    pub res: f64,
    pub depth_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: StudentModel,
    pub rows: Vec<MetricsRow>,
}

/// Loss values and parameter gradient of one scene.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub total: f64,
    pub rcd: f64,
    pub rwd: f64,
    pub src: f64,
    pub res: f64,
    pub grad: ModelGrad,
}

/// Occupancy logits of the teacher: `±TEACHER_LOGIT` by foreground.
pub fn teacher_heads(fg: &ForegroundMask) -> Result<HeadOutputs> {
    let data = fg
        .indicator()
        .into_iter()
        .map(|y| if y > 0.5 { TEACHER_LOGIT } else { -TEACHER_LOGIT })
        .collect();
    Ok(HeadOutputs {
        heads: vec![ScalarGrid::new(fg.height(), fg.width(), data)?.to_feature_map()],
    })
}

/// Response loss of student occupancy logits against [`teacher_heads`].
pub fn response_loss_for(fg: &ForegroundMask, occupancy: &ScalarGrid) -> Result<HeadLoss> {
    response_loss(
        &teacher_heads(fg)?,
        &HeadOutputs {
            heads: vec![occupancy.to_feature_map()],
        },
    )
}

fn ensure_finite(term: &str, value: f64, grad: &FeatureMap, context: &str) -> Result<()> {
    if value.is_finite() && grad.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{term} loss diverged ({context}): value {value}")))
    }
}

/// All four losses and the backpropagated parameter gradient for one scene.
/// Negatives are drawn with `sampler_seed`.
pub fn evaluate_step(
    model: &StudentModel,
    scene: &SceneRender,
    weights: &LossWeights,
    settings: &LossSettings,
    sampler_seed: u64,
    context: &str,
) -> Result<StepEval> {
    let input = &scene.camera_clean;
    let (student, occ) = forward(model, input)?;
    let sampler = SamplerConfig {
        seed: sampler_seed,
        ..settings.sampler
    };
    let set = build_sample_set(&student, &scene.teacher, &scene.partition, &scene.fg, &sampler)?;
    let rcd = rcd_loss(&student, &scene.teacher, &set, &settings.rcd)?.result;
    ensure_finite("rcd", rcd.value, &rcd.grad, context)?;
    let rwd = rwd_loss(&student, &scene.teacher, &scene.partition, &scene.fg, &settings.rwd)?;
    ensure_finite("rwd", rwd.value, &rwd.grad, context)?;
    let src = src_loss(&occ, &scene.fg)?;
    ensure_finite("src", src.value, &src.grad, context)?;
    let res = response_loss_for(&scene.fg, &occ)?;
    ensure_finite("res", res.value, &res.grads[0], context)?;

    let mut g_student = FeatureMap::zeros(student.shape());
    g_student.add_scaled(&rcd.grad, weights.w_rcd);
    g_student.add_scaled(&rwd.grad, weights.w_rwd);
    let mut g_occ = src.grad.scaled(weights.w_src);
    g_occ.add_scaled(&res.grads[0], weights.w_res);
    let g_occ = ScalarGrid::from_feature_map(&g_occ)?;
    let grad = backward(model, input, &student, &g_student, &g_occ)?;
    let total =
        weights.w_rcd * rcd.value + weights.w_rwd * rwd.value + weights.w_src * src.value + weights.w_res * res.value;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("total loss diverged ({context})")));
    }
    Ok(StepEval {
        total,
        rcd: rcd.value,
        rwd: rwd.value,
        src: src.value,
        res: res.value,
        grad,
    })
}

/// Sampler seed for scene `k`; fixed across epochs.
pub fn scene_sampler_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, &[0x5a3, k as u64])
}

/// Trains a freshly initialised student, one optimizer step per scene per epoch.
pub fn train(scenes: &[SceneRender], cfg: &TrainConfig, settings: &LossSettings) -> Result<TrainOutcome> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::argument("train needs at least one scene"))?;
    let model = StudentModel::init(first.camera_clean.channels(), first.teacher.channels(), derive_seed(cfg.seed, &[0x1a17]))?;
    train_from(model, scenes, cfg, settings)
}

/// Continues training `model`.
pub fn train_from(
    mut model: StudentModel,
    scenes: &[SceneRender],
    cfg: &TrainConfig,
    settings: &LossSettings,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    settings.validate()?;
    if scenes.is_empty() {
        return Err(Error::argument("train needs at least one scene"));
    }
    for s in scenes {
        if s.teacher.channels() != model.d_out || s.camera_clean.channels() != model.d_in {
            return Err(Error::argument("scene channel counts do not match the model"));
        }
    }
    let mut opt = optimizers().create(&cfg.optimizer)?;
    let mut params = model.params();
    let mut rows = Vec::with_capacity(cfg.epochs);
    let n = scenes.len() as f64;
    for epoch in 1..=cfg.epochs {
        let mut row = MetricsRow {
            epoch,
            total: 0.0,
            rcd: 0.0,
            rwd: 0.0,
            src: 0.0,
            res: 0.0,
            depth_mae: 0.0,
        };
        for (k, scene) in scenes.iter().enumerate() {
            let context = format!("epoch {epoch}, scene {k}");
            let step = evaluate_step(
                &model,
                scene,
                &cfg.loss_weights,
                settings,
                scene_sampler_seed(cfg.seed, k),
                &context,
            )?;
            row.total += step.total / n;
            row.rcd += step.rcd / n;
            row.rwd += step.rwd / n;
            row.src += step.src / n;
            row.res += step.res / n;
            opt.step(&mut params, &step.grad.flat(), cfg.lr);
            model.set_params(&params)?;
            if !model.is_finite() {
                return Err(Error::Numeric(format!("parameters became non-finite ({context})")));
            }
        }
        row.depth_mae = depth_mae(&model, scenes)?;
        rows.push(row);
    }
    Ok(TrainOutcome { model, rows })
}

fn sci(v: f64) -> String {
    format!("{v:.8e}")
}

pub const METRICS_HEADER: &str = "epoch,total,rcd,rwd,src,res,depth_mae";
pub const RESILIENCE_HEADER: &str = "kind,severity,depth_mae,resilience";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            sci(r.total),
            sci(r.rcd),
            sci(r.rwd),
            sci(r.src),
            sci(r.res),
            sci(r.depth_mae)
        );
    }
    out
}

pub fn resilience_csv(report: &ResilienceReport) -> String {
    let mut out = format!("{RESILIENCE_HEADER}\n");
    for r in &report.rows {
        let _ = writeln!(out, "{},{},{},{}", r.kind, sci(r.severity), sci(r.depth_mae), sci(r.resilience));
    }
    out
}

/// Paired baseline (detection loss only) and distilled runs with the same seed.
#[derive(Debug, Clone)]
pub struct Ablation {
    pub baseline: TrainOutcome,
    pub distilled: TrainOutcome,
    pub baseline_resilience: ResilienceReport,
    pub distilled_resilience: ResilienceReport,
}

impl Ablation {
    pub fn final_depth_mae(&self) -> (f64, f64) {
        let last = |o: &TrainOutcome| o.rows.last().map_or(0.0, |r| r.depth_mae);
        (last(&self.baseline), last(&self.distilled))
    }

    /// `(distilled − baseline) / baseline` of the final depth error.
    pub fn relative_change(&self) -> f64 {
        let (b, d) = self.final_depth_mae();
        if b == 0.0 {
            0.0
        } else {
            (d - b) / b
        }
    }
}

pub fn run_ablation(
    scenes: &[SceneRender],
    cfg: &TrainConfig,
    settings: &LossSettings,
    corruptions: &[CorruptionSpec],
) -> Result<Ablation> {
    let baseline_cfg = TrainConfig {
        loss_weights: LossWeights::src_only(),
        ..cfg.clone()
    };
    let baseline = train(scenes, &baseline_cfg, settings)?;
    let distilled = train(scenes, cfg, settings)?;
    let baseline_resilience = evaluate_resilience(&baseline.model, scenes, corruptions)?;
    let distilled_resilience = evaluate_resilience(&distilled.model, scenes, corruptions)?;
    Ok(Ablation {
        baseline,
        distilled,
        baseline_resilience,
        distilled_resilience,
    })
}

pub const COMPARISON_HEADER: &str = "metric,baseline,distilled,relative_change";

pub fn comparison_csv(a: &Ablation) -> String {
    let (b, d) = a.final_depth_mae();
    let rel = |b: f64, d: f64| if b == 0.0 { 0.0 } else { (d - b) / b };
    let (rb, rd) = (a.baseline_resilience.aggregate, a.distilled_resilience.aggregate);
    let mut out = format!("{COMPARISON_HEADER}\n");
    let _ = writeln!(out, "final_depth_mae,{},{},{}", sci(b), sci(d), sci(rel(b, d)));
    let _ = writeln!(out, "resilience_aggregate,{},{},{}", sci(rb), sci(rd), sci(rel(rb, rd)));
    out
}
