//! Ray-based contrastive distillation.
//!
//! For a ray with positive `j` and negatives `k`, with pooled student vectors
//! `C` and teacher vectors `L`:
//!
//! ```text
//! student term  a = exp(L_j·C_j/τ) / (Σ_{k∈{j}∪neg} exp(L_j·C_k/τ) + ξ)
//! teacher term  b = exp(C_j·L_j/τ) / (Σ_{k∈{j}∪neg} exp(C_j·L_k/τ) + ξ)
//! loss          −ln( (Σ_rays a + Σ_rays b) / N )
//! ```
//!
//! The gradient flows into the student map through pooling, the optional L2
//! normalisation, the dot products and the log; the teacher is constant.

use serde::{Deserialize, Serialize};

use super::LossResult;
use crate::error::{Error, Result};
use crate::geometry::Cell;
use crate::sampling::{region_pool, region_pool_backward, SampleEntry, SampleSet};
use crate::tensor::FeatureMap;

/// Floor applied to the log argument.
pub const LOG_FLOOR: f64 = 1e-300;
const NORM_FLOOR: f64 = 1e-12;

/// How the per-ray ratios are reduced to a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RcdForm {
    /// `−ln((Σa + Σb)/N)`.
    #[default]
    Verbatim,
    /// Conventional InfoNCE: `−(1/2N) Σ (ln a + ln b)`.
    SumOfLogs,
}

/// Normaliser `N` in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayCount {
    /// Rays that produced a sample entry.
    #[default]
    Active,
    /// Every ray of the partition.
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcdConfig {
    pub tau: f64,
    pub xi: f64,
    /// L2-normalise pooled vectors before the dot products.
    pub normalize: bool,
    pub form: RcdForm,
    pub ray_count: RayCount,
}

impl Default for RcdConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            xi: 1e-6,
            normalize: true,
            form: RcdForm::Verbatim,
            ray_count: RayCount::Active,
        }
    }
}

impl RcdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::argument("tau must be positive"));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::argument("xi must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcdLoss {
    pub result: LossResult,
    /// Number of sample entries (rays with a positive).
    pub active_rays: usize,
}

impl RcdLoss {
    /// No ray carried a positive; value and gradient are zero.
    pub fn no_positive(&self) -> bool {
        self.active_rays == 0
    }
}

/// Pooled vectors of one entry with negatives in canonical cell order.
struct EntryVectors {
    student: Vec<Vec<f64>>,
    teacher: Vec<Vec<f64>>,
    cells: Vec<Cell>,
}

/// Permutation that sorts negatives by cell index, so sums do not depend on
/// the order negatives were stored in.
fn canonical_order(negatives: &[Cell]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..negatives.len()).collect();
    order.sort_by_key(|&i| negatives[i]);
    order
}

fn stored_vectors(e: &SampleEntry) -> EntryVectors {
    let order = canonical_order(&e.negatives);
    let mut student = vec![e.student_positive.clone()];
    let mut teacher = vec![e.teacher_positive.clone()];
    let mut cells = vec![e.positive];
    for i in order {
        student.push(e.student_negatives[i].clone());
        teacher.push(e.teacher_negatives[i].clone());
        cells.push(e.negatives[i]);
    }
    EntryVectors {
        student,
        teacher,
        cells,
    }
}

fn pooled_vectors(e: &SampleEntry, student: &FeatureMap, teacher: &FeatureMap, m: usize) -> EntryVectors {
    let order = canonical_order(&e.negatives);
    let cells: Vec<Cell> = std::iter::once(e.positive)
        .chain(order.into_iter().map(|i| e.negatives[i]))
        .collect();
    EntryVectors {
        student: cells.iter().map(|c| region_pool(student, *c, m)).collect(),
        teacher: cells.iter().map(|c| region_pool(teacher, *c, m)).collect(),
        cells,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `(v/|v|, |v|)`, or `(v, 1)` when normalisation is off.
fn unit(v: &[f64], normalize: bool) -> (Vec<f64>, f64) {
    if !normalize {
        return (v.to_vec(), 1.0);
    }
    let norm = dot(v, v).sqrt().max(NORM_FLOOR);
    (v.iter().map(|x| x / norm).collect(), norm)
}

/// Backward of [`unit`]: maps the gradient w.r.t. the unit vector to the raw vector.
fn unit_backward(u: &[f64], norm: f64, g: &[f64], normalize: bool) -> Vec<f64> {
    if !normalize {
        return g.to_vec();
    }
    let proj = dot(u, g);
    u.iter().zip(g).map(|(ui, gi)| (gi - ui * proj) / norm).collect()
}

/// `exp(l_0) / (Σ exp(l_k) + ξ)` with its per-logit shares `exp(l_k)/(Σ + ξ)`.
fn ratio(logits: &[f64], xi: f64) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let guard = if xi > 0.0 { (xi.ln() - max).exp() } else { 0.0 };
    let denom = exps.iter().sum::<f64>() + guard;
    let shares: Vec<f64> = exps.iter().map(|e| e / denom).collect();
    (shares[0], shares)
}

struct EntryForward {
    units_s: Vec<Vec<f64>>,
    norms_s: Vec<f64>,
    units_t: Vec<Vec<f64>>,
    a: f64,
    shares_a: Vec<f64>,
    b: f64,
    shares_b: Vec<f64>,
}

fn entry_forward(v: &EntryVectors, cfg: &RcdConfig) -> EntryForward {
    let (units_s, norms_s): (Vec<_>, Vec<_>) = v.student.iter().map(|x| unit(x, cfg.normalize)).unzip();
    let units_t: Vec<Vec<f64>> = v.teacher.iter().map(|x| unit(x, cfg.normalize).0).collect();
    let logits_a: Vec<f64> = units_s.iter().map(|s| dot(&units_t[0], s) / cfg.tau).collect();
    let logits_b: Vec<f64> = units_t.iter().map(|t| dot(&units_s[0], t) / cfg.tau).collect();
    let (a, shares_a) = ratio(&logits_a, cfg.xi);
    let (b, shares_b) = ratio(&logits_b, cfg.xi);
    EntryForward {
        units_s,
        norms_s,
        units_t,
        a,
        shares_a,
        b,
        shares_b,
    }
}

/// Gradients w.r.t. the raw pooled student vectors, given `dL/da` and `dL/db`.
fn entry_backward(f: &EntryForward, ga: f64, gb: f64, cfg: &RcdConfig) -> Vec<Vec<f64>> {
    let n = f.units_s.len();
    let dim = f.units_t[0].len();
    let inv_tau = 1.0 / cfg.tau;
    let mut g_units = vec![vec![0.0; dim]; n];
    for k in 0..n {
        let dlogit = if k == 0 {
            ga * f.a * (1.0 - f.shares_a[0])
        } else {
            -ga * f.a * f.shares_a[k]
        };
        for (g, t) in g_units[k].iter_mut().zip(&f.units_t[0]) {
            *g += dlogit * t * inv_tau;
        }
    }
    for k in 0..n {
        let dlogit = if k == 0 {
            gb * f.b * (1.0 - f.shares_b[0])
        } else {
            -gb * f.b * f.shares_b[k]
        };
        for (g, t) in g_units[0].iter_mut().zip(&f.units_t[k]) {
            *g += dlogit * t * inv_tau;
        }
    }
    g_units
        .iter()
        .enumerate()
        .map(|(k, g)| unit_backward(&f.units_s[k], f.norms_s[k], g, cfg.normalize))
        .collect()
}

/// Sum over entries of the student-side ratio, using the stored pooled vectors.
/// Zero for an empty sample set.
pub fn rcd_student_term(s: &SampleSet, cfg: &RcdConfig) -> f64 {
    s.entries
        .iter()
        .map(|e| entry_forward(&stored_vectors(e), cfg).a)
        .sum()
}

/// Sum over entries of the teacher-side ratio (negatives from the teacher map).
pub fn rcd_teacher_term(s: &SampleSet, cfg: &RcdConfig) -> f64 {
    s.entries
        .iter()
        .map(|e| entry_forward(&stored_vectors(e), cfg).b)
        .sum()
}

/// Contrastive loss and its gradient w.r.t. `student`. Features are re-pooled
/// from the given maps at the sample cells.
pub fn rcd_loss(student: &FeatureMap, teacher: &FeatureMap, s: &SampleSet, cfg: &RcdConfig) -> Result<RcdLoss> {
    cfg.validate()?;
    student.ensure_same_shape(teacher, "rcd_loss")?;
    if s.entries.is_empty() {
        return Ok(RcdLoss {
            result: LossResult::zero(student),
            active_rays: 0,
        });
    }
    let n = match cfg.ray_count {
        RayCount::Active => s.entries.len(),
        RayCount::Nominal => s.n_ray.max(s.entries.len()),
    } as f64;

    let vectors: Vec<EntryVectors> = s
        .entries
        .iter()
        .map(|e| pooled_vectors(e, student, teacher, s.m))
        .collect();
    let forwards: Vec<EntryForward> = vectors.iter().map(|v| entry_forward(v, cfg)).collect();

    let (value, grads_ab): (f64, Vec<(f64, f64)>) = match cfg.form {
        RcdForm::Verbatim => {
            let total: f64 = forwards.iter().map(|f| f.a + f.b).sum();
            let mean = total / n;
            let g = if mean > LOG_FLOOR { -1.0 / (n * mean) } else { 0.0 };
            (-mean.max(LOG_FLOOR).ln(), vec![(g, g); forwards.len()])
        }
        RcdForm::SumOfLogs => {
            let scale = 1.0 / (2.0 * n);
            let mut value = 0.0;
            let mut grads = Vec::with_capacity(forwards.len());
            for f in &forwards {
                value -= scale * (f.a.max(LOG_FLOOR).ln() + f.b.max(LOG_FLOOR).ln());
                let ga = if f.a > LOG_FLOOR { -scale / f.a } else { 0.0 };
                let gb = if f.b > LOG_FLOOR { -scale / f.b } else { 0.0 };
                grads.push((ga, gb));
            }
            (value, grads)
        }
    };

    let mut grad = FeatureMap::zeros(student.shape());
    for ((v, f), (ga, gb)) in vectors.iter().zip(&forwards).zip(grads_ab) {
        let g_pooled = entry_backward(f, ga, gb, cfg);
        for (cell, g) in v.cells.iter().zip(&g_pooled) {
            region_pool_backward(&mut grad, *cell, s.m, g);
        }
    }
    Ok(RcdLoss {
        result: LossResult { value, grad },
        active_rays: s.entries.len(),
    })
}
