//! Positive/negative sample construction along rays.
//!
//! Each ray that hits an object contributes one positive cell inside the
//! object's footprint and up to `n_neg` negatives drawn from the ray's
//! background cells, with probability decaying as a Gaussian of the distance
//! to the positive. Features are read as `m×m` window means.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cell, ForegroundMask, RayPartition};
use crate::rng::{substream, ChaCha8Rng};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Gaussian width in cells.
    pub sigma: f64,
    pub n_neg: usize,
    /// Odd pooling window side.
    pub m: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            n_neg: 5,
            m: 3,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::argument("sampler sigma must be positive"));
        }
        if self.n_neg < 1 {
            return Err(Error::argument("n_neg must be at least 1"));
        }
        if self.m < 1 || self.m % 2 == 0 {
            return Err(Error::argument("pooling window m must be an odd integer >= 1"));
        }
        Ok(())
    }
}

/// Candidate negatives of one ray with their sampling probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeDistribution {
    pub cells: Vec<Cell>,
    pub probs: Vec<f64>,
}

/// Gaussian sampling distribution over the non-foreground cells of a ray.
///
/// Returns `None` when the ray has no background cell to draw from.
pub fn negative_probs(
    ray_cells: &[Cell],
    positive: Cell,
    fg: &ForegroundMask,
    sigma: f64,
) -> Option<NegativeDistribution> {
    let cells: Vec<Cell> = ray_cells
        .iter()
        .copied()
        .filter(|c| *c != positive && !fg.is_foreground(*c))
        .collect();
    if cells.is_empty() {
        return None;
    }
    let two_s2 = 2.0 * sigma * sigma;
    let exponents: Vec<f64> = cells
        .iter()
        .map(|c| {
            let d = positive.distance(c);
            -d * d / two_s2
        })
        .collect();
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let probs = weights.into_iter().map(|w| w / total).collect();
    Some(NegativeDistribution { cells, probs })
}

/// Draws up to `n_neg` distinct cells without replacement, renormalising the
/// remaining mass after each draw. Returns every candidate when there are
/// fewer than `n_neg`.
pub fn draw_negatives(dist: &NegativeDistribution, n_neg: usize, rng: &mut ChaCha8Rng) -> Vec<Cell> {
    if n_neg >= dist.cells.len() {
        return dist.cells.clone();
    }
    let mut weights = dist.probs.clone();
    let mut out = Vec::with_capacity(n_neg);
    for _ in 0..n_neg {
        let total: f64 = weights.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        let mut last_live = 0;
        for (i, w) in weights.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            last_live = i;
            acc += w;
            if target < acc {
                chosen = Some(i);
                break;
            }
        }
        // rounding can leave `target` just past the final bucket
        let i = chosen.unwrap_or(last_live);
        out.push(dist.cells[i]);
        weights[i] = 0.0;
    }
    out
}

/// Per-channel mean over the `m×m` window centered at `cell`, clipped to the grid.
pub fn region_pool(f: &FeatureMap, cell: Cell, m: usize) -> Vec<f64> {
    let (rows, cols) = window(f.height(), f.width(), cell, m);
    let count = (rows.len() * cols.len()) as f64;
    (0..f.channels())
        .map(|d| {
            let mut acc = 0.0;
            for h in rows.clone() {
                for w in cols.clone() {
                    acc += f.get(d, h, w);
                }
            }
            acc / count
        })
        .collect()
}

/// Adds `grad / count` to every in-bounds cell of the window: the adjoint of [`region_pool`].
pub fn region_pool_backward(out: &mut FeatureMap, cell: Cell, m: usize, grad: &[f64]) {
    let (rows, cols) = window(out.height(), out.width(), cell, m);
    let inv = 1.0 / (rows.len() * cols.len()) as f64;
    for (d, g) in grad.iter().enumerate() {
        let g = g * inv;
        for h in rows.clone() {
            for w in cols.clone() {
                out.add_at(d, h, w, g);
            }
        }
    }
}

fn window(h: usize, w: usize, cell: Cell, m: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let r = m / 2;
    let rows = cell.h.saturating_sub(r)..(cell.h + r + 1).min(h);
    let cols = cell.w.saturating_sub(r)..(cell.w + r + 1).min(w);
    (rows, cols)
}

/// One ray's positive and negatives with pooled features of both maps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleEntry {
    pub ray: usize,
    pub positive: Cell,
    pub negatives: Vec<Cell>,
    pub student_positive: Vec<f64>,
    pub teacher_positive: Vec<f64>,
    pub student_negatives: Vec<Vec<f64>>,
    pub teacher_negatives: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    /// Pooling window used for the pooled vectors.
    pub m: usize,
    /// Nominal ray count of the partition the samples came from.
    pub n_ray: usize,
    pub entries: Vec<SampleEntry>,
}

impl SampleSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Positive cell of a ray: inside the nearest object along the ray, closest to
/// that object's center (ties resolved by radial order).
pub fn select_positive(ray_cells: &[Cell], fg: &ForegroundMask) -> Option<Cell> {
    let first = ray_cells.iter().find(|c| fg.is_foreground(**c))?;
    let id = fg.owner(*first).expect("foreground cell has an owner");
    let object = fg.object(id).expect("owner id refers to a box");
    let mut best: Option<(f64, Cell)> = None;
    for c in ray_cells.iter().filter(|c| fg.owner(**c) == Some(id)) {
        let d = object.center_distance(*c);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, *c));
        }
    }
    best.map(|(_, c)| c)
}

/// Selects cells on every object-bearing ray (without pooling).
pub fn select_cells(
    p: &RayPartition,
    fg: &ForegroundMask,
    cfg: &SamplerConfig,
) -> Vec<(usize, Cell, Vec<Cell>)> {
    let mut out = Vec::new();
    for (ray, cells) in p.rays() {
        let Some(positive) = select_positive(cells, fg) else {
            continue;
        };
        let Some(dist) = negative_probs(cells, positive, fg, cfg.sigma) else {
            continue;
        };
        let mut rng = substream(cfg.seed, ray as u64);
        let mut negatives = draw_negatives(&dist, cfg.n_neg, &mut rng);
        negatives.sort_by(|a, b| p.radius(*a).total_cmp(&p.radius(*b)).then(a.cmp(b)));
        out.push((ray, positive, negatives));
    }
    out
}

pub fn build_sample_set(
    student: &FeatureMap,
    teacher: &FeatureMap,
    p: &RayPartition,
    fg: &ForegroundMask,
    cfg: &SamplerConfig,
) -> Result<SampleSet> {
    cfg.validate()?;
    student.ensure_same_shape(teacher, "build_sample_set")?;
    if student.height() != p.height() || student.width() != p.width() {
        return Err(Error::argument("feature maps and ray partition disagree on grid size"));
    }
    if fg.height() != p.height() || fg.width() != p.width() {
        return Err(Error::argument("foreground mask and ray partition disagree on grid size"));
    }
    let entries = select_cells(p, fg, cfg)
        .into_iter()
        .map(|(ray, positive, negatives)| SampleEntry {
            ray,
            positive,
            student_positive: region_pool(student, positive, cfg.m),
            teacher_positive: region_pool(teacher, positive, cfg.m),
            student_negatives: negatives.iter().map(|c| region_pool(student, *c, cfg.m)).collect(),
            teacher_negatives: negatives.iter().map(|c| region_pool(teacher, *c, cfg.m)).collect(),
            negatives,
        })
        .collect();
    Ok(SampleSet {
        m: cfg.m,
        n_ray: p.n_ray(),
        entries,
    })
}
