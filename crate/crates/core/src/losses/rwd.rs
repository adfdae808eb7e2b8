//! Ray-based weighted distillation.
//!
//! Spatial attention `S = softmax(mean_d |F^d|)` is computed for both maps, each
//! ray gets a weight `A_i = KL(SL_i ‖ SC_i)` on renormalised ray slices, the
//! weights are broadcast to cells (background scaled by `s_bg`, objects lifted
//! to the max over the rays they touch) and an L1 mimicry term is weighted by
//! the resulting map.

use serde::{Deserialize, Serialize};

use super::{sign0, LossResult};
use crate::error::{Error, Result};
use crate::geometry::{ForegroundMask, RayPartition};
use crate::tensor::{channel_abs_mean, compensated_sum, softmax_flat, FeatureMap, ScalarGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RwdConfig {
    /// Background weight scale in (0, 1].
    pub s_bg: f64,
    /// Floor added to ray slices before renormalising.
    pub eps: f64,
    /// Treat the weight map as a constant during backprop.
    pub detach_weights: bool,
}

impl Default for RwdConfig {
    fn default() -> Self {
        Self {
            s_bg: 0.25,
            eps: 1e-12,
            detach_weights: true,
        }
    }
}

impl RwdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_bg > 0.0 && self.s_bg <= 1.0) {
            return Err(Error::argument("s_bg must lie in (0, 1]"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::argument("eps must be positive"));
        }
        Ok(())
    }
}

/// Per-ray KL weights `A_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayWeights {
    pub a: Vec<f64>,
}

/// Cell weights plus, for each cell, the ray and scale its weight was taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub grid: ScalarGrid,
    sources: Vec<Option<(usize, f64)>>,
}

impl WeightMap {
    /// `(ray, factor)` with `ω = factor · A_ray`, or `None` for zero-weight cells.
    pub fn source(&self, h: usize, w: usize) -> Option<(usize, f64)> {
        self.sources[h * self.grid.width() + w]
    }
}

pub fn attention_map(f: &FeatureMap) -> ScalarGrid {
    softmax_flat(&channel_abs_mean(f))
}

/// Ray slice of `g`, floored by `eps` and renormalised. Returns the slice and
/// the normaliser.
fn ray_slice(g: &ScalarGrid, p: &RayPartition, ray: usize, eps: f64) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = p.cells(ray).iter().map(|c| g.get(c.h, c.w) + eps).collect();
    let z: f64 = raw.iter().sum();
    (raw.iter().map(|v| v / z).collect(), z)
}

fn check_grid(g: &ScalarGrid, p: &RayPartition, what: &str) -> Result<()> {
    if g.height() != p.height() || g.width() != p.width() {
        return Err(Error::argument(format!(
            "{what}: grid is {}x{}, partition is {}x{}",
            g.height(),
            g.width(),
            p.height(),
            p.width()
        )));
    }
    Ok(())
}

/// `A_i = KL(SL_i ‖ SC_i)` per ray, teacher attention as the reference.
pub fn ray_kl(sc: &ScalarGrid, sl: &ScalarGrid, p: &RayPartition, eps: f64) -> Result<RayWeights> {
    check_grid(sc, p, "ray_kl")?;
    check_grid(sl, p, "ray_kl")?;
    let a = (0..p.n_ray())
        .map(|ray| {
            if p.cells(ray).is_empty() {
                return 0.0;
            }
            let (q, _) = ray_slice(sl, p, ray, eps);
            let (r, _) = ray_slice(sc, p, ray, eps);
            // Σ q ln(q/r) as Σ q (t − ln(1+t)) with t = r/q − 1
            let kl: f64 = q
                .iter()
                .zip(&r)
                .map(|(q, r)| {
                    let t = (r - q) / q;
                    q * (t - t.ln_1p())
                })
                .sum();
            kl.max(0.0)
        })
        .collect();
    Ok(RayWeights { a })
}

/// Broadcast ray weights to cells.
pub fn weight_map(a: &RayWeights, p: &RayPartition, fg: &ForegroundMask, cfg: &RwdConfig) -> Result<WeightMap> {
    cfg.validate()?;
    if a.a.len() != p.n_ray() {
        return Err(Error::argument(format!(
            "weight_map: {} ray weights for {} rays",
            a.a.len(),
            p.n_ray()
        )));
    }
    if fg.height() != p.height() || fg.width() != p.width() {
        return Err(Error::argument("weight_map: mask and partition shapes differ"));
    }
    let (h, w) = (p.height(), p.width());

    // max-weight ray per object, lowest index on ties
    let mut best: std::collections::BTreeMap<u32, usize> = Default::default();
    for (idx, owner) in fg.owners().iter().enumerate() {
        let (Some(id), Some(ray)) = (owner, p.assignment()[idx]) else {
            continue;
        };
        best.entry(*id)
            .and_modify(|r| {
                if a.a[ray] > a.a[*r] || (a.a[ray] == a.a[*r] && ray < *r) {
                    *r = ray;
                }
            })
            .or_insert(ray);
    }

    let mut grid = ScalarGrid::zeros(h, w);
    let mut sources = vec![None; h * w];
    for idx in 0..h * w {
        let Some(ray) = p.assignment()[idx] else {
            continue;
        };
        let src = match fg.owners()[idx] {
            Some(id) => (best[&id], 1.0),
            None => (ray, cfg.s_bg),
        };
        grid.as_mut_slice()[idx] = src.1 * a.a[src.0];
        sources[idx] = Some(src);
    }
    Ok(WeightMap { grid, sources })
}

/// Weighted L1 term for a fixed weight grid.
pub fn rwd_loss_with_weights(student: &FeatureMap, teacher: &FeatureMap, weights: &ScalarGrid) -> Result<LossResult> {
    student.ensure_same_shape(teacher, "rwd_loss")?;
    let shape = student.shape();
    if weights.height() != shape.h || weights.width() != shape.w {
        return Err(Error::argument("rwd_loss: weight grid does not match the feature maps"));
    }
    let cells = shape.cells();
    let scale = 1.0 / (cells as f64 * shape.d as f64);
    let mut terms = Vec::with_capacity(cells);
    let mut grad = FeatureMap::zeros(shape);
    let (c, l) = (student.as_slice(), teacher.as_slice());
    let g = grad.as_mut_slice();
    for (cell, &omega) in weights.as_slice().iter().enumerate() {
        let mut residual = 0.0;
        for d in 0..shape.d {
            let i = d * cells + cell;
            residual += (l[i] - c[i]).abs();
            g[i] = omega * sign0(c[i] - l[i]) * scale;
        }
        terms.push(omega * residual);
    }
    Ok(LossResult {
        value: compensated_sum(terms) * scale,
        grad,
    })
}

/// Full weighted distillation loss: attention, ray weights, weight map and L1 term.
pub fn rwd_loss(
    student: &FeatureMap,
    teacher: &FeatureMap,
    p: &RayPartition,
    fg: &ForegroundMask,
    cfg: &RwdConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    student.ensure_same_shape(teacher, "rwd_loss")?;
    let sc = attention_map(student);
    let sl = attention_map(teacher);
    let a = ray_kl(&sc, &sl, p, cfg.eps)?;
    let omega = weight_map(&a, p, fg, cfg)?;
    let mut out = rwd_loss_with_weights(student, teacher, &omega.grid)?;
    if !cfg.detach_weights {
        weight_backward(student, teacher, &sc, &sl, p, &omega, cfg, &mut out.grad);
    }
    Ok(out)
}

/// Adds the gradient that flows through `ω(SC(C))` into `grad`.
#[allow(clippy::too_many_arguments)]
fn weight_backward(
    student: &FeatureMap,
    teacher: &FeatureMap,
    sc: &ScalarGrid,
    sl: &ScalarGrid,
    p: &RayPartition,
    omega: &WeightMap,
    cfg: &RwdConfig,
    grad: &mut FeatureMap,
) {
    let shape = student.shape();
    let cells = shape.cells();
    let (c, l) = (student.as_slice(), teacher.as_slice());

    let mut g_a = vec![0.0; p.n_ray()];
    for (cell, src) in omega.sources.iter().enumerate() {
        let Some((ray, factor)) = src else { continue };
        let residual: f64 = (0..shape.d).map(|d| (l[d * cells + cell] - c[d * cells + cell]).abs()).sum();
        g_a[*ray] += factor * residual / (cells as f64 * shape.d as f64);
    }

    let mut g_sc = vec![0.0; cells];
    for (ray, &ga) in g_a.iter().enumerate() {
        if ga == 0.0 || p.cells(ray).is_empty() {
            continue;
        }
        let (q, _) = ray_slice(sl, p, ray, cfg.eps);
        let (_, z) = ray_slice(sc, p, ray, cfg.eps);
        for (cell, qc) in p.cells(ray).iter().zip(&q) {
            let s = sc.get(cell.h, cell.w) + cfg.eps;
            g_sc[cell.h * shape.w + cell.w] += ga * (1.0 / z - qc / s);
        }
    }

    let s = sc.as_slice();
    let dot: f64 = g_sc.iter().zip(s).map(|(g, s)| g * s).sum();
    let g = grad.as_mut_slice();
    for cell in 0..cells {
        let gz = s[cell] * (g_sc[cell] - dot);
        for d in 0..shape.d {
            let i = d * cells + cell;
            g[i] += gz * sign0(c[i]) / shape.d as f64;
        }
    }
}
