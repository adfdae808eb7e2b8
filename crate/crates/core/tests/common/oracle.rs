//! Independent reference implementations used by the integration tests.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;

use rand::Rng;
use raydistill::geometry::{partition_rays, rasterize_objects, Cell, ForegroundMask, ObjectBox, RayPartition};
use raydistill::rng::seeded;
use raydistill::sampling::{build_sample_set, SampleSet, SamplerConfig};
use raydistill::tensor::{FeatureMap, Shape};

use super::dd::{sum, Dd};

/// Ray of every cell by direct angle comparison against each sector.
pub fn brute_partition(h: usize, w: usize, origin: (f64, f64), n_ray: usize) -> Vec<Option<usize>> {
    let width = TAU / n_ray as f64;
    let origin_cell = (origin.0.floor() as usize, origin.1.floor() as usize);
    let mut out = vec![None; h * w];
    for row in 0..h {
        for col in 0..w {
            if (row, col) == origin_cell {
                continue;
            }
            let (r, c) = (row as f64 + 0.5, col as f64 + 0.5);
            let mut theta = (origin.0 - r).atan2(c - origin.1);
            if theta < 0.0 {
                theta += TAU;
            }
            if theta >= TAU {
                theta -= TAU;
            }
            let hits: Vec<usize> = (0..n_ray)
                .filter(|&i| i as f64 * width <= theta && (theta < (i + 1) as f64 * width || i + 1 == n_ray))
                .collect();
            assert_eq!(hits.len(), 1, "cell ({row},{col}) at angle {theta}");
            out[row * w + col] = Some(hits[0]);
        }
    }
    out
}

pub struct Tiny {
    pub student: FeatureMap,
    pub teacher: FeatureMap,
    pub partition: RayPartition,
    pub fg: ForegroundMask,
    pub set: SampleSet,
}

/// 3×3 grid seen from its centre: two rays of four cells each, one object cell
/// per ray, `D = 2`, two negatives per ray, no pooling.
pub fn tiny_instance(seed: u64) -> Tiny {
    let mut rng = seeded(seed);
    let shape = Shape::new(2, 3, 3);
    let mut draw = || FeatureMap::new(shape, (0..shape.len()).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let student = draw();
    let teacher = draw();
    let partition = partition_rays(3, 3, (1.5, 1.5), 2).unwrap();
    let fg = rasterize_objects(
        &[ObjectBox::new((0.5, 1.5), (0.5, 0.5), 1), ObjectBox::new((2.5, 1.5), (0.5, 0.5), 2)],
        3,
        3,
    )
    .unwrap();
    let sampler = SamplerConfig {
        n_neg: 2,
        m: 1,
        seed,
        ..SamplerConfig::default()
    };
    let set = build_sample_set(&student, &teacher, &partition, &fg, &sampler).unwrap();
    Tiny {
        student,
        teacher,
        partition,
        fg,
        set,
    }
}

fn vector(f: &FeatureMap, c: Cell) -> Vec<Dd> {
    (0..f.channels()).map(|d| Dd::new(f.get(d, c.h, c.w))).collect()
}

fn dot(a: &[Dd], b: &[Dd]) -> Dd {
    sum(a.iter().zip(b).map(|(x, y)| *x * *y))
}

/// `−ln((L_RCDS + L_RCDT) / N)` with raw dot products, written out term by term.
pub fn rcd_reference(student: &FeatureMap, teacher: &FeatureMap, set: &SampleSet, tau: f64, xi: f64) -> f64 {
    let tau = Dd::new(tau);
    let xi = Dd::new(xi);
    let mut rcds = Dd::ZERO;
    let mut rcdt = Dd::ZERO;
    for e in &set.entries {
        let cj = vector(student, e.positive);
        let lj = vector(teacher, e.positive);
        let mut samples = vec![e.positive];
        samples.extend(e.negatives.iter().copied());
        // student term: teacher positive against student samples
        let num = (dot(&lj, &cj) / tau).exp();
        let den = sum(samples.iter().map(|k| (dot(&lj, &vector(student, *k)) / tau).exp())) + xi;
        rcds = rcds + num / den;
        // teacher term: student positive against teacher samples
        let num = (dot(&cj, &lj) / tau).exp();
        let den = sum(samples.iter().map(|k| (dot(&cj, &vector(teacher, *k)) / tau).exp())) + xi;
        rcdt = rcdt + num / den;
    }
    let n = Dd::new(set.entries.len() as f64);
    (-((rcds + rcdt) / n).ln()).to_f64()
}

fn attention(f: &FeatureMap) -> Vec<Dd> {
    let (h, w, d) = (f.height(), f.width(), f.channels());
    let act: Vec<Dd> = (0..h * w)
        .map(|i| sum((0..d).map(|k| Dd::new(f.as_slice()[k * h * w + i]).abs())) / Dd::new(d as f64))
        .collect();
    let e: Vec<Dd> = act.iter().map(|a| a.exp()).collect();
    let z = sum(e.iter().copied());
    e.into_iter().map(|v| v / z).collect()
}

/// Per-ray KL of renormalised attention slices, teacher as reference.
pub fn ray_kl_reference(student: &FeatureMap, teacher: &FeatureMap, p: &RayPartition, eps: f64) -> Vec<Dd> {
    let w = student.width();
    let sc = attention(student);
    let sl = attention(teacher);
    let eps = Dd::new(eps);
    (0..p.n_ray())
        .map(|ray| {
            let idx: Vec<usize> = p.cells(ray).iter().map(|c| c.h * w + c.w).collect();
            if idx.is_empty() {
                return Dd::ZERO;
            }
            let zq = sum(idx.iter().map(|&i| sl[i] + eps));
            let zr = sum(idx.iter().map(|&i| sc[i] + eps));
            sum(idx.iter().map(|&i| {
                let q = (sl[i] + eps) / zq;
                let r = (sc[i] + eps) / zr;
                q * (q / r).ln()
            }))
        })
        .collect()
}

/// Weighted L1 distillation with ray weights, background scaling and per-object max.
pub fn rwd_reference(
    student: &FeatureMap,
    teacher: &FeatureMap,
    p: &RayPartition,
    fg: &ForegroundMask,
    s_bg: f64,
    eps: f64,
) -> f64 {
    let (h, w, d) = (student.height(), student.width(), student.channels());
    let a = ray_kl_reference(student, teacher, p, eps);
    let mut object_rays: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for row in 0..h {
        for col in 0..w {
            let c = Cell::new(row, col);
            if let (Some(id), Some(ray)) = (fg.owner(c), p.ray_of(c)) {
                object_rays.entry(id).or_default().insert(ray);
            }
        }
    }
    let mut total = Dd::ZERO;
    for row in 0..h {
        for col in 0..w {
            let c = Cell::new(row, col);
            let Some(ray) = p.ray_of(c) else { continue };
            let omega = match fg.owner(c) {
                Some(id) => object_rays[&id]
                    .iter()
                    .map(|r| a[*r])
                    .fold(Dd::ZERO, |m, v| if v > m { v } else { m }),
                None => Dd::new(s_bg) * a[ray],
            };
            let resid = sum((0..d).map(|k| (Dd::new(teacher.get(k, row, col)) - Dd::new(student.get(k, row, col))).abs()));
            total = total + omega * resid / Dd::new(d as f64);
        }
    }
    (total / Dd::new((h * w) as f64)).to_f64()
}
