//! Response distillation, the occupancy surrogate for the detection loss, and
//! the weighted total.

use serde::{Deserialize, Serialize};

use super::{sign0, LossResult};
use crate::error::{Error, Result};
use crate::geometry::ForegroundMask;
use crate::tensor::{FeatureMap, ScalarGrid};

/// Prediction heads of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub heads: Vec<FeatureMap>,
}

/// Loss over several heads with one gradient per student head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLoss {
    pub value: f64,
    pub grads: Vec<FeatureMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_rcd: f64,
    pub w_rwd: f64,
    pub w_src: f64,
    pub w_res: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_rcd: 1.0,
            w_rwd: 1.0,
            w_src: 1.0,
            w_res: 1.0,
        }
    }
}

impl LossWeights {
    /// Detection loss only.
    pub fn src_only() -> Self {
        Self {
            w_rcd: 0.0,
            w_rwd: 0.0,
            w_src: 1.0,
            w_res: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_rcd, self.w_rwd, self.w_src, self.w_res];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::argument("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// The four terms of the total loss, gradients on a common parameterisation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub rcd: LossResult,
    pub rwd: LossResult,
    pub src: LossResult,
    pub res: LossResult,
}

/// `(1/N) Σ_n mean |Y_L,n − Y_C,n|`; gradients are taken w.r.t. the student heads `yc`.
pub fn response_loss(yl: &HeadOutputs, yc: &HeadOutputs) -> Result<HeadLoss> {
    if yl.heads.is_empty() || yl.heads.len() != yc.heads.len() {
        return Err(Error::argument(format!(
            "response_loss: {} teacher heads vs {} student heads",
            yl.heads.len(),
            yc.heads.len()
        )));
    }
    let n = yl.heads.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(yc.heads.len());
    for (l, c) in yl.heads.iter().zip(&yc.heads) {
        c.ensure_same_shape(l, "response_loss")?;
        let count = c.as_slice().len() as f64;
        let sum: f64 = l.as_slice().iter().zip(c.as_slice()).map(|(l, c)| (l - c).abs()).sum();
        value += sum / count / n;
        let data = l
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .map(|(l, c)| sign0(c - l) / (count * n))
            .collect();
        grads.push(FeatureMap::new(c.shape(), data)?);
    }
    Ok(HeadLoss { value, grads })
}

/// Mean binary cross-entropy of occupancy logits against the foreground mask.
/// The gradient is w.r.t. the logits, shaped `[1, H, W]`.
pub fn src_loss(pred: &ScalarGrid, fg: &ForegroundMask) -> Result<LossResult> {
    if pred.height() != fg.height() || pred.width() != fg.width() {
        return Err(Error::argument("src_loss: logits and mask shapes differ"));
    }
    let count = pred.as_slice().len() as f64;
    let y = fg.indicator();
    let mut value = 0.0;
    let mut grad = ScalarGrid::zeros(pred.height(), pred.width());
    for ((x, y), g) in pred.as_slice().iter().zip(&y).zip(grad.as_mut_slice()) {
        // softplus(x) − y·x, stable for large |x|
        value += x.max(0.0) + (-x.abs()).exp().ln_1p() - y * x;
        *g = (sigmoid(*x) - y) / count;
    }
    Ok(LossResult {
        value: value / count,
        grad: grad.to_feature_map(),
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted sum of values and gradients.
pub fn total_loss(parts: &LossParts, lw: &LossWeights) -> Result<LossResult> {
    let terms = [
        (&parts.rcd, lw.w_rcd),
        (&parts.rwd, lw.w_rwd),
        (&parts.src, lw.w_src),
        (&parts.res, lw.w_res),
    ];
    let mut grad = FeatureMap::zeros(parts.rcd.grad.shape());
    let mut value = 0.0;
    for (part, w) in terms {
        grad.ensure_same_shape(&part.grad, "total_loss")?;
        value += w * part.value;
        grad.add_scaled(&part.grad, w);
    }
    Ok(LossResult { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize_objects, ObjectBox};
    use crate::rng::seeded;
    use crate::tensor::Shape;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_map(shape: Shape, seed: u64) -> FeatureMap {
        let mut rng = seeded(seed);
        FeatureMap::new(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn heads(seed: u64) -> HeadOutputs {
        HeadOutputs {
            heads: vec![random_map(Shape::new(2, 4, 4), seed), random_map(Shape::new(1, 4, 4), seed + 1)],
        }
    }

    #[test]
    fn identical_heads_are_zero() {
        let h = heads(1);
        let out = response_loss(&h, &h).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grads.iter().all(|g| g.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn mean_over_heads() {
        let shape = Shape::new(1, 2, 2);
        let yl = HeadOutputs {
            heads: vec![FeatureMap::zeros(shape), FeatureMap::zeros(shape)],
        };
        let yc = HeadOutputs {
            heads: vec![FeatureMap::filled(shape, 0.2), FeatureMap::filled(shape, -0.6)],
        };
        assert!((response_loss(&yl, &yc).unwrap().value - 0.4).abs() < 1e-15);
    }

    #[test]
    fn head_mismatch_is_argument_error() {
        let mut short = heads(2);
        short.heads.pop();
        assert!(matches!(response_loss(&heads(2), &short), Err(Error::Argument(_))));
        let empty = HeadOutputs { heads: vec![] };
        assert!(matches!(response_loss(&empty, &empty), Err(Error::Argument(_))));
    }

    #[test]
    fn response_gradient_matches_finite_differences() {
        let yl = heads(3);
        let mut yc = heads(30);
        let out = response_loss(&yl, &yc).unwrap();
        let step = 1e-5;
        for n in 0..yc.heads.len() {
            for i in 0..yc.heads[n].as_slice().len() {
                let orig = yc.heads[n].as_slice()[i];
                yc.heads[n].as_mut_slice()[i] = orig + step;
                let up = response_loss(&yl, &yc).unwrap().value;
                yc.heads[n].as_mut_slice()[i] = orig - step;
                let down = response_loss(&yl, &yc).unwrap().value;
                yc.heads[n].as_mut_slice()[i] = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = out.grads[n].as_slice()[i];
                assert!((analytic - numeric).abs() / analytic.abs() < 1e-5);
            }
        }
    }

    fn mask() -> ForegroundMask {
        rasterize_objects(&[ObjectBox::new((1.5, 1.5), (1.0, 1.0), 1)], 4, 4).unwrap()
    }

    #[test]
    fn zero_logits_give_ln2() {
        let out = src_loss(&ScalarGrid::zeros(4, 4), &mask()).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_logits_give_zero() {
        let fg = mask();
        let data = fg.indicator().iter().map(|y| if *y > 0.5 { 50.0 } else { -50.0 }).collect();
        let out = src_loss(&ScalarGrid::new(4, 4, data).unwrap(), &fg).unwrap();
        assert!(out.value < 1e-20);
    }

    #[test]
    fn src_gradient_matches_finite_differences() {
        let fg = mask();
        let mut rng = seeded(5);
        let mut x = ScalarGrid::new(4, 4, (0..16).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let out = src_loss(&x, &fg).unwrap();
        let step = 1e-5;
        for i in 0..16 {
            let orig = x.as_slice()[i];
            x.as_mut_slice()[i] = orig + step;
            let up = src_loss(&x, &fg).unwrap().value;
            x.as_mut_slice()[i] = orig - step;
            let down = src_loss(&x, &fg).unwrap().value;
            x.as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = out.grad.as_slice()[i];
            assert!((analytic - numeric).abs() / analytic.abs() < 1e-5);
        }
    }

    fn part(value: f64, shape: Shape, seed: u64) -> LossResult {
        LossResult {
            value,
            grad: random_map(shape, seed),
        }
    }

    fn parts(values: [f64; 4]) -> LossParts {
        let s = Shape::new(2, 3, 3);
        LossParts {
            rcd: part(values[0], s, 1),
            rwd: part(values[1], s, 2),
            src: part(values[2], s, 3),
            res: part(values[3], s, 4),
        }
    }

    #[test]
    fn total_of_zero_parts_is_zero() {
        let z = LossResult::zero(&FeatureMap::zeros(Shape::new(2, 3, 3)));
        let p = LossParts {
            rcd: z.clone(),
            rwd: z.clone(),
            src: z.clone(),
            res: z.clone(),
        };
        assert_eq!(total_loss(&p, &LossWeights::default()).unwrap(), z);
    }

    #[test]
    fn unit_weights_sum_values() {
        let t = total_loss(&parts([1.0, 0.5, 0.7, 0.3]), &LossWeights::default()).unwrap();
        assert!((t.value - 2.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn total_is_homogeneous(v in proptest::array::uniform4(0.0f64..10.0), w in proptest::array::uniform4(0.0f64..3.0)) {
            let lw = LossWeights { w_rcd: w[0], w_rwd: w[1], w_src: w[2], w_res: w[3] };
            let p = parts(v);
            let mut doubled = p.clone();
            for r in [&mut doubled.rcd, &mut doubled.rwd, &mut doubled.src, &mut doubled.res] {
                r.value *= 2.0;
                r.grad = r.grad.scaled(2.0);
            }
            let a = total_loss(&p, &lw).unwrap();
            let b = total_loss(&doubled, &lw).unwrap();
            prop_assert!((b.value - 2.0 * a.value).abs() <= 1e-12 * (1.0 + a.value.abs()));
            prop_assert!(b.grad.max_abs_diff(&a.grad.scaled(2.0)) <= 1e-12);
        }

        #[test]
        fn src_is_nonnegative(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let x = ScalarGrid::new(4, 4, (0..16).map(|_| rng.random_range(-40.0..40.0)).collect()).unwrap();
            prop_assert!(src_loss(&x, &mask()).unwrap().value >= 0.0);
        }
    }
}
