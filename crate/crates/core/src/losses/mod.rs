//! Distillation losses with hand-derived gradients.
//!
//! Every loss returns a [`LossResult`]: the scalar value and the gradient with
//! respect to the student-side tensor it was given. Teacher inputs are frozen
//! and receive no gradient.

pub mod aux;
pub mod rcd;
pub mod rwd;

use crate::tensor::FeatureMap;

pub use aux::{response_loss, src_loss, total_loss, HeadLoss, HeadOutputs, LossParts, LossWeights};
pub use rcd::{rcd_loss, rcd_student_term, rcd_teacher_term, RayCount, RcdConfig, RcdForm, RcdLoss};
pub use rwd::{
    attention_map, ray_kl, rwd_loss, rwd_loss_with_weights, weight_map, RayWeights, RwdConfig,
    WeightMap,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// Gradient of `value` with respect to the student tensor, same shape.
    pub grad: FeatureMap,
}

impl LossResult {
    pub fn zero(like: &FeatureMap) -> Self {
        Self {
            value: 0.0,
            grad: FeatureMap::zeros(like.shape()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.is_finite()
    }
}

/// `+1`, `-1` or `0` (the subgradient chosen at the kink of `|x|`).
#[inline]
pub(crate) fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
