//! Per-cell affine student with a linear occupancy head.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{FeatureMap, ScalarGrid, Shape};

/// `S[:, c] = W · X[:, c] + b` and `z[c] = occ_w · S[:, c]` for every cell `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major `d_out × d_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub occ_w: Vec<f64>,
}

/// Gradients of a scalar loss with respect to every parameter of [`StudentModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub occ_w: Vec<f64>,
}

impl ModelGrad {
    pub fn flat(&self) -> Vec<f64> {
        [self.w.as_slice(), &self.b, &self.occ_w].concat()
    }
}

impl StudentModel {
    /// Identity channel map, zero bias, zero occupancy head.
    pub fn identity(d: usize) -> Self {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Self {
            d_in: d,
            d_out: d,
            w,
            b: vec![0.0; d],
            occ_w: vec![0.0; d],
        }
    }

    /// Identity plus `N(0, 0.1²)` perturbations on `W` and `occ_w`, zero bias.
    pub fn init(d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::argument("model channel counts must be positive"));
        }
        let mut rng = seeded(seed);
        let mut draw = || 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        let mut w = vec![0.0; d_out * d_in];
        for o in 0..d_out {
            for i in 0..d_in {
                w[o * d_in + i] = if o == i { 1.0 } else { 0.0 } + draw();
            }
        }
        let occ_w = (0..d_out).map(|_| draw()).collect();
        Ok(Self {
            d_in,
            d_out,
            w,
            b: vec![0.0; d_out],
            occ_w,
        })
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len() + self.occ_w.len()
    }

    /// Parameters in the order `W, b, occ_w`.
    pub fn params(&self) -> Vec<f64> {
        [self.w.as_slice(), &self.b, &self.occ_w].concat()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::argument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let (w, rest) = flat.split_at(self.w.len());
        let (b, occ) = rest.split_at(self.b.len());
        self.w.copy_from_slice(w);
        self.b.copy_from_slice(b);
        self.occ_w.copy_from_slice(occ);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    fn check_input(&self, input: &FeatureMap) -> Result<()> {
        if input.channels() != self.d_in {
            return Err(Error::argument(format!(
                "model expects {} input channels, got {}",
                self.d_in,
                input.channels()
            )));
        }
        Ok(())
    }
}

/// Student features and occupancy logits for `input`.
pub fn forward(model: &StudentModel, input: &FeatureMap) -> Result<(FeatureMap, ScalarGrid)> {
    model.check_input(input)?;
    let (h, w) = (input.height(), input.width());
    let cells = h * w;
    let mut out = FeatureMap::zeros(Shape::new(model.d_out, h, w));
    for o in 0..model.d_out {
        let row = &model.w[o * model.d_in..(o + 1) * model.d_in];
        let dst = out.channel_mut(o);
        dst.fill(model.b[o]);
        for (i, &wi) in row.iter().enumerate() {
            for (d, x) in dst.iter_mut().zip(input.channel(i)) {
                *d += wi * x;
            }
        }
    }
    let mut occ = ScalarGrid::zeros(h, w);
    for (o, &k) in model.occ_w.iter().enumerate() {
        for (z, s) in occ.as_mut_slice().iter_mut().zip(out.channel(o)) {
            *z += k * s;
        }
    }
    debug_assert_eq!(occ.as_slice().len(), cells);
    Ok((out, occ))
}

/// Backpropagates `grad_student` (w.r.t. the features) and `grad_occ` (w.r.t.
/// the occupancy logits) to the parameters.
pub fn backward(
    model: &StudentModel,
    input: &FeatureMap,
    student: &FeatureMap,
    grad_student: &FeatureMap,
    grad_occ: &ScalarGrid,
) -> Result<ModelGrad> {
    model.check_input(input)?;
    grad_student.ensure_same_shape(student, "backward")?;
    if grad_occ.height() != student.height() || grad_occ.width() != student.width() {
        return Err(Error::argument("backward: occupancy gradient shape differs"));
    }
    let mut gs = grad_student.clone();
    let mut occ_w = vec![0.0; model.d_out];
    for o in 0..model.d_out {
        let k = model.occ_w[o];
        let mut acc = 0.0;
        for ((g, s), gz) in gs.channel_mut(o).iter_mut().zip(student.channel(o)).zip(grad_occ.as_slice()) {
            acc += gz * s;
            *g += k * gz;
        }
        occ_w[o] = acc;
    }
    let mut w = vec![0.0; model.d_out * model.d_in];
    let mut b = vec![0.0; model.d_out];
    for o in 0..model.d_out {
        let g = gs.channel(o);
        b[o] = g.iter().sum();
        for i in 0..model.d_in {
            w[o * model.d_in + i] = g.iter().zip(input.channel(i)).map(|(g, x)| g * x).sum();
        }
    }
    Ok(ModelGrad { w, b, occ_w })
}
