//! Dense `D×H×W` feature maps and `H×W` scalar grids.
//!
//! Storage is row-major with the channel as the outermost axis, so element
//! `(d, h, w)` lives at `(d * H + h) * W + w`. All arithmetic is `f64`; the
//! on-disk format ([`rtf`]) stores `f32`.

pub mod rtf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use rtf::{load_tensor, save_tensor};

/// Shape of a [`FeatureMap`]: channels, BEV rows, BEV columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(d: usize, h: usize, w: usize) -> Self {
        Self { d, h, w }
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }
}

/// Dense real tensor over the BEV grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: Shape,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.d == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::argument(format!(
                "feature map dimensions must be positive, got {}x{}x{}",
                shape.d, shape.h, shape.w
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::argument(format!(
                "feature map {}x{}x{} needs {} values, got {}",
                shape.d,
                shape.h,
                shape.w,
                shape.len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn filled(shape: Shape, value: f64) -> Self {
        assert!(shape.d > 0 && shape.h > 0 && shape.w > 0, "empty shape");
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.d
    }

    pub fn height(&self) -> usize {
        self.shape.h
    }

    pub fn width(&self) -> usize {
        self.shape.w
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        debug_assert!(d < self.shape.d && h < self.shape.h && w < self.shape.w);
        (d * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn get(&self, d: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(d, h, w)]
    }

    #[inline]
    pub fn set(&mut self, d: usize, h: usize, w: usize, value: f64) {
        let i = self.index(d, h, w);
        self.data[i] = value;
    }

    #[inline]
    pub fn add_at(&mut self, d: usize, h: usize, w: usize, value: f64) {
        let i = self.index(d, h, w);
        self.data[i] += value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Channel vector at cell `(h, w)`.
    pub fn cell_vector(&self, h: usize, w: usize) -> Vec<f64> {
        (0..self.shape.d).map(|d| self.get(d, h, w)).collect()
    }

    /// Contiguous `H×W` slice of channel `d`.
    pub fn channel(&self, d: usize) -> &[f64] {
        let n = self.shape.cells();
        &self.data[d * n..(d + 1) * n]
    }

    pub fn channel_mut(&mut self, d: usize) -> &mut [f64] {
        let n = self.shape.cells();
        &mut self.data[d * n..(d + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// `self += factor * other`.
    ///
    /// # Panics
    /// On shape mismatch.
    pub fn add_scaled(&mut self, other: &FeatureMap, factor: f64) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_scaled");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference.
    ///
    /// # Panics
    /// On shape mismatch.
    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn ensure_same_shape(&self, other: &FeatureMap, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::argument(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// Real-valued `H×W` grid (attention maps, weight maps, occupancy logits).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::argument("scalar grid dimensions must be positive"));
        }
        if data.len() != h * w {
            return Err(Error::argument(format!(
                "scalar grid {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        assert!(h > 0 && w > 0, "empty grid");
        Self {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::filled(h, w, 0.0)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.data[h * self.w + w]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, value: f64) {
        self.data[h * self.w + w] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// View as a single-channel `[1, H, W]` feature map.
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap {
            shape: Shape::new(1, self.h, self.w),
            data: self.data.clone(),
        }
    }

    /// Inverse of [`ScalarGrid::to_feature_map`]; the map must have one channel.
    pub fn from_feature_map(f: &FeatureMap) -> Result<Self> {
        if f.channels() != 1 {
            return Err(Error::argument(format!(
                "expected a single-channel map, got {} channels",
                f.channels()
            )));
        }
        Self::new(f.height(), f.width(), f.as_slice().to_vec())
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Softmax over all `H·W` entries jointly, with max subtraction.
pub fn softmax_flat(g: &ScalarGrid) -> ScalarGrid {
    let max = g.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = g.data.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    ScalarGrid {
        h: g.h,
        w: g.w,
        data: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// Per-cell mean of absolute channel values, `(1/D) Σ_d |f[d,h,w]|`.
pub fn channel_abs_mean(f: &FeatureMap) -> ScalarGrid {
    let Shape { d, h, w } = f.shape;
    let n = h * w;
    let mut out = vec![0.0; n];
    for c in 0..d {
        for (acc, v) in out.iter_mut().zip(f.channel(c)) {
            *acc += v.abs();
        }
    }
    let inv = 1.0 / d as f64;
    for v in &mut out {
        *v *= inv;
    }
    ScalarGrid { h, w, data: out }
}
