//! Minimal dense-network numerical core.
//!
//! Everything is expressed over [`Real`], implemented for `f32` (training) and
//! `f64` (gradient checks). Forward passes are recorded on a [`Tape`] and
//! differentiated in reverse; parameters live in a [`ParamStore`] that also
//! carries the Adam moment buffers.

mod checkpoint;
mod layer;
mod params;
mod rng;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{Array2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;

pub use checkpoint::{
    read_param_file, write_param_file, ParamFileHeader, ParamShape, PARAM_FILE_VERSION,
};
pub use layer::{dense_forward, glorot_limit, DenseLayer};
pub use params::{AdamConfig, Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Floating point element type used by tensors.
pub trait Real:
    Float
    + LinalgScalar
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

pub fn relu<T: Real>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn tanh<T: Real>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| v.tanh())
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Standard-normal draws of the given shape.
pub fn gauss_sample<T: Real>(rng: &mut Rng, rows: usize, cols: usize) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| T::lit(rng.normal()))
}

/// `mu + sigma * eps`, elementwise.
pub fn reparameterize<T: Real>(
    mu: &Array2<T>,
    sigma: &Array2<T>,
    eps: &Array2<T>,
) -> Result<Array2<T>> {
    if mu.dim() != sigma.dim() || mu.dim() != eps.dim() {
        return Err(Error::shape(format!(
            "reparameterize: mu {:?}, sigma {:?}, eps {:?}",
            mu.dim(),
            sigma.dim(),
            eps.dim()
        )));
    }
    Ok(mu + &(sigma * eps))
}

/// Mean over coordinates of the per-column population variance of `table`.
///
/// This is the total coordinate-wise variance of an embedding table, divided
/// by its width.
pub fn column_variance_mean<T: Real>(table: &Array2<T>) -> T {
    let (rows, cols) = table.dim();
    if rows == 0 || cols == 0 {
        return T::zero();
    }
    let n = T::lit(rows as f64);
    let mut acc = T::zero();
    for col in table.axis_iter(Axis(1)) {
        let mean = col.iter().copied().sum::<T>() / n;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        acc += var;
    }
    acc / T::lit(cols as f64)
}
