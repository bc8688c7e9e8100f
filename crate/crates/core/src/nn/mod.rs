//! Minimal tensor kernels with hand-written backward passes.
//!
//! Everything operates on one sample at a time; batching is a loop (or a
//! rayon map) in the callers. That keeps samples independent by
//! construction.

pub mod conv;
pub mod norm;
pub mod params;
pub mod scalar;

pub use conv::{Conv3d, Extent};
pub use norm::GroupNorm;
pub use params::{momentum_update, Params, Tensor};
pub use scalar::Scalar;

use crate::error::{Error, Result};

/// Encoder output for one sample, `C×T×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub extent: Extent,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, extent: Extent, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * extent.volume() {
            return Err(Error::ShapeMismatch {
                expected: vec![channels, extent.t, extent.h, extent.w],
                actual: vec![data.len()],
            });
        }
        Ok(Self { channels, extent, data })
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.channels, self.extent.t, self.extent.h, self.extent.w]
    }

    pub fn at(&self, c: usize, t: usize, h: usize, w: usize) -> T {
        let e = self.extent;
        self.data[((c * e.t + t) * e.h + h) * e.w + w]
    }

    /// Mean over channels, `T×H×W`.
    pub fn channel_mean(&self) -> Vec<T> {
        let v = self.extent.volume();
        let cf = T::from_usize(self.channels).unwrap();
        (0..v)
            .map(|i| (0..self.channels).map(|c| self.data[c * v + i]).sum::<T>() / cf)
            .collect()
    }
}

/// Max over the last `inner` elements of each of `outer` rows. Returns the
/// maxima and the flat index of each winner.
fn row_max<T: Scalar>(data: &[T], outer: usize, inner: usize) -> (Vec<T>, Vec<usize>) {
    let mut vals = Vec::with_capacity(outer);
    let mut idx = Vec::with_capacity(outer);
    for r in 0..outer {
        let row = &data[r * inner..(r + 1) * inner];
        let (mut best, mut at) = (row[0], 0);
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                at = i;
            }
        }
        vals.push(best);
        idx.push(r * inner + at);
    }
    (vals, idx)
}

/// Pooled values plus the argmax routing needed to back-propagate.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled<T> {
    pub values: Vec<T>,
    pub argmax: Vec<usize>,
}

impl<T: Scalar> Pooled<T> {
    /// Scatters `dvalues` back onto a zero map of length `len`.
    pub fn backward(&self, dvalues: &[T], len: usize) -> Vec<T> {
        let mut d = vec![T::zero(); len];
        for (&i, &g) in self.argmax.iter().zip(dvalues) {
            d[i] += g;
        }
        d
    }
}

/// Spatial global max pooling, `C×T×H×W → C×T` (row-major `c·T + t`).
pub fn pool_psi<T: Scalar>(f: &FeatureMap<T>) -> Pooled<T> {
    let e = f.extent;
    let (values, argmax) = row_max(&f.data, f.channels * e.t, e.h * e.w);
    Pooled { values, argmax }
}

/// Spatio-temporal global max pooling, `C×T×H×W → C`.
pub fn global_max_pool<T: Scalar>(f: &FeatureMap<T>) -> Pooled<T> {
    let (values, argmax) = row_max(&f.data, f.channels, f.extent.volume());
    Pooled { values, argmax }
}

/// `y = W·x + b` with `W` row-major `out×in`.
pub fn linear_forward<T: Scalar>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| bias + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(&a, &v)| a * v).sum::<T>())
        .collect()
}

/// Accumulates `dW`, `db`; returns `dx`.
pub fn linear_backward<T: Scalar>(w: &[T], x: &[T], dy: &[T], dw: &mut [T], db: &mut [T]) -> Vec<T> {
    let n_in = x.len();
    let mut dx = vec![T::zero(); n_in];
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        for ((dwv, &xv), (dxv, &wv)) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x).zip(dx.iter_mut().zip(row)) {
            *dwv += g * xv;
            *dxv += g * wv;
        }
    }
    dx
}

/// `z = y/‖y‖₂`. Returns `z` and `‖y‖₂`.
pub fn l2_normalize<T: Scalar>(y: &[T]) -> (Vec<T>, T) {
    let norm = y.iter().map(|&v| v * v).sum::<T>().sqrt();
    let tiny = T::from_f64_lossy(1e-12);
    let denom = if norm > tiny { norm } else { tiny };
    (y.iter().map(|&v| v / denom).collect(), denom)
}

/// Backward of [`l2_normalize`]: `dy = (dz − z·(z·dz)) / ‖y‖`.
pub fn l2_normalize_backward<T: Scalar>(z: &[T], norm: T, dz: &[T]) -> Vec<T> {
    let proj = z.iter().zip(dz).map(|(&a, &b)| a * b).sum::<T>();
    z.iter().zip(dz).map(|(&zi, &gi)| (gi - zi * proj) / norm).collect()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
