//! 3×3×3 convolution with zero padding 1, via im2col and GEMM.

use super::scalar::{gemm, MatRef};
use super::Scalar;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL * KERNEL;

/// Spatio-temporal extent `(t, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Extent {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Extent {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }

    pub fn volume(&self) -> usize {
        self.t * self.h * self.w
    }

    /// Output extent under padding 1, kernel 3.
    pub fn strided(&self, stride: Extent) -> Extent {
        let f = |n: usize, s: usize| (n - 1) / s + 1;
        Extent::new(f(self.t, stride.t), f(self.h, stride.h), f(self.w, stride.w))
    }
}

/// Output indices `o` in `[lo, hi)` whose tap `o·stride + k − 1` lands
/// inside `[0, n_in)`.
fn valid_range(n_out: usize, n_in: usize, stride: usize, k: usize) -> (usize, usize) {
    // o·s + k − 1 ≥ 0  ⇔  o ≥ ceil((1 − k)/s)
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    // o·s + k − 1 ≤ n_in − 1  ⇔  o ≤ (n_in − k)/s
    let hi = if n_in + 1 > k { ((n_in - k) / stride + 1).min(n_out) } else { 0 };
    (lo.min(hi), hi)
}

fn valid_iter(n_out: usize, n_in: usize, stride: usize, k: usize) -> std::ops::Range<usize> {
    let (lo, hi) = valid_range(n_out, n_in, stride, k);
    lo..hi
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: Extent,
    pub input: Extent,
    pub output: Extent,
}

impl Conv3d {
    pub fn new(in_channels: usize, out_channels: usize, input: Extent, stride: Extent) -> Self {
        Self {
            in_channels,
            out_channels,
            stride,
            input,
            output: input.strided(stride),
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, KERNEL, KERNEL, KERNEL]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * TAPS
    }

    /// `cols[r, p]` with `r = ci·27 + tap`, `p` the output position.
    pub fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let (inp, out) = (self.input, self.output);
        let p_len = out.volume();
        let mut cols = vec![T::zero(); self.fan_in() * p_len];
        let sw = self.stride.w;
        for ci in 0..self.in_channels {
            let xc = &x[ci * inp.volume()..(ci + 1) * inp.volume()];
            for kt in 0..KERNEL {
                for kh in 0..KERNEL {
                    for kw in 0..KERNEL {
                        let r = ci * TAPS + (kt * KERNEL + kh) * KERNEL + kw;
                        let row = &mut cols[r * p_len..(r + 1) * p_len];
                        let (ow_lo, ow_hi) = valid_range(out.w, inp.w, sw, kw);
                        for ot in valid_iter(out.t, inp.t, self.stride.t, kt) {
                            let it = ot * self.stride.t + kt - 1;
                            for oh in valid_iter(out.h, inp.h, self.stride.h, kh) {
                                let ih = oh * self.stride.h + kh - 1;
                                let src = (it * inp.h + ih) * inp.w;
                                let dst = (ot * out.h + oh) * out.w;
                                let base = src + ow_lo * sw + kw - 1;
                                let drow = &mut row[dst + ow_lo..dst + ow_hi];
                                if sw == 1 {
                                    drow.copy_from_slice(&xc[base..base + drow.len()]);
                                } else {
                                    for (j, d) in drow.iter_mut().enumerate() {
                                        *d = xc[base + j * sw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-add of column gradients back onto the input.
    fn col2im<T: Scalar>(&self, dcols: &[T]) -> Vec<T> {
        let (inp, out) = (self.input, self.output);
        let p_len = out.volume();
        let sw = self.stride.w;
        let mut dx = vec![T::zero(); self.in_channels * inp.volume()];
        for ci in 0..self.in_channels {
            let dxc = &mut dx[ci * inp.volume()..(ci + 1) * inp.volume()];
            for kt in 0..KERNEL {
                for kh in 0..KERNEL {
                    for kw in 0..KERNEL {
                        let r = ci * TAPS + (kt * KERNEL + kh) * KERNEL + kw;
                        let row = &dcols[r * p_len..(r + 1) * p_len];
                        let (ow_lo, ow_hi) = valid_range(out.w, inp.w, sw, kw);
                        for ot in valid_iter(out.t, inp.t, self.stride.t, kt) {
                            let it = ot * self.stride.t + kt - 1;
                            for oh in valid_iter(out.h, inp.h, self.stride.h, kh) {
                                let ih = oh * self.stride.h + kh - 1;
                                let dst = (it * inp.h + ih) * inp.w;
                                let src = (ot * out.h + oh) * out.w;
                                let base = dst + ow_lo * sw + kw - 1;
                                for (j, &g) in row[src + ow_lo..src + ow_hi].iter().enumerate() {
                                    dxc[base + j * sw] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns `(output, cols)`; `cols` is kept for the backward pass.
    pub fn forward<T: Scalar>(&self, weight: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
        debug_assert_eq!(x.len(), self.in_channels * self.input.volume());
        let cols = self.im2col(x);
        let p_len = self.output.volume();
        let k = self.fan_in();
        let mut y = vec![T::zero(); self.out_channels * p_len];
        gemm(
            T::one(),
            MatRef::new(weight, self.out_channels, k),
            MatRef::new(&cols, k, p_len),
            T::zero(),
            &mut y,
        );
        (y, cols)
    }

    /// Accumulates the weight gradient into `dweight`; returns the input
    /// gradient when `need_input_grad`.
    pub fn backward<T: Scalar>(&self, weight: &[T], cols: &[T], dy: &[T], dweight: &mut [T], need_input_grad: bool) -> Option<Vec<T>> {
        let p_len = self.output.volume();
        let k = self.fan_in();
        let dy_m = MatRef::new(dy, self.out_channels, p_len);
        gemm(T::one(), dy_m, MatRef::new(cols, k, p_len).t(), T::one(), dweight);
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![T::zero(); k * p_len];
        gemm(
            T::one(),
            MatRef::new(weight, self.out_channels, k).t(),
            dy_m,
            T::zero(),
            &mut dcols,
        );
        Some(self.col2im(&dcols))
    }
}
