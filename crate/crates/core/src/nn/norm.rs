use super::Scalar;

/// Per-sample group normalisation over `C×S` activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub spatial: usize,
}

pub const EPS: f64 = 1e-5;

#[derive(Debug)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize, spatial: usize) -> Self {
        assert!(groups > 0 && channels % groups == 0, "{channels} channels not divisible into {groups} groups");
        Self {
            channels,
            groups,
            spatial,
        }
    }

    fn group_len(&self) -> usize {
        self.channels / self.groups * self.spatial
    }

    pub fn forward<T: Scalar>(&self, x: &[T], gamma: &[T], beta: &[T]) -> (Vec<T>, NormCache<T>) {
        let n = self.group_len();
        let nf = T::from_usize(n).unwrap();
        let eps = T::from_f64_lossy(EPS);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let xs = &x[g * n..(g + 1) * n];
            let mean = xs.iter().copied().sum::<T>() / nf;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let istd = T::one() / (var + eps).sqrt();
            inv_std.push(istd);
            for (o, &v) in xhat[g * n..(g + 1) * n].iter_mut().zip(xs) {
                *o = (v - mean) * istd;
            }
        }
        let mut y = xhat.clone();
        for c in 0..self.channels {
            let (ga, be) = (gamma[c], beta[c]);
            y[c * self.spatial..(c + 1) * self.spatial]
                .iter_mut()
                .for_each(|v| *v = *v * ga + be);
        }
        (y, NormCache { xhat, inv_std })
    }

    /// Accumulates affine gradients, returns the input gradient.
    pub fn backward<T: Scalar>(&self, cache: &NormCache<T>, gamma: &[T], dy: &[T], dgamma: &mut [T], dbeta: &mut [T]) -> Vec<T> {
        let s = self.spatial;
        let mut dxhat = vec![T::zero(); dy.len()];
        for c in 0..self.channels {
            let range = c * s..(c + 1) * s;
            let (mut sg, mut sb) = (T::zero(), T::zero());
            for ((d, &g), &xh) in dxhat[range.clone()].iter_mut().zip(&dy[range.clone()]).zip(&cache.xhat[range]) {
                sg += g * xh;
                sb += g;
                *d = g * gamma[c];
            }
            dgamma[c] += sg;
            dbeta[c] += sb;
        }
        let n = self.group_len();
        let nf = T::from_usize(n).unwrap();
        let mut dx = vec![T::zero(); dy.len()];
        for g in 0..self.groups {
            let r = g * n..(g + 1) * n;
            let dxh = &dxhat[r.clone()];
            let xh = &cache.xhat[r.clone()];
            let sum_d = dxh.iter().copied().sum::<T>();
            let sum_dx = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
            let scale = cache.inv_std[g] / nf;
            for ((o, &d), &xv) in dx[r].iter_mut().zip(dxh).zip(xh) {
                *o = scale * (nf * d - sum_d - xv * sum_dx);
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    #[test]
    fn normalises_each_group() {
        let gn = GroupNorm::new(4, 2, 5);
        let mut rng = rng_from_seed(1);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (y, _) = gn.forward(&x, &[1.0; 4], &[0.0; 4]);
        for g in 0..2 {
            let ys = &y[g * 10..(g + 1) * 10];
            let mean: f64 = ys.iter().sum::<f64>() / 10.0;
            let var: f64 = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let gn = GroupNorm::new(4, 2, 3);
        let mut rng = rng_from_seed(2);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gamma: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |x: &[f64], gamma: &[f64]| -> f64 {
            let (y, _) = gn.forward(x, gamma, &beta);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = gn.forward(&x, &gamma, &beta);
        let (mut dg, mut db) = (vec![0.0; 4], vec![0.0; 4]);
        let dx = gn.backward(&cache, &gamma, &w, &mut dg, &mut db);
        let h = 1e-5;
        for i in 0..12 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&xp, &gamma) - loss(&xm, &gamma)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7, "x[{i}]: {fd} vs {}", dx[i]);
        }
        for c in 0..4 {
            let (mut gp, mut gm) = (gamma.clone(), gamma.clone());
            gp[c] += h;
            gm[c] -= h;
            let fd = (loss(&x, &gp) - loss(&x, &gm)) / (2.0 * h);
            assert!((fd - dg[c]).abs() < 1e-7);
        }
    }
}
