use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Pearson correlation with a two-tailed p-value from the t distribution
/// with `n − 2` degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.len()],
            actual: vec![y.len()],
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("correlation needs at least 3 points, got {n}")));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance: correlation undefined".into()));
    }
    let rho = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (dof / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Pearson { rho, p_value, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_line() {
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let p = pearson(&x, &y).unwrap();
        assert!((p.rho - 1.0).abs() < 1e-12);
        assert_eq!(p.p_value, 0.0);
    }

    #[test]
    fn zero_variance_is_an_error() {
        assert!(matches!(pearson(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn p_value_reference() {
        // n = 10, r = 0.5 → t = 1.633, two-tailed p = 0.1411 (standard t tables).
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let mut y = [0.0; 10];
        // Construct y with correlation exactly 0.5 against x via y = 0.5·zx + √0.75·e, e ⟂ x.
        let mx = 5.5;
        let sx = x.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>().sqrt();
        let e = [1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 1.0];
        let se = e.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        assert!(e.iter().zip(&x).map(|(a, b)| a * (b - mx)).sum::<f64>().abs() < 1e-12);
        for i in 0..10 {
            y[i] = 0.5 * (x[i] - mx) / sx + 0.75f64.sqrt() * e[i] / se;
        }
        let p = pearson(&x, &y).unwrap();
        assert!((p.rho - 0.5).abs() < 1e-12);
        assert!((p.p_value - 0.1411).abs() < 5e-4, "{}", p.p_value);
    }
}
