//! Gaussian-process regression with a Matérn 5/2 kernel.
//!
//! Targets are standardized before fitting. The lengthscale and the noise
//! variance are picked from a fixed grid by maximizing the log marginal
//! likelihood; the signal variance is fixed at one in standardized units.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

const LENGTHSCALES: [f64; 9] = [0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0];
const NOISES: [f64; 6] = [1e-10, 1e-6, 1e-3, 1e-2, 0.05, 0.2];
const JITTER: f64 = 1e-10;

fn matern52(r: f64, lengthscale: f64) -> f64 {
    let s = 5f64.sqrt() * r / lengthscale;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct GaussianProcess {
    xs: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    y_mean: f64,
    y_std: f64,
    pub lengthscale: f64,
    pub noise: f64,
    pub log_likelihood: f64,
}

impl GaussianProcess {
    /// Fits the model; None when `xs` is empty or every fit is singular.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Option<Self> {
        assert_eq!(xs.len(), ys.len());
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(n, ys.iter().map(|v| (v - y_mean) / y_std));
        let dists = DMatrix::from_fn(n, n, |i, j| dist(&xs[i], &xs[j]));

        let mut best: Option<Self> = None;
        for &l in &LENGTHSCALES {
            for &noise in &NOISES {
                let k = DMatrix::from_fn(n, n, |i, j| {
                    matern52(dists[(i, j)], l) + if i == j { noise + JITTER } else { 0.0 }
                });
                let Some(chol) = k.cholesky() else { continue };
                let alpha = chol.solve(&y);
                let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
                let ll = -0.5 * y.dot(&alpha)
                    - 0.5 * log_det
                    - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
                if best.as_ref().is_none_or(|b| ll > b.log_likelihood) {
                    best = Some(Self {
                        xs: xs.to_vec(),
                        alpha,
                        chol,
                        y_mean,
                        y_std,
                        lengthscale: l,
                        noise,
                        log_likelihood: ll,
                    });
                }
            }
        }
        best
    }

    /// Predictive mean and variance of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.xs.len(),
            self.xs
                .iter()
                .map(|xi| matern52(dist(xi, x), self.lengthscale)),
        );
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&k)
            .expect("triangular factor");
        let var = (1.0 - v.dot(&v)).max(1e-12);
        (
            self.y_mean + self.y_std * mean,
            var * self.y_std * self.y_std,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_noise_free_linear_data() {
        let xs: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![i as f64 / 7.0, ((i * 3) % 8) as f64 / 7.0])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] - x[1] + 0.5).collect();
        let gp = GaussianProcess::fit(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((gp.predict(x).0 - y).abs() < 1e-6);
        }
    }

    #[test]
    fn variance_grows_away_from_data() {
        let xs = vec![vec![0.0], vec![0.1], vec![0.2]];
        let ys = vec![1.0, 1.2, 0.9];
        let gp = GaussianProcess::fit(&xs, &ys).unwrap();
        assert!(gp.predict(&[0.9]).1 > gp.predict(&[0.1]).1);
    }

    #[test]
    fn constant_targets_fit() {
        let xs = vec![vec![0.0], vec![1.0]];
        let gp = GaussianProcess::fit(&xs, &[3.0, 3.0]).unwrap();
        assert!((gp.predict(&[0.5]).0 - 3.0).abs() < 1e-9);
    }
}
