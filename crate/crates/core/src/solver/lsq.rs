//! Least-squares projection with standardised columns and a deterministic,
//! chunked (worker-count independent) reduction order.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

const CHUNK: usize = 512;

fn chunked_sum<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let parts: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            for r in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(r, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

pub(crate) struct LeastSquares<'a> {
    raw: &'a [f64],
    n: usize,
    p: usize,
    keep: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    pub(crate) ridge: bool,
}

impl<'a> LeastSquares<'a> {
    /// `raw` is `n x p` row-major with the intercept in column 0.
    pub(crate) fn fit(raw: &'a [f64], n: usize, p: usize) -> Self {
        debug_assert_eq!(raw.len(), n * p);
        let sums = chunked_sum(n, p, |r, acc| {
            for (a, v) in acc.iter_mut().zip(&raw[r * p..(r + 1) * p]) {
                *a += v;
            }
        });
        let mean0: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
        let sq = chunked_sum(n, p, |r, acc| {
            for j in 0..p {
                acc[j] += (raw[r * p + j] - mean0[j]).powi(2);
            }
        });
        let mut keep = vec![0];
        let mut mean = vec![0.0];
        let mut scale = vec![1.0];
        for j in 1..p {
            let sd = (sq[j] / n as f64).sqrt();
            if sd > 1e-12 * (1.0 + mean0[j].abs()) {
                keep.push(j);
                mean.push(mean0[j]);
                scale.push(sd);
            }
        }
        let q = keep.len();
        let gram = {
            let row = |r: usize, out: &mut [f64]| {
                out[0] = 1.0;
                for c in 1..q {
                    out[c] = (raw[r * p + keep[c]] - mean[c]) / scale[c];
                }
            };
            let g = chunked_sum(n, q * q, |r, acc| {
                let mut phi = vec![0.0; q];
                row(r, &mut phi);
                for a in 0..q {
                    for b in a..q {
                        acc[a * q + b] += phi[a] * phi[b];
                    }
                }
            });
            DMatrix::from_fn(q, q, |a, b| if a <= b { g[a * q + b] } else { g[b * q + a] })
        };
        let well_conditioned = |c: &Cholesky<f64, Dyn>| {
            let l = c.l_dirty();
            let diag: Vec<f64> = (0..q).map(|i| l[(i, i)].powi(2)).collect();
            let max = diag.iter().cloned().fold(0.0, f64::max);
            let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            min > 1e-13 * max
        };
        if let Some(c) = Cholesky::new(gram.clone()).filter(well_conditioned) {
            return LeastSquares { raw, n, p, keep, mean, scale, chol: c, ridge: false };
        }
        let mut lambda = 1e-8 * gram.trace() / n as f64;
        loop {
            let mut g = gram.clone();
            for i in 0..q {
                g[(i, i)] += lambda;
            }
            if let Some(c) = Cholesky::new(g) {
                warn!("rank-deficient regression ({q} features, {n} scenarios): ridge lambda = {lambda:e}");
                return LeastSquares { raw, n, p, keep, mean, scale, chol: c, ridge: true };
            }
            lambda = (lambda * 100.0).max(1e-300);
        }
    }

    fn phi(&self, r: usize, out: &mut [f64]) {
        out[0] = 1.0;
        for c in 1..self.keep.len() {
            out[c] = (self.raw[r * self.p + self.keep[c]] - self.mean[c]) / self.scale[c];
        }
    }

    #[cfg(test)]
    pub(crate) fn kept(&self) -> usize {
        self.keep.len()
    }

    /// Projects `m` target columns (`n x m` row-major); returns the fitted
    /// values and the residual variance of each column.
    pub(crate) fn project(&self, targets: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
        let q = self.keep.len();
        let rhs = chunked_sum(self.n, q * m, |r, acc| {
            let mut phi = vec![0.0; q];
            self.phi(r, &mut phi);
            for a in 0..q {
                for t in 0..m {
                    acc[a * m + t] += phi[a] * targets[r * m + t];
                }
            }
        });
        let coef: Vec<DVector<f64>> =
            (0..m).map(|t| self.chol.solve(&DVector::from_fn(q, |a, _| rhs[a * m + t]))).collect();
        // a constant column is its own projection; keep it bit-exact
        let constant: Vec<Option<f64>> = (0..m)
            .map(|t| {
                let v = targets[t];
                (0..self.n).all(|r| targets[r * m + t].to_bits() == v.to_bits()).then_some(v)
            })
            .collect();
        let mut fitted = vec![0.0; self.n * m];
        fitted.par_chunks_mut(m).enumerate().for_each(|(r, out)| {
            let mut phi = vec![0.0; q];
            self.phi(r, &mut phi);
            for (t, o) in out.iter_mut().enumerate() {
                *o = match constant[t] {
                    Some(v) => v,
                    None => phi.iter().zip(coef[t].iter()).map(|(a, b)| a * b).sum(),
                };
            }
        });
        let rss = chunked_sum(self.n, m, |r, acc| {
            for t in 0..m {
                acc[t] += (targets[r * m + t] - fitted[r * m + t]).powi(2);
            }
        });
        let dof = (self.n.saturating_sub(q)).max(1) as f64;
        (fitted, rss.into_iter().map(|s| s / dof).collect())
    }

    /// `φ_rᵀ (AᵀA)⁻¹ φ_r` for every row.
    pub(crate) fn leverages(&self) -> Vec<f64> {
        let q = self.keep.len();
        (0..self.n)
            .into_par_iter()
            .map(|r| {
                let mut phi = vec![0.0; q];
                self.phi(r, &mut phi);
                let v = DVector::from_vec(phi);
                v.dot(&self.chol.solve(&v))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_linear_relation() {
        let n = 2000;
        let raw: Vec<f64> = (0..n).flat_map(|i| { let x = (i as f64 * 0.37).sin(); [1.0, x, x * x] }).collect();
        let targets: Vec<f64> = (0..n).map(|i| { let x = raw[i * 3 + 1]; 2.0 - x + 0.5 * x * x }).collect();
        let ls = LeastSquares::fit(&raw, n, 3);
        assert!(!ls.ridge);
        let (fit, var) = ls.project(&targets, 1);
        assert!(fit.iter().zip(&targets).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(var[0] < 1e-20);
        let lev: f64 = ls.leverages().iter().sum();
        assert!((lev - 3.0).abs() < 1e-8, "trace of hat matrix {lev}");
    }

    #[test]
    fn constant_columns_are_dropped_and_collinear_ones_ridged() {
        let n = 600;
        let raw: Vec<f64> = (0..n).flat_map(|i| { let x = i as f64 / n as f64; [1.0, 7.0, x, 2.0 * x] }).collect();
        let ls = LeastSquares::fit(&raw, n, 4);
        assert_eq!(ls.kept(), 3);
        assert!(ls.ridge);
        let targets: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
        let (fit, _) = ls.project(&targets, 1);
        assert!(fit.iter().zip(&targets).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}
