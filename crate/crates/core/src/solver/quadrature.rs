//! Gauss-Hermite rules for the standard normal law.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights with `Σ w_j p(x_j) = E[p(ξ)]`, `ξ ~ N(0, 1)`, exact for
/// polynomials of degree `< 2n` (Golub-Welsch on the probabilists' Jacobi matrix).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        j[(i - 1, i)] = b;
        j[(i, i - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrise away rounding so odd moments vanish exactly
    for i in 0..n / 2 {
        let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
        let w = 0.5 * (pairs[n - 1 - i].1 + pairs[i].1);
        pairs[i] = (-x, w);
        pairs[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Tensor-product rule in `dim` dimensions: node-major `points` (`m x dim`)
/// and `m = n^dim` weights.
pub fn tensor_rule(n: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite(n);
    let m = n.pow(dim as u32);
    let mut points = Vec::with_capacity(m * dim);
    let mut weights = Vec::with_capacity(m);
    for idx in 0..m {
        let mut rest = idx;
        let mut weight = 1.0;
        for _ in 0..dim {
            let j = rest % n;
            rest /= n;
            points.push(x[j]);
            weight *= w[j];
        }
        weights.push(weight);
    }
    (points, weights)
}
