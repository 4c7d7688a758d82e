//! Path functionals and finite-difference estimators of their vertical and
//! horizontal derivatives, plus discrete residuals of the functional and the
//! doubly stochastic Itô formulas.
//!
//! Implementations of [`PathFunctional`] must be re-entrant: the estimators and
//! the verification harnesses call `eval` from several threads at once.

use std::io::Write;

use crate::error::{check_dim, Error, Result};
use crate::path_space::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Regularity {
    /// Continuous (Lipschitz with polynomial weight).
    C0,
    /// Twice vertically differentiable.
    C02,
    /// Horizontally and twice vertically differentiable.
    C12,
}

pub trait PathFunctional: Send + Sync {
    /// Flattened output length (`k`, or `k * d` for matrix output).
    fn output_dim(&self) -> usize;

    fn regularity(&self) -> Regularity {
        Regularity::C0
    }

    fn eval(&self, path: &Path) -> Result<Vec<f64>>;
}

/// A functional backed by a closure.
pub struct FnFunctional<F> {
    dim: usize,
    regularity: Regularity,
    f: F,
}

impl<F> FnFunctional<F>
where
    F: Fn(&Path) -> Vec<f64> + Send + Sync,
{
    pub fn new(dim: usize, regularity: Regularity, f: F) -> Self {
        Self { dim, regularity, f }
    }
}

impl<F> PathFunctional for FnFunctional<F>
where
    F: Fn(&Path) -> Vec<f64> + Send + Sync,
{
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn regularity(&self) -> Regularity {
        self.regularity
    }

    fn eval(&self, path: &Path) -> Result<Vec<f64>> {
        let v = (self.f)(path);
        check_dim(self.dim, v.len(), "functional output")?;
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeEstimate {
    /// Row-major values (`k x d` for `D_x`, `k x d x d` for `D_xx`, `k` for `D_t`).
    pub value: Vec<f64>,
    pub bump_size: f64,
    /// The same estimator at half the bump, when available.
    pub richardson: Option<Vec<f64>>,
    /// `max |estimate(h) - estimate(h/2)|`, zero for analytic derivatives.
    pub est_error: f64,
}

impl DerivativeEstimate {
    pub fn exact(value: Vec<f64>) -> Self {
        Self {
            value,
            bump_size: 0.0,
            richardson: None,
            est_error: 0.0,
        }
    }

    /// Possible non-differentiability: the two bump sizes disagree by more than `tol`.
    pub fn flagged(&self, tol: f64) -> bool {
        self.est_error > tol
    }

    fn from_pair(value: Vec<f64>, half: Option<Vec<f64>>, bump_size: f64) -> Result<Self> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("non-finite derivative estimate".into()));
        }
        let est_error = half
            .as_ref()
            .map(|h| value.iter().zip(h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .unwrap_or(0.0);
        Ok(Self {
            value,
            bump_size,
            richardson: half,
            est_error,
        })
    }
}

/// Default vertical bump `1e-4 (1 + |γ(t)|)`.
pub fn default_bump(path: &Path) -> f64 {
    1e-4 * (1.0 + crate::path_space::euclidean(path.endpoint()))
}

fn eval_finite(f: &dyn PathFunctional, p: &Path) -> Result<Vec<f64>> {
    let v = f.eval(p)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Evaluation(format!(
            "functional is not finite at the path ending at t = {}",
            p.current_time()
        )));
    }
    Ok(v)
}

fn unit(d: usize, i: usize, h: f64) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = h;
    e
}

fn central_gradient(f: &dyn PathFunctional, p: &Path, h: f64) -> Result<Vec<f64>> {
    let d = p.dim();
    let k = f.output_dim();
    let mut out = vec![0.0; k * d];
    for i in 0..d {
        let up = eval_finite(f, &p.vertical_bump(&unit(d, i, h))?)?;
        let down = eval_finite(f, &p.vertical_bump(&unit(d, i, -h))?)?;
        for j in 0..k {
            out[j * d + i] = (up[j] - down[j]) / (2.0 * h);
        }
    }
    Ok(out)
}

fn central_hessian(f: &dyn PathFunctional, p: &Path, h: f64) -> Result<Vec<f64>> {
    let d = p.dim();
    let k = f.output_dim();
    let mut out = vec![0.0; k * d * d];
    let centre = eval_finite(f, p)?;
    let bumped = |x: &[f64]| -> Result<Vec<f64>> { eval_finite(f, &p.vertical_bump(x)?) };
    for a in 0..d {
        let up = bumped(&unit(d, a, h))?;
        let down = bumped(&unit(d, a, -h))?;
        for j in 0..k {
            out[j * d * d + a * d + a] = (up[j] - 2.0 * centre[j] + down[j]) / (h * h);
        }
        for b in a + 1..d {
            let mut x = vec![0.0; d];
            let mut corner = |sa: f64, sb: f64| {
                x[a] = sa * h;
                x[b] = sb * h;
                bumped(&x)
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            for j in 0..k {
                let v = (pp[j] - pm[j] - mp[j] + mm[j]) / (4.0 * h * h);
                out[j * d * d + a * d + b] = v;
                out[j * d * d + b * d + a] = v;
            }
        }
    }
    Ok(out)
}

fn check_bump(h: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!("bump size must be positive, got {h}")));
    }
    Ok(())
}

/// `D_x F(γ_t)` by central differences, `k x d` row-major.
pub fn vertical_derivative(f: &dyn PathFunctional, p: &Path, h: f64) -> Result<DerivativeEstimate> {
    check_bump(h)?;
    let value = central_gradient(f, p, h)?;
    let half = central_gradient(f, p, h / 2.0)?;
    DerivativeEstimate::from_pair(value, Some(half), h)
}

/// `D_xx F(γ_t)`, `k x d x d` row-major and symmetric.
pub fn vertical_hessian(f: &dyn PathFunctional, p: &Path, h: f64) -> Result<DerivativeEstimate> {
    check_bump(h)?;
    let value = central_hessian(f, p, h)?;
    let half = central_hessian(f, p, h / 2.0)?;
    DerivativeEstimate::from_pair(value, Some(half), h)
}

/// `D_t F(γ_t)` by a one-sided quotient along the flat extension.
pub fn horizontal_derivative(f: &dyn PathFunctional, p: &Path, delta: f64) -> Result<DerivativeEstimate> {
    let grid = p.grid();
    let cur = p.current_index();
    if cur == grid.steps() {
        return Err(Error::Boundary(format!(
            "no room for a horizontal derivative at the horizon t = {}",
            p.current_time()
        )));
    }
    let m = (delta / grid.dt()).round();
    if !(m >= 1.0) || (m * grid.dt() - delta).abs() > 1e-9 * grid.dt() {
        return Err(Error::GridAlignment(format!(
            "delta = {delta} is not a positive multiple of the grid step {}",
            grid.dt()
        )));
    }
    let m = m as usize;
    if cur + m > grid.steps() {
        return Err(Error::Boundary(format!(
            "t + delta = {} exceeds the horizon {}",
            p.current_time() + delta,
            grid.horizon()
        )));
    }
    let base = eval_finite(f, p)?;
    let quotient = |steps: usize| -> Result<Vec<f64>> {
        let ext = eval_finite(f, &p.extend_flat_to_index(cur + steps))?;
        let dlt = steps as f64 * grid.dt();
        Ok(ext.iter().zip(&base).map(|(a, b)| (a - b) / dlt).collect())
    };
    let value = quotient(m)?;
    let half = if m % 2 == 0 { Some(quotient(m / 2)?) } else { None };
    DerivativeEstimate::from_pair(value, half, delta)
}

/// A functional that also provides its path derivatives.
pub trait SmoothFunctional: PathFunctional {
    fn d_x(&self, p: &Path) -> Result<DerivativeEstimate>;
    fn d_xx(&self, p: &Path) -> Result<DerivativeEstimate>;
    fn d_t(&self, p: &Path) -> Result<DerivativeEstimate>;
}

/// Finite-difference derivatives for any functional.
pub struct FiniteDifference<F> {
    pub inner: F,
    /// Relative vertical bump; the absolute bump is `rel_bump (1 + |γ(t)|)`.
    pub rel_bump: f64,
    /// Horizontal step in grid steps.
    pub horizontal_steps: usize,
}

impl<F: PathFunctional> FiniteDifference<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            rel_bump: 1e-4,
            horizontal_steps: 1,
        }
    }

    pub fn with_bump(mut self, rel_bump: f64) -> Self {
        self.rel_bump = rel_bump;
        self
    }

    fn bump(&self, p: &Path) -> f64 {
        self.rel_bump * (1.0 + crate::path_space::euclidean(p.endpoint()))
    }
}

impl<F: PathFunctional> PathFunctional for FiniteDifference<F> {
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn regularity(&self) -> Regularity {
        self.inner.regularity()
    }

    fn eval(&self, path: &Path) -> Result<Vec<f64>> {
        self.inner.eval(path)
    }
}

impl<F: PathFunctional> SmoothFunctional for FiniteDifference<F> {
    fn d_x(&self, p: &Path) -> Result<DerivativeEstimate> {
        vertical_derivative(&self.inner, p, self.bump(p))
    }

    fn d_xx(&self, p: &Path) -> Result<DerivativeEstimate> {
        // second differences lose more digits to cancellation, so bump wider
        vertical_hessian(&self.inner, p, 10.0 * self.bump(p))
    }

    fn d_t(&self, p: &Path) -> Result<DerivativeEstimate> {
        horizontal_derivative(&self.inner, p, self.horizontal_steps as f64 * p.dt())
    }
}

type PathFn = dyn Fn(&Path) -> Vec<f64> + Send + Sync;

/// A functional with analytic derivatives provided as closures.
pub struct AnalyticFunctional {
    pub dim: usize,
    pub value: Box<PathFn>,
    pub d_x: Box<PathFn>,
    pub d_xx: Box<PathFn>,
    pub d_t: Box<PathFn>,
}

impl PathFunctional for AnalyticFunctional {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn regularity(&self) -> Regularity {
        Regularity::C12
    }

    fn eval(&self, path: &Path) -> Result<Vec<f64>> {
        Ok((self.value)(path))
    }
}

impl SmoothFunctional for AnalyticFunctional {
    fn d_x(&self, p: &Path) -> Result<DerivativeEstimate> {
        Ok(DerivativeEstimate::exact((self.d_x)(p)))
    }

    fn d_xx(&self, p: &Path) -> Result<DerivativeEstimate> {
        Ok(DerivativeEstimate::exact((self.d_xx)(p)))
    }

    fn d_t(&self, p: &Path) -> Result<DerivativeEstimate> {
        Ok(DerivativeEstimate::exact((self.d_t)(p)))
    }
}

/// Discrete residual of the functional Itô formula along `x_path` from its first
/// grid point to its current time; `qv` holds the `d x d` quadratic covariation
/// increment of each step, row-major. Returns the Euclidean norm over outputs.
pub fn functional_ito_residual(f: &dyn SmoothFunctional, x_path: &Path, qv: &[f64]) -> Result<f64> {
    if f.regularity() != Regularity::C12 {
        return Err(Error::Precondition("functional Itô residual needs a C12 functional".into()));
    }
    let d = x_path.dim();
    let k = f.output_dim();
    let steps = x_path.current_index();
    check_dim(steps * d * d, qv.len(), "quadratic variation increments")?;
    let dt = x_path.dt();
    let start = eval_finite(f, &x_path.restrict_to_index(0))?;
    let end = eval_finite(f, x_path)?;
    let mut resid: Vec<f64> = end.iter().zip(&start).map(|(a, b)| a - b).collect();
    for i in 0..steps {
        let p = x_path.restrict_to_index(i);
        let dt_f = f.d_t(&p)?.value;
        let dx_f = f.d_x(&p)?.value;
        let dxx_f = f.d_xx(&p)?.value;
        let x0 = x_path.value(i);
        let x1 = x_path.value(i + 1);
        let q = &qv[i * d * d..(i + 1) * d * d];
        for j in 0..k {
            let mut r = dt_f[j] * dt;
            for a in 0..d {
                r += dx_f[j * d + a] * (x1[a] - x0[a]);
                for b in 0..d {
                    r += 0.5 * dxx_f[j * d * d + a * d + b] * q[b * d + a];
                }
            }
            resid[j] -= r;
        }
    }
    Ok(crate::path_space::euclidean(&resid))
}

/// A scalar map with gradient and Hessian.
pub struct SmoothMap<'a> {
    pub value: &'a dyn Fn(&[f64]) -> f64,
    pub gradient: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub hessian: &'a dyn Fn(&[f64]) -> Vec<f64>,
}

/// A discrete process `α` with drift `β`, backward-integral coefficient `γ` and
/// forward-integral coefficient `δ`. Entry `i` of `gamma` is the value at the
/// right endpoint `t_{i+1}`; entries of `beta` and `delta` are left-endpoint
/// values. Matrices are row-major.
#[derive(Clone, Debug)]
pub struct DoublyStochasticProcess {
    pub k: usize,
    pub d: usize,
    pub l: usize,
    pub dt: f64,
    pub alpha0: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl DoublyStochasticProcess {
    pub fn steps(&self) -> usize {
        self.dw.len() / self.d.max(1)
    }

    fn validate(&self) -> Result<usize> {
        let n = self.steps();
        check_dim(self.k, self.alpha0.len(), "alpha0")?;
        check_dim(n * self.d, self.dw.len(), "forward increments")?;
        check_dim(n * self.l, self.db.len(), "backward increments")?;
        check_dim(n * self.k, self.beta.len(), "beta")?;
        check_dim(n * self.k * self.l, self.gamma.len(), "gamma")?;
        check_dim(n * self.k * self.d, self.delta.len(), "delta")?;
        Ok(n)
    }

    /// `α` on the grid from the defining identity.
    pub fn alpha_path(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.validate()?;
        let (k, d, l) = (self.k, self.d, self.l);
        let mut out = Vec::with_capacity(n + 1);
        out.push(self.alpha0.clone());
        for i in 0..n {
            let mut next = out[i].clone();
            for j in 0..k {
                next[j] += self.beta[i * k + j] * self.dt;
                for c in 0..l {
                    next[j] += self.gamma[(i * k + j) * l + c] * self.db[i * l + c];
                }
                for c in 0..d {
                    next[j] += self.delta[(i * k + j) * d + c] * self.dw[i * d + c];
                }
            }
            out.push(next);
        }
        Ok(out)
    }
}

/// Discrete residual of the Itô formula with both a forward and a backward
/// integral, for a scalar map of the process.
pub fn backward_ito_residual(phi: &SmoothMap<'_>, proc_: &DoublyStochasticProcess) -> Result<f64> {
    let alpha = proc_.alpha_path()?;
    let (k, d, l, dt) = (proc_.k, proc_.d, proc_.l, proc_.dt);
    let n = alpha.len() - 1;
    let mut r = (phi.value)(&alpha[n]) - (phi.value)(&alpha[0]);
    for i in 0..n {
        let g0 = (phi.gradient)(&alpha[i]);
        let g1 = (phi.gradient)(&alpha[i + 1]);
        let h0 = (phi.hessian)(&alpha[i]);
        let h1 = (phi.hessian)(&alpha[i + 1]);
        check_dim(k, g0.len(), "gradient")?;
        check_dim(k * k, h0.len(), "hessian")?;
        let gam = &proc_.gamma[i * k * l..(i + 1) * k * l];
        let del = &proc_.delta[i * k * d..(i + 1) * k * d];
        for j in 0..k {
            r -= g0[j] * proc_.beta[i * k + j] * dt;
            for c in 0..l {
                r -= g1[j] * gam[j * l + c] * proc_.db[i * l + c];
            }
            for c in 0..d {
                r -= g0[j] * del[j * d + c] * proc_.dw[i * d + c];
            }
        }
        // tr[Φ'' γγᵀ] and tr[Φ'' δδᵀ]
        let mut tr_g = 0.0;
        let mut tr_d = 0.0;
        for a in 0..k {
            for b in 0..k {
                let gg: f64 = (0..l).map(|c| gam[a * l + c] * gam[b * l + c]).sum();
                let dd: f64 = (0..d).map(|c| del[a * d + c] * del[b * d + c]).sum();
                tr_g += h1[a * k + b] * gg;
                tr_d += h0[a * k + b] * dd;
            }
        }
        r += 0.5 * tr_g * dt - 0.5 * tr_d * dt;
    }
    Ok(r)
}

/// Writes `N,rms_residual` rows.
pub fn write_convergence_csv<W: Write>(mut w: W, rows: &[(usize, f64)]) -> Result<()> {
    writeln!(w, "N,rms_residual")?;
    for (n, r) in rows {
        writeln!(w, "{n},{r}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_space::TimeGrid;

    fn scalar_path(vals: &[f64], steps: usize) -> Path {
        Path::scalar(TimeGrid::new(1.0, steps).unwrap(), vals).unwrap()
    }

    fn square() -> impl PathFunctional {
        FnFunctional::new(1, Regularity::C12, |p: &Path| vec![p.endpoint()[0].powi(2)])
    }

    fn left_integral() -> impl PathFunctional {
        FnFunctional::new(1, Regularity::C12, |p: &Path| {
            let dt = p.dt();
            vec![p.iter_values().take(p.len() - 1).map(|v| v[0] * dt).sum()]
        })
    }

    #[test]
    fn vertical_derivative_examples() {
        let p = scalar_path(&[0.0, 1.0, 3.0], 4);
        let d = vertical_derivative(&square(), &p, 1e-4).unwrap();
        assert!((d.value[0] - 6.0).abs() < 1e-7);
        let d = vertical_derivative(&left_integral(), &p, 1e-4).unwrap();
        assert_eq!(d.value[0], 0.0);
        let sup = FnFunctional::new(1, Regularity::C0, |p: &Path| vec![p.sup_norm()]);
        let q = scalar_path(&[0.0, 5.0, 1.0], 4);
        let d = vertical_derivative(&sup, &q, 1e-3).unwrap();
        assert_eq!(d.value[0], 0.0);
        assert!(d.richardson.is_some());
    }

    #[test]
    fn hessian_examples() {
        let p = scalar_path(&[0.0, 1.0, 3.0], 4);
        let h = vertical_hessian(&square(), &p, 1e-3).unwrap();
        assert!((h.value[0] - 2.0).abs() < 1e-6);
        let lin = FnFunctional::new(1, Regularity::C12, |p: &Path| vec![3.0 * p.endpoint()[0] + 1.0]);
        assert!(vertical_hessian(&lin, &p, 1e-3).unwrap().value[0].abs() < 1e-6);
        let g = TimeGrid::new(1.0, 2).unwrap();
        let q = Path::new(g, vec![vec![0.0, 0.0], vec![0.7, -1.3]]).unwrap();
        let prod = FnFunctional::new(1, Regularity::C12, |p: &Path| vec![p.endpoint()[0] * p.endpoint()[1]]);
        let h = vertical_hessian(&prod, &q, 1e-3).unwrap();
        assert!(h.value[0].abs() < 1e-6 && h.value[3].abs() < 1e-6);
        assert!((h.value[1] - 1.0).abs() < 1e-6 && (h.value[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn horizontal_derivative_examples() {
        let p = scalar_path(&[0.0, 1.0, 2.0], 8);
        let tx = FnFunctional::new(1, Regularity::C12, |p: &Path| vec![p.current_time() * p.endpoint()[0]]);
        let d = horizontal_derivative(&tx, &p, 0.25).unwrap();
        assert!((d.value[0] - 2.0).abs() < 1e-12);
        assert!(d.richardson.is_some());
        let d = horizontal_derivative(&left_integral(), &p, 0.125).unwrap();
        assert!((d.value[0] - 2.0).abs() < 1e-12);
        let endpoint = FnFunctional::new(1, Regularity::C12, |p: &Path| vec![p.endpoint()[0]]);
        assert_eq!(horizontal_derivative(&endpoint, &p, 0.125).unwrap().value[0], 0.0);
        assert!(matches!(horizontal_derivative(&endpoint, &p, 0.1), Err(Error::GridAlignment(_))));
        let full = p.extend_flat_to_index(8);
        assert!(matches!(horizontal_derivative(&endpoint, &full, 0.125), Err(Error::Boundary(_))));
        assert!(matches!(horizontal_derivative(&endpoint, &p, 1.0), Err(Error::Boundary(_))));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let bad = FnFunctional::new(1, Regularity::C0, |p: &Path| vec![p.endpoint()[0].ln()]);
        let p = scalar_path(&[0.0], 2);
        assert!(matches!(vertical_derivative(&bad, &p, 1e-3), Err(Error::Evaluation(_))));
    }

    #[test]
    fn kink_is_flagged() {
        let abs = FnFunctional::new(1, Regularity::C0, |p: &Path| vec![p.endpoint()[0].abs()]);
        let p = scalar_path(&[0.0, 3e-5], 2);
        let d = vertical_derivative(&abs, &p, 1e-4).unwrap();
        assert!(d.flagged(1e-3));
        let d = vertical_derivative(&square(), &scalar_path(&[0.0, 1.0], 2), 1e-4).unwrap();
        assert!(!d.flagged(1e-6));
    }

    #[test]
    fn estimators_reduce_to_classical_derivatives() {
        // F(γ_t) = sin(t) exp(γ(t))
        let f = FnFunctional::new(1, Regularity::C12, |p: &Path| {
            vec![p.current_time().sin() * p.endpoint()[0].exp()]
        });
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let p = Path::constant(grid, &[0.4], 0.3).unwrap();
        let (t, x) = (0.3f64, 0.4f64);
        for h in [1e-6, 1e-5, 1e-4, 1e-3] {
            let dx = vertical_derivative(&f, &p, h).unwrap().value[0];
            let dxx = vertical_hessian(&f, &p, h.max(1e-4)).unwrap().value[0];
            assert!((dx - t.sin() * x.exp()).abs() <= 10.0 * h, "h = {h}");
            assert!((dxx - t.sin() * x.exp()).abs() <= 10.0 * h.max(1e-4), "h = {h}");
        }
        for m in [1usize, 2, 4] {
            let delta = m as f64 * grid.dt();
            let dt = horizontal_derivative(&f, &p, delta).unwrap().value[0];
            assert!((dt - t.cos() * x.exp()).abs() <= 10.0 * delta);
        }
    }

    #[test]
    fn richardson_error_ratios() {
        let f = FnFunctional::new(1, Regularity::C12, |p: &Path| vec![p.endpoint()[0].powi(3)]);
        let p = scalar_path(&[0.0, 1.0], 2);
        let e1 = vertical_derivative(&f, &p, 1e-2).unwrap().est_error;
        let e2 = vertical_derivative(&f, &p, 5e-3).unwrap().est_error;
        assert!((e1 / e2 - 4.0).abs() < 0.05, "{}", e1 / e2);
        let g = FnFunctional::new(1, Regularity::C12, |p: &Path| vec![p.current_time().powi(2)]);
        let q = Path::constant(TimeGrid::new(1.0, 64).unwrap(), &[0.0], 0.25).unwrap();
        let e1 = horizontal_derivative(&g, &q, 8.0 / 64.0).unwrap().est_error;
        let e2 = horizontal_derivative(&g, &q, 4.0 / 64.0).unwrap().est_error;
        assert!((e1 / e2 - 2.0).abs() < 1e-6, "{}", e1 / e2);
    }

    #[test]
    fn affine_functional_has_zero_ito_residual() {
        let lin = FiniteDifference::new(FnFunctional::new(1, Regularity::C12, |p: &Path| {
            vec![2.5 * p.endpoint()[0] - 1.0]
        }));
        let p = scalar_path(&[0.3, -0.2, 0.9, 1.4, 0.1], 4);
        let qv = vec![0.25; 4];
        let exact = AnalyticFunctional {
            dim: 1,
            value: Box::new(|p| vec![2.5 * p.endpoint()[0] - 1.0]),
            d_x: Box::new(|_| vec![2.5]),
            d_xx: Box::new(|_| vec![0.0]),
            d_t: Box::new(|_| vec![0.0]),
        };
        assert!(functional_ito_residual(&exact, &p, &qv).unwrap() < 1e-12);
        // finite-difference Hessians of an affine map are zero up to rounding
        assert!(functional_ito_residual(&lin, &p, &qv).unwrap() < 1e-8);
        let c0 = FiniteDifference::new(FnFunctional::new(1, Regularity::C0, |p: &Path| vec![p.endpoint()[0]]));
        assert!(matches!(functional_ito_residual(&c0, &p, &qv), Err(Error::Precondition(_))));
    }

    #[test]
    fn backward_ito_trivial_cases() {
        let id = |x: &[f64]| x[0];
        let one = |_: &[f64]| vec![1.0];
        let zero = |_: &[f64]| vec![0.0];
        let phi = SmoothMap { value: &id, gradient: &one, hessian: &zero };
        let proc_ = DoublyStochasticProcess {
            k: 1,
            d: 1,
            l: 1,
            dt: 0.25,
            alpha0: vec![0.5],
            beta: vec![1.0, 1.0, -2.0, 0.3],
            gamma: vec![0.5, -1.0, 2.0, 0.1],
            delta: vec![1.0, 0.0, 3.0, -0.4],
            dw: vec![0.1, -0.3, 0.2, 0.05],
            db: vec![-0.2, 0.4, 0.1, 0.0],
        };
        assert!(backward_ito_residual(&phi, &proc_).unwrap().abs() < 1e-14);
        let det = DoublyStochasticProcess {
            gamma: vec![0.0; 4],
            delta: vec![0.0; 4],
            beta: vec![2.0; 4],
            ..proc_.clone()
        };
        assert!(backward_ito_residual(&phi, &det).unwrap().abs() < 1e-14);
        let bad = DoublyStochasticProcess { db: vec![0.0; 3], ..proc_ };
        assert!(backward_ito_residual(&phi, &bad).is_err());
    }
}
