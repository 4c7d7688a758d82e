use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::Model;
use crate::error::{Error, Result};
use crate::path_space::{euclidean, Path, TimeGrid};
use crate::rng::Uniforms;

#[derive(Clone, Debug, Serialize)]
pub struct ValidationItem {
    pub name: &'static str,
    pub passed: bool,
    pub probes: usize,
    /// Worst normalised excess (`lhs / rhs`) over all probes.
    pub worst_ratio: f64,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn item(&self, name: &str) -> Option<&ValidationItem> {
        self.items.iter().find(|i| i.name == name)
    }

    pub fn failures(&self) -> Vec<&ValidationItem> {
        self.items.iter().filter(|i| !i.passed).collect()
    }
}

const REL_TOL: f64 = 1e-12;

struct Tracker {
    item: ValidationItem,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            item: ValidationItem {
                name,
                passed: true,
                probes: 0,
                worst_ratio: 0.0,
                witness: None,
            },
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64, witness: impl FnOnce() -> String) {
        self.item.probes += 1;
        let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
        let ok = lhs.is_finite() && lhs <= rhs * (1.0 + REL_TOL) + REL_TOL;
        if ratio > self.item.worst_ratio || !lhs.is_finite() {
            self.item.worst_ratio = if lhs.is_finite() { ratio } else { f64::INFINITY };
        }
        if !ok && self.item.passed {
            self.item.passed = false;
            self.item.witness = Some(witness());
        }
    }
}

/// Log-uniform magnitude with a random sign.
fn signed_log_uniform(u: &mut Uniforms, lo: f64, hi: f64) -> f64 {
    let mag = (lo.ln() + (hi.ln() - lo.ln()) * u.next()).exp();
    if u.next() < 0.5 {
        -mag
    } else {
        mag
    }
}

fn random_vec(u: &mut Uniforms, n: usize) -> Vec<f64> {
    (0..n).map(|_| signed_log_uniform(u, 1e-6, 10.0)).collect()
}

fn random_path(u: &mut Uniforms, grid: TimeGrid, d: usize, len: usize) -> Path {
    let scale = (u.range(-2.0, 1.0) * std::f64::consts::LN_10).exp();
    let mut flat = Vec::with_capacity(len * d);
    let start: Vec<f64> = (0..d).map(|_| scale * u.normal()).collect();
    flat.extend_from_slice(&start);
    for i in 1..len {
        for c in 0..d {
            let prev = flat[(i - 1) * d + c];
            flat.push(prev + scale * u.normal() * grid.dt().sqrt());
        }
    }
    Path::from_flat(grid, d, flat).expect("probe path")
}

fn perturb(u: &mut Uniforms, p: &Path) -> Path {
    let eps = signed_log_uniform(u, 1e-6, 1.0).abs();
    let flat: Vec<f64> = p.values().iter().map(|v| v + eps * u.normal()).collect();
    Path::from_flat(p.grid(), p.dim(), flat).expect("perturbed path")
}

fn sup_diff(a: &Path, b: &Path) -> f64 {
    a.dist(b).map(|d| d.sup_component).unwrap_or(f64::INFINITY)
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn min_eigenvalue(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Sampled falsification probes of the Lipschitz, growth and contraction
/// assumptions on a grid. Probes are reproducible for a given seed.
pub fn validate(model: &Model, grid: TimeGrid, n_probes: usize, seed: u64) -> Result<ValidationReport> {
    if n_probes == 0 {
        return Err(Error::Domain("validation needs at least one probe".into()));
    }
    let (d, k, l) = (model.dims.d, model.dims.k, model.dims.l);
    let (c, m, alpha) = (model.lip_c, model.growth_m, model.alpha);
    let mut u = Uniforms::new(seed);
    let mut alpha_item = Tracker::new("alpha_in_unit_interval");
    alpha_item.record(if alpha > 0.0 && alpha < 1.0 { 0.0 } else { 1.0 }, 0.0, || format!("alpha = {alpha}"));
    let mut forward = Tracker::new("forward_lipschitz");
    let mut terminal = Tracker::new("terminal_lipschitz");
    let mut driver = Tracker::new("driver_lipschitz");
    let mut noise = Tracker::new("noise_lipschitz");
    let mut noise_growth = Tracker::new("noise_growth");
    let mut noise_contraction = Tracker::new("noise_z_contraction");
    let mut dims_item = Tracker::new("coefficient_dimensions");

    for _ in 0..n_probes {
        let len = 1 + u.index(grid.steps() + 1);
        let p = random_path(&mut u, grid, d, len);
        let q = perturb(&mut u, &p);
        let weight = 1.0 + p.sup_norm().powf(m) + q.sup_norm().powf(m);
        let dist = sup_diff(&p, &q);

        let (bp, bq, sp, sq) = (model.drift(&p), model.drift(&q), model.diffusion(&p), model.diffusion(&q));
        dims_item.record(
            (bp.len() != d || sp.len() != d * d) as u8 as f64,
            0.0,
            || format!("drift has {} entries, diffusion {}", bp.len(), sp.len()),
        );
        if bp.len() == d && sp.len() == d * d {
            let lhs = diff_norm(&bp, &bq) + diff_norm(&sp, &sq);
            forward.record(lhs, c * weight * dist, || {
                format!("paths at t = {} with sup distance {dist:e}: |Δb| + |Δσ| = {lhs:e}", p.current_time())
            });
        }

        let full_p = random_path(&mut u, grid, d, grid.steps() + 1);
        let full_q = perturb(&mut u, &full_p);
        let (tp, tq) = (model.terminal(&full_p), model.terminal(&full_q));
        dims_item.record((tp.len() != k) as u8 as f64, 0.0, || format!("terminal has {} entries", tp.len()));
        let tdist = sup_diff(&full_p, &full_q);
        let tw = 1.0 + full_p.sup_norm().powf(m) + full_q.sup_norm().powf(m);
        let lhs = diff_norm(&tp, &tq);
        terminal.record(lhs, c * tw * tdist, || format!("terminal paths with sup distance {tdist:e}: |ΔΦ| = {lhs:e}"));

        let y = random_vec(&mut u, k);
        let z = random_vec(&mut u, k * d);
        let (y2, z2) = if u.next() < 0.5 {
            // same point in (y, z), so only the path moves
            (y.clone(), z.clone())
        } else {
            let y2: Vec<f64> = y.iter().map(|v| v + signed_log_uniform(&mut u, 1e-6, 1.0)).collect();
            let z2: Vec<f64> = z.iter().map(|v| v + signed_log_uniform(&mut u, 1e-6, 1.0)).collect();
            (y2, z2)
        };
        let (dy, dz) = (diff_norm(&y, &y2), diff_norm(&z, &z2));
        let fp = model.driver(&p, &y, &z);
        let fq = model.driver(&q, &y2, &z2);
        dims_item.record((fp.len() != k) as u8 as f64, 0.0, || format!("driver has {} entries", fp.len()));
        let lhs = diff_norm(&fp, &fq);
        driver.record(lhs, c * (weight * dist + dy + dz), || {
            format!("f at y = {y:?}, z = {z:?} vs y = {y2:?}, z = {z2:?} (path distance {dist:e}): |Δf| = {lhs:e}")
        });

        let gp = model.noise(&p, &y, &z);
        let gq = model.noise(&q, &y2, &z2);
        dims_item.record((gp.len() != k * l) as u8 as f64, 0.0, || format!("noise has {} entries", gp.len()));
        if gp.len() != k * l {
            continue;
        }
        let lhs = diff_norm(&gp, &gq);
        noise.record(lhs, c * (weight * dist + dy) + alpha * dz, || {
            format!("g at y = {y:?}, z = {z:?} vs y = {y2:?}, z = {z2:?} (path distance {dist:e}): |Δg| = {lhs:e}")
        });

        // g gᵀ <= α z zᵀ + C (|g(γ, 0, 0)|² + |y|²) I
        let g0 = model.noise(&p, &vec![0.0; k], &vec![0.0; k * d]);
        let scale = euclidean(&g0).powi(2) + euclidean(&y).powi(2);
        let gm = DMatrix::from_row_slice(k, l, &gp);
        let zm = DMatrix::from_row_slice(k, d, &z);
        let bound = &zm * zm.transpose() * alpha + DMatrix::identity(k, k) * (c * scale) - &gm * gm.transpose();
        let lam = min_eigenvalue(bound);
        let norm = (&gm * gm.transpose()).norm().max(1.0);
        noise_growth.record(-lam, REL_TOL * norm, || {
            format!("g gᵀ exceeds the bound at y = {y:?}, z = {z:?} (min eigenvalue {lam:e})")
        });

        // directional z-derivative of g along θ by central differences
        let theta = random_vec(&mut u, k * d);
        let tn = euclidean(&theta);
        let eps = 1e-6 * (1.0 + euclidean(&z)) / tn.max(1e-300);
        let zp: Vec<f64> = z.iter().zip(&theta).map(|(a, b)| a + eps * b).collect();
        let zm_: Vec<f64> = z.iter().zip(&theta).map(|(a, b)| a - eps * b).collect();
        let ga = model.noise(&p, &y, &zp);
        let gb = model.noise(&p, &y, &zm_);
        let deriv: Vec<f64> = ga.iter().zip(&gb).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let am = DMatrix::from_row_slice(k, l, &deriv);
        let th = DMatrix::from_row_slice(k, d, &theta);
        let lam = min_eigenvalue(&th * th.transpose() - &am * am.transpose());
        noise_contraction.record(-lam, 1e-6 * tn * tn, || {
            format!("g_z θθᵀ g_zᵀ exceeds θθᵀ at y = {y:?}, z = {z:?}, θ = {theta:?}")
        });
    }

    Ok(ValidationReport {
        model: model.name.clone(),
        items: vec![
            alpha_item.item,
            dims_item.item,
            forward.item,
            terminal.item,
            driver.item,
            noise.item,
            noise_growth.item,
            noise_contraction.item,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{registry, Dims};

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 8).unwrap()
    }

    #[test]
    fn registry_models_pass() {
        for e in registry() {
            let r = validate(&e.model, grid(), 200, 3).unwrap();
            assert!(r.passed(), "{}: {:?}", e.name, r.failures());
        }
    }

    #[test]
    fn g_equal_to_z_breaks_the_growth_bound() {
        let m = Model::builder("g=z", Dims { d: 1, k: 1, l: 1 })
            .terminal(|p| vec![p.endpoint()[0]])
            .noise(|_, _, z| vec![z[0]])
            .alpha(0.5)
            .build()
            .unwrap();
        let r = validate(&m, grid(), 100, 1).unwrap();
        let item = r.item("noise_growth").unwrap();
        assert!(!item.passed);
        assert!(item.witness.as_ref().unwrap().contains("z ="));
        assert!(!r.item("noise_lipschitz").unwrap().passed);
    }

    #[test]
    fn discontinuous_driver_is_caught_with_witness() {
        let m = Model::builder("sign", Dims { d: 1, k: 1, l: 1 })
            .terminal(|p| vec![p.endpoint()[0]])
            .driver(|_, y, _| vec![if y[0] >= 0.0 { 1.0 } else { 0.0 }])
            .build()
            .unwrap();
        let r = validate(&m, grid(), 100, 5).unwrap();
        let item = r.item("driver_lipschitz").unwrap();
        assert!(!item.passed);
        assert!(item.witness.is_some());
    }

    #[test]
    fn wrong_output_sizes_are_reported() {
        let m = Model::builder("bad", Dims { d: 1, k: 1, l: 1 })
            .terminal(|_| vec![0.0, 1.0])
            .build()
            .unwrap();
        assert!(!validate(&m, grid(), 5, 0).unwrap().item("coefficient_dimensions").unwrap().passed);
        assert!(validate(&m, grid(), 0, 0).is_err());
    }
}
