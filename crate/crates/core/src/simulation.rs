//! Brownian drivers, the Euler scheme for path-dependent SDEs, and discrete
//! forward and backward Itô integrals.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::models::Model;
use crate::path_space::{euclidean, Path, TimeGrid};
use crate::rng::{Driver, GaussianStream};
use crate::stats::Moments;

/// Increments of the independent drivers `W` (dimension `d`) and `B` (dimension
/// `l`) on every step of the grid, scenario-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPair {
    pub grid: TimeGrid,
    pub n_scenarios: usize,
    pub d: usize,
    pub l: usize,
    pub seed_w: u64,
    pub seed_b: u64,
    dw: Vec<f64>,
    db: Vec<f64>,
}

fn fill_increments(out: &mut [f64], grid: TimeGrid, dim: usize, seed: u64, driver: Driver) {
    let n = grid.steps();
    let scale = grid.dt().sqrt();
    out.par_chunks_mut(n * dim).enumerate().for_each(|(s, block)| {
        let mut stream = GaussianStream::new(seed, s as u64, driver);
        for step in block.chunks_exact_mut(dim) {
            stream.fill_step(step);
            for v in step.iter_mut() {
                *v *= scale;
            }
        }
    });
}

impl BrownianPair {
    pub fn dw(&self, scenario: usize, step: usize) -> &[f64] {
        let n = self.grid.steps();
        let start = (scenario * n + step) * self.d;
        &self.dw[start..start + self.d]
    }

    pub fn db(&self, scenario: usize, step: usize) -> &[f64] {
        let n = self.grid.steps();
        let start = (scenario * n + step) * self.l;
        &self.db[start..start + self.l]
    }

    /// All `B` increments of one scenario, `N x l` row-major.
    pub fn db_path(&self, scenario: usize) -> &[f64] {
        let n = self.grid.steps() * self.l;
        &self.db[scenario * n..(scenario + 1) * n]
    }

    pub fn dw_path(&self, scenario: usize) -> &[f64] {
        let n = self.grid.steps() * self.d;
        &self.dw[scenario * n..(scenario + 1) * n]
    }

    /// Drivers built from explicit increments (`n x N x d` and `n x N x l`).
    pub fn from_increments(grid: TimeGrid, d: usize, l: usize, dw: Vec<f64>, db: Vec<f64>) -> Result<Self> {
        let per = grid.steps();
        if dw.is_empty() || dw.len() % (per * d) != 0 {
            return Err(Error::Domain("W increments do not fill whole scenarios".into()));
        }
        let n = dw.len() / (per * d);
        check_dim(n * per * l, db.len(), "B increments")?;
        Ok(Self {
            grid,
            n_scenarios: n,
            d,
            l,
            seed_w: 0,
            seed_b: 0,
            dw,
            db,
        })
    }
}

/// Drivers for `n_scenarios` scenarios; a pure function of the arguments.
pub fn sample_drivers(grid: TimeGrid, n_scenarios: usize, d: usize, l: usize, seed: u64) -> Result<BrownianPair> {
    sample_drivers_with_seeds(grid, n_scenarios, d, l, seed, seed)
}

/// As [`sample_drivers`] with separate seeds for `W` and `B`.
pub fn sample_drivers_with_seeds(
    grid: TimeGrid,
    n_scenarios: usize,
    d: usize,
    l: usize,
    seed_w: u64,
    seed_b: u64,
) -> Result<BrownianPair> {
    if n_scenarios == 0 {
        return Err(Error::Domain("need at least one scenario".into()));
    }
    if d == 0 || l == 0 {
        return Err(Error::Domain("driver dimensions must be positive".into()));
    }
    let n = grid.steps();
    let mut dw = vec![0.0; n_scenarios * n * d];
    let mut db = vec![0.0; n_scenarios * n * l];
    fill_increments(&mut dw, grid, d, seed_w, Driver::W);
    fill_increments(&mut db, grid, l, seed_b, Driver::B);
    Ok(BrownianPair {
        grid,
        n_scenarios,
        d,
        l,
        seed_w,
        seed_b,
        dw,
        db,
    })
}

/// Forward paths `X^{γ_t}` for each surviving scenario.
#[derive(Clone, Debug)]
pub struct ScenarioEnsemble {
    pub initial: Path,
    pub paths: Vec<Path>,
    /// Driver scenario index of each entry of `paths`.
    pub scenario_ids: Vec<usize>,
    /// Scenarios dropped because the state became non-finite.
    pub excluded: usize,
}

impl ScenarioEnsemble {
    pub fn start_index(&self) -> usize {
        self.initial.current_index()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// One Euler path from `initial` to the horizon, or `None` on blow-up.
pub(crate) fn euler_path(model: &Model, initial: &Path, dw: &[f64]) -> Option<Path> {
    let d = model.dims.d;
    let grid = initial.grid();
    let dt = grid.dt();
    let mut path = initial.clone();
    let mut next = vec![0.0; d];
    for i in initial.current_index()..grid.steps() {
        let b = model.drift(&path);
        let s = model.diffusion(&path);
        let x = path.endpoint();
        let w = &dw[i * d..(i + 1) * d];
        for r in 0..d {
            let mut v = x[r] + b[r] * dt;
            for c in 0..d {
                v += s[r * d + c] * w[c];
            }
            next[r] = v;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        path.push(&next);
    }
    Some(path)
}

/// Euler scheme continuing `initial`; coefficients see the whole history.
pub fn simulate_forward(model: &Model, initial: &Path, drivers: &BrownianPair) -> Result<ScenarioEnsemble> {
    check_dim(model.dims.d, initial.dim(), "initial path")?;
    check_dim(model.dims.d, drivers.d, "W driver")?;
    check_dim(model.dims.l, drivers.l, "B driver")?;
    if initial.grid() != drivers.grid {
        return Err(Error::Domain("initial path and drivers use different grids".into()));
    }
    let probe_b = model.drift(initial);
    check_dim(model.dims.d, probe_b.len(), "drift output")?;
    check_dim(model.dims.d * model.dims.d, model.diffusion(initial).len(), "diffusion output")?;
    let results: Vec<Option<Path>> = (0..drivers.n_scenarios)
        .into_par_iter()
        .map(|s| euler_path(model, initial, drivers.dw_path(s)))
        .collect();
    let mut paths = Vec::with_capacity(results.len());
    let mut ids = Vec::with_capacity(results.len());
    for (s, r) in results.into_iter().enumerate() {
        if let Some(p) = r {
            paths.push(p);
            ids.push(s);
        }
    }
    let excluded = drivers.n_scenarios - paths.len();
    if excluded > 0 {
        log::warn!("{excluded} scenarios blew up and were excluded");
    }
    if paths.is_empty() {
        return Err(Error::Evaluation("every scenario blew up".into()));
    }
    Ok(ScenarioEnsemble {
        initial: initial.clone(),
        paths,
        scenario_ids: ids,
        excluded,
    })
}

/// `Σ_i a(t_i) · ΔW_i` per scenario over steps `start..N`; `integrand` is
/// `n x (N - start) x d`, left-endpoint values.
pub fn forward_integral(integrand: &[f64], drivers: &BrownianPair, start: usize) -> Result<Vec<f64>> {
    let steps = drivers.grid.steps().checked_sub(start).ok_or_else(|| Error::Domain("start beyond horizon".into()))?;
    let (n, d) = (drivers.n_scenarios, drivers.d);
    check_dim(n * steps * d, integrand.len(), "forward integrand")?;
    Ok((0..n)
        .map(|s| {
            (0..steps)
                .map(|j| {
                    let a = &integrand[(s * steps + j) * d..(s * steps + j + 1) * d];
                    a.iter().zip(drivers.dw(s, start + j)).map(|(x, y)| x * y).sum::<f64>()
                })
                .sum()
        })
        .collect())
}

/// `Σ_i a(t_{i+1}) · ΔB_i` per scenario; entry `j` of each scenario's block is
/// the value at the right endpoint `t_{start+j+1}`.
pub fn backward_integral(integrand: &[f64], drivers: &BrownianPair, start: usize) -> Result<Vec<f64>> {
    let steps = drivers.grid.steps().checked_sub(start).ok_or_else(|| Error::Domain("start beyond horizon".into()))?;
    let (n, l) = (drivers.n_scenarios, drivers.l);
    check_dim(n * steps * l, integrand.len(), "backward integrand")?;
    Ok((0..n)
        .map(|s| {
            (0..steps)
                .map(|j| {
                    let a = &integrand[(s * steps + j) * l..(s * steps + j + 1) * l];
                    a.iter().zip(drivers.db(s, start + j)).map(|(x, y)| x * y).sum::<f64>()
                })
                .sum()
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub p: f64,
    pub q: f64,
    pub c_p: f64,
    /// `E[sup_{s∈[t,T]} |X(s)|^p]`
    pub empirical: f64,
    pub stderr: f64,
    /// `C_p (1 + ‖γ_t‖^q)`
    pub bound: f64,
    pub ratio: f64,
    pub passed: bool,
    /// Smallest `C_p` that passes for this ensemble.
    pub minimal_c: f64,
}

pub fn moment_check(ensemble: &ScenarioEnsemble, p: f64, c_p: f64, q: f64) -> Result<MomentReport> {
    if p < 2.0 {
        return Err(Error::Domain(format!("moment order must be >= 2, got {p}")));
    }
    let start = ensemble.start_index();
    let m: Moments = ensemble
        .paths
        .iter()
        .map(|path| {
            (start..path.len())
                .map(|i| euclidean(path.value(i)).powf(p))
                .fold(0.0, f64::max)
        })
        .collect();
    let shape = 1.0 + ensemble.initial.sup_norm().powf(q);
    let bound = c_p * shape;
    Ok(MomentReport {
        p,
        q,
        c_p,
        empirical: m.mean(),
        stderr: m.stderr(),
        bound,
        ratio: m.mean() / bound,
        passed: m.mean() <= bound,
        minimal_c: m.mean() / shape,
    })
}

const MAGIC: &[u8; 4] = b"PFK1";
const VERSION: u32 = 1;

/// Binary dump: `PFK1`, u32 version, u32 d, u32 l, u64 N, u64 n, u64 seed,
/// f64 horizon, u64 start index, then little-endian f64 arrays of paths
/// (`n x (N+1) x d`), W increments (`n x N x d`) and B increments (`n x N x l`).
pub fn write_ensemble_binary<W: Write>(mut w: W, ensemble: &ScenarioEnsemble, drivers: &BrownianPair) -> Result<()> {
    let grid = drivers.grid;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(drivers.d as u32).to_le_bytes())?;
    w.write_all(&(drivers.l as u32).to_le_bytes())?;
    w.write_all(&(grid.steps() as u64).to_le_bytes())?;
    w.write_all(&(ensemble.len() as u64).to_le_bytes())?;
    w.write_all(&drivers.seed_w.to_le_bytes())?;
    w.write_all(&grid.horizon().to_le_bytes())?;
    w.write_all(&(ensemble.start_index() as u64).to_le_bytes())?;
    let mut put = |xs: &[f64]| -> Result<()> {
        for x in xs {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    for p in &ensemble.paths {
        put(p.values())?;
    }
    for &s in &ensemble.scenario_ids {
        put(drivers.dw_path(s))?;
    }
    for &s in &ensemble.scenario_ids {
        put(drivers.db_path(s))?;
    }
    Ok(())
}

/// Contents of a binary dump.
#[derive(Clone, Debug)]
pub struct EnsembleDump {
    pub seed: u64,
    pub start_index: usize,
    pub paths: Vec<Path>,
    pub drivers: BrownianPair,
}

pub fn read_ensemble_binary<R: Read>(mut r: R) -> Result<EnsembleDump> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a PFK1 ensemble dump".into()));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    let mut get_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u32b)?;
        Ok(u32::from_le_bytes(u32b))
    };
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported dump version {version}")));
    }
    let d = get_u32(&mut r)? as usize;
    let l = get_u32(&mut r)? as usize;
    let mut get_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut u64b)?;
        Ok(u64::from_le_bytes(u64b))
    };
    let steps = get_u64(&mut r)? as usize;
    let n = get_u64(&mut r)? as usize;
    let seed = get_u64(&mut r)?;
    let horizon = f64::from_bits(get_u64(&mut r)?);
    let start_index = get_u64(&mut r)? as usize;
    let grid = TimeGrid::new(horizon, steps)?;
    let mut floats = |count: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf)?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let mut paths = Vec::with_capacity(n);
    for _ in 0..n {
        paths.push(Path::from_flat(grid, d, floats((steps + 1) * d)?)?);
    }
    let dw = floats(n * steps * d)?;
    let db = floats(n * steps * l)?;
    let mut drivers = BrownianPair::from_increments(grid, d, l, dw, db)?;
    drivers.seed_w = seed;
    drivers.seed_b = seed;
    Ok(EnsembleDump {
        seed,
        start_index,
        paths,
        drivers,
    })
}

/// Per-step summary `step,t,mean_x_1..,var_x_1..`.
pub fn write_summary_csv<W: Write>(mut w: W, ensemble: &ScenarioEnsemble) -> Result<()> {
    let d = ensemble.initial.dim();
    let grid = ensemble.initial.grid();
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=d).map(|i| format!("mean_x_{i}")));
    header.extend((1..=d).map(|i| format!("var_x_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for i in 0..=grid.steps() {
        let stats: Vec<Moments> = (0..d)
            .map(|c| ensemble.paths.iter().map(|p| p.value(i)[c]).collect())
            .collect();
        write!(w, "{i},{}", grid.time(i))?;
        for m in &stats {
            write!(w, ",{}", m.mean())?;
        }
        for m in &stats {
            write!(w, ",{}", m.variance())?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{registry_entry, Dims};
    use crate::stats::{correlation, mean_stderr};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn driver_law_and_determinism() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let n = 100_000;
        let a = sample_drivers(g, n, 1, 1, 9).unwrap();
        let b = sample_drivers(g, n, 1, 1, 9).unwrap();
        assert_eq!(a, b);
        let dt = g.dt();
        for step in [0usize, 57, 99] {
            let w: Vec<f64> = (0..n).map(|s| a.dw(s, step)[0]).collect();
            let v: Vec<f64> = (0..n).map(|s| a.db(s, step)[0]).collect();
            for xs in [&w, &v] {
                let (m, _) = mean_stderr(xs);
                assert!(m.abs() <= 4.0 * (dt / n as f64).sqrt());
                let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
                assert!((var / dt - 1.0).abs() < 0.02);
            }
            assert!(correlation(&w, &v).abs() <= 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn frozen_and_deterministic_dynamics() {
        let g = grid(8);
        let frozen = Model::builder("frozen", Dims { d: 1, k: 1, l: 1 })
            .terminal(|p| vec![p.endpoint()[0]])
            .diffusion(|_| vec![0.0])
            .build()
            .unwrap();
        let init = Path::scalar(g, &[0.0, 1.5, 0.7]).unwrap();
        let drv = sample_drivers(g, 20, 1, 1, 1).unwrap();
        let ens = simulate_forward(&frozen, &init, &drv).unwrap();
        for p in &ens.paths {
            assert!(p.values()[3..].iter().all(|&v| v == 0.7));
            assert_eq!(p.restrict_to_index(2), init);
        }
        let ode = frozen.to_builder().drift(|_| vec![1.0]).build().unwrap();
        let start = Path::constant(g, &[0.0], 0.0).unwrap();
        let ens = simulate_forward(&ode, &start, &drv).unwrap();
        assert!(ens.paths.iter().all(|p| (p.endpoint()[0] - 1.0).abs() < 1e-14));
    }

    #[test]
    fn heat_variance_and_weak_error() {
        let g = grid(16);
        let m = registry_entry("heat").unwrap().model;
        let init = Path::constant(g, &[0.5], 0.25).unwrap();
        let drv = sample_drivers(g, 20_000, 1, 1, 4).unwrap();
        let ens = simulate_forward(&m, &init, &drv).unwrap();
        let sq: Vec<f64> = ens.paths.iter().map(|p| p.endpoint()[0].powi(2)).collect();
        let (mu, se) = mean_stderr(&sq);
        assert!((mu - (0.25 + 0.75)).abs() <= 3.0 * se, "{mu} ± {se}");
        let zero = Path::constant(g, &[0.0], 0.25).unwrap();
        let ens = simulate_forward(&m, &zero, &drv).unwrap();
        let sq: Vec<f64> = ens.paths.iter().map(|p| p.endpoint()[0].powi(2)).collect();
        let (mu, se) = mean_stderr(&sq);
        assert!((mu - 0.75).abs() <= 3.0 * se);
    }

    #[test]
    fn blow_up_is_excluded() {
        let g = grid(8);
        let m = Model::builder("boom", Dims { d: 1, k: 1, l: 1 })
            .terminal(|p| vec![p.endpoint()[0]])
            .drift(|p| vec![if p.endpoint()[0] > 0.0 { f64::INFINITY } else { 0.0 }])
            .build()
            .unwrap();
        let drv = sample_drivers(g, 200, 1, 1, 2).unwrap();
        let ens = simulate_forward(&m, &Path::constant(g, &[0.0], 0.0).unwrap(), &drv).unwrap();
        assert!(ens.excluded > 0 && ens.len() + ens.excluded == 200);
        assert_eq!(ens.scenario_ids.len(), ens.len());
    }

    #[test]
    fn integrals_telescope_and_have_the_right_bias() {
        let g = grid(32);
        let n = 20_000;
        let drv = sample_drivers(g, n, 1, 1, 5).unwrap();
        let start = 8;
        let steps = 32 - start;
        let c = vec![2.0; n * steps];
        let f = forward_integral(&c, &drv, start).unwrap();
        let b = backward_integral(&c, &drv, start).unwrap();
        for s in 0..n {
            let w: f64 = (start..32).map(|i| drv.dw(s, i)[0]).sum();
            let bb: f64 = (start..32).map(|i| drv.db(s, i)[0]).sum();
            assert!((f[s] - 2.0 * w).abs() < 1e-12);
            assert!((b[s] - 2.0 * bb).abs() < 1e-12);
        }
        assert!(forward_integral(&vec![0.0; n * steps], &drv, start).unwrap().iter().all(|&v| v == 0.0));
        assert!(forward_integral(&c[1..], &drv, start).is_err());
        // a = W(t_i) on the left, a = B(t_{i+1}) on the right
        let mut wl = vec![0.0; n * steps];
        let mut br = vec![0.0; n * steps];
        for s in 0..n {
            let (mut w, mut bsum) = (0.0, 0.0);
            for j in 0..steps {
                wl[s * steps + j] = w;
                w += drv.dw(s, start + j)[0];
                bsum += drv.db(s, start + j)[0];
                br[s * steps + j] = bsum;
            }
        }
        let (mf, sf) = mean_stderr(&forward_integral(&wl, &drv, start).unwrap());
        assert!(mf.abs() <= 3.0 * sf);
        let (mb, sb) = mean_stderr(&backward_integral(&br, &drv, start).unwrap());
        assert!((mb - 0.75).abs() <= 3.0 * sb, "{mb} ± {sb}");
        let ones = vec![1.0; n * steps];
        let fw = forward_integral(&ones, &drv, start).unwrap();
        let bw = backward_integral(&ones, &drv, start).unwrap();
        assert!(correlation(&fw, &bw).abs() <= 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn moment_check_examples() {
        let g = grid(64);
        let drv = sample_drivers(g, 20_000, 1, 1, 6).unwrap();
        let zero = Path::constant(g, &[0.0], 0.0).unwrap();
        let heat = registry_entry("heat").unwrap().model;
        let ens = simulate_forward(&heat, &zero, &drv).unwrap();
        let r = moment_check(&ens, 2.0, 4.0, 2.0).unwrap();
        assert!(r.passed && r.empirical < 4.0);
        assert!((r.minimal_c - r.empirical).abs() < 1e-12);
        let frozen = heat.to_builder().diffusion(|_| vec![0.0]).build().unwrap();
        let x = Path::constant(g, &[1.5], 0.5).unwrap();
        let ens = simulate_forward(&frozen, &x, &drv).unwrap();
        let r = moment_check(&ens, 3.0, 1.0, 3.0).unwrap();
        assert!((r.empirical - 1.5f64.powi(3)).abs() < 1e-12);
        assert!(moment_check(&ens, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn binary_dump_round_trips() {
        let g = grid(4);
        let drv = sample_drivers(g, 3, 2, 1, 8).unwrap();
        let m = Model::builder("bm2", Dims { d: 2, k: 1, l: 1 })
            .terminal(|p| vec![p.endpoint()[0]])
            .build()
            .unwrap();
        let init = Path::constant(g, &[0.1, 0.2], 0.25).unwrap();
        let ens = simulate_forward(&m, &init, &drv).unwrap();
        let mut buf = Vec::new();
        write_ensemble_binary(&mut buf, &ens, &drv).unwrap();
        assert_eq!(&buf[..4], b"PFK1");
        let dump = read_ensemble_binary(&buf[..]).unwrap();
        assert_eq!(dump.paths, ens.paths);
        assert_eq!(dump.start_index, 1);
        assert_eq!(dump.drivers.dw_path(2), drv.dw_path(2));
        assert_eq!(dump.drivers.db_path(0), drv.db_path(0));
        let mut csv = Vec::new();
        write_summary_csv(&mut csv, &ens).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,t,mean_x_1,mean_x_2,var_x_1,var_x_2\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
