//! Coefficient bundles `(b, σ, Φ, f, g)` with their Lipschitz and growth
//! metadata, sampled assumption probes, and the built-in model registry.

mod catalogue;
mod registry;
mod validate;

use std::fmt;
use std::sync::Arc;

pub use catalogue::{AffineSpec, CustomModelSpec, Term};
pub use registry::{registry, registry_entry, ModelRegistryEntry};
pub use validate::{validate, ValidationItem, ValidationReport};

use crate::error::{Error, Result};
use crate::path_space::{node_stride, Path, TimeGrid};

pub type PathMap = Arc<dyn Fn(&Path) -> Vec<f64> + Send + Sync>;
pub type StateMap = Arc<dyn Fn(&Path, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// State dimension `d`, solution dimension `k`, backward noise dimension `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub d: usize,
    pub k: usize,
    pub l: usize,
}

/// Coefficients of the forward SDE and the backward doubly stochastic equation.
///
/// `diffusion` returns a `d x d` row-major matrix, `driver` maps `(γ_t, y, z)`
/// with `z` a `k x d` row-major matrix to `R^k`, and `noise` returns `k x l`.
#[derive(Clone)]
pub struct Model {
    pub name: String,
    pub dims: Dims,
    drift: PathMap,
    diffusion: PathMap,
    terminal: PathMap,
    driver: StateMap,
    noise: StateMap,
    pub lip_c: f64,
    pub growth_m: f64,
    pub alpha: f64,
    pub markovian: bool,
    /// `g ≡ 0`: the backward noise cannot influence the solution.
    pub noise_free: bool,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("lip_c", &self.lip_c)
            .field("growth_m", &self.growth_m)
            .field("alpha", &self.alpha)
            .field("markovian", &self.markovian)
            .field("noise_free", &self.noise_free)
            .finish_non_exhaustive()
    }
}

impl Model {
    pub fn builder(name: impl Into<String>, dims: Dims) -> ModelBuilder {
        ModelBuilder::new(name, dims)
    }

    pub fn drift(&self, p: &Path) -> Vec<f64> {
        (self.drift)(p)
    }

    pub fn diffusion(&self, p: &Path) -> Vec<f64> {
        (self.diffusion)(p)
    }

    pub fn terminal(&self, p: &Path) -> Vec<f64> {
        (self.terminal)(p)
    }

    pub fn driver(&self, p: &Path, y: &[f64], z: &[f64]) -> Vec<f64> {
        (self.driver)(p, y, z)
    }

    pub fn noise(&self, p: &Path, y: &[f64], z: &[f64]) -> Vec<f64> {
        (self.noise)(p, y, z)
    }

    /// Rebuild from this model, e.g. to shift `Φ` or `f` for comparisons.
    pub fn to_builder(&self) -> ModelBuilder {
        ModelBuilder {
            model: self.clone(),
            terminal_set: true,
        }
    }

    /// The model with every coefficient composed with the node-freezing map
    /// `γ ↦ γ^n` anchored at `anchor`.
    pub fn discretized(&self, grid: TimeGrid, n: usize, anchor: f64) -> Result<Model> {
        let anchor_idx = grid.index_of(anchor)?;
        let stride = node_stride(grid, anchor_idx, n)?;
        let freeze = move |p: &Path| p.discretize_indexed(anchor_idx, stride);
        let wrap_path = |m: &PathMap| -> PathMap {
            let m = Arc::clone(m);
            Arc::new(move |p: &Path| m(&freeze(p)))
        };
        let wrap_state = |m: &StateMap| -> StateMap {
            let m = Arc::clone(m);
            Arc::new(move |p: &Path, y: &[f64], z: &[f64]| m(&freeze(p), y, z))
        };
        Ok(Model {
            name: format!("{}^n{n}", self.name),
            drift: wrap_path(&self.drift),
            diffusion: wrap_path(&self.diffusion),
            terminal: wrap_path(&self.terminal),
            driver: wrap_state(&self.driver),
            noise: wrap_state(&self.noise),
            ..self.clone()
        })
    }
}

pub struct ModelBuilder {
    model: Model,
    terminal_set: bool,
}

impl ModelBuilder {
    pub fn new(name: impl Into<String>, dims: Dims) -> Self {
        let Dims { d, k, l } = dims;
        let identity: Vec<f64> = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        Self {
            model: Model {
                name: name.into(),
                dims,
                drift: Arc::new(move |_| vec![0.0; d]),
                diffusion: Arc::new(move |_| identity.clone()),
                terminal: Arc::new(move |_| vec![0.0; k]),
                driver: Arc::new(move |_, _, _| vec![0.0; k]),
                noise: Arc::new(move |_, _, _| vec![0.0; k * l]),
                lip_c: 1.0,
                growth_m: 0.0,
                alpha: 0.5,
                markovian: true,
                noise_free: true,
            },
            terminal_set: false,
        }
    }

    pub fn drift(mut self, f: impl Fn(&Path) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.model.drift = Arc::new(f);
        self
    }

    pub fn diffusion(mut self, f: impl Fn(&Path) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.model.diffusion = Arc::new(f);
        self
    }

    pub fn terminal(mut self, f: impl Fn(&Path) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.model.terminal = Arc::new(f);
        self.terminal_set = true;
        self
    }

    pub fn driver(mut self, f: impl Fn(&Path, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.model.driver = Arc::new(f);
        self
    }

    /// Sets `g`; the model is no longer flagged noise-free.
    pub fn noise(mut self, f: impl Fn(&Path, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.model.noise = Arc::new(f);
        self.model.noise_free = false;
        self
    }

    pub fn lipschitz(mut self, c: f64, m: f64) -> Self {
        self.model.lip_c = c;
        self.model.growth_m = m;
        self
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.model.alpha = alpha;
        self
    }

    pub fn markovian(mut self, markovian: bool) -> Self {
        self.model.markovian = markovian;
        self
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.model.name = name.into();
        self
    }

    /// Adds a constant to `Φ`.
    pub fn shift_terminal(mut self, c: f64) -> Self {
        let old = Arc::clone(&self.model.terminal);
        self.model.terminal = Arc::new(move |p| old(p).into_iter().map(|v| v + c).collect());
        self
    }

    /// Adds a constant to `f`.
    pub fn shift_driver(mut self, c: f64) -> Self {
        let old = Arc::clone(&self.model.driver);
        self.model.driver = Arc::new(move |p, y, z| old(p, y, z).into_iter().map(|v| v + c).collect());
        self
    }

    pub fn build(self) -> Result<Model> {
        let m = self.model;
        if !(m.alpha > 0.0 && m.alpha < 1.0) {
            return Err(Error::Domain(format!("contraction constant alpha must lie in (0, 1), got {}", m.alpha)));
        }
        if !(m.lip_c.is_finite() && m.lip_c >= 0.0 && m.growth_m.is_finite() && m.growth_m >= 0.0) {
            return Err(Error::Domain("Lipschitz constant and growth exponent must be finite and >= 0".into()));
        }
        if m.dims.d == 0 || m.dims.k == 0 || m.dims.l == 0 {
            return Err(Error::Domain("model dimensions must be positive".into()));
        }
        if !self.terminal_set {
            return Err(Error::Domain("model needs a terminal functional".into()));
        }
        Ok(m)
    }
}
