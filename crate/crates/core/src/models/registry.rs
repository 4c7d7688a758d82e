use std::sync::Arc;

use super::{Dims, Model};
use crate::functional::{AnalyticFunctional, SmoothFunctional};
use crate::path_space::Path;

pub struct ModelRegistryEntry {
    pub name: &'static str,
    pub model: Model,
    /// Exact `u` of the discrete scheme's target, with analytic derivatives.
    pub closed_form_u: Option<Arc<dyn SmoothFunctional>>,
    /// Exact `Z = σ D_x u`, `k x d` row-major.
    pub closed_form_z: Option<Arc<dyn Fn(&Path) -> Vec<f64> + Send + Sync>>,
    pub notes: &'static str,
}

const D1: Dims = Dims { d: 1, k: 1, l: 1 };

fn x(p: &Path) -> f64 {
    p.endpoint()[0]
}

fn remaining(p: &Path) -> f64 {
    p.grid().horizon() - p.current_time()
}

/// Left-point Riemann sum of the first component over `[0, t]`; the endpoint
/// carries no weight, so vertical bumps leave it unchanged.
pub(crate) fn running_integral(p: &Path) -> f64 {
    let dt = p.dt();
    p.iter_values().take(p.len() - 1).map(|v| v[0] * dt).sum()
}

pub(crate) fn running_max(p: &Path) -> f64 {
    p.iter_values().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max)
}

fn heat() -> ModelRegistryEntry {
    let model = Model::builder("heat", D1)
        .terminal(|p| vec![x(p).powi(2)])
        .lipschitz(1.0, 1.0)
        .build()
        .expect("registry model");
    let u = AnalyticFunctional {
        dim: 1,
        value: Box::new(|p| vec![x(p).powi(2) + remaining(p)]),
        d_x: Box::new(|p| vec![2.0 * x(p)]),
        d_xx: Box::new(|_| vec![2.0]),
        d_t: Box::new(|_| vec![-1.0]),
    };
    ModelRegistryEntry {
        name: "heat",
        model,
        closed_form_u: Some(Arc::new(u)),
        closed_form_z: Some(Arc::new(|p| vec![2.0 * x(p)])),
        notes: "b = 0, sigma = 1, f = g = 0, Phi = x(T)^2; u = x^2 + (T - t) since E|x + W_{T-t}|^2 = x^2 + T - t",
    }
}

fn asian() -> ModelRegistryEntry {
    let model = Model::builder("asian", D1)
        .terminal(|p| vec![running_integral(p)])
        .lipschitz(1.0, 0.0)
        .markovian(false)
        .build()
        .expect("registry model");
    let u = AnalyticFunctional {
        dim: 1,
        value: Box::new(|p| vec![running_integral(p) + x(p) * remaining(p)]),
        d_x: Box::new(|p| vec![remaining(p)]),
        d_xx: Box::new(|_| vec![0.0]),
        d_t: Box::new(|_| vec![0.0]),
    };
    ModelRegistryEntry {
        name: "asian",
        model,
        closed_form_u: Some(Arc::new(u)),
        closed_form_z: Some(Arc::new(|p| vec![remaining(p)])),
        notes: "Phi = left-point Riemann sum of the path over [0, T]; u = I_t + x(t)(T - t) because X is a martingale",
    }
}

fn linear_g() -> ModelRegistryEntry {
    const BETA: f64 = 0.3;
    let model = Model::builder("linear-g", D1)
        .terminal(|p| vec![x(p)])
        .noise(|_, y, _| vec![BETA * y[0]])
        .lipschitz(1.0, 0.0)
        .build()
        .expect("registry model");
    ModelRegistryEntry {
        name: "linear-g",
        model,
        closed_form_u: None,
        closed_form_z: None,
        notes: "Phi = x(T), g = 0.3 y; oracle is the nested engine",
    }
}

fn nonlinear_f() -> ModelRegistryEntry {
    let model = Model::builder("nonlinear-f", D1)
        .terminal(|p| vec![x(p).sin()])
        .driver(|_, y, z| vec![y[0].cos() + 0.5 * z[0]])
        .lipschitz(1.0, 0.0)
        .build()
        .expect("registry model");
    ModelRegistryEntry {
        name: "nonlinear-f",
        model,
        closed_form_u: None,
        closed_form_z: None,
        notes: "Phi = sin x(T), f = cos y + z/2, g = 0; a classical BSDE, oracle is the nested engine",
    }
}

fn z_in_g() -> ModelRegistryEntry {
    const A0: f64 = 0.5;
    let model = Model::builder("z-in-g", D1)
        .terminal(|p| vec![x(p)])
        .noise(|_, _, z| vec![A0 * z[0]])
        .alpha(0.5)
        .lipschitz(1.0, 0.0)
        .build()
        .expect("registry model");
    ModelRegistryEntry {
        name: "z-in-g",
        model,
        closed_form_u: None,
        closed_form_z: None,
        notes: "Phi = x(T), g = 0.5 z with alpha = 0.5; oracle is the nested engine",
    }
}

fn path_f() -> ModelRegistryEntry {
    let model = Model::builder("path-f", D1)
        .terminal(|p| vec![x(p)])
        .driver(|p, y, _| vec![running_max(p) - y[0]])
        .lipschitz(1.0, 0.0)
        .markovian(false)
        .build()
        .expect("registry model");
    ModelRegistryEntry {
        name: "path-f",
        model,
        closed_form_u: None,
        closed_form_z: None,
        notes: "f = running max - y, Phi = x(T); non-Markovian driver, oracle is the nested engine",
    }
}

/// The built-in models, in a fixed order.
pub fn registry() -> Vec<ModelRegistryEntry> {
    vec![heat(), asian(), linear_g(), nonlinear_f(), z_in_g(), path_f()]
}

pub fn registry_entry(name: &str) -> Option<ModelRegistryEntry> {
    registry().into_iter().find(|e| e.name == name)
}
