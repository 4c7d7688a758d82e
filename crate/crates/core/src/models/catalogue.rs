//! Declarative custom models: affine forward coefficients and `Φ`, `f`, `g`
//! assembled from a fixed catalogue of scalar terms (`k = 1`).

use serde::{Deserialize, Serialize};

use super::registry::{running_integral, running_max};
use super::{Dims, Model};
use crate::error::{Error, Result};
use crate::path_space::Path;

/// `v(γ_t) = constant + linear · γ(t)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    /// Length `d` for the drift, `d x d` row-major for the diffusion.
    #[serde(default)]
    pub constant: Option<Vec<f64>>,
    /// Row-major: `d x d` for the drift, `(d x d) x d` for the diffusion.
    #[serde(default)]
    pub linear: Option<Vec<f64>>,
}

/// One scalar term; the catalogue value is `coef` times the listed shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    Constant { coef: f64 },
    /// `coef * x_c(t)^power`
    Power {
        coef: f64,
        #[serde(default)]
        component: usize,
        #[serde(default = "one")]
        power: i32,
    },
    /// `coef * sin(freq * x_c(t))`
    Sin {
        coef: f64,
        #[serde(default)]
        component: usize,
        #[serde(default = "one_f")]
        freq: f64,
    },
    /// `coef * cos(freq * x_c(t))`
    Cos {
        coef: f64,
        #[serde(default)]
        component: usize,
        #[serde(default = "one_f")]
        freq: f64,
    },
    /// `coef * sup_{s <= t} x_0(s)`
    RunningMax { coef: f64 },
    /// `coef * ∫_0^t x_0(s) ds` (left-point sum)
    RunningIntegral { coef: f64 },
    /// `coef * t`
    Time { coef: f64 },
    /// `coef * y`
    Y { coef: f64 },
    /// `coef * cos(y)`
    CosY { coef: f64 },
    /// `coef * sin(y)`
    SinY { coef: f64 },
    /// `coef * z_c`
    Z {
        coef: f64,
        #[serde(default)]
        component: usize,
    },
}

fn one() -> i32 {
    1
}

fn one_f() -> f64 {
    1.0
}

impl Term {
    fn uses_state(&self) -> bool {
        matches!(self, Term::Y { .. } | Term::CosY { .. } | Term::SinY { .. } | Term::Z { .. })
    }

    fn path_dependent(&self) -> bool {
        matches!(self, Term::RunningMax { .. } | Term::RunningIntegral { .. })
    }

    fn component(&self) -> Option<usize> {
        match self {
            Term::Power { component, .. } | Term::Sin { component, .. } | Term::Cos { component, .. } => Some(*component),
            _ => None,
        }
    }

    fn eval(&self, p: &Path, y: f64, z: &[f64]) -> f64 {
        let x = |c: usize| p.endpoint()[c];
        match *self {
            Term::Constant { coef } => coef,
            Term::Power { coef, component, power } => coef * x(component).powi(power),
            Term::Sin { coef, component, freq } => coef * (freq * x(component)).sin(),
            Term::Cos { coef, component, freq } => coef * (freq * x(component)).cos(),
            Term::RunningMax { coef } => coef * running_max(p),
            Term::RunningIntegral { coef } => coef * running_integral(p),
            Term::Time { coef } => coef * p.current_time(),
            Term::Y { coef } => coef * y,
            Term::CosY { coef } => coef * y.cos(),
            Term::SinY { coef } => coef * y.sin(),
            Term::Z { coef, component } => coef * z[component],
        }
    }
}

fn sum_terms(terms: &[Term], p: &Path, y: f64, z: &[f64]) -> f64 {
    terms.iter().map(|t| t.eval(p, y, z)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModelSpec {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "one_usize")]
    pub d: usize,
    #[serde(default = "one_usize")]
    pub l: usize,
    #[serde(default)]
    pub drift: AffineSpec,
    #[serde(default)]
    pub diffusion: AffineSpec,
    pub terminal: Vec<Term>,
    #[serde(default)]
    pub driver: Vec<Term>,
    /// One term list per component of the backward noise; empty means `g = 0`.
    #[serde(default)]
    pub noise: Vec<Vec<Term>>,
    pub lip_c: f64,
    pub growth_m: f64,
    pub alpha: f64,
}

fn default_name() -> String {
    "custom".into()
}

fn one_usize() -> usize {
    1
}

fn affine(spec: &AffineSpec, rows: usize, d: usize, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let constant = spec.constant.clone().unwrap_or_else(|| vec![0.0; rows]);
    let linear = spec.linear.clone().unwrap_or_else(|| vec![0.0; rows * d]);
    if constant.len() != rows || linear.len() != rows * d {
        return Err(Error::Parse(format!(
            "{what}: expected {rows} constant and {} linear entries, got {} and {}",
            rows * d,
            constant.len(),
            linear.len()
        )));
    }
    Ok((constant, linear))
}

fn apply_affine(constant: &[f64], linear: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    constant
        .iter()
        .enumerate()
        .map(|(r, c)| c + (0..d).map(|j| linear[r * d + j] * x[j]).sum::<f64>())
        .collect()
}

impl CustomModelSpec {
    pub fn build(&self) -> Result<Model> {
        let d = self.d;
        if d == 0 || self.l == 0 {
            return Err(Error::Parse("custom model dimensions d and l must be positive".into()));
        }
        let (b0, b1) = affine(&self.drift, d, d, "drift")?;
        let diffusion = if self.diffusion == AffineSpec::default() {
            AffineSpec {
                constant: Some((0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect()),
                linear: None,
            }
        } else {
            self.diffusion.clone()
        };
        let (s0, s1) = affine(&diffusion, d * d, d, "diffusion")?;
        if self.terminal.iter().any(Term::uses_state) {
            return Err(Error::Parse("terminal terms cannot depend on y or z".into()));
        }
        if !self.noise.is_empty() && self.noise.len() != self.l {
            return Err(Error::Parse(format!("noise needs {} term lists, got {}", self.l, self.noise.len())));
        }
        let all = self.terminal.iter().chain(&self.driver).chain(self.noise.iter().flatten());
        for t in all.clone() {
            if let Some(c) = t.component() {
                if c >= d {
                    return Err(Error::Parse(format!("term {t:?} refers to component {c} but d = {d}")));
                }
            }
            if let Term::Z { component, .. } = t {
                if *component >= d {
                    return Err(Error::Parse(format!("z component {component} out of range for d = {d}")));
                }
            }
        }
        let markovian = !all.clone().any(Term::path_dependent);
        let dims = Dims { d, k: 1, l: self.l };
        let terminal = self.terminal.clone();
        let driver = self.driver.clone();
        let mut builder = Model::builder(self.name.clone(), dims)
            .drift(move |p| apply_affine(&b0, &b1, p.endpoint()))
            .diffusion(move |p| apply_affine(&s0, &s1, p.endpoint()))
            .terminal(move |p| vec![sum_terms(&terminal, p, 0.0, &[])])
            .driver(move |p, y, z| vec![sum_terms(&driver, p, y[0], z)])
            .lipschitz(self.lip_c, self.growth_m)
            .alpha(self.alpha)
            .markovian(markovian);
        if self.noise.iter().any(|ts| !ts.is_empty()) {
            let noise = self.noise.clone();
            builder = builder.noise(move |p, y, z| noise.iter().map(|ts| sum_terms(ts, p, y[0], z)).collect());
        }
        builder.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_space::TimeGrid;

    #[test]
    fn parses_and_evaluates() {
        let js = r#"{
            "name": "ou",
            "drift": {"linear": [-0.5]},
            "diffusion": {"constant": [0.3]},
            "terminal": [{"shape": "power", "coef": 1.0, "power": 2}, {"shape": "running_max", "coef": 0.5}],
            "driver": [{"shape": "cos_y", "coef": 1.0}, {"shape": "z", "coef": 0.5}],
            "noise": [[{"shape": "y", "coef": 0.2}]],
            "lip_c": 2.0, "growth_m": 1.0, "alpha": 0.4
        }"#;
        let spec: CustomModelSpec = serde_json::from_str(js).unwrap();
        let m = spec.build().unwrap();
        let g = TimeGrid::new(1.0, 2).unwrap();
        let p = Path::scalar(g, &[0.0, 2.0, 1.0]).unwrap();
        assert_eq!(m.drift(&p), vec![-0.5]);
        assert_eq!(m.diffusion(&p), vec![0.3]);
        assert_eq!(m.terminal(&p), vec![1.0 + 1.0]);
        assert!((m.driver(&p, &[0.0], &[2.0])[0] - 2.0).abs() < 1e-15);
        assert_eq!(m.noise(&p, &[5.0], &[0.0]), vec![1.0]);
        assert!(!m.markovian && !m.noise_free);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad_shape = r#"{"terminal": [{"shape": "exp", "coef": 1.0}], "lip_c": 1, "growth_m": 0, "alpha": 0.5}"#;
        let err = serde_json::from_str::<CustomModelSpec>(bad_shape).unwrap_err().to_string();
        assert!(err.contains("exp"), "{err}");
        let state_terminal: CustomModelSpec =
            serde_json::from_str(r#"{"terminal": [{"shape": "y", "coef": 1.0}], "lip_c": 1, "growth_m": 0, "alpha": 0.5}"#).unwrap();
        assert!(state_terminal.build().is_err());
        let bad_alpha: CustomModelSpec =
            serde_json::from_str(r#"{"terminal": [{"shape": "power", "coef": 1.0}], "lip_c": 1, "growth_m": 0, "alpha": 1.0}"#).unwrap();
        assert!(bad_alpha.build().is_err());
        let bad_component: CustomModelSpec =
            serde_json::from_str(r#"{"terminal": [{"shape": "power", "coef": 1.0, "component": 1}], "lip_c": 1, "growth_m": 0, "alpha": 0.5}"#).unwrap();
        assert!(bad_component.build().is_err());
    }
}
