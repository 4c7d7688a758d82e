use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::path_space::Path;

/// Scalar summaries of the path history up to the current node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "component", rename_all = "snake_case")]
pub enum StateFeature {
    Endpoint(usize),
    RunningMax(usize),
    /// Left-point sum, matching the registry's running integral.
    RunningIntegral(usize),
    /// `sqrt(running max - current value)`.
    SqrtDrawdown(usize),
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpec {
    /// `X(t_i)` only.
    Endpoint,
    /// `X(t_i)`, square-root drawdown and running integral of every component.
    PathSummary,
    Custom(Vec<StateFeature>),
}

/// Polynomial features of the path state, optionally augmented by linear
/// terms in the future backward-noise sums `Σ_{j >= i} ΔB_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub spec: FeatureSpec,
    #[serde(default = "default_degree")]
    pub degree: u32,
    /// `None` adds the future-B terms exactly when the model has a noise term.
    #[serde(default)]
    pub future_b: Option<bool>,
}

fn default_degree() -> u32 {
    2
}

impl RegressionBasis {
    pub fn default_for(model: &Model) -> Self {
        RegressionBasis {
            spec: if model.markovian { FeatureSpec::Endpoint } else { FeatureSpec::PathSummary },
            degree: 2,
            future_b: None,
        }
    }

    pub fn with_degree(mut self, degree: u32) -> Self {
        self.degree = degree;
        self
    }
}

/// Maximum feature count per scenario.
pub const SCENARIOS_PER_FEATURE: usize = 50;

/// Concrete feature map for a fixed model: base state variables, monomial
/// exponents (intercept first) and the optional future-B block.
#[derive(Clone, Debug)]
pub(crate) struct FeatureMap {
    state: Vec<StateFeature>,
    exponents: Vec<Vec<u32>>,
    future_b: usize,
}

fn monomials(vars: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0; vars]];
    for total in 1..=degree {
        // compositions of `total` into `vars` parts, lexicographically descending
        let mut cur = vec![0u32; vars];
        fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if i + 1 == cur.len() {
                cur[i] = left;
                out.push(cur.clone());
                return;
            }
            for e in (0..=left).rev() {
                cur[i] = e;
                rec(i + 1, left - e, cur, out);
            }
        }
        if vars > 0 {
            rec(0, total, &mut cur, &mut out);
        }
    }
    out
}

impl FeatureMap {
    pub(crate) fn new(basis: &RegressionBasis, model: &Model) -> Result<Self> {
        let d = model.dims.d;
        let state: Vec<StateFeature> = match &basis.spec {
            FeatureSpec::Endpoint => (0..d).map(StateFeature::Endpoint).collect(),
            FeatureSpec::PathSummary => (0..d)
                .flat_map(|c| [StateFeature::Endpoint(c), StateFeature::SqrtDrawdown(c), StateFeature::RunningIntegral(c)])
                .collect(),
            FeatureSpec::Custom(list) => list.clone(),
        };
        for f in &state {
            let c = match f {
                StateFeature::Endpoint(c)
                | StateFeature::RunningMax(c)
                | StateFeature::RunningIntegral(c)
                | StateFeature::SqrtDrawdown(c) => *c,
                StateFeature::Time => 0,
            };
            if c >= d {
                return Err(Error::Precondition(format!("feature {f:?} refers to component {c} but d = {d}")));
            }
        }
        let future_b = if basis.future_b.unwrap_or(!model.noise_free) { model.dims.l } else { 0 };
        Ok(FeatureMap { exponents: monomials(state.len(), basis.degree), state, future_b })
    }

    pub(crate) fn len(&self) -> usize {
        self.exponents.len() + self.future_b
    }

    pub(crate) fn state_len(&self) -> usize {
        self.state.len()
    }

    pub(crate) fn uses_future_b(&self) -> bool {
        self.future_b > 0
    }

    pub(crate) fn names(&self) -> Vec<String> {
        let base: Vec<String> = self
            .state
            .iter()
            .map(|f| match f {
                StateFeature::Endpoint(c) => format!("x{}", c + 1),
                StateFeature::RunningMax(c) => format!("max{}", c + 1),
                StateFeature::RunningIntegral(c) => format!("int{}", c + 1),
                StateFeature::SqrtDrawdown(c) => format!("sqrtdd{}", c + 1),
                StateFeature::Time => "t".into(),
            })
            .collect();
        let mut names: Vec<String> = self
            .exponents
            .iter()
            .map(|e| {
                let parts: Vec<String> = e
                    .iter()
                    .zip(&base)
                    .filter(|(p, _)| **p > 0)
                    .map(|(p, b)| if *p == 1 { b.clone() } else { format!("{b}^{p}") })
                    .collect();
                if parts.is_empty() { "1".into() } else { parts.join("*") }
            })
            .collect();
        names.extend((0..self.future_b).map(|j| format!("future_b{}", j + 1)));
        names
    }

    /// Base state variables at every node of `path`, node-major (`(len) x state_len`).
    pub(crate) fn state_track(&self, path: &Path) -> Vec<f64> {
        let v = self.state.len();
        let d = path.dim();
        let dt = path.dt();
        let mut out = Vec::with_capacity(path.len() * v);
        let mut max = vec![f64::NEG_INFINITY; d];
        let mut int = vec![0.0; d];
        let mut prev: Option<&[f64]> = None;
        for (i, x) in path.iter_values().enumerate() {
            if let Some(p) = prev {
                for c in 0..d {
                    int[c] += p[c] * dt;
                }
            }
            for c in 0..d {
                max[c] = max[c].max(x[c]);
            }
            for f in &self.state {
                out.push(match *f {
                    StateFeature::Endpoint(c) => x[c],
                    StateFeature::RunningMax(c) => max[c],
                    StateFeature::RunningIntegral(c) => int[c],
                    StateFeature::SqrtDrawdown(c) => (max[c] - x[c]).max(0.0).sqrt(),
                    StateFeature::Time => path.grid().time(i),
                });
            }
            prev = Some(x);
        }
        out
    }

    /// Writes one feature row from the state variables and future-B sums.
    pub(crate) fn write_row(&self, state: &[f64], future_b: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = e.iter().zip(state).map(|(p, s)| s.powi(*p as i32)).product();
        }
        out[self.exponents.len()..].copy_from_slice(&future_b[..self.future_b]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Dims;
    use crate::path_space::TimeGrid;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn monomial_counts() {
        for v in 1..5 {
            for deg in 0..4u32 {
                assert_eq!(monomials(v, deg).len(), binom(v + deg as usize, deg as usize));
            }
        }
        assert_eq!(monomials(2, 2), vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn default_bases_follow_model_structure() {
        let markov = Model::builder("m", Dims { d: 1, k: 1, l: 1 }).terminal(|p| p.endpoint().to_vec()).build().unwrap();
        let fm = FeatureMap::new(&RegressionBasis::default_for(&markov), &markov).unwrap();
        assert_eq!(fm.names(), ["1", "x1", "x1^2"]);
        let noisy = markov.to_builder().noise(|_, y, _| y.to_vec()).markovian(false).build().unwrap();
        let fm = FeatureMap::new(&RegressionBasis::default_for(&noisy), &noisy).unwrap();
        assert_eq!(fm.len(), 10 + 1);
        assert!(fm.uses_future_b());
        assert_eq!(fm.names()[10], "future_b1");
    }

    #[test]
    fn state_track_matches_direct_summaries() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = Path::scalar(g, &[1.0, 3.0, 2.0, 5.0]).unwrap();
        let m = Model::builder("m", Dims { d: 1, k: 1, l: 1 }).terminal(|p| p.endpoint().to_vec()).build().unwrap();
        let basis = RegressionBasis { spec: FeatureSpec::Custom(vec![StateFeature::RunningMax(0), StateFeature::RunningIntegral(0), StateFeature::Time]), degree: 1, future_b: Some(false) };
        let fm = FeatureMap::new(&basis, &m).unwrap();
        let track = fm.state_track(&p);
        assert_eq!(track.len(), 4 * 3);
        assert_eq!(&track[9..], &[5.0, (1.0 + 3.0 + 2.0) * 0.25, 0.75]);
        let mut row = vec![0.0; fm.len()];
        fm.write_row(&track[9..], &[], &mut row);
        assert_eq!(row, vec![1.0, 5.0, 1.5, 0.75]);
        let bad = RegressionBasis { spec: FeatureSpec::Custom(vec![StateFeature::Endpoint(1)]), degree: 1, future_b: None };
        assert!(FeatureMap::new(&bad, &m).is_err());
    }
}
