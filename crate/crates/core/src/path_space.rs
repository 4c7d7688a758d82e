//! Grid-representable elements of the path space.
//!
//! A [`Path`] is a càdlàg, piecewise-constant path on a uniform grid over
//! `[0, T]`, stopped at its current time `t`. Between grid points the path takes
//! the value at the greatest grid time `<= r`, so a bump of the endpoint
//! changes exactly one stored value and the sup norm is attained on the grid.
//!
//! Storage is shared: [`Path::restrict_to_index`] is O(1) and the simulation
//! code grows one path per scenario in place.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const TIME_TOL: f64 = 1e-9;

/// Uniform partition `t_i = i T / N` of `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Domain("grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, index: usize) -> f64 {
        self.horizon * index as f64 / self.steps as f64
    }

    /// Index of a grid time; errors when `t` is not (within 1e-9 relative) on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let scaled = t / self.dt();
        let idx = scaled.round();
        let tol = TIME_TOL * self.horizon.max(1.0);
        if !t.is_finite() || idx < 0.0 || idx > self.steps as f64 || (self.time(idx as usize) - t).abs() > tol {
            return Err(Error::GridAlignment(format!(
                "time {t} is not a point of the grid with T = {}, N = {}",
                self.horizon, self.steps
            )));
        }
        Ok(idx as usize)
    }

    pub fn same_spacing(&self, other: &TimeGrid) -> bool {
        (self.dt() - other.dt()).abs() <= 1e-12 * self.dt()
    }
}

/// The two parts of `d∞`: stopped-path sup distance plus `|t - s|^{1/2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathDistance {
    pub sup_component: f64,
    pub time_component: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Path {
    grid: TimeGrid,
    dim: usize,
    data: Arc<Vec<f64>>,
    len: usize,
}

impl PartialEq for Path {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.dim == other.dim && self.values() == other.values()
    }
}

impl Path {
    /// Builds a path from one value vector per grid point, starting at time 0.
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        let dim = values.first().map(Vec::len).ok_or_else(|| Error::Domain("a path needs at least one value".into()))?;
        let mut flat = Vec::with_capacity(values.len() * dim);
        for v in &values {
            check_dim(dim, v.len(), "path value")?;
            flat.extend_from_slice(v);
        }
        Self::from_flat(grid, dim, flat)
    }

    /// Row-major `len x dim` values.
    pub fn from_flat(grid: TimeGrid, dim: usize, flat: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("path dimension must be positive".into()));
        }
        if flat.is_empty() || flat.len() % dim != 0 {
            return Err(Error::Domain(format!("{} values do not form whole vectors of dimension {dim}", flat.len())));
        }
        let len = flat.len() / dim;
        if len > grid.steps() + 1 {
            return Err(Error::Domain(format!("{len} points exceed the {} grid points", grid.steps() + 1)));
        }
        Ok(Self {
            grid,
            dim,
            data: Arc::new(flat),
            len,
        })
    }

    /// Scalar path from a list of values.
    pub fn scalar(grid: TimeGrid, values: &[f64]) -> Result<Self> {
        Self::from_flat(grid, 1, values.to_vec())
    }

    /// The constant path `value` on `[0, t]`.
    pub fn constant(grid: TimeGrid, value: &[f64], t: f64) -> Result<Self> {
        let idx = grid.index_of(t)?;
        let flat = value.iter().copied().cycle().take(value.len() * (idx + 1)).collect();
        Self::from_flat(grid, value.len(), flat)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored grid points (current index + 1).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn current_index(&self) -> usize {
        self.len - 1
    }

    pub fn current_time(&self) -> f64 {
        self.grid.time(self.current_index())
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    /// Value stored at grid index `i`.
    pub fn value(&self, i: usize) -> &[f64] {
        assert!(i < self.len, "index {i} beyond path of length {}", self.len);
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The endpoint `γ(t)`.
    pub fn endpoint(&self) -> &[f64] {
        self.value(self.len - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.data[..self.len * self.dim]
    }

    pub fn iter_values(&self) -> impl Iterator<Item = &[f64]> {
        self.values().chunks_exact(self.dim)
    }

    /// Càdlàg evaluation: the value at the greatest grid time `<= r`.
    pub fn value_at(&self, r: f64) -> Result<&[f64]> {
        let t = self.current_time();
        let tol = TIME_TOL * self.grid.horizon().max(1.0);
        if !(r >= -tol && r <= t + tol) {
            return Err(Error::Domain(format!("time {r} outside [0, {t}]")));
        }
        let idx = ((r + tol) / self.dt()).floor().max(0.0) as usize;
        Ok(self.value(idx.min(self.current_index())))
    }

    /// `γ_t^x`: the path with its endpoint moved by `x`.
    pub fn vertical_bump(&self, x: &[f64]) -> Result<Path> {
        check_dim(self.dim, x.len(), "vertical bump")?;
        let mut flat = self.values().to_vec();
        let start = (self.len - 1) * self.dim;
        for (v, dx) in flat[start..].iter_mut().zip(x) {
            *v += dx;
        }
        Ok(Path {
            grid: self.grid,
            dim: self.dim,
            data: Arc::new(flat),
            len: self.len,
        })
    }

    /// `γ_{t,s}`: flat extension of the endpoint up to grid time `s`.
    pub fn horizontal_extend(&self, s: f64) -> Result<Path> {
        let t = self.current_time();
        if s < t - TIME_TOL * self.grid.horizon().max(1.0) {
            return Err(Error::Domain(format!("cannot extend a path at time {t} back to {s}")));
        }
        let idx = self.grid.index_of(s)?;
        Ok(self.extend_flat_to_index(idx))
    }

    /// Flat extension to grid index `idx >= current_index()`.
    pub fn extend_flat_to_index(&self, idx: usize) -> Path {
        assert!(idx >= self.current_index() && idx <= self.grid.steps());
        let mut out = self.clone();
        let end = self.endpoint().to_vec();
        for _ in self.len..=idx {
            out.push(&end);
        }
        out
    }

    /// `‖γ_t‖`, the sup of the Euclidean norm over `[0, t]`.
    pub fn sup_norm(&self) -> f64 {
        self.iter_values().map(euclidean).fold(0.0, f64::max)
    }

    /// `d∞(γ_t, γ̄_s)` on stopped paths; both paths must share spacing and dimension.
    pub fn dist(&self, other: &Path) -> Result<PathDistance> {
        check_dim(self.dim, other.dim, "path distance")?;
        if !self.grid.same_spacing(&other.grid) {
            return Err(Error::Domain("paths live on grids with different spacing".into()));
        }
        let n = self.len.max(other.len);
        let mut sup: f64 = 0.0;
        for j in 0..n {
            let a = self.value(j.min(self.len - 1));
            let b = other.value(j.min(other.len - 1));
            let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            sup = sup.max(d);
        }
        let time_component = (self.current_time() - other.current_time()).abs().sqrt();
        Ok(PathDistance {
            sup_component: sup,
            time_component,
            total: sup + time_component,
        })
    }

    /// The node-freezing map `γ^n`: nodes `t_i = anchor + i (T - anchor) / n`; the
    /// path is unchanged before `anchor`, held at the last node value on each node
    /// interval, and keeps its endpoint.
    pub fn discretize(&self, n: usize, anchor: f64) -> Result<Path> {
        if n == 0 {
            return Err(Error::Domain("discretization needs n >= 1 nodes".into()));
        }
        if anchor > self.current_time() + TIME_TOL * self.grid.horizon().max(1.0) {
            return Err(Error::Domain(format!(
                "anchor {anchor} lies after the current time {}",
                self.current_time()
            )));
        }
        let anchor_idx = self.grid.index_of(anchor)?;
        let stride = node_stride(self.grid, anchor_idx, n)?;
        Ok(self.discretize_indexed(anchor_idx, stride))
    }

    pub(crate) fn discretize_indexed(&self, anchor_idx: usize, stride: usize) -> Path {
        let cur = self.current_index();
        if cur <= anchor_idx {
            return self.clone();
        }
        let mut flat = Vec::with_capacity(self.len * self.dim);
        for j in 0..self.len {
            let src = if j < anchor_idx || j == cur {
                j
            } else {
                anchor_idx + (j - anchor_idx) / stride * stride
            };
            flat.extend_from_slice(self.value(src));
        }
        Path {
            grid: self.grid,
            dim: self.dim,
            data: Arc::new(flat),
            len: self.len,
        }
    }

    /// `γ_t` extracted from a longer path.
    pub fn restrict(&self, t: f64) -> Result<Path> {
        let idx = self.grid.index_of(t)?;
        if idx > self.current_index() {
            return Err(Error::Domain(format!(
                "cannot restrict a path at time {} to the later time {t}",
                self.current_time()
            )));
        }
        Ok(self.restrict_to_index(idx))
    }

    /// O(1) view of the path stopped at grid index `idx`.
    pub fn restrict_to_index(&self, idx: usize) -> Path {
        assert!(idx < self.len, "restrict index {idx} beyond length {}", self.len);
        Path {
            grid: self.grid,
            dim: self.dim,
            data: Arc::clone(&self.data),
            len: idx + 1,
        }
    }

    /// Appends the value at the next grid point.
    pub(crate) fn push(&mut self, value: &[f64]) {
        debug_assert_eq!(value.len(), self.dim);
        assert!(self.len <= self.grid.steps(), "path already reaches the horizon");
        let keep = self.len * self.dim;
        let data = Arc::make_mut(&mut self.data);
        data.truncate(keep);
        data.extend_from_slice(value);
        self.len += 1;
    }

    /// CSV with header `time,x_1,...,x_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("time".to_string())
            .chain((1..=self.dim).map(|i| format!("x_{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, v) in self.iter_values().enumerate() {
            write!(w, "{}", self.grid.time(i))?;
            for x in v {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the CSV layout of [`Path::write_csv`]. The horizon defaults to the
    /// last time in the file.
    pub fn read_csv<R: BufRead>(r: R, horizon: Option<f64>) -> Result<Path> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty path CSV".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"time") || cols.len() < 2 {
            return Err(Error::Parse(format!("bad path CSV header `{header}`")));
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut flat = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!("line {}: expected {} fields", lineno + 2, dim + 1)));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: `{s}`: {e}", lineno + 2)))
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                flat.push(parse(f)?);
            }
        }
        let grid = grid_from_times(&times, horizon)?;
        Path::from_flat(grid, dim, flat)
    }

    pub fn to_json(&self) -> PathJson {
        PathJson {
            dt: self.dt(),
            t: self.current_time(),
            values: self.iter_values().map(<[f64]>::to_vec).collect(),
            horizon: Some(self.grid.horizon()),
            steps: Some(self.grid.steps()),
        }
    }

    pub fn from_json(json: &PathJson) -> Result<Path> {
        let grid = match (json.horizon, json.steps) {
            (Some(h), Some(n)) => TimeGrid::new(h, n)?,
            (h, _) => {
                let steps_to_t = (json.t / json.dt).round() as usize;
                let horizon = h.unwrap_or(json.t);
                let steps = (horizon / json.dt).round() as usize;
                if steps_to_t + 1 != json.values.len() {
                    return Err(Error::Parse(format!(
                        "t = {} with dt = {} needs {} values, got {}",
                        json.t,
                        json.dt,
                        steps_to_t + 1,
                        json.values.len()
                    )));
                }
                TimeGrid::new(horizon, steps.max(1))?
            }
        };
        let path = Path::new(grid, json.values.clone())?;
        if (path.current_time() - json.t).abs() > TIME_TOL * grid.horizon().max(1.0) {
            return Err(Error::Parse(format!(
                "t = {} disagrees with {} values on the grid",
                json.t,
                json.values.len()
            )));
        }
        Ok(path)
    }
}

/// JSON form `{ "dt": ..., "t": ..., "values": [[...], ...] }`; `horizon` and
/// `steps` are written so the grid round-trips exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathJson {
    pub dt: f64,
    pub t: f64,
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

pub(crate) fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Grid steps between discretization nodes anchored at `anchor_idx`.
pub(crate) fn node_stride(grid: TimeGrid, anchor_idx: usize, n: usize) -> Result<usize> {
    let remaining = grid.steps() - anchor_idx;
    if remaining == 0 || remaining % n != 0 {
        return Err(Error::GridAlignment(format!(
            "{n} nodes do not divide the {remaining} grid steps between the anchor and the horizon"
        )));
    }
    Ok(remaining / n)
}

fn grid_from_times(times: &[f64], horizon: Option<f64>) -> Result<TimeGrid> {
    if times.is_empty() {
        return Err(Error::Parse("path CSV has no rows".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::Parse(format!("path must start at time 0, starts at {}", times[0])));
    }
    let (dt, steps_to_t) = if times.len() == 1 {
        match horizon {
            Some(h) => (h, 0),
            None => return Err(Error::Parse("a single-point path needs an explicit horizon".into())),
        }
    } else {
        let dt = times[1] - times[0];
        for (i, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-12_f64.max(1e-9 * dt) {
                return Err(Error::Parse(format!("non-uniform spacing at row {}", i + 2)));
            }
        }
        (dt, times.len() - 1)
    };
    let horizon = horizon.unwrap_or(times[times.len() - 1]);
    let steps = ((horizon / dt).round() as usize).max(steps_to_t).max(1);
    let grid = TimeGrid::new(horizon, steps)?;
    if !grid.same_spacing(&TimeGrid::new(dt * steps as f64, steps)?) {
        return Err(Error::Parse("horizon is not a multiple of the spacing".into()));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn half_grid() -> TimeGrid {
        TimeGrid::new(1.0, 2).unwrap()
    }

    fn p123() -> Path {
        Path::scalar(half_grid(), &[1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn value_at_is_cadlag() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let c = Path::constant(g, &[2.0], 1.0).unwrap();
        assert_eq!(c.value_at(0.37).unwrap(), &[2.0]);
        let p = p123();
        assert_eq!(p.value_at(0.5).unwrap(), &[2.0]);
        assert_eq!(p.value_at(0.74).unwrap(), &[2.0]);
        assert_eq!(p.value_at(1.0).unwrap(), &[3.0]);
        let err = p.value_at(1.5).unwrap_err().to_string();
        assert!(err.contains("1.5") && err.contains('1'), "{err}");
        assert!(p.restrict(0.5).unwrap().value_at(0.7).is_err());
    }

    #[test]
    fn vertical_bump_moves_only_the_endpoint() {
        let p = p123();
        assert_eq!(p.vertical_bump(&[0.5]).unwrap().values(), &[1.0, 2.0, 3.5]);
        assert_eq!(p.vertical_bump(&[0.0]).unwrap(), p);
        let g = TimeGrid::new(1.0, 1).unwrap();
        let q = Path::new(g, vec![vec![0.3, 0.4], vec![1.0, -1.0]]).unwrap();
        let b = q.vertical_bump(&[0.0, 2.0]).unwrap();
        assert_eq!(b.endpoint(), &[1.0, 1.0]);
        assert_eq!(b.value(0), &[0.3, 0.4]);
        assert!(matches!(q.vertical_bump(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn horizontal_extend_is_flat() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = Path::scalar(g, &[0.0, 1.0, 2.0]).unwrap();
        let e = p.horizontal_extend(1.0).unwrap();
        assert_eq!(e.values(), &[0.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(e.current_time(), 1.0);
        assert_eq!(p.horizontal_extend(0.5).unwrap(), p);
        let c = Path::constant(g, &[7.0], 0.25).unwrap();
        assert_eq!(c.horizontal_extend(0.75).unwrap(), Path::constant(g, &[7.0], 0.75).unwrap());
        assert!(matches!(p.horizontal_extend(0.25), Err(Error::Domain(_))));
        assert!(matches!(p.horizontal_extend(0.6), Err(Error::GridAlignment(_))));
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(p123().sup_norm(), 3.0);
        let g = TimeGrid::new(1.0, 1).unwrap();
        assert_eq!(Path::scalar(g, &[-4.0, 1.0]).unwrap().sup_norm(), 4.0);
        assert_eq!(Path::constant(g, &[0.0, 0.0], 1.0).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn distance_examples() {
        let g = TimeGrid::new(1.0, 25).unwrap();
        let a = Path::constant(g, &[0.0], 1.0).unwrap();
        let b = Path::constant(g, &[0.0], 0.64).unwrap();
        let d = a.dist(&b).unwrap();
        assert_eq!(d.sup_component, 0.0);
        assert!((d.time_component - 0.6).abs() < 1e-12);
        assert!((d.total - 0.6).abs() < 1e-12);
        assert_eq!(a.dist(&a).unwrap().total, 0.0);
        let one = Path::constant(g, &[1.0], 1.0).unwrap();
        let three = Path::constant(g, &[3.0], 1.0).unwrap();
        let d = one.dist(&three).unwrap();
        assert_eq!((d.sup_component, d.time_component, d.total), (2.0, 0.0, 2.0));
        let other = Path::constant(TimeGrid::new(1.0, 10).unwrap(), &[1.0], 1.0).unwrap();
        assert!(one.dist(&other).is_err());
    }

    #[test]
    fn discretize_examples() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let p = Path::scalar(g, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(p.discretize(2, 0.0).unwrap(), p);
        assert_eq!(p.discretize(1, 0.0).unwrap().values(), &[0.0, 0.0, 1.0]);
        let c = Path::constant(TimeGrid::new(1.0, 8).unwrap(), &[4.0], 1.0).unwrap();
        for n in [1, 2, 4, 8] {
            assert_eq!(c.discretize(n, 0.0).unwrap(), c);
        }
        assert!(matches!(p.discretize(0, 0.0), Err(Error::Domain(_))));
        let g3 = TimeGrid::new(1.0, 3).unwrap();
        let q = Path::scalar(g3, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(q.discretize(2, 0.0), Err(Error::GridAlignment(_))));
    }

    #[test]
    fn discretize_keeps_prefix_and_endpoint() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let p = Path::scalar(g, &[9.0, 8.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        // anchor at 0.25 (index 2): 6 remaining steps, n = 3 -> stride 2
        let q = p.discretize(3, 0.25).unwrap();
        assert_eq!(q.values(), &[9.0, 8.0, 1.0, 1.0, 3.0, 3.0, 5.0]);
    }

    #[test]
    fn restrict_examples() {
        let p = p123();
        assert_eq!(p.restrict(1.0).unwrap(), p);
        assert_eq!(p.restrict(0.5).unwrap().values(), &[1.0, 2.0]);
        assert_eq!(p.restrict(0.0).unwrap().values(), &[1.0]);
        assert!(matches!(p.restrict(0.3), Err(Error::GridAlignment(_))));
    }

    #[test]
    fn push_after_restrict_does_not_clobber_the_original() {
        let p = p123();
        let mut q = p.restrict_to_index(0);
        q.push(&[10.0]);
        assert_eq!(q.values(), &[1.0, 10.0]);
        assert_eq!(p.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn csv_and_json_round_trip_bit_exact() {
        let g = TimeGrid::new(1.3, 7).unwrap();
        let vals = vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 2.5e17], vec![f64::MIN_POSITIVE, -0.0]];
        let p = Path::new(g, vals).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("time,x_1,x_2\n"));
        let back = Path::read_csv(&buf[..], Some(1.3)).unwrap();
        assert_eq!(back.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   p.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        let js = serde_json::to_string(&p.to_json()).unwrap();
        let back: PathJson = serde_json::from_str(&js).unwrap();
        assert_eq!(Path::from_json(&back).unwrap(), p);
        let minimal: PathJson = serde_json::from_str(r#"{"dt":0.5,"t":1.0,"values":[[1],[2],[3]]}"#).unwrap();
        assert_eq!(Path::from_json(&minimal).unwrap(), p123());
    }

    fn arb_path(max_steps: usize) -> impl Strategy<Value = Path> {
        (0..=max_steps, prop::collection::vec(-5.0f64..5.0, max_steps + 1)).prop_map(move |(cur, vals)| {
            let g = TimeGrid::new(1.0, max_steps).unwrap();
            Path::scalar(g, &vals[..=cur]).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn metric_axioms(a in arb_path(12), b in arb_path(12), c in arb_path(12)) {
            prop_assert_eq!(a.dist(&a).unwrap().total, 0.0);
            let ab = a.dist(&b).unwrap().total;
            let ba = b.dist(&a).unwrap().total;
            prop_assert!((ab - ba).abs() <= 1e-12);
            let ac = a.dist(&c).unwrap().total;
            let cb = c.dist(&b).unwrap().total;
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn bump_inverse(a in arb_path(10), x in -3.0f64..3.0) {
            let back = a.vertical_bump(&[x]).unwrap().vertical_bump(&[-x]).unwrap();
            // floating point: (v + x) - x is exact when |x| and |v| share scale, so compare tightly
            for (u, v) in back.values().iter().zip(a.values()) {
                prop_assert!((u - v).abs() <= 1e-15 * (1.0 + v.abs() + x.abs()));
            }
            prop_assert_eq!(&back.values()[..a.len() - 1], &a.values()[..a.len() - 1]);
        }

        #[test]
        fn extension_keeps_sup_norm(a in arb_path(10), extra in 0usize..10) {
            let idx = (a.current_index() + extra).min(10);
            prop_assert_eq!(a.extend_flat_to_index(idx).sup_norm(), a.sup_norm());
        }

        #[test]
        fn discretize_is_idempotent(vals in prop::collection::vec(-5.0f64..5.0, 17), n in prop::sample::select(vec![1usize, 2, 4, 8, 16])) {
            let g = TimeGrid::new(1.0, 16).unwrap();
            let p = Path::scalar(g, &vals).unwrap();
            let once = p.discretize(n, 0.0).unwrap();
            prop_assert_eq!(once.discretize(n, 0.0).unwrap(), once);
        }

        #[test]
        fn discretization_error_shrinks_on_piecewise_linear_paths(
            slopes in prop::collection::vec(0.0f64..2.0, 4),
            sign in prop::sample::select(vec![-1.0, 1.0]),
            wiggle in prop::collection::vec(-2.0f64..2.0, 4),
        ) {
            let build = |sl: &[f64]| {
                let mut vals = vec![0.0];
                for i in 0..32 {
                    let last = *vals.last().unwrap();
                    vals.push(last + sl[i / 8] / 32.0);
                }
                Path::scalar(TimeGrid::new(1.0, 32).unwrap(), &vals).unwrap()
            };
            // monotone pieces: the error is the largest increment inside a node
            // interval and can only shrink as nodes are added
            let signed: Vec<f64> = slopes.iter().map(|s| sign * s).collect();
            let p = build(&signed);
            let mut prev = f64::INFINITY;
            for n in [1usize, 2, 4, 8, 16, 32] {
                let e = p.discretize(n, 0.0).unwrap().dist(&p).unwrap().total;
                prop_assert!(e <= prev + 1e-12);
                prev = e;
            }
            prop_assert_eq!(prev, 0.0);
            // arbitrary slopes still converge, and the error is bounded by the
            // total variation over a coarse node interval
            let q = build(&wiggle);
            for n in [1usize, 2, 4, 8, 16] {
                let e = q.discretize(n, 0.0).unwrap().dist(&q).unwrap().total;
                let tv = wiggle.iter().map(|s| s.abs()).fold(0.0, f64::max) / n as f64;
                prop_assert!(e <= tv + 1e-12);
            }
            prop_assert_eq!(q.discretize(32, 0.0).unwrap().dist(&q).unwrap().total, 0.0);
        }
    }
}
