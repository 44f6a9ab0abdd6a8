//! Sampled trajectories and seeded ensembles of them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Subdivision, TimeGrid};
use crate::par;
use crate::rng::RngContract;

/// A real-valued trajectory sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
}

impl Path {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "path has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                "path construction",
                format!("non-finite value at time index {i}"),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<TimeGrid>, value: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    /// Sample `f` at every grid time.
    pub fn from_fn(grid: Arc<TimeGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.times().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("paths are never empty")
    }

    /// Value at the last grid time `<= t`.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        self.grid
            .index_at_or_before(t)
            .map(|i| self.values[i])
            .ok_or_else(|| Error::invalid(format!("time {t} outside [0, {}]", self.grid.horizon())))
    }

    /// The restriction to grid times `<= t_max`.
    pub fn truncated(&self, t_max: f64) -> Result<Path> {
        let grid = Arc::new(self.grid.truncated(t_max)?);
        let n = grid.len();
        Path::new(grid, self.values[..n].to_vec())
    }

    /// Pointwise `self - other` on a shared grid prefix.
    pub fn minus(&self, other: &Path) -> Result<Path> {
        let n = self.len().min(other.len());
        if self.grid.times()[..n] != other.grid.times()[..n] {
            return Err(Error::invalid("paths live on different grids"));
        }
        let grid = if self.len() <= other.len() {
            self.grid.clone()
        } else {
            other.grid.clone()
        };
        let values = self.values[..n]
            .iter()
            .zip(&other.values[..n])
            .map(|(a, b)| a - b)
            .collect();
        Path::new(grid, values)
    }

    pub fn map_values(&self, f: impl Fn(f64, f64) -> f64) -> Result<Path> {
        let values = self
            .grid
            .times()
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| f(t, v))
            .collect();
        Path::new(self.grid.clone(), values)
    }

    /// `max_i |x_i - y_i|` over the common grid.
    pub fn sup_distance(&self, other: &Path) -> Result<f64> {
        if self.grid.times() != other.grid.times() {
            return Err(Error::invalid("sup distance needs a shared grid"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `sum (x_{i+1} - x_i)^2` over grid times `<= t`.
    pub fn realized_quadratic_variation(&self, t: f64) -> Result<f64> {
        let end = self
            .grid
            .index_at_or_before(t)
            .ok_or_else(|| Error::invalid(format!("time {t} outside [0, {}]", self.grid.horizon())))?;
        Ok(self.values[..=end].windows(2).map(|w| (w[1] - w[0]).powi(2)).sum())
    }
}

/// Piecewise-constant discretization along a subdivision: the value at `t` is
/// the path at the last subdivision point `<= t`, and at the horizon it is the
/// path's terminal value. Subdivision points off the grid are snapped to the
/// grid from below.
pub fn discretize_path(x: &Path, pi: &Subdivision) -> Result<Path> {
    let grid = x.grid();
    if pi.horizon() > grid.horizon() * (1.0 + 1e-9) {
        return Err(Error::invalid(format!(
            "subdivision reaches {} beyond the path horizon {}",
            pi.horizon(),
            grid.horizon()
        )));
    }
    let anchors = pi.snap_to(grid)?;
    let n = x.len();
    let mut values = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        while k + 1 < anchors.len() && anchors[k + 1] <= i {
            k += 1;
        }
        values.push(x.values[anchors[k]]);
    }
    values[n - 1] = x.last();
    Path::new(x.grid.clone(), values)
}

/// A seeded collection of paths on one grid. `indices[j]` is the stream index
/// path `j` was drawn from; it identifies the path under reordering.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: Arc<TimeGrid>,
    paths: Vec<Path>,
    indices: Vec<u64>,
    seed: u64,
}

impl PathEnsemble {
    /// Draw `count` paths, path `i` from `sampler(i)`. Parallel when the
    /// `parallel` feature is on; the result is identical either way.
    pub fn generate<F>(grid: Arc<TimeGrid>, rng: RngContract, count: usize, sampler: F) -> Result<Self>
    where
        F: Fn(u64) -> Result<Path> + Sync + Send,
    {
        if count == 0 {
            return Err(Error::invalid("an ensemble needs at least one path"));
        }
        let paths = par::try_map_range(count, |i| sampler(i as u64))?;
        Self::from_parts(grid, paths, (0..count as u64).collect(), rng.master_seed())
    }

    pub fn from_parts(grid: Arc<TimeGrid>, paths: Vec<Path>, indices: Vec<u64>, seed: u64) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one path"));
        }
        if paths.len() != indices.len() {
            return Err(Error::invalid("one stream index per path is required"));
        }
        if paths.iter().any(|p| p.grid.times() != grid.times()) {
            return Err(Error::invalid("ensemble members must share the grid"));
        }
        Ok(Self {
            grid,
            paths,
            indices,
            seed,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn path(&self, j: usize) -> &Path {
        &self.paths[j]
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    /// Values of every path at the last grid time `<= t`.
    pub fn values_at(&self, t: f64) -> Result<Vec<f64>> {
        let i = self
            .grid
            .index_at_or_before(t)
            .ok_or_else(|| Error::invalid(format!("time {t} outside [0, {}]", self.grid.horizon())))?;
        Ok(self.paths.iter().map(|p| p.values[i]).collect())
    }

    /// A derived ensemble, path by path. `f` receives the position and path.
    pub fn map<F>(&self, f: F) -> Result<PathEnsemble>
    where
        F: Fn(usize, &Path) -> Result<Path> + Sync + Send,
    {
        let paths = par::try_map_range(self.paths.len(), |j| f(j, &self.paths[j]))?;
        let grid = paths[0].grid.clone();
        Self::from_parts(grid, paths, self.indices.clone(), self.seed)
    }

    /// Reorder members; `order[j]` is the old position of the new `j`-th path.
    pub fn permuted(&self, order: &[usize]) -> Result<PathEnsemble> {
        if order.len() != self.paths.len() {
            return Err(Error::invalid("permutation length mismatch"));
        }
        let paths = order.iter().map(|&j| self.paths[j].clone()).collect();
        let indices = order.iter().map(|&j| self.indices[j]).collect();
        Self::from_parts(self.grid.clone(), paths, indices, self.seed)
    }
}
