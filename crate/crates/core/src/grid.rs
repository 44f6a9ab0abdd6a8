//! Time grids on `[0, T]` and the subdivisions laid over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when snapping a requested time onto a grid. Uniform
/// grids built as `i * T / n` carry one ulp of rounding, so an exact
/// comparison would snap `k * T / 2^l` one node too far to the left.
const SNAP_RTOL: f64 = 1e-9;

/// Strictly increasing times from `0` to the horizon `T`, at least two points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("a time grid needs at least two points"));
        }
        if times[0] != 0.0 {
            return Err(Error::invalid("a time grid must start at 0"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("grid times must be finite"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid times must be strictly increasing"));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    /// Number of steps, `len() - 1`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    pub fn mesh(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    fn tol(&self) -> f64 {
        SNAP_RTOL * self.horizon()
    }

    /// Index of the last grid time `<= t` (snapping from below).
    ///
    /// Returns `None` when `t` lies before the grid or beyond its horizon.
    pub fn index_at_or_before(&self, t: f64) -> Option<usize> {
        let tol = self.tol();
        if !t.is_finite() || t < -tol || t > self.horizon() + tol {
            return None;
        }
        let idx = self.times.partition_point(|&s| s <= t + tol);
        Some(idx.saturating_sub(1))
    }

    /// Index of a grid time equal to `t` up to the snapping tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.index_at_or_before(t)?;
        ((self.times[i] - t).abs() <= self.tol()).then_some(i)
    }

    /// True when `t -> T - t` maps the grid onto itself.
    pub fn is_symmetric(&self) -> bool {
        let n = self.times.len();
        let horizon = self.horizon();
        let tol = self.tol();
        (0..n).all(|i| (self.times[i] + self.times[n - 1 - i] - horizon).abs() <= tol)
    }

    /// The prefix of the grid up to the last time `<= t_max`.
    pub fn truncated(&self, t_max: f64) -> Result<TimeGrid> {
        let end = self
            .index_at_or_before(t_max)
            .ok_or_else(|| Error::invalid(format!("t_max = {t_max} outside the grid")))?;
        if end == 0 {
            return Err(Error::invalid(format!(
                "t_max = {t_max} is shorter than the first grid step"
            )));
        }
        TimeGrid::new(self.times[..=end].to_vec())
    }
}

/// `steps + 1` equally spaced points on `[0, horizon]`.
pub fn make_uniform_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if steps == 0 {
        return Err(Error::invalid("a uniform grid needs at least one step"));
    }
    let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * horizon / steps as f64).collect();
    times[steps] = horizon;
    TimeGrid::new(times)
}

/// Partition `0 = t_0 < t_1 < ... < t_{n+1} = T` used for discretizing a path
/// and for assembling the level-`n` compensator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subdivision {
    points: Vec<f64>,
    level: u32,
}

impl Subdivision {
    pub fn new(points: Vec<f64>, level: u32) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a subdivision needs at least two points"));
        }
        if points[0] != 0.0 {
            return Err(Error::invalid("a subdivision must start at 0"));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("subdivision points must be finite"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("subdivision points must be strictly increasing"));
        }
        Ok(Self { points, level })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().expect("subdivision is never empty")
    }

    pub fn intervals(&self) -> usize {
        self.points.len() - 1
    }

    pub fn mesh(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Grid indices of the points, each snapped to the nearest grid time from
    /// below. Consecutive duplicates (points closer than one grid step) are
    /// merged, so the result is strictly increasing.
    pub fn snap_to(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = Vec::with_capacity(self.points.len());
        for &p in &self.points {
            let i = grid.index_at_or_before(p).ok_or_else(|| {
                Error::invalid(format!(
                    "subdivision point {p} lies outside the grid [0, {}]",
                    grid.horizon()
                ))
            })?;
            if out.last() != Some(&i) {
                out.push(i);
            }
        }
        Ok(out)
    }
}

/// Points `k T / 2^level`, `k = 0..=2^level`. Levels refine: every point of
/// level `l` is a point of level `l + 1`.
pub fn make_dyadic_subdivision(level: u32, horizon: f64) -> Result<Subdivision> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if level > 40 {
        return Err(Error::invalid(format!("dyadic level {level} is too fine")));
    }
    let n = 1u64 << level;
    let mut points: Vec<f64> = (0..=n).map(|k| k as f64 * horizon / n as f64).collect();
    points[n as usize] = horizon;
    Subdivision::new(points, level)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_examples() {
        assert_eq!(make_uniform_grid(1.0, 2).unwrap().times(), &[0.0, 0.5, 1.0]);
        assert_eq!(make_uniform_grid(1.0, 1).unwrap().times(), &[0.0, 1.0]);
        assert_eq!(
            make_uniform_grid(0.5, 4).unwrap().times(),
            &[0.0, 0.125, 0.25, 0.375, 0.5]
        );
    }

    #[test]
    fn uniform_grid_rejects_bad_arguments() {
        assert!(matches!(make_uniform_grid(0.0, 4), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_uniform_grid(-1.0, 4), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_uniform_grid(1.0, 0), Err(Error::InvalidArgument(_))));
        assert!(make_uniform_grid(f64::NAN, 3).is_err());
    }

    #[test]
    fn grid_constructor_checks_invariants() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.2, 1.0]).is_ok());
    }

    #[test]
    fn dyadic_examples_and_refinement() {
        assert_eq!(make_dyadic_subdivision(1, 1.0).unwrap().points(), &[0.0, 0.5, 1.0]);
        assert_eq!(
            make_dyadic_subdivision(2, 1.0).unwrap().points(),
            &[0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(make_dyadic_subdivision(0, 2.0).unwrap().points(), &[0.0, 2.0]);
        for level in 0..8 {
            let coarse = make_dyadic_subdivision(level, 0.4).unwrap();
            let fine = make_dyadic_subdivision(level + 1, 0.4).unwrap();
            for p in coarse.points() {
                assert!(fine.points().contains(p), "level {level} point {p} missing");
            }
            assert!((fine.mesh() - coarse.mesh() / 2.0).abs() < 1e-15);
        }
        assert!(make_dyadic_subdivision(3, 0.0).is_err());
    }

    #[test]
    fn snapping_goes_to_the_left_neighbour() {
        let grid = make_uniform_grid(1.0, 10).unwrap();
        assert_eq!(grid.index_at_or_before(0.35), Some(3));
        assert_eq!(grid.index_at_or_before(0.3), Some(3));
        assert_eq!(grid.index_at_or_before(1.0), Some(10));
        assert_eq!(grid.index_at_or_before(1.5), None);
        assert_eq!(grid.index_of(0.7), Some(7));
        assert_eq!(grid.index_of(0.75), None);
    }

    #[test]
    fn snapped_dyadic_points_stay_nested() {
        let grid = make_uniform_grid(1.0, 1024).unwrap();
        for level in 2..7 {
            let coarse = make_dyadic_subdivision(level, 0.4).unwrap().snap_to(&grid).unwrap();
            let fine = make_dyadic_subdivision(level + 1, 0.4).unwrap().snap_to(&grid).unwrap();
            assert!(coarse.iter().all(|i| fine.contains(i)));
        }
    }

    #[test]
    fn symmetry_and_truncation() {
        let grid = make_uniform_grid(1.0, 1024).unwrap();
        assert!(grid.is_symmetric());
        assert!(!TimeGrid::new(vec![0.0, 0.1, 1.0]).unwrap().is_symmetric());
        let head = grid.truncated(0.4).unwrap();
        assert_eq!(head.steps(), 409);
        assert!(head.horizon() <= 0.4);
    }
}
