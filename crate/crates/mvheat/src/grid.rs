//! Tensor-product space-time mesh on `(a, b) x (0, T)` and the index sets of
//! the control region.
//!
//! Spatial nodes are the interior nodes of an equidistant P1 mesh (homogeneous
//! Dirichlet data, so boundary nodes carry no unknowns). Time points are
//! supplied explicitly; [`SpaceTimeGrid::equidistant`] covers the usual case.

use serde::{Deserialize, Serialize};

use crate::error::GridError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub a: f64,
    pub b: f64,
    pub t_end: f64,
    /// Interior nodes `x_1 < ... < x_Nh`.
    pub x: Vec<f64>,
    /// Time points `0 = t_0 < ... < t_Ntau = T`.
    pub t: Vec<f64>,
    /// Step sizes, `tau[k-1] = t_k - t_{k-1}`.
    pub tau: Vec<f64>,
    pub h: f64,
}

impl SpaceTimeGrid {
    /// Builds a grid from `n_h` equidistant interior nodes and an explicit
    /// list of time points.
    pub fn new(a: f64, b: f64, n_h: usize, time_points: &[f64]) -> Result<Self, GridError> {
        if n_h == 0 {
            return Err(GridError::NoNodes);
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(GridError::BadInterval { a, b });
        }
        if time_points.len() < 2 {
            return Err(GridError::TooFewTimePoints(time_points.len()));
        }
        if time_points[0] != 0.0 {
            return Err(GridError::TimeOrigin(time_points[0]));
        }
        for (k, w) in time_points.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(GridError::NonMonotoneTime { k: k + 1 });
            }
        }
        let h = (b - a) / (n_h + 1) as f64;
        let x = (1..=n_h).map(|j| a + j as f64 * h).collect();
        let tau = time_points.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { a, b, t_end: *time_points.last().unwrap(), x, t: time_points.to_vec(), tau, h })
    }

    /// Equidistant grid with `n_tau` steps of size `T / n_tau`.
    pub fn equidistant(a: f64, b: f64, t_end: f64, n_h: usize, n_tau: usize) -> Result<Self, GridError> {
        if n_tau == 0 || !(t_end > 0.0) {
            return Err(GridError::TooFewTimePoints(n_tau + 1));
        }
        let dt = t_end / n_tau as f64;
        let mut t: Vec<f64> = (0..=n_tau).map(|k| k as f64 * dt).collect();
        t[n_tau] = t_end;
        Self::new(a, b, n_h, &t)
    }

    pub fn n_h(&self) -> usize {
        self.x.len()
    }

    pub fn n_tau(&self) -> usize {
        self.tau.len()
    }

    /// `N_sigma = N_h * N_tau`.
    pub fn n_sigma(&self) -> usize {
        self.n_h() * self.n_tau()
    }

    /// Midpoint of interval `I_k` (1-based `k`).
    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.t[k - 1] + self.t[k])
    }

    /// Tolerance used for closed-region membership: zero when every
    /// coordinate involved is an exact dyadic rational, a relative epsilon
    /// otherwise.
    fn membership_tol(&self, region: &ControlRegion) -> f64 {
        let exact =
            [self.a, self.b, self.h, region.x_lo, region.x_hi, region.t_lo, region.t_hi].iter().chain(self.t.iter()).all(|&v| is_dyadic(v));
        if exact {
            0.0
        } else {
            1e-12 * (self.b - self.a).max(self.t_end)
        }
    }
}

/// True if `v` is `m / 2^e` with `e <= 40`, i.e. representable without
/// rounding in the membership comparisons we care about.
fn is_dyadic(v: f64) -> bool {
    let s = v * (1u64 << 40) as f64;
    s.fract() == 0.0 && s.abs() < 2f64.powi(52)
}

/// The space-time control region `Q_c = (x_lo, x_hi) x (t_lo, t_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRegion {
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl ControlRegion {
    pub fn validate(&self, grid: &SpaceTimeGrid) -> Result<(), GridError> {
        let ok = grid.a < self.x_lo
            && self.x_lo < self.x_hi
            && self.x_hi < grid.b
            && 0.0 < self.t_lo
            && self.t_lo < self.t_hi
            && self.t_hi < grid.t_end;
        if ok {
            Ok(())
        } else {
            Err(GridError::RegionNotCompact(*self))
        }
    }
}

/// Index sets of the control region. Node indices `j` are 1-based, time
/// indices follow the text: `k` in `sigma` is a time-point index
/// (`t_k`, `0 <= k <= N_tau`), `k` in `tau` is an interval index (`I_k`,
/// `1 <= k <= N_tau`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    pub h: Vec<usize>,
    pub sigma: Vec<(usize, usize)>,
    pub tau: Vec<usize>,
}

pub fn control_index_sets(grid: &SpaceTimeGrid, region: &ControlRegion) -> Result<IndexSets, GridError> {
    region.validate(grid)?;
    let tol = grid.membership_tol(region);
    let in_x = |x: f64| x >= region.x_lo - tol && x <= region.x_hi + tol;
    let in_t = |t: f64| t >= region.t_lo - tol && t <= region.t_hi + tol;

    let h: Vec<usize> = (1..=grid.n_h()).filter(|&j| in_x(grid.x[j - 1])).collect();
    let times: Vec<usize> = (0..=grid.n_tau()).filter(|&k| in_t(grid.t[k])).collect();
    let mut sigma = Vec::with_capacity(h.len() * times.len());
    for &k in &times {
        for &j in &h {
            sigma.push((j, k));
        }
    }
    let tau = (1..=grid.n_tau()).filter(|&k| grid.t[k - 1] >= region.t_lo - tol && grid.t[k] <= region.t_hi + tol).collect();
    if h.is_empty() || sigma.is_empty() {
        return Err(GridError::TooCoarse);
    }
    Ok(IndexSets { h, sigma, tau })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_grid_nodes() {
        let g = SpaceTimeGrid::equidistant(0.0, 1.0, 1.5, 3, 12).unwrap();
        assert_eq!(g.x, vec![0.25, 0.5, 0.75]);
        assert!(g.tau.iter().all(|&t| t == 0.125));
        assert_eq!(g.h, 0.25);
    }

    #[test]
    fn single_node_grid() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 1, &[0.0, 1.0]).unwrap();
        assert_eq!(g.x, vec![0.5]);
        assert_eq!(g.tau, vec![1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(SpaceTimeGrid::new(0.0, 1.0, 0, &[0.0, 1.0]), Err(GridError::NoNodes)));
        assert!(matches!(SpaceTimeGrid::new(0.0, 1.0, 2, &[0.0, 0.5, 0.5, 1.0]), Err(GridError::NonMonotoneTime { k: 2 })));
    }

    #[test]
    fn dyadic_detection() {
        assert!(is_dyadic(0.375));
        assert!(is_dyadic(1.25));
        assert!(!is_dyadic(0.1));
    }

    #[test]
    fn empty_tau_set() {
        let g = SpaceTimeGrid::equidistant(0.0, 1.0, 1.5, 3, 12).unwrap();
        let r = ControlRegion { x_lo: 0.25, x_hi: 0.75, t_lo: 1.3, t_hi: 1.4 };
        let s = control_index_sets(&g, &r).unwrap();
        assert!(s.tau.is_empty());
    }
}
