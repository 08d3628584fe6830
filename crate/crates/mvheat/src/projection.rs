//! Projections of arbitrary atomic measures onto the discrete control spaces
//! and the matching nodal interpolants of continuous functions.
//!
//! `upsilon_h` maps `u0` to `sum_j delta_{x_j} int e_j du0` over the control
//! nodes, `upsilon_sigma` maps `u` to `sum_{jk} delta_{(x_j,t_k)} int e_j e_k du`.
//! Both preserve the pairing with discrete test functions and do not
//! increase the total variation norm.

use crate::grid::{IndexSets, SpaceTimeGrid};

/// A finite signed sum of point masses in space-time.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    pub atoms: Vec<(f64, f64, f64)>,
}

/// A finite signed sum of point masses in space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMeasure {
    pub atoms: Vec<(f64, f64)>,
}

impl AtomicMeasure {
    pub fn norm(&self) -> f64 {
        self.atoms.iter().map(|a| a.2.abs()).sum()
    }
}

impl SpatialMeasure {
    pub fn norm(&self) -> f64 {
        self.atoms.iter().map(|a| a.1.abs()).sum()
    }
}

/// Hat function over a strictly increasing node list, centred at `nodes[i]`.
pub fn hat(nodes: &[f64], i: usize, s: f64) -> f64 {
    let c = nodes[i];
    if i > 0 && s >= nodes[i - 1] && s <= c {
        return (s - nodes[i - 1]) / (c - nodes[i - 1]);
    }
    if i + 1 < nodes.len() && s >= c && s <= nodes[i + 1] {
        return (nodes[i + 1] - s) / (nodes[i + 1] - c);
    }
    if s == c {
        1.0
    } else {
        0.0
    }
}

fn spatial_nodes(grid: &SpaceTimeGrid) -> Vec<f64> {
    let mut n = vec![grid.a];
    n.extend_from_slice(&grid.x);
    n.push(grid.b);
    n
}

/// Spatial hat of 1-based interior node `j`.
pub fn hat_x(grid: &SpaceTimeGrid, j: usize, x: f64) -> f64 {
    hat(&spatial_nodes(grid), j, x)
}

/// Temporal hat of time point `t_k`.
pub fn hat_t(grid: &SpaceTimeGrid, k: usize, t: f64) -> f64 {
    hat(&grid.t, k, t)
}

/// Coefficients of `Upsilon_sigma u`, one per entry of `sets.sigma`.
pub fn upsilon_sigma(grid: &SpaceTimeGrid, sets: &IndexSets, u: &AtomicMeasure) -> Vec<f64> {
    let nodes = spatial_nodes(grid);
    sets.sigma.iter().map(|&(j, k)| u.atoms.iter().map(|&(x, t, c)| c * hat(&nodes, j, x) * hat(&grid.t, k, t)).sum()).collect()
}

/// Coefficients of `Upsilon_h u0`, one per entry of `sets.h`.
pub fn upsilon_h(grid: &SpaceTimeGrid, sets: &IndexSets, u0: &SpatialMeasure) -> Vec<f64> {
    let nodes = spatial_nodes(grid);
    sets.h.iter().map(|&j| u0.atoms.iter().map(|&(x, c)| c * hat(&nodes, j, x)).sum()).collect()
}

/// `v(x, t) = sum_{(j,k) in I_sigma} v_jk e_j(x) e_k(t)`.
pub fn eval_sigma(grid: &SpaceTimeGrid, sets: &IndexSets, v: &[f64], x: f64, t: f64) -> f64 {
    let nodes = spatial_nodes(grid);
    sets.sigma.iter().zip(v).map(|(&(j, k), c)| c * hat(&nodes, j, x) * hat(&grid.t, k, t)).sum()
}

/// `v(x) = sum_{j in I_h} v_j e_j(x)`.
pub fn eval_h(grid: &SpaceTimeGrid, sets: &IndexSets, v: &[f64], x: f64) -> f64 {
    let nodes = spatial_nodes(grid);
    sets.h.iter().zip(v).map(|(&j, c)| c * hat(&nodes, j, x)).sum()
}

/// Nodal interpolant coefficients `f(x_j, t_k)` on `I_sigma`.
pub fn pi_sigma<F: Fn(f64, f64) -> f64>(grid: &SpaceTimeGrid, sets: &IndexSets, f: F) -> Vec<f64> {
    sets.sigma.iter().map(|&(j, k)| f(grid.x[j - 1], grid.t[k])).collect()
}

pub fn pi_h<F: Fn(f64) -> f64>(grid: &SpaceTimeGrid, sets: &IndexSets, f: F) -> Vec<f64> {
    sets.h.iter().map(|&j| f(grid.x[j - 1])).collect()
}

/// `<u, v>` for a space-time measure and a continuous function.
pub fn pair<F: Fn(f64, f64) -> f64>(u: &AtomicMeasure, f: F) -> f64 {
    u.atoms.iter().map(|&(x, t, c)| c * f(x, t)).sum()
}

/// `<Upsilon u, f>`: the projected measure sits on the grid points.
pub fn pair_projected<F: Fn(f64, f64) -> f64>(grid: &SpaceTimeGrid, sets: &IndexSets, coeffs: &[f64], f: F) -> f64 {
    sets.sigma.iter().zip(coeffs).map(|(&(j, k), c)| c * f(grid.x[j - 1], grid.t[k])).sum()
}
