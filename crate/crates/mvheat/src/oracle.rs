//! Reference fields: the Fourier series of the heat kernel on (0, 1) for a
//! point source, desired-state sampling on the dual time grid, and the
//! manufactured adjoint used for the convergence study.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::grid::SpaceTimeGrid;

pub const DEFAULT_TERMS: usize = 200;
const TAIL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub x0: f64,
    pub t0: f64,
    pub weight: f64,
}

impl PointSource {
    pub fn unit(x0: f64, t0: f64) -> Self {
        Self { x0, t0, weight: 1.0 }
    }
}

/// Bound on `sum_{m > n} 2 exp(-m^2 c)`.
#[inline]
fn tail_bound(n: usize, c: f64) -> f64 {
    let n1 = (n + 1) as f64;
    2.0 * (-n1 * n1 * c).exp() / (1.0 - (-(2.0 * n1 + 1.0) * c).exp())
}

/// Number of terms actually needed at time offset `dt` for the tail to drop
/// below the truncation tolerance, capped at `n_terms`.
fn terms_needed(dt: f64, weight: f64, n_terms: usize) -> usize {
    let c = PI * PI * dt;
    let mut n = 1;
    while n < n_terms && weight.abs() * tail_bound(n, c) >= TAIL_TOL {
        n += 1;
    }
    n
}

/// Heat equation on (0, 1) with homogeneous Dirichlet data, started by a
/// point source at `(x0, t0)`:
/// `y = w * sum_n 2 sin(n pi x0) sin(n pi x) exp(-n^2 pi^2 (t - t0))` for
/// `t > t0`, zero before.
pub fn fourier_heat_dirac(src: &PointSource, x: f64, t: f64, n_terms: usize) -> f64 {
    if t <= src.t0 {
        return 0.0;
    }
    let dt = t - src.t0;
    let n_max = terms_needed(dt, src.weight, n_terms);
    let mut s = 0.0;
    for n in 1..=n_max {
        let nf = n as f64;
        s += 2.0 * (nf * PI * src.x0).sin() * (nf * PI * x).sin() * (-nf * nf * PI * PI * dt).exp();
    }
    src.weight * s
}

/// Coefficients on the dual time grid: value `(j, k)` sits at
/// `(x_j, (t_{k-1} + t_k) / 2)`, stored in state ordering `(k-1) N_h + (j-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredState {
    pub n_h: usize,
    pub n_tau: usize,
    pub values: Vec<f64>,
}

impl DesiredState {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self { n_h: grid.n_h(), n_tau: grid.n_tau(), values: vec![0.0; grid.n_sigma()] }
    }

    /// Value at 1-based node `j` and interval `k`.
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[(k - 1) * self.n_h + j - 1]
    }

    pub fn check_against(&self, grid: &SpaceTimeGrid) -> Result<(), DataError> {
        if self.values.len() != grid.n_sigma() || self.n_h != grid.n_h() {
            return Err(DataError::Dimension { expected: grid.n_sigma(), got: self.values.len() });
        }
        Ok(())
    }

    fn validated(self) -> Result<Self, DataError> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { j: i % self.n_h + 1, k: i / self.n_h + 1 });
        }
        Ok(self)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * s).collect(), ..self.clone() }
    }
}

/// Samples `field` at the dual-grid points.
pub fn sample_desired_state<F: Fn(f64, f64) -> f64>(grid: &SpaceTimeGrid, field: F) -> Result<DesiredState, DataError> {
    let mut values = Vec::with_capacity(grid.n_sigma());
    for k in 1..=grid.n_tau() {
        let t = grid.midpoint(k);
        values.extend(grid.x.iter().map(|&x| field(x, t)));
    }
    DesiredState { n_h: grid.n_h(), n_tau: grid.n_tau(), values }.validated()
}

/// The point-source state sampled on the dual grid. Equivalent to
/// `sample_desired_state(grid, |x, t| fourier_heat_dirac(src, x, t, n))` but
/// shares the trigonometric tables across samples.
///
/// Fails if a sample point falls strictly less than half an interval after
/// the source time, where the truncated series is meaningless.
pub fn sample_fourier_dirac(grid: &SpaceTimeGrid, src: &PointSource, n_terms: usize) -> Result<DesiredState, DataError> {
    let nh = grid.n_h();
    for k in 1..=grid.n_tau() {
        let dt = grid.midpoint(k) - src.t0;
        if dt > 0.0 && dt < 0.5 * grid.tau[k - 1] * (1.0 - 1e-12) {
            return Err(DataError::TooCloseToSource { k });
        }
    }
    let coef: Vec<f64> = (1..=n_terms).map(|n| 2.0 * (n as f64 * PI * src.x0).sin()).collect();
    let sines: Vec<Vec<f64>> = grid.x.iter().map(|&x| (1..=n_terms).map(|n| (n as f64 * PI * x).sin()).collect()).collect();
    let mut values = vec![0.0; grid.n_sigma()];
    let mut decay = vec![0.0; n_terms];
    for k in 1..=grid.n_tau() {
        let t = grid.midpoint(k);
        if t <= src.t0 {
            continue;
        }
        let dt = t - src.t0;
        let n_max = terms_needed(dt, src.weight, n_terms);
        for n in 1..=n_max {
            let nf = n as f64;
            decay[n - 1] = coef[n - 1] * (-nf * nf * PI * PI * dt).exp();
        }
        let row = &mut values[(k - 1) * nh..k * nh];
        for (j, v) in row.iter_mut().enumerate() {
            let s: f64 = decay[..n_max].iter().zip(&sines[j][..n_max]).map(|(a, b)| a * b).sum();
            *v = src.weight * s;
        }
    }
    DesiredState { n_h: nh, n_tau: grid.n_tau(), values }.validated()
}

/// Manufactured adjoint `w(x,t) = -abar ((t - 1/2)^2 - 1)^2 ((2x - 1)^2 - 1)^2`
/// and its heat residual `Lw = -w_t - w_xx`.
pub fn manufactured_adjoint(abar: f64, x: f64, t: f64) -> (f64, f64) {
    let a = (t - 0.5) * (t - 0.5) - 1.0;
    let s = 2.0 * x - 1.0;
    let b = s * s - 1.0;
    let w = -abar * a * a * b * b;
    let w_t = -abar * 4.0 * a * (t - 0.5) * b * b;
    let w_xx = -abar * a * a * 8.0 * (4.0 * s * s + 2.0 * b);
    (w, -w_t - w_xx)
}

/// `y_d = y_true - |Lw|^{p-2} Lw` on the dual grid, with `y_true` the state of
/// the point source.
pub fn manufactured_desired_state(
    grid: &SpaceTimeGrid,
    abar: f64,
    src: &PointSource,
    n_terms: usize,
    p: f64,
) -> Result<DesiredState, DataError> {
    let mut yd = sample_fourier_dirac(grid, src, n_terms)?;
    let nh = grid.n_h();
    for k in 1..=grid.n_tau() {
        let t = grid.midpoint(k);
        for (j, &x) in grid.x.iter().enumerate() {
            let (_, lw) = manufactured_adjoint(abar, x, t);
            yd.values[(k - 1) * nh + j] -= lw.abs().powf(p - 2.0) * lw;
        }
    }
    yd.validated()
}
