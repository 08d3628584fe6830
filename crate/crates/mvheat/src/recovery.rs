//! Control recovery from a converged adjoint and the diagnostics built on it:
//! measure norms, discrete states, tracking errors, support prediction and
//! the primal objective used for the duality gap.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, RecoveryError};
use crate::fem::{DiscreteSystem, Scheme};
use crate::newton::{adjoint_density, dual_power, objective, Bounds};
use crate::oracle::DesiredState;

/// One control atom. For the variational scheme `coefficient` is the mass of
/// `delta_{x_j} (x) delta_{t_k}`; for DG it is the mass of
/// `density * delta_{x_j} (x) chi_k`, i.e. `density = coefficient / tau_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Flat adjoint index the atom pairs with.
    pub index: usize,
    /// 1-based node index.
    pub j: usize,
    /// Time-point index (variational) or 1-based interval index (DG).
    pub k: usize,
    pub x: f64,
    /// Time point; for DG the right endpoint of the interval.
    pub t: f64,
    pub coefficient: f64,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialAtom {
    pub j: usize,
    pub x: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureControl {
    pub scheme: Scheme,
    pub atoms: Vec<Atom>,
    pub initial: Vec<InitialAtom>,
}

impl MeasureControl {
    /// Atoms whose mass exceeds `tol` in magnitude.
    pub fn support(&self, tol: f64) -> Vec<Atom> {
        self.atoms.iter().copied().filter(|a| a.coefficient.abs() > tol).collect()
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.support(tol).is_empty() && self.initial.iter().all(|a| a.coefficient.abs() <= tol)
    }
}

fn atom_at(sys: &DiscreteSystem, i: usize, coefficient: f64) -> Atom {
    let nh = sys.n_h();
    let (x, t) = sys.atom_position(i);
    let k = match sys.scheme {
        Scheme::Vd => i / nh,
        Scheme::Dg => i / nh + 1,
    };
    Atom { index: i, j: i % nh + 1, k, x, t, coefficient, density: coefficient / sys.density_scale(i) }
}

fn build_control(sys: &DiscreteSystem, r: &[f64], with_initial: bool) -> MeasureControl {
    let atoms = sys.sigma_idx.iter().map(|&i| atom_at(sys, i, r[i])).collect();
    let initial = if with_initial {
        sys.h_idx.iter().map(|&i| InitialAtom { j: i + 1, x: sys.grid.x[i], coefficient: r[i] }).collect()
    } else {
        Vec::new()
    };
    MeasureControl { scheme: sys.scheme, atoms, initial }
}

/// `r = Lt y` with `y = |z|^{p-2} z + y_d` the optimal state.
pub fn adjoint_residual(sys: &DiscreteSystem, yd: &DesiredState, w: &[f64]) -> Vec<f64> {
    sys.apply_lt(&optimal_state(sys, yd, w))
}

/// The state implied by the adjoint through the optimality system.
pub fn optimal_state(sys: &DiscreteSystem, yd: &DesiredState, w: &[f64]) -> Vec<f64> {
    let p = sys.p;
    adjoint_density(sys, w).iter().zip(&yd.values).map(|(&z, &d)| dual_power(z, p) + d).collect()
}

/// Reads the control off `r = Lt(|z|^{p-2} z + y_d)`. Entries outside the
/// control index sets must vanish up to `tol * (1 + |r|_inf)`.
pub fn recover_control(
    sys: &DiscreteSystem,
    yd: &DesiredState,
    w: &[f64],
    with_initial: bool,
    tol: f64,
) -> Result<MeasureControl, RecoveryError> {
    if w.len() != sys.dim() || yd.values.len() != sys.dim() {
        return Err(DataError::Dimension { expected: sys.dim(), got: w.len().min(yd.values.len()) }.into());
    }
    let r = adjoint_residual(sys, yd, w);
    let mut on = vec![false; r.len()];
    for &i in &sys.sigma_idx {
        on[i] = true;
    }
    if with_initial {
        for &i in &sys.h_idx {
            on[i] = true;
        }
    }
    let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lim = tol * (1.0 + rmax);
    let mut off: Vec<(usize, f64)> = r.iter().enumerate().filter(|(i, v)| !on[*i] && v.abs() > lim).map(|(i, v)| (i, *v)).collect();
    if !off.is_empty() {
        off.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        off.truncate(5);
        return Err(RecoveryError::OffIndexResidual { max: off[0].1.abs(), tol: lim, worst: off });
    }
    Ok(build_control(sys, &r, with_initial))
}

/// The control for `alpha = 0`: the predual feasible set collapses to
/// `w = 0`, so the control is the restriction of `Lt y_d`.
pub fn alpha_zero_control(sys: &DiscreteSystem, yd: &DesiredState, with_initial: bool) -> MeasureControl {
    build_control(sys, &sys.apply_lt(&yd.values), with_initial)
}

/// Total variation norm.
pub fn measure_norm(u: &MeasureControl) -> f64 {
    u.atoms.iter().map(|a| a.coefficient.abs()).sum::<f64>() + u.initial.iter().map(|a| a.coefficient.abs()).sum::<f64>()
}

/// Discrete state of a control: forward substitution with `Lt`.
pub fn solve_state(sys: &DiscreteSystem, u: &MeasureControl) -> Vec<f64> {
    let mut rhs = vec![0.0; sys.dim()];
    for a in &u.atoms {
        rhs[a.index] += a.coefficient;
    }
    for a in &u.initial {
        rhs[a.j - 1] += a.coefficient;
    }
    sys.solve_lt(&rhs)
}

/// `(sum |y - y_d|^q omega_j tau_k)^{1/q}`.
pub fn tracking_error(sys: &DiscreteSystem, y: &[f64], yd: &[f64], q: f64) -> f64 {
    y.iter().zip(yd).zip(&sys.m_sigma).map(|((a, b), m)| (a - b).abs().powf(q) * m).sum::<f64>().powf(1.0 / q)
}

/// `L^q` distance between the discrete state (P1 in space, piecewise constant
/// in time) and a reference field, integrated with `n`-point Gauss rules in
/// each space-time cell; boundary elements included.
pub fn lq_error_gauss<F: Fn(f64, f64) -> f64>(sys: &DiscreteSystem, y: &[f64], field: F, q: f64, n: usize) -> f64 {
    let (gx, gw) = gauss_legendre(n);
    let g = &sys.grid;
    let nh = g.n_h();
    let mut nodes = vec![g.a];
    nodes.extend_from_slice(&g.x);
    nodes.push(g.b);
    let mut total = 0.0;
    for k in 1..=g.n_tau() {
        let (t0, t1) = (g.t[k - 1], g.t[k]);
        let yk = &y[(k - 1) * nh..k * nh];
        for e in 0..=nh {
            let (x0, x1) = (nodes[e], nodes[e + 1]);
            let yl = if e > 0 { yk[e - 1] } else { 0.0 };
            let yr = if e < nh { yk[e] } else { 0.0 };
            for (sx, wx) in gx.iter().zip(&gw) {
                let lam = 0.5 * (sx + 1.0);
                let x = x0 + lam * (x1 - x0);
                let yh = (1.0 - lam) * yl + lam * yr;
                for (st, wt) in gx.iter().zip(&gw) {
                    let t = t0 + 0.5 * (st + 1.0) * (t1 - t0);
                    total += wx * wt * 0.25 * (x1 - x0) * (t1 - t0) * (yh - field(x, t)).abs().powf(q);
                }
            }
        }
    }
    total.powf(1.0 / q)
}

/// Gauss-Legendre nodes and weights on [-1, 1] via Newton on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * z * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Grid points where the adjoint touches its bound, classified by the sign
/// of the control they may carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedSupport {
    /// `w = -alpha`: positive atoms allowed.
    pub positive: Vec<usize>,
    /// `w = +alpha`: negative atoms allowed.
    pub negative: Vec<usize>,
    pub initial_positive: Vec<usize>,
    pub initial_negative: Vec<usize>,
}

pub fn support_from_adjoint(sys: &DiscreteSystem, w: &[f64], bounds: &Bounds, tol: f64) -> PredictedSupport {
    let split = |idx: &[usize], bound: f64| {
        let pos = idx.iter().copied().filter(|&i| w[i] <= -bound + tol).collect();
        let neg = idx.iter().copied().filter(|&i| w[i] >= bound - tol).collect();
        (pos, neg)
    };
    let (positive, negative) = split(&sys.sigma_idx, bounds.alpha);
    let (initial_positive, initial_negative) = match bounds.beta {
        Some(b) => split(&sys.h_idx, b),
        None => (Vec::new(), Vec::new()),
    };
    PredictedSupport { positive, negative, initial_positive, initial_negative }
}

/// Primal objective `J(u0, u) = |y(u) - y_d|_q^q / q + alpha |u| + beta |u0|`.
pub fn primal_objective(sys: &DiscreteSystem, yd: &DesiredState, u: &MeasureControl, bounds: &Bounds) -> f64 {
    let q = sys.q();
    let y = solve_state(sys, u);
    let track = tracking_error(sys, &y, &yd.values, q).powf(q) / q;
    let dist: f64 = u.atoms.iter().map(|a| a.coefficient.abs()).sum();
    let init: f64 = u.initial.iter().map(|a| a.coefficient.abs()).sum();
    track + bounds.alpha * dist + bounds.beta.unwrap_or(0.0) * init
}

/// `(J, K, J + K)`; the sum vanishes at a primal-dual optimal pair.
pub fn duality_gap(
    sys: &DiscreteSystem,
    yd: &DesiredState,
    u: &MeasureControl,
    w: &[f64],
    bounds: &Bounds,
) -> Result<(f64, f64, f64), DataError> {
    let j = primal_objective(sys, yd, u, bounds);
    let k = objective(sys, yd, w)?;
    Ok((j, k, j + k))
}
