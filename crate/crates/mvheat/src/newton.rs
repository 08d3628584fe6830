//! Semismooth Newton method for the discrete predual problem
//!
//! ```text
//!   min_w  K(w) = sum ( |z|^p / p + z y_d ) omega_j tau_k,    z = M_sigma^{-1} L w
//!   s.t.   |w_i| <= alpha  on the distributed control set,
//!          |w_i| <= beta   on the initial control set (optional).
//! ```
//!
//! The KKT system is written with the max-function reformulation
//! `N = max(0, lambda + kappa (+-w - bound)) - lambda` and solved by Newton's
//! method on the generalized derivative, choosing the derivative branch at
//! kinks. The Hessian of the `L^p` term degenerates where `z -> 0` (`p > 2`),
//! so `c ||F||` is added to its diagonal in `z`, scaled by the lumped mass.
//! A backtracking line search on `||F||`, with trial adjoints clamped to the
//! box, safeguards the full step.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, SolveError};
use crate::fem::DiscreteSystem;
use crate::linsolve::{LinearSolver, NewtonMatrix};
use crate::oracle::DesiredState;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Complementarity scaling of the N-functions; the solution does not
    /// depend on it.
    pub kappa: f64,
    pub newton_tol: f64,
    pub max_iter: usize,
    /// The Newton matrix is shifted by `reg_coeff * |F|` in the density
    /// variable; the shift vanishes at the solution.
    pub reg_coeff: f64,
    pub feas_tol: f64,
    pub globalize: bool,
    /// Clamp trial adjoints to the box in the line search, so that a large
    /// `kappa` does not turn every overshoot into a large residual.
    pub project: bool,
    pub linear_solver: LinearSolver,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            newton_tol: 1e-10,
            max_iter: 400,
            reg_coeff: 100.0,
            feas_tol: 1e-9,
            globalize: true,
            project: true,
            linear_solver: LinearSolver::Auto,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.kappa > 0.0) {
            return Err(SolveError::Input(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.newton_tol > 0.0 && self.feas_tol > 0.0) {
            return Err(SolveError::Input("tolerances must be positive".into()));
        }
        if !(self.reg_coeff >= 0.0) {
            return Err(SolveError::Input("reg_coeff must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Constraint levels. `beta = None` fixes the initial control to zero and
/// drops the corresponding constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub alpha: f64,
    pub beta: Option<f64>,
}

impl Bounds {
    pub fn alpha(alpha: f64) -> Self {
        Self { alpha, beta: None }
    }
}

/// Adjoint coefficients and the four multiplier vectors (`lam3`, `lam4` are
/// empty when the initial control is fixed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredualIterate {
    pub w: Vec<f64>,
    pub lam1: Vec<f64>,
    pub lam2: Vec<f64>,
    pub lam3: Vec<f64>,
    pub lam4: Vec<f64>,
}

impl PredualIterate {
    pub fn zeros(sys: &DiscreteSystem, bounds: &Bounds) -> Self {
        let m = sys.sigma_idx.len();
        let mh = if bounds.beta.is_some() { sys.h_idx.len() } else { 0 };
        Self { w: vec![0.0; sys.dim()], lam1: vec![0.0; m], lam2: vec![0.0; m], lam3: vec![0.0; mh], lam4: vec![0.0; mh] }
    }

    fn upper(&self) -> impl Iterator<Item = &f64> {
        self.lam1.iter().chain(&self.lam3)
    }

    fn lower(&self) -> impl Iterator<Item = &f64> {
        self.lam2.iter().chain(&self.lam4)
    }

    fn set_multipliers(&mut self, upper: Vec<f64>, lower: Vec<f64>) {
        let m = self.lam1.len();
        self.lam1 = upper[..m].to_vec();
        self.lam3 = upper[m..].to_vec();
        self.lam2 = lower[..m].to_vec();
        self.lam4 = lower[m..].to_vec();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub grad_w: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    pub n3: Vec<f64>,
    pub n4: Vec<f64>,
    /// `||F|| / (1 + ||Lt y_d||)`.
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub residual: f64,
    pub step: f64,
    pub active_upper: usize,
    pub active_lower: usize,
}

/// Flattened view of all box constraints: distributed ones first.
struct Constraints {
    idx: Vec<usize>,
    bound: Vec<f64>,
}

impl Constraints {
    fn new(sys: &DiscreteSystem, bounds: &Bounds) -> Self {
        let mut idx = sys.sigma_idx.clone();
        let mut bound = vec![bounds.alpha; idx.len()];
        if let Some(beta) = bounds.beta {
            idx.extend_from_slice(&sys.h_idx);
            bound.extend(std::iter::repeat_n(beta, sys.h_idx.len()));
        }
        Self { idx, bound }
    }

    fn len(&self) -> usize {
        self.idx.len()
    }
}

/// `|z|^{p-2} z`.
#[inline]
pub fn dual_power(z: f64, p: f64) -> f64 {
    if p == 4.0 {
        z * z * z
    } else if p == 2.0 {
        z
    } else {
        z.abs().powf(p - 2.0) * z
    }
}

/// `(p-1) |z|^{p-2}`.
#[inline]
fn dual_power_deriv(z: f64, p: f64) -> f64 {
    if p == 4.0 {
        3.0 * z * z
    } else if p == 2.0 {
        1.0
    } else {
        (p - 1.0) * z.abs().powf(p - 2.0)
    }
}

/// `z = M_sigma^{-1} L w`.
pub fn adjoint_density(sys: &DiscreteSystem, w: &[f64]) -> Vec<f64> {
    let mut z = sys.apply_l(w);
    for (zi, m) in z.iter_mut().zip(&sys.m_sigma) {
        *zi /= m;
    }
    z
}

/// Minimizer of `K` without constraints: `z = -sign(y_d) |y_d|^{1/(p-1)}`
/// pulled back through `w = L^{-1} M_sigma z`. It solves the constrained
/// problem whenever it is feasible.
pub fn unconstrained_adjoint(sys: &DiscreteSystem, yd: &DesiredState) -> Result<Vec<f64>, DataError> {
    check_dims(sys, yd, &yd.values)?;
    let e = 1.0 / (sys.p - 1.0);
    let mz: Vec<f64> = yd.values.iter().zip(&sys.m_sigma).map(|(&d, &m)| -d.signum() * d.abs().powf(e) * m).collect();
    Ok(sys.solve_l(&mz))
}

/// Smallest `(alpha, beta)` for which the optimal control vanishes: the
/// largest magnitude of the unconstrained adjoint on each index set.
pub fn critical_bounds(sys: &DiscreteSystem, yd: &DesiredState) -> Result<(f64, f64), DataError> {
    let w = unconstrained_adjoint(sys, yd)?;
    let max_on = |idx: &[usize]| idx.iter().fold(0.0f64, |m, &i| m.max(w[i].abs()));
    Ok((max_on(&sys.sigma_idx), max_on(&sys.h_idx)))
}

fn check_dims(sys: &DiscreteSystem, yd: &DesiredState, w: &[f64]) -> Result<(), DataError> {
    if yd.values.len() != sys.dim() {
        return Err(DataError::Dimension { expected: sys.dim(), got: yd.values.len() });
    }
    if w.len() != sys.dim() {
        return Err(DataError::Dimension { expected: sys.dim(), got: w.len() });
    }
    Ok(())
}

/// Predual objective `K(w)`.
pub fn objective(sys: &DiscreteSystem, yd: &DesiredState, w: &[f64]) -> Result<f64, DataError> {
    check_dims(sys, yd, w)?;
    let p = sys.p;
    let z = adjoint_density(sys, w);
    Ok(z.iter().zip(&yd.values).zip(&sys.m_sigma).map(|((&z, &y), &m)| (z.abs().powf(p) / p + z * y) * m).sum())
}

fn scale_of(sys: &DiscreteSystem, yd: &DesiredState) -> f64 {
    1.0 + norm2(&sys.apply_lt(&yd.values))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Eval {
    grad: Vec<f64>,
    n_up: Vec<f64>,
    n_lo: Vec<f64>,
    z: Vec<f64>,
    norm: f64,
    inf: f64,
}

fn evaluate(sys: &DiscreteSystem, yd: &DesiredState, cons: &Constraints, it: &PredualIterate, kappa: f64, scale: f64) -> Eval {
    let p = sys.p;
    let z = adjoint_density(sys, &it.w);
    let y: Vec<f64> = z.iter().zip(&yd.values).map(|(&z, &d)| dual_power(z, p) + d).collect();
    let mut grad = sys.apply_lt(&y);
    let r_inf = grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut n_up = Vec::with_capacity(cons.len());
    let mut n_lo = Vec::with_capacity(cons.len());
    for (c, (l1, l2)) in it.upper().zip(it.lower()).enumerate() {
        let i = cons.idx[c];
        let b = cons.bound[c];
        grad[i] += l1 - l2;
        n_up.push((l1 + kappa * (it.w[i] - b)).max(0.0) - l1);
        n_lo.push((l2 + kappa * (-it.w[i] - b)).max(0.0) - l2);
    }
    let sq = grad.iter().chain(&n_up).chain(&n_lo).map(|x| x * x).sum::<f64>();
    let inf = grad.iter().chain(&n_up).chain(&n_lo).fold(0.0f64, |m, x| m.max(x.abs())) / (1.0 + r_inf);
    Eval { grad, n_up, n_lo, z, norm: sq.sqrt() / scale, inf }
}

/// The KKT residual `F` at an iterate.
pub fn kkt_residual(
    sys: &DiscreteSystem,
    yd: &DesiredState,
    it: &PredualIterate,
    bounds: &Bounds,
    kappa: f64,
) -> Result<KktResidual, SolveError> {
    check_dims(sys, yd, &it.w)?;
    let cons = Constraints::new(sys, bounds);
    check_multipliers(it, &cons)?;
    let e = evaluate(sys, yd, &cons, it, kappa, scale_of(sys, yd));
    let m = sys.sigma_idx.len();
    Ok(KktResidual {
        grad_w: e.grad,
        n1: e.n_up[..m].to_vec(),
        n2: e.n_lo[..m].to_vec(),
        n3: e.n_up[m..].to_vec(),
        n4: e.n_lo[m..].to_vec(),
        norm: e.norm,
    })
}

fn check_multipliers(it: &PredualIterate, cons: &Constraints) -> Result<(), SolveError> {
    let nu = it.lam1.len() + it.lam3.len();
    let nl = it.lam2.len() + it.lam4.len();
    if nu != cons.len() || nl != cons.len() {
        return Err(SolveError::Input(format!("multiplier length {nu}/{nl} does not match {} constraints", cons.len())));
    }
    Ok(())
}

/// Which branch of each max-function is taken. At `arg = 0` the derivative
/// branch counts as active. If both sides of the same box test active (only
/// possible away from the solution), the larger argument wins.
fn active_sets(cons: &Constraints, it: &PredualIterate, kappa: f64) -> (Vec<bool>, Vec<bool>) {
    let mut up = Vec::with_capacity(cons.len());
    let mut lo = Vec::with_capacity(cons.len());
    for (c, (l1, l2)) in it.upper().zip(it.lower()).enumerate() {
        let i = cons.idx[c];
        let b = cons.bound[c];
        let gu = l1 + kappa * (it.w[i] - b);
        let gl = l2 + kappa * (-it.w[i] - b);
        let (u, l) = match (gu >= 0.0, gl >= 0.0) {
            (true, true) => (gu >= gl, gu < gl),
            other => other,
        };
        up.push(u);
        lo.push(l);
    }
    (up, lo)
}

/// Generalized derivative of `F` (rows: stationarity, N1..N4; columns: w,
/// lam1..lam4), with `reg` added to the `z`-space curvature.
pub fn generalized_jacobian(
    sys: &DiscreteSystem,
    yd: &DesiredState,
    it: &PredualIterate,
    bounds: &Bounds,
    kappa: f64,
    reg: f64,
) -> Result<CsrMatrix, SolveError> {
    check_dims(sys, yd, &it.w)?;
    let cons = Constraints::new(sys, bounds);
    check_multipliers(it, &cons)?;
    let n = sys.dim();
    let m = cons.len();
    let ms = sys.sigma_idx.len();
    let p = sys.p;
    let z = adjoint_density(sys, &it.w);
    let dz: Vec<f64> = z.iter().zip(&sys.m_sigma).map(|(&z, &mm)| (dual_power_deriv(z, p) + reg) / mm).collect();

    // H = Lt diag(dz) L, formed column by column from sparse L
    let lt = sys.lt_matrix();
    let l = lt.transpose();
    let mut trip = Vec::new();
    // H = sum_q dz_q (row q of L)^T (row q of L)
    for q in 0..n {
        let (lo, hi) = (l.indptr[q], l.indptr[q + 1]);
        for a in lo..hi {
            for b in lo..hi {
                trip.push((l.indices[a], l.indices[b], dz[q] * l.data[a] * l.data[b]));
            }
        }
    }
    let (up, low) = active_sets(&cons, it, kappa);
    // column offsets of lam1, lam2, lam3, lam4 and row offsets of N1..N4
    let off = |block: usize, c: usize| -> usize {
        let (is_h, k) = if c < ms { (false, c) } else { (true, c - ms) };
        let mh = m - ms;
        match (block, is_h) {
            (1, false) => n + k,
            (2, false) => n + ms + k,
            (1, true) => n + 2 * ms + k,
            (2, true) => n + 2 * ms + mh + k,
            _ => unreachable!(),
        }
    };
    for c in 0..m {
        let i = cons.idx[c];
        let (c1, c2) = (off(1, c), off(2, c));
        trip.push((i, c1, 1.0));
        trip.push((i, c2, -1.0));
        if up[c] {
            trip.push((c1, i, kappa));
        } else {
            trip.push((c1, c1, -1.0));
        }
        if low[c] {
            trip.push((c2, i, -kappa));
        } else {
            trip.push((c2, c2, -1.0));
        }
    }
    let dim = n + 2 * m;
    Ok(CsrMatrix::from_triplets(dim, dim, trip))
}

/// Solves the predual problem. `warm_start` (e.g. the solution at a larger
/// `alpha`) replaces the zero initial iterate.
pub fn newton_solve(
    sys: &DiscreteSystem,
    yd: &DesiredState,
    bounds: &Bounds,
    cfg: &SolverConfig,
    warm_start: Option<&PredualIterate>,
) -> Result<(PredualIterate, Vec<IterationRecord>), SolveError> {
    cfg.validate()?;
    if !(bounds.alpha > 0.0) {
        return Err(SolveError::Input(format!("alpha must be positive, got {}", bounds.alpha)));
    }
    if let Some(beta) = bounds.beta {
        if !(beta > 0.0) {
            return Err(SolveError::Input(format!("beta must be positive, got {beta}")));
        }
    }
    let cons = Constraints::new(sys, bounds);
    let mut it = match warm_start {
        Some(w) => w.clone(),
        None => PredualIterate::zeros(sys, bounds),
    };
    check_dims(sys, yd, &it.w)?;
    check_multipliers(&it, &cons)?;

    let kappa = cfg.kappa;
    let p = sys.p;
    let scale = scale_of(sys, yd);
    let mut ev = evaluate(sys, yd, &cons, &it, kappa, scale);
    let mut log: Vec<IterationRecord> = Vec::new();
    let mut best = (ev.norm, it.clone());
    // Shrinks the regularization when it stalls the line search (at `z = 0`
    // the Hessian of the `L^p` term vanishes and only the shift is left).
    let mut damp = 1.0;

    for iter in 0.. {
        let (up, lo) = active_sets(&cons, &it, kappa);
        let n_up = up.iter().filter(|&&a| a).count();
        let n_lo = lo.iter().filter(|&&a| a).count();
        // The 2-norm scale grows with the grid, so the entrywise residual relative
        // to `Lt y` is also required to be small; recovery reads it off directly.
        if ev.norm <= cfg.newton_tol && ev.inf <= cfg.newton_tol {
            log.push(IterationRecord { iter, residual: ev.norm, step: 0.0, active_upper: n_up, active_lower: n_lo });
            return Ok((it, log));
        }
        if iter >= cfg.max_iter {
            return Err(SolveError::MaxIter { best: Box::new(best.1), best_residual: best.0, log });
        }

        // condensed Newton step
        let reg = cfg.reg_coeff * damp * ev.norm;
        let dz: Vec<f64> = ev.z.iter().zip(&sys.m_sigma).map(|(&z, &m)| (dual_power_deriv(z, p) + reg) / m).collect();
        let hm = NewtonMatrix::new(sys, dz);

        let mut b: Vec<f64> = ev.grad.iter().map(|g| -g).collect();
        let mut fixed: Vec<(usize, f64)> = Vec::new();
        let lam_up: Vec<f64> = it.upper().copied().collect();
        let lam_lo: Vec<f64> = it.lower().copied().collect();
        for c in 0..cons.len() {
            let i = cons.idx[c];
            if up[c] {
                fixed.push((i, cons.bound[c] - it.w[i]));
            } else if lo[c] {
                fixed.push((i, -cons.bound[c] - it.w[i]));
            } else {
                b[i] += lam_up[c] - lam_lo[c];
            }
        }
        let mut order: Vec<usize> = (0..fixed.len()).collect();
        order.sort_by_key(|&a| fixed[a].0);
        let fixed_idx: Vec<usize> = order.iter().map(|&a| fixed[a].0).collect();
        let fixed_val: Vec<f64> = order.iter().map(|&a| fixed[a].1).collect();
        let sol = hm.solve_constrained(&b, &fixed_idx, &fixed_val, cfg.linear_solver)?;
        let mut h_at = vec![0.0; sys.dim()];
        for (&i, &v) in fixed_idx.iter().zip(&sol.h_dw_fixed) {
            h_at[i] = v;
        }

        let mut d_up = vec![0.0; cons.len()];
        let mut d_lo = vec![0.0; cons.len()];
        for c in 0..cons.len() {
            let i = cons.idx[c];
            let g = ev.grad[i];
            if up[c] {
                d_lo[c] = -lam_lo[c];
                d_up[c] = -g - h_at[i] - lam_lo[c];
            } else if lo[c] {
                d_up[c] = -lam_up[c];
                d_lo[c] = g + h_at[i] - lam_up[c];
            } else {
                d_up[c] = -lam_up[c];
                d_lo[c] = -lam_lo[c];
            }
        }

        // backtracking on ||F||
        let mut step = 1.0;
        let (trial, trial_ev, sufficient) = loop {
            let mut t = it.clone();
            for (wi, di) in t.w.iter_mut().zip(&sol.dw) {
                *wi += step * di;
            }
            if cfg.project {
                for (&i, &b) in cons.idx.iter().zip(&cons.bound) {
                    t.w[i] = t.w[i].clamp(-b, b);
                }
            }
            let u: Vec<f64> = lam_up.iter().zip(&d_up).map(|(l, d)| l + step * d).collect();
            let l: Vec<f64> = lam_lo.iter().zip(&d_lo).map(|(l, d)| l + step * d).collect();
            t.set_multipliers(u, l);
            let e = evaluate(sys, yd, &cons, &t, kappa, scale);
            let ok = e.norm <= (1.0 - 1e-4 * step) * ev.norm;
            if !cfg.globalize || ok || step < f64::powi(2.0, -30) {
                break (t, e, ok);
            }
            step *= 0.5;
        };
        if cfg.globalize && !sufficient && reg > 0.0 && damp > 1e-12 {
            damp *= 1e-2;
            log.push(IterationRecord { iter, residual: ev.norm, step: 0.0, active_upper: n_up, active_lower: n_lo });
            continue;
        }
        if step == 1.0 {
            damp = (damp * 10.0).min(1.0);
        }
        log.push(IterationRecord { iter, residual: ev.norm, step, active_upper: n_up, active_lower: n_lo });
        it = trial;
        ev = trial_ev;
        if ev.norm < best.0 {
            best = (ev.norm, it.clone());
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Scheme;
    use crate::grid::{ControlRegion, SpaceTimeGrid};

    fn coarse(scheme: Scheme) -> DiscreteSystem {
        let g = SpaceTimeGrid::equidistant(0.0, 1.0, 1.5, 3, 12).unwrap();
        let r = ControlRegion { x_lo: 0.25, x_hi: 0.75, t_lo: 0.25, t_hi: 1.25 };
        DiscreteSystem::assemble(scheme, &g, &r, 4.0 / 3.0).unwrap()
    }

    #[test]
    fn zero_data_converges_immediately() {
        let sys = coarse(Scheme::Vd);
        let yd = DesiredState::zeros(&sys.grid);
        let (it, log) = newton_solve(&sys, &yd, &Bounds::alpha(0.1), &SolverConfig::default(), None).unwrap();
        assert!(it.w.iter().all(|&w| w == 0.0));
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn residual_at_zero() {
        let sys = coarse(Scheme::Dg);
        let yd = DesiredState { values: (0..sys.dim()).map(|i| (i as f64).sin()).collect(), ..DesiredState::zeros(&sys.grid) };
        let it = PredualIterate::zeros(&sys, &Bounds::alpha(0.3));
        let r = kkt_residual(&sys, &yd, &it, &Bounds::alpha(0.3), 1.0).unwrap();
        assert_eq!(r.grad_w, sys.apply_lt(&yd.values));
        assert!(r.n1.iter().chain(&r.n2).all(|&v| v == 0.0));
    }

    #[test]
    fn objective_zero_at_origin() {
        let sys = coarse(Scheme::Vd);
        let yd = DesiredState { values: vec![1.0; sys.dim()], ..DesiredState::zeros(&sys.grid) };
        assert_eq!(objective(&sys, &yd, &vec![0.0; sys.dim()]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        let sys = coarse(Scheme::Vd);
        let yd = DesiredState::zeros(&sys.grid);
        assert!(matches!(newton_solve(&sys, &yd, &Bounds::alpha(0.0), &SolverConfig::default(), None), Err(SolveError::Input(_))));
    }
}
