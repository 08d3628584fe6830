#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use mvheat::newton::critical_bounds;
use mvheat::projection::{AtomicMeasure, SpatialMeasure};
use mvheat::recovery::{duality_gap, recover_control};
use mvheat::{newton_solve, Bounds, ControlRegion, DesiredState, DiscreteSystem, PointSource, Scheme, SolverConfig, SpaceTimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const Q: f64 = 4.0 / 3.0;

pub fn region() -> ControlRegion {
    ControlRegion { x_lo: 0.25, x_hi: 0.75, t_lo: 0.25, t_hi: 1.25 }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Equidistant grid on (0,1) x (0,1.5).
pub fn grid(n_h: usize, n_tau: usize) -> SpaceTimeGrid {
    SpaceTimeGrid::equidistant(0.0, 1.0, 1.5, n_h, n_tau).unwrap()
}

/// A grid with three distinct step sizes.
pub fn graded_grid(n_h: usize) -> SpaceTimeGrid {
    let mut t = vec![0.0];
    for &(len, n) in &[(0.5, 2usize), (0.5, 8), (0.5, 4)] {
        let t0 = *t.last().unwrap();
        for i in 1..=n {
            t.push(t0 + len * i as f64 / n as f64);
        }
    }
    SpaceTimeGrid::new(0.0, 1.0, n_h, &t).unwrap()
}

pub fn system(scheme: Scheme, g: &SpaceTimeGrid) -> DiscreteSystem {
    DiscreteSystem::assemble(scheme, g, &region(), Q).unwrap()
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// A smooth desired state with random coefficients.
pub fn smooth_yd(r: &mut ChaCha8Rng, g: &SpaceTimeGrid) -> DesiredState {
    let c: Vec<f64> = random_vec(r, 4);
    mvheat::oracle::sample_desired_state(g, |x, t| {
        use std::f64::consts::PI;
        c[0] * (PI * x).sin() * (1.0 + t) + c[1] * (2.0 * PI * x).sin() * (PI * t).cos() + c[2] * x * (1.0 - x) * t + 0.3 * c[3]
    })
    .unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Three-point Gauss rule on [x0, x1]; exact for quintics.
pub fn gauss3(x0: f64, x1: f64, f: impl Fn(f64) -> f64) -> f64 {
    let s = (0.6f64).sqrt();
    let (m, r) = (0.5 * (x0 + x1), 0.5 * (x1 - x0));
    r * (5.0 / 9.0 * f(m - r * s) + 8.0 / 9.0 * f(m) + 5.0 / 9.0 * f(m + r * s))
}

/// Piecewise linear hat over `nodes` centred at `nodes[i]` and its derivative.
pub fn hat(nodes: &[f64], i: usize, s: f64) -> (f64, f64) {
    if i > 0 && s >= nodes[i - 1] && s <= nodes[i] {
        let d = 1.0 / (nodes[i] - nodes[i - 1]);
        return ((s - nodes[i - 1]) * d, d);
    }
    if i + 1 < nodes.len() && s >= nodes[i] && s <= nodes[i + 1] {
        let d = 1.0 / (nodes[i + 1] - nodes[i]);
        return ((nodes[i + 1] - s) * d, -d);
    }
    (0.0, 0.0)
}

/// `int f` over `[nodes[0], nodes[last]]`, elementwise.
pub fn integrate(nodes: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    nodes.windows(2).map(|w| gauss3(w[0], w[1], &f)).sum()
}

pub fn spatial_nodes(g: &SpaceTimeGrid) -> Vec<f64> {
    let mut n = vec![g.a];
    n.extend_from_slice(&g.x);
    n.push(g.b);
    n
}

/// `K(w)` straight from the dense matrix.
pub fn dense_objective(sys: &DiscreteSystem, yd: &DesiredState, w: &[f64]) -> f64 {
    let lw = sys.lt_matrix().transpose().matvec(w);
    lw.iter()
        .zip(&sys.m_sigma)
        .zip(&yd.values)
        .map(|((l, m), d)| {
            let z = l / m;
            (z.powi(4) / 4.0 + z * d) * m
        })
        .sum()
}

pub fn dense_gradient(sys: &DiscreteSystem, yd: &DesiredState, w: &[f64]) -> Vec<f64> {
    let lt = sys.lt_matrix();
    let lw = lt.transpose().matvec(w);
    let y: Vec<f64> = lw.iter().zip(&sys.m_sigma).zip(&yd.values).map(|((l, m), d)| (l / m).powi(3) + d).collect();
    lt.matvec(&y)
}

/// Projected gradient with Armijo backtracking on the box, run to a tiny
/// projected-gradient norm.
pub fn projected_gradient(sys: &DiscreteSystem, yd: &DesiredState, alpha: f64) -> Vec<f64> {
    let mut boxed = vec![false; sys.dim()];
    for &i in &sys.sigma_idx {
        boxed[i] = true;
    }
    let project = |w: &mut Vec<f64>| {
        for (v, b) in w.iter_mut().zip(&boxed) {
            if *b {
                *v = v.clamp(-alpha, alpha);
            }
        }
    };
    let mut w = vec![0.0; sys.dim()];
    let mut step = 1.0;
    for _ in 0..2_000_000 {
        let g = dense_gradient(sys, yd, &w);
        let f = dense_objective(sys, yd, &w);
        loop {
            let mut t: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            project(&mut t);
            let d: Vec<f64> = t.iter().zip(&w).map(|(a, b)| a - b).collect();
            let ft = dense_objective(sys, yd, &t);
            if ft <= f + dot(&g, &d) + dot(&d, &d) / (2.0 * step) {
                let moved = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                w = t;
                step *= 1.5;
                if moved < 1e-15 * (1.0 + step) {
                    return w;
                }
                break;
            }
            step *= 0.5;
        }
    }
    panic!("projected gradient did not settle");
}

pub fn spatial_forms(g: &SpaceTimeGrid) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let nodes = spatial_nodes(g);
    let n = g.n_h();
    let mut m = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            // hats at interior node indices i+1, j+1 of the full node list
            m[i][j] = integrate(&nodes, |x| hat(&nodes, i + 1, x).0 * hat(&nodes, j + 1, x).0);
            a[i][j] = nodes
                .windows(2)
                .map(|w| {
                    // derivatives are constant per element; sample the midpoint
                    let xm = 0.5 * (w[0] + w[1]);
                    (w[1] - w[0]) * hat(&nodes, i + 1, xm).1 * hat(&nodes, j + 1, xm).1
                })
                .sum();
        }
    }
    (m, a)
}

/// Space-time matrix from its defining bilinear form, integrated cell by cell.
/// Variational scheme: state piecewise constant on `I_k`, adjoint piecewise
/// linear with `w(T) = 0`; `<Lt y, w> = sum_k int_{I_k} -(y_k, w_t) + (y_k', w')`.
pub fn vd_oracle(g: &SpaceTimeGrid) -> Vec<Vec<f64>> {
    let (m, a) = spatial_forms(g);
    let (nh, nt) = (g.n_h(), g.n_tau());
    let mut lt = vec![vec![0.0; nh * nt]; nh * nt];
    for mrow in 0..nt {
        for k in 1..=nt {
            let cell = [g.t[k - 1], g.t[k]];
            let dt_part = -integrate(&cell, |t| hat(&g.t, mrow, t).1);
            let a_part = integrate(&cell, |t| hat(&g.t, mrow, t).0);
            for i in 0..nh {
                for j in 0..nh {
                    lt[mrow * nh + i][(k - 1) * nh + j] = dt_part * m[j][i] + a_part * a[j][i];
                }
            }
        }
    }
    lt
}

/// DG(0): both state and test piecewise constant, the jump `y_k - y_{k-1}`
/// replaces the time derivative, `y_0 = 0` after elimination.
pub fn dg_oracle(g: &SpaceTimeGrid) -> Vec<Vec<f64>> {
    let (m, a) = spatial_forms(g);
    let (nh, nt) = (g.n_h(), g.n_tau());
    let mut lt = vec![vec![0.0; nh * nt]; nh * nt];
    for kt in 1..=nt {
        let len = integrate(&[g.t[kt - 1], g.t[kt]], |_| 1.0);
        for i in 0..nh {
            for j in 0..nh {
                lt[(kt - 1) * nh + i][(kt - 1) * nh + j] = m[i][j] + len * a[i][j];
                if kt >= 2 {
                    lt[(kt - 1) * nh + i][(kt - 2) * nh + j] = -m[i][j];
                }
            }
        }
    }
    lt
}

pub fn coarse_data(g: &mvheat::SpaceTimeGrid) -> DesiredState {
    mvheat::oracle::sample_fourier_dirac(g, &PointSource::unit(0.5, 0.5), 200).unwrap()
}

pub struct Case {
    pub sys: DiscreteSystem,
    pub yd: DesiredState,
    pub bounds: Bounds,
}

pub fn kkt_cases() -> Vec<Case> {
    let mut r = rng(14);
    let mut cases = Vec::new();
    for scheme in [Scheme::Vd, Scheme::Dg] {
        let g = grid(3, 12);
        let sys = system(scheme, &g);
        let yd = coarse_data(&g);
        let (abar, _) = critical_bounds(&sys, &yd).unwrap();
        for frac in [0.7, 0.3] {
            cases.push(Case { sys: sys.clone(), yd: yd.clone(), bounds: Bounds::alpha(frac * abar) });
        }
        let g = grid(7, 24);
        let sys = system(scheme, &g);
        let yd = smooth_yd(&mut r, &g);
        let (abar, bbar) = critical_bounds(&sys, &yd).unwrap();
        cases.push(Case { sys: sys.clone(), yd: yd.clone(), bounds: Bounds { alpha: 0.5 * abar, beta: Some(0.5 * bbar) } });
        let yd = mvheat::oracle::manufactured_desired_state(&g, 0.25, &PointSource::unit(0.5, 0.5), 200, 4.0).unwrap();
        cases.push(Case { sys, yd, bounds: Bounds::alpha(0.25) });
    }
    cases
}

/// Feasibility, multiplier signs, complementarity, `u = lam2 - lam1`, the
/// sign structure of the atoms and the duality gap at the computed solution.
pub fn check_kkt(c: &Case) -> Result<(), String> {
    let (sys, yd, b) = (&c.sys, &c.yd, &c.bounds);
    let tag = format!("{} alpha={:.4} beta={:?}", sys.scheme, b.alpha, b.beta);
    let fail = |what: String| Err(format!("{tag}: {what}"));
    let (it, _) = newton_solve(sys, yd, b, &SolverConfig::default(), None).map_err(|e| format!("{tag}: {e}"))?;
    let mut sets: Vec<(&[usize], f64, &[f64], &[f64])> = vec![(&sys.sigma_idx, b.alpha, &it.lam1, &it.lam2)];
    if let Some(beta) = b.beta {
        sets.push((&sys.h_idx, beta, &it.lam3, &it.lam4));
    }
    let u = recover_control(sys, yd, &it.w, b.beta.is_some(), 1e-8).map_err(|e| format!("{tag}: {e}"))?;
    let coef: Vec<f64> = u.atoms.iter().map(|a| a.coefficient).chain(u.initial.iter().map(|a| a.coefficient)).collect();
    let thr = 1e-8 * (1.0 + coef.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut ci = 0;
    for (idx, bound, l1, l2) in sets {
        for (n, &i) in idx.iter().enumerate() {
            let w = it.w[i];
            if w.abs() > bound + 1e-9 {
                return fail(format!("infeasible {w}"));
            }
            if l1[n] < 0.0 || l2[n] < 0.0 {
                return fail("negative multiplier".into());
            }
            let tol = 1e-8 * (1.0 + bound);
            if (l1[n] * (bound - w)).abs() > tol || (l2[n] * (bound + w)).abs() > tol {
                return fail(format!("complementarity at {i}"));
            }
            // control = lam2 - lam1, positive only at w = -bound, negative only at w = +bound
            let uc = coef[ci];
            ci += 1;
            if (uc - (l2[n] - l1[n])).abs() > 1e-8 * (1.0 + uc.abs()) {
                return fail("u != lam2 - lam1".into());
            }
            if (uc > thr && w > -bound + 1e-8) || (uc < -thr && w < bound - 1e-8) {
                return fail(format!("atom {uc} at w = {w}"));
            }
        }
    }
    let (j, _, gap) = duality_gap(sys, yd, &u, &it.w, b).map_err(|e| format!("{tag}: {e}"))?;
    if gap.abs() > 1e-6 * (1.0 + j.abs()) {
        return fail(format!("gap {gap}"));
    }
    Ok(())
}

/// Largest pairwise distance of the solutions for each `kappa`.
pub fn kappa_spread(c: &Case, kappas: &[f64]) -> Result<f64, String> {
    let mut sols = Vec::new();
    for &kappa in kappas {
        let cfg = SolverConfig { kappa, ..SolverConfig::default() };
        sols.push(newton_solve(&c.sys, &c.yd, &c.bounds, &cfg, None).map_err(|e| e.to_string())?.0.w);
    }
    Ok(sols[1..].iter().map(|s| max_abs_diff(s, &sols[0])).fold(0.0, f64::max))
}

pub const MEASURES_PER_GRID: usize = 100;

pub fn projection_grids() -> Vec<(SpaceTimeGrid, ControlRegion)> {
    vec![
        (grid(3, 12), region()),
        (grid(15, 48), region()),
        (graded_grid(9), region()),
        // region edges between nodes
        (grid(6, 21), ControlRegion { x_lo: 0.2, x_hi: 0.7, t_lo: 0.3, t_hi: 1.1 }),
    ]
}

pub fn random_space_time_measure(r: &mut impl Rng, q: &ControlRegion) -> AtomicMeasure {
    let n = r.gen_range(1..8);
    AtomicMeasure { atoms: (0..n).map(|_| (r.gen_range(q.x_lo..=q.x_hi), r.gen_range(q.t_lo..=q.t_hi), r.gen_range(-2.0..2.0))).collect() }
}

pub fn random_spatial_measure(r: &mut impl Rng, q: &ControlRegion) -> SpatialMeasure {
    let n = r.gen_range(1..8);
    SpatialMeasure { atoms: (0..n).map(|_| (r.gen_range(q.x_lo..=q.x_hi), r.gen_range(-2.0..2.0))).collect() }
}

pub fn test_field(x: f64, t: f64) -> f64 {
    (3.0 * x).sin() * (1.0 + t * t) + (x * t).cos()
}
