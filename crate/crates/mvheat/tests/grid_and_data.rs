mod common;

use common::*;
use mvheat::grid::control_index_sets;
use mvheat::oracle::{fourier_heat_dirac, manufactured_adjoint, manufactured_desired_state, sample_fourier_dirac};
use mvheat::{ControlRegion, DataError, GridError, PointSource, Scheme, SpaceTimeGrid};
use std::f64::consts::PI;

#[test]
fn coarse_index_sets() {
    let g = grid(3, 12);
    let s = control_index_sets(&g, &region()).unwrap();
    assert_eq!(s.h, vec![1, 2, 3]);
    let times: Vec<usize> = s.sigma.iter().filter(|p| p.0 == 1).map(|p| p.1).collect();
    assert_eq!(times, (2..=10).collect::<Vec<_>>());
    assert_eq!(s.sigma.len(), 27);
    assert_eq!(s.tau, (3..=10).collect::<Vec<_>>());
}

#[test]
fn flat_constraint_indices() {
    let g = grid(3, 12);
    let vd = system(Scheme::Vd, &g);
    // t_2 .. t_10, all three nodes; t_12 = T would be excluded anyway
    assert_eq!(vd.sigma_idx.len(), 27);
    assert_eq!(vd.sigma_idx[0], 2 * 3);
    assert_eq!(*vd.sigma_idx.last().unwrap(), 10 * 3 + 2);
    let dg = system(Scheme::Dg, &g);
    assert_eq!(dg.sigma_idx.len(), 24);
    assert_eq!(dg.sigma_idx[0], 2 * 3);
    assert_eq!(dg.h_idx, vec![0, 1, 2]);
}

#[test]
fn region_must_be_interior() {
    let g = grid(3, 12);
    let bad = ControlRegion { x_lo: 0.0, ..region() };
    assert!(matches!(control_index_sets(&g, &bad), Err(GridError::RegionNotCompact(_))));
    let late = ControlRegion { t_hi: 1.5, ..region() };
    assert!(control_index_sets(&g, &late).is_err());
}

#[test]
fn too_coarse_grid_is_rejected() {
    let g = grid(1, 3);
    let narrow = ControlRegion { x_lo: 0.1, x_hi: 0.2, t_lo: 0.6, t_hi: 0.9 };
    assert!(matches!(control_index_sets(&g, &narrow), Err(GridError::TooCoarse)));
}

#[test]
fn grid_validation() {
    assert!(SpaceTimeGrid::new(0.0, 1.0, 0, &[0.0, 1.0]).is_err());
    assert!(SpaceTimeGrid::new(1.0, 0.0, 3, &[0.0, 1.0]).is_err());
    assert!(SpaceTimeGrid::new(0.0, 1.0, 3, &[0.0, 0.5, 0.5]).is_err());
    assert!(SpaceTimeGrid::new(0.0, 1.0, 3, &[0.1, 0.5]).is_err());
    let g = SpaceTimeGrid::new(0.0, 1.0, 3, &[0.0, 0.2, 1.0]).unwrap();
    assert_eq!(g.tau.len(), 2);
    assert!((g.tau[1] - 0.8).abs() < 1e-15);
}

#[test]
fn fourier_state_solves_heat_equation() {
    let s = PointSource::unit(0.3, 0.2);
    let (x, t, e) = (0.55, 0.45, 1e-4);
    let f = |x: f64, t: f64| fourier_heat_dirac(&s, x, t, 200);
    let y_t = (f(x, t + e) - f(x, t - e)) / (2.0 * e);
    let y_xx = (f(x + e, t) - 2.0 * f(x, t) + f(x - e, t)) / (e * e);
    assert!((y_t - y_xx).abs() < 1e-4 * (1.0 + y_t.abs()), "{y_t} vs {y_xx}");
    // Dirichlet data and causality
    assert!(f(0.0, 0.7).abs() < 1e-14 && f(1.0, 0.7).abs() < 1e-13);
    assert_eq!(f(0.5, 0.2), 0.0);
}

#[test]
fn fourier_state_single_mode_late() {
    // one mode dominates after a long time
    let s = PointSource::unit(0.5, 0.0);
    let t = 2.0;
    let y = fourier_heat_dirac(&s, 0.37, t, 200);
    let mode = 2.0 * (0.37 * PI).sin() * (-PI * PI * t).exp();
    assert!(((y - mode) / mode).abs() < 1e-14);
}

#[test]
fn fourier_state_conserves_symmetry_and_decays_in_mass() {
    let s = PointSource::unit(0.5, 0.5);
    let xs: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
    for &t in &[0.51, 0.6, 1.0] {
        for &x in &xs {
            let d = fourier_heat_dirac(&s, x, t, 200) - fourier_heat_dirac(&s, 1.0 - x, t, 200);
            assert!(d.abs() < 1e-10);
        }
    }
    let mass = |t: f64| integrate(&(0..=200).map(|i| i as f64 / 200.0).collect::<Vec<_>>(), |x| fourier_heat_dirac(&s, x, t, 200));
    let (m1, m2, m3) = (mass(0.6), mass(0.8), mass(1.2));
    assert!(m1 > m2 && m2 > m3 && m1 < 1.0);
}

#[test]
fn sampler_matches_pointwise_series() {
    let g = grid(7, 24);
    let s = PointSource { x0: 0.5, t0: 0.5, weight: 2.0 };
    let yd = sample_fourier_dirac(&g, &s, 200).unwrap();
    for k in 1..=g.n_tau() {
        for j in 1..=g.n_h() {
            let v = fourier_heat_dirac(&s, g.x[j - 1], g.midpoint(k), 200);
            assert!((yd.get(j, k) - v).abs() < 1e-13);
        }
    }
}

#[test]
fn sampler_refuses_points_at_the_source_time() {
    // source at 0.55 lies inside an interval whose midpoint is 0.5625
    let g = grid(3, 12);
    let s = PointSource::unit(0.5, 0.55);
    assert!(matches!(sample_fourier_dirac(&g, &s, 200), Err(DataError::TooCloseToSource { .. })));
}

#[test]
fn manufactured_residual_matches_finite_differences() {
    let abar = 0.25;
    let e = 1e-4;
    for &(x, t) in &[(0.3, 0.4), (0.5, 0.5), (0.8, 1.1), (0.1, 1.4)] {
        let w = |x: f64, t: f64| manufactured_adjoint(abar, x, t).0;
        let w_t = (w(x, t + e) - w(x, t - e)) / (2.0 * e);
        let w_xx = (w(x + e, t) - 2.0 * w(x, t) + w(x - e, t)) / (e * e);
        let lw = manufactured_adjoint(abar, x, t).1;
        assert!((lw - (-w_t - w_xx)).abs() < 1e-5, "({x},{t})");
    }
    // -abar at the centre, zero on the lateral boundary
    assert!((manufactured_adjoint(abar, 0.5, 0.5).0 + abar).abs() < 1e-15);
    assert_eq!(manufactured_adjoint(abar, 0.0, 0.9).0, 0.0);
    // |w| <= abar everywhere
    for i in 0..=40 {
        for k in 0..=60 {
            assert!(manufactured_adjoint(abar, i as f64 / 40.0, k as f64 / 40.0).0.abs() <= abar + 1e-15);
        }
    }
}

#[test]
fn manufactured_data_is_shifted_by_the_residual_power() {
    let g = grid(7, 24);
    let s = PointSource::unit(0.5, 0.5);
    let base = sample_fourier_dirac(&g, &s, 200).unwrap();
    let yd = manufactured_desired_state(&g, 0.25, &s, 200, 4.0).unwrap();
    for k in 1..=g.n_tau() {
        for j in 1..=g.n_h() {
            let lw = manufactured_adjoint(0.25, g.x[j - 1], g.midpoint(k)).1;
            assert!((base.get(j, k) - yd.get(j, k) - lw.powi(3)).abs() < 1e-12);
        }
    }
}
