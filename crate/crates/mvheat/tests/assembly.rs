mod common;

use common::*;
use mvheat::fem::{assemble_mass, assemble_stiffness, lumped_weights};
use mvheat::Scheme;

#[test]
fn fe_matrices_match_quadrature() {
    for n_h in [1, 2, 3, 7, 15] {
        let g = grid(n_h, 4);
        let (m, a) = spatial_forms(&g);
        let (mh, ah) = (assemble_mass(&g), assemble_stiffness(&g));
        let scale = 1.0 / g.h;
        for i in 0..n_h {
            for j in 0..n_h {
                assert!((mh.get(i, j) - m[i][j]).abs() <= 1e-14, "M[{i},{j}] n_h={n_h}");
                assert!((ah.get(i, j) - a[i][j]).abs() <= 1e-14 * scale, "A[{i},{j}] n_h={n_h}");
            }
        }
        let nodes = spatial_nodes(&g);
        for (j, w) in lumped_weights(&g).iter().enumerate() {
            let exact = integrate(&nodes, |x| hat(&nodes, j + 1, x).0);
            assert!((w - exact).abs() <= 1e-14);
        }
    }
}

#[test]
fn space_time_matrix_matches_bilinear_form() {
    for g in [grid(3, 12), graded_grid(5)] {
        for scheme in [Scheme::Vd, Scheme::Dg] {
            let sys = system(scheme, &g);
            let dense = sys.lt_matrix().to_dense();
            let oracle = match scheme {
                Scheme::Vd => vd_oracle(&g),
                Scheme::Dg => dg_oracle(&g),
            };
            let scale = 1.0 + g.tau.iter().fold(0.0f64, |m, t| m.max(*t)) / g.h;
            for (r, (a, b)) in dense.iter().zip(&oracle).enumerate() {
                assert!(max_abs_diff(a, b) <= 1e-14 * scale, "{scheme} row {r}");
            }
        }
    }
}

#[test]
fn matrix_free_products_agree_with_csr() {
    let mut r = rng(1);
    for scheme in [Scheme::Vd, Scheme::Dg] {
        let sys = system(scheme, &graded_grid(6));
        let lt = sys.lt_matrix();
        let y = random_vec(&mut r, sys.dim());
        assert!(max_abs_diff(&sys.apply_lt(&y), &lt.matvec(&y)) < 1e-13);
        assert!(max_abs_diff(&sys.apply_l(&y), &lt.transpose().matvec(&y)) < 1e-13);
    }
}

#[test]
fn adjointness_on_random_vectors() {
    let mut r = rng(2);
    for g in [grid(3, 12), grid(31, 96), graded_grid(9)] {
        for scheme in [Scheme::Vd, Scheme::Dg] {
            let sys = system(scheme, &g);
            for _ in 0..20 {
                let y = random_vec(&mut r, sys.dim());
                let w = random_vec(&mut r, sys.dim());
                let lhs = dot(&sys.apply_lt(&y), &w);
                let rhs = dot(&y, &sys.apply_l(&w));
                let scale = sys.apply_lt(&y).iter().zip(&w).map(|(a, b)| (a * b).abs()).sum::<f64>();
                assert!((lhs - rhs).abs() <= 1e-12 * scale, "{scheme}: {lhs} vs {rhs}");
            }
        }
    }
}

#[test]
fn block_solves_invert_products() {
    let mut r = rng(3);
    for scheme in [Scheme::Vd, Scheme::Dg] {
        let sys = system(scheme, &graded_grid(7));
        let v = random_vec(&mut r, sys.dim());
        assert!(max_abs_diff(&sys.solve_lt(&sys.apply_lt(&v)), &v) < 1e-11);
        assert!(max_abs_diff(&sys.solve_l(&sys.apply_l(&v)), &v) < 1e-11);
    }
}

#[test]
fn batched_solves_match_single_column() {
    use mvheat::fem::BATCH;
    let mut r = rng(4);
    let sys = system(Scheme::Vd, &graded_grid(5));
    let (nh, nt) = (sys.n_h(), sys.n_tau());
    let offset = 3;
    let cols: Vec<Vec<f64>> = (0..BATCH).map(|_| random_vec(&mut r, (nt - offset) * nh)).collect();
    let mut batch: Vec<[f64; BATCH]> = (0..cols[0].len()).map(|i| std::array::from_fn(|c| cols[c][i])).collect();
    sys.solve_lt_batch(&mut batch, offset, offset);
    sys.solve_l_batch(&mut batch, offset, offset);
    for (c, col) in cols.iter().enumerate() {
        let mut full = vec![0.0; sys.dim()];
        full[offset * nh..].copy_from_slice(col);
        sys.solve_lt_in_place(&mut full, offset);
        sys.solve_l_in_place(&mut full, offset);
        let got: Vec<f64> = batch.iter().map(|b| b[c]).collect();
        assert!(max_abs_diff(&got, &full[offset * nh..]) < 1e-13, "column {c}");
    }
}

#[test]
fn dg_elimination_of_initial_state() {
    // full system [M 0; -M L_dg] (y0, y) = (u0, u) against the reduced solve with
    // the initial control added to the first block
    let mut r = rng(5);
    let sys = system(Scheme::Dg, &grid(5, 12));
    let nh = sys.n_h();
    let full = sys.full_matrix().to_dense();
    let n = full.len();
    let rhs = random_vec(&mut r, n);
    let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| full[i][j]);
    let y_full = dense.lu().solve(&nalgebra::DVector::from_column_slice(&rhs)).unwrap();

    let mut reduced_rhs = rhs[nh..].to_vec();
    for j in 0..nh {
        reduced_rhs[j] += rhs[j];
    }
    let y = sys.solve_lt(&reduced_rhs);
    assert!(max_abs_diff(&y, &y_full.as_slice()[nh..]) < 1e-12);
    assert_eq!(sys.full_matrix().nrows, sys.dim() + nh);
}

#[test]
fn variational_full_matrix_is_the_reduced_one() {
    let sys = system(Scheme::Vd, &grid(3, 12));
    assert_eq!(sys.full_matrix(), sys.lt_matrix());
}

#[test]
fn block_pattern_has_no_stored_zeros() {
    let sys = system(Scheme::Vd, &grid(4, 12));
    let lt = sys.lt_matrix();
    assert!(lt.data.iter().all(|v| *v != 0.0));
    // tridiagonal diagonal blocks and tridiagonal sub-blocks
    let (nh, nt) = (4, 12);
    assert_eq!(lt.nnz(), nt * (3 * nh - 2) + (nt - 1) * (3 * nh - 2));
}
