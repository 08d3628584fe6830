//! P1 finite elements in space, and the two space-time system matrices.
//!
//! Both schemes lead to a block lower-bidiagonal matrix `Lt` acting on state
//! coefficients `y = (y_1, ..., y_Ntau)` (one spatial vector per time
//! interval) and producing one row block per temporal test function:
//!
//! ```text
//!   (Lt y)_k = B_k y_{k+1} + C_k y_k          (k = 0 .. Ntau-1, blocks 0-based)
//! ```
//!
//! * variational (Petrov-Galerkin): `B_k = M + tau_{k+1}/2 A`, `C_k = -M + tau_k/2 A`
//! * DG(0) / implicit Euler:        `B_k = M + tau_{k+1} A`,   `C_k = -M`
//!
//! For DG the initial block row `[M, 0, ...]` is eliminated; the initial
//! control couples into row 0 with the identity pairing. [`DiscreteSystem::full_matrix`]
//! still assembles the unreduced matrix for inspection.

use serde::{Deserialize, Serialize};

use crate::error::GridError;
use crate::grid::{control_index_sets, ControlRegion, IndexSets, SpaceTimeGrid};
use crate::sparse::CsrMatrix;

/// Number of right-hand sides processed together by the batched solves.
pub const BATCH: usize = 8;

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &SymTridiag, b: f64) -> SymTridiag {
        SymTridiag {
            diag: self.diag.iter().zip(&other.diag).map(|(x, y)| a * x + b * y).collect(),
            off: self.off.iter().zip(&other.off).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    /// `out += sign * T x`.
    #[inline]
    fn mul_acc(&self, x: &[f64], out: &mut [f64], sign: f64) {
        let n = self.n();
        let (d, o, x, out) = (&self.diag[..n], &self.off[..n - 1], &x[..n], &mut out[..n]);
        if n == 1 {
            out[0] += sign * d[0] * x[0];
            return;
        }
        out[0] += sign * (d[0] * x[0] + o[0] * x[1]);
        for i in 1..n - 1 {
            out[i] += sign * (o[i - 1] * x[i - 1] + d[i] * x[i] + o[i] * x[i + 1]);
        }
        out[n - 1] += sign * (o[n - 2] * x[n - 2] + d[n - 1] * x[n - 1]);
    }

    /// `out += T x`.
    #[inline]
    pub fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        self.mul_acc(x, out, 1.0)
    }

    /// `out -= T x`.
    #[inline]
    pub fn mul_sub(&self, x: &[f64], out: &mut [f64]) {
        self.mul_acc(x, out, -1.0)
    }

    /// `out -= T x` for [`BATCH`] interleaved vectors.
    #[inline]
    pub fn mul_sub_batch(&self, x: &[[f64; BATCH]], out: &mut [[f64; BATCH]]) {
        let n = self.n();
        let (x, out) = (&x[..n], &mut out[..n]);
        for i in 0..n {
            let d = self.diag[i];
            let mut acc = x[i].map(|v| d * v);
            if i > 0 {
                let o = self.off[i - 1];
                for c in 0..BATCH {
                    acc[c] += o * x[i - 1][c];
                }
            }
            if i + 1 < n {
                let o = self.off[i];
                for c in 0..BATCH {
                    acc[c] += o * x[i + 1][c];
                }
            }
            for c in 0..BATCH {
                out[i][c] -= acc[c];
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if i + 1 == j {
            self.off[i]
        } else if j + 1 == i {
            self.off[j]
        } else {
            0.0
        }
    }

    pub fn factor(&self) -> Option<TridiagCholesky> {
        TridiagCholesky::new(self)
    }
}

/// Cholesky factor `T = L L^T` of a symmetric positive definite tridiagonal
/// matrix; `L` is lower bidiagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagCholesky {
    /// Reciprocal diagonal of `L`.
    dinv: Vec<f64>,
    s: Vec<f64>,
}

impl TridiagCholesky {
    pub fn new(t: &SymTridiag) -> Option<Self> {
        let n = t.n();
        let mut d = vec![0.0; n];
        let mut s = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let mut piv = t.diag[i];
            if i > 0 {
                piv -= s[i - 1] * s[i - 1];
            }
            if !(piv > 0.0) {
                return None;
            }
            d[i] = piv.sqrt();
            if i + 1 < n {
                s[i] = t.off[i] / d[i];
            }
        }
        Some(Self { dinv: d.iter().map(|v| 1.0 / v).collect(), s })
    }

    /// Solves `T x = b` in place.
    #[inline]
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dinv.len();
        let (dinv, s) = (&self.dinv[..n], &self.s[..n - 1]);
        let b = &mut b[..n];
        let mut prev = b[0] * dinv[0];
        b[0] = prev;
        for i in 1..n {
            prev = (b[i] - s[i - 1] * prev) * dinv[i];
            b[i] = prev;
        }
        let mut next = b[n - 1] * dinv[n - 1];
        b[n - 1] = next;
        for i in (0..n - 1).rev() {
            next = (b[i] - s[i] * next) * dinv[i];
            b[i] = next;
        }
    }

    /// [`solve_in_place`](Self::solve_in_place) for [`BATCH`] interleaved vectors.
    #[inline]
    pub fn solve_batch(&self, b: &mut [[f64; BATCH]]) {
        let n = self.dinv.len();
        let b = &mut b[..n];
        for c in 0..BATCH {
            b[0][c] *= self.dinv[0];
        }
        for i in 1..n {
            let (s, d) = (self.s[i - 1], self.dinv[i]);
            let prev = b[i - 1];
            for c in 0..BATCH {
                b[i][c] = (b[i][c] - s * prev[c]) * d;
            }
        }
        for c in 0..BATCH {
            b[n - 1][c] *= self.dinv[n - 1];
        }
        for i in (0..n - 1).rev() {
            let (s, d) = (self.s[i], self.dinv[i]);
            let next = b[i + 1];
            for c in 0..BATCH {
                b[i][c] = (b[i][c] - s * next[c]) * d;
            }
        }
    }
}

/// Element lengths of the spatial mesh including the boundary elements.
fn element_lengths(grid: &SpaceTimeGrid) -> Vec<f64> {
    let mut nodes = Vec::with_capacity(grid.n_h() + 2);
    nodes.push(grid.a);
    nodes.extend_from_slice(&grid.x);
    nodes.push(grid.b);
    nodes.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Consistent P1 mass matrix `(int e_i e_j)`.
pub fn assemble_mass(grid: &SpaceTimeGrid) -> SymTridiag {
    let he = element_lengths(grid);
    let n = grid.n_h();
    SymTridiag {
        diag: (0..n).map(|j| (he[j] + he[j + 1]) / 3.0).collect(),
        off: (0..n.saturating_sub(1)).map(|j| he[j + 1] / 6.0).collect(),
    }
}

/// P1 stiffness matrix `(int e_i' e_j')`.
pub fn assemble_stiffness(grid: &SpaceTimeGrid) -> SymTridiag {
    let he = element_lengths(grid);
    let n = grid.n_h();
    SymTridiag {
        diag: (0..n).map(|j| 1.0 / he[j] + 1.0 / he[j + 1]).collect(),
        off: (0..n.saturating_sub(1)).map(|j| -1.0 / he[j + 1]).collect(),
    }
}

/// Lumped weights `omega_j = int e_j`.
pub fn lumped_weights(grid: &SpaceTimeGrid) -> Vec<f64> {
    let he = element_lengths(grid);
    (0..grid.n_h()).map(|j| 0.5 * (he[j] + he[j + 1])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Vd,
    Dg,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Vd => "vd",
            Scheme::Dg => "dg",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Blocks belonging to one distinct step size.
#[derive(Debug, Clone)]
struct StepBlocks {
    tau: f64,
    diag: SymTridiag,
    sub: SymTridiag,
    chol: TridiagCholesky,
}

/// An assembled space-time system. Immutable once built.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub scheme: Scheme,
    pub grid: SpaceTimeGrid,
    pub region: ControlRegion,
    pub sets: IndexSets,
    pub mass: SymTridiag,
    pub stiffness: SymTridiag,
    pub omega: Vec<f64>,
    /// Lumped space-time mass `omega_j tau_k` in state ordering.
    pub m_sigma: Vec<f64>,
    /// Flat adjoint indices of the distributed constraints (`I_sigma` or `I_h x I_tau`).
    pub sigma_idx: Vec<usize>,
    /// Flat adjoint indices of the initial-value constraints (`I_h`, time row 0).
    pub h_idx: Vec<usize>,
    pub p: f64,
    steps: Vec<StepBlocks>,
    /// `step_of[k]`: which entry of `steps` has size `tau[k]`.
    step_of: Vec<usize>,
}

impl DiscreteSystem {
    pub fn assemble(scheme: Scheme, grid: &SpaceTimeGrid, region: &ControlRegion, q: f64) -> Result<Self, GridError> {
        let sets = control_index_sets(grid, region)?;
        let mass = assemble_mass(grid);
        let stiffness = assemble_stiffness(grid);
        let omega = lumped_weights(grid);
        let nh = grid.n_h();
        let nt = grid.n_tau();

        let mut steps: Vec<StepBlocks> = Vec::new();
        let mut step_of = Vec::with_capacity(nt);
        for &tau in &grid.tau {
            let id = match steps.iter().position(|s| s.tau == tau) {
                Some(id) => id,
                None => {
                    let (diag, sub) = match scheme {
                        Scheme::Vd => (mass.combine(1.0, &stiffness, 0.5 * tau), mass.combine(-1.0, &stiffness, 0.5 * tau)),
                        Scheme::Dg => (mass.combine(1.0, &stiffness, tau), mass.combine(-1.0, &stiffness, 0.0)),
                    };
                    let chol = diag.factor().expect("M + c tau A is positive definite");
                    steps.push(StepBlocks { tau, diag, sub, chol });
                    steps.len() - 1
                }
            };
            step_of.push(id);
        }

        let mut m_sigma = Vec::with_capacity(nh * nt);
        for &tau in &grid.tau {
            m_sigma.extend(omega.iter().map(|w| w * tau));
        }

        let sigma_idx: Vec<usize> = match scheme {
            Scheme::Vd => sets.sigma.iter().filter(|&&(_, k)| k < nt).map(|&(j, k)| k * nh + j - 1).collect(),
            Scheme::Dg => {
                if sets.tau.is_empty() {
                    return Err(GridError::EmptyIntervalSet);
                }
                let mut v = Vec::with_capacity(sets.tau.len() * sets.h.len());
                for &k in &sets.tau {
                    for &j in &sets.h {
                        v.push((k - 1) * nh + j - 1);
                    }
                }
                v
            }
        };
        if sigma_idx.is_empty() {
            return Err(GridError::TooCoarse);
        }
        let h_idx = sets.h.iter().map(|&j| j - 1).collect();

        Ok(Self {
            scheme,
            grid: grid.clone(),
            region: *region,
            sets,
            mass,
            stiffness,
            omega,
            m_sigma,
            sigma_idx,
            h_idx,
            p: q / (q - 1.0),
            steps,
            step_of,
        })
    }

    pub fn n_h(&self) -> usize {
        self.grid.n_h()
    }

    pub fn n_tau(&self) -> usize {
        self.grid.n_tau()
    }

    /// Dimension of state and adjoint vectors.
    pub fn dim(&self) -> usize {
        self.grid.n_sigma()
    }

    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    #[inline]
    fn diag_block(&self, k: usize) -> &StepBlocks {
        &self.steps[self.step_of[k]]
    }

    /// Sub-diagonal block of row `k >= 1`; its step size is `tau[k-1]`.
    #[inline]
    fn sub_block(&self, k: usize) -> &SymTridiag {
        &self.steps[self.step_of[k - 1]].sub
    }

    pub fn diag_block_matrix(&self, k: usize) -> &SymTridiag {
        &self.diag_block(k).diag
    }

    pub fn sub_block_matrix(&self, k: usize) -> &SymTridiag {
        self.sub_block(k)
    }

    /// `Lt y`.
    pub fn apply_lt(&self, y: &[f64]) -> Vec<f64> {
        let nh = self.n_h();
        assert_eq!(y.len(), self.dim());
        let mut out = vec![0.0; y.len()];
        for k in 0..self.n_tau() {
            let r = k * nh..(k + 1) * nh;
            self.diag_block(k).diag.mul_add(&y[r.clone()], &mut out[r.clone()]);
            if k > 0 {
                self.sub_block(k).mul_add(&y[(k - 1) * nh..k * nh], &mut out[r]);
            }
        }
        out
    }

    /// `L w = (Lt)^T w`.
    pub fn apply_l(&self, w: &[f64]) -> Vec<f64> {
        let nh = self.n_h();
        let nt = self.n_tau();
        assert_eq!(w.len(), self.dim());
        let mut out = vec![0.0; w.len()];
        for i in 0..nt {
            let r = i * nh..(i + 1) * nh;
            self.diag_block(i).diag.mul_add(&w[r.clone()], &mut out[r.clone()]);
            if i + 1 < nt {
                self.sub_block(i + 1).mul_add(&w[(i + 1) * nh..(i + 2) * nh], &mut out[r]);
            }
        }
        out
    }

    /// Solves `Lt y = rhs` by forward block substitution (the discrete state
    /// equation). Blocks before `first_block` are taken to be zero on input
    /// and output.
    pub fn solve_lt_in_place(&self, v: &mut [f64], first_block: usize) {
        let nh = self.n_h();
        for k in first_block..self.n_tau() {
            let (prev, cur) = v.split_at_mut(k * nh);
            let cur = &mut cur[..nh];
            if k > first_block {
                self.sub_block(k).mul_sub(&prev[(k - 1) * nh..], cur);
            }
            self.diag_block(k).chol.solve_in_place(cur);
        }
    }

    /// Solves `L w = rhs` by backward block substitution, stopping after
    /// block `last_block` (entries below it are left untouched).
    pub fn solve_l_in_place(&self, v: &mut [f64], last_block: usize) {
        let nh = self.n_h();
        let nt = self.n_tau();
        for i in (last_block..nt).rev() {
            let (head, tail) = v.split_at_mut((i + 1) * nh);
            let cur = &mut head[i * nh..];
            if i + 1 < nt {
                self.sub_block(i + 1).mul_sub(&tail[..nh], cur);
            }
            self.diag_block(i).chol.solve_in_place(cur);
        }
    }

    /// Batched [`solve_lt_in_place`](Self::solve_lt_in_place). `v` holds
    /// block rows `offset..N_tau` with nodes interleaved across the batch.
    pub fn solve_lt_batch(&self, v: &mut [[f64; BATCH]], offset: usize, first_block: usize) {
        let nh = self.n_h();
        for k in first_block..self.n_tau() {
            let r = (k - offset) * nh;
            let (prev, cur) = v.split_at_mut(r);
            let cur = &mut cur[..nh];
            if k > first_block {
                self.sub_block(k).mul_sub_batch(&prev[r - nh..], cur);
            }
            self.diag_block(k).chol.solve_batch(cur);
        }
    }

    /// Batched [`solve_l_in_place`](Self::solve_l_in_place), same layout as
    /// [`solve_lt_batch`](Self::solve_lt_batch); requires `last_block >= offset`.
    pub fn solve_l_batch(&self, v: &mut [[f64; BATCH]], offset: usize, last_block: usize) {
        let nh = self.n_h();
        let nt = self.n_tau();
        for i in (last_block..nt).rev() {
            let r = (i - offset) * nh;
            let (head, tail) = v.split_at_mut(r + nh);
            let cur = &mut head[r..];
            if i + 1 < nt {
                self.sub_block(i + 1).mul_sub_batch(&tail[..nh], cur);
            }
            self.diag_block(i).chol.solve_batch(cur);
        }
    }

    pub fn solve_lt(&self, rhs: &[f64]) -> Vec<f64> {
        let mut v = rhs.to_vec();
        self.solve_lt_in_place(&mut v, 0);
        v
    }

    pub fn solve_l(&self, rhs: &[f64]) -> Vec<f64> {
        let mut v = rhs.to_vec();
        self.solve_l_in_place(&mut v, 0);
        v
    }

    /// Explicit (reduced) `Lt` as a sparse matrix.
    pub fn lt_matrix(&self) -> CsrMatrix {
        let nh = self.n_h();
        let n = self.dim();
        let mut trip = Vec::new();
        let push = |trip: &mut Vec<(usize, usize, f64)>, t: &SymTridiag, r0: usize, c0: usize| {
            for i in 0..nh {
                for j in i.saturating_sub(1)..(i + 2).min(nh) {
                    trip.push((r0 + i, c0 + j, t.get(i, j)));
                }
            }
        };
        for k in 0..self.n_tau() {
            push(&mut trip, &self.diag_block(k).diag, k * nh, k * nh);
            if k > 0 {
                push(&mut trip, self.sub_block(k), k * nh, (k - 1) * nh);
            }
        }
        CsrMatrix::from_triplets(n, n, trip)
    }

    /// The unreduced system matrix: identical to [`Self::lt_matrix`] for the
    /// variational scheme; for DG of size `N_sigma + N_h` with first block row
    /// `[M, 0, ...]` and row `k` equal to `[-M, M + tau_k A]`.
    pub fn full_matrix(&self) -> CsrMatrix {
        match self.scheme {
            Scheme::Vd => self.lt_matrix(),
            Scheme::Dg => {
                let nh = self.n_h();
                let n = self.dim() + nh;
                let reduced = self.lt_matrix();
                let mut trip = Vec::new();
                for i in 0..nh {
                    for j in i.saturating_sub(1)..(i + 2).min(nh) {
                        trip.push((i, j, self.mass.get(i, j)));
                        trip.push((nh + i, j, -self.mass.get(i, j)));
                    }
                }
                for r in 0..reduced.nrows {
                    for p in reduced.indptr[r]..reduced.indptr[r + 1] {
                        trip.push((r + nh, reduced.indices[p] + nh, reduced.data[p]));
                    }
                }
                CsrMatrix::from_triplets(n, n, trip)
            }
        }
    }

    /// `(x, t)` of the atom attached to flat adjoint index `i`. For DG this
    /// is the right endpoint of the interval the density lives on.
    pub fn atom_position(&self, i: usize) -> (f64, f64) {
        let nh = self.n_h();
        let (j, k) = (i % nh, i / nh);
        match self.scheme {
            Scheme::Vd => (self.grid.x[j], self.grid.t[k]),
            Scheme::Dg => (self.grid.x[j], self.grid.t[k + 1]),
        }
    }

    /// Length of the time interval carrying the DG density at adjoint index
    /// `i` (1 for the variational scheme, whose atoms are point masses).
    pub fn density_scale(&self, i: usize) -> f64 {
        match self.scheme {
            Scheme::Vd => 1.0,
            Scheme::Dg => self.grid.tau[i / self.n_h()],
        }
    }
}
