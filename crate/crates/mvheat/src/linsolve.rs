//! Linear algebra for the condensed Newton system
//!
//! ```text
//!   H dw = b  on free rows,   dw_A = d_A  on fixed (active) rows,
//!   H = Lt diag(dz) L
//! ```
//!
//! Two direct methods are provided. `Banded` assembles `H` in time-major band
//! storage (half-bandwidth `N_h + 2`) and factors it after eliminating the
//! fixed rows. `Schur` never forms `H`: it applies `H^{-1} = L^{-1} dz^{-1} Lt^{-1}`
//! by block substitution and solves the `|A| x |A|` Schur complement densely.
//! The first costs `O(N N_h^2)` time and `O(N N_h)` memory per factorization,
//! the second `O(|A| N)`, which wins on long time grids with few active
//! constraints.

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;
use crate::fem::{DiscreteSystem, BATCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    Auto,
    Banded,
    Schur,
}

/// Memory ceiling for the band factor, in bytes.
const BAND_MEMORY_LIMIT: f64 = 1.5e9;

/// Memory ceiling for the dense Schur complement, in bytes.
const SCHUR_MEMORY_LIMIT: f64 = 1.5e9;

/// Result of one constrained solve.
pub struct ConstrainedSolution {
    pub dw: Vec<f64>,
    /// `(H dw)` at the fixed indices, in the order they were given.
    pub h_dw_fixed: Vec<f64>,
    pub method: LinearSolver,
}

pub struct NewtonMatrix<'a> {
    sys: &'a DiscreteSystem,
    /// Diagonal weights in state space.
    dz: Vec<f64>,
}

impl<'a> NewtonMatrix<'a> {
    pub fn new(sys: &'a DiscreteSystem, dz: Vec<f64>) -> Self {
        assert_eq!(dz.len(), sys.dim());
        Self { sys, dz }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut z = self.sys.apply_l(v);
        for (zi, d) in z.iter_mut().zip(&self.dz) {
            *zi *= d;
        }
        self.sys.apply_lt(&z)
    }

    fn half_bandwidth(&self) -> usize {
        let nh = self.sys.n_h();
        if self.sys.n_tau() == 1 {
            2.min(nh - 1)
        } else {
            nh + 2
        }
    }

    pub fn choose(&self, n_fixed: usize, pref: LinearSolver) -> LinearSolver {
        match pref {
            LinearSolver::Banded | LinearSolver::Schur => pref,
            LinearSolver::Auto => {
                let n = self.sys.dim() as f64;
                let bw = self.half_bandwidth() as f64;
                let band_mem = n * (bw + 1.0) * 8.0;
                let band_cost = 0.5 * n * bw * bw + 40.0 * n;
                let schur_cost = (n_fixed as f64 + 1.0) * 30.0 * n + (n_fixed as f64).powi(3) / 3.0;
                if band_mem > BAND_MEMORY_LIMIT || schur_cost < band_cost {
                    LinearSolver::Schur
                } else {
                    LinearSolver::Banded
                }
            }
        }
    }

    /// Solves for `dw` with `dw[fixed[i]] = fixed_values[i]` and
    /// `(H dw)_F = b_F` on the remaining rows. `fixed` must be sorted.
    pub fn solve_constrained(
        &self,
        b: &[f64],
        fixed: &[usize],
        fixed_values: &[f64],
        pref: LinearSolver,
    ) -> Result<ConstrainedSolution, SolveError> {
        debug_assert!(fixed.windows(2).all(|w| w[0] < w[1]));
        match self.choose(fixed.len(), pref) {
            LinearSolver::Schur => {
                let bytes = (fixed.len() as f64).powi(2) * 8.0;
                if bytes > SCHUR_MEMORY_LIMIT {
                    return Err(SolveError::TooLarge { active: fixed.len(), bytes });
                }
                self.solve_schur(b, fixed, fixed_values)
            }
            _ => self.solve_banded(b, fixed, fixed_values),
        }
    }

    fn solve_banded(&self, b: &[f64], fixed: &[usize], vals: &[f64]) -> Result<ConstrainedSolution, SolveError> {
        let n = self.sys.dim();
        let mut is_fixed = vec![false; n];
        let mut d = vec![0.0; n];
        for (&i, &v) in fixed.iter().zip(vals) {
            is_fixed[i] = true;
            d[i] = v;
        }
        let hd = if fixed.is_empty() { vec![0.0; n] } else { self.apply(&d) };
        let mut rhs: Vec<f64> = (0..n).map(|i| if is_fixed[i] { d[i] } else { b[i] - hd[i] }).collect();

        let mut band = self.assemble_band();
        band.pin_identity(&is_fixed);
        band.factor()?;
        band.solve(&mut rhs);

        let hdw = self.apply(&rhs);
        let h_dw_fixed = fixed.iter().map(|&i| hdw[i]).collect();
        Ok(ConstrainedSolution { dw: rhs, h_dw_fixed, method: LinearSolver::Banded })
    }

    /// `H` in band storage, summed row by row of `L`.
    fn assemble_band(&self) -> Band {
        let sys = self.sys;
        let nh = sys.n_h();
        let nt = sys.n_tau();
        let mut band = Band::zeros(sys.dim(), self.half_bandwidth());
        let mut cols = [0usize; 6];
        let mut vals = [0.0f64; 6];
        for i in 0..nt {
            let bd = sys.diag_block_matrix(i);
            let sub = if i + 1 < nt { Some(sys.sub_block_matrix(i + 1)) } else { None };
            for m in 0..nh {
                // row (i, m) of L = column (i, m) of Lt
                let mut len = 0;
                for mm in m.saturating_sub(1)..(m + 2).min(nh) {
                    cols[len] = i * nh + mm;
                    vals[len] = bd.get(mm, m);
                    len += 1;
                }
                if let Some(c) = sub {
                    for mm in m.saturating_sub(1)..(m + 2).min(nh) {
                        let v = c.get(mm, m);
                        if v != 0.0 {
                            cols[len] = (i + 1) * nh + mm;
                            vals[len] = v;
                            len += 1;
                        }
                    }
                }
                let dq = self.dz[i * nh + m];
                for a in 0..len {
                    for c in 0..=a {
                        band.add(cols[a], cols[c], dq * vals[a] * vals[c]);
                    }
                }
            }
        }
        band
    }

    /// `H^{-1} v` restricted to block rows `>= last_block`; `v` is zero
    /// before block `first_block`.
    fn apply_inverse_in_place(&self, v: &mut [f64], first_block: usize, last_block: usize) {
        let nh = self.sys.n_h();
        self.sys.solve_lt_in_place(v, first_block);
        for (x, d) in v[first_block * nh..].iter_mut().zip(&self.dz[first_block * nh..]) {
            *x /= d;
        }
        self.sys.solve_l_in_place(v, last_block);
    }

    fn solve_schur(&self, b: &[f64], fixed: &[usize], vals: &[f64]) -> Result<ConstrainedSolution, SolveError> {
        let n = self.sys.dim();
        let nh = self.sys.n_h();
        let na = fixed.len();
        let mut bt = b.to_vec();
        for &i in fixed {
            bt[i] = 0.0;
        }
        let mut x0 = bt.clone();
        self.apply_inverse_in_place(&mut x0, 0, 0);
        if na == 0 {
            return Ok(ConstrainedSolution { dw: x0, h_dw_fixed: vec![], method: LinearSolver::Schur });
        }

        // columns of E_A^T H^{-1} E_A, BATCH at a time; rows before kmin are never read
        let kmin = fixed[0] / nh;
        let mut s = DMatrix::<f64>::zeros(na, na);
        let mut buf = vec![[0.0; BATCH]; n - kmin * nh];
        for (b0, chunk) in fixed.chunks(BATCH).enumerate() {
            buf.iter_mut().for_each(|x| *x = [0.0; BATCH]);
            for (c, &ic) in chunk.iter().enumerate() {
                buf[ic - kmin * nh][c] = 1.0;
            }
            let kb = chunk[0] / nh;
            self.sys.solve_lt_batch(&mut buf, kmin, kb);
            for (x, d) in buf[(kb - kmin) * nh..].iter_mut().zip(&self.dz[kb * nh..]) {
                let inv = 1.0 / d;
                x.iter_mut().for_each(|v| *v *= inv);
            }
            self.sys.solve_l_batch(&mut buf, kmin, kmin);
            for (c, _) in chunk.iter().enumerate() {
                for (r, &ir) in fixed.iter().enumerate() {
                    s[(r, b0 * BATCH + c)] = buf[ir - kmin * nh][c];
                }
            }
        }
        // symmetrize roundoff
        for r in 0..na {
            for c in 0..r {
                let v = 0.5 * (s[(r, c)] + s[(c, r)]);
                s[(r, c)] = v;
                s[(c, r)] = v;
            }
        }
        let rhs = DVector::from_iterator(na, fixed.iter().zip(vals).map(|(&i, &v)| v - x0[i]));
        let chol = s.clone().cholesky().ok_or(SolveError::Singular { pivot: 0, value: f64::NAN })?;
        let mu = chol.solve(&rhs);

        let mut full = bt;
        for (a, &i) in fixed.iter().enumerate() {
            full[i] = mu[a];
        }
        self.apply_inverse_in_place(&mut full, 0, 0);
        for (&i, &v) in fixed.iter().zip(vals) {
            full[i] = v;
        }
        Ok(ConstrainedSolution { dw: full, h_dw_fixed: mu.iter().copied().collect(), method: LinearSolver::Schur })
    }
}

/// Symmetric band matrix, lower triangle stored row-major: row `i` holds
/// columns `i - bw ..= i`.
struct Band {
    n: usize,
    bw: usize,
    a: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, a: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw + j - i)
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let p = self.idx(i, j);
        self.a[p] += v;
    }

    /// Replaces rows and columns of pinned indices by identity.
    fn pin_identity(&mut self, pinned: &[bool]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                if pinned[i] || pinned[j] {
                    let p = self.idx(i, j);
                    self.a[p] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
    }

    /// In-place Cholesky `A = L L^T`.
    fn factor(&mut self) -> Result<(), SolveError> {
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                let mut s = self.a[ri + j];
                let (xi, xj) = (&self.a[ri + klo..ri + j], &self.a[rj + klo..rj + j]);
                s -= xi.iter().zip(xj).map(|(a, b)| a * b).sum::<f64>();
                if j == i {
                    if !(s > 0.0) {
                        return Err(SolveError::Singular { pivot: i, value: s });
                    }
                    self.a[ri + i] = s.sqrt();
                } else {
                    self.a[ri + j] = s / self.a[rj + j];
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let s: f64 = self.a[ri + lo..ri + i].iter().zip(&b[lo..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.a[ri + i];
        }
        for i in (0..self.n).rev() {
            let ri = i * w + bw - i;
            b[i] /= self.a[ri + i];
            let xi = b[i];
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                b[j] -= self.a[ri + j] * xi;
            }
        }
    }
}
