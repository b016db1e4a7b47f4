//! Normal equations with a block-tridiagonal motion chain bordered by the
//! dense calibration block.
//!
//! ```text
//! ┌ A  B ┐ ┌ x ┐   ┌ a ┐      A: 9×9 blocks, tridiagonal
//! └ Bᵀ C ┘ └ y ┘ = └ c ┘      C: 21×21
//! ```
//!
//! `A` is factored by block Cholesky, `y` comes from the Schur complement
//! `C − BᵀA⁻¹B` and `x` from back substitution.

use nalgebra::{Cholesky, DMatrix, DVector, SMatrix};

use crate::error::{Error, Result};
use crate::imu::Matrix9;
use crate::solver::factors::Vector9;
use crate::state::{CALIB_DIM, MOTION_DIM};

pub type Matrix9x21 = SMatrix<f64, 9, 21>;
pub type Matrix21 = SMatrix<f64, 21, 21>;
pub type Vector21 = SMatrix<f64, 21, 1>;

#[derive(Clone, Debug)]
pub struct BorderedSystem {
    /// `A_ii`
    pub diag: Vec<Matrix9>,
    /// `A_{i+1,i}`
    pub lower: Vec<Matrix9>,
    /// `B_i`
    pub border: Vec<Matrix9x21>,
    pub calib: Matrix21,
    pub rhs_motion: Vec<Vector9>,
    pub rhs_calib: Vector21,
}

/// Solution in the same block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct BorderedSolution {
    pub motion: Vec<Vector9>,
    pub calib: Vector21,
}

impl BorderedSolution {
    pub fn norm(&self) -> f64 {
        (self.motion.iter().map(|m| m.norm_squared()).sum::<f64>() + self.calib.norm_squared()).sqrt()
    }
}

impl BorderedSystem {
    pub fn zeros(frames: usize) -> Self {
        Self {
            diag: vec![Matrix9::zeros(); frames],
            lower: vec![Matrix9::zeros(); frames.saturating_sub(1)],
            border: vec![Matrix9x21::zeros(); frames],
            calib: Matrix21::zeros(),
            rhs_motion: vec![Vector9::zeros(); frames],
            rhs_calib: Vector21::zeros(),
        }
    }

    pub fn frames(&self) -> usize {
        self.diag.len()
    }

    pub fn dimension(&self) -> usize {
        MOTION_DIM * self.frames() + CALIB_DIM
    }

    /// Diagonal of the full matrix, motion blocks first.
    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.dimension());
        for (i, block) in self.diag.iter().enumerate() {
            d.fixed_rows_mut::<9>(MOTION_DIM * i).copy_from(&block.diagonal());
        }
        d.fixed_rows_mut::<21>(MOTION_DIM * self.frames()).copy_from(&self.calib.diagonal());
        d
    }

    /// Adds `d[k]` to diagonal entry `k`.
    pub fn add_diagonal(&mut self, d: &DVector<f64>) {
        for (i, block) in self.diag.iter_mut().enumerate() {
            for k in 0..MOTION_DIM {
                block[(k, k)] += d[MOTION_DIM * i + k];
            }
        }
        let off = MOTION_DIM * self.frames();
        for k in 0..CALIB_DIM {
            self.calib[(k, k)] += d[off + k];
        }
    }

    /// Pins calibration coordinate `k` to zero in the solution.
    pub fn fix_calib(&mut self, k: usize) {
        for b in &mut self.border {
            b.column_mut(k).fill(0.0);
        }
        self.calib.row_mut(k).fill(0.0);
        self.calib.column_mut(k).fill(0.0);
        self.calib[(k, k)] = 1.0;
        self.rhs_calib[k] = 0.0;
    }

    /// Full dense matrix and right-hand side.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.frames();
        let dim = self.dimension();
        let off = MOTION_DIM * n;
        let mut h = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for i in 0..n {
            let r = MOTION_DIM * i;
            h.fixed_view_mut::<9, 9>(r, r).copy_from(&self.diag[i]);
            h.fixed_view_mut::<9, 21>(r, off).copy_from(&self.border[i]);
            h.fixed_view_mut::<21, 9>(off, r).copy_from(&self.border[i].transpose());
            rhs.fixed_rows_mut::<9>(r).copy_from(&self.rhs_motion[i]);
            if i + 1 < n {
                h.fixed_view_mut::<9, 9>(r + 9, r).copy_from(&self.lower[i]);
                h.fixed_view_mut::<9, 9>(r, r + 9).copy_from(&self.lower[i].transpose());
            }
        }
        h.fixed_view_mut::<21, 21>(off, off).copy_from(&self.calib);
        rhs.fixed_rows_mut::<21>(off).copy_from(&self.rhs_calib);
        (h, rhs)
    }

    /// Solves the system. Fails when a pivot block or the Schur complement
    /// is not positive definite.
    pub fn solve(&self) -> Result<BorderedSolution> {
        let n = self.frames();
        if n == 0 {
            let y = Cholesky::new(self.calib).ok_or_else(not_pd)?.solve(&self.rhs_calib);
            return Ok(BorderedSolution { motion: vec![], calib: y });
        }

        // A = LLᵀ with L_ii lower-triangular and L_{i+1,i} = A_{i+1,i}·L_ii⁻ᵀ.
        let mut l_diag: Vec<Matrix9> = Vec::with_capacity(n);
        let mut l_lower: Vec<Matrix9> = Vec::with_capacity(n - 1);
        // Forward-substituted border and rhs: Z = L⁻¹[B | a].
        let mut zb: Vec<Matrix9x21> = Vec::with_capacity(n);
        let mut za: Vec<Vector9> = Vec::with_capacity(n);
        for i in 0..n {
            let mut a = self.diag[i];
            let mut b = self.border[i];
            let mut r = self.rhs_motion[i];
            if i > 0 {
                let l = &l_lower[i - 1];
                a -= l * l.transpose();
                b -= l * zb[i - 1];
                r -= l * za[i - 1];
            }
            let chol = Cholesky::new(a).ok_or_else(not_pd)?;
            let lii = chol.l();
            let zbi = lii.solve_lower_triangular(&b).ok_or_else(not_pd)?;
            let zai = lii.solve_lower_triangular(&r).ok_or_else(not_pd)?;
            if i + 1 < n {
                // L_{i+1,i} = A_{i+1,i}·L_ii⁻ᵀ, i.e. L_ii·L_{i+1,i}ᵀ = A_{i+1,i}ᵀ.
                let t = lii.solve_lower_triangular(&self.lower[i].transpose()).ok_or_else(not_pd)?;
                l_lower.push(t.transpose());
            }
            l_diag.push(lii);
            zb.push(zbi);
            za.push(zai);
        }

        let mut schur = self.calib;
        let mut rhs = self.rhs_calib;
        for i in 0..n {
            schur -= zb[i].transpose() * zb[i];
            rhs -= zb[i].transpose() * za[i];
        }
        let schur = 0.5 * (schur + schur.transpose());
        let y = Cholesky::new(schur).ok_or_else(not_pd)?.solve(&rhs);

        // Lᵀx = Za − Zb·y
        let mut x = vec![Vector9::zeros(); n];
        for i in (0..n).rev() {
            let mut v = za[i] - zb[i] * y;
            if i + 1 < n {
                v -= l_lower[i].transpose() * x[i + 1];
            }
            x[i] = l_diag[i].transpose().solve_upper_triangular(&v).ok_or_else(not_pd)?;
        }
        Ok(BorderedSolution { motion: x, calib: y })
    }
}

fn not_pd() -> Error {
    Error::Convergence("normal equations are not positive definite".into())
}
