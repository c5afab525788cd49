//! Linear solves for the implicit velocity update `(M + Δt² H) v = b`.

use nalgebra::{DMatrix, DVector};

use super::sparse::BlockMatrix;
use crate::error::{Error, Result};

pub const CG_TOLERANCE: f64 = 1e-9;
/// Largest mesh for which a CG breakdown falls back to a dense LU solve.
pub const DENSE_FALLBACK_MAX_VERTICES: usize = 400;

/// `A = M + Δt² H`, with pinned rows and columns replaced by identity.
pub struct ImplicitSystem<'a> {
    pub hessian: &'a BlockMatrix,
    pub masses: &'a [f64],
    pub dt2: f64,
    pub pinned: &'a [bool],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    ConjugateGradient,
    Dense,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub method: SolveMethod,
    pub iterations: usize,
    pub relative_residual: f64,
}

impl ImplicitSystem<'_> {
    pub fn dim(&self) -> usize {
        3 * self.masses.len()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut xf = x.to_vec();
        for (i, &p) in self.pinned.iter().enumerate() {
            if p {
                xf[3 * i..3 * i + 3].fill(0.0);
            }
        }
        self.hessian.matvec(&xf, y);
        for (i, &m) in self.masses.iter().enumerate() {
            for d in 0..3 {
                let k = 3 * i + d;
                y[k] = if self.pinned[i] { x[k] } else { m * x[k] + self.dt2 * y[k] };
            }
        }
    }

    fn jacobi(&self) -> Vec<f64> {
        let mut diag = self.hessian.diagonal();
        for (i, &m) in self.masses.iter().enumerate() {
            for d in 0..3 {
                let k = 3 * i + d;
                diag[k] = if self.pinned[i] { 1.0 } else { m + self.dt2 * diag[k] };
            }
        }
        diag
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            self.apply(&e, &mut col);
            e[c] = 0.0;
            for r in 0..n {
                a[(r, c)] = col[r];
            }
        }
        a
    }

    /// Jacobi-preconditioned CG; falls back to a dense LU solve on small
    /// meshes when the system turns out indefinite or CG stalls.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let n = self.dim();
        let bnorm = norm(b);
        if bnorm == 0.0 {
            let stats = SolveStats { method: SolveMethod::ConjugateGradient, iterations: 0, relative_residual: 0.0 };
            return Ok((vec![0.0; n], stats));
        }
        if !bnorm.is_finite() {
            return Err(Error::Solve("right-hand side is not finite".into()));
        }
        match self.pcg(b, bnorm) {
            Ok(res) => Ok(res),
            Err(reason) if self.masses.len() <= DENSE_FALLBACK_MAX_VERTICES => self.dense_solve(b, bnorm).map_err(|e| {
                Error::Solve(format!("{reason}; dense fallback also failed: {e}"))
            }),
            Err(reason) => Err(Error::Solve(reason)),
        }
    }

    fn pcg(&self, b: &[f64], bnorm: f64) -> std::result::Result<(Vec<f64>, SolveStats), String> {
        let n = b.len();
        let diag = self.jacobi();
        if let Some(k) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(format!("non-positive diagonal entry {} at dof {k}", diag[k]));
        }
        let max_iter = 10 * n;
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        for it in 1..=max_iter {
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(format!("non-positive curvature {pap:e} at iteration {it}"));
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rel = norm(&r) / bnorm;
            if rel <= CG_TOLERANCE {
                let stats = SolveStats { method: SolveMethod::ConjugateGradient, iterations: it, relative_residual: rel };
                return Ok((x, stats));
            }
            for k in 0..n {
                z[k] = r[k] / diag[k];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        Err(format!("no convergence after {max_iter} iterations (residual {:e})", norm(&r) / bnorm))
    }

    pub fn dense_solve(&self, b: &[f64], bnorm: f64) -> Result<(Vec<f64>, SolveStats)> {
        let a = self.to_dense();
        let lu = a.clone().lu();
        let x = lu
            .solve(&DVector::from_column_slice(b))
            .ok_or_else(|| Error::Solve("singular implicit system".into()))?;
        let res = &a * &x - DVector::from_column_slice(b);
        let rel = res.norm() / bnorm;
        if !rel.is_finite() || rel > 1e-6 {
            return Err(Error::Solve(format!("dense solve residual {rel:e}")));
        }
        Ok((x.as_slice().to_vec(), SolveStats { method: SolveMethod::Dense, iterations: 0, relative_residual: rel }))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
