//! Small dense linear-algebra helpers shared by the critic and the oracles.
//!
//! All solves go through a pivoted LU factorization and report the residual
//! `‖M x − rhs‖∞`; nothing in this crate forms an explicit inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solution of a dense linear system together with its residual.
#[derive(Debug, Clone)]
pub struct Solved {
    pub x: Vec<f64>,
    pub residual: f64,
}

/// Solves `m · x = rhs` by LU with partial pivoting.
pub fn lu_solve(m: DMatrix<f64>, rhs: &[f64]) -> Result<Solved> {
    let n = m.nrows();
    if m.ncols() != n || rhs.len() != n {
        return Err(Error::Dimension { expected: n, got: rhs.len() });
    }
    let b = DVector::from_column_slice(rhs);
    let check = m.clone();
    let x = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular(format!("{n}x{n} system has a zero pivot")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!("{n}x{n} system produced non-finite solution")));
    }
    let residual = (&check * &x - &b).amax();
    Ok(Solved { x: x.as_slice().to_vec(), residual })
}

/// Residual tolerance used for every oracle solve: `1e-10·(1 + ‖rhs‖∞)`.
pub fn oracle_tolerance(rhs: &[f64]) -> f64 {
    1e-10 * (1.0 + inf_norm(rhs))
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine of the angle between two vectors; 0 if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let s = lu_solve(m, &[3.0, 5.0]).unwrap();
        assert!((s.x[0] - 0.8).abs() < 1e-14);
        assert!((s.x[1] - 1.4).abs() < 1e-14);
        assert!(s.residual < 1e-14);
    }

    #[test]
    fn singular_system_is_an_error() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(lu_solve(m, &[1.0, 1.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn cosine_of_parallel_vectors() {
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }
}
