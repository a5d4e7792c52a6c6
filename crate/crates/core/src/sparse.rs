//! Sparse matrix helpers and the Jacobi-preconditioned conjugate gradient.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Square CSR matrix from `(row, col, value)` triplets; duplicates are summed.
pub fn csr_from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<CsrMatrix<f64>> {
    let mut coo = CooMatrix::new(n, n);
    for &(i, j, v) in triplets {
        if i >= n || j >= n {
            return Err(Error::IndexOutOfRange { index: i.max(j), len: n });
        }
        coo.push(i, j, v);
    }
    Ok(CsrMatrix::from(&coo))
}

pub fn matvec(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    a.row_iter()
        .map(|row| row.col_indices().iter().zip(row.values()).map(|(&j, v)| v * x[j]).sum())
        .collect()
}

pub fn diagonal(a: &CsrMatrix<f64>) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| {
            let row = a.row(i);
            row.col_indices().iter().zip(row.values()).filter(|(&j, _)| j == i).map(|(_, v)| *v).sum()
        })
        .collect()
}

pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        d[(i, j)] += v;
    }
    d
}

/// `max |A - Aᵀ|` over the stored pattern.
pub fn max_asymmetry(a: &CsrMatrix<f64>) -> f64 {
    let at = a.transpose();
    let diff = a - &at;
    diff.values().iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of a converged CG run.
#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// Relative residual `‖b − Ax_k‖ / ‖b‖` after each iteration, starting with the initial guess.
    pub history: Vec<f64>,
    /// `(x_k, A x_k)/2 − (b, x_k)` per iteration; decreases monotonically for SPD `A`.
    pub energy: Vec<f64>,
}

impl CgReport {
    pub fn relative_residual(&self) -> f64 {
        *self.history.last().unwrap_or(&0.0)
    }
}

/// Preconditioned CG from `x = 0` until `‖r‖ ≤ tol ‖b‖`.
pub fn conjugate_gradient(a: &CsrMatrix<f64>, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgReport)> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Shape(format!("{}x{} matrix with {n} right-hand side entries", a.nrows(), a.ncols())));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol} must be positive")));
    }
    let inv_diag = diagonal(a)
        .into_iter()
        .enumerate()
        .map(|(i, d)| if d > 0.0 { Ok(1.0 / d) } else { Err(Error::Singular(format!("diagonal entry {i} is {d:.3e}"))) })
        .collect::<Result<Vec<_>>>()?;
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    let mut history = vec![if bnorm > 0.0 { 1.0 } else { 0.0 }];
    let mut energy = vec![0.0];
    if bnorm == 0.0 {
        return Ok((x, CgReport { iterations: 0, history, energy }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = matvec(a, &p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Singular(format!("search direction with (p, Ap) = {pap:.3e}; matrix is not positive definite")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        history.push(rel);
        // Ax = b - r
        energy.push(-0.5 * (dot(b, &x) + dot(&r, &x)));
        if rel <= tol {
            return Ok((x, CgReport { iterations: it, history, energy }));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = *history.last().unwrap();
    Err(Error::SolverFailure { iterations: max_iter, residual, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplace_1d(n: usize) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        csr_from_triplets(n, &t).unwrap()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = csr_from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]).unwrap();
        let d = to_dense(&a);
        assert_eq!(d[(0, 0)], 3.0);
        assert_eq!(d[(1, 0)], 4.0);
        assert_eq!(max_asymmetry(&a), 4.0);
        assert!(csr_from_triplets(2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn identity_returns_rhs() {
        let a = csr_from_triplets(5, &(0..5).map(|i| (i, i, 1.0)).collect::<Vec<_>>()).unwrap();
        let b = [1.0, -2.0, 3.0, 0.5, 7.0];
        let (x, rep) = conjugate_gradient(&a, &b, 1e-12, 10).unwrap();
        assert_eq!(x, b);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn matches_dense_solve_and_energy_decreases() {
        let n = 200;
        let a = laplace_1d(n);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, rep) = conjugate_gradient(&a, &b, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let exact = to_dense(&a).lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let err = x.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8 * exact.amax());
        assert!(rep.relative_residual() <= 1e-12);
        assert!(rep.energy.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
    }

    #[test]
    fn non_convergence_reports_history() {
        let a = laplace_1d(100);
        let b = vec![1.0; 100];
        match conjugate_gradient(&a, &b, 1e-14, 3) {
            Err(Error::SolverFailure { iterations, history, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn indefinite_detected() {
        let a = csr_from_triplets(2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(conjugate_gradient(&a, &[1.0, -1.0], 1e-10, 10), Err(Error::Singular(_))));
    }
}
