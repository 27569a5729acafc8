//! Exact discretization of `ż = Az + Σ_j g_j ξ_j(t) + b u(t)` with white
//! `ξ_j` of intensity `q_j`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative pivot size below which a covariance direction is treated as empty.
const PIVOT_TOLERANCE: f64 = 1e-13;

/// `(Φ, Q_d)` for step `h` by Van Loan's method: the exponential of
/// `[[−A, Q_c], [0, Aᵀ]] h` holds `Φᵀ` and `Φ⁻¹ Q_d`.
pub fn van_loan(a: &DMatrix<f64>, q: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    c.view_mut((0, 0), (n, n)).copy_from(&(-a * h));
    c.view_mut((0, n), (n, n)).copy_from(&(q * h));
    c.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * h));
    let e = c.exp();
    let phi = e.view((n, n), (n, n)).transpose();
    let mut qd = &phi * e.view((0, n), (n, n));
    symmetrize(&mut qd);
    (phi, qd)
}

/// State transition `e^{Ah}` and the response `∫_0^h e^{Aτ} dτ · b` to an
/// input held constant over the step.
pub fn zero_order_hold(a: &DMatrix<f64>, b: &DVector<f64>, h: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut c = DMatrix::zeros(n + 1, n + 1);
    c.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    c.view_mut((0, n), (n, 1)).copy_from(&(b * h));
    let e = c.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, 1)).column(0).into_owned())
}

/// Stationary covariance: solves `AP + PAᵀ + Q = 0`.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let solution = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Unstable("no stationary state (singular Lyapunov operator)".into()))?;
    let mut p = DMatrix::from_column_slice(n, n, solution.as_slice());
    symmetrize(&mut p);
    Ok(p)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Cholesky-type factor `L` (n × r) with `L Lᵀ ≈ Σ`, where the `r` columns
/// correspond to the non-negligible pivots in order. Zero rows and columns
/// of `Σ` produce no column, so they consume no random numbers.
pub fn covariance_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sigma.nrows();
    let scale = (0..n).map(|i| sigma[(i, i)]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let mut work = sigma.clone();
    let mut columns: Vec<DVector<f64>> = Vec::new();
    for k in 0..n {
        let pivot = work[(k, k)];
        if pivot <= PIVOT_TOLERANCE * scale {
            continue;
        }
        let root = pivot.sqrt();
        let mut col = DVector::zeros(n);
        for i in k..n {
            col[i] = work[(i, k)] / root;
        }
        for j in k..n {
            for i in k..n {
                work[(i, j)] -= col[i] * col[j];
            }
        }
        columns.push(col);
    }
    DMatrix::from_columns(&columns)
}

/// True when every eigenvalue of `a` has a negative real part.
pub fn is_asymptotically_stable(a: &DMatrix<f64>) -> bool {
    a.clone().complex_eigenvalues().iter().all(|l| l.re < 0.0)
}

/// Complex amplitude `Z` of the steady response `Re(Z e^{iωt})` to the input
/// `b · Re(c e^{iωt})`.
pub fn harmonic_response(a: &DMatrix<f64>, b: &DVector<f64>, omega: f64, c: Complex64) -> Result<DVector<Complex64>> {
    let n = a.nrows();
    let mut m = a.map(|v| Complex64::new(-v, 0.0));
    for i in 0..n {
        m[(i, i)] += Complex64::new(0.0, omega);
    }
    let rhs = b.map(|v| Complex64::new(v, 0.0) * c);
    m.lu().solve(&rhs).ok_or_else(|| Error::Unstable("drive frequency hits an undamped eigenvalue".into()))
}
