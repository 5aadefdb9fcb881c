//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Everything here wraps nalgebra; the additions are deterministic ordering
//! of eigenvalues, inverse iteration for eigenvectors (nalgebra only ships
//! eigenvalues for general real matrices), and finite-difference Jacobians
//! used as oracles against the hand-derived ones.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{HcError, Result};

/// Eigenvalues sorted by descending modulus, ties broken by (re, im) so the
/// order is reproducible across runs.
pub fn eigenvalues_sorted(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = m.complex_eigenvalues().iter().cloned().collect();
    ev.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(b.re.partial_cmp(&a.re).unwrap())
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    ev
}

/// One eigenvector for an (approximate) eigenvalue via inverse iteration.
///
/// The shift is perturbed slightly so the factorization stays invertible even
/// when `mu` is exact. Returns a unit complex vector.
pub fn eigenvector(m: &DMatrix<f64>, mu: Complex<f64>) -> Result<DVector<Complex<f64>>> {
    let n = m.nrows();
    let mc: DMatrix<Complex<f64>> = m.map(|x| Complex::new(x, 0.0));
    let scale = m.amax().max(1.0);
    let shift = mu + Complex::new(1e-10 * scale, 1e-10 * scale);
    let a = &mc - DMatrix::<Complex<f64>>::identity(n, n) * shift;
    let lu = a.lu();
    let mut v = DVector::<Complex<f64>>::from_fn(n, |i, _| {
        Complex::new(1.0 + 0.1 * i as f64, 0.05 * (i as f64 + 1.0))
    });
    v /= Complex::new(v.norm(), 0.0);
    for _ in 0..50 {
        let mut w = lu
            .solve(&v)
            .ok_or_else(|| HcError::SingularJacobian("inverse iteration: singular shift".into()))?;
        let n2 = w.norm();
        if !n2.is_finite() || n2 == 0.0 {
            return Err(HcError::SingularJacobian(
                "inverse iteration diverged".into(),
            ));
        }
        w /= Complex::new(n2, 0.0);
        let delta = (&w - &v).norm().min((&w + &v).norm());
        v = w;
        if delta < 1e-14 {
            break;
        }
    }
    // Residual check: ||A v - mu v|| should be small relative to ||A||.
    let resid = (&mc * &v - v.map(|x| x * mu)).norm();
    if resid > 1e-6 * scale {
        return Err(HcError::SpectralSplitFailure(format!(
            "inverse iteration residual {resid:.3e} too large for eigenvalue {mu}"
        )));
    }
    Ok(v)
}

/// Real basis of the invariant subspace spanned by the given eigenvalues.
///
/// Complex eigenvalues contribute the real and imaginary parts of their
/// eigenvector; callers should pass only one member of each conjugate pair.
/// The result is orthonormalized and has full column rank.
pub fn real_invariant_basis(m: &DMatrix<f64>, eigs: &[Complex<f64>]) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for &mu in eigs {
        let v = eigenvector(m, mu)?;
        let re = v.map(|x| x.re);
        let im = v.map(|x| x.im);
        cols.push(re);
        if mu.im.abs() > 1e-12 * mu.norm().max(1.0) {
            cols.push(im);
        }
    }
    orthonormalize(&cols, n)
}

/// Gram-Schmidt with a rank check.
pub fn orthonormalize(cols: &[DVector<f64>], n: usize) -> Result<DMatrix<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for c in cols {
        debug_assert_eq!(c.len(), n);
        let mut w = c.clone();
        for b in &basis {
            let proj = b.dot(&w);
            w -= b * proj;
        }
        let nw = w.norm();
        if nw < 1e-10 * c.norm().max(1.0) {
            return Err(HcError::SpectralSplitFailure(
                "invariant subspace basis is rank deficient".into(),
            ));
        }
        basis.push(w / nw);
    }
    Ok(DMatrix::from_columns(&basis.iter().cloned().collect::<Vec<_>>()))
}

/// Integer matrix power (k >= 0).
pub fn mat_pow(m: &DMatrix<f64>, k: u32) -> DMatrix<f64> {
    let n = m.nrows();
    let mut acc = DMatrix::identity(n, n);
    let mut base = m.clone();
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            acc = &acc * &base;
        }
        base = &base * &base;
        e >>= 1;
    }
    acc
}

/// Rotation by `theta` acting on (x1, x2).
pub fn rot2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Central-difference Jacobian of `f` at `x`. Step is scaled per coordinate.
pub fn fd_jacobian<F>(f: F, x: &[f64], h0: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let f0 = f(x)?;
    let m = f0.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = h0 * (1.0 + x[j].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Infinity norm of a slice.
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &x| a.max(x.abs()))
}
