//! Damped Newton kernel shared by the implicit solves and the root finders.
//!
//! The residual and Jacobian come from one callback so implementations can
//! share work. Steps are damped by halving until the residual norm decreases;
//! convergence is measured against an absolute tolerance that callers scale
//! to their problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{HcError, Result};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Absolute residual tolerance (callers pre-scale).
    pub tol: f64,
    /// Maximum number of step halvings per iteration.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 50,
            tol: 1e-12,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solve F(x) = 0. The callback returns (residual, Jacobian) at x.
pub fn solve<F>(mut f: F, x0: &DVector<f64>, opts: NewtonOptions) -> Result<NewtonResult>
where
    F: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let mut x = x0.clone();
    let (mut r, mut jac) = f(&x)?;
    let mut rn = r.norm();
    for it in 0..opts.max_iter {
        if rn < opts.tol {
            return Ok(NewtonResult {
                x,
                residual: rn,
                iterations: it,
            });
        }
        let lu = jac.clone().lu();
        let step = lu.solve(&r).ok_or_else(|| {
            HcError::SingularJacobian(format!("newton: singular Jacobian at iteration {it}"))
        })?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &x - &step * t;
            match f(&cand) {
                Ok((rc, jc)) => {
                    let rcn = rc.norm();
                    if rcn < rn || rcn < opts.tol {
                        accepted = Some((cand, rc, jc, rcn));
                        break;
                    }
                }
                Err(_) if t > 1e-12 => {
                    // Step left the evaluable region; shorten it.
                }
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, rc, jc, rcn)) => {
                x = cand;
                r = rc;
                jac = jc;
                rn = rcn;
            }
            None => {
                return Err(HcError::NoConvergence {
                    context: "newton: no damping step decreased the residual".into(),
                    residual: rn,
                    iterations: it,
                });
            }
        }
    }
    if rn < opts.tol {
        Ok(NewtonResult {
            x,
            residual: rn,
            iterations: opts.max_iter,
        })
    } else {
        Err(HcError::NoConvergence {
            context: "newton: iteration budget exhausted".into(),
            residual: rn,
            iterations: opts.max_iter,
        })
    }
}

/// Invert `map` near `seed`: find p with map(p) = target.
pub fn invert<M, J>(
    map: M,
    jac: J,
    target: &DVector<f64>,
    seed: &DVector<f64>,
    opts: NewtonOptions,
) -> Result<NewtonResult>
where
    M: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    solve(
        |p| Ok((map(p)? - target, jac(p)?)),
        seed,
        opts,
    )
}
