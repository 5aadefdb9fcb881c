//! Certified solvers on top of the composed return maps: fixed points with
//! a prescribed central-multiplier placement, nontransverse intersections
//! of their invariant manifolds with the local manifolds of the base orbit,
//! square-root families of transverse intersection orbits, re-based
//! tangencies of doubled global passages, and a mesh-transported crossing
//! check between the two saddle sets.
//!
//! Every operation returns a certificate carrying the solved data together
//! with independently recomputable residuals; `revalidate` methods rebuild
//! the residuals from scratch so stored certificates can be audited.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics;
use crate::chart::NormalFormChart;
use crate::dynamics::{CompositeGerm, DomainPolicy, Instance, PhasePoint};
use crate::error::{HcError, Result};
use crate::linalg;
use crate::manifolds::{self, CentralMesh, GraphPoly};
use crate::model::{ConditionReport, Model};
use crate::newton::{self, NewtonOptions};

/// Relative clustering threshold deciding when the central eigenvalue pair
/// cannot be identified unambiguously.
const PAIR_AMBIGUITY_FACTOR: f64 = 1.1;

fn to_vec(x: &DVector<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

fn cplx(p: [f64; 2]) -> Complex<f64> {
    Complex::new(p[0], p[1])
}

/// Roots of z^2 - tr z + det = 0, as a complex pair.
fn quadratic_roots(tr: f64, det: f64) -> (Complex<f64>, Complex<f64>) {
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Stable evaluation: the larger-magnitude root directly, the other
        // via the product.
        let big = if tr >= 0.0 { 0.5 * (tr + s) } else { 0.5 * (tr - s) };
        let small = if big != 0.0 { det / big } else { 0.5 * (tr - s) };
        (Complex::new(small, 0.0), Complex::new(big, 0.0))
    } else {
        let im = (-disc).sqrt() * 0.5;
        (
            Complex::new(0.5 * tr, -im),
            Complex::new(0.5 * tr, im),
        )
    }
}

/// Pick the two spectrum members closest to a predicted pair. Errors when a
/// second, different pairing matches almost as well (no unambiguous central
/// pair).
pub(crate) fn central_pair(
    eigs: &[Complex<f64>],
    predicted: (Complex<f64>, Complex<f64>),
) -> Result<(usize, usize)> {
    if eigs.len() < 2 {
        return Err(HcError::CentralPairAmbiguous(format!(
            "need at least two eigenvalues, got {}",
            eigs.len()
        )));
    }
    let dist = |a: Complex<f64>, b: Complex<f64>| (a - b).norm() / (1.0 + b.norm());
    let mut costs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..eigs.len() {
        for j in (i + 1)..eigs.len() {
            let c1 = dist(eigs[i], predicted.0) + dist(eigs[j], predicted.1);
            let c2 = dist(eigs[i], predicted.1) + dist(eigs[j], predicted.0);
            costs.push((c1.min(c2), i, j));
        }
    }
    costs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if costs.len() > 1 && costs[1].0 < PAIR_AMBIGUITY_FACTOR * costs[0].0 + 1e-12 {
        return Err(HcError::CentralPairAmbiguous(format!(
            "two pairings match the predicted central pair within 10%: \
             cost {:.6e} for ({}, {}) vs {:.6e} for ({}, {})",
            costs[0].0, costs[0].1, costs[0].2, costs[1].0, costs[1].1, costs[1].2
        )));
    }
    Ok((costs[0].1, costs[0].2))
}

fn expected_index(model: &Model) -> usize {
    let l = model.layout();
    l.dcu + l.nv + 1
}

fn stable_dim_minus_one(model: &Model) -> usize {
    let l = model.layout();
    1 + l.nu
}

// ---------------------------------------------------------------------------
// Fixed points with prescribed central placement
// ---------------------------------------------------------------------------

/// Certificate for a fixed point of the k-step return map whose central
/// eigenvalue pair satisfies the placement identity
/// `nu1 + nu2 = t (1 + nu1 nu2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointCert {
    pub k: u32,
    /// Placement parameter of the central pair.
    pub t: f64,
    /// Solved parameter value.
    pub mu: f64,
    pub omega: f64,
    /// Fixed point in entry-section coordinates.
    pub point: Vec<f64>,
    /// `|T(q) - q|` recomputed at the solution.
    pub residual: f64,
    /// Full return-map spectrum at the fixed point, as (re, im) pairs sorted
    /// by descending modulus.
    pub spectrum: Vec<[f64; 2]>,
    /// Number of eigenvalues strictly outside the unit circle.
    pub index: usize,
    /// Index demanded of the extra saddle: one above the base orbit's
    /// unstable dimension.
    pub expected_index: usize,
    /// Whether both the outside and inside eigenvalue counts match the
    /// expected split.
    pub index_matches: bool,
    /// Number of eigenvalues strictly inside the unit circle.
    pub inside_count: usize,
    /// Central pair, smaller modulus first.
    pub nu1: [f64; 2],
    pub nu2: [f64; 2],
    pub central_trace: f64,
    pub central_det: f64,
    /// `|nu1 + nu2 - t (1 + nu1 nu2)|` at the solution.
    pub placement_defect: f64,
    /// Whether the index test agrees with the scalar criterion
    /// `|nu1 nu2| > 1 and |t| < 1`.
    pub placement_equivalent: bool,
    pub iterations: usize,
}

impl FixedPointCert {
    pub fn q(&self) -> PhasePoint {
        DVector::from_vec(self.point.clone())
    }

    pub fn nu1_c(&self) -> Complex<f64> {
        cplx(self.nu1)
    }

    pub fn nu2_c(&self) -> Complex<f64> {
        cplx(self.nu2)
    }

    /// Recompute the stored residual quantities from scratch and return the
    /// largest absolute discrepancy.
    pub fn revalidate(&self, model: &Model) -> Result<f64> {
        let inst = Instance::new(model, self.k, self.mu, self.omega)?
            .with_policy(DomainPolicy::Ignore);
        let q = self.q();
        let (tq, jac) = inst.return_map_with_jacobian(&q)?;
        let residual = (&tq - &q).norm();
        let eigs = linalg::eigenvalues_sorted(&jac);
        let mut diff = (residual - self.residual).abs();
        for (e, s) in eigs.iter().zip(self.spectrum.iter()) {
            diff = diff.max((e.re - s[0]).abs()).max((e.im - s[1]).abs());
        }
        let (n1, n2) = (self.nu1_c(), self.nu2_c());
        let tr = (n1 + n2).re;
        let det = (n1 * n2).re;
        let defect = (tr - self.t * (1.0 + det)).abs();
        diff = diff.max((defect - self.placement_defect).abs());
        Ok(diff)
    }
}

/// Scaled placement constraint at a candidate `(point, mu)`: the central
/// pair closest to the predicted one, its trace/det, and the constraint
/// value.
fn placement_row(
    inst: &Instance,
    p: &PhasePoint,
    t: f64,
    predicted: (Complex<f64>, Complex<f64>),
    weight: f64,
) -> Result<(f64, Complex<f64>, Complex<f64>)> {
    let (_, jac) = inst.return_map_with_jacobian(p)?;
    let eigs = linalg::eigenvalues_sorted(&jac);
    let (i, j) = central_pair(&eigs, predicted)?;
    let (mut n1, mut n2) = (eigs[i], eigs[j]);
    if n1.norm() > n2.norm() {
        std::mem::swap(&mut n1, &mut n2);
    }
    let tr = (n1 + n2).re;
    let det = (n1 * n2).re;
    Ok(((tr - t * (1.0 + det)) * weight, n1, n2))
}

/// Find the fixed point of the `k`-step return map at frequency `omega`
/// whose central eigenvalue pair satisfies the placement identity with
/// parameter `t`, solving simultaneously for the point and the parameter.
/// The index is reported honestly: a mismatch sets a flag rather than
/// failing.
pub fn find_q(
    model: &Model,
    k: u32,
    t: f64,
    omega: f64,
    seed: Option<(&[f64], f64)>,
) -> Result<FixedPointCert> {
    let bundle = asymptotics::predict_cycle_quantities_at(model, k, t, omega)?;
    let parts = bundle.require_cycle()?;
    let predicted = quadratic_roots(parts.trace_pred, parts.det_pred);
    let weight = 1.0 / (1.0 + parts.det_pred.abs());

    let base = Instance::new(model, k, parts.mu_pred, omega)?.with_policy(DomainPolicy::Ignore);
    let d = base.dim();

    let (p0, mu0) = match seed {
        Some((p, mu)) => (DVector::from_vec(p.to_vec()), mu),
        None => {
            let p = match NormalFormChart::build(&base) {
                Ok(chart) => {
                    let mut c = DVector::zeros(d);
                    c[0] = parts.q_pred.z;
                    c[1] = parts.q_pred.y;
                    chart.from_chart(&c)?
                }
                Err(HcError::UnsupportedNonlinearLocal(_)) => {
                    // Chart unavailable: place the seed on the entry base
                    // with the predicted exit-side y offset.
                    let mut p = base.germ().entry_base();
                    let gam_k = model.spectrum().gamma.powi(k as i32);
                    p[2] = (parts.q_pred.y + effective_y_base(model)) / gam_k;
                    p
                }
                Err(e) => return Err(e),
            };
            (p, parts.mu_pred)
        }
    };

    let mut x0 = DVector::zeros(d + 1);
    for i in 0..d {
        x0[i] = p0[i];
    }
    x0[d] = mu0;

    let f = |x: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut inst = base.clone();
        inst.mu = x[d];
        let p = x.rows(0, d).into_owned();
        let (tp, jac) = inst.return_map_with_jacobian(&p)?;
        let (row, _, _) = placement_row(&inst, &p, t, predicted, weight)?;
        let mut r = DVector::zeros(d + 1);
        for i in 0..d {
            r[i] = tp[i] - p[i];
        }
        r[d] = row;
        let mut j = DMatrix::zeros(d + 1, d + 1);
        for i in 0..d {
            for c in 0..d {
                j[(i, c)] = jac[(i, c)] - if i == c { 1.0 } else { 0.0 };
            }
        }
        let dmu = inst.mu_derivative(&p)?;
        for i in 0..d {
            j[(i, d)] = dmu[i];
        }
        // Placement row by central differences over all unknowns. The
        // central pair is steeply nonlinear in the cross coordinates (the
        // trace moves like the tangency curvature times the squared
        // expansion rate), so the step shrinks until the pair stays
        // trackable on both sides.
        for c in 0..=d {
            let mut h = 1e-6 * (1.0 + x[c].abs());
            let mut der = None;
            let mut last_err = None;
            for _ in 0..16 {
                let mut xp = x.clone();
                xp[c] += h;
                let mut xm = x.clone();
                xm[c] -= h;
                let gp = {
                    let mut ip = base.clone();
                    ip.mu = xp[d];
                    placement_row(&ip, &xp.rows(0, d).into_owned(), t, predicted, weight)
                };
                let gm = {
                    let mut im = base.clone();
                    im.mu = xm[d];
                    placement_row(&im, &xm.rows(0, d).into_owned(), t, predicted, weight)
                };
                match (gp, gm) {
                    (Ok((gp, _, _)), Ok((gm, _, _))) => {
                        der = Some((gp - gm) / (2.0 * h));
                        break;
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        last_err = Some(e);
                        h *= 0.25;
                    }
                }
            }
            match der {
                Some(v) => j[(d, c)] = v,
                None => {
                    return Err(last_err.expect("finite difference failed without an error"))
                }
            }
        }
        Ok((r, j))
    };

    // The placement row carries the roundoff of an eigenvalue computation,
    // which floors the residual above the default tolerance.
    let opts = NewtonOptions {
        tol: 1e-11,
        ..NewtonOptions::default()
    };
    let res = newton::solve(f, &x0, opts)?;
    let p = res.x.rows(0, d).into_owned();
    let mu = res.x[d];

    let mut inst = base.clone();
    inst.mu = mu;
    let (tp, jac) = inst.return_map_with_jacobian(&p)?;
    let residual = (&tp - &p).norm();
    let eigs = linalg::eigenvalues_sorted(&jac);
    let (i, j) = central_pair(&eigs, predicted)?;
    let (mut n1, mut n2) = (eigs[i], eigs[j]);
    if n1.norm() > n2.norm() {
        std::mem::swap(&mut n1, &mut n2);
    }
    let tr = (n1 + n2).re;
    let det = (n1 * n2).re;
    let index = eigs.iter().filter(|e| e.norm() > 1.0).count();
    let inside = eigs.iter().filter(|e| e.norm() < 1.0).count();
    let expected = expected_index(model);
    let index_matches = index == expected && inside == stable_dim_minus_one(model);
    let scalar_test = det.abs() > 1.0 && t.abs() < 1.0;
    Ok(FixedPointCert {
        k,
        t,
        mu,
        omega,
        point: to_vec(&p),
        residual,
        spectrum: eigs.iter().map(|e| [e.re, e.im]).collect(),
        index,
        expected_index: expected,
        index_matches,
        inside_count: inside,
        nu1: [n1.re, n1.im],
        nu2: [n2.re, n2.im],
        central_trace: tr,
        central_det: det,
        placement_defect: (tr - t * (1.0 + det)).abs(),
        placement_equivalent: (index == expected) == scalar_test,
        iterations: res.iterations,
    })
}

fn effective_y_base(model: &Model) -> f64 {
    match model {
        Model::Sf21(m) => m.global.y_minus,
        Model::Bf(m) => m.global.y_minus.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

// ---------------------------------------------------------------------------
// Transverse intersection families
// ---------------------------------------------------------------------------

/// One of the four square-root intersection orbits: the exit-section point
/// whose doubled global passage lands on the local stable set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomoclinicCert {
    pub n: u32,
    pub mu: f64,
    pub omega: f64,
    /// Branch label (1..=4), sorted by descending base-coordinate offset.
    pub branch: usize,
    /// Exit-section coordinates (0, y_n, 0, v_n) of the intersection point.
    pub point: Vec<f64>,
    /// Final point of the doubled passage (its y and v rows are the solved
    /// residuals).
    pub final_point: Vec<f64>,
    pub residual: f64,
    /// Determinant of the defining system's Jacobian at the solution.
    pub transversality_margin: f64,
    /// `y_n - y^-`: signed offset of the intersection from the base exit
    /// point.
    pub y_offset: f64,
    pub iterations: usize,
}

impl HomoclinicCert {
    pub fn exit_point(&self) -> PhasePoint {
        DVector::from_vec(self.point.clone())
    }

    /// Recompute the landing residual from scratch; returns the discrepancy
    /// against the stored value.
    pub fn revalidate(&self, model: &Model) -> Result<f64> {
        let inst = Instance::new(model, self.n, self.mu, self.omega)?
            .with_policy(DomainPolicy::Ignore);
        let w = self.exit_point();
        let (_, out, _) = doubled_passage(&inst, &w)?;
        let r = landing_residual(&inst, &out);
        Ok((r.norm() - self.residual).abs())
    }
}

/// Run the doubled code (global, n local steps, global) from an exit-section
/// point and return the first entry point, the final point, and the chain
/// Jacobian of the final point with respect to the exit point.
pub(crate) fn doubled_passage(
    inst: &Instance,
    w: &PhasePoint,
) -> Result<(PhasePoint, PhasePoint, DMatrix<f64>)> {
    let p1 = inst.germ().apply(inst.mu, w, DomainPolicy::Ignore)?;
    let jg = inst.germ().jacobian(inst.mu, w)?;
    let (out, jr) = inst.return_map_with_jacobian(&p1)?;
    Ok((p1, out, jr * jg))
}

/// Rows of the final point that must vanish for a landing on the local
/// stable set: the y coordinate and the strong-stable-transverse v block.
fn landing_rows(inst: &Instance) -> Vec<usize> {
    let l = inst.layout();
    let mut rows = vec![l.y_start()];
    for i in 0..l.nv {
        rows.push(l.v_start() + i);
    }
    rows
}

fn landing_residual(inst: &Instance, out: &PhasePoint) -> DVector<f64> {
    let rows = landing_rows(inst);
    DVector::from_iterator(rows.len(), rows.iter().map(|&r| out[r]))
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for (ri, &r) in rows.iter().enumerate() {
        for (ci, &c) in cols.iter().enumerate() {
            out[(ri, ci)] = m[(r, c)];
        }
    }
    out
}

/// Find the four transverse intersection orbits of the doubled global
/// passage at the given parameter: two exit offsets above the base point and
/// two below, in square-root scaling.
pub fn find_transverse_homoclinics(
    model: &Model,
    n: u32,
    mu: f64,
    omega: f64,
) -> Result<Vec<HomoclinicCert>> {
    let bundle = asymptotics::predict_homoclinic_quantities(model, n, omega)?;
    let parts = bundle.require_homoclinic()?;
    let inst = Instance::new(model, n, mu, omega)?.with_policy(DomainPolicy::Ignore);
    let layout = inst.layout();
    let rows = landing_rows(&inst);
    let cols = rows.clone(); // exit offsets live on the same coordinates
    let exit_base = inst.germ().exit_base();
    let nv = layout.nv;

    // Seeds: both signs of the exit offset, each refined by both signs of
    // the predicted landing-side square root.
    let sf = model
        .as_sf()
        .ok_or_else(|| HcError::Config("intersection families need the one-rotation form".into()))?;
    let (b3, y_minus) = (sf.global.b3, sf.global.y_minus);
    let gam_n = sf.spectrum.gamma.powi(n as i32);
    let mut seeds: Vec<f64> = Vec::new();
    for s_land in [1.0f64, -1.0] {
        let arg = ((y_minus + s_land * parts.y_mag) / gam_n - mu) / b3;
        if arg > 0.0 {
            let r = arg.sqrt();
            seeds.push(r);
            seeds.push(-r);
        }
    }
    if seeds.len() < 4 {
        // Fall back on the unrefined magnitudes.
        let base = parts.y_offsets[0].abs();
        seeds = vec![base, -base, 0.8 * base, -0.8 * base];
    }

    let mut found: Vec<(f64, DVector<f64>, PhasePoint, PhasePoint, f64, f64, usize)> = Vec::new();
    let scale = parts.y_offsets[0].abs().max(f64::MIN_POSITIVE);
    for &l1 in &seeds {
        let mut x0 = DVector::zeros(1 + nv);
        x0[0] = l1;
        let f = |x: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let mut w = exit_base.clone();
            w[layout.y_start()] += x[0];
            for i in 0..nv {
                w[layout.v_start() + i] += x[1 + i];
            }
            let (_, out, jchain) = doubled_passage(&inst, &w)?;
            let r = landing_residual(&inst, &out);
            let j = submatrix(&jchain, &rows, &cols);
            Ok((r, j))
        };
        let res = match newton::solve(f, &x0, NewtonOptions::default()) {
            Ok(r) => r,
            Err(_) => continue,
        };
        // Reject solutions that collapsed onto an already-found branch.
        if found
            .iter()
            .any(|(l, _, _, _, _, _, _)| (l - res.x[0]).abs() < 1e-4 * scale)
        {
            continue;
        }
        let mut w = exit_base.clone();
        w[layout.y_start()] += res.x[0];
        for i in 0..nv {
            w[layout.v_start() + i] += res.x[1 + i];
        }
        let (_, out, jchain) = doubled_passage(&inst, &w)?;
        let margin = submatrix(&jchain, &rows, &cols).determinant();
        let resid = landing_residual(&inst, &out).norm();
        found.push((res.x[0], res.x.clone(), w, out, margin, resid, res.iterations));
    }

    if found.len() < 4 {
        return Err(HcError::BranchMissing {
            found: found.len(),
            expected: 4,
            context: format!(
                "square-root intersection family at n = {n}, mu = {mu:.6e}, omega = {omega:.6}"
            ),
        });
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    found.truncate(4);

    let above = found.iter().filter(|f| f.0 > 0.0).count();
    let below = found.iter().filter(|f| f.0 < 0.0).count();
    if above != 2 || below != 2 {
        return Err(HcError::SignConditionFailed(format!(
            "intersection offsets must straddle the base exit point two-and-two; \
             got {above} above, {below} below"
        )));
    }

    Ok(found
        .into_iter()
        .enumerate()
        .map(|(i, (l1, _, w, out, margin, resid, iters))| HomoclinicCert {
            n,
            mu,
            omega,
            branch: i + 1,
            point: to_vec(&w),
            final_point: to_vec(&out),
            residual: resid,
            transversality_margin: margin,
            y_offset: l1,
            iterations: iters,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Re-based tangencies of the doubled passage
// ---------------------------------------------------------------------------

/// Certificate for one branch of the re-based quadratic tangency created by
/// the doubled global passage.
#[derive(Debug, Clone, Serialize)]
pub struct TangencyCert {
    pub k: u32,
    pub omega: f64,
    /// Branch label (1 or 2).
    pub branch: usize,
    /// Solved parameter value.
    pub mu: f64,
    /// Exit offset of the tangency pre-image.
    pub l1: f64,
    /// Strong-unstable offsets of the pre-image.
    pub l2: Vec<f64>,
    /// Exit-section coordinates of the tangency pre-image.
    pub exit_point: Vec<f64>,
    /// Final point of the doubled passage at the tangency.
    pub image_point: Vec<f64>,
    /// |y| of the final point at the solution.
    pub residual_y: f64,
    /// |dy/dl1| of the reduced scalar at the solution.
    pub residual_dy: f64,
    /// Measured quadratic coefficient: half the second derivative of the
    /// reduced scalar in the exit offset.
    pub b3k_measured: f64,
    pub b3k_predicted: f64,
    /// Third derivative of the reduced scalar (degeneracy witness).
    pub third_derivative: f64,
    /// Base coordinate of the re-based orbit: y^- + l1.
    pub new_y_minus: f64,
    /// Whether the re-based quadratic coefficient and base coordinate have
    /// the product sign required for the next round of the construction.
    pub normal: bool,
    /// Solved parameter over its leading-order scale.
    pub mu_ratio: f64,
    /// Derivative of the re-based splitting parameter with respect to the
    /// original one, by finite differences of the critical value.
    pub d_mu_new_d_mu: f64,
    /// Nondegeneracy conditions re-checked on the re-based data.
    pub conditions: Vec<ConditionReport>,
    pub iterations: usize,
}

impl TangencyCert {
    /// Recompute the two defining residuals from scratch; returns the larger
    /// discrepancy against the stored values.
    pub fn revalidate(&self, model: &Model) -> Result<f64> {
        let mut inst = Instance::new(model, self.k, self.mu, self.omega)?
            .with_policy(DomainPolicy::Ignore);
        inst.mu = self.mu;
        let nv = inst.layout().nv;
        let mut l2 = DVector::zeros(nv);
        for i in 0..nv {
            l2[i] = self.l2[i];
        }
        let (y, dy, _) = reduced_scalar(&inst, self.l1, &mut l2)?;
        Ok((y.abs() - self.residual_y)
            .abs()
            .max((dy.abs() - self.residual_dy).abs()))
    }
}

/// Reduced scalar of the doubled passage: with the strong-unstable offsets
/// slaved to their landing rows, returns (y value, total dy/dl1, l2 solved).
/// `l2` is used as the warm start and overwritten with the solution.
fn reduced_scalar(inst: &Instance, l1: f64, l2: &mut DVector<f64>) -> Result<(f64, f64, PhasePoint)> {
    let layout = inst.layout();
    let nv = layout.nv;
    let exit_base = inst.germ().exit_base();
    let y_row = layout.y_start();
    let v_rows: Vec<usize> = (0..nv).map(|i| layout.v_start() + i).collect();

    let make_w = |l1: f64, l2: &DVector<f64>| {
        let mut w = exit_base.clone();
        w[y_row] += l1;
        for i in 0..nv {
            w[layout.v_start() + i] += l2[i];
        }
        w
    };

    if nv > 0 {
        let f = |x: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let w = make_w(l1, x);
            let (_, out, jchain) = doubled_passage(inst, &w)?;
            let r = DVector::from_iterator(nv, v_rows.iter().map(|&r| out[r]));
            let cols: Vec<usize> = v_rows.clone();
            Ok((r, submatrix(&jchain, &v_rows, &cols)))
        };
        let res = newton::solve(f, l2, NewtonOptions::default())?;
        l2.copy_from(&res.x);
    }

    let w = make_w(l1, l2);
    let (_, out, jchain) = doubled_passage(inst, &w)?;
    let y = out[y_row];
    let dy_dl1 = jchain[(y_row, y_row)];
    let total = if nv > 0 {
        let vv = submatrix(&jchain, &v_rows, &v_rows);
        let vl = DVector::from_iterator(nv, v_rows.iter().map(|&r| jchain[(r, y_row)]));
        let dl2 = vv
            .lu()
            .solve(&vl)
            .ok_or_else(|| HcError::SingularJacobian("slaved strong-unstable block".into()))?;
        let yv = DVector::from_iterator(nv, v_rows.iter().map(|&c| jchain[(y_row, c)]));
        dy_dl1 - yv.dot(&dl2)
    } else {
        dy_dl1
    };
    Ok((y, total, out))
}

/// Find both branches of the re-based tangency of the doubled passage:
/// parameter values and exit offsets at which the landing is quadratically
/// tangent to the local stable set, with the re-based nondegeneracy data.
pub fn find_secondary_tangency(model: &Model, k: u32, omega: f64) -> Result<Vec<TangencyCert>> {
    let bundle = asymptotics::predict_homoclinic_quantities(model, k, omega)?;
    let parts = bundle.require_secondary()?;
    let sf = model
        .as_sf()
        .ok_or_else(|| HcError::Config("re-based tangencies need the one-rotation form".into()))?;
    let gam_k = sf.spectrum.gamma.powi(k as i32);
    let lam_k = sf.spectrum.lambda.powi(k as i32);
    let mu_scale = sf.global.y_minus / gam_k;

    let mut certs = Vec::new();
    for j in 0..2 {
        let l1_seed = parts.y_minus_offsets[j];
        let mu_seed = parts.mu_refined[j];
        let base = Instance::new(model, k, mu_seed, omega)?.with_policy(DomainPolicy::Ignore);
        let nv = base.layout().nv;
        let mut l2_state = DVector::zeros(nv);
        let h_l1 = 1e-2 * l1_seed.abs().max(1e-12);

        // Outer unknowns (l1, mu); rows (y, total dy/dl1), scaled.
        let s1 = mu_scale.abs().max(f64::MIN_POSITIVE);
        let f = |x: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let mut inst = base.clone();
            inst.mu = x[1];
            let mut l2 = l2_state.clone();
            let (y, dy, _) = reduced_scalar(&inst, x[0], &mut l2)?;
            let r = DVector::from_row_slice(&[y / s1, dy]);
            let mut jac = DMatrix::zeros(2, 2);
            let hs = [1e-6 * (l1_seed.abs() + x[0].abs()), 1e-7 * s1];
            for c in 0..2 {
                let mut xp = x.clone();
                xp[c] += hs[c];
                let mut xm = x.clone();
                xm[c] -= hs[c];
                let mut ip = base.clone();
                ip.mu = xp[1];
                let mut l2p = l2.clone();
                let (yp, dyp, _) = reduced_scalar(&ip, xp[0], &mut l2p)?;
                let mut im = base.clone();
                im.mu = xm[1];
                let mut l2m = l2.clone();
                let (ym, dym, _) = reduced_scalar(&im, xm[0], &mut l2m)?;
                jac[(0, c)] = (yp - ym) / (2.0 * hs[c]) / s1;
                jac[(1, c)] = (dyp - dym) / (2.0 * hs[c]);
            }
            Ok((r, jac))
        };
        let x0 = DVector::from_row_slice(&[l1_seed, mu_seed]);
        let opts = NewtonOptions {
            tol: 1e-10,
            ..NewtonOptions::default()
        };
        let res = newton::solve(f, &x0, opts)?;
        let (l1, mu) = (res.x[0], res.x[1]);
        let mut inst = base.clone();
        inst.mu = mu;
        let (y_fin, dy_fin, out) = reduced_scalar(&inst, l1, &mut l2_state)?;

        // Curvature and degeneracy witnesses from the analytic first
        // derivative of the reduced scalar.
        let eval_dy = |l1v: f64| -> Result<f64> {
            let mut l2 = l2_state.clone();
            Ok(reduced_scalar(&inst, l1v, &mut l2)?.1)
        };
        let second = (eval_dy(l1 + h_l1)? - eval_dy(l1 - h_l1)?) / (2.0 * h_l1);
        let third = (eval_dy(l1 + h_l1)? - 2.0 * dy_fin + eval_dy(l1 - h_l1)?) / (h_l1 * h_l1);
        let b3k_scale = lam_k.abs().sqrt() * gam_k.abs() * sf.global.b3.abs();
        if second.abs() < 1e-8 * b3k_scale {
            return Err(HcError::DegenerateTangency(format!(
                "second derivative {second:.3e} below 1e-8 of its scale {b3k_scale:.3e} \
                 (third derivative {third:.3e})"
            )));
        }
        let b3k = 0.5 * second;

        // Unfolding derivative by finite differences of the critical value.
        let h_mu = 1e-5 * mu.abs().max(mu_scale.abs());
        let critical_value = |mu_v: f64| -> Result<f64> {
            let mut ii = base.clone();
            ii.mu = mu_v;
            let mut l1c = l1;
            for _ in 0..30 {
                let mut l2 = l2_state.clone();
                let (_, dy, _) = reduced_scalar(&ii, l1c, &mut l2)?;
                let d2 = {
                    let mut l2a = l2_state.clone();
                    let mut l2b = l2_state.clone();
                    (reduced_scalar(&ii, l1c + h_l1, &mut l2a)?.1
                        - reduced_scalar(&ii, l1c - h_l1, &mut l2b)?.1)
                        / (2.0 * h_l1)
                };
                let step = dy / d2;
                l1c -= step;
                if step.abs() < 1e-14 * (1.0 + l1c.abs()) {
                    break;
                }
            }
            let mut l2 = l2_state.clone();
            Ok(reduced_scalar(&ii, l1c, &mut l2)?.0)
        };
        let d_mu_new_d_mu =
            (critical_value(mu + h_mu)? - critical_value(mu - h_mu)?) / (2.0 * h_mu);
        if !d_mu_new_d_mu.is_finite() || d_mu_new_d_mu.abs() < 1e-10 {
            return Err(HcError::GenericityFailed(format!(
                "re-based unfolding derivative {d_mu_new_d_mu:.3e} is numerically zero"
            )));
        }

        // Re-based data: the doubled passage as a single germ based at the
        // new orbit, and the two vectors deciding the non-parallelism
        // condition.
        let sf_germ = inst
            .germ()
            .as_sf()
            .ok_or_else(|| HcError::Config("re-based germ needs the one-rotation form".into()))?
            .clone();
        let mut exit_b = inst.germ().exit_base();
        exit_b[inst.layout().y_start()] += l1;
        for i in 0..nv {
            exit_b[inst.layout().v_start() + i] += l2_state[i];
        }
        let mut entry_b = out.clone();
        entry_b[inst.layout().y_start()] = 0.0;
        for i in 0..nv {
            entry_b[inst.layout().v_start() + i] = 0.0;
        }
        let comp = CompositeGerm {
            first: sf_germ.clone(),
            local: inst.local().clone(),
            m: k,
            second: sf_germ,
            exit_base: exit_b.clone(),
            entry_base: entry_b,
        };
        let jc = comp.jacobian(mu, &exit_b)?;
        let ycol = inst.layout().y_start();
        let vec_d = [jc[(0, ycol)], jc[(1, ycol)]];
        let vec_img = [out[0], out[1]];
        let n_d = (vec_d[0] * vec_d[0] + vec_d[1] * vec_d[1]).sqrt();
        let n_img = (vec_img[0] * vec_img[0] + vec_img[1] * vec_img[1]).sqrt();
        let cross = vec_d[0] * vec_img[1] - vec_d[1] * vec_img[0];
        let parallel_margin = if n_d > 0.0 && n_img > 0.0 {
            cross.abs() / (n_d * n_img)
        } else {
            0.0
        };
        let new_y_minus = sf.global.y_minus + l1;
        let lg = (sf.spectrum.lambda * sf.spectrum.gamma).abs();
        let conditions = vec![
            ConditionReport {
                name: "C1",
                holds: b3k.abs() > 1e-8 * b3k_scale,
                witness: vec![b3k, dy_fin],
                margin: b3k.abs() / b3k_scale,
            },
            ConditionReport {
                name: "C2",
                holds: b3k != 0.0,
                witness: vec![b3k],
                margin: b3k.abs() / b3k_scale,
            },
            ConditionReport {
                name: "C3",
                holds: lg > 1.0,
                witness: vec![sf.spectrum.lambda, sf.spectrum.gamma],
                margin: lg - 1.0,
            },
            ConditionReport {
                name: "C4",
                holds: n_img > 0.0 && new_y_minus != 0.0,
                witness: vec![vec_img[0], vec_img[1], new_y_minus],
                margin: n_img.min(new_y_minus.abs()),
            },
            ConditionReport {
                name: "C5.1",
                holds: parallel_margin > 1e-8,
                witness: vec![vec_d[0], vec_d[1], vec_img[0], vec_img[1]],
                margin: parallel_margin,
            },
        ];

        certs.push(TangencyCert {
            k,
            omega,
            branch: j + 1,
            mu,
            l1,
            l2: to_vec(&l2_state),
            exit_point: to_vec(&exit_b),
            image_point: to_vec(&out),
            residual_y: y_fin.abs(),
            residual_dy: dy_fin.abs(),
            b3k_measured: b3k,
            b3k_predicted: parts.b3k[j],
            third_derivative: third,
            new_y_minus,
            normal: b3k * new_y_minus > 0.0,
            mu_ratio: mu / mu_scale,
            d_mu_new_d_mu,
            conditions,
            iterations: res.iterations,
        });
    }
    Ok(certs)
}

// ---------------------------------------------------------------------------
// Nontransverse intersection of the two saddle sets
// ---------------------------------------------------------------------------

/// Explicit starting data for the nontransverse-intersection solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NontransverseSeeds {
    pub omega: f64,
    pub l1: f64,
    pub l2: Vec<f64>,
    pub s: Vec<f64>,
}

/// Certificate for a coincidence between the image of the base orbit's local
/// unstable set and the extra fixed point's stable set: dimensions fall one
/// short of transversality, so the solve closes the gap with the frequency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeteroclinicCert {
    pub k: u32,
    pub t: f64,
    /// Solved frequency at which the two sets meet.
    pub omega_k: f64,
    /// Parameter value slaved to the fixed-point placement at the solved
    /// frequency.
    pub mu_k: f64,
    /// Entry-section coordinates of the intersection point.
    pub point: Vec<f64>,
    /// Chart coordinates of the intersection point.
    pub point_chart: Vec<f64>,
    /// Exit offset and strong-unstable offsets on the unstable side.
    pub l1: f64,
    pub l2: Vec<f64>,
    /// Graph parameters on the stable side.
    pub s: Vec<f64>,
    pub residual: f64,
    /// Dimension audit: unstable-side parameters, stable-side parameters,
    /// ambient dimension.
    pub dim_unstable_side: usize,
    pub dim_stable_side: usize,
    pub ambient_dim: usize,
    /// Signed derivative of the separation gap in the frequency direction.
    pub gap_derivative_omega: f64,
    /// Frequency drift with the placement parameter, by re-solving at t +/-
    /// dt.
    pub d_omega_dt: f64,
    pub k_d_omega_dt: f64,
    /// Whether the frequency-unfolding disjunction holds on this model.
    pub c61_holds: bool,
    /// Rotated y-row coefficient at the solved frequency (nondegeneracy
    /// witness).
    pub alpha_star: f64,
    pub iterations: usize,
    /// Fixed-point certificate at the solved frequency.
    pub fixed_point: FixedPointCert,
}

struct NontransverseSolution {
    x: DVector<f64>,
    residual: f64,
    iterations: usize,
    cert: FixedPointCert,
    chart: NormalFormChart,
    point_phase: PhasePoint,
    point_chart: DVector<f64>,
}

fn nontransverse_eval(
    model: &Model,
    k: u32,
    t: f64,
    x: &DVector<f64>,
    warm: &mut Option<(Vec<f64>, f64)>,
) -> Result<(DVector<f64>, FixedPointCert, NormalFormChart, GraphPoly, DVector<f64>, PhasePoint)> {
    let layout = model.layout();
    let nv = layout.nv;
    let ns = 1 + layout.nu;
    let omega = x[1 + nv + ns];
    let seed_ref = warm.as_ref().map(|(p, m)| (p.as_slice(), *m));
    let cert = find_q(model, k, t, omega, seed_ref)?;
    *warm = Some((cert.point.clone(), cert.mu));
    let inst = Instance::new(model, k, cert.mu, omega)?.with_policy(DomainPolicy::Ignore);
    let chart = NormalFormChart::build(&inst)?;
    let q_chart = chart.to_chart(&cert.q());
    let jac0 = chart.conjugated_jacobian(&inst, &q_chart)?;
    let graph = manifolds::stable_graph(&inst, &chart, &q_chart, &jac0, 2)?;

    let mut w = inst.germ().exit_base();
    w[layout.y_start()] += x[0];
    for i in 0..nv {
        w[layout.v_start() + i] += x[1 + i];
    }
    let p_entry = inst.germ().apply(cert.mu, &w, DomainPolicy::Ignore)?;
    let cu = chart.to_chart(&p_entry);
    let s: Vec<f64> = (0..ns).map(|i| x[1 + nv + i]).collect();
    let cs = graph.embed(&q_chart, &s);
    Ok((&cu - &cs, cert, chart, graph, q_chart, p_entry))
}

fn solve_nontransverse(
    model: &Model,
    k: u32,
    t: f64,
    seeds: &NontransverseSeeds,
) -> Result<NontransverseSolution> {
    let layout = model.layout();
    let nv = layout.nv;
    let ns = 1 + layout.nu;
    let d = model.dim();
    debug_assert_eq!(1 + nv + ns + 1, d + 1);

    let mut x0 = DVector::zeros(d);
    // Unknowns: l1, l2 (nv), s (ns), omega -- d in total.
    x0[0] = seeds.l1;
    for i in 0..nv {
        x0[1 + i] = seeds.l2.get(i).copied().unwrap_or(0.0);
    }
    for i in 0..ns {
        x0[1 + nv + i] = seeds.s.get(i).copied().unwrap_or(0.0);
    }
    x0[1 + nv + ns] = seeds.omega;

    let mut warm: Option<(Vec<f64>, f64)> = None;
    let omega_scale = 1.0 / (k as f64);
    let f = |x: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (r, _, _, _, _, _) = nontransverse_eval(model, k, t, x, &mut warm)?;
        let n = x.len();
        let mut jac = DMatrix::zeros(d, n);
        for c in 0..n {
            let h = if c == n - 1 {
                1e-7 * omega_scale.max(1e-9)
            } else {
                1e-7 * (1.0 + x[c].abs()) * 1e-2
            };
            let mut xp = x.clone();
            xp[c] += h;
            let mut xm = x.clone();
            xm[c] -= h;
            let (rp, _, _, _, _, _) = nontransverse_eval(model, k, t, &xp, &mut warm)?;
            let (rm, _, _, _, _, _) = nontransverse_eval(model, k, t, &xm, &mut warm)?;
            for row in 0..d {
                jac[(row, c)] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        Ok((r, jac))
    };
    let opts = NewtonOptions {
        tol: 1e-11,
        ..NewtonOptions::default()
    };
    let res = newton::solve(f, &x0, opts)?;
    let (r, cert, chart, _, _, point_phase) =
        nontransverse_eval(model, k, t, &res.x, &mut warm)?;
    let point_chart = chart.to_chart(&point_phase);
    Ok(NontransverseSolution {
        x: res.x,
        residual: r.norm(),
        iterations: res.iterations,
        cert,
        chart,
        point_phase,
        point_chart,
    })
}

fn default_nontransverse_seeds(model: &Model, k: u32, t: f64) -> Result<NontransverseSeeds> {
    let omega0 = model.spectrum().omega;
    let bundle = asymptotics::predict_cycle_quantities(model, k, t, omega0)?;
    let parts = bundle.require_cycle()?;
    let rc = asymptotics::rotation_coeffs(model, k, parts.omega_pred)?;
    let sf = model
        .as_sf()
        .ok_or_else(|| HcError::Config("coincidence solves need the one-rotation form".into()))?;
    let lam_k = sf.spectrum.lambda.powi(k as i32);
    let b1a = sf.global.b1 * rc.alpha_star;
    let l1 = -lam_k * (b1a * t / (2.0 * sf.global.b3) + rc.a_offset / b1a);
    let layout = model.layout();
    Ok(NontransverseSeeds {
        omega: parts.omega_pred,
        l1,
        l2: vec![0.0; layout.nv],
        s: vec![0.0; 1 + layout.nu],
    })
}

/// Find the frequency (and slaved parameter) at which the image of the base
/// orbit's local unstable set meets the extra fixed point's stable set. The
/// two sets have one dimension too few to intersect transversally, so the
/// frequency closes the last equation; the certificate audits the dimension
/// count and the nonzero frequency-derivative of the separation gap.
pub fn find_nontransverse(
    model: &Model,
    k: u32,
    t: f64,
    seeds: Option<&NontransverseSeeds>,
) -> Result<HeteroclinicCert> {
    let own_seeds;
    let seeds = match seeds {
        Some(s) => s,
        None => {
            own_seeds = default_nontransverse_seeds(model, k, t)?;
            &own_seeds
        }
    };
    let sol = solve_nontransverse(model, k, t, seeds)?;
    let layout = model.layout();
    let nv = layout.nv;
    let ns = 1 + layout.nu;
    let d = model.dim();
    let n_par = 1 + nv + ns;
    let omega = sol.x[n_par];

    // Signed separation gap in the frequency direction: project the
    // frequency derivative of the mismatch on the left null direction of
    // the parameter block.
    let mut warm: Option<(Vec<f64>, f64)> = Some((sol.cert.point.clone(), sol.cert.mu));
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for c in 0..n_par {
        let h = 1e-7 * (1.0 + sol.x[c].abs()) * 1e-2;
        let mut xp = sol.x.clone();
        xp[c] += h;
        let mut xm = sol.x.clone();
        xm[c] -= h;
        let (rp, _, _, _, _, _) = nontransverse_eval(model, k, t, &xp, &mut warm)?;
        let (rm, _, _, _, _, _) = nontransverse_eval(model, k, t, &xm, &mut warm)?;
        cols.push((rp - rm) / (2.0 * h));
    }
    let h = 1e-7 / (k as f64);
    let mut xp = sol.x.clone();
    xp[n_par] += h;
    let mut xm = sol.x.clone();
    xm[n_par] -= h;
    let (rp, _, _, _, _, _) = nontransverse_eval(model, k, t, &xp, &mut warm)?;
    let (rm, _, _, _, _, _) = nontransverse_eval(model, k, t, &xm, &mut warm)?;
    let df_domega = (rp - rm) / (2.0 * h);
    let phi = left_null_vector(&cols, d)?;
    let gap_derivative_omega = phi.dot(&df_domega);

    // Frequency drift in the placement parameter by re-solving nearby.
    let dt = 5e-3;
    let warm_seeds = NontransverseSeeds {
        omega,
        l1: sol.x[0],
        l2: (0..nv).map(|i| sol.x[1 + i]).collect(),
        s: (0..ns).map(|i| sol.x[1 + nv + i]).collect(),
    };
    let sol_p = solve_nontransverse(model, k, t + dt, &warm_seeds)?;
    let sol_m = solve_nontransverse(model, k, t - dt, &warm_seeds)?;
    let d_omega_dt = (sol_p.x[n_par] - sol_m.x[n_par]) / (2.0 * dt);

    let gen = crate::model::check_genericity(model);
    let c61_holds = gen
        .get("C6.1")
        .or_else(|| gen.get("C6.2"))
        .map(|c| c.holds)
        .unwrap_or(false);

    Ok(HeteroclinicCert {
        k,
        t,
        omega_k: omega,
        mu_k: sol.cert.mu,
        point: to_vec(&sol.point_phase),
        point_chart: to_vec(&sol.point_chart),
        l1: sol.x[0],
        l2: (0..nv).map(|i| sol.x[1 + i]).collect(),
        s: (0..ns).map(|i| sol.x[1 + nv + i]).collect(),
        residual: sol.residual,
        dim_unstable_side: 1 + nv,
        dim_stable_side: ns,
        ambient_dim: d,
        gap_derivative_omega,
        d_omega_dt,
        k_d_omega_dt: k as f64 * d_omega_dt,
        c61_holds,
        alpha_star: sol.chart.alpha_star,
        iterations: sol.iterations,
        fixed_point: sol.cert,
    })
}

/// Unit vector orthogonal to all given columns (the residual direction not
/// reachable by the parameters).
fn left_null_vector(cols: &[DVector<f64>], dim: usize) -> Result<DVector<f64>> {
    let basis = linalg::orthonormalize(cols, dim)?;
    // Project out the column span from coordinate directions until one
    // survives.
    let mut best: Option<(f64, DVector<f64>)> = None;
    for i in 0..dim {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        for c in 0..basis.ncols() {
            let b = basis.column(c);
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let n = v.norm();
        if best.as_ref().map(|(bn, _)| n > *bn).unwrap_or(true) {
            best = Some((n, v));
        }
    }
    let (n, v) = best.ok_or_else(|| HcError::SingularJacobian("empty basis".into()))?;
    if n < 1e-10 {
        return Err(HcError::SingularJacobian(
            "parameter block spans the full residual space".into(),
        ));
    }
    Ok(v / n)
}

// ---------------------------------------------------------------------------
// Crossing of the extra saddle's unstable set with the base stable set
// ---------------------------------------------------------------------------

/// Certificate for a point of the extra fixed point's unstable set lying on
/// the base orbit's local stable set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossingCert {
    /// Entry-section coordinates of the crossing point.
    pub point: Vec<f64>,
    /// Norm of the (y, v) coordinates at the crossing.
    pub residual: f64,
    /// Number of return-map applications from the seed disc.
    pub iterate: usize,
    /// Disc parameters of the crossing point.
    pub param: [f64; 2],
    /// Exit-side offset one application earlier, and the intersection branch
    /// it tracks.
    pub y_previous: f64,
    pub strip_branch: usize,
    pub strip_distance: f64,
    /// Whether distances to the fixed point grow monotonically along the
    /// forward chain from the seed (equivalently, the crossing's backward
    /// orbit approaches the fixed point monotonically).
    pub backward_monotone: bool,
    /// Range of the y coordinate seen over the scan.
    pub y_range: [f64; 2],
}

#[derive(Debug)]
pub(crate) struct CrossingScanOutcome {
    pub param: [f64; 2],
    pub point: PhasePoint,
    pub iterate: usize,
    pub residual: f64,
    pub y_range: [f64; 2],
}

/// Scan a growing central mesh for a sign change of the y coordinate,
/// bisect the bracketing parameters down to a point on {y = 0, v = 0}, and
/// return it. Generic over the mesh closures so synthetic controls can
/// exercise the same path.
pub(crate) fn crossing_scan<E, S>(
    mesh: &mut CentralMesh<E, S>,
    max_iters: usize,
    y_idx: usize,
    v_idx: &[usize],
    tol: f64,
) -> Result<CrossingScanOutcome>
where
    E: Fn(&[f64; 2]) -> Result<PhasePoint>,
    S: Fn(&PhasePoint) -> Result<PhasePoint>,
{
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for _ in 0..max_iters {
        mesh.advance()?;
        for v in mesh.verts.iter().filter(|v| v.alive) {
            y_lo = y_lo.min(v.phase[y_idx]);
            y_hi = y_hi.max(v.phase[y_idx]);
        }
        let i = mesh.iterate;
        // Collect edges with a sign change of y.
        let mut edges: Vec<([f64; 2], [f64; 2])> = Vec::new();
        for t in &mesh.tris {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let (va, vb) = (&mesh.verts[a], &mesh.verts[b]);
                if !va.alive || !vb.alive {
                    continue;
                }
                if va.phase[y_idx] * vb.phase[y_idx] < 0.0 {
                    edges.push((va.param, vb.param));
                }
            }
        }
        for (pa, pb) in &edges {
            let y_at = |s: f64| -> Result<f64> {
                let par = [
                    pa[0] + s * (pb[0] - pa[0]),
                    pa[1] + s * (pb[1] - pa[1]),
                ];
                Ok(mesh.eval(&par, i)?[y_idx])
            };
            let root = match bisect(&y_at, 0.0, 1.0, 60) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let par0 = [
                pa[0] + root * (pb[0] - pa[0]),
                pa[1] + root * (pb[1] - pa[1]),
            ];
            let candidate = if v_idx.is_empty() {
                Some(par0)
            } else if v_idx.len() == 1 {
                refine_v_zero(mesh, i, y_idx, v_idx[0], *pa, *pb)?
            } else {
                return Err(HcError::Config(
                    "crossing search supports at most one strong-unstable direction".into(),
                ));
            };
            if let Some(par) = candidate {
                let p = mesh.eval(&par, i)?;
                let mut r2 = p[y_idx] * p[y_idx];
                for &vi in v_idx {
                    r2 += p[vi] * p[vi];
                }
                let resid = r2.sqrt();
                if resid < tol {
                    return Ok(CrossingScanOutcome {
                        param: par,
                        point: p,
                        iterate: i,
                        residual: resid,
                        y_range: [y_lo, y_hi],
                    });
                }
            }
        }
    }
    Err(HcError::NoCrossing(format!(
        "no sign change of the landing coordinate within {max_iters} applications; \
         attained y range [{y_lo:.6e}, {y_hi:.6e}]"
    )))
}

/// Nested bisection on one triangle edge pair: walk the y = 0 level set
/// between two bracketing parameters and bisect the v coordinate along it.
fn refine_v_zero<E, S>(
    mesh: &CentralMesh<E, S>,
    iters: usize,
    y_idx: usize,
    v_idx: usize,
    pa: [f64; 2],
    pb: [f64; 2],
) -> Result<Option<[f64; 2]>>
where
    E: Fn(&[f64; 2]) -> Result<PhasePoint>,
    S: Fn(&PhasePoint) -> Result<PhasePoint>,
{
    // Direction along the segment and its in-plane normal.
    let dir = [pb[0] - pa[0], pb[1] - pa[1]];
    let nrm = [-dir[1], dir[0]];
    let on_level = |s: f64| -> Result<Option<([f64; 2], PhasePoint)>> {
        let base = [pa[0] + s * dir[0], pa[1] + s * dir[1]];
        let y_at = |tau: f64| -> Result<f64> {
            let par = [base[0] + tau * nrm[0], base[1] + tau * nrm[1]];
            Ok(mesh.eval(&par, iters)?[y_idx])
        };
        // Bracket y = 0 transversally to the segment.
        let mut lo = -1.0;
        let mut hi = 1.0;
        let (ylo, yhi) = (y_at(lo)?, y_at(hi)?);
        let y0 = y_at(0.0)?;
        if y0 == 0.0 {
            let par = base;
            return Ok(Some((par, mesh.eval(&par, iters)?)));
        }
        if ylo * y0 < 0.0 {
            hi = 0.0;
        } else if yhi * y0 < 0.0 {
            lo = 0.0;
        } else {
            return Ok(None);
        }
        let root = bisect(&y_at, lo, hi, 60)?;
        let par = [base[0] + root * nrm[0], base[1] + root * nrm[1]];
        let p = mesh.eval(&par, iters)?;
        Ok(Some((par, p)))
    };
    let v_of = |s: f64| -> Result<Option<f64>> {
        Ok(on_level(s)?.map(|(_, p)| p[v_idx]))
    };
    let (va, vb) = match (v_of(0.0)?, v_of(1.0)?) {
        (Some(a), Some(b)) => (a, b),
        _ => return Ok(None),
    };
    if va * vb > 0.0 {
        return Ok(None);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut flo = va;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let vm = match v_of(mid)? {
            Some(v) => v,
            None => return Ok(None),
        };
        if flo * vm <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = vm;
        }
    }
    Ok(on_level(0.5 * (lo + hi))?.map(|(par, _)| par))
}

fn bisect<F: Fn(f64) -> Result<f64>>(f: &F, mut lo: f64, mut hi: f64, steps: usize) -> Result<f64> {
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo * fhi > 0.0 {
        return Err(HcError::NoCrossing(
            "bisection endpoints do not bracket a sign change".into(),
        ));
    }
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Grow the extra fixed point's unstable set from a small central disc and
/// search its global continuation for a crossing with the base orbit's
/// local stable set {y = 0, v = 0}. The supplied intersection certificates
/// must flank the base exit point on both sides; the crossing is labeled
/// with the branch it tracks.
pub fn check_wu_q_meets_ws_o(
    instance: &Instance,
    cert: &FixedPointCert,
    homoclinics: &[HomoclinicCert],
) -> Result<CrossingCert> {
    if homoclinics.is_empty() {
        return Err(HcError::Usage(
            "the crossing check needs the square-root intersection certificates".into(),
        ));
    }
    let above = homoclinics.iter().any(|h| h.y_offset > 0.0);
    let below = homoclinics.iter().any(|h| h.y_offset < 0.0);
    if !above || !below {
        return Err(HcError::Usage(
            "intersection certificates must flank the base exit point on both sides".into(),
        ));
    }
    let inst = instance.clone().with_policy(DomainPolicy::Ignore);
    let chart = NormalFormChart::build(&inst)?;
    let q_phase = cert.q();
    let q_chart = chart.to_chart(&q_phase);
    let jac0 = chart.conjugated_jacobian(&inst, &q_chart)?;
    let central = manifolds::central_surface(&inst, &chart, &q_chart, &jac0, cert)?;

    let layout = inst.layout();
    let y_idx = layout.y_start();
    let v_idx: Vec<usize> = (0..layout.nv).map(|i| layout.v_start() + i).collect();
    let r0 = inst.delta() * inst.delta() / 10.0;

    let chart_ref = &chart;
    let central_ref = &central;
    let q_ref = &q_chart;
    let embed = move |par: &[f64; 2]| -> Result<PhasePoint> {
        let c = central_ref.embed(q_ref, &par[..]);
        chart_ref.from_chart(&c)
    };
    let inst_ref = &inst;
    let step = move |p: &PhasePoint| -> Result<PhasePoint> { inst_ref.return_map(p) };
    let mut mesh = CentralMesh::new(embed, step, r0, 10, 48, 40_000)?;
    let outcome = crossing_scan(&mut mesh, 14, y_idx, &v_idx, 1e-8)?;

    // Forward chain from the seed: distances to Q must grow monotonically
    // (the crossing's backward orbit falls into Q).
    let mut chain = vec![mesh.eval(&outcome.param, 0)?];
    for _ in 0..outcome.iterate {
        let next = inst.return_map(chain.last().unwrap())?;
        chain.push(next);
    }
    let dists: Vec<f64> = chain.iter().map(|p| (p - &q_phase).norm()).collect();
    let backward_monotone = dists.windows(2).skip(1).all(|w| w[1] > w[0]);

    let y_minus = inst.germ().exit_base()[y_idx];
    let exit_prev = inst.local_pass(&chain[outcome.iterate - 1])?;
    let y_previous = exit_prev[y_idx] - y_minus;
    let (strip_branch, strip_distance) = homoclinics
        .iter()
        .map(|h| (h.branch, (h.y_offset - y_previous).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();

    Ok(CrossingCert {
        point: to_vec(&outcome.point),
        residual: outcome.residual,
        iterate: outcome.iterate,
        param: outcome.param,
        y_previous,
        strip_branch,
        strip_distance,
        backward_monotone,
        y_range: outcome.y_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models;
    use crate::model::Model;

    fn sf_min() -> Model {
        Model::Sf21(test_models::sf_minimal())
    }

    fn sf_ext() -> Model {
        Model::Sf21(test_models::sf_extended())
    }

    #[test]
    #[ignore]
    fn scratch_probe_homoclinic() {
        let model = sf_min();
        let (n, mu, omega) = (10u32, 0.0, 0.3);
        let bundle = asymptotics::predict_homoclinic_quantities(&model, n, omega).expect("bundle");
        let parts = bundle.require_homoclinic().expect("parts");
        println!("y_mag {:.6e}  y_offsets {:?}", parts.y_mag, parts.y_offsets);
        let inst = Instance::new(&model, n, mu, omega)
            .expect("inst")
            .with_policy(DomainPolicy::Ignore);
        let layout = inst.layout();
        let rows = landing_rows(&inst);
        let exit_base = inst.germ().exit_base();
        let sf = model.as_sf().expect("sf");
        let (b3, y_minus) = (sf.global.b3, sf.global.y_minus);
        let gam_n = sf.spectrum.gamma.powi(n as i32);
        let _ = (parts, gam_n, exit_base, layout, rows, mu, b3, y_minus, inst);
        for model in [sf_min(), sf_ext()] {
            println!("--- layout nv {}", model.layout().nv);
            for n_try in [10u32, 12, 14] {
                let mut line = format!("n {n_try:2}: ");
                for j in 0..28 {
                    let w = 0.2 + 0.1 * j as f64;
                    let count = find_transverse_homoclinics(&model, n_try, 0.0, w)
                        .map(|c| c.len())
                        .unwrap_or(0);
                    line.push_str(&format!("{count}"));
                }
                println!("{line}  (omega 0.2..2.9 step 0.1, mu = 0)");
            }
        }
        for n_try in [8u32, 10, 12, 14, 16] {
            let w = 5.0 / n_try as f64;
            match find_transverse_homoclinics(&sf_min(), n_try, 0.0, w) {
                Ok(c) => {
                    let offs: Vec<f64> = c.iter().map(|h| h.y_offset).collect();
                    println!("min n {n_try} omega {w:.4}: {} branches, offsets {offs:?}", c.len());
                }
                Err(e) => println!("min n {n_try} omega {w:.4}: {e}"),
            }
        }
        match find_transverse_homoclinics(&sf_ext(), 10, 0.0, 0.5) {
            Ok(c) => println!("ext n 10 omega 0.5: {} branches", c.len()),
            Err(e) => println!("ext n 10 omega 0.5: {e}"),
        }
        for k in [8u32, 10, 12, 14] {
            let w = 5.0 / k as f64;
            match find_secondary_tangency(&sf_min(), k, w) {
                Ok(c) => println!(
                    "secondary k {k} omega {w:.4}: {} certs, mu {:?}, b3k {:?}",
                    c.len(),
                    c.iter().map(|t| t.mu).collect::<Vec<_>>(),
                    c.iter().map(|t| t.b3k_measured).collect::<Vec<_>>()
                ),
                Err(e) => println!("secondary k {k} omega {w:.4}: {e}"),
            }
        }
    }

    fn scan_roots(
        model: &Model,
        sf: &crate::model::SfModel,
        y_minus: f64,
        b3: f64,
        omega: f64,
    ) {
        for n_try in [6u32, 8, 10, 12, 14, 16, 18, 20] {
            let gn = sf.spectrum.gamma.powi(n_try as i32);
            let mu_unit = y_minus / gn;
            let r_ref = (y_minus / gn / b3).sqrt();
            let mut line = format!("n {n_try:2}: ");
            for j in 0..=20 {
                let mu_try = mu_unit * (-2.0 + 4.0 * j as f64 / 20.0);
                let inst_m = Instance::new(model, n_try, mu_try, omega)
                    .expect("inst")
                    .with_policy(DomainPolicy::Ignore);
                let eb = inst_m.germ().exit_base();
                let ly = inst_m.layout().y_start();
                let mut prev = f64::NAN;
                let mut crossings = 0usize;
                for i in 0..=600 {
                    let l1 = -2.0 * r_ref + 4.0 * r_ref * i as f64 / 600.0;
                    let mut w = eb.clone();
                    w[ly] += l1;
                    let v = match doubled_passage(&inst_m, &w) {
                        Ok((_, out, _)) => landing_residual(&inst_m, &out)[0],
                        Err(_) => f64::NAN,
                    };
                    if prev.is_finite() && v.is_finite() && prev * v < 0.0 {
                        crossings += 1;
                    }
                    prev = v;
                }
                line.push_str(&format!("{crossings}"));
                if j == 10 {
                    line.push('|');
                }
            }
            println!("{line}   (digits = roots at mu from -2 to +2 units of y-/gamma^n)");
        }
        let _ = sf;
    }

    #[test]
    #[ignore]
    fn scratch_probe() {
        let model = sf_min();
        let k = 12u32;
        let t = 0.5;
        let omega = asymptotics::nearest_gap_zero(&model, k, 1.0).expect("gap").0;
        println!("omega = {omega:.16e}");
        let bundle = asymptotics::predict_cycle_quantities_at(&model, k, t, omega).expect("bundle");
        let parts = bundle.require_cycle().expect("cycle parts");
        println!(
            "mu_pred {:.6e}  trace_pred {:.6e}  det_pred {:.6e}  q_pred z {:.6e} y {:.6e}",
            parts.mu_pred, parts.trace_pred, parts.det_pred, parts.q_pred.z, parts.q_pred.y
        );
        let predicted = quadratic_roots(parts.trace_pred, parts.det_pred);
        println!("predicted pair {} , {}", predicted.0, predicted.1);
        let base = Instance::new(&model, k, parts.mu_pred, omega)
            .expect("inst")
            .with_policy(DomainPolicy::Ignore);
        let chart = NormalFormChart::build(&base).expect("chart");
        let mut c = DVector::zeros(base.dim());
        c[0] = parts.q_pred.z;
        c[1] = parts.q_pred.y;
        let p0 = chart.from_chart(&c).expect("seed");
        println!("seed phase {:?}", p0.as_slice());
        let (tq, jac) = base.return_map_with_jacobian(&p0).expect("map");
        println!("residual {:.6e}", (&tq - &p0).norm());
        let eigs = linalg::eigenvalues_sorted(&jac);
        for e in &eigs {
            println!("eig {} (norm {:.6e})", e, e.norm());
        }
        // Manual replica of the augmented Newton system.
        let d = base.dim();
        let weight = 1.0 / (1.0 + parts.det_pred.abs());
        let mut x = DVector::zeros(d + 1);
        for i in 0..d {
            x[i] = p0[i];
        }
        x[d] = parts.mu_pred;
        let f = |x: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let mut inst = base.clone();
            inst.mu = x[d];
            let p = x.rows(0, d).into_owned();
            let (tp, jac) = inst.return_map_with_jacobian(&p)?;
            let (row, _, _) = placement_row(&inst, &p, t, predicted, weight)?;
            let mut r = DVector::zeros(d + 1);
            for i in 0..d {
                r[i] = tp[i] - p[i];
            }
            r[d] = row;
            let mut j = DMatrix::zeros(d + 1, d + 1);
            for i in 0..d {
                for c in 0..d {
                    j[(i, c)] = jac[(i, c)] - if i == c { 1.0 } else { 0.0 };
                }
            }
            let dmu = inst.mu_derivative(&p)?;
            for i in 0..d {
                j[(i, d)] = dmu[i];
            }
            for c in 0..=d {
                let h = 1e-6 * (1.0 + x[c].abs());
                let mut xp = x.clone();
                xp[c] += h;
                let mut xm = x.clone();
                xm[c] -= h;
                let gp = {
                    let mut ip = base.clone();
                    ip.mu = xp[d];
                    placement_row(&ip, &xp.rows(0, d).into_owned(), t, predicted, weight)?.0
                };
                let gm = {
                    let mut im = base.clone();
                    im.mu = xm[d];
                    placement_row(&im, &xm.rows(0, d).into_owned(), t, predicted, weight)?.0
                };
                j[(d, c)] = (gp - gm) / (2.0 * h);
            }
            Ok((r, j))
        };
        let _ = &f;
        // Granular: main row, then each FD perturbation.
        {
            let mut inst = base.clone();
            inst.mu = x[d];
            let p = x.rows(0, d).into_owned();
            match placement_row(&inst, &p, t, predicted, weight) {
                Ok((row, n1, n2)) => println!("main row ok: {row:.6e}  pair {n1} {n2}"),
                Err(e) => println!("main row FAILED: {e}"),
            }
            for c in 0..=d {
                let h = 1e-6 * (1.0 + x[c].abs());
                for sgn in [1.0, -1.0] {
                    let mut xs = x.clone();
                    xs[c] += sgn * h;
                    let mut is_ = base.clone();
                    is_.mu = xs[d];
                    let ps = xs.rows(0, d).into_owned();
                    match placement_row(&is_, &ps, t, predicted, weight) {
                        Ok((row, _, _)) => println!("  c={c} sgn={sgn}: row {row:.6e}"),
                        Err(e) => {
                            println!("  c={c} sgn={sgn}: FAILED: {e}");
                            let (_, jj) = is_.return_map_with_jacobian(&ps).expect("map");
                            for e2 in linalg::eigenvalues_sorted(&jj) {
                                println!("      eig {} (norm {:.6e})", e2, e2.norm());
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn quadratic_roots_cover_both_cases() {
        let (a, b) = quadratic_roots(5.0, 6.0); // roots 2, 3
        assert!((a.re - 2.0).abs() < 1e-12 && a.im == 0.0);
        assert!((b.re - 3.0).abs() < 1e-12);
        let (a, b) = quadratic_roots(2.0, 5.0); // 1 +/- 2i
        assert!((a.re - 1.0).abs() < 1e-12);
        assert!((a.im + 2.0).abs() < 1e-12);
        assert!((b.im - 2.0).abs() < 1e-12);
    }

    #[test]
    fn central_pair_prefers_predicted_and_flags_clusters() {
        let eigs = vec![
            Complex::new(2.0, 0.0),
            Complex::new(-70.0, 0.0),
            Complex::new(0.01, 0.0),
        ];
        let (i, j) = central_pair(&eigs, (Complex::new(1.9, 0.0), Complex::new(-69.0, 0.0)))
            .expect("unambiguous");
        assert_eq!((i, j), (0, 1));

        // Two near-identical candidates for one predicted slot.
        let eigs = vec![
            Complex::new(2.0, 0.0),
            Complex::new(2.0001, 0.0),
            Complex::new(-70.0, 0.0),
        ];
        let err = central_pair(&eigs, (Complex::new(2.0, 0.0), Complex::new(-69.0, 0.0)))
            .unwrap_err();
        assert!(matches!(err, HcError::CentralPairAmbiguous(_)));
    }

    #[test]
    fn canonical_fixed_point_certificate() {
        let model = sf_min();
        let omega = 1.0051637872539967;
        let cert = find_q(&model, 12, 0.5, omega, None).expect("fixed point");
        assert!(cert.residual < 1e-10, "residual {:.3e}", cert.residual);
        assert!(cert.placement_defect < 1e-8);
        assert_eq!(cert.index, 2);
        assert!(cert.index_matches);
        assert!(cert.placement_equivalent);
        assert_eq!(cert.spectrum.len(), 3);
        let diff = cert.revalidate(&model).expect("revalidate");
        assert!(diff < 1e-12, "revalidation drift {diff:.3e}");
    }

    #[test]
    fn extended_fixed_point_certificate() {
        let model = sf_ext();
        let omega = 1.0051637872539967;
        let cert = find_q(&model, 12, 0.5, omega, None).expect("fixed point");
        assert!(cert.residual < 1e-10);
        assert!(cert.placement_defect < 1e-8);
        assert_eq!(cert.index, 3);
        assert!(cert.index_matches);
        assert!(cert.placement_equivalent);
    }

    #[test]
    fn product_modulus_tracks_the_leading_scale() {
        let model = sf_min();
        let sf = test_models::sf_minimal();
        let mut errs = Vec::new();
        for k in [8u32, 10, 12] {
            let (omega, _) =
                asymptotics::nearest_gap_zero(&model, k, 1.0).expect("frequency");
            let cert = find_q(&model, k, 0.5, omega, None).expect("fixed point");
            let rc = asymptotics::rotation_coeffs(&model, k, omega).expect("coefficients");
            let lead = (sf.global.b1 * rc.alpha_star
                * sf.spectrum.lambda.powi(k as i32)
                * sf.spectrum.gamma.powi(k as i32))
            .abs();
            let err = (cert.central_det.abs() / lead - 1.0).abs();
            errs.push(err);
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "errors {errs:?}");
        assert!(errs[2] < 0.8 * errs[0], "errors {errs:?}");
    }

    #[test]
    fn placement_survives_near_the_walls() {
        let model = sf_min();
        let omega = 1.0051637872539967;
        for t in [1.0 - 1e-3, -(1.0 - 1e-3)] {
            let cert = find_q(&model, 12, t, omega, None).expect("fixed point");
            assert!(cert.residual < 1e-10);
            assert!(cert.placement_defect < 1e-8);
            assert!(cert.index_matches, "t = {t}: index {}", cert.index);
        }
    }

    #[test]
    fn out_of_window_placement_reports_honest_index() {
        let model = sf_min();
        let omega = 1.0051637872539967;
        let cert = find_q(&model, 12, 1.5, omega, None).expect("fixed point");
        assert_eq!(cert.index, 1, "spectrum {:?}", cert.spectrum);
        assert!(!cert.index_matches);
        assert!(cert.placement_equivalent);
        assert!(cert.placement_defect < 1e-8);
    }

    #[test]
    fn seed_perturbation_reconverges_to_the_same_point() {
        let model = sf_min();
        let omega = 1.0051637872539967;
        let cert = find_q(&model, 12, 0.5, omega, None).expect("fixed point");
        let mut p = cert.point.clone();
        for (i, v) in p.iter_mut().enumerate() {
            *v += 1e-3 * (1.0 + i as f64) * 1e-1 * v.abs().max(1e-4);
        }
        let mu = cert.mu * (1.0 + 1e-3);
        let again = find_q(&model, 12, 0.5, omega, Some((&p, mu))).expect("reconverge");
        let dp: f64 = cert
            .point
            .iter()
            .zip(again.point.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dp < 1e-8, "drift {dp:.3e}");
        assert!((cert.mu - again.mu).abs() < 1e-8);
    }

    #[test]
    fn predictor_corrector_gap_decays_with_the_contraction_rate() {
        let model = sf_min();
        let mut logs = Vec::new();
        let mut ks = Vec::new();
        for k in [8u32, 10, 12, 14] {
            let (omega, _) = asymptotics::nearest_gap_zero(&model, k, 1.0).expect("frequency");
            let bundle =
                asymptotics::predict_cycle_quantities_at(&model, k, 0.5, omega).expect("bundle");
            let parts = bundle.require_cycle().expect("parts");
            let cert = find_q(&model, k, 0.5, omega, None).expect("fixed point");
            let gap = (parts.mu_pred - cert.mu).abs() / cert.mu.abs().max(1e-300);
            logs.push(gap.max(1e-300).ln());
            ks.push(k as f64);
        }
        // Least-squares slope of log-gap against k.
        let n = ks.len() as f64;
        let sx: f64 = ks.iter().sum();
        let sy: f64 = logs.iter().sum();
        let sxx: f64 = ks.iter().map(|x| x * x).sum();
        let sxy: f64 = ks.iter().zip(&logs).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let lam = test_models::sf_minimal().spectrum.lambda;
        assert!(
            slope <= lam.ln() + 0.35,
            "slope {slope:.3} vs log-contraction {:.3}",
            lam.ln()
        );
        assert!(
            logs.windows(2).all(|w| w[1] < w[0]),
            "gaps not monotone: {logs:?}"
        );
    }

    #[test]
    fn four_intersection_branches_with_margins() {
        let model = sf_min();
        let certs =
            find_transverse_homoclinics(&model, 10, 0.0, 0.3).expect("four branches");
        assert_eq!(certs.len(), 4);
        let above = certs.iter().filter(|c| c.y_offset > 0.0).count();
        assert_eq!(above, 2);
        for c in &certs {
            assert!(c.residual < 1e-10, "residual {:.3e}", c.residual);
            assert!(c.transversality_margin.abs() > 1e-6);
            assert!(c.revalidate(&model).expect("revalidate") < 1e-12);
            // Exit points keep the unstable-set structure: x = 0.
            assert!(c.point[0].abs() < 1e-15 && c.point[1].abs() < 1e-15);
        }
        // Branches are sorted by descending offset and distinct.
        for w in certs.windows(2) {
            assert!(w[0].y_offset > w[1].y_offset);
        }
    }

    #[test]
    fn intersection_offsets_match_a_dense_scalar_scan() {
        let model = sf_min();
        let inst = Instance::new(&model, 10, 0.0, 0.3)
            .expect("instance")
            .with_policy(DomainPolicy::Ignore);
        let certs = find_transverse_homoclinics(&model, 10, 0.0, 0.3).expect("branches");
        let span = 2.0 * certs[0].y_offset.abs().max(certs[3].y_offset.abs());
        let layout = inst.layout();
        let y_of = |l1: f64| -> f64 {
            let mut w = inst.germ().exit_base();
            w[layout.y_start()] += l1;
            let (_, out, _) = doubled_passage(&inst, &w).expect("passage");
            out[layout.y_start()]
        };
        let n = 4001;
        let mut roots = Vec::new();
        let mut prev = y_of(-span);
        for i in 1..n {
            let l = -span + 2.0 * span * i as f64 / (n - 1) as f64;
            let cur = y_of(l);
            if prev * cur < 0.0 {
                let mut lo = -span + 2.0 * span * (i - 1) as f64 / (n - 1) as f64;
                let mut hi = l;
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if y_of(lo) * y_of(mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev = cur;
        }
        assert_eq!(roots.len(), 4, "oracle found {roots:?}");
        let mut offsets: Vec<f64> = certs.iter().map(|c| c.y_offset).collect();
        offsets.sort_by(f64::total_cmp);
        roots.sort_by(f64::total_cmp);
        for (a, b) in offsets.iter().zip(roots.iter()) {
            assert!((a - b).abs() < 1e-9, "solver {a} vs oracle {b}");
        }
    }

    #[test]
    fn intersection_offsets_scale_with_the_square_root_law() {
        let model = sf_min();
        let gamma = test_models::sf_minimal().spectrum.gamma;
        let mut mags = Vec::new();
        let mut ns = Vec::new();
        for n in [8u32, 10, 12, 14] {
            let certs = find_transverse_homoclinics(&model, n, 0.0, 0.3).expect("branches");
            let mean: f64 = certs.iter().map(|c| c.y_offset.abs().ln()).sum::<f64>() / 4.0;
            mags.push(mean);
            ns.push(n as f64);
        }
        let n = ns.len() as f64;
        let sx: f64 = ns.iter().sum();
        let sy: f64 = mags.iter().sum();
        let sxx: f64 = ns.iter().map(|x| x * x).sum();
        let sxy: f64 = ns.iter().zip(&mags).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let expected = -gamma.ln() / 2.0;
        assert!(
            (slope / expected - 1.0).abs() < 0.05,
            "slope {slope:.4} vs expected {expected:.4}"
        );
    }

    #[test]
    fn extended_model_intersections_close_the_v_rows() {
        let model = sf_ext();
        let certs = find_transverse_homoclinics(&model, 10, 0.0, 0.3).expect("branches");
        assert_eq!(certs.len(), 4);
        for c in &certs {
            assert!(c.residual < 1e-10);
            let vlen = c.final_point.len();
            assert!(c.final_point[vlen - 1].abs() < 1e-10);
        }
    }

    #[test]
    fn secondary_tangency_pair_with_rebased_conditions() {
        let model = sf_min();
        let certs = find_secondary_tangency(&model, 10, 0.3).expect("tangency pair");
        assert_eq!(certs.len(), 2);
        assert!(
            certs[0].b3k_measured * certs[1].b3k_measured < 0.0,
            "quadratic coefficients should alternate: {} vs {}",
            certs[0].b3k_measured,
            certs[1].b3k_measured
        );
        let normal_count = certs.iter().filter(|c| c.normal).count();
        assert_eq!(normal_count, 1);
        for c in &certs {
            assert!(c.residual_dy < 1e-8, "tangency defect {:.3e}", c.residual_dy);
            assert!((c.mu_ratio - 1.0).abs() < 0.2, "mu ratio {}", c.mu_ratio);
            assert!(c.d_mu_new_d_mu.abs() > 1e-3);
            assert!(c.d_mu_new_d_mu.is_finite());
            for name in ["C1", "C2", "C3", "C4", "C5.1"] {
                let cond = c.conditions.iter().find(|r| r.name == name).expect(name);
                assert!(cond.holds, "{name} fails: margin {}", cond.margin);
            }
            assert!(c.revalidate(&model).expect("revalidate") < 1e-10);
        }
    }

    #[test]
    fn secondary_parameter_ratio_tightens_with_k() {
        let model = sf_min();
        let sf = test_models::sf_minimal();
        let mut errs = Vec::new();
        for k in [8u32, 14] {
            let certs = find_secondary_tangency(&model, k, 0.3).expect("tangency pair");
            let gam_k = sf.spectrum.gamma.powi(k as i32);
            let err = certs
                .iter()
                .map(|c| (c.mu / (sf.global.y_minus / gam_k) - 1.0).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        assert!(errs[0] < 0.2, "k = 8 ratio error {:.3}", errs[0]);
        assert!(errs[1] < 0.05, "k = 14 ratio error {:.3}", errs[1]);
    }

    #[test]
    fn secondary_curvature_scales_with_the_mixed_rate() {
        let model = sf_min();
        let sf = test_models::sf_minimal();
        let rate = 0.5 * sf.spectrum.lambda.ln() + sf.spectrum.gamma.ln();
        let mut logs = Vec::new();
        let mut ks = Vec::new();
        for k in [8u32, 10, 12, 14] {
            let certs = find_secondary_tangency(&model, k, 0.3).expect("pair");
            let mean =
                certs.iter().map(|c| c.b3k_measured.abs().ln()).sum::<f64>() / 2.0;
            logs.push(mean);
            ks.push(k as f64);
        }
        let n = ks.len() as f64;
        let sx: f64 = ks.iter().sum();
        let sy: f64 = logs.iter().sum();
        let sxx: f64 = ks.iter().map(|x| x * x).sum();
        let sxy: f64 = ks.iter().zip(&logs).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope / rate - 1.0).abs() < 0.1,
            "slope {slope:.4} vs mixed rate {rate:.4}"
        );
    }

    #[test]
    fn crossing_scan_finds_a_planted_zero() {
        // Synthetic surface: y = 1 + 0.1 * par0, stepped down by 0.35 per
        // application; the level set y = 0 is hit near par0 = 0.5 at the
        // third application.
        let embed = |par: &[f64; 2]| -> Result<PhasePoint> {
            Ok(DVector::from_row_slice(&[par[0], par[1], 1.0 + 0.1 * par[0]]))
        };
        let step = |p: &PhasePoint| -> Result<PhasePoint> {
            let mut q = p.clone();
            q[2] -= 0.35;
            Ok(q)
        };
        let mut mesh = CentralMesh::new(embed, step, 1.0, 6, 24, 10_000).expect("mesh");
        let out = crossing_scan(&mut mesh, 10, 2, &[], 1e-10).expect("crossing");
        assert_eq!(out.iterate, 3);
        assert!((out.param[0] - 0.5).abs() < 1e-8, "param {:?}", out.param);
        assert!(out.residual < 1e-10);
    }

    #[test]
    fn crossing_scan_reports_no_crossing_honestly() {
        // Control: the y coordinate contracts toward 1 and never changes
        // sign, so the scan must fail with the attained range.
        let embed = |par: &[f64; 2]| -> Result<PhasePoint> {
            Ok(DVector::from_row_slice(&[par[0], par[1], 1.0 + 0.1 * par[0]]))
        };
        let step = |p: &PhasePoint| -> Result<PhasePoint> {
            let mut q = p.clone();
            q[2] = 0.5 + 0.5 * q[2];
            Ok(q)
        };
        let mut mesh = CentralMesh::new(embed, step, 1.0, 4, 16, 10_000).expect("mesh");
        let err = crossing_scan(&mut mesh, 6, 2, &[], 1e-10).unwrap_err();
        match err {
            HcError::NoCrossing(msg) => assert!(msg.contains("range"), "message: {msg}"),
            other => panic!("expected the no-crossing variant, got {other:?}"),
        }
    }

    #[test]
    fn measured_curvature_approaches_the_predicted_one() {
        let model = sf_min();
        let mut errs = Vec::new();
        for k in [10u32, 14] {
            let certs = find_secondary_tangency(&model, k, 0.3).expect("pair");
            let err = certs
                .iter()
                .map(|c| (c.b3k_measured / c.b3k_predicted - 1.0).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        assert!(errs[1] < errs[0], "errors {errs:?}");
    }
}
