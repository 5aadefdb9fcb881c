//! Invariant cone fields and local invariant manifolds of the certified
//! return-map fixed point.
//!
//! The module has three layers:
//!
//! * **Cones** — membership tests for the four cone families in chart
//!   coordinates, a conditional sampler that produces section point pairs
//!   `(M, T(M))` with both endpoints inside the section box, a Monte-Carlo
//!   invariance verifier with per-cone margins, and an envelope fit that
//!   produces the cone constants which are then frozen into configuration.
//! * **Graphs** — an order-by-order polynomial graph transform over a
//!   selected invariant eigenspace, used for the stable manifold, the full
//!   unstable graph, and the two-dimensional central surface.
//! * **Mesh** — a growing triangle mesh that carries a small central disc
//!   forward under the return map, tracking projected area until the image
//!   reaches the section boundary.

use std::collections::HashMap;
use std::io::Write as IoWrite;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics;
use crate::chart::NormalFormChart;
use crate::dynamics::{DomainPolicy, Instance, PhasePoint};
use crate::error::{HcError, Result};
use crate::linalg;
use crate::model::{ConeSpec, Model};
use crate::newton::{self, NewtonOptions};
use crate::poly::Poly;
use crate::solvers::FixedPointCert;

// ---------------------------------------------------------------------------
// Cone kinds and membership
// ---------------------------------------------------------------------------

/// The four cone families, in chart coordinates `(Z, Y, W, V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    /// `‖v‖ < K^{cs} (|z| + |y| + ‖w‖)`; carried backward.
    CenterStable,
    /// `max(|z|, |y|, ‖v‖) < K^{ss} ‖w‖`; carried backward, contracted
    /// forward.
    StrongStable,
    /// `‖w‖ < K^{cu} (|z| + |y| + ‖v‖)`; carried forward.
    CenterUnstable,
    /// `max(|z|, |y|, ‖w‖) < K^{uu} ‖v‖`; carried forward, v-expanded.
    StrongUnstable,
}

impl ConeKind {
    pub const ALL: [ConeKind; 4] = [
        ConeKind::CenterStable,
        ConeKind::StrongStable,
        ConeKind::CenterUnstable,
        ConeKind::StrongUnstable,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ConeKind::CenterStable => "cs",
            ConeKind::StrongStable => "ss",
            ConeKind::CenterUnstable => "cu",
            ConeKind::StrongUnstable => "uu",
        }
    }

    /// True for the cones carried forward by the differential; the other two
    /// are carried backward (tested on pulled-back vectors).
    pub fn forward(&self) -> bool {
        matches!(self, ConeKind::CenterUnstable | ConeKind::StrongUnstable)
    }

    /// Index sets (core block, transverse block) of the defining inequality.
    fn blocks(&self, nu: usize, nv: usize) -> (Vec<usize>, Vec<usize>) {
        let zy = vec![0usize, 1];
        let w: Vec<usize> = (2..3 + nu).collect();
        let v: Vec<usize> = (3 + nu..3 + nu + nv).collect();
        match self {
            ConeKind::CenterStable => ([zy, w].concat(), v),
            ConeKind::StrongStable => (w, [zy, v].concat()),
            ConeKind::CenterUnstable => ([zy, v].concat(), w),
            ConeKind::StrongUnstable => (v, [zy, w].concat()),
        }
    }
}

/// Scale data the Y-dependent cone apertures need: contraction/expansion
/// rates of the instance raised to the return length.
#[derive(Debug, Clone, Copy)]
pub struct ConeFrame {
    pub lambda_k: f64,
    pub gamma_hat_k: f64,
    /// `(|gamma| / gamma_hat)^k`, the basis of the weakened strong-unstable
    /// aperture used after a v-block reduction.
    pub ratio_uu: f64,
    pub nu: usize,
    pub nv: usize,
}

impl ConeFrame {
    pub fn of(instance: &Instance) -> ConeFrame {
        let l = instance.layout();
        let k = instance.k as i32;
        ConeFrame {
            lambda_k: instance.local().lambda().abs().powi(k),
            gamma_hat_k: instance.gamma_hat().abs().powi(k),
            ratio_uu: (instance.local().gamma().abs() / instance.gamma_hat().abs()).powi(k),
            nu: l.nu,
            nv: l.nv,
        }
    }
}

/// Aperture `K` of the requested cone at base-point height `|Y|`.
fn aperture(kind: ConeKind, params: &ConeSpec, frame: &ConeFrame, y_abs: f64) -> f64 {
    match kind {
        ConeKind::CenterStable => params.k1_cs * y_abs + params.k2_cs * frame.lambda_k,
        ConeKind::StrongStable => params.k1_ss * y_abs + params.k2_ss,
        ConeKind::CenterUnstable => params.k1_cu * y_abs + params.k2_cu * frame.lambda_k,
        ConeKind::StrongUnstable => match (params.k1_uu, params.k2_uu) {
            (Some(k1), Some(k2)) => k1 * y_abs + k2 * frame.ratio_uu,
            _ => params.k_uu,
        },
    }
}

/// Core and transverse measures of the defining inequality
/// `transverse < K * core`.
fn split_measures(kind: ConeKind, c: &DVector<f64>, nu: usize, nv: usize) -> (f64, f64) {
    let z = c[0].abs();
    let y = c[1].abs();
    let w = c.rows(2, 1 + nu).norm();
    let v = if nv > 0 { c.rows(3 + nu, nv).norm() } else { 0.0 };
    match kind {
        ConeKind::CenterStable => (z + y + w, v),
        ConeKind::StrongStable => (w, z.max(y).max(v)),
        ConeKind::CenterUnstable => (z + y + v, w),
        ConeKind::StrongUnstable => (v, z.max(y).max(w)),
    }
}

/// Strict membership plus a normalized margin (positive inside, negative
/// outside, zero exactly on the boundary).
fn cone_margin(
    frame: &ConeFrame,
    params: &ConeSpec,
    kind: ConeKind,
    y_pos: f64,
    vector: &DVector<f64>,
) -> Result<(bool, f64)> {
    if vector.iter().all(|x| *x == 0.0) {
        return Err(HcError::ZeroVector);
    }
    if kind == ConeKind::StrongUnstable && frame.nv == 0 {
        return Err(HcError::Config(
            "the strong unstable cone is empty without v directions".into(),
        ));
    }
    let k = aperture(kind, params, frame, y_pos.abs());
    let (core, trans) = split_measures(kind, vector, frame.nu, frame.nv);
    let lhs = k * core;
    let margin = (lhs - trans) / (lhs + trans).max(f64::MIN_POSITIVE);
    Ok((trans < lhs, margin))
}

/// Evaluate the defining strict inequality of the requested cone for a
/// tangent vector in chart coordinates at base-point height `y_pos`.
pub fn cone_contains(
    frame: &ConeFrame,
    params: &ConeSpec,
    kind: ConeKind,
    y_pos: f64,
    vector: &DVector<f64>,
) -> Result<bool> {
    Ok(cone_margin(frame, params, kind, y_pos, vector)?.0)
}

/// Random unit direction (rejection-sampled away from tiny norms).
fn unit_direction(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(m, |_, _| rng.gen_range(-1.0f64..1.0));
        let n = v.norm();
        if n > 0.3 {
            return v / n;
        }
    }
}

/// A test vector whose transverse measure sits at `fraction` of the cone
/// aperture: strictly inside for `fraction < 1`, exactly on the boundary for
/// `fraction = 1`.
fn cone_test_vector(
    rng: &mut ChaCha8Rng,
    kind: ConeKind,
    params: &ConeSpec,
    frame: &ConeFrame,
    y_abs: f64,
    fraction: f64,
) -> DVector<f64> {
    let dim = 3 + frame.nu + frame.nv;
    let (core_idx, trans_idx) = kind.blocks(frame.nu, frame.nv);
    let mut v = DVector::zeros(dim);
    loop {
        for &i in &core_idx {
            v[i] = rng.gen_range(-1.0f64..1.0);
        }
        let n = v.norm();
        if n > 0.3 {
            for &i in &core_idx {
                v[i] /= n;
            }
            break;
        }
    }
    if fraction > 0.0 && !trans_idx.is_empty() {
        let aper = aperture(kind, params, frame, y_abs);
        let (core0, _) = split_measures(kind, &v, frame.nu, frame.nv);
        let mut t = DVector::zeros(dim);
        loop {
            for &i in &trans_idx {
                t[i] = rng.gen_range(-1.0f64..1.0);
            }
            if t.norm() > 0.3 {
                break;
            }
        }
        let (_, trans0) = split_measures(kind, &t, frame.nu, frame.nv);
        if trans0 > 0.0 {
            let target = fraction * aper * core0;
            for &i in &trans_idx {
                v[i] = t[i] * target / trans0;
            }
        }
    }
    v
}

// ---------------------------------------------------------------------------
// Section point-pair sampler
// ---------------------------------------------------------------------------

struct SectionPair {
    m_chart: DVector<f64>,
    img_chart: DVector<f64>,
    /// Differential of the return map conjugated into chart coordinates,
    /// taken at the base point.
    jac: DMatrix<f64>,
}

/// Sample points `M` of the section whose return image lands back inside the
/// section box. The free entry coordinates `(x, u)` are drawn uniformly; the
/// cross coordinates `(y, v)` are solved so the exit offsets take prescribed
/// small values, which keeps the acceptance rate near one instead of the
/// `gamma^{-k}` rate of naive rejection.
fn section_pairs(
    inst: &Instance,
    chart: &NormalFormChart,
    count: usize,
    seed: u64,
) -> Result<Vec<SectionPair>> {
    let layout = inst.layout();
    let d = layout.dim();
    let (nu, nv) = (layout.nu, layout.nv);
    let eb = inst.germ().entry_base();
    let xb = inst.germ().exit_base();
    let delta = inst.delta();
    let bound = delta * inst.slack();
    // Column scales of the exit-to-image map bound how large an exit offset
    // can be while the image stays inside the section box.
    let jg = inst.germ().jacobian(inst.mu, &xb)?;
    let mut col_y: f64 = 1.0;
    let mut col_v: f64 = 1.0;
    for r in 0..d {
        col_y = col_y.max(jg[(r, layout.y_start())].abs());
        for j in 0..nv {
            col_v = col_v.max(jg[(r, layout.v_start() + j)].abs());
        }
    }
    let y_scale = 0.8 * bound / col_y;
    let v_scale = 0.8 * bound / col_v;
    let gk = inst.local().gamma().powi(inst.k as i32);
    let ghk = inst.gamma_hat().abs().powi(inst.k as i32);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    let budget = 60 * count + 2000;
    for _ in 0..budget {
        if pairs.len() >= count {
            break;
        }
        let mut p = eb.clone();
        p[0] += rng.gen_range(-0.8f64..0.8) * delta;
        p[1] += rng.gen_range(-0.8f64..0.8) * delta;
        for i in 0..nu {
            p[layout.u_start() + i] += rng.gen_range(-0.8f64..0.8) * delta;
        }
        let ty = xb[layout.y_start()] + rng.gen_range(-1.0f64..1.0) * y_scale;
        let tv: Vec<f64> = (0..nv)
            .map(|i| xb[layout.v_start() + i] + rng.gen_range(-1.0f64..1.0) * v_scale)
            .collect();
        // Solve the local pass for the entry (y, v) hitting the targets.
        let m = 1 + nv;
        let place = |q: &DVector<f64>| -> PhasePoint {
            let mut pt = p.clone();
            pt[layout.y_start()] = q[0];
            for i in 0..nv {
                pt[layout.v_start() + i] = q[1 + i];
            }
            pt
        };
        let residual = |q: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let pt = place(q);
            let (e, jl) = inst
                .local()
                .iterate_with_jacobian(&pt, inst.k, DomainPolicy::Ignore)?;
            let mut r = DVector::zeros(m);
            r[0] = e[layout.y_start()] - ty;
            for i in 0..nv {
                r[1 + i] = e[layout.v_start() + i] - tv[i];
            }
            let mut jq = DMatrix::zeros(m, m);
            let rows: Vec<usize> = std::iter::once(layout.y_start())
                .chain((0..nv).map(|i| layout.v_start() + i))
                .collect();
            for (ri, &rr) in rows.iter().enumerate() {
                for (ci, &cc) in rows.iter().enumerate() {
                    jq[(ri, ci)] = jl[(rr, cc)];
                }
            }
            Ok((r, jq))
        };
        let mut seed_q = DVector::zeros(m);
        seed_q[0] = ty / gk;
        for i in 0..nv {
            seed_q[1 + i] = tv[i] / ghk;
        }
        let sol = match newton::solve(residual, &seed_q, NewtonOptions::default()) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let mpt = place(&sol.x);
        if inst.in_domain(&mpt).is_err() {
            continue;
        }
        let img = match inst.return_map(&mpt) {
            Ok(v) => v,
            Err(_) => continue,
        };
        // The image must land inside the section box; its own exit data is
        // unconstrained (that is the next pass's concern).
        let mut ok = (img[0] - eb[0]).abs() <= bound && (img[1] - eb[1]).abs() <= bound;
        for i in 0..nu {
            ok &= (img[layout.u_start() + i] - eb[layout.u_start() + i]).abs() <= bound;
        }
        ok &= img[layout.y_start()].abs() <= delta;
        for i in 0..nv {
            ok &= (img[layout.v_start() + i] - eb[layout.v_start() + i]).abs() <= bound;
        }
        if !ok {
            continue;
        }
        let m_chart = chart.to_chart(&mpt);
        let jac = match chart.conjugated_jacobian(inst, &m_chart) {
            Ok(j) => j,
            Err(_) => continue,
        };
        let img_chart = chart.to_chart(&img);
        pairs.push(SectionPair {
            m_chart,
            img_chart,
            jac,
        });
    }
    if pairs.len() < 10 {
        return Err(HcError::InsufficientSamples(format!(
            "{} point pairs landed in the section box (need at least 10)",
            pairs.len()
        )));
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Invariance verification
// ---------------------------------------------------------------------------

/// One tested vector: which cone, which pair, the height the vector was
/// built at, the boundary fraction, and the membership margin after
/// transport.
#[derive(Debug, Clone, Serialize)]
pub struct ConeRecord {
    pub cone: &'static str,
    pub pair: usize,
    pub y_base: f64,
    pub fraction: f64,
    pub margin: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeCaseReport {
    pub cone: String,
    pub tested: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeReport {
    pub k: u32,
    pub requested_samples: usize,
    /// Point pairs that actually landed in the section box.
    pub pairs: usize,
    pub cases: Vec<ConeCaseReport>,
    /// Largest observed `‖w_image‖ / (lambda^k ‖w‖)` over strong stable cone
    /// vectors.
    pub ss_contraction_fitted: f64,
    /// The configured bound the ratio is compared against.
    pub ss_contraction_bound: f64,
    pub ss_contraction_violations: usize,
    /// Smallest observed `‖v_image‖ / (gamma_hat^k ‖v‖)` over strong
    /// unstable cone vectors (absent without v directions).
    pub uu_expansion_min: Option<f64>,
    pub uu_expansion_violations: usize,
    #[serde(skip)]
    pub records: Vec<ConeRecord>,
}

impl ConeReport {
    pub fn total_violations(&self) -> usize {
        self.cases.iter().map(|c| c.violations).sum::<usize>()
            + self.ss_contraction_violations
            + self.uu_expansion_violations
    }

    /// One row per tested vector.
    pub fn write_csv<W: IoWrite>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "cone,pair,y_base,fraction,margin,ok")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:.16e},{},{:.16e},{}",
                r.cone, r.pair, r.y_base, r.fraction, r.margin, r.ok
            )?;
        }
        Ok(())
    }
}

/// Cones active for a given transverse dimension count: without v
/// directions the center-stable cone is all of space and the strong unstable
/// cone is empty, so both are skipped.
fn active_kinds(nv: usize) -> Vec<ConeKind> {
    ConeKind::ALL
        .into_iter()
        .filter(|k| nv > 0 || !matches!(k, ConeKind::CenterStable | ConeKind::StrongUnstable))
        .collect()
}

/// Monte-Carlo invariance check of the four cone families on section point
/// pairs: forward cones are pushed by the differential and tested at the
/// image, backward cones are built at the image, pulled back, and tested at
/// the base point. Also measures the strong-stable forward contraction and
/// the strong-unstable v-expansion.
pub fn verify_cone_invariance(
    instance: &Instance,
    params: &ConeSpec,
    sample_count: usize,
    seed: u64,
) -> Result<ConeReport> {
    let inst = instance.clone().with_policy(DomainPolicy::Ignore);
    let chart = NormalFormChart::build(&inst)?;
    let frame = ConeFrame::of(&inst);
    let pairs = section_pairs(&inst, &chart, sample_count, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x517c_c1ab);
    let fractions = [0.97, 0.9, 0.3];
    let active = active_kinds(frame.nv);
    let mut acc: Vec<(ConeKind, usize, usize, f64, f64)> = active
        .iter()
        .map(|&k| (k, 0usize, 0usize, f64::INFINITY, 0.0f64))
        .collect();
    let mut records = Vec::new();
    let mut ss_ratio_max: f64 = 0.0;
    let mut ss_violations = 0usize;
    let mut uu_exp_min = f64::INFINITY;
    let mut uu_violations = 0usize;

    for (pi, pair) in pairs.iter().enumerate() {
        let y_m = pair.m_chart[1];
        let y_img = pair.img_chart[1];
        let lu = pair.jac.clone().lu();
        for (slot, &kind) in active.iter().enumerate() {
            for &f in &fractions {
                let (carried, margin, y_base) = if kind.forward() {
                    let v = cone_test_vector(&mut rng, kind, params, &frame, y_m.abs(), f);
                    let img = &pair.jac * &v;
                    let (okv, mar) = cone_margin(&frame, params, kind, y_img, &img)?;
                    (okv, mar, y_m)
                } else {
                    let v = cone_test_vector(&mut rng, kind, params, &frame, y_img.abs(), f);
                    let pre = lu.solve(&v).ok_or_else(|| {
                        HcError::SingularJacobian("cone pull-back across the return map".into())
                    })?;
                    let (okv, mar) = cone_margin(&frame, params, kind, y_m, &pre)?;
                    (okv, mar, y_img)
                };
                let e = &mut acc[slot];
                e.1 += 1;
                if !carried {
                    e.2 += 1;
                }
                e.3 = e.3.min(margin);
                e.4 += margin;
                records.push(ConeRecord {
                    cone: kind.label(),
                    pair: pi,
                    y_base,
                    fraction: f,
                    margin,
                    ok: carried,
                });
            }
        }
        // Forward rates on fresh cone vectors at the base point.
        for &f in &fractions {
            let vs =
                cone_test_vector(&mut rng, ConeKind::StrongStable, params, &frame, y_m.abs(), f);
            let img = &pair.jac * &vs;
            let w0 = vs.rows(2, 1 + frame.nu).norm();
            let w1 = img.rows(2, 1 + frame.nu).norm();
            let ratio = w1 / (frame.lambda_k * w0);
            ss_ratio_max = ss_ratio_max.max(ratio);
            if ratio > params.contraction_c {
                ss_violations += 1;
            }
            if frame.nv > 0 {
                let vu = cone_test_vector(
                    &mut rng,
                    ConeKind::StrongUnstable,
                    params,
                    &frame,
                    y_m.abs(),
                    f,
                );
                let imgu = &pair.jac * &vu;
                let v0 = vu.rows(3 + frame.nu, frame.nv).norm();
                let v1 = imgu.rows(3 + frame.nu, frame.nv).norm();
                uu_exp_min = uu_exp_min.min(v1 / (frame.gamma_hat_k * v0));
                if v1 <= v0 {
                    uu_violations += 1;
                }
            }
        }
    }
    let cases = acc
        .iter()
        .map(|(k, tested, viol, worst, sum)| ConeCaseReport {
            cone: k.label().to_string(),
            tested: *tested,
            violations: *viol,
            worst_margin: if *tested == 0 { 0.0 } else { *worst },
            mean_margin: if *tested == 0 {
                0.0
            } else {
                *sum / *tested as f64
            },
        })
        .collect();
    Ok(ConeReport {
        k: inst.k,
        requested_samples: sample_count,
        pairs: pairs.len(),
        cases,
        ss_contraction_fitted: ss_ratio_max,
        ss_contraction_bound: params.contraction_c,
        ss_contraction_violations: ss_violations,
        uu_expansion_min: if frame.nv > 0 { Some(uu_exp_min) } else { None },
        uu_expansion_violations: uu_violations,
        records,
    })
}

// ---------------------------------------------------------------------------
// Constant fitting
// ---------------------------------------------------------------------------

/// Smallest-cost line `K1 |Y| + K2 * basis` dominating all requirement
/// points `(|Y|, required aperture)`.
fn envelope_fit(points: &[(f64, f64)], basis: f64) -> (f64, f64) {
    let y_max = points.iter().fold(0.0f64, |a, p| a.max(p.0));
    let r_max = points.iter().fold(0.0f64, |a, p| a.max(p.1));
    let y_mean = points.iter().map(|p| p.0).sum::<f64>() / points.len().max(1) as f64;
    let b = basis.max(f64::MIN_POSITIVE);
    let floor = 0.05 * r_max / b;
    if y_max <= 0.0 || r_max <= 0.0 {
        return (0.0, (r_max / b).max(floor));
    }
    let k1_top = 2.0 * r_max / y_max;
    let mut best = (0.0, r_max / b, f64::INFINITY);
    for i in 0..=40 {
        let k1 = k1_top * i as f64 / 40.0;
        let need = points.iter().fold(0.0f64, |a, p| a.max(p.1 - k1 * p.0));
        let cost = k1 * y_mean + need;
        if cost < best.2 {
            best = (k1, need / b, cost);
        }
    }
    (best.0, best.1.max(floor))
}

/// Fit the cone constants on the given instance by three alternating
/// sweeps: build boundary vectors with the current constants, transport
/// them, record the aperture each transported vector requires, and fit the
/// smallest dominating envelope (inflated by 1.3 for headroom). The result
/// is meant to be frozen into configuration.
pub fn fit_cone_params(instance: &Instance, sample_count: usize, seed: u64) -> Result<ConeSpec> {
    let inst = instance.clone().with_policy(DomainPolicy::Ignore);
    let chart = NormalFormChart::build(&inst)?;
    let frame = ConeFrame::of(&inst);
    let pairs = section_pairs(&inst, &chart, sample_count, seed)?;
    let mut params = ConeSpec::default();
    if frame.nv > 0 {
        params.k1_uu = Some(1.0);
        params.k2_uu = Some(1.0);
    } else {
        params.k1_uu = None;
        params.k2_uu = None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00f1_7c0d);
    let kinds = active_kinds(frame.nv);
    let fractions = [1.0, 0.6, 0.0];
    for _sweep in 0..3 {
        for &kind in &kinds {
            let mut points: Vec<(f64, f64)> = Vec::new();
            for pair in &pairs {
                let lu = pair.jac.clone().lu();
                for &f in &fractions {
                    let (y_at, carried) = if kind.forward() {
                        let v =
                            cone_test_vector(&mut rng, kind, &params, &frame, pair.m_chart[1].abs(), f);
                        (pair.img_chart[1].abs(), Some(&pair.jac * &v))
                    } else {
                        let v = cone_test_vector(
                            &mut rng,
                            kind,
                            &params,
                            &frame,
                            pair.img_chart[1].abs(),
                            f,
                        );
                        (pair.m_chart[1].abs(), lu.solve(&v))
                    };
                    if let Some(tv) = carried {
                        let (core, trans) = split_measures(kind, &tv, frame.nu, frame.nv);
                        if core > 1e-12 * trans.max(f64::MIN_POSITIVE) {
                            points.push((y_at, trans / core));
                        }
                    }
                }
            }
            if points.is_empty() {
                return Err(HcError::InsufficientSamples(format!(
                    "no usable requirement points for the {} cone",
                    kind.label()
                )));
            }
            let basis = match kind {
                ConeKind::CenterStable | ConeKind::CenterUnstable => frame.lambda_k,
                ConeKind::StrongStable => 1.0,
                ConeKind::StrongUnstable => frame.ratio_uu,
            };
            let (k1, k2) = envelope_fit(&points, basis);
            match kind {
                ConeKind::CenterStable => {
                    params.k1_cs = 1.3 * k1;
                    params.k2_cs = 1.3 * k2;
                }
                ConeKind::StrongStable => {
                    params.k1_ss = 1.3 * k1;
                    params.k2_ss = 1.3 * k2;
                }
                ConeKind::CenterUnstable => {
                    params.k1_cu = 1.3 * k1;
                    params.k2_cu = 1.3 * k2;
                }
                ConeKind::StrongUnstable => {
                    params.k1_uu = Some(1.3 * k1);
                    params.k2_uu = Some(1.3 * k2);
                    let req_max = points.iter().fold(0.0f64, |a, p| a.max(p.1));
                    params.k_uu = 1.3 * req_max;
                }
            }
        }
    }
    // Forward contraction constant on vectors of the fitted strong stable
    // cone.
    let mut ratio_max: f64 = 0.0;
    for pair in &pairs {
        for &f in &[0.97, 0.5, 0.0] {
            let v = cone_test_vector(
                &mut rng,
                ConeKind::StrongStable,
                &params,
                &frame,
                pair.m_chart[1].abs(),
                f,
            );
            let img = &pair.jac * &v;
            let w0 = v.rows(2, 1 + frame.nu).norm();
            let w1 = img.rows(2, 1 + frame.nu).norm();
            ratio_max = ratio_max.max(w1 / (frame.lambda_k * w0));
        }
    }
    params.contraction_c = 1.3 * ratio_max;
    params.k0 = instance.k;
    Ok(params)
}

/// Scan return lengths upward and report the first one at which the given
/// constants verify with zero violations; the trail records the violation
/// count per scanned length (`None` when no verdict could be formed).
pub fn certify_k0(
    model: &Model,
    params: &ConeSpec,
    t: f64,
    sample_count: usize,
    seed: u64,
    k_max: u32,
) -> Result<(u32, Vec<(u32, Option<usize>)>)> {
    let mut trail = Vec::new();
    for k in 1..=k_max {
        let omega = match asymptotics::nearest_gap_zero(model, k, 1.0) {
            Ok((w, _)) => w,
            Err(_) => {
                trail.push((k, None));
                continue;
            }
        };
        let mu = asymptotics::predict_cycle_quantities_at(model, k, t, omega)
            .ok()
            .and_then(|b| b.cycle.map(|c| c.mu_pred))
            .unwrap_or(0.0);
        let inst = match Instance::new(model, k, mu, omega) {
            Ok(i) => i,
            Err(_) => {
                trail.push((k, None));
                continue;
            }
        };
        match verify_cone_invariance(&inst, params, sample_count, seed) {
            Ok(rep) => {
                let v = rep.total_violations();
                trail.push((k, Some(v)));
                if v == 0 {
                    return Ok((k, trail));
                }
            }
            Err(HcError::InsufficientSamples(_)) => trail.push((k, None)),
            Err(e) => return Err(e),
        }
    }
    Err(HcError::GenericityFailed(format!(
        "cone constants did not certify at any return length up to {k_max}"
    )))
}

// ---------------------------------------------------------------------------
// Polynomial graph transform
// ---------------------------------------------------------------------------

/// A polynomial graph `out = C1 * s + h(s)` over the coordinates `in_idx`,
/// with `h` holding the degree >= 2 terms.
#[derive(Debug, Clone)]
pub struct GraphPoly {
    pub in_idx: Vec<usize>,
    pub out_idx: Vec<usize>,
    pub c1: DMatrix<f64>,
    pub higher: Vec<Poly>,
    pub order: usize,
}

impl GraphPoly {
    /// Graph value (offsets of the out coordinates) at in-offsets `s`.
    pub fn value(&self, s: &[f64]) -> DVector<f64> {
        let sv = DVector::from_row_slice(s);
        let mut out = &self.c1 * sv;
        for (r, poly) in self.higher.iter().enumerate() {
            out[r] += poly.eval(s);
        }
        out
    }

    /// Full-space point of the graph at in-offsets `s` from `base`.
    pub fn embed(&self, base: &DVector<f64>, s: &[f64]) -> DVector<f64> {
        let mut x = base.clone();
        for (j, &i) in self.in_idx.iter().enumerate() {
            x[i] += s[j];
        }
        let val = self.value(s);
        for (j, &o) in self.out_idx.iter().enumerate() {
            x[o] += val[j];
        }
        x
    }

    /// Spectral norm of the linear part.
    pub fn c1_norm(&self) -> f64 {
        self.c1
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(0.0f64, |a, &b| a.max(b))
    }
}

/// All exponent tuples of length `m` with total degree `p`.
fn monomials_of_degree(m: usize, p: usize) -> Vec<Vec<u8>> {
    fn rec(i: usize, rem: u8, cur: &mut Vec<u8>, m: usize, out: &mut Vec<Vec<u8>>) {
        if i + 1 == m {
            cur[i] = rem;
            out.push(cur.clone());
            return;
        }
        for e in (0..=rem).rev() {
            cur[i] = e;
            rec(i + 1, rem - e, cur, m, out);
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0u8; m];
    rec(0, p as u8, &mut cur, m, &mut out);
    out
}

fn monomial_eval(u: &[f64], alpha: &[u8]) -> f64 {
    alpha
        .iter()
        .enumerate()
        .fold(1.0, |acc, (i, &e)| acc * u[i].powi(e as i32))
}

fn monomial_poly(m: usize, alpha: &[u8]) -> Result<Poly> {
    Poly::from_terms(m, &[(alpha.to_vec(), 1.0)])
}

/// Linear polynomials for the rows of a matrix (for composition).
fn linear_polys(a: &DMatrix<f64>) -> Result<Vec<Poly>> {
    let m = a.ncols();
    (0..a.nrows())
        .map(|i| {
            let terms: Vec<(Vec<u8>, f64)> = (0..m)
                .map(|j| {
                    let mut e = vec![0u8; m];
                    e[j] = 1;
                    (e, a[(i, j)])
                })
                .collect();
            Poly::from_terms(m, &terms)
        })
        .collect()
}

/// Compute a polynomial graph of the invariant manifold of `map` (fixed
/// point at the origin, differential `jac`) tangent to the real invariant
/// subspace of the selected eigenvalues, order by order: the degree-p
/// coefficients solve the homological system
/// `N h_p(s) - h_p(A s) = -D_p(s)` where `D_p` is the degree-p defect of the
/// lower-order truncation, extracted by parity-filtered sampling at radius
/// `rho`.
pub fn graph_from_map<F>(
    map: &F,
    jac: &DMatrix<f64>,
    select: &[Complex<f64>],
    in_idx: &[usize],
    out_idx: &[usize],
    order: usize,
    rho: f64,
) -> Result<GraphPoly>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let m = in_idx.len();
    let n_out = out_idx.len();
    let dim = jac.nrows();
    if m + n_out != dim {
        return Err(HcError::Config(
            "graph coordinate split must cover all coordinates exactly once".into(),
        ));
    }
    let basis = linalg::real_invariant_basis(jac, select)?;
    if basis.ncols() != m {
        return Err(HcError::SpectralSplitFailure(format!(
            "selected invariant span has dimension {}, expected {m}",
            basis.ncols()
        )));
    }
    let pick = |rows: &[usize]| DMatrix::from_fn(rows.len(), m, |i, j| basis[(rows[i], j)]);
    let b_in = pick(in_idx);
    let b_out = pick(out_idx);
    let c1 = &b_out
        * b_in.try_inverse().ok_or_else(|| {
            HcError::SpectralSplitFailure(
                "tangent space is vertical over the chosen graph coordinates".into(),
            )
        })?;
    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| jac[(rows[i], cols[j])])
    };
    let j_ii = sub(in_idx, in_idx);
    let j_io = sub(in_idx, out_idx);
    let j_oi = sub(out_idx, in_idx);
    let j_oo = sub(out_idx, out_idx);
    let a_mat = &j_ii + &j_io * &c1;
    let n_mat = &j_oo - &c1 * &j_io;
    // Exact linear defect of the computed tangent (numerically tiny); it is
    // subtracted so it cannot pollute higher-degree extraction.
    let lin_defect = &j_oi + &j_oo * &c1 - &c1 * &a_mat;

    let mut higher: Vec<Poly> = vec![Poly::zero(m); n_out];
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d61_6e69_666f_6c64);
    for p in 2..=order {
        let alphas = monomials_of_degree(m, p);
        let mp = alphas.len();
        let index_of: HashMap<Vec<u8>, usize> =
            alphas.iter().cloned().zip(0..).collect();
        let defect = |s: &DVector<f64>| -> Result<DVector<f64>> {
            let mut xi = DVector::zeros(dim);
            for (j, &i) in in_idx.iter().enumerate() {
                xi[i] = s[j];
            }
            let mut oval = &c1 * s;
            for (r, poly) in higher.iter().enumerate() {
                oval[r] += poly.eval(s.as_slice());
            }
            for (j, &o) in out_idx.iter().enumerate() {
                xi[o] = oval[j];
            }
            let eta = map(&xi)?;
            let ibar = DVector::from_iterator(m, in_idx.iter().map(|&i| eta[i]));
            let obar = DVector::from_iterator(n_out, out_idx.iter().map(|&o| eta[o]));
            let mut res = obar - &c1 * &ibar - &lin_defect * s;
            for (r, poly) in higher.iter().enumerate() {
                res[r] -= poly.eval(ibar.as_slice());
            }
            Ok(res)
        };
        let ndir = 3 * mp + 6;
        let parity = if p % 2 == 0 { 1.0 } else { -1.0 };
        let mut vand = DMatrix::zeros(ndir, mp);
        let mut dvals = DMatrix::zeros(ndir, n_out);
        for j in 0..ndir {
            let u = unit_direction(&mut rng, m);
            let plus = defect(&(rho * &u))?;
            let minus = defect(&(-rho * &u))?;
            let filtered = (plus + parity * minus) / (2.0 * rho.powi(p as i32));
            for (aidx, alpha) in alphas.iter().enumerate() {
                vand[(j, aidx)] = monomial_eval(u.as_slice(), alpha);
            }
            for r in 0..n_out {
                dvals[(j, r)] = filtered[r];
            }
        }
        let svd = vand.svd(true, true);
        let mut dcoef = DMatrix::zeros(n_out, mp);
        for r in 0..n_out {
            let rhs = dvals.column(r).into_owned();
            let sol = svd.solve(&rhs, 1e-13).map_err(|e| {
                HcError::SpectralSplitFailure(format!("defect projection failed: {e}"))
            })?;
            for aidx in 0..mp {
                dcoef[(r, aidx)] = sol[aidx];
            }
        }
        let inner = linear_polys(&a_mat)?;
        let composed: Vec<Poly> = alphas
            .iter()
            .map(|a| Ok(monomial_poly(m, a)?.compose_trunc(&inner, p)))
            .collect::<Result<Vec<_>>>()?;
        let sz = n_out * mp;
        let mut lmat = DMatrix::zeros(sz, sz);
        let mut rhs = DVector::zeros(sz);
        for r in 0..n_out {
            for aidx in 0..mp {
                let col = r * mp + aidx;
                for r2 in 0..n_out {
                    lmat[(r2 * mp + aidx, col)] += n_mat[(r2, r)];
                }
                for (beta, cb) in composed[aidx].terms() {
                    let bidx = index_of[beta];
                    lmat[(r * mp + bidx, col)] -= cb;
                }
                rhs[r * mp + aidx] = -dcoef[(r, aidx)];
            }
        }
        let sol = lmat.lu().solve(&rhs).ok_or_else(|| {
            HcError::SpectralSplitFailure(format!(
                "homological operator singular at degree {p} (resonance)"
            ))
        })?;
        for r in 0..n_out {
            let terms: Vec<(Vec<u8>, f64)> = alphas
                .iter()
                .enumerate()
                .map(|(aidx, a)| (a.clone(), sol[r * mp + aidx]))
                .collect();
            higher[r] = higher[r].add(&Poly::from_terms(m, &terms)?);
        }
    }
    Ok(GraphPoly {
        in_idx: in_idx.to_vec(),
        out_idx: out_idx.to_vec(),
        c1,
        higher,
        order,
    })
}

/// Drop the negative-imaginary member of each conjugate pair.
fn dedup_conjugates(eigs: &[Complex<f64>], tol: f64) -> Vec<Complex<f64>> {
    eigs.iter().copied().filter(|e| e.im >= -tol).collect()
}

/// Worst invariance defect of a graph under `map` over random samples in a
/// ball of the given radius.
fn graph_residual<F>(
    graph: &GraphPoly,
    map: &F,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let m = graph.in_idx.len();
    let dim = m + graph.out_idx.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..samples {
        let u = unit_direction(&mut rng, m);
        let scale = radius * ((i % 8) + 1) as f64 / 8.0;
        let s = scale * u;
        let mut xi = DVector::zeros(dim);
        for (j, &ii) in graph.in_idx.iter().enumerate() {
            xi[ii] = s[j];
        }
        let val = graph.value(s.as_slice());
        for (j, &oo) in graph.out_idx.iter().enumerate() {
            xi[oo] = val[j];
        }
        let eta = map(&xi)?;
        let ibar: Vec<f64> = graph.in_idx.iter().map(|&ii| eta[ii]).collect();
        let expect = graph.value(&ibar);
        for (j, &oo) in graph.out_idx.iter().enumerate() {
            worst = worst.max((eta[oo] - expect[j]).abs());
        }
    }
    Ok(worst)
}

/// Stable graph of the conjugated return map at the certified point: inputs
/// are the W block, outputs are (Z, Y, V).
pub(crate) fn stable_graph(
    inst: &Instance,
    chart: &NormalFormChart,
    q_chart: &DVector<f64>,
    jac0: &DMatrix<f64>,
    order: usize,
) -> Result<GraphPoly> {
    let l = inst.layout();
    let (nu, nv) = (l.nu, l.nv);
    let m = 1 + nu;
    let in_idx: Vec<usize> = (2..3 + nu).collect();
    let out_idx: Vec<usize> = [vec![0usize, 1], (3 + nu..3 + nu + nv).collect()].concat();
    let eigs = linalg::eigenvalues_sorted(jac0);
    let scale = eigs.first().map(|e| e.norm()).unwrap_or(1.0);
    let inside: Vec<Complex<f64>> = eigs.iter().copied().filter(|e| e.norm() < 1.0).collect();
    if inside.len() != m {
        return Err(HcError::SpectralSplitFailure(format!(
            "{} contracting multipliers, expected {m}",
            inside.len()
        )));
    }
    let select = dedup_conjugates(&inside, 1e-9 * (1.0 + scale));
    let map = |xi: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(chart.conjugated_return_map(inst, &(q_chart + xi))? - q_chart)
    };
    graph_from_map(&map, jac0, &select, &in_idx, &out_idx, order, 1e-3)
}

/// Two-dimensional invariant surface tangent to the central multiplier pair
/// of the certificate: inputs (Z, Y), outputs the rest, order 2.
pub(crate) fn central_surface(
    inst: &Instance,
    chart: &NormalFormChart,
    q_chart: &DVector<f64>,
    jac0: &DMatrix<f64>,
    cert: &FixedPointCert,
) -> Result<GraphPoly> {
    let dim = chart.dim();
    let in_idx = vec![0usize, 1];
    let out_idx: Vec<usize> = (2..dim).collect();
    let eigs = linalg::eigenvalues_sorted(jac0);
    let (i, j) = crate::solvers::central_pair(&eigs, (cert.nu1_c(), cert.nu2_c()))?;
    let scale = eigs.first().map(|e| e.norm()).unwrap_or(1.0);
    let tol = 1e-9 * (1.0 + scale);
    let conj_pair = eigs[i].im.abs() > tol && (eigs[i].im + eigs[j].im).abs() <= tol;
    let mut select = vec![if eigs[i].im >= 0.0 { eigs[i] } else { eigs[j] }];
    if !conj_pair {
        select = vec![eigs[i], eigs[j]];
    }
    let map = |xi: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(chart.conjugated_return_map(inst, &(q_chart + xi))? - q_chart)
    };
    graph_from_map(&map, jac0, &select, &in_idx, &out_idx, 2, 1e-3)
}

// ---------------------------------------------------------------------------
// Manifold certificates
// ---------------------------------------------------------------------------

/// Serializable manifold description: the polynomial graph (split into its
/// linear part and higher-order monomials), the validation residual, and a
/// polyline of iterated points for plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifoldGraph {
    pub which: String,
    pub order: usize,
    pub base_point: Vec<f64>,
    pub base_point_chart: Vec<f64>,
    pub in_idx: Vec<usize>,
    pub out_idx: Vec<usize>,
    pub linear: Vec<Vec<f64>>,
    pub monomials: Vec<Vec<u8>>,
    pub coefficients: Vec<Vec<f64>>,
    pub domain_radius: f64,
    /// Max invariance defect over validation samples inside the domain.
    pub residual: f64,
    /// For the stable graph: `‖C1‖ / lambda^k` (the fitted constant of the
    /// derivative bound). For the unstable graph: a C1-norm estimate of the
    /// graph function over its domain.
    pub deriv_bound_c: f64,
    pub forward_monotone: bool,
    pub polyline: Vec<Vec<f64>>,
    #[serde(skip)]
    pub graph: Option<GraphPoly>,
}

impl ManifoldGraph {
    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        which: &str,
        graph: GraphPoly,
        q_phase: &PhasePoint,
        q_chart: &DVector<f64>,
        domain_radius: f64,
        residual: f64,
        deriv_bound_c: f64,
        forward_monotone: bool,
        polyline: Vec<Vec<f64>>,
    ) -> ManifoldGraph {
        let mut monomials: Vec<Vec<u8>> = Vec::new();
        for poly in &graph.higher {
            for (e, _) in poly.terms() {
                if !monomials.iter().any(|m| m.as_slice() == e) {
                    monomials.push(e.to_vec());
                }
            }
        }
        monomials.sort();
        let coefficients: Vec<Vec<f64>> = graph
            .higher
            .iter()
            .map(|p| monomials.iter().map(|e| p.coeff(e)).collect())
            .collect();
        let linear: Vec<Vec<f64>> = (0..graph.c1.nrows())
            .map(|r| (0..graph.c1.ncols()).map(|c| graph.c1[(r, c)]).collect())
            .collect();
        ManifoldGraph {
            which: which.to_string(),
            order: graph.order,
            base_point: q_phase.iter().copied().collect(),
            base_point_chart: q_chart.iter().copied().collect(),
            in_idx: graph.in_idx.clone(),
            out_idx: graph.out_idx.clone(),
            linear,
            monomials,
            coefficients,
            domain_radius,
            residual,
            deriv_bound_c,
            forward_monotone,
            polyline,
            graph: Some(graph),
        }
    }

    /// One row per polyline point.
    pub fn write_csv<W: IoWrite>(&self, w: &mut W) -> Result<()> {
        let dim = self.base_point.len();
        write!(w, "point")?;
        for i in 0..dim {
            write!(w, ",c{i}")?;
        }
        writeln!(w)?;
        for (i, p) in self.polyline.iter().enumerate() {
            write!(w, "{i}")?;
            for x in p {
                write!(w, ",{x:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn to_vec_f(p: &PhasePoint) -> Vec<f64> {
    p.iter().copied().collect()
}

/// Validation radius of the polynomial graphs, as a fraction of the section
/// half-width.
const GRAPH_RADIUS_FACTOR: f64 = 0.1;

/// Local stable manifold of the certified fixed point: polynomial graph over
/// the W block up to `order`, validated by its invariance defect and by
/// monotone forward convergence of sampled orbits, then extended by
/// `steps` backward fundamental-domain steps per tangent ray.
pub fn stable_manifold_q(
    instance: &Instance,
    cert: &FixedPointCert,
    order: usize,
    steps: usize,
) -> Result<ManifoldGraph> {
    let inst = instance.clone().with_policy(DomainPolicy::Ignore);
    let l = inst.layout();
    let stable_dim = 1 + l.nu;
    if cert.inside_count != stable_dim {
        return Err(HcError::SpectralSplitFailure(format!(
            "certificate carries {} contracting multipliers, expected {stable_dim}",
            cert.inside_count
        )));
    }
    let chart = NormalFormChart::build(&inst)?;
    let q_phase = cert.q();
    let q_chart = chart.to_chart(&q_phase);
    let jac0 = chart.conjugated_jacobian(&inst, &q_chart)?;
    let graph = stable_graph(&inst, &chart, &q_chart, &jac0, order)?;
    let r_dom = GRAPH_RADIUS_FACTOR * inst.delta();
    let map = |xi: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(chart.conjugated_return_map(&inst, &(&q_chart + xi))? - &q_chart)
    };
    let residual = graph_residual(&graph, &map, r_dom, 64, 0x57ab_1e01)?;
    // Monotone forward convergence of sampled graph orbits (one transient
    // step allowed).
    let m = graph.in_idx.len();
    let mut forward_monotone = true;
    let mut rng = ChaCha8Rng::seed_from_u64(0x57ab_1e02);
    for _ in 0..8 {
        let u = unit_direction(&mut rng, m);
        let s: Vec<f64> = (0..m).map(|j| r_dom * u[j]).collect();
        let mut p = chart.from_chart(&graph.embed(&q_chart, &s))?;
        let mut dists = Vec::new();
        for _ in 0..6 {
            p = inst.return_map(&p)?;
            dists.push((&p - &q_phase).norm());
        }
        if !dists.windows(2).skip(1).all(|w| w[1] < w[0]) {
            forward_monotone = false;
        }
    }
    let deriv_bound_c = graph.c1_norm() / chart.lambda_k();
    // Backward continuation along each tangent ray.
    let entry = inst.germ().entry_base();
    let escape_bound = 1.5 * inst.delta();
    let mut polyline: Vec<Vec<f64>> = Vec::new();
    for j in 0..m {
        for sgn in [1.0f64, -1.0] {
            let mut s = vec![0.0; m];
            s[j] = sgn * r_dom;
            let mut prev = chart.from_chart(&graph.embed(&q_chart, &s))?;
            let mut older: Option<PhasePoint> = None;
            polyline.push(to_vec_f(&prev));
            for _ in 0..steps {
                let seed = match &older {
                    Some(o) => &prev + (&prev - o),
                    None => prev.clone(),
                };
                let sol = newton::invert(
                    |x| inst.return_map(x),
                    |x| inst.jacobian(x),
                    &prev,
                    &seed,
                    NewtonOptions::default(),
                )?;
                older = Some(prev.clone());
                prev = sol.x;
                polyline.push(to_vec_f(&prev));
                if (&prev - &entry).amax() > escape_bound {
                    break;
                }
            }
        }
    }
    Ok(ManifoldGraph::from_parts(
        "stable",
        graph,
        &q_phase,
        &q_chart,
        r_dom,
        residual,
        deriv_bound_c,
        forward_monotone,
        polyline,
    ))
}

/// Escape-and-growth summary of the iterated central disc.
#[derive(Debug, Clone, Serialize)]
pub struct EscapeReport {
    pub escaped: bool,
    pub escape_iterate: Option<usize>,
    /// `ceil(log(delta^2 / r0) / log |lambda gamma|^k) + 3`.
    pub bound: usize,
    pub growth_factors: Vec<f64>,
    pub min_growth: f64,
    /// Projected (Z, Y)-areas per iterate, starting with the seed disc.
    pub areas: Vec<f64>,
    pub final_live: usize,
    pub r0: f64,
    pub mesh_size: usize,
}

/// Local unstable manifold of the certified fixed point: full polynomial
/// graph over (Z, Y, V), plus a meshed central disc iterated forward until
/// its image meets the section boundary `|Y| = delta^2`, with per-iterate
/// projected-area growth factors.
pub fn unstable_manifold_q(
    instance: &Instance,
    cert: &FixedPointCert,
    mesh_size: usize,
    max_iters: usize,
) -> Result<(ManifoldGraph, EscapeReport)> {
    let inst = instance.clone().with_policy(DomainPolicy::Ignore);
    let l = inst.layout();
    let expected = l.dcu + l.nv + 1;
    if cert.index != expected {
        return Err(HcError::WrongIndex {
            expected,
            found: cert.index,
            context: "unstable manifold of the certified point".into(),
        });
    }
    let chart = NormalFormChart::build(&inst)?;
    let q_phase = cert.q();
    let q_chart = chart.to_chart(&q_phase);
    let jac0 = chart.conjugated_jacobian(&inst, &q_chart)?;
    let dim = chart.dim();
    let nu = l.nu;
    let in_idx: Vec<usize> = [vec![0usize, 1], (3 + nu..dim).collect()].concat();
    let out_idx: Vec<usize> = (2..3 + nu).collect();
    let eigs = linalg::eigenvalues_sorted(&jac0);
    let scale = eigs.first().map(|e| e.norm()).unwrap_or(1.0);
    let outside: Vec<Complex<f64>> = eigs.iter().copied().filter(|e| e.norm() > 1.0).collect();
    if outside.len() != expected {
        return Err(HcError::SpectralSplitFailure(format!(
            "{} expanding multipliers, expected {expected}",
            outside.len()
        )));
    }
    let select = dedup_conjugates(&outside, 1e-9 * (1.0 + scale));
    let map = |xi: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(chart.conjugated_return_map(&inst, &(&q_chart + xi))? - &q_chart)
    };
    let graph = graph_from_map(&map, &jac0, &select, &in_idx, &out_idx, 2, 1e-3)?;
    let delta2 = inst.delta() * inst.delta();
    let r_dom = 0.5 * delta2;
    let residual = graph_residual(&graph, &map, r_dom, 64, 0x57ab_1e03)?;
    // Forward separation of sampled graph orbits.
    let mut forward_monotone = true;
    let mut rng = ChaCha8Rng::seed_from_u64(0x57ab_1e04);
    let mg = graph.in_idx.len();
    for _ in 0..6 {
        let u = unit_direction(&mut rng, mg);
        let s: Vec<f64> = (0..mg).map(|j| r_dom * u[j]).collect();
        let mut p = chart.from_chart(&graph.embed(&q_chart, &s))?;
        let mut dists = Vec::new();
        for _ in 0..3 {
            p = inst.return_map(&p)?;
            dists.push((&p - &q_phase).norm());
        }
        if !dists.windows(2).all(|w| w[1] > w[0]) {
            forward_monotone = false;
        }
    }
    // C1-norm estimate of the graph function over its domain.
    let mut grad_bound = 0.0f64;
    for poly in &graph.higher {
        for (e, c) in poly.terms() {
            let deg: usize = e.iter().map(|&x| x as usize).sum();
            if deg >= 1 {
                grad_bound += c.abs() * deg as f64 * r_dom.powi(deg as i32 - 1);
            }
        }
    }
    let deriv_bound_c = graph.c1_norm() + grad_bound;

    // Central disc, meshed and iterated until escape.
    let central = central_surface(&inst, &chart, &q_chart, &jac0, cert)?;
    let chart_ref = &chart;
    let q_ref = &q_chart;
    let central_ref = &central;
    let inst_ref = &inst;
    let embed = move |par: &[f64; 2]| -> Result<PhasePoint> {
        chart_ref.from_chart(&central_ref.embed(q_ref, &par[..]))
    };
    let step = move |p: &PhasePoint| -> Result<PhasePoint> { inst_ref.return_map(p) };
    let r0 = delta2 / 10.0;
    let rings = (mesh_size / 4).clamp(3, 16);
    let mut mesh = CentralMesh::new(embed, step, r0, rings, mesh_size.max(8), 40_000)?;
    let project = |p: &PhasePoint| -> [f64; 2] {
        let c = chart.to_chart(p);
        [c[0], c[1]]
    };
    let mut areas = vec![mesh_area(&mesh, &project)];
    let mut escape_iterate = None;
    for i in 1..=max_iters {
        let live = mesh.advance()?;
        if live < 3 {
            return Err(HcError::MeshCollapse(format!(
                "{live} live vertices at iterate {i}"
            )));
        }
        areas.push(mesh_area(&mesh, &project));
        let hit = mesh
            .verts
            .iter()
            .filter(|v| v.alive)
            .any(|v| chart.to_chart(&v.phase)[1].abs() >= delta2);
        if hit {
            escape_iterate = Some(i);
            break;
        }
    }
    let lg = (inst.local().lambda() * inst.local().gamma()).abs().powi(inst.k as i32);
    let bound = ((delta2 / r0).ln() / lg.ln()).ceil() as usize + 3;
    let growth_factors: Vec<f64> = areas.windows(2).map(|w| w[1] / w[0]).collect();
    let min_growth = growth_factors
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let final_live = mesh.verts.iter().filter(|v| v.alive).count();
    let live_pts: Vec<Vec<f64>> = mesh
        .verts
        .iter()
        .filter(|v| v.alive)
        .map(|v| to_vec_f(&v.phase))
        .collect();
    let stride = (live_pts.len() / 512).max(1);
    let polyline: Vec<Vec<f64>> = live_pts.into_iter().step_by(stride).collect();
    let report = EscapeReport {
        escaped: escape_iterate.is_some(),
        escape_iterate,
        bound,
        growth_factors,
        min_growth,
        areas,
        final_live,
        r0,
        mesh_size,
    };
    let manifold = ManifoldGraph::from_parts(
        "unstable",
        graph,
        &q_phase,
        &q_chart,
        r_dom,
        residual,
        deriv_bound_c,
        forward_monotone,
        polyline,
    );
    Ok((manifold, report))
}

// ---------------------------------------------------------------------------
// Central mesh
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MeshVert {
    pub param: [f64; 2],
    pub phase: PhasePoint,
    pub alive: bool,
}

/// A triangle mesh over a two-parameter disc, embedded into phase space and
/// pushed forward step by step. Vertices that leave the map's domain (or go
/// non-finite) die; overstretched triangles are split, with new vertices
/// re-embedded from their disc parameters and replayed to the current
/// iterate so the mesh stays an exact sample of the iterated disc.
pub struct CentralMesh<E, S> {
    embed: E,
    step: S,
    pub verts: Vec<MeshVert>,
    pub tris: Vec<[usize; 3]>,
    pub iterate: usize,
    cap: usize,
}

fn eval_from<E, S>(embed: &E, step: &S, par: &[f64; 2], iters: usize) -> Result<PhasePoint>
where
    E: Fn(&[f64; 2]) -> Result<PhasePoint>,
    S: Fn(&PhasePoint) -> Result<PhasePoint>,
{
    let mut p = embed(par)?;
    for _ in 0..iters {
        p = step(&p)?;
    }
    Ok(p)
}

impl<E, S> CentralMesh<E, S>
where
    E: Fn(&[f64; 2]) -> Result<PhasePoint>,
    S: Fn(&PhasePoint) -> Result<PhasePoint>,
{
    pub fn new(embed: E, step: S, r0: f64, rings: usize, sectors: usize, cap: usize) -> Result<Self> {
        if rings < 1 || sectors < 3 {
            return Err(HcError::Config(
                "mesh needs at least one ring and three sectors".into(),
            ));
        }
        let mut verts = Vec::with_capacity(1 + rings * sectors);
        verts.push(MeshVert {
            param: [0.0, 0.0],
            phase: embed(&[0.0, 0.0])?,
            alive: true,
        });
        for ring in 1..=rings {
            let r = r0 * ring as f64 / rings as f64;
            for s in 0..sectors {
                let th = 2.0 * std::f64::consts::PI * s as f64 / sectors as f64;
                let par = [r * th.cos(), r * th.sin()];
                let phase = embed(&par)?;
                verts.push(MeshVert {
                    param: par,
                    phase,
                    alive: true,
                });
            }
        }
        let idx = |ring: usize, s: usize| -> usize {
            if ring == 0 {
                0
            } else {
                1 + (ring - 1) * sectors + (s % sectors)
            }
        };
        let mut tris = Vec::new();
        for s in 0..sectors {
            tris.push([0, idx(1, s), idx(1, s + 1)]);
        }
        for ring in 1..rings {
            for s in 0..sectors {
                let a = idx(ring, s);
                let b = idx(ring, s + 1);
                let c = idx(ring + 1, s);
                let d = idx(ring + 1, s + 1);
                tris.push([a, c, d]);
                tris.push([a, d, b]);
            }
        }
        Ok(CentralMesh {
            embed,
            step,
            verts,
            tris,
            iterate: 0,
            cap,
        })
    }

    /// Re-embed a disc parameter and replay `iters` forward steps.
    pub fn eval(&self, par: &[f64; 2], iters: usize) -> Result<PhasePoint> {
        eval_from(&self.embed, &self.step, par, iters)
    }

    /// Push every live vertex one step forward, refine overstretched
    /// triangles, and return the live vertex count.
    pub fn advance(&mut self) -> Result<usize> {
        self.iterate += 1;
        for v in self.verts.iter_mut().filter(|v| v.alive) {
            match (self.step)(&v.phase) {
                Ok(p) if p.iter().all(|x| x.is_finite()) => v.phase = p,
                _ => v.alive = false,
            }
        }
        self.refine();
        let live = self.verts.iter().filter(|v| v.alive).count();
        if live == 0 {
            return Err(HcError::MeshCollapse(format!(
                "no live vertices after iterate {}",
                self.iterate
            )));
        }
        Ok(live)
    }

    /// Diagonal of the live bounding box, the scale stretched edges are
    /// measured against.
    fn live_extent(&self) -> f64 {
        let mut lo: Option<DVector<f64>> = None;
        let mut hi: Option<DVector<f64>> = None;
        for v in self.verts.iter().filter(|v| v.alive) {
            match (&mut lo, &mut hi) {
                (Some(l), Some(h)) => {
                    for i in 0..v.phase.len() {
                        l[i] = l[i].min(v.phase[i]);
                        h[i] = h[i].max(v.phase[i]);
                    }
                }
                _ => {
                    lo = Some(v.phase.clone());
                    hi = Some(v.phase.clone());
                }
            }
        }
        match (lo, hi) {
            (Some(l), Some(h)) => (h - l).norm(),
            _ => 0.0,
        }
    }

    fn refine(&mut self) {
        for _pass in 0..8 {
            if self.verts.len() >= self.cap {
                break;
            }
            let extent = self.live_extent();
            if extent <= 0.0 {
                break;
            }
            let threshold = extent / 15.0;
            let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next: Vec<[usize; 3]> = Vec::new();
            let mut split_any = false;
            let tris = std::mem::take(&mut self.tris);
            for t in tris {
                let alive =
                    self.verts[t[0]].alive && self.verts[t[1]].alive && self.verts[t[2]].alive;
                if !alive || self.verts.len() + 3 > self.cap {
                    next.push(t);
                    continue;
                }
                let elen = |a: usize, b: usize| (&self.verts[a].phase - &self.verts[b].phase).norm();
                // Rotate so the split patterns below see a canonical edge
                // order.
                let mut tri = t;
                let mut long = [
                    elen(tri[0], tri[1]) > threshold,
                    elen(tri[1], tri[2]) > threshold,
                    elen(tri[2], tri[0]) > threshold,
                ];
                let count = long.iter().filter(|&&b| b).count();
                if count == 0 {
                    next.push(tri);
                    continue;
                }
                split_any = true;
                let rotate = |tri: &mut [usize; 3], long: &mut [bool; 3]| {
                    *tri = [tri[1], tri[2], tri[0]];
                    *long = [long[1], long[2], long[0]];
                };
                match count {
                    1 => {
                        // Canonical: the long edge is (0, 1).
                        while !long[0] {
                            rotate(&mut tri, &mut long);
                        }
                        let m01 = self.midpoint(&mut cache, tri[0], tri[1]);
                        next.push([tri[0], m01, tri[2]]);
                        next.push([m01, tri[1], tri[2]]);
                    }
                    2 => {
                        // Canonical: the short edge is (2, 0).
                        while long[2] {
                            rotate(&mut tri, &mut long);
                        }
                        let m01 = self.midpoint(&mut cache, tri[0], tri[1]);
                        let m12 = self.midpoint(&mut cache, tri[1], tri[2]);
                        next.push([m01, tri[1], m12]);
                        next.push([tri[0], m01, m12]);
                        next.push([tri[0], m12, tri[2]]);
                    }
                    _ => {
                        let m01 = self.midpoint(&mut cache, tri[0], tri[1]);
                        let m12 = self.midpoint(&mut cache, tri[1], tri[2]);
                        let m20 = self.midpoint(&mut cache, tri[2], tri[0]);
                        next.push([tri[0], m01, m20]);
                        next.push([m01, tri[1], m12]);
                        next.push([m20, m12, tri[2]]);
                        next.push([m01, m12, m20]);
                    }
                }
            }
            self.tris = next;
            if !split_any {
                break;
            }
        }
    }

    fn midpoint(&mut self, cache: &mut HashMap<(usize, usize), usize>, a: usize, b: usize) -> usize {
        let key = (a.min(b), a.max(b));
        if let Some(&m) = cache.get(&key) {
            return m;
        }
        let pa = self.verts[a].param;
        let pb = self.verts[b].param;
        let pm = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
        let (phase, alive) = match eval_from(&self.embed, &self.step, &pm, self.iterate) {
            Ok(p) if p.iter().all(|x| x.is_finite()) => (p, true),
            _ => (
                (&self.verts[a].phase + &self.verts[b].phase) / 2.0,
                false,
            ),
        };
        self.verts.push(MeshVert {
            param: pm,
            phase,
            alive,
        });
        let m = self.verts.len() - 1;
        cache.insert(key, m);
        m
    }
}

/// Total projected area of the live triangles under a two-coordinate
/// projection.
pub fn mesh_area<E, S, P>(mesh: &CentralMesh<E, S>, project: &P) -> f64
where
    E: Fn(&[f64; 2]) -> Result<PhasePoint>,
    S: Fn(&PhasePoint) -> Result<PhasePoint>,
    P: Fn(&PhasePoint) -> [f64; 2],
{
    let proj: Vec<Option<[f64; 2]>> = mesh
        .verts
        .iter()
        .map(|v| if v.alive { Some(project(&v.phase)) } else { None })
        .collect();
    let mut area = 0.0;
    for t in &mesh.tris {
        if let (Some(a), Some(b), Some(c)) = (proj[t[0]], proj[t[1]], proj[t[2]]) {
            area += 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
        }
    }
    area
}

// ---------------------------------------------------------------------------
