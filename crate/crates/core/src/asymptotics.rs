//! Closed-form leading-order predictions evaluated directly from the model
//! coefficients.
//!
//! Every function here drops the uncontrolled remainder terms of the return
//! map wholesale and evaluates exactly the written leading expressions: the
//! rotation-phase coefficient families, the distinguished fixed point of the
//! return map together with its parameter curve and frequency selection, the
//! square-root branches of transverse intersection points near a tangency,
//! and the data of the secondary tangency created by a doubled global
//! passage. Accuracy budgets are owned by the decay-in-k regression tests
//! downstream, not by the predictors themselves.

use nalgebra::DVector;
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{HcError, Result};
use crate::model::{BfModel, Model, SfModel};

/// Relative threshold below which the rotated leading y-row coefficient is
/// treated as degenerate (measured against the y-row coefficient norm).
pub const ALPHA_STAR_REL_TOL: f64 = 1e-8;

/// Hard floor for the second-angle divisors of the bi-focus reduction. The
/// policy margin (0.1) is enforced by the reduction driver; this floor only
/// protects well-definedness of the division itself.
const SECOND_ANGLE_FLOOR: f64 = 1e-9;

/// Rotate a coefficient pair `(a1, a2)` by `phase`: the pair seen by the
/// incoming deviations after `k` turns of the central contraction, where
/// `phase = k * omega`.
fn rot_pair(a1: f64, a2: f64, phase: f64) -> (f64, f64) {
    let (s, c) = phase.sin_cos();
    (a1 * c + a2 * s, -a1 * s + a2 * c)
}

/// Second-angle reduction data (bi-focus only): the scalars produced by
/// eliminating the second unstable angle so that the return map takes the
/// same cross form as in the saddle-focus case.
#[derive(Debug, Clone)]
pub struct BfReduction {
    /// Rotated base of the unstable entry coordinate:
    /// `y* = y1- cos(k w2) + y2- sin(k w2)`.
    pub y_star: f64,
    pub cos_k_omega2: f64,
    pub sin_k_omega2: f64,
    /// Divisor of the reduction: `cos(k w2) + b51 sin(k w2)`.
    pub denom: f64,
    /// Reduced linear-in-Y coefficients of the explicit rows: `b_{i1}/denom`.
    pub b11_t: f64,
    pub b41_t: DVector<f64>,
    pub b61_t: DVector<f64>,
    /// Reduced quadratic coefficient of the y row: `b31/denom^2`.
    pub b31_t: f64,
    /// Reduced second-angle row: `b51/denom` and the rotated x-row pair of
    /// that row scaled by `cos(k w2)/denom`.
    pub b51_t: f64,
    pub alpha5_t: f64,
    pub beta5_t: f64,
    /// Unreduced rotated x-row pair of the second-angle row (diagnostic).
    pub alpha_hat5_raw: f64,
    pub beta_hat5_raw: f64,
}

/// Rotation-dependent coefficient families at return length `k` and central
/// frequency `omega`.
///
/// For the bi-focus the fields hold the second-angle-reduced values (the
/// ones that play the saddle-focus role downstream); the reduction scalars
/// themselves are in `bf`.
#[derive(Debug, Clone)]
pub struct RotationCoeffs {
    pub k: u32,
    pub omega: f64,
    /// `k * omega`, the phase at which all pairs were rotated.
    pub phase: f64,
    /// Rotated y-row pair: the leading coefficients of the expanding
    /// direction's image.
    pub alpha_star: f64,
    pub beta_star: f64,
    /// Rotated first-row pair with the leading recentring correction
    /// `-b1 e / b3` folded in (the effect of the x~*Y cross terms of the
    /// y row on the first row after straightening).
    pub alpha_hat1: f64,
    pub beta_hat1: f64,
    /// The same pair without the recentring correction.
    pub alpha_hat1_raw: f64,
    pub beta_hat1_raw: f64,
    /// Exact-shear variant `-b1/(2 b3) * (rotated e)`, the value used
    /// internally by the conjugation chart (diagnostic).
    pub alpha_hat1_shear: f64,
    pub beta_hat1_shear: f64,
    /// Rotated second-row pair (never carries a recentring correction: the
    /// second row has no linear Y term).
    pub alpha_hat2: f64,
    pub beta_hat2: f64,
    /// Rotated pairs of the strong-stable rows.
    pub alpha_hat4: DVector<f64>,
    pub beta_hat4: DVector<f64>,
    /// Rotated pairs of the implicit rows: the v rows for the saddle-focus;
    /// the reduced second-angle row followed by the reduced v rows for the
    /// bi-focus.
    pub alpha_hat5: DVector<f64>,
    pub beta_hat5: DVector<f64>,
    /// Weighted image offset of the entry point under the corrected rotated
    /// rows: `-(alpha*(ah1 x1+ + bh1 x2+) + beta*(ah2 x1+ + bh2 x2+))`.
    /// Enters the tangency-line seed of the nontransverse-intersection
    /// solver.
    pub a_offset: f64,
    /// Tangency phase in (-pi/2, pi/2]: the phase shift of the oscillating
    /// gap `alpha* x1+ + beta* x2+ = R sin(k omega + eta)` (up to a global
    /// sign when `eta_folded`).
    pub eta: f64,
    /// Defining quotients of the tangency phase (before folding into the
    /// half-open interval): `sin = (a31 x1+ + a32 x2+)/R`,
    /// `cos = (a32 x1+ - a31 x2+)/R`.
    pub sin_eta: f64,
    pub cos_eta: f64,
    /// Normalizer `R = sqrt((a31^2 + a32^2) |x+|^2)`.
    pub r_norm: f64,
    /// True when the defining angle lay outside (-pi/2, pi/2] and was
    /// shifted by pi (flipping the sign of the gap identity).
    pub eta_folded: bool,
    /// Second-angle reduction data (bi-focus only).
    pub bf: Option<BfReduction>,
}

impl RotationCoeffs {
    /// Oscillating tangency gap `alpha* x1+ + beta* x2+` at the stored
    /// phase, reconstructed from the defining phase quotients.
    pub fn gap_from_phase(&self) -> f64 {
        self.r_norm * (self.phase.cos() * self.sin_eta + self.phase.sin() * self.cos_eta)
    }
}

/// Tangency phase from the y-row pair and the entry point, folded into
/// (-pi/2, pi/2]. Returns `(eta, sin, cos, R, folded)` with `sin`/`cos` the
/// defining quotients (unfolded).
fn tangency_phase(a31: f64, a32: f64, x1p: f64, x2p: f64) -> Result<(f64, f64, f64, f64, bool)> {
    let r2 = (a31 * a31 + a32 * a32) * (x1p * x1p + x2p * x2p);
    if r2 <= 0.0 {
        return Err(HcError::EtaUndefined(format!(
            "the tangency phase requires (a31^2 + a32^2)*|x+|^2 > 0; \
             got a3 = ({a31}, {a32}), x+ = ({x1p}, {x2p})"
        )));
    }
    let r = r2.sqrt();
    let sigma1 = a31 * x1p + a32 * x2p;
    let sigma2 = a32 * x1p - a31 * x2p;
    let mut eta = sigma1.atan2(sigma2);
    let mut folded = false;
    if eta > FRAC_PI_2 {
        eta -= PI;
        folded = true;
    } else if eta <= -FRAC_PI_2 {
        eta += PI;
        folded = true;
    }
    Ok((eta, sigma1 / r, sigma2 / r, r, folded))
}

/// Evaluate the rotation-dependent coefficient families at return length
/// `k` and central stable frequency `omega`. For the bi-focus the second
/// angle is taken from the model spectrum and the reduced (tilde)
/// coefficients are produced.
pub fn rotation_coeffs(model: &Model, k: u32, omega: f64) -> Result<RotationCoeffs> {
    match model {
        Model::Sf21(m) => rotation_coeffs_sf(m, k, omega),
        Model::Bf(m) => rotation_coeffs_bf(m, k, omega),
    }
}

fn rotation_coeffs_sf(m: &SfModel, k: u32, omega: f64) -> Result<RotationCoeffs> {
    let g = &m.global;
    if g.b1 == 0.0 || g.b3 == 0.0 {
        return Err(HcError::GenericityFailed(format!(
            "the leading Y coefficient and the quadratic tangency coefficient must be \
             nonzero; got b1 = {}, b3 = {}",
            g.b1, g.b3
        )));
    }
    let phase = k as f64 * omega;
    let (alpha_star, beta_star) = rot_pair(g.a3[0], g.a3[1], phase);
    let (ah1_raw, bh1_raw) = rot_pair(g.a[(0, 0)], g.a[(0, 1)], phase);
    let (alpha_hat2, beta_hat2) = rot_pair(g.a[(1, 0)], g.a[(1, 1)], phase);
    let corr = g.b1 / g.b3;
    let alpha_hat1 = ah1_raw - corr * g.e1;
    let beta_hat1 = bh1_raw - corr * g.e2;
    let (e_alpha, e_beta) = rot_pair(g.e1, g.e2, phase);
    let alpha_hat1_shear = ah1_raw - 0.5 * corr * e_alpha;
    let beta_hat1_shear = bh1_raw - 0.5 * corr * e_beta;
    let (nu, nv) = (g.nu(), g.nv());
    let mut alpha_hat4 = DVector::zeros(nu);
    let mut beta_hat4 = DVector::zeros(nu);
    for i in 0..nu {
        let (a, b) = rot_pair(g.a4[(i, 0)], g.a4[(i, 1)], phase);
        alpha_hat4[i] = a;
        beta_hat4[i] = b;
    }
    let mut alpha_hat5 = DVector::zeros(nv);
    let mut beta_hat5 = DVector::zeros(nv);
    for i in 0..nv {
        let (a, b) = rot_pair(g.a5[(i, 0)], g.a5[(i, 1)], phase);
        alpha_hat5[i] = a;
        beta_hat5[i] = b;
    }
    let (x1p, x2p) = (g.x_plus[0], g.x_plus[1]);
    let a_offset = -(alpha_star * (alpha_hat1 * x1p + beta_hat1 * x2p)
        + beta_star * (alpha_hat2 * x1p + beta_hat2 * x2p));
    let (eta, sin_eta, cos_eta, r_norm, eta_folded) =
        tangency_phase(g.a3[0], g.a3[1], x1p, x2p)?;
    Ok(RotationCoeffs {
        k,
        omega,
        phase,
        alpha_star,
        beta_star,
        alpha_hat1,
        beta_hat1,
        alpha_hat1_raw: ah1_raw,
        beta_hat1_raw: bh1_raw,
        alpha_hat1_shear,
        beta_hat1_shear,
        alpha_hat2,
        beta_hat2,
        alpha_hat4,
        beta_hat4,
        alpha_hat5,
        beta_hat5,
        a_offset,
        eta,
        sin_eta,
        cos_eta,
        r_norm,
        eta_folded,
        bf: None,
    })
}

fn rotation_coeffs_bf(m: &BfModel, k: u32, omega: f64) -> Result<RotationCoeffs> {
    let g = &m.global;
    if g.b11 == 0.0 || g.b31 == 0.0 {
        return Err(HcError::GenericityFailed(format!(
            "the leading Y coefficient and the quadratic tangency coefficient must be \
             nonzero; got b11 = {}, b31 = {}",
            g.b11, g.b31
        )));
    }
    let omega2 = m.spectrum.omega2.ok_or_else(|| {
        HcError::Config("a bi-focus model must carry the second central frequency".into())
    })?;
    let phase = k as f64 * omega;
    let phase2 = k as f64 * omega2;
    let (s2, c2) = phase2.sin_cos();
    let denom = c2 + g.b51 * s2;
    if c2.abs() < SECOND_ANGLE_FLOOR || denom.abs() < SECOND_ANGLE_FLOOR {
        return Err(HcError::KFiltered(format!(
            "second-angle divisors vanish at k = {k}: cos = {c2:.3e}, \
             cos + b51*sin = {denom:.3e}"
        )));
    }
    let y_star = g.y_minus[0] * c2 + g.y_minus[1] * s2;

    let (alpha_star, beta_star) = rot_pair(g.a3[0], g.a3[1], phase);
    let (ah1, bh1) = rot_pair(g.a[(0, 0)], g.a[(0, 1)], phase);
    let (ah2, bh2) = rot_pair(g.a[(1, 0)], g.a[(1, 1)], phase);
    let (ah5, bh5) = rot_pair(g.a5[0], g.a5[1], phase);
    let (nu, nv) = (g.nu(), g.nv());

    // Eliminating the second angle mixes the second-angle row into every
    // row that carries a linear Y coefficient; the second explicit row has
    // none, so it stays unreduced.
    let t5 = s2 / denom;
    let ah1_t = ah1 - g.b11 * ah5 * t5;
    let bh1_t = bh1 - g.b11 * bh5 * t5;
    let mut alpha_hat4 = DVector::zeros(nu);
    let mut beta_hat4 = DVector::zeros(nu);
    let mut b41_t = DVector::zeros(nu);
    for i in 0..nu {
        let (a, b) = rot_pair(g.a4[(i, 0)], g.a4[(i, 1)], phase);
        alpha_hat4[i] = a - g.b41[i] * ah5 * t5;
        beta_hat4[i] = b - g.b41[i] * bh5 * t5;
        b41_t[i] = g.b41[i] / denom;
    }
    let mut alpha_hat5 = DVector::zeros(1 + nv);
    let mut beta_hat5 = DVector::zeros(1 + nv);
    let mut b61_t = DVector::zeros(nv);
    alpha_hat5[0] = ah5 * c2 / denom;
    beta_hat5[0] = bh5 * c2 / denom;
    for i in 0..nv {
        let (a, b) = rot_pair(g.a6[(i, 0)], g.a6[(i, 1)], phase);
        alpha_hat5[1 + i] = a - g.b61[i] * ah5 * t5;
        beta_hat5[1 + i] = b - g.b61[i] * bh5 * t5;
        b61_t[i] = g.b61[i] / denom;
    }
    let b11_t = g.b11 / denom;
    let b31_t = g.b31 / (denom * denom);
    let b51_t = g.b51 / denom;
    let (alpha5_t, beta5_t) = (alpha_hat5[0], beta_hat5[0]);

    // Recentring correction on the reduced first row. In reduced variables
    // the cross-term coefficients pick up 1/denom, the first-row Y
    // coefficient 1/denom and the quadratic coefficient 1/denom^2, so the
    // divisors cancel and the correction keeps its unreduced form.
    let corr = g.b11 / g.b31;
    let alpha_hat1 = ah1_t - corr * g.e1;
    let beta_hat1 = bh1_t - corr * g.e2;
    let (e_alpha, e_beta) = rot_pair(g.e1, g.e2, phase);
    let alpha_hat1_shear = ah1_t - 0.5 * corr * e_alpha;
    let beta_hat1_shear = bh1_t - 0.5 * corr * e_beta;

    let (x1p, x2p) = (g.x_plus[0], g.x_plus[1]);
    let a_offset = -(alpha_star * (alpha_hat1 * x1p + beta_hat1 * x2p)
        + beta_star * (ah2 * x1p + bh2 * x2p));
    let (eta, sin_eta, cos_eta, r_norm, eta_folded) =
        tangency_phase(g.a3[0], g.a3[1], x1p, x2p)?;
    Ok(RotationCoeffs {
        k,
        omega,
        phase,
        alpha_star,
        beta_star,
        alpha_hat1,
        beta_hat1,
        alpha_hat1_raw: ah1_t,
        beta_hat1_raw: bh1_t,
        alpha_hat1_shear,
        beta_hat1_shear,
        alpha_hat2: ah2,
        beta_hat2: bh2,
        alpha_hat4,
        beta_hat4,
        alpha_hat5,
        beta_hat5,
        a_offset,
        eta,
        sin_eta,
        cos_eta,
        r_norm,
        eta_folded,
        bf: Some(BfReduction {
            y_star,
            cos_k_omega2: c2,
            sin_k_omega2: s2,
            denom,
            b11_t,
            b41_t,
            b61_t,
            b31_t,
            b51_t,
            alpha5_t,
            beta5_t,
            alpha_hat5_raw: ah5,
            beta_hat5_raw: bh5,
        }),
    })
}

/// Distinguished-fixed-point coordinates in chart variables, leading order.
#[derive(Debug, Clone, Serialize)]
pub struct QPred {
    pub z: f64,
    pub y: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

/// Predictions tied to the index-mismatched fixed point of the return map:
/// its parameter value, chart coordinates, slopes in the placement
/// parameter, and the selected central frequency.
#[derive(Debug, Clone, Serialize)]
pub struct CycleParts {
    /// Placement parameter for the central eigenvalue pair, in (-1, 1).
    pub t: f64,
    pub mu_pred: f64,
    pub q_pred: QPred,
    pub d_mu_dt: f64,
    pub d_yq_dt: f64,
    /// Frequency placed on the nearest zero of the tangency gap.
    pub omega_pred: f64,
    /// Integer selected by the rounding rule (half away from zero).
    pub n_k: i64,
    /// Tangency phase used by the selection.
    pub eta: f64,
    /// Rotated y-row coefficient at the selected frequency.
    pub alpha_star: f64,
    /// Leading trace and determinant of the central 2x2 block at the
    /// predicted fixed point.
    pub trace_pred: f64,
    pub det_pred: f64,
    /// True when the dropped remainder budget can dominate the quadratic
    /// term of the parameter curve (the t^2 term is then below the noise
    /// floor of the dropped terms).
    pub quadratic_term_shadowed: bool,
}

/// Square-root branch predictions for the transverse intersection points
/// flanking a tangency.
#[derive(Debug, Clone, Serialize)]
pub struct HomoclinicParts {
    /// Positive magnitudes of the two square-root offsets.
    pub x_mag: f64,
    pub y_mag: f64,
    /// Four (X, Y) offset pairs with sign pattern (+,+), (+,-), (-,+), (-,-).
    pub branches: [[f64; 2]; 4],
    /// Predicted base-coordinate offsets of the pre-images on the local
    /// unstable manifold, one per branch (X divided by the leading Y
    /// coefficient).
    pub y_offsets: [f64; 4],
}

/// Data of the pair of secondary tangencies created by a doubled global
/// passage.
#[derive(Debug, Clone, Serialize)]
pub struct SecondaryParts {
    /// (X, Y) offsets of the two tangency branches.
    pub x_hat: [f64; 2],
    pub y_hat: [f64; 2],
    /// Common leading parameter value of both branches.
    pub mu_secondary: f64,
    /// Square-root-level refinement of the parameter value, per branch
    /// (used for solver seeding).
    pub mu_refined: [f64; 2],
    /// Effective quadratic tangency coefficients of the re-based return
    /// map; the two branches carry opposite signs.
    pub b3k: [f64; 2],
    /// Index (0 or 1) of the branch whose effective coefficient makes the
    /// new tangency normal.
    pub normal_branch: usize,
    /// Predicted base-coordinate offsets of the tangency pre-images on the
    /// local unstable manifold.
    pub y_minus_offsets: [f64; 2],
}

/// Bundle of leading-order predictions at a single return length.
#[derive(Debug, Clone, Serialize)]
pub struct PredictionBundle {
    pub k: u32,
    /// Frequency the predictions were evaluated at (the selected frequency
    /// for cycle parts; the supplied one for intersection parts).
    pub omega: f64,
    pub cycle: Option<CycleParts>,
    pub homoclinic: Option<HomoclinicParts>,
    /// When the four-branch prediction is unavailable, the inequality that
    /// blocks it.
    pub homoclinic_blocked: Option<String>,
    pub secondary: Option<SecondaryParts>,
}

impl PredictionBundle {
    /// The four-branch intersection prediction, or the sign condition that
    /// blocks it as an error.
    pub fn require_homoclinic(&self) -> Result<&HomoclinicParts> {
        match (&self.homoclinic, &self.homoclinic_blocked) {
            (Some(h), _) => Ok(h),
            (None, Some(msg)) => Err(HcError::SignConditionFailed(msg.clone())),
            (None, None) => Err(HcError::SignConditionFailed(
                "no intersection prediction was requested".into(),
            )),
        }
    }

    pub fn require_cycle(&self) -> Result<&CycleParts> {
        self.cycle.as_ref().ok_or_else(|| {
            HcError::Usage("this bundle carries no fixed-point predictions".into())
        })
    }

    pub fn require_secondary(&self) -> Result<&SecondaryParts> {
        self.secondary.as_ref().ok_or_else(|| {
            HcError::Usage("this bundle carries no secondary-tangency predictions".into())
        })
    }
}

/// Coefficients that drive the scalar predictions, with the bi-focus
/// reduced to its saddle-focus-shaped form.
struct EffCoeffs {
    lambda: f64,
    gamma: f64,
    lambda_hat: f64,
    x1p: f64,
    x2p: f64,
    /// Base value of the unstable entry coordinate (reduced for the
    /// bi-focus).
    y_base: f64,
    b1: f64,
    b3: f64,
    a3_norm: f64,
    w_len: usize,
    v_len: usize,
}

fn effective_coeffs(model: &Model, rc: &RotationCoeffs) -> EffCoeffs {
    match model {
        Model::Sf21(m) => {
            let g = &m.global;
            EffCoeffs {
                lambda: m.spectrum.lambda,
                gamma: m.spectrum.gamma,
                lambda_hat: m.spectrum.lambda_hat,
                x1p: g.x_plus[0],
                x2p: g.x_plus[1],
                y_base: g.y_minus,
                b1: g.b1,
                b3: g.b3,
                a3_norm: g.a3.norm(),
                w_len: 1 + g.nu(),
                v_len: g.nv(),
            }
        }
        Model::Bf(m) => {
            let g = &m.global;
            let bf = rc.bf.as_ref().expect("bi-focus coefficients carry reduction data");
            EffCoeffs {
                lambda: m.spectrum.lambda,
                gamma: m.spectrum.gamma,
                lambda_hat: m.spectrum.lambda_hat,
                x1p: g.x_plus[0],
                x2p: g.x_plus[1],
                y_base: bf.y_star,
                b1: bf.b11_t,
                b3: bf.b31_t,
                a3_norm: g.a3.norm(),
                w_len: 1 + g.nu(),
                v_len: 1 + g.nv(),
            }
        }
    }
}

/// Select the frequency nearest `omega_seed` at which the tangency gap
/// vanishes: `omega = (n pi - eta)/k` with `n` rounded half away from zero.
/// Returns the frequency and the chosen integer.
pub fn nearest_gap_zero(model: &Model, k: u32, omega_seed: f64) -> Result<(f64, i64)> {
    if k == 0 {
        return Err(HcError::Config(
            "frequency selection requires a positive return length".into(),
        ));
    }
    let rc = rotation_coeffs(model, k, omega_seed)?;
    let kf = k as f64;
    let n = ((kf * omega_seed + rc.eta) / PI).round();
    Ok(((n * PI - rc.eta) / kf, n as i64))
}

/// Leading-order predictions for the index-mismatched fixed point: the
/// parameter value placing the central eigenvalues at `nu1 + nu2 =
/// t (1 + nu1 nu2)`, the fixed-point chart coordinates, their slopes in
/// `t`, and the selected frequency nearest `omega_seed`.
pub fn predict_cycle_quantities(
    model: &Model,
    k: u32,
    t: f64,
    omega_seed: f64,
) -> Result<PredictionBundle> {
    let (omega_k, n_k) = nearest_gap_zero(model, k, omega_seed)?;
    cycle_bundle_at(model, k, t, omega_k, n_k)
}

/// Same predictions evaluated exactly at the supplied frequency, with no
/// re-selection. Used for seeding fixed-point solves away from the
/// coincidence frequencies.
pub fn predict_cycle_quantities_at(
    model: &Model,
    k: u32,
    t: f64,
    omega: f64,
) -> Result<PredictionBundle> {
    if k == 0 {
        return Err(HcError::Config(
            "fixed-point predictions require a positive return length".into(),
        ));
    }
    let rc0 = rotation_coeffs(model, k, omega)?;
    let n = ((k as f64 * omega + rc0.eta) / PI).round() as i64;
    cycle_bundle_at(model, k, t, omega, n)
}

fn cycle_bundle_at(
    model: &Model,
    k: u32,
    t: f64,
    omega_k: f64,
    n_k: i64,
) -> Result<PredictionBundle> {
    let rc = rotation_coeffs(model, k, omega_k)?;
    let eff = effective_coeffs(model, &rc);
    if rc.alpha_star.abs() <= ALPHA_STAR_REL_TOL * eff.a3_norm {
        return Err(HcError::AlphaStarDegenerate {
            value: rc.alpha_star,
            phase: rc.phase,
        });
    }
    let ki = k as i32;
    let lam_k = eff.lambda.powi(ki);
    let gam_k = eff.gamma.powi(ki);
    let lam_hat_k = eff.lambda_hat.powi(ki);
    let c = rc.alpha_star * eff.x1p + rc.beta_star * eff.x2p;
    let b1a = eff.b1 * rc.alpha_star;
    let quad = b1a * b1a / (2.0 * eff.b3);
    let mu_pred =
        -lam_k * c + eff.y_base / gam_k + quad * lam_k * lam_k * t - 0.5 * quad * lam_k * lam_k * t * t;
    let det_pred = -b1a * lam_k * gam_k;
    // Carrying the placement identity exactly: the trace of the central
    // block is 2 b3 gamma^k Y, so Y is placed where trace = t (1 + det).
    let y_q = t * (1.0 + det_pred) / (2.0 * eff.b3 * gam_k);
    let z_q = b1a * y_q;
    let trace_pred = 2.0 * eff.b3 * gam_k * y_q;
    let d_mu_dt = quad * lam_k * lam_k * (1.0 - t);
    let d_yq_dt = -(b1a / (2.0 * eff.b3)) * lam_k;
    let quadratic_term_shadowed = lam_hat_k * lam_k > lam_k * lam_k * t * t / 4.0;
    Ok(PredictionBundle {
        k,
        omega: omega_k,
        cycle: Some(CycleParts {
            t,
            mu_pred,
            q_pred: QPred {
                z: z_q,
                y: y_q,
                w: vec![0.0; eff.w_len],
                v: vec![0.0; eff.v_len],
            },
            d_mu_dt,
            d_yq_dt,
            omega_pred: omega_k,
            n_k,
            eta: rc.eta,
            alpha_star: rc.alpha_star,
            trace_pred,
            det_pred,
            quadratic_term_shadowed,
        }),
        homoclinic: None,
        homoclinic_blocked: None,
        secondary: None,
    })
}

/// Leading-order predictions at a tangency frequency: the four square-root
/// branches of transverse intersection points and the secondary-tangency
/// data of the doubled global passage. The supplied frequency is used
/// as-is (no re-selection).
pub fn predict_homoclinic_quantities(
    model: &Model,
    k: u32,
    omega: f64,
) -> Result<PredictionBundle> {
    if k == 0 {
        return Err(HcError::Config(
            "intersection predictions require a positive return length".into(),
        ));
    }
    match model {
        Model::Sf21(m) => predict_homoclinic_sf(m, k, omega),
        Model::Bf(m) => predict_homoclinic_bf(m, k, omega),
    }
}

fn predict_homoclinic_sf(m: &SfModel, k: u32, omega: f64) -> Result<PredictionBundle> {
    if k % 2 != 0 {
        return Err(HcError::SignConditionFailed(format!(
            "the square-root branches require an even return length; got k = {k}"
        )));
    }
    let model = Model::Sf21(m.clone());
    let rc = rotation_coeffs(&model, k, omega)?;
    let g = &m.global;
    let c = rc.alpha_star * g.x_plus[0] + rc.beta_star * g.x_plus[1];
    if g.b3 * c >= 0.0 {
        return Err(HcError::SignConditionFailed(format!(
            "b3*(alpha* x1+ + beta* x2+) < 0 fails: b3 = {}, gap = {c}",
            g.b3
        )));
    }
    let kf = k as f64;
    let lam_khalf = m.spectrum.lambda.powf(kf / 2.0);
    let gam_k = m.spectrum.gamma.powi(k as i32);
    let root = (-c / g.b3).sqrt();
    let y_mag = lam_khalf * root;

    let (homoclinic, homoclinic_blocked) = if g.b3 * g.y_minus > 0.0 {
        let x_mag = g.b1.abs() * m.spectrum.gamma.abs().powf(-kf / 2.0)
            * (g.y_minus / g.b3).sqrt();
        let branches = [
            [x_mag, y_mag],
            [x_mag, -y_mag],
            [-x_mag, y_mag],
            [-x_mag, -y_mag],
        ];
        let y_offsets = [
            branches[0][0] / g.b1,
            branches[1][0] / g.b1,
            branches[2][0] / g.b1,
            branches[3][0] / g.b1,
        ];
        (
            Some(HomoclinicParts {
                x_mag,
                y_mag,
                branches,
                y_offsets,
            }),
            None,
        )
    } else {
        (
            None,
            Some(format!(
                "b3*y- > 0 fails: b3 = {}, y- = {}",
                g.b3, g.y_minus
            )),
        )
    };

    if g.y_minus == 0.0 {
        return Err(HcError::SignConditionFailed(
            "b3k*y- > 0 fails for both secondary branches: y- = 0".into(),
        ));
    }
    let xh0 = root * (-rc.alpha_star * g.b1 * g.b1 * lam_khalf / gam_k) / (4.0 * g.b3 * c);
    let yh0 = -root * lam_khalf;
    let x_hat = [xh0, -xh0];
    let y_hat = [yh0, -yh0];
    let mu_secondary = g.y_minus / gam_k;
    let mu_refined = [(g.y_minus + y_hat[0]) / gam_k, (g.y_minus + y_hat[1]) / gam_k];
    let b3k_mag = 2.0 * g.b3 * g.b3 * lam_khalf * gam_k * root;
    let b3k = [-b3k_mag, b3k_mag];
    let normal_branch = if b3k[0] * g.y_minus > 0.0 { 0 } else { 1 };
    let secondary = Some(SecondaryParts {
        x_hat,
        y_hat,
        mu_secondary,
        mu_refined,
        b3k,
        normal_branch,
        y_minus_offsets: [x_hat[0] / g.b1, x_hat[1] / g.b1],
    });

    Ok(PredictionBundle {
        k,
        omega,
        cycle: None,
        homoclinic,
        homoclinic_blocked,
        secondary,
    })
}

fn predict_homoclinic_bf(m: &BfModel, k: u32, omega: f64) -> Result<PredictionBundle> {
    let model = Model::Bf(m.clone());
    let rc = rotation_coeffs(&model, k, omega)?;
    let bf = rc.bf.as_ref().expect("bi-focus coefficients carry reduction data");
    let g = &m.global;
    let c = rc.alpha_star * g.x_plus[0] + rc.beta_star * g.x_plus[1];
    if bf.b31_t * c >= 0.0 {
        return Err(HcError::SignConditionFailed(format!(
            "b31~*(alpha* x1+ + beta* x2+) < 0 fails: b31~ = {}, gap = {c}",
            bf.b31_t
        )));
    }
    if g.b31 * bf.y_star <= 0.0 {
        return Err(HcError::SignConditionFailed(format!(
            "b31*y* > 0 fails: b31 = {}, y* = {}",
            g.b31, bf.y_star
        )));
    }
    let kf = k as f64;
    // The unstable modulus is positive for the bi-focus, so no parity
    // constraint is needed for the square roots.
    let x_mag = g.b11.abs() * m.spectrum.gamma.powf(-kf / 2.0) * (bf.y_star / g.b31).sqrt();
    let y_mag = m.spectrum.lambda.powf(kf / 2.0) * (-c / bf.b31_t).sqrt();
    let branches = [
        [x_mag, y_mag],
        [x_mag, -y_mag],
        [-x_mag, y_mag],
        [-x_mag, -y_mag],
    ];
    let y_offsets = [
        branches[0][0] / g.b11,
        branches[1][0] / g.b11,
        branches[2][0] / g.b11,
        branches[3][0] / g.b11,
    ];
    Ok(PredictionBundle {
        k,
        omega,
        cycle: None,
        homoclinic: Some(HomoclinicParts {
            x_mag,
            y_mag,
            branches,
            y_offsets,
        }),
        homoclinic_blocked: None,
        secondary: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models::{bf_minimal, sf_extended, sf_minimal};
    use nalgebra::Vector2;

    fn sf_model() -> Model {
        Model::Sf21(sf_extended())
    }

    #[test]
    fn rotation_preserves_the_y_row_norm() {
        let model = sf_model();
        let a3_sq = match &model {
            Model::Sf21(m) => m.global.a3.norm_squared(),
            _ => unreachable!(),
        };
        for &k in &[0u32, 1, 3, 8, 17, 40] {
            for &omega in &[0.3, 0.937, 1.0, 2.95] {
                let rc = rotation_coeffs(&model, k, omega).unwrap();
                let norm = rc.alpha_star * rc.alpha_star + rc.beta_star * rc.beta_star;
                assert!(
                    (norm - a3_sq).abs() <= 1e-12 * a3_sq,
                    "norm identity violated at k={k}, omega={omega}: {norm} vs {a3_sq}"
                );
            }
        }
    }

    #[test]
    fn axis_phases_give_the_expected_rotated_pairs() {
        let mut m = sf_minimal();
        m.global.a3 = Vector2::new(1.0, 0.0);
        let model = Model::Sf21(m);
        // Zero phase: the pair is untouched.
        let rc = rotation_coeffs(&model, 0, 1.3).unwrap();
        assert_eq!(rc.alpha_star, 1.0);
        assert_eq!(rc.beta_star, 0.0);
        // Quarter turn: the pair moves onto the negative second slot.
        let rc = rotation_coeffs(&model, 1, FRAC_PI_2).unwrap();
        assert!(rc.alpha_star.abs() < 1e-12);
        assert!((rc.beta_star + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tangency_phase_vanishes_on_the_orthogonal_entry() {
        // First quotient zero with positive second quotient: phase 0, no fold.
        let mut m = sf_minimal();
        m.global.a3 = Vector2::new(1.0, 0.0);
        m.global.x_plus = Vector2::new(0.0, -0.5);
        let model = Model::Sf21(m);
        let rc = rotation_coeffs(&model, 2, 1.0).unwrap();
        assert_eq!(rc.eta, 0.0);
        assert!(!rc.eta_folded);
        assert!((rc.sin_eta - 0.0).abs() < 1e-15);
        assert!((rc.cos_eta - 1.0).abs() < 1e-15);
        // Same zero numerator but negative second quotient: folded to 0.
        let mut m = sf_minimal();
        m.global.a3 = Vector2::new(1.0, 0.0);
        m.global.x_plus = Vector2::new(0.0, 0.5);
        let model = Model::Sf21(m);
        let rc = rotation_coeffs(&model, 2, 1.0).unwrap();
        assert_eq!(rc.eta, 0.0);
        assert!(rc.eta_folded);
        assert!((rc.cos_eta + 1.0).abs() < 1e-15);
    }

    #[test]
    fn phase_quotients_define_eta_and_reproduce_the_gap() {
        let model = sf_model();
        for &k in &[1u32, 5, 12, 23] {
            for &omega in &[0.41, 1.0, 2.2, 3.0] {
                let rc = rotation_coeffs(&model, k, omega).unwrap();
                // The defining quotients are a unit vector.
                let q = rc.sin_eta * rc.sin_eta + rc.cos_eta * rc.cos_eta;
                assert!((q - 1.0).abs() < 1e-12);
                // The gap equals the phase-identity reconstruction.
                let direct = {
                    let (x1p, x2p) = match &model {
                        Model::Sf21(m) => (m.global.x_plus[0], m.global.x_plus[1]),
                        _ => unreachable!(),
                    };
                    rc.alpha_star * x1p + rc.beta_star * x2p
                };
                let via_phase = rc.gap_from_phase();
                assert!(
                    (direct - via_phase).abs() <= 1e-12 * rc.r_norm,
                    "gap identity failed at k={k}, omega={omega}"
                );
                if !rc.eta_folded {
                    let folded_form = rc.r_norm * (rc.phase + rc.eta).sin();
                    assert!((direct - folded_form).abs() <= 1e-12 * rc.r_norm);
                    assert!((rc.eta.sin() - rc.sin_eta).abs() < 1e-12);
                    assert!((rc.eta.cos() - rc.cos_eta).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn recentring_corrections_have_the_stated_offsets() {
        let model = sf_model();
        let (b1, b3, e1, e2) = match &model {
            Model::Sf21(m) => (m.global.b1, m.global.b3, m.global.e1, m.global.e2),
            _ => unreachable!(),
        };
        let rc = rotation_coeffs(&model, 9, 1.07).unwrap();
        assert!((rc.alpha_hat1 - (rc.alpha_hat1_raw - b1 / b3 * e1)).abs() < 1e-15);
        assert!((rc.beta_hat1 - (rc.beta_hat1_raw - b1 / b3 * e2)).abs() < 1e-15);
        let (ea, eb) = {
            let (s, c) = rc.phase.sin_cos();
            (e1 * c + e2 * s, -e1 * s + e2 * c)
        };
        assert!(
            (rc.alpha_hat1_shear - (rc.alpha_hat1_raw - 0.5 * b1 / b3 * ea)).abs() < 1e-15
        );
        assert!(
            (rc.beta_hat1_shear - (rc.beta_hat1_raw - 0.5 * b1 / b3 * eb)).abs() < 1e-15
        );
    }

    #[test]
    fn frequency_selection_lands_on_a_gap_zero() {
        let model = sf_model();
        for &k in &[8u32, 12, 14] {
            for &seed in &[1.0, 2.95] {
                let bundle = predict_cycle_quantities(&model, k, 0.3, seed).unwrap();
                let cycle = bundle.cycle.as_ref().unwrap();
                let s = (k as f64 * cycle.omega_pred + cycle.eta).sin();
                assert!(
                    s.abs() < 1e-12,
                    "selected frequency misses the zero at k={k}: sin = {s:e}"
                );
                assert!(
                    (cycle.omega_pred - seed).abs() <= PI / (2.0 * k as f64) + 1e-12,
                    "selection strayed from the seed at k={k}"
                );
                let rebuilt = (cycle.n_k as f64 * PI - cycle.eta) / k as f64;
                assert!((rebuilt - cycle.omega_pred).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn placement_identity_holds_across_t() {
        for model in [sf_model(), Model::Bf(bf_minimal())] {
            for i in 0..10 {
                let t = -0.9 + 0.2 * i as f64;
                let bundle = predict_cycle_quantities(&model, 12, t, 1.0).unwrap();
                let cycle = bundle.cycle.as_ref().unwrap();
                let lhs = cycle.trace_pred;
                let rhs = t * (1.0 + cycle.det_pred);
                let scale = rhs.abs().max(1.0);
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * scale,
                    "placement identity violated at t={t}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn zero_placement_collapses_the_fixed_point_offsets() {
        let model = sf_model();
        let bundle = predict_cycle_quantities(&model, 10, 0.0, 1.0).unwrap();
        let cycle = bundle.cycle.as_ref().unwrap();
        assert_eq!(cycle.q_pred.y, 0.0);
        assert_eq!(cycle.q_pred.z, 0.0);
        assert!(cycle.q_pred.w.iter().all(|&w| w == 0.0));
        assert!(cycle.q_pred.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_slope_matches_finite_differences() {
        let model = sf_model();
        let h = 1e-3;
        for &t in &[0.0, 0.4] {
            let up = predict_cycle_quantities(&model, 12, t + h, 1.0).unwrap();
            let dn = predict_cycle_quantities(&model, 12, t - h, 1.0).unwrap();
            let mid = predict_cycle_quantities(&model, 12, t, 1.0).unwrap();
            let fd = (up.cycle.unwrap().mu_pred - dn.cycle.unwrap().mu_pred) / (2.0 * h);
            let slope = mid.cycle.unwrap().d_mu_dt;
            let scale = slope.abs().max(1e-300);
            assert!(
                (fd - slope).abs() <= 1e-9 * scale,
                "slope mismatch at t={t}: fd = {fd:e}, closed form = {slope:e}"
            );
        }
    }

    #[test]
    fn cycle_fixture_stays_frozen() {
        let model = sf_model();
        let bundle = predict_cycle_quantities(&model, 12, 0.5, 1.0).unwrap();
        let cycle = bundle.cycle.as_ref().unwrap();
        let frozen_mu = 4.6331635537602870e-4;
        let frozen_yq = -4.8472868361797914e-4;
        let frozen_omega = 1.0051637872539967e0;
        let frozen_d_mu_dt = 1.9142949904531271e-4;
        assert_eq!(cycle.mu_pred, frozen_mu);
        assert_eq!(cycle.q_pred.y, frozen_yq);
        assert_eq!(cycle.omega_pred, frozen_omega);
        assert_eq!(cycle.d_mu_dt, frozen_d_mu_dt);
    }

    /// Find an even return length and frequency where the branch sign
    /// conditions hold for the given model.
    fn branch_site(model: &Model, k: u32) -> f64 {
        let (b3, x1p, x2p) = match model {
            Model::Sf21(m) => (m.global.b3, m.global.x_plus[0], m.global.x_plus[1]),
            Model::Bf(m) => (m.global.b31, m.global.x_plus[0], m.global.x_plus[1]),
        };
        let mut omega = 0.05;
        while omega < 3.1 {
            if let Ok(rc) = rotation_coeffs(model, k, omega) {
                let c = rc.alpha_star * x1p + rc.beta_star * x2p;
                if b3 * c < -0.01 * rc.r_norm * b3.abs() {
                    return omega;
                }
            }
            omega += 0.05;
        }
        panic!("no frequency with a negative-gap site found");
    }

    #[test]
    fn square_root_branches_follow_the_sign_pattern() {
        let model = sf_model();
        let k = 10;
        let omega = branch_site(&model, k);
        let bundle = predict_homoclinic_quantities(&model, k, omega).unwrap();
        let h = bundle.require_homoclinic().unwrap();
        assert!(h.x_mag > 0.0 && h.y_mag > 0.0);
        assert_eq!(h.branches[0], [h.x_mag, h.y_mag]);
        assert_eq!(h.branches[1], [h.x_mag, -h.y_mag]);
        assert_eq!(h.branches[2], [-h.x_mag, h.y_mag]);
        assert_eq!(h.branches[3], [-h.x_mag, -h.y_mag]);
        let b1 = match &model {
            Model::Sf21(m) => m.global.b1,
            _ => unreachable!(),
        };
        for j in 0..4 {
            assert_eq!(h.y_offsets[j], h.branches[j][0] / b1);
        }
    }

    #[test]
    fn secondary_branches_carry_opposite_quadratic_signs() {
        let model = sf_model();
        let k = 10;
        let omega = branch_site(&model, k);
        let bundle = predict_homoclinic_quantities(&model, k, omega).unwrap();
        let s = bundle.require_secondary().unwrap();
        assert!(s.b3k[0] * s.b3k[1] < 0.0);
        assert_eq!(s.b3k[0].abs(), s.b3k[1].abs());
        let (y_minus, gamma, b1) = match &model {
            Model::Sf21(m) => (m.global.y_minus, m.spectrum.gamma, m.global.b1),
            _ => unreachable!(),
        };
        assert!(s.b3k[s.normal_branch] * y_minus > 0.0);
        assert_eq!(s.mu_secondary, y_minus / gamma.powi(k as i32));
        assert_eq!(s.x_hat[0], -s.x_hat[1]);
        assert_eq!(s.y_hat[0], -s.y_hat[1]);
        assert!(s.y_hat[0] < 0.0);
        for j in 0..2 {
            assert_eq!(
                s.mu_refined[j],
                (y_minus + s.y_hat[j]) / gamma.powi(k as i32)
            );
            assert_eq!(s.y_minus_offsets[j], s.x_hat[j] / b1);
        }
    }

    #[test]
    fn homoclinic_fixture_stays_frozen() {
        let model = sf_model();
        let k = 10;
        let omega = branch_site(&model, k);
        let bundle = predict_homoclinic_quantities(&model, k, omega).unwrap();
        let h = bundle.require_homoclinic().unwrap();
        let s = bundle.require_secondary().unwrap();
        assert_eq!(omega, 2.9999999999999999e-1);
        assert_eq!(h.x_mag, 2.8322682199320780e-2);
        assert_eq!(h.y_mag, 2.5153229917530330e-3);
        assert_eq!(s.b3k[0], -2.2125015016358229e4);
        assert_eq!(s.x_hat[0], -3.0348704630848354e-4);
    }

    #[test]
    fn violated_sign_conditions_name_the_inequality() {
        let model = sf_model();
        let k = 10;
        let omega = branch_site(&model, k);
        // Odd return length.
        match predict_homoclinic_quantities(&model, k + 1, omega) {
            Err(HcError::SignConditionFailed(msg)) => assert!(msg.contains("even")),
            other => panic!("expected a parity refusal, got {other:?}"),
        }
        // Positive gap-side: flip the frequency to a positive-gap site.
        let mut bad = 0.05;
        let found = loop {
            if bad >= 3.1 {
                break None;
            }
            let rc = rotation_coeffs(&model, k, bad).unwrap();
            let (b3, x1p, x2p) = match &model {
                Model::Sf21(m) => (m.global.b3, m.global.x_plus[0], m.global.x_plus[1]),
                _ => unreachable!(),
            };
            let c = rc.alpha_star * x1p + rc.beta_star * x2p;
            if b3 * c > 0.01 * rc.r_norm * b3.abs() {
                break Some(bad);
            }
            bad += 0.05;
        };
        let bad = found.expect("a positive-gap frequency exists");
        match predict_homoclinic_quantities(&model, k, bad) {
            Err(HcError::SignConditionFailed(msg)) => assert!(msg.contains("b3")),
            other => panic!("expected a gap-sign refusal, got {other:?}"),
        }
        // Blocked four-branch part when the base coordinate has the wrong
        // sign, while the secondary data stays available.
        let mut m = sf_extended();
        m.global.y_minus = -m.global.y_minus.abs();
        let flipped = Model::Sf21(m);
        let omega_f = branch_site(&flipped, k);
        let bundle = predict_homoclinic_quantities(&flipped, k, omega_f).unwrap();
        assert!(bundle.homoclinic.is_none());
        assert!(bundle.secondary.is_some());
        match bundle.require_homoclinic() {
            Err(HcError::SignConditionFailed(msg)) => assert!(msg.contains("y-")),
            other => panic!("expected a blocked-branch error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_entry_data_is_refused() {
        let mut m = sf_extended();
        m.global.x_plus = Vector2::new(0.0, 0.0);
        let model = Model::Sf21(m);
        match rotation_coeffs(&model, 8, 1.0) {
            Err(HcError::EtaUndefined(_)) => {}
            other => panic!("expected an undefined-phase error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_leading_coefficient_is_refused() {
        let mut m = sf_minimal();
        m.global.a3 = Vector2::new(1.0, 0.0);
        m.global.x_plus = Vector2::new(0.5, 0.0);
        let model = Model::Sf21(m);
        match predict_cycle_quantities(&model, 8, 0.0, 1.0) {
            Err(HcError::AlphaStarDegenerate { value, .. }) => {
                assert!(value.abs() < 1e-8);
            }
            other => panic!("expected a degenerate-coefficient error, got {other:?}"),
        }
    }

    #[test]
    fn second_angle_margins_filter_the_return_length() {
        let mut m = bf_minimal();
        m.spectrum.omega2 = Some(FRAC_PI_2);
        let model = Model::Bf(m);
        match rotation_coeffs(&model, 1, 1.0) {
            Err(HcError::KFiltered(msg)) => assert!(msg.contains("cos")),
            other => panic!("expected a filtered return length, got {other:?}"),
        }
    }

    #[test]
    fn second_angle_reduction_satisfies_its_identities() {
        let model = Model::Bf(bf_minimal());
        let (b11, b31, b51, a2row) = match &model {
            Model::Bf(m) => (
                m.global.b11,
                m.global.b31,
                m.global.b51,
                (m.global.a[(1, 0)], m.global.a[(1, 1)]),
            ),
            _ => unreachable!(),
        };
        for k in [2u32, 3, 5, 8, 13] {
            let rc = match rotation_coeffs(&model, k, 1.0) {
                Ok(rc) => rc,
                Err(HcError::KFiltered(_)) => continue,
                Err(e) => panic!("unexpected failure: {e}"),
            };
            let bf = rc.bf.as_ref().unwrap();
            assert!((bf.b11_t * bf.denom - b11).abs() < 1e-12 * b11.abs().max(1.0));
            assert!(
                (bf.b31_t * bf.denom * bf.denom - b31).abs() < 1e-12 * b31.abs().max(1.0)
            );
            assert!((bf.b51_t * bf.denom - b51).abs() < 1e-12 * b51.abs().max(1.0));
            assert!(
                (bf.alpha5_t - bf.alpha_hat5_raw * bf.cos_k_omega2 / bf.denom).abs() < 1e-15
            );
            // The second explicit row has no linear Y coefficient, so its
            // rotated pair is unreduced.
            let (ah2, bh2) = super::rot_pair(a2row.0, a2row.1, rc.phase);
            assert_eq!(rc.alpha_hat2, ah2);
            assert_eq!(rc.beta_hat2, bh2);
            // Stacked implicit rows start with the reduced second-angle row.
            assert_eq!(rc.alpha_hat5[0], bf.alpha5_t);
            assert_eq!(rc.beta_hat5[0], bf.beta5_t);
        }
    }

    #[test]
    fn bifocus_branch_predictions_exist_and_follow_the_pattern() {
        let model = Model::Bf(bf_minimal());
        let mut found = None;
        'outer: for k in 4..40u32 {
            let mut omega = 0.05;
            while omega < 3.1 {
                if let Ok(bundle) = predict_homoclinic_quantities(&model, k, omega) {
                    found = Some((k, omega, bundle));
                    break 'outer;
                }
                omega += 0.05;
            }
        }
        let (_, _, bundle) = found.expect("some return length admits branch predictions");
        let h = bundle.require_homoclinic().unwrap();
        assert!(h.x_mag > 0.0 && h.y_mag > 0.0);
        assert_eq!(h.branches[1], [h.x_mag, -h.y_mag]);
        assert!(bundle.secondary.is_none());
    }
}
