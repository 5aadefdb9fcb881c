//! Model germs: the local map around the periodic point and the global map
//! along the homoclinic orbit, in straightened coordinates.
//!
//! Coordinates split into blocks (x, y, u, v): x is the 2-dimensional central
//! stable plane (a contracting rotation), y the central unstable direction
//! (scalar for a saddle-focus, a 2-dimensional expanding rotation for a
//! bi-focus), u the strong stable block, v the strong unstable block. The
//! global map is written in cross form: its last block of equations is
//! implicit in the output v (and output y2 for the bi-focus) and has to be
//! solved when evaluating.
//!
//! Construction validates everything that would make the maps unevaluable or
//! structurally wrong (spectrum ordering, forbidden linear terms, invariance
//! identities of the local tails). Nondegeneracy of individual coefficients
//! is *reported*, not enforced: `check_genericity` returns a per-condition
//! verdict with margins so that deliberately degenerate models can be probed.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{HcError, Result};
use crate::linalg;
use crate::poly::Poly;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Sf21,
    Bf,
}

/// Block layout of phase-space variables: (x1, x2, y.., u.., v..).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    /// Central unstable dimension: 1 (saddle-focus) or 2 (bi-focus).
    pub dcu: usize,
    pub nu: usize,
    pub nv: usize,
}

impl VarLayout {
    pub fn dim(&self) -> usize {
        2 + self.dcu + self.nu + self.nv
    }

    pub fn y_start(&self) -> usize {
        2
    }

    pub fn u_start(&self) -> usize {
        2 + self.dcu
    }

    pub fn v_start(&self) -> usize {
        2 + self.dcu + self.nu
    }

    /// Total degrees of an exponent tuple per block: (x, y, u, v).
    pub fn block_degrees(&self, e: &[u8]) -> (usize, usize, usize, usize) {
        debug_assert_eq!(e.len(), self.dim());
        let s = |r: std::ops::Range<usize>| e[r].iter().map(|&p| p as usize).sum::<usize>();
        (
            s(0..2),
            s(self.y_start()..self.u_start()),
            s(self.u_start()..self.v_start()),
            s(self.v_start()..self.dim()),
        )
    }
}

/// Multipliers of the periodic point and the chosen remainder bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSpectrum {
    /// Modulus of the central stable pair, in (0,1).
    pub lambda: f64,
    /// Argument of the central stable pair, in (0, pi).
    pub omega: f64,
    /// Central unstable multiplier: signed real with |gamma| > 1 for the
    /// saddle-focus; modulus (> 1) of the unstable pair for the bi-focus.
    pub gamma: f64,
    /// Argument of the central unstable pair (bi-focus only), in (0, pi).
    pub omega2: Option<f64>,
    /// Strong stable block, spectral radius < lambda.
    pub a: DMatrix<f64>,
    /// Strong unstable block, all eigenvalue moduli > |gamma|.
    pub b: DMatrix<f64>,
    /// Remainder bound for the stable side, in (spectralRadius(a), lambda),
    /// also required to exceed lambda^2 and 1/|gamma|.
    pub lambda_hat: f64,
    /// Remainder bound for the unstable side, in (|gamma|, min |eig b|);
    /// bi-focus additionally requires gamma_hat < gamma / lambda.
    pub gamma_hat: f64,
}

impl LocalSpectrum {
    pub fn nu(&self) -> usize {
        self.a.nrows()
    }

    pub fn nv(&self) -> usize {
        self.b.nrows()
    }

    pub fn spectral_radius_a(&self) -> f64 {
        if self.a.is_empty() {
            0.0
        } else {
            linalg::eigenvalues_sorted(&self.a)[0].norm()
        }
    }

    pub fn min_modulus_b(&self) -> f64 {
        if self.b.is_empty() {
            f64::INFINITY
        } else {
            linalg::eigenvalues_sorted(&self.b)
                .last()
                .unwrap()
                .norm()
        }
    }

    fn validate(&self, kind: ModelKind) -> Result<()> {
        let fail = |msg: String| Err(HcError::SpectrumOrdering(msg));
        if !self.a.is_square() || !self.b.is_square() {
            return fail("strong blocks must be square matrices".into());
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return fail(format!("lambda = {} must lie in (0,1)", self.lambda));
        }
        if !(self.omega > 0.0 && self.omega < std::f64::consts::PI) {
            return fail(format!("omega = {} must lie in (0,pi)", self.omega));
        }
        match kind {
            ModelKind::Sf21 => {
                if self.omega2.is_some() {
                    return fail("omega2 is a bi-focus field".into());
                }
                if self.gamma.abs() <= 1.0 {
                    return fail(format!("|gamma| = {} must exceed 1", self.gamma.abs()));
                }
            }
            ModelKind::Bf => {
                let om2 = self
                    .omega2
                    .ok_or_else(|| HcError::SpectrumOrdering("bi-focus requires omega2".into()))?;
                if !(om2 > 0.0 && om2 < std::f64::consts::PI) {
                    return fail(format!("omega2 = {om2} must lie in (0,pi)"));
                }
                if self.gamma <= 1.0 {
                    return fail(format!(
                        "gamma = {} (modulus of the unstable pair) must exceed 1",
                        self.gamma
                    ));
                }
            }
        }
        if (self.lambda * self.gamma).abs() <= 1.0 {
            return fail(format!(
                "|lambda*gamma| = {} must exceed 1",
                (self.lambda * self.gamma).abs()
            ));
        }
        let sr_a = self.spectral_radius_a();
        if sr_a >= self.lambda {
            return fail(format!(
                "spectral radius of the strong stable block ({sr_a}) must be < lambda"
            ));
        }
        let min_b = self.min_modulus_b();
        if min_b <= self.gamma.abs() {
            return fail(format!(
                "min eigenvalue modulus of the strong unstable block ({min_b}) must exceed |gamma|"
            ));
        }
        if !(self.lambda_hat > sr_a && self.lambda_hat < self.lambda) {
            return fail(format!(
                "lambda_hat = {} must lie in ({sr_a}, {})",
                self.lambda_hat, self.lambda
            ));
        }
        if self.lambda_hat <= self.lambda * self.lambda {
            return fail(format!(
                "lambda_hat = {} must exceed lambda^2 = {}",
                self.lambda_hat,
                self.lambda * self.lambda
            ));
        }
        if self.lambda_hat <= 1.0 / self.gamma.abs() {
            return fail(format!(
                "lambda_hat = {} must exceed 1/|gamma| = {}",
                self.lambda_hat,
                1.0 / self.gamma.abs()
            ));
        }
        if !(self.gamma_hat > self.gamma.abs() && self.gamma_hat < min_b) {
            return fail(format!(
                "gamma_hat = {} must lie in ({}, {min_b})",
                self.gamma_hat,
                self.gamma.abs()
            ));
        }
        if kind == ModelKind::Bf && 1.0 / self.gamma_hat <= self.lambda / self.gamma {
            return fail(format!(
                "bi-focus requires gamma_hat < gamma/lambda = {}",
                self.gamma / self.lambda
            ));
        }
        Ok(())
    }
}

/// Optional higher-order terms of the local map, one polynomial per output
/// component, in the variables (x1, x2, y.., u.., v..).
///
/// Shapes are constrained so that the straightened coordinates stay honest:
/// both local invariant manifolds remain the coordinate planes, and the
/// leading cross-form asymptotics keep zero remainder in the linear
/// directions. Each shape requirement is checked monomial by monomial.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTails {
    pub g1: Poly,
    pub g2: Poly,
    pub g3: Vec<Poly>,
    pub g4: Vec<Poly>,
    pub g5: Vec<Poly>,
}

impl LocalTails {
    pub fn zero(layout: VarLayout) -> Self {
        let d = layout.dim();
        LocalTails {
            g1: Poly::zero(d),
            g2: Poly::zero(d),
            g3: vec![Poly::zero(d); layout.dcu],
            g4: vec![Poly::zero(d); layout.nu],
            g5: vec![Poly::zero(d); layout.nv],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.g1.is_zero()
            && self.g2.is_zero()
            && self.g3.iter().all(Poly::is_zero)
            && self.g4.iter().all(Poly::is_zero)
            && self.g5.iter().all(Poly::is_zero)
    }

    fn validate(&self, layout: VarLayout) -> Result<()> {
        if self.g3.len() != layout.dcu
            || self.g4.len() != layout.nu
            || self.g5.len() != layout.nv
        {
            return Err(HcError::Config(
                "local tail component counts do not match block dimensions".into(),
            ));
        }
        let check = |which: &str, p: &Poly, need_xu: bool, need_yv: bool, forbid: Forbid| {
            if p.nvars() != layout.dim() {
                return Err(HcError::Config(format!(
                    "{which} has {} variables, expected {}",
                    p.nvars(),
                    layout.dim()
                )));
            }
            for (e, _) in p.terms() {
                let (dx, dy, du, dv) = layout.block_degrees(e);
                let reject = |reason: &str| {
                    Err(HcError::IdentityViolation {
                        which: which.to_string(),
                        monomial: format!("{e:?}"),
                        reason: reason.to_string(),
                    })
                };
                if dx + dy + du + dv < 2 {
                    return reject("local tails must be of second or higher order");
                }
                if need_xu && dx + du == 0 {
                    return reject("must vanish on the local unstable plane x = u = 0");
                }
                if need_yv && dy + dv == 0 {
                    return reject("must vanish on the local stable plane y = v = 0");
                }
                match forbid {
                    Forbid::LinearX if dx == 1 && du == 0 => {
                        return reject(
                            "x-derivative must vanish on the local unstable plane x = u = 0",
                        );
                    }
                    Forbid::LinearY if dy == 1 && dv == 0 => {
                        return reject(
                            "y-derivative must vanish on the local stable plane y = v = 0",
                        );
                    }
                    _ => {}
                }
            }
            Ok(())
        };
        check("g1", &self.g1, true, true, Forbid::LinearX)?;
        check("g2", &self.g2, true, true, Forbid::LinearX)?;
        for (i, p) in self.g3.iter().enumerate() {
            check(&format!("g3[{i}]"), p, true, true, Forbid::LinearY)?;
        }
        for (i, p) in self.g4.iter().enumerate() {
            check(&format!("g4[{i}]"), p, true, false, Forbid::LinearX)?;
        }
        for (i, p) in self.g5.iter().enumerate() {
            check(&format!("g5[{i}]"), p, false, true, Forbid::LinearY)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Forbid {
    LinearX,
    LinearY,
}

/// Global map coefficients, saddle-focus cross form.
///
/// Output rows are x1, x2, y, u (explicit) and the implicit row giving the
/// input-side deviation of v-tilde in terms of the *output* v. Row inputs are
/// (x1~, x2~, Y, u~, v) with Y the deviation of y-tilde from its base value.
/// The x2 row has no linear Y term and the y row's tangency is quadratic:
/// both facts are structural (there are simply no such coefficient fields)
/// and the polynomial tails are validated not to reintroduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct SfGlobal {
    pub x_plus: Vector2<f64>,
    pub u_plus: DVector<f64>,
    pub y_minus: f64,
    pub v_minus: DVector<f64>,
    /// Rows (a11 a12; a21 a22) for the two x outputs.
    pub a: Matrix2<f64>,
    /// (a31, a32): x-row of the y output.
    pub a3: Vector2<f64>,
    /// nu x 2: x-rows of the u outputs.
    pub a4: DMatrix<f64>,
    /// nv x 2: x-rows of the implicit v rows.
    pub a5: DMatrix<f64>,
    pub b1: f64,
    /// Quadratic tangency coefficient in the y row.
    pub b3: f64,
    pub b4: DVector<f64>,
    pub b5: DVector<f64>,
    pub c1: DVector<f64>,
    pub c2: DVector<f64>,
    pub c3: DVector<f64>,
    pub c4: DMatrix<f64>,
    pub c5: DMatrix<f64>,
    pub d1: DVector<f64>,
    pub d2: DVector<f64>,
    pub d3: DVector<f64>,
    pub d4: DMatrix<f64>,
    pub d5: DMatrix<f64>,
    /// Coefficients of x1~*Y and x2~*Y in the y row.
    pub e1: f64,
    pub e2: f64,
    /// Second-and-higher-order tails per output row, in the row input
    /// variables; the explicit quadratic pieces above must not be duplicated.
    pub tails: Vec<Poly>,
}

impl SfGlobal {
    pub fn nu(&self) -> usize {
        self.u_plus.len()
    }

    pub fn nv(&self) -> usize {
        self.v_minus.len()
    }

    /// Variable layout of the row inputs (x1~, x2~, Y, u~, v).
    pub fn input_layout(&self) -> VarLayout {
        VarLayout {
            dcu: 1,
            nu: self.nu(),
            nv: self.nv(),
        }
    }

    fn validate(&self) -> Result<()> {
        let (nu, nv) = (self.nu(), self.nv());
        let dims_ok = self.a4.shape() == (nu, 2)
            && self.a5.shape() == (nv, 2)
            && self.b4.len() == nu
            && self.b5.len() == nv
            && self.c1.len() == nu
            && self.c2.len() == nu
            && self.c3.len() == nu
            && self.c4.shape() == (nu, nu)
            && self.c5.shape() == (nv, nu)
            && self.d1.len() == nv
            && self.d2.len() == nv
            && self.d3.len() == nv
            && self.d4.shape() == (nu, nv)
            && self.d5.shape() == (nv, nv);
        if !dims_ok {
            return Err(HcError::Config(
                "global coefficient block dimensions are inconsistent".into(),
            ));
        }
        let layout = self.input_layout();
        let nrows = 3 + nu + nv;
        if self.tails.len() != nrows {
            return Err(HcError::Config(format!(
                "expected {nrows} tail rows, got {}",
                self.tails.len()
            )));
        }
        for (r, p) in self.tails.iter().enumerate() {
            if p.nvars() != layout.dim() {
                return Err(HcError::Config(format!(
                    "tail row {r} has {} variables, expected {}",
                    p.nvars(),
                    layout.dim()
                )));
            }
            for (e, _) in p.terms() {
                let deg: usize = e.iter().map(|&q| q as usize).sum();
                if deg < 2 {
                    return Err(HcError::StructuralForm(format!(
                        "tail row {r} contains a linear or constant monomial {e:?}; \
                         linear structure lives in the explicit coefficients"
                    )));
                }
            }
        }
        // The y row's quadratic normal form is carried by b3, e1, e2; the
        // tail must not alias them.
        let y_tail = &self.tails[2];
        let d = layout.dim();
        let mono = |ix: &[(usize, u8)]| {
            let mut e = vec![0u8; d];
            for &(i, p) in ix {
                e[i] = p;
            }
            e
        };
        if y_tail.coeff(&mono(&[(2, 2)])) != 0.0 {
            return Err(HcError::StructuralForm(
                "pure quadratic Y term in the y row belongs to the b3 coefficient".into(),
            ));
        }
        if y_tail.coeff(&mono(&[(0, 1), (2, 1)])) != 0.0
            || y_tail.coeff(&mono(&[(1, 1), (2, 1)])) != 0.0
        {
            return Err(HcError::StructuralForm(
                "x~*Y cross terms in the y row belong to the e1, e2 coefficients".into(),
            ));
        }
        // The implicit rows must be solvable for the output v.
        if nv > 0 && !self.d5.clone().lu().is_invertible() {
            return Err(HcError::StructuralForm(
                "the implicit v block (d5) is singular; the global map cannot be evaluated"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Global map coefficients, bi-focus cross form.
///
/// Output rows are x1, x2, y1, u (explicit) plus two implicit rows for the
/// input-side deviations of y2-tilde and v-tilde in terms of the output
/// (y2, v). Row inputs are (x1~, x2~, Y1, y2, u~, v). The x2 row has no
/// linear Y1 term; the y1 row has neither linear Y1 nor linear y2.
#[derive(Debug, Clone, PartialEq)]
pub struct BfGlobal {
    pub x_plus: Vector2<f64>,
    pub u_plus: DVector<f64>,
    pub y_minus: Vector2<f64>,
    pub v_minus: DVector<f64>,
    pub a: Matrix2<f64>,
    pub a3: Vector2<f64>,
    pub a4: DMatrix<f64>,
    /// (a51, a52): x-row of the implicit y2 row.
    pub a5: Vector2<f64>,
    /// nv x 2: x-rows of the implicit v rows.
    pub a6: DMatrix<f64>,
    pub b11: f64,
    pub b12: f64,
    pub b22: f64,
    pub b31: f64,
    pub b41: DVector<f64>,
    pub b42: DVector<f64>,
    pub b51: f64,
    pub b52: f64,
    pub b61: DVector<f64>,
    pub b62: DVector<f64>,
    pub c1: DVector<f64>,
    pub c2: DVector<f64>,
    pub c3: DVector<f64>,
    pub c4: DMatrix<f64>,
    pub c5: DVector<f64>,
    pub c6: DMatrix<f64>,
    pub d1: DVector<f64>,
    pub d2: DVector<f64>,
    pub d3: DVector<f64>,
    pub d4: DMatrix<f64>,
    pub d5: DVector<f64>,
    pub d6: DMatrix<f64>,
    /// Coefficients of x1~*Y1 and x2~*Y1 in the y1 row.
    pub e1: f64,
    pub e2: f64,
    pub tails: Vec<Poly>,
}

impl BfGlobal {
    pub fn nu(&self) -> usize {
        self.u_plus.len()
    }

    pub fn nv(&self) -> usize {
        self.v_minus.len()
    }

    /// Variable layout of the row inputs (x1~, x2~, Y1, y2, u~, v).
    pub fn input_layout(&self) -> VarLayout {
        VarLayout {
            dcu: 2,
            nu: self.nu(),
            nv: self.nv(),
        }
    }

    /// Jacobian of the implicit rows (y2-row, v-rows) with respect to the
    /// output (y2, v), at the linear level.
    pub fn implicit_block(&self) -> DMatrix<f64> {
        let nv = self.nv();
        let mut m = DMatrix::zeros(1 + nv, 1 + nv);
        m[(0, 0)] = self.b52;
        for j in 0..nv {
            m[(0, 1 + j)] = self.d5[j];
        }
        for i in 0..nv {
            m[(1 + i, 0)] = self.b62[i];
            for j in 0..nv {
                m[(1 + i, 1 + j)] = self.d6[(i, j)];
            }
        }
        m
    }

    fn validate(&self) -> Result<()> {
        let (nu, nv) = (self.nu(), self.nv());
        let dims_ok = self.a4.shape() == (nu, 2)
            && self.a6.shape() == (nv, 2)
            && self.b41.len() == nu
            && self.b42.len() == nu
            && self.b61.len() == nv
            && self.b62.len() == nv
            && self.c1.len() == nu
            && self.c2.len() == nu
            && self.c3.len() == nu
            && self.c4.shape() == (nu, nu)
            && self.c5.len() == nu
            && self.c6.shape() == (nv, nu)
            && self.d1.len() == nv
            && self.d2.len() == nv
            && self.d3.len() == nv
            && self.d4.shape() == (nu, nv)
            && self.d5.len() == nv
            && self.d6.shape() == (nv, nv);
        if !dims_ok {
            return Err(HcError::Config(
                "global coefficient block dimensions are inconsistent".into(),
            ));
        }
        let layout = self.input_layout();
        let nrows = 4 + nu + nv;
        if self.tails.len() != nrows {
            return Err(HcError::Config(format!(
                "expected {nrows} tail rows, got {}",
                self.tails.len()
            )));
        }
        for (r, p) in self.tails.iter().enumerate() {
            if p.nvars() != layout.dim() {
                return Err(HcError::Config(format!(
                    "tail row {r} has {} variables, expected {}",
                    p.nvars(),
                    layout.dim()
                )));
            }
            for (e, _) in p.terms() {
                let deg: usize = e.iter().map(|&q| q as usize).sum();
                if deg < 2 {
                    return Err(HcError::StructuralForm(format!(
                        "tail row {r} contains a linear or constant monomial {e:?}"
                    )));
                }
            }
        }
        let y_tail = &self.tails[2];
        let d = layout.dim();
        let mono = |ix: &[(usize, u8)]| {
            let mut e = vec![0u8; d];
            for &(i, p) in ix {
                e[i] = p;
            }
            e
        };
        if y_tail.coeff(&mono(&[(2, 2)])) != 0.0 {
            return Err(HcError::StructuralForm(
                "pure quadratic Y1 term in the y1 row belongs to the b31 coefficient".into(),
            ));
        }
        if y_tail.coeff(&mono(&[(0, 1), (2, 1)])) != 0.0
            || y_tail.coeff(&mono(&[(1, 1), (2, 1)])) != 0.0
        {
            return Err(HcError::StructuralForm(
                "x~*Y1 cross terms in the y1 row belong to the e1, e2 coefficients".into(),
            ));
        }
        if !self.implicit_block().lu().is_invertible() {
            return Err(HcError::StructuralForm(
                "the implicit (y2, v) block is singular; the global map cannot be evaluated"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Domain sizes for the return-map boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    /// Half-size of the boxes around the homoclinic points.
    pub delta: f64,
    /// Multiplicative slack on box membership tests (Newton iterates graze
    /// boundaries).
    pub slack: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            delta: 0.1,
            slack: 1.05,
        }
    }
}

/// Fitted cone-field constants, frozen into config once found.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSpec {
    pub k1_cs: f64,
    pub k2_cs: f64,
    pub k1_ss: f64,
    pub k2_ss: f64,
    pub k1_cu: f64,
    pub k2_cu: f64,
    pub k_uu: f64,
    /// Weakened strong unstable cone (used when the v-block has been reduced
    /// away); opening grows like K1*|Y| + K2 instead of shrinking with k.
    pub k1_uu: Option<f64>,
    pub k2_uu: Option<f64>,
    /// Contraction constant: strong stable vectors contract by c * lambda^k.
    pub contraction_c: f64,
    /// Smallest return iterate count at which the constants are certified.
    pub k0: u32,
}

impl Default for ConeSpec {
    fn default() -> Self {
        ConeSpec {
            k1_cs: 1.0,
            k2_cs: 1.0,
            k1_ss: 1.0,
            k2_ss: 1.0,
            k1_cu: 1.0,
            k2_cu: 1.0,
            k_uu: 1.0,
            k1_uu: None,
            k2_uu: None,
            contraction_c: 10.0,
            k0: 8,
        }
    }
}

/// Constants for the structural residual checks of the normal-form chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckSpec {
    /// Magnitude constant for the residual bounds of the conjugated map.
    pub h_const: f64,
    /// Magnitude constant for the constant-term identity of the y image.
    pub l_const: f64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        CheckSpec {
            h_const: 10.0,
            l_const: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfModel {
    pub spectrum: LocalSpectrum,
    pub local: LocalTails,
    pub global: SfGlobal,
    pub domain: DomainSpec,
    pub cones: Option<ConeSpec>,
    pub checks: CheckSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfModel {
    pub spectrum: LocalSpectrum,
    pub local: LocalTails,
    pub global: BfGlobal,
    pub domain: DomainSpec,
    pub cones: Option<ConeSpec>,
    pub checks: CheckSpec,
}

impl SfModel {
    pub fn new(
        spectrum: LocalSpectrum,
        local: LocalTails,
        global: SfGlobal,
        domain: DomainSpec,
        cones: Option<ConeSpec>,
        checks: CheckSpec,
    ) -> Result<Self> {
        spectrum.validate(ModelKind::Sf21)?;
        global.validate()?;
        if spectrum.nu() != global.nu() || spectrum.nv() != global.nv() {
            return Err(HcError::Config(
                "spectrum and global block dimensions disagree".into(),
            ));
        }
        let layout = VarLayout {
            dcu: 1,
            nu: global.nu(),
            nv: global.nv(),
        };
        local.validate(layout)?;
        if domain.delta <= 0.0 || domain.slack < 1.0 {
            return Err(HcError::Config(
                "delta must be positive and slack at least 1".into(),
            ));
        }
        Ok(SfModel {
            spectrum,
            local,
            global,
            domain,
            cones,
            checks,
        })
    }

    pub fn layout(&self) -> VarLayout {
        VarLayout {
            dcu: 1,
            nu: self.global.nu(),
            nv: self.global.nv(),
        }
    }

    pub fn dim(&self) -> usize {
        self.layout().dim()
    }

    /// Stable dimension: the central pair plus the strong stable block.
    pub fn d_s(&self) -> usize {
        2 + self.global.nu()
    }

    /// Unstable dimension: the central multiplier plus the strong block.
    pub fn d_u(&self) -> usize {
        1 + self.global.nv()
    }

    pub fn is_linear_local(&self) -> bool {
        self.local.is_zero()
    }
}

impl BfModel {
    pub fn new(
        spectrum: LocalSpectrum,
        local: LocalTails,
        global: BfGlobal,
        domain: DomainSpec,
        cones: Option<ConeSpec>,
        checks: CheckSpec,
    ) -> Result<Self> {
        spectrum.validate(ModelKind::Bf)?;
        global.validate()?;
        if spectrum.nu() != global.nu() || spectrum.nv() != global.nv() {
            return Err(HcError::Config(
                "spectrum and global block dimensions disagree".into(),
            ));
        }
        let layout = VarLayout {
            dcu: 2,
            nu: global.nu(),
            nv: global.nv(),
        };
        local.validate(layout)?;
        if domain.delta <= 0.0 || domain.slack < 1.0 {
            return Err(HcError::Config(
                "delta must be positive and slack at least 1".into(),
            ));
        }
        Ok(BfModel {
            spectrum,
            local,
            global,
            domain,
            cones,
            checks,
        })
    }

    pub fn layout(&self) -> VarLayout {
        VarLayout {
            dcu: 2,
            nu: self.global.nu(),
            nv: self.global.nv(),
        }
    }

    pub fn dim(&self) -> usize {
        self.layout().dim()
    }

    pub fn d_s(&self) -> usize {
        2 + self.global.nu()
    }

    pub fn d_u(&self) -> usize {
        2 + self.global.nv()
    }

    pub fn is_linear_local(&self) -> bool {
        self.local.is_zero()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Sf21(SfModel),
    Bf(BfModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Sf21(_) => ModelKind::Sf21,
            Model::Bf(_) => ModelKind::Bf,
        }
    }

    pub fn spectrum(&self) -> &LocalSpectrum {
        match self {
            Model::Sf21(m) => &m.spectrum,
            Model::Bf(m) => &m.spectrum,
        }
    }

    pub fn domain(&self) -> DomainSpec {
        match self {
            Model::Sf21(m) => m.domain,
            Model::Bf(m) => m.domain,
        }
    }

    pub fn layout(&self) -> VarLayout {
        match self {
            Model::Sf21(m) => m.layout(),
            Model::Bf(m) => m.layout(),
        }
    }

    pub fn dim(&self) -> usize {
        self.layout().dim()
    }

    pub fn as_sf(&self) -> Option<&SfModel> {
        match self {
            Model::Sf21(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_bf(&self) -> Option<&BfModel> {
        match self {
            Model::Bf(m) => Some(m),
            _ => None,
        }
    }
}

/// One nondegeneracy condition: the raw deciding scalars and the distance to
/// violation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConditionReport {
    pub name: &'static str,
    pub holds: bool,
    pub witness: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GenericityReport {
    pub conditions: Vec<ConditionReport>,
    /// Derived frequency-shift scalars used by the secondary transversality
    /// argument; recorded for diagnostics.
    pub s1: f64,
    pub s2: f64,
}

impl GenericityReport {
    pub fn all_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn min_margin(&self) -> f64 {
        self.conditions
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// The disjunction deciding whether the tangency splits at nonzero speed in
/// the frequency direction: three scalars, any one nonzero suffices.
fn c6_witnesses(
    a: &Matrix2<f64>,
    a3: &Vector2<f64>,
    x_plus: &Vector2<f64>,
    b1: f64,
    b3: f64,
    e1: f64,
    e2: f64,
) -> Vec<f64> {
    let (xp1, xp2) = (x_plus[0], x_plus[1]);
    let nx2 = xp1 * xp1 + xp2 * xp2;
    let w1 = a[(0, 0)] - (b1 * b1 * (xp1 * a3[0] - xp2 * a3[1]) / (2.0 * b3 * nx2) + xp1 / xp2 * a[(1, 0)]);
    let w2 = a[(0, 1)] - (b1 * b1 * (xp2 * a3[0] + xp1 * a3[1]) / (2.0 * b3 * nx2) + xp1 / xp2 * a[(1, 1)]);
    let w3 = e1 * xp1 + e2 * xp2;
    vec![w1, w2, w3]
}

fn s1_s2(
    a: &Matrix2<f64>,
    a3: &Vector2<f64>,
    x_plus: &Vector2<f64>,
    b1: f64,
    b3: f64,
) -> (f64, f64) {
    let (xp1, xp2) = (x_plus[0], x_plus[1]);
    let q = b1 * b1 / (2.0 * b3);
    let s1 = q * a3[0] - xp1 * a[(0, 0)] - xp2 * a[(0, 1)]
        + xp1 * xp1 / xp2 * a[(1, 0)]
        + xp1 * a[(1, 1)];
    let s2 = q * a3[1] - xp1 * a[(0, 1)] + xp2 * a[(0, 0)]
        + xp1 * xp1 / xp2 * a[(1, 1)]
        - xp1 * a[(1, 0)];
    (s1, s2)
}

fn disjunction_margin(ws: &[f64]) -> f64 {
    ws.iter()
        .filter(|w| w.is_finite())
        .map(|w| w.abs())
        .fold(0.0, f64::max)
}

pub fn check_genericity(model: &Model) -> GenericityReport {
    match model {
        Model::Sf21(m) => {
            let g = &m.global;
            let det_d5 = if g.nv() == 0 {
                1.0
            } else {
                g.d5.determinant()
            };
            let a3_norm2 = g.a3[0] * g.a3[0] + g.a3[1] * g.a3[1];
            let x_norm = g.x_plus.norm();
            let ws = c6_witnesses(&g.a, &g.a3, &g.x_plus, g.b1, g.b3, g.e1, g.e2);
            let (s1, s2) = s1_s2(&g.a, &g.a3, &g.x_plus, g.b1, g.b3);
            let cond = |name, witness: Vec<f64>, margin: f64| ConditionReport {
                name,
                holds: margin > 0.0,
                witness,
                margin,
            };
            GenericityReport {
                conditions: vec![
                    cond("C1", vec![g.b1], g.b1.abs()),
                    cond("C2", vec![g.b3], g.b3.abs()),
                    cond(
                        "C3",
                        vec![det_d5, a3_norm2],
                        det_d5.abs().min(a3_norm2),
                    ),
                    cond(
                        "C4",
                        vec![x_norm, g.y_minus],
                        x_norm.min(g.y_minus.abs()),
                    ),
                    cond("C5.1", vec![g.x_plus[1]], g.x_plus[1].abs()),
                    cond("C6.1", ws.clone(), disjunction_margin(&ws)),
                ],
                s1,
                s2,
            }
        }
        Model::Bf(m) => {
            let g = &m.global;
            let det_d6 = if g.nv() == 0 {
                1.0
            } else {
                g.d6.determinant()
            };
            let a3_norm2 = g.a3[0] * g.a3[0] + g.a3[1] * g.a3[1];
            let x_norm = g.x_plus.norm();
            let y_norm = g.y_minus.norm();
            let ws = c6_witnesses(&g.a, &g.a3, &g.x_plus, g.b11, g.b31, g.e1, g.e2);
            let (s1, s2) = s1_s2(&g.a, &g.a3, &g.x_plus, g.b11, g.b31);
            let cond = |name, witness: Vec<f64>, margin: f64| ConditionReport {
                name,
                holds: margin > 0.0,
                witness,
                margin,
            };
            GenericityReport {
                conditions: vec![
                    cond("C1", vec![g.b11], g.b11.abs()),
                    cond("C2", vec![g.b31], g.b31.abs()),
                    cond(
                        "C3",
                        vec![det_d6, a3_norm2, g.b52],
                        det_d6.abs().min(a3_norm2).min(g.b52.abs()),
                    ),
                    cond("C4", vec![x_norm, y_norm], x_norm.min(y_norm)),
                    cond("C5.2", vec![g.x_plus[1]], g.x_plus[1].abs()),
                    cond("C6.2", ws.clone(), disjunction_margin(&ws)),
                ],
                s1,
                s2,
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod test_models {
    use super::*;

    /// Minimal 3-dimensional saddle-focus model used across unit tests.
    /// Coefficients chosen so every nondegeneracy condition holds with a
    /// comfortable margin and the central return strength |lambda*gamma| > 1.
    pub fn sf_minimal() -> SfModel {
        let spectrum = LocalSpectrum {
            lambda: 0.7,
            omega: 1.0,
            gamma: 1.6,
            omega2: None,
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 0),
            lambda_hat: 0.66,
            gamma_hat: 2.2,
        };
        let layout = VarLayout {
            dcu: 1,
            nu: 0,
            nv: 0,
        };
        let global = SfGlobal {
            x_plus: Vector2::new(0.03, -0.04),
            u_plus: DVector::zeros(0),
            y_minus: 0.09,
            v_minus: DVector::zeros(0),
            a: Matrix2::new(0.3, 0.06, 0.05, 0.28),
            a3: Vector2::new(2.5, 0.35),
            a4: DMatrix::zeros(0, 2),
            a5: DMatrix::zeros(0, 2),
            b1: 14.0,
            b3: 200.0,
            b4: DVector::zeros(0),
            b5: DVector::zeros(0),
            c1: DVector::zeros(0),
            c2: DVector::zeros(0),
            c3: DVector::zeros(0),
            c4: DMatrix::zeros(0, 0),
            c5: DMatrix::zeros(0, 0),
            d1: DVector::zeros(0),
            d2: DVector::zeros(0),
            d3: DVector::zeros(0),
            d4: DMatrix::zeros(0, 0),
            d5: DMatrix::zeros(0, 0),
            e1: 0.25,
            e2: -0.2,
            tails: vec![Poly::zero(3); 3],
        };
        SfModel::new(
            spectrum,
            LocalTails::zero(layout),
            global,
            DomainSpec::default(),
            None,
            CheckSpec::default(),
        )
        .unwrap()
    }

    /// Five-dimensional variant with one strong stable and one strong
    /// unstable direction.
    pub fn sf_extended() -> SfModel {
        let spectrum = LocalSpectrum {
            lambda: 0.7,
            omega: 1.0,
            gamma: 1.6,
            omega2: None,
            a: DMatrix::from_row_slice(1, 1, &[0.3]),
            b: DMatrix::from_row_slice(1, 1, &[2.6]),
            lambda_hat: 0.66,
            gamma_hat: 2.2,
        };
        let layout = VarLayout {
            dcu: 1,
            nu: 1,
            nv: 1,
        };
        let global = SfGlobal {
            x_plus: Vector2::new(0.03, -0.04),
            u_plus: DVector::from_row_slice(&[0.02]),
            y_minus: 0.09,
            v_minus: DVector::from_row_slice(&[0.03]),
            a: Matrix2::new(0.3, 0.06, 0.05, 0.28),
            a3: Vector2::new(2.5, 0.35),
            a4: DMatrix::from_row_slice(1, 2, &[0.1, -0.05]),
            a5: DMatrix::from_row_slice(1, 2, &[0.08, 0.04]),
            b1: 14.0,
            b3: 200.0,
            b4: DVector::from_row_slice(&[0.2]),
            b5: DVector::from_row_slice(&[0.3]),
            c1: DVector::from_row_slice(&[0.05]),
            c2: DVector::from_row_slice(&[-0.04]),
            c3: DVector::from_row_slice(&[0.06]),
            c4: DMatrix::from_row_slice(1, 1, &[0.25]),
            c5: DMatrix::from_row_slice(1, 1, &[0.05]),
            d1: DVector::from_row_slice(&[0.03]),
            d2: DVector::from_row_slice(&[0.02]),
            d3: DVector::from_row_slice(&[-0.04]),
            d4: DMatrix::from_row_slice(1, 1, &[0.06]),
            d5: DMatrix::from_row_slice(1, 1, &[1.3]),
            e1: 0.25,
            e2: -0.2,
            tails: vec![Poly::zero(5); 5],
        };
        SfModel::new(
            spectrum,
            LocalTails::zero(layout),
            global,
            DomainSpec::default(),
            None,
            CheckSpec::default(),
        )
        .unwrap()
    }

    /// Minimal 4-dimensional bi-focus model.
    pub fn bf_minimal() -> BfModel {
        let spectrum = LocalSpectrum {
            lambda: 0.7,
            omega: 1.0,
            gamma: 1.6,
            omega2: Some(1.0),
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 0),
            lambda_hat: 0.66,
            gamma_hat: 2.0,
        };
        let layout = VarLayout {
            dcu: 2,
            nu: 0,
            nv: 0,
        };
        let global = BfGlobal {
            x_plus: Vector2::new(0.03, -0.04),
            u_plus: DVector::zeros(0),
            y_minus: Vector2::new(0.2, 0.1),
            v_minus: DVector::zeros(0),
            a: Matrix2::new(0.3, 0.06, 0.05, 0.28),
            a3: Vector2::new(2.5, 0.35),
            a4: DMatrix::zeros(0, 2),
            a5: Vector2::new(0.1, -0.06),
            a6: DMatrix::zeros(0, 2),
            b11: 2.0,
            b12: 0.15,
            b22: 0.4,
            b31: 1.0,
            b41: DVector::zeros(0),
            b42: DVector::zeros(0),
            b51: 0.3,
            b52: 1.2,
            b61: DVector::zeros(0),
            b62: DVector::zeros(0),
            c1: DVector::zeros(0),
            c2: DVector::zeros(0),
            c3: DVector::zeros(0),
            c4: DMatrix::zeros(0, 0),
            c5: DVector::zeros(0),
            c6: DMatrix::zeros(0, 0),
            d1: DVector::zeros(0),
            d2: DVector::zeros(0),
            d3: DVector::zeros(0),
            d4: DMatrix::zeros(0, 0),
            d5: DVector::zeros(0),
            d6: DMatrix::zeros(0, 0),
            e1: 0.25,
            e2: -0.2,
            tails: vec![Poly::zero(4); 4],
        };
        BfModel::new(
            spectrum,
            LocalTails::zero(layout),
            global,
            DomainSpec::default(),
            None,
            CheckSpec::default(),
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_models::{bf_minimal, sf_extended, sf_minimal};
    use super::*;

    #[test]
    fn minimal_models_build_and_pass_genericity() {
        let sf = Model::Sf21(sf_minimal());
        let rep = check_genericity(&sf);
        assert!(rep.all_hold(), "conditions: {:?}", rep.conditions);
        assert!(rep.min_margin() > 1e-6);
        assert_eq!(rep.get("C5.1").unwrap().witness, vec![-0.04]);

        let ext = Model::Sf21(sf_extended());
        assert!(check_genericity(&ext).all_hold());

        let bf = Model::Bf(bf_minimal());
        let rep = check_genericity(&bf);
        assert!(rep.all_hold(), "conditions: {:?}", rep.conditions);
        assert!(rep.get("C5.2").is_some());
        assert!(rep.get("C5.1").is_none());
    }

    #[test]
    fn genericity_is_pure() {
        let m = Model::Sf21(sf_minimal());
        assert_eq!(check_genericity(&m), check_genericity(&m));
    }

    #[test]
    fn weak_central_expansion_is_rejected() {
        let mut m = sf_minimal();
        m.spectrum.gamma = 1.2; // |lambda*gamma| = 0.84 < 1
        let err = SfModel::new(
            m.spectrum,
            m.local,
            m.global,
            m.domain,
            None,
            CheckSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, HcError::SpectrumOrdering(_)), "{err}");
    }

    #[test]
    fn remainder_bounds_are_range_checked() {
        let mut m = sf_minimal();
        m.spectrum.lambda_hat = 0.5; // below 1/gamma = 0.625
        let err = SfModel::new(
            m.spectrum,
            m.local,
            m.global,
            m.domain,
            None,
            CheckSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, HcError::SpectrumOrdering(_)), "{err}");
    }

    #[test]
    fn local_tail_identity_violations_are_caught() {
        let m = sf_minimal();
        let layout = m.layout();
        // g3 containing x1^2: nonzero on the stable plane y = v = 0.
        let mut bad = LocalTails::zero(layout);
        bad.g3[0] = Poly::from_terms(3, &[(vec![2, 0, 0], 0.1)]).unwrap();
        let err = SfModel::new(
            m.spectrum.clone(),
            bad,
            m.global.clone(),
            m.domain,
            None,
            CheckSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, HcError::IdentityViolation { .. }), "{err}");

        // g1 containing x1*y: kills the clean leading asymptotics.
        let mut bad = LocalTails::zero(layout);
        bad.g1 = Poly::from_terms(3, &[(vec![1, 0, 1], 0.1)]).unwrap();
        let err = SfModel::new(
            m.spectrum.clone(),
            bad,
            m.global.clone(),
            m.domain,
            None,
            CheckSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, HcError::IdentityViolation { .. }), "{err}");

        // x1^2 * y is fine for g1: second order in (x, u) with a (y, v) factor.
        let mut ok = LocalTails::zero(layout);
        ok.g1 = Poly::from_terms(3, &[(vec![2, 0, 1], 0.1)]).unwrap();
        assert!(SfModel::new(
            m.spectrum.clone(),
            ok,
            m.global.clone(),
            m.domain,
            None,
            CheckSpec::default(),
        )
        .is_ok());
    }

    #[test]
    fn duplicated_quadratic_structure_is_rejected() {
        let m = sf_minimal();
        let mut g = m.global.clone();
        // Pure Y^2 in the y row duplicates the b3 coefficient.
        g.tails[2] = Poly::from_terms(3, &[(vec![0, 0, 2], 1.0)]).unwrap();
        let err = SfModel::new(
            m.spectrum.clone(),
            m.local.clone(),
            g,
            m.domain,
            None,
            CheckSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, HcError::StructuralForm(_)), "{err}");

        let mut g = m.global.clone();
        // A linear monomial in a tail row is structural, not higher order.
        g.tails[0] = Poly::from_terms(3, &[(vec![0, 0, 1], 0.5)]).unwrap();
        let err = SfModel::new(
            m.spectrum.clone(),
            m.local.clone(),
            g,
            m.domain,
            None,
            CheckSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, HcError::StructuralForm(_)), "{err}");
    }

    #[test]
    fn degenerate_coefficients_fail_their_conditions() {
        let mut m = sf_minimal();
        m.global.x_plus[1] = 0.0;
        let rep = check_genericity(&Model::Sf21(m));
        assert!(!rep.get("C5.1").unwrap().holds);

        let mut m = sf_minimal();
        m.global.b3 = 0.0;
        let rep = check_genericity(&Model::Sf21(m));
        assert!(!rep.get("C2").unwrap().holds);
        // The disjunction stays decidable through its finite witness.
        assert!(rep.get("C6.1").unwrap().margin.is_finite());
    }

    #[test]
    fn dims_and_layout() {
        let m = sf_extended();
        assert_eq!(m.dim(), 5);
        assert_eq!(m.d_s(), 3);
        assert_eq!(m.d_u(), 2);
        let l = m.layout();
        assert_eq!(l.u_start(), 3);
        assert_eq!(l.v_start(), 4);
        let bf = bf_minimal();
        assert_eq!(bf.dim(), 4);
        assert_eq!(bf.d_s(), 2);
        assert_eq!(bf.d_u(), 2);
    }
}
