//! The (Z, Y, W, V) coordinates that expose the return map's one-dimensional
//! quadratic core.
//!
//! The chain has four stages: deviations from the homoclinic base points in
//! cross form, a block substitution that decouples the strong directions from
//! the leading x/y pair, a shear and recentering that absorb the quadratic
//! cross terms and the leading constant drift, and finally a change of the
//! leading coordinate that folds the entire small (x, u)-dependence of the
//! expanding row into one variable Z. In these coordinates the return map is
//! a parabola in (Z, Y) with explicitly bounded remainders, which is what the
//! fixed-point and tangency solvers lean on for seeding and conditioning.
//!
//! The fold correction on Z is not written from coefficients; it is measured
//! from the map itself by evaluating the explicit output rows with the
//! expanding output prescribed. That keeps the chart an exact conjugation
//! rather than a truncation. The construction requires the local map to be
//! exactly linear; nonlinear local terms are refused rather than absorbed
//! approximately.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{DomainPolicy, Instance, PhasePoint, SfGerm};
use crate::error::{HcError, Result};

/// One verified remainder bound: the worst observed ratio of |h| (or a
/// derivative) to its budget over the sample grid, and where it occurred.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub name: &'static str,
    pub worst_ratio: f64,
    pub at: Vec<f64>,
}

/// Grid verification of the remainder structure of the conjugated map.
#[derive(Debug, Clone)]
pub struct ChartBoundsReport {
    pub k: u32,
    pub samples: usize,
    pub checks: Vec<BoundCheck>,
}

impl ChartBoundsReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.worst_ratio <= 1.0)
    }

    pub fn worst(&self) -> &BoundCheck {
        self.checks
            .iter()
            .max_by(|a, b| a.worst_ratio.total_cmp(&b.worst_ratio))
            .expect("report always carries checks")
    }
}

/// The coordinate change for one (k, omega) return map, with its derived
/// leading coefficients.
#[derive(Debug, Clone)]
pub struct NormalFormChart {
    pub k: u32,
    pub omega: f64,
    nu: usize,
    nv: usize,
    delta: f64,
    // Exact k-step local factors (linear local map).
    lam_rot: DMatrix<f64>,
    gam_k: f64,
    a_k: DMatrix<f64>,
    b_k: DMatrix<f64>,
    b_k_inv: DMatrix<f64>,
    lambda_k: f64,
    lambda_hat_k: f64,
    gamma_hat_k: f64,
    germ: SfGerm,
    // Transformation data.
    b4_over_b1: DVector<f64>,
    b5: DVector<f64>,
    /// Shear gain on Y per unit of the rotated x-deviation.
    cshear: f64,
    e_hat: [f64; 2],
    s_x: [f64; 2],
    s_u: DVector<f64>,
    s_v: DVector<f64>,
    g_prime0: f64,
    // Rotation-phase coefficients at k*omega.
    pub alpha_star: f64,
    pub beta_star: f64,
    /// Leading coefficients of the conjugated map, all per the derived
    /// closed forms (the x1-pair carries the shear correction).
    pub alpha1: f64,
    pub beta1: DVector<f64>,
    pub alpha3: DVector<f64>,
    pub beta3: DMatrix<f64>,
    pub alpha4: DVector<f64>,
    pub beta4: DMatrix<f64>,
    /// Constant term of the Y image at mu = 0, measured from the map.
    pub l0: f64,
    /// The measured Y-coefficient of the Z image at the origin.
    pub dz_dy_origin: f64,
    h_const: f64,
    l_const: f64,
    b1: f64,
    b3: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

impl NormalFormChart {
    pub fn build(instance: &Instance) -> Result<NormalFormChart> {
        let germ = instance
            .germ()
            .as_sf()
            .ok_or_else(|| {
                HcError::Config(
                    "the normal-form chart applies to the saddle-focus cross form only"
                        .to_string(),
                )
            })?
            .clone();
        let local = instance.local();
        if !local.is_linear() {
            return Err(HcError::UnsupportedNonlinearLocal(
                "the chart's correction constants are closed-form only when the local map \
                 is linear"
                    .to_string(),
            ));
        }
        let g = germ.global().clone();
        let (nu, nv) = (g.nu(), g.nv());
        if g.b1 == 0.0 || g.b3 == 0.0 {
            return Err(HcError::GenericityFailed(
                "the chart needs b1 != 0 and b3 != 0".to_string(),
            ));
        }
        let k = instance.k;
        let omega = instance.omega;
        let phase = k as f64 * omega;
        let (c, s) = (phase.cos(), phase.sin());
        let alpha_star = g.a3[0] * c + g.a3[1] * s;
        let beta_star = -g.a3[0] * s + g.a3[1] * c;
        let a3_norm = g.a3.norm();
        if alpha_star.abs() <= 1e-8 * a3_norm {
            return Err(HcError::AlphaStarDegenerate {
                value: alpha_star,
                phase,
            });
        }

        let lambda_k = local.lambda().powi(k as i32);
        let lam_rot = local.x_factor(k);
        let gam_k = local.gamma().powi(k as i32);
        let a_k = local.u_factor(k);
        let b_k = local.v_factor(k);
        let b_k_inv = if nv == 0 {
            DMatrix::zeros(0, 0)
        } else {
            b_k.clone()
                .lu()
                .solve(&DMatrix::identity(nv, nv))
                .ok_or_else(|| HcError::SingularJacobian("expanding v factor".to_string()))?
        };

        // Phase-rotated row coefficients at k*omega, with the shear
        // correction folded into the x1 pair.
        let hat = |r1: f64, r2: f64| (r1 * c + r2 * s, -r1 * s + r2 * c);
        let e_hat = {
            let (ea, eb) = hat(g.e1, g.e2);
            [ea, eb]
        };
        let half = g.b1 / (2.0 * g.b3);
        let (ah1_raw, bh1_raw) = hat(g.a[(0, 0)], g.a[(0, 1)]);
        let ah1 = ah1_raw - half * e_hat[0];
        let bh1 = bh1_raw - half * e_hat[1];
        let (ah2, bh2) = hat(g.a[(1, 0)], g.a[(1, 1)]);
        let b4_over_b1 = &g.b4 / g.b1;
        let mut ah4 = DVector::zeros(nu);
        let mut bh4 = DVector::zeros(nu);
        for i in 0..nu {
            let (a, b) = hat(g.a4[(i, 0)], g.a4[(i, 1)]);
            ah4[i] = a - b4_over_b1[i] * ah1;
            bh4[i] = b - b4_over_b1[i] * bh1;
        }
        let mut ah5 = DVector::zeros(nv);
        let mut bh5 = DVector::zeros(nv);
        for i in 0..nv {
            let (a, b) = hat(g.a5[(i, 0)], g.a5[(i, 1)]);
            ah5[i] = a;
            bh5[i] = b;
        }

        let (xp1, xp2) = (g.x_plus[0], g.x_plus[1]);
        let s_x = [
            lambda_k * (ah1 * xp1 + bh1 * xp2),
            lambda_k * (ah2 * xp1 + bh2 * xp2),
        ];
        let s_u = DVector::from_fn(nu, |i, _| lambda_k * (ah4[i] * xp1 + bh4[i] * xp2));
        let s_v = DVector::from_fn(nv, |i, _| lambda_k * (ah5[i] * xp1 + bh5[i] * xp2));

        // Leading coefficients of the conjugated map in (Z, W).
        let q = beta_star / alpha_star;
        let alpha1 = ah1 + ah2 * q;
        let mut beta1 = DVector::zeros(1 + nu);
        beta1[0] = alpha_star * bh1 + beta_star * bh2 - beta_star * ah1 - beta_star * q * ah2;
        let mut alpha3 = DVector::zeros(1 + nu);
        alpha3[0] = ah2 / alpha_star;
        let mut beta3 = DMatrix::zeros(1 + nu, 1 + nu);
        beta3[(0, 0)] = bh2 - ah2 * q;
        for i in 0..nu {
            alpha3[1 + i] = ah4[i] / alpha_star;
            beta3[(1 + i, 0)] = bh4[i] - ah4[i] * q;
        }
        let alpha4 = &ah5 / alpha_star;
        let mut beta4 = DMatrix::zeros(nv, 1 + nu);
        for i in 0..nv {
            beta4[(i, 0)] = bh5[i] - ah5[i] * q;
        }

        let mut chart = NormalFormChart {
            k,
            omega,
            nu,
            nv,
            delta: instance.delta(),
            lam_rot,
            gam_k,
            a_k,
            b_k,
            b_k_inv,
            lambda_k,
            lambda_hat_k: instance.lambda_hat().powi(k as i32),
            gamma_hat_k: instance.gamma_hat().powi(k as i32),
            germ,
            b4_over_b1,
            b5: g.b5.clone(),
            cshear: lambda_k / (2.0 * g.b3),
            e_hat,
            s_x,
            s_u,
            s_v,
            g_prime0: 0.0,
            alpha_star,
            beta_star,
            alpha1,
            beta1,
            alpha3,
            beta3,
            alpha4,
            beta4,
            l0: 0.0,
            dz_dy_origin: 0.0,
            h_const: instance.checks().h_const,
            l_const: instance.checks().l_const,
            b1: g.b1,
            b3: g.b3,
        };
        chart.g_prime0 = chart.g_prime(0.0, 0.0, &DVector::zeros(nu));

        // Measure the constant of the Y image and the Y-coefficient of the
        // Z image from the conjugated map itself, then verify both against
        // their closed-form leading parts.
        let lax = instance.clone().with_policy(DomainPolicy::Ignore);
        let origin = DVector::zeros(chart.dim());
        let image0 = chart.conjugated_return_map(&lax, &origin)?;
        chart.l0 = image0[1] - chart.gam_k * instance.mu;
        let jac0 = chart.conjugated_jacobian(&lax, &origin)?;
        chart.dz_dy_origin = jac0[(0, 1)];

        let b1_alpha = g.b1 * alpha_star;
        let dev = (chart.dz_dy_origin - b1_alpha).abs();
        if dev > chart.h_const * lambda_k * b1_alpha.abs() {
            return Err(HcError::StructuralForm(format!(
                "Y-coefficient of the Z image is {:.6e}, expected b1*alpha* = {:.6e} \
                 within {:.3e}",
                chart.dz_dy_origin,
                b1_alpha,
                chart.h_const * lambda_k * b1_alpha.abs()
            )));
        }
        let l_leading =
            -g.y_minus + lambda_k * chart.gam_k * (alpha_star * xp1 + beta_star * xp2);
        let l_dev = (chart.l0 - l_leading).abs();
        if l_dev > chart.l_const * chart.lambda_hat_k * chart.gam_k {
            return Err(HcError::StructuralForm(format!(
                "constant of the Y image at mu = 0 is {:.6e}, expected {:.6e} within {:.3e}",
                chart.l0,
                l_leading,
                chart.l_const * chart.lambda_hat_k * chart.gam_k
            )));
        }
        Ok(chart)
    }

    pub fn dim(&self) -> usize {
        3 + self.nu + self.nv
    }

    /// Constant term of the Y image at the given parameter value; the
    /// parameter enters the map additively, so this is exact.
    pub fn l_of(&self, mu: f64) -> f64 {
        self.l0 + self.gam_k * mu
    }

    pub fn b1_alpha_star(&self) -> f64 {
        self.b1 * self.alpha_star
    }

    pub fn b3_gamma_k(&self) -> f64 {
        self.b3 * self.gam_k
    }

    pub fn lambda_k(&self) -> f64 {
        self.lambda_k
    }

    pub fn gamma_k(&self) -> f64 {
        self.gam_k
    }

    fn e_form(&self, x1: f64, x2: f64) -> f64 {
        self.e_hat[0] * x1 + self.e_hat[1] * x2
    }

    /// The Y output of the half-shifted map on the section Y' = 0 with the
    /// expanding output prescribed to its base value. All rows are explicit
    /// here; this is the raw material for the fold correction on Z.
    fn g_prime(&self, x31: f64, x32: f64, u3: &DVector<f64>) -> f64 {
        let g = self.germ.global();
        let x1 = x31 + self.s_x[0];
        let x2 = x32 + self.s_x[1];
        let mut u = DVector::zeros(self.nu);
        for i in 0..self.nu {
            u[i] = u3[i] + self.s_u[i] + self.b4_over_b1[i] * x1;
        }
        let y_raw = -self.cshear * self.e_form(x1 + g.x_plus[0], x2 + g.x_plus[1]);
        let vars = self.row_vars(x1, x2, y_raw, &u, &DVector::zeros(self.nv));
        let ex = self.germ.explicit_rows(0.0, &vars);
        let xbar1 = ex[0] - g.x_plus[0];
        let xbar2 = ex[1] - g.x_plus[1];
        self.gam_k * ex[2] - g.y_minus + self.cshear * self.e_form(xbar1 + g.x_plus[0], xbar2 + g.x_plus[1])
    }

    /// Row-input variables of the explicit global rows from entry deviations
    /// (x, u), the exit-side Y deviation, and the prescribed raw exit-side V
    /// deviation of the image.
    fn row_vars(
        &self,
        x1: f64,
        x2: f64,
        y_raw: f64,
        u: &DVector<f64>,
        vbar_raw: &DVector<f64>,
    ) -> DVector<f64> {
        let g = self.germ.global();
        let mut vars = DVector::zeros(3 + self.nu + self.nv);
        let xt1 = self.lam_rot[(0, 0)] * (x1 + g.x_plus[0]) + self.lam_rot[(0, 1)] * (x2 + g.x_plus[1]);
        let xt2 = self.lam_rot[(1, 0)] * (x1 + g.x_plus[0]) + self.lam_rot[(1, 1)] * (x2 + g.x_plus[1]);
        vars[0] = xt1;
        vars[1] = xt2;
        vars[2] = y_raw;
        for i in 0..self.nu {
            let mut acc = 0.0;
            for j in 0..self.nu {
                acc += self.a_k[(i, j)] * (u[j] + g.u_plus[j]);
            }
            vars[3 + i] = acc;
        }
        for i in 0..self.nv {
            let mut acc = 0.0;
            for j in 0..self.nv {
                acc += self.b_k_inv[(i, j)] * (vbar_raw[j] + g.v_minus[j]);
            }
            vars[3 + self.nu + i] = acc;
        }
        vars
    }

    /// The measured fold correction: the nonlinear (x, u)-content of the Y
    /// image on the section Y' = 0, beyond the leading rotation pair.
    fn slice(&self, x31: f64, x32: f64, u3: &DVector<f64>) -> f64 {
        (self.g_prime(x31, x32, u3) - self.g_prime0) / self.gam_k
            - self.lambda_k * (self.alpha_star * x31 + self.beta_star * x32)
    }

    fn slice_grad(&self, x31: f64, x32: f64, u3: &DVector<f64>) -> (f64, f64, DVector<f64>) {
        let fd = |f: &dyn Fn(f64) -> f64, at: f64| {
            let h = 1e-6 * (1.0 + at.abs());
            (f(at + h) - f(at - h)) / (2.0 * h)
        };
        let d1 = fd(&|t| self.slice(t, x32, u3), x31);
        let d2 = fd(&|t| self.slice(x31, t, u3), x32);
        let mut du = DVector::zeros(self.nu);
        for i in 0..self.nu {
            du[i] = fd(
                &|t| {
                    let mut uu = u3.clone();
                    uu[i] = t;
                    self.slice(x31, x32, &uu)
                },
                u3[i],
            );
        }
        (d1, d2, du)
    }

    fn solve_x31(&self, z: f64, x32: f64, u3: &DVector<f64>) -> Result<f64> {
        let mut xi = (z - self.beta_star * x32) / self.alpha_star;
        let scale = 1.0 + z.abs() + self.alpha_star.abs() * (1.0 + xi.abs());
        let mut residual = f64::INFINITY;
        for _ in 0..60 {
            let f = self.alpha_star * xi + self.beta_star * x32
                + self.slice(xi, x32, u3) / self.lambda_k
                - z;
            residual = f.abs();
            if residual <= 1e-14 * scale {
                return Ok(xi);
            }
            let h = 1e-6 * (1.0 + xi.abs());
            let sp = (self.slice(xi + h, x32, u3) - self.slice(xi - h, x32, u3)) / (2.0 * h);
            let fp = self.alpha_star + sp / self.lambda_k;
            if fp == 0.0 {
                return Err(HcError::SingularJacobian(
                    "chart leading-coordinate solve".to_string(),
                ));
            }
            xi -= f / fp;
        }
        Err(HcError::NoConvergence {
            context: "chart leading-coordinate solve".to_string(),
            residual,
            iterations: 60,
        })
    }

    /// Phase point to chart coordinates [Z, Y, W.., V..].
    pub fn to_chart(&self, p: &PhasePoint) -> DVector<f64> {
        let g = self.germ.global();
        let (nu, nv) = (self.nu, self.nv);
        let x1 = p[0] - g.x_plus[0];
        let x2 = p[1] - g.x_plus[1];
        let y_fwd = self.gam_k * p[2];
        let yv = y_fwd - g.y_minus;
        let mut u = DVector::zeros(nu);
        for i in 0..nu {
            u[i] = p[3 + i] - g.u_plus[i];
        }
        let mut v = DVector::zeros(nv);
        for i in 0..nv {
            let mut acc = 0.0;
            for j in 0..nv {
                acc += self.b_k[(i, j)] * p[3 + nu + j];
            }
            v[i] = acc - g.v_minus[i];
        }
        let x31 = x1 - self.s_x[0];
        let x32 = x2 - self.s_x[1];
        let y3 = yv + self.cshear * self.e_form(x1 + g.x_plus[0], x2 + g.x_plus[1]);
        let mut u3 = DVector::zeros(nu);
        for i in 0..nu {
            u3[i] = u[i] - self.b4_over_b1[i] * x1 - self.s_u[i];
        }
        let mut out = DVector::zeros(self.dim());
        out[0] = self.alpha_star * x31 + self.beta_star * x32
            + self.slice(x31, x32, &u3) / self.lambda_k;
        out[1] = y3;
        out[2] = x32;
        for i in 0..nu {
            out[3 + i] = u3[i];
        }
        for i in 0..nv {
            out[3 + nu + i] = v[i] - self.b5[i] * yv - self.s_v[i];
        }
        out
    }

    /// Chart coordinates back to the phase point.
    pub fn from_chart(&self, c: &DVector<f64>) -> Result<PhasePoint> {
        let g = self.germ.global();
        let (nu, nv) = (self.nu, self.nv);
        let x32 = c[2];
        let u3 = c.rows(3, nu).into_owned();
        let x31 = self.solve_x31(c[0], x32, &u3)?;
        let x1 = x31 + self.s_x[0];
        let x2 = x32 + self.s_x[1];
        let yv = c[1] - self.cshear * self.e_form(x1 + g.x_plus[0], x2 + g.x_plus[1]);
        let mut p = DVector::zeros(self.dim());
        p[0] = x1 + g.x_plus[0];
        p[1] = x2 + g.x_plus[1];
        p[2] = (yv + g.y_minus) / self.gam_k;
        for i in 0..nu {
            p[3 + i] = u3[i] + self.s_u[i] + self.b4_over_b1[i] * x1 + g.u_plus[i];
        }
        if nv > 0 {
            let mut v_fwd = DVector::zeros(nv);
            for i in 0..nv {
                let v_dev = c[3 + nu + i] + self.s_v[i] + self.b5[i] * yv;
                v_fwd[i] = v_dev + g.v_minus[i];
            }
            let v_entry = &self.b_k_inv * v_fwd;
            for i in 0..nv {
                p[3 + nu + i] = v_entry[i];
            }
        }
        Ok(p)
    }

    fn check_compatible(&self, instance: &Instance) -> Result<()> {
        if instance.k != self.k
            || instance.omega != self.omega
            || instance.dim() != self.dim()
        {
            return Err(HcError::Config(
                "chart and return-map instance disagree on (k, omega) or dimensions".to_string(),
            ));
        }
        Ok(())
    }

    /// The return map seen through the chart.
    pub fn conjugated_return_map(
        &self,
        instance: &Instance,
        c: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_compatible(instance)?;
        let p = self.from_chart(c)?;
        let q = instance.return_map(&p)?;
        Ok(self.to_chart(&q))
    }

    /// Exact derivative of the chart at a phase point (the fold-correction
    /// gradient is measured by central differences of the measured slice).
    fn to_chart_jacobian(&self, p: &PhasePoint) -> DMatrix<f64> {
        let g = self.germ.global();
        let (nu, nv) = (self.nu, self.nv);
        let d = self.dim();
        let mut j = DMatrix::zeros(d, d);
        let x1 = p[0] - g.x_plus[0];
        let x2 = p[1] - g.x_plus[1];
        let x31 = x1 - self.s_x[0];
        let x32 = x2 - self.s_x[1];
        let mut u3 = DVector::zeros(nu);
        for i in 0..nu {
            u3[i] = p[3 + i] - g.u_plus[i] - self.b4_over_b1[i] * x1 - self.s_u[i];
        }
        let (d1, d2, du) = self.slice_grad(x31, x32, &u3);
        // Z row: through x31, x32 and u3, with u3 itself pulling in x1.
        let mut zx1 = self.alpha_star + d1 / self.lambda_k;
        let zx2 = self.beta_star + d2 / self.lambda_k;
        for i in 0..nu {
            zx1 -= du[i] / self.lambda_k * self.b4_over_b1[i];
        }
        j[(0, 0)] = zx1;
        j[(0, 1)] = zx2;
        for i in 0..nu {
            j[(0, 3 + i)] = du[i] / self.lambda_k;
        }
        // Y row.
        j[(1, 0)] = self.cshear * self.e_hat[0];
        j[(1, 1)] = self.cshear * self.e_hat[1];
        j[(1, 2)] = self.gam_k;
        // W rows.
        j[(2, 1)] = 1.0;
        for i in 0..nu {
            j[(3 + i, 0)] = -self.b4_over_b1[i];
            j[(3 + i, 3 + i)] = 1.0;
        }
        // V rows: forward factor minus the Y coupling.
        for i in 0..nv {
            for jj in 0..nv {
                j[(3 + nu + i, 3 + nu + jj)] = self.b_k[(i, jj)];
            }
            j[(3 + nu + i, 2)] = -self.b5[i] * self.gam_k;
        }
        j
    }

    /// Derivative of the conjugated map by the chain rule, with the exact
    /// return-map Jacobian in the middle.
    pub fn conjugated_jacobian(
        &self,
        instance: &Instance,
        c: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        self.check_compatible(instance)?;
        let p = self.from_chart(c)?;
        let (q, jmap) = instance.return_map_with_jacobian(&p)?;
        let jt_p = self.to_chart_jacobian(&p);
        let jt_q = self.to_chart_jacobian(&q);
        let d = self.dim();
        let inv = jt_p
            .lu()
            .solve(&DMatrix::identity(d, d))
            .ok_or_else(|| HcError::SingularJacobian("chart derivative".to_string()))?;
        Ok(jt_q * jmap * inv)
    }

    /// Explicit evaluation of the conjugated map with the image's raw
    /// exit-side V deviation prescribed: returns (Z image, Y image, W image,
    /// input V chart coordinate). This parameterizes the map by the variables
    /// the remainder bounds are stated in.
    fn prescribed_step(
        &self,
        mu: f64,
        z: f64,
        y: f64,
        w: &DVector<f64>,
        vbar_raw: &DVector<f64>,
    ) -> Result<(f64, f64, DVector<f64>, DVector<f64>)> {
        let g = self.germ.global();
        let (nu, nv) = (self.nu, self.nv);
        let x32 = w[0];
        let u3 = w.rows(1, nu).into_owned();
        let x31 = self.solve_x31(z, x32, &u3)?;
        let x1 = x31 + self.s_x[0];
        let x2 = x32 + self.s_x[1];
        let mut u = DVector::zeros(nu);
        for i in 0..nu {
            u[i] = u3[i] + self.s_u[i] + self.b4_over_b1[i] * x1;
        }
        let y_raw = y - self.cshear * self.e_form(x1 + g.x_plus[0], x2 + g.x_plus[1]);
        let vars = self.row_vars(x1, x2, y_raw, &u, vbar_raw);
        let ex = self.germ.explicit_rows(mu, &vars);

        let xb1 = ex[0] - g.x_plus[0];
        let xb2 = ex[1] - g.x_plus[1];
        let yb_raw = self.gam_k * ex[2] - g.y_minus;
        let xb31 = xb1 - self.s_x[0];
        let xb32 = xb2 - self.s_x[1];
        let yb3 = yb_raw + self.cshear * self.e_form(xb1 + g.x_plus[0], xb2 + g.x_plus[1]);
        let mut ub3 = DVector::zeros(nu);
        for i in 0..nu {
            ub3[i] = ex[3 + i] - g.u_plus[i] - self.b4_over_b1[i] * xb1 - self.s_u[i];
        }
        let zbar = self.alpha_star * xb31 + self.beta_star * xb32
            + self.slice(xb31, xb32, &ub3) / self.lambda_k;
        let mut wbar = DVector::zeros(1 + nu);
        wbar[0] = xb32;
        for i in 0..nu {
            wbar[1 + i] = ub3[i];
        }

        // Input-side V from the implicit rows (explicit in this direction).
        let mut v_chart = DVector::zeros(nv);
        for jrow in 0..nv {
            let mut acc = g.a5[(jrow, 0)] * vars[0] + g.a5[(jrow, 1)] * vars[1]
                + g.b5[jrow] * vars[2];
            for i in 0..nu {
                acc += g.c5[(jrow, i)] * vars[3 + i];
            }
            for i in 0..nv {
                acc += g.d5[(jrow, i)] * vars[3 + nu + i];
            }
            acc += g.tails[3 + nu + jrow].eval(vars.as_slice());
            v_chart[jrow] = acc - self.b5[jrow] * y_raw - self.s_v[jrow];
        }
        Ok((zbar, yb3, wbar, v_chart))
    }

    fn h_values(
        &self,
        mu: f64,
        l_base: f64,
        z: f64,
        y: f64,
        w: &DVector<f64>,
        vbar: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (zbar, ybar, wbar, v_in) = self.prescribed_step(mu, z, y, w, vbar)?;
        let lamk = self.lambda_k;
        let nw = 1 + self.nu;
        let mut h = DVector::zeros(2 + nw + self.nv);
        h[0] = zbar
            - lamk * self.alpha1 * z
            - self.b1 * self.alpha_star * y
            - lamk * self.beta1.dot(w);
        h[1] = (ybar - l_base - lamk * self.gam_k * z - self.b3 * self.gam_k * y * y)
            / self.gam_k;
        for i in 0..nw {
            let mut lin = lamk * self.alpha3[i] * z;
            for jj in 0..nw {
                lin += lamk * self.beta3[(i, jj)] * w[jj];
            }
            h[2 + i] = wbar[i] - lin;
        }
        for i in 0..self.nv {
            let mut lin = lamk * self.alpha4[i] * z;
            for jj in 0..nw {
                lin += lamk * self.beta4[(i, jj)] * w[jj];
            }
            h[2 + nw + i] = v_in[i] - lin;
        }
        Ok(h)
    }

    /// Verify the remainder magnitude and derivative budgets of the
    /// conjugated map on a full grid over the chart box.
    pub fn residual_report(&self, mu: f64, nodes: usize) -> Result<ChartBoundsReport> {
        let (nu, nv) = (self.nu, self.nv);
        let nw = 1 + nu;
        let naxes = 2 + nw + nv;
        let axis = linspace(-self.delta, self.delta, nodes);
        let l_base = {
            let (_, y0, _, _) =
                self.prescribed_step(mu, 0.0, 0.0, &DVector::zeros(nw), &DVector::zeros(nv))?;
            y0
        };
        let lamk = self.lambda_k;
        let lhat = self.lambda_hat_k;
        let ghat_inv = 1.0 / self.gamma_hat_k;
        let hc = self.h_const;

        // Budget functions per residual row class and differentiation class.
        let val_budget = |row: usize, y: f64| {
            if row == 1 {
                hc * (lhat + y.abs().powi(3))
            } else {
                hc * (lhat + lamk * y.abs() + y * y)
            }
        };
        let dzw_budget = |row: usize, y: f64| {
            if row == 1 {
                hc * lhat
            } else {
                hc * (lhat + lamk * y.abs())
            }
        };
        let dy_budget = |row: usize, y: f64| {
            if row == 1 {
                hc * (lhat + y * y)
            } else {
                hc * (lamk + y.abs())
            }
        };
        let dv_budget = |_row: usize, _y: f64| hc * ghat_inv;

        let mut checks = vec![
            BoundCheck { name: "h1 value", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h2 value", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h3 value", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h4 value", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h1 d(z,w)", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h2 d(z,w)", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h3 d(z,w)", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h4 d(z,w)", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h1 dy", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h2 dy", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h3 dy", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h4 dy", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h1 dv", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h2 dv", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h3 dv", worst_ratio: 0.0, at: vec![] },
            BoundCheck { name: "h4 dv", worst_ratio: 0.0, at: vec![] },
        ];
        // Map a residual-vector index to its row class 0..4.
        let row_class = |idx: usize| -> usize {
            if idx == 0 {
                0
            } else if idx == 1 {
                1
            } else if idx < 2 + nw {
                2
            } else {
                3
            }
        };

        let mut counter = vec![0usize; naxes];
        let mut samples = 0usize;
        loop {
            let coords: Vec<f64> = counter.iter().map(|&i| axis[i]).collect();
            let z = coords[0];
            let y = coords[1];
            let w = DVector::from_fn(nw, |i, _| coords[2 + i]);
            let vbar = DVector::from_fn(nv, |i, _| coords[2 + nw + i]);
            samples += 1;

            let h0 = self.h_values(mu, l_base, z, y, &w, &vbar)?;
            let mut update = |slot: usize, num: f64, den: f64| {
                let ratio = num.abs() / den;
                if ratio > checks[slot].worst_ratio {
                    checks[slot].worst_ratio = ratio;
                    checks[slot].at = coords.clone();
                }
            };
            for idx in 0..h0.len() {
                let rc = row_class(idx);
                update(rc, h0[idx], val_budget(rc, y));
            }

            // Directional derivatives by central differences.
            let step = 1e-5;
            let eval = |z: f64, y: f64, w: &DVector<f64>, vb: &DVector<f64>| {
                self.h_values(mu, l_base, z, y, w, vb)
            };
            // d/dz and d/dw share a budget class.
            let dz = (eval(z + step, y, &w, &vbar)? - eval(z - step, y, &w, &vbar)?)
                / (2.0 * step);
            for idx in 0..dz.len() {
                let rc = row_class(idx);
                update(4 + rc, dz[idx], dzw_budget(rc, y));
            }
            for wi in 0..nw {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[wi] += step;
                wm[wi] -= step;
                let dw = (eval(z, y, &wp, &vbar)? - eval(z, y, &wm, &vbar)?) / (2.0 * step);
                for idx in 0..dw.len() {
                    let rc = row_class(idx);
                    update(4 + rc, dw[idx], dzw_budget(rc, y));
                }
            }
            let dy = (eval(z, y + step, &w, &vbar)? - eval(z, y - step, &w, &vbar)?)
                / (2.0 * step);
            for idx in 0..dy.len() {
                let rc = row_class(idx);
                update(8 + rc, dy[idx], dy_budget(rc, y));
            }
            for vi in 0..nv {
                let mut vp = vbar.clone();
                let mut vm = vbar.clone();
                vp[vi] += step;
                vm[vi] -= step;
                let dv = (eval(z, y, &w, &vp)? - eval(z, y, &w, &vm)?) / (2.0 * step);
                for idx in 0..dv.len() {
                    let rc = row_class(idx);
                    update(12 + rc, dv[idx], dv_budget(rc, y));
                }
            }

            // Advance the grid counter.
            let mut axis_i = 0;
            loop {
                if axis_i == naxes {
                    return Ok(ChartBoundsReport {
                        k: self.k,
                        samples,
                        checks,
                    });
                }
                counter[axis_i] += 1;
                if counter[axis_i] < axis.len() {
                    break;
                }
                counter[axis_i] = 0;
                axis_i += 1;
            }
        }
    }

    /// Structured text dump of the transformation data.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "chart k={} omega={:.12}\n  alpha*={:.12e} beta*={:.12e}\n",
            self.k, self.omega, self.alpha_star, self.beta_star
        ));
        out.push_str(&format!(
            "  shifts: s_x=({:.6e}, {:.6e}) s_u={:?} s_v={:?}\n",
            self.s_x[0],
            self.s_x[1],
            self.s_u.as_slice(),
            self.s_v.as_slice()
        ));
        out.push_str(&format!(
            "  shear: {:.6e} * ({:.6e}, {:.6e})\n",
            self.cshear, self.e_hat[0], self.e_hat[1]
        ));
        out.push_str(&format!(
            "  leading: alpha1={:.6e} beta1={:?} alpha3={:?} alpha4={:?}\n",
            self.alpha1,
            self.beta1.as_slice(),
            self.alpha3.as_slice(),
            self.alpha4.as_slice()
        ));
        out.push_str(&format!(
            "  L(0)={:.12e} dZ/dY(0)={:.12e} (b1*alpha*={:.12e})\n",
            self.l0,
            self.dz_dy_origin,
            self.b1_alpha_star()
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models::{sf_extended, sf_minimal};
    use crate::model::{LocalTails, Model, SfModel};
    use crate::poly::Poly;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chart_for(model: &Model, k: u32, mu: f64) -> (Instance, NormalFormChart) {
        let inst = Instance::new(model, k, mu, model.spectrum().omega).unwrap();
        let chart = NormalFormChart::build(&inst).unwrap();
        (inst, chart)
    }

    fn sample_chart_point(rng: &mut ChaCha8Rng, dim: usize, delta: f64) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| rng.gen_range(-delta..delta))
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for model in [Model::Sf21(sf_minimal()), Model::Sf21(sf_extended())] {
            for k in [8u32, 14] {
                let (inst, chart) = chart_for(&model, k, 0.0);
                for _ in 0..1000 {
                    let c = sample_chart_point(&mut rng, chart.dim(), inst.delta());
                    let p = chart.from_chart(&c).unwrap();
                    let back = chart.to_chart(&p);
                    assert!(
                        (back - &c).amax() < 1e-12,
                        "chart -> phase -> chart drifted at k={k}"
                    );
                    let c2 = chart.to_chart(&p);
                    let p2 = chart.from_chart(&c2).unwrap();
                    assert!((p2 - &p).amax() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conjugation_reproduces_the_return_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for model in [Model::Sf21(sf_minimal()), Model::Sf21(sf_extended())] {
            for k in [8u32, 10, 12, 14] {
                let inst = Instance::new(&model, k, 1e-4, model.spectrum().omega).unwrap();
                let chart = NormalFormChart::build(&inst).unwrap();
                let l = inst.layout();
                let entry = inst.germ().entry_base();
                let exit = inst.germ().exit_base();
                let gk = model.spectrum().gamma.powi(k as i32);
                for _ in 0..250 {
                    // A phase point with cross deviations inside the section.
                    let mut p = entry.clone();
                    p[0] += rng.gen_range(-0.99..0.99) * inst.delta();
                    p[1] += rng.gen_range(-0.99..0.99) * inst.delta();
                    p[2] = (exit[2] + rng.gen_range(-0.99..0.99) * inst.delta()) / gk;
                    for i in 0..l.nu {
                        p[l.u_start() + i] += rng.gen_range(-0.99..0.99) * inst.delta();
                    }
                    if l.nv > 0 {
                        let vt = DVector::from_fn(l.nv, |i, _| {
                            exit[l.v_start() + i] + rng.gen_range(-0.99..0.99) * inst.delta()
                        });
                        let v_entry = inst.local().v_factor(k).lu().solve(&vt).unwrap();
                        for i in 0..l.nv {
                            p[l.v_start() + i] = v_entry[i];
                        }
                    }
                    let direct = inst.return_map(&p).unwrap();
                    let via_chart = chart
                        .from_chart(&chart.conjugated_return_map(&inst, &chart.to_chart(&p)).unwrap())
                        .unwrap();
                    assert!(
                        (via_chart - &direct).amax() < 1e-9,
                        "conjugation drifted at k={k}"
                    );
                }
            }
        }
    }

    #[test]
    fn leading_structure_matches_the_closed_forms() {
        for k in [8u32, 12] {
            let model = Model::Sf21(sf_extended());
            let (inst, chart) = chart_for(&model, k, 0.0);
            // The build already enforces both identities; confirm the
            // measured values and the advertised scales directly.
            let lamk = model.spectrum().lambda.powi(k as i32);
            let lhat = model.spectrum().lambda_hat.powi(k as i32);
            let gk = model.spectrum().gamma.powi(k as i32);
            let g = inst.germ().as_sf().unwrap().global().clone();
            assert!(
                (chart.dz_dy_origin - chart.b1_alpha_star()).abs()
                    <= 10.0 * lamk * chart.b1_alpha_star().abs()
            );
            let l_leading = -g.y_minus
                + lamk * gk * (chart.alpha_star * g.x_plus[0] + chart.beta_star * g.x_plus[1]);
            assert!((chart.l0 - l_leading).abs() <= 10.0 * lhat * gk);
            // mu enters the Y constant exactly additively.
            let inst_mu = Instance::new(&model, k, 0.02, model.spectrum().omega).unwrap();
            let chart_mu = NormalFormChart::build(&inst_mu).unwrap();
            assert!((chart_mu.l0 - chart.l0).abs() < 1e-11);
            assert!((chart.l_of(0.02) - (chart.l0 + gk * 0.02)).abs() < 1e-15);
        }
    }

    #[test]
    fn remainder_budgets_hold_on_the_grid() {
        for model in [Model::Sf21(sf_minimal()), Model::Sf21(sf_extended())] {
            for k in [8u32, 12] {
                let (_inst, chart) = chart_for(&model, k, 1e-4);
                let nodes = if chart.dim() > 3 { 4 } else { 7 };
                let report = chart.residual_report(1e-4, nodes).unwrap();
                assert!(
                    report.all_hold(),
                    "k={k}: worst {} ratio {:.3} at {:?}",
                    report.worst().name,
                    report.worst().worst_ratio,
                    report.worst().at
                );
            }
        }
    }

    #[test]
    fn conjugated_jacobian_matches_finite_differences() {
        let model = Model::Sf21(sf_extended());
        let inst = Instance::new(&model, 9, 5e-4, model.spectrum().omega)
            .unwrap()
            .with_policy(DomainPolicy::Ignore);
        let chart = NormalFormChart::build(&inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..10 {
            let c = sample_chart_point(&mut rng, chart.dim(), 0.5 * inst.delta());
            let jac = chart.conjugated_jacobian(&inst, &c).unwrap();
            let fd = crate::linalg::fd_jacobian(
                |xs| {
                    Ok(chart
                        .conjugated_return_map(&inst, &DVector::from_row_slice(xs))?
                        .as_slice()
                        .to_vec())
                },
                c.as_slice(),
                1e-6,
            )
            .unwrap();
            let scale = jac.amax().max(1.0);
            assert!((jac - fd).amax() <= 2e-5 * scale);
        }
    }

    #[test]
    fn degenerate_leading_phase_is_refused() {
        let base = sf_minimal();
        let mut global = base.global.clone();
        global.a3[0] = 1.0;
        global.a3[1] = 0.0;
        let model = Model::Sf21(
            SfModel::new(
                base.spectrum.clone(),
                base.local.clone(),
                global,
                base.domain,
                None,
                base.checks,
            )
            .unwrap(),
        );
        // One local step at omega = pi/2 puts the rotation phase exactly at
        // a zero of the leading coefficient.
        let inst = Instance::new(&model, 1, 0.0, std::f64::consts::FRAC_PI_2).unwrap();
        match NormalFormChart::build(&inst).unwrap_err() {
            HcError::AlphaStarDegenerate { value, .. } => assert!(value.abs() < 1e-12),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn nonlinear_local_maps_are_refused() {
        let base = sf_minimal();
        let mut tails = LocalTails::zero(base.layout());
        tails.g1 = Poly::from_terms(3, &[(vec![2, 0, 1], 0.05)]).unwrap();
        let model = Model::Sf21(
            SfModel::new(
                base.spectrum.clone(),
                tails,
                base.global.clone(),
                base.domain,
                None,
                base.checks,
            )
            .unwrap(),
        );
        let inst = Instance::new(&model, 8, 0.0, model.spectrum().omega).unwrap();
        assert!(matches!(
            NormalFormChart::build(&inst).unwrap_err(),
            HcError::UnsupportedNonlinearLocal(_)
        ));
    }
}
