//! Evaluation of the two half-maps and their composition into first-return
//! maps, with exact Jacobians throughout.
//!
//! A phase point is a flat vector in the block order (x1, x2, y.., u.., v..).
//! The local map contracts x and u and expands y and v; iterating it k times
//! and applying the global map gives the k-step return map. The global map is
//! written in cross form: its strong-unstable rows are implicit (the
//! input-side deviation of the forward v value is prescribed, the output v is
//! solved for), which is what keeps the return map well defined on a full box
//! around the homoclinic points even though v expands.
//!
//! Everything is parameterized by the unfolding pair (mu, omega): mu shifts
//! the splitting of the y row of the global map, omega replaces the rotation
//! frequency of the central contracting pair.

use nalgebra::{DMatrix, DVector};

use crate::error::{HcError, Result};
use crate::linalg::{mat_pow, rot2};
use crate::model::{BfGlobal, CheckSpec, LocalSpectrum, LocalTails, Model, SfGlobal, VarLayout};
use crate::newton::{self, NewtonOptions};

pub type PhasePoint = DVector<f64>;

/// Whether evaluations enforce the section boxes and the local escape check.
/// Solvers iterate with `Ignore` and re-check membership at the solution;
/// certification paths run with `Enforce`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DomainPolicy {
    #[default]
    Enforce,
    Ignore,
}

fn implicit_newton_opts() -> NewtonOptions {
    NewtonOptions {
        max_iter: 50,
        tol: 1e-13,
        max_halvings: 30,
    }
}

/// The local map around the periodic point: a contracting rotation in x, an
/// expanding y block (scalar, or a rotation for the bi-focus), strong blocks
/// in u and v, plus optional polynomial tails.
#[derive(Debug, Clone)]
pub struct LocalMap {
    layout: VarLayout,
    lambda: f64,
    omega: f64,
    gamma: f64,
    /// Rotation frequency of the expanding pair (bi-focus only).
    omega2: Option<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    tails: LocalTails,
    linear: bool,
    /// Half-size of the box in which iterates must stay under `Enforce`.
    box_radius: f64,
}

impl LocalMap {
    pub fn new(
        spectrum: &LocalSpectrum,
        layout: VarLayout,
        tails: &LocalTails,
        omega: f64,
        box_radius: f64,
    ) -> Self {
        debug_assert!(layout.dcu == 1 || spectrum.omega2.is_some());
        LocalMap {
            layout,
            lambda: spectrum.lambda,
            omega,
            gamma: spectrum.gamma,
            omega2: spectrum.omega2,
            a: spectrum.a.clone(),
            b: spectrum.b.clone(),
            tails: tails.clone(),
            linear: tails.is_zero(),
            box_radius,
        }
    }

    pub fn layout(&self) -> VarLayout {
        self.layout
    }

    pub fn is_linear(&self) -> bool {
        self.linear
    }

    pub fn box_radius(&self) -> f64 {
        self.box_radius
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn omega2(&self) -> Option<f64> {
        self.omega2
    }

    pub fn in_box(&self, p: &PhasePoint) -> bool {
        p.iter().all(|c| c.abs() <= self.box_radius)
    }

    /// Exact k-step factor of the x block: lambda^k * R(k*omega).
    pub fn x_factor(&self, k: u32) -> DMatrix<f64> {
        rot2(k as f64 * self.omega) * self.lambda.powi(k as i32)
    }

    /// Exact k-step factor of the y block.
    pub fn y_factor(&self, k: u32) -> DMatrix<f64> {
        let gk = self.gamma.powi(k as i32);
        match self.omega2 {
            Some(om2) if self.layout.dcu == 2 => rot2(k as f64 * om2) * gk,
            _ => DMatrix::from_element(1, 1, gk),
        }
    }

    pub fn u_factor(&self, k: u32) -> DMatrix<f64> {
        mat_pow(&self.a, k)
    }

    pub fn v_factor(&self, k: u32) -> DMatrix<f64> {
        mat_pow(&self.b, k)
    }

    pub fn step(&self, p: &PhasePoint) -> PhasePoint {
        let l = &self.layout;
        let mut q = DVector::zeros(l.dim());
        let (c, s) = (self.omega.cos(), self.omega.sin());
        q[0] = self.lambda * (c * p[0] - s * p[1]);
        q[1] = self.lambda * (s * p[0] + c * p[1]);
        match (l.dcu, self.omega2) {
            (2, Some(om2)) => {
                let (c2, s2) = (om2.cos(), om2.sin());
                q[2] = self.gamma * (c2 * p[2] - s2 * p[3]);
                q[3] = self.gamma * (s2 * p[2] + c2 * p[3]);
            }
            _ => q[2] = self.gamma * p[2],
        }
        for i in 0..l.nu {
            let mut acc = 0.0;
                for j in 0..l.nu {
                acc += self.a[(i, j)] * p[l.u_start() + j];
            }
            q[l.u_start() + i] = acc;
        }
        for i in 0..l.nv {
            let mut acc = 0.0;
            for j in 0..l.nv {
                acc += self.b[(i, j)] * p[l.v_start() + j];
            }
            q[l.v_start() + i] = acc;
        }
        if !self.linear {
            let xs = p.as_slice();
            q[0] += self.tails.g1.eval(xs);
            q[1] += self.tails.g2.eval(xs);
            for (i, g) in self.tails.g3.iter().enumerate() {
                q[2 + i] += g.eval(xs);
            }
            for (i, g) in self.tails.g4.iter().enumerate() {
                q[l.u_start() + i] += g.eval(xs);
            }
            for (i, g) in self.tails.g5.iter().enumerate() {
                q[l.v_start() + i] += g.eval(xs);
            }
        }
        q
    }

    /// Linear part of one step (tails excluded), as a matrix.
    pub fn linear_step(&self) -> DMatrix<f64> {
        let l = &self.layout;
        let d = l.dim();
        let mut m = DMatrix::zeros(d, d);
        m.view_mut((0, 0), (2, 2)).copy_from(&self.x_factor(1));
        let yf = self.y_factor(1);
        m.view_mut((2, 2), (l.dcu, l.dcu)).copy_from(&yf);
        m.view_mut((l.u_start(), l.u_start()), (l.nu, l.nu))
            .copy_from(&self.a);
        m.view_mut((l.v_start(), l.v_start()), (l.nv, l.nv))
            .copy_from(&self.b);
        m
    }

    pub fn step_jacobian(&self, p: &PhasePoint) -> DMatrix<f64> {
        let mut j = self.linear_step();
        if !self.linear {
            let l = &self.layout;
            let xs = p.as_slice();
            let mut add_row = |row: usize, g: &crate::poly::Poly| {
                for (col, d) in g.grad(xs).into_iter().enumerate() {
                    j[(row, col)] += d;
                }
            };
            add_row(0, &self.tails.g1);
            add_row(1, &self.tails.g2);
            for (i, g) in self.tails.g3.iter().enumerate() {
                add_row(2 + i, g);
            }
            for (i, g) in self.tails.g4.iter().enumerate() {
                add_row(l.u_start() + i, g);
            }
            for (i, g) in self.tails.g5.iter().enumerate() {
                add_row(l.v_start() + i, g);
            }
        }
        j
    }

    pub fn iterate(&self, p: &PhasePoint, k: u32, policy: DomainPolicy) -> Result<PhasePoint> {
        let mut q = p.clone();
        for step in 1..=k {
            q = self.step(&q);
            if policy == DomainPolicy::Enforce && !self.in_box(&q) {
                return Err(HcError::IterateEscapedChart {
                    step: step as usize,
                    total: k as usize,
                    detail: format!(
                        "coordinate magnitude {:.3e} exceeds the local box radius {:.3e}",
                        q.amax(),
                        self.box_radius
                    ),
                });
            }
        }
        Ok(q)
    }

    pub fn iterate_with_jacobian(
        &self,
        p: &PhasePoint,
        k: u32,
        policy: DomainPolicy,
    ) -> Result<(PhasePoint, DMatrix<f64>)> {
        let d = self.layout.dim();
        let mut q = p.clone();
        let mut jac = DMatrix::identity(d, d);
        for step in 1..=k {
            jac = self.step_jacobian(&q) * jac;
            q = self.step(&q);
            if policy == DomainPolicy::Enforce && !self.in_box(&q) {
                return Err(HcError::IterateEscapedChart {
                    step: step as usize,
                    total: k as usize,
                    detail: format!(
                        "coordinate magnitude {:.3e} exceeds the local box radius {:.3e}",
                        q.amax(),
                        self.box_radius
                    ),
                });
            }
        }
        Ok((q, jac))
    }

    /// Solve step(p) = q for p. Exact for a linear local map, Newton with the
    /// linear solution as seed otherwise.
    pub fn invert_step(&self, q: &PhasePoint) -> Result<PhasePoint> {
        let lin = self.linear_step();
        let lu = lin.lu();
        let seed = lu.solve(q).ok_or_else(|| {
            HcError::SingularJacobian("local linear part is singular".to_string())
        })?;
        if self.linear {
            return Ok(seed);
        }
        let res = newton::invert(
            |p| Ok(self.step(p)),
            |p| Ok(self.step_jacobian(p)),
            q,
            &seed,
            implicit_newton_opts(),
        )?;
        Ok(res.x)
    }

    pub fn backward(&self, q: &PhasePoint, k: u32) -> Result<PhasePoint> {
        let mut p = q.clone();
        for _ in 0..k {
            p = self.invert_step(&p)?;
        }
        Ok(p)
    }

    /// Boundary-value solve of the k-step transition: given entry (x, u) and
    /// exit (y, v) data, produce the full entry and exit points. Closed form
    /// for a linear map; Newton on the entry (y, v) otherwise. k = 0 is the
    /// identity pass-through.
    pub fn cross_solve(&self, k: u32, c: &CrossPoint) -> Result<(PhasePoint, PhasePoint)> {
        let l = &self.layout;
        if c.y_exit.len() != l.dcu || c.u.len() != l.nu || c.v_exit.len() != l.nv {
            return Err(HcError::Config(
                "cross point block sizes do not match the model layout".to_string(),
            ));
        }
        let assemble = |yv: &DVector<f64>, vv: &DVector<f64>| {
            let mut p = DVector::zeros(l.dim());
            p[0] = c.x[0];
            p[1] = c.x[1];
            for i in 0..l.dcu {
                p[l.y_start() + i] = yv[i];
            }
            for i in 0..l.nu {
                p[l.u_start() + i] = c.u[i];
            }
            for i in 0..l.nv {
                p[l.v_start() + i] = vv[i];
            }
            p
        };
        let y_seed = self
            .y_factor(k)
            .lu()
            .solve(&c.y_exit)
            .ok_or_else(|| HcError::SingularJacobian("expanding y factor".to_string()))?;
        let v_seed = if l.nv == 0 {
            DVector::zeros(0)
        } else {
            self.v_factor(k)
                .lu()
                .solve(&c.v_exit)
                .ok_or_else(|| HcError::SingularJacobian("expanding v factor".to_string()))?
        };
        if self.linear || k == 0 {
            let entry = assemble(&y_seed, &v_seed);
            let exit = self.iterate(&entry, k, DomainPolicy::Ignore)?;
            return Ok((entry, exit));
        }
        let n = l.dcu + l.nv;
        let mut seed = DVector::zeros(n);
        seed.rows_mut(0, l.dcu).copy_from(&y_seed);
        seed.rows_mut(l.dcu, l.nv).copy_from(&v_seed);
        let residual = |z: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let p = assemble(
                &z.rows(0, l.dcu).into_owned(),
                &z.rows(l.dcu, l.nv).into_owned(),
            );
            let (q, jq) = self.iterate_with_jacobian(&p, k, DomainPolicy::Ignore)?;
            let mut r = DVector::zeros(n);
            let mut jac = DMatrix::zeros(n, n);
            let row_ids: Vec<usize> = (0..l.dcu)
                .map(|i| l.y_start() + i)
                .chain((0..l.nv).map(|i| l.v_start() + i))
                .collect();
            for (ri, &pr) in row_ids.iter().enumerate() {
                r[ri] = q[pr]
                    - if ri < l.dcu {
                        c.y_exit[ri]
                    } else {
                        c.v_exit[ri - l.dcu]
                    };
                for (ci, &pc) in row_ids.iter().enumerate() {
                    jac[(ri, ci)] = jq[(pr, pc)];
                }
            }
            Ok((r, jac))
        };
        let sol = newton::solve(residual, &seed, implicit_newton_opts())?;
        let entry = assemble(
            &sol.x.rows(0, l.dcu).into_owned(),
            &sol.x.rows(l.dcu, l.nv).into_owned(),
        );
        let exit = self.iterate(&entry, k, DomainPolicy::Ignore)?;
        Ok((entry, exit))
    }
}

/// Scatter a dense row over selected destination columns.
fn scatter(dest: &mut DMatrix<f64>, row: usize, cols: &[usize], vals: &DVector<f64>) {
    debug_assert_eq!(cols.len(), vals.len());
    for (i, &c) in cols.iter().enumerate() {
        dest[(row, c)] += vals[i];
    }
}

fn box_violation(name: &str, dev: f64, bound: f64) -> Option<String> {
    (dev > bound).then(|| format!("{name} deviation {dev:.3e} exceeds {bound:.3e}"))
}

/// The saddle-focus global map in cross form.
#[derive(Debug, Clone)]
pub struct SfGerm {
    g: SfGlobal,
    /// Half-size (with slack) of the section box around the exit point.
    bound: f64,
}

impl SfGerm {
    pub fn new(g: SfGlobal, bound: f64) -> Self {
        SfGerm { g, bound }
    }

    pub fn global(&self) -> &SfGlobal {
        &self.g
    }

    pub fn layout(&self) -> VarLayout {
        VarLayout {
            dcu: 1,
            nu: self.g.nu(),
            nv: self.g.nv(),
        }
    }

    /// Exit point of the homoclinic orbit from the local chart, (0, y-, 0, v-).
    pub fn exit_base(&self) -> PhasePoint {
        let l = self.layout();
        let mut p = DVector::zeros(l.dim());
        p[2] = self.g.y_minus;
        for j in 0..l.nv {
            p[l.v_start() + j] = self.g.v_minus[j];
        }
        p
    }

    /// Landing point on the local stable plane at mu = 0, (x+, 0, u+, 0).
    pub fn entry_base(&self) -> PhasePoint {
        let l = self.layout();
        let mut p = DVector::zeros(l.dim());
        p[0] = self.g.x_plus[0];
        p[1] = self.g.x_plus[1];
        for j in 0..l.nu {
            p[l.u_start() + j] = self.g.u_plus[j];
        }
        p
    }

    fn check_input(&self, p: &PhasePoint) -> Result<()> {
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let xdev = p[0].abs().max(p[1].abs());
        let ydev = (p[2] - g.y_minus).abs();
        let udev = (0..nu).fold(0.0f64, |m, i| m.max(p[3 + i].abs()));
        let vdev = (0..nv).fold(0.0f64, |m, j| m.max((p[3 + nu + j] - g.v_minus[j]).abs()));
        for (name, dev) in [("x", xdev), ("y", ydev), ("u", udev), ("v", vdev)] {
            if let Some(detail) = box_violation(name, dev, self.bound) {
                return Err(HcError::OutOfDomain {
                    stage: "exit section".to_string(),
                    detail,
                });
            }
        }
        Ok(())
    }

    /// Row-input variables (x1~, x2~, Y, u~, v) with the output v solved from
    /// the implicit rows, given the absolute input point.
    fn solve_vars(&self, p: &PhasePoint) -> Result<DVector<f64>> {
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let m = 3 + nu;
        let mut vars = DVector::zeros(m + nv);
        vars[0] = p[0];
        vars[1] = p[1];
        vars[2] = p[2] - g.y_minus;
        for i in 0..nu {
            vars[3 + i] = p[3 + i];
        }
        if nv == 0 {
            return Ok(vars);
        }
        // Linear part of the implicit rows, moved to the right-hand side.
        let mut rhs = DVector::zeros(nv);
        for j in 0..nv {
            let mut lin = g.a5[(j, 0)] * vars[0] + g.a5[(j, 1)] * vars[1] + g.b5[j] * vars[2];
            for i in 0..nu {
                lin += g.c5[(j, i)] * vars[3 + i];
            }
            rhs[j] = (p[3 + nu + j] - g.v_minus[j]) - lin;
        }
        let seed = g
            .d5
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| HcError::SingularJacobian("implicit v block".to_string()))?;
        let tails_linear = g.tails[m..].iter().all(|t| t.is_zero());
        if tails_linear {
            for j in 0..nv {
                vars[m + j] = seed[j];
            }
            return Ok(vars);
        }
        let residual = |v: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let mut vv = vars.clone();
            for j in 0..nv {
                vv[m + j] = v[j];
            }
            let xs = vv.as_slice();
            let mut r = DVector::zeros(nv);
            let mut jac = g.d5.clone();
            for j in 0..nv {
                let mut lin = g.a5[(j, 0)] * vv[0] + g.a5[(j, 1)] * vv[1] + g.b5[j] * vv[2];
                for i in 0..nu {
                    lin += g.c5[(j, i)] * vv[3 + i];
                }
                for i in 0..nv {
                    lin += g.d5[(j, i)] * v[i];
                }
                r[j] = lin + g.tails[m + j].eval(xs) - (p[3 + nu + j] - g.v_minus[j]);
                let grad = g.tails[m + j].grad(xs);
                for i in 0..nv {
                    jac[(j, i)] += grad[m + i];
                }
            }
            Ok((r, jac))
        };
        let sol = newton::solve(residual, &seed, implicit_newton_opts())?;
        for j in 0..nv {
            vars[m + j] = sol.x[j];
        }
        Ok(vars)
    }

    /// The explicit output rows (x1, x2, y, u..) at prescribed row inputs,
    /// including a prescribed output v. No implicit solve happens here; this
    /// is also the raw material for the normal-form chart.
    pub fn explicit_rows(&self, mu: f64, vars: &DVector<f64>) -> DVector<f64> {
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let m = 3 + nu;
        let xs = vars.as_slice();
        let (x1, x2, yv) = (vars[0], vars[1], vars[2]);
        let mut out = DVector::zeros(m);
        out[0] = g.x_plus[0] + g.a[(0, 0)] * x1 + g.a[(0, 1)] * x2 + g.b1 * yv;
        out[1] = g.x_plus[1] + g.a[(1, 0)] * x1 + g.a[(1, 1)] * x2;
        out[2] = mu
            + g.a3[0] * x1
            + g.a3[1] * x2
            + g.b3 * yv * yv
            + (g.e1 * x1 + g.e2 * x2) * yv;
        for i in 0..nu {
            out[3 + i] = g.u_plus[i] + g.a4[(i, 0)] * x1 + g.a4[(i, 1)] * x2 + g.b4[i] * yv;
        }
        for row in 0..m {
            let (c, d): (&DVector<f64>, &DVector<f64>) = match row {
                0 => (&g.c1, &g.d1),
                1 => (&g.c2, &g.d2),
                2 => (&g.c3, &g.d3),
                _ => {
                    let i = row - 3;
                    for jj in 0..nu {
                        out[row] += g.c4[(i, jj)] * vars[3 + jj];
                    }
                    for jj in 0..nv {
                        out[row] += g.d4[(i, jj)] * vars[m + jj];
                    }
                    out[row] += g.tails[row].eval(xs);
                    continue;
                }
            };
            for jj in 0..nu {
                out[row] += c[jj] * vars[3 + jj];
            }
            for jj in 0..nv {
                out[row] += d[jj] * vars[m + jj];
            }
            out[row] += g.tails[row].eval(xs);
        }
        out
    }

    pub fn apply(&self, mu: f64, p: &PhasePoint, policy: DomainPolicy) -> Result<PhasePoint> {
        if policy == DomainPolicy::Enforce {
            self.check_input(p)?;
        }
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let m = 3 + nu;
        let vars = self.solve_vars(p)?;
        let ex = self.explicit_rows(mu, &vars);
        let mut out = DVector::zeros(m + nv);
        out.rows_mut(0, m).copy_from(&ex);
        for j in 0..nv {
            out[m + j] = vars[m + j];
        }
        Ok(out)
    }

    /// Exact Jacobian of `apply` with respect to the input point, via the
    /// implicit function theorem on the v rows.
    pub fn jacobian(&self, _mu: f64, p: &PhasePoint) -> Result<DMatrix<f64>> {
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let m = 3 + nu;
        let d = m + nv;
        let vars = self.solve_vars(p)?;
        let xs = vars.as_slice();
        let (x1, x2, yv) = (vars[0], vars[1], vars[2]);

        // Explicit-row partials with respect to (x1~, x2~, Y, u~) and to the
        // output v.
        let mut e_w = DMatrix::zeros(m, m);
        let mut e_v = DMatrix::zeros(m, nv);
        e_w[(0, 0)] = g.a[(0, 0)];
        e_w[(0, 1)] = g.a[(0, 1)];
        e_w[(0, 2)] = g.b1;
        e_w[(1, 0)] = g.a[(1, 0)];
        e_w[(1, 1)] = g.a[(1, 1)];
        e_w[(2, 0)] = g.a3[0] + g.e1 * yv;
        e_w[(2, 1)] = g.a3[1] + g.e2 * yv;
        e_w[(2, 2)] = 2.0 * g.b3 * yv + g.e1 * x1 + g.e2 * x2;
        for i in 0..nu {
            e_w[(3 + i, 0)] = g.a4[(i, 0)];
            e_w[(3 + i, 1)] = g.a4[(i, 1)];
            e_w[(3 + i, 2)] = g.b4[i];
            for jj in 0..nu {
                e_w[(3 + i, 3 + jj)] = g.c4[(i, jj)];
            }
            for jj in 0..nv {
                e_v[(3 + i, jj)] = g.d4[(i, jj)];
            }
        }
        for jj in 0..nu {
            e_w[(0, 3 + jj)] = g.c1[jj];
            e_w[(1, 3 + jj)] = g.c2[jj];
            e_w[(2, 3 + jj)] = g.c3[jj];
        }
        for jj in 0..nv {
            e_v[(0, jj)] = g.d1[jj];
            e_v[(1, jj)] = g.d2[jj];
            e_v[(2, jj)] = g.d3[jj];
        }
        for row in 0..m {
            let grad = g.tails[row].grad(xs);
            for c in 0..m {
                e_w[(row, c)] += grad[c];
            }
            for c in 0..nv {
                e_v[(row, c)] += grad[m + c];
            }
        }

        let mut jac = DMatrix::zeros(d, d);
        if nv == 0 {
            jac.view_mut((0, 0), (m, m)).copy_from(&e_w);
            return Ok(jac);
        }

        // Implicit-row partials and the induced derivatives of the output v.
        let mut q_w = DMatrix::zeros(nv, m);
        let mut q_v = g.d5.clone();
        for j in 0..nv {
            q_w[(j, 0)] = g.a5[(j, 0)];
            q_w[(j, 1)] = g.a5[(j, 1)];
            q_w[(j, 2)] = g.b5[j];
            for i in 0..nu {
                q_w[(j, 3 + i)] = g.c5[(j, i)];
            }
            let grad = g.tails[m + j].grad(xs);
            for c in 0..m {
                q_w[(j, c)] += grad[c];
            }
            for c in 0..nv {
                q_v[(j, c)] += grad[m + c];
            }
        }
        let q_v_lu = q_v.lu();
        let dv_dw = -q_v_lu
            .solve(&q_w)
            .ok_or_else(|| HcError::SingularJacobian("implicit v block".to_string()))?;
        let dv_dvin = q_v_lu
            .solve(&DMatrix::identity(nv, nv))
            .ok_or_else(|| HcError::SingularJacobian("implicit v block".to_string()))?;

        let top_w = &e_w + &e_v * &dv_dw;
        let top_v = &e_v * &dv_dvin;
        jac.view_mut((0, 0), (m, m)).copy_from(&top_w);
        jac.view_mut((0, m), (m, nv)).copy_from(&top_v);
        jac.view_mut((m, 0), (nv, m)).copy_from(&dv_dw);
        jac.view_mut((m, m), (nv, nv)).copy_from(&dv_dvin);
        Ok(jac)
    }

    /// d(apply)/d(mu): the parameter only shifts the y output.
    pub fn mu_derivative(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.layout().dim());
        e[2] = 1.0;
        e
    }
}

/// The bi-focus global map in cross form: the implicit block is (y2, v).
#[derive(Debug, Clone)]
pub struct BfGerm {
    g: BfGlobal,
    bound: f64,
}

impl BfGerm {
    pub fn new(g: BfGlobal, bound: f64) -> Self {
        BfGerm { g, bound }
    }

    pub fn global(&self) -> &BfGlobal {
        &self.g
    }

    pub fn layout(&self) -> VarLayout {
        VarLayout {
            dcu: 2,
            nu: self.g.nu(),
            nv: self.g.nv(),
        }
    }

    pub fn exit_base(&self) -> PhasePoint {
        let l = self.layout();
        let mut p = DVector::zeros(l.dim());
        p[2] = self.g.y_minus[0];
        p[3] = self.g.y_minus[1];
        for j in 0..l.nv {
            p[l.v_start() + j] = self.g.v_minus[j];
        }
        p
    }

    pub fn entry_base(&self) -> PhasePoint {
        let l = self.layout();
        let mut p = DVector::zeros(l.dim());
        p[0] = self.g.x_plus[0];
        p[1] = self.g.x_plus[1];
        for j in 0..l.nu {
            p[l.u_start() + j] = self.g.u_plus[j];
        }
        p
    }

    fn check_input(&self, p: &PhasePoint) -> Result<()> {
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let xdev = p[0].abs().max(p[1].abs());
        let ydev = (p[2] - g.y_minus[0]).abs().max((p[3] - g.y_minus[1]).abs());
        let udev = (0..nu).fold(0.0f64, |m, i| m.max(p[4 + i].abs()));
        let vdev = (0..nv).fold(0.0f64, |m, j| m.max((p[4 + nu + j] - g.v_minus[j]).abs()));
        for (name, dev) in [("x", xdev), ("y", ydev), ("u", udev), ("v", vdev)] {
            if let Some(detail) = box_violation(name, dev, self.bound) {
                return Err(HcError::OutOfDomain {
                    stage: "exit section".to_string(),
                    detail,
                });
            }
        }
        Ok(())
    }

    /// Index of the implicit y2 row in the tail list (x1, x2, y1, u.., y2, v..).
    fn y2_row(&self) -> usize {
        3 + self.g.nu()
    }

    /// Row-input variables (x1~, x2~, Y1, y2, u~, v) with the output pair
    /// (y2, v) solved from the implicit rows.
    fn solve_vars(&self, p: &PhasePoint) -> Result<DVector<f64>> {
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let d = 4 + nu + nv;
        let mut vars = DVector::zeros(d);
        vars[0] = p[0];
        vars[1] = p[1];
        vars[2] = p[2] - g.y_minus[0];
        for i in 0..nu {
            vars[4 + i] = p[4 + i];
        }
        let y2t = p[3] - g.y_minus[1];
        let vt: Vec<f64> = (0..nv).map(|j| p[4 + nu + j] - g.v_minus[j]).collect();

        // Linear seed for the unknowns s = (y2, v).
        let block = g.implicit_block();
        let mut rhs = DVector::zeros(1 + nv);
        rhs[0] = y2t - (g.a5[0] * vars[0] + g.a5[1] * vars[1] + g.b51 * vars[2]);
        for i in 0..nu {
            rhs[0] -= g.c5[i] * vars[4 + i];
        }
        for j in 0..nv {
            let mut lin = g.a6[(j, 0)] * vars[0] + g.a6[(j, 1)] * vars[1] + g.b61[j] * vars[2];
            for i in 0..nu {
                lin += g.c6[(j, i)] * vars[4 + i];
            }
            rhs[1 + j] = vt[j] - lin;
        }
        let seed = block
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| HcError::SingularJacobian("implicit (y2, v) block".to_string()))?;

        let y2_row = self.y2_row();
        let tails_linear =
            g.tails[y2_row].is_zero() && g.tails[y2_row + 1..].iter().all(|t| t.is_zero());
        let fill = |vars: &mut DVector<f64>, s: &DVector<f64>| {
            vars[3] = s[0];
            for j in 0..nv {
                vars[4 + nu + j] = s[1 + j];
            }
        };
        if tails_linear {
            fill(&mut vars, &seed);
            return Ok(vars);
        }
        let residual = |s: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let mut vv = vars.clone();
            fill(&mut vv, s);
            let xs = vv.as_slice();
            let mut r = DVector::zeros(1 + nv);
            let mut jac = block.clone();
            r[0] = g.a5[0] * vv[0] + g.a5[1] * vv[1] + g.b51 * vv[2] + g.b52 * vv[3];
            for i in 0..nu {
                r[0] += g.c5[i] * vv[4 + i];
            }
            for j in 0..nv {
                r[0] += g.d5[j] * vv[4 + nu + j];
            }
            r[0] += g.tails[y2_row].eval(xs) - y2t;
            let grad5 = g.tails[y2_row].grad(xs);
            jac[(0, 0)] += grad5[3];
            for j in 0..nv {
                jac[(0, 1 + j)] += grad5[4 + nu + j];
            }
            for j in 0..nv {
                let mut lin =
                    g.a6[(j, 0)] * vv[0] + g.a6[(j, 1)] * vv[1] + g.b61[j] * vv[2] + g.b62[j] * vv[3];
                for i in 0..nu {
                    lin += g.c6[(j, i)] * vv[4 + i];
                }
                for i in 0..nv {
                    lin += g.d6[(j, i)] * vv[4 + nu + i];
                }
                r[1 + j] = lin + g.tails[y2_row + 1 + j].eval(xs) - vt[j];
                let grad = g.tails[y2_row + 1 + j].grad(xs);
                jac[(1 + j, 0)] += grad[3];
                for i in 0..nv {
                    jac[(1 + j, 1 + i)] += grad[4 + nu + i];
                }
            }
            Ok((r, jac))
        };
        let sol = newton::solve(residual, &seed, implicit_newton_opts())?;
        fill(&mut vars, &sol.x);
        Ok(vars)
    }

    /// The explicit output rows (x1, x2, y1, u..) at prescribed row inputs.
    pub fn explicit_rows(&self, mu: f64, vars: &DVector<f64>) -> DVector<f64> {
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let xs = vars.as_slice();
        let (x1, x2, y1v, y2o) = (vars[0], vars[1], vars[2], vars[3]);
        let mut out = DVector::zeros(3 + nu);
        out[0] = g.x_plus[0]
            + g.a[(0, 0)] * x1
            + g.a[(0, 1)] * x2
            + g.b11 * y1v
            + g.b12 * y2o
            + g.tails[0].eval(xs);
        out[1] = g.x_plus[1]
            + g.a[(1, 0)] * x1
            + g.a[(1, 1)] * x2
            + g.b22 * y2o
            + g.tails[1].eval(xs);
        out[2] = mu
            + g.a3[0] * x1
            + g.a3[1] * x2
            + g.b31 * y1v * y1v
            + (g.e1 * x1 + g.e2 * x2) * y1v
            + g.tails[2].eval(xs);
        for i in 0..nu {
            out[3 + i] = g.u_plus[i]
                + g.a4[(i, 0)] * x1
                + g.a4[(i, 1)] * x2
                + g.b41[i] * y1v
                + g.b42[i] * y2o
                + g.tails[3 + i].eval(xs);
        }
        for row in 0..3 + nu {
            let (c, dd): (&DVector<f64>, &DVector<f64>) = match row {
                0 => (&g.c1, &g.d1),
                1 => (&g.c2, &g.d2),
                2 => (&g.c3, &g.d3),
                _ => {
                    let i = row - 3;
                    for jj in 0..nu {
                        out[row] += g.c4[(i, jj)] * vars[4 + jj];
                    }
                    for jj in 0..nv {
                        out[row] += g.d4[(i, jj)] * vars[4 + nu + jj];
                    }
                    continue;
                }
            };
            for jj in 0..nu {
                out[row] += c[jj] * vars[4 + jj];
            }
            for jj in 0..nv {
                out[row] += dd[jj] * vars[4 + nu + jj];
            }
        }
        out
    }

    pub fn apply(&self, mu: f64, p: &PhasePoint, policy: DomainPolicy) -> Result<PhasePoint> {
        if policy == DomainPolicy::Enforce {
            self.check_input(p)?;
        }
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let vars = self.solve_vars(p)?;
        let ex = self.explicit_rows(mu, &vars);
        let mut out = DVector::zeros(4 + nu + nv);
        out[0] = ex[0];
        out[1] = ex[1];
        out[2] = ex[2];
        out[3] = vars[3];
        for i in 0..nu {
            out[4 + i] = ex[3 + i];
        }
        for j in 0..nv {
            out[4 + nu + j] = vars[4 + nu + j];
        }
        Ok(out)
    }

    pub fn jacobian(&self, _mu: f64, p: &PhasePoint) -> Result<DMatrix<f64>> {
        let g = &self.g;
        let (nu, nv) = (g.nu(), g.nv());
        let d = 4 + nu + nv;
        let m = 3 + nu; // number of w-variables (x1~, x2~, Y1, u~)
        let ns = 1 + nv; // implicit unknowns (y2, v)
        let vars = self.solve_vars(p)?;
        let xs = vars.as_slice();
        let (x1, x2, y1v) = (vars[0], vars[1], vars[2]);

        // Column maps into the phase ordering (x1, x2, y1, y2, u.., v..).
        let mut wcols = vec![0usize, 1, 2];
        wcols.extend((0..nu).map(|i| 4 + i));
        let mut extras = vec![3usize];
        extras.extend((0..nv).map(|j| 4 + nu + j));
        // The same maps read the tail gradients (vars order x1,x2,Y1,y2,u,v).
        let grad_w = |grad: &[f64]| {
            let mut out = DVector::zeros(m);
            out[0] = grad[0];
            out[1] = grad[1];
            out[2] = grad[2];
            for i in 0..nu {
                out[3 + i] = grad[4 + i];
            }
            out
        };
        let grad_s = |grad: &[f64]| {
            let mut out = DVector::zeros(ns);
            out[0] = grad[3];
            for j in 0..nv {
                out[1 + j] = grad[4 + nu + j];
            }
            out
        };

        // Explicit rows: partials with respect to w and to the solved s.
        let mut e_w = DMatrix::zeros(m, m);
        let mut e_s = DMatrix::zeros(m, ns);
        e_w[(0, 0)] = g.a[(0, 0)];
        e_w[(0, 1)] = g.a[(0, 1)];
        e_w[(0, 2)] = g.b11;
        e_s[(0, 0)] = g.b12;
        e_w[(1, 0)] = g.a[(1, 0)];
        e_w[(1, 1)] = g.a[(1, 1)];
        e_s[(1, 0)] = g.b22;
        e_w[(2, 0)] = g.a3[0] + g.e1 * y1v;
        e_w[(2, 1)] = g.a3[1] + g.e2 * y1v;
        e_w[(2, 2)] = 2.0 * g.b31 * y1v + g.e1 * x1 + g.e2 * x2;
        for jj in 0..nu {
            e_w[(0, 3 + jj)] = g.c1[jj];
            e_w[(1, 3 + jj)] = g.c2[jj];
            e_w[(2, 3 + jj)] = g.c3[jj];
        }
        for jj in 0..nv {
            e_s[(0, 1 + jj)] = g.d1[jj];
            e_s[(1, 1 + jj)] = g.d2[jj];
            e_s[(2, 1 + jj)] = g.d3[jj];
        }
        for i in 0..nu {
            e_w[(3 + i, 0)] = g.a4[(i, 0)];
            e_w[(3 + i, 1)] = g.a4[(i, 1)];
            e_w[(3 + i, 2)] = g.b41[i];
            e_s[(3 + i, 0)] = g.b42[i];
            for jj in 0..nu {
                e_w[(3 + i, 3 + jj)] = g.c4[(i, jj)];
            }
            for jj in 0..nv {
                e_s[(3 + i, 1 + jj)] = g.d4[(i, jj)];
            }
        }
        for row in 0..m {
            let grad = g.tails[row].grad(xs);
            let gw = grad_w(&grad);
            let gs = grad_s(&grad);
            for c in 0..m {
                e_w[(row, c)] += gw[c];
            }
            for c in 0..ns {
                e_s[(row, c)] += gs[c];
            }
        }

        // Implicit rows: partials with respect to w and s.
        let y2_row = self.y2_row();
        let mut q_w = DMatrix::zeros(ns, m);
        let mut q_s = g.implicit_block();
        q_w[(0, 0)] = g.a5[0];
        q_w[(0, 1)] = g.a5[1];
        q_w[(0, 2)] = g.b51;
        for i in 0..nu {
            q_w[(0, 3 + i)] = g.c5[i];
        }
        for j in 0..nv {
            q_w[(1 + j, 0)] = g.a6[(j, 0)];
            q_w[(1 + j, 1)] = g.a6[(j, 1)];
            q_w[(1 + j, 2)] = g.b61[j];
            for i in 0..nu {
                q_w[(1 + j, 3 + i)] = g.c6[(j, i)];
            }
        }
        for r in 0..ns {
            let grad = g.tails[y2_row + r].grad(xs);
            let gw = grad_w(&grad);
            let gs = grad_s(&grad);
            for c in 0..m {
                q_w[(r, c)] += gw[c];
            }
            for c in 0..ns {
                q_s[(r, c)] += gs[c];
            }
        }
        let q_s_lu = q_s.lu();
        let ds_dw = -q_s_lu
            .solve(&q_w)
            .ok_or_else(|| HcError::SingularJacobian("implicit (y2, v) block".to_string()))?;
        let ds_dext = q_s_lu
            .solve(&DMatrix::identity(ns, ns))
            .ok_or_else(|| HcError::SingularJacobian("implicit (y2, v) block".to_string()))?;

        // Assemble the phase Jacobian. Output rows in phase order:
        // x1, x2, y1 (explicit 0..3), y2 (= s0), u (explicit 3..), v (= s1..).
        let mut jac = DMatrix::zeros(d, d);
        let top_w = &e_w + &e_s * &ds_dw;
        let top_e = &e_s * &ds_dext;
        let out_row = |r: usize| if r < 3 { r } else { 4 + (r - 3) };
        for r in 0..m {
            scatter(&mut jac, out_row(r), &wcols, &top_w.row(r).transpose());
            scatter(&mut jac, out_row(r), &extras, &top_e.row(r).transpose());
        }
        let s_row = |r: usize| if r == 0 { 3 } else { 4 + nu + (r - 1) };
        for r in 0..ns {
            scatter(&mut jac, s_row(r), &wcols, &ds_dw.row(r).transpose());
            scatter(&mut jac, s_row(r), &extras, &ds_dext.row(r).transpose());
        }
        Ok(jac)
    }

    pub fn mu_derivative(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.layout().dim());
        e[2] = 1.0;
        e
    }
}

/// A re-based global germ: global, then m local steps, then global again.
/// Used after a secondary tangency re-bases the analysis at a longer
/// homoclinic orbit; the base points of the new orbit are supplied by the
/// solver that found it.
#[derive(Debug, Clone)]
pub struct CompositeGerm {
    pub first: SfGerm,
    pub local: LocalMap,
    pub m: u32,
    pub second: SfGerm,
    pub exit_base: PhasePoint,
    pub entry_base: PhasePoint,
}

impl CompositeGerm {
    fn propagate(
        &self,
        mu: f64,
        p: &PhasePoint,
        policy: DomainPolicy,
    ) -> Result<(PhasePoint, PhasePoint)> {
        let q1 = self.first.apply(mu, p, policy)?;
        let q2 = self.local.iterate(&q1, self.m, policy)?;
        Ok((q1, q2))
    }

    pub fn apply(&self, mu: f64, p: &PhasePoint, policy: DomainPolicy) -> Result<PhasePoint> {
        let (_, q2) = self.propagate(mu, p, policy)?;
        self.second.apply(mu, &q2, policy)
    }

    pub fn jacobian(&self, mu: f64, p: &PhasePoint) -> Result<DMatrix<f64>> {
        let j1 = self.first.jacobian(mu, p)?;
        let q1 = self.first.apply(mu, p, DomainPolicy::Ignore)?;
        let (q2, jl) = self
            .local
            .iterate_with_jacobian(&q1, self.m, DomainPolicy::Ignore)?;
        let j2 = self.second.jacobian(mu, &q2)?;
        Ok(j2 * jl * j1)
    }

    /// d(apply)/d(mu): both global legs carry the parameter.
    pub fn mu_derivative(&self, mu: f64, p: &PhasePoint) -> Result<DVector<f64>> {
        let (q1, q2) = self.propagate(mu, p, DomainPolicy::Ignore)?;
        let (_, jl) = self
            .local
            .iterate_with_jacobian(&q1, self.m, DomainPolicy::Ignore)?;
        let j2 = self.second.jacobian(mu, &q2)?;
        Ok(self.second.mu_derivative() + j2 * jl * self.first.mu_derivative())
    }
}

/// The global half of a return map; re-based composites slot in transparently.
#[derive(Debug, Clone)]
pub enum Germ {
    Sf(SfGerm),
    Bf(BfGerm),
    Composite(Box<CompositeGerm>),
}

impl Germ {
    pub fn layout(&self) -> VarLayout {
        match self {
            Germ::Sf(g) => g.layout(),
            Germ::Bf(g) => g.layout(),
            Germ::Composite(c) => c.first.layout(),
        }
    }

    pub fn apply(&self, mu: f64, p: &PhasePoint, policy: DomainPolicy) -> Result<PhasePoint> {
        match self {
            Germ::Sf(g) => g.apply(mu, p, policy),
            Germ::Bf(g) => g.apply(mu, p, policy),
            Germ::Composite(c) => c.apply(mu, p, policy),
        }
    }

    pub fn jacobian(&self, mu: f64, p: &PhasePoint) -> Result<DMatrix<f64>> {
        match self {
            Germ::Sf(g) => g.jacobian(mu, p),
            Germ::Bf(g) => g.jacobian(mu, p),
            Germ::Composite(c) => c.jacobian(mu, p),
        }
    }

    pub fn mu_derivative(&self, mu: f64, p: &PhasePoint) -> Result<DVector<f64>> {
        match self {
            Germ::Sf(g) => Ok(g.mu_derivative()),
            Germ::Bf(g) => Ok(g.mu_derivative()),
            Germ::Composite(c) => c.mu_derivative(mu, p),
        }
    }

    pub fn exit_base(&self) -> PhasePoint {
        match self {
            Germ::Sf(g) => g.exit_base(),
            Germ::Bf(g) => g.exit_base(),
            Germ::Composite(c) => c.exit_base.clone(),
        }
    }

    pub fn entry_base(&self) -> PhasePoint {
        match self {
            Germ::Sf(g) => g.entry_base(),
            Germ::Bf(g) => g.entry_base(),
            Germ::Composite(c) => c.entry_base.clone(),
        }
    }

    pub fn as_sf(&self) -> Option<&SfGerm> {
        match self {
            Germ::Sf(g) => Some(g),
            _ => None,
        }
    }
}

/// Cross-form coordinates of a return-map point: the entry-side (x, u) and
/// the exit-side forward values of (y, v).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossPoint {
    pub x: [f64; 2],
    pub y_exit: DVector<f64>,
    pub u: DVector<f64>,
    pub v_exit: DVector<f64>,
}

/// A fully parameterized k-step return map.
#[derive(Debug, Clone)]
pub struct Instance {
    local: LocalMap,
    germ: Germ,
    pub k: u32,
    pub mu: f64,
    pub omega: f64,
    delta: f64,
    slack: f64,
    lambda_hat: f64,
    gamma_hat: f64,
    checks: CheckSpec,
    policy: DomainPolicy,
    layout: VarLayout,
}

impl Instance {
    pub fn new(model: &Model, k: u32, mu: f64, omega: f64) -> Result<Instance> {
        if k == 0 {
            return Err(HcError::Config(
                "a return map needs at least one local step (k >= 1)".to_string(),
            ));
        }
        let layout = model.layout();
        let domain = model.domain();
        let bound = domain.delta * domain.slack;
        let germ = match model {
            Model::Sf21(m) => Germ::Sf(SfGerm::new(m.global.clone(), bound)),
            Model::Bf(m) => Germ::Bf(BfGerm::new(m.global.clone(), bound)),
        };
        let base_reach = germ
            .entry_base()
            .amax()
            .max(germ.exit_base().amax());
        let box_radius = 2.0 * domain.slack * (domain.delta + base_reach);
        let (spectrum, tails, checks) = match model {
            Model::Sf21(m) => (&m.spectrum, &m.local, m.checks),
            Model::Bf(m) => (&m.spectrum, &m.local, m.checks),
        };
        let local = LocalMap::new(spectrum, layout, tails, omega, box_radius);
        Ok(Instance {
            local,
            germ,
            k,
            mu,
            omega,
            delta: domain.delta,
            slack: domain.slack,
            lambda_hat: spectrum.lambda_hat,
            gamma_hat: spectrum.gamma_hat,
            checks,
            policy: DomainPolicy::Enforce,
            layout,
        })
    }

    /// A return map around a re-based homoclinic orbit. The caller supplies
    /// the composite germ together with the local map it was found with; the
    /// domain and remainder-scale data come from the original model.
    pub fn rebased(
        model: &Model,
        local: LocalMap,
        germ: CompositeGerm,
        k: u32,
        mu: f64,
        omega: f64,
    ) -> Result<Instance> {
        if k == 0 {
            return Err(HcError::Config(
                "a return map needs at least one local step (k >= 1)".to_string(),
            ));
        }
        let layout = local.layout();
        let domain = model.domain();
        let (checks, spectrum) = match model {
            Model::Sf21(m) => (m.checks, &m.spectrum),
            Model::Bf(m) => (m.checks, &m.spectrum),
        };
        Ok(Instance {
            local,
            germ: Germ::Composite(Box::new(germ)),
            k,
            mu,
            omega,
            delta: domain.delta,
            slack: domain.slack,
            lambda_hat: spectrum.lambda_hat,
            gamma_hat: spectrum.gamma_hat,
            checks,
            policy: DomainPolicy::Enforce,
            layout,
        })
    }

    pub fn with_policy(mut self, policy: DomainPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn policy(&self) -> DomainPolicy {
        self.policy
    }

    pub fn layout(&self) -> VarLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }

    pub fn lambda_hat(&self) -> f64 {
        self.lambda_hat
    }

    pub fn gamma_hat(&self) -> f64 {
        self.gamma_hat
    }

    pub fn checks(&self) -> CheckSpec {
        self.checks
    }

    pub fn local(&self) -> &LocalMap {
        &self.local
    }

    pub fn germ(&self) -> &Germ {
        &self.germ
    }

    /// The entry-side box check of the cross-form domain: (x, u) near the
    /// landing point.
    fn check_entry(&self, p: &PhasePoint) -> Result<()> {
        let base = self.germ.entry_base();
        let l = &self.layout;
        let bound = self.delta * self.slack;
        let xdev = (p[0] - base[0]).abs().max((p[1] - base[1]).abs());
        let udev = (0..l.nu).fold(0.0f64, |m, i| {
            m.max((p[l.u_start() + i] - base[l.u_start() + i]).abs())
        });
        for (name, dev) in [("x", xdev), ("u", udev)] {
            if let Some(detail) = box_violation(name, dev, bound) {
                return Err(HcError::OutOfDomain {
                    stage: "entry section".to_string(),
                    detail,
                });
            }
        }
        Ok(())
    }

    /// The local leg: k applications of the local map.
    pub fn local_pass(&self, p: &PhasePoint) -> Result<PhasePoint> {
        self.local.iterate(p, self.k, self.policy)
    }

    pub fn return_map(&self, p: &PhasePoint) -> Result<PhasePoint> {
        if self.policy == DomainPolicy::Enforce {
            self.check_entry(p)?;
        }
        let q = self.local_pass(p)?;
        self.germ.apply(self.mu, &q, self.policy)
    }

    pub fn jacobian(&self, p: &PhasePoint) -> Result<DMatrix<f64>> {
        Ok(self.return_map_with_jacobian(p)?.1)
    }

    pub fn return_map_with_jacobian(
        &self,
        p: &PhasePoint,
    ) -> Result<(PhasePoint, DMatrix<f64>)> {
        if self.policy == DomainPolicy::Enforce {
            self.check_entry(p)?;
        }
        let (q, jl) = self.local.iterate_with_jacobian(p, self.k, self.policy)?;
        let out = self.germ.apply(self.mu, &q, self.policy)?;
        let jg = self.germ.jacobian(self.mu, &q)?;
        Ok((out, jg * jl))
    }

    /// d(return map)/d(mu); the local leg does not carry the parameter.
    pub fn mu_derivative(&self, p: &PhasePoint) -> Result<DVector<f64>> {
        let q = self.local_pass(p)?;
        self.germ.mu_derivative(self.mu, &q)
    }

    /// Full domain membership: entry box, local box along the pass, exit box.
    pub fn in_domain(&self, p: &PhasePoint) -> Result<()> {
        self.check_entry(p)?;
        let q = self.local.iterate(p, self.k, DomainPolicy::Enforce)?;
        match &self.germ {
            Germ::Sf(g) => g.check_input(&q),
            Germ::Bf(g) => g.check_input(&q),
            Germ::Composite(c) => c.first.check_input(&q),
        }
    }

    /// Cross-form representation of an input point: its own (x, u) plus the
    /// forward (y, v) values after the local pass.
    pub fn cross_of(&self, p: &PhasePoint) -> Result<CrossPoint> {
        let q = self.local.iterate(p, self.k, self.policy)?;
        let l = &self.layout;
        Ok(CrossPoint {
            x: [p[0], p[1]],
            y_exit: q.rows(l.y_start(), l.dcu).into_owned(),
            u: p.rows(l.u_start(), l.nu).into_owned(),
            v_exit: q.rows(l.v_start(), l.nv).into_owned(),
        })
    }

    /// Reconstruct the phase point with the given cross coordinates: entry
    /// (x, u) prescribed, entry (y, v) solved so that the local pass attains
    /// the prescribed exit values. Closed form when the local map is linear.
    pub fn point_from_cross(&self, c: &CrossPoint) -> Result<PhasePoint> {
        Ok(self.local.cross_solve(self.k, c)?.0)
    }

    /// Both boundary points of the k-step transition with the given cross
    /// data: the entry point and its exit image.
    pub fn cross_solve(&self, c: &CrossPoint) -> Result<(PhasePoint, PhasePoint)> {
        self.local.cross_solve(self.k, c)
    }
}
