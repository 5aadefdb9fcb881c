//! Sparse multivariate polynomials over f64.
//!
//! These are the workhorse for three jobs: explicit higher-order tails of the
//! global map, optional nonlinear terms of the local map, and truncated
//! Taylor expansions of composed return maps (used by the invariant-graph
//! expansions). Exponents are stored per variable; terms are kept sorted so
//! that equality and serialization are deterministic.

use crate::error::{HcError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    nvars: usize,
    /// Sorted by exponent tuple (lexicographic), coefficients nonzero.
    terms: Vec<(Vec<u8>, f64)>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly {
            nvars,
            terms: Vec::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Poly::zero(nvars);
        if c != 0.0 {
            p.terms.push((vec![0; nvars], c));
        }
        p
    }

    /// The monomial `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars);
        let mut e = vec![0u8; nvars];
        e[i] = 1;
        Poly {
            nvars,
            terms: vec![(e, 1.0)],
        }
    }

    /// Build from raw (powers, coefficient) pairs, merging duplicates.
    pub fn from_terms(nvars: usize, raw: &[(Vec<u8>, f64)]) -> Result<Self> {
        let mut terms: Vec<(Vec<u8>, f64)> = Vec::with_capacity(raw.len());
        for (e, c) in raw {
            if e.len() != nvars {
                return Err(HcError::Config(format!(
                    "monomial has {} exponents, expected {}",
                    e.len(),
                    nvars
                )));
            }
            terms.push((e.clone(), *c));
        }
        Ok(Self::normalize(nvars, terms))
    }

    fn normalize(nvars: usize, mut terms: Vec<(Vec<u8>, f64)>) -> Self {
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Vec<u8>, f64)> = Vec::with_capacity(terms.len());
        for (e, c) in terms {
            match merged.last_mut() {
                Some((le, lc)) if *le == e => *lc += c,
                _ => merged.push((e, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        Poly {
            nvars,
            terms: merged,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u8], f64)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    pub fn total_degree(&self) -> usize {
        self.terms
            .iter()
            .map(|(e, _)| e.iter().map(|&p| p as usize).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut m = *c;
            for (xi, &p) in x.iter().zip(e.iter()) {
                if p > 0 {
                    m *= xi.powi(p as i32);
                }
            }
            acc += m;
        }
        acc
    }

    /// Partial derivative with respect to variable `i`.
    pub fn diff(&self, i: usize) -> Poly {
        assert!(i < self.nvars);
        let mut terms = Vec::new();
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut e2 = e.clone();
                e2[i] -= 1;
                terms.push((e2, c * e[i] as f64));
            }
        }
        Poly::normalize(self.nvars, terms)
    }

    /// Gradient at a point.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nvars).map(|i| self.diff(i).eval(x)).collect()
    }

    pub fn add(&self, other: &Poly) -> Poly {
        assert_eq!(self.nvars, other.nvars);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Poly::normalize(self.nvars, terms)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Poly {
        if s == 0.0 {
            return Poly::zero(self.nvars);
        }
        Poly {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect(),
        }
    }

    /// Product, truncated to total degree <= cap (cap = usize::MAX for exact).
    pub fn mul_trunc(&self, other: &Poly, cap: usize) -> Poly {
        assert_eq!(self.nvars, other.nvars);
        let mut terms = Vec::new();
        for (ea, ca) in &self.terms {
            let da: usize = ea.iter().map(|&p| p as usize).sum();
            for (eb, cb) in &other.terms {
                let db: usize = eb.iter().map(|&p| p as usize).sum();
                if da + db > cap {
                    continue;
                }
                let e: Vec<u8> = ea.iter().zip(eb.iter()).map(|(a, b)| a + b).collect();
                terms.push((e, ca * cb));
            }
        }
        Poly::normalize(self.nvars, terms)
    }

    /// Drop every term of total degree > cap.
    pub fn truncate(&self, cap: usize) -> Poly {
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| e.iter().map(|&p| p as usize).sum::<usize>() <= cap)
            .cloned()
            .collect();
        Poly {
            nvars: self.nvars,
            terms,
        }
    }

    /// Substitute `inner[i]` for variable i, truncating to total degree cap.
    ///
    /// All inner polynomials must share one variable count, which becomes the
    /// variable count of the result.
    pub fn compose_trunc(&self, inner: &[Poly], cap: usize) -> Poly {
        assert_eq!(inner.len(), self.nvars);
        let in_vars = if inner.is_empty() {
            0
        } else {
            inner[0].nvars
        };
        for p in inner {
            assert_eq!(p.nvars, in_vars);
        }
        // Cache powers of each inner polynomial up to the largest exponent used.
        let mut max_pow = vec![0u8; self.nvars];
        for (e, _) in &self.terms {
            for (m, &p) in max_pow.iter_mut().zip(e.iter()) {
                *m = (*m).max(p);
            }
        }
        let mut powers: Vec<Vec<Poly>> = Vec::with_capacity(self.nvars);
        for (i, p) in inner.iter().enumerate() {
            let mut row = vec![Poly::constant(in_vars, 1.0)];
            for j in 1..=max_pow[i] as usize {
                let next = row[j - 1].mul_trunc(p, cap);
                row.push(next);
            }
            powers.push(row);
        }
        let mut acc = Poly::zero(in_vars);
        for (e, c) in &self.terms {
            let mut m = Poly::constant(in_vars, *c);
            for (i, &p) in e.iter().enumerate() {
                if p > 0 {
                    m = m.mul_trunc(&powers[i][p as usize], cap);
                }
            }
            acc = acc.add(&m);
        }
        acc
    }

    /// Coefficient of the exact exponent tuple (zero if absent).
    pub fn coeff(&self, e: &[u8]) -> f64 {
        debug_assert_eq!(e.len(), self.nvars);
        match self.terms.binary_search_by(|(te, _)| te.as_slice().cmp(e)) {
            Ok(i) => self.terms[i].1,
            Err(_) => 0.0,
        }
    }

    /// Largest coefficient magnitude (zero polynomial gives 0).
    pub fn max_coeff(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max)
    }
}

/// Affine polynomials `c + sum a_i x_i` as a convenience constructor.
pub fn affine(nvars: usize, c: f64, lin: &[(usize, f64)]) -> Poly {
    let mut p = Poly::constant(nvars, c);
    for &(i, a) in lin {
        p = p.add(&Poly::var(nvars, i).scale(a));
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_eval(terms: &[(Vec<u8>, f64)], x: &[f64]) -> f64 {
        terms
            .iter()
            .map(|(e, c)| {
                c * e
                    .iter()
                    .zip(x)
                    .map(|(&p, &xi)| xi.powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }

    #[test]
    fn eval_matches_naive_sum() {
        let raw = vec![
            (vec![2, 0, 1], 1.5),
            (vec![0, 1, 0], -2.0),
            (vec![0, 0, 0], 0.25),
            (vec![2, 0, 1], 0.5), // duplicate merges with the first term
        ];
        let p = Poly::from_terms(3, &raw).unwrap();
        let x = [0.3, -1.2, 2.0];
        let expect = naive_eval(&raw, &x);
        assert!((p.eval(&x) - expect).abs() < 1e-14);
    }

    #[test]
    fn diff_matches_finite_difference() {
        let p = Poly::from_terms(2, &[(vec![3, 1], 2.0), (vec![1, 2], -0.7)]).unwrap();
        let x = [0.4, 0.9];
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.eval(&xp) - p.eval(&xm)) / (2.0 * h);
            let an = p.diff(i).eval(&x);
            assert!((fd - an).abs() < 1e-8, "var {i}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn compose_agrees_with_pointwise_substitution() {
        // outer(u, v) = u^2 v - 3 v
        let outer = Poly::from_terms(2, &[(vec![2, 1], 1.0), (vec![0, 1], -3.0)]).unwrap();
        // u = x + y, v = x y
        let u = affine(2, 0.0, &[(0, 1.0), (1, 1.0)]);
        let v = Poly::from_terms(2, &[(vec![1, 1], 1.0)]).unwrap();
        let comp = outer.compose_trunc(&[u.clone(), v.clone()], usize::MAX);
        let x = [0.7, -0.3];
        let direct = outer.eval(&[u.eval(&x), v.eval(&x)]);
        assert!((comp.eval(&x) - direct).abs() < 1e-13);
    }

    #[test]
    fn truncation_drops_high_degree() {
        let p = Poly::from_terms(1, &[(vec![4], 1.0), (vec![2], 1.0)]).unwrap();
        let t = p.truncate(3);
        assert_eq!(t.total_degree(), 2);
        assert_eq!(t.coeff(&[2]), 1.0);
        assert_eq!(t.coeff(&[4]), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn add_then_eval_is_linear(
            a in -2.0f64..2.0, b in -2.0f64..2.0,
            x in -1.0f64..1.0, y in -1.0f64..1.0,
        ) {
            let p = Poly::from_terms(2, &[(vec![1, 0], a), (vec![0, 2], 1.0)]).unwrap();
            let q = Poly::from_terms(2, &[(vec![0, 1], b), (vec![1, 1], -1.0)]).unwrap();
            let s = p.add(&q);
            let pt = [x, y];
            prop_assert!((s.eval(&pt) - (p.eval(&pt) + q.eval(&pt))).abs() < 1e-12);
        }

        #[test]
        fn mul_matches_pointwise(
            x in -1.0f64..1.0, y in -1.0f64..1.0,
        ) {
            let p = Poly::from_terms(2, &[(vec![1, 0], 1.0), (vec![0, 1], 2.0)]).unwrap();
            let q = Poly::from_terms(2, &[(vec![1, 1], -0.5), (vec![0, 0], 1.0)]).unwrap();
            let m = p.mul_trunc(&q, usize::MAX);
            let pt = [x, y];
            prop_assert!((m.eval(&pt) - p.eval(&pt) * q.eval(&pt)).abs() < 1e-12);
        }
    }
}
