//! Reading and writing model description files.
//!
//! A model lives in a single TOML document with tables `spectrum`, `domain`,
//! `global`, optional `nonlinear` (local higher-order terms as monomial
//! lists), optional `cones` (frozen cone-field constants) and `checks`. The
//! top-level `kind` key selects the saddle-focus ("sf21") or bi-focus ("bf")
//! layout. Serialization of a parsed model reproduces every coefficient
//! bit-exactly: floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HcError, Result};
use crate::model::{
    BfGlobal, BfModel, CheckSpec, ConeSpec, DomainSpec, LocalSpectrum, LocalTails, Model, SfGlobal,
    SfModel, VarLayout,
};
use crate::poly::Poly;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}

pub fn parse_model(text: &str) -> Result<Model> {
    #[derive(Deserialize)]
    struct KindProbe {
        kind: String,
    }
    let probe: KindProbe = toml::from_str(text)?;
    match probe.kind.as_str() {
        "sf21" => {
            let raw: RawSfConfig = toml::from_str(text)?;
            raw.into_model()
        }
        "bf" => {
            let raw: RawBfConfig = toml::from_str(text)?;
            raw.into_model()
        }
        other => Err(HcError::Config(format!(
            "unknown model kind {other:?}; expected \"sf21\" or \"bf\""
        ))),
    }
}

pub fn model_to_toml(model: &Model) -> Result<String> {
    let text = match model {
        Model::Sf21(m) => toml::to_string(&RawSfConfig::from_model(m))
            .map_err(|e| HcError::Config(format!("serialization failed: {e}")))?,
        Model::Bf(m) => toml::to_string(&RawBfConfig::from_model(m))
            .map_err(|e| HcError::Config(format!("serialization failed: {e}")))?,
    };
    Ok(text)
}

const DEFAULT_DEGREE_CAP: usize = 4;

fn default_cap() -> usize {
    DEFAULT_DEGREE_CAP
}

fn default_component() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpectrum {
    lambda: f64,
    omega: f64,
    gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega2: Option<f64>,
    lambda_hat: f64,
    gamma_hat: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    b: Vec<Vec<f64>>,
}

impl RawSpectrum {
    fn into_spectrum(self) -> Result<LocalSpectrum> {
        Ok(LocalSpectrum {
            lambda: self.lambda,
            omega: self.omega,
            gamma: self.gamma,
            omega2: self.omega2,
            a: rows_to_matrix(&self.a, 0, "spectrum.a")?,
            b: rows_to_matrix(&self.b, 0, "spectrum.b")?,
            lambda_hat: self.lambda_hat,
            gamma_hat: self.gamma_hat,
        })
    }

    fn from_spectrum(s: &LocalSpectrum) -> Self {
        RawSpectrum {
            lambda: s.lambda,
            omega: s.omega,
            gamma: s.gamma,
            omega2: s.omega2,
            lambda_hat: s.lambda_hat,
            gamma_hat: s.gamma_hat,
            a: matrix_to_rows(&s.a),
            b: matrix_to_rows(&s.b),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    delta: f64,
    slack: f64,
}

impl Default for RawDomain {
    fn default() -> Self {
        let d = DomainSpec::default();
        RawDomain {
            delta: d.delta,
            slack: d.slack,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCones {
    k1_cs: f64,
    k2_cs: f64,
    k1_ss: f64,
    k2_ss: f64,
    k1_cu: f64,
    k2_cu: f64,
    k_uu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    k1_uu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k2_uu: Option<f64>,
    contraction_c: f64,
    k0: u32,
}

impl RawCones {
    fn into_spec(self) -> ConeSpec {
        ConeSpec {
            k1_cs: self.k1_cs,
            k2_cs: self.k2_cs,
            k1_ss: self.k1_ss,
            k2_ss: self.k2_ss,
            k1_cu: self.k1_cu,
            k2_cu: self.k2_cu,
            k_uu: self.k_uu,
            k1_uu: self.k1_uu,
            k2_uu: self.k2_uu,
            contraction_c: self.contraction_c,
            k0: self.k0,
        }
    }

    fn from_spec(c: &ConeSpec) -> Self {
        RawCones {
            k1_cs: c.k1_cs,
            k2_cs: c.k2_cs,
            k1_ss: c.k1_ss,
            k2_ss: c.k2_ss,
            k1_cu: c.k1_cu,
            k2_cu: c.k2_cu,
            k_uu: c.k_uu,
            k1_uu: c.k1_uu,
            k2_uu: c.k2_uu,
            contraction_c: c.contraction_c,
            k0: c.k0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChecks {
    h_const: f64,
    l_const: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMonomial {
    powers: Vec<u8>,
    coeff: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGMonomial {
    #[serde(default = "default_component")]
    component: usize,
    powers: Vec<u8>,
    coeff: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawNonlinear {
    degree_cap: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    g1: Vec<RawGMonomial>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    g2: Vec<RawGMonomial>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    g3: Vec<RawGMonomial>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    g4: Vec<RawGMonomial>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    g5: Vec<RawGMonomial>,
}

impl RawNonlinear {
    fn into_tails(self, layout: VarLayout) -> Result<LocalTails> {
        let cap = self.degree_cap.unwrap_or_else(default_cap);
        let d = layout.dim();
        let build_multi = |raw: &[RawGMonomial], count: usize, name: &str| -> Result<Vec<Poly>> {
            let mut per: Vec<Vec<(Vec<u8>, f64)>> = vec![Vec::new(); count];
            for m in raw {
                if m.component == 0 || m.component > count {
                    return Err(HcError::Config(format!(
                        "{name}: component {} out of range 1..={count}",
                        m.component
                    )));
                }
                let deg: usize = m.powers.iter().map(|&p| p as usize).sum();
                if deg > cap {
                    return Err(HcError::Config(format!(
                        "{name}: monomial degree {deg} exceeds cap {cap}"
                    )));
                }
                per[m.component - 1].push((m.powers.clone(), m.coeff));
            }
            per.iter().map(|t| Poly::from_terms(d, t)).collect()
        };
        let g1 = build_multi(&self.g1, 1, "nonlinear.g1")?.pop().unwrap();
        let g2 = build_multi(&self.g2, 1, "nonlinear.g2")?.pop().unwrap();
        Ok(LocalTails {
            g1,
            g2,
            g3: build_multi(&self.g3, layout.dcu, "nonlinear.g3")?,
            g4: build_multi(&self.g4, layout.nu, "nonlinear.g4")?,
            g5: build_multi(&self.g5, layout.nv, "nonlinear.g5")?,
        })
    }

    fn from_tails(t: &LocalTails) -> Self {
        let single = |p: &Poly| -> Vec<RawGMonomial> {
            p.terms()
                .map(|(e, c)| RawGMonomial {
                    component: 1,
                    powers: e.to_vec(),
                    coeff: c,
                })
                .collect()
        };
        let multi = |ps: &[Poly]| -> Vec<RawGMonomial> {
            ps.iter()
                .enumerate()
                .flat_map(|(i, p)| {
                    p.terms()
                        .map(|(e, c)| RawGMonomial {
                            component: i + 1,
                            powers: e.to_vec(),
                            coeff: c,
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        RawNonlinear {
            degree_cap: None,
            g1: single(&t.g1),
            g2: single(&t.g2),
            g3: multi(&t.g3),
            g4: multi(&t.g4),
            g5: multi(&t.g5),
        }
    }

    fn is_empty(&self) -> bool {
        self.degree_cap.is_none()
            && self.g1.is_empty()
            && self.g2.is_empty()
            && self.g3.is_empty()
            && self.g4.is_empty()
            && self.g5.is_empty()
    }
}

type RawTail = BTreeMap<String, Vec<RawMonomial>>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSfGlobal {
    x_plus: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    u_plus: Vec<f64>,
    y_minus: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    v_minus: Vec<f64>,
    a: Vec<Vec<f64>>,
    a3: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    a4: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    a5: Vec<Vec<f64>>,
    b1: f64,
    b3: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    b4: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    b5: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c3: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c4: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c5: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d3: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d4: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d5: Vec<Vec<f64>>,
    e1: f64,
    e2: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    tail: RawTail,
}

fn sf_row_names(nu: usize, nv: usize) -> Vec<String> {
    let mut names = vec!["x1".to_string(), "x2".to_string(), "y".to_string()];
    names.extend((1..=nu).map(|i| format!("u{i}")));
    names.extend((1..=nv).map(|i| format!("v{i}")));
    names
}

fn bf_row_names(nu: usize, nv: usize) -> Vec<String> {
    let mut names = vec!["x1".to_string(), "x2".to_string(), "y1".to_string()];
    names.extend((1..=nu).map(|i| format!("u{i}")));
    names.push("y2".to_string());
    names.extend((1..=nv).map(|i| format!("v{i}")));
    names
}

fn tails_from_raw(raw: &RawTail, names: &[String], d: usize) -> Result<Vec<Poly>> {
    for key in raw.keys() {
        if !names.contains(key) {
            return Err(HcError::Config(format!(
                "unknown tail row {key:?}; expected one of {names:?}"
            )));
        }
    }
    names
        .iter()
        .map(|name| match raw.get(name) {
            None => Ok(Poly::zero(d)),
            Some(ms) => {
                let terms: Vec<(Vec<u8>, f64)> =
                    ms.iter().map(|m| (m.powers.clone(), m.coeff)).collect();
                Poly::from_terms(d, &terms)
            }
        })
        .collect()
}

fn tails_to_raw(tails: &[Poly], names: &[String]) -> RawTail {
    let mut map = BTreeMap::new();
    for (p, name) in tails.iter().zip(names) {
        if p.is_zero() {
            continue;
        }
        let ms: Vec<RawMonomial> = p
            .terms()
            .map(|(e, c)| RawMonomial {
                powers: e.to_vec(),
                coeff: c,
            })
            .collect();
        map.insert(name.clone(), ms);
    }
    map
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSfConfig {
    kind: String,
    spectrum: RawSpectrum,
    #[serde(default)]
    domain: RawDomain,
    global: RawSfGlobal,
    #[serde(default, skip_serializing_if = "RawNonlinear::is_empty")]
    nonlinear: RawNonlinear,
    #[serde(skip_serializing_if = "Option::is_none")]
    cones: Option<RawCones>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checks: Option<RawChecks>,
}

impl RawSfConfig {
    fn into_model(self) -> Result<Model> {
        let g = self.global;
        let nu = g.u_plus.len();
        let nv = g.v_minus.len();
        let layout = VarLayout { dcu: 1, nu, nv };
        let names = sf_row_names(nu, nv);
        let global = SfGlobal {
            x_plus: Vector2::from(g.x_plus),
            u_plus: DVector::from_vec(g.u_plus.clone()),
            y_minus: g.y_minus,
            v_minus: DVector::from_vec(g.v_minus.clone()),
            a: mat2(&g.a, "global.a")?,
            a3: Vector2::from(g.a3),
            a4: rows_to_matrix(&g.a4, 2, "global.a4")?,
            a5: rows_to_matrix(&g.a5, 2, "global.a5")?,
            b1: g.b1,
            b3: g.b3,
            b4: DVector::from_vec(g.b4.clone()),
            b5: DVector::from_vec(g.b5.clone()),
            c1: DVector::from_vec(g.c1.clone()),
            c2: DVector::from_vec(g.c2.clone()),
            c3: DVector::from_vec(g.c3.clone()),
            c4: rows_to_matrix(&g.c4, nu, "global.c4")?,
            c5: rows_to_matrix(&g.c5, nu, "global.c5")?,
            d1: DVector::from_vec(g.d1.clone()),
            d2: DVector::from_vec(g.d2.clone()),
            d3: DVector::from_vec(g.d3.clone()),
            d4: rows_to_matrix(&g.d4, nv, "global.d4")?,
            d5: rows_to_matrix(&g.d5, nv, "global.d5")?,
            e1: g.e1,
            e2: g.e2,
            tails: tails_from_raw(&g.tail, &names, layout.dim())?,
        };
        let model = SfModel::new(
            self.spectrum.into_spectrum()?,
            self.nonlinear.into_tails(layout)?,
            global,
            DomainSpec {
                delta: self.domain.delta,
                slack: self.domain.slack,
            },
            self.cones.map(RawCones::into_spec),
            self.checks
                .map(|c| CheckSpec {
                    h_const: c.h_const,
                    l_const: c.l_const,
                })
                .unwrap_or_default(),
        )?;
        Ok(Model::Sf21(model))
    }

    fn from_model(m: &SfModel) -> Self {
        let g = &m.global;
        let names = sf_row_names(g.nu(), g.nv());
        RawSfConfig {
            kind: "sf21".to_string(),
            spectrum: RawSpectrum::from_spectrum(&m.spectrum),
            domain: RawDomain {
                delta: m.domain.delta,
                slack: m.domain.slack,
            },
            global: RawSfGlobal {
                x_plus: [g.x_plus[0], g.x_plus[1]],
                u_plus: g.u_plus.iter().cloned().collect(),
                y_minus: g.y_minus,
                v_minus: g.v_minus.iter().cloned().collect(),
                a: matrix_to_rows(&Matrix2d_to_d(&g.a)),
                a3: [g.a3[0], g.a3[1]],
                a4: matrix_to_rows(&g.a4),
                a5: matrix_to_rows(&g.a5),
                b1: g.b1,
                b3: g.b3,
                b4: g.b4.iter().cloned().collect(),
                b5: g.b5.iter().cloned().collect(),
                c1: g.c1.iter().cloned().collect(),
                c2: g.c2.iter().cloned().collect(),
                c3: g.c3.iter().cloned().collect(),
                c4: matrix_to_rows(&g.c4),
                c5: matrix_to_rows(&g.c5),
                d1: g.d1.iter().cloned().collect(),
                d2: g.d2.iter().cloned().collect(),
                d3: g.d3.iter().cloned().collect(),
                d4: matrix_to_rows(&g.d4),
                d5: matrix_to_rows(&g.d5),
                e1: g.e1,
                e2: g.e2,
                tail: tails_to_raw(&g.tails, &names),
            },
            nonlinear: RawNonlinear::from_tails(&m.local),
            cones: m.cones.as_ref().map(RawCones::from_spec),
            checks: Some(RawChecks {
                h_const: m.checks.h_const,
                l_const: m.checks.l_const,
            }),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBfGlobal {
    x_plus: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    u_plus: Vec<f64>,
    y_minus: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    v_minus: Vec<f64>,
    a: Vec<Vec<f64>>,
    a3: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    a4: Vec<Vec<f64>>,
    a5: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    a6: Vec<Vec<f64>>,
    b11: f64,
    b12: f64,
    b22: f64,
    b31: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    b41: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    b42: Vec<f64>,
    b51: f64,
    b52: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    b61: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    b62: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c3: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c4: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c5: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c6: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d3: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d4: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d5: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    d6: Vec<Vec<f64>>,
    e1: f64,
    e2: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    tail: RawTail,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBfConfig {
    kind: String,
    spectrum: RawSpectrum,
    #[serde(default)]
    domain: RawDomain,
    global: RawBfGlobal,
    #[serde(default, skip_serializing_if = "RawNonlinear::is_empty")]
    nonlinear: RawNonlinear,
    #[serde(skip_serializing_if = "Option::is_none")]
    cones: Option<RawCones>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checks: Option<RawChecks>,
}

impl RawBfConfig {
    fn into_model(self) -> Result<Model> {
        let g = self.global;
        let nu = g.u_plus.len();
        let nv = g.v_minus.len();
        let layout = VarLayout { dcu: 2, nu, nv };
        let names = bf_row_names(nu, nv);
        let global = BfGlobal {
            x_plus: Vector2::from(g.x_plus),
            u_plus: DVector::from_vec(g.u_plus.clone()),
            y_minus: Vector2::from(g.y_minus),
            v_minus: DVector::from_vec(g.v_minus.clone()),
            a: mat2(&g.a, "global.a")?,
            a3: Vector2::from(g.a3),
            a4: rows_to_matrix(&g.a4, 2, "global.a4")?,
            a5: Vector2::from(g.a5),
            a6: rows_to_matrix(&g.a6, 2, "global.a6")?,
            b11: g.b11,
            b12: g.b12,
            b22: g.b22,
            b31: g.b31,
            b41: DVector::from_vec(g.b41.clone()),
            b42: DVector::from_vec(g.b42.clone()),
            b51: g.b51,
            b52: g.b52,
            b61: DVector::from_vec(g.b61.clone()),
            b62: DVector::from_vec(g.b62.clone()),
            c1: DVector::from_vec(g.c1.clone()),
            c2: DVector::from_vec(g.c2.clone()),
            c3: DVector::from_vec(g.c3.clone()),
            c4: rows_to_matrix(&g.c4, nu, "global.c4")?,
            c5: DVector::from_vec(g.c5.clone()),
            c6: rows_to_matrix(&g.c6, nu, "global.c6")?,
            d1: DVector::from_vec(g.d1.clone()),
            d2: DVector::from_vec(g.d2.clone()),
            d3: DVector::from_vec(g.d3.clone()),
            d4: rows_to_matrix(&g.d4, nv, "global.d4")?,
            d5: DVector::from_vec(g.d5.clone()),
            d6: rows_to_matrix(&g.d6, nv, "global.d6")?,
            e1: g.e1,
            e2: g.e2,
            tails: tails_from_raw(&g.tail, &names, layout.dim())?,
        };
        let model = BfModel::new(
            self.spectrum.into_spectrum()?,
            self.nonlinear.into_tails(layout)?,
            global,
            DomainSpec {
                delta: self.domain.delta,
                slack: self.domain.slack,
            },
            self.cones.map(RawCones::into_spec),
            self.checks
                .map(|c| CheckSpec {
                    h_const: c.h_const,
                    l_const: c.l_const,
                })
                .unwrap_or_default(),
        )?;
        Ok(Model::Bf(model))
    }

    fn from_model(m: &BfModel) -> Self {
        let g = &m.global;
        let names = bf_row_names(g.nu(), g.nv());
        RawBfConfig {
            kind: "bf".to_string(),
            spectrum: RawSpectrum::from_spectrum(&m.spectrum),
            domain: RawDomain {
                delta: m.domain.delta,
                slack: m.domain.slack,
            },
            global: RawBfGlobal {
                x_plus: [g.x_plus[0], g.x_plus[1]],
                u_plus: g.u_plus.iter().cloned().collect(),
                y_minus: [g.y_minus[0], g.y_minus[1]],
                v_minus: g.v_minus.iter().cloned().collect(),
                a: matrix_to_rows(&Matrix2d_to_d(&g.a)),
                a3: [g.a3[0], g.a3[1]],
                a4: matrix_to_rows(&g.a4),
                a5: [g.a5[0], g.a5[1]],
                a6: matrix_to_rows(&g.a6),
                b11: g.b11,
                b12: g.b12,
                b22: g.b22,
                b31: g.b31,
                b41: g.b41.iter().cloned().collect(),
                b42: g.b42.iter().cloned().collect(),
                b51: g.b51,
                b52: g.b52,
                b61: g.b61.iter().cloned().collect(),
                b62: g.b62.iter().cloned().collect(),
                c1: g.c1.iter().cloned().collect(),
                c2: g.c2.iter().cloned().collect(),
                c3: g.c3.iter().cloned().collect(),
                c4: matrix_to_rows(&g.c4),
                c5: g.c5.iter().cloned().collect(),
                c6: matrix_to_rows(&g.c6),
                d1: g.d1.iter().cloned().collect(),
                d2: g.d2.iter().cloned().collect(),
                d3: g.d3.iter().cloned().collect(),
                d4: matrix_to_rows(&g.d4),
                d5: g.d5.iter().cloned().collect(),
                d6: matrix_to_rows(&g.d6),
                e1: g.e1,
                e2: g.e2,
                tail: tails_to_raw(&g.tails, &names),
            },
            nonlinear: RawNonlinear::from_tails(&m.local),
            cones: m.cones.as_ref().map(RawCones::from_spec),
            checks: Some(RawChecks {
                h_const: m.checks.h_const,
                l_const: m.checks.l_const,
            }),
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], ncols_if_empty: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, ncols_if_empty));
    }
    let nc = rows[0].len();
    let mut flat = Vec::with_capacity(rows.len() * nc);
    for r in rows {
        if r.len() != nc {
            return Err(HcError::Config(format!("{what}: ragged matrix rows")));
        }
        flat.extend_from_slice(r);
    }
    Ok(DMatrix::from_row_slice(rows.len(), nc, &flat))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn mat2(rows: &[Vec<f64>], what: &str) -> Result<Matrix2<f64>> {
    let m = rows_to_matrix(rows, 2, what)?;
    if m.shape() != (2, 2) {
        return Err(HcError::Config(format!("{what}: expected a 2x2 matrix")));
    }
    Ok(Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]))
}

#[allow(non_snake_case)]
fn Matrix2d_to_d(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models;

    const SF_MIN: &str = r#"
kind = "sf21"

[spectrum]
lambda = 0.7
omega = 1.0
gamma = 1.6
lambda_hat = 0.66
gamma_hat = 2.2

[domain]
delta = 0.1
slack = 1.05

[global]
x_plus = [0.03, -0.04]
y_minus = 0.09
a = [[0.3, 0.06], [0.05, 0.28]]
a3 = [2.5, 0.35]
b1 = 14.0
b3 = 200.0
e1 = 0.25
e2 = -0.2
"#;

    #[test]
    fn parses_minimal_sf_config() {
        let m = parse_model(SF_MIN).unwrap();
        let sf = m.as_sf().unwrap();
        assert_eq!(sf.dim(), 3);
        assert_eq!(sf.global.b1, 14.0);
        assert!(sf.is_linear_local());
        assert_eq!(*sf, test_models::sf_minimal());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for model in [
            Model::Sf21(test_models::sf_minimal()),
            Model::Sf21(test_models::sf_extended()),
            Model::Bf(test_models::bf_minimal()),
        ] {
            let text = model_to_toml(&model).unwrap();
            let again = parse_model(&text).unwrap();
            assert_eq!(model, again, "round trip changed the model:\n{text}");
            // And the serialized form itself is stable.
            let text2 = model_to_toml(&again).unwrap();
            assert_eq!(text, text2);
        }
    }

    #[test]
    fn tail_and_nonlinear_terms_survive_round_trip() {
        let text = format!(
            "{SF_MIN}
[[global.tail.y]]
powers = [0, 0, 3]
coeff = -0.125

[[nonlinear.g1]]
powers = [2, 0, 1]
coeff = 0.0625

[[nonlinear.g3]]
powers = [1, 0, 2]
coeff = 0.03125
"
        );
        let m = parse_model(&text).unwrap();
        let sf = m.as_sf().unwrap();
        assert_eq!(sf.global.tails[2].coeff(&[0, 0, 3]), -0.125);
        assert_eq!(sf.local.g1.coeff(&[2, 0, 1]), 0.0625);
        assert!(!sf.is_linear_local());
        let again = parse_model(&model_to_toml(&m).unwrap()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn unknown_keys_and_kinds_are_rejected() {
        let bad = SF_MIN.replace("kind = \"sf21\"", "kind = \"sf\"");
        assert!(matches!(
            parse_model(&bad).unwrap_err(),
            HcError::Config(_)
        ));
        let bad = format!("{SF_MIN}\n[global.extra]\nfoo = 1\n");
        assert!(parse_model(&bad).is_err());
    }

    #[test]
    fn degree_cap_is_enforced() {
        let text = format!(
            "{SF_MIN}
[nonlinear]
degree_cap = 3

[[nonlinear.g1]]
powers = [2, 0, 2]
coeff = 0.1
"
        );
        let err = parse_model(&text).unwrap_err();
        assert!(matches!(err, HcError::Config(_)), "{err}");
    }

    #[test]
    fn sha256_is_stable() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
