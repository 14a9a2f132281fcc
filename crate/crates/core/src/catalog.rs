//! Built-in closed-form field catalog, field definition files and chart maps.
//!
//! The catalog names the scalar, vector and tensor families used by the
//! verification suites: Gaussian bumps, polynomial-times-bump profiles, tau
//! powers, rotation/dilation vector fields, sphere-coordinate functions and
//! the tensor perturbations assembled from them.  Definition files are plain
//! `key = value` text, one field per file.

use crate::error::{Error, Result};
use crate::fields::{
    conformal_direction, lie_derivative_round, pushforward_from_theta, Decay, ScalarField,
    SymTensorField, VectorField, SYM_INDEX,
};
use crate::grid::{Grid3, GridScalar};
use crate::jet::{norm2, Jet};
use std::collections::BTreeMap;
use std::path::Path;

// ---------------------------------------------------------------------------
// scalar families
// ---------------------------------------------------------------------------

/// amp * exp(-|x - c|^2 / w^2)
pub fn gaussian_bump(amp: f64, center: [f64; 3], width: f64) -> ScalarField {
    let iw2 = 1.0 / (width * width);
    ScalarField::analytic(
        move |v| {
            let ord = v[0].order();
            let mut r2 = Jet::zero(ord);
            for i in 0..3 {
                let d = v[i] - Jet::constant(center[i], ord);
                r2 = r2 + d * d;
            }
            (-r2.scale(iw2)).exp().scale(amp)
        },
        Decay::Rapid,
    )
}

/// (c0 + c1 x1 + c2 x2 + c3 x3) * exp(-|x - c|^2 / w^2)
pub fn poly_bump(coeffs: [f64; 4], center: [f64; 3], width: f64) -> ScalarField {
    let iw2 = 1.0 / (width * width);
    ScalarField::analytic(
        move |v| {
            let ord = v[0].order();
            let mut r2 = Jet::zero(ord);
            for i in 0..3 {
                let d = v[i] - Jet::constant(center[i], ord);
                r2 = r2 + d * d;
            }
            let p = Jet::constant(coeffs[0], ord)
                + v[0].scale(coeffs[1])
                + v[1].scale(coeffs[2])
                + v[2].scale(coeffs[3]);
            p * (-r2.scale(iw2)).exp()
        },
        Decay::Rapid,
    )
}

/// tau^p
pub fn tau_power(p: f64) -> ScalarField {
    ScalarField::analytic(move |v| crate::fields::tau_pow_jet(v, p), Decay::Power(p))
}

/// Jets of the four ambient sphere coordinates z(x) under inverse
/// stereographic projection from the north pole:
/// z_i = 2 x_i / (r^2 + 1), z_4 = (r^2 - 1) / (r^2 + 1).
pub fn ambient_jets(v: &[Jet; 3]) -> [Jet; 4] {
    let ord = v[0].order();
    let one = Jet::constant(1.0, ord);
    let denom = (norm2(v) + one).recip();
    [
        v[0].scale(2.0) * denom,
        v[1].scale(2.0) * denom,
        v[2].scale(2.0) * denom,
        (norm2(v) - one) * denom,
    ]
}

/// Restriction of the ambient coordinate z_a (a in 0..4) to the chart.
pub fn sphere_coordinate(a: usize) -> ScalarField {
    assert!(a < 4);
    let d = if a == 3 { Decay::Power(0.0) } else { Decay::Power(-1.0) };
    ScalarField::analytic(move |v| ambient_jets(v)[a], d)
}

/// Ambient coordinates of the south-pole chart: z_i = 2 y_i / (|y|^2 + 1),
/// z_4 = (1 - |y|^2) / (|y|^2 + 1).
pub fn ambient_jets_south(v: &[Jet; 3]) -> [Jet; 4] {
    let mut z = ambient_jets(v);
    z[3] = -z[3];
    z
}

/// Closed-form Jacobian d z_A / d x_a of the north-chart inverse projection,
/// indexed [a][A].  Written out so that composing fields through it does not
/// consume a derivative order.
pub fn ambient_jacobian(v: &[Jet; 3]) -> [[Jet; 4]; 3] {
    let ord = v[0].order();
    let one = Jet::constant(1.0, ord);
    let den = (norm2(v) + one).recip();
    let den2 = den * den;
    let mut out = [[Jet::zero(ord); 4]; 3];
    for a in 0..3 {
        for i in 0..3 {
            // d/dx_a [2 x_i / (r^2+1)] = 2 delta_ia / (r^2+1) - 4 x_i x_a / (r^2+1)^2
            let mut t = (v[i] * v[a] * den2).scale(-4.0);
            if i == a {
                t = t + den.scale(2.0);
            }
            out[a][i] = t;
        }
        // d/dx_a [(r^2-1)/(r^2+1)] = 4 x_a / (r^2+1)^2
        out[a][3] = (v[a] * den2).scale(4.0);
    }
    out
}

/// The same Jacobian for the south chart (z_4 row flips sign).
pub fn ambient_jacobian_south(v: &[Jet; 3]) -> [[Jet; 4]; 3] {
    let mut j = ambient_jacobian(v);
    for row in &mut j {
        row[3] = -row[3];
    }
    j
}

fn sym4_slot(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    // packed upper triangle of a symmetric 4x4
    [[0, 1, 2, 3], [1, 4, 5, 6], [2, 5, 7, 8], [3, 6, 8, 9]][a][b]
}

type AmbientFn = dyn Fn(&[Jet; 4]) -> Jet + Send + Sync;

/// A smooth symmetric tensor on the sphere described by ambient components
/// T_AB(z) (polynomials in the catalog); chart components follow by pulling
/// back through the inverse stereographic projections.
#[derive(Clone)]
pub struct AmbientTensor {
    comps: [std::sync::Arc<AmbientFn>; 10],
}

impl AmbientTensor {
    pub fn new(comps: [std::sync::Arc<AmbientFn>; 10]) -> Self {
        AmbientTensor { comps }
    }

    /// Constant ambient components.
    pub fn constant(m: [[f64; 4]; 4]) -> Self {
        let comps: [std::sync::Arc<AmbientFn>; 10] = std::array::from_fn(|slot| {
            let (a, b) = SYM4_INDEX[slot];
            let v = 0.5 * (m[a][b] + m[b][a]);
            let f: std::sync::Arc<AmbientFn> =
                std::sync::Arc::new(move |z: &[Jet; 4]| Jet::constant(v, z[0].order()));
            f
        });
        AmbientTensor { comps }
    }

    /// Components built from quadratic monomials: for each entry
    /// (A, B, w1, w2, c) add c z_{w1} z_{w2} to T_AB.
    pub fn quadratic(terms: Vec<(usize, usize, usize, usize, f64)>) -> Self {
        let comps: [std::sync::Arc<AmbientFn>; 10] = std::array::from_fn(|slot| {
            let mine: Vec<(usize, usize, f64)> = terms
                .iter()
                .filter(|(a, b, _, _, _)| sym4_slot(*a, *b) == slot)
                .map(|(_, _, w1, w2, c)| (*w1, *w2, *c))
                .collect();
            let f: std::sync::Arc<AmbientFn> = std::sync::Arc::new(move |z: &[Jet; 4]| {
                let mut acc = Jet::zero(z[0].order());
                for (w1, w2, c) in &mine {
                    acc = acc + (z[*w1] * z[*w2]).scale(*c);
                }
                acc
            });
            f
        });
        AmbientTensor { comps }
    }

    /// Components T_AB = c_AB z_{w(A,B)} (one ambient coordinate as weight).
    pub fn linear(weights: [(usize, usize, usize, f64); 4]) -> Self {
        let comps: [std::sync::Arc<AmbientFn>; 10] = std::array::from_fn(|slot| {
            let terms: Vec<(usize, f64)> = weights
                .iter()
                .filter(|(a, b, _, _)| sym4_slot(*a, *b) == slot)
                .map(|(_, _, w, c)| (*w, *c))
                .collect();
            let f: std::sync::Arc<AmbientFn> = std::sync::Arc::new(move |z: &[Jet; 4]| {
                let mut acc = Jet::zero(z[0].order());
                for (w, c) in &terms {
                    acc = acc + z[*w].scale(*c);
                }
                acc
            });
            f
        });
        AmbientTensor { comps }
    }

    /// Jets of the ten ambient components at given ambient-coordinate jets.
    pub fn jets_at(&self, z: &[Jet; 4]) -> [Jet; 10] {
        std::array::from_fn(|s| (self.comps[s])(z))
    }

    /// Chart components h_ab = T_AB dz_A/dx_a dz_B/dx_b in the north chart.
    pub fn chart_north(&self) -> SymTensorField {
        self.chart_field(false)
    }

    /// Chart components in the south chart (coordinates centred at the north pole).
    pub fn chart_south(&self) -> SymTensorField {
        self.chart_field(true)
    }

    fn chart_field(&self, south: bool) -> SymTensorField {
        let comps: [ScalarField; 6] = std::array::from_fn(|slot| {
            let (a, b) = SYM_INDEX[slot];
            let t = self.clone();
            ScalarField::analytic(
                move |v| {
                    let (z, jac) = if south {
                        (ambient_jets_south(v), ambient_jacobian_south(v))
                    } else {
                        (ambient_jets(v), ambient_jacobian(v))
                    };
                    let tz = t.jets_at(&z);
                    let mut acc = Jet::zero(v[0].order());
                    for aa in 0..4 {
                        for bb in 0..4 {
                            acc = acc + tz[sym4_slot(aa, bb)] * jac[a][aa] * jac[b][bb];
                        }
                    }
                    acc
                },
                Decay::Power(-4.0),
            )
        });
        SymTensorField::new(comps, Decay::Power(-4.0))
    }
}

pub const SYM4_INDEX: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

/// Smooth sphere tensors with genuine transverse-traceless content: their
/// second variation is strictly negative.  Quadratic ambient weights are the
/// lowest modes that are not pure gauge on the sphere.
pub fn ambient_tt_family() -> Vec<(&'static str, AmbientTensor)> {
    vec![
        (
            "tt-quad-1",
            AmbientTensor::quadratic(vec![(0, 1, 2, 3, 1.0), (2, 3, 0, 1, 0.8)]),
        ),
        (
            "tt-quad-2",
            AmbientTensor::quadratic(vec![(1, 2, 0, 3, 0.9), (0, 3, 1, 2, 0.5)]),
        ),
        (
            "tt-quad-3",
            AmbientTensor::quadratic(vec![
                (0, 0, 1, 2, 1.0),
                (1, 1, 1, 2, -1.0),
                (0, 3, 0, 1, 0.5),
            ]),
        ),
    ]
}

/// Smooth sphere tensors used by the gauge-normalisation suite.
pub fn ambient_family() -> Vec<(&'static str, AmbientTensor)> {
    let mut c1 = [[0.0; 4]; 4];
    c1[0][0] = 1.0;
    c1[1][2] = 0.4;
    c1[2][1] = 0.4;
    let mut c2 = [[0.0; 4]; 4];
    c2[3][3] = 0.8;
    c2[0][1] = -0.3;
    c2[1][0] = -0.3;
    vec![
        ("ambient-const-1", AmbientTensor::constant(c1)),
        ("ambient-const-2", AmbientTensor::constant(c2)),
        (
            "ambient-linear",
            AmbientTensor::linear([
                (0, 0, 3, 1.0),  // T_00 = z4
                (1, 2, 0, 0.5),  // T_12 = z1 / 2
                (2, 3, 1, -0.7), // T_23 = -0.7 z2
                (3, 3, 2, 0.6),  // T_33 = 0.6 z3
            ]),
        ),
    ]
}

// ---------------------------------------------------------------------------
// vector families
// ---------------------------------------------------------------------------

/// Rotation field around a coordinate axis (a Killing field of the round metric).
pub fn rotation_field(axis: usize) -> VectorField {
    let (i, j) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    let mut comps: [ScalarField; 3] = std::array::from_fn(|_| ScalarField::zero());
    comps[i] = ScalarField::analytic(move |v| -v[j], Decay::Power(1.0));
    comps[j] = ScalarField::analytic(move |v| v[i], Decay::Power(1.0));
    VectorField::new(comps)
}

/// The dilation field x_i d_i (a conformal Killing field).
pub fn dilation_field() -> VectorField {
    VectorField::new(std::array::from_fn(|i| {
        ScalarField::analytic(move |v| v[i], Decay::Power(1.0))
    }))
}

/// Gaussian bump vector field along a fixed direction.
pub fn bump_vector(dir: [f64; 3], center: [f64; 3], width: f64) -> VectorField {
    VectorField::new(std::array::from_fn(|i| gaussian_bump(dir[i], center, width)))
}

/// Dilation modulated by a Gaussian profile (decaying conformal-type field).
pub fn dilation_bump(width: f64) -> VectorField {
    let iw2 = 1.0 / (width * width);
    VectorField::new(std::array::from_fn(|i| {
        ScalarField::analytic(move |v| v[i] * (-norm2(v).scale(iw2)).exp(), Decay::Rapid)
    }))
}

// ---------------------------------------------------------------------------
// tensor families
// ---------------------------------------------------------------------------

/// theta with a single Gaussian component (i, j), symmetrised.
pub fn gaussian_component_theta(
    i: usize,
    j: usize,
    amp: f64,
    center: [f64; 3],
    width: f64,
) -> SymTensorField {
    let mut comps: [ScalarField; 6] = std::array::from_fn(|_| ScalarField::zero());
    comps[crate::fields::sym_slot(i, j)] = gaussian_bump(amp, center, width);
    SymTensorField::new(comps, Decay::Rapid)
}

/// theta_ij = w_ij(z(x)): the pullback of a smooth tensor on the sphere whose
/// theta-components are degree-one polynomials in the ambient coordinates.
/// The chart components h = tau^-4 theta then decay like |x|^-4.
pub fn ambient_linear_theta(w: [[f64; 5]; 6]) -> SymTensorField {
    let comps: [ScalarField; 6] = std::array::from_fn(|slot| {
        let c = w[slot];
        ScalarField::analytic(
            move |v| {
                let ord = v[0].order();
                let z = ambient_jets(v);
                let mut acc = Jet::constant(c[0], ord);
                for a in 0..4 {
                    acc = acc + z[a].scale(c[a + 1]);
                }
                acc
            },
            Decay::Power(0.0),
        )
    });
    SymTensorField::new(comps, Decay::Power(0.0))
}

/// A named h-perturbation of the round metric.
#[derive(Clone)]
pub struct Perturbation {
    pub name: &'static str,
    /// h in chart components
    pub h: SymTensorField,
    /// theta = tau^4 h
    pub theta: SymTensorField,
    /// whether h lies in the gauge directions L_X g + f g
    pub is_gauge: bool,
}

fn from_theta(name: &'static str, theta: SymTensorField, is_gauge: bool) -> Perturbation {
    Perturbation { name, h: pushforward_from_theta(&theta), theta, is_gauge }
}

fn from_h(name: &'static str, h: SymTensorField, is_gauge: bool) -> Perturbation {
    Perturbation { name, theta: crate::fields::pullback_theta(&h), h, is_gauge }
}

/// Fast-decaying non-gauge bumps (the strictly-negative second variation family).
pub fn bump_family() -> Vec<Perturbation> {
    vec![
        from_theta("bump-11", gaussian_component_theta(0, 0, 1.0, [0.0; 3], 1.0), false),
        from_theta(
            "bump-12-offset",
            gaussian_component_theta(0, 1, 0.8, [0.5, -0.3, 0.2], 1.2),
            false,
        ),
        from_theta(
            "bump-mixed",
            gaussian_component_theta(0, 0, 0.7, [0.0; 3], 1.0)
                .add(&gaussian_component_theta(1, 2, 0.5, [-0.4, 0.1, 0.3], 0.9)),
            false,
        ),
    ]
}

/// Gauge directions built from the conformal and diffeomorphism families.
pub fn gauge_family() -> Vec<Perturbation> {
    let mut out = Vec::new();
    // conformal directions f g
    for (name, f) in [
        ("conf-gaussian", gaussian_bump(1.0, [0.0; 3], 1.0)),
        ("conf-poly-bump", poly_bump([0.3, 1.0, -0.5, 0.2], [0.2, 0.0, -0.1], 1.1)),
        ("conf-constant", ScalarField::constant(1.0)),
        ("conf-tau-trunc", tau_power(-2.0).mul(&gaussian_bump(1.0, [0.0; 3], 2.5))),
    ] {
        out.push(from_h(name, conformal_direction(&f), true));
    }
    // diffeomorphism directions L_X g; the bump-driven fields have Gaussian
    // tails and the rotation is an exact Killing direction
    for (name, xf) in [
        ("lie-rotation", rotation_field(2)),
        ("lie-bump", bump_vector([1.0, 0.3, -0.2], [0.3, 0.2, 0.0], 1.4)),
        ("lie-dilation-bump", dilation_bump(1.5)),
    ] {
        out.push(from_theta(
            name,
            lie_derivative_round(&xf).with_decay(Decay::Rapid),
            true,
        ));
    }
    out
}

/// Smooth-on-the-sphere perturbations with theta = O(1) tails; these exercise
/// the boundary-flux limit of the first variation.
pub fn sphere_smooth_family() -> Vec<Perturbation> {
    let mut w1 = [[0.0; 5]; 6];
    w1[0] = [0.0, 0.0, 0.0, 0.0, 1.0]; // theta_11 = z4
    w1[3] = [0.0, 1.0, 0.0, 0.0, 0.0]; // theta_22 = z1
    let mut w2 = [[0.0; 5]; 6];
    w2[1] = [0.3, 0.0, 0.5, 0.0, 0.0]; // theta_12 = 0.3 + 0.5 z2
    w2[5] = [0.0, 0.0, 0.0, 1.0, 0.0]; // theta_33 = z3
    let theta1 = ambient_linear_theta(w1);
    let theta2 = ambient_linear_theta(w2);
    vec![
        Perturbation {
            name: "sphere-z-linear",
            h: pushforward_from_theta(&theta1).with_decay(Decay::Power(-4.0)),
            theta: theta1.with_decay(Decay::Power(0.0)),
            is_gauge: false,
        },
        Perturbation {
            name: "sphere-z-mixed",
            h: pushforward_from_theta(&theta2).with_decay(Decay::Power(-4.0)),
            theta: theta2.with_decay(Decay::Power(0.0)),
            is_gauge: false,
        },
    ]
}

/// Perturbations for the expansion slope suite, scaled so that g + t h stays
/// positive definite over the whole t-grid on both backgrounds.
pub fn expansion_family(round_background: bool) -> Vec<Perturbation> {
    let raw: Vec<(&'static str, SymTensorField)> = vec![
        ("exp-bump-diag", gaussian_component_theta(0, 0, 0.6, [0.2, -0.1, 0.3], 1.1)),
        (
            "exp-bump-offdiag",
            gaussian_component_theta(0, 1, 0.5, [0.0; 3], 1.0)
                .add(&gaussian_component_theta(2, 2, 0.4, [0.3, 0.3, -0.2], 1.3)),
        ),
        (
            "exp-conformal-bump",
            gaussian_component_theta(0, 0, 0.5, [0.0; 3], 1.2)
                .add(&gaussian_component_theta(1, 1, 0.5, [0.0; 3], 1.2))
                .add(&gaussian_component_theta(2, 2, 0.5, [0.0; 3], 1.2)),
        ),
    ];
    raw.into_iter()
        .map(|(name, theta)| {
            if round_background {
                // h = tau^-4 theta keeps h comparable to g everywhere
                from_theta(name, theta, false)
            } else {
                // flat background: use theta itself as the perturbation
                Perturbation {
                    name,
                    h: theta.clone(),
                    theta: crate::fields::pullback_theta(&theta),
                    is_gauge: false,
                }
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// chart maps
// ---------------------------------------------------------------------------

/// Pull a symmetric tensor field back along an analytic chart map m:
/// out_ij(x) = t_ab(m(x)) dm_a/dx_i dm_b/dx_j.
///
/// One derivative order is consumed by the Jacobian.
pub fn pullback_tensor_by_map(
    t: &SymTensorField,
    map: impl Fn(&[Jet; 3]) -> [Jet; 3] + Send + Sync + Clone + 'static,
    decay: Decay,
) -> SymTensorField {
    let comps: [ScalarField; 6] = std::array::from_fn(|slot| {
        let (i, j) = SYM_INDEX[slot];
        let t = t.clone();
        let map = map.clone();
        ScalarField::analytic_with_cost(
            move |v| {
                let m = map(v);
                let tj = t.jets_at(&m).expect("analytic tensor");
                let ord = v[0].order().saturating_sub(1);
                let mut acc = Jet::zero(ord);
                for a in 0..3 {
                    for b in 0..3 {
                        acc = acc
                            + tj[crate::fields::sym_slot(a, b)] * m[a].deriv(i) * m[b].deriv(j);
                    }
                }
                acc
            },
            1,
            decay,
        )
    });
    SymTensorField::new(comps, decay)
}

/// The inversion y = x / |x|^2, the transition between the two stereographic
/// charts.  It is an involution.
pub fn inversion_jets(v: &[Jet; 3]) -> [Jet; 3] {
    let ir2 = norm2(v).recip();
    [v[0] * ir2, v[1] * ir2, v[2] * ir2]
}

// ---------------------------------------------------------------------------
// definition files
// ---------------------------------------------------------------------------

/// Parsed `key = value` file with typed accessors.
pub struct KvFile {
    map: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvFile { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| Error::Config(format!("bad float for `{key}`: {s}"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => {
                s.parse().map_err(|_| Error::Config(format!("bad integer for `{key}`: {s}")))
            }
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => {
                s.parse().map_err(|_| Error::Config(format!("bad integer for `{key}`: {s}")))
            }
        }
    }

    pub fn vec3_or(&self, key: &str, default: [f64; 3]) -> Result<[f64; 3]> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => {
                let parts: Vec<f64> = s
                    .split_whitespace()
                    .map(|p| p.parse().map_err(|_| Error::Config(format!("bad vector `{s}`"))))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(Error::Config(format!("`{key}` needs three components")));
                }
                Ok([parts[0], parts[1], parts[2]])
            }
        }
    }

    pub fn floats(&self, key: &str) -> Result<Vec<f64>> {
        let s = self.require(key)?;
        s.split_whitespace()
            .map(|p| p.parse().map_err(|_| Error::Config(format!("bad float list `{s}`"))))
            .collect()
    }
}

/// Build a scalar field from a definition file.
///
/// Keys: `repr` (analytic | grid), `expr` (gaussian_bump | poly_bump |
/// tau_power | sphere_coordinate | constant) with family parameters, or
/// `grid_file` pointing at a binary dump.
pub fn scalar_from_file(path: &Path) -> Result<ScalarField> {
    let kv = KvFile::load(path)?;
    match kv.get("repr").unwrap_or("analytic") {
        "grid" => {
            let file = kv.require("grid_file")?;
            let base = path.parent().unwrap_or(Path::new("."));
            let gs = GridScalar::read(&base.join(file))?;
            let decay = match kv.get("decay") {
                None => Decay::Unknown,
                Some("rapid") => Decay::Rapid,
                Some(s) => Decay::Power(
                    s.parse().map_err(|_| Error::Config(format!("bad decay `{s}`")))?,
                ),
            };
            Ok(ScalarField::from_grid(gs, decay))
        }
        "analytic" => {
            let expr = kv.require("expr")?;
            match expr {
                "gaussian_bump" => Ok(gaussian_bump(
                    kv.f64_or("amp", 1.0)?,
                    kv.vec3_or("center", [0.0; 3])?,
                    kv.f64_or("width", 1.0)?,
                )),
                "poly_bump" => {
                    let c = kv.floats("coeffs")?;
                    if c.len() != 4 {
                        return Err(Error::Config("poly_bump needs four coeffs".into()));
                    }
                    Ok(poly_bump(
                        [c[0], c[1], c[2], c[3]],
                        kv.vec3_or("center", [0.0; 3])?,
                        kv.f64_or("width", 1.0)?,
                    ))
                }
                "tau_power" => Ok(tau_power(kv.f64_or("power", 1.0)?)),
                "sphere_coordinate" => Ok(sphere_coordinate(kv.usize_or("axis", 3)?)),
                "constant" => Ok(ScalarField::constant(kv.f64_or("value", 1.0)?)),
                other => Err(Error::Config(format!("unknown expr `{other}`"))),
            }
        }
        other => Err(Error::Config(format!("unknown repr `{other}`"))),
    }
}

/// Sample an analytic scalar field onto a grid (for dump round-trips).
pub fn sample_to_grid(f: &ScalarField, grid: Grid3) -> GridScalar {
    GridScalar::sample(grid, |x| f.eval(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ambient_coordinates_on_sphere() {
        let x = [0.7, -0.4, 1.3];
        let v = Jet::vars(x, 2);
        let z = ambient_jets(&v);
        let s: f64 = z.iter().map(|j| j.value() * j.value()).sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn inversion_is_involutive() {
        let x = [0.7, -0.4, 1.3];
        let v = Jet::vars(x, 3);
        let y = inversion_jets(&v);
        let back = inversion_jets(&y);
        for i in 0..3 {
            assert_relative_eq!(back[i].value(), x[i], epsilon = 1e-13);
            assert_relative_eq!(back[i].deriv(i).value(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tensor_pullback_through_inversion() {
        // pulling the identity tensor through inversion gives J^T J = r^-4 I
        let eye = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                if i == j { ScalarField::constant(1.0) } else { ScalarField::zero() }
            }),
            Decay::Power(0.0),
        );
        let pulled = pullback_tensor_by_map(&eye, inversion_jets, Decay::Unknown);
        let x = [1.0, 0.5, -0.5];
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let m = pulled.value(x);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { r2.powi(-2) } else { 0.0 };
                assert_relative_eq!(m[i][j], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn kv_parse_and_scalar_file() {
        let dir = std::env::temp_dir().join("paneitz_catalog_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.txt");
        std::fs::write(
            &path,
            "# a field\nrepr = analytic\nexpr = gaussian_bump\namp = 2.0\ncenter = 0 0 0\nwidth = 1.0\n",
        )
        .unwrap();
        let f = scalar_from_file(&path).unwrap();
        assert_relative_eq!(f.eval([0.0; 3]), 2.0);
        assert_relative_eq!(f.eval([1.0, 0.0, 0.0]), 2.0 * (-1.0f64).exp());
    }

    #[test]
    fn families_have_finite_tails() {
        for p in bump_family().iter().chain(gauge_family().iter()) {
            let m = p.theta.value([30.0, 10.0, -20.0]);
            for row in m {
                for v in row {
                    assert!(v.is_finite(), "{} not finite", p.name);
                }
            }
        }
    }
}
