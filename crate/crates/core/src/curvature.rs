//! Exact curvature and Paneitz pipeline for a metric given in chart coordinates.
//!
//! Everything is computed from 4-jets of the metric components, so scalar
//! curvature carries a valid 2-jet and Delta R, grad R and the bi-Laplacian
//! come out without nested stencils.  Conventions: Riem^l_ijk in the slotting
//! with Ricci Rc_ik = Riem^j_ijk, which makes the round sphere come out with
//! Rc = 2 g, R = 6, Q = 15/8.

use crate::error::{Error, Result};
use crate::fields::{sym_slot, Decay, ScalarField, SymTensorField, SYM_INDEX};
use crate::jet::{Jet, MAX_ORDER};
use nalgebra::Matrix3;

/// Metric on the chart with positive-definiteness checked at every evaluation.
#[derive(Clone)]
pub struct MetricField {
    comps: SymTensorField,
}

impl MetricField {
    pub fn new(comps: SymTensorField) -> Self {
        MetricField { comps }
    }

    /// Flat metric delta_ij.
    pub fn flat() -> Self {
        let comps = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                if i == j {
                    ScalarField::constant(1.0)
                } else {
                    ScalarField::zero()
                }
            }),
            Decay::Power(0.0),
        );
        MetricField::new(comps)
    }

    /// Round metric g = tau^-4 |dx|^2 of the unit three-sphere.
    pub fn round() -> Self {
        let comps = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                if i == j {
                    ScalarField::analytic(
                        |v| crate::fields::tau_pow_jet(v, -4.0),
                        Decay::Power(-4.0),
                    )
                } else {
                    ScalarField::zero()
                }
            }),
            Decay::Power(-4.0),
        );
        MetricField::new(comps)
    }

    /// g + t h.
    pub fn perturbed(&self, h: &SymTensorField, t: f64) -> MetricField {
        MetricField::new(self.comps.add(&h.scale(t)))
    }

    pub fn components(&self) -> &SymTensorField {
        &self.comps
    }

    /// Metric jets with the positive-definiteness gate.
    pub fn jets(&self, x: [f64; 3], ord: usize) -> Result<[Jet; 6]> {
        let jets = self.comps.jets(x, ord)?;
        let m = Matrix3::new(
            jets[0].value(),
            jets[1].value(),
            jets[2].value(),
            jets[1].value(),
            jets[3].value(),
            jets[4].value(),
            jets[2].value(),
            jets[4].value(),
            jets[5].value(),
        );
        if m.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { point: x });
        }
        Ok(jets)
    }
}

/// Jet-valued symmetric matrix.
pub type Sym2 = [Jet; 6];

/// Inverse of a symmetric 3x3 jet matrix via the adjugate.
pub fn sym_inverse(g: &Sym2) -> Sym2 {
    let a = |i: usize, j: usize| g[sym_slot(i, j)];
    let det = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(1, 2))
        - a(0, 1) * (a(0, 1) * a(2, 2) - a(1, 2) * a(0, 2))
        + a(0, 2) * (a(0, 1) * a(1, 2) - a(1, 1) * a(0, 2));
    let inv_det = det.recip();
    let cof = |i: usize, j: usize| -> Jet {
        // cofactor of the symmetric matrix
        let (p, q) = match i {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let (r, s) = match j {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let m = a(p, r) * a(q, s) - a(p, s) * a(q, r);
        if (i + j) % 2 == 0 {
            m
        } else {
            -m
        }
    };
    let mut out = [Jet::zero(0); 6];
    for slot in 0..6 {
        let (i, j) = SYM_INDEX[slot];
        out[slot] = cof(i, j) * inv_det;
    }
    out
}

pub fn sym_det(g: &Sym2) -> Jet {
    let a = |i: usize, j: usize| g[sym_slot(i, j)];
    a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(1, 2))
        - a(0, 1) * (a(0, 1) * a(2, 2) - a(1, 2) * a(0, 2))
        + a(0, 2) * (a(0, 1) * a(1, 2) - a(1, 1) * a(0, 2))
}

/// Point context: jets of the metric, inverse, Christoffel symbols and
/// curvature, built once per evaluation point.
pub struct MetricCtx {
    pub g: Sym2,
    pub ginv: Sym2,
    /// Gamma^k_ij as jets, order 3 when the metric has 4-jets
    pub gamma: [[[Jet; 3]; 3]; 3],
    /// Ricci as a jet-valued symmetric matrix (coordinate indices)
    pub ricci: Sym2,
    /// scalar curvature jet
    pub r: Jet,
}

impl MetricCtx {
    pub fn build(metric: &MetricField, x: [f64; 3]) -> Result<Self> {
        let g = metric.jets(x, MAX_ORDER)?;
        Ok(Self::from_jets(g))
    }

    pub fn from_jets(g: Sym2) -> Self {
        let ginv = sym_inverse(&g);
        let gv = |i: usize, j: usize| g[sym_slot(i, j)];
        let gi = |i: usize, j: usize| ginv[sym_slot(i, j)];

        // Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)
        let ord3 = g[0].order().saturating_sub(1);
        let mut gamma = [[[Jet::zero(ord3); 3]; 3]; 3];
        for k in 0..3 {
            for i in 0..3 {
                for j in i..3 {
                    let mut acc = Jet::zero(ord3);
                    for l in 0..3 {
                        let t = gv(j, l).deriv(i) + gv(i, l).deriv(j) - gv(i, j).deriv(l);
                        acc = acc + gi(k, l) * t;
                    }
                    let half = acc.scale(0.5);
                    gamma[k][i][j] = half;
                    gamma[k][j][i] = half;
                }
            }
        }

        // Riem^l_ijk = d_j Gamma^l_ik - d_k Gamma^l_ij
        //            + Gamma^l_jm Gamma^m_ik - Gamma^l_km Gamma^m_ij
        // (Ricci convention Rc_ik = Riem^j_ijk)
        let ord2 = ord3.saturating_sub(1);
        let mut ricci = [Jet::zero(ord2); 6];
        for slot in 0..6 {
            let (i, k) = SYM_INDEX[slot];
            let mut acc = Jet::zero(ord2);
            for j in 0..3 {
                acc = acc + gamma[j][i][k].deriv(j) - gamma[j][i][j].deriv(k);
                for m in 0..3 {
                    acc = acc + gamma[j][j][m] * gamma[m][i][k] - gamma[j][k][m] * gamma[m][i][j];
                }
            }
            ricci[slot] = acc;
        }

        let mut r = Jet::zero(ord2);
        for i in 0..3 {
            for j in 0..3 {
                r = r + gi(i, j) * ricci[sym_slot(i, j)];
            }
        }

        MetricCtx { g, ginv, gamma, ricci, r }
    }

    /// Full Riemann tensor values Riem^l_ijk at the point.
    pub fn riemann_values(&self) -> [[[[f64; 3]; 3]; 3]; 3] {
        let mut out = [[[[0.0; 3]; 3]; 3]; 3];
        for l in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        let mut v = self.gamma[l][i][k].deriv(j).value()
                            - self.gamma[l][i][j].deriv(k).value();
                        for m in 0..3 {
                            v += (self.gamma[l][j][m] * self.gamma[m][i][k]).value()
                                - (self.gamma[l][k][m] * self.gamma[m][i][j]).value();
                        }
                        out[l][i][j][k] = v;
                    }
                }
            }
        }
        out
    }

    /// Laplace-Beltrami of a scalar jet (value), Delta phi = g^ij (phi_ij - Gamma^k_ij phi_k).
    pub fn laplacian(&self, phi: &Jet) -> f64 {
        self.laplacian_jet(phi).value()
    }

    /// Laplace-Beltrami as a jet (order drops by two).
    pub fn laplacian_jet(&self, phi: &Jet) -> Jet {
        let ord = phi.order().saturating_sub(2);
        let mut acc = Jet::zero(ord);
        for i in 0..3 {
            for j in 0..3 {
                let mut t = phi.deriv(i).deriv(j);
                for k in 0..3 {
                    t = t - self.gamma[k][i][j] * phi.deriv(k);
                }
                acc = acc + self.ginv[sym_slot(i, j)] * t;
            }
        }
        acc
    }

    /// Covariant Hessian of a scalar jet.
    pub fn hessian_jet(&self, phi: &Jet) -> Sym2 {
        let ord = phi.order().saturating_sub(2);
        let mut out = [Jet::zero(ord); 6];
        for slot in 0..6 {
            let (i, j) = SYM_INDEX[slot];
            let mut t = phi.deriv(i).deriv(j);
            for k in 0..3 {
                t = t - self.gamma[k][i][j] * phi.deriv(k);
            }
            out[slot] = t;
        }
        out
    }

    /// |Rc|^2 with metric contractions, as a jet.
    pub fn ricci_norm2_jet(&self) -> Jet {
        let gi = |i: usize, j: usize| self.ginv[sym_slot(i, j)];
        let rc = |i: usize, j: usize| self.ricci[sym_slot(i, j)];
        let mut acc = Jet::zero(self.r.order());
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        acc = acc + gi(i, k) * gi(j, l) * rc(i, j) * rc(k, l);
                    }
                }
            }
        }
        acc
    }

    /// Q = -1/4 Delta R - 2 |Rc|^2 + 23/32 R^2.
    pub fn q_value(&self) -> f64 {
        let lap_r = self.laplacian(&self.r);
        -0.25 * lap_r - 2.0 * self.ricci_norm2_jet().value()
            + (23.0 / 32.0) * (self.r * self.r).value()
    }

    /// Paneitz operator value:
    /// P phi = Delta^2 phi + 4 Rc^ij phi_ij - 5/4 R Delta phi + 3/4 <grad R, grad phi> - 1/2 Q phi.
    pub fn paneitz(&self, phi: &Jet) -> f64 {
        let gi = |i: usize, j: usize| self.ginv[sym_slot(i, j)];
        let lap_phi = self.laplacian_jet(phi);
        let bilap = self.laplacian(&lap_phi);
        let hess = self.hessian_jet(phi);
        let mut rc_term = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        rc_term += (gi(i, k) * gi(j, l) * self.ricci[sym_slot(k, l)]).value()
                            * hess[sym_slot(i, j)].value();
                    }
                }
            }
        }
        let mut grad_term = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                grad_term += gi(i, j).value() * self.r.deriv(i).value() * phi.deriv(j).value();
            }
        }
        bilap + 4.0 * rc_term - 1.25 * self.r.value() * lap_phi.value() + 0.75 * grad_term
            - 0.5 * self.q_value() * phi.value()
    }
}

/// Curvature data at a point.
#[derive(Clone, Debug)]
pub struct CurvatureAt {
    pub christoffel: [[[f64; 3]; 3]; 3],
    pub riemann: [[[[f64; 3]; 3]; 3]; 3],
    pub ricci: [[f64; 3]; 3],
    pub scalar: f64,
    pub q: f64,
}

/// Christoffel, Riemann, Ricci, scalar and Q curvature of `g` at `x`.
pub fn curvature_pipeline(g: &MetricField, x: [f64; 3]) -> Result<CurvatureAt> {
    let ctx = MetricCtx::build(g, x)?;
    let mut christoffel = [[[0.0; 3]; 3]; 3];
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                christoffel[k][i][j] = ctx.gamma[k][i][j].value();
            }
        }
    }
    let mut ricci = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ricci[i][j] = ctx.ricci[sym_slot(i, j)].value();
        }
    }
    Ok(CurvatureAt {
        christoffel,
        riemann: ctx.riemann_values(),
        ricci,
        scalar: ctx.r.value(),
        q: ctx.q_value(),
    })
}

/// Laplace-Beltrami of a scalar field at `x`.
pub fn laplace_beltrami(g: &MetricField, phi: &ScalarField, x: [f64; 3]) -> Result<f64> {
    let ctx = MetricCtx::build(g, x)?;
    let pj = phi.jet(x, 2)?;
    Ok(ctx.laplacian(&pj))
}

/// Paneitz operator P_g phi at `x`.
pub fn paneitz_apply_exact(g: &MetricField, phi: &ScalarField, x: [f64; 3]) -> Result<f64> {
    let ctx = MetricCtx::build(g, x)?;
    let pj = phi.jet(x, MAX_ORDER)?;
    Ok(ctx.paneitz(&pj))
}

/// Conformal metric rho^-4 g with analytic rho.
pub fn conformal_metric(g: &MetricField, rho: &ScalarField) -> Result<MetricField> {
    let comps: [ScalarField; 6] = std::array::from_fn(|s| {
        let gc = g.components().comps()[s].clone();
        let rho = rho.clone();
        ScalarField::analytic(
            move |v| {
                let r = rho.jet_at(v).expect("analytic rho");
                let r2 = r * r;
                gc.jet_at(v).expect("analytic metric") * (r2 * r2).recip()
            },
            Decay::Unknown,
        )
    });
    for c in g.components().comps() {
        if !c.is_analytic() {
            return Err(Error::Precondition("conformal_metric needs analytic components".into()));
        }
    }
    if !rho.is_analytic() {
        return Err(Error::Precondition("conformal factor must be analytic".into()));
    }
    Ok(MetricField::new(SymTensorField::new(comps, Decay::Unknown)))
}

/// Max over samples of |P_{rho^-4 g} phi - rho^7 P_g (rho phi)|, the conformal
/// covariance residual of the Paneitz operator.
pub fn conformal_covariance_residual(
    g: &MetricField,
    rho: &ScalarField,
    phi: &ScalarField,
    samples: &[[f64; 3]],
) -> Result<f64> {
    for &x in samples {
        if rho.eval(x) <= 0.0 {
            return Err(Error::Precondition(format!("conformal factor not positive at {x:?}")));
        }
    }
    let gc = conformal_metric(g, rho)?;
    let rho_phi = {
        let (r, p) = (rho.clone(), phi.clone());
        ScalarField::analytic(
            move |v| r.jet_at(v).expect("analytic") * p.jet_at(v).expect("analytic"),
            Decay::Unknown,
        )
    };
    let mut worst: f64 = 0.0;
    for &x in samples {
        let lhs = paneitz_apply_exact(&gc, phi, x)?;
        let rhs = rho.eval(x).powi(7) * paneitz_apply_exact(g, &rho_phi, x)?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Decay;
    use crate::jet::norm2;
    use approx::assert_relative_eq;

    #[test]
    fn flat_is_flat() {
        let g = MetricField::flat();
        let c = curvature_pipeline(&g, [0.3, -1.0, 2.0]).unwrap();
        assert_eq!(c.scalar, 0.0);
        assert_eq!(c.q, 0.0);
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(c.christoffel[k][i][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn round_sphere_constants() {
        let g = MetricField::round();
        for x in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.3, -2.0, 0.7]] {
            let c = curvature_pipeline(&g, x).unwrap();
            assert_relative_eq!(c.scalar, 6.0, epsilon = 1e-10);
            assert_relative_eq!(c.q, 15.0 / 8.0, epsilon = 1e-10);
            // Rc = 2 g
            let gm = g.components().value(x);
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(c.ricci[i][j], 2.0 * gm[i][j], epsilon = 1e-10);
                }
            }
            // |Rc|^2 = 12
            let ctx = MetricCtx::build(&g, x).unwrap();
            assert_relative_eq!(ctx.ricci_norm2_jet().value(), 12.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn christoffel_symmetry_and_bianchi() {
        // a generic smooth metric: delta + small bump perturbation
        let h = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                ScalarField::analytic(
                    move |v| {
                        let b = (-norm2(v)).exp();
                        (v[i] * v[j] * b).scale(0.05) + b.scale(if i == j { 0.1 } else { 0.02 })
                    },
                    Decay::Rapid,
                )
            }),
            Decay::Rapid,
        );
        let g = MetricField::flat().perturbed(&h, 1.0);
        let x = [0.4, 0.1, -0.6];
        let c = curvature_pipeline(&g, x).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(
                        c.christoffel[k][i][j],
                        c.christoffel[k][j][i],
                        epsilon = 1e-12
                    );
                }
            }
        }
        // lowered Riemann antisymmetries and first Bianchi
        let gm = g.components().value(x);
        let mut low = [[[[0.0; 3]; 3]; 3]; 3];
        for a in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        for l in 0..3 {
                            low[a][i][j][k] += gm[a][l] * c.riemann[l][i][j][k];
                        }
                    }
                }
            }
        }
        for a in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        assert_relative_eq!(low[a][i][j][k], -low[a][i][k][j], epsilon = 1e-10);
                        let cyc = low[a][i][j][k] + low[a][j][k][i] + low[a][k][i][j];
                        assert_relative_eq!(cyc, 0.0, epsilon = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn contracted_bianchi() {
        // 2 div Rc = grad R for a random smooth metric, via jets
        let h = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                ScalarField::analytic(
                    move |v| ((-norm2(v)).exp() * v[i] * v[j]).scale(0.08),
                    Decay::Rapid,
                )
            }),
            Decay::Rapid,
        );
        let g = MetricField::flat().perturbed(&h, 1.0);
        let x = [0.25, -0.4, 0.55];
        let ctx = MetricCtx::build(&g, x).unwrap();
        // div Rc_i = g^jk (d_k Rc_ij - Gamma^l_ki Rc_lj - Gamma^l_kj Rc_il)
        let gi = |i: usize, j: usize| ctx.ginv[sym_slot(i, j)];
        for i in 0..3 {
            let mut div = 0.0;
            for j in 0..3 {
                for k in 0..3 {
                    let mut t = ctx.ricci[sym_slot(i, j)].deriv(k);
                    for l in 0..3 {
                        t = t - ctx.gamma[l][k][i] * ctx.ricci[sym_slot(l, j)]
                            - ctx.gamma[l][k][j] * ctx.ricci[sym_slot(i, l)];
                    }
                    div += (gi(j, k) * t).value();
                }
            }
            assert_relative_eq!(2.0 * div, ctx.r.deriv(i).value(), epsilon = 1e-9);
        }
    }

    #[test]
    fn laplace_beltrami_flat_quadratic() {
        let g = MetricField::flat();
        let phi = ScalarField::analytic(|v| norm2(v), Decay::Unknown);
        let v = laplace_beltrami(&g, &phi, [0.7, 0.2, -0.9]).unwrap();
        assert_relative_eq!(v, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn sphere_harmonic_eigenvalue() {
        // z4 = (r^2 - 1)/(r^2 + 1) restricts a degree-1 harmonic; Delta z4 = -3 z4
        let g = MetricField::round();
        let z4 = ScalarField::analytic(
            |v| {
                let ord = v[0].order();
                let r2 = norm2(v);
                (r2 - Jet::constant(1.0, ord)) * (r2 + Jet::constant(1.0, ord)).recip()
            },
            Decay::Power(0.0),
        );
        for x in [[0.2, 0.5, -0.3], [1.5, 0.0, 0.1]] {
            let lhs = laplace_beltrami(&g, &z4, x).unwrap();
            assert_relative_eq!(lhs, -3.0 * z4.eval(x), epsilon = 1e-10);
        }
    }

    #[test]
    fn paneitz_round_constants() {
        let g = MetricField::round();
        let one = ScalarField::constant(1.0);
        let v = paneitz_apply_exact(&g, &one, [0.4, -0.8, 1.3]).unwrap();
        assert_relative_eq!(v, -15.0 / 16.0, epsilon = 1e-10);

        // degree-1 harmonic: P z = (9 - 3/2 - 15/16) z = 105/16 z
        let z1 = ScalarField::analytic(
            |v| {
                let ord = v[0].order();
                v[0].scale(2.0) * (norm2(v) + Jet::constant(1.0, ord)).recip()
            },
            Decay::Power(-1.0),
        );
        let x = [0.6, -0.2, 0.9];
        let v = paneitz_apply_exact(&g, &z1, x).unwrap();
        assert_relative_eq!(v, 105.0 / 16.0 * z1.eval(x), epsilon = 1e-9);
    }

    #[test]
    fn paneitz_flat_is_bilaplacian() {
        let g = MetricField::flat();
        let phi = ScalarField::analytic(|v| (-norm2(v)).exp(), Decay::Rapid);
        let x = [0.3, 0.2, -0.1];
        let v = paneitz_apply_exact(&g, &phi, x).unwrap();
        // Delta^2 e^{-r^2} = (16 r^4 - 80 r^2 + 60) e^{-r^2}
        let r2: f64 = x.iter().map(|a| a * a).sum();
        let expect = (16.0 * r2 * r2 - 80.0 * r2 + 60.0) * (-r2).exp();
        assert_relative_eq!(v, expect, epsilon = 1e-10);
    }

    #[test]
    fn covariance_flat_to_round() {
        // rho = tau turns the flat metric into the round one
        let g = MetricField::flat();
        let rho = crate::fields::tau();
        let phi = ScalarField::analytic(|v| (-norm2(v)).exp(), Decay::Rapid);
        let samples = [[0.0, 0.0, 0.0], [0.5, -0.2, 0.8], [1.1, 0.4, -0.3]];
        let res = conformal_covariance_residual(&g, &rho, &phi, &samples).unwrap();
        assert!(res < 1e-9, "residual {res}");
    }

    #[test]
    fn covariance_random_bump() {
        let g = MetricField::round();
        let rho = ScalarField::analytic(
            |v| {
                let ord = v[0].order();
                Jet::constant(1.0, ord) + (-norm2(v)).exp().scale(0.1)
            },
            Decay::Power(0.0),
        );
        let phi = ScalarField::analytic(|v| (-norm2(v)).exp() * v[1], Decay::Rapid);
        let samples = [[0.2, 0.3, -0.4], [0.9, -0.6, 0.1]];
        let res = conformal_covariance_residual(&g, &rho, &phi, &samples).unwrap();
        assert!(res < 1e-9, "residual {res}");
    }

    #[test]
    fn definiteness_is_checked() {
        let h = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                if i == j { ScalarField::constant(-1.0) } else { ScalarField::zero() }
            }),
            Decay::Power(0.0),
        );
        let g = MetricField::flat().perturbed(&h, 2.0);
        assert!(matches!(
            curvature_pipeline(&g, [0.0; 3]),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
