//! Perturbation expansions of curvature and the Paneitz operator in the
//! metric parameter t, for g + t h around an arbitrary background.
//!
//! Index expressions follow the orthonormal-frame notation: repeated indices
//! contract with the inverse metric, derivative indices are appended on the
//! right and are background covariant derivatives, applied left to right
//! (h_ikjk means the k-contraction of nabla_k nabla_j h_ik).  All identities
//! are validated against the exact pipeline by finite-difference slope tests.

use crate::curvature::{sym_det, MetricCtx, MetricField, Sym2};
use crate::error::{Error, Result};
use crate::fields::{sym_slot, ScalarField, SymTensorField};
use crate::grid::Grid3;
use crate::jet::{Jet, MAX_ORDER};
use crate::quadrature::{integrate_grid, log_slope};

type M3 = [[f64; 3]; 3];

fn sym_values(s: &Sym2) -> M3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = s[sym_slot(i, j)].value();
        }
    }
    m
}

/// Contravariant version g^ac g^bd A_cd at value level.
fn raise2(gi: &M3, a: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    out[i][j] += gi[i][c] * gi[j][d] * a[c][d];
                }
            }
        }
    }
    out
}

fn dot2(a: &M3, b: &M3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// Covariant-derivative jets of a symmetric perturbation over a background
/// point context, together with the named scalar combinations the expansion
/// formulas are assembled from.
pub struct PerturbCtx<'a> {
    pub bg: &'a MetricCtx,
    pub h: Sym2,
    /// w[a][b][c] = nabla_c h_ab
    pub w: [[[Jet; 3]; 3]; 3],
    /// w2[a][b][c][d] = nabla_d nabla_c h_ab
    pub w2: [[[[Jet; 3]; 3]; 3]; 3],
    /// m1[a][c] = h_{a k c k} (contract slot 2 with the trailing derivative)
    pub m1: [[Jet; 3]; 3],
    /// m2[a][c] = h_{a k k c}
    pub m2: [[Jet; 3]; 3],
    /// tensor Laplacian (Delta h)_ab
    pub lap_h: Sym2,
    /// covariant Hessian of tr h
    pub hess_tr: Sym2,
    /// tr h
    pub tr: Jet,
    /// d[a] = 2 h_ajj - (tr h)_a
    pub d: [Jet; 3],
    /// s_rc = h_ijij - Delta tr h - Rc_ij h_ij
    pub s_rc: Jet,
}

impl<'a> PerturbCtx<'a> {
    pub fn new(bg: &'a MetricCtx, h: Sym2) -> Self {
        let hv = |a: usize, b: usize| h[sym_slot(a, b)];
        let gi = |a: usize, b: usize| bg.ginv[sym_slot(a, b)];

        let ordw = h[0].order().min(bg.gamma[0][0][0].order());
        let mut w = [[[Jet::zero(ordw); 3]; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                for c in 0..3 {
                    let mut t = hv(a, b).deriv(c);
                    for l in 0..3 {
                        t = t - bg.gamma[l][c][a] * hv(l, b) - bg.gamma[l][c][b] * hv(a, l);
                    }
                    w[a][b][c] = t;
                    w[b][a][c] = t;
                }
            }
        }

        let ordw2 = ordw - 1;
        let mut w2 = [[[[Jet::zero(ordw2); 3]; 3]; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                for c in 0..3 {
                    for dx in 0..3 {
                        let mut t = w[a][b][c].deriv(dx);
                        for l in 0..3 {
                            t = t - bg.gamma[l][dx][a] * w[l][b][c]
                                - bg.gamma[l][dx][b] * w[a][l][c]
                                - bg.gamma[l][dx][c] * w[a][b][l];
                        }
                        w2[a][b][c][dx] = t;
                        w2[b][a][c][dx] = t;
                    }
                }
            }
        }

        let mut m1 = [[Jet::zero(ordw2); 3]; 3];
        let mut m2 = [[Jet::zero(ordw2); 3]; 3];
        for a in 0..3 {
            for c in 0..3 {
                let mut t1 = Jet::zero(ordw2);
                let mut t2 = Jet::zero(ordw2);
                for k in 0..3 {
                    for l in 0..3 {
                        t1 = t1 + gi(k, l) * w2[a][k][c][l];
                        t2 = t2 + gi(k, l) * w2[a][k][l][c];
                    }
                }
                m1[a][c] = t1;
                m2[a][c] = t2;
            }
        }

        let mut lap_h = [Jet::zero(ordw2); 6];
        for slot in 0..6 {
            let (a, b) = crate::fields::SYM_INDEX[slot];
            let mut t = Jet::zero(ordw2);
            for c in 0..3 {
                for dx in 0..3 {
                    t = t + gi(c, dx) * w2[a][b][c][dx];
                }
            }
            lap_h[slot] = t;
        }

        let mut tr = Jet::zero(h[0].order());
        for a in 0..3 {
            for b in 0..3 {
                tr = tr + gi(a, b) * hv(a, b);
            }
        }
        let hess_tr = bg.hessian_jet(&tr);
        let lap_tr = bg.laplacian_jet(&tr);

        let mut d = [Jet::zero(ordw); 3];
        for a in 0..3 {
            let mut t = Jet::zero(ordw);
            for b in 0..3 {
                for c in 0..3 {
                    t = t + gi(b, c) * w[a][b][c];
                }
            }
            d[a] = t.scale(2.0) - tr.deriv(a);
        }

        // double divergence h_ijij
        let mut dd = Jet::zero(ordw2);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for e in 0..3 {
                        dd = dd + gi(a, c) * gi(b, e) * w2[a][b][c][e];
                    }
                }
            }
        }
        let mut rc_h = Jet::zero(ordw2);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for e in 0..3 {
                        rc_h = rc_h + gi(a, c) * gi(b, e) * bg.ricci[sym_slot(a, b)] * hv(c, e);
                    }
                }
            }
        }
        let s_rc = dd - lap_tr - rc_h;

        PerturbCtx { bg, h, w, w2, m1, m2, lap_h, hess_tr, tr, d, s_rc }
    }

    fn gi_v(&self) -> M3 {
        sym_values(&self.bg.ginv)
    }

    fn rc_v(&self) -> M3 {
        sym_values(&self.bg.ricci)
    }

    fn h_v(&self) -> M3 {
        sym_values(&self.h)
    }

    /// A[a][b][c] = h_abc + h_cba - h_acb (the Christoffel-variation combination),
    /// truncated to the order needed under a Laplacian.
    fn a_combo(&self) -> [[[Jet; 3]; 3]; 3] {
        let mut a = [[[Jet::zero(0); 3]; 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                for j in 0..3 {
                    a[i][k][j] = self.w[i][k][j] + self.w[j][k][i] - self.w[i][j][k];
                }
            }
        }
        a
    }

    /// sum over frame indices of A^2, as a jet.
    fn asq_jet(&self) -> Jet {
        let gi = |a: usize, b: usize| self.bg.ginv[sym_slot(a, b)];
        let a = self.a_combo();
        let ord = a[0][0][0].order().min(2);
        // raise all three indices
        let mut acc = Jet::zero(ord);
        for i in 0..3 {
            for k in 0..3 {
                for j in 0..3 {
                    let mut raised = Jet::zero(ord);
                    for p in 0..3 {
                        for q in 0..3 {
                            for r in 0..3 {
                                raised =
                                    raised + gi(i, p) * gi(k, q) * gi(j, r) * a[p][q][r];
                            }
                        }
                    }
                    acc = acc + a[i][k][j].with_order(ord) * raised;
                }
            }
        }
        acc
    }

    /// sum over frame indices of D^2, as a jet.
    fn dsq_jet(&self) -> Jet {
        let gi = |a: usize, b: usize| self.bg.ginv[sym_slot(a, b)];
        let ord = self.d[0].order();
        let mut acc = Jet::zero(ord);
        for a in 0..3 {
            for b in 0..3 {
                acc = acc + gi(a, b) * self.d[a] * self.d[b];
            }
        }
        acc
    }

    /// h2_ab = h_ak h_bk as jets.
    fn h2_jets(&self) -> Sym2 {
        let gi = |a: usize, b: usize| self.bg.ginv[sym_slot(a, b)];
        let hv = |a: usize, b: usize| self.h[sym_slot(a, b)];
        let mut out = [Jet::zero(0); 6];
        for slot in 0..6 {
            let (a, b) = crate::fields::SYM_INDEX[slot];
            let mut t = Jet::zero(hv(0, 0).order());
            for c in 0..3 {
                for e in 0..3 {
                    t = t + gi(c, e) * hv(a, c) * hv(b, e);
                }
            }
            out[slot] = t;
        }
        out
    }

    /// Rc_ij h2_ij as a jet.
    fn rc_h2_jet(&self) -> Jet {
        let gi = |a: usize, b: usize| self.bg.ginv[sym_slot(a, b)];
        let h2 = self.h2_jets();
        let ord = self.bg.ricci[0].order();
        let mut acc = Jet::zero(ord);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for e in 0..3 {
                        acc = acc
                            + gi(a, c) * gi(b, e) * self.bg.ricci[sym_slot(a, b)]
                                * h2[sym_slot(c, e)];
                    }
                }
            }
        }
        acc
    }

    /// (Delta h_ij + (tr h)_ij - h_ikjk - h_ikkj) h_ij as a jet.
    fn x2h_jet(&self) -> Jet {
        let gi = |a: usize, b: usize| self.bg.ginv[sym_slot(a, b)];
        let hv = |a: usize, b: usize| self.h[sym_slot(a, b)];
        let ord = self.lap_h[0].order();
        let mut acc = Jet::zero(ord);
        for a in 0..3 {
            for b in 0..3 {
                let inner = self.lap_h[sym_slot(a, b)] + self.hess_tr[sym_slot(a, b)]
                    - self.m1[a][b]
                    - self.m2[a][b];
                for c in 0..3 {
                    for e in 0..3 {
                        acc = acc + gi(a, c) * gi(b, e) * inner * hv(c, e);
                    }
                }
            }
        }
        acc
    }

    /// Lichnerowicz-type tensor L_ab = h_akbk + h_bkak - (tr h)_ab - Delta h_ab,
    /// value level.
    fn l_values(&self) -> M3 {
        let mut out = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                out[a][b] = self.m1[a][b].value() + self.m1[b][a].value()
                    - self.hess_tr[sym_slot(a, b)].value()
                    - self.lap_h[sym_slot(a, b)].value();
            }
        }
        out
    }

    /// |h|^2 with metric contractions, value level.
    fn h_norm2(&self) -> f64 {
        let gi = self.gi_v();
        let hv = self.h_v();
        dot2(&raise2(&gi, &hv), &hv)
    }
}

// ---------------------------------------------------------------------------
// value-level contraction patterns shared by several formulas
// ---------------------------------------------------------------------------

/// Rc_ij Rc_ik s_jk  for a symmetric value tensor s.
fn rc_rc_s(gi: &M3, rc: &M3, s: &M3) -> f64 {
    let rcu = raise2(gi, rc);
    // mixed Rc^j_k-type products: sum g^{aa'} Rc_ab Rc_a'c s^{bc}
    let su = raise2(gi, s);
    let mut acc = 0.0;
    for a in 0..3 {
        for ap in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    acc += gi[a][ap] * rc[a][b] * rc[ap][c] * su[b][c];
                }
            }
        }
    }
    let _ = rcu;
    acc
}

/// pattern (2 h_ikj - h_ijk) v_k u_i-style: sum Rc_ij (2 W[i][k][j] - W[i][j][k]) vec_k
/// with all indices contracted by g^{-1}; `vec` enters with a lower index.
fn rc_grad_pattern(ctx: &PerturbCtx, vec: &[f64; 3]) -> f64 {
    let gi = ctx.gi_v();
    let rc = ctx.rc_v();
    let mut acc = 0.0;
    for a in 0..3 {
        for ap in 0..3 {
            for b in 0..3 {
                for bp in 0..3 {
                    for c in 0..3 {
                        for cp in 0..3 {
                            let f = 2.0 * ctx.w[ap][c][bp].value() - ctx.w[ap][bp][c].value();
                            acc += gi[a][ap] * gi[b][bp] * gi[c][cp] * rc[a][b] * f * vec[cp];
                        }
                    }
                }
            }
        }
    }
    acc
}

/// (2 h_ikk - (tr h)_i) h_ij v_j = D_i h_ij v_j with lower-index vector v.
fn d_h_vec(ctx: &PerturbCtx, vec: &[f64; 3]) -> f64 {
    let gi = ctx.gi_v();
    let hv = ctx.h_v();
    let dv = [ctx.d[0].value(), ctx.d[1].value(), ctx.d[2].value()];
    let mut acc = 0.0;
    for a in 0..3 {
        for ap in 0..3 {
            for b in 0..3 {
                for bp in 0..3 {
                    acc += gi[a][ap] * gi[b][bp] * dv[a] * hv[ap][b] * vec[bp];
                }
            }
        }
    }
    acc
}

/// (2 h_ikj - h_ijk) h_ij v_k with lower-index vector v.
fn whv_pattern(ctx: &PerturbCtx, vec: &[f64; 3]) -> f64 {
    let gi = ctx.gi_v();
    let hv = ctx.h_v();
    let mut acc = 0.0;
    for a in 0..3 {
        for ap in 0..3 {
            for b in 0..3 {
                for bp in 0..3 {
                    for c in 0..3 {
                        for cp in 0..3 {
                            let f = 2.0 * ctx.w[a][b][c].value() - ctx.w[a][c][b].value();
                            acc += gi[a][ap] * gi[b][bp] * gi[c][cp] * f * hv[ap][cp] * vec[bp];
                        }
                    }
                }
            }
        }
    }
    acc
}

/// Rc_ij h_kl (2 h_ikjl - h_klij - h_ijkl).
fn rc_h_w2_pattern(ctx: &PerturbCtx) -> f64 {
    let gi = ctx.gi_v();
    let rcu = raise2(&gi, &ctx.rc_v());
    let hu = raise2(&gi, &ctx.h_v());
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let t = 2.0 * ctx.w2[i][k][j][l].value()
                        - ctx.w2[k][l][i][j].value()
                        - ctx.w2[i][j][k][l].value();
                    acc += rcu[i][j] * hu[k][l] * t;
                }
            }
        }
    }
    acc
}

/// Rc_ij h_ik L_jk with the Lichnerowicz tensor L.
fn rc_h_l_pattern(ctx: &PerturbCtx, l: &M3) -> f64 {
    let gi = ctx.gi_v();
    let rc = ctx.rc_v();
    let hv = ctx.h_v();
    let mut acc = 0.0;
    for a in 0..3 {
        for ap in 0..3 {
            for b in 0..3 {
                for bp in 0..3 {
                    for c in 0..3 {
                        for cp in 0..3 {
                            acc += gi[a][ap] * gi[b][bp] * gi[c][cp]
                                * rc[a][b]
                                * hv[ap][c]
                                * l[bp][cp];
                        }
                    }
                }
            }
        }
    }
    acc
}

/// Rc_ij A_ikl A_jkl with the Christoffel-variation combination A.
fn rc_a_a_pattern(ctx: &PerturbCtx) -> f64 {
    let gi = ctx.gi_v();
    let rcu = raise2(&gi, &ctx.rc_v());
    let a = ctx.a_combo();
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for kp in 0..3 {
                    for l in 0..3 {
                        for lp in 0..3 {
                            acc += rcu[i][j] * gi[k][kp] * gi[l][lp]
                                * a[i][k][l].value()
                                * a[j][kp][lp].value();
                        }
                    }
                }
            }
        }
    }
    acc
}

/// Rc_ij Rc_kl h_ik h_jl.
fn rc_rc_h_h_pattern(ctx: &PerturbCtx) -> f64 {
    let gi = ctx.gi_v();
    let rcu = raise2(&gi, &ctx.rc_v());
    let hv = ctx.h_v();
    let mut acc = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    acc += rcu[a][b] * rcu[c][d] * hv[a][c] * hv[b][d];
                }
            }
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

/// Measure expansion d(mu_{g+th}) = (c0 + c1 t + c2 t^2 + O(t^3)) d(mu_g).
pub fn measure_expansion(g: &MetricField, h: &SymTensorField, x: [f64; 3]) -> Result<(f64, f64, f64)> {
    let bg = MetricCtx::build(g, x)?;
    let hj = h.jets(x, 2)?;
    let gi = sym_values(&bg.ginv);
    let hv = {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = hj[sym_slot(i, j)].value();
            }
        }
        m
    };
    let tr = dot2(&gi, &hv);
    let h2 = dot2(&raise2(&gi, &hv), &hv);
    Ok((1.0, 0.5 * tr, tr * tr / 8.0 - h2 / 4.0))
}

/// The three t-coefficients of Q_{g+th}.
pub fn q_expansion(g: &MetricField, h: &SymTensorField, x: [f64; 3]) -> Result<(f64, f64, f64)> {
    let bg = MetricCtx::build(g, x)?;
    let hj = h.jets(x, MAX_ORDER)?;
    let ctx = PerturbCtx::new(&bg, hj);
    let (q1, q2) = q_coefficients(&ctx);
    Ok((bg.q_value(), q1, q2))
}

/// First and second Q-coefficients from a prepared context.
pub fn q_coefficients(ctx: &PerturbCtx) -> (f64, f64) {
    let bg = ctx.bg;
    let gi = ctx.gi_v();
    let rc = ctx.rc_v();
    let rcu = raise2(&gi, &rc);
    let r = bg.r.value();
    let grad_r = [bg.r.deriv(0).value(), bg.r.deriv(1).value(), bg.r.deriv(2).value()];
    let hess_r = {
        let hj = bg.hessian_jet(&bg.r);
        sym_values(&hj)
    };
    let hv = ctx.h_v();
    let dv = [ctx.d[0].value(), ctx.d[1].value(), ctx.d[2].value()];
    let s_rc = ctx.s_rc.value();

    // 2 h_ikjk - (tr h)_ij - Delta h_ij at value level
    let mut two_m1 = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            two_m1[a][b] = 2.0 * ctx.m1[a][b].value()
                - ctx.hess_tr[sym_slot(a, b)].value()
                - ctx.lap_h[sym_slot(a, b)].value();
        }
    }

    let dot_vec = |u: &[f64; 3], v: &[f64; 3]| -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += gi[a][b] * u[a] * v[b];
            }
        }
        s
    };

    let q1 = -0.25 * bg.laplacian(&ctx.s_rc) - 2.0 * dot2(&rcu, &two_m1)
        + (23.0 / 16.0) * r * s_rc
        + 0.125 * dot_vec(&dv, &grad_r)
        + 0.25 * dot2(&raise2(&gi, &hv), &hess_r)
        + 4.0 * rc_rc_s(&gi, &rc, &hv);

    // second order
    let x2h = ctx.x2h_jet();
    let asq = ctx.asq_jet();
    let dsq = ctx.dsq_jet();
    let rc_h2 = ctx.rc_h2_jet();
    let h2v = {
        let j = ctx.h2_jets();
        sym_values(&j)
    };
    let l = ctx.l_values();
    let hess_src = sym_values(&bg.hessian_jet(&ctx.s_rc));
    let grad_src = [
        ctx.s_rc.deriv(0).value(),
        ctx.s_rc.deriv(1).value(),
        ctx.s_rc.deriv(2).value(),
    ];
    let lsq = dot2(&raise2(&gi, &l), &l);

    let q2 = -0.25 * bg.laplacian(&x2h)
        + 0.25 * dot2(&raise2(&gi, &hv), &hess_src)
        - (1.0 / 16.0) * bg.laplacian(&asq)
        + (1.0 / 16.0) * bg.laplacian(&dsq)
        + 0.125 * dot_vec(&dv, &grad_src)
        - 0.25 * bg.laplacian(&rc_h2)
        - 0.5 * lsq
        + 2.0 * rc_h_w2_pattern(ctx)
        + 4.0 * rc_h_l_pattern(ctx, &l)
        + (23.0 / 32.0) * s_rc * s_rc
        + (23.0 / 16.0) * r * x2h.value()
        - rc_a_a_pattern(ctx)
        + rc_grad_pattern(ctx, &dv)
        + (23.0 / 64.0) * r * asq.value()
        - (23.0 / 64.0) * r * dsq.value()
        - 0.125 * d_h_vec(ctx, &grad_r)
        - 0.125 * whv_pattern(ctx, &grad_r)
        - 0.25 * dot2(&raise2(&gi, &h2v), &hess_r)
        - 4.0 * rc_rc_s(&gi, &rc, &h2v)
        - 2.0 * rc_rc_h_h_pattern(ctx)
        + (23.0 / 16.0) * r * rc_h2.value();

    (q1, q2)
}

/// The six displayed term groups of the first Paneitz coefficient P^(1) phi.
pub fn p1_term_groups(ctx: &PerturbCtx, phi: &Jet) -> [f64; 6] {
    let bg = ctx.bg;
    let gi = ctx.gi_v();
    let rc = ctx.rc_v();
    let rcu = raise2(&gi, &rc);
    let r = bg.r.value();
    let hv = ctx.h_v();
    let hu = raise2(&gi, &hv);
    let dv = [ctx.d[0].value(), ctx.d[1].value(), ctx.d[2].value()];
    let s_rc = ctx.s_rc.value();
    let grad_r = [bg.r.deriv(0).value(), bg.r.deriv(1).value(), bg.r.deriv(2).value()];

    let lap_phi = bg.laplacian_jet(phi);
    let hess_lap_phi = sym_values(&bg.hessian_jet(&lap_phi));
    let grad_lap_phi = [
        lap_phi.deriv(0).value(),
        lap_phi.deriv(1).value(),
        lap_phi.deriv(2).value(),
    ];
    let hess_phi_j = bg.hessian_jet(phi);
    let hess_phi = sym_values(&hess_phi_j);
    let grad_phi = [phi.deriv(0).value(), phi.deriv(1).value(), phi.deriv(2).value()];

    let dot_vec = |u: &[f64; 3], v: &[f64; 3]| -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += gi[a][b] * u[a] * v[b];
            }
        }
        s
    };

    // scalar jets that sit under a Laplacian
    let gi_j = |a: usize, b: usize| bg.ginv[sym_slot(a, b)];
    let ord = ctx.h[0].order().saturating_sub(2);
    let mut h_hess_phi = Jet::zero(ord);
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for e in 0..3 {
                    h_hess_phi = h_hess_phi
                        + gi_j(a, c) * gi_j(b, e) * ctx.h[sym_slot(a, b)] * hess_phi_j[sym_slot(c, e)];
                }
            }
        }
    }
    let mut d_grad_phi = Jet::zero(ord);
    for a in 0..3 {
        for b in 0..3 {
            d_grad_phi = d_grad_phi + gi_j(a, b) * ctx.d[a] * phi.deriv(b);
        }
    }

    // 2 h_ikjk - Delta h_ij - (tr h)_ij values
    let mut two_m1 = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            two_m1[a][b] = 2.0 * ctx.m1[a][b].value()
                - ctx.lap_h[sym_slot(a, b)].value()
                - ctx.hess_tr[sym_slot(a, b)].value();
        }
    }

    // Rc_ij h_ik phi_jk
    let mut rc_h_hessphi = 0.0;
    for a in 0..3 {
        for ap in 0..3 {
            for b in 0..3 {
                for bp in 0..3 {
                    for c in 0..3 {
                        for cp in 0..3 {
                            rc_h_hessphi += gi[a][ap] * gi[b][bp] * gi[c][cp]
                                * rc[a][b]
                                * hv[ap][c]
                                * hess_phi[bp][cp];
                        }
                    }
                }
            }
        }
    }

    let grad_src = [
        ctx.s_rc.deriv(0).value(),
        ctx.s_rc.deriv(1).value(),
        ctx.s_rc.deriv(2).value(),
    ];

    let line1 = -dot2(&hu, &hess_lap_phi) - bg.laplacian(&h_hess_phi)
        - 0.5 * dot_vec(&dv, &grad_lap_phi)
        - 0.5 * bg.laplacian(&d_grad_phi);
    let line2 = 2.0 * dot2(&raise2(&gi, &two_m1), &hess_phi) - 8.0 * rc_h_hessphi
        + 1.25 * r * dot2(&hu, &hess_phi);
    let line3 = -1.25 * s_rc * lap_phi.value() - 2.0 * rc_grad_pattern(ctx, &grad_phi)
        + 0.625 * r * dot_vec(&dv, &grad_phi);
    let line4 = 0.75 * dot_vec(&grad_src, &grad_phi)
        - 0.75 * {
            // h_ij R_i phi_j
            let mut acc = 0.0;
            for a in 0..3 {
                for ap in 0..3 {
                    for b in 0..3 {
                        for bp in 0..3 {
                            acc += gi[a][ap] * gi[b][bp] * hv[a][b] * grad_r[ap] * grad_phi[bp];
                        }
                    }
                }
            }
            acc
        }
        + 0.125 * bg.laplacian(&ctx.s_rc) * phi.value();
    let line5 = -0.125 * dot2(&hu, &sym_values(&bg.hessian_jet(&bg.r))) * phi.value()
        - (1.0 / 16.0) * dot_vec(&dv, &grad_r) * phi.value()
        + dot2(&rcu, &two_m1) * phi.value();
    let line6 = -2.0 * rc_rc_s(&gi, &rc, &hv) * phi.value()
        - (23.0 / 32.0) * r * s_rc * phi.value();

    [line1, line2, line3, line4, line5, line6]
}

/// P^(1)_{g,h} phi at a point.
pub fn p1_apply(g: &MetricField, h: &SymTensorField, phi: &ScalarField, x: [f64; 3]) -> Result<f64> {
    let bg = MetricCtx::build(g, x)?;
    let hj = h.jets(x, MAX_ORDER)?;
    let ctx = PerturbCtx::new(&bg, hj);
    let pj = phi.jet(x, MAX_ORDER)?;
    Ok(p1_term_groups(&ctx, &pj).iter().sum())
}

/// P^(1) phi from a prepared context.
pub fn p1_value(ctx: &PerturbCtx, phi: &Jet) -> f64 {
    p1_term_groups(ctx, phi).iter().sum()
}

/// The sphere-specialised first coefficient (round background folded in):
/// Rc = 2 g and R = 6 are eliminated, leaving s2 = h_ijij - Delta tr h - 2 tr h.
pub fn p1_sphere_apply(h: &SymTensorField, phi: &ScalarField, x: [f64; 3]) -> Result<f64> {
    let g = MetricField::round();
    let bg = MetricCtx::build(&g, x)?;
    let hj = h.jets(x, MAX_ORDER)?;
    let ctx = PerturbCtx::new(&bg, hj);
    let pj = phi.jet(x, MAX_ORDER)?;
    Ok(p1_sphere_value(&ctx, &pj))
}

/// Sphere-specialised P^(1) phi from a prepared (round-background) context.
pub fn p1_sphere_value(ctx: &PerturbCtx, phi: &Jet) -> f64 {
    let bg = ctx.bg;
    let gi = ctx.gi_v();
    let hv = ctx.h_v();
    let hu = raise2(&gi, &hv);
    let dv = [ctx.d[0].value(), ctx.d[1].value(), ctx.d[2].value()];

    // s2 = h_ijij - Delta tr h - 2 tr h as a jet
    let gi_j = |a: usize, b: usize| bg.ginv[sym_slot(a, b)];
    let ord = ctx.s_rc.order();
    let mut dd = Jet::zero(ord);
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for e in 0..3 {
                    dd = dd + gi_j(a, c) * gi_j(b, e) * ctx.w2[a][b][c][e];
                }
            }
        }
    }
    let s2 = dd - bg.laplacian_jet(&ctx.tr) - ctx.tr.scale(2.0).with_order(ord);

    let lap_phi = bg.laplacian_jet(phi);
    let hess_lap_phi = sym_values(&bg.hessian_jet(&lap_phi));
    let grad_lap_phi = [
        lap_phi.deriv(0).value(),
        lap_phi.deriv(1).value(),
        lap_phi.deriv(2).value(),
    ];
    let hess_phi_j = bg.hessian_jet(phi);
    let hess_phi = sym_values(&hess_phi_j);
    let grad_phi = [phi.deriv(0).value(), phi.deriv(1).value(), phi.deriv(2).value()];
    let dot_vec = |u: &[f64; 3], v: &[f64; 3]| -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += gi[a][b] * u[a] * v[b];
            }
        }
        s
    };

    let mut h_hess_phi = Jet::zero(ord);
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for e in 0..3 {
                    h_hess_phi = h_hess_phi
                        + gi_j(a, c) * gi_j(b, e) * ctx.h[sym_slot(a, b)] * hess_phi_j[sym_slot(c, e)];
                }
            }
        }
    }
    let mut d_grad_phi = Jet::zero(ord);
    for a in 0..3 {
        for b in 0..3 {
            d_grad_phi = d_grad_phi + gi_j(a, b) * ctx.d[a] * phi.deriv(b);
        }
    }
    let mut two_m1 = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            two_m1[a][b] = 2.0 * ctx.m1[a][b].value()
                - ctx.lap_h[sym_slot(a, b)].value()
                - ctx.hess_tr[sym_slot(a, b)].value();
        }
    }
    let grad_s2 = [s2.deriv(0).value(), s2.deriv(1).value(), s2.deriv(2).value()];

    -dot2(&hu, &hess_lap_phi) - bg.laplacian(&h_hess_phi)
        - 0.5 * dot_vec(&dv, &grad_lap_phi)
        - 0.5 * bg.laplacian(&d_grad_phi)
        + 2.0 * dot2(&raise2(&gi, &two_m1), &hess_phi)
        - 8.5 * dot2(&hu, &hess_phi)
        - 1.25 * s2.value() * lap_phi.value()
        - 0.25 * dot_vec(&dv, &grad_phi)
        + 0.75 * dot_vec(&grad_s2, &grad_phi)
        + 0.125 * bg.laplacian(&s2) * phi.value()
        - (5.0 / 16.0) * s2.value() * phi.value()
}

/// P^(2)_{g,h} 1 assembled term by term.
pub fn p2_one(g: &MetricField, h: &SymTensorField, x: [f64; 3]) -> Result<f64> {
    let bg = MetricCtx::build(g, x)?;
    let hj = h.jets(x, MAX_ORDER)?;
    let ctx = PerturbCtx::new(&bg, hj);
    Ok(p2_one_value(&ctx))
}

/// P^(2) 1 from a prepared context.
pub fn p2_one_value(ctx: &PerturbCtx) -> f64 {
    let bg = ctx.bg;
    let gi = ctx.gi_v();
    let rc = ctx.rc_v();
    let r = bg.r.value();
    let hv = ctx.h_v();
    let hu = raise2(&gi, &hv);
    let dv = [ctx.d[0].value(), ctx.d[1].value(), ctx.d[2].value()];
    let s_rc = ctx.s_rc.value();
    let grad_r = [bg.r.deriv(0).value(), bg.r.deriv(1).value(), bg.r.deriv(2).value()];
    let hess_src = sym_values(&bg.hessian_jet(&ctx.s_rc));
    let grad_src = [
        ctx.s_rc.deriv(0).value(),
        ctx.s_rc.deriv(1).value(),
        ctx.s_rc.deriv(2).value(),
    ];
    let x2h = ctx.x2h_jet();
    let asq = ctx.asq_jet();
    let dsq = ctx.dsq_jet();
    let rc_h2 = ctx.rc_h2_jet();
    let h2v = sym_values(&ctx.h2_jets());
    let l = ctx.l_values();
    let lsq = dot2(&raise2(&gi, &l), &l);
    let dot_vec = |u: &[f64; 3], v: &[f64; 3]| -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += gi[a][b] * u[a] * v[b];
            }
        }
        s
    };

    -0.125 * dot2(&hu, &hess_src) + 0.125 * bg.laplacian(&x2h)
        - (1.0 / 16.0) * dot_vec(&dv, &grad_src)
        + (1.0 / 32.0) * bg.laplacian(&asq)
        - (1.0 / 32.0) * bg.laplacian(&dsq)
        + 0.125 * bg.laplacian(&rc_h2)
        + 0.25 * lsq
        - rc_h_w2_pattern(ctx)
        - 2.0 * rc_h_l_pattern(ctx, &l)
        - (23.0 / 64.0) * s_rc * s_rc
        - (23.0 / 32.0) * r * x2h.value()
        + 0.5 * rc_a_a_pattern(ctx)
        - 0.5 * rc_grad_pattern(ctx, &dv)
        - (23.0 / 128.0) * r * asq.value()
        + (23.0 / 128.0) * r * dsq.value()
        + 0.125
            * (dot2(&raise2(&gi, &h2v), &sym_values(&bg.hessian_jet(&bg.r)))
                + 0.5 * d_h_vec(ctx, &grad_r)
                + 0.5 * whv_pattern(ctx, &grad_r))
        + 2.0 * rc_rc_s(&gi, &rc, &h2v)
        + rc_rc_h_h_pattern(ctx)
        - (23.0 / 32.0) * r * rc_h2.value()
}

// ---------------------------------------------------------------------------
// fast flat-chart reductions (used by the variation quadratures)
// ---------------------------------------------------------------------------

/// P^(1)_{|dx|^2, theta} 1 = 1/8 Delta(theta_ijij - Delta tr theta) from 4-jets.
pub fn p1_flat_one(jets: &[Jet; 6]) -> f64 {
    // s as a 2-jet, then its flat Laplacian value
    let s = flat_deficit_jet(jets);
    0.125 * s.lap()
}

/// theta_ijij - Delta tr theta as a flat 2-jet from component 4-jets.
pub fn flat_deficit_jet(jets: &[Jet; 6]) -> Jet {
    let ord = jets[0].order().saturating_sub(2);
    let mut s = Jet::zero(ord);
    for i in 0..3 {
        for j in 0..3 {
            s = s + jets[sym_slot(i, j)].deriv(i).deriv(j);
        }
        s = s - jets[sym_slot(i, i)].deriv(0).deriv(0)
            - jets[sym_slot(i, i)].deriv(1).deriv(1)
            - jets[sym_slot(i, i)].deriv(2).deriv(2);
    }
    s
}

/// P^(2)_{|dx|^2, theta} 1 from component 4-jets (all flat-chart terms,
/// including the total-derivative groups).
pub fn p2_flat_one(jets: &[Jet; 6]) -> f64 {
    let ord2 = jets[0].order().saturating_sub(2);
    let j = |i: usize, k: usize| jets[sym_slot(i, k)];

    // flat covariant derivatives are plain partials
    let s = flat_deficit_jet(jets);
    let sv = s.value();

    // tr theta jet and derived
    let tr = j(0, 0) + j(1, 1) + j(2, 2);

    // D_i = 2 theta_ijj - (tr)_i as 3-jets
    let mut d = [Jet::zero(0); 3];
    for i in 0..3 {
        let mut div = j(i, 0).deriv(0) + j(i, 1).deriv(1) + j(i, 2).deriv(2);
        div = div.scale(2.0);
        d[i] = div - tr.deriv(i);
    }

    // theta_ij s_ij
    let mut th_hess_s = 0.0;
    for i in 0..3 {
        for k in 0..3 {
            th_hess_s += j(i, k).value() * s.deriv(i).deriv(k).value();
        }
    }

    // Delta[(Delta th_ij + tr_ij - 2 th_ikjk) th_ij]
    let mut inner = Jet::zero(ord2);
    for i in 0..3 {
        for k in 0..3 {
            let mut lap_th = Jet::zero(ord2);
            let mut ddiv = Jet::zero(ord2);
            for a in 0..3 {
                lap_th = lap_th + j(i, k).deriv(a).deriv(a);
                ddiv = ddiv + j(i, a).deriv(k).deriv(a);
            }
            let t = lap_th + tr.deriv(i).deriv(k) - ddiv.scale(2.0);
            inner = inner + t * j(i, k).with_order(ord2);
        }
    }
    let t_b = 0.125 * inner.lap();

    // D_i s_i
    let mut d_s = 0.0;
    for i in 0..3 {
        d_s += d[i].value() * s.deriv(i).value();
    }

    // A-square and D-square jets
    let mut asq = Jet::zero(ord2);
    for i in 0..3 {
        for k in 0..3 {
            for l in 0..3 {
                let a = j(i, k).deriv(l) + j(l, k).deriv(i) - j(i, l).deriv(k);
                let a = a.with_order(ord2);
                asq = asq + a * a;
            }
        }
    }
    let mut dsq = Jet::zero(ord2);
    for i in 0..3 {
        let di = d[i].with_order(ord2);
        dsq = dsq + di * di;
    }

    // sum_ij M_ij^2 with M the Lichnerowicz combination
    let mut msq = 0.0;
    for i in 0..3 {
        for k in 0..3 {
            let mut m = -j(i, k).lap() - tr.deriv(i).deriv(k).value();
            for a in 0..3 {
                m += j(i, a).deriv(k).deriv(a).value() + j(k, a).deriv(i).deriv(a).value();
            }
            msq += m * m;
        }
    }

    -0.125 * th_hess_s + t_b - (1.0 / 16.0) * d_s + (1.0 / 32.0) * asq.lap()
        - (1.0 / 32.0) * dsq.lap()
        + 0.25 * msq
        - (23.0 / 64.0) * sv * sv
}

// ---------------------------------------------------------------------------
// adjoint defect
// ---------------------------------------------------------------------------

/// |int P1 phi psi dmu - int phi P1 psi dmu + 1/2 int (P phi psi - phi P psi) tr h dmu|
/// over the manifold described by `g`, integrated on the given chart grid.
/// The integrands must be compactly supported inside the grid.
pub fn adjoint_defect_residual(
    g: &MetricField,
    h: &SymTensorField,
    phi: &ScalarField,
    psi: &ScalarField,
    grid: Grid3,
) -> Result<f64> {
    let v = integrate_grid(grid, |x| {
        let bg = match MetricCtx::build(g, x) {
            Ok(b) => b,
            Err(_) => return f64::NAN,
        };
        let hj = match h.jets(x, MAX_ORDER) {
            Ok(j) => j,
            Err(_) => return f64::NAN,
        };
        let ctx = PerturbCtx::new(&bg, hj);
        let pj = phi.jet(x, MAX_ORDER).expect("phi jets");
        let qj = psi.jet(x, MAX_ORDER).expect("psi jets");
        let p1_phi = p1_value(&ctx, &pj);
        let p1_psi = p1_value(&ctx, &qj);
        let p_phi = bg.paneitz(&pj);
        let p_psi = bg.paneitz(&qj);
        let trh = ctx.tr.value();
        let dens = sym_det(&bg.g).value().sqrt();
        (p1_phi * qj.value() - pj.value() * p1_psi
            + 0.5 * (p_phi * qj.value() - pj.value() * p_psi) * trh)
            * dens
    });
    if v.is_nan() {
        return Err(Error::QuadratureBudget("integrand not evaluable on the grid".into()));
    }
    Ok(v.abs())
}

// ---------------------------------------------------------------------------
// finite-difference validation
// ---------------------------------------------------------------------------

/// Quantities whose order-2 expansions are validated against the exact pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quantity {
    Measure,
    Christoffel,
    Riemann,
    Ricci,
    Scalar,
    Laplacian,
    RSquared,
    RicciNorm2,
    LaplacianR,
    Q,
    /// P_{g+th} 1 against -(Q + t Q1 + t^2 Q2)/2
    PaneitzOne,
    /// P_{g+th} phi against P phi + t P1 phi; first-order window
    PaneitzPhi,
}

impl Quantity {
    pub const ALL: [Quantity; 12] = [
        Quantity::Measure,
        Quantity::Christoffel,
        Quantity::Riemann,
        Quantity::Ricci,
        Quantity::Scalar,
        Quantity::Laplacian,
        Quantity::RSquared,
        Quantity::RicciNorm2,
        Quantity::LaplacianR,
        Quantity::Q,
        Quantity::PaneitzOne,
        Quantity::PaneitzPhi,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Quantity::Measure => "measure",
            Quantity::Christoffel => "christoffel",
            Quantity::Riemann => "riemann",
            Quantity::Ricci => "ricci",
            Quantity::Scalar => "scalar",
            Quantity::Laplacian => "laplacian",
            Quantity::RSquared => "r-squared",
            Quantity::RicciNorm2 => "ricci-norm2",
            Quantity::LaplacianR => "laplacian-r",
            Quantity::Q => "q",
            Quantity::PaneitzOne => "paneitz-one",
            Quantity::PaneitzPhi => "paneitz-phi",
        }
    }

    /// Expected remainder order and the accepted slope window.
    pub fn slope_window(&self) -> (f64, f64) {
        match self {
            Quantity::PaneitzPhi => (1.7, 2.3),
            _ => (2.7, 3.3),
        }
    }
}

/// Result of one slope test.
#[derive(Clone, Debug)]
pub struct SlopeReport {
    pub quantity: Quantity,
    pub ts: Vec<f64>,
    pub remainders: Vec<f64>,
    pub slope: f64,
    pub pass: bool,
}

struct FrameAt {
    /// e[i][a]: i coordinate index, a frame index (columns are frame vectors)
    e: M3,
    /// einv[a][i]: the inverse frame matrix
    einv: M3,
}

fn frame_at(gv: &M3) -> FrameAt {
    let m = nalgebra::Matrix3::new(
        gv[0][0], gv[0][1], gv[0][2], gv[1][0], gv[1][1], gv[1][2], gv[2][0], gv[2][1], gv[2][2],
    );
    let chol = m.cholesky().expect("metric positive definite");
    let l = chol.l();
    let linv = l.try_inverse().expect("triangular inverse");
    // E = L^{-T}: E^T g E = I
    let mut e = [[0.0; 3]; 3];
    let mut einv = [[0.0; 3]; 3];
    for i in 0..3 {
        for a in 0..3 {
            e[i][a] = linv[(a, i)];
            einv[a][i] = l[(i, a)];
        }
    }
    FrameAt { e, einv }
}

/// Exact-versus-prediction remainders for a quantity at one sample point.
/// Returns, per t, the max-abs component difference.
#[allow(clippy::too_many_arguments)]
fn remainders_at(
    quantity: Quantity,
    g: &MetricField,
    h: &SymTensorField,
    phi: &ScalarField,
    x: [f64; 3],
    ts: &[f64],
) -> Result<Vec<f64>> {
    let bg = MetricCtx::build(g, x)?;
    let hj = h.jets(x, MAX_ORDER)?;
    let ctx = PerturbCtx::new(&bg, hj);
    let gi = ctx.gi_v();
    let gv = sym_values(&bg.g);
    let frame = frame_at(&gv);
    let pj = phi.jet(x, MAX_ORDER)?;

    // prediction coefficients (c0, c1, c2) as flat vectors of components
    let (c0, c1, c2): (Vec<f64>, Vec<f64>, Vec<f64>) = match quantity {
        Quantity::Measure => {
            let hv = ctx.h_v();
            let tr = dot2(&gi, &hv);
            let h2 = ctx.h_norm2();
            (vec![1.0], vec![0.5 * tr], vec![tr * tr / 8.0 - h2 / 4.0])
        }
        Quantity::Christoffel => {
            let a = ctx.a_combo();
            let hv = ctx.h_v();
            let mut v0 = Vec::new();
            let mut v1 = Vec::new();
            let mut v2 = Vec::new();
            for k in 0..3 {
                for i in 0..3 {
                    for jx in 0..3 {
                        v0.push(0.0);
                        // frame projection: E^i, E^j for lower, E^{-1} trick not
                        // needed since the prediction carries a lower frame k
                        // contracted through g^{-1} when raised; work fully in
                        // frame components
                        let mut t1 = 0.0;
                        let mut t2 = 0.0;
                        for p in 0..3 {
                            for q in 0..3 {
                                for rr in 0..3 {
                                    let fpr = frame.e[p][i] * frame.e[q][k] * frame.e[rr][jx];
                                    // A in frame slots (i, k, j)
                                    t1 += 0.5 * fpr * raise_none(&a, p, q, rr).value();
                                    // second order: -1/2 A(i, alpha, j) h_{k alpha}
                                    for al in 0..3 {
                                        for alp in 0..3 {
                                            t2 += -0.5
                                                * frame.e[p][i]
                                                * frame.e[rr][jx]
                                                * gi[al][alp]
                                                * raise_none(&a, p, al, rr).value()
                                                * hv[q][alp]
                                                * frame.e[q][k];
                                        }
                                    }
                                }
                            }
                        }
                        v1.push(t1);
                        v2.push(t2);
                    }
                }
            }
            (v0, v1, v2)
        }
        Quantity::Riemann => {
            let (v1, v2) = riemann_prediction(&ctx, &frame);
            let r0 = riemann_frame(&bg, &frame);
            (r0, v1, v2)
        }
        Quantity::Ricci => {
            let hv = ctx.h_v();
            let l = ctx.l_values();
            let a = ctx.a_combo();
            let mut v0 = Vec::new();
            let mut v1 = Vec::new();
            let mut v2 = Vec::new();
            let rc0 = sym_values(&bg.ricci);
            for i in 0..3 {
                for jx in 0..3 {
                    let f = |m: &M3| -> f64 {
                        let mut s = 0.0;
                        for p in 0..3 {
                            for q in 0..3 {
                                s += frame.e[p][i] * frame.e[q][jx] * m[p][q];
                            }
                        }
                        s
                    };
                    v0.push(f(&rc0));
                    v1.push(0.5 * f(&l));
                    // t^2 terms of the Ricci expansion
                    let mut t2m = [[0.0; 3]; 3];
                    for p in 0..3 {
                        for q in 0..3 {
                            // -1/2 (h_pkql + h_qkpl - h_klqp - h_pqkl) h_kl
                            let mut s1 = 0.0;
                            for k in 0..3 {
                                for kp in 0..3 {
                                    for lx in 0..3 {
                                        for lp in 0..3 {
                                            let w2 = ctx.w2[p][k][q][lx].value()
                                                + ctx.w2[q][k][p][lx].value()
                                                - ctx.w2[k][lx][q][p].value()
                                                - ctx.w2[p][q][k][lx].value();
                                            s1 += gi[k][kp] * gi[lx][lp] * w2 * hv[kp][lp];
                                        }
                                    }
                                }
                            }
                            // +1/4 A_pkl A_qkl
                            let mut s2 = 0.0;
                            for k in 0..3 {
                                for kp in 0..3 {
                                    for lx in 0..3 {
                                        for lp in 0..3 {
                                            s2 += 0.25
                                                * gi[k][kp]
                                                * gi[lx][lp]
                                                * a[p][k][lx].value()
                                                * a[q][kp][lp].value();
                                        }
                                    }
                                }
                            }
                            // -1/4 A(p, k, q) D_k
                            let mut s3 = 0.0;
                            for k in 0..3 {
                                for kp in 0..3 {
                                    s3 += -0.25
                                        * gi[k][kp]
                                        * (ctx.w[p][k][q].value() + ctx.w[q][k][p].value()
                                            - ctx.w[p][q][k].value())
                                        * ctx.d[kp].value();
                                }
                            }
                            t2m[p][q] = -0.5 * s1 + s2 + s3;
                        }
                    }
                    v2.push(f(&t2m));
                }
            }
            (v0, v1, v2)
        }
        Quantity::Scalar => {
            let x2h = ctx.x2h_jet().value();
            let asq = ctx.asq_jet().value();
            let dsq = ctx.dsq_jet().value();
            let rc_h2 = ctx.rc_h2_jet().value();
            (
                vec![bg.r.value()],
                vec![ctx.s_rc.value()],
                vec![x2h + 0.25 * asq - 0.25 * dsq + rc_h2],
            )
        }
        Quantity::Laplacian => {
            let hv = ctx.h_v();
            let hu = raise2(&gi, &hv);
            let hess_phi = sym_values(&bg.hessian_jet(&pj));
            let grad_phi = [pj.deriv(0).value(), pj.deriv(1).value(), pj.deriv(2).value()];
            let dv = [ctx.d[0].value(), ctx.d[1].value(), ctx.d[2].value()];
            let mut dgp = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    dgp += gi[a][b] * dv[a] * grad_phi[b];
                }
            }
            let h2v = sym_values(&ctx.h2_jets());
            let c2 = 0.5 * d_h_vec(&ctx, &grad_phi) + 0.5 * whv_pattern(&ctx, &grad_phi)
                + dot2(&raise2(&gi, &h2v), &hess_phi);
            (
                vec![bg.laplacian(&pj)],
                vec![-0.5 * dgp - dot2(&hu, &hess_phi)],
                vec![c2],
            )
        }
        Quantity::RSquared => {
            let r = bg.r.value();
            let s = ctx.s_rc.value();
            let x2h = ctx.x2h_jet().value();
            let asq = ctx.asq_jet().value();
            let dsq = ctx.dsq_jet().value();
            let rc_h2 = ctx.rc_h2_jet().value();
            (
                vec![r * r],
                vec![2.0 * r * s],
                vec![s * s + 2.0 * r * x2h + 0.5 * r * asq - 0.5 * r * dsq + 2.0 * r * rc_h2],
            )
        }
        Quantity::RicciNorm2 => {
            let rc = ctx.rc_v();
            let hv = ctx.h_v();
            let rcu = raise2(&gi, &rc);
            let l = ctx.l_values();
            let h2v = sym_values(&ctx.h2_jets());
            let mut two_m1 = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    two_m1[a][b] = 2.0 * ctx.m1[a][b].value()
                        - ctx.hess_tr[sym_slot(a, b)].value()
                        - ctx.lap_h[sym_slot(a, b)].value();
                }
            }
            let c1 = dot2(&rcu, &two_m1) - 2.0 * rc_rc_s(&gi, &rc, &hv);
            let lsq = dot2(&raise2(&gi, &l), &l);
            let c2 = 0.25 * lsq - rc_h_w2_pattern(&ctx) - 2.0 * rc_h_l_pattern(&ctx, &l)
                + 0.5 * rc_a_a_pattern(&ctx)
                - 0.5 * rc_grad_pattern(&ctx, &[ctx.d[0].value(), ctx.d[1].value(), ctx.d[2].value()])
                + 2.0 * rc_rc_s(&gi, &rc, &h2v)
                + rc_rc_h_h_pattern(&ctx);
            (vec![bg.ricci_norm2_jet().value()], vec![c1], vec![c2])
        }
        Quantity::LaplacianR => {
            let grad_r = [bg.r.deriv(0).value(), bg.r.deriv(1).value(), bg.r.deriv(2).value()];
            let hess_r = sym_values(&bg.hessian_jet(&bg.r));
            let hv = ctx.h_v();
            let hu = raise2(&gi, &hv);
            let dv = [ctx.d[0].value(), ctx.d[1].value(), ctx.d[2].value()];
            let mut dgr = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    dgr += gi[a][b] * dv[a] * grad_r[b];
                }
            }
            let c1 = bg.laplacian(&ctx.s_rc) - 0.5 * dgr - dot2(&hu, &hess_r);
            let x2h = ctx.x2h_jet();
            let asq = ctx.asq_jet();
            let dsq = ctx.dsq_jet();
            let rc_h2 = ctx.rc_h2_jet();
            let hess_src = sym_values(&bg.hessian_jet(&ctx.s_rc));
            let grad_src = [
                ctx.s_rc.deriv(0).value(),
                ctx.s_rc.deriv(1).value(),
                ctx.s_rc.deriv(2).value(),
            ];
            let mut dgs = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    dgs += gi[a][b] * dv[a] * grad_src[b];
                }
            }
            let h2v = sym_values(&ctx.h2_jets());
            let c2 = bg.laplacian(&x2h) - dot2(&hu, &hess_src) + 0.25 * bg.laplacian(&asq)
                - 0.25 * bg.laplacian(&dsq)
                - 0.5 * dgs
                + bg.laplacian(&rc_h2)
                + 0.5 * d_h_vec(&ctx, &grad_r)
                + 0.5 * whv_pattern(&ctx, &grad_r)
                + dot2(&raise2(&gi, &h2v), &hess_r);
            (vec![bg.laplacian(&bg.r)], vec![c1], vec![c2])
        }
        Quantity::Q => {
            let (q1, q2) = q_coefficients(&ctx);
            (vec![bg.q_value()], vec![q1], vec![q2])
        }
        Quantity::PaneitzOne => {
            let (q1, q2) = q_coefficients(&ctx);
            (vec![-0.5 * bg.q_value()], vec![-0.5 * q1], vec![-0.5 * q2])
        }
        Quantity::PaneitzPhi => {
            let p1 = p1_value(&ctx, &pj);
            (vec![bg.paneitz(&pj)], vec![p1], vec![0.0])
        }
    };

    // exact values per t
    let mut rems = Vec::with_capacity(ts.len());
    for &t in ts {
        let gt = g.perturbed(h, t);
        let exact: Vec<f64> = match quantity {
            Quantity::Measure => {
                let j0 = g.jets(x, 0)?;
                let jt = gt.jets(x, 0)?;
                vec![(sym_det(&jt).value() / sym_det(&j0).value()).sqrt()]
            }
            Quantity::Christoffel => {
                let c0m = MetricCtx::build(g, x)?;
                let ctm = MetricCtx::build(&gt, x)?;
                let mut v = Vec::new();
                for k in 0..3 {
                    for i in 0..3 {
                        for jx in 0..3 {
                            let mut s = 0.0;
                            for kk in 0..3 {
                                for ii in 0..3 {
                                    for jj in 0..3 {
                                        s += frame.einv[k][kk]
                                            * frame.e[ii][i]
                                            * frame.e[jj][jx]
                                            * (ctm.gamma[kk][ii][jj].value()
                                                - c0m.gamma[kk][ii][jj].value());
                                    }
                                }
                            }
                            v.push(s);
                        }
                    }
                }
                v
            }
            Quantity::Riemann => {
                let ctm = MetricCtx::build(&gt, x)?;
                riemann_frame(&ctm, &frame)
            }
            Quantity::Ricci => {
                let ctm = MetricCtx::build(&gt, x)?;
                let rcv = sym_values(&ctm.ricci);
                let mut v = Vec::new();
                for i in 0..3 {
                    for jx in 0..3 {
                        let mut s = 0.0;
                        for p in 0..3 {
                            for q in 0..3 {
                                s += frame.e[p][i] * frame.e[q][jx] * rcv[p][q];
                            }
                        }
                        v.push(s);
                    }
                }
                v
            }
            Quantity::Scalar => vec![MetricCtx::build(&gt, x)?.r.value()],
            Quantity::Laplacian => vec![MetricCtx::build(&gt, x)?.laplacian(&pj)],
            Quantity::RSquared => {
                let r = MetricCtx::build(&gt, x)?.r.value();
                vec![r * r]
            }
            Quantity::RicciNorm2 => vec![MetricCtx::build(&gt, x)?.ricci_norm2_jet().value()],
            Quantity::LaplacianR => {
                let c = MetricCtx::build(&gt, x)?;
                vec![c.laplacian(&c.r)]
            }
            Quantity::Q => vec![MetricCtx::build(&gt, x)?.q_value()],
            Quantity::PaneitzOne => {
                let c = MetricCtx::build(&gt, x)?;
                vec![c.paneitz(&Jet::constant(1.0, MAX_ORDER))]
            }
            Quantity::PaneitzPhi => vec![MetricCtx::build(&gt, x)?.paneitz(&pj)],
        };
        let mut worst: f64 = 0.0;
        for (idx, ev) in exact.iter().enumerate() {
            let pred = c0[idx] + t * c1[idx] + t * t * c2[idx];
            worst = worst.max((ev - pred).abs());
        }
        rems.push(worst);
    }
    Ok(rems)
}

fn raise_none(a: &[[[Jet; 3]; 3]; 3], i: usize, k: usize, j: usize) -> Jet {
    a[i][k][j]
}

/// Frame components of the full Riemann tensor in the paper's slot order.
fn riemann_frame(ctx: &MetricCtx, frame: &FrameAt) -> Vec<f64> {
    let riem = ctx.riemann_values();
    let mut v = Vec::with_capacity(81);
    for l in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    // paper slots (l, i, j, k) = stored slots (l, k, j, i)
                    let mut s = 0.0;
                    for ll in 0..3 {
                        for ii in 0..3 {
                            for jj in 0..3 {
                                for kk in 0..3 {
                                    s += frame.einv[l][ll]
                                        * frame.e[ii][i]
                                        * frame.e[jj][j]
                                        * frame.e[kk][k]
                                        * riem[ll][kk][jj][ii];
                                }
                            }
                        }
                    }
                    v.push(s);
                }
            }
        }
    }
    v
}

/// First- and second-order frame predictions for the Riemann expansion.
fn riemann_prediction(ctx: &PerturbCtx, frame: &FrameAt) -> (Vec<f64>, Vec<f64>) {
    let gi = ctx.gi_v();
    let hv = ctx.h_v();
    let a = ctx.a_combo();
    let mut v1 = Vec::with_capacity(81);
    let mut v2 = Vec::with_capacity(81);
    // coordinate predictions with all indices lower (paper slots l, i, j, k)
    let w2v = |p: usize, q: usize, r: usize, s: usize| ctx.w2[p][q][r][s].value();
    for l in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let mut t1 = 0.0;
                    let mut t2 = 0.0;
                    for ll in 0..3 {
                        for ii in 0..3 {
                            for jj in 0..3 {
                                for kk in 0..3 {
                                    let f = frame.e[ll][l]
                                        * frame.e[ii][i]
                                        * frame.e[jj][j]
                                        * frame.e[kk][k];
                                    if f == 0.0 {
                                        continue;
                                    }
                                    // 1/2 (h_ilkj + h_jkli + h_klij - h_jlki - h_iklj - h_klji)
                                    t1 += 0.5
                                        * f
                                        * (w2v(ii, ll, kk, jj) + w2v(jj, kk, ll, ii)
                                            + w2v(kk, ll, ii, jj)
                                            - w2v(jj, ll, kk, ii)
                                            - w2v(ii, kk, ll, jj)
                                            - w2v(kk, ll, jj, ii));
                                    // -1/2 (h_iakj + h_jkai + h_kaij - h_jaki - h_ikaj - h_kaji) h_la
                                    let mut s1 = 0.0;
                                    for al in 0..3 {
                                        for alp in 0..3 {
                                            let combo = w2v(ii, al, kk, jj) + w2v(jj, kk, al, ii)
                                                + w2v(kk, al, ii, jj)
                                                - w2v(jj, al, kk, ii)
                                                - w2v(ii, kk, al, jj)
                                                - w2v(kk, al, jj, ii);
                                            s1 += gi[al][alp] * combo * hv[ll][alp];
                                        }
                                    }
                                    // +1/4 A(i,a,l) A(j,a,k) - 1/4 A(i,a,k) A(j,a,l)
                                    let mut s2 = 0.0;
                                    for al in 0..3 {
                                        for alp in 0..3 {
                                            s2 += 0.25
                                                * gi[al][alp]
                                                * (a[ii][al][ll].value() * a[jj][alp][kk].value()
                                                    - a[ii][al][kk].value()
                                                        * a[jj][alp][ll].value());
                                        }
                                    }
                                    t2 += f * (-0.5 * s1 + s2);
                                }
                            }
                        }
                    }
                    v1.push(t1);
                    v2.push(t2);
                }
            }
        }
    }
    (v1, v2)
}

/// Validate an order-2 expansion by the measured remainder slope over a t-grid.
///
/// If the metric loses positive definiteness at the largest t the grid is
/// shrunk; at least three t-values must survive.
pub fn fd_validate(
    quantity: Quantity,
    g: &MetricField,
    h: &SymTensorField,
    phi: &ScalarField,
    t_grid: &[f64],
    samples: &[[f64; 3]],
) -> Result<SlopeReport> {
    let mut ts: Vec<f64> = t_grid.to_vec();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    loop {
        let mut worst = vec![0.0f64; ts.len()];
        let mut shrink = false;
        'outer: for &x in samples {
            match remainders_at(quantity, g, h, phi, x, &ts) {
                Ok(r) => {
                    for (i, v) in r.iter().enumerate() {
                        worst[i] = worst[i].max(*v);
                    }
                }
                Err(Error::NotPositiveDefinite { .. }) => {
                    shrink = true;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        if shrink {
            if ts.len() <= 3 {
                return Err(Error::NotPositiveDefinite { point: samples[0] });
            }
            ts.remove(0);
            continue;
        }
        let slope = log_slope(&ts, &worst);
        let (lo, hi) = quantity.slope_window();
        return Ok(SlopeReport {
            quantity,
            ts: ts.clone(),
            remainders: worst,
            slope,
            pass: slope >= lo && slope <= hi,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{expansion_family, gaussian_bump, gaussian_component_theta};
    use crate::fields::pullback_theta;
    use approx::assert_relative_eq;

    fn sample_points() -> Vec<[f64; 3]> {
        vec![[0.0, 0.0, 0.0], [0.35, -0.2, 0.5], [0.8, 0.45, -0.3]]
    }

    fn t_grid() -> Vec<f64> {
        vec![0.1, 0.05, 0.025, 0.0125]
    }

    #[test]
    fn measure_coefficients() {
        // h = g gives tr h = 3, |h|^2 = 3
        let g = MetricField::round();
        let h = g.components().clone();
        let (c0, c1, c2) = measure_expansion(&g, &h, [0.4, 0.1, -0.2]).unwrap();
        assert_relative_eq!(c0, 1.0);
        assert_relative_eq!(c1, 1.5, epsilon = 1e-12);
        assert_relative_eq!(c2, 3.0 / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn q_expansion_h_zero() {
        let g = MetricField::round();
        let h = crate::fields::SymTensorField::zero();
        let (q0, q1, q2) = q_expansion(&g, &h, [0.3, 0.3, 0.3]).unwrap();
        assert_relative_eq!(q0, 15.0 / 8.0, epsilon = 1e-9);
        assert_relative_eq!(q1, 0.0, epsilon = 1e-10);
        assert_relative_eq!(q2, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn q1_flat_matches_deficit_laplacian() {
        // flat background: Q1 = -1/4 Delta(h_ijij - Delta tr h)
        let g = MetricField::flat();
        let th = gaussian_component_theta(0, 0, 1.0, [0.1, 0.0, -0.2], 1.0);
        let x = [0.3, -0.25, 0.15];
        let (_, q1, _) = q_expansion(&g, &th, x).unwrap();
        let jets = th.jets(x, 4).unwrap();
        let s = flat_deficit_jet(&jets);
        assert_relative_eq!(q1, -0.25 * s.lap(), epsilon = 1e-9);
    }

    #[test]
    fn p1_and_p2_tie_to_q_channels() {
        // P1 1 = -Q1/2 and P2 1 = -Q2/2 pointwise
        for g in [MetricField::flat(), MetricField::round()] {
            let th = gaussian_component_theta(0, 1, 0.8, [0.2, -0.1, 0.0], 1.1);
            for &x in &sample_points() {
                let bg = MetricCtx::build(&g, x).unwrap();
                let hj = th.jets(x, MAX_ORDER).unwrap();
                let ctx = PerturbCtx::new(&bg, hj);
                let (q1, q2) = q_coefficients(&ctx);
                let one = Jet::constant(1.0, MAX_ORDER);
                let p1 = p1_value(&ctx, &one);
                assert_relative_eq!(p1, -0.5 * q1, epsilon = 1e-8, max_relative = 1e-8);
                let p2 = p2_one_value(&ctx);
                assert_relative_eq!(p2, -0.5 * q2, epsilon = 1e-8, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn p1_sphere_matches_general_on_round() {
        let h = gaussian_component_theta(1, 2, 0.6, [0.0, 0.2, 0.1], 1.0);
        let phi = gaussian_bump(1.0, [0.3, 0.0, 0.0], 1.3);
        let g = MetricField::round();
        for &x in &sample_points() {
            let a = p1_apply(&g, &h, &phi, x).unwrap();
            let b = p1_sphere_apply(&h, &phi, x).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn p1_covariance() {
        // P1_{rho^-4 g, rho^-4 h} phi = rho^7 P1_{g, h}(rho phi) with rho = tau,
        // g flat: the left side is the round-background coefficient with the
        // pulled-back perturbation.
        let g = MetricField::flat();
        let theta = gaussian_component_theta(0, 0, 1.0, [0.2, 0.1, -0.3], 1.0);
        let phi = gaussian_bump(1.0, [0.0; 3], 1.5);
        // rho = tau: rho^-4 g = round, rho^-4 h: with h = theta, rho^-4 theta = pullback h
        let h_round = crate::fields::pushforward_from_theta(&theta);
        let rho_phi = crate::fields::scalar_times_tau_pow(&phi, 1.0);
        let g_round = MetricField::round();
        for &x in &sample_points() {
            let lhs = p1_apply(&g_round, &h_round, &phi, x).unwrap();
            let tau7 = crate::fields::tau().eval(x).powi(7);
            let rhs = tau7 * p1_apply(&g, &theta, &rho_phi, x).unwrap();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-8, max_relative = 1e-7);
        }
    }

    #[test]
    fn p2_flat_fast_path_matches_general() {
        let th = gaussian_component_theta(0, 0, 1.0, [0.0; 3], 1.0)
            .add(&gaussian_component_theta(1, 2, 0.5, [0.3, -0.2, 0.1], 1.2));
        let g = MetricField::flat();
        for &x in &sample_points() {
            let jets = th.jets(x, 4).unwrap();
            let fast = p2_flat_one(&jets);
            let slow = p2_one(&g, &th, x).unwrap();
            assert_relative_eq!(fast, slow, epsilon = 1e-9, max_relative = 1e-9);
            let fast1 = p1_flat_one(&jets);
            let bg = MetricCtx::build(&g, x).unwrap();
            let ctx = PerturbCtx::new(&bg, th.jets(x, MAX_ORDER).unwrap());
            assert_relative_eq!(
                fast1,
                p1_value(&ctx, &Jet::constant(1.0, MAX_ORDER)),
                epsilon = 1e-9,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn slopes_on_flat_background() {
        let g = MetricField::flat();
        let phi = gaussian_bump(1.0, [0.2, 0.0, 0.0], 1.4);
        for p in expansion_family(false) {
            for q in [Quantity::Measure, Quantity::Ricci, Quantity::Q, Quantity::Riemann] {
                let rep = fd_validate(q, &g, &p.h, &phi, &t_grid(), &sample_points()).unwrap();
                assert!(
                    rep.pass,
                    "{} on {} slope {} rems {:?}",
                    q.name(),
                    p.name,
                    rep.slope,
                    rep.remainders
                );
            }
        }
    }

    #[test]
    fn slopes_on_round_background() {
        let g = MetricField::round();
        let phi = gaussian_bump(1.0, [0.0; 3], 1.4);
        for p in expansion_family(true).into_iter().take(1) {
            for q in [
                Quantity::Christoffel,
                Quantity::Scalar,
                Quantity::Laplacian,
                Quantity::RicciNorm2,
                Quantity::LaplacianR,
                Quantity::Q,
                Quantity::PaneitzOne,
                Quantity::PaneitzPhi,
            ] {
                let rep = fd_validate(q, &g, &p.h, &phi, &t_grid(), &sample_points()).unwrap();
                assert!(
                    rep.pass,
                    "{} on {} slope {} rems {:?}",
                    q.name(),
                    p.name,
                    rep.slope,
                    rep.remainders
                );
            }
        }
    }

    #[test]
    fn adjoint_defect_small() {
        let g = MetricField::round();
        let h = gaussian_component_theta(0, 0, 1.0, [0.2, 0.0, 0.0], 0.9);
        let phi = gaussian_bump(1.0, [0.4, 0.1, 0.0], 0.8);
        let psi = gaussian_bump(1.0, [-0.3, 0.2, 0.1], 0.85);
        let grid = Grid3::new(49, 6.0).unwrap();
        let r = adjoint_defect_residual(&g, &h, &phi, &psi, grid).unwrap();
        assert!(r < 1e-8, "adjoint defect {r}");
    }

    #[test]
    fn antisymmetric_channel_vanishes() {
        // phi = psi makes the defect vanish identically
        let g = MetricField::round();
        let h = gaussian_component_theta(0, 1, 0.7, [0.0; 3], 1.0);
        let phi = gaussian_bump(1.0, [0.2, -0.1, 0.3], 0.9);
        let grid = Grid3::new(33, 5.0).unwrap();
        let r = adjoint_defect_residual(&g, &h, &phi, &phi, grid).unwrap();
        assert!(r < 1e-12, "self defect {r}");
    }

    #[test]
    fn theta_pullback_consistency() {
        // pullback_theta of the expansion h reproduces theta on the round background
        let p = &expansion_family(true)[0];
        let th = pullback_theta(&p.h);
        let x = [0.4, -0.6, 0.2];
        let a = th.value(x);
        let b = p.theta.value(x);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(a[i][j], b[i][j], epsilon = 1e-11);
            }
        }
    }
}
