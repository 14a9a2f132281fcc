//! First and second variation of the Green's function pole value on the
//! round three-sphere, in flat-chart form.
//!
//! The second variation of G_{g+th}(N, N) is twice the quadratic form
//!   II(theta) = -(1/128 pi^2) int [ sum_ij M_ij^2 - 3/2 (theta_ijij - Delta tr theta)^2 ] dx,
//! with M the Lichnerowicz combination; the first variation is a boundary
//! flux that vanishes in the limit.  Gauge directions L_X g + f g are the
//! null space, produced and verified here through the jet-level gauge solver.

use crate::catalog::AmbientTensor;
use crate::error::{Error, Result};
use crate::fields::{
    double_div_deficit_from_jets, lichnerowicz_from_jets, sym_slot, Decay, ScalarField,
    SymTensorField, VectorField, SYM_INDEX,
};
use crate::grid::{Grid3, GridScalar};
use crate::jet::{norm2, Jet};
use crate::quadrature::{gauss_legendre, pairwise_sum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

/// Quadrature value together with the analytic tail estimate beyond the grid.
#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    pub tail: f64,
}

/// Pointwise integrand sum_ij M_ij^2 - 3/2 s^2 from component 2-jets.
pub fn ii_integrand(jets: &[Jet; 6]) -> f64 {
    let m = lichnerowicz_from_jets(jets);
    let s = double_div_deficit_from_jets(jets);
    let mut msq = 0.0;
    for row in &m {
        for v in row {
            msq += v * v;
        }
    }
    msq - 1.5 * s * s
}

fn tail_estimate(theta: &SymTensorField, grid: Grid3, boundary_mag: f64) -> Result<f64> {
    let r = grid.radius;
    match theta.decay() {
        Decay::Rapid => Ok(boundary_mag * 8.0 * r * r * r),
        Decay::Power(a) => {
            // the integrand scales like |x|^{2a-4}; integrable for a < 1/2
            let e = 2.0 * a - 4.0;
            if e + 3.0 >= 0.0 {
                return Err(Error::QuadratureBudget(format!(
                    "integrand tail |x|^{e} is not integrable"
                )));
            }
            let c = boundary_mag * r.powf(-e);
            Ok(4.0 * PI * c * r.powf(e + 3.0) / -(e + 3.0))
        }
        Decay::Unknown => Err(Error::UnboundedTail),
    }
}

fn grid_sum_parallel(grid: Grid3, f: impl Fn([f64; 3]) -> f64 + Sync) -> f64 {
    let n = grid.n;
    let h = grid.spacing();
    let slabs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|iz| {
            let mut vals = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    vals.push(f(grid.point(ix, iy, iz)));
                }
            }
            pairwise_sum(&vals)
        })
        .collect();
    pairwise_sum(&slabs) * h * h * h
}

/// II(N, N, h) for theta = tau^4 h; the second derivative of the pole value
/// is twice this.
pub fn ii_quadform(theta: &SymTensorField, grid: Grid3) -> Result<QuadResult> {
    let total = grid_sum_parallel(grid, |x| {
        let jets = theta.jets(x, 2).expect("theta 2-jets");
        ii_integrand(&jets)
    });
    let boundary = boundary_integrand_mag(theta, grid)?;
    let tail = tail_estimate(theta, grid, boundary)?;
    Ok(QuadResult { value: -total / (128.0 * PI * PI), tail })
}

fn boundary_integrand_mag(theta: &SymTensorField, grid: Grid3) -> Result<f64> {
    let r = grid.radius * 0.98;
    let mut mag: f64 = 0.0;
    for d in crate::fields::audit_directions() {
        let x = [r * d[0], r * d[1], r * d[2]];
        let jets = theta.jets(x, 2)?;
        mag = mag.max(ii_integrand(&jets).abs());
    }
    Ok(mag)
}

/// The symmetric bilinear form associated with the quadratic form.
pub fn ii_bilinear(theta: &SymTensorField, kappa: &SymTensorField, grid: Grid3) -> Result<QuadResult> {
    let total = grid_sum_parallel(grid, |x| {
        let tj = theta.jets(x, 2).expect("theta 2-jets");
        let kj = kappa.jets(x, 2).expect("kappa 2-jets");
        let mt = lichnerowicz_from_jets(&tj);
        let mk = lichnerowicz_from_jets(&kj);
        let st = double_div_deficit_from_jets(&tj);
        let sk = double_div_deficit_from_jets(&kj);
        let mut cross = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                cross += mt[i][j] * mk[i][j];
            }
        }
        cross - 1.5 * st * sk
    });
    let bt = boundary_integrand_mag(theta, grid)?;
    let bk = boundary_integrand_mag(kappa, grid)?;
    let tail = tail_estimate(theta, grid, (bt * bk).sqrt()).unwrap_or(f64::NAN);
    Ok(QuadResult { value: -total / (128.0 * PI * PI), tail })
}

/// The three integrals of the term-by-term assembly of the second variation
/// (the route through P^(2) 1, the off-diagonal first variation and the
/// trace coupling), and their total.
#[derive(Clone, Copy, Debug)]
pub struct AssembledSecondVariation {
    pub p2_term: f64,
    pub i_term: f64,
    pub trace_term: f64,
    pub total: f64,
}

/// Assemble II from its three constituent integrals instead of the closed
/// combined integrand; the total-divergence groups of P^(2) 1 are integrated
/// numerically rather than dropped.
pub fn ii_assembled(theta: &SymTensorField, grid: Grid3) -> Result<AssembledSecondVariation> {
    let sums: (f64, f64, f64) = {
        let n = grid.n;
        let h = grid.spacing();
        let slabs: Vec<(f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|iz| {
                let mut a = Vec::with_capacity(n * n);
                let mut b = Vec::with_capacity(n * n);
                let mut c = Vec::with_capacity(n * n);
                for iy in 0..n {
                    for ix in 0..n {
                        let x = grid.point(ix, iy, iz);
                        let jets = theta.jets(x, 4).expect("theta 4-jets");
                        let s = double_div_deficit_from_jets(&jets);
                        let lap_tr: f64 =
                            (0..3).map(|i| jets[sym_slot(i, i)].lap()).sum();
                        a.push(crate::expansion::p2_flat_one(&jets));
                        b.push(s * s);
                        c.push(lap_tr * s);
                    }
                }
                (pairwise_sum(&a), pairwise_sum(&b), pairwise_sum(&c))
            })
            .collect();
        let aa: Vec<f64> = slabs.iter().map(|t| t.0).collect();
        let bb: Vec<f64> = slabs.iter().map(|t| t.1).collect();
        let cc: Vec<f64> = slabs.iter().map(|t| t.2).collect();
        (
            pairwise_sum(&aa) * h * h * h,
            pairwise_sum(&bb) * h * h * h,
            pairwise_sum(&cc) * h * h * h,
        )
    };
    let p2_term = sums.0 / (32.0 * PI * PI);
    let i_term = -sums.1 / (2048.0 * PI * PI);
    let trace_term = sums.2 / (512.0 * PI * PI);
    Ok(AssembledSecondVariation {
        p2_term,
        i_term,
        trace_term,
        total: -(p2_term + i_term + trace_term),
    })
}

// ---------------------------------------------------------------------------
// first variation
// ---------------------------------------------------------------------------

/// Boundary fluxes of the first variation and the extrapolated limit.
#[derive(Clone, Debug)]
pub struct FluxReport {
    pub radii: Vec<f64>,
    pub fluxes: Vec<f64>,
    /// least-squares limit of the 1/R expansion
    pub limit: f64,
}

fn sphere_directions(n_theta: usize, n_phi: usize) -> Vec<([f64; 3], f64)> {
    let (us, ws) = gauss_legendre(n_theta);
    let mut out = Vec::with_capacity(n_theta * n_phi);
    let wphi = 2.0 * PI / n_phi as f64;
    for (u, w) in us.iter().zip(&ws) {
        let s = (1.0 - u * u).sqrt();
        for p in 0..n_phi {
            let phi = wphi * p as f64;
            out.push(([s * phi.cos(), s * phi.sin(), *u], w * wphi));
        }
    }
    out
}

/// The flux -(1/256 pi^2) oint grad(theta_ijij - Delta tr theta) . n dS at
/// each radius, extrapolated to infinity; the limit is the first variation
/// I(N, N, h) and must vanish for admissible h.
pub fn first_variation_pole(theta: &SymTensorField, radii: &[f64]) -> Result<FluxReport> {
    let dirs = sphere_directions(24, 48);
    let mut fluxes = Vec::with_capacity(radii.len());
    for &r in radii {
        let vals: Vec<f64> = dirs
            .par_iter()
            .map(|(d, w)| {
                let x = [r * d[0], r * d[1], r * d[2]];
                let jets = theta.jets(x, 3).expect("theta 3-jets");
                // grad s . n  with s = theta_ijij - Delta tr theta
                let mut gs = [0.0; 3];
                for (k, g) in gs.iter_mut().enumerate() {
                    for i in 0..3 {
                        for j in 0..3 {
                            let mut e = [0usize; 3];
                            e[i] += 1;
                            e[j] += 1;
                            e[k] += 1;
                            *g += jets[sym_slot(i, j)].partial_exp(e);
                        }
                        let mut el = [0usize; 3];
                        el[k] += 1;
                        let tr = jets[sym_slot(i, i)];
                        let mut lap_grad = 0.0;
                        for a in 0..3 {
                            let mut ea = el;
                            ea[a] += 2;
                            lap_grad += tr.partial_exp(ea);
                        }
                        *g -= lap_grad;
                    }
                }
                w * (gs[0] * d[0] + gs[1] * d[1] + gs[2] * d[2])
            })
            .collect();
        fluxes.push(-pairwise_sum(&vals) * r * r / (256.0 * PI * PI));
    }
    // least-squares fit  flux(R) = a + b/R + c/R^2 + d/R^3
    let nr = radii.len();
    if nr < 4 {
        return Err(Error::Config("first variation needs at least four radii".into()));
    }
    let mut m = DMatrix::zeros(nr, 4);
    let mut rhs = DVector::zeros(nr);
    for (i, &r) in radii.iter().enumerate() {
        for p in 0..4 {
            m[(i, p)] = r.powi(-(p as i32));
        }
        rhs[i] = fluxes[i];
    }
    let sol = m
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    let limit = sol[0];
    // the flux sequence must not grow along the radius ladder
    let first = fluxes.first().copied().unwrap_or(0.0).abs();
    let last = fluxes.last().copied().unwrap_or(0.0).abs();
    if last > 10.0 * first.max(1e-12) {
        return Err(Error::FluxNotDecaying);
    }
    Ok(FluxReport { radii: radii.to_vec(), fluxes, limit })
}

/// Lattice L^2 norm squared of the six components (off-diagonals counted
/// twice); the scale for the null-direction tolerances.
pub fn theta_l2_norm2(theta: &SymTensorField, grid: Grid3) -> f64 {
    grid_sum_parallel(grid, |x| {
        let m = theta.value(x);
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += m[i][j] * m[i][j];
            }
        }
        s
    })
}

/// Max |d^alpha theta| over orders <= 4 at a fixed sample cloud; the scale
/// used to normalise first-variation tolerances.
pub fn c4_scale(theta: &SymTensorField) -> f64 {
    let mut pts = vec![[0.0; 3]];
    for d in crate::fields::audit_directions() {
        for r in [0.5, 1.5, 3.0] {
            pts.push([r * d[0], r * d[1], r * d[2]]);
        }
    }
    let mut mag = 0.0f64;
    for x in pts {
        if let Ok(jets) = theta.jets(x, 4) {
            for j in &jets {
                for a in 0..=4usize {
                    for b in 0..=4 - a {
                        for c in 0..=4 - a - b {
                            mag = mag.max(j.partial_exp([a, b, c]).abs());
                        }
                    }
                }
            }
        }
    }
    mag
}

// ---------------------------------------------------------------------------
// off-diagonal first variation
// ---------------------------------------------------------------------------

/// Parts of I(N, q, h): the R^3 kernel integral against the deficit scalar,
/// the two sphere integrals against Green-function weights, and the pole
/// trace value.
#[derive(Clone, Copy, Debug)]
pub struct OffDiagonalFirstVariation {
    pub kernel_term: f64,
    pub dd_term: f64,
    pub trace_term: f64,
    pub point_term: f64,
    pub total: f64,
}

/// Round Laplacian of the Green's function with pole at the north pole,
/// evaluated in closed form on the chart.
pub fn green_north_laplacian(x: [f64; 3]) -> f64 {
    let v = Jet::vars(x, 2);
    let ord = 2;
    let one = Jet::constant(1.0, ord);
    let r2 = norm2(&v);
    let g = (r2 + one).powf(-0.5).scale(-1.0 / (4.0 * PI));
    let t2 = (r2 + one).scale(0.5);
    let t = t2.sqrt();
    // Delta_g phi = tau^4 (Delta phi - 2 tau^-1 grad tau . grad phi)
    let mut dot = 0.0;
    for k in 0..3 {
        dot += t.deriv(k).value() * g.deriv(k).value();
    }
    (t2 * t2).value() * (g.lap() - 2.0 / t.value() * dot)
}

/// Chart value of the Green's function with pole at the north pole.
pub fn green_north(x: [f64; 3]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    -1.0 / (4.0 * PI * (r2 + 1.0).sqrt())
}

/// Round-metric covariant double divergence h_ijij at a chart point.
pub fn round_double_divergence(h: &SymTensorField, x: [f64; 3]) -> Result<f64> {
    let hj = h.jets(x, 2)?;
    let ord = hj[0].order();
    let v = Jet::vars(x, ord);
    let one = Jet::constant(1.0, ord);
    let t2 = (norm2(&v) + one).scale(0.5);
    let t = t2.sqrt();
    let tinv = t.recip();
    // Gamma^k_ij = -2 tau^-1 (tau_i d_jk + tau_j d_ik - tau_k d_ij)
    let mut gam = [[[Jet::zero(ord - 1); 3]; 3]; 3];
    let dt = [t.deriv(0), t.deriv(1), t.deriv(2)];
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = Jet::zero(ord - 1);
                if j == k {
                    acc = acc + dt[i];
                }
                if i == k {
                    acc = acc + dt[j];
                }
                if i == j {
                    acc = acc - dt[k];
                }
                gam[k][i][j] = (tinv * acc).scale(-2.0);
            }
        }
    }
    let hv = |a: usize, b: usize| hj[sym_slot(a, b)];
    let mut w = [[[Jet::zero(ord - 1); 3]; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            for c in 0..3 {
                let mut tt = hv(a, b).deriv(c);
                for l in 0..3 {
                    tt = tt - gam[l][c][a] * hv(l, b) - gam[l][c][b] * hv(a, l);
                }
                w[a][b][c] = tt;
                w[b][a][c] = tt;
            }
        }
    }
    let mut dd = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            // (nabla W)_{a b a ; b}
            let mut tt = w[a][b][a].deriv(b);
            for l in 0..3 {
                tt = tt - gam[l][b][a] * w[l][b][a]
                    - gam[l][b][b] * w[a][l][a]
                    - gam[l][b][a] * w[a][b][l];
            }
            dd += tt.value();
        }
    }
    let t4 = (t2 * t2).value();
    Ok(dd * t4 * t4)
}

/// I(N, q, h) assembled from the kernel integral and the sphere corrections.
/// `h` must have compact support inside the grid for the sphere integrals to
/// be captured; `excise` switches the singular-kernel handling on.
pub fn i_offdiagonal(
    theta: &SymTensorField,
    h: &SymTensorField,
    yq: [f64; 3],
    grid: Grid3,
    excise: bool,
) -> Result<OffDiagonalFirstVariation> {
    let y2: f64 = yq.iter().map(|v| v * v).sum();
    let ay = 1.0 / (y2 + 1.0).sqrt();
    let rho = 2.0 * grid.spacing();

    // main kernel integral over the chart
    let kernel_sum = grid_sum_parallel(grid, |x| {
        let dx = [x[0] - yq[0], x[1] - yq[1], x[2] - yq[2]];
        let dist = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
        if excise && dist <= rho {
            return 0.0;
        }
        if dist < 1e-12 {
            return 0.0;
        }
        let jets = theta.jets(x, 2).expect("theta 2-jets");
        let s = double_div_deficit_from_jets(&jets);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let sq = (r2 + 1.0).sqrt();
        s * ay * (2.0 / dist - 2.0 / sq - 1.0 / (sq * sq * sq))
    });
    let correction = if excise {
        let jets = theta.jets(yq, 2)?;
        let s_y = double_div_deficit_from_jets(&jets);
        let ry2: f64 = yq.iter().map(|v| v * v).sum();
        let sq = (ry2 + 1.0).sqrt();
        let smooth = -2.0 / sq - 1.0 / (sq * sq * sq);
        s_y * ay * (4.0 * PI * rho * rho + smooth * 4.0 / 3.0 * PI * rho.powi(3))
    } else {
        0.0
    };
    let kernel_term = -(kernel_sum + correction) / (256.0 * PI * PI);

    let g_nq = -ay / (4.0 * PI);

    // sphere integrals with measure tau^-6 dx
    let dd_sum = grid_sum_parallel(grid, |x| {
        let m = h.value(x);
        let mag: f64 = m.iter().flatten().map(|v| v.abs()).sum();
        if mag < 1e-60 {
            return 0.0;
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let t6 = (0.5 * (r2 + 1.0)).powi(3);
        let w = green_north_laplacian(x) - 2.5 * green_north(x);
        w * round_double_divergence(h, x).expect("double divergence") / t6
    });
    let tr_sum = grid_sum_parallel(grid, |x| {
        let jets = h.jets(x, 0).expect("h values");
        let trh_flat: f64 = (0..3).map(|i| jets[sym_slot(i, i)].value()).sum();
        if trh_flat.abs() < 1e-60 {
            return 0.0;
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let t2 = 0.5 * (r2 + 1.0);
        let trh = t2 * t2 * trh_flat;
        let t6 = t2.powi(3);
        (green_north_laplacian(x) + (5.0 / 16.0) * green_north(x)) * trh / t6
    });
    let dd_term = -(g_nq / 8.0) * dd_sum;
    let trace_term = -(g_nq / 8.0) * tr_sum;

    // tr h at the north pole as the ray limit of tr theta
    let mut trn = 0.0;
    for d in crate::fields::audit_directions().into_iter().take(4) {
        let r = 5.0e3;
        let jets = theta.jets([r * d[0], r * d[1], r * d[2]], 0)?;
        let tr: f64 = (0..3).map(|i| jets[sym_slot(i, i)].value()).sum();
        trn += tr / 4.0;
    }
    let point_term = g_nq * trn / 8.0;

    Ok(OffDiagonalFirstVariation {
        kernel_term,
        dd_term,
        trace_term,
        point_term,
        total: kernel_term + dd_term + trace_term + point_term,
    })
}

// ---------------------------------------------------------------------------
// gauge solver
// ---------------------------------------------------------------------------

/// Quadratic-polynomial vector field: coefficients of y_p y_q per component.
#[derive(Clone, Debug, Default)]
pub struct QuadPolyVector {
    /// coeffs[a][m]: component a, monomial slot m (pairs in `SYM_INDEX` order)
    pub coeffs: [[f64; 6]; 3],
}

impl QuadPolyVector {
    pub fn eval(&self, y: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            for m in 0..6 {
                let (p, q) = SYM_INDEX[m];
                out[a] += self.coeffs[a][m] * y[p] * y[q];
            }
        }
        out
    }

    fn jet(&self, a: usize, v: &[Jet; 3]) -> Jet {
        let mut acc = Jet::zero(v[0].order());
        for m in 0..6 {
            let (p, q) = SYM_INDEX[m];
            acc = acc + (v[p] * v[q]).scale(self.coeffs[a][m]);
        }
        acc
    }

    /// d A_a / d y_b as a jet (polynomial derivative taken coefficient-wise).
    fn deriv_jet(&self, a: usize, b: usize, v: &[Jet; 3]) -> Jet {
        let mut acc = Jet::zero(v[0].order());
        for m in 0..6 {
            let (p, q) = SYM_INDEX[m];
            if p == b {
                acc = acc + v[q].scale(self.coeffs[a][m]);
            }
            if q == b {
                acc = acc + v[p].scale(self.coeffs[a][m]);
            }
        }
        acc
    }
}

/// Symmetric matrix of linear forms: entry slot s is sum_c h[s][c] y_c.
pub type LinearForms = [[f64; 3]; 6];

/// Coefficient of y_c in d_i (y_p y_q).
fn mono_deriv_coeff(i: usize, m: usize, c: usize) -> f64 {
    let (p, q) = SYM_INDEX[m];
    let mut v = 0.0;
    if i == p && c == q {
        v += 1.0;
    }
    if i == q && c == p {
        v += 1.0;
    }
    v
}

/// Solve d_i A_j + d_j A_i = H_ij for the unique quadratic-polynomial vector.
///
/// The 18 x 18 system is a bijection; a singular solve signals an
/// implementation bug rather than bad data.
pub fn gauge_linear_solve(hlin: &LinearForms) -> Result<QuadPolyVector> {
    let mut m = DMatrix::<f64>::zeros(18, 18);
    let mut rhs = DVector::<f64>::zeros(18);
    for s in 0..6 {
        let (i, j) = SYM_INDEX[s];
        for c in 0..3 {
            let row = 3 * s + c;
            rhs[row] = hlin[s][c];
            for mm in 0..6 {
                m[(row, 3 * j + 0)] += 0.0; // keep the column layout explicit
                let col_j = 6 * j + mm;
                let col_i = 6 * i + mm;
                m[(row, col_j)] += mono_deriv_coeff(i, mm, c);
                m[(row, col_i)] += mono_deriv_coeff(j, mm, c);
            }
        }
    }
    let lu = m.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("18x18 gauge system is singular".into()))?;
    let mut out = QuadPolyVector::default();
    for a in 0..3 {
        for mm in 0..6 {
            out.coeffs[a][mm] = sol[6 * a + mm];
        }
    }
    Ok(out)
}

/// Max coefficient residual of d_i A_j + d_j A_i - H_ij.
pub fn gauge_poly_residual(a: &QuadPolyVector, hlin: &LinearForms) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..6 {
        let (i, j) = SYM_INDEX[s];
        for c in 0..3 {
            let mut v = -hlin[s][c];
            for mm in 0..6 {
                v += a.coeffs[j][mm] * mono_deriv_coeff(i, mm, c)
                    + a.coeffs[i][mm] * mono_deriv_coeff(j, mm, c);
            }
            worst = worst.max(v.abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// gauge normalisation
// ---------------------------------------------------------------------------

// C^6 polynomial transition (regularised incomplete beta I_t(7, 7)); its
// derivatives stay O(1) across the window, which keeps the cutoff shell
// resolvable on the default grid.
const BETA77_INV: f64 = 12012.0;

fn step_poly(t: Jet) -> Jet {
    // P(t) = 12012 sum_k (-1)^k C(6,k) t^{7+k} / (7+k)
    let ord = t.order();
    let binom = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];
    let mut acc = Jet::zero(ord);
    let mut tp = t.powi(7);
    for (k, b) in binom.iter().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc = acc + tp.scale(sign * b / (7.0 + k as f64));
        tp = tp * t;
    }
    acc.scale(BETA77_INV)
}

/// Smooth transition 1 -> 0 over s in [1, 2], evaluated in jet arithmetic.
fn eta_jet(s: Jet) -> Jet {
    let ord = s.order();
    let sv = s.value();
    if sv <= 1.0 {
        Jet::constant(1.0, ord)
    } else if sv >= 2.0 {
        Jet::zero(ord)
    } else {
        Jet::constant(1.0, ord) - step_poly(s - Jet::constant(1.0, ord))
    }
}

/// d eta / d s as a jet (closed form on the transition interval).
fn eta_prime_jet(s: Jet) -> Jet {
    let ord = s.order();
    let sv = s.value();
    if !(1.0..2.0).contains(&sv) {
        return Jet::zero(ord);
    }
    let one = Jet::constant(1.0, ord);
    let t = s - one;
    let omt = one - t;
    (t.powi(6) * omt.powi(6)).scale(-BETA77_INV)
}

/// Default cutoff radius for the gauge vector field (south-chart units).
/// The transition shell maps to chart radii [1/(2 r0), 1/r0]; keeping it far
/// from the origin keeps the shell wide and resolvable on the default grids.
pub const DEFAULT_GAUGE_CUTOFF: f64 = 0.15;

/// Output of the gauge normalisation at the north pole.
pub struct GaugeSolution {
    /// the gauge vector field in chart coordinates (cut off near the pole image)
    pub x_field: VectorField,
    /// quadratic part of the associated one-form
    pub alpha2: QuadPolyVector,
    /// values of (h - L_X g) at the pole (south-chart components)
    pub residual_value: [f64; 6],
    /// first derivatives of (h - L_X g) at the pole
    pub residual_deriv: [[f64; 3]; 6],
    /// gauged perturbation in chart components
    pub gauged_h: SymTensorField,
    /// tau^4 (h - L_X g), decaying like |x|^-2
    pub gauged_theta: SymTensorField,
}

struct GaugeField {
    h0: [f64; 6],
    alpha2: QuadPolyVector,
    r0: f64,
}

impl GaugeField {
    /// The cut-off gauge vector X_a = eta(|y|/r0) tau^4 alpha_a as jets.
    fn x_at(&self, v: &[Jet; 3]) -> [Jet; 3] {
        let p = self.prepare(v);
        p.x
    }

    /// All six components of kappa = tau^4 L_X g at once; everything is
    /// rational in y, so no seed order is consumed.
    fn kappa_at(&self, v: &[Jet; 3]) -> [Jet; 6] {
        let p = self.prepare(v);
        let mut xd = Jet::zero(v[0].order());
        for k in 0..3 {
            xd = xd + p.x[k] * v[k];
        }
        // -4 tau^-1 (X tau) = -2 tau^-2 sum_k X_k y_k
        let diag = p.t2_inv * xd.scale(-2.0);
        let mut out = [Jet::zero(v[0].order()); 6];
        for slot in 0..6 {
            let (a, b) = SYM_INDEX[slot];
            out[slot] = p.dx[a][b] + p.dx[b][a];
            if a == b {
                out[slot] = out[slot] + diag;
            }
        }
        out
    }

    fn prepare(&self, v: &[Jet; 3]) -> GaugeAt {
        let ord = v[0].order();
        let one = Jet::constant(1.0, ord);
        let n2 = norm2(v);
        let t2 = (n2 + one).scale(0.5);
        let t2_inv = t2.recip();
        let t4 = t2 * t2;
        let mut alpha = [Jet::zero(ord); 3];
        let mut dalpha = [[Jet::zero(ord); 3]; 3];
        for a in 0..3 {
            let mut acc = Jet::zero(ord);
            for k in 0..3 {
                acc = acc + v[k].scale(0.5 * self.h0[sym_slot(a, k)]);
            }
            alpha[a] = acc + self.alpha2.jet(a, v);
            for b in 0..3 {
                dalpha[a][b] = Jet::constant(0.5 * self.h0[sym_slot(a, b)], ord)
                    + self.alpha2.deriv_jet(a, b, v);
            }
        }
        let inside = n2.value() <= self.r0 * self.r0;
        let (eta, deta) = if inside {
            (Jet::constant(1.0, ord), [Jet::zero(ord); 3])
        } else {
            let ss = n2.sqrt();
            let s = ss.scale(1.0 / self.r0);
            let e = eta_jet(s);
            let ep = eta_prime_jet(s) * ss.recip().scale(1.0 / self.r0);
            (e, [ep * v[0], ep * v[1], ep * v[2]])
        };
        let mut x = [Jet::zero(ord); 3];
        let mut dx = [[Jet::zero(ord); 3]; 3];
        for a in 0..3 {
            let xa_core = t4 * alpha[a];
            x[a] = eta * xa_core;
            for b in 0..3 {
                // d_b (tau^4 alpha_a) = 2 tau^2 y_b alpha_a + tau^4 d_b alpha_a
                let core = (t2 * v[b]).scale(2.0) * alpha[a] + t4 * dalpha[a][b];
                dx[a][b] = deta[b] * xa_core + eta * core;
            }
        }
        GaugeAt { t2_inv, x, dx }
    }
}

struct GaugeAt {
    t2_inv: Jet,
    x: [Jet; 3],
    dx: [[Jet; 3]; 3],
}

/// Gauge-normalise a smooth sphere tensor: find X with
/// (h - L_X g)(N) = 0 and D(h - L_X g)(N) = 0, cut off near the pole, and
/// return the gauged perturbation whose theta decays like |x|^-2.
pub fn gauge_normalize(tensor: &AmbientTensor, cutoff_radius: f64) -> Result<GaugeSolution> {
    let h_south = tensor.chart_south();
    let h_north = tensor.chart_north();

    // 1-jet of the south-chart components at the pole
    let jets0 = h_south.jets([0.0; 3], 1)?;
    let mut h0 = [0.0; 6];
    let mut h1 = [[0.0; 3]; 6];
    for s in 0..6 {
        h0[s] = jets0[s].value();
        h1[s] = jets0[s].grad();
    }

    // Christoffel values of the round metric vanish at the pole; keep the
    // coupling term anyway for transparency
    let rhs: LinearForms = {
        let g = crate::curvature::MetricField::round();
        let ctx = crate::curvature::MetricCtx::build(&g, [0.0; 3])?;
        let mut out = [[0.0; 3]; 6];
        for s in 0..6 {
            let (i, j) = SYM_INDEX[s];
            for c in 0..3 {
                let mut v = h1[s][c];
                for k in 0..3 {
                    v += ctx.gamma[k][i][j].value() * h0[sym_slot(k, c)];
                }
                out[s][c] = v;
            }
        }
        out
    };
    let alpha2 = gauge_linear_solve(&rhs)?;

    let gf = Arc::new(GaugeField { h0, alpha2: alpha2.clone(), r0: cutoff_radius });

    // residual jet at the pole: h - tau^-4 kappa
    let mut residual_value = [0.0; 6];
    let mut residual_deriv = [[0.0; 3]; 6];
    {
        let v = Jet::vars([0.0; 3], 2);
        let t4inv = crate::fields::tau_pow_jet(&v, -4.0);
        let kap = gf.kappa_at(&v);
        for s in 0..6 {
            let hj = h_south.comps()[s].jet_at(&v)?;
            let resid = hj - t4inv * kap[s];
            residual_value[s] = resid.value();
            residual_deriv[s] = resid.grad();
        }
    }

    // chart vector field: X^x_i = |x|^2 (delta - 2 xhat xhat)_ia X^y_a(x/|x|^2)
    let x_field = VectorField::new(std::array::from_fn(|i| {
        let gf = gf.clone();
        let support_r2 = 1.0 / (4.0 * cutoff_radius * cutoff_radius);
        ScalarField::analytic(
            move |v| {
                let ord = v[0].order();
                let n2 = norm2(v);
                if n2.value() <= support_r2 {
                    return Jet::zero(ord);
                }
                let y = crate::catalog::inversion_jets(v);
                let xy = gf.x_at(&y);
                let mut acc = Jet::zero(ord);
                for a in 0..3 {
                    // J_ia = |x|^2 delta_ia - 2 x_i x_a
                    let mut j_ia = (v[i] * v[a]).scale(-2.0);
                    if i == a {
                        j_ia = j_ia + n2;
                    }
                    acc = acc + j_ia * xy[a];
                }
                acc
            },
            Decay::Power(2.0),
        )
    }));

    // gauged h in the north chart: h - (L_X g) pulled back through inversion;
    // the six components share one evaluation through a per-thread cache
    let shared = Arc::new(GaugedEval {
        gf: gf.clone(),
        h_comps: h_north.comps().clone(),
        support_r2: 1.0 / (4.0 * cutoff_radius * cutoff_radius),
    });
    let gauged_h_comps: [ScalarField; 6] = std::array::from_fn(|s| {
        let shared = shared.clone();
        ScalarField::analytic(move |v| shared.component(s, v), Decay::Power(-6.0))
    });
    let gauged_h = SymTensorField::new(gauged_h_comps, Decay::Power(-6.0));
    let gauged_theta = crate::fields::pullback_theta(&gauged_h).with_decay(Decay::Power(-2.0));

    Ok(GaugeSolution { x_field, alpha2, residual_value, residual_deriv, gauged_h, gauged_theta })
}

struct GaugedEval {
    gf: Arc<GaugeField>,
    h_comps: [ScalarField; 6],
    support_r2: f64,
}

thread_local! {
    static GAUGED_CACHE: std::cell::RefCell<Option<(usize, [u64; 3], usize, [Jet; 6])>> =
        const { std::cell::RefCell::new(None) };
}

impl GaugedEval {
    fn component(&self, slot: usize, v: &[Jet; 3]) -> Jet {
        let id = std::sync::Arc::as_ptr(&self.gf) as usize;
        // caching is only valid for plain coordinate seeds
        if seed_like(v) {
            let key = [
                v[0].value().to_bits(),
                v[1].value().to_bits(),
                v[2].value().to_bits(),
            ];
            let ord = v[0].order();
            let hit = GAUGED_CACHE.with(|c| {
                c.borrow().as_ref().and_then(|(cid, ck, co, jets)| {
                    (*cid == id && *ck == key && *co == ord).then(|| jets[slot])
                })
            });
            if let Some(j) = hit {
                return j;
            }
            let all = self.all_components(v);
            GAUGED_CACHE.with(|c| *c.borrow_mut() = Some((id, key, ord, all)));
            all[slot]
        } else {
            self.all_components(v)[slot]
        }
    }

    fn all_components(&self, v: &[Jet; 3]) -> [Jet; 6] {
        let mut out = [Jet::zero(v[0].order()); 6];
        for (s, o) in out.iter_mut().enumerate() {
            *o = self.h_comps[s].jet_at(v).expect("north chart analytic");
        }
        let n2 = norm2(v);
        if n2.value() <= self.support_r2 {
            return out;
        }
        let y = crate::catalog::inversion_jets(v);
        // K_ca = d y_c / d x_a = (delta_ca |x|^2 - 2 x_c x_a) / |x|^4
        let inv_n4 = (n2 * n2).recip();
        let t4inv_y = crate::fields::tau_pow_jet(&y, -4.0);
        let kap = self.gf.kappa_at(&y);
        let kfac = |c: usize, a: usize| -> Jet {
            let mut k = (v[c] * v[a]).scale(-2.0);
            if c == a {
                k = k + n2;
            }
            k
        };
        for s in 0..6 {
            let (a, b) = SYM_INDEX[s];
            let mut acc = Jet::zero(v[0].order());
            for c in 0..3 {
                for d in 0..3 {
                    acc = acc + kap[sym_slot(c, d)] * kfac(c, a) * kfac(d, b);
                }
            }
            out[s] = out[s] - t4inv_y * acc * inv_n4 * inv_n4;
        }
        out
    }
}

/// True when the jets look like plain coordinate seeds at a point.
fn seed_like(v: &[Jet; 3]) -> bool {
    for i in 0..3 {
        if v[i].order() >= 1 {
            for j in 0..3 {
                let mut e = [0usize; 3];
                e[j] = 1;
                let expect = if i == j { 1.0 } else { 0.0 };
                if v[i].coeff(e) != expect {
                    return false;
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// transverse-traceless witnesses
// ---------------------------------------------------------------------------

/// Build kappa = tau^6 sigma with sigma a flat transverse-traceless field,
/// synthesised spectrally from a Gaussian seed profile.
pub fn tt_synthesize(grid: Grid3, amps: [f64; 6], width: f64) -> SymTensorField {
    let n = grid.n;
    let dx = grid.spacing();
    let dxi = 2.0 * PI / (n as f64 * dx);
    let x0 = -grid.radius;
    let scale = dxi.powi(3) / (2.0 * PI).powf(1.5);
    let mut spect: [Vec<num_complex::Complex<f64>>; 6] =
        std::array::from_fn(|_| vec![num_complex::Complex::new(0.0, 0.0); n * n * n]);
    let freq = |k: usize| -> f64 {
        let ks = if k <= n / 2 { k as isize } else { k as isize - n as isize };
        ks as f64 * dxi
    };
    for kz in 0..n {
        for ky in 0..n {
            for kx in 0..n {
                let xi = [freq(kx), freq(ky), freq(kz)];
                let xi2: f64 = xi.iter().map(|v| v * v).sum();
                let env = (-xi2 * width * width).exp();
                let mut m = [[0.0; 3]; 3];
                for s in 0..6 {
                    let (i, j) = SYM_INDEX[s];
                    m[i][j] = amps[s] * env;
                    m[j][i] = amps[s] * env;
                }
                // transverse-traceless projection
                let mut p = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        p[i][j] = (i == j) as usize as f64
                            - if xi2 > 0.0 { xi[i] * xi[j] / xi2 } else { 0.0 };
                    }
                }
                let mut pm = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            pm[i][j] += p[i][k] * m[k][j];
                        }
                    }
                }
                let mut pmp = [[0.0; 3]; 3];
                let mut tr_pm = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            pmp[i][j] += pm[i][k] * p[k][j];
                        }
                    }
                }
                for i in 0..3 {
                    tr_pm += pm[i][i];
                }
                let idx = kx + n * (ky + n * kz);
                let phase = num_complex::Complex::from_polar(
                    1.0,
                    (xi[0] + xi[1] + xi[2]) * x0,
                );
                for s in 0..6 {
                    let (i, j) = SYM_INDEX[s];
                    let mut v = pmp[i][j] - 0.5 * p[i][j] * tr_pm;
                    if xi2 == 0.0 {
                        // traceless deviatoric part at the zero mode
                        v = m[i][j] - if i == j { (m[0][0] + m[1][1] + m[2][2]) / 3.0 } else { 0.0 };
                    }
                    spect[s][idx] = phase * v;
                }
            }
        }
    }
    let comps: [ScalarField; 6] = std::array::from_fn(|s| {
        let mut data = spect[s].clone();
        crate::symbol::fft3(&mut data, n, true);
        let values: Vec<f64> = data.iter().map(|c| c.re * scale).collect();
        let sigma = ScalarField::from_grid(GridScalar { grid, data: values }, Decay::Rapid);
        crate::fields::scalar_times_tau_pow(&sigma, 6.0)
    });
    SymTensorField::new(comps, Decay::Unknown)
}

/// int theta_ij kappa_ij tau^-6 dx, the chart form of the sphere pairing
/// <h, k>; kappa must satisfy the transverse-traceless conditions
/// kappa_ii = 0 and div(tau^-6 kappa) = 0 to the given tolerance.
pub fn tt_orthogonality_residual(
    theta: &SymTensorField,
    kappa: &SymTensorField,
    grid: Grid3,
    precondition_tol: f64,
) -> Result<f64> {
    // precondition spot checks at interior nodes
    let n = grid.n;
    let probe: Vec<[f64; 3]> = (0..5)
        .flat_map(|i| {
            (0..2).map(move |j| {
                let ix = n / 4 + i * n / 12 + j;
                [grid.coord(ix), grid.coord(n / 3 + i), grid.coord(n / 2 - j)]
            })
        })
        .collect();
    let mut scale: f64 = 1e-30;
    for &x in &probe {
        let kv = kappa.value(x);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let t6 = (0.5 * (r2 + 1.0)).powi(3);
        for row in kv {
            for v in row {
                scale = scale.max((v / t6).abs());
            }
        }
    }
    for &x in &probe {
        let kv = kappa.value(x);
        let tr = kv[0][0] + kv[1][1] + kv[2][2];
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let t6 = (0.5 * (r2 + 1.0)).powi(3);
        if (tr / t6).abs() > precondition_tol * scale {
            return Err(Error::Precondition(format!(
                "kappa trace {tr:.3e} above tolerance at {x:?}"
            )));
        }
        // divergence of sigma = tau^-6 kappa via stencil jets
        let mut div_mag: f64 = 0.0;
        for i in 0..3 {
            let mut di = 0.0;
            for j in 0..3 {
                let sigma = crate::fields::scalar_times_tau_pow(kappa.comp(i, j), -6.0);
                let jet = sigma.jet(x, 1)?;
                let mut e = [0usize; 3];
                e[j] = 1;
                di += jet.partial_exp(e);
            }
            div_mag = div_mag.max(di.abs());
        }
        if div_mag > precondition_tol * scale * 10.0 {
            return Err(Error::Precondition(format!(
                "div(tau^-6 kappa) = {div_mag:.3e} above tolerance at {x:?}"
            )));
        }
    }

    Ok(grid_sum_parallel(grid, |x| {
        let tv = theta.value(x);
        let kv = kappa.value(x);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let t6 = (0.5 * (r2 + 1.0)).powi(3);
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += tv[i][j] * kv[i][j];
            }
        }
        s / t6
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{
        ambient_family, bump_family, gauge_family, gaussian_bump, gaussian_component_theta,
    };
    use crate::fields::{conformal_direction, decay_audit, pullback_theta};
    use approx::assert_relative_eq;

    fn test_grid() -> Grid3 {
        Grid3::new(64, 10.0).unwrap()
    }

    #[test]
    fn ii_zero_for_zero() {
        let v = ii_quadform(&SymTensorField::zero(), test_grid()).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn ii_conformal_direction_vanishes() {
        // theta from h = f g has II = 0 by integration by parts
        let f = gaussian_bump(1.0, [0.3, -0.2, 0.1], 1.0);
        let h = conformal_direction(&f);
        let theta = pullback_theta(&h);
        let v = ii_quadform(&theta, test_grid()).unwrap();
        assert!(v.value.abs() < 1e-10, "conformal ii = {}", v.value);
    }

    #[test]
    fn ii_gaussian_bump_matches_closed_form() {
        // theta_11 = exp(-r^2): II = -sqrt(2 pi) / (128 pi) analytically
        let theta = gaussian_component_theta(0, 0, 1.0, [0.0; 3], 1.0);
        let v = ii_quadform(&theta, test_grid()).unwrap();
        let expect = -(2.0 * PI).sqrt() * PI / (128.0 * PI * PI);
        assert_relative_eq!(v.value, expect, max_relative = 1e-9);
        assert!(v.value < -1e-3);
    }

    #[test]
    fn ii_bilinear_polarization() {
        let a = gaussian_component_theta(0, 0, 1.0, [0.0; 3], 1.0);
        let b = gaussian_component_theta(1, 2, 0.7, [0.4, 0.0, -0.2], 1.1);
        let grid = test_grid();
        let ab = ii_bilinear(&a, &b, grid).unwrap().value;
        let ba = ii_bilinear(&b, &a, grid).unwrap().value;
        assert_relative_eq!(ab, ba, max_relative = 1e-12, epsilon = 1e-15);
        let plus = ii_quadform(&a.add(&b), grid).unwrap().value;
        let minus = ii_quadform(&a.add(&b.scale(-1.0)), grid).unwrap().value;
        assert_relative_eq!(ab, 0.25 * (plus - minus), max_relative = 1e-10, epsilon = 1e-14);
        let aa = ii_bilinear(&a, &a, grid).unwrap().value;
        assert_relative_eq!(aa, ii_quadform(&a, grid).unwrap().value, max_relative = 1e-13);
    }

    #[test]
    fn ii_nonpositive_on_families() {
        let grid = test_grid();
        for p in bump_family().iter().chain(gauge_family().iter()) {
            let v = ii_quadform(&p.theta, grid).unwrap();
            let scale = theta_l2_norm2(&p.theta, grid).max(1.0);
            assert!(v.value <= 1e-8 * scale, "{}: ii = {} scale {}", p.name, v.value, scale);
        }
    }

    #[test]
    fn ii_gauge_directions_vanish() {
        let grid = test_grid();
        for p in gauge_family() {
            let v = ii_quadform(&p.theta, grid).unwrap();
            let scale = theta_l2_norm2(&p.theta, grid).max(1.0);
            assert!(
                v.value.abs() <= 1e-6 * scale,
                "{}: ii = {} scale {}",
                p.name,
                v.value,
                scale
            );
        }
    }

    #[test]
    fn route_equivalence_with_symbol_side() {
        let grid = test_grid();
        for p in bump_family() {
            let real = ii_quadform(&p.theta, grid).unwrap().value;
            let four = crate::symbol::parseval_ii(&p.theta, grid).unwrap();
            assert_relative_eq!(real, four, max_relative = 1e-6);
        }
    }

    #[test]
    fn assembled_routes_agree() {
        let grid = test_grid();
        for p in bump_family().into_iter().take(2) {
            let direct = ii_quadform(&p.theta, grid).unwrap().value;
            let asm = ii_assembled(&p.theta, grid).unwrap();
            assert_relative_eq!(direct, asm.total, max_relative = 1e-6, epsilon = 1e-12);
        }
    }

    #[test]
    fn flux_compact_support_is_zero() {
        let theta = gaussian_component_theta(0, 0, 1.0, [0.0; 3], 1.0);
        let rep = first_variation_pole(&theta, &[20.0, 30.0, 50.0, 80.0, 120.0]).unwrap();
        assert!(rep.limit.abs() < 1e-12, "limit {}", rep.limit);
        for f in &rep.fluxes {
            assert!(f.abs() < 1e-12);
        }
    }

    #[test]
    fn flux_identity_direction_is_zero() {
        // theta = delta has identically vanishing derivatives
        let comps: [ScalarField; 6] = std::array::from_fn(|s| {
            let (i, j) = SYM_INDEX[s];
            if i == j { ScalarField::constant(1.0) } else { ScalarField::zero() }
        });
        let theta = SymTensorField::new(comps, Decay::Power(0.0));
        let rep = first_variation_pole(&theta, &[20.0, 30.0, 50.0, 80.0]).unwrap();
        assert_eq!(rep.limit, 0.0);
    }

    #[test]
    fn flux_sphere_tensor_extrapolates_to_zero() {
        for (name, t) in ambient_family() {
            let theta = pullback_theta(&t.chart_north()).with_decay(Decay::Power(0.0));
            let rep =
                first_variation_pole(&theta, &[20.0, 30.0, 50.0, 80.0, 120.0, 200.0]).unwrap();
            let scale = c4_scale(&theta).max(1.0);
            assert!(
                rep.limit.abs() <= 1e-6 * scale,
                "{name}: limit {} fluxes {:?}",
                rep.limit,
                rep.fluxes
            );
        }
    }

    #[test]
    fn gauge_solver_examples() {
        // H = 0 has the zero solution
        let zero: LinearForms = [[0.0; 3]; 6];
        let a = gauge_linear_solve(&zero).unwrap();
        assert_eq!(gauge_poly_residual(&a, &zero), 0.0);
        for c in a.coeffs.iter().flatten() {
            assert_eq!(*c, 0.0);
        }

        // H_ij = delta_ij x1
        let mut hd: LinearForms = [[0.0; 3]; 6];
        hd[sym_slot(0, 0)][0] = 1.0;
        hd[sym_slot(1, 1)][0] = 1.0;
        hd[sym_slot(2, 2)][0] = 1.0;
        let a = gauge_linear_solve(&hd).unwrap();
        assert!(gauge_poly_residual(&a, &hd) < 1e-12);
    }

    #[test]
    fn gauge_solver_random_rhs() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        for _ in 0..100 {
            let mut hlin: LinearForms = [[0.0; 3]; 6];
            for s in hlin.iter_mut() {
                for c in s.iter_mut() {
                    *c = rng.random_range(-1.0..1.0);
                }
            }
            let a = gauge_linear_solve(&hlin).unwrap();
            assert!(gauge_poly_residual(&a, &hlin) < 1e-12);
        }
    }

    #[test]
    fn gauge_normalize_kills_jet() {
        for (name, t) in ambient_family() {
            let sol = gauge_normalize(&t, DEFAULT_GAUGE_CUTOFF).unwrap();
            for s in 0..6 {
                assert!(
                    sol.residual_value[s].abs() < 1e-10,
                    "{name} slot {s} value {}",
                    sol.residual_value[s]
                );
                for c in 0..3 {
                    assert!(
                        sol.residual_deriv[s][c].abs() < 1e-10,
                        "{name} slot {s} deriv {}",
                        sol.residual_deriv[s][c]
                    );
                }
            }
            // decay audit of the gauged theta at exponent -2
            let audit = decay_audit(sol.gauged_theta.comp(0, 0), 0.5).unwrap();
            assert!(audit.pass, "{name}: worst ratio {}", audit.worst_ratio);
        }
    }

    #[test]
    fn gauged_tt_tensor_strictly_negative() {
        // a transverse-traceless-content sphere tensor has II < 0, and its
        // gauged form pairs to zero with gauge directions
        let (_, t) = &crate::catalog::ambient_tt_family()[0];
        let sol = gauge_normalize(t, DEFAULT_GAUGE_CUTOFF).unwrap();
        let grid = test_grid();
        let gauged = ii_quadform(&sol.gauged_theta, grid).unwrap();
        let scale = theta_l2_norm2(&sol.gauged_theta, grid).max(1.0);
        let gauged_vs_gauge =
            ii_bilinear(&sol.gauged_theta, &gauge_family()[0].theta, grid).unwrap();
        assert!(gauged.value < -1e-3, "gauged ii {}", gauged.value);
        assert!(
            gauged_vs_gauge.value.abs() <= 1e-6 * scale,
            "bilinear {}",
            gauged_vs_gauge.value
        );
    }

    #[test]
    fn gauged_linear_mode_is_null() {
        // degree-one ambient weights are pure gauge: II vanishes after gauging
        let (_, t) = &ambient_family()[2];
        let sol = gauge_normalize(t, DEFAULT_GAUGE_CUTOFF).unwrap();
        let grid = test_grid();
        let gauged = ii_quadform(&sol.gauged_theta, grid).unwrap();
        let scale = theta_l2_norm2(&sol.gauged_theta, grid).max(1.0);
        assert!(
            gauged.value.abs() <= 1e-4 * scale,
            "linear-mode ii {} scale {scale}",
            gauged.value
        );
    }

    #[test]
    fn tt_pairing_vanishes() {
        let grid = Grid3::new(48, 9.0).unwrap();
        let kappa = tt_synthesize(grid, [0.8, -0.3, 0.2, 0.5, 0.1, -0.6], 0.7);
        // theta of the exact null form
        let theta = crate::symbol::null_symbol_synthesize(
            |xi| (-(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])).exp(),
            |xi| {
                let g = (-0.5 * (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])).exp();
                [xi[0] * g, xi[1] * g, xi[2] * g]
            },
            grid,
        )
        .unwrap();
        let r = tt_orthogonality_residual(&theta, &kappa, grid, 1e-3).unwrap();
        assert!(r.abs() < 1e-6, "tt pairing {r}");

        // zero kappa gives exactly zero
        let zk = SymTensorField::zero();
        let r0 = tt_orthogonality_residual(&theta, &zk, grid, 1e-3).unwrap();
        assert_eq!(r0, 0.0);
    }

    #[test]
    fn off_diagonal_routes_and_limits() {
        // compact theta, q outside the support
        let theta = gaussian_component_theta(0, 0, 1.0, [0.0; 3], 0.8);
        let h = crate::fields::pushforward_from_theta(&theta);
        let grid = Grid3::new(64, 8.0).unwrap();
        let yq = [5.0, 0.0, 0.0];
        let a = i_offdiagonal(&theta, &h, yq, grid, false).unwrap();
        let b = i_offdiagonal(&theta, &h, yq, grid, true).unwrap();
        assert_relative_eq!(a.total, b.total, max_relative = 1e-6, epsilon = 1e-12);

        // h = 0 gives zero
        let z = i_offdiagonal(
            &SymTensorField::zero(),
            &SymTensorField::zero(),
            yq,
            grid,
            true,
        )
        .unwrap();
        assert_eq!(z.total, 0.0);

        // q -> N along a ray: I(N, q, h) -> 0
        let mut prev = f64::INFINITY;
        for ry in [3.0, 6.0, 12.0] {
            let v = i_offdiagonal(&theta, &h, [ry, 0.0, 0.0], grid, true).unwrap();
            assert!(v.total.abs() < prev + 1e-12, "not shrinking at {ry}: {}", v.total);
            prev = v.total.abs();
        }
        assert!(prev < 2e-3, "tail value {prev}");
    }
}
