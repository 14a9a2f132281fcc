//! Frequency-side analysis of the second-variation quadratic form.
//!
//! The transform convention is unitary (symmetric (2pi)^{-3/2} factors), so
//! the discrete Parseval identity holds exactly between the lattice sums:
//! sum |theta|^2 dx^3 = sum |a|^2 dxi^3.  The quadratic integrand, its rotated
//! closed form and the null-symbol synthesis live here; the real-space route
//! is in [`crate::variation`] and the two must agree.

use crate::error::{Error, Result};
use crate::fields::{sym_slot, Decay, ScalarField, SymTensorField, SYM_INDEX};
use crate::grid::{Grid3, GridScalar};
use crate::quadrature::pairwise_sum;
use num_complex::Complex;
use rustfft::FftPlanner;

type C = Complex<f64>;

/// Complex symmetric 3x3 symbol at one frequency.
#[derive(Clone, Copy, Debug)]
pub struct SymbolMatrix {
    /// packed upper triangle, same slot order as tensors
    pub a: [C; 6],
    pub xi: [f64; 3],
}

impl SymbolMatrix {
    pub fn entry(&self, i: usize, j: usize) -> C {
        self.a[sym_slot(i, j)]
    }

    pub fn trace(&self) -> C {
        self.a[0] + self.a[3] + self.a[5]
    }

    pub fn frob_norm2(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.entry(i, j).norm_sqr();
            }
        }
        s
    }
}

/// Discrete unitary transform of the six components of a tensor field.
pub struct SpectralTheta {
    pub n: usize,
    /// spatial spacing
    pub dx: f64,
    /// frequency spacing 2 pi / (n dx)
    pub dxi: f64,
    pub comps: [Vec<C>; 6],
}

impl SpectralTheta {
    /// Signed frequency of an index along one axis.
    pub fn freq(&self, k: usize) -> f64 {
        let ks = if k <= self.n / 2 { k as isize } else { k as isize - self.n as isize };
        ks as f64 * self.dxi
    }

    pub fn index(&self, kx: usize, ky: usize, kz: usize) -> usize {
        kx + self.n * (ky + self.n * kz)
    }

    pub fn symbol(&self, kx: usize, ky: usize, kz: usize) -> SymbolMatrix {
        let idx = self.index(kx, ky, kz);
        SymbolMatrix {
            a: std::array::from_fn(|s| self.comps[s][idx]),
            xi: [self.freq(kx), self.freq(ky), self.freq(kz)],
        }
    }
}

/// In-place 3D FFT over a cubic lattice stored x1-fastest.
pub fn fft3(data: &mut [C], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    // axis 0: contiguous
    fft.process(data);
    // axes 1 and 2: gather strided lines
    let mut line = vec![C::new(0.0, 0.0); n];
    for axis in 1..3 {
        let stride = if axis == 1 { n } else { n * n };
        for outer in 0..n {
            for inner in 0..n {
                let base = if axis == 1 { inner + n * n * outer } else { inner + n * outer };
                for (k, l) in line.iter_mut().enumerate() {
                    *l = data[base + k * stride];
                }
                fft.process(&mut line);
                for (k, l) in line.iter().enumerate() {
                    data[base + k * stride] = *l;
                }
            }
        }
    }
}

/// Unitary discrete transform of each component on the grid lattice.
///
/// The periodisation error is controlled by the decay annotation: fields with
/// unknown decay are refused, and a power-law tail slower than |x|^-2 is not
/// square integrable.
pub fn theta_transform(theta: &SymTensorField, grid: Grid3) -> Result<SpectralTheta> {
    match theta.decay() {
        Decay::Unknown => {
            return Err(Error::NotSquareIntegrable("tensor carries no decay annotation".into()))
        }
        Decay::Power(a) if a > -2.0 => {
            return Err(Error::NotSquareIntegrable(format!(
                "decay exponent {a} is too slow for an L^2 transform"
            )))
        }
        _ => {}
    }
    let n = grid.n;
    let dx = grid.spacing();
    let dxi = 2.0 * std::f64::consts::PI / (n as f64 * dx);
    let scale = dx.powi(3) / (2.0 * std::f64::consts::PI).powf(1.5);
    let x0 = -grid.radius;
    let mut comps: [Vec<C>; 6] = std::array::from_fn(|_| Vec::new());
    for (slot, out) in comps.iter_mut().enumerate() {
        let (i, j) = SYM_INDEX[slot];
        let field = theta.comp(i, j);
        let mut data: Vec<C> = Vec::with_capacity(n * n * n);
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    data.push(C::new(field.eval(grid.point(ix, iy, iz)), 0.0));
                }
            }
        }
        fft3(&mut data, n, false);
        // phase for the lattice origin at -R per axis, then the unitary scale
        for kz in 0..n {
            let pz = C::from_polar(1.0, -st_freq(n, dxi, kz) * x0);
            for ky in 0..n {
                let py = C::from_polar(1.0, -st_freq(n, dxi, ky) * x0);
                for kx in 0..n {
                    let px = C::from_polar(1.0, -st_freq(n, dxi, kx) * x0);
                    let idx = kx + n * (ky + n * kz);
                    data[idx] *= px * py * pz * scale;
                }
            }
        }
        *out = data;
    }
    Ok(SpectralTheta { n, dx, dxi, comps })
}

fn st_freq(n: usize, dxi: f64, k: usize) -> f64 {
    let ks = if k <= n / 2 { k as isize } else { k as isize - n as isize };
    ks as f64 * dxi
}

/// The frequency-space quadratic integrand
/// -2|A xi|^2 |xi|^2 + 1/2 |xi^T A xi|^2 + Re(xi^T A xi conj(tr A)) |xi|^2
/// - 1/2 |tr A|^2 |xi|^4 + |A|^2 |xi|^4.
pub fn symbol_integrand(sym: &SymbolMatrix) -> f64 {
    let xi = sym.xi;
    let xi2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    if xi2 == 0.0 {
        return 0.0;
    }
    let mut axi = [C::new(0.0, 0.0); 3];
    for i in 0..3 {
        for j in 0..3 {
            axi[i] += sym.entry(i, j) * xi[j];
        }
    }
    let axi2: f64 = axi.iter().map(|c| c.norm_sqr()).sum();
    let q: C = axi[0] * xi[0] + axi[1] * xi[1] + axi[2] * xi[2];
    let tr = sym.trace();
    -2.0 * axi2 * xi2 + 0.5 * q.norm_sqr() + (q * tr.conj()).re * xi2
        - 0.5 * tr.norm_sqr() * xi2 * xi2
        + sym.frob_norm2() * xi2 * xi2
}

/// Householder-based orthogonal matrix with first column xi/|xi|.
fn rotation_to_axis(xi: [f64; 3]) -> [[f64; 3]; 3] {
    let norm = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
    let u = [xi[0] / norm, xi[1] / norm, xi[2] / norm];
    let s = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = u;
    v[0] += s;
    let vv: f64 = v.iter().map(|a| a * a).sum();
    // H = I - 2 v v^T / (v^T v) maps u to -s e1; O = H * diag(-s, 1, 1)
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let hij = (i == j) as usize as f64 - 2.0 * v[i] * v[j] / vv;
            o[i][j] = if j == 0 { -s * hij } else { hij };
        }
    }
    o
}

/// Closed form of the integrand after rotating xi onto the first axis:
/// (1/2 |b22 - b33|^2 + 2 |b23|^2) |xi|^4 with B = O^T A O.
pub fn rotated_symbol_value(sym: &SymbolMatrix) -> f64 {
    let xi = sym.xi;
    let xi2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    if xi2 == 0.0 {
        return 0.0;
    }
    let o = rotation_to_axis(xi);
    let mut b = [[C::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = C::new(0.0, 0.0);
            for p in 0..3 {
                for q in 0..3 {
                    acc += sym.entry(p, q) * o[p][i] * o[q][j];
                }
            }
            b[i][j] = acc;
        }
    }
    (0.5 * (b[1][1] - b[2][2]).norm_sqr() + 2.0 * b[1][2].norm_sqr()) * xi2 * xi2
}

/// Distance (Frobenius) of A from the null subspace
/// {alpha delta + beta xi^T + xi beta^T} at its frequency.
pub fn null_subspace_distance(sym: &SymbolMatrix) -> f64 {
    let xi = sym.xi;
    // basis of the subspace as packed symmetric complex matrices
    let mut basis: Vec<[C; 6]> = Vec::with_capacity(4);
    let mut id = [C::new(0.0, 0.0); 6];
    id[0] = C::new(1.0, 0.0);
    id[3] = C::new(1.0, 0.0);
    id[5] = C::new(1.0, 0.0);
    basis.push(id);
    for m in 0..3 {
        let mut bm = [C::new(0.0, 0.0); 6];
        for slot in 0..6 {
            let (i, j) = SYM_INDEX[slot];
            let mut v = 0.0;
            if i == m {
                v += xi[j];
            }
            if j == m {
                v += xi[i];
            }
            bm[slot] = C::new(v, 0.0);
        }
        basis.push(bm);
    }
    // Frobenius inner product, counting off-diagonal slots twice
    let weight = |slot: usize| -> f64 {
        let (i, j) = SYM_INDEX[slot];
        if i == j { 1.0 } else { 2.0 }
    };
    let inner = |x: &[C; 6], y: &[C; 6]| -> C {
        let mut s = C::new(0.0, 0.0);
        for slot in 0..6 {
            s += x[slot] * y[slot].conj() * weight(slot);
        }
        s
    };
    // Gram solve for the projection coefficients
    let nb = basis.len();
    let mut gram = nalgebra::DMatrix::<C>::zeros(nb, nb);
    let mut rhs = nalgebra::DVector::<C>::zeros(nb);
    for p in 0..nb {
        for q in 0..nb {
            gram[(p, q)] = inner(&basis[q], &basis[p]);
        }
        rhs[p] = inner(&sym.a, &basis[p]);
    }
    let coef = gram.lu().solve(&rhs);
    let coef = match coef {
        Some(c) => c,
        None => return f64::NAN,
    };
    let mut resid = sym.a;
    for p in 0..nb {
        for slot in 0..6 {
            resid[slot] -= coef[p] * basis[p][slot];
        }
    }
    let mut d2 = 0.0;
    for slot in 0..6 {
        d2 += resid[slot].norm_sqr() * weight(slot);
    }
    d2.sqrt()
}

/// Second variation through the Parseval route:
/// II = -(1/128 pi^2) sum over frequencies of the integrand.
pub fn parseval_ii(theta: &SymTensorField, grid: Grid3) -> Result<f64> {
    let st = theta_transform(theta, grid)?;
    Ok(parseval_ii_spectral(&st))
}

/// Same, from an already-built transform.
pub fn parseval_ii_spectral(st: &SpectralTheta) -> f64 {
    let n = st.n;
    let mut slabs = Vec::with_capacity(n);
    for kz in 0..n {
        let mut vals = Vec::with_capacity(n * n);
        for ky in 0..n {
            for kx in 0..n {
                vals.push(symbol_integrand(&st.symbol(kx, ky, kz)));
            }
        }
        slabs.push(pairwise_sum(&vals));
    }
    let total = pairwise_sum(&slabs) * st.dxi.powi(3);
    -total / (128.0 * std::f64::consts::PI * std::f64::consts::PI)
}

/// Largest conjugate-symmetry violation |a(-xi) - conj a(xi)| over the lattice.
pub fn conjugate_symmetry_residual(st: &SpectralTheta) -> f64 {
    let n = st.n;
    let mut worst: f64 = 0.0;
    for kz in 0..n {
        for ky in 0..n {
            for kx in 0..n {
                let mk = |k: usize| (n - k) % n;
                let a = st.symbol(kx, ky, kz);
                let b = st.symbol(mk(kx), mk(ky), mk(kz));
                for slot in 0..6 {
                    worst = worst.max((b.a[slot] - a.a[slot].conj()).norm());
                }
            }
        }
    }
    worst
}

/// Synthesise a real tensor field whose transform has the null form
/// a_ij = alpha delta_ij + beta_i xi_j + beta_j xi_i.
///
/// `alpha` must be even and `beta` odd in xi so the result is real; this is
/// checked on sample frequencies.
pub fn null_symbol_synthesize(
    alpha: impl Fn([f64; 3]) -> f64,
    beta: impl Fn([f64; 3]) -> [f64; 3],
    grid: Grid3,
) -> Result<SymTensorField> {
    let n = grid.n;
    let dx = grid.spacing();
    let dxi = 2.0 * std::f64::consts::PI / (n as f64 * dx);
    // symmetry checks
    for xi in [[dxi, 0.0, 0.0], [dxi, -2.0 * dxi, 3.0 * dxi], [0.0, dxi, dxi]] {
        let neg = [-xi[0], -xi[1], -xi[2]];
        if (alpha(xi) - alpha(neg)).abs() > 1e-12 * (1.0 + alpha(xi).abs()) {
            return Err(Error::Precondition("alpha profile must be even in xi".into()));
        }
        let b = beta(xi);
        let bn = beta(neg);
        for i in 0..3 {
            if (b[i] + bn[i]).abs() > 1e-12 * (1.0 + b[i].abs()) {
                return Err(Error::Precondition("beta profile must be odd in xi".into()));
            }
        }
    }

    let x0 = -grid.radius;
    let scale = dxi.powi(3) * (n as f64).powi(0) / (2.0 * std::f64::consts::PI).powf(1.5);
    let mut comps: [ScalarField; 6] = std::array::from_fn(|_| ScalarField::zero());
    for slot in 0..6 {
        let (i, j) = SYM_INDEX[slot];
        let mut data: Vec<C> = Vec::with_capacity(n * n * n);
        for kz in 0..n {
            let zf = st_freq(n, dxi, kz);
            for ky in 0..n {
                let yf = st_freq(n, dxi, ky);
                for kx in 0..n {
                    let xf = st_freq(n, dxi, kx);
                    let xi = [xf, yf, zf];
                    let b = beta(xi);
                    let mut v = b[i] * xi[j] + b[j] * xi[i];
                    if i == j {
                        v += alpha(xi);
                    }
                    // phase so that the inverse lattice transform lands on
                    // points x0 + k dx
                    let phase = C::from_polar(1.0, (xf + yf + zf) * x0);
                    data.push(phase * v);
                }
            }
        }
        fft3(&mut data, n, true);
        let values: Vec<f64> = data.iter().map(|c| c.re * scale).collect();
        let max_im = data.iter().map(|c| (c.im * scale).abs()).fold(0.0f64, f64::max);
        if max_im > 1e-10 {
            return Err(Error::Precondition(format!(
                "profiles produced a complex field (max imaginary {max_im:.3e})"
            )));
        }
        comps[slot] = ScalarField::from_grid(
            GridScalar { grid, data: values },
            Decay::Rapid,
        );
    }
    Ok(SymTensorField::new(comps, Decay::Rapid))
}

/// Write one component of a transform as a pair of frequency-domain dumps.
pub fn write_spectral_component(
    st: &SpectralTheta,
    slot: usize,
    grid: Grid3,
    re_path: &std::path::Path,
    im_path: &std::path::Path,
) -> Result<()> {
    let re: Vec<f64> = st.comps[slot].iter().map(|c| c.re).collect();
    let im: Vec<f64> = st.comps[slot].iter().map(|c| c.im).collect();
    crate::grid::write_grid_f64(re_path, crate::grid::MAGIC_FREQUENCY, grid, &re)?;
    crate::grid::write_grid_f64(im_path, crate::grid::MAGIC_FREQUENCY, grid, &im)
}

/// Random complex symmetric symbol for property trials.
pub fn random_symbol(rng: &mut impl rand::Rng) -> SymbolMatrix {
    let mut a = [C::new(0.0, 0.0); 6];
    for v in &mut a {
        *v = C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    let xi = [
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    ];
    SymbolMatrix { a, xi }
}

/// A symbol of the exact null form at its frequency.
pub fn null_form_symbol(rng: &mut impl rand::Rng) -> SymbolMatrix {
    let xi = [
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    ];
    let alpha = C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let beta: [C; 3] = std::array::from_fn(|_| {
        C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let mut a = [C::new(0.0, 0.0); 6];
    for slot in 0..6 {
        let (i, j) = SYM_INDEX[slot];
        a[slot] = beta[i] * xi[j] + beta[j] * xi[i];
        if i == j {
            a[slot] += alpha;
        }
    }
    SymbolMatrix { a, xi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::gaussian_component_theta;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn integrand_worked_examples() {
        // A = I, xi = e1: the pure-trace null direction
        let mut a = [C::new(0.0, 0.0); 6];
        a[0] = C::new(1.0, 0.0);
        a[3] = C::new(1.0, 0.0);
        a[5] = C::new(1.0, 0.0);
        let s = SymbolMatrix { a, xi: [1.0, 0.0, 0.0] };
        assert_relative_eq!(symbol_integrand(&s), 0.0, epsilon = 1e-14);

        // A = diag(0, 1, -1), xi = e1: value 2
        let mut a = [C::new(0.0, 0.0); 6];
        a[3] = C::new(1.0, 0.0);
        a[5] = C::new(-1.0, 0.0);
        let s = SymbolMatrix { a, xi: [1.0, 0.0, 0.0] };
        assert_relative_eq!(symbol_integrand(&s), 2.0, epsilon = 1e-14);
        assert_relative_eq!(rotated_symbol_value(&s), 2.0, epsilon = 1e-14);

        // a_23 = 1 only, xi = e1: 2 |b23|^2 = 2
        let mut a = [C::new(0.0, 0.0); 6];
        a[4] = C::new(1.0, 0.0);
        let s = SymbolMatrix { a, xi: [1.0, 0.0, 0.0] };
        assert_relative_eq!(symbol_integrand(&s), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn rotation_identity_random_trials() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20_000 {
            let s = random_symbol(&mut rng);
            let a = symbol_integrand(&s);
            let b = rotated_symbol_value(&s);
            let scale = 1.0 + s.frob_norm2() * (s.xi.iter().map(|v| v * v).sum::<f64>()).powi(2);
            assert!((a - b).abs() <= 1e-12 * scale, "a {a} b {b}");
            assert!(a >= -1e-12 * scale, "negative integrand {a}");
        }
    }

    #[test]
    fn null_form_is_null_and_detected() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = null_form_symbol(&mut rng);
            let scale = 1.0 + s.frob_norm2() * (s.xi.iter().map(|v| v * v).sum::<f64>()).powi(2);
            assert!(symbol_integrand(&s).abs() <= 1e-12 * scale);
            assert!(null_subspace_distance(&s) <= 1e-10);
            // integrand = |xi|^4 dist^2 exactly
            let g = random_symbol(&mut rng);
            let xi2: f64 = g.xi.iter().map(|v| v * v).sum();
            let d = null_subspace_distance(&g);
            assert_relative_eq!(
                symbol_integrand(&g),
                xi2 * xi2 * d * d,
                max_relative = 1e-9,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn gaussian_transform_closed_form() {
        // theta_11 = exp(-r^2): unitary transform is exp(-xi^2/4) / (2 sqrt 2)
        let grid = Grid3::new(64, 10.0).unwrap();
        let th = gaussian_component_theta(0, 0, 1.0, [0.0; 3], 1.0);
        let st = theta_transform(&th, grid).unwrap();
        for k in [0usize, 3, 7, 12] {
            let s = st.symbol(k, 0, 0);
            let xi2: f64 = s.xi.iter().map(|v| v * v).sum();
            let expect = (-xi2 / 4.0).exp() / (2.0 * 2.0f64.sqrt());
            assert_relative_eq!(s.entry(0, 0).re, expect, epsilon = 1e-8);
            assert!(s.entry(0, 0).im.abs() < 1e-10);
        }
        assert!(conjugate_symmetry_residual(&st) < 1e-12);
    }

    #[test]
    fn discrete_parseval_exact() {
        let grid = Grid3::new(32, 8.0).unwrap();
        let th = gaussian_component_theta(0, 1, 0.7, [0.4, -0.2, 0.1], 1.1);
        let st = theta_transform(&th, grid).unwrap();
        // lattice sums on both sides
        let n = grid.n;
        let mut space = 0.0;
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    let v = th.comp(0, 1).eval(grid.point(ix, iy, iz));
                    space += 2.0 * v * v; // both off-diagonal slots
                }
            }
        }
        space *= grid.spacing().powi(3);
        let mut freq = 0.0;
        for c in &st.comps[1] {
            freq += 2.0 * c.norm_sqr();
        }
        freq *= st.dxi.powi(3);
        assert_relative_eq!(space, freq, max_relative = 1e-12);
    }

    #[test]
    fn synthesis_null_fields_have_zero_ii() {
        let grid = Grid3::new(32, 8.0).unwrap();
        // alpha Gaussian, beta = 0
        let th = null_symbol_synthesize(
            |xi| (-(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])).exp(),
            |_| [0.0; 3],
            grid,
        )
        .unwrap();
        let v = parseval_ii(&th, grid).unwrap();
        assert!(v.abs() < 1e-12, "alpha synthesis ii = {v}");

        // alpha = 0, beta_i = xi_i Gaussian
        let th = null_symbol_synthesize(
            |_| 0.0,
            |xi| {
                let g = (-(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])).exp();
                [xi[0] * g, xi[1] * g, xi[2] * g]
            },
            grid,
        )
        .unwrap();
        let v = parseval_ii(&th, grid).unwrap();
        assert!(v.abs() < 1e-12, "beta synthesis ii = {v}");
    }

    #[test]
    fn transform_refuses_slow_decay() {
        let th = gaussian_component_theta(0, 0, 1.0, [0.0; 3], 1.0)
            .with_decay(crate::fields::Decay::Power(-1.0));
        assert!(matches!(
            theta_transform(&th, Grid3::new(16, 4.0).unwrap()),
            Err(Error::NotSquareIntegrable(_))
        ));
    }
}
