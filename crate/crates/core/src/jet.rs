//! Truncated Taylor arithmetic in three variables.
//!
//! A [`Jet`] stores the Taylor coefficients of a smooth function at a chart
//! point up to total degree four, which is exactly the derivative depth the
//! fourth-order operators in this crate consume.  Arithmetic on jets is
//! forward-mode differentiation: closed-form fields built from jets supply
//! machine-accurate mixed partials without any nested stencils.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

/// Highest total derivative order carried by a jet.
pub const MAX_ORDER: usize = 4;
/// Number of monomials x^a y^b z^c with a+b+c <= 4.
pub const N_COEFFS: usize = 35;

struct Tables {
    /// exponent triple of each coefficient slot, degree-major then lex
    exps: [[u8; 3]; N_COEFFS],
    /// slot of a given exponent triple
    idx: [[[u16; MAX_ORDER + 1]; MAX_ORDER + 1]; MAX_ORDER + 1],
    /// slot range [deg_start[d], deg_start[d+1]) holds the degree-d slots
    deg_start: [usize; MAX_ORDER + 2],
    /// product table entries (dst, a, b), grouped by dst degree
    mul: Vec<(u16, u16, u16)>,
    /// prefix of `mul` covering dst degrees <= d
    mul_end: [usize; MAX_ORDER + 1],
    /// alpha! for each slot
    dfac: [f64; N_COEFFS],
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let mut exps = [[0u8; 3]; N_COEFFS];
        let mut idx = [[[u16::MAX; MAX_ORDER + 1]; MAX_ORDER + 1]; MAX_ORDER + 1];
        let mut deg_start = [0usize; MAX_ORDER + 2];
        let mut k = 0usize;
        for d in 0..=MAX_ORDER {
            deg_start[d] = k;
            for a in (0..=d).rev() {
                for b in (0..=d - a).rev() {
                    let c = d - a - b;
                    exps[k] = [a as u8, b as u8, c as u8];
                    idx[a][b][c] = k as u16;
                    k += 1;
                }
            }
        }
        deg_start[MAX_ORDER + 1] = k;
        debug_assert_eq!(k, N_COEFFS);

        let mut mul = Vec::new();
        let mut mul_end = [0usize; MAX_ORDER + 1];
        for d in 0..=MAX_ORDER {
            for dst in deg_start[d]..deg_start[d + 1] {
                let e = exps[dst];
                // all splits e = f + g
                for fa in 0..=e[0] {
                    for fb in 0..=e[1] {
                        for fc in 0..=e[2] {
                            let a = idx[fa as usize][fb as usize][fc as usize];
                            let b = idx[(e[0] - fa) as usize][(e[1] - fb) as usize]
                                [(e[2] - fc) as usize];
                            mul.push((dst as u16, a, b));
                        }
                    }
                }
            }
            mul_end[d] = mul.len();
        }

        let mut dfac = [1.0f64; N_COEFFS];
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
        for k in 0..N_COEFFS {
            let e = exps[k];
            dfac[k] = fact[e[0] as usize] * fact[e[1] as usize] * fact[e[2] as usize];
        }

        Tables { exps, idx, deg_start, mul, mul_end, dfac }
    })
}

/// Taylor coefficients of a function at a point, valid through total degree `ord`.
///
/// Coefficients are stored as c_alpha = d^alpha f / alpha!; slots above `ord`
/// are kept at zero so products can run over fixed prefixes.
#[derive(Clone, Copy)]
pub struct Jet {
    c: [f64; N_COEFFS],
    ord: u8,
}

impl Jet {
    pub fn zero(ord: usize) -> Self {
        Jet { c: [0.0; N_COEFFS], ord: ord.min(MAX_ORDER) as u8 }
    }

    pub fn constant(v: f64, ord: usize) -> Self {
        let mut j = Self::zero(ord);
        j.c[0] = v;
        j
    }

    /// Coordinate seed jets at a chart point.
    pub fn vars(x: [f64; 3], ord: usize) -> [Jet; 3] {
        let t = tables();
        let mut out = [Self::zero(ord); 3];
        for i in 0..3 {
            out[i].c[0] = x[i];
            if ord >= 1 {
                let mut e = [0usize; 3];
                e[i] = 1;
                out[i].c[t.idx[e[0]][e[1]][e[2]] as usize] = 1.0;
            }
        }
        out
    }

    pub fn order(&self) -> usize {
        self.ord as usize
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Raw Taylor coefficient for the exponent triple.
    pub fn coeff(&self, e: [usize; 3]) -> f64 {
        let t = tables();
        self.c[t.idx[e[0]][e[1]][e[2]] as usize]
    }

    /// Mixed partial d^alpha f for an exponent triple (not a repeated-axis list).
    pub fn partial_exp(&self, e: [usize; 3]) -> f64 {
        let t = tables();
        let k = t.idx[e[0]][e[1]][e[2]] as usize;
        self.c[k] * t.dfac[k]
    }

    /// Mixed partial for a repeated-axis list, e.g. `[0, 0, 1]` is d_x d_x d_y.
    pub fn partial(&self, axes: &[usize]) -> f64 {
        let mut e = [0usize; 3];
        for &a in axes {
            e[a] += 1;
        }
        self.partial_exp(e)
    }

    pub fn grad(&self) -> [f64; 3] {
        [self.partial_exp([1, 0, 0]), self.partial_exp([0, 1, 0]), self.partial_exp([0, 0, 1])]
    }

    pub fn hess(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut e = [0usize; 3];
                e[i] += 1;
                e[j] += 1;
                m[i][j] = self.partial_exp(e);
            }
        }
        m
    }

    /// Flat Laplacian value.
    pub fn lap(&self) -> f64 {
        self.partial_exp([2, 0, 0]) + self.partial_exp([0, 2, 0]) + self.partial_exp([0, 0, 2])
    }

    /// Jet of the partial derivative along `axis`; drops one order.
    pub fn deriv(&self, axis: usize) -> Jet {
        let t = tables();
        debug_assert!(self.ord >= 1, "jet has no derivative order left");
        let ord = self.ord as usize - 1;
        let mut out = Jet::zero(ord);
        for k in t.deg_start[0]..t.deg_start[ord + 1] {
            let mut e = t.exps[k].map(|v| v as usize);
            e[axis] += 1;
            let src = t.idx[e[0]][e[1]][e[2]] as usize;
            out.c[k] = self.c[src] * e[axis] as f64;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut out = *self;
        for c in &mut out.c {
            *c *= s;
        }
        out
    }

    fn truncate(mut self, ord: usize) -> Jet {
        let t = tables();
        if ord < self.ord as usize {
            for k in t.deg_start[ord + 1]..N_COEFFS {
                self.c[k] = 0.0;
            }
            self.ord = ord as u8;
        }
        self
    }

    /// Composition with a univariate series: sum_k c[k] (self - self0)^k.
    fn compose(&self, series: &[f64; MAX_ORDER + 1]) -> Jet {
        let ord = self.ord as usize;
        let mut du = *self;
        du.c[0] = 0.0;
        let mut out = Jet::constant(series[0], ord);
        let mut p = Jet::constant(1.0, ord);
        for item in series.iter().take(ord + 1).skip(1) {
            p = p * du;
            out = out + p.scale(*item);
        }
        out
    }

    /// Reciprocal; the value must be nonzero.
    pub fn recip(&self) -> Jet {
        let u = self.c[0];
        assert!(u != 0.0, "jet reciprocal at zero value");
        let iu = 1.0 / u;
        let mut s = [0.0; MAX_ORDER + 1];
        let mut p = iu;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk = if k % 2 == 0 { p } else { -p };
            p *= iu;
        }
        self.compose(&s)
    }

    /// Square root; the value must be positive.
    pub fn sqrt(&self) -> Jet {
        let u = self.c[0];
        assert!(u > 0.0, "jet sqrt of non-positive value");
        self.powf(0.5)
    }

    pub fn exp(&self) -> Jet {
        let e = self.c[0].exp();
        let s = [e, e, e / 2.0, e / 6.0, e / 24.0];
        self.compose(&s)
    }

    /// Real power; the value must be positive.
    pub fn powf(&self, p: f64) -> Jet {
        let u = self.c[0];
        assert!(u > 0.0, "jet powf of non-positive value");
        let mut s = [0.0; MAX_ORDER + 1];
        let mut coef = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk = coef * u.powf(p - k as f64);
            coef *= (p - k as f64) / (k as f64 + 1.0);
        }
        self.compose(&s)
    }

    pub fn powi(&self, n: u32) -> Jet {
        let mut out = Jet::constant(1.0, self.ord as usize);
        for _ in 0..n {
            out = out * *self;
        }
        out
    }

    /// Restrict validity to `ord` derivative orders (used by grid-backed fields).
    pub fn with_order(self, ord: usize) -> Jet {
        self.truncate(ord)
    }

    /// Build a jet from raw mixed partials d^alpha f indexed by exponent triple.
    pub fn from_partials(ord: usize, get: impl Fn([usize; 3]) -> f64) -> Jet {
        let t = tables();
        let mut out = Jet::zero(ord);
        for k in t.deg_start[0]..t.deg_start[ord + 1] {
            let e = t.exps[k].map(|v| v as usize);
            out.c[k] = get(e) / t.dfac[k];
        }
        out
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        let ord = self.ord.min(rhs.ord) as usize;
        let mut out = Jet::zero(ord);
        let end = tables().deg_start[ord + 1];
        for k in 0..end {
            out.c[k] = self.c[k] + rhs.c[k];
        }
        out
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        let ord = self.ord.min(rhs.ord) as usize;
        let mut out = Jet::zero(ord);
        let end = tables().deg_start[ord + 1];
        for k in 0..end {
            out.c[k] = self.c[k] - rhs.c[k];
        }
        out
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let t = tables();
        let ord = self.ord.min(rhs.ord) as usize;
        let end = t.deg_start[ord + 1];
        // skip the convolution when an operand is identically zero
        if self.c[..end].iter().all(|&v| v == 0.0) || rhs.c[..end].iter().all(|&v| v == 0.0) {
            return Jet::zero(ord);
        }
        let mut out = Jet::zero(ord);
        for &(dst, a, b) in &t.mul[..t.mul_end[ord]] {
            out.c[dst as usize] += self.c[a as usize] * rhs.c[b as usize];
        }
        out
    }
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Jet(ord={}, v={:.6e}, grad={:?})", self.ord, self.value(), self.grad())
    }
}

/// Dot product of coordinate jets, |x|^2 as a jet.
pub fn norm2(v: &[Jet; 3]) -> Jet {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn poly(x: &[Jet; 3]) -> Jet {
        // f = x^2 y + 3 x y z^2 - z^4 + 7
        x[0] * x[0] * x[1] + (x[0] * x[1] * x[2] * x[2]).scale(3.0) - x[2].powi(4)
            + Jet::constant(7.0, x[0].order())
    }

    #[test]
    fn polynomial_partials_are_exact() {
        let v = Jet::vars([1.5, -0.7, 2.0], MAX_ORDER);
        let j = poly(&v);
        let (x, y, z) = (1.5f64, -0.7f64, 2.0f64);
        assert_relative_eq!(j.value(), x * x * y + 3.0 * x * y * z * z - z.powi(4) + 7.0);
        assert_relative_eq!(j.partial(&[0]), 2.0 * x * y + 3.0 * y * z * z);
        assert_relative_eq!(j.partial(&[0, 1]), 2.0 * x + 3.0 * z * z);
        assert_relative_eq!(j.partial(&[2, 2, 2]), -24.0 * z);
        assert_relative_eq!(j.partial(&[0, 1, 2, 2]), 6.0);
        // order of differentiation is irrelevant
        assert_relative_eq!(j.partial(&[2, 1, 0, 2]), j.partial(&[0, 1, 2, 2]));
    }

    #[test]
    fn gaussian_hessian_matches_closed_form() {
        let v = Jet::vars([0.0, 0.0, 0.0], 2);
        let j = (-norm2(&v)).exp();
        assert_relative_eq!(j.partial(&[0, 0]), -2.0, epsilon = 1e-14);
        assert_relative_eq!(j.partial(&[0, 1]), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn recip_sqrt_roundtrip() {
        let v = Jet::vars([0.3, -1.2, 0.9], MAX_ORDER);
        let u = norm2(&v) + Jet::constant(1.0, MAX_ORDER);
        let r = u.sqrt() * u.sqrt() - u;
        for e in 0..N_COEFFS {
            assert!(r.c[e].abs() < 1e-12);
        }
        let one = u * u.recip();
        assert_relative_eq!(one.value(), 1.0, epsilon = 1e-14);
        assert!(one.c[4].abs() < 1e-13);
    }

    #[test]
    fn deriv_consistency() {
        let v = Jet::vars([0.4, 0.2, -0.6], MAX_ORDER);
        let j = (-norm2(&v)).exp();
        let dj = j.deriv(0);
        assert_relative_eq!(dj.value(), j.partial(&[0]), epsilon = 1e-14);
        assert_relative_eq!(dj.partial(&[1, 2]), j.partial(&[0, 1, 2]), epsilon = 1e-13);
        assert_eq!(dj.order(), MAX_ORDER - 1);
    }
}
