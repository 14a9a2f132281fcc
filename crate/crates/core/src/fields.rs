//! Scalar, vector and symmetric-tensor fields on the stereographic chart.
//!
//! Analytic fields are closures over coordinate jets, so every mixed partial
//! up to order four comes out in closed form; grid fields fall back to the
//! central stencils in [`crate::grid`].  The geometric constructions here are
//! the flat-chart ones used throughout the variation formulas: the conformal
//! factor tau, the pullback theta = tau^4 h, Lie derivatives of the round
//! metric and pure-trace (conformal) directions.

use crate::error::{Error, Result};
use crate::grid::GridScalar;
use crate::jet::{norm2, Jet, MAX_ORDER};
use std::sync::Arc;

/// Decay class annotation: f = O^(inf)(|x|^a).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decay {
    /// Power law with the given exponent.
    Power(f64),
    /// Faster than any power (Gaussian-type tails).
    Rapid,
    /// No annotation; excluded from improper integrals.
    Unknown,
}

impl Decay {
    pub fn exponent(&self) -> Option<f64> {
        match self {
            Decay::Power(a) => Some(*a),
            Decay::Rapid => Some(f64::NEG_INFINITY),
            Decay::Unknown => None,
        }
    }

    fn shift(&self, d: f64) -> Decay {
        match self {
            Decay::Power(a) => Decay::Power(a + d),
            other => *other,
        }
    }
}

type AnalyticFn = dyn Fn(&[Jet; 3]) -> Jet + Send + Sync;

#[derive(Clone)]
enum Repr {
    Analytic(Arc<AnalyticFn>),
    Grid(Arc<GridScalar>),
}

/// A smooth function on the chart with derivatives available to order four.
#[derive(Clone)]
pub struct ScalarField {
    repr: Repr,
    decay: Decay,
    /// derivative orders the defining closure consumes internally, e.g. a
    /// field built from first derivatives of another field costs one order
    cost: usize,
}

impl ScalarField {
    pub fn analytic(f: impl Fn(&[Jet; 3]) -> Jet + Send + Sync + 'static, decay: Decay) -> Self {
        ScalarField { repr: Repr::Analytic(Arc::new(f)), decay, cost: 0 }
    }

    /// Analytic field whose closure internally differentiates its inputs
    /// `cost` times; evaluation seeds that many extra orders.
    pub fn analytic_with_cost(
        f: impl Fn(&[Jet; 3]) -> Jet + Send + Sync + 'static,
        cost: usize,
        decay: Decay,
    ) -> Self {
        ScalarField { repr: Repr::Analytic(Arc::new(f)), decay, cost }
    }

    pub fn from_grid(g: GridScalar, decay: Decay) -> Self {
        ScalarField { repr: Repr::Grid(Arc::new(g)), decay, cost: 0 }
    }

    pub fn constant(c: f64) -> Self {
        Self::analytic(move |v| Jet::constant(c, v[0].order()), Decay::Power(0.0))
    }

    pub fn zero() -> Self {
        let mut f = Self::constant(0.0);
        f.decay = Decay::Rapid;
        f
    }

    pub fn decay(&self) -> Decay {
        self.decay
    }

    pub fn with_decay(mut self, d: Decay) -> Self {
        self.decay = d;
        self
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.repr, Repr::Analytic(_))
    }

    /// Derivative orders this field can deliver.
    pub fn available_order(&self) -> usize {
        MAX_ORDER - self.cost
    }

    /// Taylor data at a chart point, valid through `ord` derivative orders.
    pub fn jet(&self, x: [f64; 3], ord: usize) -> Result<Jet> {
        if ord + self.cost > MAX_ORDER {
            return Err(Error::DerivativeOrder { requested: ord, available: self.available_order() });
        }
        match &self.repr {
            Repr::Analytic(f) => Ok(f(&Jet::vars(x, ord + self.cost)).with_order(ord)),
            Repr::Grid(g) => g.jet(x, ord),
        }
    }

    /// Evaluate the jet at already-built coordinate jets (composition).
    ///
    /// The seed jets must carry `cost` spare orders beyond what the caller
    /// consumes from the result.  Only analytic fields compose; grid fields
    /// cannot be re-parametrised.
    pub fn jet_at(&self, coords: &[Jet; 3]) -> Result<Jet> {
        match &self.repr {
            Repr::Analytic(f) => Ok(f(coords)),
            Repr::Grid(_) => Err(Error::Precondition(
                "grid-backed field cannot be evaluated on composed coordinates".into(),
            )),
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match &self.repr {
            Repr::Analytic(f) => f(&Jet::vars(x, self.cost)).value(),
            Repr::Grid(g) => g.jet(x, 0).map(|j| j.value()).unwrap_or(f64::NAN),
        }
    }

    /// Pointwise combination of two fields.  Analytic pairs stay analytic;
    /// any grid operand forces sampling onto its grid.
    pub fn zip(&self, other: &ScalarField, op: fn(Jet, Jet) -> Jet, decay: Decay) -> ScalarField {
        match (&self.repr, &other.repr) {
            (Repr::Analytic(a), Repr::Analytic(b)) => {
                let (a, b) = (a.clone(), b.clone());
                ScalarField {
                    repr: Repr::Analytic(Arc::new(move |v: &[Jet; 3]| op(a(v), b(v)))),
                    decay,
                    cost: self.cost.max(other.cost),
                }
            }
            _ => {
                let grid = match (&self.repr, &other.repr) {
                    (Repr::Grid(g), _) | (_, Repr::Grid(g)) => g.grid,
                    _ => unreachable!(),
                };
                let (a, b) = (self.clone(), other.clone());
                let gs = GridScalar::sample(grid, move |x| {
                    op(
                        Jet::constant(a.eval(x), 0),
                        Jet::constant(b.eval(x), 0),
                    )
                    .value()
                });
                ScalarField::from_grid(gs, decay)
            }
        }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        let d = match (self.decay, other.decay) {
            (Decay::Power(a), Decay::Power(b)) => Decay::Power(a.max(b)),
            (Decay::Rapid, o) | (o, Decay::Rapid) => o,
            _ => Decay::Unknown,
        };
        self.zip(other, |a, b| a + b, d)
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        let d = match (self.decay, other.decay) {
            (Decay::Power(a), Decay::Power(b)) => Decay::Power(a + b),
            (Decay::Rapid, Decay::Unknown) | (Decay::Unknown, Decay::Rapid) => Decay::Unknown,
            (Decay::Rapid, _) | (_, Decay::Rapid) => Decay::Rapid,
            _ => Decay::Unknown,
        };
        self.zip(other, |a, b| a * b, d)
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        let c = ScalarField::constant(s).with_decay(Decay::Power(0.0));
        self.mul(&c).with_decay(self.decay)
    }
}

/// The conformal factor tau = sqrt((|x|^2 + 1) / 2) of the round metric.
pub fn tau() -> ScalarField {
    ScalarField::analytic(
        |v| ((norm2(v) + Jet::constant(1.0, v[0].order())).scale(0.5)).sqrt(),
        Decay::Power(1.0),
    )
}

/// Jet of tau^p at pre-built coordinates, for integer or half-integer powers.
pub fn tau_pow_jet(coords: &[Jet; 3], p: f64) -> Jet {
    let t2 = (norm2(coords) + Jet::constant(1.0, coords[0].order())).scale(0.5);
    t2.powf(p / 2.0)
}

/// Symmetric (0,2) tensor with scalar-field components, six stored entries.
#[derive(Clone)]
pub struct SymTensorField {
    comps: [ScalarField; 6],
    decay: Decay,
}

pub const SYM_INDEX: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

pub fn sym_slot(i: usize, j: usize) -> usize {
    // upper-triangular packing; symmetry is structural
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    match (i, j) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        (2, 2) => 5,
        _ => unreachable!(),
    }
}

impl SymTensorField {
    pub fn new(comps: [ScalarField; 6], decay: Decay) -> Self {
        SymTensorField { comps, decay }
    }

    pub fn zero() -> Self {
        SymTensorField {
            comps: std::array::from_fn(|_| ScalarField::zero()),
            decay: Decay::Rapid,
        }
    }

    pub fn decay(&self) -> Decay {
        self.decay
    }

    pub fn with_decay(mut self, d: Decay) -> Self {
        self.decay = d;
        self
    }

    pub fn comp(&self, i: usize, j: usize) -> &ScalarField {
        &self.comps[sym_slot(i, j)]
    }

    pub fn comps(&self) -> &[ScalarField; 6] {
        &self.comps
    }

    /// Jets of the six components.
    pub fn jets(&self, x: [f64; 3], ord: usize) -> Result<[Jet; 6]> {
        let mut out = [Jet::zero(ord); 6];
        for (k, c) in self.comps.iter().enumerate() {
            out[k] = c.jet(x, ord)?;
        }
        Ok(out)
    }

    pub fn jets_at(&self, coords: &[Jet; 3]) -> Result<[Jet; 6]> {
        let ord = coords[0].order();
        let mut out = [Jet::zero(ord); 6];
        for (k, c) in self.comps.iter().enumerate() {
            out[k] = c.jet_at(coords)?;
        }
        Ok(out)
    }

    pub fn value(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.comp(i, j).eval(x);
            }
        }
        m
    }

    pub fn map(&self, f: impl Fn(&ScalarField) -> ScalarField, decay: Decay) -> SymTensorField {
        SymTensorField {
            comps: std::array::from_fn(|k| f(&self.comps[k])),
            decay,
        }
    }

    pub fn add(&self, other: &SymTensorField) -> SymTensorField {
        let d = match (self.decay, other.decay) {
            (Decay::Power(a), Decay::Power(b)) => Decay::Power(a.max(b)),
            (Decay::Rapid, o) | (o, Decay::Rapid) => o,
            _ => Decay::Unknown,
        };
        SymTensorField {
            comps: std::array::from_fn(|k| self.comps[k].add(&other.comps[k])),
            decay: d,
        }
    }

    pub fn scale(&self, s: f64) -> SymTensorField {
        self.map(|c| c.scale(s), self.decay)
    }
}

/// Vector field X = X_i d/dx_i on the chart.
#[derive(Clone)]
pub struct VectorField {
    pub comps: [ScalarField; 3],
}

impl VectorField {
    pub fn new(comps: [ScalarField; 3]) -> Self {
        VectorField { comps }
    }

    pub fn jets(&self, x: [f64; 3], ord: usize) -> Result<[Jet; 3]> {
        Ok([
            self.comps[0].jet(x, ord)?,
            self.comps[1].jet(x, ord)?,
            self.comps[2].jet(x, ord)?,
        ])
    }
}

// ---------------------------------------------------------------------------
// flat-chart differential operations
// ---------------------------------------------------------------------------

/// Mixed partial of `f` for a repeated-axis list (0-based axes); the order of
/// the list is irrelevant.
pub fn partial(f: &ScalarField, multi: &[usize], x: [f64; 3]) -> Result<f64> {
    if multi.len() > MAX_ORDER {
        return Err(Error::DerivativeOrder { requested: multi.len(), available: MAX_ORDER });
    }
    for &a in multi {
        if a > 2 {
            return Err(Error::Precondition(format!("axis index {a} out of range")));
        }
    }
    Ok(f.jet(x, multi.len())?.partial(multi))
}

/// Flat divergence (div h)_i = sum_j d_j h_ij.
pub fn tensor_divergence(h: &SymTensorField, x: [f64; 3]) -> Result<[f64; 3]> {
    let jets = h.jets(x, 1)?;
    let mut out = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut e = [0usize; 3];
            e[j] = 1;
            out[i] += jets[sym_slot(i, j)].partial_exp(e);
        }
    }
    Ok(out)
}

/// The scalar theta_ijij - Delta tr(theta) built from component 2-jets.
pub fn double_div_deficit_from_jets(jets: &[Jet; 6]) -> f64 {
    let mut dd = 0.0;
    let mut lap_tr = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let mut e = [0usize; 3];
            e[i] += 1;
            e[j] += 1;
            dd += jets[sym_slot(i, j)].partial_exp(e);
        }
        lap_tr += jets[sym_slot(i, i)].lap();
    }
    dd - lap_tr
}

/// theta_ijij - Delta tr(theta), the scalar driving the first variation.
pub fn double_div_minus_lap_trace(theta: &SymTensorField, x: [f64; 3]) -> Result<f64> {
    Ok(double_div_deficit_from_jets(&theta.jets(x, 2)?))
}

/// M_ij = theta_ikjk + theta_jkik - (tr theta)_ij - Delta theta_ij from 2-jets.
pub fn lichnerowicz_from_jets(jets: &[Jet; 6]) -> [[f64; 3]; 3] {
    let mut tr_hess = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut e = [0usize; 3];
            e[i] += 1;
            e[j] += 1;
            for k in 0..3 {
                tr_hess[i][j] += jets[sym_slot(k, k)].partial_exp(e);
            }
        }
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut v = -tr_hess[i][j] - jets[sym_slot(i, j)].lap();
            for k in 0..3 {
                let mut ej = [0usize; 3];
                ej[j] += 1;
                ej[k] += 1;
                let mut ei = [0usize; 3];
                ei[i] += 1;
                ei[k] += 1;
                v += jets[sym_slot(i, k)].partial_exp(ej) + jets[sym_slot(j, k)].partial_exp(ei);
            }
            m[i][j] = v;
        }
    }
    m
}

/// Symmetric matrix of the second-variation integrand (flat chart).
pub fn lichnerowicz_combination(theta: &SymTensorField, x: [f64; 3]) -> Result<[[f64; 3]; 3]> {
    Ok(lichnerowicz_from_jets(&theta.jets(x, 2)?))
}

/// Multiply a scalar field by tau^p, preserving the representation kind.
pub fn scalar_times_tau_pow(c: &ScalarField, p: f64) -> ScalarField {
    let decay = c.decay().shift(p);
    match &c.repr {
        Repr::Analytic(f) => {
            let f = f.clone();
            ScalarField::analytic_with_cost(move |v| tau_pow_jet(v, p) * f(v), c.cost, decay)
        }
        Repr::Grid(g) => {
            let src = g.clone();
            let gs = GridScalar::sample(src.grid, |x| {
                let t2 = 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + 1.0);
                t2.powf(p / 2.0) * src.jet(x, 0).map(|j| j.value()).unwrap_or(f64::NAN)
            });
            ScalarField::from_grid(gs, decay)
        }
    }
}

/// theta = tau^4 h; the decay exponent shifts by +4.
pub fn pullback_theta(h: &SymTensorField) -> SymTensorField {
    let decay = h.decay().shift(4.0);
    h.map(|c| scalar_times_tau_pow(c, 4.0), decay)
}

/// tau^-4 theta, inverse of [`pullback_theta`].
pub fn pushforward_from_theta(theta: &SymTensorField) -> SymTensorField {
    let decay = theta.decay().shift(-4.0);
    theta.map(|c| scalar_times_tau_pow(c, -4.0), decay)
}

/// kappa = tau^4 L_X g in chart components:
/// kappa_ij = -4 tau^-1 (X tau) delta_ij + d_j X_i + d_i X_j.
pub fn lie_derivative_round(xf: &VectorField) -> SymTensorField {
    let cost = 1 + xf.comps.iter().map(|c| c.cost).max().unwrap_or(0);
    let comps: [ScalarField; 6] = std::array::from_fn(|slot| {
        let (i, j) = SYM_INDEX[slot];
        let x0 = xf.comps[0].clone();
        let x1 = xf.comps[1].clone();
        let x2 = xf.comps[2].clone();
        ScalarField::analytic_with_cost(
            move |v| {
                let ord = v[0].order();
                let t2 = (norm2(v) + Jet::constant(1.0, ord)).scale(0.5);
                let t = t2.sqrt();
                let xs = [
                    x0.jet_at(v).expect("analytic"),
                    x1.jet_at(v).expect("analytic"),
                    x2.jet_at(v).expect("analytic"),
                ];
                // X tau = X_k d_k tau
                let mut xtau = Jet::zero(ord);
                for (k, xk) in xs.iter().enumerate() {
                    xtau = xtau + *xk * t.deriv(k);
                }
                let mut out = xs[i].deriv(j) + xs[j].deriv(i);
                if i == j {
                    out = out - (t.recip() * xtau).scale(4.0);
                }
                out
            },
            cost,
            Decay::Unknown,
        )
    });
    SymTensorField::new(comps, Decay::Unknown)
}

/// h = f g in chart components, h_ij = f tau^-4 delta_ij.
pub fn conformal_direction(f: &ScalarField) -> SymTensorField {
    let decay = f.decay().shift(-4.0);
    let diag = scalar_times_tau_pow(f, -4.0);
    let comps: [ScalarField; 6] = std::array::from_fn(|slot| {
        let (i, j) = SYM_INDEX[slot];
        if i == j {
            diag.clone()
        } else {
            ScalarField::zero()
        }
    });
    SymTensorField::new(comps, decay)
}

// ---------------------------------------------------------------------------
// decay audit
// ---------------------------------------------------------------------------

/// The thirteen audit directions: axes, face diagonals, body diagonals.
pub fn audit_directions() -> Vec<[f64; 3]> {
    let mut dirs = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        for sign in [1.0, -1.0] {
            let mut d = [0.0; 3];
            d[i] = s;
            d[j] = s * sign;
            dirs.push(d);
        }
    }
    let b = 1.0 / 3.0f64.sqrt();
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            dirs.push([b * sx, b * sy, b]);
        }
    }
    debug_assert_eq!(dirs.len(), 13);
    dirs
}

#[derive(Debug, Clone)]
pub struct DecayAudit {
    /// worst ratio |d^m f(x)| |x|^(m-a) at r = 20, 40 against the r = 10 constant
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Ray-sampling test of the annotated decay exponent on derivatives to order 2.
pub fn decay_audit(f: &ScalarField, slack: f64) -> Result<DecayAudit> {
    let a = match f.decay() {
        Decay::Power(a) => a,
        Decay::Rapid => {
            // rapid decay: require the zeroth-order values themselves collapse
            let mut worst: f64 = 0.0;
            for d in audit_directions() {
                let v10 = f.eval([10.0 * d[0], 10.0 * d[1], 10.0 * d[2]]).abs();
                let v20 = f.eval([20.0 * d[0], 20.0 * d[1], 20.0 * d[2]]).abs();
                if v10 > 1e-280 {
                    worst = worst.max(v20 / v10);
                }
            }
            return Ok(DecayAudit { worst_ratio: worst, pass: worst < 1e-3 });
        }
        Decay::Unknown => return Err(Error::UnboundedTail),
    };
    let radii = [10.0, 20.0, 40.0];
    let mut worst: f64 = 0.0;
    for d in audit_directions() {
        for m in 0..=2usize {
            let mut consts = [0.0f64; 3];
            for (ri, &r) in radii.iter().enumerate() {
                let x = [r * d[0], r * d[1], r * d[2]];
                let jet = f.jet(x, m)?;
                let mut mag = 0.0f64;
                // max over multi-indices of total order m
                for e in multi_indices(m) {
                    mag = mag.max(jet.partial_exp(e).abs());
                }
                consts[ri] = mag * r.powf(m as f64 - a);
            }
            let c0 = consts[0].max(1e-14);
            worst = worst.max(consts[1] / c0).max(consts[2] / c0);
        }
    }
    Ok(DecayAudit { worst_ratio: worst, pass: worst <= 1.0 + slack })
}

fn multi_indices(total: usize) -> Vec<[usize; 3]> {
    let mut v = Vec::new();
    for a in 0..=total {
        for b in 0..=total - a {
            v.push([a, b, total - a - b]);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian() -> ScalarField {
        ScalarField::analytic(|v| (-norm2(v)).exp(), Decay::Rapid)
    }

    #[test]
    fn partial_polynomial() {
        // f = x1^2 x2, d1 d1 d2 f = 2 everywhere
        let f = ScalarField::analytic(|v| v[0] * v[0] * v[1], Decay::Unknown);
        let v = partial(&f, &[0, 0, 1], [0.7, -2.0, 5.0]).unwrap();
        assert_relative_eq!(v, 2.0);
    }

    #[test]
    fn tau_critical_at_origin() {
        let t = tau();
        assert_relative_eq!(partial(&t, &[0], [0.0; 3]).unwrap(), 0.0);
        assert_relative_eq!(t.eval([0.0; 3]), 0.5f64.sqrt());
    }

    #[test]
    fn gaussian_second_partial() {
        let f = gaussian();
        assert_relative_eq!(partial(&f, &[0, 0], [0.0; 3]).unwrap(), -2.0, epsilon = 1e-14);
    }

    #[test]
    fn divergence_examples() {
        // identity tensor
        let eye = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                if i == j { ScalarField::constant(1.0) } else { ScalarField::zero() }
            }),
            Decay::Power(0.0),
        );
        assert_eq!(tensor_divergence(&eye, [1.0, 2.0, 3.0]).unwrap(), [0.0; 3]);

        // h_ij = x_i x_j  =>  (div h)_i = 4 x_i
        let hx = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                ScalarField::analytic(move |v| v[i] * v[j], Decay::Unknown)
            }),
            Decay::Unknown,
        );
        let x = [0.3, -1.0, 2.0];
        let d = tensor_divergence(&hx, x).unwrap();
        for i in 0..3 {
            assert_relative_eq!(d[i], 4.0 * x[i], epsilon = 1e-13);
        }

        // Gaussian bump on the diagonal at (1,0,0)
        let hg = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                if i == j {
                    ScalarField::analytic(|v| (-norm2(v)).exp(), Decay::Rapid)
                } else {
                    ScalarField::zero()
                }
            }),
            Decay::Rapid,
        );
        let d = tensor_divergence(&hg, [1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(d[0], -2.0 * (-1.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(d[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn pure_trace_identities() {
        // theta = f delta: theta_ijij - Delta tr = -2 Delta f,
        // M_ij = -f_ij - Delta f delta_ij
        let th = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                if i == j { gaussian() } else { ScalarField::zero() }
            }),
            Decay::Rapid,
        );
        let x = [0.4, -0.2, 0.8];
        let f = gaussian();
        let jf = f.jet(x, 2).unwrap();
        let s = double_div_minus_lap_trace(&th, x).unwrap();
        assert_relative_eq!(s, -2.0 * jf.lap(), epsilon = 1e-12);
        let m = lichnerowicz_combination(&th, x).unwrap();
        let hess = jf.hess();
        for i in 0..3 {
            for j in 0..3 {
                let expect = -hess[i][j] - if i == j { jf.lap() } else { 0.0 };
                assert_relative_eq!(m[i][j], expect, epsilon = 1e-12);
                assert_relative_eq!(m[i][j], m[j][i], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn hessian_field_is_null() {
        // theta_ij = d_i d_j phi has theta_ijij = Delta^2 phi = Delta tr theta
        let th = SymTensorField::new(
            std::array::from_fn(|s| {
                let (i, j) = SYM_INDEX[s];
                ScalarField::analytic_with_cost(
                    move |v| (-norm2(v)).exp().deriv(i).deriv(j),
                    2,
                    Decay::Rapid,
                )
            }),
            Decay::Rapid,
        );
        let s = double_div_minus_lap_trace(&th, [0.3, 0.1, -0.5]).unwrap();
        assert_relative_eq!(s, 0.0, epsilon = 1e-11);
    }

    #[test]
    fn pullback_cancellation() {
        // h = tau^-4 delta  =>  theta = delta
        let h = conformal_direction(&ScalarField::constant(1.0));
        let th = pullback_theta(&h);
        let m = th.value([1.2, -0.7, 0.4]);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(m[i][j], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn rotation_is_killing() {
        let xf = VectorField::new([
            ScalarField::analytic(|v| -v[1], Decay::Unknown),
            ScalarField::analytic(|v| v[0], Decay::Unknown),
            ScalarField::zero(),
        ]);
        let k = lie_derivative_round(&xf);
        let m = k.value([0.7, 0.3, -1.1]);
        for row in m {
            for v in row {
                assert_relative_eq!(v, 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn dilation_closed_form() {
        let xf = VectorField::new(std::array::from_fn(|i| {
            ScalarField::analytic(move |v| v[i], Decay::Power(1.0))
        }));
        let k = lie_derivative_round(&xf);
        let x = [1.0, -2.0, 0.5];
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let expect = 2.0 - 4.0 * r2 / (r2 + 1.0);
        let m = k.value(x);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(m[i][j], if i == j { expect } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gauge_field_identity() {
        // kappa_ijij - Delta tr kappa = 8 Delta(tau^-1 X tau) for a bump field X
        let xf = VectorField::new([
            ScalarField::analytic(|v| (-norm2(v)).exp(), Decay::Rapid),
            ScalarField::zero(),
            ScalarField::zero(),
        ]);
        let k = lie_derivative_round(&xf);
        let x = [0.6, -0.3, 0.2];
        let s = double_div_minus_lap_trace(&k, x).unwrap();
        // tau^-1 X tau as an analytic scalar
        let w = ScalarField::analytic_with_cost(
            |v| {
                let ord = v[0].order();
                let t = ((norm2(v) + Jet::constant(1.0, ord)).scale(0.5)).sqrt();
                let x0 = (-norm2(v)).exp();
                t.recip() * (x0 * t.deriv(0))
            },
            1,
            Decay::Rapid,
        );
        let lap_w = w.jet(x, 2).unwrap().lap();
        assert_relative_eq!(s, 8.0 * lap_w, epsilon = 1e-11);
    }

    #[test]
    fn decay_audit_gaussian_and_tau() {
        let g = gaussian();
        assert!(decay_audit(&g, 0.5).unwrap().pass);
        let t = tau().with_decay(Decay::Power(1.0));
        assert!(decay_audit(&t, 0.5).unwrap().pass);
        let bad = ScalarField::analytic(|v| v[0] * v[0], Decay::Power(1.0));
        assert!(!decay_audit(&bad, 0.5).unwrap().pass);
        let unb = ScalarField::analytic(|v| v[0], Decay::Unknown);
        assert!(matches!(decay_audit(&unb, 0.5), Err(Error::UnboundedTail)));
    }
}
