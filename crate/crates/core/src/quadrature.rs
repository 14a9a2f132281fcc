//! Deterministic summation and quadrature helpers.
//!
//! All reductions are pairwise over fixed index ranges, so results do not
//! depend on thread scheduling.

use crate::grid::Grid3;
use rayon::prelude::*;

/// Pairwise (cascade) sum; deterministic and more accurate than a left fold.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Trapezoid rule over the whole cube; `f` is evaluated at every node in
/// parallel, the reduction is deterministic.
pub fn integrate_grid(grid: Grid3, f: impl Fn([f64; 3]) -> f64 + Sync) -> f64 {
    let n = grid.n;
    let h = grid.spacing();
    let slabs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|iz| {
            let wz = trapezoid_weight(iz, n);
            let mut vals = Vec::with_capacity(n * n);
            for iy in 0..n {
                let wy = trapezoid_weight(iy, n);
                for ix in 0..n {
                    let wx = trapezoid_weight(ix, n);
                    vals.push(wx * wy * wz * f(grid.point(ix, iy, iz)));
                }
            }
            pairwise_sum(&vals)
        })
        .collect();
    pairwise_sum(&slabs) * h * h * h
}

/// Least-squares slope of log(y) against log(x); the convergence-rate statistic.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(1e-300).ln()).collect();
    let n = x.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    num / den
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Fixed-panel Gauss-Legendre integration of `f` over [a, b].
pub fn panel_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, nodes: usize) -> f64 {
    let (xs, ws) = gauss_legendre(nodes);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let vals: Vec<f64> = xs.iter().zip(&ws).map(|(&x, &w)| w * f(mid + half * x)).collect();
    pairwise_sum(&vals) * half
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trapezoid_gaussian() {
        let grid = Grid3::new(65, 8.0).unwrap();
        let v = integrate_grid(grid, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp());
        assert_relative_eq!(v, std::f64::consts::PI.powf(1.5), epsilon = 1e-10);
    }

    #[test]
    fn gl_exactness() {
        // degree-15 polynomial integrated exactly by 8 nodes
        let v = panel_gl(|x| x.powi(15) + 3.0 * x.powi(4), -1.0, 1.0, 8);
        assert_relative_eq!(v, 6.0 / 5.0, epsilon = 1e-13);
    }

    #[test]
    fn slope_of_powers() {
        let x = [0.1f64, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) * 2.0).collect();
        assert_relative_eq!(log_slope(&x, &y), 3.0, epsilon = 1e-12);
    }
}
