//! Uniform cube grids, central-difference stencils and the binary dump format.
//!
//! Grids cover the cube [-R, R]^3 with `n` nodes per axis, stored row-major
//! with x1 fastest.  Dumps carry a 48-byte header: magic (u32), dims (3 x u32),
//! spacing (f64), origin (3 x f64), all little-endian.  The magic distinguishes
//! spatial from frequency-domain data.

use crate::error::{Error, Result};
use crate::jet::Jet;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC_SPATIAL: u32 = 0x3153_4750; // "PGS1"
pub const MAGIC_FREQUENCY: u32 = 0x3146_4750; // "PGF1"

/// Geometry of a uniform cube grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid3 {
    pub n: usize,
    pub radius: f64,
}

impl Grid3 {
    pub fn new(n: usize, radius: f64) -> Result<Self> {
        if n < 5 {
            return Err(Error::Config(format!("grid needs >= 5 points per axis, got {n}")));
        }
        if radius <= 0.0 {
            return Err(Error::Config("grid radius must be positive".into()));
        }
        Ok(Grid3 { n, radius })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / (self.n - 1) as f64
    }

    pub fn origin(&self) -> [f64; 3] {
        [-self.radius; 3]
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.spacing()
    }

    pub fn point(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [self.coord(ix), self.coord(iy), self.coord(iz)]
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.n * (iy + self.n * iz)
    }

    /// Nearest node to a chart point; errors if outside the cube.
    pub fn nearest_node(&self, x: [f64; 3]) -> Result<[usize; 3]> {
        let h = self.spacing();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let t = (x[a] + self.radius) / h;
            if t < -0.5 || t > (self.n as f64 - 0.5) {
                return Err(Error::OutOfDomain { point: x, reason: "outside grid cube".into() });
            }
            out[a] = t.round().max(0.0) as usize;
            out[a] = out[a].min(self.n - 1);
        }
        Ok(out)
    }
}

/// Scalar samples on a [`Grid3`].
#[derive(Clone, Debug)]
pub struct GridScalar {
    pub grid: Grid3,
    pub data: Vec<f64>,
}

// 5-point central stencils, offsets -2..=2.  First and second derivatives are
// fourth-order accurate; third and fourth are second-order (the margin budget
// stays at two cells).
const W1: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
const W2: [f64; 5] = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
const W3: [f64; 5] = [-0.5, 1.0, 0.0, -1.0, 0.5];
const W4: [f64; 5] = [1.0, -4.0, 6.0, -4.0, 1.0];
const W0: [f64; 5] = [0.0, 0.0, 1.0, 0.0, 0.0];

fn weights(order: usize) -> &'static [f64; 5] {
    match order {
        0 => &W0,
        1 => &W1,
        2 => &W2,
        3 => &W3,
        4 => &W4,
        _ => unreachable!("stencil order above 4"),
    }
}

impl GridScalar {
    pub fn sample(grid: Grid3, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        use rayon::prelude::*;
        let n = grid.n;
        let mut data = vec![0.0; grid.len()];
        data.par_chunks_mut(n * n).enumerate().for_each(|(iz, slab)| {
            for iy in 0..n {
                for ix in 0..n {
                    slab[ix + n * iy] = f(grid.point(ix, iy, iz));
                }
            }
        });
        GridScalar { grid, data }
    }

    pub fn at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.data[self.grid.index(ix, iy, iz)]
    }

    /// Stencil-backed jet at the node nearest to `x`.
    ///
    /// Each requested order needs the node at least two cells inside the
    /// boundary; the returned jet is truncated to `ord`.
    pub fn jet(&self, x: [f64; 3], ord: usize) -> Result<Jet> {
        if ord > 4 {
            return Err(Error::DerivativeOrder { requested: ord, available: 4 });
        }
        let node = self.grid.nearest_node(x)?;
        let margin = if ord == 0 { 0 } else { 2 };
        for a in 0..3 {
            if node[a] < margin || node[a] + margin >= self.grid.n {
                return Err(Error::OutOfDomain {
                    point: x,
                    reason: format!("within {margin} cells of the grid boundary"),
                });
            }
        }
        let h = self.grid.spacing();
        let jet = Jet::from_partials(ord, |e| {
            let (wa, wb, wc) = (weights(e[0]), weights(e[1]), weights(e[2]));
            let mut acc = 0.0;
            for (di, wi) in wa.iter().enumerate() {
                if *wi == 0.0 && e[0] != 0 {
                    continue;
                }
                for (dj, wj) in wb.iter().enumerate() {
                    for (dk, wk) in wc.iter().enumerate() {
                        let w = wi * wj * wk;
                        if w == 0.0 {
                            continue;
                        }
                        let ix = (node[0] + di).wrapping_sub(2);
                        let iy = (node[1] + dj).wrapping_sub(2);
                        let iz = (node[2] + dk).wrapping_sub(2);
                        acc += w * self.at(ix, iy, iz);
                    }
                }
            }
            acc / h.powi((e[0] + e[1] + e[2]) as i32)
        });
        Ok(jet)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_grid_f64(path, MAGIC_SPATIAL, self.grid, &self.data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (magic, grid, data) = read_grid_f64(path)?;
        if magic != MAGIC_SPATIAL {
            return Err(Error::GridFormat("expected spatial-domain magic".into()));
        }
        Ok(GridScalar { grid, data })
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// Write raw f64 samples with the 48-byte header.
pub fn write_grid_f64(path: &Path, magic: u32, grid: Grid3, data: &[f64]) -> Result<()> {
    if data.len() != grid.len() {
        return Err(Error::GridFormat("data length does not match dims".into()));
    }
    let mut buf = Vec::with_capacity(48 + data.len() * 8);
    buf.extend_from_slice(&magic.to_le_bytes());
    for _ in 0..3 {
        buf.extend_from_slice(&(grid.n as u32).to_le_bytes());
    }
    buf.extend_from_slice(&grid.spacing().to_le_bytes());
    for o in grid.origin() {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    debug_assert_eq!(buf.len(), 48);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))
}

/// Read a dump written by [`write_grid_f64`]; returns (magic, grid, data).
pub fn read_grid_f64(path: &Path) -> Result<(u32, Grid3, Vec<f64>)> {
    let mut f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut head = [0u8; 48];
    f.read_exact(&mut head).map_err(|e| io_err(path, e))?;
    let magic = u32::from_le_bytes(head[0..4].try_into().unwrap());
    let nx = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let nz = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    if nx != ny || ny != nz {
        return Err(Error::GridFormat("non-cubic grids are not supported".into()));
    }
    let spacing = f64::from_le_bytes(head[16..24].try_into().unwrap());
    let ox = f64::from_le_bytes(head[24..32].try_into().unwrap());
    let radius = -ox;
    let grid = Grid3::new(nx, radius)?;
    if (grid.spacing() - spacing).abs() > 1e-12 * spacing.abs() {
        return Err(Error::GridFormat("header spacing inconsistent with dims/origin".into()));
    }
    let mut raw = Vec::new();
    f.read_to_end(&mut raw).map_err(|e| io_err(path, e))?;
    if raw.len() != grid.len() * 8 {
        return Err(Error::GridFormat("payload length does not match dims".into()));
    }
    let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((magic, grid, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stencil_exact_on_cubics() {
        let grid = Grid3::new(33, 2.0).unwrap();
        let gs = GridScalar::sample(grid, |x| x[0] * x[0] * x[1] + x[2] * x[2] * x[2]);
        let j = gs.jet([0.0, 0.5, -0.25], 3).unwrap();
        // node-snapped point
        let p = grid.nearest_node([0.0, 0.5, -0.25]).unwrap();
        let x = grid.point(p[0], p[1], p[2]);
        assert_relative_eq!(j.partial(&[0, 0, 1]), 2.0, epsilon = 1e-9);
        assert_relative_eq!(j.partial(&[2, 2]), 6.0 * x[2], epsilon = 1e-9);
    }

    #[test]
    fn stencil_fourth_order_convergence() {
        // measured slope of the second-derivative error must sit near 4;
        // the point 0.5 is a node of every grid in the ladder
        let f = |x: [f64; 3]| (x[0] + 0.3 * x[1]).sin() * (-x[2] * x[2]).exp();
        let p = [0.5, 0.5, 0.5];
        let exact = -(0.5f64 + 0.15).sin() * (-0.25f64).exp();
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [17usize, 33, 65, 129] {
            let grid = Grid3::new(n, 2.0).unwrap();
            let gs = GridScalar::sample(grid, f);
            let j = gs.jet(p, 2).unwrap();
            errs.push((j.partial(&[0, 0]) - exact).abs().max(1e-16));
            hs.push(grid.spacing());
        }
        let slope = crate::quadrature::log_slope(&hs, &errs);
        assert!((3.7..=4.3).contains(&slope), "slope {slope}");
    }

    #[test]
    fn margin_enforced() {
        let grid = Grid3::new(9, 1.0).unwrap();
        let gs = GridScalar::sample(grid, |x| x[0]);
        assert!(gs.jet([1.0, 0.0, 0.0], 1).is_err());
        assert!(gs.jet([0.0, 0.0, 0.0], 1).is_ok());
    }

    #[test]
    fn dump_roundtrip() {
        let dir = std::env::temp_dir().join("paneitz_grid_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.bin");
        let grid = Grid3::new(9, 1.5).unwrap();
        let gs = GridScalar::sample(grid, |x| x[0] + 2.0 * x[1] - x[2]);
        gs.write(&path).unwrap();
        let back = GridScalar::read(&path).unwrap();
        assert_eq!(back.grid, grid);
        assert_eq!(back.data, gs.data);
    }
}
