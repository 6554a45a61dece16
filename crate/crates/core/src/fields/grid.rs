use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest stretching ratio between neighbouring vertical cells.
pub const MAX_STRETCH: f64 = 1.05;

/// Tensor grid: uniform and periodic in `y′` over `[0, P)²`, graded on
/// `[0, H]` in `y₃`.
///
/// `n3` counts vertical intervals, so there are `n3 + 1` levels including
/// both walls.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n1: usize,
    n2: usize,
    n3: usize,
    period: f64,
    z: Vec<f64>,
    wz: Vec<f64>,
    d3: Vec<Stencil>,
}

/// Three-point row of the vertical difference operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub start: usize,
    pub c: [f64; 3],
}

/// Summary of a grid, as stored in manifests and snapshot headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub period: f64,
    pub height: f64,
    pub wall_spacing: f64,
    pub stretch: f64,
}

impl Grid {
    /// Grid with the given vertical nodes (`z[0] = 0`, increasing).
    pub fn from_nodes(n1: usize, n2: usize, period: f64, z: Vec<f64>) -> Result<Self> {
        for (name, n) in [("N₁", n1), ("N₂", n2)] {
            if n < 4 || !n.is_power_of_two() {
                return Err(Error::Validation(format!("{name} must be a power of two ≥ 4, got {n}")));
            }
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Validation(format!("period must be positive, got {period}")));
        }
        if z.len() < 5 {
            return Err(Error::Validation(format!(
                "vertical differences need at least 4 intervals, got {}",
                z.len().saturating_sub(1)
            )));
        }
        if z[0] != 0.0 || z.windows(2).any(|w| !(w[1] > w[0])) || !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("vertical nodes must start at 0 and increase".into()));
        }
        let n3 = z.len() - 1;
        let h: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();
        let mut wz = vec![0.0; n3 + 1];
        for (k, hk) in h.iter().enumerate() {
            wz[k] += 0.5 * hk;
            wz[k + 1] += 0.5 * hk;
        }
        let mut d3 = Vec::with_capacity(n3 + 1);
        d3.push(one_sided(h[0], h[1], 0, false));
        for k in 1..n3 {
            let s = 1.0 / (h[k - 1] + h[k]);
            d3.push(Stencil { start: k - 1, c: [-s, 0.0, s] });
        }
        d3.push(one_sided(h[n3 - 1], h[n3 - 2], n3 - 2, true));
        Ok(Self { n1, n2, n3, period, z, wz, d3 })
    }

    pub fn uniform(n1: usize, n2: usize, n3: usize, period: f64, height: f64) -> Result<Self> {
        if !(height > 0.0) || n3 == 0 {
            return Err(Error::Validation(format!("height must be positive, got {height}")));
        }
        let z = (0..=n3).map(|k| height * k as f64 / n3 as f64).collect();
        Self::from_nodes(n1, n2, period, z)
    }

    /// Geometric grading `z_k = h₀(r^k − 1)/(r − 1)` reaching `height` at
    /// `k = n3`. With `n3 = None` the smallest odd count with `r ≤ 1.05` is
    /// used. If `n3·h₀ ≥ height` the grid is uniform.
    pub fn graded(
        n1: usize,
        n2: usize,
        period: f64,
        height: f64,
        wall_spacing: f64,
        n3: Option<usize>,
    ) -> Result<Self> {
        if !(height > 0.0 && wall_spacing > 0.0 && wall_spacing < height) {
            return Err(Error::Validation(format!(
                "graded grid needs 0 < h₀ < H, got h₀ = {wall_spacing}, H = {height}"
            )));
        }
        let n3 = match n3 {
            Some(n) => n,
            None => {
                let q = MAX_STRETCH;
                let n = ((1.0 + height * (q - 1.0) / wall_spacing).ln() / q.ln()).ceil() as usize;
                let n = n.max(5);
                if n % 2 == 0 {
                    n + 1
                } else {
                    n
                }
            }
        };
        if n3 < 4 {
            return Err(Error::Validation(format!("vertical differences need N₃ ≥ 4, got {n3}")));
        }
        if n3 as f64 * wall_spacing >= height {
            return Self::uniform(n1, n2, n3, period, height);
        }
        let r = stretch_ratio(height / wall_spacing, n3);
        let z = (0..=n3)
            .map(|k| {
                if k == n3 {
                    height
                } else {
                    wall_spacing * (r.powi(k as i32) - 1.0) / (r - 1.0)
                }
            })
            .collect();
        Self::from_nodes(n1, n2, period, z)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Number of vertical intervals.
    pub fn n3(&self) -> usize {
        self.n3
    }

    /// Number of vertical levels, `n3 + 1`.
    pub fn nz(&self) -> usize {
        self.n3 + 1
    }

    pub fn plane(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn len(&self) -> usize {
        self.plane() * self.nz()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.n1, self.n2, self.nz()]
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn height(&self) -> f64 {
        self.z[self.n3]
    }

    pub fn h1(&self) -> f64 {
        self.period / self.n1 as f64
    }

    pub fn h2(&self) -> f64 {
        self.period / self.n2 as f64
    }

    /// Horizontal cell area `h₁h₂`.
    pub fn area(&self) -> f64 {
        self.h1() * self.h2()
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Trapezoid weights in `y₃`.
    pub fn wz(&self) -> &[f64] {
        &self.wz
    }

    pub fn d3(&self) -> &[Stencil] {
        &self.d3
    }

    /// Spacing `h_k = z_{k+1} − z_k`.
    pub fn dz(&self, k: usize) -> f64 {
        self.z[k + 1] - self.z[k]
    }

    pub fn wall_spacing(&self) -> f64 {
        self.dz(0)
    }

    /// Largest ratio between neighbouring vertical spacings.
    pub fn max_stretch(&self) -> f64 {
        (1..self.n3)
            .map(|k| {
                let (a, b) = (self.dz(k - 1), self.dz(k));
                (a / b).max(b / a)
            })
            .fold(1.0, f64::max)
    }

    pub fn x1(&self) -> Vec<f64> {
        (0..self.n1).map(|j| j as f64 * self.h1()).collect()
    }

    pub fn x2(&self) -> Vec<f64> {
        (0..self.n2).map(|j| j as f64 * self.h2()).collect()
    }

    /// Flat index of node `(j₁, j₂, k)`.
    #[inline]
    pub fn idx(&self, j1: usize, j2: usize, k: usize) -> usize {
        (k * self.n2 + j2) * self.n1 + j1
    }

    /// Coordinates of the flat index `i`.
    pub fn point(&self, i: usize) -> [f64; 3] {
        let j1 = i % self.n1;
        let j2 = (i / self.n1) % self.n2;
        let k = i / self.plane();
        [j1 as f64 * self.h1(), j2 as f64 * self.h2(), self.z[k]]
    }

    pub fn info(&self) -> GridInfo {
        GridInfo {
            n1: self.n1,
            n2: self.n2,
            n3: self.n3,
            period: self.period,
            height: self.height(),
            wall_spacing: self.wall_spacing(),
            stretch: self.max_stretch(),
        }
    }

    /// Resolution diagnostics that do not prevent a run: stretching above
    /// [`MAX_STRETCH`], wall spacing coarser than `layer/8`, horizontal
    /// spacing coarser than `oscillation/16`.
    pub fn resolution_warnings(&self, layer: Option<f64>, oscillation: Option<f64>) -> Vec<String> {
        let mut out = Vec::new();
        let s = self.max_stretch();
        if s > MAX_STRETCH * (1.0 + 1e-9) {
            out.push(format!("vertical stretching {s:.4} exceeds {MAX_STRETCH}"));
        }
        if let Some(a) = layer {
            if self.wall_spacing() > a / 8.0 * (1.0 + 1e-9) {
                out.push(format!(
                    "wall spacing {:.3e} does not resolve the layer width {a:.3e} (needs ≤ width/8)",
                    self.wall_spacing()
                ));
            }
        }
        if let Some(p) = oscillation {
            let h = self.h1().max(self.h2());
            if h > p / 16.0 * (1.0 + 1e-9) {
                out.push(format!(
                    "horizontal spacing {h:.3e} does not resolve the wall oscillation period {p:.3e} (needs ≤ period/16)"
                ));
            }
        }
        out
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.dims() != other.dims() || self.period != other.period || self.z != other.z {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Second-order one-sided three-point derivative at an end node. For the
/// bottom, `ha` is the first spacing and `hb` the second; for the top the
/// stencil is mirrored.
fn one_sided(ha: f64, hb: f64, start: usize, top: bool) -> Stencil {
    let c0 = -(2.0 * ha + hb) / (ha * (ha + hb));
    let c1 = (ha + hb) / (ha * hb);
    let c2 = -ha / (hb * (ha + hb));
    if top {
        Stencil { start, c: [-c2, -c1, -c0] }
    } else {
        Stencil { start, c: [c0, c1, c2] }
    }
}

/// Solve `(r^n − 1)/(r − 1) = q` for `r > 1` (requires `q > n`).
fn stretch_ratio(q: f64, n: usize) -> f64 {
    let f = |r: f64| (r.powi(n as i32) - 1.0) / (r - 1.0) - q;
    let (mut lo, mut hi) = (1.0 + 1e-15, 2.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_graded_grid_is_odd_and_mildly_stretched() {
        let g = Grid::graded(8, 8, 6.0, 16.0, 1e-4, None).unwrap();
        assert_eq!(g.n3() % 2, 1);
        assert!(g.max_stretch() <= MAX_STRETCH + 1e-12);
        assert!((g.height() - 16.0).abs() < 1e-12);
        assert!((g.wall_spacing() - 1e-4).abs() < 1e-12);
        let sum: f64 = g.wz().iter().sum();
        assert!((sum - 16.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Grid::uniform(12, 8, 8, 1.0, 1.0).is_err());
        assert!(Grid::uniform(8, 8, 3, 1.0, 1.0).is_err());
    }

    #[test]
    fn one_sided_rows_differentiate_quadratics() {
        let g = Grid::graded(4, 4, 1.0, 2.0, 0.05, Some(9)).unwrap();
        let f: Vec<f64> = g.z().iter().map(|z| 3.0 * z * z - z + 2.0).collect();
        for (k, st) in g.d3().iter().enumerate() {
            let d: f64 = (0..3).map(|j| st.c[j] * f[st.start + j]).sum();
            let z = g.z()[k];
            let exact = 6.0 * z - 1.0;
            // Interior rows are exact only on uniform grids; ends are exact.
            if k == 0 || k == g.n3() {
                assert!((d - exact).abs() < 1e-9, "row {k}: {d} vs {exact}");
            }
        }
    }
}
