//! Spatial mode functions of beams sampled on a pixel grid.
//!
//! A [`ModeFunction`] holds the real amplitude profile `U(x)` of one beam
//! mode, normalized so that `Σ_x U(x)² = 1`. The local oscillator, the probe
//! and any higher-order probe modes are all represented this way. Only real
//! amplitudes are supported; complex phase fronts are out of scope.

use crate::error::{Error, Result};
use crate::grid::PixelGrid;

/// Tolerance on the L2 norm of a stored mode.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Tolerance on pairwise orthogonality of a probe-mode family.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-6;

/// Largest supported orthogonal family.
pub const MAX_MODE_FAMILY: u32 = 16;

/// L2-normalized real amplitude profile of a beam mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFunction {
    grid: PixelGrid,
    amplitudes: Vec<f64>,
}

impl ModeFunction {
    /// Wraps raw amplitudes, normalizing them. Fails on a null profile.
    pub fn from_amplitudes(grid: PixelGrid, mut amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::Geometry(format!(
                "mode has {} amplitudes for a {}-pixel grid",
                amplitudes.len(),
                grid.len()
            )));
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::Validation("mode amplitudes must be finite".into()));
        }
        let norm2: f64 = amplitudes.iter().map(|a| a * a).sum();
        if norm2 <= 0.0 {
            return Err(Error::Validation(
                "mode profile is identically zero".into(),
            ));
        }
        let inv = 1.0 / norm2.sqrt();
        for a in &mut amplitudes {
            *a *= inv;
        }
        Ok(ModeFunction { grid, amplitudes })
    }

    /// Gaussian profile `U(x) ∝ exp(−r²/w²)` centred at `center` (pixel
    /// coordinates), with `w = waist_px`.
    ///
    /// The waist must fit inside the grid: `waist_px ≤ min(width, height)/2`.
    pub fn gaussian(grid: PixelGrid, waist_px: f64, center: (f64, f64)) -> Result<Self> {
        if !(waist_px > 0.0) {
            return Err(Error::domain("waist_px", waist_px, "waist_px > 0"));
        }
        let limit = f64::from(grid.width.min(grid.height)) / 2.0;
        if waist_px > limit {
            return Err(Error::Geometry(format!(
                "waist {waist_px} px does not fit a {}x{} grid (limit {limit})",
                grid.width, grid.height
            )));
        }
        let w2 = waist_px * waist_px;
        let mut amplitudes = Vec::with_capacity(grid.len());
        for y in 0..grid.height {
            for x in 0..grid.width {
                let dx = x as f64 - center.0;
                let dy = y as f64 - center.1;
                amplitudes.push((-(dx * dx + dy * dy) / w2).exp());
            }
        }
        Self::from_amplitudes(grid, amplitudes)
    }

    /// Uniform (flat-top) profile covering the whole grid.
    pub fn flat(grid: PixelGrid) -> Self {
        let n = grid.len();
        let a = 1.0 / (n as f64).sqrt();
        ModeFunction {
            grid,
            amplitudes: vec![a; n],
        }
    }

    /// A family of `count` mutually orthonormal modes whose first member is
    /// the centred Gaussian of the given waist.
    ///
    /// Members are built as a Hermite-polynomial ladder along x and then
    /// re-orthonormalized on the discrete grid, so the Gram matrix is the
    /// identity to machine precision regardless of sampling.
    pub fn orthogonal_family(grid: PixelGrid, waist_px: f64, count: u32) -> Result<Vec<Self>> {
        if count < 1 || count > MAX_MODE_FAMILY {
            return Err(Error::domain(
                "count",
                count as f64,
                "1 <= count <= 16 orthogonal modes",
            ));
        }
        let base = Self::gaussian(grid, waist_px, grid.center())?;
        let (cx, cy) = grid.center();
        let mut raw: Vec<Vec<f64>> = Vec::with_capacity(count as usize);
        for k in 0..count {
            let mut amps = Vec::with_capacity(grid.len());
            for y in 0..grid.height {
                for x in 0..grid.width {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    let u = std::f64::consts::SQRT_2 * dx / waist_px;
                    let g = (-(dx * dx + dy * dy) / (waist_px * waist_px)).exp();
                    amps.push(hermite(k, u) * g);
                }
            }
            raw.push(amps);
        }
        // Modified Gram-Schmidt; the first mode keeps its Gaussian shape.
        let mut family: Vec<ModeFunction> = Vec::with_capacity(count as usize);
        for (k, mut amps) in raw.into_iter().enumerate() {
            for prev in &family {
                let proj: f64 = amps
                    .iter()
                    .zip(&prev.amplitudes)
                    .map(|(a, b)| a * b)
                    .sum();
                for (a, b) in amps.iter_mut().zip(&prev.amplitudes) {
                    *a -= proj * b;
                }
            }
            let mode = Self::from_amplitudes(grid, amps).map_err(|_| {
                Error::Geometry(format!(
                    "grid too coarse to carry {count} orthogonal modes (failed at mode {k})"
                ))
            })?;
            family.push(mode);
        }
        debug_assert!(family[0].overlap(&base).unwrap() > 1.0 - 1e-9);
        Ok(family)
    }

    /// Independent coherence cells tiling the grid: one flat mode per
    /// `cell_px × cell_px` square, the speckle structure of a pseudo-thermal
    /// (rotating-diffuser) source whose coherence area is one cell.
    ///
    /// Both grid dimensions must be multiples of `cell_px`. The modes have
    /// disjoint supports and are therefore exactly orthonormal.
    pub fn speckle_cells(grid: PixelGrid, cell_px: u32) -> Result<Vec<Self>> {
        if cell_px == 0 || grid.width % cell_px != 0 || grid.height % cell_px != 0 {
            return Err(Error::Geometry(format!(
                "cell size {cell_px} does not tile a {}x{} grid",
                grid.width, grid.height
            )));
        }
        let amp = 1.0 / f64::from(cell_px);
        let mut cells = Vec::new();
        for cy in (0..grid.height).step_by(cell_px as usize) {
            for cx in (0..grid.width).step_by(cell_px as usize) {
                let mut amplitudes = vec![0.0; grid.len()];
                for y in cy..cy + cell_px {
                    for x in cx..cx + cell_px {
                        amplitudes[grid.index(x, y)] = amp;
                    }
                }
                cells.push(ModeFunction { grid, amplitudes });
            }
        }
        Ok(cells)
    }

    /// Normalized overlap `|Σ_x a(x)·b(x)|` between two modes on the same
    /// grid. Both inputs are unit-norm, so the result lies in `[0, 1]`.
    pub fn overlap(&self, other: &ModeFunction) -> Result<f64> {
        self.grid.check_same(&other.grid, "mode overlap")?;
        let dot: f64 = self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a * b)
            .sum();
        Ok(dot.abs().min(1.0))
    }

    pub fn grid(&self) -> &PixelGrid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.amplitudes[index]
    }

    /// `Σ U²` restricted to a pixel subset.
    pub fn power_in(&self, region: &[usize]) -> f64 {
        region.iter().map(|&i| self.amplitudes[i].powi(2)).sum()
    }
}

/// Physicists' Hermite polynomial `H_k(u)` by the three-term recurrence.
fn hermite(k: u32, u: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0 * u,
        _ => {
            let mut hm = 1.0;
            let mut h = 2.0 * u;
            for n in 1..k {
                let next = 2.0 * u * h - 2.0 * n as f64 * hm;
                hm = h;
                h = next;
            }
            h
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_is_normalized_and_peaks_at_center() {
        let grid = PixelGrid::new(128, 128).unwrap();
        let mode = ModeFunction::gaussian(grid, 20.0, grid.center()).unwrap();
        let norm2: f64 = mode.amplitudes().iter().map(|a| a * a).sum();
        assert_relative_eq!(norm2, 1.0, epsilon = NORM_TOLERANCE);
        let peak = mode
            .amplitudes()
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        let center_idx = grid.index(63, 63);
        // centre straddles four pixels; each carries the maximum
        assert_relative_eq!(mode.get(center_idx), peak);
    }

    #[test]
    fn single_pixel_grid_normalizes_to_unit_amplitude() {
        let grid = PixelGrid::new(1, 1).unwrap();
        let mode = ModeFunction::gaussian(grid, 0.4, grid.center()).unwrap();
        assert_relative_eq!(mode.get(0), 1.0);
    }

    #[test]
    fn gaussian_rejects_waist_larger_than_half_grid() {
        let grid = PixelGrid::new(32, 64).unwrap();
        assert!(ModeFunction::gaussian(grid, 17.0, grid.center()).is_err());
        assert!(ModeFunction::gaussian(grid, 16.0, grid.center()).is_ok());
    }

    #[test]
    fn gaussian_construction_is_deterministic() {
        let grid = PixelGrid::new(64, 64).unwrap();
        let a = ModeFunction::gaussian(grid, 12.0, (30.0, 33.5)).unwrap();
        let b = ModeFunction::gaussian(grid, 12.0, (30.0, 33.5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn family_of_one_is_the_gaussian() {
        let grid = PixelGrid::new(64, 64).unwrap();
        let family = ModeFunction::orthogonal_family(grid, 10.0, 1).unwrap();
        let gauss = ModeFunction::gaussian(grid, 10.0, grid.center()).unwrap();
        assert_eq!(family.len(), 1);
        assert_relative_eq!(family[0].overlap(&gauss).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn family_gram_matrix_is_identity() {
        let grid = PixelGrid::new(96, 96).unwrap();
        let family = ModeFunction::orthogonal_family(grid, 12.0, 5).unwrap();
        for (j, a) in family.iter().enumerate() {
            for (k, b) in family.iter().enumerate() {
                let dot = a.overlap(b).unwrap();
                if j == k {
                    assert_relative_eq!(dot, 1.0, epsilon = NORM_TOLERANCE);
                } else {
                    assert!(dot < ORTHOGONALITY_TOLERANCE, "modes {j},{k}: {dot}");
                }
            }
        }
    }

    #[test]
    fn family_size_is_bounded() {
        let grid = PixelGrid::new(64, 64).unwrap();
        assert!(ModeFunction::orthogonal_family(grid, 10.0, 0).is_err());
        assert!(ModeFunction::orthogonal_family(grid, 10.0, 17).is_err());
    }

    #[test]
    fn overlap_of_identical_modes_is_one() {
        let grid = PixelGrid::new(32, 32).unwrap();
        let mode = ModeFunction::gaussian(grid, 6.0, grid.center()).unwrap();
        assert_relative_eq!(mode.overlap(&mode).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn overlap_of_shifted_gaussians_matches_continuum_value() {
        // For amplitude profiles exp(−r²/w²), a centre displacement d gives
        // a continuum overlap of exp(−d²/(2w²)); the pixel sum converges to
        // it once the beam is well resolved.
        let grid = PixelGrid::new(128, 128).unwrap();
        let w = 14.0;
        let a = ModeFunction::gaussian(grid, w, (56.0, 63.5)).unwrap();
        let b = ModeFunction::gaussian(grid, w, (56.0 + w, 63.5)).unwrap();
        let expected = (-(w * w) / (2.0 * w * w)).exp();
        assert_relative_eq!(a.overlap(&b).unwrap(), expected, epsilon = 1e-4);
    }

    #[test]
    fn overlap_requires_matching_grids() {
        let a = ModeFunction::flat(PixelGrid::new(8, 8).unwrap());
        let b = ModeFunction::flat(PixelGrid::new(8, 9).unwrap());
        assert!(a.overlap(&b).is_err());
    }

    #[test]
    fn speckle_cells_tile_and_are_orthonormal() {
        let grid = PixelGrid::new(12, 8).unwrap();
        let cells = ModeFunction::speckle_cells(grid, 4).unwrap();
        assert_eq!(cells.len(), 6);
        for (j, a) in cells.iter().enumerate() {
            for (k, b) in cells.iter().enumerate() {
                let dot = a.overlap(b).unwrap();
                if j == k {
                    assert_relative_eq!(dot, 1.0, epsilon = 1e-12);
                } else {
                    assert_eq!(dot, 0.0);
                }
            }
        }
        // every pixel belongs to exactly one cell
        let coverage: f64 = cells.iter().map(|c| c.power_in(&[13])).sum();
        assert_relative_eq!(coverage, 1.0 / 16.0, epsilon = 1e-12);
        assert!(ModeFunction::speckle_cells(grid, 5).is_err());
    }

    #[test]
    fn flat_mode_power_is_uniform() {
        let grid = PixelGrid::new(16, 4).unwrap();
        let mode = ModeFunction::flat(grid);
        assert_relative_eq!(mode.get(0), (1.0 / 64.0f64).sqrt());
        assert_relative_eq!(mode.power_in(&[0, 1, 2]), 3.0 / 64.0, epsilon = 1e-12);
    }
}
