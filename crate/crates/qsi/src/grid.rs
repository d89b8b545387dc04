//! Pixel grids, disk neighbourhoods and transmission masks.
//!
//! All image-like data in this crate is stored row-major over a [`PixelGrid`].
//! Pixel coordinates are zero-based with `x` running along a row and `y`
//! selecting the row.

use crate::error::{Error, Result};

/// Largest allowed pixel count per grid (memory guard).
pub const MAX_PIXELS: u64 = 1 << 26;

/// Default physical pixel pitch in micrometers (13 μm square pixels).
pub const DEFAULT_PIXEL_PITCH_UM: f64 = 13.0;

/// Camera geometry: size in pixels plus the physical pixel pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelGrid {
    pub width: u32,
    pub height: u32,
    pub pixel_pitch_um: f64,
}

impl PixelGrid {
    /// A grid with the default 13 μm pitch.
    pub fn new(width: u32, height: u32) -> Result<Self> {
        Self::with_pitch(width, height, DEFAULT_PIXEL_PITCH_UM)
    }

    pub fn with_pitch(width: u32, height: u32, pixel_pitch_um: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!(
                "grid dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if width as u64 * height as u64 > MAX_PIXELS {
            return Err(Error::Geometry(format!(
                "grid {width}x{height} exceeds the {MAX_PIXELS}-pixel limit"
            )));
        }
        if !(pixel_pitch_um > 0.0) {
            return Err(Error::Geometry(format!(
                "pixel pitch must be positive, got {pixel_pitch_um}"
            )));
        }
        Ok(PixelGrid {
            width,
            height,
            pixel_pitch_um,
        })
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        false // construction forbids empty grids
    }

    /// Row-major linear index of `(x, y)`.
    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    /// Inverse of [`PixelGrid::index`].
    #[inline]
    pub fn coords(&self, index: usize) -> (u32, u32) {
        let w = self.width as usize;
        ((index % w) as u32, (index / w) as u32)
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    /// Geometric centre in pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    /// Errors unless both grids share the same pixel dimensions.
    pub fn check_same(&self, other: &PixelGrid, what: &str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Geometry(format!(
                "{what}: grids differ ({}x{} vs {}x{})",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Offsets `(dx, dy)` of all pixels within Euclidean distance `radius` of the
/// origin, i.e. `dx² + dy² ≤ radius²`. Sorted row-major for determinism.
pub fn disk_offsets(radius: u32) -> Vec<(i32, i32)> {
    let r = radius as i64;
    let r2 = r * r;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r2 {
                out.push((dx as i32, dy as i32));
            }
        }
    }
    out
}

/// Number of pixels in a full (interior) disk of the given radius.
///
/// The Euclidean-disk convention gives 1, 5, 13, 29, 49, 81, 113, ... for
/// radii 0, 1, 2, 3, 4, 5, 6, ...
pub fn disk_area(radius: u32) -> usize {
    let r = radius as i64;
    let r2 = r * r;
    let mut count = 0usize;
    for dy in -r..=r {
        let span = ((r2 - dy * dy) as f64).sqrt().floor() as i64;
        count += (2 * span + 1) as usize;
    }
    count
}

/// Linear indices of the in-grid pixels within `radius` of `center`.
///
/// The centre is rounded to the nearest pixel so that interior disks have
/// exactly [`disk_area`] pixels.
pub fn disk_region(grid: &PixelGrid, center: (f64, f64), radius: u32) -> Vec<usize> {
    let cx = center.0.round() as i64;
    let cy = center.1.round() as i64;
    disk_offsets(radius)
        .iter()
        .filter_map(|&(dx, dy)| {
            let x = cx + dx as i64;
            let y = cy + dy as i64;
            grid.contains(x, y)
                .then(|| grid.index(x as u32, y as u32))
        })
        .collect()
}

/// Per-pixel intensity transmittance of the imaged object, `t(x) ∈ [0, 1]`.
///
/// The stored value is the *intensity* transmittance; the field amplitude is
/// attenuated by `√t(x)`. For binary (opaque/transparent) objects the two
/// conventions coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMask {
    grid: PixelGrid,
    t: Vec<f64>,
}

impl TransmissionMask {
    pub fn from_values(grid: PixelGrid, t: Vec<f64>) -> Result<Self> {
        if t.len() != grid.len() {
            return Err(Error::Geometry(format!(
                "mask has {} values for a {}-pixel grid",
                t.len(),
                grid.len()
            )));
        }
        let bad: Vec<String> = t
            .iter()
            .enumerate()
            .filter(|(_, v)| !(0.0..=1.0).contains(*v) || !v.is_finite())
            .take(8)
            .map(|(i, v)| {
                let (x, y) = grid.coords(i);
                format!("({x},{y})={v}")
            })
            .collect();
        if !bad.is_empty() {
            return Err(Error::Validation(format!(
                "mask values outside [0,1] at {}",
                bad.join(", ")
            )));
        }
        Ok(TransmissionMask { grid, t })
    }

    /// Uniform transmittance everywhere.
    pub fn uniform(grid: PixelGrid, t: f64) -> Result<Self> {
        let n = grid.len();
        Self::from_values(grid, vec![t; n])
    }

    /// Fully transparent mask (no object).
    pub fn transparent(grid: PixelGrid) -> Self {
        let n = grid.len();
        TransmissionMask {
            grid,
            t: vec![1.0; n],
        }
    }

    /// Opaque left half-plane: `t = 0` for `x < width/2`, `t = 1` elsewhere.
    pub fn half_blocked(grid: PixelGrid) -> Self {
        let split = grid.width / 2;
        let mut t = vec![1.0; grid.len()];
        for y in 0..grid.height {
            for x in 0..split {
                t[grid.index(x, y)] = 0.0;
            }
        }
        TransmissionMask { grid, t }
    }

    /// Procedural insect-wing test object: a rotated elliptical membrane of
    /// intermediate transmittance crossed by opaque veins, on a transparent
    /// background. Deterministic; useful for end-to-end reconstruction demos.
    pub fn wing(grid: PixelGrid) -> Self {
        let (cx, cy) = grid.center();
        let w = grid.width as f64;
        let h = grid.height as f64;
        let (sa, ca) = (20f64.to_radians().sin(), 20f64.to_radians().cos());
        let (ax, ay) = (0.38 * w, 0.20 * h);
        let root = (cx - 0.30 * w, cy);
        let vein_angles: [f64; 4] = [-24.0, -9.0, 6.0, 21.0];
        let mut t = vec![1.0; grid.len()];
        for y in 0..grid.height {
            for x in 0..grid.width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                // rotate into the ellipse frame
                let u = dx * ca + dy * sa;
                let v = -dx * sa + dy * ca;
                let inside = (u / ax).powi(2) + (v / ay).powi(2) <= 1.0;
                if !inside {
                    continue;
                }
                let mut value = 0.65; // membrane
                for ang in vein_angles {
                    let (s, c) = ang.to_radians().sin_cos();
                    let rx = x as f64 - root.0;
                    let ry = y as f64 - root.1;
                    let along = rx * c + ry * s;
                    let across = -rx * s + ry * c;
                    if along >= 0.0 && across.abs() <= 1.2 {
                        value = 0.0; // vein
                        break;
                    }
                }
                t[grid.index(x, y)] = value;
            }
        }
        TransmissionMask { grid, t }
    }

    pub fn grid(&self) -> &PixelGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.t[index]
    }
}
