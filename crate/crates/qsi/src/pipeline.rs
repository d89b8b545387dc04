//! Reconstruction chain: binning, variance maps, transmission maps, region
//! statistics and photon-number calibration.
//!
//! The estimator for the normalized temporal variance within one cluster is
//! the raw-second-moment ratio
//!
//! ```text
//! V(x) = ⟨(N₁(x) − N₂(x))²⟩ / ⟨N₁(x) + N₂(x)⟩
//! ```
//!
//! averaged over the cluster's usable frames; the per-cluster maps are then
//! averaged over all clusters. No mean subtraction is applied because the
//! difference has zero mean analytically; a mean-subtracted variant exists
//! for real-data robustness but is off by default.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::grid::{disk_area, disk_offsets, PixelGrid};
use crate::simulator::FrameCluster;
use crate::statistics::{self, DEFAULT_EPSILON};

/// Pixel-wise normalized variance with acquisition provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    pub grid: PixelGrid,
    /// Normalized variance per pixel; 0.0 at excluded pixels.
    pub v: Vec<f64>,
    /// Pixels where the mean binned sum was non-positive in some cluster.
    pub excluded: Vec<bool>,
    /// Number of clusters averaged (M).
    pub cluster_count: usize,
    /// Binning radius (R) applied to the raw counts.
    pub bin_radius: u32,
    /// Mean binned sum ⟨N₁+N₂⟩ per pixel, for diagnostics.
    pub mean_sum: Vec<f64>,
}

/// Pixel-wise transmittance estimate derived from two variance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    pub grid: PixelGrid,
    /// Unclamped estimate; 0.0 at excluded pixels.
    pub t_est: Vec<f64>,
    pub excluded: Vec<bool>,
    pub bin_radius: u32,
    pub probe_clusters: usize,
    pub ref_clusters: usize,
}

/// Role a region of interest plays in the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiLabel {
    Blocked,
    Unblocked,
    Excluded,
}

/// Geometric description of a region of interest.
#[derive(Debug, Clone, PartialEq)]
pub enum RoiShape {
    /// Inclusive rectangle anchored at `(x, y)`.
    Rect { x: u32, y: u32, width: u32, height: u32 },
    /// Pixels within `radius` of the (possibly fractional) centre.
    Disk { cx: f64, cy: f64, radius: f64 },
    /// Pixels with `r_in ≤ distance ≤ r_out`.
    Annulus { cx: f64, cy: f64, r_in: f64, r_out: f64 },
    /// Explicit pixel list (linear indices).
    Pixels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roi {
    pub shape: RoiShape,
    pub label: RoiLabel,
}

impl Roi {
    pub fn new(shape: RoiShape, label: RoiLabel) -> Self {
        Roi { shape, label }
    }

    /// Resolves the shape to in-grid linear indices; errors if empty or out
    /// of bounds.
    pub fn resolve(&self, grid: &PixelGrid) -> Result<Vec<usize>> {
        let pixels = match &self.shape {
            RoiShape::Rect { x, y, width, height } => {
                if *width == 0 || *height == 0 {
                    return Err(Error::Statistics("empty rectangle".into()));
                }
                let x1 = x.checked_add(*width).ok_or_else(roi_bounds)?;
                let y1 = y.checked_add(*height).ok_or_else(roi_bounds)?;
                if x1 > grid.width || y1 > grid.height {
                    return Err(roi_bounds());
                }
                let mut out = Vec::with_capacity((*width as usize) * (*height as usize));
                for yy in *y..y1 {
                    for xx in *x..x1 {
                        out.push(grid.index(xx, yy));
                    }
                }
                out
            }
            RoiShape::Disk { cx, cy, radius } => {
                ring_pixels(grid, (*cx, *cy), 0.0, *radius)
            }
            RoiShape::Annulus { cx, cy, r_in, r_out } => {
                ring_pixels(grid, (*cx, *cy), *r_in, *r_out)
            }
            RoiShape::Pixels(list) => {
                if list.iter().any(|&i| i >= grid.len()) {
                    return Err(roi_bounds());
                }
                list.clone()
            }
        };
        if pixels.is_empty() {
            return Err(Error::Statistics("region of interest is empty".into()));
        }
        Ok(pixels)
    }
}

fn roi_bounds() -> Error {
    Error::Statistics("region of interest extends outside the grid".into())
}

fn ring_pixels(grid: &PixelGrid, center: (f64, f64), r_in: f64, r_out: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for y in 0..grid.height {
        for x in 0..grid.width {
            let d = ((x as f64 - center.0).powi(2) + (y as f64 - center.1).powi(2)).sqrt();
            if d >= r_in && d <= r_out {
                out.push(grid.index(x, y));
            }
        }
    }
    out
}

/// Anything with a per-pixel scalar value and an exclusion flag.
pub trait ScalarField {
    fn grid(&self) -> &PixelGrid;
    /// `None` for excluded pixels.
    fn value(&self, index: usize) -> Option<f64>;
}

impl ScalarField for VarianceMap {
    fn grid(&self) -> &PixelGrid {
        &self.grid
    }
    fn value(&self, index: usize) -> Option<f64> {
        (!self.excluded[index]).then(|| self.v[index])
    }
}

impl ScalarField for TransmissionMap {
    fn grid(&self) -> &PixelGrid {
        &self.grid
    }
    fn value(&self, index: usize) -> Option<f64> {
        (!self.excluded[index]).then(|| self.t_est[index])
    }
}

/// Replaces each pixel by the sum of all pixels within Euclidean distance
/// `radius` (disk kernel). Edge pixels sum over the in-grid part of the
/// disk; nothing is padded or renormalized.
///
/// `radius = 0` is the identity. The kernel is evaluated with per-row prefix
/// sums, so the cost is `O(width·height·radius)`.
pub fn bin_counts(values: &[f64], grid: &PixelGrid, radius: u32) -> Result<Vec<f64>> {
    if values.len() != grid.len() {
        return Err(Error::Geometry(format!(
            "frame has {} values for a {}-pixel grid",
            values.len(),
            grid.len()
        )));
    }
    if radius > grid.width.min(grid.height) / 2 {
        return Err(Error::Geometry(format!(
            "binning radius {radius} too large for a {}x{} grid",
            grid.width, grid.height
        )));
    }
    if radius == 0 {
        return Ok(values.to_vec());
    }
    let w = grid.width as usize;
    let h = grid.height as usize;
    // prefix[y][x] = sum of row y up to but excluding column x
    let mut prefix = vec![0.0f64; (w + 1) * h];
    for y in 0..h {
        let row = &values[y * w..(y + 1) * w];
        let pre = &mut prefix[y * (w + 1)..(y + 1) * (w + 1)];
        let mut acc = 0.0;
        for (x, v) in row.iter().enumerate() {
            acc += v;
            pre[x + 1] = acc;
        }
    }
    let r = radius as i64;
    // half-width of the disk at each row offset
    let half: Vec<i64> = (-r..=r)
        .map(|dy| (((r * r - dy * dy) as f64).sqrt().floor()) as i64)
        .collect();
    let mut out = vec![0.0f64; w * h];
    for y in 0..h as i64 {
        for (dy, hw) in (-r..=r).zip(&half) {
            let yy = y + dy;
            if yy < 0 || yy >= h as i64 {
                continue;
            }
            let pre = &prefix[yy as usize * (w + 1)..(yy as usize + 1) * (w + 1)];
            let row_out = &mut out[y as usize * w..(y as usize + 1) * w];
            for (x, slot) in row_out.iter_mut().enumerate() {
                let lo = (x as i64 - hw).max(0) as usize;
                let hi = ((x as i64 + hw + 1).min(w as i64)) as usize;
                *slot += pre[hi] - pre[lo];
            }
        }
    }
    Ok(out)
}

fn to_f64(plane: &[f32]) -> Vec<f64> {
    plane.iter().map(|&v| f64::from(v)).collect()
}

struct ClusterVariance {
    v: Vec<f64>,
    mean_sum: Vec<f64>,
    excluded: Vec<bool>,
}

fn cluster_variance(cluster: &FrameCluster, radius: u32) -> Result<ClusterVariance> {
    let grid = cluster.grid;
    let npix = grid.len();
    let mut sum_d2 = vec![0.0f64; npix];
    let mut sum_s = vec![0.0f64; npix];
    let mut frames = 0usize;
    for frame in cluster.usable_frames() {
        let n1 = bin_counts(&to_f64(&frame.n1), &grid, radius)?;
        let n2 = bin_counts(&to_f64(&frame.n2), &grid, radius)?;
        for i in 0..npix {
            let d = n1[i] - n2[i];
            sum_d2[i] += d * d;
            sum_s[i] += n1[i] + n2[i];
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Statistics("cluster has no usable frames".into()));
    }
    let mut v = vec![0.0f64; npix];
    let mut mean_sum = vec![0.0f64; npix];
    let mut excluded = vec![false; npix];
    let inv = 1.0 / frames as f64;
    for i in 0..npix {
        mean_sum[i] = sum_s[i] * inv;
        if sum_s[i] > 0.0 {
            v[i] = sum_d2[i] / sum_s[i];
        } else {
            excluded[i] = true;
        }
    }
    Ok(ClusterVariance {
        v,
        mean_sum,
        excluded,
    })
}

/// Builds the normalized variance map of a cluster stack.
///
/// Raw counts are binned first; differences and sums are formed from the
/// binned planes; the per-cluster variance maps are averaged in stack order.
/// Pixels whose mean binned sum was non-positive in any cluster are flagged
/// excluded rather than failing the whole map.
pub fn variance_map(clusters: &[FrameCluster], radius: u32) -> Result<VarianceMap> {
    let first = clusters
        .first()
        .ok_or_else(|| Error::Statistics("variance map needs at least one cluster".into()))?;
    let grid = first.grid;
    for (i, c) in clusters.iter().enumerate() {
        grid.check_same(&c.grid, "variance map cluster")?;
        if c.usable_indices != first.usable_indices {
            return Err(Error::Config(format!(
                "cluster {i} has different usable indices than cluster 0"
            )));
        }
    }
    let per_cluster: Vec<ClusterVariance> = clusters
        .par_iter()
        .map(|c| cluster_variance(c, radius))
        .collect::<Result<_>>()?;

    let npix = grid.len();
    let m = clusters.len() as f64;
    let mut v = vec![0.0f64; npix];
    let mut mean_sum = vec![0.0f64; npix];
    let mut excluded = vec![false; npix];
    for cv in &per_cluster {
        for i in 0..npix {
            v[i] += cv.v[i];
            mean_sum[i] += cv.mean_sum[i];
            excluded[i] |= cv.excluded[i];
        }
    }
    for i in 0..npix {
        if excluded[i] {
            v[i] = 0.0;
        } else {
            v[i] /= m;
        }
        mean_sum[i] /= m;
    }
    Ok(VarianceMap {
        grid,
        v,
        excluded,
        cluster_count: clusters.len(),
        bin_radius: radius,
        mean_sum,
    })
}

/// Pixel-wise transmittance from probe and reference variance maps, with
/// the default degenerate-reference threshold.
pub fn transmission_map(v_probe: &VarianceMap, v_ref: &VarianceMap) -> Result<TransmissionMap> {
    transmission_map_eps(v_probe, v_ref, DEFAULT_EPSILON)
}

/// Pixels where the reference excess `v_ref − 1` falls below `epsilon`, or
/// that are excluded in either input, are flagged excluded in the output.
pub fn transmission_map_eps(
    v_probe: &VarianceMap,
    v_ref: &VarianceMap,
    epsilon: f64,
) -> Result<TransmissionMap> {
    v_probe.grid.check_same(&v_ref.grid, "transmission map")?;
    if v_probe.bin_radius != v_ref.bin_radius {
        return Err(Error::Config(format!(
            "bin radius mismatch: probe R={} vs reference R={}",
            v_probe.bin_radius, v_ref.bin_radius
        )));
    }
    let npix = v_probe.grid.len();
    let mut t_est = vec![0.0f64; npix];
    let mut excluded = vec![false; npix];
    for i in 0..npix {
        if v_probe.excluded[i] || v_ref.excluded[i] {
            excluded[i] = true;
            continue;
        }
        match statistics::transmission_from_variance_eps(v_probe.v[i], v_ref.v[i], epsilon) {
            Ok(t) => t_est[i] = t,
            Err(_) => excluded[i] = true,
        }
    }
    Ok(TransmissionMap {
        grid: v_probe.grid,
        t_est,
        excluded,
        bin_radius: v_probe.bin_radius,
        probe_clusters: v_probe.cluster_count,
        ref_clusters: v_ref.cluster_count,
    })
}

fn roi_stats<F: ScalarField>(map: &F, pixels: &[usize]) -> Result<(f64, f64, usize)> {
    let values: Vec<f64> = pixels.iter().filter_map(|&i| map.value(i)).collect();
    if values.len() < 2 {
        return Err(Error::Statistics(format!(
            "region of interest has {} valid pixels; need at least 2",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // population variance, matching ΔS² = ⟨S²⟩ − ⟨S⟩²
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var, values.len()))
}

/// Single-shot-equivalent SNR between two regions of interest:
///
/// ```text
/// SNR = (S_unblocked − S_blocked) / (√(ΔS²_unblocked + ΔS²_blocked) · √M)
/// ```
///
/// `S` is the spatial mean and `ΔS²` the spatial variance of the map over
/// each region; dividing by `√M` (the number of averaged clusters) converts
/// the M-cluster measurement into its single-shot equivalent. Works on
/// either a variance map or a transmission map.
pub fn roi_snr<F: ScalarField>(
    map: &F,
    roi_unblocked: &Roi,
    roi_blocked: &Roi,
    clusters: usize,
) -> Result<f64> {
    if clusters < 1 {
        return Err(Error::Statistics("cluster count must be at least 1".into()));
    }
    let unblocked = roi_unblocked.resolve(map.grid())?;
    let blocked = roi_blocked.resolve(map.grid())?;
    let mut seen = vec![false; map.grid().len()];
    for &i in &unblocked {
        seen[i] = true;
    }
    if blocked.iter().any(|&i| seen[i]) {
        return Err(Error::Statistics(
            "regions of interest overlap; they must be disjoint".into(),
        ));
    }
    let (mean_u, var_u, _) = roi_stats(map, &unblocked)?;
    let (mean_b, var_b, _) = roi_stats(map, &blocked)?;
    let numerator = mean_u - mean_b;
    let noise = (var_u + var_b).sqrt();
    if noise == 0.0 {
        if numerator == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Statistics(
            "zero spatial variance in both regions with a non-zero signal".into(),
        ));
    }
    Ok(numerator / (noise * (clusters as f64).sqrt()))
}

/// Image contrast between two regions of a variance map: the Michelson
/// ratio of the regions' mean thermal excesses.
pub fn contrast_from_map(
    v_map: &VarianceMap,
    roi_bright: &Roi,
    roi_dark: &Roi,
) -> Result<f64> {
    let bright = roi_bright.resolve(&v_map.grid)?;
    let dark = roi_dark.resolve(&v_map.grid)?;
    let (mean_bright, _, _) = roi_stats(v_map, &bright)?;
    let (mean_dark, _, _) = roi_stats(v_map, &dark)?;
    statistics::contrast(mean_bright, mean_dark)
}

/// Photon-number calibration from the variance-vs-detection-area line.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// Fitted slope of V against detection area (pixels).
    pub slope: f64,
    pub intercept: f64,
    /// 1σ uncertainty on the slope.
    pub slope_ci: f64,
    /// 1σ uncertainty on the intercept.
    pub intercept_ci: f64,
    /// Mean photons per pixel: slope/2.
    pub n_pxl: f64,
    /// Detection areas (pixels) the fit used.
    pub areas_used: Vec<usize>,
    /// Rough mode-count estimate when saturation has been diagnosed.
    pub saturation_j_estimate: Option<f64>,
}

/// Per-cluster binned variance curves at a single centre pixel: the
/// detection areas and, for each cluster, `V̂(area)`.
fn binned_variance_curves(
    clusters: &[FrameCluster],
    center: (f64, f64),
    radii: &[u32],
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let first = clusters
        .first()
        .ok_or_else(|| Error::Statistics("need at least one cluster".into()))?;
    let grid = first.grid;
    let cx = center.0.round() as i64;
    let cy = center.1.round() as i64;
    if !grid.contains(cx, cy) {
        return Err(Error::Geometry(format!(
            "calibration centre ({cx},{cy}) outside the grid"
        )));
    }
    let max_radius = *radii.iter().max().unwrap_or(&0);
    if max_radius > grid.width.min(grid.height) / 2 {
        return Err(Error::Geometry(format!(
            "radius {max_radius} too large for a {}x{} grid",
            grid.width, grid.height
        )));
    }

    // per-radius in-grid pixel lists around the centre
    let regions: Vec<Vec<usize>> = radii
        .iter()
        .map(|&r| {
            disk_offsets(r)
                .iter()
                .filter_map(|&(dx, dy)| {
                    let x = cx + dx as i64;
                    let y = cy + dy as i64;
                    grid.contains(x, y).then(|| grid.index(x as u32, y as u32))
                })
                .collect()
        })
        .collect();

    let per_cluster: Vec<Vec<f64>> = clusters
        .par_iter()
        .map(|cluster| {
            regions
                .iter()
                .map(|region| {
                    let mut sum_d2 = 0.0;
                    let mut sum_s = 0.0;
                    for frame in cluster.usable_frames() {
                        let mut d = 0.0;
                        let mut s = 0.0;
                        for &i in region {
                            let a = f64::from(frame.n1[i]);
                            let b = f64::from(frame.n2[i]);
                            d += a - b;
                            s += a + b;
                        }
                        sum_d2 += d * d;
                        sum_s += s;
                    }
                    if sum_s <= 0.0 {
                        return Err(Error::Statistics(
                            "non-positive mean sum at the calibration centre".into(),
                        ));
                    }
                    Ok(sum_d2 / sum_s)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    Ok((regions.iter().map(Vec::len).collect(), per_cluster))
}

/// Cluster-averaged variance-vs-area curve.
fn binned_variance_at(
    clusters: &[FrameCluster],
    center: (f64, f64),
    radii: &[u32],
) -> Result<Vec<(usize, f64)>> {
    let (areas, per_cluster) = binned_variance_curves(clusters, center, radii)?;
    let m = per_cluster.len() as f64;
    Ok(areas
        .iter()
        .enumerate()
        .map(|(ri, &a)| {
            let v = per_cluster.iter().map(|row| row[ri]).sum::<f64>() / m;
            (a, v)
        })
        .collect())
}

/// Fits the variance-vs-area line `V = slope·a + intercept` at the given
/// beam centre and reports the per-pixel photon number `slope/2`.
///
/// Radii must be sorted ascending and stay within the linear regime
/// (maximum 10); at least three are needed for the fit, and at least two
/// clusters for the uncertainties.
///
/// The fit itself is equal-weight OLS on the cluster-averaged curve. The
/// parameter uncertainties, however, come from the scatter of per-cluster
/// fits: the thermal excess at every radius is driven by the same few
/// quadrature draws, so the curve's noise is strongly correlated across
/// areas and residual-based errors would be far too small. OLS is linear in
/// the ordinates, so the stack fit equals the mean of the per-cluster fits
/// and the standard error over clusters is exact.
pub fn calibrate(
    clusters: &[FrameCluster],
    radii: &[u32],
    center: (f64, f64),
) -> Result<CalibrationResult> {
    if radii.len() < 3 {
        return Err(Error::Fit(format!(
            "calibration needs at least 3 radii, got {}",
            radii.len()
        )));
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Fit("radii must be sorted strictly ascending".into()));
    }
    if *radii.last().unwrap() > 10 {
        return Err(Error::Fit(
            "calibration radii beyond 10 leave the linear regime".into(),
        ));
    }
    if clusters.len() < 2 {
        return Err(Error::Fit(
            "calibration uncertainties need at least 2 clusters".into(),
        ));
    }
    let (areas, per_cluster) = binned_variance_curves(clusters, center, radii)?;
    let x: Vec<f64> = areas.iter().map(|&a| a as f64).collect();
    let m = per_cluster.len() as f64;
    let mean_curve: Vec<f64> = (0..x.len())
        .map(|ri| per_cluster.iter().map(|row| row[ri]).sum::<f64>() / m)
        .collect();
    let fit: LinearFit = linear_fit(&x, &mean_curve)?;

    let cluster_fits: Vec<LinearFit> = per_cluster
        .iter()
        .map(|row| linear_fit(&x, row))
        .collect::<Result<_>>()?;
    let spread = |f: fn(&LinearFit) -> f64, center: f64| {
        let ss: f64 = cluster_fits.iter().map(|c| (f(c) - center).powi(2)).sum();
        (ss / (m * (m - 1.0))).sqrt()
    };
    Ok(CalibrationResult {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_ci: spread(|f| f.slope, fit.slope),
        intercept_ci: spread(|f| f.intercept, fit.intercept),
        n_pxl: fit.slope / 2.0,
        areas_used: areas,
        saturation_j_estimate: None,
    })
}

/// Measures the variance-vs-area curve at arbitrary radii, past the linear
/// regime, for multimode diagnosis. With `j` equally populated probe modes
/// the curve bends below the single-mode line and approaches
/// `1 + 2·n_total/j` once the detection disk covers the whole beam.
pub fn saturation_scan(
    clusters: &[FrameCluster],
    radii: &[u32],
    center: (f64, f64),
) -> Result<Vec<(usize, f64)>> {
    binned_variance_at(clusters, center, radii)
}

/// Rows of an SNR comparison run, plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrReport {
    pub rows: Vec<SnrReportRow>,
    pub cluster_count: usize,
    pub bin_radius: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrReportRow {
    pub n_mean: f64,
    pub snr_sim: f64,
    pub snr_theory: f64,
}

impl SnrReportRow {
    pub fn relative_error(&self) -> f64 {
        if self.snr_theory == 0.0 {
            if self.snr_sim == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.snr_sim - self.snr_theory) / self.snr_theory
        }
    }
}

/// Disk areas for radii `0..=max_radius`; the Euclidean-disk convention.
pub fn disk_area_table(max_radius: u32) -> Vec<usize> {
    (0..=max_radius).map(disk_area).collect()
}
