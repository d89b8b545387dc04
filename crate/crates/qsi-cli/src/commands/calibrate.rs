//! Photon-number calibration from a recorded stack: linear fit of variance
//! against detection area, plus a saturation scan for multimode diagnosis.

use std::fmt::Write as _;
use std::path::PathBuf;

use qsi::error::{Error, Result};
use qsi::io::read_frame_stack;
use qsi::pipeline::{calibrate, saturation_scan, variance_map, CalibrationResult};

use crate::commands::fmt;

pub struct Args {
    pub input: PathBuf,
    pub max_radius: u32,
    pub saturation_radii: Option<Vec<u32>>,
    pub center: Option<(f64, f64)>,
    pub out: PathBuf,
}

/// Saturation is declared when the measured excess at the largest scanned
/// area falls short of the linear extrapolation by more than 20 %.
const SATURATION_SHORTFALL: f64 = 0.2;

pub struct CalibrationReport {
    pub result: CalibrationResult,
    pub fit_curve: Vec<(usize, f64)>,
    pub scan_curve: Vec<(usize, f64)>,
    pub saturated: bool,
}

pub fn analyze(
    input: &PathBuf,
    max_radius: u32,
    saturation_radii: Option<&[u32]>,
    center: Option<(f64, f64)>,
) -> Result<CalibrationReport> {
    if max_radius < 2 || max_radius > 10 {
        return Err(Error::Config(format!(
            "max radius {max_radius} outside the linear regime 2..=10"
        )));
    }
    let (meta, clusters) = read_frame_stack(input)?;
    let center = center.unwrap_or_else(|| meta.grid.center());
    let fit_radii: Vec<u32> = (0..=max_radius).collect();
    let mut result = calibrate(&clusters, &fit_radii, center)?;
    let fit_curve = saturation_scan(&clusters, &fit_radii, center)?;

    let limit = meta.grid.width.min(meta.grid.height) / 2;
    let scan_radii: Vec<u32> = match saturation_radii {
        Some(radii) => radii.to_vec(),
        None => [12u32, 16, 20, 25, 30]
            .into_iter()
            .filter(|&r| r <= limit)
            .collect(),
    };
    let mut scan_curve = Vec::new();
    let mut saturated = false;
    if !scan_radii.is_empty() {
        scan_curve = saturation_scan(&clusters, &scan_radii, center)?;
        if let Some(&(area, v_meas)) = scan_curve.last() {
            let v_lin = result.slope * area as f64 + result.intercept;
            if v_lin > 1.0 {
                let shortfall = (v_lin - v_meas) / (v_lin - 1.0);
                saturated = shortfall > SATURATION_SHORTFALL;
            }
            if saturated && v_meas > 1.0 {
                // rough mode count assuming equally populated, co-located
                // modes: j ≈ 2·n_pxl·A_beam / (V_sat − 1), with the beam
                // area taken from the LO profile
                let map = variance_map(&clusters, 0)?;
                let peak = map.mean_sum.iter().cloned().fold(f64::MIN, f64::max);
                if peak > 0.0 {
                    let beam_area: f64 =
                        map.mean_sum.iter().sum::<f64>() / peak;
                    result.saturation_j_estimate =
                        Some(2.0 * result.n_pxl * beam_area / (v_meas - 1.0));
                }
            }
        }
    }
    Ok(CalibrationReport {
        result,
        fit_curve,
        scan_curve,
        saturated,
    })
}

pub fn run(args: &Args) -> Result<()> {
    let report = analyze(
        &args.input,
        args.max_radius,
        args.saturation_radii.as_deref(),
        args.center,
    )?;
    let r = &report.result;

    let mut out = String::new();
    out.push_str("# qsi-calibration v1\n");
    let _ = writeln!(
        out,
        "# slope={:.8e} slope_ci={:.8e} intercept={:.8e} intercept_ci={:.8e} n_pxl={:.8e}",
        r.slope, r.slope_ci, r.intercept, r.intercept_ci, r.n_pxl
    );
    let _ = writeln!(
        out,
        "# saturated={}{}",
        report.saturated,
        r.saturation_j_estimate
            .map(|j| format!(" j_estimate={j:.3}"))
            .unwrap_or_default()
    );
    out.push_str("area,v,regime\n");
    for &(area, v) in &report.fit_curve {
        let _ = writeln!(out, "{area},{v:.8e},fit");
    }
    for &(area, v) in &report.scan_curve {
        let _ = writeln!(out, "{area},{v:.8e},scan");
    }
    std::fs::write(&args.out, out)?;

    println!(
        "RESULT calibrate slope={} slope_ci={} intercept={} intercept_ci={} n_pxl={} saturated={}{}",
        fmt(r.slope),
        fmt(r.slope_ci),
        fmt(r.intercept),
        fmt(r.intercept_ci),
        fmt(r.n_pxl),
        report.saturated,
        r.saturation_j_estimate
            .map(|j| format!(" j_estimate={}", fmt(j)))
            .unwrap_or_default()
    );
    Ok(())
}
