use std::path::{Path, PathBuf};

use qsi::error::{Error, Result};
use qsi::grid::{disk_region, PixelGrid};
use qsi::io::{read_frame_stack, write_map, MapFormat, MapPayload};
use qsi::modes::ModeFunction;
use qsi::pipeline::{
    contrast_from_map, transmission_map, variance_map, Roi, RoiLabel, ScalarField, VarianceMap,
};
use qsi::statistics::{binned_variance_prediction, ProbeKind};

use crate::config::{default_rois, parse_roi_shape, LoProfile, RunConfig};
use crate::commands::fmt;

pub struct Args {
    pub input: PathBuf,
    pub reference: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub bin_radius: u32,
    pub out_var: Option<PathBuf>,
    pub out_trans: Option<PathBuf>,
    pub roi_bright: Option<String>,
    pub roi_dark: Option<String>,
}

fn format_for(path: &Path) -> MapFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => MapFormat::Pgm,
        _ => MapFormat::Csv,
    }
}

/// Analytic reference for a flat LO and unobstructed thermal probe: the
/// binned variance is `1 + 2·n·a(x)/A` with `a(x)` the in-grid disk area.
fn analytic_flat_reference(grid: PixelGrid, n_total: f64, radius: u32) -> Result<VarianceMap> {
    let lo = ModeFunction::flat(grid);
    let mask = qsi::grid::TransmissionMask::transparent(grid);
    let mut v = vec![0.0f64; grid.len()];
    for (i, slot) in v.iter_mut().enumerate() {
        let (x, y) = grid.coords(i);
        let region = disk_region(&grid, (f64::from(x), f64::from(y)), radius);
        *slot = binned_variance_prediction(n_total, &mask, &lo, &region)?;
    }
    Ok(VarianceMap {
        grid,
        v,
        excluded: vec![false; grid.len()],
        cluster_count: 1,
        bin_radius: radius,
        mean_sum: vec![0.0; grid.len()],
    })
}

pub fn run(args: &Args) -> Result<()> {
    let (meta, clusters) = read_frame_stack(&args.input)?;
    let config = args.config.as_deref().map(RunConfig::load).transpose()?;

    let v_probe = variance_map(&clusters, args.bin_radius)?;
    let v_ref = match &args.reference {
        Some(path) => {
            let (ref_meta, ref_clusters) = read_frame_stack(path)?;
            if ref_meta.scene_digest != meta.scene_digest {
                return Err(Error::Config(format!(
                    "scene digests differ between {} and {}: the stacks come from \
                     different acquisitions",
                    args.input.display(),
                    path.display()
                )));
            }
            variance_map(&ref_clusters, args.bin_radius)?
        }
        None => {
            let config = config.as_ref().ok_or_else(|| {
                Error::Config(
                    "no --ref stack: an analytic reference needs --config with a flat LO".into(),
                )
            })?;
            if config.lo_profile != LoProfile::Flat || config.probe_kind != ProbeKind::Thermal {
                return Err(Error::Config(
                    "analytic reference requires lo_profile = flat and a thermal probe".into(),
                ));
            }
            analytic_flat_reference(meta.grid, config.probe_mean_photons, args.bin_radius)?
        }
    };
    let t_map = transmission_map(&v_probe, &v_ref)?;

    if let Some(path) = &args.out_var {
        write_map(&MapPayload::from(&v_probe), path, format_for(path))?;
    }
    if let Some(path) = &args.out_trans {
        write_map(&MapPayload::from(&t_map), path, format_for(path))?;
    }

    // summary over the bright/dark analysis regions
    let (default_unblocked, default_blocked) = match &config {
        Some(c) => c.analysis_rois(args.bin_radius),
        None => default_rois(&meta.grid, args.bin_radius),
    };
    let roi_bright = match &args.roi_bright {
        Some(spec) => Roi::new(parse_roi_shape(spec)?, RoiLabel::Unblocked),
        None => default_unblocked,
    };
    let roi_dark = match &args.roi_dark {
        Some(spec) => Roi::new(parse_roi_shape(spec)?, RoiLabel::Blocked),
        None => default_blocked,
    };
    let mean_over = |roi: &Roi| -> Result<f64> {
        let pixels = roi.resolve(&meta.grid)?;
        let values: Vec<f64> = pixels.iter().filter_map(|&i| v_probe.value(i)).collect();
        if values.is_empty() {
            return Err(Error::Statistics("analysis region fully excluded".into()));
        }
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    };
    let mean_bright = mean_over(&roi_bright)?;
    let mean_dark = mean_over(&roi_dark)?;
    let contrast = contrast_from_map(&v_probe, &roi_bright, &roi_dark)?;
    let excluded = t_map.excluded.iter().filter(|&&e| e).count();
    println!(
        "RESULT reconstruct mean_v_bright={} mean_v_dark={} contrast={} excluded={excluded}",
        fmt(mean_bright),
        fmt(mean_dark),
        fmt(contrast),
    );
    Ok(())
}
