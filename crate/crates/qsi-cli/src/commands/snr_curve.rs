//! SNR of opaque-object imaging versus detected photon number, measured two
//! ways on simulated data and compared with the closed form.
//!
//! # Scene
//!
//! The probe is a pseudo-thermal speckle beam: independent thermal modes on
//! square coherence cells, with the cell chosen larger than the detection
//! disk (`cell = 2R + 4`). Each detection area then sees a single thermal
//! mode, so the detected photon number per area is `⟨n⟩ = a(R)·⟨n⟩_pxl` and,
//! crucially, different cells fluctuate independently — the spatial
//! variances entering the region SNR honestly estimate the single-area
//! noise. (With one global thermal mode the whole field breathes together
//! and a spatial variance cannot see that common mode.)
//!
//! The analysis regions are the cell centres on each side of a block whose
//! edge falls on a cell boundary. Clusters carry a single usable frame, so
//! dividing the measured region SNR by `√M` is exactly the single-shot
//! equivalent that the closed form describes.
//!
//! The `gain` strategy fixes the detection area (one binning radius) and
//! sweeps the beam brightness; the `area` strategy fixes the brightness and
//! sweeps the binning radius. Both land on the same curve.

use std::path::PathBuf;

use qsi::error::{Error, Result};
use qsi::grid::{disk_area, PixelGrid, TransmissionMask};
use qsi::modes::ModeFunction;
use qsi::pipeline::{roi_snr, variance_map, Roi, RoiLabel, RoiShape, SnrReport, SnrReportRow};
use qsi::simulator::{derive_stream_seed, sample_qsi_stack, SceneSpec};
use qsi::statistics::{snr_qsi_opaque, NoiseModel, ProbeSpec};

use crate::commands::{fmt, parse_value_grid};

pub struct Args {
    pub n_grid: String,
    pub clusters: u64,
    pub bin_radius: u32,
    pub strategy: Strategy,
    pub seed: u64,
    pub grid_size: u32,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Gain,
    Area,
    Both,
}

/// One simulated sweep point.
pub struct SweepPoint {
    pub n_mean: f64,
    pub snr_sim: f64,
    pub snr_theory: f64,
}

struct SpeckleGeometry {
    scene: SceneSpec,
    unblocked: Roi,
    blocked: Roi,
}

/// Builds the half-blocked speckle scene for one detection radius. The grid
/// edge approximates `size_hint` while staying a multiple of the cell size.
fn speckle_geometry(size_hint: u32, radius: u32, n_pxl: f64) -> Result<SpeckleGeometry> {
    let cell = 2 * radius + 4;
    let cells_x = ((size_hint / cell).max(4) & !1).max(4);
    let cells_y = (size_hint / cell).max(3);
    let grid = PixelGrid::new(cells_x * cell, cells_y * cell)?;
    let split = (cells_x / 2) * cell;

    let mut t = vec![1.0; grid.len()];
    for y in 0..grid.height {
        for x in 0..split {
            t[grid.index(x, y)] = 0.0;
        }
    }
    let mask = TransmissionMask::from_values(grid, t)?;

    let modes = ModeFunction::speckle_cells(grid, cell)?;
    let n_total = n_pxl * grid.len() as f64;
    let mut scene = SceneSpec::single_mode(
        ProbeSpec::thermal(n_total).with_modes(modes.len() as u32),
        ModeFunction::flat(grid),
        1000.0 * n_total.max(1.0),
        mask,
        NoiseModel::none(),
    );
    scene.probe_modes = modes;
    // one usable frame per cluster: the √M normalization is then exactly
    // single-shot
    scene.cluster_frames = 1;
    scene.usable_indices = vec![0];

    let mut centers = (Vec::new(), Vec::new());
    for cy in 0..cells_y {
        for cx in 0..cells_x {
            let x = cx * cell + cell / 2;
            let y = cy * cell + cell / 2;
            let idx = grid.index(x, y);
            if x < split {
                centers.1.push(idx);
            } else {
                centers.0.push(idx);
            }
        }
    }
    Ok(SpeckleGeometry {
        scene,
        unblocked: Roi::new(RoiShape::Pixels(centers.0), RoiLabel::Unblocked),
        blocked: Roi::new(RoiShape::Pixels(centers.1), RoiLabel::Blocked),
    })
}

/// Simulates one sweep point: brightness `n_pxl` per pixel, detection
/// radius `radius`, `clusters` single-frame clusters.
pub fn sweep_point(
    size_hint: u32,
    n_pxl: f64,
    radius: u32,
    clusters: u64,
    seed: u64,
) -> Result<SweepPoint> {
    let geo = speckle_geometry(size_hint, radius, n_pxl)?;
    let stack = sample_qsi_stack(&geo.scene, clusters, seed)?;
    let map = variance_map(&stack, radius)?;
    let snr_sim = roi_snr(&map, &geo.unblocked, &geo.blocked, clusters as usize)?;
    let n_mean = n_pxl * disk_area(radius) as f64;
    Ok(SweepPoint {
        n_mean,
        snr_sim,
        snr_theory: snr_qsi_opaque(n_mean)?,
    })
}

/// Fixed detection area, swept beam brightness.
pub fn sweep_gain(
    size_hint: u32,
    targets: &[f64],
    radius: u32,
    clusters: u64,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let area = disk_area(radius) as f64;
    targets
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let point_seed = derive_stream_seed(seed, &format!("gain-{k}"));
            sweep_point(size_hint, n / area, radius, clusters, point_seed)
        })
        .collect()
}

/// Fixed beam brightness (anchored so that `anchor_n` lands on the base
/// radius), swept detection radius.
pub fn sweep_area(
    size_hint: u32,
    radii: &[u32],
    anchor_n: f64,
    base_radius: u32,
    clusters: u64,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let n_pxl = anchor_n / disk_area(base_radius) as f64;
    radii
        .iter()
        .enumerate()
        .map(|(k, &radius)| {
            let point_seed = derive_stream_seed(seed, &format!("area-{k}"));
            sweep_point(size_hint, n_pxl, radius, clusters, point_seed)
        })
        .collect()
}

/// Default radius ladder for the area strategy.
pub fn area_strategy_radii(base_radius: u32) -> Vec<u32> {
    [3u32, 4, 6, 8, 10]
        .iter()
        .copied()
        .chain(std::iter::once(base_radius))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn report_from(points: &[SweepPoint], clusters: u64, radius: u32) -> SnrReport {
    SnrReport {
        rows: points
            .iter()
            .map(|p| SnrReportRow {
                n_mean: p.n_mean,
                snr_sim: p.snr_sim,
                snr_theory: p.snr_theory,
            })
            .collect(),
        cluster_count: clusters as usize,
        bin_radius: radius,
    }
}

fn max_rel_dev(points: &[SweepPoint]) -> f64 {
    points
        .iter()
        .filter(|p| p.snr_theory > 0.0)
        .map(|p| ((p.snr_sim - p.snr_theory) / p.snr_theory).abs())
        .fold(0.0, f64::max)
}

pub fn run(args: &Args) -> Result<()> {
    let targets = parse_value_grid(&args.n_grid)?;
    let mut summary = String::from("RESULT snr-curve");

    if matches!(args.strategy, Strategy::Gain | Strategy::Both) {
        let points = sweep_gain(
            args.grid_size,
            &targets,
            args.bin_radius,
            args.clusters,
            args.seed,
        )?;
        qsi::io::write_report(&report_from(&points, args.clusters, args.bin_radius), &args.out)?;
        summary.push_str(&format!(
            " gain_points={} gain_max_rel_dev={} out={}",
            points.len(),
            fmt(max_rel_dev(&points)),
            args.out.display()
        ));
    }
    if matches!(args.strategy, Strategy::Area | Strategy::Both) {
        let radii = area_strategy_radii(args.bin_radius);
        let anchor = targets
            .get(targets.len() / 2)
            .copied()
            .ok_or_else(|| Error::Config("empty n grid".into()))?;
        let points = sweep_area(
            args.grid_size,
            &radii,
            anchor,
            args.bin_radius,
            args.clusters,
            args.seed,
        )?;
        let out = if args.strategy == Strategy::Both {
            let mut path = args.out.as_os_str().to_owned();
            path.push(".area.csv");
            PathBuf::from(path)
        } else {
            args.out.clone()
        };
        qsi::io::write_report(&report_from(&points, args.clusters, args.bin_radius), &out)?;
        summary.push_str(&format!(
            " area_points={} area_max_rel_dev={} area_out={}",
            points.len(),
            fmt(max_rel_dev(&points)),
            out.display()
        ));
    }
    println!("{summary}");
    Ok(())
}
