//! Plain-text `key = value` run configuration.
//!
//! Unknown keys are rejected; missing required keys and out-of-range values
//! produce configuration errors before any output file is touched.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qsi::error::{Error, Result};
use qsi::grid::{PixelGrid, TransmissionMask};
use qsi::modes::ModeFunction;
use qsi::pipeline::{Roi, RoiLabel, RoiShape};
use qsi::simulator::{
    SceneSpec, DEFAULT_CLUSTER_FRAMES, DEFAULT_DUTY_CYCLE_US, DEFAULT_EXPOSURE_US,
    DEFAULT_USABLE_INDICES,
};
use qsi::statistics::{NoiseModel, ProbeKind, ProbeSpec};

const KNOWN_KEYS: &[&str] = &[
    "grid_width",
    "grid_height",
    "pixel_pitch_um",
    "probe_kind",
    "probe_mean_photons",
    "probe_mode_count",
    "probe_squeeze_param",
    "lo_profile",
    "lo_waist_px",
    "lo_center",
    "lo_photons",
    "mask",
    "dark_std",
    "cluster_frames",
    "usable_indices",
    "exposure_us",
    "duty_cycle_us",
    "seed",
    "clusters",
    "bin_radius",
    "roi_unblocked",
    "roi_blocked",
    "out_stack",
    "out_ref",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoProfile {
    Gaussian,
    Flat,
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: PixelGrid,
    pub probe_kind: ProbeKind,
    pub probe_mean_photons: f64,
    pub probe_mode_count: u32,
    pub probe_squeeze_param: Option<f64>,
    pub lo_profile: LoProfile,
    pub lo_waist_px: f64,
    pub lo_center: (f64, f64),
    pub lo_photons: f64,
    pub mask_source: String,
    pub dark_std: f64,
    pub cluster_frames: u32,
    pub usable_indices: Vec<u32>,
    pub exposure_us: f64,
    pub duty_cycle_us: f64,
    pub seed: u64,
    pub clusters: u64,
    pub bin_radius: u32,
    pub roi_unblocked: Option<RoiShape>,
    pub roi_blocked: Option<RoiShape>,
    pub out_stack: Option<PathBuf>,
    pub out_ref: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

struct Raw {
    entries: BTreeMap<String, String>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut unknown = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                unknown.push(key.clone());
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(config_err(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        if !unknown.is_empty() {
            return Err(config_err(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )));
        }
        Ok(Raw { entries })
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| config_err(format!("missing required key `{key}`")))
    }

    fn optional(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(config_err(format!("key `{key}`: expected `x,y`")));
    }
    Ok((parse_num(key, parts[0])?, parse_num(key, parts[1])?))
}

/// Parses an ROI descriptor: `rect:x,y,w,h`, `disk:cx,cy,r` or
/// `annulus:cx,cy,r_in,r_out`.
pub fn parse_roi_shape(value: &str) -> Result<RoiShape> {
    let (kind, rest) = value
        .split_once(':')
        .ok_or_else(|| config_err(format!("roi `{value}`: expected `kind:params`")))?;
    let nums: Vec<f64> = rest
        .split(',')
        .map(|p| parse_num("roi", p.trim()))
        .collect::<Result<_>>()?;
    match (kind, nums.as_slice()) {
        ("rect", [x, y, w, h]) => Ok(RoiShape::Rect {
            x: *x as u32,
            y: *y as u32,
            width: *w as u32,
            height: *h as u32,
        }),
        ("disk", [cx, cy, r]) => Ok(RoiShape::Disk {
            cx: *cx,
            cy: *cy,
            radius: *r,
        }),
        ("annulus", [cx, cy, r_in, r_out]) => Ok(RoiShape::Annulus {
            cx: *cx,
            cy: *cy,
            r_in: *r_in,
            r_out: *r_out,
        }),
        _ => Err(config_err(format!(
            "roi `{value}`: unknown shape or wrong parameter count"
        ))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw = Raw::parse(text)?;
        let width: u32 = parse_num("grid_width", raw.required("grid_width")?)?;
        let height: u32 = parse_num("grid_height", raw.required("grid_height")?)?;
        let pitch: f64 = match raw.optional("pixel_pitch_um") {
            Some(v) => parse_num("pixel_pitch_um", v)?,
            None => qsi::grid::DEFAULT_PIXEL_PITCH_UM,
        };
        let grid = PixelGrid::with_pitch(width, height, pitch)
            .map_err(|e| config_err(e.to_string()))?;

        let probe_kind = match raw.required("probe_kind")? {
            "thermal" => ProbeKind::Thermal,
            "coherent" => ProbeKind::Coherent,
            "vacuum" => ProbeKind::Vacuum,
            other => {
                return Err(config_err(format!(
                    "probe_kind `{other}` is not thermal|coherent|vacuum"
                )))
            }
        };
        let probe_mean_photons: f64 =
            parse_num("probe_mean_photons", raw.required("probe_mean_photons")?)?;
        let probe_mode_count: u32 = match raw.optional("probe_mode_count") {
            Some(v) => parse_num("probe_mode_count", v)?,
            None => 1,
        };
        let probe_squeeze_param = raw
            .optional("probe_squeeze_param")
            .map(|v| parse_num("probe_squeeze_param", v))
            .transpose()?;

        let lo_profile = match raw.optional("lo_profile").unwrap_or("gaussian") {
            "gaussian" => LoProfile::Gaussian,
            "flat" => LoProfile::Flat,
            other => {
                return Err(config_err(format!(
                    "lo_profile `{other}` is not gaussian|flat"
                )))
            }
        };
        let lo_waist_px: f64 = match raw.optional("lo_waist_px") {
            Some(v) => parse_num("lo_waist_px", v)?,
            None => f64::from(width.min(height)) / 4.0,
        };
        let lo_center = match raw.optional("lo_center") {
            Some(v) => parse_pair("lo_center", v)?,
            None => grid.center(),
        };
        let lo_photons: f64 = parse_num("lo_photons", raw.required("lo_photons")?)?;

        let mask_source = raw.required("mask")?.to_string();
        let dark_std: f64 = match raw.optional("dark_std") {
            Some(v) => parse_num("dark_std", v)?,
            None => 0.0,
        };
        let cluster_frames: u32 = match raw.optional("cluster_frames") {
            Some(v) => parse_num("cluster_frames", v)?,
            None => DEFAULT_CLUSTER_FRAMES,
        };
        let usable_indices: Vec<u32> = match raw.optional("usable_indices") {
            Some(v) => v
                .split(',')
                .map(|p| parse_num("usable_indices", p.trim()))
                .collect::<Result<_>>()?,
            None => DEFAULT_USABLE_INDICES.to_vec(),
        };
        let exposure_us: f64 = match raw.optional("exposure_us") {
            Some(v) => parse_num("exposure_us", v)?,
            None => DEFAULT_EXPOSURE_US,
        };
        let duty_cycle_us: f64 = match raw.optional("duty_cycle_us") {
            Some(v) => parse_num("duty_cycle_us", v)?,
            None => DEFAULT_DUTY_CYCLE_US,
        };
        let seed: u64 = parse_num("seed", raw.required("seed")?)?;
        let clusters: u64 = parse_num("clusters", raw.required("clusters")?)?;
        let bin_radius: u32 = match raw.optional("bin_radius") {
            Some(v) => parse_num("bin_radius", v)?,
            None => 0,
        };
        let roi_unblocked = raw
            .optional("roi_unblocked")
            .map(parse_roi_shape)
            .transpose()?;
        let roi_blocked = raw
            .optional("roi_blocked")
            .map(parse_roi_shape)
            .transpose()?;

        Ok(RunConfig {
            grid,
            probe_kind,
            probe_mean_photons,
            probe_mode_count,
            probe_squeeze_param,
            lo_profile,
            lo_waist_px,
            lo_center,
            lo_photons,
            mask_source,
            dark_std,
            cluster_frames,
            usable_indices,
            exposure_us,
            duty_cycle_us,
            seed,
            clusters,
            bin_radius,
            roi_unblocked,
            roi_blocked,
            out_stack: raw.optional("out_stack").map(PathBuf::from),
            out_ref: raw.optional("out_ref").map(PathBuf::from),
        })
    }

    /// Loads the object mask: `builtin:half`, `builtin:wing`, `builtin:clear`
    /// or a graymap/CSV file path (relative paths resolve against the config
    /// file's directory).
    pub fn load_mask(&self, config_dir: &Path) -> Result<TransmissionMask> {
        match self.mask_source.as_str() {
            "builtin:half" => Ok(TransmissionMask::half_blocked(self.grid)),
            "builtin:wing" => Ok(TransmissionMask::wing(self.grid)),
            "builtin:clear" => Ok(TransmissionMask::transparent(self.grid)),
            source => {
                let path = Path::new(source);
                let path = if path.is_absolute() {
                    path.to_path_buf()
                } else {
                    config_dir.join(path)
                };
                let mask = qsi::io::read_mask(&path).map_err(|e| {
                    config_err(format!("mask `{}`: {e}", path.display()))
                })?;
                self.grid
                    .check_same(mask.grid(), "config mask")
                    .map_err(|e| config_err(e.to_string()))?;
                Ok(mask)
            }
        }
    }

    /// Assembles the validated scene description.
    pub fn build_scene(&self, config_dir: &Path) -> Result<SceneSpec> {
        let mask = self.load_mask(config_dir)?;
        let (lo_mode, probe_modes) = if self.probe_mode_count > 1 {
            if self.lo_profile != LoProfile::Gaussian {
                return Err(config_err(
                    "multimode probes need lo_profile = gaussian (the LO is the fundamental)",
                ));
            }
            let family =
                ModeFunction::orthogonal_family(self.grid, self.lo_waist_px, self.probe_mode_count)
                    .map_err(|e| config_err(e.to_string()))?;
            (family[0].clone(), family)
        } else {
            let lo = match self.lo_profile {
                LoProfile::Flat => ModeFunction::flat(self.grid),
                LoProfile::Gaussian => {
                    ModeFunction::gaussian(self.grid, self.lo_waist_px, self.lo_center)
                        .map_err(|e| config_err(e.to_string()))?
                }
            };
            (lo.clone(), vec![lo])
        };
        let probe = ProbeSpec {
            mean_photons_total: self.probe_mean_photons,
            mode_count: self.probe_mode_count,
            kind: self.probe_kind,
            squeeze_param: self.probe_squeeze_param,
        };
        let scene = SceneSpec {
            grid: self.grid,
            probe,
            probe_modes,
            lo_mode,
            lo_photons: self.lo_photons,
            mask,
            noise: NoiseModel {
                dark_std: self.dark_std,
            },
            cluster_frames: self.cluster_frames,
            usable_indices: self.usable_indices.clone(),
            exposure_us: self.exposure_us,
            duty_cycle_us: self.duty_cycle_us,
        };
        scene.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(scene)
    }

    /// The analysis regions, either from the config or the default layout: a
    /// central disk of radius `min(width, height)/4` split at the vertical
    /// midline, with a guard band of `bin_radius + 2` columns excluded around
    /// the split (mirroring a half-blocked beam whose boundary is masked out
    /// of the analysis).
    pub fn analysis_rois(&self, bin_radius: u32) -> (Roi, Roi) {
        let defaults = default_rois(&self.grid, bin_radius);
        (
            match &self.roi_unblocked {
                Some(shape) => Roi::new(shape.clone(), RoiLabel::Unblocked),
                None => defaults.0,
            },
            match &self.roi_blocked {
                Some(shape) => Roi::new(shape.clone(), RoiLabel::Blocked),
                None => defaults.1,
            },
        )
    }
}

/// Default analysis regions for a half-blocked beam: the central disk split
/// at the vertical midline with the boundary band excluded.
pub fn default_rois(grid: &PixelGrid, bin_radius: u32) -> (Roi, Roi) {
    (
        Roi::new(half_disk_roi(grid, bin_radius, 1.0), RoiLabel::Unblocked),
        Roi::new(half_disk_roi(grid, bin_radius, -1.0), RoiLabel::Blocked),
    )
}

fn half_disk_roi(grid: &PixelGrid, bin_radius: u32, side: f64) -> RoiShape {
    let (cx, cy) = grid.center();
    let radius = f64::from(grid.width.min(grid.height)) / 4.0;
    let guard = f64::from(bin_radius) + 2.0;
    let pixels = (0..grid.len())
        .filter(|&i| {
            let (x, y) = grid.coords(i);
            let dx = f64::from(x) - cx;
            let dy = f64::from(y) - cy;
            dx * dx + dy * dy <= radius * radius && side * dx >= guard
        })
        .collect();
    RoiShape::Pixels(pixels)
}
