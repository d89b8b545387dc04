//! Bit-exact persistence: frame stacks, masks, maps and reports.
//!
//! # Frame-stack format (`.qsif`)
//!
//! Little-endian throughout. Fixed header:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "QSIF"
//!      4     4  version (= 1)
//!      8     4  grid width, pixels
//!     12     4  grid height, pixels
//!     16     8  pixel pitch, micrometers (f64)
//!     24     4  frames per cluster
//!     28     8  usable-frame bitmap (bit i set = frame i usable)
//!     36     4  cluster count
//!     40     8  exposure per frame, microseconds (f64)
//!     48     8  duty cycle, microseconds (f64)
//!     56     8  root seed
//!     64    32  scene lineage digest (SHA-256)
//!     96   16M  cluster table: (cluster_id u64, seed_tag u64) per cluster
//! ```
//!
//! followed by the payload: per cluster, per frame, the two pixel planes
//! `n1` then `n2`, row-major 32-bit floats. The payload is therefore exactly
//! `clusters × frames × 2 × width × height × 4` bytes; readers reject files
//! whose length differs. Counts are stored as 32-bit floats to keep stacks
//! small; all downstream statistics accumulate in 64-bit.
//!
//! Masks are read from portable graymaps (P2/P5, scaled by the declared
//! maxval) or plain CSV; maps are written as CSV with `#`-prefixed metadata
//! or as 16-bit P5 graymaps with the scaling recorded in a comment.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{PixelGrid, TransmissionMask, MAX_PIXELS};
use crate::pipeline::{SnrReport, TransmissionMap, VarianceMap};
use crate::simulator::{FrameCluster, FramePair};

pub const STACK_MAGIC: &[u8; 4] = b"QSIF";
pub const STACK_VERSION: u32 = 1;
const FIXED_HEADER_LEN: u64 = 96;
/// The usable-frame bitmap is a single u64.
pub const MAX_FRAMES_PER_CLUSTER: u32 = 64;

/// Acquisition metadata carried in a stack header, independent of the
/// payload so that empty stacks stay self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct StackMeta {
    pub grid: PixelGrid,
    pub cluster_frames: u32,
    pub usable_indices: Vec<u32>,
    pub exposure_us: f64,
    pub duty_cycle_us: f64,
    pub seed: u64,
    pub scene_digest: [u8; 32],
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Serializes a stack; the output bytes are a pure function of the inputs.
pub fn encode_frame_stack(clusters: &[FrameCluster], meta: &StackMeta) -> Result<Vec<u8>> {
    if meta.cluster_frames < 1 || meta.cluster_frames > MAX_FRAMES_PER_CLUSTER {
        return Err(Error::Validation(format!(
            "cluster_frames = {} outside 1..={MAX_FRAMES_PER_CLUSTER}",
            meta.cluster_frames
        )));
    }
    let mut bitmap = 0u64;
    for &i in &meta.usable_indices {
        if i >= meta.cluster_frames {
            return Err(Error::Validation(format!(
                "usable index {i} outside cluster of {} frames",
                meta.cluster_frames
            )));
        }
        bitmap |= 1 << i;
    }
    let npix = meta.grid.len();
    for (ci, cluster) in clusters.iter().enumerate() {
        meta.grid.check_same(&cluster.grid, "stack cluster")?;
        if cluster.frames.len() != meta.cluster_frames as usize {
            return Err(Error::Validation(format!(
                "cluster {ci} has {} frames, header says {}",
                cluster.frames.len(),
                meta.cluster_frames
            )));
        }
        if cluster.usable_indices != meta.usable_indices {
            return Err(Error::Validation(format!(
                "cluster {ci} disagrees with the header's usable indices"
            )));
        }
        for (fi, frame) in cluster.frames.iter().enumerate() {
            if frame.n1.len() != npix || frame.n2.len() != npix {
                return Err(Error::Validation(format!(
                    "cluster {ci} frame {fi} has wrong plane size"
                )));
            }
            if frame
                .n1
                .iter()
                .chain(&frame.n2)
                .any(|v| !v.is_finite())
            {
                return Err(Error::Validation(format!(
                    "cluster {ci} frame {fi} contains non-finite counts"
                )));
            }
        }
    }

    let payload_len = clusters.len() * meta.cluster_frames as usize * 2 * npix * 4;
    let mut out = Vec::with_capacity(FIXED_HEADER_LEN as usize + clusters.len() * 16 + payload_len);
    out.extend_from_slice(STACK_MAGIC);
    out.extend_from_slice(&STACK_VERSION.to_le_bytes());
    out.extend_from_slice(&meta.grid.width.to_le_bytes());
    out.extend_from_slice(&meta.grid.height.to_le_bytes());
    out.extend_from_slice(&meta.grid.pixel_pitch_um.to_le_bytes());
    out.extend_from_slice(&meta.cluster_frames.to_le_bytes());
    out.extend_from_slice(&bitmap.to_le_bytes());
    out.extend_from_slice(&(clusters.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta.exposure_us.to_le_bytes());
    out.extend_from_slice(&meta.duty_cycle_us.to_le_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.scene_digest);
    for cluster in clusters {
        out.extend_from_slice(&cluster.cluster_id.to_le_bytes());
        out.extend_from_slice(&cluster.seed_tag.to_le_bytes());
    }
    for cluster in clusters {
        for frame in &cluster.frames {
            for v in &frame.n1 {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &frame.n2 {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_frame_stack(
    clusters: &[FrameCluster],
    meta: &StackMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_frame_stack(clusters, meta)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Byte-cursor with format-error reporting at the failing offset.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(format_err(
                self.bytes.len() as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, file ends at {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a stack from bytes; never panics on malformed input.
pub fn decode_frame_stack(bytes: &[u8]) -> Result<(StackMeta, Vec<FrameCluster>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != STACK_MAGIC {
        return Err(format_err(
            0,
            format!("bad magic {magic:02x?}, expected \"QSIF\""),
        ));
    }
    let version = cur.u32("version")?;
    if version != STACK_VERSION {
        return Err(format_err(
            4,
            format!("unsupported version {version}, expected {STACK_VERSION}"),
        ));
    }
    let width = cur.u32("width")?;
    let height = cur.u32("height")?;
    if width == 0 || height == 0 || width as u64 * height as u64 > MAX_PIXELS {
        return Err(format_err(8, format!("implausible grid {width}x{height}")));
    }
    let pitch = cur.f64("pixel pitch")?;
    if !(pitch > 0.0) || !pitch.is_finite() {
        return Err(format_err(16, format!("bad pixel pitch {pitch}")));
    }
    let grid = PixelGrid::with_pitch(width, height, pitch)
        .map_err(|e| format_err(8, e.to_string()))?;
    let cluster_frames = cur.u32("cluster_frames")?;
    if cluster_frames < 1 || cluster_frames > MAX_FRAMES_PER_CLUSTER {
        return Err(format_err(
            24,
            format!("cluster_frames = {cluster_frames} outside 1..={MAX_FRAMES_PER_CLUSTER}"),
        ));
    }
    let bitmap = cur.u64("usable bitmap")?;
    if bitmap == 0 {
        return Err(format_err(28, "usable-frame bitmap is empty"));
    }
    if cluster_frames < 64 && bitmap >> cluster_frames != 0 {
        return Err(format_err(
            28,
            format!("usable bitmap {bitmap:#x} has bits beyond frame {cluster_frames}"),
        ));
    }
    let usable_indices: Vec<u32> = (0..cluster_frames).filter(|i| bitmap & (1 << i) != 0).collect();
    let cluster_count = cur.u32("cluster count")? as usize;
    let exposure_us = cur.f64("exposure")?;
    let duty_cycle_us = cur.f64("duty cycle")?;
    let seed = cur.u64("seed")?;
    let scene_digest: [u8; 32] = cur.take(32, "scene digest")?.try_into().unwrap();

    let npix = grid.len();
    let plane_bytes = npix as u64 * 4;
    let expected = FIXED_HEADER_LEN
        + cluster_count as u64 * 16
        + cluster_count as u64 * cluster_frames as u64 * 2 * plane_bytes;
    if bytes.len() as u64 != expected {
        return Err(format_err(
            bytes.len() as u64,
            format!(
                "file is {} bytes but the header implies exactly {expected}",
                bytes.len()
            ),
        ));
    }

    let mut ids = Vec::with_capacity(cluster_count);
    for _ in 0..cluster_count {
        let cluster_id = cur.u64("cluster id")?;
        let seed_tag = cur.u64("cluster seed tag")?;
        ids.push((cluster_id, seed_tag));
    }

    let mut clusters = Vec::with_capacity(cluster_count);
    for (cluster_id, seed_tag) in ids {
        let mut frames = Vec::with_capacity(cluster_frames as usize);
        for _ in 0..cluster_frames {
            let mut planes = [Vec::new(), Vec::new()];
            for plane in &mut planes {
                let start = cur.pos;
                let raw = cur.take(npix * 4, "pixel plane")?;
                let mut values = Vec::with_capacity(npix);
                for (i, chunk) in raw.chunks_exact(4).enumerate() {
                    let v = f32::from_le_bytes(chunk.try_into().unwrap());
                    if !v.is_finite() {
                        return Err(format_err(
                            (start + i * 4) as u64,
                            format!("non-finite count {v}"),
                        ));
                    }
                    values.push(v);
                }
                *plane = values;
            }
            let [n1, n2] = planes;
            frames.push(FramePair { n1, n2 });
        }
        clusters.push(FrameCluster {
            grid,
            frames,
            usable_indices: usable_indices.clone(),
            cluster_id,
            seed_tag,
        });
    }

    let meta = StackMeta {
        grid,
        cluster_frames,
        usable_indices,
        exposure_us,
        duty_cycle_us,
        seed,
        scene_digest,
    };
    Ok((meta, clusters))
}

pub fn read_frame_stack(path: impl AsRef<Path>) -> Result<(StackMeta, Vec<FrameCluster>)> {
    let bytes = std::fs::read(path)?;
    decode_frame_stack(&bytes)
}

/// Output format for map files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Pgm,
}

/// Grid of scalars ready for serialization, with provenance attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPayload {
    pub grid: PixelGrid,
    pub values: Vec<f64>,
    pub excluded: Vec<bool>,
    pub kind: String,
    pub attrs: Vec<(String, String)>,
}

impl From<&VarianceMap> for MapPayload {
    fn from(map: &VarianceMap) -> Self {
        MapPayload {
            grid: map.grid,
            values: map.v.clone(),
            excluded: map.excluded.clone(),
            kind: "variance".into(),
            attrs: vec![
                ("cluster_count".into(), map.cluster_count.to_string()),
                ("bin_radius".into(), map.bin_radius.to_string()),
            ],
        }
    }
}

impl From<&TransmissionMap> for MapPayload {
    fn from(map: &TransmissionMap) -> Self {
        MapPayload {
            grid: map.grid,
            values: map.t_est.clone(),
            excluded: map.excluded.clone(),
            kind: "transmission".into(),
            attrs: vec![
                ("probe_clusters".into(), map.probe_clusters.to_string()),
                ("ref_clusters".into(), map.ref_clusters.to_string()),
                ("bin_radius".into(), map.bin_radius.to_string()),
            ],
        }
    }
}

/// Renders a map as CSV. Values carry 9 significant digits; excluded pixels
/// are written as `NaN`. Deterministic bytes for a given payload.
pub fn encode_map_csv(map: &MapPayload) -> String {
    let mut out = String::new();
    out.push_str("# qsi-map v1\n");
    let _ = writeln!(out, "# kind={}", map.kind);
    let _ = writeln!(
        out,
        "# width={} height={} pixel_pitch_um={}",
        map.grid.width, map.grid.height, map.grid.pixel_pitch_um
    );
    for (k, v) in &map.attrs {
        let _ = writeln!(out, "# {k}={v}");
    }
    for y in 0..map.grid.height {
        for x in 0..map.grid.width {
            if x > 0 {
                out.push(',');
            }
            let i = map.grid.index(x, y);
            if map.excluded[i] {
                out.push_str("NaN");
            } else {
                let _ = write!(out, "{:.8e}", map.values[i]);
            }
        }
        out.push('\n');
    }
    out
}

/// Parses a CSV produced by [`encode_map_csv`] (metadata comments optional).
pub fn decode_map_csv(text: &str) -> Result<MapPayload> {
    let mut kind = String::from("unknown");
    let mut attrs = Vec::new();
    let mut pitch = crate::grid::DEFAULT_PIXEL_PITCH_UM;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            for token in comment.split_whitespace() {
                if let Some((k, v)) = token.split_once('=') {
                    match k {
                        "kind" => kind = v.to_string(),
                        "pixel_pitch_um" => {
                            pitch = v.parse().map_err(|_| {
                                Error::Validation(format!(
                                    "line {}: bad pixel pitch {v}",
                                    lineno + 1
                                ))
                            })?
                        }
                        "width" | "height" => {}
                        _ => attrs.push((k.to_string(), v.to_string())),
                    }
                }
            }
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                cell.parse::<f64>().map_err(|_| {
                    Error::Validation(format!("line {}: unparseable cell `{cell}`", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Validation(format!(
                    "line {}: ragged row ({} cells, expected {})",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Validation("map CSV contains no data rows".into()));
    }
    let grid = PixelGrid::with_pitch(rows[0].len() as u32, rows.len() as u32, pitch)?;
    let mut values = Vec::with_capacity(grid.len());
    let mut excluded = Vec::with_capacity(grid.len());
    for row in rows {
        for v in row {
            excluded.push(v.is_nan());
            values.push(if v.is_nan() { 0.0 } else { v });
        }
    }
    Ok(MapPayload {
        grid,
        values,
        excluded,
        kind,
        attrs,
    })
}

/// Renders a map as a binary 16-bit graymap (P5). The linear scaling is
/// recorded in comment lines; excluded pixels map to 0. Returns the PGM
/// bytes and, when any pixel is excluded, a companion P5 validity map
/// (255 = valid, 0 = excluded).
pub fn encode_map_pgm(map: &MapPayload) -> (Vec<u8>, Option<Vec<u8>>) {
    let valid: Vec<f64> = map
        .values
        .iter()
        .zip(&map.excluded)
        .filter(|(_, &e)| !e)
        .map(|(&v, _)| v)
        .collect();
    let min = valid.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = valid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = if valid.is_empty() {
        (0.0, 1.0)
    } else if min == max {
        (min, min + 1.0)
    } else {
        (min, max)
    };

    let mut header = String::new();
    let _ = writeln!(header, "P5");
    let _ = writeln!(header, "# kind={}", map.kind);
    let _ = writeln!(header, "# min={min:.8e} max={max:.8e}");
    for (k, v) in &map.attrs {
        let _ = writeln!(header, "# {k}={v}");
    }
    let _ = writeln!(header, "{} {}", map.grid.width, map.grid.height);
    let _ = writeln!(header, "65535");
    let mut bytes = header.into_bytes();
    for (v, &e) in map.values.iter().zip(&map.excluded) {
        let level = if e {
            0u16
        } else {
            (((v - min) / (max - min)).clamp(0.0, 1.0) * 65535.0).round() as u16
        };
        bytes.extend_from_slice(&level.to_be_bytes());
    }

    let flags = map.excluded.iter().any(|&e| e).then(|| {
        let mut f = format!("P5\n{} {}\n255\n", map.grid.width, map.grid.height).into_bytes();
        f.extend(map.excluded.iter().map(|&e| if e { 0u8 } else { 255 }));
        f
    });
    (bytes, flags)
}

/// Writes a map in the requested format. In PGM mode a sidecar
/// `<path>.flags.pgm` validity map accompanies the output whenever pixels
/// are excluded.
pub fn write_map(map: &MapPayload, path: impl AsRef<Path>, format: MapFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        MapFormat::Csv => std::fs::write(path, encode_map_csv(map))?,
        MapFormat::Pgm => {
            let (bytes, flags) = encode_map_pgm(map);
            std::fs::write(path, bytes)?;
            if let Some(flags) = flags {
                let mut sidecar = path.as_os_str().to_owned();
                sidecar.push(".flags.pgm");
                std::fs::write(sidecar, flags)?;
            }
        }
    }
    Ok(())
}

pub fn read_map_csv(path: impl AsRef<Path>) -> Result<MapPayload> {
    let text = std::fs::read_to_string(path)?;
    decode_map_csv(&text)
}

/// Renders an SNR report as CSV with the fixed column schema
/// `n_mean,snr_sim,snr_theory,rel_err`.
pub fn encode_report_csv(report: &SnrReport) -> String {
    let mut out = String::new();
    out.push_str("# qsi-snr-report v1\n");
    let _ = writeln!(
        out,
        "# clusters={} bin_radius={}",
        report.cluster_count, report.bin_radius
    );
    out.push_str("n_mean,snr_sim,snr_theory,rel_err\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{:.8e},{:.8e},{:.8e},{:.8e}",
            row.n_mean,
            row.snr_sim,
            row.snr_theory,
            row.relative_error()
        );
    }
    out
}

pub fn write_report(report: &SnrReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_report_csv(report))?;
    Ok(())
}

/// Reads an object mask from a P2/P5 graymap (values scaled by the declared
/// maxval) or a CSV of transmittances taken verbatim.
pub fn read_mask(path: impl AsRef<Path>) -> Result<TransmissionMask> {
    let bytes = std::fs::read(path)?;
    decode_mask(&bytes)
}

pub fn decode_mask(bytes: &[u8]) -> Result<TransmissionMask> {
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        return decode_mask_pgm(bytes);
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Validation(format!("mask is neither a graymap nor UTF-8 CSV: {e}")))?;
    decode_mask_csv(text)
}

fn decode_mask_csv(text: &str) -> Result<TransmissionMask> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::Validation(format!(
                        "line {}: unparseable mask cell `{}`",
                        lineno + 1,
                        cell.trim()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Validation(format!(
                    "line {}: ragged mask row",
                    lineno + 1
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Validation("mask CSV contains no data".into()));
    }
    let grid = PixelGrid::new(rows[0].len() as u32, rows.len() as u32)?;
    TransmissionMask::from_values(grid, rows.into_iter().flatten().collect())
}

/// Whitespace/comment-aware token scanner for PGM headers.
struct PgmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmTokens<'a> {
    fn next_token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return Err(format_err(self.pos as u64, "graymap header truncated"));
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn next_u32(&mut self, what: &str) -> Result<u32> {
        let offset = self.pos as u64;
        let token = self.next_token()?;
        std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(offset, format!("bad {what} in graymap header")))
    }
}

fn decode_mask_pgm(bytes: &[u8]) -> Result<TransmissionMask> {
    let binary = bytes.starts_with(b"P5");
    let mut tokens = PgmTokens { bytes, pos: 2 };
    let width = tokens.next_u32("width")?;
    let height = tokens.next_u32("height")?;
    let maxval = tokens.next_u32("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(0, format!("graymap maxval {maxval} out of range")));
    }
    let grid = PixelGrid::new(width, height)?;
    let npix = grid.len();
    let scale = 1.0 / f64::from(maxval);

    let values: Vec<f64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = tokens.pos + 1;
        let per = if maxval < 256 { 1 } else { 2 };
        let need = npix * per;
        if bytes.len() < start || bytes.len() - start != need {
            return Err(format_err(
                bytes.len() as u64,
                format!(
                    "graymap raster is {} bytes, expected {need}",
                    bytes.len().saturating_sub(start)
                ),
            ));
        }
        let raster = &bytes[start..];
        if per == 1 {
            raster.iter().map(|&b| f64::from(b) * scale).collect()
        } else {
            raster
                .chunks_exact(2)
                .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) * scale)
                .collect()
        }
    } else {
        let mut out = Vec::with_capacity(npix);
        for _ in 0..npix {
            let v = tokens.next_u32("pixel value")?;
            out.push(f64::from(v) * scale);
        }
        out
    };
    let clamped: Vec<f64> = values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    TransmissionMask::from_values(grid, clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TransmissionMask;
    use crate::modes::ModeFunction;
    use crate::pipeline::{SnrReport, SnrReportRow};
    use crate::simulator::{sample_qsi_stack, SceneSpec};
    use crate::statistics::{NoiseModel, ProbeSpec};
    use approx::assert_relative_eq;

    fn sample_stack(clusters: u64) -> (Vec<FrameCluster>, StackMeta) {
        let grid = PixelGrid::new(6, 4).unwrap();
        let scene = SceneSpec::single_mode(
            ProbeSpec::thermal(2.0),
            ModeFunction::flat(grid),
            500.0,
            TransmissionMask::half_blocked(grid),
            NoiseModel { dark_std: 1.0 },
        );
        let stack = sample_qsi_stack(&scene, clusters, 77).unwrap();
        let meta = StackMeta {
            grid,
            cluster_frames: scene.cluster_frames,
            usable_indices: scene.usable_indices.clone(),
            exposure_us: scene.exposure_us,
            duty_cycle_us: scene.duty_cycle_us,
            seed: 77,
            scene_digest: scene.lineage_digest(),
        };
        (stack, meta)
    }

    #[test]
    fn stack_round_trip_is_identity() {
        let (stack, meta) = sample_stack(3);
        let bytes = encode_frame_stack(&stack, &meta).unwrap();
        let (meta2, stack2) = decode_frame_stack(&bytes).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(stack, stack2);
        // byte determinism
        assert_eq!(bytes, encode_frame_stack(&stack2, &meta2).unwrap());
    }

    #[test]
    fn empty_stack_is_header_only_and_readable() {
        let (_, meta) = sample_stack(1);
        let bytes = encode_frame_stack(&[], &meta).unwrap();
        assert_eq!(bytes.len(), 96);
        let (meta2, stack2) = decode_frame_stack(&bytes).unwrap();
        assert_eq!(meta, meta2);
        assert!(stack2.is_empty());
    }

    #[test]
    fn stack_size_follows_the_formula() {
        let grid = PixelGrid::new(4, 4).unwrap();
        let scene = SceneSpec::single_mode(
            ProbeSpec::thermal(1.0),
            ModeFunction::flat(grid),
            500.0,
            TransmissionMask::transparent(grid),
            NoiseModel::none(),
        );
        let stack = sample_qsi_stack(&scene, 1, 5).unwrap();
        let meta = StackMeta {
            grid,
            cluster_frames: 6,
            usable_indices: vec![1, 2, 3],
            exposure_us: 1.7,
            duty_cycle_us: 544.0,
            seed: 5,
            scene_digest: scene.lineage_digest(),
        };
        let bytes = encode_frame_stack(&stack, &meta).unwrap();
        let payload = 6 * 2 * 16 * 4;
        assert_eq!(bytes.len(), 96 + 16 + payload);
    }

    #[test]
    fn corrupt_magic_names_the_expected_value() {
        let (stack, meta) = sample_stack(1);
        let mut bytes = encode_frame_stack(&stack, &meta).unwrap();
        bytes[0] = b'X';
        let err = decode_frame_stack(&bytes).unwrap_err();
        assert!(err.to_string().contains("QSIF"), "{err}");
    }

    #[test]
    fn wrong_version_and_truncation_are_structured_errors() {
        let (stack, meta) = sample_stack(1);
        let bytes = encode_frame_stack(&stack, &meta).unwrap();

        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(
            decode_frame_stack(&wrong),
            Err(Error::Format { offset: 4, .. })
        ));

        for cut in [3, 40, 95, 100, bytes.len() - 1] {
            let err = decode_frame_stack(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut at {cut}: {err}");
        }
        // trailing garbage is also rejected: length must match exactly
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_frame_stack(&long).is_err());
    }

    #[test]
    fn non_finite_payload_is_rejected_with_offset() {
        let (stack, meta) = sample_stack(1);
        let mut bytes = encode_frame_stack(&stack, &meta).unwrap();
        let payload_start = bytes.len() - 6 * 2 * 24 * 4;
        bytes[payload_start..payload_start + 4]
            .copy_from_slice(&f32::INFINITY.to_le_bytes());
        match decode_frame_stack(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, payload_start as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn encoder_validates_cluster_consistency() {
        let (mut stack, meta) = sample_stack(2);
        stack[1].frames[0].n1[0] = f32::NAN;
        assert!(encode_frame_stack(&stack, &meta).is_err());

        let (mut stack, meta) = sample_stack(2);
        stack[1].usable_indices = vec![0];
        assert!(encode_frame_stack(&stack, &meta).is_err());
    }

    #[test]
    fn map_csv_round_trip_preserves_nine_digits() {
        let grid = PixelGrid::new(5, 3).unwrap();
        let mut values: Vec<f64> = (0..15).map(|i| 1.0 + (i as f64) * 0.123456789).collect();
        values[7] = 0.0;
        let mut excluded = vec![false; 15];
        excluded[7] = true;
        let map = MapPayload {
            grid,
            values: values.clone(),
            excluded: excluded.clone(),
            kind: "variance".into(),
            attrs: vec![("cluster_count".into(), "42".into())],
        };
        let text = encode_map_csv(&map);
        let back = decode_map_csv(&text).unwrap();
        assert_eq!(back.grid.width, 5);
        assert_eq!(back.excluded, excluded);
        assert_eq!(back.kind, "variance");
        assert!(back.attrs.contains(&("cluster_count".into(), "42".into())));
        for (a, b) in values.iter().zip(&back.values) {
            if *a != 0.0 {
                assert_relative_eq!(a, b, max_relative = 1e-8);
            }
        }
        // second encode is byte-identical
        assert_eq!(text, encode_map_csv(&back));
    }

    #[test]
    fn constant_map_pgm_is_flat_and_deterministic() {
        let grid = PixelGrid::new(4, 2).unwrap();
        let map = MapPayload {
            grid,
            values: vec![1.25; 8],
            excluded: vec![false; 8],
            kind: "variance".into(),
            attrs: vec![],
        };
        let (bytes, flags) = encode_map_pgm(&map);
        assert!(flags.is_none());
        assert_eq!(bytes, encode_map_pgm(&map).0);
        let raster = &bytes[bytes.len() - 16..];
        assert!(raster.chunks_exact(2).all(|c| c == raster.chunks_exact(2).next().unwrap()));
    }

    #[test]
    fn pgm_sidecar_flags_excluded_pixels() {
        let grid = PixelGrid::new(2, 2).unwrap();
        let map = MapPayload {
            grid,
            values: vec![0.5, 1.5, 0.0, 2.5],
            excluded: vec![false, false, true, false],
            kind: "transmission".into(),
            attrs: vec![],
        };
        let (_, flags) = encode_map_pgm(&map);
        let flags = flags.expect("sidecar expected");
        assert_eq!(&flags[flags.len() - 4..], &[255, 255, 0, 255]);
    }

    #[test]
    fn report_schema_is_fixed() {
        let report = SnrReport {
            rows: vec![SnrReportRow {
                n_mean: 1.0,
                snr_sim: 0.44,
                snr_theory: 0.4472135954999579,
            }],
            cluster_count: 600,
            bin_radius: 6,
        };
        let text = encode_report_csv(&report);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# qsi-snr-report v1"));
        assert_eq!(lines.next(), Some("# clusters=600 bin_radius=6"));
        assert_eq!(lines.next(), Some("n_mean,snr_sim,snr_theory,rel_err"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn mask_from_ascii_and_binary_graymaps() {
        let p2 = b"P2\n# comment\n3 2\n255\n255 128 0\n64 255 0\n";
        let mask = decode_mask(p2).unwrap();
        assert_eq!(mask.grid().width, 3);
        assert_relative_eq!(mask.get(0), 1.0);
        assert_relative_eq!(mask.get(1), 128.0 / 255.0, max_relative = 1e-12);
        assert_relative_eq!(mask.get(2), 0.0);

        let mut p5 = b"P5\n2 2\n255\n".to_vec();
        p5.extend_from_slice(&[255, 0, 128, 64]);
        let mask = decode_mask(&p5).unwrap();
        assert_relative_eq!(mask.get(2), 128.0 / 255.0, max_relative = 1e-12);

        let mut p5_16 = b"P5\n1 2\n65535\n".to_vec();
        p5_16.extend_from_slice(&0x8000u16.to_be_bytes());
        p5_16.extend_from_slice(&0xffffu16.to_be_bytes());
        let mask = decode_mask(&p5_16).unwrap();
        assert_relative_eq!(mask.get(1), 1.0);
    }

    #[test]
    fn mask_from_csv_is_verbatim_and_validated() {
        let mask = decode_mask(b"0.5,1\n0,0.25\n").unwrap();
        assert_relative_eq!(mask.get(0), 0.5);
        assert_relative_eq!(mask.get(3), 0.25);

        let err = decode_mask(b"0.5,1.5\n0,0.25\n").unwrap_err();
        assert!(err.to_string().contains("(1,0)=1.5"), "{err}");
    }

    #[test]
    fn all_black_and_all_white_masks() {
        let white = decode_mask(b"P2\n2 1\n255\n255 255\n").unwrap();
        assert!(white.values().iter().all(|&t| t == 1.0));
        let black = decode_mask(b"P2\n2 1\n255\n0 0\n").unwrap();
        assert!(black.values().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn malformed_graymaps_error_cleanly() {
        assert!(decode_mask(b"P5\n2 2\n255\n\x01\x02").is_err()); // short raster
        assert!(decode_mask(b"P2\n2 2\n0\n0 0 0 0\n").is_err()); // maxval 0
        assert!(decode_mask(b"P2\n2\n").is_err()); // truncated header
    }
}
