//! Synthetic frame generation for the homodyne imaging chain.
//!
//! # Sampling model
//!
//! Homodyne detection measures one field quadrature. A thermal mode has a
//! phase-independent Gaussian quadrature distribution with variance `1+2⟨n⟩`
//! in shot-noise units, so the thermal excess can be realized by a *single*
//! real Gaussian draw per mode per frame. With `N_LO(x) = lo_photons·U_LO(x)²`
//! the two detector planes of a frame are
//!
//! ```text
//! n1(x) = N_LO(x)/2 + ½·√N_LO(x)·[ξ(x) + Σ_k √t(x)·U_k(x)·q_k] + d1(x)
//! n2(x) = N_LO(x)/2 − ½·√N_LO(x)·[ξ(x) + Σ_k √t(x)·U_k(x)·q_k] + d2(x)
//! ```
//!
//! where `ξ(x) ~ N(0,1)` is per-pixel shot noise, `q_k ~ N(0, 2·n_k)` is the
//! shared excess quadrature of thermal mode `k` (`n_k` photons per mode), and
//! `d1, d2 ~ N(0, dark_std)` are dark counts. This reproduces, exactly at the
//! moment level for real mode functions,
//!
//! ```text
//! E[n1−n2] = 0
//! Var[n1−n2]/N_LO = 1 + 2·Σ_k n_k·t(x)·U_k(x)² + 2·dark_std²/N_LO
//! ```
//!
//! per pixel, and the corresponding binned law for any pixel region. The sum
//! `n1+n2` is deterministic apart from darks: its photon jitter only enters
//! at relative order `1/√N_LO` and is dropped, consistent with the strong-LO
//! regime the scene validator enforces.
//!
//! Coherent and vacuum probes carry no excess quadrature noise (`q_k = 0`);
//! in this scheme they are indistinguishable from each other, which is the
//! reason a thermal probe is needed at all.
//!
//! # Determinism
//!
//! Every cluster derives its own counter-based RNG stream from
//! `(seed, cluster_id)`, so generation parallelizes over clusters and the
//! result is bit-identical regardless of scheduling. The number of RNG draws
//! per frame does not depend on noise parameters, so runs that differ only
//! in `dark_std` share identical shot-noise and quadrature draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{PixelGrid, TransmissionMask};
use crate::modes::{ModeFunction, ORTHOGONALITY_TOLERANCE};
use crate::statistics::{NoiseModel, ProbeKind, ProbeSpec};

/// Default frames per camera duty cycle.
pub const DEFAULT_CLUSTER_FRAMES: u32 = 6;

/// Default usable frame indices within a cluster (zero-based); the first and
/// the trailing frames of a duty cycle are discarded as leakage-contaminated.
pub const DEFAULT_USABLE_INDICES: [u32; 3] = [1, 2, 3];

/// Default exposure per frame, microseconds.
pub const DEFAULT_EXPOSURE_US: f64 = 1.7;

/// Default duty cycle, microseconds.
pub const DEFAULT_DUTY_CYCLE_US: f64 = 544.0;

/// Complete description of one simulated acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub grid: PixelGrid,
    pub probe: ProbeSpec,
    /// One mode per `probe.mode_count`, mutually orthogonal.
    pub probe_modes: Vec<ModeFunction>,
    pub lo_mode: ModeFunction,
    /// LO photons per frame over the whole beam; must dominate the probe.
    pub lo_photons: f64,
    pub mask: TransmissionMask,
    pub noise: NoiseModel,
    pub cluster_frames: u32,
    pub usable_indices: Vec<u32>,
    pub exposure_us: f64,
    pub duty_cycle_us: f64,
}

impl SceneSpec {
    /// A single-mode scene with the probe matched to the LO and default
    /// cluster timing.
    pub fn single_mode(
        probe: ProbeSpec,
        lo_mode: ModeFunction,
        lo_photons: f64,
        mask: TransmissionMask,
        noise: NoiseModel,
    ) -> Self {
        SceneSpec {
            grid: *lo_mode.grid(),
            probe,
            probe_modes: vec![lo_mode.clone()],
            lo_mode,
            lo_photons,
            mask,
            noise,
            cluster_frames: DEFAULT_CLUSTER_FRAMES,
            usable_indices: DEFAULT_USABLE_INDICES.to_vec(),
            exposure_us: DEFAULT_EXPOSURE_US,
            duty_cycle_us: DEFAULT_DUTY_CYCLE_US,
        }
    }

    /// Replaces the object with a fully transparent mask, keeping everything
    /// else; used to acquire reference (unobstructed) stacks.
    pub fn reference_scene(&self) -> Self {
        let mut scene = self.clone();
        scene.mask = TransmissionMask::transparent(self.grid);
        scene
    }

    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        self.noise.validate()?;
        if self.probe_modes.len() != self.probe.mode_count as usize {
            return Err(Error::Scene(format!(
                "{} probe modes supplied for mode_count = {}",
                self.probe_modes.len(),
                self.probe.mode_count
            )));
        }
        for (k, mode) in self.probe_modes.iter().enumerate() {
            self.grid
                .check_same(mode.grid(), "scene probe mode")
                .map_err(|e| Error::Scene(format!("probe mode {k}: {e}")))?;
        }
        self.grid.check_same(self.lo_mode.grid(), "scene LO mode")?;
        self.grid.check_same(self.mask.grid(), "scene mask")?;
        for j in 0..self.probe_modes.len() {
            for k in (j + 1)..self.probe_modes.len() {
                let dot = self.probe_modes[j].overlap(&self.probe_modes[k])?;
                if dot >= ORTHOGONALITY_TOLERANCE {
                    return Err(Error::Scene(format!(
                        "probe modes {j} and {k} are not orthogonal (overlap {dot:.2e})"
                    )));
                }
            }
        }
        if self.cluster_frames < 1 {
            return Err(Error::Scene("cluster_frames must be at least 1".into()));
        }
        if self.usable_indices.is_empty() {
            return Err(Error::Scene("usable_indices must not be empty".into()));
        }
        let mut prev: Option<u32> = None;
        for &i in &self.usable_indices {
            if i >= self.cluster_frames {
                return Err(Error::Scene(format!(
                    "usable index {i} outside cluster of {} frames",
                    self.cluster_frames
                )));
            }
            if prev.is_some_and(|p| i <= p) {
                return Err(Error::Scene(
                    "usable_indices must be strictly increasing".into(),
                ));
            }
            prev = Some(i);
        }
        let floor = 100.0 * self.probe.mean_photons_total.max(1.0);
        if !(self.lo_photons >= floor) {
            return Err(Error::Scene(format!(
                "lo_photons = {} below the strong-LO floor {floor}",
                self.lo_photons
            )));
        }
        if !(self.exposure_us > 0.0) || !(self.duty_cycle_us > 0.0) {
            return Err(Error::Scene("exposure and duty cycle must be positive".into()));
        }
        Ok(())
    }

    /// Content hash of the acquisition lineage: grid, probe, modes, LO,
    /// noise and cluster timing. The object mask is deliberately *excluded*
    /// so that probe and reference stacks of the same acquisition share a
    /// digest and can be paired safely at reconstruction time.
    pub fn lineage_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"qsi-scene-v1");
        h.update(self.grid.width.to_le_bytes());
        h.update(self.grid.height.to_le_bytes());
        h.update(self.grid.pixel_pitch_um.to_le_bytes());
        h.update((self.probe.kind as u8).to_le_bytes());
        h.update(self.probe.mean_photons_total.to_le_bytes());
        h.update(self.probe.mode_count.to_le_bytes());
        h.update(
            self.probe
                .squeeze_param
                .unwrap_or(f64::NEG_INFINITY)
                .to_le_bytes(),
        );
        for mode in &self.probe_modes {
            for a in mode.amplitudes() {
                h.update(a.to_le_bytes());
            }
        }
        for a in self.lo_mode.amplitudes() {
            h.update(a.to_le_bytes());
        }
        h.update(self.lo_photons.to_le_bytes());
        h.update(self.noise.dark_std.to_le_bytes());
        h.update(self.cluster_frames.to_le_bytes());
        h.update((self.usable_indices.len() as u32).to_le_bytes());
        for &i in &self.usable_indices {
            h.update(i.to_le_bytes());
        }
        h.update(self.exposure_us.to_le_bytes());
        h.update(self.duty_cycle_us.to_le_bytes());
        h.finalize().into()
    }
}

/// Both detector planes of one exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub n1: Vec<f32>,
    pub n2: Vec<f32>,
}

/// One camera duty cycle: `cluster_frames` ordered frames of which only
/// `usable_indices` carry probe statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCluster {
    pub grid: PixelGrid,
    pub frames: Vec<FramePair>,
    pub usable_indices: Vec<u32>,
    pub cluster_id: u64,
    pub seed_tag: u64,
}

impl FrameCluster {
    /// Iterator over the usable frames only.
    pub fn usable_frames(&self) -> impl Iterator<Item = &FramePair> {
        self.usable_indices
            .iter()
            .map(move |&i| &self.frames[i as usize])
    }
}

/// SplitMix64 step; used to derive independent stream tags.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives the 64-bit stream tag of a cluster from the root seed.
pub fn cluster_seed_tag(seed: u64, cluster_id: u64) -> u64 {
    splitmix64(seed ^ cluster_id.wrapping_mul(0x9e3779b97f4a7c15))
}

/// Derives a secondary root seed for a named companion stream (for example
/// the unobstructed reference acquisition of the same run).
pub fn derive_stream_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"qsi-stream");
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let bytes: [u8; 32] = h.finalize().into();
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

fn cluster_rng(seed: u64, cluster_id: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&cluster_id.to_le_bytes());
    key[16..24].copy_from_slice(b"qsi-clus");
    ChaCha12Rng::from_seed(key)
}

/// Per-pixel LO counts plus the masked probe amplitudes in sparse form,
/// shared by every cluster of a run. Mode families with disjoint supports
/// (speckle cells) cost one entry per pixel instead of one per mode.
struct SceneTables {
    lo_counts: Vec<f64>,
    mode_offsets: Vec<u32>,
    mode_entries: Vec<(u32, f64)>,
}

impl SceneTables {
    fn build(scene: &SceneSpec) -> Self {
        let npix = scene.grid.len();
        let lo_counts = scene
            .lo_mode
            .amplitudes()
            .iter()
            .map(|u| scene.lo_photons * u * u)
            .collect();
        let mut mode_offsets = Vec::with_capacity(npix + 1);
        let mut mode_entries = Vec::new();
        mode_offsets.push(0);
        for i in 0..npix {
            let amp_t = scene.mask.get(i).sqrt();
            for (k, mode) in scene.probe_modes.iter().enumerate() {
                let amp = amp_t * mode.get(i);
                if amp != 0.0 {
                    mode_entries.push((k as u32, amp));
                }
            }
            mode_offsets.push(mode_entries.len() as u32);
        }
        SceneTables {
            lo_counts,
            mode_offsets,
            mode_entries,
        }
    }
}

fn sample_cluster_with(
    scene: &SceneSpec,
    tables: &SceneTables,
    cluster_id: u64,
    seed: u64,
) -> FrameCluster {
    let mut rng = cluster_rng(seed, cluster_id);
    let npix = scene.grid.len();

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let dark = Normal::new(0.0, scene.noise.dark_std).expect("dark_std validated non-negative");
    let n_per_mode = scene.probe.photons_per_mode();
    let thermal = scene.probe.kind == ProbeKind::Thermal && n_per_mode > 0.0;
    let quad = Normal::new(0.0, (2.0 * n_per_mode).sqrt()).expect("quadrature width");

    let mut frames = Vec::with_capacity(scene.cluster_frames as usize);
    for frame_idx in 0..scene.cluster_frames {
        let usable = scene.usable_indices.contains(&frame_idx);
        let q: Vec<f64> = (0..scene.probe.mode_count)
            .map(|_| {
                let draw = quad.sample(&mut rng);
                if usable && thermal {
                    draw
                } else {
                    0.0
                }
            })
            .collect();

        let mut n1 = Vec::with_capacity(npix);
        let mut n2 = Vec::with_capacity(npix);
        for i in 0..npix {
            let xi: f64 = unit.sample(&mut rng);
            let d1: f64 = dark.sample(&mut rng);
            let d2: f64 = dark.sample(&mut rng);
            let mut g = xi;
            let lo = tables.mode_offsets[i] as usize;
            let hi = tables.mode_offsets[i + 1] as usize;
            for &(k, amp) in &tables.mode_entries[lo..hi] {
                g += amp * q[k as usize];
            }
            let half_lo = 0.5 * tables.lo_counts[i];
            let swing = 0.5 * tables.lo_counts[i].sqrt() * g;
            n1.push((half_lo + swing + d1) as f32);
            n2.push((half_lo - swing + d2) as f32);
        }
        frames.push(FramePair { n1, n2 });
    }

    FrameCluster {
        grid: scene.grid,
        frames,
        usable_indices: scene.usable_indices.clone(),
        cluster_id,
        seed_tag: cluster_seed_tag(seed, cluster_id),
    }
}

/// Samples one frame cluster of the homodyne chain.
///
/// Usable frames carry the probe's excess quadrature; the remaining frames
/// are LO-only (shot noise and darks), emulating leakage-contaminated
/// exposures so that downstream code must honour the usable-index subset.
pub fn sample_qsi_cluster(scene: &SceneSpec, cluster_id: u64, seed: u64) -> Result<FrameCluster> {
    scene.validate()?;
    let tables = SceneTables::build(scene);
    Ok(sample_cluster_with(scene, &tables, cluster_id, seed))
}

/// Samples `count` clusters with ids `0..count`, in parallel. Each cluster
/// has its own derived stream, so the output is independent of scheduling.
pub fn sample_qsi_stack(scene: &SceneSpec, count: u64, seed: u64) -> Result<Vec<FrameCluster>> {
    scene.validate()?;
    let tables = SceneTables::build(scene);
    Ok((0..count)
        .into_par_iter()
        .map(|id| sample_cluster_with(scene, &tables, id, seed))
        .collect())
}

/// Intensity frames for classical differential imaging: the probe arm sees
/// the object, the reference arm does not.
#[derive(Debug, Clone)]
pub struct CdiFrames {
    pub grid: PixelGrid,
    pub probe: Vec<Vec<f32>>,
    pub reference: Vec<Vec<f32>>,
}

/// Samples direct-detection frames for the classical benchmark.
///
/// Per pixel and frame the mean photon number is
/// `μ(x) = mean_photons_total · U₁(x)² · t(x)` in the probe arm and the same
/// without `t` in the reference arm. Coherent probes draw Poisson counts;
/// thermal probes draw geometrically distributed counts with mean `μ`
/// (variance `μ(1+μ)`), the single-mode bunched statistics. Dark noise is
/// added to every pixel of both arms. Counts are per-pixel independent;
/// cross-pixel thermal correlations are not modelled.
pub fn sample_cdi_frames(scene: &SceneSpec, n_frames: u32, seed: u64) -> Result<CdiFrames> {
    scene.validate()?;
    match scene.probe.kind {
        ProbeKind::Vacuum => {
            return Err(Error::domain(
                "probe",
                0.0,
                "differential imaging needs a coherent or thermal probe",
            ))
        }
        ProbeKind::Thermal | ProbeKind::Coherent => {
            if scene.probe.mode_count != 1 {
                return Err(Error::Scene(
                    "differential-imaging sampling is defined for a single probe mode".into(),
                ));
            }
        }
    }

    let mut rng = cluster_rng(derive_stream_seed(seed, "cdi"), 0);
    let npix = scene.grid.len();
    let dark = Normal::new(0.0, scene.noise.dark_std).expect("dark_std validated");
    let mode = &scene.probe_modes[0];
    let mu_ref: Vec<f64> = mode
        .amplitudes()
        .iter()
        .map(|u| scene.probe.mean_photons_total * u * u)
        .collect();

    let mut probe = Vec::with_capacity(n_frames as usize);
    let mut reference = Vec::with_capacity(n_frames as usize);
    for _ in 0..n_frames {
        let mut p = Vec::with_capacity(npix);
        let mut r = Vec::with_capacity(npix);
        for i in 0..npix {
            let mu_p = mu_ref[i] * scene.mask.get(i);
            let (cp, cr) = match scene.probe.kind {
                ProbeKind::Coherent => (
                    sample_poisson(&mut rng, mu_p),
                    sample_poisson(&mut rng, mu_ref[i]),
                ),
                ProbeKind::Thermal => (
                    sample_geometric(&mut rng, mu_p),
                    sample_geometric(&mut rng, mu_ref[i]),
                ),
                ProbeKind::Vacuum => unreachable!(),
            };
            p.push((cp + dark.sample(&mut rng)) as f32);
            r.push((cr + dark.sample(&mut rng)) as f32);
        }
        probe.push(p);
        reference.push(r);
    }
    Ok(CdiFrames {
        grid: scene.grid,
        probe,
        reference,
    })
}

fn sample_poisson(rng: &mut ChaCha12Rng, mu: f64) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    Poisson::new(mu).expect("positive mean").sample(rng)
}

/// Bose-Einstein photon counts: geometric on {0, 1, 2, ...} with mean `mu`.
fn sample_geometric(rng: &mut ChaCha12Rng, mu: f64) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    let q = mu / (1.0 + mu);
    let u: f64 = rng.gen::<f64>();
    ((1.0 - u).ln() / q.ln()).floor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::ModeFunction;
    use approx::assert_abs_diff_eq;

    fn flat_scene(n_total: f64, grid: PixelGrid, dark_std: f64) -> SceneSpec {
        SceneSpec::single_mode(
            ProbeSpec::thermal(n_total),
            ModeFunction::flat(grid),
            100.0 * n_total.max(1.0) * 10.0,
            TransmissionMask::transparent(grid),
            NoiseModel { dark_std },
        )
    }

    /// Pools every usable frame and pixel of a flat scene into one empirical
    /// normalized variance: Var[n1-n2] / mean[n1+n2].
    fn pooled_normalized_variance(clusters: &[FrameCluster]) -> (f64, usize) {
        let mut sum_d2 = 0.0;
        let mut sum_s = 0.0;
        let mut count = 0usize;
        for cluster in clusters {
            for frame in cluster.usable_frames() {
                for (a, b) in frame.n1.iter().zip(&frame.n2) {
                    let d = f64::from(*a) - f64::from(*b);
                    sum_d2 += d * d;
                    sum_s += f64::from(*a) + f64::from(*b);
                    count += 1;
                }
            }
        }
        (sum_d2 / sum_s, count)
    }

    #[test]
    fn identical_inputs_give_bit_identical_clusters() {
        let grid = PixelGrid::new(16, 16).unwrap();
        let scene = flat_scene(0.5 * grid.len() as f64, grid, 3.0);
        let a = sample_qsi_cluster(&scene, 7, 1234).unwrap();
        let b = sample_qsi_cluster(&scene, 7, 1234).unwrap();
        assert_eq!(a, b);
        let c = sample_qsi_cluster(&scene, 8, 1234).unwrap();
        assert_ne!(a.frames[0].n1, c.frames[0].n1);
    }

    #[test]
    fn stack_order_is_independent_of_parallel_scheduling() {
        let grid = PixelGrid::new(8, 8).unwrap();
        let scene = flat_scene(3.2, grid, 0.0);
        let stack = sample_qsi_stack(&scene, 12, 99).unwrap();
        for (id, cluster) in stack.iter().enumerate() {
            let expected = sample_qsi_cluster(&scene, id as u64, 99).unwrap();
            assert_eq!(*cluster, expected);
        }
    }

    #[test]
    fn vacuum_probe_is_shot_noise_limited() {
        let grid = PixelGrid::new(24, 24).unwrap();
        let scene = SceneSpec::single_mode(
            ProbeSpec::vacuum(),
            ModeFunction::flat(grid),
            1e4,
            TransmissionMask::transparent(grid),
            NoiseModel::none(),
        );
        let clusters = sample_qsi_stack(&scene, 120, 5).unwrap();
        let (v, count) = pooled_normalized_variance(&clusters);
        let se = (2.0 / count as f64).sqrt();
        assert_abs_diff_eq!(v, 1.0, epsilon = 3.0 * se);
    }

    /// Standard error of a pooled/spatial-mean normalized-variance estimate.
    ///
    /// The shot-noise part averages over pixels and frames, but the thermal
    /// excess comes from ONE quadrature draw per frame shared by the whole
    /// mode, so its chi-squared fluctuation only averages over frames:
    /// SE² = 2V²/(frames·pixels) + 2(V−1)²/frames.
    fn mean_variance_se(v: f64, frames: usize, pixels: usize) -> f64 {
        (2.0 * v * v / (frames * pixels) as f64 + 2.0 * (v - 1.0).powi(2) / frames as f64).sqrt()
    }

    #[test]
    fn thermal_probe_reproduces_pixel_variance_law() {
        // flat beam with 0.1 photons per pixel: V = 1.2
        let grid = PixelGrid::new(32, 32).unwrap();
        let n_pxl = 0.1;
        let scene = flat_scene(n_pxl * grid.len() as f64, grid, 0.0);
        let clusters = sample_qsi_stack(&scene, 150, 42).unwrap();
        let (v, count) = pooled_normalized_variance(&clusters);
        let expected = 1.2;
        let se = mean_variance_se(expected, 150 * 3, count / (150 * 3));
        assert_abs_diff_eq!(v, expected, epsilon = 3.0 * se);
    }

    #[test]
    fn half_blocked_scene_splits_variance_by_region() {
        let grid = PixelGrid::new(32, 32).unwrap();
        let n_pxl = 0.3;
        let mut scene = flat_scene(n_pxl * grid.len() as f64, grid, 0.0);
        scene.mask = TransmissionMask::half_blocked(grid);
        let clusters = sample_qsi_stack(&scene, 200, 7).unwrap();

        let mut acc = [(0.0f64, 0.0f64, 0usize); 2]; // blocked, unblocked
        for cluster in &clusters {
            for frame in cluster.usable_frames() {
                for i in 0..grid.len() {
                    let side = usize::from(grid.coords(i).0 >= grid.width / 2);
                    let d = f64::from(frame.n1[i]) - f64::from(frame.n2[i]);
                    acc[side].0 += d * d;
                    acc[side].1 += f64::from(frame.n1[i]) + f64::from(frame.n2[i]);
                    acc[side].2 += 1;
                }
            }
        }
        let v_blocked = acc[0].0 / acc[0].1;
        let v_open = acc[1].0 / acc[1].1;
        let frames = 200 * 3;
        // blocked pixels carry no shared thermal mode, only shot noise
        let se_blocked = (2.0 / acc[0].2 as f64).sqrt();
        assert_abs_diff_eq!(v_blocked, 1.0, epsilon = 3.0 * se_blocked);
        let expected = 1.0 + 2.0 * n_pxl;
        let se_open = mean_variance_se(expected, frames, acc[1].2 / frames);
        assert_abs_diff_eq!(v_open, expected, epsilon = 3.0 * se_open);
    }

    #[test]
    fn difference_is_balanced_and_sum_matches_lo() {
        let grid = PixelGrid::new(16, 16).unwrap();
        let scene = flat_scene(10.0, grid, 2.0);
        let clusters = sample_qsi_stack(&scene, 150, 11).unwrap();
        let n_lo_per_pixel = scene.lo_photons / grid.len() as f64;

        let mut sum_d = 0.0;
        let mut sum_s = 0.0;
        let mut count = 0usize;
        for cluster in &clusters {
            for frame in cluster.usable_frames() {
                for (a, b) in frame.n1.iter().zip(&frame.n2) {
                    sum_d += f64::from(*a) - f64::from(*b);
                    sum_s += f64::from(*a) + f64::from(*b);
                    count += 1;
                }
            }
        }
        let mean_d = sum_d / count as f64;
        let mean_s = sum_s / count as f64;
        // Var(d) per sample ≈ N_LO·V + 2σ_d²
        let var_d = n_lo_per_pixel * (1.0 + 2.0 * 10.0 / grid.len() as f64) + 8.0;
        assert_abs_diff_eq!(mean_d, 0.0, epsilon = 3.0 * (var_d / count as f64).sqrt());
        let var_s = 2.0 * scene.noise.dark_std.powi(2);
        assert_abs_diff_eq!(
            mean_s,
            n_lo_per_pixel,
            epsilon = 3.0 * (var_s / count as f64).sqrt()
        );
    }

    #[test]
    fn dark_noise_adds_its_variance_to_the_difference() {
        let grid = PixelGrid::new(16, 16).unwrap();
        let dark_std = 5.0;
        let scene = SceneSpec::single_mode(
            ProbeSpec::vacuum(),
            ModeFunction::flat(grid),
            1e4,
            TransmissionMask::transparent(grid),
            NoiseModel { dark_std },
        );
        let clusters = sample_qsi_stack(&scene, 200, 3).unwrap();
        let (v, count) = pooled_normalized_variance(&clusters);
        let n_lo = 1e4 / grid.len() as f64;
        let expected = 1.0 + 2.0 * dark_std * dark_std / n_lo;
        let se = expected * (2.0 / count as f64).sqrt();
        assert_abs_diff_eq!(v, expected, epsilon = 4.0 * se);
    }

    #[test]
    fn clusters_are_statistically_independent() {
        let grid = PixelGrid::new(16, 16).unwrap();
        let scene = flat_scene(25.6, grid, 0.0);
        let clusters = sample_qsi_stack(&scene, 300, 21).unwrap();
        let means: Vec<f64> = clusters
            .iter()
            .map(|c| {
                let mut s = 0.0;
                let mut n = 0usize;
                for frame in c.usable_frames() {
                    for (a, b) in frame.n1.iter().zip(&frame.n2) {
                        s += f64::from(*a) - f64::from(*b);
                        n += 1;
                    }
                }
                s / n as f64
            })
            .collect();
        let m = means.len();
        let mean: f64 = means.iter().sum::<f64>() / m as f64;
        let var: f64 = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m as f64;
        let lag1: f64 = means
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / ((m - 1) as f64 * var);
        assert!(lag1.abs() < 3.0 / (m as f64).sqrt(), "lag-1 autocorr {lag1}");
    }

    #[test]
    fn nonusable_frames_are_lo_only() {
        // a huge thermal excess must show up only in the usable frames
        let grid = PixelGrid::new(16, 16).unwrap();
        let n_total = 200.0;
        let scene = flat_scene(n_total, grid, 0.0);
        let clusters = sample_qsi_stack(&scene, 100, 13).unwrap();
        let mut acc = [(0.0, 0.0); 2]; // non-usable, usable
        for cluster in &clusters {
            for (idx, frame) in cluster.frames.iter().enumerate() {
                let slot = usize::from(cluster.usable_indices.contains(&(idx as u32)));
                for (a, b) in frame.n1.iter().zip(&frame.n2) {
                    let d = f64::from(*a) - f64::from(*b);
                    acc[slot].0 += d * d;
                    acc[slot].1 += f64::from(*a) + f64::from(*b);
                }
            }
        }
        let v_rest = acc[0].0 / acc[0].1;
        let v_usable = acc[1].0 / acc[1].1;
        assert!(v_rest < 1.1, "leakage frames carry excess: {v_rest}");
        assert!(v_usable > 1.2, "usable frames missing excess: {v_usable}");
    }

    #[test]
    fn scene_validation_catches_bad_setups() {
        let grid = PixelGrid::new(16, 16).unwrap();
        let mut scene = flat_scene(4.0, grid, 0.0);
        scene.lo_photons = 10.0;
        assert!(scene.validate().is_err(), "weak LO accepted");

        let mut scene = flat_scene(4.0, grid, 0.0);
        scene.usable_indices = vec![0, 6];
        assert!(scene.validate().is_err(), "out-of-range usable index accepted");

        let mut scene = flat_scene(4.0, grid, 0.0);
        scene.probe.mode_count = 2;
        scene.probe_modes = vec![ModeFunction::flat(grid), ModeFunction::flat(grid)];
        assert!(scene.validate().is_err(), "non-orthogonal modes accepted");
    }

    #[test]
    fn lineage_digest_ignores_the_mask_but_nothing_else() {
        let grid = PixelGrid::new(16, 16).unwrap();
        let scene = flat_scene(4.0, grid, 1.0);
        let mut masked = scene.clone();
        masked.mask = TransmissionMask::half_blocked(grid);
        assert_eq!(scene.lineage_digest(), masked.lineage_digest());

        let mut other = scene.clone();
        other.lo_photons *= 2.0;
        assert_ne!(scene.lineage_digest(), other.lineage_digest());
    }

    #[test]
    fn coherent_cdi_counts_are_poissonian() {
        let grid = PixelGrid::new(24, 24).unwrap();
        let mu = 1.0;
        let scene = SceneSpec::single_mode(
            ProbeSpec::coherent(mu * grid.len() as f64),
            ModeFunction::flat(grid),
            1e5,
            TransmissionMask::transparent(grid),
            NoiseModel::none(),
        );
        let frames = sample_cdi_frames(&scene, 200, 77).unwrap();
        let samples: Vec<f64> = frames
            .probe
            .iter()
            .flat_map(|f| f.iter().map(|&c| f64::from(c)))
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        // Poisson: variance/mean = 1; Var(s²) ≈ (μ₄−σ⁴)/n with μ₄ ≈ 3σ⁴+...
        assert_abs_diff_eq!(mean, mu, epsilon = 3.0 * (mu / n).sqrt());
        assert_abs_diff_eq!(var / mean, 1.0, epsilon = 3.0 * (3.0 / n).sqrt());
    }

    #[test]
    fn thermal_cdi_counts_are_bunched() {
        let grid = PixelGrid::new(24, 24).unwrap();
        let mu = 1.0;
        let scene = SceneSpec::single_mode(
            ProbeSpec::thermal(mu * grid.len() as f64),
            ModeFunction::flat(grid),
            1e5,
            TransmissionMask::transparent(grid),
            NoiseModel::none(),
        );
        let frames = sample_cdi_frames(&scene, 200, 78).unwrap();
        let samples: Vec<f64> = frames
            .reference
            .iter()
            .flat_map(|f| f.iter().map(|&c| f64::from(c)))
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let expected = mu * (1.0 + mu);
        // geometric distribution has heavy fourth moment; allow a loose band
        assert_abs_diff_eq!(mean, mu, epsilon = 3.0 * (expected / n).sqrt());
        assert_abs_diff_eq!(var, expected, epsilon = 0.1 * expected);
    }

    #[test]
    fn opaque_object_blocks_all_probe_counts() {
        let grid = PixelGrid::new(16, 16).unwrap();
        let scene = SceneSpec::single_mode(
            ProbeSpec::coherent(100.0),
            ModeFunction::flat(grid),
            1e4,
            TransmissionMask::uniform(grid, 0.0).unwrap(),
            NoiseModel::none(),
        );
        let frames = sample_cdi_frames(&scene, 20, 5).unwrap();
        assert!(frames
            .probe
            .iter()
            .all(|f| f.iter().all(|&c| c == 0.0)));
        assert!(frames
            .reference
            .iter()
            .any(|f| f.iter().any(|&c| c > 0.0)));
    }

    #[test]
    fn cdi_rejects_vacuum_probe() {
        let grid = PixelGrid::new(8, 8).unwrap();
        let scene = SceneSpec::single_mode(
            ProbeSpec::vacuum(),
            ModeFunction::flat(grid),
            1e4,
            TransmissionMask::transparent(grid),
            NoiseModel::none(),
        );
        assert!(sample_cdi_frames(&scene, 5, 1).is_err());
    }
}
