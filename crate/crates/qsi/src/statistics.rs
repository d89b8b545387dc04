//! Closed-form quadrature-noise statistics.
//!
//! Everything in this module is an exact analytic expression; the Monte
//! Carlo machinery in [`crate::simulator`] and [`crate::pipeline`] is tested
//! against these functions, never the other way round.
//!
//! The underlying model: a weak probe with thermal photon statistics crosses
//! a semi-transparent object, interferes with a strong local oscillator on a
//! balanced splitter, and the per-pixel photon-count difference of the two
//! outputs is recorded. In shot-noise units the normalized temporal variance
//! of that difference is
//!
//! ```text
//! V(x) = 1 + 2⟨n⟩ · t(x) · 𝒪(x)
//! ```
//!
//! where `⟨n⟩` is the mean thermal photon number, `t(x)` the intensity
//! transmittance of the object and `𝒪(x)` the probe/LO mode overlap. A
//! coherent or vacuum probe gives `V = 1` everywhere, which is why excess
//! quadrature noise images the object.

use crate::error::{Error, Result};
use crate::grid::TransmissionMask;
use crate::modes::ModeFunction;

/// Default tolerance below which a denominator counts as degenerate.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Photon statistics of the probe beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Thermal,
    Coherent,
    Vacuum,
}

/// Probe-state description: total mean photon number per frame, how many
/// equally populated spatial modes carry it, and the photon statistics.
///
/// For a thermal beam produced by unseeded parametric gain the mean photon
/// number relates to the gain parameter as `⟨n⟩ = sinh²(r)`; when
/// `squeeze_param` is present it must be consistent with
/// `mean_photons_total` to within 1e-12 relative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSpec {
    pub mean_photons_total: f64,
    pub mode_count: u32,
    pub kind: ProbeKind,
    pub squeeze_param: Option<f64>,
}

impl ProbeSpec {
    pub fn thermal(mean_photons_total: f64) -> Self {
        ProbeSpec {
            mean_photons_total,
            mode_count: 1,
            kind: ProbeKind::Thermal,
            squeeze_param: None,
        }
    }

    pub fn coherent(mean_photons_total: f64) -> Self {
        ProbeSpec {
            mean_photons_total,
            mode_count: 1,
            kind: ProbeKind::Coherent,
            squeeze_param: None,
        }
    }

    pub fn vacuum() -> Self {
        ProbeSpec {
            mean_photons_total: 0.0,
            mode_count: 1,
            kind: ProbeKind::Vacuum,
            squeeze_param: None,
        }
    }

    pub fn with_modes(mut self, mode_count: u32) -> Self {
        self.mode_count = mode_count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photons_total >= 0.0) {
            return Err(Error::domain(
                "mean_photons_total",
                self.mean_photons_total,
                "mean_photons_total >= 0",
            ));
        }
        if self.mode_count < 1 {
            return Err(Error::domain(
                "mode_count",
                self.mode_count as f64,
                "mode_count >= 1",
            ));
        }
        if self.kind == ProbeKind::Vacuum && self.mean_photons_total != 0.0 {
            return Err(Error::domain(
                "mean_photons_total",
                self.mean_photons_total,
                "vacuum probe carries zero photons",
            ));
        }
        if let Some(r) = self.squeeze_param {
            if !(r >= 0.0) {
                return Err(Error::domain("squeeze_param", r, "squeeze_param >= 0"));
            }
            if self.kind == ProbeKind::Thermal {
                let implied = fwm_mean_photons(r)?;
                let scale = self.mean_photons_total.abs().max(implied.abs()).max(1e-300);
                if (self.mean_photons_total - implied).abs() / scale > 1e-12
                    && (self.mean_photons_total - implied).abs() > 1e-12
                {
                    return Err(Error::domain(
                        "squeeze_param",
                        r,
                        "mean_photons_total must equal sinh²(squeeze_param)",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Mean photons per mode, `⟨n⟩/j`.
    pub fn photons_per_mode(&self) -> f64 {
        self.mean_photons_total / self.mode_count as f64
    }
}

/// Detector noise: standard deviation of the dark counts per pixel per frame
/// in each output region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub dark_std: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel { dark_std: 0.0 }
    }

    pub fn new(dark_std: f64) -> Result<Self> {
        let m = NoiseModel { dark_std };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dark_std >= 0.0) {
            return Err(Error::domain("dark_std", self.dark_std, "dark_std >= 0"));
        }
        Ok(())
    }
}

/// Which imaging scheme an SNR value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnrMethod {
    /// Quadrature-noise shadow imaging with a thermal probe.
    Qsi,
    /// Classical differential (intensity) imaging with a coherent probe.
    Cdi,
}

/// One point of an SNR curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrPoint {
    pub mean_photons: f64,
    pub transmittance: f64,
    pub snr: f64,
    pub method: SnrMethod,
}

impl SnrPoint {
    pub fn qsi(mean_photons: f64, transmittance: f64) -> Result<Self> {
        Ok(SnrPoint {
            mean_photons,
            transmittance,
            snr: snr_qsi(mean_photons, transmittance)?,
            method: SnrMethod::Qsi,
        })
    }

    pub fn cdi(mean_photons: f64, transmittance: f64, dark_std: f64) -> Result<Self> {
        Ok(SnrPoint {
            mean_photons,
            transmittance,
            snr: snr_cdi(mean_photons, transmittance, dark_std)?,
            method: SnrMethod::Cdi,
        })
    }
}

fn check_range(argument: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64> {
    if !value.is_finite() || value < lo || value > hi {
        let requirement: &'static str = match (lo == 0.0, hi.is_infinite()) {
            (true, true) => "value >= 0",
            (true, false) => "0 <= value <= 1",
            _ => "value in range",
        };
        return Err(Error::domain(argument, value, requirement));
    }
    Ok(value)
}

/// Normalized variance seen by a single pixel:
/// `V = 1 + 2·n_th·t·overlap`.
///
/// `n_th` is the mean thermal photon number reaching the pixel's mode,
/// `t` the intensity transmittance at the pixel, and `overlap` the local
/// probe/LO mode overlap. A vacuum probe (`n_th = 0`) or a fully blocked
/// pixel (`t = 0`) returns exactly 1: coherent-vacuum shot noise.
pub fn normalized_variance(n_th: f64, t: f64, overlap: f64) -> Result<f64> {
    check_range("n_th", n_th, 0.0, f64::INFINITY)?;
    check_range("t", t, 0.0, 1.0)?;
    check_range("overlap", overlap, 0.0, 1.0)?;
    Ok(1.0 + 2.0 * n_th * t * overlap)
}

/// Single-shot SNR of quadrature-noise imaging for a thermal probe of mean
/// photon number `n_th` against an object of transmittance `t`:
///
/// ```text
/// SNR = 2(1−t)·n / sqrt(4 + 8n²(1+t²) + 8n(1+t))
/// ```
///
/// The signal is the variance difference between clear and obstructed
/// regions; the noise adds the variance-of-variance of both.
pub fn snr_qsi(n_th: f64, t: f64) -> Result<f64> {
    check_range("n_th", n_th, 0.0, f64::INFINITY)?;
    check_range("t", t, 0.0, 1.0)?;
    let denom = 4.0 + 8.0 * n_th * n_th * (1.0 + t * t) + 8.0 * n_th * (1.0 + t);
    Ok(2.0 * (1.0 - t) * n_th / denom.sqrt())
}

/// [`snr_qsi`] specialised to a completely opaque object (`t = 0`):
/// `SNR = 2n / sqrt(2 + 2(1+2n)²)`. Equal to `snr_qsi(n, 0)` identically;
/// saturates at `1/√2` for large `n`.
pub fn snr_qsi_opaque(n: f64) -> Result<f64> {
    check_range("n", n, 0.0, f64::INFINITY)?;
    let v = 1.0 + 2.0 * n;
    Ok(2.0 * n / (2.0 + 2.0 * v * v).sqrt())
}

/// Single-shot SNR of classical differential imaging with a coherent probe
/// of mean photon number `n_coh`, object transmittance `t` and per-pixel
/// dark-count deviation `dark_std`:
///
/// ```text
/// SNR = (1−t)·n / sqrt(n(1+t) + 2·dark_std²)
/// ```
///
/// With no photons and no dark noise both signal and noise vanish; that 0/0
/// is defined as 0.
pub fn snr_cdi(n_coh: f64, t: f64, dark_std: f64) -> Result<f64> {
    check_range("n_coh", n_coh, 0.0, f64::INFINITY)?;
    check_range("t", t, 0.0, 1.0)?;
    check_range("dark_std", dark_std, 0.0, f64::INFINITY)?;
    let denom2 = n_coh * (1.0 + t) + 2.0 * dark_std * dark_std;
    if denom2 == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - t) * n_coh / denom2.sqrt())
}

/// Recovers the intensity transmittance from measured variances,
/// `t = (v_probe − 1)/(v_ref − 1)`, using [`DEFAULT_EPSILON`] for the
/// degenerate-reference guard.
///
/// The result is deliberately *not* clamped to `[0, 1]`: noisy estimates may
/// fall outside, and region statistics need the unclamped distribution.
pub fn transmission_from_variance(v_probe: f64, v_ref: f64) -> Result<f64> {
    transmission_from_variance_eps(v_probe, v_ref, DEFAULT_EPSILON)
}

/// [`transmission_from_variance`] with an explicit degeneracy threshold.
pub fn transmission_from_variance_eps(v_probe: f64, v_ref: f64, epsilon: f64) -> Result<f64> {
    if v_ref <= 1.0 + epsilon {
        return Err(Error::DegenerateReference { v_ref, epsilon });
    }
    Ok((v_probe - 1.0) / (v_ref - 1.0))
}

/// Michelson-style contrast between the thermal excesses of bright and dark
/// regions:
///
/// ```text
/// C = [(v_bright − 1) − (v_dark − 1)] / [(v_bright − 1) + (v_dark − 1)]
/// ```
///
/// Errors when the summed excess is degenerate (both variances at the
/// shot-noise floor). Inputs below 1 are tolerated arithmetically — noisy
/// estimates dip below the floor — but then the result may leave `[-1, 1]`.
pub fn contrast(v_bright: f64, v_dark: f64) -> Result<f64> {
    contrast_eps(v_bright, v_dark, DEFAULT_EPSILON)
}

/// [`contrast`] with an explicit degeneracy threshold.
pub fn contrast_eps(v_bright: f64, v_dark: f64, epsilon: f64) -> Result<f64> {
    let eb = v_bright - 1.0;
    let ed = v_dark - 1.0;
    let denominator = eb + ed;
    if denominator.abs() < epsilon {
        return Err(Error::DegenerateContrast {
            denominator: denominator.abs(),
            epsilon,
        });
    }
    Ok((eb - ed) / denominator)
}

/// Predicted normalized variance after summing counts over a pixel region.
///
/// For a detection region `S`, an LO mode `U` and an object mask with
/// intensity transmittance `t(x)` (field amplitude `√t(x)`),
///
/// ```text
/// V_S = 1 + 2·n_th · (Σ_{x∈S} √t(x)·U(x)²)² / Σ_{x∈S} U(x)²
/// ```
///
/// assuming the probe is mode-matched to the LO. For a flat LO over `A`
/// pixels and a transparent mask this collapses to `1 + 2·n_th·|S|/A`, the
/// linear growth of variance with detection area.
pub fn binned_variance_prediction(
    n_th: f64,
    mask: &TransmissionMask,
    lo_mode: &ModeFunction,
    region: &[usize],
) -> Result<f64> {
    check_range("n_th", n_th, 0.0, f64::INFINITY)?;
    mask.grid().check_same(lo_mode.grid(), "binned variance prediction")?;
    if region.is_empty() {
        return Err(Error::domain(
            "region",
            0.0,
            "detection region must be non-empty",
        ));
    }
    let mut weighted = 0.0;
    let mut power = 0.0;
    for &i in region {
        let u2 = lo_mode.get(i).powi(2);
        weighted += mask.get(i).sqrt() * u2;
        power += u2;
    }
    if power == 0.0 {
        // no LO light collected: variance is the bare shot-noise floor
        return Ok(1.0);
    }
    Ok(1.0 + 2.0 * n_th * weighted * weighted / power)
}

/// Normalized variance of a beam of `n_total` photons split equally over `j`
/// thermal modes when only one of them is matched to the LO, in the
/// large-detection-area limit: `V = 1 + 2·n_total/j`. This is the saturation
/// level a variance-vs-area curve approaches for a multimode source.
pub fn multimode_variance(n_total: f64, j: u32) -> Result<f64> {
    check_range("n_total", n_total, 0.0, f64::INFINITY)?;
    if j < 1 {
        return Err(Error::domain("j", j as f64, "j >= 1 modes"));
    }
    Ok(1.0 + 2.0 * n_total / j as f64)
}

/// Variance of a single-shot variance estimate.
///
/// A zero-mean Gaussian with variance `σ²` has fourth moment `3σ⁴`, so the
/// squared sample `X²` (the one-shot variance estimate) has variance
/// `3σ⁴ − σ⁴ = 2σ⁴`. This is the noise term behind [`snr_qsi`]: summing it
/// for the clear (`σ² = 1+2n`) and blocked (`σ² = 1+2nt`) regions
/// reconstructs the SNR denominator `4 + 8n(1+t) + 8n²(1+t²)`.
pub fn variance_of_variance_single_shot(sigma2: f64) -> Result<f64> {
    check_range("sigma2", sigma2, 0.0, f64::INFINITY)?;
    Ok(2.0 * sigma2 * sigma2)
}

/// Mean photon number of an unseeded parametric (four-wave-mixing) thermal
/// beam with gain parameter `r`: `⟨n⟩ = sinh²(r)`.
pub fn fwm_mean_photons(r: f64) -> Result<f64> {
    check_range("r", r, 0.0, f64::INFINITY)?;
    Ok(r.sinh().powi(2))
}

/// Inverse of [`fwm_mean_photons`]: the gain parameter giving mean photon
/// number `n`, `r = asinh(√n)`.
pub fn fwm_squeeze_param(n: f64) -> Result<f64> {
    check_range("n", n, 0.0, f64::INFINITY)?;
    Ok(n.sqrt().asinh())
}
