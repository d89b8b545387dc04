//! Quadrature-noise shadow imaging toolkit.
//!
//! Images an object by the spatial changes it imprints on the *noise* of a
//! weak thermal probe rather than on its intensity. The probe crosses the
//! object, interferes with a strong local oscillator on a balanced splitter,
//! and a camera records both outputs; the normalized temporal variance of
//! their pixel-wise difference is `1` where the object blocks the probe and
//! `1 + 2⟨n⟩` where it passes, no matter how few photons the probe carries
//! or how noisy the camera is.
//!
//! The crate provides, in matching module pairs of theory and machinery:
//!
//! - [`statistics`] — every closed-form prediction (per-pixel and binned
//!   variance laws, SNR of the thermal scheme and of the classical
//!   differential benchmark, transmission and contrast estimators);
//! - [`simulator`] — a moment-exact Gaussian sampling model that generates
//!   synthetic homodyne frame clusters and classical intensity frames;
//! - [`pipeline`] — the reconstruction chain (disk-kernel binning, variance
//!   maps, transmission maps, region SNR, photon-number calibration);
//! - [`io`] — bit-exact persistence (the `QSIF` stack format, graymap/CSV
//!   masks, map and report files);
//! - [`grid`] / [`modes`] — pixel geometry and beam mode functions.
//!
//! The `qsi` command-line tool in this workspace wires the pieces into
//! batch simulate → reconstruct → report runs.
//!
//! A narrative guide with runnable examples lives in the `book/` directory
//! of the repository; its code blocks compile and run as doctests of this
//! crate.

pub mod error;
pub mod fit;
pub mod grid;
pub mod io;
pub mod modes;
pub mod pipeline;
pub mod simulator;
pub mod statistics;

pub use error::{Error, Result};

// The book's code samples double as doctests so the guide can never drift
// out of sync with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/thermal-statistics.md")]
    mod thermal_statistics {}
    #[doc = include_str!("../../../book/src/snr-theory.md")]
    mod snr_theory {}
    #[doc = include_str!("../../../book/src/simulating-frames.md")]
    mod simulating_frames {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
