//! `qsi` — batch simulate/reconstruct/report front-end for quadrature-noise
//! shadow imaging.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 file-format
//! error, 4 numerical degeneracy.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qsi::error::Error;
use qsi_cli::commands::{calibrate, compare_cdi, reconstruct, simulate, snr_curve};

#[derive(Parser)]
#[command(
    name = "qsi",
    version,
    about = "Simulate and reconstruct quadrature-noise shadow images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Gain,
    Area,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate homodyne frame clusters and write them as a .qsif stack
    Simulate {
        /// Run configuration file (key = value lines)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's cluster count
        #[arg(long)]
        clusters: Option<u64>,
        /// Output stack path (or out_stack in the config)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write an unobstructed reference stack here
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Build variance and transmission maps from recorded stacks
    Reconstruct {
        /// Probe stack (.qsif)
        #[arg(long = "in")]
        input: PathBuf,
        /// Reference (unobstructed) stack; must share the probe's scene digest
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Run configuration, needed for the analytic flat-LO reference
        #[arg(long)]
        config: Option<PathBuf>,
        /// Binning radius in pixels
        #[arg(long, default_value_t = 0)]
        bin_radius: u32,
        /// Variance map output (.csv or .pgm)
        #[arg(long)]
        out_var: Option<PathBuf>,
        /// Transmission map output (.csv or .pgm)
        #[arg(long)]
        out_trans: Option<PathBuf>,
        /// Bright-region descriptor, e.g. disk:80,64,20
        #[arg(long)]
        roi_bright: Option<String>,
        /// Dark-region descriptor
        #[arg(long)]
        roi_dark: Option<String>,
    },
    /// Sweep the opaque-object SNR against photon number and compare with
    /// the closed form
    SnrCurve {
        /// Photon-number grid: `a,b,c` or `log:min:max:count`
        #[arg(long)]
        n_grid: String,
        #[arg(long, default_value_t = 600)]
        clusters: u64,
        #[arg(long, default_value_t = 6)]
        bin_radius: u32,
        /// Sweep the beam gain, the detection area, or both
        #[arg(long, value_enum, default_value_t = StrategyArg::Gain)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Simulation grid edge length in pixels
        #[arg(long, default_value_t = 128)]
        grid_size: u32,
        /// Report CSV path (columns n_mean,snr_sim,snr_theory,rel_err)
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate thermal-scheme vs classical differential-imaging SNR
    CompareCdi {
        /// Dark-count standard deviation for the Monte Carlo column
        #[arg(long, default_value_t = 10.0)]
        dark_std: f64,
        /// Photon-number grid: `a,b,c` or `log:min:max:count`
        #[arg(long)]
        n_grid: String,
        /// Frames per Monte Carlo point
        #[arg(long, default_value_t = 200)]
        mc_frames: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the variance-vs-area calibration line of a recorded stack
    Calibrate {
        /// Stack to calibrate (.qsif)
        #[arg(long = "in")]
        input: PathBuf,
        /// Largest radius of the linear fit (2..=10)
        #[arg(long, default_value_t = 10)]
        max_radius: u32,
        /// Radii for the saturation scan, e.g. 12,16,20,25,30
        #[arg(long, value_delimiter = ',')]
        saturation_radii: Option<Vec<u32>>,
        /// Beam centre `cx,cy` (defaults to the grid centre)
        #[arg(long)]
        center: Option<String>,
        /// Calibration CSV path
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Validation(_)
        | Error::Scene(_)
        | Error::Domain { .. }
        | Error::Geometry(_) => 2,
        Error::Format { .. } | Error::Io(_) => 3,
        Error::Statistics(_)
        | Error::Fit(_)
        | Error::DegenerateReference { .. }
        | Error::DegenerateContrast { .. } => 4,
    }
}

fn parse_center(spec: &str) -> qsi::Result<(f64, f64)> {
    let mut parts = spec.split(',').map(str::trim);
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::Config(format!("center `{spec}`: expected `cx,cy`")));
    };
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Config(format!("center `{spec}`: bad number `{s}`")))
    };
    Ok((parse(a)?, parse(b)?))
}

fn run(cli: Cli) -> qsi::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            clusters,
            out,
            reference,
        } => simulate::run(&simulate::Args {
            config,
            seed,
            clusters,
            out,
            reference_out: reference,
        }),
        Command::Reconstruct {
            input,
            reference,
            config,
            bin_radius,
            out_var,
            out_trans,
            roi_bright,
            roi_dark,
        } => reconstruct::run(&reconstruct::Args {
            input,
            reference,
            config,
            bin_radius,
            out_var,
            out_trans,
            roi_bright,
            roi_dark,
        }),
        Command::SnrCurve {
            n_grid,
            clusters,
            bin_radius,
            strategy,
            seed,
            grid_size,
            out,
        } => snr_curve::run(&snr_curve::Args {
            n_grid,
            clusters,
            bin_radius,
            strategy: match strategy {
                StrategyArg::Gain => snr_curve::Strategy::Gain,
                StrategyArg::Area => snr_curve::Strategy::Area,
                StrategyArg::Both => snr_curve::Strategy::Both,
            },
            seed,
            grid_size,
            out,
        }),
        Command::CompareCdi {
            dark_std,
            n_grid,
            mc_frames,
            seed,
            out,
        } => compare_cdi::run(&compare_cdi::Args {
            dark_std,
            n_grid,
            mc_frames,
            seed,
            out,
        }),
        Command::Calibrate {
            input,
            max_radius,
            saturation_radii,
            center,
            out,
        } => {
            let center = center.as_deref().map(parse_center).transpose()?;
            calibrate::run(&calibrate::Args {
                input,
                max_radius,
                saturation_radii,
                center,
                out,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
