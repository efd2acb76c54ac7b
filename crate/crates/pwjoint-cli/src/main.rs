//! `pwjoint` command line. Subcommands exchange data through container files
//! so each stage of simulate -> model -> das -> solve -> metrics -> export can
//! be run, inspected and rerun on its own.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pwjoint::config::Experiment;
use pwjoint::{Error, Mode};

#[derive(Parser, Debug)]
#[command(name = "pwjoint", version, about = "Joint beamforming and deconvolution for plane-wave ultrasound")]
pub struct Cli {
    /// Directory for cached system matrices; falls back to PWJOINT_CACHE_DIR.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate the configured phantom: phantom, channel data per transmit, PSF.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the configuration's `output_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// System-matrix operations.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Delay-and-sum image of one channel file.
    Das {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        channel: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coherent compounding: element-wise mean of RF images from several transmits.
    Compound {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Reconstruct an image from channel data and its DAS image.
    Solve(SolveArgs),
    /// Resolution or contrast indexes of an image.
    Metrics(MetricsArgs),
    /// 8-bit grayscale export of an RF or B-mode image (PGM when the output ends in .pgm).
    ExportPng {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dynamic range for RF input, dB.
        #[arg(long, default_value_t = 60.0)]
        dr: f64,
    },
    /// DAS and all four reconstruction modes on the configured phantom.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the configuration's `output_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print a ready-to-edit run configuration.
    Config {
        #[arg(long, value_enum)]
        example: ExampleConfig,
    },
    /// Convert one transmit of a PICMUS file to a channel container (needs the `picmus` feature).
    IngestPicmus {
        #[arg(long)]
        file: PathBuf,
        /// Index into the file's angle list; the angle closest to zero by default.
        #[arg(long)]
        angle_index: Option<usize>,
        /// Reject the file unless its sampling frequency matches, Hz.
        #[arg(long)]
        expected_fs: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum ModelCommand {
    /// Assemble Φ for every configured transmit into the cache directory.
    Build {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub channel: PathBuf,
    #[arg(long)]
    pub das: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Solver summary (histories, residuals) as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub gamma_d: Option<f64>,
    #[arg(long)]
    pub gamma_b: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// PSF container to use instead of the configured one.
    #[arg(long)]
    pub psf: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long, value_enum)]
    pub kind: MetricKind,
    /// RF or B-mode image container.
    #[arg(long)]
    pub image: PathBuf,
    /// Phantom whose annotations give the targets or cysts.
    #[arg(long)]
    pub phantom: Option<PathBuf>,
    /// Image whose speckle histogram the input is matched to before contrast metrics.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Explicit ROI rectangle `z0,z1,x0,x1` in mm, instead of the phantom's cyst.
    #[arg(long, value_parser = parse_rect, requires = "background")]
    pub roi: Option<Rect>,
    /// Explicit background rectangle `z0,z1,x0,x1` in mm.
    #[arg(long, value_parser = parse_rect, requires = "roi")]
    pub background: Option<Rect>,
    #[arg(long, default_value_t = 60.0)]
    pub dr: f64,
    #[arg(long, default_value_t = pwjoint::metrics::DEFAULT_BINS)]
    pub nbins: usize,
    /// Peak search half-window `axial,lateral` in pixels.
    #[arg(long, value_parser = parse_pair, default_value = "5,2")]
    pub search: (usize, usize),
    /// Row label in the printed table.
    #[arg(long, default_value = "image")]
    pub label: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub z: (f64, f64),
    pub x: (f64, f64),
}

fn parse_rect(s: &str) -> Result<Rect, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [z0, z1, x0, x1] if z0 <= z1 && x0 <= x1 => Ok(Rect {
            z: (z0 * 1e-3, z1 * 1e-3),
            x: (x0 * 1e-3, x1 * 1e-3),
        }),
        _ => Err("expected z0,z1,x0,x1 in mm with z0 <= z1 and x0 <= x1".into()),
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated integers")?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((p(a)?, p(b)?))
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Joint,
    Beamform,
    Deconv,
    Sequential,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Joint => Mode::Joint,
            ModeArg::Beamform => Mode::BeamformOnly,
            ModeArg::Deconv => Mode::DeconvOnly,
            ModeArg::Sequential => Mode::Sequential,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetArg {
    Sr,
    Er,
    Sc,
    Ec,
    Cc,
    Cl,
}

impl From<PresetArg> for Experiment {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Sr => Experiment::Sr,
            PresetArg::Er => Experiment::Er,
            PresetArg::Sc => Experiment::Sc,
            PresetArg::Ec => Experiment::Ec,
            PresetArg::Cc => Experiment::Cc,
            PresetArg::Cl => Experiment::Cl,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Points,
    Cyst,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleConfig {
    Points,
    Cyst,
}

/// Process exit codes. Usage errors exit with clap's code 2.
pub mod exit {
    pub const IO: u8 = 3;
    pub const FORMAT: u8 = 4;
    pub const INVALID: u8 = 5;
    pub const NUMERICAL: u8 = 6;
    pub const DATASET: u8 = 7;
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => exit::IO,
        Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::Structural { .. }
        | Error::KindMismatch { .. }
        | Error::Json(_) => exit::FORMAT,
        Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::PointOutsideGrid { .. }
        | Error::Inconsistent(_) => exit::INVALID,
        Error::Diverged { .. } | Error::NonFinite { .. } | Error::Unresolved { .. } | Error::MetricUndefined(_) => {
            exit::NUMERICAL
        }
        Error::DatasetNotFound { .. } | Error::Dataset { .. } => exit::DATASET,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().lines().map(str::trim).collect::<Vec<_>>().join("; ");
            eprintln!("pwjoint: error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
