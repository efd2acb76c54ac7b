//! Hyperparameter presets and the JSON run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::ProbeGeometry;
use crate::error::{invalid, Error, Result};
use crate::forward::ApodizationSpec;
use crate::solver::{InnerSettings, Mode, SolverConfig};

/// Experiment classes with tuned hyperparameters: simulated resolution and
/// contrast, experimental resolution and contrast, carotid cross-section and
/// longitudinal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Sr,
    Er,
    Sc,
    Ec,
    Cc,
    Cl,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Sr,
        Experiment::Er,
        Experiment::Sc,
        Experiment::Ec,
        Experiment::Cc,
        Experiment::Cl,
    ];

    pub fn preset(self) -> Preset {
        use Experiment::*;
        // (μ, β) beamform-only, (μ, β) deconv-only, (γ_D, γ_B, β, μ) joint
        let (bf, dc, jt) = match self {
            Sr => ((5.0, 1e3), (3.0, 1e3), (1.0, 0.1, 500.0, 5.0)),
            Er => ((0.05, 1e4), (0.05, 1e3), (2.0, 1.0, 1e3, 0.1)),
            Sc => ((0.5, 1e3), (0.1, 1e3), (1.0, 0.1, 1e3, 0.1)),
            Ec => ((0.05, 1e4), (0.1, 1e3), (1.0, 0.1, 1e3, 0.1)),
            Cc => ((0.5, 1e4), (0.01, 1e3), (0.5, 3.0, 5e3, 1.0)),
            Cl => ((0.5, 1e4), (0.01, 1e3), (0.5, 3.0, 5e3, 1.0)),
        };
        Preset {
            beamform: StageParams { mu: bf.0, beta: bf.1 },
            deconv: StageParams { mu: dc.0, beta: dc.1 },
            joint: JointParams {
                gamma_d: jt.0,
                gamma_b: jt.1,
                beta: jt.2,
                mu: jt.3,
            },
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "sr" => Experiment::Sr,
            "er" => Experiment::Er,
            "sc" => Experiment::Sc,
            "ec" => Experiment::Ec,
            "cc" => Experiment::Cc,
            "cl" => Experiment::Cl,
            _ => return Err(invalid("preset", format!("unknown preset `{s}`"))),
        })
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{self:?}").to_ascii_lowercase();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub mu: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub gamma_d: f64,
    pub gamma_b: f64,
    pub beta: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub beamform: StageParams,
    pub deconv: StageParams,
    pub joint: JointParams,
}

impl Preset {
    /// Solver settings for a single-stage mode.
    pub fn config(&self, mode: Mode) -> Result<SolverConfig> {
        Ok(match mode {
            Mode::Joint => {
                let j = self.joint;
                SolverConfig::joint(j.gamma_d, j.gamma_b, j.mu, j.beta)
            }
            Mode::BeamformOnly => SolverConfig::beamform_only(self.beamform.mu, self.beamform.beta),
            Mode::DeconvOnly => SolverConfig::deconv_only(self.deconv.mu, self.deconv.beta),
            Mode::Sequential => {
                return Err(invalid("mode", "sequential mode has two stages, use `sequential()`"))
            }
        })
    }

    /// Beamform-only and deconv-only stage settings.
    pub fn sequential(&self) -> (SolverConfig, SolverConfig) {
        (
            SolverConfig::beamform_only(self.beamform.mu, self.beamform.beta),
            SolverConfig::deconv_only(self.deconv.mu, self.deconv.beta),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nz: usize,
    pub nx: usize,
    /// Depth of the first row, meters.
    pub z_origin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PsfSpec {
    /// Parametric kernel; with `calibrate_gain` its amplitude is set to the
    /// DAS response of a unit point scatterer.
    Parametric {
        axial_fbw: f64,
        lateral_sigma: f64,
        #[serde(default = "yes")]
        calibrate_gain: bool,
    },
    File { path: PathBuf },
}

fn yes() -> bool {
    true
}

impl Default for PsfSpec {
    fn default() -> Self {
        PsfSpec::Parametric {
            axial_fbw: 0.67,
            lateral_sigma: 0.6,
            calibrate_gain: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub mode: Mode,
    #[serde(default)]
    pub preset: Option<Experiment>,
    #[serde(default)]
    pub gamma_d: Option<f64>,
    #[serde(default)]
    pub gamma_b: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub inner: InnerSettings,
}

fn default_epsilon() -> f64 {
    1e-3
}
fn default_max_iter() -> usize {
    100
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            mode: Mode::Joint,
            preset: Some(Experiment::Sc),
            gamma_d: None,
            gamma_b: None,
            mu: None,
            beta: None,
            epsilon: default_epsilon(),
            max_iter: default_max_iter(),
            inner: InnerSettings::default(),
        }
    }
}

/// The two stage configurations for sequential mode, or one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stages {
    Single(SolverConfig),
    Sequential(SolverConfig, SolverConfig),
}

impl SolverSpec {
    /// Preset values with any explicit overrides applied.
    pub fn resolve(&self) -> Result<Stages> {
        let preset = self.preset.unwrap_or(Experiment::Sc).preset();
        let finish = |mut c: SolverConfig| -> Result<SolverConfig> {
            if let Some(v) = self.mu {
                c.mu = v;
            }
            if let Some(v) = self.beta {
                c.beta = v;
            }
            if c.mode == Mode::Joint {
                if let Some(v) = self.gamma_d {
                    c.gamma_d = v;
                }
                if let Some(v) = self.gamma_b {
                    c.gamma_b = v;
                }
            }
            c.epsilon = self.epsilon;
            c.max_iter = self.max_iter;
            c.inner = self.inner;
            c.validate()?;
            Ok(c)
        };
        Ok(match self.mode {
            Mode::Sequential => {
                let (a, b) = preset.sequential();
                Stages::Sequential(finish(a)?, finish(b)?)
            }
            m => Stages::Single(finish(preset.config(m)?)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSpec {
    /// Point targets at `(z, x)` in meters.
    Points {
        points: Vec<(f64, f64)>,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Cyst {
        center: (f64, f64),
        radius: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    pub dynamic_range: f64,
    pub nbins: usize,
    /// Peak search half-window around point targets, pixels (axial, lateral).
    pub search: (usize, usize),
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            dynamic_range: 60.0,
            nbins: 256,
            search: (5, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub probe: ProbeGeometry,
    pub grid: GridSpec,
    /// Samples per element; derived from the grid's deepest delay when absent.
    #[serde(default)]
    pub num_samples: Option<usize>,
    #[serde(default = "zero_angle")]
    pub angles: Vec<f64>,
    #[serde(default)]
    pub apodization: ApodizationSpec,
    #[serde(default)]
    pub psf: PsfSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn zero_angle() -> Vec<f64> {
    vec![0.0]
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        self.apodization.validate()?;
        if self.grid.nz == 0 || self.grid.nx == 0 {
            return Err(invalid("grid", "nz and nx must be positive"));
        }
        if self.angles.is_empty() {
            return Err(invalid("angles", "need at least one transmit"));
        }
        if let PsfSpec::File { path } = &self.psf {
            if !path.exists() {
                return Err(Error::Inconsistent(format!(
                    "PSF file {} does not exist",
                    path.display()
                )));
            }
        }
        if !(self.metrics.dynamic_range > 0.0) || self.metrics.nbins < 2 {
            return Err(invalid("metrics", "need dynamic_range > 0 and nbins >= 2"));
        }
        self.solver.resolve()?;
        Ok(())
    }

    /// 192 x 128 grid starting 5 mm deep under the default 128-element probe,
    /// three point targets, noiseless, resolution preset.
    pub fn desk_points() -> Self {
        let grid = desk_grid();
        let (probe, g) = (desk_probe(), grid);
        let dz = probe.sound_speed / (2.0 * probe.sampling_freq);
        let node = |iz: usize, ix: usize| {
            (
                g.z_origin + iz as f64 * dz,
                (ix as f64 - (g.nx as f64 - 1.0) / 2.0) * probe.pitch,
            )
        };
        Self {
            phantom: Some(PhantomSpec::Points {
                points: vec![node(40, 32), node(96, 64), node(150, 96)],
                amplitude: 1.0,
            }),
            solver: SolverSpec {
                preset: Some(Experiment::Sr),
                ..SolverSpec::default()
            },
            ..Self::desk_base()
        }
    }

    /// Same geometry with a 2 mm anechoic cyst in speckle, 10 dB channel SNR,
    /// contrast preset.
    pub fn desk_cyst() -> Self {
        let probe = desk_probe();
        let g = desk_grid();
        let dz = probe.sound_speed / (2.0 * probe.sampling_freq);
        Self {
            phantom: Some(PhantomSpec::Cyst {
                center: (g.z_origin + 96.0 * dz, 0.0),
                radius: 2e-3,
            }),
            snr_db: Some(10.0),
            seed: 1,
            solver: SolverSpec {
                preset: Some(Experiment::Sc),
                ..SolverSpec::default()
            },
            ..Self::desk_base()
        }
    }

    fn desk_base() -> Self {
        Self {
            probe: desk_probe(),
            grid: desk_grid(),
            num_samples: None,
            angles: zero_angle(),
            apodization: ApodizationSpec::default(),
            psf: PsfSpec::default(),
            solver: SolverSpec::default(),
            phantom: None,
            snr_db: None,
            seed: 0,
            metrics: MetricsSpec::default(),
            output_dir: None,
        }
    }
}

fn desk_grid() -> GridSpec {
    GridSpec {
        nz: 192,
        nx: 128,
        z_origin: 5e-3,
    }
}

/// Default probe with recording starting at the round trip to 0.5 mm above
/// the grid.
fn desk_probe() -> ProbeGeometry {
    let p = ProbeGeometry::default();
    ProbeGeometry {
        t0_offset: 2.0 * (desk_grid().z_origin - 0.5e-3) / p.sound_speed,
        ..p
    }
}
