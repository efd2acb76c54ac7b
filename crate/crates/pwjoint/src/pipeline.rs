//! End-to-end orchestration shared by the CLI and the tests: geometry and
//! models from a [`RunConfig`], simulation, DAS, reconstruction, metrics.
//!
//! Amplitude conventions matter for the hyperparameters. The simulator drives
//! every element with the axial profile of the parametric PSF, the solver's PSF
//! is scaled to the DAS response of a unit point, and both observations are
//! divided by `‖y_DAS‖₂` before solving.

use std::path::Path;

use crate::acquisition::{
    make_cyst_phantom, make_point_phantom, simulate_with_pulse, ChannelData, ImagingGrid, Phantom,
    PlaneWaveTx, ProbeGeometry,
};
use crate::config::{PhantomSpec, PsfSpec, RunConfig, Stages};
use crate::das::{bmode, compound, das_beamform, envelope};
use crate::error::{invalid, Result};
use crate::forward::{build_or_load, propagation_delay, ApodizationSpec, SystemMatrix};
use crate::image::RfImage;
use crate::io::ContainerItem;
use crate::metrics::{contrast_metrics, point_metrics, MetricsReport, RegionSpec};
use crate::psf::{make_parametric_psf, Psf};
use crate::solver::{solve_problem, solve_sequential, Problem, SolveReport};

/// Samples needed to record the deepest echo of `grid` for every transmit.
pub fn required_samples(probe: &ProbeGeometry, grid: &ImagingGrid, angles: &[f64]) -> usize {
    let z = grid.z(grid.nz - 1);
    let mut tau_max: f64 = 0.0;
    for &a in angles {
        for ix in 0..grid.nx {
            for k in [0, probe.num_elements - 1] {
                let tau = propagation_delay(
                    (z, grid.x(ix)),
                    probe.element_x(k),
                    PlaneWaveTx { angle: a },
                    probe.sound_speed,
                );
                tau_max = tau_max.max(tau);
            }
        }
    }
    (((tau_max - probe.t0_offset) * probe.sampling_freq).ceil().max(0.0) as usize) + 4
}

/// Geometry, system matrices (one per transmit) and PSF for one run.
#[derive(Debug, Clone)]
pub struct Scene {
    pub probe: ProbeGeometry,
    pub grid: ImagingGrid,
    pub apod: ApodizationSpec,
    pub angles: Vec<f64>,
    pub models: Vec<SystemMatrix>,
    /// Excitation used by the simulator.
    pub pulse: Vec<f64>,
    /// PSF handed to the solver.
    pub psf: Psf,
    /// Index of the transmit closest to normal incidence; the solver uses it.
    pub primary: usize,
}

impl Scene {
    pub fn new(cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let probe = cfg.probe;
        let grid = ImagingGrid::new(&probe, cfg.grid.nz, cfg.grid.nx, cfg.grid.z_origin)?;
        let m = cfg
            .num_samples
            .unwrap_or_else(|| required_samples(&probe, &grid, &cfg.angles));
        let models = cfg
            .angles
            .iter()
            .map(|&a| build_or_load(&probe, &grid, PlaneWaveTx::new(a)?, m, &cfg.apodization, cache_dir))
            .collect::<Result<Vec<_>>>()?;
        let primary = cfg
            .angles
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);

        let (shape, calibrate) = match &cfg.psf {
            PsfSpec::Parametric {
                axial_fbw,
                lateral_sigma,
                calibrate_gain,
            } => (
                make_parametric_psf(probe.center_freq, probe.sampling_freq, *axial_fbw, *lateral_sigma)?,
                *calibrate_gain,
            ),
            PsfSpec::File { path } => (Psf::read(path)?, false),
        };
        let c = shape.center();
        let pulse: Vec<f64> = shape.axial_profile().iter().map(|v| v / c).collect();
        let mut scene = Self {
            probe,
            grid,
            apod: cfg.apodization,
            angles: cfg.angles.clone(),
            models,
            pulse,
            psf: shape.clone(),
            primary,
        };
        if calibrate {
            scene.psf = shape.scaled(scene.point_gain()?);
        }
        Ok(scene)
    }

    pub fn model(&self) -> &SystemMatrix {
        &self.models[self.primary]
    }

    /// Peak |DAS| response to a unit scatterer at the grid center.
    pub fn point_gain(&self) -> Result<f64> {
        let (iz, ix) = (self.grid.nz / 2, self.grid.nx / 2);
        let ph = make_point_phantom(&self.grid, &[(self.grid.z(iz), self.grid.x(ix))], 1.0)?;
        let ch = simulate_with_pulse(&ph, self.model(), Some(&self.pulse), None, 0)?;
        let g = das_beamform(&ch, &self.grid, &self.apod)?.max_abs();
        if !(g > 0.0) {
            return Err(invalid("psf", "unit point gives no DAS response; cannot calibrate"));
        }
        Ok(g)
    }

    pub fn phantom(&self, spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
        match spec {
            PhantomSpec::Points { points, amplitude } => {
                make_point_phantom(&self.grid, points, *amplitude)
            }
            PhantomSpec::Cyst { center, radius } => {
                make_cyst_phantom(&self.grid, *center, *radius, seed)
            }
        }
    }

    /// Channel data for every transmit. Transmit `k` draws noise from `seed + k`.
    pub fn simulate(&self, phantom: &Phantom, snr_db: Option<f64>, seed: u64) -> Result<Vec<ChannelData>> {
        self.models
            .iter()
            .enumerate()
            .map(|(k, m)| simulate_with_pulse(phantom, m, Some(&self.pulse), snr_db, seed.wrapping_add(k as u64)))
            .collect()
    }

    pub fn observe(&self, phantom: Phantom, snr_db: Option<f64>, seed: u64) -> Result<Observation> {
        let channels = self.simulate(&phantom, snr_db, seed)?;
        let das = channels
            .iter()
            .map(|ch| das_beamform(ch, &self.grid, &self.apod))
            .collect::<Result<Vec<_>>>()?;
        let cpwc = compound(&das)?;
        Ok(Observation {
            phantom,
            primary: self.primary,
            channels,
            das,
            cpwc,
        })
    }

    /// Runs one configured reconstruction on the primary transmit, optionally
    /// from a nonzero initial image (in normalized units).
    pub fn reconstruct(&self, ch: &ChannelData, y_das: &RfImage, stages: &Stages, init: Option<&[f64]>) -> Result<SolveReport> {
        let scale = norm(y_das.as_slice());
        let k = if scale > 0.0 { 1.0 / scale } else { 1.0 };
        let y_ch: Vec<f64> = ch.samples.iter().map(|v| v * k).collect();
        let y_img = y_das.clone().scaled(k);
        let problem = Problem::new(self.grid)
            .with_channel(self.model(), &y_ch)?
            .with_image(&self.psf, &y_img)?;
        match stages {
            Stages::Single(cfg) => solve_problem(cfg, &problem, init),
            Stages::Sequential(a, b) => solve_sequential(a, b, &problem),
        }
    }

    /// Resolution metrics for point phantoms, contrast metrics (matched to the
    /// DAS image) for cysts.
    pub fn evaluate(&self, obs: &Observation, image: &RfImage, cfg: &RunConfig) -> Result<MetricsReport> {
        let mut rep = MetricsReport::default();
        let points = obs.phantom.points();
        if !points.is_empty() {
            rep = point_metrics(&envelope(image)?, &points, cfg.metrics.search)?;
        }
        let cysts = obs.phantom.cysts();
        if !cysts.is_empty() {
            let dr = cfg.metrics.dynamic_range;
            let reference = bmode(obs.das(), dr)?;
            let regions = cysts
                .iter()
                .map(|&(z, x, r)| RegionSpec::cyst(&self.grid, (z, x), r))
                .collect::<Result<Vec<_>>>()?;
            let c = contrast_metrics(&bmode(image, dr)?, &reference, &regions, cfg.metrics.nbins)?;
            rep.cnr = c.cnr;
            rep.gcnr = c.gcnr;
        }
        Ok(rep)
    }
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub phantom: Phantom,
    pub primary: usize,
    pub channels: Vec<ChannelData>,
    pub das: Vec<RfImage>,
    pub cpwc: RfImage,
}

impl Observation {
    /// DAS image of the primary transmit.
    pub fn das(&self) -> &RfImage {
        &self.das[self.primary]
    }

    pub fn channel(&self) -> &ChannelData {
        &self.channels[self.primary]
    }
}

/// One row of a method comparison.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub name: String,
    pub image: RfImage,
    pub report: Option<SolveReport>,
    pub metrics: MetricsReport,
}

/// DAS plus the four reconstruction modes on one configured phantom, using
/// the configured preset for every mode.
pub fn compare_modes(cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<(Scene, Observation, Vec<MethodResult>)> {
    use crate::solver::Mode;
    let scene = Scene::new(cfg, cache_dir)?;
    let spec = cfg
        .phantom
        .as_ref()
        .ok_or_else(|| invalid("phantom", "configuration has no phantom"))?;
    let obs = scene.observe(scene.phantom(spec, cfg.seed)?, cfg.snr_db, cfg.seed)?;
    let mut rows = vec![MethodResult {
        name: "das".into(),
        image: obs.das().clone(),
        report: None,
        metrics: scene.evaluate(&obs, obs.das(), cfg)?,
    }];
    for (name, mode) in [
        ("beamform", Mode::BeamformOnly),
        ("deconv", Mode::DeconvOnly),
        ("sequential", Mode::Sequential),
        ("joint", Mode::Joint),
    ] {
        let spec = crate::config::SolverSpec { mode, ..cfg.solver };
        let rep = scene.reconstruct(obs.channel(), obs.das(), &spec.resolve()?, None)?;
        let metrics = scene.evaluate(&obs, &rep.result, cfg)?;
        rows.push(MethodResult {
            name: name.into(),
            image: rep.result.clone(),
            report: Some(rep),
            metrics,
        });
    }
    Ok((scene, obs, rows))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
