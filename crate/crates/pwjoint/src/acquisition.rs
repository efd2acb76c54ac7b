//! Probe and grid geometry, synthetic phantoms and channel-data simulation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::forward::SystemMatrix;
use crate::image::RfImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeGeometry {
    pub num_elements: usize,
    /// meters
    pub pitch: f64,
    /// m/s
    pub sound_speed: f64,
    /// Hz
    pub sampling_freq: f64,
    /// Hz
    pub center_freq: f64,
    /// Time of sample 0 relative to transmit, seconds.
    pub t0_offset: f64,
}

impl Default for ProbeGeometry {
    /// 128-element linear array, L11-like.
    fn default() -> Self {
        Self {
            num_elements: 128,
            pitch: 0.3e-3,
            sound_speed: 1540.0,
            sampling_freq: 20.832e6,
            center_freq: 5.208e6,
            t0_offset: 0.0,
        }
    }
}

impl ProbeGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(invalid("num_elements", "need at least 2 elements"));
        }
        if !(self.pitch > 0.0) {
            return Err(invalid("pitch", "must be positive"));
        }
        if !(self.sound_speed > 0.0) {
            return Err(invalid("sound_speed", "must be positive"));
        }
        if !(self.center_freq > 0.0) || !(self.sampling_freq > 2.0 * self.center_freq) {
            return Err(invalid(
                "sampling_freq",
                "must exceed twice the center frequency",
            ));
        }
        if !self.t0_offset.is_finite() {
            return Err(invalid("t0_offset", "must be finite"));
        }
        Ok(())
    }

    pub fn element_x(&self, k: usize) -> f64 {
        (k as f64 - (self.num_elements as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn element_positions(&self) -> Vec<f64> {
        (0..self.num_elements).map(|k| self.element_x(k)).collect()
    }

    /// Time of sample `m`.
    #[inline]
    pub fn sample_time(&self, m: usize) -> f64 {
        m as f64 / self.sampling_freq + self.t0_offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlaneWaveTx {
    /// Steering angle in radians, 0 is normal incidence.
    pub angle: f64,
}

impl PlaneWaveTx {
    pub fn new(angle: f64) -> Result<Self> {
        if !(angle.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(invalid("angle", "steering angle must satisfy |angle| < pi/2"));
        }
        Ok(Self { angle })
    }
}

/// Rectangular pixel grid. `dz = c / (2 fs)` and `dx = pitch`; lateral
/// positions are centered on the array axis like the elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagingGrid {
    pub nz: usize,
    pub nx: usize,
    pub dz: f64,
    pub dx: f64,
    pub z_origin: f64,
    pub x_origin: f64,
}

impl ImagingGrid {
    pub fn new(probe: &ProbeGeometry, nz: usize, nx: usize, z_origin: f64) -> Result<Self> {
        probe.validate()?;
        if nz == 0 || nx == 0 {
            return Err(invalid("grid", "nz and nx must be positive"));
        }
        if !(z_origin >= 0.0) {
            return Err(invalid("z_origin", "must be non-negative"));
        }
        Ok(Self {
            nz,
            nx,
            dz: probe.sound_speed / (2.0 * probe.sampling_freq),
            dx: probe.pitch,
            z_origin,
            x_origin: -(nx as f64 - 1.0) / 2.0 * probe.pitch,
        })
    }

    pub fn len(&self) -> usize {
        self.nz * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn z(&self, iz: usize) -> f64 {
        self.z_origin + iz as f64 * self.dz
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        self.x_origin + ix as f64 * self.dx
    }

    #[inline]
    pub fn index(&self, iz: usize, ix: usize) -> usize {
        iz + self.nz * ix
    }

    /// Nearest node to `(z, x)`; `None` when the point is more than half a
    /// pixel beyond the outermost nodes.
    pub fn nearest(&self, z: f64, x: f64) -> Option<(usize, usize)> {
        let fz = (z - self.z_origin) / self.dz;
        let fx = (x - self.x_origin) / self.dx;
        let inside = |f: f64, n: usize| f >= -0.5 && f <= n as f64 - 0.5;
        if !inside(fz, self.nz) || !inside(fx, self.nx) {
            return None;
        }
        let iz = (fz.round().max(0.0) as usize).min(self.nz - 1);
        let ix = (fx.round().max(0.0) as usize).min(self.nx - 1);
        Some((iz, ix))
    }
}

/// Raw RF channel data, an `M x N` matrix stored column by column: the trace
/// of element `n` is `samples[n*M .. (n+1)*M]`, matching the row order of Φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelData {
    pub probe: ProbeGeometry,
    pub tx: PlaneWaveTx,
    pub num_samples: usize,
    pub samples: Vec<f64>,
}

impl ChannelData {
    pub fn new(
        probe: ProbeGeometry,
        tx: PlaneWaveTx,
        num_samples: usize,
        samples: Vec<f64>,
    ) -> Result<Self> {
        probe.validate()?;
        if num_samples == 0 {
            return Err(invalid("num_samples", "need at least one sample"));
        }
        check_len(
            "ChannelData::new",
            num_samples * probe.num_elements,
            samples.len(),
        )?;
        Ok(Self {
            probe,
            tx,
            num_samples,
            samples,
        })
    }

    pub fn trace(&self, element: usize) -> &[f64] {
        let m = self.num_samples;
        &self.samples[element * m..(element + 1) * m]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Annotation {
    Point { iz: usize, ix: usize },
    Cyst { z: f64, x: f64, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub trf: RfImage,
    pub annotations: Vec<Annotation>,
}

impl Phantom {
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.annotations
            .iter()
            .filter_map(|a| match *a {
                Annotation::Point { iz, ix } => Some((iz, ix)),
                _ => None,
            })
            .collect()
    }

    pub fn cysts(&self) -> Vec<(f64, f64, f64)> {
        self.annotations
            .iter()
            .filter_map(|a| match *a {
                Annotation::Cyst { z, x, radius } => Some((z, x, radius)),
                _ => None,
            })
            .collect()
    }
}

/// Impulses of height `amplitude` at the nodes nearest to `points` (meters,
/// `(z, x)`). Coincident points accumulate.
pub fn make_point_phantom(
    grid: &ImagingGrid,
    points: &[(f64, f64)],
    amplitude: f64,
) -> Result<Phantom> {
    let mut trf = RfImage::zeros(*grid);
    let mut annotations = Vec::with_capacity(points.len());
    for &(z, x) in points {
        let (iz, ix) = grid.nearest(z, x).ok_or(Error::PointOutsideGrid { z, x })?;
        trf.set(iz, ix, trf.get(iz, ix) + amplitude);
        annotations.push(Annotation::Point { iz, ix });
    }
    Ok(Phantom { trf, annotations })
}

/// Standard-normal speckle with an anechoic disc. Speckle is drawn for every
/// pixel before the disc is cleared, so the background for a given seed does
/// not depend on the radius.
pub fn make_cyst_phantom(
    grid: &ImagingGrid,
    center: (f64, f64),
    radius: f64,
    seed: u64,
) -> Result<Phantom> {
    if !(radius > 0.0) {
        return Err(invalid("radius", "cyst radius must be positive"));
    }
    let (cz, cx) = center;
    grid.nearest(cz, cx)
        .ok_or(Error::PointOutsideGrid { z: cz, x: cx })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = (0..grid.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    for ix in 0..grid.nx {
        for iz in 0..grid.nz {
            if (grid.z(iz) - cz).hypot(grid.x(ix) - cx) <= radius {
                data[grid.index(iz, ix)] = 0.0;
            }
        }
    }
    Ok(Phantom {
        trf: RfImage::from_vec(*grid, data)?,
        annotations: vec![Annotation::Cyst {
            z: cz,
            x: cx,
            radius,
        }],
    })
}

/// `y = Φ·trf + noise`, with the noise scaled to the requested channel SNR.
pub fn simulate_channel_data(
    phantom: &Phantom,
    model: &SystemMatrix,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<ChannelData> {
    simulate_with_pulse(phantom, model, None, snr_db, seed)
}

/// Like [`simulate_channel_data`], but each element trace of `Φ·trf` is first
/// convolved with a centered excitation `pulse` (odd length, applied in
/// sample space) before noise is added.
pub fn simulate_with_pulse(
    phantom: &Phantom,
    model: &SystemMatrix,
    pulse: Option<&[f64]>,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<ChannelData> {
    let meta = model.meta();
    if meta.grid.nz != phantom.trf.nz() || meta.grid.nx != phantom.trf.nx() {
        return Err(Error::DimensionMismatch {
            context: "simulate_channel_data (grid)",
            expected: meta.grid.len(),
            actual: phantom.trf.len(),
        });
    }
    let mut y = model.apply_forward(phantom.trf.as_slice())?;
    let m = meta.num_samples;

    if let Some(p) = pulse {
        if p.len() % 2 == 0 {
            return Err(invalid("pulse", "excitation must have odd length"));
        }
        let h = p.len() / 2;
        y = y
            .chunks(m)
            .flat_map(|trace| {
                (0..m).map(move |i| {
                    let mut acc = 0.0;
                    for (k, pk) in p.iter().enumerate() {
                        // output i takes input i + h - k
                        let j = i as isize + h as isize - k as isize;
                        if j >= 0 && (j as usize) < m {
                            acc += pk * trace[j as usize];
                        }
                    }
                    acc
                })
            })
            .collect();
    }

    if let Some(snr) = snr_db {
        if !snr.is_finite() {
            return Err(invalid("snr_db", "must be finite"));
        }
        let power = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * n;
        }
    }
    ChannelData::new(meta.probe, meta.tx, m, y)
}
