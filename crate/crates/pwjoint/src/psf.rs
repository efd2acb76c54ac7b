//! Point spread function, circulant (BCCB) convolution and the spectral
//! u-update.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::image::RfImage;

/// Odd-sized 2-D kernel, axial along the first axis. Stored column-major like
/// images: tap `(i, j)` is at `i + kz*j`, and the kernel origin is the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psf {
    kz: usize,
    kx: usize,
    taps: Vec<f64>,
}

impl Psf {
    pub fn new(kz: usize, kx: usize, taps: Vec<f64>) -> Result<Self> {
        if kz.is_multiple_of(2) || kx.is_multiple_of(2) {
            return Err(invalid("psf", "kernel dimensions must be odd"));
        }
        check_len("Psf::new", kz * kx, taps.len())?;
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(invalid("psf", "kernel entries must be finite"));
        }
        if taps.iter().all(|&v| v == 0.0) {
            return Err(invalid("psf", "kernel is identically zero"));
        }
        Ok(Self { kz, kx, taps })
    }

    /// Centered unit impulse, i.e. H = I.
    pub fn identity() -> Self {
        Self {
            kz: 1,
            kx: 1,
            taps: vec![1.0],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.kz, self.kx)
    }

    pub fn half_dims(&self) -> (usize, usize) {
        (self.kz / 2, self.kx / 2)
    }

    #[inline]
    pub fn tap(&self, i: usize, j: usize) -> f64 {
        self.taps[i + self.kz * j]
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn center(&self) -> f64 {
        let (a, b) = self.half_dims();
        self.tap(a, b)
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.taps.iter_mut().for_each(|v| *v *= k);
        self
    }

    /// Central axial line, usable as a 1-D excitation pulse.
    pub fn axial_profile(&self) -> Vec<f64> {
        let b = self.kx / 2;
        (0..self.kz).map(|i| self.tap(i, b)).collect()
    }
}

/// Separable Gaussian-modulated cosine pulse (axial) times a Gaussian beam
/// profile (lateral), unit peak. The axial envelope reaches half amplitude at
/// `±fbw·f0/2` in frequency.
pub fn make_parametric_psf(f0: f64, fs: f64, axial_fbw: f64, lateral_sigma: f64) -> Result<Psf> {
    if !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(invalid("f0", "need 0 < f0 < fs/2"));
    }
    if !(axial_fbw > 0.0 && axial_fbw <= 2.0) {
        return Err(invalid("axial_fbw", "fractional bandwidth must be in (0, 2]"));
    }
    if !(lateral_sigma > 0.0) {
        return Err(invalid("lateral_sigma", "must be positive"));
    }
    let f_half = axial_fbw * f0 / 2.0;
    let sigma_t = (std::f64::consts::LN_2 / 2.0).sqrt() / (std::f64::consts::PI * f_half);
    let ha = (3.0 * sigma_t * fs).ceil() as usize;
    // narrower than a third of a column collapses to a single column
    let hb = if 3.0 * lateral_sigma < 1.0 {
        0
    } else {
        (3.0 * lateral_sigma).ceil() as usize
    };
    let (kz, kx) = (2 * ha + 1, 2 * hb + 1);
    let mut taps = vec![0.0; kz * kx];
    for j in 0..kx {
        let l = j as f64 - hb as f64;
        let lat = (-l * l / (2.0 * lateral_sigma * lateral_sigma)).exp();
        for i in 0..kz {
            let t = (i as f64 - ha as f64) / fs;
            let ax = (-t * t / (2.0 * sigma_t * sigma_t)).exp()
                * (2.0 * std::f64::consts::PI * f0 * t).cos();
            taps[i + kz * j] = ax * lat;
        }
    }
    let peak = taps[ha + kz * hb];
    taps.iter_mut().for_each(|v| *v /= peak);
    Psf::new(kz, kx, taps)
}

/// Column-major 2-D FFT on an `nz x nx` complex buffer.
#[derive(Clone)]
pub(crate) struct Fft2 {
    nz: usize,
    nx: usize,
    fz: Arc<dyn Fft<f64>>,
    fx: Arc<dyn Fft<f64>>,
    iz: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(nz: usize, nx: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            nz,
            nx,
            fz: p.plan_fft_forward(nz),
            fx: p.plan_fft_forward(nx),
            iz: p.plan_fft_inverse(nz),
            ix: p.plan_fft_inverse(nx),
        }
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (along_z, along_x) = if inverse {
            (&self.iz, &self.ix)
        } else {
            (&self.fz, &self.fx)
        };
        along_z.process(buf);
        let mut row = vec![Complex64::default(); self.nx];
        for i in 0..self.nz {
            for (j, r) in row.iter_mut().enumerate() {
                *r = buf[i + self.nz * j];
            }
            along_x.process(&mut row);
            for (j, r) in row.iter().enumerate() {
                buf[i + self.nz * j] = *r;
            }
        }
        if inverse {
            let s = 1.0 / (self.nz * self.nx) as f64;
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub(crate) fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.run(&mut buf, false);
        buf
    }

    pub(crate) fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.run(&mut buf, true);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// The BCCB operator H for one kernel and image size, with its transfer
/// function precomputed.
#[derive(Clone)]
pub struct Convolver {
    nz: usize,
    nx: usize,
    fft: Fft2,
    transfer: Vec<Complex64>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("nz", &self.nz)
            .field("nx", &self.nx)
            .finish_non_exhaustive()
    }
}

impl Convolver {
    pub fn new(psf: &Psf, nz: usize, nx: usize) -> Result<Self> {
        let (kz, kx) = psf.dims();
        if kz > nz || kx > nx {
            return Err(invalid(
                "psf",
                format!("kernel {kz}x{kx} larger than image {nz}x{nx}"),
            ));
        }
        let (a, b) = psf.half_dims();
        let mut wrapped = vec![0.0; nz * nx];
        for j in 0..kx {
            for i in 0..kz {
                let r = (i + nz - a) % nz;
                let c = (j + nx - b) % nx;
                wrapped[r + nz * c] += psf.tap(i, j);
            }
        }
        let fft = Fft2::new(nz, nx);
        let transfer = fft.forward_real(&wrapped);
        Ok(Self {
            nz,
            nx,
            fft,
            transfer,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nz, self.nx)
    }

    pub fn transfer(&self) -> &[Complex64] {
        &self.transfer
    }

    /// `Hx`, or `Hᵀx` (correlation) when `adjoint` is set.
    pub fn apply(&self, x: &[f64], adjoint: bool) -> Result<Vec<f64>> {
        check_len("conv_apply", self.nz * self.nx, x.len())?;
        let mut spec = self.fft.forward_real(x);
        for (s, h) in spec.iter_mut().zip(&self.transfer) {
            *s *= if adjoint { h.conj() } else { *h };
        }
        Ok(self.fft.inverse_real(spec))
    }

    /// Minimizer of `γ_D/2‖y − Hu‖² + β/2‖u − w + λ₁/β‖² + β/2‖u − z + λ₂/β‖²`.
    /// `hty` is the precomputed `Hᵀy`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn solve_u(
        &self,
        hty: &[f64],
        w: &[f64],
        z: &[f64],
        lam1: &[f64],
        lam2: &[f64],
        gamma_d: f64,
        beta: f64,
    ) -> Vec<f64> {
        let rhs: Vec<f64> = (0..w.len())
            .map(|k| gamma_d * hty[k] + beta * w[k] + beta * z[k] - lam1[k] - lam2[k])
            .collect();
        let mut spec = self.fft.forward_real(&rhs);
        for (s, h) in spec.iter_mut().zip(&self.transfer) {
            *s /= gamma_d * h.norm_sqr() + 2.0 * beta;
        }
        self.fft.inverse_real(spec)
    }
}

/// Circular 2-D convolution of `x` with the centered kernel (correlation when
/// `adjoint` is set).
pub fn conv_apply(psf: &Psf, x: &RfImage, adjoint: bool) -> Result<RfImage> {
    let h = Convolver::new(psf, x.nz(), x.nx())?;
    RfImage::from_vec(x.grid, h.apply(x.as_slice(), adjoint)?)
}

/// Closed-form u-update of the splitting, solved in the Fourier domain.
#[allow(clippy::too_many_arguments)]
pub fn deconv_update(
    y_das: &RfImage,
    psf: &Psf,
    w: &[f64],
    z: &[f64],
    lam1: &[f64],
    lam2: &[f64],
    gamma_d: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(invalid("beta", "must be positive"));
    }
    if !(gamma_d >= 0.0) {
        return Err(invalid("gamma_d", "must be non-negative"));
    }
    let n = y_das.len();
    for v in [w, z, lam1, lam2] {
        check_len("deconv_update", n, v.len())?;
    }
    if gamma_d == 0.0 {
        return Ok((0..n)
            .map(|k| (beta * w[k] + beta * z[k] - lam1[k] - lam2[k]) / (2.0 * beta))
            .collect());
    }
    let h = Convolver::new(psf, y_das.nz(), y_das.nx())?;
    let hty = h.apply(y_das.as_slice(), true)?;
    Ok(h.solve_u(&hty, w, z, lam1, lam2, gamma_d, beta))
}
