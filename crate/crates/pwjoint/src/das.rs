//! Delay-and-sum beamforming, coherent compounding and B-mode conversion.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::acquisition::{ChannelData, ImagingGrid};
use crate::error::{invalid, Result};
use crate::forward::{apodization_weight, propagation_delay, ApodizationSpec};
use crate::image::{BModeImage, RfImage};

/// Apodized sum over elements of each trace, linearly interpolated at the
/// pixel's round-trip delay. Delays outside the recorded window add nothing.
pub fn das_beamform(
    ch: &ChannelData,
    grid: &ImagingGrid,
    apod: &ApodizationSpec,
) -> Result<RfImage> {
    apod.validate()?;
    let probe = &ch.probe;
    let m_len = ch.num_samples;
    let fs = probe.sampling_freq;
    let elements = probe.element_positions();
    let mut data = vec![0.0; grid.len()];

    data.par_chunks_mut(grid.nz)
        .enumerate()
        .for_each(|(ix, col)| {
            let x = grid.x(ix);
            for (iz, out) in col.iter_mut().enumerate() {
                let z = grid.z(iz);
                let mut acc = 0.0;
                for (n, &ex) in elements.iter().enumerate() {
                    let w = apodization_weight((z, x), ex, apod, probe.pitch);
                    if w == 0.0 {
                        continue;
                    }
                    let tau = propagation_delay((z, x), ex, ch.tx, probe.sound_speed);
                    let s = (tau - probe.t0_offset) * fs;
                    if s < 0.0 || s > (m_len - 1) as f64 {
                        continue;
                    }
                    let trace = ch.trace(n);
                    let i0 = s.floor() as usize;
                    let v = if i0 + 1 >= m_len {
                        trace[m_len - 1]
                    } else {
                        let f = s - i0 as f64;
                        (1.0 - f) * trace[i0] + f * trace[i0 + 1]
                    };
                    acc += w * v;
                }
                *out = acc;
            }
        });
    RfImage::from_vec(*grid, data)
}

/// Element-wise mean of RF images (before envelope detection).
pub fn compound(images: &[RfImage]) -> Result<RfImage> {
    let first = images
        .first()
        .ok_or_else(|| invalid("images", "cannot compound an empty list"))?;
    if images.iter().any(|im| im.grid != first.grid) {
        return Err(invalid("images", "all images must share one grid"));
    }
    if images.len() == 1 {
        return Ok(first.clone());
    }
    let k = images.len() as f64;
    let data = (0..first.len())
        .map(|p| images.iter().map(|im| im.as_slice()[p]).sum::<f64>() / k)
        .collect();
    RfImage::from_vec(first.grid, data)
}

/// Analytic-signal magnitude along each axial line.
pub fn envelope(img: &RfImage) -> Result<RfImage> {
    let nz = img.nz();
    if nz < 4 {
        return Err(invalid("img", "envelope needs at least 4 axial samples"));
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nz);
    let inv = planner.plan_fft_inverse(nz);
    // one-sided spectrum weights
    let mut h = vec![0.0; nz];
    h[0] = 1.0;
    let half = nz / 2;
    if nz.is_multiple_of(2) {
        h[half] = 1.0;
        h[1..half].iter_mut().for_each(|v| *v = 2.0);
    } else {
        h[1..=half].iter_mut().for_each(|v| *v = 2.0);
    }

    let mut data = vec![0.0; img.len()];
    data.par_chunks_mut(nz).enumerate().for_each(|(ix, out)| {
        let mut buf: Vec<Complex64> = img
            .column(ix)
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        fwd.process(&mut buf);
        for (b, &w) in buf.iter_mut().zip(&h) {
            *b *= w;
        }
        inv.process(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.norm() / nz as f64;
        }
    });
    RfImage::from_vec(img.grid, data)
}

/// `20 log10(env / max env)`, clamped to `[-dynamic_range, 0]`.
pub fn log_compress(env: &RfImage, dynamic_range: f64) -> Result<BModeImage> {
    if !(dynamic_range > 0.0) {
        return Err(invalid("dynamic_range", "must be positive"));
    }
    if env.as_slice().iter().any(|&v| v < 0.0) {
        return Err(invalid("env", "envelope must be non-negative"));
    }
    let peak = env.max_abs();
    let data = env
        .as_slice()
        .iter()
        .map(|&v| {
            if peak == 0.0 || v == 0.0 {
                -dynamic_range
            } else {
                (20.0 * (v / peak).log10()).clamp(-dynamic_range, 0.0)
            }
        })
        .collect();
    BModeImage::from_vec(env.grid, dynamic_range, data)
}

/// Envelope detection followed by log compression.
pub fn bmode(img: &RfImage, dynamic_range: f64) -> Result<BModeImage> {
    log_compress(&envelope(img)?, dynamic_range)
}
