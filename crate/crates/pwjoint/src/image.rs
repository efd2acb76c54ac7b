//! Image-domain containers. Storage is column-major: pixel `(iz, ix)` lives
//! at `iz + nz * ix`, so each lateral position owns one contiguous axial line.

use serde::{Deserialize, Serialize};

use crate::acquisition::ImagingGrid;
use crate::error::{check_len, invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfImage {
    pub grid: ImagingGrid,
    data: Vec<f64>,
}

impl RfImage {
    pub fn zeros(grid: ImagingGrid) -> Self {
        Self {
            data: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_vec(grid: ImagingGrid, data: Vec<f64>) -> Result<Self> {
        check_len("RfImage::from_vec", grid.len(), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("data", "image entries must be finite"));
        }
        Ok(Self { grid, data })
    }

    pub fn nz(&self) -> usize {
        self.grid.nz
    }

    pub fn nx(&self) -> usize {
        self.grid.nx
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, iz: usize, ix: usize) -> f64 {
        self.data[iz + self.grid.nz * ix]
    }

    #[inline]
    pub fn set(&mut self, iz: usize, ix: usize, v: f64) {
        let nz = self.grid.nz;
        self.data[iz + nz * ix] = v;
    }

    pub fn column(&self, ix: usize) -> &[f64] {
        let nz = self.grid.nz;
        &self.data[ix * nz..(ix + 1) * nz]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Multiplies every pixel by `k`.
    pub fn scaled(mut self, k: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= k);
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Location of the largest value inside `[iz±hz] x [ix±hx]`, clipped to the grid.
    pub fn argmax_near(&self, iz: usize, ix: usize, hz: usize, hx: usize) -> (usize, usize) {
        let (z0, z1) = (iz.saturating_sub(hz), (iz + hz).min(self.nz() - 1));
        let (x0, x1) = (ix.saturating_sub(hx), (ix + hx).min(self.nx() - 1));
        let mut best = (iz, ix);
        let mut bv = f64::NEG_INFINITY;
        for j in x0..=x1 {
            for i in z0..=z1 {
                let v = self.get(i, j);
                if v > bv {
                    bv = v;
                    best = (i, j);
                }
            }
        }
        best
    }
}

/// Log-compressed display image in dB, every value in `[-dynamic_range, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BModeImage {
    pub grid: ImagingGrid,
    pub dynamic_range: f64,
    data: Vec<f64>,
}

impl BModeImage {
    pub fn from_vec(grid: ImagingGrid, dynamic_range: f64, data: Vec<f64>) -> Result<Self> {
        check_len("BModeImage::from_vec", grid.len(), data.len())?;
        if !(dynamic_range > 0.0) {
            return Err(invalid("dynamic_range", "must be positive"));
        }
        if data
            .iter()
            .any(|v| !v.is_finite() || *v > 0.0 || *v < -dynamic_range)
        {
            return Err(invalid("data", "B-mode values must lie in [-dynamic_range, 0]"));
        }
        Ok(Self {
            grid,
            dynamic_range,
            data,
        })
    }

    #[inline]
    pub fn get(&self, iz: usize, ix: usize) -> f64 {
        self.data[iz + self.grid.nz * ix]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
