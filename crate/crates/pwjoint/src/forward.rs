//! The sparse system matrix Φ that maps image pixels to channel samples.
//!
//! Row `r = n*M + m` is sample `m` of element `n`; column `j = iz + nz*ix`.
//! A pixel enters row `r` when its round-trip delay lies within one sampling
//! period of the sample time. Raw weights fall off linearly with the timing
//! error relative to the largest error admitted into that row, and receive
//! apodization is multiplied in at assembly.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{ImagingGrid, PlaneWaveTx, ProbeGeometry};
use crate::error::{check_len, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hanning,
    Tukey { taper: f64 },
}

impl Window {
    /// Window value at normalized offset `d` in `[-1, 1]`, peak 1 at 0.
    pub fn eval(&self, d: f64) -> f64 {
        let d = d.abs();
        if d > 1.0 {
            return 0.0;
        }
        match *self {
            Window::Rectangular => 1.0,
            Window::Hanning => (std::f64::consts::FRAC_PI_2 * d).cos().powi(2),
            Window::Tukey { taper } => {
                let flat = 1.0 - taper;
                if d <= flat {
                    1.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (d - flat) / taper).cos())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApodizationSpec {
    pub window: Window,
    pub f_number: f64,
}

impl Default for ApodizationSpec {
    fn default() -> Self {
        Self {
            window: Window::Hanning,
            f_number: 0.5,
        }
    }
}

impl ApodizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_number > 0.0) {
            return Err(invalid("f_number", "must be positive"));
        }
        if let Window::Tukey { taper } = self.window {
            if !(0.0..=1.0).contains(&taper) {
                return Err(invalid("taper", "tukey taper must be in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Tukey(0.25) at f# 1.75, the setting used for in-vivo style data.
    pub fn in_vivo() -> Self {
        Self {
            window: Window::Tukey { taper: 0.25 },
            f_number: 1.75,
        }
    }
}

/// Plane-wave transmit plus receive path from pixel `(z, x)` back to the element.
#[inline]
pub fn propagation_delay(pixel: (f64, f64), element_x: f64, tx: PlaneWaveTx, c: f64) -> f64 {
    let (z, x) = pixel;
    let (s, co) = tx.angle.sin_cos();
    (z * co + x * s) / c + (z * z + (x - element_x).powi(2)).sqrt() / c
}

/// Receive apodization for one pixel/element pair. The half aperture is
/// `z / (2 f#)`, never smaller than `min_half_aperture`; pixels at `z <= 0`
/// get nothing.
#[inline]
pub fn apodization_weight(
    pixel: (f64, f64),
    element_x: f64,
    spec: &ApodizationSpec,
    min_half_aperture: f64,
) -> f64 {
    let (z, x) = pixel;
    if z <= 0.0 {
        return 0.0;
    }
    let a = (z / (2.0 * spec.f_number)).max(min_half_aperture);
    let d = (x - element_x) / a;
    if d.abs() > 1.0 {
        0.0
    } else {
        spec.window.eval(d)
    }
}

/// Everything Φ depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub probe: ProbeGeometry,
    pub grid: ImagingGrid,
    pub tx: PlaneWaveTx,
    pub apod: ApodizationSpec,
    pub num_samples: usize,
}

impl ModelMeta {
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("model metadata serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn num_rows(&self) -> usize {
        self.num_samples * self.probe.num_elements
    }
}

/// Φ in compressed-row form, with a compressed-row copy of Φᵀ for the adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    meta: ModelMeta,
    fingerprint: String,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    t_ptr: Vec<usize>,
    t_rows: Vec<u32>,
    t_vals: Vec<f64>,
}

struct Entry {
    col: u32,
    diff: f64,
    apod: f64,
}

pub fn build_system_matrix(
    probe: &ProbeGeometry,
    grid: &ImagingGrid,
    tx: PlaneWaveTx,
    num_samples: usize,
    apod: &ApodizationSpec,
) -> Result<SystemMatrix> {
    probe.validate()?;
    apod.validate()?;
    if grid.is_empty() {
        return Err(invalid("grid", "empty imaging grid"));
    }
    if num_samples == 0 {
        return Err(invalid("num_samples", "need at least one sample"));
    }
    if grid.len() > u32::MAX as usize {
        return Err(invalid("grid", "too many pixels for 32-bit column indices"));
    }
    let meta = ModelMeta {
        probe: *probe,
        grid: *grid,
        tx,
        apod: *apod,
        num_samples,
    };
    let fs = probe.sampling_freq;
    let gate = 1.0 / fs;
    let m_len = num_samples;

    // One block of rows per element; blocks are independent.
    let blocks: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> = (0..probe.num_elements)
        .into_par_iter()
        .map(|n| {
            let ex = probe.element_x(n);
            let mut buckets: Vec<Vec<Entry>> = (0..m_len).map(|_| Vec::new()).collect();
            for ix in 0..grid.nx {
                let x = grid.x(ix);
                for iz in 0..grid.nz {
                    let z = grid.z(iz);
                    let tau = propagation_delay((z, x), ex, tx, probe.sound_speed);
                    let w = apodization_weight((z, x), ex, apod, probe.pitch);
                    let centre = (tau - probe.t0_offset) * fs;
                    // one sample of slack each side; the exact test below decides
                    let lo = (centre - 2.0).ceil().max(0.0);
                    let hi = (centre + 2.0).floor();
                    if hi < 0.0 || lo > (m_len - 1) as f64 {
                        continue;
                    }
                    let (lo, hi) = (lo as usize, (hi as usize).min(m_len - 1));
                    for (m, bucket) in buckets.iter_mut().enumerate().take(hi + 1).skip(lo) {
                        let diff = (probe.sample_time(m) - tau).abs();
                        if diff <= gate {
                            bucket.push(Entry {
                                col: grid.index(iz, ix) as u32,
                                diff,
                                apod: w,
                            });
                        }
                    }
                }
            }
            let mut counts = Vec::with_capacity(m_len);
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for bucket in &buckets {
                let before = cols.len();
                let t_max = bucket.iter().fold(0.0f64, |a, e| a.max(e.diff));
                for e in bucket {
                    let raw = if bucket.len() == 1 || t_max == 0.0 {
                        1.0
                    } else {
                        1.0 - e.diff / t_max
                    };
                    let v = raw * e.apod;
                    if v > 0.0 {
                        cols.push(e.col);
                        vals.push(v);
                    }
                }
                counts.push(cols.len() - before);
            }
            (counts, cols, vals)
        })
        .collect();

    let nnz: usize = blocks.iter().map(|b| b.1.len()).sum();
    let mut row_ptr = Vec::with_capacity(meta.num_rows() + 1);
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    row_ptr.push(0);
    for (counts, c, v) in blocks {
        for k in counts {
            row_ptr.push(row_ptr.last().unwrap() + k);
        }
        cols.extend_from_slice(&c);
        vals.extend_from_slice(&v);
    }
    Ok(SystemMatrix::from_parts(meta, row_ptr, cols, vals))
}

impl SystemMatrix {
    fn from_parts(meta: ModelMeta, row_ptr: Vec<usize>, cols: Vec<u32>, vals: Vec<f64>) -> Self {
        let n_cols = meta.grid.len();
        let mut t_ptr = vec![0usize; n_cols + 1];
        for &c in &cols {
            t_ptr[c as usize + 1] += 1;
        }
        for j in 0..n_cols {
            t_ptr[j + 1] += t_ptr[j];
        }
        let mut next = t_ptr.clone();
        let mut t_rows = vec![0u32; cols.len()];
        let mut t_vals = vec![0.0; cols.len()];
        for r in 0..row_ptr.len() - 1 {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let c = cols[k] as usize;
                t_rows[next[c]] = r as u32;
                t_vals[next[c]] = vals[k];
                next[c] += 1;
            }
        }
        Self {
            fingerprint: meta.fingerprint(),
            meta,
            row_ptr,
            cols,
            vals,
            t_ptr,
            t_rows,
            t_vals,
        }
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn num_cols(&self) -> usize {
        self.meta.grid.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and weights of row `r`, columns ascending.
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    /// Row indices and weights of column `j`, rows ascending.
    pub fn column(&self, j: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.t_ptr[j], self.t_ptr[j + 1]);
        (&self.t_rows[a..b], &self.t_vals[a..b])
    }

    /// Dense row-major copy. Only sensible for small test problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.num_rows())
            .map(|r| {
                let mut row = vec![0.0; self.num_cols()];
                let (c, v) = self.row(r);
                for (&j, &w) in c.iter().zip(v) {
                    row[j as usize] = w;
                }
                row
            })
            .collect()
    }

    pub fn apply_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_forward", self.num_cols(), x.len())?;
        let mut y = vec![0.0; self.num_rows()];
        spmv(&self.row_ptr, &self.cols, &self.vals, x, &mut y);
        Ok(y)
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_adjoint", self.num_rows(), y.len())?;
        let mut x = vec![0.0; self.num_cols()];
        spmv(&self.t_ptr, &self.t_rows, &self.t_vals, y, &mut x);
        Ok(x)
    }

    /// ΦᵀΦx into `out`, reusing `scratch` (length `num_rows`).
    pub(crate) fn apply_normal(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        spmv(&self.row_ptr, &self.cols, &self.vals, x, scratch);
        spmv(&self.t_ptr, &self.t_rows, &self.t_vals, scratch, out);
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_vec(&CacheHeader {
            fingerprint: self.fingerprint.clone(),
            meta: self.meta,
        })?;
        let mut buf = Vec::with_capacity(
            32 + meta.len() + 8 * self.row_ptr.len() + 12 * self.vals.len(),
        );
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(self.num_rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.num_cols() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.nnz() as u64).to_le_bytes());
        for &p in &self.row_ptr {
            buf.extend_from_slice(&(p as u64).to_le_bytes());
        }
        for &c in &self.cols {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        for &v in &self.vals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        crate::io::write_atomic(path, &buf)
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut rd = crate::io::ByteReader::new(&bytes, path);
        if rd.take(4)? != CACHE_MAGIC {
            return Err(Error::BadMagic { path: path.into() });
        }
        let version = rd.u16()?;
        if version != CACHE_VERSION {
            return Err(Error::VersionMismatch {
                path: path.into(),
                found: version,
                expected: CACHE_VERSION,
            });
        }
        let meta_len = rd.u32()? as usize;
        let header: CacheHeader = serde_json::from_slice(rd.take(meta_len)?)?;
        let rows = rd.u64()? as usize;
        let n_cols = rd.u64()? as usize;
        let nnz = rd.u64()? as usize;
        let structural = |reason: String| Error::Structural {
            path: path.into(),
            reason,
        };
        if rows != header.meta.num_rows() || n_cols != header.meta.grid.len() {
            return Err(structural("matrix dims disagree with geometry".into()));
        }
        if header.fingerprint != header.meta.fingerprint() {
            return Err(structural("fingerprint does not match geometry".into()));
        }
        rd.expect_remaining(8 * (rows + 1) + 12 * nnz)?;
        let row_ptr: Vec<usize> = (0..=rows).map(|_| rd.u64().map(|v| v as usize)).collect::<Result<_>>()?;
        let cols: Vec<u32> = (0..nnz).map(|_| rd.u32()).collect::<Result<_>>()?;
        let vals: Vec<f64> = (0..nnz).map(|_| rd.f64()).collect::<Result<_>>()?;
        let ok_ptr = row_ptr.first() == Some(&0)
            && row_ptr.last() == Some(&nnz)
            && row_ptr.windows(2).all(|w| w[0] <= w[1]);
        if !ok_ptr || cols.iter().any(|&c| c as usize >= n_cols) {
            return Err(structural("corrupt index arrays".into()));
        }
        Ok(Self::from_parts(header.meta, row_ptr, cols, vals))
    }
}

const CACHE_MAGIC: &[u8; 4] = b"USJM";
const CACHE_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    fingerprint: String,
    meta: ModelMeta,
}

/// Directory for cached matrices, from `PWJOINT_CACHE_DIR`.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os("PWJOINT_CACHE_DIR").map(PathBuf::from)
}

/// Loads Φ from `cache_dir` when a matrix with the same fingerprint is there,
/// otherwise builds it and stores it.
pub fn build_or_load(
    probe: &ProbeGeometry,
    grid: &ImagingGrid,
    tx: PlaneWaveTx,
    num_samples: usize,
    apod: &ApodizationSpec,
    cache_dir: Option<&Path>,
) -> Result<SystemMatrix> {
    let Some(dir) = cache_dir else {
        return build_system_matrix(probe, grid, tx, num_samples, apod);
    };
    let meta = ModelMeta {
        probe: *probe,
        grid: *grid,
        tx,
        apod: *apod,
        num_samples,
    };
    let path = dir.join(format!("phi-{}.usjm", meta.fingerprint()));
    if path.exists() {
        if let Ok(m) = SystemMatrix::read_cache(&path) {
            if m.meta == meta {
                return Ok(m);
            }
        }
    }
    let m = build_system_matrix(probe, grid, tx, num_samples, apod)?;
    fs::create_dir_all(dir)?;
    m.write_cache(&path)?;
    Ok(m)
}

fn spmv(ptr: &[usize], idx: &[u32], vals: &[f64], x: &[f64], y: &mut [f64]) {
    y.par_chunks_mut(1024).enumerate().for_each(|(chunk, ys)| {
        let base = chunk * 1024;
        for (k, yi) in ys.iter_mut().enumerate() {
            let r = base + k;
            let mut acc = 0.0;
            for p in ptr[r]..ptr[r + 1] {
                acc += vals[p] * x[idx[p] as usize];
            }
            *yi = acc;
        }
    });
}
