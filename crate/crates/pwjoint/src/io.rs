//! `USJD` container files and image export.
//!
//! Layout (little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `USJD` |
//! | 2 | version |
//! | 1 | kind tag |
//! | 1 | reserved, 0 |
//! | 4 | metadata length L |
//! | L | UTF-8 JSON metadata, always with a `dims` array |
//! | 8 | payload element count P |
//! | 4·P | `f32` payload, row-major over `dims` |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::acquisition::{Annotation, ChannelData, ImagingGrid, Phantom, PlaneWaveTx, ProbeGeometry};
use crate::error::{invalid, Error, Result};
use crate::image::{BModeImage, RfImage};
use crate::psf::Psf;

pub const MAGIC: &[u8; 4] = b"USJD";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Channel,
    Rfimage,
    Bmode,
    Psf,
    Phantom,
    Matrix,
}

impl Kind {
    fn tag(self) -> u8 {
        match self {
            Kind::Channel => 1,
            Kind::Rfimage => 2,
            Kind::Bmode => 3,
            Kind::Psf => 4,
            Kind::Phantom => 5,
            Kind::Matrix => 6,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            1 => Kind::Channel,
            2 => Kind::Rfimage,
            3 => Kind::Bmode,
            4 => Kind::Psf,
            5 => Kind::Phantom,
            6 => Kind::Matrix,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Channel => "channel",
            Kind::Rfimage => "rfimage",
            Kind::Bmode => "bmode",
            Kind::Psf => "psf",
            Kind::Phantom => "phantom",
            Kind::Matrix => "matrix",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub metadata: Value,
    pub dims: Vec<usize>,
    pub payload: Vec<f32>,
}

impl Container {
    pub fn new(kind: Kind, dims: Vec<usize>, mut metadata: Value, payload: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != payload.len() {
            return Err(invalid("payload", "length does not match dims"));
        }
        if !metadata.is_object() {
            metadata = json!({});
        }
        metadata["dims"] = json!(dims);
        Ok(Self {
            kind,
            metadata,
            dims,
            payload,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.metadata)?;
        let mut buf = Vec::with_capacity(20 + meta.len() + 4 * self.payload.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.kind.tag());
        buf.push(0);
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        for v in &self.payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut rd = ByteReader::new(bytes, path);
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic { path: path.into() });
        }
        rd.take(4)?;
        let version = rd.u16()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                path: path.into(),
                found: version,
                expected: VERSION,
            });
        }
        let tag = rd.u8()?;
        let kind = Kind::from_tag(tag).ok_or_else(|| Error::Structural {
            path: path.into(),
            reason: format!("unknown kind tag {tag}"),
        })?;
        rd.u8()?;
        let meta_len = rd.u32()? as usize;
        let metadata: Value = serde_json::from_slice(rd.take(meta_len)?)?;
        let count = rd.u64()? as usize;
        rd.expect_remaining(4 * count)?;
        let payload: Vec<f32> = (0..count).map(|_| rd.f32()).collect::<Result<_>>()?;
        let structural = |reason: &str| Error::Structural {
            path: path.into(),
            reason: reason.into(),
        };
        if rd.remaining() != 0 {
            return Err(structural("trailing bytes after payload"));
        }
        let dims: Vec<usize> = metadata
            .get("dims")
            .and_then(|d| serde_json::from_value(d.clone()).ok())
            .ok_or_else(|| structural("metadata has no valid `dims`"))?;
        if dims.iter().product::<usize>() != count {
            return Err(structural("dims product does not match payload length"));
        }
        Ok(Self {
            kind,
            metadata,
            dims,
            payload,
        })
    }

    fn expect_kind(&self, kind: Kind, path: &Path) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                path: path.into(),
                expected: kind.name(),
                found: self.kind.name().into(),
            })
        }
    }

    fn field<T: for<'de> Deserialize<'de>>(&self, key: &str, path: &Path) -> Result<T> {
        let v = self.metadata.get(key).ok_or_else(|| Error::Structural {
            path: path.into(),
            reason: format!("metadata is missing `{key}`"),
        })?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Structural {
            path: path.into(),
            reason: format!("bad `{key}`: {e}"),
        })
    }

    fn dims2(&self, path: &Path) -> Result<(usize, usize)> {
        match self.dims[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::Structural {
                path: path.into(),
                reason: "expected two dims".into(),
            }),
        }
    }
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path)?;
    Container::from_bytes(&bytes, path)
}

pub fn write_container(c: &Container, path: &Path) -> Result<()> {
    write_atomic(path, &c.to_bytes()?)
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| invalid("path", "no file name"))?
        .to_string_lossy();
    let tmp: PathBuf = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Anything storable in a container.
pub trait ContainerItem: Sized {
    const KIND: Kind;
    fn to_container(&self) -> Result<Container>;
    fn from_container(c: &Container, path: &Path) -> Result<Self>;

    fn write(&self, path: &Path) -> Result<()> {
        write_container(&self.to_container()?, path)
    }

    fn read(path: &Path) -> Result<Self> {
        let c = read_container(path)?;
        c.expect_kind(Self::KIND, path)?;
        Self::from_container(&c, path)
    }
}

// Column-major (axial fastest) to row-major over (nz, nx) and back.
fn to_row_major(data: &[f64], nz: usize, nx: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; nz * nx];
    for ix in 0..nx {
        for iz in 0..nz {
            out[iz * nx + ix] = data[iz + nz * ix] as f32;
        }
    }
    out
}

fn from_row_major(data: &[f32], nz: usize, nx: usize) -> Vec<f64> {
    let mut out = vec![0.0; nz * nx];
    for iz in 0..nz {
        for ix in 0..nx {
            out[iz + nz * ix] = data[iz * nx + ix] as f64;
        }
    }
    out
}

fn check_grid(grid: &ImagingGrid, dims: (usize, usize), path: &Path) -> Result<()> {
    if (grid.nz, grid.nx) != dims {
        return Err(Error::Structural {
            path: path.into(),
            reason: "grid disagrees with dims".into(),
        });
    }
    Ok(())
}

impl ContainerItem for RfImage {
    const KIND: Kind = Kind::Rfimage;

    fn to_container(&self) -> Result<Container> {
        Container::new(
            Self::KIND,
            vec![self.nz(), self.nx()],
            json!({ "grid": self.grid, "units": "arbitrary" }),
            to_row_major(self.as_slice(), self.nz(), self.nx()),
        )
    }

    fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let (nz, nx) = c.dims2(path)?;
        let grid: ImagingGrid = c.field("grid", path)?;
        check_grid(&grid, (nz, nx), path)?;
        RfImage::from_vec(grid, from_row_major(&c.payload, nz, nx))
    }
}

impl ContainerItem for BModeImage {
    const KIND: Kind = Kind::Bmode;

    fn to_container(&self) -> Result<Container> {
        Container::new(
            Self::KIND,
            vec![self.grid.nz, self.grid.nx],
            json!({ "grid": self.grid, "units": "dB", "dynamic_range": self.dynamic_range }),
            to_row_major(self.as_slice(), self.grid.nz, self.grid.nx),
        )
    }

    fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let (nz, nx) = c.dims2(path)?;
        let grid: ImagingGrid = c.field("grid", path)?;
        check_grid(&grid, (nz, nx), path)?;
        let dr: f64 = c.field("dynamic_range", path)?;
        BModeImage::from_vec(grid, dr, from_row_major(&c.payload, nz, nx))
    }
}

impl ContainerItem for ChannelData {
    const KIND: Kind = Kind::Channel;

    /// Stored as an `M x N` row-major matrix (row = time sample).
    fn to_container(&self) -> Result<Container> {
        let (m, n) = (self.num_samples, self.probe.num_elements);
        Container::new(
            Self::KIND,
            vec![m, n],
            json!({ "probe": self.probe, "tx": self.tx, "units": "arbitrary" }),
            to_row_major(&self.samples, m, n),
        )
    }

    fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let (m, n) = c.dims2(path)?;
        let probe: ProbeGeometry = c.field("probe", path)?;
        let tx: PlaneWaveTx = c.field("tx", path)?;
        if probe.num_elements != n {
            return Err(Error::Structural {
                path: path.into(),
                reason: "element count disagrees with dims".into(),
            });
        }
        ChannelData::new(probe, tx, m, from_row_major(&c.payload, m, n))
    }
}

impl ContainerItem for Psf {
    const KIND: Kind = Kind::Psf;

    fn to_container(&self) -> Result<Container> {
        let (kz, kx) = self.dims();
        Container::new(Self::KIND, vec![kz, kx], json!({}), to_row_major(self.taps(), kz, kx))
    }

    fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let (kz, kx) = c.dims2(path)?;
        Psf::new(kz, kx, from_row_major(&c.payload, kz, kx))
    }
}

/// Writes a PSF with the pixel spacing it was sampled at.
pub fn write_psf(psf: &Psf, dz: f64, dx: f64, path: &Path) -> Result<()> {
    let mut c = psf.to_container()?;
    c.metadata["spacing"] = json!({ "dz": dz, "dx": dx });
    write_container(&c, path)
}

impl ContainerItem for Phantom {
    const KIND: Kind = Kind::Phantom;

    fn to_container(&self) -> Result<Container> {
        let mut c = self.trf.to_container()?;
        c.kind = Self::KIND;
        c.metadata["annotations"] = serde_json::to_value(&self.annotations)?;
        Ok(c)
    }

    fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let trf = RfImage::from_container(c, path)?;
        let annotations: Vec<Annotation> = c.field("annotations", path)?;
        Ok(Phantom { trf, annotations })
    }
}

/// Linear dB-to-gray mapping: `-dynamic_range` is 0, `0 dB` is 255.
pub fn bmode_to_gray(img: &BModeImage) -> Vec<u8> {
    let (nz, nx) = (img.grid.nz, img.grid.nx);
    let dr = img.dynamic_range;
    let mut out = vec![0u8; nz * nx];
    for iz in 0..nz {
        for ix in 0..nx {
            let g = ((img.get(iz, ix) + dr) / dr * 255.0).round().clamp(0.0, 255.0);
            out[iz * nx + ix] = g as u8;
        }
    }
    out
}

pub fn export_png(img: &BModeImage, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, img.grid.nx as u32, img.grid.nz as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        w.write_image_data(&bmode_to_gray(img))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    write_atomic(path, &buf)
}

pub fn export_pgm(img: &BModeImage, path: &Path) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", img.grid.nx, img.grid.nz).into_bytes();
    buf.extend_from_slice(&bmode_to_gray(img));
    write_atomic(path, &buf)
}

/// Little-endian cursor that reports short reads as truncation.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn expect_remaining(&self, n: usize) -> Result<()> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                path: self.path.into(),
                expected: n,
                found: self.remaining(),
            });
        }
        Ok(())
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.expect_remaining(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    pub(crate) fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }
    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }
    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
    pub(crate) fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }
    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
}
