//! PICMUS (HDF5) channel-data ingestion. The reader itself needs the
//! `picmus` feature; without it only the missing-file diagnostic works.

use std::path::Path;

use crate::acquisition::{ChannelData, ProbeGeometry};
use crate::error::{Error, Result};

pub const DOWNLOAD_HINT: &str =
    "the PICMUS datasets are not bundled; download them from https://www.creatis.insa-lyon.fr/Challenge/IEEE_IUS_2016/ and pass the .hdf5 path";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PicmusSelection {
    /// Index into the file's angle list; the transmit closest to normal
    /// incidence when `None`.
    pub angle_index: Option<usize>,
    /// When set, the file's sampling frequency must match (relative 1e-6).
    pub expected_fs: Option<f64>,
}

pub fn ingest_picmus(path: &Path, sel: PicmusSelection) -> Result<(ChannelData, ProbeGeometry)> {
    if !path.exists() {
        return Err(Error::DatasetNotFound {
            path: path.into(),
            hint: DOWNLOAD_HINT,
        });
    }
    imp::read(path, sel)
}

#[cfg(not(feature = "picmus"))]
mod imp {
    use super::*;

    pub(super) fn read(path: &Path, _sel: PicmusSelection) -> Result<(ChannelData, ProbeGeometry)> {
        Err(Error::Dataset {
            path: path.into(),
            reason: "built without the `picmus` feature; rebuild with `--features picmus`".into(),
        })
    }
}

#[cfg(feature = "picmus")]
mod imp {
    use super::*;
    use crate::acquisition::PlaneWaveTx;
    use hdf5_metno as hdf5;

    const ROOT: &str = "US/US_DATASET0000";

    fn err(path: &Path, reason: impl Into<String>) -> Error {
        Error::Dataset {
            path: path.into(),
            reason: reason.into(),
        }
    }

    fn values(g: &hdf5::Group, name: &str, path: &Path) -> Result<(Vec<f64>, Vec<usize>)> {
        let ds = g
            .dataset(name)
            .map_err(|_| err(path, format!("missing group/dataset `{ROOT}/{name}`")))?;
        let v = ds
            .read_raw::<f64>()
            .map_err(|e| err(path, format!("cannot read `{ROOT}/{name}`: {e}")))?;
        Ok((v, ds.shape()))
    }

    fn scalar(g: &hdf5::Group, name: &str, path: &Path) -> Result<f64> {
        values(g, name, path)?
            .0
            .first()
            .copied()
            .ok_or_else(|| err(path, format!("`{ROOT}/{name}` is empty")))
    }

    pub(super) fn read(path: &Path, sel: PicmusSelection) -> Result<(ChannelData, ProbeGeometry)> {
        let file = hdf5::File::open(path).map_err(|e| err(path, format!("not an HDF5 file: {e}")))?;
        let g = file
            .group(ROOT)
            .map_err(|_| err(path, format!("missing group `{ROOT}`")))?;

        let (angles, _) = values(&g, "angles", path)?;
        let index = match sel.angle_index {
            Some(i) => i,
            None => angles
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, _)| i)
                .ok_or_else(|| err(path, "file lists no transmit angles"))?,
        };
        let angle = *angles.get(index).ok_or_else(|| {
            err(path, format!("angle index {index} out of range ({} angles)", angles.len()))
        })?;
        let fs = scalar(&g, "sampling_frequency", path)?;
        if let Some(expected) = sel.expected_fs {
            if ((fs - expected) / expected).abs() > 1e-6 {
                return Err(Error::Inconsistent(format!(
                    "sampling frequency {fs} Hz in {} differs from configured {expected} Hz",
                    path.display()
                )));
            }
        }
        let modulation = scalar(&g, "modulation_frequency", path).unwrap_or(0.0);
        if modulation != 0.0 {
            return Err(err(
                path,
                format!("`{ROOT}/data` holds IQ data (modulation_frequency = {modulation}); RF is required"),
            ));
        }
        let c = scalar(&g, "sound_speed", path)?;
        let t0 = scalar(&g, "initial_time", path).unwrap_or(0.0);
        let f0 = scalar(&g, "center_frequency", path)
            .or_else(|_| scalar(&g, "transmit_frequency", path))
            .unwrap_or(ProbeGeometry::default().center_freq);

        let (geom, gshape) = values(&g, "probe_geometry", path)?;
        let n = match gshape[..] {
            [3, n] => n,
            [n, 3] => n,
            _ => return Err(err(path, "`probe_geometry` must be 3 x N")),
        };
        let xs: Vec<f64> = if gshape[0] == 3 {
            geom[..n].to_vec()
        } else {
            geom.chunks(3).map(|p| p[0]).collect()
        };
        if n < 2 {
            return Err(err(path, "probe has fewer than two elements"));
        }
        let pitch = (xs[n - 1] - xs[0]) / (n - 1) as f64;

        let (rf, shape) = values(&g, "data/real", path)?;
        let (na, nc, m) = match shape[..] {
            [a, b, c] => (a, b, c),
            [b, c] => (1, b, c),
            _ => return Err(err(path, "`data/real` must be angles x channels x samples")),
        };
        if na != angles.len() || nc != n {
            return Err(err(path, "`data/real` shape disagrees with angles/probe"));
        }
        // per angle, channel-major with samples contiguous: already our layout
        let start = index * nc * m;
        let samples = rf[start..start + nc * m].to_vec();

        let probe = ProbeGeometry {
            num_elements: n,
            pitch,
            sound_speed: c,
            sampling_freq: fs,
            center_freq: f0,
            t0_offset: t0,
        };
        let ch = ChannelData::new(probe, PlaneWaveTx::new(angle)?, m, samples)?;
        Ok((ch, probe))
    }
}
