//! Resolution and contrast indexes: FWHM, CNR, gCNR, and ROI-based
//! histogram matching.

use serde::{Deserialize, Serialize};

use crate::acquisition::ImagingGrid;
use crate::error::{invalid, Error, Result};
use crate::image::{BModeImage, RfImage};

/// Returned by [`cnr`] when the region means coincide.
pub const CNR_SENTINEL_DB: f64 = f64::MIN;
pub const DEFAULT_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub nz: usize,
    pub nx: usize,
    bits: Vec<bool>,
}

impl Mask {
    /// Pixels whose physical position satisfies `pred(z, x)`.
    pub fn from_fn(grid: &ImagingGrid, pred: impl Fn(f64, f64) -> bool) -> Self {
        let mut bits = vec![false; grid.len()];
        for ix in 0..grid.nx {
            for iz in 0..grid.nz {
                bits[grid.index(iz, ix)] = pred(grid.z(iz), grid.x(ix));
            }
        }
        Self {
            nz: grid.nz,
            nx: grid.nx,
            bits,
        }
    }

    pub fn disc(grid: &ImagingGrid, center: (f64, f64), radius: f64) -> Self {
        Self::from_fn(grid, |z, x| (z - center.0).hypot(x - center.1) <= radius)
    }

    /// Axis-aligned rectangle, inclusive, in meters.
    pub fn rect(grid: &ImagingGrid, z: (f64, f64), x: (f64, f64)) -> Self {
        Self::from_fn(grid, |pz, px| pz >= z.0 && pz <= z.1 && px >= x.0 && px <= x.1)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    fn select<'a>(&'a self, data: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        data.iter()
            .zip(&self.bits)
            .filter_map(|(v, &b)| b.then_some(*v))
    }

    pub fn values(&self, data: &[f64]) -> Vec<f64> {
        self.select(data).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub roi: Mask,
    pub background: Mask,
    pub disjoint: bool,
}

impl RegionSpec {
    pub fn new(roi: Mask, background: Mask) -> Result<Self> {
        let spec = Self::overlapping(roi, background)?;
        if !spec.disjoint {
            return Err(invalid("regions", "ROI and background overlap"));
        }
        Ok(spec)
    }

    /// Like [`RegionSpec::new`] but accepts overlapping masks, recording it in
    /// `disjoint`.
    pub fn overlapping(roi: Mask, background: Mask) -> Result<Self> {
        if roi.nz != background.nz || roi.nx != background.nx {
            return Err(invalid("regions", "masks have different shapes"));
        }
        if roi.count() == 0 || background.count() == 0 {
            return Err(invalid("regions", "empty region"));
        }
        let disjoint = !roi.intersects(&background);
        Ok(Self {
            roi,
            background,
            disjoint,
        })
    }

    /// Regions for an anechoic cyst: inside disc of `0.8 r`, background in two
    /// lateral bands at `1.2 r ..= 2.8 r` from the center within `±0.8 r`
    /// axially. The returned speckle mask (both lateral sides beyond `1.2 r`,
    /// same axial span) drives histogram matching.
    pub fn cyst(grid: &ImagingGrid, center: (f64, f64), radius: f64) -> Result<(Self, Mask)> {
        let (cz, cx) = center;
        let roi = Mask::disc(grid, center, 0.8 * radius);
        let bg = Mask::from_fn(grid, |z, x| {
            let dx = (x - cx).abs();
            (z - cz).abs() <= 0.8 * radius && dx >= 1.2 * radius && dx <= 2.8 * radius
        });
        let speckle = Mask::from_fn(grid, |z, x| {
            (z - cz).abs() <= 0.8 * radius && (x - cx).abs() >= 1.2 * radius
        });
        Ok((Self::new(roi, bg)?, speckle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Axial,
    Lateral,
}

/// Full width at half maximum, in mm, of the profile through `target`.
pub fn fwhm(env: &RfImage, target: (usize, usize), axis: Axis) -> Result<f64> {
    let (iz, ix) = target;
    let (profile, i, spacing) = match axis {
        Axis::Axial => (env.column(ix).to_vec(), iz, env.grid.dz),
        Axis::Lateral => (
            (0..env.nx()).map(|j| env.get(iz, j)).collect::<Vec<_>>(),
            ix,
            env.grid.dx,
        ),
    };
    let width = fwhm_samples(&profile, i).ok_or(Error::Unresolved { iz, ix })?;
    Ok(width * spacing * 1e3)
}

/// FWHM of a sampled profile around index `i`, in samples.
pub fn fwhm_samples(p: &[f64], i: usize) -> Option<f64> {
    let peak = *p.get(i)?;
    if !(peak > 0.0) {
        return None;
    }
    let half = peak / 2.0;
    let mut l = i;
    while p[l] >= half {
        if l == 0 {
            return None;
        }
        l -= 1;
    }
    let mut r = i;
    while p[r] >= half {
        if r + 1 == p.len() {
            return None;
        }
        r += 1;
    }
    let left = l as f64 + (half - p[l]) / (p[l + 1] - p[l]);
    let right = (r - 1) as f64 + (p[r - 1] - half) / (p[r - 1] - p[r]);
    Some(right - left)
}

/// CNR in dB from population statistics of the two regions.
pub fn cnr(img: &BModeImage, regions: &RegionSpec) -> Result<f64> {
    cnr_values(
        &regions.roi.values(img.as_slice()),
        &regions.background.values(img.as_slice()),
    )
}

pub fn cnr_values(roi: &[f64], bg: &[f64]) -> Result<f64> {
    if roi.is_empty() || bg.is_empty() {
        return Err(invalid("regions", "empty region"));
    }
    let (m1, v1) = mean_var(roi);
    let (m2, v2) = mean_var(bg);
    let num = (m1 - m2).abs();
    let den = ((v1 + v2) / 2.0).sqrt();
    match (num == 0.0, den == 0.0) {
        (true, true) => Err(Error::MetricUndefined(
            "CNR with equal means and zero variance",
        )),
        (true, false) => Ok(CNR_SENTINEL_DB),
        (false, true) => Ok(f64::INFINITY),
        (false, false) => Ok(20.0 * (num / den).log10()),
    }
}

/// Generalized CNR: one minus the overlap of the two regions' normalized
/// histograms on shared bins.
pub fn gcnr(img: &BModeImage, regions: &RegionSpec, nbins: usize) -> Result<f64> {
    gcnr_values(
        &regions.roi.values(img.as_slice()),
        &regions.background.values(img.as_slice()),
        nbins,
    )
}

pub fn gcnr_values(roi: &[f64], bg: &[f64], nbins: usize) -> Result<f64> {
    if nbins < 2 {
        return Err(invalid("nbins", "need at least 2 bins"));
    }
    if roi.is_empty() || bg.is_empty() {
        return Err(invalid("regions", "empty region"));
    }
    let lo = roi.iter().chain(bg).fold(f64::INFINITY, |a, &v| a.min(v));
    let hi = roi.iter().chain(bg).fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let hist = |vals: &[f64]| {
        let mut h = vec![0.0; nbins];
        for &v in vals {
            let k = if hi > lo {
                (((v - lo) / (hi - lo)) * nbins as f64).floor() as usize
            } else {
                0
            };
            h[k.min(nbins - 1)] += 1.0;
        }
        let n = vals.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let (a, b) = (hist(roi), hist(bg));
    let overlap: f64 = a.iter().zip(&b).map(|(x, y)| x.min(*y)).sum();
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// Monotone quantile mapping that carries the intensity distribution of `img`
/// over `speckle` onto that of `reference` over the same pixels, applied to
/// the whole image. Levels outside the ROI's range are shifted with the
/// nearest end of the map, then clamped to the reference dynamic range.
pub fn histogram_match(
    img: &BModeImage,
    reference: &BModeImage,
    speckle: &Mask,
) -> Result<BModeImage> {
    if img.grid != reference.grid || speckle.nz != img.grid.nz || speckle.nx != img.grid.nx {
        return Err(invalid("histogram_match", "image, reference and mask shapes differ"));
    }
    let mut pairs: Vec<(f64, f64)> = {
        let mut src = speckle.values(img.as_slice());
        let mut dst = speckle.values(reference.as_slice());
        if src.is_empty() {
            return Err(invalid("speckle", "empty ROI"));
        }
        src.sort_by(f64::total_cmp);
        dst.sort_by(f64::total_cmp);
        src.into_iter().zip(dst).collect()
    };
    // collapse ties in the source to one knot at the mean target value
    let mut knots: Vec<(f64, f64)> = Vec::new();
    let mut k = 0;
    while k < pairs.len() {
        let x = pairs[k].0;
        let mut j = k;
        let mut acc = 0.0;
        while j < pairs.len() && pairs[j].0 == x {
            acc += pairs[j].1;
            j += 1;
        }
        knots.push((x, acc / (j - k) as f64));
        k = j;
    }
    pairs.clear();
    if knots.len() < 2 {
        return Err(invalid("speckle", "constant-valued ROI, CDF is degenerate"));
    }
    let dr = reference.dynamic_range;
    let map = |v: f64| -> f64 {
        let first = knots[0];
        let last = knots[knots.len() - 1];
        // unit slope past the ends keeps out-of-ROI levels (a dark cyst) apart
        let y = if v <= first.0 {
            first.1 + (v - first.0)
        } else if v >= last.0 {
            last.1 + (v - last.0)
        } else {
            let j = knots.partition_point(|kn| kn.0 <= v);
            let (x0, y0) = knots[j - 1];
            let (x1, y1) = knots[j];
            y0 + (v - x0) / (x1 - x0) * (y1 - y0)
        };
        y.clamp(-dr, 0.0)
    };
    let data = img.as_slice().iter().map(|&v| map(v)).collect();
    BModeImage::from_vec(img.grid, dr, data)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fwhm_axial: Vec<f64>,
    pub fwhm_lateral: Vec<f64>,
    pub cnr: Vec<f64>,
    pub gcnr: Vec<f64>,
}

impl MetricsReport {
    pub fn mean_fwhm_axial(&self) -> Option<f64> {
        mean(&self.fwhm_axial)
    }
    pub fn mean_fwhm_lateral(&self) -> Option<f64> {
        mean(&self.fwhm_lateral)
    }
    pub fn mean_cnr(&self) -> Option<f64> {
        mean(&self.cnr)
    }
    pub fn mean_gcnr(&self) -> Option<f64> {
        mean(&self.gcnr)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// FWHM for each point target. Each target is first moved to the envelope
/// maximum within `search` pixels (axial, lateral).
pub fn point_metrics(
    env: &RfImage,
    targets: &[(usize, usize)],
    search: (usize, usize),
) -> Result<MetricsReport> {
    let mut rep = MetricsReport::default();
    for &(iz, ix) in targets {
        let peak = env.argmax_near(iz, ix, search.0, search.1);
        rep.fwhm_axial.push(fwhm(env, peak, Axis::Axial)?);
        rep.fwhm_lateral.push(fwhm(env, peak, Axis::Lateral)?);
    }
    Ok(rep)
}

/// CNR and gCNR for each region pair after matching `img` to `reference`.
pub fn contrast_metrics(
    img: &BModeImage,
    reference: &BModeImage,
    regions: &[(RegionSpec, Mask)],
    nbins: usize,
) -> Result<MetricsReport> {
    let mut rep = MetricsReport::default();
    for (r, speckle) in regions {
        let matched = histogram_match(img, reference, speckle)?;
        rep.cnr.push(cnr(&matched, r)?);
        rep.gcnr.push(gcnr(&matched, r, nbins)?);
    }
    Ok(rep)
}

/// Aligned text table: one row per method, averaged indexes as columns.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let cell = |v: Option<f64>, prec: usize| match v {
        Some(x) if x == CNR_SENTINEL_DB => "-inf".to_string(),
        Some(x) => format!("{x:.prec$}"),
        None => "-".to_string(),
    };
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<width$}  {:>10}  {:>10}  {:>8}  {:>6}\n",
        "method", "FWHM_A mm", "FWHM_L mm", "CNR dB", "gCNR"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>10}  {:>10}  {:>8}  {:>6}\n",
            name,
            cell(r.mean_fwhm_axial(), 3),
            cell(r.mean_fwhm_lateral(), 3),
            cell(r.mean_cnr(), 2),
            cell(r.mean_gcnr(), 3),
        ));
    }
    out
}
