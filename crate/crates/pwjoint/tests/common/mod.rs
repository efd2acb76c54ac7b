#![allow(dead_code, clippy::needless_range_loop)]

use pwjoint::acquisition::{ImagingGrid, PlaneWaveTx, ProbeGeometry};
use pwjoint::forward::{build_system_matrix, ApodizationSpec, SystemMatrix, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 8 elements, 16x16 grid starting 2 mm deep, 64 samples.
pub fn tiny_probe() -> ProbeGeometry {
    let base = ProbeGeometry {
        num_elements: 8,
        ..ProbeGeometry::default()
    };
    ProbeGeometry {
        t0_offset: 2.0 * (2.0e-3 - 0.1e-3) / base.sound_speed,
        ..base
    }
}

pub fn tiny_grid() -> ImagingGrid {
    ImagingGrid::new(&tiny_probe(), 16, 16, 2.0e-3).unwrap()
}

pub const TINY_SAMPLES: usize = 64;

pub fn tiny_model(angle: f64, apod: ApodizationSpec) -> SystemMatrix {
    build_system_matrix(
        &tiny_probe(),
        &tiny_grid(),
        PlaneWaveTx::new(angle).unwrap(),
        TINY_SAMPLES,
        &apod,
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(1e-300)
}

pub fn dense_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

pub fn dense_t_matvec(a: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.first().map_or(0, |r| r.len())];
    for (row, &yi) in a.iter().zip(y) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * yi;
        }
    }
    out
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Explicit circulant matrix of a centered kernel on an `nz x nx` image
/// (column-major pixels), built by shifting taps.
pub fn dense_bccb(taps: &[f64], kz: usize, kx: usize, nz: usize, nx: usize) -> Vec<Vec<f64>> {
    let n = nz * nx;
    let mut h = vec![vec![0.0; n]; n];
    let (a, b) = (kz / 2, kx / 2);
    for ox in 0..nx {
        for oz in 0..nz {
            let row = oz + nz * ox;
            for j in 0..kx {
                for i in 0..kz {
                    // out(oz, ox) += k(i, j) * x(oz - (i - a), ox - (j - b))
                    let sz = (oz + nz + a - i) % nz;
                    let sx = (ox + nx + b - j) % nx;
                    h[row][sz + nz * sx] += taps[i + kz * j];
                }
            }
        }
    }
    h
}

/// Brute force over every (element, sample, pixel) triple, written out
/// independently of the library's assembly.
pub fn triple_loop(angle: f64, apod: &ApodizationSpec) -> Vec<Vec<f64>> {
    let probe = tiny_probe();
    let grid = tiny_grid();
    let fs = probe.sampling_freq;
    let c = probe.sound_speed;
    let (s, co) = angle.sin_cos();
    let npx = grid.nz * grid.nx;
    let mut dense = vec![vec![0.0; npx]; probe.num_elements * TINY_SAMPLES];
    for n in 0..probe.num_elements {
        let xe = probe.element_x(n);
        for m in 0..TINY_SAMPLES {
            let t = m as f64 / fs + probe.t0_offset;
            let mut hits = Vec::new();
            for ix in 0..grid.nx {
                for iz in 0..grid.nz {
                    let (z, x) = (grid.z(iz), grid.x(ix));
                    let tau = (z * co + x * s) / c + (z * z + (x - xe).powi(2)).sqrt() / c;
                    let d = (t - tau).abs();
                    if d <= 1.0 / fs {
                        let a = (z / (2.0 * apod.f_number)).max(probe.pitch);
                        let u = (x - xe) / a;
                        let w = if u.abs() > 1.0 {
                            0.0
                        } else {
                            match apod.window {
                                Window::Hanning => (std::f64::consts::FRAC_PI_2 * u.abs()).cos().powi(2),
                                Window::Rectangular => 1.0,
                                Window::Tukey { .. } => unreachable!(),
                            }
                        };
                        hits.push((iz + grid.nz * ix, d, w));
                    }
                }
            }
            let t_max = hits.iter().map(|h| h.1).fold(0.0, f64::max);
            for &(j, d, w) in &hits {
                let raw = if hits.len() == 1 || t_max == 0.0 {
                    1.0
                } else {
                    1.0 - d / t_max
                };
                dense[n * TINY_SAMPLES + m][j] = raw * w;
            }
        }
    }
    dense
}
