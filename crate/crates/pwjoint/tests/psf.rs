mod common;

use common::*;
use proptest::prelude::*;
use pwjoint::acquisition::{ImagingGrid, ProbeGeometry};
use pwjoint::image::RfImage;
use pwjoint::psf::{conv_apply, deconv_update, make_parametric_psf, Convolver, Psf};

fn grid(nz: usize, nx: usize) -> ImagingGrid {
    ImagingGrid::new(&ProbeGeometry::default(), nz, nx, 0.0).unwrap()
}

fn random_psf(seed: u64, kz: usize, kx: usize) -> Psf {
    let mut r = rng(seed);
    Psf::new(kz, kx, random_vec(&mut r, kz * kx)).unwrap()
}

/// Amplitude spectrum by direct DFT on a fine frequency grid.
fn amplitude(pulse: &[f64], fs: f64, f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    let c = pulse.len() as f64 / 2.0;
    for (i, &p) in pulse.iter().enumerate() {
        let ph = -2.0 * std::f64::consts::PI * f * (i as f64 - c) / fs;
        re += p * ph.cos();
        im += p * ph.sin();
    }
    (re * re + im * im).sqrt()
}

#[test]
fn parametric_psf_shape() {
    let p = ProbeGeometry::default();
    let psf = make_parametric_psf(p.center_freq, p.sampling_freq, 0.67, 0.6).unwrap();
    let (kz, kx) = psf.dims();
    assert!(kz % 2 == 1 && kx == 5);
    assert_eq!(psf.center(), 1.0);
    assert!(psf.taps().iter().all(|v| v.abs() <= 1.0 + 1e-15));
    // lateral gaussian at the center row
    let (a, b) = psf.half_dims();
    for j in 0..kx {
        let l = j as f64 - b as f64;
        assert!((psf.tap(a, j) - (-l * l / 0.72).exp()).abs() < 1e-12);
    }
    // axial symmetry
    let ax = psf.axial_profile();
    for i in 0..kz {
        assert!((ax[i] - ax[kz - 1 - i]).abs() < 1e-12);
    }
}

#[test]
fn parametric_spectrum_peaks_at_center_with_requested_band() {
    let p = ProbeGeometry::default();
    for fbw in [0.5, 0.67, 0.9] {
        let pulse = make_parametric_psf(p.center_freq, p.sampling_freq, fbw, 0.6)
            .unwrap()
            .axial_profile();
        let freqs: Vec<f64> = (0..4000).map(|k| k as f64 * p.sampling_freq / 8000.0).collect();
        let amps: Vec<f64> = freqs.iter().map(|&f| amplitude(&pulse, p.sampling_freq, f)).collect();
        let (kmax, &peak) = amps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!((freqs[kmax] / p.center_freq - 1.0).abs() < 0.03, "fbw {fbw} peak at {}", freqs[kmax]);
        let lo = (0..kmax).rev().find(|&k| amps[k] < peak / 2.0).unwrap();
        let hi = (kmax..amps.len()).find(|&k| amps[k] < peak / 2.0).unwrap();
        let band = (freqs[hi] - freqs[lo]) / p.center_freq;
        assert!((band / fbw - 1.0).abs() < 0.05, "fbw {fbw} measured {band}");
    }
}

#[test]
fn narrow_beam_is_a_single_column() {
    let p = ProbeGeometry::default();
    let psf = make_parametric_psf(p.center_freq, p.sampling_freq, 0.67, 0.3).unwrap();
    assert_eq!(psf.dims().1, 1);
    assert!(make_parametric_psf(p.center_freq, p.sampling_freq, 0.0, 0.6).is_err());
    assert!(make_parametric_psf(p.center_freq, p.sampling_freq, 0.67, 0.0).is_err());
    assert!(make_parametric_psf(p.sampling_freq, p.sampling_freq, 0.67, 0.6).is_err());
}

#[test]
fn psf_construction_checks() {
    assert!(Psf::new(2, 3, vec![1.0; 6]).is_err());
    assert!(Psf::new(3, 3, vec![1.0; 8]).is_err());
    assert!(Psf::new(3, 1, vec![0.0; 3]).is_err());
    assert!(Psf::new(3, 1, vec![1.0, f64::NAN, 0.0]).is_err());
    let g = grid(4, 4);
    assert!(conv_apply(&random_psf(1, 5, 1), &RfImage::zeros(g), false).is_err());
}

#[test]
fn convolution_matches_dense_circulant() {
    for (seed, (nz, nx), (kz, kx)) in [(1, (12, 10), (5, 3)), (2, (16, 16), (7, 5)), (3, (9, 13), (3, 7))] {
        let psf = random_psf(seed, kz, kx);
        let h = dense_bccb(psf.taps(), kz, kx, nz, nx);
        let mut r = rng(seed + 100);
        let x = RfImage::from_vec(grid(nz, nx), random_vec(&mut r, nz * nx)).unwrap();
        let fwd = conv_apply(&psf, &x, false).unwrap();
        let adj = conv_apply(&psf, &x, true).unwrap();
        assert!(rel_err(fwd.as_slice(), &dense_matvec(&h, x.as_slice())) <= 1e-12);
        assert!(rel_err(adj.as_slice(), &dense_t_matvec(&h, x.as_slice())) <= 1e-12);
    }
}

#[test]
fn impulse_reproduces_kernel_around_it() {
    let psf = random_psf(9, 5, 3);
    let g = grid(12, 10);
    let mut x = RfImage::zeros(g);
    x.set(6, 4, 1.0);
    let y = conv_apply(&psf, &x, false).unwrap();
    for j in 0..3 {
        for i in 0..5 {
            assert!((y.get(6 + i - 2, 4 + j - 1) - psf.tap(i, j)).abs() < 1e-13);
        }
    }
}

#[test]
fn identity_kernel_is_identity() {
    let g = grid(10, 7);
    let mut r = rng(5);
    let x = RfImage::from_vec(g, random_vec(&mut r, g.len())).unwrap();
    for adjoint in [false, true] {
        let y = conv_apply(&Psf::identity(), &x, adjoint).unwrap();
        assert!(rel_err(y.as_slice(), x.as_slice()) < 1e-14);
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_u_update(
    h: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    z: &[f64],
    l1: &[f64],
    l2: &[f64],
    gd: f64,
    beta: f64,
) -> Vec<f64> {
    let n = y.len();
    let mut a = vec![vec![0.0; n]; n];
    for row in h {
        for i in 0..n {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                a[i][j] += gd * row[i] * row[j];
            }
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += 2.0 * beta;
    }
    let hty = dense_t_matvec(h, y);
    let b: Vec<f64> = (0..n)
        .map(|k| gd * hty[k] + beta * (w[k] + z[k]) - l1[k] - l2[k])
        .collect();
    dense_solve(a, b)
}

#[test]
fn u_update_matches_dense_normal_equations() {
    let (nz, nx) = (12, 12);
    let g = grid(nz, nx);
    for draw in 0..20u64 {
        let psf = random_psf(draw, 5, 3);
        let h = dense_bccb(psf.taps(), 5, 3, nz, nx);
        let mut r = rng(1000 + draw);
        let n = nz * nx;
        let y = random_vec(&mut r, n);
        let (w, z, l1, l2) = (random_vec(&mut r, n), random_vec(&mut r, n), random_vec(&mut r, n), random_vec(&mut r, n));
        let gd = 0.1 + draw as f64 * 0.3;
        let beta = 0.05 + (draw % 5) as f64 * 0.4;
        let yi = RfImage::from_vec(g, y.clone()).unwrap();
        let got = deconv_update(&yi, &psf, &w, &z, &l1, &l2, gd, beta).unwrap();
        let want = dense_u_update(&h, &y, &w, &z, &l1, &l2, gd, beta);
        assert!(rel_err(&got, &want) <= 1e-8, "draw {draw}: {}", rel_err(&got, &want));

        // stationarity of the sub-problem
        let hu = dense_matvec(&h, &got);
        let resid: Vec<f64> = hu.iter().zip(&y).map(|(a, b)| a - b).collect();
        let ht = dense_t_matvec(&h, &resid);
        let grad: Vec<f64> = (0..n)
            .map(|k| gd * ht[k] + beta * (2.0 * got[k] - w[k] - z[k]) + l1[k] + l2[k])
            .collect();
        assert!(norm(&grad) <= 1e-8 * (1.0 + norm(&y)));
    }
}

#[test]
fn u_update_without_data_term_is_the_average() {
    let g = grid(6, 5);
    let mut r = rng(8);
    let n = g.len();
    let (w, z, l1, l2) = (random_vec(&mut r, n), random_vec(&mut r, n), random_vec(&mut r, n), random_vec(&mut r, n));
    let y = RfImage::from_vec(g, random_vec(&mut r, n)).unwrap();
    let beta = 0.7;
    let got = deconv_update(&y, &random_psf(1, 3, 3), &w, &z, &l1, &l2, 0.0, beta).unwrap();
    for k in 0..n {
        let want = (w[k] + z[k]) / 2.0 - (l1[k] + l2[k]) / (2.0 * beta);
        assert!((got[k] - want).abs() < 1e-14);
    }
    assert!(deconv_update(&y, &Psf::identity(), &w, &z, &l1, &l2, 1.0, 0.0).is_err());
    assert!(deconv_update(&y, &Psf::identity(), &w[..3], &z, &l1, &l2, 1.0, 1.0).is_err());
}

#[test]
fn consistent_data_is_a_fixed_point() {
    let g = grid(10, 8);
    let psf = random_psf(4, 3, 3);
    let mut r = rng(12);
    let u = RfImage::from_vec(g, random_vec(&mut r, g.len())).unwrap();
    let y = conv_apply(&psf, &u, false).unwrap();
    let zeros = vec![0.0; g.len()];
    let got = deconv_update(&y, &psf, u.as_slice(), u.as_slice(), &zeros, &zeros, 2.0, 0.3).unwrap();
    assert!(rel_err(&got, u.as_slice()) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn circulant_adjoint_identity(seed in any::<u64>(), nz in 5usize..20, nx in 3usize..20, hz in 0usize..3, hx in 0usize..2) {
        let psf = random_psf(seed, 2 * hz + 1, 2 * hx + 1);
        let conv = Convolver::new(&psf, nz, nx).unwrap();
        let mut r = rng(seed ^ 0x5eed);
        let x = random_vec(&mut r, nz * nx);
        let y = random_vec(&mut r, nz * nx);
        let lhs = dot(&conv.apply(&x, false).unwrap(), &y);
        let rhs = dot(&x, &conv.apply(&y, true).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}
