mod common;

use common::*;
use proptest::prelude::*;
use pwjoint::acquisition::PlaneWaveTx;
use pwjoint::forward::{
    apodization_weight, build_or_load, build_system_matrix, propagation_delay, ApodizationSpec,
    SystemMatrix, Window,
};

#[test]
fn assembly_matches_triple_loop_exactly() {
    for (angle, window) in [
        (0.0, Window::Hanning),
        (0.0, Window::Rectangular),
        (0.15, Window::Hanning),
        (-0.1, Window::Rectangular),
    ] {
        let apod = ApodizationSpec {
            window,
            f_number: 0.5,
        };
        let phi = tiny_model(angle, apod);
        let oracle = triple_loop(angle, &apod);
        assert_eq!(phi.to_dense(), oracle, "angle {angle} {window:?}");
        assert!(phi.nnz() > 100);
    }
}

#[test]
fn stored_entries_respect_gate_and_weight_range() {
    let probe = tiny_probe();
    let grid = tiny_grid();
    let tx = PlaneWaveTx::new(0.1).unwrap();
    let phi = build_system_matrix(&probe, &grid, tx, TINY_SAMPLES, &ApodizationSpec::default()).unwrap();
    let m_len = TINY_SAMPLES;
    for r in 0..phi.num_rows() {
        let (n, m) = (r / m_len, r % m_len);
        let t = probe.sample_time(m);
        let (cols, vals) = phi.row(r);
        assert!(cols.windows(2).all(|w| w[0] < w[1]));
        for (&j, &v) in cols.iter().zip(vals) {
            let (iz, ix) = (j as usize % grid.nz, j as usize / grid.nz);
            let tau = propagation_delay((grid.z(iz), grid.x(ix)), probe.element_x(n), tx, probe.sound_speed);
            assert!((t - tau).abs() <= 1.0 / probe.sampling_freq);
            assert!(v > 0.0 && v <= 1.0);
        }
    }
}

#[test]
fn delay_examples() {
    let c = 1540.0;
    let tx0 = PlaneWaveTx::default();
    let z = 0.02;
    assert_eq!(propagation_delay((z, 0.0), 0.0, tx0, c), 2.0 * z / c);
    assert_eq!(propagation_delay((0.0, 3e-3), -1e-3, tx0, c), 4e-3 / c);

    let tx = PlaneWaveTx::new(0.1).unwrap();
    let expected = (0.02 * 0.1f64.cos() + 0.005 * 0.1f64.sin()) / c
        + (0.02f64.powi(2) + 0.01f64.powi(2)).sqrt() / c;
    let got = propagation_delay((0.02, 0.005), -0.005, tx, c);
    assert!((got - expected).abs() <= 1e-15 * expected);
    // 13.25 us transmit + 14.52 us receive
    assert!((got - 2.7766e-5).abs() < 1e-9, "{got}");
}

#[test]
fn apodization_examples() {
    let hann = ApodizationSpec::default();
    let z = 10e-3;
    let a = z / (2.0 * hann.f_number);
    for w in [Window::Rectangular, Window::Hanning, Window::Tukey { taper: 0.25 }] {
        let spec = ApodizationSpec { window: w, f_number: 0.5 };
        assert_eq!(apodization_weight((z, 1e-3), 1e-3, &spec, 0.0), 1.0);
        assert_eq!(apodization_weight((z, 1.5 * a), 0.0, &spec, 0.0), 0.0);
    }
    let half = apodization_weight((z, 0.5 * a), 0.0, &hann, 0.0);
    assert!((half - 0.5).abs() < 1e-15);
    assert_eq!(apodization_weight((0.0, 0.0), 0.0, &hann, 0.3e-3), 0.0);
    // aperture clamp near the surface
    assert!(apodization_weight((1e-5, 0.2e-3), 0.0, &hann, 0.3e-3) > 0.0);
    // tukey: flat top then cosine taper, hanning at taper 1
    let tk = |taper, d| Window::Tukey { taper }.eval(d);
    assert_eq!(tk(0.25, 0.7), 1.0);
    assert!((tk(0.25, 0.875) - 0.5).abs() < 1e-12);
    assert!((tk(1.0, 0.3) - Window::Hanning.eval(0.3)).abs() < 1e-12);
}

#[test]
fn forward_and_adjoint_match_dense_products() {
    let phi = tiny_model(0.05, ApodizationSpec::default());
    let dense = phi.to_dense();
    let mut r = rng(7);
    for _ in 0..10 {
        let x = random_vec(&mut r, phi.num_cols());
        let y = random_vec(&mut r, phi.num_rows());
        assert!(rel_err(&phi.apply_forward(&x).unwrap(), &dense_matvec(&dense, &x)) <= 1e-12);
        assert!(rel_err(&phi.apply_adjoint(&y).unwrap(), &dense_t_matvec(&dense, &y)) <= 1e-12);
    }
}

#[test]
fn basis_vectors_extract_columns_and_rows() {
    let phi = tiny_model(0.0, ApodizationSpec::default());
    let dense = phi.to_dense();
    assert!(phi.apply_forward(&vec![0.0; phi.num_cols()]).unwrap().iter().all(|&v| v == 0.0));
    assert!(phi.apply_adjoint(&vec![0.0; phi.num_rows()]).unwrap().iter().all(|&v| v == 0.0));
    for j in [0, 37, 128, 255] {
        let mut e = vec![0.0; phi.num_cols()];
        e[j] = 1.0;
        let col: Vec<f64> = dense.iter().map(|row| row[j]).collect();
        assert_eq!(phi.apply_forward(&e).unwrap(), col);
    }
    for r in [0, 100, 300, 511] {
        let mut e = vec![0.0; phi.num_rows()];
        e[r] = 1.0;
        assert_eq!(phi.apply_adjoint(&e).unwrap(), dense[r]);
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let phi = tiny_model(0.0, ApodizationSpec::default());
    assert!(phi.apply_forward(&[1.0; 3]).is_err());
    assert!(phi.apply_adjoint(&[1.0; 3]).is_err());
}

#[test]
fn invalid_geometry_is_rejected() {
    let probe = tiny_probe();
    let grid = tiny_grid();
    let tx = PlaneWaveTx::default();
    assert!(build_system_matrix(&probe, &grid, tx, 0, &ApodizationSpec::default()).is_err());
    let mut bad = probe;
    bad.num_elements = 0;
    assert!(build_system_matrix(&bad, &grid, tx, 8, &ApodizationSpec::default()).is_err());
    let mut empty = grid;
    empty.nz = 0;
    assert!(build_system_matrix(&probe, &empty, tx, 8, &ApodizationSpec::default()).is_err());
}

#[test]
fn assembly_is_deterministic_and_sparse() {
    let a = tiny_model(0.1, ApodizationSpec::default());
    let b = tiny_model(0.1, ApodizationSpec::default());
    assert_eq!(a, b);
    assert_eq!(a.fingerprint(), b.fingerprint());
    let fill = a.nnz() as f64 / (a.num_rows() * a.num_cols()) as f64;
    assert!(fill < 0.05, "fill {fill}");
}

#[test]
fn non_square_models_are_supported() {
    let probe = tiny_probe();
    let grid = tiny_grid();
    for m in [16, 64, 200] {
        let phi = build_system_matrix(&probe, &grid, PlaneWaveTx::default(), m, &ApodizationSpec::default()).unwrap();
        assert_eq!(phi.num_rows(), m * probe.num_elements);
        assert_eq!(phi.num_cols(), 256);
    }
}

#[test]
fn cache_round_trip_and_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let probe = tiny_probe();
    let grid = tiny_grid();
    let tx = PlaneWaveTx::new(0.05).unwrap();
    let apod = ApodizationSpec::default();
    let a = build_or_load(&probe, &grid, tx, TINY_SAMPLES, &apod, Some(dir.path())).unwrap();
    let path = dir.path().join(format!("phi-{}.usjm", a.fingerprint()));
    assert!(path.exists());
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"USJM");
    let b = SystemMatrix::read_cache(&path).unwrap();
    assert_eq!(a, b);
    let c = build_or_load(&probe, &grid, tx, TINY_SAMPLES, &apod, Some(dir.path())).unwrap();
    assert_eq!(a, c);

    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(SystemMatrix::read_cache(&path), Err(pwjoint::Error::Truncated { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(SystemMatrix::read_cache(&path), Err(pwjoint::Error::BadMagic { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn adjoint_identity(seed in any::<u64>()) {
        thread_local! {
            static PHI: SystemMatrix = tiny_model(0.08, ApodizationSpec::default());
        }
        PHI.with(|phi| {
            let mut r = rng(seed);
            let x = random_vec(&mut r, phi.num_cols());
            let y = random_vec(&mut r, phi.num_rows());
            let lhs = dot(&phi.apply_forward(&x).unwrap(), &y);
            let rhs = dot(&x, &phi.apply_adjoint(&y).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-12));
            Ok(())
        })?;
    }
}
