use std::path::Path;

use pwjoint::picmus::{ingest_picmus, PicmusSelection};
use pwjoint::Error;

#[test]
fn missing_file_explains_where_to_get_it() {
    let err = ingest_picmus(Path::new("/nonexistent/picmus/carotid.hdf5"), PicmusSelection::default())
        .unwrap_err();
    assert!(matches!(err, Error::DatasetNotFound { .. }));
    let msg = err.to_string();
    assert!(msg.contains("carotid.hdf5") && msg.contains("download"), "{msg}");
}

#[cfg(not(feature = "picmus"))]
#[test]
fn reader_needs_the_feature() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.hdf5");
    std::fs::write(&p, b"not really").unwrap();
    let err = ingest_picmus(&p, PicmusSelection::default()).unwrap_err();
    assert!(err.to_string().contains("picmus"), "{err}");
}

#[cfg(feature = "picmus")]
mod with_hdf5 {
    use super::*;
    use hdf5_metno as hdf5;

    const NA: usize = 3;
    const NC: usize = 4;
    const M: usize = 10;

    fn write_file(path: &Path, modulation: f64) {
        let f = hdf5::File::create(path).unwrap();
        let g = f.create_group("US").unwrap().create_group("US_DATASET0000").unwrap();
        let put = |name: &str, v: &[f64], shape: &[usize]| {
            g.new_dataset::<f64>()
                .shape(shape)
                .create(name)
                .unwrap()
                .write_raw(v)
                .unwrap();
        };
        put("angles", &[-0.1, 0.0, 0.1], &[NA]);
        put("sampling_frequency", &[20.832e6], &[1]);
        put("modulation_frequency", &[modulation], &[1]);
        put("sound_speed", &[1540.0], &[1]);
        put("initial_time", &[1e-6], &[1]);
        put("center_frequency", &[5.208e6], &[1]);
        let xs = [-0.45e-3, -0.15e-3, 0.15e-3, 0.45e-3];
        let mut geom = xs.to_vec();
        geom.extend([0.0; NC]);
        geom.extend([0.0; NC]);
        put("probe_geometry", &geom, &[3, NC]);
        let data = g.create_group("data").unwrap();
        let rf: Vec<f64> = (0..NA * NC * M).map(|k| k as f64).collect();
        data.new_dataset::<f64>()
            .shape([NA, NC, M])
            .create("real")
            .unwrap()
            .write_raw(&rf)
            .unwrap();
    }

    #[test]
    fn reads_rf_for_one_transmit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sim.hdf5");
        write_file(&p, 0.0);
        let (ch, probe) = ingest_picmus(&p, PicmusSelection::default()).unwrap();
        assert_eq!(probe.num_elements, NC);
        assert!((probe.pitch - 0.3e-3).abs() < 1e-12);
        assert_eq!(probe.t0_offset, 1e-6);
        assert_eq!(ch.tx.angle, 0.0);
        assert_eq!(ch.num_samples, M);
        // angle 1, channel 2 starts at (1*NC + 2)*M
        assert_eq!(ch.trace(2)[0], ((NC + 2) * M) as f64);
    }

    #[test]
    fn rejects_iq_and_mismatched_rate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("iq.hdf5");
        write_file(&p, 5.2e6);
        assert!(ingest_picmus(&p, PicmusSelection::default()).is_err());

        let q = dir.path().join("rf.hdf5");
        write_file(&q, 0.0);
        let sel = PicmusSelection {
            angle_index: Some(0),
            expected_fs: Some(40e6),
        };
        assert!(matches!(ingest_picmus(&q, sel), Err(Error::Inconsistent(_))));
        let bad = PicmusSelection {
            angle_index: Some(7),
            expected_fs: None,
        };
        assert!(ingest_picmus(&q, bad).is_err());
    }
}
