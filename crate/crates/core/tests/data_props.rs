use deepmri::data::{self, Dtype};
use deepmri::{SampleMatrix, VolumeGeometry};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix_strategy() -> impl Strategy<Value = SampleMatrix> {
    (2usize..12, 1usize..12).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1e3f64..1e3, r * c).prop_map(move |v| {
            SampleMatrix::new(Array2::from_shape_vec((r, c), v).unwrap()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f32_round_trip_equals_single_precision_rounding(m in matrix_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mat");
        data::save_matrix(&m, &path).unwrap();
        let back = data::load_matrix(&path).unwrap();
        prop_assert_eq!(back.values().dim(), m.values().dim());
        for (a, b) in back.values().iter().zip(m.values()) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn f64_round_trip_is_exact_and_keeps_geometry(m in matrix_strategy()) {
        let cols = m.cols();
        let mask: Vec<usize> = (0..cols).map(|j| 2 * j).collect();
        let m = m.with_geometry(VolumeGeometry::new((cols, 2, 1), mask).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mat");
        data::save_matrix_as(&m, &path, Dtype::F64).unwrap();
        let back = data::load_matrix(&path).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn labels_round_trip(ls in prop::collection::vec(0usize..100, 0..50)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        data::save_labels(&ls, &path).unwrap();
        prop_assert_eq!(data::load_labels(&path).unwrap(), ls);
    }

    #[test]
    fn zscore_gives_zero_mean_unit_variance(m in matrix_strategy()) {
        let z = data::zscore_voxels(&m).unwrap();
        let n = z.rows() as f64;
        for (zc, mc) in z.values().columns().into_iter().zip(m.values().columns()) {
            let spread = mc.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - mc.iter().copied().fold(f64::INFINITY, f64::min);
            let mean = zc.sum() / n;
            let var = zc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            if spread > 1e-6 {
                prop_assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mask_keeps_columns_at_or_above_the_grand_mean(m in matrix_strategy()) {
        let (reduced, keep) = data::mask_below_mean(&m).unwrap();
        let means: Vec<f64> = m.values().columns().into_iter().map(|c| c.sum() / c.len() as f64).collect();
        let grand = means.iter().sum::<f64>() / means.len() as f64;
        prop_assert!(!keep.is_empty());
        prop_assert_eq!(reduced.cols(), keep.len());
        for (j, &mean) in means.iter().enumerate() {
            let tol = 1e-9 * grand.abs().max(1.0);
            if mean > grand + tol {
                prop_assert!(keep.contains(&j));
            } else if mean < grand - tol {
                prop_assert!(!keep.contains(&j));
            }
        }
    }
}

#[test]
fn corrupted_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.mat");
    std::fs::write(&path, b"NOT-A-MATRIX 1\n").unwrap();
    assert!(data::load_matrix(&path).is_err());

    let m = SampleMatrix::new(Array2::ones((3, 2))).unwrap();
    data::save_matrix(&m, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&path, bytes).unwrap();
    assert!(data::load_matrix(&path).is_err());
}
