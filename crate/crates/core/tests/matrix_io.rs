use ctmc_gradkit::ctmc_data::{rate_matrix_from_log_rates, simulate_endpoints, EndpointDataset};
use ctmc_gradkit::ensembles::SeededRng;
use ctmc_gradkit::error::Error;
use ctmc_gradkit::io::{format_matrix, parse_matrix, read_matrix_csv, write_matrix_csv};
use ctmc_gradkit::linalg::Matrix;
use ctmc_gradkit::phylo::{random_tree, ObservationMatrix};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn random_matrix_file_round_trip_is_exact() {
    let mut r = SeededRng::new(1, 0).rng();
    let m = Matrix::from_fn(8, 8, |_, _| r.random::<f64>() * 10f64.powi(r.random_range(-300..300)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_matrix_csv(&path, &m).unwrap();
    assert_eq!((read_matrix_csv(&path).unwrap() - &m).amax(), 0.0);
}

#[test]
fn ragged_and_garbled_rows_report_line() {
    assert_eq!(parse_matrix("1,2,3\n\n4,5\n").unwrap_err(), Error::Parse { position: 3, expected: "3 columns".into() });
    assert!(matches!(parse_matrix("1,2\n3,nan?\n"), Err(Error::Parse { position: 2, .. })));
}

#[test]
fn endpoint_dataset_round_trip() {
    let q = rate_matrix_from_log_rates(3, &[0.1, -0.4, 0.3, 0.0, -1.0, 0.5]).unwrap();
    let data = simulate_endpoints(&q, 0.7, 50, &mut SeededRng::new(2, 0).rng()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.csv");
    data.write_csv(&path).unwrap();
    assert_eq!(EndpointDataset::read_csv(&path, 3).unwrap(), data);
}

#[test]
fn leaf_observations_round_trip() {
    let mut r = SeededRng::new(3, 0).rng();
    let tree = random_tree(7, 0.5, &mut r).unwrap();
    let obs = ObservationMatrix::new(4, (0..7).map(|_| r.random_range(0..4)).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("leaves.csv");
    obs.write_csv(&path, &tree).unwrap();
    assert_eq!(ObservationMatrix::read_csv(&path, &tree, 4).unwrap(), obs);
}

proptest! {
    #[test]
    fn formatted_matrices_parse_back_exactly(
        rows in 1usize..6,
        cols in 1usize..6,
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 36),
    ) {
        let m = Matrix::from_fn(rows, cols, |i, j| values[i * cols + j]);
        prop_assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
    }
}
