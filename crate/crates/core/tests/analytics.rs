use gridopt::analytics::{
    fgls_fit, heteroscedastic, hvac_fixture, normalize_minmax, ols_fit, read_regression_csv, write_regression_csv,
    AnalyticsError, Method, RegressionData,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn design(d: &RegressionData) -> DMatrix<f64> {
    DMatrix::from_fn(d.rows(), d.x.len() + 1, |r, c| if c == 0 { 1.0 } else { d.x[c - 1][r] })
}

fn random_data(seed: u64, n: usize, k: usize) -> RegressionData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let y = (0..n)
        .map(|r| 0.5 + (0..k).map(|j| (j as f64 - 1.0) * x[j][r]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
        .collect();
    RegressionData::new(y, x).unwrap()
}

#[test]
fn ols_matches_the_pseudo_inverse() {
    for seed in 0..5 {
        let d = random_data(seed, 60, 4);
        let a = design(&d);
        let beta = a.clone().pseudo_inverse(1e-14).unwrap() * DVector::from_column_slice(&d.y);
        let fit = ols_fit(&d).unwrap();
        assert!((fit.intercept - beta[0]).abs() < 1e-10);
        for j in 0..4 {
            assert!((fit.coefficients[j] - beta[j + 1]).abs() < 1e-10, "{seed} {j}");
        }
        assert_eq!(fit.method, Method::Ols);
    }
}

#[test]
fn ols_residuals_are_orthogonal_to_the_columns() {
    let d = random_data(9, 200, 3);
    let fit = ols_fit(&d).unwrap();
    let resid: Vec<f64> = fit.predict(&d).iter().zip(&d.y).map(|(p, y)| y - p).collect();
    assert!(resid.iter().sum::<f64>().abs() < 1e-8);
    for c in &d.x {
        assert!(c.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-8);
    }
    assert!((fit.squared_error - resid.iter().map(|e| e * e).sum::<f64>()).abs() < 1e-9);
}

#[test]
fn response_orthogonal_to_the_design_gives_zero_coefficients() {
    let d = RegressionData::new(vec![1.0, 1.0, -1.0, -1.0], vec![vec![1.0, -1.0, 1.0, -1.0]]).unwrap();
    let fit = ols_fit(&d).unwrap();
    assert!(fit.intercept.abs() < 1e-15 && fit.coefficients[0].abs() < 1e-15);
}

#[test]
fn fgls_reduces_to_ols_without_heteroscedasticity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000;
    let x: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
    let y = (0..n).map(|r| 1.0 + 2.0 * x[0][r] - 3.0 * x[1][r] + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let d = RegressionData::new(y, x).unwrap();
    let (o, f) = (ols_fit(&d).unwrap(), fgls_fit(&d).unwrap());
    let diff: f64 = std::iter::once(o.intercept - f.intercept)
        .chain(o.coefficients.iter().zip(&f.coefficients).map(|(a, b)| a - b))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    assert!(diff < 0.02, "{diff}");
    assert!(f.weights.as_ref().unwrap().iter().all(|w| *w > 0.0));
    assert_eq!(f.method, Method::Fgls);
}

#[test]
fn fgls_tracks_the_true_line_better_under_heteroscedastic_noise() {
    let (d, _) = heteroscedastic(400, 1);
    let (test, clean) = heteroscedastic(2_000, 2);
    let err = |fit: &gridopt::analytics::RegressionFit| {
        fit.predict(&test).iter().zip(&clean).map(|(p, c)| (p - c).powi(2)).sum::<f64>()
    };
    let (o, f) = (ols_fit(&d).unwrap(), fgls_fit(&d).unwrap());
    assert!(err(&f) < err(&o));
    // in-sample the unweighted fit always has the smaller residual sum
    assert!(o.squared_error <= f.squared_error);
}

#[test]
fn hvac_fixture_points_at_the_second_duct_temperature() {
    let d = hvac_fixture(0);
    assert_eq!(d.x.len(), 5);
    for fit in [ols_fit(&d).unwrap(), fgls_fit(&d).unwrap(), fgls_fit(&normalize_minmax(&d)).unwrap()] {
        assert_eq!(fit.dominant(), "duct_temp_2");
    }
    assert_eq!(fgls_fit(&d).unwrap(), fgls_fit(&hvac_fixture(0)).unwrap());
}

#[test]
fn csv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reg.csv");
    let d = hvac_fixture(1);
    write_regression_csv(&d, &path).unwrap();
    assert_eq!(read_regression_csv(&path).unwrap(), d);
    std::fs::write(&path, "time,y,x1\n0,1,2\n").unwrap();
    assert!(matches!(read_regression_csv(&path), Err(AnalyticsError::Parse { row: 1, .. })));
    std::fs::write(&path, "t,y,x1\n0,1,2\n1,1\n").unwrap();
    assert!(matches!(read_regression_csv(&path), Err(AnalyticsError::Parse { row: 3, .. })));
    assert!(matches!(read_regression_csv(&dir.path().join("none.csv")), Err(AnalyticsError::Io { .. })));
    let json: serde_json::Value = serde_json::from_str(&fgls_fit(&d).unwrap().to_json()).unwrap();
    assert_eq!(json["method"], "FGLS");
}

proptest! {
    #[test]
    fn normalized_values_stay_in_the_unit_interval(cols in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 12), 1..4)) {
        let y = cols[0].clone();
        let d = RegressionData::new(y, cols).unwrap();
        let n = normalize_minmax(&d);
        for v in n.y.iter().chain(n.x.iter().flatten()) {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}
