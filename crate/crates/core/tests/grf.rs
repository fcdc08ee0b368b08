//! Prior samples against the dense covariance `A^-1 M M^T A^-T`.

use std::sync::Arc;

use nalgebra::DMatrix;
use operon_core::fem::{Mesh, NodalField};
use operon_core::grf::build_prior;
use operon_core::rng::rng_from_seed;

#[test]
fn nodal_variance_matches_dense_oracle() {
    let mesh = Arc::new(Mesh::new(8, 8, 1.0, 1.0).unwrap());
    let n = mesh.node_count();
    let prior = build_prior(mesh.clone(), 0.005, 1.0, 0.2, NodalField::zeros(&mesh, 1), 0).unwrap();

    let a = DMatrix::from_row_slice(n, n, &prior.operator().to_dense());
    let m = DMatrix::from_row_slice(n, n, &prior.mass().to_dense());
    let ainv = a.try_inverse().unwrap();
    let cov = &ainv * &m * m.transpose() * ainv.transpose();

    let samples = 20_000;
    let mut rng = rng_from_seed(17);
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for _ in 0..samples {
        let (w, _) = prior.sample(&mut rng).unwrap();
        for (i, v) in w.values().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    for i in 0..n {
        let mean = sum[i] / samples as f64;
        let var = sq[i] / samples as f64 - mean * mean;
        let rel = (var - cov[(i, i)]).abs() / cov[(i, i)];
        assert!(rel < 0.10, "node {i}: empirical {var}, oracle {}", cov[(i, i)]);
    }
}

#[test]
fn zero_noise_recovers_a_nonzero_mean_exactly() {
    let mesh = Arc::new(Mesh::new(6, 5, 2.0, 1.0).unwrap());
    let mean = NodalField::from_fn(&mesh, |x, y| x - 2.0 * y + 0.25);
    let prior = build_prior(mesh.clone(), 0.01, 1.0, 0.5, mean.clone(), 0).unwrap();
    let w = prior.field_from_noise(&vec![0.0; mesh.node_count()]).unwrap();
    assert_eq!(w, mean);
}
