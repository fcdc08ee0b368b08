//! Gaussian random field prior with covariance `(a_c K(b_c) + c_c M)^-2`,
//! sampled by solving an elliptic problem against nodal white noise.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_mass, assemble_stiffness, solve_spd, Mesh, NodalField, SparseOperator};

/// Diffusion coefficient of the prior operator.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionCoeff {
    Constant(f64),
    Field(NodalField),
}

impl From<f64> for DiffusionCoeff {
    fn from(v: f64) -> Self {
        DiffusionCoeff::Constant(v)
    }
}

#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mesh: Arc<Mesh>,
    a_c: f64,
    b_c: DiffusionCoeff,
    c_c: f64,
    a: SparseOperator,
    mass: SparseOperator,
    mean: NodalField,
    seed: u64,
}

/// Builds the prior operator `A = a_c K(b_c) + c_c M` and checks it is positive definite.
pub fn build_prior(
    mesh: Arc<Mesh>,
    a_c: f64,
    b_c: impl Into<DiffusionCoeff>,
    c_c: f64,
    mean: NodalField,
    seed: u64,
) -> Result<GaussianPrior> {
    let b_c = b_c.into();
    if !(a_c >= 0.0 && c_c >= 0.0) || !(a_c > 0.0 || c_c > 0.0) {
        return Err(Error::InvalidConfiguration(format!(
            "prior needs a_c >= 0, c_c >= 0 and one of them positive (a_c = {a_c}, c_c = {c_c})"
        )));
    }
    mean.check(&mesh, 1).map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
    let coeff = match &b_c {
        DiffusionCoeff::Constant(v) => {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidConfiguration(format!("b_c must be nonnegative, got {v}")));
            }
            NodalField::constant(&mesh, *v)
        }
        DiffusionCoeff::Field(f) => {
            f.check(&mesh, 1).map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
            if f.values().iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidConfiguration("b_c field has negative values".into()));
            }
            f.clone()
        }
    };
    let mass = assemble_mass(&mesh);
    let stiff = assemble_stiffness(&mesh, &coeff)?;
    let a = stiff.linear_combination(a_c, &mass, c_c)?;
    // A probe solve exposes indefiniteness as a CG breakdown.
    let probe = vec![1.0; a.dim()];
    match solve_spd(&a, &probe) {
        Ok(_) => {}
        Err(Error::NotPositiveDefinite { iteration }) => {
            return Err(Error::InvalidConfiguration(format!(
                "prior operator is not positive definite (breakdown at iteration {iteration})"
            )))
        }
        Err(e) => return Err(e),
    }
    Ok(GaussianPrior { mesh, a_c, b_c, c_c, a, mass, mean, seed })
}

impl GaussianPrior {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }
    pub fn a_c(&self) -> f64 {
        self.a_c
    }
    pub fn b_c(&self) -> &DiffusionCoeff {
        &self.b_c
    }
    pub fn c_c(&self) -> f64 {
        self.c_c
    }
    pub fn operator(&self) -> &SparseOperator {
        &self.a
    }
    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }
    pub fn mean(&self) -> &NodalField {
        &self.mean
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn dim(&self) -> usize {
        self.mesh.node_count()
    }

    /// Fluctuation `v` solving `A v = M s`.
    pub fn fluctuation(&self, s: &[f64]) -> Result<Vec<f64>> {
        let rhs = self.mass.matvec(s)?;
        solve_spd(&self.a, &rhs)
    }

    /// Field `mean + v(s)` for a given noise vector.
    pub fn field_from_noise(&self, s: &[f64]) -> Result<NodalField> {
        let v = self.fluctuation(s)?;
        let w = self.mean.values().iter().zip(&v).map(|(m, v)| m + v).collect();
        NodalField::scalar(w)
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Draws a prior sample, returning the field and the noise that produced it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(NodalField, Vec<f64>)> {
        let s = self.draw_noise(rng);
        Ok((self.field_from_noise(&s)?, s))
    }

    /// `-sᵀ M s / 2`, the prior log density up to a constant.
    pub fn log_prior(&self, s: &[f64]) -> Result<f64> {
        Ok(-0.5 * self.mass.quadratic_form(s)?)
    }
}

/// Constants of the pointwise map `m = alpha_m exp(w) + beta_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub alpha_m: f64,
    pub beta_m: f64,
}

impl TransformParams {
    pub fn new(alpha_m: f64, beta_m: f64) -> Result<Self> {
        if !(alpha_m > 0.0 && beta_m >= 0.0 && alpha_m.is_finite() && beta_m.is_finite()) {
            return Err(Error::invalid(format!(
                "transform needs alpha_m > 0 and beta_m >= 0, got {alpha_m}, {beta_m}"
            )));
        }
        Ok(Self { alpha_m, beta_m })
    }
}

/// Largest exponent accepted by [`transform_lognormal`].
pub const MAX_EXPONENT: f64 = 700.0;

pub fn transform_lognormal(w: &NodalField, p: TransformParams) -> Result<NodalField> {
    if w.components() != 1 {
        return Err(Error::invalid("lognormal transform expects a scalar field"));
    }
    if let Some(v) = w.values().iter().find(|&&v| v > MAX_EXPONENT) {
        return Err(Error::Range(format!("exp({v}) overflows the parameter transform")));
    }
    NodalField::scalar(w.values().iter().map(|&v| p.alpha_m * v.exp() + p.beta_m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn desk_prior(n: usize) -> GaussianPrior {
        let mesh = Arc::new(Mesh::new(n, n, 1.0, 1.0).unwrap());
        let mean = NodalField::constant(&mesh, 0.0);
        build_prior(mesh, 0.005, 1.0, 0.2, mean, 1).unwrap()
    }

    #[test]
    fn zero_noise_returns_mean() {
        let mesh = Arc::new(Mesh::new(6, 6, 1.0, 1.0).unwrap());
        let mean = NodalField::from_fn(&mesh, |x, y| x - y);
        let p = build_prior(mesh.clone(), 0.01, 1.0, 0.2, mean.clone(), 0).unwrap();
        let w = p.field_from_noise(&vec![0.0; mesh.node_count()]).unwrap();
        assert_eq!(w, mean);
    }

    #[test]
    fn pure_mass_operator() {
        let mesh = Arc::new(Mesh::new(4, 3, 1.0, 1.0).unwrap());
        let p = build_prior(mesh.clone(), 0.0, 1.0, 1.0, NodalField::constant(&mesh, 0.0), 0).unwrap();
        assert_eq!(p.operator(), p.mass());
    }

    #[test]
    fn spatially_varying_coefficient_builds() {
        let mesh = Arc::new(Mesh::new(8, 8, 1.0, 1.0).unwrap());
        let b = NodalField::from_fn(&mesh, |x, y| 1.0 + 0.5 * (3.0 * x).sin() * y);
        let p = build_prior(mesh.clone(), 0.01, DiffusionCoeff::Field(b), 0.2, NodalField::constant(&mesh, 0.0), 2);
        assert!(p.is_ok());
    }

    #[test]
    fn invalid_coefficients_rejected() {
        let mesh = Arc::new(Mesh::new(3, 3, 1.0, 1.0).unwrap());
        let zero = NodalField::constant(&mesh, 0.0);
        for (a, b, c) in [(0.0, 1.0, 0.0), (-1.0, 1.0, 0.2), (0.01, -1.0, 0.2)] {
            assert!(matches!(
                build_prior(mesh.clone(), a, b, c, zero.clone(), 0),
                Err(Error::InvalidConfiguration(_))
            ));
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let p = desk_prior(5);
        let (w1, _) = p.sample(&mut rng_from_seed(9)).unwrap();
        let (w2, _) = p.sample(&mut rng_from_seed(9)).unwrap();
        assert_eq!(w1.values(), w2.values());
    }

    #[test]
    fn fluctuation_is_linear_in_noise() {
        let p = desk_prior(6);
        let mut rng = rng_from_seed(4);
        let s1 = p.draw_noise(&mut rng);
        let s2 = p.draw_noise(&mut rng);
        let sum: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
        let (v1, v2, v12) = (p.fluctuation(&s1).unwrap(), p.fluctuation(&s2).unwrap(), p.fluctuation(&sum).unwrap());
        let scale = crate::matrix::norm2(&v12);
        for i in 0..v1.len() {
            assert!((v1[i] + v2[i] - v12[i]).abs() < 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn log_prior_quadratic_form() {
        let p = desk_prior(4);
        let n = p.dim();
        assert_eq!(p.log_prior(&vec![0.0; n]).unwrap(), 0.0);
        let mut e = vec![0.0; n];
        e[7] = 1.0;
        assert_eq!(p.log_prior(&e).unwrap(), -0.5 * p.mass().get(7, 7));
        let s = p.draw_noise(&mut rng_from_seed(5));
        let dense = p.mass().to_dense();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += s[i] * dense[i * n + j] * s[j];
            }
        }
        assert!((p.log_prior(&s).unwrap() + 0.5 * q).abs() < 1e-12 * q.abs().max(1.0));
    }

    #[test]
    fn transform_values() {
        let mesh = Mesh::new(2, 2, 1.0, 1.0).unwrap();
        let w = NodalField::constant(&mesh, 0.0);
        let m = transform_lognormal(&w, TransformParams::new(1.0, 0.0).unwrap()).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
        let e = transform_lognormal(&w, TransformParams::new(100.0, 1000.0).unwrap()).unwrap();
        assert!(e.values().iter().all(|&v| v == 1100.0));
        let big = NodalField::constant(&mesh, 701.0);
        assert!(matches!(transform_lognormal(&big, TransformParams::new(1.0, 0.0).unwrap()), Err(Error::Range(_))));
        assert!(TransformParams::new(0.0, 1.0).is_err());
        assert!(TransformParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn transform_monotone_and_bounded_below() {
        let p = TransformParams::new(2.0, 3.0).unwrap();
        let w = NodalField::scalar(vec![-5.0, -1.0, 0.0, 0.5, 2.0]).unwrap();
        let m = transform_lognormal(&w, p).unwrap();
        assert!(m.values().windows(2).all(|v| v[0] < v[1]));
        assert!(m.values().iter().all(|&v| v >= 3.0));
    }
}
