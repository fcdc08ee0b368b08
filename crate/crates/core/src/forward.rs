//! Parametric forward maps `m -> u` for the two model problems.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_elasticity_stiffness, assemble_stiffness, edge_load, load_vector, solve_constrained, Edge, Mesh,
    NodalField, BOUNDARY_TOL,
};
use crate::grf::{transform_lognormal, GaussianPrior, TransformParams};

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
/// Returns the prescribed value at a boundary node, or `None` if the node is free.
pub type ScalarDirichlet = Arc<dyn Fn(f64, f64) -> Option<f64> + Send + Sync>;
pub type VectorDirichlet = Arc<dyn Fn(f64, f64) -> Option<[f64; 2]> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Problem {
    #[serde(rename = "poisson")]
    Poisson,
    #[serde(rename = "linear_elasticity")]
    LinearElasticity,
}

impl Problem {
    pub fn tag(self) -> &'static str {
        match self {
            Problem::Poisson => "poisson",
            Problem::LinearElasticity => "linear_elasticity",
        }
    }

    pub fn components(self) -> usize {
        match self {
            Problem::Poisson => 1,
            Problem::LinearElasticity => 2,
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Problem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(Problem::Poisson),
            "linear_elasticity" | "elasticity" => Ok(Problem::LinearElasticity),
            other => Err(Error::invalid(format!("unknown problem '{other}' (expected poisson or linear_elasticity)"))),
        }
    }
}

/// Named load cases; there is deliberately no expression language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoadPreset {
    /// The reference boundary data of each problem.
    #[default]
    Standard,
    /// All loads zero.
    Zero,
    /// Poisson only: `f = 2π² sin(πx1) sin(πx2)` with `u = 0` on the whole boundary.
    Manufactured,
}

impl FromStr for LoadPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(LoadPreset::Standard),
            "zero" => Ok(LoadPreset::Zero),
            "manufactured" => Ok(LoadPreset::Manufactured),
            other => Err(Error::invalid(format!("unknown load preset '{other}'"))),
        }
    }
}

fn dirichlet_dofs(mesh: &Mesh, components: usize, value: impl Fn(f64, f64) -> Option<[f64; 2]>) -> (Vec<usize>, Vec<f64>) {
    let n = mesh.node_count();
    let mut dofs = Vec::new();
    let mut vals = Vec::new();
    for c in 0..components {
        for (i, (p, flags)) in mesh.nodes().iter().zip(mesh.boundary()).enumerate() {
            if !flags.any() {
                continue;
            }
            if let Some(g) = value(p[0], p[1]) {
                dofs.push(c * n + i);
                vals.push(g[c]);
            }
        }
    }
    (dofs, vals)
}

fn check_positive(m: &NodalField, what: &str) -> Result<()> {
    if let Some(v) = m.values().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::invalid(format!("{what} must be positive everywhere, found {v}")));
    }
    Ok(())
}

/// `-div(m grad u) = f` with flux `q` on the right edge and Dirichlet data elsewhere.
#[derive(Clone)]
pub struct PoissonConfig {
    pub mesh: Arc<Mesh>,
    pub source: ScalarFn,
    pub flux: ScalarFn,
    pub dirichlet: ScalarDirichlet,
}

impl PoissonConfig {
    /// Source `1000 (1 - x2) x2 (1 - x1)²`, flux `50 sin(5π x2)` on `x1 = L1`,
    /// and `u = 0` on every boundary point with `x1 < L1`.
    pub fn standard(mesh: Arc<Mesh>) -> Self {
        let l1 = mesh.l1();
        Self {
            mesh,
            source: Arc::new(|x, y| 1000.0 * (1.0 - y) * y * (1.0 - x) * (1.0 - x)),
            flux: Arc::new(|_, y| 50.0 * (5.0 * PI * y).sin()),
            dirichlet: Arc::new(move |x, _| (x < l1 - BOUNDARY_TOL).then_some(0.0)),
        }
    }

    pub fn with_preset(mesh: Arc<Mesh>, preset: LoadPreset) -> Self {
        let mut cfg = Self::standard(mesh);
        match preset {
            LoadPreset::Standard => {}
            LoadPreset::Zero => {
                cfg.source = Arc::new(|_, _| 0.0);
                cfg.flux = Arc::new(|_, _| 0.0);
            }
            LoadPreset::Manufactured => {
                cfg.source = Arc::new(|x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin());
                cfg.flux = Arc::new(|_, _| 0.0);
                cfg.dirichlet = Arc::new(|_, _| Some(0.0));
            }
        }
        cfg
    }
}

pub fn poisson_solve(cfg: &PoissonConfig, m: &NodalField) -> Result<NodalField> {
    let mesh = &cfg.mesh;
    m.check(mesh, 1)?;
    check_positive(m, "diffusivity")?;
    let k = assemble_stiffness(mesh, m)?;
    let mut rhs = load_vector(mesh, &*cfg.source);
    for (r, q) in rhs.iter_mut().zip(edge_load(mesh, Edge::Right, &*cfg.flux)) {
        *r += q;
    }
    let (dofs, vals) = dirichlet_dofs(mesh, 1, |x, y| (cfg.dirichlet)(x, y).map(|g| [g, 0.0]));
    NodalField::scalar(solve_constrained(k, rhs, &dofs, &vals)?)
}

/// Default Poisson ratio of the elasticity problem.
pub const DEFAULT_NU: f64 = 0.25;

/// Plane-strain elasticity clamped on the left edge and loaded by a traction on the right edge.
#[derive(Clone)]
pub struct ElasticityConfig {
    pub mesh: Arc<Mesh>,
    pub nu: f64,
    pub body_force: VectorFn,
    pub traction: VectorFn,
    pub clamp: VectorDirichlet,
}

impl ElasticityConfig {
    /// Zero body force, traction `(0, 10)` on `x1 = L1`, `u = 0` on `x1 = 0`.
    pub fn standard(mesh: Arc<Mesh>) -> Self {
        Self {
            mesh,
            nu: DEFAULT_NU,
            body_force: Arc::new(|_, _| [0.0, 0.0]),
            traction: Arc::new(|_, _| [0.0, 10.0]),
            clamp: Arc::new(|x, _| (x.abs() < BOUNDARY_TOL).then_some([0.0, 0.0])),
        }
    }

    pub fn with_preset(mesh: Arc<Mesh>, preset: LoadPreset) -> Result<Self> {
        let mut cfg = Self::standard(mesh);
        match preset {
            LoadPreset::Standard => {}
            LoadPreset::Zero => cfg.traction = Arc::new(|_, _| [0.0, 0.0]),
            LoadPreset::Manufactured => {
                return Err(Error::invalid("the manufactured preset applies to the Poisson problem only"))
            }
        }
        Ok(cfg)
    }
}

pub fn elasticity_solve(cfg: &ElasticityConfig, youngs: &NodalField) -> Result<NodalField> {
    let mesh = &cfg.mesh;
    youngs.check(mesh, 1)?;
    check_positive(youngs, "Young's modulus")?;
    let n = mesh.node_count();
    let k = assemble_elasticity_stiffness(mesh, youngs, cfg.nu)?;
    let mut rhs = vec![0.0; 2 * n];
    for c in 0..2 {
        let body = load_vector(mesh, &|x, y| (cfg.body_force)(x, y)[c]);
        let trac = edge_load(mesh, Edge::Right, &|x, y| (cfg.traction)(x, y)[c]);
        for i in 0..n {
            rhs[c * n + i] = body[i] + trac[i];
        }
    }
    let (dofs, vals) = dirichlet_dofs(mesh, 2, |x, y| (cfg.clamp)(x, y));
    NodalField::new(solve_constrained(k, rhs, &dofs, &vals)?, 2)
}

/// A parameter-to-state map together with its prior and parameter transform.
pub trait ForwardModel: Send + Sync {
    fn problem(&self) -> Problem;
    fn mesh(&self) -> &Arc<Mesh>;
    fn prior(&self) -> &GaussianPrior;
    fn transform(&self) -> TransformParams;

    /// Solves for the physical parameter field `m`.
    fn solve(&self, m: &NodalField) -> Result<NodalField>;

    fn components(&self) -> usize {
        self.problem().components()
    }

    /// Solves for `m`, or for `transform(w)` when `transform` is set.
    fn solve_fwd(&self, input: &NodalField, transform: bool) -> Result<NodalField> {
        if transform {
            self.solve(&transform_lognormal(input, self.transform())?)
        } else {
            self.solve(input)
        }
    }

    /// Draws `w` from the prior, returning `transform(w)` when `transform` is set.
    fn sample_prior(&self, rng: &mut dyn rand::RngCore, transform: bool) -> Result<NodalField> {
        let (w, _) = self.prior().sample(rng)?;
        if transform {
            transform_lognormal(&w, self.transform())
        } else {
            Ok(w)
        }
    }
}

pub struct PoissonModel {
    pub config: PoissonConfig,
    pub prior: GaussianPrior,
    pub transform: TransformParams,
}

impl ForwardModel for PoissonModel {
    fn problem(&self) -> Problem {
        Problem::Poisson
    }
    fn mesh(&self) -> &Arc<Mesh> {
        &self.config.mesh
    }
    fn prior(&self) -> &GaussianPrior {
        &self.prior
    }
    fn transform(&self) -> TransformParams {
        self.transform
    }
    fn solve(&self, m: &NodalField) -> Result<NodalField> {
        poisson_solve(&self.config, m)
    }
}

pub struct ElasticityModel {
    pub config: ElasticityConfig,
    pub prior: GaussianPrior,
    pub transform: TransformParams,
}

impl ForwardModel for ElasticityModel {
    fn problem(&self) -> Problem {
        Problem::LinearElasticity
    }
    fn mesh(&self) -> &Arc<Mesh> {
        &self.config.mesh
    }
    fn prior(&self) -> &GaussianPrior {
        &self.prior
    }
    fn transform(&self) -> TransformParams {
        self.transform
    }
    fn solve(&self, m: &NodalField) -> Result<NodalField> {
        elasticity_solve(&self.config, m)
    }
}

/// Builds the forward model for `problem` with the given load preset.
pub fn build_forward_model(
    problem: Problem,
    prior: GaussianPrior,
    transform: TransformParams,
    preset: LoadPreset,
) -> Result<Box<dyn ForwardModel>> {
    let mesh = prior.mesh().clone();
    Ok(match problem {
        Problem::Poisson => Box::new(PoissonModel { config: PoissonConfig::with_preset(mesh, preset), prior, transform }),
        Problem::LinearElasticity => {
            Box::new(ElasticityModel { config: ElasticityConfig::with_preset(mesh, preset)?, prior, transform })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::build_prior;

    fn mesh(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::new(n, n, 1.0, 1.0).unwrap())
    }

    fn prior(mesh: &Arc<Mesh>) -> GaussianPrior {
        build_prior(mesh.clone(), 0.005, 1.0, 0.2, NodalField::constant(mesh, 0.0), 0).unwrap()
    }

    #[test]
    fn problem_tags_round_trip() {
        for p in [Problem::Poisson, Problem::LinearElasticity] {
            assert_eq!(p.tag().parse::<Problem>().unwrap(), p);
        }
        assert!("heat".parse::<Problem>().is_err());
    }

    #[test]
    fn zero_loads_give_zero_state() {
        let mesh = mesh(6);
        let m = NodalField::constant(&mesh, 1.0);
        let u = poisson_solve(&PoissonConfig::with_preset(mesh.clone(), LoadPreset::Zero), &m).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        let cfg = ElasticityConfig::with_preset(mesh.clone(), LoadPreset::Zero).unwrap();
        let u = elasticity_solve(&cfg, &NodalField::constant(&mesh, 1.0)).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standard_poisson_boundary_behaviour() {
        let mesh = mesh(10);
        let u = poisson_solve(&PoissonConfig::standard(mesh.clone()), &NodalField::constant(&mesh, 1.0)).unwrap();
        let mut right_max: f64 = 0.0;
        for (i, (p, f)) in mesh.nodes().iter().zip(mesh.boundary()).enumerate() {
            assert!(u.values()[i].is_finite());
            if f.any() && p[0] < 1.0 - 1e-10 {
                assert_eq!(u.values()[i], 0.0);
            }
            if f.right() {
                right_max = right_max.max(u.values()[i].abs());
            }
        }
        assert!(right_max > 0.0);
    }

    #[test]
    fn rejects_nonpositive_parameter() {
        let mesh = mesh(3);
        let mut v = vec![1.0; mesh.node_count()];
        v[4] = 0.0;
        let m = NodalField::scalar(v).unwrap();
        assert!(poisson_solve(&PoissonConfig::standard(mesh.clone()), &m).is_err());
        assert!(elasticity_solve(&ElasticityConfig::standard(mesh.clone()), &m).is_err());
    }

    #[test]
    fn poisson_linear_in_loads() {
        let mesh = mesh(8);
        let m = NodalField::from_fn(&mesh, |x, y| 1.0 + x * y);
        let mut a = PoissonConfig::standard(mesh.clone());
        a.flux = Arc::new(|_, _| 0.0);
        let mut b = PoissonConfig::standard(mesh.clone());
        b.source = Arc::new(|x, _| (4.0 * x).cos());
        let mut ab = PoissonConfig::standard(mesh.clone());
        ab.source = Arc::new(|x, y| 1000.0 * (1.0 - y) * y * (1.0 - x) * (1.0 - x) + (4.0 * x).cos());
        let (ua, ub, uab) = (poisson_solve(&a, &m).unwrap(), poisson_solve(&b, &m).unwrap(), poisson_solve(&ab, &m).unwrap());
        let scale = crate::matrix::norm2(uab.values());
        for i in 0..mesh.node_count() {
            assert!((ua.values()[i] + ub.values()[i] - uab.values()[i]).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn poisson_homogeneity() {
        let mesh = mesh(8);
        let c = 2.5;
        let m = NodalField::from_fn(&mesh, |x, y| 1.0 + x + y * y);
        let cm = NodalField::from_fn(&mesh, |x, y| c * (1.0 + x + y * y));
        let u_cm = poisson_solve(&PoissonConfig::standard(mesh.clone()), &cm).unwrap();
        let mut scaled = PoissonConfig::standard(mesh.clone());
        scaled.source = Arc::new(move |x, y| 1000.0 * (1.0 - y) * y * (1.0 - x) * (1.0 - x) / c);
        scaled.flux = Arc::new(move |_, y| 50.0 * (5.0 * PI * y).sin() / c);
        let u_m = poisson_solve(&scaled, &m).unwrap();
        let scale = crate::matrix::norm2(u_m.values());
        for (a, b) in u_cm.values().iter().zip(u_m.values()) {
            assert!((a - b).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn elasticity_constant_strain_patch() {
        let mesh = mesh(6);
        let mut cfg = ElasticityConfig::with_preset(mesh.clone(), LoadPreset::Zero).unwrap();
        cfg.clamp = Arc::new(|x, _| Some([x, 0.0]));
        let u = elasticity_solve(&cfg, &NodalField::constant(&mesh, 1.0)).unwrap();
        let n = mesh.node_count();
        for (i, p) in mesh.nodes().iter().enumerate() {
            assert!((u.values()[i] - p[0]).abs() < 1e-10);
            assert!(u.values()[n + i].abs() < 1e-10);
        }
    }

    #[test]
    fn upward_traction_lifts_the_tip() {
        let mesh = mesh(10);
        let m = prior(&mesh);
        let model = build_forward_model(Problem::LinearElasticity, m, TransformParams::new(100.0, 1000.0).unwrap(), LoadPreset::Standard).unwrap();
        let mut rng = crate::rng::rng_from_seed(3);
        let e = model.sample_prior(&mut rng, true).unwrap();
        let u = model.solve(&e).unwrap();
        let n = mesh.node_count();
        let tip = mesh.nx(); // bottom-right corner
        assert!(u.values()[n + tip] > 0.0);
        for (i, f) in mesh.boundary().iter().enumerate() {
            if f.left() {
                assert_eq!(u.values()[i], 0.0);
                assert_eq!(u.values()[n + i], 0.0);
            }
        }
    }

    #[test]
    fn solve_fwd_composes_transform() {
        let mesh = mesh(5);
        let zero = NodalField::constant(&mesh, 0.0);
        let p = build_forward_model(Problem::Poisson, prior(&mesh), TransformParams::new(1.0, 0.0).unwrap(), LoadPreset::Standard).unwrap();
        let direct = poisson_solve(&PoissonConfig::standard(mesh.clone()), &NodalField::constant(&mesh, 1.0)).unwrap();
        assert_eq!(p.solve_fwd(&zero, true).unwrap(), direct);
        let m = NodalField::from_fn(&mesh, |x, y| 1.0 + (3.0 * x * y).sin().abs());
        assert_eq!(p.solve_fwd(&m, false).unwrap(), p.solve_fwd(&m, false).unwrap());

        let e = build_forward_model(Problem::LinearElasticity, prior(&mesh), TransformParams::new(100.0, 1000.0).unwrap(), LoadPreset::Standard).unwrap();
        let direct = elasticity_solve(&ElasticityConfig::standard(mesh.clone()), &NodalField::constant(&mesh, 1100.0)).unwrap();
        assert_eq!(e.solve_fwd(&zero, true).unwrap(), direct);
    }
}
