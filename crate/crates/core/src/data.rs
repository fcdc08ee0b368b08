//! Dataset generation, splitting, grid resampling and the on-disk format.
//!
//! A dataset directory holds `meta.json`, the row-major little-endian arrays
//! `X.bin` (transformed parameters) and `Y.bin` (solutions), and optionally
//! `Xgrid.bin`, `Ygrid.bin` and `norm.json` for grid-based models.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_f64, write_f64};
use crate::dimred::{fit_normalizer, Normalizer};
use crate::error::{Error, Result};
use crate::fem::{Mesh, MeshParams, NodalField};
use crate::forward::{build_forward_model, ForwardModel, LoadPreset, Problem};
use crate::grf::{build_prior, transform_lognormal, TransformParams};
use crate::matrix::Matrix;
use crate::operators::GridTransfer;
use crate::rng::{rng_from_seed, substream};

pub const DATASET_VERSION: &str = "1";

/// Redraws allowed per sample after a failed forward solve.
pub const MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub a_c: f64,
    pub b_c: f64,
    pub c_c: f64,
}

/// Everything needed to rebuild a forward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSetup {
    pub problem: Problem,
    pub mesh: MeshParams,
    pub prior: PriorParams,
    pub transform: TransformParams,
    #[serde(default)]
    pub preset: LoadPreset,
}

impl ProblemSetup {
    /// Reference setup: unit square, `a_c = 0.005`, `b_c = 1`, `c_c = 0.2`,
    /// `m = exp(w)` for Poisson and `E = 100 exp(w) + 1000` for elasticity.
    pub fn reference(problem: Problem, nx: usize, ny: usize) -> Self {
        let transform = match problem {
            Problem::Poisson => TransformParams { alpha_m: 1.0, beta_m: 0.0 },
            Problem::LinearElasticity => TransformParams { alpha_m: 100.0, beta_m: 1000.0 },
        };
        Self {
            problem,
            mesh: MeshParams { nx, ny, l1: 1.0, l2: 1.0 },
            prior: PriorParams { a_c: 0.005, b_c: 1.0, c_c: 0.2 },
            transform,
            preset: LoadPreset::Standard,
        }
    }

    pub fn build_mesh(&self) -> Result<Arc<Mesh>> {
        Ok(Arc::new(Mesh::new(self.mesh.nx, self.mesh.ny, self.mesh.l1, self.mesh.l2)?))
    }

    /// Forward model with a zero-mean prior on a freshly built mesh.
    pub fn build(&self) -> Result<Box<dyn ForwardModel>> {
        self.build_on(self.build_mesh()?)
    }

    pub fn build_on(&self, mesh: Arc<Mesh>) -> Result<Box<dyn ForwardModel>> {
        if mesh.params() != self.mesh {
            return Err(Error::MeshMismatch("mesh does not match the problem setup".into()));
        }
        let transform = TransformParams::new(self.transform.alpha_m, self.transform.beta_m)?;
        let mean = NodalField::zeros(&mesh, 1);
        let prior = build_prior(mesh, self.prior.a_c, self.prior.b_c, self.prior.c_c, mean, 0)?;
        build_forward_model(self.problem, prior, transform, self.preset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_order: String,
}

impl ArrayMeta {
    fn f64(name: &str, shape: Vec<usize>) -> Self {
        Self { name: name.into(), shape, dtype: "f64".into(), byte_order: "little".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: String,
    pub setup: ProblemSetup,
    pub seed: u64,
    pub n: usize,
    pub components: usize,
    /// Forward failures that were redrawn.
    pub redraws: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub arrays: Vec<ArrayMeta>,
    pub grid: Option<[usize; 2]>,
}

/// Grid-resampled copy of a dataset for grid-based models.
#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    pub n1: usize,
    pub n2: usize,
    /// `N x (n1 n2 3)`: channels `(m, x1, x2)` per grid point.
    pub x: Matrix,
    /// `N x (n1 n2 d_o)`, channel-last.
    pub y: Matrix,
    pub norm: GridNorm,
}

/// Per-grid-point statistics over the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridNorm {
    pub m: Normalizer,
    pub y: Normalizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub x: Matrix,
    pub y: Matrix,
    pub grid: Option<GridData>,
}

/// Draws `n` prior samples and solves for each. Sample `i` uses stream
/// `(seed, i)`, so the result does not depend on scheduling. A failed solve is
/// redrawn up to [`MAX_RETRIES`] times before generation aborts.
pub fn generate(model: &dyn ForwardModel, setup: ProblemSetup, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let mut last = None;
            for attempt in 0..=MAX_RETRIES {
                let result = model
                    .sample_prior(&mut rng, false)
                    .and_then(|w| transform_lognormal(&w, model.transform()))
                    .and_then(|m| {
                        let u = model.solve(&m)?;
                        Ok((m, u))
                    });
                match result {
                    Ok((m, u)) => return Ok((m.into_values(), u.into_values(), attempt)),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect::<Result<_>>()?;
    let redraws = rows.iter().map(|r| r.2).sum();
    let (xs, ys): (Vec<_>, Vec<_>) = rows.into_iter().map(|(x, y, _)| (x, y)).unzip();
    let x = Matrix::from_rows(&xs)?;
    let y = Matrix::from_rows(&ys)?;
    let meta = DatasetMeta {
        format_version: DATASET_VERSION.into(),
        setup,
        seed,
        n,
        components: model.components(),
        redraws,
        train_indices: (0..n).collect(),
        test_indices: Vec::new(),
        arrays: Vec::new(),
        grid: None,
    };
    Ok(Dataset { meta, x, y, grid: None })
}

/// Seeded shuffle of `0..n` cut into disjoint train and test index sets.
pub fn split_indices(n: usize, n_train: usize, n_test: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train + n_test > n {
        return Err(Error::invalid(format!("{n_train} train + {n_test} test rows exceed {n} samples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let test = idx[n_train..n_train + n_test].to_vec();
    idx.truncate(n_train);
    Ok((idx, test))
}

impl Dataset {
    pub fn mesh(&self) -> Result<Arc<Mesh>> {
        self.meta.setup.build_mesh()
    }

    /// Assigns train and test rows by a seeded shuffle.
    pub fn split(&mut self, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
        let (train, test) = split_indices(self.meta.n, n_train, n_test, seed)?;
        self.meta.train_indices = train;
        self.meta.test_indices = test;
        Ok(())
    }

    pub fn train_rows(&self) -> (Matrix, Matrix) {
        (self.x.select_rows(&self.meta.train_indices), self.y.select_rows(&self.meta.train_indices))
    }

    pub fn test_rows(&self) -> (Matrix, Matrix) {
        (self.x.select_rows(&self.meta.test_indices), self.y.select_rows(&self.meta.test_indices))
    }

    /// Resamples every row onto the grid of `transfer` and fits per-point
    /// normalizers on the training rows.
    pub fn to_grid(&mut self, transfer: &GridTransfer) -> Result<()> {
        let mesh = self.mesh()?;
        if transfer.mesh().params() != mesh.params() {
            return Err(Error::MeshMismatch("grid transfer built for another mesh".into()));
        }
        let d = self.meta.components;
        let np = transfer.point_count();
        let mut x = Matrix::zeros(self.meta.n, np * 3);
        let mut m_only = Matrix::zeros(self.meta.n, np);
        let mut y = Matrix::zeros(self.meta.n, np * d);
        for r in 0..self.meta.n {
            let m = transfer.fem_to_grid(&NodalField::scalar(self.x.row(r).to_vec())?)?;
            let row = x.row_mut(r);
            for (p, xy) in transfer.coords().iter().enumerate() {
                row[3 * p] = m[p];
                row[3 * p + 1] = xy[0];
                row[3 * p + 2] = xy[1];
            }
            m_only.row_mut(r).copy_from_slice(&m);
            let u = transfer.fem_to_grid(&NodalField::new(self.y.row(r).to_vec(), d)?)?;
            y.row_mut(r).copy_from_slice(&u);
        }
        let train = &self.meta.train_indices;
        let norm = GridNorm { m: fit_normalizer(&m_only.select_rows(train))?, y: fit_normalizer(&y.select_rows(train))? };
        self.meta.grid = Some([transfer.n1(), transfer.n2()]);
        self.grid = Some(GridData { n1: transfer.n1(), n2: transfer.n2(), x, y, norm });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut meta = self.meta.clone();
        meta.arrays = vec![ArrayMeta::f64("X", vec![self.x.rows(), self.x.cols()]), ArrayMeta::f64("Y", vec![self.y.rows(), self.y.cols()])];
        write_f64(&dir.join("X.bin"), self.x.as_slice())?;
        write_f64(&dir.join("Y.bin"), self.y.as_slice())?;
        if let Some(g) = &self.grid {
            meta.arrays.push(ArrayMeta::f64("Xgrid", vec![self.meta.n, g.n1, g.n2, 3]));
            meta.arrays.push(ArrayMeta::f64("Ygrid", vec![self.meta.n, g.n1, g.n2, self.meta.components]));
            write_f64(&dir.join("Xgrid.bin"), g.x.as_slice())?;
            write_f64(&dir.join("Ygrid.bin"), g.y.as_slice())?;
            fs::write(dir.join("norm.json"), serde_json::to_string(&g.norm)?)?;
        }
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        if meta.format_version != DATASET_VERSION {
            return Err(Error::Format { path: meta_path, reason: format!("unsupported format version {}", meta.format_version) });
        }
        let shape = |name: &str| {
            meta.arrays.iter().find(|a| a.name == name).map(|a| a.shape.clone()).ok_or_else(|| Error::Format {
                path: meta_path.clone(),
                reason: format!("array {name} not declared"),
            })
        };
        let matrix = |name: &str| -> Result<Matrix> {
            let s = shape(name)?;
            let cols = s[1..].iter().product();
            Matrix::from_vec(s[0], cols, read_f64(&dir.join(format!("{name}.bin")), Some(s[0] * cols))?)
        };
        let x = matrix("X")?;
        let y = matrix("Y")?;
        let grid = match meta.grid {
            Some([n1, n2]) => {
                let norm: GridNorm = serde_json::from_str(&fs::read_to_string(dir.join("norm.json"))?)?;
                Some(GridData { n1, n2, x: matrix("Xgrid")?, y: matrix("Ygrid")?, norm })
            }
            None => None,
        };
        let mp = meta.setup.mesh;
        let nodes = (mp.nx + 1) * (mp.ny + 1);
        if x.rows() != meta.n || y.rows() != meta.n || x.cols() != nodes || y.cols() != nodes * meta.components {
            return Err(Error::Format { path: meta_path, reason: "array shapes disagree with the mesh".into() });
        }
        Ok(Self { meta, x, y, grid })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> ProblemSetup {
        ProblemSetup::reference(Problem::Poisson, 4, 4)
    }

    #[test]
    fn single_sample_shapes() {
        let s = setup();
        let ds = generate(s.build().unwrap().as_ref(), s, 1, 0).unwrap();
        assert_eq!(ds.x.shape(), (1, 25));
        assert_eq!(ds.y.shape(), (1, 25));
    }

    #[test]
    fn generation_is_deterministic_and_transformed() {
        let s = setup();
        let model = s.build().unwrap();
        let a = generate(model.as_ref(), s, 6, 11).unwrap();
        let b = generate(model.as_ref(), s, 6, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.x.as_slice().iter().all(|&m| m > 0.0));
        // Row i comes from stream (seed, i).
        let w = model.sample_prior(&mut substream(11, 4), false).unwrap();
        let m = transform_lognormal(&w, model.transform()).unwrap();
        assert_eq!(a.x.row(4), m.values());
    }

    #[test]
    fn splits() {
        let (tr, te) = split_indices(10, 10, 0, 1).unwrap();
        assert_eq!(tr.len(), 10);
        assert!(te.is_empty());
        let (tr, te) = split_indices(10, 6, 3, 1).unwrap();
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!((tr.clone(), te.clone()), split_indices(10, 6, 3, 1).unwrap());
        assert!(split_indices(10, 8, 3, 1).is_err());
    }

    #[test]
    fn grid_dataset_channels_and_norm() {
        let s = setup();
        let mut ds = generate(s.build().unwrap().as_ref(), s, 5, 2).unwrap();
        ds.split(4, 1, 0).unwrap();
        let t = GridTransfer::new(ds.mesh().unwrap(), 6, 6).unwrap();
        ds.to_grid(&t).unwrap();
        let g = ds.grid.as_ref().unwrap();
        for r in 1..5 {
            for p in 0..36 {
                assert_eq!(g.x.get(r, 3 * p + 1), g.x.get(0, 3 * p + 1));
                assert_eq!(g.x.get(r, 3 * p + 2), g.x.get(0, 3 * p + 2));
            }
        }
        // Recompute the statistics from raw training rows.
        let rows: Vec<Vec<f64>> =
            ds.meta.train_indices.iter().map(|&r| (0..36).map(|p| g.x.get(r, 3 * p)).collect()).collect();
        let n = rows.len() as f64;
        for p in 0..36 {
            let mean = rows.iter().map(|r| r[p]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[p] - mean).powi(2)).sum::<f64>() / n;
            assert!((g.norm.m.mean[p] - mean).abs() < 1e-12);
            assert!((g.norm.m.std[p] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_field_on_grid_is_exact() {
        let s = setup();
        let mesh = s.build_mesh().unwrap();
        let lin = NodalField::from_fn(&mesh, |x, y| 1.0 + 2.0 * x + 3.0 * y);
        let mut ds = Dataset {
            meta: DatasetMeta {
                format_version: DATASET_VERSION.into(),
                setup: s,
                seed: 0,
                n: 2,
                components: 1,
                redraws: 0,
                train_indices: vec![0, 1],
                test_indices: vec![],
                arrays: vec![],
                grid: None,
            },
            x: Matrix::from_rows(&[lin.values(), lin.values()]).unwrap(),
            y: Matrix::from_rows(&[lin.values(), lin.values()]).unwrap(),
            grid: None,
        };
        let t = GridTransfer::new(mesh, 7, 5).unwrap();
        ds.to_grid(&t).unwrap();
        let g = ds.grid.unwrap();
        for (p, xy) in t.coords().iter().enumerate() {
            assert!((g.x.get(0, 3 * p) - (1.0 + 2.0 * xy[0] + 3.0 * xy[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn write_read_round_trip_is_bitwise() {
        let s = ProblemSetup::reference(Problem::LinearElasticity, 3, 3);
        let mut ds = generate(s.build().unwrap().as_ref(), s, 4, 9).unwrap();
        ds.split(3, 1, 5).unwrap();
        ds.to_grid(&GridTransfer::new(ds.mesh().unwrap(), 4, 4).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.x.as_slice(), ds.x.as_slice());
        assert_eq!(back.y.as_slice(), ds.y.as_slice());
        assert_eq!(back.grid, ds.grid);
        assert_eq!(back.meta.test_indices, ds.meta.test_indices);
    }
}
