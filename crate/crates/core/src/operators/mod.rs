//! Neural-operator surrogates: DeepONet, PCANet and FNO, with a shared
//! training loop, checkpoints and a uniform prediction interface.

mod checkpoint;
mod deeponet;
mod fno;
mod grid;
mod pcanet;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use deeponet::{deeponet_build_data, DeepOnetConfig, DeepOnetData, DeepOnetModel};
pub use fno::{FnoConfig, FnoModel, FNO_IN_CHANNELS};
pub use grid::GridTransfer;
pub use pcanet::{PcaNetConfig, PcaNetModel};
pub use train::{dataset_mse, epoch_lr, fit, loss_csv, predict_rows, LossRecord, Network, Split, TrainConfig, TrainState};

use crate::error::{Error, Result};
use crate::fem::{Mesh, NodalField};
use crate::matrix::{relative_l2, Matrix};
use crate::rng::rng_from_seed;

/// Anything that maps a parameter field to a solution field on a fixed mesh.
pub trait Surrogate: Send + Sync {
    fn mesh(&self) -> &Arc<Mesh>;
    /// Number of solution components.
    fn components(&self) -> usize;
    fn predict(&self, m: &NodalField) -> Result<NodalField>;
}

/// Architecture and its hyperparameters, tagged by `architecture`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "lowercase")]
pub enum ArchConfig {
    DeepOnet(DeepOnetConfig),
    PcaNet(PcaNetConfig),
    Fno(FnoConfig),
}

impl ArchConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            ArchConfig::DeepOnet(_) => "deeponet",
            ArchConfig::PcaNet(_) => "pcanet",
            ArchConfig::Fno(_) => "fno",
        }
    }
}

/// Borrowed view of a concrete model, e.g. for checkpointing mid-training.
#[derive(Debug, Clone, Copy)]
pub enum ModelRef<'a> {
    DeepOnet(&'a DeepOnetModel),
    PcaNet(&'a PcaNetModel),
    Fno(&'a FnoModel),
}

#[derive(Debug, Clone)]
pub enum OperatorModel {
    DeepOnet(DeepOnetModel),
    PcaNet(PcaNetModel),
    Fno(FnoModel),
}

/// Evaluates `$body` with `$m` bound to the concrete model.
macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            OperatorModel::DeepOnet($m) => $body,
            OperatorModel::PcaNet($m) => $body,
            OperatorModel::Fno($m) => $body,
        }
    };
}

/// Per-sample relative L2 errors of `pred` against `truth`.
pub fn relative_errors(pred: &Matrix, truth: &Matrix) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!("predictions {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    Ok((0..pred.rows()).map(|r| relative_l2(pred.row(r), truth.row(r))).collect())
}

fn grid_rows(t: &GridTransfer, x: &Matrix, components: usize) -> Result<Matrix> {
    let rows = (0..x.rows())
        .map(|r| t.fem_to_grid(&NodalField::new(x.row(r).to_vec(), components)?))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, t.point_count() * components));
    }
    Matrix::from_rows(&rows)
}

impl OperatorModel {
    /// Builds an untrained model whose data-dependent parts (normalizers,
    /// projectors) are fitted on `train`, with weights drawn from `seed`.
    pub fn build(mesh: Arc<Mesh>, d_o: usize, arch: &ArchConfig, train: Split, seed: u64) -> Result<Self> {
        if train.x.cols() != mesh.node_count() || train.y.cols() != d_o * mesh.node_count() {
            return Err(Error::MeshMismatch(format!(
                "data of widths {} and {} does not fit {} nodes with {d_o} outputs",
                train.x.cols(),
                train.y.cols(),
                mesh.node_count()
            )));
        }
        let mut rng = rng_from_seed(seed);
        Ok(match *arch {
            ArchConfig::DeepOnet(c) => OperatorModel::DeepOnet(DeepOnetModel::new(mesh, d_o, c, train.x, &mut rng)?),
            ArchConfig::PcaNet(c) => OperatorModel::PcaNet(PcaNetModel::new(mesh, d_o, c, train.x, train.y, &mut rng)?),
            ArchConfig::Fno(c) => {
                let t = GridTransfer::new(mesh.clone(), c.n1, c.n2)?;
                let xg = grid_rows(&t, train.x, 1)?;
                let yg = grid_rows(&t, train.y, d_o)?;
                OperatorModel::Fno(FnoModel::new(mesh, d_o, c, &xg, &yg, &mut rng)?)
            }
        })
    }

    pub fn arch(&self) -> ArchConfig {
        match self {
            OperatorModel::DeepOnet(m) => ArchConfig::DeepOnet(m.config),
            OperatorModel::PcaNet(m) => ArchConfig::PcaNet(m.config),
            OperatorModel::Fno(m) => ArchConfig::Fno(m.config),
        }
    }

    pub fn tag(&self) -> &'static str {
        self.arch().tag()
    }

    pub fn view(&self) -> ModelRef<'_> {
        match self {
            OperatorModel::DeepOnet(m) => ModelRef::DeepOnet(m),
            OperatorModel::PcaNet(m) => ModelRef::PcaNet(m),
            OperatorModel::Fno(m) => ModelRef::Fno(m),
        }
    }

    pub fn params(&self) -> &[crate::nn::Tensor] {
        dispatch!(self, m => m.params())
    }

    /// Maps physical nodal rows to the inputs and targets the network is trained on.
    pub fn network_data(&self, x: &Matrix, y: &Matrix) -> Result<(Matrix, Matrix)> {
        match self {
            OperatorModel::DeepOnet(m) => Ok((m.prepare_inputs(x)?, y.clone())),
            OperatorModel::PcaNet(m) => Ok((m.reduce_inputs(x)?, m.reduce_outputs(y)?)),
            OperatorModel::Fno(m) => Ok((
                m.prepare_inputs(&grid_rows(&m.transfer, x, 1)?)?,
                m.prepare_targets(&grid_rows(&m.transfer, y, m.d_o)?)?,
            )),
        }
    }

    /// Trains on physical nodal data. `on_epoch` sees the model after each epoch.
    pub fn train(
        &mut self,
        train: Split,
        test: Option<Split>,
        cfg: &TrainConfig,
        resume: Option<TrainState>,
        mut on_epoch: impl FnMut(ModelRef, &TrainState) -> Result<()>,
    ) -> Result<TrainState> {
        let (tx, ty) = self.network_data(train.x, train.y)?;
        let test_data = test.map(|t| self.network_data(t.x, t.y)).transpose()?;
        let test_split = test_data.as_ref().map(|(x, y)| Split::new(x, y)).transpose()?;
        let train_split = Split::new(&tx, &ty)?;
        match self {
            OperatorModel::DeepOnet(m) => fit(m, train_split, test_split, cfg, resume, |n, s| on_epoch(ModelRef::DeepOnet(n), s)),
            OperatorModel::PcaNet(m) => fit(m, train_split, test_split, cfg, resume, |n, s| on_epoch(ModelRef::PcaNet(n), s)),
            OperatorModel::Fno(m) => fit(m, train_split, test_split, cfg, resume, |n, s| on_epoch(ModelRef::Fno(n), s)),
        }
    }

    /// Predictions in physical nodal layout for parameter rows.
    pub fn predict_matrix(&self, x: &Matrix) -> Result<Matrix> {
        const CHUNK: usize = 64;
        let width = self.components() * self.mesh().node_count();
        let mut out = Matrix::zeros(x.rows(), width);
        let all: Vec<usize> = (0..x.rows()).collect();
        for rows in all.chunks(CHUNK) {
            let xs = x.select_rows(rows);
            let pred = match self {
                OperatorModel::DeepOnet(m) => m.predict_matrix(&xs)?,
                OperatorModel::PcaNet(m) => m.predict_matrix(&xs)?,
                OperatorModel::Fno(m) => {
                    let yg = m.predict_grid(&grid_rows(&m.transfer, &xs, 1)?)?;
                    let rows = (0..yg.rows())
                        .map(|r| Ok(m.transfer.grid_to_fem(yg.row(r), m.d_o)?.into_values()))
                        .collect::<Result<Vec<_>>>()?;
                    Matrix::from_rows(&rows)?
                }
            };
            for (k, &r) in rows.iter().enumerate() {
                out.row_mut(r).copy_from_slice(pred.row(k));
            }
        }
        Ok(out)
    }

    /// Relative L2 error of every test row.
    pub fn evaluate(&self, test: Split) -> Result<Vec<f64>> {
        relative_errors(&self.predict_matrix(test.x)?, test.y)
    }
}

impl Surrogate for OperatorModel {
    fn mesh(&self) -> &Arc<Mesh> {
        match self {
            OperatorModel::DeepOnet(m) => &m.mesh,
            OperatorModel::PcaNet(m) => &m.mesh,
            OperatorModel::Fno(m) => m.mesh(),
        }
    }
    fn components(&self) -> usize {
        dispatch!(self, m => m.d_o)
    }
    fn predict(&self, m: &NodalField) -> Result<NodalField> {
        dispatch!(self, s => s.predict(m))
    }
}
