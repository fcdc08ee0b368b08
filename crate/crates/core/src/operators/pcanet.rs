use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::deeponet::check_input;
use super::train::Network;
use crate::dimred::{fit_normalizer, fit_projector, Normalizer, Projector};
use crate::error::{Error, Result};
use crate::fem::{Mesh, NodalField};
use crate::matrix::Matrix;
use crate::nn::{Mlp, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaNetConfig {
    pub depth: usize,
    pub width: usize,
    pub r_m: usize,
    pub r_u: usize,
}

impl Default for PcaNetConfig {
    fn default() -> Self {
        Self { depth: 4, width: 128, r_m: 100, r_u: 100 }
    }
}

/// Normalize, project, map reduced coordinates with an MLP, lift, denormalize.
#[derive(Debug, Clone)]
pub struct PcaNetModel {
    pub mesh: Arc<Mesh>,
    pub d_o: usize,
    pub config: PcaNetConfig,
    pub in_norm: Normalizer,
    pub in_proj: Projector,
    pub out_norm: Normalizer,
    pub out_proj: Projector,
    pub core: Mlp,
    params: Vec<Tensor>,
}

impl PcaNetModel {
    /// Fits normalizers and projectors on the training pairs and initializes the core.
    pub fn new<R: Rng + ?Sized>(
        mesh: Arc<Mesh>,
        d_o: usize,
        config: PcaNetConfig,
        train_x: &Matrix,
        train_y: &Matrix,
        rng: &mut R,
    ) -> Result<Self> {
        let in_norm = fit_normalizer(train_x)?;
        let in_proj = fit_projector(&in_norm.apply_rows(train_x)?, config.r_m)?;
        let out_norm = fit_normalizer(train_y)?;
        let out_proj = fit_projector(&out_norm.apply_rows(train_y)?, config.r_u)?;
        let core = Mlp::new(config.r_m, config.width, config.r_u, config.depth, false)?;
        let params = core.init(rng);
        Self::from_parts(mesh, d_o, config, in_norm, in_proj, out_norm, out_proj, params)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        mesh: Arc<Mesh>,
        d_o: usize,
        config: PcaNetConfig,
        in_norm: Normalizer,
        in_proj: Projector,
        out_norm: Normalizer,
        out_proj: Projector,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        if in_proj.dim() != in_norm.dim() || out_proj.dim() != out_norm.dim() {
            return Err(Error::shape("projector and normalizer widths differ"));
        }
        if in_proj.rank() != config.r_m || out_proj.rank() != config.r_u {
            return Err(Error::shape("projector ranks do not match the configuration"));
        }
        if in_norm.dim() != mesh.node_count() || out_norm.dim() != d_o * mesh.node_count() {
            return Err(Error::MeshMismatch("PCANet dimensions do not match the mesh".into()));
        }
        let core = Mlp::new(config.r_m, config.width, config.r_u, config.depth, false)?;
        let ok = params.len() == core.tensor_count()
            && core.layer_dims().iter().enumerate().all(|(l, &(i, o))| {
                params[2 * l].shape() == [o, i] && params[2 * l + 1].shape() == [o]
            });
        if !ok {
            return Err(Error::shape("PCANet parameters do not match the architecture"));
        }
        Ok(Self { mesh, d_o, config, in_norm, in_proj, out_norm, out_proj, core, params })
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }

    /// Reduced inputs `P_m(normalize(x))`.
    pub fn reduce_inputs(&self, x: &Matrix) -> Result<Matrix> {
        self.in_proj.project_rows(&self.in_norm.apply_rows(x)?)
    }

    /// Reduced targets `P_u(normalize(y))`.
    pub fn reduce_outputs(&self, y: &Matrix) -> Result<Matrix> {
        self.out_proj.project_rows(&self.out_norm.apply_rows(y)?)
    }

    /// Normalized-space outputs before denormalization, one row per sample.
    pub fn lift_outputs(&self, z: &Matrix) -> Result<Matrix> {
        self.out_proj.lift_rows(z)
    }

    pub fn core_forward(&self, z: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let x = tape.constant(Tensor::new(&[z.rows(), z.cols()], z.as_slice().to_vec())?);
        let y = self.core.forward(&mut tape, &vars, x)?;
        Matrix::from_vec(z.rows(), self.config.r_u, tape.value(y).data().to_vec())
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.core_forward(&self.reduce_inputs(x)?)?;
        self.out_norm.invert_rows(&self.lift_outputs(&z)?)
    }

    pub fn predict(&self, m: &NodalField) -> Result<NodalField> {
        check_input(&self.mesh, m)?;
        let x = Matrix::from_vec(1, m.len(), m.values().to_vec())?;
        NodalField::new(self.predict_matrix(&x)?.into_vec(), self.d_o)
    }
}

impl Network for PcaNetModel {
    fn params(&self) -> &[Tensor] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
    fn input_shape(&self) -> Vec<usize> {
        vec![self.config.r_m]
    }
    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        self.core.forward(tape, params, x)
    }
}
