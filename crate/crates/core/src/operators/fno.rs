use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::deeponet::check_input;
use super::grid::GridTransfer;
use super::train::Network;
use crate::dimred::{fit_normalizer, Normalizer};
use crate::error::{Error, Result};
use crate::fem::{Mesh, NodalField};
use crate::matrix::Matrix;
use crate::nn::{SpectralPlan, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FnoConfig {
    pub n1: usize,
    pub n2: usize,
    /// Hidden channel width.
    pub d_h: usize,
    pub layers: usize,
    pub k_max: usize,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self { n1: 51, n2: 51, d_h: 20, layers: 3, k_max: 8 }
    }
}

/// Input channels per grid point: normalized parameter value and the two coordinates.
pub const FNO_IN_CHANNELS: usize = 3;

/// Fourier neural operator on a uniform grid. Inputs and outputs are
/// centered and scaled per grid point; the network itself sees
/// channel-last `[B, n1, n2, 3]` tensors.
#[derive(Debug, Clone)]
pub struct FnoModel {
    pub d_o: usize,
    pub config: FnoConfig,
    pub transfer: GridTransfer,
    /// Per-grid-point statistics of `m`.
    pub m_norm: Normalizer,
    /// Per-grid-point, per-channel statistics of the outputs.
    pub y_norm: Normalizer,
    plan: Arc<SpectralPlan>,
    params: Vec<Tensor>,
}

impl FnoModel {
    pub fn param_shapes(config: &FnoConfig, d_o: usize) -> Vec<Vec<usize>> {
        let (h, k) = (config.d_h, config.k_max);
        let mut s = vec![vec![h, FNO_IN_CHANNELS], vec![h]];
        for _ in 0..config.layers {
            for _ in 0..4 {
                s.push(vec![h, h, k, k]);
            }
            s.push(vec![h, h]);
            s.push(vec![h]);
        }
        s.push(vec![d_o, h]);
        s.push(vec![d_o]);
        s
    }

    /// Fits the grid normalizers on training data (grid layout, channel-last)
    /// and initializes the weights.
    pub fn new<R: Rng + ?Sized>(
        mesh: Arc<Mesh>,
        d_o: usize,
        config: FnoConfig,
        train_m_grid: &Matrix,
        train_y_grid: &Matrix,
        rng: &mut R,
    ) -> Result<Self> {
        let m_norm = fit_normalizer(train_m_grid)?;
        let y_norm = fit_normalizer(train_y_grid)?;
        let h = config.d_h;
        let mut params = Vec::new();
        let uniform = |rng: &mut R, shape: &[usize], bound: f64| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(shape, data)
        };
        for shape in Self::param_shapes(&config, d_o) {
            let t = if shape.len() == 4 {
                let scale = 1.0 / (h * h) as f64;
                let n: usize = shape.iter().product();
                Tensor::new(&shape, (0..n).map(|_| scale * rng.random::<f64>()).collect())?
            } else {
                // Bias tensors take the fan-in of the weight that precedes them.
                let fan_in = if shape.len() == 2 { shape[1] } else { params.last().map(|w: &Tensor| w.shape()[1]).unwrap_or(1) };
                uniform(rng, &shape, 1.0 / (fan_in as f64).sqrt())?
            };
            params.push(t);
        }
        Self::from_parts(mesh, d_o, config, m_norm, y_norm, params)
    }

    pub fn from_parts(
        mesh: Arc<Mesh>,
        d_o: usize,
        config: FnoConfig,
        m_norm: Normalizer,
        y_norm: Normalizer,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        if d_o == 0 || config.d_h == 0 || config.layers == 0 {
            return Err(Error::invalid("FNO widths and depth must be positive"));
        }
        let plan = Arc::new(SpectralPlan::new(config.n1, config.n2, config.k_max)?);
        let transfer = GridTransfer::new(mesh, config.n1, config.n2)?;
        let np = transfer.point_count();
        if m_norm.dim() != np || y_norm.dim() != np * d_o {
            return Err(Error::shape(format!(
                "grid normalizers of width {} and {} do not fit a {}x{} grid with {d_o} outputs",
                m_norm.dim(),
                y_norm.dim(),
                config.n1,
                config.n2
            )));
        }
        let shapes = Self::param_shapes(&config, d_o);
        if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(p, s)| p.shape() != s.as_slice()) {
            return Err(Error::shape("FNO parameters do not match the architecture"));
        }
        Ok(Self { d_o, config, transfer, m_norm, y_norm, plan, params })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.transfer.mesh()
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }

    /// Network inputs for rows of grid-sampled parameters: `[m_hat, x1, x2]` per point.
    pub fn prepare_inputs(&self, m_grid: &Matrix) -> Result<Matrix> {
        let z = self.m_norm.apply_rows(m_grid)?;
        let np = self.transfer.point_count();
        let mut out = Matrix::zeros(z.rows(), np * FNO_IN_CHANNELS);
        for r in 0..z.rows() {
            let row = out.row_mut(r);
            for (p, xy) in self.transfer.coords().iter().enumerate() {
                row[3 * p] = z.get(r, p);
                row[3 * p + 1] = xy[0];
                row[3 * p + 2] = xy[1];
            }
        }
        Ok(out)
    }

    /// Normalized training targets.
    pub fn prepare_targets(&self, y_grid: &Matrix) -> Result<Matrix> {
        self.y_norm.apply_rows(y_grid)
    }

    /// Physical-unit grid outputs for grid-sampled parameter rows.
    pub fn predict_grid(&self, m_grid: &Matrix) -> Result<Matrix> {
        let x = self.prepare_inputs(m_grid)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let shape = [x.rows(), self.config.n1, self.config.n2, FNO_IN_CHANNELS];
        let xv = tape.constant(Tensor::new(&shape, x.into_vec())?);
        let y = self.forward(&mut tape, &vars, xv)?;
        let z = Matrix::from_vec(m_grid.rows(), self.y_norm.dim(), tape.value(y).data().to_vec())?;
        self.y_norm.invert_rows(&z)
    }

    pub fn predict(&self, m: &NodalField) -> Result<NodalField> {
        check_input(self.mesh(), m)?;
        let g = self.transfer.fem_to_grid(m)?;
        let m_grid = Matrix::from_vec(1, g.len(), g)?;
        let y = self.predict_grid(&m_grid)?;
        self.transfer.grid_to_fem(y.as_slice(), self.d_o)
    }
}

impl Network for FnoModel {
    fn params(&self) -> &[Tensor] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
    fn input_shape(&self) -> Vec<usize> {
        vec![self.config.n1, self.config.n2, FNO_IN_CHANNELS]
    }
    fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let mut z = tape.linear(x, p[0], p[1])?;
        for l in 0..self.config.layers {
            let o = 2 + 6 * l;
            let s = tape.spectral_conv(z, [p[o], p[o + 1], p[o + 2], p[o + 3]], self.plan.clone())?;
            let w = tape.linear(z, p[o + 4], p[o + 5])?;
            z = tape.add(s, w)?;
            if l + 1 < self.config.layers {
                z = tape.gelu(z);
            }
        }
        let o = 2 + 6 * self.config.layers;
        tape.linear(z, p[o], p[o + 1])
    }
}
