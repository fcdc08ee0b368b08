use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::Network;
use crate::dimred::{fit_normalizer, Normalizer};
use crate::error::{Error, Result};
use crate::fem::{Mesh, NodalField};
use crate::matrix::Matrix;
use crate::nn::{Mlp, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepOnetConfig {
    pub depth: usize,
    pub width: usize,
    /// Trunk outputs per component.
    pub n_tr: usize,
}

impl Default for DeepOnetConfig {
    fn default() -> Self {
        Self { depth: 4, width: 128, n_tr: 100 }
    }
}

/// Training arrays: branch inputs, trunk coordinates (the mesh nodes), and
/// targets at every trunk point, component-blocked.
#[derive(Debug, Clone)]
pub struct DeepOnetData {
    pub x_branch: Matrix,
    pub x_trunk: Matrix,
    pub y: Matrix,
}

pub fn deeponet_build_data(x: &Matrix, y: &Matrix, mesh: &Mesh, d_o: usize) -> Result<DeepOnetData> {
    if x.rows() != y.rows() {
        return Err(Error::shape(format!("{} inputs but {} outputs", x.rows(), y.rows())));
    }
    if y.cols() != d_o * mesh.node_count() {
        return Err(Error::shape(format!(
            "outputs have {} columns, expected {d_o} x {} nodes",
            y.cols(),
            mesh.node_count()
        )));
    }
    let x_trunk = Matrix::from_rows(mesh.nodes())?;
    Ok(DeepOnetData { x_branch: x.clone(), x_trunk, y: y.clone() })
}

/// Branch/trunk operator network. Branch inputs are normalized parameter
/// vectors; outputs are in physical units.
#[derive(Debug, Clone)]
pub struct DeepOnetModel {
    pub mesh: Arc<Mesh>,
    pub d_o: usize,
    pub config: DeepOnetConfig,
    pub branch: Mlp,
    pub trunk: Mlp,
    pub input_norm: Normalizer,
    params: Vec<Tensor>,
    coords: Tensor,
    trunk_cache: OnceLock<Tensor>,
}

impl DeepOnetModel {
    pub fn new<R: Rng + ?Sized>(
        mesh: Arc<Mesh>,
        d_o: usize,
        config: DeepOnetConfig,
        train_x: &Matrix,
        rng: &mut R,
    ) -> Result<Self> {
        let input_norm = fit_normalizer(train_x)?;
        let branch = Mlp::new(train_x.cols(), config.width, d_o * config.n_tr, config.depth, false)?;
        let trunk = Mlp::new(2, config.width, config.n_tr, config.depth, true)?;
        let mut params = branch.init(rng);
        params.extend(trunk.init(rng));
        params.push(Tensor::full(&[d_o], 1.0));
        Self::from_parts(mesh, d_o, config, input_norm, params)
    }

    pub fn from_parts(
        mesh: Arc<Mesh>,
        d_o: usize,
        config: DeepOnetConfig,
        input_norm: Normalizer,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        let p_m = input_norm.dim();
        let branch = Mlp::new(p_m, config.width, d_o * config.n_tr, config.depth, false)?;
        let trunk = Mlp::new(2, config.width, config.n_tr, config.depth, true)?;
        let shapes = Self::param_shapes(&branch, &trunk, d_o);
        if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(p, s)| p.shape() != s.as_slice()) {
            return Err(Error::shape("DeepONet parameters do not match the architecture"));
        }
        let coords = Tensor::new(&[mesh.node_count(), 2], mesh.nodes().iter().flatten().copied().collect())?;
        Ok(Self { mesh, d_o, config, branch, trunk, input_norm, params, coords, trunk_cache: OnceLock::new() })
    }

    pub fn param_shapes(branch: &Mlp, trunk: &Mlp, d_o: usize) -> Vec<Vec<usize>> {
        let mut s = Vec::new();
        for mlp in [branch, trunk] {
            for (i, o) in mlp.layer_dims() {
                s.push(vec![o, i]);
                s.push(vec![o]);
            }
        }
        s.push(vec![d_o]);
        s
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }

    fn split<'a, T>(&self, p: &'a [T]) -> (&'a [T], &'a [T], &'a T) {
        let nb = self.branch.tensor_count();
        let nt = self.trunk.tensor_count();
        (&p[..nb], &p[nb..nb + nt], &p[nb + nt])
    }

    /// Trunk outputs at the mesh nodes, computed once per parameter state.
    fn trunk_output(&self) -> Result<&Tensor> {
        if let Some(t) = self.trunk_cache.get() {
            return Ok(t);
        }
        let mut tape = Tape::new();
        let (_, tp, _) = self.split(&self.params);
        let vars: Vec<Var> = tp.iter().map(|p| tape.constant(p.clone())).collect();
        let c = tape.constant(self.coords.clone());
        let out = self.trunk.forward(&mut tape, &vars, c)?;
        Ok(self.trunk_cache.get_or_init(|| tape.value(out).clone()))
    }

    /// Normalized branch inputs for raw parameter rows.
    pub fn prepare_inputs(&self, x: &Matrix) -> Result<Matrix> {
        self.input_norm.apply_rows(x)
    }

    /// Predictions for raw parameter rows.
    pub fn predict_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let xn = self.prepare_inputs(x)?;
        let trunk = self.trunk_output()?.clone();
        let mut tape = Tape::new();
        let (bp, _, bias) = self.split(&self.params);
        let bvars: Vec<Var> = bp.iter().map(|p| tape.constant(p.clone())).collect();
        let xb = tape.constant(Tensor::new(&[xn.rows(), xn.cols()], xn.into_vec())?);
        let br = self.branch.forward(&mut tape, &bvars, xb)?;
        let tr = tape.constant(trunk);
        let bias = tape.constant(bias.clone());
        let y = tape.deeponet_product(br, tr, bias)?;
        Matrix::from_vec(x.rows(), self.d_o * self.mesh.node_count(), tape.value(y).data().to_vec())
    }

    pub fn predict(&self, m: &NodalField) -> Result<NodalField> {
        check_input(&self.mesh, m)?;
        let x = Matrix::from_vec(1, m.len(), m.values().to_vec())?;
        NodalField::new(self.predict_matrix(&x)?.into_vec(), self.d_o)
    }
}

pub(crate) fn check_input(mesh: &Mesh, m: &NodalField) -> Result<()> {
    if m.components() != 1 || m.node_count() != mesh.node_count() {
        return Err(Error::MeshMismatch(format!(
            "model trained on {} nodes received a {}-component field on {} nodes",
            mesh.node_count(),
            m.components(),
            m.node_count()
        )));
    }
    Ok(())
}

impl Network for DeepOnetModel {
    fn params(&self) -> &[Tensor] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [Tensor] {
        self.trunk_cache = OnceLock::new();
        &mut self.params
    }
    fn input_shape(&self) -> Vec<usize> {
        vec![self.input_norm.dim()]
    }
    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let (bp, tp, bias) = self.split(params);
        let br = self.branch.forward(tape, bp, x)?;
        let c = tape.constant(self.coords.clone());
        let tr = self.trunk.forward(tape, tp, c)?;
        tape.deeponet_product(br, tr, *bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::train::predict_rows;
    use crate::rng::rng_from_seed;

    fn setup(d_o: usize) -> (Arc<Mesh>, DeepOnetModel, Matrix) {
        let mesh = Arc::new(Mesh::new(3, 2, 1.0, 1.0).unwrap());
        let n = mesh.node_count();
        let x = Matrix::from_vec(4, n, (0..4 * n).map(|i| (i as f64 * 0.3).sin() + 2.0).collect()).unwrap();
        let cfg = DeepOnetConfig { depth: 3, width: 8, n_tr: 5 };
        let model = DeepOnetModel::new(mesh.clone(), d_o, cfg, &x, &mut rng_from_seed(0)).unwrap();
        (mesh, model, x)
    }

    #[test]
    fn build_data_shapes() {
        let mesh = Mesh::new(50, 50, 1.0, 1.0).unwrap();
        let n = mesh.node_count();
        let d = deeponet_build_data(&Matrix::zeros(1, n), &Matrix::zeros(1, 2 * n), &mesh, 2).unwrap();
        assert_eq!(d.x_trunk.shape(), (2601, 2));
        assert_eq!(d.y.cols(), 5202);
        assert!(deeponet_build_data(&Matrix::zeros(1, n), &Matrix::zeros(1, n), &mesh, 2).is_err());
    }

    #[test]
    fn zero_branch_gives_bias() {
        let (mesh, mut model, x) = setup(2);
        let nb = model.branch.tensor_count();
        for p in &mut model.params_mut()[..nb] {
            p.data_mut().fill(0.0);
        }
        let last = model.params.len() - 1;
        model.params_mut()[last].data_mut().copy_from_slice(&[1.5, -0.5]);
        let y = model.predict_matrix(&x).unwrap();
        let n = mesh.node_count();
        for r in 0..x.rows() {
            assert!(y.row(r)[..n].iter().all(|&v| v == 1.5));
            assert!(y.row(r)[n..].iter().all(|&v| v == -0.5));
        }
    }

    #[test]
    fn matches_double_loop_oracle() {
        let (mesh, model, x) = setup(2);
        let y = model.predict_matrix(&x).unwrap();
        // Evaluate branch and trunk separately and contract by hand.
        let run = |mlp: &Mlp, params: &[Tensor], input: Tensor| {
            let mut tape = Tape::new();
            let v: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
            let xi = tape.constant(input);
            let o = mlp.forward(&mut tape, &v, xi).unwrap();
            tape.value(o).clone()
        };
        let (bp, tp, bias) = model.split(&model.params);
        let xn = model.prepare_inputs(&x).unwrap();
        let br = run(&model.branch, bp, Tensor::new(&[4, xn.cols()], xn.into_vec()).unwrap());
        let tr = run(&model.trunk, tp, model.coords.clone());
        let (n, ntr) = (mesh.node_count(), 5);
        for b in 0..4 {
            for c in 0..2 {
                for j in 0..n {
                    let mut s = bias.data()[c];
                    for k in 0..ntr {
                        s += br.data()[b * 2 * ntr + c * ntr + k] * tr.data()[j * ntr + k];
                    }
                    assert!((y.get(b, c * n + j) - s).abs() < 1e-13);
                }
            }
        }
        // The training path agrees with the cached-trunk prediction path.
        let xn = model.prepare_inputs(&x).unwrap();
        let via_net = predict_rows(&model, &xn, &[0, 1, 2, 3]).unwrap();
        for (a, b) in via_net.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn doubling_branch_output_doubles_signal() {
        let (_, mut model, x) = setup(1);
        let base = model.predict_matrix(&x).unwrap();
        let nb = model.branch.tensor_count();
        // Scale the final branch layer (weights and bias) by two.
        for k in [nb - 2, nb - 1] {
            model.params_mut()[k].data_mut().iter_mut().for_each(|v| *v *= 2.0);
        }
        let doubled = model.predict_matrix(&x).unwrap();
        let b = model.params.last().unwrap().item();
        for (d, s) in doubled.as_slice().iter().zip(base.as_slice()) {
            assert!(((d - b) - 2.0 * (s - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_mesh() {
        let (_, model, _) = setup(1);
        let other = Mesh::new(4, 4, 1.0, 1.0).unwrap();
        assert!(matches!(model.predict(&NodalField::constant(&other, 1.0)), Err(Error::MeshMismatch(_))));
    }
}
