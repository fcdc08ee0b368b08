use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::train::{loss_csv, LossRecord, Network, TrainConfig, TrainState};
use super::{ArchConfig, DeepOnetModel, FnoModel, ModelRef, OperatorModel, PcaNetModel};
use crate::binio::{read_f64, write_f64};
use crate::dimred::{spectrum_csv, Normalizer, Projector};
use crate::error::{Error, Result};
use crate::fem::{Mesh, MeshParams};
use crate::matrix::Matrix;
use crate::nn::{Adam, Tensor};

pub const CHECKPOINT_VERSION: &str = "1";

/// Optimizer scalars; the moment vectors live in `adam_m.bin` / `adam_v.bin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamScalars {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: String,
    pub model: ArchConfig,
    pub mesh: MeshParams,
    pub components: usize,
    pub epoch: usize,
    pub seed: u64,
    pub init: String,
    pub normalizer_tol: f64,
    pub param_shapes: Vec<Vec<usize>>,
    pub train: Option<TrainConfig>,
    pub adam: Option<AdamScalars>,
    pub log: Vec<LossRecord>,
}

fn write_norm(dir: &Path, prefix: &str, n: &Normalizer) -> Result<()> {
    write_f64(&dir.join(format!("{prefix}_mean.bin")), &n.mean)?;
    write_f64(&dir.join(format!("{prefix}_std.bin")), &n.std)
}

fn read_norm(dir: &Path, prefix: &str, dim: usize, tol: f64) -> Result<Normalizer> {
    Ok(Normalizer {
        mean: read_f64(&dir.join(format!("{prefix}_mean.bin")), Some(dim))?,
        std: read_f64(&dir.join(format!("{prefix}_std.bin")), Some(dim))?,
        tol,
    })
}

fn write_proj(dir: &Path, prefix: &str, p: &Projector) -> Result<()> {
    write_f64(&dir.join(format!("{prefix}_basis.bin")), p.basis.as_slice())?;
    write_f64(&dir.join(format!("{prefix}_sigma.bin")), &p.singular_values)?;
    fs::write(dir.join(format!("spectrum_{prefix}.csv")), spectrum_csv(&p.singular_values))?;
    Ok(())
}

fn read_proj(dir: &Path, prefix: &str, rank: usize, dim: usize) -> Result<Projector> {
    let basis = read_f64(&dir.join(format!("{prefix}_basis.bin")), Some(rank * dim))?;
    Ok(Projector {
        basis: Matrix::from_vec(rank, dim, basis)?,
        singular_values: read_f64(&dir.join(format!("{prefix}_sigma.bin")), None)?,
    })
}

fn flat(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflat(values: Vec<f64>, shapes: &[Vec<usize>]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut at = 0;
    for s in shapes {
        let n: usize = s.iter().product();
        out.push(Tensor::new(s, values[at..at + n].to_vec())?);
        at += n;
    }
    Ok(out)
}

/// Writes `model` (and, when given, the optimizer state) into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    model: ModelRef,
    seed: u64,
    train: Option<&TrainConfig>,
    state: Option<&TrainState>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (arch, mesh, d_o, params): (ArchConfig, &Arc<Mesh>, usize, &[Tensor]) = match model {
        ModelRef::DeepOnet(m) => {
            write_norm(dir, "input", &m.input_norm)?;
            (ArchConfig::DeepOnet(m.config), &m.mesh, m.d_o, m.params())
        }
        ModelRef::PcaNet(m) => {
            write_norm(dir, "input", &m.in_norm)?;
            write_norm(dir, "output", &m.out_norm)?;
            write_proj(dir, "input", &m.in_proj)?;
            write_proj(dir, "output", &m.out_proj)?;
            (ArchConfig::PcaNet(m.config), &m.mesh, m.d_o, m.params())
        }
        ModelRef::Fno(m) => {
            write_norm(dir, "grid_input", &m.m_norm)?;
            write_norm(dir, "grid_output", &m.y_norm)?;
            (ArchConfig::Fno(m.config), m.mesh(), m.d_o, m.params())
        }
    };
    let tol = match model {
        ModelRef::DeepOnet(m) => m.input_norm.tol,
        ModelRef::PcaNet(m) => m.in_norm.tol,
        ModelRef::Fno(m) => m.m_norm.tol,
    };
    write_f64(&dir.join("params.bin"), &flat(params))?;
    if let Some(s) = state {
        write_f64(&dir.join("adam_m.bin"), &s.adam.m.concat())?;
        write_f64(&dir.join("adam_v.bin"), &s.adam.v.concat())?;
        fs::write(dir.join("loss.csv"), loss_csv(&s.log))?;
    }
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION.into(),
        model: arch,
        mesh: mesh.params(),
        components: d_o,
        epoch: state.map_or(0, |s| s.epoch),
        seed,
        init: "uniform_fan_in".into(),
        normalizer_tol: tol,
        param_shapes: params.iter().map(|t| t.shape().to_vec()).collect(),
        train: train.copied(),
        adam: state.map(|s| AdamScalars {
            lr: s.adam.lr,
            weight_decay: s.adam.weight_decay,
            beta1: s.adam.beta1,
            beta2: s.adam.beta2,
            eps: s.adam.eps,
            step: s.adam.step,
        }),
        log: state.map(|s| s.log.clone()).unwrap_or_default(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads a checkpoint directory. The training state is present when the
/// checkpoint was written during training.
pub fn load_checkpoint(dir: &Path) -> Result<(OperatorModel, CheckpointMeta, Option<TrainState>)> {
    let meta_path = dir.join("meta.json");
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format { path: meta_path, reason: format!("unsupported format version {}", meta.format_version) });
    }
    let mp = meta.mesh;
    let mesh = Arc::new(Mesh::new(mp.nx, mp.ny, mp.l1, mp.l2)?);
    let n = mesh.node_count();
    let d_o = meta.components;
    let total: usize = meta.param_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let params = unflat(read_f64(&dir.join("params.bin"), Some(total))?, &meta.param_shapes)?;
    let tol = meta.normalizer_tol;
    let model = match meta.model {
        ArchConfig::DeepOnet(c) => {
            let norm = read_norm(dir, "input", n, tol)?;
            OperatorModel::DeepOnet(DeepOnetModel::from_parts(mesh, d_o, c, norm, params)?)
        }
        ArchConfig::PcaNet(c) => OperatorModel::PcaNet(PcaNetModel::from_parts(
            mesh,
            d_o,
            c,
            read_norm(dir, "input", n, tol)?,
            read_proj(dir, "input", c.r_m, n)?,
            read_norm(dir, "output", d_o * n, tol)?,
            read_proj(dir, "output", c.r_u, d_o * n)?,
            params,
        )?),
        ArchConfig::Fno(c) => {
            let np = c.n1 * c.n2;
            let m_norm = read_norm(dir, "grid_input", np, tol)?;
            let y_norm = read_norm(dir, "grid_output", np * d_o, tol)?;
            OperatorModel::Fno(FnoModel::from_parts(mesh, d_o, c, m_norm, y_norm, params)?)
        }
    };
    let state = match meta.adam {
        Some(a) => {
            let shapes = &meta.param_shapes;
            let split = |v: Vec<f64>| unflat(v, shapes).map(|ts| ts.into_iter().map(Tensor::into_data).collect());
            let adam = Adam {
                lr: a.lr,
                weight_decay: a.weight_decay,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                step: a.step,
                m: split(read_f64(&dir.join("adam_m.bin"), Some(total))?)?,
                v: split(read_f64(&dir.join("adam_v.bin"), Some(total))?)?,
            };
            Some(TrainState { epoch: meta.epoch, adam, log: meta.log.clone() })
        }
        None => None,
    };
    Ok((model, meta, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DeepOnetConfig, FnoConfig, PcaNetConfig, Split, Surrogate};
    use crate::fem::NodalField;

    fn data(mesh: &Mesh, d_o: usize) -> (Matrix, Matrix) {
        let n = mesh.node_count();
        let x = Matrix::from_vec(8, n, (0..8 * n).map(|i| ((i * 7 % 13) as f64).sin() + 1.5).collect()).unwrap();
        let y = Matrix::from_vec(8, d_o * n, (0..8 * d_o * n).map(|i| ((i * 5 % 11) as f64).cos()).collect()).unwrap();
        (x, y)
    }

    #[test]
    fn round_trip_every_architecture() {
        let mesh = Arc::new(Mesh::new(4, 4, 1.0, 1.0).unwrap());
        let archs = [
            ArchConfig::DeepOnet(DeepOnetConfig { depth: 2, width: 5, n_tr: 3 }),
            ArchConfig::PcaNet(PcaNetConfig { depth: 2, width: 5, r_m: 4, r_u: 3 }),
            ArchConfig::Fno(FnoConfig { n1: 5, n2: 5, d_h: 3, layers: 2, k_max: 2 }),
        ];
        for arch in archs {
            let (x, y) = data(&mesh, 2);
            let split = Split::new(&x, &y).unwrap();
            let mut model = OperatorModel::build(mesh.clone(), 2, &arch, split, 5).unwrap();
            let cfg = TrainConfig { epochs: 2, batch: 3, ..TrainConfig::default() };
            let state = model.train(split, None, &cfg, None, |_, _| Ok(())).unwrap();
            let dir = tempfile::tempdir().unwrap();
            save_checkpoint(dir.path(), model.view(), 5, Some(&cfg), Some(&state)).unwrap();
            let (back, meta, st) = load_checkpoint(dir.path()).unwrap();
            assert_eq!(meta.model, arch);
            assert_eq!(st.as_ref(), Some(&state));
            let m = NodalField::new(x.row(0).to_vec(), 1).unwrap();
            assert_eq!(model.predict(&m).unwrap().values(), back.predict(&m).unwrap().values());
        }
    }

    #[test]
    fn rejects_truncated_params() {
        let mesh = Arc::new(Mesh::new(3, 3, 1.0, 1.0).unwrap());
        let (x, y) = data(&mesh, 1);
        let arch = ArchConfig::DeepOnet(DeepOnetConfig { depth: 2, width: 4, n_tr: 2 });
        let model = OperatorModel::build(mesh, 1, &arch, Split::new(&x, &y).unwrap(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), model.view(), 0, None, None).unwrap();
        write_f64(&dir.path().join("params.bin"), &[1.0, 2.0]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Format { .. })));
    }
}
