//! Run configuration: nested sections addressed by flat dotted keys.
//!
//! Resolution order is defaults, then the config file, then command-line
//! flags. Defaults depend on the problem (transform, reduced ranks, pCN step,
//! noise level) and on the architecture (epochs), so those two keys are
//! resolved first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use operon_core::data::{PriorParams, ProblemSetup};
use operon_core::fem::MeshParams;
use operon_core::forward::{LoadPreset, Problem};
use operon_core::grf::TransformParams;
use operon_core::mcmc::{ChainConfig, ChainStart, OBS_GRID};
use operon_core::operators::{ArchConfig, DeepOnetConfig, FnoConfig, PcaNetConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const ARCHITECTURES: [&str; 3] = ["deeponet", "pcanet", "fno"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub a_c: f64,
    pub b_c: f64,
    pub c_c: f64,
    pub alpha_m: f64,
    pub beta_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(rename = "N")]
    pub n: usize,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: String,
    pub depth: usize,
    pub width: usize,
    pub r_m: usize,
    pub r_u: usize,
    #[serde(rename = "N_tr")]
    pub n_tr: usize,
    pub d_h: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub k_max: usize,
    pub n1: usize,
    pub n2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub k_max: usize,
    pub k_burn: usize,
    pub beta: f64,
    pub noise_fraction: f64,
    /// `fem` or an architecture name.
    pub forward: String,
    pub obs_grid: usize,
    pub start: ChainStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub observation: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub mesh: MeshSection,
    pub prior: PriorSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub mcmc: McmcSection,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Omit wall-clock timings from reports so re-runs are byte-identical.
    pub deterministic: bool,
    pub paths: PathsSection,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn parse_problem(s: &str) -> CliResult<Problem> {
    s.parse().map_err(|_| usage(format!("unknown problem '{s}' (expected poisson or linear_elasticity)")))
}

impl RunConfig {
    /// Reference values for `problem` and `arch`.
    pub fn defaults(problem: Problem, arch: &str) -> Self {
        let elastic = problem == Problem::LinearElasticity;
        let setup = ProblemSetup::reference(problem, 50, 50);
        let r = if elastic { 50 } else { 100 };
        let fno = FnoConfig::default();
        let don = DeepOnetConfig::default();
        let tc = TrainConfig::default();
        let cc = ChainConfig::default();
        Self {
            problem: problem.tag().into(),
            mesh: MeshSection { nx: 50, ny: 50, l1: 1.0, l2: 1.0 },
            prior: PriorSection {
                a_c: setup.prior.a_c,
                b_c: setup.prior.b_c,
                c_c: setup.prior.c_c,
                alpha_m: setup.transform.alpha_m,
                beta_m: setup.transform.beta_m,
            },
            dataset: DatasetSection { n: 4500, n_train: 3500, n_test: 1000 },
            model: ModelSection {
                arch: arch.into(),
                depth: don.depth,
                width: don.width,
                r_m: r,
                r_u: r,
                n_tr: don.n_tr,
                d_h: fno.d_h,
                layers: fno.layers,
                k_max: fno.k_max,
                n1: fno.n1,
                n2: fno.n2,
            },
            train: TrainSection {
                epochs: if arch == "fno" { 500 } else { tc.epochs },
                lr: tc.lr,
                batch: tc.batch,
                weight_decay: tc.weight_decay,
            },
            mcmc: McmcSection {
                k_max: cc.k_max,
                k_burn: cc.k_burn,
                beta: if elastic { 0.15 } else { 0.2 },
                noise_fraction: if elastic { 0.01 } else { 0.05 },
                forward: "fem".into(),
                obs_grid: OBS_GRID,
                start: cc.start,
            },
            seed: 0,
            threads: 0,
            deterministic: false,
            paths: PathsSection { data: None, checkpoint: None, resume: None, truth: None, observation: None, out: None },
        }
    }

    /// Defaults, then `file` overrides, then `flags`, all as dotted keys.
    pub fn resolve(file: &BTreeMap<String, Value>, flags: &BTreeMap<String, Value>) -> CliResult<Self> {
        let pick = |key: &str| flags.get(key).or_else(|| file.get(key));
        let problem = match pick("problem") {
            Some(Value::String(s)) => parse_problem(s)?,
            Some(other) => return Err(usage(format!("problem must be a string, got {other}"))),
            None => Problem::Poisson,
        };
        let arch = match pick("model.arch") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => return Err(usage(format!("model.arch must be a string, got {other}"))),
            None => "deeponet".into(),
        };
        if !ARCHITECTURES.contains(&arch.as_str()) {
            return Err(usage(format!("unknown architecture '{arch}' (expected deeponet, pcanet or fno)")));
        }
        let mut flat = flatten(&serde_json::to_value(Self::defaults(problem, &arch))?);
        for source in [file, flags] {
            for (k, v) in source {
                let slot = flat.get_mut(k).ok_or_else(|| usage(format!("unknown config key '{k}'")))?;
                *slot = v.clone();
            }
        }
        let cfg: Self =
            serde_json::from_value(unflatten(&flat)).map_err(|e| usage(format!("invalid config value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, flags: &BTreeMap<String, Value>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let file: BTreeMap<String, Value> =
            serde_json::from_str(&text).map_err(|e| usage(format!("{} is not a flat JSON object: {e}", path.display())))?;
        Self::resolve(&file, flags)
    }

    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        flatten(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn validate(&self) -> CliResult<()> {
        parse_problem(&self.problem)?;
        let m = &self.mesh;
        if m.nx == 0 || m.ny == 0 || !(m.l1 > 0.0) || !(m.l2 > 0.0) {
            return Err(usage("mesh needs positive cell counts and side lengths"));
        }
        let p = &self.prior;
        if !(p.a_c > 0.0) || !(p.b_c > 0.0) || !(p.c_c > 0.0) {
            return Err(usage("prior coefficients a_c, b_c, c_c must be positive"));
        }
        TransformParams::new(p.alpha_m, p.beta_m).map_err(|e| usage(e.to_string()))?;
        let d = &self.dataset;
        if d.n == 0 || d.n_train == 0 || d.n_train + d.n_test > d.n {
            return Err(usage(format!("dataset split {} + {} does not fit N = {}", d.n_train, d.n_test, d.n)));
        }
        if !ARCHITECTURES.contains(&self.model.arch.as_str()) {
            return Err(usage(format!("unknown architecture '{}'", self.model.arch)));
        }
        let t = &self.train;
        if t.batch == 0 || !(t.lr > 0.0) || !(t.weight_decay >= 0.0) {
            return Err(usage("training needs a positive batch size and learning rate"));
        }
        let mc = &self.mcmc;
        if mc.forward != "fem" && !ARCHITECTURES.contains(&mc.forward.as_str()) {
            return Err(usage(format!("unknown forward model '{}' (expected fem, deeponet, pcanet or fno)", mc.forward)));
        }
        if !(mc.noise_fraction > 0.0) || mc.obs_grid < 2 {
            return Err(usage("observation noise fraction must be positive and the grid at least 2x2"));
        }
        self.chain().validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    pub fn problem(&self) -> Problem {
        parse_problem(&self.problem).expect("validated")
    }

    pub fn setup(&self) -> ProblemSetup {
        ProblemSetup {
            problem: self.problem(),
            mesh: MeshParams { nx: self.mesh.nx, ny: self.mesh.ny, l1: self.mesh.l1, l2: self.mesh.l2 },
            prior: PriorParams { a_c: self.prior.a_c, b_c: self.prior.b_c, c_c: self.prior.c_c },
            transform: TransformParams { alpha_m: self.prior.alpha_m, beta_m: self.prior.beta_m },
            preset: LoadPreset::Standard,
        }
    }

    pub fn arch(&self) -> ArchConfig {
        let m = &self.model;
        match m.arch.as_str() {
            "deeponet" => ArchConfig::DeepOnet(DeepOnetConfig { depth: m.depth, width: m.width, n_tr: m.n_tr }),
            "pcanet" => ArchConfig::PcaNet(PcaNetConfig { depth: m.depth, width: m.width, r_m: m.r_m, r_u: m.r_u }),
            _ => ArchConfig::Fno(FnoConfig { n1: m.n1, n2: m.n2, d_h: m.d_h, layers: m.layers, k_max: m.k_max }),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            batch: t.batch,
            weight_decay: t.weight_decay,
            seed: stream(self.seed, 3),
        }
    }

    pub fn chain(&self) -> ChainConfig {
        ChainConfig {
            k_max: self.mcmc.k_max,
            k_burn: self.mcmc.k_burn,
            beta: self.mcmc.beta,
            seed: stream(self.seed, 4),
            start: self.mcmc.start,
        }
    }

    pub fn path(&self, name: &str) -> CliResult<&Path> {
        let p = &self.paths;
        let v = match name {
            "data" => &p.data,
            "checkpoint" => &p.checkpoint,
            "resume" => &p.resume,
            "truth" => &p.truth,
            "observation" => &p.observation,
            _ => &p.out,
        };
        v.as_deref().ok_or_else(|| usage(format!("missing required path paths.{name} (--{name})")))
    }
}

/// Seeds for the separate random consumers of one run.
pub fn stream(seed: u64, purpose: u64) -> u64 {
    seed.wrapping_mul(16).wrapping_add(purpose)
}

fn flatten(v: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(map) => {
                for (k, x) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, x, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", v, &mut out);
    out
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (k, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = k.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("sections are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn map(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn reference_defaults() {
        let c = RunConfig::resolve(&BTreeMap::new(), &BTreeMap::new()).unwrap();
        assert_eq!((c.mesh.nx, c.dataset.n, c.dataset.n_train), (50, 4500, 3500));
        assert_eq!((c.model.r_m, c.train.epochs, c.mcmc.beta), (100, 1000, 0.2));
        let e = RunConfig::resolve(&map(&[("problem", json!("linear_elasticity")), ("model.arch", json!("fno"))]), &BTreeMap::new())
            .unwrap();
        assert_eq!((e.model.r_m, e.train.epochs, e.mcmc.beta, e.prior.beta_m), (50, 500, 0.15, 1000.0));
    }

    #[test]
    fn flags_override_file() {
        let file = map(&[("seed", json!(3)), ("mesh.nx", json!(10))]);
        let flags = map(&[("seed", json!(7))]);
        let c = RunConfig::resolve(&file, &flags).unwrap();
        assert_eq!((c.seed, c.mesh.nx), (7, 10));
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::resolve(&map(&[("model.arch", json!("pcanet")), ("paths.out", json!("x"))]), &BTreeMap::new()).unwrap();
        let again = RunConfig::resolve(&c.to_flat(), &BTreeMap::new()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn rejects_bad_input() {
        let none = BTreeMap::new();
        assert!(matches!(RunConfig::resolve(&map(&[("mesh.nz", json!(1))]), &none), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::resolve(&map(&[("model.arch", json!("cnn"))]), &none), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::resolve(&map(&[("mcmc.beta", json!(1.5))]), &none), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::resolve(&map(&[("mesh.nx", json!("ten"))]), &none), Err(CliError::Usage(_))));
    }
}
