//! One function per subcommand. Each writes its outputs, plus the resolved
//! configuration as `config.json`, into `paths.out`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use operon_core::binio::{read_f64, write_f64};
use operon_core::data::{generate, Dataset};
use operon_core::dimred::{fit_normalizer, fit_projector, spectrum_csv};
use operon_core::fem::NodalField;
use operon_core::grf::transform_lognormal;
use operon_core::matrix::{median, relative_l2};
use operon_core::mcmc::{make_observation, run_chain, synthetic_truth, ChainForward, Observation, TRUTH_GENERATOR};
use operon_core::operators::{load_checkpoint, save_checkpoint, GridTransfer, OperatorModel, Split, Surrogate};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{stream, RunConfig};
use crate::error::{CliError, CliResult};

/// File names inside a truth directory.
pub const TRUTH_W: &str = "truth_w.bin";
pub const TRUTH_M: &str = "truth_m.bin";
pub const TRUTH_U: &str = "truth_u.bin";
pub const OBSERVATION: &str = "observation.json";

fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// Creates the output directory and echoes the resolved configuration.
fn prepare_out(cfg: &RunConfig) -> CliResult<&Path> {
    let out = cfg.path("out")?;
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg.to_flat())?;
    Ok(out)
}

/// Adds elapsed seconds unless the run is deterministic.
fn timed(cfg: &RunConfig, mut report: Value, start: Instant) -> Value {
    if !cfg.deterministic {
        report["seconds"] = json!(start.elapsed().as_secs_f64());
    }
    report
}

fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let ds = Dataset::read(cfg.path("data")?)?;
    if ds.meta.setup != cfg.setup() {
        return Err(CliError::Usage(format!(
            "dataset was generated for a different problem setup ({:?}); pass matching problem, mesh and prior keys",
            ds.meta.setup
        )));
    }
    Ok(ds)
}

fn load_model(cfg: &RunConfig, path: &Path) -> CliResult<OperatorModel> {
    let (model, meta, _) = load_checkpoint(path)?;
    if meta.mesh != cfg.setup().mesh {
        return Err(CliError::Usage(format!("checkpoint {} was trained on another mesh", path.display())));
    }
    Ok(model)
}

pub fn gen(cfg: &RunConfig) -> CliResult<()> {
    let start = Instant::now();
    let out = prepare_out(cfg)?;
    let setup = cfg.setup();
    let model = setup.build()?;
    let mut ds = generate(model.as_ref(), setup, cfg.dataset.n, stream(cfg.seed, 0))?;
    ds.split(cfg.dataset.n_train, cfg.dataset.n_test, stream(cfg.seed, 1))?;
    if cfg.model.arch == "fno" {
        ds.to_grid(&GridTransfer::new(model.mesh().clone(), cfg.model.n1, cfg.model.n2)?)?;
    }
    ds.write(out)?;
    let report = json!({ "n": ds.meta.n, "redraws": ds.meta.redraws, "components": ds.meta.components });
    write_json(&out.join("gen_report.json"), &timed(cfg, report, start))
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let start = Instant::now();
    let out = prepare_out(cfg)?;
    let ds = load_dataset(cfg)?;
    let mesh = ds.mesh()?;
    let (tx, ty) = ds.train_rows();
    let (vx, vy) = ds.test_rows();
    let train = Split::new(&tx, &ty)?;
    let test = if vx.rows() > 0 { Some(Split::new(&vx, &vy)?) } else { None };
    let init_seed = stream(cfg.seed, 2);
    let (mut model, resume) = match &cfg.paths.resume {
        Some(dir) => {
            let (model, meta, state) = load_checkpoint(dir)?;
            if meta.model != cfg.arch() {
                return Err(CliError::Usage(format!("checkpoint {} holds a different architecture", dir.display())));
            }
            (model, state)
        }
        None => (OperatorModel::build(mesh, ds.meta.components, &cfg.arch(), train, init_seed)?, None),
    };
    let tc = cfg.train_config();
    let state = model.train(train, test, &tc, resume, |_, _| Ok(()))?;
    save_checkpoint(out, model.view(), init_seed, Some(&tc), Some(&state))?;
    let first = state.log.first().map(|r| r.train_mse);
    let last = state.log.last().map(|r| r.train_mse);
    let report = json!({
        "architecture": model.tag(),
        "epochs": state.epoch,
        "initial_train_mse": first,
        "final_train_mse": last,
        "final_test_mse": state.log.last().and_then(|r| r.test_mse),
    });
    write_json(&out.join("train_report.json"), &timed(cfg, report, start))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub architecture: String,
    pub n: usize,
    pub median_percent: f64,
    pub mean_percent: f64,
    pub max_percent: f64,
}

/// Per-sample relative L2 errors in percent, as `(dataset index, error)`.
pub fn eval_errors(model: &dyn Surrogate, ds: &Dataset) -> CliResult<Vec<(usize, f64)>> {
    let mut rows = Vec::with_capacity(ds.meta.test_indices.len());
    for &i in &ds.meta.test_indices {
        let m = NodalField::scalar(ds.x.row(i).to_vec())?;
        let u = model.predict(&m)?;
        rows.push((i, 100.0 * relative_l2(u.values(), ds.y.row(i))));
    }
    Ok(rows)
}

pub fn summarize(architecture: &str, errors: &[(usize, f64)]) -> EvalSummary {
    let e: Vec<f64> = errors.iter().map(|r| r.1).collect();
    EvalSummary {
        architecture: architecture.into(),
        n: e.len(),
        median_percent: median(&e),
        mean_percent: e.iter().sum::<f64>() / e.len().max(1) as f64,
        max_percent: e.iter().cloned().fold(0.0, f64::max),
    }
}

pub fn eval(cfg: &RunConfig) -> CliResult<EvalSummary> {
    let out = prepare_out(cfg)?;
    let ds = load_dataset(cfg)?;
    if ds.meta.test_indices.is_empty() {
        return Err(CliError::Usage("dataset has no test rows".into()));
    }
    let model = load_model(cfg, cfg.path("checkpoint")?)?;
    let errors = eval_errors(&model, &ds)?;
    let mut csv = String::from("sample,relative_l2_percent\n");
    for (i, e) in &errors {
        csv.push_str(&format!("{i},{e:e}\n"));
    }
    fs::write(out.join("errors.csv"), csv)?;
    let summary = summarize(model.tag(), &errors);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn truth(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare_out(cfg)?;
    let model = cfg.setup().build()?;
    let w = synthetic_truth(model.mesh(), cfg.seed);
    let m = transform_lognormal(&w, model.transform())?;
    let u = model.solve(&m)?;
    let obs = make_observation(model.as_ref(), &w, cfg.mcmc.noise_fraction, cfg.mcmc.obs_grid)?;
    write_f64(&out.join(TRUTH_W), w.values())?;
    write_f64(&out.join(TRUTH_M), m.values())?;
    write_f64(&out.join(TRUTH_U), u.values())?;
    write_json(&out.join(OBSERVATION), &obs)?;
    write_json(
        &out.join("truth.json"),
        &json!({ "generator": TRUTH_GENERATOR, "seed": cfg.seed, "nodes": w.node_count(), "sigma": obs.sigma }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcReport {
    pub forward: String,
    pub acceptance_rate: f64,
    pub failures: usize,
    pub retained: usize,
    pub final_cost: f64,
    /// Relative L2 error of `transform(mean w)` against the true `m`.
    pub posterior_mean_m_error: Option<f64>,
    pub posterior_mean_w_error: Option<f64>,
}

pub fn mcmc(cfg: &RunConfig) -> CliResult<McmcReport> {
    let start = Instant::now();
    let out = prepare_out(cfg)?;
    let fem = cfg.setup().build()?;
    let obs_path = match (&cfg.paths.observation, &cfg.paths.truth) {
        (Some(p), _) => p.clone(),
        (None, Some(t)) => t.join(OBSERVATION),
        (None, None) => return Err(CliError::Usage("missing required path paths.observation (--observation)".into())),
    };
    let obs: Observation = serde_json::from_str(&fs::read_to_string(&obs_path)?)?;
    let obs = Observation::new(obs.points, obs.data, obs.sigma, obs.components)?;
    let surrogate;
    let forward = if cfg.mcmc.forward == "fem" {
        ChainForward::Fem(fem.as_ref())
    } else {
        surrogate = load_model(cfg, cfg.path("checkpoint")?)?;
        if surrogate.tag() != cfg.mcmc.forward {
            return Err(CliError::Usage(format!(
                "checkpoint holds a {} model but mcmc.forward is {}",
                surrogate.tag(),
                cfg.mcmc.forward
            )));
        }
        ChainForward::Surrogate { model: &surrogate, tag: surrogate.tag(), transform: fem.transform() }
    };
    if obs.components != fem.components() {
        return Err(CliError::Usage("observation components do not match the problem".into()));
    }
    let result = run_chain(&cfg.chain(), forward, fem.prior(), &obs, Some(&out.join("trace")))?;
    let mean_m = transform_lognormal(&result.posterior_mean_w, fem.transform())?;
    write_f64(&out.join("posterior_mean_w.bin"), result.posterior_mean_w.values())?;
    write_f64(&out.join("posterior_mean_m.bin"), mean_m.values())?;
    let (mut m_err, mut w_err) = (None, None);
    if let Some(t) = &cfg.paths.truth {
        let n = fem.mesh().node_count();
        let true_w = read_f64(&t.join(TRUTH_W), Some(n))?;
        let true_m = read_f64(&t.join(TRUTH_M), Some(n))?;
        w_err = Some(relative_l2(result.posterior_mean_w.values(), &true_w));
        m_err = Some(relative_l2(mean_m.values(), &true_m));
    }
    let report = McmcReport {
        forward: cfg.mcmc.forward.clone(),
        acceptance_rate: result.acceptance_rate,
        failures: result.failures,
        retained: result.retained,
        final_cost: result.records.last().map_or(f64::NAN, |r| r.cost),
        posterior_mean_m_error: m_err,
        posterior_mean_w_error: w_err,
    };
    write_json(&out.join("report.json"), &timed(cfg, serde_json::to_value(&report)?, start))?;
    Ok(report)
}

pub fn spectrum(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare_out(cfg)?;
    let ds = load_dataset(cfg)?;
    let (x, y) = ds.train_rows();
    for (name, data) in [("input", &x), ("output", &y)] {
        let norm = fit_normalizer(data)?;
        let proj = fit_projector(&norm.apply_rows(data)?, 1)?;
        fs::write(out.join(format!("spectrum_{name}.csv")), spectrum_csv(&proj.singular_values))?;
    }
    Ok(())
}
