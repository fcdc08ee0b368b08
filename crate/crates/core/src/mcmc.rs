//! Bayesian inversion with preconditioned Crank-Nicolson MCMC.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::write_f64;
use crate::error::{Error, Result};
use crate::fem::{Mesh, MeshParams, NodalField, PointInterpolator};
use crate::forward::ForwardModel;
use crate::grf::{transform_lognormal, GaussianPrior, TransformParams};
use crate::operators::Surrogate;
use crate::rng::rng_from_seed;

/// Points per side of the observation grid.
pub const OBS_GRID: usize = 16;

/// Retained samples are flushed to disk in blocks of this many iterations.
pub const TRACE_BLOCK: usize = 100;

/// Consecutive forward failures tolerated before a chain aborts.
pub const MAX_CONSECUTIVE_FAILURES: usize = 3;

/// `n x n` points spanning the closed domain, `x` fastest: index `j * n + i`
/// sits at `(i L1/(n-1), j L2/(n-1))`.
pub fn observation_grid(mesh: &Mesh, n: usize) -> Result<Vec<[f64; 2]>> {
    if n < 2 {
        return Err(Error::invalid(format!("observation grid needs at least 2 points per side, got {n}")));
    }
    let h = |l: f64, i: usize| i as f64 * l / (n - 1) as f64;
    Ok((0..n).flat_map(|j| (0..n).map(move |i| [h(mesh.l1(), i), h(mesh.l2(), j)])).collect())
}

/// Gridded data `o` with its noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub points: Vec<[f64; 2]>,
    /// Component-blocked values, `components * points.len()` long.
    pub data: Vec<f64>,
    pub sigma: f64,
    pub components: usize,
}

impl Observation {
    pub fn new(points: Vec<[f64; 2]>, data: Vec<f64>, sigma: f64, components: usize) -> Result<Self> {
        if data.len() != components * points.len() {
            return Err(Error::shape(format!(
                "{} observations for {} points with {components} components",
                data.len(),
                points.len()
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("observation noise must be positive, got {sigma}")));
        }
        Ok(Self { points, data, sigma, components })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interpolation from `mesh` nodes to the observation points.
    pub fn operator(&self, mesh: &Mesh) -> Result<PointInterpolator> {
        PointInterpolator::new(mesh, &self.points)
    }
}

/// Interpolates `u` at the observation points, component-blocked.
pub fn observe(u: &NodalField, op: &PointInterpolator) -> Result<Vec<f64>> {
    op.apply(u)
}

/// Likelihood potential `0.5 |u_obs - o|^2 / sigma^2`.
pub fn potential(u_obs: &[f64], obs: &Observation) -> Result<f64> {
    if u_obs.len() != obs.len() {
        return Err(Error::shape(format!("{} predicted observations, {} data", u_obs.len(), obs.len())));
    }
    let r2: f64 = u_obs.iter().zip(&obs.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * r2 / (obs.sigma * obs.sigma))
}

/// A prior draw expressed through its noise, so the log prior can be tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPoint {
    pub w: NodalField,
    pub noise: Vec<f64>,
}

/// pCN proposal `v = mean + sqrt(1 - beta^2) (w - mean) + beta xi` with `xi`
/// a fresh mean-zero prior fluctuation.
pub fn pcn_propose<R: Rng + ?Sized>(current: &PriorPoint, prior: &GaussianPrior, beta: f64, rng: &mut R) -> Result<PriorPoint> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("pCN step must lie in [0, 1], got {beta}")));
    }
    let s = prior.draw_noise(rng);
    let xi = prior.fluctuation(&s)?;
    let c = (1.0 - beta * beta).sqrt();
    let w = current
        .w
        .values()
        .iter()
        .zip(prior.mean().values())
        .zip(&xi)
        .map(|((w, m), x)| m + c * (w - m) + beta * x)
        .collect();
    let noise = current.noise.iter().zip(&s).map(|(a, b)| c * a + beta * b).collect();
    Ok(PriorPoint { w: NodalField::scalar(w)?, noise })
}

/// Accepts iff `phi_current - phi_proposed > ln U` with `U` uniform on `(0, 1]`.
/// The uniform is always drawn, so the random stream does not depend on the potentials.
pub fn pcn_accept<R: Rng + ?Sized>(phi_current: f64, phi_proposed: f64, rng: &mut R) -> bool {
    let u = 1.0 - rng.random::<f64>();
    phi_current - phi_proposed > u.ln()
}

/// Forward map used by the chain.
#[derive(Clone, Copy)]
pub enum ChainForward<'a> {
    /// Finite elements; receives `w` and transforms internally.
    Fem(&'a dyn ForwardModel),
    /// Surrogate trained on transformed parameters; `w` is transformed first.
    Surrogate { model: &'a dyn Surrogate, tag: &'a str, transform: TransformParams },
}

impl ChainForward<'_> {
    pub fn tag(&self) -> &str {
        match self {
            ChainForward::Fem(_) => "fem",
            ChainForward::Surrogate { tag, .. } => tag,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        match self {
            ChainForward::Fem(m) => m.mesh(),
            ChainForward::Surrogate { model, .. } => model.mesh(),
        }
    }

    pub fn solve(&self, w: &NodalField) -> Result<NodalField> {
        match self {
            ChainForward::Fem(m) => m.solve_fwd(w, true),
            ChainForward::Surrogate { model, transform, .. } => model.predict(&transform_lognormal(w, *transform)?),
        }
    }
}

/// Where the chain starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChainStart {
    /// A draw from the prior.
    #[default]
    PriorDraw,
    /// The prior mean, i.e. zero noise.
    PriorMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub k_max: usize,
    pub k_burn: usize,
    pub beta: f64,
    pub seed: u64,
    #[serde(default)]
    pub start: ChainStart,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { k_max: 10500, k_burn: 500, beta: 0.2, seed: 0, start: ChainStart::PriorDraw }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_burn >= self.k_max {
            return Err(Error::invalid(format!("burn-in {} must be below the chain length {}", self.k_burn, self.k_max)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("pCN step must lie in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub accepted: bool,
    pub running_acceptance_rate: f64,
    pub log_prior: f64,
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    /// Average of the retained `w` samples.
    pub posterior_mean_w: NodalField,
    pub records: Vec<IterationRecord>,
    pub retained: usize,
    pub acceptance_rate: f64,
    /// Forward failures or non-finite potentials, each counted as a rejection.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config: ChainConfig,
    pub forward: String,
    pub mesh: MeshParams,
    pub sigma: f64,
    pub dim: usize,
    pub retained: usize,
    pub blocks: usize,
    pub complete: bool,
}

struct TraceWriter {
    dir: PathBuf,
    csv: BufWriter<fs::File>,
    meta: TraceMeta,
    pending: Vec<f64>,
}

impl TraceWriter {
    fn create(dir: &Path, meta: TraceMeta) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(fs::File::create(dir.join("trace.csv"))?);
        writeln!(csv, "iteration,cost,accepted,running_acceptance_rate,log_prior")?;
        let w = Self { dir: dir.into(), csv, meta, pending: Vec::new() };
        w.write_meta()?;
        Ok(w)
    }

    fn write_meta(&self) -> Result<()> {
        fs::write(self.dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    fn record(&mut self, r: &IterationRecord, retained: Option<&NodalField>) -> Result<()> {
        writeln!(
            self.csv,
            "{},{:e},{},{:e},{:e}",
            r.iteration,
            r.cost,
            u8::from(r.accepted),
            r.running_acceptance_rate,
            r.log_prior
        )?;
        if let Some(w) = retained {
            self.pending.extend_from_slice(w.values());
            self.meta.retained += 1;
        }
        if r.iteration % TRACE_BLOCK == 0 {
            self.flush(false)?;
        }
        Ok(())
    }

    fn flush(&mut self, complete: bool) -> Result<()> {
        if !self.pending.is_empty() {
            write_f64(&self.dir.join(format!("samples_{:05}.bin", self.meta.blocks)), &self.pending)?;
            self.pending.clear();
            self.meta.blocks += 1;
        }
        self.csv.flush()?;
        self.meta.complete = complete;
        self.write_meta()
    }
}

/// Reads every retained sample of a trace directory, one row per sample.
pub fn read_trace_samples(dir: &Path) -> Result<(TraceMeta, Vec<Vec<f64>>)> {
    let meta: TraceMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let mut rows = Vec::with_capacity(meta.retained);
    for b in 0..meta.blocks {
        let v = crate::binio::read_f64(&dir.join(format!("samples_{b:05}.bin")), None)?;
        rows.extend(v.chunks(meta.dim).map(<[f64]>::to_vec));
    }
    if rows.len() != meta.retained {
        return Err(Error::Format { path: dir.into(), reason: format!("{} samples stored, {} declared", rows.len(), meta.retained) });
    }
    Ok((meta, rows))
}

struct State {
    point: PriorPoint,
    cost: f64,
    log_prior: f64,
}

fn evaluate(forward: &ChainForward, op: &PointInterpolator, obs: &Observation, w: &NodalField) -> Result<f64> {
    let u = forward.solve(w)?;
    let phi = potential(&observe(&u, op)?, obs)?;
    if phi.is_finite() {
        Ok(phi)
    } else {
        Err(Error::Range(format!("non-finite potential {phi}")))
    }
}

/// Runs a pCN chain of `k_max` steps from `cfg.start`, keeping
/// samples after `k_burn`. With `trace_dir`, the trace is written every
/// [`TRACE_BLOCK`] iterations and on completion or abort.
pub fn run_chain(
    cfg: &ChainConfig,
    forward: ChainForward,
    prior: &GaussianPrior,
    obs: &Observation,
    trace_dir: Option<&Path>,
) -> Result<ChainResult> {
    cfg.validate()?;
    let mesh = forward.mesh().clone();
    if mesh.node_count() != prior.dim() {
        return Err(Error::MeshMismatch(format!(
            "forward model on {} nodes, prior on {}",
            mesh.node_count(),
            prior.dim()
        )));
    }
    let op = obs.operator(&mesh)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut writer = trace_dir
        .map(|d| {
            TraceWriter::create(
                d,
                TraceMeta {
                    config: *cfg,
                    forward: forward.tag().into(),
                    mesh: mesh.params(),
                    sigma: obs.sigma,
                    dim: prior.dim(),
                    retained: 0,
                    blocks: 0,
                    complete: false,
                },
            )
        })
        .transpose()?;

    let mut init_failures = 0;
    let mut current = loop {
        let (w, noise) = match cfg.start {
            ChainStart::PriorDraw => prior.sample(&mut rng)?,
            ChainStart::PriorMean => (prior.mean().clone(), vec![0.0; prior.dim()]),
        };
        match evaluate(&forward, &op, obs, &w) {
            Ok(cost) => {
                let log_prior = prior.log_prior(&noise)?;
                break State { point: PriorPoint { w, noise }, cost, log_prior };
            }
            Err(e) => {
                init_failures += 1;
                if init_failures >= MAX_CONSECUTIVE_FAILURES || cfg.start == ChainStart::PriorMean {
                    if let Some(w) = writer.as_mut() {
                        w.flush(false)?;
                    }
                    return Err(Error::ChainAborted { iteration: 0, reason: e.to_string() });
                }
            }
        }
    };

    let n = prior.dim();
    let mut sum = vec![0.0; n];
    let mut records = Vec::with_capacity(cfg.k_max);
    let (mut accepted_total, mut failures, mut streak) = (0usize, 0usize, 0usize);
    for k in 1..=cfg.k_max {
        let proposal = pcn_propose(&current.point, prior, cfg.beta, &mut rng)?;
        let outcome = evaluate(&forward, &op, obs, &proposal.w);
        // The uniform is drawn whatever the outcome to keep the stream aligned.
        let accepted = match outcome {
            Ok(phi) => {
                streak = 0;
                let acc = pcn_accept(current.cost, phi, &mut rng);
                if acc {
                    let log_prior = prior.log_prior(&proposal.noise)?;
                    current = State { point: proposal, cost: phi, log_prior };
                }
                acc
            }
            Err(e) => {
                let _ = pcn_accept(0.0, 0.0, &mut rng);
                failures += 1;
                streak += 1;
                if streak >= MAX_CONSECUTIVE_FAILURES {
                    if let Some(w) = writer.as_mut() {
                        w.flush(false)?;
                    }
                    return Err(Error::ChainAborted { iteration: k, reason: e.to_string() });
                }
                false
            }
        };
        accepted_total += usize::from(accepted);
        let rec = IterationRecord {
            iteration: k,
            cost: current.cost,
            accepted,
            running_acceptance_rate: accepted_total as f64 / k as f64,
            log_prior: current.log_prior,
        };
        let keep = k > cfg.k_burn;
        if keep {
            for (s, v) in sum.iter_mut().zip(current.point.w.values()) {
                *s += v;
            }
        }
        if let Some(w) = writer.as_mut() {
            w.record(&rec, keep.then_some(&current.point.w))?;
        }
        records.push(rec);
    }
    if let Some(w) = writer.as_mut() {
        w.flush(true)?;
    }
    let retained = cfg.k_max - cfg.k_burn;
    let mean = sum.into_iter().map(|s| s / retained as f64).collect();
    Ok(ChainResult {
        posterior_mean_w: NodalField::scalar(mean)?,
        records,
        retained,
        acceptance_rate: accepted_total as f64 / cfg.k_max as f64,
        failures,
    })
}

/// Noiseless synthetic data from `true_w`, with `sigma = fraction * mean(o)`.
pub fn make_observation(model: &dyn ForwardModel, true_w: &NodalField, noise_fraction: f64, grid: usize) -> Result<Observation> {
    let u = model.solve_fwd(true_w, true)?;
    let points = observation_grid(model.mesh(), grid)?;
    let op = PointInterpolator::new(model.mesh(), &points)?;
    let data = observe(&u, &op)?;
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    Observation::new(points, data, noise_fraction * mean, model.components())
}

/// Name of the synthetic ground-truth generator, recorded next to its output.
pub const TRUTH_GENERATOR: &str = "gaussian-bumps-v1";

/// Synthetic ground truth `w`: three Gaussian bumps with centres in the middle
/// 60% of the domain, widths in `[0.2, 0.35] min(L1, L2)` and amplitudes of
/// magnitude `[0.5, 1]` with random sign, all drawn from `seed`.
pub fn synthetic_truth(mesh: &Mesh, seed: u64) -> NodalField {
    let mut rng = rng_from_seed(seed);
    let side = mesh.l1().min(mesh.l2());
    let bumps: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            let cx = mesh.l1() * rng.random_range(0.2..0.8);
            let cy = mesh.l2() * rng.random_range(0.2..0.8);
            let width = side * rng.random_range(0.2..0.35);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            [cx, cy, width, sign * rng.random_range(0.5..1.0)]
        })
        .collect();
    NodalField::from_fn(mesh, |x, y| {
        bumps.iter().map(|[cx, cy, s, a]| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp()).sum()
    })
}
