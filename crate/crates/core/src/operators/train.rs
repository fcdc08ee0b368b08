use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{step_lr, Adam, Tape, Tensor, Var};
use crate::rng::substream;

/// A trainable map from a batch of flattened samples to predictions.
pub trait Network {
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];
    /// Shape of one input sample (without the batch axis).
    fn input_shape(&self) -> Vec<usize>;
    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1000, lr: 1e-3, batch: 20, weight_decay: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Last completed epoch (0 before any training).
    pub epoch: usize,
    pub adam: Adam,
    pub log: Vec<LossRecord>,
}

/// Input/target pair with one flattened sample per row.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub x: &'a Matrix,
    pub y: &'a Matrix,
}

impl<'a> Split<'a> {
    pub fn new(x: &'a Matrix, y: &'a Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::shape(format!("{} inputs but {} targets", x.rows(), y.rows())));
        }
        Ok(Self { x, y })
    }
}

fn batch_tensor(m: &Matrix, rows: &[usize], sample_shape: &[usize]) -> Result<Tensor> {
    let mut shape = vec![rows.len()];
    shape.extend_from_slice(sample_shape);
    let mut data = Vec::with_capacity(rows.len() * m.cols());
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Tensor::new(&shape, data)
}

/// Predictions for `rows`, flattened per sample.
pub fn predict_rows<N: Network + ?Sized>(net: &N, x: &Matrix, rows: &[usize]) -> Result<Matrix> {
    let mut tape = Tape::new();
    let params: Vec<Var> = net.params().iter().map(|p| tape.constant(p.clone())).collect();
    let xv = tape.constant(batch_tensor(x, rows, &net.input_shape())?);
    let y = net.forward(&mut tape, &params, xv)?;
    let n = tape.value(y).numel() / rows.len().max(1);
    Matrix::from_vec(rows.len(), n, tape.value(y).data().to_vec())
}

/// Mean squared error over every element of the split.
pub fn dataset_mse<N: Network + ?Sized>(net: &N, split: Split) -> Result<f64> {
    const CHUNK: usize = 64;
    let n = split.x.rows();
    if n == 0 {
        return Ok(f64::NAN);
    }
    let mut sse = 0.0;
    let all: Vec<usize> = (0..n).collect();
    for rows in all.chunks(CHUNK) {
        let pred = predict_rows(net, split.x, rows)?;
        if pred.cols() != split.y.cols() {
            return Err(Error::shape(format!("network emits {} values per sample, targets have {}", pred.cols(), split.y.cols())));
        }
        for (k, &r) in rows.iter().enumerate() {
            sse += pred.row(k).iter().zip(split.y.row(r)).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        }
    }
    Ok(sse / (n * split.y.cols()) as f64)
}

/// Rate used during (1-based) epoch `e`: the schedule advances after each epoch.
pub fn epoch_lr(e: usize, base: f64) -> f64 {
    step_lr(e.saturating_sub(1).max(1), base)
}

/// Mini-batch Adam training with a step schedule.
///
/// Batches are drawn from a shuffle seeded by `(seed, epoch)`, so resuming
/// from a saved [`TrainState`] reproduces an uninterrupted run. `on_epoch` is
/// called after every epoch, e.g. to write checkpoints.
pub fn fit<N: Network>(
    net: &mut N,
    train: Split,
    test: Option<Split>,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&N, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid(format!("batch size {} and learning rate {} must be positive", cfg.batch, cfg.lr)));
    }
    let n = train.x.rows();
    if n == 0 {
        return Err(Error::invalid("empty training set"));
    }
    let mut state = match resume {
        Some(s) => s,
        None => {
            let train_mse = dataset_mse(net, train)?;
            let test_mse = test.map(|t| dataset_mse(net, t)).transpose()?;
            TrainState {
                epoch: 0,
                adam: Adam::new(net.params(), cfg.lr, cfg.weight_decay),
                log: vec![LossRecord { epoch: 0, train_mse, test_mse }],
            }
        }
    };
    let shape = net.input_shape();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in state.epoch + 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut substream(cfg.seed, epoch as u64));
        state.adam.lr = epoch_lr(epoch, cfg.lr);
        for rows in order.chunks(cfg.batch) {
            let mut tape = Tape::new();
            let params: Vec<Var> = net.params().iter().map(|p| tape.param(p.clone())).collect();
            let xv = tape.constant(batch_tensor(train.x, rows, &shape)?);
            let pred = net.forward(&mut tape, &params, xv)?;
            let target = batch_tensor(train.y, rows, &tape.value(pred).shape()[1..])?;
            let yv = tape.constant(target);
            let loss = tape.mse(pred, yv)?;
            tape.backward(loss)?;
            let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.numel()]).collect();
            let grads: Vec<&[f64]> =
                params.iter().zip(&zeros).map(|(v, z)| tape.grad(*v).unwrap_or(z.as_slice())).collect();
            state.adam.update(net.params_mut(), &grads)?;
        }
        let train_mse = dataset_mse(net, train)?;
        if !train_mse.is_finite() {
            return Err(Error::Range(format!("training diverged at epoch {epoch}")));
        }
        let test_mse = test.map(|t| dataset_mse(net, t)).transpose()?;
        state.epoch = epoch;
        state.log.push(LossRecord { epoch, train_mse, test_mse });
        on_epoch(net, &state)?;
    }
    Ok(state)
}

/// Loss log as CSV with columns `epoch,train_mse,test_mse`.
pub fn loss_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("epoch,train_mse,test_mse\n");
    for r in log {
        let test = r.test_mse.map_or(String::new(), |v| format!("{v:e}"));
        s.push_str(&format!("{},{:e},{}\n", r.epoch, r.train_mse, test));
    }
    s
}
