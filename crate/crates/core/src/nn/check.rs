use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares tape gradients of a scalar loss with central differences.
///
/// `build` records the loss on a fresh tape from parameter handles. Each
/// parameter entry (at most `max_entries` per tensor, evenly strided) is
/// perturbed by `±h`. The relative error uses
/// `|a − n| / max(|a|, |n|, floor)` where `floor = 1e-3 · max |gradient|`, so
/// entries with vanishing gradient are judged against the gradient scale.
pub fn gradient_check<F>(params: &[Tensor], h: f64, max_entries: usize, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let l = build(&mut tape, &vars)?;
        Ok(tape.value(l).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| tape.grad(*v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
        .collect();
    let scale = analytic.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-3 * scale).max(1e-12);

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, p) in params.iter().enumerate() {
        let n = p.numel();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = p.data()[i];
            work[k].data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[k][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheck { max_rel_error: worst, checked })
}
