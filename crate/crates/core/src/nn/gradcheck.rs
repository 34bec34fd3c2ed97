use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (input, flat index) of the worst coordinate.
    pub worst: (usize, usize),
}

const ABS_FLOOR: f64 = 1e-6;

fn eval<F>(inputs: &[Tensor], build: &F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).item()
}

fn check_coords<F>(inputs: &[Tensor], step: f64, coords: &[(usize, usize)], build: &F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v, t.shape()))
        .collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    let mut work = inputs.to_vec();
    for &(k, i) in coords {
        let orig = work[k].data()[i];
        work[k].data_mut()[i] = orig + step;
        let fp = eval(&work, build);
        work[k].data_mut()[i] = orig - step;
        let fm = eval(&work, build);
        work[k].data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[k].data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
        if err > report.max_rel_err || report.checked == 0 {
            report.max_rel_err = err;
            report.worst = (k, i);
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Compares reverse-mode gradients of `build` with central finite
/// differences over every input coordinate.
pub fn gradcheck<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i)))
        .collect();
    check_coords(inputs, step, &coords, &build)
}

/// Like [`gradcheck`] but over `n` coordinates drawn uniformly with `seed`.
pub fn gradcheck_sampled<F>(inputs: &[Tensor], step: f64, n: usize, seed: u64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let total: usize = inputs.iter().map(Tensor::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<(usize, usize)> = (0..n.min(total))
        .map(|_| {
            let mut flat = rng.random_range(0..total);
            let mut k = 0;
            while flat >= inputs[k].len() {
                flat -= inputs[k].len();
                k += 1;
            }
            (k, flat)
        })
        .collect();
    check_coords(inputs, step, &coords, &build)
}
