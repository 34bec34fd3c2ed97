//! The mechanistic decoder as a differentiable tape operation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mechsim::{glucose_vjp, simulate, MechParams, MechState, SimConfig, Trajectory};
use crate::nn::{CustomOp, Tape, Tensor, Var};
use crate::transforms::{LatentLayout, LATENT_DIM};
use crate::SEQ_LEN;

struct OdeOp {
    runs: Vec<(Trajectory, MechParams)>,
    sim: SimConfig,
}

impl CustomOp for OdeOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let rows = inputs[0].rows();
        let per_row: Vec<Vec<f64>> = self
            .runs
            .par_iter()
            .enumerate()
            .map(|(b, (traj, params))| {
                let g = glucose_vjp(traj, params, &self.sim, grad_out.row(b));
                let mut out = g.u;
                out.extend_from_slice(&g.x0);
                out.extend_from_slice(&g.w);
                out
            })
            .collect();
        vec![Tensor::from_vec(rows, LATENT_DIM, per_row.concat())]
    }
}

fn split(latent: &[f64]) -> (Vec<f64>, MechState, MechParams) {
    (
        latent[LatentLayout::U].to_vec(),
        MechState::from_slice(&latent[LatentLayout::X0]),
        MechParams::from_slice(&latent[LatentLayout::W]),
    )
}

/// Simulates every row of a constrained latent batch (`B x 70`) and returns
/// glucose (`B x 60`). `ids` name the rows for error reporting.
pub fn simulate_batch(tape: &mut Tape, latent: Var, sim: &SimConfig, ids: &[&str]) -> Result<Var> {
    let value = tape.value(latent);
    assert_eq!(value.cols(), LATENT_DIM);
    assert_eq!(value.rows(), ids.len());
    let runs: Vec<(Trajectory, MechParams)> = (0..value.rows())
        .into_par_iter()
        .map(|b| {
            let (u, x0, w) = split(value.row(b));
            simulate(&x0, &w, &u, sim)
                .map(|t| (t, w))
                .map_err(|_| Error::RecordBlowup(ids[b].to_string()))
        })
        .collect::<Result<_>>()?;
    let glucose: Vec<f64> = runs.iter().flat_map(|(t, _)| t.glucose()).collect();
    let out = Tensor::from_vec(runs.len(), SEQ_LEN, glucose);
    Ok(tape.custom(&[latent], out, Box::new(OdeOp { runs, sim: *sim })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck_sampled;
    use crate::transforms::LatentLayout;

    #[test]
    fn batched_decoder_gradient_matches_finite_differences() {
        let mut rows = Vec::new();
        for b in 0..2 {
            let mut z = vec![0.0; LATENT_DIM];
            for t in 10..14 {
                z[t] = 300.0 + 100.0 * b as f64;
            }
            z[60..64].copy_from_slice(&[110.0 + 20.0 * b as f64, 1e-3, 0.1, 2.0]);
            z[64..70].copy_from_slice(&[25.0, 100.0, 0.01, 0.03, 4e-4, 1.2]);
            rows.extend(z);
        }
        let latent = Tensor::from_vec(2, LATENT_DIM, rows);
        let weights = Tensor::from_vec(2, SEQ_LEN, (0..120).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.4).collect());
        let sim = SimConfig::default();
        // Perturbations are scaled per coordinate so the step is meaningful.
        let scales: Vec<f64> = (0..LATENT_DIM)
            .map(|d| LatentLayout::transform(d).width())
            .collect();
        let unit = Tensor::from_vec(2, LATENT_DIM, (0..2 * LATENT_DIM).map(|i| latent.data()[i] / scales[i % LATENT_DIM]).collect());
        let report = gradcheck_sampled(&[unit], 1e-4, 50, 3, |tape, v| {
            let scale_row: Vec<f64> = scales.clone();
            let z = tape.affine_cols(v[0], &scale_row, &[0.0; LATENT_DIM]);
            let g = simulate_batch(tape, z, &sim, &["a", "b"]).unwrap();
            let m = tape.mul_const(g, weights.clone());
            tape.sum(m)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }
}
