//! Per-record mechanistic fit by gradient descent on ODE parameters and initial state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::datamodel::{Dataset, PpgrRecord};
use crate::error::{Error, Result};
use crate::hybridvae::MechEmbedding;
use crate::mechsim::{carbs_to_rate, glucose_vjp, simulate, MechParams, MechState, SimConfig};
use crate::nn::{adam_step, AdamConfig, AdamState, Tensor};
use crate::transforms::{IntervalTransform, W_PRIOR_MEAN, W_RANGES, X0_RANGES};
use crate::{DT_OBS, MEAL_INDEX, SEQ_LEN};

/// Minimum observed glucose points for a fit.
pub const MIN_OBSERVED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechFitConfig {
    pub steps: usize,
    pub lr: f64,
    /// Sd of the unconstrained jitter added to the data-driven start.
    pub init_jitter: f64,
    pub seed: u64,
    pub sim: SimConfig,
}

impl Default for MechFitConfig {
    fn default() -> Self {
        MechFitConfig {
            steps: 2000,
            lr: 0.01,
            init_jitter: 0.1,
            seed: 0,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechFitResult {
    pub params: MechParams,
    pub x0: MechState,
    pub initial_mse: f64,
    pub mse: f64,
    pub iterations: usize,
    /// Fitted trajectory at the returned optimum.
    pub glucose: Vec<f64>,
    /// The carb-rate profile the fit was conditioned on.
    pub u: Vec<f64>,
}

impl MechFitResult {
    pub fn rmse(&self) -> f64 {
        self.mse.sqrt()
    }

    /// Same layout as the hybrid embedding; the last entry is the total of the
    /// conditioning carb-rate profile, in mg.
    pub fn embedding(&self) -> MechEmbedding {
        MechEmbedding {
            tau_m: self.params.tau_m,
            g_b: self.params.g_b,
            s_g: self.params.s_g,
            p_2: self.params.p_2,
            si_mi: self.params.s_i * self.params.m_i,
            g0: self.x0.g,
            total_u: self.u.iter().sum::<f64>() * DT_OBS,
        }
    }
}

fn ranges() -> Vec<IntervalTransform> {
    W_RANGES.iter().chain(X0_RANGES.iter()).copied().collect()
}

/// Keeps a starting value strictly inside its interval.
fn interior(t: IntervalTransform, v: f64) -> f64 {
    let pad = 1e-3 * t.width();
    v.clamp(t.lo + pad, t.hi - pad)
}

fn initial_guess(record: &PpgrRecord) -> Vec<f64> {
    let obs: Vec<(usize, f64)> = record
        .glucose
        .iter()
        .enumerate()
        .filter_map(|(t, g)| g.map(|g| (t, g)))
        .collect();
    let pre: Vec<f64> = obs.iter().filter(|(t, _)| *t <= MEAL_INDEX).map(|&(_, g)| g).collect();
    let basal = if pre.is_empty() {
        obs.iter().map(|&(_, g)| g).fold(f64::INFINITY, f64::min)
    } else {
        pre.iter().sum::<f64>() / pre.len() as f64
    };
    let mut w = W_PRIOR_MEAN;
    w[1] = basal;
    let x0 = [obs[0].1, 1e-3, 0.1, 2.0];
    w.iter()
        .chain(x0.iter())
        .zip(ranges())
        .map(|(&v, t)| t.unconstrain(interior(t, v)).expect("interior value"))
        .collect()
}

struct Objective<'a> {
    record: &'a PpgrRecord,
    u: &'a [f64],
    sim: SimConfig,
    n_obs: f64,
}

impl Objective<'_> {
    fn split(theta: &[f64]) -> (MechParams, MechState) {
        let c: Vec<f64> = theta.iter().zip(ranges()).map(|(&v, t)| t.constrain(v)).collect();
        (MechParams::from_slice(&c[..6]), MechState::from_slice(&c[6..]))
    }

    /// MSE and its gradient in unconstrained coordinates; `None` if the ODE fails.
    fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let (w, x0) = Self::split(theta);
        let traj = simulate(&x0, &w, self.u, &self.sim).ok()?;
        let g = traj.glucose();
        let mut grad_g = vec![0.0; SEQ_LEN];
        let mut mse = 0.0;
        for (t, obs) in self.record.glucose.iter().enumerate() {
            if let Some(x) = obs {
                let r = g[t] - x;
                mse += r * r / self.n_obs;
                grad_g[t] = 2.0 * r / self.n_obs;
            }
        }
        let sg = glucose_vjp(&traj, &w, &self.sim, &grad_g);
        let grad: Vec<f64> = sg
            .w
            .iter()
            .chain(sg.x0.iter())
            .zip(theta.iter().zip(ranges()))
            .map(|(&d, (&v, t))| d * t.derivative(v))
            .collect();
        Some((mse, grad, g))
    }
}

/// Fits one record with `u` fixed to `u`. Returns the best iterate seen, so
/// the final loss never exceeds the initial one.
pub fn fit_with_rate(record: &PpgrRecord, u: &[f64], cfg: &MechFitConfig) -> Result<MechFitResult> {
    let n_obs = record.n_observed();
    if n_obs < MIN_OBSERVED {
        return Err(Error::DegenerateRecord(format!(
            "{}: {n_obs} observed glucose values, need {MIN_OBSERVED}",
            record.ppgr_id
        )));
    }
    let obj = Objective {
        record,
        u,
        sim: cfg.sim,
        n_obs: n_obs as f64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, cfg.init_jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut theta: Vec<f64> = initial_guess(record).into_iter().map(|v| v + jitter.sample(&mut rng)).collect();
    let (initial_mse, mut grad, mut g) = obj
        .eval(&theta)
        .ok_or_else(|| Error::RecordBlowup(record.ppgr_id.clone()))?;
    let mut best = (initial_mse, theta.clone(), g.clone());
    let mut params = [Tensor::row_vector(theta.clone())];
    let mut opt = AdamState::new(AdamConfig::with_lr(cfg.lr), &params);
    let mut iterations = 0;
    for _ in 0..cfg.steps {
        adam_step(&mut params, &[Tensor::row_vector(grad)], &mut opt);
        theta = params[0].data().to_vec();
        iterations += 1;
        let Some((mse, next_grad, next_g)) = obj.eval(&theta) else { break };
        grad = next_grad;
        g = next_g;
        if mse < best.0 {
            best = (mse, theta.clone(), g.clone());
        }
    }
    let (params, x0) = Objective::split(&best.1);
    Ok(MechFitResult {
        params,
        x0,
        initial_mse,
        mse: best.0,
        iterations,
        glucose: best.2,
        u: u.to_vec(),
    })
}

/// Fits one record with `u` derived from its logged carbohydrates.
pub fn fit_mechanistic(record: &PpgrRecord, cfg: &MechFitConfig) -> Result<MechFitResult> {
    let u = carbs_to_rate(&record.logged_carbs());
    fit_with_rate(record, &u, cfg)
}

/// Fits every record in parallel; record `i` uses seed `cfg.seed + i`.
pub fn fit_dataset(dataset: &Dataset, cfg: &MechFitConfig) -> Result<Vec<MechFitResult>> {
    dataset
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let c = MechFitConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..*cfg
            };
            fit_mechanistic(r, &c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::tests::flat_record;
    use crate::mechsim::cohort::{generate_cohort, CohortSpec};

    fn clean_record(seed: u64) -> (PpgrRecord, crate::mechsim::cohort::GroundTruth) {
        let mut spec = CohortSpec::sized(1, 1).clean();
        spec.max_extra_meals = 0;
        let (ds, truth) = generate_cohort(&spec, seed).unwrap();
        (ds.records[0].clone(), truth[0].clone())
    }

    #[test]
    fn true_rate_fit_recovers_record() {
        for seed in [1, 2] {
            let (rec, truth) = clean_record(seed);
            let fit = fit_with_rate(&rec, &truth.u, &MechFitConfig::default()).unwrap();
            assert!(fit.rmse() < 2.0, "seed {seed}: rmse {}", fit.rmse());
            assert!((fit.params.g_b - truth.params.g_b).abs() < 5.0, "{} vs {}", fit.params.g_b, truth.params.g_b);
            assert!(fit.mse <= fit.initial_mse);
        }
    }

    #[test]
    fn shifted_log_fits_worse() {
        let (rec, truth) = clean_record(3);
        let cfg = MechFitConfig::default();
        let good = fit_with_rate(&rec, &truth.u, &cfg).unwrap();
        let mut shifted = vec![0.0; SEQ_LEN];
        shifted[6..].copy_from_slice(&truth.u[..SEQ_LEN - 6]);
        let bad = fit_with_rate(&rec, &shifted, &cfg).unwrap();
        assert!(bad.rmse() > good.rmse(), "{} vs {}", bad.rmse(), good.rmse());
    }

    #[test]
    fn flat_trace_fits_without_carbs() {
        let mut rec = flat_record("p", "p_m01", 110.0);
        rec.meals.iter_mut().for_each(|m| m[crate::datamodel::CARBS] = Some(0.0));
        let fit = fit_mechanistic(&rec, &MechFitConfig::default()).unwrap();
        assert!(fit.rmse() < 2.0, "{}", fit.rmse());
        assert!(fit.params.in_range() && fit.x0.in_initial_range());
    }

    #[test]
    fn too_few_observations_rejected() {
        let mut rec = flat_record("p", "p_m01", 110.0);
        rec.glucose.iter_mut().skip(5).for_each(|g| *g = None);
        assert!(matches!(fit_mechanistic(&rec, &MechFitConfig::default()), Err(Error::DegenerateRecord(_))));
    }

    #[test]
    fn dataset_fit_is_deterministic() {
        let (ds, _) = generate_cohort(&CohortSpec::sized(1, 2), 4).unwrap();
        let cfg = MechFitConfig {
            steps: 200,
            ..MechFitConfig::default()
        };
        let a = fit_dataset(&ds, &cfg).unwrap();
        let b = fit_dataset(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|f| f.mse <= f.initial_mse));
    }
}
