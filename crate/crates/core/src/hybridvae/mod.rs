//! Hybrid VAE: recurrent encoder over CGM and context, mechanistic decoder.

mod encoder;
mod ode;
mod train;

pub use encoder::{EncodedBatch, RecordEncoder, DEMO_DIM, EMBED_DIM};
pub use ode::simulate_batch;
pub use train::{train, train_elbo, ElboModel, EpochStats, TrainConfig, TrainOutcome};

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datamodel::{Dataset, PpgrRecord, Sex, N_MEAL};
use crate::error::{Error, Result};
use crate::mechsim::{simulate_glucose, MechParams, MechState, SimConfig};
use crate::nn::{
    dropout_mask, AdamState, Bound, Checkpoint, Linear, ParamId, ParamStore, RecurrentEncoderConfig, Tape,
    Tensor, Var,
};
use crate::transforms::{
    default_prior, kl_factorized, ExpertPrior, LatentLayout, IntervalTransform, LATENT_DIM, U_DIM, W_PRIOR_MEAN,
    W_RANGES, X0_DIM, X0_RANGES, W_DIM,
};
use crate::{DT_OBS, SEQ_LEN};

const GLUCOSE_CENTER: f64 = 120.0;
const GLUCOSE_SCALE: f64 = 50.0;
const MEAL_SCALE: f64 = 20.0;
const AGE_CENTER: f64 = 50.0;
const AGE_SCALE: f64 = 15.0;
const WEIGHT_CENTER: f64 = 80.0;
const WEIGHT_SCALE: f64 = 20.0;

const SIGMA_OBS: IntervalTransform = IntervalTransform::new(1.0, 50.0);
const SIGMA_OBS_INIT: f64 = 5.0;

/// Per-timestep encoder features of one record, already scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub glucose: Vec<f64>,
    pub glucose_present: Vec<bool>,
    pub meals: Vec<[f64; N_MEAL]>,
    pub meals_present: Vec<bool>,
    pub demographics: [f64; DEMO_DIM],
}

impl EncoderInput {
    pub fn from_record(r: &PpgrRecord) -> Self {
        let glucose_present: Vec<bool> = r.glucose.iter().map(Option::is_some).collect();
        let glucose = r
            .glucose
            .iter()
            .map(|g| g.map_or(0.0, |g| (g - GLUCOSE_CENTER) / GLUCOSE_SCALE))
            .collect();
        let meals_present = r.meals.iter().map(|m| m.iter().all(Option::is_some)).collect();
        let meals = r
            .meals
            .iter()
            .map(|m| m.map(|v| v.map_or(0.0, |v| v / MEAL_SCALE)))
            .collect();
        let d = &r.demographics;
        let (f, m) = match d.sex {
            Sex::F => (1.0, 0.0),
            Sex::M => (0.0, 1.0),
        };
        EncoderInput {
            glucose,
            glucose_present,
            meals,
            meals_present,
            demographics: [
                (d.age - AGE_CENTER) / AGE_SCALE,
                (d.weight - WEIGHT_CENTER) / WEIGHT_SCALE,
                f,
                m,
            ],
        }
    }
}

/// Factorized normal over the 70 unconstrained latent dims.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl LatentPosterior {
    /// Constrained posterior mean.
    pub fn constrained_mean(&self) -> Vec<f64> {
        LatentLayout::constrain_all(&self.mean)
    }
}

/// Seven-number interpretable summary of one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechEmbedding {
    pub tau_m: f64,
    pub g_b: f64,
    pub s_g: f64,
    pub p_2: f64,
    pub si_mi: f64,
    pub g0: f64,
    /// Total effective carbohydrate appearance over the window, mg.
    pub total_u: f64,
}

impl MechEmbedding {
    pub const NAMES: [&'static str; 7] = ["tau_m", "G_b", "S_G", "p_2", "SI_MI", "G0", "total_u"];

    pub fn from_latent(constrained: &[f64]) -> Self {
        let w = MechParams::from_slice(&constrained[LatentLayout::W]);
        MechEmbedding {
            tau_m: w.tau_m,
            g_b: w.g_b,
            s_g: w.s_g,
            p_2: w.p_2,
            si_mi: w.s_i * w.m_i,
            g0: constrained[LatentLayout::X0.start],
            total_u: constrained[LatentLayout::U].iter().sum::<f64>() * DT_OBS,
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.tau_m, self.g_b, self.s_g, self.p_2, self.si_mi, self.g0, self.total_u]
    }
}

/// Posterior-mean decode of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub glucose: Vec<f64>,
    pub u: Vec<f64>,
}

/// Scalar ELBO terms for one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub beta_eff: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridConfig {
    pub encoder: RecurrentEncoderConfig,
    /// Lower bound added to posterior standard deviations.
    pub sd_floor: f64,
    pub sim: SimConfig,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            encoder: RecurrentEncoderConfig::new(3 * EMBED_DIM),
            sd_floor: 1e-4,
            sim: SimConfig::default(),
        }
    }
}

impl HybridConfig {
    pub fn with_hidden(hidden: usize) -> Self {
        let mut cfg = HybridConfig::default();
        cfg.encoder.hidden = hidden;
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct HybridModel {
    pub config: HybridConfig,
    pub store: ParamStore,
    pub prior: ExpertPrior,
    encoder: RecordEncoder,
    u_head: Linear,
    x0_head: Linear,
    w_head: Linear,
    sigma_obs: ParamId,
}

/// Inverse of softplus.
fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

fn shrink_head(store: &mut ParamStore, head: &Linear, factor: f64) {
    store.get_mut(head.w).data_mut().iter_mut().for_each(|v| *v *= factor);
}

fn one_row(values: Vec<f64>) -> Tensor {
    Tensor::row_vector(values)
}

/// Sigmoid-constrained scalar on the tape: `lo + (hi - lo) * sigmoid(x)`.
fn constrain_var(tape: &mut Tape, x: Var, t: IntervalTransform) -> Var {
    let s = tape.sigmoid(x);
    let s = tape.scale(s, t.width());
    tape.add_scalar(s, t.lo)
}

/// Constant noise for one ELBO evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    /// Standard-normal draws, `B x 70`.
    pub eps: Tensor,
    /// Multiplier on constrained latents, `B x 70`; dropout on the u block,
    /// ones elsewhere. `None` disables dropout.
    pub keep: Option<Tensor>,
}

impl ElboNoise {
    /// Hybrid-model noise: 70 normals per row plus optional u dropout.
    pub fn draw(rows: usize, dropout: Option<f64>, rng: &mut impl Rng) -> Self {
        let eps = standard_normal(rows, LATENT_DIM, rng);
        let keep = dropout.map(|rate| {
            let m = dropout_mask(rows, U_DIM, rate, rng);
            let mut full = Tensor::filled(rows, LATENT_DIM, 1.0);
            for r in 0..rows {
                full.data_mut()[r * LATENT_DIM..r * LATENT_DIM + U_DIM].copy_from_slice(m.row(r));
            }
            full
        });
        ElboNoise { eps, keep }
    }

    /// Zero noise, no dropout: evaluates the bound at the posterior mean.
    pub fn zero(rows: usize) -> Self {
        ElboNoise {
            eps: Tensor::zeros(rows, LATENT_DIM),
            keep: None,
        }
    }
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

/// Graph outputs of an ELBO; `glucose` is `B x 60`, the rest `B x 1`.
pub struct ElboVars {
    pub elbo: Var,
    pub recon: Var,
    pub kl: Var,
    pub glucose: Var,
}

/// Observed glucose, its mask (`B x 60`) and per-record observation counts.
pub fn observed(batch: &[&PpgrRecord]) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let rows = batch.len();
    let mut x = Tensor::zeros(rows, SEQ_LEN);
    let mut mask = Tensor::zeros(rows, SEQ_LEN);
    let mut counts = Vec::with_capacity(rows);
    for (b, r) in batch.iter().enumerate() {
        let mut n = 0;
        for (t, g) in r.glucose.iter().enumerate() {
            if let Some(g) = g {
                x.set(b, t, *g);
                mask.set(b, t, 1.0);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::DegenerateRecord(r.ppgr_id.clone()));
        }
        counts.push(n);
    }
    Ok((x, mask, counts))
}

/// Builds the per-record ELBO from posterior parameters already on the tape
/// (`mean`, `sd`: `B x 70`; `sigma_obs`: `1 x 1`).
#[allow(clippy::too_many_arguments)]
pub fn elbo_graph(
    tape: &mut Tape,
    mean: Var,
    sd: Var,
    sigma_obs: Var,
    batch: &[&PpgrRecord],
    noise: &ElboNoise,
    beta_hat: f64,
    prior: &ExpertPrior,
    sim: &SimConfig,
) -> Result<ElboVars> {
    let rows = batch.len();
    let (x, mask, counts) = observed(batch)?;

    let noisy = tape.mul_const(sd, noise.eps.clone());
    let z = tape.add(mean, noisy);
    let ranges = LatentLayout::transforms();
    let widths: Vec<f64> = ranges.iter().map(|t| t.width()).collect();
    let los: Vec<f64> = ranges.iter().map(|t| t.lo).collect();
    let s = tape.sigmoid(z);
    let mut latent = tape.affine_cols(s, &widths, &los);
    if let Some(keep) = &noise.keep {
        latent = tape.mul_const(latent, keep.clone());
    }
    let ids: Vec<&str> = batch.iter().map(|r| r.ppgr_id.as_str()).collect();
    let glucose = simulate_batch(tape, latent, sim, &ids)?;

    let sigma = tape.broadcast(sigma_obs, rows, SEQ_LEN);
    let recon = tape.gaussian_log_density(&x, glucose, sigma, &mask);

    let kl = kl_graph(tape, mean, sd, prior);
    let elbo = weighted_elbo(tape, recon, kl, &counts, beta_hat, LATENT_DIM);
    Ok(ElboVars {
        elbo,
        recon,
        kl,
        glucose,
    })
}

/// Per-row closed-form KL of a factorized normal (`mean`, `sd`: `B x d`) from `prior`.
pub fn kl_graph(tape: &mut Tape, mean: Var, sd: Var, prior: &ExpertPrior) -> Var {
    let (rows, dim) = tape.value(mean).shape();
    assert_eq!(dim, prior.dim());
    let mut neg_mp = Tensor::zeros(rows, dim);
    for r in 0..rows {
        for (d, m) in prior.mean.iter().enumerate() {
            neg_mp.set(r, d, -m);
        }
    }
    let inv_two_var: Vec<f64> = prior.sd.iter().map(|s| 0.5 / (s * s)).collect();
    let log_sd = tape.log(sd);
    let var_q = tape.square(sd);
    let diff = tape.add_const(mean, &neg_mp);
    let diff2 = tape.square(diff);
    let num = tape.add(var_q, diff2);
    let quad = tape.affine_cols(num, &inv_two_var, &vec![0.0; dim]);
    let per_dim = tape.sub(quad, log_sd);
    let kl_raw = tape.sum_cols(per_dim);
    let kl_const: f64 = prior.sd.iter().map(|s| s.ln() - 0.5).sum();
    tape.add_scalar(kl_raw, kl_const)
}

/// `recon - beta_eff * kl` per row with `beta_eff = beta_hat * n_obs / latent_dim`.
pub fn weighted_elbo(tape: &mut Tape, recon: Var, kl: Var, counts: &[usize], beta_hat: f64, latent_dim: usize) -> Var {
    let beta = Tensor::from_vec(
        counts.len(),
        1,
        counts.iter().map(|&n| beta_hat * n as f64 / latent_dim as f64).collect(),
    );
    let weighted = tape.mul_const(kl, beta);
    tape.sub(recon, weighted)
}
/// ELBO of one record under a given posterior and emission scale.
#[allow(clippy::too_many_arguments)]
pub fn elbo_from_posterior(
    record: &PpgrRecord,
    posterior: &LatentPosterior,
    sigma_obs: f64,
    noise: &ElboNoise,
    beta_hat: f64,
    prior: &ExpertPrior,
    sim: &SimConfig,
) -> Result<ElboTerms> {
    let mut tape = Tape::new();
    let mean = tape.constant(one_row(posterior.mean.clone()));
    let sd = tape.constant(one_row(posterior.sd.clone()));
    let sigma = tape.constant(Tensor::scalar(sigma_obs));
    let vars = elbo_graph(&mut tape, mean, sd, sigma, &[record], noise, beta_hat, prior, sim)?;
    let n_obs = record.n_observed();
    Ok(ElboTerms {
        elbo: tape.value(vars.elbo).item(),
        recon: tape.value(vars.recon).item(),
        kl: tape.value(vars.kl).item(),
        beta_eff: beta_hat * n_obs as f64 / LATENT_DIM as f64,
        n_obs,
    })
}

impl HybridModel {
    pub fn new(config: HybridConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = RecordEncoder::new(&mut store, config.encoder, &mut rng);
        let width = encoder.output_dim();
        let u_head = Linear::new(&mut store, "head.u", width, 2, &mut rng);
        let x0_head = Linear::new(&mut store, "head.x0", width, 2 * X0_DIM, &mut rng);
        let w_head = Linear::new(&mut store, "head.w", width, 2 * W_DIM, &mut rng);
        let sigma_obs = store.add(
            "sigma_obs",
            Tensor::scalar(SIGMA_OBS.unconstrain(SIGMA_OBS_INIT).expect("initial sigma in range")),
        );

        // Start heads near plausible physiology with modest posterior spread.
        for head in [&u_head, &x0_head, &w_head] {
            shrink_head(&mut store, head, 0.1);
        }
        let sd_init = softplus_inv(0.1);
        *store.get_mut(u_head.b) = one_row(vec![-5.0, softplus_inv(0.5)]);
        let x0_init = [120.0, 1e-3, 0.1, 2.0];
        let mut b = Vec::new();
        b.extend(x0_init.iter().zip(X0_RANGES).map(|(&v, t)| t.unconstrain(v).expect("x0 init in range")));
        b.extend([sd_init; X0_DIM]);
        *store.get_mut(x0_head.b) = one_row(b);
        let mut b = Vec::new();
        b.extend(W_PRIOR_MEAN.iter().zip(W_RANGES).map(|(&v, t)| t.unconstrain(v).expect("w init in range")));
        b.extend([sd_init; W_DIM]);
        *store.get_mut(w_head.b) = one_row(b);

        HybridModel {
            config,
            store,
            prior: default_prior(),
            encoder,
            u_head,
            x0_head,
            w_head,
            sigma_obs,
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Current emission standard deviation, mg/dL.
    pub fn sigma_obs(&self) -> f64 {
        SIGMA_OBS.constrain(self.store.get(self.sigma_obs).item())
    }

    /// Posterior mean and sd (`B x 70` each) for a batch.
    pub fn posterior_vars(&self, tape: &mut Tape, p: &Bound, batch: &[&PpgrRecord]) -> (Var, Var) {
        let EncodedBatch { outputs, summary, .. } = self.encoder.encode(tape, p, batch);
        let floor = self.config.sd_floor;
        let mut means = Vec::with_capacity(LATENT_DIM);
        let mut sds = Vec::with_capacity(LATENT_DIM);
        for &h in &outputs {
            let o = self.u_head.forward(tape, p, h);
            means.push(tape.slice_cols(o, 0, 1));
            sds.push(tape.slice_cols(o, 1, 1));
        }
        for (head, dim) in [(&self.x0_head, X0_DIM), (&self.w_head, W_DIM)] {
            let o = head.forward(tape, p, summary);
            means.push(tape.slice_cols(o, 0, dim));
            sds.push(tape.slice_cols(o, dim, dim));
        }
        let mean = tape.concat_cols(&means);
        let raw_sd = tape.concat_cols(&sds);
        let sd = tape.softplus(raw_sd);
        let sd = tape.add_scalar(sd, floor);
        (mean, sd)
    }

    pub fn sigma_obs_var(&self, tape: &mut Tape, p: &Bound) -> Var {
        constrain_var(tape, p.var(self.sigma_obs), SIGMA_OBS)
    }

    /// Posteriors for many records, evaluated in chunks on frozen weights.
    pub fn encode_many(&self, records: &[&PpgrRecord]) -> Vec<LatentPosterior> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(64) {
            let mut tape = Tape::new();
            let p = self.store.bind_frozen(&mut tape);
            let (m, s) = self.posterior_vars(&mut tape, &p, chunk);
            let (mv, sv) = (tape.value(m), tape.value(s));
            for b in 0..chunk.len() {
                out.push(LatentPosterior {
                    mean: mv.row(b).to_vec(),
                    sd: sv.row(b).to_vec(),
                });
            }
        }
        out
    }

    pub fn encode(&self, record: &PpgrRecord) -> LatentPosterior {
        self.encode_many(&[record]).remove(0)
    }

    /// Single-sample ELBO with noise seeded by `seed`; dropout only when training.
    pub fn elbo(&self, record: &PpgrRecord, seed: u64, beta_hat: f64, training: bool) -> Result<ElboTerms> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = ElboNoise::draw(1, training.then_some(0.5), &mut rng);
        let posterior = self.encode(record);
        elbo_from_posterior(record, &posterior, self.sigma_obs(), &noise, beta_hat, &self.prior, &self.config.sim)
    }

    pub fn embed(&self, record: &PpgrRecord) -> MechEmbedding {
        MechEmbedding::from_latent(&self.encode(record).constrained_mean())
    }

    pub fn embed_dataset(&self, dataset: &Dataset) -> Vec<MechEmbedding> {
        let refs: Vec<&PpgrRecord> = dataset.records.iter().collect();
        self.encode_many(&refs)
            .iter()
            .map(|q| MechEmbedding::from_latent(&q.constrained_mean()))
            .collect()
    }

    pub fn reconstruct(&self, record: &PpgrRecord) -> Result<Reconstruction> {
        decode(&self.encode(record), &self.config.sim).map_err(|_| Error::RecordBlowup(record.ppgr_id.clone()))
    }

    pub fn reconstruct_dataset(&self, dataset: &Dataset) -> Result<Vec<Reconstruction>> {
        let refs: Vec<&PpgrRecord> = dataset.records.iter().collect();
        self.encode_many(&refs)
            .iter()
            .zip(&refs)
            .map(|(q, r)| decode(q, &self.config.sim).map_err(|_| Error::RecordBlowup(r.ppgr_id.clone())))
            .collect()
    }

    pub fn to_checkpoint(&self, config_hash: &str, seed: u64, optimizer: Option<AdamState>) -> Checkpoint {
        let mut settings = BTreeMap::new();
        settings.insert("hidden".to_string(), self.config.encoder.hidden.to_string());
        settings.insert("layers".to_string(), self.config.encoder.layers.to_string());
        settings.insert("bidirectional".to_string(), self.config.encoder.bidirectional.to_string());
        Checkpoint {
            model: "hybrid".into(),
            config_hash: config_hash.to_string(),
            seed,
            settings,
            params: self.store.to_map(),
            optimizer,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.model != "hybrid" {
            return Err(Error::Checkpoint(format!("expected a hybrid checkpoint, found `{}`", ck.model)));
        }
        let setting = |k: &str| -> Result<usize> {
            ck.settings
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing setting `{k}`")))
        };
        let mut config = HybridConfig::with_hidden(setting("hidden")?);
        config.encoder.layers = setting("layers")?;
        config.encoder.bidirectional = ck.settings.get("bidirectional").is_none_or(|v| v == "true");
        let mut model = HybridModel::new(config, 0);
        model.store.load_map(&ck.params)?;
        Ok(model)
    }
}

impl ElboModel for HybridModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn draw_noise(&self, rows: usize, dropout: Option<f64>, rng: &mut ChaCha8Rng) -> ElboNoise {
        ElboNoise::draw(rows, dropout, rng)
    }

    fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &[&PpgrRecord],
        noise: &ElboNoise,
        beta_hat: f64,
    ) -> Result<(Var, ElboVars)> {
        let (mean, sd) = self.posterior_vars(tape, p, batch);
        let sigma = self.sigma_obs_var(tape, p);
        let vars = elbo_graph(tape, mean, sd, sigma, batch, noise, beta_hat, &self.prior, &self.config.sim)?;
        Ok((mean_loss(tape, vars.elbo, batch.len()), vars))
    }
}

/// `-mean` of a `B x 1` ELBO column.
pub fn mean_loss(tape: &mut Tape, elbo: Var, rows: usize) -> Var {
    let total = tape.sum(elbo);
    tape.scale(total, -1.0 / rows as f64)
}

/// Deterministic decode at the posterior mean.
pub fn decode(posterior: &LatentPosterior, sim: &SimConfig) -> Result<Reconstruction> {
    let latent = posterior.constrained_mean();
    let u = latent[LatentLayout::U].to_vec();
    let x0 = MechState::from_slice(&latent[LatentLayout::X0]);
    let w = MechParams::from_slice(&latent[LatentLayout::W]);
    let glucose = simulate_glucose(&x0, &w, &u, sim)?;
    Ok(Reconstruction { glucose, u })
}

/// Closed-form KL of a posterior against the model prior.
pub fn posterior_kl(posterior: &LatentPosterior, prior: &ExpertPrior) -> f64 {
    kl_factorized(&posterior.mean, &posterior.sd, prior)
}

pub const EMBEDDING_HEADER: [&str; 9] = ["ppgr_id", "person_id", "tau_m", "G_b", "S_G", "p_2", "SI_MI", "G0", "total_u"];

pub fn write_embeddings(
    dataset: &Dataset,
    embeddings: &[MechEmbedding],
    mut out: impl Write,
    meta: Option<&str>,
) -> std::io::Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# {m}")?;
    }
    writeln!(out, "{}", EMBEDDING_HEADER.join(","))?;
    for (r, e) in dataset.records.iter().zip(embeddings) {
        let vals: Vec<String> = e.to_array().iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{},{},{}", r.ppgr_id, r.person_id, vals.join(","))?;
    }
    Ok(())
}

pub fn write_reconstructions(
    dataset: &Dataset,
    recons: &[Reconstruction],
    mut out: impl Write,
    meta: Option<&str>,
) -> std::io::Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# {m}")?;
    }
    writeln!(out, "ppgr_id,person_id,t,observed,predicted,u")?;
    for (r, rec) in dataset.records.iter().zip(recons) {
        for t in 0..SEQ_LEN {
            let obs = r.glucose[t].map(|g| format!("{g}")).unwrap_or_default();
            writeln!(out, "{},{},{},{},{},{}", r.ppgr_id, r.person_id, t, obs, rec.glucose[t], rec.u[t])?;
        }
    }
    Ok(())
}

/// Root-mean-square error over observed timesteps.
pub fn observed_rmse(record: &PpgrRecord, predicted: &[f64]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (g, p) in record.glucose.iter().zip(predicted) {
        if let Some(g) = g {
            s += (g - p) * (g - p);
            n += 1;
        }
    }
    (s / n.max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests;
