use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ElboNoise, ElboVars, HybridModel};
use crate::datamodel::{Dataset, PpgrRecord};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Bound, ParamStore, Tape, Var};

/// A variational model trainable by [`train_elbo`].
pub trait ElboModel {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn draw_noise(&self, rows: usize, dropout: Option<f64>, rng: &mut ChaCha8Rng) -> ElboNoise;
    /// `-mean ELBO` of the batch and its per-record terms.
    fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &[&PpgrRecord],
        noise: &ElboNoise,
        beta_hat: f64,
    ) -> Result<(Var, ElboVars)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta_hat: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 64,
            lr: 0.01,
            beta_hat: 0.01,
            dropout: 0.5,
            seed: 0,
        }
    }
}

/// Per-epoch means over records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub optimizer: AdamState,
}

/// Trains the hybrid model; see [`train_elbo`].
pub fn train(
    dataset: &Dataset,
    model: &mut HybridModel,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    train_elbo(dataset, model, cfg, on_epoch)
}

/// Maximizes the mean ELBO with ADAM. `on_epoch` sees each epoch's stats as
/// they are produced.
pub fn train_elbo<M: ElboModel>(
    dataset: &Dataset,
    model: &mut M,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("empty training set".into()));
    }
    if let Some(r) = dataset.records.iter().find(|r| r.n_observed() == 0) {
        return Err(Error::DegenerateRecord(r.ppgr_id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamState::new(AdamConfig::with_lr(cfg.lr), model.store().values());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let dropout = (cfg.dropout > 0.0).then_some(cfg.dropout);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut elbo, mut recon, mut kl) = (0.0, 0.0, 0.0);
        for idx in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<&PpgrRecord> = idx.iter().map(|&i| &dataset.records[i]).collect();
            let noise = model.draw_noise(batch.len(), dropout, &mut rng);
            let mut tape = Tape::new();
            let p = model.store().bind(&mut tape);
            let (loss, vars) = model.batch_loss(&mut tape, &p, &batch, &noise, cfg.beta_hat)?;
            let ev = tape.value(vars.elbo);
            if let Some(b) = (0..batch.len()).find(|&b| !ev.get(b, 0).is_finite()) {
                return Err(Error::NonFinite(format!("ELBO of record {}", batch[b].ppgr_id)));
            }
            elbo += ev.sum();
            recon += tape.value(vars.recon).sum();
            kl += tape.value(vars.kl).sum();
            let grads = tape.backward(loss).map_err(|_| {
                let ids: Vec<&str> = batch.iter().map(|r| r.ppgr_id.as_str()).collect();
                Error::NonFinite(format!("gradient in batch [{}]", ids.join(", ")))
            })?;
            let g = model.store().collect_grads(&p, &grads);
            adam_step(model.store_mut().values_mut(), &g, &mut opt);
        }
        let n = dataset.len() as f64;
        let stats = EpochStats {
            epoch,
            elbo: elbo / n,
            recon: recon / n,
            kl: kl / n,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome {
        history,
        optimizer: opt,
    })
}
