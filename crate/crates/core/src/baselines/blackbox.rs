//! Black-box VAE: the hybrid model's encoder with a recurrent neural decoder.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{Dataset, PpgrRecord};
use crate::error::{Error, Result};
use crate::hybridvae::{
    kl_graph, mean_loss, observed, standard_normal, weighted_elbo, ElboModel, ElboNoise, ElboVars, EncodedBatch,
    RecordEncoder, EMBED_DIM,
};
use crate::nn::{Bound, Checkpoint, Linear, LstmLayer, ParamId, ParamStore, RecurrentEncoderConfig, Tape, Tensor, Var};
use crate::transforms::{ExpertPrior, IntervalTransform};
use crate::SEQ_LEN;

pub const BLACKBOX_LATENT: usize = 32;
const DECODER_HIDDEN: usize = 32;
const GLUCOSE_CENTER: f64 = 120.0;
const GLUCOSE_SCALE: f64 = 50.0;
const SIGMA_OBS: IntervalTransform = IntervalTransform::new(1.0, 50.0);

#[derive(Debug, Clone)]
pub struct BlackBoxModel {
    pub store: ParamStore,
    pub encoder_cfg: RecurrentEncoderConfig,
    pub sd_floor: f64,
    encoder: RecordEncoder,
    head: Linear,
    init_state: Linear,
    decoder: LstmLayer,
    readout: Linear,
    sigma_obs: ParamId,
    prior: ExpertPrior,
}

impl BlackBoxModel {
    pub fn new(encoder_cfg: RecurrentEncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = RecordEncoder::new(&mut store, encoder_cfg, &mut rng);
        let head = Linear::new(&mut store, "head.z", encoder.output_dim(), 2 * BLACKBOX_LATENT, &mut rng);
        let init_state = Linear::new(&mut store, "decoder.h0", BLACKBOX_LATENT, DECODER_HIDDEN, &mut rng);
        let decoder = LstmLayer::new(&mut store, "decoder.lstm", 2 * EMBED_DIM, DECODER_HIDDEN, &mut rng);
        let readout = Linear::new(&mut store, "decoder.out", DECODER_HIDDEN, 1, &mut rng);
        let sigma_obs = store.add("sigma_obs", Tensor::scalar(SIGMA_OBS.unconstrain(5.0).expect("in range")));
        // Start the posterior close to the prior scale.
        let mut b = store.get(head.b).data().to_vec();
        b[BLACKBOX_LATENT..].iter_mut().for_each(|v| *v = 0.5413);
        *store.get_mut(head.b) = Tensor::row_vector(b);
        BlackBoxModel {
            store,
            encoder_cfg,
            sd_floor: 1e-4,
            encoder,
            head,
            init_state,
            decoder,
            readout,
            sigma_obs,
            prior: ExpertPrior::standard(BLACKBOX_LATENT),
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    fn posterior(&self, tape: &mut Tape, p: &Bound, enc: &EncodedBatch) -> (Var, Var) {
        let o = self.head.forward(tape, p, enc.summary);
        let mean = tape.slice_cols(o, 0, BLACKBOX_LATENT);
        let raw = tape.slice_cols(o, BLACKBOX_LATENT, BLACKBOX_LATENT);
        let sd = tape.softplus(raw);
        let sd = tape.add_scalar(sd, self.sd_floor);
        (mean, sd)
    }

    fn decode(&self, tape: &mut Tape, p: &Bound, z: Var, context: &[Var]) -> Var {
        let rows = tape.value(z).rows();
        let h0 = self.init_state.forward(tape, p, z);
        let h0 = tape.tanh(h0);
        let c0 = tape.constant(Tensor::zeros(rows, DECODER_HIDDEN));
        let hs = self.decoder.run_from(tape, p, context, Some((h0, c0)));
        let outs: Vec<Var> = hs.iter().map(|&h| self.readout.forward(tape, p, h)).collect();
        let g = tape.concat_cols(&outs);
        let g = tape.scale(g, GLUCOSE_SCALE);
        tape.add_scalar(g, GLUCOSE_CENTER)
    }

    /// Posterior means (the embeddings) for many records.
    pub fn embed_many(&self, records: &[&PpgrRecord]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(64) {
            let mut tape = Tape::new();
            let p = self.store.bind_frozen(&mut tape);
            let enc = self.encoder.encode(&mut tape, &p, chunk);
            let (m, _) = self.posterior(&mut tape, &p, &enc);
            let mv = tape.value(m);
            out.extend((0..chunk.len()).map(|b| mv.row(b).to_vec()));
        }
        out
    }

    pub fn embed_dataset(&self, dataset: &Dataset) -> Vec<Vec<f64>> {
        let refs: Vec<&PpgrRecord> = dataset.records.iter().collect();
        self.embed_many(&refs)
    }

    /// Decoded glucose at the posterior mean.
    pub fn reconstruct_many(&self, records: &[&PpgrRecord]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(64) {
            let mut tape = Tape::new();
            let p = self.store.bind_frozen(&mut tape);
            let enc = self.encoder.encode(&mut tape, &p, chunk);
            let (m, _) = self.posterior(&mut tape, &p, &enc);
            let g = self.decode(&mut tape, &p, m, &enc.context);
            let gv = tape.value(g);
            out.extend((0..chunk.len()).map(|b| gv.row(b).to_vec()));
        }
        out
    }

    pub fn to_checkpoint(&self, config_hash: &str, seed: u64, optimizer: Option<crate::nn::AdamState>) -> Checkpoint {
        let mut settings = BTreeMap::new();
        settings.insert("hidden".to_string(), self.encoder_cfg.hidden.to_string());
        settings.insert("layers".to_string(), self.encoder_cfg.layers.to_string());
        settings.insert("bidirectional".to_string(), self.encoder_cfg.bidirectional.to_string());
        Checkpoint {
            model: "blackbox".into(),
            config_hash: config_hash.to_string(),
            seed,
            settings,
            params: self.store.to_map(),
            optimizer,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.model != "blackbox" {
            return Err(Error::Checkpoint(format!("expected a blackbox checkpoint, found `{}`", ck.model)));
        }
        let setting = |k: &str| -> Result<usize> {
            ck.settings
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing setting `{k}`")))
        };
        let mut cfg = RecurrentEncoderConfig::new(3 * EMBED_DIM);
        cfg.hidden = setting("hidden")?;
        cfg.layers = setting("layers")?;
        cfg.bidirectional = ck.settings.get("bidirectional").is_none_or(|v| v == "true");
        let mut model = BlackBoxModel::new(cfg, 0);
        model.store.load_map(&ck.params)?;
        Ok(model)
    }
}

impl ElboModel for BlackBoxModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn draw_noise(&self, rows: usize, _dropout: Option<f64>, rng: &mut ChaCha8Rng) -> ElboNoise {
        ElboNoise {
            eps: standard_normal(rows, BLACKBOX_LATENT, rng),
            keep: None,
        }
    }

    fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &[&PpgrRecord],
        noise: &ElboNoise,
        beta_hat: f64,
    ) -> Result<(Var, ElboVars)> {
        let (x, mask, counts) = observed(batch)?;
        let enc = self.encoder.encode(tape, p, batch);
        let (mean, sd) = self.posterior(tape, p, &enc);
        let noisy = tape.mul_const(sd, noise.eps.clone());
        let z = tape.add(mean, noisy);
        let glucose = self.decode(tape, p, z, &enc.context);
        let raw_sigma = p.var(self.sigma_obs);
        let s = tape.sigmoid(raw_sigma);
        let s = tape.scale(s, SIGMA_OBS.width());
        let sigma = tape.add_scalar(s, SIGMA_OBS.lo);
        let sigma = tape.broadcast(sigma, batch.len(), SEQ_LEN);
        let recon = tape.gaussian_log_density(&x, glucose, sigma, &mask);
        let kl = kl_graph(tape, mean, sd, &self.prior);
        let elbo = weighted_elbo(tape, recon, kl, &counts, beta_hat, BLACKBOX_LATENT);
        let vars = ElboVars {
            elbo,
            recon,
            kl,
            glucose,
        };
        Ok((mean_loss(tape, elbo, batch.len()), vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybridvae::{observed_rmse, train_elbo, TrainConfig};
    use crate::mechsim::cohort::{generate_cohort, CohortSpec};
    use crate::nn::gradcheck_sampled;

    fn tiny_cfg() -> RecurrentEncoderConfig {
        let mut c = RecurrentEncoderConfig::new(3 * EMBED_DIM);
        c.hidden = 4;
        c
    }

    #[test]
    fn default_size_and_embedding_shape() {
        let m = BlackBoxModel::new(RecurrentEncoderConfig::new(3 * EMBED_DIM), 0);
        let n = m.param_count();
        assert!((45_000..60_000).contains(&n), "{n}");
        let (ds, _) = generate_cohort(&CohortSpec::sized(1, 2), 1).unwrap();
        let e = m.embed_dataset(&ds);
        assert_eq!(e.len(), 4);
        assert!(e.iter().all(|v| v.len() == BLACKBOX_LATENT));
        assert_eq!(e, m.embed_dataset(&ds));
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let m = BlackBoxModel::new(tiny_cfg(), 2);
        let (ds, _) = generate_cohort(&CohortSpec::sized(1, 1), 3).unwrap();
        let recs: Vec<&PpgrRecord> = ds.records.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = m.draw_noise(recs.len(), None, &mut rng);
        let report = gradcheck_sampled(m.store.values(), 1e-4, 50, 5, |tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            m.batch_loss(tape, &p, &recs, &noise, 0.01).unwrap().0
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }

    #[test]
    fn training_fits_noiseless_records() {
        let mut spec = CohortSpec::sized(5, 2).clean();
        spec.max_extra_meals = 0;
        let (ds, _) = generate_cohort(&spec, 6).unwrap();
        assert_eq!(ds.len(), 20);
        let mut m = BlackBoxModel::new(RecurrentEncoderConfig::new(3 * EMBED_DIM), 7);
        let cfg = TrainConfig {
            epochs: 300,
            batch: 20,
            seed: 8,
            ..TrainConfig::default()
        };
        let out = train_elbo(&ds, &mut m, &cfg, |_| {}).unwrap();
        let h = &out.history;
        let first: f64 = h[..10].iter().map(|s| s.elbo).sum();
        let last: f64 = h[h.len() - 10..].iter().map(|s| s.elbo).sum();
        assert!(last > first);
        let refs: Vec<&PpgrRecord> = ds.records.iter().collect();
        let recon = m.reconstruct_many(&refs);
        let mut rmse: Vec<f64> = refs.iter().zip(&recon).map(|(r, g)| observed_rmse(r, g)).collect();
        rmse.sort_by(f64::total_cmp);
        let mean = rmse.iter().sum::<f64>() / rmse.len() as f64;
        assert!(mean < 15.0, "{rmse:?}");
    }
}
