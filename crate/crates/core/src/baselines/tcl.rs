//! Time-contrastive learning: classify which third of the window a timestep
//! came from, and read embeddings off the last hidden pre-activation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{Dataset, PpgrRecord, N_MEAL};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Bound, Checkpoint, Linear, ParamStore, Tape, Tensor, Var};
use crate::SEQ_LEN;

/// Glucose, six meal channels and seven presence bits.
pub const TCL_INPUT: usize = 1 + N_MEAL + 1 + N_MEAL;
pub const TCL_HIDDEN: usize = 32;
pub const N_WINDOWS: usize = 3;
pub const WINDOW_LEN: usize = SEQ_LEN / N_WINDOWS;

const GLUCOSE_CENTER: f64 = 120.0;
const GLUCOSE_SCALE: f64 = 50.0;
const MEAL_SCALE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TclMode {
    Average,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TclConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TclConfig {
    fn default() -> Self {
        TclConfig {
            epochs: 500,
            lr: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TclModel {
    pub store: ParamStore,
    hidden1: Linear,
    hidden2: Linear,
    output: Linear,
}

/// Window label of timestep `t`.
pub fn window_of(t: usize) -> usize {
    (t / WINDOW_LEN).min(N_WINDOWS - 1)
}

/// Per-timestep input rows (`60 x 14`) of one record.
pub fn tcl_inputs(record: &PpgrRecord) -> Vec<[f64; TCL_INPUT]> {
    (0..SEQ_LEN)
        .map(|t| {
            let mut row = [0.0; TCL_INPUT];
            if let Some(g) = record.glucose[t] {
                row[0] = (g - GLUCOSE_CENTER) / GLUCOSE_SCALE;
                row[1 + N_MEAL] = 1.0;
            }
            for (c, v) in record.meals[t].iter().enumerate() {
                if let Some(v) = v {
                    row[1 + c] = v / MEAL_SCALE;
                    row[2 + N_MEAL + c] = 1.0;
                }
            }
            row
        })
        .collect()
}

fn stack(records: &[&PpgrRecord]) -> (Tensor, Vec<usize>) {
    let mut data = Vec::with_capacity(records.len() * SEQ_LEN * TCL_INPUT);
    let mut labels = Vec::with_capacity(records.len() * SEQ_LEN);
    for r in records {
        for (t, row) in tcl_inputs(r).iter().enumerate() {
            data.extend_from_slice(row);
            labels.push(window_of(t));
        }
    }
    (Tensor::from_vec(labels.len(), TCL_INPUT, data), labels)
}

impl TclModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let hidden1 = Linear::new(&mut store, "tcl.h1", TCL_INPUT, TCL_HIDDEN, &mut rng);
        let hidden2 = Linear::new(&mut store, "tcl.h2", TCL_HIDDEN, TCL_HIDDEN, &mut rng);
        let output = Linear::new(&mut store, "tcl.out", TCL_HIDDEN, N_WINDOWS, &mut rng);
        TclModel {
            store,
            hidden1,
            hidden2,
            output,
        }
    }

    pub fn to_checkpoint(&self, config_hash: &str, seed: u64) -> Checkpoint {
        Checkpoint {
            model: "tcl".into(),
            config_hash: config_hash.to_string(),
            seed,
            settings: Default::default(),
            params: self.store.to_map(),
            optimizer: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.model != "tcl" {
            return Err(Error::Checkpoint(format!("expected a tcl checkpoint, found `{}`", ck.model)));
        }
        let mut model = TclModel::new(0);
        model.store.load_map(&ck.params)?;
        Ok(model)
    }

    /// Returns (final hidden pre-activation, logits).
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> (Var, Var) {
        let h1 = self.hidden1.forward(tape, p, x);
        let a1 = tape.tanh(h1);
        let pre = self.hidden2.forward(tape, p, a1);
        let a2 = tape.tanh(pre);
        (pre, self.output.forward(tape, p, a2))
    }

    fn pre_activations(&self, record: &PpgrRecord) -> Tensor {
        let (x, _) = stack(&[record]);
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let xv = tape.constant(x);
        let (pre, _) = self.forward(&mut tape, &p, xv);
        tape.value(pre).clone()
    }

    /// Per-window mean pre-activations, each of width 32.
    pub fn window_embeddings(&self, record: &PpgrRecord) -> Vec<Vec<f64>> {
        let pre = self.pre_activations(record);
        (0..N_WINDOWS)
            .map(|w| {
                let mut acc = vec![0.0; TCL_HIDDEN];
                for t in w * WINDOW_LEN..(w + 1) * WINDOW_LEN {
                    acc.iter_mut().zip(pre.row(t)).for_each(|(a, v)| *a += v);
                }
                acc.iter_mut().for_each(|a| *a /= WINDOW_LEN as f64);
                acc
            })
            .collect()
    }

    pub fn embed(&self, record: &PpgrRecord, mode: TclMode) -> Vec<f64> {
        let windows = self.window_embeddings(record);
        match mode {
            TclMode::Concat => windows.concat(),
            TclMode::Average => (0..TCL_HIDDEN)
                .map(|j| windows.iter().map(|w| w[j]).sum::<f64>() / N_WINDOWS as f64)
                .collect(),
        }
    }

    /// Fraction of timesteps whose window is predicted correctly.
    pub fn window_accuracy(&self, dataset: &Dataset) -> f64 {
        let refs: Vec<&PpgrRecord> = dataset.records.iter().collect();
        let (x, labels) = stack(&refs);
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let xv = tape.constant(x);
        let (_, logits) = self.forward(&mut tape, &p, xv);
        let lv = tape.value(logits);
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(r, &y)| {
                let row = lv.row(r);
                let best = (0..N_WINDOWS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                best == y
            })
            .count();
        correct as f64 / labels.len().max(1) as f64
    }
}

pub fn tcl_embed(model: &TclModel, record: &PpgrRecord, mode: TclMode) -> Vec<f64> {
    model.embed(record, mode)
}

/// Full-batch ADAM on the window-classification loss. Returns the model and
/// the per-epoch cross-entropy.
pub fn train_tcl(dataset: &Dataset, cfg: &TclConfig) -> Result<(TclModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("empty training set".into()));
    }
    let mut model = TclModel::new(cfg.seed);
    let refs: Vec<&PpgrRecord> = dataset.records.iter().collect();
    let (x, labels) = stack(&refs);
    let mut opt = AdamState::new(AdamConfig::with_lr(cfg.lr), model.store.values());
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let (_, logits) = model.forward(&mut tape, &p, xv);
        let loss = tape.softmax_cross_entropy(logits, &labels);
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss)?;
        let g = model.store.collect_grads(&p, &grads);
        adam_step(model.store.values_mut(), &g, &mut opt);
    }
    Ok((model, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::tests::flat_record;

    fn stepped(person: &str, id: &str, base: f64) -> PpgrRecord {
        let mut r = flat_record(person, id, base);
        for t in 0..SEQ_LEN {
            let lift = if window_of(t) == 2 { 50.0 } else if window_of(t) == 1 { 25.0 } else { 0.0 };
            r.glucose[t] = Some(base + lift + ((t * 13) % 7) as f64);
        }
        r
    }

    #[test]
    fn learns_window_structure() {
        let recs: Vec<PpgrRecord> = (0..6).map(|i| stepped(&format!("p{i}"), &format!("p{i}_m01"), 90.0 + 5.0 * i as f64)).collect();
        let ds = Dataset::new(recs).unwrap();
        let cfg = TclConfig {
            epochs: 200,
            ..TclConfig::default()
        };
        let (model, losses) = train_tcl(&ds, &cfg).unwrap();
        assert!(losses[losses.len() - 1] < losses[0]);
        assert!(model.window_accuracy(&ds) > 0.4);
        let (again, _) = train_tcl(&ds, &cfg).unwrap();
        assert_eq!(again.store, model.store);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = TclModel::new(5);
        let back = TclModel::from_checkpoint(&model.to_checkpoint("h", 5)).unwrap();
        let rec = flat_record("p", "p_m01", 130.0);
        assert_eq!(model.embed(&rec, TclMode::Concat), back.embed(&rec, TclMode::Concat));
        let mut ck = model.to_checkpoint("h", 5);
        ck.model = "hybrid".into();
        assert!(matches!(TclModel::from_checkpoint(&ck), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn embedding_modes_and_constant_input() {
        let model = TclModel::new(3);
        let rec = flat_record("p", "p_m01", 100.0);
        let mut constant = rec.clone();
        constant.meals.iter_mut().for_each(|m| *m = [Some(0.0); N_MEAL]);
        let avg = model.embed(&constant, TclMode::Average);
        let cat = model.embed(&constant, TclMode::Concat);
        assert_eq!(avg.len(), TCL_HIDDEN);
        assert_eq!(cat.len(), 3 * avg.len());
        for w in 0..N_WINDOWS {
            for (a, c) in avg.iter().zip(&cat[w * TCL_HIDDEN..(w + 1) * TCL_HIDDEN]) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }
}
