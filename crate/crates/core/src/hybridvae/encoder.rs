use rand::Rng;

use super::EncoderInput;
use crate::datamodel::{PpgrRecord, N_MEAL};
use crate::nn::{BiLstm, Bound, Linear, ParamStore, RecurrentEncoderConfig, Tape, Tensor, Var};
use crate::SEQ_LEN;

/// Width of each channel-group embedding.
pub const EMBED_DIM: usize = 8;
/// Demographic channels: age, weight, sex one-hot (F, M).
pub const DEMO_DIM: usize = 4;

/// Per-group timestep embedders feeding a recurrent encoder.
#[derive(Debug, Clone)]
pub struct RecordEncoder {
    glucose_embed: Linear,
    meal_embed: Linear,
    demo_embed: Linear,
    pub recurrent: BiLstm,
}

/// Encoder outputs for a batch.
pub struct EncodedBatch {
    /// Top-layer state per timestep.
    pub outputs: Vec<Var>,
    pub summary: Var,
    /// Masked meal embedding concatenated with the demographic embedding,
    /// per timestep (`B x 16`).
    pub context: Vec<Var>,
}

impl RecordEncoder {
    pub fn new(store: &mut ParamStore, cfg: RecurrentEncoderConfig, rng: &mut impl Rng) -> Self {
        assert_eq!(cfg.input_dim, 3 * EMBED_DIM, "encoder input must be three embeddings");
        RecordEncoder {
            glucose_embed: Linear::new(store, "embed.glucose", 1, EMBED_DIM, rng),
            meal_embed: Linear::new(store, "embed.meal", N_MEAL, EMBED_DIM, rng),
            demo_embed: Linear::new(store, "embed.demographics", DEMO_DIM, EMBED_DIM, rng),
            recurrent: BiLstm::new(store, "encoder", cfg, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.recurrent.cfg.output_dim()
    }

    pub fn encode(&self, tape: &mut Tape, p: &Bound, batch: &[&PpgrRecord]) -> EncodedBatch {
        let rows = batch.len();
        let inputs: Vec<EncoderInput> = batch.iter().map(|r| EncoderInput::from_record(r)).collect();
        let demo = Tensor::from_vec(rows, DEMO_DIM, inputs.iter().flat_map(|i| i.demographics).collect());
        let demo = tape.constant(demo);
        let demo_e = self.demo_embed.forward(tape, p, demo);

        let mask_of = |present: &dyn Fn(&EncoderInput) -> bool| {
            Tensor::from_vec(
                rows,
                EMBED_DIM,
                inputs
                    .iter()
                    .flat_map(|i| [if present(i) { 1.0 } else { 0.0 }; EMBED_DIM])
                    .collect(),
            )
        };
        let mut steps = Vec::with_capacity(SEQ_LEN);
        let mut context = Vec::with_capacity(SEQ_LEN);
        for t in 0..SEQ_LEN {
            let g = tape.constant(Tensor::from_vec(rows, 1, inputs.iter().map(|i| i.glucose[t]).collect()));
            let ge = self.glucose_embed.forward(tape, p, g);
            let ge = tape.mul_const(ge, mask_of(&|i| i.glucose_present[t]));
            let m = tape.constant(Tensor::from_vec(rows, N_MEAL, inputs.iter().flat_map(|i| i.meals[t]).collect()));
            let me = self.meal_embed.forward(tape, p, m);
            let me = tape.mul_const(me, mask_of(&|i| i.meals_present[t]));
            steps.push(tape.concat_cols(&[ge, me, demo_e]));
            context.push(tape.concat_cols(&[me, demo_e]));
        }
        let (outputs, summary) = self.recurrent.encode(tape, p, &steps);
        EncodedBatch {
            outputs,
            summary,
            context,
        }
    }
}
