use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect())
}

/// Dense affine map `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(rng, input, output, bound));
        let b = store.add(format!("{name}.b"), uniform(rng, 1, output, bound));
        Linear { w, b, input, output }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let xw = tape.matmul(x, p.var(self.w));
        tape.add_row(xw, p.var(self.b))
    }
}

/// One direction of a gated recurrent layer. Gate order is
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_ih = store.add(format!("{name}.w_ih"), uniform(rng, input, 4 * hidden, 1.0 / (input as f64).sqrt()));
        let hb = 1.0 / (hidden as f64).sqrt();
        let w_hh = store.add(format!("{name}.w_hh"), uniform(rng, hidden, 4 * hidden, hb));
        let mut bias = uniform(rng, 1, 4 * hidden, hb);
        for j in hidden..2 * hidden {
            bias.data_mut()[j] = 1.0;
        }
        let b = store.add(format!("{name}.b"), bias);
        LstmLayer {
            w_ih,
            w_hh,
            b,
            input,
            hidden,
        }
    }

    /// Runs over `xs` in the given order from a zero state and returns the
    /// hidden state after each step.
    pub fn run(&self, tape: &mut Tape, p: &Bound, xs: &[Var]) -> Vec<Var> {
        self.run_from(tape, p, xs, None)
    }

    /// As [`LstmLayer::run`], starting from `(h, c)` when given.
    pub fn run_from(&self, tape: &mut Tape, p: &Bound, xs: &[Var], init: Option<(Var, Var)>) -> Vec<Var> {
        let h = self.hidden;
        let mut state = init;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let xw = tape.matmul(x, p.var(self.w_ih));
            let pre = match state {
                Some((hp, _)) => {
                    let hw = tape.matmul(hp, p.var(self.w_hh));
                    tape.add(xw, hw)
                }
                None => xw,
            };
            let pre = tape.add_row(pre, p.var(self.b));
            let i_raw = tape.slice_cols(pre, 0, h);
            let f_raw = tape.slice_cols(pre, h, h);
            let g_raw = tape.slice_cols(pre, 2 * h, h);
            let o_raw = tape.slice_cols(pre, 3 * h, h);
            let i = tape.sigmoid(i_raw);
            let g = tape.tanh(g_raw);
            let o = tape.sigmoid(o_raw);
            let ig = tape.mul(i, g);
            let c = match state {
                Some((_, cp)) => {
                    let f = tape.sigmoid(f_raw);
                    let fc = tape.mul(f, cp);
                    tape.add(fc, ig)
                }
                None => ig,
            };
            let tc = tape.tanh(c);
            let hn = tape.mul(o, tc);
            state = Some((hn, c));
            out.push(hn);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecurrentEncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub bidirectional: bool,
    pub input_dim: usize,
}

impl RecurrentEncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        RecurrentEncoderConfig {
            layers: 2,
            hidden: 32,
            bidirectional: true,
            input_dim,
        }
    }

    /// Width of per-timestep outputs and of the summary.
    pub fn output_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden
        } else {
            self.hidden
        }
    }
}

/// Stacked, optionally bidirectional recurrent encoder.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub cfg: RecurrentEncoderConfig,
    pub forward: Vec<LstmLayer>,
    pub backward: Vec<LstmLayer>,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, cfg: RecurrentEncoderConfig, rng: &mut impl Rng) -> Self {
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        let mut input = cfg.input_dim;
        for l in 0..cfg.layers {
            forward.push(LstmLayer::new(store, &format!("{name}.l{l}.fwd"), input, cfg.hidden, rng));
            if cfg.bidirectional {
                backward.push(LstmLayer::new(store, &format!("{name}.l{l}.bwd"), input, cfg.hidden, rng));
            }
            input = cfg.output_dim();
        }
        BiLstm { cfg, forward, backward }
    }

    /// Returns per-timestep top-layer outputs and the summary (final forward
    /// state concatenated with the final backward state, i.e. the backward
    /// state at t = 0).
    pub fn encode(&self, tape: &mut Tape, p: &Bound, xs: &[Var]) -> (Vec<Var>, Var) {
        assert!(!xs.is_empty(), "empty sequence");
        let mut seq = xs.to_vec();
        let mut summary = seq[0];
        for l in 0..self.cfg.layers {
            let fwd = self.forward[l].run(tape, p, &seq);
            if self.cfg.bidirectional {
                let rev: Vec<Var> = seq.iter().rev().copied().collect();
                let mut bwd = self.backward[l].run(tape, p, &rev);
                bwd.reverse();
                summary = tape.concat_cols(&[fwd[fwd.len() - 1], bwd[0]]);
                seq = fwd.iter().zip(&bwd).map(|(&f, &b)| tape.concat_cols(&[f, b])).collect();
            } else {
                summary = fwd[fwd.len() - 1];
                seq = fwd;
            }
        }
        (seq, summary)
    }
}

/// Inverted-dropout multiplier: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    let keep = 1.0 / (1.0 - rate);
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

/// Applies inverted dropout to a plain tensor; identity when not training.
pub fn dropout(x: &Tensor, rate: f64, training: bool, seed: u64) -> Tensor {
    if !training || rate == 0.0 {
        return x.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = dropout_mask(x.rows(), x.cols(), rate, &mut rng);
    x.zip_map(&mask, |a, m| a * m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradcheck_sampled;

    #[test]
    fn dropout_identities() {
        let x = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(dropout(&x, 0.0, true, 1), x);
        assert_eq!(dropout(&x, 0.9, false, 1), x);
    }

    #[test]
    fn dropout_statistics() {
        let x = Tensor::filled(200, 500, 3.0);
        let y = dropout(&x, 0.5, true, 7);
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / y.len() as f64;
        assert!((zeros - 0.5).abs() < 0.02, "{zeros}");
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 3.0).abs() / 3.0 < 0.05, "{mean}");
    }

    fn small_encoder(cfg: RecurrentEncoderConfig, seed: u64) -> (ParamStore, BiLstm) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = BiLstm::new(&mut store, "enc", cfg, &mut rng);
        (store, enc)
    }

    fn inputs(t: usize, batch: usize, dim: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| uniform(&mut rng, batch, dim, 1.0)).collect()
    }

    #[test]
    fn default_config_widths() {
        let cfg = RecurrentEncoderConfig::new(24);
        let (store, enc) = small_encoder(cfg, 0);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let xs: Vec<Var> = inputs(5, 3, 24, 1).into_iter().map(|x| tape.constant(x)).collect();
        let (out, summary) = enc.encode(&mut tape, &p, &xs);
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|&o| tape.value(o).shape() == (3, 64)));
        assert_eq!(tape.value(summary).shape(), (3, 64));
    }

    #[test]
    fn length_one_output_equals_summary() {
        let cfg = RecurrentEncoderConfig {
            layers: 2,
            hidden: 5,
            bidirectional: true,
            input_dim: 3,
        };
        let (store, enc) = small_encoder(cfg, 2);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let x = tape.constant(inputs(1, 2, 3, 3).remove(0));
        let (out, summary) = enc.encode(&mut tape, &p, &[x]);
        assert_eq!(tape.value(out[0]), tape.value(summary));
    }

    #[test]
    fn reversal_swaps_directions_with_tied_weights() {
        let cfg = RecurrentEncoderConfig {
            layers: 1,
            hidden: 4,
            bidirectional: true,
            input_dim: 3,
        };
        let (mut store, enc) = small_encoder(cfg, 4);
        let (f, b) = (enc.forward[0], enc.backward[0]);
        for (src, dst) in [(f.w_ih, b.w_ih), (f.w_hh, b.w_hh), (f.b, b.b)] {
            *store.get_mut(dst) = store.get(src).clone();
        }
        let xs = inputs(6, 1, 3, 5);
        let run = |seq: &[Tensor]| {
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let vs: Vec<Var> = seq.iter().map(|x| tape.constant(x.clone())).collect();
            let (out, s) = enc.encode(&mut tape, &p, &vs);
            let outs: Vec<Tensor> = out.iter().map(|&o| tape.value(o).clone()).collect();
            (outs, tape.value(s).clone())
        };
        let (out_a, sum_a) = run(&xs);
        let rev: Vec<Tensor> = xs.iter().rev().cloned().collect();
        let (out_b, sum_b) = run(&rev);
        let swap = |t: &Tensor| {
            let d = t.data();
            Tensor::row_vector([&d[4..8], &d[0..4]].concat())
        };
        assert_eq!(swap(&sum_a), sum_b);
        for t in 0..6 {
            assert_eq!(swap(&out_a[t]), out_b[5 - t]);
        }
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let cfg = RecurrentEncoderConfig {
            layers: 2,
            hidden: 3,
            bidirectional: true,
            input_dim: 2,
        };
        let (store, enc) = small_encoder(cfg, 6);
        let xs = inputs(4, 2, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let proj = uniform(&mut rng, 2, 6, 1.0);
        let proj_t = uniform(&mut rng, 2, 6, 1.0);
        let params = store.values().to_vec();
        let report = gradcheck_sampled(&params, 1e-4, 50, 9, |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let vs: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            let (out, s) = enc.encode(tape, &bound, &vs);
            let a = tape.mul_const(s, proj.clone());
            let b = tape.mul_const(out[1], proj_t.clone());
            let c = tape.add(a, b);
            tape.sum(c)
        })
        .unwrap();
        assert_eq!(report.checked, 50);
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let lin = Linear::new(&mut store, "lin", 3, 2, &mut rng);
        let x = uniform(&mut rng, 4, 3, 1.0);
        let report = gradcheck_sampled(store.values(), 1e-4, 50, 11, |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let xv = tape.constant(x.clone());
            let y = lin.forward(tape, &bound, xv);
            let y = tape.tanh(y);
            tape.sum(y)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }
}
