//! Constrained <-> unconstrained maps for the hybrid latents, and the fixed
//! expert prior over the unconstrained space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SEQ_LEN;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rescaled logistic map from the real line onto `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalTransform {
    pub lo: f64,
    pub hi: f64,
}

impl IntervalTransform {
    pub const fn new(lo: f64, hi: f64) -> Self {
        IntervalTransform { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn constrain(&self, x: f64) -> f64 {
        self.lo + self.width() * logistic(x)
    }

    pub fn unconstrain(&self, y: f64) -> Result<f64> {
        if !(y > self.lo && y < self.hi) {
            return Err(Error::OutOfInterval {
                value: y,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let p = (y - self.lo) / self.width();
        Ok((p / (1.0 - p)).ln())
    }

    /// d constrain / dx.
    pub fn derivative(&self, x: f64) -> f64 {
        let s = logistic(x);
        self.width() * s * (1.0 - s)
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi
    }
}

pub fn constrain(x: f64, t: IntervalTransform) -> f64 {
    t.constrain(x)
}

pub fn unconstrain(y: f64, t: IntervalTransform) -> Result<f64> {
    t.unconstrain(y)
}

pub const U_DIM: usize = SEQ_LEN;
pub const X0_DIM: usize = 4;
pub const W_DIM: usize = 6;
pub const LATENT_DIM: usize = U_DIM + X0_DIM + W_DIM;

pub const U_RANGE: IntervalTransform = IntervalTransform::new(0.0, 1000.0);

/// Initial state ranges, order `[G(0), X(0), G1(0), G2(0)]`.
pub const X0_RANGES: [IntervalTransform; X0_DIM] = [
    IntervalTransform::new(50.0, 300.0),
    IntervalTransform::new(0.0, 1.0),
    IntervalTransform::new(0.0, 1.0),
    IntervalTransform::new(0.0, 100.0),
];

/// Parameter ranges, order `[tau_m, G_b, S_G, p_2, S_I, M_I]`.
pub const W_RANGES: [IntervalTransform; W_DIM] = [
    IntervalTransform::new(10.0, 60.0),
    IntervalTransform::new(80.0, 200.0),
    IntervalTransform::new(5e-3, 2e-2),
    IntervalTransform::new(1.0 / 60.0, 1.0 / 15.0),
    IntervalTransform::new(1e-4, 1e-3),
    IntervalTransform::new(0.1, 3.0),
];

pub const X0_NAMES: [&str; X0_DIM] = ["G0", "X0", "G1_0", "G2_0"];
pub const W_NAMES: [&str; W_DIM] = ["tau_m", "G_b", "S_G", "p_2", "S_I", "M_I"];

/// Slicing of `z = (u', x0', w')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentLayout;

impl LatentLayout {
    pub const U: std::ops::Range<usize> = 0..U_DIM;
    pub const X0: std::ops::Range<usize> = U_DIM..U_DIM + X0_DIM;
    pub const W: std::ops::Range<usize> = U_DIM + X0_DIM..LATENT_DIM;

    pub fn transform(dim: usize) -> IntervalTransform {
        if dim < U_DIM {
            U_RANGE
        } else if dim < U_DIM + X0_DIM {
            X0_RANGES[dim - U_DIM]
        } else {
            W_RANGES[dim - U_DIM - X0_DIM]
        }
    }

    pub fn transforms() -> Vec<IntervalTransform> {
        (0..LATENT_DIM).map(Self::transform).collect()
    }

    pub fn constrain_all(z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), LATENT_DIM);
        z.iter()
            .enumerate()
            .map(|(d, &x)| Self::transform(d).constrain(x))
            .collect()
    }
}

/// Factorized normal prior over the 70 unconstrained latents; fixed during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPrior {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Constrained prior means for `w` in layout order.
pub const W_PRIOR_MEAN: [f64; W_DIM] = [30.0, 120.0, 1e-2, 1.0 / 30.0, 5e-4, 1.0];
pub const W_PRIOR_SD: [f64; W_DIM] = [2.0, 1.0, 1.0, 1.0, 1.0, 1.0];
/// Constrained prior means for `x0`.
pub const X0_PRIOR_MEAN: [f64; X0_DIM] = [120.0, 0.1, 0.1, 20.0];
pub const X0_PRIOR_SD: [f64; X0_DIM] = [1.0, 1.0, 1.0, 2.0];
pub const U_PRIOR_SD: f64 = 10.0;

pub fn default_prior() -> ExpertPrior {
    let mut mean = vec![0.0; U_DIM];
    let mut sd = vec![U_PRIOR_SD; U_DIM];
    for (i, &m) in X0_PRIOR_MEAN.iter().enumerate() {
        mean.push(X0_RANGES[i].unconstrain(m).expect("prior mean inside range"));
        sd.push(X0_PRIOR_SD[i]);
    }
    for (i, &m) in W_PRIOR_MEAN.iter().enumerate() {
        mean.push(W_RANGES[i].unconstrain(m).expect("prior mean inside range"));
        sd.push(W_PRIOR_SD[i]);
    }
    ExpertPrior { mean, sd }
}

impl ExpertPrior {
    /// Standard normal over `dim` latents (black-box prior).
    pub fn standard(dim: usize) -> Self {
        ExpertPrior {
            mean: vec![0.0; dim],
            sd: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// KL(N(mq, sq^2) || N(mp, sp^2)) for one dimension.
pub fn kl_normal(mq: f64, sq: f64, mp: f64, sp: f64) -> f64 {
    (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5
}

pub fn kl_factorized(mq: &[f64], sq: &[f64], prior: &ExpertPrior) -> f64 {
    mq.iter()
        .zip(sq)
        .zip(prior.mean.iter().zip(&prior.sd))
        .map(|((&m, &s), (&pm, &ps))| kl_normal(m, s, pm, ps))
        .sum()
}
