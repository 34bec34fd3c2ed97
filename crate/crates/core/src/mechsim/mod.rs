//! Bergman minimal model with two-compartment glucose appearance and
//! glucose-proportional endogenous insulin, integrated by explicit Euler.
//!
//! State `(G, X, G1, G2)`:
//!
//! ```text
//! I   = M_I * max(G - G_b, 0)
//! dG  = -X*G - S_G*(G - G_b) + G2/tau_m
//! dX  = -p_2*X + p_2*S_I*I
//! dG1 = -G1/tau_m + u/V_G
//! dG2 = (G1 - G2)/tau_m
//! ```

pub mod cohort;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{W_DIM, W_RANGES, X0_DIM, X0_RANGES};
use crate::{DT_OBS, SEQ_LEN};

/// Glucose magnitude beyond which integration is declared unstable.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechParams {
    /// Meal-appearance timescale, min.
    pub tau_m: f64,
    /// Basal glucose, mg/dL.
    pub g_b: f64,
    /// Glucose effectiveness, 1/min.
    pub s_g: f64,
    /// Insulin action rate, 1/min.
    pub p_2: f64,
    /// Insulin sensitivity, (L/mU)/min.
    pub s_i: f64,
    /// Insulin productivity, (mU/L)/(mg/dL).
    pub m_i: f64,
}

impl MechParams {
    pub fn to_array(&self) -> [f64; W_DIM] {
        [self.tau_m, self.g_b, self.s_g, self.p_2, self.s_i, self.m_i]
    }

    pub fn from_slice(w: &[f64]) -> Self {
        MechParams {
            tau_m: w[0],
            g_b: w[1],
            s_g: w[2],
            p_2: w[3],
            s_i: w[4],
            m_i: w[5],
        }
    }

    pub fn in_range(&self) -> bool {
        self.to_array()
            .iter()
            .zip(W_RANGES)
            .all(|(&v, t)| t.contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MechState {
    /// Plasma glucose, mg/dL.
    pub g: f64,
    /// Insulin action, 1/min.
    pub x: f64,
    /// Gut compartment 1, mg/dL.
    pub g1: f64,
    /// Gut compartment 2, mg/dL.
    pub g2: f64,
}

impl MechState {
    pub fn new(g: f64, x: f64, g1: f64, g2: f64) -> Self {
        MechState { g, x, g1, g2 }
    }

    pub fn basal(params: &MechParams) -> Self {
        MechState::new(params.g_b, 0.0, 0.0, 0.0)
    }

    pub fn to_array(&self) -> [f64; X0_DIM] {
        [self.g, self.x, self.g1, self.g2]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        MechState::new(s[0], s[1], s[2], s[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn in_initial_range(&self) -> bool {
        self.to_array()
            .iter()
            .zip(X0_RANGES)
            .all(|(&v, t)| t.contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Minutes between observations.
    pub dt_obs: f64,
    /// Euler sub-steps per observation interval.
    pub substeps: usize,
    /// Accessible glucose volume, dL.
    pub v_g: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_obs: DT_OBS,
            substeps: 5,
            v_g: 100.0,
        }
    }
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        self.dt_obs / self.substeps as f64
    }
}

pub fn derivatives(state: &MechState, p: &MechParams, u_t: f64, v_g: f64) -> Result<MechState> {
    if !state.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let excess = (state.g - p.g_b).max(0.0);
    let insulin = p.m_i * excess;
    Ok(MechState {
        g: -state.x * state.g - p.s_g * (state.g - p.g_b) + state.g2 / p.tau_m,
        x: -p.p_2 * state.x + p.p_2 * p.s_i * insulin,
        g1: -state.g1 / p.tau_m + u_t / v_g,
        g2: (state.g1 - state.g2) / p.tau_m,
    })
}

/// Stored forward pass; enough to run the discrete adjoint.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// State at each observation time, `states[0] == x0`.
    pub states: Vec<MechState>,
    /// State before every Euler sub-step, in integration order.
    pre_step: Vec<MechState>,
    /// Per sub-step flags: which components were clamped at zero.
    clamped: Vec<[bool; 4]>,
}

impl Trajectory {
    pub fn glucose(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.g).collect()
    }
}

/// Explicit Euler over the 60-point observation grid. `u` is held constant
/// over each observation interval; states are clamped at zero after each step.
pub fn simulate(x0: &MechState, params: &MechParams, u: &[f64], cfg: &SimConfig) -> Result<Trajectory> {
    assert_eq!(u.len(), SEQ_LEN, "carb rate must have 60 entries");
    assert!(cfg.substeps >= 1);
    if !x0.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let dt = cfg.dt();
    let mut states = Vec::with_capacity(SEQ_LEN);
    let mut pre_step = Vec::with_capacity((SEQ_LEN - 1) * cfg.substeps);
    let mut clamped = Vec::with_capacity((SEQ_LEN - 1) * cfg.substeps);
    let mut s = *x0;
    states.push(s);
    for &u_i in &u[..SEQ_LEN - 1] {
        for _ in 0..cfg.substeps {
            let d = derivatives(&s, params, u_i, cfg.v_g)?;
            pre_step.push(s);
            let next = [s.g + dt * d.g, s.x + dt * d.x, s.g1 + dt * d.g1, s.g2 + dt * d.g2];
            let mask = next.map(|v| v < 0.0);
            s = MechState::from_slice(&next.map(|v| v.max(0.0)));
            clamped.push(mask);
            if !s.is_finite() {
                return Err(Error::NonFiniteState);
            }
            if s.g.abs() > BLOWUP_LIMIT {
                return Err(Error::NumericalBlowup(s.g));
            }
        }
        states.push(s);
    }
    Ok(Trajectory {
        states,
        pre_step,
        clamped,
    })
}

pub fn simulate_glucose(x0: &MechState, params: &MechParams, u: &[f64], cfg: &SimConfig) -> Result<Vec<f64>> {
    simulate(x0, params, u, cfg).map(|t| t.glucose())
}

/// Gradients of a scalar loss with respect to the simulator inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGradients {
    pub x0: [f64; X0_DIM],
    pub w: [f64; W_DIM],
    pub u: Vec<f64>,
}

/// Discrete adjoint of [`simulate`]: given dL/dG at each observation time,
/// returns dL/dx0, dL/dw and dL/du of the Euler scheme exactly.
pub fn glucose_vjp(
    traj: &Trajectory,
    params: &MechParams,
    cfg: &SimConfig,
    grad_g: &[f64],
) -> SimGradients {
    assert_eq!(grad_g.len(), SEQ_LEN);
    let p = params;
    let dt = cfg.dt();
    let inv_tau = 1.0 / p.tau_m;
    let inv_tau2 = inv_tau * inv_tau;
    let mut lam = [0.0f64; 4];
    let mut gw = [0.0f64; W_DIM];
    let mut gu = vec![0.0; SEQ_LEN];
    for i in (1..SEQ_LEN).rev() {
        lam[0] += grad_g[i];
        for k in (0..cfg.substeps).rev() {
            let idx = (i - 1) * cfg.substeps + k;
            let s = traj.pre_step[idx];
            for (l, &c) in lam.iter_mut().zip(&traj.clamped[idx]) {
                if c {
                    *l = 0.0;
                }
            }
            let above = s.g > p.g_b;
            let excess = (s.g - p.g_b).max(0.0);
            let insulin = p.m_i * excess;
            let [lg, lx, lg1, lg2] = lam;
            // Parameter sensitivities of f, contracted with lambda.
            gw[0] += dt
                * (lg * (-s.g2 * inv_tau2) + lg1 * (s.g1 * inv_tau2) + lg2 * (-(s.g1 - s.g2) * inv_tau2));
            let dfx_dgb = if above { -p.p_2 * p.s_i * p.m_i } else { 0.0 };
            gw[1] += dt * (lg * p.s_g + lx * dfx_dgb);
            gw[2] += dt * (lg * -(s.g - p.g_b));
            gw[3] += dt * (lx * (-s.x + p.s_i * insulin));
            gw[4] += dt * (lx * p.p_2 * insulin);
            gw[5] += dt * (lx * p.p_2 * p.s_i * excess);
            gu[i - 1] += dt * lg1 / cfg.v_g;
            // State Jacobian transpose.
            let dfx_dg = if above { p.p_2 * p.s_i * p.m_i } else { 0.0 };
            lam = [
                lg + dt * (lg * (-s.x - p.s_g) + lx * dfx_dg),
                lx + dt * (lg * -s.g + lx * -p.p_2),
                lg1 + dt * (lg1 * -inv_tau + lg2 * inv_tau),
                lg2 + dt * (lg * inv_tau + lg2 * -inv_tau),
            ];
        }
    }
    lam[0] += grad_g[0];
    SimGradients { x0: lam, w: gw, u: gu }
}

/// Logged carbohydrate grams per timestep to a carb-rate profile: each entry
/// of `c` grams becomes a 15-minute pulse of `c*1000/15` mg/min, summed and
/// clamped to 1000 mg/min.
pub fn carbs_to_rate(carbs_g: &[f64]) -> Vec<f64> {
    const PULSE_STEPS: usize = 3;
    let mut u = vec![0.0; carbs_g.len()];
    for (t, &c) in carbs_g.iter().enumerate() {
        if c > 0.0 {
            let rate = c * 1000.0 / (PULSE_STEPS as f64 * DT_OBS);
            for slot in u.iter_mut().skip(t).take(PULSE_STEPS) {
                *slot += rate;
            }
        }
    }
    u.iter_mut().for_each(|v| *v = v.min(crate::transforms::U_RANGE.hi));
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn typical() -> MechParams {
        MechParams {
            tau_m: 30.0,
            g_b: 120.0,
            s_g: 0.01,
            p_2: 1.0 / 30.0,
            s_i: 5e-4,
            m_i: 1.0,
        }
    }

    fn pulse(level: f64) -> Vec<f64> {
        let mut u = vec![0.0; SEQ_LEN];
        u[12..15].iter_mut().for_each(|v| *v = level);
        u
    }

    pub(crate) fn random_params(rng: &mut impl Rng) -> MechParams {
        let w: Vec<f64> = W_RANGES.iter().map(|t| rng.random_range(t.lo..t.hi)).collect();
        MechParams::from_slice(&w)
    }

    #[test]
    fn steady_state_derivatives_vanish() {
        let p = typical();
        let d = derivatives(&MechState::basal(&p), &p, 0.0, 100.0).unwrap();
        assert_eq!(d, MechState::default());
    }

    #[test]
    fn hand_evaluated_glucose_derivative() {
        let p = MechParams {
            g_b: 120.0,
            s_g: 0.01,
            tau_m: 30.0,
            ..typical()
        };
        let s = MechState::new(180.0, 0.02, 0.0, 30.0);
        let d = derivatives(&s, &p, 0.0, 100.0).unwrap();
        assert!((d.g - (-3.2)).abs() < 1e-12, "{}", d.g);
    }

    #[test]
    fn disabled_insulin_keeps_action_at_zero() {
        let p = MechParams { m_i: 0.0, ..typical() };
        let traj = simulate(&MechState::new(200.0, 0.0, 0.5, 40.0), &p, &pulse(800.0), &SimConfig::default()).unwrap();
        assert!(traj.states.iter().all(|s| s.x == 0.0));
    }

    #[test]
    fn non_finite_state_rejected() {
        let p = typical();
        assert!(matches!(
            derivatives(&MechState::new(f64::NAN, 0.0, 0.0, 0.0), &p, 0.0, 100.0),
            Err(Error::NonFiniteState)
        ));
    }

    #[test]
    fn fixed_point_and_meal_shape() {
        let p = typical();
        let cfg = SimConfig::default();
        let flat = simulate_glucose(&MechState::basal(&p), &p, &vec![0.0; SEQ_LEN], &cfg).unwrap();
        assert!(flat.iter().all(|&g| g == p.g_b));

        let g = simulate_glucose(&MechState::basal(&p), &p, &pulse(600.0), &cfg).unwrap();
        let peak = g.iter().cloned().fold(f64::MIN, f64::max);
        assert!(peak > p.g_b);
        assert!(g[59] < peak);
    }

    #[test]
    fn larger_volume_lowers_peak() {
        let p = typical();
        let u = pulse(600.0);
        let small = SimConfig::default();
        let large = SimConfig { v_g: 200.0, ..small };
        let peak = |cfg: &SimConfig| {
            simulate_glucose(&MechState::basal(&p), &p, &u, cfg)
                .unwrap()
                .into_iter()
                .fold(f64::MIN, f64::max)
                - p.g_b
        };
        assert!(peak(&large) < peak(&small));
    }

    #[test]
    fn decay_toward_basal_without_insulin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = MechParams { m_i: 0.0, ..random_params(&mut rng) };
            let x0 = MechState::new(p.g_b + rng.random_range(1.0..100.0), 0.0, 0.0, 0.0);
            let g = simulate_glucose(&x0, &p, &vec![0.0; SEQ_LEN], &SimConfig::default()).unwrap();
            for w in g.windows(2) {
                assert!(w[1] < w[0] && w[1] > p.g_b);
            }
        }
    }

    #[test]
    fn gut_compartments_drain_without_intake() {
        let p = typical();
        let traj = simulate(&MechState::new(120.0, 0.0, 1.0, 50.0), &p, &vec![0.0; SEQ_LEN], &SimConfig::default()).unwrap();
        for w in traj.states.windows(2) {
            assert!(w[1].g1 < w[0].g1);
            assert!(w[1].g1 >= 0.0 && w[1].g2 >= 0.0);
        }
    }

    #[test]
    fn euler_converges_at_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let run = |p: &MechParams, u: &[f64], substeps: usize| {
            simulate_glucose(&MechState::basal(p), p, u, &SimConfig { substeps, ..SimConfig::default() }).unwrap()
        };
        for _ in 0..200 {
            let p = random_params(&mut rng);
            let u = pulse(rng.random_range(100.0..1000.0));
            let (g5, g10, g20) = (run(&p, &u, 5), run(&p, &u, 10), run(&p, &u, 20));
            let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let (coarse, fine) = (max_diff(&g5, &g10), max_diff(&g10, &g20));
            assert!(fine < coarse);
            // Halving dt should roughly halve the discrepancy.
            let ratio = coarse / fine;
            assert!((1.5..2.6).contains(&ratio), "ratio {ratio} for {p:?}");
        }
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SimConfig::default();
        for _ in 0..20 {
            let p = random_params(&mut rng);
            let x0 = MechState::new(
                rng.random_range(60.0..250.0),
                rng.random_range(0.0..0.05),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..60.0),
            );
            let u: Vec<f64> = (0..SEQ_LEN).map(|_| rng.random_range(0.0..400.0)).collect();
            let weights: Vec<f64> = (0..SEQ_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |x0: &MechState, p: &MechParams, u: &[f64]| -> f64 {
                simulate_glucose(x0, p, u, &cfg)
                    .unwrap()
                    .iter()
                    .zip(&weights)
                    .map(|(g, w)| g * w)
                    .sum()
            };
            let traj = simulate(&x0, &p, &u, &cfg).unwrap();
            let grads = glucose_vjp(&traj, &p, &cfg, &weights);
            let check = |an: f64, fd: f64| {
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "analytic {an} vs fd {fd}");
            };
            for j in 0..W_DIM {
                let h = 1e-6 * W_RANGES[j].width();
                let mut wp = p.to_array();
                let mut wm = p.to_array();
                wp[j] += h;
                wm[j] -= h;
                let fd = (loss(&x0, &MechParams::from_slice(&wp), &u) - loss(&x0, &MechParams::from_slice(&wm), &u)) / (2.0 * h);
                check(grads.w[j], fd);
            }
            for j in 0..X0_DIM {
                let h = 1e-6 * X0_RANGES[j].width();
                let mut sp = x0.to_array();
                let mut sm = x0.to_array();
                sp[j] += h;
                sm[j] -= h;
                let fd = (loss(&MechState::from_slice(&sp), &p, &u) - loss(&MechState::from_slice(&sm), &p, &u)) / (2.0 * h);
                check(grads.x0[j], fd);
            }
            for j in [0, 12, 40, 58] {
                let h = 1e-3;
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += h;
                um[j] -= h;
                let fd = (loss(&x0, &p, &up) - loss(&x0, &p, &um)) / (2.0 * h);
                check(grads.u[j], fd);
            }
            assert_eq!(grads.u[59], 0.0);
        }
    }

    #[test]
    fn carbs_become_clamped_pulses() {
        let mut carbs = vec![0.0; SEQ_LEN];
        carbs[12] = 6.0;
        carbs[40] = 30.0;
        let u = carbs_to_rate(&carbs);
        assert_eq!(&u[12..15], &[400.0; 3]);
        assert_eq!(u[15], 0.0);
        assert_eq!(&u[40..43], &[1000.0; 3]);
        assert_eq!(u.iter().filter(|&&v| v > 0.0).count(), 6);
    }
}
