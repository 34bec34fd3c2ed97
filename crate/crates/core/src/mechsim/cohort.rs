//! Synthetic cohort generator: severity groups with distinct parameter
//! distributions, meals simulated through the ODE, and in-the-wild meal-log
//! corruption applied to the *logged* covariates only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{carbs_to_rate, simulate_glucose, MechParams, MechState, SimConfig};
use crate::datamodel::{
    Dataset, Demographics, Diagnosis, PpgrRecord, Sex, CARBS, GLUCOSE_MAX, GLUCOSE_MIN, N_MEAL,
};
use crate::error::{Error, Result};
use crate::transforms::{IntervalTransform, W_DIM, W_NAMES, W_RANGES};
use crate::{DT_OBS, MEAL_INDEX, SEQ_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDist {
    pub mean: f64,
    pub sd: f64,
}

impl ParamDist {
    pub const fn new(mean: f64, sd: f64) -> Self {
        ParamDist { mean, sd }
    }

    /// Normal truncated to the interior of `range` by rejection.
    fn sample(&self, range: IntervalTransform, rng: &mut impl Rng) -> f64 {
        let inner = shrink(range);
        if self.sd > 0.0 {
            let n = Normal::new(self.mean, self.sd).expect("validated sd");
            for _ in 0..1000 {
                let v = n.sample(rng);
                if v >= inner.lo && v <= inner.hi {
                    return v;
                }
            }
        }
        self.mean.clamp(inner.lo, inner.hi)
    }
}

/// Keeps samples strictly inside the open interval so they can be unconstrained.
fn shrink(t: IntervalTransform) -> IntervalTransform {
    let eps = 1e-6 * t.width();
    IntervalTransform::new(t.lo + eps, t.hi - eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub diagnosis: Diagnosis,
    pub n_persons: usize,
    pub ppgrs_per_person: usize,
    /// Person-level parameter distributions in `[tau_m, G_b, S_G, p_2, S_I, M_I]` order.
    pub params: [ParamDist; W_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub groups: Vec<GroupSpec>,
    /// Log-normal spread of record parameters around the person's values.
    pub within_person_sd: f64,
    /// Gaussian CGM noise, mg/dL.
    pub noise_sd: f64,
    /// Meal-log timestamps are shifted by a uniform offset in `±jitter_minutes`.
    pub jitter_minutes: f64,
    /// Logged carbs are multiplied by a uniform factor in this range.
    pub carb_scale: (f64, f64),
    /// Probability that an extra (non-anchor) meal is missing from the log.
    pub deletion_prob: f64,
    /// Carbohydrates per meal, grams.
    pub meal_carbs: (f64, f64),
    /// Extra meals per window, drawn uniformly from `0..=max_extra_meals`.
    pub max_extra_meals: usize,
    pub missing_glucose_prob: f64,
    /// Probability that a logged meal lacks its sugar and fiber entries.
    pub missing_macro_prob: f64,
    pub sim: SimConfig,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            groups: vec![
                GroupSpec {
                    name: "prediabetes".into(),
                    diagnosis: Diagnosis::Prediabetes,
                    n_persons: 20,
                    ppgrs_per_person: 12,
                    params: [
                        ParamDist::new(22.0, 4.0),
                        ParamDist::new(105.0, 8.0),
                        ParamDist::new(0.013, 0.002),
                        ParamDist::new(1.0 / 25.0, 0.005),
                        ParamDist::new(6e-4, 1e-4),
                        ParamDist::new(1.6, 0.3),
                    ],
                },
                GroupSpec {
                    name: "t2d".into(),
                    diagnosis: Diagnosis::T2d,
                    n_persons: 20,
                    ppgrs_per_person: 12,
                    params: [
                        ParamDist::new(38.0, 6.0),
                        ParamDist::new(150.0, 12.0),
                        ParamDist::new(0.008, 0.0015),
                        ParamDist::new(1.0 / 40.0, 0.004),
                        ParamDist::new(3e-4, 8e-5),
                        ParamDist::new(0.7, 0.25),
                    ],
                },
            ],
            within_person_sd: 0.05,
            noise_sd: 5.0,
            jitter_minutes: 30.0,
            carb_scale: (0.5, 2.0),
            deletion_prob: 0.2,
            meal_carbs: (5.0, 15.0),
            max_extra_meals: 2,
            missing_glucose_prob: 0.02,
            missing_macro_prob: 0.1,
            sim: SimConfig::default(),
        }
    }
}

impl CohortSpec {
    /// Default groups resized to `persons` per group and `ppgrs` windows each.
    pub fn sized(persons: usize, ppgrs: usize) -> Self {
        let mut spec = CohortSpec::default();
        for g in &mut spec.groups {
            g.n_persons = persons;
            g.ppgrs_per_person = ppgrs;
        }
        spec
    }

    /// Same cohort with all log corruption and observation noise switched off.
    pub fn clean(mut self) -> Self {
        self.noise_sd = 0.0;
        self.jitter_minutes = 0.0;
        self.carb_scale = (1.0, 1.0);
        self.deletion_prob = 0.0;
        self.missing_glucose_prob = 0.0;
        self.missing_macro_prob = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.groups.len() < 2 {
            return bad(format!("need at least 2 groups, got {}", self.groups.len()));
        }
        for g in &self.groups {
            if g.n_persons == 0 || g.ppgrs_per_person == 0 {
                return bad(format!("group {} is empty", g.name));
            }
            for (i, d) in g.params.iter().enumerate() {
                if !(d.sd >= 0.0) || !d.mean.is_finite() {
                    return bad(format!("group {} parameter {} has invalid distribution", g.name, W_NAMES[i]));
                }
                if !W_RANGES[i].contains(d.mean) {
                    return bad(format!("group {} mean of {} outside its range", g.name, W_NAMES[i]));
                }
            }
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.deletion_prob) || !prob(self.missing_glucose_prob) || !prob(self.missing_macro_prob) {
            return bad("probabilities must lie in [0,1]".into());
        }
        if !(self.noise_sd >= 0.0) || !(self.jitter_minutes >= 0.0) || !(self.within_person_sd >= 0.0) {
            return bad("noise, jitter and spread must be >= 0".into());
        }
        if !(self.carb_scale.0 > 0.0 && self.carb_scale.0 <= self.carb_scale.1) {
            return bad("carb_scale must satisfy 0 < lo <= hi".into());
        }
        if !(self.meal_carbs.0 > 0.0 && self.meal_carbs.0 <= self.meal_carbs.1) {
            return bad("meal_carbs must satisfy 0 < lo <= hi".into());
        }
        if self.sim.substeps == 0 || !(self.sim.v_g > 0.0) {
            return bad("sim substeps and V_G must be positive".into());
        }
        Ok(())
    }
}

/// Uncorrupted generating values for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ppgr_id: String,
    pub person_id: String,
    pub group: String,
    pub params: MechParams,
    pub x0: MechState,
    /// True carb rate, mg/min.
    pub u: Vec<f64>,
    /// True carbohydrate grams per timestep.
    pub carbs: Vec<f64>,
    /// Timestep at which the anchor meal was actually eaten.
    pub meal_onset: usize,
}

impl GroundTruth {
    pub fn total_u(&self) -> f64 {
        self.u.iter().sum::<f64>() * DT_OBS
    }
}

struct Meal {
    true_t: usize,
    logged_t: Option<usize>,
    carbs: f64,
}

fn person_rng(seed: u64, person: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(person as u64 + 1);
    rng
}

fn jitter_steps(spec: &CohortSpec, rng: &mut impl Rng) -> i64 {
    if spec.jitter_minutes > 0.0 {
        (rng.random_range(-spec.jitter_minutes..=spec.jitter_minutes) / DT_OBS).round() as i64
    } else {
        0
    }
}

fn generate_person(
    spec: &CohortSpec,
    group: &GroupSpec,
    person_idx: usize,
    seed: u64,
) -> Result<Vec<(PpgrRecord, GroundTruth)>> {
    let mut rng = person_rng(seed, person_idx);
    let person_id = format!("p{:03}", person_idx + 1);
    let person_w: Vec<f64> = group
        .params
        .iter()
        .zip(W_RANGES)
        .map(|(d, r)| d.sample(r, &mut rng))
        .collect();
    let demographics = Demographics {
        age: (rng.random_range(35.0..75.0f64) * 10.0).round() / 10.0,
        weight: (Normal::new(85.0, 15.0).unwrap().sample(&mut rng) as f64).clamp(45.0, 160.0).round(),
        sex: if rng.random_bool(0.5) { Sex::F } else { Sex::M },
    };
    let mut out = Vec::with_capacity(group.ppgrs_per_person);
    for m in 0..group.ppgrs_per_person {
        let w: Vec<f64> = person_w
            .iter()
            .zip(W_RANGES)
            .map(|(&v, r)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let inner = shrink(r);
                (v * (spec.within_person_sd * z).exp()).clamp(inner.lo, inner.hi)
            })
            .collect();
        let params = MechParams::from_slice(&w);
        let x0 = MechState::new(
            (params.g_b + 3.0 * rng.sample::<f64, _>(StandardNormal)).clamp(51.0, 299.0),
            rng.random_range(0.0..1e-3),
            rng.random_range(0.0..0.2),
            rng.random_range(0.0..2.0),
        );

        let mut meals = Vec::new();
        let anchor_shift = jitter_steps(spec, &mut rng);
        let anchor_true = (MEAL_INDEX as i64 - anchor_shift).clamp(0, SEQ_LEN as i64 - 1) as usize;
        meals.push(Meal {
            true_t: anchor_true,
            logged_t: Some(MEAL_INDEX),
            carbs: rng.random_range(spec.meal_carbs.0..=spec.meal_carbs.1),
        });
        let n_extra = rng.random_range(0..=spec.max_extra_meals);
        for _ in 0..n_extra {
            let true_t = rng.random_range(MEAL_INDEX + 6..=50);
            let shift = jitter_steps(spec, &mut rng);
            let deleted = spec.deletion_prob > 0.0 && rng.random_bool(spec.deletion_prob);
            let logged = (true_t as i64 + shift).clamp(0, SEQ_LEN as i64 - 1) as usize;
            meals.push(Meal {
                true_t,
                logged_t: (!deleted).then_some(logged),
                carbs: rng.random_range(spec.meal_carbs.0..=spec.meal_carbs.1),
            });
        }

        let mut true_carbs = vec![0.0; SEQ_LEN];
        for meal in &meals {
            true_carbs[meal.true_t] += meal.carbs;
        }
        let u = carbs_to_rate(&true_carbs);
        let clean = simulate_glucose(&x0, &params, &u, &spec.sim)?;

        let glucose: Vec<Option<f64>> = clean
            .iter()
            .map(|&g| {
                let noisy = if spec.noise_sd > 0.0 {
                    g + spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    g
                };
                let missing = spec.missing_glucose_prob > 0.0 && rng.random_bool(spec.missing_glucose_prob);
                (!missing).then(|| noisy.clamp(GLUCOSE_MIN, GLUCOSE_MAX))
            })
            .collect();

        let mut covariates = vec![[Some(0.0); N_MEAL]; SEQ_LEN];
        for meal in &meals {
            let scale = if spec.carb_scale.0 < spec.carb_scale.1 {
                rng.random_range(spec.carb_scale.0..=spec.carb_scale.1)
            } else {
                spec.carb_scale.0
            };
            let logged_carbs = meal.carbs * scale;
            let total = logged_carbs * rng.random_range(2.0..4.0);
            let sugar = logged_carbs * rng.random_range(0.1..0.5);
            let fiber = rng.random_range(0.0..6.0);
            let fat = rng.random_range(0.0..30.0);
            let protein = rng.random_range(0.0..30.0);
            let drop_macro = spec.missing_macro_prob > 0.0 && rng.random_bool(spec.missing_macro_prob);
            let Some(t) = meal.logged_t else { continue };
            let row = &mut covariates[t];
            let add = |slot: &mut Option<f64>, v: f64| *slot = Some(slot.unwrap_or(0.0) + v);
            add(&mut row[0], total);
            add(&mut row[CARBS], logged_carbs);
            add(&mut row[4], fat);
            add(&mut row[5], protein);
            if drop_macro {
                row[2] = None;
                row[3] = None;
            } else {
                add(&mut row[2], sugar);
                add(&mut row[3], fiber);
            }
        }

        let ppgr_id = format!("{person_id}_m{:02}", m + 1);
        out.push((
            PpgrRecord {
                person_id: person_id.clone(),
                ppgr_id: ppgr_id.clone(),
                glucose,
                meals: covariates,
                demographics,
                diagnosis: Some(group.diagnosis),
            },
            GroundTruth {
                ppgr_id,
                person_id: person_id.clone(),
                group: group.name.clone(),
                params,
                x0,
                u,
                carbs: true_carbs,
                meal_onset: anchor_true,
            },
        ));
    }
    Ok(out)
}

/// Generates the corrupted dataset plus per-record ground truth, in dataset order.
/// Output depends only on `(spec, seed)`, never on the worker count.
pub fn generate_cohort(spec: &CohortSpec, seed: u64) -> Result<(Dataset, Vec<GroundTruth>)> {
    spec.validate()?;
    let persons: Vec<(usize, &GroupSpec)> = spec
        .groups
        .iter()
        .flat_map(|g| std::iter::repeat(g).take(g.n_persons))
        .enumerate()
        .collect();
    let per_person: Vec<Vec<(PpgrRecord, GroundTruth)>> = persons
        .par_iter()
        .map(|&(idx, g)| generate_person(spec, g, idx, seed))
        .collect::<Result<_>>()?;
    let (records, truth): (Vec<_>, Vec<_>) = per_person.into_iter().flatten().unzip();
    let dataset = Dataset::new(records)?;
    let mut truth: Vec<GroundTruth> = truth;
    truth.sort_by(|a, b| (&a.person_id, &a.ppgr_id).cmp(&(&b.person_id, &b.ppgr_id)));
    Ok((dataset, truth))
}

pub const GROUND_TRUTH_HEADER: &str = "ppgr_id,person_id,group,tau_m,G_b,S_G,p_2,S_I,M_I,G0,X0,G1_0,G2_0,meal_onset,total_u";

pub fn write_ground_truth(truth: &[GroundTruth], mut out: impl std::io::Write, meta: Option<&str>) -> std::io::Result<()> {
    if let Some(meta) = meta {
        writeln!(out, "# {meta}")?;
    }
    let u_cols: Vec<String> = (0..SEQ_LEN).map(|t| format!("u_{t}")).collect();
    writeln!(out, "{GROUND_TRUTH_HEADER},{}", u_cols.join(","))?;
    for g in truth {
        let w = g.params.to_array().map(|v| v.to_string()).join(",");
        let x = g.x0.to_array().map(|v| v.to_string()).join(",");
        let u: Vec<String> = g.u.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{w},{x},{},{},{}",
            g.ppgr_id,
            g.person_id,
            g.group,
            g.meal_onset,
            g.total_u(),
            u.join(",")
        )?;
    }
    Ok(())
}
