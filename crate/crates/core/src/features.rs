//! Expert glycemic-variability features of a single window.

use std::io::Write;

use crate::datamodel::{Dataset, PpgrRecord};
use crate::error::{Error, Result};
use crate::{DT_OBS, MEAL_INDEX};

pub const TIR_LOW: f64 = 70.0;
pub const TIR_HIGH: f64 = 180.0;

pub const FEATURE_NAMES: [&str; 10] = [
    "mean",
    "sd",
    "cv",
    "max",
    "min",
    "tir",
    "arc_length",
    "j_index",
    "mage",
    "iauc",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertFeatures {
    pub mean: f64,
    pub sd: f64,
    /// Percent.
    pub cv: f64,
    pub max: f64,
    pub min: f64,
    /// Percent of readings in [70, 180] mg/dL.
    pub tir: f64,
    pub arc_length: f64,
    pub j_index: f64,
    pub mage: f64,
    /// mg*min/dL above the meal-time value.
    pub iauc: f64,
}

impl ExpertFeatures {
    pub fn to_array(&self) -> [f64; 10] {
        [
            self.mean,
            self.sd,
            self.cv,
            self.max,
            self.min,
            self.tir,
            self.arc_length,
            self.j_index,
            self.mage,
            self.iauc,
        ]
    }
}

/// Features of the interpolated trace; needs at least two observations.
pub fn expert_features(record: &PpgrRecord) -> Result<ExpertFeatures> {
    let n = record.n_observed();
    if n < 2 {
        return Err(Error::DegenerateRecord(format!(
            "{}: {n} observed glucose values, need 2",
            record.ppgr_id
        )));
    }
    Ok(trace_features(&record.interpolated_glucose()?))
}

pub fn trace_features(g: &[f64]) -> ExpertFeatures {
    assert!(g.len() > MEAL_INDEX, "trace shorter than the meal index");
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let sd = (g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cv = if mean != 0.0 { 100.0 * sd / mean } else { 0.0 };
    let max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
    let tir = 100.0 * g.iter().filter(|&&v| (TIR_LOW..=TIR_HIGH).contains(&v)).count() as f64 / n;
    let arc_length = g.windows(2).map(|w| (DT_OBS * DT_OBS + (w[1] - w[0]).powi(2)).sqrt()).sum();
    let j_index = 0.001 * (mean + sd).powi(2);
    ExpertFeatures {
        mean,
        sd,
        cv,
        max,
        min,
        tir,
        arc_length,
        j_index,
        mage: mage(g, sd),
        iauc: iauc(g),
    }
}

/// Local extrema after collapsing plateaus, bracketed by the endpoints.
/// Returns only the endpoints when the trace has no interior turning point.
fn turning_points(g: &[f64]) -> Vec<f64> {
    let mut dedup: Vec<f64> = Vec::with_capacity(g.len());
    for &v in g {
        if dedup.last() != Some(&v) {
            dedup.push(v);
        }
    }
    let mut pts = vec![dedup[0]];
    for w in dedup.windows(3) {
        if (w[1] - w[0]) * (w[2] - w[1]) < 0.0 {
            pts.push(w[1]);
        }
    }
    if dedup.len() > 1 {
        pts.push(dedup[dedup.len() - 1]);
    }
    pts
}

/// Mean amplitude of consecutive peak-nadir swings larger than `sd`.
pub fn mage(g: &[f64], sd: f64) -> f64 {
    let pts = turning_points(g);
    if pts.len() < 3 {
        return 0.0;
    }
    let big: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .filter(|&a| a > sd)
        .collect();
    if big.is_empty() {
        0.0
    } else {
        big.iter().sum::<f64>() / big.len() as f64
    }
}

/// Trapezoidal area of the positive part of `g - g[12]` from index 12 on.
pub fn iauc(g: &[f64]) -> f64 {
    let base = g[MEAL_INDEX];
    let inc: Vec<f64> = g[MEAL_INDEX..].iter().map(|v| (v - base).max(0.0)).collect();
    inc.windows(2).map(|w| 0.5 * (w[0] + w[1]) * DT_OBS).sum()
}

pub const FEATURE_HEADER: &str = "ppgr_id,person_id,mean,sd,cv,max,min,tir,arc_length,j_index,mage,iauc";

pub fn dataset_features(dataset: &Dataset) -> Result<Vec<ExpertFeatures>> {
    dataset.records.iter().map(expert_features).collect()
}

pub fn write_features(
    dataset: &Dataset,
    features: &[ExpertFeatures],
    mut out: impl Write,
    meta: Option<&str>,
) -> std::io::Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# {m}")?;
    }
    writeln!(out, "{FEATURE_HEADER}")?;
    for (r, f) in dataset.records.iter().zip(features) {
        let vals: Vec<String> = f.to_array().iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{},{},{}", r.ppgr_id, r.person_id, vals.join(","))?;
    }
    Ok(())
}
