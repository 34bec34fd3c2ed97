//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; missing keys keep their defaults. Lists are comma separated and
//! distributions are written `mean,sd`.
//!
//! ```text
//! seed = 7
//! methods = hybrid,mechanistic,features
//! epochs = 100
//! cohort.jitter_minutes = 30
//! cohort.groups = prediabetes,t2d
//! group.t2d.persons = 20
//! group.t2d.G_b = 150,12
//! prior.tau_m = 30,2
//! ```
//!
//! Keys, with defaults in brackets:
//!
//! * `seed` [0], `k` [2], `nmi_normalization` [arithmetic|geometric],
//!   `methods` [hybrid,blackbox,tcl,mechanistic,features,raw,dtw]
//! * `epochs` [100], `batch` [64], `lr` [0.01], `beta_hat` [0.01],
//!   `dropout` [0.5], `hidden` [32], `layers` [2], `bidirectional` [true]
//! * `tcl.epochs` [500], `tcl.lr` [0.01]
//! * `mech.steps` [2000], `mech.lr` [0.01], `mech.init_jitter` [0.1]
//! * `sim.substeps` [5], `sim.v_g` [100]
//! * `cohort.within_person_sd`, `cohort.noise_sd`, `cohort.jitter_minutes`,
//!   `cohort.carb_scale` (lo,hi), `cohort.deletion_prob`, `cohort.meal_carbs`
//!   (lo,hi), `cohort.max_extra_meals`, `cohort.missing_glucose_prob`,
//!   `cohort.missing_macro_prob`, `cohort.groups` (names)
//! * `group.<name>.diagnosis`, `group.<name>.persons`, `group.<name>.ppgrs`,
//!   `group.<name>.<param>` for param in tau_m, G_b, S_G, p_2, S_I, M_I
//! * `prior.u_sd` [10], `prior.<name>` (constrained mean, unconstrained sd)
//!   for G0, X0, G1_0, G2_0 and the six parameters

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::baselines::{MechFitConfig, TclConfig};
use crate::datamodel::Diagnosis;
use crate::error::{Error, Result};
use crate::evalcluster::Normalization;
use crate::hybridvae::{HybridConfig, TrainConfig};
use crate::mechsim::cohort::{CohortSpec, GroupSpec, ParamDist};
use crate::mechsim::SimConfig;
use crate::transforms::{
    ExpertPrior, U_DIM, U_PRIOR_SD, W_DIM, W_NAMES, W_PRIOR_MEAN, W_PRIOR_SD, W_RANGES, X0_DIM, X0_NAMES,
    X0_PRIOR_MEAN, X0_PRIOR_SD, X0_RANGES,
};

pub const METHODS: [&str; 7] = ["hybrid", "blackbox", "tcl", "mechanistic", "features", "raw", "dtw"];

/// Prior over the latents, with `x0`/`w` means given in constrained units.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub u_sd: f64,
    pub x0: [(f64, f64); X0_DIM],
    pub w: [(f64, f64); W_DIM],
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            u_sd: U_PRIOR_SD,
            x0: std::array::from_fn(|i| (X0_PRIOR_MEAN[i], X0_PRIOR_SD[i])),
            w: std::array::from_fn(|i| (W_PRIOR_MEAN[i], W_PRIOR_SD[i])),
        }
    }
}

impl PriorSpec {
    pub fn to_prior(&self) -> Result<ExpertPrior> {
        let mut mean = vec![0.0; U_DIM];
        let mut sd = vec![self.u_sd; U_DIM];
        let pairs = self.x0.iter().zip(X0_RANGES.iter()).chain(self.w.iter().zip(W_RANGES.iter()));
        for (&(m, s), range) in pairs {
            mean.push(range.unconstrain(m)?);
            sd.push(s);
        }
        if sd.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("prior sds must be positive".into()));
        }
        Ok(ExpertPrior { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub normalization: Normalization,
    pub methods: Vec<String>,
    pub train: TrainConfig,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
    pub tcl: TclConfig,
    pub mech: MechFitConfig,
    pub sim: SimConfig,
    pub cohort: CohortSpec,
    pub prior: PriorSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            k: 2,
            normalization: Normalization::Arithmetic,
            methods: METHODS.iter().map(|m| m.to_string()).collect(),
            train: TrainConfig::default(),
            hidden: 32,
            layers: 2,
            bidirectional: true,
            tcl: TclConfig::default(),
            mech: MechFitConfig::default(),
            sim: SimConfig::default(),
            cohort: CohortSpec::default(),
            prior: PriorSpec::default(),
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("bad value `{value}` for `{key}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn pair(key: &str, value: &str) -> Result<(f64, f64)> {
    match value.split(',').map(str::trim).collect::<Vec<_>>().as_slice() {
        [a, b] => Ok((num(key, a)?, num(key, b)?)),
        _ => Err(bad(key, value)),
    }
}

fn template_group(name: &str) -> GroupSpec {
    let defaults = CohortSpec::default().groups;
    let mut g = defaults
        .iter()
        .find(|g| g.name == name)
        .unwrap_or(&defaults[0])
        .clone();
    g.name = name.to_string();
    g
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = RunConfig::default();
        // Group lists first so per-group keys can refer to new groups.
        if let Some((_, v)) = entries.iter().rev().find(|(k, _)| k == "cohort.groups") {
            cfg.cohort.groups = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(template_group)
                .collect();
        }
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Propagates the run seed and simulator settings into the sub-configs.
    pub fn sync(&mut self) {
        self.train.seed = self.seed;
        self.tcl.seed = self.seed;
        self.mech.seed = self.seed;
        self.mech.sim = self.sim;
        self.cohort.sim = self.sim;
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "nmi_normalization" => {
                self.normalization = match v {
                    "arithmetic" => Normalization::Arithmetic,
                    "geometric" => Normalization::Geometric,
                    _ => return Err(bad(key, v)),
                }
            }
            "methods" => {
                self.methods = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "epochs" => self.train.epochs = num(key, v)?,
            "batch" => self.train.batch = num(key, v)?,
            "lr" => self.train.lr = num(key, v)?,
            "beta_hat" => self.train.beta_hat = num(key, v)?,
            "dropout" => self.train.dropout = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "layers" => self.layers = num(key, v)?,
            "bidirectional" => self.bidirectional = num(key, v)?,
            "tcl.epochs" => self.tcl.epochs = num(key, v)?,
            "tcl.lr" => self.tcl.lr = num(key, v)?,
            "mech.steps" => self.mech.steps = num(key, v)?,
            "mech.lr" => self.mech.lr = num(key, v)?,
            "mech.init_jitter" => self.mech.init_jitter = num(key, v)?,
            "sim.substeps" => self.sim.substeps = num(key, v)?,
            "sim.v_g" => self.sim.v_g = num(key, v)?,
            "cohort.within_person_sd" => self.cohort.within_person_sd = num(key, v)?,
            "cohort.noise_sd" => self.cohort.noise_sd = num(key, v)?,
            "cohort.jitter_minutes" => self.cohort.jitter_minutes = num(key, v)?,
            "cohort.carb_scale" => self.cohort.carb_scale = pair(key, v)?,
            "cohort.deletion_prob" => self.cohort.deletion_prob = num(key, v)?,
            "cohort.meal_carbs" => self.cohort.meal_carbs = pair(key, v)?,
            "cohort.max_extra_meals" => self.cohort.max_extra_meals = num(key, v)?,
            "cohort.missing_glucose_prob" => self.cohort.missing_glucose_prob = num(key, v)?,
            "cohort.missing_macro_prob" => self.cohort.missing_macro_prob = num(key, v)?,
            "cohort.groups" => {}
            "prior.u_sd" => self.prior.u_sd = num(key, v)?,
            _ => {
                if let Some(name) = key.strip_prefix("prior.") {
                    if let Some(i) = X0_NAMES.iter().position(|n| *n == name) {
                        self.prior.x0[i] = pair(key, v)?;
                        return Ok(());
                    }
                    if let Some(i) = W_NAMES.iter().position(|n| *n == name) {
                        self.prior.w[i] = pair(key, v)?;
                        return Ok(());
                    }
                } else if let Some(rest) = key.strip_prefix("group.") {
                    if let Some((name, field)) = rest.rsplit_once('.') {
                        let g = self
                            .cohort
                            .groups
                            .iter_mut()
                            .find(|g| g.name == name)
                            .ok_or_else(|| Error::Config(format!("unknown group `{name}` in `{key}`")))?;
                        match field {
                            "diagnosis" => {
                                g.diagnosis = Diagnosis::parse(v).flatten().ok_or_else(|| bad(key, v))?
                            }
                            "persons" => g.n_persons = num(key, v)?,
                            "ppgrs" => g.ppgrs_per_person = num(key, v)?,
                            _ => {
                                let i = W_NAMES
                                    .iter()
                                    .position(|n| *n == field)
                                    .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                                let (m, s) = pair(key, v)?;
                                g.params[i] = ParamDist::new(m, s);
                            }
                        }
                        return Ok(());
                    }
                }
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k < 2 {
            return fail("k must be >= 2");
        }
        if let Some(m) = self.methods.iter().find(|m| !METHODS.contains(&m.as_str())) {
            return Err(Error::Config(format!("unknown method `{m}`")));
        }
        if self.train.epochs == 0 || self.train.batch == 0 || self.hidden == 0 || self.layers == 0 {
            return fail("epochs, batch, hidden and layers must be positive");
        }
        if !(self.train.lr > 0.0) || !(self.tcl.lr > 0.0) || !(self.mech.lr > 0.0) {
            return fail("learning rates must be positive");
        }
        if !(self.train.beta_hat >= 0.0) || !(0.0..1.0).contains(&self.train.dropout) {
            return fail("beta_hat must be >= 0 and dropout in [0,1)");
        }
        self.cohort.validate()?;
        self.prior.to_prior()?;
        Ok(())
    }

    pub fn hybrid_config(&self) -> HybridConfig {
        let mut h = HybridConfig::default();
        h.encoder.hidden = self.hidden;
        h.encoder.layers = self.layers;
        h.encoder.bidirectional = self.bidirectional;
        h.sim = self.sim;
        h
    }

    /// Canonical rendering with every key, sorted; `parse` reads it back exactly.
    pub fn to_text(&self) -> String {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| kv.push((k.to_string(), v));
        put("seed", self.seed.to_string());
        put("k", self.k.to_string());
        put(
            "nmi_normalization",
            match self.normalization {
                Normalization::Arithmetic => "arithmetic",
                Normalization::Geometric => "geometric",
            }
            .into(),
        );
        put("methods", self.methods.join(","));
        put("epochs", self.train.epochs.to_string());
        put("batch", self.train.batch.to_string());
        put("lr", self.train.lr.to_string());
        put("beta_hat", self.train.beta_hat.to_string());
        put("dropout", self.train.dropout.to_string());
        put("hidden", self.hidden.to_string());
        put("layers", self.layers.to_string());
        put("bidirectional", self.bidirectional.to_string());
        put("tcl.epochs", self.tcl.epochs.to_string());
        put("tcl.lr", self.tcl.lr.to_string());
        put("mech.steps", self.mech.steps.to_string());
        put("mech.lr", self.mech.lr.to_string());
        put("mech.init_jitter", self.mech.init_jitter.to_string());
        put("sim.substeps", self.sim.substeps.to_string());
        put("sim.v_g", self.sim.v_g.to_string());
        let c = &self.cohort;
        put("cohort.within_person_sd", c.within_person_sd.to_string());
        put("cohort.noise_sd", c.noise_sd.to_string());
        put("cohort.jitter_minutes", c.jitter_minutes.to_string());
        put("cohort.carb_scale", format!("{},{}", c.carb_scale.0, c.carb_scale.1));
        put("cohort.deletion_prob", c.deletion_prob.to_string());
        put("cohort.meal_carbs", format!("{},{}", c.meal_carbs.0, c.meal_carbs.1));
        put("cohort.max_extra_meals", c.max_extra_meals.to_string());
        put("cohort.missing_glucose_prob", c.missing_glucose_prob.to_string());
        put("cohort.missing_macro_prob", c.missing_macro_prob.to_string());
        let names: Vec<&str> = c.groups.iter().map(|g| g.name.as_str()).collect();
        put("cohort.groups", names.join(","));
        for g in &c.groups {
            put(&format!("group.{}.diagnosis", g.name), g.diagnosis.as_str().into());
            put(&format!("group.{}.persons", g.name), g.n_persons.to_string());
            put(&format!("group.{}.ppgrs", g.name), g.ppgrs_per_person.to_string());
            for (n, d) in W_NAMES.iter().zip(&g.params) {
                put(&format!("group.{}.{n}", g.name), format!("{},{}", d.mean, d.sd));
            }
        }
        put("prior.u_sd", self.prior.u_sd.to_string());
        for (n, (m, s)) in X0_NAMES.iter().zip(&self.prior.x0).chain(W_NAMES.iter().zip(&self.prior.w)) {
            put(&format!("prior.{n}"), format!("{m},{s}"));
        }
        kv.sort();
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of SHA-256 over the canonical rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Metadata that opens every output file (writers add the comment marker).
    pub fn meta_line(&self) -> String {
        format!("config_hash={} seed={}", self.hash(), self.seed)
    }
}
