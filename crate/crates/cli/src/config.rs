//! Run configuration: strict TOML with `[sde]`, `[train]`, `[eval]` and
//! `[output]` sections. Unknown keys are rejected, and every command writes
//! the fully resolved document (all defaults filled) beside its outputs.

use crate::errors::{CliError, Result};
use serde::{Deserialize, Serialize};
use sfml_core::catalog;
use sfml_core::losses::LossWeights;
use sfml_core::sde::SdeSpec;
use sfml_core::training::TrainConfig;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sde: SdeSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    /// Benchmark family: ou1d, gbm, expdiff, trig, doublewell, expnoise,
    /// lognormal, ou2d, ou5d.
    pub name: String,
    /// Family parameters; only keys the family uses are accepted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Row-major `dim x dim` overrides for the linear systems (ou2d, ou5d).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_matrix: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_matrix: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_low: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_high: Option<Vec<f64>>,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default = "default_len")]
    pub len: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Root seed; every subsystem derives its own stream from it.
    #[serde(default)]
    pub seed: u64,
}

fn default_n_traj() -> usize {
    2000
}
fn default_len() -> usize {
    100
}
fn default_dt() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub n_batches: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Final rate of the cosine learning-rate schedule; omitted means
    /// lr / 100. Set equal to lr for a constant rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_min: Option<f64>,
    pub lambda: f64,
    pub tau: f64,
    pub nu: f64,
    /// KDE kernel bandwidth; omitted means the Silverman default for the
    /// batch size and latent dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    pub squared_distance: bool,
    /// MSE ratio that counts as a drop in the latent-dimension sweep.
    pub drop_ratio: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 200,
            n_batches: 100,
            batch_size: 2000,
            latent_dim: 1,
            hidden: vec![20, 20, 20],
            lr: 1e-3,
            lr_min: None,
            lambda: 1.0,
            tau: 1.0,
            nu: 0.1,
            bandwidth: None,
            squared_distance: false,
            drop_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Ensemble start state; omitted means the midpoint of the init box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub n_samples: usize,
    pub n_steps: usize,
    /// Monte-Carlo draws per grid point for drift/diffusion recovery and
    /// for the conditional sample dump.
    pub n_mc: usize,
    pub grid_points: usize,
    /// Recovery grid endpoints; omitted means the init box. Points are
    /// placed on the straight line from low to high.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_low: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_high: Option<Vec<f64>>,
    /// "arithmetic" or "geometric".
    pub recovery: String,
    /// Held-out transitions for the latent-Gaussianity KS check.
    pub held_out: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            x0: None,
            n_samples: 20_000,
            n_steps: 500,
            n_mc: 10_000,
            grid_points: 16,
            grid_low: None,
            grid_high: None,
            recovery: "arithmetic".into(),
            held_out: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Output root; overridden by --out, falls back to $SFML_OUT then "runs".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    /// Write CSV renderings next to the binary artifacts.
    pub csv: bool,
    /// Dump the first epoch's batch plan (large).
    pub batch_plan: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: None,
            csv: true,
            batch_plan: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CliError::MissingInput(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        build_spec(&self.sde)?;
        let (low, high) = self.init_box()?;
        if low.len() != high.len() || low.iter().zip(&high).any(|(l, h)| !(l <= h)) {
            return Err(CliError::Config(
                "init box must satisfy init_low[i] <= init_high[i]".into(),
            ));
        }
        if self.sde.n_traj == 0 || self.sde.len == 0 {
            return Err(CliError::Config("n_traj and len must be positive".into()));
        }
        if !(self.sde.dt > 0.0) {
            return Err(CliError::Config(format!(
                "dt must be positive, got {}",
                self.sde.dt
            )));
        }
        self.train_config(self.train.latent_dim)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        match self.eval.recovery.as_str() {
            "arithmetic" | "geometric" => {}
            other => {
                return Err(CliError::Config(format!(
                    "recovery must be \"arithmetic\" or \"geometric\", got \"{other}\""
                )))
            }
        }
        if self.eval.grid_points < 1 || self.eval.n_mc < 2 || self.eval.held_out < 2 {
            return Err(CliError::Config(
                "grid_points >= 1, n_mc >= 2 and held_out >= 2 required".into(),
            ));
        }
        if !(self.train.drop_ratio > 1.0) {
            return Err(CliError::Config(format!(
                "drop_ratio must exceed 1, got {}",
                self.train.drop_ratio
            )));
        }
        Ok(())
    }

    /// Copy with every optional field made concrete; this is what gets
    /// written beside the artifacts.
    pub fn resolved(&self) -> Result<RunConfig> {
        let mut out = self.clone();
        let spec = build_spec(&self.sde)?;
        let (low, high) = self.init_box()?;
        out.sde.init_low = Some(low.clone());
        out.sde.init_high = Some(high.clone());
        fill_family_defaults(&mut out.sde);
        out.train.bandwidth = Some(
            self.train.bandwidth.unwrap_or_else(|| {
                LossWeights::silverman_bandwidth(self.train.batch_size, self.train.latent_dim)
            }),
        );
        out.train.lr_min = Some(self.train.lr_min.unwrap_or(self.train.lr / 100.0));
        out.eval.x0 = Some(self.eval_x0(&low, &high));
        out.eval.grid_low = Some(self.eval.grid_low.clone().unwrap_or_else(|| low.clone()));
        out.eval.grid_high = Some(self.eval.grid_high.clone().unwrap_or_else(|| high.clone()));
        let _ = spec;
        Ok(out)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Other(format!("serialize config: {e}")))
    }

    pub fn spec(&self) -> Result<SdeSpec> {
        build_spec(&self.sde)
    }

    pub fn init_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let spec = build_spec(&self.sde)?;
        let (dlow, dhigh) = catalog::reference_init_box(spec.name())
            .map_err(|e| CliError::Config(e.to_string()))?;
        let low = self.sde.init_low.clone().unwrap_or(dlow);
        let high = self.sde.init_high.clone().unwrap_or(dhigh);
        if low.len() != spec.dim() || high.len() != spec.dim() {
            return Err(CliError::Config(format!(
                "init box must have {} entries",
                spec.dim()
            )));
        }
        Ok((low, high))
    }

    pub fn eval_x0(&self, low: &[f64], high: &[f64]) -> Vec<f64> {
        self.eval.x0.clone().unwrap_or_else(|| {
            low.iter()
                .zip(high)
                .map(|(l, h)| 0.5 * (l + h))
                .collect()
        })
    }

    /// Core training configuration at the given latent dimension.
    pub fn train_config(&self, latent_dim: usize) -> TrainConfig {
        let auto = self.train.bandwidth.is_none();
        TrainConfig {
            epochs: self.train.epochs,
            n_batches: self.train.n_batches,
            batch_size: self.train.batch_size,
            weights: LossWeights {
                lambda: self.train.lambda,
                tau: self.train.tau,
                nu: self.train.nu,
                bandwidth: self.train.bandwidth.unwrap_or(1.0),
                squared_distance: self.train.squared_distance,
            },
            auto_bandwidth: auto,
            lr: self.train.lr,
            lr_min: self.train.lr_min.unwrap_or(self.train.lr / 100.0),
            seed: self.sde.seed,
            latent_dim,
            hidden: self.train.hidden.clone(),
            deterministic: false,
        }
    }
}

struct Family {
    allowed: &'static [&'static str],
}

fn family_of(name: &str) -> Result<Family> {
    let allowed: &'static [&'static str] = match name {
        "ou1d" => &["theta", "mu", "sigma"],
        "gbm" | "expdiff" | "expnoise" => &["mu", "sigma"],
        "trig" => &["k", "sigma"],
        "doublewell" => &["sigma"],
        "lognormal" => &["m", "theta", "sigma"],
        "ou2d" => &["b_matrix", "sigma_matrix"],
        "ou5d" => &["rank", "b_matrix", "sigma_matrix"],
        other => {
            return Err(CliError::Config(format!(
                "unknown sde name \"{other}\"; catalog families: ou1d, gbm, expdiff, trig, \
                 doublewell, expnoise, lognormal, ou2d, ou5d"
            )))
        }
    };
    Ok(Family { allowed })
}

fn reject_inapplicable(s: &SdeSection, fam: &Family) -> Result<()> {
    let mut bad = Vec::new();
    let mut check = |key: &'static str, set: bool| {
        if set && !fam.allowed.contains(&key) {
            bad.push(key);
        }
    };
    check("theta", s.theta.is_some());
    check("mu", s.mu.is_some());
    check("sigma", s.sigma.is_some());
    check("m", s.m.is_some());
    check("k", s.k.is_some());
    check("rank", s.rank.is_some());
    check("b_matrix", s.b_matrix.is_some());
    check("sigma_matrix", s.sigma_matrix.is_some());
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "sde \"{}\" does not take parameter(s): {}",
            s.name,
            bad.join(", ")
        )))
    }
}

/// Construct the SDE from the section, applying family defaults.
pub fn build_spec(s: &SdeSection) -> Result<SdeSpec> {
    let fam = family_of(&s.name)?;
    reject_inapplicable(s, &fam)?;
    let spec = match s.name.as_str() {
        "ou1d" => catalog::ou1d(
            s.theta.unwrap_or(1.0),
            s.mu.unwrap_or(1.2),
            s.sigma.unwrap_or(0.3),
        ),
        "gbm" => catalog::gbm(s.mu.unwrap_or(2.0), s.sigma.unwrap_or(1.0)),
        "expdiff" => catalog::expdiff(s.mu.unwrap_or(5.0), s.sigma.unwrap_or(0.5)),
        "trig" => catalog::trig(s.k.unwrap_or(1), s.sigma.unwrap_or(0.5)),
        "doublewell" => catalog::doublewell(s.sigma.unwrap_or(0.5)),
        "expnoise" => catalog::expnoise(s.mu.unwrap_or(-2.0), s.sigma.unwrap_or(0.1)),
        "lognormal" => catalog::lognormal(
            s.m.unwrap_or(1.0 / std::f64::consts::E.sqrt()),
            s.theta.unwrap_or(1.0),
            s.sigma.unwrap_or(0.3),
        ),
        "ou2d" => {
            let b = s
                .b_matrix
                .clone()
                .unwrap_or_else(|| vec![-1.0, -0.5, -1.0, -1.0]);
            let sig = s
                .sigma_matrix
                .clone()
                .unwrap_or_else(|| vec![1.0, 0.0, 0.0, 0.5]);
            catalog::linear_system("ou2d", 2, &b, &sig)
        }
        "ou5d" => {
            let rank = s.rank.unwrap_or(1);
            let default_sigma =
                catalog::ou5d_sigma(rank).map_err(|e| CliError::Config(e.to_string()))?;
            let b = s.b_matrix.clone().unwrap_or_else(default_ou5d_b);
            let sig = s.sigma_matrix.clone().unwrap_or_else(|| default_sigma.to_vec());
            catalog::linear_system(&format!("ou5d_k{rank}"), 5, &b, &sig)
        }
        _ => unreachable!("family_of validated the name"),
    };
    spec.map_err(|e| CliError::Config(e.to_string()))
}

fn default_ou5d_b() -> Vec<f64> {
    vec![
        0.2, 1.0, 0.2, 0.4, 0.2, //
        -1.0, 0.0, 0.2, 0.8, -1.0, //
        0.2, 0.2, -0.8, -1.2, 0.2, //
        -0.6, 0.0, 1.2, -0.2, 0.6, //
        0.2, 0.2, 0.6, 0.4, 0.0,
    ]
}

/// Fill the family parameters the spec actually used, so the resolved
/// document is self-describing.
fn fill_family_defaults(s: &mut SdeSection) {
    match s.name.as_str() {
        "ou1d" => {
            s.theta.get_or_insert(1.0);
            s.mu.get_or_insert(1.2);
            s.sigma.get_or_insert(0.3);
        }
        "gbm" => {
            s.mu.get_or_insert(2.0);
            s.sigma.get_or_insert(1.0);
        }
        "expdiff" => {
            s.mu.get_or_insert(5.0);
            s.sigma.get_or_insert(0.5);
        }
        "trig" => {
            s.k.get_or_insert(1);
            s.sigma.get_or_insert(0.5);
        }
        "doublewell" => {
            s.sigma.get_or_insert(0.5);
        }
        "expnoise" => {
            s.mu.get_or_insert(-2.0);
            s.sigma.get_or_insert(0.1);
        }
        "lognormal" => {
            s.m.get_or_insert(1.0 / std::f64::consts::E.sqrt());
            s.theta.get_or_insert(1.0);
            s.sigma.get_or_insert(0.3);
        }
        "ou2d" => {
            s.b_matrix
                .get_or_insert_with(|| vec![-1.0, -0.5, -1.0, -1.0]);
            s.sigma_matrix
                .get_or_insert_with(|| vec![1.0, 0.0, 0.0, 0.5]);
        }
        "ou5d" => {
            let rank = *s.rank.get_or_insert(1);
            s.b_matrix.get_or_insert_with(default_ou5d_b);
            if s.sigma_matrix.is_none() {
                if let Ok(sig) = catalog::ou5d_sigma(rank) {
                    s.sigma_matrix = Some(sig.to_vec());
                }
            }
        }
        _ => {}
    }
}
