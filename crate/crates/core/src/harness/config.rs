use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::DEFAULT_BUDGET;
use crate::error::{ArwError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ZetaC,
    ExpMoment,
    Ring,
}

/// How a stabilization of `V_r` is carried out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Instruction stacks and toppling; reproducible sample by sample.
    Stacks,
    /// Excursion sampling; same law, far fewer steps on sparse starts.
    #[default]
    Excursion,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RScaling {
    /// Use `r_list` as given for every `λ`.
    #[default]
    Fixed,
    /// `r_list` is given for `λ = 1`; each radius is multiplied by `1/√λ`.
    InverseSqrtLambda,
}

/// Experiment description as read from JSON. Every field except `kind`
/// and `lambdas` has a default, filled in by [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub zetas: Option<Vec<f64>>,
    #[serde(default)]
    pub bracket: Option<(f64, f64)>,
    #[serde(default)]
    pub r_list: Option<Vec<u64>>,
    #[serde(default)]
    pub r_scaling: Option<RScaling>,
    #[serde(default)]
    pub ring_sizes: Option<Vec<u32>>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub samples: Option<u64>,
    #[serde(default)]
    pub max_samples: Option<u64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub bisection_steps: Option<u32>,
    #[serde(default)]
    pub noise_z: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub activity_cutoff: Option<f64>,
    #[serde(default)]
    pub engine: Option<Engine>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Fully explicit configuration; this is what the manifest stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub kind: ExperimentKind,
    pub lambdas: Vec<f64>,
    pub zetas: Vec<f64>,
    pub bracket: (f64, f64),
    pub r_list: Vec<u64>,
    pub r_scaling: RScaling,
    pub ring_sizes: Vec<u32>,
    pub alpha: f64,
    pub samples: u64,
    pub max_samples: u64,
    pub theta: f64,
    pub bisection_steps: u32,
    pub noise_z: f64,
    pub seed: u64,
    pub budget: u64,
    pub activity_cutoff: f64,
    pub engine: Engine,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        serde_json::from_str(text).map_err(|e| ArwError::config("config", e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn new(kind: ExperimentKind, lambdas: Vec<f64>) -> ExperimentConfig {
        ExperimentConfig {
            kind,
            lambdas,
            zetas: None,
            bracket: None,
            r_list: None,
            r_scaling: None,
            ring_sizes: None,
            alpha: None,
            samples: None,
            max_samples: None,
            theta: None,
            bisection_steps: None,
            noise_z: None,
            seed: None,
            budget: None,
            activity_cutoff: None,
            engine: None,
            out_dir: None,
        }
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let kind = self.kind;
        let default_samples = match kind {
            ExperimentKind::ZetaC => 64,
            ExperimentKind::ExpMoment => 10_000,
            ExperimentKind::Ring => 100,
        };
        let samples = self.samples.unwrap_or(default_samples);
        let c = ResolvedConfig {
            kind,
            lambdas: self.lambdas.clone(),
            zetas: self.zetas.clone().unwrap_or_default(),
            bracket: self.bracket.unwrap_or((0.01, 1.0)),
            r_list: self.r_list.clone().unwrap_or_else(|| match kind {
                ExperimentKind::ZetaC => vec![100, 200],
                _ => vec![100, 200, 400],
            }),
            r_scaling: self.r_scaling.unwrap_or_default(),
            ring_sizes: self.ring_sizes.clone().unwrap_or_else(|| vec![16, 24]),
            alpha: self.alpha.unwrap_or(0.05),
            samples,
            max_samples: self.max_samples.unwrap_or(8 * samples),
            theta: self.theta.unwrap_or(0.01),
            bisection_steps: self.bisection_steps.unwrap_or(8),
            noise_z: self.noise_z.unwrap_or(2.0),
            seed: self.seed.unwrap_or(0),
            budget: self.budget.unwrap_or(DEFAULT_BUDGET),
            activity_cutoff: self.activity_cutoff.unwrap_or(1e6),
            engine: self.engine.unwrap_or_default(),
            out_dir: self.out_dir.clone().unwrap_or_else(|| PathBuf::from("arw-out")),
        };
        c.validate()?;
        Ok(c)
    }
}

impl ResolvedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, why: String| Err(ArwError::config(f, why));
        if self.lambdas.is_empty() {
            return bad("lambdas", "must not be empty".into());
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return bad("lambdas", format!("{l} is not a positive finite rate"));
        }
        if self.samples < 2 {
            return bad("samples", "must be at least 2".into());
        }
        if self.max_samples < self.samples {
            return bad("max_samples", "must be at least samples".into());
        }
        if self.budget == 0 {
            return bad("budget", "must be positive".into());
        }
        match self.kind {
            ExperimentKind::ZetaC => {
                let (lo, hi) = self.bracket;
                if !(lo > 0.0 && lo < hi && hi <= 1.0) {
                    return bad("bracket", format!("need 0 < lo < hi <= 1, got ({lo}, {hi})"));
                }
                if self.r_list.is_empty() || self.r_list.contains(&0) {
                    return bad("r_list", "needs positive radii".into());
                }
                if !(self.theta > 0.0) {
                    return bad("theta", "must be positive".into());
                }
                if self.bisection_steps == 0 {
                    return bad("bisection_steps", "must be positive".into());
                }
            }
            ExperimentKind::ExpMoment => {
                if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                    return bad("alpha", "must be positive".into());
                }
                let mut r = self.r_list.clone();
                r.sort_unstable();
                r.dedup();
                if r.len() < 2 || r[0] == 0 {
                    return bad("r_list", "needs at least two distinct positive radii".into());
                }
            }
            ExperimentKind::Ring => {
                if self.zetas.is_empty() {
                    return bad("zetas", "must not be empty".into());
                }
                if let Some(z) = self.zetas.iter().find(|z| !(**z >= 0.0 && z.is_finite())) {
                    return bad("zetas", format!("{z} is not a valid density"));
                }
                if self.ring_sizes.is_empty() || self.ring_sizes.iter().any(|&n| n < 2) {
                    return bad("ring_sizes", "need rings of at least two sites".into());
                }
                if !(self.activity_cutoff > 0.0) {
                    return bad("activity_cutoff", "must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Radii used at sleep rate `lambda`.
    pub fn radii(&self, lambda: f64) -> Vec<u64> {
        match self.r_scaling {
            RScaling::Fixed => self.r_list.clone(),
            RScaling::InverseSqrtLambda => self
                .r_list
                .iter()
                .map(|&r| (r as f64 / lambda.sqrt()).round() as u64)
                .collect(),
        }
    }
}
