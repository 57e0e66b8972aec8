use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Naive,
    FsrLogit,
    FsrDistill,
    FsrLogitLab,
    IcarlReg,
    Ewc,
    Lwf,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::Naive,
        MethodKind::FsrLogit,
        MethodKind::FsrDistill,
        MethodKind::FsrLogitLab,
        MethodKind::IcarlReg,
        MethodKind::Ewc,
        MethodKind::Lwf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Naive => "naive",
            MethodKind::FsrLogit => "fsr_logit",
            MethodKind::FsrDistill => "fsr_distill",
            MethodKind::FsrLogitLab => "fsr_logit_lab",
            MethodKind::IcarlReg => "icarl_reg",
            MethodKind::Ewc => "ewc",
            MethodKind::Lwf => "lwf",
        }
    }

    /// Kinds that replay the episodic memory.
    pub fn uses_memory(&self) -> bool {
        matches!(
            self,
            MethodKind::FsrLogit | MethodKind::FsrDistill | MethodKind::FsrLogitLab | MethodKind::IcarlReg
        )
    }

    /// Tuned regularization strength on permuted MNIST.
    pub fn default_lambda(&self) -> f64 {
        match self {
            MethodKind::Naive => 0.0,
            MethodKind::FsrLogit | MethodKind::FsrLogitLab => 5.0,
            MethodKind::FsrDistill => 10.0,
            MethodKind::IcarlReg => 20.0,
            MethodKind::Ewc => 400.0,
            MethodKind::Lwf => 1.0,
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = MethodKind::ALL.iter().map(MethodKind::name).collect();
                Error::invalid(format!("unknown method '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

fn default_tau() -> f64 {
    2.0
}
fn default_replay_batch() -> Option<usize> {
    Some(128)
}
fn default_fisher_samples() -> usize {
    1000
}

/// Hyperparameters of one continual-learning method. A missing `lambda`
/// takes the kind's default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawMethodConfig")]
pub struct MethodConfig {
    pub kind: MethodKind,
    pub lambda: f64,
    pub tau: f64,
    /// Memory entries replayed per step; `None` replays the whole memory.
    pub replay_batch: Option<usize>,
    /// Weight of the stored-label cross-entropy of `fsr_logit_lab`;
    /// defaults to `lambda`.
    pub lambda_lab: Option<f64>,
    /// Training examples per task used for the Fisher estimate.
    pub fisher_samples: usize,
    /// Re-record every memory entry's logits with the current model at each
    /// task boundary.
    pub refresh_memory: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMethodConfig {
    kind: MethodKind,
    lambda: Option<f64>,
    #[serde(default = "default_tau")]
    tau: f64,
    #[serde(default = "default_replay_batch")]
    replay_batch: Option<usize>,
    #[serde(default)]
    lambda_lab: Option<f64>,
    #[serde(default = "default_fisher_samples")]
    fisher_samples: usize,
    #[serde(default)]
    refresh_memory: bool,
}

impl From<RawMethodConfig> for MethodConfig {
    fn from(r: RawMethodConfig) -> Self {
        Self {
            kind: r.kind,
            lambda: r.lambda.unwrap_or_else(|| r.kind.default_lambda()),
            tau: r.tau,
            replay_batch: r.replay_batch,
            lambda_lab: r.lambda_lab,
            fisher_samples: r.fisher_samples,
            refresh_memory: r.refresh_memory,
        }
    }
}

impl MethodConfig {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            lambda: kind.default_lambda(),
            tau: default_tau(),
            replay_batch: default_replay_batch(),
            lambda_lab: None,
            fisher_samples: default_fisher_samples(),
            refresh_memory: false,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn lambda_lab(&self) -> f64 {
        self.lambda_lab.unwrap_or(self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("method.lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("method.tau must be > 0, got {}", self.tau)));
        }
        if self.replay_batch == Some(0) {
            return Err(Error::Config("method.replay_batch must be positive".into()));
        }
        if let Some(l) = self.lambda_lab {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("method.lambda_lab must be >= 0, got {l}")));
            }
        }
        if self.kind == MethodKind::Ewc && self.fisher_samples == 0 {
            return Err(Error::Config("method.fisher_samples must be positive".into()));
        }
        Ok(())
    }

    /// True when the method's extra term is switched off and training must
    /// coincide with the naive method.
    pub fn is_inert(&self) -> bool {
        match self.kind {
            MethodKind::Naive => true,
            MethodKind::FsrLogitLab => self.lambda == 0.0 && self.lambda_lab() == 0.0,
            _ => self.lambda == 0.0,
        }
    }
}
