use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::filter::{FilterVariant, ToleranceSchedule};
use crate::housner::HousnerParams;
use crate::simulation::{DataGenConfig, ExcitationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ekf,
    Rekf,
}

impl FromStr for FilterKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ekf" => Ok(Self::Ekf),
            "rekf" => Ok(Self::Rekf),
            other => Err(DataError::Config(format!("unknown filter `{other}`"))),
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Rekf => "rekf",
        })
    }
}

/// `[filter]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKind,
    /// Initial predicted mean `[ḋ, d, β, ω]`.
    pub x0: [f64; 4],
    /// Diagonal of the initial covariance.
    pub v0: [f64; 4],
    /// Process covariance diagonal, before `q_scale`.
    pub q: [f64; 4],
    /// Multiplier taking `q` to the per-step covariance `BBᵀ`.
    #[serde(default = "default_q_scale")]
    pub q_scale: f64,
    /// Measurement variance `DDᵀ`.
    pub r: f64,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_q_scale() -> f64 {
    1.0
}

fn default_c0() -> f64 {
    1e-3
}

fn default_decay() -> f64 {
    1e-3
}

impl FilterConfig {
    /// `BBᵀ` diagonal actually handed to the filter.
    pub fn process_diagonal(&self) -> [f64; 4] {
        self.q.map(|v| v * self.q_scale)
    }

    pub fn variant(&self, kind: FilterKind) -> Result<FilterVariant, DataError> {
        match kind {
            FilterKind::Ekf => Ok(FilterVariant::Ekf),
            FilterKind::Rekf => ToleranceSchedule::new(self.c0, self.decay)
                .map(FilterVariant::Rekf)
                .map_err(|e| DataError::Config(e.to_string())),
        }
    }
}

/// `[truth]` section: parameters of the data-generating system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub beta: f64,
    pub omega: f64,
    /// Initial displacement, m.
    #[serde(default)]
    pub d0: f64,
    /// Initial velocity, m/s.
    #[serde(default)]
    pub velocity0: f64,
}

/// `[excitation]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    /// Seconds.
    pub duration: f64,
    #[serde(flatten)]
    pub kind: ExcitationKind,
}

/// `[metrics]` section: relative-error thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricThresholds {
    pub beta: f64,
    pub omega: f64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            beta: 0.01,
            omega: 0.005,
        }
    }
}

/// Full experiment description, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: HousnerParams,
    pub filter: FilterConfig,
    pub truth: Option<TruthConfig>,
    pub excitation: Option<ExcitationConfig>,
    #[serde(default)]
    pub data: DataGenConfig,
    #[serde(default)]
    pub metrics: MetricThresholds,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConfigOverrides {
    pub filter: Option<FilterKind>,
    pub c0: Option<f64>,
    pub decay: Option<f64>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let cfg: Self = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, overrides: &ConfigOverrides) -> Result<(), DataError> {
        if let Some(kind) = overrides.filter {
            self.filter.kind = kind;
        }
        if let Some(c0) = overrides.c0 {
            self.filter.c0 = c0;
        }
        if let Some(decay) = overrides.decay {
            self.filter.decay = decay;
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Config(msg));
        self.model
            .validate()
            .map_err(|e| DataError::Config(format!("[model] {e}")))?;
        let f = &self.filter;
        if f.x0.iter().any(|v| !v.is_finite()) {
            return bad(format!("[filter] x0 must be finite, got {:?}", f.x0));
        }
        if f.v0.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad(format!(
                "[filter] v0 entries must be positive, got {:?}",
                f.v0
            ));
        }
        if f.q.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return bad(format!(
                "[filter] q entries must be nonnegative, got {:?}",
                f.q
            ));
        }
        if !(f.q_scale > 0.0 && f.q_scale.is_finite()) {
            return bad(format!(
                "[filter] q_scale must be positive, got {}",
                f.q_scale
            ));
        }
        if !(f.r > 0.0 && f.r.is_finite()) {
            return bad(format!("[filter] r must be positive, got {}", f.r));
        }
        if !(f.decay >= 0.0 && f.decay.is_finite()) {
            return bad(format!(
                "[filter] decay must be nonnegative, got {}",
                f.decay
            ));
        }
        if f.kind == FilterKind::Rekf && !(f.c0 > 0.0 && f.c0.is_finite()) {
            return bad(format!(
                "[filter] c0 must be positive for rekf, got {}",
                f.c0
            ));
        }
        if let Some(truth) = &self.truth {
            if !(truth.beta != 0.0 && truth.omega != 0.0)
                || ![truth.beta, truth.omega, truth.d0, truth.velocity0]
                    .iter()
                    .all(|v| v.is_finite())
            {
                return bad(format!(
                    "[truth] parameters must be finite and nonzero: {truth:?}"
                ));
            }
        }
        if let Some(exc) = &self.excitation {
            if !(exc.duration > 0.0 && exc.duration.is_finite()) {
                return bad(format!(
                    "[excitation] duration must be positive, got {}",
                    exc.duration
                ));
            }
        }
        if self.data.substeps == 0 {
            return bad("[data] substeps must be at least 1".into());
        }
        if !(self.data.noise.variance() >= 0.0) {
            return bad("[data] noise variance must be nonnegative".into());
        }
        if !(self.metrics.beta > 0.0 && self.metrics.omega > 0.0) {
            return bad("[metrics] thresholds must be positive".into());
        }
        Ok(())
    }
}
