//! Difficulty schedules over training progress `u ∈ [0, 1]`.
//!
//! The temperature schedule anneals `T = 1 + (T0 - 1) * exp(-u / tau)` from
//! `T0` towards 1. The gamma schedules produce a coefficient in `[0, gamma_max]`
//! that drives log-interpolation or token dropping:
//!
//! | kind              | value                                   |
//! |-------------------|-----------------------------------------|
//! | `constant`        | `gamma0`                                |
//! | `poly_decay`      | `gamma_max * (1 - u)^tau`               |
//! | `step_decay`      | `gamma_max * (1 - floor(u * tau) / tau)`|
//! | `exp_decay_gamma` | `gamma_max * exp(-u / tau)`             |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

pub const DEFAULT_T0: f64 = 2.0;
pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    ExpDecayT,
    Constant,
    PolyDecay,
    StepDecay,
    ExpDecayGamma,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ExpDecayT => "exp_decay_t",
            Self::Constant => "constant",
            Self::PolyDecay => "poly_decay",
            Self::StepDecay => "step_decay",
            Self::ExpDecayGamma => "exp_decay_gamma",
        }
    }

    pub fn is_temperature(self) -> bool {
        self == Self::ExpDecayT
    }
}

/// A schedule evaluated at progress `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule<F> {
    ExpDecayT { t0: F, tau: F },
    Constant { gamma0: F },
    PolyDecay { gamma_max: F, tau: F },
    StepDecay { gamma_max: F, tau: F },
    ExpDecayGamma { gamma_max: F, tau: F },
}

/// The value a schedule produces: a temperature or an interpolation coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Level<F> {
    Temperature(F),
    Gamma(F),
}

impl<F: Real> Level<F> {
    pub fn value(self) -> F {
        match self {
            Level::Temperature(v) | Level::Gamma(v) => v,
        }
    }
}

fn check_unit<F: Real>(name: &str, x: F) -> Result<()> {
    if !(x >= F::zero() && x <= F::one()) {
        return Err(Error::InvalidParam(format!(
            "{name} must lie in [0, 1], got {x}"
        )));
    }
    Ok(())
}

fn check_tau<F: Real>(tau: F) -> Result<()> {
    if !(tau > F::zero()) || !tau.is_finite() {
        return Err(Error::InvalidParam(format!(
            "tau must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

impl<F: Real> Schedule<F> {
    pub fn exp_decay_t(t0: F, tau: F) -> Result<Self> {
        if !(t0 >= F::one()) || !t0.is_finite() {
            return Err(Error::InvalidParam(format!(
                "initial temperature must be >= 1, got {t0}"
            )));
        }
        check_tau(tau)?;
        Ok(Self::ExpDecayT { t0, tau })
    }

    pub fn constant(gamma0: F) -> Result<Self> {
        check_unit("gamma0", gamma0)?;
        Ok(Self::Constant { gamma0 })
    }

    pub fn poly_decay(gamma_max: F, tau: F) -> Result<Self> {
        check_unit("gamma_max", gamma_max)?;
        check_tau(tau)?;
        Ok(Self::PolyDecay { gamma_max, tau })
    }

    pub fn step_decay(gamma_max: F, tau: F) -> Result<Self> {
        check_unit("gamma_max", gamma_max)?;
        check_tau(tau)?;
        Ok(Self::StepDecay { gamma_max, tau })
    }

    pub fn exp_decay_gamma(gamma_max: F, tau: F) -> Result<Self> {
        check_unit("gamma_max", gamma_max)?;
        check_tau(tau)?;
        Ok(Self::ExpDecayGamma { gamma_max, tau })
    }

    pub fn kind(&self) -> ScheduleKind {
        match self {
            Self::ExpDecayT { .. } => ScheduleKind::ExpDecayT,
            Self::Constant { .. } => ScheduleKind::Constant,
            Self::PolyDecay { .. } => ScheduleKind::PolyDecay,
            Self::StepDecay { .. } => ScheduleKind::StepDecay,
            Self::ExpDecayGamma { .. } => ScheduleKind::ExpDecayGamma,
        }
    }

    pub fn is_temperature(&self) -> bool {
        self.kind().is_temperature()
    }

    /// Temperature at progress `u` (temperature schedules only).
    pub fn eval_temperature(&self, u: F) -> Result<F> {
        check_progress(u)?;
        match *self {
            Self::ExpDecayT { t0, tau } => Ok(F::one() + (t0 - F::one()) * (-u / tau).exp()),
            _ => Err(Error::Incompatible(format!(
                "{} schedule does not produce a temperature",
                self.kind().name()
            ))),
        }
    }

    /// Coefficient at progress `u`, clamped to `[0, gamma_max]` (gamma schedules only).
    pub fn eval_gamma(&self, u: F) -> Result<F> {
        check_progress(u)?;
        let (raw, cap) = match *self {
            Self::Constant { gamma0 } => (gamma0, gamma0),
            Self::PolyDecay { gamma_max, tau } => (gamma_max * (F::one() - u).powf(tau), gamma_max),
            Self::StepDecay { gamma_max, tau } => {
                (gamma_max * (F::one() - (u * tau).floor() / tau), gamma_max)
            }
            Self::ExpDecayGamma { gamma_max, tau } => (gamma_max * (-u / tau).exp(), gamma_max),
            Self::ExpDecayT { .. } => {
                return Err(Error::Incompatible(
                    "temperature schedule does not produce a gamma".into(),
                ))
            }
        };
        Ok(raw.max(F::zero()).min(cap))
    }

    pub fn level(&self, u: F) -> Result<Level<F>> {
        if self.is_temperature() {
            self.eval_temperature(u).map(Level::Temperature)
        } else {
            self.eval_gamma(u).map(Level::Gamma)
        }
    }

    /// The configured value at `u = 0`.
    pub fn initial(&self) -> F {
        match *self {
            Self::ExpDecayT { t0, .. } => t0,
            Self::Constant { gamma0 } => gamma0,
            Self::PolyDecay { gamma_max, .. }
            | Self::StepDecay { gamma_max, .. }
            | Self::ExpDecayGamma { gamma_max, .. } => gamma_max,
        }
    }
}

impl<F: Real> Default for Schedule<F> {
    fn default() -> Self {
        Self::ExpDecayT {
            t0: F::lit(DEFAULT_T0),
            tau: F::lit(DEFAULT_TAU),
        }
    }
}

fn check_progress<F: Real>(u: F) -> Result<()> {
    if !(u >= F::zero() && u <= F::one()) {
        return Err(Error::InvalidParam(format!(
            "progress u must lie in [0, 1], got {u}"
        )));
    }
    Ok(())
}

/// `u = step / total_steps`.
pub fn progress_from_counters<F: Real>(step: u64, total_steps: u64) -> Result<F> {
    if total_steps == 0 {
        return Err(Error::InvalidParam("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidParam(format!(
            "step {step} exceeds total_steps {total_steps}"
        )));
    }
    Ok(F::lit(step as f64) / F::lit(total_steps as f64))
}

/// Curriculum settings as written in a config file.
///
/// ```toml
/// kind = "exp_decay_t"
/// T0 = 2.0
/// tau = 0.1
/// total_epochs = 10
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    pub kind: ScheduleKind,
    #[serde(rename = "T0", default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_epochs: Option<u32>,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::ExpDecayT,
            t0: Some(DEFAULT_T0),
            gamma0: None,
            gamma_max: None,
            tau: Some(DEFAULT_TAU),
            total_steps: None,
            total_epochs: None,
        }
    }
}

impl CurriculumConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("curriculum: {e}")))
    }

    /// Parses the compact form `kind[:key=value,...]`, e.g. `exp_decay_t:T0=2,tau=0.1`.
    ///
    /// The pairs are converted to the same table the file parser sees.
    pub fn parse_inline(spec: &str) -> Result<Self> {
        let table = inline_table(spec)?;
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("curriculum config serializes")
    }

    /// Validated schedule; missing `T0`/`tau` fall back to 2 and 0.1.
    pub fn schedule<F: Real>(&self) -> Result<Schedule<F>> {
        let tau = F::lit(self.tau.unwrap_or(DEFAULT_TAU));
        let need = |v: Option<f64>, name: &str| {
            v.map(F::lit).ok_or_else(|| {
                Error::Config(format!("{} schedule needs `{name}`", self.kind.name()))
            })
        };
        match self.kind {
            ScheduleKind::ExpDecayT => {
                Schedule::exp_decay_t(F::lit(self.t0.unwrap_or(DEFAULT_T0)), tau)
            }
            ScheduleKind::Constant => Schedule::constant(need(self.gamma0, "gamma0")?),
            ScheduleKind::PolyDecay => Schedule::poly_decay(need(self.gamma_max, "gamma_max")?, tau),
            ScheduleKind::StepDecay => Schedule::step_decay(need(self.gamma_max, "gamma_max")?, tau),
            ScheduleKind::ExpDecayGamma => {
                Schedule::exp_decay_gamma(need(self.gamma_max, "gamma_max")?, tau)
            }
        }
    }

    /// Progress for an epoch index: `u = epoch / total_epochs`.
    pub fn progress_for_epoch<F: Real>(&self, epoch: u32, total_epochs: u32) -> Result<F> {
        progress_from_counters(epoch as u64, total_epochs as u64)
    }
}

/// Splits `kind:k=v,k=v` into a TOML table with typed scalar values.
pub(crate) fn inline_table(spec: &str) -> Result<BTreeMap<String, toml::Value>> {
    let (kind, rest) = match spec.split_once(':') {
        Some((k, r)) => (k, r),
        None => (spec, ""),
    };
    let mut table = BTreeMap::new();
    table.insert("kind".to_string(), toml::Value::String(kind.trim().to_string()));
    for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
        let v = v.trim();
        let value = if let Ok(i) = v.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = v.parse::<f64>() {
            toml::Value::Float(f)
        } else if let Ok(b) = v.parse::<bool>() {
            toml::Value::Boolean(b)
        } else {
            toml::Value::String(v.to_string())
        };
        table.insert(k.trim().to_string(), value);
    }
    Ok(table)
}
