//! Network configuration and canonical state indexing.
//!
//! A [`NetworkConfig`] describes an `L`-hop line network: a source, `L-1`
//! relays and a destination, with one i.i.d. packet-erasure link per hop.
//! All analysis and simulation modules consume the same validated config.
//!
//! The analytic chain truncates the per-node residual detained counts at
//! `m[l] - 1` and the information debt at `debt_cap - 1`. The truncation caps
//! are user-supplied; [`suggested_caps`] gives defaults (`m[l] = 7`,
//! `debt_cap = max(25, 8 * n_dest)`) that keep the truncation error of the
//! reference configurations well below the Monte-Carlo noise floor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What to do with debt transitions that would land above `debt_cap - 1`.
///
/// `Drop` discards the mass (sub-stochastic rows, matching the convention
/// that out-of-range shifted identities are zero); `Clamp` parks it at the
/// top debt level so every row stays stochastic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OverflowMode {
    #[default]
    Drop,
    Clamp,
}

/// Raw config as read from a flat JSON object. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub hops: usize,
    pub k_per_slot: u64,
    pub n_dest: u64,
    pub q: Vec<f64>,
    pub delta: u64,
    pub m: Vec<usize>,
    pub debt_cap: usize,
    #[serde(default)]
    pub overflow_mode: OverflowMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<u64>,
}

/// Validated network description. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkConfig {
    /// Number of links `L >= 2`; nodes are indexed `0..=L`.
    pub hops: usize,
    /// Source symbols arriving per timeslot.
    pub k_per_slot: u64,
    /// Symbols per packet on the last hop (equations gained per delivery).
    pub n_dest: u64,
    /// Per-link delivery probabilities, length `L`, each in `(0, 1]`.
    pub q: Vec<f64>,
    /// Decoding deadline in slots.
    pub delta: u64,
    /// Truncation caps on the residual detained counts, length `L`, each `>= 2`.
    pub m: Vec<usize>,
    /// Truncation cap on the information debt; debt levels live in `[0, debt_cap - 1]`.
    pub debt_cap: usize,
    pub overflow_mode: OverflowMode,
    /// Base seed for simulation commands.
    pub seed: u64,
    /// Default slot budget for simulation commands.
    pub slots: u64,
}

/// One violated validation rule.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ConfigViolation {
    #[error("hop count {hops} is below the minimum of 2")]
    HopCountTooSmall { hops: usize },
    #[error("q[{link}] = {value} is outside (0, 1]")]
    NonPositiveProbability { link: usize, value: f64 },
    #[error("{field} = {value} is below the minimum of {min}")]
    CapTooSmall {
        field: String,
        value: usize,
        min: usize,
    },
    #[error("k_per_slot = {k} is not below n_dest * q_last = {capacity}")]
    RateExceedsCapacity { k: u64, capacity: f64 },
    #[error("{field} has length {got}, expected {expected} (one per hop)")]
    LengthMismatch {
        field: String,
        got: usize,
        expected: usize,
    },
    #[error("{field} = {value} is below the minimum of {min}")]
    CountTooSmall { field: String, value: u64, min: u64 },
}

/// Structured rejection: every violated rule, not just the first.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("invalid configuration: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ConfigError {
    pub violations: Vec<ConfigViolation>,
}

/// Default truncation caps for a network of `hops` links.
pub fn suggested_caps(hops: usize, n_dest: u64) -> (Vec<usize>, usize) {
    (vec![7; hops], (8 * n_dest as usize).max(25))
}

/// Validate a raw config.
///
/// Stability requires `k_per_slot < n_dest * q_last` (the destination link is
/// the equation bottleneck); configs at or over capacity are rejected unless
/// `allow_unstable` is set. Validation is idempotent: re-validating an
/// accepted config yields an equal config.
pub fn validate_config(
    raw: &RawConfig,
    allow_unstable: bool,
) -> Result<NetworkConfig, ConfigError> {
    let mut violations = Vec::new();
    if raw.hops < 2 {
        violations.push(ConfigViolation::HopCountTooSmall { hops: raw.hops });
    }
    if raw.k_per_slot < 1 {
        violations.push(ConfigViolation::CountTooSmall {
            field: "k_per_slot".into(),
            value: raw.k_per_slot,
            min: 1,
        });
    }
    if raw.n_dest < 1 {
        violations.push(ConfigViolation::CountTooSmall {
            field: "n_dest".into(),
            value: raw.n_dest,
            min: 1,
        });
    }
    if raw.q.len() != raw.hops {
        violations.push(ConfigViolation::LengthMismatch {
            field: "q".into(),
            got: raw.q.len(),
            expected: raw.hops,
        });
    }
    if raw.m.len() != raw.hops {
        violations.push(ConfigViolation::LengthMismatch {
            field: "m".into(),
            got: raw.m.len(),
            expected: raw.hops,
        });
    }
    for (link, &value) in raw.q.iter().enumerate() {
        if !(value > 0.0 && value <= 1.0) {
            violations.push(ConfigViolation::NonPositiveProbability { link, value });
        }
    }
    for (l, &cap) in raw.m.iter().enumerate() {
        if cap < 2 {
            violations.push(ConfigViolation::CapTooSmall {
                field: format!("m[{l}]"),
                value: cap,
                min: 2,
            });
        }
    }
    if raw.debt_cap < 2 {
        violations.push(ConfigViolation::CapTooSmall {
            field: "debt_cap".into(),
            value: raw.debt_cap,
            min: 2,
        });
    }
    if let Some(&q_last) = raw.q.last() {
        if q_last > 0.0 && q_last <= 1.0 && raw.n_dest >= 1 {
            let capacity = raw.n_dest as f64 * q_last;
            if !allow_unstable && (raw.k_per_slot as f64) >= capacity {
                violations.push(ConfigViolation::RateExceedsCapacity {
                    k: raw.k_per_slot,
                    capacity,
                });
            }
        }
    }
    if !violations.is_empty() {
        return Err(ConfigError { violations });
    }
    Ok(NetworkConfig {
        hops: raw.hops,
        k_per_slot: raw.k_per_slot,
        n_dest: raw.n_dest,
        q: raw.q.clone(),
        delta: raw.delta,
        m: raw.m.clone(),
        debt_cap: raw.debt_cap,
        overflow_mode: raw.overflow_mode,
        seed: raw.seed.unwrap_or(0),
        slots: raw.slots.unwrap_or(1_000_000),
    })
}

/// Parse and validate a config from a JSON string.
pub fn config_from_json(json: &str) -> Result<NetworkConfig, ConfigParseError> {
    let raw: RawConfig = serde_json::from_str(json).map_err(ConfigParseError::Json)?;
    validate_config(&raw, false).map_err(ConfigParseError::Invalid)
}

#[derive(Debug, Error)]
pub enum ConfigParseError {
    #[error("malformed config: {0}")]
    Json(#[source] serde_json::Error),
    #[error(transparent)]
    Invalid(ConfigError),
}

impl NetworkConfig {
    pub fn raw(&self) -> RawConfig {
        RawConfig {
            hops: self.hops,
            k_per_slot: self.k_per_slot,
            n_dest: self.n_dest,
            q: self.q.clone(),
            delta: self.delta,
            m: self.m.clone(),
            debt_cap: self.debt_cap,
            overflow_mode: self.overflow_mode,
            seed: Some(self.seed),
            slots: Some(self.slots),
        }
    }

    /// Size of the truncated hidden-state product space.
    pub fn hidden_states(&self) -> usize {
        self.m.iter().product()
    }

    /// Number of nonzero debt levels.
    pub fn debt_levels(&self) -> usize {
        self.debt_cap - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("state component {component} = {value} is outside [0, {cap})")]
pub struct IndexOutOfRange {
    pub component: usize,
    pub value: usize,
    pub cap: usize,
}

/// Flat index of a residual-count tuple in lexicographic order
/// (`d[0]` most significant).
pub fn flat_index(d: &[usize], m: &[usize]) -> Result<usize, IndexOutOfRange> {
    assert_eq!(d.len(), m.len());
    let mut idx = 0usize;
    for (component, (&dl, &ml)) in d.iter().zip(m).enumerate() {
        if dl >= ml {
            return Err(IndexOutOfRange {
                component,
                value: dl,
                cap: ml,
            });
        }
        idx = idx * ml + dl;
    }
    Ok(idx)
}

/// Inverse of [`flat_index`].
pub fn unflat(mut i: usize, m: &[usize]) -> Vec<usize> {
    let mut d = vec![0usize; m.len()];
    for l in (0..m.len()).rev() {
        d[l] = i % m[l];
        i /= m[l];
    }
    debug_assert_eq!(i, 0, "flat index out of range");
    d
}
