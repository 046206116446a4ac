//! Exact slot-error analysis of random linear streaming codes over multi-hop
//! packet-erasure relay networks.
//!
//! A source streams `K` fresh symbols per timeslot through a line of relays
//! to a destination; every node forwards random linear combinations of
//! everything it has received, and each link erases packets independently.
//! The destination decodes exactly when its information debt (unknowns minus
//! collected equations) returns to zero, and a source slot is in error when
//! that happens later than its deadline.
//!
//! Three independent routes to the same answer live here:
//!
//! * [`error_prob::error_probability`] computes the exact asymptotic error
//!   probability from a truncated Markov renewal model, built by nesting
//!   per-hop band kernels ([`band`]) into joint debt transitions
//!   ([`transition`]) and solving the renewal fixed point ([`stationary`]).
//! * [`debt::estimate_error_probability_mc`] samples the same quantity by
//!   simulating the debt recursion directly.
//! * [`field`] replays the coding model exactly over GF(2^61 - 1) and decides
//!   decodability by rank, slot by slot.
//!
//! [`validation`] wires the three together into an invariant suite.

pub mod band;
pub mod debt;
pub mod error_prob;
pub mod field;
pub mod model;
pub mod rng;
pub mod sparse;
pub mod stationary;
pub mod transition;
pub mod validation;

pub use band::{last_zero_position, nest_hidden_chain, BandMatrix, LabeledKernel};
pub use debt::{
    decodable_window, estimate_error_probability_mc, parse_pattern, step_debt, DebtState, McReport,
    RoundRecord,
};
pub use error_prob::{build_sum_projectors, error_probability, SumProjectors, TheoryRecord};
pub use field::{cross_validate, is_delta_decodable, CrossValidationReport, FieldMatrix};
pub use model::{
    config_from_json, flat_index, suggested_caps, unflat, validate_config, ConfigError,
    NetworkConfig, OverflowMode, RawConfig,
};
pub use stationary::{round_length_pmf, RenewalModel, RoundLengthPmf, SolverError};
pub use transition::{build_transition_set, shifted_identity, TransitionOptions, TransitionSet};
pub use validation::{run_invariant_suite, SuiteReport};
