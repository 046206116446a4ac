//! Cross-checks between the recursion, the matrix machinery and the
//! Monte-Carlo classifier: exhaustive one-step and multi-slot enumerations
//! plus the invariant suite behind the `validate` command.
//!
//! The enumeration oracles drive [`crate::debt::step_debt`] directly, so they
//! share nothing with the band/transition construction they are checked
//! against.

use serde::Serialize;

use crate::debt::{step_debt_in_place, DebtState, IidErasures, RoundIter};
use crate::error_prob::{
    build_sum_projectors, expected_decoded_per_round, expected_errors_per_round,
    sum_projected_one_round,
};
use crate::model::{unflat, NetworkConfig, OverflowMode};
use crate::stationary::{RenewalModel, SolverError, PMF_K_MAX};
use crate::transition::{TransitionOptions, TransitionSet};

/// One-step distribution from a hidden residual tuple `d` at debt level
/// `level`, enumerated over all `2^hops` erasure outcomes of a single slot by
/// the debt recursion, then projected into the truncated state space exactly
/// as the kernels do (residuals clamp at `m[l] - 1`; debt overflow follows
/// `overflow_mode`; a zero-unknown delivery from debt 0 stays at debt 0).
///
/// Returns the row over `[t00 | t0phi]` columns (for `level == 0`) or
/// `[tphi0 | tphiphi]` columns (for `level > 0`), as (column, probability)
/// pairs in the combined layout `[hidden block | phi block]`, plus the mass
/// dropped by debt overflow.
pub fn one_step_row(
    cfg: &NetworkConfig,
    d: &[usize],
    level: usize,
    zero_fix: bool,
) -> (Vec<f64>, f64) {
    let hops = cfg.hops;
    let hidden = cfg.hidden_states();
    let levels = cfg.debt_levels();
    let mut row = vec![0.0; hidden + hidden * levels];
    let mut dropped = 0.0;
    for bits in 0..1u32 << hops {
        let mut prob = 1.0;
        for l in 0..hops {
            let erased = bits >> l & 1 == 1;
            prob *= if erased { 1.0 - cfg.q[l] } else { cfg.q[l] };
        }
        if prob == 0.0 {
            continue;
        }
        let mut state = DebtState::zero(hops);
        for (l, &dl) in d.iter().enumerate() {
            state.d_raw[l] = dl as u64;
            state.d_res[l] = dl as u64;
        }
        if level > 0 {
            // Any counter pair with K * d_dest - w = level behaves identically.
            state.d_dest = level as u64;
            state.w = level as u64 * (cfg.k_per_slot - 1);
            state.debt = level as u64;
        }
        let before_last_delivers = bits >> (hops - 1) & 1 == 0;
        let forwarded_zero = {
            // Re-derive the forwarded count to recognize the zero-unknown case.
            let mut carry = state.d_res[0] + 1;
            if bits & 1 == 1 {
                carry = 0;
            }
            for l in 1..hops {
                carry += state.d_res[l];
                if bits >> l & 1 == 1 {
                    carry = 0;
                }
            }
            carry == 0
        };
        step_debt_in_place(&mut state, bits, cfg.k_per_slot, cfg.n_dest);
        let next_hidden: Vec<usize> = state
            .d_res
            .iter()
            .zip(&cfg.m)
            .map(|(&r, &m)| (r as usize).min(m - 1))
            .collect();
        let col_hidden = crate::band::joint_index(&next_hidden, &cfg.m);
        let debt = state.debt as usize;
        if debt == 0 {
            if level == 0 && before_last_delivers && forwarded_zero && !zero_fix {
                // The literal construction annihilates this outcome.
                dropped += prob;
            } else {
                row[col_hidden] += prob;
            }
        } else if debt <= levels {
            row[hidden + col_hidden * levels + (debt - 1)] += prob;
        } else {
            match cfg.overflow_mode {
                OverflowMode::Clamp => row[hidden + col_hidden * levels + (levels - 1)] += prob,
                OverflowMode::Drop => dropped += prob,
            }
        }
    }
    (row, dropped)
}

/// Kernel row in the same combined layout, for comparison with
/// [`one_step_row`].
pub fn kernel_row(ts: &TransitionSet, hidden_state: usize, level: usize) -> Vec<f64> {
    let hidden = ts.hidden;
    let mut row = vec![0.0; hidden + ts.phi_dim()];
    if level == 0 {
        for (c, v) in ts.t00.row(hidden_state) {
            row[c] += v;
        }
        for (c, v) in ts.t0phi.row(hidden_state) {
            row[hidden + c] += v;
        }
    } else {
        let r = ts.phi_index(hidden_state, level);
        for (c, v) in ts.tphi0.row(r) {
            row[c] += v;
        }
        for (c, v) in ts.tphiphi.row(r) {
            row[hidden + c] += v;
        }
    }
    row
}

/// Exhaustive round statistics from a start distribution over hidden states
/// (debt 0), summed over every erasure pattern of up to `horizon` slots.
#[derive(Debug, Clone, Default)]
pub struct RoundEnumeration {
    /// `pmf[k-1] = Pr(first return to debt 0 at slot k)`, `k <= horizon`.
    pub pmf: Vec<f64>,
    /// Partial mean `sum k * pmf[k]`.
    pub mean_partial: f64,
    /// Partial expected decoded slots per round.
    pub decoded_partial: f64,
    /// Partial expectation of the deadline-miss count
    /// `min[(k + alpha - delta - 1)^+, decoded]`.
    pub lambda_partial: f64,
    /// Mass of rounds still open after `horizon` slots.
    pub survivor_mass: f64,
    /// Mass of paths that touched a truncation boundary at any step
    /// (residual at `m[l] - 1` after clamping would bind, or debt above the
    /// cap). Bounds the disagreement with the truncated kernels.
    pub touched_mass: f64,
}

/// Enumerate rounds by the pure (untruncated) recursion.
pub fn enumerate_rounds(
    cfg: &NetworkConfig,
    start: &[f64],
    horizon: usize,
    delta: u64,
) -> RoundEnumeration {
    let hidden = cfg.hidden_states();
    assert_eq!(start.len(), hidden);
    let mut out = RoundEnumeration {
        pmf: vec![0.0; horizon],
        ..Default::default()
    };
    let probs: Vec<(f64, f64)> = cfg.q.iter().map(|&q| (q, 1.0 - q)).collect();
    for (s, &weight) in start.iter().enumerate() {
        if weight <= 0.0 {
            continue;
        }
        let d = unflat(s, &cfg.m);
        let alpha: u64 = d.iter().map(|&x| x as u64).sum();
        let mut state = DebtState::zero(cfg.hops);
        for (l, &dl) in d.iter().enumerate() {
            state.d_raw[l] = dl as u64;
            state.d_res[l] = dl as u64;
        }
        descend(
            cfg, &probs, &state, weight, alpha, 0, horizon, delta, false, &mut out,
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn descend(
    cfg: &NetworkConfig,
    probs: &[(f64, f64)],
    state: &DebtState,
    weight: f64,
    alpha: u64,
    depth: usize,
    horizon: usize,
    delta: u64,
    touched: bool,
    out: &mut RoundEnumeration,
) {
    if depth == horizon {
        out.survivor_mass += weight;
        if touched {
            out.touched_mass += weight;
        }
        return;
    }
    for bits in 0..1u32 << cfg.hops {
        let mut p = weight;
        for (l, &(q, qbar)) in probs.iter().enumerate() {
            p *= if bits >> l & 1 == 1 { qbar } else { q };
        }
        if p == 0.0 {
            continue;
        }
        let mut next = state.clone();
        step_debt_in_place(&mut next, bits, cfg.k_per_slot, cfg.n_dest);
        let now_touched = touched
            || next
                .d_res
                .iter()
                .zip(&cfg.m)
                .any(|(&r, &m)| r as usize > m - 1)
            || next.debt as usize > cfg.debt_cap - 1;
        if next.debt == 0 {
            let k = depth + 1;
            out.pmf[k - 1] += p;
            out.mean_partial += p * k as f64;
            let decoded = next.d_dest as f64;
            out.decoded_partial += p * decoded;
            let overdue = (k as f64 + alpha as f64 - delta as f64 - 1.0).max(0.0);
            out.lambda_partial += p * overdue.min(decoded);
            if now_touched {
                out.touched_mass += p;
            }
        } else {
            descend(
                cfg,
                probs,
                &next,
                p,
                alpha,
                depth + 1,
                horizon,
                delta,
                now_touched,
                out,
            );
        }
    }
}

/// Deadline-miss expectation evaluated directly from the projected round
/// kernels: `sum_k sum_j sum_l pi~[j] (P T^(k) Q)[j,l] min[(k+j-delta-1)^+, k+j-l]`,
/// truncated at `k_max`. An independent route to the same number the
/// five-term expansion produces.
pub fn direct_lambda_expectation(
    model: &RenewalModel,
    proj: &crate::error_prob::SumProjectors,
    delta: u64,
    k_max: usize,
) -> f64 {
    let pi_sum = proj.aggregate(&model.pi);
    let s_dim = proj.s_dim();
    let mut total = 0.0;
    for k in 1..=k_max {
        let kernel = crate::error_prob::sum_projected_round_kernel(model, proj, k);
        let mut layer = 0.0;
        for j in 0..s_dim {
            if pi_sum[j] == 0.0 {
                continue;
            }
            for l in 0..s_dim {
                let p = kernel[(j, l)];
                if p == 0.0 {
                    continue;
                }
                let overdue = (k as f64 + j as f64 - delta as f64 - 1.0).max(0.0);
                let decoded = k as f64 + j as f64 - l as f64;
                layer += pi_sum[j] * p * overdue.min(decoded);
            }
        }
        total += layer;
    }
    total
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    /// Stationary inflow mass of zero-unknown deliveries at renewal slots:
    /// how much probability the zero-fix actually reroutes per round.
    pub zero_unknown_renewal_mass: f64,
}

fn push(checks: &mut Vec<CheckResult>, name: &str, value: f64, threshold: f64) {
    checks.push(CheckResult {
        name: name.to_string(),
        passed: value <= threshold,
        value,
        threshold,
    });
}

/// Run the full invariant suite on a config.
///
/// The matrix checks run on a zero-fix + clamp build regardless of the
/// config's own overflow mode (that is the stochastic-completion contract
/// they are stated for); the Monte-Carlo checks sample `mc_slots` timeslots.
pub fn run_invariant_suite(cfg: &NetworkConfig, mc_slots: u64) -> Result<SuiteReport, SolverError> {
    let mut checked = cfg.clone();
    checked.overflow_mode = OverflowMode::Clamp;
    let model = RenewalModel::build_with(&checked, TransitionOptions { zero_fix: true })?;
    let ts = &model.ts;
    let mut checks = Vec::new();

    let top_dev = ts
        .t00
        .row_sums()
        .iter()
        .zip(ts.t0phi.row_sums())
        .map(|(a, b)| (1.0 - a - b).abs())
        .fold(0.0f64, f64::max);
    push(&mut checks, "row_sums_top", top_dev, 1e-12);
    let bottom_dev = ts
        .tphi0
        .row_sums()
        .iter()
        .zip(ts.tphiphi.row_sums())
        .map(|(a, b)| (1.0 - a - b).abs())
        .fold(0.0f64, f64::max);
    push(&mut checks, "row_sums_bottom", bottom_dev, 1e-12);
    push(&mut checks, "contraction_margin", model.contraction, 1.0);
    push(
        &mut checks,
        "pi_fixed_point_residual",
        model.pi_residual,
        1e-8,
    );

    // One-step rows vs the recursion, every state and level, when the joint
    // space is small enough to enumerate.
    if ts.hidden * (1 + ts.levels) <= 250_000 {
        let mut worst = 0.0f64;
        for s in 0..ts.hidden {
            let d = unflat(s, &checked.m);
            for level in 0..=ts.levels {
                let (expected, _) = one_step_row(&checked, &d, level, true);
                let got = kernel_row(ts, s, level);
                for (a, b) in expected.iter().zip(&got) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        push(&mut checks, "one_step_rows_vs_recursion", worst, 1e-12);
    }

    // Renewal identity: denominator vs sum k Pr(k).
    let den = expected_decoded_per_round(&model)?;
    let pmf = model.round_length_pmf(PMF_K_MAX);
    push(
        &mut checks,
        "renewal_identity",
        (den - pmf.mean()).abs(),
        pmf.tail_mass + 1e-8,
    );

    // Zero-drift identity of the projected renewal kernel.
    let proj = build_sum_projectors(&model.pi, &checked);
    let projected = sum_projected_one_round(&model, &proj)?;
    let pi_sum = proj.aggregate(&model.pi);
    let ramp: Vec<f64> = (0..proj.s_dim()).map(|j| j as f64).collect();
    let mut drift = 0.0;
    for j in 0..proj.s_dim() {
        let row_mean: f64 = (0..proj.s_dim()).map(|l| projected[(j, l)] * ramp[l]).sum();
        drift += pi_sum[j] * (row_mean - ramp[j]);
    }
    push(&mut checks, "projected_mean_drift", drift.abs(), 1e-8);

    // Numerator bounds.
    let num = expected_errors_per_round(&model, &proj, checked.delta)?;
    push(&mut checks, "numerator_nonnegative", (-num).max(0.0), 1e-10);
    push(
        &mut checks,
        "numerator_within_denominator",
        (num - den).max(0.0),
        1e-10,
    );

    // Round identity and slot conservation over a Monte-Carlo trace. The
    // iterator measures each round's closing residual sum as the next
    // round's alpha, which makes `beta()` (derived from the identity)
    // independently checkable.
    let source = IidErasures::new(&checked.q, checked.seed);
    let mut identity_violations = 0u64;
    let mut prev: Option<crate::debt::RoundRecord> = None;
    for round in RoundIter::for_config(&checked, source, mc_slots) {
        if let Some(p) = prev {
            if p.beta() != round.alpha {
                identity_violations += 1;
            }
        }
        if round.first_pending_slot - 1 + round.decoded_slots + round.beta() != round.end_hit {
            identity_violations += 1;
        }
        prev = Some(round);
    }
    push(
        &mut checks,
        "mc_round_identity_violations",
        identity_violations as f64,
        0.0,
    );

    // Reachability of the zero-unknown renewal transitions the zero-fix
    // reroutes: reported, not asserted.
    let kernel = crate::band::nest_hidden_chain(&checked)?;
    let mut zero_mass = 0.0;
    for s in 0..ts.hidden {
        let d = unflat(s, &checked.m);
        for entry in kernel.row(s) {
            if entry.bands & 1 == 1
                && crate::band::forwarded_unknowns(&d, entry.bands, checked.hops) == 0
            {
                zero_mass += model.pi[s] * entry.value;
            }
        }
    }

    Ok(SuiteReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        zero_unknown_renewal_mass: zero_mass,
    })
}
