//! Bridges between the recursion world and the matrix world: exhaustive
//! erasure-pattern enumeration against kernel products, the five-term
//! numerator against the direct expectation, and Monte-Carlo sampling against
//! exact episode statistics.

use streamdebt_core::debt::{run_classifier, ScriptedErasures};
use streamdebt_core::error_prob::{
    build_sum_projectors, expected_decoded_per_round, expected_errors_per_round,
};
use streamdebt_core::model::{unflat, validate_config, OverflowMode, RawConfig};
use streamdebt_core::stationary::{RenewalModel, PMF_K_MAX};
use streamdebt_core::transition::{transition_set_for, TransitionOptions, TransitionSet};
use streamdebt_core::validation::{direct_lambda_expectation, enumerate_rounds};
use streamdebt_core::{estimate_error_probability_mc, NetworkConfig};

fn cfg(
    q: &[f64],
    m: &[usize],
    debt_cap: usize,
    k: u64,
    n: u64,
    delta: u64,
    mode: OverflowMode,
) -> NetworkConfig {
    validate_config(
        &RawConfig {
            hops: q.len(),
            k_per_slot: k,
            n_dest: n,
            q: q.to_vec(),
            delta,
            m: m.to_vec(),
            debt_cap,
            overflow_mode: mode,
            seed: Some(17),
            slots: None,
        },
        true,
    )
    .unwrap()
}

/// Round statistics straight from the kernels, class by class:
/// per-length pmf, partial mean length, and the partial deadline-miss
/// expectation, for rounds of up to `horizon` slots.
fn matrix_round_stats(
    ts: &TransitionSet,
    dims: &[usize],
    start: &[f64],
    horizon: usize,
    delta: u64,
) -> (Vec<f64>, f64, f64) {
    let class_of: Vec<usize> = (0..ts.hidden)
        .map(|s| unflat(s, dims).iter().sum())
        .collect();
    let lambda = |k: usize, j: usize, l: usize| -> f64 {
        let overdue = (k as f64 + j as f64 - delta as f64 - 1.0).max(0.0);
        overdue.min(k as f64 + j as f64 - l as f64)
    };
    let mut pmf = vec![0.0; horizon];
    let mut mean = 0.0;
    let mut miss = 0.0;
    let max_class = class_of.iter().max().copied().unwrap_or(0);
    for j in 0..=max_class {
        let row: Vec<f64> = (0..ts.hidden)
            .map(|s| if class_of[s] == j { start[s] } else { 0.0 })
            .collect();
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        let first = ts.t00.vec_mul(&row);
        for (c, &p) in first.iter().enumerate() {
            pmf[0] += p;
            mean += p;
            miss += p * lambda(1, j, class_of[c]);
        }
        let mut front = ts.t0phi.vec_mul(&row);
        for k in 2..=horizon {
            let hit = ts.tphi0.vec_mul(&front);
            for (c, &p) in hit.iter().enumerate() {
                pmf[k - 1] += p;
                mean += k as f64 * p;
                miss += p * lambda(k, j, class_of[c]);
            }
            front = ts.tphiphi.vec_mul(&front);
        }
    }
    (pmf, mean, miss)
}

#[test]
fn point_start_round_statistics_match_pattern_enumeration() {
    // Over-capacity on purpose (rate 1 against capacity 0.5): the truncated
    // kernels still describe every round of up to 8 slots exactly, because
    // no boundary is reachable that fast from the low start states. Starting
    // from the origin alone would be vacuous here (every round ends in one
    // slot when nothing is detained), so spread the start over all states
    // with both residuals at most 4.
    // Any value reachable in 8 slots is bounded by start sum + slots = 16,
    // so caps of 18 put every path strictly inside the boundary.
    let cfg = cfg(&[0.5, 0.5], &[18, 18], 18, 1, 1, 1, OverflowMode::Clamp);
    let ts = transition_set_for(&cfg, TransitionOptions::default()).unwrap();
    let mut start = vec![0.0; cfg.hidden_states()];
    for d0 in 0..=4usize {
        for d1 in 0..=4usize {
            start[d0 * cfg.m[1] + d1] = 1.0 / 25.0;
        }
    }
    let horizon = 8;

    let en = enumerate_rounds(&cfg, &start, horizon, cfg.delta);
    assert_eq!(en.touched_mass, 0.0, "no 8-slot path may reach a boundary");

    let (pmf, mean, miss) = matrix_round_stats(&ts, &cfg.m, &start, horizon, cfg.delta);
    for k in 1..=horizon {
        assert!(
            (pmf[k - 1] - en.pmf[k - 1]).abs() < 1e-12,
            "pmf at k = {k}: matrix {} vs enumeration {}",
            pmf[k - 1],
            en.pmf[k - 1]
        );
    }
    assert!((mean - en.mean_partial).abs() < 1e-12);
    assert!((miss - en.lambda_partial).abs() < 1e-12);
    // Over capacity, a visible fraction of rounds is still open after 8 slots.
    assert!(en.survivor_mass > 1e-3);
}

#[test]
fn stationary_weighted_statistics_match_pattern_enumeration() {
    // In-capacity config; caps wide enough that 6-slot paths from the
    // stationary start touch a boundary with mass ~1e-11.
    let cfg = cfg(&[0.7, 0.8], &[28, 28], 64, 1, 2, 1, OverflowMode::Clamp);
    let model = RenewalModel::build(&cfg).unwrap();
    assert!(
        model.one_round_kernel().is_none(),
        "large space stays matrix-free"
    );
    let horizon = 6;

    let mut start = model.pi.clone();
    for v in &mut start {
        if *v < 1e-14 {
            *v = 0.0;
        }
    }
    let en = enumerate_rounds(&cfg, &start, horizon, cfg.delta);
    assert!(en.touched_mass < 1e-10, "touched mass {}", en.touched_mass);

    let (pmf, mean, miss) = matrix_round_stats(&model.ts, &cfg.m, &start, horizon, cfg.delta);
    for k in 1..=horizon {
        assert!(
            (pmf[k - 1] - en.pmf[k - 1]).abs() < 1e-8,
            "pmf at k = {k}: matrix {} vs enumeration {}",
            pmf[k - 1],
            en.pmf[k - 1]
        );
    }
    assert!((mean - en.mean_partial).abs() < 1e-8);
    assert!((miss - en.lambda_partial).abs() < 1e-8);
}

#[test]
fn five_term_numerator_matches_direct_expectation() {
    let configs = [
        cfg(&[0.9, 0.9], &[5, 5], 25, 1, 3, 2, OverflowMode::Clamp),
        cfg(&[0.9, 0.9], &[5, 5], 25, 1, 3, 2, OverflowMode::Drop),
        cfg(
            &[0.8, 0.7, 0.9],
            &[4, 4, 4],
            10,
            1,
            2,
            3,
            OverflowMode::Clamp,
        ),
    ];
    for cfg in &configs {
        let model = RenewalModel::build(cfg).unwrap();
        let proj = build_sum_projectors(&model.pi, cfg);
        for delta in [0u64, 1, 2, 5, 9] {
            let five = expected_errors_per_round(&model, &proj, delta).unwrap();
            let direct = direct_lambda_expectation(&model, &proj, delta, 400);
            assert!(
                (five - direct).abs() < 1e-10,
                "delta {delta}: five-term {five} vs direct {direct}"
            );
        }
    }
}

#[test]
fn pmf_total_mass_reaches_one_via_fundamental_solve() {
    let cfg = cfg(&[0.9, 0.9], &[5, 5], 25, 1, 3, 2, OverflowMode::Clamp);
    let model = RenewalModel::build(&cfg).unwrap();
    let pmf = model.round_length_pmf(PMF_K_MAX);
    let total: f64 = pmf.probs.iter().sum();
    assert!(total >= 1.0 - 1e-9, "cumulative mass {total}");
    // The denominator assembled through the fundamental matrix equals the
    // directly accumulated mean length.
    let den = expected_decoded_per_round(&model).unwrap();
    assert!((den - pmf.mean()).abs() <= pmf.tail_mass + 1e-9);
}

#[test]
fn denominator_matches_mc_mean_decoded_per_round() {
    let cfg = cfg(&[0.9, 0.9], &[7, 7], 35, 1, 3, 2, OverflowMode::Clamp);
    let model = RenewalModel::build(&cfg).unwrap();
    let den = expected_decoded_per_round(&model).unwrap();
    let mc = estimate_error_probability_mc(&cfg, 10_000_000, 4, 1);
    let mc_mean = mc.decodes as f64 / mc.rounds as f64;
    // Decoded-per-round variance is order one; three standard errors over
    // ten million rounds.
    let se = 3.0 * (1.0 / mc.rounds as f64).sqrt();
    assert!(
        (den - mc_mean).abs() <= 3.0 * se,
        "denominator {den} vs mc mean {mc_mean} (se {se})"
    );

    // A deadline far beyond any plausible round leaves no room for errors:
    // the numerator collapses and the simulation observes none either.
    let proj = build_sum_projectors(&model.pi, &cfg);
    let num = expected_errors_per_round(&model, &proj, 50).unwrap();
    assert!(num.abs() <= 1e-10);
    let mut relaxed = cfg.clone();
    relaxed.delta = 50;
    let mc = estimate_error_probability_mc(&relaxed, 1_000_000, 4, 1);
    assert_eq!(mc.errors, 0);
}

#[test]
fn mc_agrees_with_exact_episode_statistics() {
    // 8-slot cold-start episodes: every erasure pattern enumerated exactly,
    // then one million Monte-Carlo slots sharded into 125k such episodes.
    let cfg = cfg(&[0.5, 0.5], &[12, 12], 14, 1, 1, 1, OverflowMode::Drop);
    let horizon = 8u32;
    let mut e_err = 0.0;
    let mut e_dec = 0.0;
    let mut e_err2 = 0.0;
    let mut e_dec2 = 0.0;
    let mut e_cross = 0.0;
    for pattern in 0u32..1 << (2 * horizon) {
        let bits: Vec<u32> = (0..horizon).map(|t| pattern >> (2 * t) & 0b11).collect();
        let weight = 0.25f64.powi(horizon as i32);
        let (err, dec, _) = run_classifier(&cfg, ScriptedErasures::new(bits), horizon as u64);
        let (err, dec) = (err as f64, dec as f64);
        e_err += weight * err;
        e_dec += weight * dec;
        e_err2 += weight * err * err;
        e_dec2 += weight * dec * dec;
        e_cross += weight * err * dec;
    }
    let p_exact = e_err / e_dec;
    // Delta-method standard error of the ratio estimator over n episodes.
    let var_u = e_err2 - e_err * e_err + p_exact * p_exact * (e_dec2 - e_dec * e_dec)
        - 2.0 * p_exact * (e_cross - e_err * e_dec);
    let episodes = 125_000u64;
    let se = (var_u / episodes as f64).sqrt() / e_dec;

    let mc = estimate_error_probability_mc(&cfg, episodes * horizon as u64, 42, episodes);
    assert!(
        (mc.p_e_hat - p_exact).abs() <= 3.0 * se,
        "mc {} vs exact {} (se {})",
        mc.p_e_hat,
        p_exact,
        se
    );
}

#[test]
fn stationary_distribution_matches_mc_hitting_histogram() {
    // Caps wide enough that truncation distortion sits far below the
    // sampling noise of one million observed renewals.
    let cfg = cfg(&[0.7, 0.8], &[10, 10], 16, 1, 2, 1, OverflowMode::Clamp);
    let model = RenewalModel::build(&cfg).unwrap();
    let mut state = streamdebt_core::DebtState::zero(cfg.hops);
    let mut src = streamdebt_core::debt::IidErasures::new(&cfg.q, 5);
    use streamdebt_core::debt::ErasureSource;
    let mut total_hits = 0u64;
    let mut counts = vec![0u64; cfg.hidden_states()];
    for _ in 0..2_000_000u64 {
        let bits = src.next_slot();
        streamdebt_core::debt::step_debt_in_place(&mut state, bits, cfg.k_per_slot, cfg.n_dest);
        if state.debt == 0 {
            let d: Vec<usize> = state
                .d_res
                .iter()
                .zip(&cfg.m)
                .map(|(&r, &m)| (r as usize).min(m - 1))
                .collect();
            counts[streamdebt_core::flat_index(&d, &cfg.m).unwrap()] += 1;
            total_hits += 1;
        }
    }
    assert!(total_hits > 1_000_000);
    for (s, &c) in counts.iter().enumerate() {
        let observed = c as f64 / total_hits as f64;
        let expected = model.pi[s];
        let se = (expected.max(1e-12) * (1.0 - expected) / total_hits as f64).sqrt();
        assert!(
            (observed - expected).abs() <= 4.0 * se + 1e-6,
            "state {s}: observed {observed} expected {expected} (se {se})"
        );
    }
}
