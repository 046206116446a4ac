//! Per-slot information-debt recursion, zero-hitting rounds, and the
//! Monte-Carlo slot-error estimator.
//!
//! The recursion tracks, per slot, how many source slots' worth of symbols
//! are detained at each node (normalized by `k_per_slot`), how many unknowns
//! are represented at the destination, and how many coded equations the
//! destination has collected since the last decode. The information debt is
//! `max(K * d_dest - w, 0)` in symbol units; decoding happens exactly when it
//! hits zero, which closes a "round".
//!
//! The hidden state consumed by the analytic chain is the *post-slot
//! residual* `d_raw[l] * e[l]`: a link that delivers in a slot leaves no
//! residual behind. Using raw recursion values instead would double-count
//! symbols forwarded in the same slot they arrived.

use serde::Serialize;

use crate::model::NetworkConfig;
use crate::rng::{link_rng, shard_seed};

/// Full recursion state after processing slot `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebtState {
    /// Raw recursion values `D^[l](t)`, normalized by `k_per_slot`.
    pub d_raw: Vec<u64>,
    /// Post-slot residuals `d_raw[l] * e[l]` (the Markov hidden state).
    pub d_res: Vec<u64>,
    /// Normalized undecoded unknowns represented at the destination.
    pub d_dest: u64,
    /// Equations accumulated at the destination this round (symbol units).
    pub w: u64,
    /// Information debt `max(K * d_dest - w, 0)` in symbol units.
    pub debt: u64,
    /// Erasure flags of the slot just processed, bit `l` set = link `l` erased.
    pub e_prev: u32,
    /// Current slot (0 before the first step).
    pub t: u64,
}

impl DebtState {
    pub fn zero(hops: usize) -> Self {
        DebtState {
            d_raw: vec![0; hops],
            d_res: vec![0; hops],
            d_dest: 0,
            w: 0,
            debt: 0,
            e_prev: 0,
            t: 0,
        }
    }

    pub fn residual_sum(&self) -> u64 {
        self.d_res.iter().sum()
    }
}

/// Advance `state` by one slot. Bit `l` of `e_now` set means link `l` erased.
pub fn step_debt_in_place(state: &mut DebtState, e_now: u32, k: u64, n_dest: u64) {
    let hops = state.d_raw.len();
    // Hop 0: the reset term is exactly the stored residual, plus one slot of
    // fresh arrivals.
    let mut value = state.d_res[0] + 1;
    state.d_raw[0] = value;
    let erased0 = e_now & 1 != 0;
    let mut carry = if erased0 { 0 } else { value };
    state.d_res[0] = if erased0 { value } else { 0 };
    for l in 1..hops {
        value = state.d_res[l] + carry;
        state.d_raw[l] = value;
        let erased = e_now >> l & 1 != 0;
        carry = if erased { 0 } else { value };
        state.d_res[l] = if erased { value } else { 0 };
    }
    // Destination counters reset whenever the previous slot ended a round.
    let keep = state.debt != 0;
    let last_delivered = e_now >> (hops - 1) & 1 == 0;
    state.d_dest = if keep { state.d_dest } else { 0 } + carry;
    state.w = if keep { state.w } else { 0 } + if last_delivered { n_dest } else { 0 };
    state.debt = (k * state.d_dest).saturating_sub(state.w);
    state.e_prev = e_now;
    state.t += 1;
}

/// Pure one-slot step.
pub fn step_debt(state: &DebtState, e_now: u32, k: u64, n_dest: u64) -> DebtState {
    let mut next = state.clone();
    step_debt_in_place(&mut next, e_now, k, n_dest);
    next
}

/// One completed round: the interval between adjacent zero hits of the debt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoundRecord {
    /// Hit opening the round (`0` by convention for the first round).
    pub start_hit: u64,
    /// Hit closing the round.
    pub end_hit: u64,
    /// Residual sum at the start hit, in slots.
    pub alpha: u64,
    /// Slots decoded at the end hit (zero for trivial hits).
    pub decoded_slots: u64,
    /// Earliest slot still undecoded when the round opened.
    pub first_pending_slot: u64,
}

impl RoundRecord {
    /// Residual sum at the end hit, from the round identity
    /// `decoded = length - (beta - alpha)`.
    pub fn beta(&self) -> u64 {
        self.alpha + (self.end_hit - self.start_hit) - self.decoded_slots
    }
}

/// Per-slot erasure supplier; bit `l` set means link `l` erased.
pub trait ErasureSource {
    fn next_slot(&mut self) -> u32;
}

/// Independent per-link Bernoulli erasures with split, seedable streams.
///
/// Each link draws from its own generator seeded by `(seed, link)` only, so
/// adding hops never perturbs the erasure sequence of existing links.
pub struct IidErasures {
    rngs: Vec<rand_chacha::ChaCha8Rng>,
    q: Vec<f64>,
}

impl IidErasures {
    pub fn new(q: &[f64], seed: u64) -> Self {
        IidErasures {
            rngs: (0..q.len()).map(|l| link_rng(seed, l)).collect(),
            q: q.to_vec(),
        }
    }
}

impl ErasureSource for IidErasures {
    fn next_slot(&mut self) -> u32 {
        use rand::Rng;
        let mut bits = 0u32;
        for (l, rng) in self.rngs.iter_mut().enumerate() {
            if rng.gen::<f64>() >= self.q[l] {
                bits |= 1 << l;
            }
        }
        bits
    }
}

/// Scripted erasures, one slot per entry; repeats `0` when exhausted.
pub struct ScriptedErasures {
    slots: Vec<u32>,
    pos: usize,
}

impl ScriptedErasures {
    pub fn new(slots: Vec<u32>) -> Self {
        ScriptedErasures { slots, pos: 0 }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

impl ErasureSource for ScriptedErasures {
    fn next_slot(&mut self) -> u32 {
        let bits = self.slots.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        bits
    }
}

/// Parse the scripted-erasure text format: one line per slot, `hops`
/// space-separated bits, `1` = erased. Blank lines and `#` comments allowed.
pub fn parse_pattern(text: &str, hops: usize) -> Result<Vec<u32>, PatternError> {
    let mut slots = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut bits = 0u32;
        let mut count = 0usize;
        for tok in line.split_whitespace() {
            let b = match tok {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(PatternError {
                        line: lineno + 1,
                        reason: format!("expected 0 or 1, got {tok:?}"),
                    })
                }
            };
            if b == 1 {
                bits |= 1 << count;
            }
            count += 1;
        }
        if count != hops {
            return Err(PatternError {
                line: lineno + 1,
                reason: format!("expected {hops} bits, got {count}"),
            });
        }
        slots.push(bits);
    }
    Ok(slots)
}

#[derive(Debug, thiserror::Error)]
#[error("bad erasure pattern at line {line}: {reason}")]
pub struct PatternError {
    pub line: usize,
    pub reason: String,
}

/// Drive the recursion over an erasure source and emit every completed round,
/// including trivial hits that decode nothing. `t_0 = 0` by convention.
pub struct RoundIter<S: ErasureSource> {
    state: DebtState,
    source: S,
    k: u64,
    n_dest: u64,
    last_hit: u64,
    last_alpha: u64,
    first_pending: u64,
    max_slot: u64,
}

impl<S: ErasureSource> RoundIter<S> {
    pub fn new(cfg_k: u64, n_dest: u64, hops: usize, source: S, max_slot: u64) -> Self {
        RoundIter {
            state: DebtState::zero(hops),
            source,
            k: cfg_k,
            n_dest,
            last_hit: 0,
            last_alpha: 0,
            first_pending: 1,
            max_slot,
        }
    }

    pub fn for_config(cfg: &NetworkConfig, source: S, max_slot: u64) -> Self {
        Self::new(cfg.k_per_slot, cfg.n_dest, cfg.hops, source, max_slot)
    }

    pub fn state(&self) -> &DebtState {
        &self.state
    }
}

impl<S: ErasureSource> Iterator for RoundIter<S> {
    type Item = RoundRecord;

    fn next(&mut self) -> Option<RoundRecord> {
        while self.state.t < self.max_slot {
            let bits = self.source.next_slot();
            step_debt_in_place(&mut self.state, bits, self.k, self.n_dest);
            if self.state.debt == 0 {
                let record = RoundRecord {
                    start_hit: self.last_hit,
                    end_hit: self.state.t,
                    alpha: self.last_alpha,
                    decoded_slots: self.state.d_dest,
                    first_pending_slot: self.first_pending,
                };
                self.last_hit = self.state.t;
                self.last_alpha = self.state.residual_sum();
                self.first_pending += record.decoded_slots;
                return Some(record);
            }
        }
        None
    }
}

/// In-deadline window of a round: slots decoded at the end hit that also meet
/// the deadline. Returns `None` when the intersection is empty.
///
/// The decoded block is `[start - alpha + 1, start - alpha + decoded]`; the
/// deadline admits `[end - delta, end]`.
pub fn decodable_window(round: &RoundRecord, delta: u64) -> Option<(u64, u64)> {
    if round.decoded_slots == 0 {
        return None;
    }
    let lo1 = round.start_hit as i64 - round.alpha as i64 + 1;
    let hi1 = lo1 + round.decoded_slots as i64 - 1;
    let lo2 = round.end_hit as i64 - delta as i64;
    let hi2 = round.end_hit as i64;
    let lo = lo1.max(lo2);
    let hi = hi1.min(hi2);
    if lo <= hi {
        Some((lo.max(1) as u64, hi as u64))
    } else {
        None
    }
}

/// Monte-Carlo estimate of the slot error probability.
#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub p_e_hat: f64,
    pub errors: u64,
    pub decodes: u64,
    pub rounds: u64,
    pub seed: u64,
    pub slots: u64,
    pub shards: u64,
}

/// Sample `slots` timeslots of i.i.d. erasures and classify every decoded
/// source slot against the deadline.
///
/// Classification walks a FIFO pending queue: each end hit decodes the next
/// `decoded_slots` pending slots, and a decoded slot is an error iff the hit
/// lands after `slot + delta`. Slots still pending when the budget runs out
/// count in neither total. Work is split into `shards` independent streams
/// (each with its own renewal-reset state and sub-seed); results merge by
/// addition, so the output depends only on `(cfg, slots, seed, shards)`.
pub fn estimate_error_probability_mc(
    cfg: &NetworkConfig,
    slots: u64,
    seed: u64,
    shards: u64,
) -> McReport {
    use rayon::prelude::*;
    let shards = shards.clamp(1, slots.max(1));
    let base = slots / shards;
    let extra = slots % shards;
    let totals: Vec<(u64, u64, u64)> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let shard_slots = base + u64::from(shard < extra);
            let source = IidErasures::new(&cfg.q, shard_seed(seed, shard));
            run_classifier(cfg, source, shard_slots)
        })
        .collect();
    let mut errors = 0u64;
    let mut decodes = 0u64;
    let mut rounds = 0u64;
    for (e, d, r) in totals {
        errors += e;
        decodes += d;
        rounds += r;
    }
    McReport {
        p_e_hat: if decodes == 0 {
            0.0
        } else {
            errors as f64 / decodes as f64
        },
        errors,
        decodes,
        rounds,
        seed,
        slots,
        shards,
    }
}

/// Classify one trace; returns `(errors, decodes, rounds)`.
pub fn run_classifier<S: ErasureSource>(
    cfg: &NetworkConfig,
    source: S,
    slots: u64,
) -> (u64, u64, u64) {
    let mut errors = 0u64;
    let mut decodes = 0u64;
    let mut rounds = 0u64;
    for round in RoundIter::for_config(cfg, source, slots) {
        rounds += 1;
        let c = round.decoded_slots;
        decodes += c;
        // Decoded slots are [first_pending, first_pending + c); slot s is an
        // error iff s + delta < end_hit.
        let late = (round.end_hit as i64 - cfg.delta as i64) - round.first_pending_slot as i64;
        errors += late.clamp(0, c as i64) as u64;
    }
    (errors, decodes, rounds)
}


#[cfg(test)]
mod tests {
    use super::testdata::worked_trace;
    use super::*;

    fn run_to(slot: u64, k: u64, n: u64) -> DebtState {
        let pattern = worked_trace();
        let mut state = DebtState::zero(2);
        for &bits in pattern.iter().take(slot as usize) {
            step_debt_in_place(&mut state, bits, k, n);
        }
        state
    }

    #[test]
    fn single_slot_full_delivery() {
        let state = step_debt(&DebtState::zero(2), 0, 2, 3);
        assert_eq!(state.d_raw, vec![1, 1]);
        assert_eq!(state.d_res, vec![0, 0]);
        assert_eq!(state.d_dest, 1);
        assert_eq!(state.w, 3);
        assert_eq!(state.debt, 0);
    }

    #[test]
    fn worked_trace_slot_5() {
        let state = run_to(5, 2, 3);
        assert_eq!(state.d_raw, vec![2, 3]);
        assert_eq!(state.d_dest, 5);
        assert_eq!(state.w, 6);
        assert_eq!(state.debt, 4);
    }

    #[test]
    fn worked_trace_slot_9() {
        let state = run_to(9, 2, 3);
        assert_eq!(state.d_dest, 5);
        assert_eq!(state.w, 12);
        assert_eq!(state.debt, 0);
        // Eight symbols detained upstream: 2 * (4 + 0).
        assert_eq!(2 * (state.d_raw[0] + state.d_raw[1]), 8);
    }

    #[test]
    fn worked_trace_hits_and_windows() {
        let source = ScriptedErasures::new(worked_trace());
        let rounds: Vec<_> = RoundIter::new(2, 3, 2, source, 19).collect();
        let hits: Vec<u64> = rounds.iter().map(|r| r.end_hit).collect();
        // t = 1 and t = 16 are trivial hits (nothing at the destination yet);
        // the decoding hits land at 9 and 15.
        assert_eq!(hits, vec![1, 9, 15, 16]);
        assert_eq!(rounds[0].decoded_slots, 0);
        assert_eq!(rounds[1].decoded_slots, 5);
        assert_eq!(rounds[2].decoded_slots, 6);
        assert_eq!(rounds[3].decoded_slots, 0);
        assert_eq!(rounds[1].alpha, 1);
        assert_eq!(rounds[2].alpha, 4);
        assert_eq!(decodable_window(&rounds[0], 7), None);
        assert_eq!(decodable_window(&rounds[1], 7), Some((2, 5)));
        assert_eq!(decodable_window(&rounds[2], 7), Some((8, 11)));
        assert_eq!(decodable_window(&rounds[3], 7), None);
    }

    #[test]
    fn all_delivery_channel_hits_every_slot() {
        let source = ScriptedErasures::new(vec![0; 50]);
        let rounds: Vec<_> = RoundIter::new(1, 1, 2, source, 50).collect();
        assert_eq!(rounds.len(), 50);
        assert!(rounds.iter().all(|r| r.decoded_slots == 1));
        assert!(rounds
            .iter()
            .all(|r| decodable_window(r, 0) == Some((r.end_hit, r.end_hit))));
    }

    #[test]
    fn dead_last_link_never_hits_again() {
        // Link 0 erased, link 1 delivers: every slot forwards nothing, so the
        // debt stays zero and every slot is a trivial hit.
        let source = ScriptedErasures::new(vec![0b01; 100]);
        let rounds: Vec<_> = RoundIter::new(1, 1, 2, source, 100).collect();
        assert_eq!(rounds.len(), 100);
        assert!(rounds.iter().all(|r| r.decoded_slots == 0));

        // K = 2, N = 1: the first slot delivers everywhere and leaves debt 1;
        // with the last link dead afterwards the debt can never be repaid, so
        // no hit follows the first arrival.
        let mut bits = vec![0u32];
        bits.extend(std::iter::repeat_n(0b10, 99));
        let source = ScriptedErasures::new(bits);
        let rounds: Vec<_> = RoundIter::new(2, 1, 2, source, 100).collect();
        assert!(rounds.is_empty());
    }

    #[test]
    fn round_identity_and_conservation_on_random_traces() {
        let cfg_like = [(1u64, 1u64, 0.5, 0.5), (2, 3, 0.7, 0.8), (1, 2, 0.6, 0.9)];
        for (i, &(k, n, q0, q1)) in cfg_like.iter().enumerate() {
            let source = IidErasures::new(&[q0, q1], 7 + i as u64);
            let mut pending_before = 0u64;
            for round in RoundIter::new(k, n, 2, source, 20_000) {
                let length = round.end_hit - round.start_hit;
                let beta = round.beta();
                assert_eq!(
                    round.decoded_slots + beta,
                    length + round.alpha,
                    "round identity violated at {round:?}"
                );
                // Slot conservation at the end hit.
                assert_eq!(
                    round.first_pending_slot - 1 + round.decoded_slots + beta,
                    round.end_hit
                );
                assert_eq!(round.alpha, pending_before);
                pending_before = beta;
            }
        }
    }

    #[test]
    fn window_agrees_with_pending_queue() {
        for seed in 0..20 {
            let source = IidErasures::new(&[0.6, 0.7], seed);
            let delta = 3;
            for round in RoundIter::new(2, 3, 2, source, 5_000) {
                let window = decodable_window(&round, delta);
                let fp = round.first_pending_slot;
                for s in fp..fp + round.decoded_slots {
                    let in_time = round.end_hit <= s + delta;
                    let in_window = window.is_some_and(|(lo, hi)| (lo..=hi).contains(&s));
                    assert_eq!(in_time, in_window, "slot {s} of {round:?}");
                }
            }
        }
    }

    #[test]
    fn mc_is_deterministic_and_zero_error_on_perfect_links() {
        let cfg = crate::model::validate_config(
            &crate::model::RawConfig {
                hops: 2,
                k_per_slot: 1,
                n_dest: 3,
                q: vec![1.0, 1.0],
                delta: 0,
                m: vec![5, 5],
                debt_cap: 5,
                overflow_mode: Default::default(),
                seed: None,
                slots: None,
            },
            false,
        )
        .unwrap();
        let a = estimate_error_probability_mc(&cfg, 10_000, 3, 4);
        let b = estimate_error_probability_mc(&cfg, 10_000, 3, 4);
        assert_eq!(a.errors, b.errors);
        assert_eq!(a.decodes, b.decodes);
        assert_eq!(a.p_e_hat, 0.0);
        assert_eq!(a.decodes, 10_000);
    }

    #[test]
    fn pattern_parser_roundtrip() {
        let text = "# two-hop pattern\n0 1\n1 0\n\n1 1\n";
        assert_eq!(parse_pattern(text, 2).unwrap(), vec![0b10, 0b01, 0b11]);
        assert!(parse_pattern("0 1 1", 2).is_err());
        assert!(parse_pattern("0 x", 2).is_err());
    }
}
