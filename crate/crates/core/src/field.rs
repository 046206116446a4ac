//! Exact finite-field replay of the coding model.
//!
//! Independently of the debt recursion, this module builds the cumulative
//! generator and receiver matrices of every hop over GF(p), composes them
//! into the destination's overall receiver matrix, and decides slot
//! decodability by exact rank arithmetic. Agreement between the two
//! classifiers is the strongest end-to-end check the crate has.
//!
//! The prime is fixed at `2^61 - 1`. Coefficients are uniform in `[1, p-1]`,
//! so a random instance violates the generic full-rank behaviour the debt
//! analysis assumes with probability on the order of (matrix size)^2 / p,
//! i.e. never in practice; any disagreement is still logged as a suspect
//! rather than silently discarded.

use serde::Serialize;

use crate::debt::{decodable_window, RoundIter, ScriptedErasures};
use crate::model::NetworkConfig;
use crate::rng::{field_rng, shard_seed};

/// Modulus of the oracle field.
pub const FIELD_PRIME: u64 = (1 << 61) - 1;

#[inline]
pub fn fadd(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= FIELD_PRIME {
        s - FIELD_PRIME
    } else {
        s
    }
}

#[inline]
pub fn fsub(a: u64, b: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + FIELD_PRIME - b
    }
}

#[inline]
pub fn fmul(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % FIELD_PRIME as u128) as u64
}

pub fn fpow(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1u64;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = fmul(acc, base);
        }
        base = fmul(base, base);
        exp >>= 1;
    }
    acc
}

pub fn finv(a: u64) -> u64 {
    assert!(a != 0, "zero has no inverse");
    fpow(a, FIELD_PRIME - 2)
}

/// Dense row-major matrix over GF(p).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<u64>,
}

impl FieldMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FieldMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &FieldMatrix) -> FieldMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = FieldMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = fadd(*d, fmul(a, s));
                }
            }
        }
        out
    }

    /// Rank by elimination on a scratch basis.
    pub fn rank(&self) -> usize {
        let mut basis = RowBasis::new(self.cols);
        for r in 0..self.rows {
            basis.insert(self.row(r).to_vec());
        }
        basis.rank()
    }
}

/// Row-echelon basis with exact membership tests.
#[derive(Debug, Clone)]
pub struct RowBasis {
    cols: usize,
    /// Normalized rows keyed by pivot column, kept sorted by pivot.
    rows: Vec<(usize, Vec<u64>)>,
}

impl RowBasis {
    pub fn new(cols: usize) -> Self {
        RowBasis {
            cols,
            rows: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    fn reduce(&self, row: &mut [u64]) {
        for (pivot, basis_row) in &self.rows {
            let factor = row[*pivot];
            if factor != 0 {
                for (x, &b) in row.iter_mut().zip(basis_row) {
                    *x = fsub(*x, fmul(factor, b));
                }
            }
        }
    }

    /// Insert a row; returns true when it enlarged the span. The basis is
    /// kept fully reduced (every pivot column is zero in all other rows), so
    /// a single reduction pass decides membership exactly.
    pub fn insert(&mut self, mut row: Vec<u64>) -> bool {
        assert_eq!(row.len(), self.cols);
        self.reduce(&mut row);
        match row.iter().position(|&x| x != 0) {
            None => false,
            Some(pivot) => {
                let inv = finv(row[pivot]);
                for x in &mut row {
                    *x = fmul(*x, inv);
                }
                for (_, existing) in &mut self.rows {
                    let factor = existing[pivot];
                    if factor != 0 {
                        for (x, &b) in existing.iter_mut().zip(&row) {
                            *x = fsub(*x, fmul(factor, b));
                        }
                    }
                }
                let at = self.rows.partition_point(|(p, _)| *p < pivot);
                self.rows.insert(at, (pivot, row));
                true
            }
        }
    }

    /// Is `row` in the span?
    pub fn contains(&self, row: &[u64]) -> bool {
        let mut scratch = row.to_vec();
        self.reduce(&mut scratch);
        scratch.iter().all(|&x| x == 0)
    }

    /// Is the unit row `e_index` in the span?
    pub fn contains_unit(&self, index: usize) -> bool {
        let mut unit = vec![0u64; self.cols];
        unit[index] = 1;
        self.contains(&unit)
    }
}

/// Block lower-staircase cumulative generator: the slot-`t` block has
/// `rows_per_slot` rows, uniformly random and nonzero on the first
/// `widths[t-1]` columns. `widths` must be nondecreasing (storage only grows).
pub fn build_cumulative_generator(
    rng: &mut impl rand::Rng,
    slots: usize,
    rows_per_slot: usize,
    widths: &[usize],
) -> FieldMatrix {
    assert_eq!(widths.len(), slots);
    debug_assert!(widths.windows(2).all(|w| w[0] <= w[1]));
    let cols = widths.last().copied().unwrap_or(0);
    let mut g = FieldMatrix::zeros(slots * rows_per_slot, cols);
    for (t, &width) in widths.iter().enumerate() {
        for r in 0..rows_per_slot {
            for c in 0..width {
                g.set(t * rows_per_slot + r, c, rng.gen_range(1..FIELD_PRIME));
            }
        }
    }
    g
}

/// Keep the row blocks of delivered slots only.
pub fn receiver_from_generator(
    g: &FieldMatrix,
    rows_per_slot: usize,
    delivered: &[bool],
) -> FieldMatrix {
    assert_eq!(delivered.len() * rows_per_slot, g.rows);
    let kept = delivered.iter().filter(|&&d| d).count();
    let mut h = FieldMatrix::zeros(kept * rows_per_slot, g.cols);
    let mut out = 0;
    for (t, &d) in delivered.iter().enumerate() {
        if d {
            for r in 0..rows_per_slot {
                let row = g.row(t * rows_per_slot + r).to_vec();
                h.data[out * g.cols..(out + 1) * g.cols].copy_from_slice(&row);
                out += 1;
            }
        }
    }
    h
}

/// Per-hop generator/receiver construction and their exact composition into
/// the destination's overall cumulative receiver matrix.
///
/// `erased[l][t-1]` gives the erasure flag of link `l` at slot `t`.
///
/// By default intermediate hops use packet size `k_per_slot * slots`, large
/// enough that a single delivered packet always spans the sender's whole
/// storage: then the last hop is the unique equation bottleneck, which is the
/// regime the debt analysis describes. `packet_sizes` overrides every hop
/// (last included) to probe narrow intermediate packets; with, say, all hops
/// at `n_dest`, a long enough first-hop burst makes the upstream cut bind and
/// the exact rank falls behind the debt prediction.
pub fn overall_receiver(
    cfg: &NetworkConfig,
    erased: &[Vec<bool>],
    seed: u64,
    packet_sizes: Option<&[usize]>,
) -> FieldMatrix {
    let hops = cfg.hops;
    assert_eq!(erased.len(), hops);
    let slots = erased[0].len();
    let sizes: Vec<usize> = match packet_sizes {
        Some(s) => s.to_vec(),
        None => {
            let wide = cfg.k_per_slot as usize * slots;
            let mut s = vec![wide; hops];
            s[hops - 1] = cfg.n_dest as usize;
            s
        }
    };
    let mut product: Option<FieldMatrix> = None;
    // Width of node l's storage per slot: the source grows by k_per_slot
    // every slot, a relay by the upstream packet size per delivered slot.
    let mut upstream_widths: Vec<usize> =
        (1..=slots).map(|t| t * cfg.k_per_slot as usize).collect();
    for l in 0..hops {
        let mut rng = field_rng(seed, l);
        let g = build_cumulative_generator(&mut rng, slots, sizes[l], &upstream_widths);
        let delivered: Vec<bool> = erased[l].iter().map(|&e| !e).collect();
        let h = receiver_from_generator(&g, sizes[l], &delivered);
        product = Some(match product {
            None => h,
            Some(p) => h.matmul(&p),
        });
        let mut count = 0usize;
        upstream_widths = delivered
            .iter()
            .map(|&d| {
                count += usize::from(d);
                count * sizes[l]
            })
            .collect();
    }
    product.expect("at least one hop")
}

/// Exact decodability of symbol `symbol` (0-based within the slot) of source
/// slot `slot`, given the overall receiver matrix built through `slot + delta`.
pub fn is_delta_decodable(h: &FieldMatrix, slot: u64, symbol: usize, k_per_slot: u64) -> bool {
    let mut basis = RowBasis::new(h.cols);
    for r in 0..h.rows {
        basis.insert(h.row(r).to_vec());
    }
    basis.contains_unit(((slot - 1) * k_per_slot) as usize + symbol)
}

#[derive(Debug, Clone, Serialize)]
pub struct MismatchRecord {
    pub instance: u64,
    pub slot: u64,
    pub debt_decodable: bool,
    pub rank_decodable: bool,
    /// Erasure pattern of the instance, one line per slot.
    pub pattern: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossValidationReport {
    pub instances: u64,
    pub compared_slots: u64,
    pub mismatched_slots: u64,
    /// Instances with at least one mismatch; candidates for a generator
    /// matrix that failed the generic-rank condition.
    pub gmds_suspects: u64,
    pub mismatches: Vec<MismatchRecord>,
}

/// Run both classifiers over `n_seeds` random instances (or one scripted
/// pattern) and count per-slot disagreements.
///
/// Only slots whose round completes within the horizon and whose deadline
/// also falls inside it are compared; later slots are still pending and have
/// no ground truth either way.
pub fn cross_validate(
    cfg: &NetworkConfig,
    horizon: u64,
    n_seeds: u64,
    pattern: Option<&[u32]>,
    packet_sizes: Option<&[usize]>,
) -> CrossValidationReport {
    use rayon::prelude::*;
    let instances: Vec<u64> = (0..n_seeds.max(1)).collect();
    let per_instance: Vec<(u64, u64, Vec<MismatchRecord>)> = instances
        .par_iter()
        .map(|&inst| {
            let bits: Vec<u32> = match pattern {
                Some(p) => p.to_vec(),
                None => {
                    let mut src = crate::debt::IidErasures::new(&cfg.q, shard_seed(cfg.seed, inst));
                    use crate::debt::ErasureSource;
                    (0..horizon).map(|_| src.next_slot()).collect()
                }
            };
            validate_instance(cfg, &bits, inst, packet_sizes)
        })
        .collect();
    let mut compared = 0;
    let mut mismatched = 0;
    let mut suspects = 0;
    let mut mismatches = Vec::new();
    for (c, m, mut recs) in per_instance {
        compared += c;
        mismatched += m;
        suspects += u64::from(m > 0);
        mismatches.append(&mut recs);
    }
    CrossValidationReport {
        instances: n_seeds.max(1),
        compared_slots: compared,
        mismatched_slots: mismatched,
        gmds_suspects: suspects,
        mismatches,
    }
}

fn validate_instance(
    cfg: &NetworkConfig,
    bits: &[u32],
    instance: u64,
    packet_sizes: Option<&[usize]>,
) -> (u64, u64, Vec<MismatchRecord>) {
    let horizon = bits.len() as u64;
    // Debt-side prediction per decoded slot.
    let mut predicted: Vec<(u64, bool)> = Vec::new();
    let source = ScriptedErasures::new(bits.to_vec());
    for round in RoundIter::for_config(cfg, source, horizon) {
        let window = decodable_window(&round, cfg.delta);
        for s in round.first_pending_slot..round.first_pending_slot + round.decoded_slots {
            if s + cfg.delta <= horizon {
                let ok = window.is_some_and(|(lo, hi)| (lo..=hi).contains(&s));
                predicted.push((s, ok));
            }
        }
    }
    if predicted.is_empty() {
        return (0, 0, Vec::new());
    }

    let erased: Vec<Vec<bool>> = (0..cfg.hops)
        .map(|l| bits.iter().map(|&b| b >> l & 1 == 1).collect())
        .collect();
    let h = overall_receiver(cfg, &erased, shard_seed(cfg.seed, instance), packet_sizes);
    // Row blocks of the overall matrix follow delivered last-hop slots in
    // ascending order; feed them into the basis as the deadline advances.
    let last_delivered: Vec<u64> = (1..=horizon)
        .filter(|&t| !erased[cfg.hops - 1][(t - 1) as usize])
        .collect();
    let n = cfg.n_dest as usize;
    let mut basis = RowBasis::new(h.cols);
    let mut fed_blocks = 0usize;
    let mut mismatches = Vec::new();
    let mut compared = 0u64;
    predicted.sort_unstable();
    for &(slot, debt_ok) in &predicted {
        let deadline = slot + cfg.delta;
        while fed_blocks < last_delivered.len() && last_delivered[fed_blocks] <= deadline {
            for r in 0..n {
                basis.insert(h.row(fed_blocks * n + r).to_vec());
            }
            fed_blocks += 1;
        }
        let rank_ok = (0..cfg.k_per_slot as usize)
            .all(|k| basis.contains_unit(((slot - 1) * cfg.k_per_slot) as usize + k));
        compared += 1;
        if rank_ok != debt_ok {
            mismatches.push(MismatchRecord {
                instance,
                slot,
                debt_decodable: debt_ok,
                rank_decodable: rank_ok,
                pattern: bits
                    .iter()
                    .map(|b| {
                        (0..cfg.hops)
                            .map(|l| if b >> l & 1 == 1 { "1" } else { "0" })
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect(),
            });
        }
    }
    (compared, mismatches.len() as u64, mismatches)
}
