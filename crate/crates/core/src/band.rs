//! Band-matrix kernels and the nested hidden-state chain.
//!
//! The one-hop kernel `D(i, q, m)` is an `m x m` stochastic matrix with two
//! tagged bands: a *deliver band* (column 0, value `q`, the residual resets)
//! and an *erasure band* (the `+i`-th diagonal, value `1 - q`, the residual
//! grows by the shift). Rows whose shifted target falls past the last column
//! clamp to it, the truncation boundary of an otherwise infinite state
//! space. When `i = 0` both bands meet at the top-left cell; they are kept as
//! two separate tagged entries because every later embedding stage treats the
//! deliver and erasure lineages differently even where the cells coincide.
//!
//! Nesting one kernel per hop produces the joint transition kernel of all
//! residual counts. Each tagged entry carries its full per-hop lineage as a
//! bit string (`1` = delivered), which is what the debt embedding later needs
//! to work out how many unknowns a slot forwards to the destination.

use thiserror::Error;

use crate::model::{flat_index, unflat, NetworkConfig};

/// One-hop band kernel. Bands are tagged, never merged numerically.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    pub size: usize,
    pub shift: usize,
    pub q: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BandError {
    #[error("band shift {shift} is outside [0, {size}]")]
    ShiftOutOfRange { shift: usize, size: usize },
    #[error("nested kernel would hold {entries} tagged entries, budget is {budget}")]
    ProductSpaceTooLarge { entries: usize, budget: usize },
}

impl BandMatrix {
    pub fn new(shift: usize, q: f64, size: usize) -> Result<Self, BandError> {
        if shift > size {
            return Err(BandError::ShiftOutOfRange { shift, size });
        }
        assert!((0.0..=1.0).contains(&q), "probability out of range");
        assert!(size >= 1);
        Ok(BandMatrix { size, shift, q })
    }

    /// Deliver-band entry of row `r`: always column 0.
    pub fn deliver(&self, _r: usize) -> (usize, f64) {
        (0, self.q)
    }

    /// Erasure-band entry of row `r`, clamped at the last column.
    pub fn erase(&self, r: usize) -> (usize, f64) {
        ((r + self.shift).min(self.size - 1), 1.0 - self.q)
    }

    /// Numeric matrix with overlapping bands summed (for inspection/tests).
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![0.0; self.size]; self.size];
        for (r, row) in rows.iter_mut().enumerate() {
            let (dc, dv) = self.deliver(r);
            row[dc] += dv;
            let (ec, ev) = self.erase(r);
            row[ec] += ev;
        }
        rows
    }
}

/// 1-based position (from the left) of the rightmost `0`; `0` if none.
pub fn last_zero_position(bits: &str) -> usize {
    bits.rfind('0').map_or(0, |i| i + 1)
}

/// Same on a packed band sequence of length `len` (leftmost hop = highest bit).
pub(crate) fn last_zero_pos(seq: u32, len: usize) -> usize {
    for pos in (1..=len).rev() {
        if seq >> (len - pos) & 1 == 0 {
            return pos;
        }
    }
    0
}

/// A tagged entry of the nested kernel: target column, per-hop band lineage,
/// numeric probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedEntry {
    pub col: usize,
    pub bands: u32,
    pub value: f64,
}

/// Joint transition kernel of the residual counts over the product space
/// `m[0] * ... * m[hops-1]`, with every nonzero entry tagged by its band
/// sequence. Overlapping cells stay distinct entries.
#[derive(Debug, Clone)]
pub struct LabeledKernel {
    dims: Vec<usize>,
    hops: usize,
    rows: Vec<Vec<TaggedEntry>>,
}

impl LabeledKernel {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, r: usize) -> &[TaggedEntry] {
        &self.rows[r]
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &TaggedEntry)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |e| (r, e)))
    }

    /// Band sequence of an entry as a bit string, hop 0 leftmost.
    pub fn band_string(&self, entry: &TaggedEntry) -> String {
        (0..self.hops)
            .map(|l| {
                if entry.bands >> (self.hops - 1 - l) & 1 == 1 {
                    '1'
                } else {
                    '0'
                }
            })
            .collect()
    }

    /// Debug dump, one line per tagged entry:
    /// `row-tuple | col-tuple | band-bits | value`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (r, row) in self.rows.iter().enumerate() {
            let rt = unflat(r, &self.dims);
            let mut sorted: Vec<&TaggedEntry> = row.iter().collect();
            sorted.sort_by_key(|e| (e.col, e.bands));
            for e in sorted {
                let ct = unflat(e.col, &self.dims);
                out.push_str(&format!(
                    "{} | {} | {} | {:.16e}\n",
                    tuple_str(&rt),
                    tuple_str(&ct),
                    self.band_string(e),
                    e.value
                ));
            }
        }
        out
    }
}

fn tuple_str(t: &[usize]) -> String {
    let inner: Vec<String> = t.iter().map(|d| d.to_string()).collect();
    format!("({})", inner.join(","))
}

/// Default cap on tagged entries of the nested kernel.
pub const DEFAULT_ENTRY_BUDGET: usize = 1 << 26;

/// Build the fully nested hidden-state kernel for `cfg.hops` hops.
///
/// Stage 0 is `D(1, q[0], m[0])`: a delivered slot clears the source residual,
/// an erased one grows it by the fresh arrival. Each later hop `l` expands
/// every tagged entry with `D(s, q[l], m[l])`, where the shift `s` counts the
/// residuals the entry's lineage pushes onto node `l` this slot: everything
/// after the last erased hop (plus the fresh arrival when no hop erased), and
/// nothing when hop `l-1` itself erased.
pub fn nest_hidden_chain(cfg: &NetworkConfig) -> Result<LabeledKernel, BandError> {
    nest_hidden_chain_with_budget(cfg, DEFAULT_ENTRY_BUDGET)
}

pub fn nest_hidden_chain_with_budget(
    cfg: &NetworkConfig,
    budget: usize,
) -> Result<LabeledKernel, BandError> {
    let dims = &cfg.m;
    let total_entries = cfg.hidden_states() << cfg.hops;
    if total_entries > budget {
        return Err(BandError::ProductSpaceTooLarge {
            entries: total_entries,
            budget,
        });
    }

    let first = BandMatrix::new(1, cfg.q[0], dims[0])?;
    let mut kernel = LabeledKernel {
        dims: vec![dims[0]],
        hops: 1,
        rows: (0..dims[0])
            .map(|d0| {
                let (dc, dv) = first.deliver(d0);
                let (ec, ev) = first.erase(d0);
                vec![
                    TaggedEntry {
                        col: dc,
                        bands: 1,
                        value: dv,
                    },
                    TaggedEntry {
                        col: ec,
                        bands: 0,
                        value: ev,
                    },
                ]
            })
            .collect(),
    };

    for (hop, (&m_next, &q_next)) in dims.iter().zip(&cfg.q).enumerate().skip(1) {
        let prev_dims = kernel.dims.clone();
        let mut next_dims = prev_dims.clone();
        next_dims.push(m_next);
        let next_states: usize = next_dims.iter().product();
        let mut rows: Vec<Vec<TaggedEntry>> = vec![Vec::new(); next_states];

        for (r, row) in kernel.rows.iter().enumerate() {
            let d = unflat(r, &prev_dims);
            for entry in row {
                let z = last_zero_pos(entry.bands, hop);
                let shift = if z == 0 {
                    1 + d.iter().sum::<usize>()
                } else {
                    d[z..].iter().sum::<usize>()
                };
                // Shifts past the size produce the same all-last-column
                // erasure band as shift == size.
                let band = BandMatrix::new(shift.min(m_next), q_next, m_next)?;
                for dn in 0..m_next {
                    let new_row = r * m_next + dn;
                    let (dc, dv) = band.deliver(dn);
                    rows[new_row].push(TaggedEntry {
                        col: entry.col * m_next + dc,
                        bands: entry.bands << 1 | 1,
                        value: entry.value * dv,
                    });
                    let (ec, ev) = band.erase(dn);
                    rows[new_row].push(TaggedEntry {
                        col: entry.col * m_next + ec,
                        bands: entry.bands << 1,
                        value: entry.value * ev,
                    });
                }
            }
        }
        kernel = LabeledKernel {
            dims: next_dims,
            hops: hop + 1,
            rows,
        };
        debug_assert!(rows_stochastic(&kernel));
    }
    Ok(kernel)
}

fn rows_stochastic(k: &LabeledKernel) -> bool {
    k.rows.iter().all(|row| {
        let s: f64 = row.iter().map(|e| e.value).sum();
        (s - 1.0).abs() < 1e-12
    })
}

/// Normalized unknowns a tagged entry forwards to the destination when its
/// last hop delivers: the residuals behind the last erased hop never move
/// this slot, everything after it does, plus the fresh arrival when no hop
/// erased at all.
pub fn forwarded_unknowns(row_tuple: &[usize], bands: u32, hops: usize) -> u64 {
    let z = last_zero_pos(bands, hops);
    if z == 0 {
        1 + row_tuple.iter().map(|&d| d as u64).sum::<u64>()
    } else {
        row_tuple[z..].iter().map(|&d| d as u64).sum()
    }
}

/// Re-export of `flat_index` for callers assembling joint rows by hand.
pub fn joint_index(d: &[usize], m: &[usize]) -> usize {
    flat_index(d, m).expect("state within caps")
}
