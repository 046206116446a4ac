//! Joint transition kernels over (hidden residual states x debt levels).
//!
//! Debt level 0 is special: it marks a decode, so the chain is split into
//! four blocks indexed by whether the debt starts and ends at zero:
//! `t00` (0 -> 0), `t0phi` (0 -> positive), `tphiphi` (positive -> positive)
//! and `tphi0` (positive -> 0). Positive levels are `1..debt_cap`, stored
//! with level `g` at joint column `hidden * (debt_cap - 1) + (g - 1)`.
//!
//! For a tagged entry whose last hop erased, the destination sees nothing:
//! the debt is unchanged. When the last hop delivers, the destination gains
//! `K * u` unknowns (`u` the entry's forwarded count, in slots) and `n_dest`
//! equations, so the debt moves by `K * u - n_dest` and is floored at zero.
//! A delivery carrying zero unknowns keeps the debt at zero; by default that
//! mass is routed back into `t00` (`zero_fix`), which restores
//! row-stochasticity; the literal banded construction silently drops it.
//! Debt targets above the cap are dropped or clamped per `overflow_mode`.

use serde::Serialize;
use thiserror::Error;

use crate::band::{forwarded_unknowns, LabeledKernel};
use crate::model::{unflat, NetworkConfig, OverflowMode};
use crate::sparse::{CsrBuilder, CsrMatrix};

/// `n x n` 0/1 matrix with ones on the `+k`-th diagonal; all zero when the
/// whole diagonal falls outside the matrix.
pub fn shifted_identity(k: i64, n: usize) -> CsrMatrix {
    let mut b = CsrBuilder::new(n, n);
    for r in 0..n as i64 {
        let c = r + k;
        if (0..n as i64).contains(&c) {
            b.add(r as usize, c as usize, 1.0);
        }
    }
    b.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransitionOptions {
    /// Route zero-unknown deliveries from debt 0 back into `t00`.
    pub zero_fix: bool,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        TransitionOptions { zero_fix: true }
    }
}

/// The four joint kernels plus the index geometry they share.
#[derive(Debug, Clone)]
pub struct TransitionSet {
    pub t00: CsrMatrix,
    pub t0phi: CsrMatrix,
    pub tphiphi: CsrMatrix,
    pub tphi0: CsrMatrix,
    pub zero_fix_applied: bool,
    pub overflow_mode: OverflowMode,
    /// Hidden product-space size.
    pub hidden: usize,
    /// Number of positive debt levels (`debt_cap - 1`).
    pub levels: usize,
    pub dims: Vec<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransitionError {
    #[error("kernel is nested for {kernel_hops} hops but the config has {cfg_hops}")]
    DimensionMismatch { kernel_hops: usize, cfg_hops: usize },
}

impl TransitionSet {
    pub fn phi_dim(&self) -> usize {
        self.hidden * self.levels
    }

    #[inline]
    pub fn phi_index(&self, hidden: usize, level: usize) -> usize {
        debug_assert!((1..=self.levels).contains(&level));
        hidden * self.levels + (level - 1)
    }
}

pub fn build_transition_set(
    kernel: &LabeledKernel,
    cfg: &NetworkConfig,
    opts: TransitionOptions,
) -> Result<TransitionSet, TransitionError> {
    if kernel.hops() != cfg.hops {
        return Err(TransitionError::DimensionMismatch {
            kernel_hops: kernel.hops(),
            cfg_hops: cfg.hops,
        });
    }
    let hidden = kernel.states();
    let levels = cfg.debt_levels();
    let phi = hidden * levels;
    let k = cfg.k_per_slot as i64;
    let n = cfg.n_dest as i64;

    let mut t00 = CsrBuilder::new(hidden, hidden);
    let mut t0phi = CsrBuilder::new(hidden, phi);
    let mut tphiphi = CsrBuilder::new(phi, phi);
    let mut tphi0 = CsrBuilder::new(phi, hidden);
    let phi_index = |h: usize, level: i64| -> usize { h * levels + (level as usize - 1) };

    for r in 0..hidden {
        let row_tuple = unflat(r, kernel.dims());
        for entry in kernel.row(r) {
            let last_delivered = entry.bands & 1 == 1;
            if !last_delivered {
                // Nothing reaches the destination: debt level is unchanged.
                t00.add(r, entry.col, entry.value);
                for level in 1..=levels as i64 {
                    tphiphi.add(
                        phi_index(r, level),
                        phi_index(entry.col, level),
                        entry.value,
                    );
                }
                continue;
            }
            let u = forwarded_unknowns(&row_tuple, entry.bands, cfg.hops) as i64;
            let step = k * u - n;
            // From debt 0 (counters freshly reset).
            let nd = step;
            if nd <= 0 {
                if u >= 1 || opts.zero_fix {
                    t00.add(r, entry.col, entry.value);
                }
            } else if nd <= levels as i64 {
                t0phi.add(r, phi_index(entry.col, nd), entry.value);
            } else if cfg.overflow_mode == OverflowMode::Clamp {
                t0phi.add(r, phi_index(entry.col, levels as i64), entry.value);
            }
            // From each positive debt level.
            for level in 1..=levels as i64 {
                let nd = level + step;
                if nd <= 0 {
                    tphi0.add(phi_index(r, level), entry.col, entry.value);
                } else if nd <= levels as i64 {
                    tphiphi.add(phi_index(r, level), phi_index(entry.col, nd), entry.value);
                } else if cfg.overflow_mode == OverflowMode::Clamp {
                    tphiphi.add(
                        phi_index(r, level),
                        phi_index(entry.col, levels as i64),
                        entry.value,
                    );
                }
            }
        }
    }

    Ok(TransitionSet {
        t00: t00.finish(),
        t0phi: t0phi.finish(),
        tphiphi: tphiphi.finish(),
        tphi0: tphi0.finish(),
        zero_fix_applied: opts.zero_fix,
        overflow_mode: cfg.overflow_mode,
        hidden,
        levels,
        dims: kernel.dims().to_vec(),
    })
}

/// Build the nested kernel and the transition set in one go.
pub fn transition_set_for(
    cfg: &NetworkConfig,
    opts: TransitionOptions,
) -> Result<TransitionSet, crate::band::BandError> {
    let kernel = crate::band::nest_hidden_chain(cfg)?;
    Ok(build_transition_set(&kernel, cfg, opts).expect("kernel built from the same config"))
}
