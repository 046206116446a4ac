//! Final slot-error probability: sum projectors, the per-round denominator
//! and the five-term numerator.
//!
//! The error count of a round depends on the hidden state only through the
//! residual sum, so the round kernel is compressed onto the sum space
//! (`S = 1 + sum(m[l] - 1)` classes) by a pair of projectors: `Q` aggregates
//! states into their class, `P` expands a class back into the stationary
//! conditional distribution over its member states. Weighting `P` by the
//! stationary distribution is what makes `pi Q P = pi` and keeps the
//! projected kernel consistent with the renewal fixed point; classes with no
//! stationary mass get uniform placeholder weights (they only ever multiply
//! zero mass).

use serde::Serialize;

use crate::model::{unflat, NetworkConfig, RawConfig};
use crate::stationary::{RenewalModel, SolverError, PMF_K_MAX};

/// Projectors between the hidden product space and the residual-sum space.
#[derive(Debug, Clone)]
pub struct SumProjectors {
    /// Residual sum of each hidden state.
    class_of: Vec<usize>,
    /// `P[class_of[s], s]`.
    weights: Vec<f64>,
    members: Vec<Vec<usize>>,
    s_dim: usize,
}

/// `pi Q`: stationary distribution of the residual sum.
pub fn sum_distribution(proj: &SumProjectors, pi: &[f64]) -> Vec<f64> {
    proj.aggregate(pi)
}

pub fn build_sum_projectors(pi: &[f64], cfg: &NetworkConfig) -> SumProjectors {
    let dims = &cfg.m;
    let s_dim = 1 + dims.iter().map(|m| m - 1).sum::<usize>();
    let hidden = cfg.hidden_states();
    assert_eq!(pi.len(), hidden);
    let mut class_of = vec![0usize; hidden];
    let mut members = vec![Vec::new(); s_dim];
    for (s, class) in class_of.iter_mut().enumerate() {
        let j: usize = unflat(s, dims).iter().sum();
        *class = j;
        members[j].push(s);
    }
    let mut class_mass = vec![0.0f64; s_dim];
    for (s, &j) in class_of.iter().enumerate() {
        class_mass[j] += pi[s];
    }
    let weights: Vec<f64> = class_of
        .iter()
        .enumerate()
        .map(|(s, &j)| {
            if class_mass[j] > 0.0 {
                pi[s] / class_mass[j]
            } else {
                1.0 / members[j].len() as f64
            }
        })
        .collect();
    SumProjectors {
        class_of,
        weights,
        members,
        s_dim,
    }
}

impl SumProjectors {
    pub fn s_dim(&self) -> usize {
        self.s_dim
    }

    pub fn class_of(&self, state: usize) -> usize {
        self.class_of[state]
    }

    /// Row vector `x Q`.
    pub fn aggregate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.s_dim];
        for (s, &v) in x.iter().enumerate() {
            out[self.class_of[s]] += v;
        }
        out
    }

    /// Row vector `x P`.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.s_dim);
        let mut out = vec![0.0; self.class_of.len()];
        for (s, &w) in self.weights.iter().enumerate() {
            out[s] = x[self.class_of[s]] * w;
        }
        out
    }

    /// Row `j` of `P` as a dense hidden-space vector.
    pub fn p_row(&self, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.class_of.len()];
        for &s in &self.members[j] {
            out[s] = self.weights[s];
        }
        out
    }

    /// Deadline profile over sum classes: ones through class `delta + 1`,
    /// then decreasing by one per class (truncated to all ones when the sum
    /// space is shorter than the deadline).
    pub fn gamma(&self, delta: u64) -> Vec<f64> {
        (0..self.s_dim)
            .map(|j| 1.0f64.min(delta as f64 + 2.0 - j as f64))
            .collect()
    }

    /// Ramp `diag(0, 1, 2, ...)` applied to a sum-space row.
    pub fn ramp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| v * j as f64).collect()
    }
}

/// Expected decoded slots per round, `pi [t00 + t0phi A (I + A) tphi0] 1`.
pub fn expected_decoded_per_round(model: &RenewalModel) -> Result<f64, SolverError> {
    let ts = &model.ts;
    let solver = model.solver();
    let v0 = ts.tphi0.row_sums();
    let v1 = solver.right_solve(&v0)?;
    let v2 = solver.right_solve(&v1)?;
    let head: f64 = model
        .pi
        .iter()
        .zip(ts.t00.row_sums())
        .map(|(p, s)| p * s)
        .sum();
    let front = ts.t0phi.vec_mul(&model.pi);
    let tail: f64 = front
        .iter()
        .zip(v1.iter().zip(&v2))
        .map(|(f, (a, b))| f * (a + b))
        .sum();
    Ok(head + tail)
}

/// Expected number of deadline-missing slots per round: the five-term
/// expansion of `E{min[(len + alpha - delta - 1)^+, decoded]}`.
///
/// Terms one to three cover rounds longer than the deadline via the
/// fundamental matrix; terms four and five correct for short rounds, slicing
/// the projected round kernels by the residual sum the deadline still admits.
pub fn expected_errors_per_round(
    model: &RenewalModel,
    proj: &SumProjectors,
    delta: u64,
) -> Result<f64, SolverError> {
    let ts = &model.ts;
    let solver = model.solver();
    let s_dim = proj.s_dim();
    let gamma = proj.gamma(delta);
    let pi_sum = proj.aggregate(&model.pi);
    let hit_mass = ts.tphi0.row_sums();
    let t00_mass = ts.t00.row_sums();
    let d2 = delta as usize + 2;

    let power = |mut row: Vec<f64>, times: usize| -> Vec<f64> {
        for _ in 0..times {
            row = ts.tphiphi.vec_mul(&row);
        }
        row
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

    // (1) pi Q P T_rr Q gamma
    let expanded = proj.expand(&pi_sum);
    let after = model.apply_rr_left(&expanded)?;
    let term1 = dot(&proj.aggregate(&after), &gamma);

    // (2) pi Q P t0phi T^(delta+1) A^2 tphi0 Q 1
    let mut row = power(ts.t0phi.vec_mul(&expanded), d2 - 1);
    row = solver.left_solve(&row)?;
    row = solver.left_solve(&row)?;
    let term2 = dot(&row, &hit_mass);

    // (3) pi Q B P t0phi T^(delta+1) A tphi0 Q 1
    let ramped = proj.expand(&proj.ramp(&pi_sum));
    let mut row = power(ts.t0phi.vec_mul(&ramped), d2 - 1);
    row = solver.left_solve(&row)?;
    let term3 = dot(&row, &hit_mass);

    // (4) sum_k pi Q diag(0__{delta+2-k}, ramp) P T^(k) Q 1
    let mut term4 = 0.0;
    for k in 1..=d2 {
        let shifted: Vec<f64> = pi_sum
            .iter()
            .enumerate()
            .map(|(j, &v)| v * (j as f64 - (d2 - k) as f64).max(0.0))
            .collect();
        if shifted.iter().all(|&v| v == 0.0) {
            continue;
        }
        let x = proj.expand(&shifted);
        term4 += if k == 1 {
            dot(&x, &t00_mass)
        } else {
            dot(&power(ts.t0phi.vec_mul(&x), k - 2), &hit_mass)
        };
    }

    // (5) - sum_k (pi Q)[..=delta+1-k] (P T^(k) Q)[..=delta+1-k, :] gamma
    let mut term5 = 0.0;
    for k in 1..=delta as usize + 1 {
        let j_max = (delta as usize + 1 - k).min(s_dim - 1);
        for (j, &mass) in pi_sum.iter().enumerate().take(j_max + 1) {
            if mass == 0.0 {
                continue;
            }
            let row = proj.p_row(j);
            let out = if k == 1 {
                ts.t00.vec_mul(&row)
            } else {
                ts.tphi0.vec_mul(&power(ts.t0phi.vec_mul(&row), k - 2))
            };
            term5 += mass * dot(&proj.aggregate(&out), &gamma);
        }
    }

    Ok(term1 + term2 + term3 + term4 - term5)
}

/// Row-`k` slice of the projected round kernel, `P T^(k) Q`, for validation.
pub fn sum_projected_round_kernel(
    model: &RenewalModel,
    proj: &SumProjectors,
    k: usize,
) -> nalgebra::DMatrix<f64> {
    assert!(k >= 1);
    let ts = &model.ts;
    let s_dim = proj.s_dim();
    let mut out = nalgebra::DMatrix::zeros(s_dim, s_dim);
    for j in 0..s_dim {
        let row = proj.p_row(j);
        let y = if k == 1 {
            ts.t00.vec_mul(&row)
        } else {
            let mut mid = ts.t0phi.vec_mul(&row);
            for _ in 0..k - 2 {
                mid = ts.tphiphi.vec_mul(&mid);
            }
            ts.tphi0.vec_mul(&mid)
        };
        for (col, v) in proj.aggregate(&y).into_iter().enumerate() {
            out[(j, col)] = v;
        }
    }
    out
}

/// Projected one-round kernel `P T_rr Q`.
pub fn sum_projected_one_round(
    model: &RenewalModel,
    proj: &SumProjectors,
) -> Result<nalgebra::DMatrix<f64>, SolverError> {
    let s_dim = proj.s_dim();
    let mut out = nalgebra::DMatrix::zeros(s_dim, s_dim);
    for j in 0..s_dim {
        let y = model.apply_rr_left(&proj.p_row(j))?;
        for (col, v) in proj.aggregate(&y).into_iter().enumerate() {
            out[(j, col)] = v;
        }
    }
    Ok(out)
}

/// Full analytic result with provenance diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryRecord {
    pub p_e: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// Round-length mass beyond the expanded horizon.
    pub tail_mass: f64,
    /// Stationary fixed-point residual.
    pub pi_residual: f64,
    /// Fully resolved input config.
    pub config: RawConfig,
}

/// Assemble the slot error probability for a validated config.
pub fn error_probability(cfg: &NetworkConfig) -> Result<TheoryRecord, SolverError> {
    let model = RenewalModel::build(cfg)?;
    error_probability_for(&model)
}

pub fn error_probability_for(model: &RenewalModel) -> Result<TheoryRecord, SolverError> {
    let proj = build_sum_projectors(&model.pi, &model.cfg);
    let numerator = expected_errors_per_round(model, &proj, model.cfg.delta)?;
    let denominator = expected_decoded_per_round(model)?;
    let pmf = model.round_length_pmf(PMF_K_MAX);
    Ok(TheoryRecord {
        p_e: (numerator / denominator).clamp(0.0, 1.0),
        numerator,
        denominator,
        tail_mass: pmf.tail_mass,
        pi_residual: model.pi_residual,
        config: model.cfg.raw(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_config, OverflowMode, RawConfig};

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
                seed: None,
                slots: None,
            },
            true,
        )
        .unwrap()
    }

    fn fig3(debt_cap: usize, delta: u64) -> NetworkConfig {
        cfg(
            &[0.9, 0.9],
            &[5, 5],
            debt_cap,
            1,
            3,
            delta,
            OverflowMode::Clamp,
        )
    }

    #[test]
    fn projector_uniform_split() {
        let cfg = cfg(&[0.5, 0.5], &[2, 2], 3, 1, 1, 2, OverflowMode::Clamp);
        let pi = vec![0.25; 4];
        let proj = build_sum_projectors(&pi, &cfg);
        // Class 1 holds (0,1) and (1,0), each with conditional weight 1/2.
        let row = proj.p_row(1);
        assert_eq!(row, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn projector_identities() {
        let cfg = fig3(25, 2);
        let model = RenewalModel::build(&cfg).unwrap();
        let proj = build_sum_projectors(&model.pi, &cfg);
        // pi Q P recovers pi.
        let back = proj.expand(&proj.aggregate(&model.pi));
        for (a, b) in back.iter().zip(&model.pi) {
            assert!((a - b).abs() < 1e-10);
        }
        // P Q is the identity on the sum space.
        for j in 0..proj.s_dim() {
            let e = proj.aggregate(&proj.p_row(j));
            for (jj, v) in e.iter().enumerate() {
                let want = if jj == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-10);
            }
        }
        // Rows of P T_rr Q sum to one.
        let projected = sum_projected_one_round(&model, &proj).unwrap();
        for j in 0..proj.s_dim() {
            let s: f64 = projected.row(j).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn point_mass_projector_uses_uniform_placeholders() {
        let cfg = cfg(&[1.0, 1.0], &[3, 3], 4, 1, 3, 2, OverflowMode::Clamp);
        let model = RenewalModel::build(&cfg).unwrap();
        let proj = build_sum_projectors(&model.pi, &cfg);
        let tilde = proj.aggregate(&model.pi);
        assert!((tilde[0] - 1.0).abs() < 1e-12);
        // Empty classes: rows are uniform and still sum to one.
        let row = proj.p_row(2);
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_links_have_zero_error_probability() {
        for delta in [0u64, 3] {
            let cfg = cfg(&[1.0, 1.0], &[4, 4], 6, 1, 3, delta, OverflowMode::Clamp);
            let record = error_probability(&cfg).unwrap();
            assert!(record.numerator.abs() < 1e-12);
            assert!((record.denominator - 1.0).abs() < 1e-10);
            assert!(record.p_e < 1e-12);
        }
    }

    #[test]
    fn all_delivery_denominator_is_one_slot_per_round() {
        let cfg = cfg(&[1.0, 1.0], &[4, 4], 6, 2, 3, 1, OverflowMode::Clamp);
        let model = RenewalModel::build(&cfg).unwrap();
        assert!((expected_decoded_per_round(&model).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn generous_deadline_drives_numerator_to_zero() {
        let cfg = fig3(25, 50);
        let model = RenewalModel::build(&cfg).unwrap();
        let proj = build_sum_projectors(&model.pi, &cfg);
        let num = expected_errors_per_round(&model, &proj, 50).unwrap();
        assert!(num.abs() <= 1e-10, "numerator {num}");
    }

    #[test]
    fn numerator_within_denominator_and_monotone_in_delta() {
        let cfg = fig3(25, 2);
        let model = RenewalModel::build(&cfg).unwrap();
        let proj = build_sum_projectors(&model.pi, &cfg);
        let den = expected_decoded_per_round(&model).unwrap();
        let mut last = f64::INFINITY;
        for delta in 0..=12 {
            let num = expected_errors_per_round(&model, &proj, delta).unwrap();
            assert!(num >= -1e-12 && num <= den + 1e-10);
            assert!(num <= last + 1e-10, "numerator rose at delta {delta}");
            last = num;
        }
    }

    #[test]
    fn renewal_identity_between_denominator_and_pmf() {
        for mode in [OverflowMode::Clamp, OverflowMode::Drop] {
            let cfg = cfg(&[0.9, 0.9], &[5, 5], 25, 1, 3, 2, mode);
            let model = RenewalModel::build(&cfg).unwrap();
            let den = expected_decoded_per_round(&model).unwrap();
            let pmf = model.round_length_pmf(PMF_K_MAX);
            assert!(
                (den - pmf.mean()).abs() <= pmf.tail_mass + 1e-8,
                "denominator {den} vs pmf mean {} (tail {})",
                pmf.mean(),
                pmf.tail_mass
            );
        }
    }
}
