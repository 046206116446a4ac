//! Renewal analysis: fundamental-matrix solves, the one-round kernel, the
//! stationary renewal distribution and the round-length distribution.
//!
//! `(I - tphiphi)` is solved iteratively (the kernel is sub-stochastic with
//! spectral radius below one for any in-capacity config, so the Neumann
//! iteration converges geometrically); the dense inverse is never formed and
//! powers of the fundamental matrix are evaluated as repeated solves.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::model::{NetworkConfig, OverflowMode};
use crate::sparse::CsrMatrix;
use crate::transition::{transition_set_for, TransitionOptions, TransitionSet};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("fundamental solve did not converge after {iterations} iterations (last step {last_step:.3e}); the config is at or over capacity")]
    SingularSystem { iterations: usize, last_step: f64 },
    #[error("debt kernel is not contracting (||T^256 1||_inf = {margin}); the config is at or over capacity")]
    NotContracting { margin: f64 },
    #[error("stationary solve is ill-conditioned: fixed-point residual {residual:.3e} exceeds {threshold:.3e}")]
    IllConditioned { residual: f64, threshold: f64 },
    #[error(transparent)]
    Band(#[from] crate::band::BandError),
}

/// `||T^256 1||_inf`; below one iff every state drains to a decode within
/// 256 slots with positive probability mass retained nowhere.
pub fn contraction_margin(t: &CsrMatrix) -> f64 {
    let mut v = vec![1.0; t.nrows()];
    for _ in 0..256 {
        v = t.mul_vec(&v);
    }
    v.iter().fold(0.0f64, |a, &b| a.max(b))
}

/// Iterative solver for `(I - T) x = b` and `y (I - T) = b`.
pub struct FundamentalSolver<'a> {
    t: &'a CsrMatrix,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl<'a> FundamentalSolver<'a> {
    pub fn new(t: &'a CsrMatrix) -> Self {
        FundamentalSolver {
            t,
            rel_tol: 1e-13,
            max_iter: 5_000_000,
        }
    }

    fn scale(&self, b: &[f64]) -> f64 {
        b.iter().fold(1.0f64, |a, &x| a.max(x.abs()))
    }

    /// Solve `(I - T) x = b`.
    pub fn right_solve(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let tol = self.rel_tol * self.scale(b);
        let mut x = b.to_vec();
        for it in 0..self.max_iter {
            let mut y = self.t.mul_vec(&x);
            let mut step = 0.0f64;
            for i in 0..y.len() {
                y[i] += b[i];
                step = step.max((y[i] - x[i]).abs());
            }
            // y - x is the exact residual b - (I - T) x of the previous iterate.
            x = y;
            if step <= tol {
                return Ok(x);
            }
            let _ = it;
        }
        Err(SolverError::SingularSystem {
            iterations: self.max_iter,
            last_step: f64::NAN,
        })
    }

    /// Solve `y (I - T) = b` for a row vector.
    pub fn left_solve(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let tol = self.rel_tol * self.scale(b);
        let mut x = b.to_vec();
        for _ in 0..self.max_iter {
            let mut y = self.t.vec_mul(&x);
            let mut step = 0.0f64;
            for i in 0..y.len() {
                y[i] += b[i];
                step = step.max((y[i] - x[i]).abs());
            }
            x = y;
            if step <= tol {
                return Ok(x);
            }
        }
        Err(SolverError::SingularSystem {
            iterations: self.max_iter,
            last_step: f64::NAN,
        })
    }

    /// Solve `(I - T) X = B` column-wise for a dense right-hand side.
    pub fn right_solve_dense(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>, SolverError> {
        let tol = self.rel_tol * b.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
        let mut x = b.clone();
        let max_iter = 200_000;
        for _ in 0..max_iter {
            let mut y = self.t.mul_dense(&x);
            y += b;
            let step = (&y - &x).abs().max();
            x = y;
            if step <= tol {
                return Ok(x);
            }
        }
        Err(SolverError::SingularSystem {
            iterations: max_iter,
            last_step: f64::NAN,
        })
    }
}

/// Everything the error-probability assembly needs about one config.
pub struct RenewalModel {
    pub cfg: NetworkConfig,
    pub ts: TransitionSet,
    /// One-round kernel `t00 + t0phi A tphi0`, materialized when the state
    /// space is small enough; applied matrix-free otherwise.
    t_rr: Option<DMatrix<f64>>,
    /// Stationary renewal distribution over the hidden states.
    pub pi: Vec<f64>,
    /// `||pi T_rr - pi||_inf`.
    pub pi_residual: f64,
    pub contraction: f64,
}

/// Above these sizes the one-round kernel stays matrix-free.
const MATERIALIZE_HIDDEN_LIMIT: usize = 1024;
const MATERIALIZE_WORK_LIMIT: usize = 4_000_000;
/// Largest state space the stacked least-squares solve is used for; beyond
/// it power iteration is both faster and better conditioned.
const LEAST_SQUARES_LIMIT: usize = 400;

impl RenewalModel {
    pub fn build(cfg: &NetworkConfig) -> Result<Self, SolverError> {
        Self::build_with(cfg, TransitionOptions::default())
    }

    pub fn build_with(cfg: &NetworkConfig, opts: TransitionOptions) -> Result<Self, SolverError> {
        let ts = transition_set_for(cfg, opts)?;
        Self::from_transitions(cfg.clone(), ts)
    }

    pub fn from_transitions(cfg: NetworkConfig, ts: TransitionSet) -> Result<Self, SolverError> {
        let margin = contraction_margin(&ts.tphiphi);
        if margin >= 1.0 {
            return Err(SolverError::NotContracting { margin });
        }
        let hidden = ts.hidden;
        let materialize =
            hidden <= MATERIALIZE_HIDDEN_LIMIT && ts.phi_dim() * hidden <= MATERIALIZE_WORK_LIMIT;
        let t_rr = if materialize {
            let solver = FundamentalSolver::new(&ts.tphiphi);
            let x = solver.right_solve_dense(&ts.tphi0.to_dense())?;
            let mut rr = ts.t00.to_dense();
            rr += ts.t0phi.mul_dense(&x);
            Some(rr)
        } else {
            None
        };
        let mut model = RenewalModel {
            cfg,
            ts,
            t_rr,
            pi: Vec::new(),
            pi_residual: f64::NAN,
            contraction: margin,
        };
        model.solve_stationary()?;
        Ok(model)
    }

    pub fn solver(&self) -> FundamentalSolver<'_> {
        FundamentalSolver::new(&self.ts.tphiphi)
    }

    pub fn one_round_kernel(&self) -> Option<&DMatrix<f64>> {
        self.t_rr.as_ref()
    }

    /// `x T_rr` for a row vector, materialized or not.
    pub fn apply_rr_left(&self, x: &[f64]) -> Result<Vec<f64>, SolverError> {
        if let Some(rr) = &self.t_rr {
            let xv = DVector::from_column_slice(x);
            let y = rr.tr_mul(&xv);
            return Ok(y.as_slice().to_vec());
        }
        let mut y = self.ts.t00.vec_mul(x);
        let mid = self.solver().left_solve(&self.ts.t0phi.vec_mul(x))?;
        for (yc, v) in y.iter_mut().zip(self.ts.tphi0.vec_mul(&mid)) {
            *yc += v;
        }
        Ok(y)
    }

    /// Solve the stacked stationary system by least squares (one of the
    /// fixed-point equations is redundant for a stochastic kernel, and under
    /// `Drop` overflow the kernel is slightly sub-stochastic, which least
    /// squares absorbs); falls back to power iteration when the kernel is
    /// not materialized.
    fn solve_stationary(&mut self) -> Result<(), SolverError> {
        let hidden = self.ts.hidden;
        let ls_kernel = self.t_rr.as_ref().filter(|_| hidden <= LEAST_SQUARES_LIMIT);
        let pi = if let Some(rr) = ls_kernel {
            let mut m = DMatrix::zeros(hidden + 1, hidden);
            for i in 0..hidden {
                for j in 0..hidden {
                    m[(i, j)] = rr[(j, i)] - if i == j { 1.0 } else { 0.0 };
                }
            }
            for j in 0..hidden {
                m[(hidden, j)] = 1.0;
            }
            let mut b = DVector::zeros(hidden + 1);
            b[hidden] = 1.0;
            let svd = m.svd(true, true);
            let sol = svd
                .solve(&b, 1e-14)
                .map_err(|_| SolverError::IllConditioned {
                    residual: f64::INFINITY,
                    threshold: 1e-6,
                })?;
            sol.as_slice().to_vec()
        } else {
            vec![1.0 / hidden as f64; hidden]
        };

        let mut pi: Vec<f64> = pi.into_iter().map(|v| v.max(0.0)).collect();
        let total: f64 = pi.iter().sum();
        for v in &mut pi {
            *v /= total;
        }
        // Fixed-point refinement. Starting from the least-squares solution
        // this converges in a handful of steps and scrubs off the dense
        // solver's own error floor; without a materialized kernel it carries
        // the whole solve.
        for _ in 0..50_000 {
            let mut next = self.apply_rr_left(&pi)?;
            let total: f64 = next.iter().sum();
            for v in &mut next {
                *v /= total;
            }
            let step = pi
                .iter()
                .zip(&next)
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            pi = next;
            if step < 1e-15 {
                break;
            }
        }
        let applied = self.apply_rr_left(&pi)?;
        let residual = pi
            .iter()
            .zip(&applied)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        // Under Drop overflow the one-round kernel leaks the per-round
        // truncated mass, which bounds how small the fixed-point residual can
        // possibly be; its row deficit includes leakage along whole rounds,
        // not just the first slot.
        let deficit = match self.cfg.overflow_mode {
            OverflowMode::Clamp => 0.0,
            OverflowMode::Drop => {
                let rr_row_sums: Vec<f64> = match &self.t_rr {
                    Some(rr) => (0..hidden).map(|r| rr.row(r).iter().sum()).collect(),
                    None => {
                        let reached = self.solver().right_solve(&self.ts.tphi0.row_sums())?;
                        let via_debt = self.ts.t0phi.mul_vec(&reached);
                        self.ts
                            .t00
                            .row_sums()
                            .iter()
                            .zip(&via_debt)
                            .map(|(a, b)| a + b)
                            .collect()
                    }
                };
                rr_row_sums
                    .iter()
                    .map(|s| (1.0 - s).abs())
                    .fold(0.0f64, f64::max)
            }
        };
        let threshold = 1e-6 + 10.0 * deficit;
        if residual > threshold {
            return Err(SolverError::IllConditioned {
                residual,
                threshold,
            });
        }
        self.pi = pi;
        self.pi_residual = residual;
        Ok(())
    }

    /// Distribution of the round length from the stationary renewal start.
    pub fn round_length_pmf(&self, k_max: usize) -> RoundLengthPmf {
        round_length_pmf(&self.pi, &self.ts, k_max)
    }
}

/// Distribution of the round length, `probs[k-1] = Pr(length = k)`, from an
/// arbitrary start distribution over the hidden states (debt zero). Stops
/// early once both the per-step mass and the surviving mass fall below 1e-14.
pub fn round_length_pmf(start: &[f64], ts: &TransitionSet, k_max: usize) -> RoundLengthPmf {
    assert_eq!(start.len(), ts.hidden);
    let hit_mass = ts.tphi0.row_sums();
    let mut probs = Vec::with_capacity(64);
    let t00_rows = ts.t00.row_sums();
    probs.push(start.iter().zip(&t00_rows).map(|(p, s)| p * s).sum());
    let mut front = ts.t0phi.vec_mul(start);
    let mut cumulative: f64 = probs[0];
    for _ in 2..=k_max {
        let pk: f64 = front.iter().zip(&hit_mass).map(|(f, h)| f * h).sum();
        probs.push(pk);
        cumulative += pk;
        let live: f64 = front.iter().sum();
        if pk < 1e-14 && live < 1e-14 {
            break;
        }
        front = ts.tphiphi.vec_mul(&front);
    }
    RoundLengthPmf {
        tail_mass: (1.0 - cumulative).max(0.0),
        probs,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundLengthPmf {
    /// `probs[k-1] = Pr(round length = k)`.
    pub probs: Vec<f64>,
    /// Mass beyond the last computed length (includes any truncation deficit).
    pub tail_mass: f64,
}

impl RoundLengthPmf {
    pub fn prob(&self, k: usize) -> f64 {
        assert!(k >= 1);
        self.probs.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }
}

/// Default adaptive cap on the round-length expansion.
pub const PMF_K_MAX: usize = 100_000;
