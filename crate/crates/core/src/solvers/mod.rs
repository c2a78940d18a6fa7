//! Outer solvers for the concave problem in `alpha`: projected gradient,
//! analytic center cutting planes, and the exchange method.

mod accpm;
mod exchange;
mod pg;
mod projection;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::objective::{SmoothingConfig, TrainingProblem, Variant};
use crate::proxy::RankOneUpdate;
use crate::refqp::{kkt_bias, solve_for_problem, QpConfig};

pub use accpm::{accpm_solve, analytic_center, LocalizationSet};
pub use exchange::{exchange_solve, exchange_solve_with_state, ExchangeState};
pub use pg::projected_gradient_solve;
pub use projection::{project_onto_feasible, FeasibleBox};

/// Coefficients closer than this (relative to the box) to a bound count as
/// bound when the bias is recovered from a trained model.
pub const BIAS_BOUND_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Stop once the certified duality gap is at most this.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Step numerator `c` in `c / k`; defaults to 5 (10 for the Mercer variant).
    pub step_c: Option<f64>,
    /// Smoothing; defaults to `1e-6 |K0|_F`.
    pub smoothing: Option<SmoothingConfig>,
    /// Iterations between gap evaluations of the projected gradient method.
    pub gap_every: usize,
    /// Localization rows kept by ACCPM; defaults to `3n`.
    pub max_rows: Option<usize>,
    /// Interior-point iteration cap for each exchange master problem.
    pub master_max_iter: usize,
    /// Fixed-kernel solves used for gap bounds.
    pub qp: QpConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gap_tol: 0.1,
            max_iter: 2000,
            step_c: None,
            smoothing: None,
            gap_every: 10,
            max_rows: None,
            master_max_iter: 500,
            qp: QpConfig {
                tol: 1e-8,
                ..QpConfig::default()
            },
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gap_tol >= 0.0) || self.max_iter == 0 || self.gap_every == 0 {
            return Err(Error::validation("gap tolerance must be >= 0 and iteration counts > 0"));
        }
        if let Some(c) = self.step_c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::validation(format!("step constant must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    fn smoothing_for(&self, problem: &TrainingProblem) -> SmoothingConfig {
        self.smoothing.unwrap_or_else(|| SmoothingConfig::auto(&problem.k0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Iteration cap reached before the gap tolerance.
    MaxIterations,
    /// An exchange master problem hit its iteration cap.
    MasterNonConvergence,
    /// The localization set became numerically degenerate above the gap
    /// tolerance.
    Stalled,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::MasterNonConvergence => "master_nonconvergence",
            SolveStatus::Stalled => "stalled",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub upper: f64,
    pub gap: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
}

impl SolverTrace {
    fn push(&mut self, iteration: usize, objective: f64, upper: f64, gap: f64, start: &Instant) {
        debug_assert!(self.records.last().is_none_or(|r| r.iteration < iteration));
        self.records.push(TraceRecord {
            iteration,
            objective,
            upper,
            gap,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    ProjectedGradient,
    Accpm,
    Exchange,
}

impl Solver {
    pub fn solve(self, problem: &TrainingProblem, cfg: &SolverConfig) -> Result<(TrainedModel, SolverTrace)> {
        match self {
            Solver::ProjectedGradient => projected_gradient_solve(problem, cfg),
            Solver::Accpm => accpm_solve(problem, cfg),
            Solver::Exchange => exchange_solve(problem, cfg),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Solver::ProjectedGradient => "pg",
            Solver::Accpm => "accpm",
            Solver::Exchange => "exchange",
        }
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pg" => Ok(Solver::ProjectedGradient),
            "accpm" => Ok(Solver::Accpm),
            "exchange" => Ok(Solver::Exchange),
            _ => Err(Error::validation(format!("unknown solver '{s}'"))),
        }
    }
}

/// Result of training: coefficients, proxy kernel description and bias.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub solver: &'static str,
    pub variant: Variant,
    pub alpha: DVector<f64>,
    pub bias: f64,
    /// Training labels (or SVR targets).
    pub y: Vec<f64>,
    pub c: f64,
    pub rho: f64,
    /// Proxy kernel `(K0 + coef v v^T)_+` on the training set; no projection
    /// for the Mercer variant.
    pub update: RankOneUpdate,
    pub projected: bool,
    /// Exact objective at `alpha`.
    pub objective: f64,
    /// Best certified upper bound on the optimum.
    pub upper_bound: f64,
    pub gap: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl TrainedModel {
    fn build(
        problem: &TrainingProblem,
        solver: &'static str,
        alpha: DVector<f64>,
        objective: f64,
        upper_bound: f64,
        status: SolveStatus,
        iterations: usize,
        qp: &QpConfig,
    ) -> Result<Self> {
        let proxy = problem.proxy(&alpha)?;
        // the fixed-kernel dual on the proxy kernel has alpha as its solution
        // at the optimum; its multiplier is a cleaner bias than one read off
        // an approximate alpha
        let (lo, hi) = problem.bounds();
        let start = alpha.map(|a| a.clamp(lo, hi));
        let qcfg = QpConfig {
            allow_indefinite: true,
            ..*qp
        };
        let bias = match solve_for_problem(problem, &proxy.materialized, Some(&start), &qcfg) {
            Ok(sol) => sol.bias,
            Err(e) => {
                log::warn!("bias solve failed ({e}); using the KKT estimate at alpha");
                kkt_bias(problem, &proxy.materialized, &alpha, BIAS_BOUND_MARGIN)
            }
        };
        Ok(TrainedModel {
            solver,
            variant: problem.variant.clone(),
            bias,
            y: problem.y.clone(),
            c: problem.c,
            rho: problem.rho,
            update: proxy.update(),
            projected: proxy.projected,
            objective,
            upper_bound,
            gap: upper_bound - objective,
            status,
            iterations,
            alpha,
        })
    }
}

/// Tracks the best exact objective; earlier iterates win ties.
struct Best {
    value: f64,
    alpha: DVector<f64>,
}

impl Best {
    fn new(alpha: DVector<f64>, value: f64) -> Self {
        Best { value, alpha }
    }

    fn offer(&mut self, alpha: &DVector<f64>, value: f64) {
        if value > self.value {
            self.value = value;
            self.alpha = alpha.clone();
        }
    }
}
