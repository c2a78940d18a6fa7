//! Fixed-kernel dual solvers (SMO) for SVM, SVR and one-class problems,
//! duality-gap bounds for the kernel-learning objective, and prediction.
//!
//! All three duals are solved in the common form
//!
//! ```text
//! min 1/2 a^T Q a + p^T a   s.t.  s^T a = delta,  0 <= a_i <= U_i,  s_i = +-1
//! ```
//!
//! with maximal-violating-pair working sets and second-order pair selection.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::objective::{direct_objective_with, TrainingProblem, Variant};
use crate::symlin::{eig, SymmetricMatrix};

/// Curvature floor for pairs with non-positive `Q_ii + Q_jj -+ 2 Q_ij`.
const TAU: f64 = 1e-12;

/// Relative tolerance of the PSD precondition.
const PSD_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpConfig {
    /// Stop when the maximal KKT violation drops to this value.
    pub tol: f64,
    /// Pair updates before giving up; 0 picks `max(1e7, 100 n)`.
    pub max_iter: usize,
    /// Skip the PSD check. SMO then only finds a stationary point.
    pub allow_indefinite: bool,
}

impl Default for QpConfig {
    fn default() -> Self {
        QpConfig {
            tol: 1e-6,
            max_iter: 0,
            allow_indefinite: false,
        }
    }
}

/// Multipliers of the dual QP recovered from the SMO gradient: `nu` for the
/// equality, `lower`/`upper` for the bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct DualCertificate {
    pub nu: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Objective of the Lagrange dual at these multipliers, in the same
    /// (maximization) orientation as [`QpSolution::objective`]; never below it.
    pub dual_bound: f64,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    /// Coefficients; for SVR the signed difference `a+ - a-`.
    pub alpha: DVector<f64>,
    /// Optimal dual value (the performance measure for classification).
    pub objective: f64,
    /// Offset added to the decision function.
    pub bias: f64,
    pub support_indices: Vec<usize>,
    pub kkt_violation: f64,
    pub iterations: usize,
    pub certificate: DualCertificate,
}

/// `min 1/2 a^T Q a + p^T a` over the box with one equality.
struct DualQp {
    q: DMatrix<f64>,
    p: DVector<f64>,
    s: Vec<f64>,
    ub: Vec<f64>,
    delta: f64,
}

struct SmoState {
    alpha: DVector<f64>,
    grad: DVector<f64>,
    iterations: usize,
    violation: f64,
}

impl DualQp {
    fn n(&self) -> usize {
        self.p.len()
    }

    fn objective(&self, alpha: &DVector<f64>) -> f64 {
        0.5 * alpha.dot(&(&self.q * alpha)) + self.p.dot(alpha)
    }

    fn solve(&self, init: DVector<f64>, cfg: &QpConfig, mut history: Option<&mut Vec<f64>>) -> Result<SmoState> {
        let n = self.n();
        let max_iter = if cfg.max_iter == 0 { (100 * n).max(10_000_000) } else { cfg.max_iter };
        let mut alpha = init;
        let mut grad = &self.q * &alpha + &self.p;
        let mut iterations = 0;
        loop {
            if let Some(h) = history.as_deref_mut() {
                h.push(0.5 * alpha.dot(&(&grad + &self.p)));
            }
            let (pair, violation) = self.select_pair(&alpha, &grad);
            let Some((i, j)) = pair.filter(|_| violation > cfg.tol) else {
                return Ok(SmoState {
                    alpha,
                    grad,
                    iterations,
                    violation: violation.max(0.0),
                });
            };
            if iterations >= max_iter {
                return Err(Error::NonConvergence {
                    solver: "smo",
                    iterations,
                    residual: violation,
                });
            }
            iterations += 1;
            let (old_i, old_j) = (alpha[i], alpha[j]);
            self.update_pair(i, j, &mut alpha, &grad);
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            if di != 0.0 || dj != 0.0 {
                grad.axpy(di, &self.q.column(i), 1.0);
                grad.axpy(dj, &self.q.column(j), 1.0);
            }
        }
    }

    fn is_upper(&self, alpha: &DVector<f64>, t: usize) -> bool {
        alpha[t] >= self.ub[t]
    }

    fn is_lower(&self, alpha: &DVector<f64>, t: usize) -> bool {
        alpha[t] <= 0.0
    }

    /// Maximal violating `i`, then `j` by second-order gain. Returns the pair
    /// (if any candidate exists) and the KKT violation `m(a) - M(a)`.
    fn select_pair(&self, alpha: &DVector<f64>, grad: &DVector<f64>) -> (Option<(usize, usize)>, f64) {
        let n = self.n();
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..n {
            if self.s[t] > 0.0 {
                if !self.is_upper(alpha, t) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    gmax_idx = Some(t);
                }
            } else if !self.is_lower(alpha, t) && grad[t] >= gmax {
                gmax = grad[t];
                gmax_idx = Some(t);
            }
        }
        let Some(i) = gmax_idx else {
            return (None, 0.0);
        };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = None;
        let mut best_gain = f64::INFINITY;
        let qii = self.q[(i, i)];
        for t in 0..n {
            let (grad_diff, quad) = if self.s[t] > 0.0 {
                if self.is_lower(alpha, t) {
                    continue;
                }
                gmax2 = gmax2.max(grad[t]);
                (gmax + grad[t], qii + self.q[(t, t)] - 2.0 * self.s[i] * self.q[(i, t)])
            } else {
                if self.is_upper(alpha, t) {
                    continue;
                }
                gmax2 = gmax2.max(-grad[t]);
                (gmax - grad[t], qii + self.q[(t, t)] + 2.0 * self.s[i] * self.q[(i, t)])
            };
            if grad_diff > 0.0 {
                let gain = -grad_diff * grad_diff / if quad > 0.0 { quad } else { TAU };
                if gain <= best_gain {
                    best_gain = gain;
                    best = Some(t);
                }
            }
        }
        let violation = if gmax2.is_finite() { gmax + gmax2 } else { 0.0 };
        (best.map(|j| (i, j)), violation)
    }

    /// Analytic two-variable update keeping `s^T a` fixed, clipped to the box.
    fn update_pair(&self, i: usize, j: usize, alpha: &mut DVector<f64>, grad: &DVector<f64>) {
        let (ci, cj) = (self.ub[i], self.ub[j]);
        let qij = self.q[(i, j)];
        if self.s[i] != self.s[j] {
            let mut quad = self.q[(i, i)] + self.q[(j, j)] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = self.q[(i, i)] + self.q[(j, j)] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
    }

    /// Equality multiplier: mean of `s_i G_i` over free variables, else the
    /// midpoint of the interval allowed by the bound variables. Variables
    /// within `margin * U_i` of a bound count as bound.
    fn equality_multiplier(&self, alpha: &DVector<f64>, grad: &DVector<f64>, margin: f64) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut sum_free = 0.0;
        let mut n_free = 0usize;
        for t in 0..self.n() {
            let sg = self.s[t] * grad[t];
            let at_upper = alpha[t] >= self.ub[t] * (1.0 - margin);
            let at_lower = alpha[t] <= self.ub[t] * margin;
            if at_upper && !at_lower {
                if self.s[t] < 0.0 {
                    ub = ub.min(sg);
                } else {
                    lb = lb.max(sg);
                }
            } else if at_lower && !at_upper {
                if self.s[t] > 0.0 {
                    ub = ub.min(sg);
                } else {
                    lb = lb.max(sg);
                }
            } else if !at_lower {
                n_free += 1;
                sum_free += sg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else if ub.is_finite() && lb.is_finite() {
            0.5 * (ub + lb)
        } else if ub.is_finite() {
            ub
        } else if lb.is_finite() {
            lb
        } else {
            0.0
        }
    }

    fn certificate(&self, alpha: &DVector<f64>, grad: &DVector<f64>, nu: f64) -> DualCertificate {
        let r = DVector::from_fn(self.n(), |t, _| grad[t] - self.s[t] * nu);
        let lower = r.map(|v| v.max(0.0));
        let upper = r.map(|v| (-v).max(0.0));
        let qa = &self.q * alpha;
        let dual = -0.5 * alpha.dot(&qa) + nu * self.delta - upper.dot(&DVector::from_column_slice(&self.ub));
        DualCertificate {
            nu,
            lower,
            upper,
            dual_bound: -dual,
        }
    }

    fn check_feasible_init(&self, init: &DVector<f64>) -> Result<()> {
        let tol = 1e-9 * self.ub.iter().fold(1.0f64, |m, &u| m.max(u));
        let bad_box = init.iter().zip(&self.ub).any(|(&a, &u)| a < 0.0 || a > u);
        let eq: f64 = init.iter().zip(&self.s).map(|(a, s)| a * s).sum();
        if bad_box || (eq - self.delta).abs() > tol * self.n() as f64 {
            return Err(Error::validation("warm start is not feasible for the dual"));
        }
        Ok(())
    }
}

fn check_kernel(k: &SymmetricMatrix, cfg: &QpConfig) -> Result<()> {
    if cfg.allow_indefinite {
        return Ok(());
    }
    let lmin = eig(k)?.min_value();
    if lmin < -PSD_TOL * k.max_abs().max(1.0) {
        return Err(Error::validation(format!(
            "kernel is indefinite (smallest eigenvalue {lmin:.3e}); the reference QP needs a PSD kernel"
        )));
    }
    Ok(())
}

fn check_tol(cfg: &QpConfig) -> Result<()> {
    if cfg.tol > 0.0 && cfg.tol.is_finite() {
        Ok(())
    } else {
        Err(Error::validation("QP tolerance must be > 0"))
    }
}

fn svm_qp(k: &SymmetricMatrix, y: &[f64], c: f64) -> DualQp {
    let n = y.len();
    DualQp {
        q: DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k[(i, j)]),
        p: DVector::from_element(n, -1.0),
        s: y.to_vec(),
        ub: vec![c; n],
        delta: 0.0,
    }
}

/// Variables `(a+, a-)`, `a = a+ - a-`.
fn svr_qp(k: &SymmetricMatrix, targets: &[f64], c: f64, epsilon_tube: f64) -> DualQp {
    let n = targets.len();
    let sign = |i: usize| if i < n { 1.0 } else { -1.0 };
    DualQp {
        q: DMatrix::from_fn(2 * n, 2 * n, |i, j| sign(i) * sign(j) * k[(i % n, j % n)]),
        p: DVector::from_fn(2 * n, |i, _| epsilon_tube - sign(i) * targets[i % n]),
        s: (0..2 * n).map(sign).collect(),
        ub: vec![c; 2 * n],
        delta: 0.0,
    }
}

fn one_class_qp(k: &SymmetricMatrix, upper: f64) -> DualQp {
    let n = k.dim();
    DualQp {
        q: k.as_matrix().clone(),
        p: DVector::zeros(n),
        s: vec![1.0; n],
        ub: vec![upper; n],
        delta: 1.0,
    }
}

fn finish(qp: &DualQp, st: SmoState, alpha: DVector<f64>) -> QpSolution {
    let nu = qp.equality_multiplier(&st.alpha, &st.grad, 0.0);
    let certificate = qp.certificate(&st.alpha, &st.grad, nu);
    let support_indices = alpha.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(i, _)| i).collect();
    QpSolution {
        objective: -qp.objective(&st.alpha),
        bias: -nu,
        support_indices,
        kkt_violation: st.violation,
        iterations: st.iterations,
        certificate,
        alpha,
    }
}

fn check_labels(k: &SymmetricMatrix, y: &[f64]) -> Result<()> {
    if y.len() != k.dim() {
        return Err(Error::validation(format!("{} labels for kernel of dimension {}", y.len(), k.dim())));
    }
    if y.iter().any(|&l| l != 1.0 && l != -1.0) {
        return Err(Error::validation("labels must be -1 or +1"));
    }
    Ok(())
}

/// `max_{0<=a<=C, a^T y = 0} a^T e - 1/2 a^T Y K Y a`.
pub fn solve_svm_dual(k: &SymmetricMatrix, y: &[f64], c: f64, cfg: &QpConfig) -> Result<QpSolution> {
    solve_svm_dual_from(k, y, c, None, cfg)
}

/// As [`solve_svm_dual`], optionally warm-started from a feasible point.
pub fn solve_svm_dual_from(
    k: &SymmetricMatrix,
    y: &[f64],
    c: f64,
    init: Option<&DVector<f64>>,
    cfg: &QpConfig,
) -> Result<QpSolution> {
    check_labels(k, y)?;
    check_tol(cfg)?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::validation(format!("C must be >= 0, got {c}")));
    }
    check_kernel(k, cfg)?;
    let qp = svm_qp(k, y, c);
    let start = match init {
        Some(a) => {
            qp.check_feasible_init(a)?;
            a.clone()
        }
        None => DVector::zeros(y.len()),
    };
    let st = qp.solve(start, cfg, None)?;
    let alpha = st.alpha.clone();
    Ok(finish(&qp, st, alpha))
}

/// `max_{-C<=a<=C, a^T e = 0} a^T y - eps |a|_1 - 1/2 a^T K a`.
pub fn solve_svr_dual(
    k: &SymmetricMatrix,
    targets: &[f64],
    c: f64,
    epsilon_tube: f64,
    cfg: &QpConfig,
) -> Result<QpSolution> {
    solve_svr_dual_from(k, targets, c, epsilon_tube, None, cfg)
}

pub fn solve_svr_dual_from(
    k: &SymmetricMatrix,
    targets: &[f64],
    c: f64,
    epsilon_tube: f64,
    init: Option<&DVector<f64>>,
    cfg: &QpConfig,
) -> Result<QpSolution> {
    let n = k.dim();
    if targets.len() != n || targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::validation("targets must be finite and match the kernel dimension"));
    }
    check_tol(cfg)?;
    if !(c >= 0.0 && c.is_finite()) || !(epsilon_tube >= 0.0) {
        return Err(Error::validation("SVR needs C >= 0 and epsilon >= 0"));
    }
    check_kernel(k, cfg)?;
    let qp = svr_qp(k, targets, c, epsilon_tube);
    let start = match init {
        Some(a) => {
            let split = DVector::from_fn(2 * n, |i, _| if i < n { a[i].max(0.0) } else { (-a[i - n]).max(0.0) });
            qp.check_feasible_init(&split)?;
            split
        }
        None => DVector::zeros(2 * n),
    };
    let st = qp.solve(start, cfg, None)?;
    let alpha = DVector::from_fn(n, |i, _| st.alpha[i] - st.alpha[i + n]);
    Ok(finish(&qp, st, alpha))
}

/// `max_{0<=a<=1/(nu l), a^T e = 1} -1/2 a^T K a` with `l` the kernel size.
pub fn solve_one_class_dual(k: &SymmetricMatrix, nu: f64, cfg: &QpConfig) -> Result<QpSolution> {
    solve_one_class_dual_from(k, nu, None, cfg)
}

pub fn solve_one_class_dual_from(
    k: &SymmetricMatrix,
    nu: f64,
    init: Option<&DVector<f64>>,
    cfg: &QpConfig,
) -> Result<QpSolution> {
    let n = k.dim();
    check_tol(cfg)?;
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::validation(format!("nu must lie in (0, 1], got {nu}")));
    }
    let upper = 1.0 / (nu * n as f64);
    one_class_with_upper(k, upper, init, cfg)
}

/// One-class dual with an explicit box; infeasible when `upper * l < 1`.
fn one_class_with_upper(
    k: &SymmetricMatrix,
    upper: f64,
    init: Option<&DVector<f64>>,
    cfg: &QpConfig,
) -> Result<QpSolution> {
    let n = k.dim();
    if upper * (n as f64) < 1.0 - 1e-12 {
        return Err(Error::validation("one-class box is too small to sum to one"));
    }
    check_kernel(k, cfg)?;
    let qp = one_class_qp(k, upper);
    let start = match init {
        Some(a) => {
            qp.check_feasible_init(a)?;
            a.clone()
        }
        None => {
            // fill coordinates with the upper bound until the unit mass is used
            let mut a = DVector::zeros(n);
            let mut left: f64 = 1.0;
            for i in 0..n {
                let take = left.min(upper);
                a[i] = take;
                left -= take;
                if left <= 0.0 {
                    break;
                }
            }
            a
        }
    };
    let st = qp.solve(start, cfg, None)?;
    let alpha = st.alpha.clone();
    Ok(finish(&qp, st, alpha))
}

/// Dual objective after each pair update of an SVM solve (for diagnostics).
pub fn svm_dual_history(k: &SymmetricMatrix, y: &[f64], c: f64, cfg: &QpConfig) -> Result<Vec<f64>> {
    check_labels(k, y)?;
    check_tol(cfg)?;
    check_kernel(k, cfg)?;
    let qp = svm_qp(k, y, c);
    let mut hist = Vec::new();
    qp.solve(DVector::zeros(y.len()), cfg, Some(&mut hist))?;
    Ok(hist.into_iter().map(|v| -v).collect())
}

fn problem_qp(problem: &TrainingProblem, k: &SymmetricMatrix) -> DualQp {
    match problem.variant {
        Variant::Svr { epsilon_tube } => svr_qp(k, &problem.y, problem.c, epsilon_tube),
        Variant::OneClass { .. } => one_class_qp(k, problem.c),
        _ => svm_qp(k, &problem.y, problem.c),
    }
}

/// Fixed-kernel dual matching the problem's variant, solved on kernel `k`.
pub fn solve_for_problem(
    problem: &TrainingProblem,
    k: &SymmetricMatrix,
    init: Option<&DVector<f64>>,
    cfg: &QpConfig,
) -> Result<QpSolution> {
    match problem.variant {
        Variant::Svr { epsilon_tube } => solve_svr_dual_from(k, &problem.y, problem.c, epsilon_tube, init, cfg),
        Variant::OneClass { .. } => one_class_with_upper(k, problem.c, init, cfg),
        _ => solve_svm_dual_from(k, &problem.y, problem.c, init, cfg),
    }
}

/// Decision-function offset implied by the KKT conditions of the fixed-kernel
/// dual on `k` at coefficients `alpha`. Coefficients within `margin` (relative
/// to the box) of a bound are treated as bound.
pub fn kkt_bias(problem: &TrainingProblem, k: &SymmetricMatrix, alpha: &DVector<f64>, margin: f64) -> f64 {
    let qp = problem_qp(problem, k);
    let n = problem.n();
    let internal = match problem.variant {
        Variant::Svr { .. } => DVector::from_fn(2 * n, |i, _| if i < n { alpha[i].max(0.0) } else { (-alpha[i - n]).max(0.0) }),
        _ => alpha.clone(),
    };
    let grad = &qp.q * &internal + &qp.p;
    -qp.equality_multiplier(&internal, &grad, margin)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapBound {
    /// `omega(K) + penalty(K)` for the proxy kernel `K` at `alpha`.
    pub upper: f64,
    /// Exact (unsmoothed) objective at `alpha`.
    pub objective: f64,
    pub gap: f64,
}

/// Upper bound on the kernel-learning optimum from the proxy kernel at
/// `alpha`, and the resulting duality gap at `alpha`.
pub fn gap_bound(problem: &TrainingProblem, alpha: &DVector<f64>, cfg: &QpConfig) -> Result<GapBound> {
    let proxy = problem.proxy(alpha)?;
    let k = &proxy.materialized;
    let objective = direct_objective_with(problem, alpha, k);
    // proxy kernels are PSD by construction; the SMO warm start at alpha makes
    // omega(K) >= q_K(alpha) = objective
    let mut qcfg = *cfg;
    qcfg.allow_indefinite = true;
    let (lo, hi) = problem.bounds();
    let start = alpha.map(|a| a.clamp(lo, hi));
    let omega = match solve_for_problem(problem, k, Some(&start), &qcfg) {
        Ok(sol) => sol.objective,
        Err(Error::Validation(_)) => solve_for_problem(problem, k, None, &qcfg)?.objective,
        Err(e) => return Err(e),
    };
    let upper = omega + problem.kernel_penalty(k);
    Ok(GapBound {
        upper,
        objective,
        gap: upper - objective,
    })
}

/// `sum_i alpha_i y_i K[j, i] + bias` for each test row `j` of `cross`.
pub fn decision_values(alpha: &DVector<f64>, y: &[f64], bias: f64, cross: &DMatrix<f64>) -> Result<DVector<f64>> {
    if cross.ncols() != alpha.len() || y.len() != alpha.len() {
        return Err(Error::validation(format!(
            "cross kernel has {} columns for {} training points",
            cross.ncols(),
            alpha.len()
        )));
    }
    let coef = DVector::from_fn(alpha.len(), |i, _| alpha[i] * y[i]);
    Ok(cross * coef + DVector::from_element(cross.nrows(), bias))
}

/// Signs of the decision values (zero maps to +1). With no support vectors
/// every point gets the majority training label.
pub fn predict_labels(alpha: &DVector<f64>, y: &[f64], bias: f64, cross: &DMatrix<f64>) -> Result<Vec<f64>> {
    let values = decision_values(alpha, y, bias, cross)?;
    if alpha.iter().all(|&a| a == 0.0) {
        let pos = y.iter().filter(|&&l| l > 0.0).count();
        let majority = if 2 * pos >= y.len() { 1.0 } else { -1.0 };
        warn!("model has no support vectors; predicting the majority label {majority}");
        return Ok(vec![majority; cross.nrows()]);
    }
    Ok(values.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect())
}
