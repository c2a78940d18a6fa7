use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{Best, FeasibleBox, SolveStatus, SolverConfig, SolverTrace, TrainedModel};
use crate::error::{Error, Result};
use crate::objective::{direct_objective_with, TrainingProblem, Variant};
use crate::refqp::{solve_svm_dual_from, QpConfig};
use crate::symlin::{psd_part, SymmetricMatrix};

/// Constraints with slack above this for [`PRUNE_AFTER`] consecutive master
/// solves are dropped.
const PRUNE_SLACK: f64 = 1e-6;
const PRUNE_AFTER: usize = 5;
/// Ratio between the barrier parameter and the surrogate gap.
const BARRIER_MU: f64 = 10.0;
/// Relative surrogate gap and residual that stop the interior-point loop.
const MASTER_TOL: f64 = 1e-10;
/// Relative certified gap below which a master solve counts as converged.
const MASTER_GAP: f64 = 1e-6;

/// Committed kernels of the semi-infinite program and the latest master
/// solution.
#[derive(Clone, Debug)]
pub struct ExchangeState {
    pub kernels: Vec<SymmetricMatrix>,
    /// Upper bound on the current master optimum.
    pub t: f64,
    pub alpha: DVector<f64>,
    /// Master bounds of every solve so far.
    pub master_values: Vec<f64>,
}

/// `q(alpha) = e^T alpha - 1/2 alpha^T Q alpha + r` with `Q = Y K Y` and
/// `r = rho |K - K0|_F^2`.
struct Constraint {
    q: DMatrix<f64>,
    r: f64,
    idle: usize,
}

impl Constraint {
    fn new(problem: &TrainingProblem, k: &SymmetricMatrix) -> Self {
        let y = &problem.y;
        Constraint {
            q: DMatrix::from_fn(y.len(), y.len(), |i, j| y[i] * y[j] * k[(i, j)]),
            r: problem.kernel_penalty(k),
            idle: 0,
        }
    }

    fn value(&self, alpha: &DVector<f64>) -> f64 {
        alpha.sum() - 0.5 * alpha.dot(&(&self.q * alpha)) + self.r
    }
}

struct Master {
    alpha: DVector<f64>,
    /// `min_j q_j(alpha)`.
    value: f64,
    /// Certified upper bound on the master optimum.
    bound: f64,
    converged: bool,
}

/// Inequalities `f_i <= 0` in the order: kernel constraints
/// `t - q_j(alpha)`, then `-alpha_i`, then `alpha_i - C`.
struct Residuals {
    f: DVector<f64>,
    /// `e - Q_j alpha` for each kernel constraint.
    grads: Vec<DVector<f64>>,
    dual: DVector<f64>,
    cent: DVector<f64>,
    primal: f64,
}

impl Residuals {
    fn new(cons: &[Constraint], y: &[f64], c: f64, x: &DVector<f64>, lam: &DVector<f64>, nu: f64, tau: f64) -> Self {
        let n = y.len();
        let p = cons.len();
        let alpha = x.rows(0, n).into_owned();
        let t = x[n];
        let mut f = DVector::zeros(p + 2 * n);
        let mut grads = Vec::with_capacity(p);
        let mut dual = DVector::zeros(n + 1);
        dual[n] = -1.0;
        for (j, k) in cons.iter().enumerate() {
            let g = (&k.q * &alpha).map(|v| 1.0 - v);
            f[j] = t - (alpha.sum() - 0.5 * alpha.dot(&(DVector::from_element(n, 1.0) - &g)) + k.r);
            dual.rows_mut(0, n).axpy(-lam[j], &g, 1.0);
            dual[n] += lam[j];
            grads.push(g);
        }
        for i in 0..n {
            f[p + i] = -alpha[i];
            f[p + n + i] = alpha[i] - c;
            dual[i] += lam[p + n + i] - lam[p + i] + nu * y[i];
        }
        let cent = DVector::from_fn(p + 2 * n, |i, _| -lam[i] * f[i] - 1.0 / tau);
        let primal = y.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
        Residuals { f, grads, dual, cent, primal }
    }

    fn norm(&self) -> f64 {
        (self.dual.norm_squared() + self.cent.norm_squared() + self.primal * self.primal).sqrt()
    }
}

/// `max t  s.t.  q_j(alpha) >= t,  0 <= alpha <= C,  y^T alpha = 0` by a
/// primal-dual interior-point method. The multipliers of the kernel
/// constraints define a convex combination of kernels whose SVM value
/// bounds the master optimum from above.
fn solve_master(
    cons: &[Constraint],
    kernels: &[SymmetricMatrix],
    y: &[f64],
    c: f64,
    start: &DVector<f64>,
    max_iter: usize,
    qp: &QpConfig,
) -> Result<Master> {
    let n = y.len();
    let p = cons.len();
    let m = p + 2 * n;
    let min_q = |a: &DVector<f64>| cons.iter().map(|k| k.value(a)).fold(f64::INFINITY, f64::min);
    let mut x = DVector::zeros(n + 1);
    x.rows_mut(0, n).copy_from(start);
    x[n] = min_q(start) - 1.0;
    let f0 = Residuals::new(cons, y, c, &x, &DVector::zeros(m), 0.0, 1.0).f;
    let mut lam = f0.map(|v| -1.0 / v);
    let mut nu = 0.0;

    for _ in 0..max_iter {
        let eta = -Residuals::new(cons, y, c, &x, &lam, nu, 1.0).f.dot(&lam);
        let tau = BARRIER_MU * m as f64 / eta;
        let r = Residuals::new(cons, y, c, &x, &lam, nu, tau);
        let scale = 1.0 + x[n].abs();
        if eta <= MASTER_TOL * scale && r.dual.norm() <= MASTER_TOL * scale && r.primal.abs() <= MASTER_TOL * scale {
            break;
        }

        let mut h = DMatrix::zeros(n + 2, n + 2);
        let mut rhs = DVector::zeros(n + 2);
        rhs.rows_mut(0, n + 1).copy_from(&(-&r.dual));
        for (j, k) in cons.iter().enumerate() {
            let w = lam[j] / -r.f[j];
            let g = &r.grads[j];
            let mut block = h.view_mut((0, 0), (n, n));
            block += &k.q * lam[j];
            block.ger(w, g, g, 1.0);
            for i in 0..n {
                h[(i, n)] -= w * g[i];
                h[(n, i)] -= w * g[i];
            }
            h[(n, n)] += w;
            // - grad f_j * r_cent_j / f_j with grad f_j = (-g, 1)
            let s = r.cent[j] / r.f[j];
            rhs.rows_mut(0, n).axpy(s, g, 1.0);
            rhs[n] -= s;
        }
        for i in 0..n {
            let (lo, hi) = (p + i, p + n + i);
            h[(i, i)] += lam[lo] / -r.f[lo] + lam[hi] / -r.f[hi];
            rhs[i] += r.cent[lo] / r.f[lo] - r.cent[hi] / r.f[hi];
            h[(i, n + 1)] = y[i];
            h[(n + 1, i)] = y[i];
        }
        rhs[n + 1] = -r.primal;
        let Some(sol) = h.lu().solve(&rhs) else { break };
        let dx = sol.rows(0, n + 1).into_owned();
        let dnu = sol[n + 1];
        let dlam = DVector::from_fn(m, |i, _| {
            let grad_dot = if i < p {
                -r.grads[i].dot(&dx.rows(0, n)) + dx[n]
            } else if i < p + n {
                -dx[i - p]
            } else {
                dx[i - p - n]
            };
            (r.cent[i] - lam[i] * grad_dot) / r.f[i]
        });

        let mut s: f64 = 1.0;
        for i in 0..m {
            if dlam[i] < 0.0 {
                s = s.min(-lam[i] / dlam[i]);
            }
        }
        for i in 0..n {
            if dx[i] < 0.0 {
                s = s.min(-x[i] / dx[i]);
            } else if dx[i] > 0.0 {
                s = s.min((c - x[i]) / dx[i]);
            }
        }
        s *= 0.99;
        let norm0 = r.norm();
        let mut accepted = false;
        while s > 1e-14 {
            let mut xn = &x + &dx * s;
            // t is an epigraph variable: keep it a central distance below the
            // concave constraints instead of shortening the whole step
            let an = xn.rows(0, n).into_owned();
            if an.iter().all(|&v| v > 0.0 && v < c) {
                xn[n] = xn[n].min(min_q(&an) - 1.0 / tau);
            }
            let ln = &lam + &dlam * s;
            let rn = Residuals::new(cons, y, c, &xn, &ln, nu + s * dnu, tau);
            if rn.f.iter().all(|&v| v < 0.0) && rn.norm() <= (1.0 - 0.01 * s) * norm0 {
                x = xn;
                lam = ln;
                nu += s * dnu;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let alpha = x.rows(0, n).into_owned();
    let value = min_q(&alpha);
    let lam_q = lam.rows(0, p);
    let total = lam_q.sum();
    let weights: Vec<f64> = if total > 0.0 && total.is_finite() {
        lam_q.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / p as f64; p]
    };
    let mut mixed = DMatrix::zeros(n, n);
    let mut offset = 0.0;
    for ((k, con), &w) in kernels.iter().zip(cons).zip(&weights) {
        mixed += k.as_matrix() * w;
        offset += w * con.r;
    }
    let mixed = SymmetricMatrix::new(mixed)?;
    let warm = alpha.map(|v| v.clamp(0.0, c));
    let cfg = QpConfig {
        allow_indefinite: true,
        ..*qp
    };
    let sol = solve_svm_dual_from(&mixed, y, c, Some(&warm), &cfg)?;
    let bound = (sol.certificate.dual_bound + offset).max(value);
    Ok(Master {
        converged: bound - value <= MASTER_GAP * value.abs().max(1.0),
        bound,
        value,
        alpha,
    })
}

/// Exchange method on the semi-infinite reformulation (classification only).
///
/// Starts from the positive part of the input kernel, solves the master over
/// the committed kernels, and adds the proxy kernel of the master solution
/// until that kernel's constraint is satisfied to within the gap tolerance.
/// Master values form a non-increasing sequence of upper bounds.
pub fn exchange_solve(problem: &TrainingProblem, cfg: &SolverConfig) -> Result<(TrainedModel, SolverTrace)> {
    exchange_solve_with_state(problem, cfg).map(|(m, t, _)| (m, t))
}

pub fn exchange_solve_with_state(
    problem: &TrainingProblem,
    cfg: &SolverConfig,
) -> Result<(TrainedModel, SolverTrace, ExchangeState)> {
    cfg.validate()?;
    if problem.variant != Variant::Classification {
        return Err(Error::validation(format!(
            "the exchange method supports classification only, not {}",
            problem.variant.name()
        )));
    }
    let start = Instant::now();
    let bx = FeasibleBox::for_problem(problem)?;
    let interior = bx
        .interior_point()
        .ok_or_else(|| Error::validation("feasible set has no interior point"))?;

    let k1 = psd_part(&problem.k0)?;
    let mut cons = vec![Constraint::new(problem, &k1)];
    let mut state = ExchangeState {
        kernels: vec![k1],
        t: f64::INFINITY,
        alpha: interior.clone(),
        master_values: Vec::new(),
    };
    let mut trace = SolverTrace::default();
    let mut best: Option<Best> = None;
    let mut upper = f64::INFINITY;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        let master = solve_master(&cons, &state.kernels, &problem.y, problem.c, &interior, cfg.master_max_iter, &cfg.qp)?;
        state.t = master.bound;
        state.alpha = master.alpha.clone();
        state.master_values.push(master.bound);

        let proxy = problem.proxy(&master.alpha)?;
        let f = direct_objective_with(problem, &master.alpha, &proxy.materialized);
        match best.as_mut() {
            Some(b) => b.offer(&master.alpha, f),
            None => best = Some(Best::new(master.alpha.clone(), f)),
        }
        upper = upper.min(master.bound);
        let best_value = best.as_ref().unwrap().value;
        trace.push(it, f, master.bound, upper - best_value, &start);
        log::debug!("exchange iteration {it}: master {:.6e}, objective {f:.6e}, constraints {}", master.bound, cons.len());

        if !master.converged {
            status = SolveStatus::MasterNonConvergence;
            break;
        }
        if f >= master.bound - cfg.gap_tol {
            status = SolveStatus::Converged;
            break;
        }

        let mut keep = Vec::with_capacity(cons.len());
        for k in cons.iter_mut() {
            k.idle = if k.value(&master.alpha) - master.value > PRUNE_SLACK { k.idle + 1 } else { 0 };
            keep.push(k.idle < PRUNE_AFTER);
        }
        let mut it_keep = keep.iter();
        cons.retain(|_| *it_keep.next().unwrap());
        let mut it_keep = keep.iter();
        state.kernels.retain(|_| *it_keep.next().unwrap());

        cons.push(Constraint::new(problem, &proxy.materialized));
        state.kernels.push(proxy.materialized);
    }

    let best = best.expect("at least one iteration");
    let model = TrainedModel::build(problem, "exchange", best.alpha, best.value, upper, status, iterations, &cfg.qp)?;
    Ok((model, trace, state))
}
