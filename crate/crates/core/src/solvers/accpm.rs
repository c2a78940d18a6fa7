use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{project_onto_feasible, Best, FeasibleBox, SolveStatus, SolverConfig, SolverTrace, TrainedModel};
use crate::error::{Error, Result};
use crate::objective::{evaluate, TrainingProblem};
use crate::refqp::gap_bound;
use crate::symlin::SymmetricMatrix;

const NEWTON_MAX_STEPS: usize = 200;
const CENTER_GRAD_TOL: f64 = 1e-8;
/// Squared Newton decrement below which the center is accepted. The gradient
/// test is scale dependent (it passes on unbounded sets as slacks blow up), so
/// it also needs a small decrement.
const CENTER_DECREMENT_TOL: f64 = 1e-20;
/// A center that stalls at round-off with a decrement below this is accepted
/// after the step cap; the decrement stays >= 1 on sets where the barrier is
/// unbounded.
const CENTER_STALL_TOL: f64 = 1e-14;

/// Polytope `{z : a_j^T z <= b_j}`; `original` marks rows that are faces of
/// the feasible set rather than cuts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalizationSet {
    pub rows: Vec<DVector<f64>>,
    pub rhs: Vec<f64>,
    pub original: Vec<bool>,
}

impl LocalizationSet {
    pub fn push(&mut self, a: DVector<f64>, b: f64, original: bool) {
        self.rows.push(a);
        self.rhs.push(b);
        self.original.push(original);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cut_count(&self) -> usize {
        self.original.iter().filter(|o| !**o).count()
    }

    fn matrix(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), dim, |j, k| self.rows[j][k])
    }

    fn slacks(&self, a: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&self.rhs) - a * z
    }

    fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.rows.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.rhs.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.original.retain(|_| *it.next().unwrap());
    }
}

fn barrier_hessian(a: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (j, mut row) in scaled.row_iter_mut().enumerate() {
        row /= s[j];
    }
    scaled.tr_mul(&scaled)
}

/// Minimizer of `-sum_j log(b_j - a_j^T z)` by damped Newton from a strictly
/// feasible start, with the barrier Hessian there.
pub fn analytic_center(set: &LocalizationSet, start: &DVector<f64>) -> Result<(DVector<f64>, SymmetricMatrix)> {
    let dim = start.len();
    if set.is_empty() || set.rows.iter().any(|r| r.len() != dim) {
        return Err(Error::validation("localization rows must match the start dimension"));
    }
    let a = set.matrix(dim);
    let mut z = start.clone();
    let mut s = set.slacks(&a, &z);
    if s.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateLocalization("start is not strictly feasible".into()));
    }
    let blowup = 1e12 * (1.0 + start.norm());
    let mut stalled = None;
    for _ in 0..NEWTON_MAX_STEPS {
        let inv = s.map(|v| 1.0 / v);
        let grad = a.tr_mul(&inv);
        let h = barrier_hessian(&a, &s);
        let Some(chol) = Cholesky::new(h.clone()) else {
            return Err(Error::DegenerateLocalization("barrier Hessian is singular".into()));
        };
        let dz = -chol.solve(&grad);
        let lam2 = -grad.dot(&dz);
        if lam2 <= CENTER_DECREMENT_TOL || (grad.norm() <= CENTER_GRAD_TOL && lam2 <= 1e-12) {
            return Ok((z, SymmetricMatrix::from_trusted(h)));
        }
        stalled = (lam2 <= CENTER_STALL_TOL).then(|| (z.clone(), h));
        let lam = lam2.sqrt();
        let mut t = if lam > 0.25 { 1.0 / (1.0 + lam) } else { 1.0 };
        loop {
            let trial = &z + &dz * t;
            let st = set.slacks(&a, &trial);
            if st.iter().all(|&v| v > 0.0) {
                z = trial;
                s = st;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(Error::DegenerateLocalization("no feasible Newton step".into()));
            }
        }
        if z.norm() > blowup {
            return Err(Error::DegenerateLocalization("barrier is unbounded below".into()));
        }
    }
    match stalled {
        Some((z, h)) => Ok((z, SymmetricMatrix::from_trusted(h))),
        None => Err(Error::DegenerateLocalization("analytic center did not converge".into())),
    }
}

/// Orthonormal basis of the complement of `a`, from a Householder reflector.
fn complement_basis(a: &[f64]) -> DMatrix<f64> {
    let n = a.len();
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut v = DVector::from_fn(n, |i, _| a[i] / norm);
    v[0] += if v[0] >= 0.0 { 1.0 } else { -1.0 };
    let vv = v.norm_squared();
    DMatrix::from_fn(n, n - 1, |i, j| {
        let col = j + 1;
        let id = if i == col { 1.0 } else { 0.0 };
        id - 2.0 * v[i] * v[col] / vv
    })
}

/// Analytic center cutting plane method.
///
/// Works in coordinates `alpha = x0 + Z z` of the equality hyperplane. Each
/// iteration queries the smoothed objective at the analytic center, cuts with
/// the supergradient half-space, and bounds the optimum by the linearization
/// over the Dikin ellipsoid inflated by the row count, which covers the
/// localization set. The gap in the trace is the running minimum of these
/// bounds minus the best exact objective, so it never increases.
pub fn accpm_solve(problem: &TrainingProblem, cfg: &SolverConfig) -> Result<(TrainedModel, SolverTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let n = problem.n();
    let bx = FeasibleBox::for_problem(problem)?;
    let smoothing = cfg.smoothing_for(problem);
    let max_rows = cfg.max_rows.unwrap_or(3 * n).max(2 * n + 1);
    let mut trace = SolverTrace::default();

    let Some(x0) = bx.interior_point().filter(|_| n >= 2) else {
        // the feasible set has no interior: it is (at most) one point
        let mid = 0.5 * (bx.lo + bx.hi);
        let alpha = project_onto_feasible(&DVector::from_element(n, mid), &bx)?;
        let gb = gap_bound(problem, &alpha, &cfg.qp)?;
        trace.push(1, gb.objective, gb.upper, gb.gap, &start);
        let model = TrainedModel::build(problem, "accpm", alpha, gb.objective, gb.upper, SolveStatus::Converged, 1, &cfg.qp)?;
        return Ok((model, trace));
    };

    let z_basis = complement_basis(&bx.a);
    let dim = n - 1;
    let mut set = LocalizationSet::default();
    for i in 0..n {
        let zi = z_basis.row(i).transpose();
        set.push(zi.clone(), bx.hi - x0[i], true);
        set.push(-zi, x0[i] - bx.lo, true);
    }
    let (mut zc, mut hess) = analytic_center(&set, &DVector::zeros(dim))?;

    let mut best: Option<Best> = None;
    let mut upper = f64::INFINITY;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        let x = (&x0 + &z_basis * &zc).map(|v| v.clamp(bx.lo, bx.hi));
        let ev = evaluate(problem, &x, smoothing)?;
        match best.as_mut() {
            Some(b) => b.offer(&x, ev.exact_value),
            None => best = Some(Best::new(x.clone(), ev.exact_value)),
        }
        let best_value = best.as_ref().unwrap().value;

        let gz = z_basis.tr_mul(&ev.gradient);
        let chol = Cholesky::new(hess.as_matrix().clone())
            .ok_or_else(|| Error::DegenerateLocalization("barrier Hessian is singular".into()))?;
        let hinv_g = chol.solve(&gz);
        let dual_norm = gz.dot(&hinv_g).max(0.0).sqrt();
        // the Dikin bound and the fixed-kernel bound at the center are both valid
        let svm_upper = gap_bound(problem, &x, &cfg.qp)?.upper;
        upper = upper.min(ev.value + set.len() as f64 * dual_norm).min(svm_upper);
        let gap = upper - best_value;
        trace.push(it, ev.exact_value, upper, gap, &start);
        log::debug!("accpm iteration {it}: objective {:.6e}, gap {gap:.3e}, rows {}", ev.exact_value, set.len());
        if gap <= cfg.gap_tol || dual_norm == 0.0 {
            status = SolveStatus::Converged;
            break;
        }
        if it == cfg.max_iter {
            break;
        }

        // cut: the maximizer lies in {z : g^T (z - zc) >= 0}
        let cut = -&gz / gz.norm();
        let cut_rhs = cut.dot(&zc);
        if set.len() + 1 > max_rows {
            prune(&mut set, &zc, &chol, max_rows - 1);
        }
        let hinv_cut = chol.solve(&cut);
        let radius = cut.dot(&hinv_cut).sqrt();
        let next_start = &zc - hinv_cut * (0.5 / radius);
        set.push(cut, cut_rhs, false);
        match analytic_center(&set, &next_start) {
            Ok((z, h)) => {
                zc = z;
                hess = h;
            }
            Err(Error::DegenerateLocalization(msg)) => {
                log::warn!("localization set collapsed ({msg}) at gap {gap:.3e}; stopping");
                status = SolveStatus::Stalled;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let best = best.expect("at least one iteration");
    let model = TrainedModel::build(problem, "accpm", best.alpha, best.value, upper, status, iterations, &cfg.qp)?;
    Ok((model, trace))
}

/// Keep every original row and the most relevant cuts, `keep` rows in total.
/// Relevance of row `j` is `a_j^T H^{-1} a_j / s_j^2` at the current center.
fn prune(set: &mut LocalizationSet, zc: &DVector<f64>, chol: &Cholesky<f64, Dyn>, keep: usize) {
    let originals = set.original.iter().filter(|o| **o).count();
    let slots = keep.saturating_sub(originals);
    let mut cuts: Vec<(usize, f64)> = (0..set.len())
        .filter(|&j| !set.original[j])
        .map(|j| {
            let a = &set.rows[j];
            let s = set.rhs[j] - a.dot(zc);
            (j, a.dot(&chol.solve(a)) / (s * s))
        })
        .collect();
    // most relevant first; index order breaks ties
    cuts.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut mask: Vec<bool> = set.original.clone();
    for &(j, _) in cuts.iter().take(slots) {
        mask[j] = true;
    }
    set.retain(&mask);
}
