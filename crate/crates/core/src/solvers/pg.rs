use std::time::Instant;

use nalgebra::DVector;

use super::{project_onto_feasible, Best, FeasibleBox, SolveStatus, SolverConfig, SolverTrace, TrainedModel};
use crate::error::Result;
use crate::objective::{evaluate, TrainingProblem, Variant};
use crate::refqp::gap_bound;

/// Projected gradient ascent with steps `c / k`.
///
/// The gap is certified every `gap_every` iterations (and at the last one) by
/// a fixed-kernel solve on the current proxy kernel. The trace logs those raw
/// bounds; the returned model is the best iterate seen.
pub fn projected_gradient_solve(problem: &TrainingProblem, cfg: &SolverConfig) -> Result<(TrainedModel, SolverTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let bx = FeasibleBox::for_problem(problem)?;
    let smoothing = cfg.smoothing_for(problem);
    let step_c = cfg
        .step_c
        .unwrap_or(if problem.variant == Variant::Perturb { 10.0 } else { 5.0 });

    let mid = 0.5 * (bx.lo + bx.hi);
    let mut alpha = project_onto_feasible(&DVector::from_element(problem.n(), mid), &bx)?;
    let mut trace = SolverTrace::default();
    let mut best: Option<Best> = None;
    let mut upper = f64::INFINITY;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    for k in 1..=cfg.max_iter {
        iterations = k;
        let ev = evaluate(problem, &alpha, smoothing)?;
        match best.as_mut() {
            Some(b) => b.offer(&alpha, ev.exact_value),
            None => best = Some(Best::new(alpha.clone(), ev.exact_value)),
        }
        if k % cfg.gap_every == 0 || k == cfg.max_iter {
            let gb = gap_bound(problem, &alpha, &cfg.qp)?;
            upper = upper.min(gb.upper);
            trace.push(k, gb.objective, gb.upper, gb.gap, &start);
            log::debug!("pg iteration {k}: objective {:.6e}, gap {:.3e}", gb.objective, gb.gap);
            if gb.gap <= cfg.gap_tol {
                status = SolveStatus::Converged;
                break;
            }
        }
        let step = step_c / k as f64;
        alpha = project_onto_feasible(&(&alpha + ev.gradient * step), &bx)?;
    }

    let best = best.expect("at least one iteration");
    let model = TrainedModel::build(problem, "pg", best.alpha, best.value, upper, status, iterations, &cfg.qp)?;
    Ok((model, trace))
}
