use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::objective::TrainingProblem;

/// `{x : lo <= x_i <= hi, a^T x = b}` with nonzero `a_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleBox {
    pub a: Vec<f64>,
    pub b: f64,
    pub lo: f64,
    pub hi: f64,
}

impl FeasibleBox {
    pub fn new(a: Vec<f64>, b: f64, lo: f64, hi: f64) -> Result<Self> {
        if a.is_empty() || a.iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return Err(Error::validation("equality coefficients must be finite and nonzero"));
        }
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || !b.is_finite() {
            return Err(Error::validation(format!("empty box [{lo}, {hi}]")));
        }
        let bx = FeasibleBox { a, b, lo, hi };
        let (min, max) = bx.equality_range();
        let slack = 1e-12 * (1.0 + min.abs().max(max.abs()));
        if b < min - slack || b > max + slack {
            return Err(Error::validation(format!(
                "no point of the box satisfies the equality (reachable range [{min}, {max}], target {b})"
            )));
        }
        Ok(bx)
    }

    /// Labels `y`, box `[0, C]`, `y^T x = 0`.
    pub fn classification(y: &[f64], c: f64) -> Result<Self> {
        FeasibleBox::new(y.to_vec(), 0.0, 0.0, c)
    }

    /// Box `[-C, C]`, `e^T x = 0`.
    pub fn svr(n: usize, c: f64) -> Result<Self> {
        FeasibleBox::new(vec![1.0; n], 0.0, -c, c)
    }

    /// Box `[0, 1/(nu n)]`, `e^T x = 1`.
    pub fn one_class(n: usize, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::validation(format!("nu must lie in (0, 1], got {nu}")));
        }
        FeasibleBox::new(vec![1.0; n], 1.0, 0.0, 1.0 / (nu * n as f64))
    }

    pub fn for_problem(problem: &TrainingProblem) -> Result<Self> {
        let (a, b) = problem.equality();
        let (lo, hi) = problem.bounds();
        FeasibleBox::new(a, b, lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    fn equality_range(&self) -> (f64, f64) {
        self.a.iter().fold((0.0, 0.0), |(mn, mx), &ai| {
            let (p, q) = (ai * self.lo, ai * self.hi);
            (mn + p.min(q), mx + p.max(q))
        })
    }

    pub fn equality_residual(&self, x: &DVector<f64>) -> f64 {
        self.a.iter().zip(x.iter()).map(|(a, v)| a * v).sum::<f64>() - self.b
    }

    /// Box holds exactly and the equality within `tol`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter().all(|&v| v >= self.lo && v <= self.hi)
            && self.equality_residual(x).abs() <= tol
    }

    /// A point strictly inside the box satisfying the equality, when the
    /// equality coefficients are all `+-1` and such a point exists.
    pub fn interior_point(&self) -> Option<DVector<f64>> {
        let n = self.dim();
        let pos = self.a.iter().filter(|&&v| v > 0.0).count() as f64;
        let neg = n as f64 - pos;
        if self.a.iter().any(|&v| v.abs() != 1.0) {
            return None;
        }
        // x = p on positive coefficients, q on negative ones, with
        // pos * p - neg * q = b; take p and q equidistant from the box middle
        let mid = 0.5 * (self.lo + self.hi);
        let (p, q) = if neg == 0.0 {
            (self.b / pos, 0.0)
        } else if pos == 0.0 {
            (0.0, -self.b / neg)
        } else {
            // pos (mid + d) - neg (mid - d) = b
            let d = (self.b - (pos - neg) * mid) / n as f64;
            (mid + d, mid - d)
        };
        let x = DVector::from_fn(n, |i, _| if self.a[i] > 0.0 { p } else { q });
        x.iter().all(|&v| v > self.lo && v < self.hi).then_some(x)
    }
}

fn clamp_shift(x_hat: &DVector<f64>, bx: &FeasibleBox, nu: f64) -> DVector<f64> {
    DVector::from_fn(x_hat.len(), |i, _| (x_hat[i] + nu * bx.a[i]).clamp(bx.lo, bx.hi))
}

/// Euclidean projection onto the box-and-hyperplane set.
///
/// The minimizer is `clamp(x_hat + nu a)` for the `nu` solving the monotone
/// piecewise-linear equation `a^T clamp(x_hat + nu a) = b`; `nu` is bracketed
/// between sorted breakpoints and then found by interpolation.
pub fn project_onto_feasible(x_hat: &DVector<f64>, bx: &FeasibleBox) -> Result<DVector<f64>> {
    let n = bx.dim();
    if x_hat.len() != n {
        return Err(Error::validation(format!("point has length {}, expected {n}", x_hat.len())));
    }
    if x_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("point has non-finite entries"));
    }
    let scale = 1.0 + bx.b.abs() + bx.hi.abs().max(bx.lo.abs()) * n as f64;
    if bx.contains(x_hat, 1e-14 * scale) {
        return Ok(x_hat.clone());
    }
    let g = |nu: f64| bx.equality_residual(&clamp_shift(x_hat, bx, nu));
    let mut bps: Vec<f64> = (0..n)
        .flat_map(|i| [(bx.lo - x_hat[i]) / bx.a[i], (bx.hi - x_hat[i]) / bx.a[i]])
        .collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();

    // g is nondecreasing; below the first breakpoint and above the last it is
    // constant, so b lies in [g(bps[0]), g(bps[last])]
    let (mut lo_idx, mut hi_idx) = (0usize, bps.len() - 1);
    let g_lo = g(bps[lo_idx]);
    let g_hi = g(bps[hi_idx]);
    if g_lo > 0.0 {
        return Ok(clamp_shift(x_hat, bx, bps[lo_idx]));
    }
    if g_hi < 0.0 {
        return Ok(clamp_shift(x_hat, bx, bps[hi_idx]));
    }
    let (mut r_lo, mut r_hi) = (g_lo, g_hi);
    while hi_idx - lo_idx > 1 {
        let mid = (lo_idx + hi_idx) / 2;
        let r = g(bps[mid]);
        if r <= 0.0 {
            lo_idx = mid;
            r_lo = r;
        } else {
            hi_idx = mid;
            r_hi = r;
        }
    }
    let (a, b) = (bps[lo_idx], bps[hi_idx]);
    let nu = if r_hi > r_lo { a - r_lo * (b - a) / (r_hi - r_lo) } else { a };
    let mut x = clamp_shift(x_hat, bx, nu);

    // remove round-off in the equality along the free coordinates
    let free: Vec<usize> = (0..n).filter(|&i| x[i] > bx.lo && x[i] < bx.hi).collect();
    if !free.is_empty() {
        let res = bx.equality_residual(&x);
        let norm2: f64 = free.iter().map(|&i| bx.a[i] * bx.a[i]).sum();
        for &i in &free {
            x[i] = (x[i] - res * bx.a[i] / norm2).clamp(bx.lo, bx.hi);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn feasible_points_are_fixed() {
        let bx = FeasibleBox::classification(&[1.0, -1.0, 1.0, -1.0], 1.0).unwrap();
        let x = DVector::from_vec(vec![0.2, 0.5, 0.3, 0.0]);
        assert_eq!(project_onto_feasible(&x, &bx).unwrap(), x);
    }

    #[test]
    fn degenerate_set_projects_to_origin() {
        let bx = FeasibleBox::classification(&[1.0, 1.0], 1.0).unwrap();
        let x = project_onto_feasible(&DVector::from_vec(vec![2.0, 3.0]), &bx).unwrap();
        assert_eq!(x, DVector::zeros(2));
    }

    #[test]
    fn infeasible_box_rejected() {
        assert!(FeasibleBox::one_class(4, 0.0).is_err());
        assert!(FeasibleBox::new(vec![1.0, 1.0], 3.0, 0.0, 1.0).is_err());
        assert!(FeasibleBox::new(vec![1.0, 0.0], 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn projection_is_idempotent_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..200 {
            let n = rng.random_range(2..12);
            let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let bx = FeasibleBox::classification(&y, 1.0).unwrap();
            let x_hat = DVector::from_fn(n, |_, _| rng.random_range(-2.0..3.0));
            let x = project_onto_feasible(&x_hat, &bx).unwrap();
            assert!(bx.contains(&x, 1e-10));
            let again = project_onto_feasible(&x, &bx).unwrap();
            assert!((&again - &x).amax() < 1e-12);
        }
    }

    #[test]
    fn interior_points() {
        let bx = FeasibleBox::classification(&[1.0, 1.0, 1.0, -1.0], 2.0).unwrap();
        let x = bx.interior_point().unwrap();
        assert!(bx.contains(&x, 1e-12) && x.iter().all(|&v| v > 0.0 && v < 2.0));
        assert!(FeasibleBox::svr(3, 1.0).unwrap().interior_point().unwrap().iter().all(|&v| v == 0.0));
        let oc = FeasibleBox::one_class(4, 0.5).unwrap();
        assert!(oc.contains(&oc.interior_point().unwrap(), 1e-12));
        assert!(FeasibleBox::one_class(4, 1.0).unwrap().interior_point().is_none());
        assert!(FeasibleBox::classification(&[1.0, 1.0], 1.0).unwrap().interior_point().is_none());
    }
}
