//! Smoothed eigenvalue objectives in the support vector coefficients.
//!
//! With the proxy kernel eliminated in closed form, training maximizes a
//! concave function of `alpha` built from the spectrum of
//! `M(alpha) = K0 + u u^T / (4 rho)`, `u = B alpha`:
//!
//! ```text
//! f(alpha) = margin(alpha) - 1/2 sum_i p(l_i) (u^T v_i)^2 + rho sum_i p(l_i)^2
//!            - 2 rho sum_i (v_i^T K0 v_i) p(l_i) + rho Tr(K0 K0)
//! ```
//!
//! where `p = max(0, .)`. The smoothed objective replaces `p` by its
//! Moreau-Yosida regularization `phi_eps`.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::proxy::{
    label_scaled, proxy_classification, proxy_mercer, proxy_regression, proxy_weighted, KernelCache,
    PenaltyWeights, ProxyKernel, WeightedKernelCache,
};
use crate::symlin::{rank_one_update, SymmetricMatrix};

/// Relative smoothing used when no explicit epsilon is configured.
pub const AUTO_SMOOTHING_SCALE: f64 = 1e-6;

/// Finite-difference step used by [`check_gradient`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum Variant {
    /// Binary SVM with labels in `{-1, +1}`.
    Classification,
    /// Epsilon-insensitive regression; `y` holds real targets.
    Svr { epsilon_tube: f64 },
    /// One-class SVM with box `[0, 1/(nu l)]`, `l` the training count.
    OneClass { nu: f64 },
    /// Mercer input kernel: SVM with a fourth-order penalty on `alpha`.
    Perturb,
    /// Componentwise penalties `H = h h^T` in place of `rho`.
    Weighted { weights: PenaltyWeights },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Classification => "classification",
            Variant::Svr { .. } => "svr",
            Variant::OneClass { .. } => "oneclass",
            Variant::Perturb => "perturb",
            Variant::Weighted { .. } => "weighted",
        }
    }
}

#[derive(Clone, Debug)]
enum Spectral {
    Plain(KernelCache),
    Weighted(WeightedKernelCache),
    None,
}

/// Input kernel, targets and penalties for one training run. Holds the
/// cached eigendecomposition of the input kernel.
#[derive(Clone, Debug)]
pub struct TrainingProblem {
    pub k0: Arc<SymmetricMatrix>,
    /// Labels, or regression targets for SVR; all ones for one-class.
    pub y: Vec<f64>,
    /// Upper end of the box on `alpha` (`1/(nu l)` for one-class).
    pub c: f64,
    pub rho: f64,
    pub variant: Variant,
    spectral: Spectral,
}

fn check_labels(y: &[f64], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::validation(format!("{} labels for kernel of dimension {n}", y.len())));
    }
    if y.iter().any(|&l| l != 1.0 && l != -1.0) {
        return Err(Error::validation("labels must be -1 or +1"));
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::validation("training labels contain a single class"));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} must be > 0, got {v}")))
    }
}

impl TrainingProblem {
    pub fn classification(k0: SymmetricMatrix, y: Vec<f64>, c: f64, rho: f64) -> Result<Self> {
        check_labels(&y, k0.dim())?;
        check_positive("C", c)?;
        check_positive("rho", rho)?;
        let cache = KernelCache::new(k0)?;
        Ok(TrainingProblem {
            k0: cache.k0.clone(),
            y,
            c,
            rho,
            variant: Variant::Classification,
            spectral: Spectral::Plain(cache),
        })
    }

    pub fn svr(k0: SymmetricMatrix, targets: Vec<f64>, c: f64, rho: f64, epsilon_tube: f64) -> Result<Self> {
        if targets.len() != k0.dim() || targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("targets must be finite and match the kernel dimension"));
        }
        check_positive("C", c)?;
        check_positive("rho", rho)?;
        if !(epsilon_tube >= 0.0) {
            return Err(Error::validation("SVR epsilon must be >= 0"));
        }
        let cache = KernelCache::new(k0)?;
        Ok(TrainingProblem {
            k0: cache.k0.clone(),
            y: targets,
            c,
            rho,
            variant: Variant::Svr { epsilon_tube },
            spectral: Spectral::Plain(cache),
        })
    }

    pub fn one_class(k0: SymmetricMatrix, nu: f64, rho: f64) -> Result<Self> {
        let l = k0.dim();
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::validation(format!("nu must lie in (0, 1], got {nu}")));
        }
        check_positive("rho", rho)?;
        let cache = KernelCache::new(k0)?;
        Ok(TrainingProblem {
            k0: cache.k0.clone(),
            y: vec![1.0; l],
            c: 1.0 / (nu * l as f64),
            rho,
            variant: Variant::OneClass { nu },
            spectral: Spectral::Plain(cache),
        })
    }

    /// Requires a PSD input kernel (up to `1e-8` relative).
    pub fn perturb(k0: SymmetricMatrix, y: Vec<f64>, c: f64, rho: f64) -> Result<Self> {
        check_labels(&y, k0.dim())?;
        check_positive("C", c)?;
        check_positive("rho", rho)?;
        let lmin = crate::symlin::eig(&k0)?.min_value();
        if lmin < -1e-8 * k0.max_abs().max(1.0) {
            return Err(Error::validation(format!(
                "perturb variant needs a PSD kernel, smallest eigenvalue is {lmin:.3e}"
            )));
        }
        Ok(TrainingProblem {
            k0: Arc::new(k0),
            y,
            c,
            rho,
            variant: Variant::Perturb,
            spectral: Spectral::None,
        })
    }

    /// `rho` is reported as 1; the weights carry the penalty.
    pub fn weighted(k0: SymmetricMatrix, y: Vec<f64>, c: f64, weights: PenaltyWeights) -> Result<Self> {
        check_labels(&y, k0.dim())?;
        check_positive("C", c)?;
        let cache = WeightedKernelCache::new(k0, weights.clone())?;
        Ok(TrainingProblem {
            k0: cache.k0.clone(),
            y,
            c,
            rho: 1.0,
            variant: Variant::Weighted { weights },
            spectral: Spectral::Weighted(cache),
        })
    }

    pub fn n(&self) -> usize {
        self.k0.dim()
    }

    /// Box `[lo, hi]` on every coordinate of `alpha`.
    pub fn bounds(&self) -> (f64, f64) {
        match self.variant {
            Variant::Svr { .. } => (-self.c, self.c),
            _ => (0.0, self.c),
        }
    }

    /// Equality constraint `a^T alpha = b`.
    pub fn equality(&self) -> (Vec<f64>, f64) {
        match self.variant {
            Variant::Svr { .. } => (vec![1.0; self.n()], 0.0),
            Variant::OneClass { .. } => (vec![1.0; self.n()], 1.0),
            _ => (self.y.clone(), 0.0),
        }
    }

    /// The proxy kernel realized at `alpha` (no smoothing).
    pub fn proxy(&self, alpha: &DVector<f64>) -> Result<ProxyKernel> {
        match (&self.variant, &self.spectral) {
            (Variant::Classification, Spectral::Plain(c)) => proxy_classification(c, alpha, &self.y, self.rho),
            (Variant::Svr { .. } | Variant::OneClass { .. }, Spectral::Plain(c)) => {
                proxy_regression(c, alpha, self.rho)
            }
            (Variant::Perturb, _) => proxy_mercer(&self.k0, alpha, &self.y, self.rho),
            (Variant::Weighted { .. }, Spectral::Weighted(c)) => proxy_weighted(c, alpha, &self.y),
            _ => unreachable!("variant and cache are built together"),
        }
    }

    /// Penalty `rho |K - K0|_F^2`, or its componentwise form.
    pub fn kernel_penalty(&self, k: &SymmetricMatrix) -> f64 {
        match &self.variant {
            Variant::Weighted { weights } => weights.weighted_distance_sq(k, &self.k0),
            _ => self.rho * k.frobenius_distance(&self.k0).powi(2),
        }
    }

    /// Vector multiplying the kernel in the quadratic term (`Y alpha` or `alpha`).
    pub fn quadratic_vector(&self, alpha: &DVector<f64>) -> DVector<f64> {
        match self.variant {
            Variant::Svr { .. } | Variant::OneClass { .. } => alpha.clone(),
            _ => label_scaled(alpha, &self.y),
        }
    }

    /// Linear part of the objective without smoothing.
    pub fn margin_term(&self, alpha: &DVector<f64>) -> f64 {
        match self.variant {
            Variant::Svr { epsilon_tube } => {
                alpha.iter().zip(&self.y).map(|(a, t)| a * t).sum::<f64>() - epsilon_tube * alpha.lp_norm(1)
            }
            Variant::OneClass { .. } => 0.0,
            _ => alpha.sum(),
        }
    }
}

/// Moreau-Yosida smoothing parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingConfig {
    pub epsilon: f64,
}

impl SmoothingConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        check_positive("smoothing epsilon", epsilon)?;
        Ok(SmoothingConfig { epsilon })
    }

    /// `1e-6 * |K0|_F`.
    pub fn auto(k0: &SymmetricMatrix) -> Self {
        let scale = k0.frobenius_norm();
        SmoothingConfig {
            epsilon: if scale > 0.0 { AUTO_SMOOTHING_SCALE * scale } else { AUTO_SMOOTHING_SCALE },
        }
    }
}

/// `phi_eps(f) = max_{0<=u<=1} (u f - eps u^2 / 2)` and its slope `u*`.
pub fn smooth_max(f: f64, cfg: SmoothingConfig) -> (f64, f64) {
    let u = (f / cfg.epsilon).clamp(0.0, 1.0);
    (u * f - 0.5 * cfg.epsilon * u * u, u)
}

#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    /// Smoothed objective.
    pub value: f64,
    /// Gradient of the smoothed objective.
    pub gradient: DVector<f64>,
    /// Objective with every smoothed max replaced by the exact one.
    pub exact_value: f64,
    pub proxy: ProxyKernel,
    /// Eigendecompositions (rank-one updates) performed.
    pub eig_eval_count: usize,
}

fn check_alpha(problem: &TrainingProblem, alpha: &DVector<f64>) -> Result<()> {
    if alpha.len() != problem.n() {
        return Err(Error::validation(format!(
            "alpha has length {}, expected {}",
            alpha.len(),
            problem.n()
        )));
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::validation("alpha has non-finite entries"));
    }
    Ok(())
}

/// Smoothed objective, its gradient and the unsmoothed value at `alpha`.
pub fn evaluate(problem: &TrainingProblem, alpha: &DVector<f64>, cfg: SmoothingConfig) -> Result<ObjectiveEval> {
    check_alpha(problem, alpha)?;
    if let Variant::Perturb = problem.variant {
        return Ok(evaluate_perturb(problem, alpha));
    }

    // Spectral variants share one code path in possibly rescaled coordinates:
    // M = K + u u^T / (4 r) with u = b .* alpha.
    let n = problem.n();
    let (base, eigen, b, r) = match (&problem.variant, &problem.spectral) {
        (Variant::Weighted { weights }, Spectral::Weighted(c)) => {
            let s = weights.inv_sqrt();
            let b = DVector::from_fn(n, |i, _| problem.y[i] * s[i]);
            (c.scaled.clone(), c.eigen.clone(), b, 1.0)
        }
        (Variant::Classification, Spectral::Plain(c)) => {
            (c.k0.clone(), c.eigen.clone(), DVector::from_column_slice(&problem.y), problem.rho)
        }
        (_, Spectral::Plain(c)) => (c.k0.clone(), c.eigen.clone(), DVector::from_element(n, 1.0), problem.rho),
        _ => unreachable!("variant and cache are built together"),
    };
    let u = b.component_mul(alpha);
    let spectrum = rank_one_update(&eigen, &u, 1.0 / (4.0 * r));
    let proj = spectrum.vectors.tr_mul(&u); // v_i^T u
    let k0v = base.as_matrix() * &spectrum.vectors;
    let k0_norm2 = base.frobenius_norm().powi(2);

    let (margin, margin_exact, mut gradient) = margin_parts(problem, alpha, cfg);

    let mut value = margin + r * k0_norm2;
    let mut exact = margin_exact + r * k0_norm2;
    // d(eigen part)/d alpha = 1/2 b .* sum_i h'(l_i) (v_i^T u) v_i, where
    // h(l) = phi(l)^2 - 2 l phi(l) collects the three spectral terms once
    // v_i^T K0 v_i = l_i - (v_i^T u)^2 / (4 r) is substituted.
    let mut weights = DVector::zeros(n);
    for i in 0..n {
        let l = spectrum.values[i];
        let c2 = proj[i] * proj[i];
        let t = spectrum.vectors.column(i).dot(&k0v.column(i));
        let (phi, slope) = smooth_max(l, cfg);
        value += -0.5 * phi * c2 + r * phi * phi - 2.0 * r * t * phi;
        let p = l.max(0.0);
        exact += -0.5 * p * c2 + r * p * p - 2.0 * r * t * p;
        let dh = 2.0 * slope * (phi - l) - 2.0 * phi;
        weights[i] = 0.5 * dh * proj[i];
    }
    gradient += (&spectrum.vectors * weights).component_mul(&b);

    let proxy = match &problem.spectral {
        Spectral::Weighted(c) => {
            let inv_sqrt = c.weights.inv_sqrt();
            let ya = label_scaled(alpha, &problem.y);
            ProxyKernel {
                base: c.k0.clone(),
                update_vector: DVector::from_fn(n, |i, _| ya[i] / c.weights.values()[i]),
                rho: 1.0,
                projected: true,
                materialized: spectrum.reconstruct_with(|l| l.max(0.0)).congruence_diag(&inv_sqrt),
                spectrum: Some(spectrum),
            }
        }
        _ => ProxyKernel {
            base: base.clone(),
            update_vector: u,
            rho: r,
            projected: true,
            materialized: spectrum.reconstruct_with(|l| l.max(0.0)),
            spectrum: Some(spectrum),
        },
    };

    Ok(ObjectiveEval {
        value,
        gradient,
        exact_value: exact,
        proxy,
        eig_eval_count: 1,
    })
}

/// Smoothed and exact margin terms and the smoothed margin gradient.
fn margin_parts(problem: &TrainingProblem, alpha: &DVector<f64>, cfg: SmoothingConfig) -> (f64, f64, DVector<f64>) {
    let n = problem.n();
    match problem.variant {
        Variant::Svr { epsilon_tube } => {
            // |a| = max(0, a) + max(0, -a), each smoothed
            let mut value = 0.0;
            let mut grad = DVector::zeros(n);
            for i in 0..n {
                let (pos, spos) = smooth_max(alpha[i], cfg);
                let (neg, sneg) = smooth_max(-alpha[i], cfg);
                value += alpha[i] * problem.y[i] - epsilon_tube * (pos + neg);
                grad[i] = problem.y[i] - epsilon_tube * (spos - sneg);
            }
            (value, problem.margin_term(alpha), grad)
        }
        Variant::OneClass { .. } => (0.0, 0.0, DVector::zeros(n)),
        _ => (alpha.sum(), alpha.sum(), DVector::from_element(n, 1.0)),
    }
}

fn evaluate_perturb(problem: &TrainingProblem, alpha: &DVector<f64>) -> ObjectiveEval {
    let u = label_scaled(alpha, &problem.y);
    let ku = problem.k0.as_matrix() * &u;
    let s = alpha.norm_squared();
    let value = alpha.sum() - 0.5 * u.dot(&ku) - s * s / (16.0 * problem.rho);
    let gradient = DVector::from_fn(problem.n(), |i, _| {
        1.0 - problem.y[i] * ku[i] - s * alpha[i] / (4.0 * problem.rho)
    });
    let proxy = proxy_mercer(&problem.k0, alpha, &problem.y, problem.rho).expect("validated problem");
    ObjectiveEval {
        value,
        gradient,
        exact_value: value,
        proxy,
        eig_eval_count: 0,
    }
}

/// Objective in direct form: margin minus `1/2 u^T K* u` plus the kernel
/// penalty, with `K*` taken from the proxy module.
pub fn direct_objective(problem: &TrainingProblem, alpha: &DVector<f64>) -> Result<f64> {
    check_alpha(problem, alpha)?;
    let proxy = problem.proxy(alpha)?;
    Ok(direct_objective_with(problem, alpha, &proxy.materialized))
}

/// Direct-form objective for a given kernel `k`; minimized over PSD `k` by
/// the proxy kernel.
pub fn direct_objective_with(problem: &TrainingProblem, alpha: &DVector<f64>, k: &SymmetricMatrix) -> f64 {
    let q = problem.quadratic_vector(alpha);
    problem.margin_term(alpha) - 0.5 * q.dot(&(k.as_matrix() * &q)) + problem.kernel_penalty(k)
}

/// Largest per-coordinate relative error `|fd_k - g_k| / max(1, |g_k|)` between
/// central differences with step [`FD_STEP`] and the analytic gradient.
pub fn check_gradient(problem: &TrainingProblem, alpha: &DVector<f64>, cfg: SmoothingConfig) -> Result<f64> {
    check_alpha(problem, alpha)?;
    let (lo, hi) = problem.bounds();
    if alpha.iter().any(|&a| a - FD_STEP <= lo || a + FD_STEP >= hi) {
        return Err(Error::validation("alpha must lie strictly inside the box for finite differences"));
    }
    let analytic = evaluate(problem, alpha, cfg)?.gradient;
    let mut worst = 0.0f64;
    let mut probe = alpha.clone();
    for k in 0..problem.n() {
        probe[k] = alpha[k] + FD_STEP;
        let up = evaluate(problem, &probe, cfg)?.value;
        probe[k] = alpha[k] - FD_STEP;
        let down = evaluate(problem, &probe, cfg)?.value;
        probe[k] = alpha[k];
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max((fd - analytic[k]).abs() / analytic[k].abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symlin::{eig, psd_part};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_indefinite(n: usize, rng: &mut impl Rng) -> SymmetricMatrix {
        SymmetricMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn labels(n: usize) -> Vec<f64> {
        (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()
    }

    fn interior_alpha(n: usize, c: f64, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(0.1 * c..0.9 * c))
    }

    #[test]
    fn smooth_max_branches() {
        let cfg = SmoothingConfig::new(0.2).unwrap();
        assert_eq!(smooth_max(-1.0, cfg), (0.0, 0.0));
        let (v, s) = smooth_max(0.4, cfg);
        assert!((v - 0.3).abs() < 1e-15 && s == 1.0);
        let (v, s) = smooth_max(0.1, cfg);
        assert!((v - 0.2 / 8.0).abs() < 1e-15 && (s - 0.5).abs() < 1e-15);
        assert!(SmoothingConfig::new(0.0).is_err());
    }

    #[test]
    fn classification_at_zero_is_negative_part_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let k0 = random_indefinite(7, &mut rng);
        let rho = 1.7;
        let expected = rho * psd_part(&k0).unwrap().frobenius_distance(&k0).powi(2);
        let via_eigs = rho * eig(&k0).unwrap().values.iter().map(|l| l.min(0.0).powi(2)).sum::<f64>();
        assert!((expected - via_eigs).abs() < 1e-10);
        let p = TrainingProblem::classification(k0, labels(7), 1.0, rho).unwrap();
        let ev = evaluate(&p, &DVector::zeros(7), SmoothingConfig::new(1e-10).unwrap()).unwrap();
        assert!((ev.exact_value - expected).abs() < 1e-10);
        assert!((ev.value - expected).abs() < 1e-8);
    }

    #[test]
    fn perturb_at_zero() {
        let p = TrainingProblem::perturb(SymmetricMatrix::identity(4), labels(4), 1.0, 2.0).unwrap();
        let ev = evaluate(&p, &DVector::zeros(4), SmoothingConfig::new(1e-6).unwrap()).unwrap();
        assert_eq!(ev.value, 0.0);
        assert_eq!(ev.gradient, DVector::from_element(4, 1.0));
        assert_eq!(ev.eig_eval_count, 0);
    }

    #[test]
    fn perturb_rejects_indefinite_kernel() {
        let k = SymmetricMatrix::from_diagonal(&[1.0, -1.0]).unwrap();
        assert!(TrainingProblem::perturb(k, labels(2), 1.0, 1.0).is_err());
    }

    #[test]
    fn perturb_penalty_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pairs: f64 = a.iter().flat_map(|x| a.iter().map(move |z| (x * z).powi(2))).sum();
        let squares: f64 = a.iter().map(|x| x * x).sum::<f64>().powi(2);
        assert!((pairs - squares).abs() <= 1e-14 * squares);
    }

    #[test]
    fn expansion_matches_direct_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let k0 = random_indefinite(8, &mut rng);
        let p = TrainingProblem::classification(k0, labels(8), 1.0, 0.8).unwrap();
        let alpha = interior_alpha(8, 1.0, &mut rng);
        let ev = evaluate(&p, &alpha, SmoothingConfig::new(1e-10).unwrap()).unwrap();
        let direct = direct_objective(&p, &alpha).unwrap();
        assert!((ev.value - direct).abs() < 1e-8 * (1.0 + direct.abs()));
        assert!((ev.exact_value - direct).abs() < 1e-8 * (1.0 + direct.abs()));
    }

    #[test]
    fn gradient_checks_for_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n = 7;
        let k0 = random_indefinite(n, &mut rng);
        let cfg = SmoothingConfig::new(1e-6).unwrap();
        let alpha = interior_alpha(n, 1.0, &mut rng);

        let cls = TrainingProblem::classification(k0.clone(), labels(n), 1.0, 0.5).unwrap();
        assert!(check_gradient(&cls, &alpha, cfg).unwrap() < 1e-4);

        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let svr = TrainingProblem::svr(k0.clone(), targets, 1.0, 0.5, 0.1).unwrap();
        let signed = DVector::from_fn(n, |i, _| if i % 2 == 0 { alpha[i] } else { -alpha[i] });
        assert!(check_gradient(&svr, &signed, cfg).unwrap() < 1e-4);

        let oc = TrainingProblem::one_class(k0.clone(), 0.5, 0.5).unwrap();
        let small = &alpha * (oc.c / 1.0);
        assert!(check_gradient(&oc, &small, cfg).unwrap() < 1e-4);

        let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let w = TrainingProblem::weighted(k0, labels(n), 1.0, PenaltyWeights::new(h).unwrap()).unwrap();
        assert!(check_gradient(&w, &alpha, cfg).unwrap() < 1e-4);

        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let psd = SymmetricMatrix::new(&a * a.transpose()).unwrap();
        let pert = TrainingProblem::perturb(psd, labels(n), 1.0, 0.3).unwrap();
        assert!(check_gradient(&pert, &alpha, cfg).unwrap() < 1e-6);
    }

    #[test]
    fn gradient_check_rejects_boundary_alpha() {
        let p = TrainingProblem::classification(SymmetricMatrix::identity(3), labels(3), 1.0, 1.0).unwrap();
        let alpha = DVector::from_vec(vec![0.0, 0.5, 0.5]);
        assert!(check_gradient(&p, &alpha, SmoothingConfig::new(1e-6).unwrap()).is_err());
    }

    #[test]
    fn envelope_gradient_matches_proxy_kernel_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let n = 9;
        let k0 = random_indefinite(n, &mut rng);
        let y = labels(n);
        let p = TrainingProblem::classification(k0, y.clone(), 1.0, 0.6).unwrap();
        let alpha = interior_alpha(n, 1.0, &mut rng);
        let ev = evaluate(&p, &alpha, SmoothingConfig::new(1e-9).unwrap()).unwrap();
        let u = label_scaled(&alpha, &y);
        let ku = ev.proxy.materialized.as_matrix() * &u;
        for i in 0..n {
            let envelope = 1.0 - y[i] * ku[i];
            assert!((ev.gradient[i] - envelope).abs() <= 1e-4 * envelope.abs().max(1.0));
        }
    }

    #[test]
    fn direct_form_is_concave_along_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let k0 = random_indefinite(8, &mut rng);
        let p = TrainingProblem::classification(k0, labels(8), 2.0, 0.4).unwrap();
        for _ in 0..20 {
            let a1 = interior_alpha(8, 2.0, &mut rng);
            let a2 = interior_alpha(8, 2.0, &mut rng);
            let f1 = direct_objective(&p, &a1).unwrap();
            let f2 = direct_objective(&p, &a2).unwrap();
            for t in [0.25, 0.5, 0.75] {
                let mid = &a1 * t + &a2 * (1.0 - t);
                assert!(direct_objective(&p, &mid).unwrap() >= t * f1 + (1.0 - t) * f2 - 1e-8);
            }
        }
    }

    #[test]
    fn weighted_direct_form_uses_componentwise_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let k0 = random_indefinite(5, &mut rng);
        let h: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..2.0)).collect();
        let w = PenaltyWeights::new(h).unwrap();
        let p = TrainingProblem::weighted(k0, labels(5), 1.0, w).unwrap();
        let alpha = interior_alpha(5, 1.0, &mut rng);
        let ev = evaluate(&p, &alpha, SmoothingConfig::new(1e-12).unwrap()).unwrap();
        let direct = direct_objective(&p, &alpha).unwrap();
        assert!((ev.exact_value - direct).abs() < 1e-8 * (1.0 + direct.abs()));
    }

    #[test]
    fn constructors_validate() {
        let k = SymmetricMatrix::identity(3);
        assert!(TrainingProblem::classification(k.clone(), vec![1.0, 2.0, -1.0], 1.0, 1.0).is_err());
        assert!(TrainingProblem::classification(k.clone(), labels(3), 0.0, 1.0).is_err());
        assert!(TrainingProblem::classification(k.clone(), labels(3), 1.0, -1.0).is_err());
        assert!(TrainingProblem::one_class(k.clone(), 0.0, 1.0).is_err());
        assert!(TrainingProblem::svr(k.clone(), vec![0.0; 3], 1.0, 1.0, -0.1).is_err());
        let p = TrainingProblem::classification(k, labels(3), 1.0, 1.0).unwrap();
        assert!(evaluate(&p, &DVector::zeros(2), SmoothingConfig::new(1e-6).unwrap()).is_err());
    }
}
