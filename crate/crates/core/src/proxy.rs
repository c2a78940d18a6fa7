//! Closed-form proxy kernels.
//!
//! For fixed coefficients the inner kernel-learning problem is a Frobenius
//! projection onto the PSD cone, so the optimal proxy is always a positive
//! part of a rank-one update of the input kernel. Every variant here reuses a
//! cached eigendecomposition of the (possibly rescaled) input kernel and only
//! performs a rank-one update per evaluation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::symlin::{eig, rank_one_update, EigenSystem, SymmetricMatrix};

/// Input kernel together with its eigendecomposition, computed once per
/// training run.
#[derive(Clone, Debug)]
pub struct KernelCache {
    pub k0: Arc<SymmetricMatrix>,
    pub eigen: Arc<EigenSystem>,
}

impl KernelCache {
    pub fn new(k0: SymmetricMatrix) -> Result<Self> {
        let eigen = eig(&k0)?;
        Ok(KernelCache {
            k0: Arc::new(k0),
            eigen: Arc::new(eigen),
        })
    }

    pub fn dim(&self) -> usize {
        self.k0.dim()
    }

    pub fn is_psd(&self) -> bool {
        self.eigen.min_value() >= 0.0
    }
}

/// Strictly positive per-point penalties `h`; the componentwise penalty
/// matrix is `H = h h^T` and `W = diag(h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyWeights {
    h: DVector<f64>,
}

impl PenaltyWeights {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if let Some(bad) = h.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::validation(format!("penalty weight {bad} is not > 0")));
        }
        Ok(PenaltyWeights {
            h: DVector::from_vec(h),
        })
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        PenaltyWeights::new(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn sqrt(&self) -> DVector<f64> {
        self.h.map(f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> DVector<f64> {
        self.h.map(|v| 1.0 / v.sqrt())
    }

    /// `sum_ij h_i h_j (A_ij - B_ij)^2`.
    pub fn weighted_distance_sq(&self, a: &SymmetricMatrix, b: &SymmetricMatrix) -> f64 {
        let diff = a.as_matrix() - b.as_matrix();
        let n = diff.nrows();
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                let d = diff[(i, j)];
                acc += self.h[i] * self.h[j] * d * d;
            }
        }
        acc
    }
}

/// Cache for the componentwise-penalty variant: `eig(W^{1/2} K0 W^{1/2})`.
#[derive(Clone, Debug)]
pub struct WeightedKernelCache {
    pub k0: Arc<SymmetricMatrix>,
    pub weights: PenaltyWeights,
    pub scaled: Arc<SymmetricMatrix>,
    pub eigen: Arc<EigenSystem>,
}

impl WeightedKernelCache {
    pub fn new(k0: SymmetricMatrix, weights: PenaltyWeights) -> Result<Self> {
        if weights.len() != k0.dim() {
            return Err(Error::validation(format!(
                "{} weights for a kernel of dimension {}",
                weights.len(),
                k0.dim()
            )));
        }
        let scaled = k0.congruence_diag(&weights.sqrt());
        let eigen = eig(&scaled)?;
        Ok(WeightedKernelCache {
            k0: Arc::new(k0),
            weights,
            scaled: Arc::new(scaled),
            eigen: Arc::new(eigen),
        })
    }
}

/// `coef * v v^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankOneUpdate {
    pub vector: DVector<f64>,
    pub coef: f64,
}

impl RankOneUpdate {
    pub fn apply(&self, k: &SymmetricMatrix) -> SymmetricMatrix {
        k.add_rank_one(&self.vector, self.coef)
    }
}

/// A realized proxy kernel and how it was built from the input kernel.
#[derive(Clone, Debug)]
pub struct ProxyKernel {
    pub base: Arc<SymmetricMatrix>,
    /// `Y alpha` for classification, `alpha` for SVR and one-class,
    /// `W^{-1} Y alpha` for componentwise penalties.
    pub update_vector: DVector<f64>,
    pub rho: f64,
    /// Whether a PSD projection was applied.
    pub projected: bool,
    pub materialized: SymmetricMatrix,
    /// Spectrum of the matrix that was projected (in the rescaled
    /// coordinates for componentwise penalties). `None` when no projection
    /// was needed.
    pub spectrum: Option<EigenSystem>,
}

impl ProxyKernel {
    /// The update added to the training block, in original coordinates.
    pub fn update(&self) -> RankOneUpdate {
        RankOneUpdate {
            vector: self.update_vector.clone(),
            coef: 1.0 / (4.0 * self.rho),
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("rho must be > 0, got {rho}")))
    }
}

fn check_len(name: &str, len: usize, n: usize) -> Result<()> {
    if len != n {
        return Err(Error::validation(format!("{name} has length {len}, expected {n}")));
    }
    Ok(())
}

/// `Y alpha`.
pub fn label_scaled(alpha: &DVector<f64>, y: &[f64]) -> DVector<f64> {
    DVector::from_fn(alpha.len(), |i, _| alpha[i] * y[i])
}

fn projected_update(cache: &KernelCache, u: DVector<f64>, rho: f64) -> ProxyKernel {
    let spectrum = rank_one_update(&cache.eigen, &u, 1.0 / (4.0 * rho));
    let materialized = spectrum.reconstruct_with(|l| l.max(0.0));
    ProxyKernel {
        base: cache.k0.clone(),
        update_vector: u,
        rho,
        projected: true,
        materialized,
        spectrum: Some(spectrum),
    }
}

/// `K* = (K0 + (Y alpha)(Y alpha)^T / (4 rho))_+`.
pub fn proxy_classification(
    cache: &KernelCache,
    alpha: &DVector<f64>,
    y: &[f64],
    rho: f64,
) -> Result<ProxyKernel> {
    check_rho(rho)?;
    check_len("alpha", alpha.len(), cache.dim())?;
    check_len("labels", y.len(), cache.dim())?;
    Ok(projected_update(cache, label_scaled(alpha, y), rho))
}

/// `K* = (K0 + alpha alpha^T / (4 rho))_+`, shared by SVR and one-class.
pub fn proxy_regression(cache: &KernelCache, alpha: &DVector<f64>, rho: f64) -> Result<ProxyKernel> {
    check_rho(rho)?;
    check_len("alpha", alpha.len(), cache.dim())?;
    Ok(projected_update(cache, alpha.clone(), rho))
}

/// Mercer input: `K* = K0 + (Y alpha)(Y alpha)^T / (4 rho)`, no projection.
pub fn proxy_mercer(
    k0: &Arc<SymmetricMatrix>,
    alpha: &DVector<f64>,
    y: &[f64],
    rho: f64,
) -> Result<ProxyKernel> {
    check_rho(rho)?;
    check_len("alpha", alpha.len(), k0.dim())?;
    check_len("labels", y.len(), k0.dim())?;
    let u = label_scaled(alpha, y);
    let materialized = k0.add_rank_one(&u, 1.0 / (4.0 * rho));
    Ok(ProxyKernel {
        base: k0.clone(),
        update_vector: u,
        rho,
        projected: false,
        materialized,
        spectrum: None,
    })
}

/// Componentwise penalties `H = h h^T`:
/// `K* = W^{-1/2} ((W^{1/2} (K0 + 1/4 (W^{-1} Y a)(W^{-1} Y a)^T) W^{1/2})_+) W^{-1/2}`.
///
/// The inner matrix equals `W^{1/2} K0 W^{1/2} + 1/4 (W^{-1/2} Y a)(W^{-1/2} Y a)^T`,
/// a rank-one update of the cached rescaled kernel. When `K0` is PSD the
/// result reduces to `K0 + 1/4 (W^{-1} Y a)(W^{-1} Y a)^T` without projection.
pub fn proxy_weighted(cache: &WeightedKernelCache, alpha: &DVector<f64>, y: &[f64]) -> Result<ProxyKernel> {
    let n = cache.k0.dim();
    check_len("alpha", alpha.len(), n)?;
    check_len("labels", y.len(), n)?;
    let h = cache.weights.values();
    let ya = label_scaled(alpha, y);
    let update_vector = DVector::from_fn(n, |i, _| ya[i] / h[i]);
    if cache.eigen.min_value() >= 0.0 {
        let materialized = cache.k0.add_rank_one(&update_vector, 0.25);
        return Ok(ProxyKernel {
            base: cache.k0.clone(),
            update_vector,
            rho: 1.0,
            projected: false,
            materialized,
            spectrum: None,
        });
    }
    let inv_sqrt = cache.weights.inv_sqrt();
    let scaled_u = DVector::from_fn(n, |i, _| ya[i] * inv_sqrt[i]);
    let spectrum = rank_one_update(&cache.eigen, &scaled_u, 0.25);
    let materialized = spectrum
        .reconstruct_with(|l| l.max(0.0))
        .congruence_diag(&inv_sqrt);
    Ok(ProxyKernel {
        base: cache.k0.clone(),
        update_vector,
        // coef 1/(4 rho) = 1/4 on the W^{-1} Y alpha vector
        rho: 1.0,
        projected: true,
        materialized,
        spectrum: Some(spectrum),
    })
}

/// `alpha^T e - 1/2 (Y alpha)^T K (Y alpha) + rho |K - K0|_F^2`, the inner
/// objective minimized over PSD `K`.
pub fn inner_objective(
    k0: &SymmetricMatrix,
    alpha: &DVector<f64>,
    y: &[f64],
    rho: f64,
    k: &SymmetricMatrix,
) -> f64 {
    let u = label_scaled(alpha, y);
    alpha.sum() - 0.5 * u.dot(&(k.as_matrix() * &u)) + rho * k.frobenius_distance(k0).powi(2)
}

/// Componentwise counterpart of [`inner_objective`].
pub fn inner_objective_weighted(
    k0: &SymmetricMatrix,
    alpha: &DVector<f64>,
    y: &[f64],
    weights: &PenaltyWeights,
    k: &SymmetricMatrix,
) -> f64 {
    let u = label_scaled(alpha, y);
    alpha.sum() - 0.5 * u.dot(&(k.as_matrix() * &u)) + weights.weighted_distance_sq(k, k0)
}

/// PSD kernel over train ∪ test for evaluation: the training block receives
/// the model's rank-one update, then the whole matrix is projected.
///
/// `cross` is `n_test x n_train`; `test` is `n_test x n_test` (may be empty).
pub fn full_kernel_for_testing(
    train_k0: &SymmetricMatrix,
    cross: &DMatrix<f64>,
    test: &DMatrix<f64>,
    update: &RankOneUpdate,
) -> Result<SymmetricMatrix> {
    let n_train = train_k0.dim();
    let n_test = test.nrows();
    if cross.nrows() != n_test || cross.ncols() != n_train || test.ncols() != n_test {
        return Err(Error::validation(format!(
            "block shapes inconsistent: train {n_train}, cross {}x{}, test {}x{}",
            cross.nrows(),
            cross.ncols(),
            test.nrows(),
            test.ncols()
        )));
    }
    check_len("update vector", update.vector.len(), n_train)?;
    let n = n_train + n_test;
    let updated = update.apply(train_k0);
    let mut full = DMatrix::zeros(n, n);
    full.view_mut((0, 0), (n_train, n_train)).copy_from(updated.as_matrix());
    full.view_mut((n_train, 0), (n_test, n_train)).copy_from(cross);
    full.view_mut((0, n_train), (n_train, n_test)).copy_from(&cross.transpose());
    full.view_mut((n_train, n_train), (n_test, n_test)).copy_from(test);
    let full = SymmetricMatrix::new(full)?;
    let es = eig(&full)?;
    if es.min_value() >= 0.0 {
        return Ok(full);
    }
    Ok(es.reconstruct_with(|l| l.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symlin::psd_part;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_indefinite(n: usize, rng: &mut impl Rng) -> SymmetricMatrix {
        SymmetricMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_labels(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|i| if i % 2 == 0 || rng.random_bool(0.3) { 1.0 } else { -1.0 }).collect()
    }

    /// Minimizes the inner objective over the PSD cone by projected gradient.
    /// Step sizes shrink towards `0.45 / rho`, below the `1 / (2 rho)` that
    /// would reproduce the closed form in one step.
    fn cone_descent_oracle(k0: &SymmetricMatrix, u: &DVector<f64>, rho: f64) -> SymmetricMatrix {
        let mut k = psd_part(k0).unwrap();
        let uu = u * u.transpose();
        for it in 1..=10_000 {
            let step = (0.45 + 0.2 / it as f64) / (2.0 * rho);
            let grad = (k.as_matrix() - k0.as_matrix()) * (2.0 * rho) - &uu * 0.5;
            let next = psd_part(&SymmetricMatrix::new(k.as_matrix() - grad * step).unwrap()).unwrap();
            let moved = next.frobenius_distance(&k);
            k = next;
            if moved < 1e-14 {
                break;
            }
        }
        k
    }

    #[test]
    fn zero_alpha_gives_positive_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let k0 = random_indefinite(6, &mut rng);
        let cache = KernelCache::new(k0.clone()).unwrap();
        let y = random_labels(6, &mut rng);
        let p = proxy_classification(&cache, &DVector::zeros(6), &y, 1.0).unwrap();
        assert!(p.materialized.frobenius_distance(&psd_part(&k0).unwrap()) < 1e-12);
        let r = proxy_regression(&cache, &DVector::zeros(6), 1.0).unwrap();
        assert!(r.materialized.frobenius_distance(&psd_part(&k0).unwrap()) < 1e-12);
    }

    #[test]
    fn psd_input_needs_no_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let k0 = SymmetricMatrix::new(&a * a.transpose()).unwrap();
        let cache = KernelCache::new(k0.clone()).unwrap();
        let y = random_labels(5, &mut rng);
        let alpha = DVector::from_fn(5, |_, _| rng.random_range(0.0..1.0));
        let p = proxy_classification(&cache, &alpha, &y, 0.7).unwrap();
        let m = proxy_mercer(&cache.k0, &alpha, &y, 0.7).unwrap();
        assert!(!m.projected);
        assert_eq!(m.materialized, k0.add_rank_one(&label_scaled(&alpha, &y), 1.0 / 2.8));
        assert!(p.materialized.frobenius_distance(&m.materialized) < 1e-10);
    }

    #[test]
    fn classification_matches_cone_descent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let k0 = random_indefinite(6, &mut rng);
        let cache = KernelCache::new(k0.clone()).unwrap();
        let y = random_labels(6, &mut rng);
        let alpha = DVector::from_fn(6, |_, _| rng.random_range(0.0..1.0));
        let p = proxy_classification(&cache, &alpha, &y, 1.0).unwrap();
        let oracle = cone_descent_oracle(&k0, &label_scaled(&alpha, &y), 1.0);
        assert!(p.materialized.frobenius_distance(&oracle) < 1e-5);
    }

    #[test]
    fn regression_matches_oracle_and_all_positive_classification() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let k0 = random_indefinite(7, &mut rng);
        let cache = KernelCache::new(k0.clone()).unwrap();
        let alpha = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
        let r = proxy_regression(&cache, &alpha, 2.0).unwrap();
        let c = proxy_classification(&cache, &alpha, &[1.0; 7], 2.0).unwrap();
        assert!(r.materialized.frobenius_distance(&c.materialized) < 1e-14);
        let oracle = cone_descent_oracle(&k0, &alpha, 2.0);
        assert!(r.materialized.frobenius_distance(&oracle) < 1e-5);
    }

    #[test]
    fn proxy_is_optimal_against_random_psd_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let k0 = random_indefinite(6, &mut rng);
        let cache = KernelCache::new(k0.clone()).unwrap();
        let y = random_labels(6, &mut rng);
        let alpha = DVector::from_fn(6, |_, _| rng.random_range(0.0..2.0));
        let rho = 0.5;
        let best = proxy_classification(&cache, &alpha, &y, rho).unwrap().materialized;
        let g_best = inner_objective(&k0, &alpha, &y, rho, &best);
        for _ in 0..100 {
            let b = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-0.5..0.5));
            let cand = SymmetricMatrix::new(best.as_matrix() + &b * b.transpose() * 0.1).unwrap();
            let cand = psd_part(&cand).unwrap();
            assert!(g_best <= inner_objective(&k0, &alpha, &y, rho, &cand) + 1e-12);
        }
    }

    #[test]
    fn rho_limit_approaches_positive_part_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let k0 = random_indefinite(8, &mut rng);
        let cache = KernelCache::new(k0.clone()).unwrap();
        let y = random_labels(8, &mut rng);
        let alpha = DVector::from_fn(8, |_, _| rng.random_range(0.0..1.0));
        let target = psd_part(&k0).unwrap();
        let mut prev = f64::INFINITY;
        for e in 1..=6 {
            let p = proxy_classification(&cache, &alpha, &y, 10f64.powi(e)).unwrap();
            let dist = p.materialized.frobenius_distance(&target);
            assert!(dist < prev);
            prev = dist;
        }
        assert!(prev < 1e-4 * k0.frobenius_norm());
    }

    #[test]
    fn uniform_weights_reproduce_classification() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let k0 = random_indefinite(6, &mut rng);
        let y = random_labels(6, &mut rng);
        let alpha = DVector::from_fn(6, |_, _| rng.random_range(0.0..1.0));
        let rho: f64 = 2.5;
        // H = h h^T = rho e e^T  <=>  h = sqrt(rho)
        let weighted = WeightedKernelCache::new(k0.clone(), PenaltyWeights::uniform(6, rho.sqrt()).unwrap()).unwrap();
        let cache = KernelCache::new(k0).unwrap();
        let a = proxy_weighted(&weighted, &alpha, &y).unwrap();
        let b = proxy_classification(&cache, &alpha, &y, rho).unwrap();
        assert!((a.materialized.as_matrix() - b.materialized.as_matrix()).amax() < 1e-10);
    }

    #[test]
    fn weighted_zero_alpha_is_weighted_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let k0 = random_indefinite(5, &mut rng);
        let h: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..2.0)).collect();
        let w = PenaltyWeights::new(h).unwrap();
        let cache = WeightedKernelCache::new(k0.clone(), w.clone()).unwrap();
        let p = proxy_weighted(&cache, &DVector::zeros(5), &[1.0, -1.0, 1.0, -1.0, 1.0]).unwrap();
        let expected = psd_part(&k0.congruence_diag(&w.sqrt()))
            .unwrap()
            .congruence_diag(&w.inv_sqrt());
        assert!(p.materialized.frobenius_distance(&expected) < 1e-12);
    }

    #[test]
    fn weighted_psd_input_is_plain_rank_one_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let k0 = SymmetricMatrix::new(&a * a.transpose() + DMatrix::identity(4, 4) * 0.1).unwrap();
        let h = vec![0.7, 1.3, 1.0, 1.9];
        let w = PenaltyWeights::new(h.clone()).unwrap();
        let cache = WeightedKernelCache::new(k0.clone(), w).unwrap();
        let y = [1.0, -1.0, -1.0, 1.0];
        let alpha = DVector::from_vec(vec![0.3, 0.1, 0.6, 0.4]);
        let p = proxy_weighted(&cache, &alpha, &y).unwrap();
        assert!(!p.projected);
        // W^{-1/2} (W^{1/2} K0 W^{1/2} + 1/4 u u^T) W^{-1/2} with u = W^{-1/2} Y a
        let v = DVector::from_fn(4, |i, _| y[i] * alpha[i] / h[i]);
        let expected = k0.add_rank_one(&v, 0.25);
        assert!(p.materialized.frobenius_distance(&expected) < 1e-12);
    }

    #[test]
    fn weight_and_rho_validation() {
        assert!(PenaltyWeights::new(vec![1.0, 0.0]).is_err());
        assert!(PenaltyWeights::new(vec![1.0, -2.0]).is_err());
        let cache = KernelCache::new(SymmetricMatrix::identity(2)).unwrap();
        let a = DVector::zeros(2);
        assert!(proxy_classification(&cache, &a, &[1.0, -1.0], 0.0).is_err());
        assert!(proxy_classification(&cache, &a, &[1.0, -1.0], -1.0).is_err());
        assert!(proxy_regression(&cache, &DVector::zeros(3), 1.0).is_err());
    }

    #[test]
    fn full_kernel_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let k0 = random_indefinite(4, &mut rng);
        let cache = KernelCache::new(k0.clone()).unwrap();
        let y = [1.0, -1.0, 1.0, -1.0];
        let alpha = DVector::from_vec(vec![0.5, 0.2, 0.1, 0.4]);
        let p = proxy_classification(&cache, &alpha, &y, 1.0).unwrap();
        let full = full_kernel_for_testing(&k0, &DMatrix::zeros(0, 4), &DMatrix::zeros(0, 0), &p.update()).unwrap();
        assert!(full.frobenius_distance(&p.materialized) < 1e-10);

        let x = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = &x * x.transpose();
        let train = SymmetricMatrix::new(g.view((0, 0), (4, 4)).into_owned()).unwrap();
        let zero = RankOneUpdate { vector: DVector::zeros(4), coef: 0.25 };
        let full = full_kernel_for_testing(
            &train,
            &g.view((4, 0), (2, 4)).into_owned(),
            &g.view((4, 4), (2, 2)).into_owned(),
            &zero,
        )
        .unwrap();
        assert!((full.as_matrix() - &g).amax() < 1e-12);

        assert!(full_kernel_for_testing(&train, &DMatrix::zeros(2, 3), &DMatrix::zeros(2, 2), &zero).is_err());
    }

    #[test]
    fn full_kernel_matches_direct_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let all = random_indefinite(6, &mut rng);
        let m = all.as_matrix();
        let train = SymmetricMatrix::new(m.view((0, 0), (4, 4)).into_owned()).unwrap();
        let cross = m.view((4, 0), (2, 4)).into_owned();
        let test = m.view((4, 4), (2, 2)).into_owned();
        let upd = RankOneUpdate {
            vector: DVector::from_vec(vec![0.4, -0.3, 0.0, 0.8]),
            coef: 0.5,
        };
        let full = full_kernel_for_testing(&train, &cross, &test, &upd).unwrap();
        let mut assembled = m.clone();
        assembled.view_mut((0, 0), (4, 4)).ger(0.5, &upd.vector, &upd.vector, 1.0);
        let oracle = psd_part(&SymmetricMatrix::new(assembled.clone()).unwrap()).unwrap();
        assert!(full.frobenius_distance(&oracle) < 1e-10);
        assert!(eig(&full).unwrap().min_value() >= -1e-8);
        // the training block moved by at most the projection distance
        let block = full.as_matrix().view((0, 0), (4, 4)).into_owned();
        let moved = (block - assembled.view((0, 0), (4, 4))).norm();
        assert!(moved <= oracle.frobenius_distance(&SymmetricMatrix::new(assembled).unwrap()) + 1e-12);
    }
}
