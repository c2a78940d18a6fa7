//! Dense symmetric linear algebra.
//!
//! Holds the symmetric matrix newtype, a full eigendecomposition, projection
//! onto the positive semidefinite cone, and the rank-one eigendecomposition
//! update that every proxy-kernel evaluation goes through.

use std::ops::Index;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Sweep cap handed to the implicit-shift QR iteration.
pub const EIG_MAX_SWEEPS: usize = 10_000;

/// Relative size below which a component of `V^T u` is treated as zero.
pub const DEFLATION_REL_TOL: f64 = 1e-12;

/// Dense real symmetric matrix. Symmetrized on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix {
    data: DMatrix<f64>,
}

impl SymmetricMatrix {
    /// Wraps `m`, replacing it by `(m + m^T) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::validation(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::validation("matrix must have dimension >= 1"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("matrix has non-finite entries"));
        }
        let data = (&m + m.transpose()) * 0.5;
        Ok(SymmetricMatrix { data })
    }

    /// Builds a matrix from the upper triangle of `f`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("matrix must have dimension >= 1"));
        }
        let mut data = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        SymmetricMatrix::new(data)
    }

    pub fn identity(n: usize) -> Self {
        SymmetricMatrix {
            data: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        SymmetricMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Already-symmetric data; skips validation.
    pub(crate) fn from_trusted(data: DMatrix<f64>) -> Self {
        debug_assert_eq!(data.nrows(), data.ncols());
        SymmetricMatrix { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn frobenius_distance(&self, other: &SymmetricMatrix) -> f64 {
        (&self.data - &other.data).norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.amax()
    }

    /// `Tr(self * other)`.
    pub fn trace_product(&self, other: &SymmetricMatrix) -> f64 {
        self.data.dot(&other.data)
    }

    /// `self + coef * u u^T`.
    pub fn add_rank_one(&self, u: &DVector<f64>, coef: f64) -> SymmetricMatrix {
        let mut data = self.data.clone();
        data.ger(coef, u, u, 1.0);
        SymmetricMatrix::from_trusted(data)
    }

    /// `self + shift * I`.
    pub fn add_identity(&self, shift: f64) -> SymmetricMatrix {
        let mut data = self.data.clone();
        for i in 0..self.dim() {
            data[(i, i)] += shift;
        }
        SymmetricMatrix::from_trusted(data)
    }

    /// `D self D` for the diagonal matrix `D = diag(scale)`.
    pub fn congruence_diag(&self, scale: &DVector<f64>) -> SymmetricMatrix {
        let n = self.dim();
        let data = DMatrix::from_fn(n, n, |i, j| scale[i] * self.data[(i, j)] * scale[j]);
        SymmetricMatrix::from_trusted(data)
    }

    /// Largest `|m_ij - m_ji|` of an arbitrary square matrix.
    pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows().min(m.ncols());
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for SymmetricMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.data[idx]
    }
}

/// Orthonormal eigenvectors (columns) with eigenvalues sorted ascending.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min_value(&self) -> f64 {
        self.values[0]
    }

    pub fn max_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `V diag(f(lambda)) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[k]);
        }
        let m = scaled * self.vectors.transpose();
        SymmetricMatrix::from_trusted((&m + m.transpose()) * 0.5)
    }

    pub fn reconstruct(&self) -> SymmetricMatrix {
        self.reconstruct_with(|l| l)
    }

    /// `max |V^T V - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.dim();
        let gram = self.vectors.transpose() * &self.vectors;
        (gram - DMatrix::<f64>::identity(n, n)).amax()
    }

    fn from_pairs(mut pairs: Vec<(f64, DVector<f64>)>, n: usize) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut vectors = DMatrix::zeros(n, pairs.len());
        let mut values = DVector::zeros(pairs.len());
        for (k, (value, col)) in pairs.into_iter().enumerate() {
            values[k] = value;
            vectors.set_column(k, &col);
        }
        EigenSystem { vectors, values }
    }
}

/// Full eigendecomposition by Householder tridiagonalization followed by
/// implicit-shift QR.
pub fn eig(x: &SymmetricMatrix) -> Result<EigenSystem> {
    let n = x.dim();
    let decomposition = SymmetricEigen::try_new(x.as_matrix().clone(), f64::EPSILON, EIG_MAX_SWEEPS)
        .ok_or(Error::EigenNonConvergence {
            max_iter: EIG_MAX_SWEEPS,
        })?;
    let pairs = (0..n)
        .map(|k| {
            (
                decomposition.eigenvalues[k],
                decomposition.eigenvectors.column(k).into_owned(),
            )
        })
        .collect();
    Ok(EigenSystem::from_pairs(pairs, n))
}

/// Positive part `sum_i max(0, lambda_i) v_i v_i^T`: the Frobenius-nearest
/// PSD matrix.
pub fn psd_part(x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    Ok(eig(x)?.reconstruct_with(|l| l.max(0.0)))
}

/// Eigendecomposition of `X + rho u u^T` given `base = eig(X)`.
///
/// Rotates `u` into the eigenbasis, deflates negligible components and
/// near-equal eigenvalues, solves the secular equation in each interlacing
/// interval, and rebuilds eigenvectors from a corrected vector for which the
/// computed eigenvalues are exact. Cost is `O(n^2)` plus one product with
/// the base eigenvectors.
pub fn rank_one_update(base: &EigenSystem, u: &DVector<f64>, rho: f64) -> EigenSystem {
    assert_eq!(u.len(), base.dim(), "update vector has wrong length");
    let w = base.vectors.tr_mul(u);
    if rho == 0.0 || w.norm() == 0.0 {
        return base.clone();
    }
    if rho > 0.0 {
        let d: Vec<f64> = base.values.iter().copied().collect();
        diagonal_plus_rank_one(&d, &base.vectors, w.as_slice(), rho)
    } else {
        // X - |rho| u u^T = -((-X) + |rho| u u^T)
        let d: Vec<f64> = base.values.iter().map(|v| -v).collect();
        let flipped = diagonal_plus_rank_one(&d, &base.vectors, w.as_slice(), -rho);
        let pairs = (0..flipped.dim())
            .map(|k| (-flipped.values[k], flipped.vectors.column(k).into_owned()))
            .collect();
        EigenSystem::from_pairs(pairs, base.dim())
    }
}

struct ActiveEntry {
    d: f64,
    z: f64,
    col: DVector<f64>,
}

/// Eigensystem of `V (diag(d) + rho w w^T) V^T` for `rho > 0`.
fn diagonal_plus_rank_one(d: &[f64], v: &DMatrix<f64>, w: &[f64], rho: f64) -> EigenSystem {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));

    let znorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dmax = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 8.0 * f64::EPSILON * dmax.max(rho * znorm * znorm);

    let mut deflated: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut active: Vec<ActiveEntry> = Vec::with_capacity(n);
    for &i in &order {
        let zi = w[i];
        if zi.abs() <= DEFLATION_REL_TOL * znorm || rho * zi.abs() * znorm <= tol {
            deflated.push((d[i], v.column(i).into_owned()));
            continue;
        }
        let col = v.column(i).into_owned();
        if let Some(last) = active.last_mut() {
            // Givens rotation in the (last, i) plane that zeroes one z component;
            // accepted when the dropped off-diagonal coupling is negligible.
            let tau = last.z.hypot(zi);
            let (c, s) = (zi / tau, last.z / tau);
            if ((d[i] - last.d) * c * s).abs() <= tol {
                let d_dropped = c * c * last.d + s * s * d[i];
                let d_kept = s * s * last.d + c * c * d[i];
                let dropped_col = &last.col * c - &col * s;
                let kept_col = &last.col * s + &col * c;
                deflated.push((d_dropped, dropped_col));
                last.d = d_kept;
                last.z = tau;
                last.col = kept_col;
                continue;
            }
        }
        active.push(ActiveEntry { d: d[i], z: zi, col });
    }

    let k = active.len();
    let mut pairs = deflated;
    if k == 1 {
        let e = active.pop().unwrap();
        pairs.push((e.d + rho * e.z * e.z, e.col));
        return EigenSystem::from_pairs(pairs, n);
    }
    if k == 0 {
        return EigenSystem::from_pairs(pairs, n);
    }

    let ds: Vec<f64> = active.iter().map(|e| e.d).collect();
    let zs: Vec<f64> = active.iter().map(|e| e.z).collect();
    let roots: Vec<SecularRoot> = (0..k).map(|i| solve_secular_root(&ds, &zs, rho, i)).collect();

    // diff(j, i) = d_j - mu_i, formed relative to the root's origin pole.
    let diff = |j: usize, i: usize| -> f64 { (ds[j] - ds[roots[i].origin]) - roots[i].tau };

    // Corrected vector z_hat for which the computed roots are exact eigenvalues.
    let mut zhat = vec![0.0; k];
    for j in 0..k {
        let mut prod = -diff(j, k - 1) / rho;
        for i in 0..j {
            prod *= -diff(j, i) / (ds[i] - ds[j]);
        }
        for i in j..(k - 1) {
            prod *= -diff(j, i) / (ds[i + 1] - ds[j]);
        }
        zhat[j] = prod.max(0.0).sqrt().copysign(zs[j]);
    }

    let mut q = DMatrix::zeros(k, k);
    for i in 0..k {
        let mut col = DVector::from_fn(k, |j, _| zhat[j] / diff(j, i));
        let norm = col.norm();
        col /= norm;
        q.set_column(i, &col);
    }
    let mut basis = DMatrix::zeros(v.nrows(), k);
    for (j, e) in active.iter().enumerate() {
        basis.set_column(j, &e.col);
    }
    let vectors = basis * q;
    for (i, root) in roots.iter().enumerate() {
        pairs.push((ds[root.origin] + root.tau, vectors.column(i).into_owned()));
    }
    EigenSystem::from_pairs(pairs, n)
}

#[derive(Clone, Copy, Debug)]
struct SecularRoot {
    /// Index of the pole used as the origin.
    origin: usize,
    /// Root minus `d[origin]`.
    tau: f64,
}

/// Finds the `i`-th root of `1 + rho sum_j z_j^2 / (d_j - lambda)` for
/// strictly increasing `d` and nonzero `z`.
///
/// Works in coordinates shifted to the nearer pole so that `d_j - lambda` is
/// computed without cancellation. Steps come from a two-pole rational model
/// of the lower and upper sums; any step leaving the bracket falls back to
/// bisection.
fn solve_secular_root(d: &[f64], z: &[f64], rho: f64, i: usize) -> SecularRoot {
    let k = d.len();
    let last = i == k - 1;
    let (origin, mut lo, mut hi) = if last {
        let znorm2: f64 = z.iter().map(|x| x * x).sum();
        (i, 0.0, rho * znorm2)
    } else {
        let mid = 0.5 * (d[i] + d[i + 1]);
        let fmid = 1.0 + rho * (0..k).map(|j| z[j] * z[j] / (d[j] - mid)).sum::<f64>();
        if fmid > 0.0 {
            (i, 0.0, mid - d[i])
        } else {
            (i + 1, mid - d[i + 1], 0.0)
        }
    };
    let delta: Vec<f64> = d.iter().map(|dj| dj - d[origin]).collect();

    let eval = |tau: f64| -> (f64, f64, f64, f64) {
        let (mut psi, mut dpsi, mut phi, mut dphi) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..k {
            let t = z[j] / (delta[j] - tau);
            if j <= i {
                psi += rho * z[j] * t;
                dpsi += rho * t * t;
            } else {
                phi += rho * z[j] * t;
                dphi += rho * t * t;
            }
        }
        (psi, dpsi, phi, dphi)
    };

    let mut tau = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (psi, dpsi, phi, dphi) = eval(tau);
        let f = 1.0 + psi + phi;
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        if f.abs() <= 4.0 * f64::EPSILON * (1.0 + psi.abs() + phi.abs())
            || hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs())
        {
            break;
        }

        let pole_lo = delta[i] - tau;
        let candidate = if last {
            let b = dpsi * pole_lo * pole_lo;
            let a = f - b / pole_lo;
            if a != 0.0 {
                Some(tau + pole_lo + b / a)
            } else {
                None
            }
        } else {
            let pole_hi = delta[i + 1] - tau;
            let b = dpsi * pole_lo * pole_lo;
            let e = dphi * pole_hi * pole_hi;
            let a = f - b / pole_lo - e / pole_hi;
            // a s^2 + c1 s + c0 = 0 in the step s
            let c0 = pole_lo * pole_hi * f;
            let c1 = -(a * (pole_lo + pole_hi) + b + e);
            quadratic_root_in(a, c1, c0, lo - tau, hi - tau).map(|s| tau + s)
        };
        let next = match candidate {
            Some(t) if t > lo && t < hi => t,
            _ => 0.5 * (lo + hi),
        };
        if (next - tau).abs() <= 2.0 * f64::EPSILON * next.abs() {
            tau = next;
            break;
        }
        tau = next;
    }
    SecularRoot { origin, tau }
}

/// Root of `a s^2 + b s + c` lying strictly inside `(lo, hi)`, if any.
fn quadratic_root_in(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> Option<f64> {
    let inside = |s: f64| s.is_finite() && s > lo && s < hi;
    if a == 0.0 {
        if b == 0.0 {
            return None;
        }
        let s = -c / b;
        return inside(s).then_some(s);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let candidates = [q / a, if q != 0.0 { c / q } else { f64::NAN }];
    candidates.into_iter().find(|&s| inside(s))
}
