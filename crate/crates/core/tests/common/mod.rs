//! Test-side oracles. Nothing here calls the library's numerical routines.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use indefsvm::kernelbank::LabeledDataset;

/// Cyclic Jacobi eigendecomposition; eigenvalues ascending, eigenvectors in
/// columns.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-16 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = DVector::from_fn(n, |k, _| a[(order[k], order[k])]);
    let vectors = DMatrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    (values, vectors)
}

pub fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = jacobi_eigen(m);
    let mut scaled = vecs.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(vals[k]);
    }
    let out = scaled * vecs.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(0.0))
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = Normal::new(0.0, 1.0).unwrap();
    let a = DMatrix::from_fn(n, n, |_, _| g.sample(rng));
    (&a + a.transpose()) * 0.5
}

/// Symmetric with at least one clearly negative eigenvalue.
pub fn random_indefinite(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    loop {
        let m = random_symmetric(rng, n);
        let (vals, _) = jacobi_eigen(&m);
        if vals[0] < -0.1 && vals[n - 1] > 0.1 {
            return m;
        }
    }
}

/// `A A^T / n + shift I`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let g = Normal::new(0.0, 1.0).unwrap();
    let a = DMatrix::from_fn(n, n, |_, _| g.sample(rng));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * shift
}

/// Labels with both classes present.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        if y.contains(&1.0) && y.contains(&-1.0) {
            return y;
        }
    }
}

/// Random point of `{0 <= a <= c, y^T a = 0}`: uniform draw, then the larger
/// class mass is scaled down to match the smaller.
pub fn random_feasible_alpha(rng: &mut ChaCha8Rng, y: &[f64], c: f64) -> DVector<f64> {
    let mut a = DVector::from_fn(y.len(), |_, _| rng.random_range(0.05..0.95) * c);
    let pos: f64 = (0..y.len()).filter(|&i| y[i] > 0.0).map(|i| a[i]).sum();
    let neg: f64 = (0..y.len()).filter(|&i| y[i] < 0.0).map(|i| a[i]).sum();
    let (shrink, ratio) = if pos > neg { (1.0, neg / pos) } else { (-1.0, pos / neg) };
    for i in 0..y.len() {
        if y[i] == shrink {
            a[i] *= ratio;
        }
    }
    a
}

/// `-1/2 u^T K u + sum_ij H_ij (K - K0)_ij^2` minimized over PSD `K` by
/// projected gradient; `h` gives `H = h h^T`.
pub fn inner_min_pg(k0: &DMatrix<f64>, u: &DVector<f64>, h: &DVector<f64>, max_iter: usize) -> DMatrix<f64> {
    let n = k0.nrows();
    let hh = h * h.transpose();
    let lip = 2.0 * hh.max();
    // half the 1/L step so the iteration does not land on a closed form in
    // one move
    let step = 0.5 / lip;
    let uu = u * u.transpose();
    let mut k = psd_project(k0);
    for _ in 0..max_iter {
        let grad = &uu * -0.5 + (&k - k0).component_mul(&hh) * 2.0;
        let next = psd_project(&(&k - grad * step));
        let change = (&next - &k).norm();
        k = next;
        if change <= 1e-15 * (1.0 + k.norm()) {
            break;
        }
    }
    assert_eq!(k.nrows(), n);
    k
}

/// Two Gaussian clouds at `(+-sep, 0)`, alternating labels starting with +1.
pub fn two_clouds(rng: &mut ChaCha8Rng, n: usize, sep: f64) -> LabeledDataset {
    let g = Normal::new(0.0, 1.0).unwrap();
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let l = if i % 2 == 0 { 1.0 } else { -1.0 };
        points.push(vec![l * sep + g.sample(rng), g.sample(rng)]);
        labels.push(l);
    }
    LabeledDataset::new(points, labels).unwrap()
}

/// Bound pattern of one coordinate in the enumeration oracles.
#[derive(Clone, Copy, PartialEq)]
enum Slot {
    Lower,
    Upper,
    Zero,
    Free(f64),
}

/// `max p^T a - 1/2 a^T Q a` over `lo <= a <= hi`, `s^T a = b` by trying every
/// assignment of each coordinate to a bound or the free set. `slots` lists the
/// choices per coordinate; a `Free(sign)` choice with nonzero sign restricts
/// the free value to that sign and adds `eps * sign` to the linear cost (the
/// SVR split of `|a|`). Requires `Q` positive definite on free sets.
fn enumerate_qp(
    q: &DMatrix<f64>,
    p: &DVector<f64>,
    s: &[f64],
    b: f64,
    lo: f64,
    hi: f64,
    eps: f64,
    slots: &[Slot],
) -> f64 {
    let n = p.len();
    let k = slots.len();
    let total = k.pow(n as u32);
    let mut best = f64::NEG_INFINITY;
    let mut pattern = vec![Slot::Lower; n];
    for code in 0..total {
        let mut c = code;
        for slot in pattern.iter_mut() {
            *slot = slots[c % k];
            c /= k;
        }
        let free: Vec<usize> = (0..n).filter(|&i| matches!(pattern[i], Slot::Free(_))).collect();
        let mut a = DVector::zeros(n);
        for i in 0..n {
            a[i] = match pattern[i] {
                Slot::Lower => lo,
                Slot::Upper => hi,
                _ => 0.0,
            };
        }
        let lin = |i: usize, pat: &[Slot]| match pat[i] {
            Slot::Free(sg) => p[i] - eps * sg,
            _ => p[i],
        };
        let fixed_sum: f64 = (0..n).filter(|i| !free.contains(i)).map(|i| s[i] * a[i]).sum();
        if free.is_empty() {
            if (fixed_sum - b).abs() > 1e-12 {
                continue;
            }
        } else {
            // [Q_FF s_F; s_F^T 0] [a_F; nu] = [p_F - Q_FB a_B; b - s_B^T a_B]
            let m = free.len();
            let mut sys = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (cc, &j) in free.iter().enumerate() {
                    sys[(r, cc)] = q[(i, j)];
                }
                sys[(r, m)] = s[i];
                sys[(m, r)] = s[i];
                let coupling: f64 = (0..n).filter(|j| !free.contains(j)).map(|j| q[(i, j)] * a[j]).sum();
                rhs[r] = lin(i, &pattern) - coupling;
            }
            rhs[m] = b - fixed_sum;
            let Some(sol) = sys.lu().solve(&rhs) else { continue };
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                let v = sol[r];
                let in_box = v >= lo - 1e-12 && v <= hi + 1e-12;
                let sign_ok = match pattern[i] {
                    Slot::Free(sg) if sg > 0.0 => v >= -1e-12,
                    Slot::Free(sg) if sg < 0.0 => v <= 1e-12,
                    _ => true,
                };
                ok &= in_box && sign_ok;
                a[i] = v.clamp(lo, hi);
            }
            if !ok {
                continue;
            }
        }
        let linear: f64 = (0..n).map(|i| p[i] * a[i] - eps * a[i].abs()).sum();
        let value = linear - 0.5 * a.dot(&(q * &a));
        best = best.max(value);
    }
    best
}

/// Optimal value of `max_{0<=a<=C, y^T a = 0} e^T a - 1/2 a^T Y K Y a`.
pub fn svm_dual_oracle(k: &DMatrix<f64>, y: &[f64], c: f64) -> f64 {
    let n = y.len();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k[(i, j)]);
    let p = DVector::from_element(n, 1.0);
    enumerate_qp(&q, &p, y, 0.0, 0.0, c, 0.0, &[Slot::Lower, Slot::Upper, Slot::Free(0.0)])
}

/// Optimal value of `max_{-C<=a<=C, e^T a = 0} y^T a - eps |a|_1 - 1/2 a^T K a`.
pub fn svr_dual_oracle(k: &DMatrix<f64>, targets: &[f64], c: f64, eps: f64) -> f64 {
    let n = targets.len();
    let p = DVector::from_column_slice(targets);
    enumerate_qp(
        k,
        &p,
        &vec![1.0; n],
        0.0,
        -c,
        c,
        eps,
        &[Slot::Lower, Slot::Upper, Slot::Zero, Slot::Free(1.0), Slot::Free(-1.0)],
    )
}

/// Optimal value of `max_{0<=a<=1/(nu n), e^T a = 1} -1/2 a^T K a`.
pub fn one_class_oracle(k: &DMatrix<f64>, nu: f64) -> f64 {
    let n = k.nrows();
    let p = DVector::zeros(n);
    enumerate_qp(
        k,
        &p,
        &vec![1.0; n],
        1.0,
        0.0,
        1.0 / (nu * n as f64),
        0.0,
        &[Slot::Lower, Slot::Upper, Slot::Free(0.0)],
    )
}
