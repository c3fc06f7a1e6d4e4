#![allow(dead_code)]

use cwlab_core::gmm::{GaussianComponent, Mixture};
use cwlab_core::linalg::SymMat;
use cwlab_core::Covariance;
use rand::Rng;

pub fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random SPD matrix with eigenvalues in `[lo, hi]`: `Q diag(λ) Qᵀ` for a
/// Gram–Schmidt orthogonal `Q`.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> SymMat<f64> {
    let q = random_orthogonal(rng, d);
    let lam: Vec<f64> = (0..d).map(|_| uniform(rng, lo, hi)).collect();
    let mut m = SymMat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let v: f64 = (0..d).map(|k| q[i][k] * lam[k] * q[j][k]).sum();
            m.set(i, j, v);
        }
    }
    m.symmetrized()
}

/// Rows of a random orthogonal matrix.
pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| uniform(rng, -1.0, 1.0)).collect();
        for r in &rows {
            let ip: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= ip * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 {
            rows.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    rows
}

pub fn rotate(q: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    q.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Mixture with `k` components in `d` dimensions: means in `[-3, 3]^d`,
/// covariance eigenvalues in `[0.5, 2]`, mixed covariance representations.
pub fn random_mixture<R: Rng>(rng: &mut R, k: usize, d: usize) -> Mixture<f64> {
    let comps = (0..k)
        .map(|c| {
            let mean: Vec<f64> = (0..d).map(|_| uniform(rng, -3.0, 3.0)).collect();
            let cov = match c % 3 {
                0 => Covariance::Isotropic(uniform(rng, 0.5, 2.0)),
                1 => Covariance::Diagonal((0..d).map(|_| uniform(rng, 0.5, 2.0)).collect()),
                _ => Covariance::Full(random_spd(rng, d, 0.5, 2.0)),
            };
            GaussianComponent::new(mean, cov).unwrap()
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| uniform(rng, 0.2, 1.0)).collect();
    Mixture::normalized(comps, raw).unwrap()
}

/// One-dimensional mixture with means in `[-lim, lim]` and variances in `[0.3, 3]`.
pub fn random_mixture_1d<R: Rng>(rng: &mut R, k: usize, lim: f64) -> Mixture<f64> {
    let comps = (0..k)
        .map(|_| GaussianComponent::new(vec![uniform(rng, -lim, lim)], Covariance::Isotropic(uniform(rng, 0.3, 3.0))).unwrap())
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| uniform(rng, 0.2, 1.0)).collect();
    Mixture::normalized(comps, raw).unwrap()
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic two-sample KS p-value (Kolmogorov series).
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}
