//! One-dimensional TV by adaptive Simpson quadrature, used as an oracle.

use crate::divergence::{DivergenceEstimate, DivergenceMethod};
use crate::error::{Error, Result};
use crate::gmm::Mixture;

/// Absolute tolerance of [`tv_quadrature_1d`].
pub const QUAD_TOL: f64 = 1e-8;
/// Half-width of the integration window around each mean, in standard deviations.
pub const WINDOW_SIGMAS: f64 = 12.0;

const MAX_DEPTH: u32 = 48;

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson integral of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

/// `(mean, standard deviation)` of every component of a 1D mixture.
fn moments(m: &Mixture<f64>) -> Vec<(f64, f64)> {
    m.components()
        .iter()
        .map(|c| (c.mean()[0], c.dense_covariance().get(0, 0).sqrt()))
        .collect()
}

/// Sorted, merged union of `[μ − 12σ, μ + 12σ]` over all components of both.
fn windows(p: &Mixture<f64>, q: &Mixture<f64>) -> (Vec<(f64, f64)>, f64) {
    let all: Vec<(f64, f64)> = moments(p).into_iter().chain(moments(q)).collect();
    let sigma_min = all.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
    let mut iv: Vec<(f64, f64)> = all
        .iter()
        .map(|&(mu, s)| (mu - WINDOW_SIGMAS * s, mu + WINDOW_SIGMAS * s))
        .collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (a, b) in iv {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    (merged, sigma_min)
}

/// `TV(p, q) = ½∫|p − q|` for one-dimensional mixtures.
///
/// Each merged window is cut into panels no wider than the smallest standard
/// deviation before adaptive refinement, so narrow peaks cannot be skipped.
pub fn tv_quadrature_1d(p: &Mixture<f64>, q: &Mixture<f64>) -> Result<DivergenceEstimate> {
    for m in [p, q] {
        if m.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: m.dim() });
        }
    }
    let (merged, sigma_min) = windows(p, q);
    let panels: Vec<(f64, f64)> = merged
        .iter()
        .flat_map(|&(a, b)| {
            let n = ((b - a) / sigma_min).ceil().max(1.0) as usize;
            let h = (b - a) / n as f64;
            (0..n).map(move |i| (a + i as f64 * h, if i + 1 == n { b } else { a + (i + 1) as f64 * h }))
        })
        .collect();
    let f = |x: f64| {
        let lp = p.log_density(&[x]).unwrap_or(f64::NEG_INFINITY);
        let lq = q.log_density(&[x]).unwrap_or(f64::NEG_INFINITY);
        0.5 * (lp.exp() - lq.exp()).abs()
    };
    let tol = QUAD_TOL / panels.len() as f64;
    let total: f64 = panels.iter().map(|&(a, b)| adaptive_simpson(&f, a, b, tol)).sum();
    Ok(DivergenceEstimate {
        value: total.clamp(0.0, 1.0),
        std_error: QUAD_TOL,
        n: panels.len(),
        method: DivergenceMethod::Quadrature,
    })
}
