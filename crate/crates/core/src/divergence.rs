//! Distances between mixtures and between Gaussian components.
//!
//! Monte Carlo estimators work for any dimension; closed forms cover
//! Hellinger, KL and W₂ between two Gaussians. The 1D quadrature oracle lives
//! in [`crate::quadrature`].

use crate::error::{Error, Result};
use crate::gmm::{GaussianComponent, Mixture, ScoreWorkspace};
use crate::linalg::{sqrt_psd, Cholesky, SymMat};
use crate::rng::{par_map_indexed, StreamKey};
use crate::scalar::{norm_sq, Scalar};

/// Minimum sample count for the Monte Carlo estimators.
pub const MIN_MC_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceMethod {
    MonteCarlo,
    Quadrature,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceEstimate {
    pub value: f64,
    /// Zero for closed forms; the quadrature tolerance for quadrature.
    pub std_error: f64,
    pub n: usize,
    pub method: DivergenceMethod,
}

/// Sample mean and its jackknife standard error. For the mean the
/// leave-one-out jackknife reduces to `s / √n`.
fn mean_and_jackknife(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let total: f64 = xs.iter().sum();
    let mean = total / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let loo_sq: f64 = xs
        .iter()
        .map(|&x| {
            let loo = (total - x) / (n - 1.0);
            (loo - mean) * (loo - mean)
        })
        .sum();
    (mean, ((n - 1.0) / n * loo_sq).sqrt())
}

fn check_pair<S: Scalar>(p: &Mixture<S>, q: &Mixture<S>, n: usize) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    if n < MIN_MC_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo needs n >= {MIN_MC_SAMPLES}, got {n}"
        )));
    }
    Ok(())
}

/// `TV(p, q)` by sampling the balanced mixture `m = (p+q)/2` and averaging
/// `|p − q| / (p + q) = |tanh((ln p − ln q)/2)|`, which is bounded in `[0, 1]`.
pub fn tv_mc<S: Scalar>(p: &Mixture<S>, q: &Mixture<S>, n: usize, key: StreamKey) -> Result<DivergenceEstimate> {
    check_pair(p, q, n)?;
    let (kp, kq, d) = (p.len(), q.len(), p.dim());
    let vals = par_map_indexed(key, n, |_, rng| {
        let x = if S::unit_uniform(rng) < S::lit(0.5) {
            p.sample(rng)
        } else {
            q.sample(rng)
        };
        let mut wp = ScoreWorkspace::new(kp, d);
        let mut wq = ScoreWorkspace::new(kq, d);
        let mut g = vec![S::zero(); d];
        let lp = p.score_with(&x, &mut wp, &mut g);
        let lq = q.score_with(&x, &mut wq, &mut g);
        ((lp - lq) * S::lit(0.5)).tanh().abs().as_f64()
    });
    let (mean, se) = mean_and_jackknife(&vals);
    Ok(DivergenceEstimate {
        value: mean.clamp(0.0, 1.0),
        std_error: se,
        n,
        method: DivergenceMethod::MonteCarlo,
    })
}

/// Le Cam distance via `E_{x∼P}[q/(p+q)] = ½(1 − LC(P,Q))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeCamEstimate {
    /// `E_{x∼P}[q/(p+q)]`
    pub ratio: f64,
    pub ratio_std_error: f64,
    /// `LC = 1 − 2·ratio`, with standard error `2·ratio_std_error`.
    pub lecam: DivergenceEstimate,
}

pub fn lecam_mc<S: Scalar>(p: &Mixture<S>, q: &Mixture<S>, n: usize, key: StreamKey) -> Result<LeCamEstimate> {
    check_pair(p, q, n)?;
    let (kp, kq, d) = (p.len(), q.len(), p.dim());
    let vals = par_map_indexed(key, n, |_, rng| {
        let x = p.sample(rng);
        let mut wp = ScoreWorkspace::new(kp, d);
        let mut wq = ScoreWorkspace::new(kq, d);
        let mut g = vec![S::zero(); d];
        let lp = p.score_with(&x, &mut wp, &mut g);
        let lq = q.score_with(&x, &mut wq, &mut g);
        // q/(p+q) = 1/(1 + e^{lp - lq})
        (S::one() / (S::one() + (lp - lq).exp())).as_f64()
    });
    let (ratio, se) = mean_and_jackknife(&vals);
    Ok(LeCamEstimate {
        ratio,
        ratio_std_error: se,
        lecam: DivergenceEstimate {
            value: (1.0 - 2.0 * ratio).clamp(0.0, 1.0),
            std_error: 2.0 * se,
            n,
            method: DivergenceMethod::MonteCarlo,
        },
    })
}

fn check_components<S: Scalar>(a: &GaussianComponent<S>, b: &GaussianComponent<S>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

fn factor<S: Scalar>(m: &SymMat<S>) -> Result<Cholesky<S>> {
    Cholesky::factor(m).ok_or(Error::NotPositiveDefinite {
        component: 0,
        min_eigenvalue: f64::NAN,
    })
}

fn mean_gap<S: Scalar>(a: &GaussianComponent<S>, b: &GaussianComponent<S>) -> Vec<S> {
    a.mean().iter().zip(b.mean()).map(|(&x, &y)| x - y).collect()
}

/// Squared Hellinger distance `∫(√p − √q)²`, in `[0, 2]`.
pub fn hellinger_sq_gaussian<S: Scalar>(a: &GaussianComponent<S>, b: &GaussianComponent<S>) -> Result<S> {
    check_components(a, b)?;
    let half = S::lit(0.5);
    let avg = a.dense_covariance().add(&b.dense_covariance()).scale(half);
    let chol = factor(&avg)?;
    let dm = mean_gap(a, b);
    let mut z = dm.clone();
    chol.solve_lower_in_place(&mut z);
    let quad = norm_sq(&z);
    let quarter = S::lit(0.25);
    let log_bc = quarter * a.log_det() + quarter * b.log_det() - half * chol.log_det() - quad / S::lit(8.0);
    Ok((-S::lit(2.0) * log_bc.min(S::zero()).exp_m1()).clamp(S::zero(), S::lit(2.0)))
}

/// `KL(a‖b) = ½[ln(|Σ_b|/|Σ_a|) + tr(Σ_b⁻¹Σ_a) − d + (μ_a−μ_b)ᵀΣ_b⁻¹(μ_a−μ_b)]`.
pub fn kl_gaussian<S: Scalar>(a: &GaussianComponent<S>, b: &GaussianComponent<S>) -> Result<S> {
    check_components(a, b)?;
    let d = a.dim();
    let chol_b = factor(&b.dense_covariance())?;
    let sa = a.dense_covariance();
    let mut trace = S::zero();
    let mut col = vec![S::zero(); d];
    for j in 0..d {
        for (i, c) in col.iter_mut().enumerate() {
            *c = sa.get(i, j);
        }
        trace = trace + chol_b.solve(&col)[j];
    }
    let mut z = mean_gap(a, b);
    chol_b.solve_lower_in_place(&mut z);
    let quad = norm_sq(&z);
    let kl = S::lit(0.5) * (b.log_det() - a.log_det() + trace - S::lit(d as f64) + quad);
    Ok(kl.max(S::zero()))
}

/// `W₂(a, b)` by the Bures formula.
pub fn w2_gaussian<S: Scalar>(a: &GaussianComponent<S>, b: &GaussianComponent<S>) -> Result<S> {
    check_components(a, b)?;
    let sa = a.dense_covariance();
    let sb = b.dense_covariance();
    let rb = sqrt_psd(&sb);
    let cross = sqrt_psd(&rb.matmul(&sa).matmul(&rb).symmetrized());
    let bures = sa.trace() + sb.trace() - S::lit(2.0) * cross.trace();
    Ok((norm_sq(&mean_gap(a, b)) + bures.max(S::zero())).sqrt())
}

/// `E_{X∼p_t^i} ‖∇ln p_t^j(X) − ∇ln p_t^ℓ(X)‖⁴` by Monte Carlo.
pub fn score_gap_moment<S: Scalar>(
    m: &Mixture<S>,
    (i, j, l): (usize, usize, usize),
    t: S,
    n: usize,
    key: StreamKey,
) -> Result<f64> {
    let k = m.len();
    if let Some(&bad) = [i, j, l].iter().find(|&&x| x >= k) {
        return Err(Error::IndexOutOfRange { index: bad, k });
    }
    if n < MIN_MC_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo needs n >= {MIN_MC_SAMPLES}, got {n}"
        )));
    }
    if j == l {
        return Ok(0.0);
    }
    let mt = m.evolve(t)?;
    let (ci, cj, cl) = (mt.component(i), mt.component(j), mt.component(l));
    let vals = par_map_indexed(key, n, |_, rng| {
        let x = ci.sample(rng);
        let sj = cj.score(&x);
        let sl = cl.score(&x);
        let g: S = sj.iter().zip(&sl).map(|(&a, &b)| (a - b) * (a - b)).sum();
        (g * g).as_f64()
    });
    Ok(vals.iter().sum::<f64>() / n as f64)
}
