//! Gaussian mixtures under the Ornstein–Uhlenbeck forward process.
//!
//! A component `N(μ, Σ)` evolved for time `t` is `N(e^{-t}μ, e^{-2t}Σ + (1-e^{-2t})I)`,
//! so every quantity here is closed form. Densities and scores are evaluated
//! in log space; responsibilities use the max-subtracted log-sum-exp because
//! figure-scale mixtures put components thousands of standard deviations apart.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Cholesky, SymMat};
use crate::rng::{par_map_indexed, StreamKey};
use crate::scalar::{dist, log_sum_exp, norm_sq, Scalar};

/// Smallest covariance eigenvalue accepted on construction.
pub const MIN_EIGENVALUE: f64 = 1e-12;

/// Covariance in one of three representations.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance<S> {
    /// `σ² I`
    Isotropic(S),
    Diagonal(Vec<S>),
    Full(SymMat<S>),
}

impl<S: Scalar> Covariance<S> {
    pub fn identity() -> Self {
        Covariance::Isotropic(S::one())
    }

    pub fn to_dense(&self, d: usize) -> SymMat<S> {
        match self {
            Covariance::Isotropic(v) => SymMat::scaled_identity(d, *v),
            Covariance::Diagonal(v) => SymMat::diagonal(v),
            Covariance::Full(m) => m.clone(),
        }
    }

    /// `a·Σ + b·I` in the same representation.
    fn affine(&self, a: S, b: S) -> Self {
        match self {
            Covariance::Isotropic(v) => Covariance::Isotropic(a * *v + b),
            Covariance::Diagonal(v) => Covariance::Diagonal(v.iter().map(|&x| a * x + b).collect()),
            Covariance::Full(m) => Covariance::Full(m.affine_identity(a, b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Factor<S> {
    Iso { sd: S, inv_var: S },
    Diag { sd: Vec<S>, inv_var: Vec<S> },
    Full(Cholesky<S>),
}

/// One Gaussian component with its covariance factorization cached.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent<S> {
    mean: Vec<S>,
    cov: Covariance<S>,
    factor: Factor<S>,
    log_norm: S,
    eig_min: S,
    eig_max: S,
}

impl<S: Scalar> GaussianComponent<S> {
    pub fn new(mean: Vec<S>, cov: Covariance<S>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("component dimension must be positive".into()));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("component mean is not finite".into()));
        }
        let floor = S::lit(MIN_EIGENVALUE);
        let not_pd = |min: S| Error::NotPositiveDefinite {
            component: 0,
            min_eigenvalue: min.as_f64(),
        };
        let (factor, log_det, eig_min, eig_max) = match &cov {
            Covariance::Isotropic(v) => {
                if !(*v >= floor) || !v.is_finite() {
                    return Err(not_pd(*v));
                }
                let log_det = S::lit(d as f64) * v.ln();
                (
                    Factor::Iso {
                        sd: v.sqrt(),
                        inv_var: v.recip(),
                    },
                    log_det,
                    *v,
                    *v,
                )
            }
            Covariance::Diagonal(v) => {
                if v.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: v.len(),
                    });
                }
                let min = v.iter().copied().fold(S::infinity(), S::min);
                let max = v.iter().copied().fold(S::neg_infinity(), S::max);
                if !(min >= floor) || !max.is_finite() {
                    return Err(not_pd(min));
                }
                let log_det = v.iter().map(|x| x.ln()).sum();
                (
                    Factor::Diag {
                        sd: v.iter().map(|x| x.sqrt()).collect(),
                        inv_var: v.iter().map(|x| x.recip()).collect(),
                    },
                    log_det,
                    min,
                    max,
                )
            }
            Covariance::Full(m) => {
                if m.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: m.dim(),
                    });
                }
                let scale = m.as_slice().iter().fold(S::zero(), |a, x| a.max(x.abs()));
                if m.max_asymmetry() > S::lit(1e-10) * scale.max(S::one()) {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
                let (vals, _) = sym_eigen(m);
                let min = vals[0];
                let max = vals[d - 1];
                if !(min >= floor) {
                    return Err(not_pd(min));
                }
                let chol = Cholesky::factor(m).ok_or_else(|| not_pd(min))?;
                let log_det = chol.log_det();
                (Factor::Full(chol), log_det, min, max)
            }
        };
        let log_norm = -S::lit(0.5) * (S::lit(d as f64) * (S::TAU()).ln() + log_det);
        Ok(Self {
            mean,
            cov,
            factor,
            log_norm,
            eig_min,
            eig_max,
        })
    }

    /// `N(μ, I)`
    pub fn standard(mean: Vec<S>) -> Self {
        Self::new(mean, Covariance::identity()).expect("identity covariance is valid")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[S] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance<S> {
        &self.cov
    }

    pub fn dense_covariance(&self) -> SymMat<S> {
        self.cov.to_dense(self.dim())
    }

    /// Extreme eigenvalues of the covariance.
    pub fn eigen_bounds(&self) -> (S, S) {
        (self.eig_min, self.eig_max)
    }

    pub fn log_det(&self) -> S {
        -S::lit(2.0) * self.log_norm - S::lit(self.dim() as f64) * S::TAU().ln()
    }

    /// Log density at `x`; writes the component score `-Σ⁻¹(x-μ)` into `grad`.
    pub fn log_pdf_and_score(&self, x: &[S], grad: &mut [S]) -> S {
        let half = S::lit(0.5);
        match &self.factor {
            Factor::Iso { inv_var, .. } => {
                let mut quad = S::zero();
                for ((g, &xi), &mi) in grad.iter_mut().zip(x).zip(&self.mean) {
                    let r = xi - mi;
                    quad = quad + r * r;
                    *g = -r * *inv_var;
                }
                self.log_norm - half * quad * *inv_var
            }
            Factor::Diag { inv_var, .. } => {
                let mut quad = S::zero();
                for (((g, &xi), &mi), &iv) in grad.iter_mut().zip(x).zip(&self.mean).zip(inv_var) {
                    let r = xi - mi;
                    quad = quad + r * r * iv;
                    *g = -r * iv;
                }
                self.log_norm - half * quad
            }
            Factor::Full(chol) => {
                for ((g, &xi), &mi) in grad.iter_mut().zip(x).zip(&self.mean) {
                    *g = xi - mi;
                }
                chol.solve_lower_in_place(grad);
                let quad = norm_sq(grad);
                chol.solve_upper_t_in_place(grad);
                for g in grad.iter_mut() {
                    *g = -*g;
                }
                self.log_norm - half * quad
            }
        }
    }

    pub fn log_pdf(&self, x: &[S]) -> S {
        let mut g = vec![S::zero(); self.dim()];
        self.log_pdf_and_score(x, &mut g)
    }

    pub fn score(&self, x: &[S]) -> Vec<S> {
        let mut g = vec![S::zero(); self.dim()];
        self.log_pdf_and_score(x, &mut g);
        g
    }

    /// The component after forward time `t` (no validation of `t`).
    pub(crate) fn evolved(&self, t: S) -> Self {
        let decay = (-t).exp();
        let a = decay * decay;
        let b = -(-S::lit(2.0) * t).exp_m1();
        let mean = self.mean.iter().map(|&m| m * decay).collect();
        Self::new(mean, self.cov.affine(a, b)).expect("OU evolution preserves positive definiteness")
    }

    pub fn evolve(&self, t: S) -> Result<Self> {
        if !(t >= S::zero()) {
            return Err(Error::NegativeTime(t.as_f64()));
        }
        Ok(self.evolved(t))
    }

    /// Writes one draw into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [S]) {
        match &self.factor {
            Factor::Iso { sd, .. } => {
                for (o, &m) in out.iter_mut().zip(&self.mean) {
                    *o = m + *sd * S::std_normal(rng);
                }
            }
            Factor::Diag { sd, .. } => {
                for ((o, &m), &s) in out.iter_mut().zip(&self.mean).zip(sd) {
                    *o = m + s * S::std_normal(rng);
                }
            }
            Factor::Full(chol) => {
                let xi: Vec<S> = (0..self.dim()).map(|_| S::std_normal(rng)).collect();
                chol.lower_mul(&xi, out);
                for (o, &m) in out.iter_mut().zip(&self.mean) {
                    *o = *o + m;
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// A nonempty, sorted, duplicate-free set of component indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubsetSpec {
    indices: Vec<usize>,
}

impl SubsetSpec {
    /// Sorts and deduplicates `indices`; rejects an empty set or any index `>= k`.
    pub fn new(mut indices: Vec<usize>, k: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySubset);
        }
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::IndexOutOfRange { index: bad, k });
        }
        Ok(Self { indices })
    }

    pub fn full(k: usize) -> Self {
        assert!(k > 0, "mixture has at least one component");
        Self {
            indices: (0..k).collect(),
        }
    }

    pub fn single(i: usize, k: usize) -> Result<Self> {
        Self::new(vec![i], k)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &SubsetSpec) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }

    pub fn is_full(&self, k: usize) -> bool {
        self.indices.len() == k
    }

    /// `[K] − S`, or `None` when `S = [K]`.
    pub fn complement(&self, k: usize) -> Option<SubsetSpec> {
        let rest: Vec<usize> = (0..k).filter(|&i| !self.contains(i)).collect();
        (!rest.is_empty()).then_some(SubsetSpec { indices: rest })
    }

    pub(crate) fn check(&self, k: usize) -> Result<()> {
        match self.indices.last() {
            Some(&i) if i >= k => Err(Error::IndexOutOfRange { index: i, k }),
            _ => Ok(()),
        }
    }
}

/// Indices joined by `;`, e.g. `0;1`.
impl std::fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (n, i) in self.indices.iter().enumerate() {
            if n > 0 {
                f.write_str(";")?;
            }
            write!(f, "{i}")?;
        }
        Ok(())
    }
}

/// Reusable buffers for mixture score evaluation.
#[derive(Debug, Clone)]
pub struct ScoreWorkspace<S> {
    logits: Vec<S>,
    grads: Vec<S>,
}

impl<S: Scalar> ScoreWorkspace<S> {
    pub fn new(k: usize, d: usize) -> Self {
        Self {
            logits: vec![S::zero(); k],
            grads: vec![S::zero(); k * d],
        }
    }
}

/// Weighted mixture `p = Σ w_i p^i` of Gaussian components of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture<S> {
    components: Vec<GaussianComponent<S>>,
    weights: Vec<S>,
    log_weights: Vec<S>,
}

impl<S: Scalar> Mixture<S> {
    pub fn new(components: Vec<GaussianComponent<S>>, weights: Vec<S>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > S::zero()) || !w.is_finite()) {
            return Err(Error::InvalidWeights(format!("weight {w} is not strictly positive")));
        }
        let total: S = weights.iter().copied().sum();
        let tol = S::lit(1e-12).max(S::epsilon() * S::lit(4.0 * weights.len() as f64));
        if (total - S::one()).abs() > tol {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            components,
            weights,
            log_weights,
        })
    }

    /// Normalizes arbitrary positive weights before construction.
    pub fn normalized(components: Vec<GaussianComponent<S>>, raw: Vec<S>) -> Result<Self> {
        let total: S = raw.iter().copied().sum();
        if !(total > S::zero()) {
            return Err(Error::InvalidWeights("weights must have a positive sum".into()));
        }
        Self::new(components, raw.into_iter().map(|w| w / total).collect())
    }

    pub fn equal_weights(components: Vec<GaussianComponent<S>>) -> Result<Self> {
        let k = components.len();
        Self::normalized(components, vec![S::one(); k])
    }

    /// Identity-covariance components at the given means, equal weights.
    pub fn isotropic_equal(means: Vec<Vec<S>>) -> Result<Self> {
        let comps = means
            .into_iter()
            .map(|m| GaussianComponent::new(m, Covariance::identity()))
            .collect::<Result<Vec<_>>>()?;
        Self::equal_weights(comps)
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Number of components `K`.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn components(&self) -> &[GaussianComponent<S>] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &GaussianComponent<S> {
        &self.components[i]
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    /// The mixture at forward-process time `t`.
    pub fn evolve(&self, t: S) -> Result<Self> {
        if !(t >= S::zero()) {
            return Err(Error::NegativeTime(t.as_f64()));
        }
        Ok(self.evolved(t))
    }

    pub(crate) fn evolved(&self, t: S) -> Self {
        Self {
            components: self.components.iter().map(|c| c.evolved(t)).collect(),
            weights: self.weights.clone(),
            log_weights: self.log_weights.clone(),
        }
    }

    fn check_dim(&self, x: &[S]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Fills `ws.logits[i] = ln w_i + ln p^i(x)` and the component scores.
    fn fill(&self, x: &[S], ws: &mut ScoreWorkspace<S>) {
        let d = self.dim();
        for (i, c) in self.components.iter().enumerate() {
            let g = &mut ws.grads[i * d..(i + 1) * d];
            ws.logits[i] = self.log_weights[i] + c.log_pdf_and_score(x, g);
        }
    }

    pub fn log_density(&self, x: &[S]) -> Result<S> {
        self.check_dim(x)?;
        let mut ws = ScoreWorkspace::new(self.len(), self.dim());
        self.fill(x, &mut ws);
        Ok(log_sum_exp(&ws.logits))
    }

    /// Posterior component probabilities `r_i(x) = w_i p^i(x) / p(x)`.
    pub fn responsibilities(&self, x: &[S]) -> Result<Vec<S>> {
        self.check_dim(x)?;
        let mut ws = ScoreWorkspace::new(self.len(), self.dim());
        self.fill(x, &mut ws);
        let lse = log_sum_exp(&ws.logits);
        Ok(ws.logits.iter().map(|&l| (l - lse).exp()).collect())
    }

    /// `∇ ln p(x) = Σ_i r_i(x) (−Σ_i⁻¹ (x − μ_i))`.
    pub fn score(&self, x: &[S]) -> Result<Vec<S>> {
        self.check_dim(x)?;
        let mut ws = ScoreWorkspace::new(self.len(), self.dim());
        let mut out = vec![S::zero(); self.dim()];
        self.score_with(x, &mut ws, &mut out);
        Ok(out)
    }

    /// Allocation-free score for inner loops; dimensions are the caller's contract.
    /// Returns `ln p(x)`.
    pub fn score_with(&self, x: &[S], ws: &mut ScoreWorkspace<S>, out: &mut [S]) -> S {
        let d = self.dim();
        self.fill(x, ws);
        out.iter_mut().for_each(|o| *o = S::zero());
        let top = ws.logits.iter().copied().fold(S::neg_infinity(), S::max);
        if !top.is_finite() {
            // every density underflowed (or overflowed): the score is undefined
            out.iter_mut().for_each(|o| *o = S::nan());
            return top;
        }
        // one exp per component: logits become unnormalized responsibilities
        let mut total = S::zero();
        for l in ws.logits.iter_mut() {
            *l = (*l - top).exp();
            total = total + *l;
        }
        let lse = top + total.ln();
        for (i, &e) in ws.logits.iter().enumerate() {
            let r = e / total;
            if r == S::zero() {
                continue;
            }
            for (o, &g) in out.iter_mut().zip(&ws.grads[i * d..(i + 1) * d]) {
                *o = *o + r * g;
            }
        }
        lse
    }

    /// `p^S = Σ_{i∈S} (w_i / Σ_{j∈S} w_j) p^i`
    pub fn submixture(&self, s: &SubsetSpec) -> Result<Self> {
        s.check(self.len())?;
        let comps = s.indices().iter().map(|&i| self.components[i].clone()).collect();
        let raw = s.indices().iter().map(|&i| self.weights[i]).collect();
        Self::normalized(comps, raw)
    }

    /// Draws a component index by weight, then a point from it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        let i = self.sample_index(rng);
        self.components[i].sample(rng)
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = S::unit_uniform(rng);
        let mut acc = S::zero();
        for (i, &w) in self.weights.iter().enumerate() {
            acc = acc + w;
            if u < acc {
                return i;
            }
        }
        self.len() - 1
    }

    pub fn max_mean_norm(&self) -> S {
        self.components
            .iter()
            .map(|c| norm_sq(c.mean()).sqrt())
            .fold(S::zero(), S::max)
    }
}

/// Separation of component means and the covariance spectrum of a mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationStats<S> {
    /// `R̄ = max_i ‖μ_i‖`
    pub r_bar: S,
    /// `w(S_a, S_b) = max_{i∈S_a, j∈S_b} ‖μ_i − μ_j‖`
    pub w_pair: S,
    /// `Δ(S_b) = min_{ℓ∈S_b, j∉S_b} ‖μ_ℓ − μ_j‖`; absent when `S_b = [K]`.
    pub delta: Option<S>,
    /// `W̄ = max_{i,j} w_i / w_j`
    pub w_bar: S,
    pub lambda_lower: S,
    pub lambda_upper: S,
    /// Number of components `K`.
    pub k: usize,
    pub dim: usize,
}

/// `max_{i∈a, j∈b} ‖μ_i − μ_j‖`
pub fn max_cross_distance<S: Scalar>(m: &Mixture<S>, a: &SubsetSpec, b: &SubsetSpec) -> S {
    let mut w = S::zero();
    for &i in a.indices() {
        for &j in b.indices() {
            w = w.max(dist(m.component(i).mean(), m.component(j).mean()));
        }
    }
    w
}

/// `min_{ℓ∈s, j∉s} ‖μ_ℓ − μ_j‖`, `None` when `s` covers every component.
pub fn min_outside_distance<S: Scalar>(m: &Mixture<S>, s: &SubsetSpec) -> Option<S> {
    let rest = s.complement(m.len())?;
    let mut best = S::infinity();
    for &i in s.indices() {
        for &j in rest.indices() {
            best = best.min(dist(m.component(i).mean(), m.component(j).mean()));
        }
    }
    Some(best)
}

/// Separation statistics with `w` taken across `(s_a, s_b)` and `Δ` of `s_b`.
///
/// The eigenvalue bracket is widened to contain 1 so that `λ̲ ≤ 1 ≤ λ̄` holds
/// by construction; it still brackets every covariance eigenvalue.
pub fn separation_stats<S: Scalar>(
    m: &Mixture<S>,
    s_a: &SubsetSpec,
    s_b: &SubsetSpec,
) -> Result<SeparationStats<S>> {
    s_a.check(m.len())?;
    s_b.check(m.len())?;
    let wmax = m.weights().iter().copied().fold(S::zero(), S::max);
    let wmin = m.weights().iter().copied().fold(S::infinity(), S::min);
    let (mut lo, mut hi) = (S::one(), S::one());
    for c in m.components() {
        let (a, b) = c.eigen_bounds();
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok(SeparationStats {
        r_bar: m.max_mean_norm(),
        w_pair: max_cross_distance(m, s_a, s_b),
        delta: min_outside_distance(m, s_b),
        w_bar: wmax / wmin,
        lambda_lower: lo,
        lambda_upper: hi,
        k: m.len(),
        dim: m.dim(),
    })
}

/// Both sides of
/// `‖∇ln p_t^S − ∇ln p_t‖² = ‖∇ln p_t^S − ∇ln p_t^{[K]−S}‖² · (Σ_{i∉S} w_i p_t^i / Σ_i w_i p_t^i)²`
/// evaluated at `x` on the time-`t` mixture.
pub fn score_decomposition_check<S: Scalar>(
    m: &Mixture<S>,
    s: &SubsetSpec,
    t: S,
    x: &[S],
) -> Result<(S, S)> {
    let rest = s.complement(m.len()).ok_or(Error::FullSubset)?;
    let mt = m.evolve(t)?;
    mt.check_dim(x)?;
    let full = mt.score(x)?;
    let inside = mt.submixture(s)?.score(x)?;
    let outside = mt.submixture(&rest)?.score(x)?;

    let mut ws = ScoreWorkspace::new(mt.len(), mt.dim());
    mt.fill(x, &mut ws);
    let all = log_sum_exp(&ws.logits);
    let out_logits: Vec<S> = rest.indices().iter().map(|&i| ws.logits[i]).collect();
    let frac = (log_sum_exp(&out_logits) - all).exp();

    let lhs: S = inside.iter().zip(&full).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let gap: S = inside.iter().zip(&outside).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok((lhs, gap * frac * frac))
}

/// Monte Carlo moment constants for the master bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionParams<S> {
    /// `Ψ²`, the strong log-concavity constant; equals `max(λ̄, 1)` for Gaussians.
    pub psi_sq: S,
    /// `M ≥ max_{i,t} E‖X_t^i‖⁴`
    pub m4: S,
    /// `M̄ ≥ max_{i,j,t} E_{X∼p_t^j} ‖∇ln p_t^i(X)‖⁴`
    pub m_bar: S,
}

/// Estimates `(Ψ², M, M̄)` by maximizing Monte Carlo fourth moments over `t_grid`.
pub fn estimate_assumption_params<S: Scalar>(
    m: &Mixture<S>,
    t_grid: &[S],
    n: usize,
    key: StreamKey,
) -> Result<AssumptionParams<S>> {
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("need n >= 1000 samples, got {n}")));
    }
    let k = m.len();
    let psi_sq = m
        .components()
        .iter()
        .map(|c| c.eigen_bounds().1)
        .fold(S::one(), S::max);
    let mut m4 = S::zero();
    let mut m_bar = S::zero();
    for (g, &t) in t_grid.iter().enumerate() {
        let mt = m.evolve(t)?;
        for j in 0..k {
            let comp = mt.component(j);
            let sub = key.derive((g * k + j) as u64);
            // per sample: (‖x‖⁴, [‖∇ln p^i(x)‖⁴ for i])
            let rows = par_map_indexed(sub, n, |_, rng| {
                let x = comp.sample(rng);
                let xn = norm_sq(&x);
                let scores: Vec<S> = mt
                    .components()
                    .iter()
                    .map(|ci| {
                        let s = norm_sq(&ci.score(&x));
                        s * s
                    })
                    .collect();
                (xn * xn, scores)
            });
            let nn = S::lit(n as f64);
            let mom: S = rows.iter().map(|r| r.0).sum::<S>() / nn;
            m4 = m4.max(mom);
            for i in 0..k {
                let mi: S = rows.iter().map(|r| r.1[i]).sum::<S>() / nn;
                m_bar = m_bar.max(mi);
            }
        }
    }
    Ok(AssumptionParams { psi_sq, m4, m_bar })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_1d(mu: f64) -> Mixture<f64> {
        Mixture::isotropic_equal(vec![vec![-mu], vec![mu]]).unwrap()
    }

    fn fig_mixture() -> Mixture<f64> {
        Mixture::isotropic_equal(vec![
            vec![-15100.0],
            vec![-14900.0],
            vec![14900.0],
            vec![15100.0],
        ])
        .unwrap()
    }

    #[test]
    fn evolve_at_zero_is_identity() {
        let m = fig_mixture();
        assert_eq!(m.evolve(0.0).unwrap(), m);
    }

    #[test]
    fn evolve_closed_form_substitution() {
        let c = GaussianComponent::new(vec![2.0], Covariance::Isotropic(4.0)).unwrap();
        let m = Mixture::new(vec![c], vec![1.0]).unwrap();
        let e = m.evolve(2f64.ln()).unwrap();
        assert!((e.component(0).mean()[0] - 1.0).abs() < 1e-15);
        match e.component(0).covariance() {
            Covariance::Isotropic(v) => assert!((v - 1.75).abs() < 1e-15),
            other => panic!("representation changed: {other:?}"),
        }
    }

    #[test]
    fn evolve_long_time_is_near_standard() {
        let m = fig_mixture();
        let e = m.evolve(20.0).unwrap();
        let r_bar = m.max_mean_norm();
        for c in e.components() {
            assert!(c.mean()[0].abs() <= (-20f64).exp() * r_bar * (1.0 + 1e-12));
            let (lo, hi) = c.eigen_bounds();
            assert!((lo - 1.0).abs() <= (-40f64).exp() + 1e-16);
            assert!((hi - 1.0).abs() <= (-40f64).exp() + 1e-16);
        }
    }

    #[test]
    fn negative_time_rejected() {
        assert_eq!(fig_mixture().evolve(-1.0), Err(Error::NegativeTime(-1.0)));
    }

    #[test]
    fn standard_normal_log_density_at_mode() {
        let m = Mixture::isotropic_equal(vec![vec![0.0]]).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((m.log_density(&[0.0]).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_log_density_matches_direct_sum() {
        let m = pair_1d(1.5);
        let direct = (0.5 * (-0.5f64 * 2.25).exp() * 2.0 / (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((m.log_density(&[0.0]).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn log_density_is_finite_far_away() {
        let m = fig_mixture();
        for x in [1e4, -1e4, 1e6, -1e6] {
            let v = m.log_density(&[x]).unwrap();
            assert!(v.is_finite(), "x={x} gave {v}");
            assert!(m.score(&[x]).unwrap()[0].is_finite());
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let m = fig_mixture();
        assert_eq!(
            m.log_density(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        );
        assert!(m.score(&[]).is_err());
    }

    #[test]
    fn standard_score_is_minus_x() {
        let m = Mixture::isotropic_equal(vec![vec![0.0, 0.0, 0.0]]).unwrap();
        let x = [0.3, -1.2, 4.0];
        let s = m.score(&x).unwrap();
        for (a, b) in s.iter().zip(x) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn symmetric_pair_score_vanishes_at_origin() {
        let m = Mixture::<f64>::isotropic_equal(vec![vec![2.0, -1.0], vec![-2.0, 1.0]]).unwrap();
        let s = m.score(&[0.0, 0.0]).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn pair_score_matches_finite_difference() {
        let m = pair_1d(3.0);
        let h = 1e-5;
        let fd = (m.log_density(&[1.0 + h]).unwrap() - m.log_density(&[1.0 - h]).unwrap()) / (2.0 * h);
        let s = m.score(&[1.0]).unwrap()[0];
        assert!(((s - fd) / fd).abs() < 1e-6, "score {s} vs fd {fd}");
    }

    #[test]
    fn full_and_diagonal_agree_with_isotropic() {
        let iso = GaussianComponent::<f64>::new(vec![1.0, 2.0], Covariance::Isotropic(2.0)).unwrap();
        let diag = GaussianComponent::new(vec![1.0, 2.0], Covariance::Diagonal(vec![2.0, 2.0])).unwrap();
        let full = GaussianComponent::new(
            vec![1.0, 2.0],
            Covariance::Full(SymMat::scaled_identity(2, 2.0)),
        )
        .unwrap();
        let x = [0.3, -0.7];
        let a = iso.log_pdf(&x);
        assert!((a - diag.log_pdf(&x)).abs() < 1e-14);
        assert!((a - full.log_pdf(&x)).abs() < 1e-14);
        let (sa, sf) = (iso.score(&x), full.score(&x));
        assert!(sa.iter().zip(&sf).all(|(p, q)| (p - q).abs() < 1e-14));
    }

    #[test]
    fn eigenvalue_guard() {
        let bad = GaussianComponent::new(vec![0.0], Covariance::Isotropic(0.0));
        assert!(matches!(bad, Err(Error::NotPositiveDefinite { .. })));
        let indef = SymMat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(GaussianComponent::new(vec![0.0, 0.0], Covariance::Full(indef)).is_err());
    }

    #[test]
    fn weights_validated() {
        let c = || GaussianComponent::standard(vec![0.0]);
        assert!(Mixture::new(vec![c(), c()], vec![0.5, 0.6]).is_err());
        assert!(Mixture::new(vec![c(), c()], vec![1.0, 0.0]).is_err());
        assert!(Mixture::new(vec![c()], vec![1.0, 0.0]).is_err());
        let d2 = GaussianComponent::standard(vec![0.0, 0.0]);
        assert!(matches!(
            Mixture::new(vec![c(), d2], vec![0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn submixture_cases() {
        let comps: Vec<_> = (0..3).map(|i| GaussianComponent::standard(vec![i as f64])).collect();
        let m = Mixture::new(comps, vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(m.submixture(&SubsetSpec::full(3)).unwrap(), m);
        let one = m.submixture(&SubsetSpec::single(1, 3).unwrap()).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.weights(), &[1.0]);
        let s = m.submixture(&SubsetSpec::new(vec![2, 0], 3).unwrap()).unwrap();
        assert!((s.weights()[0] - 2.0 / 7.0).abs() < 1e-15);
        assert!((s.weights()[1] - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(s.component(1).mean(), &[2.0]);
    }

    #[test]
    fn subset_spec_validation() {
        assert_eq!(SubsetSpec::new(vec![], 3), Err(Error::EmptySubset));
        assert_eq!(
            SubsetSpec::new(vec![3], 3),
            Err(Error::IndexOutOfRange { index: 3, k: 3 })
        );
        let s = SubsetSpec::new(vec![2, 0, 2], 3).unwrap();
        assert_eq!(s.indices(), &[0, 2]);
        assert_eq!(s.complement(3).unwrap().indices(), &[1]);
        assert!(SubsetSpec::full(3).complement(3).is_none());
    }

    #[test]
    fn separation_stats_figure_config() {
        let m = fig_mixture();
        let a = SubsetSpec::single(1, 4).unwrap();
        let b = SubsetSpec::new(vec![0, 1], 4).unwrap();
        let st = separation_stats(&m, &a, &b).unwrap();
        assert_eq!(st.w_pair, 200.0);
        assert_eq!(st.delta, Some(29800.0));
        assert_eq!(st.r_bar, 15100.0);
        assert_eq!(st.w_bar, 1.0);
        assert_eq!((st.lambda_lower, st.lambda_upper), (1.0, 1.0));
        let full = separation_stats(&m, &a, &SubsetSpec::full(4)).unwrap();
        assert_eq!(full.delta, None);
        assert_eq!(full.w_pair, 30000.0);
    }

    #[test]
    fn separation_stats_degenerate_and_two_point() {
        let m = Mixture::isotropic_equal(vec![vec![1.0, 1.0]; 3]).unwrap();
        let s = SubsetSpec::single(0, 3).unwrap();
        let st = separation_stats(&m, &s, &s).unwrap();
        assert_eq!(st.w_pair, 0.0);
        assert_eq!(st.delta, Some(0.0));

        let mu = [3.0, 4.0];
        let m = Mixture::isotropic_equal(vec![mu.to_vec(), mu.iter().map(|v| -v).collect()]).unwrap();
        let s1 = SubsetSpec::single(1, 2).unwrap();
        let st = separation_stats(&m, &s1, &s1).unwrap();
        assert_eq!(st.delta, Some(10.0));
    }

    #[test]
    fn separation_symmetry() {
        let m = fig_mixture();
        let a = SubsetSpec::new(vec![0, 3], 4).unwrap();
        let b = SubsetSpec::new(vec![1, 2], 4).unwrap();
        assert_eq!(max_cross_distance(&m, &a, &b), max_cross_distance(&m, &b, &a));
    }

    #[test]
    fn eigen_bracket_widened_to_unity() {
        let c0 = GaussianComponent::new(vec![0.0], Covariance::Isotropic(0.25)).unwrap();
        let c1 = GaussianComponent::new(vec![5.0], Covariance::Isotropic(0.5)).unwrap();
        let m = Mixture::equal_weights(vec![c0, c1]).unwrap();
        let s = SubsetSpec::single(0, 2).unwrap();
        let st = separation_stats(&m, &s, &s).unwrap();
        assert_eq!((st.lambda_lower, st.lambda_upper), (0.25, 1.0));
    }

    #[test]
    fn decomposition_pair() {
        let m = pair_1d(2.0);
        let s = SubsetSpec::single(0, 2).unwrap();
        for x in [-3.0, -0.4, 0.0, 0.9, 2.5] {
            let (l, r) = score_decomposition_check(&m, &s, 0.3, &[x]).unwrap();
            assert!((l - r).abs() <= 1e-8 * l.abs().max(r.abs()).max(1e-300), "{l} vs {r}");
        }
    }

    #[test]
    fn decomposition_vanishes_deep_inside() {
        let m = pair_1d(50.0);
        let s = SubsetSpec::single(0, 2).unwrap();
        let (l, r) = score_decomposition_check(&m, &s, 0.0, &[-50.0]).unwrap();
        assert!(l < 1e-12 && r < 1e-12);
    }

    #[test]
    fn decomposition_rejects_full_subset() {
        let m = pair_1d(2.0);
        assert_eq!(
            score_decomposition_check(&m, &SubsetSpec::full(2), 0.0, &[0.0]),
            Err(Error::FullSubset)
        );
    }

    #[test]
    fn assumption_params_standard_normal() {
        let m = Mixture::<f64>::isotropic_equal(vec![vec![0.0]]).unwrap();
        let p = estimate_assumption_params(&m, &[0.0], 200_000, StreamKey::new(1)).unwrap();
        assert!((p.m4 - 3.0).abs() < 0.15, "M = {}", p.m4);
        assert!((p.m_bar - 3.0).abs() < 0.15, "M̄ = {}", p.m_bar);
        assert_eq!(p.psi_sq, 1.0);
        assert!(estimate_assumption_params(&m, &[], 2000, StreamKey::new(1)).is_err());
        assert!(estimate_assumption_params(&m, &[0.0], 10, StreamKey::new(1)).is_err());
    }

    #[test]
    fn assumption_params_approach_stationary() {
        let m = pair_1d(4.0);
        let p = estimate_assumption_params(&m, &[12.0], 200_000, StreamKey::new(2)).unwrap();
        assert!((p.m4 - 3.0).abs() < 0.15);
        assert!((p.m_bar - 3.0).abs() < 0.15);
    }

    #[test]
    fn f32_mixture_works() {
        let m: Mixture<f32> = Mixture::isotropic_equal(vec![vec![-3.0], vec![3.0]]).unwrap();
        let s = m.score(&[1.0]).unwrap()[0];
        let m64 = pair_1d(3.0);
        let s64 = m64.score(&[1.0]).unwrap()[0];
        assert!((s as f64 - s64).abs() < 1e-5);
    }
}
