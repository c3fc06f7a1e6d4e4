//! Critical windows: empirical `T_lower`/`T_upper` by bisection on TV curves,
//! closed-form bounds for several mixture families, and the master-bound
//! comparator.
//!
//! `T_lower(ε)` is the first forward time at which `p_t^{S_init}` and
//! `p_t^{S_target}` are ε-close in TV; `T_upper(ε)` is the last time at which
//! every in-target/out-of-target component pair keeps `TV ≥ 1 − ε²/2`.

use std::fmt;

use crate::divergence::tv_mc;
use crate::error::{Error, Result};
use crate::gmm::{AssumptionParams, Mixture, SeparationStats, SubsetSpec};
use crate::io::fmt_num;
use crate::quadrature::tv_quadrature_1d;
use crate::rng::StreamKey;
use crate::scalar::{dot, Scalar};

/// Width at which the bisection searches stop.
pub const BISECTION_TOL: f64 = 1e-3;
/// Default Monte Carlo sample count per TV probe when `d > 1`.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMethod {
    Empirical,
    IdentityGaussian,
    WellConditioned,
    Wasserstein,
    WeightedTwo,
    SparseDictionary,
}

impl fmt::Display for WindowMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Empirical => "empirical",
            Self::IdentityGaussian => "identity_gaussian",
            Self::WellConditioned => "well_conditioned",
            Self::Wasserstein => "wasserstein",
            Self::WeightedTwo => "weighted_two",
            Self::SparseDictionary => "sparse_dictionary",
        })
    }
}

/// A window `[t_lower, t_upper]` for one ε. A side is `None` when it does not
/// exist or its formula leaves its domain; `diagnostics` then says why.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate<S> {
    pub t_lower: Option<S>,
    pub t_upper: Option<S>,
    pub epsilon: S,
    pub method: WindowMethod,
    /// Search horizon `T`; infinite for closed forms.
    pub horizon: S,
    pub diagnostics: Vec<String>,
}

pub const WINDOW_CSV_HEADER: &str = "method,s_init,s_target,epsilon,t_lower,t_upper,diagnostics";

impl<S: Scalar> WindowEstimate<S> {
    fn closed(method: WindowMethod, epsilon: S) -> Self {
        Self {
            t_lower: None,
            t_upper: None,
            epsilon,
            method,
            horizon: S::infinity(),
            diagnostics: Vec::new(),
        }
    }

    /// Both sides present and ordered.
    pub fn is_open(&self) -> bool {
        matches!((self.t_lower, self.t_upper), (Some(a), Some(b)) if a < b)
    }

    /// One CSV row under [`WINDOW_CSV_HEADER`]; absent sides are empty cells.
    pub fn to_csv_row(&self, s_init: &str, s_target: &str) -> String {
        let side = |v: Option<S>| v.map(|x| fmt_num(x.as_f64())).unwrap_or_default();
        let diag = self.diagnostics.join(" | ").replace('"', "'");
        format!(
            "{},{},{},{},{},{},\"{}\"",
            self.method,
            s_init,
            s_target,
            fmt_num(self.epsilon.as_f64()),
            side(self.t_lower),
            side(self.t_upper),
            diag
        )
    }
}

fn check_epsilon<S: Scalar>(eps: S) -> Result<()> {
    if eps > S::zero() && eps < S::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("epsilon must lie in (0, 1), got {eps}")))
    }
}

/// Records a formula value for the lower side; a zero-width pair or a negative
/// value means the window already starts at `t = 0`.
fn lower_side<S: Scalar>(est: &mut WindowEstimate<S>, v: S) {
    if v.is_nan() {
        est.diagnostics.push("t_lower formula undefined".into());
    } else if v < S::zero() {
        est.diagnostics.push(format!("t_lower formula {v} < 0 clamped to 0"));
        est.t_lower = Some(S::zero());
    } else {
        est.t_lower = Some(v);
    }
}

fn upper_side<S: Scalar>(est: &mut WindowEstimate<S>, v: S) {
    if v.is_finite() && v >= S::zero() {
        est.t_upper = Some(v);
    } else {
        est.diagnostics.push(format!("t_upper formula {v} is not a nonnegative time"));
    }
}

/// `ln ln(arg)` if `arg > 1`, otherwise a diagnostic naming the expression.
fn ln_ln<S: Scalar>(arg: S, what: &str) -> std::result::Result<S, String> {
    if arg > S::one() {
        Ok(arg.ln().ln())
    } else {
        Err(format!("inner log argument {what} = {arg} <= 1"))
    }
}

/// Identity-covariance Gaussians:
/// `T_lower = ln w + ln(1/ε)`,
/// `T_upper = ln Δ − ln 4 − ½ ln ln(R̄²√(K W̄) / (ε²Δ²))`.
pub fn bounds_identity<S: Scalar>(stats: &SeparationStats<S>, eps: S) -> Result<WindowEstimate<S>> {
    check_epsilon(eps)?;
    let mut est = WindowEstimate::closed(WindowMethod::IdentityGaussian, eps);
    if stats.w_pair > S::zero() {
        lower_side(&mut est, stats.w_pair.ln() - eps.ln());
    } else {
        est.diagnostics.push("w = 0: initial and target coincide, t_lower = 0".into());
        est.t_lower = Some(S::zero());
    }
    match stats.delta {
        None => est.diagnostics.push("target covers every component: no t_upper".into()),
        Some(delta) if delta <= S::zero() => est.diagnostics.push("Delta = 0: no t_upper".into()),
        Some(delta) => {
            let k = S::lit(stats.k as f64);
            let arg = stats.r_bar * stats.r_bar * (k * stats.w_bar).sqrt() / (eps * eps * delta * delta);
            match ln_ln(arg, "R^2 sqrt(K W) / (eps^2 Delta^2)") {
                Ok(ll) => upper_side(&mut est, delta.ln() - S::lit(4.0).ln() - S::lit(0.5) * ll),
                Err(msg) => est.diagnostics.push(msg),
            }
        }
    }
    Ok(est)
}

/// Gaussians with every covariance eigenvalue in `[λ̲, λ̄]`, `λ̲ ≤ 1 ≤ λ̄`.
pub fn bounds_wellconditioned<S: Scalar>(stats: &SeparationStats<S>, eps: S) -> Result<WindowEstimate<S>> {
    check_epsilon(eps)?;
    let (lo, hi) = (stats.lambda_lower, stats.lambda_upper);
    if !(lo > S::zero() && lo <= S::one() && S::one() <= hi) {
        return Err(Error::Domain(format!(
            "eigenvalue bracket must satisfy 0 < lambda_lower <= 1 <= lambda_upper, got [{lo}, {hi}]"
        )));
    }
    let mut est = WindowEstimate::closed(WindowMethod::WellConditioned, eps);
    let d = S::lit(stats.dim as f64);
    let w = stats.w_pair;
    let inner = S::lit(2.0) * d * (hi - lo) / lo + w * w / lo;
    if inner > S::zero() {
        lower_side(&mut est, S::lit(0.5) * inner.ln() - eps.ln());
    } else {
        est.diagnostics.push("w = 0 and lambda_lower = lambda_upper: t_lower = 0".into());
        est.t_lower = Some(S::zero());
    }
    match stats.delta {
        None => est.diagnostics.push("target covers every component: no t_upper".into()),
        Some(delta) if delta <= S::zero() => est.diagnostics.push("Delta = 0: no t_upper".into()),
        Some(delta) => {
            let k = S::lit(stats.k as f64);
            let r2 = stats.r_bar * stats.r_bar;
            let spread = (hi - lo) * (hi - lo) * (r2 + hi * d) + r2;
            let arg = hi * (k * stats.w_bar).sqrt() * spread / (lo * lo * delta * delta * eps * eps);
            match ln_ln(arg, "well-conditioned t_upper argument") {
                Ok(ll) => upper_side(
                    &mut est,
                    delta.ln() + S::lit(0.5) * lo.ln() - S::lit(4.0).ln() - S::lit(0.5) * ll,
                ),
                Err(msg) => est.diagnostics.push(msg),
            }
        }
    }
    Ok(est)
}

/// `ln √(8d ln 6 + 8 ln(4/ε²)) + ln 3 + ½ ln 8`, shared by the sub-Gaussian families.
fn subgaussian_penalty<S: Scalar>(d: usize, eps: S) -> S {
    let eight = S::lit(8.0);
    let root = (eight * S::lit(d as f64) * S::lit(6.0).ln() + eight * (S::lit(4.0) / (eps * eps)).ln()).sqrt();
    root.ln() + S::lit(3.0).ln() + S::lit(0.5) * eight.ln()
}

/// Components that are `Υ`-close in W₂ to mean-shifted copies of a common
/// `σ`-sub-Gaussian law.
pub fn bounds_wasserstein<S: Scalar>(stats: &SeparationStats<S>, upsilon: S, sigma: S, eps: S) -> Result<WindowEstimate<S>> {
    check_epsilon(eps)?;
    if !(upsilon >= S::zero()) || !(sigma > S::zero()) {
        return Err(Error::Domain(format!("need upsilon >= 0 and sigma > 0, got {upsilon}, {sigma}")));
    }
    let mut est = WindowEstimate::closed(WindowMethod::Wasserstein, eps);
    let three = S::lit(3.0);
    let spread = stats.w_pair + upsilon;
    let formula = if spread > S::zero() {
        spread.ln() - eps.ln() + S::lit(0.5) * S::lit(2.0).ln()
    } else {
        S::neg_infinity()
    };
    if formula < three {
        est.diagnostics.push("t_lower clamped to 3".into());
    }
    est.t_lower = Some(formula.max(three));
    match stats.delta {
        None => est.diagnostics.push("target covers every component: no t_upper".into()),
        Some(delta) if delta <= S::zero() => est.diagnostics.push("Delta = 0: no t_upper".into()),
        Some(delta) => upper_side(&mut est, delta.ln() - sigma.ln() - subgaussian_penalty(stats.dim, eps)),
    }
    Ok(est)
}

/// Two identity-covariance Gaussians at `±μ` with weights `(w1, w2)`:
/// returns `(T_one, T_all)`, the last time component 1 is retained and the
/// first time the full mixture is reached.
pub fn bounds_weighted_two<S: Scalar>(mu_norm: S, w1: S, w2: S, eps: S) -> Result<(S, S)> {
    check_epsilon(eps)?;
    if !(w1 > S::zero() && w2 > S::zero()) || (w1 + w2 - S::one()).abs() > S::lit(1e-9) {
        return Err(Error::InvalidWeights(format!("need positive weights summing to 1, got ({w1}, {w2})")));
    }
    if !(mu_norm > S::zero()) {
        return Err(Error::Domain(format!("need |mu| > 0, got {mu_norm}")));
    }
    let arg = (S::lit(2.0) * w2 / w1).sqrt() / (S::lit(4.0) * eps * eps);
    let ll = ln_ln(arg, "sqrt(2 w2/w1) / (4 eps^2)").map_err(Error::Domain)?;
    let two = S::lit(2.0).ln();
    let t_one = mu_norm.ln() - two - S::lit(0.5) * ll;
    let t_all = mu_norm.ln() + two - eps.ln();
    Ok((t_one, t_all))
}

/// Classes built from sparse combinations of nearly orthogonal unit features:
/// class `S` has mean `R Σ_{i∈S} f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryModel<S> {
    features: Vec<Vec<S>>,
    scale: S,
    sparsity_cap: usize,
    sigma_sq: S,
    upsilon: S,
    delta: S,
    classes: Vec<Vec<usize>>,
}

impl<S: Scalar> DictionaryModel<S> {
    /// `delta` must bound every `|⟨f_i, f_j⟩|`, `i ≠ j`.
    pub fn new(
        features: Vec<Vec<S>>,
        scale: S,
        sparsity_cap: usize,
        sigma_sq: S,
        upsilon: S,
        delta: S,
        mut classes: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let d = features.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("no features".into()))?;
        let tol = S::lit(1e-12).max(S::lit(8.0) * S::epsilon());
        for f in &features {
            if f.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: f.len() });
            }
            let norm: S = f.iter().map(|&v| v * v).sum::<S>().sqrt();
            if (norm - S::one()).abs() > tol {
                return Err(Error::Domain(format!("feature norm {norm} is not 1")));
            }
        }
        let model = Self {
            features,
            scale,
            sparsity_cap,
            sigma_sq,
            upsilon,
            delta,
            classes: Vec::new(),
        };
        let coherence = model.coherence();
        if coherence > delta + tol {
            return Err(Error::Domain(format!("coherence {coherence} exceeds delta {delta}")));
        }
        for c in &mut classes {
            c.sort_unstable();
            c.dedup();
            if c.len() > sparsity_cap {
                return Err(Error::Domain(format!("class of size {} exceeds sparsity cap {sparsity_cap}", c.len())));
            }
            if let Some(&bad) = c.iter().find(|&&i| i >= model.features.len()) {
                return Err(Error::IndexOutOfRange { index: bad, k: model.features.len() });
            }
        }
        if classes.is_empty() {
            return Err(Error::InvalidArgument("no classes".into()));
        }
        Ok(Self { classes, ..model })
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn sigma_sq(&self) -> S {
        self.sigma_sq
    }

    /// `max_{i≠j} |⟨f_i, f_j⟩|`
    pub fn coherence(&self) -> S {
        let mut c = S::zero();
        for (i, a) in self.features.iter().enumerate() {
            for b in &self.features[i + 1..] {
                c = c.max(dot(a, b).abs());
            }
        }
        c
    }

    /// Size of the symmetric difference of two classes.
    pub fn hamming(&self, a: usize, b: usize) -> usize {
        let (x, y) = (&self.classes[a], &self.classes[b]);
        x.iter().filter(|i| !y.contains(i)).count() + y.iter().filter(|i| !x.contains(i)).count()
    }

    /// `H̄(S, S′) = max_{a∈S, b∈S′} H(a, b)`
    pub fn hamming_max(&self, s: &SubsetSpec, s_prime: &SubsetSpec) -> usize {
        let mut h = 0;
        for &a in s.indices() {
            for &b in s_prime.indices() {
                h = h.max(self.hamming(a, b));
            }
        }
        h
    }

    /// `H̲(S) = min_{a∈S, b∉S} H(a, b)`, `None` if `S` holds every class.
    pub fn hamming_min(&self, s: &SubsetSpec) -> Option<usize> {
        let rest = s.complement(self.classes.len())?;
        let mut h = usize::MAX;
        for &a in s.indices() {
            for &b in rest.indices() {
                h = h.min(self.hamming(a, b));
            }
        }
        Some(h)
    }

    pub fn class_mean(&self, class: usize) -> Vec<S> {
        let mut mu = vec![S::zero(); self.dim()];
        for &f in &self.classes[class] {
            for (m, &v) in mu.iter_mut().zip(&self.features[f]) {
                *m = *m + self.scale * v;
            }
        }
        mu
    }

    /// The isotropic mixture with one component `N(μ_S, σ² I)` per class.
    pub fn to_mixture(&self) -> Result<Mixture<S>> {
        let comps = (0..self.classes.len())
            .map(|c| crate::gmm::GaussianComponent::new(self.class_mean(c), crate::gmm::Covariance::Isotropic(self.sigma_sq)))
            .collect::<Result<Vec<_>>>()?;
        Mixture::equal_weights(comps)
    }
}

/// Windows for the sparse-dictionary model in terms of Hamming distances
/// between classes; `s_init`, `s_target` index classes.
pub fn bounds_sparse_dictionary<S: Scalar>(
    model: &DictionaryModel<S>,
    s_init: &SubsetSpec,
    s_target: &SubsetSpec,
    eps: S,
) -> Result<WindowEstimate<S>> {
    check_epsilon(eps)?;
    let n = model.classes.len();
    s_init.check(n)?;
    s_target.check(n)?;
    let mut est = WindowEstimate::closed(WindowMethod::SparseDictionary, eps);
    let d = S::lit(model.dim() as f64);
    let slack = d * d * model.delta;
    let h_bar = S::lit(model.hamming_max(s_init, s_target) as f64);
    let spread = model.scale * (h_bar + slack).sqrt() + model.upsilon;
    let three = S::lit(3.0);
    let formula = if spread > S::zero() {
        spread.ln() - eps.ln() + S::lit(0.5) * S::lit(2.0).ln()
    } else {
        S::neg_infinity()
    };
    if formula < three {
        est.diagnostics.push("t_lower clamped to 3".into());
    }
    est.t_lower = Some(formula.max(three));
    match model.hamming_min(s_target) {
        None => est.diagnostics.push("target holds every class: no t_upper".into()),
        Some(h) => {
            let gap = S::lit(h as f64) - slack;
            if gap <= S::zero() {
                est.diagnostics.push(format!("Hamming gap {h} <= d^2 delta = {slack}: coherence too large"));
            } else {
                let sigma = (model.sigma_sq * S::lit((model.sparsity_cap + 1) as f64)).sqrt();
                let v = (model.scale * gap.sqrt()).ln() - sigma.ln() - subgaussian_penalty(model.dim(), eps);
                upper_side(&mut est, v);
            }
        }
    }
    Ok(est)
}

/// `ε √W̄ K² (R̄² + M² + √M Ψ⁴ + √M̄)`, the master-theorem right-hand side with
/// its unstated universal constant set to 1. A comparator, not a certified bound.
pub fn eval_master_bound<S: Scalar>(eps: S, k: usize, w_bar: S, r_bar: S, params: &AssumptionParams<S>) -> S {
    let k = S::lit(k as f64);
    let bracket = r_bar * r_bar
        + params.m4 * params.m4
        + params.m4.sqrt() * params.psi_sq * params.psi_sq
        + params.m_bar.sqrt();
    eps * w_bar.sqrt() * k * k * bracket
}

/// Forward-time TV between two mixtures: quadrature for `d = 1`, Monte Carlo otherwise.
fn tv_at(p: &Mixture<f64>, q: &Mixture<f64>, t: f64, n: usize, key: StreamKey) -> Result<f64> {
    let (pt, qt) = (p.evolve(t)?, q.evolve(t)?);
    if p.dim() == 1 {
        Ok(tv_quadrature_1d(&pt, &qt)?.value)
    } else {
        Ok(tv_mc(&pt, &qt, n, key)?.value)
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon.is_finite() && horizon > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("horizon must be positive and finite, got {horizon}")))
    }
}

/// Smallest `t ∈ [0, horizon]` with `TV(p_t^{S_init}, p_t^{S_target}) ≤ ε`, to
/// within [`BISECTION_TOL`] (the returned value is a time known to satisfy it).
/// Forward TV is nonincreasing in `t`, so bisection applies.
pub fn t_lower_empirical(
    mixture: &Mixture<f64>,
    s_init: &SubsetSpec,
    s_target: &SubsetSpec,
    eps: f64,
    horizon: f64,
    n: usize,
    key: StreamKey,
) -> Result<Option<f64>> {
    check_epsilon(eps)?;
    check_horizon(horizon)?;
    s_init.check(mixture.len())?;
    s_target.check(mixture.len())?;
    if !s_init.is_subset_of(s_target) {
        return Err(Error::NotSubset);
    }
    if s_init == s_target {
        return Ok(Some(0.0));
    }
    let p = mixture.submixture(s_init)?;
    let q = mixture.submixture(s_target)?;
    let mut probe = 0u64;
    let mut close = |t: f64| -> Result<bool> {
        probe += 1;
        Ok(tv_at(&p, &q, t, n, key.derive(probe))? <= eps)
    };
    if close(0.0)? {
        return Ok(Some(0.0));
    }
    if !close(horizon)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, horizon);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if close(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Largest `t ∈ [0, horizon]` at which every pair `i ∈ S_target`, `j ∉ S_target`
/// has `TV(p_t^i, p_t^j) ≥ 1 − ε²/2`; `None` if that already fails at `t = 0`.
pub fn t_upper_empirical(
    mixture: &Mixture<f64>,
    s_target: &SubsetSpec,
    eps: f64,
    horizon: f64,
    n: usize,
    key: StreamKey,
) -> Result<Option<f64>> {
    check_epsilon(eps)?;
    check_horizon(horizon)?;
    s_target.check(mixture.len())?;
    let rest = s_target.complement(mixture.len()).ok_or(Error::FullSubset)?;
    let k = mixture.len();
    let threshold = 1.0 - 0.5 * eps * eps;
    let pairs: Vec<(Mixture<f64>, Mixture<f64>)> = s_target
        .indices()
        .iter()
        .flat_map(|&i| rest.indices().iter().map(move |&j| (i, j)))
        .map(|(i, j)| Ok((mixture.submixture(&SubsetSpec::single(i, k)?)?, mixture.submixture(&SubsetSpec::single(j, k)?)?)))
        .collect::<Result<_>>()?;
    let mut probe = 0u64;
    let mut separated = |t: f64| -> Result<bool> {
        for (a, b) in &pairs {
            probe += 1;
            if tv_at(a, b, t, n, key.derive(probe))? < threshold {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if !separated(0.0)? {
        return Ok(None);
    }
    if separated(horizon)? {
        return Ok(Some(horizon));
    }
    let (mut lo, mut hi) = (0.0, horizon);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if separated(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

/// Both empirical sides as one estimate; the upper side is skipped when the
/// target covers every component.
pub fn empirical_window(
    mixture: &Mixture<f64>,
    s_init: &SubsetSpec,
    s_target: &SubsetSpec,
    eps: f64,
    horizon: f64,
    n: usize,
    key: StreamKey,
) -> Result<WindowEstimate<f64>> {
    let mut est = WindowEstimate {
        t_lower: t_lower_empirical(mixture, s_init, s_target, eps, horizon, n, key.derive(0))?,
        t_upper: None,
        epsilon: eps,
        method: WindowMethod::Empirical,
        horizon,
        diagnostics: Vec::new(),
    };
    if est.t_lower.is_none() {
        est.diagnostics.push(format!("TV stays above eps on [0, {horizon}]"));
    }
    if s_target.is_full(mixture.len()) {
        est.diagnostics.push("target covers every component: no t_upper".into());
    } else {
        est.t_upper = t_upper_empirical(mixture, s_target, eps, horizon, n, key.derive(1))?;
        if est.t_upper.is_none() {
            est.diagnostics.push("cross-pair separation fails at t = 0".into());
        }
    }
    Ok(est)
}
