//! The NoiseDenoise membership-inference attack.
//!
//! A candidate `x` is noised forward for time `T̲` and denoised back `N`
//! times; the score is the mean distance of the reconstructions to `x`. A
//! model that memorized `x` pulls reconstructions back onto it, so members are
//! predicted for scores `≤ τ`.

use std::sync::{Arc, RwLock};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::gmm::{Covariance, GaussianComponent, Mixture, SubsetSpec};
use crate::io::fmt_num;
use crate::rng::{par_map_indexed, StreamKey};
use crate::scalar::{dist, Scalar};
use crate::sim::{forward_sample, Integrator, ReverseSampler, TrajectoryConfig};
use crate::windows::{bounds_wasserstein, WindowEstimate};

/// Anything that can noise a point forward and denoise it back.
pub trait DiffusionSampler: Sync {
    fn dim(&self) -> usize;

    /// Draw of the forward process at time `t` started from `x0`.
    fn forward(&self, x0: &[f64], t: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    /// Endpoint of the reverse process started from `x_t` at time `t`.
    fn reverse(&self, x_t: &[f64], t: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

/// Exact-score sampler for a Gaussian mixture. Reverse integrators are built
/// once per noise level and cached.
#[derive(Debug)]
pub struct GmmSampler {
    mixture: Mixture<f64>,
    steps_per_unit: f64,
    min_steps: usize,
    integrator: Integrator,
    cache: RwLock<Vec<(u64, Arc<ReverseSampler<f64>>)>>,
}

impl GmmSampler {
    /// Step count `max(1000, ⌈500 t⌉)` with the Euler–Maruyama integrator.
    pub fn new(mixture: Mixture<f64>) -> Self {
        Self::with_resolution(mixture, 500.0, 1000, Integrator::EulerMaruyama)
    }

    /// Step count `max(min_steps, ⌈steps_per_unit · t⌉)`.
    pub fn with_resolution(mixture: Mixture<f64>, steps_per_unit: f64, min_steps: usize, integrator: Integrator) -> Self {
        Self {
            mixture,
            steps_per_unit,
            min_steps: min_steps.max(1),
            integrator,
            cache: RwLock::new(Vec::new()),
        }
    }

    pub fn mixture(&self) -> &Mixture<f64> {
        &self.mixture
    }

    fn sampler(&self, t: f64) -> Result<Arc<ReverseSampler<f64>>> {
        let key = t.to_bits();
        if let Some((_, s)) = self.cache.read().expect("cache lock").iter().find(|(k, _)| *k == key) {
            return Ok(Arc::clone(s));
        }
        let steps = ((self.steps_per_unit * t).ceil() as usize).max(self.min_steps);
        let cfg = TrajectoryConfig::new(t).with_steps(steps).with_integrator(self.integrator);
        let built = Arc::new(ReverseSampler::new(&self.mixture, cfg)?);
        let mut cache = self.cache.write().expect("cache lock");
        if let Some((_, s)) = cache.iter().find(|(k, _)| *k == key) {
            return Ok(Arc::clone(s));
        }
        cache.push((key, Arc::clone(&built)));
        Ok(built)
    }
}

impl DiffusionSampler for GmmSampler {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn forward(&self, x0: &[f64], t: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        forward_sample(x0, t, rng)
    }

    fn reverse(&self, x_t: &[f64], t: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        if x_t.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x_t.len(),
            });
        }
        self.sampler(t)?.run(x_t, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Noising time `T̲`.
    pub t_under: f64,
    /// Reconstructions per candidate `N`.
    pub n_samples: usize,
    /// Process horizon `T`.
    pub horizon: f64,
}

impl AttackConfig {
    pub fn new(t_under: f64) -> Self {
        Self {
            t_under,
            n_samples: 10,
            horizon: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_under > 0.0 && self.t_under < self.horizon) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < t_under < horizon, got t_under = {}, horizon = {}",
                self.t_under, self.horizon
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// `M(θ, x) = (1/N) Σ_i ‖x̃_0^i − x‖₂`.
pub fn noise_denoise_score(sampler: &dyn DiffusionSampler, x: &[f64], cfg: &AttackConfig, rng: &mut dyn RngCore) -> Result<f64> {
    cfg.validate()?;
    let mut total = 0.0;
    for _ in 0..cfg.n_samples {
        let xt = sampler.forward(x, cfg.t_under, rng)?;
        let back = sampler.reverse(&xt, cfg.t_under, rng)?;
        total += dist(&back, x);
    }
    Ok(total / cfg.n_samples as f64)
}

pub const FPR_LEVELS: [f64; 2] = [0.01, 0.05];

#[derive(Debug, Clone, PartialEq)]
pub struct RocSummary {
    pub auc: f64,
    /// `(FPR level, TPR)` read off the step curve without interpolation.
    pub tpr_at_fpr: Vec<(f64, f64)>,
    /// `(FPR, TPR)` vertices from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
}

impl RocSummary {
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        self.points
            .iter()
            .filter(|(f, _)| *f <= fpr + 1e-12)
            .map(|&(_, t)| t)
            .fold(0.0, f64::max)
    }
}

/// ROC for the rule "member iff score ≤ τ", sweeping τ over the distinct
/// scores. The trapezoidal AUC is accumulated in integers, so it equals the
/// pair count `P(member < nonmember) + ½ P(tie)` exactly.
pub fn roc_curve(members: &[f64], nonmembers: &[f64]) -> Result<RocSummary> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InvalidArgument("ROC needs members and nonmembers".into()));
    }
    if members.iter().chain(nonmembers).any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&s| (s, true))
        .chain(nonmembers.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nm, nn) = (members.len() as u128, nonmembers.len() as u128);
    let mut points = vec![(0.0, 0.0)];
    let (mut cm, mut cn) = (0u128, 0u128);
    let mut area2 = 0u128;
    let mut i = 0;
    while i < all.len() {
        let (mut dm, mut dn) = (0u128, 0u128);
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                dm += 1;
            } else {
                dn += 1;
            }
            i += 1;
        }
        area2 += dn * (2 * cm + dm);
        cm += dm;
        cn += dn;
        points.push((cn as f64 / nn as f64, cm as f64 / nm as f64));
    }
    let mut roc = RocSummary {
        auc: area2 as f64 / (2 * nm * nn) as f64,
        tpr_at_fpr: Vec::new(),
        points,
    };
    roc.tpr_at_fpr = FPR_LEVELS.iter().map(|&a| (a, roc.tpr_at(a))).collect();
    Ok(roc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub id: usize,
    pub is_member: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub scores: Vec<CandidateScore>,
    pub roc: RocSummary,
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub seed: u64,
}

impl AttackResult {
    /// `candidate_id,is_member,score`
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("candidate_id,is_member,score\n");
        for c in &self.scores {
            out.push_str(&format!("{},{},{}\n", c.id, u8::from(c.is_member), fmt_num(c.score)));
        }
        out
    }

    /// `auc,tpr_fpr01,tpr_fpr05,n_members,n_nonmembers,seed`
    pub fn summary_csv(&self) -> String {
        format!(
            "auc,tpr_fpr01,tpr_fpr05,n_members,n_nonmembers,seed\n{},{},{},{},{},{}\n",
            fmt_num(self.roc.auc),
            fmt_num(self.roc.tpr_at(0.01)),
            fmt_num(self.roc.tpr_at(0.05)),
            self.n_members,
            self.n_nonmembers,
            self.seed
        )
    }
}

/// Synthetic memorization setup: the model places a narrow Gaussian on each
/// training point; members are training points, nonmembers fresh draws from
/// the data distribution `N(0, spread² I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedParams {
    pub dim: usize,
    pub n_train: usize,
    pub spread: f64,
    /// Variance of each memorized component.
    pub member_var: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub n_samples: usize,
    /// Reverse steps per unit of noising time (exponential integrator).
    pub steps_per_unit: f64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        Self {
            dim: 2,
            n_train: 100,
            spread: 3000.0,
            member_var: 0.25,
            n_members: 500,
            n_nonmembers: 500,
            n_samples: 10,
            steps_per_unit: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackScenario {
    pub model: Mixture<f64>,
    pub members: Vec<Vec<f64>>,
    pub nonmembers: Vec<Vec<f64>>,
    pub params: PlantedParams,
}

fn gaussian_cloud(n: usize, dim: usize, spread: f64, key: StreamKey) -> Vec<Vec<f64>> {
    par_map_indexed(key, n, |_, rng| (0..dim).map(|_| spread * f64::std_normal(rng)).collect())
}

fn planted_model(p: &PlantedParams, key: StreamKey) -> Result<(Mixture<f64>, Vec<Vec<f64>>)> {
    if p.n_train == 0 || p.n_members == 0 || p.n_nonmembers == 0 || p.dim == 0 {
        return Err(Error::InvalidArgument("scenario sizes must be positive".into()));
    }
    let train = gaussian_cloud(p.n_train, p.dim, p.spread, key.derive(0));
    let comps = train
        .iter()
        .map(|x| GaussianComponent::new(x.clone(), Covariance::Isotropic(p.member_var)))
        .collect::<Result<Vec<_>>>()?;
    Ok((Mixture::equal_weights(comps)?, train))
}

/// Members are training points chosen uniformly (with replacement).
pub fn planted_scenario(p: PlantedParams, key: StreamKey) -> Result<AttackScenario> {
    let (model, train) = planted_model(&p, key)?;
    let picks = par_map_indexed(key.derive(1), p.n_members, |_, rng| {
        (f64::unit_uniform(rng) * train.len() as f64) as usize
    });
    let members = picks.into_iter().map(|i| train[i.min(train.len() - 1)].clone()).collect();
    let nonmembers = gaussian_cloud(p.n_nonmembers, p.dim, p.spread, key.derive(2));
    Ok(AttackScenario {
        model,
        members,
        nonmembers,
        params: p,
    })
}

/// Same model, but members and nonmembers are both fresh data draws.
pub fn null_scenario(p: PlantedParams, key: StreamKey) -> Result<AttackScenario> {
    let (model, _) = planted_model(&p, key)?;
    Ok(AttackScenario {
        model,
        members: gaussian_cloud(p.n_members, p.dim, p.spread, key.derive(3)),
        nonmembers: gaussian_cloud(p.n_nonmembers, p.dim, p.spread, key.derive(2)),
        params: p,
    })
}

impl AttackScenario {
    /// Retention window of each training component from the sub-Gaussian
    /// bound (`Υ = 0`, `σ² = member_var`) with target `{m}`; the upper sides
    /// say up to which `T̲` a member's own component is kept.
    pub fn retention_windows(&self, eps: f64) -> Result<Vec<WindowEstimate<f64>>> {
        let k = self.model.len();
        let sigma = self.params.member_var.sqrt();
        (0..k)
            .map(|m| {
                let s = SubsetSpec::single(m, k)?;
                let stats = crate::gmm::separation_stats(&self.model, &s, &s)?;
                bounds_wasserstein(&stats, 0.0, sigma, eps)
            })
            .collect()
    }

    /// Noising time up to which all but a `lost_share` fraction of the
    /// training components keep their own window; components without a
    /// window count as zero. `None` if no such positive time exists.
    ///
    /// The plain minimum is useless at scale: one close pair of training
    /// points drags it to zero while every other member is still retained.
    pub fn predicted_retention(&self, eps: f64, lost_share: f64) -> Result<Option<f64>> {
        if !(0.0..1.0).contains(&lost_share) {
            return Err(Error::InvalidArgument(format!("lost_share must be in [0, 1), got {lost_share}")));
        }
        let mut ups: Vec<f64> = self
            .retention_windows(eps)?
            .iter()
            .map(|w| w.t_upper.unwrap_or(0.0))
            .collect();
        ups.sort_by(f64::total_cmp);
        let u = ups[(lost_share * ups.len() as f64).floor() as usize];
        Ok((u > 0.0).then_some(u))
    }

    /// Predicted time after which every member reconstructs to the full
    /// model: the sub-Gaussian `T_lower` with target `[K]`.
    pub fn predicted_mixing(&self, eps: f64) -> Result<f64> {
        let k = self.model.len();
        let full = SubsetSpec::full(k);
        let mut worst: f64 = 0.0;
        for m in 0..k {
            let s = SubsetSpec::single(m, k)?;
            let stats = crate::gmm::separation_stats(&self.model, &s, &full)?;
            let w = bounds_wasserstein(&stats, 0.0, self.params.member_var.sqrt(), eps)?;
            worst = worst.max(w.t_lower.unwrap_or(f64::INFINITY));
        }
        Ok(worst)
    }

    pub fn sampler(&self) -> GmmSampler {
        GmmSampler::with_resolution(self.model.clone(), self.params.steps_per_unit, 200, Integrator::Exponential)
    }
}

/// Scores every candidate (members first) at noising time `t_under` and
/// summarizes the ROC.
pub fn run_attack_experiment(scenario: &AttackScenario, t_under: f64, key: StreamKey) -> Result<AttackResult> {
    let cfg = AttackConfig {
        t_under,
        n_samples: scenario.params.n_samples,
        horizon: t_under.max(1.0) * 2.0,
    };
    cfg.validate()?;
    let sampler = scenario.sampler();
    let candidates: Vec<(&Vec<f64>, bool)> = scenario
        .members
        .iter()
        .map(|x| (x, true))
        .chain(scenario.nonmembers.iter().map(|x| (x, false)))
        .collect();
    let scores = par_map_indexed(key, candidates.len(), |i, rng| {
        let (x, is_member) = candidates[i];
        noise_denoise_score(&sampler, x, &cfg, rng).map(|score| CandidateScore { id: i, is_member, score })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let m: Vec<f64> = scores.iter().filter(|c| c.is_member).map(|c| c.score).collect();
    let n: Vec<f64> = scores.iter().filter(|c| !c.is_member).map(|c| c.score).collect();
    Ok(AttackResult {
        roc: roc_curve(&m, &n)?,
        n_members: m.len(),
        n_nonmembers: n.len(),
        seed: key.seed,
        scores,
    })
}
