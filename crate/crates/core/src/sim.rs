//! Forward noising, reverse-SDE denoising with the exact mixture score, and
//! the targeted reverse process.
//!
//! The forward process `dX = −X dt + √2 dB` is sampled in closed form. The
//! reverse process
//!
//! ```text
//! dX = (X + 2 ∇ln q_{T̂−s}(X)) ds + √2 dB,   s ∈ [0, T̂ − t_floor]
//! ```
//!
//! is discretized on a uniform grid, either by Euler–Maruyama or by an
//! exponential integrator that solves the linear part exactly and freezes the
//! score over each step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{Mixture, ScoreWorkspace, SubsetSpec};
use crate::io::fmt_num;
use crate::rng::{par_map_indexed, StreamKey};
use crate::scalar::{dist, Scalar};

pub const DEFAULT_T_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    EulerMaruyama,
    Exponential,
}

/// Noise level and discretization of one noise-then-denoise pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig<S> {
    /// Noise level `T̂`.
    pub t_hat: S,
    pub steps: usize,
    pub integrator: Integrator,
    /// Reverse integration stops at forward time `t_floor`.
    pub t_floor: S,
}

/// `max(1000, ⌈500·T̂⌉)`
pub fn default_steps(t_hat: f64) -> usize {
    1000.max((500.0 * t_hat).ceil() as usize)
}

fn default_floor<S: Scalar>(t_hat: S) -> S {
    let floor = S::lit(DEFAULT_T_FLOOR);
    if t_hat > floor * S::lit(2.0) {
        floor
    } else {
        S::zero()
    }
}

impl<S: Scalar> TrajectoryConfig<S> {
    /// Euler–Maruyama with the default step rule and floor.
    pub fn new(t_hat: S) -> Self {
        Self {
            t_hat,
            steps: default_steps(t_hat.as_f64()),
            integrator: Integrator::EulerMaruyama,
            t_floor: default_floor(t_hat),
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_t_floor(mut self, t_floor: S) -> Self {
        self.t_floor = t_floor;
        self
    }

    /// Same integrator and step count at a new noise level; the floor is reset
    /// to the default for that level.
    pub fn retimed(&self, t_hat: S) -> Self {
        Self {
            t_hat,
            t_floor: default_floor(t_hat),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_hat >= S::zero()) || !self.t_hat.is_finite() {
            return Err(Error::NegativeTime(self.t_hat.as_f64()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        let floor_ok = self.t_floor >= S::zero() && self.t_floor < self.t_hat;
        if !(floor_ok || self.t_hat == S::zero()) {
            return Err(Error::InvalidArgument(format!(
                "t_floor {} must lie in [0, t_hat = {})",
                self.t_floor, self.t_hat
            )));
        }
        Ok(())
    }
}

/// Exact draw of `X_t = e^{−t} x0 + √(1 − e^{−2t}) ξ`.
pub fn forward_sample<S: Scalar, R: Rng + ?Sized>(x0: &[S], t: S, rng: &mut R) -> Result<Vec<S>> {
    if !(t >= S::zero()) {
        return Err(Error::NegativeTime(t.as_f64()));
    }
    if t == S::zero() {
        return Ok(x0.to_vec());
    }
    let decay = (-t).exp();
    let sd = (-(-S::lit(2.0) * t).exp_m1()).sqrt();
    Ok(x0.iter().map(|&x| decay * x + sd * S::std_normal(rng)).collect())
}

/// Reverse-SDE integrator for one mixture and one trajectory configuration.
///
/// The evolved mixtures at every grid time are built once and shared by all
/// trajectories.
#[derive(Debug, Clone)]
pub struct ReverseSampler<S> {
    cfg: TrajectoryConfig<S>,
    schedule: Vec<Mixture<S>>,
    lin: S,
    score_coef: S,
    noise_sd: S,
}

impl<S: Scalar> ReverseSampler<S> {
    pub fn new(mixture: &Mixture<S>, cfg: TrajectoryConfig<S>) -> Result<Self> {
        cfg.validate()?;
        if cfg.t_hat == S::zero() {
            return Ok(Self {
                cfg,
                schedule: Vec::new(),
                lin: S::one(),
                score_coef: S::zero(),
                noise_sd: S::zero(),
            });
        }
        let span = cfg.t_hat - cfg.t_floor;
        let h = span / S::lit(cfg.steps as f64);
        let schedule = (0..cfg.steps)
            .map(|k| {
                let tau = (cfg.t_hat - S::lit(k as f64) * h).max(S::zero());
                mixture.evolved(tau)
            })
            .collect();
        let two = S::lit(2.0);
        let (lin, score_coef, noise_sd) = match cfg.integrator {
            Integrator::EulerMaruyama => (S::one() + h, two * h, (two * h).sqrt()),
            Integrator::Exponential => {
                let em1 = h.exp_m1();
                (h.exp(), two * em1, (two * h).exp_m1().sqrt())
            }
        };
        Ok(Self {
            cfg,
            schedule,
            lin,
            score_coef,
            noise_sd,
        })
    }

    pub fn config(&self) -> &TrajectoryConfig<S> {
        &self.cfg
    }

    /// Integrates from `x_start` at forward time `T̂` down to `t_floor`.
    pub fn run<R: Rng + ?Sized>(&self, x_start: &[S], rng: &mut R) -> Result<Vec<S>> {
        let mut x = x_start.to_vec();
        if self.schedule.is_empty() {
            return Ok(x);
        }
        let d = x.len();
        let k = self.schedule[0].len();
        let mut ws = ScoreWorkspace::new(k, d);
        let mut score = vec![S::zero(); d];
        for (step, m) in self.schedule.iter().enumerate() {
            m.score_with(&x, &mut ws, &mut score);
            let mut ok = true;
            for (xi, &si) in x.iter_mut().zip(&score) {
                *xi = self.lin * *xi + self.score_coef * si + self.noise_sd * S::std_normal(rng);
                ok &= xi.is_finite();
            }
            if !ok {
                return Err(Error::NonFinite { step });
            }
        }
        Ok(x)
    }
}

/// Endpoint of the discretized reverse SDE started at `x_start`.
pub fn reverse_integrate<S: Scalar, R: Rng + ?Sized>(
    mixture: &Mixture<S>,
    x_start: &[S],
    cfg: &TrajectoryConfig<S>,
    rng: &mut R,
) -> Result<Vec<S>> {
    if x_start.len() != mixture.dim() {
        return Err(Error::DimensionMismatch {
            expected: mixture.dim(),
            got: x_start.len(),
        });
    }
    if x_start.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("start point is not finite".into()));
    }
    ReverseSampler::new(mixture, *cfg)?.run(x_start, rng)
}

/// `n` draws of the targeted reverse process: sample `p^{S_init}`, noise for
/// `T̂`, denoise for `T̂` with the score of the full mixture.
pub fn targeted_reverse<S: Scalar>(
    mixture: &Mixture<S>,
    s_init: &SubsetSpec,
    cfg: &TrajectoryConfig<S>,
    n: usize,
    key: StreamKey,
) -> Result<Vec<Vec<S>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let init = mixture.submixture(s_init)?;
    let sampler = ReverseSampler::new(mixture, *cfg)?;
    par_map_indexed(key, n, |_, rng| {
        let x0 = init.sample(rng);
        let xt = forward_sample(&x0, cfg.t_hat, rng)?;
        sampler.run(&xt, rng)
    })
    .into_iter()
    .collect()
}

/// Nearest-mean assignment within `radius`; ties go to the lower index.
/// Returns `K + 1` proportions, the last being the unassigned share.
pub fn membership_classify<S: Scalar>(samples: &[Vec<S>], mixture: &Mixture<S>, radius: S) -> Vec<f64> {
    let k = mixture.len();
    let mut counts = vec![0usize; k + 1];
    for x in samples {
        counts[assign(x, mixture, radius).unwrap_or(k)] += 1;
    }
    let n = samples.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Index of the nearest component mean if it lies within `radius`.
pub fn assign<S: Scalar>(x: &[S], mixture: &Mixture<S>, radius: S) -> Option<usize> {
    let mut best = (S::infinity(), 0usize);
    for (i, c) in mixture.components().iter().enumerate() {
        let d = dist(x, c.mean());
        if d < best.0 {
            best = (d, i);
        }
    }
    (best.0 <= radius).then_some(best.1)
}

/// Cluster proportions of targeted-reverse samples over a grid of noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyCurve {
    pub times: Vec<f64>,
    /// One row per time: `K` cluster shares then the unassigned share.
    pub proportions: Vec<Vec<f64>>,
}

impl OccupancyCurve {
    pub fn clusters(&self) -> usize {
        self.proportions.first().map_or(0, |r| r.len() - 1)
    }

    /// `t,cluster_0,…,cluster_{K-1},unassigned`
    pub fn to_csv(&self) -> String {
        let k = self.clusters();
        let mut out = String::from("t");
        for i in 0..k {
            out.push_str(&format!(",cluster_{i}"));
        }
        out.push_str(",unassigned\n");
        for (t, row) in self.times.iter().zip(&self.proportions) {
            out.push_str(&fmt_num(*t));
            for v in row {
                out.push(',');
                out.push_str(&fmt_num(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// The law the reverse process actually targets: trajectories stop at
/// `t_floor`, which shrinks the means by `e^{-t_floor}`; for means of norm
/// `10¹⁰` that is far outside any classification radius.
pub fn endpoint_mixture<S: Scalar>(mixture: &Mixture<S>, cfg: &TrajectoryConfig<S>) -> Result<Mixture<S>> {
    if cfg.t_hat == S::zero() {
        return Ok(mixture.clone());
    }
    mixture.evolve(cfg.t_floor)
}

/// Runs [`targeted_reverse`] at each grid time (`cfg` retimed to that `T̂`)
/// and classifies the endpoints against [`endpoint_mixture`].
#[allow(clippy::too_many_arguments)]
pub fn occupancy_curve<S: Scalar>(
    mixture: &Mixture<S>,
    s_init: &SubsetSpec,
    t_grid: &[S],
    cfg: &TrajectoryConfig<S>,
    n: usize,
    radius: S,
    key: StreamKey,
) -> Result<OccupancyCurve> {
    if t_grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidArgument("time grid must be ascending".into()));
    }
    let mut times = Vec::with_capacity(t_grid.len());
    let mut proportions = Vec::with_capacity(t_grid.len());
    for (g, &t) in t_grid.iter().enumerate() {
        let run = cfg.retimed(t);
        let samples = targeted_reverse(mixture, s_init, &run, n, key.derive(g as u64))?;
        times.push(t.as_f64());
        proportions.push(membership_classify(&samples, &endpoint_mixture(mixture, &run)?, radius));
    }
    Ok(OccupancyCurve { times, proportions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{Covariance, GaussianComponent};

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn default_step_rule() {
        assert_eq!(default_steps(1.0), 1000);
        assert_eq!(default_steps(12.6), 6300);
        let c = TrajectoryConfig::new(5.0f64);
        assert_eq!(c.steps, 2500);
        assert_eq!(c.t_floor, 1e-4);
        assert_eq!(TrajectoryConfig::new(1e-9f64).t_floor, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrajectoryConfig::new(1.0f64).with_steps(0).validate().is_err());
        assert!(TrajectoryConfig::new(-1.0f64).validate().is_err());
        assert!(TrajectoryConfig::new(1.0f64).with_t_floor(2.0).validate().is_err());
        assert!(TrajectoryConfig::new(0.0f64).validate().is_ok());
    }

    #[test]
    fn forward_at_zero_is_identity() {
        let mut rng = StreamKey::new(0).stream(0);
        let x = vec![1.5, -2.0];
        assert_eq!(forward_sample(&x, 0.0, &mut rng).unwrap(), x);
        assert!(forward_sample(&x, -0.1, &mut rng).is_err());
    }

    #[test]
    fn forward_moments_at_t1() {
        let n = 100_000;
        let x0 = [3.0];
        let draws: Vec<f64> = par_map_indexed(StreamKey::new(11), n, |_, r| {
            forward_sample(&x0, 1.0, r).unwrap()[0]
        });
        let (m, v) = mean_var(&draws);
        let want_m = (-1f64).exp() * 3.0;
        let want_v = 1.0 - (-2f64).exp();
        let se_m = (want_v / n as f64).sqrt();
        let se_v = want_v * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((m - want_m).abs() < 5.0 * se_m, "mean {m} vs {want_m}");
        assert!((v - want_v).abs() < 5.0 * se_v, "var {v} vs {want_v}");
    }

    #[test]
    fn forward_long_time_is_stationary() {
        let n = 100_000;
        let draws: Vec<f64> = par_map_indexed(StreamKey::new(12), n, |_, r| {
            forward_sample(&[0.0], 50.0, r).unwrap()[0]
        });
        let (m, _) = mean_var(&draws);
        assert!(m.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn reverse_zero_horizon_returns_start() {
        let m = Mixture::isotropic_equal(vec![vec![0.0]]).unwrap();
        let mut rng = StreamKey::new(0).stream(0);
        let cfg = TrajectoryConfig::new(0.0);
        assert_eq!(reverse_integrate(&m, &[2.5], &cfg, &mut rng).unwrap(), vec![2.5]);
    }

    #[test]
    fn reverse_dimension_checked() {
        let m = Mixture::isotropic_equal(vec![vec![0.0]]).unwrap();
        let mut rng = StreamKey::new(0).stream(0);
        let cfg = TrajectoryConfig::new(1.0);
        assert!(reverse_integrate(&m, &[0.0, 1.0], &cfg, &mut rng).is_err());
        assert!(reverse_integrate(&m, &[f64::NAN], &cfg, &mut rng).is_err());
    }

    #[test]
    fn reverse_reports_blowup_step() {
        let m = Mixture::isotropic_equal(vec![vec![0.0]]).unwrap();
        let mut rng = StreamKey::new(0).stream(0);
        let cfg = TrajectoryConfig::new(1.0).with_steps(10);
        let err = reverse_integrate(&m, &[1e308], &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 0 }), "{err:?}");
    }

    #[test]
    fn reverse_preserves_standard_normal() {
        let m = Mixture::isotropic_equal(vec![vec![0.0, 0.0]]).unwrap();
        let cfg = TrajectoryConfig::new(2.0).with_steps(200);
        let sampler = ReverseSampler::new(&m, cfg).unwrap();
        let n = 100_000;
        let ends = par_map_indexed(StreamKey::new(3), n, |_, r| {
            let start = m.sample(r);
            sampler.run(&start, r).unwrap()
        });
        for c in 0..2 {
            let xs: Vec<f64> = ends.iter().map(|e| e[c]).collect();
            let (mu, var) = mean_var(&xs);
            assert!(mu.abs() < 5.0 / (n as f64).sqrt(), "mean {mu}");
            // EM on dX = -X ds + √2 dB has stationary variance 1/(1 - h/2)
            let h = (2.0 - 1e-4) / 200.0;
            let v_em = 1.0 / (1.0 - h / 2.0);
            let se = v_em * (2.0 / n as f64).sqrt();
            assert!((var - v_em).abs() < 5.0 * se, "var {var} vs {v_em}");
        }
    }

    #[test]
    fn exponential_integrator_preserves_standard_normal() {
        let m = Mixture::isotropic_equal(vec![vec![0.0]]).unwrap();
        let cfg = TrajectoryConfig::new(3.0)
            .with_steps(300)
            .with_integrator(Integrator::Exponential);
        let sampler = ReverseSampler::new(&m, cfg).unwrap();
        let n = 100_000;
        let xs: Vec<f64> = par_map_indexed(StreamKey::new(4), n, |_, r| {
            let start = m.sample(r);
            sampler.run(&start, r).unwrap()[0]
        });
        let (mu, var) = mean_var(&xs);
        // exact linear part: x' = (2 - e^h) x + noise, variance (e^{2h}-1)/(1-(2-e^h)^2)
        let h: f64 = (3.0 - 1e-4) / 300.0;
        let a = 2.0 - h.exp();
        let v = (2.0 * h).exp_m1() / (1.0 - a * a);
        let se = v * (2.0 / n as f64).sqrt();
        assert!(mu.abs() < 5.0 / (n as f64).sqrt());
        assert!((var - v).abs() < 5.0 * se, "var {var} vs {v}");
    }

    #[test]
    fn targeted_reverse_is_deterministic() {
        let m = Mixture::isotropic_equal(vec![vec![-5.0], vec![5.0]]).unwrap();
        let s = SubsetSpec::single(0, 2).unwrap();
        let cfg = TrajectoryConfig::new(1.0).with_steps(100);
        let a = targeted_reverse(&m, &s, &cfg, 64, StreamKey::new(5)).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| targeted_reverse(&m, &s, &cfg, 64, StreamKey::new(5)).unwrap());
        assert_eq!(a, b);
        assert!(targeted_reverse(&m, &s, &cfg, 0, StreamKey::new(5)).is_err());
    }

    #[test]
    fn classify_one_hot_and_ties() {
        let m = Mixture::isotropic_equal(vec![vec![0.0], vec![4.0], vec![20.0]]).unwrap();
        let at_means = vec![vec![4.0], vec![4.0]];
        assert_eq!(membership_classify(&at_means, &m, 5.0), vec![0.0, 1.0, 0.0, 0.0]);
        let tie = vec![vec![2.0]];
        assert_eq!(membership_classify(&tie, &m, 5.0), vec![1.0, 0.0, 0.0, 0.0]);
        let far = vec![vec![-50.0]];
        assert_eq!(membership_classify(&far, &m, 5.0), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn classify_component_draws() {
        let m = Mixture::isotropic_equal(vec![vec![-100.0], vec![0.0], vec![100.0]]).unwrap();
        let draws = par_map_indexed(StreamKey::new(8), 1000, |_, r| m.component(2).sample(r));
        let p = membership_classify(&draws, &m, 5.0);
        assert!(p[2] >= 0.99);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_at_zero_is_initial_submixture() {
        let comps = vec![
            GaussianComponent::standard(vec![-50.0]),
            GaussianComponent::new(vec![50.0], Covariance::Isotropic(0.5)).unwrap(),
        ];
        let m = Mixture::new(comps, vec![0.3, 0.7]).unwrap();
        let s = SubsetSpec::single(1, 2).unwrap();
        let cfg = TrajectoryConfig::new(1.0).with_steps(50);
        let curve = occupancy_curve(&m, &s, &[0.0], &cfg, 200, 5.0, StreamKey::new(1)).unwrap();
        assert_eq!(curve.proportions[0], vec![0.0, 1.0, 0.0]);
        assert!(occupancy_curve(&m, &s, &[1.0, 0.5], &cfg, 10, 5.0, StreamKey::new(1)).is_err());
        let csv = curve.to_csv();
        assert!(csv.starts_with("t,cluster_0,cluster_1,unassigned\n"));
    }

    #[test]
    fn reverse_recovers_pair_mixture() {
        let m = Mixture::isotropic_equal(vec![vec![-5.0], vec![5.0]]).unwrap();
        let t_hat = 5.0;
        let mt = m.evolve(t_hat).unwrap();
        let cfg = TrajectoryConfig::new(t_hat)
            .with_steps(500)
            .with_integrator(Integrator::Exponential);
        let sampler = ReverseSampler::new(&m, cfg).unwrap();
        let n = 20_000;
        let ends: Vec<f64> = par_map_indexed(StreamKey::new(21), n, |_, r| {
            let start = mt.sample(r);
            sampler.run(&start, r).unwrap()[0]
        });
        let right = ends.iter().filter(|x| **x > 0.0).count() as f64 / n as f64;
        assert!((right - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "right share {right}");
    }
}
