//! Turns a validated [`ExperimentConfig`] into in-memory artifacts and writes
//! them, with a manifest, to an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cwlab_core::divergence::{hellinger_sq_gaussian, lecam_mc, score_gap_moment, tv_mc};
use cwlab_core::gmm::separation_stats;
use cwlab_core::hierarchy::{critical_schedule, synthesize_tree, verify_schedule_empirical};
use cwlab_core::io::{fmt_num, mixture_to_toml};
use cwlab_core::mia::{null_scenario, planted_scenario, run_attack_experiment};
use cwlab_core::quadrature::tv_quadrature_1d;
use cwlab_core::sim::{default_steps, endpoint_mixture, membership_classify, targeted_reverse, Integrator};
use cwlab_core::windows::{
    bounds_identity, bounds_wasserstein, bounds_wellconditioned, empirical_window, WINDOW_CSV_HEADER,
};
use cwlab_core::{Covariance, GaussianComponent, Mixture, StreamKey, SubsetSpec, TrajectoryConfig, WindowEstimate};
use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{subset, BoundFamily, ExperimentConfig, ExperimentKind, ScenarioKind, TUnderSpec};
use crate::error::{CliError, Result};
use crate::svg::{LinePlot, Series, VLine};

/// Output files by name, in a stable order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: BTreeMap<String, String>,
}

impl Artifacts {
    fn put(&mut self, name: impl Into<String>, body: String) {
        self.files.insert(name.into(), body);
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(String::as_str)
    }

    /// Names of the CSV files, which fall under the determinism contract.
    pub fn csv_names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str).filter(|n| n.ends_with(".csv"))
    }
}

/// Computes every artifact of `cfg`; relative mixture files resolve against `base`.
pub fn execute(cfg: &ExperimentConfig, base: &Path) -> Result<Artifacts> {
    cfg.validate(base)?;
    let key = StreamKey::new(cfg.seed);
    match cfg.kind {
        ExperimentKind::Occupancy => occupancy(cfg, &cfg.load_mixture(base)?, key),
        ExperimentKind::Windows => windows(cfg, &cfg.load_mixture(base)?, key),
        ExperimentKind::Hierarchy => hierarchy(cfg, key),
        ExperimentKind::Mia => mia(cfg, key),
        ExperimentKind::DivergenceAudit => audit(cfg, key),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    kind: &'a str,
    seed: u64,
    config_sha256: String,
    threads: usize,
    files: BTreeMap<&'a str, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Executes `cfg` and writes its artifacts, the effective configuration and
/// `manifest.toml` into `out`.
pub fn run(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<Artifacts> {
    let art = execute(cfg, base)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let write = |name: &str, body: &str| {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| CliError::io(p, e))
    };
    for (name, body) in &art.files {
        write(name, body)?;
    }
    let config = cfg.to_toml();
    write("config.toml", &config)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        kind: cfg.kind.name(),
        seed: cfg.seed,
        config_sha256: sha256_hex(config.as_bytes()),
        threads: rayon::current_num_threads(),
        files: art.files.iter().map(|(n, b)| (n.as_str(), sha256_hex(b.as_bytes()))).collect(),
    };
    write("manifest.toml", &toml::to_string(&manifest).expect("manifest serializes"))?;
    Ok(art)
}

fn label(s: &SubsetSpec) -> String {
    s.indices().iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn all_identity(m: &Mixture) -> bool {
    m.components().iter().all(|c| match c.covariance() {
        Covariance::Isotropic(v) => *v == 1.0,
        Covariance::Diagonal(v) => v.iter().all(|&x| x == 1.0),
        Covariance::Full(s) => {
            let d = s.dim();
            (0..d).all(|i| (0..d).all(|j| s.get(i, j) == if i == j { 1.0 } else { 0.0 }))
        }
    })
}

fn trajectory(t: f64, steps: Option<usize>, integrator: Integrator, t_floor: Option<f64>) -> TrajectoryConfig {
    let mut c = TrajectoryConfig::new(t)
        .with_steps(steps.unwrap_or_else(|| default_steps(t)))
        .with_integrator(integrator);
    if let Some(f) = t_floor {
        c = c.with_t_floor(f);
    }
    c
}

/// Closed-form window ends for `s_init → target`, identity family when every
/// covariance is the identity and well-conditioned otherwise.
fn closed_window(m: &Mixture, s_init: &SubsetSpec, target: &SubsetSpec, eps: f64) -> Result<WindowEstimate> {
    let stats = separation_stats(m, s_init, target)?;
    Ok(if all_identity(m) {
        bounds_identity(&stats, eps)?
    } else {
        bounds_wellconditioned(&stats, eps)?
    })
}

fn occupancy(cfg: &ExperimentConfig, m: &Mixture, key: StreamKey) -> Result<Artifacts> {
    let o = &cfg.occupancy;
    let k = m.len();
    let s_init = subset(&o.s_init, k)?;
    let times = o.grid.times()?;

    let mut rows = Vec::with_capacity(times.len());
    for (g, &t) in times.iter().enumerate() {
        let run = trajectory(t, o.steps, o.integrator.into(), o.t_floor);
        let samples = targeted_reverse(m, &s_init, &run, o.n, key.derive(g as u64))?;
        rows.push(membership_classify(&samples, &endpoint_mixture(m, &run)?, o.radius));
    }
    let curve = cwlab_core::sim::OccupancyCurve {
        times: times.clone(),
        proportions: rows,
    };

    // threshold lines: every positive closed-form window end
    let mut lines: Vec<(f64, &str, String, WindowEstimate)> = Vec::new();
    for target in &o.targets {
        let target = subset(target, k)?;
        let w = closed_window(m, &s_init, &target, o.epsilon)?;
        for (side, v) in [("lower", w.t_lower), ("upper", w.t_upper)] {
            if let Some(v) = v.filter(|v| *v > 0.0) {
                lines.push((v, side, label(&target), w.clone()));
            }
        }
    }
    lines.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut thresholds = String::from("name,t,side,s_init,s_target,method\n");
    let mut vlines = Vec::new();
    for (i, (t, side, target, w)) in lines.iter().enumerate() {
        let name = format!("t{}", i + 1);
        let raw = fmt_num(*t);
        thresholds.push_str(&format!("{name},{raw},{side},{},{target},{}\n", label(&s_init), w.method));
        vlines.push(VLine { label: name, x: *t, raw });
    }

    let mut plot = LinePlot::new(
        &format!("Targeted reverse process from {{{}}}", label(&s_init)),
        "noise level T",
        "share of samples",
        "occupancy.csv",
    );
    plot.y_range = Some((0.0, 1.0));
    plot.vline_source = "thresholds.csv".into();
    plot.vlines = vlines;
    for c in 0..=k {
        let column = if c == k { "unassigned".to_string() } else { format!("cluster_{c}") };
        plot.series.push(Series {
            label: column.clone(),
            column,
            key: None,
            points: curve.times.iter().zip(&curve.proportions).map(|(&t, r)| (t, r[c])).collect(),
        });
    }

    let mut art = Artifacts::default();
    art.put("occupancy.csv", curve.to_csv());
    art.put("thresholds.csv", thresholds);
    art.put("occupancy.svg", plot.to_svg());
    Ok(art)
}

fn windows(cfg: &ExperimentConfig, m: &Mixture, key: StreamKey) -> Result<Artifacts> {
    let w = &cfg.windows;
    let k = m.len();
    let sigma = match w.sigma {
        Some(s) => s,
        None => m.components().iter().map(|c| c.eigen_bounds().1.sqrt()).fold(0.0, f64::max),
    };
    let mut csv = format!("{WINDOW_CSV_HEADER}\n");
    let mut row = 0u64;
    for pair in &w.pairs {
        let (a, b) = (subset(&pair.s_init, k)?, subset(&pair.s_target, k)?);
        let stats = separation_stats(m, &a, &b)?;
        for &eps in &w.epsilons {
            for &family in &w.families {
                let est = match family {
                    BoundFamily::Identity => {
                        if !all_identity(m) {
                            return Err(CliError::Config(
                                "the identity family needs identity covariances; use well-conditioned".into(),
                            ));
                        }
                        bounds_identity(&stats, eps)?
                    }
                    BoundFamily::WellConditioned => bounds_wellconditioned(&stats, eps)?,
                    BoundFamily::Wasserstein => bounds_wasserstein(&stats, w.upsilon, sigma, eps)?,
                    BoundFamily::Empirical => empirical_window(m, &a, &b, eps, w.horizon, w.n, key.derive(row))?,
                };
                row += 1;
                csv.push_str(&est.to_csv_row(&label(&a), &label(&b)));
                csv.push('\n');
            }
        }
    }
    let mut art = Artifacts::default();
    art.put("windows.csv", csv);
    Ok(art)
}

/// Share of samples that must land inside `f(u_ℓ)`: `1 − 5ε`, or `1 − ε`
/// where the former is vacuous.
pub fn inside_threshold(eps: f64) -> f64 {
    if 5.0 * eps < 1.0 {
        1.0 - 5.0 * eps
    } else {
        1.0 - eps
    }
}

fn hierarchy(cfg: &ExperimentConfig, key: StreamKey) -> Result<Artifacts> {
    let h = &cfg.hierarchy;
    let (tree, m) = synthesize_tree(h.levels, h.scale, h.dim, h.slack, key.derive(0))?;
    let schedule = critical_schedule(&tree, h.leaf, h.epsilon)?;
    let threshold = inside_threshold(h.epsilon);
    let mut verification = String::from("level,t,target,inside,threshold,pass\n");
    if schedule.k > 0 {
        let radius = h.radius.unwrap_or((h.dim as f64).sqrt() + 4.0);
        // the step count and integrator carry over; the time is set per level
        let base = trajectory(1.0, Some(h.steps), h.integrator.into(), None);
        let checks = verify_schedule_empirical(&tree, &m, h.leaf, &schedule, h.n, radius, &base, key.derive(1))?;
        for c in checks {
            verification.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.level,
                fmt_num(c.t),
                c.target,
                fmt_num(c.inside),
                fmt_num(threshold),
                c.inside >= threshold
            ));
        }
    }
    let mut art = Artifacts::default();
    art.put("tree.toml", tree.to_toml());
    art.put("mixture.toml", mixture_to_toml(&m));
    art.put("schedule.csv", schedule.to_csv());
    art.put("verification.csv", verification);
    Ok(art)
}

fn relation(t: f64, keep: Option<f64>, mix: f64) -> &'static str {
    match keep {
        Some(k) if t <= k => "inside",
        _ if t < mix => "above",
        _ => "mixed",
    }
}

fn mia(cfg: &ExperimentConfig, key: StreamKey) -> Result<Artifacts> {
    let a = &cfg.mia;
    let params = a.params();
    let scenario = match a.scenario {
        ScenarioKind::Planted => planted_scenario(params, key.derive(0))?,
        ScenarioKind::Null => null_scenario(params, key.derive(0))?,
    };
    let keep = scenario.predicted_retention(a.epsilon, a.lost_share)?;
    let mix = scenario.predicted_mixing(a.epsilon)?;
    let times = match &a.t_under {
        TUnderSpec::List(v) => v.clone(),
        TUnderSpec::Keyword(_) => {
            let k = keep.ok_or_else(|| {
                CliError::Config("t_under = \"auto\" needs a retention window; give explicit times".into())
            })?;
            if !(mix.is_finite() && mix > k) {
                return Err(CliError::Config(format!(
                    "t_under = \"auto\" needs retention {k} below mixing {mix}; give explicit times"
                )));
            }
            vec![0.5 * k, k, 0.5 * (k + mix), mix, mix + 1.5]
        }
    };

    let mut art = Artifacts::default();
    art.put(
        "predictions.csv",
        format!(
            "quantity,value\nretention,{}\nmixing,{}\n",
            keep.map(fmt_num).unwrap_or_default(),
            fmt_num(mix)
        ),
    );
    let mut sweep = String::from("t_under,relation,auc,tpr_fpr01,tpr_fpr05,n_members,n_nonmembers,seed\n");
    let mut roc = String::from("t_under,fpr,tpr\n");
    let mut plot = LinePlot::new("Noise-denoise attack ROC", "false positive rate", "true positive rate", "roc.csv");
    plot.y_range = Some((0.0, 1.0));
    plot.diagonal = true;
    for (g, &t) in times.iter().enumerate() {
        let res = run_attack_experiment(&scenario, t, key.derive(10 + g as u64))?;
        let tk = fmt_num(t);
        sweep.push_str(&format!(
            "{tk},{},{},{},{},{},{},{}\n",
            relation(t, keep, mix),
            fmt_num(res.roc.auc),
            fmt_num(res.roc.tpr_at(0.01)),
            fmt_num(res.roc.tpr_at(0.05)),
            res.n_members,
            res.n_nonmembers,
            cfg.seed
        ));
        for &(f, p) in &res.roc.points {
            roc.push_str(&format!("{tk},{},{}\n", fmt_num(f), fmt_num(p)));
        }
        plot.series.push(Series {
            label: format!("T = {t:.3} (AUC {:.3})", res.roc.auc),
            column: "tpr".into(),
            key: Some(tk),
            points: res.roc.points.clone(),
        });
        art.put(format!("scores_{g}.csv"), res.scores_csv());
        art.put(format!("summary_{g}.csv"), res.summary_csv());
    }
    art.put("sweep.csv", sweep);
    art.put("roc.csv", roc);
    art.put("roc.svg", plot.to_svg());
    Ok(art)
}

fn normal_1d(mean: f64, var: f64) -> Result<GaussianComponent> {
    Ok(GaussianComponent::new(vec![mean], Covariance::Isotropic(var))?)
}

fn single(c: GaussianComponent) -> Result<Mixture> {
    Ok(Mixture::new(vec![c], vec![1.0])?)
}

fn random_mixture_1d(rng: &mut impl Rng) -> Result<Mixture> {
    let k = rng.random_range(1..=3usize);
    let comps = (0..k)
        .map(|_| normal_1d(rng.random_range(-4.0..4.0), rng.random_range(0.5..2.0)))
        .collect::<Result<Vec<_>>>()?;
    let raw = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    Ok(Mixture::normalized(comps, raw)?)
}

/// Least-squares slope and intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn audit(cfg: &ExperimentConfig, key: StreamKey) -> Result<Artifacts> {
    let a = &cfg.audit;
    let mut art = Artifacts::default();

    // ½(1 − LC) ≤ ½(1 − ½H²) ≤ ½√(1 − TV²) on random Gaussian pairs
    let params = key.derive(0);
    let mut csv = String::from("pair,mu_p,var_p,mu_q,var_q,lecam_side,lecam_se,hellinger_side,tv_side,holds\n");
    for i in 0..a.gaussian_pairs {
        let mut rng = params.stream(i as u64);
        let (mp, vp, mq, vq) = (
            rng.random_range(-3.0..3.0),
            rng.random_range(0.25..4.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.25..4.0),
        );
        let (p, q) = (normal_1d(mp, vp)?, normal_1d(mq, vq)?);
        let h2 = hellinger_sq_gaussian(&p, &q)?;
        let (p, q) = (single(p)?, single(q)?);
        let lc = lecam_mc(&p, &q, a.n, key.derive(1).derive(i as u64))?;
        let tv = tv_quadrature_1d(&p, &q)?;
        let left = lc.ratio;
        let mid = 0.5 * (1.0 - 0.5 * h2);
        let right = 0.5 * (1.0 - tv.value * tv.value).max(0.0).sqrt();
        // the quadrature error enters the right side through √(1 − TV²)
        let right_tol = tv.std_error / (1.0 - tv.value * tv.value).max(1e-12).sqrt();
        let holds = left <= mid + 3.0 * lc.ratio_std_error && mid <= right + right_tol + 1e-12;
        csv.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{holds}\n",
            fmt_num(mp),
            fmt_num(vp),
            fmt_num(mq),
            fmt_num(vq),
            fmt_num(left),
            fmt_num(lc.ratio_std_error),
            fmt_num(mid),
            fmt_num(right)
        ));
    }
    art.put("audit_gaussian.csv", csv);

    // Monte Carlo TV against quadrature on random 1D mixture pairs
    let params = key.derive(2);
    let mut csv = String::from("pair,k_p,k_q,tv_mc,std_error,tv_quadrature,abs_diff,tolerance,agree\n");
    for i in 0..a.mixture_pairs {
        let mut rng = params.stream(i as u64);
        let p = random_mixture_1d(&mut rng)?;
        let q = random_mixture_1d(&mut rng)?;
        let mc = tv_mc(&p, &q, a.n, key.derive(3).derive(i as u64))?;
        let quad = tv_quadrature_1d(&p, &q)?;
        let diff = (mc.value - quad.value).abs();
        let tol = (3.0 * mc.std_error).max(0.01);
        csv.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{}\n",
            p.len(),
            q.len(),
            fmt_num(mc.value),
            fmt_num(mc.std_error),
            fmt_num(quad.value),
            fmt_num(diff),
            fmt_num(tol),
            diff <= tol
        ));
    }
    art.put("audit_mixtures.csv", csv);

    // fourth moment of the score gap between two separated components
    let params = key.derive(4);
    let mut points = String::from("pair,mu_0,var_0,mu_1,var_1,t,moment\n");
    let mut fits = String::from("pair,slope,intercept,in_range\n");
    for i in 0..a.score_gap_pairs {
        let mut rng = params.stream(i as u64);
        let (m0, m1) = loop {
            let (x, y): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            if (x - y).abs() >= 1.0 {
                break (x, y);
            }
        };
        let (v0, v1) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let m = Mixture::equal_weights(vec![normal_1d(m0, v0)?, normal_1d(m1, v1)?])?;
        let pair = [m0, v0, m1, v1].map(fmt_num).join(",");
        let mut logs = Vec::with_capacity(a.score_gap_times.len());
        for (g, &t) in a.score_gap_times.iter().enumerate() {
            let v = score_gap_moment(&m, (0, 0, 1), t, a.score_gap_n, key.derive(5).derive(i as u64).derive(g as u64))?;
            points.push_str(&format!("{i},{pair},{},{}\n", fmt_num(t), fmt_num(v)));
            logs.push(v.ln());
        }
        let (slope, intercept) = linear_fit(&a.score_gap_times, &logs);
        fits.push_str(&format!(
            "{i},{},{},{}\n",
            fmt_num(slope),
            fmt_num(intercept),
            (-6.0..=-2.0).contains(&slope)
        ));
    }
    art.put("score_gap.csv", points);
    art.put("score_gap_fit.csv", fits);
    Ok(art)
}
