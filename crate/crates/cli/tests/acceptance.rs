//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (written straight to stdout so it shows without `--nocapture`) and then
//! asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use cwlab::config::{BoundFamily, ExperimentKind, GridSpec, PairSpec, ScenarioKind, TUnderSpec};
use cwlab::experiments::execute;
use cwlab::recipes;
use cwlab::{Artifacts, ExperimentConfig};
use cwlab_core::gmm::{score_decomposition_check, GaussianComponent, Mixture};
use cwlab_core::linalg::SymMat;
use cwlab_core::mia::roc_curve;
use cwlab_core::quadrature::tv_quadrature_1d;
use cwlab_core::{Covariance, StreamKey, SubsetSpec};
use rand::Rng;

fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

/// Rows of a CSV as header-keyed maps.
fn table(csv: &str) -> Vec<BTreeMap<String, String>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

fn num(row: &BTreeMap<String, String>, col: &str) -> f64 {
    row[col].parse().unwrap_or_else(|_| panic!("column {col} = {:?}", row[col]))
}

fn run(cfg: &ExperimentConfig) -> Artifacts {
    execute(cfg, Path::new(".")).expect("experiment runs")
}

fn recipe(name: &str) -> ExperimentConfig {
    recipes::find(name).unwrap().config(None).unwrap()
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_spd(rng: &mut impl Rng, d: usize) -> SymMat<f64> {
    // Q diag(λ) Qᵀ with Gram–Schmidt Q and λ ∈ [0.5, 2]
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| uniform(rng, -1.0, 1.0)).collect();
        for r in &q {
            let ip: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= ip * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    let lam: Vec<f64> = (0..d).map(|_| uniform(rng, 0.5, 2.0)).collect();
    let mut m = SymMat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            m.set(i, j, (0..d).map(|k| q[k][i] * lam[k] * q[k][j]).sum());
        }
    }
    m.symmetrized()
}

fn random_mixture(rng: &mut impl Rng, k: usize, d: usize) -> Mixture<f64> {
    let comps = (0..k)
        .map(|c| {
            let mean = (0..d).map(|_| uniform(rng, -3.0, 3.0)).collect();
            let cov = match c % 3 {
                0 => Covariance::Isotropic(uniform(rng, 0.5, 2.0)),
                1 => Covariance::Diagonal((0..d).map(|_| uniform(rng, 0.5, 2.0)).collect()),
                _ => Covariance::Full(random_spd(rng, d)),
            };
            GaussianComponent::new(mean, cov).unwrap()
        })
        .collect();
    let raw = (0..k).map(|_| uniform(rng, 0.2, 1.0)).collect();
    Mixture::normalized(comps, raw).unwrap()
}

fn figure_config() -> ExperimentConfig {
    recipe("reproduce-fig")
}

#[test]
fn figure_reproduction() {
    let mut cfg = figure_config();
    cfg.occupancy.grid = GridSpec::List(vec![0.0]);
    cfg.occupancy.n = 1;
    let th = table(run(&cfg).get("thresholds.csv").unwrap());
    let t: Vec<f64> = th.iter().map(|r| num(r, "t")).collect();
    let want = [2.594, 7.601, 8.230, 12.612];
    let closed_ok = t.len() == 4 && t.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-3);

    cfg.occupancy.grid = GridSpec::List(vec![0.8 * t[0], 0.5 * (t[1] + t[2]), t[3] + 0.5]);
    cfg.occupancy.n = 1000;
    cfg.occupancy.steps = Some(2000);
    let occ = table(run(&cfg).get("occupancy.csv").unwrap());
    let share = |g: usize, c: usize| num(&occ[g], &format!("cluster_{c}"));
    let early = share(0, 1) >= 0.95;
    let mid = share(1, 0) + share(1, 1) >= 0.95 && (0..2).all(|c| (0.40..=0.60).contains(&share(1, c)));
    let late = (0..4).all(|c| (0.15..=0.35).contains(&share(2, c)));
    report(
        "figure_reproduction",
        closed_ok && early && mid && late,
        &format!(
            "t = {t:.4?}; shares at 0.8 t1: {:.3?}; at (t2+t3)/2: {:.3?}; at t4+0.5: {:.3?}",
            (0..4).map(|c| share(0, c)).collect::<Vec<_>>(),
            (0..4).map(|c| share(1, c)).collect::<Vec<_>>(),
            (0..4).map(|c| share(2, c)).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn score_matches_central_differences() {
    const H: f64 = 1e-5;
    let mut rng = StreamKey::new(101).stream(0);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let (k, d) = (1 + case % 4, 1 + (case / 4) % 3);
        let m = random_mixture(&mut rng, k, d).evolve(uniform(&mut rng, 0.0, 3.0)).unwrap();
        let x: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -4.0, 4.0)).collect();
        let exact = m.score(&x).unwrap();
        let mut gap = 0.0;
        for i in 0..d {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += H;
            b[i] -= H;
            let fd = (m.log_density(&a).unwrap() - m.log_density(&b).unwrap()) / (2.0 * H);
            gap += (fd - exact[i]).powi(2);
        }
        let scale = exact.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        worst = worst.max(gap.sqrt() / scale);
    }
    report("score_matches_central_differences", worst < 1e-5, &format!("max relative error {worst:.3e} over 1000 cases"));
}

#[test]
fn score_decomposition_identity() {
    let mut rng = StreamKey::new(102).stream(0);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (k, d) = (2 + case % 4, 1 + case % 3);
        let m = random_mixture(&mut rng, k, d);
        let s = SubsetSpec::new((0..1 + case % (k - 1)).collect(), k).unwrap();
        let t = uniform(&mut rng, 0.0, 2.0);
        let x: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let (lhs, rhs) = score_decomposition_check(&m, &s, t, &x).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    report("score_decomposition_identity", worst < 1e-8, &format!("max relative gap {worst:.3e} over 100 cases"));
}

fn audit() -> &'static Artifacts {
    static AUDIT: OnceLock<Artifacts> = OnceLock::new();
    AUDIT.get_or_init(|| run(&recipe("divergence-audit")))
}

#[test]
fn divergence_sandwich() {
    let rows = table(audit().get("audit_gaussian.csv").unwrap());
    let bad: Vec<&String> = rows.iter().filter(|r| r["holds"] != "true").map(|r| &r["pair"]).collect();
    report(
        "divergence_sandwich",
        rows.len() == 200 && bad.is_empty(),
        &format!("{} Gaussian pairs, violations at {bad:?}", rows.len()),
    );
}

#[test]
fn tv_estimators_agree() {
    let rows = table(audit().get("audit_mixtures.csv").unwrap());
    let worst = rows.iter().map(|r| num(r, "abs_diff") / num(r, "tolerance")).fold(0.0, f64::max);
    let agree = rows.iter().all(|r| r["agree"] == "true");
    let n = |mu: f64| Mixture::new(vec![GaussianComponent::standard(vec![mu])], vec![1.0]).unwrap();
    let reference = tv_quadrature_1d(&n(0.0), &n(1.0)).unwrap().value;
    report(
        "tv_estimators_agree",
        rows.len() == 100 && agree && (reference - 0.38292).abs() < 1e-4,
        &format!(
            "{} mixture pairs, worst |mc - quad| / tol = {worst:.3}; TV(N(0,1), N(1,1)) = {reference:.6}",
            rows.len()
        ),
    );
}

#[test]
fn closed_form_windows_bracket_empirical() {
    let mut cfg = figure_config();
    cfg.kind = ExperimentKind::Windows;
    let pair = |a: &[usize], b: &[usize]| PairSpec {
        s_init: a.to_vec(),
        s_target: b.to_vec(),
    };
    cfg.windows.pairs = vec![pair(&[1], &[1]), pair(&[1], &[0, 1]), pair(&[1], &[0, 1, 2, 3])];
    cfg.windows.families = vec![BoundFamily::Identity, BoundFamily::Empirical];
    cfg.windows.horizon = 20.0;
    let rows = table(run(&cfg).get("windows.csv").unwrap());
    let tol = cwlab_core::windows::BISECTION_TOL;
    let side = |r: &BTreeMap<String, String>, c: &str| r[c].parse::<f64>().ok();
    let mut ok = rows.len() == 6;
    let mut detail = Vec::new();
    for w in rows.chunks(2) {
        let (closed, emp) = (&w[0], &w[1]);
        if let (Some(c), Some(e)) = (side(closed, "t_lower"), side(emp, "t_lower")) {
            ok &= e <= c + tol;
            detail.push(format!("[{}] lower emp {e:.3} <= {c:.3}", closed["s_target"]));
        }
        if let (Some(c), Some(e)) = (side(closed, "t_upper"), side(emp, "t_upper")) {
            ok &= e >= c - tol;
            detail.push(format!("[{}] upper emp {e:.3} >= {c:.3}", closed["s_target"]));
        }
    }
    ok &= detail.len() == 5;
    report("closed_form_windows_bracket_empirical", ok, &detail.join("; "));
}

#[test]
fn score_gap_decays_exponentially() {
    let rows = table(audit().get("score_gap_fit.csv").unwrap());
    let slopes: Vec<f64> = rows.iter().map(|r| num(r, "slope")).collect();
    report(
        "score_gap_decays_exponentially",
        slopes.len() == 3 && slopes.iter().all(|s| (-6.0..=-2.0).contains(s)),
        &format!("fitted slopes {slopes:.3?}"),
    );
}

#[test]
fn hierarchy_schedule_on_three_level_tree() {
    let mut cfg = recipe("hierarchy-demo");
    cfg.hierarchy.levels = 3;
    cfg.hierarchy.scale = 1e6;
    cfg.hierarchy.dim = 8;
    cfg.hierarchy.epsilon = 0.01;
    cfg.hierarchy.n = 2000;
    cfg.hierarchy.radius = None;
    let art = run(&cfg);
    let sched = table(art.get("schedule.csv").unwrap());
    let k = sched.iter().take_while(|r| r["gap_ok"] == "true").count();
    let times: Vec<f64> = sched[..k].iter().map(|r| num(r, "t_chosen")).collect();
    let increasing = times.windows(2).all(|w| w[0] < w[1]);
    let interleaved = (1..k).all(|j| num(&sched[j], "t_lower") > num(&sched[j - 1], "t_upper"));
    let verification = table(art.get("verification.csv").unwrap());
    let inside_ok = verification.len() == k && verification.iter().all(|r| num(r, "inside") >= 1.0 - 5.0 * 0.01);
    let windows: Vec<String> = sched
        .iter()
        .map(|r| format!("{}:[{:.3}, {}]", r["level"], num(r, "t_lower"), r["t_upper"]))
        .collect();
    report(
        "hierarchy_schedule_on_three_level_tree",
        k >= 2 && increasing && interleaved && inside_ok,
        &format!("k = {k}, times {times:.3?}; windows {}", windows.join(" ")),
    );
}

/// Scores on a quarter grid, so ties are common.
fn tied_scores(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| (uniform(rng, 0.0, 5.0) * 4.0).round() / 4.0).collect()
}

#[test]
fn membership_inference_properties() {
    // pair counting against the trapezoid, with ties
    let mut rng = StreamKey::new(109).stream(0);
    let mut exact = true;
    for _ in 0..50 {
        let (nm, nn) = (rng.random_range(1..=100usize), rng.random_range(1..=100usize));
        let m = tied_scores(&mut rng, nm);
        let n = tied_scores(&mut rng, nn);
        let mut twice = 0u64;
        for a in &m {
            for b in &n {
                twice += if a < b { 2 } else if a == b { 1 } else { 0 };
            }
        }
        let brute = twice as f64 / (2 * nm * nn) as f64;
        exact &= roc_curve(&m, &n).unwrap().auc == brute;
    }

    let mut planted = recipe("mia-planted");
    planted.mia.n_members = 500;
    planted.mia.n_nonmembers = 500;
    let sweep = table(run(&planted).get("sweep.csv").unwrap());
    let inside: Vec<f64> = sweep.iter().filter(|r| r["relation"] == "inside").map(|r| num(r, "auc")).collect();
    let far = num(sweep.last().unwrap(), "auc");

    let mut null = planted.clone();
    null.mia.scenario = ScenarioKind::Null;
    null.mia.t_under = TUnderSpec::List(vec![num(&sweep[1], "t_under")]);
    let null_auc = num(&table(run(&null).get("sweep.csv").unwrap())[0], "auc");

    report(
        "membership_inference_properties",
        exact && !inside.is_empty() && inside.iter().all(|&a| a >= 0.9) && far <= 0.6 && (0.45..=0.55).contains(&null_auc),
        &format!(
            "pair counting exact: {exact}; planted AUC inside {inside:.3?}, far above {far:.3}; null AUC {null_auc:.3}"
        ),
    );
}

#[test]
fn recipes_are_thread_count_invariant() {
    let mut detail = Vec::new();
    let mut ok = true;
    for r in recipes::recipes() {
        let cfg = r.config(None).unwrap();
        let outputs: Vec<Artifacts> = [1, 4, 8]
            .iter()
            .map(|&n| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
                pool.install(|| run(&cfg))
            })
            .collect();
        let names: Vec<&str> = outputs[0].csv_names().collect();
        let same = !names.is_empty()
            && outputs[1..].iter().all(|o| o.csv_names().eq(names.iter().copied()))
            && names.iter().all(|n| outputs[1..].iter().all(|o| o.get(n) == outputs[0].get(n)));
        ok &= same;
        detail.push(format!("{}: {} csv {}", r.name, names.len(), if same { "identical" } else { "DIFFER" }));
    }
    report("recipes_are_thread_count_invariant", ok, &detail.join("; "));
}
