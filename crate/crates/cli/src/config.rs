//! Experiment configuration: one TOML document per run.
//!
//! ```toml
//! kind = "occupancy"   # occupancy | windows | hierarchy | mia | divergence-audit
//! seed = 7             # required; there is no clock-based default
//! out = "runs/fig"     # optional
//!
//! [mixture]            # inline, or `file = "mixture.toml"`
//! dim = 1
//! weights = [0.5, 0.5]
//! components = [{ mean = [-1.0], cov = 1.0 }, { mean = [1.0], cov = 1.0 }]
//!
//! [occupancy]
//! s_init = [0]
//! grid = { start = 0.0, stop = 8.0, points = 33 }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use cwlab_core::io::MixtureDoc;
use cwlab_core::sim::Integrator;
use cwlab_core::{Mixture, SubsetSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Occupancy,
    Windows,
    Hierarchy,
    Mia,
    DivergenceAudit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Occupancy => "occupancy",
            Self::Windows => "windows",
            Self::Hierarchy => "hierarchy",
            Self::Mia => "mia",
            Self::DivergenceAudit => "divergence-audit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MixtureSource {
    File { file: PathBuf },
    Inline(MixtureDoc),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorName {
    EulerMaruyama,
    Exponential,
}

impl From<IntegratorName> for Integrator {
    fn from(v: IntegratorName) -> Self {
        match v {
            IntegratorName::EulerMaruyama => Integrator::EulerMaruyama,
            IntegratorName::Exponential => Integrator::Exponential,
        }
    }
}

/// The builtin scenarios all have means of norm 10³–10¹⁰, where the
/// Euler–Maruyama mean bias `O(h·|μ|)` swamps any classification radius, so
/// the CLI defaults to the exponential integrator.
fn default_integrator() -> IntegratorName {
    IntegratorName::Exponential
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, points: usize },
}

impl GridSpec {
    pub fn times(&self) -> Result<Vec<f64>> {
        let v = match self {
            Self::List(v) => v.clone(),
            Self::Range { start, stop, points } => {
                if *points < 2 || !(stop > start) {
                    return Err(CliError::Config(format!(
                        "grid range needs start < stop and points >= 2, got {start}..{stop} with {points}"
                    )));
                }
                let h = (stop - start) / (*points - 1) as f64;
                (0..*points).map(|i| if i + 1 == *points { *stop } else { start + i as f64 * h }).collect()
            }
        };
        if v.is_empty() || v.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("grid must be nonempty, nonnegative and strictly ascending".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OccupancySection {
    pub s_init: Vec<usize>,
    pub grid: GridSpec,
    pub n: usize,
    /// Fixed step count; absent means `max(1000, ⌈500 T̂⌉)`.
    pub steps: Option<usize>,
    #[serde(default = "default_integrator")]
    pub integrator: IntegratorName,
    pub t_floor: Option<f64>,
    pub radius: f64,
    /// ε for the threshold lines.
    pub epsilon: f64,
    /// Targets whose closed-form window ends are drawn as threshold lines.
    pub targets: Vec<Vec<usize>>,
}

impl Default for OccupancySection {
    fn default() -> Self {
        Self {
            s_init: vec![0],
            grid: GridSpec::Range {
                start: 0.0,
                stop: 4.0,
                points: 17,
            },
            n: 1000,
            steps: None,
            integrator: default_integrator(),
            t_floor: None,
            radius: 5.0,
            epsilon: 0.1,
            targets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundFamily {
    Identity,
    WellConditioned,
    Wasserstein,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub s_init: Vec<usize>,
    pub s_target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowsSection {
    pub pairs: Vec<PairSpec>,
    pub epsilons: Vec<f64>,
    pub families: Vec<BoundFamily>,
    /// `Υ` of the sub-Gaussian family.
    pub upsilon: f64,
    /// Sub-Gaussian `σ`; absent means the largest component standard deviation.
    pub sigma: Option<f64>,
    /// Search horizon of the empirical bisection.
    pub horizon: f64,
    /// Monte Carlo samples per TV probe (ignored in 1D, where quadrature is used).
    pub n: usize,
}

impl Default for WindowsSection {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            epsilons: vec![0.1],
            families: vec![BoundFamily::Identity],
            upsilon: 0.0,
            sigma: None,
            horizon: 20.0,
            n: cwlab_core::windows::DEFAULT_MC_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySection {
    pub levels: usize,
    pub scale: f64,
    pub dim: usize,
    pub slack: f64,
    pub epsilon: f64,
    /// Component whose leaf starts the targeted process.
    pub leaf: usize,
    /// Samples per scheduled level.
    pub n: usize,
    /// Assignment radius; absent means `√d + 4`.
    pub radius: Option<f64>,
    pub steps: usize,
    #[serde(default = "default_integrator")]
    pub integrator: IntegratorName,
    pub t_floor: Option<f64>,
}

impl Default for HierarchySection {
    fn default() -> Self {
        Self {
            levels: 3,
            scale: 1e6,
            dim: 8,
            slack: 1e-3,
            epsilon: 0.01,
            leaf: 0,
            n: 2000,
            radius: None,
            steps: 2000,
            integrator: default_integrator(),
            t_floor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Planted,
    Null,
}

/// Either an explicit list of noising times or `"auto"`, which places times
/// relative to the predicted retention and mixing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TUnderSpec {
    List(Vec<f64>),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiaSection {
    pub scenario: ScenarioKind,
    pub dim: usize,
    pub n_train: usize,
    pub spread: f64,
    pub member_var: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub n_samples: usize,
    pub steps_per_unit: f64,
    pub epsilon: f64,
    /// Share of training components allowed to lose their window at the
    /// predicted retention time.
    pub lost_share: f64,
    pub t_under: TUnderSpec,
}

impl Default for MiaSection {
    fn default() -> Self {
        let p = cwlab_core::mia::PlantedParams::default();
        Self {
            scenario: ScenarioKind::Planted,
            dim: p.dim,
            n_train: p.n_train,
            spread: p.spread,
            member_var: p.member_var,
            n_members: p.n_members,
            n_nonmembers: p.n_nonmembers,
            n_samples: p.n_samples,
            steps_per_unit: p.steps_per_unit,
            epsilon: 0.1,
            lost_share: 0.1,
            t_under: TUnderSpec::Keyword("auto".into()),
        }
    }
}

impl MiaSection {
    pub fn params(&self) -> cwlab_core::mia::PlantedParams {
        cwlab_core::mia::PlantedParams {
            dim: self.dim,
            n_train: self.n_train,
            spread: self.spread,
            member_var: self.member_var,
            n_members: self.n_members,
            n_nonmembers: self.n_nonmembers,
            n_samples: self.n_samples,
            steps_per_unit: self.steps_per_unit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    /// Random 1D Gaussian pairs for the ratio/Hellinger/TV sandwich.
    pub gaussian_pairs: usize,
    /// Random 1D mixture pairs for Monte Carlo vs quadrature TV.
    pub mixture_pairs: usize,
    pub n: usize,
    pub score_gap_pairs: usize,
    pub score_gap_times: Vec<f64>,
    pub score_gap_n: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            gaussian_pairs: 200,
            mixture_pairs: 100,
            n: 20_000,
            score_gap_pairs: 3,
            score_gap_times: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            score_gap_n: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSource>,
    #[serde(default)]
    pub occupancy: OccupancySection,
    #[serde(default)]
    pub windows: WindowsSection,
    #[serde(default)]
    pub hierarchy: HierarchySection,
    #[serde(default)]
    pub mia: MiaSection,
    #[serde(default)]
    pub audit: AuditSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical serialization; its hash identifies the run.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Loads the mixture; relative file paths resolve against `base`.
    pub fn load_mixture(&self, base: &Path) -> Result<Mixture> {
        match &self.mixture {
            None => Err(CliError::Config(format!("a `{}` experiment needs a [mixture]", self.kind.name()))),
            Some(MixtureSource::Inline(doc)) => Ok(doc.to_mixture()?),
            Some(MixtureSource::File { file }) => {
                let path = if file.is_absolute() { file.clone() } else { base.join(file) };
                let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                if text.trim().is_empty() {
                    return Err(CliError::Config(format!("mixture file {} is empty", path.display())));
                }
                Ok(cwlab_core::io::mixture_from_toml(&text)?)
            }
        }
    }

    /// Checks everything that does not need the numerics.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let eps_ok = |e: f64| e > 0.0 && e < 1.0;
        match self.kind {
            ExperimentKind::Occupancy => {
                let m = self.load_mixture(base)?;
                let o = &self.occupancy;
                subset(&o.s_init, m.len())?;
                for t in &o.targets {
                    subset(t, m.len())?;
                }
                o.grid.times()?;
                if o.n == 0 || o.steps == Some(0) || !(o.radius > 0.0) || !eps_ok(o.epsilon) {
                    return bad("occupancy needs n >= 1, steps >= 1, radius > 0 and epsilon in (0, 1)".into());
                }
            }
            ExperimentKind::Windows => {
                let m = self.load_mixture(base)?;
                let w = &self.windows;
                if w.pairs.is_empty() || w.epsilons.is_empty() || w.families.is_empty() {
                    return bad("windows needs at least one pair, epsilon and family".into());
                }
                for p in &w.pairs {
                    if !subset(&p.s_init, m.len())?.is_subset_of(&subset(&p.s_target, m.len())?) {
                        return bad(format!("s_init {:?} is not contained in s_target {:?}", p.s_init, p.s_target));
                    }
                }
                if !w.epsilons.iter().all(|&e| eps_ok(e)) || !(w.horizon > 0.0) {
                    return bad("windows needs epsilons in (0, 1) and a positive horizon".into());
                }
            }
            ExperimentKind::Hierarchy => {
                let h = &self.hierarchy;
                if !eps_ok(h.epsilon) || h.n == 0 || h.steps == 0 {
                    return bad("hierarchy needs epsilon in (0, 1), n >= 1 and steps >= 1".into());
                }
                if h.leaf >= 1usize.checked_shl(h.levels as u32).unwrap_or(usize::MAX) {
                    return bad(format!("leaf {} out of range for {} levels", h.leaf, h.levels));
                }
            }
            ExperimentKind::Mia => {
                let a = &self.mia;
                if !eps_ok(a.epsilon) || !(0.0..1.0).contains(&a.lost_share) || a.n_samples == 0 {
                    return bad("mia needs epsilon in (0, 1), lost_share in [0, 1) and n_samples >= 1".into());
                }
                match &a.t_under {
                    TUnderSpec::Keyword(k) if k == "auto" => {}
                    TUnderSpec::Keyword(k) => return bad(format!("t_under must be a list or \"auto\", got {k:?}")),
                    TUnderSpec::List(v) if v.is_empty() || v.iter().any(|t| !(*t > 0.0)) => {
                        return bad("t_under values must be positive".into())
                    }
                    TUnderSpec::List(_) => {}
                }
            }
            ExperimentKind::DivergenceAudit => {
                let a = &self.audit;
                if a.n < cwlab_core::divergence::MIN_MC_SAMPLES || a.score_gap_n < cwlab_core::divergence::MIN_MC_SAMPLES {
                    return bad(format!(
                        "audit sample counts must be at least {}",
                        cwlab_core::divergence::MIN_MC_SAMPLES
                    ));
                }
                if a.score_gap_times.len() < 2 {
                    return bad("score_gap_times needs at least two times".into());
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn subset(ix: &[usize], k: usize) -> Result<SubsetSpec> {
    Ok(SubsetSpec::new(ix.to_vec(), k)?)
}
