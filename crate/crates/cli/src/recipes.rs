//! Builtin experiment recipes: named default configurations.

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recipe {
    pub name: &'static str,
    pub description: &'static str,
    /// Complete default configuration.
    pub toml: &'static str,
}

impl Recipe {
    /// The default configuration, optionally reseeded.
    pub fn config(&self, seed: Option<u64>) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::from_toml(self.toml)?;
        if let Some(s) = seed {
            c.seed = s;
        }
        Ok(c)
    }
}

const REPRODUCE_FIG: &str = r#"kind = "occupancy"
seed = 20240501

[mixture]
dim = 1
weights = [0.25, 0.25, 0.25, 0.25]
components = [
    { mean = [-15100.0], cov = 1.0 },
    { mean = [-14900.0], cov = 1.0 },
    { mean = [14900.0], cov = 1.0 },
    { mean = [15100.0], cov = 1.0 },
]

[occupancy]
s_init = [1]
grid = { start = 0.0, stop = 16.0, points = 33 }
n = 1000
steps = 2000
integrator = "exponential"
radius = 5.0
epsilon = 0.1
targets = [[1], [0, 1], [0, 1, 2, 3]]
"#;

const HIERARCHY_DEMO: &str = r#"kind = "hierarchy"
seed = 20240502

# Six levels at R = 3e10 is the smallest tree whose schedule has two levels.
[hierarchy]
levels = 6
scale = 3e10
dim = 64
slack = 1e-3
epsilon = 0.2
leaf = 0
n = 200
radius = 12.0
steps = 2000
integrator = "exponential"
"#;

const MIA_PLANTED: &str = r#"kind = "mia"
seed = 20240503

[mia]
scenario = "planted"
dim = 2
n_train = 100
spread = 3000.0
member_var = 0.25
n_members = 200
n_nonmembers = 200
n_samples = 10
steps_per_unit = 50.0
epsilon = 0.1
lost_share = 0.1
t_under = "auto"
"#;

const DIVERGENCE_AUDIT: &str = r#"kind = "divergence-audit"
seed = 20240504

[audit]
gaussian_pairs = 200
mixture_pairs = 100
n = 20000
score_gap_pairs = 3
score_gap_times = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
score_gap_n = 100000
"#;

const RECIPES: [Recipe; 4] = [
    Recipe {
        name: "reproduce-fig",
        description: "four 1D clusters: occupancy curve from cluster 1 with the closed-form critical times",
        toml: REPRODUCE_FIG,
    },
    Recipe {
        name: "hierarchy-demo",
        description: "synthesized six-level mixture tree: critical schedule and its empirical check",
        toml: HIERARCHY_DEMO,
    },
    Recipe {
        name: "mia-planted",
        description: "noise-denoise membership attack on a memorizing mixture, swept across the predicted window",
        toml: MIA_PLANTED,
    },
    Recipe {
        name: "divergence-audit",
        description: "TV/Hellinger/Le Cam sandwich, Monte Carlo vs quadrature TV, and score-gap decay",
        toml: DIVERGENCE_AUDIT,
    },
];

/// All recipes, in a fixed order.
pub fn recipes() -> &'static [Recipe] {
    &RECIPES
}

pub fn find(name: &str) -> Result<&'static Recipe> {
    RECIPES.iter().find(|r| r.name == name).ok_or_else(|| {
        let known: Vec<&str> = RECIPES.iter().map(|r| r.name).collect();
        CliError::Config(format!("unknown recipe {name:?}; known: {}", known.join(", ")))
    })
}

/// `name  description` lines.
pub fn listing() -> String {
    let width = RECIPES.iter().map(|r| r.name.len()).max().unwrap_or(0);
    RECIPES
        .iter()
        .map(|r| format!("{:width$}  {}\n", r.name, r.description))
        .collect()
}
