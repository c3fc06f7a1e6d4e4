//! Mixture trees: nested clusters whose leaf-mean distances shrink with the
//! depth of the lowest common ancestor, and the sequence of critical times at
//! which the targeted reverse process climbs the tree.
//!
//! Node height `h(v)` is the distance to the root. Two leaves whose lowest
//! common ancestor has height `h` sit at distance `R / 2^{h²}` (within a
//! factor `1 ± δ`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{Mixture, SubsetSpec};
use crate::io::fmt_num;
use crate::linalg::SymMat;
use crate::rng::StreamKey;
use crate::scalar::{dist, dot, Scalar};
use crate::sim::{assign, endpoint_mixture, targeted_reverse, TrajectoryConfig};

/// Slack `δ` must lie in `(0, MAX_SLACK)`.
pub const MAX_SLACK: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    /// Distance to the root.
    pub height: usize,
    /// `f(v)`: the mixture components under this node.
    pub members: Vec<usize>,
    #[serde(skip)]
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTree {
    /// Global distance scale `R`.
    pub scale: f64,
    /// Bracket slack `δ`.
    pub slack: f64,
    /// Height `H′` of the tree (depth of every leaf).
    pub levels: usize,
    pub nodes: Vec<TreeNode>,
}

/// Nominal distance between leaves whose lowest common ancestor has height `h`.
pub fn level_distance(scale: f64, h: usize) -> f64 {
    scale / 2f64.powi((h * h) as i32)
}

impl MixtureTree {
    /// A complete binary tree of height `levels`; leaves cover `0..2^levels`
    /// left to right. Node 0 is the root.
    pub fn binary(levels: usize, scale: f64, slack: f64) -> Self {
        let mut nodes = vec![TreeNode {
            id: 0,
            parent: None,
            height: 0,
            members: (0..1usize << levels).collect(),
            children: Vec::new(),
        }];
        let mut frontier = vec![0];
        for h in 1..=levels {
            let mut next = Vec::new();
            for &p in &frontier {
                let members = nodes[p].members.clone();
                let half = members.len() / 2;
                for part in [&members[..half], &members[half..]] {
                    let id = nodes.len();
                    nodes.push(TreeNode {
                        id,
                        parent: Some(p),
                        height: h,
                        members: part.to_vec(),
                        children: Vec::new(),
                    });
                    nodes[p].children.push(id);
                    next.push(id);
                }
            }
            frontier = next;
        }
        Self {
            scale,
            slack,
            levels,
            nodes,
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes[0].members.len()
    }

    fn relink(&mut self) {
        for n in &mut self.nodes {
            n.children.clear();
        }
        for i in 0..self.nodes.len() {
            if let Some(p) = self.nodes[i].parent {
                if p < self.nodes.len() {
                    self.nodes[p].children.push(i);
                }
            }
        }
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.nodes[v].children.is_empty()
    }

    /// The leaf node whose set contains component `i`.
    pub fn leaf_of(&self, i: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.children.is_empty() && n.members.contains(&i))
    }

    /// Nodes from `v` up to the root, `v` first.
    pub fn ancestors(&self, v: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut cur = v;
        while let Some(p) = self.nodes[cur].parent {
            if out.contains(&p) {
                break;
            }
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn lca(&self, a: usize, b: usize) -> Option<usize> {
        let up = self.ancestors(a);
        self.ancestors(b).into_iter().find(|v| up.contains(v))
    }

    /// Path `u_1, u_2, …` from the leaf holding component `i` to the root.
    pub fn path(&self, i: usize) -> Result<Vec<usize>> {
        let leaf = self.leaf_of(i).ok_or(Error::IndexOutOfRange {
            index: i,
            k: self.leaf_count(),
        })?;
        Ok(self.ancestors(leaf))
    }

    pub fn members(&self, v: usize) -> &[usize] {
        &self.nodes[v].members
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("tree serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut t: Self = toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))?;
        if t.nodes.is_empty() {
            return Err(Error::Parse("tree has no nodes".into()));
        }
        t.relink();
        Ok(t)
    }
}

/// Orthonormal columns from Gram–Schmidt on Gaussian vectors.
fn random_orthonormal(d: usize, m: usize, key: StreamKey) -> Vec<Vec<f64>> {
    let mut rng = key.stream(0);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    while basis.len() < m {
        let mut v: Vec<f64> = (0..d).map(|_| f64::std_normal(&mut rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let ip = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= ip * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Builds a binary tree of height `levels` and identity-covariance,
/// equal-weight leaf Gaussians whose pairwise distances equal
/// `R / 2^{h(lca)²}` exactly and whose means all have norm `R`.
///
/// Each internal node owns one direction; its two subtrees sit at `±a_{h+1}`
/// along it. With `D_h = R/2^{h²}`, choosing
/// `a_{H′} = D_{H′−1}/2` and `a_{h+1}² = (D_h² − 2Σ_{k≥h+2} a_k²)/4`
/// makes the tree metric exact; one extra direction lifts every mean to norm
/// `R`. That needs `2^{H′}` orthonormal directions, hence `d ≥ 2^{H′}`.
pub fn synthesize_tree(levels: usize, scale: f64, d: usize, slack: f64, key: StreamKey) -> Result<(MixtureTree, Mixture<f64>)> {
    if levels == 0 {
        return Err(Error::Infeasible("tree needs at least one level".into()));
    }
    if levels > 20 {
        return Err(Error::Infeasible(format!("{levels} levels is too many")));
    }
    let k = 1usize << levels;
    if d < k {
        return Err(Error::Infeasible(format!(
            "{levels} levels need d >= {k} orthogonal directions, got d = {d}"
        )));
    }
    if !(slack > 0.0 && slack < MAX_SLACK) {
        return Err(Error::Infeasible(format!("slack must lie in (0, {MAX_SLACK}), got {slack}")));
    }
    if !(scale.is_finite() && scale > 0.0) || level_distance(scale, levels - 1) < f64::MIN_POSITIVE.sqrt() {
        return Err(Error::Infeasible(format!("scale {scale} cannot resolve {levels} levels")));
    }
    let tree = MixtureTree::binary(levels, scale, slack);
    // a[k] for k = 1..=levels
    let mut a = vec![0.0; levels + 1];
    let mut tail = 0.0;
    for h in (0..levels).rev() {
        let dh = level_distance(scale, h);
        a[h + 1] = ((dh * dh - 2.0 * tail) / 4.0).sqrt();
        tail += a[h + 1] * a[h + 1];
    }
    let lift = (scale * scale - tail).max(0.0).sqrt();

    let internal: Vec<usize> = (0..tree.nodes.len()).filter(|&v| !tree.is_leaf(v)).collect();
    let dirs = random_orthonormal(d, internal.len() + 1, key);
    let extra = &dirs[internal.len()];
    let mut means = vec![vec![0.0; d]; k];
    for (slot, &u) in internal.iter().enumerate() {
        let coef = a[tree.nodes[u].height + 1];
        for (side, &child) in tree.nodes[u].children.iter().enumerate() {
            let sign = if side == 0 { 1.0 } else { -1.0 };
            for &i in tree.members(child) {
                for (m, &e) in means[i].iter_mut().zip(&dirs[slot]) {
                    *m += sign * coef * e;
                }
            }
        }
    }
    for m in &mut means {
        for (x, &e) in m.iter_mut().zip(extra) {
            *x += lift * e;
        }
    }
    let mixture = Mixture::isotropic_equal(means)?;
    Ok((tree, mixture))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeViolation {
    RootNotFull,
    Containment { child: usize, parent: usize },
    LeavesNotPartition { component: usize, count: usize },
    Bracket { i: usize, j: usize, lca: usize, distance: f64, lo: f64, hi: f64 },
    SizeMismatch { tree: usize, mixture: usize },
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RootNotFull => write!(f, "root set is not [K]"),
            Self::Containment { child, parent } => write!(f, "f({child}) is not a strict subset of f({parent})"),
            Self::LeavesNotPartition { component, count } => {
                write!(f, "component {component} lies in {count} leaves")
            }
            Self::Bracket { i, j, lca, distance, lo, hi } => {
                write!(f, "pair ({i}, {j}) with lca {lca}: distance {distance} outside [{lo}, {hi}]")
            }
            Self::SizeMismatch { tree, mixture } => write!(f, "tree has {tree} components, mixture {mixture}"),
        }
    }
}

/// Every violated clause of the tree definition; empty when valid.
pub fn validate_tree(tree: &MixtureTree, mixture: &Mixture<f64>) -> Vec<TreeViolation> {
    let mut out = Vec::new();
    let k = mixture.len();
    let root = &tree.nodes[tree.root()];
    if tree.leaf_count() != k {
        out.push(TreeViolation::SizeMismatch {
            tree: tree.leaf_count(),
            mixture: k,
        });
    }
    let mut sorted = root.members.clone();
    sorted.sort_unstable();
    if sorted != (0..k).collect::<Vec<_>>() {
        out.push(TreeViolation::RootNotFull);
    }
    for n in &tree.nodes {
        if let Some(p) = n.parent {
            let parent = &tree.nodes[p];
            let strict = n.members.len() < parent.members.len();
            if !strict || !n.members.iter().all(|i| parent.members.contains(i)) {
                out.push(TreeViolation::Containment { child: n.id, parent: p });
            }
        }
    }
    for c in 0..k {
        let count = tree
            .nodes
            .iter()
            .filter(|n| n.children.is_empty() && n.members.contains(&c))
            .count();
        if count != 1 {
            out.push(TreeViolation::LeavesNotPartition { component: c, count });
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            let (Some(a), Some(b)) = (tree.leaf_of(i), tree.leaf_of(j)) else {
                continue;
            };
            let Some(u) = tree.lca(a, b) else { continue };
            let nominal = level_distance(tree.scale, tree.nodes[u].height);
            let (lo, hi) = ((1.0 - tree.slack) * nominal, (1.0 + tree.slack) * nominal);
            let distance = dist(mixture.component(i).mean(), mixture.component(j).mean());
            if !(distance >= lo && distance <= hi) {
                out.push(TreeViolation::Bracket {
                    i,
                    j,
                    lca: u,
                    distance,
                    lo,
                    hi,
                });
            }
        }
    }
    out
}

/// One level of the schedule: the window after which samples from the leaf
/// spread over `f(target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelWindow {
    /// `j`, counted from 1.
    pub level: usize,
    /// `u_{j+1}`, the node reached in this window.
    pub target: usize,
    pub t_lower: f64,
    /// `None` when the target is the root (no upper limit) or the formula
    /// leaves its domain (see `diagnostic`).
    pub t_upper: Option<f64>,
    pub unbounded: bool,
    pub t_chosen: Option<f64>,
    pub gap_ok: bool,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSchedule {
    pub leaf: usize,
    pub path: Vec<usize>,
    pub epsilon: f64,
    /// Every level, including those past the scheduled prefix.
    pub levels: Vec<LevelWindow>,
    /// Length of the scheduled prefix.
    pub k: usize,
}

impl CriticalSchedule {
    /// `T_1 < … < T_k`.
    pub fn times(&self) -> Vec<f64> {
        self.levels[..self.k].iter().filter_map(|l| l.t_chosen).collect()
    }

    /// `level,t_lower,t_upper,t_chosen,gap_ok`; an unbounded upper side is `inf`,
    /// an undefined one is empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,t_lower,t_upper,t_chosen,gap_ok\n");
        for l in &self.levels {
            let upper = match (l.t_upper, l.unbounded) {
                (Some(v), _) => fmt_num(v),
                (None, true) => fmt_num(f64::INFINITY),
                (None, false) => String::new(),
            };
            let chosen = l.t_chosen.map(fmt_num).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", l.level, fmt_num(l.t_lower), upper, chosen, l.gap_ok));
        }
        out
    }
}

/// Critical times for the leaf holding component `i`.
///
/// For level `j` the window reaching `u_{j+1}` is
/// `T_lower^j = ln w(f(u_j), f(u_{j+1})) + ln(1/ε)` and
/// `T_upper^j = ln Δ(f(u_{j+1})) − ln 4 − ½ ln ln(R²/(ε²Δ(f(u_{j+1}))²))`,
/// with `w` and `Δ` taken at the conservative ends of the `1 ± δ` brackets.
/// The schedule is the longest prefix with `T_lower^j < T_upper^j` and
/// `T_upper^j < T_lower^{j+1}`; each time is its window midpoint, or
/// `T_lower + 1` for the unbounded root window.
pub fn critical_schedule(tree: &MixtureTree, i: usize, eps: f64) -> Result<CriticalSchedule> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    let path = tree.path(i)?;
    let (r, slack) = (tree.scale, tree.slack);
    let mut levels = Vec::with_capacity(path.len().saturating_sub(1));
    #[allow(clippy::needless_range_loop)]
    for j in 1..path.len() {
        let target = path[j];
        let h = tree.nodes[target].height;
        let w = (1.0 + slack) * level_distance(r, h);
        let t_lower = w.ln() - eps.ln();
        let mut lw = LevelWindow {
            level: j,
            target,
            t_lower,
            t_upper: None,
            unbounded: false,
            t_chosen: None,
            gap_ok: false,
            diagnostic: None,
        };
        if h == 0 {
            lw.unbounded = true;
            lw.t_chosen = Some(t_lower + 1.0);
        } else {
            let delta = (1.0 - slack) * level_distance(r, h - 1);
            let arg = r * r / (eps * eps * delta * delta);
            if arg > 1.0 {
                let up = delta.ln() - 4f64.ln() - 0.5 * arg.ln().ln();
                lw.t_upper = Some(up);
                if up > t_lower {
                    lw.t_chosen = Some(0.5 * (t_lower + up));
                } else {
                    lw.diagnostic = Some(format!("empty window: T_upper {up:.6} <= T_lower {t_lower:.6}"));
                }
            } else {
                lw.diagnostic = Some(format!("inner log argument R^2/(eps^2 Delta^2) = {arg} <= 1"));
            }
        }
        levels.push(lw);
    }
    let mut k = 0;
    for j in 0..levels.len() {
        let own = levels[j].t_chosen.is_some();
        let interleaved = j == 0 || matches!(levels[j - 1].t_upper, Some(u) if levels[j].t_lower > u);
        if !own || !interleaved {
            if own && !interleaved {
                levels[j].diagnostic = Some(format!(
                    "no interleaving: T_lower {:.6} <= previous T_upper",
                    levels[j].t_lower
                ));
            }
            break;
        }
        levels[j].gap_ok = true;
        k = j + 1;
    }
    Ok(CriticalSchedule {
        leaf: i,
        path,
        epsilon: eps,
        levels,
        k,
    })
}

/// Outcome of targeted-reverse runs at one scheduled time.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCheck {
    pub level: usize,
    pub t: f64,
    pub target: usize,
    /// Share of samples assigned to a component of `f(target)`.
    pub inside: f64,
    /// Per-component shares (length `K`), then the unassigned share.
    pub shares: Vec<f64>,
}

/// Runs the targeted reverse process from `{i}` at every scheduled time and
/// measures where the samples land.
#[allow(clippy::too_many_arguments)]
pub fn verify_schedule_empirical(
    tree: &MixtureTree,
    mixture: &Mixture<f64>,
    i: usize,
    schedule: &CriticalSchedule,
    n: usize,
    radius: f64,
    cfg: &TrajectoryConfig<f64>,
    key: StreamKey,
) -> Result<Vec<LevelCheck>> {
    if schedule.k == 0 {
        return Err(Error::InvalidArgument("schedule is empty".into()));
    }
    let kk = mixture.len();
    let s_init = SubsetSpec::single(i, kk)?;
    let mut out = Vec::with_capacity(schedule.k);
    for lw in &schedule.levels[..schedule.k] {
        let t = lw.t_chosen.expect("scheduled levels have a time");
        let run = cfg.retimed(t);
        let samples = targeted_reverse(mixture, &s_init, &run, n, key.derive(lw.level as u64))?;
        let reference = endpoint_mixture(mixture, &run)?;
        let mut counts = vec![0usize; kk + 1];
        for x in &samples {
            counts[assign(x, &reference, radius).unwrap_or(kk)] += 1;
        }
        let shares: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let inside = tree.members(lw.target).iter().map(|&c| shares[c]).sum();
        out.push(LevelCheck {
            level: lw.level,
            t,
            target: lw.target,
            inside,
            shares,
        });
    }
    Ok(out)
}

/// Dense covariance of the leaf means, handy for checking the embedding rank.
pub fn mean_gram(mixture: &Mixture<f64>) -> SymMat<f64> {
    let k = mixture.len();
    let mut g = SymMat::zeros(k);
    for a in 0..k {
        for b in 0..k {
            g.set(a, b, dot(mixture.component(a).mean(), mixture.component(b).mean()));
        }
    }
    g
}
