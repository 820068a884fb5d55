//! Adversary models.
//!
//! A jamming attacker removes `ψ` links to minimize λ₂. The exact attacker
//! enumerates every `ψ`-subset of its candidate links; the greedy attacker
//! repeatedly cuts the link with the largest Fiedler score `w_ij (u_i - u_j)²`,
//! which is the drop in the Courant–Fisher upper bound on λ₂.
//!
//! A GPS spoofer takes over one robot for a window of steps and pushes it
//! around with additive disturbances.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{algebraic_connectivity, lambda2, AgentId, AgentState, CommGraph, GraphError, Link};
use crate::Position;

/// λ₂ values closer than this count as a tie.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("attack budget {psi} exceeds the {links} candidate links")]
    BudgetExceedsLinks { psi: usize, links: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Links the adversary may cut and how many it cuts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackActionSpace {
    pub candidate_links: BTreeSet<Link>,
    pub budget_psi: usize,
}

impl AttackActionSpace {
    pub fn new(candidate_links: BTreeSet<Link>, budget_psi: usize) -> Result<Self, AttackError> {
        let space = AttackActionSpace { candidate_links, budget_psi };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.budget_psi > self.candidate_links.len() {
            return Err(AttackError::BudgetExceedsLinks { psi: self.budget_psi, links: self.candidate_links.len() });
        }
        Ok(())
    }

    /// Every removal set the attacker can choose, in lexicographic order.
    pub fn scenarios(&self) -> Vec<Vec<Link>> {
        let links: Vec<Link> = self.candidate_links.iter().copied().collect();
        combinations(&links, self.budget_psi)
    }

    pub fn scenario_count(&self) -> usize {
        binomial(self.candidate_links.len(), self.budget_psi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JammingPlan {
    /// Removed links, sorted.
    pub removed: Vec<Link>,
    pub resulting_lambda2: f64,
}

/// A spoofing window: `x_target(k+1) = x_target(k) + disturbances[k - start_step]`.
/// With `reboot` the target is returned to its pre-window position once the
/// window is over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpoofingPlan {
    pub target: AgentId,
    pub start_step: usize,
    pub duration: usize,
    pub disturbances: Vec<Position>,
    #[serde(default = "yes")]
    pub reboot: bool,
}

fn yes() -> bool {
    true
}

impl SpoofingPlan {
    /// Draws horizontal disturbances uniformly from `[lo, hi]` per axis with
    /// zero vertical component.
    pub fn with_uniform_disturbances(target: AgentId, start_step: usize, duration: usize, range: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let disturbances = (0..duration)
            .map(|_| {
                let dx = rng.random_range(range.0..=range.1);
                let dy = rng.random_range(range.0..=range.1);
                Position::new(dx, dy, 0.0)
            })
            .collect();
        SpoofingPlan { target, start_step, duration, disturbances, reboot: true }
    }

    pub fn is_active(&self, step: usize) -> bool {
        step >= self.start_step && step < self.start_step + self.duration
    }

    /// Last step of the window, inclusive.
    pub fn end_step(&self) -> usize {
        self.start_step + self.duration.saturating_sub(1)
    }

    pub fn disturbance(&self, step: usize) -> Option<Position> {
        if self.is_active(step) {
            self.disturbances.get(step - self.start_step).copied()
        } else {
            None
        }
    }

    /// Applies this step's disturbance to the target; other agents are untouched.
    pub fn apply(&self, step: usize, agents: &mut [AgentState]) {
        if let Some(eps) = self.disturbance(step) {
            for a in agents.iter_mut().filter(|a| a.id == self.target) {
                a.position = apply_spoof(&a.position, &eps);
            }
        }
    }
}

pub fn apply_spoof(pos: &Position, eps: &Position) -> Position {
    pos + eps
}

/// Which links the jammer may target.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateFilter {
    #[default]
    All,
    /// Links between two agents of the same layer ("inter-links").
    InterLayerOnly,
    /// Links joining the two layers ("intra-links").
    CrossLayerOnly,
    Explicit(BTreeSet<Link>),
}

/// Attacker description independent of the current geometry.
///
/// The concrete action space is rebuilt from each graph: links with positive
/// weight that pass the filter and are not secure. The budget is clamped to
/// the number of such links.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackModel {
    pub budget_psi: usize,
    pub filter: CandidateFilter,
    pub secure_links: BTreeSet<Link>,
}

impl AttackModel {
    pub fn new(budget_psi: usize, filter: CandidateFilter, secure_links: BTreeSet<Link>) -> Self {
        AttackModel { budget_psi, filter, secure_links }
    }

    pub fn candidates(&self, g: &CommGraph) -> BTreeSet<Link> {
        g.links()
            .into_iter()
            .filter(|l| !self.secure_links.contains(l))
            .filter(|l| match &self.filter {
                CandidateFilter::All => true,
                CandidateFilter::InterLayerOnly => g.layer_of(l.lo()) == g.layer_of(l.hi()),
                CandidateFilter::CrossLayerOnly => g.layer_of(l.lo()) != g.layer_of(l.hi()),
                CandidateFilter::Explicit(set) => set.contains(l),
            })
            .collect()
    }

    pub fn action_space(&self, g: &CommGraph) -> AttackActionSpace {
        let candidate_links = self.candidates(g);
        let budget_psi = self.budget_psi.min(candidate_links.len());
        AttackActionSpace { candidate_links, budget_psi }
    }

    pub fn worst_case(&self, g: &CommGraph) -> JammingPlan {
        worst_case_attack(g, &self.action_space(g)).expect("clamped budget is valid")
    }

    pub fn greedy(&self, g: &CommGraph) -> JammingPlan {
        greedy_attack(g, &self.action_space(g)).expect("clamped budget is valid")
    }
}

/// Exact worst-case jamming: minimizes λ₂ over every `ψ`-subset of candidates.
///
/// Ties go to the lexicographically smallest sorted link list. Candidate
/// links that carry no weight in `g` are removed as no-ops.
pub fn worst_case_attack(g: &CommGraph, space: &AttackActionSpace) -> Result<JammingPlan, AttackError> {
    space.validate()?;
    for l in &space.candidate_links {
        g.index_of(l.lo())?;
        g.index_of(l.hi())?;
    }
    let mut best: Option<JammingPlan> = None;
    for removed in space.scenarios() {
        let value = lambda2(&g.without_links(&removed)?);
        // Scenarios arrive in lexicographic order; only a clear improvement replaces the incumbent.
        if best.as_ref().is_none_or(|b| value < b.resulting_lambda2 - TIE_TOL) {
            best = Some(JammingPlan { removed, resulting_lambda2: value });
        }
    }
    Ok(best.unwrap_or(JammingPlan { removed: Vec::new(), resulting_lambda2: lambda2(g) }))
}

/// Fiedler-score heuristic: `ψ` rounds of cutting the candidate link that
/// maximizes `w_ij (u_i - u_j)²` on the current graph.
pub fn greedy_attack(g: &CommGraph, space: &AttackActionSpace) -> Result<JammingPlan, AttackError> {
    space.validate()?;
    let mut current = g.clone();
    let mut removed = Vec::new();
    for _ in 0..space.budget_psi {
        let u = algebraic_connectivity(&current).fiedler;
        let mut pick: Option<(f64, Link)> = None;
        for &l in &space.candidate_links {
            if removed.contains(&l) {
                continue;
            }
            let i = current.index_of(l.lo())?;
            let j = current.index_of(l.hi())?;
            let score = current.weights[(i, j)] * (u[i] - u[j]).powi(2);
            if pick.is_none_or(|(s, _)| score > s + 1e-12) {
                pick = Some((score, l));
            }
        }
        let Some((_, l)) = pick else { break };
        current = current.without_links(&[l])?;
        removed.push(l);
    }
    removed.sort();
    Ok(JammingPlan { resulting_lambda2: lambda2(&current), removed })
}

/// Agent with the largest weighted degree; lowest id on ties.
pub fn select_spoof_target(g: &CommGraph) -> AgentId {
    let degrees = g.degrees();
    let mut best = 0;
    for k in 1..degrees.len() {
        if degrees[k] > degrees[best] + 1e-12 {
            best = k;
        }
    }
    g.ids()[best]
}

pub(crate) fn combinations<T: Copy>(items: &[T], k: usize) -> Vec<Vec<T>> {
    let n = items.len();
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(binomial(n, k));
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut pos = k;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if idx[pos] < n - k + pos {
                break;
            }
        }
        idx[pos] += 1;
        for q in (pos + 1)..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}
