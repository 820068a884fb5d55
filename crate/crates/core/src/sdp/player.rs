//! Building, solving and realizing one operator's turn.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::program::{AffineExpr, ConicProgram, PlayerLayout};
use super::solver::{solve_conic, SolverError, SolverSettings};
use super::{ConicSolution, PlayerParams, SolveStatus};
use crate::attack::{AttackActionSpace, AttackModel, JammingPlan};
use crate::dynamics::{sorted_agents, DistanceState, LinearizedLaplacian};
use crate::graph::{build_graph, lambda2, AgentId, AgentState, GraphError, Link, WeightParams, DISCONNECTED_EPS};

/// Relative tightening of separations and displacement caps inside the
/// program, so solver round-off never produces a violating step.
pub const SAFETY_MARGIN: f64 = 1e-5;
/// Tolerance of the true-constraint checks on realized positions.
pub const CHECK_TOL: f64 = 1e-9;
/// Displacement scales tried by [`verify_and_realize`].
pub const BACKTRACK_SCALES: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    /// Keep each moving agent's vertical coordinate fixed.
    pub planar_layers: bool,
    /// One LMI per attack scenario; otherwise only the attack-free Laplacian.
    pub anticipate_attacks: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { planar_layers: true, anticipate_attacks: true }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlayerError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn moving_agents(sorted: &[&AgentState], params: &PlayerParams, frozen: &BTreeSet<AgentId>) -> Vec<AgentId> {
    if params.d_max <= 0.0 {
        return Vec::new();
    }
    sorted
        .iter()
        .filter(|a| a.layer == params.player.layer() && !frozen.contains(&a.id))
        .map(|a| a.id)
        .collect()
}

/// Builds the operator's program with one LMI per scenario in `space`
/// (or only the nominal LMI when attacks are not anticipated).
pub fn assemble_player_problem(
    agents: &[AgentState],
    params: &PlayerParams,
    weight_params: &WeightParams,
    space: &AttackActionSpace,
    frozen: &BTreeSet<AgentId>,
    opts: &AssemblyOptions,
) -> Result<ConicProgram, PlayerError> {
    let scenarios = if opts.anticipate_attacks { space.scenarios() } else { vec![Vec::new()] };
    assemble_with_scenarios(agents, params, weight_params, &scenarios, frozen, opts)
}

/// Centering matrix `I − 11ᵀ/n`.
pub fn centering(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64)
}

fn edge_matrix(n: usize, i: usize, j: usize, w: f64) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    e[(i, i)] = w;
    e[(j, j)] = w;
    e[(i, j)] = -w;
    e[(j, i)] = -w;
    e
}

pub(crate) fn assemble_with_scenarios(
    agents: &[AgentState],
    params: &PlayerParams,
    weight_params: &WeightParams,
    scenarios: &[Vec<Link>],
    frozen: &BTreeSet<AgentId>,
    opts: &AssemblyOptions,
) -> Result<ConicProgram, PlayerError> {
    let graph = build_graph(agents, weight_params, &BTreeSet::new())?;
    let sorted = sorted_agents(agents);
    let n = sorted.len();
    let index: BTreeMap<AgentId, usize> = sorted.iter().enumerate().map(|(k, a)| (a.id, k)).collect();
    let moving = moving_agents(&sorted, params, frozen);
    let moving_set: BTreeSet<AgentId> = moving.iter().copied().collect();

    // Variables: alpha, moving coordinates, then the upper triangle of Z.
    let mut next = 1;
    let mut coords = vec![[None; 3]; n];
    for (k, a) in sorted.iter().enumerate() {
        if moving_set.contains(&a.id) {
            let dims = if opts.planar_layers { 2 } else { 3 };
            for c in coords[k].iter_mut().take(dims) {
                *c = Some(next);
                next += 1;
            }
        }
    }
    let z_base = next;
    let n_z = n * (n + 1) / 2;
    let z_vars: Vec<usize> = (z_base..z_base + n_z).collect();
    let base: Vec<_> = sorted.iter().map(|a| a.position).collect();
    let mut layout = PlayerLayout::new(sorted.iter().map(|a| a.id).collect(), base.clone(), coords.clone(), moving, z_vars);
    let mut prog = ConicProgram::new(z_base + n_z, 0);
    let z0 = DistanceState::from_agents(agents).z;

    for i in 0..n {
        prog.add_eq(AffineExpr::var(layout.z_var(i, i)), format!("Z[{i},{i}] = 0"));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let zv = layout.z_var(i, j);
            let (a, b) = (sorted[i], sorted[j]);
            if !(moving_set.contains(&a.id) || moving_set.contains(&b.id)) {
                prog.add_eq(AffineExpr::var(zv).plus(-z0[(i, j)]), format!("pin ({},{})", a.id, b.id));
                continue;
            }
            // Z_ij + Z0_ij − 2 (x_i − x_j)ᵀ d = 0 with d = x0_i − x0_j.
            let d = base[i] - base[j];
            let mut e = AffineExpr::var(zv).plus(z0[(i, j)]);
            for c in 0..3 {
                match coords[i][c] {
                    Some(k) => e = e.term(k, -2.0 * d[c]),
                    None => e = e.plus(-2.0 * d[c] * base[i][c]),
                }
                match coords[j][c] {
                    Some(k) => e = e.term(k, 2.0 * d[c]),
                    None => e = e.plus(2.0 * d[c] * base[j][c]),
                }
            }
            prog.add_eq(e, format!("coupling ({},{})", a.id, b.id));

            let rho = params.rho(a.layer, b.layer);
            // A pair already closer than ρ (after spoofing) may not get closer.
            let floor = (rho * rho * (1.0 + SAFETY_MARGIN)).min(z0[(i, j)]);
            prog.add_ineq(AffineExpr::var(zv).plus(-floor), format!("separation ({},{})", a.id, b.id));
        }
    }
    for (k, a) in sorted.iter().enumerate() {
        if !moving_set.contains(&a.id) {
            continue;
        }
        let rows = (0..3).filter_map(|c| coords[k][c].map(|v| AffineExpr::var(v).plus(-base[k][c]))).collect();
        prog.add_soc(AffineExpr::constant(params.d_max * (1.0 - SAFETY_MARGIN)), rows, format!("step {}", a.id));
    }

    let cm = centering(n);
    let lin = LinearizedLaplacian::new(agents, weight_params, &BTreeSet::new());
    let mut alpha_ref = f64::INFINITY;
    for e in scenarios {
        let removed: Vec<(usize, usize)> = e.iter().map(|l| (index[&l.lo()], index[&l.hi()])).collect();
        let model = lin.without(&removed);
        let mut constant = DMatrix::zeros(n, n);
        let mut coeffs = vec![(0, -cm.clone())];
        for m in &model.links {
            constant += edge_matrix(n, m.i, m.j, m.w0 - m.slope * m.z0);
            if m.slope != 0.0 {
                coeffs.push((layout.z_var(m.i, m.j), edge_matrix(n, m.i, m.j, m.slope)));
            }
        }
        let label = if e.is_empty() {
            "nominal".to_string()
        } else {
            format!("attack {}", e.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" "))
        };
        prog.add_lmi(constant, coeffs, label);
        alpha_ref = alpha_ref.min(lambda2(&graph.without_links(e)?));
    }

    let mut edm = Vec::with_capacity(n_z);
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            edm.push((layout.z_var(i, j), -(&cm * e * &cm)));
        }
    }
    prog.add_lmi(DMatrix::zeros(n, n), edm, "distance matrix");

    let mut reference = DVector::zeros(prog.n_vars);
    reference[0] = alpha_ref - 1.0;
    for k in 0..n {
        for c in 0..3 {
            if let Some(v) = coords[k][c] {
                reference[v] = base[k][c];
            }
        }
        for j in k..n {
            reference[layout.z_var(k, j)] = z0[(k, j)];
        }
    }
    prog.reference = Some(reference);
    layout.scenarios = scenarios.to_vec();
    prog.layout = Some(layout);
    Ok(prog)
}

/// Outcome of checking a solution against the true geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    /// `false` when only the stay-put fallback passed.
    pub accepted: bool,
    pub scale: f64,
    pub agents: Vec<AgentState>,
    pub realized_worst_lambda2: f64,
    pub attack: JammingPlan,
}

/// Rebuilds the true graph from the solution's positions and accepts the
/// largest backtracking scale that keeps the true separations, displacement
/// caps and a non-decreasing worst-case λ₂.
pub fn verify_and_realize(
    agents_old: &[AgentState],
    sol: &ConicSolution,
    params: &PlayerParams,
    weight_params: &WeightParams,
    model: &AttackModel,
    frozen: &BTreeSet<AgentId>,
) -> Result<Realization, PlayerError> {
    let sorted: Vec<AgentState> = sorted_agents(agents_old).into_iter().cloned().collect();
    let old_graph = build_graph(&sorted, weight_params, &BTreeSet::new())?;
    let prev = model.worst_case(&old_graph);
    let refs: Vec<&AgentState> = sorted.iter().collect();
    let moving: BTreeSet<AgentId> = moving_agents(&refs, params, frozen).into_iter().collect();
    let usable = sol.new_positions.len() == sorted.len() && sol.new_positions.iter().all(|p| p.iter().all(|v| v.is_finite()));

    if usable {
        for &scale in BACKTRACK_SCALES.iter().filter(|&&s| s > 0.0) {
            let mut cand = sorted.clone();
            for (k, a) in cand.iter_mut().enumerate() {
                if moving.contains(&a.id) {
                    a.position = sorted[k].position + (sol.new_positions[k] - sorted[k].position) * scale;
                }
            }
            if !true_constraints_hold(&sorted, &cand, params, &moving) {
                debug!("scale {scale}: true constraints violated");
                continue;
            }
            let g = build_graph(&cand, weight_params, &BTreeSet::new())?;
            let plan = model.worst_case(&g);
            if plan.resulting_lambda2 >= prev.resulting_lambda2 - CHECK_TOL {
                return Ok(Realization {
                    accepted: true,
                    scale,
                    agents: cand,
                    realized_worst_lambda2: plan.resulting_lambda2,
                    attack: plan,
                });
            }
            debug!("scale {scale}: worst-case λ₂ {} below {}", plan.resulting_lambda2, prev.resulting_lambda2);
        }
    }
    Ok(Realization {
        accepted: false,
        scale: 0.0,
        agents: sorted,
        realized_worst_lambda2: prev.resulting_lambda2,
        attack: prev,
    })
}

fn dist(agents: &[AgentState], a: AgentId, b: AgentId) -> f64 {
    let p = |id| agents.iter().find(|x| x.id == id).map(|x| x.position).expect("same agents");
    (p(a) - p(b)).norm()
}

fn true_constraints_hold(old: &[AgentState], new: &[AgentState], params: &PlayerParams, moving: &BTreeSet<AgentId>) -> bool {
    for (k, a) in new.iter().enumerate() {
        if moving.contains(&a.id) && (a.position - old[k].position).norm() > params.d_max + CHECK_TOL {
            return false;
        }
    }
    for (i, a) in new.iter().enumerate() {
        for b in &new[i + 1..] {
            if (moving.contains(&a.id) || moving.contains(&b.id))
                && (a.position - b.position).norm() < params.rho(a.layer, b.layer).min(dist(old, a.id, b.id)) - CHECK_TOL
            {
                return false;
            }
        }
    }
    true
}

/// Diagnostics and result of one operator turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnOutcome {
    pub status: SolveStatus,
    pub alpha: f64,
    pub iterations: usize,
    pub kkt_residuals: (f64, f64, f64),
    pub scenario_count: usize,
    /// Scenarios left out because they were already disconnected and pinned `α` at zero.
    pub dropped_scenarios: usize,
    pub realization: Realization,
}

/// Assemble, solve and realize one turn.
///
/// When the optimum is `α ≤ ε_disc` because some anticipated attacks already
/// disconnect the network, those scenarios are dropped and the program is
/// solved again (nominal only if none remain).
pub fn best_response(
    agents: &[AgentState],
    params: &PlayerParams,
    weight_params: &WeightParams,
    model: &AttackModel,
    frozen: &BTreeSet<AgentId>,
    opts: &AssemblyOptions,
    settings: &SolverSettings,
) -> Result<TurnOutcome, PlayerError> {
    let g = build_graph(agents, weight_params, &BTreeSet::new())?;
    let space = model.action_space(&g);
    let scenarios = if opts.anticipate_attacks { space.scenarios() } else { vec![Vec::new()] };
    let scenario_count = scenarios.len();
    let prog = assemble_with_scenarios(agents, params, weight_params, &scenarios, frozen, opts)?;
    let mut sol = solve_conic(&prog, settings)?;
    let mut dropped = 0;
    if sol.status == SolveStatus::Optimal && sol.alpha <= DISCONNECTED_EPS && scenario_count > 1 {
        let mut alive = Vec::new();
        for e in &scenarios {
            if lambda2(&g.without_links(e)?) > DISCONNECTED_EPS {
                alive.push(e.clone());
            } else {
                dropped += 1;
            }
        }
        if dropped > 0 {
            if alive.is_empty() {
                alive.push(Vec::new());
            }
            debug!("dropping {dropped} already-disconnecting scenarios");
            let prog = assemble_with_scenarios(agents, params, weight_params, &alive, frozen, opts)?;
            sol = solve_conic(&prog, settings)?;
        }
    }
    let realization = match sol.status {
        SolveStatus::Optimal | SolveStatus::MaxIterations => {
            verify_and_realize(agents, &sol, params, weight_params, model, frozen)?
        }
        SolveStatus::Infeasible => {
            let stay = ConicSolution { new_positions: Vec::new(), ..sol.clone() };
            verify_and_realize(agents, &stay, params, weight_params, model, frozen)?
        }
    };
    Ok(TurnOutcome {
        status: sol.status,
        alpha: sol.alpha,
        iterations: sol.iterations,
        kkt_residuals: sol.kkt_residuals,
        scenario_count,
        dropped_scenarios: dropped,
        realization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{worst_case_attack, CandidateFilter};
    use crate::graph::{ArgConvention, Layer};
    use crate::sdp::Player;
    use approx::assert_abs_diff_eq;

    fn base_agents() -> Vec<AgentState> {
        let mut v = vec![AgentState::new(1, Layer::L1, [1.0, 3.0, 1.2]), AgentState::new(2, Layer::L1, [2.0, 3.0, 1.2])];
        let l2 = [[0.0, 0.0, 0.0], [0.0, 1.5, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, -1.5, 0.0], [3.0, 0.0, 0.0]];
        for (k, p) in l2.iter().enumerate() {
            v.push(AgentState::new(k + 3, Layer::L2, *p));
        }
        v
    }

    fn wp() -> WeightParams {
        WeightParams::new(0.1, 2.0, 6.0, ArgConvention::SquaredDistance).unwrap()
    }

    fn params(player: Player, d_max: f64) -> PlayerParams {
        PlayerParams { player, rho_intra: 1.0, rho_cross: 1.0, d_max, period: 1 }
    }

    #[test]
    fn block_counts() {
        let agents = base_agents();
        let wide = WeightParams::new(0.1, 2.0, 40.0, ArgConvention::SquaredDistance).unwrap();
        let g = build_graph(&agents, &wide, &BTreeSet::new()).unwrap();
        let links: BTreeSet<Link> = g.links().into_iter().take(20).collect();
        assert_eq!(links.len(), 20);
        let space = AttackActionSpace::new(links, 1).unwrap();
        let p = params(Player::P1, 0.2);
        let prog = assemble_player_problem(&agents, &p, &wide, &space, &BTreeSet::new(), &AssemblyOptions::default()).unwrap();
        assert_eq!(prog.lmi_blocks.len(), 21);
        assert_eq!(prog.lin_eq.iter().filter(|c| c.label.starts_with("Z[")).count(), 8);
        assert_eq!(prog.soc_blocks.len(), 2);

        let six: BTreeSet<Link> = g.links().into_iter().take(6).collect();
        let space = AttackActionSpace::new(six, 2).unwrap();
        let prog = assemble_player_problem(&agents, &p, &wide, &space, &BTreeSet::new(), &AssemblyOptions::default()).unwrap();
        assert_eq!(prog.lmi_blocks.len(), 16);
    }

    #[test]
    fn pinned_robots_give_worst_case_lambda2() {
        let agents = base_agents();
        let g = build_graph(&agents, &wp(), &BTreeSet::new()).unwrap();
        let model = AttackModel::new(1, CandidateFilter::All, [Link::new(3, 4)].into_iter().collect());
        let space = model.action_space(&g);
        let prog =
            assemble_player_problem(&agents, &params(Player::P2, 0.0), &wp(), &space, &BTreeSet::new(), &AssemblyOptions::default())
                .unwrap();
        let sol = solve_conic(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let oracle = worst_case_attack(&g, &space).unwrap().resulting_lambda2;
        assert_abs_diff_eq!(sol.alpha, oracle, epsilon = 1e-5);
    }

    #[test]
    fn contradictory_separation_is_infeasible() {
        let agents = base_agents();
        let g = build_graph(&agents, &wp(), &BTreeSet::new()).unwrap();
        let space = AttackModel::new(1, CandidateFilter::All, BTreeSet::new()).action_space(&g);
        let mut prog =
            assemble_player_problem(&agents, &params(Player::P1, 0.0), &wp(), &space, &BTreeSet::new(), &AssemblyOptions::default())
                .unwrap();
        let z12 = prog.layout.as_ref().unwrap().z_var(0, 1);
        prog.add_ineq(AffineExpr::var(z12).plus(-100.0), "Z12 >= 100");
        let sol = solve_conic(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn close_pair_keeps_its_distance() {
        let mut agents = base_agents();
        agents[1].position = agents[0].position + crate::Position::new(0.5, 0.0, 0.0);
        let g = build_graph(&agents, &wp(), &BTreeSet::new()).unwrap();
        let space = AttackModel::default().action_space(&g);
        let prog =
            assemble_player_problem(&agents, &params(Player::P1, 0.2), &wp(), &space, &BTreeSet::new(), &AssemblyOptions::default())
                .unwrap();
        let sep = prog.lin_ineq.iter().find(|c| c.label == "separation (1,2)").unwrap();
        assert_abs_diff_eq!(sep.expr.constant, -0.25, epsilon = 1e-12);
    }

    #[test]
    fn zero_displacement_is_identity() {
        let agents = base_agents();
        let model = AttackModel::new(1, CandidateFilter::All, BTreeSet::new());
        let mut sol = ConicSolution::infeasible(&ConicProgram::new(1, 0), 0);
        sol.status = SolveStatus::Optimal;
        sol.new_positions = agents.iter().map(|a| a.position).collect();
        let r = verify_and_realize(&agents, &sol, &params(Player::P1, 0.2), &wp(), &model, &BTreeSet::new()).unwrap();
        assert!(r.accepted);
        assert_eq!(r.scale, 1.0);
        let g = build_graph(&agents, &wp(), &BTreeSet::new()).unwrap();
        assert_eq!(r.realized_worst_lambda2, model.worst_case(&g).resulting_lambda2);
    }

    #[test]
    fn backtracking_engages_near_the_boundary() {
        // Agent 2 sits 1.05 from agent 1; the proposed move overshoots to 0.95,
        // half of it lands at 1.0.
        let agents = vec![
            AgentState::new(1, Layer::L1, [0.0, 0.0, 0.0]),
            AgentState::new(2, Layer::L1, [1.05, 0.0, 0.0]),
            AgentState::new(3, Layer::L2, [0.5, 0.0, -1.5]),
        ];
        let p = PlayerParams { player: Player::P1, rho_intra: 1.0, rho_cross: 1.0, d_max: 0.2, period: 1 };
        let mut sol = ConicSolution::infeasible(&ConicProgram::new(1, 0), 0);
        sol.status = SolveStatus::Optimal;
        sol.new_positions = agents.iter().map(|a| a.position).collect();
        sol.new_positions[1].x = 0.95;
        let model = AttackModel::default();
        let r = verify_and_realize(&agents, &sol, &p, &wp(), &model, &BTreeSet::new()).unwrap();
        assert!(r.accepted);
        assert_eq!(r.scale, 0.5);
        assert!((r.agents[1].position - r.agents[0].position).norm() >= 1.0 - CHECK_TOL);
    }
}
