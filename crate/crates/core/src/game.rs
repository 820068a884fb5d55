//! The alternating update loop and the equilibrium experiments built on it.
//!
//! At step `k` operator `γ` moves iff `k mod c_γ = 0` and the whole
//! configuration moved by more than `κ` (infinity norm) since step `k − c_γ`.
//! History before the first step is seeded with half the initial positions
//! so that the opening turns are never suppressed. P1 moves first when both
//! are due; P2 then starts from P1's result. A spoofing window displaces its
//! target at the end of every step it covers and freezes the target for the
//! operators meanwhile; a rebooted target is put back where it was before
//! the window at the start of the next step.

use std::collections::BTreeSet;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{combinations, AttackModel, JammingPlan, SpoofingPlan};
use crate::dynamics::sorted_agents;
use crate::graph::{build_graph, lambda2, AgentId, AgentState, GraphError, Layer, WeightParams};
use crate::sdp::player::CHECK_TOL;
use crate::sdp::{best_response, AssemblyOptions, Player, PlayerError, PlayerParams, SolveStatus, SolverSettings};
use crate::Position;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineParams {
    /// Update period of P1 (`c₁`).
    pub period_1: usize,
    /// Update period of P2 (`c₂`).
    pub period_2: usize,
    pub kappa: f64,
    pub max_steps: usize,
    pub anticipate_attacks: bool,
    pub planar_layers: bool,
    /// Accepted moves that raise the operator's objective by less than this are undone.
    pub min_gain: f64,
    pub solver: SolverSettings,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            period_1: 1,
            period_2: 2,
            kappa: 1e-6,
            max_steps: 200,
            anticipate_attacks: true,
            planar_layers: true,
            min_gain: 1e-6,
            solver: SolverSettings::default(),
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if self.period_1 == 0 || self.period_2 == 0 {
            errs.push("periods must be at least 1".to_string());
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            errs.push(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.min_gain >= 0.0 && self.min_gain.is_finite()) {
            errs.push(format!("min_gain must be nonnegative, got {}", self.min_gain));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }

    fn period(&self, p: Player) -> usize {
        match p {
            Player::P1 => self.period_1,
            Player::P2 => self.period_2,
        }
    }

    fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions { planar_layers: self.planar_layers, anticipate_attacks: self.anticipate_attacks }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("agents {a} and {b} start {dist:.6} apart, below the required {min}")]
    InfeasibleStart { a: AgentId, b: AgentId, dist: f64, min: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Player(#[from] PlayerError),
}

/// One operator turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub player: Player,
    pub status: Option<SolveStatus>,
    pub alpha: f64,
    pub iterations: usize,
    pub kkt_residuals: (f64, f64, f64),
    pub scenario_count: usize,
    pub dropped_scenarios: usize,
    pub accepted: bool,
    pub scale: f64,
    /// Set when the turn was skipped because the program could not be built or solved.
    pub skipped: Option<String>,
}

/// State after step `step` (step 0 is the initial configuration).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Positions in ascending id order.
    pub positions: Vec<Position>,
    pub nominal_lambda2: f64,
    pub worst_lambda2: f64,
    pub worst_attack: JammingPlan,
    pub turns: Vec<TurnRecord>,
    /// A spoofing disturbance was applied at the end of this step.
    pub spoofed: bool,
}

impl StepRecord {
    pub fn acting(&self) -> Vec<Player> {
        self.turns.iter().filter(|t| t.skipped.is_none()).map(|t| t.player).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    TurnSkipped { step: usize, player: Player, reason: String },
    TurnRejected { step: usize, player: Player },
    SpoofStart { step: usize, target: AgentId },
    SpoofEnd { step: usize, target: AgentId },
    Reboot { step: usize, target: AgentId },
    Converged { step: usize },
    StepLimit { step: usize },
}

impl std::fmt::Display for Event {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Event::TurnSkipped { step, player, reason } => write!(f, "step {step}: {player:?} skipped: {reason}"),
            Event::TurnRejected { step, player } => write!(f, "step {step}: {player:?} update rejected, stayed put"),
            Event::SpoofStart { step, target } => write!(f, "step {step}: spoofing of agent {target} begins"),
            Event::SpoofEnd { step, target } => write!(f, "step {step}: spoofing of agent {target} ends"),
            Event::Reboot { step, target } => write!(f, "step {step}: agent {target} rebooted to its pre-attack position"),
            Event::Converged { step } => write!(f, "step {step}: converged"),
            Event::StepLimit { step } => write!(f, "step {step}: step limit reached"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameTrace {
    pub ids: Vec<AgentId>,
    pub layers: Vec<Layer>,
    /// `steps[k]` is the state after step `k`.
    pub steps: Vec<StepRecord>,
    pub converged: bool,
    pub steps_used: usize,
    pub events: Vec<Event>,
}

impl GameTrace {
    pub fn last(&self) -> &StepRecord {
        self.steps.last().expect("trace always holds the initial state")
    }

    /// Final configuration as agent states.
    pub fn final_agents(&self) -> Vec<AgentState> {
        self.ids
            .iter()
            .zip(&self.layers)
            .zip(&self.last().positions)
            .map(|((&id, &layer), &position)| AgentState { id, layer, position })
            .collect()
    }

    pub fn worst_lambda2_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.worst_lambda2).collect()
    }
}

/// Required separation between two agents given both operators' parameters.
fn required_separation(a: Layer, b: Layer, p1: &PlayerParams, p2: &PlayerParams) -> f64 {
    match (a, b) {
        (Layer::L1, Layer::L1) => p1.rho_intra,
        (Layer::L2, Layer::L2) => p2.rho_intra,
        _ => p1.rho_cross.max(p2.rho_cross),
    }
}

pub fn check_start(agents: &[AgentState], p1: &PlayerParams, p2: &PlayerParams) -> Result<(), GameError> {
    for (i, a) in agents.iter().enumerate() {
        for b in &agents[i + 1..] {
            let dist = (a.position - b.position).norm();
            let min = required_separation(a.layer, b.layer, p1, p2);
            if dist < min - CHECK_TOL {
                return Err(GameError::InfeasibleStart { a: a.id.min(b.id), b: a.id.max(b.id), dist, min });
            }
        }
    }
    Ok(())
}

fn validate_all(engine: &EngineParams, p1: &PlayerParams, p2: &PlayerParams, wp: &WeightParams) -> Result<(), GameError> {
    let mut errs = Vec::new();
    if let Err(e) = engine.validate() {
        errs.push(e);
    }
    for (p, want) in [(p1, Player::P1), (p2, Player::P2)] {
        if p.player != want {
            errs.push(format!("parameters for {want:?} are labeled {:?}", p.player));
        }
        if let Err(e) = p.validate() {
            errs.push(format!("{want:?}: {e}"));
        }
    }
    if let Err(e) = wp.validate() {
        errs.push(e.to_string());
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(GameError::InvalidParams(errs.join("; ")))
    }
}

fn inf_dist(a: &[Position], b: &[Position]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
}

fn player_params<'a>(p: Player, p1: &'a PlayerParams, p2: &'a PlayerParams) -> &'a PlayerParams {
    match p {
        Player::P1 => p1,
        Player::P2 => p2,
    }
}

fn record(step: usize, agents: &[AgentState], wp: &WeightParams, model: &AttackModel) -> Result<StepRecord, GameError> {
    let g = build_graph(agents, wp, &BTreeSet::new())?;
    let worst = model.worst_case(&g);
    Ok(StepRecord {
        step,
        positions: agents.iter().map(|a| a.position).collect(),
        nominal_lambda2: lambda2(&g),
        worst_lambda2: worst.resulting_lambda2,
        worst_attack: worst,
        turns: Vec::new(),
        spoofed: false,
    })
}

/// Gain in worst-case λ₂, or in nominal λ₂ while the worst case stays disconnected.
fn progress(before: &[AgentState], after: &[AgentState], wp: &WeightParams, model: &AttackModel) -> Result<f64, GameError> {
    let g0 = build_graph(before, wp, &BTreeSet::new())?;
    let g1 = build_graph(after, wp, &BTreeSet::new())?;
    let (w0, w1) = (model.worst_case(&g0).resulting_lambda2, model.worst_case(&g1).resulting_lambda2);
    if w0 == 0.0 && w1 == 0.0 {
        Ok(lambda2(&g1) - lambda2(&g0))
    } else {
        Ok(w1 - w0)
    }
}

/// Runs the game from `agents` until both operators stop moving or
/// `engine.max_steps` steps have elapsed.
///
/// The trace always records worst-case λ₂ under `model`. When
/// `engine.anticipate_attacks` is off the operators plan and accept moves
/// against the nominal λ₂ only.
pub fn run(
    agents: &[AgentState],
    engine: &EngineParams,
    p1: &PlayerParams,
    p2: &PlayerParams,
    wp: &WeightParams,
    model: &AttackModel,
    spoof: Option<&SpoofingPlan>,
) -> Result<GameTrace, GameError> {
    validate_all(engine, p1, p2, wp)?;
    let mut current: Vec<AgentState> = sorted_agents(agents).into_iter().cloned().collect();
    check_start(&current, p1, p2)?;
    let ids: Vec<AgentId> = current.iter().map(|a| a.id).collect();
    let layers: Vec<Layer> = current.iter().map(|a| a.layer).collect();
    let turn_model = if engine.anticipate_attacks { model.clone() } else { AttackModel { budget_psi: 0, ..model.clone() } };
    let opts = engine.assembly();

    let x0: Vec<Position> = current.iter().map(|a| a.position).collect();
    let seed: Vec<Position> = x0.iter().map(|p| p / 2.0).collect();
    // history[k] = x(k) for k ≥ 1; earlier indices read the seed.
    let mut history: Vec<Vec<Position>> = vec![seed.clone(), x0];
    let at = |h: &Vec<Vec<Position>>, k: isize| -> Vec<Position> { if k < 1 { seed.clone() } else { h[k as usize].clone() } };

    let mut steps = vec![record(0, &current, wp, model)?];
    let mut events = Vec::new();
    let mut converged = false;
    let max_period = engine.period_1.max(engine.period_2);
    let mut k = 0;
    let mut pre_attack = None;
    info!("starting run: {} agents, worst-case λ₂ {:.6}", current.len(), steps[0].worst_lambda2);

    while k < engine.max_steps {
        k += 1;
        let xk: Vec<Position> = current.iter().map(|a| a.position).collect();
        let frozen: BTreeSet<AgentId> = match spoof {
            Some(s) if s.is_active(k) => [s.target].into_iter().collect(),
            _ => BTreeSet::new(),
        };
        if let Some(s) = spoof {
            if k == s.start_step && s.duration > 0 {
                events.push(Event::SpoofStart { step: k, target: s.target });
                pre_attack = current.iter().find(|a| a.id == s.target).map(|a| a.position);
            }
            if k == s.start_step + s.duration && s.reboot {
                if let Some(p) = pre_attack {
                    for a in current.iter_mut().filter(|a| a.id == s.target) {
                        a.position = p;
                    }
                    events.push(Event::Reboot { step: k, target: s.target });
                }
            }
        }
        let mut turns = Vec::new();
        let mut tests = Vec::new();
        for player in [Player::P1, Player::P2] {
            let c = engine.period(player);
            let moved = inf_dist(&xk, &at(&history, k as isize - c as isize)) > engine.kappa;
            tests.push(moved);
            if k % c != 0 || !moved {
                continue;
            }
            let params = player_params(player, p1, p2);
            match best_response(&current, params, wp, &turn_model, &frozen, &opts, &engine.solver) {
                Ok(mut out) => {
                    if out.realization.accepted && progress(&current, &out.realization.agents, wp, &turn_model)? < engine.min_gain {
                        out.realization.accepted = false;
                        out.realization.scale = 0.0;
                        out.realization.agents = current.clone();
                    }
                    let r = &out.realization;
                    debug!(
                        "step {k} {player:?}: {:?} α={:.6} scale={} worst={:.6}",
                        out.status, out.alpha, r.scale, r.realized_worst_lambda2
                    );
                    if !r.accepted {
                        events.push(Event::TurnRejected { step: k, player });
                    }
                    turns.push(TurnRecord {
                        player,
                        status: Some(out.status),
                        alpha: out.alpha,
                        iterations: out.iterations,
                        kkt_residuals: out.kkt_residuals,
                        scenario_count: out.scenario_count,
                        dropped_scenarios: out.dropped_scenarios,
                        accepted: r.accepted,
                        scale: r.scale,
                        skipped: None,
                    });
                    current = r.agents.clone();
                }
                Err(e @ PlayerError::Solver(_)) => {
                    warn!("step {k} {player:?}: turn skipped: {e}");
                    events.push(Event::TurnSkipped { step: k, player, reason: e.to_string() });
                    turns.push(TurnRecord {
                        player,
                        status: None,
                        alpha: f64::NAN,
                        iterations: 0,
                        kkt_residuals: (f64::NAN, f64::NAN, f64::NAN),
                        scenario_count: 0,
                        dropped_scenarios: 0,
                        accepted: false,
                        scale: 0.0,
                        skipped: Some(e.to_string()),
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut spoofed = false;
        if let Some(s) = spoof {
            if s.is_active(k) {
                s.apply(k, &mut current);
                spoofed = true;
                if k == s.end_step() {
                    events.push(Event::SpoofEnd { step: k, target: s.target });
                }
            }
        }
        history.push(current.iter().map(|a| a.position).collect());
        let mut rec = record(k, &current, wp, model)?;
        rec.turns = turns;
        rec.spoofed = spoofed;
        steps.push(rec);

        let pending = spoof.is_some_and(|s| s.duration > 0 && k < s.start_step + s.duration + usize::from(s.reboot));
        if !tests.iter().any(|&t| t) && k > max_period && !pending {
            converged = true;
            events.push(Event::Converged { step: k });
            break;
        }
    }
    if !converged {
        events.push(Event::StepLimit { step: k });
    }
    info!("run finished after {k} steps, converged = {converged}, worst-case λ₂ {:.6}", steps[k].worst_lambda2);
    Ok(GameTrace { ids, layers, steps, converged, steps_used: k, events })
}

/// Outcome of [`check_meta_equilibrium`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub holds: bool,
    pub worst_lambda2: f64,
    /// Realized worst-case λ₂ gain each operator can obtain by deviating.
    pub improvement_p1: f64,
    pub improvement_p2: f64,
    /// The attack the jammer plays.
    pub attack: JammingPlan,
    /// `attack` matched an independent enumeration of the action space.
    pub attack_is_best_response: bool,
}

/// Checks that neither operator can raise the worst-case λ₂ by more than
/// `tol` with one best-response turn and that the jammer's plan is optimal.
#[allow(clippy::too_many_arguments)]
pub fn check_meta_equilibrium(
    agents: &[AgentState],
    p1: &PlayerParams,
    p2: &PlayerParams,
    wp: &WeightParams,
    model: &AttackModel,
    opts: &AssemblyOptions,
    settings: &SolverSettings,
    tol: f64,
) -> Result<EquilibriumReport, GameError> {
    let sorted: Vec<AgentState> = sorted_agents(agents).into_iter().cloned().collect();
    let g = build_graph(&sorted, wp, &BTreeSet::new())?;
    let attack = model.worst_case(&g);
    let space = model.action_space(&g);
    let links: Vec<_> = space.candidate_links.iter().copied().collect();
    let enumerated = combinations(&links, space.budget_psi)
        .into_iter()
        .map(|e| g.without_links(&e).map(|h| lambda2(&h)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let enumerated = if enumerated.is_finite() { enumerated } else { lambda2(&g) };
    let attack_is_best_response = (attack.resulting_lambda2 - enumerated).abs() <= 1e-12;

    let mut gains = [0.0; 2];
    for (slot, params) in [p1, p2].into_iter().enumerate() {
        match best_response(&sorted, params, wp, model, &BTreeSet::new(), opts, settings) {
            Ok(out) if out.realization.accepted => {
                gains[slot] = out.realization.realized_worst_lambda2 - attack.resulting_lambda2;
            }
            Ok(_) => {}
            Err(PlayerError::Solver(e)) => debug!("{:?}: solver failed during check: {e}", params.player),
            Err(e) => return Err(e.into()),
        }
    }
    let holds = gains.iter().all(|&d| d <= tol) && attack_is_best_response;
    Ok(EquilibriumReport {
        holds,
        worst_lambda2: attack.resulting_lambda2,
        improvement_p1: gains[0],
        improvement_p2: gains[1],
        attack,
        attack_is_best_response,
    })
}

/// Final worst-case λ₂ with and without attack anticipation.
#[derive(Clone, Debug, PartialEq)]
pub struct AnticipationComparison {
    pub lambda2_anticipating: f64,
    pub lambda2_naive: f64,
    pub anticipating: GameTrace,
    pub naive: GameTrace,
}

/// Runs the game once with attack anticipation and once planning against
/// the nominal graph only, in parallel, and attacks both final networks
/// with the worst case of `model`.
pub fn compare_anticipation(
    agents: &[AgentState],
    engine: &EngineParams,
    p1: &PlayerParams,
    p2: &PlayerParams,
    wp: &WeightParams,
    model: &AttackModel,
) -> Result<AnticipationComparison, GameError> {
    let on = EngineParams { anticipate_attacks: true, ..*engine };
    let off = EngineParams { anticipate_attacks: false, ..*engine };
    let (a, b) = std::thread::scope(|s| {
        let ha = s.spawn(|| run(agents, &on, p1, p2, wp, model, None));
        let hb = s.spawn(|| run(agents, &off, p1, p2, wp, model, None));
        (ha.join().expect("anticipating run panicked"), hb.join().expect("naive run panicked"))
    });
    let (anticipating, naive) = (a?, b?);
    Ok(AnticipationComparison {
        lambda2_anticipating: anticipating.last().worst_lambda2,
        lambda2_naive: naive.last().worst_lambda2,
        anticipating,
        naive,
    })
}
