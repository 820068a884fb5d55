//! Scenario files, bundled fixtures and run artifacts.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! schema_version = 1
//! name = "example"
//!
//! [weights]
//! delta = 0.1
//! r_sat = 2.0
//! r_cut = 6.0
//! arg_convention = "squared_distance"   # or "distance"
//!
//! [[agents]]
//! id = 1
//! layer = "L1"
//! position = [1.0, 3.0, 1.2]
//!
//! [[agents]]
//! id = 2
//! layer = "L2"
//! position = [0.0, 0.0, 0.0]
//!
//! [players.p1]
//! rho_intra = 1.0
//! rho_cross = 1.0
//! d_max = 0.2
//! period = 1
//!
//! [players.p2]
//! rho_intra = 1.0
//! rho_cross = 1.0
//! d_max = 0.2
//! period = 2
//!
//! [engine]            # every key optional
//! kappa = 1e-6
//! max_steps = 200
//! anticipate_attacks = true
//! planar_layers = true
//! min_gain = 1e-6
//! seed = 0
//!
//! [attack]
//! budget_psi = 1
//! filter = "all"      # all | inter_layer_only | cross_layer_only | explicit
//! links = []          # candidate list for filter = "explicit"
//! secure_links = []
//!
//! [spoofing]          # optional
//! target = "max_degree"   # or an agent id
//! start_step = 9
//! duration = 5
//! disturbance_range = [0.0, 0.2]
//! reboot = true       # return the target to its pre-window position afterwards
//! ```
//!
//! Agents are numbered `1..n` with every upper-layer (`L1`) id below every
//! lower-layer (`L2`) id.
//!
//! [`run_scenario`] writes `trace.csv`, `summary.json`, `events.log` and
//! `snapshot.json` (final positions) into the output directory.
//!
//! `trace.csv` has one row per step, starting with the initial state at
//! step 0. Columns: `step`, then `x_i,y_i,z_i` for every agent in id order,
//! then `nominal_lambda2`, `worst_lambda2`, `acting` (`P1`, `P2`, `P1+P2` or
//! `none`), `spoofed` (`0`/`1`) and `worst_attack` (the links the worst-case
//! jammer cuts, as `a-b` separated by spaces).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{select_spoof_target, AttackModel, CandidateFilter, JammingPlan, SpoofingPlan};
use crate::game::{check_meta_equilibrium, run, EngineParams, EquilibriumReport, GameError, GameTrace};
use crate::graph::{build_graph, lambda2, AgentId, AgentState, ArgConvention, Layer, Link, WeightParams};
use crate::sdp::{AssemblyOptions, Player, PlayerParams, SolverSettings};

pub const SCHEMA_VERSION: u32 = 1;

/// Tolerance of the equilibrium check reported in `summary.json`.
pub const EQUILIBRIUM_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("unknown scenario '{0}' (not a file and not a bundled fixture)")]
    Unknown(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub id: AgentId,
    pub layer: Layer,
    pub position: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerSection {
    pub rho_intra: f64,
    pub rho_cross: f64,
    pub d_max: f64,
    pub period: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Players {
    pub p1: PlayerSection,
    pub p2: PlayerSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSection {
    pub kappa: f64,
    pub max_steps: usize,
    pub anticipate_attacks: bool,
    pub planar_layers: bool,
    pub min_gain: f64,
    /// Seed of the spoofing disturbance generator.
    pub seed: u64,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineParams::default();
        EngineSection {
            kappa: e.kappa,
            max_steps: e.max_steps,
            anticipate_attacks: e.anticipate_attacks,
            planar_layers: e.planar_layers,
            min_gain: e.min_gain,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    #[default]
    All,
    InterLayerOnly,
    CrossLayerOnly,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    pub budget_psi: usize,
    pub filter: FilterKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<Link>,
    #[serde(default)]
    pub secure_links: Vec<Link>,
}

/// Who the spoofer takes over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpoofTarget {
    Agent(AgentId),
    /// Largest weighted degree when the window opens.
    MaxDegree,
}

impl Serialize for SpoofTarget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SpoofTarget::Agent(id) => s.serialize_u64(*id as u64),
            SpoofTarget::MaxDegree => s.serialize_str("max_degree"),
        }
    }
}

impl<'de> Deserialize<'de> for SpoofTarget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(AgentId),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(id) => Ok(SpoofTarget::Agent(id)),
            Raw::Name(n) if n == "max_degree" => Ok(SpoofTarget::MaxDegree),
            Raw::Name(n) => Err(serde::de::Error::custom(format!("spoofing target must be an agent id or \"max_degree\", got \"{n}\""))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpoofSection {
    pub target: SpoofTarget,
    pub start_step: usize,
    pub duration: usize,
    pub disturbance_range: [f64; 2],
    pub reboot: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub weights: WeightParams,
    pub players: Players,
    pub engine: EngineSection,
    pub attack: AttackSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spoofing: Option<SpoofSection>,
    pub agents: Vec<AgentConfig>,
}

// Raw mirror with every field optional, so validation can report all gaps at once.
mod raw {
    use super::*;

    #[derive(Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    pub struct Scenario {
        pub schema_version: Option<u32>,
        pub name: Option<String>,
        pub description: Option<String>,
        pub weights: Option<Weights>,
        pub agents: Option<Vec<Agent>>,
        pub players: Option<Players>,
        #[serde(default)]
        pub engine: Engine,
        pub attack: Option<Attack>,
        pub spoofing: Option<Spoof>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Weights {
        pub delta: Option<f64>,
        pub r_sat: Option<f64>,
        pub r_cut: Option<f64>,
        pub arg_convention: Option<ArgConvention>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Agent {
        pub id: Option<AgentId>,
        pub layer: Option<Layer>,
        pub position: Option<[f64; 3]>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Players {
        pub p1: Option<Player>,
        pub p2: Option<Player>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Player {
        pub rho_intra: Option<f64>,
        pub rho_cross: Option<f64>,
        pub d_max: Option<f64>,
        pub period: Option<usize>,
    }

    #[derive(Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    pub struct Engine {
        pub kappa: Option<f64>,
        pub max_steps: Option<usize>,
        pub anticipate_attacks: Option<bool>,
        pub planar_layers: Option<bool>,
        pub min_gain: Option<f64>,
        pub seed: Option<u64>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Attack {
        pub budget_psi: Option<usize>,
        pub filter: Option<FilterKind>,
        pub links: Option<Vec<[AgentId; 2]>>,
        pub secure_links: Option<Vec<[AgentId; 2]>>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Spoof {
        pub target: Option<SpoofTarget>,
        pub start_step: Option<usize>,
        pub duration: Option<usize>,
        pub disturbance_range: Option<[f64; 2]>,
        pub reboot: Option<bool>,
    }
}

struct Problems(Vec<String>);

impl Problems {
    fn need<T>(&mut self, v: Option<T>, field: &str) -> Option<T> {
        if v.is_none() {
            self.0.push(format!("missing required field `{field}`"));
        }
        v
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(msg());
        }
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let raw: raw::Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let mut p = Problems(Vec::new());

    let schema_version = p.need(raw.schema_version, "schema_version");
    if let Some(v) = schema_version {
        p.check(v == SCHEMA_VERSION, || format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"));
    }

    let weights = p.need(raw.weights, "weights").and_then(|w| {
        let delta = p.need(w.delta, "weights.delta");
        let r_sat = p.need(w.r_sat, "weights.r_sat");
        let r_cut = p.need(w.r_cut, "weights.r_cut");
        let wp = WeightParams {
            delta: delta?,
            r_sat: r_sat?,
            r_cut: r_cut?,
            arg_convention: w.arg_convention.unwrap_or_default(),
        };
        if let Err(e) = wp.validate() {
            p.0.push(format!("weights: {e}"));
        }
        Some(wp)
    });

    let mut agents = Vec::new();
    match p.need(raw.agents, "agents") {
        Some(list) if list.is_empty() => p.0.push("`agents` is empty".into()),
        Some(list) => {
            for (k, a) in list.into_iter().enumerate() {
                let id = p.need(a.id, &format!("agents[{k}].id"));
                let layer = p.need(a.layer, &format!("agents[{k}].layer"));
                let position = p.need(a.position, &format!("agents[{k}].position"));
                if let Some(pos) = position {
                    p.check(pos.iter().all(|v| v.is_finite()), || format!("agents[{k}].position is not finite"));
                }
                if let (Some(id), Some(layer), Some(position)) = (id, layer, position) {
                    agents.push(AgentConfig { id, layer, position });
                }
            }
        }
        None => {}
    }
    let mut ids: Vec<AgentId> = agents.iter().map(|a| a.id).collect();
    ids.sort_unstable();
    let expected: Vec<AgentId> = (1..=ids.len()).collect();
    if !agents.is_empty() {
        p.check(ids == expected, || format!("agent ids must be exactly 1..{} without repeats, got {ids:?}", ids.len()));
        let max_l1 = agents.iter().filter(|a| a.layer == Layer::L1).map(|a| a.id).max();
        let min_l2 = agents.iter().filter(|a| a.layer == Layer::L2).map(|a| a.id).min();
        match (max_l1, min_l2) {
            (Some(a), Some(b)) => p.check(a < b, || "every L1 id must be smaller than every L2 id".into()),
            _ => p.0.push("both layers need at least one agent".into()),
        }
    }
    let known: BTreeSet<AgentId> = ids.iter().copied().collect();

    let player = |sec: Option<raw::Player>, name: &str, p: &mut Problems| -> Option<PlayerSection> {
        let sec = p.need(sec, &format!("players.{name}"))?;
        let rho_intra = p.need(sec.rho_intra, &format!("players.{name}.rho_intra"));
        let rho_cross = p.need(sec.rho_cross, &format!("players.{name}.rho_cross"));
        let d_max = p.need(sec.d_max, &format!("players.{name}.d_max"));
        let period = p.need(sec.period, &format!("players.{name}.period"));
        let s = PlayerSection { rho_intra: rho_intra?, rho_cross: rho_cross?, d_max: d_max?, period: period? };
        p.check(positive(s.rho_intra), || format!("players.{name}.rho_intra must be positive"));
        p.check(positive(s.rho_cross), || format!("players.{name}.rho_cross must be positive"));
        p.check(s.d_max >= 0.0 && s.d_max.is_finite(), || format!("players.{name}.d_max must be nonnegative"));
        p.check(s.period >= 1, || format!("players.{name}.period must be at least 1"));
        Some(s)
    };
    let players = match p.need(raw.players, "players") {
        Some(ps) => {
            let p1 = player(ps.p1, "p1", &mut p);
            let p2 = player(ps.p2, "p2", &mut p);
            p1.zip(p2).map(|(p1, p2)| Players { p1, p2 })
        }
        None => None,
    };

    let d = EngineSection::default();
    let e = raw.engine;
    let engine = EngineSection {
        kappa: e.kappa.unwrap_or(d.kappa),
        max_steps: e.max_steps.unwrap_or(d.max_steps),
        anticipate_attacks: e.anticipate_attacks.unwrap_or(d.anticipate_attacks),
        planar_layers: e.planar_layers.unwrap_or(d.planar_layers),
        min_gain: e.min_gain.unwrap_or(d.min_gain),
        seed: e.seed.unwrap_or(d.seed),
    };
    p.check(positive(engine.kappa), || "engine.kappa must be positive".into());
    p.check(engine.max_steps >= 1, || "engine.max_steps must be at least 1".into());
    p.check(engine.min_gain >= 0.0 && engine.min_gain.is_finite(), || "engine.min_gain must be nonnegative".into());

    let link_list = |list: Option<Vec<[AgentId; 2]>>, field: &str, p: &mut Problems| -> Vec<Link> {
        let mut out = Vec::new();
        for (k, [a, b]) in list.unwrap_or_default().into_iter().enumerate() {
            p.check(a != b, || format!("{field}[{k}] joins agent {a} to itself"));
            for id in [a, b] {
                p.check(agents.is_empty() || known.contains(&id), || format!("{field}[{k}] refers to unknown agent {id}"));
            }
            out.push(Link::new(a, b));
        }
        out
    };
    let attack = p.need(raw.attack, "attack").and_then(|a| {
        let budget = p.need(a.budget_psi, "attack.budget_psi");
        let filter = a.filter.unwrap_or_default();
        let has_links = a.links.as_ref().is_some_and(|l| !l.is_empty());
        let links = link_list(a.links, "attack.links", &mut p);
        let secure_links = link_list(a.secure_links, "attack.secure_links", &mut p);
        if filter == FilterKind::Explicit {
            p.check(has_links, || "attack.filter = \"explicit\" needs a non-empty attack.links".into());
        } else {
            p.check(!has_links, || "attack.links is only used with attack.filter = \"explicit\"".into());
        }
        Some(AttackSection { budget_psi: budget?, filter, links, secure_links })
    });

    let spoofing = raw.spoofing.and_then(|s| {
        let target = p.need(s.target, "spoofing.target");
        let start_step = p.need(s.start_step, "spoofing.start_step");
        let duration = p.need(s.duration, "spoofing.duration");
        let range = p.need(s.disturbance_range, "spoofing.disturbance_range");
        let sec = SpoofSection { target: target?, start_step: start_step?, duration: duration?, disturbance_range: range?, reboot: s.reboot.unwrap_or(true) };
        if let SpoofTarget::Agent(id) = sec.target {
            p.check(agents.is_empty() || known.contains(&id), || format!("spoofing.target refers to unknown agent {id}"));
        }
        p.check(sec.start_step >= 1, || "spoofing.start_step must be at least 1".into());
        p.check(sec.duration >= 1, || "spoofing.duration must be at least 1".into());
        let [lo, hi] = sec.disturbance_range;
        p.check(lo.is_finite() && hi.is_finite() && lo <= hi, || "spoofing.disturbance_range must be [lo, hi] with lo <= hi".into());
        Some(sec)
    });

    if !p.0.is_empty() {
        return Err(ScenarioError::Validation(p.0));
    }
    let (Some(schema_version), Some(weights), Some(players), Some(attack)) = (schema_version, weights, players, attack) else {
        unreachable!("missing sections are reported above");
    };
    Ok(ScenarioConfig {
        schema_version,
        name: raw.name.unwrap_or_else(|| "scenario".into()),
        description: raw.description,
        weights,
        players,
        engine,
        attack,
        spoofing,
        agents,
    })
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&text)
}

/// Names and sources of the bundled fixtures.
pub const FIXTURES: &[(&str, &str)] = &[
    ("base_case", include_str!("../fixtures/base_case.toml")),
    ("alt_start", include_str!("../fixtures/alt_start.toml")),
    ("low_range_naive_vs_secure", include_str!("../fixtures/low_range_naive_vs_secure.toml")),
    ("spoof_early", include_str!("../fixtures/spoof_early.toml")),
    ("spoof_at_equilibrium", include_str!("../fixtures/spoof_at_equilibrium.toml")),
];

pub fn fixture(name: &str) -> Option<ScenarioConfig> {
    FIXTURES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_scenario(text).unwrap_or_else(|e| panic!("bundled fixture {name} is invalid: {e}")))
}

/// A file path, or the name of a bundled fixture.
pub fn resolve_scenario(arg: &str) -> Result<ScenarioConfig, ScenarioError> {
    let path = Path::new(arg);
    if path.exists() {
        load_scenario(path)
    } else {
        fixture(arg).ok_or_else(|| ScenarioError::Unknown(arg.to_string()))
    }
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn agents(&self) -> Vec<AgentState> {
        self.agents.iter().map(|a| AgentState::new(a.id, a.layer, a.position)).collect()
    }

    pub fn player_params(&self, player: Player) -> PlayerParams {
        let s = match player {
            Player::P1 => self.players.p1,
            Player::P2 => self.players.p2,
        };
        PlayerParams { player, rho_intra: s.rho_intra, rho_cross: s.rho_cross, d_max: s.d_max, period: s.period }
    }

    pub fn engine_params(&self) -> EngineParams {
        EngineParams {
            period_1: self.players.p1.period,
            period_2: self.players.p2.period,
            kappa: self.engine.kappa,
            max_steps: self.engine.max_steps,
            anticipate_attacks: self.engine.anticipate_attacks,
            planar_layers: self.engine.planar_layers,
            min_gain: self.engine.min_gain,
            solver: SolverSettings::default(),
        }
    }

    pub fn assembly_options(&self) -> AssemblyOptions {
        AssemblyOptions { planar_layers: self.engine.planar_layers, anticipate_attacks: self.engine.anticipate_attacks }
    }

    pub fn attack_model(&self) -> AttackModel {
        let filter = match self.attack.filter {
            FilterKind::All => CandidateFilter::All,
            FilterKind::InterLayerOnly => CandidateFilter::InterLayerOnly,
            FilterKind::CrossLayerOnly => CandidateFilter::CrossLayerOnly,
            FilterKind::Explicit => CandidateFilter::Explicit(self.attack.links.iter().copied().collect()),
        };
        AttackModel::new(self.attack.budget_psi, filter, self.attack.secure_links.iter().copied().collect())
    }

    /// Runs the game from this scenario's initial state.
    pub fn run(&self, spoof: Option<&SpoofingPlan>) -> Result<GameTrace, GameError> {
        run(
            &self.agents(),
            &self.engine_params(),
            &self.player_params(Player::P1),
            &self.player_params(Player::P2),
            &self.weights,
            &self.attack_model(),
            spoof,
        )
    }

    /// Fixes the spoofing target and draws the disturbances. A `max_degree`
    /// target is chosen on the configuration reached when the window opens.
    pub fn spoofing_plan(&self) -> Result<Option<SpoofingPlan>, GameError> {
        let Some(s) = self.spoofing else { return Ok(None) };
        let target = match s.target {
            SpoofTarget::Agent(id) => id,
            SpoofTarget::MaxDegree => {
                let agents = if s.start_step > 1 {
                    let mut pre = self.clone();
                    pre.engine.max_steps = s.start_step - 1;
                    pre.spoofing = None;
                    pre.run(None)?.final_agents()
                } else {
                    self.agents()
                };
                select_spoof_target(&build_graph(&agents, &self.weights, &BTreeSet::new())?)
            }
        };
        let [lo, hi] = s.disturbance_range;
        let mut plan = SpoofingPlan::with_uniform_disturbances(target, s.start_step, s.duration, (lo, hi), self.engine.seed);
        plan.reboot = s.reboot;
        Ok(Some(plan))
    }

    /// Checks that `agents` are this scenario's agents (same ids and layers).
    pub fn check_snapshot(&self, agents: &[AgentState]) -> Result<(), ScenarioError> {
        let mut problems = Vec::new();
        let mut want: Vec<(AgentId, Layer)> = self.agents.iter().map(|a| (a.id, a.layer)).collect();
        let mut got: Vec<(AgentId, Layer)> = agents.iter().map(|a| (a.id, a.layer)).collect();
        want.sort();
        got.sort();
        if want != got {
            problems.push(format!("snapshot agents {got:?} do not match the scenario's {want:?}"));
        }
        if agents.iter().any(|a| a.position.iter().any(|v| !v.is_finite())) {
            problems.push("snapshot has non-finite positions".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(problems))
        }
    }
}

/// Agent positions at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub agents: Vec<AgentState>,
}

impl Snapshot {
    pub fn from_trace(trace: &GameTrace, step: usize) -> Option<Self> {
        let rec = trace.steps.get(step)?;
        let agents = trace
            .ids
            .iter()
            .zip(&trace.layers)
            .zip(&rec.positions)
            .map(|((&id, &layer), &position)| AgentState { id, layer, position })
            .collect();
        Some(Snapshot { step: Some(step), agents })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        write_file(path.as_ref(), &serde_json::to_string_pretty(self).expect("snapshot serializes"))
    }

    /// Every agent moved by `offset`.
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        let d = crate::Position::from(offset);
        let agents = self.agents.iter().map(|a| AgentState { position: a.position + d, ..a.clone() }).collect();
        Snapshot { step: self.step, agents }
    }
}

/// Command-line overrides for [`run_scenario`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
}

impl ScenarioConfig {
    pub fn with_overrides(&self, o: &RunOverrides) -> ScenarioConfig {
        let mut c = self.clone();
        if let Some(s) = o.seed {
            c.engine.seed = s;
        }
        if let Some(m) = o.max_steps {
            c.engine.max_steps = m;
        }
        c
    }
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub converged: bool,
    pub steps: usize,
    pub final_nominal_lambda2: f64,
    pub final_worst_lambda2: f64,
    pub final_worst_attack: Vec<Link>,
    pub final_positions: Vec<AgentState>,
    pub spoof_target: Option<AgentId>,
    pub equilibrium: EquilibriumReport,
}

/// Runs a scenario and writes its artifacts into `out_dir`.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path, overrides: &RunOverrides) -> Result<(GameTrace, RunSummary), ScenarioError> {
    let cfg = config.with_overrides(overrides);
    fs::create_dir_all(out_dir).map_err(|source| ScenarioError::Output { path: out_dir.to_path_buf(), source })?;
    let spoof = cfg.spoofing_plan()?;
    let trace = cfg.run(spoof.as_ref())?;

    write_file(&out_dir.join("trace.csv"), &trace_csv(&trace))?;
    let mut log = String::new();
    for e in &trace.events {
        let _ = writeln!(log, "{e}");
    }
    write_file(&out_dir.join("events.log"), &log)?;

    let final_agents = trace.final_agents();
    Snapshot { step: Some(trace.steps_used), agents: final_agents.clone() }.save(out_dir.join("snapshot.json"))?;
    let equilibrium = equilibrium_report(&cfg, &final_agents)?;
    let last = trace.last();
    let summary = RunSummary {
        scenario: cfg.name.clone(),
        seed: cfg.engine.seed,
        converged: trace.converged,
        steps: trace.steps_used,
        final_nominal_lambda2: last.nominal_lambda2,
        final_worst_lambda2: last.worst_lambda2,
        final_worst_attack: last.worst_attack.removed.clone(),
        final_positions: final_agents,
        spoof_target: spoof.map(|s| s.target),
        equilibrium,
    };
    write_file(&out_dir.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok((trace, summary))
}

/// Meta-equilibrium check of `agents` under the scenario's parameters.
pub fn equilibrium_report(cfg: &ScenarioConfig, agents: &[AgentState]) -> Result<EquilibriumReport, ScenarioError> {
    cfg.check_snapshot(agents)?;
    Ok(check_meta_equilibrium(
        agents,
        &cfg.player_params(Player::P1),
        &cfg.player_params(Player::P2),
        &cfg.weights,
        &cfg.attack_model(),
        &cfg.assembly_options(),
        &SolverSettings::default(),
        EQUILIBRIUM_TOL,
    )?)
}

/// Exact and greedy jamming plans against a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackPlans {
    pub nominal_lambda2: f64,
    pub candidates: Vec<Link>,
    pub budget_psi: usize,
    pub worst_case: JammingPlan,
    pub greedy: JammingPlan,
}

pub fn attack_plans(cfg: &ScenarioConfig, agents: &[AgentState]) -> Result<AttackPlans, ScenarioError> {
    cfg.check_snapshot(agents)?;
    let g = build_graph(agents, &cfg.weights, &BTreeSet::new()).map_err(GameError::from)?;
    let model = cfg.attack_model();
    let space = model.action_space(&g);
    Ok(AttackPlans {
        nominal_lambda2: lambda2(&g),
        candidates: space.candidate_links.iter().copied().collect(),
        budget_psi: space.budget_psi,
        worst_case: model.worst_case(&g),
        greedy: model.greedy(&g),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), ScenarioError> {
    let mut f = fs::File::create(path).map_err(|source| ScenarioError::Output { path: path.to_path_buf(), source })?;
    f.write_all(contents.as_bytes()).map_err(|source| ScenarioError::Output { path: path.to_path_buf(), source })
}

pub fn trace_csv_header(ids: &[AgentId]) -> String {
    let mut h = String::from("step");
    for id in ids {
        let _ = write!(h, ",x_{id},y_{id},z_{id}");
    }
    h.push_str(",nominal_lambda2,worst_lambda2,acting,spoofed,worst_attack");
    h
}

pub fn trace_csv(trace: &GameTrace) -> String {
    let mut out = trace_csv_header(&trace.ids);
    out.push('\n');
    for s in &trace.steps {
        let _ = write!(out, "{}", s.step);
        for p in &s.positions {
            let _ = write!(out, ",{},{},{}", p[0], p[1], p[2]);
        }
        let acting = s.acting();
        let acting = match acting.as_slice() {
            [] => "none".to_string(),
            list => list.iter().map(|p| format!("{p:?}")).collect::<Vec<_>>().join("+"),
        };
        let attack: Vec<String> = s.worst_attack.removed.iter().map(|l| format!("{}-{}", l.lo(), l.hi())).collect();
        let _ = writeln!(out, ",{},{},{},{},{}", s.nominal_lambda2, s.worst_lambda2, acting, u8::from(s.spoofed), attack.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse_and_round_trip() {
        for (name, _) in FIXTURES {
            let cfg = fixture(name).unwrap();
            assert_eq!(&cfg.name, name);
            let again = parse_scenario(&cfg.to_toml()).unwrap();
            assert_eq!(again, cfg);
        }
    }

    #[test]
    fn base_case_matches_published_setup() {
        let cfg = fixture("base_case").unwrap();
        let pos: Vec<[f64; 3]> = cfg.agents.iter().map(|a| a.position).collect();
        assert_eq!(pos[0], [1.0, 3.0, 1.2]);
        assert_eq!(pos[1], [2.0, 3.0, 1.2]);
        assert_eq!(pos[2..], [[0.0, 0.0, 0.0], [0.0, 1.5, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, -1.5, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(cfg.players.p1.d_max, 0.2);
        assert_eq!(cfg.players.p2.period, 2 * cfg.players.p1.period);
        assert_eq!(cfg.attack.budget_psi, 1);
    }

    #[test]
    fn missing_field_is_named() {
        let text = fixture("base_case").unwrap().to_toml().replace("delta = 0.1\n", "");
        match parse_scenario(&text) {
            Err(ScenarioError::Validation(v)) => assert!(v.iter().any(|m| m.contains("weights.delta")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_problem_is_listed() {
        let mut cfg = fixture("base_case").unwrap();
        cfg.players.p1.d_max = -1.0;
        cfg.attack.secure_links = vec![Link::new(3, 40)];
        cfg.agents[0].id = 9;
        match parse_scenario(&cfg.to_toml()) {
            Err(ScenarioError::Validation(v)) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_scenario("schema_version = 1\nname = \n").unwrap_err();
        assert!(matches!(&err, ScenarioError::Parse(m) if m.contains("line 2")), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = fixture("base_case").unwrap().to_toml().replace("[engine]\n", "[engine]\nkapa = 1.0\n");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn spoof_target_forms() {
        for (src, want) in [("7", SpoofTarget::Agent(7)), ("\"max_degree\"", SpoofTarget::MaxDegree)] {
            let mut t = fixture("spoof_early").unwrap().to_toml();
            let start = t.find("target = ").unwrap();
            let end = start + t[start..].find('\n').unwrap();
            t.replace_range(start..end, &format!("target = {src}"));
            assert_eq!(parse_scenario(&t).unwrap().spoofing.unwrap().target, want);
        }
    }

    #[test]
    fn csv_header_layout() {
        assert_eq!(trace_csv_header(&[1, 2]), "step,x_1,y_1,z_1,x_2,y_2,z_2,nominal_lambda2,worst_lambda2,acting,spoofed,worst_attack");
    }
}
