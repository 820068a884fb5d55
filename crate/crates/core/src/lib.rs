//! Secure formation of two-layer mobile robot networks.
//!
//! Two network operators each own one layer of robots and take turns
//! repositioning them. Every move maximizes the algebraic connectivity of
//! the combined network *after* the worst link-jamming attack the operator
//! anticipates. The per-turn decision is a small semidefinite program solved
//! by the interior-point solver in [`sdp::solver`].
//!
//! Module map:
//!
//! * [`graph`]: link weights, Laplacians, algebraic connectivity, link removal.
//! * [`attack`]: exhaustive and greedy jamming, GPS spoofing.
//! * [`dynamics`]: first-order prediction of squared distances and weights.
//! * [`sdp`]: per-player conic program assembly, solving and verification.
//! * [`game`]: the alternating update loop and equilibrium checks.
//! * [`scenario`]: scenario files, bundled fixtures, trace export.

pub mod attack;
pub mod dynamics;
pub mod game;
pub mod graph;
pub mod scenario;
pub mod sdp;

pub use attack::{AttackActionSpace, JammingPlan, SpoofingPlan};
pub use game::{EngineParams, GameTrace};
pub use graph::{AgentId, AgentState, ArgConvention, CommGraph, Layer, Link, SpectralResult, WeightParams};
pub use sdp::{ConicProgram, ConicSolution, PlayerParams, SolveStatus};

/// 3-D position in meters.
pub type Position = nalgebra::Vector3<f64>;
