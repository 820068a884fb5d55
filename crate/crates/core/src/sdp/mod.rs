//! Per-turn decision problem of a network operator.
//!
//! Maximize `α` subject to `L̂ᵉ(Z) − αC ⪰ 0` for every anticipated attack
//! `e`, the distance-matrix condition `−CZC ⪰ 0`, the linearized coupling
//! between `Z` and the new positions, minimum separations and per-agent
//! displacement caps. [`player`] builds and post-processes the program,
//! [`solver`] solves it.

pub mod cones;
pub mod player;
mod presolve;
pub mod program;
pub mod solver;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::graph::Layer;
use crate::Position;

pub use player::{
    assemble_player_problem, best_response, verify_and_realize, AssemblyOptions, PlayerError, Realization, TurnOutcome,
};
pub use program::{AffineExpr, ConicProgram, LmiBlock, PlayerLayout, SocBlock};
pub use solver::{solve_conic, SolverError, SolverSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Player {
    P1,
    P2,
}

impl Player {
    pub fn layer(self) -> Layer {
        match self {
            Player::P1 => Layer::L1,
            Player::P2 => Layer::L2,
        }
    }
}

/// Constraints and schedule of one network operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerParams {
    pub player: Player,
    /// Minimum distance inside the operator's layer.
    pub rho_intra: f64,
    /// Minimum distance to the other layer.
    pub rho_cross: f64,
    /// Largest displacement per update.
    pub d_max: f64,
    /// Update period in engine steps.
    pub period: usize,
}

impl PlayerParams {
    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if !(self.rho_intra > 0.0 && self.rho_intra.is_finite()) {
            errs.push(format!("rho_intra must be positive, got {}", self.rho_intra));
        }
        if !(self.rho_cross > 0.0 && self.rho_cross.is_finite()) {
            errs.push(format!("rho_cross must be positive, got {}", self.rho_cross));
        }
        if !(self.d_max >= 0.0 && self.d_max.is_finite()) {
            errs.push(format!("d_max must be nonnegative, got {}", self.d_max));
        }
        if self.period == 0 {
            errs.push("period must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }

    /// Required separation between two layers' agents.
    pub fn rho(&self, a: Layer, b: Layer) -> f64 {
        if a == b {
            self.rho_intra
        } else {
            self.rho_cross
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub alpha: f64,
    /// Positions of every agent in id order (empty for programs without a layout).
    pub new_positions: Vec<Position>,
    pub z_opt: DMatrix<f64>,
    /// Primal residual, dual residual, duality gap.
    pub kkt_residuals: (f64, f64, f64),
    pub iterations: usize,
    /// Raw variable vector.
    pub x: DVector<f64>,
}

impl ConicSolution {
    pub(crate) fn from_x(
        prog: &ConicProgram,
        x: DVector<f64>,
        status: SolveStatus,
        kkt_residuals: (f64, f64, f64),
        iterations: usize,
    ) -> Self {
        let (new_positions, z_opt) = match &prog.layout {
            Some(l) => (l.positions(&x), l.z_matrix(&x)),
            None => (Vec::new(), DMatrix::zeros(0, 0)),
        };
        ConicSolution { status, alpha: x[prog.alpha], new_positions, z_opt, kkt_residuals, iterations, x }
    }

    pub(crate) fn infeasible(prog: &ConicProgram, iterations: usize) -> Self {
        ConicSolution {
            status: SolveStatus::Infeasible,
            alpha: f64::NAN,
            new_positions: Vec::new(),
            z_opt: DMatrix::zeros(0, 0),
            kkt_residuals: (f64::NAN, f64::NAN, f64::NAN),
            iterations,
            x: DVector::from_element(prog.n_vars, f64::NAN),
        }
    }
}
