//! First-order motion model.
//!
//! Over one update, `Z_ij(k+1) ≈ 2 (x_i(k+1) - x_j(k+1))ᵀ (x_i(k) - x_j(k)) - Z_ij(k)`
//! (Euler step on `d/dt ||x_ij||²`), and each link weight is linearized in
//! the squared distance. Both are affine in the decision variables, which is
//! what makes the per-turn program convex.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::graph::{weight_gradient, AgentState, ArgConvention, GraphError, Link, WeightParams};
use crate::Position;

/// Symmetric hollow matrix of squared distances, nodes ordered by id.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceState {
    pub z: DMatrix<f64>,
}

impl DistanceState {
    pub fn from_agents(agents: &[AgentState]) -> Self {
        let sorted = sorted_agents(agents);
        let n = sorted.len();
        let z = DMatrix::from_fn(n, n, |i, j| (sorted[i].position - sorted[j].position).norm_squared());
        DistanceState { z }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }
}

pub(crate) fn sorted_agents(agents: &[AgentState]) -> Vec<&AgentState> {
    let mut v: Vec<&AgentState> = agents.iter().collect();
    v.sort_by_key(|a| a.id);
    v
}

/// `2 (x_new_i - x_new_j)ᵀ (x_old_i - x_old_j) - (Z_new + Z_old)`.
pub fn coupling_residual(
    x_new_i: &Position,
    x_new_j: &Position,
    x_old_i: &Position,
    x_old_j: &Position,
    z_new_ij: f64,
    z_old_ij: f64,
) -> f64 {
    2.0 * (x_new_i - x_new_j).dot(&(x_old_i - x_old_j)) - (z_new_ij + z_old_ij)
}

/// `w_old + grad (Z_new - Z_old)` clamped to `[0, 1]`.
pub fn predicted_weight(w_old: f64, grad: f64, z_new_ij: f64, z_old_ij: f64) -> f64 {
    predicted_weight_unclamped(w_old, grad, z_new_ij, z_old_ij).clamp(0.0, 1.0)
}

pub fn predicted_weight_unclamped(w_old: f64, grad: f64, z_new_ij: f64, z_old_ij: f64) -> f64 {
    w_old + grad * (z_new_ij - z_old_ij)
}

/// Derivative of the link weight with respect to squared distance.
///
/// Under the distance convention this is `f'(d) / (2d)`.
pub fn weight_gradient_sq(z: f64, params: &WeightParams) -> f64 {
    match params.arg_convention {
        ArgConvention::SquaredDistance => weight_gradient(z, params),
        ArgConvention::Distance => {
            let d = z.max(0.0).sqrt();
            if d == 0.0 {
                0.0
            } else {
                weight_gradient(d, params) / (2.0 * d)
            }
        }
    }
}

/// One linearized link: `w(Z) = w0 + slope (Z_ij - z0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub i: usize,
    pub j: usize,
    pub w0: f64,
    pub slope: f64,
    pub z0: f64,
}

/// Laplacian of the predicted weights as an affine function of `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedLaplacian {
    pub n: usize,
    /// Pairs whose weight or slope is nonzero, node-index based.
    pub links: Vec<LinkModel>,
}

impl LinearizedLaplacian {
    /// Linearizes every pair around `agents_old`; pairs in `removed_links`
    /// and pairs with zero weight and zero slope are dropped.
    pub fn new(agents_old: &[AgentState], params: &WeightParams, removed_links: &BTreeSet<Link>) -> Self {
        let sorted = sorted_agents(agents_old);
        let n = sorted.len();
        let mut links = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if removed_links.contains(&Link::new(sorted[i].id, sorted[j].id)) {
                    continue;
                }
                let a = &sorted[i].position;
                let b = &sorted[j].position;
                let z0 = (a - b).norm_squared();
                let w0 = params.link_weight(a, b);
                let slope = weight_gradient_sq(z0, params);
                if w0 != 0.0 || slope != 0.0 {
                    links.push(LinkModel { i, j, w0, slope, z0 });
                }
            }
        }
        LinearizedLaplacian { n, links }
    }

    /// Same model with the links between the given node indices dropped.
    pub fn without(&self, removed: &[(usize, usize)]) -> Self {
        let links = self
            .links
            .iter()
            .filter(|m| !removed.iter().any(|&(a, b)| (a.min(b), a.max(b)) == (m.i, m.j)))
            .copied()
            .collect();
        LinearizedLaplacian { n: self.n, links }
    }

    /// Evaluates the (unclamped) predicted Laplacian at `z`.
    pub fn eval(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for m in &self.links {
            let w = predicted_weight_unclamped(m.w0, m.slope, z[(m.i, m.j)], m.z0);
            l[(m.i, m.j)] -= w;
            l[(m.j, m.i)] -= w;
            l[(m.i, m.i)] += w;
            l[(m.j, m.j)] += w;
        }
        l
    }
}

/// Predicted Laplacian at `z_new`, affine in its entries (no clamping).
pub fn predicted_laplacian(
    agents_old: &[AgentState],
    z_new: &DistanceState,
    params: &WeightParams,
    removed_links: &BTreeSet<Link>,
) -> Result<DMatrix<f64>, GraphError> {
    let sorted = sorted_agents(agents_old);
    for pair in sorted.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(GraphError::DuplicateAgentId(pair[0].id));
        }
    }
    Ok(LinearizedLaplacian::new(agents_old, params, removed_links).eval(&z_new.z))
}
