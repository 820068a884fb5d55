//! Positions to weighted communication graph.
//!
//! Link strength decays with separation according to a clamped exponential
//! weight function. The weighted Laplacian `L = D - A` of the whole two-layer
//! network carries every quantity the rest of the crate cares about, most
//! importantly its second-smallest eigenvalue (the algebraic connectivity).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Position;

/// Robot identifier. Layer 1 robots are numbered first.
pub type AgentId = usize;

/// λ₂ values below this are reported as exactly zero (disconnected).
pub const DISCONNECTED_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("agent id {0} appears more than once")]
    DuplicateAgentId(AgentId),
    #[error("agent id {0} is not part of the graph")]
    UnknownAgent(AgentId),
    #[error("link {0} is not present (zero weight)")]
    LinkNotPresent(Link),
    #[error("invalid weight parameters: {0}")]
    InvalidWeightParams(String),
}

/// Unordered pair of agent ids, stored as `(min, max)`.
///
/// The derived ordering is lexicographic on `(min, max)`, which is the
/// tie-break rule used everywhere in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[AgentId; 2]", from = "[AgentId; 2]")]
pub struct Link(AgentId, AgentId);

impl Link {
    pub fn new(a: AgentId, b: AgentId) -> Self {
        if a <= b {
            Link(a, b)
        } else {
            Link(b, a)
        }
    }

    pub fn lo(&self) -> AgentId {
        self.0
    }

    pub fn hi(&self) -> AgentId {
        self.1
    }

    pub fn touches(&self, id: AgentId) -> bool {
        self.0 == id || self.1 == id
    }
}

impl From<[AgentId; 2]> for Link {
    fn from(v: [AgentId; 2]) -> Self {
        Link::new(v[0], v[1])
    }
}

impl From<Link> for [AgentId; 2] {
    fn from(l: Link) -> Self {
        [l.0, l.1]
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Layer {
    L1,
    L2,
}

impl Layer {
    pub fn other(self) -> Layer {
        match self {
            Layer::L1 => Layer::L2,
            Layer::L2 => Layer::L1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub layer: Layer,
    pub position: Position,
}

impl AgentState {
    pub fn new(id: AgentId, layer: Layer, position: [f64; 3]) -> Self {
        AgentState { id, layer, position: Position::from(position) }
    }
}

/// What the weight function is evaluated on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgConvention {
    #[default]
    SquaredDistance,
    Distance,
}

/// Parameters of the clamped exponential link weight.
///
/// `weight(a) = 1` for `a <= r_sat`, `delta^((r_sat - a) / (r_sat - r_cut))`
/// in between, and `0` for `a >= r_cut`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub delta: f64,
    pub r_sat: f64,
    pub r_cut: f64,
    #[serde(default)]
    pub arg_convention: ArgConvention,
}

impl WeightParams {
    pub fn new(delta: f64, r_sat: f64, r_cut: f64, arg_convention: ArgConvention) -> Result<Self, GraphError> {
        let p = WeightParams { delta, r_sat, r_cut, arg_convention };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(GraphError::InvalidWeightParams(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.r_sat > 0.0 && self.r_sat < self.r_cut && self.r_cut.is_finite()) {
            return Err(GraphError::InvalidWeightParams(format!(
                "need 0 < r_sat < r_cut, got r_sat={} r_cut={}",
                self.r_sat, self.r_cut
            )));
        }
        Ok(())
    }

    /// Weight-function argument for two positions under the configured convention.
    pub fn argument(&self, a: &Position, b: &Position) -> f64 {
        let sq = (a - b).norm_squared();
        match self.arg_convention {
            ArgConvention::SquaredDistance => sq,
            ArgConvention::Distance => sq.sqrt(),
        }
    }

    /// Link weight between two positions.
    pub fn link_weight(&self, a: &Position, b: &Position) -> f64 {
        weight(self.argument(a, b), self)
    }
}

pub fn weight(arg: f64, params: &WeightParams) -> f64 {
    if arg <= params.r_sat {
        1.0
    } else if arg >= params.r_cut {
        0.0
    } else {
        params.delta.powf((params.r_sat - arg) / (params.r_sat - params.r_cut))
    }
}

/// Derivative of [`weight`] with respect to its argument; zero on the
/// plateau, beyond the cutoff, and at both kinks.
pub fn weight_gradient(arg: f64, params: &WeightParams) -> f64 {
    if arg <= params.r_sat || arg >= params.r_cut {
        0.0
    } else {
        weight(arg, params) * params.delta.ln() / (params.r_cut - params.r_sat)
    }
}

/// Weighted undirected graph over agents, nodes ordered by ascending id.
#[derive(Clone, Debug, PartialEq)]
pub struct CommGraph {
    ids: Vec<AgentId>,
    layers: Vec<Layer>,
    index: BTreeMap<AgentId, usize>,
    pub weights: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    /// Number of agents in layer 1 and layer 2.
    pub layer_partition: (usize, usize),
}

impl CommGraph {
    /// Builds a graph directly from a symmetric weight matrix (diagonal ignored).
    pub fn from_weights(ids: Vec<AgentId>, layers: Vec<Layer>, weights: DMatrix<f64>) -> Result<Self, GraphError> {
        let n = ids.len();
        assert_eq!(layers.len(), n, "one layer per id");
        assert!(weights.nrows() == n && weights.ncols() == n, "weight matrix must be n x n");
        let mut index = BTreeMap::new();
        for (k, &id) in ids.iter().enumerate() {
            if index.insert(id, k).is_some() {
                return Err(GraphError::DuplicateAgentId(id));
            }
        }
        let mut w = weights;
        for i in 0..n {
            w[(i, i)] = 0.0;
            for j in (i + 1)..n {
                let v = 0.5 * (w[(i, j)] + w[(j, i)]);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        let laplacian = laplacian_from_weights(&w);
        let n1 = layers.iter().filter(|l| **l == Layer::L1).count();
        Ok(CommGraph { ids, layers, index, weights: w, laplacian, layer_partition: (n1, n - n1) })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[AgentId] {
        &self.ids
    }

    pub fn layer_of(&self, id: AgentId) -> Option<Layer> {
        self.index.get(&id).map(|&k| self.layers[k])
    }

    pub fn index_of(&self, id: AgentId) -> Result<usize, GraphError> {
        self.index.get(&id).copied().ok_or(GraphError::UnknownAgent(id))
    }

    pub fn weight(&self, link: Link) -> Result<f64, GraphError> {
        let i = self.index_of(link.lo())?;
        let j = self.index_of(link.hi())?;
        Ok(self.weights[(i, j)])
    }

    /// Links with strictly positive weight, in lexicographic order.
    pub fn links(&self) -> Vec<Link> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.weights[(i, j)] > 0.0 {
                    out.push(Link::new(self.ids[i], self.ids[j]));
                }
            }
        }
        out.sort();
        out
    }

    /// Weighted degree `Σ_j w_ij` of every agent, in node order.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.weights.row(i).sum()).collect()
    }

    /// Copy of the graph with the given links set to zero weight.
    pub fn without_links<'a>(&self, links: impl IntoIterator<Item = &'a Link>) -> Result<CommGraph, GraphError> {
        let mut w = self.weights.clone();
        for l in links {
            let i = self.index_of(l.lo())?;
            let j = self.index_of(l.hi())?;
            w[(i, j)] = 0.0;
            w[(j, i)] = 0.0;
        }
        let laplacian = laplacian_from_weights(&w);
        Ok(CommGraph { weights: w, laplacian, ..self.clone() })
    }
}

fn laplacian_from_weights(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        l[(i, i)] = w.row(i).sum() - w[(i, i)];
    }
    l
}

/// Builds the communication graph of a configuration.
///
/// Weight of every unordered pair comes from `params`, except pairs listed
/// in `removed_links`, which get weight zero.
pub fn build_graph(
    agents: &[AgentState],
    params: &WeightParams,
    removed_links: &BTreeSet<Link>,
) -> Result<CommGraph, GraphError> {
    let mut sorted: Vec<&AgentState> = agents.iter().collect();
    sorted.sort_by_key(|a| a.id);
    for pair in sorted.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(GraphError::DuplicateAgentId(pair[0].id));
        }
    }
    let n = sorted.len();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if removed_links.contains(&Link::new(sorted[i].id, sorted[j].id)) {
                continue;
            }
            let v = params.link_weight(&sorted[i].position, &sorted[j].position);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    let ids = sorted.iter().map(|a| a.id).collect();
    let layers = sorted.iter().map(|a| a.layer).collect();
    CommGraph::from_weights(ids, layers, w)
}

/// Second-smallest Laplacian eigenvalue with its eigenvector.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult {
    pub lambda2: f64,
    /// Unit vector orthogonal to the all-ones vector.
    pub fiedler: DVector<f64>,
    /// All Laplacian eigenvalues in ascending order, starting with the 0 for `1`.
    pub full_spectrum: Vec<f64>,
}

impl SpectralResult {
    pub fn is_connected(&self) -> bool {
        self.lambda2 > 0.0
    }
}

/// Orthonormal basis of the complement of the all-ones vector (Helmert basis).
pub fn ones_complement_basis(n: usize) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(n, n.saturating_sub(1));
    for k in 1..n {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            v[(i, k - 1)] = 1.0 / norm;
        }
        v[(k, k - 1)] = -(k as f64) / norm;
    }
    v
}

/// Sorted eigenpairs of a symmetric matrix, ascending.
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = DMatrix::from_columns(&order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<_>>());
    (vals, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// λ₂ via the restriction of `L` to `1⊥`, which is the Courant–Fisher
/// characterization made concrete: the smallest eigenvalue of `VᵀLV`.
pub fn algebraic_connectivity(g: &CommGraph) -> SpectralResult {
    let n = g.n();
    if n < 2 {
        return SpectralResult { lambda2: 0.0, fiedler: DVector::zeros(n), full_spectrum: vec![0.0; n] };
    }
    let basis = ones_complement_basis(n);
    let reduced = basis.transpose() * &g.laplacian * &basis;
    let (vals, vecs) = sorted_eigen(&reduced);
    let mut fiedler: DVector<f64> = &basis * vecs.column(0);
    fiedler /= fiedler.norm();
    canonical_sign(&mut fiedler);
    let mut spectrum = Vec::with_capacity(n);
    spectrum.push(0.0);
    spectrum.extend(vals.iter().copied());
    let lambda2 = if vals[0] < DISCONNECTED_EPS { 0.0 } else { vals[0] };
    SpectralResult { lambda2, fiedler, full_spectrum: spectrum }
}

/// Convenience wrapper returning only λ₂.
pub fn lambda2(g: &CommGraph) -> f64 {
    algebraic_connectivity(g).lambda2
}

// Largest-magnitude entry positive, lowest index on ties.
fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Removes one link through the rank-one update
/// `L - (e_i - e_j)(w_ij e_i - w_ij e_j)ᵀ`.
pub fn remove_link_laplacian(g: &CommGraph, i: AgentId, j: AgentId) -> Result<CommGraph, GraphError> {
    let link = Link::new(i, j);
    let a = g.index_of(i)?;
    let b = g.index_of(j)?;
    let w = g.weights[(a, b)];
    if a == b || w <= 0.0 {
        return Err(GraphError::LinkNotPresent(link));
    }
    let n = g.n();
    let mut diff = DVector::zeros(n);
    diff[a] = 1.0;
    diff[b] = -1.0;
    let scaled = &diff * w;
    let mut out = g.clone();
    out.laplacian -= &diff * scaled.transpose();
    out.weights[(a, b)] = 0.0;
    out.weights[(b, a)] = 0.0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> WeightParams {
        WeightParams::new(0.1, 2.0, 6.0, ArgConvention::SquaredDistance).unwrap()
    }

    fn graph_from(n: usize, edges: &[(usize, usize, f64)]) -> CommGraph {
        let mut w = DMatrix::zeros(n, n);
        for &(i, j, v) in edges {
            w[(i - 1, j - 1)] = v;
            w[(j - 1, i - 1)] = v;
        }
        CommGraph::from_weights((1..=n).collect(), vec![Layer::L2; n], w).unwrap()
    }

    #[test]
    fn weight_examples() {
        let p = params();
        assert_eq!(weight(2.0, &p), 1.0);
        assert_eq!(weight(10.0, &p), 0.0);
        assert_abs_diff_eq!(weight(4.0, &p), 0.1f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(weight(4.0, &p), 0.31623, epsilon = 1e-5);
    }

    #[test]
    fn gradient_examples() {
        let p = params();
        assert_eq!(weight_gradient(1.0, &p), 0.0);
        assert_eq!(weight_gradient(8.0, &p), 0.0);
        assert_eq!(weight_gradient(2.0, &p), 0.0);
        assert_eq!(weight_gradient(6.0, &p), 0.0);
        let h = 1e-6;
        let fd = (weight(4.0 + h, &p) - weight(4.0 - h, &p)) / (2.0 * h);
        assert_abs_diff_eq!(weight_gradient(4.0, &p), fd, epsilon = 1e-6);
        assert_abs_diff_eq!(weight_gradient(4.0, &p), -0.18204, epsilon = 1e-5);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(WeightParams::new(1.5, 2.0, 6.0, ArgConvention::Distance).is_err());
        assert!(WeightParams::new(0.1, 6.0, 2.0, ArgConvention::Distance).is_err());
        assert!(WeightParams::new(0.1, 0.0, 2.0, ArgConvention::Distance).is_err());
    }

    #[test]
    fn two_agent_laplacian() {
        let p = params();
        let agents = [AgentState::new(1, Layer::L1, [0.0, 0.0, 0.0]), AgentState::new(2, Layer::L2, [2.0, 0.0, 0.0])];
        let g = build_graph(&agents, &p, &BTreeSet::new()).unwrap();
        let w = weight(4.0, &p);
        assert_abs_diff_eq!(g.laplacian, DMatrix::from_row_slice(2, 2, &[w, -w, -w, w]), epsilon = 1e-15);
        assert_eq!(g.layer_partition, (1, 1));
    }

    #[test]
    fn collinear_three_agents() {
        // Spacing 1.2: squared distance 1.44 saturates, 5.76 is below the cutoff,
        // so use the distance convention with a cutoff at 2.
        let p = WeightParams::new(0.1, 1.5, 2.0, ArgConvention::Distance).unwrap();
        let agents = [
            AgentState::new(1, Layer::L2, [0.0, 0.0, 0.0]),
            AgentState::new(2, Layer::L2, [1.2, 0.0, 0.0]),
            AgentState::new(3, Layer::L2, [2.4, 0.0, 0.0]),
        ];
        let g = build_graph(&agents, &p, &BTreeSet::new()).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_abs_diff_eq!(g.laplacian, expect, epsilon = 1e-15);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let agents = [AgentState::new(1, Layer::L1, [0.0; 3]), AgentState::new(1, Layer::L2, [1.0, 0.0, 0.0])];
        assert_eq!(build_graph(&agents, &params(), &BTreeSet::new()), Err(GraphError::DuplicateAgentId(1)));
    }

    #[test]
    fn removed_links_have_zero_weight() {
        let agents = [
            AgentState::new(1, Layer::L1, [0.0; 3]),
            AgentState::new(2, Layer::L1, [1.0, 0.0, 0.0]),
            AgentState::new(3, Layer::L2, [0.0, 1.0, 0.0]),
        ];
        let removed: BTreeSet<Link> = [Link::new(3, 1)].into_iter().collect();
        let g = build_graph(&agents, &params(), &removed).unwrap();
        assert_eq!(g.weight(Link::new(1, 3)).unwrap(), 0.0);
        assert_eq!(g.weight(Link::new(1, 2)).unwrap(), 1.0);
    }

    #[test]
    fn spectral_examples() {
        let k2 = graph_from(2, &[(1, 2, 1.0)]);
        assert_abs_diff_eq!(lambda2(&k2), 2.0, epsilon = 1e-12);
        let isolated = graph_from(3, &[(1, 2, 1.0)]);
        assert_eq!(lambda2(&isolated), 0.0);
        let path = graph_from(3, &[(1, 2, 1.0), (2, 3, 1.0)]);
        let s = algebraic_connectivity(&path);
        assert_abs_diff_eq!(s.lambda2, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.full_spectrum[2], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.fiedler.sum(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.fiedler.norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.fiedler[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fiedler_orthogonal_even_when_disconnected() {
        let g = graph_from(4, &[(1, 2, 1.0), (3, 4, 1.0)]);
        let s = algebraic_connectivity(&g);
        assert_eq!(s.lambda2, 0.0);
        assert_abs_diff_eq!(s.fiedler.sum(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.fiedler.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn link_removal_examples() {
        let k2 = graph_from(2, &[(1, 2, 1.0)]);
        let r = remove_link_laplacian(&k2, 1, 2).unwrap();
        assert_eq!(r.laplacian, DMatrix::zeros(2, 2));
        assert_eq!(lambda2(&r), 0.0);
        assert_eq!(remove_link_laplacian(&r, 1, 2), Err(GraphError::LinkNotPresent(Link::new(1, 2))));

        let path = graph_from(3, &[(1, 2, 1.0), (2, 3, 1.0)]);
        let r = remove_link_laplacian(&path, 2, 1).unwrap();
        assert_eq!(lambda2(&r), 0.0);
        let rebuilt = path.without_links(&[Link::new(1, 2)]).unwrap();
        assert_abs_diff_eq!(r.laplacian, rebuilt.laplacian, epsilon = 1e-15);
    }

    #[test]
    fn link_ordering_is_lexicographic() {
        let mut v = vec![Link::new(3, 2), Link::new(1, 4), Link::new(1, 2)];
        v.sort();
        assert_eq!(v, vec![Link::new(1, 2), Link::new(1, 4), Link::new(2, 3)]);
    }
}
