//! Modeling layer: affine expressions over a flat variable vector and the
//! constraint blocks of a conic program. The objective is always
//! "maximize one designated scalar variable".

use nalgebra::{DMatrix, DVector};

use crate::graph::{AgentId, Link};
use crate::Position;

/// `constant + Σ coeff · x[var]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr { constant: c, terms: Vec::new() }
    }

    pub fn var(k: usize) -> Self {
        AffineExpr { constant: 0.0, terms: vec![(k, 1.0)] }
    }

    pub fn term(mut self, k: usize, coeff: f64) -> Self {
        if coeff != 0.0 {
            self.terms.push((k, coeff));
        }
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.constant + self.terms.iter().map(|&(k, a)| a * x[k]).sum::<f64>()
    }
}

/// `expr == 0` (equality) or `expr >= 0` (inequality).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraint {
    pub expr: AffineExpr,
    pub label: String,
}

/// `|| rows(x) ||₂ <= bound(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SocBlock {
    pub bound: AffineExpr,
    pub rows: Vec<AffineExpr>,
    pub label: String,
}

/// `constant + Σ x[k] · coeff_k ⪰ 0`, all matrices symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
    pub label: String,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, a) in &self.coeffs {
            m += a * x[*k];
        }
        m
    }
}

/// Where each agent's coordinates and each `Z_ij` live in the variable vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerLayout {
    /// All agents in ascending id order.
    pub ids: Vec<AgentId>,
    pub base_positions: Vec<Position>,
    /// Variable index per coordinate; `None` keeps the base value.
    pub coords: Vec<[Option<usize>; 3]>,
    /// Ids whose positions are decision variables.
    pub moving: Vec<AgentId>,
    /// Attack scenarios with one LMI each, in block order.
    pub scenarios: Vec<Vec<Link>>,
    z_vars: Vec<usize>,
}

impl PlayerLayout {
    pub(crate) fn new(
        ids: Vec<AgentId>,
        base_positions: Vec<Position>,
        coords: Vec<[Option<usize>; 3]>,
        moving: Vec<AgentId>,
        z_vars: Vec<usize>,
    ) -> Self {
        PlayerLayout { ids, base_positions, coords, moving, scenarios: Vec::new(), z_vars }
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    /// Variable holding `Z_ij` (node indices, order-free, diagonal included).
    pub fn z_var(&self, i: usize, j: usize) -> usize {
        let (a, b) = (i.min(j), i.max(j));
        self.z_vars[Self::z_offset(self.n(), a, b)]
    }

    /// Row-major upper triangle with diagonal.
    pub(crate) fn z_offset(n: usize, a: usize, b: usize) -> usize {
        a * n - a * (a + 1) / 2 + b
    }

    pub fn positions(&self, x: &DVector<f64>) -> Vec<Position> {
        self.base_positions
            .iter()
            .zip(&self.coords)
            .map(|(p, c)| {
                let mut q = *p;
                for d in 0..3 {
                    if let Some(k) = c[d] {
                        q[d] = x[k];
                    }
                }
                q
            })
            .collect()
    }

    pub fn z_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| x[self.z_var(i, j)])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConicProgram {
    pub n_vars: usize,
    /// The variable being maximized.
    pub alpha: usize,
    pub lin_eq: Vec<LinearConstraint>,
    pub lin_ineq: Vec<LinearConstraint>,
    pub soc_blocks: Vec<SocBlock>,
    pub lmi_blocks: Vec<LmiBlock>,
    /// A point that is feasible, possibly on the boundary; enables facial reduction.
    pub reference: Option<DVector<f64>>,
    pub layout: Option<PlayerLayout>,
}

impl ConicProgram {
    pub fn new(n_vars: usize, alpha: usize) -> Self {
        ConicProgram {
            n_vars,
            alpha,
            lin_eq: Vec::new(),
            lin_ineq: Vec::new(),
            soc_blocks: Vec::new(),
            lmi_blocks: Vec::new(),
            reference: None,
            layout: None,
        }
    }

    pub fn add_eq(&mut self, expr: AffineExpr, label: impl Into<String>) {
        self.lin_eq.push(LinearConstraint { expr, label: label.into() });
    }

    pub fn add_ineq(&mut self, expr: AffineExpr, label: impl Into<String>) {
        self.lin_ineq.push(LinearConstraint { expr, label: label.into() });
    }

    pub fn add_soc(&mut self, bound: AffineExpr, rows: Vec<AffineExpr>, label: impl Into<String>) {
        self.soc_blocks.push(SocBlock { bound, rows, label: label.into() });
    }

    pub fn add_lmi(&mut self, constant: DMatrix<f64>, coeffs: Vec<(usize, DMatrix<f64>)>, label: impl Into<String>) {
        self.lmi_blocks.push(LmiBlock { constant, coeffs, label: label.into() });
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        for c in &self.lin_eq {
            v = v.max(c.expr.eval(x).abs());
        }
        for c in &self.lin_ineq {
            v = v.max(-c.expr.eval(x));
        }
        for s in &self.soc_blocks {
            let nrm = s.rows.iter().map(|r| r.eval(x).powi(2)).sum::<f64>().sqrt();
            v = v.max(nrm - s.bound.eval(x));
        }
        for b in &self.lmi_blocks {
            v = v.max(-crate::graph::min_eigenvalue(&b.eval(x)));
        }
        v
    }
}
