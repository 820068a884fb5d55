//! Homogeneous self-dual primal-dual interior-point method.
//!
//! Solves `min cᵀy  s.t.  G y + s = h, s ∈ K` and its dual
//! `max -hᵀz  s.t.  Gᵀz + c = 0, z ∈ K` through the embedding
//!
//! ```text
//! Gᵀz + cτ = 0,   G y + s − hτ = 0,   κ + cᵀy + hᵀz = 0,
//! ```
//!
//! with Nesterov–Todd scaling and Mehrotra predictor-corrector steps. Each
//! Newton step needs two solves with the reduced matrix `Gᵀ W⁻¹W⁻ᵀ G`.

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::cones::{Cone, Scaling, ScalingOp};
use super::presolve::{presolve, Presolved, StandardForm};
use super::program::ConicProgram;
use super::{ConicSolution, SolveStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("objective is unbounded")]
    Unbounded,
    #[error("malformed program: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iters: usize,
    /// Iterations without primal-residual progress before declaring infeasibility.
    pub stall_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol_feas: 1e-7, tol_gap: 1e-6, max_iters: 200, stall_iters: 20 }
    }
}

/// Solves a conic program. Never panics on numerical trouble.
pub fn solve_conic(prog: &ConicProgram, settings: &SolverSettings) -> Result<ConicSolution, SolverError> {
    check_well_formed(prog)?;
    let sf = match presolve(prog) {
        Presolved::Reduced(sf) => sf,
        Presolved::Infeasible(msg) => {
            debug!("presolve: infeasible ({msg})");
            return Ok(ConicSolution::infeasible(prog, 0));
        }
        Presolved::Unbounded => return Err(SolverError::Unbounded),
    };
    debug!("presolve: {} vars -> {}, cone dim {}", prog.n_vars, sf.t.ncols(), sf.cone.dim());
    let out = if sf.t.ncols() == 0 {
        Ipm { status: SolveStatus::Optimal, y: DVector::zeros(0), pres: 0.0, dres: 0.0, gap: 0.0, iterations: 0 }
    } else {
        hsde(&sf, settings)?
    };
    if out.status == SolveStatus::Infeasible {
        return Ok(ConicSolution::infeasible(prog, out.iterations));
    }
    let x = sf.lift(&out.y);
    Ok(ConicSolution::from_x(prog, x, out.status, (out.pres, out.dres, out.gap), out.iterations))
}

fn check_well_formed(prog: &ConicProgram) -> Result<(), SolverError> {
    let n = prog.n_vars;
    if prog.alpha >= n {
        return Err(SolverError::Malformed(format!("objective variable {} out of range", prog.alpha)));
    }
    let bad_var = |k: usize| k >= n;
    let exprs = prog
        .lin_eq
        .iter()
        .chain(&prog.lin_ineq)
        .map(|c| &c.expr)
        .chain(prog.soc_blocks.iter().flat_map(|s| std::iter::once(&s.bound).chain(&s.rows)));
    for e in exprs {
        if e.terms.iter().any(|&(k, _)| bad_var(k)) {
            return Err(SolverError::Malformed("variable index out of range".into()));
        }
    }
    for b in &prog.lmi_blocks {
        let m = b.constant.nrows();
        if b.constant.ncols() != m {
            return Err(SolverError::Malformed(format!("LMI '{}' is not square", b.label)));
        }
        for (k, a) in &b.coeffs {
            if bad_var(*k) || a.nrows() != m || a.ncols() != m {
                return Err(SolverError::Malformed(format!("LMI '{}' has a bad coefficient", b.label)));
            }
        }
    }
    if let Some(r) = &prog.reference {
        if r.len() != n {
            return Err(SolverError::Malformed("reference point has the wrong length".into()));
        }
    }
    Ok(())
}

struct Ipm {
    status: SolveStatus,
    y: DVector<f64>,
    pres: f64,
    dres: f64,
    gap: f64,
    iterations: usize,
}

struct Kkt<'a> {
    cone: &'a Cone,
    scaling: &'a Scaling,
    g_hat: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> Kkt<'a> {
    fn factor(cone: &'a Cone, scaling: &'a Scaling, g: &DMatrix<f64>) -> Result<Self, SolverError> {
        let g_hat = scaling.apply_cols(cone, ScalingOp::WinvT, g);
        let chol = regularized_cholesky(g_hat.transpose() * &g_hat)?;
        Ok(Kkt { cone, scaling, g_hat, chol })
    }

    /// Solves `Gᵀdz = bx`, `G dx − WᵀW dz = bz`; returns `(dx, dz, W dz)`.
    fn solve(&self, bx: &DVector<f64>, bz: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let bzh = self.scaling.apply(self.cone, ScalingOp::WinvT, bz);
        let rhs = bx + self.g_hat.transpose() * &bzh;
        let dx = self.chol.solve(&rhs);
        let wdz = &self.g_hat * &dx - bzh;
        let dz = self.scaling.apply(self.cone, ScalingOp::Winv, &wdz);
        (dx, dz, wdz)
    }
}

fn regularized_cholesky(h: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, SolverError> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NumericalBreakdown("non-finite normal matrix".into()));
    }
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut m = h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += reg;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c);
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    Err(SolverError::NumericalBreakdown("normal matrix is not positive definite".into()))
}

fn hsde(sf: &StandardForm, settings: &SolverSettings) -> Result<Ipm, SolverError> {
    let (g, h, c, cone) = (&sf.g, &sf.h, &sf.c, &sf.cone);
    let nu = cone.degree() as f64;
    let e = cone.identity();
    let res_y0 = c.norm().max(1.0);
    let res_z0 = h.norm().max(1.0);

    // Least-squares starting point.
    let id_scaling = Scaling::new(cone, &e, &e).expect("identity is interior");
    let kkt0 = Kkt::factor(cone, &id_scaling, g)?;
    let (mut y, _, _) = kkt0.solve(&DVector::zeros(g.ncols()), h);
    let mut s = h - g * &y;
    let (_, mut z, _) = kkt0.solve(&(-c), &DVector::zeros(h.len()));
    for v in [&mut s, &mut z] {
        let shift = -cone.min_eig(v);
        if shift >= -1e-8 * v.norm().max(1.0) {
            *v += &e * (1.0 + shift);
        }
    }
    let (mut tau, mut kappa) = (1.0, 1.0);

    let mut best_pres = f64::INFINITY;
    let mut stall = 0;
    let (mut pres, mut dres, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for iter in 0..=settings.max_iters {
        let rx = g.transpose() * &z + c * tau;
        let rz = g * &y + &s - h * tau;
        let rt = kappa + c.dot(&y) + h.dot(&z);
        let cy = c.dot(&y);
        let hz = h.dot(&z);
        pres = rz.norm() / tau / res_z0;
        dres = rx.norm() / tau / res_y0;
        gap = s.dot(&z) / (tau * tau);
        trace!("ipm {iter:3}: pcost {:+.6e} dcost {:+.6e} pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} tau {tau:.2e} kappa {kappa:.2e}", cy / tau, -hz / tau);

        if pres <= settings.tol_feas && dres <= settings.tol_feas && gap <= settings.tol_gap {
            return Ok(Ipm { status: SolveStatus::Optimal, y: y / tau, pres, dres, gap, iterations: iter });
        }
        if hz < 0.0 && (g.transpose() * &z).norm() / res_y0 / (-hz) <= settings.tol_feas {
            debug!("ipm: primal infeasibility certificate at iteration {iter}");
            return Ok(Ipm { status: SolveStatus::Infeasible, y: y / tau, pres, dres, gap, iterations: iter });
        }
        if cy < 0.0 && (g * &y + &s).norm() / res_z0 / (-cy) <= settings.tol_feas {
            debug!("ipm: dual infeasibility certificate at iteration {iter}");
            return Err(SolverError::Unbounded);
        }
        if pres > settings.tol_feas {
            if pres < 0.999 * best_pres {
                best_pres = pres;
                stall = 0;
            } else {
                stall += 1;
                if stall >= settings.stall_iters {
                    debug!("ipm: primal residual stalled at {pres:.3e}");
                    return Ok(Ipm { status: SolveStatus::Infeasible, y: y / tau, pres, dres, gap, iterations: iter });
                }
            }
        }
        if iter == settings.max_iters {
            break;
        }

        let mu = (s.dot(&z) + tau * kappa) / (nu + 1.0);
        let scaling = Scaling::new(cone, &s, &z)
            .ok_or_else(|| SolverError::NumericalBreakdown("iterate left the cone interior".into()))?;
        let lambda = scaling.lambda.clone();
        let kkt = Kkt::factor(cone, &scaling, g)?;
        let (y1, z1, _) = kkt.solve(&(-c), h);
        let denom = c.dot(&y1) + h.dot(&z1) - kappa / tau;

        let lam_sq = cone.product(&lambda, &lambda);
        let mut sigma = 0.0;
        let mut aff: Option<(DVector<f64>, DVector<f64>, f64, f64)> = None;
        let mut step = None;
        for pass in 0..2 {
            let mut ds = -&lam_sq + &e * (sigma * mu);
            let mut dk = -tau * kappa + sigma * mu;
            if let Some((ws, wz, dt, dkap)) = &aff {
                ds -= cone.product(ws, wz);
                dk -= dt * dkap;
            }
            let shat = cone.divide(&lambda, &ds);
            let f = 1.0 - sigma;
            let bz = -(&rz * f) - scaling.apply(cone, ScalingOp::Wt, &shat);
            let (y2, z2, _) = kkt.solve(&(-(&rx * f)), &bz);
            let dtau = (-f * rt - c.dot(&y2) - h.dot(&z2) - dk / tau) / denom;
            let dy = &y2 + &y1 * dtau;
            let dz = &z2 + &z1 * dtau;
            let wdz = scaling.apply(cone, ScalingOp::W, &dz);
            let wds = &shat - &wdz;
            let dsv = scaling.apply(cone, ScalingOp::Wt, &wds);
            let dkappa = (dk - kappa * dtau) / tau;

            let mut amax = cone.max_step(&s, &dsv).min(cone.max_step(&z, &dz));
            if dtau < 0.0 {
                amax = amax.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                amax = amax.min(-kappa / dkappa);
            }
            if amax.is_nan() {
                return Err(SolverError::NumericalBreakdown("step length is NaN".into()));
            }
            if pass == 0 {
                sigma = (1.0 - amax.min(1.0)).powi(3);
                aff = Some((wds, wdz, dtau, dkappa));
            } else {
                let a = (0.99 * amax).min(1.0);
                step = Some((dy, dsv, dz, dtau, dkappa, a));
            }
        }
        let (dy, dsv, dz, dtau, dkappa, a) = step.expect("combined step computed");
        y += dy * a;
        s += dsv * a;
        z += dz * a;
        tau += dtau * a;
        kappa += dkappa * a;
        if !(tau.is_finite() && kappa.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NumericalBreakdown("non-finite iterate".into()));
        }
    }
    Ok(Ipm { status: SolveStatus::MaxIterations, y: y / tau, pres, dres, gap, iterations: settings.max_iters })
}
