//! Reduction of a [`ConicProgram`] to `min cᵀy  s.t.  G y + s = h, s ∈ K`.
//!
//! Equalities are eliminated through an affine parametrization
//! `x = x0 + T y` with orthonormal `T`. When the program carries a feasible
//! reference point, PSD blocks that are singular there on a flat face
//! (`Nᵀ F(y) N ≡ 0` for the kernel `N`) are restricted to that face: the
//! implied equalities `Uᵀ F(y) N = 0` are eliminated and the block shrinks
//! to `Uᵀ F(y) U`. This recovers strict feasibility for the Laplacian blocks
//! (kernel `1`) and for the distance-matrix block (kernel of the current
//! Gram matrix), which otherwise have no interior.

use nalgebra::{DMatrix, DVector};

use super::cones::{psd_order, smat, svec, svec_len, Cone, ConeKind};
use super::program::ConicProgram;
use crate::graph::sorted_eigen;

const ZERO_ROW: f64 = 1e-12;
const CONST_TOL: f64 = 1e-9;
const FACE_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub(crate) struct StandardForm {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub cone: Cone,
    pub x0: DVector<f64>,
    pub t: DMatrix<f64>,
}

impl StandardForm {
    pub fn lift(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.x0 + &self.t * y
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Presolved {
    Reduced(StandardForm),
    Infeasible(String),
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Row,
    Soc,
    Psd,
}

#[derive(Clone, Debug)]
struct Block {
    kind: Kind,
    g: DMatrix<f64>,
    h: DVector<f64>,
}

struct State {
    x0: DVector<f64>,
    t: DMatrix<f64>,
    c: DVector<f64>,
    y_ref: Option<DVector<f64>>,
    blocks: Vec<Block>,
}

fn dense_row(terms: &[(usize, f64)], n: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    for &(k, a) in terms {
        v[k] += a;
    }
    v
}

pub(crate) fn presolve(prog: &ConicProgram) -> Presolved {
    let nv = prog.n_vars;
    let mut blocks = Vec::new();
    for c in &prog.lin_ineq {
        let a = dense_row(&c.expr.terms, nv);
        blocks.push(Block { kind: Kind::Row, g: DMatrix::from_row_slice(1, nv, (-a).as_slice()), h: DVector::from_element(1, c.expr.constant) });
    }
    for s in &prog.soc_blocks {
        let q = s.rows.len() + 1;
        let mut g = DMatrix::zeros(q, nv);
        let mut h = DVector::zeros(q);
        for (r, e) in std::iter::once(&s.bound).chain(s.rows.iter()).enumerate() {
            h[r] = e.constant;
            for &(k, a) in &e.terms {
                g[(r, k)] -= a;
            }
        }
        blocks.push(Block { kind: Kind::Soc, g, h });
    }
    for b in &prog.lmi_blocks {
        let len = svec_len(b.dim());
        let mut g = DMatrix::zeros(len, nv);
        for (k, a) in &b.coeffs {
            let col = svec(a);
            for r in 0..len {
                g[(r, *k)] -= col[r];
            }
        }
        blocks.push(Block { kind: Kind::Psd, g, h: svec(&b.constant) });
    }
    let mut c = DVector::zeros(nv);
    c[prog.alpha] = -1.0;
    let mut st = State { x0: DVector::zeros(nv), t: DMatrix::identity(nv, nv), c, y_ref: prog.reference.clone(), blocks };

    if !prog.lin_eq.is_empty() {
        let mut e = DMatrix::zeros(prog.lin_eq.len(), nv);
        let mut f = DVector::zeros(prog.lin_eq.len());
        for (r, c) in prog.lin_eq.iter().enumerate() {
            e.set_row(r, &dense_row(&c.expr.terms, nv).transpose());
            f[r] = -c.expr.constant;
        }
        if let Err(msg) = eliminate(&mut st, &e, &f) {
            return Presolved::Infeasible(msg);
        }
    }

    loop {
        match simplify_pass(&mut st) {
            Err(msg) => return Presolved::Infeasible(msg),
            Ok(true) => continue,
            Ok(false) => break,
        }
    }

    // Columns no constraint sees.
    let ny = st.t.ncols();
    let mut keep = Vec::new();
    for k in 0..ny {
        let used = st.blocks.iter().any(|b| b.g.column(k).amax() > ZERO_ROW);
        if used {
            keep.push(k);
        } else if st.c[k].abs() > 1e-12 {
            return Presolved::Unbounded;
        }
    }
    if keep.len() < ny {
        let sel = DMatrix::from_fn(ny, keep.len(), |i, j| if keep[j] == i { 1.0 } else { 0.0 });
        apply_basis_change(&mut st, &DVector::zeros(ny), &sel);
    }

    let ny = st.t.ncols();
    let mut kinds = Vec::new();
    let rows: Vec<&Block> = st.blocks.iter().filter(|b| b.kind == Kind::Row).collect();
    if !rows.is_empty() {
        kinds.push(ConeKind::Orthant(rows.len()));
    }
    for b in st.blocks.iter().filter(|b| b.kind == Kind::Soc) {
        kinds.push(ConeKind::Soc(b.h.len()));
    }
    for b in st.blocks.iter().filter(|b| b.kind == Kind::Psd) {
        kinds.push(ConeKind::Psd(psd_order(b.h.len())));
    }
    let cone = Cone::new(kinds);
    let mut g = DMatrix::zeros(cone.dim(), ny);
    let mut h = DVector::zeros(cone.dim());
    let mut r = 0;
    for kind in [Kind::Row, Kind::Soc, Kind::Psd] {
        for b in st.blocks.iter().filter(|b| b.kind == kind) {
            let len = b.h.len();
            g.view_mut((r, 0), (len, ny)).copy_from(&b.g);
            h.rows_mut(r, len).copy_from(&b.h);
            r += len;
        }
    }
    Presolved::Reduced(StandardForm { c: st.c, g, h, cone, x0: st.x0, t: st.t })
}

/// Restricts `y` to `{ y : e y = f }`.
fn eliminate(st: &mut State, e: &DMatrix<f64>, f: &DVector<f64>) -> Result<(), String> {
    let ny = e.ncols();
    let rows = e.nrows().max(ny);
    let mut padded = DMatrix::zeros(rows, ny);
    padded.view_mut((0, 0), (e.nrows(), ny)).copy_from(e);
    let mut fp = DVector::zeros(rows);
    fp.rows_mut(0, f.len()).copy_from(f);
    let svd = padded.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let sig = &svd.singular_values;
    let smax = sig.iter().copied().fold(0.0, f64::max);
    let tol = 1e-10 * smax.max(1e-2);
    let mut yp = DVector::zeros(ny);
    let mut null_cols = Vec::new();
    for k in 0..sig.len() {
        if sig[k] > tol {
            let coef = u.column(k).dot(&fp) / sig[k];
            yp += vt.row(k).transpose() * coef;
        } else {
            null_cols.push(vt.row(k).transpose());
        }
    }
    let resid = (e * &yp - f).amax();
    if resid > 1e-8 * f.amax().max(1.0) {
        return Err(format!("inconsistent equality constraints (residual {resid:.3e})"));
    }
    let t2 = if null_cols.is_empty() { DMatrix::zeros(ny, 0) } else { DMatrix::from_columns(&null_cols) };
    apply_basis_change(st, &yp, &t2);
    Ok(())
}

/// Substitutes `y = yp + t2 w`.
fn apply_basis_change(st: &mut State, yp: &DVector<f64>, t2: &DMatrix<f64>) {
    st.x0 += &st.t * yp;
    for b in &mut st.blocks {
        b.h -= &b.g * yp;
        b.g = &b.g * t2;
    }
    st.c = t2.transpose() * &st.c;
    st.t = &st.t * t2;
    if let Some(r) = st.y_ref.take() {
        st.y_ref = Some(t2.transpose() * (r - yp));
    }
}

/// One sweep of constant-block removal, degenerate-cone detection and facial
/// reduction. Returns `Ok(true)` when something changed.
fn simplify_pass(st: &mut State) -> Result<bool, String> {
    let ny = st.t.ncols();
    let mut changed = false;
    let mut eq_rows: Vec<DVector<f64>> = Vec::new();
    let mut eq_rhs: Vec<f64> = Vec::new();
    let mut kept = Vec::with_capacity(st.blocks.len());
    let blocks = std::mem::take(&mut st.blocks);
    for mut b in blocks {
        let row_zero = |r: usize| b.g.row(r).amax() <= ZERO_ROW;
        let all_zero = (0..b.h.len()).all(row_zero);
        match b.kind {
            Kind::Row => {
                if all_zero {
                    if b.h[0] < -CONST_TOL {
                        return Err(format!("constant inequality violated by {:.3e}", -b.h[0]));
                    }
                    changed = true;
                    continue;
                }
            }
            Kind::Soc => {
                let t = b.h[0];
                if all_zero {
                    let nrm = b.h.rows(1, b.h.len() - 1).norm();
                    if nrm > t + CONST_TOL {
                        return Err("constant second-order cone violated".into());
                    }
                    changed = true;
                    continue;
                }
                if row_zero(0) && t.abs() <= CONST_TOL {
                    // ||u|| <= 0 pins every row.
                    for r in 1..b.h.len() {
                        eq_rows.push(b.g.row(r).transpose());
                        eq_rhs.push(b.h[r]);
                    }
                    changed = true;
                    continue;
                }
                if row_zero(0) && t < -CONST_TOL {
                    return Err("second-order cone with negative constant bound".into());
                }
            }
            Kind::Psd => {
                let m = psd_order(b.h.len());
                if all_zero {
                    if crate::graph::min_eigenvalue(&smat(b.h.as_slice(), m)) < -CONST_TOL {
                        return Err("constant matrix inequality violated".into());
                    }
                    changed = true;
                    continue;
                }
                if let Some(yr) = &st.y_ref {
                    if let Some((rows, rhs, reduced)) = face_reduce(&b, yr) {
                        eq_rows.extend(rows);
                        eq_rhs.extend(rhs);
                        changed = true;
                        match reduced {
                            Some(nb) => b = nb,
                            None => continue,
                        }
                    }
                }
            }
        }
        kept.push(b);
    }
    st.blocks = kept;
    if !eq_rows.is_empty() {
        let e = DMatrix::from_fn(eq_rows.len(), ny, |i, j| eq_rows[i][j]);
        let f = DVector::from_vec(eq_rhs);
        eliminate(st, &e, &f)?;
    }
    Ok(changed)
}

type FaceCut = (Vec<DVector<f64>>, Vec<f64>, Option<Block>);

fn face_reduce(b: &Block, y_ref: &DVector<f64>) -> Option<FaceCut> {
    let m = psd_order(b.h.len());
    let ny = b.g.ncols();
    let at_ref = smat((&b.h - &b.g * y_ref).as_slice(), m);
    let (vals, vecs) = sorted_eigen(&at_ref);
    let scale = vals.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if vals[0] < -FACE_TOL * scale {
        return None;
    }
    let r = vals.iter().filter(|&&v| v <= FACE_TOL * scale).count();
    if r == 0 {
        return None;
    }
    let null = vecs.columns(0, r).into_owned();
    let range = vecs.columns(r, m - r).into_owned();
    let gk: Vec<DMatrix<f64>> = (0..ny).map(|k| smat(b.g.column(k).as_slice(), m)).collect();
    for g in &gk {
        let flat = null.transpose() * g * &null;
        if flat.amax() > FACE_TOL * g.amax().max(1.0) {
            return None;
        }
    }
    // Uᵀ F(y) N = 0, homogeneous around the reference.
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let cross: Vec<DMatrix<f64>> = gk.iter().map(|g| range.transpose() * g * &null).collect();
    for a in 0..(m - r) {
        for c in 0..r {
            let row = DVector::from_fn(ny, |k, _| cross[k][(a, c)]);
            if row.amax() > ZERO_ROW {
                rhs.push(row.dot(y_ref));
                rows.push(row);
            }
        }
    }
    if m == r {
        return Some((rows, rhs, None));
    }
    let h = svec(&(range.transpose() * smat(b.h.as_slice(), m) * &range));
    let mut g = DMatrix::zeros(svec_len(m - r), ny);
    for (k, gm) in gk.iter().enumerate() {
        g.set_column(k, &svec(&(range.transpose() * gm * &range)));
    }
    Some((rows, rhs, Some(Block { kind: Kind::Psd, g, h })))
}
