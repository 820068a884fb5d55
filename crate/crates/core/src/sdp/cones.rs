//! Product cone `R₊^l × Q^{q_1} × … × S₊^{m_1} × …` in vectorized form.
//!
//! PSD blocks are stored as `svec`: the lower triangle column by column with
//! off-diagonal entries scaled by √2, so the Euclidean inner product of two
//! `svec`s equals the trace inner product of the matrices.

use nalgebra::{DMatrix, DVector};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeKind {
    /// `l` independent nonnegative entries.
    Orthant(usize),
    /// `t >= ||u||` with total length `q`.
    Soc(usize),
    /// Symmetric PSD matrix of order `m`.
    Psd(usize),
}

impl ConeKind {
    pub fn len(&self) -> usize {
        match *self {
            ConeKind::Orthant(l) => l,
            ConeKind::Soc(q) => q,
            ConeKind::Psd(m) => svec_len(m),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Barrier degree.
    pub fn degree(&self) -> usize {
        match *self {
            ConeKind::Orthant(l) => l,
            ConeKind::Soc(_) => 1,
            ConeKind::Psd(m) => m,
        }
    }
}

pub fn svec_len(m: usize) -> usize {
    m * (m + 1) / 2
}

pub fn svec(a: &DMatrix<f64>) -> DVector<f64> {
    let m = a.nrows();
    let mut v = DVector::zeros(svec_len(m));
    let mut k = 0;
    for j in 0..m {
        for i in j..m {
            v[k] = if i == j { a[(i, i)] } else { SQRT2 * 0.5 * (a[(i, j)] + a[(j, i)]) };
            k += 1;
        }
    }
    v
}

pub fn smat(v: &[f64], m: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m, m);
    let mut k = 0;
    for j in 0..m {
        for i in j..m {
            if i == j {
                a[(i, i)] = v[k];
            } else {
                a[(i, j)] = v[k] / SQRT2;
                a[(j, i)] = v[k] / SQRT2;
            }
            k += 1;
        }
    }
    a
}

/// Matrix order `m` with `svec_len(m) == len`.
pub fn psd_order(len: usize) -> usize {
    let m = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    debug_assert_eq!(svec_len(m), len);
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cone {
    pub blocks: Vec<ConeKind>,
    offsets: Vec<usize>,
    dim: usize,
}

impl Cone {
    pub fn new(blocks: Vec<ConeKind>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut dim = 0;
        for b in &blocks {
            offsets.push(dim);
            dim += b.len();
        }
        Cone { blocks, offsets, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.blocks.iter().map(|b| b.degree()).sum()
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k] + self.blocks[k].len()
    }

    pub fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim);
        for (k, b) in self.blocks.iter().enumerate() {
            let r = self.range(k);
            match *b {
                ConeKind::Orthant(_) => e.rows_mut(r.start, r.len()).fill(1.0),
                ConeKind::Soc(q) => {
                    if q > 0 {
                        e[r.start] = 1.0;
                    }
                }
                ConeKind::Psd(m) => {
                    let mut k2 = r.start;
                    for j in 0..m {
                        e[k2] = 1.0;
                        k2 += m - j;
                    }
                }
            }
        }
        e
    }

    /// Smallest "eigenvalue" of `v` in the Jordan-algebra sense; positive iff interior.
    pub fn min_eig(&self, v: &DVector<f64>) -> f64 {
        let mut out = f64::INFINITY;
        for (k, b) in self.blocks.iter().enumerate() {
            let r = self.range(k);
            let x = &v.as_slice()[r];
            let e = match *b {
                ConeKind::Orthant(_) => x.iter().copied().fold(f64::INFINITY, f64::min),
                ConeKind::Soc(q) => {
                    if q == 0 {
                        continue;
                    }
                    x[0] - norm(&x[1..])
                }
                ConeKind::Psd(m) => crate::graph::min_eigenvalue(&smat(x, m)),
            };
            out = out.min(e);
        }
        out
    }

    /// Jordan product `a ∘ b`.
    pub fn product(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (k, blk) in self.blocks.iter().enumerate() {
            let r = self.range(k);
            let (x, y) = (&a.as_slice()[r.clone()], &b.as_slice()[r.clone()]);
            let o = &mut out.as_mut_slice()[r];
            match *blk {
                ConeKind::Orthant(_) => {
                    for i in 0..x.len() {
                        o[i] = x[i] * y[i];
                    }
                }
                ConeKind::Soc(q) => {
                    if q == 0 {
                        continue;
                    }
                    o[0] = dot(x, y);
                    for i in 1..q {
                        o[i] = x[0] * y[i] + y[0] * x[i];
                    }
                }
                ConeKind::Psd(m) => {
                    let (xa, ya) = (smat(x, m), smat(y, m));
                    let p = (&xa * &ya + &ya * &xa) * 0.5;
                    o.copy_from_slice(svec(&p).as_slice());
                }
            }
        }
        out
    }

    /// Solves `lambda ∘ u = d` for `u`, where PSD blocks of `lambda` are diagonal.
    pub fn divide(&self, lambda: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (k, blk) in self.blocks.iter().enumerate() {
            let r = self.range(k);
            let (l, y) = (&lambda.as_slice()[r.clone()], &d.as_slice()[r.clone()]);
            let o = &mut out.as_mut_slice()[r];
            match *blk {
                ConeKind::Orthant(_) => {
                    for i in 0..l.len() {
                        o[i] = y[i] / l[i];
                    }
                }
                ConeKind::Soc(q) => {
                    if q == 0 {
                        continue;
                    }
                    let det = l[0] * l[0] - dot(&l[1..], &l[1..]);
                    let u0 = (l[0] * y[0] - dot(&l[1..], &y[1..])) / det;
                    o[0] = u0;
                    for i in 1..q {
                        o[i] = (y[i] - l[i] * u0) / l[0];
                    }
                }
                ConeKind::Psd(m) => {
                    let diag = psd_diag(l, m);
                    let mut idx = 0;
                    for j in 0..m {
                        for i in j..m {
                            o[idx] = 2.0 * y[idx] / (diag[i] + diag[j]);
                            idx += 1;
                        }
                    }
                }
            }
        }
        out
    }

    /// Largest `a` with `v + a dv` in the cone (may be infinite). `v` must be interior.
    pub fn max_step(&self, v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
        let mut out = f64::INFINITY;
        for (k, blk) in self.blocks.iter().enumerate() {
            let r = self.range(k);
            let (x, d) = (&v.as_slice()[r.clone()], &dv.as_slice()[r]);
            let a = match *blk {
                ConeKind::Orthant(_) => {
                    let mut a = f64::INFINITY;
                    for i in 0..x.len() {
                        if d[i] < 0.0 {
                            a = a.min(-x[i] / d[i]);
                        }
                    }
                    a
                }
                ConeKind::Soc(q) => {
                    if q == 0 {
                        continue;
                    }
                    soc_step(x, d)
                }
                ConeKind::Psd(m) => psd_step(&smat(x, m), &smat(d, m)),
            };
            out = out.min(a);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn psd_diag(v: &[f64], m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m);
    let mut k = 0;
    for j in 0..m {
        out.push(v[k]);
        k += m - j;
    }
    out
}

// First a > 0 where det(x + a d) = 0 for x inside the cone.
fn soc_step(x: &[f64], d: &[f64]) -> f64 {
    let jdot = |a: &[f64], b: &[f64]| a[0] * b[0] - dot(&a[1..], &b[1..]);
    let qa = jdot(d, d);
    let qb = jdot(x, d);
    let qc = jdot(x, x);
    let scale = qa.abs().max(qb.abs()).max(qc.abs());
    if qa.abs() <= 1e-14 * scale {
        // Linear: qc + 2 qb a = 0.
        if qb < 0.0 {
            return -qc / (2.0 * qb);
        }
        return f64::INFINITY;
    }
    let disc = qb * qb - qa * qc;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    // Numerically stable roots.
    let q = -(qb + qb.signum() * sq);
    let mut roots = [q / qa, if q != 0.0 { qc / q } else { f64::INFINITY }];
    roots.sort_by(f64::total_cmp);
    roots.into_iter().find(|&r| r > 0.0).unwrap_or(f64::INFINITY)
}

fn psd_step(x: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let Some(chol) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = chol.l();
    let li = l.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(l.nrows(), l.ncols()));
    let mut m = &li * d * li.transpose();
    m = (&m + m.transpose()) * 0.5;
    let mn = crate::graph::min_eigenvalue(&m);
    if mn < 0.0 {
        -1.0 / mn
    } else {
        f64::INFINITY
    }
}

/// Nesterov–Todd scaling of one block: `W z = W⁻ᵀ s = λ`.
#[derive(Clone, Debug)]
enum BlockScaling {
    Orthant(DVector<f64>),
    Soc { w: DMatrix<f64>, winv: DMatrix<f64> },
    Psd { r: DMatrix<f64>, rinv: DMatrix<f64> },
}

#[derive(Clone, Debug)]
pub struct Scaling {
    blocks: Vec<BlockScaling>,
    /// Scaled point `λ`, PSD blocks diagonal.
    pub lambda: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingOp {
    W,
    Wt,
    Winv,
    WinvT,
}

impl Scaling {
    /// Returns `None` when `s` or `z` is not strictly interior.
    pub fn new(cone: &Cone, s: &DVector<f64>, z: &DVector<f64>) -> Option<Scaling> {
        let mut blocks = Vec::with_capacity(cone.blocks.len());
        let mut lambda = DVector::zeros(cone.dim());
        for (k, blk) in cone.blocks.iter().enumerate() {
            let r = cone.range(k);
            let (sv, zv) = (&s.as_slice()[r.clone()], &z.as_slice()[r.clone()]);
            let lam = &mut lambda.as_mut_slice()[r];
            match *blk {
                ConeKind::Orthant(l) => {
                    let mut w = DVector::zeros(l);
                    for i in 0..l {
                        if sv[i] <= 0.0 || zv[i] <= 0.0 {
                            return None;
                        }
                        w[i] = (sv[i] / zv[i]).sqrt();
                        lam[i] = (sv[i] * zv[i]).sqrt();
                    }
                    blocks.push(BlockScaling::Orthant(w));
                }
                ConeKind::Soc(q) => {
                    if q == 0 {
                        blocks.push(BlockScaling::Soc { w: DMatrix::zeros(0, 0), winv: DMatrix::zeros(0, 0) });
                        continue;
                    }
                    let js = sv[0] * sv[0] - dot(&sv[1..], &sv[1..]);
                    let jz = zv[0] * zv[0] - dot(&zv[1..], &zv[1..]);
                    if sv[0] <= 0.0 || zv[0] <= 0.0 || js <= 0.0 || jz <= 0.0 {
                        return None;
                    }
                    let (ns, nz) = (js.sqrt(), jz.sqrt());
                    let sb: Vec<f64> = sv.iter().map(|v| v / ns).collect();
                    let zb: Vec<f64> = zv.iter().map(|v| v / nz).collect();
                    let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
                    let mut wb = vec![0.0; q];
                    wb[0] = (sb[0] + zb[0]) / (2.0 * gamma);
                    for i in 1..q {
                        wb[i] = (sb[i] - zb[i]) / (2.0 * gamma);
                    }
                    let beta = (ns / nz).sqrt();
                    let mut w = DMatrix::zeros(q, q);
                    w[(0, 0)] = wb[0];
                    for i in 1..q {
                        w[(0, i)] = wb[i];
                        w[(i, 0)] = wb[i];
                        for j in 1..q {
                            w[(i, j)] = wb[i] * wb[j] / (1.0 + wb[0]) + if i == j { 1.0 } else { 0.0 };
                        }
                    }
                    // Inverse of the hyperbolic Householder factor is J W̄ J.
                    let mut winv = w.clone();
                    for i in 1..q {
                        winv[(0, i)] = -winv[(0, i)];
                        winv[(i, 0)] = -winv[(i, 0)];
                    }
                    w *= beta;
                    winv /= beta;
                    let l = &w * DVector::from_column_slice(zv);
                    lam.copy_from_slice(l.as_slice());
                    blocks.push(BlockScaling::Soc { w, winv });
                }
                ConeKind::Psd(m) => {
                    let ls = smat(sv, m).cholesky()?.l();
                    let lz = smat(zv, m).cholesky()?.l();
                    let svd = (lz.transpose() * &ls).svd(true, true);
                    let v = svd.v_t?.transpose();
                    let sig = svd.singular_values;
                    if sig.iter().any(|&x| x <= 0.0) {
                        return None;
                    }
                    let inv_sqrt = DMatrix::from_diagonal(&sig.map(|x| 1.0 / x.sqrt()));
                    let sqrt = DMatrix::from_diagonal(&sig.map(|x| x.sqrt()));
                    let r = &ls * &v * inv_sqrt;
                    let lsi = ls.clone().try_inverse()?;
                    let rinv = sqrt * v.transpose() * lsi;
                    let dl = svec(&DMatrix::from_diagonal(&sig));
                    lam.copy_from_slice(dl.as_slice());
                    blocks.push(BlockScaling::Psd { r, rinv });
                }
            }
        }
        Some(Scaling { blocks, lambda })
    }

    pub fn apply(&self, cone: &Cone, op: ScalingOp, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (k, b) in self.blocks.iter().enumerate() {
            let r = cone.range(k);
            let x = &v.as_slice()[r.clone()];
            let o = &mut out.as_mut_slice()[r];
            apply_block(b, op, x, o);
        }
        out
    }

    /// Applies the operator to every column of `g`.
    pub fn apply_cols(&self, cone: &Cone, op: ScalingOp, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        for c in 0..g.ncols() {
            let col = g.column(c).into_owned();
            out.set_column(c, &self.apply(cone, op, &col));
        }
        out
    }
}

fn apply_block(b: &BlockScaling, op: ScalingOp, x: &[f64], o: &mut [f64]) {
    match b {
        BlockScaling::Orthant(w) => {
            for i in 0..x.len() {
                o[i] = match op {
                    ScalingOp::W | ScalingOp::Wt => w[i] * x[i],
                    ScalingOp::Winv | ScalingOp::WinvT => x[i] / w[i],
                };
            }
        }
        BlockScaling::Soc { w, winv } => {
            if x.is_empty() {
                return;
            }
            let m = match op {
                ScalingOp::W | ScalingOp::Wt => w,
                ScalingOp::Winv | ScalingOp::WinvT => winv,
            };
            let y = m * DVector::from_column_slice(x);
            o.copy_from_slice(y.as_slice());
        }
        BlockScaling::Psd { r, rinv } => {
            let m = r.nrows();
            let u = smat(x, m);
            let y = match op {
                ScalingOp::W => r.transpose() * u * r,
                ScalingOp::Wt => r * u * r.transpose(),
                ScalingOp::Winv => rinv.transpose() * u * rinv,
                ScalingOp::WinvT => rinv * u * rinv.transpose(),
            };
            o.copy_from_slice(svec(&y).as_slice());
        }
    }
}
