//! Translation of a [`Program`] node (binary fixing plus a convex treatment of
//! the square equalities) into a dense [`QpProblem`].
//!
//! Free variables that carry only a positive diagonal quadratic cost and
//! appear only in equality rows (the Hankel weights and output slacks of the
//! data-driven programs) are eliminated once per program: minimizing
//! `½ αᵀDα` subject to `Gα = b − My` has the closed form
//! `½ (b − My)ᵀ (G D⁻¹ Gᵀ)⁺ (b − My)` on the range of `G`, plus the linear
//! equalities `U₀ᵀ(b − My) = 0` on its left null space. The minimizing `α` is
//! recovered after the solve.

use nalgebra::{DMatrix, DVector};

use super::qp::{self, QpProblem, QpSettings, QpStatus};
use crate::problems::{LinearRow, Program, VarKind};

/// Relative singular-value threshold separating the range of the eliminated
/// block from its numerical null space.
const ELIM_RANK_TOL: f64 = 1e-9;

/// Number of evenly spaced tangent cuts per square equality in relaxations.
const TANGENTS: usize = 9;

#[derive(Debug, Clone)]
struct Recovery {
    /// Maps the residual `b − My` to the eliminated variables.
    map: DMatrix<f64>,
    rhs: DVector<f64>,
    /// `M` over kept variables.
    coupling: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled<'a> {
    pub program: &'a Program,
    elim: Vec<usize>,
    keep: Vec<usize>,
    keep_pos: Vec<Option<usize>>,
    h: DMatrix<f64>,
    c: DVector<f64>,
    eq_rows: Vec<usize>,
    null_rows: DMatrix<f64>,
    null_rhs: DVector<f64>,
    recovery: Option<Recovery>,
    pub binaries: Vec<usize>,
}

/// How the square equalities enter a node QP.
#[derive(Debug, Clone, Copy)]
pub(crate) enum SquareMode<'b> {
    /// Tangent cuts from below, the secant from above.
    Relax,
    /// `z = 2p̂·p − p̂²` with a trust box `|p − p̂| <= radius`, plus the
    /// objective term `w·(p − p̂)²` for each square.
    Linearize {
        points: &'b [f64],
        radius: f64,
        curvature: &'b [f64],
    },
}

#[derive(Debug, Clone)]
pub(crate) struct NodeSolution {
    pub status: QpStatus,
    /// Full assignment over program variables.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Multipliers of the linearized square rows (zero when relaxing).
    pub square_multipliers: Vec<f64>,
}

impl<'a> Compiled<'a> {
    pub fn new(program: &'a Program) -> Self {
        let n = program.num_vars();
        let mut diag = vec![0.0; n];
        let mut coupled = vec![false; n];
        for &(i, j, v) in &program.objective.quadratic {
            if i == j {
                diag[i] += 2.0 * v;
            } else {
                coupled[i] = true;
                coupled[j] = true;
            }
        }
        let mut blocked = coupled;
        for &(i, c) in &program.objective.linear {
            if c != 0.0 {
                blocked[i] = true;
            }
        }
        for row in &program.linear_ineq {
            for &(i, _) in &row.coeffs {
                blocked[i] = true;
            }
        }
        for sq in &program.square_eqs {
            blocked[sq.z] = true;
            blocked[sq.p] = true;
        }
        let elim: Vec<usize> = (0..n)
            .filter(|&i| {
                let v = &program.vars[i];
                v.kind == VarKind::Continuous
                    && v.lower == f64::NEG_INFINITY
                    && v.upper == f64::INFINITY
                    && diag[i] > 0.0
                    && !blocked[i]
            })
            .collect();
        let mut is_elim = vec![false; n];
        for &i in &elim {
            is_elim[i] = true;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| !is_elim[i]).collect();
        let mut keep_pos = vec![None; n];
        for (k, &i) in keep.iter().enumerate() {
            keep_pos[i] = Some(k);
        }
        let nk = keep.len();

        let mut h = DMatrix::zeros(nk, nk);
        let mut c = DVector::zeros(nk);
        for &(i, j, v) in &program.objective.quadratic {
            if let (Some(a), Some(b)) = (keep_pos[i], keep_pos[j]) {
                if a == b {
                    h[(a, a)] += 2.0 * v;
                } else {
                    h[(a, b)] += v;
                    h[(b, a)] += v;
                }
            }
        }
        for &(i, v) in &program.objective.linear {
            if let Some(a) = keep_pos[i] {
                c[a] += v;
            }
        }

        let (elim_rows, eq_rows): (Vec<usize>, Vec<usize>) =
            (0..program.linear_eq.len()).partition(|&r| program.linear_eq[r].coeffs.iter().any(|&(i, _)| is_elim[i]));

        let mut null_rows = DMatrix::zeros(0, nk);
        let mut null_rhs = DVector::zeros(0);
        let mut recovery = None;
        if !elim.is_empty() && !elim_rows.is_empty() {
            let me = elim_rows.len();
            let ne = elim.len();
            let mut elim_pos = vec![usize::MAX; n];
            for (k, &i) in elim.iter().enumerate() {
                elim_pos[i] = k;
            }
            // G D^{-1/2}, padded with zero columns so the SVD's U is square.
            let width = ne.max(me);
            let mut gs = DMatrix::zeros(me, width);
            let mut m = DMatrix::zeros(me, nk);
            let mut b = DVector::zeros(me);
            for (rk, &r) in elim_rows.iter().enumerate() {
                let row = &program.linear_eq[r];
                b[rk] = row.rhs;
                for &(i, coef) in &row.coeffs {
                    if is_elim[i] {
                        gs[(rk, elim_pos[i])] += coef / diag[i].sqrt();
                    } else {
                        m[(rk, keep_pos[i].unwrap())] += coef;
                    }
                }
            }
            let svd = gs.svd(true, true);
            let u = svd.u.expect("requested U");
            let vt = svd.v_t.expect("requested V^T");
            let sv = &svd.singular_values;
            let smax = sv.iter().copied().fold(0.0, f64::max);
            let range: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] > ELIM_RANK_TOL * smax).collect();
            let null: Vec<usize> = (0..me).filter(|k| !range.contains(k)).collect();

            // P = Σ_r^{-1} U_rᵀ
            let mut p = DMatrix::zeros(range.len(), me);
            for (a, &k) in range.iter().enumerate() {
                for r in 0..me {
                    p[(a, r)] = u[(r, k)] / sv[k];
                }
            }
            let pm = &p * &m;
            let pb = &p * &b;
            h += pm.transpose() * &pm;
            c -= pm.transpose() * &pb;

            null_rows = DMatrix::zeros(null.len(), nk);
            null_rhs = DVector::zeros(null.len());
            for (a, &k) in null.iter().enumerate() {
                let uk = u.column(k);
                null_rows.row_mut(a).copy_from(&(uk.transpose() * &m));
                null_rhs[a] = uk.dot(&b);
            }

            // α = D^{-1/2} W_r P r
            let mut wr = DMatrix::zeros(ne, range.len());
            for (a, &k) in range.iter().enumerate() {
                for e in 0..ne {
                    wr[(e, a)] = vt[(k, e)] / diag[elim[e]].sqrt();
                }
            }
            recovery = Some(Recovery {
                map: wr * p,
                rhs: b,
                coupling: m,
            });
        }

        Self {
            program,
            elim,
            keep,
            keep_pos,
            h,
            c,
            eq_rows,
            null_rows,
            null_rhs,
            recovery,
            binaries: program.binaries(),
        }
    }

    /// Number of program variables removed by the closed-form elimination.
    #[cfg(test)]
    pub fn eliminated(&self) -> usize {
        self.elim.len()
    }

    /// Solves the convex QP of one node. `fixing[k]` pins binary
    /// `self.binaries[k]`; unpinned binaries are relaxed to `[0, 1]`.
    pub fn solve_node(
        &self,
        fixing: &[Option<bool>],
        mode: SquareMode<'_>,
        warm: Option<&[f64]>,
        settings: &QpSettings,
    ) -> NodeSolution {
        let prog = self.program;
        let n = prog.num_vars();
        let mut lo: Vec<f64> = prog.vars.iter().map(|v| v.lower).collect();
        let mut hi: Vec<f64> = prog.vars.iter().map(|v| v.upper).collect();
        for (k, &b) in self.binaries.iter().enumerate() {
            if let Some(val) = fixing.get(k).copied().flatten() {
                let v = if val { 1.0 } else { 0.0 };
                if v < lo[b] || v > hi[b] {
                    return self.infeasible();
                }
                lo[b] = v;
                hi[b] = v;
            }
        }

        let mut ineq: Vec<LinearRow> = prog.linear_ineq.clone();
        let mut eq: Vec<LinearRow> = self.eq_rows.iter().map(|&r| prog.linear_eq[r].clone()).collect();
        let mut eq_square: Vec<Option<usize>> = vec![None; eq.len()];
        let mut curvature_terms: Vec<(usize, f64, f64)> = Vec::new();
        match mode {
            SquareMode::Relax => {
                for sq in &prog.square_eqs {
                    let (l, u) = (lo[sq.p], hi[sq.p]);
                    let mut points = Vec::new();
                    if l.is_finite() && u.is_finite() {
                        for t in 0..TANGENTS {
                            points.push(l + (u - l) * t as f64 / (TANGENTS - 1) as f64);
                        }
                        ineq.push(LinearRow {
                            coeffs: vec![(sq.z, 1.0), (sq.p, -(l + u))],
                            rhs: -l * u,
                        });
                    } else {
                        points.extend([l, u].iter().filter(|v| v.is_finite()));
                    }
                    if l <= 0.0 && u >= 0.0 {
                        points.push(0.0);
                    }
                    for t in points {
                        ineq.push(LinearRow {
                            coeffs: vec![(sq.p, 2.0 * t), (sq.z, -1.0)],
                            rhs: t * t,
                        });
                    }
                }
            }
            SquareMode::Linearize {
                points,
                radius,
                curvature,
            } => {
                for (k, (sq, &ph)) in prog.square_eqs.iter().zip(points).enumerate() {
                    eq.push(LinearRow {
                        coeffs: vec![(sq.z, 1.0), (sq.p, -2.0 * ph)],
                        rhs: -ph * ph,
                    });
                    eq_square.push(Some(k));
                    if let Some(&w) = curvature.get(k).filter(|&&w| w > 0.0) {
                        curvature_terms.push((sq.p, w, ph));
                    }
                    lo[sq.p] = lo[sq.p].max(ph - radius);
                    hi[sq.p] = hi[sq.p].min(ph + radius);
                    if lo[sq.p] > hi[sq.p] {
                        return self.infeasible();
                    }
                }
            }
        }

        // Single-variable inequality rows become bounds.
        let mut keep_ineq = vec![true; ineq.len()];
        for _ in 0..3 {
            let mut changed = false;
            for (r, row) in ineq.iter().enumerate() {
                if !keep_ineq[r] {
                    continue;
                }
                let mut rhs = row.rhs;
                let mut single: Option<(usize, f64)> = None;
                let mut count = 0;
                for &(i, coef) in &row.coeffs {
                    if coef == 0.0 {
                        continue;
                    }
                    if lo[i] == hi[i] {
                        rhs -= coef * lo[i];
                    } else {
                        count += 1;
                        single = Some((i, coef));
                    }
                }
                if count == 0 {
                    if rhs < -settings.feas_tol {
                        return self.infeasible();
                    }
                    keep_ineq[r] = false;
                } else if count == 1 {
                    let (i, coef) = single.unwrap();
                    let bound = rhs / coef;
                    if coef > 0.0 {
                        if bound < hi[i] {
                            hi[i] = bound;
                            changed = true;
                        }
                    } else if bound > lo[i] {
                        lo[i] = bound;
                        changed = true;
                    }
                    if lo[i] > hi[i] {
                        if lo[i] - hi[i] > settings.feas_tol {
                            return self.infeasible();
                        }
                        let mid = 0.5 * (lo[i] + hi[i]);
                        lo[i] = mid;
                        hi[i] = mid;
                    }
                    keep_ineq[r] = false;
                }
            }
            if !changed {
                break;
            }
        }

        // Free kept variables form the QP.
        let free: Vec<usize> = self.keep.iter().copied().filter(|&i| lo[i] != hi[i]).collect();
        let nf = free.len();
        let mut qp_pos = vec![usize::MAX; n];
        for (k, &i) in free.iter().enumerate() {
            qp_pos[i] = k;
        }
        let fixed_val = |i: usize| lo[i];

        let nk = self.keep.len();
        let mut y_fixed = DVector::zeros(nk);
        for (k, &i) in self.keep.iter().enumerate() {
            if lo[i] == hi[i] {
                y_fixed[k] = fixed_val(i);
            }
        }
        let free_keep: Vec<usize> = free.iter().map(|&i| self.keep_pos[i].unwrap()).collect();

        let mut qp = QpProblem::new(nf);
        let hy = &self.h * &y_fixed;
        for a in 0..nf {
            let ka = free_keep[a];
            qp.linear[a] = self.c[ka] + hy[ka];
            for b in 0..nf {
                qp.hessian[(a, b)] = self.h[(ka, free_keep[b])];
            }
            qp.lower[a] = lo[free[a]];
            qp.upper[a] = hi[free[a]];
        }
        for &(i, w, ph) in &curvature_terms {
            if lo[i] != hi[i] {
                let a = qp_pos[i];
                qp.hessian[(a, a)] += 2.0 * w;
                qp.linear[a] -= 2.0 * w * ph;
            }
        }

        // Equalities: program rows, then elimination null-space rows.
        let mut eq_dense: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut dense_square: Vec<Option<usize>> = Vec::new();
        for (row, &origin) in eq.iter().zip(&eq_square) {
            let mut d = vec![0.0; nf];
            let mut r = row.rhs;
            let mut any = false;
            for &(i, coef) in &row.coeffs {
                if lo[i] == hi[i] {
                    r -= coef * lo[i];
                } else {
                    d[qp_pos[i]] += coef;
                    any |= coef != 0.0;
                }
            }
            if any {
                eq_dense.push((d, r));
                dense_square.push(origin);
            } else if r.abs() > settings.feas_tol {
                return self.infeasible();
            }
        }
        for a in 0..self.null_rows.nrows() {
            let mut d = vec![0.0; nf];
            let mut r = self.null_rhs[a];
            for (k, &i) in self.keep.iter().enumerate() {
                let coef = self.null_rows[(a, k)];
                if lo[i] == hi[i] {
                    r -= coef * lo[i];
                } else {
                    d[qp_pos[i]] += coef;
                }
            }
            if d.iter().any(|&v| v != 0.0) {
                eq_dense.push((d, r));
            } else if r.abs() > settings.feas_tol {
                return self.infeasible();
            }
        }
        let mut ineq_dense: Vec<(Vec<f64>, f64)> = Vec::new();
        for (r, row) in ineq.iter().enumerate() {
            if !keep_ineq[r] {
                continue;
            }
            let mut d = vec![0.0; nf];
            let mut rhs = row.rhs;
            for &(i, coef) in &row.coeffs {
                if lo[i] == hi[i] {
                    rhs -= coef * lo[i];
                } else {
                    d[qp_pos[i]] += coef;
                }
            }
            ineq_dense.push((d, rhs));
        }
        qp.eq = DMatrix::from_fn(eq_dense.len(), nf, |a, b| eq_dense[a].0[b]);
        qp.eq_rhs = DVector::from_iterator(eq_dense.len(), eq_dense.iter().map(|r| r.1));
        qp.ineq = DMatrix::from_fn(ineq_dense.len(), nf, |a, b| ineq_dense[a].0[b]);
        qp.ineq_rhs = DVector::from_iterator(ineq_dense.len(), ineq_dense.iter().map(|r| r.1));

        let start = warm.map(|w| DVector::from_fn(nf, |k, _| w[free[k]]));
        let sol = qp::solve(&qp, start.as_ref(), settings);
        if sol.status != QpStatus::Optimal {
            return NodeSolution {
                status: sol.status,
                x: vec![f64::NAN; n],
                objective: f64::INFINITY,
                iterations: sol.iterations,
                square_multipliers: vec![0.0; prog.square_eqs.len()],
            };
        }
        let mut square_multipliers = vec![0.0; prog.square_eqs.len()];
        for (r, origin) in dense_square.iter().enumerate() {
            if let Some(k) = origin {
                square_multipliers[*k] = sol.eq_multipliers[r];
            }
        }

        let mut x = vec![0.0; n];
        for i in 0..n {
            if lo[i] == hi[i] {
                x[i] = lo[i];
            }
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] = sol.x[k];
        }
        self.recover(&mut x);
        NodeSolution {
            status: QpStatus::Optimal,
            objective: prog.objective.eval(&x),
            x,
            iterations: sol.iterations,
            square_multipliers,
        }
    }

    fn recover(&self, x: &mut [f64]) {
        if let Some(rec) = &self.recovery {
            let y = DVector::from_fn(self.keep.len(), |k, _| x[self.keep[k]]);
            let r = &rec.rhs - &rec.coupling * y;
            let alpha = &rec.map * r;
            for (e, &i) in self.elim.iter().enumerate() {
                x[i] = alpha[e];
            }
        }
    }

    fn infeasible(&self) -> NodeSolution {
        NodeSolution {
            status: QpStatus::Infeasible,
            x: vec![f64::NAN; self.program.num_vars()],
            objective: f64::INFINITY,
            iterations: 0,
            square_multipliers: vec![0.0; self.program.square_eqs.len()],
        }
    }
}
