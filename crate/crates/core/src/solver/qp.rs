//! Dense primal active-set solver for convex quadratic programs
//!
//! ```text
//!     minimize    ½ xᵀ H x + cᵀ x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//!                 lo <= x <= hi
//! ```
//!
//! `H` only needs to be positive semidefinite: directions of zero curvature in
//! the current null space are followed as rays until a constraint blocks.
//! Any start point is accepted. Rows violated at the start receive a
//! nonnegative elastic variable with a large linear penalty, which keeps the
//! iterates feasible for the elastic problem; the penalty is raised while
//! elastic variables stay positive and the problem is declared infeasible
//! once the largest penalty still leaves a violation.
//!
//! Bounds in the working set are handled by removing the bound variable from
//! the free set, so only general rows enter the null-space factorization.
//! Ties in blocking steps and in multiplier selection go to the lowest
//! constraint index (general inequality rows first, then variable bounds).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem in `n` variables with zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            hessian: DMatrix::zeros(n, n),
            linear: DVector::zeros(n),
            eq: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        if self.eq.nrows() > 0 {
            let r = &self.eq * x - &self.eq_rhs;
            worst = worst.max(r.amax());
        }
        if self.ineq.nrows() > 0 {
            let r = &self.ineq * x - &self.ineq_rhs;
            worst = worst.max(r.max().max(0.0));
        }
        for i in 0..x.len() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Multipliers `λ` of the equality rows at an optimum, with
    /// `∇f + A_eqᵀλ + (inequality and bound terms) = 0`. Rows dropped as
    /// linearly dependent get zero. Empty unless the status is optimal.
    pub eq_multipliers: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Allowed violation of rows and bounds at termination.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            max_iter: 5000,
        }
    }
}

const PENALTY_START: f64 = 1e6;
const PENALTY_MAX: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoundState {
    Free,
    Lower,
    Upper,
    Fixed,
}

struct Work {
    h: DMatrix<f64>,
    c: DVector<f64>,
    eq: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    ineq: DMatrix<f64>,
    ineq_rhs: DVector<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    /// Columns `n_orig..` are elastic variables.
    n_orig: usize,
}

pub fn solve(problem: &QpProblem, start: Option<&DVector<f64>>, settings: &QpSettings) -> QpSolution {
    let n = problem.dim();
    for i in 0..n {
        if problem.lower[i] > problem.upper[i] {
            return QpSolution {
                status: QpStatus::Infeasible,
                x: DVector::zeros(n),
                objective: f64::INFINITY,
                iterations: 0,
                eq_multipliers: DVector::zeros(0),
            };
        }
    }
    let x0 = DVector::from_fn(n, |i, _| {
        let s = start.map_or(0.0, |s| s[i]);
        let s = if s.is_finite() { s } else { 0.0 };
        s.clamp(problem.lower[i], problem.upper[i])
    });

    let scale = problem.linear.amax().max(problem.hessian.amax()).max(1.0);
    let mut penalty = PENALTY_START * scale;
    let (mut work, mut x) = elastic(problem, &x0, penalty, 0.0);
    let mut iterations = 0;
    let mut multipliers;
    loop {
        let (status, xs, iters, mult) = active_set(&work, x, settings.max_iter.saturating_sub(iterations));
        iterations += iters;
        x = xs;
        multipliers = mult;
        if status != QpStatus::Optimal {
            return finish(problem, status, &x, iterations, multipliers);
        }
        let elastic_max = (work.n_orig..x.len()).map(|i| x[i]).fold(0.0, f64::max);
        if elastic_max <= settings.feas_tol * 1e-3 {
            break;
        }
        if penalty >= PENALTY_MAX * scale {
            return finish(problem, QpStatus::Infeasible, &x, iterations, multipliers);
        }
        penalty *= 1e3;
        for i in work.n_orig..x.len() {
            work.c[i] = penalty;
        }
    }
    if work.n_orig < x.len() {
        // Second phase without elastic columns, so that elastic variables
        // stuck near zero cannot hold the point away from the optimum.
        let x_orig = x.rows(0, n).into_owned();
        let (work2, x2) = elastic(problem, &x_orig, penalty, settings.feas_tol);
        let (status, xs, iters, mult) = active_set(&work2, x2, settings.max_iter.saturating_sub(iterations));
        iterations += iters;
        if status != QpStatus::Optimal {
            return finish(problem, status, &xs, iterations, mult);
        }
        x = xs;
        multipliers = mult;
    }
    let status = if problem.max_violation(&x.rows(0, n).into_owned()) <= settings.feas_tol {
        QpStatus::Optimal
    } else {
        QpStatus::Infeasible
    };
    finish(problem, status, &x, iterations, multipliers)
}

fn finish(
    problem: &QpProblem,
    status: QpStatus,
    x: &DVector<f64>,
    iterations: usize,
    multipliers: DVector<f64>,
) -> QpSolution {
    let x = x.rows(0, problem.dim()).into_owned();
    let objective = match status {
        QpStatus::Infeasible => f64::INFINITY,
        _ => problem.objective(&x),
    };
    let eq_multipliers = if status == QpStatus::Optimal {
        multipliers
    } else {
        DVector::zeros(0)
    };
    QpSolution {
        status,
        x,
        objective,
        iterations,
        eq_multipliers,
    }
}

/// Appends one elastic variable per row violated at `x0` by more than
/// `allowance`.
fn elastic(problem: &QpProblem, x0: &DVector<f64>, penalty: f64, allowance: f64) -> (Work, DVector<f64>) {
    let n = problem.dim();
    let me = problem.eq.nrows();
    let mi = problem.ineq.nrows();
    let mut extra: Vec<(bool, usize, f64, f64)> = Vec::new(); // (is_eq, row, sign, value)
    for r in 0..me {
        let res = problem.eq.row(r).dot(&x0.transpose()) - problem.eq_rhs[r];
        let tol = allowance.max(1e-13 * (1.0 + problem.eq_rhs[r].abs()));
        if res.abs() > tol {
            extra.push((true, r, -res.signum(), res.abs()));
        }
    }
    for r in 0..mi {
        let res = problem.ineq.row(r).dot(&x0.transpose()) - problem.ineq_rhs[r];
        if res > allowance {
            extra.push((false, r, -1.0, res));
        }
    }
    let ne = extra.len();
    let nt = n + ne;
    let mut h = DMatrix::zeros(nt, nt);
    h.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
    let mut c = DVector::from_element(nt, penalty);
    c.rows_mut(0, n).copy_from(&problem.linear);
    let mut eq = DMatrix::zeros(me, nt);
    eq.columns_mut(0, n).copy_from(&problem.eq);
    let mut ineq = DMatrix::zeros(mi, nt);
    ineq.columns_mut(0, n).copy_from(&problem.ineq);
    let mut lo = DVector::zeros(nt);
    let mut hi = DVector::from_element(nt, f64::INFINITY);
    lo.rows_mut(0, n).copy_from(&problem.lower);
    hi.rows_mut(0, n).copy_from(&problem.upper);
    let mut x = DVector::zeros(nt);
    x.rows_mut(0, n).copy_from(x0);
    for (k, &(is_eq, r, sign, value)) in extra.iter().enumerate() {
        if is_eq {
            eq[(r, n + k)] = sign;
        } else {
            ineq[(r, n + k)] = sign;
        }
        x[n + k] = value;
    }
    (
        Work {
            h,
            c,
            eq,
            eq_rhs: problem.eq_rhs.clone(),
            ineq,
            ineq_rhs: problem.ineq_rhs.clone(),
            lo,
            hi,
            n_orig: n,
        },
        x,
    )
}

/// Incremental Gram–Schmidt basis used to pick an independent initial
/// working set.
struct RowBasis {
    basis: Vec<DVector<f64>>,
}

impl RowBasis {
    fn try_add(&mut self, mut v: DVector<f64>) -> bool {
        let norm0 = v.norm();
        if norm0 == 0.0 {
            return false;
        }
        for _ in 0..2 {
            for b in &self.basis {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= 1e-9 * norm0 {
            return false;
        }
        self.basis.push(v / norm);
        true
    }
}

/// Minimum-norm correction of the free variables so the working rows hold
/// to rounding accuracy.
fn project_onto_working_set(w: &Work, x: &mut DVector<f64>, eq_work: &[usize], in_work: &[bool], bound: &[BoundState]) {
    let free: Vec<usize> = (0..x.len()).filter(|&i| bound[i] == BoundState::Free).collect();
    let rows: Vec<(DVector<f64>, f64)> = eq_work
        .iter()
        .map(|&r| (w.eq.row(r).transpose(), w.eq_rhs[r]))
        .chain(
            (0..w.ineq.nrows())
                .filter(|&r| in_work[r])
                .map(|r| (w.ineq.row(r).transpose(), w.ineq_rhs[r])),
        )
        .collect();
    if rows.is_empty() || free.is_empty() {
        return;
    }
    let m = DMatrix::from_fn(rows.len(), free.len(), |a, k| rows[a].0[free[k]]);
    let r = DVector::from_fn(rows.len(), |a, _| rows[a].1 - rows[a].0.dot(x));
    if r.amax() == 0.0 {
        return;
    }
    let svd = m.svd(true, true);
    let tol = 1e-12 * svd.singular_values.amax();
    if let Ok(dx) = svd.solve(&r, tol) {
        for (k, &i) in free.iter().enumerate() {
            x[i] += dx[k];
        }
    }
}

/// Eigenpairs of a symmetric matrix read off its SVD. `SymmetricEigen`
/// occasionally returns a decomposition that does not reproduce the matrix.
fn symmetric_decomposition(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("left singular vectors");
    let v_t = svd.v_t.expect("right singular vectors");
    let vecs = v_t.transpose();
    let vals = DVector::from_fn(svd.singular_values.len(), |k, _| {
        let s = svd.singular_values[k];
        if u.column(k).dot(&vecs.column(k)) < 0.0 {
            -s
        } else {
            s
        }
    });
    (vals, vecs)
}

/// Returns the status, the point, the iteration count and the equality
/// multipliers (zero unless optimal).
fn active_set(w: &Work, mut x: DVector<f64>, max_iter: usize) -> (QpStatus, DVector<f64>, usize, DVector<f64>) {
    let n = x.len();
    let me = w.eq.nrows();
    let mi = w.ineq.nrows();

    let mut bound = vec![BoundState::Free; n];
    let mut basis = RowBasis { basis: Vec::new() };
    let mut eq_work = Vec::new();
    for r in 0..me {
        if basis.try_add(w.eq.row(r).transpose()) {
            eq_work.push(r);
        }
    }
    for i in 0..n {
        if w.lo[i] == w.hi[i] {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            if basis.try_add(e) {
                bound[i] = BoundState::Fixed;
                x[i] = w.lo[i];
            }
        }
    }
    for i in 0..n {
        if bound[i] != BoundState::Free {
            continue;
        }
        let state = if x[i] == w.lo[i] {
            BoundState::Lower
        } else if x[i] == w.hi[i] {
            BoundState::Upper
        } else {
            continue;
        };
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        if basis.try_add(e) {
            bound[i] = state;
        }
    }
    let mut in_work = vec![false; mi];
    for r in 0..mi {
        let res = w.ineq.row(r).dot(&x.transpose()) - w.ineq_rhs[r];
        if res.abs() <= 1e-12 * (1.0 + w.ineq_rhs[r].abs()) && basis.try_add(w.ineq.row(r).transpose()) {
            in_work[r] = true;
        }
    }
    drop(basis);
    project_onto_working_set(w, &mut x, &eq_work, &in_work, &bound);

    let grad_scale = 1.0 + w.c.rows(0, w.n_orig).amax();
    let mult_tol = 1e-10 * grad_scale;

    for iter in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| bound[i] == BoundState::Free).collect();
        let rows: Vec<(bool, usize)> = eq_work
            .iter()
            .map(|&r| (true, r))
            .chain((0..mi).filter(|&r| in_work[r]).map(|r| (false, r)))
            .collect();
        let nf = free.len();
        let nw = rows.len();
        let row_of = |&(is_eq, r): &(bool, usize)| if is_eq { w.eq.row(r) } else { w.ineq.row(r) };

        let g = &w.h * &x + &w.c;
        let g_free = DVector::from_fn(nf, |k, _| g[free[k]]);

        // Null space of the working rows restricted to free columns.
        let mut aug = DMatrix::zeros(nf, nw + nf);
        for (j, row) in rows.iter().enumerate() {
            let rv = row_of(row);
            for (k, &i) in free.iter().enumerate() {
                aug[(k, j)] = rv[i];
            }
        }
        for k in 0..nf {
            aug[(k, nw + k)] = 1.0;
        }
        let (q, r) = if nf > 0 {
            let qr = aug.qr();
            (qr.q(), qr.r())
        } else {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, nw))
        };
        let nz = nf.saturating_sub(nw);
        let z = q.columns(nw.min(nf), nz).into_owned();

        let mut p = DVector::zeros(n);
        let mut ray = false;
        if nz > 0 {
            let hff = DMatrix::from_fn(nf, nf, |a, b| w.h[(free[a], free[b])]);
            let hz = z.transpose() * &hff * &z;
            let gz = z.transpose() * &g_free;
            let (vals, vecs) = symmetric_decomposition(hz);
            let lmax = vals.amax();
            let flat = 1e-13 * lmax.max(1.0);
            let mut d_newton = DVector::zeros(nz);
            let mut d_ray = DVector::zeros(nz);
            for k in 0..nz {
                let v = vecs.column(k);
                let proj = v.dot(&gz);
                let lam = vals[k];
                if lam > flat {
                    d_newton.axpy(-proj / lam, &v, 1.0);
                } else {
                    d_ray.axpy(-proj, &v, 1.0);
                }
            }
            let dz = if d_ray.amax() > 1e-11 * grad_scale {
                ray = true;
                d_ray
            } else {
                d_newton
            };
            let pf = &z * dz;
            for (k, &i) in free.iter().enumerate() {
                p[i] = pf[k];
            }
        }

        let xscale = 1.0 + x.amax();
        if !ray && p.amax() <= 1e-13 * xscale {
            // Stationary on the working set: check multipliers.
            let lambda = if nw > 0 {
                let r1 = r.view((0, 0), (nw, nw)).into_owned();
                let q1 = q.columns(0, nw);
                let rhs = -(q1.transpose() * &g_free);
                r1.solve_upper_triangular(&rhs).unwrap_or_else(|| DVector::zeros(nw))
            } else {
                DVector::zeros(0)
            };
            let mut aw_t_lambda = DVector::zeros(n);
            for (j, row) in rows.iter().enumerate() {
                aw_t_lambda.axpy(lambda[j], &row_of(row).transpose(), 1.0);
            }
            let mut worst: Option<(usize, f64)> = None;
            let mut consider = |idx: usize, m: f64| {
                if m < -mult_tol && worst.is_none_or(|(_, wm)| m < wm) {
                    worst = Some((idx, m));
                }
            };
            for (j, &(is_eq, rr)) in rows.iter().enumerate() {
                if !is_eq {
                    consider(rr, lambda[j]);
                }
            }
            for i in 0..n {
                let reduced = g[i] + aw_t_lambda[i];
                match bound[i] {
                    BoundState::Lower => consider(mi + i, reduced),
                    BoundState::Upper => consider(mi + i, -reduced),
                    _ => {}
                }
            }
            match worst {
                None => {
                    let mut eq_mult = DVector::zeros(me);
                    for (j, &(is_eq, r)) in rows.iter().enumerate() {
                        if is_eq {
                            eq_mult[r] = lambda[j];
                        }
                    }
                    return (QpStatus::Optimal, x, iter, eq_mult);
                }
                Some((idx, _)) if idx < mi => in_work[idx] = false,
                Some((idx, _)) => bound[idx - mi] = BoundState::Free,
            }
            continue;
        }

        // Ratio test.
        let pnorm = p.amax();
        let mut t_best = if ray { f64::INFINITY } else { 1.0 };
        let mut blocking: Option<usize> = None;
        for rr in 0..mi {
            if in_work[rr] {
                continue;
            }
            let a = w.ineq.row(rr);
            let ap = a.dot(&p.transpose());
            if ap <= 1e-12 * pnorm * a.amax() {
                continue;
            }
            let slack = w.ineq_rhs[rr] - a.dot(&x.transpose());
            let t = (slack / ap).max(0.0);
            if t < t_best {
                t_best = t;
                blocking = Some(rr);
            }
        }
        for i in 0..n {
            if bound[i] != BoundState::Free || p[i] == 0.0 {
                continue;
            }
            if p[i].abs() <= 1e-12 * pnorm {
                continue;
            }
            let t = if p[i] < 0.0 {
                if w.lo[i] == f64::NEG_INFINITY {
                    continue;
                }
                ((w.lo[i] - x[i]) / p[i]).max(0.0)
            } else {
                if w.hi[i] == f64::INFINITY {
                    continue;
                }
                ((w.hi[i] - x[i]) / p[i]).max(0.0)
            };
            if t < t_best {
                t_best = t;
                blocking = Some(mi + i);
            }
        }
        if t_best.is_infinite() {
            return (QpStatus::Unbounded, x, iter, DVector::zeros(me));
        }
        x.axpy(t_best, &p, 1.0);
        if let Some(idx) = blocking {
            if idx < mi {
                in_work[idx] = true;
            } else {
                let i = idx - mi;
                if p[i] < 0.0 {
                    bound[i] = BoundState::Lower;
                    x[i] = w.lo[i];
                } else {
                    bound[i] = BoundState::Upper;
                    x[i] = w.hi[i];
                }
            }
        }
    }
    (QpStatus::IterationLimit, x, max_iter, DVector::zeros(me))
}
