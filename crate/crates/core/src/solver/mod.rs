//! Deterministic solver for mixed-binary programs with square equalities.
//!
//! Layers, bottom up:
//!
//! * [`qp`]: a dense primal active-set method for convex QPs.
//! * node compilation: fixes binaries, eliminates Hankel weights in closed
//!   form and either relaxes or linearizes each `z = p²`.
//! * [`solve_sqp`]: trust-region sequential linearization of the squares for
//!   one binary assignment.
//! * [`solve_minlp`]: depth-first implicit enumeration of binary sequences
//!   for small programs, best-first branch and bound otherwise, both pruned
//!   by the convex relaxation.

mod compile;
pub mod qp;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::problems::Program;
use compile::{Compiled, NodeSolution, SquareMode};
use qp::{QpSettings, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub sqp_max_iter: usize,
    pub sqp_trust_radius: f64,
    pub sqp_shrink: f64,
    pub bnb_node_limit: usize,
    /// Programs with at most this many binaries are searched depth first in
    /// lexicographic order.
    pub enumerate_threshold: usize,
    pub debug_tree: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            opt_tol: 1e-8,
            sqp_max_iter: 50,
            sqp_trust_radius: 0.5,
            sqp_shrink: 0.5,
            bnb_node_limit: 100_000,
            enumerate_threshold: 12,
            debug_tree: false,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> crate::Result<()> {
        let positive = [self.feas_tol, self.opt_tol, self.sqp_trust_radius];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(crate::Error::param(
                "solver tolerances and trust radius must be positive",
            ));
        }
        if !(self.sqp_shrink > 0.0 && self.sqp_shrink < 1.0) {
            return Err(crate::Error::param("sqp_shrink must lie in (0, 1)"));
        }
        if self.sqp_max_iter == 0 || self.bnb_node_limit == 0 {
            return Err(crate::Error::param("iteration and node limits must be positive"));
        }
        Ok(())
    }

    fn qp(&self) -> QpSettings {
        QpSettings {
            feas_tol: (self.feas_tol * 0.1).min(1e-9),
            ..QpSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: usize,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    pub max_residual: f64,
}

/// One node of the search tree, recorded when `debug_tree` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    /// One character per binary: `0`, `1` or `-` for free.
    pub fixing: String,
    pub bound: f64,
    pub incumbent: Option<f64>,
    pub pruned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: f64,
    /// Values in program variable order; empty unless a point was found.
    pub values: Vec<f64>,
    pub stats: SolveStats,
    pub tree: Option<Vec<TreeNode>>,
}

impl SolveResult {
    fn without_point(status: SolveStatus, stats: SolveStats) -> Self {
        Self {
            status,
            objective: f64::INFINITY,
            values: Vec::new(),
            stats,
            tree: None,
        }
    }

    pub fn has_point(&self) -> bool {
        !self.values.is_empty()
    }

    /// Variable assignment keyed by name.
    pub fn assignment(&self, program: &Program) -> BTreeMap<String, f64> {
        program
            .vars
            .iter()
            .zip(&self.values)
            .map(|(v, &x)| (v.name.clone(), x))
            .collect()
    }

    pub fn value(&self, program: &Program, name: &str) -> Option<f64> {
        program.index_of(name).and_then(|i| self.values.get(i).copied())
    }
}

fn square_residual(program: &Program, x: &[f64]) -> f64 {
    program
        .square_eqs
        .iter()
        .map(|s| (x[s.z] - x[s.p] * x[s.p]).abs())
        .fold(0.0, f64::max)
}

fn bool_fixing(fixing: &[bool]) -> Vec<Option<bool>> {
    fixing.iter().map(|&b| Some(b)).collect()
}

fn node_result(program: &Program, node: NodeSolution, stats: SolveStats) -> SolveResult {
    match node.status {
        QpStatus::Optimal => SolveResult {
            status: SolveStatus::Optimal,
            objective: node.objective,
            stats: SolveStats {
                max_residual: program.max_residual(&node.x),
                ..stats
            },
            values: node.x,
            tree: None,
        },
        QpStatus::Infeasible => SolveResult::without_point(SolveStatus::Infeasible, stats),
        QpStatus::Unbounded | QpStatus::IterationLimit => {
            SolveResult::without_point(SolveStatus::IterationLimit, stats)
        }
    }
}

/// Solves the convex QP obtained by fixing all binaries and replacing each
/// square equality `z = p²` by its linearization at `points[i]`.
pub fn solve_qp(program: &Program, fixing: &[bool], points: &[f64], settings: &SolverSettings) -> SolveResult {
    let compiled = Compiled::new(program);
    let node = compiled.solve_node(
        &bool_fixing(fixing),
        SquareMode::Linearize {
            points,
            radius: f64::INFINITY,
            curvature: &[],
        },
        None,
        &settings.qp(),
    );
    let stats = SolveStats {
        nodes: 1,
        qp_iterations: node.iterations,
        ..SolveStats::default()
    };
    node_result(program, node, stats)
}

/// Lower bound from the convex relaxation under a partial binary fixing;
/// `+∞` when the relaxation is infeasible.
pub fn relax_lower_bound(program: &Program, fixing: &[Option<bool>], settings: &SolverSettings) -> f64 {
    let compiled = Compiled::new(program);
    let node = compiled.solve_node(fixing, SquareMode::Relax, None, &settings.qp());
    if node.status == QpStatus::Optimal {
        node.objective
    } else {
        f64::INFINITY
    }
}

/// Trust-region SQP on the square equalities with all binaries fixed.
/// `warm` is a full assignment; without one the relaxation supplies it.
pub fn solve_sqp(program: &Program, fixing: &[bool], warm: Option<&[f64]>, settings: &SolverSettings) -> SolveResult {
    let compiled = Compiled::new(program);
    let fixing = bool_fixing(fixing);
    let mut stats = SolveStats::default();
    let start = match warm {
        Some(w) => w.to_vec(),
        None => {
            let relax = compiled.solve_node(&fixing, SquareMode::Relax, None, &settings.qp());
            stats.qp_iterations += relax.iterations;
            if relax.status != QpStatus::Optimal {
                return SolveResult::without_point(SolveStatus::Infeasible, stats);
            }
            relax.x
        }
    };
    sqp(&compiled, &fixing, &start, settings, &mut stats)
}

/// Consecutive unsolvable linearizations tolerated before giving up.
const MAX_SQP_FAILURES: usize = 4;
/// Fraction of the predicted merit decrease a step has to realize.
const ACCEPT_RATIO: f64 = 1e-4;

struct Iterate {
    x: Vec<f64>,
    objective: f64,
    /// `Σ |z − p²|`.
    violation: f64,
    multipliers: Vec<f64>,
}

fn square_violation(program: &Program, x: &[f64]) -> f64 {
    program
        .square_eqs
        .iter()
        .map(|s| (x[s.z] - x[s.p] * x[s.p]).abs())
        .sum()
}

/// Trust-region SQP with an ℓ1 merit function. Each subproblem linearizes
/// `z = p²` at the current point and adds the Lagrangian curvature
/// `−λ·(p − p̂)²` wherever it is convex.
fn sqp(
    compiled: &Compiled<'_>,
    fixing: &[Option<bool>],
    start: &[f64],
    settings: &SolverSettings,
    stats: &mut SolveStats,
) -> SolveResult {
    let program = compiled.program;
    let qp_settings = settings.qp();
    if program.square_eqs.is_empty() {
        let mode = SquareMode::Linearize {
            points: &[],
            radius: 0.0,
            curvature: &[],
        };
        let node = compiled.solve_node(fixing, mode, Some(start), &qp_settings);
        stats.qp_iterations += node.iterations;
        return node_result(program, node, *stats);
    }
    let clamp = |i: usize, v: f64| v.clamp(program.vars[i].lower, program.vars[i].upper);
    let mut points: Vec<f64> = program.square_eqs.iter().map(|s| clamp(s.p, start[s.p])).collect();
    let mut radius = settings.sqp_trust_radius;
    let mut warm = start.to_vec();
    let mut current: Option<Iterate> = None;
    let mut penalty = 1.0f64;
    let mut failures = 0;
    for _ in 0..settings.sqp_max_iter {
        stats.sqp_iterations += 1;
        let curvature: Vec<f64> = match &current {
            Some(c) => c.multipliers.iter().map(|&l| (-l).max(0.0)).collect(),
            None => vec![0.0; points.len()],
        };
        let mode = SquareMode::Linearize {
            points: &points,
            radius,
            curvature: &curvature,
        };
        let node = compiled.solve_node(fixing, mode, Some(&warm), &qp_settings);
        stats.qp_iterations += node.iterations;
        if node.status != QpStatus::Optimal {
            failures += 1;
            radius *= settings.sqp_shrink;
            if failures > MAX_SQP_FAILURES || radius < 1e-12 {
                break;
            }
            continue;
        }
        failures = 0;
        let violation = square_violation(program, &node.x);
        let residual = square_residual(program, &node.x);
        let moves: Vec<f64> = program
            .square_eqs
            .iter()
            .zip(&points)
            .map(|(s, &p)| node.x[s.p] - p)
            .collect();
        let step = moves.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let model = node.objective + curvature.iter().zip(&moves).map(|(w, d)| w * d * d).sum::<f64>();
        penalty = penalty.max(2.0 * node.square_multipliers.iter().fold(0.0f64, |m, l| m.max(l.abs())));
        let (accept, ratio) = match &current {
            None => (true, 1.0),
            Some(c) => {
                let merit = c.objective + penalty * c.violation;
                let predicted = merit - model;
                let actual = merit - (node.objective + penalty * violation);
                let noise = 1e-12 * (1.0 + merit.abs());
                if predicted <= noise {
                    (actual >= -noise, 1.0)
                } else {
                    (actual >= ACCEPT_RATIO * predicted, actual / predicted)
                }
            }
        };
        if !accept {
            radius = settings.sqp_shrink * if step > 0.0 { radius.min(step) } else { radius };
            if radius < 1e-12 {
                break;
            }
            continue;
        }
        if ratio > 0.75 && step >= 0.5 * radius {
            radius = (2.0 * radius).min(settings.sqp_trust_radius);
        }
        let change = current
            .as_ref()
            .map(|c| (node.objective - c.objective).abs() / (1.0 + c.objective.abs()))
            .unwrap_or(f64::INFINITY);
        for (k, s) in program.square_eqs.iter().enumerate() {
            points[k] = node.x[s.p];
        }
        warm.clone_from(&node.x);
        let done = residual <= settings.feas_tol && (step <= settings.opt_tol || change <= settings.opt_tol);
        current = Some(Iterate {
            x: node.x,
            objective: node.objective,
            violation,
            multipliers: node.square_multipliers,
        });
        if done {
            break;
        }
    }
    match current {
        Some(c) => {
            let residual = square_residual(program, &c.x);
            stats.max_residual = program.max_residual(&c.x);
            let status = if residual <= settings.feas_tol {
                SolveStatus::Optimal
            } else {
                SolveStatus::IterationLimit
            };
            SolveResult {
                status,
                objective: c.objective,
                values: c.x,
                stats: *stats,
                tree: None,
            }
        }
        None => SolveResult::without_point(SolveStatus::Infeasible, *stats),
    }
}

struct Search<'a, 'p> {
    compiled: &'a Compiled<'p>,
    settings: &'a SolverSettings,
    stats: SolveStats,
    incumbent: Option<(Vec<f64>, f64, Vec<bool>)>,
    tree: Option<Vec<TreeNode>>,
    limit_hit: bool,
}

impl Search<'_, '_> {
    fn tie(&self, value: f64) -> f64 {
        self.settings.opt_tol * (1.0 + value.abs())
    }

    fn prunable(&self, bound: f64) -> bool {
        match &self.incumbent {
            Some((_, f, _)) => bound > f + self.tie(*f),
            None => false,
        }
    }

    fn relax(&mut self, fixing: &[Option<bool>], parent: Option<usize>) -> (NodeSolution, usize) {
        let node = self
            .compiled
            .solve_node(fixing, SquareMode::Relax, None, &self.settings.qp());
        self.stats.nodes += 1;
        self.stats.qp_iterations += node.iterations;
        let id = self.stats.nodes - 1;
        let bound = if node.status == QpStatus::Optimal {
            node.objective
        } else {
            f64::INFINITY
        };
        let pruned = self.prunable(bound);
        let incumbent = self.incumbent.as_ref().map(|i| i.1);
        if let Some(tree) = &mut self.tree {
            tree.push(TreeNode {
                id,
                parent,
                fixing: fixing
                    .iter()
                    .map(|f| match f {
                        Some(true) => '1',
                        Some(false) => '0',
                        None => '-',
                    })
                    .collect(),
                bound,
                incumbent,
                pruned,
            });
        }
        (node, id)
    }

    /// Runs SQP for a complete assignment and updates the incumbent:
    /// strictly better beyond the tie tolerance, or tied and
    /// lexicographically smaller.
    fn leaf(&mut self, assignment: Vec<bool>, warm: &[f64]) {
        let fixing = bool_fixing(&assignment);
        let res = sqp(self.compiled, &fixing, warm, self.settings, &mut self.stats);
        if res.status != SolveStatus::Optimal {
            return;
        }
        let better = match &self.incumbent {
            None => true,
            Some((_, f, bits)) => {
                let tie = self.tie(*f);
                res.objective < f - tie || (res.objective <= f + tie && assignment < *bits)
            }
        };
        if better {
            self.incumbent = Some((res.values, res.objective, assignment));
        }
    }

    fn over_limit(&mut self) -> bool {
        if self.stats.nodes >= self.settings.bnb_node_limit {
            self.limit_hit = true;
        }
        self.limit_hit
    }

    fn depth_first(&mut self, fixing: &mut Vec<Option<bool>>, parent: Option<usize>) {
        if self.over_limit() {
            return;
        }
        let (node, id) = self.relax(fixing, parent);
        if node.status != QpStatus::Optimal || self.prunable(node.objective) {
            return;
        }
        let depth = fixing.iter().take_while(|f| f.is_some()).count();
        if depth == fixing.len() {
            let bits = fixing.iter().map(|f| f.unwrap()).collect();
            self.leaf(bits, &node.x);
            return;
        }
        let frac = node.x[self.compiled.binaries[depth]];
        let order = if frac > 0.5 { [true, false] } else { [false, true] };
        for value in order {
            fixing[depth] = Some(value);
            self.depth_first(fixing, Some(id));
            fixing[depth] = None;
        }
    }

    fn best_first(&mut self) {
        let nb = self.compiled.binaries.len();
        let mut open = BinaryHeap::new();
        let root = vec![None; nb];
        self.push_open(&mut open, root, None);
        while let Some(Open {
            bound,
            fixing,
            node,
            id,
            ..
        }) = open.pop()
        {
            if self.prunable(bound) {
                continue;
            }
            let fractional = (0..nb)
                .filter(|&k| fixing[k].is_none())
                .map(|k| (k, node.x[self.compiled.binaries[k]]))
                .filter(|&(_, v)| v > self.settings.feas_tol && v < 1.0 - self.settings.feas_tol)
                .min_by(|a, b| {
                    (a.1 - 0.5)
                        .abs()
                        .partial_cmp(&(b.1 - 0.5).abs())
                        .unwrap_or(Ordering::Equal)
                        .then(a.0.cmp(&b.0))
                });
            let branch = match fractional {
                Some((k, _)) => Some(k),
                None => {
                    let bits: Vec<bool> = (0..nb)
                        .map(|k| fixing[k].unwrap_or(node.x[self.compiled.binaries[k]] > 0.5))
                        .collect();
                    self.leaf(bits, &node.x);
                    if self.prunable(bound) || fixing.iter().all(Option::is_some) {
                        None
                    } else {
                        fixing.iter().position(Option::is_none)
                    }
                }
            };
            let Some(k) = branch else { continue };
            for value in [false, true] {
                if self.over_limit() {
                    return;
                }
                let mut child = fixing.clone();
                child[k] = Some(value);
                self.push_open(&mut open, child, Some(id));
            }
        }
    }

    fn push_open(&mut self, open: &mut BinaryHeap<Open>, fixing: Vec<Option<bool>>, parent: Option<usize>) {
        let (node, id) = self.relax(&fixing, parent);
        if node.status == QpStatus::Optimal && !self.prunable(node.objective) {
            open.push(Open {
                bound: node.objective,
                id,
                fixing,
                node,
            });
        }
    }
}

struct Open {
    bound: f64,
    id: usize,
    fixing: Vec<Option<bool>>,
    node: NodeSolution,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    /// Reversed so the max-heap pops the smallest `(bound, id)`.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

/// Globally solves a mixed-binary program up to the SQP's local accuracy on
/// the square equalities.
pub fn solve_minlp(program: &Program, settings: &SolverSettings) -> SolveResult {
    let compiled = Compiled::new(program);
    let mut search = Search {
        compiled: &compiled,
        settings,
        stats: SolveStats::default(),
        incumbent: None,
        tree: settings.debug_tree.then(Vec::new),
        limit_hit: false,
    };
    let nb = compiled.binaries.len();
    if nb <= settings.enumerate_threshold {
        let mut fixing = vec![None; nb];
        search.depth_first(&mut fixing, None);
    } else {
        search.best_first();
    }
    let Search {
        stats,
        incumbent,
        tree,
        limit_hit,
        ..
    } = search;
    let mut result = match incumbent {
        Some((x, f, _)) => SolveResult {
            status: if limit_hit {
                SolveStatus::IterationLimit
            } else {
                SolveStatus::Optimal
            },
            objective: f,
            stats: SolveStats {
                max_residual: program.max_residual(&x),
                ..stats
            },
            values: x,
            tree: None,
        },
        None => SolveResult::without_point(
            if limit_hit {
                SolveStatus::IterationLimit
            } else {
                SolveStatus::Infeasible
            },
            stats,
        ),
    };
    result.tree = tree;
    result
}
