//! Receding-horizon simulation and evaluation.
//!
//! [`run_closed_loop`] drives the true plant with one of the three
//! controllers using prescient forecast windows. Each plan is kept so that
//! [`prediction_errors`] can replay the full planned battery power on a twin
//! plant started from the measured state and compare with the predicted
//! states.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{
    self, balance_residual, battery_step, capacity_violation, stage_cost, ControlInput, Exogenous, GridParams,
    PlantState,
};
use crate::problems::{self, ControllerKind, History, MpcConfig, MpcProgram};
use crate::scenario::{fmt_f64, IoDataset, Profile};
use crate::solver::{solve_minlp, SolveResult, SolveStats, SolveStatus, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub params: GridParams,
    pub mpc: MpcConfig,
    pub solver: SolverSettings,
    /// Number of closed-loop steps `T`.
    pub steps: usize,
    pub x0: f64,
    pub delta0: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            params: GridParams::default(),
            mpc: MpcConfig::default(),
            solver: SolverSettings::default(),
            steps: 1344,
            x0: 3.5,
            delta0: false,
        }
    }
}

/// One applied step of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub input: ControlInput,
    pub exo: Exogenous,
    /// Stored energy measured before the input is applied.
    pub x: f64,
    pub stage_cost: f64,
}

/// A controller's plan at one step: battery power for `k ∈ [0, L−1]` and the
/// predicted states it exposes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub step: usize,
    pub p_s: Vec<f64>,
    /// `(k, x*(k|t))` with `k >= 1`.
    pub x: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub kind: ControllerKind,
    pub rows: Vec<TraceRow>,
    pub final_state: PlantState,
    /// Plans of the optimized steps; bootstrap steps have none.
    pub plans: Vec<PlanRecord>,
    /// Solver statistics per optimized step, aligned with `plans`.
    pub stats: Vec<SolveStats>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// State after step `t`.
    pub fn state_after(&self, t: usize) -> f64 {
        self.rows.get(t + 1).map_or(self.final_state.x, |r| r.x)
    }

    pub fn total_cost(&self) -> f64 {
        self.rows.iter().map(|r| r.stage_cost).sum()
    }
}

/// Observer called after every optimized step, e.g. to dump programs.
pub type StepObserver<'a> = dyn FnMut(usize, &MpcProgram, &SolveResult) + 'a;

pub fn run_closed_loop(
    kind: ControllerKind,
    profile: &Profile,
    dataset: Option<&IoDataset>,
    cfg: &LoopConfig,
) -> Result<Trace> {
    run_closed_loop_with(kind, profile, dataset, cfg, &mut |_, _, _| {})
}

/// Runs `cfg.steps` receding-horizon steps. The first `ñ` steps apply
/// [`plant::hold_input`] for every controller so that data-driven
/// controllers have a measurement history and all traces stay comparable.
pub fn run_closed_loop_with(
    kind: ControllerKind,
    profile: &Profile,
    dataset: Option<&IoDataset>,
    cfg: &LoopConfig,
    observer: &mut StepObserver<'_>,
) -> Result<Trace> {
    let params = &cfg.params;
    params.validate()?;
    cfg.mpc.validate()?;
    cfg.solver.validate()?;
    if !cfg.x0.is_finite() {
        return Err(Error::param("initial state must be finite"));
    }
    if kind.is_data_driven() && dataset.is_none() {
        return Err(Error::param(format!("controller {} requires a dataset", kind.name())));
    }
    let l = cfg.mpc.l;
    if cfg.steps > 0 && profile.steps() + 1 < cfg.steps + l {
        return Err(Error::param(format!(
            "profile has {} steps, {} closed-loop steps with horizon {l} need {}",
            profile.steps(),
            cfg.steps,
            cfg.steps + l - 1
        )));
    }

    let mut state = PlantState {
        x: cfg.x0,
        delta_prev: cfg.delta0,
    };
    let mut trace = Trace {
        kind,
        rows: Vec::with_capacity(cfg.steps),
        final_state: state,
        plans: Vec::new(),
        stats: Vec::new(),
    };
    for t in 0..cfg.steps {
        let exo = profile.exogenous(t);
        let input = if t < cfg.mpc.n_tilde {
            plant::hold_input(&exo, params).ok_or_else(|| Error::Runtime {
                step: t,
                message: "no balanced input exists during bootstrap".into(),
            })?
        } else {
            let history = History {
                pairs: trace.rows[t - cfg.mpc.n_tilde..]
                    .iter()
                    .map(|r| (r.input.p_s, r.x))
                    .collect(),
                delta_m: state.delta_prev,
                x_m: state.x,
            };
            let forecast = profile.window(t, l).expect("profile length checked");
            let mp = problems::build(kind, &history, dataset, &forecast, params, &cfg.mpc)?;
            let res = solve_minlp(&mp.program, &cfg.solver);
            observer(t, &mp, &res);
            if res.status != SolveStatus::Optimal {
                return Err(Error::Runtime {
                    step: t,
                    message: format!(
                        "{} controller: solver status {:?} after {} nodes (max residual {:.3e})",
                        kind.name(),
                        res.status,
                        res.stats.nodes,
                        res.stats.max_residual
                    ),
                });
            }
            let v = &res.values;
            let lay = &mp.layout;
            trace.plans.push(PlanRecord {
                step: t,
                p_s: lay.p_s.iter().map(|&i| v[i]).collect(),
                x: lay.x_plan.iter().map(|&(k, i)| (k, v[i])).collect(),
            });
            trace.stats.push(res.stats);
            ControlInput {
                p_t: v[lay.p_t[0]],
                p_s: v[lay.p_s[0]],
                p_r: v[lay.p_r[0]],
                delta: v[lay.delta[0]] > 0.5,
            }
        };
        let cost = stage_cost(&input, state.delta_prev, params);
        trace.rows.push(TraceRow {
            input,
            exo,
            x: state.x,
            stage_cost: cost,
        });
        state = plant::step(&state, &input, &exo, params);
    }
    trace.final_state = state;
    Ok(trace)
}

/// Twin-plant prediction errors grouped by prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionErrors {
    /// Prediction steps, ascending.
    pub ks: Vec<usize>,
    /// `samples[i]` holds `|x_twin(k) − x*(k|t)|` over all plans for `ks[i]`.
    pub samples: Vec<Vec<f64>>,
}

/// Applies each plan's full battery-power sequence to a copy of the plant
/// started from the measured state and records the deviation from the
/// predicted states.
pub fn prediction_errors(trace: &Trace, params: &GridParams) -> PredictionErrors {
    let mut ks: Vec<usize> = trace.plans.iter().flat_map(|p| p.x.iter().map(|&(k, _)| k)).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut samples = vec![Vec::new(); ks.len()];
    for plan in &trace.plans {
        let mut twin = Vec::with_capacity(plan.p_s.len() + 1);
        twin.push(trace.rows[plan.step].x);
        for &p in &plan.p_s {
            let next = battery_step(*twin.last().unwrap(), p, params);
            twin.push(next);
        }
        for &(k, x) in &plan.x {
            let slot = ks.binary_search(&k).unwrap();
            samples[slot].push((twin[k] - x).abs());
        }
    }
    PredictionErrors { ks, samples }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationMetrics {
    /// Mean over steps of the capacity violation of the state reached.
    pub average_violation: f64,
    pub max_violation: f64,
    pub max_balance_residual: f64,
}

pub fn violation_metrics(trace: &Trace, params: &GridParams) -> ViolationMetrics {
    let n = trace.len();
    if n == 0 {
        return ViolationMetrics {
            average_violation: 0.0,
            max_violation: 0.0,
            max_balance_residual: 0.0,
        };
    }
    let per_step: Vec<f64> = (0..n)
        .map(|t| capacity_violation(trace.state_after(t), params))
        .collect();
    ViolationMetrics {
        average_violation: per_step.iter().sum::<f64>() / n as f64,
        max_violation: per_step.iter().copied().fold(0.0, f64::max),
        max_balance_residual: trace
            .rows
            .iter()
            .map(|r| balance_residual(&r.input, &r.exo))
            .fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub k: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Lower whisker: smallest sample within `1.5·IQR` below `q1`.
    pub lo: f64,
    pub hi: f64,
    pub outliers: usize,
    pub n: usize,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Box-plot numbers of one sample group. Quartiles are medians of the lower
/// and upper halves, the overall median excluded for odd counts.
pub fn box_stats_of(k: usize, samples: &[f64]) -> Result<BoxStats> {
    if samples.is_empty() {
        return Err(Error::param(format!("no samples for prediction step {k}")));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::param(format!("NaN sample for prediction step {k}")));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = median_sorted(&v);
    let (q1, q3) = if n == 1 {
        (v[0], v[0])
    } else {
        (median_sorted(&v[..n / 2]), median_sorted(&v[n.div_ceil(2)..]))
    };
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let lo = v.iter().copied().find(|&x| x >= fence_lo).unwrap_or(q1);
    let hi = v.iter().rev().copied().find(|&x| x <= fence_hi).unwrap_or(q3);
    let outliers = v.iter().filter(|&&x| x < lo || x > hi).count();
    Ok(BoxStats {
        k,
        median,
        q1,
        q3,
        lo,
        hi,
        outliers,
        n,
    })
}

pub fn box_stats(errors: &PredictionErrors) -> Result<Vec<BoxStats>> {
    errors
        .ks
        .iter()
        .zip(&errors.samples)
        .map(|(&k, s)| box_stats_of(k, s))
        .collect()
}

/// Recorded `(p_s, x)` pairs of the last `n` steps, for building a dataset
/// from a closed-loop run instead of an excitation phase.
pub fn harvest_dataset(trace: &Trace, n: usize) -> Result<IoDataset> {
    if n == 0 || n > trace.len() {
        return Err(Error::param(format!(
            "cannot harvest {n} samples from a trace of {} steps",
            trace.len()
        )));
    }
    let rows = &trace.rows[trace.len() - n..];
    let u: Vec<f64> = rows.iter().map(|r| r.input.p_s).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.x).collect();
    IoDataset::from_measurements(&u, &y)
}

/// JSON run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub controller: ControllerKind,
    pub seed: Option<u64>,
    pub steps: usize,
    pub total_cost: f64,
    pub metrics: ViolationMetrics,
    pub nodes: usize,
    pub sqp_iterations: usize,
    /// Prediction steps the plans expose.
    pub prediction_steps: Vec<usize>,
}

pub fn summarize(trace: &Trace, params: &GridParams, seed: Option<u64>) -> RunSummary {
    let mut ks: Vec<usize> = trace
        .plans
        .first()
        .map(|p| p.x.iter().map(|&(k, _)| k).collect())
        .unwrap_or_default();
    ks.sort_unstable();
    RunSummary {
        controller: trace.kind,
        seed,
        steps: trace.len(),
        total_cost: trace.total_cost(),
        metrics: violation_metrics(trace, params),
        nodes: trace.stats.iter().map(|s| s.nodes).sum(),
        sqp_iterations: trace.stats.iter().map(|s| s.sqp_iterations).sum(),
        prediction_steps: ks,
    }
}

const TRACE_HEADER: [&str; 9] = ["step", "p_t", "p_s", "p_r", "w_r", "w_d", "x", "delta", "stage_cost"];
const PLAN_HEADER: [&str; 4] = ["step", "k", "p_s", "x"];
const BOX_HEADER: [&str; 8] = ["k", "median", "q1", "q3", "lo", "hi", "outliers", "n"];

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for (t, r) in rows.iter().enumerate() {
        w.write_record([
            t.to_string(),
            fmt_f64(r.input.p_t),
            fmt_f64(r.input.p_s),
            fmt_f64(r.input.p_r),
            fmt_f64(r.exo.w_r),
            fmt_f64(r.exo.w_d),
            fmt_f64(r.x),
            u8::from(r.input.delta).to_string(),
            fmt_f64(r.stage_cost),
        ])?;
    }
    flush(w)
}

fn ingest(row: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        row,
        message: message.into(),
    }
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| ingest(0, e.to_string()))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(ingest(0, format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, k: usize, i: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    record[i]
        .parse::<T>()
        .map_err(|e| ingest(k, format!("column {name}: {e}")))
}

fn finite(v: f64, k: usize, name: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ingest(k, format!("column {name} is not finite")))
    }
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &TRACE_HEADER)?;
    let mut rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| ingest(k, e.to_string()))?;
        if record.len() != TRACE_HEADER.len() {
            return Err(ingest(
                k,
                format!("expected {} columns, found {}", TRACE_HEADER.len(), record.len()),
            ));
        }
        let step: usize = parse_field(&record, k, 0, "step")?;
        if step != k {
            return Err(ingest(k, format!("step index {step} is not monotone (expected {k})")));
        }
        let f = |i: usize| -> Result<f64> { finite(parse_field(&record, k, i, TRACE_HEADER[i])?, k, TRACE_HEADER[i]) };
        let delta = match &record[7] {
            "0" => false,
            "1" => true,
            other => return Err(ingest(k, format!("delta must be 0 or 1, found {other:?}"))),
        };
        rows.push(TraceRow {
            input: ControlInput {
                p_t: f(1)?,
                p_s: f(2)?,
                p_r: f(3)?,
                delta,
            },
            exo: Exogenous { w_r: f(4)?, w_d: f(5)? },
            x: f(6)?,
            stage_cost: f(8)?,
        });
    }
    Ok(rows)
}

/// One row per plan and prediction step `k ∈ [0, K]`; `p_s` or `x` is empty
/// where the plan has no value.
pub fn write_plans_csv<W: Write>(plans: &[PlanRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PLAN_HEADER)?;
    for plan in plans {
        let kmax = plan
            .x
            .iter()
            .map(|&(k, _)| k)
            .max()
            .unwrap_or(0)
            .max(plan.p_s.len().saturating_sub(1));
        for k in 0..=kmax {
            let p = plan.p_s.get(k).map(|&v| fmt_f64(v)).unwrap_or_default();
            let x = plan
                .x
                .iter()
                .find(|&&(kk, _)| kk == k)
                .map(|&(_, v)| fmt_f64(v))
                .unwrap_or_default();
            w.write_record([plan.step.to_string(), k.to_string(), p, x])?;
        }
    }
    flush(w)
}

pub fn read_plans_csv<R: Read>(reader: R) -> Result<Vec<PlanRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &PLAN_HEADER)?;
    let mut plans: Vec<PlanRecord> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| ingest(row, e.to_string()))?;
        if record.len() != PLAN_HEADER.len() {
            return Err(ingest(row, format!("expected 4 columns, found {}", record.len())));
        }
        let step: usize = parse_field(&record, row, 0, "step")?;
        let k: usize = parse_field(&record, row, 1, "k")?;
        let opt = |i: usize| -> Result<Option<f64>> {
            if record[i].is_empty() {
                Ok(None)
            } else {
                finite(parse_field(&record, row, i, PLAN_HEADER[i])?, row, PLAN_HEADER[i]).map(Some)
            }
        };
        let (p, x) = (opt(2)?, opt(3)?);
        let fresh = plans.last().is_none_or(|last| last.step != step);
        if fresh {
            if plans.last().is_some_and(|last| last.step > step) {
                return Err(ingest(row, format!("plan step {step} is not monotone")));
            }
            if k != 0 {
                return Err(ingest(row, format!("plan for step {step} must start at k = 0")));
            }
            plans.push(PlanRecord {
                step,
                p_s: Vec::new(),
                x: Vec::new(),
            });
        }
        let plan = plans.last_mut().unwrap();
        let expected = if fresh { 0 } else { plan_rows(plan) };
        if k != expected {
            return Err(ingest(
                row,
                format!("prediction step {k} out of order (expected {expected})"),
            ));
        }
        match p {
            Some(v) if plan.p_s.len() == k => plan.p_s.push(v),
            Some(_) => return Err(ingest(row, "p_s values must be contiguous from k = 0")),
            None => {}
        }
        if let Some(v) = x {
            if k == 0 {
                return Err(ingest(row, "predicted states start at k = 1"));
            }
            plan.x.push((k, v));
        }
    }
    Ok(plans)
}

fn plan_rows(plan: &PlanRecord) -> usize {
    let kx = plan.x.last().map_or(0, |&(k, _)| k + 1);
    kx.max(plan.p_s.len()).max(1)
}

/// Rebuilds a [`Trace`] from its CSV forms. The final state is replayed
/// from the last row through the plant; solver statistics are not stored.
pub fn trace_from_records(
    kind: ControllerKind,
    rows: Vec<TraceRow>,
    plans: Vec<PlanRecord>,
    params: &GridParams,
) -> Result<Trace> {
    if let Some(p) = plans.iter().find(|p| p.step >= rows.len()) {
        return Err(Error::param(format!("plan for step {} has no trace row", p.step)));
    }
    if let Some(p) = plans.iter().find(|p| p.x.iter().any(|&(k, _)| k > p.p_s.len())) {
        return Err(Error::param(format!(
            "plan for step {} predicts beyond its inputs",
            p.step
        )));
    }
    let final_state = match rows.last() {
        Some(r) => PlantState {
            x: battery_step(r.x, r.input.p_s, params),
            delta_prev: r.input.delta,
        },
        None => PlantState {
            x: f64::NAN,
            delta_prev: false,
        },
    };
    Ok(Trace {
        kind,
        rows,
        final_state,
        stats: vec![SolveStats::default(); plans.len()],
        plans,
    })
}

pub fn write_box_stats_csv<W: Write>(stats: &[BoxStats], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BOX_HEADER)?;
    for s in stats {
        w.write_record([
            s.k.to_string(),
            fmt_f64(s.median),
            fmt_f64(s.q1),
            fmt_f64(s.q3),
            fmt_f64(s.lo),
            fmt_f64(s.hi),
            s.outliers.to_string(),
            s.n.to_string(),
        ])?;
    }
    flush(w)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn save_trace_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    write_trace_csv(&trace.rows, create(path.as_ref())?)
}

pub fn save_plans_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    write_plans_csv(&trace.plans, create(path.as_ref())?)
}

pub fn save_box_stats_csv(stats: &[BoxStats], path: impl AsRef<Path>) -> Result<()> {
    write_box_stats_csv(stats, create(path.as_ref())?)
}

pub fn load_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    read_trace_csv(open(path.as_ref())?)
}

pub fn load_plans_csv(path: impl AsRef<Path>) -> Result<Vec<PlanRecord>> {
    read_plans_csv(open(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{collect_excitation_data, generate_profiles, ExcitationConfig, GenParams};

    fn row(x: f64) -> TraceRow {
        TraceRow {
            input: ControlInput {
                p_t: 0.5,
                p_s: 0.0,
                p_r: 0.5,
                delta: true,
            },
            exo: Exogenous { w_r: 0.5, w_d: -1.0 },
            x,
            stage_cost: 0.2,
        }
    }

    fn synthetic_trace(xs: &[f64], last: f64) -> Trace {
        Trace {
            kind: ControllerKind::Reference,
            rows: xs.iter().map(|&x| row(x)).collect(),
            final_state: PlantState {
                x: last,
                delta_prev: true,
            },
            plans: Vec::new(),
            stats: Vec::new(),
        }
    }

    #[test]
    fn box_stats_examples() {
        let s = box_stats_of(1, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (2.5, 1.5, 3.5));
        let s = box_stats_of(1, &[0.7; 6]).unwrap();
        assert_eq!([s.median, s.q1, s.q3, s.lo, s.hi], [0.7; 5]);
        assert_eq!(s.outliers, 0);
        let mut v = vec![0.0; 20];
        v.push(100.0);
        let s = box_stats_of(1, &v).unwrap();
        assert_eq!(s.outliers, 1);
        assert_eq!(s.hi, 0.0);
        assert!(box_stats_of(1, &[]).is_err());
    }

    #[test]
    fn violation_average_over_steps() {
        let mut xs = vec![3.0; 10];
        xs[4] = 6.6;
        let trace = synthetic_trace(&xs, 3.0);
        // states reached: xs[1..] and the final state, one of ten at 6.6
        let m = violation_metrics(&trace, &GridParams::default());
        assert!((m.average_violation - 0.01).abs() < 1e-12, "{}", m.average_violation);
        assert!((m.max_violation - 0.1).abs() < 1e-12);
        assert_eq!(m.max_balance_residual, 0.0);
    }

    #[test]
    fn trace_csv_round_trips_bytes() {
        let trace = synthetic_trace(&[3.0, 2.9, 2.8], 2.7);
        let mut first = Vec::new();
        write_trace_csv(&trace.rows, &mut first).unwrap();
        assert_eq!(String::from_utf8_lossy(&first).lines().count(), 4);
        let back = read_trace_csv(first.as_slice()).unwrap();
        assert_eq!(back, trace.rows);
        let mut second = Vec::new();
        write_trace_csv(&back, &mut second).unwrap();
        assert_eq!(first, second);

        let mut empty = Vec::new();
        write_trace_csv(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }

    #[test]
    fn plans_csv_round_trips() {
        let plans = vec![
            PlanRecord {
                step: 1,
                p_s: vec![0.1, 0.2, 0.3],
                x: vec![(1, 3.0), (2, 2.9), (3, 2.8)],
            },
            PlanRecord {
                step: 2,
                p_s: vec![0.4, 0.5, 0.6],
                x: vec![(1, 3.1), (2, 3.2)],
            },
        ];
        let mut buf = Vec::new();
        write_plans_csv(&plans, &mut buf).unwrap();
        assert_eq!(read_plans_csv(buf.as_slice()).unwrap(), plans);
        assert!(read_plans_csv("step,k,p_s,x\n0,1,0.1,\n".as_bytes()).is_err());
        assert!(read_plans_csv("step,k,p_s,x\n0,0,0.1,3\n".as_bytes()).is_err());
    }

    #[test]
    fn trace_csv_rejects_bad_rows() {
        let bad_delta = "step,p_t,p_s,p_r,w_r,w_d,x,delta,stage_cost\n0,0,0,0,0,0,3,2,0\n";
        assert!(read_trace_csv(bad_delta.as_bytes()).is_err());
        let gap = "step,p_t,p_s,p_r,w_r,w_d,x,delta,stage_cost\n1,0,0,0,0,0,3,0,0\n";
        assert!(read_trace_csv(gap.as_bytes()).is_err());
        assert!(read_trace_csv("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn zero_steps_give_empty_trace() {
        let params = GridParams::default();
        let profile = generate_profiles(1, 20, &GenParams::default(), &params).unwrap();
        let cfg = LoopConfig {
            steps: 0,
            ..LoopConfig::default()
        };
        let trace = run_closed_loop(ControllerKind::Reference, &profile, None, &cfg).unwrap();
        assert!(trace.is_empty());
    }

    #[test]
    fn short_reference_run_is_consistent() {
        let params = GridParams::default();
        let profile = generate_profiles(1, 40, &GenParams::default(), &params).unwrap();
        let cfg = LoopConfig {
            steps: 12,
            ..LoopConfig::default()
        };
        let trace = run_closed_loop(ControllerKind::Reference, &profile, None, &cfg).unwrap();
        assert_eq!(trace.len(), 12);
        let mut state = PlantState {
            x: cfg.x0,
            delta_prev: cfg.delta0,
        };
        let mut cost = 0.0;
        for r in &trace.rows {
            assert_eq!(r.x, state.x);
            assert!(plant::validate_input(&state, &r.input, &r.exo, &params).is_empty());
            cost += stage_cost(&r.input, state.delta_prev, &params);
            state = plant::step(&state, &r.input, &r.exo, &params);
        }
        assert_eq!(state, trace.final_state);
        assert!((cost - trace.total_cost()).abs() < 1e-12);
        let errors = prediction_errors(&trace, &params);
        assert_eq!(errors.ks, (1..=10).collect::<Vec<_>>());
        for s in errors.samples.iter().flatten() {
            assert!(*s <= 1e-7, "{s}");
        }
    }

    #[test]
    fn dd_requires_dataset_and_long_profile() {
        let params = GridParams::default();
        let profile = generate_profiles(1, 15, &GenParams::default(), &params).unwrap();
        let cfg = LoopConfig {
            steps: 5,
            ..LoopConfig::default()
        };
        assert!(run_closed_loop(ControllerKind::HammersteinDd, &profile, None, &cfg).is_err());
        let long = LoopConfig {
            steps: 10,
            ..LoopConfig::default()
        };
        let data = collect_excitation_data(&params, &ExcitationConfig::default())
            .unwrap()
            .0;
        assert!(run_closed_loop(ControllerKind::HammersteinDd, &profile, Some(&data), &long).is_err());
    }

    #[test]
    fn harvested_dataset_matches_trace() {
        let trace = synthetic_trace(&[3.0, 3.0, 3.0], 3.0);
        let d = harvest_dataset(&trace, 2).unwrap();
        assert_eq!(d.len(), 2);
        assert!(harvest_dataset(&trace, 4).is_err());
    }
}
