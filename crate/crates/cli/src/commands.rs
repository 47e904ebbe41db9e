use std::fs;
use std::path::{Path, PathBuf};

use gridmpc::harness::{
    box_stats, load_plans_csv, load_trace_csv, prediction_errors, run_closed_loop_with, save_box_stats_csv,
    save_plans_csv, save_trace_csv, summarize, trace_from_records, BoxStats, RunSummary, ViolationMetrics,
};
use gridmpc::problems::{ControllerKind, MpcProgram};
use gridmpc::scenario::{
    collect_excitation_data, generate_profiles, load_dataset_csv, load_profile_csv, save_dataset_csv, save_profile_csv,
    Profile,
};
use gridmpc::solver::SolveResult;
use gridmpc::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes `profile.csv` with `cfg.steps` rows.
pub fn gen_scenario(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let profile = generate_profiles(cfg.seed, cfg.steps, &cfg.gen, &cfg.params)?;
    ensure_dir(out)?;
    let path = out.join("profile.csv");
    save_profile_csv(&profile, &path)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranks {
    pub raw: usize,
    pub lifted: usize,
}

/// Persistence-of-excitation report written next to the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeReport {
    pub raw_pe: bool,
    pub lifted_pe: bool,
    pub order: usize,
    pub ranks: Ranks,
    pub n: usize,
    pub seed_used: u64,
}

/// Runs the excitation phase and writes `dataset.csv` and `pe_report.json`.
pub fn collect(cfg: &RunConfig, out: &Path) -> Result<PeReport> {
    let (data, report) = collect_excitation_data(&cfg.params, &cfg.excitation)?;
    ensure_dir(out)?;
    save_dataset_csv(&data, out.join("dataset.csv"))?;
    let pe = PeReport {
        raw_pe: report.raw_pe,
        lifted_pe: report.lifted_pe,
        order: report.order,
        ranks: Ranks {
            raw: report.raw_rank,
            lifted: report.lifted_rank,
        },
        n: data.len(),
        seed_used: report.seed_used,
    };
    write_json(&out.join("pe_report.json"), &pe)?;
    Ok(pe)
}

/// The configured profile file, or a generated one long enough for
/// `cfg.steps` closed-loop steps.
pub fn scenario_profile(cfg: &RunConfig) -> Result<Profile> {
    match &cfg.profile {
        Some(path) => load_profile_csv(path, cfg.params.dt_minutes),
        None => generate_profiles(cfg.seed, (cfg.steps + cfg.mpc.l).max(2) - 1, &cfg.gen, &cfg.params),
    }
}

/// Runs one closed loop and writes `<controller>.trace.csv`,
/// `<controller>.plans.csv` and `<controller>.summary.json`. With
/// `debug_dump`, every solved program and its result go to
/// `debug/<controller>/step_NNNNN.json`.
pub fn run(cfg: &RunConfig, out: &Path, debug_dump: bool) -> Result<RunSummary> {
    let kind = cfg.controller;
    for path in [&cfg.profile, &cfg.dataset].into_iter().flatten() {
        if !path.is_file() {
            return Err(Error::Parameter(format!("no such file: {}", path.display())));
        }
    }
    let dataset = match (&cfg.dataset, kind.is_data_driven()) {
        (Some(path), true) => Some(load_dataset_csv(path)?),
        (None, true) => {
            return Err(Error::Parameter(format!(
                "controller {} needs --dataset (see `collect`)",
                kind.name()
            )))
        }
        (_, false) => None,
    };
    let profile = scenario_profile(cfg)?;
    let mut lc = cfg.loop_config();
    ensure_dir(out)?;
    let debug_dir = out.join("debug").join(kind.name());
    if debug_dump {
        lc.solver.debug_tree = true;
        ensure_dir(&debug_dir)?;
    }
    let mut dump_error = None;
    let mut observer = |t: usize, mp: &MpcProgram, res: &SolveResult| {
        if !debug_dump || dump_error.is_some() {
            return;
        }
        let record = json!({
            "step": t,
            "program": mp.program,
            "status": res.status,
            "objective": res.objective,
            "values": res.values,
            "stats": res.stats,
            "tree": res.tree,
        });
        if let Err(e) = write_json(&debug_dir.join(format!("step_{t:05}.json")), &record) {
            dump_error = Some(e);
        }
    };
    let trace = run_closed_loop_with(kind, &profile, dataset.as_ref(), &lc, &mut observer)?;
    if let Some(e) = dump_error {
        return Err(e);
    }
    let seed = cfg.profile.is_none().then_some(cfg.seed);
    let summary = summarize(&trace, &cfg.params, seed);
    save_trace_csv(&trace, out.join(format!("{}.trace.csv", kind.name())))?;
    save_plans_csv(&trace, out.join(format!("{}.plans.csv", kind.name())))?;
    write_json(&out.join(format!("{}.summary.json", kind.name())), &summary)?;
    Ok(summary)
}

/// One evaluated trace in the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label: String,
    pub controller: ControllerKind,
    pub steps: usize,
    pub total_cost: f64,
    pub metrics: ViolationMetrics,
    pub prediction_steps: Vec<usize>,
    pub medians: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub entries: Vec<Comparison>,
}

/// `dir/name.trace.csv` → `dir/name`.
fn stem_of(trace_path: &Path) -> PathBuf {
    let s = trace_path.to_string_lossy();
    let base = s
        .strip_suffix(".trace.csv")
        .or_else(|| s.strip_suffix(".csv"))
        .unwrap_or(&s);
    PathBuf::from(base)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn controller_of(stem: &Path) -> Result<ControllerKind> {
    let summary = with_suffix(stem, ".summary.json");
    if summary.is_file() {
        let text = fs::read_to_string(&summary).map_err(|e| io_err(&summary, e))?;
        let s: RunSummary = serde_json::from_str(&text)?;
        return Ok(s.controller);
    }
    let name = stem
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let head = name.split('.').next().unwrap_or_default();
    ControllerKind::parse(head).ok_or_else(|| {
        Error::Parameter(format!(
            "cannot tell the controller of {}: no summary file and no controller name prefix",
            stem.display()
        ))
    })
}

/// Replays every trace's plans on a twin plant and writes
/// `<label>.boxstats.csv` per trace plus `comparison.json`.
pub fn eval(cfg: &RunConfig, traces: &[PathBuf], out: &Path) -> Result<ComparisonReport> {
    if traces.is_empty() {
        return Err(Error::Parameter("eval needs at least one trace".into()));
    }
    let mut loaded = Vec::new();
    for path in traces {
        let stem = stem_of(path);
        let kind = controller_of(&stem)?;
        let rows = load_trace_csv(path)?;
        let plans = load_plans_csv(with_suffix(&stem, ".plans.csv"))?;
        let horizon = plans.iter().map(|p| p.p_s.len()).max().unwrap_or(0);
        let trace = trace_from_records(kind, rows, plans, &cfg.params)?;
        let label = stem
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        loaded.push((label, trace, horizon));
    }
    if let Some((label, _, h)) = loaded.iter().find(|(_, _, h)| *h != loaded[0].2) {
        return Err(Error::Parameter(format!(
            "trace {label} has horizon {h}, {} has {}",
            loaded[0].0, loaded[0].2
        )));
    }
    ensure_dir(out)?;
    let mut entries = Vec::new();
    for (label, trace, _) in &loaded {
        let stats: Vec<BoxStats> = box_stats(&prediction_errors(trace, &cfg.params))?;
        save_box_stats_csv(&stats, out.join(format!("{label}.boxstats.csv")))?;
        let summary = summarize(trace, &cfg.params, None);
        entries.push(Comparison {
            label: label.clone(),
            controller: trace.kind,
            steps: summary.steps,
            total_cost: summary.total_cost,
            metrics: summary.metrics,
            prediction_steps: stats.iter().map(|s| s.k).collect(),
            medians: stats.iter().map(|s| s.median).collect(),
        });
    }
    let report = ComparisonReport { entries };
    write_json(&out.join("comparison.json"), &report)?;
    Ok(report)
}
