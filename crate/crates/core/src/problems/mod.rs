//! Builders for the three MPC formulations.
//!
//! Every builder returns an [`MpcProgram`]: the solver-agnostic [`Program`]
//! plus a [`Layout`] that tells the harness where the applied input and the
//! predicted states live.

mod program;

pub use program::{LinearRow, Objective, Program, ProgramBuilder, SquarePair, VarKind, Variable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::{build_hankel, is_persistently_exciting, HankelMatrix};
use crate::plant::{Exogenous, GridParams};
use crate::scenario::IoDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Prediction horizon `L`.
    pub l: usize,
    /// Upper bound `ñ` on the battery's state dimension.
    pub n_tilde: usize,
    /// Discount factor; `None` uses the grid parameters' value.
    pub gamma: Option<f64>,
    pub c_alpha: f64,
    pub c_beta: f64,
    pub alpha_tikhonov: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            l: 10,
            n_tilde: 1,
            gamma: None,
            c_alpha: 5.0,
            c_beta: 1e4,
            alpha_tikhonov: 1e-9,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l < 1 {
            return Err(Error::param("horizon L must be at least 1"));
        }
        if self.n_tilde < 1 {
            return Err(Error::param("n_tilde must be at least 1"));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::param("gamma must lie in (0, 1)"));
            }
        }
        if !(self.c_alpha > 0.0 && self.c_beta > 0.0 && self.alpha_tikhonov > 0.0)
            || !(self.c_alpha.is_finite() && self.c_beta.is_finite() && self.alpha_tikhonov.is_finite())
        {
            return Err(Error::param("c_alpha, c_beta and alpha_tikhonov must be positive"));
        }
        Ok(())
    }

    /// Hankel order `L + ñ + 1` used by the data-driven controllers: inputs
    /// span `k ∈ [−ñ, L−1]` and outputs `k ∈ [−ñ, L]`, so the last block row
    /// of the input Hankel is left out.
    pub fn window(&self) -> usize {
        self.l + self.n_tilde + 1
    }

    fn gamma(&self, params: &GridParams) -> f64 {
        self.gamma.unwrap_or(params.gamma)
    }
}

/// Measurements available at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    /// The `ñ` most recent `(p_s, x)` pairs, oldest first, ending at `t − 1`.
    pub pairs: Vec<(f64, f64)>,
    /// Commitment in force when the plan starts.
    pub delta_m: bool,
    /// Measured stored energy at `t`.
    pub x_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Reference,
    LinearDd,
    HammersteinDd,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [
        ControllerKind::Reference,
        ControllerKind::LinearDd,
        ControllerKind::HammersteinDd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Reference => "reference",
            ControllerKind::LinearDd => "linear-dd",
            ControllerKind::HammersteinDd => "hammerstein-dd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_data_driven(self) -> bool {
        self != ControllerKind::Reference
    }
}

/// Variable indices of one MPC program, indexed by prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub kind: ControllerKind,
    /// Indexed by `k ∈ [0, L−1]`.
    pub p_t: Vec<usize>,
    pub p_s: Vec<usize>,
    pub p_r: Vec<usize>,
    pub delta: Vec<usize>,
    /// Predicted states exposed by the plan as `(k, index)`, `k >= 1`.
    pub x_plan: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct MpcProgram {
    pub program: Program,
    pub layout: Layout,
}

/// Per-step variables of the grid part shared by all formulations.
struct GridStep {
    p_t: usize,
    p_r: usize,
    delta: usize,
}

/// Adds `p_t, p_r, δ, s` for every `k ∈ [0, L−1]` together with the
/// commitment, renewable, balance and epigraph rows and the discounted stage
/// cost. `storage[k]` is the variable carrying the storage power.
fn add_grid(
    b: &mut ProgramBuilder,
    forecast: &[Exogenous],
    storage: &[usize],
    delta_m: bool,
    params: &GridParams,
    gamma: f64,
) -> Vec<GridStep> {
    let mut steps: Vec<GridStep> = Vec::with_capacity(forecast.len());
    let mut weight = 1.0;
    for (k, exo) in forecast.iter().enumerate() {
        let p_t = b.continuous(format!("p_t[{k}]"), 0.0, params.p_t_max);
        let p_r = b.continuous(format!("p_r[{k}]"), params.p_r_min, exo.w_r.max(params.p_r_min));
        if exo.w_r < params.p_r_min {
            b.le(vec![(p_r, 1.0)], exo.w_r);
        }
        let delta = b.binary(format!("delta[{k}]"));
        let s = b.continuous(format!("s[{k}]"), 0.0, 1.0);

        b.le(vec![(delta, params.p_t_min), (p_t, -1.0)], 0.0);
        b.le(vec![(p_t, 1.0), (delta, -params.p_t_max)], 0.0);
        b.eq(vec![(p_t, 1.0), (storage[k], 1.0), (p_r, 1.0)], -exo.w_d);
        match steps.last() {
            Some(prev) => {
                b.le(vec![(delta, 1.0), (prev.delta, -1.0), (s, -1.0)], 0.0);
                b.le(vec![(prev.delta, 1.0), (delta, -1.0), (s, -1.0)], 0.0);
            }
            None => {
                let dm = if delta_m { 1.0 } else { 0.0 };
                b.le(vec![(delta, 1.0), (s, -1.0)], dm);
                b.le(vec![(delta, -1.0), (s, -1.0)], -dm);
            }
        }

        b.add_linear_cost(p_t, weight * params.c0);
        b.add_linear_cost(p_r, -weight * params.c0);
        b.add_linear_cost(s, weight * params.c1);
        b.add_linear_cost(delta, weight * params.c2);
        weight *= gamma;
        steps.push(GridStep { p_t, p_r, delta });
    }
    steps
}

fn check_common(forecast: &[Exogenous], params: &GridParams, cfg: &MpcConfig) -> Result<()> {
    params.validate()?;
    cfg.validate()?;
    if forecast.len() < cfg.l {
        return Err(Error::param(format!(
            "forecast window has {} steps, horizon needs {}",
            forecast.len(),
            cfg.l
        )));
    }
    Ok(())
}

fn check_history(history: &History, cfg: &MpcConfig) -> Result<()> {
    if history.pairs.len() != cfg.n_tilde {
        return Err(Error::param(format!(
            "history holds {} measurement pairs, expected n_tilde = {}",
            history.pairs.len(),
            cfg.n_tilde
        )));
    }
    if history.pairs.iter().any(|(u, y)| !u.is_finite() || !y.is_finite()) || !history.x_m.is_finite() {
        return Err(Error::param("history contains non-finite measurements"));
    }
    Ok(())
}

fn square_bound(params: &GridParams) -> f64 {
    (params.p_s_min * params.p_s_min).max(params.p_s_max * params.p_s_max)
}

/// Model-based program: battery dynamics with the square auxiliary
/// `z(k) = p_s(k)²`, `x(0)` fixed to the measurement and capacity on
/// `k ∈ [1, L]`.
pub fn build_reference(
    history: &History,
    forecast: &[Exogenous],
    params: &GridParams,
    cfg: &MpcConfig,
) -> Result<MpcProgram> {
    check_common(forecast, params, cfg)?;
    if !history.x_m.is_finite() {
        return Err(Error::param("measured state must be finite"));
    }
    let l = cfg.l;
    let forecast = &forecast[..l];
    let mut b = ProgramBuilder::new();
    let p_s: Vec<usize> = (0..l)
        .map(|k| b.continuous(format!("p_s[{k}]"), params.p_s_min, params.p_s_max))
        .collect();
    let z: Vec<usize> = (0..l)
        .map(|k| b.continuous(format!("z[{k}]"), 0.0, square_bound(params)))
        .collect();
    let x: Vec<usize> = (0..=l)
        .map(|k| {
            if k == 0 {
                b.continuous("x[0]", history.x_m, history.x_m)
            } else {
                b.continuous(format!("x[{k}]"), params.x_min, params.x_max)
            }
        })
        .collect();
    for k in 0..l {
        b.square(z[k], p_s[k]);
        b.eq(
            vec![
                (x[k + 1], 1.0),
                (x[k], -params.a),
                (p_s[k], -params.b_l),
                (z[k], -params.b_q),
            ],
            0.0,
        );
    }
    let grid = add_grid(&mut b, forecast, &p_s, history.delta_m, params, cfg.gamma(params));
    Ok(MpcProgram {
        program: b.finish(),
        layout: Layout {
            kind: ControllerKind::Reference,
            p_t: grid.iter().map(|g| g.p_t).collect(),
            p_s,
            p_r: grid.iter().map(|g| g.p_r).collect(),
            delta: grid.iter().map(|g| g.delta).collect(),
            x_plan: (1..=l).map(|k| (k, x[k])).collect(),
        },
    })
}

/// Window variables for `k ∈ [−ñ, len−1]`: the first `ñ` entries are pinned
/// to the history. Returns the index of each window entry.
fn window_vars(
    b: &mut ProgramBuilder,
    name: &str,
    n_tilde: usize,
    len: usize,
    pinned: impl Fn(usize) -> f64,
    lower: f64,
    upper: f64,
) -> Vec<usize> {
    (0..n_tilde + len)
        .map(|w| {
            let k = w as i64 - n_tilde as i64;
            if w < n_tilde {
                let v = pinned(w);
                b.continuous(format!("{name}[{k}]"), v, v)
            } else {
                b.continuous(format!("{name}[{k}]"), lower, upper)
            }
        })
        .collect()
}

/// Adds `α`, optional `β`, and the rows `H α − window (− β) = 0`. `blocks`
/// pairs each Hankel matrix with the window variables it reproduces, in
/// block-row order; rows beyond the window are not used.
fn add_hankel_rows(
    b: &mut ProgramBuilder,
    blocks: &[(&HankelMatrix, Vec<usize>, bool)],
    alpha_cost: f64,
    beta_cost: f64,
) {
    let cols = blocks[0].0.ncols();
    let alpha: Vec<usize> = (0..cols).map(|j| b.free(format!("alpha[{j}]"))).collect();
    for &a in &alpha {
        b.add_square_cost(a, alpha_cost);
    }
    let mut beta_index = 0;
    for (h, vars, slack) in blocks {
        let m = h.matrix();
        for (r, &var) in vars.iter().enumerate() {
            let mut coeffs: Vec<(usize, f64)> = alpha
                .iter()
                .enumerate()
                .filter(|&(j, _)| m[(r, j)] != 0.0)
                .map(|(j, &a)| (a, m[(r, j)]))
                .collect();
            coeffs.push((var, -1.0));
            if *slack {
                let beta = b.free(format!("beta[{beta_index}]"));
                beta_index += 1;
                b.add_square_cost(beta, beta_cost);
                coeffs.push((beta, -1.0));
            }
            b.eq(coeffs, 0.0);
        }
    }
}

fn check_dataset(dataset: &IoDataset, cfg: &MpcConfig) -> Result<()> {
    if dataset.len() < cfg.window() {
        return Err(Error::param(format!(
            "dataset of length {} is shorter than the Hankel order {}",
            dataset.len(),
            cfg.window()
        )));
    }
    Ok(())
}

/// Linear data-driven program: Hankel representation of `(p_s, x)` with an
/// output slack `β`, capacity on `k ∈ [1, L]`.
pub fn build_linear_dd(
    history: &History,
    dataset: &IoDataset,
    forecast: &[Exogenous],
    params: &GridParams,
    cfg: &MpcConfig,
) -> Result<MpcProgram> {
    check_common(forecast, params, cfg)?;
    check_history(history, cfg)?;
    check_dataset(dataset, cfg)?;
    let order = cfg.window();
    if !is_persistently_exciting(dataset.u(), order) {
        return Err(Error::Excitation(format!(
            "recorded input is not persistently exciting of order {order}"
        )));
    }
    let h_u = build_hankel(dataset.u(), order)?;
    let h_y = build_hankel(dataset.y(), order)?;
    let (l, nt) = (cfg.l, cfg.n_tilde);
    let forecast = &forecast[..l];

    let mut b = ProgramBuilder::new();
    let u = window_vars(
        &mut b,
        "p_s",
        nt,
        l,
        |w| history.pairs[w].0,
        params.p_s_min,
        params.p_s_max,
    );
    let y = window_vars(
        &mut b,
        "x",
        nt,
        l + 1,
        |w| history.pairs[w].1,
        f64::NEG_INFINITY,
        f64::INFINITY,
    );
    for k in 1..=l {
        let xi = y[nt + k];
        b.le(vec![(xi, 1.0)], params.x_max);
        b.le(vec![(xi, -1.0)], -params.x_min);
    }
    let grid = add_grid(&mut b, forecast, &u[nt..], history.delta_m, params, cfg.gamma(params));
    add_hankel_rows(
        &mut b,
        &[(&h_u, u.clone(), false), (&h_y, y.clone(), true)],
        cfg.c_alpha,
        cfg.c_beta,
    );
    Ok(MpcProgram {
        program: b.finish(),
        layout: Layout {
            kind: ControllerKind::LinearDd,
            p_t: grid.iter().map(|g| g.p_t).collect(),
            p_s: u[nt..].to_vec(),
            p_r: grid.iter().map(|g| g.p_r).collect(),
            delta: grid.iter().map(|g| g.delta).collect(),
            x_plan: (1..=l).map(|k| (k, y[nt + k])).collect(),
        },
    })
}

/// Hammerstein data-driven program: Hankel representation of the lifted
/// input `(v₁, v₂)` and `x`, with `v₂ = v₁²` on the whole input window and
/// capacity on `k ∈ [1, L]`.
pub fn build_hammerstein_dd(
    history: &History,
    dataset: &IoDataset,
    forecast: &[Exogenous],
    params: &GridParams,
    cfg: &MpcConfig,
) -> Result<MpcProgram> {
    check_common(forecast, params, cfg)?;
    check_history(history, cfg)?;
    check_dataset(dataset, cfg)?;
    let order = cfg.window();
    if !is_persistently_exciting(dataset.v(), order) {
        return Err(Error::Excitation(format!(
            "lifted input is not persistently exciting of order {order}"
        )));
    }
    let h_v = build_hankel(dataset.v(), order)?;
    let h_y = build_hankel(dataset.y(), order)?;
    let (l, nt) = (cfg.l, cfg.n_tilde);
    let forecast = &forecast[..l];

    let mut b = ProgramBuilder::new();
    let v1 = window_vars(
        &mut b,
        "v1",
        nt,
        l,
        |w| history.pairs[w].0,
        params.p_s_min,
        params.p_s_max,
    );
    let v2 = window_vars(
        &mut b,
        "v2",
        nt,
        l,
        |w| history.pairs[w].0 * history.pairs[w].0,
        0.0,
        square_bound(params),
    );
    let y = window_vars(
        &mut b,
        "x",
        nt,
        l + 1,
        |w| history.pairs[w].1,
        f64::NEG_INFINITY,
        f64::INFINITY,
    );
    for w in 0..nt + l {
        b.square(v2[w], v1[w]);
    }
    for k in 1..=l {
        let xi = y[nt + k];
        b.le(vec![(xi, 1.0)], params.x_max);
        b.le(vec![(xi, -1.0)], -params.x_min);
    }
    let grid = add_grid(&mut b, forecast, &v1[nt..], history.delta_m, params, cfg.gamma(params));
    let lifted: Vec<usize> = v1.iter().zip(&v2).flat_map(|(&a, &c)| [a, c]).collect();
    add_hankel_rows(
        &mut b,
        &[(&h_v, lifted, false), (&h_y, y.clone(), false)],
        cfg.alpha_tikhonov,
        0.0,
    );
    Ok(MpcProgram {
        program: b.finish(),
        layout: Layout {
            kind: ControllerKind::HammersteinDd,
            p_t: grid.iter().map(|g| g.p_t).collect(),
            p_s: v1[nt..].to_vec(),
            p_r: grid.iter().map(|g| g.p_r).collect(),
            delta: grid.iter().map(|g| g.delta).collect(),
            x_plan: (1..=l).map(|k| (k, y[nt + k])).collect(),
        },
    })
}

/// Dispatches to the builder for `kind`.
pub fn build(
    kind: ControllerKind,
    history: &History,
    dataset: Option<&IoDataset>,
    forecast: &[Exogenous],
    params: &GridParams,
    cfg: &MpcConfig,
) -> Result<MpcProgram> {
    let need = || Error::param(format!("controller {} requires a dataset", kind.name()));
    match kind {
        ControllerKind::Reference => build_reference(history, forecast, params, cfg),
        ControllerKind::LinearDd => build_linear_dd(history, dataset.ok_or_else(need)?, forecast, params, cfg),
        ControllerKind::HammersteinDd => {
            build_hammerstein_dd(history, dataset.ok_or_else(need)?, forecast, params, cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{collect_excitation_data, ExcitationConfig};

    fn forecast(l: usize) -> Vec<Exogenous> {
        (0..l)
            .map(|k| Exogenous {
                w_r: 0.3 + 0.01 * k as f64,
                w_d: -0.8,
            })
            .collect()
    }

    fn history() -> History {
        History {
            pairs: vec![(0.5, 3.0)],
            delta_m: false,
            x_m: 3.0,
        }
    }

    fn dataset() -> IoDataset {
        collect_excitation_data(&GridParams::default(), &ExcitationConfig::default())
            .unwrap()
            .0
    }

    #[test]
    fn reference_counts() {
        let p = build_reference(&history(), &forecast(10), &GridParams::default(), &MpcConfig::default())
            .unwrap()
            .program;
        assert_eq!(p.binaries().len(), 10);
        assert_eq!(p.continuous_count(), 61);
        assert_eq!(p.square_eqs.len(), 10);
        assert_eq!(p.linear_eq.len(), 20);
        assert_eq!(p.linear_ineq.len(), 40);
        p.validate().unwrap();
    }

    #[test]
    fn reference_rejects_short_forecast() {
        let err = build_reference(&history(), &forecast(3), &GridParams::default(), &MpcConfig::default());
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn linear_dd_counts() {
        let data = dataset();
        let p = build_linear_dd(
            &history(),
            &data,
            &forecast(10),
            &GridParams::default(),
            &MpcConfig::default(),
        )
        .unwrap()
        .program;
        let count = |prefix: &str| p.vars.iter().filter(|v| v.name.starts_with(prefix)).count();
        assert_eq!(count("alpha["), 174);
        assert_eq!(count("beta["), 12);
        assert_eq!(count("p_s["), 11);
        assert_eq!(count("x["), 12);
        // 11 input rows, 12 output rows, 10 balance rows
        assert_eq!(p.linear_eq.len(), 33);
        p.validate().unwrap();
    }

    #[test]
    fn hammerstein_dd_counts_and_pinning() {
        let data = dataset();
        let mp = build_hammerstein_dd(
            &history(),
            &data,
            &forecast(10),
            &GridParams::default(),
            &MpcConfig::default(),
        )
        .unwrap();
        let p = &mp.program;
        let count = |prefix: &str| p.vars.iter().filter(|v| v.name.starts_with(prefix)).count();
        assert_eq!(count("alpha["), 174);
        assert_eq!(count("beta["), 0);
        assert_eq!(p.square_eqs.len(), 11);
        // 22 lifted rows, 12 output rows, 10 balance rows
        assert_eq!(p.linear_eq.len(), 44);
        let var = |name: &str| &p.vars[p.index_of(name).unwrap()];
        assert_eq!((var("v1[-1]").lower, var("v1[-1]").upper), (0.5, 0.5));
        assert_eq!((var("v2[-1]").lower, var("v2[-1]").upper), (0.25, 0.25));
        assert_eq!((var("x[-1]").lower, var("x[-1]").upper), (3.0, 3.0));
        assert_eq!((var("v2[3]").lower, var("v2[3]").upper), (0.0, 1.0));
        assert_eq!(mp.layout.x_plan.len(), 10);
    }

    #[test]
    fn dd_requires_excitation() {
        let u = vec![0.0; 40];
        let y: Vec<f64> = (0..40).map(|k| 3.0 * 0.99f64.powi(k)).collect();
        let data = IoDataset::from_measurements(&u, &y).unwrap();
        let err = build_hammerstein_dd(
            &history(),
            &data,
            &forecast(10),
            &GridParams::default(),
            &MpcConfig::default(),
        );
        assert!(matches!(err, Err(Error::Excitation(_))));
        let err = build_linear_dd(
            &history(),
            &data,
            &forecast(10),
            &GridParams::default(),
            &MpcConfig::default(),
        );
        assert!(matches!(err, Err(Error::Excitation(_))));
    }

    #[test]
    fn dd_rejects_history_of_wrong_length() {
        let data = dataset();
        let mut h = history();
        h.pairs.push((0.0, 3.0));
        let err = build_linear_dd(&h, &data, &forecast(10), &GridParams::default(), &MpcConfig::default());
        assert!(matches!(err, Err(Error::Parameter(_))));
    }
}
