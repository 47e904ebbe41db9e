//! Ground-truth islanded microgrid: battery with quadratic conversion losses,
//! a committable conventional unit, a curtailable renewable source and a load.
//!
//! Sign convention: power delivered to the grid is positive. The load `w_d`
//! is therefore non-positive and a discharging battery has `p_s > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the power-balance residual.
pub const BALANCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub gamma: f64,
    pub p_t_min: f64,
    pub p_t_max: f64,
    pub p_s_min: f64,
    pub p_s_max: f64,
    pub p_r_min: f64,
    /// Self-discharge factor.
    pub a: f64,
    /// Linear input gain of the battery.
    pub b_l: f64,
    /// Quadratic loss gain of the battery.
    pub b_q: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub dt_minutes: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            c0: 1.0,
            c1: 0.3,
            c2: 0.2,
            gamma: 0.9,
            p_t_min: 0.3,
            p_t_max: 1.0,
            p_s_min: -1.0,
            p_s_max: 1.0,
            p_r_min: 0.0,
            a: 0.99,
            b_l: -0.5,
            b_q: -0.05,
            x_min: 0.5,
            x_max: 6.5,
            dt_minutes: 30.0,
        }
    }
}

impl GridParams {
    /// Checks the sign and ordering constraints of the physical constants.
    ///
    /// `b_q = 0` is accepted so that a purely linear battery can be simulated.
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.a > 0.0 && self.a < 1.0, "0 < A < 1"),
            (self.b_l < 0.0, "B_l < 0"),
            (self.b_q <= 0.0, "B_q <= 0"),
            (self.p_s_min < 0.0 && self.p_s_max > 0.0, "p_s_min < 0 < p_s_max"),
            (
                self.p_t_min >= 0.0 && self.p_t_min < self.p_t_max,
                "0 <= p_t_min < p_t_max",
            ),
            (self.x_min >= 0.0 && self.x_min < self.x_max, "0 <= x_min < x_max"),
            (self.gamma > 0.0 && self.gamma < 1.0, "0 < gamma < 1"),
            (self.p_r_min >= 0.0, "p_r_min >= 0"),
            (self.dt_minutes > 0.0, "dt_minutes > 0"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::param(format!("grid parameters violate {what}")));
            }
        }
        let all = [
            self.c0,
            self.c1,
            self.c2,
            self.gamma,
            self.p_t_min,
            self.p_t_max,
            self.p_s_min,
            self.p_s_max,
            self.p_r_min,
            self.a,
            self.b_l,
            self.b_q,
            self.x_min,
            self.x_max,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("grid parameters must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Stored energy.
    pub x: f64,
    /// Commitment applied in the previous step.
    pub delta_prev: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub p_t: f64,
    pub p_s: f64,
    pub p_r: f64,
    pub delta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exogenous {
    /// Available renewable power.
    pub w_r: f64,
    /// Load, non-positive.
    pub w_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    RenewableMinimum,
    RenewableAvailability,
    ConventionalCommitment,
    ConventionalMaximum,
    StoragePower,
    Capacity,
    Balance,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::RenewableMinimum => "renewable-minimum",
            ViolationKind::RenewableAvailability => "renewable-availability",
            ViolationKind::ConventionalCommitment => "conventional-commitment",
            ViolationKind::ConventionalMaximum => "conventional-maximum",
            ViolationKind::StoragePower => "storage-power",
            ViolationKind::Capacity => "capacity",
            ViolationKind::Balance => "balance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub magnitude: f64,
}

pub fn battery_step(x: f64, p_s: f64, params: &GridParams) -> f64 {
    params.a * x + params.b_l * p_s + params.b_q * p_s * p_s
}

pub fn stage_cost(input: &ControlInput, delta_prev: bool, params: &GridParams) -> f64 {
    let switched = if input.delta != delta_prev { 1.0 } else { 0.0 };
    let on = if input.delta { 1.0 } else { 0.0 };
    params.c0 * (input.p_t - input.p_r) + params.c1 * switched + params.c2 * on
}

/// Lists every violated operating constraint with its magnitude. An empty
/// list means the input is admissible in `state`.
pub fn validate_input(
    state: &PlantState,
    input: &ControlInput,
    exo: &Exogenous,
    params: &GridParams,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, magnitude: f64| {
        if magnitude > 0.0 {
            out.push(Violation { kind, magnitude });
        }
    };
    push(ViolationKind::RenewableMinimum, params.p_r_min - input.p_r);
    push(ViolationKind::RenewableAvailability, input.p_r - exo.w_r);

    let on = if input.delta { 1.0 } else { 0.0 };
    let lo = params.p_t_min * on;
    let hi = params.p_t_max * on;
    if input.delta {
        push(ViolationKind::ConventionalCommitment, lo - input.p_t);
        push(ViolationKind::ConventionalMaximum, input.p_t - hi);
    } else {
        push(ViolationKind::ConventionalCommitment, input.p_t.abs());
    }

    push(
        ViolationKind::StoragePower,
        (params.p_s_min - input.p_s).max(input.p_s - params.p_s_max),
    );
    push(ViolationKind::Capacity, capacity_violation(state.x, params));

    let residual = balance_residual(input, exo);
    if residual > BALANCE_TOL {
        push(ViolationKind::Balance, residual);
    }
    out
}

pub fn balance_residual(input: &ControlInput, exo: &Exogenous) -> f64 {
    (input.p_t + input.p_s + input.p_r + exo.w_d).abs()
}

pub fn capacity_violation(x: f64, params: &GridParams) -> f64 {
    (x - params.x_max).max(0.0) + (params.x_min - x).max(0.0)
}

/// Advances the plant by one step. Constraint violations are not clamped.
pub fn step(state: &PlantState, input: &ControlInput, _exo: &Exogenous, params: &GridParams) -> PlantState {
    PlantState {
        x: battery_step(state.x, input.p_s, params),
        delta_prev: input.delta,
    }
}

/// Completes a battery power into a balanced, admissible input that prefers
/// renewable infeed. Returns `None` when no completion exists.
pub fn balance_with_storage(p_s: f64, exo: &Exogenous, params: &GridParams) -> Option<ControlInput> {
    let need = -exo.w_d - p_s;
    let w_r = exo.w_r;
    let eps = 1e-12;
    if need >= params.p_r_min - eps && need <= w_r + eps {
        return Some(ControlInput {
            p_t: 0.0,
            p_s,
            p_r: need,
            delta: false,
        });
    }
    if w_r < params.p_r_min {
        return None;
    }
    let p_r = (need - params.p_t_min).clamp(params.p_r_min, w_r);
    let p_t = need - p_r;
    (p_t >= params.p_t_min - eps && p_t <= params.p_t_max + eps).then_some(ControlInput {
        p_t,
        p_s,
        p_r,
        delta: true,
    })
}

/// Input used while a controller has no measurement history yet: the battery
/// power closest to zero for which a balanced completion exists.
pub fn hold_input(exo: &Exogenous, params: &GridParams) -> Option<ControlInput> {
    let base = -exo.w_d;
    let committed = (base - params.p_t_max - exo.w_r, base - params.p_t_min - params.p_r_min);
    let idle = (base - exo.w_r, base - params.p_r_min);
    let mut best: Option<f64> = None;
    for (lo, hi) in [committed, idle] {
        let lo = lo.max(params.p_s_min);
        let hi = hi.min(params.p_s_max);
        if lo > hi {
            continue;
        }
        let p_s = 0.0f64.clamp(lo, hi);
        if best.is_none_or(|b| p_s.abs() < b.abs()) {
            best = Some(p_s);
        }
    }
    best.and_then(|p_s| balance_with_storage(p_s, exo, params))
}
