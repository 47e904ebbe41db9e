use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    /// `null` in JSON stands for an infinite bound.
    #[serde(with = "lower_bound")]
    pub lower: f64,
    #[serde(with = "upper_bound")]
    pub upper: f64,
    pub kind: VarKind,
}

macro_rules! infinite_as_null {
    ($name:ident, $inf:expr) => {
        mod $name {
            use serde::{Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
                if v.is_infinite() {
                    s.serialize_none()
                } else {
                    s.serialize_some(v)
                }
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
                Ok(Option::<f64>::deserialize(d)?.unwrap_or($inf))
            }
        }
    };
}

infinite_as_null!(lower_bound, f64::NEG_INFINITY);
infinite_as_null!(upper_bound, f64::INFINITY);

/// Sparse row `Σ coef·x = rhs` (or `<= rhs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum()
    }
}

/// The equality `z = p²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquarePair {
    pub z: usize,
    pub p: usize,
}

/// `Σ q·x_i·x_j + Σ c·x_i + constant`, with each monomial listed once and
/// `i <= j`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Objective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let q: f64 = self.quadratic.iter().map(|&(i, j, v)| v * x[i] * x[j]).sum();
        let l: f64 = self.linear.iter().map(|&(i, c)| c * x[i]).sum();
        q + l + self.constant
    }
}

/// A mixed-binary program with linear rows, square equalities and a convex
/// quadratic objective, independent of any particular solver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub vars: Vec<Variable>,
    pub linear_eq: Vec<LinearRow>,
    pub linear_ineq: Vec<LinearRow>,
    pub square_eqs: Vec<SquarePair>,
    pub objective: Objective,
}

impl Program {
    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn binaries(&self) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&i| self.vars[i].kind == VarKind::Binary)
            .collect()
    }

    pub fn continuous_count(&self) -> usize {
        self.vars.len() - self.binaries().len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn name_index(&self) -> HashMap<&str, usize> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), i))
            .collect()
    }

    /// Checks structural consistency: declared indices, ordered bounds,
    /// continuous square variables, finite coefficients, unique names.
    pub fn validate(&self) -> Result<()> {
        let n = self.vars.len();
        let mut names = HashMap::new();
        for (i, v) in self.vars.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(Error::param(format!("variable {} has invalid bounds", v.name)));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(Error::param(format!(
                    "binary {} must have bounds within [0, 1]",
                    v.name
                )));
            }
            if names.insert(v.name.as_str(), i).is_some() {
                return Err(Error::param(format!("duplicate variable name {}", v.name)));
            }
        }
        let check_row = |row: &LinearRow, what: &str| -> Result<()> {
            if !row.rhs.is_finite() {
                return Err(Error::param(format!("{what} row has non-finite rhs")));
            }
            for &(i, c) in &row.coeffs {
                if i >= n || !c.is_finite() {
                    return Err(Error::param(format!(
                        "{what} row references undeclared variable {i} or has a non-finite coefficient"
                    )));
                }
            }
            Ok(())
        };
        for row in &self.linear_eq {
            check_row(row, "equality")?;
        }
        for row in &self.linear_ineq {
            check_row(row, "inequality")?;
        }
        for sq in &self.square_eqs {
            if sq.z >= n || sq.p >= n {
                return Err(Error::param("square equality references undeclared variable"));
            }
            if self.vars[sq.z].kind != VarKind::Continuous || self.vars[sq.p].kind != VarKind::Continuous {
                return Err(Error::param("square equalities must use continuous variables"));
            }
        }
        for &(i, j, v) in &self.objective.quadratic {
            if i >= n || j >= n || i > j || !v.is_finite() {
                return Err(Error::param("malformed quadratic objective entry"));
            }
        }
        for &(i, c) in &self.objective.linear {
            if i >= n || !c.is_finite() {
                return Err(Error::param("malformed linear objective entry"));
            }
        }
        if !self.objective.constant.is_finite() {
            return Err(Error::param("objective constant must be finite"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a JSON dump.
    pub fn from_json(text: &str) -> Result<Self> {
        let p: Program = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    /// Largest violation of rows, bounds and square equalities at `x`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.linear_eq {
            worst = worst.max((row.eval(x) - row.rhs).abs());
        }
        for row in &self.linear_ineq {
            worst = worst.max(row.eval(x) - row.rhs);
        }
        for (v, &xi) in self.vars.iter().zip(x) {
            worst = worst.max(v.lower - xi).max(xi - v.upper);
        }
        for sq in &self.square_eqs {
            worst = worst.max((x[sq.z] - x[sq.p] * x[sq.p]).abs());
        }
        worst
    }
}

/// Incremental construction of a [`Program`].
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    program: Program,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.push(name.into(), lower, upper, VarKind::Continuous)
    }

    pub fn free(&mut self, name: impl Into<String>) -> usize {
        self.continuous(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> usize {
        self.push(name.into(), 0.0, 1.0, VarKind::Binary)
    }

    fn push(&mut self, name: String, lower: f64, upper: f64, kind: VarKind) -> usize {
        self.program.vars.push(Variable {
            name,
            lower,
            upper,
            kind,
        });
        self.program.vars.len() - 1
    }

    pub fn fix(&mut self, var: usize, value: f64) {
        self.program.vars[var].lower = value;
        self.program.vars[var].upper = value;
    }

    pub fn eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.program.linear_eq.push(LinearRow { coeffs, rhs });
    }

    pub fn le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.program.linear_ineq.push(LinearRow { coeffs, rhs });
    }

    pub fn square(&mut self, z: usize, p: usize) {
        self.program.square_eqs.push(SquarePair { z, p });
    }

    pub fn add_linear_cost(&mut self, var: usize, coef: f64) {
        if coef != 0.0 {
            self.program.objective.linear.push((var, coef));
        }
    }

    pub fn add_square_cost(&mut self, var: usize, coef: f64) {
        if coef != 0.0 {
            self.program.objective.quadratic.push((var, var, coef));
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        self.program.objective.constant += c;
    }

    pub fn finish(self) -> Program {
        self.program
    }
}
