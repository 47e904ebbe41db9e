//! Hankel matrices of recorded signals, persistence of excitation and
//! trajectory-membership residuals.
//!
//! A length-`L` window of any trajectory of a controllable linear system lies
//! in the column span of the stacked Hankel matrices of a sufficiently rich
//! recording. [`trajectory_residual`] measures the distance to that span and
//! is used both by the data-driven controllers' tests and by the acceptance
//! oracles.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// An ordered list of equally sized samples, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    dim: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("sequence dimension must be at least 1"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::param(format!(
                "sequence data of length {} does not hold a whole number of {dim}-dimensional samples",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(1, values.to_vec())
    }

    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let dim = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::param("all samples must share one dimension"));
        }
        Self::new(dim, samples.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    order: usize,
    source_dim: usize,
    data: DMatrix<f64>,
}

impl HankelMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Overlays the shifted windows back into the source sequence.
    pub fn reconstruct(&self) -> Sequence {
        let n = self.ncols() + self.order - 1;
        let d = self.source_dim;
        let mut data = vec![0.0; n * d];
        for j in 0..self.ncols() {
            for i in 0..self.order {
                for c in 0..d {
                    data[(i + j) * d + c] = self.data[(i * d + c, j)];
                }
            }
        }
        Sequence { dim: d, data }
    }
}

/// Builds the block Hankel matrix of order `order`: column `j` stacks the
/// samples `x(j), …, x(j + order − 1)`.
pub fn build_hankel(seq: &Sequence, order: usize) -> Result<HankelMatrix> {
    let n = seq.len();
    if order == 0 || order > n {
        return Err(Error::param(format!(
            "Hankel order L = {order} must satisfy 1 <= L <= N = {n}"
        )));
    }
    let d = seq.dim();
    let cols = n - order + 1;
    let data = DMatrix::from_fn(d * order, cols, |r, j| {
        let (i, c) = (r / d, r % d);
        seq.sample(i + j)[c]
    });
    Ok(HankelMatrix {
        order,
        source_dim: d,
        data,
    })
}

/// Default rank threshold: `σ_max · max(rows, cols) · ε`.
pub fn default_rank_tolerance(matrix: &DMatrix<f64>) -> f64 {
    let sv = matrix.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    smax * matrix.nrows().max(matrix.ncols()) as f64 * f64::EPSILON
}

/// Number of singular values strictly above `tolerance`; `None` selects
/// [`default_rank_tolerance`].
pub fn numerical_rank(matrix: &DMatrix<f64>, tolerance: Option<f64>) -> usize {
    if matrix.is_empty() {
        return 0;
    }
    let sv = matrix.singular_values();
    let tol = tolerance.unwrap_or_else(|| {
        let smax = sv.iter().copied().fold(0.0, f64::max);
        smax * matrix.nrows().max(matrix.ncols()) as f64 * f64::EPSILON
    });
    sv.iter().filter(|&&s| s > tol).count()
}

/// Rank of the order-`order` Hankel matrix, or `None` when the sequence is
/// shorter than the order.
pub fn hankel_rank(seq: &Sequence, order: usize) -> Option<usize> {
    build_hankel(seq, order).ok().map(|h| numerical_rank(h.matrix(), None))
}

/// True iff the order-`order` Hankel matrix has full row rank `dim · order`.
pub fn is_persistently_exciting(seq: &Sequence, order: usize) -> bool {
    match hankel_rank(seq, order) {
        Some(rank) => rank == seq.dim() * order,
        None => false,
    }
}

/// Least-squares distance of the stacked window `[u; y]` from the column
/// span of `[H_u; H_y]`.
pub fn trajectory_residual(h_u: &HankelMatrix, h_y: &HankelMatrix, u: &[f64], y: &[f64]) -> Result<f64> {
    if h_u.order() != h_y.order() || h_u.ncols() != h_y.ncols() {
        return Err(Error::param(format!(
            "Hankel blocks disagree: orders {} / {}, columns {} / {}",
            h_u.order(),
            h_y.order(),
            h_u.ncols(),
            h_y.ncols()
        )));
    }
    if u.len() != h_u.nrows() || y.len() != h_y.nrows() {
        return Err(Error::param(format!(
            "window lengths {} / {} do not match Hankel rows {} / {}",
            u.len(),
            y.len(),
            h_u.nrows(),
            h_y.nrows()
        )));
    }
    let stacked = stack_rows(h_u.matrix(), h_y.matrix());
    let rhs = DVector::from_iterator(u.len() + y.len(), u.iter().chain(y).copied());
    let alpha = min_norm_solve(&stacked, &rhs);
    Ok((&stacked * alpha - rhs).norm())
}

/// Stacks two matrices with equal column counts vertically.
pub fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    m.rows_mut(0, top.nrows()).copy_from(top);
    m.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    m
}

/// Minimum-norm least-squares solution through the SVD, discarding singular
/// values at or below the default rank tolerance.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = smax * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    svd.solve(b, tol).expect("SVD was computed with both factors")
}

/// A discrete-time state-space model `x⁺ = A x + B u`, `y = C x + D u` used to
/// generate ground-truth trajectories in tests.
#[derive(Debug, Clone)]
pub struct LtiOracle {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl LtiOracle {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, x0: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n
            || b.nrows() != n
            || c.ncols() != n
            || d.nrows() != c.nrows()
            || d.ncols() != b.ncols()
            || x0.len() != n
        {
            return Err(Error::param("inconsistent state-space dimensions"));
        }
        Ok(Self { a, b, c, d, x0 })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Simulates from `x0` and returns the output samples, one per input.
    pub fn simulate_from(&self, x0: &DVector<f64>, inputs: &Sequence) -> Sequence {
        let p = self.output_dim();
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(inputs.len() * p);
        for k in 0..inputs.len() {
            let u = DVector::from_column_slice(inputs.sample(k));
            let y = &self.c * &x + &self.d * &u;
            out.extend(y.iter());
            x = &self.a * &x + &self.b * &u;
        }
        Sequence { dim: p, data: out }
    }

    pub fn simulate(&self, inputs: &Sequence) -> Sequence {
        self.simulate_from(&self.x0, inputs)
    }

    /// Recovers the initial state of a window from its first `n` input/output
    /// samples by solving the stacked observability equations.
    pub fn identify_initial_state(&self, inputs: &Sequence, outputs: &Sequence) -> DVector<f64> {
        let n = self.state_dim();
        let p = self.output_dim();
        let steps = n.min(inputs.len());
        let mut obs = DMatrix::zeros(steps * p, n);
        let mut rhs = DVector::zeros(steps * p);
        let mut a_pow = DMatrix::identity(n, n);
        for k in 0..steps {
            obs.rows_mut(k * p, p).copy_from(&(&self.c * &a_pow));
            // forced response of the first k inputs
            let mut forced = DVector::zeros(p);
            let mut x = DVector::zeros(n);
            for j in 0..=k {
                let u = DVector::from_column_slice(inputs.sample(j));
                if j == k {
                    forced = &self.c * &x + &self.d * &u;
                } else {
                    x = &self.a * &x + &self.b * &u;
                }
            }
            let y = DVector::from_column_slice(outputs.sample(k));
            rhs.rows_mut(k * p, p).copy_from(&(y - forced));
            a_pow = &self.a * a_pow;
        }
        min_norm_solve(&obs, &rhs)
    }
}
