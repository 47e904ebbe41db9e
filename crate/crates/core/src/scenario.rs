//! Exogenous profiles, excitation-phase data collection and input lifting.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::{hankel_rank, Sequence};
use crate::plant::{battery_step, Exogenous, GridParams};

/// Renewable availability and load over a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub dt_minutes: f64,
    pub w_r: Vec<f64>,
    pub w_d: Vec<f64>,
}

impl Profile {
    pub fn new(dt_minutes: f64, w_r: Vec<f64>, w_d: Vec<f64>) -> Result<Self> {
        let profile = Self { dt_minutes, w_r, w_d };
        profile.validate()?;
        Ok(profile)
    }

    pub fn steps(&self) -> usize {
        self.w_r.len()
    }

    pub fn exogenous(&self, k: usize) -> Exogenous {
        Exogenous {
            w_r: self.w_r[k],
            w_d: self.w_d[k],
        }
    }

    /// The `len` samples starting at `start`, or `None` past the end.
    pub fn window(&self, start: usize, len: usize) -> Option<Vec<Exogenous>> {
        (start + len <= self.steps()).then(|| (start..start + len).map(|k| self.exogenous(k)).collect())
    }

    fn validate(&self) -> Result<()> {
        if self.w_r.len() != self.w_d.len() {
            return Err(Error::param("w_r and w_d must have equal length"));
        }
        for (k, (&r, &d)) in self.w_r.iter().zip(&self.w_d).enumerate() {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::Ingestion {
                    row: k,
                    message: format!("w_r must be >= 0 at row {k}"),
                });
            }
            if !(d.is_finite() && d <= 0.0) {
                return Err(Error::Ingestion {
                    row: k,
                    message: format!("w_d must be <= 0 at row {k}"),
                });
            }
        }
        Ok(())
    }

    /// Checks that the load never exceeds what the conventional unit and the
    /// battery can supply together.
    pub fn check_feasible(&self, params: &GridParams) -> Result<()> {
        let cap = params.p_t_max + params.p_s_max;
        match self.w_d.iter().position(|d| -d > cap) {
            Some(k) => Err(Error::Ingestion {
                row: k,
                message: format!("load {} exceeds supply capacity {cap} at row {k}", -self.w_d[k]),
            }),
            None => Ok(()),
        }
    }

    pub fn read_csv<R: Read>(reader: R, dt_minutes: f64) -> Result<Self> {
        let rows = read_indexed_csv(reader, ["step", "w_r", "w_d"])?;
        let (w_r, w_d) = rows.into_iter().map(|[r, d]| (r, d)).unzip();
        Self::new(dt_minutes, w_r, w_d)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let rows = self.w_r.iter().zip(&self.w_d).map(|(&r, &d)| [r, d]);
        write_indexed_csv(writer, ["step", "w_r", "w_d"], rows)
    }
}

pub fn load_profile_csv(path: impl AsRef<Path>, dt_minutes: f64) -> Result<Profile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Profile::read_csv(file, dt_minutes)
}

pub fn save_profile_csv(profile: &Profile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    profile.write_csv(file)
}

/// Shape of the synthetic weather/load generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub steps_per_day: usize,
    pub r0: f64,
    pub r1: f64,
    pub d0: f64,
    pub d1: f64,
    /// Phase of the load oscillation relative to the renewable one.
    pub phase: f64,
    pub margin: f64,
    pub noise_r: f64,
    pub noise_d: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            steps_per_day: 48,
            r0: 0.6,
            r1: 0.4,
            d0: 0.9,
            d1: 0.3,
            phase: PI,
            margin: 0.1,
            noise_r: 0.1,
            noise_d: 0.1,
        }
    }
}

/// Seeded synthetic profile: daily sinusoids plus Gaussian noise, with the
/// load clamped below the combined conventional and storage capacity.
pub fn generate_profiles(seed: u64, steps: usize, gen: &GenParams, params: &GridParams) -> Result<Profile> {
    if steps == 0 {
        return Err(Error::param("profile needs at least one step"));
    }
    let cap = params.p_t_max + params.p_s_max;
    if !(gen.noise_r >= 0.0 && gen.noise_d >= 0.0) {
        return Err(Error::param("noise standard deviations must be nonnegative"));
    }
    if !(gen.margin >= 0.0 && gen.margin < cap) {
        return Err(Error::param(format!(
            "margin {} must lie in [0, p_t_max + p_s_max = {cap})",
            gen.margin
        )));
    }
    if gen.steps_per_day == 0 {
        return Err(Error::param("steps_per_day must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nr = Normal::new(0.0, gen.noise_r).map_err(|e| Error::param(e.to_string()))?;
    let nd = Normal::new(0.0, gen.noise_d).map_err(|e| Error::param(e.to_string()))?;
    let mut w_r = Vec::with_capacity(steps);
    let mut w_d = Vec::with_capacity(steps);
    for k in 0..steps {
        let angle = 2.0 * PI * k as f64 / gen.steps_per_day as f64;
        let r = gen.r0 + gen.r1 * angle.sin() + nr.sample(&mut rng);
        let d = gen.d0 + gen.d1 * (angle + gen.phase).sin() + nd.sample(&mut rng);
        w_r.push(r.max(0.0));
        // `0.0 - x` keeps a clamped zero load positive-signed
        w_d.push(0.0 - d.clamp(0.0, cap - gen.margin));
    }
    Profile::new(params.dt_minutes, w_r, w_d)
}

/// The Hammerstein basis `ψ(u) = (u, u²)`.
pub fn lift_input(u: f64) -> [f64; 2] {
    [u, u * u]
}

/// Recorded battery powers and stored energies, plus the lifted inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct IoDataset {
    u: Sequence,
    y: Sequence,
    v: Sequence,
}

impl IoDataset {
    pub fn from_measurements(u: &[f64], y: &[f64]) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::param(format!(
                "input and output records differ in length ({} vs {})",
                u.len(),
                y.len()
            )));
        }
        if u.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::param("dataset values must be finite"));
        }
        let v: Vec<f64> = u.iter().flat_map(|&p| lift_input(p)).collect();
        Ok(Self {
            u: Sequence::scalar(u)?,
            y: Sequence::scalar(y)?,
            v: Sequence::new(2, v)?,
        })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &Sequence {
        &self.u
    }

    pub fn y(&self) -> &Sequence {
        &self.y
    }

    pub fn v(&self) -> &Sequence {
        &self.v
    }

    /// Largest plant-consistency defect `|y(k+1) − f(y(k), u(k))|`.
    pub fn replay_defect(&self, params: &GridParams) -> f64 {
        let (u, y) = (self.u.as_slice(), self.y.as_slice());
        (0..self.len().saturating_sub(1))
            .map(|k| (y[k + 1] - battery_step(y[k], u[k], params)).abs())
            .fold(0.0, f64::max)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let rows = read_indexed_csv(reader, ["step", "p_s", "x"])?;
        let (u, y): (Vec<f64>, Vec<f64>) = rows.into_iter().map(|[u, y]| (u, y)).unzip();
        Self::from_measurements(&u, &y)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let rows = self.u.as_slice().iter().zip(self.y.as_slice()).map(|(&u, &y)| [u, y]);
        write_indexed_csv(writer, ["step", "p_s", "x"], rows)
    }
}

pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<IoDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    IoDataset::read_csv(file)
}

pub fn save_dataset_csv(dataset: &IoDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    dataset.write_csv(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    pub x_start: f64,
    pub seed: u64,
    pub n: usize,
    pub margin: f64,
    /// Hankel order the data must excite (`L + ñ + 1`).
    pub order: usize,
    pub retries: u32,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            x_start: 3.5,
            seed: 7,
            n: 185,
            margin: 0.25,
            order: 12,
            retries: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub raw_pe: bool,
    pub lifted_pe: bool,
    pub order: usize,
    pub raw_rank: usize,
    pub lifted_rank: usize,
    pub seed_used: u64,
}

/// Minimum record length for which an order-`order` Hankel matrix of a
/// `dim`-dimensional signal can have full row rank.
pub fn min_length_for_order(order: usize, dim: usize) -> usize {
    (dim + 1) * order - 1
}

/// Drives the true battery with uniform random powers, clipped so the next
/// state stays `margin` inside the capacity limits, and checks persistence of
/// excitation of both the raw and the lifted input.
pub fn collect_excitation_data(params: &GridParams, cfg: &ExcitationConfig) -> Result<(IoDataset, ExcitationReport)> {
    collect_with_policy(params, cfg, |rng, lo, hi| rng.gen_range(lo..=hi))
}

/// [`collect_excitation_data`] with a caller-supplied draw; the policy receives
/// the generator and the power range for the current step.
pub fn collect_with_policy<F>(
    params: &GridParams,
    cfg: &ExcitationConfig,
    mut policy: F,
) -> Result<(IoDataset, ExcitationReport)>
where
    F: FnMut(&mut ChaCha8Rng, f64, f64) -> f64,
{
    let lo = params.x_min + cfg.margin;
    let hi = params.x_max - cfg.margin;
    if !(cfg.x_start > lo && cfg.x_start < hi) {
        return Err(Error::param(format!(
            "x_start {} must lie strictly inside ({lo}, {hi})",
            cfg.x_start
        )));
    }
    if cfg.n < min_length_for_order(cfg.order, 2) {
        return Err(Error::param(format!(
            "N = {} is too short for order {} (need at least {})",
            cfg.n,
            cfg.order,
            min_length_for_order(cfg.order, 2)
        )));
    }
    let mut last = None;
    for attempt in 0..=cfg.retries {
        let seed = cfg.seed + attempt as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = Vec::with_capacity(cfg.n);
        let mut y = Vec::with_capacity(cfg.n);
        let mut x = cfg.x_start;
        for _ in 0..cfg.n {
            let p = policy(&mut rng, params.p_s_min, params.p_s_max);
            let p = clip_to_band(x, p, lo, hi, params);
            u.push(p);
            y.push(x);
            x = battery_step(x, p, params);
        }
        let data = IoDataset::from_measurements(&u, &y)?;
        let raw_rank = hankel_rank(data.u(), cfg.order).unwrap_or(0);
        let lifted_rank = hankel_rank(data.v(), cfg.order).unwrap_or(0);
        let report = ExcitationReport {
            raw_pe: raw_rank == cfg.order,
            lifted_pe: lifted_rank == 2 * cfg.order,
            order: cfg.order,
            raw_rank,
            lifted_rank,
            seed_used: seed,
        };
        if report.raw_pe && report.lifted_pe {
            return Ok((data, report));
        }
        last = Some(report);
    }
    let r = last.expect("at least one attempt");
    Err(Error::Excitation(format!(
        "no persistently exciting record of order {} after {} retries: raw rank {} of {}, lifted rank {} of {}",
        r.order,
        cfg.retries,
        r.raw_rank,
        r.order,
        r.lifted_rank,
        2 * r.order
    )))
}

/// Clips `p` into the storage range so that the next state stays in
/// `[lo, hi]`. The next state is decreasing in `p` on the storage range.
fn clip_to_band(x: f64, p: f64, lo: f64, hi: f64, params: &GridParams) -> f64 {
    let p = p.clamp(params.p_s_min, params.p_s_max);
    let next = battery_step(x, p, params);
    if next > hi {
        solve_power(x, hi, true, params)
    } else if next < lo {
        solve_power(x, lo, false, params)
    } else {
        p
    }
}

/// Storage power in range whose step from `x` lands on `target`, clamped to
/// the nearest range end when unreachable. `below` picks the bracket end
/// whose next state does not exceed the target.
fn solve_power(x: f64, target: f64, below: bool, params: &GridParams) -> f64 {
    let (mut a, mut b) = (params.p_s_min, params.p_s_max);
    let f = |p| battery_step(x, p, params) - target;
    if f(a) <= 0.0 {
        return a;
    }
    if f(b) >= 0.0 {
        return b;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    if below {
        b
    } else {
        a
    }
}

fn read_indexed_csv<R: Read>(reader: R, header: [&str; 3]) -> Result<Vec<[f64; 2]>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if got != header {
        return Err(Error::Ingestion {
            row: 0,
            message: format!("expected header {}, found {}", header.join(","), got.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Ingestion {
            row: k,
            message: e.to_string(),
        })?;
        if record.len() != 3 {
            return Err(Error::Ingestion {
                row: k,
                message: format!("expected 3 columns, found {}", record.len()),
            });
        }
        let parse = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| Error::Ingestion {
                row: k,
                message: format!("column {}: {e}", header[i]),
            })
        };
        let step = record[0].parse::<usize>().map_err(|e| Error::Ingestion {
            row: k,
            message: format!("step index: {e}"),
        })?;
        if step != k {
            return Err(Error::Ingestion {
                row: k,
                message: format!("step index {step} is not monotone (expected {k})"),
            });
        }
        let (a, b) = (parse(1)?, parse(2)?);
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Ingestion {
                row: k,
                message: "non-finite value".into(),
            });
        }
        rows.push([a, b]);
    }
    if rows.is_empty() {
        return Err(Error::Ingestion {
            row: 0,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

fn write_indexed_csv<W: Write>(writer: W, header: [&str; 3], rows: impl Iterator<Item = [f64; 2]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for (k, [a, b]) in rows.enumerate() {
        w.write_record([k.to_string(), fmt_f64(a), fmt_f64(b)])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Fixed 17-significant-digit scientific formatting used by every CSV.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
