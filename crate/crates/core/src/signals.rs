//! Load profiles, time-series simulation and smart-meter measurement sets.
//!
//! A [`MeasurementSet`] keeps the raw voltage/current magnitudes of every
//! metered leaf together with their first differences. The differences stay
//! in physical units; [`standard_scale`] is applied only where correlation
//! statistics are computed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridTopology, NodeId, NodeKind, ValidationReport};
use crate::powerflow::{LeafLoad, PowerFlowError, SolverOptions, Sweep};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("template values must be finite and positive (hour {hour}: {value})")]
    BadTemplate { hour: usize, value: f64 },
    #[error("noise sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("sampling interval must be finite and positive, got {0}")]
    BadInterval(f64),
    #[error("at least {required} samples are required, got {got}")]
    TooFewSamples { required: usize, got: usize },
    #[error("power factor must lie in (0, 1], got {0}")]
    BadPowerFactor(f64),
    #[error("inconsistent load profile: {0}")]
    BadProfile(String),
    #[error("profile leaf {0} is not a leaf of the topology")]
    UnknownLeaf(NodeId),
    #[error(transparent)]
    InvalidTopology(#[from] ValidationReport),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("power flow did not converge at snapshot {snapshot} after {iterations} iterations")]
    SimulationDiverged { snapshot: usize, iterations: usize },
    #[error("inconsistent measurement matrices: {0}")]
    Shape(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("ragged series: leaf {leaf} has {got} snapshots, expected {expected}")]
    RaggedSeries {
        leaf: NodeId,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hourly residential demand shape in watts, interpolated linearly and
/// wrapping from hour 23 back to hour 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidentialTemplate {
    pub hourly_watts: [f64; 24],
}

impl Default for ResidentialTemplate {
    /// Evening-peaked single-household demand: overnight trough, morning
    /// shoulder, flat afternoon, peak around 19:00.
    fn default() -> Self {
        Self {
            hourly_watts: [
                800.0, 700.0, 600.0, 600.0, 600.0, 700.0, 1000.0, 1400.0, 1600.0, 1400.0, 1200.0,
                1200.0, 1200.0, 1200.0, 1200.0, 1300.0, 1600.0, 2000.0, 2400.0, 2600.0, 2400.0,
                2000.0, 1600.0, 1200.0,
            ],
        }
    }
}

impl ResidentialTemplate {
    fn check(&self) -> Result<(), SignalError> {
        for (hour, &value) in self.hourly_watts.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SignalError::BadTemplate { hour, value });
            }
        }
        Ok(())
    }

    /// Demand at `seconds` after midnight.
    pub fn at(&self, seconds: f64) -> f64 {
        let hours = (seconds / 3600.0).rem_euclid(24.0);
        let lo = (hours.floor() as usize).min(23);
        let hi = (lo + 1) % 24;
        let frac = hours - lo as f64;
        self.hourly_watts[lo] * (1.0 - frac) + self.hourly_watts[hi] * frac
    }
}

/// Active power per snapshot (rows) and leaf (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub leaves: Vec<NodeId>,
    pub interval_s: f64,
    pub power_w: Vec<Vec<f64>>,
}

impl LoadProfile {
    pub fn new(
        leaves: Vec<NodeId>,
        interval_s: f64,
        power_w: Vec<Vec<f64>>,
    ) -> Result<Self, SignalError> {
        if !(interval_s > 0.0 && interval_s.is_finite()) {
            return Err(SignalError::BadInterval(interval_s));
        }
        for (t, row) in power_w.iter().enumerate() {
            if row.len() != leaves.len() {
                return Err(SignalError::BadProfile(format!(
                    "snapshot {t} has {} values for {} leaves",
                    row.len(),
                    leaves.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
                return Err(SignalError::BadProfile(format!(
                    "snapshot {t} has invalid power {p}"
                )));
            }
        }
        Ok(Self {
            leaves,
            interval_s,
            power_w,
        })
    }

    pub fn snapshots(&self) -> usize {
        self.power_w.len()
    }
}

/// Generates `samples + 1` snapshots of per-leaf demand: the template scaled
/// by `1 + e`, `e ~ N(0, noise_sigma)` drawn independently per leaf and
/// snapshot, clipped at zero.
pub fn synth_profile(
    leaves: &[NodeId],
    samples: usize,
    interval_s: f64,
    template: &ResidentialTemplate,
    noise_sigma: f64,
    seed: u64,
) -> Result<LoadProfile, SignalError> {
    if samples < 2 {
        return Err(SignalError::TooFewSamples {
            required: 2,
            got: samples,
        });
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(SignalError::BadSigma(noise_sigma));
    }
    if !(interval_s > 0.0 && interval_s.is_finite()) {
        return Err(SignalError::BadInterval(interval_s));
    }
    template.check()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let power_w = (0..=samples)
        .map(|t| {
            let base = template.at(t as f64 * interval_s);
            leaves
                .iter()
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (base * (1.0 + noise_sigma * z)).max(0.0)
                })
                .collect()
        })
        .collect();
    LoadProfile::new(leaves.to_vec(), interval_s, power_w)
}

/// Interval that spreads `samples` increments over one day.
pub fn daily_interval(samples: usize) -> f64 {
    SECONDS_PER_DAY / samples.max(1) as f64
}

/// Smart-meter magnitudes and their first differences. Columns follow
/// ascending leaf id.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    leaves: Vec<NodeId>,
    voltage: DMatrix<f64>,
    current: DMatrix<f64>,
    dv: DMatrix<f64>,
    di: DMatrix<f64>,
}

impl MeasurementSet {
    /// `voltage` and `current` are `(T+1) x leaves`.
    pub fn new(
        leaves: Vec<NodeId>,
        voltage: DMatrix<f64>,
        current: DMatrix<f64>,
    ) -> Result<Self, SignalError> {
        if leaves.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SignalError::Shape(
                "leaf ids must be strictly increasing".into(),
            ));
        }
        if voltage.shape() != current.shape() || voltage.ncols() != leaves.len() {
            return Err(SignalError::Shape(format!(
                "voltage {:?} and current {:?} for {} leaves",
                voltage.shape(),
                current.shape(),
                leaves.len()
            )));
        }
        if voltage.nrows() < 2 {
            return Err(SignalError::TooFewSamples {
                required: 2,
                got: voltage.nrows(),
            });
        }
        let dv = first_difference(&voltage);
        let di = first_difference(&current);
        Ok(Self {
            leaves,
            voltage,
            current,
            dv,
            di,
        })
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn voltage(&self) -> &DMatrix<f64> {
        &self.voltage
    }

    pub fn current(&self) -> &DMatrix<f64> {
        &self.current
    }

    /// `T x leaves` voltage increments.
    pub fn dv(&self) -> &DMatrix<f64> {
        &self.dv
    }

    /// `T x leaves` current increments.
    pub fn di(&self) -> &DMatrix<f64> {
        &self.di
    }

    /// Number of increments `T`.
    pub fn samples(&self) -> usize {
        self.dv.nrows()
    }

    pub fn save_csv(&self, out: impl Write) -> Result<(), SignalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "leaf_id", "V_volts", "I_amps"])
            .map_err(csv_io)?;
        for t in 0..self.voltage.nrows() {
            for (j, leaf) in self.leaves.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    leaf.to_string(),
                    self.voltage[(t, j)].to_string(),
                    self.current[(t, j)].to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(input: impl Read) -> Result<Self, SignalError> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = r.headers().map_err(csv_parse)?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SignalError::SchemaViolation(format!("missing column `{name}`")))
        };
        let (ct, cl, cv, ci) = (
            column("t")?,
            column("leaf_id")?,
            column("V_volts")?,
            column("I_amps")?,
        );

        let mut series: BTreeMap<NodeId, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
        for record in r.records() {
            let record = record.map_err(csv_parse)?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| record.get(i).unwrap_or("");
            let parse_err = |what: &str, e: &dyn std::fmt::Display| SignalError::Parse {
                line,
                message: format!("{what}: {e}"),
            };
            let t: usize = field(ct).parse().map_err(|e| parse_err("t", &e))?;
            let leaf: u32 = field(cl).parse().map_err(|e| parse_err("leaf_id", &e))?;
            let v: f64 = field(cv).parse().map_err(|e| parse_err("V_volts", &e))?;
            let i: f64 = field(ci).parse().map_err(|e| parse_err("I_amps", &e))?;
            if series
                .entry(NodeId(leaf))
                .or_default()
                .insert(t, (v, i))
                .is_some()
            {
                return Err(SignalError::SchemaViolation(format!(
                    "duplicate row for t={t}, leaf {leaf} (line {line})"
                )));
            }
        }
        if series.is_empty() {
            return Err(SignalError::SchemaViolation("no measurement rows".into()));
        }

        let expected = series.values().map(BTreeMap::len).max().unwrap_or(0);
        for (&leaf, rows) in &series {
            if rows.len() != expected {
                return Err(SignalError::RaggedSeries {
                    leaf,
                    got: rows.len(),
                    expected,
                });
            }
            if rows.keys().copied().ne(0..expected) {
                return Err(SignalError::SchemaViolation(format!(
                    "leaf {leaf} snapshots are not numbered 0..{}",
                    expected - 1
                )));
            }
        }

        let leaves: Vec<NodeId> = series.keys().copied().collect();
        let mut voltage = DMatrix::zeros(expected, leaves.len());
        let mut current = DMatrix::zeros(expected, leaves.len());
        for (j, rows) in series.values().enumerate() {
            for (&t, &(v, i)) in rows {
                voltage[(t, j)] = v;
                current[(t, j)] = i;
            }
        }
        Self::new(leaves, voltage, current)
    }
}

fn csv_io(e: csv::Error) -> SignalError {
    SignalError::Io(e.into())
}

fn csv_parse(e: csv::Error) -> SignalError {
    SignalError::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

pub fn save_measurements(set: &MeasurementSet, path: &Path) -> Result<(), SignalError> {
    set.save_csv(BufWriter::new(File::create(path)?))
}

pub fn load_measurements(path: &Path) -> Result<MeasurementSet, SignalError> {
    MeasurementSet::load_csv(BufReader::new(File::open(path)?))
}

pub fn first_difference(m: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = m.nrows().saturating_sub(1);
    DMatrix::from_fn(rows, m.ncols(), |t, j| m[(t + 1, j)] - m[(t, j)])
}

/// Convergence record of one simulated time series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationStats {
    pub iterations: Vec<usize>,
    /// Per snapshot, the largest voltage change at each sweep iteration.
    pub max_delta_history: Vec<Vec<f64>>,
}

impl SimulationStats {
    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
    }
}

/// Runs one power flow per profile snapshot and records every topology
/// leaf's voltage magnitude and service-drop current magnitude.
pub fn simulate(
    topology: &GridTopology,
    profile: &LoadProfile,
    power_factor: f64,
    options: &SolverOptions,
) -> Result<MeasurementSet, SignalError> {
    simulate_with_stats(topology, profile, power_factor, options).map(|(m, _)| m)
}

pub fn simulate_with_stats(
    topology: &GridTopology,
    profile: &LoadProfile,
    power_factor: f64,
    options: &SolverOptions,
) -> Result<(MeasurementSet, SimulationStats), SignalError> {
    let sweep = Sweep::new(topology)?;
    let index = sweep.index();
    let leaves = topology.leaves();
    let leaf_pos: Vec<usize> = leaves
        .iter()
        .map(|&l| index.position(l).expect("leaf is indexed"))
        .collect();
    let profile_pos: Vec<usize> = profile
        .leaves
        .iter()
        .map(|&l| match index.position(l) {
            Some(p) if index.kinds[p] == NodeKind::Leaf => Ok(p),
            _ => Err(SignalError::UnknownLeaf(l)),
        })
        .collect::<Result<_, _>>()?;
    if !(power_factor > 0.0 && power_factor <= 1.0) {
        return Err(SignalError::BadPowerFactor(power_factor));
    }
    if profile.snapshots() < 2 {
        return Err(SignalError::TooFewSamples {
            required: 2,
            got: profile.snapshots(),
        });
    }

    let base = vec![num_complex::Complex64::new(0.0, 0.0); index.len()];
    let results: Vec<_> = profile
        .power_w
        .par_iter()
        .map(|row| {
            let mut s = base.clone();
            for (&pos, &p) in profile_pos.iter().zip(row) {
                s[pos] = LeafLoad::new(p, power_factor).complex_power();
            }
            sweep.run(&s, options)
        })
        .collect();

    let snapshots = profile.snapshots();
    let mut voltage = DMatrix::zeros(snapshots, leaves.len());
    let mut current = DMatrix::zeros(snapshots, leaves.len());
    let mut stats = SimulationStats::default();
    for (t, result) in results.into_iter().enumerate() {
        let raw = result?;
        if !raw.converged {
            return Err(SignalError::SimulationDiverged {
                snapshot: t,
                iterations: raw.iterations,
            });
        }
        for (j, &pos) in leaf_pos.iter().enumerate() {
            voltage[(t, j)] = raw.voltage[pos].norm();
            current[(t, j)] = raw.current[pos].norm();
        }
        stats.iterations.push(raw.iterations);
        stats.max_delta_history.push(raw.max_delta_history);
    }
    Ok((MeasurementSet::new(leaves, voltage, current)?, stats))
}

/// Column-standardized matrix plus the columns that had zero spread.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaled {
    pub data: DMatrix<f64>,
    pub degenerate_columns: Vec<usize>,
}

/// Centers every column and divides by its sample standard deviation
/// (`n - 1` denominator). Constant columns become zeros and are reported.
pub fn standard_scale(m: &DMatrix<f64>) -> Result<Scaled, SignalError> {
    let n = m.nrows();
    if n < 2 {
        return Err(SignalError::TooFewSamples {
            required: 2,
            got: n,
        });
    }
    let mut data = m.clone();
    let mut degenerate_columns = Vec::new();
    for (j, mut col) in data.column_iter_mut().enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        let magnitude = col.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        if !std.is_finite() || std <= 1e-12 * magnitude {
            col.fill(0.0);
            degenerate_columns.push(j);
        } else {
            col.apply(|x| *x = (*x - mean) / std);
        }
    }
    Ok(Scaled {
        data,
        degenerate_columns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over the data range; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            left: lo + k as f64 * width,
            right: lo + (k + 1) as f64 * width,
            count,
        })
        .collect()
}

pub fn write_histogram_csv(bins: &[HistogramBin], out: impl Write) -> Result<(), SignalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_left", "bin_right", "count"])
        .map_err(csv_io)?;
    for b in bins {
        w.write_record([b.left.to_string(), b.right.to_string(), b.count.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}
