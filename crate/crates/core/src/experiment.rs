//! Generate-recover-score pipeline and sample-count sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::GridTopology;
use crate::metrics::recovery_ratio;
use crate::powerflow::SolverOptions;
use crate::recovery::{recover, RecoveryOptions};
use crate::signals::{
    daily_interval, simulate_with_stats, synth_profile, MeasurementSet, ResidentialTemplate,
    SignalError, SimulationStats,
};

/// Default relative spread of the per-snapshot load noise.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Number of increments `T`; `T + 1` snapshots are simulated.
    pub samples: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub power_factor: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Seconds between snapshots; `None` spreads the samples over one day.
    pub interval_s: Option<f64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        Self {
            samples: 1_000,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed: 0,
            power_factor: 1.0,
            tol: solver.tol,
            max_iter: solver.max_iter,
            interval_s: None,
        }
    }
}

impl GenerationConfig {
    pub fn interval(&self) -> f64 {
        self.interval_s
            .unwrap_or_else(|| daily_interval(self.samples))
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// Synthesizes a profile for every leaf and simulates it.
pub fn generate(
    topology: &GridTopology,
    config: &GenerationConfig,
) -> Result<(MeasurementSet, SimulationStats), SignalError> {
    let profile = synth_profile(
        &topology.leaves(),
        config.samples,
        config.interval(),
        &ResidentialTemplate::default(),
        config.noise_sigma,
        config.seed,
    )?;
    simulate_with_stats(topology, &profile, config.power_factor, &config.solver())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub fixture: String,
    pub samples: usize,
    pub seed: u64,
    /// `None` when generation or recovery failed.
    pub recovery_ratio: Option<f64>,
    pub layers: Option<usize>,
    pub elapsed_ms: f64,
    pub error: Option<String>,
}

pub fn run_point(
    fixture: &str,
    truth: &GridTopology,
    generation: &GenerationConfig,
    recovery: &RecoveryOptions,
) -> PointResult {
    let start = Instant::now();
    let outcome = (|| -> Result<(f64, usize), String> {
        let (m, _) = generate(truth, generation).map_err(|e| e.to_string())?;
        let rec = recover(&m, recovery).map_err(|e| e.to_string())?;
        let report = recovery_ratio(truth, &rec.topology).map_err(|e| e.to_string())?;
        Ok((report.recovery_ratio, rec.layer_count()))
    })();
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let (recovery_ratio, layers, error) = match outcome {
        Ok((r, l)) => (Some(r), Some(l), None),
        Err(e) => (None, None, Some(e)),
    };
    PointResult {
        fixture: fixture.to_string(),
        samples: generation.samples,
        seed: generation.seed,
        recovery_ratio,
        layers,
        elapsed_ms,
        error,
    }
}

/// Runs every `samples x seeds` point on up to `jobs` threads. Results are
/// ordered by sample count, then seed.
pub fn sweep(
    fixture: &str,
    truth: &GridTopology,
    sample_grid: &[usize],
    seeds: &[u64],
    base: &GenerationConfig,
    recovery: &RecoveryOptions,
    jobs: usize,
) -> Result<Vec<PointResult>, rayon::ThreadPoolBuildError> {
    let points: Vec<(usize, u64)> = sample_grid
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    let mut results: Vec<PointResult> = pool.install(|| {
        points
            .par_iter()
            .map(|&(samples, seed)| {
                let config = GenerationConfig {
                    samples,
                    seed,
                    ..base.clone()
                };
                run_point(fixture, truth, &config, recovery)
            })
            .collect()
    });
    results.sort_by_key(|r| (r.samples, r.seed));
    Ok(results)
}

/// Mean ratio per sample count over the points that produced one.
pub fn mean_ratio_by_samples(results: &[PointResult]) -> BTreeMap<usize, Option<f64>> {
    let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in results {
        let entry = acc.entry(r.samples).or_default();
        if let Some(x) = r.recovery_ratio {
            entry.push(x);
        }
    }
    acc.into_iter()
        .map(|(n, v)| {
            let mean = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            (n, mean)
        })
        .collect()
}

/// `fixture,samples,seed,recovery_ratio,layers,elapsed_ms`; failed points
/// carry `NaN` for the ratio and an empty layer count.
pub fn write_benchmark_csv(results: &[PointResult], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "fixture,samples,seed,recovery_ratio,layers,elapsed_ms")?;
    for r in results {
        let ratio = r
            .recovery_ratio
            .map_or_else(|| "NaN".to_string(), |x| x.to_string());
        let layers = r.layers.map_or_else(String::new, |l| l.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            r.fixture, r.samples, r.seed, ratio, layers, r.elapsed_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::build_fixture;

    #[test]
    fn csv_marks_failures_with_nan() {
        let rows = vec![
            PointResult {
                fixture: "sys6".into(),
                samples: 10,
                seed: 1,
                recovery_ratio: Some(1.0),
                layers: Some(2),
                elapsed_ms: 1.25,
                error: None,
            },
            PointResult {
                fixture: "sys6".into(),
                samples: 10,
                seed: 2,
                recovery_ratio: None,
                layers: None,
                elapsed_ms: 0.5,
                error: Some("boom".into()),
            },
        ];
        let mut buf = Vec::new();
        write_benchmark_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "fixture,samples,seed,recovery_ratio,layers,elapsed_ms\n\
             sys6,10,1,1,2,1.250\n\
             sys6,10,2,NaN,,0.500\n"
        );
        assert_eq!(mean_ratio_by_samples(&rows)[&10], Some(1.0));
    }

    #[test]
    fn sweep_is_ordered_and_records_failures() {
        let truth = build_fixture("sys6").unwrap();
        let base = GenerationConfig::default();
        // one sample is rejected by the generator, the rest succeed
        let rows = sweep(
            "sys6",
            &truth,
            &[200, 1],
            &[3, 1],
            &base,
            &RecoveryOptions::default(),
            2,
        )
        .unwrap();
        let keys: Vec<(usize, u64)> = rows.iter().map(|r| (r.samples, r.seed)).collect();
        assert_eq!(keys, vec![(1, 1), (1, 3), (200, 1), (200, 3)]);
        assert!(rows[0].recovery_ratio.is_none() && rows[0].error.is_some());
        assert!(rows[2].recovery_ratio.is_some());
    }
}
