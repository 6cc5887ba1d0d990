use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use lvtopo_core::experiment::{self, mean_ratio_by_samples, sweep, write_benchmark_csv};
use lvtopo_core::signals::{self, histogram, write_histogram_csv};
use lvtopo_core::stats::write_matrix_csv;
use lvtopo_core::{recover as run_recovery, recovery_ratio};

use crate::config::{read_topology, usage, Settings};
use crate::export::{render, Format};

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> anyhow::Result<std::io::BufWriter<fs::File>> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(file))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn generate(
    mut s: Settings,
    dump_convergence: bool,
    histogram_bins: Option<usize>,
) -> anyhow::Result<()> {
    s.command = Some("generate".into());
    let topology = s.resolve_topology()?;
    let mut cfg = s.resolve_generation()?;
    cfg.interval_s = Some(cfg.interval());
    s.interval_s = cfg.interval_s;
    if histogram_bins == Some(0) {
        return usage("--histogram-bins must be at least 1");
    }
    let dir = s.out_dir();
    prepare_dir(&dir)?;

    let (m, stats) = experiment::generate(&topology, &cfg)?;
    signals::save_measurements(&m, &dir.join("measurements.csv"))?;
    write_text(&dir.join("topology.json"), &topology.to_json())?;
    s.write(&dir)?;

    if dump_convergence {
        let mut out = create(&dir.join("convergence.csv"))?;
        writeln!(out, "snapshot,iteration,max_delta_v")?;
        for (snap, history) in stats.max_delta_history.iter().enumerate() {
            for (it, delta) in history.iter().enumerate() {
                writeln!(out, "{snap},{},{delta}", it + 1)?;
            }
        }
        out.flush()?;
    }
    if let Some(bins) = histogram_bins {
        let hist_dir = dir.join("histograms");
        prepare_dir(&hist_dir)?;
        for (j, leaf) in m.leaves().iter().enumerate() {
            for (label, series) in [("dv", m.dv()), ("di", m.di())] {
                let values: Vec<f64> = series.column(j).iter().copied().collect();
                let out = create(&hist_dir.join(format!("leaf_{leaf}_{label}.csv")))?;
                write_histogram_csv(&histogram(&values, bins), out)?;
            }
        }
    }

    println!(
        "samples={} snapshots={} leaves={} interval_s={} iterations mean={:.2} max={}",
        m.samples(),
        m.samples() + 1,
        m.leaves().len(),
        cfg.interval(),
        stats.mean_iterations(),
        stats.max_iterations()
    );
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn recover(mut s: Settings, dump_matrices: bool) -> anyhow::Result<()> {
    s.command = Some("recover".into());
    let Some(path) = s.measurements.clone() else {
        return usage("--measurements is required");
    };
    let mut opts = s.resolve_recovery()?;
    opts.keep_matrices = dump_matrices;
    let truth = s.truth.as_deref().map(read_topology).transpose()?;
    let dir = s.out_dir();
    prepare_dir(&dir)?;

    let m =
        signals::load_measurements(&path).with_context(|| format!("loading {}", path.display()))?;
    let rec = run_recovery(&m, &opts)?;
    let log = rec.step_log();
    write_text(&dir.join("recovered.json"), &rec.topology.to_json())?;
    write_text(&dir.join("steps.txt"), &log)?;
    s.write(&dir)?;
    print!("{log}");

    if dump_matrices {
        let mdir = dir.join("matrices");
        prepare_dir(&mdir)?;
        for layer in &rec.layers {
            let Some(mx) = &layer.matrices else { continue };
            let n = layer.layer;
            write_matrix_csv(
                &mx.correlation,
                create(&mdir.join(format!("layer_{n}_correlation.csv")))?,
            )?;
            write_matrix_csv(
                &mx.precision,
                create(&mdir.join(format!("layer_{n}_precision.csv")))?,
            )?;
            mx.distances
                .write_csv(create(&mdir.join(format!("layer_{n}_distance.csv")))?)?;
        }
    }
    if let Some(truth) = truth {
        let report = recovery_ratio(&truth, &rec.topology)?;
        let text = report.to_text();
        write_text(&dir.join("report.txt"), &text)?;
        print!("{text}");
    }
    Ok(())
}

pub fn benchmark(mut s: Settings) -> anyhow::Result<()> {
    s.command = Some("benchmark".into());
    let grid = match &s.sample_grid {
        Some(g) if !g.is_empty() => g.clone(),
        _ => return usage("--samples needs at least one sample count"),
    };
    if let Some(&bad) = grid.iter().find(|&&n| n < 2) {
        return usage(format!("every sample count must be at least 2, got {bad}"));
    }
    let truth = s.resolve_topology()?;
    let label = match (&s.fixture, &s.topology) {
        (Some(f), _) => f.clone(),
        (_, Some(p)) => p
            .file_stem()
            .map_or_else(|| "topology".into(), |x| x.to_string_lossy().into_owned()),
        _ => unreachable!("resolve_topology checked the source"),
    };
    s.samples = Some(grid[0]);
    let base = s.resolve_generation()?;
    s.samples = None;
    let recovery = s.resolve_recovery()?;
    let count = *s.seeds.get_or_insert(5);
    if count == 0 {
        return usage("--seeds must be at least 1");
    }
    let seeds: Vec<u64> = (base.seed..base.seed + count).collect();
    let jobs = *s
        .jobs
        .get_or_insert_with(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return usage("--jobs must be at least 1");
    }
    let dir = s.out_dir();
    prepare_dir(&dir)?;

    let rows = sweep(&label, &truth, &grid, &seeds, &base, &recovery, jobs)?;
    let mut out = create(&dir.join("benchmark.csv"))?;
    write_benchmark_csv(&rows, &mut out)?;
    out.flush()?;
    s.write(&dir)?;

    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!("warning: samples={} seed={}: {e}", r.samples, r.seed);
        }
    }
    println!("samples,mean_recovery_ratio");
    for (n, mean) in mean_ratio_by_samples(&rows) {
        match mean {
            Some(x) => println!("{n},{x:.4}"),
            None => println!("{n},NaN"),
        }
    }
    Ok(())
}

pub fn export(s: Settings, format: &str, output: Option<&Path>) -> anyhow::Result<()> {
    let format: Format = format.parse()?;
    let topology = s.resolve_topology()?;
    let source = s
        .fixture
        .clone()
        .or_else(|| {
            s.topology
                .as_ref()
                .map(|p: &PathBuf| p.display().to_string())
        })
        .unwrap_or_default();
    let text = render(&topology, format, &source);
    match output {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
