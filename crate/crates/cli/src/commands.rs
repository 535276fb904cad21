use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{error, info};

use regplan::control::PlannerKind;
use regplan::mbrl::{failed_stage, gap_study, run_training, GapCell, GapStudy, ReplayBuffer, RunConfig};

use crate::manifest::RunManifest;
use crate::seeds::parse_seeds;
use crate::Failure;

/// Learning curve of one seed, or why it failed.
type SeedResult = Result<Vec<f64>, String>;

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(RunConfig::parse(&text)?)
}

fn csv_error(e: csv::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Mean and population std of each episode's return across seeds.
pub fn aggregate_curves(curves: &[Vec<f64>]) -> Vec<(usize, f64, f64)> {
    let longest = curves.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|k| {
            let vals: Vec<f64> = curves.iter().filter_map(|c| c.get(k).copied()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (k, mean, var.sqrt())
        })
        .collect()
}

pub fn train(args: &[String], config: &Path, seed_spec: &str, out: &Path, jobs: usize) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let seeds = parse_seeds(seed_spec)?;
    if jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    fs::create_dir_all(out)?;
    let seed_dirs: Vec<PathBuf> = seeds.iter().map(|s| out.join(format!("seed-{s}"))).collect();
    let mut outputs = seed_dirs.clone();
    outputs.push(out.join("learning_curve.csv"));
    let mut manifest = RunManifest::start(args, config, cfg.to_kv(), seeds.clone(), outputs);
    manifest.write(out)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SeedResult>>> = Mutex::new(vec![None; seeds.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let mut run_cfg = cfg.clone();
                run_cfg.seed = seeds[i];
                info!("seed {}: training into {}", seeds[i], seed_dirs[i].display());
                let r = run_training(&run_cfg, Some(&seed_dirs[i]))
                    .map(|o| o.learning_curve())
                    .map_err(|e| {
                        let stage = failed_stage(&e).unwrap_or("setup");
                        format!("seed {} failed in {stage}: {e}", seeds[i])
                    });
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for r in results.into_inner().expect("results lock").into_iter().flatten() {
        match r {
            Ok(c) => curves.push(c),
            Err(m) => {
                error!("{m}");
                failures.push(m);
            }
        }
    }
    if !curves.is_empty() {
        let mut w = csv::Writer::from_path(out.join("learning_curve.csv")).map_err(csv_error)?;
        w.write_record(["episode", "return_mean", "return_std"])
            .map_err(csv_error)?;
        for (k, mean, std) in aggregate_curves(&curves) {
            w.write_record([k.to_string(), mean.to_string(), std.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
    }
    manifest.finish(failures.is_empty());
    manifest.write(out)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(failures.join("; ")))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn gap(
    args: &[String],
    config: &Path,
    episodes_of_data: usize,
    optimizer: Option<PlannerKind>,
    alpha: Option<f64>,
    oracle: bool,
    seed_spec: &str,
    out: &Path,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let seeds = parse_seeds(seed_spec)?;
    if optimizer == Some(PlannerKind::CemThenAdam) {
        return Err(Failure::Usage("--optimizer must be cem or adam".into()));
    }
    if episodes_of_data == 0 {
        return Err(Failure::Usage("--episodes-of-data must be at least 1".into()));
    }
    let study = GapStudy {
        episodes_of_data,
        alpha: alpha.unwrap_or(cfg.mpc.alpha),
        cells: GapCell::grid(optimizer),
        oracle,
    };
    fs::create_dir_all(out)?;
    let report = out.join("gap_report.csv");
    let mut manifest = RunManifest::start(args, config, cfg.to_kv(), seeds.clone(), vec![report.clone()]);
    manifest.write(out)?;

    // Header written by hand so an empty report still has one.
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&report)
        .map_err(csv_error)?;
    w.write_record(["cell", "seed", "alpha", "imagined", "realized", "gap"])
        .map_err(csv_error)?;
    let mut outcome = Ok(());
    for &seed in &seeds {
        match gap_study(&cfg, &study, seed) {
            Ok(rows) => {
                for r in rows {
                    info!(
                        "seed {seed} {}: imagined {:.3}, realized {:.3}, gap {:.3}",
                        r.cell, r.imagined, r.realized, r.gap
                    );
                    w.serialize(&r).map_err(csv_error)?;
                }
            }
            Err(e) => {
                outcome = Err(Failure::from(e));
                break;
            }
        }
    }
    w.flush()?;
    manifest.finish(outcome.is_ok());
    manifest.write(out)?;
    outcome
}

pub fn replay_dump(buffer: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let text =
        fs::read_to_string(buffer).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", buffer.display())))?;
    let buffer = ReplayBuffer::from_jsonl(&text)?;
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let Some(first) = buffer.episodes().first() else {
        return Ok(());
    };
    let n = first.observations[0].len();
    let m = first.actions.first().map_or(0, Vec::len);
    let mut header = vec!["episode".to_string(), "step".to_string()];
    header.extend((0..n).map(|i| format!("obs_{i}")));
    header.extend((0..m).map(|i| format!("action_{i}")));
    header.push("reward".into());
    header.extend((0..n).map(|i| format!("next_obs_{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for (e, ep) in buffer.episodes().iter().enumerate() {
        for t in 0..ep.len() {
            let mut row = vec![e.to_string(), t.to_string()];
            row.extend(ep.observations[t].iter().map(f64::to_string));
            row.extend(ep.actions[t].iter().map(f64::to_string));
            row.push(ep.rewards[t].to_string());
            row.extend(ep.observations[t + 1].iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}
