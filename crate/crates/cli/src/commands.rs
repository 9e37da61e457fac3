//! Command implementations: single runs, λ-grid sweeps, and the
//! numerical-oracle suite.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use rayon::prelude::*;

use duopt_core::instance::ProblemInstance;
use duopt_core::metrics::{build_report, variant_at_lambda, RunReport};
use duopt_core::optim::{default_init, resolve_reference, run, RunConfig, Trajectory};
use duopt_core::verify::run_all_checks;

use crate::config::{resolve_optima, ExperimentConfig};
use crate::error::{classify, CliResult, Failure, EXIT_THRESHOLD};
use crate::output;

/// Command-line overrides applied on top of a loaded config.
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub log_stride: Option<u64>,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.run.seed = seed;
            config.seeds = vec![seed];
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(stride) = self.log_stride {
            config.run.log_stride = stride;
        }
    }
}

/// Load, validate, and prepare a config: apply overrides, materialize the
/// instance, pin the protocol initialization, and resolve the reference.
/// Returns (config, unresolved instance, resolved instance).
fn prepare(
    config_path: &Path,
    overrides: &Overrides,
) -> CliResult<(ExperimentConfig, ProblemInstance, ProblemInstance)> {
    let mut config = ExperimentConfig::load(config_path)?;
    overrides.apply(&mut config);
    let raw = config.load_instance()?;
    config.run.validate(&raw).map_err(classify)?;
    // Pin the initialization before handing runners a resolved instance,
    // so training-directive instances keep their protocol start.
    if config.run.init.is_none() {
        config.run.init = Some(default_init(&raw));
    }
    let resolved = resolve_reference(&raw).map_err(classify)?;
    Ok((config, raw, resolved))
}

/// Execute one run and write its trajectory and report files.
pub fn cmd_run(config_path: &Path, overrides: &Overrides) -> CliResult<u8> {
    let (config, raw, resolved) = prepare(config_path, overrides)?;
    let lambda = config.run.variant.lambda();
    let optima = resolve_optima(config.optima.as_ref(), &raw, &config.run, &[lambda])?;
    let trajectory = run(&resolved, &config.run, Some(&optima)).map_err(classify)?;
    let report = build_report(&config.run, &trajectory, &optima, &[lambda]).map_err(classify)?;
    let (traj_name, report_name) =
        output::run_artifact_names(config.run.variant.tag(), lambda, config.run.seed);
    let traj_path = config.output_dir.join(traj_name);
    let report_path = config.output_dir.join(report_name);
    output::write_atomic(
        &traj_path,
        output::trajectory_csv(&trajectory, resolved.dim(), lambda).as_bytes(),
    )?;
    output::write_atomic(&report_path, output::report_json(&report)?.as_bytes())?;
    println!(
        "run {} λ={} seed={}: f_dpo={:.6} f_sft={:.6} gap_mix({})={:.6}",
        report.variant,
        lambda,
        report.seed,
        report.losses.f_dpo,
        report.losses.f_sft,
        lambda,
        report.gap_mix.first().map_or(f64::NAN, |(_, g)| *g),
    );
    println!("wrote {}", traj_path.display());
    println!("wrote {}", report_path.display());
    Ok(0)
}

/// A worker pool sized by the DUOPT_WORKERS environment variable
/// (default: available parallelism).
fn worker_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("DUOPT_WORKERS") {
        let workers: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                Failure::validation(anyhow!(
                    "DUOPT_WORKERS must be a positive integer, got {raw:?}"
                ))
            })?;
        builder = builder.num_threads(workers);
    }
    builder.build().map_err(Failure::runtime)
}

/// Execute the λ grid once per base seed, fanning runs out across the
/// worker pool. Results are aggregated in (seed, grid) order regardless
/// of completion order; the i-th grid entry of a sweep runs with seed
/// `base + i`.
pub fn cmd_sweep(config_path: &Path, overrides: &Overrides) -> CliResult<u8> {
    let (config, raw, resolved) = prepare(config_path, overrides)?;
    let grid = config
        .lambda_grid
        .clone()
        .filter(|g| !g.is_empty())
        .ok_or_else(|| Failure::validation(anyhow!("sweep requires a non-empty lambda_grid")))?;
    let optima = resolve_optima(config.optima.as_ref(), &raw, &config.run, &grid)?;

    let mut jobs: Vec<(f64, RunConfig)> = Vec::new();
    for base_seed in config.effective_seeds() {
        for (i, &lambda) in grid.iter().enumerate() {
            let mut job = config.run.clone();
            job.seed = base_seed + i as u64;
            job.variant = variant_at_lambda(&config.run.variant, lambda, config.run.total_steps);
            jobs.push((lambda, job));
        }
    }

    let pool = worker_pool()?;
    let results: Vec<CliResult<(RunReport, Trajectory)>> = pool.install(|| {
        jobs.par_iter()
            .map(|(lambda, job)| {
                let trajectory = run(&resolved, job, Some(&optima)).map_err(classify)?;
                let report =
                    build_report(job, &trajectory, &optima, &[*lambda]).map_err(classify)?;
                Ok((report, trajectory))
            })
            .collect()
    });

    let mut reports = Vec::with_capacity(results.len());
    for ((lambda, job), result) in jobs.iter().zip(results) {
        let (report, trajectory) = result?;
        let (traj_name, report_name) =
            output::run_artifact_names(job.variant.tag(), *lambda, job.seed);
        output::write_atomic(
            &config.output_dir.join(traj_name),
            output::trajectory_csv(&trajectory, resolved.dim(), *lambda).as_bytes(),
        )?;
        output::write_atomic(
            &config.output_dir.join(report_name),
            output::report_json(&report)?.as_bytes(),
        )?;
        reports.push(report);
    }
    let summary_path = config.output_dir.join("summary.csv");
    output::write_atomic(&summary_path, output::summary_csv(&reports).as_bytes())?;
    println!(
        "sweep complete: {} runs ({} λ × {} seeds); summary at {}",
        reports.len(),
        grid.len(),
        config.effective_seeds().len(),
        summary_path.display()
    );
    Ok(0)
}

/// Run the full oracle suite; exit 0 iff every check passes.
pub fn cmd_verify(seed: u64, output_dir: Option<&Path>) -> CliResult<u8> {
    let reports = run_all_checks(seed);
    for report in &reports {
        println!("{report}");
    }
    if let Some(dir) = output_dir {
        let path = dir.join("verify_report.json");
        output::write_atomic(&path, output::verify_report_json(&reports)?.as_bytes())?;
        println!("wrote {}", path.display());
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        println!("verify: all {} checks passed", reports.len());
        Ok(0)
    } else {
        eprintln!(
            "verify: {} of {} checks failed: {}",
            failed.len(),
            reports.len(),
            failed.join(", ")
        );
        Ok(EXIT_THRESHOLD)
    }
}
