//! Artifact writers: trajectory CSV, report JSON, sweep summary CSV, and
//! the verification report. All files go through a temp-file + rename so
//! readers never observe partial content and reruns replace atomically;
//! all numeric content uses shortest round-trip float formatting, so a
//! fixed config reproduces files byte for byte (wall-time fields in the
//! JSON reports are the one documented exception).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::Context;

use duopt_core::metrics::RunReport;
use duopt_core::optim::Trajectory;
use duopt_core::verify::CheckReport;

use crate::error::{CliResult, Failure};

/// Write bytes via a sibling temp file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::runtime)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))
        .map_err(Failure::runtime)?;
    tmp.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::runtime)?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))
        .map_err(Failure::runtime)?;
    Ok(())
}

/// Render a trajectory as CSV with header
/// `t,chosen_index,f_dpo,f_sft,f_mix,theta_0..theta_{d-1}`.
///
/// `chosen_index` is 0 for the initial iterate (no update produced it),
/// 1 for preference steps, 2 for supervised steps, 3 for blended steps;
/// `f_mix` is evaluated at the run's own λ.
pub fn trajectory_csv(trajectory: &Trajectory, dim: usize, lambda: f64) -> String {
    let mut out = String::from("t,chosen_index,f_dpo,f_sft,f_mix");
    for i in 0..dim {
        let _ = write!(out, ",theta_{i}");
    }
    out.push('\n');
    for rec in &trajectory.records {
        let code = rec.chosen.map_or(0, |kind| kind.csv_code());
        let _ = write!(
            out,
            "{},{},{},{},{}",
            rec.t,
            code,
            rec.losses.f_dpo,
            rec.losses.f_sft,
            rec.losses.mix(lambda)
        );
        for x in &rec.theta {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

/// Render a run report as pretty JSON, with a note that the timing field
/// is CPU wall time of the optimization loop (no accelerator metrics at
/// this scale) and is the one nondeterministic field.
pub fn report_json(report: &RunReport) -> CliResult<String> {
    let mut value = serde_json::to_value(report).map_err(Failure::runtime)?;
    value
        .as_object_mut()
        .expect("report serializes to an object")
        .insert(
            "timing_note".into(),
            serde_json::Value::String(
                "wall_time_s is the monotonic span of the optimization loop only \
                 (CPU wall time; I/O excluded) and is not reproducible across runs"
                    .into(),
            ),
        );
    let text = serde_json::to_string_pretty(&value).map_err(Failure::runtime)?;
    Ok(text + "\n")
}

/// One row per run: `variant,lambda,seed,total_steps,f_dpo,f_sft,f_mix,
/// gap_mix,ideal_distance,steps_dpo,steps_sft,wall_time_s`.
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(
        "variant,lambda,seed,total_steps,f_dpo,f_sft,f_mix,gap_mix,ideal_distance,\
         steps_dpo,steps_sft,wall_time_s\n",
    );
    for r in reports {
        let gap = r
            .gap_mix
            .iter()
            .find(|(l, _)| (*l - r.lambda).abs() < 1e-12)
            .or_else(|| r.gap_mix.first())
            .map_or(f64::NAN, |(_, g)| *g);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.lambda,
            r.seed,
            r.total_steps,
            r.losses.f_dpo,
            r.losses.f_sft,
            r.losses.mix(r.lambda),
            gap,
            r.ideal_distance,
            r.steps_dpo,
            r.steps_sft,
            r.wall_time_s
        );
    }
    out
}

/// Render the oracle-suite reports as pretty JSON.
pub fn verify_report_json(reports: &[CheckReport]) -> CliResult<String> {
    let text = serde_json::to_string_pretty(reports).map_err(Failure::runtime)?;
    Ok(text + "\n")
}

/// Artifact file names for one run, deterministic in (variant, λ, seed).
pub fn run_artifact_names(tag: &str, lambda: f64, seed: u64) -> (String, String) {
    let base = format!("{tag}_lam{lambda}_seed{seed}");
    (format!("trajectory_{base}.csv"), format!("report_{base}.json"))
}
