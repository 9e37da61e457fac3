//! Bundled end-to-end experiments with pass/fail thresholds: the scalar
//! forgetting-gap comparison, the two-dimensional loss-space figure, and
//! the convergence-rate check. Each preset writes plot-ready trajectory
//! data plus a summary file stating every threshold and its outcome, and
//! maps a missed threshold to exit status 3.

use std::fmt::Write as _;
use std::path::Path;

use duopt_core::instance::{lower_bound_instance, toy2d_instance, ProblemInstance};
use duopt_core::metrics::{build_report, rate_fit, OptimaEstimate};
use duopt_core::optim::{
    default_init, resolve_reference, run, RunConfig, SeqOrder, StepSchedule, Trajectory, Variant,
};

use crate::config::{resolve_optima, OptimaSpec};
use crate::error::{classify, CliResult, EXIT_THRESHOLD};
use crate::output;

/// Accumulates threshold outcomes and renders the summary document.
struct Thresholds {
    lines: Vec<String>,
    all_passed: bool,
}

impl Thresholds {
    fn new() -> Self {
        Thresholds {
            lines: Vec::new(),
            all_passed: true,
        }
    }

    fn note(&mut self, line: String) {
        println!("{line}");
        self.lines.push(line);
    }

    fn check(&mut self, passed: bool, description: String) {
        let line = format!("[{}] {description}", if passed { "PASS" } else { "FAIL" });
        self.all_passed &= passed;
        self.note(line);
    }

    fn finish(mut self, output_dir: &Path, name: &str) -> CliResult<u8> {
        let verdict = format!(
            "overall: {}",
            if self.all_passed { "PASS" } else { "FAIL" }
        );
        self.note(verdict);
        let mut doc = String::new();
        for line in &self.lines {
            let _ = writeln!(doc, "{line}");
        }
        let path = output_dir.join(format!("{name}_summary.txt"));
        output::write_atomic(&path, doc.as_bytes())?;
        println!("wrote {}", path.display());
        Ok(if self.all_passed { 0 } else { EXIT_THRESHOLD })
    }
}

fn base_config(variant: Variant, total_steps: u64, schedule: StepSchedule, seed: u64) -> RunConfig {
    RunConfig {
        variant,
        total_steps,
        schedule,
        seed,
        log_stride: 1,
        weight_decay: None,
        init: None,
    }
}

/// Run on a pre-resolved instance with the raw instance's protocol init.
fn run_pinned(
    raw: &ProblemInstance,
    resolved: &ProblemInstance,
    mut config: RunConfig,
    optima: Option<&OptimaEstimate>,
) -> CliResult<(RunConfig, Trajectory)> {
    if config.init.is_none() {
        config.init = Some(default_init(raw));
    }
    let trajectory = run(resolved, &config, optima).map_err(classify)?;
    Ok((config, trajectory))
}

fn write_run_artifacts(
    output_dir: &Path,
    resolved: &ProblemInstance,
    config: &RunConfig,
    trajectory: &Trajectory,
    optima: &OptimaEstimate,
    lambda: f64,
) -> CliResult<()> {
    let (traj_name, report_name) =
        output::run_artifact_names(config.variant.tag(), lambda, config.seed);
    output::write_atomic(
        &output_dir.join(traj_name),
        output::trajectory_csv(trajectory, resolved.dim(), lambda).as_bytes(),
    )?;
    let report = build_report(config, trajectory, optima, &[lambda]).map_err(classify)?;
    output::write_atomic(
        &output_dir.join(report_name),
        output::report_json(&report)?.as_bytes(),
    )?;
    Ok(())
}

/// Mean mixed-objective gap over all logged iterates of a stride-1 run.
fn run_mean_gap(trajectory: &Trajectory, lambda: f64, f_star: f64) -> f64 {
    let total: f64 = trajectory
        .records
        .iter()
        .map(|rec| rec.losses.mix(lambda) - f_star)
        .sum();
    total / trajectory.records.len() as f64
}

/// Scalar-instance gap comparison: sequential training keeps a constant
/// mixed-objective gap while the alternating method drives it to zero.
pub fn lowerbound_gap(output_dir: &Path, seed: u64) -> CliResult<u8> {
    let raw = lower_bound_instance();
    let resolved = resolve_reference(&raw).map_err(classify)?;
    let lambda = 0.5;
    let template = base_config(
        Variant::Alright { lambda },
        1,
        StepSchedule::Constant { step: 0.1 },
        seed,
    );
    let optima = resolve_optima(Some(&OptimaSpec::Builtin), &raw, &template, &[lambda])?;
    let f_star = optima.f_star_mix(lambda).expect("resolved above");

    let mut summary = Thresholds::new();
    summary.note(format!(
        "scalar instance, λ={lambda}: f*_Mix = {f_star:.9} (golden-section oracle)"
    ));

    // Sequential: preference phase then supervised phase, constant step.
    let t = 10_000;
    let mut seq = base_config(
        Variant::Sequential {
            t_dpo: t,
            t_sft: t,
            order: SeqOrder::DpoFirst,
            phase_stop_threshold: None,
        },
        2 * t,
        StepSchedule::Constant { step: 0.1 },
        seed,
    );
    seq.log_stride = 20;
    let (seq, seq_traj) = run_pinned(&raw, &resolved, seq, Some(&optima))?;
    let seq_final = seq_traj.records.last().expect("final logged");
    let seq_gap = seq_final.losses.mix(lambda) - f_star;
    write_run_artifacts(output_dir, &resolved, &seq, &seq_traj, &optima, lambda)?;
    summary.check(
        seq_final.theta[0] >= 0.0 && seq_gap >= 0.25,
        format!(
            "sequential (T_DPO=T_SFT={t}): final θ = {:.4} (expect ≥ 0), \
             G_Mix = {seq_gap:.6} (threshold ≥ 0.25)",
            seq_final.theta[0]
        ),
    );

    // Alternating: Bernoulli(λ) objective choice, α_t = 1/√T.
    let t_alt = 100_000;
    let mut alt = base_config(
        Variant::Alright { lambda },
        t_alt,
        StepSchedule::ScaledInvSqrtT { base: 1.0 },
        seed,
    );
    alt.log_stride = 100;
    let (alt, alt_traj) = run_pinned(&raw, &resolved, alt, Some(&optima))?;
    let alt_gap = alt_traj.records.last().expect("final logged").losses.mix(lambda) - f_star;
    write_run_artifacts(output_dir, &resolved, &alt, &alt_traj, &optima, lambda)?;
    summary.check(
        alt_gap <= 0.05,
        format!("alternating (T={t_alt}): G_Mix = {alt_gap:.6} (threshold ≤ 0.05)"),
    );

    summary.check(
        seq_gap - alt_gap >= 0.2,
        format!(
            "separation: sequential-over-alternating gap margin = {:.6} (threshold ≥ 0.2)",
            seq_gap - alt_gap
        ),
    );
    summary.finish(output_dir, "lowerbound_gap")
}

/// Two-dimensional loss-space figure: with the shared protocol (step
/// 0.01, weight decay 0.001, shared init), the max-gap method finishes
/// closest to the ideal point and sequential training farthest.
pub fn toy2d_figure(output_dir: &Path, seed: u64) -> CliResult<u8> {
    let raw = toy2d_instance();
    let resolved = resolve_reference(&raw).map_err(classify)?;
    let lambda = 0.5;
    let steps = 20_000;
    let schedule = StepSchedule::Constant { step: 0.01 };
    let weight_decay = Some(0.001);
    let make = |variant: Variant, total: u64| {
        let mut config = base_config(variant, total, schedule, seed);
        config.weight_decay = weight_decay;
        config.log_stride = 10;
        config
    };
    let optima_probe = make(Variant::Mix { lambda }, steps);
    let optima = resolve_optima(
        Some(&OptimaSpec::Independent { budget: steps }),
        &raw,
        &optima_probe,
        &[lambda],
    )?;

    let mut summary = Thresholds::new();
    summary.note(format!(
        "toy instance, λ={lambda}: ideal point estimate (f*_DPO, f*_SFT) = ({:.6}, {:.6})",
        optima.f_star_dpo, optima.f_star_sft
    ));

    let mut distances = Vec::new();
    let runs: [(&str, Variant, u64); 3] = [
        (
            "sequential",
            Variant::Sequential {
                t_dpo: steps / 2,
                t_sft: steps / 2,
                order: SeqOrder::DpoFirst,
                phase_stop_threshold: Some(0.05),
            },
            steps,
        ),
        ("alright", Variant::Alright { lambda }, steps),
        ("maxright", Variant::Maxright { lambda }, steps),
    ];
    for (label, variant, total) in runs {
        let (config, trajectory) = run_pinned(&raw, &resolved, make(variant, total), Some(&optima))?;
        let report = build_report(&config, &trajectory, &optima, &[lambda]).map_err(classify)?;
        summary.note(format!(
            "{label}: final (f_DPO, f_SFT) = ({:.6}, {:.6}), ideal distance = {:.6}",
            report.losses.f_dpo, report.losses.f_sft, report.ideal_distance
        ));
        write_run_artifacts(output_dir, &resolved, &config, &trajectory, &optima, lambda)?;
        distances.push(report.ideal_distance);
    }
    let (d_seq, d_alright, d_maxright) = (distances[0], distances[1], distances[2]);
    summary.check(
        d_maxright <= d_alright && d_alright < d_seq,
        format!(
            "ordering: maxright ({d_maxright:.6}) ≤ alright ({d_alright:.6}) \
             < sequential ({d_seq:.6})"
        ),
    );
    summary.check(
        d_seq >= 1.5 * d_maxright,
        format!(
            "margin: sequential distance ≥ 1.5× maxright ({:.3}× measured)",
            d_seq / d_maxright
        ),
    );
    summary.finish(output_dir, "toy2d_figure")
}

/// Convergence-rate check: the alternating method's run-mean gap decays
/// as a power of the budget with exponent near −½.
pub fn rate_check(output_dir: &Path, seed: u64) -> CliResult<u8> {
    let raw = lower_bound_instance();
    let resolved = resolve_reference(&raw).map_err(classify)?;
    let lambda = 0.5;
    let seeds: Vec<u64> = (0..5).map(|i| seed + i).collect();
    let probe = base_config(
        Variant::Alright { lambda },
        1,
        StepSchedule::ScaledInvSqrtT { base: 1.0 },
        seed,
    );
    let optima = resolve_optima(Some(&OptimaSpec::Builtin), &raw, &probe, &[lambda])?;
    let f_star = optima.f_star_mix(lambda).expect("resolved above");

    let mut summary = Thresholds::new();
    let budgets = [1_000u64, 10_000, 100_000];
    let mut mean_points = Vec::new();
    let mut final_points = Vec::new();
    let mut csv = String::from("total_steps,mean_run_gap,mean_final_gap\n");
    for &budget in &budgets {
        let mut run_gaps = Vec::new();
        let mut final_gaps = Vec::new();
        for &s in &seeds {
            let config = base_config(
                Variant::Alright { lambda },
                budget,
                StepSchedule::ScaledInvSqrtT { base: 1.0 },
                s,
            );
            let (_, trajectory) = run_pinned(&raw, &resolved, config, Some(&optima))?;
            run_gaps.push(run_mean_gap(&trajectory, lambda, f_star));
            let last = trajectory.records.last().expect("final logged");
            final_gaps.push(last.losses.mix(lambda) - f_star);
        }
        let mean = run_gaps.iter().sum::<f64>() / run_gaps.len() as f64;
        let mean_final = final_gaps.iter().sum::<f64>() / final_gaps.len() as f64;
        summary.note(format!(
            "T={budget}: run-mean gap = {mean:.6}, final gap = {mean_final:.6} \
             (mean over {} seeds)",
            seeds.len()
        ));
        let _ = writeln!(csv, "{budget},{mean},{mean_final}");
        mean_points.push((budget as f64, mean));
        final_points.push((budget as f64, mean_final));
    }
    output::write_atomic(&output_dir.join("rate_points.csv"), csv.as_bytes())?;

    let slope = rate_fit(&mean_points).map_err(classify)?;
    // The final-iterate slope is steeper (transient + noise-floor ends);
    // reported for transparency, not thresholded.
    match rate_fit(&final_points) {
        Ok(final_slope) => summary.note(format!(
            "final-iterate slope = {final_slope:.4} (informational)"
        )),
        Err(e) => summary.note(format!("final-iterate slope unavailable: {e}")),
    }
    summary.check(
        (-0.7..=-0.3).contains(&slope),
        format!("run-mean gap slope = {slope:.4} (band [−0.7, −0.3])"),
    );
    summary.finish(output_dir, "rate_check")
}
