//! Property-based checks of the library-wide contracts: normalization,
//! loss/gradient bounds, the two equivalent preference-margin forms,
//! projection geometry, gap non-negativity against the brute-force
//! oracle, iterate feasibility, per-phase monotone drift, run
//! determinism, and rate fitting.

use std::sync::LazyLock;

use proptest::prelude::*;

use duopt_core::instance::{lower_bound_instance, toy2d_instance, ConstraintSet, ProblemInstance};
use duopt_core::metrics::{optimality_gap, rate_fit, scalar_bruteforce_min, OptimaEstimate};
use duopt_core::optim::{
    default_init, project, resolve_reference, run, run_sequential, RunConfig, SeqOrder,
    StepSchedule, Variant,
};
use duopt_core::policy::{
    dpo_loss, g_dpo_sample, g_sft_sample, h_beta, log_prob, prob_dist, sft_loss,
};

/// Resolved built-in instances, trained once and shared across cases.
static LOWER_BOUND: LazyLock<ProblemInstance> =
    LazyLock::new(|| resolve_reference(&lower_bound_instance()).expect("resolvable"));
static TOY2D: LazyLock<ProblemInstance> =
    LazyLock::new(|| resolve_reference(&toy2d_instance()).expect("resolvable"));

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn theta_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, dim)
}

fn both_instances() -> [&'static ProblemInstance; 2] {
    [&*LOWER_BOUND, &*TOY2D]
}

fn basic_config(variant: Variant, total_steps: u64, seed: u64) -> RunConfig {
    RunConfig {
        variant,
        total_steps,
        schedule: StepSchedule::Constant { step: 0.05 },
        seed,
        log_stride: 1,
        weight_decay: None,
        init: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    /// Candidate probabilities form a distribution for every input.
    #[test]
    fn probabilities_normalize(theta1 in theta_vec(1), theta2 in theta_vec(2)) {
        for (inst, theta) in [(&*LOWER_BOUND, &theta1), (&*TOY2D, &theta2)] {
            for (input, _, _) in inst.features.entries() {
                let probs = prob_dist(theta, inst, input);
                let total: f64 = probs.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12, "Σp = {total}");
                prop_assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    /// Both objectives are finite, non-negative log-losses everywhere.
    #[test]
    fn losses_finite_and_nonnegative(theta1 in theta_vec(1), theta2 in theta_vec(2)) {
        for (inst, theta) in [(&*LOWER_BOUND, &theta1), (&*TOY2D, &theta2)] {
            for f in [dpo_loss(theta, inst), sft_loss(theta, inst)] {
                prop_assert!(f.is_finite());
                prop_assert!(f >= 0.0, "log-loss {f} < 0");
            }
        }
    }

    /// The simplified linear preference margin equals the reference-policy
    /// log-ratio form β[(log π_θ − log π_ref)(chosen) − (·)(rejected)].
    #[test]
    fn margin_forms_agree(theta1 in theta_vec(1), theta2 in theta_vec(2)) {
        for (inst, theta) in [(&*LOWER_BOUND, &theta1), (&*TOY2D, &theta2)] {
            let theta_ref = inst.reference().expect("resolved");
            for pair in &inst.dpo_data {
                let ratio = |y: &str| {
                    log_prob(theta, inst, &pair.input, y)
                        - log_prob(theta_ref, inst, &pair.input, y)
                };
                let log_ratio_form =
                    inst.beta * (ratio(&pair.chosen) - ratio(&pair.rejected));
                let linear = h_beta(theta, inst, pair);
                prop_assert!(
                    (linear - log_ratio_form).abs() < 1e-10,
                    "{linear} vs {log_ratio_form}"
                );
            }
        }
    }

    /// Per-sample gradient norms obey ‖g_DPO‖ ≤ 2βΦ and ‖g_SFT‖ ≤ 2Φ.
    #[test]
    fn sample_gradient_norms_bounded(theta1 in theta_vec(1), theta2 in theta_vec(2)) {
        for (inst, theta) in [(&*LOWER_BOUND, &theta1), (&*TOY2D, &theta2)] {
            let phi = inst.feature_bound();
            for pair in &inst.dpo_data {
                let g = g_dpo_sample(theta, inst, pair);
                prop_assert!(l2(&g) <= 2.0 * inst.beta * phi + 1e-12);
            }
            for ex in &inst.sft_data {
                let g = g_sft_sample(theta, inst, ex);
                prop_assert!(l2(&g) <= 2.0 * phi + 1e-12);
            }
        }
    }

    /// Box projection clamps into the box and is exactly idempotent.
    #[test]
    fn box_projection_feasible_and_idempotent(
        theta in theta_vec(3),
        lo in prop::collection::vec(-5.0f64..0.0, 3),
        width in prop::collection::vec(0.1f64..4.0, 3),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(&l, &w)| l + w).collect();
        let set = ConstraintSet::Box { lower: lo.clone(), upper: hi.clone() };
        let p = project(&theta, &set);
        for i in 0..3 {
            prop_assert!(p[i] >= lo[i] && p[i] <= hi[i]);
        }
        prop_assert_eq!(project(&p, &set), p);
    }

    /// Ball projection lands inside the ball (within rounding) and moves a
    /// feasible point nowhere.
    #[test]
    fn ball_projection_feasible(
        theta in theta_vec(3),
        center in prop::collection::vec(-3.0f64..3.0, 3),
        radius in 0.1f64..5.0,
    ) {
        let set = ConstraintSet::Ball { center: center.clone(), radius };
        let p = project(&theta, &set);
        let dist = l2(&p.iter().zip(&center).map(|(&a, &c)| a - c).collect::<Vec<_>>());
        prop_assert!(dist <= radius + 1e-12, "dist {dist} > r {radius}");
        let q = project(&p, &set);
        let moved = l2(&q.iter().zip(&p).map(|(&a, &b)| a - b).collect::<Vec<_>>());
        prop_assert!(moved <= 1e-12);
    }

    /// Against the golden-section oracle, the mixed optimality gap is
    /// non-negative everywhere (up to the oracle's own tolerance).
    #[test]
    fn gap_nonnegative_under_bruteforce_optimum(
        theta in -30.0f64..30.0,
        lambda in 0.0f64..=1.0,
    ) {
        let inst = &*LOWER_BOUND;
        let (_, f_star) = scalar_bruteforce_min(inst, lambda, [-80.0, 80.0], 1e-10).unwrap();
        let mut optima = OptimaEstimate::known(inst).unwrap();
        optima.set_mix(lambda, f_star);
        let gap = optimality_gap(&[theta], inst, lambda, &optima).unwrap();
        prop_assert!(gap >= -1e-8, "gap {gap} at θ={theta}, λ={lambda}");
    }

    /// The feature-norm radius Φ is the maximum row norm of the table.
    #[test]
    fn feature_bound_is_max_row_norm(_unit in Just(())) {
        for inst in both_instances() {
            let max_norm = inst
                .features
                .entries()
                .map(|(_, _, v)| l2(v))
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(inst.feature_bound(), max_norm);
        }
    }

    /// Distances from the ideal point satisfy the triangle inequality
    /// in the loss plane.
    #[test]
    fn ideal_distance_triangle(
        a in prop::collection::vec(0.0f64..10.0, 2),
        b in prop::collection::vec(0.0f64..10.0, 2),
    ) {
        use duopt_core::metrics::ideal_distance;
        use duopt_core::policy::LossPair;
        let optima = OptimaEstimate::known(&LOWER_BOUND).unwrap();
        let pa = LossPair { f_dpo: a[0], f_sft: a[1] };
        let pb = LossPair { f_dpo: b[0], f_sft: b[1] };
        let da = ideal_distance(&pa, &optima);
        let db = ideal_distance(&pb, &optima);
        let ab = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        prop_assert!((da - db).abs() <= ab + 1e-12);
        prop_assert!(ab <= da + db + 1e-12);
    }

    /// Power-law gap sequences are recovered by the log–log fit.
    #[test]
    fn rate_fit_recovers_planted_slope(
        slope in -2.0f64..-0.1,
        scale in 0.1f64..10.0,
    ) {
        let points: Vec<(f64, f64)> = [10.0f64, 100.0, 1_000.0, 10_000.0, 100_000.0]
            .into_iter()
            .map(|t| (t, scale * t.powf(slope)))
            .collect();
        let fitted = rate_fit(&points).unwrap();
        prop_assert!((fitted - slope).abs() < 1e-9, "{fitted} vs {slope}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Identical configurations replay to identical trajectories, across
    /// variants and seeds.
    #[test]
    fn runs_are_deterministic(
        seed in 0u64..1_000_000,
        lambda in 0.0f64..=1.0,
        which in 0usize..4,
    ) {
        let inst = &*LOWER_BOUND;
        let variant = match which {
            0 => Variant::Alright { lambda },
            1 => Variant::Mix { lambda },
            2 => Variant::Maxright { lambda },
            _ => Variant::MaxrightMemEff { lambda, max_eval_step: 7 },
        };
        let config = basic_config(variant, 60, seed);
        let optima = OptimaEstimate::known(inst).unwrap();
        let a = run(inst, &config, Some(&optima)).unwrap();
        let b = run(inst, &config, Some(&optima)).unwrap();
        prop_assert_eq!(a.records, b.records);
        prop_assert_eq!(a.final_theta, b.final_theta);
        prop_assert_eq!((a.steps_dpo, a.steps_sft), (b.steps_dpo, b.steps_sft));
    }

    /// Every logged iterate of a constrained run is feasible.
    #[test]
    fn logged_iterates_stay_feasible(
        seed in 0u64..10_000,
        radius in 0.5f64..5.0,
        lambda in 0.0f64..=1.0,
    ) {
        let mut inst = LOWER_BOUND.clone();
        inst.constraint = ConstraintSet::Ball { center: vec![0.0], radius };
        let config = basic_config(Variant::Alright { lambda }, 80, seed);
        let traj = run(&inst, &config, None).unwrap();
        for rec in &traj.records {
            prop_assert!(
                rec.theta[0].abs() <= radius + 1e-12,
                "t={} θ={} outside radius {radius}",
                rec.t,
                rec.theta[0]
            );
        }
    }

    /// On the scalar instance the preference gradient is strictly positive
    /// and the supervised gradient strictly negative, so sequential phases
    /// drift monotonically: down during DPO, up during SFT.
    #[test]
    fn sequential_phases_drift_monotonically(
        t_dpo in 2u64..30,
        t_sft in 2u64..30,
        dpo_first in any::<bool>(),
    ) {
        use duopt_core::optim::StepKind;
        let inst = &*LOWER_BOUND;
        let order = if dpo_first { SeqOrder::DpoFirst } else { SeqOrder::SftFirst };
        let config = basic_config(
            Variant::Sequential { t_dpo, t_sft, order, phase_stop_threshold: None },
            t_dpo + t_sft,
            0,
        );
        let traj = run_sequential(inst, &config).unwrap();
        for pair in traj.records.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            match next.chosen {
                Some(StepKind::Dpo) => prop_assert!(
                    next.theta[0] < prev.theta[0],
                    "DPO step did not decrease θ at t={}", next.t
                ),
                Some(StepKind::Sft) => prop_assert!(
                    next.theta[0] > prev.theta[0],
                    "SFT step did not increase θ at t={}", next.t
                ),
                _ => {}
            }
        }
    }

    /// Default initialization honors a training directive's start and
    /// falls back to the origin otherwise.
    #[test]
    fn default_init_follows_instance_kind(_unit in Just(())) {
        prop_assert_eq!(default_init(&toy2d_instance()), vec![5.0, -9.9]);
        prop_assert_eq!(default_init(&lower_bound_instance()), vec![0.0]);
    }
}
