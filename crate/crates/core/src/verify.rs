//! Independent numerical oracles for the losses, gradients, and the
//! analysis facts the optimizers rely on.
//!
//! Every check returns a [`CheckReport`] with the worst case observed and
//! the tolerance baked into `details`, so a report is auditable on its
//! own. Tolerances are module constants with their rationale documented;
//! none are loosened at call sites.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{lower_bound_instance, toy2d_instance, ProblemInstance};
use crate::math::l2_norm;
use crate::optim::resolve_reference;
use crate::policy::{
    dpo_loss, g_dpo, g_dpo_sample, g_sft, g_sft_sample, mix_loss, sft_loss,
};

/// Relative error allowed between analytic and central-difference
/// gradients. With step 1e−5 the truncation error is O(h²) ≈ 1e−10 and
/// the cancellation error is O(ε·|f|/h) ≈ 1e−11·|f|, both far below this.
pub const GRAD_REL_TOL: f64 = 1e-6;

/// Central-difference step for gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference step for Hessian checks (differences of analytic
/// gradients, which are O(1), so a larger step keeps cancellation small).
pub const HESSIAN_FD_STEP: f64 = 1e-4;

/// Smallest admissible Hessian eigenvalue. Both losses are convex, so the
/// exact spectrum is non-negative; −1e−7 absorbs finite-difference noise
/// on eigenvalues that are exactly zero (rank-deficient instances).
pub const HESSIAN_MIN_EIG: f64 = -1e-7;

/// Agreement required between instance-based and closed-form scalar
/// values: both paths are exact f64 compositions of exp/log, so anything
/// beyond accumulated rounding (≈1e−15 relative) indicates a formula
/// error. 1e−10 in mixed absolute/relative terms is conservative.
pub const CLOSED_FORM_TOL: f64 = 1e-10;

/// Slack for the per-sample gradient-norm bounds ‖g_DPO‖ ≤ 2βΦ and
/// ‖g_SFT‖ ≤ 2Φ. The bounds hold with strict margin on the bundled
/// instances; 1e−12 only covers rounding in the norm itself.
pub const NORM_BOUND_SLACK: f64 = 1e-12;

/// Slack for the monotone-sequence comparison bound: the inequality is
/// exact in real arithmetic; 1e−12 absorbs rounding in the running
/// product over ≤ 200 factors.
pub const LEMMA_SLACK: f64 = 1e-12;

/// Monte Carlo acceptance band for the mixture-expectation identity, in
/// standard errors of the sample mean.
pub const MC_SIGMA_BAND: f64 = 3.0;

/// Outcome of one oracle check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    /// Stable snake_case check identifier.
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the check's summary statistic (its meaning
    /// is stated in `details`).
    pub worst_case: f64,
    /// Number of probes evaluated.
    pub samples: u64,
    /// Human-readable statement of what was checked and at what tolerance.
    pub details: String,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: worst {:+.3e} over {} samples — {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst_case,
            self.samples,
            self.details
        )
    }
}

/// Which scalar objective a derivative check differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Dpo,
    Sft,
    /// λ-weighted mix of both.
    Mix(f64),
}

impl LossKind {
    fn eval(&self, theta: &[f64], instance: &ProblemInstance) -> f64 {
        match self {
            LossKind::Dpo => dpo_loss(theta, instance),
            LossKind::Sft => sft_loss(theta, instance),
            LossKind::Mix(lambda) => mix_loss(theta, instance, *lambda),
        }
    }

    fn grad(&self, theta: &[f64], instance: &ProblemInstance) -> Vec<f64> {
        match self {
            LossKind::Dpo => g_dpo(theta, instance),
            LossKind::Sft => g_sft(theta, instance),
            LossKind::Mix(lambda) => {
                let gd = g_dpo(theta, instance);
                let gs = g_sft(theta, instance);
                gd.iter()
                    .zip(&gs)
                    .map(|(&d, &s)| lambda * d + (1.0 - lambda) * s)
                    .collect()
            }
        }
    }

    fn tag(&self) -> String {
        match self {
            LossKind::Dpo => "dpo".into(),
            LossKind::Sft => "sft".into(),
            LossKind::Mix(l) => format!("mix{l}"),
        }
    }
}

/// Central-difference gradient of the selected full-batch loss.
pub fn finite_diff_grad(
    kind: LossKind,
    instance: &ProblemInstance,
    theta: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let inst = resolve_reference(instance)?;
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let plus = kind.eval(&probe, &inst);
        probe[i] = theta[i] - step;
        let minus = kind.eval(&probe, &inst);
        probe[i] = theta[i];
        let d = (plus - minus) / (2.0 * step);
        if !d.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference non-finite at coordinate {i}"
            )));
        }
        grad[i] = d;
    }
    Ok(grad)
}

/// Closed-form scalar-instance values, computed directly from
/// f_DPO(θ) = log(1+e^{θ/2+5}), f_SFT(θ) = log(1+e^{−θ/2}),
/// g_DPO(θ) = ½σ(θ/2+5), g_SFT(θ) = −½σ(−θ/2), with locally-implemented
/// stable primitives so the path is independent of the library's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedForm {
    pub f_dpo: f64,
    pub f_sft: f64,
    pub g_dpo: f64,
    pub g_sft: f64,
}

/// Evaluate the closed forms for the scalar instance at θ.
pub fn closed_form_lowerbound(theta: f64) -> ClosedForm {
    // Independent stable primitives (not the library's).
    fn sig(z: f64) -> f64 {
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    }
    fn log1pexp(z: f64) -> f64 {
        if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        }
    }
    let z = theta / 2.0 + 5.0;
    ClosedForm {
        f_dpo: log1pexp(z),
        f_sft: log1pexp(-theta / 2.0),
        g_dpo: 0.5 * sig(z),
        g_sft: -0.5 * sig(-theta / 2.0),
    }
}

fn random_theta(rng: &mut ChaCha8Rng, dim: usize, half_range: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.random_range(-half_range..half_range))
        .collect()
}

/// Analytic full-batch gradients vs central differences at random
/// parameters, in norm-relative error.
pub fn check_gradients(
    instance: &ProblemInstance,
    label: &str,
    samples: u64,
    seed: u64,
) -> CheckReport {
    let inst = resolve_reference(instance).expect("instance resolvable");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let theta = random_theta(&mut rng, inst.dim(), 6.0);
        for kind in [LossKind::Dpo, LossKind::Sft] {
            let analytic = kind.grad(&theta, &inst);
            let fd = finite_diff_grad(kind, &inst, &theta, FD_STEP).expect("fd finite");
            let diff: Vec<f64> = fd.iter().zip(&analytic).map(|(a, b)| a - b).collect();
            let rel = l2_norm(&diff) / l2_norm(&analytic).max(1e-300);
            worst = worst.max(rel);
        }
    }
    CheckReport {
        name: format!("gradient_fd_{label}"),
        passed: worst <= GRAD_REL_TOL,
        worst_case: worst,
        samples,
        details: format!(
            "‖g_fd − g‖/‖g‖ for both losses at {samples} random θ ∈ [−6,6]^d, \
             step {FD_STEP:e}, tolerance {GRAD_REL_TOL:e}"
        ),
    }
}

/// Instance-based losses/gradients vs the independent closed forms on the
/// scalar instance.
pub fn check_closed_form(samples: u64, seed: u64) -> CheckReport {
    let inst = lower_bound_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut err = |a: f64, b: f64| {
        let e = (a - b).abs() / b.abs().max(1.0);
        worst = worst.max(e);
    };
    for _ in 0..samples {
        let theta = rng.random_range(-40.0..40.0);
        let cf = closed_form_lowerbound(theta);
        err(dpo_loss(&[theta], &inst), cf.f_dpo);
        err(sft_loss(&[theta], &inst), cf.f_sft);
        err(g_dpo(&[theta], &inst)[0], cf.g_dpo);
        err(g_sft(&[theta], &inst)[0], cf.g_sft);
    }
    CheckReport {
        name: "closed_form_lowerbound".into(),
        passed: worst <= CLOSED_FORM_TOL,
        worst_case: worst,
        samples,
        details: format!(
            "losses and gradients vs closed forms at {samples} random θ ∈ [−40,40], \
             tolerance {CLOSED_FORM_TOL:e} (relative above 1)"
        ),
    }
}

/// Per-sample gradient-norm bounds ‖g_DPO‖ ≤ 2βΦ, ‖g_SFT‖ ≤ 2Φ at random
/// parameters, across every dataset row.
pub fn check_gradient_norm_bounds(
    instance: &ProblemInstance,
    label: &str,
    samples: u64,
    seed: u64,
) -> CheckReport {
    let inst = resolve_reference(instance).expect("instance resolvable");
    let phi = inst.feature_bound();
    let dpo_bound = 2.0 * inst.beta * phi;
    let sft_bound = 2.0 * phi;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut probes = 0u64;
    for _ in 0..samples {
        let theta = random_theta(&mut rng, inst.dim(), 10.0);
        for pair in &inst.dpo_data {
            let margin = l2_norm(&g_dpo_sample(&theta, &inst, pair)) - dpo_bound;
            worst = worst.max(margin);
            probes += 1;
        }
        for ex in &inst.sft_data {
            let margin = l2_norm(&g_sft_sample(&theta, &inst, ex)) - sft_bound;
            worst = worst.max(margin);
            probes += 1;
        }
    }
    CheckReport {
        name: format!("gradient_norm_bound_{label}"),
        passed: worst <= NORM_BOUND_SLACK,
        worst_case: worst,
        samples: probes,
        details: format!(
            "max(‖g‖ − bound) with bounds 2βΦ={dpo_bound:.6}, 2Φ={sft_bound:.6} at \
             random θ ∈ [−10,10]^d, slack {NORM_BOUND_SLACK:e}"
        ),
    }
}

/// Monte Carlo check that the Bernoulli(λ) single-objective draw is an
/// unbiased estimator of the mixed objective: E_i[f_Alt(θ; i)] = f_Mix(θ)
/// with f_Alt(θ; i) = f_DPO(θ) if i = 1 else f_SFT(θ).
///
/// For each probe θ the sample mean over `draws` coin flips must lie
/// within [`MC_SIGMA_BAND`] standard errors of f_Mix(θ); degenerate λ
/// (zero variance) must match exactly.
pub fn check_expectation_identity(
    instance: &ProblemInstance,
    label: &str,
    lambda: f64,
    thetas: u64,
    draws: u64,
    seed: u64,
) -> CheckReport {
    let inst = resolve_reference(instance).expect("instance resolvable");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_z = 0.0f64;
    let mut passed = true;
    for _ in 0..thetas {
        let theta = random_theta(&mut rng, inst.dim(), 6.0);
        let f_d = dpo_loss(&theta, &inst);
        let f_s = sft_loss(&theta, &inst);
        let target = lambda * f_d + (1.0 - lambda) * f_s;
        let mut ones = 0u64;
        for _ in 0..draws {
            if rng.random::<f64>() < lambda {
                ones += 1;
            }
        }
        let n = draws as f64;
        let mean = (ones as f64 * f_d + (draws - ones) as f64 * f_s) / n;
        let var = (ones as f64 * (f_d - mean).powi(2)
            + (draws - ones) as f64 * (f_s - mean).powi(2))
            / (n - 1.0);
        let se = (var / n).sqrt();
        let diff = (mean - target).abs();
        if se == 0.0 {
            // λ ∈ {0,1} or identical losses: the identity must be exact.
            if diff > 1e-12 {
                passed = false;
                worst_z = f64::INFINITY;
            }
        } else {
            let z = diff / se;
            worst_z = worst_z.max(z);
            if z > MC_SIGMA_BAND {
                passed = false;
            }
        }
    }
    CheckReport {
        name: format!("expectation_identity_{label}_lambda{lambda}"),
        passed,
        worst_case: worst_z,
        samples: thetas,
        details: format!(
            "|mean f_Alt − f_Mix| over {draws} draws at {thetas} random θ, \
             band {MC_SIGMA_BAND} standard errors (worst case in SE units)"
        ),
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    if n == 1 {
        return vec![a[0][0]];
    }
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let akp = row[p];
                    let akq = row[q];
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Positive semidefiniteness of a loss Hessian at random parameters:
/// H is formed by central differences of the analytic gradient,
/// symmetrized, and its minimum eigenvalue must clear
/// [`HESSIAN_MIN_EIG`]. Both losses are convex (log-sum-exp composed with
/// affine maps), so this is an oracle for the gradient implementations.
pub fn check_hessian_psd(
    kind: LossKind,
    instance: &ProblemInstance,
    label: &str,
    samples: u64,
    seed: u64,
) -> CheckReport {
    let inst = resolve_reference(instance).expect("instance resolvable");
    let dim = inst.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let h = HESSIAN_FD_STEP;
    for _ in 0..samples {
        let theta = random_theta(&mut rng, dim, 6.0);
        let mut hess = vec![vec![0.0; dim]; dim];
        let mut probe = theta.clone();
        for j in 0..dim {
            probe[j] = theta[j] + h;
            let gp = kind.grad(&probe, &inst);
            probe[j] = theta[j] - h;
            let gm = kind.grad(&probe, &inst);
            probe[j] = theta[j];
            for i in 0..dim {
                hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        // Symmetrize before the eigensolve; FD asymmetry is rounding-level.
        for i in 0..dim {
            for j in (i + 1)..dim {
                let s = 0.5 * (hess[i][j] + hess[j][i]);
                hess[i][j] = s;
                hess[j][i] = s;
            }
        }
        let min_eig = jacobi_eigenvalues(hess)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        worst = worst.min(min_eig);
    }
    CheckReport {
        name: format!("hessian_psd_{}_{label}", kind.tag()),
        passed: worst >= HESSIAN_MIN_EIG,
        worst_case: worst,
        samples,
        details: format!(
            "min eigenvalue of the finite-difference Hessian (step {h:e}) at {samples} \
             random θ ∈ [−6,6]^d, floor {HESSIAN_MIN_EIG:e}"
        ),
    }
}

/// Randomized check of the monotone-map comparison bound: for
/// θ_{t+1} = θ_t + α_t/(1+e^{cθ_t}) with c > 0, cα_t/4 ≤ 1, and two
/// starts θ₁ ≥ θ₁', the separation obeys
/// θ_t − θ'_t ≥ (θ₁ − θ₁')·Π_{i<t}(1 − cα_i/4) at every step.
pub fn check_sig_sequence_lemma(trials: u64, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        // c ∈ (0, 4]: 4·(1−u) with u ∈ [0,1) is never zero.
        let c = 4.0 * (1.0 - rng.random::<f64>());
        let horizon: u64 = rng.random_range(2..=200);
        let theta1: f64 = rng.random_range(-5.0..5.0);
        let gap = 5.0 * rng.random::<f64>();
        let mut a = theta1;
        let mut b = theta1 - gap;
        let mut prod = 1.0;
        for _ in 1..horizon {
            // cα/4 ≤ 1 ⟺ α ≤ 4/c.
            let alpha = rng.random::<f64>() * 4.0 / c;
            a += alpha / (1.0 + (c * a).exp());
            b += alpha / (1.0 + (c * b).exp());
            prod *= 1.0 - c * alpha / 4.0;
            let margin = (a - b) - gap * prod;
            worst = worst.min(margin);
        }
    }
    CheckReport {
        name: "sig_sequence_lemma".into(),
        passed: worst >= -LEMMA_SLACK,
        worst_case: worst,
        samples: trials,
        details: format!(
            "min[(θ_t − θ'_t) − gap·Π(1−cα_i/4)] over {trials} random trials \
             (c ∈ (0,4], horizon ≤ 200), slack {LEMMA_SLACK:e}"
        ),
    }
}

/// The full oracle suite at its reference sample sizes.
pub fn run_all_checks(seed: u64) -> Vec<CheckReport> {
    let lb = lower_bound_instance();
    let toy = toy2d_instance();
    let mut reports = vec![
        check_gradients(&lb, "lowerbound", 100, seed),
        check_gradients(&toy, "toy2d", 100, seed.wrapping_add(1)),
        check_closed_form(100, seed.wrapping_add(2)),
        check_gradient_norm_bounds(&lb, "lowerbound", 10_000, seed.wrapping_add(3)),
        check_gradient_norm_bounds(&toy, "toy2d", 10_000, seed.wrapping_add(4)),
        check_hessian_psd(LossKind::Dpo, &lb, "lowerbound", 100, seed.wrapping_add(5)),
        check_hessian_psd(LossKind::Sft, &lb, "lowerbound", 100, seed.wrapping_add(6)),
        check_hessian_psd(LossKind::Dpo, &toy, "toy2d", 100, seed.wrapping_add(7)),
        check_hessian_psd(LossKind::Sft, &toy, "toy2d", 100, seed.wrapping_add(8)),
    ];
    for (i, lambda) in [0.1, 0.5, 0.9].into_iter().enumerate() {
        reports.push(check_expectation_identity(
            &lb,
            "lowerbound",
            lambda,
            10,
            100_000,
            seed.wrapping_add(9 + i as u64),
        ));
    }
    reports.push(check_sig_sequence_lemma(1_000, seed.wrapping_add(12)));
    reports
}
