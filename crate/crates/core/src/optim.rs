//! Projected stochastic gradient runners for the joint objective.
//!
//! All runners share one iteration skeleton: draw data, pick an objective
//! (or blend both), take a projected step θ ← Π(θ − α(g + wd·θ)), and log
//! iterates on a stride. They differ only in how the objective is chosen
//! per step:
//!
//! - [`run_sequential`]: one objective to (near) convergence, then the
//!   other, with an optional early-stop threshold per phase.
//! - [`run_alright`]: a Bernoulli(λ) coin picks the preference objective.
//! - [`run_maxright`]: the objective with the larger weighted optimality
//!   gap on this step's samples is stepped (ties go to the preference
//!   objective).
//! - [`run_maxright_memeff`]: like [`run_maxright`], but the comparison
//!   uses stale gap values refreshed every `max_eval_step` iterations
//!   (plus the chosen side each step), trading choice quality for one
//!   fewer loss evaluation per step. `max_eval_step = 1` reproduces
//!   [`run_maxright`] exactly.
//! - [`run_mix`]: steps along the λ-blend of both sample gradients.
//!
//! # Randomness contract
//!
//! Each run owns a ChaCha8 stream seeded from `RunConfig::seed`. Per
//! iteration, ALRIGHT draws one uniform f64 (the coin) and then one sample
//! index from the chosen dataset; MAXRIGHT, its memory-efficient variant,
//! and MIX draw one preference sample index then one supervised sample
//! index; SEQUENTIAL draws one sample index from the active phase's
//! dataset. Fixed seed + fixed config ⇒ bit-identical trajectories.
//!
//! # Iterate indexing
//!
//! Iterates are 1-based: θ₁ is the initial point and a run with
//! `total_steps = T` performs T−1 updates (a sequential run performs
//! `t_phase − 1` per phase). Records are written for θ₁, after every
//! `log_stride`-th update, and always for the final iterate.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{ConstraintSet, ProblemInstance, ThetaRef, TrainDirective};
use crate::math::l2_norm;
use crate::metrics::OptimaEstimate;
use crate::policy::{
    self, dpo_sample_loss, g_dpo_sample, g_sft_sample, loss_pair, sft_sample_loss, LossPair,
};

/// Step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// α_t = step for all t.
    Constant { step: f64 },
    /// α_t = base / √T for all t, where T is the run's `total_steps`.
    ScaledInvSqrtT { base: f64 },
    /// A distinct constant step per sequential phase; only valid with the
    /// sequential variant.
    PerPhase { first: f64, second: f64 },
}

impl StepSchedule {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let valid = match self {
            StepSchedule::Constant { step } => ok(*step),
            StepSchedule::ScaledInvSqrtT { base } => ok(*base),
            StepSchedule::PerPhase { first, second } => ok(*first) && ok(*second),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "schedule step sizes must be positive and finite, got {self:?}"
            )))
        }
    }

    /// Step size used in the given phase (phase 0 unless sequential).
    pub fn step_size(&self, total_steps: u64, phase: usize) -> f64 {
        match self {
            StepSchedule::Constant { step } => *step,
            StepSchedule::ScaledInvSqrtT { base } => base / (total_steps as f64).sqrt(),
            StepSchedule::PerPhase { first, second } => {
                if phase == 0 {
                    *first
                } else {
                    *second
                }
            }
        }
    }
}

/// Which objective a sequential run optimizes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqOrder {
    DpoFirst,
    SftFirst,
}

/// Algorithm selection plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Two single-objective phases with iterate budgets `t_dpo` and
    /// `t_sft` (their sum must equal `total_steps`). When
    /// `phase_stop_threshold` is set, a phase ends early once its own
    /// full-batch loss drops below the threshold; the check runs at phase
    /// start and then every `log_stride` updates.
    Sequential {
        t_dpo: u64,
        t_sft: u64,
        order: SeqOrder,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phase_stop_threshold: Option<f64>,
    },
    /// Bernoulli(λ) objective choice per step.
    Alright { lambda: f64 },
    /// Larger weighted sample-gap objective per step; requires optimum
    /// estimates for both objectives.
    Maxright { lambda: f64 },
    /// MAXRIGHT with stale gaps refreshed every `max_eval_step` steps.
    MaxrightMemEff { lambda: f64, max_eval_step: u64 },
    /// Deterministic λ-blend of both sample gradients per step.
    Mix { lambda: f64 },
}

impl Variant {
    /// The mixing weight this variant targets: λ for the weighted
    /// variants, the preference share of the step budget for sequential.
    pub fn lambda(&self) -> f64 {
        match self {
            Variant::Sequential { t_dpo, t_sft, .. } => {
                *t_dpo as f64 / (*t_dpo + *t_sft) as f64
            }
            Variant::Alright { lambda }
            | Variant::Maxright { lambda }
            | Variant::MaxrightMemEff { lambda, .. }
            | Variant::Mix { lambda } => *lambda,
        }
    }

    /// Short lowercase tag used in file names and summaries.
    pub fn tag(&self) -> &'static str {
        match self {
            Variant::Sequential { .. } => "sequential",
            Variant::Alright { .. } => "alright",
            Variant::Maxright { .. } => "maxright",
            Variant::MaxrightMemEff { .. } => "maxright_memeff",
            Variant::Mix { .. } => "mix",
        }
    }
}

fn default_stride() -> u64 {
    1
}

/// Everything one optimization run needs besides the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Algorithm and its hyperparameters.
    pub variant: Variant,
    /// Iterate budget T (T−1 updates).
    pub total_steps: u64,
    /// Step-size schedule.
    pub schedule: StepSchedule,
    /// RNG seed for this run's sample/coin stream.
    #[serde(default)]
    pub seed: u64,
    /// Record every `log_stride`-th update (θ₁ and the final iterate are
    /// always recorded).
    #[serde(default = "default_stride")]
    pub log_stride: u64,
    /// Optional L2 weight-decay coefficient applied inside the step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    /// Optional explicit initial iterate. Defaults to the convention of
    /// [`default_init`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
}

impl RunConfig {
    /// Validate the configuration against an instance.
    pub fn validate(&self, instance: &ProblemInstance) -> Result<()> {
        self.schedule.validate()?;
        if self.total_steps < 1 {
            return Err(Error::InvalidConfig("total_steps must be ≥ 1".into()));
        }
        if self.log_stride < 1 {
            return Err(Error::InvalidConfig("log_stride must be ≥ 1".into()));
        }
        if let Some(wd) = self.weight_decay {
            if !(wd.is_finite() && wd >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "weight_decay must be non-negative and finite, got {wd}"
                )));
            }
        }
        if let Some(init) = &self.init {
            if init.len() != instance.dim() {
                return Err(Error::InvalidConfig(format!(
                    "init has length {}, expected {}",
                    init.len(),
                    instance.dim()
                )));
            }
            if init.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(
                    "init contains a non-finite value".into(),
                ));
            }
        }
        let lambda_ok = |l: f64| l.is_finite() && (0.0..=1.0).contains(&l);
        match &self.variant {
            Variant::Sequential {
                t_dpo,
                t_sft,
                phase_stop_threshold,
                ..
            } => {
                if *t_dpo < 1 || *t_sft < 1 {
                    return Err(Error::InvalidConfig(
                        "sequential phase budgets must be ≥ 1".into(),
                    ));
                }
                if t_dpo + t_sft != self.total_steps {
                    return Err(Error::InvalidConfig(format!(
                        "sequential budgets {t_dpo}+{t_sft} must sum to total_steps={}",
                        self.total_steps
                    )));
                }
                if let Some(thr) = phase_stop_threshold {
                    if !(thr.is_finite() && *thr > 0.0) {
                        return Err(Error::InvalidConfig(format!(
                            "phase_stop_threshold must be positive and finite, got {thr}"
                        )));
                    }
                }
            }
            Variant::Alright { lambda } | Variant::Mix { lambda } => {
                if !lambda_ok(*lambda) {
                    return Err(Error::InvalidConfig(format!(
                        "lambda must lie in [0,1], got {lambda}"
                    )));
                }
            }
            Variant::Maxright { lambda } => {
                if !lambda_ok(*lambda) {
                    return Err(Error::InvalidConfig(format!(
                        "lambda must lie in [0,1], got {lambda}"
                    )));
                }
            }
            Variant::MaxrightMemEff {
                lambda,
                max_eval_step,
            } => {
                if !lambda_ok(*lambda) {
                    return Err(Error::InvalidConfig(format!(
                        "lambda must lie in [0,1], got {lambda}"
                    )));
                }
                if *max_eval_step < 1 {
                    return Err(Error::InvalidConfig("max_eval_step must be ≥ 1".into()));
                }
            }
        }
        if matches!(self.schedule, StepSchedule::PerPhase { .. })
            && !matches!(self.variant, Variant::Sequential { .. })
        {
            return Err(Error::InvalidConfig(
                "per-phase schedule is only valid with the sequential variant".into(),
            ));
        }
        Ok(())
    }
}

/// Which objective produced an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Dpo,
    Sft,
    /// Both gradients blended (the mix variant).
    Both,
}

impl StepKind {
    /// Stable numeric code used in trajectory CSV exports
    /// (0 is reserved for the initial iterate, which no update produced).
    pub fn csv_code(&self) -> u8 {
        match self {
            StepKind::Dpo => 1,
            StepKind::Sft => 2,
            StepKind::Both => 3,
        }
    }
}

/// One logged iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    /// 1-based iterate index.
    pub t: u64,
    /// Update that produced this iterate; `None` for the initial iterate.
    pub chosen: Option<StepKind>,
    /// Parameter at this iterate.
    pub theta: Vec<f64>,
    /// Full-batch losses at this iterate.
    pub losses: LossPair,
}

/// Result of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Logged iterates (initial iterate, strided updates, final iterate).
    pub records: Vec<IterRecord>,
    /// Final parameter.
    pub final_theta: Vec<f64>,
    /// Monotonic-clock span of the optimization loop itself, in seconds
    /// (excludes instance loading, reference resolution, and I/O).
    pub wall_time_s: f64,
    /// Number of updates that stepped the preference objective
    /// (mix updates count toward both counters).
    pub steps_dpo: u64,
    /// Number of updates that stepped the supervised objective.
    pub steps_sft: u64,
}

/// Euclidean projection onto a constraint set.
///
/// The result is feasible up to floating-point rounding (≤ 1e−12 in the
/// ball radius; exact for boxes), and projecting a feasible point returns
/// it unchanged.
pub fn project(theta: &[f64], constraint: &ConstraintSet) -> Vec<f64> {
    match constraint {
        ConstraintSet::Unbounded => theta.to_vec(),
        ConstraintSet::Box { lower, upper } => theta
            .iter()
            .zip(lower.iter().zip(upper))
            .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
            .collect(),
        ConstraintSet::Ball { center, radius } => {
            let diff: Vec<f64> = theta.iter().zip(center).map(|(&x, &c)| x - c).collect();
            let norm = l2_norm(&diff);
            if norm <= *radius {
                theta.to_vec()
            } else {
                let scale = radius / norm;
                center
                    .iter()
                    .zip(&diff)
                    .map(|(&c, &d)| c + scale * d)
                    .collect()
            }
        }
    }
}

/// Default initial iterate: a reference-training directive's `init` when
/// the instance derives its reference by training (the experimental
/// protocols start every run on such instances from the same point), else
/// the origin.
pub fn default_init(instance: &ProblemInstance) -> Vec<f64> {
    match &instance.theta_ref {
        ThetaRef::Train(d) => d.init.clone(),
        ThetaRef::Vector(_) => vec![0.0; instance.dim()],
    }
}

/// Full-batch gradient descent on the reference likelihood loss
/// (mean −log π_θ(chosen|input) over the preference dataset), with
/// optional weight decay. Returns the trained parameter; `epochs = 0`
/// returns the initialization unchanged.
pub fn train_reference(
    instance: &ProblemInstance,
    directive: &TrainDirective,
) -> Result<Vec<f64>> {
    if directive.init.len() != instance.dim() {
        return Err(Error::InvalidInstance(format!(
            "reference training init has length {}, expected {}",
            directive.init.len(),
            instance.dim()
        )));
    }
    let n = instance.dpo_data.len() as f64;
    let mut theta = directive.init.clone();
    for epoch in 0..directive.epochs {
        let mut grad = vec![0.0; instance.dim()];
        for pair in &instance.dpo_data {
            let mean = policy::mean_feature(&theta, instance, &pair.input);
            let phi_w = instance
                .features
                .feature(&pair.input, &pair.chosen)
                .expect("validated instance");
            for i in 0..grad.len() {
                grad[i] += (mean[i] - phi_w[i]) / n;
            }
        }
        for i in 0..theta.len() {
            theta[i] -= directive.step * (grad[i] + directive.weight_decay * theta[i]);
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "reference training diverged at epoch {epoch}"
            )));
        }
    }
    Ok(theta)
}

/// Resolve the instance's reference parameter to a concrete vector,
/// running the training directive if necessary. Instances with an explicit
/// reference are returned as-is (cloned).
pub fn resolve_reference(instance: &ProblemInstance) -> Result<ProblemInstance> {
    match &instance.theta_ref {
        ThetaRef::Vector(_) => Ok(instance.clone()),
        ThetaRef::Train(d) => {
            let theta = train_reference(instance, d)?;
            Ok(instance.clone().with_reference(theta))
        }
    }
}

/// Shared run skeleton: iterate storage, projected update, stride logging.
struct Driver<'a> {
    inst: &'a ProblemInstance,
    wd: f64,
    stride: u64,
    theta: Vec<f64>,
    records: Vec<IterRecord>,
    /// Current 1-based iterate index; updates performed = t − 1.
    t: u64,
    steps_dpo: u64,
    steps_sft: u64,
    last_kind: Option<StepKind>,
    algo: &'static str,
}

impl<'a> Driver<'a> {
    fn new(inst: &'a ProblemInstance, init: Vec<f64>, config: &RunConfig, algo: &'static str) -> Self {
        let theta = project(&init, &inst.constraint);
        let mut driver = Driver {
            inst,
            wd: config.weight_decay.unwrap_or(0.0),
            stride: config.log_stride,
            theta,
            records: Vec::new(),
            t: 1,
            steps_dpo: 0,
            steps_sft: 0,
            last_kind: None,
            algo,
        };
        driver.record(None);
        driver
    }

    fn record(&mut self, chosen: Option<StepKind>) {
        self.records.push(IterRecord {
            t: self.t,
            chosen,
            theta: self.theta.clone(),
            losses: loss_pair(&self.theta, self.inst),
        });
    }

    /// Projected step θ ← Π(θ − α(g + wd·θ)); logs on the stride cadence.
    fn update(&mut self, kind: StepKind, grad: &[f64], alpha: f64) -> Result<()> {
        let stepped: Vec<f64> = self
            .theta
            .iter()
            .zip(grad)
            .map(|(&x, &g)| x - alpha * (g + self.wd * x))
            .collect();
        self.theta = project(&stepped, &self.inst.constraint);
        self.t += 1;
        if self.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: iterate became non-finite at update {}",
                self.algo,
                self.t - 1
            )));
        }
        match kind {
            StepKind::Dpo => self.steps_dpo += 1,
            StepKind::Sft => self.steps_sft += 1,
            StepKind::Both => {
                self.steps_dpo += 1;
                self.steps_sft += 1;
            }
        }
        self.last_kind = Some(kind);
        if (self.t - 1) % self.stride == 0 {
            self.record(Some(kind));
        }
        Ok(())
    }

    fn finish(mut self, wall_time_s: f64) -> Trajectory {
        if self.records.last().map(|r| r.t) != Some(self.t) {
            let kind = self.last_kind;
            self.record(kind);
        }
        Trajectory {
            records: self.records,
            final_theta: self.theta,
            wall_time_s,
            steps_dpo: self.steps_dpo,
            steps_sft: self.steps_sft,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, len: usize) -> usize {
    rng.random_range(0..len)
}

/// Resolve the reference if needed, preserving the caller's instance.
fn resolved<'a>(
    instance: &'a ProblemInstance,
    storage: &'a mut Option<ProblemInstance>,
) -> Result<&'a ProblemInstance> {
    if instance.reference().is_some() {
        Ok(instance)
    } else {
        *storage = Some(resolve_reference(instance)?);
        Ok(storage.as_ref().expect("just set"))
    }
}

/// Dispatch on the configured variant. MAXRIGHT variants require optimum
/// estimates; the others ignore the argument.
pub fn run(
    instance: &ProblemInstance,
    config: &RunConfig,
    optima: Option<&OptimaEstimate>,
) -> Result<Trajectory> {
    match &config.variant {
        Variant::Sequential { .. } => run_sequential(instance, config),
        Variant::Alright { .. } => run_alright(instance, config),
        Variant::Mix { .. } => run_mix(instance, config),
        Variant::Maxright { .. } | Variant::MaxrightMemEff { .. } => {
            let optima = optima.ok_or_else(|| {
                Error::MissingOptimum(
                    "MAXRIGHT variants need per-objective optimum estimates".into(),
                )
            })?;
            match &config.variant {
                Variant::Maxright { .. } => run_maxright(instance, config, optima),
                _ => run_maxright_memeff(instance, config, optima),
            }
        }
    }
}

/// Two-phase sequential optimization (one objective, then the other).
pub fn run_sequential(instance: &ProblemInstance, config: &RunConfig) -> Result<Trajectory> {
    config.validate(instance)?;
    let Variant::Sequential {
        t_dpo,
        t_sft,
        order,
        phase_stop_threshold,
    } = config.variant
    else {
        return Err(Error::InvalidConfig(
            "run_sequential requires the sequential variant".into(),
        ));
    };
    let init = config.init.clone().unwrap_or_else(|| default_init(instance));
    let mut storage = None;
    let inst = resolved(instance, &mut storage)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut driver = Driver::new(inst, init, config, "sequential");

    let phases = match order {
        SeqOrder::DpoFirst => [(StepKind::Dpo, t_dpo), (StepKind::Sft, t_sft)],
        SeqOrder::SftFirst => [(StepKind::Sft, t_sft), (StepKind::Dpo, t_dpo)],
    };
    let start = Instant::now();
    for (phase_idx, (kind, budget)) in phases.into_iter().enumerate() {
        let alpha = config.schedule.step_size(config.total_steps, phase_idx);
        for u in 1..budget {
            // Early stop on the phase's own full-batch loss, checked at
            // phase start and then on the logging cadence.
            if let Some(thr) = phase_stop_threshold {
                if (u - 1) % config.log_stride == 0 {
                    let f = match kind {
                        StepKind::Dpo => policy::dpo_loss(&driver.theta, inst),
                        _ => policy::sft_loss(&driver.theta, inst),
                    };
                    if f < thr {
                        break;
                    }
                }
            }
            let grad = match kind {
                StepKind::Dpo => {
                    let pair = &inst.dpo_data[draw(&mut rng, inst.dpo_data.len())];
                    g_dpo_sample(&driver.theta, inst, pair)
                }
                _ => {
                    let ex = &inst.sft_data[draw(&mut rng, inst.sft_data.len())];
                    g_sft_sample(&driver.theta, inst, ex)
                }
            };
            driver.update(kind, &grad, alpha)?;
        }
    }
    Ok(driver.finish(start.elapsed().as_secs_f64()))
}

/// Bernoulli(λ) alternation between the two sample gradients.
pub fn run_alright(instance: &ProblemInstance, config: &RunConfig) -> Result<Trajectory> {
    config.validate(instance)?;
    let Variant::Alright { lambda } = config.variant else {
        return Err(Error::InvalidConfig(
            "run_alright requires the alright variant".into(),
        ));
    };
    let init = config.init.clone().unwrap_or_else(|| default_init(instance));
    let mut storage = None;
    let inst = resolved(instance, &mut storage)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut driver = Driver::new(inst, init, config, "alright");
    let alpha = config.schedule.step_size(config.total_steps, 0);

    let start = Instant::now();
    for _u in 1..config.total_steps {
        let use_dpo = rng.random::<f64>() < lambda;
        if use_dpo {
            let pair = &inst.dpo_data[draw(&mut rng, inst.dpo_data.len())];
            let grad = g_dpo_sample(&driver.theta, inst, pair);
            driver.update(StepKind::Dpo, &grad, alpha)?;
        } else {
            let ex = &inst.sft_data[draw(&mut rng, inst.sft_data.len())];
            let grad = g_sft_sample(&driver.theta, inst, ex);
            driver.update(StepKind::Sft, &grad, alpha)?;
        }
    }
    Ok(driver.finish(start.elapsed().as_secs_f64()))
}

/// Per-step argmax of the weighted sample optimality gaps
/// λ(ℓ_DPO − f*_DPO) vs (1−λ)(ℓ_SFT − f*_SFT); ties step the preference
/// objective.
pub fn run_maxright(
    instance: &ProblemInstance,
    config: &RunConfig,
    optima: &OptimaEstimate,
) -> Result<Trajectory> {
    config.validate(instance)?;
    let Variant::Maxright { lambda } = config.variant else {
        return Err(Error::InvalidConfig(
            "run_maxright requires the maxright variant".into(),
        ));
    };
    let init = config.init.clone().unwrap_or_else(|| default_init(instance));
    let mut storage = None;
    let inst = resolved(instance, &mut storage)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut driver = Driver::new(inst, init, config, "maxright");
    let alpha = config.schedule.step_size(config.total_steps, 0);

    let start = Instant::now();
    for _u in 1..config.total_steps {
        let pair = &inst.dpo_data[draw(&mut rng, inst.dpo_data.len())];
        let ex = &inst.sft_data[draw(&mut rng, inst.sft_data.len())];
        let gap_dpo = lambda * (dpo_sample_loss(&driver.theta, inst, pair) - optima.f_star_dpo);
        let gap_sft =
            (1.0 - lambda) * (sft_sample_loss(&driver.theta, inst, ex) - optima.f_star_sft);
        if gap_dpo >= gap_sft {
            let grad = g_dpo_sample(&driver.theta, inst, pair);
            driver.update(StepKind::Dpo, &grad, alpha)?;
        } else {
            let grad = g_sft_sample(&driver.theta, inst, ex);
            driver.update(StepKind::Sft, &grad, alpha)?;
        }
    }
    Ok(driver.finish(start.elapsed().as_secs_f64()))
}

/// MAXRIGHT on stale gap values: both gaps are recomputed at the first
/// update and every `max_eval_step`-th update; the argmax runs on the
/// stale values; the chosen side's gap is then refreshed at the current
/// iterate (with this step's sample) before the update. With
/// `max_eval_step = 1` every comparison uses fresh values and the
/// trajectory is bit-identical to [`run_maxright`] under the same seed.
pub fn run_maxright_memeff(
    instance: &ProblemInstance,
    config: &RunConfig,
    optima: &OptimaEstimate,
) -> Result<Trajectory> {
    config.validate(instance)?;
    let Variant::MaxrightMemEff {
        lambda,
        max_eval_step,
    } = config.variant
    else {
        return Err(Error::InvalidConfig(
            "run_maxright_memeff requires the maxright_memeff variant".into(),
        ));
    };
    let init = config.init.clone().unwrap_or_else(|| default_init(instance));
    let mut storage = None;
    let inst = resolved(instance, &mut storage)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut driver = Driver::new(inst, init, config, "maxright_memeff");
    let alpha = config.schedule.step_size(config.total_steps, 0);

    let mut stale_dpo = 0.0;
    let mut stale_sft = 0.0;
    let start = Instant::now();
    for u in 1..config.total_steps {
        let pair = &inst.dpo_data[draw(&mut rng, inst.dpo_data.len())];
        let ex = &inst.sft_data[draw(&mut rng, inst.sft_data.len())];
        if u == 1 || u % max_eval_step == 0 {
            stale_dpo =
                lambda * (dpo_sample_loss(&driver.theta, inst, pair) - optima.f_star_dpo);
            stale_sft = (1.0 - lambda)
                * (sft_sample_loss(&driver.theta, inst, ex) - optima.f_star_sft);
        }
        if stale_dpo >= stale_sft {
            stale_dpo =
                lambda * (dpo_sample_loss(&driver.theta, inst, pair) - optima.f_star_dpo);
            let grad = g_dpo_sample(&driver.theta, inst, pair);
            driver.update(StepKind::Dpo, &grad, alpha)?;
        } else {
            stale_sft = (1.0 - lambda)
                * (sft_sample_loss(&driver.theta, inst, ex) - optima.f_star_sft);
            let grad = g_sft_sample(&driver.theta, inst, ex);
            driver.update(StepKind::Sft, &grad, alpha)?;
        }
    }
    Ok(driver.finish(start.elapsed().as_secs_f64()))
}

/// Deterministic λ-blend of the two sample gradients per step.
pub fn run_mix(instance: &ProblemInstance, config: &RunConfig) -> Result<Trajectory> {
    config.validate(instance)?;
    let Variant::Mix { lambda } = config.variant else {
        return Err(Error::InvalidConfig(
            "run_mix requires the mix variant".into(),
        ));
    };
    let init = config.init.clone().unwrap_or_else(|| default_init(instance));
    let mut storage = None;
    let inst = resolved(instance, &mut storage)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut driver = Driver::new(inst, init, config, "mix");
    let alpha = config.schedule.step_size(config.total_steps, 0);

    let start = Instant::now();
    for _u in 1..config.total_steps {
        let pair = &inst.dpo_data[draw(&mut rng, inst.dpo_data.len())];
        let ex = &inst.sft_data[draw(&mut rng, inst.sft_data.len())];
        let gd = g_dpo_sample(&driver.theta, inst, pair);
        let gs = g_sft_sample(&driver.theta, inst, ex);
        let grad: Vec<f64> = gd
            .iter()
            .zip(&gs)
            .map(|(&d, &s)| lambda * d + (1.0 - lambda) * s)
            .collect();
        driver.update(StepKind::Both, &grad, alpha)?;
    }
    Ok(driver.finish(start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{lower_bound_instance, toy2d_instance};
    use crate::policy::dpo_loss;

    fn basic_config(variant: Variant, total_steps: u64) -> RunConfig {
        RunConfig {
            variant,
            total_steps,
            schedule: StepSchedule::Constant { step: 0.1 },
            seed: 0,
            log_stride: 1,
            weight_decay: None,
            init: None,
        }
    }

    #[test]
    fn default_init_follows_the_instance_convention() {
        assert_eq!(default_init(&lower_bound_instance()), vec![0.0]);
        assert_eq!(default_init(&toy2d_instance()), vec![5.0, -9.9]);
    }

    #[test]
    fn projection_box_and_ball() {
        let box_c = ConstraintSet::Box {
            lower: vec![-1.0, 0.0],
            upper: vec![1.0, 2.0],
        };
        assert_eq!(project(&[5.0, -3.0], &box_c), vec![1.0, 0.0]);
        assert_eq!(project(&[0.5, 1.5], &box_c), vec![0.5, 1.5]);

        let ball = ConstraintSet::Ball {
            center: vec![1.0, 1.0],
            radius: 2.0,
        };
        // Interior point unchanged.
        assert_eq!(project(&[2.0, 1.0], &ball), vec![2.0, 1.0]);
        // Exterior point lands on the boundary along the ray to the center.
        let p = project(&[1.0, 10.0], &ball);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((p[1] - 3.0).abs() < 1e-12);
        let dist = ((p[0] - 1.0f64).powi(2) + (p[1] - 1.0f64).powi(2)).sqrt();
        assert!((dist - 2.0).abs() <= 1e-12, "projection feasible: {dist}");
    }

    #[test]
    fn train_reference_zero_epochs_returns_init() {
        let inst = toy2d_instance();
        let directive = TrainDirective {
            init: vec![5.0, -9.9],
            epochs: 0,
            step: 0.01,
            weight_decay: 0.001,
        };
        assert_eq!(train_reference(&inst, &directive).unwrap(), vec![5.0, -9.9]);
    }

    /// The bundled directive lands on the independently-computed reference
    /// (full-batch descent from [5, −9.9], 1000 steps at 0.01, decay 1e−3).
    #[test]
    fn toy2d_reference_training_matches_oracle() {
        let inst = toy2d_instance();
        let resolved = resolve_reference(&inst).unwrap();
        let theta_ref = resolved.reference().expect("resolved");
        assert!((theta_ref[0] - 8.052875).abs() < 1e-5, "got {theta_ref:?}");
        assert!((theta_ref[1] - (-6.698867)).abs() < 1e-5, "got {theta_ref:?}");
        let f_ref = policy::reference_loss(theta_ref, &inst);
        assert!((f_ref - 0.4108751399045341).abs() < 1e-9, "got {f_ref}");
        // Training improved the reference likelihood over its start.
        let f_init = policy::reference_loss(&[5.0, -9.9], &inst);
        assert!(f_ref < f_init, "{f_ref} ≥ {f_init}");
    }

    /// Deterministic sequential run on the scalar instance: the preference
    /// phase drives θ down, the supervised phase drives it back up past 0,
    /// reproducing the forgetting trajectory. The expected value comes from
    /// iterating θ ← θ − 0.1·½σ(θ/2+5) 499 times from 0, then
    /// θ ← θ + 0.1·½σ(−θ/2) 499 times, in independent scalar arithmetic.
    #[test]
    fn sequential_lower_bound_matches_oracle() {
        let inst = lower_bound_instance();
        let mut config = basic_config(
            Variant::Sequential {
                t_dpo: 500,
                t_sft: 500,
                order: SeqOrder::DpoFirst,
                phase_stop_threshold: None,
            },
            1000,
        );
        config.log_stride = 1000;
        let traj = run_sequential(&inst, &config).unwrap();
        assert_eq!(traj.steps_dpo, 499);
        assert_eq!(traj.steps_sft, 499);
        assert!(
            (traj.final_theta[0] - 2.912786216143701).abs() < 1e-9,
            "got {}",
            traj.final_theta[0]
        );
    }

    #[test]
    fn sequential_phase_stop_skips_satisfied_phases() {
        let inst = lower_bound_instance();
        // Threshold above both initial losses: both phases stop at once.
        let config = basic_config(
            Variant::Sequential {
                t_dpo: 100,
                t_sft: 100,
                order: SeqOrder::DpoFirst,
                phase_stop_threshold: Some(10.0),
            },
            200,
        );
        let traj = run_sequential(&inst, &config).unwrap();
        assert_eq!(traj.steps_dpo + traj.steps_sft, 0);
        assert_eq!(traj.final_theta, vec![0.0]);
        assert_eq!(traj.records.len(), 1, "only the initial iterate logged");
    }

    #[test]
    fn sequential_phase_stop_triggers_mid_phase() {
        let inst = lower_bound_instance();
        let config = basic_config(
            Variant::Sequential {
                t_dpo: 10_000,
                t_sft: 2,
                order: SeqOrder::DpoFirst,
                phase_stop_threshold: Some(0.7),
            },
            10_002,
        );
        let traj = run_sequential(&inst, &config).unwrap();
        assert!(traj.steps_dpo > 0, "phase must run before the loss falls");
        assert!(
            traj.steps_dpo < 9_999,
            "phase must stop early, took {} steps",
            traj.steps_dpo
        );
        // The stop condition was the phase's own full-batch loss.
        let theta_after_dpo = traj
            .records
            .iter()
            .filter(|r| r.chosen == Some(StepKind::Dpo))
            .last()
            .map(|r| r.theta.clone())
            .expect("dpo updates logged");
        assert!(dpo_loss(&theta_after_dpo, &inst) < 0.7);
    }

    #[test]
    fn alright_endpoint_lambdas_are_pure_descent() {
        let inst = lower_bound_instance();
        let traj = run_alright(&inst, &basic_config(Variant::Alright { lambda: 1.0 }, 200)).unwrap();
        assert_eq!(traj.steps_dpo, 199);
        assert_eq!(traj.steps_sft, 0);
        // Manual pure-preference descent reproduces the iterates exactly.
        let mut theta = vec![0.0];
        for _ in 0..199 {
            let g = crate::policy::g_dpo(&theta, &inst);
            theta[0] -= 0.1 * g[0];
        }
        assert_eq!(traj.final_theta, theta);

        let traj0 =
            run_alright(&inst, &basic_config(Variant::Alright { lambda: 0.0 }, 200)).unwrap();
        assert_eq!(traj0.steps_dpo, 0);
        assert_eq!(traj0.steps_sft, 199);
    }

    #[test]
    fn mix_at_lambda_zero_matches_alright_at_lambda_zero() {
        // Singleton datasets force identical samples, so the trajectories
        // agree exactly despite different RNG stream layouts.
        let inst = lower_bound_instance();
        let mix = run_mix(&inst, &basic_config(Variant::Mix { lambda: 0.0 }, 300)).unwrap();
        let alb =
            run_alright(&inst, &basic_config(Variant::Alright { lambda: 0.0 }, 300)).unwrap();
        assert_eq!(mix.final_theta, alb.final_theta);
    }

    #[test]
    fn maxright_requires_optima() {
        let inst = lower_bound_instance();
        let config = basic_config(Variant::Maxright { lambda: 0.5 }, 10);
        let err = run(&inst, &config, None).expect_err("must demand optima");
        assert!(matches!(err, Error::MissingOptimum(_)));
    }

    #[test]
    fn memeff_every_step_refresh_reproduces_maxright() {
        let inst = lower_bound_instance();
        let optima = OptimaEstimate::known(&inst).expect("builtin optima");
        let mr = run_maxright(
            &inst,
            &basic_config(Variant::Maxright { lambda: 0.5 }, 500),
            &optima,
        )
        .unwrap();
        let me = run_maxright_memeff(
            &inst,
            &basic_config(
                Variant::MaxrightMemEff {
                    lambda: 0.5,
                    max_eval_step: 1,
                },
                500,
            ),
            &optima,
        )
        .unwrap();
        assert_eq!(mr.records, me.records, "k=1 must be bit-identical");
        assert_eq!(mr.final_theta, me.final_theta);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let inst = lower_bound_instance();
        let config = basic_config(Variant::Alright { lambda: 0.5 }, 400);
        let a = run_alright(&inst, &config).unwrap();
        let b = run_alright(&inst, &config).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_theta, b.final_theta);
        assert_eq!((a.steps_dpo, a.steps_sft), (b.steps_dpo, b.steps_sft));
    }

    #[test]
    fn different_seeds_differ() {
        let inst = lower_bound_instance();
        let mut config = basic_config(Variant::Alright { lambda: 0.5 }, 400);
        let a = run_alright(&inst, &config).unwrap();
        config.seed = 1;
        let b = run_alright(&inst, &config).unwrap();
        assert_ne!(
            (a.steps_dpo, a.steps_sft),
            (b.steps_dpo, b.steps_sft),
            "coin streams should differ across seeds"
        );
    }

    #[test]
    fn stride_logging_includes_first_and_final_iterates() {
        let inst = lower_bound_instance();
        let mut config = basic_config(Variant::Alright { lambda: 0.5 }, 10);
        config.log_stride = 4;
        let traj = run_alright(&inst, &config).unwrap();
        let ts: Vec<u64> = traj.records.iter().map(|r| r.t).collect();
        // Updates 4 and 8 hit the stride (iterates 5, 9); final iterate 10
        // is appended.
        assert_eq!(ts, vec![1, 5, 9, 10]);
        assert!(traj.records[0].chosen.is_none());

        config.log_stride = 3;
        let traj = run_alright(&inst, &config).unwrap();
        let ts: Vec<u64> = traj.records.iter().map(|r| r.t).collect();
        // Update 9 is both on-stride and final: no duplicate row.
        assert_eq!(ts, vec![1, 4, 7, 10]);
    }

    #[test]
    fn step_counters_account_for_every_update() {
        let inst = lower_bound_instance();
        let traj =
            run_alright(&inst, &basic_config(Variant::Alright { lambda: 0.3 }, 1000)).unwrap();
        assert_eq!(traj.steps_dpo + traj.steps_sft, 999);
        // λ = 0.3 should land near a 30/70 split.
        assert!(traj.steps_dpo > 200 && traj.steps_dpo < 400, "{}", traj.steps_dpo);
    }

    #[test]
    fn divergence_is_reported_not_propagated_as_nan() {
        let inst = lower_bound_instance();
        let mut config = basic_config(Variant::Alright { lambda: 1.0 }, 10);
        config.schedule = StepSchedule::Constant { step: 1e308 };
        config.weight_decay = Some(1e308);
        let err = run_alright(&inst, &config).expect_err("overflow must be caught");
        assert!(matches!(err, Error::NonFinite(_)), "got {err:?}");
    }

    #[test]
    fn weight_decay_shrinks_toward_origin() {
        let inst = lower_bound_instance();
        // Pure supervised descent pushes θ up; heavy decay holds it back.
        let mut free = basic_config(Variant::Alright { lambda: 0.0 }, 2000);
        let mut decayed = free.clone();
        decayed.weight_decay = Some(0.1);
        free.log_stride = 2000;
        decayed.log_stride = 2000;
        let a = run_alright(&inst, &free).unwrap();
        let b = run_alright(&inst, &decayed).unwrap();
        assert!(b.final_theta[0] < a.final_theta[0]);
    }

    #[test]
    fn ball_constraint_keeps_iterates_feasible() {
        let mut inst = lower_bound_instance();
        inst.constraint = ConstraintSet::Ball {
            center: vec![0.0],
            radius: 2.0,
        };
        let traj =
            run_alright(&inst, &basic_config(Variant::Alright { lambda: 0.0 }, 500)).unwrap();
        for rec in &traj.records {
            assert!(
                rec.theta[0].abs() <= 2.0 + 1e-12,
                "iterate {} infeasible: {}",
                rec.t,
                rec.theta[0]
            );
        }
        // The unconstrained optimum is far outside; the run should pin to
        // the boundary.
        assert!((traj.final_theta[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn config_validation_rejects_malformed_runs() {
        let inst = lower_bound_instance();
        let mut config = basic_config(Variant::Alright { lambda: 1.5 }, 10);
        assert!(config.validate(&inst).is_err(), "lambda out of range");

        config = basic_config(
            Variant::Sequential {
                t_dpo: 5,
                t_sft: 5,
                order: SeqOrder::DpoFirst,
                phase_stop_threshold: None,
            },
            11,
        );
        assert!(config.validate(&inst).is_err(), "split must sum to total");

        config = basic_config(Variant::Alright { lambda: 0.5 }, 10);
        config.schedule = StepSchedule::PerPhase {
            first: 0.1,
            second: 0.1,
        };
        assert!(config.validate(&inst).is_err(), "per-phase needs sequential");

        config = basic_config(Variant::Alright { lambda: 0.5 }, 10);
        config.log_stride = 0;
        assert!(config.validate(&inst).is_err(), "stride must be ≥ 1");

        config = basic_config(Variant::Alright { lambda: 0.5 }, 10);
        config.init = Some(vec![0.0, 0.0]);
        assert!(config.validate(&inst).is_err(), "init dim mismatch");

        config = basic_config(
            Variant::MaxrightMemEff {
                lambda: 0.5,
                max_eval_step: 0,
            },
            10,
        );
        assert!(config.validate(&inst).is_err(), "k must be ≥ 1");
    }

    #[test]
    fn schedule_step_sizes() {
        let c = StepSchedule::Constant { step: 0.25 };
        assert_eq!(c.step_size(100, 0), 0.25);
        let s = StepSchedule::ScaledInvSqrtT { base: 1.0 };
        assert!((s.step_size(10_000, 0) - 0.01).abs() < 1e-15);
        let p = StepSchedule::PerPhase {
            first: 0.1,
            second: 0.2,
        };
        assert_eq!(p.step_size(100, 0), 0.1);
        assert_eq!(p.step_size(100, 1), 0.2);
    }

    #[test]
    fn run_config_json_round_trip() {
        let config = RunConfig {
            variant: Variant::Sequential {
                t_dpo: 10_000,
                t_sft: 10_000,
                order: SeqOrder::DpoFirst,
                phase_stop_threshold: Some(0.05),
            },
            total_steps: 20_000,
            schedule: StepSchedule::PerPhase {
                first: 0.01,
                second: 0.01,
            },
            seed: 7,
            log_stride: 100,
            weight_decay: Some(0.001),
            init: Some(vec![5.0, -9.9]),
        };
        let text = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
        // Omitted optional fields take their defaults.
        let minimal: RunConfig = serde_json::from_str(
            r#"{"variant":{"alright":{"lambda":0.5}},"total_steps":100,
                "schedule":{"constant":{"step":0.1}}}"#,
        )
        .unwrap();
        assert_eq!(minimal.seed, 0);
        assert_eq!(minimal.log_stride, 1);
        assert_eq!(minimal.weight_decay, None);
        assert_eq!(minimal.init, None);
    }
}
