//! Experiment configuration: instance selection, the f*-source policy
//! for gap reporting, λ grids, and seed lists.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use duopt_core::instance::{self, ProblemInstance};
use duopt_core::metrics::{approx_optima, scalar_bruteforce_min, OptimaEstimate, Provenance};
use duopt_core::optim::RunConfig;

use crate::error::{classify, CliResult, Failure};

/// Default golden-section bracket for scalar mixed optima; generously
/// wider than any minimizer the bundled instances produce.
pub const DEFAULT_BRACKET: [f64; 2] = [-60.0, 60.0];

/// Default golden-section argument tolerance.
pub const DEFAULT_BRACKET_TOL: f64 = 1e-10;

/// One experiment: which instance, how to run it, where f* values come
/// from, and (for sweeps) the λ grid and seed list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in instance name (`lowerbound` or `toy2d`) or a path to an
    /// instance JSON file.
    pub instance: String,
    pub run: RunConfig,
    /// Source of f* values for gap reporting. Defaults to the instance's
    /// stored optima when present, else independent descent at the run's
    /// own budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optima: Option<OptimaSpec>,
    /// Sweep grid; required by `sweep`, ignored by `run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    /// Base seeds for sweeps; empty means "use run.seed".
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Where f*_DPO, f*_SFT, and f*_Mix,λ come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimaSpec {
    /// The instance's stored per-objective optima.
    Builtin,
    /// Golden-section search (1-D instances only).
    Bruteforce { bracket: [f64; 2], tol: f64 },
    /// Independent single-objective descent runs with this budget.
    Independent { budget: u64 },
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::validation)?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Failure::validation)?;
        Ok(config)
    }

    /// Seeds to sweep over; falls back to the run's own seed.
    pub fn effective_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.run.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Materialize the referenced instance (built-in or file).
    pub fn load_instance(&self) -> CliResult<ProblemInstance> {
        match self.instance.as_str() {
            "lowerbound" => Ok(instance::lower_bound_instance()),
            "toy2d" => Ok(instance::toy2d_instance()),
            path => instance::load_instance(Path::new(path)).map_err(|e| {
                Failure::validation(anyhow::Error::from(e).context(format!(
                    "instance {path:?} is not a built-in name and failed to load as a file"
                )))
            }),
        }
    }
}

/// Resolve the f* estimate for gap reporting, with an f*_Mix entry per
/// requested λ.
///
/// Mixed entries on 1-D instances always come from golden-section search
/// (strictly better than any run-based estimate). Elsewhere a λ's entry
/// is the independent Mix-run estimate when one exists and the weighted
/// floor λ·f*_DPO + (1−λ)·f*_SFT otherwise; when both exist the smaller
/// is kept (conservative for gap non-negativity). Estimates falling below
/// the floor are reported on stderr, never asserted.
///
/// Expects the *unresolved* instance so that independent runs inherit the
/// instance's protocol initialization.
pub fn resolve_optima(
    spec: Option<&OptimaSpec>,
    instance: &ProblemInstance,
    run: &RunConfig,
    lambdas: &[f64],
) -> CliResult<OptimaEstimate> {
    let default_spec;
    let spec = match spec {
        Some(s) => s,
        None => {
            default_spec = if instance.known_optima.is_some() {
                OptimaSpec::Builtin
            } else {
                OptimaSpec::Independent {
                    budget: run.total_steps,
                }
            };
            &default_spec
        }
    };
    let mut estimate = match spec {
        OptimaSpec::Builtin => OptimaEstimate::known(instance).map_err(classify)?,
        OptimaSpec::Bruteforce { bracket, tol } => {
            let (_, f_dpo) = scalar_bruteforce_min(instance, 1.0, *bracket, *tol)
                .map_err(classify)?;
            let (_, f_sft) = scalar_bruteforce_min(instance, 0.0, *bracket, *tol)
                .map_err(classify)?;
            OptimaEstimate::new(
                f_dpo,
                f_sft,
                Provenance::ScalarBruteForce {
                    bracket: *bracket,
                    tolerance: *tol,
                },
            )
        }
        OptimaSpec::Independent { budget } => approx_optima(
            instance,
            *budget,
            run.schedule,
            run.seed,
            lambdas,
            run.weight_decay,
        )
        .map_err(classify)?,
    };
    if instance.dim() == 1 {
        let (bracket, tol) = match spec {
            OptimaSpec::Bruteforce { bracket, tol } => (*bracket, *tol),
            _ => (DEFAULT_BRACKET, DEFAULT_BRACKET_TOL),
        };
        for &lambda in lambdas {
            let (_, f_star) =
                scalar_bruteforce_min(instance, lambda, bracket, tol).map_err(classify)?;
            estimate.set_mix(lambda, f_star);
        }
    } else {
        for (lambda, value, floor) in estimate.floor_violations() {
            eprintln!(
                "warning: f*_Mix({lambda}) estimate {value} is below the weighted floor \
                 {floor}; keeping the smaller value for gap reporting"
            );
        }
        for &lambda in lambdas {
            let floor =
                lambda * estimate.f_star_dpo + (1.0 - lambda) * estimate.f_star_sft;
            let value = match estimate.f_star_mix(lambda) {
                Some(run_value) => run_value.min(floor),
                None => floor,
            };
            estimate.set_mix(lambda, value);
        }
    }
    Ok(estimate)
}
