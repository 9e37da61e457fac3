//! Problem instances: feature tables, preference/supervised datasets,
//! reference-policy specification, and feasible sets.
//!
//! An instance fixes everything the losses need: a finite input/output
//! vocabulary with a feature vector per (input, output) pair, a preference
//! dataset (chosen vs rejected output per input), a supervised dataset
//! (target output per input), the preference temperature β, the reference
//! parameter (given directly or via a training directive), an optional
//! constraint set, and optional analytically-known per-objective optima.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::l2_norm;

/// One row of the feature map: the vector attached to an (input, output)
/// pair. Rows are kept in file order, which fixes the output ordering used
/// by the softmax policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    /// Input (prompt) identifier.
    pub input: String,
    /// Output (completion) identifier.
    pub output: String,
    /// Feature vector φ(input, output); length must equal the table dim.
    pub vector: Vec<f64>,
}

/// A preference datum: for `input`, `chosen` is preferred over `rejected`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub input: String,
    pub chosen: String,
    pub rejected: String,
}

/// A supervised datum: for `input`, the demonstrated output is `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub input: String,
    pub target: String,
}

/// Gradient-descent directive for deriving the reference parameter by
/// maximizing reference-set likelihood (the preference dataset's chosen
/// outputs) from a fixed initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDirective {
    /// Starting parameter; length must equal the feature dim.
    pub init: Vec<f64>,
    /// Number of full-batch gradient steps. Zero returns `init` unchanged.
    pub epochs: u64,
    /// Step size.
    pub step: f64,
    /// L2 weight-decay coefficient (0 disables decay).
    pub weight_decay: f64,
}

/// Reference parameter: either given as a vector or derived by training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRef {
    /// Explicit reference parameter.
    Vector(Vec<f64>),
    /// Derive the reference by gradient descent (see
    /// [`crate::optim::resolve_reference`]).
    Train(TrainDirective),
}

/// Feasible set for the policy parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSet {
    /// No constraint; projection is the identity.
    Unbounded,
    /// Axis-aligned box; projection clamps per coordinate.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Euclidean ball; projection rescales toward the center.
    Ball { center: Vec<f64>, radius: f64 },
}

/// Analytically-known per-objective optimal values, with a note recording
/// where they come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownOptima {
    pub f_star_dpo: f64,
    pub f_star_sft: f64,
    pub provenance: String,
}

/// Ordered feature map over a finite vocabulary.
///
/// Lookup is linear scan: vocabularies here are a handful of entries, and
/// linear scan keeps iteration order trivially deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureEntry>", into = "Vec<FeatureEntry>")]
pub struct FeatureTable {
    dim: usize,
    inputs: Vec<InputFeatures>,
}

#[derive(Debug, Clone, PartialEq)]
struct InputFeatures {
    input: String,
    /// (output, feature vector) in insertion order.
    outputs: Vec<(String, Vec<f64>)>,
}

impl FeatureTable {
    /// Build a table from entries, validating dimensional consistency,
    /// uniqueness of (input, output) keys, and finiteness.
    pub fn new(entries: Vec<FeatureEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInstance(
                "feature table must contain at least one entry".into(),
            ));
        }
        let dim = entries[0].vector.len();
        if dim == 0 {
            return Err(Error::InvalidInstance(format!(
                "feature vector for ({}, {}) is empty",
                entries[0].input, entries[0].output
            )));
        }
        let mut inputs: Vec<InputFeatures> = Vec::new();
        for e in entries {
            if e.vector.len() != dim {
                return Err(Error::InvalidInstance(format!(
                    "feature vector for ({}, {}) has length {}, expected {}",
                    e.input,
                    e.output,
                    e.vector.len(),
                    dim
                )));
            }
            if e.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInstance(format!(
                    "feature vector for ({}, {}) contains a non-finite value",
                    e.input, e.output
                )));
            }
            let slot = match inputs.iter_mut().find(|f| f.input == e.input) {
                Some(slot) => slot,
                None => {
                    inputs.push(InputFeatures {
                        input: e.input.clone(),
                        outputs: Vec::new(),
                    });
                    inputs.last_mut().expect("just pushed")
                }
            };
            if slot.outputs.iter().any(|(o, _)| *o == e.output) {
                return Err(Error::InvalidInstance(format!(
                    "duplicate feature entry for ({}, {})",
                    e.input, e.output
                )));
            }
            slot.outputs.push((e.output, e.vector));
        }
        Ok(Self { dim, inputs })
    }

    /// Feature dimension shared by all entries.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of (input, output) entries.
    pub fn len(&self) -> usize {
        self.inputs.iter().map(|f| f.outputs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// The (output, feature) candidates for an input, in table order.
    /// This ordering defines the softmax support for the input.
    pub fn candidates(&self, input: &str) -> Option<&[(String, Vec<f64>)]> {
        self.inputs
            .iter()
            .find(|f| f.input == input)
            .map(|f| f.outputs.as_slice())
    }

    /// Feature vector for an (input, output) pair.
    pub fn feature(&self, input: &str, output: &str) -> Option<&[f64]> {
        self.candidates(input)?
            .iter()
            .find(|(o, _)| o == output)
            .map(|(_, v)| v.as_slice())
    }

    /// All entries in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, &[f64])> {
        self.inputs.iter().flat_map(|f| {
            f.outputs
                .iter()
                .map(move |(o, v)| (f.input.as_str(), o.as_str(), v.as_slice()))
        })
    }

    /// Largest feature norm Φ = max ‖φ‖ over the table. Positive and finite
    /// for any validated table with at least one nonzero vector.
    pub fn feature_bound(&self) -> f64 {
        self.entries()
            .map(|(_, _, v)| l2_norm(v))
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<FeatureEntry>> for FeatureTable {
    type Error = Error;

    fn try_from(entries: Vec<FeatureEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<FeatureTable> for Vec<FeatureEntry> {
    fn from(table: FeatureTable) -> Self {
        table
            .inputs
            .into_iter()
            .flat_map(|f| {
                let input = f.input;
                f.outputs
                    .into_iter()
                    .map(move |(output, vector)| FeatureEntry {
                        input: input.clone(),
                        output,
                        vector,
                    })
            })
            .collect()
    }
}

/// A complete optimization instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    /// Feature map over the vocabulary.
    pub features: FeatureTable,
    /// Preference dataset (non-empty).
    pub dpo_data: Vec<PreferencePair>,
    /// Supervised dataset (non-empty).
    pub sft_data: Vec<SftExample>,
    /// Preference temperature β > 0.
    pub beta: f64,
    /// Reference parameter or how to derive it.
    pub theta_ref: ThetaRef,
    /// Feasible set (defaults to unbounded when omitted in files).
    #[serde(default = "ConstraintSet::unbounded")]
    pub constraint: ConstraintSet,
    /// Optional analytically-known per-objective optima.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_optima: Option<KnownOptima>,
}

impl ConstraintSet {
    fn unbounded() -> Self {
        ConstraintSet::Unbounded
    }

    /// Validate internal consistency against a parameter dimension.
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ConstraintSet::Unbounded => Ok(()),
            ConstraintSet::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return Err(Error::InvalidInstance(format!(
                        "box constraint bounds have lengths {}/{}, expected {}",
                        lower.len(),
                        upper.len(),
                        dim
                    )));
                }
                for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
                    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                        return Err(Error::InvalidInstance(format!(
                            "box constraint has lower[{i}]={lo} > upper[{i}]={hi}"
                        )));
                    }
                }
                Ok(())
            }
            ConstraintSet::Ball { center, radius } => {
                if center.len() != dim {
                    return Err(Error::InvalidInstance(format!(
                        "ball constraint center has length {}, expected {}",
                        center.len(),
                        dim
                    )));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidInstance(format!(
                        "ball constraint radius must be positive and finite, got {radius}"
                    )));
                }
                Ok(())
            }
        }
    }
}

impl ProblemInstance {
    /// Build and validate an instance.
    pub fn new(
        features: FeatureTable,
        dpo_data: Vec<PreferencePair>,
        sft_data: Vec<SftExample>,
        beta: f64,
        theta_ref: ThetaRef,
        constraint: ConstraintSet,
        known_optima: Option<KnownOptima>,
    ) -> Result<Self> {
        let instance = Self {
            features,
            dpo_data,
            sft_data,
            beta,
            theta_ref,
            constraint,
            known_optima,
        };
        instance.validate()?;
        Ok(instance)
    }

    /// Feature dimension (= parameter dimension).
    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Largest feature norm Φ over the vocabulary.
    pub fn feature_bound(&self) -> f64 {
        self.features.feature_bound()
    }

    /// The reference parameter, when already resolved to a vector.
    pub fn reference(&self) -> Option<&[f64]> {
        match &self.theta_ref {
            ThetaRef::Vector(v) => Some(v),
            ThetaRef::Train(_) => None,
        }
    }

    /// The resolved reference parameter.
    ///
    /// # Panics
    ///
    /// Panics if the reference is still a training directive. Losses are
    /// only defined against a concrete reference; call
    /// [`crate::optim::resolve_reference`] first.
    pub fn require_reference(&self) -> &[f64] {
        self.reference().expect(
            "reference parameter not resolved: call optim::resolve_reference before \
             evaluating preference losses",
        )
    }

    /// Replace the reference specification with a concrete vector.
    pub fn with_reference(mut self, theta_ref: Vec<f64>) -> Self {
        self.theta_ref = ThetaRef::Vector(theta_ref);
        self
    }

    /// Structural validation. Every dataset row must reference feature-table
    /// entries; dimensions must agree; β must be positive. Error messages
    /// name the offending entry.
    pub fn validate(&self) -> Result<()> {
        let dim = self.features.dim();
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "beta must be positive and finite, got {}",
                self.beta
            )));
        }
        if self.dpo_data.is_empty() {
            return Err(Error::InvalidInstance(
                "preference dataset is empty".into(),
            ));
        }
        if self.sft_data.is_empty() {
            return Err(Error::InvalidInstance(
                "supervised dataset is empty".into(),
            ));
        }
        for (i, pair) in self.dpo_data.iter().enumerate() {
            for (role, output) in [("chosen", &pair.chosen), ("rejected", &pair.rejected)] {
                if self.features.feature(&pair.input, output).is_none() {
                    return Err(Error::InvalidInstance(format!(
                        "dpo_data[{i}] references unknown {role} output '{output}' for \
                         input '{}'",
                        pair.input
                    )));
                }
            }
            if pair.chosen == pair.rejected {
                return Err(Error::InvalidInstance(format!(
                    "dpo_data[{i}] has identical chosen and rejected output '{}'",
                    pair.chosen
                )));
            }
        }
        for (i, ex) in self.sft_data.iter().enumerate() {
            if self.features.feature(&ex.input, &ex.target).is_none() {
                return Err(Error::InvalidInstance(format!(
                    "sft_data[{i}] references unknown target '{}' for input '{}'",
                    ex.target, ex.input
                )));
            }
        }
        match &self.theta_ref {
            ThetaRef::Vector(v) => {
                if v.len() != dim {
                    return Err(Error::InvalidInstance(format!(
                        "theta_ref vector has length {}, expected {}",
                        v.len(),
                        dim
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInstance(
                        "theta_ref vector contains a non-finite value".into(),
                    ));
                }
            }
            ThetaRef::Train(d) => {
                if d.init.len() != dim {
                    return Err(Error::InvalidInstance(format!(
                        "reference training init has length {}, expected {}",
                        d.init.len(),
                        dim
                    )));
                }
                if !(d.step.is_finite() && d.step > 0.0) {
                    return Err(Error::InvalidInstance(format!(
                        "reference training step must be positive, got {}",
                        d.step
                    )));
                }
                if !(d.weight_decay.is_finite() && d.weight_decay >= 0.0) {
                    return Err(Error::InvalidInstance(format!(
                        "reference training weight_decay must be non-negative, got {}",
                        d.weight_decay
                    )));
                }
            }
        }
        self.constraint.validate(dim)?;
        Ok(())
    }
}

/// Load and validate an instance from a JSON file.
pub fn load_instance<P: AsRef<Path>>(path: P) -> Result<ProblemInstance> {
    let text = fs::read_to_string(path.as_ref())?;
    let instance: ProblemInstance = serde_json::from_str(&text)?;
    instance.validate()?;
    Ok(instance)
}

/// Validate and write an instance to a JSON file (pretty-printed).
pub fn save_instance<P: AsRef<Path>>(instance: &ProblemInstance, path: P) -> Result<()> {
    instance.validate()?;
    let text = serde_json::to_string_pretty(instance)?;
    fs::write(path.as_ref(), text)?;
    Ok(())
}

/// The 1-D two-prompt instance on which alternating and mixed schemes
/// provably separate: the preference pair and the supervised target pull
/// the scalar parameter in opposite directions, so no parameter makes both
/// objectives simultaneously small yet each alone is driven to its infimum.
///
/// Closed forms against the reference θ_ref = −10 (the value consistent
/// with the constant c = (1+e⁵)/(1+e⁻⁵) = e⁵ in the per-objective
/// expressions):
///
/// - f_DPO(θ) = log(1 + e^{θ/2+5}),  g_DPO(θ) = ½σ(θ/2+5)
/// - f_SFT(θ) = log(1 + e^{−θ/2}),   g_SFT(θ) = −½σ(−θ/2)
///
/// Both infima are 0 (approached as θ → −∞ and θ → +∞ respectively),
/// recorded in `known_optima`.
pub fn lower_bound_instance() -> ProblemInstance {
    let features = FeatureTable::new(vec![
        FeatureEntry {
            input: "x1".into(),
            output: "1".into(),
            vector: vec![-1.0],
        },
        FeatureEntry {
            input: "x1".into(),
            output: "0".into(),
            vector: vec![-0.5],
        },
        FeatureEntry {
            input: "x2".into(),
            output: "0".into(),
            vector: vec![1.0],
        },
        FeatureEntry {
            input: "x2".into(),
            output: "1".into(),
            vector: vec![0.5],
        },
    ])
    .expect("builtin feature table is well-formed");
    ProblemInstance::new(
        features,
        vec![PreferencePair {
            input: "x1".into(),
            chosen: "1".into(),
            rejected: "0".into(),
        }],
        vec![SftExample {
            input: "x2".into(),
            target: "0".into(),
        }],
        1.0,
        ThetaRef::Vector(vec![-10.0]),
        ConstraintSet::Unbounded,
        Some(KnownOptima {
            f_star_dpo: 0.0,
            f_star_sft: 0.0,
            provenance: "both losses are positive with infimum 0 on the unbounded line \
                         (f_DPO → 0 as θ → −∞, f_SFT → 0 as θ → +∞)"
                .into(),
        }),
    )
    .expect("builtin instance is valid")
}

/// The 2-D illustration instance: the preference pair rewards moving along
/// [1,1]−[.5,.5] while the supervised target only needs the first
/// coordinate, so the two objectives are compatible but not identical.
/// The reference parameter is derived by the bundled training directive
/// (1000 steps at 0.01 with weight decay 0.001 from [5.0, −9.9]); there is
/// no analytic optimum, so `known_optima` is absent and estimates come from
/// independent runs.
pub fn toy2d_instance() -> ProblemInstance {
    let features = FeatureTable::new(vec![
        FeatureEntry {
            input: "x1".into(),
            output: "1".into(),
            vector: vec![1.0, 1.0],
        },
        FeatureEntry {
            input: "x1".into(),
            output: "0".into(),
            vector: vec![0.5, 0.5],
        },
        FeatureEntry {
            input: "x2".into(),
            output: "0".into(),
            vector: vec![1.0, 0.5],
        },
        FeatureEntry {
            input: "x2".into(),
            output: "1".into(),
            vector: vec![0.5, 0.5],
        },
    ])
    .expect("builtin feature table is well-formed");
    ProblemInstance::new(
        features,
        vec![PreferencePair {
            input: "x1".into(),
            chosen: "1".into(),
            rejected: "0".into(),
        }],
        vec![SftExample {
            input: "x2".into(),
            target: "0".into(),
        }],
        1.0,
        ThetaRef::Train(TrainDirective {
            init: vec![5.0, -9.9],
            epochs: 1000,
            step: 0.01,
            weight_decay: 0.001,
        }),
        ConstraintSet::Unbounded,
        None,
    )
    .expect("builtin instance is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_pass_validation() {
        assert!(lower_bound_instance().validate().is_ok());
        assert!(toy2d_instance().validate().is_ok());
    }

    #[test]
    fn lower_bound_shape() {
        let inst = lower_bound_instance();
        assert_eq!(inst.dim(), 1);
        assert_eq!(inst.features.len(), 4);
        assert_eq!(inst.reference(), Some(&[-10.0][..]));
        let opt = inst.known_optima.expect("builtin records known optima");
        assert_eq!(opt.f_star_dpo, 0.0);
        assert_eq!(opt.f_star_sft, 0.0);
        // Feature norms are 1, .5, 1, .5 → Φ = 1.
        assert_eq!(inst.features.feature_bound(), 1.0);
    }

    #[test]
    fn toy2d_shape() {
        let inst = toy2d_instance();
        assert_eq!(inst.dim(), 2);
        assert!(inst.reference().is_none(), "reference starts unresolved");
        assert!(inst.known_optima.is_none());
        // Largest feature norm is ‖[1,1]‖ = √2.
        assert!((inst.features.feature_bound() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn candidate_order_follows_the_table() {
        let inst = lower_bound_instance();
        let cands = inst.features.candidates("x2").expect("x2 present");
        assert_eq!(cands[0].0, "0");
        assert_eq!(cands[1].0, "1");
    }

    #[test]
    fn json_round_trip_is_lossless() {
        for inst in [lower_bound_instance(), toy2d_instance()] {
            let text = serde_json::to_string(&inst).expect("serialize");
            let back: ProblemInstance = serde_json::from_str(&text).expect("parse");
            assert_eq!(back, inst);
        }
    }

    #[test]
    fn file_round_trip_is_lossless() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("instance.json");
        let inst = toy2d_instance();
        save_instance(&inst, &path).expect("save");
        let back = load_instance(&path).expect("load");
        assert_eq!(back, inst);
    }

    #[test]
    fn validation_names_the_offending_entry() {
        let mut inst = lower_bound_instance();
        inst.dpo_data[0].rejected = "9".into();
        let err = inst.validate().expect_err("unknown output must fail");
        let msg = err.to_string();
        assert!(msg.contains("dpo_data[0]"), "got: {msg}");
        assert!(msg.contains('9'), "got: {msg}");
    }

    #[test]
    fn mismatched_feature_length_is_rejected() {
        let err = FeatureTable::new(vec![
            FeatureEntry {
                input: "x".into(),
                output: "a".into(),
                vector: vec![1.0, 2.0],
            },
            FeatureEntry {
                input: "x".into(),
                output: "b".into(),
                vector: vec![1.0],
            },
        ])
        .expect_err("length mismatch must fail");
        assert!(err.to_string().contains("(x, b)"), "got: {err}");
    }

    #[test]
    fn duplicate_feature_entry_is_rejected() {
        let err = FeatureTable::new(vec![
            FeatureEntry {
                input: "x".into(),
                output: "a".into(),
                vector: vec![1.0],
            },
            FeatureEntry {
                input: "x".into(),
                output: "a".into(),
                vector: vec![2.0],
            },
        ])
        .expect_err("duplicate key must fail");
        assert!(err.to_string().contains("duplicate"), "got: {err}");
    }

    #[test]
    fn nonpositive_beta_is_rejected() {
        let mut inst = lower_bound_instance();
        inst.beta = 0.0;
        assert!(inst.validate().is_err());
        inst.beta = f64::NAN;
        assert!(inst.validate().is_err());
    }

    #[test]
    fn bad_constraints_are_rejected() {
        let mut inst = lower_bound_instance();
        inst.constraint = ConstraintSet::Box {
            lower: vec![1.0],
            upper: vec![-1.0],
        };
        assert!(inst.validate().is_err(), "inverted box must fail");
        inst.constraint = ConstraintSet::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert!(inst.validate().is_err(), "wrong-dim ball must fail");
        inst.constraint = ConstraintSet::Ball {
            center: vec![0.0],
            radius: 0.0,
        };
        assert!(inst.validate().is_err(), "zero radius must fail");
    }

    #[test]
    fn theta_ref_dim_mismatch_is_rejected() {
        let mut inst = lower_bound_instance();
        inst.theta_ref = ThetaRef::Vector(vec![0.0, 0.0]);
        assert!(inst.validate().is_err());
    }
}
