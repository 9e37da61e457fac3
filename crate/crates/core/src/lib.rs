//! Joint preference/supervised optimization over softmax linear-feature
//! policies.
//!
//! The library models a policy π_θ(y|x) ∝ exp(θᵀφ(x,y)) over a finite
//! candidate table and minimizes two full-batch objectives — a preference
//! (DPO) loss against a fixed reference policy and a supervised (SFT)
//! negative log-likelihood — either jointly or in alternation:
//!
//! * [`optim::Variant::Sequential`] — one objective to (near-)convergence,
//!   then the other;
//! * [`optim::Variant::Mix`] — descend the λ-weighted sum of both
//!   gradients each step;
//! * [`optim::Variant::Alright`] — per step, pick the objective by a
//!   Bernoulli(λ) draw;
//! * [`optim::Variant::Maxright`] — per step, descend whichever weighted
//!   optimality gap is currently larger;
//! * [`optim::Variant::MaxrightMemEff`] — Maxright with losses refreshed
//!   every k steps instead of every step.
//!
//! [`instance`] defines problem data (features, datasets, reference
//! policy, constraints), [`policy`] the losses and gradients, [`optim`]
//! the runners and trajectories, [`metrics`] gap/Pareto/rate reporting,
//! and [`verify`] independent numerical oracles for all of the above.
//!
//! Two small built-in instances ship with the crate:
//! [`instance::lower_bound_instance`] (scalar, with known per-objective
//! optima and closed forms) and [`instance::toy2d_instance`] (two
//! dimensions, reference policy trained from a directive).
//!
//! Everything is deterministic given the configured seeds: runs use
//! ChaCha8 streams and identical configurations reproduce trajectories
//! bit for bit.

pub mod error;
pub mod instance;
mod math;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod verify;

pub use error::{Error, Result};
pub use instance::{lower_bound_instance, toy2d_instance, ProblemInstance};
pub use optim::{run, RunConfig, Trajectory, Variant};
