//! Softmax linear-feature policy: log-likelihoods, the preference and
//! supervised losses, and their analytic gradients.
//!
//! The policy over outputs y for input x is π_θ(y|x) ∝ exp(θᵀφ(x,y)),
//! with support and ordering given by the instance's feature table.
//!
//! Losses (full-batch versions average over the respective dataset):
//!
//! - preference (DPO): ℓ(θ; x, y_w, y_ℓ) = −log σ(h_β) with
//!   h_β = β·(θ−θ_ref)ᵀ(φ_w − φ_ℓ). Note that for linear features the
//!   usual log-ratio form collapses to this inner product exactly.
//! - supervised (SFT): ℓ(θ; x, y) = −log π_θ(y|x).
//!
//! Gradients:
//!
//! - ∇ℓ_DPO = −β(1−σ(h_β))(φ_w − φ_ℓ)
//! - ∇ℓ_SFT = −(φ_y − φ̄_x(θ)) where φ̄_x(θ) = Σ_y π_θ(y|x)·φ(x,y)
//!
//! All evaluation functions assume a validated instance with a resolved
//! reference parameter (see [`crate::optim::resolve_reference`]); they
//! panic with a descriptive message otherwise, since that is a programming
//! error rather than a data error.

use serde::{Deserialize, Serialize};

use crate::instance::{PreferencePair, ProblemInstance, SftExample};
use crate::math::{dot, logsumexp, sigmoid, softplus};

/// The two full-batch objective values at a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPair {
    pub f_dpo: f64,
    pub f_sft: f64,
}

impl LossPair {
    /// Convex combination λ·f_DPO + (1−λ)·f_SFT.
    pub fn mix(&self, lambda: f64) -> f64 {
        lambda * self.f_dpo + (1.0 - lambda) * self.f_sft
    }
}

fn candidates<'a>(
    instance: &'a ProblemInstance,
    input: &str,
) -> &'a [(String, Vec<f64>)] {
    instance
        .features
        .candidates(input)
        .unwrap_or_else(|| panic!("input '{input}' not present in the feature table"))
}

fn feature<'a>(instance: &'a ProblemInstance, input: &str, output: &str) -> &'a [f64] {
    instance
        .features
        .feature(input, output)
        .unwrap_or_else(|| panic!("pair ('{input}', '{output}') not present in the feature table"))
}

/// Softmax distribution over the input's candidate outputs, in table order.
pub fn prob_dist(theta: &[f64], instance: &ProblemInstance, input: &str) -> Vec<f64> {
    let cands = candidates(instance, input);
    let logits: Vec<f64> = cands.iter().map(|(_, phi)| dot(theta, phi)).collect();
    let lse = logsumexp(&logits);
    logits.iter().map(|&z| (z - lse).exp()).collect()
}

/// log π_θ(output | input).
pub fn log_prob(theta: &[f64], instance: &ProblemInstance, input: &str, output: &str) -> f64 {
    let cands = candidates(instance, input);
    let logits: Vec<f64> = cands.iter().map(|(_, phi)| dot(theta, phi)).collect();
    let idx = cands
        .iter()
        .position(|(o, _)| o == output)
        .unwrap_or_else(|| panic!("output '{output}' not a candidate for input '{input}'"));
    logits[idx] - logsumexp(&logits)
}

/// Policy-weighted mean feature φ̄_x(θ) = Σ_y π_θ(y|x)·φ(x,y).
pub fn mean_feature(theta: &[f64], instance: &ProblemInstance, input: &str) -> Vec<f64> {
    let cands = candidates(instance, input);
    let probs = prob_dist(theta, instance, input);
    let mut mean = vec![0.0; instance.dim()];
    for ((_, phi), p) in cands.iter().zip(&probs) {
        for (m, &x) in mean.iter_mut().zip(phi) {
            *m += p * x;
        }
    }
    mean
}

/// Preference margin h_β = β·(θ−θ_ref)ᵀ(φ_w − φ_ℓ).
pub fn h_beta(theta: &[f64], instance: &ProblemInstance, pair: &PreferencePair) -> f64 {
    let theta_ref = instance.require_reference();
    let phi_w = feature(instance, &pair.input, &pair.chosen);
    let phi_l = feature(instance, &pair.input, &pair.rejected);
    let mut h = 0.0;
    for i in 0..theta.len() {
        h += (theta[i] - theta_ref[i]) * (phi_w[i] - phi_l[i]);
    }
    instance.beta * h
}

/// Per-sample preference loss −log σ(h_β) = softplus(−h_β).
pub fn dpo_sample_loss(theta: &[f64], instance: &ProblemInstance, pair: &PreferencePair) -> f64 {
    softplus(-h_beta(theta, instance, pair))
}

/// Full-batch preference loss: mean per-sample loss over `dpo_data`.
pub fn dpo_loss(theta: &[f64], instance: &ProblemInstance) -> f64 {
    let n = instance.dpo_data.len() as f64;
    instance
        .dpo_data
        .iter()
        .map(|pair| dpo_sample_loss(theta, instance, pair))
        .sum::<f64>()
        / n
}

/// Per-sample preference gradient −β(1−σ(h_β))(φ_w − φ_ℓ).
pub fn g_dpo_sample(
    theta: &[f64],
    instance: &ProblemInstance,
    pair: &PreferencePair,
) -> Vec<f64> {
    let h = h_beta(theta, instance, pair);
    let coeff = -instance.beta * (1.0 - sigmoid(h));
    let phi_w = feature(instance, &pair.input, &pair.chosen);
    let phi_l = feature(instance, &pair.input, &pair.rejected);
    phi_w
        .iter()
        .zip(phi_l)
        .map(|(w, l)| coeff * (w - l))
        .collect()
}

/// Full-batch preference gradient: mean per-sample gradient.
pub fn g_dpo(theta: &[f64], instance: &ProblemInstance) -> Vec<f64> {
    let n = instance.dpo_data.len() as f64;
    let mut grad = vec![0.0; instance.dim()];
    for pair in &instance.dpo_data {
        for (g, s) in grad.iter_mut().zip(g_dpo_sample(theta, instance, pair)) {
            *g += s / n;
        }
    }
    grad
}

/// Per-sample supervised loss −log π_θ(target | input).
pub fn sft_sample_loss(theta: &[f64], instance: &ProblemInstance, ex: &SftExample) -> f64 {
    -log_prob(theta, instance, &ex.input, &ex.target)
}

/// Full-batch supervised loss: mean per-sample loss over `sft_data`.
pub fn sft_loss(theta: &[f64], instance: &ProblemInstance) -> f64 {
    let n = instance.sft_data.len() as f64;
    instance
        .sft_data
        .iter()
        .map(|ex| sft_sample_loss(theta, instance, ex))
        .sum::<f64>()
        / n
}

/// Per-sample supervised gradient φ̄_x(θ) − φ_target.
pub fn g_sft_sample(theta: &[f64], instance: &ProblemInstance, ex: &SftExample) -> Vec<f64> {
    let mean = mean_feature(theta, instance, &ex.input);
    let phi_t = feature(instance, &ex.input, &ex.target);
    mean.iter().zip(phi_t).map(|(m, t)| m - t).collect()
}

/// Full-batch supervised gradient: mean per-sample gradient.
pub fn g_sft(theta: &[f64], instance: &ProblemInstance) -> Vec<f64> {
    let n = instance.sft_data.len() as f64;
    let mut grad = vec![0.0; instance.dim()];
    for ex in &instance.sft_data {
        for (g, s) in grad.iter_mut().zip(g_sft_sample(theta, instance, ex)) {
            *g += s / n;
        }
    }
    grad
}

/// Reference likelihood loss: mean −log π_θ(chosen | input) over the
/// preference dataset. This is the objective the reference-training
/// directive descends (the chosen outputs double as demonstrations).
pub fn reference_loss(theta: &[f64], instance: &ProblemInstance) -> f64 {
    let n = instance.dpo_data.len() as f64;
    instance
        .dpo_data
        .iter()
        .map(|pair| -log_prob(theta, instance, &pair.input, &pair.chosen))
        .sum::<f64>()
        / n
}

/// Both full-batch losses at one parameter.
pub fn loss_pair(theta: &[f64], instance: &ProblemInstance) -> LossPair {
    LossPair {
        f_dpo: dpo_loss(theta, instance),
        f_sft: sft_loss(theta, instance),
    }
}

/// Mixed objective λ·f_DPO(θ) + (1−λ)·f_SFT(θ).
pub fn mix_loss(theta: &[f64], instance: &ProblemInstance, lambda: f64) -> f64 {
    loss_pair(theta, instance).mix(lambda)
}
