//! Analytic gradients against central finite differences.
//!
//! Both sides are evaluated in `f64` from the stored `f32` parameters, so the
//! finite differences are not swamped by single-precision rounding.

use super::network::Network;
use super::params::ParameterSet;
use super::train::{batch_loss, EncodedPair, SpecialIds};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checks: Vec<CoordinateCheck>,
    pub tensors_covered: usize,
}

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is numerically zero compare on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares at least `min_coords` sampled coordinates, at least two from every tensor.
pub fn grad_check(
    params: &ParameterSet,
    batch: &[EncodedPair],
    epsilon: f64,
    min_coords: usize,
    seed: u64,
) -> GradCheckReport {
    let special = SpecialIds::default();
    let cfg = *params.config();
    let layout = params.layout();
    let mut weights: Vec<f64> = params.values().iter().map(|&v| v as f64).collect();
    let refs: Vec<&EncodedPair> = batch.iter().collect();

    let analytic = {
        let net = Network::new(cfg, layout, &weights);
        batch_loss(&net, &refs, special, true, None)
            .grad
            .expect("gradient requested")
    };

    let per_tensor = min_coords.div_ceil(layout.tensors.len()).max(2);
    let mut rng = SeededRng::new(seed);
    let mut checks = Vec::new();
    for spec in &layout.tensors {
        let n = spec.range.len();
        let mut picks: Vec<usize> = (0..per_tensor.min(n)).map(|_| rng.below(n)).collect();
        picks.sort_unstable();
        picks.dedup();
        for local in picks {
            let i = spec.range.start + local;
            let orig = weights[i];
            weights[i] = orig + epsilon;
            let plus = loss_at(cfg, layout, &weights, &refs, special);
            weights[i] = orig - epsilon;
            let minus = loss_at(cfg, layout, &weights, &refs, special);
            weights[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            checks.push(CoordinateCheck {
                tensor: spec.name.clone(),
                index: local,
                analytic: analytic[i],
                numeric,
                relative_error: relative_error(analytic[i], numeric),
            });
        }
    }
    let max_relative_error = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    let mut covered: Vec<&str> = checks.iter().map(|c| c.tensor.as_str()).collect();
    covered.dedup();
    GradCheckReport {
        max_relative_error,
        tensors_covered: covered.len(),
        checks,
    }
}

fn loss_at(
    cfg: super::config::TransformerConfig,
    layout: &super::params::Layout,
    weights: &[f64],
    batch: &[&EncodedPair],
    special: SpecialIds,
) -> f64 {
    let net = Network::new(cfg, layout, weights);
    batch_loss(&net, batch, special, false, None).loss
}
