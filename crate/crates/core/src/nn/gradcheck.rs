use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{loss_and_gradients, model_forward, mse_loss, GradientSet, ModelInput, ModelParams, ModelSpec, Result};

#[derive(Debug, Clone, Copy)]
pub struct FdConfig {
    pub h: f64,
    pub tol: f64,
    /// Coordinates checked; every coordinate when the model is smaller.
    pub samples: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { h: 1e-5, tol: 1e-4, samples: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_path: String,
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

fn loss_at(spec: &ModelSpec, params: &ModelParams, input: &ModelInput, target: &[f64]) -> Result<f64> {
    let (out, _) = model_forward(spec, params, input)?;
    Ok(mse_loss(out.data(), target))
}

/// Compares `grads` against central differences of the MSE loss on a
/// seeded sample of coordinates. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn check_gradients(
    spec: &ModelSpec,
    params: &ModelParams,
    input: &ModelInput,
    target: &[f64],
    grads: &GradientSet,
    cfg: FdConfig,
) -> Result<FdReport> {
    let coords: Vec<(&String, usize)> =
        params.tensors.iter().flat_map(|(p, t)| (0..t.len()).map(move |i| (p, i))).collect();
    let picked: Vec<usize> = if coords.len() <= cfg.samples {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = rand::seq::index::sample(&mut rng, coords.len(), cfg.samples).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut report = FdReport { max_rel_error: 0.0, worst_path: String::new(), worst_index: 0, checked: 0, passed: true };
    let mut probe = params.clone();
    for k in picked {
        let (path, i) = coords[k];
        let orig = params.tensors[path].data()[i];
        probe.get_mut(path)?.data_mut()[i] = orig + cfg.h;
        let up = loss_at(spec, &probe, input, target)?;
        probe.get_mut(path)?.data_mut()[i] = orig - cfg.h;
        let down = loss_at(spec, &probe, input, target)?;
        probe.get_mut(path)?.data_mut()[i] = orig;

        let numeric = (up - down) / (2.0 * cfg.h);
        let analytic = grads.get(path)?.data()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_path = path.clone();
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report.passed = report.max_rel_error <= cfg.tol;
    Ok(report)
}

/// Analytic gradients from the backward pass, checked against central
/// differences.
pub fn finite_difference_check(
    spec: &ModelSpec,
    params: &ModelParams,
    input: &ModelInput,
    target: &[f64],
    cfg: FdConfig,
) -> Result<FdReport> {
    let (_, grads) = loss_and_gradients(spec, params, input, target)?;
    check_gradients(spec, params, input, target, &grads, cfg)
}
