use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::trainer::{compute_gradients, dataset_loss};
use crate::data::{generate_synthetic_cohort, Dataset, Sample, SynthConfig};
use crate::error::{Error, Result};
use crate::loss::WeightConfig;
use crate::model::{init_params, ModelConfig, ModelParams};

/// Largest acceptable relative error between analytic and numeric gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Coordinates checked per tensor (all of them when a tensor is smaller).
const COORDS_PER_TENSOR: usize = 25;

/// Below this magnitude both gradients are treated as zero; central
/// differences cannot resolve anything smaller in f64.
const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates where both gradients were below the zero floor.
    pub below_floor: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOLERANCE
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ABS_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Compares the analytic gradient of the weighted loss against central
/// differences with step `step`, over a seeded sample of coordinates from
/// every tensor.
pub fn check_gradients(
    params: &ModelParams<f64>,
    samples: &[&Sample],
    wc: &WeightConfig,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let (_, grads) = compute_gradients(params, samples, wc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        below_floor: 0,
    };
    for ti in 0..params.tensors.len() {
        let n = params.tensors[ti].data.len();
        let mut coords = if n <= COORDS_PER_TENSOR {
            (0..n).collect()
        } else {
            sample(&mut rng, n, COORDS_PER_TENSOR).into_vec()
        };
        coords.sort_unstable();
        for k in coords {
            let orig = params.tensors[ti].data[k];
            probe.tensors[ti].data[k] = orig + step;
            let up = dataset_loss(&probe, samples, wc)?;
            probe.tensors[ti].data[k] = orig - step;
            let down = dataset_loss(&probe, samples, wc)?;
            probe.tensors[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.tensors[ti][k];
            let err = rel_error(analytic, numeric);
            report.checked += 1;
            if analytic.abs().max(numeric.abs()) < ABS_FLOOR {
                report.below_floor += 1;
            }
            if err > report.max_rel_error || report.worst_tensor.is_empty() {
                report.max_rel_error = err;
                report.worst_tensor = params.tensors[ti].name.clone();
                report.worst_index = k;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Gradient check of a freshly initialized f64 model on a batch of two
/// synthetic subjects (one per group) under non-uniform weights.
pub fn gradcheck(mcfg: &ModelConfig, seed: u64, step: f64) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    mcfg.validate()?;
    let mut sc = SynthConfig::new(1, 1, seed);
    sc.dims = mcfg.input_dims;
    sc.patch_size = mcfg.patch_size;
    let synth = generate_synthetic_cohort(&sc)?;
    let data = Dataset::from_parts(&synth.cohort, &synth.volumes)?;
    let batch: Vec<&Sample> = data.samples.iter().collect();
    let params = init_params::<f64>(mcfg, seed)?;
    check_gradients(&params, &batch, &WeightConfig::moderate(), step, seed)
}
