//! Per-image optimisation of the latents with frozen network parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{quantize, CodecModel, QuantMode, LatentPair, LossTerms, PassCounts, QuantState};
use crate::error::Result;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::Tensor;

/// How rounding is relaxed while optimising.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relaxation {
    /// Additive uniform noise in place of rounding.
    Noise,
    /// Optimise the loss at the continuous latents themselves.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub relaxation: Relaxation,
    /// Evaluate the rounded loss every this many iterations.
    pub check_every: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            iterations: 1000,
            learning_rate: 0.05,
            relaxation: Relaxation::Noise,
            check_every: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Best rounded latents found (the baseline ones if nothing improved).
    pub latents: LatentPair,
    /// Continuous latents at the last iteration.
    pub continuous: LatentPair,
    pub baseline_loss: LossTerms,
    pub loss: LossTerms,
    /// Best rounded loss after each check; non-increasing.
    pub trajectory: Vec<f64>,
    pub diverged: bool,
    pub passes: PassCounts,
}

/// Optimise `(y, z)` for one image against the rate-distortion loss.
///
/// The rounded loss is tracked on a schedule and the best rounded latents
/// are returned, so the result never loses to the plain encoder.
pub fn finetune_latents(x: &Tensor, model: &CodecModel, cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    let mut passes = PassCounts::default();
    model.check_image(x)?;
    let y0 = model.analyze(x)?;
    let z0 = model.hyper_analyze(&y0)?;
    passes.analysis += 1;
    passes.hyper_analysis += 1;
    let mut best = LatentPair::rounded(&y0, &z0);
    let baseline_loss = model.loss_at(x, &best.y, &best.z)?;
    passes.hyper_synthesis += 1;
    passes.synthesis += 1;
    let mut best_loss = baseline_loss;
    let mut trajectory = vec![best_loss.total];

    let (mut y, mut z) = (y0, z0);
    let mut state = AdamState::new(&[&y, &z]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names = ["y".to_string(), "z".to_string()];
    let mut diverged = false;
    let check_every = cfg.check_every.max(1);
    for it in 0..cfg.iterations {
        let (yin, zin) = match cfg.relaxation {
            Relaxation::Noise => (
                quantize(&y, QuantMode::Noise, &mut rng),
                quantize(&z, QuantMode::Noise, &mut rng),
            ),
            Relaxation::Deterministic => (y.clone(), z.clone()),
        };
        let grads = model.loss_and_latent_grads(x, &yin, &zin);
        passes.hyper_synthesis += 1;
        passes.synthesis += 1;
        passes.gradients += 1;
        let (_, gy, gz) = match grads {
            Ok(g) if g.1.is_finite() && g.2.is_finite() => g,
            _ => {
                diverged = true;
                break;
            }
        };
        let lr = cfg.learning_rate * (1.0 - it as f64 / cfg.iterations as f64).max(0.05);
        let acfg = AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        if adam_step(&mut [&mut y, &mut z], &[&gy, &gz], &names, &mut state, &acfg).is_err() {
            diverged = true;
            break;
        }
        if (it + 1) % check_every == 0 || it + 1 == cfg.iterations {
            let cand = LatentPair::rounded(&y, &z);
            let l = model.loss_at(x, &cand.y, &cand.z)?;
            passes.hyper_synthesis += 1;
            passes.synthesis += 1;
            if l.total < best_loss.total {
                best_loss = l;
                best = cand;
            }
            trajectory.push(best_loss.total);
        }
    }
    Ok(FinetuneOutcome {
        latents: best,
        continuous: LatentPair {
            y,
            z,
            state: QuantState::Continuous,
        },
        baseline_loss,
        loss: best_loss,
        trajectory,
        diverged,
        passes,
    })
}
