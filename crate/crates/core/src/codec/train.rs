use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grads_in_order, Architecture, CodecModel, ModelGrads, QuantMode};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub lambdas: Vec<f64>,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub arch: Architecture,
    /// Keep a copy of the model every this many iterations (0 = never).
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 4,
            iterations: 2000,
            lambdas: vec![0.001, 0.002, 0.004, 0.008],
            seed: 0,
            dataset: None,
            arch: Architecture::default(),
            snapshot_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "learning rate, batch size and iterations must be positive".into(),
            ));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("lambda list must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CodecModel,
    pub initial: CodecModel,
    /// Mean per-pixel loss of each iteration's batch.
    pub trajectory: Vec<f64>,
    pub snapshots: Vec<(usize, CodecModel)>,
}

/// Minimise the expected noisy-proxy loss over `dataset` for one `lambda`.
pub fn train(config: &TrainConfig, lambda: f64, dataset: &[Tensor]) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let init = CodecModel::new(config.arch, lambda, config.seed)?;
    for x in dataset {
        init.check_image(x)?;
    }
    let mut model = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
    let mut state = {
        let (params, _) = model.params_mut();
        let refs: Vec<&Tensor> = params.iter().map(|t| &**t).collect();
        AdamState::new(&refs)
    };
    let f = config.arch.hyper;
    let mut fstate = AdamState::new(&[&Tensor::zeros(&[f]), &Tensor::zeros(&[f])]);
    let mut trajectory = Vec::with_capacity(config.iterations);
    let mut snapshots = Vec::new();
    let decay_at = config.iterations * 4 / 5;
    for it in 0..config.iterations {
        let jobs: Vec<(usize, u64)> = (0..config.batch_size)
            .map(|_| (rng.gen_range(0..dataset.len()), rng.gen()))
            .collect();
        let results = par::map(&jobs, |&(i, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            model.loss_and_param_grads(&dataset[i], QuantMode::Noise, &mut r)
        });
        let mut total = model.zero_grads();
        let mut loss = 0.0;
        let mut pixels = 0.0;
        for ((i, _), r) in jobs.iter().zip(results) {
            let (terms, g) = r.map_err(|e| match e {
                Error::Training { .. } => Error::Diverged { iteration: it },
                other => other,
            })?;
            let px = (dataset[*i].shape()[0] * dataset[*i].shape()[1]) as f64;
            loss += terms.total / px;
            pixels += px;
            total.add_assign(&g)?;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        trajectory.push(loss / config.batch_size as f64);
        total.scale(1.0 / pixels);
        let lr = if it >= decay_at { config.learning_rate * 0.1 } else { config.learning_rate };
        apply(&mut model, &total, &mut state, &mut fstate, lr).map_err(|e| match e {
            Error::Training { .. } => Error::Diverged { iteration: it },
            other => other,
        })?;
        if config.snapshot_every > 0 && (it + 1) % config.snapshot_every == 0 {
            snapshots.push((it + 1, model.clone()));
        }
    }
    Ok(TrainOutcome {
        model,
        initial: init,
        trajectory,
        snapshots,
    })
}

fn apply(
    model: &mut CodecModel,
    grads: &ModelGrads,
    state: &mut AdamState,
    fstate: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let cfg = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let ordered = grads_in_order(grads, model);
    let refs: Vec<&Tensor> = ordered.iter().collect();
    let (mut params, names) = model.params_mut();
    adam_step(&mut params, &refs, &names, state, &cfg)?;
    let f = model.factorized.loc.len();
    let mut loc = Tensor::new(vec![f], model.factorized.loc.clone())?;
    let mut ls = Tensor::new(vec![f], model.factorized.log_scale.clone())?;
    let gl = Tensor::new(vec![f], grads.factorized.loc.clone())?;
    let gs = Tensor::new(vec![f], grads.factorized.log_scale.clone())?;
    adam_step(
        &mut [&mut loc, &mut ls],
        &[&gl, &gs],
        &["factorized.loc".into(), "factorized.log_scale".into()],
        fstate,
        &cfg,
    )?;
    model.factorized.loc = loc.into_data();
    model.factorized.log_scale = ls.into_data();
    Ok(())
}
