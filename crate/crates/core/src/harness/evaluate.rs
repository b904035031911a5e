//! Rate-distortion evaluation of a set of models (one per λ) over images.

use serde::Serialize;

use crate::analysis::latent_correlations;
use crate::codec::{
    baseline_latents, decode, encode_latents, finetune_latents, CodecModel, EncodeOptions, EncodeOutput,
    FinetuneConfig, LatentPair, PassCounts,
};
use crate::error::{Error, Result};
use crate::harness::metrics::{bd_rate, psnr, RDCurve, RDPoint};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Shift,
    Finetune,
    FinetuneShift,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Shift, Mode::Finetune, Mode::FinetuneShift];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Shift => "shift",
            Mode::Finetune => "finetune",
            Mode::FinetuneShift => "finetune+shift",
        }
    }

    fn shift(self) -> bool {
        matches!(self, Mode::Shift | Mode::FinetuneShift)
    }

    fn finetuned(self) -> bool {
        matches!(self, Mode::Finetune | Mode::FinetuneShift)
    }
}

/// Check that models are ordered by λ and share one architecture.
pub fn check_model_set(models: &[CodecModel]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::Config("no model checkpoints given".into()))?;
    for m in models {
        m.validate()?;
        if m.arch != first.arch {
            return Err(Error::Config("models disagree on architecture".into()));
        }
    }
    if models.windows(2).any(|w| w[1].lambda <= w[0].lambda) {
        return Err(Error::Config("models must be ordered by increasing lambda".into()));
    }
    if models.len() > u8::MAX as usize {
        return Err(Error::Config("at most 255 lambda values".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub modes: Vec<Mode>,
    pub finetune: FinetuneConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { modes: Mode::ALL.to_vec(), finetune: FinetuneConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub image_id: String,
    pub lambda_index: usize,
    pub lambda: f64,
    pub mode: &'static str,
    pub bytes: usize,
    pub bpp: f64,
    pub psnr: f64,
    pub mse: f64,
    pub rho_f_idx: u8,
    pub rho_h_idx: u8,
}

#[derive(Debug, Clone, Serialize)]
pub struct BdRow {
    pub mode: &'static str,
    /// Percent rate change against baseline; empty if it cannot be computed.
    pub bd_rate: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Mean-over-images curve of each mode (needs at least four λ values).
    pub curves: Vec<(Mode, Option<RDCurve>)>,
    pub bd_rates: Vec<BdRow>,
}

impl EvalReport {
    pub fn bd_rate(&self, mode: Mode) -> Option<f64> {
        self.bd_rates.iter().find(|r| r.mode == mode.name()).and_then(|r| r.bd_rate)
    }

    pub fn curve(&self, mode: Mode) -> Option<&RDCurve> {
        self.curves.iter().find(|c| c.0 == mode).and_then(|c| c.1.as_ref())
    }

    pub fn rows_for(&self, mode: Mode) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(move |r| r.mode == mode.name())
    }
}

/// Code the latents, decode the stream and score the decoder's output.
fn coded_row(
    id: &str,
    x: &Tensor,
    model: &CodecModel,
    latents: &LatentPair,
    lambda_index: usize,
    mode: Mode,
) -> Result<(EvalRow, EncodeOutput)> {
    let out = encode_latents(x, model, latents, EncodeOptions { shift: mode.shift(), lambda_index: lambda_index as u8 })?;
    let bytes = out.stream.to_bytes();
    let decoded = decode(&crate::codec::Bitstream::from_bytes(&bytes)?, model)?;
    let pixels = x.shape()[0] * x.shape()[1];
    let row = EvalRow {
        image_id: id.to_string(),
        lambda_index,
        lambda: model.lambda,
        mode: mode.name(),
        bytes: bytes.len(),
        bpp: 8.0 * bytes.len() as f64 / pixels as f64,
        psnr: psnr(x, &decoded.reconstruction)?,
        mse: crate::codec::mse(x, &decoded.reconstruction)?,
        rho_f_idx: out.stream.rho_f,
        rho_h_idx: out.stream.rho_h,
    };
    Ok((row, out))
}

/// Per-image fine-tuning seed, so results do not depend on job order.
fn finetune_seed(base: u64, image: usize, lambda_index: usize) -> u64 {
    base ^ ((image as u64) << 20) ^ (lambda_index as u64).wrapping_mul(0x9e37_79b9)
}

/// Curve through the per-λ means of one mode.
pub fn mean_curve(rows: &[&EvalRow], n_lambdas: usize) -> Result<RDCurve> {
    let points = (0..n_lambdas)
        .map(|k| {
            let at: Vec<_> = rows.iter().filter(|r| r.lambda_index == k).collect();
            if at.is_empty() {
                return Err(Error::Evaluation(format!("no results for lambda index {k}")));
            }
            let n = at.len() as f64;
            Ok(RDPoint {
                bpp: at.iter().map(|r| r.bpp).sum::<f64>() / n,
                psnr: at.iter().map(|r| r.psnr).sum::<f64>() / n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RDCurve::new(points)
}

pub fn evaluate(models: &[CodecModel], images: &[(String, Tensor)], opts: &EvalOptions) -> Result<EvalReport> {
    check_model_set(models)?;
    if images.is_empty() {
        return Err(Error::Argument("no evaluation images".into()));
    }
    let mut modes = opts.modes.clone();
    modes.sort();
    modes.dedup();
    let jobs: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|i| (0..models.len()).map(move |k| (i, k)))
        .collect();
    let per_job = par::map(&jobs, |&(i, k)| -> Result<Vec<EvalRow>> {
        let (id, x) = &images[i];
        let model = &models[k];
        let mut rows = Vec::new();
        let base = baseline_latents(x, model, &mut PassCounts::default())?;
        let tuned = if modes.iter().any(|m| m.finetuned()) {
            let cfg = FinetuneConfig { seed: finetune_seed(opts.finetune.seed, i, k), ..opts.finetune };
            Some(finetune_latents(x, model, &cfg)?.latents)
        } else {
            None
        };
        for &mode in &modes {
            let latents = if mode.finetuned() { tuned.as_ref().unwrap() } else { &base };
            rows.push(coded_row(id, x, model, latents, k, mode)?.0);
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_job {
        rows.extend(r?);
    }
    let curves: Vec<(Mode, Option<RDCurve>)> = modes
        .iter()
        .map(|&m| {
            let rs: Vec<&EvalRow> = rows.iter().filter(|r| r.mode == m.name()).collect();
            let c = if models.len() >= RDCurve::MIN_POINTS { mean_curve(&rs, models.len()).ok() } else { None };
            (m, c)
        })
        .collect();
    let reference = curves.iter().find(|c| c.0 == Mode::Baseline).and_then(|c| c.1.clone());
    let bd_rates = curves
        .iter()
        .map(|(m, c)| {
            let (bd, note) = match (&reference, c) {
                (Some(r), Some(c)) => match bd_rate(r, c) {
                    Ok(v) => (Some(v), String::new()),
                    Err(e) => (None, e.to_string()),
                },
                (None, _) => (None, "baseline curve unavailable".to_string()),
                (_, None) => (None, format!("fewer than {} lambda values or non-monotone curve", RDCurve::MIN_POINTS)),
            };
            BdRow { mode: m.name(), bd_rate: bd, note }
        })
        .collect();
    Ok(EvalReport { rows, curves, bd_rates })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftGainRow {
    pub image_id: String,
    pub lambda: f64,
    pub bpp_base: f64,
    pub bpp_shift: f64,
    pub psnr_base: f64,
    pub psnr_shift: f64,
    pub rho_f_idx: u8,
    pub rho_h_idx: u8,
    pub corr_side: Option<f64>,
    pub corr_main: Option<f64>,
    /// Estimated main-code bits saved by the side shift (never positive).
    #[serde(skip)]
    pub main_bits_delta: f64,
}

/// Baseline against shift for every image and λ.
pub fn shift_gain_report(models: &[CodecModel], images: &[(String, Tensor)]) -> Result<Vec<ShiftGainRow>> {
    check_model_set(models)?;
    let jobs: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|i| (0..models.len()).map(move |k| (i, k)))
        .collect();
    par::map(&jobs, |&(i, k)| -> Result<ShiftGainRow> {
        let (id, x) = &images[i];
        let model = &models[k];
        let latents = baseline_latents(x, model, &mut PassCounts::default())?;
        let (base, _) = coded_row(id, x, model, &latents, k, Mode::Baseline)?;
        let (shift, out) = coded_row(id, x, model, &latents, k, Mode::Shift)?;
        let corr = latent_correlations(model, x, &latents)?;
        Ok(ShiftGainRow {
            image_id: id.clone(),
            lambda: model.lambda,
            bpp_base: base.bpp,
            bpp_shift: shift.bpp,
            psnr_base: base.psnr,
            psnr_shift: shift.psnr,
            rho_f_idx: shift.rho_f_idx,
            rho_h_idx: shift.rho_h_idx,
            corr_side: corr.corr_side,
            corr_main: corr.corr_main,
            main_bits_delta: out.decision.map(|d| d.main_bits_delta).unwrap_or(0.0),
        })
    })
    .into_iter()
    .collect()
}
