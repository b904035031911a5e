//! Encode and decode pipelines with instrumented pass counters.

use std::ops::AddAssign;

use super::{Bitstream, CodecModel, LatentPair, QuantState, MAIN_DOWNSAMPLE, TOTAL_DOWNSAMPLE};
use crate::entropy::{discretize, DiscretePmf, GaussianConditional};
use crate::error::{Error, Result};
use crate::range_coder::{decode_symbols, encode_symbols};
use crate::shift::{self, shift_latent, ShiftDecision, STEP_TABLE};
use crate::tensor::Tensor;

/// Forward passes and gradient evaluations performed by a pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub analysis: u64,
    pub hyper_analysis: u64,
    pub hyper_synthesis: u64,
    pub synthesis: u64,
    pub gradients: u64,
}

impl AddAssign for PassCounts {
    fn add_assign(&mut self, o: Self) {
        self.analysis += o.analysis;
        self.hyper_analysis += o.hyper_analysis;
        self.hyper_synthesis += o.hyper_synthesis;
        self.synthesis += o.synthesis;
        self.gradients += o.gradients;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EncodeOptions {
    pub shift: bool,
    pub lambda_index: u8,
}

#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub stream: Bitstream,
    /// Rounded latents as transmitted.
    pub latents: LatentPair,
    /// Side latents the decoder conditions on (shifted when enabled).
    pub side_for_decoder: Tensor,
    /// Main latents the decoder synthesises from.
    pub main_for_decoder: Tensor,
    pub estimated_main_bits: f64,
    pub estimated_side_bits: f64,
    pub decision: Option<ShiftDecision>,
    /// Encoder-side reconstruction when the shift search produced one.
    pub reconstruction: Option<Tensor>,
    pub passes: PassCounts,
}

impl EncodeOutput {
    /// The encoder's own reconstruction, synthesising if needed.
    pub fn encoder_reconstruction(&self, model: &CodecModel) -> Result<Tensor> {
        match &self.reconstruction {
            Some(r) => Ok(r.clone()),
            None => model.synthesize(&self.main_for_decoder),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub reconstruction: Tensor,
    pub side: Tensor,
    pub main: Tensor,
    pub passes: PassCounts,
}

/// Rounded latents of the plain encoder.
pub fn baseline_latents(x: &Tensor, model: &CodecModel, counts: &mut PassCounts) -> Result<LatentPair> {
    model.check_image(x)?;
    let y = model.analyze(x)?;
    let z = model.hyper_analyze(&y)?;
    counts.analysis += 1;
    counts.hyper_analysis += 1;
    Ok(LatentPair::rounded(&y, &z))
}

pub fn encode(x: &Tensor, model: &CodecModel, opts: EncodeOptions) -> Result<EncodeOutput> {
    let mut counts = PassCounts::default();
    let latents = baseline_latents(x, model, &mut counts)?;
    let mut out = encode_latents(x, model, &latents, opts)?;
    out.passes += counts;
    Ok(out)
}

fn side_pmfs(model: &CodecModel) -> Result<Vec<DiscretePmf>> {
    (0..model.arch.hyper).map(|c| discretize(&model.factorized.density(c))).collect()
}

fn main_pmfs(gc: &GaussianConditional) -> Result<Vec<DiscretePmf>> {
    (0..gc.mean.len()).map(|i| discretize(&gc.density(i))).collect()
}

fn symbols(t: &Tensor) -> Result<Vec<i64>> {
    t.data()
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || v.abs() > i64::MAX as f64 / 2.0 {
                Err(Error::Argument(format!("latent {v} is not an integer symbol")))
            } else {
                Ok(v as i64)
            }
        })
        .collect()
}

/// Entropy code already-quantised latents, optionally searching shifts.
pub fn encode_latents(
    x: &Tensor,
    model: &CodecModel,
    latents: &LatentPair,
    opts: EncodeOptions,
) -> Result<EncodeOutput> {
    let (h, w) = model.check_image(x)?;
    if !latents.is_integral() {
        return Err(Error::Argument("latents must be rounded before coding".into()));
    }
    let mut passes = PassCounts::default();
    let (y_hat, z_hat) = (&latents.y, &latents.z);
    let base = model.hyper_synthesize(z_hat)?;
    passes.hyper_synthesis += 1;

    let (conditional, side_for_decoder, main_for_decoder, decision, reconstruction, rho_f, rho_h) =
        if opts.shift {
            let side = shift::select_rho_f(y_hat, z_hat, model, &mut passes)?;
            let main = shift::select_rho_h(x, y_hat, &side.conditional, model, &mut passes)?;
            let decision = ShiftDecision {
                rho_f_index: side.index,
                rho_h_index: main.index,
                main_bits_delta: side.main_bits[side.index as usize] - side.main_bits[0],
                distortion_delta: main.distortion[main.index as usize] - main.distortion[0],
            };
            (
                side.conditional,
                side.shifted,
                main.shifted,
                Some(decision),
                Some(main.reconstruction),
                side.index,
                main.index,
            )
        } else {
            (base, z_hat.clone(), y_hat.clone(), None, None, 0, 0)
        };

    let spmfs = side_pmfs(model)?;
    let f = model.arch.hyper;
    let side_tables: Vec<&DiscretePmf> = (0..z_hat.len()).map(|i| &spmfs[i % f]).collect();
    let side = encode_symbols(&symbols(z_hat)?, &side_tables)?;
    let main = encode_symbols(&symbols(y_hat)?, &main_pmfs(&conditional)?)?;
    let estimated_main_bits = conditional.bits(y_hat)?.bits;
    let estimated_side_bits = model.factorized.bits(z_hat)?.bits;
    let dim = |v: usize| u16::try_from(v).map_err(|_| Error::Argument(format!("image side {v} exceeds 65535")));
    Ok(EncodeOutput {
        stream: Bitstream {
            width: dim(w)?,
            height: dim(h)?,
            lambda_index: opts.lambda_index,
            rho_f,
            rho_h,
            side,
            main,
        },
        latents: LatentPair {
            y: y_hat.clone(),
            z: z_hat.clone(),
            state: QuantState::Rounded,
        },
        side_for_decoder,
        main_for_decoder,
        estimated_main_bits,
        estimated_side_bits,
        decision,
        reconstruction,
        passes,
    })
}

/// Decode a stream. Uses nothing but the stream and the model.
pub fn decode(stream: &Bitstream, model: &CodecModel) -> Result<DecodeOutput> {
    let rho_f = STEP_TABLE.step(stream.rho_f)?;
    let rho_h = STEP_TABLE.step(stream.rho_h)?;
    let (h, w) = (stream.height as usize, stream.width as usize);
    if h == 0 || w == 0 || h % TOTAL_DOWNSAMPLE != 0 || w % TOTAL_DOWNSAMPLE != 0 {
        return Err(Error::Format(format!("invalid image size {w}x{h}")));
    }
    let mut passes = PassCounts::default();
    let f = model.arch.hyper;
    let zshape = [h / TOTAL_DOWNSAMPLE, w / TOTAL_DOWNSAMPLE, f];
    let spmfs = side_pmfs(model)?;
    let n_side = zshape.iter().product::<usize>();
    let side_tables: Vec<&DiscretePmf> = (0..n_side).map(|i| &spmfs[i % f]).collect();
    let z_sym = decode_symbols(&stream.side, &side_tables)?;
    let z_hat = Tensor::new(zshape.to_vec(), z_sym.into_iter().map(|s| s as f64).collect())?;

    let side = if rho_f != 0.0 {
        passes.gradients += 1;
        let g = model.factorized.grad_bits_wrt_latents(&z_hat)?.grad;
        shift_latent(&z_hat, &g, rho_f)?
    } else {
        z_hat
    };
    let gc = model.hyper_synthesize(&side)?;
    passes.hyper_synthesis += 1;
    let yshape = [h / MAIN_DOWNSAMPLE, w / MAIN_DOWNSAMPLE, model.arch.latent];
    gc.mean.ensure_shape(&yshape)?;
    let y_sym = decode_symbols(&stream.main, &main_pmfs(&gc)?)?;
    let y_hat = Tensor::new(yshape.to_vec(), y_sym.into_iter().map(|s| s as f64).collect())?;
    let main = if rho_h != 0.0 {
        passes.gradients += 1;
        let g = gc.grad_bits_wrt_latents(&y_hat)?.grad;
        shift_latent(&y_hat, &g, rho_h)?
    } else {
        y_hat
    };
    let reconstruction = model.synthesize(&main)?;
    passes.synthesis += 1;
    Ok(DecodeOutput {
        reconstruction,
        side,
        main,
        passes,
    })
}
