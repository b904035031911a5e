//! Analysis/synthesis transforms, the hyperprior, and the rate-distortion
//! loss together with every gradient route the rest of the crate needs.
//!
//! Rate terms are total bits. The distortion is the MSE on `[0, 1]` pixels
//! and enters the loss with weight `lambda * 255^2 * pixels`, so the loss
//! divided by the pixel count reads as `bpp + lambda * MSE_255`.

mod bitstream;
mod finetune;
mod pipeline;
mod train;

pub use bitstream::{Bitstream, FORMAT_VERSION, HEADER_BYTES, STREAM_MAGIC};
pub use finetune::{finetune_latents, FinetuneConfig, FinetuneOutcome, Relaxation};
pub use pipeline::{
    baseline_latents, decode, encode, encode_latents, DecodeOutput, EncodeOptions, EncodeOutput,
    PassCounts,
};
pub use train::{train, TrainConfig, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, Record, RecordKind};
use crate::entropy::{BitCount, ConditionalGrads, FactorizedGrads, FactorizedModel, GaussianConditional};
use crate::error::{Error, Result};
use crate::layers::{LayerGrads, LayerKind, LayerParams, Sequential};
use crate::tensor::Tensor;

/// Spatial reduction of the main latents.
pub const MAIN_DOWNSAMPLE: usize = 8;
/// Spatial reduction of the side latents relative to the image.
pub const TOTAL_DOWNSAMPLE: usize = 32;
const KERNEL: usize = 4;

/// Channel widths of the four transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    /// Hidden widths of the analysis stack (mirrored by synthesis).
    pub hidden: [usize; 2],
    /// Main latent channels `o`.
    pub latent: usize,
    /// Side latent channels `f`.
    pub hyper: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: [32, 64],
            latent: 64,
            hyper: 32,
        }
    }
}

impl Architecture {
    /// Reduced widths used by the test suites.
    pub fn tiny() -> Self {
        Architecture {
            hidden: [12, 16],
            latent: 16,
            hyper: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Round,
    Noise,
}

/// Element-wise quantisation. `Round` rounds half to even; `Noise` adds
/// i.i.d. `U(-1/2, 1/2)` drawn from `rng`.
pub fn quantize<R: Rng>(y: &Tensor, mode: QuantMode, rng: &mut R) -> Tensor {
    match mode {
        QuantMode::Round => round(y),
        QuantMode::Noise => Tensor::from_fn(y.shape(), |i| y.data()[i] + rng.gen_range(-0.5..0.5)),
    }
}

/// Round half to even; negative zero is normalised to zero so that the
/// encoder and the decoder see bit-identical values.
pub fn round(y: &Tensor) -> Tensor {
    y.map(|v| v.round_ties_even() + 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantState {
    Continuous,
    Rounded,
    Shifted,
}

/// Main and side latents with their quantisation state.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub y: Tensor,
    pub z: Tensor,
    pub state: QuantState,
}

impl LatentPair {
    pub fn rounded(y: &Tensor, z: &Tensor) -> Self {
        LatentPair {
            y: round(y),
            z: round(z),
            state: QuantState::Rounded,
        }
    }

    pub fn is_integral(&self) -> bool {
        self.y.data().iter().chain(self.z.data()).all(|v| v.fract() == 0.0)
    }
}

/// The components of the rate-distortion loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub main_bits: f64,
    pub side_bits: f64,
    /// MSE on `[0, 1]` pixels.
    pub distortion: f64,
    /// Multiplier on `distortion` in `total`.
    pub weight: f64,
    pub total: f64,
    pub saturated: usize,
}

impl LossTerms {
    fn new(main: BitCount, side: BitCount, distortion: f64, weight: f64) -> Result<Self> {
        let t = LossTerms {
            main_bits: main.bits,
            side_bits: side.bits,
            distortion,
            weight,
            total: main.bits + side.bits + weight * distortion,
            saturated: main.saturated + side.saturated,
        };
        for (name, v) in [
            ("main bits", t.main_bits),
            ("side bits", t.side_bits),
            ("distortion", t.distortion),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Training {
                    component: name.into(),
                    message: format!("value {v}"),
                });
            }
        }
        Ok(t)
    }

    pub fn bits(&self) -> f64 {
        self.main_bits + self.side_bits
    }
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

fn mse_grad(xhat: &Tensor, x: &Tensor) -> Result<Tensor> {
    let n = x.len() as f64;
    xhat.zip_map(x, |a, b| 2.0 * (a - b) / n)
}

/// Gradients of every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub analysis: Vec<LayerGrads>,
    pub synthesis: Vec<LayerGrads>,
    pub hyper_analysis: Vec<LayerGrads>,
    pub hyper_synthesis: Vec<LayerGrads>,
    pub factorized: FactorizedGrads,
}

impl ModelGrads {
    fn add_assign(&mut self, o: &ModelGrads) -> Result<()> {
        for (a, b) in self
            .analysis
            .iter_mut()
            .chain(&mut self.synthesis)
            .chain(&mut self.hyper_analysis)
            .chain(&mut self.hyper_synthesis)
            .zip(
                o.analysis
                    .iter()
                    .chain(&o.synthesis)
                    .chain(&o.hyper_analysis)
                    .chain(&o.hyper_synthesis),
            )
        {
            a.add_assign(b)?;
        }
        for (a, b) in self.factorized.loc.iter_mut().zip(&o.factorized.loc) {
            *a += b;
        }
        for (a, b) in self.factorized.log_scale.iter_mut().zip(&o.factorized.log_scale) {
            *a += b;
        }
        Ok(())
    }

    fn scale(&mut self, s: f64) {
        for g in self
            .analysis
            .iter_mut()
            .chain(&mut self.synthesis)
            .chain(&mut self.hyper_analysis)
            .chain(&mut self.hyper_synthesis)
        {
            g.scale(s);
        }
        self.factorized.loc.iter_mut().for_each(|v| *v *= s);
        self.factorized.log_scale.iter_mut().for_each(|v| *v *= s);
    }
}

/// Gradient pairs that enter the two stationarity conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityTerms {
    /// Side-code bits w.r.t. side latents.
    pub side_rate_wrt_z: Tensor,
    /// Main-code bits w.r.t. side latents, through the hyper-synthesis.
    pub main_rate_wrt_z: Tensor,
    /// Main-code bits w.r.t. main latents.
    pub main_rate_wrt_y: Tensor,
    /// Weighted distortion w.r.t. main latents.
    pub distortion_wrt_y: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub arch: Architecture,
    pub analysis: Sequential,
    pub synthesis: Sequential,
    pub hyper_analysis: Sequential,
    pub hyper_synthesis: Sequential,
    pub factorized: FactorizedModel,
    pub lambda: f64,
}

fn conv(c_in: usize, c_out: usize, gain: f64, rng: &mut ChaCha8Rng) -> Result<LayerParams> {
    LayerParams::init(LayerKind::Conv, c_in, c_out, KERNEL, 2, 1, gain, rng)
}

fn tconv(c_in: usize, c_out: usize, gain: f64, rng: &mut ChaCha8Rng) -> Result<LayerParams> {
    LayerParams::init(LayerKind::TransposedConv, c_in, c_out, KERNEL, 2, 1, gain, rng)
}

impl CodecModel {
    pub fn new(arch: Architecture, lambda: f64, seed: u64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Argument(format!("lambda {lambda} must be positive")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [n1, n2] = arch.hidden;
        let (o, f) = (arch.latent, arch.hyper);
        let act = LayerParams::activation;
        let analysis = Sequential::new(vec![
            conv(3, n1, 1.0, &mut rng)?,
            act(),
            conv(n1, n2, 1.0, &mut rng)?,
            act(),
            conv(n2, o, 1.0, &mut rng)?,
        ]);
        let synthesis = Sequential::new(vec![
            tconv(o, n2, 1.0, &mut rng)?,
            act(),
            tconv(n2, n1, 1.0, &mut rng)?,
            act(),
            tconv(n1, 3, 0.5, &mut rng)?,
        ]);
        let hyper_analysis = Sequential::new(vec![conv(o, f, 1.0, &mut rng)?, act(), conv(f, f, 1.0, &mut rng)?]);
        let hyper_synthesis = Sequential::new(vec![
            tconv(f, f, 1.0, &mut rng)?,
            act(),
            tconv(f, 2 * o, 0.1, &mut rng)?,
        ]);
        let model = CodecModel {
            arch,
            analysis,
            synthesis,
            hyper_analysis,
            hyper_synthesis,
            factorized: FactorizedModel::new(f),
            lambda,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let out = |s: &Sequential| s.layers.iter().rev().find(|l| l.kind != LayerKind::Activation).map(|l| l.out_channels());
        let inp = |s: &Sequential| s.layers.iter().find(|l| l.kind != LayerKind::Activation).map(|l| l.in_channels());
        let o = self.arch.latent;
        let f = self.arch.hyper;
        let ok = out(&self.analysis) == Some(o)
            && inp(&self.analysis) == Some(3)
            && inp(&self.synthesis) == Some(o)
            && out(&self.synthesis) == Some(3)
            && inp(&self.hyper_analysis) == Some(o)
            && out(&self.hyper_analysis) == Some(f)
            && inp(&self.hyper_synthesis) == Some(f)
            && out(&self.hyper_synthesis) == Some(2 * o)
            && self.factorized.channels() == f;
        if !ok {
            return Err(Error::Argument("inconsistent transform channel counts".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Argument(format!("lambda {} must be positive", self.lambda)));
        }
        Ok(())
    }

    pub fn distortion_weight(&self, pixels: usize) -> f64 {
        self.lambda * 255.0 * 255.0 * pixels as f64
    }

    pub fn check_image(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (h, w, c) = x.hwc()?;
        if c != 3 || h == 0 || w == 0 || h % TOTAL_DOWNSAMPLE != 0 || w % TOTAL_DOWNSAMPLE != 0 {
            return Err(Error::Argument(format!(
                "image {h}x{w}x{c} must be RGB with sides a multiple of {TOTAL_DOWNSAMPLE}"
            )));
        }
        Ok((h, w))
    }

    pub fn analyze(&self, x: &Tensor) -> Result<Tensor> {
        self.analysis.forward(x)
    }

    pub fn hyper_analyze(&self, y: &Tensor) -> Result<Tensor> {
        self.hyper_analysis.forward(y)
    }

    pub fn hyper_synthesize(&self, z: &Tensor) -> Result<GaussianConditional> {
        GaussianConditional::from_hyper_output(&self.hyper_synthesis.forward(z)?)
    }

    pub fn synthesize(&self, y: &Tensor) -> Result<Tensor> {
        self.synthesis.forward(y)
    }

    /// Loss of fixed latents, with no quantisation applied here.
    pub fn loss_at(&self, x: &Tensor, y: &Tensor, z: &Tensor) -> Result<LossTerms> {
        let gc = self.hyper_synthesize(z)?;
        let xhat = self.synthesize(y)?;
        LossTerms::new(
            gc.bits(y)?,
            self.factorized.bits(z)?,
            mse(x, &xhat)?,
            self.distortion_weight(x.shape()[0] * x.shape()[1]),
        )
    }

    /// Rate-distortion loss of an image under the given quantisation.
    pub fn loss<R: Rng>(&self, x: &Tensor, mode: QuantMode, rng: &mut R) -> Result<LossTerms> {
        self.check_image(x)?;
        let y = self.analyze(x)?;
        let z = self.hyper_analyze(&y)?;
        let zq = quantize(&z, mode, rng);
        let yq = quantize(&y, mode, rng);
        self.loss_at(x, &yq, &zq)
    }

    /// Gradient of the main-code bits w.r.t. the side latents.
    pub fn grad_main_bits_wrt_side(&self, y: &Tensor, z: &Tensor) -> Result<Tensor> {
        let (raw, trace) = self.hyper_synthesis.forward_traced(z)?;
        let gc = GaussianConditional::from_hyper_output(&raw)?;
        let (_, g) = gc.bits_and_grads(y)?;
        let g_raw = gc.grad_to_hyper_output(&raw, &g.mean, &g.scale)?;
        self.hyper_synthesis.backward_input(&trace, &g_raw)
    }

    /// Gradient of `weight * MSE(x, g_s(y))` w.r.t. `y`, plus the reconstruction.
    pub fn grad_distortion_wrt_main(&self, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)> {
        let (xhat, trace) = self.synthesis.forward_traced(y)?;
        let w = self.distortion_weight(x.shape()[0] * x.shape()[1]);
        let g = mse_grad(&xhat, x)?.scale(w);
        Ok((self.synthesis.backward_input(&trace, &g)?, xhat))
    }

    pub fn stationarity_terms(&self, x: &Tensor, y: &Tensor, z: &Tensor) -> Result<StationarityTerms> {
        let side_rate_wrt_z = self.factorized.grad_bits_wrt_latents(z)?.grad;
        let main_rate_wrt_z = self.grad_main_bits_wrt_side(y, z)?;
        let gc = self.hyper_synthesize(z)?;
        let main_rate_wrt_y = gc.grad_bits_wrt_latents(y)?.grad;
        let (distortion_wrt_y, _) = self.grad_distortion_wrt_main(x, y)?;
        Ok(StationarityTerms {
            side_rate_wrt_z,
            main_rate_wrt_z,
            main_rate_wrt_y,
            distortion_wrt_y,
        })
    }

    /// Loss at fixed latents with its gradients w.r.t. both latents.
    pub fn loss_and_latent_grads(&self, x: &Tensor, y: &Tensor, z: &Tensor) -> Result<(LossTerms, Tensor, Tensor)> {
        let (raw, htrace) = self.hyper_synthesis.forward_traced(z)?;
        let gc = GaussianConditional::from_hyper_output(&raw)?;
        let (main, cg) = gc.bits_and_grads(y)?;
        let (side, gz_side, _) = self.factorized.bits_and_grads(z)?;
        let g_raw = gc.grad_to_hyper_output(&raw, &cg.mean, &cg.scale)?;
        let gz = self.hyper_synthesis.backward_input(&htrace, &g_raw)?.add(&gz_side)?;
        let (xhat, strace) = self.synthesis.forward_traced(y)?;
        let w = self.distortion_weight(x.shape()[0] * x.shape()[1]);
        let gy = self
            .synthesis
            .backward_input(&strace, &mse_grad(&xhat, x)?.scale(w))?
            .add(&cg.latents)?;
        let terms = LossTerms::new(main, side, mse(x, &xhat)?, w)?;
        Ok((terms, gy, gz))
    }

    /// Noisy-proxy loss of one image and the gradient of every parameter.
    pub fn loss_and_param_grads<R: Rng>(&self, x: &Tensor, mode: QuantMode, rng: &mut R) -> Result<(LossTerms, ModelGrads)> {
        let (y, atrace) = self.analysis.forward_traced(x)?;
        let (z, hatrace) = self.hyper_analysis.forward_traced(&y)?;
        let zq = quantize(&z, mode, rng);
        let yq = quantize(&y, mode, rng);
        let (raw, hstrace) = self.hyper_synthesis.forward_traced(&zq)?;
        let gc = GaussianConditional::from_hyper_output(&raw)?;
        let (main, cg): (BitCount, ConditionalGrads) = gc.bits_and_grads(&yq)?;
        let (side, gz_side, fgrads) = self.factorized.bits_and_grads(&zq)?;
        let (xhat, strace) = self.synthesis.forward_traced(&yq)?;
        let w = self.distortion_weight(x.shape()[0] * x.shape()[1]);
        let terms = LossTerms::new(main, side, mse(x, &xhat)?, w)?;

        let (gy_dist, synthesis) = self.synthesis.backward(&strace, &mse_grad(&xhat, x)?.scale(w))?;
        let g_raw = gc.grad_to_hyper_output(&raw, &cg.mean, &cg.scale)?;
        let (gz_main, hyper_synthesis) = self.hyper_synthesis.backward(&hstrace, &g_raw)?;
        let gz = gz_main.add(&gz_side)?;
        let (gy_hyper, hyper_analysis) = self.hyper_analysis.backward(&hatrace, &gz)?;
        let gy = gy_dist.add(&cg.latents)?.add(&gy_hyper)?;
        let (_, analysis) = self.analysis.backward(&atrace, &gy)?;
        Ok((
            terms,
            ModelGrads {
                analysis,
                synthesis,
                hyper_analysis,
                hyper_synthesis,
                factorized: fgrads,
            },
        ))
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            analysis: self.analysis.zero_grads(),
            synthesis: self.synthesis.zero_grads(),
            hyper_analysis: self.hyper_analysis.zero_grads(),
            hyper_synthesis: self.hyper_synthesis.zero_grads(),
            factorized: FactorizedGrads {
                loc: vec![0.0; self.arch.hyper],
                log_scale: vec![0.0; self.arch.hyper],
            },
        }
    }

    pub fn param_count(&self) -> usize {
        self.analysis.param_count()
            + self.synthesis.param_count()
            + self.hyper_analysis.param_count()
            + self.hyper_synthesis.param_count()
            + 2 * self.arch.hyper
    }

    fn stacks(&self) -> [&Sequential; 4] {
        [&self.analysis, &self.synthesis, &self.hyper_analysis, &self.hyper_synthesis]
    }

    /// Serialise to the checkpoint format.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        for s in self.stacks() {
            out.push(Record {
                kind: RecordKind::Scalars,
                stride: 0,
                padding: 0,
                weights: Tensor::new(vec![1], vec![s.layers.len() as f64]).expect("scalar"),
                bias: Tensor::empty(),
            });
            out.extend(s.layers.iter().map(Record::from_layer));
        }
        let f = self.arch.hyper;
        out.push(Record {
            kind: RecordKind::Density,
            stride: 0,
            padding: 0,
            weights: Tensor::new(vec![f], self.factorized.loc.clone()).expect("loc"),
            bias: Tensor::new(vec![f], self.factorized.log_scale.clone()).expect("log scale"),
        });
        out.push(Record {
            kind: RecordKind::Scalars,
            stride: 1,
            padding: 0,
            weights: Tensor::new(vec![1], vec![self.lambda]).expect("lambda"),
            bias: Tensor::empty(),
        });
        out
    }

    pub fn from_records(records: &[Record]) -> Result<Self> {
        let mut it = records.iter();
        let mut stacks = Vec::with_capacity(4);
        for _ in 0..4 {
            let head = it.next().ok_or_else(|| Error::Format("checkpoint ends before a stack".into()))?;
            if head.kind != RecordKind::Scalars || head.weights.len() != 1 {
                return Err(Error::Format("expected stack length record".into()));
            }
            let n = head.weights.data()[0] as usize;
            let mut layers = Vec::with_capacity(n);
            for _ in 0..n {
                let r = it.next().ok_or_else(|| Error::Format("checkpoint ends inside a stack".into()))?;
                layers.push(r.to_layer()?);
            }
            if layers.is_empty() {
                return Err(Error::Format("empty stack".into()));
            }
            stacks.push(Sequential::new(layers));
        }
        let dens = it.next().filter(|r| r.kind == RecordKind::Density).ok_or_else(|| Error::Format("missing density record".into()))?;
        let lam = it.next().filter(|r| r.kind == RecordKind::Scalars && r.weights.len() == 1).ok_or_else(|| Error::Format("missing lambda record".into()))?;
        let mut stacks = stacks.into_iter();
        let analysis = stacks.next().expect("four stacks");
        let synthesis = stacks.next().expect("four stacks");
        let hyper_analysis = stacks.next().expect("four stacks");
        let hyper_synthesis = stacks.next().expect("four stacks");
        let conv_layers = |s: &Sequential| s.layers.iter().filter(|l| l.kind != LayerKind::Activation).map(|l| l.out_channels()).collect::<Vec<_>>();
        let a = conv_layers(&analysis);
        if a.len() != 3 {
            return Err(Error::Format("analysis must have three convolutions".into()));
        }
        let arch = Architecture {
            hidden: [a[0], a[1]],
            latent: a[2],
            hyper: dens.weights.len(),
        };
        let model = CodecModel {
            arch,
            analysis,
            synthesis,
            hyper_analysis,
            hyper_synthesis,
            factorized: FactorizedModel {
                loc: dens.weights.data().to_vec(),
                log_scale: dens.bias.data().to_vec(),
            },
            lambda: lam.weights.data()[0],
        };
        model.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        checkpoint::write(&mut f, &self.to_records())?;
        use std::io::Write;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_records(&checkpoint::read(&mut f)?)
    }

    /// Trainable tensors in a fixed order, with names for diagnostics.
    fn params_mut(&mut self) -> (Vec<&mut Tensor>, Vec<String>) {
        let mut params = Vec::new();
        let mut names = Vec::new();
        for (label, s) in [
            ("g_a", &mut self.analysis),
            ("g_s", &mut self.synthesis),
            ("h_a", &mut self.hyper_analysis),
            ("h_s", &mut self.hyper_synthesis),
        ] {
            for (i, l) in s.layers.iter_mut().enumerate() {
                if l.kind == LayerKind::Activation {
                    continue;
                }
                names.push(format!("{label}.{i}.weights"));
                names.push(format!("{label}.{i}.bias"));
                params.push(&mut l.weights);
                params.push(&mut l.bias);
            }
        }
        (params, names)
    }
}

fn grads_in_order(g: &ModelGrads, model: &CodecModel) -> Vec<Tensor> {
    let mut out = Vec::new();
    for (s, gs) in model.stacks().into_iter().zip([&g.analysis, &g.synthesis, &g.hyper_analysis, &g.hyper_synthesis]) {
        for (l, lg) in s.layers.iter().zip(gs) {
            if l.kind == LayerKind::Activation {
                continue;
            }
            out.push(lg.weights.clone());
            out.push(lg.bias.clone());
        }
    }
    out
}
