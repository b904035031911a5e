//! Single-threaded timing and pass counting of the coding modes.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::codec::{
    baseline_latents, decode, encode, encode_latents, finetune_latents, Bitstream, CodecModel, EncodeOptions,
    FinetuneConfig, PassCounts,
};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityRecord {
    /// Shift encode time over baseline encode time.
    pub shift_encode_ratio: f64,
    /// Fine-tune encode time over baseline encode time.
    pub finetune_encode_ratio: f64,
    /// Extra decode time of shifted streams, in percent of baseline decode.
    pub decode_overhead_percent: f64,
    pub finetune_iterations: usize,
    #[serde(skip)]
    pub baseline_encode: PassCounts,
    #[serde(skip)]
    pub shift_encode: PassCounts,
    #[serde(skip)]
    pub finetune_encode: PassCounts,
    #[serde(skip)]
    pub baseline_decode: PassCounts,
    #[serde(skip)]
    pub shift_decode: PassCounts,
    pub baseline_encode_secs: f64,
    pub shift_encode_secs: f64,
    pub finetune_encode_secs: f64,
    pub baseline_decode_secs: f64,
    pub shift_decode_secs: f64,
}

fn min_time<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<Duration> {
    let mut best = Duration::MAX;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed());
    }
    Ok(best)
}

/// Run every mode on `images` inside a one-thread pool.
///
/// Encode and decode times are the best of `reps` repetitions summed over
/// images; the slow fine-tune encode runs once.
pub fn measure_complexity(
    model: &CodecModel,
    images: &[Tensor],
    finetune: &FinetuneConfig,
    reps: usize,
) -> Result<ComplexityRecord> {
    if images.is_empty() {
        return Err(Error::Argument("no images to measure".into()));
    }
    par::single_threaded(|| measure_inner(model, images, finetune, reps))
}

fn measure_inner(model: &CodecModel, images: &[Tensor], finetune: &FinetuneConfig, reps: usize) -> Result<ComplexityRecord> {
    let mut rec = ComplexityRecord {
        shift_encode_ratio: 0.0,
        finetune_encode_ratio: 0.0,
        decode_overhead_percent: 0.0,
        finetune_iterations: finetune.iterations,
        baseline_encode: PassCounts::default(),
        shift_encode: PassCounts::default(),
        finetune_encode: PassCounts::default(),
        baseline_decode: PassCounts::default(),
        shift_decode: PassCounts::default(),
        baseline_encode_secs: 0.0,
        shift_encode_secs: 0.0,
        finetune_encode_secs: 0.0,
        baseline_decode_secs: 0.0,
        shift_decode_secs: 0.0,
    };
    let base_opts = EncodeOptions { shift: false, lambda_index: 0 };
    let shift_opts = EncodeOptions { shift: true, lambda_index: 0 };
    let mut streams: Vec<(Bitstream, Bitstream)> = Vec::new();
    for x in images {
        let b = encode(x, model, base_opts)?;
        let s = encode(x, model, shift_opts)?;
        rec.baseline_encode += b.passes;
        rec.shift_encode += s.passes;
        streams.push((b.stream, s.stream));
    }
    // Interleave the timed runs so drift in machine load hits both sides.
    let (mut tb, mut ts, mut db, mut ds) = (Duration::ZERO, Duration::ZERO, Duration::ZERO, Duration::ZERO);
    for (x, (bs, ss)) in images.iter().zip(&streams) {
        tb += min_time(reps, || encode(x, model, base_opts).map(drop))?;
        ts += min_time(reps, || encode(x, model, shift_opts).map(drop))?;
        db += min_time(reps, || decode(bs, model).map(drop))?;
        ds += min_time(reps, || decode(ss, model).map(drop))?;
        rec.baseline_decode += decode(bs, model)?.passes;
        rec.shift_decode += decode(ss, model)?.passes;
    }
    let mut tf = Duration::ZERO;
    for x in images {
        let t = Instant::now();
        let mut counts = PassCounts::default();
        baseline_latents(x, model, &mut counts)?;
        let tuned = finetune_latents(x, model, finetune)?;
        let out = encode_latents(x, model, &tuned.latents, base_opts)?;
        tf += t.elapsed();
        rec.finetune_encode += counts;
        rec.finetune_encode += tuned.passes;
        rec.finetune_encode += out.passes;
    }
    rec.baseline_encode_secs = tb.as_secs_f64();
    rec.shift_encode_secs = ts.as_secs_f64();
    rec.finetune_encode_secs = tf.as_secs_f64();
    rec.baseline_decode_secs = db.as_secs_f64();
    rec.shift_decode_secs = ds.as_secs_f64();
    rec.shift_encode_ratio = rec.shift_encode_secs / rec.baseline_encode_secs;
    rec.finetune_encode_ratio = rec.finetune_encode_secs / rec.baseline_encode_secs;
    rec.decode_overhead_percent = 100.0 * (rec.shift_decode_secs / rec.baseline_decode_secs - 1.0);
    Ok(rec)
}
