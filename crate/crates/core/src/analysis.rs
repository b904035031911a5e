//! Stationarity residuals and gradient correlation statistics.
//!
//! At a rate-distortion optimum the gradients of the competing terms cancel
//! in expectation: side rate against main rate w.r.t. `z`, and main rate
//! against weighted distortion w.r.t. `y`. This module measures how far a
//! model is from that and how strongly the per-image gradients oppose each
//! other.

use crate::codec::{baseline_latents, encode_latents, CodecModel, EncodeOptions, LatentPair, PassCounts, StationarityTerms};
use crate::error::{Error, Result};
use crate::harness::metrics::psnr;
use crate::par;
use crate::tensor::Tensor;

/// Pearson correlation of two equally shaped tensors, flattened.
pub fn pearson(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation(format!("{n} samples")));
    }
    let ma = a.data().iter().sum::<f64>() / n as f64;
    let mb = b.data().iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0) || !(sbb > 0.0) {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    if !sab.is_finite() || !saa.is_finite() || !sbb.is_finite() {
        return Err(Error::UndefinedCorrelation("non-finite input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn pearson_opt(a: &Tensor, b: &Tensor) -> Result<Option<f64>> {
    match pearson(a, b) {
        Ok(r) => Ok(Some(r)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Side and main gradient correlations of one image at given latents.
/// `None` marks an undefined correlation (a constant gradient).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCorrelation {
    pub corr_side: Option<f64>,
    pub corr_main: Option<f64>,
}

impl GradientCorrelation {
    pub fn from_terms(t: &StationarityTerms) -> Result<Self> {
        Ok(GradientCorrelation {
            corr_side: pearson_opt(&t.side_rate_wrt_z, &t.main_rate_wrt_z)?,
            corr_main: pearson_opt(&t.main_rate_wrt_y, &t.distortion_wrt_y)?,
        })
    }
}

/// Correlations at arbitrary latents (e.g. after fine-tuning).
pub fn latent_correlations(model: &CodecModel, x: &Tensor, latents: &LatentPair) -> Result<GradientCorrelation> {
    GradientCorrelation::from_terms(&model.stationarity_terms(x, &latents.y, &latents.z)?)
}

#[derive(Debug, Clone)]
pub struct KKTReport {
    /// Normalised residual of the side-latent condition.
    pub residual_z: f64,
    /// Normalised residual of the main-latent condition.
    pub residual_y: f64,
    pub samples: usize,
    pub per_image: Vec<StationarityTerms>,
}

fn mean_of(ts: impl Iterator<Item = Tensor>, n: usize) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for t in ts {
        acc = Some(match acc {
            None => t,
            Some(a) => a.add(&t)?,
        });
    }
    acc.map(|a| a.scale(1.0 / n as f64))
        .ok_or_else(|| Error::Argument("no samples".into()))
}

/// `||mean(a + b)|| / (0.5 * (mean ||a|| + mean ||b||))`; zero when both terms vanish.
fn normalised_residual(a: &[&Tensor], b: &[&Tensor]) -> Result<f64> {
    let n = a.len();
    let sum = mean_of(a.iter().zip(b).map(|(x, y)| x.add(y)).collect::<Result<Vec<_>>>()?.into_iter(), n)?;
    let mag = 0.5 * (a.iter().map(|t| t.norm()).sum::<f64>() + b.iter().map(|t| t.norm()).sum::<f64>()) / n as f64;
    if mag == 0.0 {
        return Ok(0.0);
    }
    Ok(sum.norm() / mag)
}

/// Residuals over `samples`, each an image with the latents to evaluate at.
/// Latent shapes must agree across samples.
pub fn kkt_residuals_at(model: &CodecModel, samples: &[(&Tensor, &LatentPair)]) -> Result<KKTReport> {
    if samples.is_empty() {
        return Err(Error::Argument("kkt residuals need at least one image".into()));
    }
    let per_image = par::map(samples, |(x, l)| model.stationarity_terms(x, &l.y, &l.z))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let side: Vec<&Tensor> = per_image.iter().map(|t| &t.side_rate_wrt_z).collect();
    let main_z: Vec<&Tensor> = per_image.iter().map(|t| &t.main_rate_wrt_z).collect();
    let main_y: Vec<&Tensor> = per_image.iter().map(|t| &t.main_rate_wrt_y).collect();
    let dist: Vec<&Tensor> = per_image.iter().map(|t| &t.distortion_wrt_y).collect();
    Ok(KKTReport {
        residual_z: normalised_residual(&side, &main_z)?,
        residual_y: normalised_residual(&main_y, &dist)?,
        samples: samples.len(),
        per_image,
    })
}

/// Residuals at each image's rounded encoder latents.
pub fn kkt_residuals(model: &CodecModel, dataset: &[Tensor]) -> Result<KKTReport> {
    if dataset.is_empty() {
        return Err(Error::Argument("kkt residuals need at least one image".into()));
    }
    let latents = par::map(dataset, |x| baseline_latents(x, model, &mut PassCounts::default()))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<(&Tensor, &LatentPair)> = dataset.iter().zip(&latents).collect();
    kkt_residuals_at(model, &samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRecord {
    pub image_id: String,
    pub lambda: f64,
    pub corr_side: Option<f64>,
    pub corr_main: Option<f64>,
    /// PSNR gained by the main-latent shift.
    pub gain_db: f64,
}

impl CorrelationRecord {
    /// Records with an undefined main correlation stay out of aggregates.
    pub fn flagged(&self) -> bool {
        self.corr_main.is_none()
    }
}

pub const HISTOGRAM_BIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Fixed-width bins covering `[-1, 1]`; `1.0` falls in the last bin.
pub fn correlation_histogram(values: &[f64]) -> Vec<HistogramBin> {
    let n = (2.0 / HISTOGRAM_BIN).round() as usize;
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|i| HistogramBin {
            lo: -1.0 + i as f64 * HISTOGRAM_BIN,
            hi: -1.0 + (i + 1) as f64 * HISTOGRAM_BIN,
            count: 0,
        })
        .collect();
    for &v in values {
        let i = (((v + 1.0) / HISTOGRAM_BIN).floor() as isize).clamp(0, n as isize - 1) as usize;
        bins[i].count += 1;
    }
    bins
}

#[derive(Debug, Clone)]
pub struct CorrelationSurvey {
    pub records: Vec<CorrelationRecord>,
    pub histogram: Vec<HistogramBin>,
    /// `(corr_main, gain_db)` of every unflagged record.
    pub scatter: Vec<(f64, f64)>,
    /// Pearson between gain and correlation; `None` if undefined.
    pub gain_correlation: Option<f64>,
}

impl CorrelationSurvey {
    pub fn mean_corr_main(&self) -> Option<f64> {
        if self.scatter.is_empty() {
            return None;
        }
        Some(self.scatter.iter().map(|p| p.0).sum::<f64>() / self.scatter.len() as f64)
    }
}

/// One record per (image, model). Images are coded with the shift enabled
/// to measure the quality gain next to the baseline-latent correlations.
pub fn correlation_survey(models: &[CodecModel], images: &[(String, Tensor)]) -> Result<CorrelationSurvey> {
    let jobs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..images.len()).map(move |i| (m, i)))
        .collect();
    let records = par::map(&jobs, |&(m, i)| -> Result<CorrelationRecord> {
        let model = &models[m];
        let (id, x) = &images[i];
        let latents = baseline_latents(x, model, &mut PassCounts::default())?;
        let corr = latent_correlations(model, x, &latents)?;
        let out = encode_latents(x, model, &latents, EncodeOptions { shift: true, lambda_index: m as u8 })?;
        let base = psnr(x, &model.synthesize(&latents.y)?)?;
        let shifted = psnr(x, &out.encoder_reconstruction(model)?)?;
        let gain_db = if base.is_finite() && shifted.is_finite() { shifted - base } else { 0.0 };
        Ok(CorrelationRecord {
            image_id: id.clone(),
            lambda: model.lambda,
            corr_side: corr.corr_side,
            corr_main: corr.corr_main,
            gain_db,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let scatter: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.corr_main.map(|c| (c, r.gain_db)))
        .collect();
    let histogram = correlation_histogram(&scatter.iter().map(|p| p.0).collect::<Vec<_>>());
    let gain_correlation = if scatter.len() >= 2 {
        let c = Tensor::new(vec![scatter.len()], scatter.iter().map(|p| p.0).collect())?;
        let g = Tensor::new(vec![scatter.len()], scatter.iter().map(|p| p.1).collect())?;
        pearson_opt(&c, &g)?
    } else {
        None
    };
    Ok(CorrelationSurvey { records, histogram, scatter, gain_correlation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec_t(v: Vec<f64>) -> Tensor {
        Tensor::new(vec![v.len()], v).unwrap()
    }

    #[test]
    fn self_and_anti_correlation() {
        let x = vec_t(vec![1.0, 3.0, -2.0, 0.5]);
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &x.scale(-1.0)).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_is_undefined() {
        let x = vec_t(vec![1.0, 2.0, 3.0]);
        let c = vec_t(vec![4.0; 3]);
        assert!(matches!(pearson(&x, &c), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(pearson(&vec_t(vec![1.0]), &vec_t(vec![2.0])), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn matches_covariance_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.gen_range(2..200);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            // E[ab] - E[a]E[b] over sqrt of the variances.
            let e = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
            let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
            let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
            let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
            let cov = e(&ab) - e(&a) * e(&b);
            let oracle = cov / ((e(&aa) - e(&a).powi(2)).sqrt() * (e(&bb) - e(&b).powi(2)).sqrt());
            let r = pearson(&vec_t(a), &vec_t(b)).unwrap();
            assert!((r - oracle).abs() < 1e-12, "{r} {oracle}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_affine_invariant(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60),
            c in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
            d in -100.0f64..100.0,
        ) {
            let a = vec_t(pairs.iter().map(|p| p.0).collect());
            let b = vec_t(pairs.iter().map(|p| p.1).collect());
            if let Ok(r) = pearson(&a, &b) {
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert!((pearson(&b, &a).unwrap() - r).abs() < 1e-12);
                let t = b.map(|v| c * v + d);
                let r2 = pearson(&a, &t).unwrap();
                prop_assert!((r2 - c.signum() * r).abs() < 1e-9, "{} {}", r2, r);
            }
        }
    }

    #[test]
    fn histogram_edges_and_totals() {
        let h = correlation_histogram(&[-1.0, -0.99, 0.0, 0.049, 0.05, 1.0]);
        assert_eq!(h.len(), 40);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 6);
        assert_eq!(h[0].count, 2);
        assert_eq!(h[20].count, 2);
        assert_eq!(h[21].count, 1);
        assert_eq!(h[39].count, 1);
    }

    #[test]
    fn residual_normalisation() {
        let a = vec_t(vec![1.0, -2.0]);
        let r = normalised_residual(&[&a], &[&a.scale(-1.0)]).unwrap();
        assert_eq!(r, 0.0);
        let r = normalised_residual(&[&a], &[&a]).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        let z = vec_t(vec![0.0, 0.0]);
        assert_eq!(normalised_residual(&[&z], &[&z]).unwrap(), 0.0);
    }
}
