//! PSNR, rate-distortion curves and the Bjøntegaard delta rate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported for a reconstruction identical to its source.
pub const PSNR_LOSSLESS: f64 = f64::INFINITY;

/// RGB PSNR in dB on the 8-bit scale for images stored in `[0, 1]`.
pub fn psnr(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    x.same_shape(x_hat)?;
    if x.is_empty() {
        return Err(Error::Argument("psnr of empty images".into()));
    }
    let sse: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| {
            let d = (a - b) * 255.0;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_LOSSLESS);
    }
    let mse = sse / x.len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Formats a PSNR for reports, spelling out the lossless sentinel.
pub fn format_psnr(p: f64) -> String {
    if p == PSNR_LOSSLESS {
        "lossless".to_string()
    } else {
        format!("{p:.4}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RDPoint {
    pub bpp: f64,
    pub psnr: f64,
}

/// Points sorted by rate. Rate strictly increases and quality does not drop.
#[derive(Debug, Clone, PartialEq)]
pub struct RDCurve {
    points: Vec<RDPoint>,
}

impl RDCurve {
    pub const MIN_POINTS: usize = 4;

    pub fn new(mut points: Vec<RDPoint>) -> Result<Self> {
        if points.len() < Self::MIN_POINTS {
            return Err(Error::Evaluation(format!(
                "rd curve needs at least {} points, got {}",
                Self::MIN_POINTS,
                points.len()
            )));
        }
        for p in &points {
            if !(p.bpp > 0.0) || !p.bpp.is_finite() || !p.psnr.is_finite() {
                return Err(Error::Evaluation(format!("invalid rd point {p:?}")));
            }
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        for w in points.windows(2) {
            if w[1].bpp <= w[0].bpp {
                return Err(Error::Evaluation(format!("repeated rate {}", w[0].bpp)));
            }
            if w[1].psnr < w[0].psnr {
                return Err(Error::Evaluation(format!(
                    "quality drops from {} dB to {} dB as rate grows",
                    w[0].psnr, w[1].psnr
                )));
            }
        }
        Ok(RDCurve { points })
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }
}

/// Least-squares polynomial in a normalised variable `t = (p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cubic {
    pub coeffs: [f64; 4],
    pub center: f64,
    pub scale: f64,
}

impl Cubic {
    pub fn eval(&self, p: f64) -> f64 {
        let t = (p - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// Exact integral over `[a, b]` in the original variable.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let anti = |p: f64| {
            let t = (p - self.center) / self.scale;
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * t.powi(k as i32 + 1) / (k as f64 + 1.0))
                .sum::<f64>()
        };
        self.scale * (anti(b) - anti(a))
    }
}

/// Solve a small dense system by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Result<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::Evaluation("degenerate rd curve for cubic fit".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Cubic fit of natural-log rate against PSNR.
pub fn fit_log_rate(curve: &RDCurve) -> Result<Cubic> {
    let pts = curve.points();
    let lo = pts.iter().map(|p| p.psnr).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.psnr).fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let scale = (0.5 * (hi - lo)).max(1e-12);
    let mut ata = [[0.0; 4]; 4];
    let mut atb = [0.0; 4];
    for p in pts {
        let t = (p.psnr - center) / scale;
        let row = [1.0, t, t * t, t * t * t];
        let r = p.bpp.ln();
        for i in 0..4 {
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * r;
        }
    }
    Ok(Cubic { coeffs: solve4(ata, atb)?, center, scale })
}

/// Common PSNR interval of two curves.
pub fn overlap(a: &RDCurve, b: &RDCurve) -> Result<(f64, f64)> {
    let range = |c: &RDCurve| {
        let ps = c.points().iter().map(|p| p.psnr);
        (ps.clone().fold(f64::INFINITY, f64::min), ps.fold(f64::NEG_INFINITY, f64::max))
    };
    let (a0, a1) = range(a);
    let (b0, b1) = range(b);
    let (lo, hi) = (a0.max(b0), a1.min(b1));
    if !(hi > lo) {
        return Err(Error::Evaluation(format!(
            "no psnr overlap between [{a0}, {a1}] and [{b0}, {b1}]"
        )));
    }
    Ok((lo, hi))
}

/// Average rate change of `test` against `reference` at equal PSNR, in
/// percent. Negative means `test` needs fewer bits.
pub fn bd_rate(reference: &RDCurve, test: &RDCurve) -> Result<f64> {
    let (lo, hi) = overlap(reference, test)?;
    let fr = fit_log_rate(reference)?;
    let ft = fit_log_rate(test)?;
    let avg = (ft.integral(lo, hi) - fr.integral(lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn curve(pairs: &[(f64, f64)]) -> RDCurve {
        RDCurve::new(pairs.iter().map(|&(bpp, psnr)| RDPoint { bpp, psnr }).collect()).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let x = Tensor::from_fn(&[4, 4, 3], |i| (i % 200) as f64 / 255.0);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_LOSSLESS);
        assert_eq!(format_psnr(PSNR_LOSSLESS), "lossless");
        let y = x.map(|v| v + 1.0 / 255.0);
        let p = psnr(&x, &y).unwrap();
        assert!((p - 48.1308).abs() < 1e-4, "{p}");
    }

    #[test]
    fn psnr_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::from_fn(&[8, 8, 3], |_| rng.gen::<f64>());
        let y = Tensor::from_fn(&[8, 8, 3], |_| rng.gen::<f64>());
        let xs: Vec<f64> = x.data().iter().map(|v| v * 255.0).collect();
        let ys: Vec<f64> = y.data().iter().map(|v| v * 255.0).collect();
        let mut mse = 0.0;
        for k in 0..xs.len() {
            mse += (xs[k] - ys[k]).powi(2) / xs.len() as f64;
        }
        let oracle = 20.0 * 255f64.log10() - 10.0 * mse.log10();
        assert!((psnr(&x, &y).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn curve_contract() {
        assert!(RDCurve::new(vec![RDPoint { bpp: 0.1, psnr: 20.0 }; 3]).is_err());
        let bad = [(0.1, 20.0), (0.2, 22.0), (0.3, 21.0), (0.4, 25.0)];
        assert!(RDCurve::new(bad.iter().map(|&(bpp, psnr)| RDPoint { bpp, psnr }).collect()).is_err());
        let c = curve(&[(0.4, 30.0), (0.1, 24.0), (0.2, 27.0), (0.8, 33.0)]);
        assert_eq!(c.points()[0].bpp, 0.1);
    }

    #[test]
    fn identical_and_scaled_curves() {
        let r = curve(&[(0.1, 24.0), (0.2, 27.0), (0.4, 30.0), (0.8, 33.0)]);
        assert_eq!(bd_rate(&r, &r).unwrap(), 0.0);
        let t = curve(&[(0.09, 24.0), (0.18, 27.0), (0.36, 30.0), (0.72, 33.0)]);
        assert!((bd_rate(&r, &t).unwrap() + 10.0).abs() < 1e-6);
    }

    #[test]
    fn disjoint_curves_rejected() {
        let a = curve(&[(0.1, 20.0), (0.2, 21.0), (0.3, 22.0), (0.4, 23.0)]);
        let b = curve(&[(0.1, 30.0), (0.2, 31.0), (0.3, 32.0), (0.4, 33.0)]);
        assert!(matches!(bd_rate(&a, &b), Err(Error::Evaluation(_))));
    }

    #[test]
    fn antisymmetric_for_nearby_curves() {
        let a = curve(&[(0.1, 24.0), (0.2, 27.0), (0.4, 30.0), (0.8, 33.0)]);
        let b = curve(&[(0.098, 24.1), (0.197, 27.05), (0.395, 30.0), (0.79, 33.1)]);
        let ab = bd_rate(&a, &b).unwrap();
        let ba = bd_rate(&b, &a).unwrap();
        assert!((ab + ba).abs() < 0.1, "{ab} {ba}");
    }
}
