//! Entropy models over integer-lattice latents.
//!
//! Every density is evaluated as the probability mass of the unit interval
//! around a value, `p(v) = C(v + 1/2) - C(v - 1/2)`, which is also the
//! density of the continuous model convolved with `U(-1/2, 1/2)`.

use std::f64::consts::{LN_2, SQRT_2};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower bound on Gaussian scales.
pub const SIGMA_MIN: f64 = 0.11;
/// Per-element likelihood floor used for bit costs and their gradients.
pub const LIKELIHOOD_FLOOR: f64 = 1.0 / (1u64 << 30) as f64;
pub const PMF_PRECISION_BITS: u32 = 16;
pub const PMF_TOTAL: u32 = 1 << PMF_PRECISION_BITS;
/// Widest PMF support before values are left to the escape path.
pub const MAX_SUPPORT: usize = 4096;

const GAUSS_TAIL: f64 = 6.0;
const LOGISTIC_TAIL: f64 = 12.0;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / SQRT_2)
}

pub fn normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn logistic_pdf(t: f64) -> f64 {
    let e = (-t.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else {
        t.exp().ln_1p()
    }
}

pub fn softplus_grad(t: f64) -> f64 {
    sigmoid(t)
}

/// Interval mass and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalMass {
    pub p: f64,
    pub dp_dv: f64,
    pub dp_dloc: f64,
    pub dp_dscale: f64,
}

/// A location-scale density on the real line, discretised to unit intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarDensity {
    Gaussian { mean: f64, scale: f64 },
    Logistic { loc: f64, scale: f64 },
}

impl ScalarDensity {
    fn loc_scale(&self) -> (f64, f64) {
        match *self {
            ScalarDensity::Gaussian { mean, scale } => (mean, scale),
            ScalarDensity::Logistic { loc, scale } => (loc, scale),
        }
    }

    /// Continuous CDF.
    pub fn cdf(&self, v: f64) -> f64 {
        match *self {
            ScalarDensity::Gaussian { mean, scale } => normal_cdf((v - mean) / scale),
            ScalarDensity::Logistic { loc, scale } => sigmoid((v - loc) / scale),
        }
    }

    pub fn mass(&self, v: f64) -> IntervalMass {
        let (loc, s) = self.loc_scale();
        let hi = (v + 0.5 - loc) / s;
        let lo = (v - 0.5 - loc) / s;
        let (p, dens_hi, dens_lo) = match self {
            ScalarDensity::Gaussian { .. } => {
                // Evaluate on the side of the mode where the CDF difference is
                // a difference of two small numbers.
                let p = if v >= loc {
                    0.5 * (libm::erfc(lo / SQRT_2) - libm::erfc(hi / SQRT_2))
                } else {
                    0.5 * (libm::erfc(-hi / SQRT_2) - libm::erfc(-lo / SQRT_2))
                };
                (p, normal_pdf(hi), normal_pdf(lo))
            }
            ScalarDensity::Logistic { .. } => {
                let p = if v >= loc {
                    sigmoid(-lo) - sigmoid(-hi)
                } else {
                    sigmoid(hi) - sigmoid(lo)
                };
                (p, logistic_pdf(hi), logistic_pdf(lo))
            }
        };
        let dp_dv = (dens_hi - dens_lo) / s;
        IntervalMass {
            p,
            dp_dv,
            dp_dloc: -dp_dv,
            dp_dscale: -(hi * dens_hi - lo * dens_lo) / s,
        }
    }

    /// Symbols outside this half-width around the location are escape coded.
    pub fn support(&self) -> (i64, i64) {
        let (loc, s) = self.loc_scale();
        let tail = match self {
            ScalarDensity::Gaussian { .. } => GAUSS_TAIL,
            ScalarDensity::Logistic { .. } => LOGISTIC_TAIL,
        };
        let half = (tail * s).min(MAX_SUPPORT as f64 / 2.0 - 1.0);
        ((loc - half).floor() as i64, (loc + half).ceil() as i64)
    }
}

/// Probability of the unit interval around `value`.
pub fn likelihood(value: f64, density: &ScalarDensity) -> Result<f64> {
    let (loc, scale) = density.loc_scale();
    if !value.is_finite() || !loc.is_finite() || !scale.is_finite() {
        return Err(Error::Evaluation(format!(
            "non-finite likelihood input v={value} loc={loc} scale={scale}"
        )));
    }
    if scale <= 0.0 {
        return Err(Error::Evaluation(format!("scale {scale} must be positive")));
    }
    Ok(density.mass(value).p.clamp(0.0, 1.0))
}

/// Bit cost of one element and its derivative factor `d bits / d p`.
#[inline]
fn bits_of(p: f64) -> (f64, f64, bool) {
    if p < LIKELIHOOD_FLOOR || !p.is_finite() {
        (-LIKELIHOOD_FLOOR.log2(), -1.0 / (LIKELIHOOD_FLOOR * LN_2), true)
    } else {
        (-p.log2(), -1.0 / (p * LN_2), false)
    }
}

/// Total bits together with the number of elements that hit the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitCount {
    pub bits: f64,
    pub saturated: usize,
}

/// Gradient of a bit count together with its saturation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BitGradient {
    pub grad: Tensor,
    pub saturated: usize,
}

/// Per-channel logistic density for the side latents.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedModel {
    pub loc: Vec<f64>,
    pub log_scale: Vec<f64>,
}

/// Parameter gradients of the factorized model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedGrads {
    pub loc: Vec<f64>,
    pub log_scale: Vec<f64>,
}

impl FactorizedModel {
    pub fn new(channels: usize) -> Self {
        FactorizedModel {
            loc: vec![0.0; channels],
            log_scale: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.loc.len()
    }

    pub fn density(&self, channel: usize) -> ScalarDensity {
        ScalarDensity::Logistic {
            loc: self.loc[channel],
            scale: self.log_scale[channel].exp(),
        }
    }

    fn check(&self, z: &Tensor) -> Result<usize> {
        let (_, _, c) = z.hwc()?;
        if c != self.channels() {
            let mut expected = z.shape().to_vec();
            expected[2] = self.channels();
            return Err(Error::dims(&expected, z.shape()));
        }
        Ok(c)
    }

    pub fn bits(&self, z: &Tensor) -> Result<BitCount> {
        let c = self.check(z)?;
        let mut out = BitCount { bits: 0.0, saturated: 0 };
        for (i, &v) in z.data().iter().enumerate() {
            let (b, _, sat) = bits_of(self.density(i % c).mass(v).p);
            out.bits += b;
            out.saturated += sat as usize;
        }
        Ok(out)
    }

    pub fn grad_bits_wrt_latents(&self, z: &Tensor) -> Result<BitGradient> {
        let c = self.check(z)?;
        let mut saturated = 0;
        let grad = Tensor::from_fn(z.shape(), |i| {
            let m = self.density(i % c).mass(z.data()[i]);
            let (_, dbits_dp, sat) = bits_of(m.p);
            saturated += sat as usize;
            dbits_dp * m.dp_dv
        });
        Ok(BitGradient { grad, saturated })
    }

    /// Bits plus gradients with respect to the latents and the model parameters.
    pub fn bits_and_grads(&self, z: &Tensor) -> Result<(BitCount, Tensor, FactorizedGrads)> {
        let c = self.check(z)?;
        let mut count = BitCount { bits: 0.0, saturated: 0 };
        let mut gz = Tensor::zeros(z.shape());
        let mut gp = FactorizedGrads {
            loc: vec![0.0; c],
            log_scale: vec![0.0; c],
        };
        for (i, &v) in z.data().iter().enumerate() {
            let ch = i % c;
            let m = self.density(ch).mass(v);
            let (b, dbits_dp, sat) = bits_of(m.p);
            count.bits += b;
            count.saturated += sat as usize;
            gz.data_mut()[i] = dbits_dp * m.dp_dv;
            gp.loc[ch] += dbits_dp * m.dp_dloc;
            gp.log_scale[ch] += dbits_dp * m.dp_dscale * self.log_scale[ch].exp();
        }
        Ok((count, gz, gp))
    }

    /// Value of highest mass for each channel.
    pub fn mode(&self, channel: usize) -> f64 {
        self.loc[channel]
    }
}

/// Gaussian conditional model with per-element mean and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub mean: Tensor,
    pub scale: Tensor,
}

/// Gradients of the conditional bit count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGrads {
    pub latents: Tensor,
    pub mean: Tensor,
    pub scale: Tensor,
    pub saturated: usize,
}

impl GaussianConditional {
    pub fn new(mean: Tensor, scale: Tensor) -> Result<Self> {
        mean.same_shape(&scale)?;
        if let Some(&s) = scale.data().iter().find(|&&s| !(s >= SIGMA_MIN)) {
            return Err(Error::Argument(format!(
                "scale {s} below floor {SIGMA_MIN}"
            )));
        }
        Ok(GaussianConditional { mean, scale })
    }

    /// Build from raw hyper-synthesis output: the first half of the channels
    /// are means, the second half pass through `SIGMA_MIN + softplus`.
    pub fn from_hyper_output(raw: &Tensor) -> Result<Self> {
        let (_, _, c) = raw.hwc()?;
        if c % 2 != 0 {
            return Err(Error::Argument(format!("hyper output has odd channel count {c}")));
        }
        let (mean, pre) = raw.split_channels(c / 2)?;
        let scale = pre.map(|t| SIGMA_MIN + softplus(t));
        Ok(GaussianConditional { mean, scale })
    }

    /// Map gradients w.r.t. (mean, scale) back to the raw hyper output.
    pub fn grad_to_hyper_output(&self, raw: &Tensor, g_mean: &Tensor, g_scale: &Tensor) -> Result<Tensor> {
        let (_, _, c) = raw.hwc()?;
        let (_, pre) = raw.split_channels(c / 2)?;
        let g_pre = pre.zip_map(g_scale, |t, g| g * softplus_grad(t))?;
        Tensor::concat_channels(g_mean, &g_pre)
    }

    pub fn density(&self, i: usize) -> ScalarDensity {
        ScalarDensity::Gaussian {
            mean: self.mean.data()[i],
            scale: self.scale.data()[i],
        }
    }

    pub fn bits(&self, y: &Tensor) -> Result<BitCount> {
        self.mean.same_shape(y)?;
        let mut out = BitCount { bits: 0.0, saturated: 0 };
        for (i, &v) in y.data().iter().enumerate() {
            let (b, _, sat) = bits_of(self.density(i).mass(v).p);
            out.bits += b;
            out.saturated += sat as usize;
        }
        Ok(out)
    }

    pub fn grad_bits_wrt_latents(&self, y: &Tensor) -> Result<BitGradient> {
        self.mean.same_shape(y)?;
        let mut saturated = 0;
        let grad = Tensor::from_fn(y.shape(), |i| {
            let m = self.density(i).mass(y.data()[i]);
            let (_, dbits_dp, sat) = bits_of(m.p);
            saturated += sat as usize;
            dbits_dp * m.dp_dv
        });
        Ok(BitGradient { grad, saturated })
    }

    pub fn bits_and_grads(&self, y: &Tensor) -> Result<(BitCount, ConditionalGrads)> {
        self.mean.same_shape(y)?;
        let mut count = BitCount { bits: 0.0, saturated: 0 };
        let n = y.len();
        let (mut gy, mut gm, mut gs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for (i, &v) in y.data().iter().enumerate() {
            let m = self.density(i).mass(v);
            let (b, dbits_dp, sat) = bits_of(m.p);
            count.bits += b;
            count.saturated += sat as usize;
            gy[i] = dbits_dp * m.dp_dv;
            gm[i] = dbits_dp * m.dp_dloc;
            gs[i] = dbits_dp * m.dp_dscale;
        }
        let shape = y.shape().to_vec();
        Ok((
            count,
            ConditionalGrads {
                latents: Tensor::new(shape.clone(), gy)?,
                mean: Tensor::new(shape.clone(), gm)?,
                scale: Tensor::new(shape, gs)?,
                saturated: count.saturated,
            },
        ))
    }
}

/// Integer frequency table for one coded symbol.
///
/// Frequencies cover the symbols `lo..=hi` followed by one escape slot; all
/// are at least 1 and they sum to exactly [`PMF_TOTAL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscretePmf {
    pub lo: i64,
    pub freqs: Vec<u32>,
}

impl DiscretePmf {
    pub fn hi(&self) -> i64 {
        self.lo + self.freqs.len() as i64 - 2
    }

    pub fn escape_index(&self) -> usize {
        self.freqs.len() - 1
    }

    pub fn index_of(&self, symbol: i64) -> Option<usize> {
        (symbol >= self.lo && symbol <= self.hi()).then(|| (symbol - self.lo) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.len() < 2 {
            return Err(Error::Coder("pmf needs at least one symbol and an escape".into()));
        }
        if self.freqs.iter().any(|&f| f == 0) {
            return Err(Error::Coder("pmf has a zero frequency".into()));
        }
        let total: u64 = self.freqs.iter().map(|&f| f as u64).sum();
        if total != PMF_TOTAL as u64 {
            return Err(Error::Coder(format!("pmf sums to {total}, expected {PMF_TOTAL}")));
        }
        Ok(())
    }

    /// Code length in bits of `symbol` under this table, escape included.
    pub fn cost_bits(&self, symbol: i64) -> f64 {
        let total = PMF_TOTAL as f64;
        match self.index_of(symbol) {
            Some(i) => (total / self.freqs[i] as f64).log2(),
            None => (total / self.freqs[self.escape_index()] as f64).log2() + 16.0,
        }
    }
}

/// Quantise a density to a [`DiscretePmf`] with the largest-remainder method.
pub fn discretize(density: &ScalarDensity) -> Result<DiscretePmf> {
    let (loc, scale) = density.loc_scale();
    if !loc.is_finite() || !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Evaluation(format!(
            "cannot discretize loc={loc} scale={scale}"
        )));
    }
    if let ScalarDensity::Gaussian { scale, .. } = density {
        if *scale < SIGMA_MIN {
            return Err(Error::Argument(format!("scale {scale} below floor {SIGMA_MIN}")));
        }
    }
    let (lo, hi) = density.support();
    let n = (hi - lo + 1) as usize;
    let probs: Vec<f64> = (lo..=hi).map(|v| density.mass(v as f64).p.max(0.0)).collect();
    let mass: f64 = probs.iter().sum();
    // One count is reserved for the escape; every symbol keeps at least one.
    let budget = (PMF_TOTAL - 1) as i64;
    let mut freqs = Vec::with_capacity(n + 1);
    let mut rema = Vec::with_capacity(n);
    let mut assigned = 0i64;
    for (i, p) in probs.iter().enumerate() {
        let share = if mass > 0.0 { p / mass * budget as f64 } else { budget as f64 / n as f64 };
        let whole = (share.floor() as i64).max(1);
        assigned += whole;
        freqs.push(whole as u32);
        rema.push((share - whole as f64, i));
    }
    // Largest remainders gain a count; if the floor at one overdrew the
    // budget, the smallest remainders among counts above one give it back.
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut diff = budget - assigned;
    while diff > 0 {
        for &(_, i) in rema.iter().take(diff as usize) {
            freqs[i] += 1;
        }
        diff = budget - freqs.iter().map(|&f| f as i64).sum::<i64>();
    }
    while diff < 0 {
        let before = diff;
        for &(_, i) in rema.iter().rev() {
            if diff == 0 {
                break;
            }
            if freqs[i] > 1 {
                freqs[i] -= 1;
                diff += 1;
            }
        }
        if diff == before {
            return Err(Error::Coder(format!("support of {n} symbols exceeds table precision")));
        }
    }
    freqs.push(1);
    let pmf = DiscretePmf { lo, freqs };
    pmf.validate()?;
    Ok(pmf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss(mean: f64, scale: f64) -> ScalarDensity {
        ScalarDensity::Gaussian { mean, scale }
    }

    #[test]
    fn standard_normal_unit_interval() {
        // Phi(0.5) - Phi(-0.5) from the series erf(x) = 2/sqrt(pi) sum (-1)^n x^(2n+1)/(n!(2n+1)).
        let x: f64 = 0.5 / SQRT_2;
        let mut erf = 0.0;
        let mut term = x;
        for n in 0..30 {
            erf += term / (2 * n + 1) as f64;
            term *= -x * x / (n + 1) as f64;
        }
        erf *= 2.0 / std::f64::consts::PI.sqrt();
        let p = likelihood(0.0, &gauss(0.0, 1.0)).unwrap();
        assert!((p - erf).abs() < 1e-14);
        assert!((p - 0.38292).abs() < 1e-5);
        let y = Tensor::zeros(&[1, 1, 1]);
        let gc = GaussianConditional::new(Tensor::zeros(&[1, 1, 1]), Tensor::filled(&[1, 1, 1], 1.0)).unwrap();
        let bits = gc.bits(&y).unwrap().bits;
        assert!((bits - (-erf.log2())).abs() < 1e-12);
        assert!((bits - 1.385).abs() < 1e-3);
    }

    #[test]
    fn concentration_and_symmetry() {
        let p = likelihood(3.0, &gauss(3.0, 1e-3)).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        let gc = GaussianConditional::new(
            Tensor::filled(&[1, 1, 1], 3.0),
            Tensor::filled(&[1, 1, 1], SIGMA_MIN),
        )
        .unwrap();
        assert!(gc.bits(&Tensor::filled(&[1, 1, 1], 3.0)).unwrap().bits < 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mu = rng.gen_range(-5.0..5.0);
            let s = rng.gen_range(0.1..5.0);
            let d = rng.gen_range(0.0..4.0);
            for dens in [gauss(mu, s), ScalarDensity::Logistic { loc: mu, scale: s }] {
                let a = likelihood(mu + d, &dens).unwrap();
                let b = likelihood(mu - d, &dens).unwrap();
                assert!((a - b).abs() <= 1e-13 * a.max(1e-300));
            }
        }
    }

    #[test]
    fn non_finite_inputs_rejected() {
        assert!(likelihood(f64::NAN, &gauss(0.0, 1.0)).is_err());
        assert!(likelihood(0.0, &gauss(0.0, f64::INFINITY)).is_err());
        assert!(likelihood(0.0, &gauss(0.0, 0.0)).is_err());
    }

    #[test]
    fn tiling_doubles_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = Tensor::from_fn(&[2, 2, 3], |_| rng.gen_range(-3..4) as f64);
        let mean = Tensor::from_fn(&[2, 2, 3], |_| rng.gen_range(-1.0..1.0));
        let scale = Tensor::from_fn(&[2, 2, 3], |_| rng.gen_range(0.2..3.0));
        let gc = GaussianConditional::new(mean.clone(), scale.clone()).unwrap();
        let tiled = GaussianConditional::new(mean.tile(1, 2).unwrap(), scale.tile(1, 2).unwrap()).unwrap();
        let b1 = gc.bits(&y).unwrap().bits;
        let b2 = tiled.bits(&y.tile(1, 2).unwrap()).unwrap().bits;
        assert!((b2 - 2.0 * b1).abs() < 1e-9 * b1);
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mu = rng.gen_range(-3.0..3.0);
            let s: f64 = rng.gen_range(SIGMA_MIN..10.0);
            // Stay out of the floored tail where the gradient is deliberately clamped.
            let v = mu + rng.gen_range(-3.0..3.0) * s.max(1.0);
            let bits = |vv: f64, mm: f64, ss: f64| -likelihood(vv, &gauss(mm, ss)).unwrap().log2();
            let m = gauss(mu, s).mass(v);
            if m.p < 4.0 * LIKELIHOOD_FLOOR {
                continue;
            }
            let (_, k, _) = bits_of(m.p);
            assert!(rel_err(k * m.dp_dv, fd(|x| bits(x, mu, s), v)) < 1e-4, "mu={mu} s={s} v={v} an={} fd={}", k * m.dp_dv, fd(|x| bits(x, mu, s), v));
            assert!(rel_err(k * m.dp_dloc, fd(|x| bits(v, x, s), mu)) < 1e-4);
            assert!(rel_err(k * m.dp_dscale, fd(|x| bits(v, mu, x), s)) < 1e-4);

            let ls = s.ln();
            let lbits = |vv: f64, ll: f64, lls: f64| {
                -likelihood(vv, &ScalarDensity::Logistic { loc: ll, scale: lls.exp() }).unwrap().log2()
            };
            let fm = FactorizedModel { loc: vec![mu], log_scale: vec![ls] };
            let z = Tensor::filled(&[1, 1, 1], v);
            let (_, gz, gp) = fm.bits_and_grads(&z).unwrap();
            assert!(rel_err(gz.data()[0], fd(|x| lbits(x, mu, ls), v)) < 1e-4);
            assert!(rel_err(gp.loc[0], fd(|x| lbits(v, x, ls), mu)) < 1e-4);
            assert!(rel_err(gp.log_scale[0], fd(|x| lbits(v, mu, x), ls)) < 1e-4);
        }
    }

    #[test]
    fn gradient_zero_at_mode_and_positive_above() {
        let gc = GaussianConditional::new(
            Tensor::new(vec![1, 1, 3], vec![0.3, 0.3, 0.3]).unwrap(),
            Tensor::filled(&[1, 1, 3], 1.5),
        )
        .unwrap();
        let y = Tensor::new(vec![1, 1, 3], vec![0.3, 1.0, 4.0]).unwrap();
        let g = gc.grad_bits_wrt_latents(&y).unwrap().grad;
        assert!(g.data()[0].abs() < 1e-15);
        assert!(g.data()[1] > 0.0 && g.data()[2] > 0.0);
    }

    #[test]
    fn saturation_is_flagged_and_bounded() {
        let gc = GaussianConditional::new(Tensor::zeros(&[1, 1, 1]), Tensor::filled(&[1, 1, 1], SIGMA_MIN)).unwrap();
        let y = Tensor::filled(&[1, 1, 1], 40.0);
        let b = gc.bits(&y).unwrap();
        assert_eq!(b.saturated, 1);
        assert_eq!(b.bits, 30.0);
        let g = gc.grad_bits_wrt_latents(&y).unwrap();
        assert_eq!(g.saturated, 1);
        assert!(g.grad.is_finite());
    }

    #[test]
    fn lattice_mass_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let mu = rng.gen_range(-10.0..10.0);
            let s = rng.gen_range(SIGMA_MIN..10.0);
            let d = gauss(mu, s);
            let lo = (mu - 12.0 * s).floor() as i64 - 1;
            let hi = (mu + 12.0 * s).ceil() as i64 + 1;
            let total: f64 = (lo..=hi).map(|v| likelihood(v as f64, &d).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
    }

    #[test]
    fn matches_monte_carlo_interval_frequency() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mu, s) = (0.3, 1.7);
        let normal = Normal::new(mu, s).unwrap();
        let n = 200_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let x: f64 = normal.sample(&mut rng);
            *counts.entry((x + 0.5).floor() as i64).or_insert(0usize) += 1;
        }
        for v in -3..=3 {
            let p = likelihood(v as f64, &gauss(mu, s)).unwrap();
            let freq = *counts.get(&v).unwrap_or(&0) as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 3.0 * sd + 1e-12, "v={v} p={p} freq={freq}");
        }
    }

    #[test]
    fn pmf_mode_and_normalisation() {
        let pmf = discretize(&gauss(0.0, 1.0)).unwrap();
        let mode = pmf.freqs[..pmf.escape_index()]
            .iter()
            .enumerate()
            .max_by_key(|(_, f)| **f)
            .map(|(i, _)| pmf.lo + i as i64)
            .unwrap();
        assert_eq!(mode, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let d = if rng.gen_bool(0.5) {
                gauss(rng.gen_range(-20.0..20.0), rng.gen_range(SIGMA_MIN..30.0))
            } else {
                ScalarDensity::Logistic { loc: rng.gen_range(-5.0..5.0), scale: rng.gen_range(0.05..10.0) }
            };
            let pmf = discretize(&d).unwrap();
            assert_eq!(pmf.freqs.iter().map(|&f| f as u64).sum::<u64>(), 65536);
            assert!(pmf.freqs.iter().all(|&f| f >= 1));
        }
    }

    #[test]
    fn pmf_kl_to_exact_masses_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sigmas: Vec<f64> = vec![SIGMA_MIN, 0.5, 1.0, 3.0, 10.0];
        sigmas.extend((0..40).map(|_| rng.gen_range(SIGMA_MIN..10.0)));
        for s in sigmas {
            let mu = rng.gen_range(-2.0..2.0);
            let d = gauss(mu, s);
            let pmf = discretize(&d).unwrap();
            let mut kl = 0.0;
            for (i, &f) in pmf.freqs[..pmf.escape_index()].iter().enumerate() {
                let p = likelihood((pmf.lo + i as i64) as f64, &d).unwrap();
                if p > 0.0 {
                    kl += p * (p / (f as f64 / 65536.0)).log2();
                }
            }
            assert!(kl < 1e-3, "sigma={s} kl={kl}");
        }
    }

    #[test]
    fn scale_floor_enforced() {
        assert!(GaussianConditional::new(Tensor::zeros(&[1]), Tensor::filled(&[1], 0.05)).is_err());
        assert!(discretize(&gauss(0.0, 0.05)).is_err());
        let raw = Tensor::filled(&[1, 1, 2], -50.0);
        let gc = GaussianConditional::from_hyper_output(&raw).unwrap();
        assert!(gc.scale.data()[0] >= SIGMA_MIN);
    }
}
