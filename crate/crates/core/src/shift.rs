//! Encoder-side step selection and decoder-side latent shifting.
//!
//! After the decoder has the side latents it can differentiate their own
//! code length; stepping along that gradient tends to lower the main-code
//! length. After it has the main latents it can differentiate the main code
//! length, which is anti-correlated with the (unavailable) distortion
//! gradient. The encoder tries every entry of a fixed step table for each of
//! the two shifts and signals the winning indices.

use crate::codec::{mse, CodecModel, PassCounts};
use crate::entropy::GaussianConditional;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

pub const STEP_COUNT: usize = 8;

/// Candidate step sizes applied to the raw gradient. Index 0 is no shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTable(pub [f64; STEP_COUNT]);

/// The table compiled into stream version 1.
pub const STEP_TABLE: StepTable = StepTable([0.0, -0.25, -0.5, -1.0, -2.0, -4.0, -8.0, -16.0]);

impl StepTable {
    pub fn step(&self, index: u8) -> Result<f64> {
        self.0
            .get(index as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("step index {index} out of range")))
    }
}

/// `base + rho * grad`; exactly `base` when `rho == 0`.
pub fn shift_latent(base: &Tensor, grad: &Tensor, rho: f64) -> Result<Tensor> {
    if rho == 0.0 {
        base.same_shape(grad)?;
        return Ok(base.clone());
    }
    base.axpy(rho, grad)
}

/// Index of the smallest cost; ties go to the smaller `|rho|`, then to the
/// smaller index. Non-finite costs never win over finite ones.
pub fn argmin_step(costs: &[f64], table: &StepTable) -> usize {
    let key = |i: usize| if costs[i].is_finite() { costs[i] } else { f64::INFINITY };
    (0..costs.len())
        .min_by(|&a, &b| {
            key(a)
                .total_cmp(&key(b))
                .then(table.0[a].abs().total_cmp(&table.0[b].abs()))
                .then(a.cmp(&b))
        })
        .unwrap_or(0)
}

/// Evaluate `objective` at every `base + rho * direction` and pick the best.
///
/// Returns the winning index, all costs in table order, the shifted tensor
/// and the objective's payload for the winner.
pub fn select_step<T, F>(
    base: &Tensor,
    direction: &Tensor,
    table: &StepTable,
    objective: F,
) -> Result<(usize, Vec<f64>, Tensor, T)>
where
    T: Send,
    F: Fn(&Tensor) -> Result<(f64, T)> + Send + Sync,
{
    let evals = par::map_range(STEP_COUNT, |i| {
        let shifted = shift_latent(base, direction, table.0[i])?;
        let (cost, payload) = objective(&shifted)?;
        Ok::<_, Error>((cost, shifted, payload))
    });
    let mut evals = evals.into_iter().collect::<Result<Vec<_>>>()?;
    let costs: Vec<f64> = evals.iter().map(|e| e.0).collect();
    let best = argmin_step(&costs, table);
    let (_, shifted, payload) = evals.swap_remove(best);
    Ok((best, costs, shifted, payload))
}

#[derive(Debug, Clone)]
pub struct SideSelection {
    pub index: u8,
    pub shifted: Tensor,
    pub conditional: GaussianConditional,
    /// Estimated main-code bits for each candidate.
    pub main_bits: Vec<f64>,
}

/// Pick the side-latent step minimising main-code bits.
pub fn select_rho_f(
    y_hat: &Tensor,
    z_hat: &Tensor,
    model: &CodecModel,
    counts: &mut PassCounts,
) -> Result<SideSelection> {
    let grad = model.factorized.grad_bits_wrt_latents(z_hat)?.grad;
    counts.gradients += 1;
    let (index, main_bits, shifted, conditional) = select_step(z_hat, &grad, &STEP_TABLE, |z| {
        let gc = model.hyper_synthesize(z)?;
        Ok((gc.bits(y_hat)?.bits, gc))
    })?;
    counts.hyper_synthesis += STEP_COUNT as u64;
    Ok(SideSelection {
        index: index as u8,
        shifted,
        conditional,
        main_bits,
    })
}

#[derive(Debug, Clone)]
pub struct MainSelection {
    pub index: u8,
    pub shifted: Tensor,
    pub reconstruction: Tensor,
    /// MSE of each candidate reconstruction.
    pub distortion: Vec<f64>,
}

/// Pick the main-latent step minimising distortion against `x`.
pub fn select_rho_h(
    x: &Tensor,
    y_hat: &Tensor,
    conditional: &GaussianConditional,
    model: &CodecModel,
    counts: &mut PassCounts,
) -> Result<MainSelection> {
    let grad = conditional.grad_bits_wrt_latents(y_hat)?.grad;
    counts.gradients += 1;
    let (index, distortion, shifted, reconstruction) = select_step(y_hat, &grad, &STEP_TABLE, |y| {
        let xhat = model.synthesize(y)?;
        Ok((mse(x, &xhat)?, xhat))
    })?;
    counts.synthesis += STEP_COUNT as u64;
    Ok(MainSelection {
        index: index as u8,
        shifted,
        reconstruction,
        distortion,
    })
}

/// Encoder-side outcome of the two selections.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftDecision {
    pub rho_f_index: u8,
    pub rho_h_index: u8,
    /// Estimated main bits at the chosen step minus at step 0 (never positive).
    pub main_bits_delta: f64,
    /// MSE at the chosen step minus at step 0 (never positive).
    pub distortion_delta: f64,
}

/// Decode a shifted stream. The decoder only ever sees the stream and the
/// model, so this is [`crate::codec::decode`] under another name.
pub fn apply_shift_decoder_side(
    stream: &crate::codec::Bitstream,
    model: &CodecModel,
) -> Result<Tensor> {
    Ok(crate::codec::decode(stream, model)?.reconstruction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_contract() {
        assert_eq!(STEP_TABLE.0.len(), 8);
        assert_eq!(STEP_TABLE.0[0], 0.0);
        assert!(STEP_TABLE.0[1..].iter().all(|&r| r < 0.0));
        assert!(STEP_TABLE.step(8).is_err());
    }

    #[test]
    fn ties_prefer_small_steps() {
        let costs = [1.0, 0.5, 0.5, 2.0, 0.5, f64::NAN, 9.0, 0.5];
        assert_eq!(argmin_step(&costs, &STEP_TABLE), 1);
        let flat = [3.0; 8];
        assert_eq!(argmin_step(&flat, &STEP_TABLE), 0);
        let t = StepTable([0.0, 1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0]);
        assert_eq!(argmin_step(&[5.0, 4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], &t), 2);
    }

    #[test]
    fn zero_direction_keeps_index_zero() {
        let base = Tensor::from_fn(&[2, 2, 1], |i| i as f64);
        let dir = Tensor::zeros(&[2, 2, 1]);
        let (idx, costs, shifted, _) =
            select_step(&base, &dir, &STEP_TABLE, |t| Ok((t.sum(), ()))).unwrap();
        assert_eq!(idx, 0);
        assert!(costs.iter().all(|&c| c == costs[0]));
        assert_eq!(shifted, base);
    }

    #[test]
    fn quadratic_response_selects_its_minimum() {
        // cost(rho) = (rho - rho*)^2 + c along a unit direction, for every
        // table entry as the optimum; the exhaustive re-check agrees.
        let base = Tensor::filled(&[1, 1, 3], 0.7);
        let dir = Tensor::filled(&[1, 1, 3], 1.0);
        for (k, &target) in STEP_TABLE.0.iter().enumerate() {
            let objective = |t: &Tensor| {
                let rho = t.data()[0] - 0.7;
                Ok(((rho - target).powi(2) + 3.0, ()))
            };
            let (idx, costs, shifted, _) = select_step(&base, &dir, &STEP_TABLE, objective).unwrap();
            assert_eq!(idx, k);
            let brute = (0..8)
                .min_by(|&a, &b| costs[a].total_cmp(&costs[b]))
                .unwrap();
            assert_eq!(brute, idx);
            assert!((shifted.data()[0] - 0.7 - target).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_zero_is_bit_identical() {
        let base = Tensor::new(vec![3], vec![-0.0, 1.0, 2.5]).unwrap();
        let g = Tensor::new(vec![3], vec![-1.0, 3.0, 1e300]).unwrap();
        let s = shift_latent(&base, &g, 0.0).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&s), bits(&base));
    }
}
