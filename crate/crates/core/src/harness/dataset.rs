//! Procedural photograph-like test images.
//!
//! Smooth two-colour gradients, a low-frequency ripple, a handful of
//! soft-edged ellipses and rectangles, and mild sensor-like noise. Fully
//! determined by the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// One `size x size` RGB image with values in `[0, 1]`.
pub fn synthetic_image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let c0 = color(&mut rng);
    let c1 = color(&mut rng);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let freq = rng.gen_range(1.0..4.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let ripple = rng.gen_range(0.0..0.15);
    let n_shapes = rng.gen_range(3..8);
    struct Shape {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        rect: bool,
        soft: f64,
        color: [f64; 3],
        alpha: f64,
    }
    let shapes: Vec<Shape> = (0..n_shapes)
        .map(|_| Shape {
            cx: rng.gen(),
            cy: rng.gen(),
            rx: rng.gen_range(0.08..0.4),
            ry: rng.gen_range(0.08..0.4),
            rect: rng.gen_bool(0.4),
            soft: rng.gen_range(0.005..0.08),
            color: color(&mut rng),
            alpha: rng.gen_range(0.5..1.0),
        })
        .collect();
    let noise = rng.gen_range(0.0..0.03);
    let mut out = Tensor::zeros(&[size, size, 3]);
    let s = size as f64;
    for py in 0..size {
        for px in 0..size {
            let (u, v) = ((px as f64 + 0.5) / s, (py as f64 + 0.5) / s);
            let t = (0.5 + (u - 0.5) * ca + (v - 0.5) * sa).clamp(0.0, 1.0);
            let wave = ripple * (freq * std::f64::consts::TAU * (u * sa - v * ca) + phase).sin();
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = c0[c] * (1.0 - t) + c1[c] * t + wave;
            }
            for sh in &shapes {
                let dx = (u - sh.cx) / sh.rx;
                let dy = (v - sh.cy) / sh.ry;
                let d = if sh.rect { dx.abs().max(dy.abs()) } else { (dx * dx + dy * dy).sqrt() };
                let cover = sh.alpha * (1.0 - smoothstep(1.0 - sh.soft / sh.rx.min(sh.ry), 1.0, d));
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - cover) + sh.color[c] * cover;
                }
            }
            let base = (py * size + px) * 3;
            for c in 0..3 {
                let n = noise * (rng.gen::<f64>() - 0.5) * 2.0;
                // 8-bit quantisation, as a real photograph would be stored.
                out.data_mut()[base + c] = ((rgb[c] + n).clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }
    out
}

/// `count` images with seeds derived from `seed`.
pub fn synthetic_set(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|i| synthetic_image(size, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_image(32, 5);
        assert_eq!(a, synthetic_image(32, 5));
        assert_ne!(a, synthetic_image(32, 6));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a.shape(), &[32, 32, 3]);
    }
}
