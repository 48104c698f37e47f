//! Seeded synthetic images with natural-image-like statistics: smooth
//! gradients, soft blobs and low-amplitude noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageU8;

/// A smooth random image. Channels share structure so colour is correlated.
pub fn smooth_image(rng: &mut impl Rng, width: usize, height: usize, channels: usize) -> ImageU8 {
    let base: Vec<f64> = (0..channels).map(|_| rng.gen_range(60.0..190.0)).collect();
    let (gx, gy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let blobs: Vec<[f64; 4]> = (0..rng.gen_range(2..6))
        .map(|_| {
            [
                rng.gen_range(0.0..width as f64),
                rng.gen_range(0.0..height as f64),
                rng.gen_range(2.0..(width.max(height) as f64 / 2.0).max(3.0)),
                rng.gen_range(-70.0..70.0),
            ]
        })
        .collect();
    let tint: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.6..1.2)).collect();
    let (fx, fy, amp) = (
        rng.gen_range(0.05..0.4),
        rng.gen_range(0.05..0.4),
        rng.gen_range(0.0..20.0),
    );
    let plane = width * height;
    let mut data = vec![0u8; plane * channels];
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let mut shape = 40.0 * (gx * xf / width as f64 + gy * yf / height as f64);
            shape += amp * (fx * xf).sin() * (fy * yf).cos();
            for &[cx, cy, r, a] in &blobs {
                let d2 = ((xf - cx).powi(2) + (yf - cy).powi(2)) / (r * r);
                shape += a * (-d2).exp();
            }
            for c in 0..channels {
                let noise = rng.gen_range(-2.0..2.0);
                let v = base[c] + tint[c] * shape + noise;
                data[c * plane + y * width + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageU8::new(width, height, channels, data).expect("dimensions are consistent")
}

pub fn smooth_images(
    n: usize,
    width: usize,
    height: usize,
    channels: usize,
    seed: u64,
) -> Vec<ImageU8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| smooth_image(&mut rng, width, height, channels))
        .collect()
}

/// Independent uniform bytes.
pub fn noise_image(rng: &mut impl Rng, width: usize, height: usize, channels: usize) -> ImageU8 {
    let data = (0..width * height * channels).map(|_| rng.gen()).collect();
    ImageU8::new(width, height, channels, data).expect("dimensions are consistent")
}
