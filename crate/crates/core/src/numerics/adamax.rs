//! Adamax optimizer with an exponentially decayed learning rate.

use crate::error::{Error, Result};

use super::Tensor;

pub const BETA1: f32 = 0.9;
pub const BETA2: f32 = 0.999;
pub const EPSILON: f32 = 1e-8;

/// Per-parameter moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adamax {
    pub lr: f32,
    pub decay: f32,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub u: Vec<Vec<f32>>,
}

impl Adamax {
    /// Buffers sized for `sizes` parameter tensors, in the order they will be
    /// passed to [`step`](Self::step).
    pub fn new(lr: f32, decay: f32, sizes: &[usize]) -> Self {
        Self {
            lr,
            decay,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            u: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn learning_rate(&self, epoch: usize) -> f32 {
        self.lr * self.decay.powi(epoch as i32)
    }

    /// One update of every parameter from its gradient.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        epoch: usize,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Training(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(bad) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient in tensor {bad}"
            )));
        }
        self.step += 1;
        let lr =
            self.learning_rate(epoch) / (1.0 - BETA1.powi(self.step.min(i32::MAX as u64) as i32));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Training(format!("size mismatch in tensor {i}")));
            }
            let (m, u) = (&mut self.m[i], &mut self.u[i]);
            for (((w, &gv), mv), uv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(u.iter_mut())
            {
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                *uv = (BETA2 * *uv).max(gv.abs());
                *w -= lr * *mv / (*uv + EPSILON);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::from_vec(vec![1.0, -1.0]);
        let g = Tensor::from_vec(vec![2.0, -0.5]);
        let mut opt = Adamax::new(0.1, 1.0, &[2]);
        opt.step(&mut [&mut p], &[g], 0).unwrap();
        // m̂ = g, u = |g| so each weight moves by lr·sign(g).
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_schedule() {
        let opt = Adamax::new(1e-3, 0.99, &[]);
        assert!((opt.learning_rate(2) - 1e-3 * 0.9801).abs() < 1e-9);
    }

    #[test]
    fn minimises_quadratic() {
        let mut p = Tensor::from_vec(vec![5.0]);
        let mut opt = Adamax::new(0.1, 1.0, &[1]);
        for _ in 0..500 {
            let g = Tensor::from_vec(vec![2.0 * (p.data()[0] - 1.5)]);
            opt.step(&mut [&mut p], &[g], 0).unwrap();
        }
        assert!((p.data()[0] - 1.5).abs() < 0.05);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = Tensor::from_vec(vec![0.0]);
        let mut opt = Adamax::new(0.1, 1.0, &[1]);
        let err = opt.step(&mut [&mut p], &[Tensor::from_vec(vec![f32::NAN])], 0);
        assert!(matches!(err, Err(Error::Training(_))));
        assert_eq!(p.data(), &[0.0]);
    }
}
