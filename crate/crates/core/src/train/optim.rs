use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropParams {
    /// Decay of the squared-gradient average.
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropParams {
    fn default() -> Self {
        RmsPropParams {
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

/// RMSProp without momentum. One accumulator per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub params: RmsPropParams,
    pub accumulators: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(params: RmsPropParams, shapes: &[&Tensor]) -> Self {
        RmsProp {
            params,
            accumulators: shapes.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
        }
    }

    /// Applies one update to every parameter.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.accumulators.len() {
            return Err(Error::Dimension(format!(
                "{} parameters, {} gradients, {} accumulators",
                params.len(),
                grads.len(),
                self.accumulators.len()
            )));
        }
        for ((p, g), s) in params.into_iter().zip(grads).zip(&mut self.accumulators) {
            rmsprop_step(p, g, s, self.params, lr)?;
        }
        Ok(())
    }
}

/// `s ← ρ·s + (1−ρ)·g²; w ← w − lr·g / (√s + ε)`
pub fn rmsprop_step(
    param: &mut Tensor,
    grad: &Tensor,
    accumulator: &mut Tensor,
    hp: RmsPropParams,
    lr: f64,
) -> Result<()> {
    param.expect_same_shape(grad)?;
    param.expect_same_shape(accumulator)?;
    let rho = hp.rho;
    for ((w, &g), s) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(accumulator.data_mut())
    {
        let g = g as f64;
        let s_new = rho * *s as f64 + (1.0 - rho) * g * g;
        *s = s_new as f32;
        *w = (*w as f64 - lr * g / ((*s as f64).sqrt() + hp.epsilon)) as f32;
    }
    param.debug_check_finite();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_decays_accumulator_only() {
        let mut w = Tensor::full([3], 0.5);
        let mut s = Tensor::full([3], 0.2);
        rmsprop_step(&mut w, &Tensor::zeros([3]), &mut s, RmsPropParams::default(), 1e-3).unwrap();
        assert_eq!(w, Tensor::full([3], 0.5));
        for &v in s.data() {
            assert!((v - 0.18).abs() < 1e-7);
        }
    }

    #[test]
    fn first_step_by_hand() {
        let mut w = Tensor::zeros([1]);
        let mut s = Tensor::zeros([1]);
        rmsprop_step(&mut w, &Tensor::ones([1]), &mut s, RmsPropParams::default(), 1e-3).unwrap();
        assert!((s.data()[0] - 0.1).abs() < 1e-7);
        // 0.001 / (sqrt(0.1) + 1e-7)
        assert!((w.data()[0] + 0.0031623).abs() < 1e-7, "{}", w.data()[0]);
    }

    #[test]
    fn step_size_is_gradient_scale_invariant() {
        let run = |g: f32| {
            let mut w = Tensor::zeros([1]);
            let mut s = Tensor::zeros([1]);
            let mut last = 0.0;
            for _ in 0..20 {
                let before = w.data()[0];
                rmsprop_step(&mut w, &Tensor::full([1], g), &mut s, RmsPropParams::default(), 1e-3)
                    .unwrap();
                last = (w.data()[0] - before).abs();
            }
            last
        };
        let (small, large) = (run(0.01), run(10.0));
        assert!((small - large).abs() / large < 1e-3, "{small} vs {large}");
    }

    #[test]
    fn accumulators_stay_non_negative() {
        let mut rng = crate::tensor::Rng::new(4);
        let mut w = Tensor::zeros([100]);
        let mut s = Tensor::zeros([100]);
        for _ in 0..50 {
            let g = Tensor::uniform([100], -5.0, 5.0, &mut rng);
            rmsprop_step(&mut w, &g, &mut s, RmsPropParams::default(), 1e-2).unwrap();
            assert!(s.data().iter().all(|&v| v >= 0.0));
        }
    }
}
