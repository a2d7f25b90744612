use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64, params: &[&Tensor]) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.numel() != m.len() {
                return Err(Error::Shape(format!(
                    "parameter {:?} with gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(self.step as f64);
        let c2 = 1.0 - b2.powf(self.step as f64);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((theta, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *theta -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut theta = Tensor::from_vec(vec![1.5, -2.0]);
        let mut adam = AdamState::new(1e-3, &[&theta]);
        adam.step(&mut [&mut theta], &[Tensor::zeros(&[2])])
            .unwrap();
        assert_eq!(theta.data(), &[1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so the update is η·g/(|g|+ε).
        let mut theta = Tensor::scalar(1.0);
        let mut adam = AdamState::new(1e-3, &[&theta]);
        adam.step(&mut [&mut theta], &[Tensor::scalar(0.37)])
            .unwrap();
        let expected = 1.0 - 1e-3 * 0.37 / (0.37 + 1e-8);
        assert!((theta.item().unwrap() - expected).abs() < 1e-15);
        assert!((1.0 - theta.item().unwrap() - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut theta = Tensor::scalar(1.0);
        let mut adam = AdamState::new(0.01, &[&theta]);
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * theta.item().unwrap());
            adam.step(&mut [&mut theta], &[g]).unwrap();
        }
        assert!(
            theta.item().unwrap().abs() < 0.01,
            "{}",
            theta.item().unwrap()
        );
        assert_eq!(adam.steps_taken(), 500);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut theta = Tensor::scalar(1.0);
        let mut adam = AdamState::new(0.01, &[&theta]);
        assert!(adam
            .step(&mut [&mut theta], &[Tensor::zeros(&[2])])
            .is_err());
    }
}
