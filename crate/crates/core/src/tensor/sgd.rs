use super::{Result, Tensor, TensorError};

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Option<Vec<f64>>>,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    /// Momentum buffer of parameter `index`, if a step has touched it.
    pub fn buffer(&self, index: usize) -> Option<&[f64]> {
        self.buffers.get(index).and_then(|b| b.as_deref())
    }

    pub fn set_buffer(&mut self, index: usize, values: Vec<f64>) {
        if self.buffers.len() <= index {
            self.buffers.resize(index + 1, None);
        }
        self.buffers[index] = Some(values);
    }

    pub fn num_buffers(&self) -> usize {
        self.buffers.len()
    }
}

/// One update over `params`, then zeroes their gradients:
/// `v = momentum * v + (grad + weight_decay * p)`, `p -= lr * v`.
pub fn sgd_step(params: &mut [&mut Tensor], state: &mut SgdState) -> Result<()> {
    if let Some(index) = params.iter().position(|p| p.grad().is_none()) {
        return Err(TensorError::MissingGradient { index });
    }
    if state.buffers.len() < params.len() {
        state.buffers.resize(params.len(), None);
    }
    for (i, p) in params.iter_mut().enumerate() {
        let n = p.len();
        let buf = state.buffers[i].get_or_insert_with(|| vec![0.0; n]);
        if buf.len() != n {
            return Err(TensorError::DataLength { shape: p.shape().to_vec(), got: buf.len() });
        }
        let grad = p.grad().expect("checked above").to_vec();
        for ((v, g), w) in buf.iter_mut().zip(&grad).zip(p.data_mut().iter_mut()) {
            *v = state.momentum * *v + (g + state.weight_decay * *w);
            *w -= state.learning_rate * *v;
        }
        if let Some(g) = p.grad_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor {
        let mut t = Tensor::full(&[1], v).with_grad();
        t.accumulate_grad(&[g]).unwrap();
        t
    }

    #[test]
    fn plain_step() {
        let mut p = param(1.0, 1.0);
        let mut s = SgdState::new(0.1, 0.0, 0.0);
        sgd_step(&mut [&mut p], &mut s).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(p.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn two_momentum_steps_match_hand_computation() {
        let (lr, mu, g) = (0.1, 0.9, 0.5);
        let mut p = param(2.0, g);
        let mut s = SgdState::new(lr, mu, 0.0);
        sgd_step(&mut [&mut p], &mut s).unwrap();
        let v1 = g;
        let after_first = 2.0 - lr * v1;
        assert!((p.data()[0] - after_first).abs() < 1e-15);
        p.accumulate_grad(&[g]).unwrap();
        sgd_step(&mut [&mut p], &mut s).unwrap();
        let second_update = lr * (g + mu * v1);
        assert!((after_first - p.data()[0] - second_update).abs() < 1e-15);
        assert!((s.buffer(0).unwrap()[0] - (g + mu * v1)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only() {
        let mut p = param(1.0, 0.0);
        let mut s = SgdState::new(0.0005, 0.0, 0.0005);
        sgd_step(&mut [&mut p], &mut s).unwrap();
        assert_eq!(p.data()[0], 1.0 - 0.0005 * 0.0005);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut a = param(1.0, 1.0);
        let mut b = Tensor::full(&[2], 1.0).with_grad();
        let mut s = SgdState::new(0.1, 0.9, 0.0);
        assert_eq!(
            sgd_step(&mut [&mut a, &mut b], &mut s),
            Err(TensorError::MissingGradient { index: 1 })
        );
        // nothing moved
        assert_eq!(a.data()[0], 1.0);
    }

    #[test]
    fn buffers_start_at_zero() {
        let mut p = param(0.0, 2.0);
        let mut s = SgdState::new(1.0, 0.9, 0.0);
        assert!(s.buffer(0).is_none());
        sgd_step(&mut [&mut p], &mut s).unwrap();
        // zero-initialised buffer: v = 0.9 * 0 + 2
        assert_eq!(s.buffer(0).unwrap(), &[2.0]);
    }
}
