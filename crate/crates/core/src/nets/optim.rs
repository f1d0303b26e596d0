use super::{NetError, NetResult};
use serde::{Deserialize, Serialize};

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Self {
        assert!(lr > 0.0);
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One descent step on `params`. The gradient is of the loss (descends).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], context: &str) -> NetResult<()> {
        assert_eq!(params.len(), self.m.len(), "optimizer length");
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(NetError::NonFiniteGrad {
                context: context.to_string(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        debug_assert!(params.iter().all(|p| p.is_finite()));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_move() {
        let mut opt = Adam::new(3, 1e-3);
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        opt.step(&mut params, &[0.0, 0.0, 0.0], "test").unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_is_signed_lr() {
        // With bias correction, m̂ = g and v̂ = g², so the first move is
        // −lr·g/(|g| + eps) ≈ −lr·sign(g).
        let mut opt = Adam::new(2, 0.01);
        let mut params = vec![0.0, 0.0];
        opt.step(&mut params, &[3.0, -0.2], "test").unwrap();
        assert!((params[0] - (-0.01)).abs() < 1e-7);
        assert!((params[1] - 0.01).abs() < 1e-7);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut opt = Adam::new(2, 5e-4);
            let mut params = vec![0.3, -0.3];
            for k in 0..100 {
                let g = [params[0] - 1.0 + (k as f64 * 0.01).sin(), params[1] * 2.0];
                opt.step(&mut params, &g, "test").unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut opt = Adam::new(1, 1e-3);
        let mut params = vec![0.0];
        let err = opt.step(&mut params, &[f64::NAN], "critic loss");
        assert!(matches!(err, Err(NetError::NonFiniteGrad { .. })));
        let msg = format!("{}", err.unwrap_err());
        assert!(msg.contains("critic loss"));
    }

    #[test]
    fn converges_on_quadratic() {
        let mut opt = Adam::new(1, 0.05);
        let mut params = vec![5.0];
        for _ in 0..2000 {
            let g = [2.0 * (params[0] - 1.5)];
            opt.step(&mut params, &g, "test").unwrap();
        }
        assert!((params[0] - 1.5).abs() < 1e-3, "got {}", params[0]);
    }
}
