use super::{ensure_finite, MathError, MathResult};
use crate::real::{Real, SIGMA_MIN};
use crate::rng::SeedRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Factorized Gaussian over actions. Construction enforces the global
/// stddev floor, so downstream log-densities stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian<R: Real> {
    mean: Vec<R>,
    stddev: Vec<R>,
}

impl<R: Real> DiagonalGaussian<R> {
    pub fn new(mean: Vec<R>, stddev: Vec<R>) -> MathResult<Self> {
        if mean.is_empty() {
            return Err(MathError::EmptyInput {
                op: "DiagonalGaussian::new",
            });
        }
        if mean.len() != stddev.len() {
            return Err(MathError::DimensionMismatch {
                expected: mean.len(),
                got: stddev.len(),
            });
        }
        ensure_finite("DiagonalGaussian::new", &mean)?;
        ensure_finite("DiagonalGaussian::new", &stddev)?;
        let floor = R::of(SIGMA_MIN);
        for (index, &s) in stddev.iter().enumerate() {
            if s < floor {
                return Err(MathError::StddevBelowFloor {
                    index,
                    value: s.as_f64(),
                    floor: SIGMA_MIN,
                });
            }
        }
        Ok(Self { mean, stddev })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![R::zero(); dim], vec![R::one(); dim]).expect("unit Gaussian is valid")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[R] {
        &self.mean
    }

    pub fn stddev(&self) -> &[R] {
        &self.stddev
    }

    pub fn log_prob(&self, x: &[R]) -> MathResult<R> {
        if x.len() != self.dim() {
            return Err(MathError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let half = R::of(0.5);
        let ln_2pi = R::of(LN_2PI);
        let mut lp = R::zero();
        for ((&xi, &mu), &sigma) in x.iter().zip(&self.mean).zip(&self.stddev) {
            let z = (xi - mu) / sigma;
            lp = lp - half * (z * z + ln_2pi) - sigma.ln();
        }
        Ok(lp)
    }

    /// `KL(self ‖ other)`, summed over dimensions.
    pub fn kl(&self, other: &Self) -> MathResult<R> {
        if other.dim() != self.dim() {
            return Err(MathError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let half = R::of(0.5);
        let mut kl = R::zero();
        for i in 0..self.dim() {
            let (m0, s0) = (self.mean[i], self.stddev[i]);
            let (m1, s1) = (other.mean[i], other.stddev[i]);
            let ratio = s0 / s1;
            let dm = (m0 - m1) / s1;
            kl = kl + half * (ratio * ratio + dm * dm - R::one()) - ratio.ln();
        }
        Ok(kl)
    }

    pub fn sample(&self, rng: &mut SeedRng) -> Vec<R> {
        self.mean
            .iter()
            .zip(&self.stddev)
            .map(|(&mu, &sigma)| mu + sigma * rng.normal::<R>())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_log_prob_at_origin() {
        let d = DiagonalGaussian::<f64>::standard(1);
        let lp = d.log_prob(&[0.0]).unwrap();
        assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-15);
    }

    #[test]
    fn log_prob_scales_with_dim_and_point() {
        let d = DiagonalGaussian::<f64>::standard(3);
        let lp = d.log_prob(&[0.0, 0.0, 0.0]).unwrap();
        assert!((lp - 3.0 * (-0.918_938_533_204_672_7)).abs() < 1e-14);
        let lp1 = d.log_prob(&[1.0, 0.0, 0.0]).unwrap();
        assert!((lp1 - (lp - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn log_prob_nonunit_sigma() {
        let d = DiagonalGaussian::new(vec![2.0f64], vec![3.0]).unwrap();
        // N(2, 9) at x=5: −0.5(1 + ln 2π) − ln 3
        let lp = d.log_prob(&[5.0]).unwrap();
        let expect = -0.5 * (1.0 + super::LN_2PI) - 3.0f64.ln();
        assert!((lp - expect).abs() < 1e-15);
    }

    #[test]
    fn kl_self_is_zero() {
        let d = DiagonalGaussian::new(vec![0.3f64, -1.2], vec![0.7, 2.0]).unwrap();
        assert!(d.kl(&d).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kl_mean_shift_only() {
        let p = DiagonalGaussian::new(vec![1.0f64], vec![1.0]).unwrap();
        let q = DiagonalGaussian::new(vec![0.0f64], vec![1.0]).unwrap();
        assert!((p.kl(&q).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form() {
        // KL(N(1, 0.25) ‖ N(0, 1)) = ln 2 + (0.25 + 1)/2 − 1/2 ≈ 0.81815
        let p = DiagonalGaussian::new(vec![1.0f64], vec![0.5]).unwrap();
        let q = DiagonalGaussian::new(vec![0.0f64], vec![1.0]).unwrap();
        let kl = p.kl(&q).unwrap();
        assert!((kl - 0.818_147_180_559_945_4).abs() < 1e-15);
    }

    #[test]
    fn kl_is_asymmetric() {
        let p = DiagonalGaussian::new(vec![0.0f64], vec![2.0]).unwrap();
        let q = DiagonalGaussian::new(vec![0.0f64], vec![0.5]).unwrap();
        assert!((p.kl(&q).unwrap() - q.kl(&p).unwrap()).abs() > 0.1);
    }

    #[test]
    fn rejects_sigma_below_floor() {
        let err = DiagonalGaussian::new(vec![0.0f64], vec![1e-4]);
        assert!(matches!(err, Err(MathError::StddevBelowFloor { .. })));
    }

    #[test]
    fn sample_moments() {
        let d = DiagonalGaussian::new(vec![3.0f64], vec![0.5]).unwrap();
        let mut rng = SeedRng::new(21);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 0.01);
        assert!((var - 0.25).abs() < 0.01);
    }
}
