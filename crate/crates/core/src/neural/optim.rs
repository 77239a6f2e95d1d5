//! NAdam with a constant momentum schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NAdamHyper {
    /// Learning rate η.
    pub lr: f64,
    /// First-moment decay μ.
    pub mu: f64,
    /// Second-moment decay ν.
    pub nu: f64,
    pub eps: f64,
}

impl Default for NAdamHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            mu: 0.9,
            nu: 0.999,
            eps: 1e-7,
        }
    }
}

impl NAdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.mu)
            && (0.0..1.0).contains(&self.nu)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid NAdam hyperparameters {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NAdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub n: Vec<f64>,
    pub hyper: NAdamHyper,
}

impl NAdamState {
    pub fn new(len: usize, hyper: NAdamHyper) -> Self {
        Self {
            t: 0,
            m: vec![0.0; len],
            n: vec![0.0; len],
            hyper,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update of `theta` from gradient `g`:
    ///
    /// ```text
    /// ĝ = g / (1 - μ^t)
    /// m = μ m + (1 - μ) g          m̂ = m / (1 - μ^(t+1))
    /// n = ν n + (1 - ν) g²         n̂ = n / (1 - ν^t)
    /// m̄ = (1 - μ) ĝ + μ m̂
    /// θ = θ - η m̄ / (√n̂ + ε)
    /// ```
    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                theta.len(),
                g.len()
            )));
        }
        self.t += 1;
        let NAdamHyper { lr, mu, nu, eps } = self.hyper;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let mu_t = 1.0 - mu.powi(t);
        let mu_t1 = 1.0 - mu.powi(t.saturating_add(1));
        let nu_t = 1.0 - nu.powi(t);
        for i in 0..theta.len() {
            let gi = g[i];
            let g_hat = gi / mu_t;
            self.m[i] = mu * self.m[i] + (1.0 - mu) * gi;
            let m_hat = self.m[i] / mu_t1;
            self.n[i] = nu * self.n[i] + (1.0 - nu) * gi * gi;
            let n_hat = self.n[i] / nu_t;
            let m_bar = (1.0 - mu) * g_hat + mu * m_hat;
            theta[i] -= lr * m_bar / (n_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Free-function form of [`NAdamState::step`].
pub fn nadam_step(state: &mut NAdamState, theta: &mut [f64], g: &[f64]) -> Result<()> {
    state.step(theta, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = NAdamState::new(3, NAdamHyper::default());
        let mut th = vec![0.3, -1.0, 2.0];
        s.step(&mut th, &[0.0; 3]).unwrap();
        assert_eq!(th, vec![0.3, -1.0, 2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_scalar_step_by_hand() {
        // t = 1, g = 1: ĝ = 1/0.1 = 10, m = 0.1, m̂ = 0.1/0.19,
        // n = 0.001, n̂ = 1, m̄ = 0.1·10 + 0.9·0.1/0.19 = 1 + 9/19.
        let m_bar = 1.0 + 9.0 / 19.0;
        let want = 1.0 - 0.001 * m_bar / (1.0 + 1e-7);
        let mut s = NAdamState::new(1, NAdamHyper::default());
        let mut th = [1.0];
        s.step(&mut th, &[1.0]).unwrap();
        assert!((th[0] - want).abs() < 1e-12, "{} vs {want}", th[0]);
        assert!((m_bar - 1.473_684_210_526_315_8).abs() < 1e-15);
    }

    #[test]
    fn descends_a_quadratic_bowl() {
        let hyper = NAdamHyper {
            lr: 0.01,
            ..NAdamHyper::default()
        };
        let mut s = NAdamState::new(1, hyper);
        let mut th = [1.0];
        for _ in 0..200 {
            let g = [2.0 * th[0]];
            s.step(&mut th, &g).unwrap();
        }
        assert!(th[0].abs() < 0.1, "{}", th[0]);
    }

    #[test]
    fn deterministic_and_nonnegative_second_moment() {
        let run = || {
            let mut s = NAdamState::new(2, NAdamHyper::default());
            let mut th = vec![0.5, -0.5];
            for k in 0..50 {
                let g = [(k as f64).sin(), -0.3];
                s.step(&mut th, &g).unwrap();
            }
            (s, th)
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
        assert!(a.n.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_misaligned_lengths() {
        let mut s = NAdamState::new(2, NAdamHyper::default());
        assert!(s.step(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(NAdamHyper { mu: 1.0, ..NAdamHyper::default() }.validate().is_err());
    }
}
