use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Variance schedule `β_1..β_T` with cumulative products `ᾱ_t`.
///
/// Timesteps are 1-based; `ᾱ_0 = 1` by convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    beta: Vec<f64>,
}

impl TryFrom<RawSchedule> for DiffusionSchedule {
    type Error = Error;
    fn try_from(raw: RawSchedule) -> Result<Self> {
        DiffusionSchedule::from_betas(raw.beta)
    }
}

impl From<DiffusionSchedule> for RawSchedule {
    fn from(s: DiffusionSchedule) -> Self {
        RawSchedule { beta: s.beta }
    }
}

/// Linear `β` from `beta_start` to `beta_end` over `steps` timesteps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("step count must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let beta = if steps == 1 {
        vec![beta_start]
    } else {
        let span = beta_end - beta_start;
        (0..steps)
            .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
            .collect()
    };
    DiffusionSchedule::from_betas(beta)
}

impl DiffusionSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidSchedule("empty beta sequence".into()));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for (i, &b) in beta.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidSchedule(format!("beta_{} = {b} outside (0, 1)", i + 1)));
            }
            let next = acc * (1.0 - b);
            if !(next < acc && next > 0.0) {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar is not strictly decreasing and positive at t = {}",
                    i + 1
                )));
            }
            acc = next;
            alpha_bar.push(acc);
        }
        Ok(Self { beta, alpha_bar })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidTimestep {
                t,
                len: self.steps(),
                reason: "expected 1 <= t <= T",
            });
        }
        Ok(())
    }

    /// `β_t` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·eps`; `t = 0` returns `x0`.
pub fn forward_sample(x0: &Tensor3, t: usize, eps: &Tensor3, sched: &DiffusionSchedule) -> Result<Tensor3> {
    if t > sched.steps() {
        return Err(Error::InvalidTimestep {
            t,
            len: sched.steps(),
            reason: "expected t <= T",
        });
    }
    let ab = sched.alpha_bar(t);
    x0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Mean squared error between true and predicted noise.
pub fn dm_loss(eps: &Tensor3, eps_hat: &Tensor3) -> Result<f64> {
    eps.ensure_same_shape(eps_hat)?;
    if eps.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = eps
        .as_slice()
        .iter()
        .zip(eps_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / eps.len() as f64)
}

/// Standard normal tensor of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(shape: (usize, usize, usize), rng: &mut R) -> Tensor3 {
    let (h, w, c) = shape;
    Tensor3::from_fn(h, w, c, |_, _, _| rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn schedule_examples() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        let s = DiffusionSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        assert_abs_diff_eq!(s.alpha_bar(2), 0.72, epsilon = 1e-15);
        let s = make_schedule(500, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_abs_diff_eq!(s.beta(500), 0.02, epsilon = 1e-17);
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=500 {
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
        assert!(DiffusionSchedule::from_betas(vec![]).is_err());
        assert!(DiffusionSchedule::from_betas(vec![0.1, f64::NAN]).is_err());
    }

    #[test]
    fn schedule_json_round_trip() {
        let s = make_schedule(50, 1e-4, 0.02).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: DiffusionSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<DiffusionSchedule>(r#"{"beta":[1.5]}"#).is_err());
    }

    proptest! {
        #[test]
        fn alpha_bar_strictly_decreasing(n in 1usize..400, a in 1e-5..0.5f64, d in 0.0..0.4f64) {
            let s = make_schedule(n, a, a + d).unwrap();
            for t in 1..=n {
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
            prop_assert!(s.alpha_bar(n) > 0.0);
        }
    }

    #[test]
    fn forward_sample_examples() {
        let s = make_schedule(10, 0.01, 0.2).unwrap();
        let mut rng = rng_from_seed(1);
        let x0 = standard_normal((2, 3, 4), &mut rng);
        let eps = standard_normal((2, 3, 4), &mut rng);
        assert_eq!(forward_sample(&x0, 0, &eps, &s).unwrap(), x0);
        let zero = Tensor3::zeros(2, 3, 4);
        let xt = forward_sample(&x0, 5, &zero, &s).unwrap();
        let k = s.alpha_bar(5).sqrt();
        for (a, b) in xt.as_slice().iter().zip(x0.as_slice()) {
            assert_eq!(*a, k * b);
        }
        assert!(forward_sample(&x0, 5, &Tensor3::zeros(1, 1, 1), &s).is_err());
        assert!(forward_sample(&x0, 11, &eps, &s).is_err());
    }

    #[test]
    fn dm_loss_examples() {
        let mut rng = rng_from_seed(2);
        let e = standard_normal((3, 3, 2), &mut rng);
        assert_eq!(dm_loss(&e, &e).unwrap(), 0.0);
        assert_abs_diff_eq!(dm_loss(&e, &e.map(|v| v + 1.0)).unwrap(), 1.0, epsilon = 1e-12);
        let f = standard_normal((3, 3, 2), &mut rng);
        let mut oracle = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                for k in 0..2 {
                    let d = e.get(r, c, k) - f.get(r, c, k);
                    oracle += d * d;
                }
            }
        }
        assert_abs_diff_eq!(dm_loss(&e, &f).unwrap(), oracle / 18.0, epsilon = 1e-12);
        assert!(dm_loss(&e, &Tensor3::zeros(1, 1, 1)).is_err());
    }
}
