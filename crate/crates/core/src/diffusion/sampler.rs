use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{standard_normal, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Noise predictor `ε̂(z_t, t, y_cond)`.
pub trait Denoiser {
    fn evaluate(&self, z_t: &Tensor3, t: usize, y_cond: &[Tensor3]) -> Result<Tensor3>;
}

/// Posterior-mean noise predictor for an i.i.d. `N(μ₀, σ₀²)` prior on `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGaussianDenoiser {
    pub mu0: f64,
    pub sigma0: f64,
    sched: DiffusionSchedule,
}

pub fn analytic_gaussian_denoiser(
    mu0: f64,
    sigma0: f64,
    sched: &DiffusionSchedule,
) -> Result<AnalyticGaussianDenoiser> {
    if !(sigma0 >= 0.0 && sigma0.is_finite() && mu0.is_finite()) {
        return Err(Error::config(
            "sigma0",
            format!("must be finite and non-negative, got {sigma0}"),
        ));
    }
    Ok(AnalyticGaussianDenoiser {
        mu0,
        sigma0,
        sched: sched.clone(),
    })
}

/// Closed-form `E[x0 | x_t]` and the implied `ε̂` for one element.
fn gaussian_eps(x: f64, mu0: f64, var0: f64, alpha_bar: f64) -> f64 {
    let sa = alpha_bar.sqrt();
    let gain = sa * var0 / (alpha_bar * var0 + 1.0 - alpha_bar);
    let x0 = mu0 + gain * (x - sa * mu0);
    (x - sa * x0) / (1.0 - alpha_bar).sqrt()
}

impl AnalyticGaussianDenoiser {
    /// `E[x0 | x_t]` for one element.
    pub fn posterior_mean(&self, x_t: f64, t: usize) -> f64 {
        let ab = self.sched.alpha_bar(t);
        let sa = ab.sqrt();
        let var0 = self.sigma0 * self.sigma0;
        self.mu0 + sa * var0 / (ab * var0 + 1.0 - ab) * (x_t - sa * self.mu0)
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn evaluate(&self, z_t: &Tensor3, t: usize, _y_cond: &[Tensor3]) -> Result<Tensor3> {
        self.sched.check_t(t)?;
        let ab = self.sched.alpha_bar(t);
        let var0 = self.sigma0 * self.sigma0;
        Ok(z_t.map(|x| gaussian_eps(x, self.mu0, var0, ab)))
    }
}

/// Gaussian denoiser whose prior mean is taken elementwise from the conditioning latents.
///
/// Each conditioning latent must match `z_t` spatially and carry a whole number of
/// `z_t`-sized channel blocks; every block counts as one prior sample, so a fused
/// `[ego | others…]` stack and a plain list behave the same. Without conditions the
/// prior mean is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionPriorDenoiser {
    pub sigma0: f64,
    sched: DiffusionSchedule,
}

impl ConditionPriorDenoiser {
    pub fn new(sigma0: f64, sched: &DiffusionSchedule) -> Result<Self> {
        if !(sigma0 >= 0.0 && sigma0.is_finite()) {
            return Err(Error::config(
                "sigma0",
                format!("must be finite and non-negative, got {sigma0}"),
            ));
        }
        Ok(Self {
            sigma0,
            sched: sched.clone(),
        })
    }

    pub fn prior_mean(&self, like: &Tensor3, y_cond: &[Tensor3]) -> Result<Tensor3> {
        let (h, w, c) = like.shape();
        let mut sum = Tensor3::zeros(h, w, c);
        let mut blocks = 0usize;
        for y in y_cond {
            let (yh, yw, yc) = y.shape();
            if yh != h || yw != w || c == 0 || yc % c != 0 {
                return Err(Error::ShapeMismatch {
                    expected: (h, w, c),
                    got: y.shape(),
                });
            }
            for b in 0..yc / c {
                for (dst, src) in sum.as_mut_slice().chunks_exact_mut(c).zip(y.cells()) {
                    for (d, s) in dst.iter_mut().zip(&src[b * c..(b + 1) * c]) {
                        *d += s;
                    }
                }
                blocks += 1;
            }
        }
        if blocks > 0 {
            let n = blocks as f64;
            sum.as_mut_slice().iter_mut().for_each(|v| *v /= n);
        }
        Ok(sum)
    }
}

impl Denoiser for ConditionPriorDenoiser {
    fn evaluate(&self, z_t: &Tensor3, t: usize, y_cond: &[Tensor3]) -> Result<Tensor3> {
        self.sched.check_t(t)?;
        let mu = self.prior_mean(z_t, y_cond)?;
        let ab = self.sched.alpha_bar(t);
        let var0 = self.sigma0 * self.sigma0;
        let data = z_t
            .as_slice()
            .iter()
            .zip(mu.as_slice())
            .map(|(&x, &m)| gaussian_eps(x, m, var0, ab))
            .collect();
        Tensor3::from_vec(z_t.height(), z_t.width(), z_t.channels(), data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Ddpm,
    Ddim,
}

/// Variance of the noise injected by an ancestral step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DdpmVariance {
    /// `σ² = β`.
    #[default]
    Beta,
    /// `σ² = β̃ = β·(1−ᾱ_prev)/(1−ᾱ_t)`.
    PosteriorBeta,
}

fn check_pair(sched: &DiffusionSchedule, t: usize, t_prev: usize) -> Result<()> {
    sched.check_t(t)?;
    if t_prev >= t {
        return Err(Error::InvalidTimestep {
            t: t_prev,
            len: sched.steps(),
            reason: "t_prev must be smaller than t",
        });
    }
    Ok(())
}

/// One ancestral step `x_t → x_{t−1}` with `σ² = β_t`; no noise is added at `t = 1`.
pub fn ddpm_step<R: Rng + ?Sized>(
    x_t: &Tensor3,
    t: usize,
    eps_hat: &Tensor3,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Tensor3> {
    ddpm_step_strided(x_t, t, t.saturating_sub(1), eps_hat, sched, DdpmVariance::Beta, rng)
}

/// Ancestral step `x_t → x_{t_prev}` using the effective `β = 1 − ᾱ_t/ᾱ_prev` of the jump.
///
/// For `t_prev = t − 1` this is exactly the single-step update with the stored `β_t`.
pub fn ddpm_step_strided<R: Rng + ?Sized>(
    x_t: &Tensor3,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor3,
    sched: &DiffusionSchedule,
    variance: DdpmVariance,
    rng: &mut R,
) -> Result<Tensor3> {
    check_pair(sched, t, t_prev)?;
    x_t.ensure_same_shape(eps_hat)?;
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let (alpha, beta) = if t_prev + 1 == t {
        (sched.alpha(t), sched.beta(t))
    } else {
        let a = ab / ab_prev;
        (a, 1.0 - a)
    };
    let coef = beta / (1.0 - ab).sqrt();
    let scale = 1.0 / alpha.sqrt();
    let mean = x_t.axpby(scale, eps_hat, -scale * coef)?;
    if t_prev == 0 {
        return Ok(mean);
    }
    let var = match variance {
        DdpmVariance::Beta => beta,
        DdpmVariance::PosteriorBeta => beta * (1.0 - ab_prev) / (1.0 - ab),
    };
    let z = standard_normal(x_t.shape(), rng);
    mean.axpby(1.0, &z, var.sqrt())
}

/// Generalized DDIM step `x_t → x_{t_prev}`; `eta = 0` is deterministic and draws nothing.
pub fn ddim_step<R: Rng + ?Sized>(
    x_t: &Tensor3,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor3,
    sched: &DiffusionSchedule,
    eta: f64,
    rng: &mut R,
) -> Result<Tensor3> {
    check_pair(sched, t, t_prev)?;
    x_t.ensure_same_shape(eps_hat)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::config(
            "diffusion.eta",
            format!("must be finite and non-negative, got {eta}"),
        ));
    }
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let x0_hat = x_t.axpby(1.0 / ab.sqrt(), eps_hat, -(1.0 - ab).sqrt() / ab.sqrt())?;
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let out = x0_hat.axpby(ab_prev.sqrt(), eps_hat, dir)?;
    if sigma == 0.0 {
        return Ok(out);
    }
    let z = standard_normal(x_t.shape(), rng);
    out.axpby(1.0, &z, sigma)
}

/// `n_steps` timesteps spaced uniformly from `T` down to 1.
pub fn timesteps(total: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > total {
        return Err(Error::config(
            "diffusion.steps",
            format!("must be between 1 and {total}, got {n_steps}"),
        ));
    }
    if n_steps == 1 {
        return Ok(vec![total]);
    }
    let (tf, nf) = (total as f64, (n_steps - 1) as f64);
    Ok((0..n_steps)
        .map(|i| (tf + (1.0 - tf) * i as f64 / nf).round() as usize)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub kind: SamplerKind,
    pub n_steps: usize,
    /// DDIM stochasticity.
    pub eta: f64,
    pub variance: DdpmVariance,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddpm,
            n_steps: 8,
            eta: 0.0,
            variance: DdpmVariance::Beta,
        }
    }
}

/// Draws `z_T ~ N(0, I)` of `shape` and runs the chosen sampler over the strided timesteps,
/// finishing at `t = 0`.
pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    y_cond: &[Tensor3],
    shape: (usize, usize, usize),
    sched: &DiffusionSchedule,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<Tensor3> {
    let mut ts = timesteps(sched.steps(), opts.n_steps)?;
    ts.push(0);
    let mut x = standard_normal(shape, rng);
    for pair in ts.windows(2) {
        let (t, t_prev) = (pair[0], pair[1]);
        let eps_hat = denoiser.evaluate(&x, t, y_cond)?;
        x = match opts.kind {
            SamplerKind::Ddpm => ddpm_step_strided(&x, t, t_prev, &eps_hat, sched, opts.variance, rng)?,
            SamplerKind::Ddim => ddim_step(&x, t, t_prev, &eps_hat, sched, opts.eta, rng)?,
        };
    }
    Ok(x)
}
