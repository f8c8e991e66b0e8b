//! Ancestral and multistep samplers.

use super::process::{guided_noise, predict_x0, reverse_step};
use super::{Denoiser, LatentCode, NoiseSchedule, DEFAULT_FAST_STEPS, DEFAULT_GUIDANCE};
use crate::error::{invalid, Result};
use crate::fusion::FeatureVolume;
use crate::rng::{gaussian_vec, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverOrder {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    /// Full `T`-step stochastic reverse chain.
    Ancestral,
    /// Deterministic multistep solver over a uniform sub-schedule.
    Fast { steps: usize, order: SolverOrder },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Classifier-free guidance scale `w`.
    pub guidance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Fast {
                steps: DEFAULT_FAST_STEPS,
                order: SolverOrder::Second,
            },
            guidance: DEFAULT_GUIDANCE,
        }
    }
}

fn initial_noise(shape: &[usize], s: &NoiseSchedule, rng: &mut crate::rng::StreamRng) -> Result<LatentCode> {
    let n = shape.iter().product();
    LatentCode::new(shape.to_vec(), gaussian_vec(rng, n), s.steps())
}

/// Runs the configured sampler from the noise fixed by `seed`.
pub fn sample(
    denoiser: &dyn Denoiser,
    condition: Option<&FeatureVolume>,
    s: &NoiseSchedule,
    shape: &[usize],
    config: &SamplerConfig,
    seed: u64,
) -> Result<LatentCode> {
    match config.kind {
        SamplerKind::Ancestral => sample_ancestral(denoiser, condition, s, shape, config.guidance, seed),
        SamplerKind::Fast { steps, order } => {
            sample_fast_observed(denoiser, condition, s, shape, config.guidance, steps, order, seed, &mut |_| {})
        }
    }
}

pub fn sample_ancestral(
    denoiser: &dyn Denoiser,
    condition: Option<&FeatureVolume>,
    s: &NoiseSchedule,
    shape: &[usize],
    w: f64,
    seed: u64,
) -> Result<LatentCode> {
    sample_ancestral_observed(denoiser, condition, s, shape, w, seed, &mut |_| {})
}

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`.
///
/// `x_T` and every step's noise come from one stream seeded by `seed`, in
/// that order. `observe` sees `x_T` and each subsequent state.
pub fn sample_ancestral_observed(
    denoiser: &dyn Denoiser,
    condition: Option<&FeatureVolume>,
    s: &NoiseSchedule,
    shape: &[usize],
    w: f64,
    seed: u64,
    observe: &mut dyn FnMut(&LatentCode),
) -> Result<LatentCode> {
    let mut rng = stream(seed);
    let mut x = initial_noise(shape, s, &mut rng)?;
    observe(&x);
    for t in (1..=s.steps()).rev() {
        let eps = guided_noise(denoiser, &x, t, condition, w)?;
        let noise = if t > 1 {
            gaussian_vec(&mut rng, x.len())
        } else {
            Vec::new()
        };
        x = reverse_step(&x, t, &eps, s, &noise)?;
        observe(&x);
    }
    Ok(x)
}

/// Half log signal-to-noise ratio `λ_t = ln(√ᾱ_t / √(1−ᾱ_t))`.
pub fn half_log_snr(s: &NoiseSchedule, t: usize) -> f64 {
    let ab = s.alpha_bar(t);
    0.5 * (ab / (1.0 - ab)).ln()
}

/// Sub-schedule `T = t_0 > t_1 > … > t_steps = 0`, uniform in `λ`.
///
/// Targets are spaced evenly in `λ` between `t = T` and `t = 1` and snapped
/// to the nearest integer step; the last target is replaced by `0`. Steps
/// are then forced strictly decreasing with room left for the remaining
/// ones, so `steps = T` visits every integer step.
pub fn fast_timesteps(s: &NoiseSchedule, steps: usize) -> Result<Vec<usize>> {
    let total = s.steps();
    if steps == 0 || steps > total {
        return Err(invalid(format!("fast sampler needs 1 <= steps <= {total}, got {steps}")));
    }
    let lams: Vec<f64> = (1..=total).map(|t| half_log_snr(s, t)).collect();
    let (hi, lo) = (lams[total - 1], lams[0]);
    let nearest = |target: f64| {
        let mut best = (1, f64::INFINITY);
        for (i, l) in lams.iter().enumerate() {
            let d = (l - target).abs();
            if d < best.1 {
                best = (i + 1, d);
            }
        }
        best.0
    };
    let mut out = vec![total];
    for i in 1..=steps {
        let snapped = if i == steps {
            0
        } else {
            nearest(hi + (lo - hi) * i as f64 / steps as f64)
        };
        let prev = out[i - 1];
        out.push(snapped.min(prev - 1).max(steps - i));
    }
    Ok(out)
}

pub fn sample_fast(
    denoiser: &dyn Denoiser,
    condition: Option<&FeatureVolume>,
    s: &NoiseSchedule,
    shape: &[usize],
    w: f64,
    steps: usize,
    seed: u64,
) -> Result<LatentCode> {
    sample_fast_observed(denoiser, condition, s, shape, w, steps, SolverOrder::Second, seed, &mut |_| {})
}

/// Multistep solver in data-prediction form.
///
/// With `α = √ᾱ`, `σ = √(1−ᾱ)` and `λ = ln(α/σ)`, a step from `t` to `s`
/// with `h = λ_s − λ_t` is `x_s = (σ_s/σ_t)·x_t − α_s·(e^{−h} − 1)·D`.
/// First order uses `D = x̂_0(t)`; second order extrapolates from the
/// previous prediction, `D = (1 + 1/2r)·x̂_0(t) − (1/2r)·x̂_0(prev)` with
/// `r = h_prev / h`. The first step is always first order, and the last
/// step (to `ᾱ = 1`) returns `x̂_0` directly.
#[allow(clippy::too_many_arguments)]
pub fn sample_fast_observed(
    denoiser: &dyn Denoiser,
    condition: Option<&FeatureVolume>,
    s: &NoiseSchedule,
    shape: &[usize],
    w: f64,
    steps: usize,
    order: SolverOrder,
    seed: u64,
    observe: &mut dyn FnMut(&LatentCode),
) -> Result<LatentCode> {
    let times = fast_timesteps(s, steps)?;
    let mut rng = stream(seed);
    let mut x = initial_noise(shape, s, &mut rng)?;
    observe(&x);

    let coeffs = |t: usize| {
        let ab = s.alpha_bar(t);
        (ab.sqrt(), (1.0 - ab).sqrt(), half_log_snr(s, t))
    };
    let mut prev: Option<(Vec<f64>, f64)> = None;
    for pair in times.windows(2) {
        let (t, next) = (pair[0], pair[1]);
        let eps = guided_noise(denoiser, &x, t, condition, w)?;
        let x0 = predict_x0(&x, t, &eps, s)?;
        if next == 0 {
            x = LatentCode::new(shape.to_vec(), x0, 0)?;
            observe(&x);
            break;
        }
        let (_, sig_t, lam_t) = coeffs(t);
        let (a_s, sig_s, lam_s) = coeffs(next);
        let h = lam_s - lam_t;
        let ratio = sig_s / sig_t;
        let phi = -a_s * (-h).exp_m1();
        let data: Vec<f64> = match (&prev, order) {
            (Some((x0_prev, h_prev)), SolverOrder::Second) => {
                let k = 0.5 * h / h_prev;
                x.data()
                    .iter()
                    .zip(&x0)
                    .zip(x0_prev)
                    .map(|((xt, d), dp)| ratio * xt + phi * ((1.0 + k) * d - k * dp))
                    .collect()
            }
            _ => x.data().iter().zip(&x0).map(|(xt, d)| ratio * xt + phi * d).collect(),
        };
        x = LatentCode::new(shape.to_vec(), data, next)?;
        observe(&x);
        prev = Some((x0, h));
    }
    Ok(x)
}
