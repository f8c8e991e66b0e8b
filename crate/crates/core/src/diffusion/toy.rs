//! Closed-form denoisers for Gaussian data.
//!
//! For `x_0 ~ N(m, v·I)` the optimal noise predictor is known exactly, which
//! turns sampler checks into comparisons against analytic moments.

use super::{Denoiser, LatentCode, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::fusion::FeatureVolume;

/// `E[x_0 | x_t]` for a scalar Gaussian prior `N(mean, var)`.
///
/// Written as `mean + g·(x_t − √ᾱ·mean)` with
/// `g = √ᾱ·var / (ᾱ·var + 1 − ᾱ)`, which equals
/// `(√ᾱ·var·x_t + (1−ᾱ)·mean) / (ᾱ·var + 1−ᾱ)`.
#[inline]
pub fn posterior_mean(x_t: f64, alpha_bar: f64, mean: f64, var: f64) -> f64 {
    let a = alpha_bar.sqrt();
    let gain = a * var / (alpha_bar * var + 1.0 - alpha_bar);
    mean + gain * (x_t - a * mean)
}

#[inline]
fn eps_from_x0(x_t: f64, x0: f64, alpha_bar: f64) -> f64 {
    (x_t - alpha_bar.sqrt() * x0) / (1.0 - alpha_bar).sqrt()
}

fn check_var(var: f64) -> Result<()> {
    if !(var.is_finite() && var > 0.0) {
        return Err(invalid(format!("data variance must be > 0, got {var}")));
    }
    Ok(())
}

/// Optimal `ε̂` for `x_0 ~ N(data_mean, data_var·I)`.
pub fn analytic_gaussian_denoiser(
    x_t: &LatentCode,
    t: usize,
    s: &NoiseSchedule,
    data_mean: f64,
    data_var: f64,
) -> Result<Vec<f64>> {
    check_var(data_var)?;
    s.check_step(t)?;
    let ab = s.alpha_bar(t);
    Ok(x_t
        .data()
        .iter()
        .map(|&x| eps_from_x0(x, posterior_mean(x, ab, data_mean, data_var), ab))
        .collect())
}

/// Unconditional Gaussian-prior denoiser; the condition is ignored.
#[derive(Clone, Debug)]
pub struct AnalyticGaussianDenoiser {
    schedule: NoiseSchedule,
    pub data_mean: f64,
    pub data_var: f64,
}

impl AnalyticGaussianDenoiser {
    pub fn new(schedule: NoiseSchedule, data_mean: f64, data_var: f64) -> Result<Self> {
        check_var(data_var)?;
        Ok(AnalyticGaussianDenoiser {
            schedule,
            data_mean,
            data_var,
        })
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn predict_noise(&self, x_t: &LatentCode, t: usize, _: Option<&FeatureVolume>) -> Result<Vec<f64>> {
        analytic_gaussian_denoiser(x_t, t, &self.schedule, self.data_mean, self.data_var)
    }
}

/// Gaussian denoiser whose prior mean follows the condition.
///
/// The latent has shape `[C, d', h', w']`. Element `(c, p)` has prior
/// `N(gain[c]·level(p), var)` with `level(p) = scale·F(p)` taken from the
/// first condition channel, or `prior_level` when the condition is absent
/// (or all zero).
#[derive(Clone, Debug)]
pub struct ConditionalGaussianDenoiser {
    schedule: NoiseSchedule,
    pub data_var: f64,
    pub channel_gain: Vec<f64>,
    pub prior_level: f64,
    pub condition_scale: f64,
}

impl ConditionalGaussianDenoiser {
    pub fn new(
        schedule: NoiseSchedule,
        data_var: f64,
        channel_gain: Vec<f64>,
        prior_level: f64,
        condition_scale: f64,
    ) -> Result<Self> {
        check_var(data_var)?;
        if channel_gain.is_empty() {
            return Err(Error::Empty("latent channel gain"));
        }
        Ok(ConditionalGaussianDenoiser {
            schedule,
            data_var,
            channel_gain,
            prior_level,
            condition_scale,
        })
    }

    /// Prior mean of every latent element, in memory order.
    pub fn prior_means(&self, shape: &[usize], condition: Option<&FeatureVolume>) -> Result<Vec<f64>> {
        let channels = self.channel_gain.len();
        if shape.first() != Some(&channels) {
            return Err(Error::Shape(format!(
                "latent shape {shape:?} must lead with {channels} channels"
            )));
        }
        let spatial: usize = shape[1..].iter().product();
        let levels: Vec<f64> = match condition.filter(|c| !c.is_zero()) {
            Some(c) => {
                if c.grid().len() != spatial {
                    return Err(Error::Shape(format!(
                        "condition grid {:?} does not match latent {:?}",
                        c.grid().dims,
                        &shape[1..]
                    )));
                }
                c.channel(0).iter().map(|f| self.condition_scale * f).collect()
            }
            None => vec![self.prior_level; spatial],
        };
        Ok(self
            .channel_gain
            .iter()
            .flat_map(|g| levels.iter().map(move |l| g * l))
            .collect())
    }
}

impl Denoiser for ConditionalGaussianDenoiser {
    fn predict_noise(&self, x_t: &LatentCode, t: usize, condition: Option<&FeatureVolume>) -> Result<Vec<f64>> {
        self.schedule.check_step(t)?;
        let means = self.prior_means(x_t.shape(), condition)?;
        let ab = self.schedule.alpha_bar(t);
        Ok(x_t
            .data()
            .iter()
            .zip(&means)
            .map(|(&x, &m)| eps_from_x0(x, posterior_mean(x, ab, m, self.data_var), ab))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::linear_schedule;
    use crate::volume::GridSpec;

    #[test]
    fn point_mass_prior_returns_mean() {
        for ab in [0.01, 0.5, 0.999] {
            for x in [-4.0, 0.0, 2.5] {
                assert_eq!(posterior_mean(x, ab, 3.0, 1e-300), 3.0);
            }
        }
    }

    #[test]
    fn no_noise_limit_returns_input() {
        let ab = 1.0 - 1e-12;
        for x in [-4.0, 0.3, 2.5] {
            let m = posterior_mean(x, ab, 3.0, 0.25);
            assert!((m - x).abs() < 1e-9);
            assert!(eps_from_x0(x, m, ab).is_finite());
        }
    }

    #[test]
    fn matches_closed_form_expression() {
        for (x, ab, m, v) in [(1.3f64, 0.7f64, 3.0, 0.25), (-2.0, 0.01, 0.5, 4.0), (0.0, 0.99, -1.0, 0.1)] {
            let direct = (ab.sqrt() * v * x + (1.0 - ab) * m) / (ab * v + 1.0 - ab);
            assert!((posterior_mean(x, ab, m, v) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_quadrature_posterior() {
        // Bayes posterior mean by brute-force integration over x0
        let (m, v) = (3.0f64, 0.25f64);
        for (x_t, ab) in [(2.0f64, 0.6f64), (0.3, 0.05), (3.4, 0.95)] {
            let (mut num, mut den) = (0.0, 0.0);
            let n = 200_000;
            let (lo, hi) = (m - 12.0 * v.sqrt(), m + 12.0 * v.sqrt());
            let h = (hi - lo) / n as f64;
            for i in 0..=n {
                let x0 = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let prior = (-(x0 - m) * (x0 - m) / (2.0 * v)).exp();
                let r = x_t - ab.sqrt() * x0;
                let like = (-(r * r) / (2.0 * (1.0 - ab))).exp();
                num += w * x0 * prior * like;
                den += w * prior * like;
            }
            let quad = num / den;
            assert!((posterior_mean(x_t, ab, m, v) - quad).abs() < 1e-6, "{x_t} {ab}");
        }
    }

    #[test]
    fn rejects_degenerate_variance() {
        let s = linear_schedule(10, 1e-4, 0.02).unwrap();
        let x = LatentCode::zeros(vec![2]);
        assert!(analytic_gaussian_denoiser(&x, 1, &s, 0.0, 0.0).is_err());
        assert!(AnalyticGaussianDenoiser::new(s, 0.0, -1.0).is_err());
    }

    #[test]
    fn conditional_means_follow_condition() {
        let s = linear_schedule(10, 1e-4, 0.02).unwrap();
        let den = ConditionalGaussianDenoiser::new(s, 0.01, vec![1.0, -2.0], 0.5, 0.1).unwrap();
        let grid = GridSpec::cube(1, 1.0).unwrap();
        let grid2 = GridSpec::new([1, 1, 2], [1.0; 3], [0.0; 3]).unwrap();
        let cond = FeatureVolume::new(1, grid2, vec![10.0, 20.0]).unwrap();
        let shape = [2, 1, 1, 2];
        assert_eq!(den.prior_means(&shape, Some(&cond)).unwrap(), vec![1.0, 2.0, -2.0, -4.0]);
        assert_eq!(den.prior_means(&shape, None).unwrap(), vec![0.5, 0.5, -1.0, -1.0]);
        let zero = FeatureVolume::zeros(1, grid2);
        assert_eq!(den.prior_means(&shape, Some(&zero)).unwrap(), den.prior_means(&shape, None).unwrap());
        let wrong = FeatureVolume::new(1, grid, vec![1.0]).unwrap();
        assert!(den.prior_means(&shape, Some(&wrong)).is_err());
        assert!(den.prior_means(&[3, 1, 1, 2], None).is_err());
    }
}
