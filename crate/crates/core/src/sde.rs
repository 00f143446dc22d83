//! Discrete VP-SDE: noise schedule, forward noising, and reverse steps.
//!
//! Steps are indexed `t = 1..=T`; `ᾱ_0 := 1` denotes clean data.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Parameters from which a [`NoiseSchedule`] is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    /// Linear schedule whose betas are the 1000-step DDPM range
    /// `[1e-4, 0.02]` rescaled by `1000 / steps`, preserving total noise.
    pub fn rescaled(steps: usize) -> Self {
        let scale = 1000.0 / steps as f64;
        Self {
            kind: ScheduleKind::Linear,
            steps,
            beta_start: 1e-4 * scale,
            beta_end: 0.02 * scale,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.kind, self.steps, self.beta_start, self.beta_end)
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::rescaled(50)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(
    kind: ScheduleKind,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidParameter(format!("schedule needs T >= 2, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect(),
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        spec: ScheduleSpec { kind, steps, beta_start, beta_end },
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// Reverse-step rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `(2 − √(1−β_t)) x_t + β_t s + √β_t ε`, the reverse-diffusion predictor.
    #[default]
    Verbatim,
    /// DDPM posterior mean `(x_t + β_t s) / √α_t` with the same noise term.
    ExactPosteriorMean,
}

/// `x_t = √ᾱ_t x0 + √(1−ᾱ_t) eps` for a given `eps`. `t = 0` returns `x0`.
pub fn forward_noise_with(schedule: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    if t > schedule.steps() {
        return Err(Error::StepOutOfRange { t, steps: schedule.steps() });
    }
    check_dim(x0.len(), eps.len())?;
    let ab = schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Draws `eps ~ N(0, I)` and returns `(x_t, eps)`.
pub fn forward_noise(
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if t > schedule.steps() {
        return Err(Error::StepOutOfRange { t, steps: schedule.steps() });
    }
    let eps = rng.normal_vec(x0.len());
    let xt = forward_noise_with(schedule, x0, t, &eps)?;
    Ok((xt, eps))
}

/// One reverse step from `x_t` to `x_{t-1}` given the predicted noise.
///
/// The predictor is expressed in terms of the score, recovered from the
/// noise prediction as `s = −eps_pred / √(1−ᾱ_t)`. No noise is drawn at
/// `t = 1`.
pub fn ancestral_step(
    schedule: &NoiseSchedule,
    x_t: &[f64],
    eps_pred: &[f64],
    t: usize,
    rng: &mut RngStream,
    rule: StepRule,
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_dim(x_t.len(), eps_pred.len())?;
    let beta = schedule.beta(t);
    let sigma = (1.0 - schedule.alpha_bar(t)).sqrt();
    let noise_scale = beta.sqrt();
    let noise = if t > 1 { Some(rng.normal_vec(x_t.len())) } else { None };
    let out = x_t
        .iter()
        .zip(eps_pred)
        .enumerate()
        .map(|(i, (&x, &e))| {
            let score = -e / sigma;
            let mean = match rule {
                StepRule::Verbatim => (2.0 - (1.0 - beta).sqrt()) * x + beta * score,
                StepRule::ExactPosteriorMean => (x + beta * score) / schedule.alpha(t).sqrt(),
            };
            mean + noise.as_ref().map_or(0.0, |z| noise_scale * z[i])
        })
        .collect();
    Ok(out)
}

/// Affine estimate of the clean sample, `(x_t − √(1−ᾱ_t) eps_pred) / √ᾱ_t`.
pub fn x0_estimate(schedule: &NoiseSchedule, x_t: &[f64], eps_pred: &[f64], t: usize) -> Result<Vec<f64>> {
    if t > schedule.steps() {
        return Err(Error::StepOutOfRange { t, steps: schedule.steps() });
    }
    check_dim(x_t.len(), eps_pred.len())?;
    let ab = schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.iter().zip(eps_pred).map(|(x, e)| (x - s * e) / a).collect())
}
