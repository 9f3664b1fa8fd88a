//! Curvature-tuned boosting of a first-order backbone.
//!
//! Inside an epoch the wrapped optimizer runs unchanged except that each
//! tensor's learning rate is `lr / divisor`, where the divisor starts at the
//! tensor's curvature scale `gamma` and anneals to 1 by the end of the epoch.
//! Alongside the inner steps, per-coordinate secant quotients
//! `(g_t - g_{t-1}) / (theta_t - theta_{t-1})` are accumulated with weight `t`
//! wherever the parameter actually moved by more than `eps`.
//!
//! At the epoch boundary the accumulated quotients become a clamped diagonal
//! curvature estimate `H`, which drives one extra step
//! `theta -= eta2 * g_agg / H` and seeds next epoch's `gamma` as a low-tail
//! quantile of `H` taken per tensor.
//!
//! The per-step pairing is `(theta_t, g(theta_t))`, i.e. each gradient is
//! matched with the point it was evaluated at, so on a quadratic every
//! unmasked quotient equals the true curvature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbones::Backbone;
use crate::error::{Error, Result};
use crate::tensorcore::{
    check_clamp_bounds, check_omega, clamp_elementwise, ensure_finite, low_tail_quantile, masked_divide,
    BufferInfo, Layout,
};

/// Source of the boundary-step gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// `t`-weighted mean of the epoch's gradients.
    Avg,
    /// Gradient of the final mini-batch.
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealMode {
    Linear,
    Exponential,
    None,
}

/// Divisor schedule over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Anneal {
    /// `gamma - (gamma - 1) t / T`.
    Linear,
    /// `1 + (gamma - 1) alpha^t`.
    Exponential(f64),
    /// `gamma` throughout.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureWeighting {
    TWeighted,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtagdConfig {
    /// Step size of the epoch-boundary update.
    pub eta2: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Low-tail quantile used for the per-tensor `gamma`.
    pub omega: f64,
    /// Mask threshold and denominator stabilizer.
    pub eps: f64,
    pub grad_mode: GradMode,
    pub anneal: AnnealMode,
    /// Decay factor for [`AnnealMode::Exponential`].
    pub anneal_alpha: f64,
    pub weighting: CurvatureWeighting,
    /// Variance of Gaussian noise added to every valid quotient (ablation only).
    pub noise_var: f64,
}

impl Default for CtagdConfig {
    fn default() -> Self {
        Self {
            eta2: 0.5,
            lambda_min: 1e-2,
            lambda_max: 1e2,
            omega: 0.1,
            eps: 1e-3,
            grad_mode: GradMode::Avg,
            anneal: AnnealMode::Linear,
            anneal_alpha: 0.5,
            weighting: CurvatureWeighting::TWeighted,
            noise_var: 0.0,
        }
    }
}

impl CtagdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta2 > 0.0 && self.eta2.is_finite()) {
            return Err(Error::config(format!("eta2 must be positive, got {}", self.eta2)));
        }
        check_clamp_bounds(self.lambda_min, self.lambda_max)?;
        check_omega(self.omega)?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.anneal == AnnealMode::Exponential && !(self.anneal_alpha > 0.0 && self.anneal_alpha < 1.0) {
            return Err(Error::config(format!(
                "exponential annealing needs alpha in (0, 1), got {}",
                self.anneal_alpha
            )));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::config(format!("noise_var must be nonnegative, got {}", self.noise_var)));
        }
        Ok(())
    }

    pub fn anneal(&self) -> Anneal {
        match self.anneal {
            AnnealMode::Linear => Anneal::Linear,
            AnnealMode::Exponential => Anneal::Exponential(self.anneal_alpha),
            AnnealMode::None => Anneal::None,
        }
    }
}

/// Curvature-aware divisor at inner step `t` of an epoch of `t_total` steps.
///
/// The linear form is evaluated as `gamma (1 - s) + s` with `s = t / T`,
/// which hits both endpoints exactly in floating point.
pub fn divisor(gamma: f64, t: usize, t_total: usize, anneal: Anneal) -> f64 {
    assert!(gamma > 0.0, "divisor seed must be positive, got {gamma}");
    match anneal {
        Anneal::Linear => {
            let s = t as f64 / t_total.max(1) as f64;
            gamma * (1.0 - s) + s
        }
        Anneal::Exponential(alpha) => 1.0 + (gamma - 1.0) * alpha.powi(t as i32),
        Anneal::None => gamma,
    }
}

/// Low-tail quantile of each tensor's slice of `hessian`, falling back to 1
/// for tensors where the quantile is undefined (zero-length tensors).
pub fn compute_gamma(hessian: &[f64], layout: &Layout, omega: f64) -> Result<Vec<f64>> {
    if hessian.len() != layout.len() {
        return Err(Error::usage(format!(
            "hessian has {} entries, layout {}",
            hessian.len(),
            layout.len()
        )));
    }
    layout
        .partitions()
        .iter()
        .map(|p| Ok(low_tail_quantile(&hessian[p.range()], omega)?.unwrap_or(1.0)))
        .collect()
}

/// `theta - eta2 * g_agg / hessian`, elementwise.
pub fn boundary_update(theta: &mut [f64], hessian: &[f64], g_agg: &[f64], eta2: f64) {
    for ((x, h), g) in theta.iter_mut().zip(hessian).zip(g_agg) {
        *x -= eta2 * g / h;
    }
}

/// Summary of one completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub inner_steps: usize,
    /// Clamped diagonal curvature estimate.
    pub hessian: Vec<f64>,
    /// Per-tensor scale that will seed the next epoch's divisor.
    pub gammas: Vec<f64>,
    /// Gradient used by the boundary step.
    pub aggregated_gradient: Vec<f64>,
    /// Fraction of coordinates with at least one valid quotient.
    pub coverage: f64,
}

/// Rolling state of the curvature-tuned wrapper for one run.
#[derive(Debug, Clone)]
pub struct CtagdState {
    config: CtagdConfig,
    layout: Layout,
    quotient_sum: Vec<f64>,
    weight_sum: Vec<f64>,
    prev_theta: Vec<f64>,
    prev_grad: Vec<f64>,
    grad_sum: Option<Vec<f64>>,
    t_sum: f64,
    gammas: Vec<f64>,
    epoch: usize,
    step: usize,
    rng: ChaCha8Rng,
}

impl CtagdState {
    /// `seed` drives the quotient noise; it is unused when `noise_var == 0`.
    pub fn new(config: CtagdConfig, layout: Layout, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = layout.len();
        let grad_sum = (config.grad_mode == GradMode::Avg).then(|| vec![0.0; d]);
        let gammas = vec![1.0; layout.partitions().len()];
        Ok(Self {
            config,
            quotient_sum: vec![0.0; d],
            weight_sum: vec![0.0; d],
            prev_theta: vec![0.0; d],
            prev_grad: vec![0.0; d],
            grad_sum,
            t_sum: 0.0,
            gammas,
            layout,
            epoch: 0,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &CtagdConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Inner-step index within the current epoch.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Per-tensor divisor seeds in layout order.
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn gamma(&self, tensor: &str) -> Option<f64> {
        let idx = self.layout.partitions().iter().position(|p| p.name == tensor)?;
        Some(self.gammas[idx])
    }

    /// Overrides one tensor's divisor seed.
    pub fn set_gamma(&mut self, tensor: &str, gamma: f64) -> Result<()> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be positive, got {gamma}")));
        }
        let idx = self
            .layout
            .partitions()
            .iter()
            .position(|p| p.name == tensor)
            .ok_or_else(|| Error::usage(format!("no tensor named `{tensor}`")))?;
        self.gammas[idx] = gamma;
        Ok(())
    }

    pub fn quotient_sum(&self) -> &[f64] {
        &self.quotient_sum
    }

    pub fn weight_sum(&self) -> &[f64] {
        &self.weight_sum
    }

    /// Persistent buffers beyond the backbone's own state.
    pub fn buffers(&self) -> Vec<BufferInfo> {
        let d = self.layout.len();
        let mut out = vec![
            BufferInfo { name: "prev_theta", len: d, role: "prev theta" },
            BufferInfo { name: "prev_grad", len: d, role: "prev g" },
            BufferInfo { name: "quotient_sum", len: d, role: "quotient accumulator" },
            BufferInfo { name: "weight_sum", len: d, role: "mask-weight accumulator" },
        ];
        if let Some(g) = &self.grad_sum {
            out.push(BufferInfo { name: "grad_sum", len: g.len(), role: "gradient accumulator" });
        }
        out
    }

    /// Per-tensor learning rates for inner step `t` of `t_total`.
    pub fn inner_rates(&self, base_lr: f64, t: usize, t_total: usize) -> Vec<f64> {
        let anneal = self.config.anneal();
        self.gammas
            .iter()
            .map(|&g| base_lr / divisor(g, t, t_total, anneal))
            .collect()
    }

    /// Folds the pair `(theta, grad)` observed at the current inner step into
    /// the accumulators, then stores it as the previous pair.
    pub fn accumulate(&mut self, theta: &[f64], grad: &[f64]) -> Result<()> {
        let d = self.layout.len();
        if theta.len() != d || grad.len() != d {
            return Err(Error::usage(format!(
                "state of dimension {d} got theta of {} and grad of {}",
                theta.len(),
                grad.len()
            )));
        }
        let t = self.step;
        if t >= 1 {
            let w = match self.config.weighting {
                CurvatureWeighting::TWeighted => t as f64,
                CurvatureWeighting::Uniform => 1.0,
            };
            let eps = self.config.eps;
            let noise = (self.config.noise_var > 0.0)
                .then(|| Normal::new(0.0, self.config.noise_var.sqrt()).expect("finite std"));
            for i in 0..d {
                let dtheta = theta[i] - self.prev_theta[i];
                let jitter = noise.as_ref().map_or(0.0, |n| n.sample(&mut self.rng));
                if dtheta.abs() > eps {
                    let h = (grad[i] - self.prev_grad[i]) / dtheta + jitter;
                    self.quotient_sum[i] += w * h;
                    self.weight_sum[i] += w;
                }
            }
        }
        if let Some(sum) = &mut self.grad_sum {
            for (s, g) in sum.iter_mut().zip(grad) {
                *s += t as f64 * g;
            }
        }
        self.t_sum += t as f64;
        self.prev_theta.copy_from_slice(theta);
        self.prev_grad.copy_from_slice(grad);
        Ok(())
    }

    /// One inner step: accumulate at the current point, then move with the
    /// backbone at the annealed per-tensor rate.
    pub fn inner_step(&mut self, theta: &mut [f64], grad: &[f64], backbone: &mut Backbone, t_total: usize) -> Result<()> {
        if t_total == 0 {
            return Err(Error::usage("epoch length must be at least 1"));
        }
        ensure_finite(grad, || format!("gradient at epoch {} step {}", self.epoch, self.step))?;
        self.accumulate(theta, grad)?;
        let rates = self.inner_rates(backbone.base_lr(), self.step, t_total);
        backbone
            .step_per_tensor(theta, grad, &self.layout, &rates)
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFinite(format!("parameters at epoch {} step {}", self.epoch, self.step)),
                other => other,
            })?;
        self.step += 1;
        Ok(())
    }

    /// Clamped diagonal curvature estimate from the current accumulators.
    /// Coordinates never masked in come out as `lambda_min`.
    pub fn finalize_hessian(&self) -> Vec<f64> {
        let raw = masked_divide(&self.quotient_sum, &self.weight_sum, self.config.eps)
            .expect("accumulators share the layout length");
        clamp_elementwise(&raw, self.config.lambda_min, self.config.lambda_max).expect("validated bounds")
    }

    /// Gradient for the boundary step.
    pub fn aggregate_gradient(&self) -> Vec<f64> {
        match &self.grad_sum {
            Some(sum) => sum.iter().map(|s| s / (self.t_sum + self.config.eps)).collect(),
            None => self.prev_grad.clone(),
        }
    }

    /// Closes the epoch: estimates curvature, takes the boundary step on
    /// `theta`, stores next epoch's `gamma` and resets the accumulators.
    pub fn end_epoch(&mut self, theta: &mut [f64]) -> Result<EpochStats> {
        let hessian = self.finalize_hessian();
        let gammas = compute_gamma(&hessian, &self.layout, self.config.omega)?;
        let aggregated_gradient = self.aggregate_gradient();
        boundary_update(theta, &hessian, &aggregated_gradient, self.config.eta2);
        ensure_finite(theta, || format!("parameters after boundary update of epoch {}", self.epoch))?;

        let covered = self.weight_sum.iter().filter(|&&w| w > 0.0).count();
        let stats = EpochStats {
            epoch: self.epoch,
            inner_steps: self.step,
            coverage: if hessian.is_empty() { 0.0 } else { covered as f64 / hessian.len() as f64 },
            hessian,
            gammas: gammas.clone(),
            aggregated_gradient,
        };

        self.gammas = gammas;
        self.quotient_sum.iter_mut().for_each(|x| *x = 0.0);
        self.weight_sum.iter_mut().for_each(|x| *x = 0.0);
        if let Some(sum) = &mut self.grad_sum {
            sum.iter_mut().for_each(|x| *x = 0.0);
        }
        self.t_sum = 0.0;
        self.step = 0;
        self.epoch += 1;
        Ok(stats)
    }

    /// Runs `t_total` inner steps with gradients from `grad_at(t, theta)`,
    /// then the epoch-boundary update.
    pub fn run_epoch(
        &mut self,
        theta: &mut [f64],
        backbone: &mut Backbone,
        t_total: usize,
        mut grad_at: impl FnMut(usize, &[f64]) -> Vec<f64>,
    ) -> Result<EpochStats> {
        for t in 0..t_total {
            let g = grad_at(t, theta);
            self.inner_step(theta, &g, backbone, t_total)?;
        }
        self.end_epoch(theta)
    }
}
