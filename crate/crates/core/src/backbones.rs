//! First-order optimizers (SGD, momentum SGD, Adam, Yogi) plus the
//! reference second-order baselines (L-BFGS, 2-D Newton).
//!
//! The first-order [`Backbone`] is used both standalone and as the inner-step
//! engine of the curvature-tuned wrapper, which is why its step accepts a
//! per-tensor learning rate.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::{dot, ensure_finite, BufferInfo, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Sgd,
    MomentumSgd,
    Adam,
    Yogi,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Sgd => "sgd",
            BackboneKind::MomentumSgd => "momentum_sgd",
            BackboneKind::Adam => "adam",
            BackboneKind::Yogi => "yogi",
        }
    }
}

/// Hyperparameters shared by the first-order backbones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Primary learning rate.
    pub lr: f64,
    /// Heavy-ball coefficient; only read by [`BackboneKind::MomentumSgd`].
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Denominator stabilizer of the Adam/Yogi update.
    pub eps: f64,
    /// Coupled L2 decay, added to the gradient as `lambda * theta`.
    pub weight_decay: f64,
}

impl BackboneConfig {
    /// SGD family defaults: lr 1e-2, momentum 0.85.
    pub fn sgd() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.85,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }

    /// Adam family defaults: lr 1e-3, betas (0.9, 0.999).
    pub fn adam() -> Self {
        Self {
            lr: 1e-3,
            ..Self::sgd()
        }
    }

    pub fn for_kind(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::Sgd | BackboneKind::MomentumSgd => Self::sgd(),
            BackboneKind::Adam | BackboneKind::Yogi => Self::adam(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// State of a first-order optimizer over a `d`-dimensional parameter vector.
#[derive(Debug, Clone)]
pub struct Backbone {
    kind: BackboneKind,
    config: BackboneConfig,
    dim: usize,
    momentum_buffer: Option<Vec<f64>>,
    m: Option<Vec<f64>>,
    v: Option<Vec<f64>>,
    step_count: u64,
}

impl Backbone {
    pub fn new(kind: BackboneKind, config: BackboneConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let (momentum_buffer, m, v) = match kind {
            BackboneKind::Sgd => (None, None, None),
            BackboneKind::MomentumSgd => (Some(vec![0.0; dim]), None, None),
            BackboneKind::Adam | BackboneKind::Yogi => (None, Some(vec![0.0; dim]), Some(vec![0.0; dim])),
        };
        Ok(Self {
            kind,
            config,
            dim,
            momentum_buffer,
            m,
            v,
            step_count: 0,
        })
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn base_lr(&self) -> f64 {
        self.config.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn second_moment(&self) -> Option<&[f64]> {
        self.v.as_deref()
    }

    pub fn first_moment(&self) -> Option<&[f64]> {
        self.m.as_deref()
    }

    pub fn momentum_buffer(&self) -> Option<&[f64]> {
        self.momentum_buffer.as_deref()
    }

    /// Persistent buffers held beyond the parameters themselves.
    pub fn buffers(&self) -> Vec<BufferInfo> {
        let mut out = Vec::new();
        if let Some(b) = &self.momentum_buffer {
            out.push(BufferInfo { name: "momentum", len: b.len(), role: "heavy-ball velocity" });
        }
        if let Some(m) = &self.m {
            out.push(BufferInfo { name: "m", len: m.len(), role: "first-moment EMA" });
        }
        if let Some(v) = &self.v {
            out.push(BufferInfo { name: "v", len: v.len(), role: "second-moment estimate" });
        }
        out
    }

    /// One step with a single learning rate for every coordinate.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        let dim = self.dim;
        self.apply(theta, grad, std::iter::once((0..dim, lr)))
    }

    /// One step with `lrs[i]` applied to the `i`-th tensor of `layout`.
    pub fn step_per_tensor(&mut self, theta: &mut [f64], grad: &[f64], layout: &Layout, lrs: &[f64]) -> Result<()> {
        if layout.len() != self.dim || lrs.len() != layout.partitions().len() {
            return Err(Error::usage(format!(
                "layout covers {} entries with {} tensors, backbone has {} entries and {} rates",
                layout.len(),
                layout.partitions().len(),
                self.dim,
                lrs.len()
            )));
        }
        let segments = layout.partitions().iter().zip(lrs).map(|(p, &lr)| (p.range(), lr));
        self.apply(theta, grad, segments)
    }

    fn apply(
        &mut self,
        theta: &mut [f64],
        grad: &[f64],
        segments: impl Iterator<Item = (Range<usize>, f64)>,
    ) -> Result<()> {
        if theta.len() != self.dim || grad.len() != self.dim {
            return Err(Error::usage(format!(
                "backbone of dimension {} got theta of {} and grad of {}",
                self.dim,
                theta.len(),
                grad.len()
            )));
        }
        ensure_finite(grad, || format!("{} gradient at step {}", self.kind.name(), self.step_count + 1))?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let BackboneConfig {
            momentum,
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;

        for (range, lr) in segments {
            for i in range {
                let g = grad[i] + weight_decay * theta[i];
                match self.kind {
                    BackboneKind::Sgd => theta[i] -= lr * g,
                    BackboneKind::MomentumSgd => {
                        let buf = &mut self.momentum_buffer.as_mut().expect("momentum buffer")[i];
                        *buf = momentum * *buf + g;
                        theta[i] -= lr * *buf;
                    }
                    BackboneKind::Adam | BackboneKind::Yogi => {
                        let m = &mut self.m.as_mut().expect("first moment")[i];
                        let v = &mut self.v.as_mut().expect("second moment")[i];
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        let g2 = g * g;
                        if self.kind == BackboneKind::Adam {
                            *v = beta2 * *v + (1.0 - beta2) * g2;
                        } else {
                            *v -= sign(*v - g2) * (1.0 - beta2) * g2;
                        }
                        let m_hat = *m / (1.0 - beta1.powi(t));
                        let v_hat = *v / (1.0 - beta2.powi(t));
                        assert!(v_hat >= 0.0, "second-moment estimate went negative: {v_hat}");
                        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        ensure_finite(theta, || format!("{} parameters after step {}", self.kind.name(), self.step_count))
    }
}

/// `sign` with `sign(0) = 0`, so `v = g^2` is a fixed point of Yogi's rule.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pairs with `s^T y` at or below this are discarded.
pub const CURVATURE_PAIR_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfgsConfig {
    /// Initial trial step of the line search.
    pub lr: f64,
    /// Number of stored `(s, y)` pairs.
    pub history: usize,
    /// Maximum backtracking halvings per step.
    pub max_inner: usize,
    pub c_armijo: f64,
    pub shrink: f64,
    pub weight_decay: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            history: 10,
            max_inner: 20,
            c_armijo: 1e-4,
            shrink: 0.5,
            weight_decay: 5e-4,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.history == 0 {
            return Err(Error::config("lbfgs needs lr > 0 and history >= 1"));
        }
        if !(self.c_armijo > 0.0 && self.c_armijo < 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::config("lbfgs c_armijo and shrink must lie in (0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("lbfgs weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

/// Ring of the most recent curvature pairs.
#[derive(Debug, Clone)]
pub struct LbfgsHistory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    capacity: usize,
}

impl LbfgsHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores `(s, y)` unless `s^T y <= 1e-10`. Returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        if dot(&s, &y) <= CURVATURE_PAIR_THRESHOLD {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        true
    }

    /// Two-loop recursion: returns `-H^{-1} g` with the initial scaling
    /// `s^T y / y^T y` taken from the newest pair (identity when empty).
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y) in self.pairs.iter().rev() {
            let rho = 1.0 / dot(y, s);
            let alpha = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= alpha * yi;
            }
            alphas.push(alpha);
        }
        let gamma = self
            .pairs
            .back()
            .map(|(s, y)| dot(s, y) / dot(y, y))
            .unwrap_or(1.0);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y), alpha) in self.pairs.iter().zip(alphas.iter().rev()) {
            let rho = 1.0 / dot(y, s);
            let beta = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (alpha - beta) * si;
            }
        }
        q.iter_mut().for_each(|x| *x = -*x);
        q
    }

    /// Stored vectors, `2 * len * d` entries in total.
    pub fn stored_len(&self) -> usize {
        self.pairs.iter().map(|(s, y)| s.len() + y.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub alpha: f64,
    /// Objective evaluations spent, the per-step closure count.
    pub evaluations: usize,
    pub failed: bool,
}

/// Backtracking search for the largest `alpha = eta_init * shrink^j`,
/// `j <= max_inner`, meeting the sufficient-decrease condition
/// `f(theta + alpha p) <= f0 + c alpha g^T p`.
///
/// If none qualifies the smallest trial step is returned with `failed` set.
pub fn armijo_line_search(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    f0: f64,
    grad: &[f64],
    p: &[f64],
    eta_init: f64,
    c_armijo: f64,
    shrink: f64,
    max_inner: usize,
) -> LineSearch {
    let slope = dot(grad, p);
    let mut trial = vec![0.0; theta.len()];
    let mut alpha = eta_init;
    for j in 0..=max_inner {
        for ((x, t), d) in trial.iter_mut().zip(theta).zip(p) {
            *x = t + alpha * d;
        }
        let value = f(&trial);
        if value <= f0 + c_armijo * alpha * slope {
            return LineSearch { alpha, evaluations: j + 1, failed: false };
        }
        if j < max_inner {
            alpha *= shrink;
        }
    }
    LineSearch { alpha, evaluations: max_inner + 1, failed: true }
}

/// L-BFGS driver: one call per step, taking `(f, grad)` at the current point
/// and an objective closure for the line search.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    config: LbfgsConfig,
    history: LbfgsHistory,
    prev: Option<(Vec<f64>, Vec<f64>)>,
}

impl Lbfgs {
    pub fn new(config: LbfgsConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            history: LbfgsHistory::new(config.history),
            config,
            prev: None,
        })
    }

    pub fn history(&self) -> &LbfgsHistory {
        &self.history
    }

    pub fn buffers(&self) -> Vec<BufferInfo> {
        vec![BufferInfo {
            name: "pairs",
            len: self.history.stored_len(),
            role: "curvature pairs (s, y)",
        }]
    }

    /// Takes one step from `theta`. `value` and `grad` are the raw objective
    /// and gradient at `theta`; weight decay is folded in here.
    pub fn step(
        &mut self,
        theta: &mut [f64],
        value: f64,
        grad: &[f64],
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Result<LineSearch> {
        ensure_finite(grad, || "lbfgs gradient".to_string())?;
        let wd = self.config.weight_decay;
        let decay = |x: &[f64]| 0.5 * wd * dot(x, x);
        let g: Vec<f64> = grad.iter().zip(theta.iter()).map(|(g, x)| g + wd * x).collect();
        let f0 = value + decay(theta);

        if let Some((prev_theta, prev_g)) = self.prev.take() {
            let s = theta.iter().zip(&prev_theta).map(|(a, b)| a - b).collect();
            let y = g.iter().zip(&prev_g).map(|(a, b)| a - b).collect();
            self.history.push(s, y);
        }

        let mut p = self.history.direction(&g);
        if dot(&p, &g) > 0.0 {
            self.history.clear();
            p = g.iter().map(|x| -x).collect();
        }
        let search = armijo_line_search(
            |x| f(x) + decay(x),
            theta,
            f0,
            &g,
            &p,
            self.config.lr,
            self.config.c_armijo,
            self.config.shrink,
            self.config.max_inner,
        );
        self.prev = Some((theta.to_vec(), g));
        for (x, d) in theta.iter_mut().zip(&p) {
            *x += search.alpha * d;
        }
        ensure_finite(theta, || "lbfgs parameters".to_string())?;
        Ok(search)
    }
}

/// Newton step in two dimensions, `theta - lr H^{-1} g`, falling back to
/// `theta - lr g` when `H` is singular (`|det| < 1e-12`) or not positive definite.
pub fn newton2d_step(theta: [f64; 2], grad: [f64; 2], hess: [[f64; 2]; 2], lr: f64) -> [f64; 2] {
    let [[a, b], [c, d]] = hess;
    let det = a * d - b * c;
    if det.abs() < 1e-12 || a <= 0.0 || det <= 0.0 {
        return [theta[0] - lr * grad[0], theta[1] - lr * grad[1]];
    }
    let dx = (d * grad[0] - b * grad[1]) / det;
    let dy = (-c * grad[0] + a * grad[1]) / det;
    [theta[0] - lr * dx, theta[1] - lr * dy]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn no_decay(mut cfg: BackboneConfig) -> BackboneConfig {
        cfg.weight_decay = 0.0;
        cfg
    }

    #[test]
    fn sgd_examples() {
        let mut opt = Backbone::new(BackboneKind::Sgd, no_decay(BackboneConfig::sgd()), 1).unwrap();
        let mut theta = [1.0];
        opt.step(&mut theta, &[1.0], 0.1).unwrap();
        assert!((theta[0] - 0.9).abs() < 1e-15);

        let mut theta = [1.0];
        opt.step(&mut theta, &[0.0], 0.37).unwrap();
        assert_eq!(theta, [1.0]);
    }

    #[test]
    fn momentum_two_steps() {
        let mut opt = Backbone::new(BackboneKind::MomentumSgd, no_decay(BackboneConfig::sgd()), 1).unwrap();
        let mut theta = [1.0];
        opt.step(&mut theta, &[1.0], 0.1).unwrap();
        assert!((theta[0] - 0.9).abs() < 1e-15);
        opt.step(&mut theta, &[1.0], 0.1).unwrap();
        assert!((opt.momentum_buffer().unwrap()[0] - 1.85).abs() < 1e-15);
        assert!((theta[0] - 0.715).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_augments_gradient() {
        let mut cfg = BackboneConfig::sgd();
        cfg.weight_decay = 0.5;
        let mut opt = Backbone::new(BackboneKind::Sgd, cfg, 1).unwrap();
        let mut theta = [2.0];
        opt.step(&mut theta, &[1.0], 0.1).unwrap();
        // g_eff = 1 + 0.5 * 2 = 2
        assert!((theta[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut opt = Backbone::new(BackboneKind::Adam, BackboneConfig::adam(), 2).unwrap();
        let mut theta = [0.0, 0.0];
        let err = opt.step(&mut theta, &[1.0, f64::NAN], 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn adam_first_step() {
        let mut opt = Backbone::new(BackboneKind::Adam, no_decay(BackboneConfig::adam()), 1).unwrap();
        let mut theta = [0.0];
        opt.step(&mut theta, &[4.0], 0.001).unwrap();
        let expected = -0.001 * 4.0 / (4.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-18, "{} vs {}", theta[0], expected);
        assert!((theta[0] + 0.000999999998).abs() < 1e-12);

        // m_hat = g and v_hat = g^2 after one step, so the move is ~lr for any c > 0.
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let mut opt = Backbone::new(BackboneKind::Adam, no_decay(BackboneConfig::adam()), 1).unwrap();
            let mut theta = [3.0];
            opt.step(&mut theta, &[c], 0.01).unwrap();
            let moved = 3.0 - theta[0];
            assert!(moved < 0.01 && (moved - 0.01).abs() < 1e-6, "c={c}: moved {moved}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut opt = Backbone::new(BackboneKind::Adam, no_decay(BackboneConfig::adam()), 3).unwrap();
        let mut theta = [1.0, -2.0, 0.5];
        for _ in 0..50 {
            opt.step(&mut theta, &[0.0; 3], 1e-3).unwrap();
        }
        assert_eq!(theta, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn yogi_variance_rule() {
        let cfg = no_decay(BackboneConfig::adam());
        let mut opt = Backbone::new(BackboneKind::Yogi, cfg.clone(), 1).unwrap();
        let mut theta = [0.0];
        opt.step(&mut theta, &[1.0], 1e-3).unwrap();
        assert!((opt.second_moment().unwrap()[0] - 0.001).abs() < 1e-15);

        // v = g^2 is a fixed point; beta2 = 0.75 keeps the arithmetic exact.
        let exact = BackboneConfig { beta2: 0.75, ..cfg.clone() };
        let mut opt = Backbone::new(BackboneKind::Yogi, exact, 1).unwrap();
        opt.step(&mut theta, &[1.0], 1e-3).unwrap();
        assert_eq!(opt.second_moment().unwrap()[0], 0.25);
        opt.step(&mut theta, &[0.5], 1e-3).unwrap();
        assert_eq!(opt.second_moment().unwrap()[0], 0.25);

        let v_before = opt.second_moment().unwrap()[0];
        opt.step(&mut theta, &[0.0], 1e-3).unwrap();
        assert_eq!(opt.second_moment().unwrap()[0], v_before);
    }

    #[test]
    fn adam_matches_yogi_on_growing_gradients() {
        // With v_{t-1} <= g_t^2 both rules only raise v. They agree bitwise
        // on the first step (v_0 = 0); afterwards only the direction matches.
        let cfg = no_decay(BackboneConfig::adam());
        let mut adam = Backbone::new(BackboneKind::Adam, cfg.clone(), 1).unwrap();
        let mut yogi = Backbone::new(BackboneKind::Yogi, cfg, 1).unwrap();
        let (mut ta, mut ty) = ([0.0], [0.0]);
        adam.step(&mut ta, &[2.0], 1e-3).unwrap();
        yogi.step(&mut ty, &[2.0], 1e-3).unwrap();
        assert_eq!(ta, ty);
        assert_eq!(adam.second_moment(), yogi.second_moment());
        let mut g = 2.0;
        for _ in 0..20 {
            g *= 2.0;
            let (va, vy) = (adam.second_moment().unwrap()[0], yogi.second_moment().unwrap()[0]);
            assert!(va <= g * g && vy <= g * g);
            adam.step(&mut ta, &[g], 1e-3).unwrap();
            yogi.step(&mut ty, &[g], 1e-3).unwrap();
            assert!(adam.second_moment().unwrap()[0] > va);
            assert!(yogi.second_moment().unwrap()[0] > vy);
        }
    }

    #[test]
    fn buffer_accounting() {
        let d = 17;
        let count = |k| {
            let b = Backbone::new(k, BackboneConfig::for_kind(k), d).unwrap();
            crate::tensorcore::total_buffer_len(&b.buffers())
        };
        assert_eq!(count(BackboneKind::Sgd), 0);
        assert_eq!(count(BackboneKind::MomentumSgd), d);
        assert_eq!(count(BackboneKind::Adam), 2 * d);
        assert_eq!(count(BackboneKind::Yogi), 2 * d);
    }

    #[test]
    fn per_tensor_rates() {
        let layout = Layout::from_sizes([("a", 2), ("b", 1)]).unwrap();
        let mut opt = Backbone::new(BackboneKind::Sgd, no_decay(BackboneConfig::sgd()), 3).unwrap();
        let mut theta = [1.0, 1.0, 1.0];
        opt.step_per_tensor(&mut theta, &[1.0, 1.0, 1.0], &layout, &[0.1, 0.5]).unwrap();
        assert_eq!(theta, [0.9, 0.9, 0.5]);
        assert_eq!(opt.step_count(), 1);
        assert!(opt.step_per_tensor(&mut theta, &[1.0; 3], &layout, &[0.1]).is_err());
    }

    #[test]
    fn lbfgs_direction_examples() {
        let h = LbfgsHistory::new(5);
        assert_eq!(h.direction(&[3.0, -1.0]), vec![-3.0, 1.0]);

        let mut h = LbfgsHistory::new(5);
        assert!(h.push(vec![1.0, 0.0], vec![2.0, 0.0]));
        let p = h.direction(&[2.0, 0.0]);
        assert!((p[0] + 1.0).abs() < 1e-15 && p[1] == 0.0);

        assert!(!h.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn lbfgs_exact_line_search_on_quadratic() {
        // f = 1/2 x^T A x with A SPD, exact step alpha = -g^T p / p^T A p.
        let n = 5;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 2.0 + i as f64 } else { 0.3 / (1.0 + (i + j) as f64) }).collect())
            .collect();
        let mul = |x: &[f64]| -> Vec<f64> { a.iter().map(|row| dot(row, x)).collect() };
        let mut x = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let mut h = LbfgsHistory::new(n + 1);
        let mut g = mul(&x);
        for _ in 0..=n {
            if dot(&g, &g).sqrt() < 1e-8 {
                break;
            }
            let p = h.direction(&g);
            let alpha = -dot(&g, &p) / dot(&p, &mul(&p));
            let x_new: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + alpha * pi).collect();
            let g_new = mul(&x_new);
            h.push(
                x_new.iter().zip(&x).map(|(a, b)| a - b).collect(),
                g_new.iter().zip(&g).map(|(a, b)| a - b).collect(),
            );
            x = x_new;
            g = g_new;
        }
        assert!(dot(&g, &g).sqrt() < 1e-8, "gradient norm {}", dot(&g, &g).sqrt());
    }

    #[test]
    fn armijo_examples() {
        let f = |x: &[f64]| 0.5 * x[0] * x[0];
        let ls = armijo_line_search(f, &[1.0], 0.5, &[1.0], &[-1.0], 1.0, 1e-4, 0.5, 20);
        assert_eq!(ls, LineSearch { alpha: 1.0, evaluations: 1, failed: false });

        let ls = armijo_line_search(f, &[1.0], 0.5, &[1.0], &[0.0], 0.7, 1e-4, 0.5, 20);
        assert_eq!(ls.alpha, 0.7);
        assert!(!ls.failed);

        let lin = |x: &[f64]| x[0];
        let ls = armijo_line_search(lin, &[0.0], 0.0, &[1.0], &[1.0], 1.0, 1e-4, 0.5, 20);
        assert!(ls.failed);
        assert_eq!(ls.alpha, 0.5f64.powi(20));
        assert_eq!(ls.evaluations, 21);
    }

    #[test]
    fn lbfgs_minimizes_quadratic() {
        let cfg = LbfgsConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = Lbfgs::new(cfg).unwrap();
        let f = |x: &[f64]| 0.5 * (x[0] * x[0] + 10.0 * x[1] * x[1]);
        let mut x = vec![3.0, -2.0];
        for _ in 0..30 {
            let g = [x[0], 10.0 * x[1]];
            let fx = f(&x);
            let ls = opt.step(&mut x, fx, &g, f).unwrap();
            assert!(!ls.failed);
        }
        assert!(x[0].abs() < 1e-8 && x[1].abs() < 1e-8, "{x:?}");
    }

    #[test]
    fn newton_examples() {
        let out = newton2d_step([3.0, -4.0], [3.0, -4.0], [[1.0, 0.0], [0.0, 1.0]], 1.0);
        assert_eq!(out, [0.0, 0.0]);

        let out = newton2d_step([0.0, 0.0], [2.0, 8.0], [[2.0, 0.0], [0.0, 8.0]], 1.0);
        assert_eq!(out, [-1.0, -1.0]);

        let theta = [0.5, 0.25];
        let grad = [1.0, -2.0];
        let saddle = newton2d_step(theta, grad, [[1.0, 0.0], [0.0, -1.0]], 0.1);
        let mut sgd = Backbone::new(BackboneKind::Sgd, no_decay(BackboneConfig::sgd()), 2).unwrap();
        let mut expected = theta;
        sgd.step(&mut expected, &grad, 0.1).unwrap();
        assert_eq!(saddle, expected);

        let singular = newton2d_step(theta, grad, [[1.0, 1.0], [1.0, 1.0]], 0.1);
        assert_eq!(singular, expected);
    }

    proptest! {
        #[test]
        fn lbfgs_direction_is_descent(
            pairs in prop::collection::vec(
                (prop::collection::vec(-2.0f64..2.0, 3), prop::collection::vec(0.1f64..5.0, 3)), 1..8),
            g in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            // y = diag(c) s with c > 0 keeps every pair curvature-valid.
            let mut h = LbfgsHistory::new(10);
            for (s, c) in pairs {
                let y: Vec<f64> = s.iter().zip(&c).map(|(a, b)| a * b).collect();
                h.push(s, y);
            }
            let p = h.direction(&g);
            prop_assert!(dot(&p, &g) <= 1e-12 * dot(&g, &g).max(1.0));
        }

        #[test]
        fn adam_first_step_bounded_by_lr(g in -1e3f64..1e3, lr in 1e-5f64..1.0) {
            let mut opt = Backbone::new(BackboneKind::Adam, no_decay(BackboneConfig::adam()), 1).unwrap();
            let mut theta = [0.0];
            opt.step(&mut theta, &[g], lr).unwrap();
            prop_assert!(theta[0].abs() < lr);
            prop_assert!(theta[0].abs() <= lr * g.abs() / (g.abs() + 1e-8) * (1.0 + 1e-12));
        }

        #[test]
        fn adam_v_nonnegative(gs in prop::collection::vec(-10.0f64..10.0, 1..40)) {
            for kind in [BackboneKind::Adam, BackboneKind::Yogi] {
                let mut opt = Backbone::new(kind, no_decay(BackboneConfig::adam()), 1).unwrap();
                let mut theta = [0.0];
                for &g in &gs {
                    let before = opt.second_moment().unwrap()[0];
                    opt.step(&mut theta, &[g], 1e-3).unwrap();
                    let after = opt.second_moment().unwrap()[0];
                    prop_assert!(after >= 0.0);
                    if kind == BackboneKind::Yogi {
                        let delta = (after - before).abs();
                        prop_assert!(delta == 0.0 || (delta - 0.001 * g * g).abs() <= 1e-12 * (1.0 + g * g));
                    }
                }
            }
        }
    }
}
