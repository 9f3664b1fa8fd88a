//! Drifting 2-D "generalization" landscape.
//!
//! Each snapshot is a convex quadratic bowl plus signed Gaussian lumps:
//!
//! ```text
//! V(theta) = q |theta - c0|^2 + sum_j sign_j a_j exp(-|theta - c_j|^2 / (2 s_j^2))
//! ```
//!
//! A sequence of train snapshots (and a shorter test sequence continuing the
//! same chain) is produced by repeatedly drifting lump centers, amplitudes
//! and scales. Optimizers see one train snapshot per call, cycling through
//! the sequence the way a data loader cycles through mini-batches.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Lower bound applied to amplitudes and scales after a multiplicative drift.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lump {
    pub center: Point,
    pub amplitude: f64,
    pub scale: f64,
    /// `+1` for a bump (repulsive), `-1` for a well (attractive).
    pub sign: i8,
}

impl Lump {
    fn weight(&self, theta: Point) -> (f64, Point) {
        let d = [theta[0] - self.center[0], theta[1] - self.center[1]];
        let r2 = d[0] * d[0] + d[1] * d[1];
        let e = f64::from(self.sign) * self.amplitude * (-r2 / (2.0 * self.scale * self.scale)).exp();
        (e, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub c0: Point,
    pub q: f64,
    pub lumps: Vec<Lump>,
}

impl Snapshot {
    pub fn quadratic(c0: Point, q: f64) -> Self {
        Self { c0, q, lumps: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::config(format!("snapshot q must be positive, got {}", self.q)));
        }
        for (j, l) in self.lumps.iter().enumerate() {
            if !(l.amplitude > 0.0 && l.scale > 0.0) || (l.sign != 1 && l.sign != -1) {
                return Err(Error::config(format!(
                    "lump {j} needs amplitude > 0, scale > 0 and sign +-1, got {:?}",
                    l
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, theta: Point) -> f64 {
        let d0 = [theta[0] - self.c0[0], theta[1] - self.c0[1]];
        let bowl = self.q * (d0[0] * d0[0] + d0[1] * d0[1]);
        bowl + self.lumps.iter().map(|l| l.weight(theta).0).sum::<f64>()
    }

    pub fn gradient(&self, theta: Point) -> Point {
        let mut g = [2.0 * self.q * (theta[0] - self.c0[0]), 2.0 * self.q * (theta[1] - self.c0[1])];
        for l in &self.lumps {
            let (e, d) = l.weight(theta);
            let s2 = l.scale * l.scale;
            g[0] -= e * d[0] / s2;
            g[1] -= e * d[1] / s2;
        }
        g
    }

    pub fn hessian(&self, theta: Point) -> [[f64; 2]; 2] {
        let mut h = [[2.0 * self.q, 0.0], [0.0, 2.0 * self.q]];
        for l in &self.lumps {
            let (e, d) = l.weight(theta);
            let s2 = l.scale * l.scale;
            let s4 = s2 * s2;
            for a in 0..2 {
                for b in 0..2 {
                    let identity = if a == b { 1.0 } else { 0.0 };
                    h[a][b] += e * (d[a] * d[b] / s4 - identity / s2);
                }
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftParams {
    pub sigma_c: f64,
    pub sigma_a: f64,
    pub sigma_s: f64,
}

impl DriftParams {
    pub const ZERO: DriftParams = DriftParams { sigma_c: 0.0, sigma_a: 0.0, sigma_s: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_c", self.sigma_c), ("sigma_a", self.sigma_a), ("sigma_s", self.sigma_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for DriftParams {
    fn default() -> Self {
        Self { sigma_c: 0.05, sigma_a: 0.03, sigma_s: 0.03 }
    }
}

/// Returns a drifted copy: centers take additive isotropic noise, amplitudes
/// and scales multiplicative noise. `c0` and `q` never change.
pub fn drift(snapshot: &Snapshot, params: &DriftParams, rng: &mut impl Rng) -> Snapshot {
    let nc = Normal::new(0.0, params.sigma_c).expect("validated sigma");
    let na = Normal::new(0.0, params.sigma_a).expect("validated sigma");
    let ns = Normal::new(0.0, params.sigma_s).expect("validated sigma");
    let mut out = snapshot.clone();
    for l in &mut out.lumps {
        l.center[0] += nc.sample(rng);
        l.center[1] += nc.sample(rng);
        l.amplitude = (l.amplitude * (1.0 + na.sample(rng))).max(SCALE_FLOOR);
        l.scale = (l.scale * (1.0 + ns.sample(rng))).max(SCALE_FLOOR);
    }
    out
}

/// Ranges used to draw the first snapshot of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub lumps: usize,
    /// `c0` is uniform in `[-c0_range, c0_range]^2`.
    pub c0_range: f64,
    pub q_range: [f64; 2],
    /// Lump centers are uniform in `[-center_range, center_range]^2`.
    pub center_range: f64,
    pub amplitude_range: [f64; 2],
    pub scale_range: [f64; 2],
    pub drift: DriftParams,
    pub train_len: usize,
    pub test_len: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            lumps: 8,
            c0_range: 2.0,
            q_range: [0.02, 0.08],
            center_range: 4.0,
            amplitude_range: [1.0, 6.0],
            scale_range: [0.3, 1.0],
            drift: DriftParams::default(),
            train_len: 30,
            test_len: 10,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, r: [f64; 2], positive: bool| -> Result<()> {
            if !(r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()) || (positive && !(r[0] > 0.0)) {
                return Err(Error::config(format!("invalid {name} range {r:?}")));
            }
            Ok(())
        };
        range("q", self.q_range, true)?;
        range("amplitude", self.amplitude_range, true)?;
        range("scale", self.scale_range, true)?;
        if !(self.c0_range >= 0.0 && self.center_range >= 0.0) {
            return Err(Error::config("c0_range and center_range must be nonnegative"));
        }
        if self.train_len == 0 || self.test_len == 0 || self.test_len > self.train_len {
            return Err(Error::config(format!(
                "need 1 <= test_len <= train_len, got train {} test {}",
                self.train_len, self.test_len
            )));
        }
        self.drift.validate()
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean over train snapshots.
    pub train: f64,
    /// Mean over test snapshots.
    pub test: f64,
    /// `test - train`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSequence {
    pub train: Vec<Snapshot>,
    pub test: Vec<Snapshot>,
    pub cursor: usize,
    pub drift: DriftParams,
    pub seed: u64,
}

impl LandscapeSequence {
    /// Draws snapshot 0 from `config`, then drifts it to fill the train
    /// sequence and keeps drifting to fill the test sequence.
    pub fn build(config: &GenConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c0 = [
            uniform(&mut rng, -config.c0_range, config.c0_range),
            uniform(&mut rng, -config.c0_range, config.c0_range),
        ];
        let q = uniform(&mut rng, config.q_range[0], config.q_range[1]);
        let lumps = (0..config.lumps)
            .map(|_| Lump {
                center: [
                    uniform(&mut rng, -config.center_range, config.center_range),
                    uniform(&mut rng, -config.center_range, config.center_range),
                ],
                amplitude: uniform(&mut rng, config.amplitude_range[0], config.amplitude_range[1]),
                scale: uniform(&mut rng, config.scale_range[0], config.scale_range[1]),
                sign: if rng.random_bool(0.5) { 1 } else { -1 },
            })
            .collect();

        let mut current = Snapshot { c0, q, lumps };
        let mut train = Vec::with_capacity(config.train_len);
        train.push(current.clone());
        for _ in 1..config.train_len {
            current = drift(&current, &config.drift, &mut rng);
            train.push(current.clone());
        }
        let mut test = Vec::with_capacity(config.test_len);
        for _ in 0..config.test_len {
            current = drift(&current, &config.drift, &mut rng);
            test.push(current.clone());
        }
        Ok(Self { train, test, cursor: 0, drift: config.drift, seed })
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() || self.test.len() > self.train.len() {
            return Err(Error::config("need 1 <= test snapshots <= train snapshots"));
        }
        if self.cursor >= self.train.len() {
            return Err(Error::config(format!("cursor {} out of range", self.cursor)));
        }
        self.drift.validate()?;
        self.train.iter().chain(&self.test).try_for_each(Snapshot::validate)
    }

    pub fn current(&self) -> &Snapshot {
        &self.train[self.cursor]
    }

    /// Value and gradient on the current train snapshot; advances the cursor.
    pub fn observe(&mut self, theta: Point) -> (f64, Point) {
        let s = &self.train[self.cursor];
        let out = (s.value(theta), s.gradient(theta));
        self.cursor = (self.cursor + 1) % self.train.len();
        out
    }

    pub fn train_value(&self, theta: Point) -> f64 {
        mean(self.train.iter().map(|s| s.value(theta)))
    }

    pub fn test_value(&self, theta: Point) -> f64 {
        mean(self.test.iter().map(|s| s.value(theta)))
    }

    pub fn metrics(&self, theta: Point) -> Metrics {
        let train = self.train_value(theta);
        let test = self.test_value(theta);
        Metrics { train, test, gap: test - train }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let seq: Self = serde_json::from_str(text)?;
        seq.validate()?;
        Ok(seq)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}
