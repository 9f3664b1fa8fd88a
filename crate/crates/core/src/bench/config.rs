use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backbones::{BackboneConfig, BackboneKind, LbfgsConfig};
use crate::ctagd::CtagdConfig;
use crate::error::{Error, Result};
use crate::landscape::{DriftParams, GenConfig};
use crate::smallnet::{BlobConfig, MlpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Testbed,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    CtagdSgd,
    CtagdAdam,
    Sgd,
    MomentumSgd,
    Adam,
    Yogi,
    Lbfgs,
    Newton2d,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 8] = [
        OptimizerKind::CtagdSgd,
        OptimizerKind::CtagdAdam,
        OptimizerKind::Sgd,
        OptimizerKind::MomentumSgd,
        OptimizerKind::Adam,
        OptimizerKind::Yogi,
        OptimizerKind::Lbfgs,
        OptimizerKind::Newton2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::CtagdSgd => "ctagd_sgd",
            OptimizerKind::CtagdAdam => "ctagd_adam",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::MomentumSgd => "momentum_sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Yogi => "yogi",
            OptimizerKind::Lbfgs => "lbfgs",
            OptimizerKind::Newton2d => "newton2d",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// First-order backbone driven by this optimizer, if any. `ctagd_sgd`
    /// wraps the heavy-ball variant; it reduces to plain SGD at momentum 0.
    pub fn backbone(self) -> Option<BackboneKind> {
        match self {
            OptimizerKind::Sgd => Some(BackboneKind::Sgd),
            OptimizerKind::CtagdSgd | OptimizerKind::MomentumSgd => Some(BackboneKind::MomentumSgd),
            OptimizerKind::CtagdAdam | OptimizerKind::Adam => Some(BackboneKind::Adam),
            OptimizerKind::Yogi => Some(BackboneKind::Yogi),
            OptimizerKind::Lbfgs | OptimizerKind::Newton2d => None,
        }
    }

    pub fn is_ctagd(self) -> bool {
        matches!(self, OptimizerKind::CtagdSgd | OptimizerKind::CtagdAdam)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonConfig {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { lr: 1.0, weight_decay: 5e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestbedConfig {
    pub landscape: GenConfig,
    pub max_steps: usize,
    /// Inner steps per CT-AGD epoch.
    pub epoch_len: usize,
    /// Stop once the smoothed train value has not improved for this many steps.
    pub patience: usize,
    /// Trailing moving-average window applied before convergence detection.
    pub smoothing: usize,
    /// Starting points are uniform in `[-init_range, init_range]^2`.
    pub init_range: f64,
    /// Gradient norm below which a second-order step is skipped as converged.
    pub grad_tol: f64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            landscape: GenConfig::default(),
            max_steps: 2000,
            epoch_len: 30,
            patience: 50,
            smoothing: 10,
            init_range: 4.0,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub net: MlpSpec,
    pub data: BlobConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            net: MlpSpec::default(),
            data: BlobConfig::default(),
            batch_size: 64,
            max_epochs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// One of `clamp`, `noise`, `anneal`, `weighting`, `omega`, `grad_mode`.
    pub knob: String,
    pub values: Vec<Value>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            knob: "clamp".into(),
            values: vec![
                serde_json::json!([0.1, 10.0]),
                serde_json::json!([0.01, 100.0]),
                serde_json::json!([0.001, 1000.0]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Empty selects every optimizer the task supports.
    pub optimizers: Vec<OptimizerKind>,
    pub seeds: Vec<u64>,
    /// Forces all drift magnitudes to zero.
    pub stationary: bool,
    /// Used by `sgd`, `momentum_sgd` and `ctagd_sgd`.
    pub sgd: BackboneConfig,
    /// Used by `adam`, `yogi` and `ctagd_adam`.
    pub adam: BackboneConfig,
    pub lbfgs: LbfgsConfig,
    pub newton: NewtonConfig,
    pub ctagd: CtagdConfig,
    pub testbed: TestbedConfig,
    pub mlp: MlpConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Testbed,
            optimizers: Vec::new(),
            seeds: (0..15).collect(),
            stationary: false,
            sgd: BackboneConfig::sgd(),
            adam: BackboneConfig::adam(),
            lbfgs: LbfgsConfig::default(),
            newton: NewtonConfig::default(),
            ctagd: CtagdConfig::default(),
            testbed: TestbedConfig::default(),
            mlp: MlpConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn for_task(task: Task) -> Self {
        Self { task, ..Default::default() }
    }

    /// Parses a possibly partial config; absent keys keep their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let patch: Value = serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        let mut tree = serde_json::to_value(Self::default())?;
        merge(&mut tree, patch, "")?;
        serde_json::from_value(tree).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies `key=value` overrides with dotted keys, e.g. `ctagd.omega=0.2`.
    /// Values parse as JSON when possible and as plain strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{item}` is not KEY=VALUE")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key, value)?;
        }
        serde_json::from_value(tree).map_err(|e| Error::config(format!("invalid override: {e}")))
    }

    pub fn optimizers(&self) -> Vec<OptimizerKind> {
        if !self.optimizers.is_empty() {
            return self.optimizers.clone();
        }
        match self.task {
            Task::Testbed => OptimizerKind::ALL.to_vec(),
            Task::Mlp => OptimizerKind::ALL.into_iter().filter(|k| k.backbone().is_some()).collect(),
        }
    }

    pub fn landscape(&self) -> GenConfig {
        let mut gen = self.testbed.landscape.clone();
        if self.stationary {
            gen.drift = DriftParams::ZERO;
        }
        gen
    }

    pub fn backbone_config(&self, kind: BackboneKind) -> &BackboneConfig {
        match kind {
            BackboneKind::Sgd | BackboneKind::MomentumSgd => &self.sgd,
            BackboneKind::Adam | BackboneKind::Yogi => &self.adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        self.sgd.validate()?;
        self.adam.validate()?;
        self.lbfgs.validate()?;
        self.ctagd.validate()?;
        if !(self.newton.lr > 0.0 && self.newton.weight_decay >= 0.0) {
            return Err(Error::config("newton needs lr > 0 and weight_decay >= 0"));
        }
        match self.task {
            Task::Testbed => {
                self.landscape().validate()?;
                let t = &self.testbed;
                if t.max_steps == 0 || t.epoch_len == 0 || t.patience == 0 || t.smoothing == 0 {
                    return Err(Error::config("testbed max_steps, epoch_len, patience and smoothing must be positive"));
                }
                if !(t.init_range >= 0.0 && t.grad_tol >= 0.0) {
                    return Err(Error::config("testbed init_range and grad_tol must be nonnegative"));
                }
            }
            Task::Mlp => {
                self.mlp.net.validate()?;
                if self.mlp.net.widths[0] != self.mlp.data.dim || self.mlp.net.classes() != self.mlp.data.classes {
                    return Err(Error::config("network input/output widths must match the dataset"));
                }
                if self.mlp.max_epochs == 0 {
                    return Err(Error::config("mlp max_epochs must be positive"));
                }
                if let Some(k) = self.optimizers().into_iter().find(|k| k.backbone().is_none()) {
                    return Err(Error::config(format!("{} is not available on the mlp task", k.name())));
                }
            }
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(base), Value::Object(patch)) => {
            for (key, value) in patch {
                let child_path = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                let child = base
                    .get_mut(&key)
                    .ok_or_else(|| Error::config(format!("unknown config key `{child_path}`")))?;
                merge(child, value, &child_path)?;
            }
            Ok(())
        }
        (base, patch) => {
            *base = patch;
            Ok(())
        }
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("`{key}`: `{part}` is not inside an object")))?;
        if !map.contains_key(*part) {
            return Err(Error::config(format!("unknown config key `{key}`")));
        }
        let child = map.get_mut(*part).expect("checked");
        if i + 1 == parts.len() {
            *child = value;
            return Ok(());
        }
        node = child;
    }
    Err(Error::config("empty override key"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = RunConfig::from_json(r#"{"task": "mlp", "ctagd": {"omega": 0.2}}"#).unwrap();
        assert_eq!(cfg.task, Task::Mlp);
        assert_eq!(cfg.ctagd.omega, 0.2);
        assert_eq!(cfg.ctagd.eta2, 0.5);

        let cfg = RunConfig::from_json(r#"{"adam": {"beta1": 0.8}}"#).unwrap();
        assert_eq!(cfg.adam.lr, 1e-3);
        assert!(matches!(RunConfig::from_json(r#"{"adam": {"nope": 1}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn overrides() {
        let cfg = RunConfig::default()
            .with_overrides(&["ctagd.omega=0.2", "task=mlp", "optimizers=[\"sgd\",\"adam\"]", "testbed.landscape.lumps=3"])
            .unwrap();
        assert_eq!(cfg.ctagd.omega, 0.2);
        assert_eq!(cfg.task, Task::Mlp);
        assert_eq!(cfg.optimizers, vec![OptimizerKind::Sgd, OptimizerKind::Adam]);
        assert_eq!(cfg.testbed.landscape.lumps, 3);

        for bad in ["ctagd.nope=1", "omega", "ctagd.omega=abc", "ctagd.omega.x=1"] {
            assert!(matches!(RunConfig::default().with_overrides(&[bad]), Err(Error::Config(_))), "{bad}");
        }
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn task_optimizer_lists() {
        assert_eq!(RunConfig::for_task(Task::Testbed).optimizers().len(), 8);
        let mlp = RunConfig::for_task(Task::Mlp);
        assert!(!mlp.optimizers().contains(&OptimizerKind::Lbfgs));
        let bad = RunConfig { optimizers: vec![OptimizerKind::Newton2d], ..mlp };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn stationary_zeroes_drift() {
        let cfg = RunConfig { stationary: true, ..Default::default() };
        assert_eq!(cfg.landscape().drift, DriftParams::ZERO);
        assert_ne!(RunConfig::default().landscape().drift, DriftParams::ZERO);
    }

    #[test]
    fn names_parse_back() {
        for k in OptimizerKind::ALL {
            assert_eq!(OptimizerKind::parse(k.name()), Some(k));
            assert_eq!(serde_json::to_value(k).unwrap(), Value::String(k.name().into()));
        }
    }
}
