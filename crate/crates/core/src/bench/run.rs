use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{OptimizerKind, RunConfig, Task};
use crate::backbones::{newton2d_step, Backbone, Lbfgs};
use crate::ctagd::{AnnealMode, CtagdState, CurvatureWeighting, GradMode};
use crate::error::{Error, Result};
use crate::landscape::{LandscapeSequence, Point};
use crate::smallnet::{epoch_batches, BlobDataset, Mlp};
use crate::tensorcore::Layout;

pub const FLAG_NON_FINITE: &str = "non_finite";
pub const FLAG_LINE_SEARCH_FAILED: &str = "line_search_failed";
/// A testbed run whose smoothed train value ends above its starting value.
pub const FLAG_DIVERGED: &str = "diverged";

/// One row of a benchmark trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub optimizer: String,
    pub seed: u64,
    pub index: usize,
    pub train_value: f64,
    pub test_value: f64,
    pub gap: f64,
    pub wall_clock_seconds: f64,
    pub converged_at: Option<usize>,
    /// `;`-separated flags; empty when the row is clean.
    pub flags: String,
}

impl RunRecord {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// A complete run: its rows plus, for the testbed, the visited points.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub trajectory: Vec<Point>,
}

impl RunOutput {
    pub fn failed(&self) -> bool {
        self.records.iter().any(RunRecord::is_flagged)
    }

    pub fn converged_at(&self) -> Option<usize> {
        self.records.last().and_then(|r| r.converged_at)
    }

    pub fn last(&self) -> &RunRecord {
        self.records.last().expect("runs record at least the starting point")
    }
}

/// First index whose value reaches `(1 - frac) * reference`; the reference
/// defaults to the series' own final value.
pub fn detect_convergence_accuracy(series: &[f64], frac: f64, reference: Option<f64>) -> Option<usize> {
    let reference = reference.or_else(|| series.last().copied())?;
    let threshold = (1.0 - frac) * reference;
    series.iter().position(|&v| v >= threshold)
}

/// First index whose value is within `frac` of the initial-to-final drop
/// above the final value. A series that does not decrease converges at 0.
pub fn detect_convergence_value(series: &[f64], frac: f64) -> Option<usize> {
    let (first, last) = (*series.first()?, *series.last()?);
    if !(first > last) {
        return Some(0);
    }
    let threshold = last + frac * (first - last);
    series.iter().position(|&v| v <= threshold)
}

/// Trailing moving average with window `window` (shorter at the start).
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn run_id(optimizer: OptimizerKind, seed: u64) -> String {
    format!("{}-s{seed}", optimizer.name())
}

/// Starting point of a testbed run, drawn from its own stream of `seed`.
pub fn testbed_start(config: &RunConfig, seed: u64) -> Point {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let r = config.testbed.init_range;
    if r == 0.0 {
        return [0.0, 0.0];
    }
    [rng.random_range(-r..=r), rng.random_range(-r..=r)]
}

enum Stepper {
    FirstOrder(Backbone),
    Ctagd(Backbone, CtagdState),
    Lbfgs(Lbfgs),
    Newton,
}

fn stepper(config: &RunConfig, optimizer: OptimizerKind, layout: Layout, seed: u64) -> Result<Stepper> {
    Ok(match optimizer.backbone() {
        Some(kind) => {
            let backbone = Backbone::new(kind, config.backbone_config(kind).clone(), layout.len())?;
            if optimizer.is_ctagd() {
                Stepper::Ctagd(backbone, CtagdState::new(config.ctagd.clone(), layout, seed)?)
            } else {
                Stepper::FirstOrder(backbone)
            }
        }
        None if optimizer == OptimizerKind::Lbfgs => Stepper::Lbfgs(Lbfgs::new(config.lbfgs.clone())?),
        None => Stepper::Newton,
    })
}

struct Row<'a> {
    id: &'a str,
    optimizer: OptimizerKind,
    seed: u64,
    start: Instant,
}

impl Row<'_> {
    fn record(&self, index: usize, train_value: f64, test_value: f64, flags: &str) -> RunRecord {
        RunRecord {
            run_id: self.id.to_string(),
            optimizer: self.optimizer.name().to_string(),
            seed: self.seed,
            index,
            train_value,
            test_value,
            gap: test_value - train_value,
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
            converged_at: None,
            flags: flags.to_string(),
        }
    }
}

fn finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Maps a non-finite failure to its flag and passes other errors through.
fn step_flag(result: Result<()>) -> Result<Option<&'static str>> {
    match result {
        Ok(()) => Ok(None),
        Err(Error::NonFinite(_)) => Ok(Some(FLAG_NON_FINITE)),
        Err(e) => Err(e),
    }
}

/// One optimizer on the landscape testbed for `seed`. Every optimizer with
/// the same seed sees the same sequence and starting point. Each call to the
/// sequence and each CT-AGD boundary update counts as one step.
pub fn run_testbed(config: &RunConfig, optimizer: OptimizerKind, seed: u64) -> Result<RunOutput> {
    let mut seq = LandscapeSequence::build(&config.landscape(), seed)?;
    let tb = &config.testbed;
    let mut theta = testbed_start(config, seed);
    let mut stepper = stepper(config, optimizer, Layout::single("theta", 2), seed)?;
    let id = run_id(optimizer, seed);
    let row = Row { id: &id, optimizer, seed, start: Instant::now() };

    let m = seq.metrics(theta);
    let mut records = vec![row.record(0, m.train, m.test, "")];
    let mut trajectory = vec![theta];
    let mut train = vec![m.train];
    let mut best = m.train;
    let mut since_best = 0;
    let mut failed = false;

    for index in 1..=tb.max_steps {
        let flag = match &mut stepper {
            Stepper::FirstOrder(backbone) => {
                let (_, g) = seq.observe(theta);
                let lr = backbone.base_lr();
                step_flag(backbone.step(&mut theta, &g, lr))?
            }
            Stepper::Ctagd(backbone, state) => {
                if state.step() == tb.epoch_len {
                    step_flag(state.end_epoch(&mut theta).map(|_| ()))?
                } else {
                    let (_, g) = seq.observe(theta);
                    step_flag(state.inner_step(&mut theta, &g, backbone, tb.epoch_len))?
                }
            }
            Stepper::Lbfgs(lbfgs) => {
                let snapshot = seq.current().clone();
                let (v, g) = seq.observe(theta);
                let wd = config.lbfgs.weight_decay;
                let norm = (g[0] + wd * theta[0]).hypot(g[1] + wd * theta[1]);
                if norm < tb.grad_tol {
                    None
                } else {
                    match lbfgs.step(&mut theta, v, &g, |x| snapshot.value([x[0], x[1]])) {
                        Ok(search) if search.failed => Some(FLAG_LINE_SEARCH_FAILED),
                        other => step_flag(other.map(|_| ()))?,
                    }
                }
            }
            Stepper::Newton => {
                let hess = seq.current().hessian(theta);
                let (_, g) = seq.observe(theta);
                let wd = config.newton.weight_decay;
                let g = [g[0] + wd * theta[0], g[1] + wd * theta[1]];
                let hess = [[hess[0][0] + wd, hess[0][1]], [hess[1][0], hess[1][1] + wd]];
                if g[0].hypot(g[1]) >= tb.grad_tol {
                    theta = newton2d_step(theta, g, hess, config.newton.lr);
                }
                None
            }
        };
        let flag = flag.or((!finite(&theta)).then_some(FLAG_NON_FINITE));
        let m = seq.metrics(theta);
        let flag = flag.or((!(m.train.is_finite() && m.test.is_finite())).then_some(FLAG_NON_FINITE));
        records.push(row.record(index, m.train, m.test, flag.unwrap_or("")));
        trajectory.push(theta);
        train.push(m.train);
        if flag.is_some() {
            failed = true;
            break;
        }
        let smoothed = moving_average(&train[train.len().saturating_sub(tb.smoothing)..], tb.smoothing);
        let current = *smoothed.last().expect("nonempty");
        if current < best {
            best = current;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tb.patience {
                break;
            }
        }
    }

    if !failed {
        let smoothed = moving_average(&train, tb.smoothing);
        if smoothed.last().is_some_and(|&v| v > train[0]) {
            records.last_mut().expect("nonempty").flags = FLAG_DIVERGED.to_string();
        } else {
            let converged = detect_convergence_value(&smoothed, CONVERGENCE_FRAC);
            records.iter_mut().for_each(|r| r.converged_at = converged);
        }
    }
    Ok(RunOutput { optimizer, seed, records, trajectory })
}

/// Band used by both convergence detectors.
pub const CONVERGENCE_FRAC: f64 = 0.05;

/// Seed of the batch order for `epoch`; shared by every optimizer with the same run seed.
fn batch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
}

/// One optimizer on the blob classification task for `seed`. Rows are
/// indexed by epoch (0 is the initial network) and hold train and test
/// accuracy; `converged_at` uses the run's own final test accuracy.
pub fn run_mlp(config: &RunConfig, optimizer: OptimizerKind, seed: u64) -> Result<RunOutput> {
    let mc = &config.mlp;
    let data = BlobDataset::generate(&mc.data, seed)?;
    let net = Mlp::new(mc.net.clone())?;
    let mut params = net.init_params(seed);
    let mut stepper = stepper(config, optimizer, net.layout().clone(), seed)?;
    if matches!(stepper, Stepper::Lbfgs(_) | Stepper::Newton) {
        return Err(Error::config(format!("{} is not available on the mlp task", optimizer.name())));
    }
    let id = run_id(optimizer, seed);
    let row = Row { id: &id, optimizer, seed, start: Instant::now() };

    let accuracies = |params: &[f64]| -> Result<(f64, f64)> {
        Ok((net.accuracy(params, &data.train)?, net.accuracy(params, &data.test)?))
    };
    let (train_acc, test_acc) = accuracies(&params)?;
    let mut records = vec![row.record(0, train_acc, test_acc, "")];
    let mut failed = false;

    'epochs: for epoch in 0..mc.max_epochs {
        let batches = epoch_batches(data.train.len(), mc.batch_size, batch_seed(seed, epoch));
        let mut flag = None;
        for batch in &batches {
            let (_, g) = net.loss_and_grad(&params, &data.train, batch)?;
            flag = match &mut stepper {
                Stepper::FirstOrder(backbone) => {
                    let lr = backbone.base_lr();
                    step_flag(backbone.step(&mut params, &g, lr))?
                }
                Stepper::Ctagd(backbone, state) => step_flag(state.inner_step(&mut params, &g, backbone, batches.len()))?,
                Stepper::Lbfgs(_) | Stepper::Newton => unreachable!("rejected above"),
            };
            if flag.is_some() {
                break;
            }
        }
        if flag.is_none() {
            if let Stepper::Ctagd(_, state) = &mut stepper {
                flag = step_flag(state.end_epoch(&mut params).map(|_| ()))?;
            }
        }
        let flag = flag.or((!finite(&params)).then_some(FLAG_NON_FINITE));
        let (train_acc, test_acc) = if flag.is_some() { (f64::NAN, f64::NAN) } else { accuracies(&params)? };
        records.push(row.record(epoch + 1, train_acc, test_acc, flag.unwrap_or("")));
        if flag.is_some() {
            failed = true;
            break 'epochs;
        }
    }

    if !failed {
        let series: Vec<f64> = records.iter().map(|r| r.test_value).collect();
        let converged = detect_convergence_accuracy(&series, CONVERGENCE_FRAC, None);
        records.iter_mut().for_each(|r| r.converged_at = converged);
    }
    Ok(RunOutput { optimizer, seed, records, trajectory: Vec::new() })
}

pub fn run_single(config: &RunConfig, optimizer: OptimizerKind, seed: u64) -> Result<RunOutput> {
    match config.task {
        Task::Testbed => run_testbed(config, optimizer, seed),
        Task::Mlp => run_mlp(config, optimizer, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std, n }
    }
}

/// Per-optimizer aggregate over the non-failed runs of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub optimizer: String,
    pub runs: usize,
    pub failed: usize,
    /// Non-failed runs without a convergence index; excluded from `steps`.
    pub unconverged: usize,
    pub final_value: MeanStd,
    pub steps: MeanStd,
    pub gap: MeanStd,
    pub time: MeanStd,
}

/// Train objective at the last iterate on the testbed, final test accuracy on the MLP task.
pub fn final_value(task: Task, run: &RunOutput) -> f64 {
    match task {
        Task::Testbed => run.last().train_value,
        Task::Mlp => run.last().test_value,
    }
}

pub fn summarize(task: Task, runs: &[RunOutput]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, Vec<&RunOutput>> = BTreeMap::new();
    for run in runs {
        groups.entry(run.optimizer.name()).or_default().push(run);
    }
    groups
        .into_iter()
        .map(|(name, group)| {
            let ok: Vec<&RunOutput> = group.iter().copied().filter(|r| !r.failed()).collect();
            let steps: Vec<f64> = ok.iter().filter_map(|r| r.converged_at()).map(|s| s as f64).collect();
            SummaryRow {
                optimizer: name.to_string(),
                runs: group.len(),
                failed: group.len() - ok.len(),
                unconverged: ok.len() - steps.len(),
                final_value: MeanStd::of(&ok.iter().map(|r| final_value(task, r)).collect::<Vec<_>>()),
                steps: MeanStd::of(&steps),
                gap: MeanStd::of(&ok.iter().map(|r| r.last().gap).collect::<Vec<_>>()),
                time: MeanStd::of(&ok.iter().map(|r| r.last().wall_clock_seconds).collect::<Vec<_>>()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub task: Task,
    /// Sorted by optimizer name, then seed.
    pub runs: Vec<RunOutput>,
    pub summary: Vec<SummaryRow>,
}

impl Suite {
    /// All rows, ordered by (optimizer, seed, index).
    pub fn records(&self) -> Vec<RunRecord> {
        self.runs.iter().flat_map(|r| r.records.iter().cloned()).collect()
    }

    pub fn run(&self, optimizer: OptimizerKind, seed: u64) -> Option<&RunOutput> {
        self.runs.iter().find(|r| r.optimizer == optimizer && r.seed == seed)
    }
}

/// Runs every configured optimizer on every seed, in parallel. On the MLP
/// task `converged_at` is recomputed against the best final test accuracy
/// across optimizers for the same seed.
pub fn run_suite(config: &RunConfig) -> Result<Suite> {
    config.validate()?;
    let mut optimizers = config.optimizers();
    optimizers.sort_by_key(|k| k.name());
    optimizers.dedup();
    let jobs: Vec<(OptimizerKind, u64)> =
        optimizers.iter().flat_map(|&k| config.seeds.iter().map(move |&s| (k, s))).collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(k, s)| run_single(config, k, s))
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| (a.optimizer.name(), a.seed).cmp(&(b.optimizer.name(), b.seed)));

    if config.task == Task::Mlp {
        let mut best: BTreeMap<u64, f64> = BTreeMap::new();
        for run in runs.iter().filter(|r| !r.failed()) {
            let v = run.last().test_value;
            let entry = best.entry(run.seed).or_insert(v);
            *entry = entry.max(v);
        }
        for run in runs.iter_mut().filter(|r| !r.failed()) {
            let series: Vec<f64> = run.records.iter().map(|r| r.test_value).collect();
            let converged = detect_convergence_accuracy(&series, CONVERGENCE_FRAC, best.get(&run.seed).copied());
            run.records.iter_mut().for_each(|r| r.converged_at = converged);
        }
    }

    let summary = summarize(config.task, &runs);
    Ok(Suite { task: config.task, runs, summary })
}

/// Names accepted by [`apply_knob`].
pub const KNOBS: [&str; 6] = ["clamp", "noise", "anneal", "weighting", "omega", "grad_mode"];

/// Returns `config` with one CT-AGD setting replaced by `value`.
pub fn apply_knob(config: &RunConfig, knob: &str, value: &Value) -> Result<RunConfig> {
    fn parse<T: serde::de::DeserializeOwned>(knob: &str, value: &Value) -> Result<T> {
        serde_json::from_value(value.clone()).map_err(|e| Error::config(format!("bad value {value} for {knob}: {e}")))
    }
    let mut out = config.clone();
    let c = &mut out.ctagd;
    match knob {
        "clamp" => [c.lambda_min, c.lambda_max] = parse::<[f64; 2]>(knob, value)?,
        "noise" => c.noise_var = parse(knob, value)?,
        "anneal" => c.anneal = parse::<AnnealMode>(knob, value)?,
        "weighting" => c.weighting = parse::<CurvatureWeighting>(knob, value)?,
        "omega" => c.omega = parse(knob, value)?,
        "grad_mode" => c.grad_mode = parse::<GradMode>(knob, value)?,
        other => {
            return Err(Error::config(format!("unknown ablation knob `{other}`; expected one of {}", KNOBS.join(", "))))
        }
    }
    out.ctagd.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub knob: String,
    pub value: Value,
    pub summary: Vec<SummaryRow>,
}

/// One suite per knob value with shared seeds.
pub fn ablation_sweep(base: &RunConfig, knob: &str, values: &[Value]) -> Result<Vec<AblationRow>> {
    let configs = values.iter().map(|v| apply_knob(base, knob, v)).collect::<Result<Vec<_>>>()?;
    configs
        .iter()
        .zip(values)
        .map(|(cfg, v)| {
            Ok(AblationRow { knob: knob.to_string(), value: v.clone(), summary: run_suite(cfg)?.summary })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_convergence() {
        assert_eq!(detect_convergence_accuracy(&[0.7; 5], 0.05, None), Some(0));
        assert_eq!(detect_convergence_accuracy(&[0.2, 0.5, 0.9, 0.95, 0.96], 0.05, None), Some(3));
        assert_eq!(detect_convergence_accuracy(&[0.2, 0.5, 0.6], 0.05, Some(0.99)), None);
        assert_eq!(detect_convergence_accuracy(&[], 0.05, None), None);
    }

    #[test]
    fn value_convergence() {
        assert_eq!(detect_convergence_value(&[10.0, 5.0, 1.0, 0.0, 0.0], 0.05), Some(3));
        assert_eq!(detect_convergence_value(&[3.0; 4], 0.05), Some(0));
        assert_eq!(detect_convergence_value(&[1.0, 2.0], 0.05), Some(0));
        // initial 2, final -4: threshold -4 + 0.05 * 6 = -3.7
        assert_eq!(detect_convergence_value(&[2.0, -3.6, -3.7, -4.0], 0.05), Some(2));
    }

    #[test]
    fn moving_average_warms_up() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(moving_average(&[4.0], 10), vec![4.0]);
    }

    #[test]
    fn mean_std_matches_definition() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[7.0]).std, 0.0);
        assert!(MeanStd::of(&[]).mean.is_nan());
    }

    #[test]
    fn knobs() {
        let base = RunConfig::default();
        let c = apply_knob(&base, "clamp", &serde_json::json!([0.1, 10.0])).unwrap();
        assert_eq!((c.ctagd.lambda_min, c.ctagd.lambda_max), (0.1, 10.0));
        assert_eq!(apply_knob(&base, "noise", &serde_json::json!(0.01)).unwrap().ctagd.noise_var, 0.01);
        assert_eq!(apply_knob(&base, "anneal", &serde_json::json!("none")).unwrap().ctagd.anneal, AnnealMode::None);
        assert_eq!(apply_knob(&base, "omega", &serde_json::json!(0.5)).unwrap().ctagd.omega, 0.5);
        assert!(matches!(apply_knob(&base, "lr", &serde_json::json!(1.0)), Err(Error::Config(_))));
        assert!(matches!(apply_knob(&base, "omega", &serde_json::json!(2.0)), Err(Error::Config(_))));
        assert!(matches!(apply_knob(&base, "clamp", &serde_json::json!("x")), Err(Error::Config(_))));
    }
}
