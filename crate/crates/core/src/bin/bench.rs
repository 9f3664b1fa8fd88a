use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ctagd::bench::{
    ablation_sweep, curves_svg, emit_csv, emit_svg, format_summary, mean_curves, run_suite, trajectory_svg,
    write_ablation_csv, write_summary_csv, RunConfig, Suite, Task,
};
use ctagd::landscape::LandscapeSequence;
use ctagd::Error;

#[derive(Parser)]
#[command(name = "bench", about = "Seeded optimizer comparisons on the drifting testbed and the blobs MLP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare optimizers on the drifting 2-D landscape.
    Testbed(Common),
    /// Compare optimizers on the blobs classification task.
    Mlp(Common),
    /// Sweep one CT-AGD setting (`ablation.knob` / `ablation.values`).
    Ablate {
        #[arg(long, value_enum, default_value = "testbed")]
        task: TaskArg,
        #[command(flatten)]
        common: Common,
    },
    /// Write the landscape sequence of each seed as JSON (and a contour plot).
    DumpLandscape(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override such as `ctagd.omega=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Use seeds 0..N.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Disable drift on the testbed.
    #[arg(long)]
    stationary: bool,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
    /// Exit with status 3 if any run was flagged.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Testbed,
    Mlp,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Svg,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        self != Format::Svg
    }

    fn svg(self) -> bool {
        self != Format::Csv
    }
}

enum Failure {
    Config(String),
    Other(String),
    Flagged(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn config(common: &Common, task: Task) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.task = task;
    let mut cfg = cfg.with_overrides(&common.set)?;
    if let Some(n) = common.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(list) = &common.seed_list {
        cfg.seeds = list.clone();
    }
    cfg.stationary |= common.stationary;
    cfg.validate()?;
    Ok(cfg)
}

fn write_suite(suite: &Suite, cfg: &RunConfig, common: &Common) -> Result<(), Failure> {
    let out = &common.out;
    if common.format.csv() {
        emit_csv(&suite.records(), &out.join("records.csv"))?;
        write_summary_csv(&suite.summary, std::fs::File::create(out.join("summary.csv"))?)?;
    }
    if common.format.svg() {
        let (title, y_label) = match suite.task {
            Task::Testbed => ("Mean train objective", "L_avg"),
            Task::Mlp => ("Mean test accuracy", "accuracy"),
        };
        let curves = match suite.task {
            Task::Testbed => mean_curves(&suite.runs, |r| r.train_value),
            Task::Mlp => mean_curves(&suite.runs, |r| r.test_value),
        };
        let x_label = if suite.task == Task::Testbed { "step" } else { "epoch" };
        emit_svg(&curves_svg(&curves, title, x_label, y_label), &out.join("curves.svg"))?;
        if suite.task == Task::Testbed {
            let seed = cfg.seeds[0];
            let seq = LandscapeSequence::build(&cfg.landscape(), seed)?;
            let paths: Vec<(&str, &[[f64; 2]])> = suite
                .runs
                .iter()
                .filter(|r| r.seed == seed)
                .map(|r| (r.optimizer.name(), r.trajectory.as_slice()))
                .collect();
            let svg = trajectory_svg(&seq, &paths, &format!("Trajectories, seed {seed}"));
            emit_svg(&svg, &out.join(format!("trajectory-s{seed}.svg")))?;
        }
    }
    Ok(())
}

fn flagged(suite: &Suite) -> usize {
    suite.runs.iter().filter(|r| r.failed()).count()
}

fn prepare(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Testbed(common) => suite(common, Task::Testbed),
        Command::Mlp(common) => suite(common, Task::Mlp),
        Command::Ablate { task, common } => {
            let task = match task {
                TaskArg::Testbed => Task::Testbed,
                TaskArg::Mlp => Task::Mlp,
            };
            let cfg = config(&common, task)?;
            prepare(&common.out)?;
            let rows = ablation_sweep(&cfg, &cfg.ablation.knob, &cfg.ablation.values)?;
            for row in &rows {
                println!("{} = {}\n{}", row.knob, row.value, format_summary(&row.summary));
            }
            if common.format.csv() {
                write_ablation_csv(&rows, std::fs::File::create(common.out.join("ablation.csv"))?)?;
            }
            let failed: usize = rows.iter().flat_map(|r| &r.summary).map(|s| s.failed).sum();
            if common.strict && failed > 0 {
                return Err(Failure::Flagged(failed));
            }
            Ok(())
        }
        Command::DumpLandscape(common) => {
            let cfg = config(&common, Task::Testbed)?;
            prepare(&common.out)?;
            for &seed in &cfg.seeds {
                let seq = LandscapeSequence::build(&cfg.landscape(), seed)?;
                seq.save(&common.out.join(format!("landscape-s{seed}.json")))?;
                if common.format.svg() {
                    let svg = trajectory_svg(&seq, &[], &format!("Averaged train objective, seed {seed}"));
                    emit_svg(&svg, &common.out.join(format!("landscape-s{seed}.svg")))?;
                }
            }
            Ok(())
        }
    }
}

fn suite(common: Common, task: Task) -> Result<(), Failure> {
    let cfg = config(&common, task)?;
    prepare(&common.out)?;
    let suite = run_suite(&cfg)?;
    print!("{}", format_summary(&suite.summary));
    write_suite(&suite, &cfg, &common)?;
    let n = flagged(&suite);
    if common.strict && n > 0 {
        return Err(Failure::Flagged(n));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("bench: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("bench: {msg}");
            ExitCode::FAILURE
        }
        Err(Failure::Flagged(n)) => {
            eprintln!("bench: {n} flagged run(s)");
            ExitCode::from(3)
        }
    }
}
