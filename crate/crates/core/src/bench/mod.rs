//! Seeded optimizer comparisons on the landscape testbed and the blob MLP
//! task, with convergence detection, summaries, ablations, CSV and SVG output.

mod config;
mod plot;
mod report;
mod run;

pub use config::{AblationConfig, MlpConfig, NewtonConfig, OptimizerKind, RunConfig, Task, TestbedConfig};
pub use plot::{contour_segments, curves_svg, emit_svg, mean_curves, trajectory_svg};
pub use report::{
    emit_csv, format_summary, load_csv, read_records_csv, records_csv_string, without_timing, write_ablation_csv,
    write_records_csv, write_summary_csv, CSV_COLUMNS,
};
pub use run::{
    ablation_sweep, apply_knob, detect_convergence_accuracy, detect_convergence_value, final_value, moving_average,
    run_id, run_mlp, run_single, run_suite, run_testbed, summarize, testbed_start, AblationRow, MeanStd, RunOutput,
    RunRecord, Suite, SummaryRow, CONVERGENCE_FRAC, FLAG_DIVERGED, FLAG_LINE_SEARCH_FAILED, FLAG_NON_FINITE, KNOBS,
};
