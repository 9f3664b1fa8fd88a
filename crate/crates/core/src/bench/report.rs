use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::run::{AblationRow, MeanStd, RunRecord, SummaryRow};
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 10] = [
    "run_id",
    "optimizer",
    "seed",
    "index",
    "train_value",
    "test_value",
    "gap",
    "wall_clock_seconds",
    "converged_at",
    "flags",
];

pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_csv_string(records: &[RunRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_records_csv(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    write_records_csv(records, std::fs::File::create(path)?)
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::usage(format!("unexpected csv header {header:?}")));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<RunRecord>, _>>()?)
}

pub fn load_csv(path: &Path) -> Result<Vec<RunRecord>> {
    read_records_csv(std::fs::File::open(path)?)
}

/// The CSV with the timing column blanked, for reproducibility checks.
pub fn without_timing(csv_text: &str) -> String {
    let col = CSV_COLUMNS.iter().position(|&c| c == "wall_clock_seconds").expect("known column");
    let mut out = String::new();
    for line in csv_text.lines() {
        let mut fields: Vec<&str> = line.split(',').collect();
        if fields.len() > col {
            fields[col] = "";
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

const SUMMARY_COLUMNS: [&str; 12] = [
    "optimizer",
    "runs",
    "failed",
    "unconverged",
    "final_mean",
    "final_std",
    "steps_mean",
    "steps_std",
    "gap_mean",
    "gap_std",
    "time_mean",
    "time_std",
];

fn summary_fields(row: &SummaryRow) -> Vec<String> {
    let ms = |m: &MeanStd| [m.mean.to_string(), m.std.to_string()];
    let mut fields = vec![row.optimizer.clone(), row.runs.to_string(), row.failed.to_string(), row.unconverged.to_string()];
    for m in [&row.final_value, &row.steps, &row.gap, &row.time] {
        fields.extend(ms(m));
    }
    fields
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for row in rows {
        w.write_record(summary_fields(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["knob", "value"].iter().chain(SUMMARY_COLUMNS.iter()))?;
    for row in rows {
        for s in &row.summary {
            let mut fields = vec![row.knob.clone(), row.value.to_string()];
            fields.extend(summary_fields(s));
            w.write_record(fields)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table of a summary, one line per optimizer.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<14} {:>5} {:>6} {:>20} {:>20} {:>20} {:>16}\n",
        "optimizer", "runs", "failed", "final value", "steps", "gap", "time (s)"
    );
    let pm = |m: &MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
    for r in rows {
        let _ = writeln!(
            out,
            "{:<14} {:>5} {:>6} {:>20} {:>20} {:>20} {:>16}",
            r.optimizer,
            r.runs,
            r.failed,
            pm(&r.final_value),
            pm(&r.steps),
            pm(&r.gap),
            format!("{:.4} ± {:.4}", r.time.mean, r.time.std),
        );
    }
    out
}
