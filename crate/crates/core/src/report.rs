//! Markdown, CSV and JSON emitters for benchmark, probe and verifier reports.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EulerReport, EulerVerdict, EvalReport, ProbeReport, UNPARSED};
use crate::protocol::Direction;
use crate::session::{Outcome, Termination};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown report format {0:?} (expected md, csv or json)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// A report that can be written in every supported format.
pub trait EmitReport: Serialize {
    fn markdown(&self) -> String;

    fn csv(&self) -> Result<Vec<u8>, ReportError>;

    fn emit(&self, format: ReportFormat) -> Result<Vec<u8>, ReportError> {
        match format {
            ReportFormat::Markdown => Ok(self.markdown().into_bytes()),
            ReportFormat::Csv => self.csv(),
            ReportFormat::Json => {
                let mut out = serde_json::to_vec_pretty(self)?;
                out.push(b'\n');
                Ok(out)
            }
        }
    }
}

pub fn emit_report(report: &impl EmitReport, format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    report.emit(format)
}

/// Percentage with at most two decimals and no trailing zeros: 0.625 → "62.5".
pub fn format_percent(fraction: f64) -> String {
    let s = format!("{:.2}", fraction * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// "55–62.5" for a spread, a single value when both ends agree.
pub fn format_range(min: f64, max: f64) -> String {
    let (lo, hi) = (format_percent(min), format_percent(max));
    if lo == hi {
        lo
    } else {
        format!("{lo}–{hi}")
    }
}

fn cell(text: &str) -> String {
    text.replace('|', "\\|").replace(['\r', '\n'], " ")
}

fn opt_percent(v: Option<f64>) -> String {
    v.map(format_percent).unwrap_or_else(|| "n/a".into())
}

fn termination_label(t: &Option<Termination>) -> String {
    match t {
        None => "unfinished".into(),
        Some(Termination::Answered) => "answered".into(),
        Some(Termination::BudgetTieBreak) => "budget_tie_break".into(),
        Some(Termination::Abstained) => "abstained".into(),
        Some(Termination::Failed { reason }) => format!("failed: {reason}"),
    }
}

fn outcome_label(o: Outcome) -> &'static str {
    match o {
        Outcome::Correct => "correct",
        Outcome::Wrong => "wrong",
        Outcome::Failed => "failed",
    }
}

fn csv_bytes<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| ReportError::Csv(csv::Error::from(e.into_error())))
}

pub const EVAL_CSV_COLUMNS: [&str; 12] = [
    "agent",
    "condition",
    "dataset_checksum",
    "seed",
    "run",
    "problem_id",
    "expected",
    "answer",
    "outcome",
    "iterations",
    "termination",
    "transcript",
];

#[derive(Serialize)]
struct EvalCsvRow<'a> {
    agent: &'a str,
    condition: &'a str,
    dataset_checksum: &'a str,
    seed: u64,
    run: u32,
    problem_id: &'a str,
    expected: String,
    answer: String,
    outcome: &'static str,
    iterations: u32,
    termination: String,
    transcript: &'a str,
}

impl EmitReport for EvalReport {
    fn markdown(&self) -> String {
        let p = &self.provenance;
        let mut s = String::new();
        let _ = writeln!(s, "# Benchmark report\n");
        let _ = writeln!(s, "| Field | Value |\n|---|---|");
        let _ = writeln!(s, "| Agent | {} |", cell(&p.agent));
        let _ = writeln!(s, "| Condition | {} |", p.condition.as_deref().unwrap_or("-"));
        let _ = writeln!(s, "| Dataset | {} |", cell(&p.dataset));
        let _ = writeln!(
            s,
            "| Dataset checksum | {} |",
            p.dataset_checksum.as_deref().unwrap_or("-")
        );
        let _ = writeln!(s, "| Seed | {} |", p.seed);
        let _ = writeln!(s, "| Runs | {} |", p.n_runs);
        if let Some(cfg) = &p.loop_config {
            let _ = writeln!(
                s,
                "| Iterations | min {}, max {} |",
                cfg.min_iterations, cfg.max_iterations
            );
        }
        if let Some(note) = &p.note {
            let _ = writeln!(s, "| Note | {} |", cell(note));
        }

        let _ = writeln!(s, "\n## Accuracy (%)\n");
        let _ = writeln!(
            s,
            "| Run | Correct | Wrong | Failed | Attempted | Accuracy |\n|---|---|---|---|---|---|"
        );
        for r in &self.runs {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                r.run,
                r.correct,
                r.wrong,
                r.failed,
                r.attempted,
                opt_percent(r.accuracy)
            );
        }
        if let (Some(lo), Some(hi)) = (self.min_accuracy, self.max_accuracy) {
            let _ = writeln!(s, "| Range | | | | | {} |", format_range(lo, hi));
            let _ = writeln!(s, "| Mean | | | | | {} |", opt_percent(self.mean_accuracy));
        }
        let _ = writeln!(
            s,
            "\nFailed sessions are excluded from accuracy and listed separately ({} total).",
            self.total_failed()
        );

        let _ = writeln!(s, "\n## Problems\n");
        let _ = writeln!(
            s,
            "| Run | Problem | Expected | Answer | Outcome | Iterations | Termination |\n|---|---|---|---|---|---|---|"
        );
        for o in &self.outcomes {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} |",
                o.run,
                cell(&o.problem_id),
                o.expected,
                o.answer.map(|a| a.to_string()).unwrap_or_else(|| "-".into()),
                outcome_label(o.outcome),
                o.iterations,
                cell(&termination_label(&o.termination))
            );
        }
        s
    }

    fn csv(&self) -> Result<Vec<u8>, ReportError> {
        let p = &self.provenance;
        let rows = self.outcomes.iter().map(|o| EvalCsvRow {
            agent: &p.agent,
            condition: p.condition.as_deref().unwrap_or(""),
            dataset_checksum: p.dataset_checksum.as_deref().unwrap_or(""),
            seed: p.seed,
            run: o.run,
            problem_id: &o.problem_id,
            expected: o.expected.to_string(),
            answer: o.answer.map(|a| a.to_string()).unwrap_or_default(),
            outcome: outcome_label(o.outcome),
            iterations: o.iterations,
            termination: termination_label(&o.termination),
            transcript: o.transcript.as_deref().unwrap_or(""),
        });
        csv_bytes(&EVAL_CSV_COLUMNS, rows)
    }
}

pub const PROBE_CSV_COLUMNS: [&str; 10] = [
    "agent",
    "pairs_checksum",
    "id",
    "truth",
    "predicted",
    "direction_correct",
    "angle_error",
    "multi",
    "unparsed",
    "raw",
];

#[derive(Serialize)]
struct ProbeCsvRow<'a> {
    agent: &'a str,
    pairs_checksum: &'a str,
    id: &'a str,
    truth: &'a str,
    predicted: &'a str,
    direction_correct: bool,
    angle_error: Option<f64>,
    multi: bool,
    unparsed: bool,
    raw: &'a str,
}

impl EmitReport for ProbeReport {
    fn markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Rotation probe report\n");
        let _ = writeln!(s, "| Field | Value |\n|---|---|");
        let _ = writeln!(s, "| Agent | {} |", cell(&self.agent));
        let _ = writeln!(s, "| Pair set checksum | {} |", self.pairs_checksum);
        let _ = writeln!(s, "| Items | {} |", self.rows.len());
        let _ = writeln!(
            s,
            "| Direction accuracy (%) | {} |",
            format_percent(self.direction_accuracy)
        );
        let _ = writeln!(
            s,
            "| Angle MAE (deg, direction-correct items) | {} |",
            self.angle_mae
                .map(|m| format!("{m:.2}"))
                .unwrap_or_else(|| "n/a".into())
        );

        let _ = writeln!(s, "\n## Per direction\n");
        let _ = writeln!(s, "| Direction | Correct | Total | Accuracy (%) |\n|---|---|---|---|");
        for (dir, acc) in &self.per_direction {
            let _ = writeln!(
                s,
                "| {dir} | {} | {} | {} |",
                acc.correct,
                acc.total,
                format_percent(acc.correct as f64 / acc.total.max(1) as f64)
            );
        }

        let cols: Vec<String> = Direction::ALL
            .iter()
            .map(|d| d.to_string())
            .chain([UNPARSED.to_string()])
            .collect();
        let _ = writeln!(s, "\n## Confusion (true × predicted)\n");
        let _ = writeln!(s, "| True | {} |", cols.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(cols.len()));
        for (truth, row) in &self.confusion {
            let counts: Vec<String> = cols
                .iter()
                .map(|c| row.get(c).copied().unwrap_or(0).to_string())
                .collect();
            let _ = writeln!(s, "| {truth} | {} |", counts.join(" | "));
        }

        let _ = writeln!(s, "\n## Items\n");
        let _ = writeln!(s, "| Id | Truth | Predicted | Direction | Angle error | Reply |\n|---|---|---|---|---|---|");
        for r in &self.rows {
            let mut flags = Vec::new();
            if r.multi {
                flags.push("multi");
            }
            if r.unparsed {
                flags.push(UNPARSED);
            }
            let reply = if flags.is_empty() {
                cell(&r.raw)
            } else {
                format!("{} ({})", cell(&r.raw), flags.join(", "))
            };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                cell(&r.id),
                r.truth,
                r.predicted.as_deref().unwrap_or("-"),
                if r.direction_correct { "✓" } else { "✗" },
                r.angle_error
                    .map(|e| format!("{e:.1}"))
                    .unwrap_or_else(|| "-".into()),
                reply
            );
        }
        s
    }

    fn csv(&self) -> Result<Vec<u8>, ReportError> {
        let rows = self.rows.iter().map(|r| ProbeCsvRow {
            agent: &self.agent,
            pairs_checksum: &self.pairs_checksum,
            id: &r.id,
            truth: &r.truth,
            predicted: r.predicted.as_deref().unwrap_or(""),
            direction_correct: r.direction_correct,
            angle_error: r.angle_error,
            multi: r.multi,
            unparsed: r.unparsed,
            raw: &r.raw,
        });
        csv_bytes(&PROBE_CSV_COLUMNS, rows)
    }
}

fn verdict_label(v: EulerVerdict) -> &'static str {
    match v {
        EulerVerdict::Match => "match",
        EulerVerdict::Mirror => "mirror",
        EulerVerdict::Fail => "fail",
    }
}

pub const EULER_CSV_COLUMNS: [&str; 10] = [
    "pairs_checksum",
    "tau",
    "id",
    "truth",
    "pitch",
    "yaw",
    "roll",
    "verdict",
    "diff",
    "flipped_axis",
];

#[derive(Serialize)]
struct EulerCsvRow<'a> {
    pairs_checksum: &'a str,
    tau: f64,
    id: &'a str,
    truth: &'a str,
    pitch: f64,
    yaw: f64,
    roll: f64,
    verdict: &'static str,
    diff: f64,
    flipped_axis: &'a str,
}

impl EmitReport for EulerReport {
    fn markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Rotation estimate verification\n");
        let _ = writeln!(s, "| Field | Value |\n|---|---|");
        let _ = writeln!(s, "| Pair set checksum | {} |", self.pairs_checksum);
        let _ = writeln!(s, "| Match threshold | {} |", self.tau);
        let _ = writeln!(s, "| Match | {} |", self.matches);
        let _ = writeln!(s, "| Mirror (scored as failure) | {} |", self.mirrors);
        let _ = writeln!(s, "| Fail | {} |", self.fails);
        if !self.missing.is_empty() {
            let _ = writeln!(s, "| Missing predictions | {} |", self.missing.join(", "));
        }
        let _ = writeln!(s, "\n## Items\n");
        let _ = writeln!(
            s,
            "| Id | Truth | Pitch | Yaw | Roll | Verdict | Diff |\n|---|---|---|---|---|---|---|"
        );
        for r in &self.rows {
            let verdict = match &r.check.flipped_axis {
                Some(axis) => format!("{} ({axis})", verdict_label(r.check.verdict)),
                None => verdict_label(r.check.verdict).to_string(),
            };
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {:.2} | {:.2} | {} | {:.4} |",
                cell(&r.id),
                r.truth,
                r.predicted.pitch,
                r.predicted.yaw,
                r.predicted.roll,
                verdict,
                r.check.diff
            );
        }
        s
    }

    fn csv(&self) -> Result<Vec<u8>, ReportError> {
        let rows = self.rows.iter().map(|r| EulerCsvRow {
            pairs_checksum: &self.pairs_checksum,
            tau: self.tau,
            id: &r.id,
            truth: &r.truth,
            pitch: r.predicted.pitch,
            yaw: r.predicted.yaw,
            roll: r.predicted.roll,
            verdict: verdict_label(r.check.verdict),
            diff: r.check.diff,
            flipped_axis: r.check.flipped_axis.as_deref().unwrap_or(""),
        });
        csv_bytes(&EULER_CSV_COLUMNS, rows)
    }
}
