//! Per-function verdicts, aggregates and rendering.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use super::runner::VerifierStatus;
use crate::cemit::TypeFlag;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FunctionStatus {
    /// No INVALID block is reachable from the function entry.
    InvalidFree,
    Discarded {
        reason: String,
    },
    /// C units were produced; see the per-verifier results.
    Emitted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunResult {
    pub verifier: String,
    pub flag: TypeFlag,
    pub status: VerifierStatus,
}

/// Flat view of a function outcome for one (verifier, flag) column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Verified,
    NonVerified,
    Timeout,
    Error,
    Discarded,
    InvalidFree,
    EmittedOnly,
}

impl From<VerifierStatus> for Status {
    fn from(s: VerifierStatus) -> Self {
        match s {
            VerifierStatus::Verified => Status::Verified,
            VerifierStatus::NonVerified => Status::NonVerified,
            VerifierStatus::Timeout => Status::Timeout,
            VerifierStatus::Error => Status::Error,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Verified => "verified",
            Status::NonVerified => "non-verified",
            Status::Timeout => "timeout",
            Status::Error => "error",
            Status::Discarded => "discarded",
            Status::InvalidFree => "invalid-free",
            Status::EmittedOnly => "emitted-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionVerdict {
    pub contract: String,
    pub function: String,
    pub selector: Option<String>,
    pub status: FunctionStatus,
    pub results: Vec<RunResult>,
    /// Hex calldata reaching INVALID in the concrete interpreter.
    pub witness: Option<String>,
    pub notes: Vec<String>,
    /// Emitted C files, relative to the output directory.
    pub outputs: Vec<String>,
}

impl FunctionVerdict {
    pub fn status_for(&self, verifier: &str, flag: TypeFlag) -> Status {
        match &self.status {
            FunctionStatus::InvalidFree => Status::InvalidFree,
            FunctionStatus::Discarded { .. } => Status::Discarded,
            FunctionStatus::Emitted => self
                .results
                .iter()
                .find(|r| r.verifier == verifier && r.flag == flag)
                .map_or(Status::EmittedOnly, |r| r.status.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureStage {
    Read,
    Decode,
    Deploy,
    Cfg,
    Decompile,
    Write,
}

impl fmt::Display for FailureStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureStage::Read => "read",
            FailureStage::Decode => "decode",
            FailureStage::Deploy => "deploy",
            FailureStage::Cfg => "cfg",
            FailureStage::Decompile => "decompile",
            FailureStage::Write => "write",
        })
    }
}

/// A contract, or one function of it, that did not make it through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PipelineFailure {
    pub contract: String,
    pub function: Option<String>,
    pub stage: FailureStage,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    /// Functions plus failed units.
    pub units: usize,
    pub invalid_free: usize,
    pub discarded: usize,
    pub failures: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub verifier: String,
    pub flag: TypeFlag,
    pub counts: [usize; 4],
    /// Percentages over emitted functions, in `VerifierStatus::ALL` order.
    pub percent: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Report {
    pub verifiers: Vec<String>,
    pub flags: Vec<TypeFlag>,
    pub functions: Vec<FunctionVerdict>,
    pub failures: Vec<PipelineFailure>,
}

impl Report {
    pub fn totals(&self) -> Totals {
        let count = |pred: fn(&FunctionStatus) -> bool| {
            self.functions.iter().filter(|f| pred(&f.status)).count()
        };
        Totals {
            units: self.functions.len() + self.failures.len(),
            invalid_free: count(|s| matches!(s, FunctionStatus::InvalidFree)),
            discarded: count(|s| matches!(s, FunctionStatus::Discarded { .. })),
            failures: self.failures.len(),
            emitted: count(|s| matches!(s, FunctionStatus::Emitted)),
        }
    }

    pub fn count(&self, verifier: &str, flag: TypeFlag, status: Status) -> usize {
        self.functions
            .iter()
            .filter(|f| f.status_for(verifier, flag) == status)
            .count()
    }

    pub fn aggregate(&self, verifier: &str, flag: TypeFlag) -> Aggregate {
        let emitted = self.totals().emitted;
        let counts = VerifierStatus::ALL.map(|s| self.count(verifier, flag, s.into()));
        let percent = counts.map(|c| {
            if emitted == 0 {
                0.0
            } else {
                100.0 * c as f64 / emitted as f64
            }
        });
        Aggregate {
            verifier: verifier.to_string(),
            flag,
            counts,
            percent,
        }
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.verifiers
            .iter()
            .flat_map(|v| self.flags.iter().map(move |&f| self.aggregate(v, f)))
            .collect()
    }

    /// Every unit is counted exactly once, and every (verifier, flag) column
    /// accounts for every emitted function.
    pub fn totality_holds(&self) -> bool {
        let t = self.totals();
        if t.invalid_free + t.discarded + t.failures + t.emitted != t.units {
            return false;
        }
        let columns: Vec<(&str, TypeFlag)> = if self.verifiers.is_empty() {
            vec![("", TypeFlag::SignedInt)]
        } else {
            self.verifiers
                .iter()
                .flat_map(|v| self.flags.iter().map(move |&f| (v.as_str(), f)))
                .collect()
        };
        columns.iter().all(|&(v, f)| {
            let done: usize = [
                Status::Verified,
                Status::NonVerified,
                Status::Timeout,
                Status::Error,
                Status::EmittedOnly,
            ]
            .iter()
            .map(|&s| self.count(v, f, s))
            .sum();
            done == t.emitted
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    Json,
    Csv,
    #[default]
    Table,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

pub fn render_report(r: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => render_json(r),
        ReportFormat::Csv => render_csv(r),
        ReportFormat::Table => render_table(r),
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    totals: Totals,
    aggregates: Vec<Aggregate>,
    #[serde(flatten)]
    report: &'a Report,
}

fn render_json(r: &Report) -> String {
    let doc = JsonReport {
        totals: r.totals(),
        aggregates: r.aggregates(),
        report: r,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

fn render_csv(r: &Report) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record([
        "contract", "function", "selector", "verifier", "type", "status", "reason", "witness",
        "notes",
    ]);
    let columns: Vec<(String, TypeFlag)> = r
        .verifiers
        .iter()
        .flat_map(|v| r.flags.iter().map(move |&f| (v.clone(), f)))
        .collect();
    for f in &r.functions {
        let reason = match &f.status {
            FunctionStatus::Discarded { reason } => reason.as_str(),
            _ => "",
        };
        let base = |verifier: &str, flag: &str, status: Status| {
            vec![
                f.contract.clone(),
                f.function.clone(),
                f.selector.clone().unwrap_or_default(),
                verifier.to_string(),
                flag.to_string(),
                status.to_string(),
                reason.to_string(),
                f.witness.clone().unwrap_or_default(),
                f.notes.join("; "),
            ]
        };
        if columns.is_empty() || f.status != FunctionStatus::Emitted {
            let status = f.status_for("", TypeFlag::SignedInt);
            let _ = w.write_record(base("", "", status));
        } else {
            for (v, flag) in &columns {
                let _ = w.write_record(base(v, flag.short(), f.status_for(v, *flag)));
            }
        }
    }
    for fail in &r.failures {
        let _ = w.write_record([
            fail.contract.as_str(),
            fail.function.as_deref().unwrap_or(""),
            "",
            "",
            "",
            "failure",
            &format!("{}: {}", fail.stage, fail.message),
            "",
            "",
        ]);
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields")
}

fn render_table(r: &Report) -> String {
    let t = r.totals();
    let mut s = String::new();
    let _ = writeln!(s, "functions       {}", t.units - t.failures);
    let _ = writeln!(s, "invalid-free    {}", t.invalid_free);
    let _ = writeln!(s, "discarded       {}", t.discarded);
    let _ = writeln!(s, "emitted         {}", t.emitted);
    let _ = writeln!(s, "failures        {}", t.failures);
    for stage in [
        FailureStage::Read,
        FailureStage::Decode,
        FailureStage::Deploy,
        FailureStage::Cfg,
        FailureStage::Decompile,
        FailureStage::Write,
    ] {
        let n = r.failures.iter().filter(|f| f.stage == stage).count();
        if n > 0 {
            let _ = writeln!(s, "  {:<13} {n}", stage.to_string());
        }
    }
    s.push('\n');

    const W: usize = 9;
    let groups: Vec<&str> = if r.verifiers.is_empty() {
        vec!["-"]
    } else {
        r.verifiers.iter().map(String::as_str).collect()
    };
    let flags: Vec<TypeFlag> = if r.flags.is_empty() {
        vec![TypeFlag::SignedInt]
    } else {
        r.flags.clone()
    };
    let group_w = flags.len() * (W + 3) - 3;
    let _ = write!(s, "{:<14}", "");
    for g in &groups {
        let _ = write!(s, " | {g:<group_w$}");
    }
    s.push('\n');
    let _ = write!(s, "{:<14}", "");
    for _ in &groups {
        for f in &flags {
            let _ = write!(s, " | {:<W$}", f.short());
        }
    }
    s.push('\n');
    for (k, status) in VerifierStatus::ALL.iter().enumerate() {
        let _ = write!(s, "{:<14}", status.label());
        for g in &groups {
            for &f in &flags {
                let pct = if r.verifiers.is_empty() {
                    0.0
                } else {
                    r.aggregate(g, f).percent[k]
                };
                let _ = write!(s, " | {:>W$}", format!("{pct:.2}%"));
            }
        }
        s.push('\n');
    }
    s
}
