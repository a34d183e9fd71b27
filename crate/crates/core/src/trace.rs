//! Per-frame latency trace data model and the on-disk text format shared by
//! every analysis in this crate.
//!
//! A trace file is UTF-8, `\n`-terminated, comma-separated with a fixed
//! header and no quoting. Stage times are milliseconds serialized with six
//! decimal digits; tags are restricted to `[a-z0-9_-]+`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Normative header line of the trace format.
pub const TRACE_HEADER: &str = "frame_id,timestamp_ms,t_read_ms,t_pre_ms,t_infer_ms,t_post_ms,n_proposals,n_lane_pixels,n_detections,model_tag,scenario_tag";

const COLUMN_NAMES: [&str; 11] = [
    "frame_id",
    "timestamp_ms",
    "t_read_ms",
    "t_pre_ms",
    "t_infer_ms",
    "t_post_ms",
    "n_proposals",
    "n_lane_pixels",
    "n_detections",
    "model_tag",
    "scenario_tag",
];

/// One frame's stage breakdown plus the intermediate counts observed during
/// inference. `n_proposals` carries the object-detection proposal count,
/// `n_lane_pixels` the lane-pixel count; whichever is irrelevant for the
/// model family is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub frame_id: u64,
    pub timestamp_ms: f64,
    pub t_read_ms: f64,
    pub t_pre_ms: f64,
    pub t_infer_ms: f64,
    pub t_post_ms: f64,
    pub n_proposals: u64,
    pub n_lane_pixels: u64,
    pub n_detections: u64,
    pub model_tag: String,
    pub scenario_tag: String,
}

impl TraceRecord {
    /// Sum of the four stage latencies; there are no hidden stages.
    pub fn end_to_end_ms(&self) -> f64 {
        self.t_read_ms + self.t_pre_ms + self.t_infer_ms + self.t_post_ms
    }

    /// Everything except post-processing: read + pre-processing + inference.
    pub fn remaining_ms(&self) -> f64 {
        self.t_read_ms + self.t_pre_ms + self.t_infer_ms
    }
}

/// Numeric trace columns that can be extracted as a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Timestamp,
    Read,
    Pre,
    Infer,
    Post,
    EndToEnd,
    Remaining,
    Proposals,
    LanePixels,
    Detections,
}

impl Column {
    pub fn name(&self) -> &'static str {
        match self {
            Column::Timestamp => "timestamp",
            Column::Read => "t_read",
            Column::Pre => "t_pre",
            Column::Infer => "t_infer",
            Column::Post => "t_post",
            Column::EndToEnd => "end_to_end",
            Column::Remaining => "remaining",
            Column::Proposals => "n_proposals",
            Column::LanePixels => "n_lane_pixels",
            Column::Detections => "n_detections",
        }
    }

    fn extract(&self, record: &TraceRecord) -> f64 {
        match self {
            Column::Timestamp => record.timestamp_ms,
            Column::Read => record.t_read_ms,
            Column::Pre => record.t_pre_ms,
            Column::Infer => record.t_infer_ms,
            Column::Post => record.t_post_ms,
            Column::EndToEnd => record.end_to_end_ms(),
            Column::Remaining => record.remaining_ms(),
            Column::Proposals => record.n_proposals as f64,
            Column::LanePixels => record.n_lane_pixels as f64,
            Column::Detections => record.n_detections as f64,
        }
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timestamp" => Ok(Column::Timestamp),
            "t_read" => Ok(Column::Read),
            "t_pre" => Ok(Column::Pre),
            "t_infer" => Ok(Column::Infer),
            "t_post" => Ok(Column::Post),
            "end_to_end" => Ok(Column::EndToEnd),
            "remaining" => Ok(Column::Remaining),
            "n_proposals" => Ok(Column::Proposals),
            "n_lane_pixels" => Ok(Column::LanePixels),
            "n_detections" => Ok(Column::Detections),
            other => Err(Error::InvalidParameter(format!("unknown column `{other}`"))),
        }
    }
}

/// An ordered, validated set of trace records. Immutable after construction,
/// so it can be shared read-only across concurrent analyses.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    records: Vec<TraceRecord>,
    source: Option<PathBuf>,
}

impl TraceSet {
    /// Builds a trace set, enforcing trace invariants: at least one record,
    /// strictly increasing frame ids, finite non-negative times, valid tags.
    pub fn new(records: Vec<TraceRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mut prev_id: Option<u64> = None;
        for (idx, record) in records.iter().enumerate() {
            validate_record(record)
                .map_err(|msg| Error::InvalidParameter(format!("record {idx}: {msg}")))?;
            if let Some(prev) = prev_id {
                if record.frame_id <= prev {
                    return Err(Error::InvalidParameter(format!(
                        "record {idx}: frame_id {} not strictly increasing after {prev}",
                        record.frame_id
                    )));
                }
            }
            prev_id = Some(record.frame_id);
        }
        Ok(TraceSet {
            records,
            source: None,
        })
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    /// Number of records, the `m` used as divisor by the fitting operations.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn column(&self, column: Column) -> Vec<f64> {
        self.records.iter().map(|r| column.extract(r)).collect()
    }

    pub fn end_to_end_series(&self) -> Vec<f64> {
        self.column(Column::EndToEnd)
    }

    pub fn remaining_series(&self) -> Vec<f64> {
        self.column(Column::Remaining)
    }
}

fn validate_record(record: &TraceRecord) -> std::result::Result<(), String> {
    let times = [
        ("timestamp_ms", record.timestamp_ms),
        ("t_read_ms", record.t_read_ms),
        ("t_pre_ms", record.t_pre_ms),
        ("t_infer_ms", record.t_infer_ms),
        ("t_post_ms", record.t_post_ms),
    ];
    for (name, value) in times {
        if !value.is_finite() {
            return Err(format!("non-finite {name}"));
        }
        if value < 0.0 {
            return Err(format!("negative {name}"));
        }
    }
    for (name, tag) in [
        ("model_tag", &record.model_tag),
        ("scenario_tag", &record.scenario_tag),
    ] {
        if !is_valid_tag(tag) {
            return Err(format!("invalid {name} `{tag}` (allowed: [a-z0-9_-]+)"));
        }
    }
    Ok(())
}

pub fn is_valid_tag(tag: &str) -> bool {
    !tag.is_empty()
        && tag
            .bytes()
            .all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-'))
}

/// Reads and validates a trace file. Every data row becomes one record,
/// order preserved.
pub fn ingest_trace(path: &Path) -> Result<TraceSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut set = ingest_str(&text)?;
    set.source = Some(path.to_path_buf());
    Ok(set)
}

/// Parses trace-format text. Line numbers in errors are 1-based and count
/// the header line.
pub fn ingest_str(text: &str) -> Result<TraceSet> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    let header = *lines.first().ok_or(Error::EmptyTrace)?;
    if header != TRACE_HEADER {
        return Err(header_error(header));
    }

    let mut records = Vec::with_capacity(lines.len().saturating_sub(1));
    let mut prev_id: Option<u64> = None;
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let line_no = idx + 1;
        let record = parse_row(line_no, line)?;
        if let Some(prev) = prev_id {
            if record.frame_id <= prev {
                return Err(Error::TraceRow {
                    line: line_no,
                    message: format!(
                        "frame_id {} not strictly increasing after {prev}",
                        record.frame_id
                    ),
                });
            }
        }
        prev_id = Some(record.frame_id);
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(TraceSet {
        records,
        source: None,
    })
}

fn header_error(header: &str) -> Error {
    let got: Vec<&str> = header.split(',').collect();
    for expected in COLUMN_NAMES {
        if !got.contains(&expected) {
            return Error::TraceFormat(format!("missing column `{expected}`"));
        }
    }
    for column in &got {
        if !COLUMN_NAMES.contains(column) {
            return Error::TraceFormat(format!("unexpected column `{column}`"));
        }
    }
    Error::TraceFormat("columns out of order".to_string())
}

fn parse_row(line_no: usize, line: &str) -> Result<TraceRecord> {
    let row_err = |message: String| Error::TraceRow {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != COLUMN_NAMES.len() {
        return Err(row_err(format!(
            "expected {} fields, found {}",
            COLUMN_NAMES.len(),
            fields.len()
        )));
    }

    let parse_u64 = |raw: &str, name: &str| -> Result<u64> {
        raw.parse::<u64>()
            .map_err(|_| row_err(format!("non-numeric value `{raw}` in {name}")))
    };
    let parse_ms = |raw: &str, name: &str| -> Result<f64> {
        let value: f64 = raw
            .parse()
            .map_err(|_| row_err(format!("non-numeric value `{raw}` in {name}")))?;
        if !value.is_finite() {
            return Err(row_err(format!("non-finite value in {name}")));
        }
        if value < 0.0 {
            return Err(row_err(format!("negative value `{raw}` in {name}")));
        }
        Ok(value)
    };
    let parse_tag = |raw: &str, name: &str| -> Result<String> {
        if !is_valid_tag(raw) {
            return Err(row_err(format!(
                "invalid {name} `{raw}` (allowed: [a-z0-9_-]+)"
            )));
        }
        Ok(raw.to_string())
    };

    Ok(TraceRecord {
        frame_id: parse_u64(fields[0], "frame_id")?,
        timestamp_ms: parse_ms(fields[1], "timestamp_ms")?,
        t_read_ms: parse_ms(fields[2], "t_read_ms")?,
        t_pre_ms: parse_ms(fields[3], "t_pre_ms")?,
        t_infer_ms: parse_ms(fields[4], "t_infer_ms")?,
        t_post_ms: parse_ms(fields[5], "t_post_ms")?,
        n_proposals: parse_u64(fields[6], "n_proposals")?,
        n_lane_pixels: parse_u64(fields[7], "n_lane_pixels")?,
        n_detections: parse_u64(fields[8], "n_detections")?,
        model_tag: parse_tag(fields[9], "model_tag")?,
        scenario_tag: parse_tag(fields[10], "scenario_tag")?,
    })
}

/// Renders a trace set in the on-disk format. Reals carry six decimal digits,
/// which the format round-trips exactly.
pub fn render_trace(trace: &TraceSet) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace.records() {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{}",
            r.frame_id,
            r.timestamp_ms,
            r.t_read_ms,
            r.t_pre_ms,
            r.t_infer_ms,
            r.t_post_ms,
            r.n_proposals,
            r.n_lane_pixels,
            r.n_detections,
            r.model_tag,
            r.scenario_tag
        );
    }
    out
}

/// Writes a trace file; `ingest_trace` of the result reproduces the input.
pub fn emit_trace(trace: &TraceSet, path: &Path) -> Result<()> {
    fs::write(path, render_trace(trace)).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
