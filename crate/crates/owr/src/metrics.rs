//! Append-only JSON-lines metrics log.
//!
//! One self-contained JSON object per line, so partial files replay cleanly
//! and downstream plotting needs no state. Records carry no timestamps:
//! two runs with equal configs produce byte-identical files.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossBreakdown;
use crate::protocol::EvalReport;

/// One metrics line: where in the run it was emitted, the loss breakdown
/// (training records), the current threshold, and accuracies (evaluation
/// records).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: String,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epoch: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<LossBreakdown>,
    pub theta: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracies: Option<EvalReport>,
}

/// Parses one metrics line.
pub fn parse_metrics_line(line: &str) -> Result<MetricsRecord> {
    Ok(serde_json::from_str(line)?)
}

/// Reads back a whole metrics file, e.g. to reconstruct accuracy-vs-step
/// curves.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_metrics_line)
        .collect()
}

/// Destination for metrics records; lets training code run with or without
/// a real log file.
pub trait MetricsSink {
    fn emit(&mut self, record: &MetricsRecord) -> Result<()>;
}

/// Discards every record.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn emit(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }
}

/// Append-only writer; a single writer owns the stream.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl MetricsWriter<BufWriter<std::fs::File>> {
    /// Opens (or creates) the file for appending.
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsWriter {
            out: BufWriter::new(file),
        })
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        MetricsWriter { out }
    }

    pub fn emit(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

impl<W: Write> MetricsSink for MetricsWriter<W> {
    fn emit(&mut self, record: &MetricsRecord) -> Result<()> {
        MetricsWriter::emit(self, record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_parse_independently() {
        let mut buf = Vec::new();
        {
            let mut w = MetricsWriter::new(&mut buf);
            w.emit(&MetricsRecord {
                phase: "initial".into(),
                step: 0,
                epoch: Some(3),
                loss: Some(LossBreakdown {
                    classification: 0.5,
                    distillation: 0.0,
                    lambda: 1.0,
                    total: 0.5,
                }),
                theta: 0.42,
                accuracies: None,
            })
            .unwrap();
            w.emit(&MetricsRecord {
                phase: "evaluate".into(),
                step: 1,
                epoch: None,
                loss: None,
                theta: 0.44,
                accuracies: None,
            })
            .unwrap();
        }
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let r0 = parse_metrics_line(lines[0]).unwrap();
        let r1 = parse_metrics_line(lines[1]).unwrap();
        assert_eq!(r0.theta, 0.42);
        assert_eq!(r0.epoch, Some(3));
        assert_eq!(r1.phase, "evaluate");
        assert_eq!(r1.loss, None);
    }

    #[test]
    fn round_trips_through_text() {
        let rec = MetricsRecord {
            phase: "incremental".into(),
            step: 7,
            epoch: Some(12),
            loss: Some(LossBreakdown {
                classification: 1.0 / 3.0,
                distillation: 0.125,
                lambda: 1.0,
                total: 1.0 / 3.0 + 0.125,
            }),
            theta: 0.123456789012345,
            accuracies: None,
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(parse_metrics_line(&line).unwrap(), rec);
    }
}
