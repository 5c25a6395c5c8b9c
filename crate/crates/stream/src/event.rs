//! Event-log records and parsers.
//!
//! Two input shapes are supported: line-delimited JSON records and delimited
//! text with a header row. Delimited logs name their columns `timestamp`,
//! `variant_id`, `response`; covariate columns are identified by the `x`
//! prefix (`x0`, `x1`, ...) and ordered by their numeric suffix.

use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StreamError};

/// One event: an ordered timestamp token, the variant the user saw, the
/// response, and the covariates (intercept excluded; it is added when the
/// event enters a session).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub timestamp: String,
    pub variant_id: String,
    pub response: f64,
    pub covariates: Vec<f64>,
}

/// Input encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Jsonl,
    /// Comma-separated with a header row.
    Csv,
    /// Tab-separated with a header row.
    Tsv,
}

impl LogFormat {
    /// Guess from a file name; `.jsonl`/`.ndjson` and `.tsv` are recognized,
    /// anything else is treated as CSV.
    pub fn from_path(path: &str) -> LogFormat {
        let lower = path.to_ascii_lowercase();
        if lower.ends_with(".jsonl") || lower.ends_with(".ndjson") {
            LogFormat::Jsonl
        } else if lower.ends_with(".tsv") {
            LogFormat::Tsv
        } else {
            LogFormat::Csv
        }
    }
}

/// Iterator over parsed events with 1-based line numbers. Parse problems are
/// yielded, not swallowed, so callers can implement strict or lenient modes.
pub struct EventReader<R: Read> {
    inner: Inner<R>,
}

enum Inner<R: Read> {
    Jsonl {
        lines: std::io::Lines<BufReader<R>>,
        line: usize,
    },
    Delimited {
        records: csv::StringRecordsIntoIter<R>,
        line: usize,
        timestamp_col: usize,
        variant_col: usize,
        response_col: usize,
        /// (column index, numeric suffix), sorted by suffix.
        covariate_cols: Vec<usize>,
    },
}

impl<R: Read> EventReader<R> {
    pub fn new(reader: R, format: LogFormat) -> Result<Self> {
        match format {
            LogFormat::Jsonl => Ok(EventReader {
                inner: Inner::Jsonl {
                    lines: BufReader::new(reader).lines(),
                    line: 0,
                },
            }),
            LogFormat::Csv | LogFormat::Tsv => {
                let delimiter = if format == LogFormat::Tsv { b'\t' } else { b',' };
                let mut rdr = csv::ReaderBuilder::new()
                    .delimiter(delimiter)
                    .flexible(true)
                    .from_reader(reader);
                let headers = rdr
                    .headers()
                    .map_err(|e| StreamError::Parse {
                        line: 1,
                        reason: format!("cannot read header row: {e}"),
                    })?
                    .clone();
                let find = |name: &str| {
                    headers
                        .iter()
                        .position(|h| h.eq_ignore_ascii_case(name))
                        .ok_or_else(|| StreamError::Parse {
                            line: 1,
                            reason: format!("missing required column '{name}'"),
                        })
                };
                let timestamp_col = find("timestamp")?;
                let variant_col = find("variant_id")?;
                let response_col = find("response")?;
                let mut cov: Vec<(usize, u64)> = Vec::new();
                for (idx, h) in headers.iter().enumerate() {
                    if let Some(rest) = h.strip_prefix('x') {
                        if !rest.is_empty() {
                            if let Ok(suffix) = rest.parse::<u64>() {
                                cov.push((idx, suffix));
                            }
                        }
                    }
                }
                cov.sort_by_key(|(_, suffix)| *suffix);
                if cov.is_empty() {
                    return Err(StreamError::Parse {
                        line: 1,
                        reason: "no covariate columns found (expected x0, x1, ...)".into(),
                    });
                }
                Ok(EventReader {
                    inner: Inner::Delimited {
                        records: rdr.into_records(),
                        line: 1,
                        timestamp_col,
                        variant_col,
                        response_col,
                        covariate_cols: cov.into_iter().map(|(idx, _)| idx).collect(),
                    },
                })
            }
        }
    }
}

impl<R: Read> Iterator for EventReader<R> {
    /// (1-based line number, parse outcome)
    type Item = (usize, Result<EventRecord>);

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            Inner::Jsonl { lines, line } => loop {
                let text = match lines.next()? {
                    Ok(t) => t,
                    Err(e) => {
                        *line += 1;
                        return Some((*line, Err(StreamError::Io(e))));
                    }
                };
                *line += 1;
                if text.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<EventRecord>(&text).map_err(|e| {
                    StreamError::Parse {
                        line: *line,
                        reason: e.to_string(),
                    }
                });
                return Some((*line, parsed));
            },
            Inner::Delimited {
                records,
                line,
                timestamp_col,
                variant_col,
                response_col,
                covariate_cols,
            } => {
                let record = records.next()?;
                *line += 1;
                let line_no = *line;
                let out = (|| {
                    let record = record.map_err(|e| StreamError::Parse {
                        line: line_no,
                        reason: e.to_string(),
                    })?;
                    let get = |col: usize, what: &str| {
                        record.get(col).ok_or_else(|| StreamError::Parse {
                            line: line_no,
                            reason: format!("missing {what} field"),
                        })
                    };
                    let timestamp = get(*timestamp_col, "timestamp")?.to_string();
                    let variant_id = get(*variant_col, "variant_id")?.to_string();
                    let response: f64 = get(*response_col, "response")?
                        .parse()
                        .map_err(|e| StreamError::Parse {
                            line: line_no,
                            reason: format!("bad response: {e}"),
                        })?;
                    let mut covariates = Vec::with_capacity(covariate_cols.len());
                    for &col in covariate_cols.iter() {
                        let v: f64 = get(col, "covariate")?.parse().map_err(|e| {
                            StreamError::Parse {
                                line: line_no,
                                reason: format!("bad covariate: {e}"),
                            }
                        })?;
                        covariates.push(v);
                    }
                    Ok(EventRecord {
                        timestamp,
                        variant_id,
                        response,
                        covariates,
                    })
                })();
                Some((line_no, out))
            }
        }
    }
}

/// Render events as delimited text with the canonical header.
pub fn to_csv_string(events: &[EventRecord]) -> String {
    let p = events.first().map(|e| e.covariates.len()).unwrap_or(0);
    let mut out = String::from("timestamp,variant_id,response");
    for k in 0..p {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for e in events {
        out.push_str(&format!("{},{},{}", e.timestamp, e.variant_id, e.response));
        for v in &e.covariates {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
