use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Lines, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::DecisionRecord;

use super::corrupt;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    /// Fingerprint of the checkpoint that produced the records.
    pub fingerprint: String,
}

impl TraceHeader {
    pub fn new(n: usize, m: usize, fingerprint: impl Into<String>) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION,
            n,
            m,
            fingerprint: fingerprint.into(),
        }
    }

    /// Warns when the trace came from a different checkpoint.
    pub fn check_fingerprint(&self, expected: &str) -> bool {
        let same = self.fingerprint == expected;
        if !same {
            log::warn!(
                "trace fingerprint {} differs from checkpoint {}; records come from another policy",
                self.fingerprint,
                expected
            );
        }
        same
    }
}

/// Append-only writer; each record is written with a single call.
pub struct TraceWriter {
    file: File,
    header: TraceHeader,
    written: usize,
}

impl TraceWriter {
    pub fn create(path: &Path, header: TraceHeader) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        let mut line = serde_json::to_string(&header)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        Ok(Self { file, header, written: 0 })
    }

    /// Reopens an existing trace for appending.
    pub fn append_to(path: &Path) -> Result<Self> {
        let header = TraceReader::open(path, TraceFilter::default())?.header().clone();
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file, header, written: 0 })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn append(&mut self, record: &DecisionRecord) -> Result<()> {
        record.check(self.header.n, self.header.m)?;
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.written += 1;
        Ok(())
    }

    pub fn append_all<'a>(&mut self, records: impl IntoIterator<Item = &'a DecisionRecord>) -> Result<()> {
        records.into_iter().try_for_each(|r| self.append(r))
    }

    pub fn finish(mut self) -> Result<usize> {
        self.file.flush()?;
        self.file.sync_all()?;
        Ok(self.written)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceFilter {
    pub action: Option<usize>,
    pub episode: Option<usize>,
}

impl TraceFilter {
    fn accepts(&self, r: &DecisionRecord) -> bool {
        self.action.is_none_or(|a| r.action == a) && self.episode.is_none_or(|e| r.episode == e)
    }
}

/// Streaming reader yielding records that pass the filter.
pub struct TraceReader {
    path: PathBuf,
    header: TraceHeader,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    filter: TraceFilter,
}

impl TraceReader {
    pub fn open(path: &Path, filter: TraceFilter) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| corrupt(path, "missing header"))??;
        let header: TraceHeader = serde_json::from_str(&first).map_err(|e| corrupt(path, format!("header: {e}")))?;
        if header.schema_version != TRACE_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: header.schema_version.to_string(),
                expected: TRACE_SCHEMA_VERSION,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            lines,
            line_no: 1,
            filter,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }
}

impl Iterator for TraceReader {
    type Item = Result<DecisionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<DecisionRecord>(&line)
                .map_err(|e| corrupt(&self.path, format!("line {}: {e}", self.line_no)))
                .and_then(|r| r.check(self.header.n, self.header.m).map(|()| r));
            match parsed {
                Ok(r) if !self.filter.accepts(&r) => continue,
                other => return Some(other),
            }
        }
    }
}

pub fn read_trace(path: &Path, filter: TraceFilter) -> Result<(TraceHeader, Vec<DecisionRecord>)> {
    let reader = TraceReader::open(path, filter)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}
