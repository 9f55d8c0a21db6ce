//! Line-delimited JSON decode traces: one header record, then one record
//! per denoising step.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_SCHEMA: &str = "mars-trace/1";

/// Which modalities of one layer group had their cached context recomputed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRefresh {
    pub visual: bool,
    pub text: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Global 1-based step; this is also the refresh clock.
    pub step: usize,
    pub block: usize,
    /// 1-based step within the block.
    pub block_step: usize,
    /// `(response position, token)` pairs committed by this step.
    pub committed: Vec<(usize, usize)>,
    /// Every row recomputed with unrestricted attention.
    pub full_recompute: bool,
    pub refresh: Vec<GroupRefresh>,
    /// Attention score entries (query–key dot products, summed over layers).
    pub entries: u64,
    /// Σ over layers of rows recomputed.
    pub row_layers: u64,
    /// Score entries spent on proxy anchor scoring, summed over heads.
    pub proxy_entries: u64,
    /// SHA-256 of the cached anchor plan, when the engine keeps one.
    pub anchor_digest: Option<String>,
    pub elapsed_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    schema: String,
    engine: String,
    refresh_clock: String,
    groups: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub engine: String,
    pub groups: usize,
    pub records: Vec<StepRecord>,
}

impl DecodeTrace {
    pub fn new(engine: impl Into<String>, groups: usize) -> Self {
        Self {
            engine: engine.into(),
            groups,
            records: Vec::new(),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.records.len()
    }

    pub fn total_entries(&self) -> u64 {
        self.records.iter().map(|r| r.entries).sum()
    }

    pub fn total_row_layers(&self) -> u64 {
        self.records.iter().map(|r| r.row_layers).sum()
    }

    pub fn elapsed_ns(&self) -> u64 {
        self.records.iter().map(|r| r.elapsed_ns).sum()
    }

    /// Refresh events per group, excluding full recomputes.
    pub fn refresh_counts(&self) -> Vec<GroupCounts> {
        let mut counts = vec![GroupCounts::default(); self.groups];
        for r in &self.records {
            for (c, g) in counts.iter_mut().zip(&r.refresh) {
                c.visual += usize::from(g.visual);
                c.text += usize::from(g.text);
            }
        }
        counts
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let header = TraceHeader {
            schema: TRACE_SCHEMA.into(),
            engine: self.engine.clone(),
            refresh_clock: "global".into(),
            groups: self.groups,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Config("empty trace".into()))??;
        let header: TraceHeader = serde_json::from_str(&first)?;
        if header.schema != TRACE_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported trace schema {}",
                header.schema
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self {
            engine: header.engine,
            groups: header.groups,
            records,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupCounts {
    pub visual: usize,
    pub text: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let mut t = DecodeTrace::new("mars", 2);
        t.records.push(StepRecord {
            step: 1,
            block: 0,
            block_step: 1,
            committed: vec![(3, 17)],
            full_recompute: true,
            refresh: vec![GroupRefresh::default(); 2],
            entries: 100,
            row_layers: 20,
            proxy_entries: 5,
            anchor_digest: Some("ab".into()),
            elapsed_ns: 1234,
        });
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"schema\":\"mars-trace/1\""));
        assert_eq!(DecodeTrace::read_jsonl(&buf[..]).unwrap(), t);
    }
}
