use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};

pub const REPORT_VERSION: &str = "mars-report v1";

/// Writes `# mars-report v1 <kind>` followed by a CSV table of `rows`, with
/// the header taken from the row type's field names.
pub fn write_report<W: Write, S: Serialize>(mut out: W, kind: &str, rows: &[S]) -> Result<()> {
    writeln!(out, "# {REPORT_VERSION} {kind}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Report kind from the first line of a report.
pub fn read_report_kind(input: impl BufRead) -> Result<String> {
    let first = input
        .lines()
        .next()
        .ok_or_else(|| Error::Config("empty report".into()))??;
    first
        .strip_prefix("# ")
        .and_then(|s| s.strip_prefix(REPORT_VERSION))
        .map(|s| s.trim().to_string())
        .ok_or_else(|| Error::Config(format!("not a {REPORT_VERSION} file: {first}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        layer: usize,
        entropy: f64,
    }

    #[test]
    fn header_then_csv() {
        let mut buf = Vec::new();
        write_report(&mut buf, "sparsity", &[Row { layer: 0, entropy: 1.5 }]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "# mars-report v1 sparsity\nlayer,entropy\n0,1.5\n");
        assert_eq!(read_report_kind(buf.as_slice()).unwrap(), "sparsity");
        assert!(read_report_kind("layer\n".as_bytes()).is_err());
    }
}
