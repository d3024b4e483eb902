//! Line-delimited JSON scan interchange: one scan per line, `null` for a
//! missing return.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{LaserScan, ScanError, ScanMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub ranges: Vec<Option<f64>>,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    pub timestamp_us: u64,
    pub deployment_id: String,
    pub seq: u32,
}

impl TryFrom<ScanRecord> for LaserScan {
    type Error = ScanError;

    fn try_from(rec: ScanRecord) -> Result<Self, ScanError> {
        let ranges = rec
            .ranges
            .into_iter()
            .map(|r| r.unwrap_or(super::NO_RETURN))
            .collect();
        LaserScan::new(
            ranges,
            rec.angle_min,
            rec.angle_increment,
            rec.range_max,
            ScanMeta {
                timestamp_us: rec.timestamp_us,
                deployment_id: rec.deployment_id,
                seq: rec.seq,
            },
        )
    }
}

impl From<&LaserScan> for ScanRecord {
    fn from(scan: &LaserScan) -> Self {
        Self {
            ranges: scan
                .ranges()
                .iter()
                .map(|&r| scan.is_return(r).then_some(r))
                .collect(),
            angle_min: scan.angle_min(),
            angle_increment: scan.angle_increment(),
            range_max: scan.range_max(),
            timestamp_us: scan.meta().timestamp_us,
            deployment_id: scan.meta().deployment_id.clone(),
            seq: scan.meta().seq,
        }
    }
}

pub fn parse_scan_line(line: &str) -> Result<LaserScan, ScanError> {
    let rec: ScanRecord = serde_json::from_str(line).map_err(|e| ScanError::Interchange {
        line: 1,
        message: e.to_string(),
    })?;
    LaserScan::try_from(rec)
}

pub fn scan_to_line(scan: &LaserScan) -> String {
    serde_json::to_string(&ScanRecord::from(scan)).expect("scan records always serialize")
}

/// Reads every non-blank line; errors carry the 1-based line number.
pub fn read_scans<R: BufRead>(reader: R) -> Result<Vec<LaserScan>, ScanError> {
    let mut scans = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scan = parse_scan_line(&line).map_err(|e| ScanError::Interchange {
            line: i + 1,
            message: match e {
                ScanError::Interchange { message, .. } => message,
                other => other.to_string(),
            },
        })?;
        scans.push(scan);
    }
    Ok(scans)
}

pub fn write_scans<W: Write>(mut writer: W, scans: &[LaserScan]) -> Result<(), ScanError> {
    for scan in scans {
        writeln!(writer, "{}", scan_to_line(scan))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::NO_RETURN;

    const LINE: &str = r#"{"ranges":[1.5,null,2.25],"angle_min":-0.5,"angle_increment":0.25,"range_max":10.0,"timestamp_us":12,"deployment_id":"lab","seq":4}"#;

    #[test]
    fn parses_nulls_as_no_return() {
        let s = parse_scan_line(LINE).unwrap();
        assert_eq!(s.ranges(), &[1.5, NO_RETURN, 2.25]);
        assert_eq!(s.meta().deployment_id, "lab");
        assert_eq!(scan_to_line(&s), LINE);
    }

    #[test]
    fn rejects_negative_and_non_numeric_ranges() {
        let neg = LINE.replace("1.5", "-1.5");
        assert!(parse_scan_line(&neg).is_err());
        let nan = LINE.replace("1.5", "NaN");
        assert!(parse_scan_line(&nan).is_err());
        assert!(parse_scan_line("{}").is_err());
    }

    #[test]
    fn reader_reports_line_numbers() {
        let text = format!("{LINE}\n\n{{bad\n");
        match read_scans(text.as_bytes()) {
            Err(ScanError::Interchange { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let good = format!("{LINE}\n{LINE}\n");
        let scans = read_scans(good.as_bytes()).unwrap();
        assert_eq!(scans.len(), 2);
        let mut out = Vec::new();
        write_scans(&mut out, &scans).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), good);
    }
}
