use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::contraction::ContractionCertificate;

/// Column order of the CSV report.
pub const CSV_HEADER: [&str; 8] =
    ["t", "w2_empirical", "w2_exact", "ms_gap", "bound_w2", "bound_ms", "violation_w2", "violation_ms"];

/// Comparison at one snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub t: f64,
    pub w2_empirical: f64,
    /// Closed-form value, available for OU systems with Gaussian initial laws.
    pub w2_exact: Option<f64>,
    pub ms_gap: f64,
    pub bound_w2: f64,
    pub bound_ms: f64,
    pub violation_w2: bool,
    pub violation_ms: bool,
    /// Statistical allowance added to `bound_w2` before flagging.
    pub w2_margin: f64,
    /// Statistical allowance added to `bound_ms` before flagging.
    pub ms_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateSource {
    Analytic,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    /// Initial Wasserstein distance fed into the bound.
    pub w2_0: f64,
    /// Initial empirical mean-square gap fed into the bound.
    pub ms_0: f64,
    pub certificate: ContractionCertificate,
    pub certificate_source: CertificateSource,
    pub config: ExperimentConfig,
}

impl BoundReport {
    pub fn has_violation(&self) -> bool {
        self.rows.iter().any(|r| r.violation_w2 || r.violation_ms)
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV with the columns of [`CSV_HEADER`]; missing exact values are empty cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.w2_empirical.to_string(),
                r.w2_exact.map(|v| v.to_string()).unwrap_or_default(),
                r.ms_gap.to_string(),
                r.bound_w2.to_string(),
                r.bound_ms.to_string(),
                r.violation_w2.to_string(),
                r.violation_ms.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Write `report` to any writer.
pub fn write_report<W: Write>(report: &BoundReport, format: ReportFormat, mut writer: W) -> std::io::Result<()> {
    match format {
        ReportFormat::Csv => report.write_csv(writer).map_err(std::io::Error::other),
        ReportFormat::Json => {
            writer.write_all(report.to_json().as_bytes())?;
            writer.write_all(b"\n")?;
            writer.flush()
        }
    }
}

/// Write `report` to a file, creating or truncating it.
pub fn emit_report(report: &BoundReport, format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    write_report(report, format, BufWriter::new(file)).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::tests_support::ou_config;

    fn report(rows: Vec<BoundRow>) -> BoundReport {
        let cfg = ou_config();
        BoundReport {
            rows,
            w2_0: 1.0,
            ms_0: 1.4,
            certificate: cfg.certificate().unwrap(),
            certificate_source: CertificateSource::Analytic,
            config: cfg,
        }
    }

    fn row(t: f64, exact: Option<f64>) -> BoundRow {
        BoundRow {
            t,
            w2_empirical: 0.1 + t / 3.0,
            w2_exact: exact,
            ms_gap: 1.0 / 7.0 + t,
            bound_w2: std::f64::consts::PI * t,
            bound_ms: 2.0f64.sqrt() + t,
            violation_w2: false,
            violation_ms: t > 1.0,
            w2_margin: 1e-3 / 3.0,
            ms_margin: 0.0,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut buf = Vec::new();
        write_report(&report(vec![]), ReportFormat::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn csv_rows_and_empty_exact_cell() {
        let rep = report(vec![row(0.0, Some(1.0 / 3.0)), row(0.5, None), row(2.0, Some(0.1))]);
        let mut buf = Vec::new();
        write_report(&rep, ReportFormat::Csv, &mut buf).unwrap();
        let mut reader = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
        let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
        assert_eq!(records.len(), 3);
        assert_eq!(&records[1][2], "");
        assert_eq!(records[0][2].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(&records[2][7], "true");
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let rep = report(vec![row(0.0, Some(1.0 / 3.0)), row(0.123456789, None), row(7.0 / 3.0, Some(1e-300))]);
        let back = BoundReport::from_json(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
        for (a, b) in rep.rows.iter().zip(&back.rows) {
            assert_eq!(a.w2_empirical.to_bits(), b.w2_empirical.to_bits());
            assert_eq!(a.bound_w2.to_bits(), b.bound_w2.to_bits());
        }
    }

    #[test]
    fn io_failure_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("report.csv");
        match emit_report(&report(vec![]), ReportFormat::Csv, &path) {
            Err(HarnessError::Io { path: p, .. }) => assert!(p.ends_with("report.csv")),
            other => panic!("expected i/o error, got {other:?}"),
        }
    }
}
