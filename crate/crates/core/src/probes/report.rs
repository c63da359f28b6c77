//! Deterministic report exports: CSV or aligned text with a fixed column
//! order, floats at six significant digits, and a header row carrying the
//! configuration fingerprint. Representation maps export as binary PGM.

use std::fmt::Write as _;
use std::path::Path;

use super::freeze::FreezeSweepReport;
use super::proportion::ProportionReport;
use super::sparsity::SparsityReport;
use super::ProbeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    /// `key = value` rows, one record per line.
    Text,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "text" | "structured-text" => Some(ReportFormat::Text),
            _ => None,
        }
    }
}

/// Anything exportable as a fixed-column table.
pub trait Report {
    fn kind(&self) -> &'static str;
    fn columns(&self) -> Vec<&'static str>;
    fn rows(&self) -> Vec<Vec<String>>;
}

/// Six significant digits, `%g`-style: plain decimal in a sane range,
/// scientific outside it, trailing zeros trimmed.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let mut s = if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.5e}")
    };
    if s.contains('.') && !s.contains('e') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// Writes a report with its configuration fingerprint in the header.
pub fn export_report(
    report: &dyn Report,
    fingerprint: &str,
    path: &Path,
    format: ReportFormat,
) -> Result<(), ProbeError> {
    let columns = report.columns();
    let rows = report.rows();
    let mut text = String::new();
    match format {
        ReportFormat::Csv => {
            let _ = writeln!(text, "# kind={} fingerprint={fingerprint}", report.kind());
            let _ = writeln!(text, "{}", columns.join(","));
            for row in rows {
                let _ = writeln!(text, "{}", row.join(","));
            }
        }
        ReportFormat::Text => {
            let _ = writeln!(text, "kind = {}", report.kind());
            let _ = writeln!(text, "fingerprint = {fingerprint}");
            for row in rows {
                let line = columns
                    .iter()
                    .zip(&row)
                    .map(|(c, v)| format!("{c} = {v}"))
                    .collect::<Vec<_>>()
                    .join("  ");
                let _ = writeln!(text, "{line}");
            }
        }
    }
    std::fs::write(path, text).map_err(|source| ProbeError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl Report for ProportionReport {
    fn kind(&self) -> &'static str {
        "update-proportions"
    }

    fn columns(&self) -> Vec<&'static str> {
        vec!["mode", "layer", "proportion", "episodes", "ways", "shots", "steps"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.p
            .iter()
            .enumerate()
            .map(|(i, p)| {
                vec![
                    self.mode.clone(),
                    (i + 1).to_string(),
                    format_sig6(*p),
                    self.episodes.to_string(),
                    self.ways.to_string(),
                    self.shots.to_string(),
                    self.steps.to_string(),
                ]
            })
            .collect()
    }
}

impl Report for SparsityReport {
    fn kind(&self) -> &'static str {
        "activation-percentage"
    }

    fn columns(&self) -> Vec<&'static str> {
        vec!["measurement", "value", "repr_len", "map_rows", "map_cols"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![vec![
            "mean".to_string(),
            format_sig6(self.mean),
            self.repr_len.to_string(),
            self.rows.to_string(),
            self.cols.to_string(),
        ]];
        for (i, v) in self.per_image.iter().enumerate() {
            rows.push(vec![
                format!("image_{i:04}"),
                format_sig6(*v),
                self.repr_len.to_string(),
                self.rows.to_string(),
                self.cols.to_string(),
            ]);
        }
        rows
    }
}

impl Report for FreezeSweepReport {
    fn kind(&self) -> &'static str {
        "freeze-sweep"
    }

    fn columns(&self) -> Vec<&'static str> {
        vec![
            "mode",
            "frozen_below",
            "accuracy",
            "half_width",
            "adapt_seconds",
            "episodes",
            "steps",
        ]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.mode.clone(),
                    r.frozen_below.to_string(),
                    format_sig6(r.accuracy),
                    format_sig6(r.half_width),
                    format_sig6(r.mean_adapt_seconds),
                    self.episodes.to_string(),
                    self.steps.to_string(),
                ]
            })
            .collect()
    }
}

/// Binary PGM (maxval 255, row-major), normalized so the peak maps to 255.
pub fn write_pgm(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<(), ProbeError> {
    assert_eq!(values.len(), rows * cols, "map geometry mismatch");
    let peak = values.iter().cloned().fold(0.0f64, f64::max);
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(
        values
            .iter()
            .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8),
    );
    std::fs::write(path, bytes).map_err(|source| ProbeError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(0.25), "0.25");
        assert_eq!(format_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(format_sig6(123456.0), "123456");
        assert_eq!(format_sig6(0.0000063), "6.30000e-6");
        assert_eq!(format_sig6(-1234567.0), "-1.23457e6");
    }

    #[test]
    fn export_round_trips_to_six_digits() {
        let report = ProportionReport {
            p: vec![1.0 / 3.0, 2.0 / 3.0, 0.0],
            episodes: 7,
            mode: "LWAU".to_string(),
            ways: 5,
            shots: 1,
            steps: 10,
            mean_excluded: 0.0,
        };
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("prop.csv");
        export_report(&report, "deadbeef", &path, ReportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# kind=update-proportions fingerprint=deadbeef"));
        let mut lines = text.lines().skip(1);
        assert_eq!(
            lines.next().unwrap(),
            "mode,layer,proportion,episodes,ways,shots,steps"
        );
        for (line, expected) in lines.zip(&report.p) {
            let got: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            let rel = if *expected == 0.0 {
                got.abs()
            } else {
                (got - expected).abs() / expected.abs()
            };
            assert!(rel < 1e-5, "parsed {got} vs {expected}");
        }

        // Stable column order across writes.
        let path2 = tmp.path().join("prop2.csv");
        export_report(&report, "deadbeef", &path2, ReportFormat::Csv).unwrap();
        assert_eq!(text, std::fs::read_to_string(&path2).unwrap());
    }

    #[test]
    fn empty_report_is_header_only() {
        let report = ProportionReport {
            p: vec![],
            episodes: 0,
            mode: "LWAU".to_string(),
            ways: 5,
            shots: 1,
            steps: 10,
            mean_excluded: 0.0,
        };
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("empty.csv");
        export_report(&report, "f00", &path, ReportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2); // comment + column header
    }

    #[test]
    fn pgm_has_the_right_header_and_size() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("map.pgm");
        let values: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        write_pgm(&path, 3, 4, &values).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(bytes.len(), b"P5\n4 3\n255\n".len() + 12);
        assert_eq!(*bytes.last().unwrap(), 255); // peak maps to 255
    }
}
