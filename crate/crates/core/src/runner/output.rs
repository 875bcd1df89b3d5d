//! Result persistence: fixed-schema CSV, JSON mirror, and a tidy
//! long-format CSV for external plotting.

use std::path::Path;

use super::sweep::SweepRow;
use super::RunnerError;

pub const CSV_HEADER: &str = "width,e_bias,e_variance,var_opt,var_samp,bias_ci_lo,bias_ci_hi,\
var_ci_lo,var_ci_hi,train_error,test_error,step_size,wall_time_s";

/// 17 significant digits, always `.` as the decimal separator; enough for
/// an exact f64 round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV text for successful rows; failed rows have no column to carry their
/// error and are reported through the JSON output instead.
pub fn csv_string(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows.iter().filter(|r| r.error.is_none()) {
        out.push_str(&row.width.to_string());
        for v in [
            row.e_bias,
            row.e_variance,
            row.var_opt,
            row.var_samp,
            row.bias_ci_lo,
            row.bias_ci_hi,
            row.var_ci_lo,
            row.var_ci_hi,
            row.train_error,
            row.test_error,
            row.step_size,
            row.wall_time_s,
        ] {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<(), RunnerError> {
    write_text(path, &csv_string(rows))
}

pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>, RunnerError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => return Err(RunnerError::Csv(format!("unexpected header: {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(RunnerError::Csv(format!(
                "row {}: expected 13 fields, got {}",
                i + 1,
                fields.len()
            )));
        }
        let f = |idx: usize| -> Result<f64, RunnerError> {
            fields[idx].parse::<f64>().map_err(|_| {
                RunnerError::Csv(format!("row {}: bad float '{}'", i + 1, fields[idx]))
            })
        };
        rows.push(SweepRow {
            width: fields[0].parse::<usize>().map_err(|_| {
                RunnerError::Csv(format!("row {}: bad width '{}'", i + 1, fields[0]))
            })?,
            e_bias: f(1)?,
            e_variance: f(2)?,
            var_opt: f(3)?,
            var_samp: f(4)?,
            bias_ci_lo: f(5)?,
            bias_ci_hi: f(6)?,
            var_ci_lo: f(7)?,
            var_ci_hi: f(8)?,
            train_error: f(9)?,
            test_error: f(10)?,
            step_size: f(11)?,
            wall_time_s: f(12)?,
            error: None,
        });
    }
    Ok(rows)
}

pub fn parse_csv_file(path: &Path) -> Result<Vec<SweepRow>, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text)
}

/// JSON mirror of the sweep rows (including failed ones).
pub fn emit_json(rows: &[SweepRow], path: &Path) -> Result<(), RunnerError> {
    let text =
        serde_json::to_string_pretty(rows).map_err(|e| RunnerError::Csv(format!("json: {e}")))?;
    write_text(path, &format!("{text}\n"))
}

/// Long-format CSV: one `(width, statistic)` pair per row, CI columns left
/// empty where no interval is computed.
pub fn tidy_plot_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("width,statistic,value,ci_lo,ci_hi\n");
    for row in rows.iter().filter(|r| r.error.is_none()) {
        let mut push = |stat: &str, value: f64, ci: Option<(f64, f64)>| {
            out.push_str(&row.width.to_string());
            out.push(',');
            out.push_str(stat);
            out.push(',');
            out.push_str(&fmt_f64(value));
            match ci {
                Some((lo, hi)) => {
                    out.push(',');
                    out.push_str(&fmt_f64(lo));
                    out.push(',');
                    out.push_str(&fmt_f64(hi));
                }
                None => out.push_str(",,"),
            }
            out.push('\n');
        };
        push("e_bias", row.e_bias, Some((row.bias_ci_lo, row.bias_ci_hi)));
        push(
            "e_variance",
            row.e_variance,
            Some((row.var_ci_lo, row.var_ci_hi)),
        );
        push("var_opt", row.var_opt, None);
        push("var_samp", row.var_samp, None);
        push("train_error", row.train_error, None);
        push("test_error", row.test_error, None);
    }
    out
}

pub fn emit_plot_csv(rows: &[SweepRow], path: &Path) -> Result<(), RunnerError> {
    write_text(path, &tidy_plot_csv(rows))
}

fn write_text(path: &Path, text: &str) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| RunnerError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, text).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row(width: usize) -> SweepRow {
        SweepRow {
            width,
            e_bias: 0.1,
            e_variance: 1.0 / 3.0,
            var_opt: 0.05,
            var_samp: 1.0 / 3.0 - 0.05,
            bias_ci_lo: 0.09,
            bias_ci_hi: 0.11,
            var_ci_lo: 0.3,
            var_ci_hi: 0.37,
            train_error: 1e-17,
            test_error: 0.12345678901234568,
            step_size: 0.05,
            wall_time_s: 0.0,
            error: None,
        }
    }

    #[test]
    fn empty_rows_emit_header_only() {
        assert_eq!(csv_string(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn round_trip_is_lossless() {
        let rows = vec![sample_row(5), sample_row(1000)];
        let parsed = parse_csv(&csv_string(&rows)).unwrap();
        assert_eq!(parsed, rows);
        // And stable under a second pass.
        assert_eq!(csv_string(&parsed), csv_string(&rows));
    }

    #[test]
    fn awkward_floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, 0.05, -1.5e-17, 0.0] {
            let text = fmt_f64(v);
            assert!(!text.contains(','), "locale leak in {text}");
            let back: f64 = text.parse().unwrap();
            assert_eq!(back, v, "{text}");
        }
    }

    #[test]
    fn failed_rows_are_skipped_in_csv_but_kept_in_json() {
        let mut bad = sample_row(10);
        bad.error = Some("diverged".into());
        let rows = vec![sample_row(5), bad];
        let csv = csv_string(&rows);
        assert_eq!(csv.lines().count(), 2); // header + one row
        let json = serde_json::to_string(&rows).unwrap();
        assert!(json.contains("diverged"));
    }

    #[test]
    fn header_is_exact() {
        assert_eq!(
            CSV_HEADER,
            "width,e_bias,e_variance,var_opt,var_samp,bias_ci_lo,bias_ci_hi,var_ci_lo,var_ci_hi,train_error,test_error,step_size,wall_time_s"
        );
        assert!(parse_csv("width,bogus\n1,2\n").is_err());
    }

    #[test]
    fn tidy_output_has_six_stats_per_width() {
        let text = tidy_plot_csv(&[sample_row(5)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "width,statistic,value,ci_lo,ci_hi");
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("5,e_bias,"));
        assert!(
            lines[3].ends_with(",,"),
            "var_opt row should have empty CIs"
        );
    }
}
