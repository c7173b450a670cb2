//! CSV trace files and run reports.
//!
//! The first line of a trace file is `# schema_version=1`; then a header
//! row and one row per record. Numbers are written with 17 significant
//! digits so a file parses back to the exact logged values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mission::ModeTag;
use crate::monitor::MonitorReport;
use crate::sim::TraceRecord;

pub const SCHEMA_VERSION: u32 = 1;

/// Column names, in file order.
pub const COLUMNS: [&str; COLUMN_COUNT] = [
    "t", "x1", "x2", "x3", "v1", "v2", "v3", "R11", "R12", "R13", "R21", "R22", "R23", "R31",
    "R32", "R33", "W1", "W2", "W3", "f", "M1", "M2", "M3", "f1", "f2", "f3", "f4", "mode", "Psi",
    "eR1", "eR2", "eR3", "eW1", "eW2", "eW3", "ex1", "ex2", "ex3", "ev1", "ev2", "ev3",
];

pub const COLUMN_COUNT: usize = 41;

/// Index of the textual `mode` column.
const MODE_COLUMN: usize = 27;

/// One CSV row: the mode plus every numeric column in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub mode: String,
    /// The 40 numeric columns, skipping `mode`.
    pub values: Vec<f64>,
}

impl TraceRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        let idx = COLUMNS.iter().position(|c| *c == column)?;
        match idx.cmp(&MODE_COLUMN) {
            std::cmp::Ordering::Less => Some(self.values[idx]),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(self.values[idx - 1]),
        }
    }
}

impl From<&TraceRecord> for TraceRow {
    fn from(r: &TraceRecord) -> Self {
        let mut values = Vec::with_capacity(COLUMN_COUNT - 1);
        values.push(r.t);
        values.extend(r.x.iter());
        values.extend(r.v.iter());
        for i in 0..3 {
            for j in 0..3 {
                values.push(r.r[(i, j)]);
            }
        }
        values.extend(r.omega.iter());
        values.push(r.f);
        values.extend(r.moment.iter());
        values.extend(r.rotor_thrusts.iter());
        values.push(r.psi);
        values.extend(r.e_r.iter());
        values.extend(r.e_omega.iter());
        values.extend(r.e_x.iter());
        values.extend(r.e_v.iter());
        TraceRow {
            mode: r.mode.name().to_string(),
            values,
        }
    }
}

fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the trace as CSV text.
pub fn write_trace<W: Write>(trace: &[TraceRecord], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "# schema_version={SCHEMA_VERSION}")?;
    writeln!(out, "{}", COLUMNS.join(","))?;
    for rec in trace {
        let row = TraceRow::from(rec);
        let mut fields: Vec<String> = row.values.iter().map(|v| format_number(*v)).collect();
        fields.insert(MODE_COLUMN, row.mode);
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_csv(trace: &[TraceRecord], path: &Path) -> Result<()> {
    write_trace(trace, File::create(path)?)
}

/// Parses CSV text written by [`write_trace`].
pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut lines = BufReader::new(input).lines();
    let bad = |line: usize, msg: String| Error::Parse {
        line,
        column: 1,
        message: msg,
    };

    let version = lines.next().transpose()?.unwrap_or_default();
    if version.trim() != format!("# schema_version={SCHEMA_VERSION}") {
        return Err(bad(
            1,
            format!("expected schema version line, found '{version}'"),
        ));
    }
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != COLUMNS.join(",") {
        return Err(bad(2, "header does not match the trace columns".into()));
    }

    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 3;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMN_COUNT {
            return Err(bad(
                lineno,
                format!("expected {COLUMN_COUNT} fields, found {}", fields.len()),
            ));
        }
        let mode = fields[MODE_COLUMN];
        if ![ModeTag::Attitude, ModeTag::Position, ModeTag::Velocity]
            .iter()
            .any(|m| m.name() == mode)
        {
            return Err(bad(lineno, format!("unknown mode '{mode}'")));
        }
        let values = fields
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != MODE_COLUMN)
            .map(|(i, s)| {
                s.parse::<f64>()
                    .map_err(|e| bad(lineno, format!("column {}: {e}", COLUMNS[i])))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(TraceRow {
            mode: mode.to_string(),
            values,
        });
    }
    Ok(rows)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    read_trace(File::open(path)?)
}

/// Writes the monitor report as pretty-printed JSON.
pub fn write_report(report: &MonitorReport, path: &Path) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(report.to_json().as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mission::build_case1;
    use crate::sim::{run, SimConfig};

    fn short_trace() -> Vec<TraceRecord> {
        let m = build_case1();
        run(
            &m,
            &SimConfig {
                duration: 0.5,
                ..SimConfig::for_mission(&m)
            },
        )
        .unwrap()
        .trace
    }

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        write_trace(&[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "# schema_version=1");
        assert!(lines[1].starts_with("t,x1,x2,x3,v1"));
        assert!(lines[1].ends_with("ev1,ev2,ev3"));
        assert!(read_trace(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn rows_round_trip_exactly() {
        let trace = short_trace();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        assert!(buf.ends_with(b"\n"));
        let rows = read_trace(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), trace.len());
        for (row, rec) in rows.iter().zip(&trace) {
            assert_eq!(*row, TraceRow::from(rec));
        }
        assert_eq!(rows[3].get("t"), Some(trace[3].t));
        assert_eq!(rows[3].get("Psi"), Some(trace[3].psi));
        assert_eq!(rows[3].get("R23"), Some(trace[3].r[(1, 2)]));
        assert_eq!(rows[3].get("ev3"), Some(trace[3].e_v.z));
        assert_eq!(rows[3].get("mode"), None);
        assert_eq!(rows[3].mode, "position");
    }

    #[test]
    fn header_has_every_column_once() {
        let cols = &COLUMNS[..];
        let mut sorted = cols.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), COLUMN_COUNT);
        assert_eq!(cols[MODE_COLUMN], "mode");
        assert_eq!(
            TraceRow::from(&short_trace()[0]).values.len(),
            COLUMN_COUNT - 1
        );
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(read_trace("t,x1\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        write_trace(&short_trace()[..1], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("position", "hover");
        assert!(matches!(
            read_trace(text.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn numbers_carry_17_digits() {
        assert_eq!(format_number(0.1), "1.0000000000000001e-1");
        assert_eq!(format_number(-2.0), "-2.0000000000000000e0");
        let x = std::f64::consts::PI;
        assert_eq!(format_number(x).parse::<f64>().unwrap(), x);
    }
}
