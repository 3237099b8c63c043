use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim};

use super::{DataError, EstimateTrace, TraceRow};
use crate::simulation::TruthTrajectory;

pub const SIGNAL_HEADER_INPUT: &str = "t,u";
pub const SIGNAL_HEADER_FULL: &str = "t,u,y";
pub const TRUTH_HEADER: &str = "t,x1,x2,x3,x4";
pub const TRACE_HEADER: &str = "t,x1,x2,x3,x4,v11,v22,v33,v44,theta,innovation";
pub const TRACE_HEADER_WITH_ERRORS: &str =
    "t,x1,x2,x3,x4,v11,v22,v33,v44,theta,innovation,err_beta,err_omega";

/// Relative tolerance on the sample spacing of signal files.
const SPACING_TOL: f64 = 1e-9;

/// 17 significant digits, enough to round-trip any finite `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Columns of a signal file.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalData {
    pub ts: f64,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Option<Vec<f64>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn record_line(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_cell(record: &StringRecord, index: usize) -> Result<f64, DataError> {
    let line = record_line(record);
    let cell = record.get(index).ok_or_else(|| DataError::Parse {
        line,
        message: format!("missing column {}", index + 1),
    })?;
    let value: f64 = cell.parse().map_err(|_| DataError::Parse {
        line,
        message: format!("`{cell}` is not a number"),
    })?;
    if !value.is_finite() {
        return Err(DataError::Parse {
            line,
            message: format!("`{cell}` is not finite"),
        });
    }
    Ok(value)
}

/// Data rows tagged with their 1-based file line.
type NumericRows = Vec<(u64, Vec<f64>)>;

/// Reads rows of a fixed-width numeric CSV, checking the header. Returns the
/// column count and the rows.
fn read_numeric<R: Read>(
    reader: R,
    accepted_headers: &[&str],
) -> Result<(usize, NumericRows), DataError> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    let width = accepted_headers
        .iter()
        .find(|h| **h == header)
        .map(|h| h.split(',').count())
        .ok_or_else(|| DataError::Parse {
            line: 1,
            message: format!("header `{header}` is not one of {accepted_headers:?}"),
        })?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != width {
            return Err(DataError::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let values = (0..width)
            .map(|i| parse_cell(&record, i))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((line, values));
    }
    Ok((width, rows))
}

/// Parses a `t,u[,y]` signal with uniform spacing.
pub fn read_signal_from<R: Read>(reader: R) -> Result<SignalData, DataError> {
    let (width, rows) = read_numeric(reader, &[SIGNAL_HEADER_INPUT, SIGNAL_HEADER_FULL])?;
    if rows.len() < 2 {
        return Err(DataError::Parse {
            line: rows.first().map_or(1, |r| r.0),
            message: "a signal needs at least two samples to define its spacing".into(),
        });
    }
    let t: Vec<f64> = rows.iter().map(|(_, v)| v[0]).collect();
    let ts = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    for (k, window) in t.windows(2).enumerate() {
        let spacing = window[1] - window[0];
        if !(ts > 0.0) || (spacing - ts).abs() > SPACING_TOL * ts {
            return Err(DataError::Spacing {
                line: rows[k + 1].0,
                expected: ts,
                found: spacing,
            });
        }
    }
    let u = rows.iter().map(|(_, v)| v[1]).collect();
    let y = (width == 3).then(|| rows.iter().map(|(_, v)| v[2]).collect());
    Ok(SignalData { ts, t, u, y })
}

pub fn read_signal_csv(path: impl AsRef<Path>) -> Result<SignalData, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_signal_from(file)
}

/// Writes `t,u[,y]` with `t_k = k · ts`.
pub fn write_signal_to<W: Write>(
    mut w: W,
    ts: f64,
    u: &[f64],
    y: Option<&[f64]>,
) -> Result<(), DataError> {
    if let Some(y) = y {
        if y.len() != u.len() {
            return Err(DataError::Domain(format!(
                "signal columns differ in length: u {} vs y {}",
                u.len(),
                y.len()
            )));
        }
    }
    let write = |w: &mut W| -> std::io::Result<()> {
        writeln!(
            w,
            "{}",
            if y.is_some() {
                SIGNAL_HEADER_FULL
            } else {
                SIGNAL_HEADER_INPUT
            }
        )?;
        for (k, &uk) in u.iter().enumerate() {
            let t = k as f64 * ts;
            match y {
                Some(y) => writeln!(
                    w,
                    "{},{},{}",
                    format_real(t),
                    format_real(uk),
                    format_real(y[k])
                )?,
                None => writeln!(w, "{},{}", format_real(t), format_real(uk))?,
            }
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(Path::new("<signal>")))
}

pub fn write_signal_csv(
    path: impl AsRef<Path>,
    ts: f64,
    u: &[f64],
    y: Option<&[f64]>,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_signal_to(BufWriter::new(file), ts, u, y).map_err(|e| relabel(e, path))
}

fn relabel(err: DataError, path: &Path) -> DataError {
    match err {
        DataError::Io { source, .. } => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

pub fn write_truth_to<W: Write>(mut w: W, truth: &TruthTrajectory) -> Result<(), DataError> {
    let write = |w: &mut W| -> std::io::Result<()> {
        writeln!(w, "{TRUTH_HEADER}")?;
        for (k, s) in truth.states.iter().enumerate() {
            let row = [k as f64 * truth.ts, s.x1, s.x2, s.x3, s.x4];
            writeln!(w, "{}", join(&row))?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(Path::new("<truth>")))
}

pub fn write_truth_csv(path: impl AsRef<Path>, truth: &TruthTrajectory) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_truth_to(BufWriter::new(file), truth).map_err(|e| relabel(e, path))
}

/// Rows of a truth file as `[t, x1, x2, x3, x4]`.
pub fn read_truth_csv(path: impl AsRef<Path>) -> Result<Vec<[f64; 5]>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let (_, rows) = read_numeric(file, &[TRUTH_HEADER])?;
    Ok(rows
        .into_iter()
        .map(|(_, v)| [v[0], v[1], v[2], v[3], v[4]])
        .collect())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| format_real(v))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_trace_to<W: Write>(mut w: W, trace: &EstimateTrace) -> Result<(), DataError> {
    let with_errors = trace.has_errors();
    let write = |w: &mut W| -> std::io::Result<()> {
        writeln!(
            w,
            "{}",
            if with_errors {
                TRACE_HEADER_WITH_ERRORS
            } else {
                TRACE_HEADER
            }
        )?;
        for row in &trace.rows {
            let mut values = Vec::with_capacity(13);
            values.push(row.t);
            values.extend_from_slice(&row.x);
            values.extend_from_slice(&row.v_diag);
            values.push(row.theta);
            values.push(row.innovation);
            if with_errors {
                values.push(row.err_beta.unwrap_or(f64::NAN));
                values.push(row.err_omega.unwrap_or(f64::NAN));
            }
            writeln!(w, "{}", join(&values))?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(Path::new("<trace>")))
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &EstimateTrace) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_trace_to(BufWriter::new(file), trace).map_err(|e| relabel(e, path))
}

pub fn read_trace_from<R: Read>(reader: R) -> Result<EstimateTrace, DataError> {
    let (width, rows) = read_numeric(reader, &[TRACE_HEADER, TRACE_HEADER_WITH_ERRORS])?;
    let rows = rows
        .into_iter()
        .map(|(_, v)| TraceRow {
            t: v[0],
            x: [v[1], v[2], v[3], v[4]],
            v_diag: [v[5], v[6], v[7], v[8]],
            theta: v[9],
            innovation: v[10],
            err_beta: (width == 13).then(|| v[11]),
            err_omega: (width == 13).then(|| v[12]),
        })
        .collect();
    Ok(EstimateTrace { rows })
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<EstimateTrace, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_trace_from(file)
}
