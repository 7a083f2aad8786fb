//! Time-series CSV: `t,v_d,v_q,i_d,i_q` and the raw `t,v_a,v_b,v_c,i_a,i_b,i_c`
//! variant.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{park_transform, DqSample, DqSeries, OMEGA_0};

pub const DQ_HEADER: [&str; 5] = ["t", "v_d", "v_q", "i_d", "i_q"];
pub const ABC_HEADER: [&str; 7] = ["t", "v_a", "v_b", "v_c", "i_a", "i_b", "i_c"];

/// Serializes with shortest round-trip float formatting, so write → read →
/// write is byte-identical.
pub fn write_dq(series: &DqSeries) -> String {
    let mut out = String::with_capacity(64 * series.len());
    out.push_str(&DQ_HEADER.join(","));
    out.push('\n');
    for s in series.samples() {
        let _ = writeln!(out, "{},{},{},{},{}", s.t, s.v.re, s.v.im, s.i.re, s.i.im);
    }
    out
}

fn parse_error(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { file: file.to_path_buf(), line, msg: msg.into() }
}

/// Reads rows of `expected.len()` floats after checking the header.
fn parse_rows(text: &str, file: &Path, expected: &[&str]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| parse_error(file, 1, e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(parse_error(file, 1, format!("expected header `{}`, found `{}`", expected.join(","), got.join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_error(file, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != expected.len() {
            return Err(parse_error(file, line, format!("expected {} fields, found {}", expected.len(), record.len())));
        }
        let values = record
            .iter()
            .zip(expected)
            .map(|(field, name)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(parse_error(file, line, format!("non-finite {name}"))),
                Err(_) => Err(parse_error(file, line, format!("cannot parse {name} from `{field}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, values));
    }
    if rows.len() < 2 {
        return Err(parse_error(file, 1, format!("need at least 2 samples, found {}", rows.len())));
    }
    Ok(rows)
}

fn build(rows: Vec<(usize, DqSample)>, file: &Path) -> Result<DqSeries> {
    let dt = rows[1].1.t - rows[0].1.t;
    if !(dt > 0.0) {
        return Err(parse_error(file, rows[1].0, "time must increase"));
    }
    // Locate the offending row before handing over to the series checks.
    for w in rows.windows(2) {
        let step = w[1].1.t - w[0].1.t;
        if (step - dt).abs() > crate::signal::DT_TOLERANCE * dt.max(w[1].1.t.abs()) {
            return Err(parse_error(file, w[1].0, format!("non-uniform time step {step} (expected {dt})")));
        }
    }
    DqSeries::new(rows.into_iter().map(|r| r.1).collect(), dt).map_err(|e| parse_error(file, 0, e.to_string()))
}

/// Parses the dq format. `file` only labels errors.
pub fn parse_dq(text: &str, file: &Path) -> Result<DqSeries> {
    let rows = parse_rows(text, file, &DQ_HEADER)?;
    let samples = rows
        .into_iter()
        .map(|(line, r)| {
            (line, DqSample { t: r[0], v: Complex64::new(r[1], r[2]), i: Complex64::new(r[3], r[4]) })
        })
        .collect();
    build(samples, file)
}

/// Parses raw phase quantities and maps them to the global dq frame with
/// angle `ω₀ t`.
pub fn parse_abc(text: &str, file: &Path) -> Result<DqSeries> {
    let rows = parse_rows(text, file, &ABC_HEADER)?;
    let mut samples = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let angle = OMEGA_0 * r[0];
        let v = park_transform([r[1], r[2], r[3]], angle).map_err(|e| parse_error(file, line, e.to_string()))?;
        let i = park_transform([r[4], r[5], r[6]], angle).map_err(|e| parse_error(file, line, e.to_string()))?;
        samples.push((line, DqSample { t: r[0], v, i }));
    }
    build(samples, file)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Reads either format, chosen by the header.
pub fn read_series(path: &Path) -> Result<DqSeries> {
    let text = read_text(path)?;
    let first = text.lines().next().unwrap_or("");
    if first.split(',').map(str::trim).eq(ABC_HEADER.iter().copied()) {
        parse_abc(&text, path)
    } else {
        parse_dq(&text, path)
    }
}
