//! Tab-separated scan and plot tables. Readers check the header against
//! the expected schema and name any missing column; comment lines starting
//! with '#' are ignored.

use rsm_core::estimate::{FieldScanPoint, RatePoint, ThermometryPoint};
use rsm_core::io::{format_sig, IoError};
use rsm_core::simulate::{InitializationScanPoint, RelaxationScanPoint};

/// Render a table with one header line; cells are already formatted.
pub fn render_table(columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = columns.join("\t");
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

/// Parse a numeric table, mapping the expected columns onto whatever order
/// the file uses; unknown or missing columns are schema errors.
pub fn parse_table(text: &str, expect: &[&str]) -> Result<Vec<Vec<f64>>, IoError> {
    let mut lines = text.lines().enumerate();
    let (header_line, header) = loop {
        match lines.next() {
            Some((i, l)) if l.trim().is_empty() || l.starts_with('#') => {
                let _ = i;
                continue;
            }
            Some((i, l)) => break (i + 1, l),
            None => {
                return Err(IoError::Table {
                    line: 1,
                    reason: "empty document, expected a header line".into(),
                })
            }
        }
    };
    let names: Vec<&str> = header.split('\t').map(str::trim).collect();
    let mut index = Vec::with_capacity(expect.len());
    for want in expect {
        match names.iter().position(|n| n == want) {
            Some(i) => index.push(i),
            None => {
                return Err(IoError::Table {
                    line: header_line,
                    reason: format!("missing column {want:?} (found {names:?})"),
                })
            }
        }
    }
    for name in &names {
        if !expect.contains(name) {
            return Err(IoError::Table {
                line: header_line,
                reason: format!("unknown column {name:?} (expected {expect:?})"),
            });
        }
    }

    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != names.len() {
            return Err(IoError::Table {
                line: i + 1,
                reason: format!("expected {} cells, found {}", names.len(), cells.len()),
            });
        }
        let mut row = Vec::with_capacity(expect.len());
        for &col in &index {
            let cell = cells[col].trim();
            let v: f64 = cell.parse().map_err(|_| IoError::Table {
                line: i + 1,
                reason: format!("invalid number {cell:?}"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub const RELAXATION_COLUMNS: [&str; 4] = [
    "t_load",
    "truth_up_fraction",
    "classified_up_fraction",
    "n_shots",
];

pub fn render_relaxation_scan(points: &[RelaxationScanPoint]) -> String {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                format_sig(p.t_load),
                format_sig(p.truth_up_fraction),
                format_sig(p.classified_up_fraction),
                p.n_shots.to_string(),
            ]
        })
        .collect();
    render_table(&RELAXATION_COLUMNS, &rows)
}

pub fn parse_relaxation_scan(text: &str) -> Result<Vec<RelaxationScanPoint>, IoError> {
    Ok(parse_table(text, &RELAXATION_COLUMNS)?
        .into_iter()
        .map(|r| RelaxationScanPoint {
            t_load: r[0],
            truth_up_fraction: r[1],
            classified_up_fraction: r[2],
            n_shots: r[3] as usize,
        })
        .collect())
}

pub const INITIALIZATION_COLUMNS: [&str; 3] = ["t_initial", "up_fraction", "n_shots"];

pub fn render_initialization_scan(points: &[InitializationScanPoint]) -> String {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                format_sig(p.t_initial),
                format_sig(p.up_fraction),
                p.n_shots.to_string(),
            ]
        })
        .collect();
    render_table(&INITIALIZATION_COLUMNS, &rows)
}

pub fn parse_initialization_scan(text: &str) -> Result<Vec<InitializationScanPoint>, IoError> {
    Ok(parse_table(text, &INITIALIZATION_COLUMNS)?
        .into_iter()
        .map(|r| InitializationScanPoint {
            t_initial: r[0],
            up_fraction: r[1],
            n_shots: r[2] as usize,
        })
        .collect())
}

pub const THERMOMETRY_COLUMNS: [&str; 3] = ["t_mxc", "width", "width_err"];

pub fn render_thermometry_scan(points: &[ThermometryPoint]) -> String {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                format_sig(p.t_mxc),
                format_sig(p.width),
                format_sig(p.error),
            ]
        })
        .collect();
    render_table(&THERMOMETRY_COLUMNS, &rows)
}

pub fn parse_thermometry_scan(text: &str) -> Result<Vec<ThermometryPoint>, IoError> {
    Ok(parse_table(text, &THERMOMETRY_COLUMNS)?
        .into_iter()
        .map(|r| ThermometryPoint {
            t_mxc: r[0],
            width: r[1],
            error: r[2],
        })
        .collect())
}

pub const RATE_COLUMNS: [&str; 3] = ["b", "rate", "rate_err"];

pub fn render_rate_scan(points: &[RatePoint]) -> String {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![format_sig(p.b), format_sig(p.rate), format_sig(p.rate_err)])
        .collect();
    render_table(&RATE_COLUMNS, &rows)
}

pub fn parse_rate_scan(text: &str) -> Result<Vec<RatePoint>, IoError> {
    Ok(parse_table(text, &RATE_COLUMNS)?
        .into_iter()
        .map(|r| RatePoint {
            b: r[0],
            rate: r[1],
            rate_err: r[2],
        })
        .collect())
}

pub const FIELD_SCAN_COLUMNS: [&str; 5] = ["b", "delta_t", "delta_t_err", "delta_e", "delta_e_err"];

pub fn render_field_scan(points: &[FieldScanPoint]) -> String {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                format_sig(p.b),
                format_sig(p.delta_t),
                format_sig(p.delta_t_err),
                format_sig(p.delta_e),
                format_sig(p.delta_e_err),
            ]
        })
        .collect();
    render_table(&FIELD_SCAN_COLUMNS, &rows)
}

pub fn parse_field_scan(text: &str) -> Result<Vec<FieldScanPoint>, IoError> {
    Ok(parse_table(text, &FIELD_SCAN_COLUMNS)?
        .into_iter()
        .map(|r| FieldScanPoint {
            b: r[0],
            delta_t: r[1],
            delta_t_err: r[2],
            delta_e: r[3],
            delta_e_err: r[4],
        })
        .collect())
}
