//! Serialization: a little-endian binary container for trace batches,
//! tab-separated classification tables, and float formatting that
//! round-trips every finite f64.

use std::io::{Read, Write};

use thiserror::Error;

use crate::classify::{ClassifiedShot, ClassifyMethod, SpinLabel};
use crate::model::ReadModel;
use crate::simulate::{SensorModel, ShotMeta, ShotTrace, ShotTruth};
use crate::Spin;

/// Leading bytes of the trace container.
pub const TRACE_MAGIC: [u8; 8] = *b"RSMTRC1\n";
/// Container format version written by this build.
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed container at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("batch cannot be serialized: {0}")]
    Inconsistent(String),
    #[error("malformed table at line {line}: {reason}")]
    Table { line: usize, reason: String },
}

/// Format a float with 17 significant digits, enough for exact f64
/// round-trips.
pub fn format_sig(x: f64) -> String {
    format!("{x:.16e}")
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn opt_to_f64(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Batch-level metadata shared by every trace in a file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchHeader {
    pub n_shots: u64,
    pub n_samples: u64,
    pub field_b: f64,
    pub model: ReadModel,
    pub sensor: SensorModel,
}

/// Header size in bytes; per-shot records start here.
pub const TRACE_HEADER_LEN: usize = 120;

/// Serialize a homogeneous batch: every trace must share the model,
/// sensor, field, and sample count, which live once in the header;
/// per-shot drift offsets and ground truth follow each sample block.
pub fn write_trace_batch<W: Write>(w: &mut W, traces: &[ShotTrace]) -> Result<(), IoError> {
    let first = traces
        .first()
        .ok_or_else(|| IoError::Inconsistent("empty batch".into()))?;
    write_trace_batch_with_header(
        w,
        &first.meta.model,
        &first.meta.sensor,
        first.meta.field_b,
        first.samples.len(),
        traces,
    )
}

/// Serialize a batch under an explicitly supplied header, which permits an
/// empty batch; any trace disagreeing with the header is rejected.
pub fn write_trace_batch_with_header<W: Write>(
    w: &mut W,
    model: &ReadModel,
    sensor: &SensorModel,
    field_b: f64,
    n_samples: usize,
    traces: &[ShotTrace],
) -> Result<(), IoError> {
    for t in traces {
        if t.samples.len() != n_samples {
            return Err(IoError::Inconsistent(format!(
                "trace with {} samples in a batch of {}-sample traces",
                t.samples.len(),
                n_samples
            )));
        }
        if t.meta.model != *model || t.meta.sensor != *sensor || t.meta.field_b != field_b {
            return Err(IoError::Inconsistent(
                "traces with differing batch physics".into(),
            ));
        }
    }

    let mut buf = Vec::with_capacity(TRACE_HEADER_LEN + traces.len() * (49 + 8 * n_samples));
    buf.extend_from_slice(&TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes()); // reserved
    put_u64(&mut buf, traces.len() as u64);
    put_u64(&mut buf, n_samples as u64);
    put_f64(&mut buf, field_b);
    for v in [model.gamma, model.t_e, model.r, model.eps0_down, model.e_z] {
        put_f64(&mut buf, v);
    }
    for v in [
        sensor.t_min,
        sensor.sample_period,
        sensor.level_occupied,
        sensor.level_empty,
        sensor.rise_time,
    ] {
        put_f64(&mut buf, v);
    }
    for t in traces {
        put_u64(&mut buf, t.seed);
        buf.push(match t.truth.initial_spin {
            Spin::Down => 0,
            Spin::Up => 1,
        });
        put_f64(&mut buf, opt_to_f64(t.truth.t_up_out));
        put_f64(&mut buf, opt_to_f64(t.truth.t_blip_in));
        put_f64(&mut buf, t.truth.t_down_out);
        put_f64(&mut buf, t.meta.eps_offset);
        put_f64(&mut buf, t.meta.baseline_offset);
        for &v in &t.samples {
            put_f64(&mut buf, v);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Byte cursor that reports the offset of whatever it fails to read.
struct Cursor<'a> {
    data: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N], IoError> {
        if self.offset + N > self.data.len() {
            return Err(IoError::Malformed {
                offset: self.offset as u64,
                reason: format!("unexpected end of data while reading {what}"),
            });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.data[self.offset..self.offset + N]);
        self.offset += N;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take::<8>(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take::<4>(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take::<8>(what)?))
    }

    fn u8(&mut self, what: &str) -> Result<u8, IoError> {
        Ok(self.take::<1>(what)?[0])
    }
}

fn f64_to_opt(v: f64) -> Option<f64> {
    if v.is_nan() {
        None
    } else {
        Some(v)
    }
}

fn parse_header(c: &mut Cursor) -> Result<BatchHeader, IoError> {
    let magic = c.take::<8>("magic")?;
    if magic != TRACE_MAGIC {
        return Err(IoError::Malformed {
            offset: 0,
            reason: format!("bad magic {magic:?}, expected {TRACE_MAGIC:?}"),
        });
    }
    let version = c.u32("version")?;
    if version != TRACE_VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    c.u32("reserved")?;
    let n_shots = c.u64("shot count")?;
    let n_samples = c.u64("sample count")?;
    let field_b = c.f64("field")?;
    let gamma = c.f64("gamma")?;
    let t_e = c.f64("T_e")?;
    let rate = c.f64("ramp rate")?;
    let eps0_down = c.f64("eps0_down")?;
    let e_z = c.f64("E_Z")?;
    let model_offset = 40;
    let model = ReadModel::new(gamma, t_e, rate, eps0_down, e_z).map_err(|e| IoError::Malformed {
        offset: model_offset,
        reason: e.to_string(),
    })?;
    let sensor_offset = c.offset as u64;
    let t_min = c.f64("t_min")?;
    let sample_period = c.f64("sample period")?;
    let level_occupied = c.f64("occupied level")?;
    let level_empty = c.f64("empty level")?;
    let rise_time = c.f64("rise time")?;
    let sensor = SensorModel::new(t_min, sample_period, level_occupied, level_empty, rise_time)
        .map_err(|e| IoError::Malformed {
            offset: sensor_offset,
            reason: e.to_string(),
        })?;
    Ok(BatchHeader {
        n_shots,
        n_samples,
        field_b,
        model,
        sensor,
    })
}

/// Read only the fixed-size batch header, leaving the shot records alone.
pub fn read_batch_header<R: Read>(r: &mut R) -> Result<BatchHeader, IoError> {
    let mut data = vec![0u8; TRACE_HEADER_LEN];
    let mut filled = 0;
    while filled < data.len() {
        let n = r.read(&mut data[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    data.truncate(filled);
    let mut c = Cursor {
        data: &data,
        offset: 0,
    };
    parse_header(&mut c)
}

/// Deserialize a batch written by [`write_trace_batch`]. Errors name the
/// byte offset of the first problem.
pub fn read_trace_batch<R: Read>(r: &mut R) -> Result<Vec<ShotTrace>, IoError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut c = Cursor {
        data: &data,
        offset: 0,
    };
    let header = parse_header(&mut c)?;
    let n_shots = header.n_shots as usize;
    let n_samples = header.n_samples as usize;
    let (field_b, model, sensor) = (header.field_b, header.model, header.sensor);

    let mut traces = Vec::with_capacity(n_shots);
    for _ in 0..n_shots {
        let seed = c.u64("shot seed")?;
        let spin_offset = c.offset as u64;
        let initial_spin = match c.u8("initial spin")? {
            0 => Spin::Down,
            1 => Spin::Up,
            other => {
                return Err(IoError::Malformed {
                    offset: spin_offset,
                    reason: format!("invalid spin byte {other}"),
                })
            }
        };
        let t_up_out = f64_to_opt(c.f64("t_up_out")?);
        let t_blip_in = f64_to_opt(c.f64("t_blip_in")?);
        let t_down_out = c.f64("t_down_out")?;
        let eps_offset = c.f64("detuning offset")?;
        let baseline_offset = c.f64("baseline offset")?;
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            samples.push(c.f64("sample")?);
        }
        traces.push(ShotTrace {
            samples,
            truth: ShotTruth {
                initial_spin,
                t_up_out,
                t_blip_in,
                t_down_out,
            },
            seed,
            meta: ShotMeta {
                field_b,
                model,
                sensor,
                eps_offset,
                baseline_offset,
            },
        });
    }
    if c.offset != data.len() {
        return Err(IoError::Malformed {
            offset: c.offset as u64,
            reason: format!("{} trailing bytes after the last trace", data.len() - c.offset),
        });
    }
    Ok(traces)
}

/// One classification table row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationRow {
    pub seed: u64,
    pub t_out: Option<f64>,
    pub t_final_exit: Option<f64>,
    pub label: SpinLabel,
    pub method: ClassifyMethod,
}

impl ClassificationRow {
    pub fn from_shot(seed: u64, shot: &ClassifiedShot) -> Self {
        ClassificationRow {
            seed,
            t_out: shot.t_out,
            t_final_exit: shot.t_final_exit,
            label: shot.label,
            method: shot.method,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format_sig(x),
        None => "NA".to_string(),
    }
}

/// Write classification rows as a tab-separated table with a header line
/// and a footer comment counting shots with no extracted exit time.
pub fn write_classification_tsv<W: Write>(
    w: &mut W,
    rows: &[ClassificationRow],
) -> Result<(), IoError> {
    writeln!(w, "seed\tt_out\tt_final_exit\tlabel\tmethod")?;
    let mut censored = 0u64;
    for r in rows {
        if r.t_out.is_none() {
            censored += 1;
        }
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.seed,
            fmt_opt(r.t_out),
            fmt_opt(r.t_final_exit),
            r.label,
            r.method
        )?;
    }
    writeln!(w, "# censored\t{censored}")?;
    Ok(())
}

fn parse_opt(field: &str, line: usize) -> Result<Option<f64>, IoError> {
    if field == "NA" {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|e| IoError::Table {
            line,
            reason: format!("bad float {field:?}: {e}"),
        })
}

/// Parse a table written by [`write_classification_tsv`], returning the
/// rows and the footer's censored count. Errors name the offending line.
pub fn read_classification_tsv(text: &str) -> Result<(Vec<ClassificationRow>, u64), IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::Table {
        line: 1,
        reason: "empty table".into(),
    })?;
    if header != "seed\tt_out\tt_final_exit\tlabel\tmethod" {
        return Err(IoError::Table {
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    let mut censored = None;
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.is_empty() {
            continue;
        }
        if let Some(rest) = raw.strip_prefix("# censored\t") {
            censored = Some(rest.parse::<u64>().map_err(|e| IoError::Table {
                line,
                reason: format!("bad censored count {rest:?}: {e}"),
            })?);
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 5 {
            return Err(IoError::Table {
                line,
                reason: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let seed = fields[0].parse::<u64>().map_err(|e| IoError::Table {
            line,
            reason: format!("bad seed {:?}: {e}", fields[0]),
        })?;
        let label = fields[3].parse::<SpinLabel>().map_err(|reason| IoError::Table {
            line,
            reason,
        })?;
        let method = fields[4]
            .parse::<ClassifyMethod>()
            .map_err(|reason| IoError::Table { line, reason })?;
        rows.push(ClassificationRow {
            seed,
            t_out: parse_opt(fields[1], line)?,
            t_final_exit: parse_opt(fields[2], line)?,
            label,
            method,
        });
    }
    let censored = censored.ok_or(IoError::Table {
        line: text.lines().count(),
        reason: "missing censored-count footer".into(),
    })?;
    Ok((rows, censored))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips_exactly() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.5e17,
            1e-300,
            f64::MIN_POSITIVE,
            -0.0,
            6.02214076e23,
            2.0f64.powi(-40) + 2.0f64.powi(-92),
        ] {
            let back: f64 = format_sig(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} mangled");
        }
    }

    #[test]
    fn classification_table_round_trips() {
        let rows = vec![
            ClassificationRow {
                seed: 12,
                t_out: Some(1.25e-3),
                t_final_exit: Some(2.5e-3),
                label: SpinLabel::Up,
                method: ClassifyMethod::FinalExit,
            },
            ClassificationRow {
                seed: 13,
                t_out: None,
                t_final_exit: None,
                label: SpinLabel::Undetermined,
                method: ClassifyMethod::FinalExit,
            },
        ];
        let mut buf = Vec::new();
        write_classification_tsv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (back, censored) = read_classification_tsv(&text).unwrap();
        assert_eq!(back, rows);
        assert_eq!(censored, 1);
    }

    #[test]
    fn table_errors_name_the_line() {
        let text = "seed\tt_out\tt_final_exit\tlabel\tmethod\n9\tnot-a-float\tNA\tup\tstatic\n";
        let err = read_classification_tsv(text).unwrap_err();
        match err {
            IoError::Table { line, .. } => assert_eq!(line, 2),
            other => panic!("wrong error {other:?}"),
        }
    }
}
