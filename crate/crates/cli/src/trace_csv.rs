//! CSV form of a run trace.
//!
//! Header: `eval,x_1..x_nd,f,g_1..g_ng,h_1..h_nh,merit,best_merit,stage,tr_circle_ub,tr_sigma_ub`.
//! Floats use Rust's shortest round-trip formatting, so a written trace reads
//! back bit-for-bit.

use cbo_core::{RunTrace, TraceRow};
use nalgebra::DVector;
use std::io;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("row {row}, column '{column}': cannot parse '{value}'")]
    BadValue { row: usize, column: String, value: String },
    #[error("row {row}: eval index {found}, expected {expected}")]
    NonContiguous { row: usize, found: usize, expected: usize },
}

/// Column counts of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceShape {
    pub n_d: usize,
    pub n_g: usize,
    pub n_h: usize,
}

impl TraceShape {
    pub fn of(trace: &RunTrace) -> Option<Self> {
        trace.rows.first().map(|r| Self {
            n_d: r.x.len(),
            n_g: r.g.len(),
            n_h: r.h.len(),
        })
    }
}

pub fn header(shape: TraceShape) -> Vec<String> {
    let mut h = vec!["eval".to_string()];
    h.extend((1..=shape.n_d).map(|i| format!("x_{i}")));
    h.push("f".into());
    h.extend((1..=shape.n_g).map(|i| format!("g_{i}")));
    h.extend((1..=shape.n_h).map(|i| format!("h_{i}")));
    for c in ["merit", "best_merit", "stage", "tr_circle_ub", "tr_sigma_ub"] {
        h.push(c.into());
    }
    h
}

pub fn write_trace<W: io::Write>(out: W, trace: &RunTrace, shape: TraceShape) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(shape))?;
    for r in &trace.rows {
        let mut rec = vec![r.eval.to_string()];
        rec.extend(r.x.iter().map(|v| v.to_string()));
        rec.push(r.f.to_string());
        rec.extend(r.g.iter().map(|v| v.to_string()));
        rec.extend(r.h.iter().map(|v| v.to_string()));
        rec.push(r.merit.to_string());
        rec.push(r.best_merit.to_string());
        rec.push(r.stage.map(|s| s.to_string()).unwrap_or_default());
        rec.push(r.tr_circle_ub.to_string());
        rec.push(r.tr_sigma_ub.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// A parsed trace plus any non-fatal findings.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub trace: RunTrace,
    pub shape: TraceShape,
    pub warnings: Vec<String>,
}

fn numbered(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>, TraceError> {
    let mut cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(c, name)| {
            name.strip_prefix(prefix)
                .and_then(|n| n.parse::<usize>().ok())
                .map(|k| (k, c))
        })
        .collect();
    cols.sort_unstable();
    for (i, (k, _)) in cols.iter().enumerate() {
        if *k != i + 1 {
            return Err(TraceError::BadHeader(format!(
                "{prefix}* columns must be numbered 1..n"
            )));
        }
    }
    Ok(cols.into_iter().map(|(_, c)| c).collect())
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, TraceError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
}

/// Parses a trace. A `best_merit` column that is not the running minimum of
/// `merit` is replaced by it, with a warning.
pub fn read_trace<R: io::Read>(input: R) -> Result<Ingested, TraceError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let eval_c = column(&headers, "eval")?;
    let f_c = column(&headers, "f")?;
    let merit_c = column(&headers, "merit")?;
    let best_c = column(&headers, "best_merit")?;
    let stage_c = column(&headers, "stage")?;
    let circle_c = column(&headers, "tr_circle_ub")?;
    let sigma_c = column(&headers, "tr_sigma_ub")?;
    let x_c = numbered(&headers, "x_")?;
    let g_c = numbered(&headers, "g_")?;
    let h_c = numbered(&headers, "h_")?;
    if x_c.is_empty() {
        return Err(TraceError::MissingColumn("x_1".into()));
    }
    let shape = TraceShape {
        n_d: x_c.len(),
        n_g: g_c.len(),
        n_h: h_c.len(),
    };

    let mut trace = RunTrace::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let cell = |c: usize| rec.get(c).unwrap_or("").trim();
        let float = |c: usize| {
            cell(c).parse::<f64>().map_err(|_| TraceError::BadValue {
                row,
                column: headers[c].to_string(),
                value: cell(c).to_string(),
            })
        };
        let vector = |cols: &[usize]| -> Result<DVector<f64>, TraceError> {
            let vals = cols.iter().map(|&c| float(c)).collect::<Result<Vec<_>, _>>()?;
            Ok(DVector::from_vec(vals))
        };
        let eval = cell(eval_c).parse::<usize>().map_err(|_| TraceError::BadValue {
            row,
            column: "eval".into(),
            value: cell(eval_c).to_string(),
        })?;
        if eval != row {
            return Err(TraceError::NonContiguous {
                row,
                found: eval,
                expected: row,
            });
        }
        let stage = match cell(stage_c) {
            "" => None,
            s => Some(s.parse::<u8>().map_err(|_| TraceError::BadValue {
                row,
                column: "stage".into(),
                value: s.to_string(),
            })?),
        };
        trace.rows.push(TraceRow {
            eval,
            x: vector(&x_c)?,
            f: float(f_c)?,
            g: vector(&g_c)?,
            h: vector(&h_c)?,
            merit: float(merit_c)?,
            best_merit: float(best_c)?,
            stage,
            tr_circle_ub: float(circle_c)?,
            tr_sigma_ub: float(sigma_c)?,
        });
        trace.q_mu2_best.push(None);
    }
    let mut warnings = Vec::new();
    if trace.recompute_best() {
        warnings.push("best_merit was not the running minimum of merit; recomputed".to_string());
    }
    Ok(Ingested { trace, shape, warnings })
}
