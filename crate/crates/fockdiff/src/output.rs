//! Machine-readable result output.
//!
//! Floats are pinned to 17 significant digits of scientific notation in both
//! JSON and CSV, so round-tripping is lossless and identical configurations
//! produce byte-identical files. CSV rows use CRLF line endings per RFC 4180.

use std::io::{self, Write};

use serde::Serialize;

/// Fixed 17-significant-digit scientific rendering used for every float.
pub fn format_sci(x: f64) -> String {
    format!("{x:.16e}")
}

struct Sci17Formatter;

impl serde_json::ser::Formatter for Sci17Formatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serialize any value as JSON with the pinned float format.
pub fn write_json<W: Write, T: Serialize>(writer: W, value: &T) -> io::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, Sci17Formatter);
    value
        .serialize(&mut ser)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Echo of the resolved run configuration, embedded in every output file.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfigEcho {
    pub state: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub kappa: f64,
    pub times: Vec<f64>,
    pub dim: usize,
    pub method: String,
    pub n_report: usize,
    pub deficit_target: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimePointResult {
    pub t: f64,
    pub method: String,
    pub mean: f64,
    pub trace: f64,
    pub trace_deficit: f64,
    pub distribution: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolveOutput {
    pub config: RunConfigEcho,
    pub results: Vec<TimePointResult>,
}

/// Distribution table: `t,method,mean,trace,trace_deficit,p0..p{n-1}`.
pub fn write_evolve_csv<W: Write>(
    mut w: W,
    results: &[TimePointResult],
    n_report: usize,
) -> io::Result<()> {
    let mut header = String::from("t,method,mean,trace,trace_deficit");
    for k in 0..n_report {
        header.push_str(&format!(",p{k}"));
    }
    write!(w, "{header}\r\n")?;
    for r in results {
        write!(
            w,
            "{},{},{},{},{}",
            format_sci(r.t),
            r.method,
            format_sci(r.mean),
            format_sci(r.trace),
            format_sci(r.trace_deficit)
        )?;
        for &p in &r.distribution {
            write!(w, ",{}", format_sci(p))?;
        }
        write!(w, "\r\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveRowOut {
    pub t: f64,
    pub mean: f64,
    pub trace: f64,
    pub trace_deficit: f64,
    pub method: String,
    /// Per-time spread of means across methods; present only for method=all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
}

/// Mean-photon table: `t,mean,trace,trace_deficit,method[,spread]`.
pub fn write_mean_curve_csv<W: Write>(
    mut w: W,
    rows: &[CurveRowOut],
    with_spread: bool,
) -> io::Result<()> {
    if with_spread {
        write!(w, "t,mean,trace,trace_deficit,method,spread\r\n")?;
    } else {
        write!(w, "t,mean,trace,trace_deficit,method\r\n")?;
    }
    for r in rows {
        write!(
            w,
            "{},{},{},{},{}",
            format_sci(r.t),
            format_sci(r.mean),
            format_sci(r.trace),
            format_sci(r.trace_deficit),
            r.method
        )?;
        if with_spread {
            write!(w, ",{}", format_sci(r.spread.unwrap_or(0.0)))?;
        }
        write!(w, "\r\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveOutput {
    pub config: RunConfigEcho,
    pub results: Vec<CurveRowOut>,
}
