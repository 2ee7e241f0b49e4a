//! Deterministic text output: 17-significant-digit floats in CSV and JSON.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::Result;
use crate::grid::GridFunction;

/// Formats a float with 17 significant digits (`1.2345678901234567e-3`).
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // normalise -0.0 so repeated runs never differ by a sign bit
        return "0.0000000000000000e0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    format!("{v:.16e}")
}

/// Pretty JSON formatter that writes every float with [`fmt_f64`].
struct FixedDigits<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for FixedDigits<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serialises `value` as pretty JSON with fixed-precision floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let fmt = FixedDigits { inner: PrettyFormatter::with_indent(b"  ") };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// CSV of a grid function: header `t,<prefix>1,…` (or `<prefix>ij` for matrices).
pub fn grid_to_csv(f: &GridFunction, prefix: &str) -> String {
    let mut out = String::from("t");
    if f.cols() == 1 {
        for i in 1..=f.rows() {
            out.push_str(&format!(",{prefix}{i}"));
        }
    } else {
        for i in 1..=f.rows() {
            for j in 1..=f.cols() {
                out.push_str(&format!(",{prefix}{i}{j}"));
            }
        }
    }
    out.push('\n');
    for k in 0..f.len() {
        out.push_str(&fmt_f64(f.node_time(k)));
        for v in f.node(k) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Inline grid description used inside JSON exports.
#[derive(Debug, Clone, Serialize)]
pub struct InlineGrid {
    pub t_start: f64,
    pub step: f64,
    pub shape: [usize; 2],
    pub csv: String,
}

impl InlineGrid {
    pub fn new(f: &GridFunction, prefix: &str) -> Self {
        Self { t_start: f.t_start(), step: f.step(), shape: [f.rows(), f.cols()], csv: grid_to_csv(f, prefix) }
    }
}

/// Parses a CSV with a header line and a leading time column.
pub fn parse_grid_csv(text: &str, rows: usize, cols: usize) -> Result<GridFunction> {
    use crate::error::DdecError;
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + rows * cols {
            return Err(DdecError::Parse(format!(
                "line {}: expected {} columns, found {}",
                lineno + 1,
                1 + rows * cols,
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| DdecError::Parse(format!("line {}: bad number {s:?}", lineno + 1)))
        };
        times.push(parse(fields[0])?);
        for f in &fields[1..] {
            data.push(parse(f)?);
        }
    }
    if times.len() < 2 {
        return Err(DdecError::Parse("a grid needs at least two rows".into()));
    }
    let step = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (k, t) in times.iter().enumerate() {
        if (t - (times[0] + k as f64 * step)).abs() > 1e-6 * step {
            return Err(DdecError::Parse("time column must be uniformly spaced".into()));
        }
    }
    GridFunction::new(times[0], step, rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
        assert_eq!(fmt_f64(std::f64::consts::PI).parse::<f64>().unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn json_round_trips_and_is_stable() {
        let v = serde_json::json!({"a": [0.1, 2.0, -3.5e-9], "b": {"c": 1}});
        let s1 = to_json_string(&v).unwrap();
        let s2 = to_json_string(&v).unwrap();
        assert_eq!(s1, s2);
        let back: serde_json::Value = serde_json::from_str(&s1).unwrap();
        assert_eq!(back["a"][0].as_f64().unwrap(), 0.1);
        assert_eq!(back["b"]["c"].as_i64().unwrap(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let f = GridFunction::sample_interval(0.0, 1.0, 0.25, 2, |t| DVector::from_vec(vec![t, -t * t])).unwrap();
        let text = grid_to_csv(&f, "x");
        assert!(text.starts_with("t,x1,x2\n"));
        let g = parse_grid_csv(&text, 2, 1).unwrap();
        assert_eq!(f.data(), g.data());
        assert!(parse_grid_csv("t,x1\n0,1\n", 1, 1).is_err());
    }
}
