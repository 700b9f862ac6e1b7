//! Byte-stable artifact serialization. All floating-point values go through
//! one formatter with 9 significant digits so repeated runs diff clean.

use std::io::{self, Write};

/// Format with 9 significant digits, plain decimal notation, trailing zeros
/// trimmed. The empty-cost canonical forms: `0`, `0.02`, `6.42857143`, `45`.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}

/// Parse back what `fmt_sig` would print: the value rounded to 9 significant
/// digits. Used to push JSON numbers through the same canonical precision.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    fmt_sig(x).parse().unwrap_or(x)
}

/// Round every number inside a JSON value to the canonical precision.
pub fn canonicalize_json(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    if let Some(rounded) = serde_json::Number::from_f64(round_sig(f)) {
                        *n = rounded;
                    }
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(canonicalize_json),
        serde_json::Value::Object(map) => map.values_mut().for_each(canonicalize_json),
        _ => {}
    }
}

/// Write one serializable record per line, numbers canonicalized.
pub fn write_jsonl<W: Write, T: serde::Serialize>(
    mut out: W,
    records: impl IntoIterator<Item = T>,
) -> io::Result<()> {
    for record in records {
        let mut value = serde_json::to_value(&record).map_err(io::Error::other)?;
        canonicalize_json(&mut value);
        serde_json::to_writer(&mut out, &value)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Minimal CSV emitter: fields joined by commas, one record per line. Callers
/// guarantee fields contain no commas or newlines (ids are validated, floats
/// come from `fmt_sig`).
pub struct CsvWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, header: &str) -> io::Result<Self> {
        out.write_all(header.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(CsvWriter { out })
    }

    pub fn row(&mut self, fields: &[String]) -> io::Result<()> {
        self.out.write_all(fields.join(",").as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
