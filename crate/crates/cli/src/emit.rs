//! Stable text output. Every number goes through [`round12`] so repeated
//! runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::CliError;

/// Round to 12 significant digits. `-0` becomes `0`.
pub fn round12(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { 0.0 } else { v };
    }
    format!("{v:.11e}").parse().unwrap_or(v)
}

/// Decimal text of `round12(v)`: plain notation for moderate magnitudes,
/// shortest exponent form otherwise.
pub fn fmt_num(v: f64) -> String {
    let r = round12(v);
    if r == 0.0 {
        return "0".to_string();
    }
    let a = r.abs();
    if (1e-4..1e15).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

/// Copy of `value` with every float rounded to 12 significant digits.
pub fn canonical(value: Value) -> Value {
    match value {
        Value::Number(n) => match n.as_f64() {
            Some(f) if !(n.is_i64() || n.is_u64()) => Number::from_f64(round12(f)).map_or(Value::Null, Value::Number),
            _ => Value::Number(n),
        },
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, canonical(v))).collect::<Map<_, _>>()),
        other => other,
    }
}

/// Pretty JSON text with a trailing newline.
pub fn json_text(value: Value) -> String {
    let mut text = serde_json::to_string_pretty(&canonical(value)).expect("JSON values always serialize");
    text.push('\n');
    text
}

/// CSV text: header line then one line per row.
pub fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", fmt_num(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rounding() {
        assert_eq!(fmt_num(0.1 + 0.2), "0.3");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(37.215000000000004), "37.215");
        assert_eq!(fmt_num(4.8123456789012345e-24), "4.8123456789e-24");
        assert_eq!(fmt_num(123456.7890123456), "123456.789012");
    }

    #[test]
    fn canonical_keeps_integers() {
        let v = canonical(json!({"a": 3, "b": [0.1, 1e-30], "c": "x"}));
        assert_eq!(v, json!({"a": 3, "b": [0.1, 1e-30], "c": "x"}));
        assert_eq!(json_text(json!({"t": 0.30000000000000004})), "{\n  \"t\": 0.3\n}\n");
    }

    #[test]
    fn csv_layout() {
        let text = csv_text(&["t".into(), "P1".into()], vec![vec![0.0, 1.0], vec![0.5, 0.25]]);
        assert_eq!(text, "t,P1\n0,1\n0.5,0.25\n");
    }
}
