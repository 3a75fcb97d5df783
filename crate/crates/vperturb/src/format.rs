//! Diff-stable float formatting: every float is written with 17 significant
//! digits so outputs round-trip exactly and compare byte for byte.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::error::{CliError, CliResult};

/// `x` in scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Wraps a JSON formatter, overriding float output.
struct Precise<F>(F);

macro_rules! delegate {
    ($($name:ident),*) => {
        $(fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.$name(w)
        })*
    };
}

impl<F: Formatter> Formatter for Precise<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    delegate!(begin_array, end_array, end_array_value, begin_object, end_object, begin_object_value, end_object_value);
}

fn serialize<T: Serialize, F: Formatter>(value: &T, formatter: F) -> CliResult<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Precise(formatter));
    value.serialize(&mut ser).map_err(|e| CliError::Data(format!("serialization failed: {e}")))?;
    String::from_utf8(out).map_err(|e| CliError::Data(e.to_string()))
}

/// Single-line JSON.
pub fn to_json_line<T: Serialize>(value: &T) -> CliResult<String> {
    serialize(value, CompactFormatter)
}

/// Indented JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serialize(value, PrettyFormatter::new())?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_17_digits() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5e17, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17, "{s}");
        }
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn json_uses_precise_floats() {
        let line = to_json_line(&serde_json::json!({"a": [0.5, 2], "b": null})).unwrap();
        assert_eq!(line, r#"{"a":[5.0000000000000000e-1,2],"b":null}"#);
        let back: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(back["a"][0].as_f64(), Some(0.5));
        assert!(to_json_pretty(&serde_json::json!({"x": 1.5})).unwrap().ends_with("}\n"));
    }
}
