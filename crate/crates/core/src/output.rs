//! Deterministic CSV and JSON artifacts.
//!
//! Floats are written with a fixed number of significant digits in the style
//! of C's `%g`, `.` as decimal separator, LF line endings.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

use crate::spectral::{Peak, Spectrum};
use crate::thermal::TemperatureField;

/// Significant digits for every float except the temperature field.
pub const DIGITS: usize = 9;
pub const FIELD_DIGITS: usize = 6;

/// `%.{digits}g`.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    } else {
        let decimals = (digits as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `x` rounded to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits.max(1) - 1, x)
        .parse()
        .expect("round trip")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_sig(n.as_f64().expect("f64"), DIGITS);
            if let Some(m) = serde_json::Number::from_f64(r) {
                *n = m;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to [`DIGITS`] significant digits and
/// a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable");
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

/// `x_um,y_um,T_K` over solid cells, row-major.
pub fn field_csv(field: &TemperatureField) -> String {
    let mut s = String::from("x_um,y_um,T_K\n");
    for (_, p, t) in field.solid_cells() {
        writeln!(
            s,
            "{},{},{}",
            fmt_sig(p.x_um, FIELD_DIGITS),
            fmt_sig(p.y_um, FIELD_DIGITS),
            fmt_sig(t, FIELD_DIGITS)
        )
        .unwrap();
    }
    s
}

pub fn spectrum_csv(spectrum: &Spectrum) -> String {
    let mut s = String::from("lambda_nm,intensity\n");
    for (l, i) in spectrum.wavelengths_nm.iter().zip(&spectrum.intensities) {
        writeln!(s, "{},{}", fmt_sig(*l, DIGITS), fmt_sig(*i, DIGITS)).unwrap();
    }
    s
}

pub fn peaks_json(peaks: &[Peak]) -> String {
    to_json(&peaks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        let cases = [
            (1.0, 9, "1"),
            (0.1, 9, "0.1"),
            (930.25, 9, "930.25"),
            (1.0 / 3.0, 9, "0.333333333"),
            (19.953_606_2, 6, "19.9536"),
            (1.5e-7, 9, "1.5e-07"),
            (-2.5e-5, 6, "-2.5e-05"),
            (1.23456e-4, 9, "0.000123456"),
            (123_456_789_012.0, 9, "1.23456789e+11"),
            (999_999.5, 6, "1e+06"),
            (100.0, 6, "100"),
            (-0.0, 6, "0"),
        ];
        for (x, d, want) in cases {
            assert_eq!(fmt_sig(x, d), want, "{x} with {d} digits");
        }
        assert_eq!(fmt_sig(f64::NAN, 6), "nan");
    }

    #[test]
    fn rounding_is_idempotent() {
        for x in [0.815_168_8, 6_420.694_321_7, 1.0 / 7.0, 2.5e-12] {
            let r = round_sig(x, DIGITS);
            assert_eq!(round_sig(r, DIGITS), r);
            assert!((r - x).abs() <= 5e-9 * x.abs());
        }
    }

    #[test]
    fn json_floats_are_rounded() {
        let s = to_json(&serde_json::json!({"a": 1.0 / 3.0, "b": [2, 0.1], "c": "x"}));
        assert!(s.contains("0.333333333"));
        assert!(!s.contains("0.3333333333"));
        assert!(s.ends_with("}\n"));
        assert!(!s.contains('\r'));
    }
}
