//! Model files: TOML with keys `family`, `coefficients`,
//! `x_floor` and, for tabulated drifts, `knots`.

use toml::{Table, Value};

use super::DriftModel;
use crate::error::{Error, Result};

/// Line (1-based) of the first top-level assignment to `key`, or 0.
pub(crate) fn line_of_key(text: &str, key: &str) -> usize {
    let mut in_table = false;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim_start();
        if t.starts_with('[') {
            in_table = true;
        }
        if !in_table {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return i + 1;
                }
            }
        }
    }
    0
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn config_error(text: &str, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line: line_of_key(text, key),
        key: key.to_string(),
        message: message.into(),
    }
}

/// Parse TOML text into a table, reporting syntax errors with their line.
pub fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(0);
        let key = e
            .span()
            .and_then(|s| text.get(s.clone()))
            .unwrap_or("")
            .trim()
            .to_string();
        Error::Config {
            line,
            key,
            message: e.message().to_string(),
        }
    })
}

fn number_list(text: &str, table: &Table, key: &str) -> Result<Vec<f64>> {
    let value = table.get(key).ok_or_else(|| config_error(text, key, "missing key"))?;
    let arr = value
        .as_array()
        .ok_or_else(|| config_error(text, key, "expected an array of numbers"))?;
    arr.iter()
        .map(|v| match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(config_error(text, key, "expected an array of numbers")),
        })
        .collect()
}

pub(crate) fn number(text: &str, table: &Table, key: &str) -> Result<Option<f64>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::Float(f)) => Ok(Some(*f)),
        Some(Value::Integer(i)) => Ok(Some(*i as f64)),
        Some(_) => Err(config_error(text, key, "expected a number")),
    }
}

/// Build a drift model from the top-level keys of a parsed config.
pub fn parse_model_table(table: &Table, text: &str) -> Result<DriftModel> {
    let family = table
        .get("family")
        .ok_or_else(|| config_error(text, "family", "missing key"))?
        .as_str()
        .ok_or_else(|| config_error(text, "family", "expected a string"))?;
    let coeffs = number_list(text, table, "coefficients")?;
    let x_floor = number(text, table, "x_floor")?.unwrap_or(0.0);
    let wrap = |key: &str, r: Result<DriftModel>| r.map_err(|e| config_error(text, key, e.to_string()));
    let model = match family {
        "power_law" => {
            if coeffs.len() != 2 {
                return Err(config_error(text, "coefficients", "power_law takes [c, a]"));
            }
            wrap("coefficients", DriftModel::power_law(coeffs[0], coeffs[1]))?
        }
        "exp_poly" => wrap("coefficients", DriftModel::exp_poly(coeffs))?,
        "custom" => {
            let knots = number_list(text, table, "knots")?;
            if knots.len() != coeffs.len() {
                return Err(config_error(text, "knots", "knots and coefficients differ in length"));
            }
            wrap("knots", DriftModel::custom(knots, coeffs))?
        }
        other => {
            return Err(config_error(
                text,
                "family",
                format!("unknown family `{other}` (expected power_law, exp_poly or custom)"),
            ))
        }
    };
    wrap("x_floor", model.with_floor(x_floor))
}

/// Parse a model file.
pub fn parse_model(text: &str) -> Result<DriftModel> {
    let table = parse_table(text)?;
    parse_model_table(&table, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Family;

    #[test]
    fn parses_each_family() {
        let m = parse_model("family = \"power_law\"\ncoefficients = [1, 2.0]\nx_floor = 0.5\n").unwrap();
        assert_eq!(m.family(), &Family::PowerLaw { c: 1.0, a: 2.0 });
        assert_eq!(m.x_floor(), 0.5);
        let e = parse_model("family = \"exp_poly\"\ncoefficients = [0.0, 1.0]\n").unwrap();
        assert!(matches!(e.family(), Family::ExpPoly { .. }));
        let c = parse_model("family = \"custom\"\nknots = [0, 1, 2]\ncoefficients = [0, 0, 0]\n").unwrap();
        assert_eq!(c.eval_drift(1.5).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn errors_name_line_and_key() {
        let err = parse_model("family = \"power_law\"\n\ncoefficients = [1.0, 0.5]\n").unwrap_err();
        match err {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 3);
                assert_eq!(key, "coefficients");
            }
            other => panic!("{other:?}"),
        }
        let err = parse_model("family = \"cubic\"\ncoefficients = [1.0]\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, ref key, .. } if key == "family"));
        let err = parse_model("family = \"power_law\"\ncoefficients = [1.0, \n").unwrap_err();
        assert!(matches!(err, Error::Config { line, .. } if line >= 2));
        let err = parse_model("family = \"power_law\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "coefficients"));
    }
}
