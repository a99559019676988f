use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::worlds::WorldVector;

/// Runtime value of one cell.
///
/// `Hash` and `VectorF64` are engine-internal: they never appear in user
/// data, only in columns introduced by the privacy rewrite (the PU hash and
/// unfused 64-world aggregate results).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int64(i64),
    Float64(f64),
    Boolean(bool),
    Text(String),
    /// Days since 1970-01-01.
    Date(i32),
    Null,
    Hash(u64),
    VectorF64(Box<WorldVector>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueType {
    Int64,
    Float64,
    Boolean,
    Text,
    Date,
    Hash,
    VectorF64,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueType::Int64 => "INT64",
            ValueType::Float64 => "FLOAT64",
            ValueType::Boolean => "BOOLEAN",
            ValueType::Text => "TEXT",
            ValueType::Date => "DATE",
            ValueType::Hash => "HASH",
            ValueType::VectorF64 => "VECTOR",
        };
        f.write_str(s)
    }
}

impl Value {
    pub fn value_type(&self) -> Option<ValueType> {
        match self {
            Value::Int64(_) => Some(ValueType::Int64),
            Value::Float64(_) => Some(ValueType::Float64),
            Value::Boolean(_) => Some(ValueType::Boolean),
            Value::Text(_) => Some(ValueType::Text),
            Value::Date(_) => Some(ValueType::Date),
            Value::Null => None,
            Value::Hash(_) => Some(ValueType::Hash),
            Value::VectorF64(_) => Some(ValueType::VectorF64),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Numeric view used by aggregation and noising.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int64(v) => Some(*v as f64),
            Value::Float64(v) => Some(*v),
            Value::Date(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int64(v) => Some(*v),
            Value::Date(v) => Some(*v as i64),
            _ => None,
        }
    }

    /// Total order: Null sorts first, then by value. Used for group-key
    /// sorting and ORDER BY, so it must be total over mixed numerics.
    pub fn cmp_total(&self, other: &Value) -> Ordering {
        use Value::*;
        match (self, other) {
            (Null, Null) => Ordering::Equal,
            (Null, _) => Ordering::Less,
            (_, Null) => Ordering::Greater,
            (Int64(a), Int64(b)) => a.cmp(b),
            (Float64(a), Float64(b)) => a.total_cmp(b),
            (Int64(a), Float64(b)) => (*a as f64).total_cmp(b),
            (Float64(a), Int64(b)) => a.total_cmp(&(*b as f64)),
            (Boolean(a), Boolean(b)) => a.cmp(b),
            (Text(a), Text(b)) => a.cmp(b),
            (Date(a), Date(b)) => a.cmp(b),
            (Hash(a), Hash(b)) => a.cmp(b),
            // Mixed incomparable kinds: rank by type tag to stay total.
            (a, b) => type_rank(a).cmp(&type_rank(b)),
        }
    }

    /// Rendering used for CSV output and explain text. Floats use Rust's
    /// shortest round-trip formatting so output bytes are deterministic.
    pub fn render(&self) -> String {
        match self {
            Value::Int64(v) => v.to_string(),
            Value::Float64(v) => format_f64(*v),
            Value::Boolean(v) => v.to_string(),
            Value::Text(v) => v.clone(),
            Value::Date(v) => format_date(*v),
            Value::Null => String::new(),
            Value::Hash(v) => format!("{v:#018x}"),
            Value::VectorF64(_) => "<vector64>".to_string(),
        }
    }
}

fn type_rank(v: &Value) -> u8 {
    match v {
        Value::Null => 0,
        Value::Boolean(_) => 1,
        Value::Int64(_) => 2,
        Value::Float64(_) => 3,
        Value::Date(_) => 4,
        Value::Text(_) => 5,
        Value::Hash(_) => 6,
        Value::VectorF64(_) => 7,
    }
}

pub fn format_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        // keep integral floats readable but unambiguous
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// Days since the epoch for a proleptic Gregorian civil date.
pub fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = (y - era * 400) as i64;
    let mp = ((month + 9) % 12) as i64;
    let doy = (153 * mp + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = (if mp < 10 { mp + 3 } else { mp - 9 }) as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

/// Parses an ISO-8601 `YYYY-MM-DD` date into days since the epoch.
pub fn parse_date(s: &str) -> Option<i32> {
    let mut parts = s.split('-');
    let year: i64 = parts.next()?.parse().ok()?;
    let month: u32 = parts.next()?.parse().ok()?;
    let day: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    Some(days_from_civil(year, month, day) as i32)
}

pub fn format_date(days: i32) -> String {
    let (y, m, d) = civil_from_days(days as i64);
    format!("{y:04}-{m:02}-{d:02}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_round_trip() {
        for &(y, m, d) in &[(1970, 1, 1), (1998, 9, 2), (2000, 2, 29), (1900, 3, 1)] {
            let days = days_from_civil(y, m, d);
            assert_eq!(civil_from_days(days), (y, m, d));
        }
        assert_eq!(days_from_civil(1970, 1, 1), 0);
        assert_eq!(parse_date("1998-09-02"), Some(10471));
        assert_eq!(format_date(10471), "1998-09-02");
    }

    #[test]
    fn null_sorts_first() {
        let mut vals = vec![Value::Int64(3), Value::Null, Value::Int64(-1)];
        vals.sort_by(|a, b| a.cmp_total(b));
        assert_eq!(vals[0], Value::Null);
        assert_eq!(vals[1], Value::Int64(-1));
    }
}
