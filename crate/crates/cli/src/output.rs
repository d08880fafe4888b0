use std::fmt::Write as _;

use dichotomy::dynamics::Window;
use dichotomy::{Sequence, StateVector};
use serde::Serialize;
use serde_json::Value;

use crate::config::Format;

/// One solution row: index, state and local recursion residual.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub n: i64,
    pub x: Vec<f64>,
    pub residual: f64,
}

/// Rows over the window; `step(n, x_n, x_{n+1})` is the recursion defect vector.
pub fn rows(x: &Sequence, window: &Window, step: impl Fn(i64, &StateVector, &StateVector) -> StateVector) -> Vec<Row> {
    (window.n_min..=window.n_max)
        .filter_map(|n| {
            let xn = x.get(n)?;
            let residual = x.get(n + 1).map_or(f64::NAN, |next| step(n, xn, next).norm());
            Some(Row {
                n,
                x: xn.iter().copied().collect(),
                residual,
            })
        })
        .collect()
}

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_table(rows: &[Row]) -> String {
    let d = rows.first().map_or(0, |r| r.x.len());
    let mut out = String::from("n");
    for i in 1..=d {
        let _ = write!(out, ",x_{i}");
    }
    out.push_str(",residual\n");
    for r in rows {
        let _ = write!(out, "{}", r.n);
        for v in &r.x {
            out.push(',');
            out.push_str(&float(*v));
        }
        out.push(',');
        out.push_str(&float(r.residual));
        out.push('\n');
    }
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => {
            for (k, val) in map {
                flatten(&key(k), val, out);
            }
        }
        Value::Array(items) => {
            for (i, val) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), val, out);
            }
        }
        Value::Number(num) => {
            let text = match (num.as_i64(), num.as_u64(), num.as_f64()) {
                (Some(i), _, _) => i.to_string(),
                (_, Some(u), _) => u.to_string(),
                (_, _, Some(f)) => float(f),
                _ => num.to_string(),
            };
            out.push((prefix.to_string(), text));
        }
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), "NaN".to_string())),
    }
}

/// `key,value` rows for reports without a solution table.
pub fn csv_summary(report: &impl Serialize) -> String {
    let value = serde_json::to_value(report).expect("report serializes");
    let mut pairs = Vec::new();
    flatten("", &value, &mut pairs);
    let mut out = String::from("key,value\n");
    for (k, v) in pairs {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

pub fn json(report: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// A rendered command result.
pub struct Rendered {
    pub json: String,
    pub csv: String,
}

impl Rendered {
    pub fn table(report: &impl Serialize, rows: &[Row]) -> Self {
        Self {
            json: json(report),
            csv: csv_table(rows),
        }
    }

    pub fn summary(report: &impl Serialize) -> Self {
        Self {
            json: json(report),
            csv: csv_summary(report),
        }
    }

    pub fn select(&self, format: Format) -> &str {
        match format {
            Format::Csv => &self.csv,
            Format::Json => &self.json,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_lf_rows() {
        let rows = vec![Row {
            n: -1,
            x: vec![0.5, -2.0],
            residual: 0.0,
        }];
        let text = csv_table(&rows);
        assert_eq!(
            text,
            "n,x_1,x_2,residual\n-1,5.0000000000000000e-1,-2.0000000000000000e0,0.0000000000000000e0\n"
        );
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn summary_flattens_nested_values() {
        #[derive(Serialize)]
        struct Inner {
            k: f64,
        }
        #[derive(Serialize)]
        struct Outer {
            ok: bool,
            inner: Inner,
            list: Vec<i32>,
        }
        let text = csv_summary(&Outer {
            ok: true,
            inner: Inner { k: 2.0 },
            list: vec![3, 4],
        });
        assert_eq!(
            text,
            "key,value\ninner.k,2.0000000000000000e0\nlist.0,3\nlist.1,4\nok,true\n"
        );
    }
}
