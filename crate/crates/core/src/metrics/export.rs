use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MetricsReport;

/// Ordered report tree. Ratios print with six decimals, integers verbatim.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i128),
    Ratio(f64),
    Text(String),
    Null,
    Map(Vec<(String, Value)>),
}

impl Value {
    pub fn map<const N: usize>(entries: [(&str, Value); N]) -> Value {
        Value::Map(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn text(s: &str) -> Value {
        Value::Text(s.to_string())
    }

    pub fn int(v: Option<u64>) -> Value {
        v.map_or(Value::Null, |v| Value::Int(v as i128))
    }

    pub fn ratio(v: Option<f64>) -> Value {
        v.map_or(Value::Null, Value::Ratio)
    }

    fn scalar(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Ratio(r) if r.is_finite() => format!("{r:.6}"),
            Value::Ratio(_) | Value::Null => "null".into(),
            Value::Text(s) => serde_json::to_string(s).expect("string serializes"),
            Value::Map(_) => unreachable!("maps are not scalars"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct Leaf {
    pub entity: String,
    pub metric: String,
    pub value: Value,
}

fn render(v: &Value, indent: usize, out: &mut String) {
    match v {
        Value::Map(entries) if entries.is_empty() => out.push_str("{}"),
        Value::Map(entries) => {
            out.push_str("{\n");
            for (i, (k, v)) in entries.iter().enumerate() {
                let _ = write!(
                    out,
                    "{:w$}{}: ",
                    "",
                    serde_json::to_string(k).expect("key"),
                    w = indent + 2
                );
                render(v, indent + 2, out);
                out.push_str(if i + 1 < entries.len() { ",\n" } else { "\n" });
            }
            let _ = write!(out, "{:indent$}}}", "");
        }
        scalar => out.push_str(&scalar.scalar()),
    }
}

pub fn to_json(report: &MetricsReport) -> String {
    let mut out = String::new();
    render(&report.to_tree(), 0, &mut out);
    out.push('\n');
    out
}

/// Every scalar leaf with its entity (`system`, `qpu.N`, `qlink.N`, `job.N`)
/// and the dotted path below it.
pub fn flatten(report: &MetricsReport) -> Vec<Leaf> {
    fn walk(entity: &str, prefix: &str, v: &Value, out: &mut Vec<Leaf>) {
        match v {
            Value::Map(entries) => {
                for (k, v) in entries {
                    let path = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(entity, &path, v, out);
                }
            }
            leaf => out.push(Leaf {
                entity: entity.to_string(),
                metric: prefix.to_string(),
                value: leaf.clone(),
            }),
        }
    }
    let mut out = Vec::new();
    let Value::Map(root) = report.to_tree() else {
        unreachable!()
    };
    for (section, v) in &root {
        if section == "system" {
            walk("system", "", v, &mut out);
        } else if let Value::Map(entities) = v {
            for (entity, v) in entities {
                walk(entity, "", v, &mut out);
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("entity,metric,value\n");
    for leaf in flatten(report) {
        let value = match &leaf.value {
            Value::Text(s) => s.clone(),
            Value::Null => String::new(),
            v => v.scalar(),
        };
        let _ = writeln!(
            out,
            "{},{},{}",
            csv_field(&leaf.entity),
            csv_field(&leaf.metric),
            csv_field(&value)
        );
    }
    out
}

/// Writes `report.json` or `report.csv` into `dir`, creating it if needed.
pub fn write_report(report: &MetricsReport, dir: &Path, format: OutputFormat) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (name, body) = match format {
        OutputFormat::Json => ("report.json", to_json(report)),
        OutputFormat::Csv => ("report.csv", to_csv(report)),
    };
    let path = dir.join(name);
    fs::write(&path, body)?;
    Ok(path)
}
