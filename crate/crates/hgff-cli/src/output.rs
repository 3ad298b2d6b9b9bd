//! Record stream. Every record is rendered in full and handed to the writer in
//! a single `write_all`, so an interrupted run leaves only complete lines.

use crate::config::Format;
use serde::Serialize;
use serde_json::{json, Map, Value};
use std::io::{self, Write};

/// Version of the record layout documented in the README.
pub const SCHEMA: &str = "hgff-run/1";

pub struct Sink {
    out: Box<dyn Write + Send>,
    format: Format,
    count: usize,
}

impl Sink {
    pub fn new(out: Box<dyn Write + Send>, format: Format) -> io::Result<Self> {
        let mut sink = Self { out, format, count: 0 };
        if format == Format::Csv {
            sink.put(b"record,kind,field,value\n".to_vec())?;
        }
        Ok(sink)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn put(&mut self, bytes: Vec<u8>) -> io::Result<()> {
        self.out.write_all(&bytes)?;
        self.out.flush()
    }

    /// Emits `{"record": n, "kind": kind, "data": data}`.
    pub fn record(&mut self, kind: &str, data: impl Serialize) -> io::Result<()> {
        let data = serde_json::to_value(data).map_err(io::Error::other)?;
        let bytes = match self.format {
            Format::JsonLines => {
                let mut line = serde_json::to_vec(&json!({ "record": self.count, "kind": kind, "data": data })).map_err(io::Error::other)?;
                line.push(b'\n');
                line
            }
            Format::Csv => {
                let mut rows = Vec::new();
                flatten("", &data, &mut rows);
                let mut w = csv::Writer::from_writer(Vec::new());
                for (field, value) in rows {
                    w.write_record([self.count.to_string(), kind.to_string(), field, value]).map_err(io::Error::other)?;
                }
                w.into_inner().map_err(|e| io::Error::other(e.to_string()))?
            }
        };
        self.count += 1;
        self.put(bytes)
    }
}

/// Dotted paths to scalar leaves; array elements are indexed.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&join(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Header record: schema, artifact version and the effective configuration.
pub fn header(subcommand: &str, config: &impl Serialize) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("schema".into(), SCHEMA.into());
    m.insert("version".into(), format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("HGFF_GIT_REV")).into());
    m.insert("subcommand".into(), subcommand.into());
    m.insert("config".into(), serde_json::to_value(config).unwrap_or(Value::Null));
    m
}
