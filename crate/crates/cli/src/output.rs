//! Headers and line rendering shared by every output file.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fzsl_core::fed::RoundMetrics;
use serde_json::{json, Map, Value};

use crate::args::MetricsFormat;

impl MetricsFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MetricsFormat::Text => "txt",
            MetricsFormat::Jsonl => "jsonl",
        }
    }
}

/// Ordered fields of one output record.
#[derive(Debug, Default, Clone)]
pub struct Record(Vec<(String, Value)>);

impl Record {
    pub fn new() -> Self {
        Record::default()
    }

    pub fn field(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.push((key.to_string(), value.into()));
        self
    }

    pub fn render(&self, format: MetricsFormat) -> String {
        match format {
            MetricsFormat::Text => {
                let mut out = String::new();
                for (i, (k, v)) in self.0.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    write!(out, "{k}={}", text_value(v)).expect("string write");
                }
                out
            }
            MetricsFormat::Jsonl => {
                let map: Map<String, Value> = self.0.iter().cloned().collect();
                Value::Object(map).to_string()
            }
        }
    }
}

fn text_value(v: &Value) -> String {
    match v {
        Value::Null => "NA".to_string(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(text_value).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// First line of every file: format name and version, config digest.
pub fn header(kind: &str, digest: &str, format: MetricsFormat) -> String {
    match format {
        MetricsFormat::Text => format!("# fzsl.{kind} v1 config={digest}"),
        MetricsFormat::Jsonl => {
            json!({ "format": format!("fzsl.{kind} v1"), "config": digest }).to_string()
        }
    }
}

/// Line-by-line writer that flushes after every record.
pub struct RecordWriter {
    path: PathBuf,
    inner: BufWriter<File>,
    format: MetricsFormat,
}

impl RecordWriter {
    pub fn create(path: &Path, kind: &str, digest: &str, format: MetricsFormat) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = RecordWriter {
            path: path.to_path_buf(),
            inner: BufWriter::new(file),
            format,
        };
        w.line(&header(kind, digest, format))?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.inner, "{text}")
            .and_then(|_| self.inner.flush())
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn record(&mut self, record: &Record) -> Result<()> {
        let text = record.render(self.format);
        self.line(&text)
    }
}

/// Round metrics as a record. Wall time is left out unless asked for, so
/// reruns stay byte-identical.
pub fn metrics_record(m: &RoundMetrics, wall_time: bool) -> Record {
    let mut r = Record::new()
        .field("round", m.round)
        .field("selected", m.selected_clients.clone())
        .field("critic_loss", m.mean_critic_loss)
        .field("generator_loss", m.mean_generator_loss)
        .field("cls_loss", m.mean_cls_loss)
        .field("unseen_top1", m.unseen_top1)
        .field("transmitted_params", m.transmitted_params);
    if wall_time {
        r = r.field("wall_time_ms", m.wall_time_ms);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_json_render_the_same_fields() {
        let r = Record::new()
            .field("round", 3)
            .field("selected", vec![0, 2])
            .field("unseen_top1", Option::<f64>::None);
        assert_eq!(
            r.render(MetricsFormat::Text),
            "round=3 selected=0,2 unseen_top1=NA"
        );
        assert_eq!(
            r.render(MetricsFormat::Jsonl),
            r#"{"round":3,"selected":[0,2],"unseen_top1":null}"#
        );
    }
}
