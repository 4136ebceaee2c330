//! Deterministic output writers. Every file embeds the tool version, the
//! resolved-configuration hash, and the seed; CSVs use `.` decimals with 17
//! significant digits. No timestamps, so identical runs are byte-identical.

use serde::Serialize;
use std::io::Write;
use std::path::Path;

pub struct Meta {
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn csv_header(&self) -> String {
        format!(
            "# tool=noisespec {}\n# config_hash={}\n# seed={}\n",
            self.version, self.config_hash, self.seed
        )
    }
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())
}

pub fn write_csv(path: &Path, meta: &Meta, header: &str, rows: &[Vec<f64>]) -> std::io::Result<()> {
    let mut out = meta.csv_header();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Serialize `payload` with the run metadata spliced in as leading fields.
pub fn json_with_meta<T: Serialize>(meta: &Meta, payload: &T) -> String {
    let mut doc = serde_json::Map::new();
    doc.insert("tool".into(), "noisespec".into());
    doc.insert("version".into(), meta.version.into());
    doc.insert("config_hash".into(), meta.config_hash.clone().into());
    doc.insert("seed".into(), meta.seed.into());
    let body = serde_json::to_value(payload).expect("payload serializes");
    match body {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                doc.insert(k, v);
            }
        }
        other => {
            doc.insert("result".into(), other);
        }
    }
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(doc))
        .expect("document serializes");
    text.push('\n');
    text
}
