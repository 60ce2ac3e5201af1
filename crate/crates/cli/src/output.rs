//! Versioned, atomic output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped into every output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
}

impl Meta {
    pub fn for_config(canonical: &str) -> Self {
        let digest = Sha256::digest(canonical.as_bytes());
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            tool: "mslab",
            version: VERSION,
            config_hash,
        }
    }
}

/// Writes into one directory; each file appears only once complete.
pub struct Writer {
    pub dir: PathBuf,
    pub meta: Meta,
}

impl Writer {
    pub fn new(dir: PathBuf, meta: Meta) -> std::io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, meta })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn bytes(&self, file: &str, data: &[u8]) -> std::io::Result<PathBuf> {
        let target = self.path(file);
        write_atomic(&target, data)?;
        Ok(target)
    }

    /// JSON object `{"meta": .., <body fields>}`.
    pub fn json<T: Serialize>(&self, file: &str, body: &T) -> std::io::Result<PathBuf> {
        let mut value = serde_json::to_value(body).map_err(std::io::Error::other)?;
        let meta = serde_json::to_value(&self.meta).map_err(std::io::Error::other)?;
        let object = match value {
            serde_json::Value::Object(ref mut map) => {
                let mut out = serde_json::Map::new();
                out.insert("meta".into(), meta);
                out.append(map);
                serde_json::Value::Object(out)
            }
            other => serde_json::json!({ "meta": meta, "data": other }),
        };
        let mut text = serde_json::to_string_pretty(&object).map_err(std::io::Error::other)?;
        text.push('\n');
        self.bytes(file, text.as_bytes())
    }

    /// CSV with a `#` provenance line ahead of the header.
    pub fn csv(&self, file: &str, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<PathBuf> {
        let mut text = format!(
            "# {} {} config_sha256={}\n{}\n",
            self.meta.tool,
            self.meta.version,
            self.meta.config_hash,
            header.join(",")
        );
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.bytes(file, text.as_bytes())
    }
}

fn write_atomic(target: &Path, data: &[u8]) -> std::io::Result<()> {
    let name = target
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| std::io::Error::other("output path has no file name"))?;
    let tmp = target.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, target)
}

/// Shortest round-trip representation.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Meta::for_config("{}");
        assert_eq!(a, Meta::for_config("{}"));
        assert_eq!(a.config_hash.len(), 64);
        assert_ne!(a.config_hash, Meta::for_config("{ }").config_hash);
    }

    #[test]
    fn files_carry_meta_and_leave_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let w = Writer::new(dir.path().join("out"), Meta::for_config("x")).unwrap();
        w.csv("a.csv", &["p", "q"], &[vec![num(0.1), num(2.0)]]).unwrap();
        w.json("a.json", &serde_json::json!({"value": 1})).unwrap();
        let csv = std::fs::read_to_string(w.path("a.csv")).unwrap();
        assert!(csv.starts_with("# mslab ") && csv.contains(&w.meta.config_hash));
        assert!(csv.ends_with("p,q\n0.1,2.0\n"));
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(w.path("a.json")).unwrap()).unwrap();
        assert_eq!(json["meta"]["config_hash"], w.meta.config_hash.as_str());
        assert_eq!(json["value"], 1);
        let names: Vec<_> = std::fs::read_dir(&w.dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
    }
}
