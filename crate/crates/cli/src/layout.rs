//! Artifact paths under the output directory and `_meta`-stamped writers.

use std::path::{Path, PathBuf};

use anyhow::Context;
use argmine::artifact::{parse_header, Header};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn pairs(&self, split: &str) -> PathBuf {
        self.root.join("pairs").join(format!("{split}.jsonl"))
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn model(&self, seed: u64) -> PathBuf {
        self.models().join(format!("seed-{seed}"))
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn run(&self) -> PathBuf {
        self.root.join("run.json")
    }
}

pub const HISTORY: &str = "history.csv";
pub const PAIR_PREDICTIONS: &str = "pairs.jsonl";
pub const COMPONENT_PREDICTIONS: &str = "components.jsonl";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const CONFUSION_COMPONENTS: &str = "confusion_components.csv";
pub const CONFUSION_RELATIONS: &str = "confusion_relations.csv";
pub const AGREEMENT: &str = "agreement.json";
pub const SUMMARY: &str = "summary.txt";

#[derive(Serialize, serde::Deserialize)]
struct Stamped<T> {
    #[serde(rename = "_meta")]
    meta: Header,
    #[serde(flatten)]
    body: T,
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

/// Pretty JSON object with a `_meta` key next to the fields of `body`.
pub fn write_json<T: Serialize>(path: &Path, header: &Header, body: &T) -> anyhow::Result<()> {
    ensure_parent(path)?;
    let stamped = Stamped {
        meta: header.clone(),
        body,
    };
    let mut s = serde_json::to_string_pretty(&stamped)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| path.display().to_string())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<(Header, T)> {
    let raw = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let s: Stamped<T> = serde_json::from_str(&raw).with_context(|| path.display().to_string())?;
    Ok((s.meta, s.body))
}

/// Text artifact whose first line is `# _meta {...}`.
pub fn write_text(path: &Path, header: &Header, body: &str) -> anyhow::Result<()> {
    ensure_parent(path)?;
    let meta = serde_json::json!({ "_meta": header });
    std::fs::write(path, format!("# {meta}\n{body}")).with_context(|| path.display().to_string())
}

/// Header of any artifact: `# {"_meta": ...}` text, JSON lines or a JSON object.
pub fn read_header(path: &Path) -> anyhow::Result<Option<Header>> {
    let raw = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let first = raw.lines().next().unwrap_or_default();
    if let Some(h) = parse_header(first.strip_prefix("# ").unwrap_or(first)) {
        return Ok(Some(h));
    }
    Ok(serde_json::from_str::<serde_json::Value>(&raw)
        .ok()
        .and_then(|v| serde_json::from_value(v["_meta"].clone()).ok()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
    struct Body {
        x: u32,
    }

    #[test]
    fn headers_round_trip_in_every_form() {
        let dir = tempfile::tempdir().unwrap();
        let h = Header::new("metrics", "abc");
        let j = dir.path().join("a/b.json");
        write_json(&j, &h, &Body { x: 3 }).unwrap();
        let (h2, b): (Header, Body) = read_json(&j).unwrap();
        assert_eq!((h2, b), (h.clone(), Body { x: 3 }));
        assert_eq!(read_header(&j).unwrap(), Some(h.clone()));
        let t = dir.path().join("t.csv");
        write_text(&t, &h, "a,b\n").unwrap();
        assert_eq!(read_header(&t).unwrap(), Some(h.clone()));
        let n = dir.path().join("n.jsonl");
        argmine::artifact::write_ndjson(&n, &h, &[Body { x: 1 }]).unwrap();
        assert_eq!(read_header(&n).unwrap(), Some(h));
    }
}
