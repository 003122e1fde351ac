//! Dataset manifests: a class header and one tab-separated record per sample.
//!
//! ```text
//! #classes: mug,bowl,can
//! #depth: colorized
//! color/0001.png	depth/0001.png	2	train
//! ```
//!
//! Paths are relative to the manifest's directory. A label of `-` marks an
//! unlabelled sample. Without the `#depth: colorized` header, depth files
//! are raw 16-bit single-channel PNGs and get colourised on load.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use relrot_core::data::{Domain, PairedSample};

use crate::error::{AppError, Result};
use crate::imageio;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub color: PathBuf,
    pub depth: PathBuf,
    pub label: Option<usize>,
    pub split: String,
    /// 1-based line in the manifest file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub depth_colorized: bool,
    pub records: Vec<Record>,
}

fn bad(path: &Path, line: usize, msg: impl std::fmt::Display) -> AppError {
    AppError::Data(format!("{}:{line}: {msg}", path.display()))
}

/// Parse manifest text; `path` only labels errors and `root` resolves files.
pub fn parse_manifest(text: &str, path: &Path, root: &Path) -> Result<DatasetManifest> {
    let mut classes: Option<Vec<String>> = None;
    let mut depth_colorized = false;
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim_end_matches('\r');
        if l.trim().is_empty() {
            continue;
        }
        if let Some(rest) = l.strip_prefix("#classes:") {
            if classes.is_some() {
                return Err(bad(path, line, "duplicate #classes header"));
            }
            let names: Vec<String> = rest.split(',').map(|s| s.trim().to_string()).collect();
            if names.len() < 2 || names.iter().any(|n| n.is_empty()) {
                return Err(bad(path, line, "#classes needs at least two non-empty names"));
            }
            classes = Some(names);
            continue;
        }
        if let Some(rest) = l.strip_prefix("#depth:") {
            match rest.trim() {
                "colorized" => depth_colorized = true,
                "raw" => depth_colorized = false,
                other => return Err(bad(path, line, format!("unknown depth encoding {other:?}"))),
            }
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        let c = classes
            .as_ref()
            .ok_or_else(|| bad(path, line, "record before the #classes header"))?
            .len();
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(path, line, format!("malformed record: expected 4 tab-separated fields, found {}", fields.len())));
        }
        let label = match fields[2].trim() {
            "-" => None,
            s => {
                let v: usize = s.parse().map_err(|_| bad(path, line, format!("malformed label {s:?}")))?;
                if v >= c {
                    return Err(bad(path, line, format!("label out of range: {v} with {c} classes")));
                }
                Some(v)
            }
        };
        let rec = Record {
            color: PathBuf::from(fields[0]),
            depth: PathBuf::from(fields[1]),
            label,
            split: fields[3].trim().to_string(),
            line,
        };
        for f in [&rec.color, &rec.depth] {
            if !root.join(f).is_file() {
                return Err(bad(path, line, format!("dangling image reference {}", f.display())));
            }
        }
        records.push(rec);
    }
    let classes = classes.ok_or_else(|| AppError::Data(format!("{}: missing #classes header", path.display())))?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        classes,
        depth_colorized,
        records,
    })
}

/// Read and validate a manifest file. Record order is file order.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, path, &root)
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("#classes: {}\n", self.classes.join(","));
        if self.depth_colorized {
            s.push_str("#depth: colorized\n");
        }
        for r in &self.records {
            let label = r.label.map_or("-".to_string(), |l| l.to_string());
            let _ = writeln!(s, "{}\t{}\t{label}\t{}", r.color.display(), r.depth.display(), r.split);
        }
        s
    }

    /// Load the records of one split (all when `None`) as samples of `domain`.
    /// Sample ids are the colour paths.
    pub fn load_samples(&self, domain: Domain, split: Option<&str>) -> Result<Vec<PairedSample>> {
        let mut out = Vec::new();
        for r in self.records.iter().filter(|r| split.is_none_or(|s| r.split == s)) {
            let at = |e: AppError| AppError::Data(format!("record on line {}: {e}", r.line));
            let color = imageio::read_color(&self.root.join(&r.color)).map_err(at)?;
            let depth = if self.depth_colorized {
                imageio::read_color(&self.root.join(&r.depth)).map_err(at)?
            } else {
                imageio::read_raw_depth(&self.root.join(&r.depth)).map_err(at)?
            };
            let id = r.color.to_string_lossy().into_owned();
            let sample = PairedSample::new(id, color, depth, r.label, domain)
                .and_then(PairedSample::colorized)
                .map_err(|e| AppError::Data(format!("record on line {}: {e}", r.line)))?;
            out.push(sample);
        }
        if out.is_empty() {
            return Err(AppError::Data(format!("{}: no records selected", self.root.display())));
        }
        Ok(out)
    }
}
