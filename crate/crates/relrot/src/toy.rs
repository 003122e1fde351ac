//! Writing the procedural toy shift to disk in manifest form.

use std::path::{Path, PathBuf};

use relrot_core::data::{generate_toy_shift, PairedSample, ToyShiftSpec};

use crate::error::{AppError, Result};
use crate::imageio;
use crate::manifest::{DatasetManifest, Record};

pub const SOURCE_MANIFEST: &str = "source.tsv";
pub const TARGET_MANIFEST: &str = "target.tsv";

pub fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("shape{i}")).collect()
}

pub fn load_spec(path: &Path) -> Result<ToyShiftSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    toml::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

fn write_domain(dir: &Path, tag: &str, samples: &[PairedSample], classes: &[String]) -> Result<PathBuf> {
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let color = PathBuf::from(tag).join("color").join(format!("{}.png", s.id));
        let depth = PathBuf::from(tag).join("depth").join(format!("{}.png", s.id));
        imageio::write_unit(&s.color, &dir.join(&color))?;
        imageio::write_unit(&s.depth, &dir.join(&depth))?;
        records.push(Record {
            color,
            depth,
            label: s.label,
            split: "train".into(),
            line: i + 3,
        });
    }
    let m = DatasetManifest {
        root: dir.to_path_buf(),
        classes: classes.to_vec(),
        depth_colorized: true,
        records,
    };
    let path = dir.join(format!("{tag}.tsv"));
    std::fs::write(&path, m.to_text()).map_err(|e| AppError::io(&path, e))?;
    Ok(path)
}

/// Generate the toy shift and write both domains under `out`: PNG images
/// (depth already colourised) plus `source.tsv` and `target.tsv`. Target
/// records keep their labels for evaluation; training never reads them.
pub fn write_toy(spec: &ToyShiftSpec, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let data = generate_toy_shift(spec).map_err(|e| AppError::Config(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let classes = class_names(spec.num_classes);
    let s = write_domain(out, "source", &data.source, &classes)?;
    let t = write_domain(out, "target", &data.target, &classes)?;
    let p = out.join("toy-spec.resolved");
    std::fs::write(&p, toml::to_string(spec).expect("spec serializes")).map_err(|e| AppError::io(&p, e))?;
    Ok((s, t))
}
