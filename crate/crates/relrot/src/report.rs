//! One-page summary of a run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analyze::{EMBED_JSON, EMBED_PNG, SALIENCY_PNG};
use crate::error::{AppError, Result};
use crate::metrics::{read_metrics, COLUMNS, METRICS_FILE};
use crate::plot::line_chart_svg;
use crate::run::CHECKPOINT_FILE;

pub const SALIENCY_DIR: &str = "saliency";
pub const EMBED_DIR: &str = "embed";
pub const LOSS_SVG: &str = "loss_curves.svg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Markdown,
    Html,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub path: PathBuf,
    /// Artifacts that were expected but not found.
    pub missing: Vec<String>,
}

const TABLE_COLUMNS: [&str; 5] = [
    "epoch",
    "source_accuracy",
    "target_accuracy",
    "pretext_accuracy_source",
    "pretext_accuracy_target",
];

enum Block {
    Heading(String),
    Text(String),
    Image { src: String, alt: String, inline_svg: Option<String> },
    Table { header: Vec<String>, rows: Vec<Vec<String>> },
    Missing(String),
}

fn col(name: &str) -> usize {
    COLUMNS.iter().position(|c| *c == name).expect("known column")
}

fn parse(v: &str) -> Option<f64> {
    v.parse().ok()
}

/// Write `report.md` (or `report.html`) into `run_dir` with four sections:
/// loss curves, accuracy table, saliency grid and embedding plot. Missing
/// inputs leave an explicit placeholder and are listed in the result.
pub fn emit_report(run_dir: &Path, format: ReportFormat) -> Result<Report> {
    if !run_dir.is_dir() {
        return Err(AppError::Data(format!("{} is not a directory", run_dir.display())));
    }
    let mut missing = Vec::new();
    let mut blocks = vec![Block::Heading(format!("Run report: {}", run_dir.display()))];
    if !run_dir.join(CHECKPOINT_FILE).is_file() {
        missing.push(CHECKPOINT_FILE.to_string());
        blocks.push(Block::Missing(format!("{CHECKPOINT_FILE} not found")));
    }

    let metrics_path = run_dir.join(METRICS_FILE);
    let rows = if metrics_path.is_file() { Some(read_metrics(&metrics_path)?) } else { None };

    blocks.push(Block::Heading("Loss curves".into()));
    match &rows {
        Some(rows) if !rows.is_empty() => {
            let epochs: Vec<f64> = rows.iter().map(|r| parse(&r[0]).unwrap_or(0.0)).collect();
            let series: Vec<(&str, Vec<Option<f64>>)> = ["loss_main", "loss_pretext", "loss_entropy", "loss_adapt", "loss_total"]
                .iter()
                .map(|&n| (n, rows.iter().map(|r| parse(&r[col(n)])).collect()))
                .collect();
            let svg = line_chart_svg("training losses", &epochs, &series);
            let p = run_dir.join(LOSS_SVG);
            std::fs::write(&p, &svg).map_err(|e| AppError::io(&p, e))?;
            blocks.push(Block::Image {
                src: LOSS_SVG.into(),
                alt: "loss curves".into(),
                inline_svg: Some(svg),
            });
        }
        _ => {
            missing.push(METRICS_FILE.into());
            blocks.push(Block::Missing(format!("{METRICS_FILE} not found or empty; no loss curves")));
        }
    }

    blocks.push(Block::Heading("Accuracy".into()));
    match &rows {
        Some(rows) if !rows.is_empty() => {
            let idx: Vec<usize> = TABLE_COLUMNS.iter().map(|c| col(c)).collect();
            let body = rows
                .iter()
                .filter(|r| idx[1..].iter().any(|&i| !r[i].is_empty()))
                .map(|r| idx.iter().map(|&i| if r[i].is_empty() { "-".to_string() } else { r[i].clone() }).collect())
                .collect();
            blocks.push(Block::Table {
                header: TABLE_COLUMNS.iter().map(|s| s.to_string()).collect(),
                rows: body,
            });
        }
        _ => blocks.push(Block::Missing(format!("{METRICS_FILE} not found or empty; no accuracy table"))),
    }

    blocks.push(Block::Heading("Saliency".into()));
    let sal = Path::new(SALIENCY_DIR).join(SALIENCY_PNG);
    if run_dir.join(&sal).is_file() {
        blocks.push(Block::Image {
            src: sal.display().to_string(),
            alt: "guided backpropagation".into(),
            inline_svg: None,
        });
    } else {
        missing.push(sal.display().to_string());
        blocks.push(Block::Missing(format!("{} not found", sal.display())));
    }

    blocks.push(Block::Heading("Embedding".into()));
    let emb = Path::new(EMBED_DIR).join(EMBED_PNG);
    if run_dir.join(&emb).is_file() {
        blocks.push(Block::Image {
            src: emb.display().to_string(),
            alt: "t-SNE of main-head features, source red, target blue".into(),
            inline_svg: None,
        });
        let side = run_dir.join(EMBED_DIR).join(EMBED_JSON);
        if let Some(sep) = std::fs::read_to_string(&side)
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
            .and_then(|v| v["domain_separability"].as_f64())
        {
            blocks.push(Block::Text(format!("1-NN domain separability: {sep}")));
        }
    } else {
        missing.push(emb.display().to_string());
        blocks.push(Block::Missing(format!("{} not found", emb.display())));
    }

    let (name, text) = match format {
        ReportFormat::Markdown => ("report.md", markdown(&blocks)),
        ReportFormat::Html => ("report.html", html(&blocks)),
    };
    let path = run_dir.join(name);
    std::fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
    Ok(Report { path, missing })
}

fn markdown(blocks: &[Block]) -> String {
    let mut s = String::new();
    let mut first = true;
    for b in blocks {
        match b {
            Block::Heading(h) if first => {
                let _ = writeln!(s, "# {h}\n");
                first = false;
            }
            Block::Heading(h) => {
                let _ = writeln!(s, "## {h}\n");
            }
            Block::Text(t) => {
                let _ = writeln!(s, "{t}\n");
            }
            Block::Image { src, alt, .. } => {
                let _ = writeln!(s, "![{alt}]({src})\n");
            }
            Block::Table { header, rows } => {
                let _ = writeln!(s, "| {} |", header.join(" | "));
                let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
                for r in rows {
                    let _ = writeln!(s, "| {} |", r.join(" | "));
                }
                s.push('\n');
            }
            Block::Missing(m) => {
                let _ = writeln!(s, "> **missing:** {m}\n");
            }
        }
    }
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn html(blocks: &[Block]) -> String {
    let mut s = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>run report</title></head><body>\n");
    let mut first = true;
    for b in blocks {
        match b {
            Block::Heading(h) => {
                let tag = if first { "h1" } else { "h2" };
                first = false;
                let _ = writeln!(s, "<{tag}>{}</{tag}>", escape(h));
            }
            Block::Text(t) => {
                let _ = writeln!(s, "<p>{}</p>", escape(t));
            }
            Block::Image { src, alt, inline_svg } => match inline_svg {
                Some(svg) => s.push_str(svg),
                None => {
                    let _ = writeln!(s, "<img src=\"{}\" alt=\"{}\">", escape(src), escape(alt));
                }
            },
            Block::Table { header, rows } => {
                s.push_str("<table border=\"1\">\n<tr>");
                for h in header {
                    let _ = write!(s, "<th>{}</th>", escape(h));
                }
                s.push_str("</tr>\n");
                for r in rows {
                    s.push_str("<tr>");
                    for v in r {
                        let _ = write!(s, "<td>{}</td>", escape(v));
                    }
                    s.push_str("</tr>\n");
                }
                s.push_str("</table>\n");
            }
            Block::Missing(m) => {
                let _ = writeln!(s, "<p class=\"missing\"><strong>missing:</strong> {}</p>", escape(m));
            }
        }
    }
    s.push_str("</body></html>\n");
    s
}
