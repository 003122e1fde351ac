mod common;

use common::{relrot, s, toy_on_disk, write_config, TINY_CONFIG};
use relrot::metrics::read_metrics;

fn ok(out: std::process::Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_from_toy_data_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("spec.toml"), "samples-per-domain = 12\nimage-size = 40\nseed = 5\n").unwrap();
    let data = d.join("toy");
    ok(relrot(&["gen-toy", "--spec", s(&d.join("spec.toml")), "--out", s(&data)]));
    let (src, tgt) = (data.join("source.tsv"), data.join("target.tsv"));
    assert!(src.is_file() && tgt.is_file());

    let cfg = write_config(d, TINY_CONFIG);
    let run = d.join("run");
    ok(relrot(&["train", "--config", s(&cfg), "--source", s(&src), "--target", s(&tgt), "--out", s(&run), "--seed", "3"]));
    for f in ["metrics.csv", "timing.csv", "config.resolved", "checkpoint.bin"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert!(std::fs::read_to_string(run.join("config.resolved")).unwrap().contains("seed = 3"));

    let ck = run.join("checkpoint.bin");
    let eval: serde_json::Value = serde_json::from_str(&ok(relrot(&["eval", "--checkpoint", s(&ck), "--data", s(&tgt)]))).unwrap();
    let acc = eval["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(eval["samples"], 12);

    ok(relrot(&["analyze", "saliency", "--checkpoint", s(&ck), "--data", s(&tgt), "--n", "3", "--out", s(&run.join("saliency"))]));
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("saliency/saliency.json")).unwrap()).unwrap();
    assert_eq!(side["samples"].as_array().unwrap().len(), 3);

    let e = relrot(&["analyze", "embed", "--checkpoint", s(&ck), "--source", s(&src), "--target", s(&tgt), "--out", s(&run.join("embed"))]);
    // 24 points are too few for the default perplexity
    assert_eq!(e.status.code(), Some(3));

    let out = ok(relrot(&["report", "--run", s(&run)]));
    assert!(out.contains("report.md"));
    let md = std::fs::read_to_string(run.join("report.md")).unwrap();
    for h in ["## Loss curves", "## Accuracy", "## Saliency", "## Embedding"] {
        assert!(md.contains(h), "{h}");
    }
    assert!(md.contains("saliency/saliency.png"));
    assert!(md.contains("> **missing:** embed/embedding.png not found"));

    // every accuracy cell is transcribed verbatim from metrics.csv
    let rows = read_metrics(&run.join("metrics.csv")).unwrap();
    for r in rows.iter().filter(|r| !r[7].is_empty()) {
        let line = format!("| {} | {} | {} | {} | {} |", r[0], r[6], r[7], r[8], r[9]);
        assert!(md.contains(&line), "{line} not in report");
    }

    ok(relrot(&["report", "--run", s(&run), "--format", "html"]));
    let html = std::fs::read_to_string(run.join("report.html")).unwrap();
    assert!(html.contains("<svg") && html.contains("<table"));
}

#[test]
fn embedding_figure_on_enough_points() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (src, tgt) = toy_on_disk(&d.join("toy"), 50, 1);
    let mut cfg = TINY_CONFIG.replace("epochs = 2", "epochs = 1");
    cfg.push('\n');
    let cfg = write_config(d, &cfg);
    let run = d.join("run");
    ok(relrot(&["train", "--config", s(&cfg), "--source", s(&src), "--target", s(&tgt), "--out", s(&run)]));
    let out = ok(relrot(&[
        "analyze", "embed", "--checkpoint", s(&run.join("checkpoint.bin")), "--source", s(&src), "--target", s(&tgt), "--out", s(&run.join("embed")),
    ]));
    assert!(out.contains("separability"));
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("embed/embedding.json")).unwrap()).unwrap();
    assert_eq!(side["points"].as_array().unwrap().len(), 100);
    assert!(run.join("embed/embedding.png").is_file());
}

#[test]
fn dump_rotations_writes_grid_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("rot.png");
    let out = ok(relrot(&["dump-rotations", "--n", "6", "--seed", "2", "--out", s(&png)]));
    assert_eq!(out.lines().count(), 6);
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(png.with_extension("json")).unwrap()).unwrap();
    for e in side.as_array().unwrap() {
        let (j, k, z) = (e["j"].as_u64().unwrap(), e["k"].as_u64().unwrap(), e["z"].as_u64().unwrap());
        assert_eq!(z, (k + 4 - j) % 4);
    }
    assert!(png.is_file());
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (src, tgt) = toy_on_disk(&d.join("toy"), 4, 0);
    let out = d.join("run");

    let bad = write_config(d, "method = \"teleportation\"\n");
    let r = relrot(&["train", "--config", s(&bad), "--source", s(&src), "--target", s(&tgt), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let bad = write_config(d, "lr = -1.0\n");
    let r = relrot(&["train", "--config", s(&bad), "--source", s(&src), "--target", s(&tgt), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let good = write_config(d, TINY_CONFIG);
    let r = relrot(&["train", "--config", s(&good), "--source", s(&d.join("nope.tsv")), "--target", s(&tgt), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nope.tsv"));

    let r = relrot(&["eval", "--checkpoint", s(&d.join("missing.bin")), "--data", s(&tgt)]);
    assert_eq!(r.status.code(), Some(3));

    std::fs::write(d.join("spec.toml"), "samples_per_domain = 3\n").unwrap();
    let r = relrot(&["gen-toy", "--spec", s(&d.join("spec.toml")), "--out", s(&d.join("t2"))]);
    assert_eq!(r.status.code(), Some(2), "unknown keys are rejected");
}
