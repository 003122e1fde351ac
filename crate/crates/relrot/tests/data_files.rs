mod common;

use std::path::Path;

use relrot::imageio::{read_color, read_raw_depth, write_raw_depth, write_unit};
use relrot::manifest::{load_manifest, parse_manifest};
use relrot::AppError;
use relrot_core::data::Domain;
use relrot_core::Image;

fn images(dir: &Path, names: &[&str]) {
    let color = Image::from_fn(8, 8, 3, |y, x, c| ((y + x + c) % 5) as f32 / 4.0);
    let depth = Image::from_fn(8, 8, 1, |y, x, _| 500.0 + 10.0 * x as f32 + y as f32);
    for n in names {
        write_unit(&color, &dir.join(format!("{n}_c.png"))).unwrap();
        write_raw_depth(&depth, &dir.join(format!("{n}_d.png"))).unwrap();
    }
}

fn message(e: AppError) -> String {
    assert_eq!(e.exit_code(), 3, "{e}");
    e.to_string()
}

#[test]
fn three_valid_records_load_in_file_order() {
    let dir = tempfile::tempdir().unwrap();
    images(dir.path(), &["a", "b", "c"]);
    let text = "#classes: mug,bowl\na_c.png\ta_d.png\t1\ttrain\nb_c.png\tb_d.png\t0\ttest\n\nc_c.png\tc_d.png\t-\ttrain\n";
    std::fs::write(dir.path().join("m.tsv"), text).unwrap();
    let m = load_manifest(&dir.path().join("m.tsv")).unwrap();
    assert_eq!(m.records.len(), 3);
    assert_eq!(m.classes, ["mug", "bowl"]);
    assert_eq!(m.records.iter().map(|r| r.label).collect::<Vec<_>>(), [Some(1), Some(0), None]);
    assert_eq!(m.records[2].line, 5);
    assert!(!m.depth_colorized);

    let train = m.load_samples(Domain::Target, Some("train")).unwrap();
    assert_eq!(train.len(), 2);
    // raw depth is colourised on load
    assert_eq!(train[0].depth.channels(), 3);
    assert_eq!(train[0].id, "a_c.png");
    assert!(m.load_samples(Domain::Source, None).is_err(), "source records need labels");

    let again = parse_manifest(&m.to_text(), Path::new("m.tsv"), dir.path()).unwrap();
    assert_eq!(again.records.iter().map(|r| (&r.color, r.label)).collect::<Vec<_>>(), m.records.iter().map(|r| (&r.color, r.label)).collect::<Vec<_>>());
}

#[test]
fn broken_records_name_their_line() {
    let dir = tempfile::tempdir().unwrap();
    images(dir.path(), &["a"]);
    let root = dir.path();
    let p = Path::new("m.tsv");
    let cases = [
        ("#classes: x,y\na_c.png\tmissing.png\t0\ttrain\n", "m.tsv:2: dangling image reference missing.png"),
        ("#classes: x,y\n\na_c.png\ta_d.png\t2\ttrain\n", "m.tsv:3: label out of range"),
        ("#classes: x,y\na_c.png\ta_d.png\t0\n", "m.tsv:2: malformed record"),
        ("#classes: x,y\na_c.png\ta_d.png\tone\ttrain\n", "m.tsv:2: malformed label"),
        ("a_c.png\ta_d.png\t0\ttrain\n", "m.tsv:1: record before the #classes header"),
        ("#classes: x,y\n#depth: fancy\n", "m.tsv:2: unknown depth encoding"),
        ("#classes: x\n", "m.tsv:1: #classes needs at least two"),
        ("", "missing #classes header"),
    ];
    for (text, want) in cases {
        let e = message(parse_manifest(text, p, root).unwrap_err());
        assert!(e.contains(want), "{e:?} lacks {want:?}");
    }
    let e = message(load_manifest(&root.join("absent.tsv")).unwrap_err());
    assert!(e.contains("absent.tsv"));
}

#[test]
fn image_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let depth = Image::from_fn(6, 5, 1, |y, x, _| (y * 1000 + x) as f32);
    let p = dir.path().join("d.png");
    write_raw_depth(&depth, &p).unwrap();
    assert_eq!(read_raw_depth(&p).unwrap(), depth);

    let color = Image::from_fn(4, 4, 3, |y, x, c| ((y * 4 + x) * 3 + c) as f32 / 255.0);
    let q = dir.path().join("c.png");
    write_unit(&color, &q).unwrap();
    let back = read_color(&q).unwrap();
    for (a, b) in back.data().iter().zip(color.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    // an 8-bit image is not raw depth
    assert!(read_raw_depth(&q).is_err());
}

#[test]
fn generated_toy_data_reloads_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = common::toy_on_disk(dir.path(), 6, 3);
    let sm = load_manifest(&s).unwrap();
    let tm = load_manifest(&t).unwrap();
    assert!(sm.depth_colorized && tm.depth_colorized);
    assert_eq!(sm.records.len(), 6);
    let samples = tm.load_samples(Domain::Target, None).unwrap();
    assert_eq!(samples[0].size(), (40, 40));
    assert!(samples.iter().all(|x| x.label.is_some()));
}
