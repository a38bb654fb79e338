use std::path::Path;
use std::process::{Command, Output};

fn rectlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rectlab")).args(args).output().expect("binary runs")
}

fn atom_lines(path: &Path) -> usize {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count() - 1
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn gen_counts_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let seg = dir.path().join("seg.txt");
    let o = rectlab(&["gen", "--out", seg.to_str().unwrap(), "segment", "--spacing", "0.001"]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(atom_lines(&seg), 2001);
    let cantor = dir.path().join("cantor.txt");
    let o = rectlab(&["gen", "--out", cantor.to_str().unwrap(), "cantor", "--level", "4"]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(atom_lines(&cantor), 256);
    assert!(dir.path().join("manifest.toml").exists());
}

#[test]
fn seeded_generation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let o = rectlab(&["gen", "--out", p.to_str().unwrap(), "perturbed", "--spacing", "0.01", "--eta", "0.05", "--seed", seed]);
        assert!(o.status.success(), "{}", text(&o));
        std::fs::read(p).unwrap()
    };
    let a = read("a.txt", "7");
    assert_eq!(a, read("b.txt", "7"));
    assert_ne!(a, read("c.txt", "8"));
}

const SMALL: &str = r#"
[measure.generate.lipschitz-graph]
a = -60.0
b = 60.0
spacing = 0.1

[measure.generate.lipschitz-graph.profile.bump]
slope = 0.005
width = 0.5

[construct]
verify_stride = 0
"#;

#[test]
fn construct_outputs_are_reproducible_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let mut manifests = Vec::new();
    for name in ["one", "two"] {
        let out = dir.path().join(name);
        let o = rectlab(&["construct", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", text(&o));
        let m: toml::Value = toml::from_str(&std::fs::read_to_string(out.join("manifest.toml")).unwrap()).unwrap();
        manifests.push((m["config_hash"].clone(), m["outputs"].clone()));
    }
    assert_eq!(manifests[0], manifests[1]);
    let outputs = manifests[0].1.as_table().unwrap();
    for f in ["partition.csv", "graph.txt", "report.txt", "overlay.svg"] {
        assert!(outputs.contains_key(f), "{f} missing from manifest");
    }

    let one = dir.path().join("one");
    let o = rectlab(&["report", one.to_str().unwrap()]);
    let t = text(&o);
    assert!(o.status.success(), "{t}");
    assert!(t.contains("output.partition.csv = ok"), "{t}");
    assert!(t.contains("atoms.Z = "), "{t}");
    std::fs::write(one.join("graph.txt"), "tampered\n").unwrap();
    let t = text(&rectlab(&["report", one.to_str().unwrap()]));
    assert!(t.contains("output.graph.txt = modified"), "{t}");
}

#[test]
fn alpha_csv_rows_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mu = dir.path().join("mu.txt");
    assert!(rectlab(&["gen", "--out", mu.to_str().unwrap(), "graph", "--a", "-5", "--b", "5", "--spacing", "0.02", "--profile", "wave", "--slope", "0.1", "--width", "0.3"])
        .status
        .success());
    let out = dir.path().join("alpha");
    let o = rectlab(&["alpha", "--measure", mu.to_str().unwrap(), "--scales", "3", "--out", out.to_str().unwrap(), "--svg"]);
    assert!(o.status.success(), "{}", text(&o));
    let bytes = std::fs::read(out.join("alpha.csv")).unwrap();
    let mut rd = csv::Reader::from_reader(bytes.as_slice());
    let header = rd.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(&header).unwrap();
    for r in &rows {
        let v: f64 = r[header.iter().position(|h| h == "value").unwrap()].parse().unwrap();
        assert!(v.is_finite() && v >= 0.0);
        wr.write_record(r).unwrap();
    }
    assert_eq!(wr.into_inner().unwrap(), bytes);
    assert!(std::fs::read_to_string(out.join("alpha.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn kernel_series_suite_passes() {
    let o = rectlab(&["verify", "kernel-series"]);
    let t = text(&o);
    assert_eq!(o.status.code(), Some(0), "{t}");
    assert!(t.contains("c_{3,3} = -7"), "{t}");
}

#[test]
fn empty_measure_passes_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let o = rectlab(&["verify", "graph-pipeline", "--measure", empty.to_str().unwrap()]);
    let t = text(&o);
    assert_eq!(o.status.code(), Some(0), "{t}");
    assert!(t.contains("warning: empty measure"), "{t}");
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, format!("{SMALL}\n[stop]\neps = 0.5\n")).unwrap();
    let o = rectlab(&["construct", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("hierarchy"), "{}", text(&o));
    let o = rectlab(&["construct", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
