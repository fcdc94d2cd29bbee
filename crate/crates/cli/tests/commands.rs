use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use firecli::pgm;
use wildfire_core::raster::{encode_container, header_len, read_container};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn firecli(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_firecli"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("FIRECLI_THREADS", "2")
        .output()
        .expect("spawn firecli");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(args: &[&str]) -> String {
    let r = firecli(args);
    assert_eq!(r.code, 0, "firecli {args:?}\n{}", r.stderr);
    r.stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ingest(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["--seed", "7", "ingest", "--synthetic", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

/// A container plus a briefly trained model on it.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let data = ingest(dir, "d.fpc", &["--count", "6", "--size", "16", "--fire-probability", "1.0"]);
    let out = dir.join("fcn");
    ok(&["--seed", "1", "train-fcn", "--data", s(&data), "--out-dir", s(&out), "--epochs", "8", "--train-all"]);
    (data, out.join("model.fpm"))
}

#[test]
fn synthetic_ingest_writes_container_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = ingest(dir.path(), "s.fpc", &["--count", "8", "--size", "32", "--bands", "B6,B7"]);
    let d = read_container(&data).unwrap();
    assert_eq!(d.len(), 8);
    assert_eq!(d.band_ids(), ["B6", "B7"]);
    assert_eq!((d.patches[0].height, d.patches[0].width), (32, 32));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.fpc.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "ingest");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn raw_directory_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    for (k, name) in ["p0", "p1"].iter().enumerate() {
        let p = raw.join(name);
        fs::create_dir_all(&p).unwrap();
        for (b, band) in ["B6", "B7"].iter().enumerate() {
            let bytes: Vec<u8> = (0..16u16).flat_map(|i| (i * 10 + b as u16 + k as u16).to_le_bytes()).collect();
            fs::write(p.join(format!("{band}.bin")), bytes).unwrap();
        }
        fs::write(p.join("mask.bin"), [0u8, 1].repeat(8)).unwrap();
    }
    let out = dir.path().join("raw.fpc");
    ok(&["--bands", "B6,B7", "ingest", "--raw-dir", s(&raw), "--size", "4", "--out", s(&out)]);
    let d = read_container(&out).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.patches[1].value(0, 1, 1), 10.0 + 1.0 + 1.0);
    assert_eq!(d.patches[0].fire_pixels(), 8);

    fs::write(raw.join("p1").join("mask.bin"), [0u8; 3]).unwrap();
    assert_eq!(firecli(&["--bands", "B6,B7", "ingest", "--raw-dir", s(&raw), "--size", "4", "--out", s(&out)]).code, 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let bad = firecli(&["stats", "--alternative", "sideways", "proportions", "--p1", "0.5", "--n1", "10", "--p2", "0.4", "--n2", "10"]);
    assert_eq!(bad.code, 2, "{}", bad.stderr);
    assert_eq!(firecli(&["no-such-command"]).code, 2);
    assert_eq!(firecli(&["--threshold", "1.5", "stats", "proportions", "--p1", "0.5", "--n1", "10", "--p2", "0.4", "--n2", "10"]).code, 2);

    let missing = d.join("absent");
    assert_eq!(firecli(&["ingest", "--raw-dir", s(&missing), "--out", s(&d.join("x.fpc"))]).code, 3);
    let empty_dir = d.join("empty");
    fs::create_dir(&empty_dir).unwrap();
    assert_eq!(firecli(&["ingest", "--raw-dir", s(&empty_dir), "--out", s(&d.join("x.fpc"))]).code, 4);

    let junk = d.join("junk.fpc");
    fs::write(&junk, b"not a container").unwrap();
    assert_eq!(firecli(&["segment", "--data", s(&junk), "--out-dir", s(&d.join("seg"))]).code, 4);

    // a well-formed header announcing zero patches
    let one = ingest(d, "one.fpc", &["--count", "1", "--size", "8"]);
    let full = read_container(&one).unwrap();
    let mut bytes = encode_container(&full).unwrap();
    bytes.truncate(header_len(full.band_ids()));
    bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
    let zero = d.join("zero.fpc");
    fs::write(&zero, bytes).unwrap();
    let r = firecli(&["segment", "--data", s(&zero), "--out-dir", s(&d.join("seg"))]);
    assert_eq!(r.code, 4, "{}", r.stderr);

    let seg = firecli(&["segment", "--data", s(&one), "--band", "B12", "--out-dir", s(&d.join("seg"))]);
    assert_eq!(seg.code, 4, "{}", seg.stderr);

    let degenerate = firecli(&["stats", "proportions", "--p1", "1", "--n1", "10", "--p2", "1", "--n2", "10"]);
    assert_eq!(degenerate.code, 5, "{}", degenerate.stderr);
}

#[test]
fn stats_commands() {
    let out = ok(&["stats", "proportions", "--p1", "0.9", "--n1", "100", "--p2", "0.9", "--n2", "100"]);
    assert!(out.contains("p = 5.000000e-1"), "{out}");
    let out = ok(&["stats", "--alternative", "less", "welch", "--m1", "1", "--sd1", "0.2", "--n1", "10", "--m2", "1", "--sd2", "0.2", "--n2", "10"]);
    assert!(out.contains("p = 5.000000e-1") && out.contains("(less)"), "{out}");
    let out = ok(&["stats", "proportions", "--p1", "0.95572", "--n1", "1084", "--p2", "0.93266", "--n2", "1084"]);
    assert!(out.contains("p = 9.6"), "{out}");
}

#[test]
fn train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (data, model) = trained(d);
    let fcn_dir = model.parent().unwrap();
    for f in ["train_log.csv", "loss_curve.csv", "manifest.json"] {
        assert!(fcn_dir.join(f).is_file(), "{f}");
    }
    let curve = fs::read_to_string(fcn_dir.join("loss_curve.csv")).unwrap();
    assert!(curve.starts_with("# "));
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 1 + 8);

    let masks = d.join("masks");
    ok(&["predict", "--model", s(&model), "--data", s(&data), "--out-dir", s(&masks)]);
    for i in 0..6 {
        let g = pgm::decode(&fs::read(masks.join(format!("mask_{i:05}.pgm"))).unwrap()).unwrap();
        assert_eq!((g.width, g.height, g.maxval), (16, 16, 255));
        assert!(g.pixels.iter().all(|&v| v == 0 || v == 255));
    }
    assert!(!masks.join("mask_00006.pgm").exists());

    let probs = d.join("probs");
    ok(&["predict", "--model", s(&model), "--data", s(&data), "--out-dir", s(&probs), "--probabilities"]);
    let g = pgm::decode(&fs::read(probs.join("mask_00000.pgm")).unwrap()).unwrap();
    assert_eq!(g.maxval, 65535);
    assert!(g.pixels.iter().any(|&v| v != 0 && v != 65535));

    // false positives cannot grow as the threshold rises
    let mut last_fp = u64::MAX;
    for t in ["0.05", "0.3", "0.5", "0.7", "0.95"] {
        let out = d.join(format!("eval_{t}"));
        ok(&["--threshold", t, "eval", "--model", s(&model), "--data", s(&data), "--out-dir", s(&out)]);
        let table = fs::read_to_string(out.join("confusion.txt")).unwrap();
        let fp: u64 = table.split("FP = ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
        assert!(fp <= last_fp, "threshold {t}: fp {fp} > {last_fp}");
        last_fp = fp;
        let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
        let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[5], t, "{metrics}");
    }

    let other = ingest(d, "other.fpc", &["--count", "2", "--size", "16", "--bands", "B3,B9"]);
    assert_eq!(firecli(&["eval", "--model", s(&model), "--data", s(&other)]).code, 4);
}

#[test]
fn logs_feed_the_welch_test() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = trained(dir.path());
    let log1 = model.parent().unwrap().join("train_log.csv");
    let out2 = dir.path().join("fcn2");
    ok(&["--seed", "2", "train-fcn", "--data", s(&data), "--out-dir", s(&out2), "--epochs", "8", "--train-all"]);
    let out = ok(&["stats", "--alternative", "two-sided", "logs", "--log1", s(&log1), "--log2", s(&out2.join("train_log.csv"))]);
    assert!(out.starts_with("Welch t (two-sided)"), "{out}");
}

#[test]
fn segment_and_eda() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = ingest(d, "c.fpc", &["--count", "5", "--size", "16"]);
    let seg = d.join("seg");
    ok(&["segment", "--data", s(&data), "--out-dir", s(&seg)]);
    let csv = fs::read_to_string(seg.join("contamination.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let v: Vec<usize> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[1] + v[2] + v[3], 16 * 16, "{row}");
    }
    let labels = pgm::decode(&fs::read(seg.join("labels_00004.pgm")).unwrap()).unwrap();
    assert!(labels.pixels.iter().all(|v| [0, 128, 255].contains(v)));

    // a second run is identical even with a different thread count
    let again = d.join("seg2");
    let r = Command::new(env!("CARGO_BIN_EXE_firecli"))
        .args(["segment", "--data", s(&data), "--out-dir", s(&again)])
        .env("FIRECLI_THREADS", "1")
        .output()
        .unwrap();
    assert!(r.status.success());
    assert_eq!(fs::read(again.join("contamination.csv")).unwrap(), csv.as_bytes());

    for (name, extra) in [("eda", vec!["--segments", s(&seg)]), ("eda_fresh", vec![])] {
        let out = d.join(name);
        let mut args = vec!["eda", "--data", s(&data), "--out-dir", s(&out)];
        args.extend(extra);
        ok(&args);
        let table = fs::read_to_string(out.join("fire_vs_cirrus.csv")).unwrap();
        assert_eq!(table.lines().count(), 1 + 5);
        for class in ["dense", "scattered", "none"] {
            let svg = fs::read_to_string(out.join(format!("scatter_{class}.svg"))).unwrap();
            assert!(svg.starts_with("<svg") && svg.matches("<circle").count() == 5, "{class}");
        }
        let reg = fs::read_to_string(out.join("regression.csv")).unwrap();
        assert_eq!(reg.lines().count(), 4);
    }
    assert_eq!(fs::read(d.join("eda/fire_vs_cirrus.csv")).unwrap(), fs::read(d.join("eda_fresh/fire_vs_cirrus.csv")).unwrap());
}

#[test]
fn sensitivity_writes_logs_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = ingest(dir.path(), "sens.fpc", &["--count", "30", "--size", "16", "--bands", "B6,B7,B9"]);
    let out = dir.path().join("sens");
    let stdout = ok(&["sensitivity", "--data", s(&data), "--out-dir", s(&out), "--epochs", "2"]);
    for v in ["benchmark", "control", "experimental"] {
        assert!(out.join(format!("{v}_train_log.csv")).is_file());
        assert!(out.join(format!("{v}_loss_curve.csv")).is_file());
    }
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report, stdout);
    assert!(report.contains("benchmark,2,") && report.contains("control,3,") && report.contains("experimental,3,"), "{report}");

    let none = firecli(&["sensitivity", "--data", s(&data), "--out-dir", s(&out), "--cirrus-threshold", "70000"]);
    assert_eq!(none.code, 4, "{}", none.stderr);
}
