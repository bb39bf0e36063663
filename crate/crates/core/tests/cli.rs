use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use prdl_core::ingest::{LabelMap, Manifest, PartMask};
use prdl_core::PartLabel;

fn prdl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prdl")).args(args).current_dir(cwd).output().expect("spawn prdl")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstdout:\n{}\nstderr:\n{}", o.status, String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const BUNDLE: [&str; 7] = [
    "model.txt",
    "truth.json",
    "label_map.png",
    "landmarks.txt",
    "manifest.txt",
    "annotate.png",
    "config.toml",
];

#[test]
fn gen_toy_is_byte_reproducible_and_ingestible() {
    let d = tempfile::tempdir().unwrap();
    ok(&prdl(&["gen-toy", "--seed", "7", "--out", "a"], d.path()));
    ok(&prdl(&["gen-toy", "--seed", "7", "--out", "b"], d.path()));
    for f in BUNDLE {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
    let map = LabelMap::read(&d.path().join("a/label_map.png")).unwrap();
    let manifest = Manifest::load(&d.path().join("a/manifest.txt")).unwrap();
    assert!(map.to_point_sets(&manifest).unwrap().total_points() > 0);
    assert!(fs::read_to_string(d.path().join("a/model.txt")).unwrap().contains("# seed 7"));
    assert_eq!(json(&d.path().join("a/truth.json"))["seed"], 7);
    assert!(fs::read_to_string(d.path().join("a/landmarks.txt")).unwrap().contains("# seed 7"));
}

#[test]
fn gen_toy_into_unwritable_location_fails() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("file"), "x").unwrap();
    let o = prdl(&["gen-toy", "--out", "file/sub"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn fit_on_toy_bundle_recovers_parts() {
    let d = tempfile::tempdir().unwrap();
    ok(&prdl(&["gen-toy", "--seed", "7", "--out", "toy"], d.path()));
    let o = prdl(&["fit", "--config", "toy/config.toml", "--svg"], d.path());
    ok(&o);
    let out = d.path().join("toy/fit");
    let r = json(&out.join("report.json"));
    assert_eq!(r["seed"], 7);
    assert_eq!(r["weights"]["lambda_lmk"], 0.0);
    assert!(r["iou"]["mean"].as_f64().unwrap() >= 0.90, "{}", r["iou"]);
    assert!(fs::read_to_string(out.join("curve.csv")).unwrap().lines().count() > 2);
    assert!(out.join("overlay.svg").exists() && out.join("curve.svg").exists());
}

#[test]
fn fit_reports_are_byte_identical_across_runs() {
    let d = tempfile::tempdir().unwrap();
    ok(&prdl(&["gen-toy", "--seed", "3", "--out", "toy"], d.path()));
    for o in ["r1", "r2"] {
        ok(&prdl(&["fit", "--config", "toy/config.toml", "--max-iters", "150", "--out", o], d.path()));
    }
    assert_eq!(fs::read(d.path().join("r1/report.json")).unwrap(), fs::read(d.path().join("r2/report.json")).unwrap());
}

#[test]
fn fit_weight_presets_reach_the_report() {
    let d = tempfile::tempdir().unwrap();
    ok(&prdl(&["gen-toy", "--seed", "1", "--out", "toy"], d.path()));
    for (preset, zero) in [("prdl-only", true), ("default", false)] {
        ok(&prdl(&["fit", "--config", "toy/config.toml", "--weights", preset, "--max-iters", "3", "--out", preset], d.path()));
        let r = json(&d.path().join(preset).join("report.json"));
        assert_eq!(r["weights"]["lambda_lmk"].as_f64().unwrap() == 0.0, zero, "{preset}");
    }
}

#[test]
fn fit_with_missing_label_map_exits_one() {
    let d = tempfile::tempdir().unwrap();
    ok(&prdl(&["gen-toy", "--seed", "1", "--out", "toy"], d.path()));
    let o = prdl(&["fit", "--config", "toy/config.toml", "--label-map", "nope.png"], d.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("file not found") && err.contains("nope.png"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.toml"), "jobs = 1\nbogus = 3\n").unwrap();
    let o = prdl(&["grad-check", "--config", "c.toml", "--instances", "1"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn dump_config_parses_back() {
    let d = tempfile::tempdir().unwrap();
    let o = prdl(&["--dump-config"], d.path());
    ok(&o);
    fs::write(d.path().join("c.toml"), &o.stdout).unwrap();
    ok(&prdl(&["grad-check", "--config", "c.toml", "--instances", "1"], d.path()));
}

#[test]
fn grad_check_lists_every_check_and_catches_a_sign_flip() {
    let d = tempfile::tempdir().unwrap();
    let o = prdl(&["grad-check", "--instances", "3", "--out", "gc.txt"], d.path());
    ok(&o);
    let table = fs::read_to_string(d.path().join("gc.txt")).unwrap();
    for name in prdl_core::gradcheck::CHECKS {
        assert!(table.lines().any(|l| l.split_whitespace().next() == Some(name)), "{name} missing");
    }
    let o = prdl(&["grad-check", "--instances", "3", "--inject-sign-flip", "prdl"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn compare_writes_one_row_per_loss() {
    let d = tempfile::tempdir().unwrap();
    ok(&prdl(&["compare", "--seeds", "1", "--max-iters", "20", "--out", "cmp"], d.path()));
    let csv = fs::read_to_string(d.path().join("cmp/comparison.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    let losses = prdl_core::bench::ScenarioSpec::toy().losses;
    assert_eq!(rows.len(), losses.len());
    for l in &losses {
        assert!(rows.iter().any(|r| r.contains(l.name())), "{}", l.name());
    }
    assert!(d.path().join("cmp/curves.svg").exists());
    assert!(csv.starts_with("# seeds=[0]"));
}

#[test]
fn ablate_writes_four_variants() {
    let d = tempfile::tempdir().unwrap();
    ok(&prdl(&["ablate", "--seeds", "1", "--max-iters", "10", "--out", "abl"], d.path()));
    let j = json(&d.path().join("abl/ablation.json"));
    assert_eq!(j["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn annotate_round_trip_recovers_parts() {
    let d = tempfile::tempdir().unwrap();
    ok(&prdl(&["gen-toy", "--seed", "7", "--out", "toy"], d.path()));
    let o = prdl(
        &["annotate", "--config", "toy/config.toml", "--label-map", "toy/annotate.png", "--seed", "7", "--out", "ann.txt"],
        d.path(),
    );
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("8/8 parts identical"), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(fs::read_to_string(d.path().join("ann.txt")).unwrap().starts_with("# seed 7"));
}

#[test]
fn descriptor_of_one_pixel_part_is_a_radial_field() {
    let d = tempfile::tempdir().unwrap();
    let mut map = LabelMap::new(9, 7).unwrap();
    let mut m = PartMask::new(9, 7).unwrap();
    m.set(2, 3, true);
    map.paint(&m, PartLabel::Nose.code()).unwrap();
    map.write(&d.path().join("one.png")).unwrap();
    ok(&prdl(&["descriptor", "--label-map", "one.png", "--part", "nose", "--out", "d.csv"], d.path()));
    let csv = fs::read_to_string(d.path().join("d.csv")).unwrap();
    let mut n = 0;
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.trim().parse().unwrap()).collect();
        let r = ((v[0] - 2.0).powi(2) + (v[1] - 3.0).powi(2)).sqrt();
        for f in &v[2..] {
            assert!((f - r).abs() < 1e-9, "{line}");
        }
        n += 1;
    }
    assert_eq!(n, 63);
    ok(&prdl(&["descriptor", "--label-map", "one.png", "--part", "nose", "--out", "d.pgm", "--seed", "4"], d.path()));
    let pgm = fs::read(d.path().join("d.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n# seed 4\n"));

    let o = prdl(&["descriptor", "--label-map", "one.png", "--part", "mouth", "--out", "e.csv"], d.path());
    assert_eq!(o.status.code(), Some(1));
}
