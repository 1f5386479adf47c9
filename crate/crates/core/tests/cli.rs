use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phash::dataset::LabeledDataset;
use phash::encoder::Encoder;
use phash::retrieval::{evaluate, EvalOptions, PackedCodes, SignCodes};
use tempfile::TempDir;

fn phash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phash"))
        .args(args)
        .env("PHASH_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = phash(args);
    assert!(
        out.status.success(),
        "phash {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: TempDir::new().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Small training and query sets.
    fn synth(&self) -> (PathBuf, PathBuf) {
        let (train, queries) = (self.path("train.phds"), self.path("queries.phds"));
        ok(&[
            "synth", "--dataset", s(&train), "--queries", s(&queries), "--sizes", "30,20,10",
            "--queries-per-class", "5", "--seed", "3",
        ]);
        (train, queries)
    }

    fn trained(&self) -> (PathBuf, PathBuf, PathBuf) {
        let (train, queries) = self.synth();
        let model = self.path("model.phmd");
        ok(&[
            "train", "--dataset", s(&train), "--model", s(&model), "--epochs", "3", "--batch", "16",
            "--bits", "16",
        ]);
        (train, queries, model)
    }
}

#[test]
fn synth_histogram_and_byte_determinism() {
    let f = Fixture::new();
    let (a, b) = (f.path("a.csv"), f.path("b.csv"));
    for p in [&a, &b] {
        ok(&["synth", "--dataset", s(p), "--sizes", "200,80,20", "--seed", "9"]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = LabeledDataset::load(&a).unwrap();
    assert_eq!(ds.len(), 300);
    let mut hist = [0usize; 3];
    for item in ds.items() {
        hist[item.labels[0] as usize] += 1;
    }
    assert_eq!(hist, [200, 80, 20]);

    let c = f.path("c.csv");
    ok(&["synth", "--dataset", s(&c), "--sizes", "200,80,20", "--seed", "10"]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn synth_class_means_respect_separation() {
    let f = Fixture::new();
    let path = f.path("d.csv");
    ok(&[
        "synth", "--dataset", s(&path), "--sizes", "40,15,5", "--noise", "2.5", "--separation", "3.5",
        "--dims", "6", "--seed", "1",
    ]);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut sums: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; 6], 0.0); 3];
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let class: usize = cols[1].parse().unwrap();
        for (acc, v) in sums[class].0.iter_mut().zip(&cols[2..]) {
            *acc += v.parse::<f64>().unwrap();
        }
        sums[class].1 += 1.0;
    }
    let means: Vec<Vec<f64>> = sums.iter().map(|(v, n)| v.iter().map(|x| x / n).collect()).collect();
    for a in 0..3 {
        for b in a + 1..3 {
            let d: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!(d >= 3.5 - 1e-6, "classes {a},{b} only {d} apart");
        }
    }
}

#[test]
fn synth_rejects_single_cluster() {
    let f = Fixture::new();
    let out = phash(&["synth", "--dataset", s(&f.path("x.csv")), "--sizes", "50"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 clusters"));
}

#[test]
fn train_smoke_writes_checkpoint_and_log() {
    let f = Fixture::new();
    let (train, _) = f.synth();
    let (model, log) = (f.path("m.phmd"), f.path("log.csv"));
    ok(&[
        "train", "--dataset", s(&train), "--model", s(&model), "--log", s(&log), "--epochs", "2",
        "--bits", "12", "--alpha-mode", "focal-pt", "--weight-grad", "full", "--seed", "4",
    ]);
    let enc = Encoder::load(&model).unwrap();
    assert_eq!(enc.spec().code_bits, 12);
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,mean_pair_loss,mean_quant_loss,mean_quant_error,skipped_pairs"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn train_is_deterministic_and_variants_differ() {
    let f = Fixture::new();
    let (train, _) = f.synth();
    let run = |name: &str, extra: &[&str]| {
        let model = f.path(name);
        let mut args = vec!["train", "--dataset", s(&train), "--model", s(&model), "--epochs", "2"];
        args.extend_from_slice(extra);
        ok(&args);
        std::fs::read(model).unwrap()
    };
    let a = run("a.phmd", &["--deterministic"]);
    let b = run("b.phmd", &["--threads", "3"]);
    assert_eq!(a, b);
    assert_ne!(a, run("w.phmd", &["--variant", "dph-w"]));
}

#[test]
fn config_file_precedence_and_typos() {
    let f = Fixture::new();
    let (train, _) = f.synth();
    let cfg = f.path("run.cfg");
    std::fs::write(&cfg, "# shorter codes\nbits = 8\nepochs = 1\n").unwrap();
    let model = f.path("m.phmd");
    ok(&["--config", s(&cfg), "train", "--dataset", s(&train), "--model", s(&model)]);
    assert_eq!(Encoder::load(&model).unwrap().spec().code_bits, 8);
    ok(&["--config", s(&cfg), "train", "--dataset", s(&train), "--model", s(&model), "--bits", "24"]);
    assert_eq!(Encoder::load(&model).unwrap().spec().code_bits, 24);

    std::fs::write(&cfg, "bits = 8\ngama = 2\n").unwrap();
    let out = phash(&["--config", s(&cfg), "train", "--dataset", s(&train), "--model", s(&model)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("gama"), "{err}");
}

#[test]
fn missing_input_fails_with_message() {
    let f = Fixture::new();
    let out = phash(&["train", "--dataset", s(&f.path("nope.csv")), "--model", s(&f.path("m"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such file"));
}

#[test]
fn encode_equals_sign_of_forward() {
    let f = Fixture::new();
    let (train, _, model) = f.trained();
    let codes = f.path("db.phcb");
    ok(&["encode", "--dataset", s(&train), "--model", s(&model), "--codes", s(&codes)]);
    let packed = PackedCodes::load(&codes).unwrap();
    let ds = LabeledDataset::load(&train).unwrap();
    assert_eq!(packed.len(), ds.len());
    assert_eq!(packed.ids(), ds.ids().as_slice());

    let enc = Encoder::load(&model).unwrap();
    let z = enc.encode(&ds.feature_matrix(), ds.len()).unwrap();
    let unpacked = packed.unpack();
    for r in 0..ds.len() {
        let want: Vec<i8> = z.row(r).iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect();
        assert_eq!(unpacked.row(r), want.as_slice(), "row {r}");
    }

    let again = f.path("db2.phcb");
    ok(&["encode", "--dataset", s(&train), "--model", s(&model), "--codes", s(&again)]);
    assert_eq!(std::fs::read(&codes).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn eval_report_matches_library() {
    let f = Fixture::new();
    let (train, queries, model) = f.trained();
    let (db, q) = (f.path("db.phcb"), f.path("q.phcb"));
    ok(&["encode", "--dataset", s(&train), "--model", s(&model), "--codes", s(&db)]);
    ok(&["encode", "--dataset", s(&queries), "--model", s(&model), "--codes", s(&q)]);
    let report = f.path("report.json");
    ok(&["eval", "--queries", s(&q), "--codes", s(&db), "--report", s(&report), "--map-at", "20"]);

    let expected = evaluate(
        &PackedCodes::load(&q).unwrap(),
        &PackedCodes::load(&db).unwrap(),
        &EvalOptions::for_bits(16, 20),
    )
    .unwrap();
    let got: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let want: serde_json::Value = serde_json::from_str(&expected.to_json()).unwrap();
    assert_eq!(got, want);

    let pr = std::fs::read_to_string(f.path("report_pr.csv")).unwrap();
    assert!(pr.starts_with("radius,recall,precision\n"));
    assert_eq!(pr.lines().count(), 1 + 17);
    let pn = std::fs::read_to_string(f.path("report_p_at_n.csv")).unwrap();
    assert!(pn.starts_with("n,precision\n"));
}

#[test]
fn self_retrieval_with_unique_labels_is_perfect() {
    let f = Fixture::new();
    let n = 12;
    let bits = 10;
    let signs: Vec<i8> = (0..n * bits)
        .map(|k| if (k / bits) >> (k % bits) & 1 == 1 { 1 } else { -1 })
        .collect();
    let ids = (0..n).map(|i| format!("u{i}")).collect();
    let labels = (0..n as u32).map(|i| vec![i]).collect();
    let codes = PackedCodes::pack(&SignCodes::new(n, bits, signs).unwrap(), ids, labels).unwrap();
    let path = f.path("u.phcb");
    codes.save(&path).unwrap();
    let report = f.path("self.json");
    ok(&["eval", "--queries", s(&path), "--codes", s(&path), "--report", s(&report), "--include-self"]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["map_at_k"].as_f64().unwrap(), 1.0);
}

#[test]
fn eval_names_byte_offset_of_corruption() {
    let f = Fixture::new();
    let (train, _, model) = f.trained();
    let db = f.path("db.phcb");
    ok(&["encode", "--dataset", s(&train), "--model", s(&model), "--codes", s(&db)]);
    let bytes = std::fs::read(&db).unwrap();
    let broken = f.path("broken.phcb");
    std::fs::write(&broken, &bytes[..bytes.len() - 3]).unwrap();
    let out = phash(&["eval", "--queries", s(&broken), "--codes", s(&db), "--report", s(&f.path("r.json"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("byte offset"), "{err}");
}

#[test]
fn ablate_table_shape_and_determinism() {
    let f = Fixture::new();
    let (train, queries) = f.synth();
    let run = |name: &str| {
        let report = f.path(name);
        ok(&[
            "ablate", "--dataset", s(&train), "--queries", s(&queries), "--bits", "8,16", "--epochs", "2",
            "--report", s(&report),
        ]);
        std::fs::read_to_string(report).unwrap()
    };
    let table = run("a.csv");
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,8 bits,16 bits");
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["DPH", "DPH-F", "DPH-W", "DPH-Q"]);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 3));
    assert_eq!(table, run("b.csv"));
}
