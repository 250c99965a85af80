use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scc_core::calib::read_metrics_summary;
use scc_core::dataset::{self, VerificationSet};
use scc_core::trainer::artifacts::load_scc;
use scc_core::trainer::StageOneArtifacts;

fn scc_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scc-lab"))
        .args(args)
        .env("SCC_LAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = scc_lab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Exit status is nonzero and stderr is exactly one line.
fn fails(args: &[&str]) -> String {
    let out = scc_lab(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic spans lines: {err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

const SMALL: [&str; 6] = ["--per-class", "60", "--test-per-class", "30", "--verify-per-class", "10"];
const QUICK: [&str; 4] = ["--epochs", "6", "--warmup-epochs", "1"];

fn generate(dir: &Path, extra: &[&str]) {
    fs::create_dir_all(dir).unwrap();
    let mut args = vec!["generate", "--out", s(dir)];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args);
}

#[test]
fn generate_writes_splits_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    fs::create_dir_all(&d).unwrap();
    ok(&[
        "generate", "--out", s(&d), "--classes", "5", "--per-class", "400", "--dim", "16", "--noise", "0.4",
        "--noise-model", "uniform", "--seed", "1",
    ]);
    assert_eq!(rows(&d.join("train.csv")), 2000);
    assert_eq!(rows(&d.join("test.csv")), 1000);
    assert_eq!(rows(&d.join("verification.csv")), 500);
    let manifest = fs::read_to_string(d.join("manifest.txt")).unwrap();
    assert!(manifest.contains("manifest.command = generate"));
    assert!(manifest.contains("noise = 0.4"));
}

#[test]
fn zero_noise_verifies_every_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    generate(&d, &["--noise", "0"]);
    let v = VerificationSet::load(&d.join("verification.csv")).unwrap();
    assert!(!v.is_empty());
    assert!(v.targets().iter().all(|&t| t == 1.0));
}

#[test]
fn generate_into_missing_dir_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let err = fails(&["generate", "--out", s(&tmp.path().join("absent"))]);
    assert!(err.contains("does not exist"), "{err}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    fs::create_dir_all(&d).unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "classes = 3\nper_class = 20\ntest_per_class = 5\nverify_per_class = 4\ndim = 4\n").unwrap();
    ok(&["generate", "--config", s(&cfg), "--out", s(&d), "--per-class", "30"]);
    let train = dataset::load(&d.join("train.csv")).unwrap();
    assert_eq!(train.len(), 90);
    assert_eq!(train.dimension, 4);

    fs::write(&cfg, "clases = 3\n").unwrap();
    let err = fails(&["generate", "--config", s(&cfg), "--out", s(&d)]);
    assert!(err.contains("clases"), "{err}");
}

#[test]
fn stage_commands_chain_together() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    let p = tmp.path().join("pre");
    let a = tmp.path().join("art");
    let f = tmp.path().join("ft");
    generate(&d, &[]);

    let mut args = vec!["pretrain", "--data", s(&d), "--out", s(&p)];
    args.extend(QUICK);
    ok(&args);
    assert_eq!(rows(&p.join("pretrain_log.csv")), 6);

    let ckpt = p.join("pretrain.ckpt");
    ok(&["extract", "--data", s(&d), "--checkpoint", s(&ckpt), "--out", s(&a), "--gba", "--k", "5"]);
    let train = dataset::load(&d.join("train.csv")).unwrap();
    let art = StageOneArtifacts::load(&a, "").unwrap();
    let scc = load_scc(&a.join("scc.csv")).unwrap();
    for (i, s) in train.samples.iter().enumerate() {
        assert_eq!(scc[i], art.self_labels.get(i, s.web_label));
    }
    assert!(a.join("scc_gba.csv").exists());
    assert!(a.join("graph.csv").exists());

    let mut args = vec!["finetune", "--data", s(&d), "--artifacts", s(&a), "--out", s(&f), "--sweep-c"];
    args.extend(QUICK);
    ok(&args);
    assert_eq!(rows(&f.join("constant_sweep.csv")), 11);
    assert_eq!(rows(&f.join("finetune_log.csv")), 6);

    let mut args = vec!["finetune", "--data", s(&d), "--artifacts", s(&a), "--gba", "--out", s(&f)];
    args.extend(QUICK);
    ok(&args);
}

#[test]
fn pretrain_is_deterministic_and_accepts_mixup() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    generate(&d, &[]);
    let mut ckpts = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let mut args = vec!["pretrain", "--data", s(&d), "--out", s(&out), "--seed", "4"];
        args.extend(QUICK);
        ok(&args);
        ckpts.push(fs::read(out.join("pretrain.ckpt")).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);

    let out = tmp.path().join("mix");
    let mut args = vec!["pretrain", "--data", s(&d), "--out", s(&out), "--reg", "mixup", "--mixup-alpha", "0.2"];
    args.extend(QUICK);
    ok(&args);
    assert!(fs::read_to_string(out.join("manifest.txt")).unwrap().contains("regularizer = mixup"));
}

#[test]
fn bad_inputs_give_one_line_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    generate(&d, &[]);
    let out = tmp.path().join("o");
    let err = fails(&["extract", "--data", s(&d), "--checkpoint", s(&tmp.path().join("no.ckpt")), "--out", s(&out)]);
    assert!(err.contains("no.ckpt"), "{err}");
    let err = fails(&["finetune", "--data", s(&d), "--artifacts", s(&tmp.path().join("gone")), "--out", s(&out)]);
    assert!(err.contains("gone"), "{err}");
    fails(&["pretrain", "--data", s(&d), "--out", s(&out), "--reg", "bogus"]);
    fails(&["pretrain", "--data", s(&d), "--out", s(&out), "--epochs", "3", "--warmup-epochs", "3"]);
    fails(&["frobnicate"]);
    fails(&["generate", "--per-class", "lots"]);
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_scc-lab"))
        .args(["generate", "--out", "."])
        .env("SCC_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SCC_LAB_THREADS"));
}

#[test]
fn evaluate_scores_each_provider() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    generate(&d, &[]);
    let train = dataset::load(&d.join("train.csv")).unwrap();
    let v = VerificationSet::load(&d.join("verification.csv")).unwrap();

    // perfect confidences: c = v on verified samples
    let mut perfect = vec![0.5; train.len()];
    for e in &v.entries {
        perfect[e.id] = if e.v { 1.0 } else { 0.0 };
    }
    let write = |name: &str, c: &[f64]| {
        let path = tmp.path().join(format!("{name}.csv"));
        scc_core::trainer::artifacts::save_scc(c, &path).unwrap();
        format!("{name}={}", path.display())
    };
    let p = write("perfect", &perfect);
    let h = write("half", &vec![0.5; train.len()]);
    let o = write("ones", &vec![1.0; train.len()]);

    let out = tmp.path().join("eval");
    ok(&[
        "evaluate", "--data", s(&d), "--out", s(&out), "--scc", &p, "--scc", &h, "--scc", &o, "--diagram-bins", "5",
    ]);
    let rows_ = read_metrics_summary(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows_.len(), 3);
    assert_eq!((rows_[0].mse, rows_[0].ece, rows_[0].oce), (0.0, 0.0, 0.0));
    assert!(rows_[0].sav_top1.is_none());
    assert_eq!(rows(&out.join("reliability_perfect.csv")), 5);
    assert_eq!(rows(&out.join("reliability_ones.csv")), 5);

    ok(&["evaluate", "--data", s(&d), "--out", s(&out), "--scc", &p, "--diagram-bins", "12"]);
    assert_eq!(rows(&out.join("reliability_perfect.csv")), 12);
    fails(&["evaluate", "--data", s(&d), "--out", s(&out)]);
}

#[test]
fn pipeline_writes_summary_and_replays_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("one");
    let mut args = vec!["pipeline", "--out", s(&first), "--gba", "--k", "5", "--providers", "vanilla,entropy"];
    args.extend(SMALL);
    args.extend(QUICK);
    ok(&args);
    let metrics = read_metrics_summary(&first.join("metrics.csv")).unwrap();
    let names: Vec<&str> = metrics.iter().map(|m| m.provider.as_str()).collect();
    assert_eq!(names, ["vanilla", "vanilla_gba", "entropy"]);
    assert!(metrics.iter().all(|m| m.sav_top1.is_some()));

    let second = tmp.path().join("two");
    let manifest = first.join("manifest.txt");
    ok(&["pipeline", "--config", s(&manifest), "--out", s(&second)]);
    assert_eq!(
        fs::read(first.join("metrics.csv")).unwrap(),
        fs::read(second.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("accuracy.csv")).unwrap(),
        fs::read(second.join("accuracy.csv")).unwrap()
    );
}
