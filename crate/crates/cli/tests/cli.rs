use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qpmseg::eval::{color_counts, Confusion, EvalReport, RgbImage, MATRIX_HEADER};
use qpmseg::{qts, Tensor};

const MODEL: &str = "n_stages = 4\nwidths = 4,4,8,8\nblocks_per_stage = 1\nmha_heads = 2\n";
const TRAIN: &str = "epochs = 2\nbatch_size = 2\npatch_size = 16\ndtype = f64\n";

fn qpmseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpmseg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = qpmseg(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    qpmseg(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_tiny(dir: &Path, seed: &str) -> PathBuf {
    let data = dir.join(format!("data{seed}"));
    ok(&["synth", "--out", s(&data), "--n", "3", "--n-test", "2", "--size", "16", "--phase-snr", "2", "--seed", seed]);
    data
}

fn configs(dir: &Path) -> (PathBuf, PathBuf) {
    let (m, t) = (dir.join("model.txt"), dir.join("train.txt"));
    fs::write(&m, MODEL).unwrap();
    fs::write(&t, TRAIN).unwrap();
    (m, t)
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn version_names_engine() {
    let v = ok(&["--version"]);
    assert!(v.contains(qpmseg::VERSION) && v.contains("f64"), "{v}");
}

#[test]
fn synth_writes_splits_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_tiny(dir.path(), "5");
    assert_eq!(fs::read_dir(a.join("train")).unwrap().count(), 3);
    assert_eq!(fs::read_dir(a.join("test")).unwrap().count(), 2);
    assert!(a.join("effective_config.txt").is_file());
    let b = dir.path().join("again");
    ok(&["synth", "--out", s(&b), "--n", "3", "--n-test", "2", "--size", "16", "--phase-snr", "2", "--seed", "5"]);
    assert_eq!(files(&a), files(&b));

    assert_eq!(code(&["synth", "--out", s(&dir.path().join("z")), "--n", "0"]), 2);
    assert_eq!(code(&["synth", "--out", s(&a), "--n", "3", "--size", "16"]), 2);
    ok(&["synth", "--out", s(&a), "--n", "2", "--n-test", "0", "--size", "16", "--force"]);
    assert_eq!(fs::read_dir(a.join("train")).unwrap().count(), 2);
    assert!(!a.join("test").exists());
    assert_eq!(code(&["synth", "--out", s(&b), "--confluence", "dense"]), 2);
}

#[test]
fn train_eval_overlay_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), "1");
    let (m, t) = configs(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--model-config", s(&m), "--train-config", s(&t), "--out", s(&run)]);
    for f in ["history.csv", "effective_config.txt", "norm_stats.txt", "best/manifest.txt", "final/norm_stats.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let eff = fs::read_to_string(run.join("effective_config.txt")).unwrap();
    assert!(eff.contains("train.epochs = 2") && eff.contains("model.widths = 4,4,8,8"), "{eff}");

    // Refuses to reuse the directory; the same seed reproduces the history.
    assert_eq!(code(&["train", "--data", s(&data), "--model-config", s(&m), "--train-config", s(&t), "--out", s(&run)]), 2);
    let rerun = dir.path().join("rerun");
    ok(&["train", "--data", s(&data), "--model-config", s(&m), "--train-config", s(&t), "--out", s(&rerun)]);
    assert_eq!(fs::read_to_string(rerun.join("history.csv")).unwrap(), history);

    let ev = dir.path().join("eval");
    ok(&["eval", "--data", s(&data), "--checkpoint", s(&run.join("final")), "--out", s(&ev)]);
    let report = EvalReport::from_csv(&fs::read_to_string(ev.join("eval.csv")).unwrap()).unwrap();
    assert_eq!(report.per_sample.len(), 2);
    // Saved predictions score identically.
    let ev2 = dir.path().join("eval2");
    ok(&["eval", "--data", s(&data), "--predictions", s(&ev.join("predictions")), "--out", s(&ev2)]);
    assert_eq!(fs::read(ev.join("eval.csv")).unwrap(), fs::read(ev2.join("eval.csv")).unwrap());

    let ov = dir.path().join("overlay");
    ok(&["overlay", "--checkpoint", s(&run.join("best")), "--data", s(&data), "--out", s(&ov)]);
    for id in ["0003", "0004"] {
        let img = RgbImage::from_ppm(&fs::read(ov.join(format!("overlay_{id}.ppm"))).unwrap()).unwrap();
        let pred: Tensor<u8> = qts::read(ev.join(format!("predictions/{id}.qts"))).unwrap();
        let truth: Tensor<u8> = qts::read(data.join(format!("test/sample_{id}/mask.qts"))).unwrap();
        assert_eq!((img.width, img.height), (16, 16));
        let c = Confusion::new(pred.data(), truth.data());
        let (tp, fn_, fp) = color_counts(&img);
        assert_eq!((tp, fn_, fp), (c.tp, c.fn_, c.fp), "{id}");
        assert!(fs::read_to_string(ov.join(format!("overlay_{id}.txt"))).unwrap().contains(id));
    }
}

#[test]
fn eval_of_ground_truth_masks_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), "2");
    let preds = dir.path().join("oracle");
    fs::create_dir_all(&preds).unwrap();
    for id in ["0003", "0004"] {
        fs::copy(data.join(format!("test/sample_{id}/mask.qts")), preds.join(format!("{id}.qts"))).unwrap();
    }
    let out = dir.path().join("ev");
    let text = ok(&["eval", "--data", s(&data), "--predictions", s(&preds), "--out", s(&out)]);
    let report = EvalReport::from_csv(&fs::read_to_string(out.join("eval.csv")).unwrap()).unwrap();
    assert_eq!((report.mean_dice, report.mean_iou, report.std_dice), (1.0, 1.0, 0.0));
    assert!(text.contains("dice 1.0000"));
    fs::remove_file(preds.join("0004.qts")).unwrap();
    assert_eq!(code(&["eval", "--data", s(&data), "--predictions", s(&preds), "--out", s(&out), "--force"]), 1);
    assert_eq!(code(&["eval", "--data", s(&data), "--out", s(&out)]), 2);
}

#[test]
fn ablation_matrices_have_protocol_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), "3");
    let (m, t) = configs(dir.path());
    for (mode, rows) in [("fusion", vec!["mha@2", "concat@2", "crossgate@2", "early", "mha@3", "mha@1"]), ("loo", vec!["drop-0", "drop-45", "drop-90", "drop-135"])] {
        let out = dir.path().join(mode);
        ok(&["ablate", "--data", s(&data), "--mode", mode, "--model-config", s(&m), "--train-config", s(&t), "--set", "train.epochs=1", "--jobs", "3", "--out", s(&out)]);
        let csv = fs::read_to_string(out.join("matrix.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(MATRIX_HEADER));
        let names: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, rows);
        let meta = fs::read_to_string(out.join("matrix_meta.csv")).unwrap();
        let hashes: Vec<&str> = meta.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(hashes.len(), rows.len());
        assert!(hashes.iter().all(|h| *h == hashes[0] && h.len() == 64));
        let eff = fs::read_to_string(out.join("effective_config.txt")).unwrap();
        assert!(eff.contains("train.epochs = 1"));
    }
    assert!(dir.path().join("loo/loo_plot.csv").is_file());
    assert_eq!(code(&["ablate", "--data", s(&data), "--mode", "table", "--out", s(&dir.path().join("x"))]), 2);
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), "4");
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "widths = 4,4,8,8\nwarmup = 3\n").unwrap();
    let out = |n: &str| dir.path().join(n);
    assert_eq!(code(&["train", "--data", s(&data), "--model-config", s(&bad), "--out", s(&out("a"))]), 2);
    assert_eq!(code(&["train", "--data", s(&data), "--set", "epochs=3", "--out", s(&out("b"))]), 2);
    assert_eq!(code(&["train", "--data", s(&data), "--set", "train.patch_size=24", "--out", s(&out("c"))]), 2);
    assert_eq!(code(&["train", "--data", s(&out("missing")), "--out", s(&out("d"))]), 1);
    assert_eq!(code(&["train", "--data", s(&data), "--model-config", s(&out("nofile")), "--out", s(&out("e"))]), 1);
}

#[test]
fn gradcheck_exit_code_follows_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let text = ok(&["gradcheck", "--out", s(&out)]);
    assert!(text.contains("all") && !text.contains("FAIL"));
    let csv = fs::read_to_string(out.join("gradcheck.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    assert!(out.join("effective_config.txt").is_file());
    let strict = qpmseg(&["gradcheck", "--tol", "1e-300", "--composite-tol", "1e-300"]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stdout).contains("FAIL"));
    assert_eq!(code(&["gradcheck", "--tol", "0"]), 2);
}
