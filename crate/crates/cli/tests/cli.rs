//! Drives the `dermfuse` binary end to end in temporary directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dermfuse_core::checkpoint::load_checkpoint;
use dermfuse_core::data::synthetic;
use dermfuse_core::train::argmin_first;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dermfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dermfuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dermfuse(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = dermfuse(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn well_formed(path: &Path) {
    let text = read(path);
    let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(doc.root_element().tag_name().name(), "svg");
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    read(path).lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

/// Synthetic data, a split and both models trained for a few epochs.
struct Trained {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

const EPOCHS: usize = 4;

fn trained() -> Trained {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    synthetic::write_dataset(&dir.join("data"), 120, 3, 8, 8, 5).unwrap();
    fs::write(
        dir.join("run.cfg"),
        format!("manifest = data/manifest.csv\nout_dir = out\ntrain.epochs = {EPOCHS}\n"),
    )
    .unwrap();
    ok(&dir, &["--config", "run.cfg", "split"]);
    for arch in ["inception", "densenet"] {
        ok(&dir, &["--config", "run.cfg", "train", "--arch", arch]);
    }
    Trained { _tmp: tmp, dir }
}

#[test]
fn split_arithmetic_and_repeatability() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut manifest = String::from("id,path,label\n");
    for i in 0..3297 {
        manifest.push_str(&format!("r{i},r{i}.pgm,{}\n", if i % 3 == 0 { "malignant" } else { "benign" }));
    }
    fs::write(dir.join("m.csv"), manifest).unwrap();
    ok(dir, &["--manifest", "m.csv", "--out-dir", "a", "split"]);
    let lines = |p: &str| read(dir.join(p)).lines().count();
    assert_eq!((lines("a/train.idx"), lines("a/val.idx"), lines("a/test.idx")), (2374, 263, 660));
    ok(dir, &["--manifest", "m.csv", "--out-dir", "b", "split"]);
    for f in ["train.idx", "val.idx", "test.idx"] {
        assert_eq!(read(dir.join("a").join(f)), read(dir.join("b").join(f)));
    }
    ok(dir, &["--manifest", "m.csv", "--out-dir", "c", "--seed", "7", "split"]);
    assert_ne!(read(dir.join("a/test.idx")), read(dir.join("c/test.idx")));

    let err = fails(dir, &["--manifest", "missing.csv", "--out-dir", "d", "split"], 3);
    assert!(err.contains("missing.csv"), "{err}");
    assert!(!dir.join("d").exists());
    fails(dir, &["--out-dir", "d", "split"], 2);
}

#[test]
fn train_predict_fuse_eval() {
    let t = trained();
    let (dir, out) = (&t.dir, t.dir.join("out"));
    let cfg = ["--config", "run.cfg"];
    let args = |extra: &[&'static str]| cfg.iter().copied().chain(extra.iter().copied()).collect::<Vec<_>>();

    for arch in ["inception", "densenet"] {
        let rows = csv_rows(&out.join(format!("history_{arch}.csv")));
        assert_eq!(rows.len(), EPOCHS);
        let val_loss: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
        let ckpt = load_checkpoint(&out.join(format!("model_{arch}.ckpt"))).unwrap();
        assert_eq!(argmin_first(&val_loss), Some(ckpt.best_epoch as usize));
        assert_eq!(ckpt.best_val_loss, val_loss[ckpt.best_epoch as usize]);
        well_formed(&out.join(format!("history_{arch}.svg")));

        ok(dir, &args(&["predict", "--arch", arch]));
        let scores = out.join(format!("scores_{arch}_test.csv"));
        let first = read(&scores);
        let rows = csv_rows(&scores);
        assert_eq!(rows.len(), read(out.join("test.idx")).lines().count());
        assert!(rows.iter().all(|r| {
            let s: f64 = r[1].parse().unwrap();
            s > 0.0 && s < 1.0
        }));
        ok(dir, &args(&["predict", "--arch", arch]));
        assert_eq!(read(&scores), first);
    }

    let err = fails(
        dir,
        &args(&["predict", "--arch", "inception", "--checkpoint", "out/model_densenet.ckpt"]),
        5,
    );
    assert!(err.contains("mini-densenet"), "{err}");
    let mut bytes = fs::read(out.join("model_inception.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(dir.join("bad.ckpt"), &bytes).unwrap();
    let err = fails(dir, &args(&["predict", "--arch", "inception", "--checkpoint", "bad.ckpt"]), 5);
    assert!(err.contains("checksum"), "{err}");

    ok(dir, &args(&["fuse", "out/scores_inception_test.csv", "out/scores_densenet_test.csv"]));
    let a = csv_rows(&out.join("scores_inception_test.csv"));
    let b = csv_rows(&out.join("scores_densenet_test.csv"));
    let fused = csv_rows(&out.join("fused.csv"));
    for ((ra, rb), rf) in a.iter().zip(&b).zip(&fused) {
        assert_eq!(ra[0], rf[0]);
        let want = 0.45 * ra[1].parse::<f64>().unwrap() + 0.55 * rb[1].parse::<f64>().unwrap();
        assert!((rf[1].parse::<f64>().unwrap() - want).abs() < 1e-12);
        assert_eq!(rf[3], ra[2]);
    }

    let stdout = ok(dir, &args(&["eval"]));
    assert!(stdout.contains("accuracy"), "{stdout}");
    for f in ["confusion.svg", "roc.svg"] {
        well_formed(&out.join(f));
    }
    let metrics = read(out.join("metrics.csv"));
    let auc = metrics.lines().find_map(|l| l.strip_prefix("auc,")).unwrap();
    let roc = csv_rows(&out.join("roc.csv"));
    assert!(roc.iter().all(|r| r[3] == auc));
    assert_eq!(roc[0][..3], ["inf", "0", "0"]);
    let last = roc.last().unwrap();
    assert_eq!(last[1..3], ["1", "1"]);
}

#[test]
fn fusion_contracts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut good = String::from("id,score,label\n");
    let mut weak = String::from("id,score,label\n");
    for i in 0..200 {
        let y = i % 2;
        let clean = if y == 1 { rng.gen_range(0.55..1.0) } else { rng.gen_range(0.0..0.45) };
        good.push_str(&format!("x{i},{clean},{y}\n"));
        weak.push_str(&format!("x{i},{},{y}\n", rng.gen_range(0.0..1.0)));
    }
    fs::write(dir.join("good.csv"), &good).unwrap();
    fs::write(dir.join("weak.csv"), &weak).unwrap();

    ok(dir, &["--out-dir", "same", "--weights", "0.5,0.5", "fuse", "good.csv", "good.csv"]);
    for (g, f) in csv_rows(&dir.join("good.csv")).iter().zip(csv_rows(&dir.join("same/fused.csv"))) {
        assert_eq!(g[1].parse::<f64>().unwrap(), f[1].parse::<f64>().unwrap());
    }

    let stdout = ok(dir, &["--out-dir", "sw", "--sweep", "fuse", "weak.csv", "good.csv"]);
    assert!(stdout.contains("sweep"), "{stdout}");
    let table = csv_rows(&dir.join("sw/sweep.csv"));
    assert_eq!(table.len(), 21);
    let best = table
        .iter()
        .fold((None::<&Vec<String>>, -1.0), |(b, acc), r| {
            let a: f64 = r[2].parse().unwrap();
            if a > acc {
                (Some(r), a)
            } else {
                (b, acc)
            }
        })
        .0
        .unwrap();
    assert!(best[1].parse::<f64>().unwrap() > 0.5, "{best:?}");
    let fused_acc: f64 = {
        let rows = csv_rows(&dir.join("sw/fused.csv"));
        rows.iter().filter(|r| r[2] == r[3]).count() as f64 / rows.len() as f64
    };
    assert_eq!(fused_acc, best[2].parse::<f64>().unwrap());

    let shifted: String = weak
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 7 { "zzz,0.5,0\n".to_string() } else { format!("{l}\n") })
        .collect();
    fs::write(dir.join("shifted.csv"), shifted).unwrap();
    let err = fails(dir, &["--out-dir", "bad", "fuse", "good.csv", "shifted.csv"], 6);
    assert!(err.contains("x6"), "{err}");
    assert!(!dir.join("bad").exists());
    fails(dir, &["--out-dir", "bad", "fuse", "good.csv", "nope.csv"], 6);
    fails(dir, &["--out-dir", "bad", "--weights", "1,2,3", "fuse", "good.csv", "good.csv"], 2);
    fails(
        dir,
        &["--out-dir", "bad", "--weights", "1,2", "--sweep", "fuse", "good.csv", "good.csv"],
        2,
    );
    assert!(!dir.join("bad").exists());
}

#[test]
fn eval_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut perfect = String::from("id,fused_score,decision,label\n");
    for i in 0..20 {
        let y = i % 2;
        perfect.push_str(&format!("p{i},{},{y},{y}\n", if y == 1 { 0.9 } else { 0.1 }));
    }
    fs::write(dir.join("perfect.csv"), perfect).unwrap();
    ok(dir, &["--out-dir", "p", "eval", "perfect.csv"]);
    assert!(read(dir.join("p/metrics.csv")).contains("accuracy,1\n"));
    assert!(read(dir.join("p/metrics.txt")).contains("accuracy     1.0000"));

    // 27 TP, 28 FP, 332 TN, 23 FN.
    let mut counts = String::from("id,score,label\n");
    let mut push = |n: usize, s: f64, y: u8, tag: &str| {
        for i in 0..n {
            counts.push_str(&format!("{tag}{i},{s},{y}\n"));
        }
    };
    push(27, 0.8, 1, "tp");
    push(28, 0.7, 0, "fp");
    push(332, 0.2, 0, "tn");
    push(23, 0.3, 1, "fn");
    fs::write(dir.join("counts.csv"), counts).unwrap();
    ok(dir, &["--out-dir", "c", "eval", "counts.csv", "--name", "ref"]);
    let text = read(dir.join("c/metrics_ref.txt"));
    assert!(text.contains("specificity  0.9222"), "{text}");
    let csv = read(dir.join("c/metrics_ref.csv"));
    for row in ["tp,27", "fp,28", "tn,332", "fn,23"] {
        assert!(csv.contains(row), "{row}");
    }
    well_formed(&dir.join("c/confusion_ref.svg"));
    well_formed(&dir.join("c/roc_ref.svg"));

    fs::write(dir.join("one.csv"), "id,score,label\na,0.2,0\nb,0.7,0\n").unwrap();
    let out = dermfuse(dir, &["--out-dir", "o", "eval", "one.csv"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ROC"));
    assert!(dir.join("o/metrics.txt").exists());
    assert!(!dir.join("o/roc.csv").exists() && !dir.join("o/roc.svg").exists());
    assert!(read(dir.join("o/metrics.csv")).contains("auc,N/A"));

    fs::write(dir.join("nolabel.csv"), "id,score,label\na,0.2,\n").unwrap();
    fails(dir, &["--out-dir", "n", "eval", "nolabel.csv"], 3);
    assert!(!dir.join("n").exists());
}

#[test]
fn config_and_training_failures_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synthetic::write_dataset(&dir.join("data"), 40, 1, 8, 8, 1).unwrap();
    fs::write(dir.join("typo.cfg"), "train.epoch = 3\n").unwrap();
    let err = fails(dir, &["--config", "typo.cfg", "demo"], 2);
    assert!(err.contains("train.epoch"), "{err}");
    fails(dir, &["--config", "absent.cfg", "demo"], 2);
    fails(dir, &["--threshold", "2", "--out-dir", "x", "demo"], 2);
    assert!(!dir.join("x").exists());

    let base = ["--manifest", "data/manifest.csv", "--out-dir", "out"];
    let with = |extra: &[&'static str]| base.iter().copied().chain(extra.iter().copied()).collect::<Vec<_>>();
    fails(dir, &with(&["train", "--arch", "densenet"]), 3);
    assert!(!dir.join("out").exists());

    // Grayscale images against the default 3-channel input.
    ok(dir, &with(&["split"]));
    let err = fails(dir, &with(&["train", "--arch", "densenet"]), 3);
    assert!(err.contains("channels"), "{err}");
    fs::write(dir.join("gray.cfg"), "model.input = 1x8x8\ntrain.batch_size = 0\n").unwrap();
    let mut args = vec!["--config", "gray.cfg"];
    args.extend(with(&["train", "--arch", "densenet"]));
    fails(dir, &args, 2);
    assert!(!dir.join("out/history_densenet.csv").exists());
}

#[test]
fn softmax_head_runs_through_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("s.cfg"), "train.epochs = 2\ndemo.samples = 60\nfusion.sweep = true\n").unwrap();
    let stdout = ok(dir, &["--config", "s.cfg", "--loss", "softmax", "--out-dir", "o", "demo"]);
    assert!(stdout.contains("fusion weights"), "{stdout}");
    let ckpt = load_checkpoint(&dir.join("o/model_inception.ckpt")).unwrap();
    assert_eq!(ckpt.spec.output, dermfuse_core::nn::OutputKind::Softmax);
    assert!(dir.join("o/sweep.csv").exists());
    for entry in fs::read_dir(dir.join("o")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "svg") {
            well_formed(&p);
        }
    }
}
