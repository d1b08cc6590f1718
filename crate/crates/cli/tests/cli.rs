use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use trimap_core::io::{load_alpha, load_corpus, load_trimap};
use trimap_core::predictors::MlpPredictor;
use trimap_core::training::check_sample_invariants;
use trimap_core::types::LabelClass;

fn trimap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trimap"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = trimap(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out_a = ok(&["gen", "--seed", "3", "--n", "4", "--size", "32", "--out", p(&a)]);
    let out_b = ok(&["gen", "--seed", "3", "--n", "4", "--size", "32", "--out", p(&b)]);
    assert_eq!(out_a, out_b);
    let (ma, samples) = load_corpus(&a).unwrap();
    let (mb, _) = load_corpus(&b).unwrap();
    assert_eq!(ma.hash, mb.hash);
    for s in &samples {
        check_sample_invariants(s).unwrap();
    }
    for f in ["images", "alphas", "trimaps"] {
        assert_eq!(std::fs::read_dir(a.join(f)).unwrap().count(), 4);
    }
    let empty = dir.path().join("empty");
    ok(&["gen", "--n", "0", "--out", p(&empty)]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(empty.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["ids"].as_array().unwrap().len(), 0);
}

#[test]
fn train_checkpoints_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    ok(&["gen", "--seed", "1", "--n", "10", "--size", "32", "--out", p(&corpus)]);

    let zero = dir.path().join("zero.tmlp");
    ok(&["train", "--corpus", p(&corpus), "--out", p(&zero), "--epochs", "0", "--seed", "5"]);
    assert_eq!(MlpPredictor::load(&zero).unwrap(), MlpPredictor::init(5));

    let a = dir.path().join("a.tmlp");
    let b = dir.path().join("b.tmlp");
    let common = ["--corpus", p(&corpus), "--epochs", "2", "--batch-size", "4", "--held-out", "2", "--seed", "7"];
    ok(&[&["train", "--out", p(&a)][..], &common].concat());
    ok(&[&["train", "--out", p(&b)][..], &common].concat());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let log = std::fs::read_to_string(a.with_extension("csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,mean_loss,eval_mse_alpha,eval_pixel_err,clicks_to_converge");
    assert_eq!(lines.len(), 3);
    // held-out evaluation fills the last row
    assert!(!lines[2].ends_with(",,,"));
}

#[test]
fn eval_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    ok(&["gen", "--n", "3", "--size", "32", "--out", p(&corpus)]);
    let run = dir.path().join("run");
    ok(&["eval", "--corpus", p(&corpus), "--predictor", "geodesic", "--policy", "itts", "--max-clicks", "1", "--out", p(&run)]);
    for f in ["curve.csv", "summary.csv", "series.csv", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let curve = std::fs::read_to_string(run.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["policy"], "itts");
    assert_eq!(m["corpus_hash"].as_str().unwrap().len(), 64);
    assert_eq!(std::fs::read_dir(run.join("trajectories")).unwrap().count(), 3);

    let again = dir.path().join("run2");
    ok(&["eval", "--corpus", p(&corpus), "--predictor", "geodesic", "--policy", "itts", "--max-clicks", "1", "--out", p(&again)]);
    assert_eq!(std::fs::read(run.join("summary.csv")).unwrap(), std::fs::read(again.join("summary.csv")).unwrap());

    let sweep = dir.path().join("sweep");
    ok(&["sweep", "--corpus", p(&corpus), "--param", "alpha", "--values", "0,0.5", "--max-clicks", "2", "--out", p(&sweep)]);
    let table = std::fs::read_to_string(sweep.join("sweep_alpha.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("value,mse,sad,mad,pixel_err"));
}

#[test]
fn predict_outputs_are_consistent_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    ok(&["gen", "--n", "1", "--size", "40", "--out", p(&corpus)]);
    let image = std::fs::read_dir(corpus.join("images")).unwrap().next().unwrap().unwrap().path();

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    let out = dir.path().join("o1");
    ok(&["predict", "--image", p(&image), "--clicks", p(&empty), "--out", p(&out)]);
    let t = load_trimap(&out.join("trimap.png")).unwrap();
    assert_eq!(t.dims(), (40, 40));
    assert!(t.data().iter().all(|&l| l == LabelClass::Background));
    assert!(load_alpha(&out.join("alpha.png")).unwrap().data().iter().all(|&a| a == 0.0));

    let clicks = dir.path().join("clicks.json");
    std::fs::write(&clicks, r#"[{"x":20,"y":20,"label":"F"},{"x":1,"y":1,"label":"B"},{"x":30,"y":10,"label":"U"}]"#).unwrap();
    let (o2, o3) = (dir.path().join("o2"), dir.path().join("o3"));
    ok(&["predict", "--image", p(&image), "--clicks", p(&clicks), "--out", p(&o2)]);
    ok(&["predict", "--image", p(&image), "--clicks", p(&clicks), "--out", p(&o3)]);
    for f in ["trimap.png", "alpha.png"] {
        assert_eq!(std::fs::read(o2.join(f)).unwrap(), std::fs::read(o3.join(f)).unwrap());
    }
    assert_eq!(load_alpha(&o2.join("alpha.png")).unwrap().dims(), (40, 40));

    std::fs::write(&clicks, r#"[{"x":40,"y":0,"label":"F"}]"#).unwrap();
    let out = trimap(&["predict", "--image", p(&image), "--clicks", p(&clicks), "--out", p(&o3)]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).contains("outside"));
}

#[test]
fn invalid_input_fails_with_one_line() {
    let out = trimap(&["eval", "--corpus", "/nonexistent/corpus", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("/nonexistent/corpus"));

    let out = trimap(&["gen", "--size", "8", "--out", "/tmp/never-written"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("32"));

    let out = trimap(&["eval", "--corpus", "x", "--out", "y", "--alpha", "2"]);
    assert_eq!(out.status.code(), Some(1));
    stderr_line(&out);

    let out = trimap(&["eval", "--corpus", "x", "--out", "y", "--predictor", "resnet"]);
    assert_eq!(out.status.code(), Some(2));
    let out = trimap(&["serve", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn env_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    ok(&["gen", "--n", "2", "--size", "32", "--out", p(&corpus)]);
    let run = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_trimap"))
        .args(["eval", "--corpus", p(&corpus), "--out", p(&run)])
        .env("TRIMAP_MAX_CLICKS", "2")
        .env("TRIMAP_POLICY", "twoclass")
        .output()
        .unwrap();
    assert!(out.status.success());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["sim_cfg"]["max_clicks"], 2);
    assert_eq!(m["policy"], "twoclass");
}

#[test]
fn serve_health_and_port_conflict() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_trimap"))
        .args(["serve", "--bind", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect(&line).to_string();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let body: serde_json::Value = rt.block_on(async {
        let client = reqwest::Client::builder().timeout(Duration::from_secs(10)).build().unwrap();
        client.get(format!("http://{addr}/health")).send().await.unwrap().json().await.unwrap()
    });
    assert_eq!(body["status"], "ok");

    let out = trimap(&["serve", "--bind", &addr]);
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("cannot bind"));
}
