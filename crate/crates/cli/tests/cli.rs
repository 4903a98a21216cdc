use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn attractor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attractor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_SWEEP: &str = r#"
attractors = ["point"]
models = ["rnn"]
n_train = [1, 2]
seeds = [0]
epochs = 20
n_eval_inits = 3
"#;

#[test]
fn generate_train_evaluate_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = attractor(&["generate", "--attractor", "cyclic", "--n", "2", "--seed", "4", "--out", path(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = fs::read_dir(&data).unwrap().collect();
    assert_eq!(files.len(), 2);

    let run = dir.path().join("run");
    let out = attractor(&[
        "train", "--data", path(&data), "--model", "transformer", "--epochs", "3", "--out", path(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let curve = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(curve.starts_with("epoch,loss\n"));
    let checkpoint = run.join("final.json");
    assert!(checkpoint.exists());

    let eval_dir = dir.path().join("eval");
    let args = [
        "evaluate", "--checkpoint", path(&checkpoint), "--attractor", "cyclic", "--n-inits", "2", "--steps", "20",
        "--out", path(&eval_dir),
    ];
    let first = attractor(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let record: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(record["report"]["per_init"].as_array().unwrap().len(), 2);
    assert_eq!(record["report"]["steps"], 20);
    assert_eq!(record["model"]["kind"], "transformer");
    assert!(eval_dir.join("eval.json").exists());
    assert_eq!(attractor(&args).stdout, first.stdout, "evaluation is deterministic");

    let dump = dir.path().join("dump");
    let out = attractor(&[
        "dump-rollouts", "--checkpoint", path(&checkpoint), "--attractor", "cyclic", "--n-inits", "2", "--out",
        path(&dump),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dump.join("generated_01.txt").exists() && dump.join("reference_01.txt").exists());
}

#[test]
fn sweep_writes_reports_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(&config, TINY_SWEEP).unwrap();
    let out_dir = dir.path().join("sweep");
    let args = ["sweep", "--config", path(&config), "--out", path(&out_dir)];
    let out = attractor(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = fs::read_to_string(out_dir.join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
    assert!(out_dir.join("summary.csv").exists());
    assert!(out_dir.join("checkpoints/point-rnn-d0-n2-s0.json").exists());

    let again = attractor(&args);
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("(2 resumed)"));
    assert_eq!(fs::read_to_string(out_dir.join("rows.csv")).unwrap(), rows);

    // a different protocol may not write into the same report
    let out = attractor(&["sweep", "--config", path(&config), "--epochs", "21", "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "epochs = 10\nunknown_key = 1\n").unwrap();
    let out = attractor(&["sweep", "--config", path(&bad), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(&bad, "models = [\"rnn\"]\ndropout_rates = [0.1]\n").unwrap();
    let out = attractor(&["sweep", "--config", path(&bad), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = attractor(&["generate", "--attractor", "spiral", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = attractor(&["sweep", "--preset", "no-such-preset"]);
    assert_eq!(out.status.code(), Some(2));

    let out = attractor(&["sweep", "--preset", "paper-main", "--parallelism", "0", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_in_every_seed_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("diverge.toml");
    fs::write(
        &config,
        "attractors = [\"point\"]\nmodels = [\"rnn\"]\nn_train = [1]\nseeds = [0, 1]\nepochs = 50\n\
         n_eval_inits = 2\n[adam]\nalpha = 1e300\n",
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    let out = attractor(&["sweep", "--config", path(&config), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = fs::read_to_string(out_dir.join("rows.csv")).unwrap();
    assert_eq!(rows.lines().filter(|l| l.contains(",true,")).count(), 2);
}

#[test]
fn gradcheck_exits_zero() {
    let out = attractor(&["gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("causal_attention") && text.contains("transformer"));
    assert!(!text.contains("FAIL"));
}
