use super::*;
use crate::dynamics::load_trajectory;
use crate::models::Rollout;

fn tiny() -> SweepSpec {
    SweepSpec {
        attractors: vec!["point".into()],
        n_train: vec![1, 2],
        epochs: 30,
        n_eval_inits: 3,
        point: PointAttractorConfig {
            steps: 20,
            ..Default::default()
        },
        cyclic: VanDerPolConfig {
            steps: 20,
            ..Default::default()
        },
        ..SweepSpec::default()
    }
}

#[test]
fn default_spec_has_48_rows() {
    let spec = SweepSpec::default();
    assert_eq!(spec.row_count(), 48);
    assert_eq!(spec.cells().unwrap().len(), 48);
}

#[test]
fn presets() {
    let main = SweepSpec::preset(Preset::PaperMain);
    assert_eq!(main.seeds.len(), 5);
    assert_eq!(main.row_count(), 2 * 2 * 12 * 5);
    let dropout = SweepSpec::preset(Preset::PaperDropout);
    assert_eq!(dropout.row_count() / dropout.seeds.len(), 2 * 4 * 12);
    let fig = SweepSpec::preset(Preset::FigureEight);
    assert_eq!(fig.cells().unwrap().len(), 2 * 5);
    for p in ["paper-main", "paper-dropout", "figure-eight"] {
        assert_eq!(p.parse::<Preset>().unwrap().as_str(), p);
    }
    assert!(matches!("paper".parse::<Preset>(), Err(ExperimentError::Config(_))));
}

#[test]
fn validation_rejects_bad_specs() {
    let mut s = tiny();
    s.seeds.clear();
    assert!(s.validate().is_err());
    let mut s = tiny();
    s.dropout_rates = vec![0.0, 0.1];
    assert!(s.validate().is_err(), "rnn with dropout");
    s.models = vec![ModelKind::Transformer];
    assert!(s.validate().is_ok());
    s.n_train = vec![0];
    assert!(s.validate().is_err());
    let mut s = tiny();
    s.attractors = vec!["figure-eight".into()];
    assert!(s.validate().is_err(), "figure-eight with n_train 2");
    let mut s = tiny();
    s.attractors = vec!["lorenz".into()];
    assert!(s.validate().is_err());
    let mut s = tiny();
    s.seeds = vec![1, 1];
    assert!(s.validate().is_err());
}

#[test]
fn toml_round_trip() {
    let text = r#"
        attractors = ["cyclic"]
        models = ["transformer"]
        n_train = [3]
        dropout_rates = [0.0, 0.01]
        seeds = [7, 8]
        epochs = 5000
        [cyclic]
        mu = 0.2
    "#;
    let spec = SweepSpec::from_toml(text).unwrap();
    assert_eq!(spec.cyclic.mu, 0.2);
    assert_eq!(spec.cyclic.steps, 200);
    assert_eq!(spec.n_eval_inits, 10);
    assert_eq!(spec.row_count(), 4);
    assert!(SweepSpec::from_toml("epochs = 5\nbogus = 1").is_err());
    assert!(SweepSpec::from_toml("models = [\"lstm\"]").is_err());
}

#[test]
fn fingerprint_tracks_the_protocol_only() {
    let a = tiny();
    let mut b = tiny();
    b.seeds = vec![5, 6];
    b.n_train = vec![9];
    assert_eq!(a.fingerprint(), b.fingerprint());
    b.epochs += 1;
    assert_ne!(a.fingerprint(), b.fingerprint());
    let mut c = tiny();
    c.cyclic.dt = 0.05;
    assert_ne!(a.fingerprint(), c.fingerprint());
    assert_eq!(a.fingerprint().len(), 64);
}

#[test]
fn cell_seeds_are_distinct() {
    let mut spec = SweepSpec::preset(Preset::PaperMain);
    spec.models = vec![ModelKind::Transformer];
    spec.dropout_rates = vec![0.0, 0.01, 0.1, 0.3];
    let cells = spec.cells().unwrap();
    let seeds: HashSet<u64> = cells.iter().map(|c| c.cell_seed()).collect();
    assert_eq!(seeds.len(), cells.len());
}

#[test]
fn models_in_one_seed_share_data_and_eval_initials() {
    let cells = tiny().cells().unwrap();
    let rnn = cells.iter().find(|c| c.model == ModelKind::Rnn && c.n_train == 2).unwrap();
    let tf = cells.iter().find(|c| c.model == ModelKind::Transformer && c.n_train == 2).unwrap();
    assert_eq!(rnn.data_sampler().next_u64(), tf.data_sampler().next_u64());
    assert_eq!(rnn.eval_sampler().next_u64(), tf.eval_sampler().next_u64());
    assert_ne!(rnn.cell_seed(), tf.cell_seed());
}

#[test]
fn cell_runs_and_repeats_bitwise() {
    let cell = &tiny().cells().unwrap()[0];
    let a = run_cell(cell).unwrap();
    let b = run_cell(cell).unwrap();
    assert!(a.mean_dtw.is_finite() && a.mean_dtw >= 0.0);
    assert!(!a.train_diverged);
    assert_eq!(a.paper_mean, Some(15.4));
    assert!(a.same_result(&b), "{a:?} vs {b:?}");
    let mut c = b.clone();
    c.mean_dtw = f64::from_bits(c.mean_dtw.to_bits() + 1);
    assert!(!a.same_result(&c));
}

#[test]
fn sweep_writes_reports_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny();
    let first = run_sweep(&spec, 2, dir.path()).unwrap();
    assert_eq!(first.rows.len(), 4);
    assert_eq!(first.resumed, 0);
    assert_eq!(first.summary.len(), 4);
    assert!(first.all_seeds_diverged.is_empty());
    let on_disk = read_rows(&dir.path().join("rows.csv")).unwrap();
    assert_eq!(on_disk.len(), 4);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(meta["fingerprint"], spec.fingerprint());
    assert!(std::fs::read_to_string(dir.path().join("summary.csv")).unwrap().starts_with("attractor,model"));
    assert_eq!(std::fs::read_dir(dir.path().join("checkpoints")).unwrap().count(), 4);

    // interrupted run: drop the last row and leave a partial line behind
    let text = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    let truncated = format!("{}\npoint,transformer,0,2,0,1.", lines.join("\n"));
    std::fs::write(dir.path().join("rows.csv"), truncated).unwrap();

    let second = run_sweep(&spec, 1, dir.path()).unwrap();
    assert_eq!(second.resumed, 3);
    assert_eq!(second.rows.len(), 4);
    for (a, b) in first.rows.iter().zip(&second.rows) {
        assert!(a.same_result(b));
    }
    assert_eq!(read_rows(&dir.path().join("rows.csv")).unwrap().len(), 4);

    let mut other = spec.clone();
    other.epochs = 31;
    assert!(matches!(
        run_sweep(&other, 1, dir.path()),
        Err(ExperimentError::FingerprintMismatch { .. })
    ));
}

#[test]
fn summary_is_a_function_of_rows() {
    let spec = tiny();
    let row = |seed: u64, mean: f64, diverged: bool| ReportRow {
        attractor: "point".into(),
        model: ModelKind::Rnn,
        dropout: 0.0,
        n_train: 1,
        seed,
        mean_dtw: mean,
        se_dtw: 1.0,
        diverged_count: 0,
        train_diverged: diverged,
        final_loss: 0.0,
        wall_time_s: 0.0,
        config_fingerprint: spec.fingerprint(),
        paper_mean: None,
        paper_se: None,
    };
    let mut spec2 = spec.clone();
    spec2.seeds = vec![0, 1, 2];
    let s = summarize(&spec2, &[row(0, 2.0, false), row(1, 4.0, false), row(2, -1.0, true)]);
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].seeds, 3);
    assert_eq!(s[0].diverged_seeds, 1);
    assert_eq!(s[0].mean_dtw, 3.0);
    assert_eq!(s[0].se_across_seeds, 1.0);
    assert_eq!(s[0].paper_mean, Some(15.4));
}

struct Replay(Attractor);

impl Generator for Replay {
    fn rollout(&self, init: Point2, steps: usize) -> Result<Rollout, ModelError> {
        Ok(Rollout {
            points: self.0.reference(init, steps).unwrap().points().to_vec(),
            diverged: false,
        })
    }
}

use crate::dynamics::Point2;
use std::collections::HashSet;

#[test]
fn dump_rollouts_writes_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let attractor = Attractor::cyclic();
    let files = dump_rollouts(&Replay(attractor), &attractor, 10, &mut SeededSampler::new(1), dir.path()).unwrap();
    assert_eq!(files.len(), 20);
    for i in 0..10 {
        let g = std::fs::read(dir.path().join(format!("generated_{i:02}.txt"))).unwrap();
        let r = std::fs::read(dir.path().join(format!("reference_{i:02}.txt"))).unwrap();
        assert_eq!(g, r);
        let t = load_trajectory(&dir.path().join(format!("generated_{i:02}.txt"))).unwrap();
        assert_eq!(t.len(), 201);
    }
}

#[test]
fn dump_rollouts_from_checkpoint_reports_bad_versions() {
    let dir = tempfile::tempdir().unwrap();
    let model = SequenceModel::new(ModelConfig::rnn(0)).unwrap();
    let path = dir.path().join("m.json");
    crate::models::save_checkpoint(&model, &path).unwrap();
    let attractor = Attractor::point();
    let out = dir.path().join("out");
    let files = dump_rollouts_from_checkpoint(&path, &attractor, 2, 0, &out).unwrap();
    for f in &files {
        load_trajectory(f).unwrap();
    }
    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    value["version"] = 7.into();
    std::fs::write(&path, value.to_string()).unwrap();
    match dump_rollouts_from_checkpoint(&path, &attractor, 2, 0, &out) {
        Err(ExperimentError::Model(ModelError::Checkpoint(msg))) => assert!(msg.contains('7'), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}
