use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn feaslab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feaslab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FEASLAB_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        "schema_version = 1\nrun_id = \"small\"\nwidth = 5\nheight = 5\nn_train_tasks = 3\n\
         interactions = 1500\nsnapshot_every = 500\nseeds = [0, 1]\n",
    )
    .unwrap();
    path
}

#[test]
fn train_twice_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    for out in ["a", "b"] {
        let o = feaslab(&["train", "--config", cfg, "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    for seed in [0, 1] {
        let name = format!("checkpoints/seed_{seed}.ckpt");
        assert_eq!(
            fs::read(dir.path().join("a").join(&name)).unwrap(),
            fs::read(dir.path().join("b").join(&name)).unwrap()
        );
    }
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("run_id,seed,step,metric,key,value\n"));
    assert!(text.lines().skip(1).all(|l| l.starts_with("small,")));
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_feaslab"))
        .args(["gen-tasks", "--n-train-tasks", "2", "--width", "5", "--height", "5"])
        .current_dir(dir.path())
        .env("FEASLAB_OUT", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("root/tasks/task_000.txt").exists());
    assert!(dir.path().join("root/tasks/task_001.txt").exists());
}

#[test]
fn generated_tasks_feed_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let o = feaslab(&["gen-tasks", "--config", cfg, "--out", "o"], dir.path());
    assert!(o.status.success());
    let o = feaslab(
        &["train", "--config", cfg, "--out", "o", "--tasks", "o/tasks", "--seeds", "4"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("o/metrics.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("small,4,")));
    let o = feaslab(
        &["eval", "--config", cfg, "--out", "o", "--checkpoint", "o/checkpoints/seed_4.ckpt"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ood = fs::read_to_string(dir.path().join("o/ood.csv")).unwrap();
    assert!(ood.contains(",ood_success,pooled,"));
}

#[test]
fn oracle_on_corridor_matches_hand_values() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("corridor.txt"),
        "family = rds\nwidth = 3\nheight = 1\ndifficulty = 0.0\nseed = 0\ncells =\n..G\n",
    )
    .unwrap();
    let o = feaslab(&["oracle", "--task", "corridor.txt", "--bins", "4"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "state_index,target_key,bin_1,bin_2,bin_3,bin_4");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').skip(2).map(|v| v.parse().unwrap()).collect())
        .collect();
    // uniform walk: from x=1 the goal is one step right, bumps at the walls stay put
    let expected = [
        vec![0.0, 0.0625, 0.078125, 0.859375],
        vec![0.25, 0.125, 0.078125, 0.546875],
        vec![0.0, 0.0, 0.0, 1.0],
    ];
    assert_eq!(rows.len(), 3);
    for (row, want) in rows.iter().zip(&expected) {
        for (a, b) in row.iter().zip(want) {
            assert!((a - b).abs() < 1e-8, "{row:?} vs {want:?}");
        }
    }
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = feaslab(&["selftest"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for suite in ["backup_shift", "removal_invariance", "normalization"] {
        assert!(text.contains(&format!("PASS {suite}")), "{text}");
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[dyna]\nrate = 0.1\n").unwrap();
    let o = feaslab(&["train", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("rate"));
    let o = feaslab(&["train", "--backend", "lstm"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("evaluator.backend"));
}
