use std::fs;
use std::path::{Path, PathBuf};

use strol::cli::run;

const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");

fn shipped(name: &str) -> String {
    Path::new(CONFIGS).join(name).to_string_lossy().into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn train_one_epoch_writes_weights_and_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run(["strol", "train", "--config", &shipped("robot.toml"), "--epochs", "1", "--out", out]);
    assert_eq!(code, 0);
    assert!(dir.path().join("robot_strol.strl").exists());
    let loss = dir.path().join("robot_strol_loss.csv");
    assert!(fs::read_to_string(&loss).unwrap().starts_with("epoch,mean_loss\n"));
    assert_eq!(data_rows(&loss).len(), 1);
    let net = strol::net::CorrectionNet::load(dir.path().join("robot_strol.strl")).unwrap();
    assert_eq!(net.layer_dims().len(), 6);
}

#[test]
fn default_robot_config_trains_for_500_epochs() {
    let cfg = strol::config::Config::load(shipped("robot.toml")).unwrap();
    assert_eq!(cfg.train_config().epochs, 500);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(["strol", "train", "--config", "/no/such/file.toml", "--out", out]), 2);
    let bad = write_config(dir.path(), "bad.toml", "[env]\nname = \"robot\"\n[train]\nepoch = 3\n");
    assert_eq!(run(["strol", "train", "--config", &bad, "--out", out]), 2);
    let args = strol::cli::TrainArgs {
        common: strol::cli::Common {
            config: bad.into(),
            seed: None,
            out: out.into(),
        },
        epochs: None,
        rule: None,
    };
    let msg = strol::cli::cmd_train(&args).unwrap_err().to_string();
    assert!(msg.contains("line 4") && msg.contains("epoch"), "{msg}");
    let unknown_env = write_config(dir.path(), "env.toml", "[env]\nname = \"boat\"\n");
    assert_eq!(run(["strol", "eval", "--config", &unknown_env, "--out", out]), 2);
}

#[test]
fn bench_with_no_rules_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.toml",
        "[env]\nname = \"demo2d\"\n[bench]\nrules = []\nepisodes = 2\n",
    );
    assert_eq!(run(["strol", "bench", "--config", &cfg, "--out", dir.path().to_str().unwrap()]), 2);
}

#[test]
fn missing_network_is_skipped_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.toml",
        "[env]\nname = \"demo2d\"\n[bench]\nrules = [\"gradient\", \"strol\"]\nepisodes = 3\n[weights]\nstrol = \"missing.strl\"\n",
    );
    assert_eq!(run(["strol", "bench", "--config", &cfg, "--out", dir.path().to_str().unwrap()]), 0);
    let rows = data_rows(&dir.path().join("summary.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ends_with(",ok"));
    assert!(rows[1].contains("skipped"));
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text = |seed: u64| {
        format!("[env]\nname = \"demo2d\"\n[human]\nsigma = 0.2\n[bench]\nrules = [\"gradient\"]\nepisodes = 4\nseed = {seed}\n")
    };
    let a = write_config(dir.path(), "a.toml", &text(1));
    let b = write_config(dir.path(), "b.toml", &text(9));
    let out_a: PathBuf = dir.path().join("a");
    let out_b: PathBuf = dir.path().join("b");
    assert_eq!(run(["strol", "bench", "--config", &a, "--seed", "9", "--out", out_a.to_str().unwrap()]), 0);
    assert_eq!(run(["strol", "bench", "--config", &b, "--out", out_b.to_str().unwrap()]), 0);
    let ea = fs::read_to_string(out_a.join("episodes.csv")).unwrap();
    let eb = fs::read_to_string(out_b.join("episodes.csv")).unwrap();
    assert!(ea.lines().next().unwrap().contains("seed=9"));
    assert_eq!(data_rows(&out_a.join("episodes.csv")), data_rows(&out_b.join("episodes.csv")));
    assert_ne!(ea, eb, "headers carry different config hashes");
}

#[test]
fn basin_export_has_one_row_per_cell_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["strol", "basin", "--config", &shipped("demo2d.toml"), "--rule", "gradient", "--resolution", "3", "--out", out];
    assert_eq!(run(args), 0);
    let path = dir.path().join("basin_demo2d_gradient.csv");
    let first = fs::read(&path).unwrap();
    assert_eq!(data_rows(&path).len(), 9);
    assert_eq!(run(args), 0);
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn basin_on_three_dimensional_actions_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let code = run([
        "strol",
        "basin",
        "--config",
        &shipped("robot.toml"),
        "--rule",
        "gradient",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn eval_writes_per_episode_table() {
    let dir = tempfile::tempdir().unwrap();
    let code = run([
        "strol",
        "eval",
        "--config",
        &shipped("highway.toml"),
        "--rule",
        "one",
        "--episodes",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(data_rows(&dir.path().join("eval_highway_one.csv")).len(), 3);
}

#[test]
fn busy_port_exits_three() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let code = run(["strol", "serve", "--config", &shipped("demo2d.toml"), "--rule", "gradient", "--port", &port]);
    assert_eq!(code, 3);
}

#[test]
fn smoke_sweep_finishes_within_a_minute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        "[env]\nname = \"robot\"\n[bench]\nrules = [\"gradient\", \"mof\"]\nepisodes = 5\n",
    );
    let start = std::time::Instant::now();
    assert_eq!(run(["strol", "bench", "--config", &cfg, "--out", dir.path().to_str().unwrap()]), 0);
    assert!(start.elapsed().as_secs_f64() < 60.0);
    assert_eq!(data_rows(&dir.path().join("summary.csv")).len(), 2);
    assert_eq!(data_rows(&dir.path().join("episodes.csv")).len(), 10);
}
