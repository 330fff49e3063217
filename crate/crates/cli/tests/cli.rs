use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
algorithm = "figar-a3c"
repetition_set = "figar-3"
eval_episodes = 4

[env]
name = "corridor"
length = 4

[a3c]
total_decision_steps = 600
critic_hidden = [8]
log_interval = 200

[a3c.policy]
hidden = [8]
activation = "tanh"
"#;

fn figar(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_figar"));
    cmd.args(args).env_remove("FIGAR_SEED").env_remove("FIGAR_OUTPUT_ROOT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn first_line(out: &Output) -> PathBuf {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8_lossy(&out.stdout).lines().next().unwrap())
}

#[test]
fn run_writes_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", CONFIG);
    let root = tmp.path().join("runs");
    let dir = first_line(&figar(
        &["run", cfg.to_str().unwrap(), "--output-root", root.to_str().unwrap()],
        &[],
    ));
    assert!(dir.starts_with(&root));
    for f in ["training_log.csv", "eval.csv", "histogram.csv", "manifest.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn environment_overrides_seed_and_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", CONFIG);
    let root = tmp.path().join("elsewhere");
    let dir = first_line(&figar(
        &["run", cfg.to_str().unwrap()],
        &[("FIGAR_SEED", "17"), ("FIGAR_OUTPUT_ROOT", root.to_str().unwrap())],
    ));
    assert!(dir.starts_with(&root));
    let name = dir.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("figar-a3c_corridor4_figar-3_17_"), "{name}");
}

#[test]
fn invalid_config_fails_with_field_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &CONFIG.replace("eval_episodes", "eval_episode"));
    let out = figar(&["run", cfg.to_str().unwrap(), "--output-root", tmp.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eval_episode"));
}

#[test]
fn baseline_compare_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("runs");
    let r = root.to_str().unwrap();
    let f = write_config(tmp.path(), "f.toml", CONFIG);
    let b = write_config(tmp.path(), "b.toml", &CONFIG.replace("figar-a3c", "baseline-a3c"));
    let fdir = first_line(&figar(&["run", f.to_str().unwrap(), "--output-root", r], &[]));
    let bdir = first_line(&figar(&["run", b.to_str().unwrap(), "--output-root", r], &[]));
    let manifest = fs::read_to_string(bdir.join("manifest.json")).unwrap();
    assert!(manifest.replace([' ', '\n'], "").contains("\"repetition_set\":[1]"), "{manifest}");

    let out = figar(&["compare", fdir.to_str().unwrap(), bdir.to_str().unwrap()], &[]);
    assert!(out.status.success());
    let csv = fs::read_to_string(fdir.join("comparison.csv")).unwrap();
    assert!(csv.starts_with("task,figar,baseline,improvement"));

    let out = figar(&["report", fdir.to_str().unwrap(), "--episodes", "3", "--ps", "0,1"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(fdir.join("sweep.csv")).unwrap().lines().count(), 3);
}

#[test]
fn oracle_dumps_the_optimal_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", CONFIG);
    let out_csv = tmp.path().join("oracle.csv");
    let out = figar(&["oracle", cfg.to_str().unwrap(), "--out", out_csv.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("start_value"));
    let csv = fs::read_to_string(&out_csv).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "state,a_star,x_star,v_star");
    assert_eq!(csv.lines().count(), 1 + 5);
}

#[test]
fn sweep_runs_every_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", CONFIG);
    let root = tmp.path().join("runs");
    let out = figar(
        &["sweep", cfg.to_str().unwrap(), "--variants", "figar-2", "figar-4", "--output-root", root.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = PathBuf::from(String::from_utf8_lossy(&out.stdout).lines().last().unwrap());
    assert_eq!(fs::read_to_string(summary).unwrap().lines().count(), 4);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        figar::experiment::ExperimentConfig::load(&p)
            .and_then(|c| c.resolved())
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
