use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
format = 1
seed = 3

[agent.obs]
size = 16

[sac]
batch_size = 8
buffer_capacity = 64
anneal_steps = 10

[sac.net]
grid_size = 16
filters = [4]
hidden = [16]

[sac.obs]
size = 16

[train]
steps = 20
t_max = 8.0
checkpoint_every = 10

[eval]
t_max = 8.0
time_decisions = false
"#;

fn cfn(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_cfn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run cfn");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = cfn(
        dir.path(),
        &["--out", "o", "generate-scenarios", "--families", "cross_right,cross_left", "--speeds", "1.2", "--distances", "30"],
    );
    assert!(out.status.success());
    dir
}

#[test]
fn train_evaluate_report_pipeline() {
    let dir = setup();
    let d = dir.path();
    assert!(cfn(d, &["--config", "tiny.toml", "--out", "o", "train", "--scenarios", "o/scenarios.toml"]).status.success());
    for f in ["policy.ckpt", "train.csv", "run.toml", "checkpoints/step_0000010.ckpt", "checkpoints/step_0000020.ckpt"] {
        assert!(d.join("o").join(f).exists(), "{f}");
    }

    let eval = ["--config", "tiny.toml", "--out", "o", "evaluate", "--scenarios", "o/scenarios", "--checkpoint", "o/policy.ckpt"];
    let out = cfn(d, &eval);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("policy,si,crash_pct,near_miss_pct,ttg_s,comfort,exec_ms\n"));
    assert_eq!(stdout.lines().count(), 6);
    let first = std::fs::read(d.join("o/metrics.csv")).unwrap();
    assert!(cfn(d, &eval).status.success());
    assert_eq!(std::fs::read(d.join("o/metrics.csv")).unwrap(), first);
    assert!(d.join("o/charts/si.svg").exists());
    assert_eq!(std::fs::read_dir(d.join("o/traces/hylear")).unwrap().count(), 2);

    assert!(cfn(d, &["--config", "tiny.toml", "--out", "r", "report", "--traces", "o/traces"]).status.success());
    assert_eq!(std::fs::read(d.join("r/metrics.csv")).unwrap(), first);
}

#[test]
fn plan_dumps_maps_and_speed_values() {
    let dir = setup();
    let d = dir.path();
    let out = cfn(d, &["--out", "o", "plan", "--scenarios", "o/scenarios.toml", "--scenario", "1", "--time", "2", "--dump-maps", "--speed"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("<- selected"), "{stdout}");
    assert!(stdout.contains("<- chosen"), "{stdout}");
    for kind in ["base", "sidewalk", "predictive"] {
        let pgm = std::fs::read(d.join(format!("o/maps/{kind}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n"));
        assert!(d.join(format!("o/maps/{kind}.txt")).exists());
    }
    let svg = std::fs::read_to_string(d.join("o/maps/overlay.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn exit_codes_by_category() {
    let dir = setup();
    let d = dir.path();
    let code = |args: &[&str]| cfn(d, args).status.code();
    // Configuration: bad format, unknown policy, learner without weights.
    std::fs::write(d.join("bad.toml"), "format = 7\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "generate-scenarios"]), Some(2));
    assert_eq!(code(&["--out", "o", "evaluate", "--scenarios", "o/scenarios.toml", "--policies", "nope"]), Some(2));
    assert_eq!(code(&["--out", "o", "evaluate", "--scenarios", "o/scenarios.toml", "--policies", "hylear"]), Some(2));
    assert_eq!(code(&["no-such-command"]), Some(2));
    // I/O and format: missing or corrupt checkpoint.
    std::fs::write(d.join("junk.ckpt"), b"nope").unwrap();
    let args = ["--out", "o", "evaluate", "--scenarios", "o/scenarios.toml", "--policies", "hylear", "--checkpoint"];
    assert_eq!(code(&[&args[..], &["junk.ckpt"]].concat()), Some(3));
    assert_eq!(code(&[&args[..], &["missing.ckpt"]].concat()), Some(3));
}
