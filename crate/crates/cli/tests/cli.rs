use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"))
}

fn h2jet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_h2jet")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SMALL: [&str; 6] = ["--epochs", "30", "--width", "4", "--depth", "1"];

#[test]
fn oracle_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = h2jet(&["oracle", "--scenario", s(&scenario("subsonic")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "s,s_over_d,u_cl,b,rho_cl,Y_cl,X_cl,theta,x,z");
    assert_eq!(text.lines().count(), 1 + 3001);
}

#[test]
fn nozzle_reports_throat_and_notional_exit() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("nozzle.json");
    let out = h2jet(&["nozzle", "--pressure-bar", "10", "--diameter-mm", "1", "--out", s(&json)]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("throat") && stdout.contains("notional exit"), "{stdout}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    let rho1 = v["throat"]["rho1"].as_f64().unwrap();
    assert!((rho1 - 0.521).abs() / 0.521 < 0.02);
}

#[test]
fn gen_sensors_is_deterministic_and_k_equals_total_keeps_every_point() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let sc = scenario("under_expanded_vertical");
        let args = ["gen-sensors", "--scenario", s(&sc), "--out", s(d.path())];
        let out = h2jet(&[&args[..], &["--noise", "0.05", "--seed", "7"]].concat());
        assert_eq!(code(&out), 0);
    }
    for f in ["sensors.csv", "eval.csv"] {
        assert_eq!(std::fs::read(dirs[0].path().join(f)).unwrap(), std::fs::read(dirs[1].path().join(f)).unwrap());
    }
    let sensors = std::fs::read_to_string(dirs[0].path().join("sensors.csv")).unwrap();
    assert_eq!(sensors.lines().count(), 1 + 5);

    let all = tempfile::tempdir().unwrap();
    let out = h2jet(&["gen-sensors", "--scenario", s(&scenario("subsonic")), "--out", s(all.path()), "--k", "20"]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(all.path().join("sensors.csv")).unwrap(),
        std::fs::read(all.path().join("eval.csv")).unwrap()
    );
}

#[test]
fn train_then_eval_reproduces_the_reported_mse() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let sc = scenario("subsonic");
    let args = ["train", "--scenario", s(&sc), "--out", s(&run), "--seed", "3"];
    let out = h2jet(&[&args[..], &SMALL[..]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "sensors.csv", "eval.csv", "report.json", "timings.json", "curve.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let scored = dir.path().join("scored");
    let out = h2jet(&["eval", "--scenario", s(&scenario("subsonic")), "--run", s(&run), "--out", s(&scored)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let read = |p: PathBuf| -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap() };
    let trained = read(run.join("report.json"))["mse"]["mole_pct2"].as_f64().unwrap();
    let scored = read(scored.join("mse.json"))["mole_pct2"].as_f64().unwrap();
    assert!((trained - scored).abs() <= 1e-12 * trained.abs(), "{trained} vs {scored}");
}

#[test]
fn missing_scenario_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = h2jet(&["oracle", "--scenario", s(&dir.path().join("nope.scn")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn malformed_inputs_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    std::fs::write(&bad, "name = x\norientation = sideways\n").unwrap();
    assert_eq!(code(&h2jet(&["oracle", "--scenario", s(&bad), "--out", s(dir.path())])), 2);

    let sensors = dir.path().join("sensors.csv");
    std::fs::write(&sensors, "s_over_d,mole_frac_pct,mass_frac,rho_cl\n10,abc,0.1,1.0\n").unwrap();
    let sc = scenario("subsonic");
    let args = ["train", "--scenario", s(&sc), "--sensors", s(&sensors), "--out", s(dir.path())];
    assert_eq!(code(&h2jet(&[&args[..], &SMALL[..]].concat())), 2);
}

#[test]
fn unchoked_release_is_a_physics_error() {
    let out = h2jet(&["nozzle", "--pressure-bar", "1.5", "--diameter-mm", "1"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn compare_exits_with_divergence_when_every_seed_blows_up() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("subsonic");
    let args = [
        "compare", "--scenario", s(&sc), "--out", s(dir.path()), "--backbone", "dense", "--seed", "0",
        "--seed", "1", "--epochs", "300", "--width", "4", "--depth", "1", "--lr", "1e12",
    ];
    let out = h2jet(&args);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn compare_writes_report_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("subsonic");
    let args = ["compare", "--scenario", s(&sc), "--out", s(dir.path()), "--seed", "0", "--sequential"];
    let out = h2jet(&[&args[..], &SMALL[..]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("graph") && stdout.contains("dense"), "{stdout}");
    let curves = std::fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv")).count();
    assert_eq!(curves, 2);
    assert!(dir.path().join("timings.json").exists());
}
