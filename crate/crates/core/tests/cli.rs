use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_secure-platoon"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn short_config(dir: &std::path::Path, condition: &str) -> PathBuf {
    let text = std::fs::read_to_string(config("steady_state.cfg")).unwrap();
    let text = text
        .replace("duration = 1800.0", "duration = 120.0")
        .replace("condition = \"secured-with-attack\"", &format!("condition = \"{condition}\""));
    let path = dir.join("short.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_then_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "secured-with-attack");
    let gains = dir.path().join("gains.json");

    let out = bin().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(&gains).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&gains).unwrap()).unwrap();
    assert_eq!(file["gains"].as_array().unwrap().len(), 9);

    let run_dir = dir.path().join("run");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--gains")
        .arg(&gains)
        .args(["--seed", "7", "--out-dir"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("NC=0 "), "{stdout}");
    assert!(stdout.contains("F1="), "{stdout}");

    let trace = std::fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("k,t,e,v,a,dv,a_lead,u,d,y1,"), "{header}");
    assert!(header.contains("selected_j"));
    assert_eq!(lines.count(), 1201);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["metadata"]["seed"], 7);
    assert!(run_dir.join("spectrum.csv").exists());
}

#[test]
fn gains_fall_back_to_config_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "secured-no-attack");
    let out = bin().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("gains.json")).output().unwrap();
    assert!(out.status.success());
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out-dir").arg(dir.path().join("o")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "secured-with-attack");
    let out = bin().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("gains.json")).output().unwrap();
    assert!(out.status.success());
    let out = bin().args(["sweep", "--config"]).arg(&cfg).args(["--amplitudes", "1,10", "--reps", "2"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn missing_gains_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "secured-with-attack");
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out-dir").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "name = \"x\"\nduration = -1.0\n").unwrap();
    let out = bin().args(["synth", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&path, "this is not toml [").unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().args(["run", "--config"]).arg(dir.path().join("absent.cfg")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
