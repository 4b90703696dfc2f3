use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"schema":"ngl.experiment/1","grid_n":256,"eigen_count":9,"family_sizes":[4],
"local_family_sizes":[2,4],"crofton_samples":2000,"sample_grid_m":6}"#;

fn ngl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ngl")).args(args).output().expect("spawn ngl")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn missing_config_exits_2() {
    let out = ngl(&["spectrum", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_2_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema":"ngl.experiment/1","a":0.3}"#);
    let out = ngl(&["spectrum", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_command_is_rejected() {
    let out = ngl(&["bogus", "--config", "x.json"]);
    assert!(!out.status.success());
}

#[test]
fn spectrum_is_cached_and_crofton_runs_on_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();

    let first = ngl(&["spectrum", "--config", &cfg, "--out", o, "--threads", "1"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(!String::from_utf8_lossy(&first.stderr).contains("from cache"));
    let record = std::fs::read(out_dir.join("spectrum.record.json")).unwrap();

    let second = ngl(&["spectrum", "--config", &cfg, "--out", o, "--threads", "1"]);
    assert!(second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("spectrum served from cache"));
    assert_eq!(std::fs::read(out_dir.join("spectrum.record.json")).unwrap(), record);

    let c = ngl(&["crofton", "--config", &cfg, "--out", o, "--kernel", "circle", "--samples", "2000"]);
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
    let text = std::fs::read_to_string(out_dir.join("crofton.json")).unwrap();
    assert!(text.contains("circle"));
}
