use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mmscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmscan")).args(args).output().expect("run mmscan")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn probe_calibration_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[simulate]\nprotocol = \"probe-calib-5x30\"\ncalibrations = 2\n").unwrap();
    let data = dir.path().join("data");
    let out = mmscan(&["simulate", "--config", p(&cfg), "--seed", "11", "--out", p(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("calib_1/poses.txt").exists());

    let res = dir.path().join("res");
    let out = mmscan(&["calibrate", p(&data), "--mode", "probe", "--out", p(&res), "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("probe calib_0: rms"), "{text}");
    assert!(text.contains("CR1"));
    let report = fs::read_to_string(res.join("calibrate.toml")).unwrap();
    assert!(!report.contains("generated_unix"));

    let out = mmscan(&["evaluate", p(&data), "--results", p(&res), "--out", p(&res)]);
    assert!(out.status.success());
    let eval = fs::read_to_string(res.join("evaluate.toml")).unwrap();
    assert!(eval.contains("[probe]") && eval.contains("cr1_center_mm") && eval.contains("pooled_rms_mm"), "{eval}");
}

#[test]
fn same_seed_reproduces_reports_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let data = dir.path().join(run);
        let out = mmscan(&["simulate", "--protocol", "sphere", "--seed", "5", "--out", p(&data)]);
        assert!(out.status.success());
        let res = data.join("res");
        let cal = data.join("truth/calibration.toml");
        let out = mmscan(&["reconstruct", p(&data), "--calib", p(&cal), "--out", p(&res), "--deterministic"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("sphere radius"));
        reports.push((fs::read(res.join("reconstruct.toml")).unwrap(), fs::read(res.join("scan_0.ply")).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmscan(&["simulate", "--protocol", "cube", "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown protocol"));

    // Too few cross-wire frames is degenerate input.
    let data = dir.path().join("few");
    let cfg = dir.path().join("few.toml");
    fs::write(&cfg, "[simulate]\nprotocol = \"probe-calib-5x30\"\ncalibrations = 1\nframes = 4\n").unwrap();
    assert!(mmscan(&["simulate", "--config", p(&cfg), "--out", p(&data)]).status.success());
    let out = mmscan(&["calibrate", p(&data), "--mode", "probe", "--out", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // An iteration budget of one cannot converge.
    let data = dir.path().join("rig");
    let cfg = dir.path().join("rig.toml");
    fs::write(&cfg, "[simulate]\nprotocol = \"rig-calib\"\nposes = 6\n[calibrate]\nmax_iterations = 1\n").unwrap();
    assert!(mmscan(&["simulate", "--config", p(&cfg), "--out", p(&data)]).status.success());
    let out = mmscan(&["calibrate", p(&data), "--config", p(&cfg), "--mode", "stereo", "--out", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // A dataset without poses.txt cannot be calibrated.
    fs::remove_file(dir.path().join("few/calib_0/poses.txt")).unwrap();
    let out = mmscan(&["calibrate", p(&data.with_file_name("few")), "--mode", "probe", "--out", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("poses.txt"));
}
