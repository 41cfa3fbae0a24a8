use sslio_core::io::{read_scan, read_tum, scan_file_name, write_scan};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn sslio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sslio")).args(args).output().expect("spawn sslio")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A simulated room sequence cut to its first 30 sweeps, shared by tests.
fn dataset() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let out = sslio(&["simulate", "--scenario", "room-short", "--out", s(&dir), "--seed", "4"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for k in 30..100 {
            std::fs::remove_file(dir.join("scans").join(scan_file_name(k))).unwrap();
        }
        dir
    })
}

fn run(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let (config, scans, imu) = (data.join("config.txt"), data.join("scans"), data.join("imu.csv"));
    let mut args = vec!["run", "--config", s(&config), "--scans", s(&scans), "--imu", s(&imu), "--out", s(out)];
    args.extend_from_slice(extra);
    sslio(&args)
}

#[test]
fn simulate_run_eval_round_trip() {
    let data = dataset();
    for f in ["imu.csv", "truth.tum", "config.txt", "scans/scan_000000.lios"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let out = tempfile::tempdir().unwrap();
    let r = run(data, out.path(), &[]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["trajectory.tum", "odometry.tum", "map.ply", "report.txt"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    assert!(!out.path().join("FAILED").exists());
    assert_eq!(read_tum(&out.path().join("trajectory.tum")).unwrap().len(), 30);

    let e = sslio(&["eval", "--est", s(&out.path().join("trajectory.tum")), "--ref", s(&data.join("truth.tum"))]);
    assert!(e.status.success());
    let text = String::from_utf8(e.stdout).unwrap();
    let rmse: f64 = text.lines().find_map(|l| l.strip_prefix("ape_rmse=")).unwrap().parse().unwrap();
    assert!(rmse < 0.05, "{text}");
    assert!(text.contains("end_to_end="));
}

#[test]
fn runs_are_bit_identical() {
    let data = dataset();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run(data, a.path(), &["--seed", "9"]).status.success());
    assert!(run(data, b.path(), &["--seed", "9"]).status.success());
    for f in ["trajectory.tum", "odometry.tum", "map.ply", "report.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let report = std::fs::read_to_string(a.path().join("report.txt")).unwrap();
    assert!(report.contains("seed=9"));
}

#[test]
fn mode_flags_reach_the_report() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    assert!(run(data, out.path(), &["--no-imu", "--no-loop"]).status.success());
    assert!(std::fs::read_to_string(out.path().join("report.txt")).unwrap().contains("mode=no-imu"));
    assert!(run(data, out.path(), &["--frontend-only"]).status.success());
    assert!(std::fs::read_to_string(out.path().join("report.txt")).unwrap().contains("mode=dead-reckoning"));
}

#[test]
fn input_errors_exit_with_2() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();

    let missing = sslio(&["run", "--config", s(&data.join("config.txt")), "--scans", "/nonexistent", "--imu", s(&data.join("imu.csv")), "--out", s(out.path())]);
    assert_eq!(missing.status.code(), Some(2));

    let empty = tempfile::tempdir().unwrap();
    let r = sslio(&["run", "--config", s(&data.join("config.txt")), "--scans", s(empty.path()), "--imu", s(&data.join("imu.csv")), "--out", s(out.path())]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no scans"));

    // IMU ending before the last sweep
    let short = out.path().join("short.csv");
    let text = std::fs::read_to_string(data.join("imu.csv")).unwrap();
    std::fs::write(&short, text.lines().take(300).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let r = sslio(&["run", "--config", s(&data.join("config.txt")), "--scans", s(&data.join("scans")), "--imu", s(&short), "--out", s(out.path())]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("uncovered interval"));

    let bad = out.path().join("bad.txt");
    std::fs::write(&bad, "no_such_key=1\n").unwrap();
    let r = sslio(&["run", "--config", s(&bad), "--scans", s(&data.join("scans")), "--imu", s(&data.join("imu.csv")), "--out", s(out.path())]);
    assert_eq!(r.status.code(), Some(2));

    let r = sslio(&["eval", "--est", s(&bad), "--ref", s(&data.join("truth.tum"))]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn tracking_loss_writes_partial_output_and_exits_3() {
    let data = dataset();
    let blank = tempfile::tempdir().unwrap();
    for k in 0..12 {
        let mut w = read_scan(&data.join("scans").join(scan_file_name(k))).unwrap();
        if k >= 6 {
            w.points.iter_mut().for_each(|p| p.valid = false);
        }
        write_scan(&blank.path().join(scan_file_name(k)), &w).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let r = sslio(&["run", "--config", s(&data.join("config.txt")), "--scans", s(blank.path()), "--imu", s(&data.join("imu.csv")), "--out", s(out.path())]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.path().join("FAILED").exists());
    let partial = read_tum(&out.path().join("trajectory.tum")).unwrap();
    assert!(partial.len() >= 6 && partial.len() < 12);
}
