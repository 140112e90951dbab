use hbl_core::io::write_trajectory;
use hbl_core::model::WeightMatrix;
use hbl_core::simulate::WeightTrajectory;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hbl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbl"))
        .current_dir(dir)
        .args(args)
        .env_remove("HBL_WORKERS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn summary(dir: &Path, command: &str) -> serde_json::Value {
    let text = fs::read_to_string(dir.join(format!("{command}-summary.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const SMALL: &str = r#"{"network": {"n": 8, "t_train": 120}}"#;

#[test]
fn train_small_network_stays_in_weight_box() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", SMALL);
    let out = hbl(dir.path(), &["train", "--config", "c.json", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("o/trajectory.hbl").exists());
    let rows = csv_rows(&dir.path().join("o/weights_summary.csv"));
    assert_eq!(rows.len(), 241);
    for r in &rows {
        let max: f64 = r[1].parse().unwrap();
        assert!(max < 1.0);
    }
    let s = summary(&dir.path().join("o"), "train");
    assert_eq!(s["status"], "ok");
    assert_eq!(s["metrics"]["weights_within_box"], true);
    assert_eq!(s["seed"], 1);
}

#[test]
fn train_reruns_are_byte_identical_for_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", SMALL);
    assert!(hbl(
        dir.path(),
        &["train", "--config", "c.json", "--out", "a", "--workers", "1"]
    )
    .status
    .success());
    assert!(hbl(
        dir.path(),
        &["train", "--config", "c.json", "--out", "b", "--workers", "3"]
    )
    .status
    .success());
    for f in [
        "trajectory.hbl",
        "training_set.csv",
        "weights_summary.csv",
        "train-summary.json",
    ] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", SMALL);
    assert!(hbl(dir.path(), &["train", "--config", "c.json", "--out", "a"])
        .status
        .success());
    assert!(hbl(
        dir.path(),
        &["train", "--config", "c.json", "--out", "b", "--seed", "2"]
    )
    .status
    .success());
    assert_ne!(
        fs::read(dir.path().join("a/trajectory.hbl")).unwrap(),
        fs::read(dir.path().join("b/trajectory.hbl")).unwrap()
    );
    assert_eq!(summary(&dir.path().join("b"), "train")["seed"], 2);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(p, "unknown.json", r#"{"network": {"n": 8, "bogus": 1}}"#);
    write(p, "invalid.json", r#"{"network": {"n": 8, "g": -1}}"#);
    let cases: [&[&str]; 6] = [
        &["train", "--config", "unknown.json"],
        &["train", "--config", "invalid.json"],
        &["train", "--config", "missing.json"],
        &["scan", "--snapshot", "missing.hbl"],
        &["scan", "--t-range", "5:1"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = hbl(p, args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn integration_blowup_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"network": {"n": 4}, "integrator": {"method": "rk4", "dt": 12}, "train": {"sample_dt": 12}}"#,
    );
    let out = hbl(dir.path(), &["train", "--config", "c.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&dir.path().join("o"), "train")["status"], "exit 3");
}

#[test]
fn scan_of_zero_weights_has_one_branch_and_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
    let snaps = vec![WeightMatrix::<f64>::zeros(5); times.len()];
    let traj = WeightTrajectory::from_snapshots(times, snaps).unwrap();
    write_trajectory(&traj, fs::File::create(dir.path().join("zero.hbl")).unwrap()).unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"network": {"n": 5}, "scan": {"random_seeds": 20}}"#,
    );
    let out = hbl(
        dir.path(),
        &[
            "scan",
            "--config",
            "c.json",
            "--snapshot",
            "zero.hbl",
            "--t-range",
            "0:10",
            "--out",
            "o",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o");
    assert!(csv_rows(&o.join("events.csv")).is_empty());
    let s = summary(&o, "scan");
    assert_eq!(s["metrics"]["branches"], 1);
    assert_eq!(s["metrics"]["events"], 0);
    let svg = fs::read_to_string(o.join("diagram.svg")).unwrap();
    assert!(svg.contains(r#"version="1.1""#) && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn demo_n3_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = hbl(dir.path(), &["demo-n3", "--out", "d"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d = dir.path().join("d");

    let crossings = csv_rows(&d.join("crossings.csv"));
    assert!(crossings.len() >= 3);
    assert!(crossings.windows(2).all(|w| w[0][1] != w[1][1]));

    for r in csv_rows(&d.join("census.csv")) {
        let stable: usize = r[1].parse().unwrap();
        assert!(stable == 1 || stable == 2);
    }
    let forgetting = csv_rows(&d.join("forgetting.csv"));
    assert!(forgetting.iter().any(|r| r[6] == "false"));

    let times: Vec<f64> = csv_rows(&d.join("events.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
    assert!(fs::read_to_string(d.join("pitchfork_surface.obj"))
        .unwrap()
        .contains("\nv "));

    // The stored trajectory feeds the other commands.
    let out = hbl(
        dir.path(),
        &[
            "memories",
            "--snapshot",
            "d/trajectory.hbl",
            "--t-range",
            "40:90",
            "--out",
            "m",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(
        summary(&dir.path().join("m"), "memories")["metrics"]["forgetting_incidents"]
            .as_u64()
            .unwrap()
            >= 1
    );
}

#[test]
fn basins_planes_and_saddles_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(hbl(p, &["demo-n3", "--out", "d"]).status.success());
    write(p, "c.json", r#"{"basins": {"resolution": 21, "t": 96}}"#);
    for o in ["a", "b"] {
        let out = hbl(
            p,
            &[
                "basins",
                "--config",
                "c.json",
                "--snapshot",
                "d/trajectory.hbl",
                "--out",
                o,
            ],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = p.join("a");
    let planes = (0..12).filter(|k| a.join(format!("plane_{k:02}.ppm")).exists()).count();
    assert_eq!(planes, 12);
    let saddles = csv_rows(&a.join("boundary_report.csv")).len();
    assert!(saddles >= 1);
    assert!(a.join("saddle_00.ppm").exists() && a.join("palette.csv").exists());
    let ppm = fs::read(a.join("plane_00.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n21 21\n255\n"));
    assert_eq!(ppm.len(), b"P6\n21 21\n255\n".len() + 21 * 21 * 3);
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(p.join("b").join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn manifold_sections_on_small_network() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(
        p,
        "c.json",
        r#"{"network": {"n": 16, "g": 1.6, "t_train": 48}, "scan": {"random_seeds": 100}}"#,
    );
    assert!(hbl(p, &["train", "--config", "c.json", "--out", "t"]).status.success());
    let out = hbl(
        p,
        &[
            "manifold",
            "--config",
            "c.json",
            "--snapshot",
            "t/trajectory.hbl",
            "--t-range",
            "20:26",
            "--out",
            "m",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = p.join("m");
    let rows = csv_rows(&m.join("sections.csv"));
    assert!(!rows.is_empty());
    let residual: f64 = rows[0][6].parse().unwrap();
    assert!(residual < 1e-8);
    assert!(m.join("section_00.obj").exists());
}
