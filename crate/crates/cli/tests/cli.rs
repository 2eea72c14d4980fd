use std::path::Path;
use std::process::{Command, Output};

fn disco(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disco"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_documents_csv_schemas_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = disco(&["--help"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("value,trial,metric,metric_value"));
    assert!(text.contains("beta,oracle_1..oracle_6,sum_beta"));
    assert!(text.contains("3 data I/O error"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"task":"denoise","denoise":{"patchez":3}}"#).unwrap();
    let o = disco(&["run", "--config", "c.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("patchez"), "{}", stderr(&o));

    let o = disco(&["dopnp", "sweep", "--vary", "colour"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_disco"))
        .args(["do1d", "run", "--beta", "1"])
        .env("DISCO_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3_and_numerical_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = disco(&["doreg", "solve", "--model", "m.ply", "--scene", "s.ply", "--sum", "x.dosum", "--out", "p.json"], dir.path());
    assert_eq!(o.status.code(), Some(3));

    std::fs::write(dir.path().join("bad.pgm"), b"P5\n4 4\n255\n\x01\x02").unwrap();
    let o = disco(&["dodenoise", "noise", "--in", "bad.pgm", "--rate", "0.2", "--out", "n.pgm"], dir.path());
    assert_eq!(o.status.code(), Some(3));

    let ply = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 1 1\n1 1 1\n1 1 1\n";
    std::fs::write(dir.path().join("flat.ply"), ply).unwrap();
    let o = disco(&["doreg", "train", "--model", "flat.ply", "--out", "r.dosum", "--n-train", "5"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn echoed_config_reproduces_the_results() {
    let dir = tempfile::tempdir().unwrap();
    let o = disco(
        &["do1d", "run", "--beta", "2,5", "--train", "200", "--test", "40", "--max-maps", "4", "--seed", "8", "--out", "first/table1.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("first/table1.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "beta,oracle_1,oracle_2,oracle_3,oracle_4,oracle_5,oracle_6,sum_beta");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("5,"));
    assert_eq!(lines[1].split(',').count(), 8);

    let o = disco(&["run", "--config", "first/table1.config.json", "--out", "second/table1.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["table1.csv", "table1.training.csv", "table1.beta2.dosum"] {
        let a = std::fs::read(dir.path().join("first").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("second").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    assert!(dir.path().join("second/table1.timing.csv").exists());
}

#[test]
fn trained_sums_feed_the_solvers() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = disco(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["dopnp", "gen", "--out", "m.csv", "--k", "k.txt", "--outliers", "0.2", "--noise", "0", "--seed", "4"]);
    run(&["dopnp", "train", "--out", "p.dosum", "--n-train", "400", "--maps", "10"]);
    run(&["dopnp", "solve", "--in", "m.csv", "--k", "k.txt", "--sum", "p.dosum", "--out", "pose.json"]);
    let pose: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("pose.json")).unwrap()).unwrap();
    assert_eq!(pose["rotation"].as_array().unwrap().len(), 3);
    assert!(pose["inliers"].as_array().unwrap().len() >= 300);

    run(&["doreg", "model", "--dim", "2", "--points", "60", "--out", "fish.csv"]);
    let out = run(&["doreg", "scene", "--model", "fish.csv", "--out", "scene.csv", "--seed", "2"]);
    let truth = out.lines().find_map(|l| l.strip_prefix("truth ")).unwrap().to_string();
    run(&["doreg", "train", "--model", "fish.csv", "--dim", "2", "--out", "r.dosum", "--n-train", "300", "--maps", "8"]);
    run(&["doreg", "solve", "--model", "fish.csv", "--scene", "scene.csv", "--sum", "r.dosum", "--out", "r.json", "--truth", &truth]);
    let pose: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(pose["se"].as_array().unwrap().len(), 3);
    assert!(pose["mean_error"].as_f64().unwrap().is_finite());
}
