use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sgraphs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgraphs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&sgraphs(&[])), 1);
    assert_eq!(code(&sgraphs(&["frobnicate"])), 1);
    assert_eq!(code(&sgraphs(&["run", "somewhere"])), 1, "missing --config and --out");
    assert_eq!(
        code(&sgraphs(&["run", "d", "--config", "c", "--out", "o", "--odom", "gps"])),
        1
    );
    assert_eq!(
        code(&sgraphs(&[
            "simulate",
            "w.json",
            "--waypoints",
            "w",
            "--out",
            "o",
            "--seed",
            "x"
        ])),
        1
    );
    let help = sgraphs(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("eval-map"));
}

#[test]
fn data_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "").unwrap();
    let missing = tmp.path().join("missing");
    let o = sgraphs(&[
        "run",
        p(&missing),
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());

    let bad = tmp.path().join("bad.tum");
    fs::write(&bad, "0 1 2\n").unwrap();
    assert_eq!(code(&sgraphs(&["eval", "--est", p(&bad), "--ref", p(&bad)])), 2);

    fs::write(&cfg, "scene.nonsense = 1\n").unwrap();
    let o = sgraphs(&[
        "run",
        p(&missing),
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("scene.nonsense"));

    let world = tmp.path().join("world.json");
    fs::write(&world, "{\"floors\": []}").unwrap();
    let wps = tmp.path().join("w.txt");
    fs::write(&wps, "1 1\n2 2\n").unwrap();
    let o = sgraphs(&[
        "simulate",
        p(&world),
        "--waypoints",
        p(&wps),
        "--out",
        p(&tmp.path().join("d")),
        "--seed",
        "0",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_run_and_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let w = tmp.path().join("w");
    assert_eq!(code(&sgraphs(&["scenario", "two-floors", "--out", p(&w)])), 0);
    // first two waypoints only: one room pair on the ground floor
    let wps = fs::read_to_string(w.join("waypoints.txt")).unwrap();
    let short: String = wps.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(w.join("short.txt"), short).unwrap();

    let data = tmp.path().join("data");
    let sim = sgraphs(&[
        "simulate",
        p(&w.join("world.json")),
        "--waypoints",
        p(&w.join("short.txt")),
        "--out",
        p(&data),
        "--seed",
        "3",
    ]);
    assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
    for f in ["world.json", "gt.tum", "odom.tum", "scans/scan_000000.xyz"] {
        assert!(data.join(f).is_file(), "{f}");
    }

    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# defaults\noptimize_every = 3\n").unwrap();
    let out = tmp.path().join("out");
    let run = sgraphs(&["run", p(&data), "--config", p(&cfg), "--out", p(&out), "--seed", "1"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["est.tum", "map.xyz", "sgraph.json", "report.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let scene: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sgraph.json")).unwrap()).unwrap();
    assert!(scene["graph"]["variables"].as_array().is_some_and(|v| !v.is_empty()));

    let ev = sgraphs(&[
        "eval",
        "--est",
        p(&out.join("est.tum")),
        "--ref",
        p(&data.join("gt.tum")),
    ]);
    assert_eq!(code(&ev), 0);
    let ev: serde_json::Value = serde_json::from_slice(&ev.stdout).unwrap();
    assert_eq!(ev["ate_rmse"], report["ate_rmse"]);

    let em = sgraphs(&[
        "eval-map",
        "--est",
        p(&out.join("map.xyz")),
        "--world",
        p(&data.join("world.json")),
    ]);
    assert_eq!(code(&em), 0);
    let em: serde_json::Value = serde_json::from_slice(&em.stdout).unwrap();
    assert_eq!(em["map_rmse"], report["map_rmse"]);
}
