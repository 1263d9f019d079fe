use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bcopt_core::io::read_medit;

fn bcopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcopt"))
        .current_dir(dir)
        .env_remove("BCOPT_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const CONFIG: &str = r#"{
    "mesh": {"shape": "disk", "target_h": 0.15},
    "physics": {"model": "conductivity", "f": "1 + x^2"},
    "region": {"arcs": [[4.0, 5.2]]},
    "objective": {"ell": 0.1},
    "optimizer": {"max_iter": 6, "n_top": 3},
    "output": {"directory": "run"}
}"#;

#[test]
fn mesh_gen_writes_an_audited_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bcopt(
        tmp.path(),
        &["--out", "m", "mesh", "gen", "--shape", "disk", "--target-h", "0.1"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("audit ok"));
    let text = fs::read_to_string(tmp.path().join("m/mesh.mesh")).unwrap();
    assert!(text.starts_with("# config_sha256 "));
    let mesh = read_medit(&text).unwrap();
    mesh.audit().unwrap();
    let vtk = fs::read_to_string(tmp.path().join("m/mesh.vtk")).unwrap();
    assert!(vtk.lines().nth(1).unwrap().contains("config_sha256"));
}

#[test]
fn bem_equilibrium_integral_is_near_eight() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bcopt(
        tmp.path(),
        &[
            "-q",
            "--out",
            "b",
            "bem",
            "equilibrium",
            "--h",
            "0.04",
            "--eta",
            "1e-5",
            "--no-metrics",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("b/equilibrium.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "h,eta,nodes,integral,center,R,A,E,warnings");
    assert_eq!(lines.len(), 3);
    let cells: Vec<&str> = lines[2].split(',').collect();
    let integral: f64 = cells[3].parse().unwrap();
    assert!((integral - 8.0).abs() <= 0.4, "integral {integral}");
}

#[test]
fn validate_topo2d_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bcopt(tmp.path(), &["validate", "--suite", "topo2d"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}");
    let pass = out.lines().filter(|l| l.starts_with("PASS")).count();
    assert_eq!(pass, 4, "{out}");
}

#[test]
fn optimize_outputs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), CONFIG).unwrap();
    for dir in ["a", "b"] {
        let o = bcopt(
            tmp.path(),
            &["-q", "--out", dir, "optimize", "--config", "c.json", "--snapshots"],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "history.csv",
        "region.csv",
        "region.vtk",
        "summary.json",
        "mesh.mesh",
        "snapshots/region_0003.csv",
    ] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let history = fs::read_to_string(tmp.path().join("a/history.csv")).unwrap();
    assert!(history.starts_with("# config_sha256 "));
    assert!(history.contains("\r\n"));
}

#[test]
fn solve_and_topo_field_use_the_config_directory() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), CONFIG).unwrap();
    for cmd in ["solve", "topo-field"] {
        let o = bcopt(tmp.path(), &["-q", cmd, "--config", "c.json"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "fields.csv",
        "fields.vtk",
        "solve.json",
        "topo_field_0.csv",
        "topo_field_0.vtk",
        "topo_field.json",
    ] {
        assert!(tmp.path().join("run").join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/solve.json")).unwrap()).unwrap();
    assert!(summary["objective"].as_f64().unwrap() > 0.0);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    fs::write(p.join("unknown.json"), CONFIG.replace("\"max_iter\"", "\"max_iters\"")).unwrap();
    let o = bcopt(p, &["solve", "--config", "unknown.json"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("optimizer.max_iters") && err.contains("line"), "{err}");

    fs::write(p.join("broken.json"), "{\"mesh\": ").unwrap();
    assert_eq!(code(&bcopt(p, &["solve", "--config", "broken.json"])), 2);
    assert_eq!(code(&bcopt(p, &["solve", "--config", "missing.json"])), 2);
    assert_eq!(code(&bcopt(p, &["validate", "--suite", "nope"])), 2);

    let overlap = r#"{
        "mesh": {"shape": "disk", "target_h": 0.2},
        "physics": {"model": "mixer"},
        "region": {"arcs": [[1.0, 2.0]], "anode_arcs": [[1.5, 2.5]]}
    }"#;
    fs::write(p.join("overlap.json"), overlap).unwrap();
    let o = bcopt(p, &["--out", "o", "solve", "--config", "overlap.json"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    let o = Command::new(env!("CARGO_BIN_EXE_bcopt"))
        .current_dir(p)
        .env("BCOPT_THREADS", "zero")
        .args(["mesh", "gen", "--shape", "square", "--target-h", "0.5"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
