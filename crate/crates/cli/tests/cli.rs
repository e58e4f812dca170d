use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparsyn"))
}

/// Fresh scratch directory per test.
fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("sparsyn-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn model(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

const SCALAR: &str = r#"{"A":[[1]],"Bu":[[1]],"Bw":[[1]],"Cz":[[1]]}"#;
const DUPLICATE: &str = r#"{"A":[[1]],"Bu":[[1,1]],"Bw":[[1]],"Cz":[[1]],"Cy":[[1],[1]]}"#;

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_scalar_then_verify() {
    let d = scratch("synth");
    let m = model(&d, "scalar.json", SCALAR);
    let out = d.join("out");
    let o = run(&["synth", "--mode", "sf-hinf", "--gamma0", "2", "--model", s(&m), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let k = read_json(&out.join("controller.json"))["K"][0][0].as_f64().unwrap();
    assert!((k + 2.0).abs() < 0.02, "{k}");
    assert!(out.join("result.json").is_file() && out.join("trace.csv").is_file());

    let v = d.join("verify");
    let o = run(&[
        "verify", "--model", s(&m), "--controller", s(&out.join("controller.json")), "--mode", "sf-hinf", "--gamma0", "2",
        "--out", s(&v),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&v.join("verify.json"));
    assert!(r["hinf"]["value"].as_f64().unwrap() < 2.0);
    assert_eq!(r["passed"], true);
}

#[test]
fn verify_flags_an_unstable_loop() {
    let d = scratch("unstable");
    let m = model(&d, "scalar.json", SCALAR);
    let c = model(&d, "k.json", r#"{"K":[[0.5]]}"#);
    let o = run(&["verify", "--model", s(&m), "--controller", s(&c), "--out", s(&d)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(read_json(&d.join("verify.json"))["hurwitz"], false);
}

#[test]
fn h2_with_feedthrough_exits_one() {
    let d = scratch("dw");
    let m = model(&d, "dw.json", r#"{"A":[[1]],"Bu":[[1]],"Bw":[[1]],"Cz":[[1]],"Dw":[[0.1]]}"#);
    let o = run(&["synth", "--mode", "sf-h2", "--gamma0", "2", "--model", s(&m), "--out", s(&d)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nonzero feedthrough"), "{}", stderr(&o));
}

#[test]
fn infeasible_exits_two() {
    let d = scratch("infeasible");
    let m = model(&d, "m.json", r#"{"A":[[1]],"Bu":[[0]],"Bw":[[1]],"Cz":[[1]]}"#);
    let o = run(&["synth", "--mode", "of-hinf", "--gamma0", "2", "--model", s(&m), "--out", s(&d)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn usage_errors_name_the_flag() {
    let d = scratch("usage");
    let m = model(&d, "scalar.json", SCALAR);
    let dup = model(&d, "dup.json", DUPLICATE);
    let cases: [(&[&str], &str); 6] = [
        (&["synth", "--mode", "sf-hinf", "--gamma0", "-1", "--model", s(&m)], "--gamma0"),
        (&["synth", "--mode", "nope", "--gamma0", "1", "--model", s(&m)], "--mode"),
        (&["synth", "--mode", "sf-hinf", "--gamma0", "1", "--model", "/nonexistent.json"], "--model"),
        (&["synth", "--mode", "sf-hinf", "--gamma0", "1", "--model", s(&dup), "--rho", "1"], "--rho"),
        (&["synth", "--mode", "sf-hinf", "--gamma0", "1", "--model", s(&dup), "--mu", "1,1"], "--mu"),
        (&["prune", "--mode", "sf-hinf", "--gamma0", "1", "--model", s(&m), "--threshold", "2"], "--threshold"),
    ];
    for (args, flag) in cases {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let e = stderr(&o);
        assert_eq!(e.trim_end().lines().count(), 1, "{e}");
        assert!(e.contains(flag), "{e}");
    }
}

#[test]
fn prune_keeps_one_duplicate() {
    let d = scratch("prune");
    let m = model(&d, "dup.json", DUPLICATE);
    let o = run(&["prune", "--mode", "joint-hinf", "--gamma0", "4", "--model", s(&m), "--out", s(&d), "--dump-sdp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["kept_actuators"].as_array().unwrap().len(), 1);
    assert_eq!(summary["kept_sensors"].as_array().unwrap().len(), 1);
    let reduced = read_json(&d.join("reduced_plant.json"));
    assert_eq!(reduced["Bu"][0].as_array().unwrap().len(), 1);
    assert!(fs::read_to_string(d.join("result.sdp.txt")).unwrap().lines().count() > 1);
    assert!(read_json(&d.join("result.json"))["solve"].get("dump").is_none());
}

#[test]
fn sweep_writes_one_row_per_level() {
    let d = scratch("sweep");
    let m = model(&d, "dup.json", DUPLICATE);
    let o = run(&["sweep", "--mode", "sf-h2", "--gamma0", "1,2,4", "--model", s(&m), "--out", s(&d)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(d.join("sweep.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("gamma0,status"));
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("ok")));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn demo_artifacts_are_reproducible() {
    let d = scratch("demo");
    let demo = |out: &Path, seed: &str| {
        run(&[
            "demo", "--family", "chain:2", "--mode", "sf-h2", "--gamma0", "3", "--horizon", "2", "--seed", seed, "--out", s(out),
        ])
    };
    let (a, b, c) = (d.join("a"), d.join("b"), d.join("c"));
    for (dir, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = demo(dir, seed);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(files(&a), files(&b));
    assert_ne!(fs::read(a.join("simulation.csv")).unwrap(), fs::read(c.join("simulation.csv")).unwrap());
    let names: Vec<_> = files(&a).into_iter().map(|f| f.0).collect();
    assert_eq!(names, ["controller.json", "peaks.csv", "plant.json", "result.json", "simulation.csv", "trace.csv"]);
}

#[test]
fn nonlinear_demo_runs() {
    let d = scratch("nonlinear");
    let o = run(&[
        "demo", "--family", "chain:2", "--gamma0", "3", "--horizon", "1", "--nonlinear-sim", "--out", s(&d),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_exits_zero() {
    assert!(run(&["--help"]).status.success());
    assert_eq!(run(&[]).status.code(), Some(1));
}
