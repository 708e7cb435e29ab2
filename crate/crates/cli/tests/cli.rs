use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn hydrolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hydrolab"))
        .args(args)
        .env_remove("HYDROLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(sub: &str, cfg: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    hydrolab(&args)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn small_cell(out: &str) -> Value {
    json!({
        "schema_version": 1,
        "output": out,
        "model": { "kind": "quadratic", "potential": { "kind": "sin2", "amplitude": 0.5 } },
        "cell": { "modes": 2, "qgrid": 32, "restarts": 2, "max_iter": 200, "Pgrid": { "min": -1.5, "max": 1.5, "points": 5 } },
        "table": { "p": { "min": -2.0, "max": 2.0, "points": 41 }, "v": { "min": -1.0, "max": 1.0, "points": 21 } }
    })
}

#[test]
fn unknown_key_is_named_by_path() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({ "schema_version": 1, "value": { "alpa": 1.0 } }));
    let o = run("converge", &cfg, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("key `value.alpa`"), "{}", stderr(&o));
    let cfg = write_config(dir.path(), "d.json", &json!({ "schema_version": 1, "bogus": 1 }));
    let o = run("converge", &cfg, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("`bogus`"), "{}", stderr(&o));
    let cfg = write_config(dir.path(), "e.json", &json!({ "schema_version": 1, "model": { "potential": { "kind": "sin2", "amp": 2 } } }));
    let o = run("converge", &cfg, &[]);
    assert!(stderr(&o).contains("key `model.potential.amp`"), "{}", stderr(&o));
    assert!(!dir.path().join("hydrolab-out").exists());
}

#[test]
fn future_schema_version_is_refused() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({ "schema_version": 999 }));
    let o = run("cell", &cfg, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("schema_version 999"), "{}", stderr(&o));
}

#[test]
fn kind_must_match_the_subcommand() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({ "schema_version": 1, "kind": "hydro" }));
    let o = run("cell", &cfg, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("hydro"));
}

#[test]
fn converge_with_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({ "schema_version": 1, "schedule": { "N": [2, 4] }, "converge": { "continuum_atoms": 16 } }),
    );
    let o = run("converge", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("hydrolab-out/converge");
    let csv = fs::read_to_string(out.join("converge.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("N,eps,d_emp_to_target,f_N,f_limit,error,wall_time_s"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], 2.0);
    assert!((rows[1][1] - 0.5).abs() < 1e-15);
    for r in &rows {
        assert!((r[5] - (r[3] - r[4]).abs()).abs() < 1e-12);
    }
    let m = manifest(&out);
    assert_eq!(m["config"]["value"]["knots"], 16);
    assert_eq!(m["config"]["value"]["restarts"], 4);
    assert_eq!(m["kind"], "converge");
    assert_eq!(m["converged"], true);
    assert!(m["versions"]["hydrolab"].is_string());
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
    let keys: Vec<&str> = m.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    assert_eq!(keys[..3], ["schema_version", "kind", "seed"]);
}

#[test]
fn existing_output_needs_force() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &small_cell("out"));
    assert_eq!(code(&run("cell", &cfg, &[])), 0);
    let o = run("cell", &cfg, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"));
    assert_eq!(code(&run("cell", &cfg, &["--force"])), 0);
}

#[test]
fn cell_table_columns() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &small_cell("out"));
    assert_eq!(code(&run("cell", &cfg, &[])), 0);
    let csv = fs::read_to_string(dir.path().join("out/cell.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("P,lower,upper,explicit,corrector_modes"));
    for l in lines {
        let v: Vec<&str> = l.split(',').collect();
        let (lo, hi, ex): (f64, f64, f64) = (v[1].parse().unwrap(), v[2].parse().unwrap(), v[3].parse().unwrap());
        assert!(lo <= ex + 1e-9 && ex <= hi + 1e-9, "{l}");
        assert_eq!(v[4], "2");
    }
    // no explicit formula in two dimensions
    let mut two = small_cell("two");
    two["model"]["dim"] = json!(2);
    two["cell"]["Pgrid"]["points"] = json!(2);
    let cfg = write_config(dir.path(), "d.json", &two);
    assert_eq!(code(&run("cell", &cfg, &[])), 0);
    let csv = fs::read_to_string(dir.path().join("two/cell.csv")).unwrap();
    assert!(csv.starts_with("P_1,P_2,lower,upper,explicit,corrector_modes\n"));
    assert!(csv.lines().nth(1).unwrap().split(',').nth(4) == Some(""));
}

#[test]
fn unconverged_runs_exit_2_with_artifacts() {
    let dir = TempDir::new().unwrap();
    let mut c = small_cell("out");
    c["cell"]["max_iter"] = json!(1);
    c["cell"]["restarts"] = json!(1);
    c["cell"]["modes"] = json!(4);
    let cfg = write_config(dir.path(), "c.json", &c);
    let o = run("cell", &cfg, &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(dir.path().join("out/cell.csv").exists());
    assert_eq!(manifest(&dir.path().join("out"))["converged"], false);
}

fn without_wall_time(mut m: Value) -> Value {
    m.as_object_mut().unwrap().remove("wall_time_s");
    m["config"].as_object_mut().unwrap().remove("output");
    m.as_object_mut().unwrap().remove("threads");
    m
}

#[test]
fn outputs_are_deterministic_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let a = write_config(dir.path(), "a.json", &small_cell("a"));
    let b = write_config(dir.path(), "b.json", &small_cell("b"));
    assert_eq!(code(&run("cell", &a, &["--threads", "1"])), 0);
    assert_eq!(code(&run("cell", &b, &["--threads", "3"])), 0);
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "cell.csv"), read("b", "cell.csv"));
    assert_eq!(without_wall_time(manifest(&dir.path().join("a"))), without_wall_time(manifest(&dir.path().join("b"))));

    let sim = |out: &str| {
        json!({
            "schema_version": 1,
            "output": out,
            "dynamics": { "dt": 0.01, "steps": 50, "particles": 4, "stride": 5 }
        })
    };
    let a = write_config(dir.path(), "sa.json", &sim("sa"));
    let b = write_config(dir.path(), "sb.json", &sim("sb"));
    assert_eq!(code(&run("simulate", &a, &["--seed", "7"])), 0);
    assert_eq!(code(&run("simulate", &b, &["--seed", "7"])), 0);
    assert_eq!(read("sa", "trajectory.csv"), read("sb", "trajectory.csv"));
    let c = write_config(dir.path(), "sc.json", &sim("sc"));
    assert_eq!(code(&run("simulate", &c, &["--seed", "8"])), 0);
    assert_ne!(read("sa", "trajectory.csv"), read("sc", "trajectory.csv"));
    assert_eq!(manifest(&dir.path().join("sa"))["seed"], 7);
}

#[test]
fn threads_fall_back_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &small_cell("out"));
    let o = Command::new(env!("CARGO_BIN_EXE_hydrolab"))
        .args(["cell", "--config", cfg.to_str().unwrap()])
        .env("HYDROLAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(manifest(&dir.path().join("out"))["threads"], 2);
}

#[test]
fn w2_prints_distance_and_matching() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("a.csv"), "x,y\n0,0\n1,0\n").unwrap();
    fs::write(dir.path().join("b.csv"), "x,y\n1,1\n0,1\n").unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({ "schema_version": 1, "w2": { "a": "a.csv", "b": "b.csv" } }));
    let o = run("w2", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["distance"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["matching"], json!([1, 0]));
    assert_eq!(v["unique"], true);
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("hydrolab-out/w2/w2.json")).unwrap()).unwrap();
    assert_eq!(saved, v);
}

#[test]
fn operators_report_the_degenerate_gap() {
    let dir = TempDir::new().unwrap();
    let s = 0.1;
    let inst = json!({
        "atoms": [[0.0, 0.0], [1.0, 1.0]],
        "anchors": [[[1.0, 0.0], [0.0, 1.0]], [[s, 0.0], [1.0 - s, 1.0]]],
        "psi": { "kind": "linear", "a": [1.0, 1.0] }
    });
    fs::write(dir.path().join("inst.json"), inst.to_string()).unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "schema_version": 1,
            "model": { "kind": "free", "dim": 2 },
            "table": { "p": { "min": -4.0, "max": 4.0, "points": 81 }, "v": { "min": -3.0, "max": 3.0, "points": 61 } },
            "operators": { "instance": "inst.json" }
        }),
    );
    let o = run("operators", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let vals = &v["values"];
    for k in ["bbh0", "bfh0", "bfh_f0", "bbh1", "bfh1", "bfh_f1"] {
        assert!(vals[k].is_f64(), "{k}");
    }
    let gap = vals["bbh0"].as_f64().unwrap() - vals["bfh0"].as_f64().unwrap();
    assert!((gap - 4.0 * s).abs() < 1e-9, "gap {gap}");
    assert_eq!(v["flags"]["unique0"], false);
    assert_eq!(v["flags"]["chain0"], true);
    assert_eq!(v["flags"]["chain1"], true);
}

#[test]
fn simulate_then_hydro() {
    let dir = TempDir::new().unwrap();
    let sim = write_config(
        dir.path(),
        "sim.json",
        &json!({
            "schema_version": 1,
            "output": "sim",
            "dynamics": { "dt": 0.01, "steps": 40, "particles": 400, "stride": 10, "x_sd": 0.5, "p_sd": 0.3 }
        }),
    );
    assert_eq!(code(&run("simulate", &sim, &[])), 0);
    let traj = fs::read_to_string(dir.path().join("sim/trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,particle,x,P\n"));
    assert_eq!(traj.lines().count(), 1 + 5 * 400);
    let hydro = write_config(
        dir.path(),
        "hydro.json",
        &json!({
            "schema_version": 1,
            "output": "hydro",
            "hydro": {
                "trajectory": "sim/trajectory.csv",
                "bins": { "min": [-4.0], "max": [4.0], "counts": [40] },
                "tests": { "centers": [[-0.5], [0.0], [0.5]], "radius": 1.0 }
            }
        }),
    );
    let o = run("hydro", &hydro, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("hydro");
    for k in 0..5 {
        let f = fs::read_to_string(out.join(format!("fields_{k:04}.csv"))).unwrap();
        assert!(f.starts_with("x,occupancy,density,velocity,momentum,temperature,pressure\n"));
        assert_eq!(f.lines().count(), 41);
    }
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("residuals.json")).unwrap()).unwrap();
    assert_eq!(r["snapshots"], 5);
    assert!(r["continuity"]["relative"].as_f64().unwrap().is_finite());
    assert!(r["momentum"]["max"].as_f64().unwrap().is_finite());
}

#[test]
fn resolve_reports_value_and_sandwich() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({ "schema_version": 1, "resolve": { "x": [[0.2], [1.0]] }, "dynamics": { "eps": 0.5 } }),
    );
    let o = run("resolve", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("hydrolab-out/resolve/resolve.json")).unwrap()).unwrap();
    let v = r["particle"]["value"].as_f64().unwrap();
    let (lo, hi) = (r["sandwich"][0].as_f64().unwrap(), r["sandwich"][1].as_f64().unwrap());
    assert!(lo - 1e-3 <= v && v <= hi + 1e-3, "{lo} {v} {hi}");
}
