use std::path::Path;
use std::process::{Command, Output};

fn emcouple(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emcouple")).args(args).current_dir(cwd).output().expect("spawn emcouple")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn zero_run_writes_zero_energy_and_a_stable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mesh.builtin = cube\nmesh.divisions = 1\ntime.n_steps = 5\noutputs.dir = out\nruntime.threads = 1\n");
    let o = emcouple(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/energy.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,calE,calE_n,norm_phi,norm_psi"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert!(r.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{r}");
    }
    let m1 = json(&dir.path().join("out/manifest.json"));
    assert_eq!(m1["exit_code"], 0);
    assert!(m1["outputs"].as_array().unwrap().iter().any(|v| v == "energy.csv"));
    let phases: Vec<&str> = m1["phases"].as_array().unwrap().iter().map(|p| p[0].as_str().unwrap()).collect();
    assert_eq!(phases, ["assembly", "cfl", "weights", "stepping"]);

    let o = emcouple(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let m2 = json(&dir.path().join("out/manifest.json"));
    assert_eq!(m1["config_hash"], m2["config_hash"]);
    assert_eq!(m1["mesh_hash"], m2["mesh_hash"]);
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("out/energy.csv")).unwrap());
}

#[test]
fn pulse_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mesh.divisions = 2\ntime.n_steps = 10\nsource.kind = pulse\nsource.radius = 0.5\nruntime.threads = 1\nruntime.seed = 4\n",
    );
    let o = emcouple(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = std::fs::read(dir.path().join("out/energy.csv")).unwrap();
    assert_eq!(emcouple(&["run", &cfg], dir.path()).status.code(), Some(0));
    assert_eq!(first, std::fs::read(dir.path().join("out/energy.csv")).unwrap());
    assert_eq!(json(&dir.path().join("out/manifest.json"))["seed"], 4);
}

#[test]
fn dt_above_cfl_is_rejected_with_the_limit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mesh.divisions = 1\ntime.dt = 10\ntime.n_steps = 2\n");
    let o = emcouple(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("exceeds the CFL limit"), "{err}");
    let m = json(&dir.path().join("out/manifest.json"));
    assert_eq!(m["exit_code"], 1);
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mesh.path = no/such.mesh\n");
    let o = emcouple(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no/such.mesh"));

    let cfg = write_config(dir.path(), "stabilisation.alpha = 1\n");
    let o = emcouple(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("did you mean 'stabilization.alpha'"), "{}", stderr(&o));

    let o = emcouple(&["run", "missing.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = emcouple(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn blow_up_exits_numerical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mesh.divisions = 2\nboundary.mode = reflective\nsource.kind = pulse\nsource.radius = 0.5\n\
         time.dt = 2\ntime.n_steps = 2000\nunsafe = true\n",
    );
    let o = emcouple(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn memory_cap_exits_resource() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mesh.divisions = 1\ntime.n_steps = 10\nruntime.memory_cap_mb = 0\n");
    let o = emcouple(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn verify_suites() {
    let dir = tempfile::tempdir().unwrap();
    let o = emcouple(&["verify", "nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("green, coercivity, cq, calderon, energy"));
    for suite in ["green", "cq"] {
        let o = emcouple(&["verify", suite, "--out", "v"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", stderr(&o));
        let r = json(&dir.path().join(format!("v/report-{suite}.json")));
        assert_eq!(r["passed"], true);
        assert!(r["config_hash"].as_str().unwrap().len() == 64);
    }
    let r = json(&dir.path().join("v/report-cq.json"));
    for c in r["body"]["checks"].as_array().unwrap() {
        for p in c["orders"].as_array().unwrap() {
            let p = p.as_f64().unwrap();
            assert!((1.8..=2.2).contains(&p), "{p}");
        }
    }
}

#[test]
fn verify_coercivity_and_energy() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["coercivity", "energy"] {
        let o = emcouple(&["verify", suite, "--out", "v"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", stderr(&o));
        assert_eq!(json(&dir.path().join(format!("v/report-{suite}.json")))["passed"], true);
    }
    assert!(dir.path().join("v/energy.csv").exists());
}

#[test]
fn convergence_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = emcouple(&["convergence", "time", "--levels", "2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("need >= 3 levels"));
    let o = emcouple(&["convergence", "time", "--levels", "1,1,2,4"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("degenerate levels"));
    let o = emcouple(&["convergence", "sideways"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = emcouple(&["convergence", "time", "--levels", "3", "--divisions", "2", "--t-final", "0.3", "--out", "c"], dir.path());
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
    let r = json(&dir.path().join("c/report-convergence-time.json"));
    assert_eq!(r["body"]["errors"].as_array().unwrap().len(), 3);
    assert!(r["body"]["fitted_order"].as_f64().unwrap().is_finite());
    let csv = std::fs::read_to_string(dir.path().join("c/convergence-time.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let o = emcouple(&["convergence", "space", "--levels", "1,2,3,4", "--t-final", "0.1", "--out", "s"], dir.path());
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
    assert!(dir.path().join("s/convergence-space.csv").exists());

    let o = emcouple(&["convergence", "time", "--levels", "3", "--memory-cap-mb", "0", "--out", "m"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("level"), "{}", stderr(&o));
}
