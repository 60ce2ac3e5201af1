use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mslab"));
    c.env_remove("MSLAB_OUT");
    c
}

fn smoke_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.cfg")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn write_cfg(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("test.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn smoke_config_runs_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let o = run(&["run", smoke_cfg().to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(t.elapsed().as_secs_f64() < 10.0);
    let summary = json(dir.path().join("summary.json"));
    let names: Vec<&str> = summary["experiments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["classify", "chord", "pairing"]);
    let hash = summary["meta"]["config_hash"].as_str().unwrap().to_string();
    for f in ["classify.csv", "chord.csv", "pairing.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.lines().next().unwrap().contains(&hash), "{f}");
    }
    for f in ["classify.json", "chord.events.json", "pairing.json"] {
        assert_eq!(json(dir.path().join(f))["meta"]["config_hash"], hash.as_str());
    }
}

#[test]
fn outputs_are_bit_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = smoke_cfg();
    assert!(run(&["run", cfg.to_str().unwrap()], a.path()).status.success());
    assert!(run(&["run", cfg.to_str().unwrap()], b.path()).status.success());
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for n in &names {
        assert_eq!(
            std::fs::read(a.path().join(n)).unwrap(),
            std::fs::read(b.path().join(n)).unwrap(),
            "{n:?}"
        );
    }
    // a different seed moves the random classification points and the hash
    let c = tempfile::tempdir().unwrap();
    assert!(run(&["run", cfg.to_str().unwrap(), "--seed", "8"], c.path()).status.success());
    assert_ne!(
        std::fs::read(a.path().join("classify.csv")).unwrap(),
        std::fs::read(c.path().join("classify.csv")).unwrap()
    );
}

#[test]
fn empty_experiment_list_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "{\"experiments\": []}");
    let o = run(&["run", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = json(dir.path().join("out/summary.json"));
    assert_eq!(summary["experiments"].as_array().unwrap().len(), 0);
}

#[test]
fn schema_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), r#"{"classify": {"tol_g": -1}}"#);
    let o = run(&["run", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tol_g"), "{}", stderr(&o));
    // nothing is computed or written for an invalid config
    assert!(!dir.path().join("out").exists());

    let cfg = write_cfg(
        dir.path(),
        r#"{"experiments": [{"kind": "car_mass", "name": "x", "modes": {"family": "stokes", "m": {"fixed": 3}, "k": [0]},
            "symbol": {"type": "radial_x", "r_in": 0.9, "r_out": 0.8}}]}"#,
    );
    let o = run(&["run", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("experiments[0].modes.k"), "{err}");
    assert!(err.contains("experiments[0].symbol"), "{err}");

    let cfg = write_cfg(dir.path(), r#"{"thresholds": {"kapa": 2}}"#);
    let o = run(&["run", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert!(stderr(&o).contains("kapa"), "{}", stderr(&o));
}

#[test]
fn failing_experiment_sets_the_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        r#"{"experiments": [
            {"kind": "h_oscillation", "name": "tails", "modes": {"family": "laplace", "m": {"fixed": 2}, "k": [2, 3]},
             "radii": [1.5, 2.0], "limit": 0.0},
            {"kind": "classify", "name": "pts", "points": [[0.0, 0.5]]}
        ]}"#,
    );
    let o = run(&["run", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    let summary = json(dir.path().join("out/summary.json"));
    assert_eq!(summary["experiments"][0]["status"], "fail");
    assert_eq!(summary["experiments"][1]["status"], "done");

    // verify skips the non-propagation experiment
    let o = run(&["verify", cfg.to_str().unwrap()], &dir.path().join("v"));
    assert_eq!(o.status.code(), Some(1));
    let summary = json(dir.path().join("v/summary.json"));
    assert_eq!(summary["experiments"].as_array().unwrap().len(), 1);
}

#[test]
fn classify_subcommand_reports_the_gliding_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["classify", "--x", "0", "--xi", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("classify.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[2], "G2-");
    assert_eq!(row[4].parse::<f64>().unwrap(), -2.0);

    let o = run(&["classify", "--chart", "annulus:0.4:inner", "--x", "1", "--xi", "0.4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("classify.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().contains("G2+"));

    let o = run(&["classify", "--x", "0", "--xi", "1", "--tol-g", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tol_g"));
}

#[test]
fn trace_subcommand_writes_samples_and_events() {
    let dir = tempfile::tempdir().unwrap();
    // normal incidence: one reflection at the antipode after time 1
    let o = run(&["trace", "--x", "0", "--xi", "0", "--s", "1.5"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ev = json(dir.path().join("trace.events.json"));
    let events = ev["events"].as_array().unwrap();
    assert_eq!(events.len(), 1);
    assert!((events[0]["s"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((events[0]["point"]["x"].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-9);
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "segment,mode,s,y,x,eta,xi");
    assert!(csv.lines().count() > 10);
}

#[test]
fn mode_binary_matches_its_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["mode", "--family", "stokes", "--m", "3", "--k", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let header = json(dir.path().join("mode_stokes_3_2.json"));
    let shape: Vec<usize> = header["shape"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    let comps = header["components"].as_array().unwrap().len();
    assert_eq!(comps, 3);
    let data = std::fs::read(dir.path().join("mode_stokes_3_2.bin")).unwrap();
    assert_eq!(data.len(), shape[0] * shape[1] * comps * 16);
    let vals: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    // the velocity vanishes on the boundary ring and is nonzero inside
    let r: Vec<f64> = header["r"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let ring = r.iter().position(|&x| (x - 1.0).abs() < 1e-14).expect("boundary ring");
    let nt = shape[1];
    for c in 0..2 {
        for j in 0..nt {
            let p = 2 * (c * shape[0] * nt + ring * nt + j);
            assert!(vals[p].hypot(vals[p + 1]) < 1e-8);
        }
    }
    assert!(vals.iter().any(|v| v.abs() > 0.1));
    assert!(header["residuals"]["pde_residual"].as_f64().unwrap() < 1e-6);
}

#[test]
fn parametrix_subcommand_tables_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut errs = Vec::new();
    for order in ["0", "1"] {
        let o = run(&["parametrix", "--m", "32,64", "--order", order], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let csv = std::fs::read_to_string(dir.path().join("parametrix.csv")).unwrap();
        let e: Vec<f64> = csv
            .lines()
            .skip(2)
            .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
            .collect();
        errs.push(e);
    }
    assert!((errs[0][0] / errs[0][1] - 2.0).abs() < 0.6);
    assert!(errs[1][0] < errs[0][0] && errs[1][1] < errs[0][1]);
}

#[test]
fn measure_subcommand_and_output_env() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let o = bin()
        .env("MSLAB_OUT", &out)
        .args(["measure", "--family", "laplace", "--m", "5", "--k", "2..3", "--tangential", "--width", "0.99"])
        .args(["--symbol", r#"{"type": "const", "value": 1.0}"#])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("measure.csv")).unwrap();
    let vals: Vec<f64> = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    // the identity over almost the whole disk pairs to the squared norm
    assert_eq!(vals.len(), 2);
    for v in vals {
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    // an interior symbol that reaches the boundary is refused at run time
    let o = run(
        &["measure", "--family", "laplace", "--m", "0", "--k", "2", "--symbol", r#"{"type": "const", "value": 1.0}"#],
        &dir.path().join("bad"),
    );
    assert_eq!(o.status.code(), Some(1));
    let summary = json(dir.path().join("bad/summary.json"));
    assert_eq!(summary["experiments"][0]["status"], "error");
    assert!(summary["experiments"][0]["message"].as_str().unwrap().contains("boundary"));
}

#[test]
fn jobs_flag_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = smoke_cfg();
    assert!(run(&["run", cfg.to_str().unwrap(), "--jobs", "1"], a.path()).status.success());
    assert!(run(&["run", cfg.to_str().unwrap(), "--jobs", "3"], b.path()).status.success());
    assert_eq!(
        std::fs::read(a.path().join("pairing.csv")).unwrap(),
        std::fs::read(b.path().join("pairing.csv")).unwrap()
    );
    assert_eq!(run(&["run", cfg.to_str().unwrap(), "--jobs", "0"], a.path()).status.code(), Some(2));
}
