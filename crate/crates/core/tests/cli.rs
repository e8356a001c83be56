use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavityq"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const PARAMS: &str = r#""params": { "omega_c_mhz": 2689.9, "kappa_fwhm_mhz": 0.8, "collective_coupling_mhz": 8.6 },
  "density": { "kind": "q_gaussian", "q": 1.39, "fwhm_mhz": 9.4 }"#;

fn small_scan(variable: &str, min: f64, max: f64, protocol: &str) -> String {
    format!(
        r#"{{ {PARAMS},
  "protocol": {protocol},
  "grid": {{ "t_start": 0, "t_end": 300, "dt": 0.1 }},
  "scan": {{ "variable": "{variable}", "min": {min}, "max": {max}, "steps": 5 }},
  "output": {{ "path": "scan.csv", "format": "csv" }}
}}"#
    )
}

const RECT: &str = r#"{ "type": "rectangular", "t_on": 0, "t_off": 200 }"#;

#[test]
fn simulate_is_byte_identical_when_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        &format!(
            r#"{{ {PARAMS}, "protocol": {RECT}, "grid": {{ "t_start": 0, "t_end": 300, "dt": 0.1 }},
               "output": {{ "path": "x.csv", "format": "csv" }} }}"#
        ),
    );
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(run(&["simulate", "--reproducible"], &cfg, &a).status.success());
    assert!(run(&["simulate", "--reproducible"], &cfg, &b).status.success());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("t_ns,re_A,im_A,abs_A2,eta_re,eta_im\n"));
    assert_eq!(text.lines().count(), 3002);

    let stamped = dir.path().join("c.csv");
    assert!(run(&["simulate"], &cfg, &stamped).status.success());
    assert!(fs::read_to_string(&stamped).unwrap().starts_with("# cavityq"));
}

#[test]
fn scan_output_does_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("detuning.json", small_scan("omega_p", -10.0, 10.0, RECT)),
        ("coupling.json", small_scan("Omega", 3.0, 9.0, RECT)),
        (
            "tau.json",
            small_scan("tau", 40.0, 60.0, r#"{ "type": "phase_switched_train", "tau": 52, "n_pulses": 3 }"#),
        ),
    ] {
        let cfg = write_config(dir.path(), name, &body);
        let (one, eight) = (dir.path().join("one.csv"), dir.path().join("eight.csv"));
        let r1 = run(&["scan", "--reproducible", "--workers", "1"], &cfg, &one);
        assert!(r1.status.success(), "{name}: {}", String::from_utf8_lossy(&r1.stderr));
        assert!(run(&["scan", "--reproducible", "--workers", "8"], &cfg, &eight).status.success());
        assert_eq!(fs::read(&one).unwrap(), fs::read(&eight).unwrap(), "{name}");
        assert_eq!(fs::read_to_string(&one).unwrap().lines().count(), 6, "{name}");
        let map = |p: &Path| fs::read(p.with_file_name(format!("{}_map.csv", p.file_stem().unwrap().to_str().unwrap())));
        if name != "coupling.json" {
            assert_eq!(map(&one).unwrap(), map(&eight).unwrap(), "{name}");
        }
    }
}

#[test]
fn invalid_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["simulate"], &missing, &out).status.code(), Some(2));

    let bad_field = write_config(dir.path(), "bad.json", &format!(r#"{{ {PARAMS}, "colour": 1 }}"#));
    let r = run(&["simulate"], &bad_field, &out);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("colour"));

    let off_lattice = write_config(
        dir.path(),
        "lattice.json",
        &format!(
            r#"{{ {PARAMS}, "protocol": {{ "type": "rectangular", "t_on": 0, "t_off": 100.05 }},
               "grid": {{ "t_start": 0, "t_end": 300, "dt": 0.1 }}, "output": {{ "path": "x.csv", "format": "csv" }} }}"#
        ),
    );
    let r = run(&["simulate"], &off_lattice, &out);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("t_off"));

    let good = write_config(dir.path(), "scan.json", &small_scan("omega_p", -5.0, 5.0, RECT));
    assert_eq!(run(&["scan", "--workers", "0"], &good, &out).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn validate_reports_failure_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let body = |n: usize| {
        format!(
            r#"{{ {PARAMS}, "protocol": {RECT}, "grid": {{ "t_start": 0, "t_end": 300, "dt": 0.05 }},
               "output": {{ "path": "v.csv", "format": "csv" }}, "oracle": {{ "n_spins": {n}, "sampling": "stratified" }} }}"#
        )
    };
    let out = dir.path().join("v.csv");
    let coarse = write_config(dir.path(), "coarse.json", &body(20));
    let r = run(&["validate"], &coarse, &out);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(String::from_utf8_lossy(&r.stdout).contains("FAIL"));

    let fine = write_config(dir.path(), "fine.json", &body(2000));
    let r = run(&["validate"], &fine, &out);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(fs::read_to_string(&out).unwrap().contains("relative_l2"));
}

#[test]
fn poles_lists_one_row_per_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.json", &small_scan("Omega", 1.0, 30.0, RECT));
    let out = dir.path().join("poles.csv");
    let r = run(&["poles", "--reproducible"], &cfg, &out);
    assert!(r.status.success());
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert_eq!(stdout.lines().count(), 5, "{stdout}");
    assert!(stdout.lines().next().unwrap().contains("not split"));
    let table = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].contains("not split"));
    assert!(rows[1..].iter().all(|r| r.ends_with(",ok")));
}
